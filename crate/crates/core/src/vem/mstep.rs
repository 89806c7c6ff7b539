use nalgebra::{Cholesky, DMatrix, DVector};

use crate::dictionary::DictionaryBundle;
use crate::error::{shape_err, Result};
use crate::frontend::WhitenedObservation;
use crate::linalg::{c64, CMatrix, CVector};

use super::estep::check_consistent;
use super::state::{Covariance, PosteriorState};

/// The quadratic `f(δ) = f(0) − 2 vᵀδ + δᵀ E δ` that the expected residual
/// `Σ_k E‖y_k − D_k(δ) x_k‖²` becomes under the first-order dictionary, with
/// `δ = [δ_φ; δ_θ]` and `E = [E₁₁ E₁₂; E₁₂ᵀ E₂₂]`.
#[derive(Debug, Clone)]
pub struct OffsetSystem {
    pub e11: DMatrix<f64>,
    pub e12: DMatrix<f64>,
    pub e22: DMatrix<f64>,
    pub v1: DVector<f64>,
    pub v2: DVector<f64>,
}

impl OffsetSystem {
    fn full(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (np, nt) = (self.v1.len(), self.v2.len());
        let mut e = DMatrix::zeros(np + nt, np + nt);
        e.view_mut((0, 0), (np, np)).copy_from(&self.e11);
        e.view_mut((0, np), (np, nt)).copy_from(&self.e12);
        e.view_mut((np, 0), (nt, np)).copy_from(&self.e12.transpose());
        e.view_mut((np, np), (nt, nt)).copy_from(&self.e22);
        let mut v = DVector::zeros(np + nt);
        v.rows_mut(0, np).copy_from(&self.v1);
        v.rows_mut(np, nt).copy_from(&self.v2);
        (e, v)
    }

    /// `f(δ) − f(0)`.
    pub fn objective(&self, delta_phi: &[f64], delta_theta: &[f64]) -> f64 {
        let (e, v) = self.full();
        let d = DVector::from_iterator(v.len(), delta_phi.iter().chain(delta_theta).copied());
        -2.0 * v.dot(&d) + d.dot(&(&e * &d))
    }

    /// Unconstrained minimizer, `E δ = v`.
    pub fn solve(&self) -> (Vec<f64>, Vec<f64>) {
        let (mut e, v) = self.full();
        let n = v.len();
        let sol = Cholesky::new(e.clone()).map(|c| c.solve(&v)).or_else(|| {
            let jitter = 1e-10 * e.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
            for i in 0..n {
                e[(i, i)] += jitter;
            }
            Cholesky::new(e.clone()).map(|c| c.solve(&v)).or_else(|| e.clone().lu().solve(&v))
        });
        let sol = sol.filter(|s| s.iter().all(|x| x.is_finite())).unwrap_or_else(|| DVector::zeros(n));
        let np = self.v1.len();
        (sol.rows(0, np).iter().copied().collect(), sol.rows(np, n - np).iter().copied().collect())
    }
}

/// Second moment `E[x xᴴ]` of one band.
#[derive(Debug, Clone)]
pub enum SecondMoment {
    Dense(CMatrix),
    /// `diag(d) + Σ_q w_q v_q v_qᴴ`.
    Factored { diag: Vec<f64>, terms: Vec<(f64, CVector)> },
}

impl SecondMoment {
    pub fn from_posterior(mean: &CVector, cov: &Covariance) -> Self {
        match cov {
            Covariance::Dense(c) => SecondMoment::Dense(c + mean * mean.adjoint()),
            Covariance::LowRank { diag, z } => {
                let mut terms = Vec::with_capacity(z.nrows() + 1);
                terms.push((1.0, mean.clone()));
                for row in z.row_iter() {
                    terms.push((-1.0, row.adjoint()));
                }
                SecondMoment::Factored {
                    diag: diag.clone(),
                    terms,
                }
            }
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        match self {
            SecondMoment::Dense(c) => c.clone(),
            SecondMoment::Factored { diag, terms } => {
                let mut c = CMatrix::from_diagonal(&CVector::from_iterator(diag.len(), diag.iter().map(|&d| c64::new(d, 0.0))));
                for (w, v) in terms {
                    c += (v * v.adjoint()).scale(*w);
                }
                c
            }
        }
    }
}

/// Build the offset system around the bundle's grid (`δ = 0`) from the
/// posterior means and second moments of every band.
pub fn assemble_offset_system(
    bundle: &DictionaryBundle,
    obs: &WhitenedObservation,
    means: &[CVector],
    moments: &[SecondMoment],
) -> Result<OffsetSystem> {
    let (np, nt, r) = (bundle.grids.n_phi(), bundle.grids.n_theta(), bundle.n_cols());
    if means.len() != bundle.k() || moments.len() != bundle.k() {
        return Err(shape_err("moment bands", bundle.k(), means.len().min(moments.len())));
    }
    let mut sys = OffsetSystem {
        e11: DMatrix::zeros(np, np),
        e12: DMatrix::zeros(np, nt),
        e22: DMatrix::zeros(nt, nt),
        v1: DVector::zeros(np),
        v2: DVector::zeros(nt),
    };
    for k in 0..bundle.k() {
        if means[k].len() != r {
            return Err(shape_err("moment width", r, means[k].len()));
        }
        match &moments[k] {
            SecondMoment::Dense(c) => {
                if c.shape() != (r, r) {
                    return Err(shape_err("second moment", r, c.nrows()));
                }
                accumulate_dense(&mut sys, bundle, k, obs.y[k].as_slice(), &means[k], c);
            }
            SecondMoment::Factored { diag, terms } => {
                if diag.len() != r || terms.iter().any(|(_, v)| v.len() != r) {
                    return Err(shape_err("second moment", r, diag.len()));
                }
                accumulate_factored(&mut sys, bundle, k, &obs.y[k], &means[k], diag, terms);
            }
        }
    }
    Ok(sys)
}

// Entry-wise assembly from the small Kronecker-factor Grams; O(R²).
fn accumulate_dense(sys: &mut OffsetSystem, bundle: &DictionaryBundle, k: usize, y: &[c64], m: &CVector, c: &CMatrix) {
    let g = bundle.grams(k);
    let (g1y, g2y) = bundle.derivative_correlations(k, y);
    for (ri, &(jr, ir)) in bundle.pairs.iter().enumerate() {
        let mut l1 = (g1y[ri].conj() * m[ri]).re;
        let mut l2 = (g2y[ri].conj() * m[ri]).re;
        for (si, &(js, is)) in bundle.pairs.iter().enumerate() {
            let c_rs = c[(ri, si)];
            let c_sr = c[(si, ri)];
            l1 -= (c_rs * g.bs_dbs[(js, jr)] * g.ms_ms[(is, ir)]).re;
            l2 -= (c_rs * g.bs_bs[(js, jr)] * g.ms_dms[(is, ir)]).re;
            sys.e11[(jr, js)] += (g.dbs_dbs[(jr, js)] * g.ms_ms[(ir, is)] * c_sr).re;
            sys.e22[(ir, is)] += (g.bs_bs[(jr, js)] * g.dms_dms[(ir, is)] * c_sr).re;
            sys.e12[(jr, is)] += (g.bs_dbs[(js, jr)].conj() * g.ms_dms[(ir, is)] * c_sr).re;
        }
        sys.v1[jr] += l1;
        sys.v2[ir] += l2;
    }
}

// Assembly for a diagonal-plus-low-rank second moment. Each rank-one term is
// laid out on the angle grid, so everything reduces to products of the small
// Kronecker factors.
fn accumulate_factored(
    sys: &mut OffsetSystem,
    bundle: &DictionaryBundle,
    k: usize,
    y: &CVector,
    m: &CVector,
    diag: &[f64],
    terms: &[(f64, CVector)],
) {
    let (np, nt) = (bundle.grids.n_phi(), bundle.grids.n_theta());
    let band = &bundle.bands[k];
    let g = bundle.grams(k);
    let (g1y, g2y) = bundle.derivative_correlations(k, y.as_slice());
    let mut l1: Vec<f64> = (0..bundle.n_cols()).map(|r| (g1y[r].conj() * m[r]).re).collect();
    let mut l2: Vec<f64> = (0..bundle.n_cols()).map(|r| (g2y[r].conj() * m[r]).re).collect();
    for (r, &(j, i)) in bundle.pairs.iter().enumerate() {
        let c = diag[r];
        sys.e11[(j, j)] += c * (g.dbs_dbs[(j, j)] * g.ms_ms[(i, i)]).re;
        sys.e22[(i, i)] += c * (g.bs_bs[(j, j)] * g.dms_dms[(i, i)]).re;
        sys.e12[(j, i)] += c * (g.bs_dbs[(j, j)].conj() * g.ms_dms[(i, i)]).re;
        l1[r] -= c * (g.bs_dbs[(j, j)] * g.ms_ms[(i, i)]).re;
        l2[r] -= c * (g.bs_bs[(j, j)] * g.ms_dms[(i, i)]).re;
    }
    let (dbs_h, dms_h) = (band.dbs.adjoint(), band.dms.adjoint());
    let mut vm = CMatrix::zeros(np, nt);
    for (w, v) in terms {
        for (r, &(j, i)) in bundle.pairs.iter().enumerate() {
            vm[(j, i)] = v[r];
        }
        // column (j, i) of the dictionary reshapes to ms_i bs_jᵀ
        let t = &band.ms * vm.transpose();
        let s = &band.bs * &vm;
        let u = &t * band.bs.transpose();
        let u1 = band.ms.adjoint() * &u * band.dbs.conjugate();
        let u2 = &dms_h * &u * band.bs.conjugate();
        let th = t.adjoint();
        let sh = s.adjoint();
        sys.e11 += (&th * &t).component_mul(&g.dbs_dbs).map(|z| z.re * w);
        sys.e22 += (&sh * &s).component_mul(&g.dms_dms).map(|z| z.re * w);
        sys.e12 += (&th * &band.dms).component_mul(&(&dbs_h * &s)).map(|z| z.re * w);
        for (r, &(j, i)) in bundle.pairs.iter().enumerate() {
            l1[r] -= w * (v[r] * u1[(i, j)].conj()).re;
            l2[r] -= w * (v[r] * u2[(i, j)].conj()).re;
        }
    }
    for (r, &(j, i)) in bundle.pairs.iter().enumerate() {
        sys.v1[j] += l1[r];
        sys.v2[i] += l2[r];
    }
}

/// Pull offsets into `|δ_φ| ≤ max_phi`, `|δ_θ| ≤ max_theta`.
///
/// Two candidates are compared: the coordinate-wise clip and the whole step
/// scaled onto the box. The scaled step never raises the objective above
/// `f(0)`, so the returned offsets never do either.
pub fn clamp_offsets(sys: &OffsetSystem, dp: &[f64], dt: &[f64], max_phi: f64, max_theta: f64) -> (Vec<f64>, Vec<f64>) {
    let clip = |v: &[f64], h: f64| v.iter().map(|x| x.clamp(-h, h)).collect::<Vec<_>>();
    let (cp, ct) = (clip(dp, max_phi), clip(dt, max_theta));
    if cp == dp && ct == dt {
        return (cp, ct);
    }
    let ratio = |v: &[f64], h: f64| v.iter().fold(1.0_f64, |t, x| if x.abs() > h { t.min(h / x.abs()) } else { t });
    let t = ratio(dp, max_phi).min(ratio(dt, max_theta));
    let sp: Vec<f64> = dp.iter().map(|x| x * t).collect();
    let st: Vec<f64> = dt.iter().map(|x| x * t).collect();
    if sys.objective(&cp, &ct) <= sys.objective(&sp, &st) {
        (cp, ct)
    } else {
        (sp, st)
    }
}

/// New offsets for the state's posterior, clamped to half the original grid
/// spacing.
pub fn m_step(state: &PosteriorState, bundle: &DictionaryBundle, obs: &WhitenedObservation) -> Result<(Vec<f64>, Vec<f64>)> {
    check_consistent(state, bundle, obs)?;
    let moments: Vec<SecondMoment> = (0..state.k())
        .map(|k| SecondMoment::from_posterior(&state.mean[k], &state.cov[k]))
        .collect();
    let sys = assemble_offset_system(bundle, obs, &state.mean, &moments)?;
    let (dp, dt) = sys.solve();
    Ok(clamp_offsets(
        &sys,
        &dp,
        &dt,
        bundle.grids.max_offset_phi(),
        bundle.grids.max_offset_theta(),
    ))
}
