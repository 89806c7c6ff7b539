//! Per-subcarrier angular dictionaries and their first-order off-grid expansion.
//!
//! A dictionary column is one (AOD grid point `j`, AOA grid point `i`) pair
//! and equals `D_bs,k[:, j] ⊗ D_ms,k[:, i]`. With every pair active and the
//! pairs ordered `r = j·N_θ + i` this is exactly `D_bs,k ⊗ D_ms,k`; after
//! pruning only a subset of pairs survives, and the dictionary becomes the
//! column-selected Khatri-Rao product. The selection matrices `B¹`, `B²`
//! map each column to its AOD and AOA grid point.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::channel::{steering_derivative_matrix, steering_matrix, SystemConfig};
use crate::error::{shape_err, Error, Result};
use crate::frontend::{BeamformerPair, PilotBlock, WhitenedObservation};
use crate::linalg::{c64, khatri_rao, CMatrix, CVector, ONE};

/// AOD grid `φ̃` and AOA grid `θ̃` with their original spacings.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrids {
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub spacing_phi: f64,
    pub spacing_theta: f64,
}

impl AngleGrids {
    pub fn n_phi(&self) -> usize {
        self.phi.len()
    }

    pub fn n_theta(&self) -> usize {
        self.theta.len()
    }

    /// Largest offset magnitude the first-order expansion is trusted with.
    pub fn max_offset_phi(&self) -> f64 {
        0.5 * self.spacing_phi
    }

    pub fn max_offset_theta(&self) -> f64 {
        0.5 * self.spacing_theta
    }

    /// Grids moved by the given offsets.
    pub fn shifted(&self, delta_phi: &[f64], delta_theta: &[f64]) -> Result<Self> {
        if delta_phi.len() != self.n_phi() || delta_theta.len() != self.n_theta() {
            return Err(shape_err(
                "grid offsets",
                format!("{}+{}", self.n_phi(), self.n_theta()),
                format!("{}+{}", delta_phi.len(), delta_theta.len()),
            ));
        }
        Ok(Self {
            phi: self.phi.iter().zip(delta_phi).map(|(a, b)| a + b).collect(),
            theta: self.theta.iter().zip(delta_theta).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }
}

/// Uniform half-open grids: point `i` is `-1/2 + i/N`.
pub fn build_grids(n_phi: usize, n_theta: usize) -> Result<AngleGrids> {
    if n_phi < 2 || n_theta < 2 {
        return Err(Error::InvalidArgument(format!("grid sizes {n_phi}x{n_theta} must be at least 2")));
    }
    let g = |n: usize| (0..n).map(|i| -0.5 + i as f64 / n as f64).collect::<Vec<_>>();
    Ok(AngleGrids {
        phi: g(n_phi),
        theta: g(n_theta),
        spacing_phi: 1.0 / n_phi as f64,
        spacing_theta: 1.0 / n_theta as f64,
    })
}

/// Everything needed to re-evaluate the dictionaries at new grid values.
#[derive(Debug, Clone)]
pub struct DictionaryContext {
    pub n_tx: usize,
    pub n_rx: usize,
    /// Squint ratio `1 + f_k/f_c` per training subcarrier.
    pub ratios: Vec<f64>,
    /// `S_kᵀ Fᵀ` (`P × N_t`) per training subcarrier.
    pub tx_proj: Vec<CMatrix>,
    /// `W_wᵀ` (`N_s × N_r`).
    pub rx_proj: CMatrix,
}

impl DictionaryContext {
    pub fn new(cfg: &SystemConfig, bf: &BeamformerPair, whitened: &WhitenedObservation, pilots: &PilotBlock) -> Result<Self> {
        if pilots.s.len() != cfg.k() {
            return Err(shape_err("pilot block count", cfg.k(), pilots.s.len()));
        }
        if whitened.w_w.shape() != (cfg.n_rx, cfg.n_s) {
            return Err(shape_err(
                "whitened combiner",
                format!("{}x{}", cfg.n_rx, cfg.n_s),
                format!("{:?}", whitened.w_w.shape()),
            ));
        }
        if bf.f.shape() != (cfg.n_tx, cfg.n_s) {
            return Err(shape_err("precoder", format!("{}x{}", cfg.n_tx, cfg.n_s), format!("{:?}", bf.f.shape())));
        }
        let ft = bf.f.transpose();
        Ok(Self {
            n_tx: cfg.n_tx,
            n_rx: cfg.n_rx,
            ratios: cfg.training_indices.iter().map(|&k| cfg.squint_ratio(k)).collect(),
            tx_proj: pilots.s.iter().map(|s| s.transpose() * &ft).collect(),
            rx_proj: whitened.w_w.transpose(),
        })
    }

    pub fn k(&self) -> usize {
        self.ratios.len()
    }

    /// Rows of one whitened observation vector, `P·N_s`.
    pub fn obs_len(&self) -> usize {
        self.tx_proj[0].nrows() * self.rx_proj.nrows()
    }
}

/// Base and derivative dictionaries of one training subcarrier.
#[derive(Debug, Clone)]
pub struct BandDictionary {
    /// `D_bs,k = S_kᵀ Fᵀ A_bs,k(φ̃)`, `P × N_φ`.
    pub bs: CMatrix,
    /// `∂D_bs,k/∂φ̃`.
    pub dbs: CMatrix,
    /// `D_ms,k = W_wᵀ A_ms,k(θ̃)`, `N_s × N_θ`.
    pub ms: CMatrix,
    /// `∂D_ms,k/∂θ̃`.
    pub dms: CMatrix,
}

#[derive(Debug, Clone)]
pub struct DictionaryBundle {
    pub grids: AngleGrids,
    /// Active (AOD index, AOA index) pairs in column order.
    pub pairs: Vec<(usize, usize)>,
    pub bands: Vec<BandDictionary>,
    pub ctx: Arc<DictionaryContext>,
}

pub fn build_bundle(
    cfg: &SystemConfig,
    grids: AngleGrids,
    bf: &BeamformerPair,
    whitened: &WhitenedObservation,
    pilots: &PilotBlock,
) -> Result<DictionaryBundle> {
    let ctx = Arc::new(DictionaryContext::new(cfg, bf, whitened, pilots)?);
    let pairs = full_pairs(grids.n_phi(), grids.n_theta());
    Ok(DictionaryBundle::from_parts(ctx, grids, pairs))
}

fn full_pairs(n_phi: usize, n_theta: usize) -> Vec<(usize, usize)> {
    (0..n_phi).flat_map(|j| (0..n_theta).map(move |i| (j, i))).collect()
}

impl DictionaryBundle {
    pub fn from_parts(ctx: Arc<DictionaryContext>, grids: AngleGrids, pairs: Vec<(usize, usize)>) -> Self {
        let bands = (0..ctx.k())
            .map(|k| {
                let rho = ctx.ratios[k];
                let tx = &ctx.tx_proj[k];
                BandDictionary {
                    bs: tx * steering_matrix(&grids.phi, ctx.n_tx, rho),
                    dbs: tx * steering_derivative_matrix(&grids.phi, ctx.n_tx, rho),
                    ms: &ctx.rx_proj * steering_matrix(&grids.theta, ctx.n_rx, rho),
                    dms: &ctx.rx_proj * steering_derivative_matrix(&grids.theta, ctx.n_rx, rho),
                }
            })
            .collect();
        Self { grids, pairs, bands, ctx }
    }

    /// Number of active columns `R`.
    pub fn n_cols(&self) -> usize {
        self.pairs.len()
    }

    pub fn k(&self) -> usize {
        self.bands.len()
    }

    pub fn obs_len(&self) -> usize {
        self.ctx.obs_len()
    }

    /// (AOD, AOA) of column `r`.
    pub fn pair_angles(&self, r: usize) -> (f64, f64) {
        let (j, i) = self.pairs[r];
        (self.grids.phi[j], self.grids.theta[i])
    }

    /// AOD index of every column (the nonzero of each row of `B¹`).
    pub fn phi_index(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    /// AOA index of every column (the nonzero of each row of `B²`).
    pub fn theta_index(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    /// Dense `B¹` (`R × N_φ`) and `B²` (`R × N_θ`) for the active pairs.
    pub fn selection(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut b1 = DMatrix::zeros(self.n_cols(), self.grids.n_phi());
        let mut b2 = DMatrix::zeros(self.n_cols(), self.grids.n_theta());
        for (r, &(j, i)) in self.pairs.iter().enumerate() {
            b1[(r, j)] = 1.0;
            b2[(r, i)] = 1.0;
        }
        (b1, b2)
    }

    fn pair_columns(&self, tx: &CMatrix, rx: &CMatrix) -> CMatrix {
        let ns = rx.nrows();
        let mut d = CMatrix::zeros(tx.nrows() * ns, self.n_cols());
        for (r, &(j, i)) in self.pairs.iter().enumerate() {
            let mut col = d.column_mut(r);
            for p in 0..tx.nrows() {
                let s = tx[(p, j)];
                for q in 0..ns {
                    col[p * ns + q] = s * rx[(q, i)];
                }
            }
        }
        d
    }

    /// The on-grid dictionary `D_bs,k ⊗ D_ms,k` restricted to the active pairs.
    pub fn base_dictionary(&self, k: usize) -> CMatrix {
        let b = &self.bands[k];
        self.pair_columns(&b.bs, &b.ms)
    }

    /// Columns `∂D_bs,k[:, j] ⊗ D_ms,k[:, i]` of the active pairs.
    pub fn phi_derivative_dictionary(&self, k: usize) -> CMatrix {
        let b = &self.bands[k];
        self.pair_columns(&b.dbs, &b.ms)
    }

    /// Columns `D_bs,k[:, j] ⊗ ∂D_ms,k[:, i]` of the active pairs.
    pub fn theta_derivative_dictionary(&self, k: usize) -> CMatrix {
        let b = &self.bands[k];
        self.pair_columns(&b.bs, &b.dms)
    }

    /// Same grid values, fresh steering evaluations (used after offsets are absorbed).
    pub fn regrid(&self, grids: AngleGrids) -> Self {
        Self::from_parts(self.ctx.clone(), grids, self.pairs.clone())
    }

    /// First-order off-grid dictionary:
    /// `D_bs⊗D_ms + (∂D_bs diag δ_φ)⊗D_ms + D_bs⊗(∂D_ms diag δ_θ)`, restricted
    /// to the active pairs.
    pub fn offgrid_dictionary(&self, k: usize, delta_phi: &[f64], delta_theta: &[f64]) -> Result<CMatrix> {
        self.check_offsets(k, delta_phi, delta_theta)?;
        if delta_phi.iter().chain(delta_theta).all(|&d| d == 0.0) {
            return Ok(self.base_dictionary(k));
        }
        let b = &self.bands[k];
        let ns = b.ms.nrows();
        let mut d = CMatrix::zeros(self.obs_len(), self.n_cols());
        for (r, &(j, i)) in self.pairs.iter().enumerate() {
            let (a, t) = (delta_phi[j], delta_theta[i]);
            let mut col = d.column_mut(r);
            for p in 0..b.bs.nrows() {
                let bs = b.bs[(p, j)];
                let tx = bs + b.dbs[(p, j)] * a;
                for q in 0..ns {
                    col[p * ns + q] = tx * b.ms[(q, i)] + bs * b.dms[(q, i)] * t;
                }
            }
        }
        Ok(d)
    }

    fn check_offsets(&self, k: usize, delta_phi: &[f64], delta_theta: &[f64]) -> Result<()> {
        if delta_phi.len() != self.grids.n_phi() || delta_theta.len() != self.grids.n_theta() {
            return Err(shape_err(
                "dictionary offsets",
                format!("{}+{}", self.grids.n_phi(), self.grids.n_theta()),
                format!("{}+{}", delta_phi.len(), delta_theta.len()),
            ));
        }
        if k >= self.k() {
            return Err(Error::IndexOutOfRange { index: k + 1, max: self.k() });
        }
        Ok(())
    }

    // Column r of the off-grid dictionary is u_j ⊗ ms_i + bs_j ⊗ w_i with
    // u = D_bs + ∂D_bs diag(δ_φ) and w = ∂D_ms diag(δ_θ).
    fn factors(&self, k: usize, delta_phi: &[f64], delta_theta: &[f64]) -> (CMatrix, CMatrix) {
        let b = &self.bands[k];
        let mut u = b.bs.clone();
        for (j, &a) in delta_phi.iter().enumerate() {
            if a != 0.0 {
                u.column_mut(j).axpy(c64::new(a, 0.0), &b.dbs.column(j), ONE);
            }
        }
        let mut w = b.dms.clone();
        for (i, &t) in delta_theta.iter().enumerate() {
            w.column_mut(i).scale_mut(t);
        }
        (u, w)
    }

    /// `D_k(δ)ᴴ D_k(δ)` (`R × R`), assembled from small per-factor Grams.
    pub fn gram(&self, k: usize, delta_phi: &[f64], delta_theta: &[f64]) -> Result<CMatrix> {
        self.check_offsets(k, delta_phi, delta_theta)?;
        let b = &self.bands[k];
        let (u, w) = self.factors(k, delta_phi, delta_theta);
        let uu = u.adjoint() * &u;
        let mm = b.ms.adjoint() * &b.ms;
        let n = self.n_cols();
        let mut g = CMatrix::zeros(n, n);
        if delta_theta.iter().all(|&t| t == 0.0) {
            for (r, &(jr, ir)) in self.pairs.iter().enumerate() {
                for (s, &(js, is)) in self.pairs.iter().enumerate() {
                    g[(s, r)] = uu[(js, jr)] * mm[(is, ir)];
                }
            }
            return Ok(g);
        }
        let uv = u.adjoint() * &b.bs;
        let vv = b.bs.adjoint() * &b.bs;
        let mw = b.ms.adjoint() * &w;
        let ww = w.adjoint() * &w;
        for (r, &(jr, ir)) in self.pairs.iter().enumerate() {
            for (s, &(js, is)) in self.pairs.iter().enumerate() {
                g[(s, r)] = uu[(js, jr)] * mm[(is, ir)]
                    + uv[(js, jr)] * mw[(is, ir)]
                    + uv[(jr, js)].conj() * mw[(ir, is)].conj()
                    + vv[(js, jr)] * ww[(is, ir)];
            }
        }
        Ok(g)
    }

    /// `D_k(δ)ᴴ y`.
    pub fn correlate(&self, k: usize, delta_phi: &[f64], delta_theta: &[f64], y: &[c64]) -> Result<CVector> {
        self.check_offsets(k, delta_phi, delta_theta)?;
        if y.len() != self.obs_len() {
            return Err(shape_err("correlate observation", self.obs_len(), y.len()));
        }
        let b = &self.bands[k];
        let (u, w) = self.factors(k, delta_phi, delta_theta);
        let ymat = CMatrix::from_column_slice(b.ms.nrows(), b.bs.nrows(), y);
        let t1 = b.ms.adjoint() * &ymat * u.conjugate();
        let t2 = w.adjoint() * &ymat * b.bs.conjugate();
        Ok(CVector::from_iterator(
            self.n_cols(),
            self.pairs.iter().map(|&(j, i)| t1[(i, j)] + t2[(i, j)]),
        ))
    }

    /// The bundle of a single training subcarrier.
    pub fn band(&self, k: usize) -> Result<Self> {
        if k >= self.k() {
            return Err(Error::IndexOutOfRange { index: k + 1, max: self.k() });
        }
        let ctx = DictionaryContext {
            n_tx: self.ctx.n_tx,
            n_rx: self.ctx.n_rx,
            ratios: vec![self.ctx.ratios[k]],
            tx_proj: vec![self.ctx.tx_proj[k].clone()],
            rx_proj: self.ctx.rx_proj.clone(),
        };
        Ok(Self {
            grids: self.grids.clone(),
            pairs: self.pairs.clone(),
            bands: vec![self.bands[k].clone()],
            ctx: Arc::new(ctx),
        })
    }

    /// Restrict to the given active-column positions. Grid points no longer
    /// referenced by any surviving pair are dropped and indices remapped.
    pub fn prune(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::EmptyModel);
        }
        if let Some(&bad) = keep.iter().find(|&&r| r >= self.n_cols()) {
            return Err(Error::IndexOutOfRange { index: bad + 1, max: self.n_cols() });
        }
        let kept: Vec<(usize, usize)> = keep.iter().map(|&r| self.pairs[r]).collect();
        let mut used_phi: Vec<usize> = kept.iter().map(|p| p.0).collect();
        let mut used_theta: Vec<usize> = kept.iter().map(|p| p.1).collect();
        used_phi.sort_unstable();
        used_phi.dedup();
        used_theta.sort_unstable();
        used_theta.dedup();
        let remap = |used: &[usize], n: usize| {
            let mut m = vec![usize::MAX; n];
            for (new, &old) in used.iter().enumerate() {
                m[old] = new;
            }
            m
        };
        let map_phi = remap(&used_phi, self.grids.n_phi());
        let map_theta = remap(&used_theta, self.grids.n_theta());
        let pairs = kept.iter().map(|&(j, i)| (map_phi[j], map_theta[i])).collect();
        let grids = AngleGrids {
            phi: used_phi.iter().map(|&j| self.grids.phi[j]).collect(),
            theta: used_theta.iter().map(|&i| self.grids.theta[i]).collect(),
            ..self.grids.clone()
        };
        let select = |m: &CMatrix, used: &[usize]| m.select_columns(used.iter());
        let bands = self
            .bands
            .iter()
            .map(|b| BandDictionary {
                bs: select(&b.bs, &used_phi),
                dbs: select(&b.dbs, &used_phi),
                ms: select(&b.ms, &used_theta),
                dms: select(&b.dms, &used_theta),
            })
            .collect();
        Ok(Self {
            grids,
            pairs,
            bands,
            ctx: self.ctx.clone(),
        })
    }

    /// Small Gram matrices from which every column inner product of the
    /// Khatri-Rao dictionaries follows.
    pub fn grams(&self, k: usize) -> BandGrams {
        let b = &self.bands[k];
        BandGrams {
            bs_bs: b.bs.adjoint() * &b.bs,
            bs_dbs: b.bs.adjoint() * &b.dbs,
            dbs_dbs: b.dbs.adjoint() * &b.dbs,
            ms_ms: b.ms.adjoint() * &b.ms,
            ms_dms: b.ms.adjoint() * &b.dms,
            dms_dms: b.dms.adjoint() * &b.dms,
        }
    }

    /// `(∂D_bs⊗D_ms)ᴴ y` and `(D_bs⊗∂D_ms)ᴴ y` restricted to active columns.
    pub fn derivative_correlations(&self, k: usize, y: &[c64]) -> (Vec<c64>, Vec<c64>) {
        let b = &self.bands[k];
        let (p, ns) = (b.bs.nrows(), b.ms.nrows());
        // Y reshaped as N_s × P (column-major vec)
        let ymat = CMatrix::from_column_slice(ns, p, y);
        // T[i, j] = ms_iᴴ Y conj(bs_j)  is  (bs_j ⊗ ms_i)ᴴ y
        let t_dphi = b.ms.adjoint() * &ymat * b.dbs.conjugate();
        let t_dtheta = b.dms.adjoint() * &ymat * b.bs.conjugate();
        let g1 = self.pairs.iter().map(|&(j, i)| t_dphi[(i, j)]).collect();
        let g2 = self.pairs.iter().map(|&(j, i)| t_dtheta[(i, j)]).collect();
        (g1, g2)
    }
}

/// Column Gram blocks of one band. Entry `(a, b)` of `bs_dbs` is
/// `D_bs[:, a]ᴴ ∂D_bs[:, b]`; the others follow the same naming.
#[derive(Debug, Clone)]
pub struct BandGrams {
    pub bs_bs: CMatrix,
    pub bs_dbs: CMatrix,
    pub dbs_dbs: CMatrix,
    pub ms_ms: CMatrix,
    pub ms_dms: CMatrix,
    pub dms_dms: CMatrix,
}

/// `B¹ = I_{N_φ} ⊙ 1_{N_θ×N_φ}` and `B² = 1_{N_φ×N_θ} ⊙ I_{N_θ}`.
pub fn selection_matrices(n_phi: usize, n_theta: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let ones = |r, c| CMatrix::from_element(r, c, ONE);
    let id = |n| CMatrix::identity(n, n);
    let b1 = khatri_rao(&id(n_phi), &ones(n_theta, n_phi)).expect("matching column counts");
    let b2 = khatri_rao(&ones(n_phi, n_theta), &id(n_theta)).expect("matching column counts");
    (b1.map(|z| z.re), b2.map(|z| z.re))
}

/// Exact dictionary at the shifted grids, for reference checks.
pub fn exact_shifted_dictionary(bundle: &DictionaryBundle, k: usize, delta_phi: &[f64], delta_theta: &[f64]) -> Result<CMatrix> {
    let grids = bundle.grids.shifted(delta_phi, delta_theta)?;
    Ok(bundle.regrid(grids).base_dictionary(k))
}

/// Inner product of dictionary columns `r` and `s` of the base dictionary, via
/// the Gram blocks: `(bs_j ⊗ ms_i)ᴴ (bs_j' ⊗ ms_i')`.
#[inline]
pub fn base_inner(g: &BandGrams, (jr, ir): (usize, usize), (js, is): (usize, usize)) -> c64 {
    g.bs_bs[(jr, js)] * g.ms_ms[(ir, is)]
}

/// Check that two columns hold identical data; used by tests.
pub fn columns_equal(a: &CMatrix, b: &CMatrix, ca: usize, cb: usize, tol: f64) -> bool {
    let x = a.column(ca);
    let y = b.column(cb);
    x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| (p - q).norm() <= tol)
}
