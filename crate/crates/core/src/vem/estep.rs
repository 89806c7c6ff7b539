use rayon::prelude::*;

use crate::dictionary::DictionaryBundle;
use crate::error::{shape_err, Error, Result};
use crate::frontend::WhitenedObservation;
use crate::linalg::{c64, chol_logdet, cholesky_jittered, CMatrix, CVector};

use super::state::{Covariance, PosteriorState};

/// How the `λ` rate sums the per-band second moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaUpdate {
    /// `β̂_r = β + Σ_k ([Σ_k]_rr + |m_k,r|²)`.
    #[default]
    Summed,
    /// `β̂_r = β + (1/K) Σ_k ([Σ_k]_rr + |m_k,r|²)`, the single-band form.
    Unsummed,
}

/// Gaussian posterior of one band.
#[derive(Debug, Clone)]
pub struct BandPosterior {
    pub mean: CVector,
    pub cov: Covariance,
    pub logdet_cov: f64,
}

/// `Σ = (ξ DᴴD + diag λ)⁻¹`, `m = ξ Σ Dᴴ y` in the `R × R` form.
pub fn posterior_direct(gram: &CMatrix, dty: &CVector, e_lambda: &[f64], e_xi: f64, jitter: f64) -> Result<BandPosterior> {
    let r = gram.nrows();
    if dty.len() != r || e_lambda.len() != r {
        return Err(shape_err("posterior_direct", r, format!("{}/{}", dty.len(), e_lambda.len())));
    }
    let mut a = gram.scale(e_xi);
    for (i, &l) in e_lambda.iter().enumerate() {
        a[(i, i)] += c64::new(l, 0.0);
    }
    // Round-off can leave tiny anti-Hermitian parts when ξ is large.
    let a = (&a + a.adjoint()).scale(0.5);
    let ch = cholesky_jittered(&a, jitter)?;
    let logdet = -chol_logdet(&ch);
    let cov = ch.inverse();
    let cov = (&cov + cov.adjoint()).scale(0.5);
    let mean = (&cov * dty).scale(e_xi);
    Ok(BandPosterior {
        mean,
        cov: Covariance::Dense(cov),
        logdet_cov: logdet,
    })
}

/// Same posterior via the `M × M` Woodbury form, cheaper when `R > M`.
pub fn posterior_woodbury(d: &CMatrix, y: &CVector, e_lambda: &[f64], e_xi: f64, jitter: f64) -> Result<BandPosterior> {
    let (m, r) = d.shape();
    if y.len() != m || e_lambda.len() != r {
        return Err(shape_err("posterior_woodbury", format!("{m}/{r}"), format!("{}/{}", y.len(), e_lambda.len())));
    }
    let inv_l: Vec<f64> = e_lambda.iter().map(|l| 1.0 / l).collect();
    let mut dl = d.clone();
    for (c, &s) in inv_l.iter().enumerate() {
        dl.column_mut(c).scale_mut(s);
    }
    let mut cy = &dl * d.adjoint();
    for i in 0..m {
        cy[(i, i)] += c64::new(1.0 / e_xi, 0.0);
    }
    let cy = (&cy + cy.adjoint()).scale(0.5);
    let ch = cholesky_jittered(&cy, jitter)?;
    let z = ch.l().solve_lower_triangular(&dl).ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let mean = dl.adjoint() * ch.solve(y);
    // ln det Σ = −Σ ln λ − ln det(I + ξ D Λ⁻¹ Dᴴ), and I + ξ D Λ⁻¹ Dᴴ = ξ C_y.
    let logdet = inv_l.iter().map(|s| s.ln()).sum::<f64>() - m as f64 * e_xi.ln() - chol_logdet(&ch);
    Ok(BandPosterior {
        mean,
        cov: Covariance::LowRank { diag: inv_l, z },
        logdet_cov: logdet,
    })
}

/// Update `q(x_k)` for every band at the state's current offsets.
pub fn e_step_x(state: &mut PosteriorState, bundle: &DictionaryBundle, obs: &WhitenedObservation, jitter: f64) -> Result<()> {
    check_consistent(state, bundle, obs)?;
    let e_lambda = state.e_lambda();
    let e_xi = state.e_xi();
    let (dp, dt) = (&state.delta_phi, &state.delta_theta);
    let woodbury = bundle.n_cols() > bundle.obs_len();
    let post: Vec<BandPosterior> = (0..bundle.k())
        .into_par_iter()
        .map(|k| {
            if woodbury {
                let d = bundle.offgrid_dictionary(k, dp, dt)?;
                posterior_woodbury(&d, &obs.y[k], &e_lambda, e_xi, jitter)
            } else {
                let g = bundle.gram(k, dp, dt)?;
                let c = bundle.correlate(k, dp, dt, obs.y[k].as_slice())?;
                posterior_direct(&g, &c, &e_lambda, e_xi, jitter)
            }
        })
        .collect::<Result<_>>()?;
    for (k, p) in post.into_iter().enumerate() {
        state.mean[k] = p.mean;
        state.cov[k] = p.cov;
        state.logdet_cov[k] = p.logdet_cov;
    }
    Ok(())
}

/// Update `q(λ)`.
pub fn e_step_lambda(state: &mut PosteriorState, rule: LambdaUpdate) {
    let k = state.k() as f64;
    let norm = match rule {
        LambdaUpdate::Summed => 1.0,
        LambdaUpdate::Unsummed => 1.0 / k,
    };
    let diags: Vec<Vec<f64>> = state.cov.iter().map(Covariance::diagonal).collect();
    for r in 0..state.n_cols() {
        let second: f64 = (0..state.k()).map(|b| diags[b][r] + state.mean[b][r].norm_sqr()).sum();
        state.lambda_shape[r] = state.prior.gamma + k;
        state.lambda_rate[r] = state.prior.beta + norm * second;
    }
}

/// `E_q ‖y − D x‖² = ‖y − D m‖² + tr(D Σ Dᴴ)`.
pub fn expected_residual(d: &CMatrix, y: &CVector, mean: &CVector, cov: &Covariance) -> f64 {
    (y - d * mean).norm_squared() + cov.sandwich_trace(d)
}

/// Per-band expected residuals at the state's offsets.
pub fn expected_residuals(state: &PosteriorState, bundle: &DictionaryBundle, obs: &WhitenedObservation) -> Result<Vec<f64>> {
    check_consistent(state, bundle, obs)?;
    let (dp, dt) = (&state.delta_phi, &state.delta_theta);
    (0..bundle.k())
        .into_par_iter()
        .map(|k| {
            let d = bundle.offgrid_dictionary(k, dp, dt)?;
            Ok(expected_residual(&d, &obs.y[k], &state.mean[k], &state.cov[k]))
        })
        .collect()
}

/// Update `q(ξ)`.
pub fn e_step_xi(state: &mut PosteriorState, bundle: &DictionaryBundle, obs: &WhitenedObservation) -> Result<()> {
    let res: f64 = expected_residuals(state, bundle, obs)?.iter().sum();
    let rate = state.prior.beta_xi + res;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Numerical(format!("noise precision rate {rate:e} is not positive")));
    }
    state.xi_shape = state.prior.gamma_xi + (bundle.k() * bundle.obs_len()) as f64;
    state.xi_rate = rate;
    Ok(())
}

pub(crate) fn check_consistent(state: &PosteriorState, bundle: &DictionaryBundle, obs: &WhitenedObservation) -> Result<()> {
    if obs.k() != bundle.k() || state.k() != bundle.k() {
        return Err(shape_err("band count", bundle.k(), format!("{}/{}", obs.k(), state.k())));
    }
    if state.n_cols() != bundle.n_cols() {
        return Err(shape_err("posterior width", bundle.n_cols(), state.n_cols()));
    }
    if state.delta_phi.len() != bundle.grids.n_phi() || state.delta_theta.len() != bundle.grids.n_theta() {
        return Err(shape_err(
            "offset length",
            format!("{}+{}", bundle.grids.n_phi(), bundle.grids.n_theta()),
            format!("{}+{}", state.delta_phi.len(), state.delta_theta.len()),
        ));
    }
    if let Some(y) = obs.y.iter().find(|y| y.len() != bundle.obs_len()) {
        return Err(shape_err("observation length", bundle.obs_len(), y.len()));
    }
    Ok(())
}
