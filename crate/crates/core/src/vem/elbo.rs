use std::f64::consts::PI;

use statrs::function::gamma::{digamma, ln_gamma};

use crate::dictionary::DictionaryBundle;
use crate::error::{Error, Result};
use crate::frontend::WhitenedObservation;

use super::estep::expected_residuals;
use super::state::PosteriorState;

/// Terms of the bound that involve one band's `q(x_k)`:
/// `E[ln p(y_k|x_k,ξ)] + E[ln p(x_k|λ)] + H[q(x_k)]`.
///
/// With `λ` and `ξ` known exactly (so `E ln λ = ln λ`) and `q(x_k)` the exact
/// posterior, this equals the log evidence `ln p(y_k | λ, ξ)`.
#[allow(clippy::too_many_arguments)]
pub fn band_terms(
    m_rows: usize,
    residual: f64,
    cov_diag: &[f64],
    mean_sq: &[f64],
    logdet_cov: f64,
    e_lambda: &[f64],
    e_ln_lambda: &[f64],
    e_xi: f64,
    e_ln_xi: f64,
) -> f64 {
    let r = e_lambda.len();
    let likelihood = m_rows as f64 * (e_ln_xi - PI.ln()) - e_xi * residual;
    let prior: f64 = (0..r)
        .map(|i| e_ln_lambda[i] - PI.ln() - e_lambda[i] * (cov_diag[i] + mean_sq[i]))
        .sum();
    let entropy = r as f64 * (1.0 + PI.ln()) + logdet_cov;
    likelihood + prior + entropy
}

/// `E[ln Gamma(x; a, b)]` under `q = Gamma(â, b̂)`.
fn gamma_prior_term(a: f64, b: f64, e: f64, e_ln: f64) -> f64 {
    a * b.ln() - ln_gamma(a) + (a - 1.0) * e_ln - b * e
}

fn gamma_entropy(a: f64, b: f64) -> f64 {
    a - b.ln() + ln_gamma(a) + (1.0 - a) * digamma(a)
}

/// Evidence lower bound at the state's current offsets.
pub fn elbo(state: &PosteriorState, bundle: &DictionaryBundle, obs: &WhitenedObservation) -> Result<f64> {
    let res = expected_residuals(state, bundle, obs)?;
    let e_l = state.e_lambda();
    let e_ln_l = state.e_ln_lambda();
    let (e_xi, e_ln_xi) = (state.e_xi(), state.e_ln_xi());
    let mut total = 0.0;
    for k in 0..state.k() {
        let msq: Vec<f64> = state.mean[k].iter().map(|z| z.norm_sqr()).collect();
        total += band_terms(
            bundle.obs_len(),
            res[k],
            &state.cov[k].diagonal(),
            &msq,
            state.logdet_cov[k],
            &e_l,
            &e_ln_l,
            e_xi,
            e_ln_xi,
        );
    }
    let p = &state.prior;
    for r in 0..state.n_cols() {
        total += gamma_prior_term(p.gamma, p.beta, e_l[r], e_ln_l[r]);
        total += gamma_entropy(state.lambda_shape[r], state.lambda_rate[r]);
    }
    total += gamma_prior_term(p.gamma_xi, p.beta_xi, e_xi, e_ln_xi);
    total += gamma_entropy(state.xi_shape, state.xi_rate);
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::Numerical(format!("ELBO evaluated to {total}")))
    }
}
