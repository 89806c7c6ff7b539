use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::linalg::{c64, chol_logdet, cholesky_jittered, CMatrix, CVector};

/// Posterior covariance of one band.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Dense(CMatrix),
    /// `diag(d) − ZᴴZ`, the Woodbury form used while the dictionary is wider
    /// than the observation (`Z` is `M × R`).
    LowRank { diag: Vec<f64>, z: CMatrix },
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Dense(c) => c.nrows(),
            Covariance::LowRank { diag, .. } => diag.len(),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            Covariance::Dense(c) => (0..c.nrows()).map(|i| c[(i, i)].re).collect(),
            Covariance::LowRank { diag, z } => diag
                .iter()
                .zip(z.column_iter())
                .map(|(d, col)| d - col.norm_squared())
                .collect(),
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        match self {
            Covariance::Dense(c) => c.clone(),
            Covariance::LowRank { diag, z } => {
                let mut c = -(z.adjoint() * z);
                for (i, d) in diag.iter().enumerate() {
                    c[(i, i)] += c64::new(*d, 0.0);
                }
                c
            }
        }
    }

    /// `tr(D Σ Dᴴ)` for an explicit `M × R` dictionary.
    pub fn sandwich_trace(&self, d: &CMatrix) -> f64 {
        match self {
            Covariance::Dense(c) => {
                let dc = d * c;
                dc.iter().zip(d.iter()).map(|(a, b)| (a * b.conj()).re).sum()
            }
            Covariance::LowRank { diag, z } => {
                let lead: f64 = d.column_iter().zip(diag).map(|(col, s)| s * col.norm_squared()).sum();
                lead - (d * z.adjoint()).norm_squared()
            }
        }
    }

    /// Covariance of the listed coordinates, with its log-determinant.
    pub fn restrict(&self, keep: &[usize]) -> Result<(Self, f64)> {
        let dense_logdet = |c: &CMatrix| -> Result<f64> { Ok(chol_logdet(&cholesky_jittered(c, 1e-12)?)) };
        match self {
            Covariance::Dense(c) => {
                let sub = c.select_rows(keep.iter()).select_columns(keep.iter());
                let ld = dense_logdet(&sub)?;
                Ok((Covariance::Dense(sub), ld))
            }
            Covariance::LowRank { diag, z } => {
                let d: Vec<f64> = keep.iter().map(|&r| diag[r]).collect();
                let zs = z.select_columns(keep.iter());
                if keep.len() <= zs.nrows() {
                    let dense = Covariance::LowRank { diag: d, z: zs }.to_dense();
                    let ld = dense_logdet(&dense)?;
                    return Ok((Covariance::Dense(dense), ld));
                }
                // det(D − ZᴴZ) = det(D) det(I − Z D⁻¹ Zᴴ)
                let mut scaled = zs.clone();
                for (c, s) in d.iter().enumerate() {
                    scaled.column_mut(c).scale_mut(1.0 / s);
                }
                let mut inner = -(&scaled * zs.adjoint());
                for i in 0..inner.nrows() {
                    inner[(i, i)] += c64::new(1.0, 0.0);
                }
                let inner = (&inner + inner.adjoint()).scale(0.5);
                let ld = d.iter().map(|x| x.ln()).sum::<f64>() + dense_logdet(&inner)?;
                Ok((Covariance::LowRank { diag: d, z: zs }, ld))
            }
        }
    }
}

/// Gamma hyperprior parameters. The same `(γ, β)` applies to every `λ_r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperpriors {
    pub gamma: f64,
    pub beta: f64,
    pub gamma_xi: f64,
    pub beta_xi: f64,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Self {
            gamma: 1e-6,
            beta: 1e-6,
            gamma_xi: 1e-6,
            beta_xi: 1e-6,
        }
    }
}

/// Mean-field posterior `q(x_k) q(λ) q(ξ)` plus the current grid offsets.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    pub mean: Vec<CVector>,
    pub cov: Vec<Covariance>,
    /// `ln det Σ_k`, kept alongside `cov` because the E-step gets it for free.
    pub logdet_cov: Vec<f64>,
    pub lambda_shape: Vec<f64>,
    pub lambda_rate: Vec<f64>,
    pub xi_shape: f64,
    pub xi_rate: f64,
    pub delta_phi: Vec<f64>,
    pub delta_theta: Vec<f64>,
    pub prior: Hyperpriors,
    pub iteration: usize,
}

impl PosteriorState {
    /// `Σ_k = I`, `m_k = 0`, `E[λ] = E[ξ] = 1`, zero offsets.
    pub fn new(k: usize, r: usize, n_phi: usize, n_theta: usize, prior: Hyperpriors) -> Self {
        Self {
            mean: vec![CVector::zeros(r); k],
            cov: vec![Covariance::Dense(CMatrix::identity(r, r)); k],
            logdet_cov: vec![0.0; k],
            lambda_shape: vec![1.0; r],
            lambda_rate: vec![1.0; r],
            xi_shape: 1.0,
            xi_rate: 1.0,
            delta_phi: vec![0.0; n_phi],
            delta_theta: vec![0.0; n_theta],
            prior,
            iteration: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.mean.len()
    }

    pub fn n_cols(&self) -> usize {
        self.lambda_shape.len()
    }

    pub fn e_lambda(&self) -> Vec<f64> {
        self.lambda_shape.iter().zip(&self.lambda_rate).map(|(a, b)| a / b).collect()
    }

    pub fn e_ln_lambda(&self) -> Vec<f64> {
        self.lambda_shape
            .iter()
            .zip(&self.lambda_rate)
            .map(|(&a, &b)| digamma(a) - b.ln())
            .collect()
    }

    pub fn e_xi(&self) -> f64 {
        self.xi_shape / self.xi_rate
    }

    pub fn e_ln_xi(&self) -> f64 {
        digamma(self.xi_shape) - self.xi_rate.ln()
    }

    /// `Σ_k + m_k m_kᴴ` as a dense matrix.
    pub fn second_moment(&self, k: usize) -> CMatrix {
        let m = &self.mean[k];
        self.cov[k].to_dense() + m * m.adjoint()
    }

    /// Largest `|m_k,r|` over bands, per column.
    pub fn peak_magnitudes(&self) -> Vec<f64> {
        (0..self.n_cols())
            .map(|r| self.mean.iter().map(|m| m[r].norm()).fold(0.0, f64::max))
            .collect()
    }

    /// `Σ_k |m_k,r|²` per column.
    pub fn aggregate_power(&self) -> Vec<f64> {
        (0..self.n_cols())
            .map(|r| self.mean.iter().map(|m| m[r].norm_sqr()).sum())
            .collect()
    }

    /// Every Gamma parameter positive and finite.
    pub fn gammas_valid(&self) -> bool {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        self.lambda_shape.iter().chain(&self.lambda_rate).all(|&x| ok(x)) && ok(self.xi_shape) && ok(self.xi_rate)
    }

    /// Keep only the listed columns and grid points. Offsets are expected to
    /// be zero (pruning happens right after grid absorption).
    pub fn restrict(&self, keep: &[usize], n_phi: usize, n_theta: usize) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::EmptyModel);
        }
        let mut cov = Vec::with_capacity(self.k());
        let mut logdet = Vec::with_capacity(self.k());
        for c in &self.cov {
            let (sub, ld) = c.restrict(keep)?;
            logdet.push(ld);
            cov.push(sub);
        }
        Ok(Self {
            mean: self.mean.iter().map(|m| m.select_rows(keep.iter())).collect(),
            cov,
            logdet_cov: logdet,
            lambda_shape: keep.iter().map(|&r| self.lambda_shape[r]).collect(),
            lambda_rate: keep.iter().map(|&r| self.lambda_rate[r]).collect(),
            delta_phi: vec![0.0; n_phi],
            delta_theta: vec![0.0; n_theta],
            xi_shape: self.xi_shape,
            xi_rate: self.xi_rate,
            prior: self.prior,
            iteration: self.iteration,
        })
    }
}
