//! Dual-wideband ULA channel: per-subcarrier steering vectors that squint with
//! frequency, and a delay phase ramp on every path gain.

use std::f64::consts::PI;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, cis, CMatrix, CVector};

/// How subcarrier `k` (1-based) maps to its baseband offset frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreqConvention {
    /// `f_k = (k-1) f_s / K_0`; the last subcarrier sits one spacing short of `f_s`.
    #[default]
    Literal,
    /// `f_k = (k-1) f_s / (K_0 - 1)`; the last subcarrier sits at exactly `f_s`.
    EndpointAtBandwidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    /// Total number of subcarriers `K_0`.
    pub k0: usize,
    /// 1-based subcarrier indices carrying pilots, strictly increasing.
    pub training_indices: Vec<usize>,
    /// Pilot frames `P`.
    pub p: usize,
    /// Streams per frame `N_s`.
    pub n_s: usize,
    /// Carrier frequency in Hz.
    pub f_c: f64,
    /// Total bandwidth in Hz.
    pub f_s: f64,
    #[serde(default)]
    pub freq_convention: FreqConvention,
}

impl SystemConfig {
    /// Reduced configuration that runs in seconds per trial.
    pub fn desk() -> Self {
        Self {
            n_tx: 16,
            n_rx: 8,
            k0: 64,
            training_indices: uniform_training(64, 8),
            p: 8,
            n_s: 4,
            f_c: 60e9,
            f_s: 1.76e9,
            freq_convention: FreqConvention::Literal,
        }
    }

    /// The full-size simulation defaults (64×32 antennas, 256 subcarriers).
    pub fn paper() -> Self {
        Self {
            n_tx: 64,
            n_rx: 32,
            k0: 256,
            training_indices: uniform_training(256, 16),
            p: 16,
            n_s: 6,
            f_c: 60e9,
            f_s: 1.76e9,
            freq_convention: FreqConvention::Literal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::InvalidConfig {
                field: field.to_string(),
                reason: reason.to_string(),
            })
        };
        for (name, v) in [
            ("n_tx", self.n_tx),
            ("n_rx", self.n_rx),
            ("k0", self.k0),
            ("p", self.p),
            ("n_s", self.n_s),
        ] {
            if v == 0 {
                return bad(name, "must be at least 1");
            }
        }
        if self.training_indices.is_empty() {
            return bad("training_indices", "must not be empty");
        }
        if self.training_indices.windows(2).any(|w| w[0] >= w[1]) {
            return bad("training_indices", "must be strictly increasing");
        }
        if self.training_indices[0] == 0 || *self.training_indices.last().unwrap() > self.k0 {
            return bad("training_indices", "must lie within 1..=k0");
        }
        if !(self.f_s > 0.0 && self.f_c > self.f_s && self.f_c.is_finite()) {
            return bad("f_c", "requires f_c > f_s > 0");
        }
        if self.freq_convention == FreqConvention::EndpointAtBandwidth && self.k0 < 2 {
            return bad("freq_convention", "endpoint convention needs k0 >= 2");
        }
        Ok(())
    }

    /// Number of training subcarriers `K`.
    pub fn k(&self) -> usize {
        self.training_indices.len()
    }

    /// Baseband offset `f_k` of 1-based subcarrier `k`.
    pub fn subcarrier_freq(&self, k: usize) -> f64 {
        let step = match self.freq_convention {
            FreqConvention::Literal => self.f_s / self.k0 as f64,
            FreqConvention::EndpointAtBandwidth => self.f_s / (self.k0 - 1) as f64,
        };
        (k as f64 - 1.0) * step
    }

    /// Steering frequency ratio `1 + f_k / f_c`.
    pub fn squint_ratio(&self, k: usize) -> f64 {
        1.0 + self.subcarrier_freq(k) / self.f_c
    }

    pub fn training_freqs(&self) -> Vec<f64> {
        self.training_indices.iter().map(|&k| self.subcarrier_freq(k)).collect()
    }

    /// Frequency granularity of the training plan; delays are identifiable
    /// modulo its reciprocal.
    pub fn training_spacing(&self) -> f64 {
        let step = self.subcarrier_freq(2) - self.subcarrier_freq(1);
        let g = self
            .training_indices
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0usize, gcd);
        if g == 0 {
            step
        } else {
            step * g as f64
        }
    }

    /// Unambiguous delay window `1 / Δf` of the training plan.
    pub fn delay_window(&self) -> f64 {
        1.0 / self.training_spacing()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `k` evenly spaced pilot subcarriers ending at `k0`: `k0/k, 2·k0/k, …, k0`.
pub fn uniform_training(k0: usize, k: usize) -> Vec<usize> {
    let step = (k0 / k.max(1)).max(1);
    (1..=k.min(k0)).map(|i| i * step).collect()
}

/// One propagation path. Angles are normalized, `d·sin(angle)/λ_c` with
/// half-wavelength spacing, so they live in `[-1/2, 1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub gain: c64,
    /// Seconds.
    pub delay: f64,
    pub aod: f64,
    pub aoa: f64,
}

impl Path {
    /// Gain with the carrier phase of the delay folded in, `α e^{-j2π f_c τ}`.
    pub fn equivalent_gain(&self, f_c: f64) -> c64 {
        self.gain * cis(-2.0 * PI * f_c * self.delay)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::InvalidArgument("path set must contain at least one path".into()));
        }
        for p in &paths {
            if !(-0.5..0.5).contains(&p.aod) || !(-0.5..0.5).contains(&p.aoa) {
                return Err(Error::InvalidArgument(format!(
                    "normalized angles ({}, {}) outside [-1/2, 1/2)",
                    p.aod, p.aoa
                )));
            }
            if !(p.delay >= 0.0) {
                return Err(Error::InvalidArgument(format!("negative delay {}", p.delay)));
            }
        }
        Ok(Self { paths })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn angle_pairs(&self) -> Vec<(f64, f64)> {
        self.paths.iter().map(|p| (p.aod, p.aoa)).collect()
    }
}

/// Normalized (AOD, AOA) pairs and gain magnitudes of the fixed four-path scenario.
pub const FIXED_SCENARIO_ANGLES: [(f64, f64); 4] = [(-0.26, 0.43), (-0.03, 0.06), (0.20, -0.31), (0.45, 0.22)];
pub const FIXED_SCENARIO_MAGNITUDES: [f64; 4] = [0.87, 0.58, 0.32, 0.7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GainSpec {
    /// `α ~ CN(0, 1)`.
    ComplexGaussian,
    /// Unit magnitude, uniform phase.
    UnitModulus,
    /// Given magnitudes (cycled if shorter than the path count), uniform phase.
    Magnitudes { values: Vec<f64> },
}

/// Draw a random path set. Angles are uniform over `[-1/2, 1/2)` and delays
/// uniform over `delay_range`.
pub fn sample_paths(seed: u64, l: usize, delay_range: Range<f64>, gains: &GainSpec) -> Result<PathSet> {
    if l == 0 {
        return Err(Error::InvalidArgument("path count must be at least 1".into()));
    }
    check_delay_range(&delay_range)?;
    if let GainSpec::Magnitudes { values } = gains {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty magnitude list".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = (0..l)
        .map(|i| {
            let aod = rng.random_range(-0.5..0.5);
            let aoa = rng.random_range(-0.5..0.5);
            let delay = draw_delay(&mut rng, &delay_range);
            let gain = draw_gain(&mut rng, gains, i);
            Path { gain, delay, aod, aoa }
        })
        .collect();
    PathSet::new(paths)
}

/// The fixed four-path scenario with random gain phases and delays.
pub fn fixed_scenario_paths(seed: u64, delay_range: Range<f64>) -> Result<PathSet> {
    check_delay_range(&delay_range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = FIXED_SCENARIO_ANGLES
        .iter()
        .zip(FIXED_SCENARIO_MAGNITUDES)
        .map(|(&(aod, aoa), mag)| {
            let phase = rng.random_range(0.0..2.0 * PI);
            let delay = draw_delay(&mut rng, &delay_range);
            Path {
                gain: c64::from_polar(mag, phase),
                delay,
                aod,
                aoa,
            }
        })
        .collect();
    PathSet::new(paths)
}

fn check_delay_range(r: &Range<f64>) -> Result<()> {
    if !(r.start >= 0.0 && r.end >= r.start && r.end.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad delay range {r:?}")));
    }
    Ok(())
}

fn draw_delay(rng: &mut ChaCha8Rng, r: &Range<f64>) -> f64 {
    if r.end > r.start {
        rng.random_range(r.clone())
    } else {
        r.start
    }
}

fn draw_gain(rng: &mut ChaCha8Rng, spec: &GainSpec, i: usize) -> c64 {
    match spec {
        GainSpec::ComplexGaussian => {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            c64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        }
        GainSpec::UnitModulus => cis(rng.random_range(0.0..2.0 * PI)),
        GainSpec::Magnitudes { values } => c64::from_polar(values[i % values.len()], rng.random_range(0.0..2.0 * PI)),
    }
}

/// ULA response `[1, e^{-j2πρν}, …, e^{-j2πρ(n-1)ν}]` with squint ratio `ρ`.
pub fn steering_vector(nu: f64, n: usize, ratio: f64) -> CVector {
    CVector::from_iterator(n, (0..n).map(|i| cis(-2.0 * PI * ratio * i as f64 * nu)))
}

/// Derivative of [`steering_vector`] with respect to `nu`.
pub fn steering_derivative(nu: f64, n: usize, ratio: f64) -> CVector {
    CVector::from_iterator(
        n,
        (0..n).map(|i| {
            let w = -2.0 * PI * ratio * i as f64;
            c64::new(0.0, w) * cis(w * nu)
        }),
    )
}

/// Steering matrix with one column per angle.
pub fn steering_matrix(angles: &[f64], n: usize, ratio: f64) -> CMatrix {
    let mut m = CMatrix::zeros(n, angles.len());
    for (c, &nu) in angles.iter().enumerate() {
        m.set_column(c, &steering_vector(nu, n, ratio));
    }
    m
}

pub fn steering_derivative_matrix(angles: &[f64], n: usize, ratio: f64) -> CMatrix {
    let mut m = CMatrix::zeros(n, angles.len());
    for (c, &nu) in angles.iter().enumerate() {
        m.set_column(c, &steering_derivative(nu, n, ratio));
    }
    m
}

/// Per-path coefficient `ᾱ_ℓ e^{-j2π f_k τ_ℓ}` on subcarrier `k`.
pub fn path_coefficients(paths: &PathSet, cfg: &SystemConfig, k: usize) -> Vec<c64> {
    let fk = cfg.subcarrier_freq(k);
    paths
        .paths
        .iter()
        .map(|p| p.equivalent_gain(cfg.f_c) * cis(-2.0 * PI * fk * p.delay))
        .collect()
}

/// `H_k = A_ms,k diag(g_k) A_bs,kᵀ`, an `N_r × N_t` matrix.
pub fn channel_matrix(paths: &PathSet, cfg: &SystemConfig, k: usize) -> Result<CMatrix> {
    if k == 0 || k > cfg.k0 {
        return Err(Error::IndexOutOfRange { index: k, max: cfg.k0 });
    }
    let ratio = cfg.squint_ratio(k);
    let g = path_coefficients(paths, cfg, k);
    let mut h = CMatrix::zeros(cfg.n_rx, cfg.n_tx);
    for (p, gk) in paths.paths.iter().zip(g) {
        let ams = steering_vector(p.aoa, cfg.n_rx, ratio);
        let abs = steering_vector(p.aod, cfg.n_tx, ratio);
        h.ger(gk, &ams, &abs, c64::new(1.0, 0.0));
    }
    Ok(h)
}

/// One `H_k` per subcarrier, `k = 1..=K_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    pub h: Vec<CMatrix>,
}

impl ChannelTensor {
    /// Channel at 1-based subcarrier `k`.
    pub fn at(&self, k: usize) -> &CMatrix {
        &self.h[k - 1]
    }
}

pub fn channel_tensor(paths: &PathSet, cfg: &SystemConfig) -> Result<ChannelTensor> {
    let h = (1..=cfg.k0)
        .map(|k| channel_matrix(paths, cfg, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelTensor { h })
}

/// A path described by its equivalent gain `ᾱ = α e^{-j2π f_c τ}`, as
/// estimators report it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEstimate {
    pub gain: c64,
    pub delay: f64,
    pub aod: f64,
    pub aoa: f64,
}

/// `Σ_ℓ ᾱ_ℓ e^{-j2π f_k τ_ℓ} a_ms,k(θ_ℓ) a_bs,k(φ_ℓ)ᵀ` on every subcarrier.
pub fn reconstruct_channel(paths: &[PathEstimate], cfg: &SystemConfig) -> ChannelTensor {
    let h = (1..=cfg.k0)
        .map(|k| {
            let ratio = cfg.squint_ratio(k);
            let fk = cfg.subcarrier_freq(k);
            let mut h = CMatrix::zeros(cfg.n_rx, cfg.n_tx);
            for p in paths {
                let ams = steering_vector(p.aoa, cfg.n_rx, ratio);
                let abs = steering_vector(p.aod, cfg.n_tx, ratio);
                h.ger(p.gain * cis(-2.0 * PI * fk * p.delay), &ams, &abs, c64::new(1.0, 0.0));
            }
            h
        })
        .collect();
    ChannelTensor { h }
}

/// `‖H_{K_0} − H_1‖_F² / ‖H_1‖_F²`.
pub fn beam_squint_metric(paths: &PathSet, cfg: &SystemConfig) -> Result<f64> {
    let h1 = channel_matrix(paths, cfg, 1)?;
    let hk = channel_matrix(paths, cfg, cfg.k0)?;
    Ok((&hk - &h1).norm_squared() / h1.norm_squared())
}

/// Unwrapped steering phase difference (radians) of the last-antenna product
/// `H[N_r, N_t]` between subcarriers 1 and `K_0`, delay term excluded.
pub fn squint_phase_shift(path: &Path, cfg: &SystemConfig) -> f64 {
    let d_ratio = cfg.squint_ratio(cfg.k0) - cfg.squint_ratio(1);
    2.0 * PI * d_ratio * ((cfg.n_tx - 1) as f64 * path.aod + (cfg.n_rx - 1) as f64 * path.aoa)
}
