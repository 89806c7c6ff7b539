//! Precoder/combiner construction, pilot synthesis, the per-subcarrier received
//! signal `Y_k = Wᵀ H_k F S_k + Wᵀ N_k`, and noise whitening.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelTensor, SystemConfig};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{c64, cis, eigh, vectorize, CMatrix, CVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeamformerMode {
    /// `[I, 0]ᵀ`: the first `N_s` antennas, one stream each.
    #[default]
    IdentityTruncated,
    /// i.i.d. `CN(0, 1)` entries, columns scaled to unit norm.
    Random,
}

/// Effective precoder `F = F_RF F_BB` (`N_t × N_s`) and combiner
/// `W = W_RF W_BB` (`N_r × N_s`), shared by all subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerPair {
    pub f: CMatrix,
    pub w: CMatrix,
    pub mode: BeamformerMode,
}

pub fn make_beamformers(cfg: &SystemConfig, mode: BeamformerMode, seed: u64) -> Result<BeamformerPair> {
    if cfg.n_s > cfg.n_tx.min(cfg.n_rx) {
        return Err(Error::InvalidArgument(format!(
            "n_s = {} exceeds min(n_tx, n_rx) = {}",
            cfg.n_s,
            cfg.n_tx.min(cfg.n_rx)
        )));
    }
    let (f, w) = match mode {
        BeamformerMode::IdentityTruncated => (
            CMatrix::identity(cfg.n_tx, cfg.n_s),
            CMatrix::identity(cfg.n_rx, cfg.n_s),
        ),
        BeamformerMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_unit_columns(&mut rng, cfg.n_tx, cfg.n_s);
            let w = random_unit_columns(&mut rng, cfg.n_rx, cfg.n_s);
            (f, w)
        }
    };
    Ok(BeamformerPair { f, w, mode })
}

fn random_unit_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    let mut m = CMatrix::from_fn(rows, cols, |_, _| complex_normal(rng));
    for mut col in m.column_iter_mut() {
        let n = col.norm();
        col /= c64::new(n, 0.0);
    }
    m
}

/// One `CN(0, 1)` draw.
pub(crate) fn complex_normal(rng: &mut impl Rng) -> c64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c64::new(re, im) * FRAC_1_SQRT_2
}

/// Pilot matrices `S_k` (`N_s × P`), one per training subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBlock {
    pub s: Vec<CMatrix>,
}

/// QPSK pilots, phases in `{π/4, 3π/4, 5π/4, 7π/4}`.
pub fn make_pilots(cfg: &SystemConfig, seed: u64) -> PilotBlock {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = (0..cfg.k())
        .map(|_| {
            CMatrix::from_fn(cfg.n_s, cfg.p, |_, _| {
                let q: u8 = rng.random_range(0..4);
                cis(PI / 4.0 + f64::from(q) * PI / 2.0)
            })
        })
        .collect();
    PilotBlock { s }
}

fn check_shapes(h: &ChannelTensor, cfg: &SystemConfig, bf: &BeamformerPair, pilots: &PilotBlock) -> Result<()> {
    if h.h.len() != cfg.k0 {
        return Err(shape_err("channel tensor length", cfg.k0, h.h.len()));
    }
    if bf.f.shape() != (cfg.n_tx, cfg.n_s) {
        return Err(shape_err("precoder", format!("{}x{}", cfg.n_tx, cfg.n_s), format!("{:?}", bf.f.shape())));
    }
    if bf.w.shape() != (cfg.n_rx, cfg.n_s) {
        return Err(shape_err("combiner", format!("{}x{}", cfg.n_rx, cfg.n_s), format!("{:?}", bf.w.shape())));
    }
    if pilots.s.len() != cfg.k() {
        return Err(shape_err("pilot block count", cfg.k(), pilots.s.len()));
    }
    if let Some(s) = pilots.s.iter().find(|s| s.shape() != (cfg.n_s, cfg.p)) {
        return Err(shape_err("pilot matrix", format!("{}x{}", cfg.n_s, cfg.p), format!("{:?}", s.shape())));
    }
    Ok(())
}

/// Noiseless `Wᵀ H F S` for one channel matrix and pilot block.
pub fn noiseless_received(h: &CMatrix, bf: &BeamformerPair, s: &CMatrix) -> CMatrix {
    bf.w.transpose() * h * &bf.f * s
}

/// Received matrices `Y_k` (`N_s × P`) on the training subcarriers, in
/// training order. `noise_var` is the per-element variance of `N_k`.
pub fn synthesize_received(
    h: &ChannelTensor,
    cfg: &SystemConfig,
    bf: &BeamformerPair,
    pilots: &PilotBlock,
    noise_var: f64,
    seed: u64,
) -> Result<Vec<CMatrix>> {
    check_shapes(h, cfg, bf, pilots)?;
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance {noise_var} must be >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = noise_var.sqrt();
    let wt = bf.w.transpose();
    Ok(cfg
        .training_indices
        .iter()
        .zip(&pilots.s)
        .map(|(&k, s)| {
            let mut y = noiseless_received(h.at(k), bf, s);
            if noise_var > 0.0 {
                let n = CMatrix::from_fn(cfg.n_rx, cfg.p, |_, _| complex_normal(&mut rng) * sd);
                y += &wt * n;
            }
            y
        })
        .collect())
}

/// Left whitening transform `T = Σ^{-1/2} Uᴴ` with `WᵀW* = U Σ Uᴴ`, and the
/// whitened combiner `W_w` satisfying `W_wᵀ = T Wᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitener {
    pub transform: CMatrix,
    pub w_w: CMatrix,
}

impl Whitener {
    pub fn new(bf: &BeamformerPair) -> Result<Self> {
        let gram = bf.w.transpose() * bf.w.conjugate();
        let (u, sigma) = eigh(&gram)?;
        let top = sigma.first().copied().unwrap_or(0.0);
        if sigma.iter().any(|&s| !(s > 1e-12 * top)) || top <= 0.0 {
            return Err(Error::RankDeficient("combiner WᵀW* is singular"));
        }
        let mut transform = u.adjoint();
        for (i, s) in sigma.iter().enumerate() {
            let scale = c64::new(1.0 / s.sqrt(), 0.0);
            transform.row_mut(i).iter_mut().for_each(|z| *z *= scale);
        }
        let w_w = (&transform * bf.w.transpose()).transpose();
        Ok(Self { transform, w_w })
    }

    pub fn apply(&self, y: &CMatrix) -> CMatrix {
        &self.transform * y
    }
}

/// Whitened observation vectors `y_w,k = vec(T Y_k)` (length `P·N_s`).
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedObservation {
    pub y: Vec<CVector>,
    pub w_w: CMatrix,
    pub transform: CMatrix,
}

impl WhitenedObservation {
    pub fn k(&self) -> usize {
        self.y.len()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            y: self.y.iter().map(|v| v.scale(c)).collect(),
            ..self.clone()
        }
    }

    /// Bytes of all observation entries, for identical-input checks.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over the raw f64 bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.y {
            for z in v.iter() {
                for bits in [z.re.to_bits(), z.im.to_bits()] {
                    for b in bits.to_le_bytes() {
                        h ^= u64::from(b);
                        h = h.wrapping_mul(0x0100_0000_01b3);
                    }
                }
            }
        }
        h
    }
}

pub fn whiten(y: &[CMatrix], bf: &BeamformerPair) -> Result<WhitenedObservation> {
    let wh = Whitener::new(bf)?;
    let ns = bf.w.ncols();
    let mut out = Vec::with_capacity(y.len());
    for yk in y {
        if yk.nrows() != ns {
            return Err(shape_err("received matrix rows", ns, yk.nrows()));
        }
        out.push(vectorize(&wh.apply(yk)));
    }
    Ok(WhitenedObservation {
        y: out,
        w_w: wh.w_w,
        transform: wh.transform,
    })
}

/// Noiseless whitened signal vectors for a given channel on the training subcarriers.
pub fn noiseless_whitened(
    h: &ChannelTensor,
    cfg: &SystemConfig,
    bf: &BeamformerPair,
    pilots: &PilotBlock,
) -> Result<Vec<CVector>> {
    let y = synthesize_received(h, cfg, bf, pilots, 0.0, 0)?;
    Ok(whiten(&y, bf)?.y)
}

/// Noise variance giving the requested SNR, where SNR is the mean per-element
/// power of the noiseless whitened signal over `σ²` (whitened noise has
/// per-element variance `σ²`).
pub fn snr_to_noise_var(
    h: &ChannelTensor,
    cfg: &SystemConfig,
    bf: &BeamformerPair,
    pilots: &PilotBlock,
    snr_db: f64,
) -> Result<f64> {
    let clean = noiseless_whitened(h, cfg, bf, pilots)?;
    let power = mean_power(&clean);
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::ZeroSignalPower);
    }
    Ok(power / 10f64.powf(snr_db / 10.0))
}

pub(crate) fn mean_power(v: &[CVector]) -> f64 {
    let (sum, n) = v.iter().fold((0.0, 0usize), |(s, n), x| (s + x.norm_squared(), n + x.len()));
    sum / n.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{channel_tensor, GainSpec, Path, PathSet};
    use crate::linalg::{identity, ONE};

    fn flat_channel(cfg: &SystemConfig) -> ChannelTensor {
        let ps = PathSet::new(vec![Path { gain: ONE, delay: 0.0, aod: 0.0, aoa: 0.0 }]).unwrap();
        channel_tensor(&ps, cfg).unwrap()
    }

    #[test]
    fn identity_mode_layout() {
        let mut cfg = SystemConfig::desk();
        cfg.n_rx = 4;
        cfg.n_s = 2;
        let bf = make_beamformers(&cfg, BeamformerMode::IdentityTruncated, 0).unwrap();
        let expect = CMatrix::from_row_slice(4, 2, &[ONE, c64::new(0.0, 0.0), c64::new(0.0, 0.0), ONE, c64::new(0.0, 0.0), c64::new(0.0, 0.0), c64::new(0.0, 0.0), c64::new(0.0, 0.0)]);
        assert_eq!(bf.w, expect);
    }

    #[test]
    fn random_mode_deterministic_unit_columns() {
        let cfg = SystemConfig::desk();
        let a = make_beamformers(&cfg, BeamformerMode::Random, 9).unwrap();
        let b = make_beamformers(&cfg, BeamformerMode::Random, 9).unwrap();
        assert_eq!(a, b);
        for col in a.f.column_iter().chain(a.w.column_iter()) {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_streams() {
        let mut cfg = SystemConfig::desk();
        cfg.n_s = 9;
        assert!(make_beamformers(&cfg, BeamformerMode::IdentityTruncated, 0).is_err());
    }

    #[test]
    fn pilots_are_qpsk_and_deterministic() {
        let cfg = SystemConfig::desk();
        let p = make_pilots(&cfg, 5);
        assert_eq!(p, make_pilots(&cfg, 5));
        assert_eq!(p.s.len(), cfg.k());
        for s in &p.s {
            for z in s.iter() {
                assert!((z.norm() - 1.0).abs() < 1e-14);
                let q = (z.arg() - PI / 4.0).rem_euclid(PI / 2.0);
                assert!(q < 1e-12 || (PI / 2.0 - q) < 1e-12);
            }
        }
    }

    #[test]
    fn pilot_mean_power_is_one() {
        let mut cfg = SystemConfig::desk();
        cfg.p = 2000;
        let p = make_pilots(&cfg, 1);
        let n: usize = p.s.iter().map(|s| s.len()).sum();
        let pow: f64 = p.s.iter().map(|s| s.norm_squared()).sum::<f64>() / n as f64;
        assert!((pow - 1.0).abs() < 1e-12);
        let mean: c64 = p.s.iter().map(|s| s.sum()).sum::<c64>() / n as f64;
        assert!(mean.norm() < 0.03);
    }

    #[test]
    fn noiseless_identity_flat_path() {
        let cfg = SystemConfig::desk();
        let h = flat_channel(&cfg);
        let bf = make_beamformers(&cfg, BeamformerMode::IdentityTruncated, 0).unwrap();
        let pilots = make_pilots(&cfg, 2);
        let y = synthesize_received(&h, &cfg, &bf, &pilots, 0.0, 3).unwrap();
        for (yk, (s, &k)) in y.iter().zip(pilots.s.iter().zip(&cfg.training_indices)) {
            let block = h.at(k).view((0, 0), (cfg.n_s, cfg.n_s)).into_owned();
            assert!((yk - block * s).camax() == 0.0);
        }
    }

    #[test]
    fn noiseless_model_residual_zero() {
        let cfg = SystemConfig::desk();
        let ps = crate::channel::sample_paths(1, 3, 0.0..4e-9, &GainSpec::ComplexGaussian).unwrap();
        let h = channel_tensor(&ps, &cfg).unwrap();
        let bf = make_beamformers(&cfg, BeamformerMode::Random, 4).unwrap();
        let pilots = make_pilots(&cfg, 2);
        let y = synthesize_received(&h, &cfg, &bf, &pilots, 0.0, 3).unwrap();
        for (yk, (s, &k)) in y.iter().zip(pilots.s.iter().zip(&cfg.training_indices)) {
            assert_eq!(*yk, bf.w.transpose() * h.at(k) * &bf.f * s);
        }
    }

    #[test]
    fn shape_mismatch_detected() {
        let cfg = SystemConfig::desk();
        let h = flat_channel(&cfg);
        let bf = make_beamformers(&cfg, BeamformerMode::IdentityTruncated, 0).unwrap();
        let mut pilots = make_pilots(&cfg, 2);
        pilots.s.pop();
        assert!(matches!(
            synthesize_received(&h, &cfg, &bf, &pilots, 0.1, 0),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn received_noise_covariance_follows_combiner() {
        // Y_k − noiseless = Wᵀ N_k has covariance σ² WᵀW*; check its diagonal
        let mut cfg = SystemConfig::desk();
        cfg.p = 10_000;
        cfg.training_indices = vec![1];
        let h = flat_channel(&cfg);
        let bf = make_beamformers(&cfg, BeamformerMode::Random, 8).unwrap();
        let pilots = make_pilots(&cfg, 1);
        let sigma2 = 0.7;
        let y = synthesize_received(&h, &cfg, &bf, &pilots, sigma2, 11).unwrap();
        let noise = &y[0] - noiseless_received(h.at(1), &bf, &pilots.s[0]);
        let gram = bf.w.transpose() * bf.w.conjugate();
        for i in 0..cfg.n_s {
            let var = noise.row(i).iter().map(|z| z.norm_sqr()).sum::<f64>() / cfg.p as f64;
            let expect = sigma2 * gram[(i, i)].re;
            assert!((var - expect).abs() < 0.05 * expect, "row {i}: {var} vs {expect}");
        }
    }

    #[test]
    fn identity_whitening_is_identity_map() {
        let cfg = SystemConfig::desk();
        let bf = make_beamformers(&cfg, BeamformerMode::IdentityTruncated, 0).unwrap();
        let wh = Whitener::new(&bf).unwrap();
        assert!((wh.transform.clone() * wh.transform.adjoint() - identity(cfg.n_s)).camax() < 1e-14);
        // permutation-free: U can reorder equal eigenvalues, but TᴴT = I so the
        // whitened noise stays white; the combiner stays orthonormal
        assert!((wh.w_w.transpose() * wh.w_w.conjugate() - identity(cfg.n_s)).norm() < 1e-12);
    }

    #[test]
    fn whitening_orthonormalizes_random_combiner() {
        let mut cfg = SystemConfig::desk();
        cfg.n_rx = 32;
        cfg.n_tx = 32;
        cfg.n_s = 12;
        for seed in 0..10 {
            let bf = make_beamformers(&cfg, BeamformerMode::Random, seed).unwrap();
            let wh = Whitener::new(&bf).unwrap();
            let gram = wh.w_w.transpose() * wh.w_w.conjugate();
            assert!((gram - identity(12)).norm() < 1e-10);
        }
    }

    #[test]
    fn whitening_rejects_rank_deficient() {
        let cfg = SystemConfig::desk();
        let mut bf = make_beamformers(&cfg, BeamformerMode::Random, 1).unwrap();
        let c0 = bf.w.column(0).into_owned();
        bf.w.set_column(1, &c0);
        assert!(matches!(Whitener::new(&bf), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn whitened_noise_is_white() {
        let mut cfg = SystemConfig::desk();
        cfg.p = 10_000;
        cfg.training_indices = vec![1];
        let h = flat_channel(&cfg);
        let bf = make_beamformers(&cfg, BeamformerMode::Random, 3).unwrap();
        let pilots = make_pilots(&cfg, 1);
        let sigma2 = 0.5;
        let y = synthesize_received(&h, &cfg, &bf, &pilots, sigma2, 5).unwrap();
        let wh = Whitener::new(&bf).unwrap();
        let noise = wh.apply(&(&y[0] - noiseless_received(h.at(1), &bf, &pilots.s[0])));
        let cov = &noise * noise.adjoint() / c64::new(cfg.p as f64, 0.0);
        let err = (cov - identity(cfg.n_s).scale(sigma2)).camax();
        assert!(err < 0.05 * sigma2, "max deviation {err}");
    }

    #[test]
    fn snr_definition() {
        let cfg = SystemConfig::desk();
        let ps = crate::channel::sample_paths(2, 3, 0.0..4e-9, &GainSpec::ComplexGaussian).unwrap();
        let h = channel_tensor(&ps, &cfg).unwrap();
        let bf = make_beamformers(&cfg, BeamformerMode::Random, 4).unwrap();
        let pilots = make_pilots(&cfg, 2);
        let v0 = snr_to_noise_var(&h, &cfg, &bf, &pilots, 0.0).unwrap();
        let clean = noiseless_whitened(&h, &cfg, &bf, &pilots).unwrap();
        assert!((v0 - mean_power(&clean)).abs() < 1e-12 * v0);
        let v10 = snr_to_noise_var(&h, &cfg, &bf, &pilots, 10.0).unwrap();
        assert!((v0 / v10 - 10.0).abs() < 1e-9);
    }

    #[test]
    fn zero_channel_has_no_snr() {
        let cfg = SystemConfig::desk();
        let h = ChannelTensor { h: vec![CMatrix::zeros(cfg.n_rx, cfg.n_tx); cfg.k0] };
        let bf = make_beamformers(&cfg, BeamformerMode::IdentityTruncated, 0).unwrap();
        let pilots = make_pilots(&cfg, 2);
        assert!(matches!(snr_to_noise_var(&h, &cfg, &bf, &pilots, 0.0), Err(Error::ZeroSignalPower)));
    }

    #[test]
    fn empirical_snr_matches_request() {
        let cfg = SystemConfig::desk();
        let mut errs = Vec::new();
        for t in 0..100u64 {
            let ps = crate::channel::sample_paths(t, 3, 0.0..4e-9, &GainSpec::ComplexGaussian).unwrap();
            let h = channel_tensor(&ps, &cfg).unwrap();
            let bf = make_beamformers(&cfg, BeamformerMode::Random, t).unwrap();
            let pilots = make_pilots(&cfg, t);
            let v = snr_to_noise_var(&h, &cfg, &bf, &pilots, 7.0).unwrap();
            let y = synthesize_received(&h, &cfg, &bf, &pilots, v, 1000 + t).unwrap();
            let noisy = whiten(&y, &bf).unwrap();
            let clean = noiseless_whitened(&h, &cfg, &bf, &pilots).unwrap();
            let noise: Vec<CVector> = noisy.y.iter().zip(&clean).map(|(a, b)| a - b).collect();
            errs.push(10.0 * (mean_power(&clean) / mean_power(&noise)).log10());
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!((mean - 7.0).abs() < 0.2, "mean measured SNR {mean}");
    }
}
