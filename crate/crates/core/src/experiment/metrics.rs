use serde::{Deserialize, Serialize};

use crate::baselines::pair_and_average;
use crate::channel::{ChannelTensor, PathSet, SystemConfig};
use crate::error::{shape_err, Result};
use crate::frontend::{noiseless_whitened, BeamformerPair, PilotBlock};
use crate::linalg::CVector;

/// One method's result on one trial. Runtime lives in the timing sidecar so
/// that this file is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub trial: usize,
    pub sweep_value: f64,
    pub method: String,
    /// Mean squared normalized-angle error over matched true paths.
    pub mse_aod: f64,
    pub mse_aoa: f64,
    pub nmse_channel: f64,
    pub nmse_signal: f64,
    /// Number of true paths the pairing matched.
    pub matched_paths: usize,
    pub estimated_paths: usize,
    pub converged: bool,
    /// FNV-1a hash of the whitened observation the method consumed.
    pub input_hash: String,
    /// Empty unless the method failed on this trial.
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub trial: usize,
    pub sweep_value: f64,
    pub method: String,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse_aod: f64,
    pub mse_aoa: f64,
    pub nmse_channel: f64,
    pub nmse_signal: f64,
    pub matched_paths: usize,
}

/// Per-band angle estimates are paired with the truth and averaged; the
/// channel NMSE runs over all `K_0` subcarriers and the signal NMSE over the
/// noiseless whitened observations on the training subcarriers.
pub fn compute_metrics(
    truth: &PathSet,
    per_band_angles: &[Vec<(f64, f64)>],
    h_true: &ChannelTensor,
    h_est: &ChannelTensor,
    cfg: &SystemConfig,
    bf: &BeamformerPair,
    pilots: &PilotBlock,
) -> Result<Metrics> {
    if h_true.h.len() != h_est.h.len() {
        return Err(shape_err("channel tensor length", h_true.h.len(), h_est.h.len()));
    }
    let truth_pairs = truth.angle_pairs();
    let paired = pair_and_average(per_band_angles, &truth_pairs)?;
    let (mut ea, mut eb, mut n) = (0.0, 0.0, 0usize);
    for (t, est) in truth_pairs.iter().zip(&paired) {
        if let Some(e) = est {
            ea += (e.0 - t.0).powi(2);
            eb += (e.1 - t.1).powi(2);
            n += 1;
        }
    }
    let (mse_aod, mse_aoa) = if n > 0 {
        (ea / n as f64, eb / n as f64)
    } else {
        (f64::NAN, f64::NAN)
    };

    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in h_est.h.iter().zip(&h_true.h) {
        if a.shape() != b.shape() {
            return Err(shape_err("channel matrix", format!("{:?}", b.shape()), format!("{:?}", a.shape())));
        }
        num += (a - b).norm_squared();
        den += b.norm_squared();
    }
    let y_true = noiseless_whitened(h_true, cfg, bf, pilots)?;
    let y_est = noiseless_whitened(h_est, cfg, bf, pilots)?;
    Ok(Metrics {
        mse_aod,
        mse_aoa,
        nmse_channel: num / den,
        nmse_signal: stacked_nmse(&y_est, &y_true),
        matched_paths: n,
    })
}

fn stacked_nmse(est: &[CVector], truth: &[CVector]) -> f64 {
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum();
    let den: f64 = truth.iter().map(|b| b.norm_squared()).sum();
    num / den
}
