//! Build a channel, send pilots through random hybrid beamformers, add noise
//! and whiten. Prints the per-band signal power and checks that the whitened
//! combiner is orthonormal.

use squint_sbl::channel::{channel_tensor, fixed_scenario_paths, SystemConfig};
use squint_sbl::frontend::{make_beamformers, make_pilots, snr_to_noise_var, synthesize_received, whiten, BeamformerMode};
use squint_sbl::linalg::identity;

fn main() -> squint_sbl::Result<()> {
    let cfg = SystemConfig::desk();
    let truth = fixed_scenario_paths(7, 0.0..0.5 * cfg.delay_window())?;
    for p in &truth.paths {
        println!("path: aod {:+.3} aoa {:+.3} |gain| {:.2} delay {:.2} ns", p.aod, p.aoa, p.gain.norm(), p.delay * 1e9);
    }

    let h = channel_tensor(&truth, &cfg)?;
    let bf = make_beamformers(&cfg, BeamformerMode::Random, 1)?;
    let pilots = make_pilots(&cfg, 2);
    let noise_var = snr_to_noise_var(&h, &cfg, &bf, &pilots, 10.0)?;
    let y = synthesize_received(&h, &cfg, &bf, &pilots, noise_var, 3)?;
    let obs = whiten(&y, &bf)?;

    println!("noise variance for 10 dB: {noise_var:.3e}");
    for (k, v) in cfg.training_indices.iter().zip(&obs.y) {
        println!("subcarrier {k:>2}: mean |y|² = {:.3e}", v.norm_squared() / v.len() as f64);
    }
    let ns = cfg.n_s;
    let gram = obs.w_w.transpose() * obs.w_w.conjugate();
    println!("‖W_wᵀ W_w* − I‖_F = {:.2e}", (gram - identity(ns)).norm());
    Ok(())
}
