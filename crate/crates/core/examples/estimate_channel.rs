//! Run the variational EM estimator on one noisy trial of the fixed
//! four-path scenario and compare it with per-band OMP.

use squint_sbl::baselines::{omp_angular, per_band_paths};
use squint_sbl::channel::{channel_tensor, fixed_scenario_paths, reconstruct_channel, ChannelTensor, SystemConfig};
use squint_sbl::dictionary::{build_bundle, build_grids};
use squint_sbl::frontend::{make_beamformers, make_pilots, snr_to_noise_var, synthesize_received, whiten, BeamformerMode};
use squint_sbl::vem::{self, VemOptions};

fn nmse(est: &ChannelTensor, truth: &ChannelTensor) -> f64 {
    let num: f64 = est.h.iter().zip(&truth.h).map(|(a, b)| (a - b).norm_squared()).sum();
    num / truth.h.iter().map(|b| b.norm_squared()).sum::<f64>()
}

fn main() -> squint_sbl::Result<()> {
    let snr_db: f64 = std::env::args().nth(1).map_or(Ok(15.0), |s| s.parse()).expect("SNR in dB");
    let cfg = SystemConfig::desk();
    let truth = fixed_scenario_paths(3, 0.0..0.5 * cfg.delay_window())?;
    let h = channel_tensor(&truth, &cfg)?;
    let bf = make_beamformers(&cfg, BeamformerMode::IdentityTruncated, 0)?;
    let pilots = make_pilots(&cfg, 4);
    let nv = snr_to_noise_var(&h, &cfg, &bf, &pilots, snr_db)?;
    let obs = whiten(&synthesize_received(&h, &cfg, &bf, &pilots, nv, 5)?, &bf)?;

    let bundle = build_bundle(&cfg, build_grids(16, 8)?, &bf, &obs, &pilots)?;
    let res = vem::run(&obs, &bundle, &cfg, &VemOptions::default())?;
    let d = &res.diagnostics;
    println!(
        "VEM: {} iterations, converged {}, {} pairs, final ELBO {:.4e}",
        d.iterations, d.converged, d.surviving, d.final_elbo
    );
    for p in &res.pairs {
        println!("  aod {:+.4} aoa {:+.4} |gain| {:.3} delay {:.2} ns", p.aod, p.aoa, p.gain.norm(), p.delay * 1e9);
    }
    println!("truth:");
    for p in &truth.paths {
        println!("  aod {:+.4} aoa {:+.4} |gain| {:.3} delay {:.2} ns", p.aod, p.aoa, p.gain.norm(), p.delay * 1e9);
    }
    println!("VEM channel NMSE {:.3e}", nmse(&res.channel, &h));

    let grid = build_bundle(&cfg, build_grids(32, 32)?, &bf, &obs, &pilots)?;
    let per = (0..cfg.k())
        .map(|k| omp_angular(&obs.y[k], &grid, k, 8, 0.0))
        .collect::<squint_sbl::Result<Vec<_>>>()?;
    let paths = per_band_paths(&per, &cfg.training_freqs(), cfg.delay_window(), 4096)?;
    println!("OMP channel NMSE {:.3e}", nmse(&reconstruct_channel(&paths, &cfg), &h));

    let trace = std::env::temp_dir().join("vem_trace.csv");
    d.write_trace_csv(&trace)?;
    println!("ELBO trace written to {}", trace.display());
    Ok(())
}
