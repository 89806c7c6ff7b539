//! The three OMP baselines on one trial, scored with the truth-aware pairing.

use squint_sbl::experiment::{compute_metrics, run_method, ExperimentConfig, Method, Preset, TrialInputs};

fn main() -> squint_sbl::Result<()> {
    let exp = ExperimentConfig::preset(Preset::Desk);
    let inputs = TrialInputs::synthesize(&exp, exp.system.clone(), 15.0, 42)?;
    for method in [Method::OmpAngular, Method::OmpOffgrid, Method::OmpAngularDelay] {
        let out = run_method(method, &exp, &inputs)?;
        let h = squint_sbl::channel::reconstruct_channel(&out.paths, &inputs.cfg);
        let m = compute_metrics(&inputs.truth, &out.per_band_angles, &inputs.h, &h, &inputs.cfg, &inputs.bf, &inputs.pilots)?;
        println!(
            "{:<18} paths {:>3}  mse aod {:.2e}  mse aoa {:.2e}  nmse channel {:.3}",
            method.name(),
            out.paths.len(),
            m.mse_aod,
            m.mse_aoa,
            m.nmse_channel
        );
    }
    Ok(())
}
