//! Angular dictionaries: the forward model holds exactly on the grid, and the
//! first-order off-grid dictionary's error shrinks about 4× when the offset
//! is halved.

use squint_sbl::channel::{channel_tensor, Path, PathSet, SystemConfig};
use squint_sbl::dictionary::{build_bundle, build_grids, exact_shifted_dictionary};
use squint_sbl::frontend::{make_beamformers, make_pilots, noiseless_whitened, synthesize_received, whiten, BeamformerMode};
use squint_sbl::linalg::{c64, CVector};

fn main() -> squint_sbl::Result<()> {
    let cfg = SystemConfig::desk();
    let grids = build_grids(16, 8)?;
    let (j, i) = (5, 2);
    let truth = PathSet::new(vec![Path {
        gain: c64::new(0.8, -0.3),
        delay: 0.0,
        aod: grids.phi[j],
        aoa: grids.theta[i],
    }])?;
    let bf = make_beamformers(&cfg, BeamformerMode::Random, 11)?;
    let pilots = make_pilots(&cfg, 12);
    let h = channel_tensor(&truth, &cfg)?;
    let clean = noiseless_whitened(&h, &cfg, &bf, &pilots)?;
    let obs = whiten(&synthesize_received(&h, &cfg, &bf, &pilots, 0.0, 0)?, &bf)?;
    let bundle = build_bundle(&cfg, grids, &bf, &obs, &pilots)?;

    let col = j * bundle.grids.n_theta() + i;
    for (k, y) in clean.iter().enumerate() {
        let gain = truth.paths[0].equivalent_gain(cfg.f_c);
        let mut x = CVector::zeros(bundle.n_cols());
        x[col] = gain;
        let err = (bundle.base_dictionary(k) * x - y).norm() / y.norm();
        println!("band {k}: forward-model relative error {err:.1e}");
    }

    let (np, nt) = (bundle.grids.n_phi(), bundle.grids.n_theta());
    let mut last = None;
    for step in [0.2, 0.1, 0.05, 0.025] {
        let dp = vec![step * bundle.grids.max_offset_phi(); np];
        let dt = vec![-step * bundle.grids.max_offset_theta(); nt];
        let approx = bundle.offgrid_dictionary(0, &dp, &dt)?;
        let exact = exact_shifted_dictionary(&bundle, 0, &dp, &dt)?;
        let err = (approx - exact).norm();
        match last {
            Some(prev) => println!("offset scale {step:<5}: Taylor error {err:.3e}, ratio {:.2}", prev / err),
            None => println!("offset scale {step:<5}: Taylor error {err:.3e}"),
        }
        last = Some(err);
    }
    Ok(())
}
