//! How much does the channel change across the band? Compares the first and
//! last subcarrier of a 64×64 array at 60 GHz with 1 GHz of bandwidth.

use squint_sbl::channel::{beam_squint_metric, squint_phase_shift, uniform_training, FreqConvention, Path, PathSet, SystemConfig};
use squint_sbl::linalg::c64;

fn main() -> squint_sbl::Result<()> {
    let deg = |d: f64| 0.5 * d.to_radians().sin();
    let path = Path {
        gain: c64::new(1.0, 0.0),
        delay: 0.0,
        aod: deg(30.0),
        aoa: deg(60.0),
    };
    let paths = PathSet::new(vec![path])?;
    for conv in [FreqConvention::Literal, FreqConvention::EndpointAtBandwidth] {
        let cfg = SystemConfig {
            n_tx: 64,
            n_rx: 64,
            k0: 64,
            training_indices: uniform_training(64, 8),
            p: 8,
            n_s: 4,
            f_c: 60e9,
            f_s: 1e9,
            freq_convention: conv,
        };
        let m = beam_squint_metric(&paths, &cfg)?;
        let phase = squint_phase_shift(&path, &cfg) / std::f64::consts::PI;
        println!("{conv:?}: ‖H_K0 − H_1‖²/‖H_1‖² = {m:.3}, corner phase shift = {phase:.3}π");
    }
    Ok(())
}
