//! A small SNR sweep from code rather than a config file, followed by the
//! median aggregation the CLI's `aggregate` command prints.

use squint_sbl::experiment::{aggregate, read_metrics, run_experiment, write_aggregate, ExperimentConfig, Preset, Stat, Sweep, SweepVariable};

fn main() -> squint_sbl::Result<()> {
    let mut exp = ExperimentConfig::preset(Preset::Desk);
    exp.trials = 3;
    exp.sweep = Sweep {
        variable: SweepVariable::Snr,
        values: vec![0.0, 10.0, 20.0],
    };
    let dir = std::env::temp_dir().join("squint-sbl-sweep");
    let out = run_experiment(&exp, &dir, 2)?;
    let rows = read_metrics(std::fs::File::open(&out.metrics)?)?;
    write_aggregate(&aggregate(&rows, Stat::Median), std::io::stdout().lock())?;
    Ok(())
}
