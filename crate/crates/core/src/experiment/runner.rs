use std::fs;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Method, Scenario};
use super::metrics::{compute_metrics, MetricsRow, TimingRow};
use crate::baselines::{angular_delay_paths, delay_grid, omp_angular, omp_angular_delay, omp_offgrid_angular, per_band_paths, OmpResult};
use crate::channel::{
    channel_tensor, fixed_scenario_paths, reconstruct_channel, sample_paths, ChannelTensor, GainSpec, PathEstimate, PathSet,
    SystemConfig,
};
use crate::dictionary::{build_bundle, build_grids};
use crate::error::{Error, Result};
use crate::frontend::{
    make_beamformers, make_pilots, snr_to_noise_var, synthesize_received, whiten, BeamformerPair, PilotBlock, WhitenedObservation,
};
use crate::vem;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d1_049b_b133_111b);
    z ^ (z >> 31)
}

/// Seed of one (trial, sweep point); depends on nothing else.
pub fn trial_seed(base: u64, trial: usize, sweep_index: usize) -> u64 {
    base ^ splitmix64(((sweep_index as u64) << 32) ^ trial as u64)
}

/// Everything a method needs for one trial. Every method sees the same
/// `obs`; the truth is used only for metrics.
pub struct TrialInputs {
    pub cfg: SystemConfig,
    pub truth: PathSet,
    pub h: ChannelTensor,
    pub bf: BeamformerPair,
    pub pilots: PilotBlock,
    pub noise_var: f64,
    pub obs: WhitenedObservation,
}

impl TrialInputs {
    pub fn synthesize(exp: &ExperimentConfig, cfg: SystemConfig, snr_db: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = || rng.next_u64();
        let (s_truth, s_bf, s_pilot, s_noise) = (next(), next(), next(), next());
        let delays = 0.0..exp.max_delay_fraction * cfg.delay_window();
        let truth = match exp.scenario {
            Scenario::FixedPaths => fixed_scenario_paths(s_truth, delays)?,
            Scenario::RandomPaths => sample_paths(s_truth, exp.paths, delays, &GainSpec::ComplexGaussian)?,
        };
        let bf = make_beamformers(&cfg, exp.beamformer, s_bf)?;
        let pilots = make_pilots(&cfg, s_pilot);
        let h = channel_tensor(&truth, &cfg)?;
        let noise_var = snr_to_noise_var(&h, &cfg, &bf, &pilots, snr_db)?;
        let y = synthesize_received(&h, &cfg, &bf, &pilots, noise_var, s_noise)?;
        let obs = whiten(&y, &bf)?;
        Ok(Self {
            cfg,
            truth,
            h,
            bf,
            pilots,
            noise_var,
            obs,
        })
    }
}

/// What a method hands back for scoring.
pub struct MethodOutput {
    /// Angle estimates per training band (one entry when the method reports
    /// a single band-independent set).
    pub per_band_angles: Vec<Vec<(f64, f64)>>,
    pub paths: Vec<PathEstimate>,
    pub converged: bool,
}

/// Run one method on a trial's observation.
pub fn run_method(method: Method, exp: &ExperimentConfig, t: &TrialInputs) -> Result<MethodOutput> {
    let cfg = &t.cfg;
    let freqs = cfg.training_freqs();
    let window = cfg.delay_window();
    let vem_opts = exp.vem.options();
    let tol = if exp.omp.noise_floor_stop {
        (t.noise_var * t.obs.y[0].len() as f64).sqrt()
    } else {
        0.0
    };
    let angular = |grid: [usize; 2]| build_bundle(cfg, build_grids(grid[0], grid[1])?, &t.bf, &t.obs, &t.pilots);
    let per_band = |per: Vec<OmpResult>| -> Result<MethodOutput> {
        Ok(MethodOutput {
            per_band_angles: per.iter().map(|r| r.angles.clone()).collect(),
            paths: per_band_paths(&per, &freqs, window, vem_opts.delay_grid)?,
            converged: true,
        })
    };
    match method {
        Method::Vem => {
            let bundle = angular(exp.grids.vem)?;
            let res = vem::run(&t.obs, &bundle, cfg, &vem_opts)?;
            Ok(MethodOutput {
                per_band_angles: vec![res.angle_pairs()],
                paths: res.paths(),
                converged: res.diagnostics.converged,
            })
        }
        Method::OmpAngular => {
            let bundle = angular(exp.grids.omp)?;
            let per = (0..cfg.k())
                .map(|k| omp_angular(&t.obs.y[k], &bundle, k, exp.omp.l_max, tol))
                .collect::<Result<Vec<_>>>()?;
            per_band(per)
        }
        Method::OmpOffgrid => {
            let bundle = angular(exp.grids.omp)?;
            let per = (0..cfg.k())
                .map(|k| omp_offgrid_angular(&t.obs.y[k], &bundle, k, exp.omp.l_max, tol, exp.omp.offgrid_iters))
                .collect::<Result<Vec<_>>>()?;
            per_band(per)
        }
        Method::OmpAngularDelay => {
            let [np, nt, ntau] = exp.grids.angular_delay;
            let bundle = angular([np, nt])?;
            let stacked_tol = tol * (cfg.k() as f64).sqrt();
            let res = omp_angular_delay(
                &t.obs,
                &bundle,
                &freqs,
                &delay_grid(ntau, window),
                exp.omp.l_max,
                stacked_tol,
                exp.omp.memory_budget_mb.saturating_mul(1 << 20),
            )?;
            Ok(MethodOutput {
                per_band_angles: vec![res.angles.clone()],
                paths: angular_delay_paths(&res),
                converged: true,
            })
        }
    }
}

fn fmt_hash(h: u64) -> String {
    format!("{h:016x}")
}

/// Rows for every enabled method on one (trial, sweep point).
pub fn run_trial(exp: &ExperimentConfig, sweep_index: usize, trial: usize) -> Result<Vec<(MetricsRow, TimingRow)>> {
    let value = exp.sweep.values[sweep_index];
    let (cfg, snr) = exp.point(value)?;
    let inputs = TrialInputs::synthesize(exp, cfg, snr, trial_seed(exp.seed, trial, sweep_index))?;
    let input_hash = inputs.obs.fingerprint();
    let mut rows = Vec::with_capacity(exp.methods.len());
    for &method in &exp.methods {
        let start = Instant::now();
        let outcome = run_method(method, exp, &inputs).and_then(|out| {
            let h_est = reconstruct_channel(&out.paths, &inputs.cfg);
            let m = compute_metrics(&inputs.truth, &out.per_band_angles, &inputs.h, &h_est, &inputs.cfg, &inputs.bf, &inputs.pilots)?;
            Ok((out, m))
        });
        let runtime_ms = (start.elapsed().as_secs_f64() * 1e3).max(1e-6);
        // fairness: the observation must be untouched by every method
        debug_assert_eq!(inputs.obs.fingerprint(), input_hash);
        let base = MetricsRow {
            trial,
            sweep_value: value,
            method: method.name().to_string(),
            mse_aod: f64::NAN,
            mse_aoa: f64::NAN,
            nmse_channel: f64::NAN,
            nmse_signal: f64::NAN,
            matched_paths: 0,
            estimated_paths: 0,
            converged: false,
            input_hash: fmt_hash(input_hash),
            error: String::new(),
        };
        let row = match outcome {
            Ok((out, m)) => MetricsRow {
                mse_aod: m.mse_aod,
                mse_aoa: m.mse_aoa,
                nmse_channel: m.nmse_channel,
                nmse_signal: m.nmse_signal,
                matched_paths: m.matched_paths,
                estimated_paths: out.paths.len(),
                converged: out.converged,
                ..base
            },
            Err(e) => MetricsRow {
                error: e.to_string(),
                ..base
            },
        };
        let timing = TimingRow {
            trial,
            sweep_value: value,
            method: method.name().to_string(),
            runtime_ms,
        };
        rows.push((row, timing));
    }
    Ok(rows)
}

/// Paths of the files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: PathBuf,
    pub timing: PathBuf,
    pub rows: usize,
}

/// Run every (sweep point, trial) on a pool of `workers` threads and write
/// `metrics.csv`, `timing.csv` and the resolved config to `out_dir`. Rows
/// come out in (sweep point, trial, method) order regardless of `workers`.
pub fn run_experiment(exp: &ExperimentConfig, out_dir: &FsPath, workers: usize) -> Result<RunOutput> {
    exp.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let jobs: Vec<(usize, usize)> = (0..exp.sweep.values.len())
        .flat_map(|s| (0..exp.trials).map(move |t| (s, t)))
        .collect();
    let results: Vec<Result<Vec<(MetricsRow, TimingRow)>>> =
        pool.install(|| jobs.par_iter().map(|&(s, t)| run_trial(exp, s, t)).collect());

    fs::create_dir_all(out_dir)?;
    let metrics = out_dir.join("metrics.csv");
    let timing = out_dir.join("timing.csv");
    let mut mw = csv::Writer::from_path(&metrics)?;
    let mut tw = csv::Writer::from_path(&timing)?;
    let mut rows = 0;
    for r in results {
        for (m, t) in r? {
            mw.serialize(&m)?;
            tw.serialize(&t)?;
            rows += 1;
        }
    }
    mw.flush()?;
    tw.flush()?;
    fs::File::create(out_dir.join("config.resolved.toml"))?.write_all(exp.to_toml().as_bytes())?;
    Ok(RunOutput { metrics, timing, rows })
}
