//! Multi-band common-sparsity variational EM.
//!
//! One iteration updates `q(x_k)` for every band, then `q(λ)`, then `q(ξ)`,
//! solves for grid offsets, moves the grid onto the offsets and prunes weak
//! columns. After convergence each surviving (AOD, AOA) pair's coefficient
//! row across bands is reduced to a delay and a gain, and the channel is
//! rebuilt on every subcarrier.

mod delay;
mod elbo;
mod estep;
mod mstep;
mod state;

use std::io::Write;

use serde::{Deserialize, Serialize};
use std::path::Path as FsPath;

pub use delay::estimate_delay_gain;
pub use elbo::{band_terms, elbo};
pub use estep::{
    e_step_lambda, e_step_x, e_step_xi, expected_residual, expected_residuals, posterior_direct, posterior_woodbury,
    BandPosterior, LambdaUpdate,
};
pub use mstep::{assemble_offset_system, clamp_offsets, m_step, OffsetSystem, SecondMoment};
pub use state::{Covariance, Hyperpriors, PosteriorState};

use crate::baselines::omp;
use crate::channel::{reconstruct_channel, ChannelTensor, PathEstimate, SystemConfig};
use crate::dictionary::DictionaryBundle;
use crate::error::{Error, Result};
use crate::frontend::WhitenedObservation;
use crate::linalg::{c64, CVector};

#[derive(Debug, Clone, PartialEq)]
pub struct VemOptions {
    pub max_iters: usize,
    /// Relative change of the stacked posterior means that ends the loop.
    pub mean_tol: f64,
    /// Relative ELBO change that ends the loop.
    pub elbo_tol: f64,
    /// Columns whose peak `|m|` over bands falls below this fraction of
    /// [`prune_reference`](Self::prune_reference) are dropped.
    pub prune_threshold: f64,
    pub prune_reference: PruneReference,
    /// Pairs closer than this many original grid spacings in both angles
    /// are merged into the stronger one.
    pub merge_radius: f64,
    /// First iteration (1-based) at which pruning runs.
    pub first_prune_iter: usize,
    pub lambda_update: LambdaUpdate,
    pub prior: Hyperpriors,
    /// Atoms per band in the OMP initialization.
    pub init_atoms: usize,
    pub delay_grid: usize,
    /// Relative diagonal jitter for a failed Cholesky factorization.
    pub jitter: f64,
    /// Record the ELBO after every sub-step, not just once per iteration.
    pub trace_steps: bool,
}

impl Default for VemOptions {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            mean_tol: 1e-6,
            elbo_tol: 1e-8,
            prune_threshold: 1e-2,
            prune_reference: PruneReference::SignalScale,
            merge_radius: 0.5,
            first_prune_iter: 3,
            lambda_update: LambdaUpdate::Summed,
            prior: Hyperpriors::default(),
            init_atoms: 8,
            delay_grid: 4096,
            jitter: 1e-12,
            trace_steps: false,
        }
    }
}

/// Magnitude the pruning threshold is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneReference {
    /// Largest current `|m|` over all columns and bands.
    PeakCoefficient,
    /// [`coefficient_scale`]: fixed for the whole run and proportional to
    /// the observation amplitude.
    #[default]
    SignalScale,
}

/// Point in the iteration at which an ELBO value was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Init,
    PosteriorX,
    PosteriorLambda,
    PosteriorXi,
    Offsets,
    /// Right after grid absorption and pruning changed the model.
    AfterEvent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboStep {
    pub iteration: usize,
    pub stage: Stage,
    pub elbo: f64,
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub elbo: f64,
    pub surviving_columns: usize,
    pub e_xi: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub iterations: usize,
    pub final_elbo: f64,
    pub surviving: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
    pub steps: Vec<ElboStep>,
}

impl Diagnostics {
    /// Steps at which the ELBO dropped by more than `rel_tol` relative to the
    /// previous step, ignoring drops caused by grid moves and pruning.
    pub fn monotonicity_violations(&self, rel_tol: f64) -> Vec<(ElboStep, ElboStep)> {
        self.steps
            .windows(2)
            .filter(|w| w[1].stage != Stage::AfterEvent && w[1].elbo < w[0].elbo - rel_tol * w[0].elbo.abs().max(1.0))
            .map(|w| (w[0], w[1]))
            .collect()
    }

    pub fn write_trace_csv(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.trace {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_trace<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.trace {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A surviving dictionary pair with its decoupled delay and gain.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedPair {
    pub aod: f64,
    pub aoa: f64,
    pub gain: c64,
    pub delay: f64,
    /// Posterior mean of this pair's coefficient on each training subcarrier.
    pub coefficients: Vec<c64>,
}

impl EstimatedPair {
    pub fn as_path(&self) -> PathEstimate {
        PathEstimate {
            gain: self.gain,
            delay: self.delay,
            aod: self.aod,
            aoa: self.aoa,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub pairs: Vec<EstimatedPair>,
    pub channel: ChannelTensor,
    pub diagnostics: Diagnostics,
}

impl EstimationResult {
    pub fn paths(&self) -> Vec<PathEstimate> {
        self.pairs.iter().map(EstimatedPair::as_path).collect()
    }

    pub fn angle_pairs(&self) -> Vec<(f64, f64)> {
        self.pairs.iter().map(|p| (p.aod, p.aoa)).collect()
    }
}

/// `E[λ] = E[ξ] = 1`, `Σ_k = I`, `m_k` from per-band OMP on the base dictionary.
pub fn init_state(bundle: &DictionaryBundle, obs: &WhitenedObservation, opts: &VemOptions) -> Result<PosteriorState> {
    let mut st = PosteriorState::new(bundle.k(), bundle.n_cols(), bundle.grids.n_phi(), bundle.grids.n_theta(), opts.prior);
    for k in 0..bundle.k() {
        let res = omp(&bundle.base_dictionary(k), &obs.y[k], opts.init_atoms.max(1), 0.0)?;
        for (&c, &v) in res.support.iter().zip(&res.coefficients) {
            st.mean[k][c] = v;
        }
    }
    Ok(st)
}

/// Move the grid onto the current offsets, merge pairs that collapsed onto
/// each other, and drop columns whose peak `|m|` over bands is not above
/// `floor` (skipped when `floor` is `None`).
pub fn grid_update_and_prune(
    state: &PosteriorState,
    bundle: &DictionaryBundle,
    merge_radius: f64,
    floor: Option<f64>,
) -> Result<(PosteriorState, DictionaryBundle)> {
    let moved = bundle.regrid(bundle.grids.shifted(&state.delta_phi, &state.delta_theta)?);
    let power = state.aggregate_power();
    let mut order: Vec<usize> = (0..moved.n_cols()).collect();
    order.sort_by(|&a, &b| power[b].total_cmp(&power[a]).then(a.cmp(&b)));
    let (hp, ht) = (merge_radius * moved.grids.spacing_phi, merge_radius * moved.grids.spacing_theta);
    let mut kept: Vec<usize> = Vec::with_capacity(order.len());
    for r in order {
        let (p, t) = moved.pair_angles(r);
        let collapsed = kept.iter().any(|&s| {
            let (q, u) = moved.pair_angles(s);
            (p - q).abs() < hp && (t - u).abs() < ht
        });
        if !collapsed {
            kept.push(r);
        }
    }
    if let Some(floor) = floor {
        let peak = state.peak_magnitudes();
        kept.retain(|&r| peak[r] > floor);
    }
    kept.sort_unstable();
    if kept.is_empty() {
        return Err(Error::EmptyModel);
    }
    let mut st = state.clone();
    st.delta_phi.iter_mut().chain(st.delta_theta.iter_mut()).for_each(|d| *d = 0.0);
    if kept.len() == moved.n_cols() {
        return Ok((st, moved));
    }
    let pruned = moved.prune(&kept)?;
    let st = st.restrict(&kept, pruned.grids.n_phi(), pruned.grids.n_theta())?;
    Ok((st, pruned))
}

/// Magnitude a single coefficient needs to carry all of the observed energy
/// on a column of average norm.
pub fn coefficient_scale(bundle: &DictionaryBundle, obs: &WhitenedObservation) -> f64 {
    let energy: f64 = obs.y.iter().map(|y| y.norm_squared()).sum();
    let columns: f64 = (0..bundle.k())
        .map(|k| {
            let b = &bundle.bands[k];
            let bs: Vec<f64> = b.bs.column_iter().map(|c| c.norm_squared()).collect();
            let ms: Vec<f64> = b.ms.column_iter().map(|c| c.norm_squared()).collect();
            bundle.pairs.iter().map(|&(j, i)| bs[j] * ms[i]).sum::<f64>() / bundle.n_cols() as f64
        })
        .sum();
    if columns > 0.0 {
        (energy / columns).sqrt()
    } else {
        0.0
    }
}

fn stacked_mean_change(prev: &[CVector], cur: &[CVector]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in prev.iter().zip(cur) {
        num += (a - b).norm_squared();
        den += b.norm_squared();
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Run the estimator to convergence, then decouple delays/gains and rebuild
/// the channel on all `K_0` subcarriers.
pub fn run(
    obs: &WhitenedObservation,
    bundle: &DictionaryBundle,
    cfg: &SystemConfig,
    opts: &VemOptions,
) -> Result<EstimationResult> {
    if obs.k() != bundle.k() || cfg.k() != bundle.k() {
        return Err(crate::error::shape_err("band count", bundle.k(), obs.k()));
    }
    let signal_scale = coefficient_scale(bundle, obs);
    let mut bundle = bundle.clone();
    let mut st = init_state(&bundle, obs, opts)?;
    let mut diag = Diagnostics::default();
    let record = |diag: &mut Diagnostics, it: usize, stage: Stage, st: &PosteriorState, b: &DictionaryBundle| -> Result<()> {
        if opts.trace_steps {
            diag.steps.push(ElboStep {
                iteration: it,
                stage,
                elbo: elbo(st, b, obs)?,
            });
        }
        Ok(())
    };
    record(&mut diag, 0, Stage::Init, &st, &bundle)?;
    let mut prev_elbo = f64::NAN;
    for it in 1..=opts.max_iters {
        st.iteration = it;
        let prev_mean = st.mean.clone();
        e_step_x(&mut st, &bundle, obs, opts.jitter)?;
        record(&mut diag, it, Stage::PosteriorX, &st, &bundle)?;
        e_step_lambda(&mut st, opts.lambda_update);
        record(&mut diag, it, Stage::PosteriorLambda, &st, &bundle)?;
        e_step_xi(&mut st, &bundle, obs)?;
        record(&mut diag, it, Stage::PosteriorXi, &st, &bundle)?;
        let (dp, dt) = m_step(&st, &bundle, obs)?;
        st.delta_phi = dp;
        st.delta_theta = dt;
        let value = elbo(&st, &bundle, obs)?;
        if opts.trace_steps {
            diag.steps.push(ElboStep {
                iteration: it,
                stage: Stage::Offsets,
                elbo: value,
            });
        }
        diag.trace.push(TraceRow {
            iteration: it,
            elbo: value,
            surviving_columns: bundle.n_cols(),
            e_xi: st.e_xi(),
        });
        diag.iterations = it;
        diag.final_elbo = value;

        let mean_change = stacked_mean_change(&prev_mean, &st.mean);
        let elbo_change = ((value - prev_elbo) / value).abs();
        prev_elbo = value;

        let width = bundle.n_cols();
        let floor = (it >= opts.first_prune_iter).then(|| {
            opts.prune_threshold
                * match opts.prune_reference {
                    PruneReference::PeakCoefficient => st.peak_magnitudes().into_iter().fold(0.0, f64::max),
                    PruneReference::SignalScale => signal_scale,
                }
        });
        let (next_st, next_bundle) = grid_update_and_prune(&st, &bundle, opts.merge_radius, floor)?;
        st = next_st;
        bundle = next_bundle;
        record(&mut diag, it, Stage::AfterEvent, &st, &bundle)?;

        let stable = bundle.n_cols() == width && it >= opts.first_prune_iter;
        if stable && (mean_change < opts.mean_tol || elbo_change < opts.elbo_tol) {
            diag.converged = true;
            break;
        }
    }
    diag.surviving = bundle.n_cols();

    let freqs = cfg.training_freqs();
    let window = cfg.delay_window();
    let pairs = (0..bundle.n_cols())
        .map(|r| {
            let row: Vec<c64> = st.mean.iter().map(|m| m[r]).collect();
            let (gain, delay) = estimate_delay_gain(&row, &freqs, window, opts.delay_grid)?;
            let (aod, aoa) = bundle.pair_angles(r);
            Ok(EstimatedPair {
                aod,
                aoa,
                gain,
                delay,
                coefficients: row,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let paths: Vec<PathEstimate> = pairs.iter().map(EstimatedPair::as_path).collect();
    let channel = reconstruct_channel(&paths, cfg);
    Ok(EstimationResult {
        pairs,
        channel,
        diagnostics: diag,
    })
}
