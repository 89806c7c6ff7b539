use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{uniform_training, FreqConvention, SystemConfig};
use crate::error::{Error, Result};
use crate::frontend::BeamformerMode;
use crate::vem::{PruneReference, VemOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::InvalidConfig {
                field: "preset".into(),
                reason: format!("unknown preset `{other}` (expected desk or paper)"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// The four fixed angle pairs with fixed magnitudes.
    #[default]
    FixedPaths,
    /// `L` paths with uniform angles and `CN(0, 1)` gains.
    RandomPaths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// The multi-band variational EM estimator.
    Vem,
    OmpAngular,
    OmpOffgrid,
    OmpAngularDelay,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Vem => "vem",
            Method::OmpAngular => "omp-angular",
            Method::OmpOffgrid => "omp-offgrid",
            Method::OmpAngularDelay => "omp-angular-delay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVariable {
    #[serde(rename = "snr")]
    Snr,
    K,
    P,
    #[serde(rename = "Ns")]
    Ns,
    #[serde(rename = "fc")]
    Fc,
    #[serde(rename = "fs")]
    Fs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// Angle grid sizes `[N_φ, N_θ]` per method, plus `[N_φ, N_θ, N_τ]` for the
/// angular-delay dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    pub vem: [usize; 2],
    pub omp: [usize; 2],
    pub angular_delay: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmpSettings {
    pub l_max: usize,
    /// Stop once the residual falls to the expected noise norm.
    pub noise_floor_stop: bool,
    pub offgrid_iters: usize,
    pub memory_budget_mb: u64,
}

/// Overrides applied on top of [`VemOptions::default`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VemSettings {
    pub max_iters: Option<usize>,
    pub prune_threshold: Option<f64>,
    pub prune_reference: Option<PruneReference>,
    pub merge_radius: Option<f64>,
    pub init_atoms: Option<usize>,
    pub delay_grid: Option<usize>,
}

impl VemSettings {
    pub fn options(&self) -> VemOptions {
        let mut o = VemOptions::default();
        if let Some(v) = self.max_iters {
            o.max_iters = v;
        }
        if let Some(v) = self.prune_threshold {
            o.prune_threshold = v;
        }
        if let Some(v) = self.prune_reference {
            o.prune_reference = v;
        }
        if let Some(v) = self.merge_radius {
            o.merge_radius = v;
        }
        if let Some(v) = self.init_atoms {
            o.init_atoms = v;
        }
        if let Some(v) = self.delay_grid {
            o.delay_grid = v;
        }
        o
    }
}

/// System fields that a config file may override individually.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemOverrides {
    pub n_tx: Option<usize>,
    pub n_rx: Option<usize>,
    pub k0: Option<usize>,
    /// Number of uniformly spaced training subcarriers.
    pub k: Option<usize>,
    pub training_indices: Option<Vec<usize>>,
    pub p: Option<usize>,
    pub n_s: Option<usize>,
    pub f_c: Option<f64>,
    pub f_s: Option<f64>,
    pub freq_convention: Option<FreqConvention>,
}

/// The config file as written; every key is optional and falls back to the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub preset: Option<Preset>,
    pub system: Option<SystemOverrides>,
    pub scenario: Option<Scenario>,
    pub paths: Option<usize>,
    pub beamformer: Option<BeamformerMode>,
    pub methods: Option<Vec<Method>>,
    pub grids: Option<Grids>,
    pub snr_db: Option<f64>,
    pub sweep: Option<Sweep>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Path delays are drawn from `[0, max_delay_fraction · 1/Δf)`.
    pub max_delay_fraction: Option<f64>,
    pub omp: Option<OmpSettings>,
    pub vem: Option<VemSettings>,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub scenario: Scenario,
    pub paths: usize,
    pub beamformer: BeamformerMode,
    pub methods: Vec<Method>,
    pub grids: Grids,
    /// SNR used when the sweep variable is not `snr`.
    pub snr_db: f64,
    pub sweep: Sweep,
    pub trials: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub max_delay_fraction: f64,
    pub omp: OmpSettings,
    pub vem: VemSettings,
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let (system, grids, trials) = match p {
            Preset::Desk => (
                SystemConfig::desk(),
                Grids {
                    vem: [16, 8],
                    omp: [32, 32],
                    angular_delay: [16, 16, 32],
                },
                20,
            ),
            Preset::Paper => (
                SystemConfig::paper(),
                Grids {
                    vem: [128, 128],
                    omp: [128, 128],
                    angular_delay: [64, 64, 50],
                },
                100,
            ),
        };
        Self {
            system,
            scenario: Scenario::FixedPaths,
            paths: 4,
            beamformer: BeamformerMode::IdentityTruncated,
            methods: vec![Method::Vem, Method::OmpAngular],
            grids,
            snr_db: 10.0,
            sweep: Sweep {
                variable: SweepVariable::Snr,
                values: vec![-5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
            },
            trials,
            seed: 1,
            out_dir: PathBuf::from("results"),
            max_delay_fraction: 0.5,
            omp: OmpSettings {
                l_max: 8,
                noise_floor_stop: true,
                offgrid_iters: 10,
                memory_budget_mb: 2048,
            },
            vem: VemSettings::default(),
        }
    }

    /// Resolve a raw config against a preset. `preset_override` wins over the
    /// file's own `preset` key.
    pub fn resolve(raw: RawConfig, preset_override: Option<Preset>) -> Result<Self> {
        let mut c = Self::preset(preset_override.or(raw.preset).unwrap_or_default());
        if let Some(s) = raw.system {
            let sys = &mut c.system;
            if let Some(v) = s.k0 {
                sys.k0 = v;
                sys.training_indices = uniform_training(v, sys.k());
            }
            macro_rules! set {
                ($($f:ident),*) => { $(if let Some(v) = s.$f { sys.$f = v; })* };
            }
            set!(n_tx, n_rx, p, n_s, f_c, f_s, freq_convention);
            if let Some(k) = s.k {
                sys.training_indices = uniform_training(sys.k0, k);
            }
            if let Some(t) = s.training_indices {
                if s.k.is_some() {
                    return invalid("system.training_indices", "give either `k` or `training_indices`, not both");
                }
                sys.training_indices = t;
            }
        }
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = raw.$f { c.$f = v; })* };
        }
        take!(scenario, paths, beamformer, methods, grids, snr_db, sweep, trials, seed, out_dir, max_delay_fraction, omp, vem);
        c.validate()?;
        Ok(c)
    }

    pub fn from_toml_str(text: &str, preset_override: Option<Preset>) -> Result<Self> {
        Self::resolve(toml::from_str(text)?, preset_override)
    }

    pub fn load(path: impl AsRef<FsPath>, preset_override: Option<Preset>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?, preset_override)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.trials == 0 {
            return invalid("trials", "must be at least 1");
        }
        if self.paths == 0 {
            return invalid("paths", "must be at least 1");
        }
        if self.scenario == Scenario::FixedPaths && self.paths != 4 {
            return invalid("paths", "the fixed-paths scenario has exactly 4 paths");
        }
        if self.methods.is_empty() {
            return invalid("methods", "must list at least one method");
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return invalid("methods", "contains duplicates");
        }
        if self.grids.vem.contains(&0) || self.grids.omp.contains(&0) || self.grids.angular_delay.contains(&0) {
            return invalid("grids", "grid sizes must be at least 1");
        }
        if !(self.max_delay_fraction > 0.0 && self.max_delay_fraction <= 1.0) {
            return invalid("max_delay_fraction", "must lie in (0, 1]");
        }
        if !self.snr_db.is_finite() {
            return invalid("snr_db", "must be finite");
        }
        if self.omp.l_max == 0 {
            return invalid("omp.l_max", "must be at least 1");
        }
        if self.omp.offgrid_iters == 0 {
            return invalid("omp.offgrid_iters", "must be at least 1");
        }
        let o = self.vem.options();
        if o.max_iters == 0 {
            return invalid("vem.max_iters", "must be at least 1");
        }
        if !(o.prune_threshold >= 0.0 && o.prune_threshold < 1.0) {
            return invalid("vem.prune_threshold", "must lie in [0, 1)");
        }
        if !(o.merge_radius >= 0.0) {
            return invalid("vem.merge_radius", "must be non-negative");
        }
        if o.delay_grid == 0 {
            return invalid("vem.delay_grid", "must be at least 1");
        }
        if self.sweep.values.is_empty() {
            return invalid("sweep.values", "must not be empty");
        }
        for (i, &v) in self.sweep.values.iter().enumerate() {
            let (sys, _) = self.point(v).map_err(|e| match e {
                Error::InvalidConfig { field, reason } => Error::InvalidConfig {
                    field: format!("sweep.values[{i}] ({field})"),
                    reason,
                },
                other => other,
            })?;
            if sys.n_s > sys.n_tx.min(sys.n_rx) {
                return invalid(&format!("sweep.values[{i}]"), "n_s exceeds min(n_tx, n_rx)");
            }
        }
        Ok(())
    }

    /// System configuration and SNR at one sweep value.
    pub fn point(&self, value: f64) -> Result<(SystemConfig, f64)> {
        let mut sys = self.system.clone();
        let mut snr = self.snr_db;
        let count = |name: &str| -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidConfig {
                    field: name.into(),
                    reason: format!("{value} is not a positive integer"),
                })
            }
        };
        match self.sweep.variable {
            SweepVariable::Snr => {
                if !value.is_finite() {
                    return invalid("snr", "must be finite");
                }
                snr = value;
            }
            SweepVariable::K => sys.training_indices = uniform_training(sys.k0, count("K")?),
            SweepVariable::P => sys.p = count("P")?,
            SweepVariable::Ns => sys.n_s = count("Ns")?,
            SweepVariable::Fc => sys.f_c = value,
            SweepVariable::Fs => sys.f_s = value,
        }
        if sys.k() > sys.k0 {
            return invalid("K", "exceeds k0");
        }
        sys.validate()?;
        Ok((sys, snr))
    }
}

fn invalid<T>(field: &str, reason: &str) -> Result<T> {
    Err(Error::InvalidConfig {
        field: field.to_string(),
        reason: reason.to_string(),
    })
}
