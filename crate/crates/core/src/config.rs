//! Experiment configuration: TOML files layered over per-system defaults.
//!
//! A file names its `system`; the built-in defaults for that system are
//! deep-merged under the file before strict deserialization, so a file only
//! needs the keys it changes. Unknown keys are errors.

use serde::{Deserialize, Serialize};

use crate::ddp::SolverOptions;
use crate::doc::{FdOptions, Route};
use crate::error::{Error, Result};
use crate::systems::{LayerParams, NoiseConfig, Scenario, SystemConfig, SystemKind, TaskConfig};
use crate::tube::{Algorithm, MpcOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    /// Defaults to the task length `steps`.
    pub horizon: Option<usize>,
    pub solver: SolverOptions,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            horizon: None,
            solver: SolverOptions {
                budget: 300,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Defaults to the MPC horizon.
    pub horizon: Option<usize>,
    /// Start state of the checked problem; defaults to the trial start.
    pub start: Option<Vec<f64>>,
    /// Use the safety-embedded model. Off by default for the arm, whose
    /// bare dynamics are linear.
    pub embed_barrier: bool,
    /// Relative tolerance of `doc_full` against finite differences.
    pub fd_rel_tol: f64,
    /// Relative tolerance of `doc_full` against the PDP route.
    pub pdp_rel_tol: f64,
    /// Relative tolerance of `doc_gauss_newton` against `doc_full` when the
    /// dynamics are linear.
    pub gn_rel_tol: f64,
    /// Iteration budgets of the Jacobian-error sweep; empty skips it.
    pub budgets: Vec<usize>,
    /// Reference solve used for every gradient check.
    pub solver: SolverOptions,
    pub fd: FdOptions,
    /// Test hook: corrupt one entry of the `doc_full` gradient.
    pub inject_fault: bool,
}

impl GradcheckConfig {
    fn defaults(system: SystemKind) -> Self {
        // The default Dubins start heads straight at the disc, and DDP then
        // creeps along a symmetric saddle for dozens of iterations.
        let start = (system == SystemKind::Dubins).then(|| vec![0.0, 0.0, 0.9]);
        GradcheckConfig {
            horizon: None,
            start,
            embed_barrier: system != SystemKind::RobotArm,
            fd_rel_tol: 1e-3,
            pdp_rel_tol: 1e-8,
            gn_rel_tol: 1e-6,
            budgets: vec![1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64],
            solver: FdOptions::default().solver,
            fd: FdOptions::default(),
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub reps: usize,
    pub routes: Vec<Route>,
    /// Defaults to the MPC horizon.
    pub horizon: Option<usize>,
    pub embed_barrier: bool,
    pub solver: SolverOptions,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            reps: 100,
            routes: Route::ALL.to_vec(),
            horizon: None,
            embed_barrier: true,
            solver: FdOptions::default().solver,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    pub algorithm: Algorithm,
    pub trials: usize,
    /// Base trial seed; trial `i` uses `seed + i`. Also seeds random
    /// obstacle fields.
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub task: TaskConfig,
    pub disturbance: NoiseConfig,
    pub nominal: LayerParams,
    pub ancillary: LayerParams,
    pub mpc: MpcOptions,
    pub solve: SolveConfig,
    pub gradcheck: GradcheckConfig,
    pub bench: BenchConfig,
}

/// Command-line overrides applied on top of a file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub system: Option<SystemKind>,
    pub algorithm: Option<Algorithm>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Line of the first `key = ...` or `[...key]` in `src`.
fn locate_key(src: &str, key: &str) -> Option<usize> {
    src.lines()
        .position(|l| {
            let l = l.trim_start();
            let bare = l
                .strip_prefix(key)
                .is_some_and(|r| r.trim_start().starts_with('='));
            let quoted = l
                .strip_prefix(&format!("\"{key}\""))
                .is_some_and(|r| r.trim_start().starts_with('='));
            let header = l.starts_with('[')
                && l.trim_end().trim_end_matches(']').rsplit(['.', '[']).next() == Some(key);
            bare || quoted || header
        })
        .map(|i| i + 1)
}

fn schema_error(src: &str, e: impl std::fmt::Display) -> Error {
    let msg = e.to_string().trim().to_string();
    let key = msg.split('`').nth(1);
    match key.and_then(|k| locate_key(src, k)) {
        Some(line) => Error::Config(format!("line {line}: {msg}")),
        None => Error::Config(msg),
    }
}

impl ExperimentConfig {
    pub fn defaults(system: SystemKind) -> Self {
        let s = SystemConfig::defaults(system);
        ExperimentConfig {
            system,
            algorithm: Algorithm::DtMpc,
            trials: 50,
            seed: 0,
            threads: 0,
            task: s.task,
            disturbance: s.disturbance,
            nominal: s.nominal,
            ancillary: s.ancillary,
            mpc: MpcOptions::default(),
            solve: SolveConfig::default(),
            gradcheck: GradcheckConfig::defaults(system),
            bench: BenchConfig::default(),
        }
    }

    /// Parse a TOML document over the defaults of its system.
    pub fn from_toml(src: &str, ov: &Overrides) -> Result<Self> {
        let table: toml::Table = src
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim().to_string()))?;
        let system = match (ov.system, table.get("system")) {
            (Some(s), _) => s,
            (None, Some(toml::Value::String(s))) => s.parse()?,
            (None, Some(v)) => {
                return Err(schema_error(
                    src,
                    format!("`system` must be a string, got {v}"),
                ))
            }
            (None, None) => SystemKind::Dubins,
        };
        let mut base = toml::Table::try_from(Self::defaults(system))
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, table);
        base.insert("system".into(), toml::Value::String(system.name().into()));
        let mut cfg: ExperimentConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| schema_error(src, e.message()))?;
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path, ov: &Overrides) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&src, ov).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Defaults for `ov.system` with the remaining overrides applied.
    pub fn from_overrides(ov: &Overrides) -> Result<Self> {
        let mut cfg = Self::defaults(ov.system.unwrap_or(SystemKind::Dubins));
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, ov: &Overrides) {
        if let Some(a) = ov.algorithm {
            self.algorithm = a;
        }
        if let Some(t) = ov.trials {
            self.trials = t;
        }
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(t) = ov.threads {
            self.threads = t;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.bench.reps < 10 {
            return Err(Error::Config("bench.reps must be >= 10".into()));
        }
        self.mpc.validate()?;
        if let Some(s) = &self.gradcheck.start {
            if s.len() != self.task.start.len() {
                return Err(Error::Config(format!(
                    "gradcheck.start has {} entries, expected {}",
                    s.len(),
                    self.task.start.len()
                )));
            }
        }
        self.scenario().map(|_| ())
    }

    pub fn system_config(&self) -> SystemConfig {
        SystemConfig {
            task: self.task.clone(),
            disturbance: self.disturbance.clone(),
            nominal: self.nominal.clone(),
            ancillary: self.ancillary.clone(),
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Scenario::build(self.system, &self.system_config(), self.seed)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_dubins_defaults() {
        let c = ExperimentConfig::from_toml("", &Overrides::default()).unwrap();
        assert_eq!(c, ExperimentConfig::defaults(SystemKind::Dubins));
    }

    #[test]
    fn nested_keys_merge_over_defaults() {
        let src = "system = \"quadrotor\"\n[task]\nsteps = 20\n[mpc]\neta = 0.5\n";
        let c = ExperimentConfig::from_toml(src, &Overrides::default()).unwrap();
        let d = ExperimentConfig::defaults(SystemKind::Quadrotor);
        assert_eq!(c.task.steps, 20);
        assert_eq!(c.task.horizon, d.task.horizon);
        assert_eq!(c.mpc.eta, 0.5);
        assert_eq!(c.mpc.momentum, d.mpc.momentum);
        assert_eq!(c.nominal, d.nominal);
    }

    #[test]
    fn round_trips_through_toml() {
        for k in SystemKind::ALL {
            let d = ExperimentConfig::defaults(k);
            let back = ExperimentConfig::from_toml(&d.to_toml(), &Overrides::default()).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let src = "trials = 3\n\n[task]\nsteps = 10\nstepz = 4\n";
        let e = ExperimentConfig::from_toml(src, &Overrides::default()).unwrap_err();
        let Error::Config(m) = e else { panic!() };
        assert!(m.starts_with("line 5:"), "{m}");
        assert!(m.contains("stepz"));
    }

    #[test]
    fn syntax_error_reports_its_line() {
        let e = ExperimentConfig::from_toml("trials = 3\nseed = = 4\n", &Overrides::default())
            .unwrap_err();
        let Error::Config(m) = e else { panic!() };
        assert!(m.contains("line 2"), "{m}");
    }

    #[test]
    fn overrides_win() {
        let ov = Overrides {
            system: Some(SystemKind::RobotArm),
            algorithm: Some(Algorithm::NtMpc),
            trials: Some(2),
            seed: Some(9),
            threads: Some(1),
        };
        let c = ExperimentConfig::from_toml("system = \"dubins\"\ntrials = 7\n", &ov).unwrap();
        assert_eq!(c.system, SystemKind::RobotArm);
        assert_eq!(
            (c.trials, c.seed, c.threads, c.algorithm),
            (2, 9, 1, Algorithm::NtMpc)
        );
        assert_eq!(
            c.task,
            ExperimentConfig::defaults(SystemKind::RobotArm).task
        );
    }

    #[test]
    fn invalid_values_are_rejected() {
        for src in [
            "trials = 0",
            "[ancillary]\nr = [0.0, 1.0]",
            "[mpc]\nroute = \"pdp\"",
            "system = \"boat\"",
            "[task]\nstart = [0.0]",
        ] {
            assert!(
                matches!(
                    ExperimentConfig::from_toml(src, &Overrides::default()),
                    Err(Error::Config(_))
                ),
                "{src}"
            );
        }
    }
}
