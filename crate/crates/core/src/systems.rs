//! Per-system task definitions and scenario builders.

use std::f64::consts::{FRAC_PI_4, PI};
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierKind, ParamRef};
use crate::cost::{Features, TrackingCost};
use crate::dynamics::arm::{ArmKinematics, RobotArm};
use crate::dynamics::disturbance::{mix_key, DisturbanceConfig};
use crate::dynamics::dubins::Dubins;
use crate::dynamics::quadrotor::Quadrotor;
use crate::dynamics::safety::{ArmSafety, Obstacle, ObstacleField, SafetyFunction};
use crate::dynamics::{ControlBounds, DynamicsModel, Vector};
use crate::error::{Error, Result};
use crate::problem::{InitialState, OCProblem};
use crate::tube::{ControllerParams, Goal, Layer, LossVariant, ParamKind, TubeSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Dubins,
    Quadrotor,
    RobotArm,
}

impl SystemKind {
    pub const ALL: [SystemKind; 3] = [
        SystemKind::Dubins,
        SystemKind::Quadrotor,
        SystemKind::RobotArm,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Dubins => "dubins",
            SystemKind::Quadrotor => "quadrotor",
            SystemKind::RobotArm => "robot_arm",
        }
    }
}

impl std::str::FromStr for SystemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "dubins" => Ok(SystemKind::Dubins),
            "quadrotor" | "quad" => Ok(SystemKind::Quadrotor),
            "robot_arm" | "arm" => Ok(SystemKind::RobotArm),
            _ => Err(Error::Config(format!("unknown system '{s}'"))),
        }
    }
}

/// Random ball obstacles, resampled while they come within `clearance` of
/// the start or the goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomObstacles {
    pub count: usize,
    pub center_lo: f64,
    pub center_hi: f64,
    pub radius_lo: f64,
    pub radius_hi: f64,
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub dt: f64,
    /// MPC horizon `N`.
    pub horizon: usize,
    /// Closed-loop steps `H`.
    pub steps: usize,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
    /// Plant start state. Ignored for the arm when `random_start` is set.
    pub start: Vec<f64>,
    pub random_start: bool,
    /// Smallest `h` accepted for a random start.
    pub start_margin: f64,
    /// Nominal cost target in feature space.
    pub target: Vec<f64>,
    /// Nominal control reference.
    pub u_ref: Vec<f64>,
    pub goal_radius: f64,
    pub barrier: BarrierKind,
    pub obstacles: Vec<Obstacle>,
    pub random_obstacles: Option<RandomObstacles>,
    /// Failure box on the position coordinates.
    pub position_box: Option<(f64, f64)>,
    pub ground: bool,
    pub loss: LossVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerParams {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub qf: Option<Vec<f64>>,
    pub q_b: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Blocks adapted online.
    pub adapt: Vec<ParamKind>,
}

impl LayerParams {
    pub fn to_params(&self) -> ControllerParams {
        ControllerParams::new(
            &self.q,
            &self.r,
            self.qf.as_deref(),
            self.q_b,
            self.gamma,
            self.alpha,
            &self.adapt,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Everything that defines a task on one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub task: TaskConfig,
    pub disturbance: NoiseConfig,
    pub nominal: LayerParams,
    pub ancillary: LayerParams,
}

fn blocks(parts: &[(usize, f64)]) -> Vec<f64> {
    parts
        .iter()
        .flat_map(|&(n, v)| std::iter::repeat_n(v, n))
        .collect()
}

fn ancillary_defaults(n: usize, m: usize, q_b: f64) -> LayerParams {
    LayerParams {
        q: vec![1.0; n],
        r: vec![1.0; m],
        qf: None,
        q_b,
        gamma: 0.0,
        alpha: 0.0,
        adapt: vec![ParamKind::Q, ParamKind::R, ParamKind::QB],
    }
}

impl SystemConfig {
    pub fn defaults(kind: SystemKind) -> Self {
        match kind {
            SystemKind::Dubins => SystemConfig {
                task: TaskConfig {
                    dt: 0.01,
                    horizon: 50,
                    steps: 300,
                    u_lower: vec![-10.0, -PI],
                    u_upper: vec![10.0, PI],
                    start: vec![0.0, 0.0, FRAC_PI_4],
                    random_start: false,
                    start_margin: 0.0,
                    target: vec![10.0, 10.0, FRAC_PI_4],
                    u_ref: vec![0.0, 0.0],
                    goal_radius: 0.25,
                    barrier: BarrierKind::RelaxedInverse,
                    obstacles: dubins_obstacles(),
                    random_obstacles: None,
                    position_box: None,
                    ground: false,
                    loss: LossVariant::FullState,
                },
                disturbance: NoiseConfig {
                    lo: vec![-0.05; 3],
                    hi: vec![0.05; 3],
                },
                nominal: LayerParams {
                    q: vec![1.0, 1.0, 0.0],
                    r: vec![1.0, 1.0],
                    qf: Some(vec![1000.0; 3]),
                    q_b: 1.0,
                    gamma: 0.0,
                    alpha: 0.0,
                    adapt: vec![],
                },
                ancillary: ancillary_defaults(3, 2, 1.0),
            },
            SystemKind::Quadrotor => {
                let hover = Quadrotor::default().hover_thrust();
                let mut target = vec![0.0; 12];
                target[..3].copy_from_slice(&[10.0, 10.0, 10.0]);
                SystemConfig {
                    task: TaskConfig {
                        dt: 0.02,
                        horizon: 50,
                        steps: 300,
                        u_lower: vec![0.0, -10.0, -10.0, -10.0],
                        u_upper: vec![50.0, 10.0, 10.0, 10.0],
                        start: vec![0.0; 12],
                        random_start: false,
                        start_margin: 0.0,
                        target,
                        u_ref: vec![hover, 0.0, 0.0, 0.0],
                        goal_radius: 0.5,
                        barrier: BarrierKind::RelaxedInverse,
                        obstacles: vec![Obstacle {
                            center: vec![5.0, 5.0, 5.0],
                            radius: 1.5,
                        }],
                        random_obstacles: Some(RandomObstacles {
                            count: 30,
                            center_lo: 0.0,
                            center_hi: 10.0,
                            radius_lo: 0.5,
                            radius_hi: 1.5,
                            clearance: 1.0,
                        }),
                        position_box: Some((-2.0, 12.0)),
                        ground: false,
                        loss: LossVariant::FullState,
                    },
                    disturbance: NoiseConfig {
                        lo: blocks(&[(6, -0.01), (6, -0.1)]),
                        hi: blocks(&[(6, 0.01), (6, 0.1)]),
                    },
                    nominal: LayerParams {
                        q: vec![1.0; 12],
                        r: vec![1.0; 4],
                        qf: Some(vec![1000.0; 12]),
                        q_b: 1.0,
                        gamma: 0.0,
                        alpha: 0.0,
                        adapt: vec![],
                    },
                    ancillary: ancillary_defaults(12, 4, 1.0),
                }
            }
            SystemKind::RobotArm => SystemConfig {
                task: TaskConfig {
                    dt: 0.02,
                    horizon: 50,
                    steps: 400,
                    u_lower: vec![-10.0; 6],
                    u_upper: vec![10.0; 6],
                    start: vec![0.0; 12],
                    random_start: true,
                    start_margin: 0.05,
                    target: vec![2.0, 0.0, 1.0],
                    u_ref: vec![0.0; 6],
                    goal_radius: 0.25,
                    barrier: BarrierKind::RelaxedInverse,
                    obstacles: [(1.0, 0.0), (1.0, 1.5), (1.0, -1.5), (2.0, -2.0), (2.0, 2.0)]
                        .iter()
                        .map(|&(x, y)| Obstacle {
                            center: vec![x, y],
                            radius: 0.5,
                        })
                        .collect(),
                    random_obstacles: None,
                    position_box: None,
                    ground: true,
                    loss: LossVariant::FullState,
                },
                disturbance: NoiseConfig {
                    lo: blocks(&[(6, -0.01), (6, -0.1)]),
                    hi: blocks(&[(6, 0.01), (6, 0.1)]),
                },
                nominal: LayerParams {
                    q: vec![100.0; 3],
                    r: vec![100.0; 6],
                    qf: Some(vec![1e4; 3]),
                    q_b: 1e-3,
                    gamma: 0.0,
                    alpha: 0.05,
                    adapt: vec![],
                },
                // With alpha = 0 the inverse barrier blows up on infeasible
                // warm-start tails near the links.
                ancillary: LayerParams {
                    alpha: 0.05,
                    ..ancillary_defaults(12, 6, 1e-3)
                },
            },
        }
    }
}

/// One disc straddling the straight line from the origin to `(10, 10)`, so
/// the planner has to commit to a side.
pub fn dubins_obstacles() -> Vec<Obstacle> {
    vec![Obstacle {
        center: vec![5.0, 5.0],
        radius: 1.5,
    }]
}

/// Sample the random part of an obstacle field. Balls that would cover
/// `keep_clear` points (within `clearance` of their surface) are redrawn.
pub fn random_obstacles(
    field: &RandomObstacles,
    keep_clear: &[Vec<f64>],
    dim: usize,
    seed: u64,
) -> Vec<Obstacle> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_key(&[seed, 0x0b57_ac1e]));
    let mut out = Vec::with_capacity(field.count);
    while out.len() < field.count {
        let center: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(field.center_lo..=field.center_hi))
            .collect();
        let radius = rng.random_range(field.radius_lo..=field.radius_hi);
        let blocked = keep_clear.iter().any(|p| {
            let d: f64 = p
                .iter()
                .zip(&center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d < radius + field.clearance
        });
        if !blocked {
            out.push(Obstacle { center, radius });
        }
    }
    out
}

/// Random arm configuration at rest with every constraint above `margin`.
pub fn random_arm_start(safety: &dyn SafetyFunction, margin: f64, seed: u64) -> Result<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_key(&[seed, 0xa2a5_7a27]));
    for _ in 0..100_000 {
        let mut x = Vector::zeros(12);
        for i in 0..6 {
            x[i] = rng.random_range(-PI..=PI);
        }
        if safety.h(&x) > margin {
            return Ok(x);
        }
    }
    Err(Error::Config("no feasible arm start found".into()))
}

/// A fully built task: plant, safety function, and the tube controller setup.
#[derive(Clone)]
pub struct Scenario {
    pub system: SystemKind,
    pub config: SystemConfig,
    pub setup: TubeSetup,
}

fn check_len(what: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Config(format!(
            "{what}: expected {n} entries, got {}",
            v.len()
        )));
    }
    Ok(())
}

impl Scenario {
    /// `seed` drives the random obstacle field only.
    pub fn build(system: SystemKind, config: &SystemConfig, seed: u64) -> Result<Self> {
        let t = &config.task;
        if !(t.dt > 0.0) || t.horizon == 0 || t.steps == 0 || !(t.goal_radius > 0.0) {
            return Err(Error::Config(
                "task needs dt > 0, horizon >= 1, steps >= 1, goal_radius > 0".into(),
            ));
        }
        let (plant, safety, nominal_features, goal): (
            Arc<dyn DynamicsModel>,
            Arc<dyn SafetyFunction>,
            Features,
            Goal,
        ) = match system {
            SystemKind::Dubins => {
                let plant = Arc::new(Dubins { dt: t.dt });
                let safety = Arc::new(ObstacleField::new(3, vec![0, 1], t.obstacles.clone()));
                let goal = Goal {
                    features: Features::Identity(2),
                    target: Vector::from_row_slice(&t.target[..2.min(t.target.len())]),
                    radius: t.goal_radius,
                };
                (plant, safety, Features::Identity(3), goal)
            }
            SystemKind::Quadrotor => {
                let plant = Arc::new(Quadrotor {
                    dt: t.dt,
                    ..Default::default()
                });
                let mut obstacles = t.obstacles.clone();
                if let Some(field) = &t.random_obstacles {
                    let clear = vec![
                        t.start[..3.min(t.start.len())].to_vec(),
                        t.target[..3.min(t.target.len())].to_vec(),
                    ];
                    obstacles.extend(random_obstacles(field, &clear, 3, seed));
                }
                let safety = Arc::new(ObstacleField::new(12, vec![0, 1, 2], obstacles));
                let goal = Goal {
                    features: Features::Identity(3),
                    target: Vector::from_row_slice(&t.target[..3.min(t.target.len())]),
                    radius: t.goal_radius,
                };
                (plant, safety, Features::Identity(12), goal)
            }
            SystemKind::RobotArm => {
                let plant = Arc::new(RobotArm { dt: t.dt });
                let safety = Arc::new(ArmSafety::new(t.obstacles.clone(), t.ground));
                let features = Features::ArmEndEffector(ArmKinematics::default());
                let goal = Goal {
                    features: features.clone(),
                    target: Vector::from_row_slice(&t.target),
                    radius: t.goal_radius,
                };
                (plant, safety, features, goal)
            }
        };
        let (n, m, ns) = (
            plant.state_dim(),
            plant.control_dim(),
            nominal_features.dim(),
        );
        check_len("task.start", &t.start, n)?;
        check_len("task.target", &t.target, ns)?;
        check_len("task.u_ref", &t.u_ref, m)?;
        check_len("nominal.q", &config.nominal.q, ns)?;
        check_len("nominal.r", &config.nominal.r, m)?;
        if let Some(qf) = &config.nominal.qf {
            check_len("nominal.qf", qf, ns)?;
        }
        check_len("ancillary.q", &config.ancillary.q, n)?;
        check_len("ancillary.r", &config.ancillary.r, m)?;
        if let Some(qf) = &config.ancillary.qf {
            check_len("ancillary.qf", qf, n)?;
        }
        if let LossVariant::PositionOnly(d) = &t.loss {
            if d.iter().any(|&i| i >= n) {
                return Err(Error::Config(format!(
                    "loss dims {d:?} out of range for {n} states"
                )));
            }
        }
        let bounds = ControlBounds::new(t.u_lower.clone(), t.u_upper.clone())?;
        if bounds.dim() != m {
            return Err(Error::Config(format!(
                "control bounds: expected {m} entries, got {}",
                bounds.dim()
            )));
        }
        let disturbance = DisturbanceConfig {
            lo: config.disturbance.lo.clone(),
            hi: config.disturbance.hi.clone(),
            seed: 0,
        };
        disturbance.validate()?;
        check_len("disturbance.lo", &disturbance.lo, n)?;

        let nominal_params = config.nominal.to_params();
        let ancillary_params = config.ancillary.to_params();
        for (name, p) in [
            ("nominal", &nominal_params),
            ("ancillary", &ancillary_params),
        ] {
            if !p.is_feasible() {
                return Err(Error::Config(format!(
                    "{name} parameters outside their bounds"
                )));
            }
        }
        let nominal = Layer::new(
            plant.clone(),
            safety.clone(),
            t.barrier,
            &nominal_params,
            nominal_features,
            t.horizon,
            Some(bounds.clone()),
        );
        let ancillary = Layer::new(
            plant.clone(),
            safety.clone(),
            t.barrier,
            &ancillary_params,
            Features::Identity(n),
            t.horizon,
            Some(bounds),
        );
        let position: Vec<usize> = match system {
            SystemKind::Dubins => vec![0, 1],
            _ => vec![0, 1, 2],
        };
        let setup = TubeSetup {
            plant,
            safety,
            nominal,
            ancillary,
            nominal_params,
            ancillary_params,
            nominal_target: Vector::from_row_slice(&t.target),
            nominal_u_ref: Vector::from_row_slice(&t.u_ref),
            disturbance,
            loss: t.loss.clone(),
            goal,
            state_box: t.position_box.map(|(lo, hi)| (position, lo, hi)),
            steps: t.steps,
        };
        Ok(Scenario {
            system,
            config: config.clone(),
            setup,
        })
    }

    pub fn task(&self) -> &TaskConfig {
        &self.config.task
    }

    /// Start state of a trial.
    pub fn initial_state(&self, trial_seed: u64) -> Result<Vector> {
        let t = self.task();
        if t.random_start {
            random_arm_start(&*self.setup.safety, t.start_margin, trial_seed)
        } else {
            Ok(Vector::from_row_slice(&t.start))
        }
    }

    /// The nominal trajectory-optimization problem from `x0` over `horizon`
    /// steps, with the nominal parameters as `theta`. With `embed = false`
    /// the bare plant is used and the barrier weight has no effect.
    pub fn nominal_problem(&self, x0: &Vector, horizon: usize, embed: bool) -> Result<OCProblem> {
        let s = &self.setup;
        let theta = s.nominal_params.theta.clone();
        let mut layout = s.nominal.layout;
        let targets = vec![s.nominal_target.clone(); horizon + 1];
        let u_refs = vec![s.nominal_u_ref.clone(); horizon];
        let (model, init, b_index): (Arc<dyn DynamicsModel>, Vector, Option<usize>) = if embed {
            (
                s.nominal.model.clone(),
                s.nominal.model.embed(x0, &theta)?,
                Some(s.plant.state_dim()),
            )
        } else {
            layout.q_b = ParamRef::Fixed(0.0);
            (s.plant.clone(), x0.clone(), None)
        };
        let cost = TrackingCost {
            features: s.nominal.features.clone(),
            n_u: s.plant.control_dim(),
            b_index,
            s_ref: targets,
            u_ref: u_refs,
            layout,
        };
        Ok(OCProblem {
            model,
            cost: Arc::new(cost),
            init: InitialState::Fixed(init),
            theta,
            horizon,
            bounds: s.nominal.bounds.clone(),
        })
    }

    /// Default control sequence for warm starts.
    pub fn default_controls(&self, horizon: usize) -> Vec<Vector> {
        vec![self.setup.nominal_u_ref.clone(); horizon]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_for_every_system() {
        for kind in SystemKind::ALL {
            let s = Scenario::build(kind, &SystemConfig::defaults(kind), 0).unwrap();
            let x0 = s.initial_state(3).unwrap();
            assert!(s.setup.safety.h(&x0) > 0.0, "{kind:?}");
            assert!(!s.setup.goal.reached(&x0));
            assert_eq!(s.setup.disturbance.dim(), s.setup.plant.state_dim());
        }
    }

    #[test]
    fn quadrotor_field_is_seeded() {
        let cfg = SystemConfig::defaults(SystemKind::Quadrotor);
        let a = Scenario::build(SystemKind::Quadrotor, &cfg, 1).unwrap();
        let b = Scenario::build(SystemKind::Quadrotor, &cfg, 1).unwrap();
        let c = Scenario::build(SystemKind::Quadrotor, &cfg, 2).unwrap();
        let x =
            Vector::from_row_slice(&[3.0, 7.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(a.setup.safety.values(&x), b.setup.safety.values(&x));
        assert_ne!(a.setup.safety.values(&x), c.setup.safety.values(&x));
        assert_eq!(a.setup.safety.n_constraints(), 31);
    }

    #[test]
    fn random_field_keeps_endpoints_clear() {
        let field = RandomObstacles {
            count: 200,
            center_lo: 0.0,
            center_hi: 10.0,
            radius_lo: 0.5,
            radius_hi: 1.5,
            clearance: 1.0,
        };
        let keep = vec![vec![0.0; 3], vec![10.0; 3]];
        for o in random_obstacles(&field, &keep, 3, 7) {
            for p in &keep {
                let d: f64 = p
                    .iter()
                    .zip(&o.center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= o.radius + 1.0);
            }
            assert!((0.5..=1.5).contains(&o.radius));
        }
    }

    #[test]
    fn arm_starts_are_feasible_and_seeded() {
        let s = Scenario::build(
            SystemKind::RobotArm,
            &SystemConfig::defaults(SystemKind::RobotArm),
            0,
        )
        .unwrap();
        for seed in 0..20 {
            let x = s.initial_state(seed).unwrap();
            assert!(s.setup.safety.h(&x) > 0.05);
            assert!(x.rows(6, 6).iter().all(|&v| v == 0.0));
            assert_eq!(x, s.initial_state(seed).unwrap());
        }
        assert_ne!(s.initial_state(0).unwrap(), s.initial_state(1).unwrap());
    }

    #[test]
    fn bad_lengths_are_config_errors() {
        let mut cfg = SystemConfig::defaults(SystemKind::Dubins);
        cfg.ancillary.q.pop();
        assert!(matches!(
            Scenario::build(SystemKind::Dubins, &cfg, 0),
            Err(Error::Config(_))
        ));
        let mut cfg = SystemConfig::defaults(SystemKind::Dubins);
        cfg.ancillary.r[0] = 0.0;
        assert!(matches!(
            Scenario::build(SystemKind::Dubins, &cfg, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn system_names_round_trip() {
        for k in SystemKind::ALL {
            assert_eq!(k.name().parse::<SystemKind>().unwrap(), k);
        }
        assert_eq!("arm".parse::<SystemKind>().unwrap(), SystemKind::RobotArm);
    }
}
