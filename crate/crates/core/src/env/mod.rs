//! Desk-scale task realms with paired domains.
//!
//! Each realm is one task implemented in several variants: a source domain
//! the demonstrations come from and shifted domains the imitator lives in.
//! Shifts change appearance (palette swaps, camera tilt), embodiment
//! (actuator geometry, pole physics), or both, while the task and its true
//! reward stay fixed. Observations are pixel grids in [0,1]; the true state
//! and reward travel alongside them for agent training and evaluation but
//! are never visible to the discriminator.
//!
//! Episodes run exactly `horizon` steps. A trajectory records the
//! post-step observation of every step, so a 50-step episode yields 50
//! observations and 50 stacked frame windows; windows pad by repeating the
//! trajectory's first observation and never span episode boundaries.

mod binaryworld;
mod cartbalance;
mod pointreach;
pub mod policies;
pub mod raster;

pub use pointreach::Embodiment;
pub use policies::{scripted_expert, uniform_policy, Policy, UniformPolicy};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Number of stacked frames fed to the discriminator per step.
pub const WINDOW: usize = 4;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RealmId {
    Binaryworld,
    Pointreach,
    Cartbalance,
}

impl RealmId {
    pub const ALL: [RealmId; 3] = [RealmId::Binaryworld, RealmId::Pointreach, RealmId::Cartbalance];
}

impl fmt::Display for RealmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RealmId::Binaryworld => "binaryworld",
            RealmId::Pointreach => "pointreach",
            RealmId::Cartbalance => "cartbalance",
        };
        f.write_str(s)
    }
}

impl FromStr for RealmId {
    type Err = Error;
    fn from_str(s: &str) -> Result<RealmId> {
        match s {
            "binaryworld" => Ok(RealmId::Binaryworld),
            "pointreach" => Ok(RealmId::Pointreach),
            "cartbalance" => Ok(RealmId::Cartbalance),
            other => Err(Error::config(format!(
                "unknown realm '{other}' (expected binaryworld, pointreach or cartbalance)"
            ))),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ObsShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl ObsShape {
    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One rendered frame; `data` is row-major H x W x C with values in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub shape: ObsShape,
    pub data: Vec<f32>,
}

/// Visual styling of a variant. Dynamics never read this.
#[derive(Clone, Debug, PartialEq)]
pub struct Appearance {
    pub palette: usize,
    pub tilt: f64,
}

#[derive(Clone, Debug)]
pub struct EnvVariant {
    pub name: String,
    pub appearance: Appearance,
    pub action_dim: usize,
}

/// Static description of a realm: shared task parameters plus its variants.
#[derive(Clone, Debug)]
pub struct EnvRealm {
    pub id: RealmId,
    pub horizon: usize,
    pub obs_shape: ObsShape,
    pub state_dim: usize,
    pub variants: Vec<EnvVariant>,
}

pub fn realm_info(id: RealmId) -> EnvRealm {
    match id {
        RealmId::Binaryworld => EnvRealm {
            id,
            horizon: binaryworld::HORIZON,
            obs_shape: binaryworld::obs_shape(),
            state_dim: binaryworld::STATE_DIM,
            variants: binaryworld::variants(),
        },
        RealmId::Pointreach => EnvRealm {
            id,
            horizon: pointreach::HORIZON,
            obs_shape: pointreach::obs_shape(),
            state_dim: pointreach::STATE_DIM,
            variants: pointreach::variants(),
        },
        RealmId::Cartbalance => EnvRealm {
            id,
            horizon: cartbalance::HORIZON,
            obs_shape: cartbalance::obs_shape(),
            state_dim: cartbalance::STATE_DIM,
            variants: cartbalance::variants(),
        },
    }
}

/// Result of advancing one step: the post-step frame, the true reward of the
/// post-step state, and whether the episode just finished.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub obs: Observation,
    pub r_true: f64,
    pub done: bool,
}

/// A live environment. Episode starts are drawn from the instance's own
/// stream, so a fixed `(realm, variant, seed)` triple reproduces a whole
/// collection run, not just the first episode.
#[derive(Debug)]
pub struct EnvInstance {
    realm: RealmId,
    variant: usize,
    seed: u64,
    appearance: Appearance,
    horizon: usize,
    state: Vec<f64>,
    t: usize,
    done: bool,
    rng: ChaCha20Rng,
}

pub fn make_env(realm: RealmId, variant: usize, seed: u64) -> Result<EnvInstance> {
    let info = realm_info(realm);
    let spec = info.variants.get(variant).ok_or_else(|| {
        Error::config(format!(
            "realm {realm} has {} variants, index {variant} does not exist",
            info.variants.len()
        ))
    })?;
    let mut rng = stream(seed, Stream::Env);
    let state = match realm {
        RealmId::Binaryworld => binaryworld::init_state(),
        RealmId::Pointreach => pointreach::init_state(&mut rng),
        RealmId::Cartbalance => cartbalance::init_state(&mut rng),
    };
    Ok(EnvInstance {
        realm,
        variant,
        seed,
        appearance: spec.appearance.clone(),
        horizon: info.horizon,
        state,
        t: 0,
        done: false,
        rng,
    })
}

impl EnvInstance {
    pub fn realm(&self) -> RealmId {
        self.realm
    }

    pub fn variant(&self) -> usize {
        self.variant
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn action_dim(&self) -> usize {
        match self.realm {
            RealmId::Binaryworld => binaryworld::ACTION_DIM,
            RealmId::Pointreach => pointreach::embodiment_of(self.variant).action_dim(),
            RealmId::Cartbalance => cartbalance::ACTION_DIM,
        }
    }

    /// Renders the current state without advancing time.
    pub fn observe(&self) -> Observation {
        match self.realm {
            RealmId::Binaryworld => binaryworld::render(&self.state, &self.appearance),
            RealmId::Pointreach => pointreach::render(
                &self.state,
                &self.appearance,
                pointreach::embodiment_of(self.variant),
            ),
            RealmId::Cartbalance => {
                cartbalance::render(&self.state, &self.appearance, cartbalance::pole_of(self.variant))
            }
        }
    }

    pub fn true_reward(&self) -> f64 {
        match self.realm {
            RealmId::Binaryworld => binaryworld::r_true(&self.state),
            RealmId::Pointreach => pointreach::r_true(&self.state),
            RealmId::Cartbalance => cartbalance::r_true(&self.state),
        }
    }

    /// Starts a fresh episode with a new initial state.
    pub fn reset(&mut self) {
        self.state = match self.realm {
            RealmId::Binaryworld => binaryworld::init_state(),
            RealmId::Pointreach => pointreach::init_state(&mut self.rng),
            RealmId::Cartbalance => cartbalance::init_state(&mut self.rng),
        };
        self.t = 0;
        self.done = false;
    }

    /// Advances one step. Episodes are fixed length: `done` flips on exactly
    /// at step `horizon` and stepping a finished episode is a usage error.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::contract(format!(
                "episode already ran its {} steps; call reset before stepping again",
                self.horizon
            )));
        }
        policies::check_action_width(self, action)?;
        self.state = match self.realm {
            RealmId::Binaryworld => binaryworld::dynamics(&self.state, action),
            RealmId::Pointreach => {
                pointreach::dynamics(&self.state, action, pointreach::embodiment_of(self.variant))
            }
            RealmId::Cartbalance => {
                cartbalance::dynamics(&self.state, action, cartbalance::pole_of(self.variant))
            }
        };
        self.t += 1;
        self.done = self.t == self.horizon;
        Ok(StepOutcome {
            obs: self.observe(),
            r_true: self.true_reward(),
            done: self.done,
        })
    }

    fn ensure_fresh(&mut self) {
        if self.t > 0 || self.done {
            self.reset();
        }
    }
}

/// One completed episode. `states` holds `horizon + 1` entries starting at
/// the initial state; `obs`, `actions` and `r_true` hold one entry per step.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub obs: Vec<Observation>,
    pub r_true: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.r_true.iter().sum()
    }

    /// Frame window ending at step `t`, newest first, padded by repeating
    /// the first observation. Never reaches outside this trajectory.
    pub fn window(&self, t: usize) -> [&[f32]; WINDOW] {
        assert!(t < self.obs.len(), "window index {t} out of range");
        let frame = |k: usize| -> &[f32] { &self.obs[t.saturating_sub(k)].data };
        [frame(0), frame(1), frame(2), frame(3)]
    }
}

/// A sampled step as the learners see it: the true state triple for the
/// policy, the stacked frame window for the discriminator, and a reward
/// channel the imitation loop fills with pseudo-rewards. True rewards are
/// deliberately absent here; they stay on the trajectory for evaluation.
pub struct Transition<'a> {
    pub state: &'a [f64],
    pub action: &'a [f64],
    pub next_state: &'a [f64],
    pub window: [&'a [f32]; WINDOW],
    pub reward: f64,
}

/// Homogeneous batch of episodes from one realm variant.
#[derive(Clone, Debug)]
pub struct TrajectorySet {
    pub realm: RealmId,
    pub variant: usize,
    pub obs_shape: ObsShape,
    pub horizon: usize,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn empty(realm: RealmId, variant: usize) -> TrajectorySet {
        let info = realm_info(realm);
        TrajectorySet {
            realm,
            variant,
            obs_shape: info.obs_shape,
            horizon: info.horizon,
            trajectories: Vec::new(),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    pub fn mean_return(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().map(|t| t.total_return()).sum::<f64>()
            / self.trajectories.len() as f64
    }

    pub fn extend(&mut self, other: TrajectorySet) -> Result<()> {
        if other.realm != self.realm || other.obs_shape != self.obs_shape {
            return Err(Error::contract(
                "cannot merge trajectory sets from different realms".to_string(),
            ));
        }
        self.trajectories.extend(other.trajectories);
        Ok(())
    }
}

/// Rolls out `n_episodes` full episodes under `policy`. The environment is
/// reset between episodes (and before the first one if it was already used).
pub fn collect_policy(
    env: &mut EnvInstance,
    policy: &dyn Policy,
    n_episodes: usize,
    policy_rng: &mut ChaCha20Rng,
) -> Result<TrajectorySet> {
    let mut set = TrajectorySet::empty(env.realm(), env.variant());
    for _ in 0..n_episodes {
        env.ensure_fresh();
        let mut traj = Trajectory {
            states: Vec::with_capacity(env.horizon() + 1),
            actions: Vec::with_capacity(env.horizon()),
            obs: Vec::with_capacity(env.horizon()),
            r_true: Vec::with_capacity(env.horizon()),
        };
        traj.states.push(env.state().to_vec());
        loop {
            let action = policy.act(env.state(), policy_rng);
            policies::check_action_width(env, &action)?;
            let out = env.step(&action)?;
            traj.actions.push(action);
            traj.obs.push(out.obs);
            traj.r_true.push(out.r_true);
            traj.states.push(env.state().to_vec());
            if out.done {
                break;
            }
        }
        set.trajectories.push(traj);
    }
    Ok(set)
}

/// Uniform-random rollouts totalling `n_steps` environment steps. The count
/// must be a whole number of episodes; zero steps is an empty collection.
pub fn collect_random(env: &mut EnvInstance, n_steps: usize) -> Result<TrajectorySet> {
    if n_steps % env.horizon() != 0 {
        return Err(Error::contract(format!(
            "{n_steps} steps is not a whole number of {}-step episodes",
            env.horizon()
        )));
    }
    let policy = uniform_policy(env);
    let mut rng = stream(env.seed(), Stream::Collect);
    collect_policy(env, &policy, n_steps / env.horizon(), &mut rng)
}

/// Canonical twelve-plus-twelve observation reference for the chain world,
/// built by replaying fixed action scripts. The expert set is four optimal
/// episodes in the expert domain; the agent set is four mediocre episodes in
/// the agent domain. Over the union, the domain bit x and the goal bit y are
/// partially coupled: p(x=1 | y=1) = 4/5 and p(x=1 | y=0) = 2/7.
pub fn binaryworld_reference() -> (TrajectorySet, TrajectorySet) {
    let optimal = vec![1.0];
    let expert_scripts = vec![vec![optimal.clone(); 3]; 4];
    let agent_scripts = vec![
        vec![vec![0.0], vec![0.0], vec![0.0]],
        vec![vec![1.0], vec![1.0], vec![-1.0]],
        vec![vec![1.0], vec![0.0], vec![1.0]],
        vec![vec![-1.0], vec![0.0], vec![0.0]],
    ];
    let replay = |variant: usize, scripts: &[Vec<Vec<f64>>]| -> TrajectorySet {
        let mut env = make_env(RealmId::Binaryworld, variant, 0)
            .expect("binaryworld variants are fixed");
        let mut set = TrajectorySet::empty(RealmId::Binaryworld, variant);
        for script in scripts {
            env.ensure_fresh();
            let mut traj = Trajectory {
                states: vec![env.state().to_vec()],
                actions: Vec::new(),
                obs: Vec::new(),
                r_true: Vec::new(),
            };
            for action in script {
                let out = env.step(action).expect("script length matches horizon");
                traj.actions.push(action.clone());
                traj.obs.push(out.obs);
                traj.r_true.push(out.r_true);
                traj.states.push(env.state().to_vec());
            }
            set.trajectories.push(traj);
        }
        set
    };
    (replay(0, &expert_scripts), replay(1, &agent_scripts))
}
