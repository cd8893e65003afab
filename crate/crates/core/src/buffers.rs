//! The four observation stores the imitation loop trains from.
//!
//! Expert demonstrations (B_E), the imitator's own rollouts (B_pi) and the
//! two prior sets of random behaviour (B_P.E, B_P.pi) share one buffer type.
//! Only the agent buffer is mutable after load; it evicts the oldest whole
//! trajectories once over capacity so frame windows always stay well formed.
//! The domain label is derived from the buffer kind: 1 for data that
//! originated in the expert's domain, 0 for the agent's.

use crate::env::{ObsShape, Trajectory, Transition, RealmId, WINDOW};
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::VecDeque;
use std::str::FromStr;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BufferKind {
    Expert,
    Agent,
    PriorExpert,
    PriorAgent,
}

impl BufferKind {
    /// 1 iff the data lives in the expert's domain.
    pub fn domain_label(self) -> f64 {
        match self {
            BufferKind::Expert | BufferKind::PriorExpert => 1.0,
            BufferKind::Agent | BufferKind::PriorAgent => 0.0,
        }
    }

    pub fn is_mutable(self) -> bool {
        self == BufferKind::Agent
    }
}

/// A frame window paired with its buffer's domain label.
pub struct WindowSample<'a> {
    pub frames: [&'a [f32]; WINDOW],
    pub label: f64,
}

struct StoredTraj {
    traj: Trajectory,
    /// Pseudo-rewards refreshed by the orchestrator at episode boundaries.
    rewards: Vec<f64>,
}

pub struct TrajectoryBuffer {
    kind: BufferKind,
    capacity: usize,
    trajs: VecDeque<StoredTraj>,
    n_obs: usize,
    obs_shape: Option<ObsShape>,
    empty_push_warnings: usize,
}

impl TrajectoryBuffer {
    pub fn new(kind: BufferKind, capacity: usize) -> TrajectoryBuffer {
        TrajectoryBuffer {
            kind,
            capacity,
            trajs: VecDeque::new(),
            n_obs: 0,
            obs_shape: None,
            empty_push_warnings: 0,
        }
    }

    /// Fills a buffer with its initial contents. This is the only way data
    /// enters the immutable kinds. Exceeding capacity here is an error
    /// rather than silent truncation.
    pub fn load(
        kind: BufferKind,
        capacity: usize,
        trajectories: Vec<Trajectory>,
    ) -> Result<TrajectoryBuffer> {
        let mut buf = TrajectoryBuffer::new(kind, capacity);
        for t in trajectories {
            buf.insert(t)?;
        }
        if buf.n_obs > capacity {
            return Err(Error::contract(format!(
                "{:?} buffer loaded {} observations but capacity is {capacity}",
                kind, buf.n_obs
            )));
        }
        Ok(buf)
    }

    pub fn kind(&self) -> BufferKind {
        self.kind
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_trajectories(&self) -> usize {
        self.trajs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_obs == 0
    }

    pub fn empty_push_warnings(&self) -> usize {
        self.empty_push_warnings
    }

    fn insert(&mut self, traj: Trajectory) -> Result<()> {
        if traj.is_empty() {
            self.empty_push_warnings += 1;
            eprintln!("warning: ignoring empty trajectory pushed to {:?} buffer", self.kind);
            return Ok(());
        }
        let shape = traj.obs[0].shape;
        match self.obs_shape {
            None => self.obs_shape = Some(shape),
            Some(existing) if existing != shape => {
                return Err(Error::contract(format!(
                    "observation shape {shape:?} does not match buffer's {existing:?}"
                )));
            }
            _ => {}
        }
        self.n_obs += traj.len();
        let rewards = vec![0.0; traj.len()];
        self.trajs.push_back(StoredTraj { traj, rewards });
        Ok(())
    }

    /// Appends one trajectory, evicting the oldest whole trajectories until
    /// the observation count fits. Only the agent buffer accepts pushes.
    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        if !self.kind.is_mutable() {
            return Err(Error::contract(format!(
                "{:?} buffer is immutable after load",
                self.kind
            )));
        }
        self.insert(traj)?;
        while self.n_obs > self.capacity {
            let dropped = self.trajs.pop_front().expect("over capacity implies non-empty");
            self.n_obs -= dropped.traj.len();
        }
        Ok(())
    }

    fn locate(&self, flat: usize) -> (usize, usize) {
        let mut remaining = flat;
        for (i, s) in self.trajs.iter().enumerate() {
            if remaining < s.traj.len() {
                return (i, remaining);
            }
            remaining -= s.traj.len();
        }
        unreachable!("flat index out of range");
    }

    /// `n` uniform draws over every stored observation; each comes back as a
    /// padded 4-frame window with the buffer's domain label.
    pub fn sample_windows(&self, n: usize, rng: &mut ChaCha20Rng) -> Result<Vec<WindowSample<'_>>> {
        if self.is_empty() {
            return Err(Error::contract(format!(
                "cannot sample from empty {:?} buffer",
                self.kind
            )));
        }
        let label = self.kind.domain_label();
        Ok((0..n)
            .map(|_| {
                let (ti, t) = self.locate(rng.gen_range(0..self.n_obs));
                WindowSample {
                    frames: self.trajs[ti].traj.window(t),
                    label,
                }
            })
            .collect())
    }

    /// `n` uniform draws of full transitions (for the policy learner); the
    /// reward is whatever `set_step_rewards` last stored for that step.
    pub fn sample_transitions(&self, n: usize, rng: &mut ChaCha20Rng) -> Result<Vec<Transition<'_>>> {
        if self.is_empty() {
            return Err(Error::contract(format!(
                "cannot sample from empty {:?} buffer",
                self.kind
            )));
        }
        Ok((0..n)
            .map(|_| {
                let (ti, t) = self.locate(rng.gen_range(0..self.n_obs));
                let s = &self.trajs[ti];
                Transition {
                    state: &s.traj.states[t],
                    action: &s.traj.actions[t],
                    next_state: &s.traj.states[t + 1],
                    window: s.traj.window(t),
                    reward: s.rewards[t],
                }
            })
            .collect())
    }

    /// Every stored window in insertion order (used to refresh rewards and
    /// to run whole-buffer diagnostics).
    pub fn windows_all(&self) -> impl Iterator<Item = [&[f32]; WINDOW]> + '_ {
        self.trajs
            .iter()
            .flat_map(|s| (0..s.traj.len()).map(move |t| s.traj.window(t)))
    }

    /// Overwrites per-step rewards, one value per stored observation in the
    /// same order `windows_all` yields them.
    pub fn set_step_rewards(&mut self, rewards: &[f64]) -> Result<()> {
        if rewards.len() != self.n_obs {
            return Err(Error::contract(format!(
                "got {} rewards for {} stored observations",
                rewards.len(),
                self.n_obs
            )));
        }
        let mut it = rewards.iter();
        for s in &mut self.trajs {
            for r in &mut s.rewards {
                *r = *it.next().expect("length checked above");
            }
        }
        Ok(())
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajs.iter().map(|s| &s.traj)
    }
}

/// Observation capacities for the four buffers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferSizes {
    pub expert: usize,
    pub agent: usize,
    pub prior_expert: usize,
    pub prior_agent: usize,
}

/// Reference capacities from the original experiments, per task class.
pub mod reference {
    use super::BufferSizes;

    pub const PENDULUM_CLASS: BufferSizes = BufferSizes {
        expert: 10_000,
        agent: 10_000,
        prior_expert: 10_000,
        prior_agent: 10_000,
    };
    pub const PENDULUM_CLASS_HORIZON: usize = 50;

    pub const HOPPER_CLASS: BufferSizes = BufferSizes {
        expert: 10_000,
        agent: 100_000,
        prior_expert: 10_000,
        prior_agent: 10_000,
    };
    pub const HOPPER_CLASS_HORIZON: usize = 200;
}

pub const DEFAULT_SCALE_DIVISOR: usize = 10;

/// Reference capacities scaled down for desk-size runs. All shipped realms
/// are pendulum-class (short horizons, small buffers).
pub fn reference_sizes(realm: RealmId, scale_divisor: usize) -> Result<BufferSizes> {
    if scale_divisor == 0 {
        return Err(Error::config("buffer scale divisor must be positive".to_string()));
    }
    let base = match realm {
        RealmId::Binaryworld | RealmId::Pointreach | RealmId::Cartbalance => {
            reference::PENDULUM_CLASS
        }
    };
    Ok(BufferSizes {
        expert: base.expert / scale_divisor,
        agent: base.agent / scale_divisor,
        prior_expert: base.prior_expert / scale_divisor,
        prior_agent: base.prior_agent / scale_divisor,
    })
}

/// Default desk-scale capacities (1/10 of the reference table).
pub fn load_reference_sizes(realm: RealmId) -> BufferSizes {
    reference_sizes(realm, DEFAULT_SCALE_DIVISOR).expect("default divisor is valid")
}

/// String-typed front door for the CLI; unknown names are config errors.
pub fn load_reference_sizes_by_name(realm: &str) -> Result<BufferSizes> {
    Ok(load_reference_sizes(RealmId::from_str(realm)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{collect_random, make_env};
    use crate::rng::{stream, Stream};

    fn pointreach_trajs(n: usize, seed: u64) -> Vec<Trajectory> {
        let mut env = make_env(RealmId::Pointreach, 0, seed).unwrap();
        collect_random(&mut env, n * 50).unwrap().trajectories
    }

    #[test]
    fn agent_buffer_evicts_oldest_whole_trajectories() {
        let trajs = pointreach_trajs(3, 0);
        let second_start = trajs[1].states[0].clone();
        let mut buf = TrajectoryBuffer::new(BufferKind::Agent, 100);
        for t in trajs {
            buf.push(t).unwrap();
        }
        assert_eq!(buf.n_obs(), 100);
        assert_eq!(buf.n_trajectories(), 2);
        let first_kept = buf.trajectories().next().unwrap();
        assert_eq!(first_kept.states[0], second_start);
    }

    #[test]
    fn immutable_kinds_reject_push() {
        for kind in [BufferKind::Expert, BufferKind::PriorExpert, BufferKind::PriorAgent] {
            let mut buf = TrajectoryBuffer::new(kind, 1000);
            let err = buf.push(pointreach_trajs(1, 0).remove(0)).unwrap_err();
            assert!(matches!(err, Error::Contract(_)));
        }
    }

    #[test]
    fn empty_trajectory_push_is_a_warned_noop() {
        let mut buf = TrajectoryBuffer::new(BufferKind::Agent, 100);
        buf.push(Trajectory {
            states: vec![vec![0.0]],
            actions: vec![],
            obs: vec![],
            r_true: vec![],
        })
        .unwrap();
        assert!(buf.is_empty());
        assert_eq!(buf.empty_push_warnings(), 1);
    }

    #[test]
    fn sampled_windows_carry_the_kind_label() {
        let mut rng = stream(1, Stream::Sample);
        let (expert_set, agent_set) = crate::env::binaryworld_reference();
        let expert =
            TrajectoryBuffer::load(BufferKind::Expert, 100, expert_set.trajectories).unwrap();
        let prior_agent =
            TrajectoryBuffer::load(BufferKind::PriorAgent, 100, agent_set.trajectories).unwrap();
        let ws = expert.sample_windows(128, &mut rng).unwrap();
        assert_eq!(ws.len(), 128);
        assert!(ws.iter().all(|w| w.label == 1.0));
        assert!(prior_agent
            .sample_windows(64, &mut rng)
            .unwrap()
            .iter()
            .all(|w| w.label == 0.0));
    }

    #[test]
    fn short_trajectories_pad_to_four_frames() {
        let (expert_set, _) = crate::env::binaryworld_reference();
        let first_obs = expert_set.trajectories[0].obs[0].data.clone();
        let buf = TrajectoryBuffer::load(BufferKind::Expert, 100, expert_set.trajectories).unwrap();
        let mut rng = stream(2, Stream::Sample);
        for w in buf.sample_windows(256, &mut rng).unwrap() {
            assert_eq!(w.frames.len(), 4);
            // The oldest slot is always a real frame or the repeated first
            // frame; for 3-step episodes slot 3 is always the first frame.
            assert_eq!(w.frames[3].len(), first_obs.len());
        }
    }

    #[test]
    fn empty_buffer_sampling_is_an_error() {
        let buf = TrajectoryBuffer::new(BufferKind::Agent, 10);
        let mut rng = stream(3, Stream::Sample);
        assert!(buf.sample_windows(1, &mut rng).is_err());
        assert!(buf.sample_transitions(1, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_uniform_across_trajectories() {
        let trajs = pointreach_trajs(10, 7);
        let starts: Vec<Vec<f64>> = trajs.iter().map(|t| t.states[0].clone()).collect();
        let mut buf = TrajectoryBuffer::new(BufferKind::Agent, 10_000);
        for t in trajs {
            buf.push(t).unwrap();
        }
        let mut rng = stream(4, Stream::Sample);
        let mut counts = vec![0usize; 10];
        let n = 100_000;
        for tr in buf.sample_transitions(n, &mut rng).unwrap() {
            // Identify the trajectory by matching the episode's fixed target.
            let ti = starts
                .iter()
                .position(|s| s[2..4] == tr.state[2..4])
                .expect("every sample comes from a stored trajectory");
            counts[ti] += 1;
        }
        let p: f64 = 0.1;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let dev = (c as f64 - n as f64 * p).abs();
            assert!(dev <= 3.0 * sigma, "trajectory {i} drawn {c} times, dev {dev:.0}");
        }
    }

    #[test]
    fn rewards_round_trip_through_transitions() {
        let mut buf = TrajectoryBuffer::new(BufferKind::Agent, 1000);
        buf.push(pointreach_trajs(1, 5).remove(0)).unwrap();
        assert!(buf.set_step_rewards(&[1.0; 3]).is_err(), "length must match");
        let rewards: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        buf.set_step_rewards(&rewards).unwrap();
        let mut rng = stream(5, Stream::Sample);
        for tr in buf.sample_transitions(200, &mut rng).unwrap() {
            assert!(rewards.contains(&tr.reward));
            assert_eq!(tr.state.len(), 4);
            assert_eq!(tr.next_state.len(), 4);
            assert_eq!(tr.action.len(), 2);
        }
    }

    #[test]
    fn reference_capacities_match_the_table_and_scale() {
        assert_eq!(reference::PENDULUM_CLASS.expert, 10_000);
        assert_eq!(reference::PENDULUM_CLASS.agent, 10_000);
        assert_eq!(reference::PENDULUM_CLASS_HORIZON, 50);
        assert_eq!(reference::HOPPER_CLASS.agent, 100_000);
        assert_eq!(reference::HOPPER_CLASS_HORIZON, 200);

        let sizes = load_reference_sizes(RealmId::Pointreach);
        assert_eq!(
            sizes,
            BufferSizes {
                expert: 1000,
                agent: 1000,
                prior_expert: 1000,
                prior_agent: 1000
            }
        );
        assert!(load_reference_sizes_by_name("pointreach").is_ok());
        assert!(load_reference_sizes_by_name("lunarlander").is_err());
        assert!(reference_sizes(RealmId::Pointreach, 0).is_err());
    }

    #[test]
    fn load_over_capacity_is_rejected() {
        let trajs = pointreach_trajs(3, 0);
        assert!(TrajectoryBuffer::load(BufferKind::Expert, 100, trajs).is_err());
    }
}
