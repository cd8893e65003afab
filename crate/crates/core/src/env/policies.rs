//! Controllers used by collectors: a uniform-random baseline plus cheap
//! scripted experts for each realm. The learned policy implements the same
//! trait from its own module.

use super::pointreach::{self, Embodiment};
use super::{EnvInstance, RealmId};
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Maps the true state to an action. Implementations may be stochastic via
/// the supplied generator; scripted controllers simply ignore it.
pub trait Policy {
    fn act(&self, state: &[f64], rng: &mut ChaCha20Rng) -> Vec<f64>;
}

/// Uniform draws over [-1,1] per actuator.
pub struct UniformPolicy {
    pub action_dim: usize,
}

impl Policy for UniformPolicy {
    fn act(&self, _state: &[f64], rng: &mut ChaCha20Rng) -> Vec<f64> {
        (0..self.action_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

/// Always pushes toward the goal cell.
pub struct BinaryworldExpert;

impl Policy for BinaryworldExpert {
    fn act(&self, _state: &[f64], _rng: &mut ChaCha20Rng) -> Vec<f64> {
        vec![1.0]
    }
}

/// Proportional controller toward the target, mapped through the variant's
/// actuator geometry.
pub struct PointreachExpert {
    pub embodiment: Embodiment,
}

impl Policy for PointreachExpert {
    fn act(&self, state: &[f64], _rng: &mut ChaCha20Rng) -> Vec<f64> {
        let dx = state[2] - state[0];
        let dy = state[3] - state[1];
        let norm = (dx * dx + dy * dy).sqrt();
        let v = if norm < 1e-9 {
            [0.0, 0.0]
        } else {
            // Full speed far away, proportional braking near the target.
            let speed = (norm / 0.15).min(1.0);
            [speed * dx / norm, speed * dy / norm]
        };
        self.embodiment
            .actuate(v)
            .into_iter()
            .map(|a| a.clamp(-1.0, 1.0))
            .collect()
    }
}

/// Hand-tuned PD balance controller; also recentres the cart slowly.
pub struct CartbalanceExpert;

impl Policy for CartbalanceExpert {
    fn act(&self, state: &[f64], _rng: &mut ChaCha20Rng) -> Vec<f64> {
        let a = 12.0 * state[2] + 2.5 * state[3] + 0.4 * state[0] + 0.9 * state[1];
        vec![a.clamp(-1.0, 1.0)]
    }
}

/// Scripted expert for a realm, used by tests and the data-collection CLI as
/// an alternative to a learned expert.
pub fn scripted_expert(env: &EnvInstance) -> Result<Box<dyn Policy>> {
    match env.realm() {
        RealmId::Binaryworld => Ok(Box::new(BinaryworldExpert)),
        RealmId::Pointreach => Ok(Box::new(PointreachExpert {
            embodiment: pointreach::embodiment_of(env.variant()),
        })),
        RealmId::Cartbalance => Ok(Box::new(CartbalanceExpert)),
    }
}

/// Uniform-random policy sized for the instance's actuators.
pub fn uniform_policy(env: &EnvInstance) -> UniformPolicy {
    UniformPolicy {
        action_dim: env.action_dim(),
    }
}

#[allow(dead_code)]
fn _assert_object_safe(p: &dyn Policy) -> &dyn Policy {
    p
}

impl Policy for Box<dyn Policy> {
    fn act(&self, state: &[f64], rng: &mut ChaCha20Rng) -> Vec<f64> {
        self.as_ref().act(state, rng)
    }
}

/// Guard for collectors: a policy's action width must match the actuators.
pub fn check_action_width(env: &EnvInstance, action: &[f64]) -> Result<()> {
    if action.len() != env.action_dim() {
        return Err(Error::contract(format!(
            "policy produced {} action values but {:?} variant {} has {} actuators",
            action.len(),
            env.realm(),
            env.variant(),
            env.action_dim()
        )));
    }
    Ok(())
}
