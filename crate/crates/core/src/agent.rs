//! Off-policy entropy-regularized actor-critic on discriminator rewards.
//!
//! The policy conditions on the true low-dimensional state while its rewards
//! come from observation windows scored by the discriminator, so the learner
//! never touches pixels and never sees the evaluation reward. Actions are
//! squashed Gaussians over `[-1, 1]` per actuator. Episodes have no terminal
//! states (fixed horizons), so critic targets always bootstrap.
//!
//! The entropy bonus uses the standard log-probability form. One update is
//! one critic step on both Q networks (shared target), one actor step, and
//! one polyak move of the target networks.

use crate::env::{EnvInstance, Policy};
use crate::error::{Error, Result};
use crate::nets::{Activation, Adam, Mat, Mlp, OutputInit};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Clamp range for the policy head's log standard deviation.
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
pub struct AgentConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Width of the two hidden layers in the policy and critics.
    pub hidden: usize,
    pub lr: f64,
    /// Entropy temperature (fixed; no automatic tuning).
    pub temperature: f64,
    pub discount: f64,
    /// Target networks move as `t = polyak * t + (1 - polyak) * online`.
    pub polyak: f64,
}

impl AgentConfig {
    pub fn new(state_dim: usize, action_dim: usize) -> AgentConfig {
        AgentConfig {
            state_dim,
            action_dim,
            hidden: 64,
            lr: 1e-3,
            temperature: 0.2,
            discount: 0.99,
            polyak: 0.995,
        }
    }
}

/// One transition as the learner consumes it: true states on both ends and a
/// pseudo-reward freshly computed by the caller from the current
/// discriminator. The evaluation reward never appears here.
pub struct AgentBatch<'a> {
    pub states: Vec<&'a [f64]>,
    pub actions: Vec<&'a [f64]>,
    pub next_states: Vec<&'a [f64]>,
    pub rewards: Vec<f64>,
}

impl AgentBatch<'_> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Scalar summaries of one update step.
#[derive(Debug, Clone, Copy)]
pub struct AgentLosses {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub actor_loss: f64,
    pub mean_q: f64,
    pub mean_log_prob: f64,
}

pub struct ActorCritic {
    pub cfg: AgentConfig,
    policy: Mlp,
    q1: Mlp,
    q2: Mlp,
    target1: Mlp,
    target2: Mlp,
    opt_policy: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
}

/// Gaussian parameters plus a sampled squashed action for a state batch.
struct ActionSample {
    /// Squashed actions `tanh(mean + std * eps)`.
    a: Mat,
    std: Mat,
    eps: Mat,
    log_prob: Vec<f64>,
}

impl ActorCritic {
    pub fn new(cfg: AgentConfig, rng: &mut ChaCha20Rng) -> Result<ActorCritic> {
        if cfg.state_dim == 0 || cfg.action_dim == 0 {
            return Err(Error::config("agent needs positive state/action dims"));
        }
        let pi_dims = [cfg.state_dim, cfg.hidden, cfg.hidden, 2 * cfg.action_dim];
        let q_dims = [
            cfg.state_dim + cfg.action_dim,
            cfg.hidden,
            cfg.hidden,
            1,
        ];
        let policy = Mlp::new(
            &pi_dims,
            Activation::Relu,
            Activation::Identity,
            OutputInit::FanIn,
            rng,
        )?;
        let q1 = Mlp::new(
            &q_dims,
            Activation::Relu,
            Activation::Identity,
            OutputInit::FanIn,
            rng,
        )?;
        let q2 = Mlp::new(
            &q_dims,
            Activation::Relu,
            Activation::Identity,
            OutputInit::FanIn,
            rng,
        )?;
        let target1 = q1.clone();
        let target2 = q2.clone();
        let opt_policy = Adam::new(cfg.lr, policy.num_params());
        let opt_q1 = Adam::new(cfg.lr, q1.num_params());
        let opt_q2 = Adam::new(cfg.lr, q2.num_params());
        Ok(ActorCritic {
            cfg,
            policy,
            q1,
            q2,
            target1,
            target2,
            opt_policy,
            opt_q1,
            opt_q2,
        })
    }

    pub fn policy_net(&self) -> &Mlp {
        &self.policy
    }

    pub fn q_nets(&self) -> (&Mlp, &Mlp) {
        (&self.q1, &self.q2)
    }

    pub fn target_nets(&self) -> (&Mlp, &Mlp) {
        (&self.target1, &self.target2)
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.cfg.state_dim {
            return Err(Error::contract(format!(
                "state dimension {} does not match the realm's {}",
                state.len(),
                self.cfg.state_dim
            )));
        }
        Ok(())
    }

    /// Squashed-Gaussian action for one state. The deterministic mode
    /// squashes the mean and ignores the generator.
    pub fn act(
        &self,
        state: &[f64],
        deterministic: bool,
        rng: &mut ChaCha20Rng,
    ) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let out = self.policy.forward_single(state)?;
        let m = self.cfg.action_dim;
        let mut action = Vec::with_capacity(m);
        for i in 0..m {
            let mean = out[i];
            if deterministic {
                action.push(mean.tanh());
            } else {
                let log_std = out[m + i].clamp(LOG_STD_MIN, LOG_STD_MAX);
                let eps: f64 = rng.sample(StandardNormal);
                action.push((mean + log_std.exp() * eps).tanh());
            }
        }
        Ok(action)
    }

    /// One stochastic action with its log-probability under the squashed
    /// Gaussian (Monte-Carlo entropy estimates average the negation).
    pub fn act_with_log_prob(
        &self,
        state: &[f64],
        rng: &mut ChaCha20Rng,
    ) -> Result<(Vec<f64>, f64)> {
        self.check_state(state)?;
        let states = [state];
        let sample = self.sample_actions(&states, rng)?;
        Ok((sample.a.row(0).to_vec(), sample.log_prob[0]))
    }

    /// Reparameterized draws for a state batch with everything the backward
    /// pass needs kept around.
    fn sample_actions(&self, states: &[&[f64]], rng: &mut ChaCha20Rng) -> Result<ActionSample> {
        let n = states.len();
        let m = self.cfg.action_dim;
        let x = rows_to_mat(states, self.cfg.state_dim)?;
        let trace = self.policy.forward(&x)?;
        let out = trace.output();
        let mut a = Mat::zeros(n, m);
        let mut std = Mat::zeros(n, m);
        let mut eps = Mat::zeros(n, m);
        let mut log_prob = vec![0.0; n];
        const HALF_LOG_TAU: f64 = 0.918_938_533_204_672_7; // 0.5 * ln(2 pi)
        for b in 0..n {
            let row = out.row(b);
            for i in 0..m {
                let mean = row[i];
                let log_std = row[m + i].clamp(LOG_STD_MIN, LOG_STD_MAX);
                let s = log_std.exp();
                let e: f64 = rng.sample(StandardNormal);
                let ui = mean + s * e;
                let ai = ui.tanh();
                a.row_mut(b)[i] = ai;
                std.row_mut(b)[i] = s;
                eps.row_mut(b)[i] = e;
                // Gaussian density of u plus the tanh change of variables:
                // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u)).
                log_prob[b] += -0.5 * e * e - log_std - HALF_LOG_TAU;
                log_prob[b] -= 2.0 * (std::f64::consts::LN_2 - ui - crate::nets::softplus(-2.0 * ui));
            }
        }
        Ok(ActionSample {
            a,
            std,
            eps,
            log_prob,
        })
    }

    /// Critic values for explicit state/action rows through an arbitrary Q
    /// net (online or target).
    fn q_values(net: &Mlp, states: &[&[f64]], actions: &Mat) -> Result<Vec<f64>> {
        let x = concat_state_action(states, actions);
        let trace = net.forward(&x)?;
        Ok((0..x.rows()).map(|b| trace.output().row(b)[0]).collect())
    }

    /// One full update: twin-critic regression to the entropy-regularized
    /// bootstrap target, one actor step against the pessimistic critic, one
    /// polyak move of the targets.
    pub fn agent_update(
        &mut self,
        batch: &AgentBatch,
        rng: &mut ChaCha20Rng,
    ) -> Result<AgentLosses> {
        let n = batch.len();
        if n < 2 {
            return Err(Error::contract(format!(
                "agent update needs at least 2 transitions, got {n}"
            )));
        }
        if batch.actions.len() != n || batch.next_states.len() != n || batch.rewards.len() != n {
            return Err(Error::contract("agent batch fields must share one length"));
        }
        for s in batch.states.iter().chain(batch.next_states.iter()) {
            self.check_state(s)?;
        }
        let m = self.cfg.action_dim;

        // Bootstrap target from the target critics and a fresh next action.
        // Fixed horizons mean there is no terminal masking.
        let next = self.sample_actions(&batch.next_states, rng)?;
        let t1 = Self::q_values(&self.target1, &batch.next_states, &next.a)?;
        let t2 = Self::q_values(&self.target2, &batch.next_states, &next.a)?;
        let targets: Vec<f64> = (0..n)
            .map(|b| {
                let v = t1[b].min(t2[b]) - self.cfg.temperature * next.log_prob[b];
                batch.rewards[b] + self.cfg.discount * v
            })
            .collect();

        let actions = rows_to_mat(&batch.actions, m)?;
        let x_sa = concat_state_action(&batch.states, &actions);
        let mut q_losses = [0.0; 2];
        for (k, (net, opt)) in [
            (&mut self.q1, &mut self.opt_q1),
            (&mut self.q2, &mut self.opt_q2),
        ]
        .into_iter()
        .enumerate()
        {
            let trace = net.forward(&x_sa)?;
            let mut d_out = Mat::zeros(n, 1);
            let mut loss = 0.0;
            for b in 0..n {
                let diff = trace.output().row(b)[0] - targets[b];
                loss += diff * diff;
                d_out.row_mut(b)[0] = 2.0 * diff / n as f64;
            }
            q_losses[k] = loss / n as f64;
            let mut grads = vec![0.0; net.num_params()];
            net.backward(&trace, d_out, Some(&mut grads), false);
            opt.step(net.params_mut(), &grads);
        }

        // Actor: minimize temperature * log pi - min(Q1, Q2) over fresh
        // reparameterized actions. The Q gradient reaches the policy through
        // the critics' action-input gradients.
        let fresh = self.sample_actions(&batch.states, rng)?;
        let x_pi = concat_state_action(&batch.states, &fresh.a);
        let tr1 = self.q1.forward(&x_pi)?;
        let tr2 = self.q2.forward(&x_pi)?;
        let mut pick = vec![0usize; n];
        let mut actor_loss = 0.0;
        let mut mean_q = 0.0;
        let mut mean_log_prob = 0.0;
        for b in 0..n {
            let (v1, v2) = (tr1.output().row(b)[0], tr2.output().row(b)[0]);
            let qmin = if v1 <= v2 {
                v1
            } else {
                pick[b] = 1;
                v2
            };
            actor_loss += self.cfg.temperature * fresh.log_prob[b] - qmin;
            mean_q += qmin;
            mean_log_prob += fresh.log_prob[b];
        }
        actor_loss /= n as f64;
        mean_q /= n as f64;
        mean_log_prob /= n as f64;

        // dL/da for the chosen critic of each row, extracted per net by
        // zeroing the other rows.
        let mut dq_a = Mat::zeros(n, m);
        for (k, tr) in [&tr1, &tr2].into_iter().enumerate() {
            let mut d_out = Mat::zeros(n, 1);
            let mut any = false;
            for b in 0..n {
                if pick[b] == k {
                    d_out.row_mut(b)[0] = -1.0 / n as f64;
                    any = true;
                }
            }
            if !any {
                continue;
            }
            let net = if k == 0 { &self.q1 } else { &self.q2 };
            let dx = net
                .backward(tr, d_out, None, true)
                .expect("input gradient requested");
            for b in 0..n {
                if pick[b] == k {
                    dq_a
                        .row_mut(b)
                        .copy_from_slice(&dx.row(b)[self.cfg.state_dim..]);
                }
            }
        }

        // Gradient of the actor loss w.r.t. the policy head outputs. For the
        // squashed Gaussian the mean path of the entropy term reduces to the
        // tanh correction, and the log-std path gets the extra eps factor.
        let x_states = rows_to_mat(&batch.states, self.cfg.state_dim)?;
        let pi_trace = self.policy.forward(&x_states)?;
        let mut d_head = Mat::zeros(n, 2 * m);
        let alpha = self.cfg.temperature;
        for b in 0..n {
            let head = pi_trace.output().row(b);
            for i in 0..m {
                let ai = fresh.a.row(b)[i];
                let s = fresh.std.row(b)[i];
                let e = fresh.eps.row(b)[i];
                let d_a = dq_a.row(b)[i]; // already carries the -1/n weight
                let through_u = d_a * (1.0 - ai * ai);
                let d_mean = alpha / n as f64 * 2.0 * ai + through_u;
                let raw_log_std = head[m + i];
                let clamped = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_log_std);
                let d_log_std = if clamped {
                    alpha / n as f64 * (2.0 * e * s * ai - 1.0) + through_u * s * e
                } else {
                    0.0
                };
                d_head.row_mut(b)[i] = d_mean;
                d_head.row_mut(b)[m + i] = d_log_std;
            }
        }
        let mut pi_grads = vec![0.0; self.policy.num_params()];
        self.policy
            .backward(&pi_trace, d_head, Some(&mut pi_grads), false);
        self.opt_policy.step(self.policy.params_mut(), &pi_grads);

        self.polyak_update();

        Ok(AgentLosses {
            q1_loss: q_losses[0],
            q2_loss: q_losses[1],
            actor_loss,
            mean_q,
            mean_log_prob,
        })
    }

    fn polyak_update(&mut self) {
        let rho = self.cfg.polyak;
        for (online, target) in [(&self.q1, &mut self.target1), (&self.q2, &mut self.target2)] {
            let src = online.params();
            for (t, o) in target.params_mut().iter_mut().zip(src) {
                *t = rho * *t + (1.0 - rho) * *o;
            }
        }
    }
}

/// Adapter exposing the actor as a collection/evaluation policy.
pub struct ActorPolicy<'a> {
    pub agent: &'a ActorCritic,
    pub deterministic: bool,
}

impl Policy for ActorPolicy<'_> {
    fn act(&self, state: &[f64], rng: &mut ChaCha20Rng) -> Vec<f64> {
        self.agent
            .act(state, self.deterministic, rng)
            .expect("policy state width fixed per realm")
    }
}

/// Mean cumulative evaluation reward over `n_eps` fixed-horizon episodes.
/// Callers pass deterministic policies for scoring (the same routine also
/// measures the random and expert reference returns).
pub fn evaluate_policy(
    env: &mut EnvInstance,
    policy: &dyn Policy,
    n_eps: usize,
    rng: &mut ChaCha20Rng,
) -> Result<f64> {
    let set = crate::env::collect_policy(env, policy, n_eps, rng)?;
    Ok(set.mean_return())
}

fn rows_to_mat(rows: &[&[f64]], width: usize) -> Result<Mat> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::contract(format!(
                "row width {} does not match expected {}",
                r.len(),
                width
            )));
        }
        data.extend_from_slice(r);
    }
    Ok(Mat::from_vec(rows.len(), width, data))
}

fn concat_state_action(states: &[&[f64]], actions: &Mat) -> Mat {
    let n = states.len();
    let sw = states[0].len();
    let aw = actions.cols();
    let mut data = Vec::with_capacity(n * (sw + aw));
    for (b, s) in states.iter().enumerate() {
        data.extend_from_slice(s);
        data.extend_from_slice(actions.row(b));
    }
    Mat::from_vec(n, sw + aw, data)
}
