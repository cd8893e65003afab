//! The two latent-information constraints and their schedulers.
//!
//! The discriminator's preprocessor is penalized for encoding domain
//! information. On expert-behavior data the constraint `I(z; d) <= I_max`
//! uses an adaptive penalty weight `beta` that grows geometrically while the
//! constraint is violated and shrinks once the estimate falls well below the
//! budget. On prior (task-agnostic) data, where the target is essentially
//! zero shared information, a Lagrangian dual multiplier `lambda` ascends on
//! the violation instead: near-zero budgets leave no room for a dead zone.
//!
//! Both penalty values are scalars multiplying an MI estimate; their
//! gradients reach the preprocessor exclusively through that estimate's
//! dependence on the latents. Scheduler updates happen once per collected
//! episode, driven by the episode mean of the step estimates.

use crate::mine::{MiEstimate, MiUnits};

/// Geometric factor for the adaptive penalty.
pub const BETA_FACTOR: f64 = 1.5;
/// Clamp range keeping `beta` positive and finite under long runs.
pub const BETA_MIN: f64 = 1e-4;
pub const BETA_MAX: f64 = 1e4;

/// `L_beta = beta * I` (penalty added to the discriminator loss).
pub fn loss_beta(mi_estimate: f64, beta: f64) -> f64 {
    beta * mi_estimate
}

/// Adaptive update: grow by 1.5x while the episode-mean estimate exceeds
/// `i_max`, shrink by 1.5x when it falls below `i_max / 2`, hold otherwise.
/// The result is clamped to `[BETA_MIN, BETA_MAX]`.
pub fn update_beta(beta: f64, mean_mi: f64, i_max: f64) -> f64 {
    let next = if mean_mi > i_max {
        beta * BETA_FACTOR
    } else if mean_mi < i_max / 2.0 {
        beta / BETA_FACTOR
    } else {
        beta
    };
    next.clamp(BETA_MIN, BETA_MAX)
}

/// `L_lambda = lambda * (I - I_max)` (dual penalty on the prior constraint).
pub fn loss_lambda(mi_estimate: f64, lambda: f64, i_max: f64) -> f64 {
    lambda * (mi_estimate - i_max)
}

/// Dual ascent on the violation, projected onto the non-negative half-line:
/// `max(0, lambda + step * (mean_mi - i_max))`.
pub fn update_lambda(lambda: f64, mean_mi: f64, i_max: f64, step: f64) -> f64 {
    (lambda + step * (mean_mi - i_max)).max(0.0)
}

/// Penalty weights and budgets for one run. Mutated only between episodes.
#[derive(Debug, Clone)]
pub struct PenaltyState {
    pub beta: f64,
    pub lambda: f64,
    /// Budget for the expert-behavior constraint, in `units`.
    pub i_max_expert: f64,
    /// Budget for the prior-data constraint, in `units`.
    pub i_max_prior: f64,
    /// Dual ascent step for lambda.
    pub dual_step: f64,
    /// Scale in which budgets are expressed and estimates compared.
    pub units: MiUnits,
    /// Episode-mean estimates from the most recent scheduler update; kept
    /// for the metrics stream.
    pub running_mi_expert: f64,
    pub running_mi_prior: f64,
}

impl PenaltyState {
    pub fn new(i_max_expert: f64, i_max_prior: f64, dual_step: f64, units: MiUnits) -> PenaltyState {
        PenaltyState {
            beta: 1.0,
            lambda: 0.0,
            i_max_expert,
            i_max_prior,
            dual_step,
            units,
            running_mi_expert: 0.0,
            running_mi_prior: 0.0,
        }
    }

    /// Applies both scheduler rules with the episode-mean estimates.
    /// Estimates are clamped to zero from below first: finite-sample noise in
    /// the lower bound can dip negative, and a negative "violation" must not
    /// push the schedulers below their fixed points. Pass `None` for a
    /// constraint the run variant disables.
    pub fn end_episode(
        &mut self,
        mean_expert_mi: Option<MiEstimate>,
        mean_prior_mi: Option<MiEstimate>,
    ) {
        if let Some(mi) = mean_expert_mi {
            let v = mi.clamped_non_negative().in_units(self.units);
            self.running_mi_expert = v;
            self.beta = update_beta(self.beta, v, self.i_max_expert);
        }
        if let Some(mi) = mean_prior_mi {
            let v = mi.clamped_non_negative().in_units(self.units);
            self.running_mi_prior = v;
            self.lambda = update_lambda(self.lambda, v, self.i_max_prior, self.dual_step);
        }
    }
}
