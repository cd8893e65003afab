//! Three-cell chain world with two-bit observations.
//!
//! The state is a position p in {0, 1, 2}; the rightmost cell is the goal.
//! Observations are two bits: x identifies the domain (1 in the expert
//! domain, 0 in the agent domain) and y flags the goal cell. Episodes start
//! at p = 0 and run exactly three steps, so an optimal controller emits the
//! observation string {y=0, y=1, y=1}: the x bit is the only feature that
//! separates domains, and y is the only feature correlated with success.

use super::{Appearance, EnvVariant, Observation, ObsShape};

pub const HORIZON: usize = 3;
pub const STATE_DIM: usize = 1;
pub const ACTION_DIM: usize = 1;
pub const N_CELLS: f64 = 3.0;

pub fn obs_shape() -> ObsShape {
    ObsShape { h: 1, w: 1, c: 2 }
}

pub fn variants() -> Vec<EnvVariant> {
    vec![
        EnvVariant {
            name: "expert-domain".into(),
            appearance: Appearance { palette: 1, tilt: 0.0 },
            action_dim: ACTION_DIM,
        },
        EnvVariant {
            name: "agent-domain".into(),
            appearance: Appearance { palette: 0, tilt: 0.0 },
            action_dim: ACTION_DIM,
        },
    ]
}

/// Episodes always start in the leftmost cell.
pub fn init_state() -> Vec<f64> {
    vec![0.0]
}

/// Continuous action in [-1,1] thresholded into {left, stay, right}.
pub fn dynamics(state: &[f64], action: &[f64]) -> Vec<f64> {
    let p = state[0];
    let a = action[0];
    let dir = if a > 1.0 / 3.0 {
        1.0
    } else if a < -1.0 / 3.0 {
        -1.0
    } else {
        0.0
    };
    vec![(p + dir).clamp(0.0, N_CELLS - 1.0)]
}

pub fn r_true(state: &[f64]) -> f64 {
    if state[0] >= N_CELLS - 1.0 {
        1.0
    } else {
        0.0
    }
}

/// The "render" is just the two bits packed into a 1x1x2 image. Palette 1 is
/// the expert domain (x = 1).
pub fn render(state: &[f64], appearance: &Appearance) -> Observation {
    let x = appearance.palette as f32;
    let y = if state[0] >= N_CELLS - 1.0 { 1.0 } else { 0.0 };
    Observation {
        shape: obs_shape(),
        data: vec![x, y],
    }
}
