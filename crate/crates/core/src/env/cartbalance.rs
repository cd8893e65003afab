//! Cart with a hinged pole that should be held upright.
//!
//! Standard cart-pole physics integrated with explicit Euler and a
//! continuous force action; there are no failure terminals, the pole is free
//! to swing. Variants change the pole's length and mass (embodiment) or the
//! colour scheme (appearance). The true reward is an upright bonus.

use super::raster::Canvas;
use super::{Appearance, EnvVariant, Observation, ObsShape};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

pub const HORIZON: usize = 50;
pub const STATE_DIM: usize = 4; // cart x, cart velocity, pole angle, pole angular velocity
pub const ACTION_DIM: usize = 1;
pub const SIDE: usize = 16;

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const FORCE_MAG: f64 = 10.0;
const DT: f64 = 0.05;
const TRACK: f64 = 2.4;

#[derive(Clone, Copy, Debug)]
pub struct PoleParams {
    pub half_length: f64,
    pub mass: f64,
}

pub fn pole_of(variant: usize) -> PoleParams {
    if variant == 1 || variant == 3 {
        PoleParams {
            half_length: 0.9,
            mass: 0.25,
        }
    } else {
        PoleParams {
            half_length: 0.5,
            mass: 0.1,
        }
    }
}

pub fn obs_shape() -> ObsShape {
    ObsShape {
        h: SIDE,
        w: SIDE,
        c: 3,
    }
}

pub fn variants() -> Vec<EnvVariant> {
    let plain = Appearance { palette: 0, tilt: 0.0 };
    let shifted = Appearance { palette: 1, tilt: 0.0 };
    vec![
        EnvVariant {
            name: "source".into(),
            appearance: plain.clone(),
            action_dim: ACTION_DIM,
        },
        EnvVariant {
            name: "pole-shift".into(),
            appearance: plain,
            action_dim: ACTION_DIM,
        },
        EnvVariant {
            name: "appearance-shift".into(),
            appearance: shifted.clone(),
            action_dim: ACTION_DIM,
        },
        EnvVariant {
            name: "combined-shift".into(),
            appearance: shifted,
            action_dim: ACTION_DIM,
        },
    ]
}

/// Near-upright start with small random perturbations.
pub fn init_state(rng: &mut ChaCha20Rng) -> Vec<f64> {
    vec![
        rng.gen_range(-0.2..0.2),
        rng.gen_range(-0.02..0.02),
        rng.gen_range(-0.08..0.08),
        rng.gen_range(-0.02..0.02),
    ]
}

pub fn dynamics(state: &[f64], action: &[f64], pole: PoleParams) -> Vec<f64> {
    let (x, x_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
    let force = FORCE_MAG * action[0].clamp(-1.0, 1.0);
    let total_mass = CART_MASS + pole.mass;
    let polemass_length = pole.mass * pole.half_length;
    let (sin_t, cos_t) = theta.sin_cos();

    let temp = (force + polemass_length * theta_dot * theta_dot * sin_t) / total_mass;
    let theta_acc = (GRAVITY * sin_t - cos_t * temp)
        / (pole.half_length * (4.0 / 3.0 - pole.mass * cos_t * cos_t / total_mass));
    let x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

    let mut nx = x + DT * x_dot;
    let mut nx_dot = x_dot + DT * x_acc;
    let mut ntheta = theta + DT * theta_dot;
    let ntheta_dot = theta_dot + DT * theta_acc;

    // The track has walls: hitting one kills the cart's velocity.
    if nx.abs() > TRACK {
        nx = nx.clamp(-TRACK, TRACK);
        nx_dot = 0.0;
    }
    // Keep the angle wrapped so renders and rewards stay well behaved.
    if ntheta > std::f64::consts::PI {
        ntheta -= 2.0 * std::f64::consts::PI;
    } else if ntheta < -std::f64::consts::PI {
        ntheta += 2.0 * std::f64::consts::PI;
    }
    vec![nx, nx_dot, ntheta, ntheta_dot]
}

/// Upright bonus in [0,1]: cos(theta) clipped at zero.
pub fn r_true(state: &[f64]) -> f64 {
    state[2].cos().max(0.0)
}

/// The cart is a grey bar near the bottom; the pole is a stroke whose pixel
/// length tracks the physical pole length. Palette 0 draws the pole in
/// red+green (yellow), palette 1 in green+blue (cyan).
pub fn render(state: &[f64], appearance: &Appearance, pole: PoleParams) -> Observation {
    let mut canvas = Canvas::new(SIDE, SIDE, 3);
    let cart_row = (SIDE - 3) as f64;
    let cart_px = (state[0] / TRACK + 1.0) * 0.5 * (SIDE as f64 - 1.0);
    for ch in 0..3 {
        canvas.stroke(cart_px - 1.5, cart_row, cart_px + 1.5, cart_row, 0.6, ch, 0.8);
    }
    let len_px = 6.0 + 6.0 * (pole.half_length - 0.5) / 0.4;
    let tip_x = cart_px + len_px * state[2].sin();
    let tip_y = cart_row - 1.0 - len_px * state[2].cos();
    let pole_channels = if appearance.palette == 0 { [0, 1] } else { [1, 2] };
    for ch in pole_channels {
        canvas.stroke(cart_px, cart_row - 1.0, tip_x, tip_y, 0.55, ch, 1.0);
    }
    Observation {
        shape: obs_shape(),
        data: canvas.data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn gravity_topples_an_unforced_tilted_pole() {
        let mut s = vec![0.0, 0.0, 0.05, 0.0];
        let mut peak: f64 = 0.0;
        for _ in 0..15 {
            s = dynamics(&s, &[0.0], pole_of(0));
            peak = peak.max(s[2]);
        }
        assert!(peak > 0.3, "angle should grow, peaked at {peak}");
    }

    #[test]
    fn heavier_longer_pole_falls_slower() {
        let run = |variant: usize| -> f64 {
            let mut s = vec![0.0, 0.0, 0.05, 0.0];
            for _ in 0..20 {
                s = dynamics(&s, &[0.0], pole_of(variant));
            }
            s[2]
        };
        assert!(run(1) < run(0), "long pole has lower angular acceleration");
    }

    #[test]
    fn reward_is_upright_bonus() {
        assert_eq!(r_true(&[0.0, 0.0, 0.0, 0.0]), 1.0);
        assert_eq!(r_true(&[0.0, 0.0, std::f64::consts::PI, 0.0]), 0.0);
        assert!((r_true(&[0.0, 0.0, 1.0, 0.0]) - 1.0f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn track_walls_stop_the_cart() {
        let s = vec![2.39, 3.0, 0.0, 0.0];
        let s = dynamics(&s, &[1.0], pole_of(0));
        assert_eq!(s[0], TRACK);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn render_palettes_disjoint_on_pole_channels() {
        let s = init_state(&mut stream(3, Stream::Env));
        let a = render(&s, &variants()[0].appearance, pole_of(0));
        let b = render(&s, &variants()[2].appearance, pole_of(0));
        let sum = |o: &Observation, c: usize| -> f32 { o.data.iter().skip(c).step_by(3).sum() };
        // Red carries pole mass only in palette 0, blue only in palette 1.
        assert!(sum(&a, 0) > sum(&b, 0));
        assert!(sum(&b, 2) > sum(&a, 2));
        assert!(a.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
