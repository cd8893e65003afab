//! Finite-difference validation for trainable maps.
//!
//! Every analytic backward pass in this crate is certified against central
//! differences before it is trusted anywhere else. The check walks the whole
//! flat parameter vector (and optionally the input vector), perturbs one
//! entry at a time by `step`, and compares the numeric slope against the
//! analytic gradient.

use super::mat::Mat;
use super::Mlp;

/// Differentiable scalar losses over a map's output with closed-form
/// gradients, so the comparison isolates the map's backward pass.
#[derive(Debug, Clone)]
pub enum CheckLoss {
    /// `L(y) = sum_i w_i y_i`
    WeightedSum(Vec<f64>),
    /// `L(y) = 0.5 * sum_i y_i^2`
    HalfSquaredNorm,
}

impl CheckLoss {
    pub fn value(&self, y: &[f64]) -> f64 {
        match self {
            CheckLoss::WeightedSum(w) => y.iter().zip(w).map(|(a, b)| a * b).sum(),
            CheckLoss::HalfSquaredNorm => 0.5 * y.iter().map(|a| a * a).sum::<f64>(),
        }
    }

    pub fn grad(&self, y: &[f64]) -> Vec<f64> {
        match self {
            CheckLoss::WeightedSum(w) => w.clone(),
            CheckLoss::HalfSquaredNorm => y.to_vec(),
        }
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

/// Maximum relative error between analytic parameter gradients and central
/// differences of `loss` around `input`.
pub fn grad_check(map: &Mlp, input: &[f64], loss: &CheckLoss, step: f64) -> f64 {
    let x = Mat::from_row(input);
    let trace = map.forward(&x).expect("grad_check input width");
    let mut analytic = vec![0.0; map.num_params()];
    let d_out = Mat::from_row(&loss.grad(trace.output().row(0)));
    map.backward(&trace, d_out, Some(&mut analytic), false);

    let mut probe = map.clone();
    let mut worst = 0.0f64;
    for i in 0..probe.num_params() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + step;
        let plus = loss.value(&probe.forward_single(input).unwrap());
        probe.params_mut()[i] = orig - step;
        let minus = loss.value(&probe.forward_single(input).unwrap());
        probe.params_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(rel_error(analytic[i], numeric));
    }
    worst
}

/// Same comparison for the gradient w.r.t. the input vector, which the
/// penalty terms and the actor update rely on.
pub fn grad_check_input(map: &Mlp, input: &[f64], loss: &CheckLoss, step: f64) -> f64 {
    let x = Mat::from_row(input);
    let trace = map.forward(&x).expect("grad_check input width");
    let d_out = Mat::from_row(&loss.grad(trace.output().row(0)));
    let dx = map
        .backward(&trace, d_out, None, true)
        .expect("input gradient requested");

    let mut worst = 0.0f64;
    let mut probe = input.to_vec();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = loss.value(&map.forward_single(&probe).unwrap());
        probe[i] = orig - step;
        let minus = loss.value(&map.forward_single(&probe).unwrap());
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(rel_error(dx.row(0)[i], numeric));
    }
    worst
}
