//! Small trainable maps with analytic gradients.
//!
//! Everything adversarial in this crate (preprocessor, invariant
//! discriminator, statistics networks, policy, critics) is a dense multilayer
//! perceptron a few dozen units wide. At that scale a hand-written forward /
//! backward pair beats a general autodiff dependency: it keeps runs
//! bit-deterministic, exposes input gradients (the mutual-information
//! penalties and the actor update both differentiate through another
//! network's inputs), and is trivially checked against finite differences by
//! [`grad_check`].
//!
//! Parameters live in one flat `Vec<f64>` per map, ordered layer by layer as
//! `fan_out x fan_in` row-major weights followed by biases. Optimizer state
//! and checkpoints address that flat vector directly.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod head;
pub mod mat;
pub mod spectral;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, ParamBlock};
pub use gradcheck::{grad_check, grad_check_input, CheckLoss};
pub use head::{gaussian_head, sample_latent, var_bounds, LatentRep};
pub use mat::Mat;
pub use spectral::{spectral_normalize, SpectralOutcome};

use crate::error::{Error, Result};
use rand::Rng;

/// Elementwise nonlinearity applied after a layer's affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the post-activation value, which is the
    /// only thing the forward trace stores.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Shape and nonlinearity of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub act: Activation,
}

impl LayerSpec {
    fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    fn param_len(&self) -> usize {
        self.weight_len() + self.fan_out
    }
}

/// How to initialize the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputInit {
    /// Fan-in scaled uniform, like the hidden layers.
    FanIn,
    /// All zeros, so the map starts out neutral (a discriminator head emits
    /// probability 0.5 exactly, a statistics network emits 0).
    Zero,
}

/// Dense multilayer perceptron with a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Mlp {
    specs: Vec<LayerSpec>,
    params: Vec<f64>,
}

/// Post-activation values of every layer for one forward pass;
/// `acts[0]` is the input batch, `acts[L]` the output.
pub struct Trace {
    acts: Vec<Mat>,
}

impl Trace {
    pub fn output(&self) -> &Mat {
        self.acts.last().expect("trace always holds the input")
    }
}

impl Mlp {
    /// Builds `dims[0] -> dims[1] -> ... -> dims[n-1]` with `hidden` applied
    /// to every layer except the last, which gets `output`.
    ///
    /// Hidden weights draw from the fan-in scaled uniform
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; biases start at zero.
    pub fn new<R: Rng>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        out_init: OutputInit,
        rng: &mut R,
    ) -> Result<Mlp> {
        if dims.len() < 2 {
            return Err(Error::contract(format!(
                "a trainable map needs at least an input and output width, got {} dims",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::contract("layer widths must be positive"));
        }
        let mut specs = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let act = if i + 2 == dims.len() { output } else { hidden };
            specs.push(LayerSpec {
                fan_in: dims[i],
                fan_out: dims[i + 1],
                act,
            });
        }
        let total: usize = specs.iter().map(|s| s.param_len()).sum();
        let mut params = vec![0.0; total];
        let mut offset = 0;
        let last = specs.len() - 1;
        for (l, spec) in specs.iter().enumerate() {
            let zero_layer = l == last && out_init == OutputInit::Zero;
            if !zero_layer {
                let bound = 1.0 / (spec.fan_in as f64).sqrt();
                for w in &mut params[offset..offset + spec.weight_len()] {
                    *w = rng.gen_range(-bound..bound);
                }
            }
            offset += spec.param_len();
        }
        Ok(Mlp { specs, params })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.specs.last().unwrap().fan_out
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of layer `l`'s parameter block inside the flat vector.
    fn layer_offset(&self, l: usize) -> usize {
        self.specs[..l].iter().map(|s| s.param_len()).sum()
    }

    /// Mutable view of layer `l`'s weight matrix (row-major
    /// `fan_out x fan_in`), e.g. for spectral normalization.
    pub fn layer_weight_mut(&mut self, l: usize) -> (&mut [f64], usize, usize) {
        let off = self.layer_offset(l);
        let spec = self.specs[l];
        (
            &mut self.params[off..off + spec.weight_len()],
            spec.fan_out,
            spec.fan_in,
        )
    }

    pub fn forward(&self, x: &Mat) -> Result<Trace> {
        if x.cols() != self.input_dim() {
            return Err(Error::contract(format!(
                "map expects {} inputs, batch has {} columns",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut acts = Vec::with_capacity(self.specs.len() + 1);
        acts.push(x.clone());
        let mut offset = 0;
        for spec in &self.specs {
            let w = &self.params[offset..offset + spec.weight_len()];
            let b = &self.params[offset + spec.weight_len()..offset + spec.param_len()];
            let mut out = Mat::zeros(x.rows(), spec.fan_out);
            mat::affine_forward(acts.last().unwrap(), w, b, &mut out);
            for v in out.data_mut() {
                *v = spec.act.apply(*v);
            }
            acts.push(out);
            offset += spec.param_len();
        }
        Ok(Trace { acts })
    }

    /// Single-row convenience forward.
    pub fn forward_single(&self, x: &[f64]) -> Result<Vec<f64>> {
        let t = self.forward(&Mat::from_row(x))?;
        Ok(t.output().row(0).to_vec())
    }

    /// Backpropagates `d_out` (gradient w.r.t. the map output).
    ///
    /// When `grads` is `Some`, parameter gradients accumulate into it (the
    /// buffer must match `num_params`). When it is `None` the pass touches
    /// only the input path, which is how penalty terms reach an upstream
    /// network without ever producing gradients for this one. Returns the
    /// gradient w.r.t. the input batch when `want_input_grad` is set.
    pub fn backward(
        &self,
        trace: &Trace,
        d_out: Mat,
        mut grads: Option<&mut [f64]>,
        want_input_grad: bool,
    ) -> Option<Mat> {
        if let Some(g) = grads.as_ref() {
            assert_eq!(g.len(), self.params.len(), "gradient buffer size mismatch");
        }
        assert_eq!(d_out.cols(), self.output_dim(), "output gradient width");
        assert_eq!(d_out.rows(), trace.acts[0].rows(), "output gradient rows");
        let mut d_post = d_out;
        for l in (0..self.specs.len()).rev() {
            let spec = self.specs[l];
            let post = &trace.acts[l + 1];
            // d_pre = d_post (*) act'(post), reusing the d_post buffer.
            for b in 0..d_post.rows() {
                let pr = post.row(b);
                let dr = d_post.row_mut(b);
                for (d, y) in dr.iter_mut().zip(pr) {
                    *d *= spec.act.derivative_from_output(*y);
                }
            }
            let off = self.layer_offset(l);
            if let Some(g) = grads.as_deref_mut() {
                let (dw, db) = g[off..off + spec.param_len()].split_at_mut(spec.weight_len());
                mat::affine_grad_params(&d_post, &trace.acts[l], dw, db);
            }
            if l == 0 && !want_input_grad {
                return None;
            }
            let w = &self.params[off..off + spec.weight_len()];
            let mut dx = Mat::zeros(d_post.rows(), spec.fan_in);
            mat::affine_grad_input(&d_post, w, spec.fan_in, &mut dx);
            d_post = dx;
        }
        Some(d_post)
    }
}

/// Numerically stable `log(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn forward_matches_hand_linear_map() {
        let mut rng = stream(0, Stream::Init);
        let mut map = Mlp::new(
            &[2, 2],
            Activation::Identity,
            Activation::Identity,
            OutputInit::Zero,
            &mut rng,
        )
        .unwrap();
        map.params_mut().copy_from_slice(&[1.0, 2.0, 0.0, -1.0, 0.5, 0.0]);
        let y = map.forward_single(&[3.0, 4.0]).unwrap();
        assert_eq!(y, vec![11.5, -4.0]);
    }

    #[test]
    fn zero_output_init_gives_zero_outputs() {
        let mut rng = stream(1, Stream::Init);
        let map = Mlp::new(
            &[5, 32, 32, 1],
            Activation::Relu,
            Activation::Identity,
            OutputInit::Zero,
            &mut rng,
        )
        .unwrap();
        let y = map.forward_single(&[0.3, -0.4, 1.0, 0.0, 2.0]).unwrap();
        assert_eq!(y, vec![0.0]);
    }

    #[test]
    fn rejects_zero_width_and_bad_batch() {
        let mut rng = stream(2, Stream::Init);
        assert!(Mlp::new(
            &[3, 0, 1],
            Activation::Tanh,
            Activation::Identity,
            OutputInit::FanIn,
            &mut rng
        )
        .is_err());
        let map = Mlp::new(
            &[3, 4],
            Activation::Tanh,
            Activation::Identity,
            OutputInit::FanIn,
            &mut rng,
        )
        .unwrap();
        assert!(map.forward(&Mat::zeros(1, 2)).is_err());
    }

    #[test]
    fn backward_without_grad_buffer_leaves_params_untracked() {
        // The input-only path must produce the same input gradient as the
        // full path; parameter gradients simply never exist for it.
        let mut rng = stream(3, Stream::Init);
        let map = Mlp::new(
            &[4, 8, 2],
            Activation::Tanh,
            Activation::Identity,
            OutputInit::FanIn,
            &mut rng,
        )
        .unwrap();
        let x = Mat::from_row(&[0.1, -0.2, 0.3, 0.7]);
        let t = map.forward(&x).unwrap();
        let d = Mat::from_row(&[1.0, -1.0]);
        let mut g = vec![0.0; map.num_params()];
        let dx_full = map
            .backward(&t, d.clone(), Some(&mut g), true)
            .unwrap();
        let dx_inputs_only = map.backward(&t, d, None, true).unwrap();
        assert_eq!(dx_full, dx_inputs_only);
        assert!(g.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn softplus_and_sigmoid_are_stable_at_extremes() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!(sigmoid(1000.0) <= 1.0);
        assert!(sigmoid(-1000.0) >= 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
