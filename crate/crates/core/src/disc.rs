//! The constrained discriminator stack D = S ∘ P.
//!
//! A preprocessor P maps each frame to a diagonal-Gaussian latent; an
//! invariant discriminator S scores the concatenated window of latent
//! samples (newest first) as expert versus non-expert behaviour. Training
//! ascends the adversarial objective while two mutual-information penalties
//! push domain information out of the latents: a beta-weighted penalty on
//! expert-versus-agent data and a dual (lambda) penalty on the prior sets.
//! Penalty gradients reach P only through the statistics networks' input
//! gradients; S never sees them. S's weight matrices are spectrally
//! normalized after every step.

use crate::buffers::WindowSample;
use crate::env::WINDOW;
use crate::error::{Error, Result};
use crate::mine::{
    dv_lower_bound, dv_with_input_grads, shuffled_marginal, MiEstimate, MiUnits, StatisticsPair,
};
use crate::nets::head::{head_backward, head_forward, sample_backward, sample_forward, HeadTrace};
use crate::nets::{sigmoid, softplus, spectral_normalize, Activation, Adam, Mat, Mlp, OutputInit, Trace};
use crate::penalty::{loss_beta, loss_lambda, PenaltyState};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Probability floor for the pseudo-reward; caps |R_D| at ~13.8 nats.
pub const PROB_CLIP: f64 = 1e-6;

/// Shape and training knobs for one stack.
#[derive(Clone, Copy, Debug)]
pub struct StackConfig {
    pub obs_len: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    /// How many frames of the 4-window the invariant discriminator reads;
    /// 1 reproduces the no-history ablation.
    pub frames_used: usize,
    pub spectral_norm: bool,
    pub lr: f64,
}

impl StackConfig {
    pub fn new(obs_len: usize) -> StackConfig {
        StackConfig {
            obs_len,
            latent_dim: 8,
            hidden: 32,
            frames_used: WINDOW,
            spectral_norm: true,
            lr: 1e-3,
        }
    }
}

#[derive(Clone)]
pub struct DiscriminatorStack {
    pre: Mlp,
    inv: Mlp,
    latent_dim: usize,
    frames_used: usize,
    spectral_norm: bool,
    sn_state: Vec<Vec<f64>>,
    opt_pre: Adam,
    opt_inv: Adam,
}

impl DiscriminatorStack {
    /// P: obs -> 2 x latent_dim raw head inputs (tanh hidden, random output).
    /// S: frames_used x latent_dim -> 1 logit (relu hidden, zero output so an
    /// untrained stack scores exactly 0.5 everywhere).
    pub fn new<R: Rng>(cfg: StackConfig, rng: &mut R) -> Result<DiscriminatorStack> {
        if cfg.frames_used == 0 || cfg.frames_used > WINDOW {
            return Err(Error::config(format!(
                "frames_used must be in 1..={WINDOW}, got {}",
                cfg.frames_used
            )));
        }
        let pre = Mlp::new(
            &[cfg.obs_len, cfg.hidden, cfg.hidden, 2 * cfg.latent_dim],
            Activation::Tanh,
            Activation::Identity,
            OutputInit::FanIn,
            rng,
        )?;
        let inv = Mlp::new(
            &[cfg.frames_used * cfg.latent_dim, cfg.hidden, cfg.hidden, 1],
            Activation::Relu,
            Activation::Identity,
            OutputInit::Zero,
            rng,
        )?;
        let n_pre = pre.num_params();
        let n_inv = inv.num_params();
        let n_layers = inv.specs().len();
        Ok(DiscriminatorStack {
            pre,
            inv,
            latent_dim: cfg.latent_dim,
            frames_used: cfg.frames_used,
            spectral_norm: cfg.spectral_norm,
            sn_state: vec![Vec::new(); n_layers],
            opt_pre: Adam::new(cfg.lr, n_pre),
            opt_inv: Adam::new(cfg.lr, n_inv),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn frames_used(&self) -> usize {
        self.frames_used
    }

    pub fn preprocessor(&self) -> &Mlp {
        &self.pre
    }

    pub fn invariant_disc(&self) -> &Mlp {
        &self.inv
    }

    pub fn invariant_disc_mut(&mut self) -> &mut Mlp {
        &mut self.inv
    }

    fn check_frame(&self, frame: &[f32]) -> Result<()> {
        if frame.len() != self.pre.input_dim() {
            return Err(Error::contract(format!(
                "window frame has {} values, stack expects {}",
                frame.len(),
                self.pre.input_dim()
            )));
        }
        Ok(())
    }

    /// Stacks the used frames of each window into one matrix, window-major,
    /// newest frame first within a window.
    fn frames_mat(&self, groups: &[&[WindowSample<'_>]]) -> Result<Mat> {
        let n: usize = groups.iter().map(|g| g.len()).sum();
        let mut frames = Mat::zeros(n * self.frames_used, self.pre.input_dim());
        let mut r = 0;
        for g in groups {
            for w in *g {
                for frame in w.frames.iter().take(self.frames_used) {
                    self.check_frame(frame)?;
                    for (dst, &src) in frames.row_mut(r).iter_mut().zip(frame.iter()) {
                        *dst = f64::from(src);
                    }
                    r += 1;
                }
            }
        }
        Ok(frames)
    }

    fn frames_mat_plain(&self, windows: &[[&[f32]; WINDOW]]) -> Result<Mat> {
        let mut frames = Mat::zeros(windows.len() * self.frames_used, self.pre.input_dim());
        let mut r = 0;
        for w in windows {
            for frame in w.iter().take(self.frames_used) {
                self.check_frame(frame)?;
                for (dst, &src) in frames.row_mut(r).iter_mut().zip(frame.iter()) {
                    *dst = f64::from(src);
                }
                r += 1;
            }
        }
        Ok(frames)
    }

    fn forward_frames(&self, frames: Mat, rng: Option<&mut ChaCha20Rng>) -> Result<StackTrace> {
        let n = frames.rows() / self.frames_used;
        let trace_p = self.pre.forward(&frames)?;
        let head = head_forward(trace_p.output())?;
        let mut noise = Mat::zeros(frames.rows(), self.latent_dim);
        if let Some(rng) = rng {
            for v in noise.data_mut() {
                *v = StandardNormal.sample(rng);
            }
        }
        let z = sample_forward(&head, &noise);
        let mut zhat = Mat::zeros(n, self.frames_used * self.latent_dim);
        for i in 0..n {
            let row = zhat.row_mut(i);
            for k in 0..self.frames_used {
                let zr = z.row(i * self.frames_used + k);
                row[k * self.latent_dim..(k + 1) * self.latent_dim].copy_from_slice(zr);
            }
        }
        let trace_s = self.inv.forward(&zhat)?;
        Ok(StackTrace {
            trace_p,
            head,
            noise,
            z,
            trace_s,
            n,
        })
    }

    /// Backpropagates `d_logit` (dL/dlogit, one row per window) plus an
    /// optional extra gradient already expressed on the latents, into the
    /// two parameter-gradient buffers.
    fn backward(
        &self,
        tr: &StackTrace,
        d_logit: Mat,
        d_z_extra: Option<&Mat>,
        g_pre: &mut [f64],
        g_inv: &mut [f64],
    ) {
        let d_zhat = self
            .inv
            .backward(&tr.trace_s, d_logit, Some(g_inv), true)
            .expect("input gradients requested");
        let mut d_z = Mat::zeros(tr.z.rows(), self.latent_dim);
        for i in 0..tr.n {
            let src = d_zhat.row(i);
            for k in 0..self.frames_used {
                d_z.row_mut(i * self.frames_used + k)
                    .copy_from_slice(&src[k * self.latent_dim..(k + 1) * self.latent_dim]);
            }
        }
        if let Some(extra) = d_z_extra {
            for (d, e) in d_z.data_mut().iter_mut().zip(extra.data()) {
                *d += e;
            }
        }
        let (d_mean, d_var) = sample_backward(&tr.head, &tr.noise, &d_z);
        let d_raw = head_backward(&tr.head, &d_mean, &d_var);
        self.pre.backward(&tr.trace_p, d_raw, Some(g_pre), false);
    }

    /// S(ẑ) for one window. The stochastic path draws fresh reparameterized
    /// latents; the deterministic path uses the means (zero noise).
    pub fn discriminate(
        &self,
        window: [&[f32]; WINDOW],
        stochastic: bool,
        rng: Option<&mut ChaCha20Rng>,
    ) -> Result<f64> {
        if stochastic && rng.is_none() {
            return Err(Error::contract(
                "stochastic discrimination needs a noise generator",
            ));
        }
        let frames = self.frames_mat_plain(std::slice::from_ref(&window))?;
        let tr = self.forward_frames(frames, if stochastic { rng } else { None })?;
        Ok(sigmoid(tr.trace_s.output().row(0)[0]))
    }

    /// Deterministic probabilities for a batch of windows.
    pub fn probabilities(&self, windows: &[[&[f32]; WINDOW]]) -> Result<Vec<f64>> {
        let frames = self.frames_mat_plain(windows)?;
        let tr = self.forward_frames(frames, None)?;
        Ok((0..windows.len())
            .map(|i| sigmoid(tr.trace_s.output().row(i)[0]))
            .collect())
    }

    /// Pseudo-reward log D − log(1−D) on the deterministic path, with D
    /// clipped to [PROB_CLIP, 1−PROB_CLIP]. Equal to the clipped logit, so a
    /// fresh stack (logit 0) rewards exactly zero.
    pub fn pseudo_reward(&self, window: [&[f32]; WINDOW]) -> Result<f64> {
        let frames = self.frames_mat_plain(std::slice::from_ref(&window))?;
        let tr = self.forward_frames(frames, None)?;
        Ok(log_odds(tr.trace_s.output().row(0)[0]))
    }

    /// Batch pseudo-rewards, one deterministic forward pass.
    pub fn pseudo_rewards(&self, windows: &[[&[f32]; WINDOW]]) -> Result<Vec<f64>> {
        let frames = self.frames_mat_plain(windows)?;
        let tr = self.forward_frames(frames, None)?;
        Ok((0..windows.len())
            .map(|i| log_odds(tr.trace_s.output().row(i)[0]))
            .collect())
    }

    /// Mean-path latents of single frames, one row per frame.
    pub fn frame_latents(&self, frames: &[&[f32]]) -> Result<Mat> {
        let mut x = Mat::zeros(frames.len(), self.pre.input_dim());
        for (i, f) in frames.iter().enumerate() {
            self.check_frame(f)?;
            for (dst, &src) in x.row_mut(i).iter_mut().zip(f.iter()) {
                *dst = f64::from(src);
            }
        }
        let trace = self.pre.forward(&x)?;
        let head = head_forward(trace.output())?;
        Ok(head.mean)
    }

    /// Reparameterized latent draws of single frames, one row per frame.
    /// This is the noisy channel the information constraints act on, so
    /// statistics networks should be fit against these rather than the means.
    pub fn sampled_frame_latents(&self, frames: &[&[f32]], rng: &mut ChaCha20Rng) -> Result<Mat> {
        let mut x = Mat::zeros(frames.len(), self.pre.input_dim());
        for (i, f) in frames.iter().enumerate() {
            self.check_frame(f)?;
            for (dst, &src) in x.row_mut(i).iter_mut().zip(f.iter()) {
                *dst = f64::from(src);
            }
        }
        let trace = self.pre.forward(&x)?;
        let head = head_forward(trace.output())?;
        let mut noise = Mat::zeros(frames.len(), self.latent_dim);
        for v in noise.data_mut() {
            *v = StandardNormal.sample(rng);
        }
        Ok(sample_forward(&head, &noise))
    }

    /// Gaussian channel parameters (means, variances) of single frames, one
    /// row per frame, without drawing noise.
    pub fn frame_latent_params(&self, frames: &[&[f32]]) -> Result<(Mat, Mat)> {
        let mut x = Mat::zeros(frames.len(), self.pre.input_dim());
        for (i, f) in frames.iter().enumerate() {
            self.check_frame(f)?;
            for (dst, &src) in x.row_mut(i).iter_mut().zip(f.iter()) {
                *dst = f64::from(src);
            }
        }
        let trace = self.pre.forward(&x)?;
        let head = head_forward(trace.output())?;
        Ok((head.mean, head.var))
    }

    /// Deterministic window embeddings ẑ (means concatenated newest first).
    pub fn window_embedding(&self, windows: &[[&[f32]; WINDOW]]) -> Result<Mat> {
        let frames = self.frames_mat_plain(windows)?;
        let tr = self.forward_frames(frames, None)?;
        let mut zhat = Mat::zeros(windows.len(), self.frames_used * self.latent_dim);
        for i in 0..windows.len() {
            let row = zhat.row_mut(i);
            for k in 0..self.frames_used {
                let zr = tr.z.row(i * self.frames_used + k);
                row[k * self.latent_dim..(k + 1) * self.latent_dim].copy_from_slice(zr);
            }
        }
        Ok(zhat)
    }

    /// Fraction of correct deterministic classifications, counting ties
    /// (probability exactly 0.5) as half credit so an untrained stack sits
    /// at chance level.
    pub fn accuracy(
        &self,
        positives: &[[&[f32]; WINDOW]],
        negatives: &[[&[f32]; WINDOW]],
    ) -> Result<f64> {
        let pp = self.probabilities(positives)?;
        let pn = self.probabilities(negatives)?;
        let mut score = 0.0;
        for p in pp {
            score += if p > 0.5 {
                1.0
            } else if p == 0.5 {
                0.5
            } else {
                0.0
            };
        }
        for p in pn {
            score += if p < 0.5 {
                1.0
            } else if p == 0.5 {
                0.5
            } else {
                0.0
            };
        }
        Ok(score / (positives.len() + negatives.len()) as f64)
    }

    /// Classification accuracy through the sampled latent channel, averaged
    /// over `draws` independent draws per window. This is the rate the
    /// information budget actually caps: a sub-noise mean offset can make the
    /// deterministic path look separable while carrying almost no
    /// information, so budget experiments must score through the noise.
    pub fn accuracy_stochastic(
        &self,
        positives: &[[&[f32]; WINDOW]],
        negatives: &[[&[f32]; WINDOW]],
        draws: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<f64> {
        if draws == 0 {
            return Err(Error::contract("stochastic accuracy needs draws >= 1"));
        }
        let mut score = 0.0;
        for _ in 0..draws {
            for (windows, want_high) in [(positives, true), (negatives, false)] {
                let frames = self.frames_mat_plain(windows)?;
                let tr = self.forward_frames(frames, Some(rng))?;
                for i in 0..tr.n {
                    let p = sigmoid(tr.trace_s.output().row(i)[0]);
                    score += if p == 0.5 {
                        0.5
                    } else if (p > 0.5) == want_high {
                        1.0
                    } else {
                        0.0
                    };
                }
            }
        }
        Ok(score / (draws * (positives.len() + negatives.len())) as f64)
    }

    fn project_spectral(&mut self) {
        if !self.spectral_norm {
            return;
        }
        for l in 0..self.inv.specs().len() {
            let v = &mut self.sn_state[l];
            // Split borrow: take the buffer out while the weights are viewed.
            let mut state = std::mem::take(v);
            let (w, rows, cols) = self.inv.layer_weight_mut(l);
            spectral_normalize(w, rows, cols, &mut state, 1);
            self.sn_state[l] = state;
        }
    }
}

/// Clipped log-odds: log D − log(1−D) with D held inside
/// [PROB_CLIP, 1−PROB_CLIP]. Uses the paired sigmoids of ±logit so the
/// result is exactly antisymmetric in the logit.
fn log_odds(logit: f64) -> f64 {
    let mut p = sigmoid(logit);
    let mut q = sigmoid(-logit);
    if p < PROB_CLIP {
        p = PROB_CLIP;
        q = 1.0 - PROB_CLIP;
    } else if q < PROB_CLIP {
        q = PROB_CLIP;
        p = 1.0 - PROB_CLIP;
    }
    p.ln() - q.ln()
}

struct StackTrace {
    trace_p: Trace,
    head: HeadTrace,
    noise: Mat,
    z: Mat,
    trace_s: Trace,
    n: usize,
}

/// Max-of-pair estimate, or the first network alone when the doubling trick
/// is disabled.
pub fn constraint_estimate(
    pair: &StatisticsPair,
    joint: &Mat,
    marginal: &Mat,
    double_stat: bool,
) -> Result<(MiEstimate, usize)> {
    if double_stat {
        crate::mine::double_estimate(pair, joint, marginal)
    } else {
        Ok((dv_lower_bound(&pair.nets[0], joint, marginal)?, 0))
    }
}

/// Which penalties participate in the update, plus the estimator flavour.
#[derive(Clone, Copy, Debug)]
pub struct StepSettings {
    pub beta_on: bool,
    pub lambda_on: bool,
    pub double_stat: bool,
}

impl Default for StepSettings {
    fn default() -> StepSettings {
        StepSettings {
            beta_on: true,
            lambda_on: true,
            double_stat: true,
        }
    }
}

/// Everything one discriminator update reports.
#[derive(Clone, Debug)]
pub struct StepBreakdown {
    pub j_g: f64,
    pub l_beta: f64,
    pub l_lambda: f64,
    /// Total descent loss; always −j_g + l_beta + l_lambda.
    pub l_d: f64,
    /// Expert-versus-agent MI estimate (the beta constraint's signal).
    pub mi_expert: MiEstimate,
    /// Prior-set MI estimate (the lambda constraint's signal), when priors
    /// were supplied.
    pub mi_prior: Option<MiEstimate>,
    /// Training-batch accuracy, ties scored half.
    pub accuracy: f64,
}

/// Value of the adversarial objective on the deterministic path: mean log S
/// over expert windows plus mean log(1−S) over agent and prior windows
/// pooled at equal per-sample weight.
pub fn gail_objective(
    stack: &DiscriminatorStack,
    batch_e: &[WindowSample<'_>],
    batch_pi: &[WindowSample<'_>],
    batch_priors: Option<(&[WindowSample<'_>], &[WindowSample<'_>])>,
) -> Result<f64> {
    if batch_e.is_empty() {
        return Err(Error::contract("expert batch is empty"));
    }
    if batch_pi.is_empty() {
        return Err(Error::contract("agent batch is empty"));
    }
    let (pe, ppi) = match batch_priors {
        Some((a, b)) => (a, b),
        None => (&[][..], &[][..]),
    };
    let frames = stack.frames_mat(&[batch_e, batch_pi, pe, ppi])?;
    let tr = stack.forward_frames(frames, None)?;
    let n_e = batch_e.len();
    let n_neg = batch_pi.len() + pe.len() + ppi.len();
    let mut j_pos = 0.0;
    let mut j_neg = 0.0;
    for i in 0..tr.n {
        let logit = tr.trace_s.output().row(i)[0];
        if i < n_e {
            j_pos += -softplus(-logit);
        } else {
            j_neg += -softplus(logit);
        }
    }
    Ok(j_pos / n_e as f64 + j_neg / n_neg as f64)
}

/// One ascent step on the penalized objective (descent on
/// L_D = −J_G + L_β + L_λ). Both constraints read the same statistics-network
/// pair: each takes the max of the two bounds on its own latent set and sends
/// gradients through its winner only, into the preprocessor only. After the
/// parameter update the invariant discriminator's weights are re-projected
/// to unit spectral norm.
pub fn discriminator_step(
    stack: &mut DiscriminatorStack,
    statnets: &StatisticsPair,
    penalty: &PenaltyState,
    settings: StepSettings,
    batch_e: &[WindowSample<'_>],
    batch_pi: &[WindowSample<'_>],
    batch_priors: Option<(&[WindowSample<'_>], &[WindowSample<'_>])>,
    rng: &mut ChaCha20Rng,
) -> Result<StepBreakdown> {
    if batch_e.is_empty() {
        return Err(Error::contract("expert batch is empty"));
    }
    if batch_pi.is_empty() {
        return Err(Error::contract("agent batch is empty"));
    }
    if settings.lambda_on && batch_priors.is_none() {
        return Err(Error::config(
            "the dual penalty is enabled but no prior batches were supplied",
        ));
    }
    if let Some((pe, ppi)) = batch_priors {
        if pe.is_empty() || ppi.is_empty() {
            return Err(Error::contract("prior batches must be non-empty when supplied"));
        }
    }
    let (pe, ppi) = match batch_priors {
        Some((a, b)) => (a, b),
        None => (&[][..], &[][..]),
    };
    let n_e = batch_e.len();
    let n_pi = batch_pi.len();
    let n_neg = n_pi + pe.len() + ppi.len();
    let m = stack.latent_dim;
    let f = stack.frames_used;

    let frames = stack.frames_mat(&[batch_e, batch_pi, pe, ppi])?;
    let tr = stack.forward_frames(frames, Some(rng))?;

    // Adversarial term and its logit gradients (descent direction).
    let mut j_pos = 0.0;
    let mut j_neg = 0.0;
    let mut d_logit = Mat::zeros(tr.n, 1);
    let mut correct = 0.0;
    for i in 0..tr.n {
        let logit = tr.trace_s.output().row(i)[0];
        let p = sigmoid(logit);
        if i < n_e {
            j_pos += -softplus(-logit);
            d_logit.row_mut(i)[0] = -(1.0 - p) / n_e as f64;
            correct += tie_credit(p > 0.5, p == 0.5);
        } else {
            j_neg += -softplus(logit);
            d_logit.row_mut(i)[0] = p / n_neg as f64;
            correct += tie_credit(p < 0.5, p == 0.5);
        }
    }
    let j_g = j_pos / n_e as f64 + j_neg / n_neg as f64;
    let accuracy = correct / tr.n as f64;

    // Constraint estimates on the frame latents of the same draw. Every frame
    // of a window enters individually, labelled with the window's domain, so
    // the constraints act on single-observation representations while the
    // adversarial term sees the concatenation.
    let latent_rows = |base: usize, count: usize, labels: &[(usize, f64)]| -> Mat {
        let mut out = Mat::zeros(count * f, m + 1);
        for i in 0..count * f {
            let row = out.row_mut(i);
            row[..m].copy_from_slice(tr.z.row(base * f + i));
            let mut offset = i / f;
            for &(n_group, d) in labels {
                if offset < n_group {
                    row[m] = d;
                    break;
                }
                offset -= n_group;
            }
        }
        out
    };
    let joint_disc = latent_rows(0, n_e + n_pi, &[(n_e, 1.0), (n_pi, 0.0)]);
    let marg_disc = shuffled_marginal(&joint_disc, 1, rng);
    let (mi_expert, win_e) =
        constraint_estimate(statnets, &joint_disc, &marg_disc, settings.double_stat)?;

    let mut mi_prior = None;
    let mut prior_mats = None;
    if !pe.is_empty() {
        let joint_p = latent_rows(n_e + n_pi, pe.len() + ppi.len(), &[(pe.len(), 1.0), (ppi.len(), 0.0)]);
        let marg_p = shuffled_marginal(&joint_p, 1, rng);
        let (est, win_p) =
            constraint_estimate(statnets, &joint_p, &marg_p, settings.double_stat)?;
        mi_prior = Some(est);
        prior_mats = Some((joint_p, marg_p, win_p));
    }

    // Penalty gradients enter at the latents; the label column is dropped.
    let scale = unit_scale(penalty.units);
    let mut d_z_extra = Mat::zeros(tr.z.rows(), m);
    let mut add_penalty = |pair: &StatisticsPair,
                           winner: usize,
                           joint: &Mat,
                           marg: &Mat,
                           base: usize,
                           coef: f64|
     -> Result<()> {
        if coef == 0.0 {
            return Ok(());
        }
        let grads = dv_with_input_grads(&pair.nets[winner], joint, marg)?;
        for i in 0..joint.rows() {
            let dst = d_z_extra.row_mut(base * f + i);
            for j in 0..m {
                dst[j] += coef * (grads.d_joint.row(i)[j] + grads.d_marginal.row(i)[j]);
            }
        }
        Ok(())
    };
    if settings.beta_on {
        add_penalty(
            statnets,
            win_e,
            &joint_disc,
            &marg_disc,
            0,
            penalty.beta * scale,
        )?;
    }
    if settings.lambda_on {
        let (joint_p, marg_p, win_p) = prior_mats
            .as_ref()
            .expect("lambda_on implies prior batches, checked above");
        add_penalty(
            statnets,
            *win_p,
            joint_p,
            marg_p,
            n_e + n_pi,
            penalty.lambda * scale,
        )?;
    }

    let mut g_pre = vec![0.0; stack.pre.num_params()];
    let mut g_inv = vec![0.0; stack.inv.num_params()];
    stack.backward(&tr, d_logit, Some(&d_z_extra), &mut g_pre, &mut g_inv);
    stack.opt_pre.step(stack.pre.params_mut(), &g_pre);
    stack.opt_inv.step(stack.inv.params_mut(), &g_inv);
    stack.project_spectral();

    let l_beta = if settings.beta_on {
        loss_beta(mi_expert.in_units(penalty.units), penalty.beta)
    } else {
        0.0
    };
    let l_lambda = if settings.lambda_on {
        loss_lambda(
            mi_prior.expect("lambda_on implies priors").in_units(penalty.units),
            penalty.lambda,
            penalty.i_max_prior,
        )
    } else {
        0.0
    };
    Ok(StepBreakdown {
        j_g,
        l_beta,
        l_lambda,
        l_d: -j_g + l_beta + l_lambda,
        mi_expert,
        mi_prior,
        accuracy,
    })
}

fn tie_credit(correct: bool, tie: bool) -> f64 {
    if tie {
        0.5
    } else if correct {
        1.0
    } else {
        0.0
    }
}

/// Gradient scale of an MI value expressed in the configured units, given
/// gradients of the nats-valued bound.
fn unit_scale(units: MiUnits) -> f64 {
    match units {
        MiUnits::Nats => 1.0,
        MiUnits::Bits => std::f64::consts::LOG2_E,
    }
}

/// Separate domain classifier for the confusion-loss baseline: reads single
/// latents and predicts the domain bit.
pub struct DomainClassifier {
    pub net: Mlp,
    opt: Adam,
}

impl DomainClassifier {
    pub fn new<R: Rng>(latent_dim: usize, hidden: usize, lr: f64, rng: &mut R) -> Result<DomainClassifier> {
        let net = Mlp::new(
            &[latent_dim, hidden, hidden, 1],
            Activation::Relu,
            Activation::Identity,
            OutputInit::Zero,
            rng,
        )?;
        let n = net.num_params();
        Ok(DomainClassifier {
            net,
            opt: Adam::new(lr, n),
        })
    }

    /// Held-out classification accuracy on mean-path latents.
    pub fn accuracy(&self, stack: &DiscriminatorStack, frames_1: &[&[f32]], frames_0: &[&[f32]]) -> Result<f64> {
        let mut score = 0.0;
        for (frames, want_high) in [(frames_1, true), (frames_0, false)] {
            let z = stack.frame_latents(frames)?;
            let trace = self.net.forward(&z)?;
            for i in 0..z.rows() {
                let p = sigmoid(trace.output().row(i)[0]);
                let correct = if want_high { p > 0.5 } else { p < 0.5 };
                score += tie_credit(correct, p == 0.5);
            }
        }
        Ok(score / (frames_1.len() + frames_0.len()) as f64)
    }
}

/// Domain recovery from single observations through the sampled latent
/// channel: each held-out frame contributes `eval_draws` latent draws, and
/// every draw is classified by the exact Bayes rule under the two
/// class-conditional Gaussian mixtures the preprocessor induces on the
/// training frames. This is the per-observation leak the information budget
/// constrains, read by the strongest possible classifier; scoring whole
/// windows instead would pool four draws of the same channel and read roughly
/// twice the separability the budget admits.
pub fn latent_domain_probe(
    stack: &DiscriminatorStack,
    train: (&[&[f32]], &[&[f32]]),
    held_out: (&[&[f32]], &[&[f32]]),
    eval_draws: usize,
    rng: &mut ChaCha20Rng,
) -> Result<f64> {
    if eval_draws == 0 {
        return Err(Error::contract("eval_draws must be positive"));
    }
    if train.0.is_empty() || train.1.is_empty() || held_out.0.is_empty() || held_out.1.is_empty() {
        return Err(Error::contract("probe needs frames from both domains"));
    }
    let mix_1 = stack.frame_latent_params(train.0)?;
    let mix_0 = stack.frame_latent_params(train.1)?;
    // Log-likelihood of one draw under an equal-weight Gaussian mixture;
    // the shared (2π)^{-m/2} factor cancels between the two classes.
    let log_mix = |z: &[f64], (means, vars): &(Mat, Mat)| -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut terms = Vec::with_capacity(means.rows());
        for c in 0..means.rows() {
            let mut s = 0.0;
            for j in 0..z.len() {
                let d = z[j] - means.row(c)[j];
                let v = vars.row(c)[j];
                s -= 0.5 * (d * d / v + v.ln());
            }
            best = best.max(s);
            terms.push(s);
        }
        let sum: f64 = terms.iter().map(|t| (t - best).exp()).sum();
        best + sum.ln() - (terms.len() as f64).ln()
    };

    let mut correct = 0.0;
    let mut total = 0usize;
    for _ in 0..eval_draws {
        for (frames, want_one) in [(held_out.0, true), (held_out.1, false)] {
            let z = stack.sampled_frame_latents(frames, rng)?;
            for i in 0..z.rows() {
                let l1 = log_mix(z.row(i), &mix_1);
                let l0 = log_mix(z.row(i), &mix_0);
                correct += tie_credit(if want_one { l1 > l0 } else { l0 > l1 }, l1 == l0);
                total += 1;
            }
        }
    }
    Ok(correct / total as f64)
}

#[derive(Clone, Debug)]
pub struct DclBreakdown {
    pub j_g: f64,
    pub j_dcl: f64,
    pub classifier_accuracy: f64,
}

/// Baseline update: plain adversarial step plus a gradient-reversed domain
/// classifier on single latents. C ascends J_DCL on its own parameters; the
/// preprocessor descends weight × J_DCL (pushing latents toward domain
/// confusion) while ascending J_G. Replaces both MI constraints; enabling it
/// alongside them is rejected at configuration time.
pub fn dcl_step(
    stack: &mut DiscriminatorStack,
    classifier: &mut DomainClassifier,
    batch_e: &[WindowSample<'_>],
    batch_pi: &[WindowSample<'_>],
    weight: f64,
    rng: &mut ChaCha20Rng,
) -> Result<DclBreakdown> {
    if batch_e.is_empty() || batch_pi.is_empty() {
        return Err(Error::contract("both batches must be non-empty"));
    }
    let n_e = batch_e.len();
    let n_pi = batch_pi.len();
    let m = stack.latent_dim;
    let f = stack.frames_used;

    let frames = stack.frames_mat(&[batch_e, batch_pi])?;
    let tr = stack.forward_frames(frames, Some(rng))?;

    let mut j_pos = 0.0;
    let mut j_neg = 0.0;
    let mut d_logit = Mat::zeros(tr.n, 1);
    for i in 0..tr.n {
        let logit = tr.trace_s.output().row(i)[0];
        let p = sigmoid(logit);
        if i < n_e {
            j_pos += -softplus(-logit);
            d_logit.row_mut(i)[0] = -(1.0 - p) / n_e as f64;
        } else {
            j_neg += -softplus(logit);
            d_logit.row_mut(i)[0] = p / n_pi as f64;
        }
    }
    let j_g = j_pos / n_e as f64 + j_neg / n_pi as f64;

    // Domain classification on the frame latents, each taken individually
    // with its window's label: windows from the expert domain are the
    // positive class.
    let n_z = tr.z.rows();
    let c_trace = classifier.net.forward(&tr.z)?;
    let mut j_dcl = 0.0;
    let mut d_c = Mat::zeros(n_z, 1);
    let mut c_correct = 0.0;
    for i in 0..n_z {
        let logit = c_trace.output().row(i)[0];
        let p = sigmoid(logit);
        if i / f < n_e {
            j_dcl += -softplus(-logit) / (n_e * f) as f64;
            d_c.row_mut(i)[0] = (1.0 - p) / (n_e * f) as f64;
            c_correct += tie_credit(p > 0.5, p == 0.5);
        } else {
            j_dcl += -softplus(logit) / (n_pi * f) as f64;
            d_c.row_mut(i)[0] = -p / (n_pi * f) as f64;
            c_correct += tie_credit(p < 0.5, p == 0.5);
        }
    }

    // C takes an ascent step on J_DCL (descent on −J_DCL). The preprocessor
    // receives +weight × dJ_DCL/dz through C's input gradients (descent on
    // weight × J_DCL: gradient reversal).
    let mut g_c = vec![0.0; classifier.net.num_params()];
    let mut d_c_ascent = Mat::zeros(n_z, 1);
    for i in 0..n_z {
        d_c_ascent.row_mut(i)[0] = -d_c.row(i)[0];
    }
    classifier.net.backward(&c_trace, d_c_ascent, Some(&mut g_c), false);

    let mut d_z_extra = Mat::zeros(n_z, m);
    if weight != 0.0 {
        let d_z_c = classifier
            .net
            .backward(&c_trace, d_c, None, true)
            .expect("input gradients requested");
        for i in 0..n_z {
            let dst = d_z_extra.row_mut(i);
            for j in 0..m {
                dst[j] += weight * d_z_c.row(i)[j];
            }
        }
    }

    let mut g_pre = vec![0.0; stack.pre.num_params()];
    let mut g_inv = vec![0.0; stack.inv.num_params()];
    stack.backward(&tr, d_logit, Some(&d_z_extra), &mut g_pre, &mut g_inv);
    stack.opt_pre.step(stack.pre.params_mut(), &g_pre);
    stack.opt_inv.step(stack.inv.params_mut(), &g_inv);
    stack.project_spectral();
    classifier.opt.step(classifier.net.params_mut(), &g_c);

    Ok(DclBreakdown {
        j_g,
        j_dcl,
        classifier_accuracy: c_correct / n_z as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffers::{BufferKind, TrajectoryBuffer};
    use crate::env::{binaryworld_reference, collect_random, make_env, RealmId};
    use crate::mine::mine_step;
    use crate::rng::{stream, Stream};

    fn small_cfg() -> StackConfig {
        StackConfig {
            obs_len: 2,
            latent_dim: 4,
            hidden: 16,
            frames_used: WINDOW,
            spectral_norm: true,
            lr: 1e-3,
        }
    }

    /// Expert/agent reference buffers plus random prior sets, all chain-world.
    fn reference_buffers() -> [TrajectoryBuffer; 4] {
        let (e, a) = binaryworld_reference();
        let expert = TrajectoryBuffer::load(BufferKind::Expert, 100, e.trajectories).unwrap();
        let agent = TrajectoryBuffer::load(BufferKind::PriorAgent, 100, a.trajectories).unwrap();
        let mut env0 = make_env(RealmId::Binaryworld, 0, 31).unwrap();
        let pe = collect_random(&mut env0, 12).unwrap();
        let mut env1 = make_env(RealmId::Binaryworld, 1, 32).unwrap();
        let ppi = collect_random(&mut env1, 12).unwrap();
        [
            expert,
            agent,
            TrajectoryBuffer::load(BufferKind::PriorExpert, 100, pe.trajectories).unwrap(),
            TrajectoryBuffer::load(BufferKind::PriorAgent, 100, ppi.trajectories).unwrap(),
        ]
    }

    fn perturb_output_layer(stack: &mut DiscriminatorStack) {
        let last = stack.invariant_disc().specs().len() - 1;
        let (w, _, _) = stack.invariant_disc_mut().layer_weight_mut(last);
        for (i, x) in w.iter_mut().enumerate() {
            *x = 0.4 * ((i as f64) * 0.7).sin();
        }
    }

    #[test]
    fn untrained_stack_scores_exactly_half() {
        let mut rng = stream(0, Stream::Init);
        let stack = DiscriminatorStack::new(small_cfg(), &mut rng).unwrap();
        let [e, a, pe, ppi] = reference_buffers();
        let mut srng = stream(1, Stream::Sample);
        let we = e.sample_windows(8, &mut srng).unwrap();
        let wa = a.sample_windows(8, &mut srng).unwrap();
        let wpe = pe.sample_windows(4, &mut srng).unwrap();
        let wppi = ppi.sample_windows(4, &mut srng).unwrap();

        let mut nrng = stream(2, Stream::Noise);
        assert_eq!(stack.discriminate(we[0].frames, false, None).unwrap(), 0.5);
        assert_eq!(
            stack.discriminate(we[0].frames, true, Some(&mut nrng)).unwrap(),
            0.5,
            "zero output layer ignores the latent draw"
        );
        assert_eq!(stack.pseudo_reward(we[0].frames).unwrap(), 0.0);
        assert_eq!(stack.accuracy(&[we[0].frames], &[wa[0].frames]).unwrap(), 0.5);

        let j = gail_objective(&stack, &we, &wa, Some((&wpe, &wppi))).unwrap();
        assert!(
            (j + 2.0 * std::f64::consts::LN_2).abs() < 1e-12,
            "S = 0.5 everywhere gives 2 log 0.5, got {j}"
        );
    }

    #[test]
    fn deterministic_path_repeats_stochastic_path_varies() {
        let mut rng = stream(3, Stream::Init);
        let mut stack = DiscriminatorStack::new(small_cfg(), &mut rng).unwrap();
        perturb_output_layer(&mut stack);
        let [e, ..] = reference_buffers();
        let mut srng = stream(4, Stream::Sample);
        let w = e.sample_windows(1, &mut srng).unwrap();

        let a = stack.discriminate(w[0].frames, false, None).unwrap();
        let b = stack.discriminate(w[0].frames, false, None).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());

        let mut nrng = stream(5, Stream::Noise);
        let draws: Vec<f64> = (0..20)
            .map(|_| stack.discriminate(w[0].frames, true, Some(&mut nrng)).unwrap())
            .collect();
        let distinct = draws.windows(2).any(|p| p[0] != p[1]);
        assert!(distinct, "nonzero variance must move the output");
        assert!(stack.discriminate(w[0].frames, true, None).is_err());
    }

    #[test]
    fn wrong_frame_width_is_a_contract_error() {
        let mut rng = stream(6, Stream::Init);
        let stack = DiscriminatorStack::new(small_cfg(), &mut rng).unwrap();
        let short = [0.5f32];
        let window: [&[f32]; WINDOW] = [&short, &short, &short, &short];
        let err = stack.discriminate(window, false, None).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn pseudo_reward_fixed_points_clipping_and_antisymmetry() {
        let mut rng = stream(7, Stream::Init);
        let mut stack = DiscriminatorStack::new(small_cfg(), &mut rng).unwrap();
        let [e, ..] = reference_buffers();
        let mut srng = stream(8, Stream::Sample);
        let w = e.sample_windows(1, &mut srng).unwrap();

        // Zero output weights leave the logit equal to the output bias.
        let set_bias = |s: &mut DiscriminatorStack, b: f64| {
            let n = s.invariant_disc().num_params();
            s.invariant_disc_mut().params_mut()[n - 1] = b;
        };
        set_bias(&mut stack, 9f64.ln());
        let r = stack.pseudo_reward(w[0].frames).unwrap();
        assert!((r - 9f64.ln()).abs() < 1e-12, "D=0.9 rewards ln 9, got {r}");

        set_bias(&mut stack, 20.0);
        let r = stack.pseudo_reward(w[0].frames).unwrap();
        assert!((r - 13.815509557963773).abs() < 1e-12, "clipped at logit of 1-1e-6");

        set_bias(&mut stack, 0.0);
        perturb_output_layer(&mut stack);
        let r = stack.pseudo_reward(w[0].frames).unwrap();
        let last = stack.invariant_disc().specs().len() - 1;
        let (weights, _, _) = stack.invariant_disc_mut().layer_weight_mut(last);
        for x in weights.iter_mut() {
            *x = -*x;
        }
        let flipped = stack.pseudo_reward(w[0].frames).unwrap();
        assert_eq!(flipped.to_bits(), (-r).to_bits(), "label flip negates the log-odds");
    }

    #[test]
    fn breakdown_identity_and_batch_guards() {
        let mut rng = stream(9, Stream::Init);
        let mut stack = DiscriminatorStack::new(small_cfg(), &mut rng).unwrap();
        let mut statnets = StatisticsPair::new(5, 16, 1e-3, &mut rng).unwrap();
        // Give the estimates nonzero values so the identity is non-trivial.
        for p in statnets.nets[0].params_mut().iter_mut() {
            *p += 0.05;
        }
        let mut penalty = PenaltyState::new(0.99, 0.001, 0.01, MiUnits::Bits);
        penalty.beta = 2.5;
        penalty.lambda = 0.75;

        let [e, a, pe, ppi] = reference_buffers();
        let mut srng = stream(10, Stream::Sample);
        let we = e.sample_windows(12, &mut srng).unwrap();
        let wa = a.sample_windows(12, &mut srng).unwrap();
        let wpe = pe.sample_windows(8, &mut srng).unwrap();
        let wppi = ppi.sample_windows(8, &mut srng).unwrap();

        let mut nrng = stream(11, Stream::Noise);
        let b = discriminator_step(
            &mut stack,
            &statnets,
            &penalty,
            StepSettings::default(),
            &we,
            &wa,
            Some((&wpe, &wppi)),
            &mut nrng,
        )
        .unwrap();
        assert!((b.l_d - (-b.j_g + b.l_beta + b.l_lambda)).abs() < 1e-15);
        assert!(b.mi_prior.is_some());

        let err = discriminator_step(
            &mut stack,
            &statnets,
            &penalty,
            StepSettings::default(),
            &we,
            &wa,
            None,
            &mut nrng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "dual penalty needs priors");

        let err =
            discriminator_step(&mut stack, &statnets, &penalty, StepSettings::default(), &[], &wa, Some((&wpe, &wppi)), &mut nrng)
                .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn penalties_touch_the_preprocessor_only() {
        let mut rng = stream(12, Stream::Init);
        let stack_a = DiscriminatorStack::new(small_cfg(), &mut rng).unwrap();
        let stack_b = stack_a.clone();
        let statnets = StatisticsPair::new(5, 16, 1e-3, &mut rng).unwrap();
        let mut statnets_hot = statnets.clone();
        for n in 0..2 {
            let shift = if n == 0 { 0.07 } else { -0.04 };
            for p in statnets_hot.nets[n].params_mut().iter_mut() {
                *p += shift;
            }
        }
        let mut penalty_on = PenaltyState::new(0.99, 0.001, 0.01, MiUnits::Bits);
        penalty_on.beta = 4.0;
        penalty_on.lambda = 2.0;
        let penalty_off = penalty_on.clone();

        let [e, a, pe, ppi] = reference_buffers();
        let mut srng = stream(13, Stream::Sample);
        let we = e.sample_windows(12, &mut srng).unwrap();
        let wa = a.sample_windows(12, &mut srng).unwrap();
        let wpe = pe.sample_windows(8, &mut srng).unwrap();
        let wppi = ppi.sample_windows(8, &mut srng).unwrap();

        let run = |mut stack: DiscriminatorStack, beta_on: bool, lambda_on: bool| {
            let mut nrng = stream(14, Stream::Noise);
            let settings = StepSettings {
                beta_on,
                lambda_on,
                double_stat: true,
            };
            discriminator_step(
                &mut stack,
                &statnets_hot,
                if beta_on { &penalty_on } else { &penalty_off },
                settings,
                &we,
                &wa,
                Some((&wpe, &wppi)),
                &mut nrng,
            )
            .unwrap();
            stack
        };
        let with = run(stack_a, true, true);
        let without = run(stack_b, false, false);
        assert_eq!(
            with.invariant_disc().params(),
            without.invariant_disc().params(),
            "penalty gradients must not reach the invariant discriminator"
        );
        assert_ne!(
            with.preprocessor().params(),
            without.preprocessor().params(),
            "penalty gradients must reach the preprocessor"
        );
    }

    #[test]
    fn spectral_projection_keeps_inv_weights_contractive() {
        let mut rng = stream(15, Stream::Init);
        let mut stack = DiscriminatorStack::new(small_cfg(), &mut rng).unwrap();
        let statnets = StatisticsPair::new(5, 16, 1e-3, &mut rng).unwrap();
        let penalty = PenaltyState::new(0.99, 0.001, 0.01, MiUnits::Bits);
        let [e, a, pe, ppi] = reference_buffers();
        let mut srng = stream(16, Stream::Sample);
        let mut nrng = stream(17, Stream::Noise);
        for _ in 0..30 {
            let we = e.sample_windows(12, &mut srng).unwrap();
            let wa = a.sample_windows(12, &mut srng).unwrap();
            let wpe = pe.sample_windows(8, &mut srng).unwrap();
            let wppi = ppi.sample_windows(8, &mut srng).unwrap();
            discriminator_step(
                &mut stack,
                &statnets,
                &penalty,
                StepSettings::default(),
                &we,
                &wa,
                Some((&wpe, &wppi)),
                &mut nrng,
            )
            .unwrap();
        }
        for l in 0..stack.invariant_disc().specs().len() {
            let (w, rows, cols) = stack.invariant_disc_mut().layer_weight_mut(l);
            let mut probe = w.to_vec();
            let mut v = Vec::new();
            let outcome = spectral_normalize(&mut probe, rows, cols, &mut v, 64);
            assert!(
                outcome.sigma <= 1.05 || outcome.zero_matrix,
                "layer {l} has spectral norm {}",
                outcome.sigma
            );
        }
    }

    /// Noisy newest-frame latents with domain labels. Mean-path latents stay
    /// separable however close the class means get, so the information the
    /// penalty removes is only visible through the sampling noise.
    fn sampled_latents(
        stack: &DiscriminatorStack,
        e: &TrajectoryBuffer,
        a: &TrajectoryBuffer,
        rng: &mut ChaCha20Rng,
    ) -> Mat {
        let m = stack.latent_dim();
        let mut rows: Vec<f64> = Vec::new();
        let mut n_rows = 0;
        for (buf, d) in [(e, 1.0), (a, 0.0)] {
            let frames: Vec<&[f32]> = buf.windows_all().map(|w| w[0]).collect();
            let z = stack.sampled_frame_latents(&frames, rng).unwrap();
            for i in 0..z.rows() {
                rows.extend_from_slice(z.row(i));
                rows.push(d);
                n_rows += 1;
            }
        }
        Mat::from_vec(n_rows, m + 1, rows)
    }

    /// A lone constraint-gradient step (no adversarial term, frozen critic,
    /// plain gradient descent) must descend the critic's lower bound. The
    /// closed-loop interplay with the adversarial objective is exercised by
    /// the training integration tests, where the schedulers participate.
    #[test]
    fn penalty_step_descends_the_constraint_bound() {
        let [e, a, ..] = reference_buffers();
        for seed in 0..4 {
            let mut rng = stream(seed, Stream::Init);
            let mut cfg = small_cfg();
            cfg.spectral_norm = false;
            let mut stack = DiscriminatorStack::new(cfg, &mut rng).unwrap();
            let mut statnets = StatisticsPair::new(5, 16, 5e-3, &mut rng).unwrap();
            let mut mrng = stream(seed + 10, Stream::Noise);
            let mut srng = stream(seed + 20, Stream::Sample);
            for _ in 0..300 {
                let joint = sampled_latents(&stack, &e, &a, &mut mrng);
                let marg = shuffled_marginal(&joint, 1, &mut srng);
                mine_step(&mut statnets.nets[0], &mut statnets.opts[0], &[(&joint, &marg)])
                    .unwrap();
            }
            let we: Vec<[&[f32]; WINDOW]> = e.windows_all().collect();
            let wa: Vec<[&[f32]; WINDOW]> = a.windows_all().collect();
            let all: Vec<[&[f32]; WINDOW]> = we.iter().chain(wa.iter()).cloned().collect();
            let n_e = we.len();
            let build = |stack: &DiscriminatorStack| {
                let fm = stack.frames_mat_plain(&all).unwrap();
                let tr = stack.forward_frames(fm, None).unwrap();
                let m = stack.latent_dim();
                let f = stack.frames_used();
                let mut joint = Mat::zeros(tr.n, m + 1);
                for i in 0..tr.n {
                    joint.row_mut(i)[..m].copy_from_slice(tr.z.row(i * f));
                    joint.row_mut(i)[m] = if i < n_e { 1.0 } else { 0.0 };
                }
                (tr, joint)
            };
            let (tr, joint) = build(&stack);
            let mut marg_rng_a = srng.clone();
            let mut marg_rng_b = srng.clone();
            let marg = shuffled_marginal(&joint, 1, &mut marg_rng_a);
            let net = &statnets.nets[0];
            let before = dv_lower_bound(net, &joint, &marg).unwrap().nats();
            let g = dv_with_input_grads(net, &joint, &marg).unwrap();
            let f = stack.frames_used();
            let m = stack.latent_dim();
            let mut extra = Mat::zeros(tr.z.rows(), m);
            for i in 0..tr.n {
                for j in 0..m {
                    extra.row_mut(i * f)[j] = g.d_joint.row(i)[j] + g.d_marginal.row(i)[j];
                }
            }
            let mut g_pre = vec![0.0; stack.preprocessor().num_params()];
            let mut g_inv = vec![0.0; stack.invariant_disc().num_params()];
            stack.backward(&tr, Mat::zeros(tr.n, 1), Some(&extra), &mut g_pre, &mut g_inv);
            assert!(
                g_inv.iter().all(|&x| x == 0.0),
                "a zero logit gradient must leave the invariant discriminator untouched"
            );
            let lr = 1e-3;
            for (p, gg) in stack.pre.params_mut().iter_mut().zip(&g_pre) {
                *p -= lr * gg;
            }
            let (_, joint2) = build(&stack);
            let marg2 = shuffled_marginal(&joint2, 1, &mut marg_rng_b);
            let after = dv_lower_bound(net, &joint2, &marg2).unwrap().nats();
            assert!(
                after < before,
                "seed {seed}: pure penalty step should lower the fixed-critic bound: {before} -> {after}"
            );
        }
    }

    #[test]
    fn dcl_with_zero_weight_equals_the_plain_adversarial_step() {
        let mut rng = stream(18, Stream::Init);
        let stack_a = DiscriminatorStack::new(small_cfg(), &mut rng).unwrap();
        let stack_b = stack_a.clone();
        let statnets = StatisticsPair::new(5, 16, 1e-3, &mut rng).unwrap();
        let mut clf = DomainClassifier::new(4, 16, 1e-3, &mut rng).unwrap();
        let penalty = PenaltyState::new(0.99, 0.001, 0.01, MiUnits::Bits);

        let [e, a, ..] = reference_buffers();
        let mut srng = stream(19, Stream::Sample);
        let we = e.sample_windows(12, &mut srng).unwrap();
        let wa = a.sample_windows(12, &mut srng).unwrap();

        let mut nrng = stream(20, Stream::Noise);
        let mut plain = stack_a;
        let settings = StepSettings {
            beta_on: false,
            lambda_on: false,
            double_stat: true,
        };
        discriminator_step(&mut plain, &statnets, &penalty, settings, &we, &wa, None, &mut nrng)
            .unwrap();

        let mut nrng = stream(20, Stream::Noise);
        let mut dcl = stack_b;
        let b = dcl_step(&mut dcl, &mut clf, &we, &wa, 0.0, &mut nrng).unwrap();

        assert_eq!(plain.preprocessor().params(), dcl.preprocessor().params());
        assert_eq!(plain.invariant_disc().params(), dcl.invariant_disc().params());
        // Fresh classifier on identical-format batches: chance everything.
        assert!((b.j_dcl + 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(b.classifier_accuracy, 0.5);
    }

    #[test]
    fn single_frame_stack_supports_the_no_history_ablation() {
        let mut cfg = small_cfg();
        cfg.frames_used = 1;
        let mut rng = stream(21, Stream::Init);
        let stack = DiscriminatorStack::new(cfg, &mut rng).unwrap();
        let [e, ..] = reference_buffers();
        let mut srng = stream(22, Stream::Sample);
        let w = e.sample_windows(3, &mut srng).unwrap();
        assert_eq!(stack.discriminate(w[0].frames, false, None).unwrap(), 0.5);
        let windows: Vec<_> = w.iter().map(|s| s.frames).collect();
        let emb = stack.window_embedding(&windows).unwrap();
        assert_eq!(emb.cols(), 4, "one frame of latent width 4");
    }
}
