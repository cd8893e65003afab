//! Mutual information estimation.
//!
//! The latent constraints need `I(z; d)` between a continuous latent `z` and
//! a binary domain label `d` (and, for diagnostics, between stacked latents
//! and a scalar true reward). Closed forms exist only for the discrete toy
//! setting, so the running system uses the Donsker-Varadhan lower bound
//!
//! ```text
//! I(z; d) >= E_joint[T(z, d)] - log E_marginal[exp(T(z, d))]
//! ```
//!
//! maximized over a small statistics network `T`. Marginal pairs come from
//! shuffling the label column within a batch. Two independently initialized
//! statistics networks are trained side by side and the larger of the two
//! bounds is reported; since each is a lower bound, the max is the tighter
//! estimate and protects against one network stalling.
//!
//! Estimates are carried in nats internally; thresholds and reports use bits
//! by default.

use crate::error::{Error, Result};
use crate::nets::mat::Mat;
use crate::nets::{Adam, Mlp};
use rand::seq::SliceRandom;
use rand::Rng;

/// Reporting scale for mutual information values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiUnits {
    Nats,
    Bits,
}

/// A mutual information value; stored in nats, converted on demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    nats: f64,
}

impl MiEstimate {
    pub fn from_nats(nats: f64) -> MiEstimate {
        MiEstimate { nats }
    }

    pub fn from_bits(bits: f64) -> MiEstimate {
        MiEstimate {
            nats: bits * std::f64::consts::LN_2,
        }
    }

    pub fn nats(&self) -> f64 {
        self.nats
    }

    pub fn bits(&self) -> f64 {
        self.nats / std::f64::consts::LN_2
    }

    pub fn in_units(&self, units: MiUnits) -> f64 {
        match units {
            MiUnits::Nats => self.nats(),
            MiUnits::Bits => self.bits(),
        }
    }

    /// Negative estimates (possible for a lower bound on finite batches) are
    /// clamped to zero before feeding penalty schedulers.
    pub fn clamped_non_negative(&self) -> MiEstimate {
        MiEstimate {
            nats: self.nats.max(0.0),
        }
    }
}

/// Statistics-network forward values for one batch.
fn statistics_values(t: &Mlp, batch: &Mat) -> Result<Vec<f64>> {
    if batch.cols() != t.input_dim() {
        return Err(Error::contract(format!(
            "statistics network expects {} inputs, batch has {}",
            t.input_dim(),
            batch.cols()
        )));
    }
    let trace = t.forward(batch)?;
    Ok((0..batch.rows()).map(|i| trace.output().row(i)[0]).collect())
}

/// `log(mean(exp(values)))`, stabilized by max subtraction.
fn log_mean_exp(values: &[f64]) -> f64 {
    let a = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = values.iter().map(|&v| (v - a).exp()).sum();
    a + (s / values.len() as f64).ln()
}

/// Donsker-Varadhan lower bound for a fixed statistics network.
///
/// Rows of `joint` and `marginal` are `[z..., d]` vectors matching the
/// network input width. Both sets must be non-empty.
pub fn dv_lower_bound(t: &Mlp, joint: &Mat, marginal: &Mat) -> Result<MiEstimate> {
    if joint.rows() == 0 || marginal.rows() == 0 {
        return Err(Error::contract(
            "dv_lower_bound needs non-empty joint and marginal sets",
        ));
    }
    let tj = statistics_values(t, joint)?;
    let tm = statistics_values(t, marginal)?;
    let mean_joint = tj.iter().sum::<f64>() / tj.len() as f64;
    Ok(MiEstimate::from_nats(mean_joint - log_mean_exp(&tm)))
}

/// Bound value plus gradients of the bound w.r.t. the statistics-network
/// *inputs* of both sets. Used by the penalty terms, which differentiate the
/// MI estimate through the latents into the preprocessor while leaving the
/// statistics network itself untouched.
pub struct DvInputGrads {
    pub estimate: MiEstimate,
    pub d_joint: Mat,
    pub d_marginal: Mat,
}

pub fn dv_with_input_grads(t: &Mlp, joint: &Mat, marginal: &Mat) -> Result<DvInputGrads> {
    if joint.rows() == 0 || marginal.rows() == 0 {
        return Err(Error::contract(
            "dv_with_input_grads needs non-empty joint and marginal sets",
        ));
    }
    let joint_trace = t.forward(joint)?;
    let marg_trace = t.forward(marginal)?;
    let tj: Vec<f64> = (0..joint.rows()).map(|i| joint_trace.output().row(i)[0]).collect();
    let tm: Vec<f64> = (0..marginal.rows()).map(|i| marg_trace.output().row(i)[0]).collect();
    let mean_joint = tj.iter().sum::<f64>() / tj.len() as f64;
    let lme = log_mean_exp(&tm);

    // dI/dT_joint_i = 1/n_joint; dI/dT_marg_i = -softmax_i(T_marg).
    let mut d_out_joint = Mat::zeros(joint.rows(), 1);
    let wj = 1.0 / tj.len() as f64;
    for i in 0..joint.rows() {
        d_out_joint.row_mut(i)[0] = wj;
    }
    let a = tm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = tm.iter().map(|&v| (v - a).exp()).sum();
    let mut d_out_marg = Mat::zeros(marginal.rows(), 1);
    for i in 0..marginal.rows() {
        d_out_marg.row_mut(i)[0] = -((tm[i] - a).exp() / denom);
    }

    let d_joint = t
        .backward(&joint_trace, d_out_joint, None, true)
        .expect("input gradients requested");
    let d_marginal = t
        .backward(&marg_trace, d_out_marg, None, true)
        .expect("input gradients requested");
    Ok(DvInputGrads {
        estimate: MiEstimate::from_nats(mean_joint - lme),
        d_joint,
        d_marginal,
    })
}

/// One ascent step on a statistics network over the summed bound of the
/// given `(joint, marginal)` pairs. Returns the per-pair estimates measured
/// before the update, in the order given.
pub fn mine_step(
    t: &mut Mlp,
    opt: &mut Adam,
    pairs: &[(&Mat, &Mat)],
) -> Result<Vec<MiEstimate>> {
    if pairs.is_empty() {
        return Err(Error::contract("mine_step needs at least one batch pair"));
    }
    let mut grads = vec![0.0; t.num_params()];
    let mut estimates = Vec::with_capacity(pairs.len());
    for (joint, marginal) in pairs {
        if joint.rows() == 0 || marginal.rows() == 0 {
            return Err(Error::contract("mine_step batches must be non-empty"));
        }
        let joint_trace = t.forward(joint)?;
        let marg_trace = t.forward(marginal)?;
        let tj: Vec<f64> = (0..joint.rows()).map(|i| joint_trace.output().row(i)[0]).collect();
        let tm: Vec<f64> =
            (0..marginal.rows()).map(|i| marg_trace.output().row(i)[0]).collect();
        let mean_joint = tj.iter().sum::<f64>() / tj.len() as f64;
        estimates.push(MiEstimate::from_nats(mean_joint - log_mean_exp(&tm)));

        // Ascent on I: accumulate -dI into the descent buffer.
        let mut d_out_joint = Mat::zeros(joint.rows(), 1);
        let wj = -1.0 / tj.len() as f64;
        for i in 0..joint.rows() {
            d_out_joint.row_mut(i)[0] = wj;
        }
        let a = tm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = tm.iter().map(|&v| (v - a).exp()).sum();
        let mut d_out_marg = Mat::zeros(marginal.rows(), 1);
        for i in 0..marginal.rows() {
            d_out_marg.row_mut(i)[0] = (tm[i] - a).exp() / denom;
        }
        t.backward(&joint_trace, d_out_joint, Some(&mut grads), false);
        t.backward(&marg_trace, d_out_marg, Some(&mut grads), false);
    }
    opt.step(t.params_mut(), &grads);
    Ok(estimates)
}

/// A pair of independently initialized statistics networks with their
/// optimizers. The two never share gradients; only their bound values are
/// compared.
#[derive(Clone)]
pub struct StatisticsPair {
    pub nets: [Mlp; 2],
    pub opts: [Adam; 2],
}

impl StatisticsPair {
    /// Two `input_dim -> 32 -> 32 -> 1` tanh networks with zeroed output
    /// layers (so both start at an exact zero bound) and independent hidden
    /// initializations.
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, lr: f64, rng: &mut R) -> Result<StatisticsPair> {
        let dims = [input_dim, hidden, hidden, 1];
        let a = Mlp::new(
            &dims,
            crate::nets::Activation::Tanh,
            crate::nets::Activation::Identity,
            crate::nets::OutputInit::Zero,
            rng,
        )?;
        let b = Mlp::new(
            &dims,
            crate::nets::Activation::Tanh,
            crate::nets::Activation::Identity,
            crate::nets::OutputInit::Zero,
            rng,
        )?;
        let na = a.num_params();
        let nb = b.num_params();
        Ok(StatisticsPair {
            nets: [a, b],
            opts: [Adam::new(lr, na), Adam::new(lr, nb)],
        })
    }
}

/// Max of the two networks' bounds, plus which network won. Gradient-based
/// consumers must route backward passes only through the winner.
pub fn double_estimate(
    pair: &StatisticsPair,
    joint: &Mat,
    marginal: &Mat,
) -> Result<(MiEstimate, usize)> {
    let a = dv_lower_bound(&pair.nets[0], joint, marginal)?;
    let b = dv_lower_bound(&pair.nets[1], joint, marginal)?;
    if a.nats() >= b.nats() {
        Ok((a, 0))
    } else {
        Ok((b, 1))
    }
}

/// Plug-in mutual information of a discrete joint count table.
///
/// `counts` rows index the values of the first variable, columns the second.
/// Counts must be non-negative with a positive total.
pub fn exact_discrete_mi(counts: &Mat) -> Result<MiEstimate> {
    let total: f64 = counts.data().iter().sum();
    if counts.data().iter().any(|&c| c < 0.0) {
        return Err(Error::contract("counts must be non-negative"));
    }
    if total <= 0.0 {
        return Err(Error::contract("count table must have a positive total"));
    }
    let (nv, nd) = (counts.rows(), counts.cols());
    let mut pv = vec![0.0; nv];
    let mut pd = vec![0.0; nd];
    for v in 0..nv {
        for d in 0..nd {
            let p = counts.row(v)[d] / total;
            pv[v] += p;
            pd[d] += p;
        }
    }
    let mut nats = 0.0;
    for v in 0..nv {
        for d in 0..nd {
            let p = counts.row(v)[d] / total;
            if p > 0.0 {
                nats += p * (p / (pv[v] * pd[d])).ln();
            }
        }
    }
    Ok(MiEstimate::from_nats(nats))
}

/// Marginal set built by shuffling the label column of `joint` within the
/// batch, repeated `k` times and concatenated. Larger `k` tightens the
/// product-measure approximation for final (non-gradient) estimates.
pub fn shuffled_marginal<R: Rng>(joint: &Mat, k: usize, rng: &mut R) -> Mat {
    assert!(k > 0 && joint.rows() > 0);
    let n = joint.rows();
    let cols = joint.cols();
    let mut out = Mat::zeros(n * k, cols);
    let mut perm: Vec<usize> = (0..n).collect();
    for rep in 0..k {
        perm.shuffle(rng);
        for i in 0..n {
            let row = out.row_mut(rep * n + i);
            row.copy_from_slice(joint.row(i));
            row[cols - 1] = joint.row(perm[i])[cols - 1];
        }
    }
    out
}

/// Exact empirical product measure: every `z` row paired with every label.
/// Quadratic in the set size; intended for small discrete tables and tests.
pub fn cross_marginal(joint: &Mat) -> Mat {
    let n = joint.rows();
    let cols = joint.cols();
    let mut out = Mat::zeros(n * n, cols);
    for i in 0..n {
        for j in 0..n {
            let row = out.row_mut(i * n + j);
            row.copy_from_slice(joint.row(i));
            row[cols - 1] = joint.row(j)[cols - 1];
        }
    }
    out
}

/// Trains a fresh statistics pair on `data` (rows `[z..., d]`) and returns
/// the final double estimate.
///
/// Per step, a with-replacement minibatch forms the joint set and a single
/// within-batch shuffle forms the marginal set. The final bound is evaluated
/// on `eval` (or on `data` when absent) against a marginal set of
/// `eval_shuffles` concatenated shuffles to cut the product-measure noise.
pub fn fit_mi<R: Rng>(
    data: &Mat,
    eval: Option<&Mat>,
    steps: usize,
    batch: usize,
    eval_shuffles: usize,
    rng: &mut R,
) -> Result<MiEstimate> {
    if data.rows() < 2 {
        return Err(Error::contract("fit_mi needs at least two samples"));
    }
    let mut pair = StatisticsPair::new(data.cols(), 32, 1e-3, rng)?;
    let mut batch_mat = Mat::zeros(batch.min(data.rows()).max(2), data.cols());
    for _ in 0..steps {
        for i in 0..batch_mat.rows() {
            let idx = rng.gen_range(0..data.rows());
            batch_mat.row_mut(i).copy_from_slice(data.row(idx));
        }
        let marginal = shuffled_marginal(&batch_mat, 1, rng);
        for n in 0..2 {
            mine_step(&mut pair.nets[n], &mut pair.opts[n], &[(&batch_mat, &marginal)])?;
        }
    }
    let eval_set = eval.unwrap_or(data);
    let marginal = shuffled_marginal(eval_set, eval_shuffles, rng);
    let (estimate, _) = double_estimate(&pair, eval_set, &marginal)?;
    Ok(estimate)
}

/// Samples `n` correlated standard-Gaussian pairs with correlation `rho`,
/// as rows `[x, y]`. The closed-form mutual information of this family,
/// `-0.5 * ln(1 - rho^2)` nats, anchors the estimator tests.
pub fn bivariate_gaussian_joint<R: Rng>(rho: f64, n: usize, rng: &mut R) -> Mat {
    assert!((-1.0..1.0).contains(&rho), "|rho| < 1 required");
    let mut out = Mat::zeros(n, 2);
    for i in 0..n {
        let z1: f64 = rng.sample(rand_distr::StandardNormal);
        let z2: f64 = rng.sample(rand_distr::StandardNormal);
        let row = out.row_mut(i);
        row[0] = z1;
        row[1] = rho * z1 + (1.0 - rho * rho).sqrt() * z2;
    }
    out
}

/// Closed-form MI of the bivariate Gaussian family, in nats.
pub fn gaussian_mi_nats(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}
