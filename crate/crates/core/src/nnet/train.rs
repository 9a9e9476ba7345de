//! Mini-batch training with reverse-mode gradients.
//!
//! The objective for one batch of size B is
//!
//! ```text
//! J = (1/B) Σ_b loss(f(x_b), y_b)  +  (λ/B) Σ_b KL(p(·|x_b) ‖ w(·|x_b))
//! ```
//!
//! where the second term appears only when an [`AlignmentConfig`] is set:
//! `p` is the likelihood-weighted posterior over a random atom subsample of
//! a reference library and `w` the embedding-space attribution weights the
//! network currently produces over the same atoms. Gradients flow into the
//! embeddings of both the queries and the atoms.
//!
//! Everything is deterministic given the config seed: initialization,
//! batch order (one shuffle stream per epoch), and atom subsampling each
//! draw from independent derived streams, so runs with equal seeds produce
//! bit-identical weights.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nnet::loss::LossSpec;
use crate::nnet::{ForwardPass, Network, OutputHead};
use crate::oracle::{
    kl_divergence_floored, softmax_neg_sq_dist, median_sq_bandwidth, ReferenceLibrary, KL_EPS,
};
use crate::rng::{domains, RngStream};

/// First-order update rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Sgd { lr: f64 },
}

impl Optimizer {
    /// Adam with the usual defaults β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn adam(lr: f64) -> Optimizer {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    fn validate(&self) -> Result<()> {
        let lr = match self {
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                for (name, v, hi) in [("beta1", *beta1, 1.0), ("beta2", *beta2, 1.0)] {
                    if !(v >= 0.0 && v < hi) {
                        return Err(Error::Validation(format!("{name} must be in [0, 1), got {v}")));
                    }
                }
                if !(*eps > 0.0) {
                    return Err(Error::Validation(format!("adam eps must be > 0, got {eps}")));
                }
                *lr
            }
            Optimizer::Sgd { lr } => *lr,
        };
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Validation(format!("learning rate must be finite and > 0, got {lr}")));
        }
        Ok(())
    }
}

/// How the embedding-space kernel bandwidth h² is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthMode {
    /// Median squared pairwise distance between all library embeddings,
    /// recomputed at the start of every epoch (embeddings move).
    MedianPerEpoch,
    /// A fixed h² > 0.
    Fixed(f64),
}

/// Attribution-alignment hook: adds λ·KL(posterior ‖ attribution) to the
/// batch objective against a per-batch random atom subsample.
#[derive(Debug, Clone)]
pub struct AlignmentConfig {
    /// Weight λ of the KL term (λ ≥ 0).
    pub lambda: f64,
    /// Reference library supplying atoms, their inputs and noiseless windows.
    pub library: Arc<ReferenceLibrary>,
    /// Observation noise of the likelihood defining the target posterior.
    pub obs_sigma: f64,
    /// Atoms drawn per batch (capped at the library size).
    pub subsample: usize,
    pub bandwidth: BandwidthMode,
}

impl AlignmentConfig {
    fn validate(&self, input_dim: usize) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Validation(format!("lambda must be finite and ≥ 0, got {}", self.lambda)));
        }
        if !(self.obs_sigma > 0.0) {
            return Err(Error::Validation(format!("obs_sigma must be > 0, got {}", self.obs_sigma)));
        }
        if self.subsample == 0 {
            return Err(Error::Validation("alignment subsample must be ≥ 1".into()));
        }
        if self.library.inputs().ncols() != input_dim {
            return Err(Error::Shape(format!(
                "library input width {} vs network input width {input_dim}",
                self.library.inputs().ncols()
            )));
        }
        if let BandwidthMode::Fixed(h_sq) = self.bandwidth {
            if !(h_sq > 0.0) || !h_sq.is_finite() {
                return Err(Error::Validation(format!("fixed bandwidth must be finite and > 0, got {h_sq}")));
            }
        }
        Ok(())
    }
}

/// Full training configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub alignment: Option<AlignmentConfig>,
}

impl TrainConfig {
    /// Plain Adam training without alignment.
    pub fn new(optimizer: Optimizer, epochs: usize, batch_size: usize, seed: u64) -> TrainConfig {
        TrainConfig { optimizer, epochs, batch_size, seed, alignment: None }
    }
}

/// Per-epoch diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean prediction loss per example (excludes the λ·KL term).
    pub mean_loss: f64,
    /// Mean unscaled KL per example; `None` without an alignment hook.
    pub mean_kl: Option<f64>,
    /// Cross-entropy probability clamps observed this epoch.
    pub clamp_events: usize,
    /// Attribution weights that hit the KL probability floor this epoch.
    pub kl_floor_events: usize,
}

/// Diagnostics for a whole run, in epoch order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }

    pub fn final_kl(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.mean_kl)
    }
}

/// Per-layer gradient accumulators, same shapes as the network parameters.
pub(crate) struct Grads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl Grads {
    pub(crate) fn zeros_like(net: &Network) -> Grads {
        Grads {
            w: net.weights().iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            b: net.biases().iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    fn reset(&mut self) {
        for w in &mut self.w {
            w.fill(0.0);
        }
        for b in &mut self.b {
            b.fill(0.0);
        }
    }
}

struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    step: u64,
}

impl AdamState {
    fn zeros_like(net: &Network) -> AdamState {
        AdamState {
            m_w: net.weights().iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: net.weights().iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: net.biases().iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: net.biases().iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            step: 0,
        }
    }
}

fn adam_update_tensor<D: ndarray::Dimension>(
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    Zip::from(param).and(grad).and(m).and(v).for_each(|p, &g, m, v| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    });
}

fn apply_update(net: &mut Network, grads: &Grads, opt: &Optimizer, adam: &mut AdamState) {
    match *opt {
        Optimizer::Sgd { lr } => {
            for (w, g) in net.weights_mut().iter_mut().zip(&grads.w) {
                Zip::from(w).and(g).for_each(|p, &g| *p -= lr * g);
            }
            for (b, g) in net.biases_mut().iter_mut().zip(&grads.b) {
                Zip::from(b).and(g).for_each(|p, &g| *p -= lr * g);
            }
        }
        Optimizer::Adam { lr, beta1, beta2, eps } => {
            adam.step += 1;
            let bc1 = 1.0 - beta1.powi(adam.step as i32);
            let bc2 = 1.0 - beta2.powi(adam.step as i32);
            for l in 0..grads.w.len() {
                adam_update_tensor(
                    &mut net.weights_mut()[l],
                    &grads.w[l],
                    &mut adam.m_w[l],
                    &mut adam.v_w[l],
                    lr, beta1, beta2, eps, bc1, bc2,
                );
                adam_update_tensor(
                    &mut net.biases_mut()[l],
                    &grads.b[l],
                    &mut adam.m_b[l],
                    &mut adam.v_b[l],
                    lr, beta1, beta2, eps, bc1, bc2,
                );
            }
        }
    }
}

/// Gradient of the scaled batch loss at the final pre-activations, plus the
/// summed per-example loss and the number of probability clamps.
///
/// Cross-entropy through a softmax head uses the fused form
/// `scale · (p − y)`; every other (loss, head) pairing chains the loss
/// gradient through the head Jacobian.
pub(crate) fn output_delta(
    loss: LossSpec,
    head: OutputHead,
    outputs: &Array2<f64>,
    targets: ArrayView2<f64>,
    scale: f64,
) -> Result<(Array2<f64>, f64, usize)> {
    let (rows, cols) = outputs.dim();
    let mut d_pre = Array2::zeros((rows, cols));
    let mut loss_sum = 0.0;
    let mut clamps = 0usize;
    for r in 0..rows {
        let out_row = outputs.row(r);
        let tgt_row = targets.row(r);
        let (value, clamped) = loss.value_counting(out_row, tgt_row)?;
        loss_sum += value;
        clamps += clamped;
        match (loss, head) {
            (LossSpec::CrossEntropy, OutputHead::Softmax) => {
                for c in 0..cols {
                    d_pre[[r, c]] = scale * (out_row[c] - tgt_row[c]);
                }
            }
            (_, OutputHead::Linear) => {
                let da = loss.grad(out_row, tgt_row)?;
                for c in 0..cols {
                    d_pre[[r, c]] = scale * da[c];
                }
            }
            (_, OutputHead::Softmax) => {
                // dz = p ⊙ da − p (p · da)
                let da = loss.grad(out_row, tgt_row)?;
                let dot: f64 = out_row.iter().zip(da.iter()).map(|(&p, &d)| p * d).sum();
                for c in 0..cols {
                    d_pre[[r, c]] = scale * (out_row[c] * (da[c] - dot));
                }
            }
        }
    }
    Ok((d_pre, loss_sum, clamps))
}

/// Accumulate parameter gradients for one forward pass by reverse
/// traversal. `d_pre_last` is the gradient at the final pre-activations;
/// `d_embedding`, when present, is injected at the last hidden activations
/// (the embedding level) on top of what flows down from the output layer.
pub(crate) fn accumulate_backward(
    net: &Network,
    pass: &ForwardPass,
    d_pre_last: Array2<f64>,
    d_embedding: Option<&Array2<f64>>,
    grads: &mut Grads,
) {
    let layers = net.spec().layer_count();
    let act = net.spec().activation;
    let mut d_pre = d_pre_last;
    for l in (0..layers).rev() {
        grads.w[l] += &d_pre.t().dot(&pass.post[l]);
        grads.b[l] += &d_pre.sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        let mut d_post = d_pre.dot(&net.weights()[l]);
        if l == layers - 1 {
            if let Some(de) = d_embedding {
                d_post += de;
            }
        }
        d_post.zip_mut_with(&pass.pre[l - 1], |g, &z| *g *= act.derivative(z));
        d_pre = d_post;
    }
}

/// Draw `k` distinct indices from `0..m` (all of them when k ≥ m) by a
/// partial Fisher–Yates pass.
fn sample_distinct(rng: &mut RngStream, m: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..m).collect();
    if k >= m {
        return pool;
    }
    for i in 0..k {
        let j = i + rng.next_index(m - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Atom data gathered once per batch.
pub(crate) struct AlignmentBatch {
    pub atom_inputs: Array2<f64>,
    pub atom_noiseless: Array2<f64>,
    pub obs_sigma: f64,
    pub h_sq: f64,
}

impl AlignmentBatch {
    pub(crate) fn gather(
        lib: &ReferenceLibrary,
        atoms: &[usize],
        obs_sigma: f64,
        h_sq: f64,
    ) -> AlignmentBatch {
        let width = lib.inputs().ncols();
        let mut atom_inputs = Array2::zeros((atoms.len(), width));
        let mut atom_noiseless = Array2::zeros((atoms.len(), width));
        for (row, &i) in atoms.iter().enumerate() {
            atom_inputs.row_mut(row).assign(&lib.inputs().row(i));
            atom_noiseless.row_mut(row).assign(&lib.noiseless().row(i));
        }
        AlignmentBatch { atom_inputs, atom_noiseless, obs_sigma, h_sq }
    }
}

pub(crate) struct AlignmentOutcome {
    pub kl_sum: f64,
    pub floor_events: usize,
    /// Gradient injected at the query embeddings (B×H), already scaled.
    pub d_query_emb: Array2<f64>,
    /// Gradient injected at the atom embeddings (k×H), already scaled.
    pub d_atom_emb: Array2<f64>,
    /// Forward pass of the atoms, reused for their backward traversal.
    pub atom_pass: ForwardPass,
}

/// Compute the batch KL term and its gradients with respect to both the
/// query and the atom embeddings. `lambda_over_b` is λ/B, the factor the
/// KL term carries in the batch objective.
pub(crate) fn alignment_grads(
    net: &Network,
    batch_inputs: ArrayView2<f64>,
    query_emb: &Array2<f64>,
    ab: &AlignmentBatch,
    lambda_over_b: f64,
) -> Result<AlignmentOutcome> {
    let atom_pass = net.forward_batch(ab.atom_inputs.view())?;
    let atom_emb = atom_pass.embeddings();
    let b = batch_inputs.nrows();
    let k = ab.atom_inputs.nrows();
    let h = query_emb.ncols();
    let mut d_query_emb = Array2::zeros((b, h));
    let mut d_atom_emb = Array2::zeros((k, h));
    let mut kl_sum = 0.0;
    let mut floor_events = 0usize;
    let two_sigma_sq = 2.0 * ab.obs_sigma * ab.obs_sigma;
    for r in 0..b {
        let (target, _) =
            softmax_neg_sq_dist(batch_inputs.row(r), ab.atom_noiseless.view(), two_sigma_sq);
        let (attr, attr_fallback) =
            softmax_neg_sq_dist(query_emb.row(r), atom_emb.view(), ab.h_sq);
        let (kl, floored) = kl_divergence_floored(&target, &attr);
        kl_sum += kl;
        floor_events += floored;
        if attr_fallback {
            // Degenerate point-mass weights carry no usable gradient.
            continue;
        }
        // d KL / d s_j for softmax scores s with the attr side floored:
        // g_j = −p_j·[w_j > ε] + w_j · Σ_{i: w_i > ε} p_i.
        let active_mass: f64 = target
            .iter()
            .zip(attr.iter())
            .filter(|(_, &w)| w > KL_EPS)
            .map(|(&p, _)| p)
            .sum();
        for j in 0..k {
            let indicator = if attr[j] > KL_EPS { target[j] } else { 0.0 };
            let g = lambda_over_b * (attr[j] * active_mass - indicator);
            if g == 0.0 {
                continue;
            }
            // s_j = −‖e_q − e_{a_j}‖²/h², so ∂s_j/∂e_q = −2(e_q − e_{a_j})/h².
            let coeff = -2.0 / ab.h_sq * g;
            for c in 0..h {
                let diff = query_emb[[r, c]] - atom_emb[[j, c]];
                d_query_emb[[r, c]] += coeff * diff;
                d_atom_emb[[j, c]] -= coeff * diff;
            }
        }
    }
    Ok(AlignmentOutcome { kl_sum, floor_events, d_query_emb, d_atom_emb, atom_pass })
}

/// Embedding-space bandwidth for one epoch under the configured mode.
fn epoch_bandwidth(net: &Network, al: &AlignmentConfig) -> Result<f64> {
    match al.bandwidth {
        BandwidthMode::Fixed(h_sq) => Ok(h_sq),
        BandwidthMode::MedianPerEpoch => {
            let pass = net.forward_batch(al.library.inputs().view())?;
            median_sq_bandwidth(pass.embeddings().view())
        }
    }
}

/// Train with a per-epoch observer. The observer sees the epoch index, the
/// network state after that epoch's updates, and the epoch statistics; an
/// error from it aborts training.
pub fn train_observed<F>(
    mut net: Network,
    ds: &Dataset,
    cfg: &TrainConfig,
    loss: LossSpec,
    mut on_epoch: F,
) -> Result<(Network, TrainHistory)>
where
    F: FnMut(usize, &Network, &EpochStats) -> Result<()>,
{
    cfg.optimizer.validate()?;
    loss.validate()?;
    if cfg.epochs == 0 {
        return Err(Error::Validation("epochs must be ≥ 1".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Validation("batch size must be ≥ 1".into()));
    }
    if ds.len() == 0 {
        return Err(Error::Validation("training dataset is empty".into()));
    }
    if ds.input_dim() != net.spec().input_dim() {
        return Err(Error::Shape(format!(
            "dataset input width {} vs network input width {}",
            ds.input_dim(),
            net.spec().input_dim()
        )));
    }
    if ds.target_dim() != net.spec().output_dim() {
        return Err(Error::Shape(format!(
            "dataset target width {} vs network output width {}",
            ds.target_dim(),
            net.spec().output_dim()
        )));
    }
    if let Some(al) = &cfg.alignment {
        al.validate(net.spec().input_dim())?;
    }

    let n = ds.len();
    let mut adam = AdamState::zeros_like(&net);
    let mut grads = Grads::zeros_like(&net);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        RngStream::derived(cfg.seed, domains::TRAIN_BATCH, epoch as u64).shuffle(&mut order);
        let h_sq = match &cfg.alignment {
            Some(al) => Some(epoch_bandwidth(&net, al)?),
            None => None,
        };
        let mut atom_rng = RngStream::derived(cfg.seed, domains::ALIGN_SUBSAMPLE, epoch as u64);

        let mut loss_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut clamp_events = 0usize;
        let mut floor_events = 0usize;

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = ds.inputs().select(Axis(0), chunk);
            let yb = ds.targets().select(Axis(0), chunk);
            let b = chunk.len() as f64;
            let pass = net.forward_batch(xb.view())?;
            let (d_pre_last, batch_loss, clamps) = output_delta(
                loss,
                net.spec().head,
                pass.outputs(),
                yb.view(),
                1.0 / b,
            )?;
            clamp_events += clamps;

            let align = match &cfg.alignment {
                Some(al) => {
                    let atoms =
                        sample_distinct(&mut atom_rng, al.library.len(), al.subsample);
                    let ab = AlignmentBatch::gather(
                        &al.library,
                        &atoms,
                        al.obs_sigma,
                        h_sq.expect("bandwidth computed when alignment set"),
                    );
                    Some((
                        alignment_grads(
                            &net,
                            xb.view(),
                            pass.embeddings(),
                            &ab,
                            al.lambda / b,
                        )?,
                        al.lambda,
                    ))
                }
                None => None,
            };

            let batch_kl = align.as_ref().map(|(o, _)| o.kl_sum).unwrap_or(0.0);
            let lambda = align.as_ref().map(|(_, l)| *l).unwrap_or(0.0);
            let batch_objective = (batch_loss + lambda * batch_kl) / b;
            if !batch_objective.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_idx });
            }
            loss_sum += batch_loss;
            kl_sum += batch_kl;

            grads.reset();
            match align {
                Some((outcome, _)) => {
                    floor_events += outcome.floor_events;
                    accumulate_backward(
                        &net,
                        &pass,
                        d_pre_last,
                        Some(&outcome.d_query_emb),
                        &mut grads,
                    );
                    let zero_out =
                        Array2::zeros((outcome.atom_pass.outputs().nrows(), net.spec().output_dim()));
                    accumulate_backward(
                        &net,
                        &outcome.atom_pass,
                        zero_out,
                        Some(&outcome.d_atom_emb),
                        &mut grads,
                    );
                }
                None => accumulate_backward(&net, &pass, d_pre_last, None, &mut grads),
            }
            apply_update(&mut net, &grads, &cfg.optimizer, &mut adam);
        }

        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / n as f64,
            mean_kl: cfg.alignment.as_ref().map(|_| kl_sum / n as f64),
            clamp_events,
            kl_floor_events: floor_events,
        };
        on_epoch(epoch, &net, &stats)?;
        history.epochs.push(stats);
    }
    Ok((net, history))
}

/// Train without an observer.
pub fn train(
    net: Network,
    ds: &Dataset,
    cfg: &TrainConfig,
    loss: LossSpec,
) -> Result<(Network, TrainHistory)> {
    train_observed(net, ds, cfg, loss, |_, _, _| Ok(()))
}
