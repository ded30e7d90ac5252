//! Per-view evidence heads, the fused forward pass, reverse-mode gradients
//! through Dempster fusion and the evidential loss, Adam, and the training
//! loop.
//!
//! Each head is `softplus(W2 · relu(W1 · x + b1) + b2)`. Parameters of a head
//! live in one flat vector in declaration order `W1, b1, W2, b2`, matrices
//! row-major; the optimizer and the checkpoint format both use that layout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::loss::{anneal_coefficient, overall_loss, LabelVector, OverallLoss};
use crate::opinion::{
    combine_all, combine_pair_backward, dirichlet_from_opinion, expected_probs,
    opinion_from_evidence, DirichletParams, EvidenceVector, Opinion, OpinionGrad,
};
use crate::rng;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EVMV-MDL";
pub const CHECKPOINT_VERSION: u32 = 1;

const SOFTPLUS_LINEAR_ABOVE: f64 = 20.0;
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

fn softplus(z: f64) -> f64 {
    if z > SOFTPLUS_LINEAR_ABOVE {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn softplus_grad(z: f64) -> f64 {
    if z > SOFTPLUS_LINEAR_ABOVE {
        1.0
    } else {
        1.0 / (1.0 + (-z).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl HeadConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 64,
            num_classes,
        }
    }

    pub fn num_params(&self) -> usize {
        self.hidden_dim * self.input_dim + self.hidden_dim + self.num_classes * self.hidden_dim
            + self.num_classes
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_classes < 2 {
            return Err(Error::Config(format!("invalid head shape {self:?}")));
        }
        Ok(())
    }
}

/// One view's evidence network.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceHead {
    config: HeadConfig,
    params: Vec<f64>,
}

/// Activations of one head kept for the backward pass.
struct HeadTrace {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    out_pre: Vec<f64>,
    evidence: Vec<f64>,
}

impl EvidenceHead {
    pub fn zeros(config: HeadConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            params: vec![0.0; config.num_params()],
        })
    }

    pub fn from_params(config: HeadConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.num_params() {
            return Err(Error::Dimension(format!(
                "head {config:?} needs {} parameters, got {}",
                config.num_params(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("head parameters must be finite".into()));
        }
        Ok(Self { config, params })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: rand::RngCore>(config: HeadConfig, rng: &mut R) -> Result<Self> {
        let mut head = Self::zeros(config)?;
        let (i, h, k) = (config.input_dim, config.hidden_dim, config.num_classes);
        let a1 = (6.0 / (i + h) as f64).sqrt();
        let a2 = (6.0 / (h + k) as f64).sqrt();
        let (w1, rest) = head.params.split_at_mut(h * i);
        for w in w1 {
            *w = rng::symmetric(rng, a1);
        }
        for w in &mut rest[h..h + k * h] {
            *w = rng::symmetric(rng, a2);
        }
        Ok(head)
    }

    pub fn config(&self) -> HeadConfig {
        self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Hidden-layer pre-activations `W1 x + b1`; the head is not
    /// differentiable where any of them is zero.
    pub fn hidden_preactivations(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.hidden_pre)
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let HeadConfig {
            input_dim: i,
            hidden_dim: h,
            num_classes: k,
        } = self.config;
        let b1 = h * i;
        let w2 = b1 + h;
        let b2 = w2 + k * h;
        (b1, w2, b2)
    }

    fn trace(&self, x: &[f64]) -> Result<HeadTrace> {
        let HeadConfig {
            input_dim: i,
            hidden_dim: h,
            num_classes: k,
        } = self.config;
        if x.len() != i {
            return Err(Error::Dimension(format!(
                "head expects {i} features, got {}",
                x.len()
            )));
        }
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let hidden_pre: Vec<f64> = (0..h)
            .map(|r| {
                let row = &p[r * i..(r + 1) * i];
                p[b1 + r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        let hidden: Vec<f64> = hidden_pre.iter().map(|&a| a.max(0.0)).collect();
        let out_pre: Vec<f64> = (0..k)
            .map(|r| {
                let row = &p[w2 + r * h..w2 + (r + 1) * h];
                p[b2 + r] + row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        let evidence = out_pre.iter().map(|&z| softplus(z)).collect();
        Ok(HeadTrace {
            hidden_pre,
            hidden,
            out_pre,
            evidence,
        })
    }

    /// Accumulates parameter gradients given `d loss / d evidence`.
    fn backward_into(&self, x: &[f64], trace: &HeadTrace, grad_evidence: &[f64], out: &mut [f64]) {
        let HeadConfig {
            input_dim: i,
            hidden_dim: h,
            num_classes: k,
        } = self.config;
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let g_out: Vec<f64> = grad_evidence
            .iter()
            .zip(&trace.out_pre)
            .map(|(g, &z)| g * softplus_grad(z))
            .collect();
        let mut g_hidden = vec![0.0; h];
        for r in 0..k {
            out[b2 + r] += g_out[r];
            for c in 0..h {
                out[w2 + r * h + c] += g_out[r] * trace.hidden[c];
                g_hidden[c] += g_out[r] * p[w2 + r * h + c];
            }
        }
        for r in 0..h {
            if trace.hidden_pre[r] <= 0.0 {
                continue;
            }
            let g = g_hidden[r];
            out[b1 + r] += g;
            for c in 0..i {
                out[r * i + c] += g * x[c];
            }
        }
    }
}

/// Maps one view's features to its evidence vector.
pub fn head_forward(head: &EvidenceHead, features: &[f64]) -> Result<EvidenceVector> {
    EvidenceVector::new(head.trace(features)?.evidence)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub anneal_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 12,
            max_epochs: 15,
            anneal_epochs: 10,
            patience: 3,
            seed: 42,
            hidden_dim: 64,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.anneal_epochs > 0
            && self.patience > 0
            && self.hidden_dim > 0
            && self.adam_eps > 0.0;
        let betas = (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2);
        if !(positive && betas) {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// One evidence head per view plus the configuration they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub heads: Vec<EvidenceHead>,
    pub view_names: Vec<String>,
    pub num_classes: usize,
    pub train_config: TrainConfig,
}

impl ModelBundle {
    pub fn new(
        heads: Vec<EvidenceHead>,
        view_names: Vec<String>,
        train_config: TrainConfig,
    ) -> Result<Self> {
        let first = heads
            .first()
            .ok_or(Error::Empty("a model needs at least one head"))?;
        let num_classes = first.config.num_classes;
        if heads.iter().any(|h| h.config.num_classes != num_classes) {
            return Err(Error::Dimension("heads disagree on the number of classes".into()));
        }
        if view_names.len() != heads.len() {
            return Err(Error::Dimension(format!(
                "{} heads but {} view names",
                heads.len(),
                view_names.len()
            )));
        }
        Ok(Self {
            heads,
            view_names,
            num_classes,
            train_config,
        })
    }

    /// Freshly initialized heads sized for `dataset`'s views.
    pub fn for_dataset(dataset: &LabeledDataset, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init = rng::stream(config.seed, INIT_STREAM);
        let heads = dataset
            .views()
            .iter()
            .map(|v| {
                let cfg = HeadConfig {
                    input_dim: v.dims(),
                    hidden_dim: config.hidden_dim,
                    num_classes: dataset.num_classes,
                };
                EvidenceHead::init(cfg, &mut init)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(heads, dataset.view_names(), config.clone())
    }

    pub fn num_views(&self) -> usize {
        self.heads.len()
    }

    /// The same model without view `index` (view ablation).
    pub fn without_view(&self, index: usize) -> Result<Self> {
        if index >= self.heads.len() {
            return Err(Error::Config(format!("no view at index {index}")));
        }
        let mut heads = self.heads.clone();
        let mut names = self.view_names.clone();
        heads.remove(index);
        names.remove(index);
        Self::new(heads, names, self.train_config.clone())
    }

    /// Keeps the named heads, in the order given.
    pub fn select_views<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let mut heads = Vec::new();
        for n in names {
            let i = self
                .view_names
                .iter()
                .position(|v| v == n.as_ref())
                .ok_or_else(|| Error::Config(format!("model has no view {}", n.as_ref())))?;
            heads.push(self.heads[i].clone());
        }
        Self::new(
            heads,
            names.iter().map(|n| n.as_ref().to_string()).collect(),
            self.train_config.clone(),
        )
    }

    pub fn check_dataset(&self, ds: &LabeledDataset) -> Result<()> {
        if ds.num_classes != self.num_classes {
            return Err(Error::Dimension(format!(
                "model has {} classes, dataset {}",
                self.num_classes, ds.num_classes
            )));
        }
        if ds.views().len() != self.heads.len() {
            return Err(Error::Dimension(format!(
                "model has {} views, dataset {}",
                self.heads.len(),
                ds.views().len()
            )));
        }
        for ((head, view), name) in self.heads.iter().zip(ds.views()).zip(&self.view_names) {
            if &view.name != name || view.dims() != head.config.input_dim {
                return Err(Error::Dimension(format!(
                    "model view {name} ({} dims) does not match dataset view {} ({} dims)",
                    head.config.input_dim,
                    view.name,
                    view.dims()
                )));
            }
        }
        Ok(())
    }
}

/// Fused prediction for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub predicted_class: usize,
    pub fused_probs: Vec<f64>,
    pub fused_uncertainty: f64,
    pub fused_opinion: Opinion,
    pub per_view_opinions: Vec<Opinion>,
    pub final_conflict: f64,
    pub step_conflicts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub fused: DirichletParams,
    pub per_view: Vec<DirichletParams>,
    pub record: PredictionRecord,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct SampleTrace {
    traces: Vec<HeadTrace>,
    opinions: Vec<Opinion>,
    per_view: Vec<DirichletParams>,
    /// Running fold results `o_0 = m_0, o_v = o_{v-1} ⊕ m_v`.
    partials: Vec<Opinion>,
    fused: DirichletParams,
    record: PredictionRecord,
}

fn check_sample<F: AsRef<[f64]>>(bundle: &ModelBundle, features: &[F]) -> Result<()> {
    if features.len() != bundle.heads.len() {
        return Err(Error::Dimension(format!(
            "model has {} views, sample has {}",
            bundle.heads.len(),
            features.len()
        )));
    }
    Ok(())
}

fn forward_trace<F: AsRef<[f64]>>(
    bundle: &ModelBundle,
    sample_id: &str,
    features: &[F],
) -> Result<SampleTrace> {
    check_sample(bundle, features)?;
    let mut traces = Vec::with_capacity(features.len());
    let mut opinions = Vec::with_capacity(features.len());
    let mut per_view = Vec::with_capacity(features.len());
    for (head, x) in bundle.heads.iter().zip(features) {
        let trace = head.trace(x.as_ref())?;
        let (o, d) = opinion_from_evidence(&EvidenceVector::new(trace.evidence.clone())?);
        traces.push(trace);
        opinions.push(o);
        per_view.push(d);
    }
    let mut partials = Vec::with_capacity(opinions.len());
    partials.push(opinions[0].clone());
    for o in &opinions[1..] {
        let next = crate::opinion::combine_pair(partials.last().unwrap(), o)?.opinion;
        partials.push(next);
    }
    let outcome = combine_all(&opinions)?;
    debug_assert_eq!(&outcome.opinion, partials.last().unwrap());
    let fused = dirichlet_from_opinion(&outcome.opinion)?;
    let fused_probs = expected_probs(&fused);
    let record = PredictionRecord {
        sample_id: sample_id.to_string(),
        predicted_class: argmax(&fused_probs),
        fused_probs,
        fused_uncertainty: outcome.opinion.uncertainty(),
        fused_opinion: outcome.opinion,
        per_view_opinions: opinions.clone(),
        final_conflict: outcome.conflict,
        step_conflicts: outcome.step_conflicts,
    };
    Ok(SampleTrace {
        traces,
        opinions,
        per_view,
        partials,
        fused,
        record,
    })
}

/// Evidence per view, opinions, Dempster fusion and the fused Dirichlet.
pub fn forward_fused<F: AsRef<[f64]>>(
    bundle: &ModelBundle,
    sample_id: &str,
    features: &[F],
) -> Result<ForwardOutput> {
    let t = forward_trace(bundle, sample_id, features)?;
    Ok(ForwardOutput {
        fused: t.fused,
        per_view: t.per_view,
        record: t.record,
    })
}

/// Gradient of `d loss / d α` pulled back to `d loss / d (b, u)` through the
/// inverse map `α_k = b_k K / u + 1`.
fn alpha_grad_to_opinion(o: &Opinion, grad_alpha: &[f64]) -> OpinionGrad {
    let k = o.num_classes() as f64;
    let u = o.uncertainty();
    let strength = k / u;
    let beliefs = grad_alpha.iter().map(|g| g * strength).collect();
    let uncertainty = -grad_alpha
        .iter()
        .zip(o.beliefs())
        .map(|(g, b)| g * b)
        .sum::<f64>()
        * strength
        / u;
    OpinionGrad {
        beliefs,
        uncertainty,
    }
}

/// Pulls `d loss / d (b, u)` back to evidence through `b = e / S`, `u = K / S`.
fn opinion_grad_to_evidence(evidence: &[f64], g: &OpinionGrad) -> Vec<f64> {
    let k = evidence.len() as f64;
    let s = evidence.iter().sum::<f64>() + k;
    let shared = (evidence
        .iter()
        .zip(&g.beliefs)
        .map(|(e, gb)| e * gb)
        .sum::<f64>()
        + k * g.uncertainty)
        / (s * s);
    g.beliefs.iter().map(|gb| gb / s - shared).collect()
}

/// Exact gradients of the multi-task loss of one sample with respect to every
/// head's flat parameter vector. Returns the loss alongside.
pub fn backward<F: AsRef<[f64]>>(
    bundle: &ModelBundle,
    features: &[F],
    label: &LabelVector,
    lambda: f64,
) -> Result<(OverallLoss, Vec<Vec<f64>>)> {
    let mut grads: Vec<Vec<f64>> = bundle.heads.iter().map(|h| vec![0.0; h.params.len()]).collect();
    let loss = backward_accumulate(bundle, features, label, lambda, 1.0, &mut grads)?;
    Ok((loss, grads))
}

fn backward_accumulate<F: AsRef<[f64]>>(
    bundle: &ModelBundle,
    features: &[F],
    label: &LabelVector,
    lambda: f64,
    scale: f64,
    grads: &mut [Vec<f64>],
) -> Result<OverallLoss> {
    let t = forward_trace(bundle, "", features)?;
    let loss = overall_loss(&t.fused, &t.per_view, label, lambda)?;

    // Fused term: α → fused opinion → back through the fold.
    let fused_opinion = t.partials.last().unwrap();
    let mut upstream = alpha_grad_to_opinion(fused_opinion, &loss.fused.grad_alpha);
    let v = t.opinions.len();
    let mut view_grads: Vec<OpinionGrad> = vec![OpinionGrad::zeros(bundle.num_classes); v];
    for step in (1..v).rev() {
        let (g_prev, g_view) = combine_pair_backward(&t.partials[step - 1], &t.opinions[step], &upstream);
        view_grads[step] = g_view;
        upstream = g_prev;
    }
    view_grads[0] = upstream;

    for (i, ((head, trace), x)) in bundle.heads.iter().zip(&t.traces).zip(features).enumerate() {
        let mut g_evidence = opinion_grad_to_evidence(&trace.evidence, &view_grads[i]);
        // Per-view term: dα/de = 1.
        for (g, ga) in g_evidence.iter_mut().zip(&loss.views[i].grad_alpha) {
            *g = (*g + ga) * scale;
        }
        head.backward_into(x.as_ref(), trace, &g_evidence, &mut grads[i]);
    }
    Ok(loss)
}

/// First and second moment estimates for Adam, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, t: u64, config: &TrainConfig) {
    assert!(t >= 1, "Adam steps are 1-based");
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
    }
}

/// KL weight used when scoring the validation set, so that epochs are
/// compared under one objective while the training weight ramps up.
pub const MONITOR_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    /// Mean sample loss over the epoch's mini-batches at `lambda`.
    pub train_loss: f64,
    /// Mean sample loss over the validation set at [`MONITOR_LAMBDA`].
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Mean multi-task loss over `ds`.
pub fn dataset_loss(bundle: &ModelBundle, ds: &LabeledDataset, lambda: f64) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut total = 0.0;
    for i in 0..ds.len() {
        let f = forward_fused(bundle, "", &ds.features(i))?;
        let y = LabelVector::new(ds.labels()[i], ds.num_classes)?;
        total += overall_loss(&f.fused, &f.per_view, &y, lambda)?.total;
    }
    Ok(total / ds.len() as f64)
}

/// Mini-batch Adam over the multi-task loss with annealed KL weight and early
/// stopping on validation loss. Returns the best-validation parameters.
pub fn train(
    bundle: &ModelBundle,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    bundle.check_dataset(train_set)?;
    bundle.check_dataset(val_set)?;

    let mut model = bundle.clone();
    model.train_config = config.clone();
    let mut states: Vec<AdamState> = model.heads.iter().map(|h| AdamState::new(h.params.len())).collect();
    let mut shuffle_rng = rng::stream(config.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step: u64 = 0;

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelBundle)> = None;
    let mut stale = 0;

    for epoch in 0..config.max_epochs {
        let lambda = anneal_coefficient(epoch, config.anneal_epochs);
        rng::shuffle(&mut shuffle_rng, &mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Vec<f64>> = model.heads.iter().map(|h| vec![0.0; h.params.len()]).collect();
            for &i in batch {
                let y = LabelVector::new(train_set.labels()[i], train_set.num_classes)?;
                let loss = backward_accumulate(&model, &train_set.features(i), &y, lambda, scale, &mut grads)?;
                epoch_loss += loss.total;
            }
            step += 1;
            for ((head, g), state) in model.heads.iter_mut().zip(&grads).zip(&mut states) {
                adam_step(&mut head.params, g, state, step, config);
            }
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = dataset_loss(&model, val_set, MONITOR_LAMBDA)?;
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::Domain(train_loss, "training loss"));
        }
        history.push(EpochRecord {
            epoch,
            lambda,
            train_loss,
            val_loss,
        });
        match &best {
            Some((b, _, _)) if val_loss >= *b => {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((val_loss, epoch, model.clone()));
                stale = 0;
            }
        }
    }
    let (_, best_epoch, bundle) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        bundle,
        history,
        best_epoch,
    })
}

/// Fused predictions for every sample of `ds`, in order.
pub fn predict_batch(bundle: &ModelBundle, ds: &LabeledDataset) -> Result<Vec<PredictionRecord>> {
    bundle.check_dataset(ds)?;
    (0..ds.len())
        .map(|i| forward_fused(bundle, &ds.sample_ids()[i], &ds.features(i)).map(|f| f.record))
        .collect()
}

/// Sidecar manifest written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub num_classes: usize,
    pub view_names: Vec<String>,
    pub heads: Vec<HeadConfig>,
    pub train_config: TrainConfig,
    /// The stratified split the model was trained on, if any.
    #[serde(default)]
    pub split: Option<SplitRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    /// Train, validation and test fractions.
    pub fractions: (f64, f64, f64),
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

impl ModelBundle {
    /// Binary checkpoint: magic, version, K, V, per-head (input, hidden) dims,
    /// then all parameters as little-endian f64. Integers are little-endian u32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        out.extend_from_slice(&(self.heads.len() as u32).to_le_bytes());
        for h in &self.heads {
            out.extend_from_slice(&(h.config.input_dim as u32).to_le_bytes());
            out.extend_from_slice(&(h.config.hidden_dim as u32).to_le_bytes());
        }
        for h in &self.heads {
            for p in &h.params {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint image into head shapes and parameters.
    pub fn heads_from_bytes(bytes: &[u8], origin: &str) -> Result<Vec<EvidenceHead>> {
        let truncated = |expected: usize| Error::Truncated {
            path: origin.to_string(),
            expected,
            actual: bytes.len(),
        };
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                path: origin.to_string(),
                expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned(),
            });
        }
        let mut pos = 8;
        let next_u32 = |pos: &mut usize| -> Result<u32> {
            let end = *pos + 4;
            let chunk = bytes.get(*pos..end).ok_or_else(|| truncated(end))?;
            *pos = end;
            Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
        };
        let version = next_u32(&mut pos)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                path: origin.to_string(),
                found: version,
            });
        }
        let k = next_u32(&mut pos)? as usize;
        let v = next_u32(&mut pos)? as usize;
        let mut configs = Vec::with_capacity(v.min(1024));
        for _ in 0..v {
            let input_dim = next_u32(&mut pos)? as usize;
            let hidden_dim = next_u32(&mut pos)? as usize;
            configs.push(HeadConfig {
                input_dim,
                hidden_dim,
                num_classes: k,
            });
        }
        let needed: usize = configs.iter().map(|c| c.num_params() * 8).sum::<usize>() + pos;
        if bytes.len() < needed {
            return Err(truncated(needed));
        }
        if bytes.len() > needed {
            return Err(Error::TrailingBytes {
                path: origin.to_string(),
                expected: needed,
                actual: bytes.len(),
            });
        }
        configs
            .into_iter()
            .map(|cfg| {
                let n = cfg.num_params();
                let params = bytes[pos..pos + 8 * n]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                pos += 8 * n;
                EvidenceHead::from_params(cfg, params)
            })
            .collect()
    }

    pub fn manifest(&self, split: Option<SplitRecord>) -> CheckpointManifest {
        CheckpointManifest {
            format: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            version: CHECKPOINT_VERSION,
            num_classes: self.num_classes,
            view_names: self.view_names.clone(),
            heads: self.heads.iter().map(|h| h.config).collect(),
            train_config: self.train_config.clone(),
            split,
        }
    }

    /// Writes the checkpoint and its `<path>.json` sidecar.
    pub fn save(&self, path: impl AsRef<Path>, split: Option<SplitRecord>) -> Result<()> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let sidecar = sidecar_path(path);
        let text = serde_json::to_string_pretty(&self.manifest(split)).expect("manifest serializes");
        fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, CheckpointManifest)> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let heads = Self::heads_from_bytes(&bytes, &path.display().to_string())?;
        let sidecar = sidecar_path(path);
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: sidecar.clone(),
            source,
        })?;
        let shapes: Vec<HeadConfig> = heads.iter().map(|h| h.config).collect();
        if shapes != manifest.heads {
            return Err(Error::Parse {
                path: sidecar.display().to_string(),
                msg: "sidecar head shapes disagree with the checkpoint".into(),
            });
        }
        let bundle = Self::new(heads, manifest.view_names.clone(), manifest.train_config.clone())?;
        Ok((bundle, manifest))
    }
}
