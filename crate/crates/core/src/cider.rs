//! Hyperspherical prototype training of a projection head.
//!
//! Features are normalized, optionally passed through a trainable adapter
//! (normalized again), projected by an MLP head and normalized onto the
//! unit sphere. Two losses shape that sphere:
//!
//! * compactness: `−(1/N) Σᵢ log softmax_j(zᵢ·μ_j/τ)[yᵢ]` pulls samples
//!   towards their class prototype;
//! * dispersion: `(1/C) Σᵢ log[(1/(C−1)) Σ_{j≠i} exp(μᵢ·μ_j/τ)]` pushes
//!   prototypes apart.
//!
//! Each minibatch takes one gradient step on `L_dis + λ·L_comp` (head and
//! adapter by backprop, prototypes directly followed by re-normalization),
//! then moves each sample's prototype towards it by exponential moving
//! average, in batch order.

use alloc::vec::Vec;

use crate::dataset::LabeledEmbeddings;
use crate::math::log;
use crate::nnet::{self, Classifier, Mlp, MlpGrads, Tape, TrainConfig, TrainedProbe};
use crate::numerics::{axpy, check_len, dot, l2_normalize, logsumexp, norm, softmax, Matrix};
use crate::rng::Rng;
use crate::{Error, Result};

const UNIT_TOL: f64 = 1e-6;

/// Unit-norm class anchors on the hypersphere.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    prototypes: Matrix,
    /// EMA momentum `α` in `[0, 1]`; 1 freezes the prototypes.
    pub momentum: f64,
    /// Temperature `τ` shared by both losses.
    pub temperature: f64,
}

impl PrototypeBank {
    /// Normalizes every row of `prototypes`.
    pub fn new(prototypes: Matrix, momentum: f64, temperature: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidFraction(momentum));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid("prototype temperature must be positive"));
        }
        let mut prototypes = prototypes;
        for i in 0..prototypes.rows() {
            let unit = l2_normalize(prototypes.row(i))?;
            prototypes.row_mut(i).copy_from_slice(&unit);
        }
        Ok(Self {
            prototypes,
            momentum,
            temperature,
        })
    }

    pub fn prototypes(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn classes(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    /// Largest `|‖μ_c‖ − 1|`.
    pub fn max_norm_error(&self) -> f64 {
        self.prototypes
            .iter_rows()
            .map(|r| (norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Index of the most similar prototype.
    pub fn nearest(&self, z: &[f64]) -> usize {
        let sims = self.similarities(z);
        crate::numerics::argmax(&sims).unwrap_or(0)
    }

    fn similarities(&self, z: &[f64]) -> Vec<f64> {
        self.prototypes.iter_rows().map(|m| dot(z, m)).collect()
    }

    fn renormalize_row(&mut self, i: usize) -> Result<()> {
        let unit = l2_normalize(self.prototypes.row(i))?;
        self.prototypes.row_mut(i).copy_from_slice(&unit);
        Ok(())
    }
}

fn check_unit_rows(z: &Matrix) -> Result<()> {
    for r in z.iter_rows() {
        if (norm(r) - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid("compactness inputs must be unit vectors"));
        }
    }
    Ok(())
}

/// Compactness loss of a batch of unit vectors and its gradient with respect
/// to each row of `z` (prototypes held fixed).
pub fn loss_compactness(
    z: &Matrix,
    labels: &[usize],
    bank: &PrototypeBank,
) -> Result<(f64, Matrix)> {
    check_len(z.rows(), labels.len())?;
    check_len(bank.dim(), z.cols())?;
    if labels.is_empty() {
        return Err(Error::Empty);
    }
    check_unit_rows(z)?;
    let c = bank.classes();
    let tau = bank.temperature;
    let inv_n = 1.0 / labels.len() as f64;
    let mut grad = Matrix::zeros(z.rows(), z.cols());
    let mut loss = 0.0;
    for (i, (zi, &y)) in z.iter_rows().zip(labels).enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        let logits: Vec<f64> = bank.similarities(zi).iter().map(|s| s / tau).collect();
        loss += logsumexp(&logits)? - logits[y];
        let p = softmax(&logits)?;
        let g = grad.row_mut(i);
        for (j, mu) in bank.prototypes.iter_rows().enumerate() {
            let coeff = (p[j] - (j == y) as u8 as f64) * inv_n / tau;
            axpy(coeff, mu, g);
        }
    }
    Ok((loss * inv_n, grad))
}

/// Dispersion loss of the prototypes and its gradient with respect to each
/// prototype.
pub fn loss_dispersion(bank: &PrototypeBank) -> Result<(f64, Matrix)> {
    let c = bank.classes();
    if c < 2 {
        return Err(Error::SingleClass);
    }
    let tau = bank.temperature;
    let mu = &bank.prototypes;
    let mut weights = Matrix::zeros(c, c);
    let mut loss = 0.0;
    for i in 0..c {
        let others: Vec<f64> = (0..c)
            .filter(|&j| j != i)
            .map(|j| dot(mu.row(i), mu.row(j)) / tau)
            .collect();
        loss += logsumexp(&others)? - log((c - 1) as f64);
        let q = softmax(&others)?;
        for (j, qj) in (0..c).filter(|&j| j != i).zip(q) {
            weights[(i, j)] = qj;
        }
    }
    let scale = 1.0 / (c as f64 * tau);
    let mut grad = Matrix::zeros(c, bank.dim());
    for k in 0..c {
        let g = grad.row_mut(k);
        for j in 0..c {
            if j == k {
                continue;
            }
            // μ_k appears as the anchor of row k and as a neighbour in row j.
            axpy(scale * (weights[(k, j)] + weights[(j, k)]), mu.row(j), g);
        }
    }
    Ok((loss / c as f64, grad))
}

/// Moves prototypes towards batch samples by EMA, one sample at a time:
/// `μ_y ← normalize(α·μ_y + (1 − α)·z)`.
pub fn update_prototypes(bank: &mut PrototypeBank, z: &Matrix, labels: &[usize]) -> Result<()> {
    check_len(z.rows(), labels.len())?;
    check_len(bank.dim(), z.cols())?;
    let alpha = bank.momentum;
    let c = bank.classes();
    for (zi, &y) in z.iter_rows().zip(labels) {
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        let row = bank.prototypes.row_mut(y);
        for (m, v) in row.iter_mut().zip(zi) {
            *m = alpha * *m + (1.0 - alpha) * v;
        }
        bank.renormalize_row(y)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiderConfig {
    /// Hidden width of the head; `None` uses the input dimension.
    pub hidden: Option<usize>,
    /// Output dimension `F_h` of the head.
    pub projection_dim: usize,
    pub temperature: f64,
    pub prototype_momentum: f64,
    pub compactness_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Train an `F_d → F_d` adapter (identity at start) before the head.
    pub adapter: bool,
}

impl Default for CiderConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            projection_dim: 128,
            temperature: 0.1,
            prototype_momentum: 0.95,
            compactness_weight: 1.0,
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.05,
            seed: 0,
            adapter: false,
        }
    }
}

impl CiderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.prototype_momentum) {
            return Err(Error::InvalidFraction(self.prototype_momentum));
        }
        if !(self.compactness_weight >= 0.0 && self.compactness_weight.is_finite()) {
            return Err(Error::invalid("compactness_weight must be non-negative"));
        }
        if self.batch_size == 0 || self.projection_dim == 0 || self.hidden == Some(0) {
            return Err(Error::invalid("batch_size and layer widths must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Frozen result of hyperspherical training.
#[derive(Debug, Clone, PartialEq)]
pub struct CiderModel {
    pub head: Mlp,
    pub adapter: Option<Mlp>,
    pub bank: PrototypeBank,
}

impl CiderModel {
    pub fn input_dim(&self) -> usize {
        self.adapter
            .as_ref()
            .map_or(self.head.input_dim(), Mlp::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        project(&self.head, self.adapter.as_ref(), x)
    }

    pub fn project_all(&self, data: &LabeledEmbeddings) -> Result<LabeledEmbeddings> {
        data.map_rows(|x| self.project(x))
    }
}

/// `normalize(head(normalize(adapter(x))))`; a missing adapter is the identity.
pub fn project(head: &Mlp, adapter: Option<&Mlp>, x: &[f64]) -> Result<Vec<f64>> {
    let inner = match adapter {
        Some(a) => a.apply(x)?,
        None => x.to_vec(),
    };
    let dc = l2_normalize(&inner)?;
    l2_normalize(&head.apply(&dc)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub dispersion: f64,
    pub compactness: f64,
    /// `dispersion + λ·compactness`.
    pub total: f64,
}

/// Diagnostics emitted after every learning step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub epoch: usize,
    pub step: usize,
    pub dispersion: f64,
    pub compactness: f64,
    /// Largest `|‖z‖ − 1|` over the batch projections.
    pub projection_norm_error: f64,
    pub prototype_norm_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedCider {
    pub model: CiderModel,
    pub loss_trace: Vec<EpochLoss>,
}

struct Forward {
    adapter_tape: Option<Tape>,
    adapter_out: Vec<f64>,
    head_in: Vec<f64>,
    head_tape: Tape,
    head_out: Vec<f64>,
    z: Vec<f64>,
}

fn forward(model: &CiderModel, x: &[f64]) -> Result<Forward> {
    let (adapter_out, adapter_tape) = match &model.adapter {
        Some(a) => {
            let (y, t) = a.forward(x)?;
            (y, Some(t))
        }
        None => (x.to_vec(), None),
    };
    let head_in = l2_normalize(&adapter_out)?;
    let (head_out, head_tape) = model.head.forward(&head_in)?;
    let z = l2_normalize(&head_out)?;
    Ok(Forward {
        adapter_tape,
        adapter_out,
        head_in,
        head_tape,
        head_out,
        z,
    })
}

/// Backprop through `u = v/‖v‖`: `(g − (g·u)·u)/‖v‖`.
fn normalize_vjp(v: &[f64], u: &[f64], g: &[f64]) -> Vec<f64> {
    let n = norm(v);
    let gu = dot(g, u);
    g.iter().zip(u).map(|(gi, ui)| (gi - gu * ui) / n).collect()
}

fn initial_bank(
    model: &CiderModel,
    data: &LabeledEmbeddings,
    classes: usize,
    cfg: &CiderConfig,
) -> Result<PrototypeBank> {
    let labels = data.require_labels()?;
    let mut sums = Matrix::zeros(classes, model.output_dim());
    for (x, &y) in data.features().iter_rows().zip(labels) {
        let z = model.project(x)?;
        axpy(1.0, &z, sums.row_mut(y));
    }
    PrototypeBank::new(sums, cfg.prototype_momentum, cfg.temperature)
}

pub fn cider_train(data: &LabeledEmbeddings, cfg: &CiderConfig) -> Result<TrainedCider> {
    cider_train_observed(data, cfg, |_| {})
}

/// [`cider_train`] with a callback receiving [`StepStats`] after every step.
pub fn cider_train_observed<F>(
    data: &LabeledEmbeddings,
    cfg: &CiderConfig,
    mut observer: F,
) -> Result<TrainedCider>
where
    F: FnMut(&StepStats),
{
    cfg.validate()?;
    let classes = nnet::training_classes(data)?;
    let labels = data.require_labels()?;
    let d = data.dim();
    let hidden = cfg.hidden.unwrap_or(d);

    let mut rng = Rng::seed_from_u64(cfg.seed);
    let head = Mlp::init(&[d, hidden, cfg.projection_dim], &mut rng)?;
    let adapter = cfg.adapter.then(|| Mlp::identity(d));
    let mut model = CiderModel {
        bank: PrototypeBank::new(Matrix::identity(1), cfg.prototype_momentum, cfg.temperature)?,
        head,
        adapter,
    };
    model.bank = initial_bank(&model, data, classes, cfg)?;

    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut batch_z = Vec::with_capacity(cfg.batch_size * cfg.projection_dim);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = rng.permutation(data.len());
        let (mut sum_dis, mut sum_comp, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let passes = chunk
                .iter()
                .map(|&i| forward(&model, data.row(i)))
                .collect::<Result<Vec<_>>>()?;
            batch_z.clear();
            batch_y.clear();
            for (f, &i) in passes.iter().zip(chunk) {
                batch_z.extend_from_slice(&f.z);
                batch_y.push(labels[i]);
            }
            let z = Matrix::new(chunk.len(), cfg.projection_dim, core::mem::take(&mut batch_z))?;

            let (comp, comp_grad) = loss_compactness(&z, &batch_y, &model.bank)?;
            let (dis, dis_grad) = loss_dispersion(&model.bank)?;

            if cfg.compactness_weight > 0.0 {
                let mut head_grads = MlpGrads::zeros_like(&model.head);
                let mut adapter_grads = model.adapter.as_ref().map(MlpGrads::zeros_like);
                for (k, f) in passes.iter().enumerate() {
                    let gz: Vec<f64> = comp_grad
                        .row(k)
                        .iter()
                        .map(|g| g * cfg.compactness_weight)
                        .collect();
                    let g_head_out = normalize_vjp(&f.head_out, &f.z, &gz);
                    let (hg, g_head_in) = model.head.backward(&f.head_tape, &g_head_out)?;
                    head_grads.add(&hg);
                    if let (Some(adapter), Some(ag), Some(tape)) =
                        (&model.adapter, adapter_grads.as_mut(), &f.adapter_tape)
                    {
                        let g_adapter_out = normalize_vjp(&f.adapter_out, &f.head_in, &g_head_in);
                        let (g, _) = adapter.backward(tape, &g_adapter_out)?;
                        ag.add(&g);
                    }
                }
                model.head.descend(&head_grads, cfg.learning_rate, 0.0);
                if let (Some(adapter), Some(ag)) = (model.adapter.as_mut(), adapter_grads.as_ref()) {
                    adapter.descend(ag, cfg.learning_rate, 0.0);
                }
            }

            for k in 0..model.bank.classes() {
                axpy(
                    -cfg.learning_rate,
                    dis_grad.row(k),
                    model.bank.prototypes.row_mut(k),
                );
                model.bank.renormalize_row(k)?;
            }
            update_prototypes(&mut model.bank, &z, &batch_y)?;

            observer(&StepStats {
                epoch,
                step,
                dispersion: dis,
                compactness: comp,
                projection_norm_error: z
                    .iter_rows()
                    .map(|r| (norm(r) - 1.0).abs())
                    .fold(0.0, f64::max),
                prototype_norm_error: model.bank.max_norm_error(),
            });
            batch_z = z.into_vec();
            step += 1;
            sum_dis += dis;
            sum_comp += comp;
            batches += 1;
        }
        let n = batches as f64;
        loss_trace.push(EpochLoss {
            dispersion: sum_dis / n,
            compactness: sum_comp / n,
            total: (sum_dis + cfg.compactness_weight * sum_comp) / n,
        });
    }
    Ok(TrainedCider { model, loss_trace })
}

/// Mean cosine similarity between each sample's projection and its own
/// class prototype.
pub fn mean_prototype_similarity(model: &CiderModel, data: &LabeledEmbeddings) -> Result<f64> {
    let labels = data.require_labels()?;
    let mut total = 0.0;
    for (x, &y) in data.features().iter_rows().zip(labels) {
        if y >= model.bank.classes() {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: model.bank.classes(),
            });
        }
        total += dot(&model.project(x)?, model.bank.prototypes.row(y));
    }
    Ok(total / labels.len() as f64)
}

/// Mean of `zᵢ·μ_{yᵢ} − max_{j≠yᵢ} zᵢ·μ_j`: how much closer each sample is
/// to its own prototype than to the nearest other one.
pub fn mean_prototype_margin(model: &CiderModel, data: &LabeledEmbeddings) -> Result<f64> {
    let labels = data.require_labels()?;
    let c = model.bank.classes();
    let mut total = 0.0;
    for (x, &y) in data.features().iter_rows().zip(labels) {
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        let sims = model.bank.similarities(&model.project(x)?);
        let other = (0..c)
            .filter(|&j| j != y)
            .map(|j| sims[j])
            .fold(f64::NEG_INFINITY, f64::max);
        total += sims[y] - other;
    }
    Ok(total / labels.len() as f64)
}

/// Freezes the trained projection, fits a linear probe on normalized
/// projected training features and reports test accuracy.
pub fn evaluate_with_probe(
    train: &LabeledEmbeddings,
    test: &LabeledEmbeddings,
    model: &CiderModel,
    cfg: &TrainConfig,
) -> Result<(TrainedProbe, f64)> {
    check_len(model.input_dim(), train.dim())?;
    let train_p = model.project_all(train)?.normalized()?;
    let test_p = model.project_all(test)?.normalized()?;
    let trained = nnet::train_probe(&train_p, cfg)?;
    check_len(trained.probe.input_dim(), model.output_dim())?;
    let acc = nnet::accuracy(&trained.probe, &test_p)?;
    Ok((trained, acc))
}
