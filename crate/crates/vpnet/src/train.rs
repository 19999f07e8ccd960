//! Training: losses (MSE, BCE, cross-entropy, projection-regularized
//! cross-entropy), the Adam optimizer, a deterministic mini-batch loop,
//! evaluation metrics, and hyperparameter grid search.

use crate::error::{Error, Result};
use crate::hermite::{HermiteBasis, SampleGrid, VpParams};
use crate::io::LabeledDataset;
use crate::nn::{Gradients, LayerSpec, Network, PoolKind, VpCache, VpMode};
use crate::vp::{d_r2, residual_r2, vp_fit};
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

/// Adam moment-decay and stabilization constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight of the normalized projection-residual penalty (0 disables it).
    pub vp_penalty_alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            vp_penalty_alpha: 0.1,
            batch_size: 512,
            epochs: 100,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.vp_penalty_alpha.is_finite() && self.vp_penalty_alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty weight must be nonnegative, got {}",
                self.vp_penalty_alpha
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "epoch count must be positive".into(),
            ));
        }
        for (name, beta) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(beta.is_finite() && (0.0..1.0).contains(&beta)) {
                return Err(Error::InvalidArgument(format!(
                    "Adam {name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.adam.epsilon.is_finite() && self.adam.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Adam epsilon must be positive, got {}",
                self.adam.epsilon
            )));
        }
        Ok(())
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(1e-12, 1.0 - 1e-12)
}

fn check_batch_shapes(preds: &[DVector<f64>], n_other: usize, what: &str) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if preds.len() != n_other {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions but {n_other} {what}",
            preds.len()
        )));
    }
    Ok(())
}

/// Batch-mean squared error: per sample, the mean squared component
/// difference; averaged over the batch.
pub fn loss_mse(preds: &[DVector<f64>], targets: &[DVector<f64>]) -> Result<f64> {
    check_batch_shapes(preds, targets.len(), "targets")?;
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::ShapeMismatch(format!(
                "prediction length {} vs target length {}",
                p.len(),
                t.len()
            )));
        }
        let diff = p - t;
        total += diff.norm_squared() / p.len() as f64;
    }
    Ok(total / preds.len() as f64)
}

/// Batch-mean binary cross-entropy; predictions are clamped to
/// `[1e-12, 1 − 1e-12]` before the logarithm.
pub fn loss_bce(preds: &[DVector<f64>], targets: &[DVector<f64>]) -> Result<f64> {
    check_batch_shapes(preds, targets.len(), "targets")?;
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::ShapeMismatch(format!(
                "prediction length {} vs target length {}",
                p.len(),
                t.len()
            )));
        }
        let mut sample = 0.0;
        for (&pi, &ti) in p.iter().zip(t.iter()) {
            let pi = clamp_prob(pi);
            sample -= ti * pi.ln() + (1.0 - ti) * (1.0 - pi).ln();
        }
        total += sample / p.len() as f64;
    }
    Ok(total / preds.len() as f64)
}

/// Batch-mean cross-entropy of probability vectors against integer labels.
pub fn loss_ce(pred_probs: &[DVector<f64>], labels: &[usize]) -> Result<f64> {
    check_batch_shapes(pred_probs, labels.len(), "labels")?;
    let mut total = 0.0;
    for (p, &label) in pred_probs.iter().zip(labels) {
        if label >= p.len() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                p.len()
            )));
        }
        total -= clamp_prob(p[label]).ln();
    }
    Ok(total / pred_probs.len() as f64)
}

/// Mean normalized projection residual `(1/N)·Σ r₂(xᵢ)/‖xᵢ‖²` of a batch
/// against the given projection-layer state. Zero-norm samples are skipped
/// with a warning.
pub fn vp_penalty(x_batch: &[DVector<f64>], vp_state: &VpCache) -> Result<f64> {
    if x_batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut total = 0.0;
    for (i, x) in x_batch.iter().enumerate() {
        let norm2 = x.norm_squared();
        if norm2 == 0.0 {
            log::warn!("sample {i} has zero norm; its projection penalty is skipped");
            continue;
        }
        total += residual_r2(x, &vp_state.bundle)? / norm2;
    }
    Ok(total / x_batch.len() as f64)
}

/// Cross-entropy plus `alpha` times the mean normalized projection residual.
/// With `alpha = 0` this equals [`loss_ce`] bit for bit.
pub fn loss_vp(
    pred_probs: &[DVector<f64>],
    labels: &[usize],
    x_batch: &[DVector<f64>],
    vp_state: &VpCache,
    alpha: f64,
) -> Result<f64> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "penalty weight must be nonnegative, got {alpha}"
        )));
    }
    let ce = loss_ce(pred_probs, labels)?;
    if alpha == 0.0 {
        return Ok(ce);
    }
    check_batch_shapes(pred_probs, x_batch.len(), "input signals")?;
    Ok(ce + alpha * vp_penalty(x_batch, vp_state)?)
}

/// Gradient of `alpha` times the mean normalized projection residual with
/// respect to the projection layer's `[translation, dilation]`. This is the
/// bypass term added to that layer's gradient only.
pub fn vp_penalty_gradient(
    x_batch: &[DVector<f64>],
    vp_state: &VpCache,
    alpha: f64,
) -> Result<DVector<f64>> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "penalty weight must be nonnegative, got {alpha}"
        )));
    }
    let mut grad = DVector::zeros(2);
    if alpha == 0.0 || x_batch.is_empty() {
        return Ok(grad);
    }
    for x in x_batch {
        let norm2 = x.norm_squared();
        if norm2 == 0.0 {
            continue;
        }
        for j in 0..2 {
            grad[j] += d_r2(x, &vp_state.bundle, &vp_state.basis.dphi[j])? / norm2;
        }
    }
    grad *= alpha / x_batch.len() as f64;
    Ok(grad)
}

/// First and second moment estimates of the Adam optimizer, one vector pair
/// per layer, plus the update counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: Vec<DVector<f64>>,
    second: Vec<DVector<f64>>,
    t: usize,
}

impl AdamState {
    pub fn new(network: &Network) -> AdamState {
        let zeros: Vec<DVector<f64>> = network
            .params()
            .iter()
            .map(|p| DVector::zeros(p.len()))
            .collect();
        AdamState {
            first: zeros.clone(),
            second: zeros,
            t: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> usize {
        self.t
    }
}

/// One bias-corrected Adam update applied in place. Non-finite gradients
/// abort the update and report the failing step index.
pub fn adam_step(
    params: &mut [DVector<f64>],
    grads: &[DVector<f64>],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter blocks, {} gradient blocks, {} moment blocks",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    let t = state.t + 1;
    for g in grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { step: t });
        }
    }
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = config.adam;
    let bias1 = 1.0 - beta1.powi(t as i32);
    let bias2 = 1.0 - beta2.powi(t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        if p.len() != g.len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter block of length {} with gradient of length {}",
                p.len(),
                g.len()
            )));
        }
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    state.t = t;
    Ok(())
}

/// Per-class confusion counts; for every class the four counts sum to the
/// dataset size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_positives + self.false_positives + self.false_negatives + self.true_negatives
    }
}

/// Confusion counts of one class together with the derived rates;
/// rates with a zero denominator are reported as `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub counts: ConfusionCounts,
    /// Sensitivity TP/(TP+FN).
    pub sensitivity: Option<f64>,
    /// Positive predictivity TP/(TP+FP).
    pub positive_predictivity: Option<f64>,
}

/// Classification metrics of one dataset pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub total: usize,
}

impl EvalReport {
    /// Human-readable multi-line summary; undefined rates print as `undef`.
    pub fn summary_text(&self) -> String {
        fn rate(r: Option<f64>) -> String {
            match r {
                Some(v) => format!("{v:.4}"),
                None => "undef".to_string(),
            }
        }
        let correct: usize = self
            .per_class
            .iter()
            .map(|c| c.counts.true_positives)
            .sum();
        let mut out = format!(
            "accuracy {:.4} ({correct}/{})\n",
            self.accuracy, self.total
        );
        for (k, c) in self.per_class.iter().enumerate() {
            out.push_str(&format!(
                "class {k}: Se {}  +P {}  (TP {}, FP {}, FN {}, TN {})\n",
                rate(c.sensitivity),
                rate(c.positive_predictivity),
                c.counts.true_positives,
                c.counts.false_positives,
                c.counts.false_negatives,
                c.counts.true_negatives,
            ));
        }
        out
    }
}

/// Builds the full metric report from label/prediction pairs.
pub fn classification_report(
    labels: &[usize],
    predictions: &[usize],
    class_count: usize,
) -> Result<EvalReport> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if labels.len() != predictions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    if class_count == 0 {
        return Err(Error::InvalidArgument("class count must be positive".into()));
    }
    let mut tp = vec![0usize; class_count];
    let mut fp = vec![0usize; class_count];
    let mut fne = vec![0usize; class_count];
    for (&l, &p) in labels.iter().zip(predictions) {
        if l >= class_count || p >= class_count {
            return Err(Error::InvalidArgument(format!(
                "label {l} / prediction {p} out of range for {class_count} classes"
            )));
        }
        if l == p {
            tp[l] += 1;
        } else {
            fne[l] += 1;
            fp[p] += 1;
        }
    }
    let total = labels.len();
    let per_class = (0..class_count)
        .map(|k| {
            let counts = ConfusionCounts {
                true_positives: tp[k],
                false_positives: fp[k],
                false_negatives: fne[k],
                true_negatives: total - tp[k] - fp[k] - fne[k],
            };
            let ratio = |num: usize, den: usize| {
                (den > 0).then(|| num as f64 / den as f64)
            };
            ClassMetrics {
                counts,
                sensitivity: ratio(tp[k], tp[k] + fne[k]),
                positive_predictivity: ratio(tp[k], tp[k] + fp[k]),
            }
        })
        .collect();
    let correct: usize = tp.iter().sum();
    Ok(EvalReport {
        accuracy: correct as f64 / total as f64,
        per_class,
        total,
    })
}

fn argmax(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Runs the network over the dataset and reports accuracy and per-class
/// sensitivity / positive predictivity from argmax predictions
/// (ties resolve to the lowest class index).
pub fn evaluate(network: &Network, dataset: &LabeledDataset) -> Result<EvalReport> {
    if network.output_len() != dataset.class_count() {
        return Err(Error::ShapeMismatch(format!(
            "network has {} outputs but dataset has {} classes",
            network.output_len(),
            dataset.class_count()
        )));
    }
    let caches = network.prepare()?;
    let mut predictions = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let trace = network.forward(&caches, dataset.signal(i))?;
        predictions.push(argmax(trace.output()));
    }
    classification_report(dataset.labels(), &predictions, dataset.class_count())
}

/// Batch-mean cross-entropy of the network over a whole dataset, without
/// touching parameters.
pub fn dataset_ce_loss(network: &Network, dataset: &LabeledDataset) -> Result<f64> {
    let caches = network.prepare()?;
    let mut total = 0.0;
    for i in 0..dataset.len() {
        let trace = network.forward(&caches, dataset.signal(i))?;
        total -= clamp_prob(trace.output()[dataset.label(i)]).ln();
    }
    Ok(total / dataset.len() as f64)
}

/// Per-epoch curves and final metrics of one training run. On divergence
/// the curves are truncated to the completed epochs and `diverged` is set.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub final_eval: Option<EvalReport>,
    pub diverged: bool,
    pub epochs_run: usize,
}

impl TrainReport {
    /// First 1-based epoch whose training accuracy reaches `threshold`.
    pub fn epochs_to_train_accuracy(&self, threshold: f64) -> Option<usize> {
        self.train_accuracy
            .iter()
            .position(|&a| a >= threshold)
            .map(|i| i + 1)
    }

    /// Highest test accuracy over the run with its 1-based epoch.
    pub fn best_test_accuracy(&self) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, &a) in self.test_accuracy.iter().enumerate() {
            if best.is_none_or(|(b, _)| a > b) {
                best = Some((a, i + 1));
            }
        }
        best
    }

    /// Writes the per-epoch curves as `epoch,train_loss,train_acc,test_acc`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "epoch,train_loss,train_acc,test_acc").map_err(|e| Error::io(path, e))?;
        for i in 0..self.epochs_run {
            writeln!(
                w,
                "{},{},{},{}",
                i + 1,
                self.train_loss[i],
                self.train_accuracy[i],
                self.test_accuracy[i]
            )
            .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn clamp_vp_dilations(network: &mut Network) {
    let specs: Vec<(usize, f64, f64)> = network
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, spec)| match spec {
            LayerSpec::Vp { grid, .. } => {
                let (a, b) = grid.interval();
                Some((i, 6.0 / (b - a), grid.len() as f64 / 2.0))
            }
            _ => None,
        })
        .collect();
    for (i, lo, hi) in specs {
        let lambda = network.params()[i][1];
        network.params_mut()[i][1] = lambda.clamp(lo, hi);
    }
}

/// Trains the network in place with seeded shuffling, mini-batch Adam
/// updates, and the projection-residual bypass gradient on projection
/// layers. The dilation of every projection layer is clamped to
/// `[6/(b−a), m/2]` after each update so the basis stays well conditioned.
///
/// Identical inputs and seed produce a bitwise-identical report and
/// parameters. A NaN loss or non-finite gradient stops training early and
/// flags the partial report as diverged.
pub fn train(
    network: &mut Network,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if network.input_len() != train_set.signal_len() {
        return Err(Error::ShapeMismatch(format!(
            "network expects {} samples per signal, training data has {}",
            network.input_len(),
            train_set.signal_len()
        )));
    }
    if test_set.signal_len() != train_set.signal_len() {
        return Err(Error::ShapeMismatch(format!(
            "training signals have {} samples, test signals {}",
            train_set.signal_len(),
            test_set.signal_len()
        )));
    }
    if network.output_len() != train_set.class_count()
        || network.output_len() != test_set.class_count()
    {
        return Err(Error::ShapeMismatch(format!(
            "network has {} outputs; datasets have {} / {} classes",
            network.output_len(),
            train_set.class_count(),
            test_set.class_count()
        )));
    }
    if !network.ends_in_softmax() {
        return Err(Error::Contract(
            "training requires a trailing softmax layer".into(),
        ));
    }

    let n_train = train_set.len();
    let vp_layers = network.vp_layers();
    let mut state = AdamState::new(network);
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(config.epochs),
        train_accuracy: Vec::with_capacity(config.epochs),
        test_accuracy: Vec::with_capacity(config.epochs),
        epoch_seconds: Vec::with_capacity(config.epochs),
        final_eval: None,
        diverged: false,
        epochs_run: 0,
    };

    'epochs: for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n_train).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let caches = network.prepare()?;
            let len = batch.len() as f64;
            let mut grads: Option<Gradients> = None;
            let mut batch_loss = 0.0;
            for &i in batch {
                let trace = network.forward(&caches, train_set.signal(i))?;
                batch_loss -= clamp_prob(trace.output()[train_set.label(i)]).ln();
                let g = network.backward_ce(&caches, &trace, train_set.label(i))?;
                match &mut grads {
                    Some(total) => total.add_assign(&g),
                    None => grads = Some(g),
                }
            }
            let mut grads = grads.expect("chunks are never empty");
            grads.scale(1.0 / len);
            batch_loss /= len;

            if config.vp_penalty_alpha > 0.0 {
                for &li in &vp_layers {
                    let cache = network
                        .vp_cache(&caches, li)
                        .expect("projection layer has a cache");
                    let mut penalty = 0.0;
                    let mut bypass = DVector::zeros(2);
                    for &i in batch {
                        let x = train_set.signal(i);
                        let norm2 = x.norm_squared();
                        if norm2 == 0.0 {
                            log::warn!(
                                "sample {i} has zero norm; its projection penalty is skipped"
                            );
                            continue;
                        }
                        penalty += residual_r2(x, &cache.bundle)? / norm2;
                        for j in 0..2 {
                            bypass[j] += d_r2(x, &cache.bundle, &cache.basis.dphi[j])? / norm2;
                        }
                    }
                    batch_loss += config.vp_penalty_alpha * penalty / len;
                    bypass *= config.vp_penalty_alpha / len;
                    grads.params[li] += bypass;
                }
            }

            if !batch_loss.is_finite() {
                log::warn!("training loss became non-finite at epoch {epoch}; stopping early");
                report.diverged = true;
                break 'epochs;
            }
            match adam_step(network.params_mut(), &grads.params, &mut state, config) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { step }) => {
                    log::warn!(
                        "non-finite gradient at update {step} (epoch {epoch}); stopping early"
                    );
                    report.diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            clamp_vp_dilations(network);
            loss_sum += batch_loss * len;
        }

        if network
            .params()
            .iter()
            .any(|p| p.iter().any(|v| !v.is_finite()))
        {
            log::warn!("parameters became non-finite at epoch {epoch}; stopping early");
            report.diverged = true;
            break 'epochs;
        }

        report.train_loss.push(loss_sum / n_train as f64);
        report.train_accuracy.push(evaluate(network, train_set)?.accuracy);
        report.test_accuracy.push(evaluate(network, test_set)?.accuracy);
        report.epoch_seconds.push(started.elapsed().as_secs_f64());
        report.epochs_run = epoch + 1;
    }

    report.final_eval = if report.diverged {
        evaluate(network, test_set).ok()
    } else {
        Some(evaluate(network, test_set)?)
    };
    Ok(report)
}

/// Model families covered by the experiments: the projection network and the
/// dense / convolutional baselines. All take raw signals of length `m` and
/// end in a softmax over the classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArchSpec {
    /// Projection feature layer (n coefficients) → dense hidden → classes.
    VpNet { n: usize, hidden: usize },
    /// Dense hidden layer on the raw signal → classes.
    Fcnn { hidden: usize },
    /// Convolution → max pool → dense hidden → classes.
    Cnn {
        channels: usize,
        kernel: usize,
        pool: usize,
        hidden: usize,
    },
}

impl ArchSpec {
    pub fn label(&self) -> String {
        match self {
            ArchSpec::VpNet { n, hidden } => format!("vpnet(n={n},h={hidden})"),
            ArchSpec::Fcnn { hidden } => format!("fcnn(h={hidden})"),
            ArchSpec::Cnn {
                channels,
                kernel,
                pool,
                hidden,
            } => format!("cnn(ch={channels},k={kernel},p={pool},h={hidden})"),
        }
    }

    pub fn has_vp_layer(&self) -> bool {
        matches!(self, ArchSpec::VpNet { .. })
    }

    /// Builds the layer stack for signals of length `input_len`.
    pub fn build(&self, input_len: usize, classes: usize) -> Result<Network> {
        let layers = match *self {
            ArchSpec::VpNet { n, hidden } => vec![
                LayerSpec::Vp {
                    mode: VpMode::Feature,
                    grid: SampleGrid::unit(input_len)?,
                    n,
                },
                LayerSpec::Dense {
                    input: n,
                    output: hidden,
                },
                LayerSpec::Relu { len: hidden },
                LayerSpec::Dense {
                    input: hidden,
                    output: classes,
                },
                LayerSpec::Softmax { len: classes },
            ],
            ArchSpec::Fcnn { hidden } => vec![
                LayerSpec::Dense {
                    input: input_len,
                    output: hidden,
                },
                LayerSpec::Relu { len: hidden },
                LayerSpec::Dense {
                    input: hidden,
                    output: classes,
                },
                LayerSpec::Softmax { len: classes },
            ],
            ArchSpec::Cnn {
                channels,
                kernel,
                pool,
                hidden,
            } => {
                let pooled = channels * (input_len / pool.max(1));
                vec![
                    LayerSpec::Conv1d {
                        input_len,
                        channels,
                        kernel,
                    },
                    LayerSpec::Relu {
                        len: channels * input_len,
                    },
                    LayerSpec::Pool {
                        channels,
                        input_len,
                        width: pool,
                        kind: PoolKind::Max,
                    },
                    LayerSpec::Dense {
                        input: pooled,
                        output: hidden,
                    },
                    LayerSpec::Relu { len: hidden },
                    LayerSpec::Dense {
                        input: hidden,
                        output: classes,
                    },
                    LayerSpec::Softmax { len: classes },
                ]
            }
        };
        Network::new(layers)
    }
}

/// How the projection layer's nonlinear parameters are initialized before
/// training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VpInit {
    /// Keep the construction defaults: translation at the interval center,
    /// dilation spanning the interval.
    Default,
    /// Set explicit values.
    Fixed { tau: f64, lambda: f64 },
    /// Fit the parameters to the training signals by descending the mean
    /// normalized projection residual before network training starts.
    Pretrain { steps: usize, step_size: f64 },
}

impl VpInit {
    pub fn label(&self) -> String {
        match self {
            VpInit::Default => "default".to_string(),
            VpInit::Fixed { tau, lambda } => format!("fixed(tau={tau},lambda={lambda})"),
            VpInit::Pretrain { steps, step_size } => {
                format!("pretrain(steps={steps},step={step_size})")
            }
        }
    }
}

/// Number of training signals used by [`VpInit::Pretrain`].
const PRETRAIN_SAMPLE_CAP: usize = 512;

/// Applies the chosen initialization to every projection layer of the
/// network.
pub fn apply_vp_init(
    network: &mut Network,
    init: &VpInit,
    train_set: &LabeledDataset,
) -> Result<()> {
    let vp_layers = network.vp_layers();
    match *init {
        VpInit::Default => Ok(()),
        VpInit::Fixed { tau, lambda } => {
            let params = VpParams::new(tau, lambda)?;
            for li in vp_layers {
                network.params_mut()[li][0] = params.tau;
                network.params_mut()[li][1] = params.lambda;
            }
            Ok(())
        }
        VpInit::Pretrain { steps, step_size } => {
            let cap = train_set.len().min(PRETRAIN_SAMPLE_CAP);
            let indices: Vec<usize> = (0..cap).collect();
            let signals = train_set.signals_matrix(&indices);
            for li in vp_layers {
                let (grid, n) = match &network.layers()[li] {
                    LayerSpec::Vp { grid, n, .. } => (grid.clone(), *n),
                    _ => unreachable!("vp_layers returns projection layers"),
                };
                let theta0 = VpParams::new(
                    network.params()[li][0],
                    network.params()[li][1],
                )?;
                let basis = HermiteBasis::new(grid, n)?;
                let fitted = vp_fit(&signals, &basis, &theta0, steps, step_size)?;
                network.params_mut()[li][0] = fitted.tau;
                network.params_mut()[li][1] = fitted.lambda;
            }
            Ok(())
        }
    }
}

/// The hyperparameter combinations explored by [`grid_search`]:
/// architectures × projection initializations × learning rates.
/// Initializations only multiply architectures that have a projection layer.
#[derive(Debug, Clone)]
pub struct GridSpace {
    pub archs: Vec<ArchSpec>,
    pub inits: Vec<VpInit>,
    pub learning_rates: Vec<f64>,
}

/// One hyperparameter combination.
#[derive(Debug, Clone, Copy)]
pub struct GridEntry {
    pub arch: ArchSpec,
    pub init: VpInit,
    pub learning_rate: f64,
}

/// Outcome of one grid combination.
#[derive(Debug, Clone)]
pub struct GridRow {
    /// Position of the combination in enumeration order.
    pub index: usize,
    pub arch: String,
    pub init: String,
    pub learning_rate: f64,
    pub param_count: usize,
    pub best_test_accuracy: f64,
    /// 1-based epoch of the best test accuracy; `None` if no epoch finished.
    pub best_epoch: Option<usize>,
    pub final_test_accuracy: f64,
    pub diverged: bool,
}

/// Enumerates the combinations of a space in deterministic order.
pub fn grid_entries(space: &GridSpace) -> Result<Vec<GridEntry>> {
    if space.archs.is_empty() || space.learning_rates.is_empty() {
        return Err(Error::InvalidArgument(
            "grid space needs at least one architecture and one learning rate".into(),
        ));
    }
    if space.inits.is_empty() {
        return Err(Error::InvalidArgument(
            "grid space needs at least one initialization".into(),
        ));
    }
    let mut entries = Vec::new();
    for arch in &space.archs {
        let inits: &[VpInit] = if arch.has_vp_layer() {
            &space.inits
        } else {
            &[VpInit::Default]
        };
        for init in inits {
            for &lr in &space.learning_rates {
                entries.push(GridEntry {
                    arch: *arch,
                    init: *init,
                    learning_rate: lr,
                });
            }
        }
    }
    Ok(entries)
}

/// Builds a network for the architecture, draws its weights from the seed,
/// and applies the projection-layer initialization. Every caller that passes
/// the same arguments gets a bitwise-identical network.
pub fn build_seeded_network(
    arch: &ArchSpec,
    init: &VpInit,
    train_set: &LabeledDataset,
    seed: u64,
) -> Result<Network> {
    let mut network = arch.build(train_set.signal_len(), train_set.class_count())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    network.init_glorot(&mut rng);
    apply_vp_init(&mut network, init, train_set)?;
    Ok(network)
}

fn run_grid_entry(
    index: usize,
    entry: &GridEntry,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    base: &TrainConfig,
) -> Result<GridRow> {
    let mut network = build_seeded_network(&entry.arch, &entry.init, train_set, base.seed)?;
    let config = TrainConfig {
        learning_rate: entry.learning_rate,
        ..*base
    };
    let report = train(&mut network, train_set, test_set, &config)?;
    let (mut best, best_epoch) = match report.best_test_accuracy() {
        Some((acc, epoch)) => (acc, Some(epoch)),
        None => (0.0, None),
    };
    if !best.is_finite() {
        best = 0.0;
    }
    Ok(GridRow {
        index,
        arch: entry.arch.label(),
        init: entry.init.label(),
        learning_rate: entry.learning_rate,
        param_count: network.param_count(),
        best_test_accuracy: best,
        best_epoch,
        final_test_accuracy: report.test_accuracy.last().copied().unwrap_or(0.0),
        diverged: report.diverged,
    })
}

/// Trains every combination of the space and returns the rows ranked by best
/// test accuracy, ties broken by fewer parameters, then lower learning rate.
/// `jobs` bounds the number of combinations trained concurrently; results are
/// independent of the bound because every run is seeded identically.
pub fn grid_search(
    space: &GridSpace,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    base: &TrainConfig,
    jobs: usize,
) -> Result<Vec<GridRow>> {
    base.validate()?;
    let entries = grid_entries(space)?;
    let slots: Vec<Mutex<Option<Result<GridRow>>>> =
        (0..entries.len()).map(|_| Mutex::new(None)).collect();
    let workers = jobs.max(1).min(entries.len());
    if workers == 1 {
        for (i, entry) in entries.iter().enumerate() {
            *slots[i].lock().expect("unpoisoned") =
                Some(run_grid_entry(i, entry, train_set, test_set, base));
        }
    } else {
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= entries.len() {
                        break;
                    }
                    let row = run_grid_entry(i, &entries[i], train_set, test_set, base);
                    *slots[i].lock().expect("unpoisoned") = Some(row);
                });
            }
        });
    }
    let mut rows = Vec::with_capacity(entries.len());
    for slot in slots {
        match slot.into_inner().expect("unpoisoned") {
            Some(Ok(row)) => rows.push(row),
            Some(Err(e)) => return Err(e),
            None => {
                return Err(Error::Contract(
                    "a grid combination finished without a result".into(),
                ))
            }
        }
    }
    rows.sort_by(|a, b| {
        b.best_test_accuracy
            .partial_cmp(&a.best_test_accuracy)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.param_count.cmp(&b.param_count))
            .then(
                a.learning_rate
                    .partial_cmp(&b.learning_rate)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
    });
    Ok(rows)
}

/// Writes the ranked grid table as CSV, one row per combination.
pub fn save_grid_csv(rows: &[GridRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "rank,index,arch,init,learning_rate,param_count,best_test_acc,best_epoch,final_test_acc,diverged"
    )
    .map_err(|e| Error::io(path, e))?;
    for (rank, row) in rows.iter().enumerate() {
        let best_epoch = row
            .best_epoch
            .map(|e| e.to_string())
            .unwrap_or_else(|| "none".to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            rank + 1,
            row.index,
            row.arch,
            row.init,
            row.learning_rate,
            row.param_count,
            row.best_test_accuracy,
            best_epoch,
            row.final_test_accuracy,
            row.diverged
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The default learning-rate grid.
pub const DEFAULT_LEARNING_RATES: [f64; 5] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
