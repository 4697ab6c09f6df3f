//! Training loop, evaluation, and the cross-day experiment protocols.
//!
//! Pre-training runs Adam over shuffled mini-batches with cosine-annealed
//! learning rates. Cross-day evaluation optionally fine-tunes on a small
//! stratified fraction of the test day before scoring the remainder;
//! fine-tuning runs a fifth of the pre-training epochs at the fixed rate
//! `10 * lr_min` and touches either the readout layer only or the whole
//! network.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datakit::{finetune_subset, TrialSet};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, AblationSet, Model, ModelSpec};
use crate::optim::{adam_step, cosine_lr, AdamState, LrSchedule};
use crate::tensor::{BackwardOp, Tensor as TensorG};
use crate::Tensor;

/// Fine-tuning ratios exercised by default; anchors at 3.2% and 7.8% with
/// a doubling grid below.
pub const DEFAULT_RATIO_GRID: [f64; 6] = [0.0, 0.008, 0.016, 0.032, 0.078, 0.156];

/// Which parameters fine-tuning may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneScope {
    ClassifierOnly,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
    pub finetune_scope: FinetuneScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            lr_max: 0.01,
            lr_min: 0.0001,
            seed: 0,
            finetune_scope: FinetuneScope::ClassifierOnly,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr_max > self.lr_min && self.lr_min > 0.0) {
            return Err(Error::Config(format!(
                "need lr_max > lr_min > 0, got {} and {}",
                self.lr_max, self.lr_min
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.clone() }
    }

    /// Fine-tuning budget: a fifth of the pre-training epochs.
    pub fn finetune_epochs(&self) -> usize {
        (self.epochs / 5).max(1)
    }

    /// Fixed fine-tuning learning rate.
    pub fn finetune_lr(&self) -> f64 {
        self.lr_min * 10.0
    }
}

/// Outcome of one run: per-epoch training curves plus whatever evaluation
/// the protocol performed. Wall-clock is never serialized; timing lives in
/// the sidecar log so that reports stay byte-identical across reruns.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub model_kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_test_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<u32>>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_day: Vec<DayResult>,
    #[serde(skip)]
    pub wall_clock: Duration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayResult {
    pub day: u16,
    pub ratio: f64,
    pub accuracy: f64,
    pub n_eval: usize,
}

/// Accuracy plus the row-is-truth confusion matrix it derives from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub confusion: Vec<Vec<u32>>,
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct CrossEntropyOp {
    labels: Vec<usize>,
    probs: Vec<f64>,
    n_classes: usize,
}

impl BackwardOp<f64> for CrossEntropyOp {
    fn vjp(&self, parents: &[Tensor], upstream: &[f64]) -> Vec<Option<Vec<f64>>> {
        let b = self.labels.len();
        let scale = upstream[0] / b as f64;
        vec![parents[0].requires_grad().then(|| {
            let mut g = self.probs.clone();
            for (i, &label) in self.labels.iter().enumerate() {
                g[i * self.n_classes + label] -= 1.0;
            }
            for gi in g.iter_mut() {
                *gi *= scale;
            }
            g
        })]
    }
}

/// Mean negative log-softmax of the true class, stabilized by row-max
/// subtraction.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: shape.to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let n = shape[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::Invalid(format!(
            "label {bad} out of range for {n} classes"
        )));
    }
    let mut probs = Vec::with_capacity(logits.numel());
    let mut loss = 0.0;
    for (row, &label) in logits.data().chunks(n).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (row[label] - m);
        probs.extend(exps.iter().map(|e| e / z));
    }
    loss /= labels.len() as f64;
    Ok(TensorG::from_op(
        vec![1],
        vec![loss],
        vec![logits.clone()],
        Box::new(CrossEntropyOp {
            labels: labels.to_vec(),
            probs,
            n_classes: n,
        }),
    ))
}

// ---------------------------------------------------------------------------
// Core loop
// ---------------------------------------------------------------------------

enum LrPolicy {
    Cosine(LrSchedule<f64>),
    Fixed(f64),
}

/// Indices into the model's parameter list that the optimizer may move.
fn scope_indices(model: &Model, scope: FinetuneScope) -> Vec<usize> {
    match scope {
        FinetuneScope::Full => (0..model.named_params().len()).collect(),
        FinetuneScope::ClassifierOnly => model.classifier_param_indices(),
    }
}

fn run_training(
    model: &mut Model,
    data: &TrialSet,
    cfg: &TrainConfig,
    epochs: usize,
    policy: LrPolicy,
    trainable: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    data.validate()?;
    if data.n_trials() == 0 {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    let (channels, t_bins) = model.input_dims();
    if data.n_channels != channels || data.t_bins != t_bins {
        return Err(Error::ShapeMismatch {
            op: "train",
            lhs: vec![data.n_channels, data.t_bins],
            rhs: vec![channels, t_bins],
        });
    }

    let scoped: Vec<Tensor> = {
        let named = model.named_params();
        trainable.iter().map(|&i| named[i].1.clone()).collect()
    };
    let mut state = AdamState::new(&scoped);
    drop(scoped);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..data.n_trials()).collect();
    let mut epoch_loss = Vec::with_capacity(epochs);
    let mut epoch_accuracy = Vec::with_capacity(epochs);
    let mut step: u64 = 0;

    for _ in 0..epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        let mut correct = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let batch = data.batch_tensor(chunk);
            let labels = data.labels_usize(chunk);
            let logits = model.forward(&batch)?;
            for (pred, truth) in argmax_rows(&logits).iter().zip(&labels) {
                if pred == truth {
                    correct += 1;
                }
            }
            let loss = cross_entropy(&logits, &labels)?;
            loss.backward()?;
            loss_sum += loss.data()[0];
            n_batches += 1;

            let named = model.named_params();
            let grads: Vec<Vec<f64>> = trainable
                .iter()
                .map(|&i| {
                    named[i]
                        .1
                        .grad()
                        .unwrap_or_else(|| vec![0.0; named[i].1.numel()])
                })
                .collect();
            for (_, p) in &named {
                p.clear_grad();
            }

            let lr = match &policy {
                LrPolicy::Cosine(schedule) => cosine_lr(schedule, step)?,
                LrPolicy::Fixed(lr) => *lr,
            };
            let current: Vec<Tensor> = trainable.iter().map(|&i| named[i].1.clone()).collect();
            let updated = adam_step(&current, &grads, &mut state, lr)?;

            let mut full: Vec<Tensor> = named.into_iter().map(|(_, t)| t).collect();
            for (&i, t) in trainable.iter().zip(updated) {
                full[i] = t;
            }
            model.set_params(full)?;
            step += 1;
        }
        epoch_loss.push(loss_sum / n_batches as f64);
        epoch_accuracy.push(correct as f64 / data.n_trials() as f64);
    }
    Ok((epoch_loss, epoch_accuracy))
}

/// Pre-train with Adam and the cosine schedule over
/// `epochs * batches_per_epoch` steps.
pub fn train(model: &mut Model, data: &TrialSet, cfg: &TrainConfig) -> Result<RunReport> {
    let start = Instant::now();
    let n_batches = data.n_trials().div_ceil(cfg.batch_size).max(1);
    let schedule = LrSchedule::new(cfg.lr_max, cfg.lr_min, (cfg.epochs * n_batches) as u64)?;
    let all: Vec<usize> = (0..model.named_params().len()).collect();
    let (epoch_loss, epoch_accuracy) = run_training(
        model,
        data,
        cfg,
        cfg.epochs,
        LrPolicy::Cosine(schedule),
        &all,
    )?;
    Ok(RunReport {
        model_kind: model.kind().as_str().to_string(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg)?,
        epoch_loss,
        epoch_accuracy,
        wall_clock: start.elapsed(),
        ..Default::default()
    })
}

/// Supervised adaptation on a small labeled set: fixed learning rate,
/// a fifth of the pre-training epochs, scope per the config.
pub fn finetune(model: &mut Model, data: &TrialSet, cfg: &TrainConfig) -> Result<RunReport> {
    let start = Instant::now();
    let trainable = scope_indices(model, cfg.finetune_scope);
    let (epoch_loss, epoch_accuracy) = run_training(
        model,
        data,
        cfg,
        cfg.finetune_epochs(),
        LrPolicy::Fixed(cfg.finetune_lr()),
        &trainable,
    )?;
    Ok(RunReport {
        model_kind: model.kind().as_str().to_string(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg)?,
        epoch_loss,
        epoch_accuracy,
        wall_clock: start.elapsed(),
        ..Default::default()
    })
}

/// Score a model on a set; the accuracy is recomputed from the confusion
/// matrix it returns.
pub fn evaluate(model: &Model, data: &TrialSet) -> Result<EvalResult> {
    data.validate()?;
    if data.n_trials() == 0 {
        return Err(Error::Invalid("cannot evaluate on an empty dataset".into()));
    }
    let n_classes = model.n_classes();
    let mut confusion = vec![vec![0u32; n_classes]; n_classes];
    let indices: Vec<usize> = (0..data.n_trials()).collect();
    for chunk in indices.chunks(32) {
        let batch = data.batch_tensor(chunk);
        let labels = data.labels_usize(chunk);
        let preds = argmax_rows(&model.forward(&batch)?);
        for (truth, pred) in labels.iter().zip(preds) {
            confusion[*truth][pred] += 1;
        }
    }
    let diag: u32 = (0..n_classes).map(|i| confusion[i][i]).sum();
    let total: u32 = confusion.iter().flatten().sum();
    Ok(EvalResult {
        accuracy: diag as f64 / total as f64,
        confusion,
    })
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix-style stirring so per-day streams never collide
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pre-train on one day, then score each test day, optionally after
/// fine-tuning on a stratified `ratio` of that day's trials. `ratio = 0`
/// is the zero-shot protocol. Returns the pre-trained model and one
/// report per test day.
pub fn cross_day_protocol(
    data: &TrialSet,
    train_day: u16,
    test_days: &[u16],
    ratio: f64,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(Model, Vec<RunReport>)> {
    if test_days.contains(&train_day) {
        return Err(Error::Invalid(format!(
            "test days must be disjoint from the training day {train_day}"
        )));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Invalid(format!(
            "fine-tuning ratio must lie in [0, 1), got {ratio}"
        )));
    }
    let train_set = data.day_subset(train_day)?;
    let mut model = spec.build(cfg.seed)?;
    train(&mut model, &train_set, cfg)?;

    let reports = test_days
        .iter()
        .map(|&day| eval_day(&model, data, day, ratio, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, reports))
}

/// One cross-day measurement against an already pre-trained model.
/// Returns the adapted model (a plain clone when `ratio = 0`) together
/// with the report.
pub fn adapt_and_eval_day(
    pretrained: &Model,
    data: &TrialSet,
    day: u16,
    ratio: f64,
    cfg: &TrainConfig,
) -> Result<(Model, RunReport)> {
    let start = Instant::now();
    let day_set = data.day_subset(day)?;
    let mut model = pretrained.clone();
    let (epoch_loss, epoch_accuracy, result, n_eval) = if ratio > 0.0 {
        let (ft_set, eval_set) = finetune_subset(&day_set, ratio, mix_seed(cfg.seed, day as u64))?;
        let ft_report = finetune(&mut model, &ft_set, cfg)?;
        let result = evaluate(&model, &eval_set)?;
        (
            ft_report.epoch_loss,
            ft_report.epoch_accuracy,
            result,
            eval_set.n_trials(),
        )
    } else {
        let result = evaluate(&model, &day_set)?;
        (Vec::new(), Vec::new(), result, day_set.n_trials())
    };
    let report = RunReport {
        model_kind: pretrained.kind().as_str().to_string(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg)?,
        epoch_loss,
        epoch_accuracy,
        final_test_accuracy: Some(result.accuracy),
        confusion: Some(result.confusion),
        per_day: vec![DayResult {
            day,
            ratio,
            accuracy: result.accuracy,
            n_eval,
        }],
        wall_clock: start.elapsed(),
    };
    Ok((model, report))
}

/// [`adapt_and_eval_day`] without keeping the adapted model.
pub fn eval_day(
    pretrained: &Model,
    data: &TrialSet,
    day: u16,
    ratio: f64,
    cfg: &TrainConfig,
) -> Result<RunReport> {
    Ok(adapt_and_eval_day(pretrained, data, day, ratio, cfg)?.1)
}

// ---------------------------------------------------------------------------
// Sweeps and the ablation harness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub train_day: u16,
    pub test_day: u16,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Mean accuracy per ratio, ascending in ratio.
    pub fn mean_by_ratio(&self) -> Vec<(f64, f64)> {
        let mut ratios: Vec<f64> = self.rows.iter().map(|r| r.ratio).collect();
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ratios.dedup();
        ratios
            .into_iter()
            .map(|ratio| {
                let accs: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.ratio == ratio)
                    .map(|r| r.accuracy)
                    .collect();
                (ratio, accs.iter().sum::<f64>() / accs.len() as f64)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("ratio,seed,accuracy\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.ratio, row.seed, row.accuracy));
        }
        out
    }
}

/// Accuracy as a function of the fine-tuning ratio: one pre-trained model
/// per seed, shared across every ratio.
pub fn ratio_sweep(
    data: &TrialSet,
    train_day: u16,
    test_day: u16,
    ratios: &[f64],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<SweepTable> {
    if ratios.is_empty() || seeds.is_empty() {
        return Err(Error::Invalid("need at least one ratio and one seed".into()));
    }
    if ratios.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Invalid("ratios must be sorted ascending".into()));
    }
    if ratios.iter().any(|&r| !(0.0..1.0).contains(&r)) {
        return Err(Error::Invalid("ratios must lie in [0, 1)".into()));
    }

    let mut rows = Vec::with_capacity(ratios.len() * seeds.len());
    for &seed in seeds {
        let run_cfg = cfg.with_seed(seed);
        let train_set = data.day_subset(train_day)?;
        let mut model = spec.build(seed)?;
        train(&mut model, &train_set, &run_cfg)?;
        for &ratio in ratios {
            let report = eval_day(&model, data, test_day, ratio, &run_cfg)?;
            rows.push(SweepRow {
                ratio,
                seed,
                accuracy: report.final_test_accuracy.unwrap(),
            });
        }
    }
    rows.sort_by(|a, b| {
        a.ratio
            .partial_cmp(&b.ratio)
            .unwrap()
            .then(a.seed.cmp(&b.seed))
    });
    Ok(SweepTable {
        train_day,
        test_day,
        rows,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationVariantReport {
    pub variant: String,
    pub rows: Vec<AblationRow>,
    pub mean_accuracy: f64,
    pub std_dev: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSuiteReport {
    pub train_day: u16,
    pub test_day: u16,
    pub ratio: f64,
    pub variants: Vec<AblationVariantReport>,
}

impl AblationSuiteReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,accuracy\n");
        for v in &self.variants {
            for row in &v.rows {
                out.push_str(&format!("{},{},{}\n", row.variant, row.seed, row.accuracy));
            }
        }
        out
    }
}

/// The four-variant ablation: full model, no-CA, no-TCN, no-LT, all run
/// with identical data splits and identical seeds.
pub fn ablation_suite(
    data: &TrialSet,
    train_day: u16,
    test_day: u16,
    ratio: f64,
    base_config: &crate::model::ModelConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationSuiteReport> {
    if seeds.is_empty() {
        return Err(Error::Invalid("need at least one seed".into()));
    }
    let ablations = [
        AblationSet::default(),
        AblationSet {
            disable_ca: true,
            ..Default::default()
        },
        AblationSet {
            disable_tcn: true,
            ..Default::default()
        },
        AblationSet {
            disable_lt: true,
            ..Default::default()
        },
    ];
    let mut variants = Vec::with_capacity(4);
    for ablation in ablations {
        let spec = ModelSpec::Mfsnn(crate::model::ablated_config(base_config.clone(), ablation)?);
        let mut rows = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run_cfg = cfg.with_seed(seed);
            let (_, reports) =
                cross_day_protocol(data, train_day, &[test_day], ratio, &spec, &run_cfg)?;
            rows.push(AblationRow {
                variant: ablation.variant_name().to_string(),
                seed,
                accuracy: reports[0].final_test_accuracy.unwrap(),
            });
        }
        let mean = rows.iter().map(|r| r.accuracy).sum::<f64>() / rows.len() as f64;
        let var = if rows.len() > 1 {
            rows.iter()
                .map(|r| (r.accuracy - mean).powi(2))
                .sum::<f64>()
                / (rows.len() - 1) as f64
        } else {
            0.0
        };
        variants.push(AblationVariantReport {
            variant: ablation.variant_name().to_string(),
            rows,
            mean_accuracy: mean,
            std_dev: var.sqrt(),
        });
    }
    Ok(AblationSuiteReport {
        train_day,
        test_day,
        ratio,
        variants,
    })
}
