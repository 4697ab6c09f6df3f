//! Decoder assemblies.
//!
//! Three decoders share the batch interface `[B, N_c, T] -> logits [B, n]`:
//!
//! * [`MfsnnModel`]: the spiking network. The encoder output drives a LIF
//!   layer as a constant current over the window; each step's spike vector
//!   maps through the fully connected readout and the per-step logits are
//!   averaged.
//! * [`MfannModel`]: the architecturally identical non-spiking twin (ReLU
//!   everywhere, single pass), kept as the multiply-accumulate energy
//!   comparator.
//! * [`MlpModel`]: a plain flatten/ReLU baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    concat_subencoders, init_subencoder, split_channels, sub_encoder_forward_ann,
    sub_encoder_forward_traced, EncoderConfig, PathSelection, SubEncoderTrace,
};
use crate::error::{Error, Result};
use crate::spiking::{mean_of, run_window_spikes};
use crate::tensor::Tensor as TensorG;
use crate::{LifParams, SubEncoderWeights, Tensor};

/// Branch-disable flags for the ablation harness.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSet {
    #[serde(default)]
    pub disable_ca: bool,
    #[serde(default)]
    pub disable_tcn: bool,
    #[serde(default)]
    pub disable_lt: bool,
}

impl AblationSet {
    pub fn validate(&self) -> Result<()> {
        self.paths().validate()
    }

    pub fn paths(&self) -> PathSelection {
        PathSelection {
            lt: !self.disable_lt,
            ca: !self.disable_ca,
            tcn: !self.disable_tcn,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match (self.disable_ca, self.disable_tcn, self.disable_lt) {
            (false, false, false) => "full",
            (true, false, false) => "no-ca",
            (false, true, false) => "no-tcn",
            (false, false, true) => "no-lt",
            _ => "custom",
        }
    }
}

/// Everything needed to build a multiscale decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub lif: LifParams,
    pub n_classes: usize,
    /// Share one time-axis map across all sub-encoders instead of giving
    /// each its own.
    #[serde(default)]
    pub share_lt: bool,
    #[serde(default)]
    pub ablation: AblationSet,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.lif.validate()?;
        self.ablation.validate()?;
        if self.n_classes == 0 {
            return Err(Error::Config("n_classes must be positive".into()));
        }
        Ok(())
    }

    /// Width of the flattened encoder output feeding the classifier.
    pub fn classifier_input_width(&self) -> usize {
        self.encoder.n_channels * self.encoder.t_out
    }

    /// Closed-form parameter count; the constructors assert against it.
    pub fn parameter_count(&self) -> usize {
        let e = &self.encoder;
        let c = e.channels_per_subencoder();
        let cr = e.bottleneck_width();
        let lt = e.t_in * e.t_out;
        let per_sub = cr * c + cr + c * cr + c + c * e.kernel_size + c;
        let lt_total = if self.share_lt {
            lt
        } else {
            lt * e.n_subencoders
        };
        lt_total
            + per_sub * e.n_subencoders
            + self.n_classes * self.classifier_input_width()
            + self.n_classes
    }
}

/// Shared weight container of the spiking network and its twin.
#[derive(Debug, Clone)]
pub struct MultiscaleCore {
    pub config: ModelConfig,
    pub sub_weights: Vec<SubEncoderWeights>,
    /// `[n_classes, N_c * T']` readout and its `[n_classes]` bias.
    pub classifier_weight: Tensor,
    pub classifier_bias: Tensor,
}

fn uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen::<f64>() * 2.0 * bound - bound).collect();
    TensorG::param(shape, data).expect("consistent shape")
}

impl MultiscaleCore {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sub_weights: Vec<SubEncoderWeights> = (0..config.encoder.n_subencoders)
            .map(|_| init_subencoder(&config.encoder, &mut rng))
            .collect();
        if config.share_lt {
            let shared = sub_weights[0].lt.clone();
            for w in sub_weights.iter_mut() {
                w.lt = shared.clone();
            }
        }
        let width = config.classifier_input_width();
        let classifier_weight = uniform(&[config.n_classes, width], width, &mut rng);
        let classifier_bias = uniform(&[config.n_classes], width, &mut rng);
        let core = MultiscaleCore {
            config,
            sub_weights,
            classifier_weight,
            classifier_bias,
        };
        debug_assert_eq!(core.actual_parameter_count(), core.config.parameter_count());
        Ok(core)
    }

    fn actual_parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let e = &self.config.encoder;
        if batch.shape().len() != 3
            || batch.shape()[1] != e.n_channels
            || batch.shape()[2] != e.t_in
        {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: batch.shape().to_vec(),
                rhs: vec![e.n_channels, e.t_in],
            });
        }
        if !batch.all_finite() {
            return Err(Error::Invalid("batch contains non-finite values".into()));
        }
        Ok(())
    }

    /// Parameter handles in a fixed, documented order. A shared time-axis
    /// map appears once under the name `shared.lt`.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        if self.config.share_lt {
            out.push(("shared.lt".to_string(), self.sub_weights[0].lt.clone()));
        }
        for (i, w) in self.sub_weights.iter().enumerate() {
            if !self.config.share_lt {
                out.push((format!("sub{i}.lt"), w.lt.clone()));
            }
            out.push((format!("sub{i}.ca_compress"), w.ca_compress.clone()));
            out.push((format!("sub{i}.ca_compress_bias"), w.ca_compress_bias.clone()));
            out.push((format!("sub{i}.ca_expand"), w.ca_expand.clone()));
            out.push((format!("sub{i}.ca_expand_bias"), w.ca_expand_bias.clone()));
            out.push((format!("sub{i}.tcn_kernels"), w.tcn_kernels.clone()));
            out.push((format!("sub{i}.tcn_bias"), w.tcn_bias.clone()));
        }
        out.push(("classifier.weight".to_string(), self.classifier_weight.clone()));
        out.push(("classifier.bias".to_string(), self.classifier_bias.clone()));
        out
    }

    /// Replace parameters; `values` must follow the [`Self::named_params`] order.
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        let expected = self.named_params().len();
        if values.len() != expected {
            return Err(Error::Invalid(format!(
                "expected {expected} parameter tensors, got {}",
                values.len()
            )));
        }
        let mut it = values.into_iter();
        if self.config.share_lt {
            let shared = it.next().unwrap();
            for w in self.sub_weights.iter_mut() {
                w.lt = shared.clone();
            }
        }
        for w in self.sub_weights.iter_mut() {
            if !self.config.share_lt {
                w.lt = it.next().unwrap();
            }
            w.ca_compress = it.next().unwrap();
            w.ca_compress_bias = it.next().unwrap();
            w.ca_expand = it.next().unwrap();
            w.ca_expand_bias = it.next().unwrap();
            w.tcn_kernels = it.next().unwrap();
            w.tcn_bias = it.next().unwrap();
        }
        self.classifier_weight = it.next().unwrap();
        self.classifier_bias = it.next().unwrap();
        Ok(())
    }

    fn classifier_param_indices(&self) -> Vec<usize> {
        let n = self.named_params().len();
        vec![n - 2, n - 1]
    }
}

/// Intermediates of one spiking forward pass, kept for firing-rate probes.
#[derive(Debug)]
pub struct ForwardTrace {
    /// Raw input block per sub-encoder.
    pub sub_inputs: Vec<Tensor>,
    pub sub_traces: Vec<SubEncoderTrace<f64>>,
    /// Classifier LIF spike train, one tensor per window step.
    pub classifier_spikes: Vec<Tensor>,
}

/// The spiking decoder.
#[derive(Debug, Clone)]
pub struct MfsnnModel {
    pub core: MultiscaleCore,
}

impl MfsnnModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(MfsnnModel {
            core: MultiscaleCore::init(config, seed)?,
        })
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(batch)?.0)
    }

    pub fn forward_traced(&self, batch: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        let core = &self.core;
        core.check_batch(batch)?;
        let cfg = &core.config;
        let paths = cfg.ablation.paths();
        let blocks = split_channels(batch, &cfg.encoder)?;

        let mut outputs = Vec::with_capacity(blocks.len());
        let mut sub_traces = Vec::with_capacity(blocks.len());
        for (block, weights) in blocks.iter().zip(&core.sub_weights) {
            let (out, trace) =
                sub_encoder_forward_traced(block, weights, &cfg.encoder, &cfg.lif, &paths)?;
            outputs.push(out);
            sub_traces.push(trace);
        }
        let e_out = concat_subencoders(&outputs)?; // [B, N_c, T']
        let b = e_out.shape()[0];
        let flat = e_out.reshape(&[b, cfg.classifier_input_width()])?;

        // The fused features act as a constant input current; the readout
        // maps each step's spike vector to logits, averaged over the window.
        let spikes = run_window_spikes(&flat, &cfg.lif)?;
        let w_t = core.classifier_weight.transpose2()?;
        let mut step_logits = Vec::with_capacity(spikes.len());
        for s in &spikes {
            step_logits.push(s.matmul(&w_t)?.add_bias_rows(&core.classifier_bias)?);
        }
        let logits = mean_of(&step_logits)?;
        Ok((
            logits,
            ForwardTrace {
                sub_inputs: blocks,
                sub_traces,
                classifier_spikes: spikes,
            },
        ))
    }
}

/// Non-spiking twin: identical parameter shapes, ReLU activations, one pass.
#[derive(Debug, Clone)]
pub struct MfannModel {
    pub core: MultiscaleCore,
}

impl MfannModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(MfannModel {
            core: MultiscaleCore::init(config, seed)?,
        })
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let core = &self.core;
        core.check_batch(batch)?;
        let cfg = &core.config;
        let paths = cfg.ablation.paths();
        let blocks = split_channels(batch, &cfg.encoder)?;
        let outputs: Vec<Tensor> = blocks
            .iter()
            .zip(&core.sub_weights)
            .map(|(block, weights)| sub_encoder_forward_ann(block, weights, &cfg.encoder, &paths))
            .collect::<Result<_>>()?;
        let e_out = concat_subencoders(&outputs)?;
        let b = e_out.shape()[0];
        let flat = e_out.reshape(&[b, cfg.classifier_input_width()])?;
        let hidden = flat.relu();
        let w_t = core.classifier_weight.transpose2()?;
        hidden.matmul(&w_t)?.add_bias_rows(&core.classifier_bias)
    }
}

/// Flatten -> ReLU stack -> logits reference decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub n_channels: usize,
    pub t_in: usize,
    pub hidden: Vec<usize>,
    pub n_classes: usize,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.t_in == 0 || self.n_classes == 0 {
            return Err(Error::Config("MLP dimensions must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("MLP hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    pub config: MlpConfig,
    /// `[out, in]` weight and `[out]` bias per layer, hidden layers first.
    pub layers: Vec<(Tensor, Tensor)>,
}

impl MlpModel {
    pub fn init(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![config.n_channels * config.t_in];
        dims.extend(&config.hidden);
        dims.push(config.n_classes);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                (
                    uniform(&[fan_out, fan_in], fan_in, &mut rng),
                    uniform(&[fan_out], fan_in, &mut rng),
                )
            })
            .collect();
        Ok(MlpModel { config, layers })
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let shape = batch.shape();
        if shape.len() != 3
            || shape[1] != self.config.n_channels
            || shape[2] != self.config.t_in
        {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: shape.to_vec(),
                rhs: vec![self.config.n_channels, self.config.t_in],
            });
        }
        if !batch.all_finite() {
            return Err(Error::Invalid("batch contains non-finite values".into()));
        }
        let b = shape[0];
        let mut x = batch.reshape(&[b, self.config.n_channels * self.config.t_in])?;
        let last = self.layers.len() - 1;
        for (i, (w, bias)) in self.layers.iter().enumerate() {
            x = x.matmul(&w.transpose2()?)?.add_bias_rows(bias)?;
            if i != last {
                x = x.relu();
            }
        }
        Ok(x)
    }

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), w.clone()));
            out.push((format!("layer{i}.bias"), b.clone()));
        }
        out
    }
}

/// Identifies which decoder a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mfsnn,
    Mfann,
    Mlp,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Mfsnn => "mfsnn",
            ModelKind::Mfann => "mfann",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mfsnn" => Ok(ModelKind::Mfsnn),
            "mfann" => Ok(ModelKind::Mfann),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::Invalid(format!(
                "unknown model kind '{other}', expected mfsnn, mfann, or mlp"
            ))),
        }
    }
}

/// Model kind plus its configuration; enough to rebuild a decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", content = "config", rename_all = "snake_case")]
pub enum ModelSpec {
    Mfsnn(ModelConfig),
    Mfann(ModelConfig),
    Mlp(MlpConfig),
}

impl ModelSpec {
    pub fn build(&self, seed: u64) -> Result<Model> {
        Ok(match self {
            ModelSpec::Mfsnn(c) => Model::Mfsnn(MfsnnModel::init(c.clone(), seed)?),
            ModelSpec::Mfann(c) => Model::Mfann(MfannModel::init(c.clone(), seed)?),
            ModelSpec::Mlp(c) => Model::Mlp(MlpModel::init(c.clone(), seed)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Mfsnn(_) => ModelKind::Mfsnn,
            ModelSpec::Mfann(_) => ModelKind::Mfann,
            ModelSpec::Mlp(_) => ModelKind::Mlp,
        }
    }
}

/// Any of the three decoders, behind one batch interface.
#[derive(Debug, Clone)]
pub enum Model {
    Mfsnn(MfsnnModel),
    Mfann(MfannModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        match self {
            Model::Mfsnn(m) => m.forward(batch),
            Model::Mfann(m) => m.forward(batch),
            Model::Mlp(m) => m.forward(batch),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Mfsnn(_) => ModelKind::Mfsnn,
            Model::Mfann(_) => ModelKind::Mfann,
            Model::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Mfsnn(m) => ModelSpec::Mfsnn(m.core.config.clone()),
            Model::Mfann(m) => ModelSpec::Mfann(m.core.config.clone()),
            Model::Mlp(m) => ModelSpec::Mlp(m.config.clone()),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Model::Mfsnn(m) => m.core.config.n_classes,
            Model::Mfann(m) => m.core.config.n_classes,
            Model::Mlp(m) => m.config.n_classes,
        }
    }

    /// Expected `(channels, time bins)` of input batches.
    pub fn input_dims(&self) -> (usize, usize) {
        match self {
            Model::Mfsnn(m) => (m.core.config.encoder.n_channels, m.core.config.encoder.t_in),
            Model::Mfann(m) => (m.core.config.encoder.n_channels, m.core.config.encoder.t_in),
            Model::Mlp(m) => (m.config.n_channels, m.config.t_in),
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        match self {
            Model::Mfsnn(m) => m.core.named_params(),
            Model::Mfann(m) => m.core.named_params(),
            Model::Mlp(m) => m.named_params(),
        }
    }

    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        match self {
            Model::Mfsnn(m) => m.core.set_params(values),
            Model::Mfann(m) => m.core.set_params(values),
            Model::Mlp(m) => {
                let expected = m.layers.len() * 2;
                if values.len() != expected {
                    return Err(Error::Invalid(format!(
                        "expected {expected} parameter tensors, got {}",
                        values.len()
                    )));
                }
                let mut it = values.into_iter();
                for layer in m.layers.iter_mut() {
                    layer.0 = it.next().unwrap();
                    layer.1 = it.next().unwrap();
                }
                Ok(())
            }
        }
    }

    /// Indices (into the [`Self::named_params`] order) of the readout layer,
    /// the set touched by classifier-only fine-tuning.
    pub fn classifier_param_indices(&self) -> Vec<usize> {
        match self {
            Model::Mfsnn(m) => m.core.classifier_param_indices(),
            Model::Mfann(m) => m.core.classifier_param_indices(),
            Model::Mlp(m) => {
                let n = m.layers.len() * 2;
                vec![n - 2, n - 1]
            }
        }
    }
}

/// Variant of a config with the given branches disabled. Disabling CA
/// pins the gate at 1; disabling TCN leaves only the time-axis map;
/// disabling LT leaves only the gated convolution path.
pub fn ablated_config(mut config: ModelConfig, ablation: AblationSet) -> Result<ModelConfig> {
    ablation.validate()?;
    config.ablation = ablation;
    Ok(config)
}

/// Class index per row: argmax of the logits, ties broken toward the
/// lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let n = logits.shape()[1];
    logits
        .data()
        .chunks(n)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Predicted class per trial.
pub fn predict(model: &Model, batch: &Tensor) -> Result<Vec<usize>> {
    Ok(argmax_rows(&model.forward(batch)?))
}

/// Row-wise softmax, for diagnostics and tests.
pub fn softmax_rows(logits: &Tensor) -> Vec<f64> {
    let n = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / z));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                n_channels: 8,
                n_subencoders: 2,
                t_in: 10,
                t_out: 5,
                kernel_size: 3,
                dilation: 2,
                bottleneck_ratio: 4,
            },
            lif: LifParams::default(),
            n_classes: 4,
            share_lt: false,
            ablation: AblationSet::default(),
        }
    }

    fn zero_biases(core: &mut MultiscaleCore) {
        for w in core.sub_weights.iter_mut() {
            w.ca_compress_bias = Tensor::zeros(w.ca_compress_bias.shape());
            w.ca_expand_bias = Tensor::zeros(w.ca_expand_bias.shape());
            w.tcn_bias = Tensor::zeros(w.tcn_bias.shape());
        }
        core.classifier_bias = Tensor::zeros(core.classifier_bias.shape());
    }

    #[test]
    fn quiescent_network_outputs_classifier_bias() {
        // Zero input and zero biases produce zero spikes everywhere, so the
        // per-step logits are exactly the (zero) classifier bias.
        let mut model = MfsnnModel::init(tiny_config(), 7).unwrap();
        zero_biases(&mut model.core);
        let batch = Tensor::zeros(&[3, 8, 10]);
        let logits = model.forward(&batch).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));

        // With a nonzero bias the identity holds to rounding of the window
        // average.
        model.core.classifier_bias = TensorG::param(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let logits = model.forward(&batch).unwrap();
        for row in logits.data().chunks(4) {
            for (got, want) in row.iter().zip([0.1, 0.2, 0.3, 0.4]) {
                assert!((got - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn output_shape_and_softmax_normalization() {
        let model = MfsnnModel::init(tiny_config(), 1).unwrap();
        let batch = Tensor::full(&[32, 8, 10], 1.0);
        let logits = model.forward(&batch).unwrap();
        assert_eq!(logits.shape(), &[32, 4]);
        for row in softmax_rows(&logits).chunks(4) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        let logits = TensorG::new(&[2, 4], vec![0.1, 0.9, 0.2, 0.3, 0.5, 0.5, 0.0, 0.0]).unwrap();
        assert_eq!(argmax_rows(&logits), vec![1, 0]);
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        for share in [false, true] {
            let cfg = ModelConfig {
                share_lt: share,
                ..tiny_config()
            };
            let model = MfsnnModel::init(cfg.clone(), 3).unwrap();
            let total: usize = model
                .core
                .named_params()
                .iter()
                .map(|(_, t)| t.numel())
                .sum();
            assert_eq!(total, cfg.parameter_count());
        }
    }

    #[test]
    fn snn_and_ann_share_parameter_shapes() {
        let snn = MfsnnModel::init(tiny_config(), 5).unwrap();
        let ann = MfannModel::init(tiny_config(), 5).unwrap();
        let a = snn.core.named_params();
        let b = ann.core.named_params();
        assert_eq!(a.len(), b.len());
        for ((na, ta), (nb, tb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
        }
    }

    #[test]
    fn no_tcn_variant_equals_the_lt_path() {
        let cfg = ablated_config(
            tiny_config(),
            AblationSet {
                disable_tcn: true,
                ..Default::default()
            },
        )
        .unwrap();
        let model = MfsnnModel::init(cfg.clone(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data: Vec<f64> = (0..2 * 8 * 10).map(|_| rng.gen::<f64>() * 3.0).collect();
        let batch = TensorG::new(&[2, 8, 10], data).unwrap();

        // Reconstruct the LT path by hand through the classifier.
        let blocks = split_channels(&batch, &cfg.encoder).unwrap();
        let e: Vec<Tensor> = blocks
            .iter()
            .zip(&model.core.sub_weights)
            .map(|(blk, w)| crate::encoder::linear_transform(blk, &w.lt).unwrap())
            .collect();
        let e_out = concat_subencoders(&e).unwrap();
        let flat = e_out.reshape(&[2, cfg.classifier_input_width()]).unwrap();
        let spikes = run_window_spikes(&flat, &cfg.lif).unwrap();
        let w_t = model.core.classifier_weight.transpose2().unwrap();
        let mut per_step = Vec::new();
        for s in &spikes {
            per_step.push(
                s.matmul(&w_t)
                    .unwrap()
                    .add_bias_rows(&model.core.classifier_bias)
                    .unwrap(),
            );
        }
        let expect = mean_of(&per_step).unwrap();
        let got = model.forward(&batch).unwrap();
        assert_eq!(got.data(), expect.data());
    }

    #[test]
    fn no_ca_variant_equals_a_constant_one_gate() {
        let cfg = ablated_config(
            tiny_config(),
            AblationSet {
                disable_ca: true,
                ..Default::default()
            },
        )
        .unwrap();
        let model = MfsnnModel::init(cfg.clone(), 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let data: Vec<f64> = (0..8 * 10).map(|_| rng.gen::<f64>() * 4.0).collect();
        let batch = TensorG::new(&[1, 8, 10], data).unwrap();

        // compose the encoder by hand with the gate pinned at 1
        let blocks = split_channels(&batch, &cfg.encoder).unwrap();
        let ones = Tensor::full(&[1, cfg.encoder.channels_per_subencoder()], 1.0);
        let outs: Vec<Tensor> = blocks
            .iter()
            .zip(&model.core.sub_weights)
            .map(|(blk, w)| {
                let lt = crate::encoder::linear_transform(blk, &w.lt).unwrap();
                let conv = crate::encoder::tcn_conv(
                    blk,
                    &w.tcn_kernels,
                    &w.tcn_bias,
                    cfg.encoder.dilation,
                )
                .unwrap();
                let pooled =
                    crate::encoder::temporal_avg_pool(&conv, cfg.encoder.pool_window()).unwrap();
                crate::encoder::fuse(&lt, &ones, &pooled).unwrap()
            })
            .collect();
        let e_out = concat_subencoders(&outs).unwrap();
        let flat = e_out.reshape(&[1, cfg.classifier_input_width()]).unwrap();
        let spikes = run_window_spikes(&flat, &cfg.lif).unwrap();
        let w_t = model.core.classifier_weight.transpose2().unwrap();
        let per_step: Vec<Tensor> = spikes
            .iter()
            .map(|s| {
                s.matmul(&w_t)
                    .unwrap()
                    .add_bias_rows(&model.core.classifier_bias)
                    .unwrap()
            })
            .collect();
        let expect = mean_of(&per_step).unwrap();
        assert_eq!(model.forward(&batch).unwrap().data(), expect.data());
    }

    #[test]
    fn disabling_both_feature_paths_is_rejected() {
        let bad = AblationSet {
            disable_lt: true,
            disable_tcn: true,
            ..Default::default()
        };
        assert!(ablated_config(tiny_config(), bad).is_err());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let model = MfsnnModel::init(tiny_config(), 2).unwrap();
        let mut data = vec![0.0; 8 * 10];
        data[3] = f64::NAN;
        let batch = TensorG::new(&[1, 8, 10], data).unwrap();
        assert!(model.forward(&batch).is_err());
    }

    #[test]
    fn crafted_readout_selects_the_wired_class() {
        // One saturated fused feature; the readout weights connect it to
        // class 2 only, so every trial lands there.
        let cfg = tiny_config();
        let mut model = MfsnnModel::init(cfg.clone(), 4).unwrap();
        zero_biases(&mut model.core);
        let width = cfg.classifier_input_width();
        let mut w = vec![0.0; 4 * width];
        w[2 * width] = 5.0; // class 2 reads feature 0
        model.core.classifier_weight = TensorG::param(&[4, width], w).unwrap();

        // Drive feature 0 via a strong constant input on the first block.
        let mut data = vec![0.0; 8 * 10];
        for t in 0..10 {
            data[t] = 50.0;
        }
        let batch = TensorG::new(&[1, 8, 10], data).unwrap();
        let pred = predict(&Model::Mfsnn(model), &batch).unwrap();
        assert_eq!(pred, vec![2]);
    }

    #[test]
    fn forward_is_deterministic() {
        let model = MfsnnModel::init(tiny_config(), 42).unwrap();
        let batch = Tensor::full(&[4, 8, 10], 2.0);
        let a = model.forward(&batch).unwrap();
        let b = model.forward(&batch).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
