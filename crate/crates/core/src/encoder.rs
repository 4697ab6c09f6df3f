//! The multi-path sub-encoder.
//!
//! A recording with `N_c` channels is split into `N_s` contiguous blocks of
//! `C = N_c / N_s` channels. Each block flows through three branches:
//!
//! * a learnable linear map along the time axis (`T -> T'`),
//! * a spiking channel-attention bottleneck producing per-channel gates
//!   in [0, 1],
//! * a causal dilated per-channel convolution followed by temporal mean
//!   pooling down to `T'`.
//!
//! The branches combine as `E = LT + gate (*) TCN` and the block outputs
//! concatenate back to `N_c` channels.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spiking::{mean_of, rate_over_window, run_window_spikes, LifParams};
use crate::tensor::Tensor;

/// Architecture hyperparameters of the encoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub n_channels: usize,
    pub n_subencoders: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub bottleneck_ratio: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_channels: 128,
            n_subencoders: 16,
            t_in: 50,
            t_out: 10,
            kernel_size: 3,
            dilation: 2,
            bottleneck_ratio: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_channels", self.n_channels),
            ("n_subencoders", self.n_subencoders),
            ("t_in", self.t_in),
            ("t_out", self.t_out),
            ("kernel_size", self.kernel_size),
            ("dilation", self.dilation),
            ("bottleneck_ratio", self.bottleneck_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_channels % self.n_subencoders != 0 {
            return Err(Error::Config(format!(
                "n_channels ({}) must be divisible by n_subencoders ({})",
                self.n_channels, self.n_subencoders
            )));
        }
        if self.t_in % self.t_out != 0 {
            return Err(Error::Config(format!(
                "t_in ({}) must be divisible by t_out ({})",
                self.t_in, self.t_out
            )));
        }
        let c = self.channels_per_subencoder();
        if c % self.bottleneck_ratio != 0 {
            return Err(Error::Config(format!(
                "channels per sub-encoder ({c}) must be divisible by bottleneck_ratio ({})",
                self.bottleneck_ratio
            )));
        }
        Ok(())
    }

    /// C = N_c / N_s.
    pub fn channels_per_subencoder(&self) -> usize {
        self.n_channels / self.n_subencoders
    }

    /// Pooling window p = T / T'.
    pub fn pool_window(&self) -> usize {
        self.t_in / self.t_out
    }

    pub fn bottleneck_width(&self) -> usize {
        self.channels_per_subencoder() / self.bottleneck_ratio
    }
}

/// Which of the three branches a sub-encoder actually computes. Used by
/// the ablation harness; the default enables everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PathSelection {
    pub lt: bool,
    pub ca: bool,
    pub tcn: bool,
}

impl Default for PathSelection {
    fn default() -> Self {
        PathSelection {
            lt: true,
            ca: true,
            tcn: true,
        }
    }
}

impl PathSelection {
    /// At least one feature-bearing branch must remain; attention alone
    /// gates nothing.
    pub fn validate(&self) -> Result<()> {
        if !self.lt && !self.tcn {
            return Err(Error::Config(
                "no feature path: at least one of the LT and TCN branches must stay enabled".into(),
            ));
        }
        Ok(())
    }

    pub fn is_full(&self) -> bool {
        self.lt && self.ca && self.tcn
    }
}

/// Learnable parameters of one sub-encoder.
#[derive(Debug, Clone)]
pub struct SubEncoderWeights<F: Scalar> {
    /// `[T, T']` time-axis map.
    pub lt: Tensor<F>,
    /// `[C/r, C]` bottleneck compression and its `[C/r]` bias.
    pub ca_compress: Tensor<F>,
    pub ca_compress_bias: Tensor<F>,
    /// `[C, C/r]` expansion back to per-channel gates and its `[C]` bias.
    pub ca_expand: Tensor<F>,
    pub ca_expand_bias: Tensor<F>,
    /// `[C, k]` per-channel convolution kernels and their `[C]` biases.
    pub tcn_kernels: Tensor<F>,
    pub tcn_bias: Tensor<F>,
}

fn uniform_param<F: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<F> {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::from_f64(rng.gen::<f64>() * 2.0 * bound - bound))
        .collect();
    Tensor::param(shape, data).expect("consistent shape")
}

/// Fresh weights drawn uniformly in +-sqrt(1/fan_in).
pub fn init_subencoder<F: Scalar>(cfg: &EncoderConfig, rng: &mut impl Rng) -> SubEncoderWeights<F> {
    let c = cfg.channels_per_subencoder();
    let cr = cfg.bottleneck_width();
    SubEncoderWeights {
        lt: uniform_param(&[cfg.t_in, cfg.t_out], cfg.t_in, rng),
        ca_compress: uniform_param(&[cr, c], c, rng),
        ca_compress_bias: uniform_param(&[cr], c, rng),
        ca_expand: uniform_param(&[c, cr], cr, rng),
        ca_expand_bias: uniform_param(&[c], cr, rng),
        tcn_kernels: uniform_param(&[c, cfg.kernel_size], cfg.kernel_size, rng),
        tcn_bias: uniform_param(&[c], cfg.kernel_size, rng),
    }
}

/// Split `[B, N_c, T]` into `N_s` contiguous `[B, C, T]` blocks, in channel
/// order. Concatenating the outputs reproduces the input exactly.
pub fn split_channels<F: Scalar>(
    input: &Tensor<F>,
    cfg: &EncoderConfig,
) -> Result<Vec<Tensor<F>>> {
    cfg.validate()?;
    if input.shape().len() != 3 || input.shape()[1] != cfg.n_channels {
        return Err(Error::ShapeMismatch {
            op: "split_channels",
            lhs: input.shape().to_vec(),
            rhs: vec![cfg.n_channels],
        });
    }
    let c = cfg.channels_per_subencoder();
    (0..cfg.n_subencoders)
        .map(|i| input.slice_dim1(i * c, c))
        .collect()
}

/// Right-multiply every channel's time series by the `[T, T']` map.
pub fn linear_transform<F: Scalar>(input: &Tensor<F>, m: &Tensor<F>) -> Result<Tensor<F>> {
    let shape = input.shape();
    if shape.len() != 3 || m.shape().len() != 2 || shape[2] != m.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "linear_transform",
            lhs: shape.to_vec(),
            rhs: m.shape().to_vec(),
        });
    }
    let (b, c, t) = (shape[0], shape[1], shape[2]);
    let t_out = m.shape()[1];
    let flat = input.reshape(&[b * c, t])?;
    flat.matmul(m)?.reshape(&[b, c, t_out])
}

/// Mean over the time axis: `[B, C, T] -> [B, C]`.
pub fn global_avg_pool<F: Scalar>(input: &Tensor<F>) -> Result<Tensor<F>> {
    if input.shape().len() != 3 {
        return Err(Error::Invalid(format!(
            "global_avg_pool requires rank 3, got {:?}",
            input.shape()
        )));
    }
    input.mean_last_axis()
}

/// Per-step inputs seen by the attention bottleneck, kept for firing-rate
/// measurement.
#[derive(Debug, Clone)]
pub struct CaTrace<F: Scalar> {
    /// Pooled features driving the compression layer.
    pub pooled: Tensor<F>,
    /// Spike train driving the expansion layer, one tensor per window step.
    pub compress_spikes: Vec<Tensor<F>>,
}

/// Squeeze-and-excite style gates from two spiking 1x1 convolutions.
///
/// The pooled features drive a compressing layer (`C -> C/r`) whose firing
/// rate drives an expanding layer (`C/r -> C`); each gate entry is a rate
/// in [0, 1].
pub fn channel_attention<F: Scalar>(
    input: &Tensor<F>,
    weights: &SubEncoderWeights<F>,
    lif: &LifParams<F>,
) -> Result<Tensor<F>> {
    Ok(channel_attention_traced(input, weights, lif)?.0)
}

pub fn channel_attention_traced<F: Scalar>(
    input: &Tensor<F>,
    weights: &SubEncoderWeights<F>,
    lif: &LifParams<F>,
) -> Result<(Tensor<F>, CaTrace<F>)> {
    let pooled = global_avg_pool(input)?; // [B, C]
    let compress_t = weights.ca_compress.transpose2()?; // [C, C/r]
    let current = pooled
        .matmul(&compress_t)?
        .add_bias_rows(&weights.ca_compress_bias)?;
    let compress_spikes = run_window_spikes(&current, lif)?;
    let u = mean_of(&compress_spikes)?; // [B, C/r], rates

    let expand_t = weights.ca_expand.transpose2()?; // [C/r, C]
    let current = u
        .matmul(&expand_t)?
        .add_bias_rows(&weights.ca_expand_bias)?;
    let gate = rate_over_window(&current, lif)?; // [B, C]
    Ok((
        gate,
        CaTrace {
            pooled,
            compress_spikes,
        },
    ))
}

/// Causal dilated per-channel convolution; output keeps length `T` and
/// entry `t` depends only on inputs at times `<= t`.
pub fn tcn_conv<F: Scalar>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: &Tensor<F>,
    dilation: usize,
) -> Result<Tensor<F>> {
    input.depthwise_causal_conv(kernels, bias, dilation)
}

/// Non-overlapping window means along time: `[B, C, T] -> [B, C, T/p]`.
pub fn temporal_avg_pool<F: Scalar>(input: &Tensor<F>, p: usize) -> Result<Tensor<F>> {
    if input.shape().len() != 3 {
        return Err(Error::Invalid(format!(
            "temporal_avg_pool requires rank 3, got {:?}",
            input.shape()
        )));
    }
    input.avg_pool_last_axis(p)
}

/// `E = LT + gate (*) TCN`, the gate broadcast along time.
pub fn fuse<F: Scalar>(
    lt_out: &Tensor<F>,
    gate: &Tensor<F>,
    tcn_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    lt_out.add(&tcn_out.scale_channels(gate)?)
}

/// Channel-order-preserving concatenation; inverse of [`split_channels`].
pub fn concat_subencoders<F: Scalar>(outputs: &[Tensor<F>]) -> Result<Tensor<F>> {
    if outputs.is_empty() {
        return Err(Error::Invalid("no sub-encoder outputs to concatenate".into()));
    }
    let first = outputs[0].shape();
    for o in outputs {
        if o.shape() != first {
            return Err(Error::ShapeMismatch {
                op: "concat_subencoders",
                lhs: first.to_vec(),
                rhs: o.shape().to_vec(),
            });
        }
    }
    Tensor::concat_dim1(outputs)
}

/// Rectifier twin of [`channel_attention`]: the same bottleneck with the
/// spiking windows replaced by ReLU, used by the non-spiking comparator.
pub fn channel_attention_ann<F: Scalar>(
    input: &Tensor<F>,
    weights: &SubEncoderWeights<F>,
) -> Result<Tensor<F>> {
    let pooled = global_avg_pool(input)?;
    let compress_t = weights.ca_compress.transpose2()?;
    let u = pooled
        .matmul(&compress_t)?
        .add_bias_rows(&weights.ca_compress_bias)?
        .relu();
    let expand_t = weights.ca_expand.transpose2()?;
    Ok(u.matmul(&expand_t)?
        .add_bias_rows(&weights.ca_expand_bias)?
        .relu())
}

/// Per-branch intermediates of one sub-encoder forward, for rate probing.
#[derive(Debug)]
pub struct SubEncoderTrace<F: Scalar> {
    pub ca: Option<CaTrace<F>>,
}

/// Full sub-encoder: gated fusion of the enabled branches.
pub fn sub_encoder_forward<F: Scalar>(
    input: &Tensor<F>,
    weights: &SubEncoderWeights<F>,
    cfg: &EncoderConfig,
    lif: &LifParams<F>,
    paths: &PathSelection,
) -> Result<Tensor<F>> {
    Ok(sub_encoder_forward_traced(input, weights, cfg, lif, paths)?.0)
}

pub fn sub_encoder_forward_traced<F: Scalar>(
    input: &Tensor<F>,
    weights: &SubEncoderWeights<F>,
    cfg: &EncoderConfig,
    lif: &LifParams<F>,
    paths: &PathSelection,
) -> Result<(Tensor<F>, SubEncoderTrace<F>)> {
    paths.validate()?;
    let mut trace = SubEncoderTrace { ca: None };

    let lt_out = if paths.lt {
        Some(linear_transform(input, &weights.lt)?)
    } else {
        None
    };

    let tcn_path = if paths.tcn {
        let conv = tcn_conv(input, &weights.tcn_kernels, &weights.tcn_bias, cfg.dilation)?;
        let pooled = temporal_avg_pool(&conv, cfg.pool_window())?;
        let gate = if paths.ca {
            let (gate, ca_trace) = channel_attention_traced(input, weights, lif)?;
            trace.ca = Some(ca_trace);
            gate
        } else {
            // Disabled attention degenerates to an all-pass gate.
            Tensor::full(&input.shape()[..2], F::one())
        };
        Some(pooled.scale_channels(&gate)?)
    } else {
        None
    };

    let out = match (lt_out, tcn_path) {
        (Some(lt), Some(tcn)) => lt.add(&tcn)?,
        (Some(lt), None) => lt,
        (None, Some(tcn)) => tcn,
        (None, None) => unreachable!("PathSelection::validate forbids this"),
    };
    Ok((out, trace))
}

/// Rectifier twin of [`sub_encoder_forward`]; identical wiring and weight
/// shapes, ReLU in place of every spiking window.
pub fn sub_encoder_forward_ann<F: Scalar>(
    input: &Tensor<F>,
    weights: &SubEncoderWeights<F>,
    cfg: &EncoderConfig,
    paths: &PathSelection,
) -> Result<Tensor<F>> {
    paths.validate()?;
    let lt_out = if paths.lt {
        Some(linear_transform(input, &weights.lt)?)
    } else {
        None
    };
    let tcn_path = if paths.tcn {
        let conv = tcn_conv(input, &weights.tcn_kernels, &weights.tcn_bias, cfg.dilation)?;
        let pooled = temporal_avg_pool(&conv, cfg.pool_window())?;
        let gate = if paths.ca {
            channel_attention_ann(input, weights)?
        } else {
            Tensor::full(&input.shape()[..2], F::one())
        };
        Some(pooled.scale_channels(&gate)?)
    } else {
        None
    };
    match (lt_out, tcn_path) {
        (Some(lt), Some(tcn)) => lt.add(&tcn),
        (Some(lt), None) => Ok(lt),
        (None, Some(tcn)) => Ok(tcn),
        (None, None) => unreachable!("PathSelection::validate forbids this"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            n_channels: 8,
            n_subencoders: 2,
            t_in: 10,
            t_out: 5,
            kernel_size: 3,
            dilation: 2,
            bottleneck_ratio: 4,
        }
    }

    #[test]
    fn split_produces_contiguous_blocks() {
        let cfg = EncoderConfig::default();
        let input = Tensor::<f64>::new(
            &[1, 128, 2],
            (0..256).map(|v| v as f64).collect(),
        )
        .unwrap();
        let mut cfg = cfg;
        cfg.t_in = 2;
        cfg.t_out = 1;
        let blocks = split_channels(&input, &cfg).unwrap();
        assert_eq!(blocks.len(), 16);
        assert_eq!(blocks[0].shape(), &[1, 8, 2]);
        // block 1 starts at channel 8
        assert_eq!(blocks[1].data()[0], 16.0);
    }

    #[test]
    fn split_with_one_subencoder_is_identity() {
        let mut cfg = small_cfg();
        cfg.n_subencoders = 1;
        cfg.bottleneck_ratio = 4;
        let input = Tensor::<f64>::new(&[1, 8, 10], (0..80).map(|v| v as f64).collect()).unwrap();
        let blocks = split_channels(&input, &cfg).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].data(), input.data());
    }

    #[test]
    fn split_rejects_indivisible_channel_count() {
        let cfg = EncoderConfig {
            n_channels: 10,
            n_subencoders: 4,
            ..small_cfg()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn linear_transform_identity_and_averaging() {
        let x = Tensor::<f64>::new(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = Tensor::<f64>::new(
            &[4, 4],
            (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        assert_eq!(linear_transform(&x, &eye).unwrap().data(), x.data());

        let quarter = Tensor::<f64>::new(&[4, 1], vec![0.25; 4]).unwrap();
        assert_eq!(linear_transform(&x, &quarter).unwrap().data(), &[2.5]);
    }

    #[test]
    fn linear_transform_shape_contract() {
        let x = Tensor::<f64>::zeros(&[1, 8, 50]);
        let m = Tensor::<f64>::zeros(&[50, 10]);
        assert_eq!(linear_transform(&x, &m).unwrap().shape(), &[1, 8, 10]);
    }

    #[test]
    fn global_avg_pool_means() {
        let x = Tensor::<f64>::new(&[1, 2, 4], vec![3.0, 3.0, 3.0, 3.0, 1.0, 2.0, 3.0, 4.0])
            .unwrap();
        let out = global_avg_pool(&x).unwrap();
        assert_eq!(out.data(), &[3.0, 2.5]);
        let zeros = Tensor::<f64>::zeros(&[2, 3, 5]);
        assert!(global_avg_pool(&zeros).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_is_quiet_for_zero_input_and_zero_bias() {
        let cfg = small_cfg();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut w = init_subencoder::<f64>(&cfg, &mut rng);
        w.ca_compress_bias = Tensor::zeros(&[cfg.bottleneck_width()]);
        w.ca_expand_bias = Tensor::zeros(&[cfg.channels_per_subencoder()]);
        let input = Tensor::zeros(&[2, 4, 10]);
        let gate = channel_attention(&input, &w, &LifParams::default()).unwrap();
        assert!(gate.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn attention_saturates_a_hand_wired_channel() {
        let cfg = small_cfg();
        let c = cfg.channels_per_subencoder();
        let cr = cfg.bottleneck_width();
        // Compression bias drives the hidden unit to spike every step; the
        // expansion wires channel 0 far above threshold and the rest far
        // below.
        let mut expand = vec![-100.0; c * cr];
        expand[0] = 100.0;
        let w = SubEncoderWeights {
            lt: Tensor::zeros(&[cfg.t_in, cfg.t_out]),
            ca_compress: Tensor::zeros(&[cr, c]),
            ca_compress_bias: Tensor::full(&[cr], 100.0),
            ca_expand: Tensor::new(&[c, cr], expand).unwrap(),
            ca_expand_bias: Tensor::zeros(&[c]),
            tcn_kernels: Tensor::zeros(&[c, cfg.kernel_size]),
            tcn_bias: Tensor::zeros(&[c]),
        };
        let input = Tensor::zeros(&[1, c, cfg.t_in]);
        let gate = channel_attention(&input, &w, &LifParams::default()).unwrap();
        assert_eq!(gate.data()[0], 1.0);
        assert!(gate.data()[1..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn temporal_pool_examples() {
        let x = Tensor::<f64>::new(&[1, 1, 4], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(temporal_avg_pool(&x, 2).unwrap().data(), &[2.0, 6.0]);
        assert_eq!(temporal_avg_pool(&x, 1).unwrap().data(), x.data());
        let c = Tensor::<f64>::full(&[1, 2, 6], 4.25);
        assert!(temporal_avg_pool(&c, 3)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 4.25));
    }

    #[test]
    fn fuse_gates() {
        let lt = Tensor::<f64>::new(&[1, 1, 2], vec![1.0, 1.0]).unwrap();
        let tcn = Tensor::<f64>::new(&[1, 1, 2], vec![2.0, 4.0]).unwrap();
        let zero = Tensor::<f64>::zeros(&[1, 1]);
        let one = Tensor::<f64>::full(&[1, 1], 1.0);
        let half = Tensor::<f64>::full(&[1, 1], 0.5);
        assert_eq!(fuse(&lt, &zero, &tcn).unwrap().data(), lt.data());
        assert_eq!(fuse(&lt, &one, &tcn).unwrap().data(), &[3.0, 5.0]);
        assert_eq!(fuse(&lt, &half, &tcn).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn split_concat_round_trip() {
        let cfg = small_cfg();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..2 * 8 * 10).map(|_| rng.gen::<f64>()).collect();
        let input = Tensor::new(&[2, 8, 10], data).unwrap();
        let blocks = split_channels(&input, &cfg).unwrap();
        let back = concat_subencoders(&blocks).unwrap();
        assert_eq!(back.data(), input.data());
    }

    #[test]
    fn sixteen_blocks_concatenate_to_the_full_width() {
        let blocks: Vec<Tensor<f64>> = (0..16)
            .map(|i| Tensor::full(&[1, 8, 10], i as f64))
            .collect();
        let out = concat_subencoders(&blocks).unwrap();
        assert_eq!(out.shape(), &[1, 128, 10]);
        assert_eq!(out.data()[8 * 10], 1.0); // block 1 starts at channel 8

        let single = concat_subencoders(&blocks[..1]).unwrap();
        assert_eq!(single.data(), blocks[0].data());
    }

    #[test]
    fn disabled_paths_change_the_fusion() {
        let cfg = small_cfg();
        let lif = LifParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let w = init_subencoder::<f64>(&cfg, &mut rng);
        let data: Vec<f64> = (0..4 * 10).map(|i| (i % 7) as f64 * 0.3).collect();
        let input = Tensor::new(&[1, 4, 10], data).unwrap();

        let no_tcn = PathSelection {
            tcn: false,
            ..PathSelection::default()
        };
        let out = sub_encoder_forward(&input, &w, &cfg, &lif, &no_tcn).unwrap();
        let lt_only = linear_transform(&input, &w.lt).unwrap();
        assert_eq!(out.data(), lt_only.data());

        let none = PathSelection {
            lt: false,
            tcn: false,
            ca: true,
        };
        assert!(none.validate().is_err());
    }
}
