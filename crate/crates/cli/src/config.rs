//! Effective run configuration: defaults, JSON config file, `--set`
//! overrides. Unknown keys are rejected, never ignored; the resolved
//! values are echoed into every report.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use mfsnn_core::datakit::GeneratorConfig;
use mfsnn_core::encoder::EncoderConfig;
use mfsnn_core::model::{MlpConfig, ModelConfig, ModelKind, ModelSpec};
use mfsnn_core::training::{FinetuneScope, TrainConfig};
use mfsnn_core::{Error, LifParams, Result};

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::Invalid(format!("{key} expects a non-negative integer, got {v}")))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::Invalid(format!("{key} expects a number, got {v}")))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| Error::Invalid(format!("{key} expects true or false, got {v}")))
}

/// Parse a `--set` value string into a JSON value: numbers and booleans
/// when they look like one, a string otherwise.
fn parse_value(raw: &str) -> Value {
    if let Ok(b) = raw.parse::<bool>() {
        return Value::Bool(b);
    }
    if let Ok(i) = raw.parse::<u64>() {
        return Value::from(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return Value::from(f);
    }
    Value::String(raw.to_string())
}

fn split_kv(entry: &str) -> Result<(&str, &str)> {
    entry
        .split_once('=')
        .ok_or_else(|| Error::Invalid(format!("override '{entry}' is not of the form KEY=VALUE")))
}

pub trait Overridable {
    fn set(&mut self, key: &str, value: &Value) -> Result<()>;

    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read(path)?;
        let parsed: Value = serde_json::from_slice(&text)?;
        let obj = parsed
            .as_object()
            .ok_or_else(|| Error::Invalid("config file must hold a JSON object".into()))?;
        for (key, value) in obj {
            self.set(key, value)?;
        }
        Ok(())
    }

    fn apply_sets(&mut self, sets: &[String]) -> Result<()> {
        for entry in sets {
            let (key, raw) = split_kv(entry)?;
            self.set(key, &parse_value(raw))?;
        }
        Ok(())
    }

    /// File values first, command-line overrides win.
    fn apply(&mut self, config: Option<&Path>, sets: &[String]) -> Result<()> {
        if let Some(path) = config {
            self.apply_file(path)?;
        }
        self.apply_sets(sets)
    }
}

/// Generator settings behind `generate`.
#[derive(Debug, Clone, Serialize)]
pub struct GenParams(pub GeneratorConfig);

impl Overridable for GenParams {
    fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let g = &mut self.0;
        match key {
            "n_classes" => g.n_classes = as_usize(key, v)?,
            "n_channels" => g.n_channels = as_usize(key, v)?,
            "t_bins" => g.t_bins = as_usize(key, v)?,
            "trials_per_class" => g.trials_per_class = as_usize(key, v)?,
            "n_days" => g.n_days = as_usize(key, v)?,
            "bin_width_ms" => g.bin_width_ms = as_f64(key, v)?,
            "background_rate" => g.background_rate = as_f64(key, v)?,
            "elevated_rate" => g.elevated_rate = as_f64(key, v)?,
            "elevated_fraction" => g.elevated_fraction = as_f64(key, v)?,
            "gain_drift_sigma" => g.gain_drift_sigma = as_f64(key, v)?,
            "rate_shift_sigma" => g.rate_shift_sigma = as_f64(key, v)?,
            "channel_swap_fraction" => g.channel_swap_fraction = as_f64(key, v)?,
            other => return Err(Error::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}

/// Model and training settings behind the training-family commands.
#[derive(Debug, Clone, Serialize)]
pub struct RunParams {
    pub n_subencoders: usize,
    pub t_out: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub bottleneck_ratio: usize,
    pub tau_m: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
    pub surrogate_alpha: f64,
    pub t_window: usize,
    pub share_lt: bool,
    pub mlp_hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub finetune_scope: FinetuneScope,
}

impl Default for RunParams {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let lif = LifParams::default();
        let train = TrainConfig::default();
        RunParams {
            n_subencoders: enc.n_subencoders,
            t_out: enc.t_out,
            kernel_size: enc.kernel_size,
            dilation: enc.dilation,
            bottleneck_ratio: enc.bottleneck_ratio,
            tau_m: lif.tau_m,
            v_threshold: lif.v_threshold,
            v_reset: lif.v_reset,
            surrogate_alpha: lif.surrogate_alpha,
            t_window: lif.t_window,
            share_lt: false,
            mlp_hidden: vec![256, 256],
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr_max: train.lr_max,
            lr_min: train.lr_min,
            finetune_scope: train.finetune_scope,
        }
    }
}

impl Overridable for RunParams {
    fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "n_subencoders" => self.n_subencoders = as_usize(key, v)?,
            "t_out" => self.t_out = as_usize(key, v)?,
            "kernel_size" => self.kernel_size = as_usize(key, v)?,
            "dilation" => self.dilation = as_usize(key, v)?,
            "bottleneck_ratio" => self.bottleneck_ratio = as_usize(key, v)?,
            "tau_m" => self.tau_m = as_f64(key, v)?,
            "v_threshold" => self.v_threshold = as_f64(key, v)?,
            "v_reset" => self.v_reset = as_f64(key, v)?,
            "surrogate_alpha" => self.surrogate_alpha = as_f64(key, v)?,
            "t_window" => self.t_window = as_usize(key, v)?,
            "share_lt" => self.share_lt = as_bool(key, v)?,
            "mlp_hidden" => {
                self.mlp_hidden = match v {
                    Value::Array(items) => items
                        .iter()
                        .map(|x| as_usize(key, x))
                        .collect::<Result<_>>()?,
                    Value::String(s) => s
                        .split(',')
                        .map(|part| {
                            part.trim().parse::<usize>().map_err(|_| {
                                Error::Invalid(format!("bad hidden width '{part}' in {key}"))
                            })
                        })
                        .collect::<std::result::Result<_, _>>()?,
                    Value::Number(_) => vec![as_usize(key, v)?],
                    _ => return Err(Error::Invalid(format!("{key} expects widths, got {v}"))),
                }
            }
            "epochs" => self.epochs = as_usize(key, v)?,
            "batch_size" => self.batch_size = as_usize(key, v)?,
            "lr_max" => self.lr_max = as_f64(key, v)?,
            "lr_min" => self.lr_min = as_f64(key, v)?,
            "finetune_scope" => {
                self.finetune_scope = match v.as_str() {
                    Some("classifier_only") => FinetuneScope::ClassifierOnly,
                    Some("full") => FinetuneScope::Full,
                    _ => {
                        return Err(Error::Invalid(format!(
                            "{key} expects classifier_only or full, got {v}"
                        )))
                    }
                }
            }
            other => return Err(Error::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}

impl RunParams {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            seed,
            finetune_scope: self.finetune_scope,
        }
    }

    pub fn model_config(&self, n_channels: usize, t_in: usize, n_classes: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                n_channels,
                n_subencoders: self.n_subencoders,
                t_in,
                t_out: self.t_out,
                kernel_size: self.kernel_size,
                dilation: self.dilation,
                bottleneck_ratio: self.bottleneck_ratio,
            },
            lif: LifParams {
                tau_m: self.tau_m,
                v_threshold: self.v_threshold,
                v_reset: self.v_reset,
                surrogate_alpha: self.surrogate_alpha,
                t_window: self.t_window,
            },
            n_classes,
            share_lt: self.share_lt,
            ablation: Default::default(),
        }
    }

    pub fn spec(
        &self,
        kind: ModelKind,
        n_channels: usize,
        t_in: usize,
        n_classes: usize,
    ) -> ModelSpec {
        match kind {
            ModelKind::Mfsnn => ModelSpec::Mfsnn(self.model_config(n_channels, t_in, n_classes)),
            ModelKind::Mfann => ModelSpec::Mfann(self.model_config(n_channels, t_in, n_classes)),
            ModelKind::Mlp => ModelSpec::Mlp(MlpConfig {
                n_channels,
                t_in,
                hidden: self.mlp_hidden.clone(),
                n_classes,
            }),
        }
    }
}

/// Parse a comma-separated list of numbers from a flag value.
pub fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse::<T>()
                .map_err(|_| Error::Invalid(format!("bad {what} entry '{part}'")))
        })
        .collect()
}
