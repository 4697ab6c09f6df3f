//! Command implementations. Every command resolves its configuration,
//! runs, writes machine-readable outputs atomically into `--out`, prints a
//! one-line summary, and appends timing to the `run.log` sidecar (the only
//! place timestamps live, so reruns stay byte-identical).

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;

use mfsnn_core::checkpoint;
use mfsnn_core::datakit::{load_dir, save_dir, split_single_day, GeneratorConfig, TrialSet};
use mfsnn_core::energy::{energy_report, measure_rates, uniform_rates};
use mfsnn_core::model::{Model, ModelKind};
use mfsnn_core::training::{
    ablation_suite, adapt_and_eval_day, evaluate, ratio_sweep, train, DayResult,
    DEFAULT_RATIO_GRID,
};
use mfsnn_core::{Error, Result};

use crate::config::{parse_list, GenParams, Overridable, RunParams};

struct OutputDir {
    dir: PathBuf,
    started: Instant,
}

impl OutputDir {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            started: Instant::now(),
        })
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        checkpoint::write_atomic(&self.dir.join(name), &bytes)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        checkpoint::write_atomic(&self.dir.join(name), text.as_bytes())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Timing sidecar; deliberately outside the deterministic outputs.
    fn log(&self, command: &str) -> Result<()> {
        use std::io::Write;
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or(Duration::ZERO);
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join("run.log"))?;
        writeln!(
            file,
            "ts={} command={command} wall_ms={}",
            now.as_secs(),
            self.started.elapsed().as_millis()
        )?;
        Ok(())
    }
}

fn load_dataset(path: &Path) -> Result<TrialSet> {
    let set = load_dir(path)?;
    set.validate()?;
    Ok(set)
}

pub fn generate(
    preset: &str,
    seed: u64,
    out: &Path,
    config: Option<&Path>,
    sets: &[String],
) -> Result<()> {
    let mut params = GenParams(GeneratorConfig::preset(preset)?);
    params.apply(config, sets)?;
    let set = params.0.generate(seed)?;
    let output = OutputDir::new(out)?;
    save_dir(out, &set)?;
    output.write_json(
        "generator.json",
        &json!({
            "command": "generate",
            "preset": preset,
            "seed": seed,
            "config": params,
        }),
    )?;
    output.log("generate")?;
    println!(
        "generated {} trials ({} channels x {} bins, {} days, {} classes) -> {}",
        set.n_trials(),
        set.n_channels,
        set.t_bins,
        set.days().len(),
        set.n_classes(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    dataset: &Path,
    model_kind: &str,
    day: u16,
    holdout: f64,
    seed: u64,
    out: &Path,
    config: Option<&Path>,
    sets: &[String],
) -> Result<()> {
    let mut params = RunParams::default();
    params.apply(config, sets)?;
    let data = load_dataset(dataset)?;
    let kind = ModelKind::parse(model_kind)?;
    let spec = params.spec(kind, data.n_channels, data.t_bins, data.n_classes());
    let cfg = params.train_config(seed);

    let (train_set, test_set) = if holdout > 0.0 {
        let (tr, te) = split_single_day(&data, day, holdout, seed)?;
        (tr, Some(te))
    } else {
        (data.day_subset(day)?, None)
    };

    let output = OutputDir::new(out)?;
    let mut model = spec.build(seed)?;
    let mut report = train(&mut model, &train_set, &cfg)?;
    report.config = json!({
        "command": "train",
        "dataset": dataset.display().to_string(),
        "model": kind.as_str(),
        "day": day,
        "holdout": holdout,
        "seed": seed,
        "params": params,
    });

    let mut summary = format!(
        "trained {} on day {day} ({} trials), final train acc {:.3}",
        kind.as_str(),
        train_set.n_trials(),
        report.epoch_accuracy.last().copied().unwrap_or(0.0)
    );
    if let Some(test) = &test_set {
        let result = evaluate(&model, test)?;
        report.final_test_accuracy = Some(result.accuracy);
        report.confusion = Some(result.confusion);
        report.per_day = vec![DayResult {
            day,
            ratio: 0.0,
            accuracy: result.accuracy,
            n_eval: test.n_trials(),
        }];
        summary.push_str(&format!(", held-out acc {:.3}", result.accuracy));
    }

    checkpoint::save(&output.path("model.ckpt"), &model)?;
    output.write_json("report.json", &report)?;
    output.log("train")?;
    println!("{summary} -> {}", out.display());
    Ok(())
}

pub fn cmd_eval(
    dataset: &Path,
    ckpt: &Path,
    day: u16,
    holdout: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let data = load_dataset(dataset)?;
    let model = checkpoint::load(ckpt)?;
    let eval_set = if holdout > 0.0 {
        split_single_day(&data, day, holdout, seed)?.1
    } else {
        data.day_subset(day)?
    };
    let output = OutputDir::new(out)?;
    let result = evaluate(&model, &eval_set)?;
    output.write_json(
        "report.json",
        &json!({
            "command": "eval",
            "dataset": dataset.display().to_string(),
            "checkpoint": ckpt.display().to_string(),
            "model": model.kind().as_str(),
            "day": day,
            "holdout": holdout,
            "seed": seed,
            "n_eval": eval_set.n_trials(),
            "accuracy": result.accuracy,
            "confusion": result.confusion,
        }),
    )?;
    output.log("eval")?;
    println!(
        "evaluated {} on day {day}: accuracy {:.3} over {} trials -> {}",
        model.kind().as_str(),
        result.accuracy,
        eval_set.n_trials(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_finetune(
    dataset: &Path,
    ckpt: &Path,
    day: u16,
    ratio: f64,
    scope: Option<&str>,
    seed: u64,
    out: &Path,
    config: Option<&Path>,
    sets: &[String],
) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Invalid(format!(
            "fine-tuning ratio must lie in (0, 1), got {ratio}; use eval for zero-shot scoring"
        )));
    }
    let mut params = RunParams::default();
    params.apply(config, sets)?;
    if let Some(scope) = scope {
        params.set("finetune_scope", &serde_json::Value::String(scope.into()))?;
    }
    let data = load_dataset(dataset)?;
    let pretrained = checkpoint::load(ckpt)?;
    let cfg = params.train_config(seed);

    let output = OutputDir::new(out)?;
    let (tuned, mut report) = adapt_and_eval_day(&pretrained, &data, day, ratio, &cfg)?;
    report.config = json!({
        "command": "finetune",
        "dataset": dataset.display().to_string(),
        "checkpoint": ckpt.display().to_string(),
        "day": day,
        "ratio": ratio,
        "seed": seed,
        "params": params,
    });
    checkpoint::save(&output.path("model.ckpt"), &tuned)?;
    output.write_json("report.json", &report)?;
    output.log("finetune")?;
    println!(
        "fine-tuned on {:.1}% of day {day}: accuracy {:.3} on the remaining {} trials -> {}",
        ratio * 100.0,
        report.final_test_accuracy.unwrap_or(0.0),
        report.per_day[0].n_eval,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep_ratio(
    dataset: &Path,
    train_day: u16,
    test_day: u16,
    ratios: Option<&str>,
    seeds: Option<&str>,
    model_kind: &str,
    seed: u64,
    out: &Path,
    config: Option<&Path>,
    sets: &[String],
) -> Result<()> {
    let mut params = RunParams::default();
    params.apply(config, sets)?;
    let ratios: Vec<f64> = match ratios {
        Some(raw) => parse_list(raw, "ratio")?,
        None => DEFAULT_RATIO_GRID.to_vec(),
    };
    let seeds: Vec<u64> = match seeds {
        Some(raw) => parse_list(raw, "seed")?,
        None => vec![seed],
    };
    let data = load_dataset(dataset)?;
    let kind = ModelKind::parse(model_kind)?;
    let spec = params.spec(kind, data.n_channels, data.t_bins, data.n_classes());
    let cfg = params.train_config(seed);

    let output = OutputDir::new(out)?;
    let table = ratio_sweep(&data, train_day, test_day, &ratios, &spec, &cfg, &seeds)?;
    output.write_text("sweep.csv", &table.to_csv())?;
    output.write_json(
        "report.json",
        &json!({
            "command": "sweep-ratio",
            "dataset": dataset.display().to_string(),
            "model": kind.as_str(),
            "train_day": train_day,
            "test_day": test_day,
            "ratios": ratios,
            "seeds": seeds,
            "params": params,
            "rows": table.rows,
            "mean_by_ratio": table.mean_by_ratio(),
        }),
    )?;
    output.log("sweep-ratio")?;
    let means = table.mean_by_ratio();
    let first = means.first().unwrap();
    let last = means.last().unwrap();
    println!(
        "sweep day {train_day} -> day {test_day}: mean acc {:.3} at ratio {} up to {:.3} at ratio {} ({} rows) -> {}",
        first.1,
        first.0,
        last.1,
        last.0,
        table.rows.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_ablate(
    dataset: &Path,
    train_day: u16,
    test_day: u16,
    ratio: f64,
    seeds: Option<&str>,
    seed: u64,
    out: &Path,
    config: Option<&Path>,
    sets: &[String],
) -> Result<()> {
    let mut params = RunParams::default();
    params.apply(config, sets)?;
    let seeds: Vec<u64> = match seeds {
        Some(raw) => parse_list(raw, "seed")?,
        None => vec![seed],
    };
    let data = load_dataset(dataset)?;
    let base = params.model_config(data.n_channels, data.t_bins, data.n_classes());
    let cfg = params.train_config(seed);

    let output = OutputDir::new(out)?;
    let suite = ablation_suite(&data, train_day, test_day, ratio, &base, &cfg, &seeds)?;
    output.write_text("ablation.csv", &suite.to_csv())?;
    output.write_json(
        "report.json",
        &json!({
            "command": "ablate",
            "dataset": dataset.display().to_string(),
            "train_day": train_day,
            "test_day": test_day,
            "ratio": ratio,
            "seeds": seeds,
            "params": params,
            "variants": suite.variants,
        }),
    )?;
    output.log("ablate")?;
    let line = suite
        .variants
        .iter()
        .map(|v| format!("{} {:.3}+-{:.3}", v.variant, v.mean_accuracy, v.std_dev))
        .collect::<Vec<_>>()
        .join(", ");
    println!("ablation day {train_day} -> day {test_day}: {line} -> {}", out.display());
    Ok(())
}

pub fn cmd_energy(
    ckpt: &Path,
    dataset: Option<&Path>,
    include_classifier: bool,
    uniform_rate: Option<f64>,
    out: &Path,
) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    let Model::Mfsnn(snn) = &model else {
        return Err(Error::Invalid(format!(
            "energy accounting needs a spiking checkpoint, got {}",
            model.kind().as_str()
        )));
    };
    let config = &snn.core.config;
    let rates = match uniform_rate {
        Some(rate) => uniform_rates(config, rate)?,
        None => {
            let dataset = dataset.ok_or_else(|| {
                Error::Invalid("energy needs --dataset unless --uniform-rate is given".into())
            })?;
            measure_rates(snn, &load_dataset(dataset)?)?
        }
    };
    let report = energy_report(config, &rates, include_classifier)?;

    let output = OutputDir::new(out)?;
    output.write_text("layers.csv", &report.to_csv())?;
    output.write_json(
        "energy.json",
        &json!({
            "command": "energy",
            "checkpoint": ckpt.display().to_string(),
            "dataset": dataset.map(|d| d.display().to_string()),
            "uniform_rate": uniform_rate,
            "report": report,
        }),
    )?;
    output.log("energy")?;
    println!(
        "energy per trial: spiking {:.1} pJ vs dense {:.1} pJ, reduction {:.1}% -> {}",
        report.e_snn_pj,
        report.e_ann_pj,
        report.reduction_fraction * 100.0,
        out.display()
    );
    Ok(())
}
