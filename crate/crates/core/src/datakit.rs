//! Synthetic spike-count datasets with cross-day drift.
//!
//! A trial is a `[channels, time]` grid of non-negative spike counts in
//! fixed-width bins (20 ms by default). Classes differ by which random
//! subset of channels fires at an elevated rate. Later recording days
//! drift away from day 0 through compounding per-channel gain noise,
//! additive rate shifts, and partial channel permutations; day 0 is always
//! the identity.
//!
//! Everything here is a pure function of its inputs and a seed.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::Tensor as TensorG;
use crate::Tensor;

// Independent RNG streams derived from one user seed.
const STREAM_STRUCTURE: u64 = 0;
const STREAM_DRIFT_BASE: u64 = 1 << 32;
const STREAM_TRIALS_BASE: u64 = 2 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Labeled trials with per-trial day tags; the unit every experiment
/// protocol consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub n_channels: usize,
    pub t_bins: usize,
    /// `[trial][channel][time]`, row-major.
    pub counts: Vec<u16>,
    pub labels: Vec<u16>,
    pub day_tags: Vec<u16>,
    pub class_names: Vec<String>,
    pub bin_width_ms: f64,
}

impl TrialSet {
    pub fn n_trials(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let per_trial = self.n_channels * self.t_bins;
        if per_trial == 0 {
            return Err(Error::Config("trial dimensions must be positive".into()));
        }
        if self.counts.len() != self.labels.len() * per_trial
            || self.day_tags.len() != self.labels.len()
        {
            return Err(Error::Format(format!(
                "inconsistent trial arrays: {} counts, {} labels, {} day tags",
                self.counts.len(),
                self.labels.len(),
                self.day_tags.len()
            )));
        }
        let n_classes = self.n_classes() as u16;
        if self.labels.iter().any(|&l| l >= n_classes) {
            return Err(Error::Format(format!(
                "label out of range (n_classes = {n_classes})"
            )));
        }
        Ok(())
    }

    /// Distinct day tags, ascending.
    pub fn days(&self) -> Vec<u16> {
        let mut days: Vec<u16> = self.day_tags.clone();
        days.sort_unstable();
        days.dedup();
        days
    }

    pub fn day_indices(&self, day: u16) -> Vec<usize> {
        (0..self.n_trials())
            .filter(|&i| self.day_tags[i] == day)
            .collect()
    }

    /// New set holding the given trials, in the given order.
    pub fn subset(&self, indices: &[usize]) -> TrialSet {
        let per_trial = self.n_channels * self.t_bins;
        let mut counts = Vec::with_capacity(indices.len() * per_trial);
        for &i in indices {
            counts.extend_from_slice(&self.counts[i * per_trial..(i + 1) * per_trial]);
        }
        TrialSet {
            n_channels: self.n_channels,
            t_bins: self.t_bins,
            counts,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            day_tags: indices.iter().map(|&i| self.day_tags[i]).collect(),
            class_names: self.class_names.clone(),
            bin_width_ms: self.bin_width_ms,
        }
    }

    /// Trials of one day, in recording order.
    pub fn day_subset(&self, day: u16) -> Result<TrialSet> {
        let idx = self.day_indices(day);
        if idx.is_empty() {
            return Err(Error::Invalid(format!("no trials tagged with day {day}")));
        }
        Ok(self.subset(&idx))
    }

    /// Counts widened to a real-valued `[B, C, T]` batch tensor.
    pub fn batch_tensor(&self, indices: &[usize]) -> Tensor {
        let per_trial = self.n_channels * self.t_bins;
        let mut data = Vec::with_capacity(indices.len() * per_trial);
        for &i in indices {
            data.extend(
                self.counts[i * per_trial..(i + 1) * per_trial]
                    .iter()
                    .map(|&c| c as f64),
            );
        }
        TensorG::new(&[indices.len(), self.n_channels, self.t_bins], data)
            .expect("consistent by construction")
    }

    pub fn labels_usize(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i] as usize).collect()
    }

    fn class_indices(&self, indices: &[usize]) -> Vec<Vec<usize>> {
        let mut per_class = vec![Vec::new(); self.n_classes()];
        for &i in indices {
            per_class[self.labels[i] as usize].push(i);
        }
        per_class
    }
}

/// Mean spike count per bin for every (class, channel) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub n_classes: usize,
    pub n_channels: usize,
    /// `[class][channel]`.
    pub rates: Vec<f64>,
}

impl RateTable {
    pub fn new(n_classes: usize, n_channels: usize, rates: Vec<f64>) -> Result<Self> {
        if n_classes == 0 || n_channels == 0 {
            return Err(Error::Config("rate table dimensions must be positive".into()));
        }
        if rates.len() != n_classes * n_channels {
            return Err(Error::Invalid(format!(
                "rate table needs {} entries, got {}",
                n_classes * n_channels,
                rates.len()
            )));
        }
        if rates.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::Invalid("rates must be finite and non-negative".into()));
        }
        Ok(RateTable {
            n_classes,
            n_channels,
            rates,
        })
    }

    pub fn rate(&self, class: usize, channel: usize) -> f64 {
        self.rates[class * self.n_channels + channel]
    }
}

/// Day-to-day distribution shift: multiplicative gain noise, additive rate
/// shift, and partial channel permutation, compounding per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    pub gain_drift_sigma: f64,
    pub rate_shift_sigma: f64,
    pub channel_swap_fraction: f64,
    pub rng_seed: u64,
}

impl DriftModel {
    pub fn validate(&self) -> Result<()> {
        if self.gain_drift_sigma < 0.0 || self.rate_shift_sigma < 0.0 {
            return Err(Error::Config("drift sigmas must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.channel_swap_fraction) {
            return Err(Error::Config(
                "channel_swap_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Rates as seen on the given day: day 0 is the identity, each later day
/// compounds one more round of gain, shift, and swap noise.
pub fn apply_drift(base: &RateTable, drift: &DriftModel, day_index: usize) -> Result<RateTable> {
    drift.validate()?;
    let mut table = base.clone();
    for day in 1..=day_index {
        let mut rng = stream_rng(drift.rng_seed, STREAM_DRIFT_BASE + day as u64);
        let nc = table.n_channels;

        if drift.gain_drift_sigma > 0.0 {
            let dist = LogNormal::new(0.0, drift.gain_drift_sigma)
                .map_err(|e| Error::Invalid(e.to_string()))?;
            for ch in 0..nc {
                let gain = dist.sample(&mut rng);
                for class in 0..table.n_classes {
                    table.rates[class * nc + ch] *= gain;
                }
            }
        }
        if drift.rate_shift_sigma > 0.0 {
            let dist = Normal::new(0.0, drift.rate_shift_sigma)
                .map_err(|e| Error::Invalid(e.to_string()))?;
            for ch in 0..nc {
                let shift = dist.sample(&mut rng);
                for class in 0..table.n_classes {
                    let r = &mut table.rates[class * nc + ch];
                    *r = (*r + shift).max(0.0);
                }
            }
        }
        let n_swap = (drift.channel_swap_fraction * nc as f64).ceil() as usize;
        if n_swap > 1 {
            let mut channels: Vec<usize> = (0..nc).collect();
            let (chosen, _) = channels.partial_shuffle(&mut rng, n_swap);
            let mut permuted = chosen.to_vec();
            permuted.shuffle(&mut rng);
            let old = table.rates.clone();
            for (dst, src) in chosen.iter().zip(&permuted) {
                for class in 0..table.n_classes {
                    table.rates[class * nc + dst] = old[class * nc + src];
                }
            }
        }
    }
    Ok(table)
}

/// Class structure for the synthetic presets: every class elevates its own
/// random subset of channels above the background rate.
pub fn class_structured_rates(
    n_classes: usize,
    n_channels: usize,
    background: f64,
    elevated: f64,
    elevated_fraction: f64,
    seed: u64,
) -> Result<RateTable> {
    if !(0.0..=1.0).contains(&elevated_fraction) {
        return Err(Error::Config("elevated_fraction must lie in [0, 1]".into()));
    }
    let mut rng = stream_rng(seed, STREAM_STRUCTURE);
    let n_elevated = (elevated_fraction * n_channels as f64).round() as usize;
    let mut rates = vec![background; n_classes * n_channels];
    for class in 0..n_classes {
        let mut channels: Vec<usize> = (0..n_channels).collect();
        let (chosen, _) = channels.partial_shuffle(&mut rng, n_elevated);
        for &ch in chosen.iter() {
            rates[class * n_channels + ch] = elevated;
        }
    }
    RateTable::new(n_classes, n_channels, rates)
}

fn sample_trials_into(
    set: &mut TrialSet,
    table: &RateTable,
    trials_per_class: usize,
    day: u16,
    rng: &mut ChaCha8Rng,
) {
    let t = set.t_bins;
    for class in 0..table.n_classes {
        for _ in 0..trials_per_class {
            for ch in 0..table.n_channels {
                let rate = table.rate(class, ch);
                if rate > 0.0 {
                    let dist = Poisson::new(rate).expect("positive rate");
                    for _ in 0..t {
                        let c = dist.sample(rng);
                        set.counts.push(c.min(u16::MAX as f64) as u16);
                    }
                } else {
                    set.counts.extend(std::iter::repeat_n(0, t));
                }
            }
            set.labels.push(class as u16);
            set.day_tags.push(day);
        }
    }
}

/// Single-day Poisson sampling from a rate table. Bit-for-bit reproducible
/// for a given seed.
pub fn generate_synthetic(
    table: &RateTable,
    t_bins: usize,
    trials_per_class: usize,
    class_names: Vec<String>,
    bin_width_ms: f64,
    seed: u64,
) -> Result<TrialSet> {
    if t_bins == 0 || trials_per_class == 0 {
        return Err(Error::Config("t_bins and trials_per_class must be positive".into()));
    }
    if class_names.len() != table.n_classes {
        return Err(Error::Invalid(format!(
            "{} class names for {} classes",
            class_names.len(),
            table.n_classes
        )));
    }
    let mut set = TrialSet {
        n_channels: table.n_channels,
        t_bins,
        counts: Vec::with_capacity(table.n_classes * trials_per_class * table.n_channels * t_bins),
        labels: Vec::new(),
        day_tags: Vec::new(),
        class_names,
        bin_width_ms,
    };
    let mut rng = stream_rng(seed, STREAM_TRIALS_BASE);
    sample_trials_into(&mut set, table, trials_per_class, 0, &mut rng);
    Ok(set)
}

/// Multi-day sampling: day `d` draws from the drifted table for day `d`,
/// with its own RNG stream.
pub fn generate_days(
    base: &RateTable,
    drift: &DriftModel,
    t_bins: usize,
    trials_per_class_per_day: usize,
    n_days: usize,
    class_names: Vec<String>,
    bin_width_ms: f64,
    seed: u64,
) -> Result<TrialSet> {
    if n_days == 0 || t_bins == 0 || trials_per_class_per_day == 0 {
        return Err(Error::Config("days, bins, and trials must be positive".into()));
    }
    if class_names.len() != base.n_classes {
        return Err(Error::Invalid(format!(
            "{} class names for {} classes",
            class_names.len(),
            base.n_classes
        )));
    }
    let mut set = TrialSet {
        n_channels: base.n_channels,
        t_bins,
        counts: Vec::new(),
        labels: Vec::new(),
        day_tags: Vec::new(),
        class_names,
        bin_width_ms,
    };
    for day in 0..n_days {
        let table = apply_drift(base, drift, day)?;
        let mut rng = stream_rng(seed, STREAM_TRIALS_BASE + day as u64);
        sample_trials_into(&mut set, &table, trials_per_class_per_day, day as u16, &mut rng);
    }
    Ok(set)
}

fn stratified_take(
    per_class: &[Vec<usize>],
    take_per_class: &[usize],
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = Vec::new();
    let mut rest = Vec::new();
    for (indices, &take) in per_class.iter().zip(take_per_class) {
        let mut shuffled = indices.clone();
        shuffled.shuffle(&mut rng);
        taken.extend_from_slice(&shuffled[..take]);
        rest.extend_from_slice(&shuffled[take..]);
    }
    taken.sort_unstable();
    rest.sort_unstable();
    (taken, rest)
}

/// Stratified shuffle split of one day's trials into train and test parts;
/// `holdout` is the test fraction (0.2 for the 8:2 protocol). Per-class
/// proportions are preserved to within one trial.
pub fn split_single_day(
    set: &TrialSet,
    day: u16,
    holdout: f64,
    seed: u64,
) -> Result<(TrialSet, TrialSet)> {
    if !(0.0..1.0).contains(&holdout) {
        return Err(Error::Invalid(format!(
            "holdout fraction must lie in [0, 1), got {holdout}"
        )));
    }
    let day_idx = set.day_indices(day);
    if day_idx.is_empty() {
        return Err(Error::Invalid(format!("no trials tagged with day {day}")));
    }
    let per_class = set.class_indices(&day_idx);
    let take: Vec<usize> = per_class
        .iter()
        .map(|c| (holdout * c.len() as f64).round() as usize)
        .collect();
    let (test_idx, train_idx) = stratified_take(&per_class, &take, seed);
    Ok((set.subset(&train_idx), set.subset(&test_idx)))
}

/// Stratified selection of `ceil(ratio * N)` trials for fine-tuning; the
/// remainder is the evaluation set. Class quotas follow the largest
/// remainder rule, so no class deviates from exact proportionality by more
/// than one trial.
pub fn finetune_subset(set: &TrialSet, ratio: f64, seed: u64) -> Result<(TrialSet, TrialSet)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Invalid(format!(
            "fine-tuning ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let all: Vec<usize> = (0..set.n_trials()).collect();
    let per_class = set.class_indices(&all);
    let total = (ratio * set.n_trials() as f64).ceil() as usize;

    let quotas: Vec<f64> = per_class.iter().map(|c| ratio * c.len() as f64).collect();
    let mut take: Vec<usize> = quotas.iter().map(|&q| q.floor() as usize).collect();
    let assigned: usize = take.iter().sum();
    let mut order: Vec<usize> = (0..per_class.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &class in order.iter().take(total.saturating_sub(assigned)) {
        take[class] += 1;
    }
    for (t, c) in take.iter_mut().zip(&per_class) {
        *t = (*t).min(c.len());
    }

    let (ft_idx, eval_idx) = stratified_take(&per_class, &take, seed);
    Ok((set.subset(&ft_idx), set.subset(&eval_idx)))
}

// ---------------------------------------------------------------------------
// Directory format
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    n_trials: usize,
    n_channels: usize,
    t_bins: usize,
    n_classes: usize,
    class_names: Vec<String>,
    bin_width_ms: f64,
    day_tags: Vec<u16>,
    endianness: String,
}

fn u16s_to_bytes(values: &[u16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 2);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bytes_to_u16s(bytes: &[u8], what: &str) -> Result<Vec<u16>> {
    if bytes.len() % 2 != 0 {
        return Err(Error::Format(format!("{what} has odd byte length")));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}

/// Write a dataset directory: `manifest.json` plus little-endian u16
/// `trials.bin`, `labels.bin`, and `days.bin`.
pub fn save_dir(dir: &Path, set: &TrialSet) -> Result<()> {
    set.validate()?;
    fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        format_version: 1,
        n_trials: set.n_trials(),
        n_channels: set.n_channels,
        t_bins: set.t_bins,
        n_classes: set.n_classes(),
        class_names: set.class_names.clone(),
        bin_width_ms: set.bin_width_ms,
        day_tags: set.days(),
        endianness: "little".to_string(),
    };
    write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    write_atomic(&dir.join("trials.bin"), &u16s_to_bytes(&set.counts))?;
    write_atomic(&dir.join("labels.bin"), &u16s_to_bytes(&set.labels))?;
    write_atomic(&dir.join("days.bin"), &u16s_to_bytes(&set.day_tags))?;
    Ok(())
}

/// Load a dataset directory, rejecting manifests whose declared sizes
/// disagree with the file lengths.
pub fn load_dir(dir: &Path) -> Result<TrialSet> {
    let manifest: DatasetManifest =
        serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.endianness != "little" {
        return Err(Error::Format(format!(
            "unsupported endianness '{}'",
            manifest.endianness
        )));
    }
    if manifest.class_names.len() != manifest.n_classes {
        return Err(Error::Format("class name count disagrees with n_classes".into()));
    }

    let trials_bytes = fs::read(dir.join("trials.bin"))?;
    let labels_bytes = fs::read(dir.join("labels.bin"))?;
    let days_bytes = fs::read(dir.join("days.bin"))?;
    let expect_trials = manifest.n_trials * manifest.n_channels * manifest.t_bins * 2;
    if trials_bytes.len() != expect_trials {
        return Err(Error::Format(format!(
            "trials.bin is {} bytes, manifest implies {expect_trials}",
            trials_bytes.len()
        )));
    }
    if labels_bytes.len() != manifest.n_trials * 2 || days_bytes.len() != manifest.n_trials * 2 {
        return Err(Error::Format(
            "labels.bin/days.bin lengths disagree with manifest".into(),
        ));
    }

    let set = TrialSet {
        n_channels: manifest.n_channels,
        t_bins: manifest.t_bins,
        counts: bytes_to_u16s(&trials_bytes, "trials.bin")?,
        labels: bytes_to_u16s(&labels_bytes, "labels.bin")?,
        day_tags: bytes_to_u16s(&days_bytes, "days.bin")?,
        class_names: manifest.class_names,
        bin_width_ms: manifest.bin_width_ms,
    };
    set.validate()?;
    if set.days() != manifest.day_tags {
        return Err(Error::Format(
            "day tags observed in days.bin disagree with manifest".into(),
        ));
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Everything the synthetic generator needs; the presets fill in scales
/// mirroring the two experimental paradigms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_classes: usize,
    pub n_channels: usize,
    pub t_bins: usize,
    pub trials_per_class: usize,
    pub n_days: usize,
    pub bin_width_ms: f64,
    pub background_rate: f64,
    pub elevated_rate: f64,
    pub elevated_fraction: f64,
    pub gain_drift_sigma: f64,
    pub rate_shift_sigma: f64,
    pub channel_swap_fraction: f64,
}

impl GeneratorConfig {
    /// 4-way hand-task paradigm: 128 channels, 300 trials per day, 8 days.
    /// Drift strengths are tuned so that a day-0 decoder degrades clearly
    /// by mid-record yet recovers with a small fine-tuning fraction.
    pub fn grasp_touch() -> Self {
        GeneratorConfig {
            n_classes: 4,
            n_channels: 128,
            t_bins: 50,
            trials_per_class: 75,
            n_days: 8,
            bin_width_ms: 20.0,
            background_rate: 1.0,
            elevated_rate: 6.0,
            elevated_fraction: 0.25,
            gain_drift_sigma: 0.35,
            rate_shift_sigma: 0.3,
            channel_swap_fraction: 0.25,
        }
    }

    /// 8-direction reach paradigm: paired 96-channel arrays, 2000 trials
    /// per day, 4 days.
    pub fn center_out() -> Self {
        GeneratorConfig {
            n_classes: 8,
            n_channels: 192,
            t_bins: 50,
            trials_per_class: 250,
            n_days: 4,
            bin_width_ms: 20.0,
            background_rate: 1.0,
            elevated_rate: 6.0,
            elevated_fraction: 0.25,
            gain_drift_sigma: 0.35,
            rate_shift_sigma: 0.3,
            channel_swap_fraction: 0.25,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "grasp-touch" => Ok(Self::grasp_touch()),
            "center-out" => Ok(Self::center_out()),
            other => Err(Error::Invalid(format!(
                "unknown preset '{other}', expected grasp-touch or center-out"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0
            || self.n_channels == 0
            || self.t_bins == 0
            || self.trials_per_class == 0
            || self.n_days == 0
        {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        if self.background_rate < 0.0 || self.elevated_rate < 0.0 {
            return Err(Error::Config("rates must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.elevated_fraction) {
            return Err(Error::Config("elevated_fraction must lie in [0, 1]".into()));
        }
        if self.bin_width_ms <= 0.0 {
            return Err(Error::Config("bin_width_ms must be positive".into()));
        }
        self.drift(0).validate()
    }

    fn drift(&self, seed: u64) -> DriftModel {
        DriftModel {
            gain_drift_sigma: self.gain_drift_sigma,
            rate_shift_sigma: self.rate_shift_sigma,
            channel_swap_fraction: self.channel_swap_fraction,
            rng_seed: seed,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.n_classes).map(|c| format!("class-{c}")).collect()
    }

    /// Build the full multi-day set for this configuration.
    pub fn generate(&self, seed: u64) -> Result<TrialSet> {
        self.validate()?;
        let table = class_structured_rates(
            self.n_classes,
            self.n_channels,
            self.background_rate,
            self.elevated_rate,
            self.elevated_fraction,
            seed,
        )?;
        generate_days(
            &table,
            &self.drift(seed),
            self.t_bins,
            self.trials_per_class,
            self.n_days,
            self.class_names(),
            self.bin_width_ms,
            seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_table(n_classes: usize, n_channels: usize, rate: f64) -> RateTable {
        RateTable::new(n_classes, n_channels, vec![rate; n_classes * n_channels]).unwrap()
    }

    #[test]
    fn zero_rate_gives_all_zero_counts() {
        let table = flat_table(2, 3, 0.0);
        let set =
            generate_synthetic(&table, 10, 4, vec!["a".into(), "b".into()], 20.0, 1).unwrap();
        assert!(set.counts.iter().all(|&c| c == 0));
        assert_eq!(set.n_trials(), 8);
    }

    #[test]
    fn poisson_sample_mean_is_close_to_rate() {
        // 10,000 bins at rate 5: the sample mean should sit within
        // 3 * sqrt(5 / 10000) of 5.
        let table = flat_table(1, 1, 5.0);
        let set = generate_synthetic(&table, 100, 100, vec!["a".into()], 20.0, 42).unwrap();
        let mean: f64 =
            set.counts.iter().map(|&c| c as f64).sum::<f64>() / set.counts.len() as f64;
        let bound = 3.0 * (5.0_f64 / 10_000.0).sqrt();
        assert!((mean - 5.0).abs() < bound, "mean {mean}, bound {bound}");
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GeneratorConfig {
            n_channels: 16,
            trials_per_class: 5,
            n_days: 3,
            ..GeneratorConfig::grasp_touch()
        };
        let a = cfg.generate(7).unwrap();
        let b = cfg.generate(7).unwrap();
        assert_eq!(a, b);
        let c = cfg.generate(8).unwrap();
        assert_ne!(a.counts, c.counts);
    }

    #[test]
    fn drift_day_zero_is_identity() {
        let table = flat_table(2, 8, 3.0);
        let drift = DriftModel {
            gain_drift_sigma: 0.5,
            rate_shift_sigma: 0.5,
            channel_swap_fraction: 0.5,
            rng_seed: 9,
        };
        let out = apply_drift(&table, &drift, 0).unwrap();
        assert_eq!(out, table);
    }

    #[test]
    fn degenerate_drift_is_identity_on_every_day() {
        let table = class_structured_rates(3, 12, 1.0, 6.0, 0.25, 4).unwrap();
        let drift = DriftModel {
            gain_drift_sigma: 0.0,
            rate_shift_sigma: 0.0,
            channel_swap_fraction: 0.0,
            rng_seed: 9,
        };
        for day in 0..5 {
            assert_eq!(apply_drift(&table, &drift, day).unwrap(), table);
        }
    }

    #[test]
    fn drift_changes_rates_and_keeps_them_non_negative() {
        let table = class_structured_rates(2, 16, 0.5, 4.0, 0.25, 4).unwrap();
        let drift = DriftModel {
            gain_drift_sigma: 0.3,
            rate_shift_sigma: 0.5,
            channel_swap_fraction: 0.25,
            rng_seed: 11,
        };
        let day3 = apply_drift(&table, &drift, 3).unwrap();
        assert_ne!(day3, table);
        assert!(day3.rates.iter().all(|&r| r >= 0.0));
        // determinism
        assert_eq!(apply_drift(&table, &drift, 3).unwrap(), day3);
    }

    #[test]
    fn single_day_split_is_a_stratified_partition() {
        let cfg = GeneratorConfig {
            n_channels: 8,
            ..GeneratorConfig::grasp_touch()
        };
        let set = cfg.generate(3).unwrap();
        let (train, test) = split_single_day(&set, 0, 0.2, 17).unwrap();
        assert_eq!(train.n_trials(), 240);
        assert_eq!(test.n_trials(), 60);
        for class in 0..4u16 {
            let n = test.labels.iter().filter(|&&l| l == class).count();
            assert_eq!(n, 15);
        }
    }

    #[test]
    fn finetune_subset_counts_match_the_protocol() {
        let cfg = GeneratorConfig {
            n_channels: 8,
            n_days: 1,
            ..GeneratorConfig::grasp_touch()
        };
        let day = cfg.generate(5).unwrap();
        let (ft, eval) = finetune_subset(&day, 0.078, 23).unwrap();
        assert_eq!(ft.n_trials(), 24); // ceil(0.078 * 300)
        assert_eq!(ft.n_trials() + eval.n_trials(), 300);

        let big = GeneratorConfig {
            n_channels: 8,
            n_classes: 8,
            trials_per_class: 250,
            n_days: 1,
            ..GeneratorConfig::center_out()
        };
        let day = big.generate(5).unwrap();
        let (ft, _) = finetune_subset(&day, 0.032, 23).unwrap();
        assert_eq!(ft.n_trials(), 64); // ceil(0.032 * 2000)
    }

    #[test]
    fn finetune_subset_rejects_out_of_range_ratio() {
        let cfg = GeneratorConfig {
            n_channels: 4,
            trials_per_class: 3,
            n_days: 1,
            ..GeneratorConfig::grasp_touch()
        };
        let day = cfg.generate(1).unwrap();
        assert!(finetune_subset(&day, 0.0, 1).is_err());
        assert!(finetune_subset(&day, 1.0, 1).is_err());
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let cfg = GeneratorConfig {
            n_channels: 8,
            trials_per_class: 4,
            n_days: 2,
            ..GeneratorConfig::grasp_touch()
        };
        let set = cfg.generate(13).unwrap();
        let dir = std::env::temp_dir().join(format!("mfsnn-datakit-test-{}", std::process::id()));
        save_dir(&dir, &set).unwrap();
        let loaded = load_dir(&dir).unwrap();
        assert_eq!(loaded, set);
        // corrupt: truncate trials.bin
        let trials = dir.join("trials.bin");
        let bytes = fs::read(&trials).unwrap();
        fs::write(&trials, &bytes[..bytes.len() - 2]).unwrap();
        assert!(load_dir(&dir).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
