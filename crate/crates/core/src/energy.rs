//! Theoretical energy accounting for 45 nm hardware.
//!
//! Multiply-bearing layers cost `E_MAC = 4.6 pJ` per MAC when executed
//! densely (the non-spiking twin) and `E_AC = 0.9 pJ` per spike-driven
//! accumulate when executed event-wise. A layer's synaptic operation count
//! is `SOPs = rate * t_window * FLOPs`, where `rate` is the measured mean
//! firing rate of its input and `FLOPs` its per-application MAC count.
//! Pooling and the fusion additions carry no multiplies and stay out of
//! both totals; the readout layer is tallied separately and excluded from
//! the spiking total by default, with a flag to include it (the comparison
//! always uses matched layer sets).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datakit::TrialSet;
use crate::error::{Error, Result};
use crate::model::{MfsnnModel, ModelConfig};

/// Energy per multiply-accumulate on the 45 nm reference process.
pub const E_MAC_PJ: f64 = 4.6;
/// Energy per spike-driven accumulate on the same process.
pub const E_AC_PJ: f64 = 0.9;

/// Multiply-bearing layer families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Lt,
    CaCompress,
    CaExpand,
    Tcn,
    Classifier,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Lt => "lt",
            LayerKind::CaCompress => "ca_compress",
            LayerKind::CaExpand => "ca_expand",
            LayerKind::Tcn => "tcn",
            LayerKind::Classifier => "classifier",
        }
    }
}

/// One accountable layer instance: a sub-encoder branch or the readout.
pub type LayerKey = (Option<usize>, LayerKind);

fn layer_id(key: &LayerKey) -> String {
    match key.0 {
        Some(i) => format!("sub{i}.{}", key.1.as_str()),
        None => key.1.as_str().to_string(),
    }
}

/// Per-application MAC counts for every multiply-bearing layer the config
/// actually runs, in deterministic order.
pub fn count_flops(config: &ModelConfig) -> Result<Vec<(LayerKey, u64)>> {
    config.validate()?;
    let e = &config.encoder;
    let c = e.channels_per_subencoder() as u64;
    let cr = e.bottleneck_width() as u64;
    let t = e.t_in as u64;
    let t_out = e.t_out as u64;
    let paths = config.ablation.paths();

    let mut out = Vec::new();
    for i in 0..e.n_subencoders {
        if paths.lt {
            out.push(((Some(i), LayerKind::Lt), c * t * t_out));
        }
        if paths.tcn && paths.ca {
            out.push(((Some(i), LayerKind::CaCompress), cr * c));
            out.push(((Some(i), LayerKind::CaExpand), c * cr));
        }
        if paths.tcn {
            out.push(((Some(i), LayerKind::Tcn), c * t * e.kernel_size as u64));
        }
    }
    out.push((
        (None, LayerKind::Classifier),
        (config.n_classes * config.classifier_input_width()) as u64,
    ));
    Ok(out)
}

/// Running nonzero/total tallies per layer input.
#[derive(Debug, Default, Clone)]
pub struct RateProbe {
    counts: BTreeMap<LayerKey, (u64, u64)>,
}

impl RateProbe {
    pub fn record(&mut self, key: LayerKey, values: &[f64]) {
        let nonzero = values.iter().filter(|&&v| v != 0.0).count() as u64;
        let entry = self.counts.entry(key).or_insert((0, 0));
        entry.0 += nonzero;
        entry.1 += values.len() as u64;
    }

    /// Pooled fraction of nonzero entries per layer.
    pub fn rates(&self) -> BTreeMap<LayerKey, f64> {
        self.counts
            .iter()
            .map(|(k, &(nz, total))| (*k, nz as f64 / total as f64))
            .collect()
    }

    pub fn raw_counts(&self) -> &BTreeMap<LayerKey, (u64, u64)> {
        &self.counts
    }
}

/// Mean input firing rate per layer over a whole dataset: the fraction of
/// nonzero entries in each layer's input tensor, pooled over trials and
/// window steps.
pub fn measure_rates(model: &MfsnnModel, data: &TrialSet) -> Result<BTreeMap<LayerKey, f64>> {
    data.validate()?;
    if data.n_trials() == 0 {
        return Err(Error::Invalid("cannot measure rates on an empty dataset".into()));
    }
    let paths = model.core.config.ablation.paths();
    let mut probe = RateProbe::default();
    let indices: Vec<usize> = (0..data.n_trials()).collect();
    for chunk in indices.chunks(32) {
        let batch = data.batch_tensor(chunk);
        let (_, trace) = model.forward_traced(&batch)?;
        for (i, block) in trace.sub_inputs.iter().enumerate() {
            if paths.lt {
                probe.record((Some(i), LayerKind::Lt), block.data());
            }
            if paths.tcn {
                probe.record((Some(i), LayerKind::Tcn), block.data());
            }
        }
        for (i, sub) in trace.sub_traces.iter().enumerate() {
            if let Some(ca) = &sub.ca {
                probe.record((Some(i), LayerKind::CaCompress), ca.pooled.data());
                for spikes in &ca.compress_spikes {
                    probe.record((Some(i), LayerKind::CaExpand), spikes.data());
                }
            }
        }
        for spikes in &trace.classifier_spikes {
            probe.record((None, LayerKind::Classifier), spikes.data());
        }
    }
    Ok(probe.rates())
}

/// The same rate for every layer; the closed-form regime where the
/// spiking-vs-dense ratio is `E_AC * r * t_window / E_MAC` independent of
/// the architecture.
pub fn uniform_rates(config: &ModelConfig, rate: f64) -> Result<BTreeMap<LayerKey, f64>> {
    Ok(count_flops(config)?
        .into_iter()
        .map(|(key, _)| (key, rate))
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sub_encoder: Option<usize>,
    pub kind: LayerKind,
    pub flops: u64,
    pub measured_rate: f64,
    pub t_window: usize,
    pub sops: f64,
    pub energy_pj: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_mac_pj: f64,
    pub e_ac_pj: f64,
    pub t_window: usize,
    pub include_classifier: bool,
    pub layers: Vec<LayerCost>,
    /// Totals over the compared layer set (encoder branches, plus the
    /// readout only when `include_classifier`).
    pub total_sops: f64,
    pub total_flops: u64,
    pub e_snn_pj: f64,
    pub e_ann_pj: f64,
    pub reduction_fraction: f64,
    /// Readout cost, always reported even when excluded from the totals.
    pub classifier_sops: f64,
    pub classifier_energy_pj: f64,
}

impl EnergyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,kind,flops,rate,sops,energy_pj\n");
        for l in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                l.layer_id,
                l.kind.as_str(),
                l.flops,
                l.measured_rate,
                l.sops,
                l.energy_pj
            ));
        }
        out
    }
}

/// Convert measured rates into synaptic-operation counts and picojoules,
/// and compare against the dense twin on the matched layer set.
pub fn energy_report(
    config: &ModelConfig,
    rates: &BTreeMap<LayerKey, f64>,
    include_classifier: bool,
) -> Result<EnergyReport> {
    let flops = count_flops(config)?;
    let t_window = config.lif.t_window;

    let mut layers = Vec::with_capacity(flops.len());
    let mut total_sops = 0.0;
    let mut total_flops = 0u64;
    let mut classifier_sops = 0.0;
    for (key, f) in flops {
        let rate = *rates.get(&key).ok_or_else(|| {
            Error::Invalid(format!("no measured rate for layer {}", layer_id(&key)))
        })?;
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Invalid(format!(
                "rate {rate} for layer {} outside [0, 1]",
                layer_id(&key)
            )));
        }
        let sops = rate * t_window as f64 * f as f64;
        layers.push(LayerCost {
            layer_id: layer_id(&key),
            sub_encoder: key.0,
            kind: key.1,
            flops: f,
            measured_rate: rate,
            t_window,
            sops,
            energy_pj: E_AC_PJ * sops,
        });
        let counted = key.1 != LayerKind::Classifier || include_classifier;
        if counted {
            total_sops += sops;
            total_flops += f;
        }
        if key.1 == LayerKind::Classifier {
            classifier_sops = sops;
        }
    }

    let e_snn_pj = E_AC_PJ * total_sops;
    let e_ann_pj = E_MAC_PJ * total_flops as f64;
    Ok(EnergyReport {
        e_mac_pj: E_MAC_PJ,
        e_ac_pj: E_AC_PJ,
        t_window,
        include_classifier,
        layers,
        total_sops,
        total_flops,
        e_snn_pj,
        e_ann_pj,
        reduction_fraction: 1.0 - e_snn_pj / e_ann_pj,
        classifier_sops,
        classifier_energy_pj: E_AC_PJ * classifier_sops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::LifParams;

    fn reference_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig::default(),
            lif: LifParams::default(),
            n_classes: 4,
            share_lt: false,
            ablation: Default::default(),
        }
    }

    #[test]
    fn closed_form_flop_counts() {
        // C=8, T=50, T'=10, k=3, r=4, 16 sub-encoders, 4 classes.
        let flops = count_flops(&reference_config()).unwrap();
        let get = |key: LayerKey| flops.iter().find(|(k, _)| *k == key).unwrap().1;
        assert_eq!(get((Some(0), LayerKind::Lt)), 4000);
        assert_eq!(
            get((Some(0), LayerKind::CaCompress)) + get((Some(0), LayerKind::CaExpand)),
            32
        );
        assert_eq!(get((Some(0), LayerKind::Tcn)), 1200);
        assert_eq!(get((None, LayerKind::Classifier)), 4 * 128 * 10);
        assert_eq!(flops.len(), 16 * 4 + 1);
    }

    #[test]
    fn sop_arithmetic() {
        // rate 0.1, window 20, 1000 MACs: 2000 SOPs, 1800 pJ.
        let sops = 0.1 * 20.0 * 1000.0;
        assert_eq!(sops, 2000.0);
        assert_eq!(E_AC_PJ * sops, 1800.0);

        let cfg = reference_config();
        let rates = uniform_rates(&cfg, 0.1).unwrap();
        let report = energy_report(&cfg, &rates, false).unwrap();
        let lt = report.layers.iter().find(|l| l.layer_id == "sub0.lt").unwrap();
        assert_eq!(lt.sops, 0.1 * 20.0 * 4000.0);
        assert_eq!(lt.energy_pj, 0.9 * lt.sops);
    }

    #[test]
    fn constants_appear_verbatim() {
        let cfg = reference_config();
        let rates = uniform_rates(&cfg, 0.05).unwrap();
        let report = energy_report(&cfg, &rates, false).unwrap();
        assert_eq!(report.e_mac_pj, 4.6);
        assert_eq!(report.e_ac_pj, 0.9);
    }

    #[test]
    fn zero_rates_give_zero_spiking_energy() {
        let cfg = reference_config();
        let rates = uniform_rates(&cfg, 0.0).unwrap();
        let report = energy_report(&cfg, &rates, true).unwrap();
        assert_eq!(report.e_snn_pj, 0.0);
        assert!(report.e_ann_pj > 0.0);
    }

    #[test]
    fn uniform_rate_reduction_is_architecture_independent() {
        // ratio = E_AC * r * T / E_MAC regardless of layer sizes.
        let cfg = reference_config();
        for &r in &[0.01, 0.0232555555555555, 0.1] {
            let rates = uniform_rates(&cfg, r).unwrap();
            for include in [false, true] {
                let report = energy_report(&cfg, &rates, include).unwrap();
                let expect = 1.0 - (E_AC_PJ * r * 20.0) / E_MAC_PJ;
                assert!(
                    (report.reduction_fraction - expect).abs() < 1e-12,
                    "r={r}: {} vs {expect}",
                    report.reduction_fraction
                );
            }
        }
    }

    #[test]
    fn sops_never_exceed_window_times_flops() {
        let cfg = reference_config();
        let rates = uniform_rates(&cfg, 1.0).unwrap();
        let report = energy_report(&cfg, &rates, true).unwrap();
        for l in &report.layers {
            assert!(l.sops <= l.t_window as f64 * l.flops as f64 + 1e-9);
        }
    }

    #[test]
    fn energy_scales_linearly_in_rate() {
        let cfg = reference_config();
        let a = energy_report(&cfg, &uniform_rates(&cfg, 0.02).unwrap(), false).unwrap();
        let b = energy_report(&cfg, &uniform_rates(&cfg, 0.04).unwrap(), false).unwrap();
        assert!((b.e_snn_pj - 2.0 * a.e_snn_pj).abs() < 1e-9);
        assert_eq!(a.e_ann_pj, b.e_ann_pj);
    }

    #[test]
    fn missing_or_invalid_rates_are_rejected() {
        let cfg = reference_config();
        let empty = BTreeMap::new();
        assert!(energy_report(&cfg, &empty, false).is_err());
        let mut bad = uniform_rates(&cfg, 0.5).unwrap();
        bad.insert((Some(0), LayerKind::Lt), 1.5);
        assert!(energy_report(&cfg, &bad, false).is_err());
    }
}
