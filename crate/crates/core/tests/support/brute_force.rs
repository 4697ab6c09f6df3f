//! Scalar-loop reimplementation of the instrumented spiking forward pass,
//! used to verify `measure_rates` by independent recount. Mirrors the
//! documented arithmetic order of every operation so the comparison is
//! exact, not approximate.

use std::collections::BTreeMap;

use mfsnn_core::datakit::TrialSet;
use mfsnn_core::energy::{LayerKey, LayerKind};
use mfsnn_core::model::MfsnnModel;

pub fn brute_force_counts(model: &MfsnnModel, data: &TrialSet) -> BTreeMap<LayerKey, (u64, u64)> {
    let cfg = &model.core.config;
    let enc = &cfg.encoder;
    let lif = &cfg.lif;
    let (c, t, t_out) = (enc.channels_per_subencoder(), enc.t_in, enc.t_out);
    let cr = enc.bottleneck_width();
    let p = enc.pool_window();
    let inv_tau = 1.0 / lif.tau_m;
    let window = lif.t_window;

    let mut counts: BTreeMap<LayerKey, (u64, u64)> = BTreeMap::new();
    let mut tally = |key: LayerKey, values: &[f64]| {
        let e = counts.entry(key).or_insert((0, 0));
        e.0 += values.iter().filter(|&&v| v != 0.0).count() as u64;
        e.1 += values.len() as u64;
    };

    let run_window = |current: &[f64], on_spikes: &mut dyn FnMut(&[f64])| -> Vec<f64> {
        let mut v = vec![lif.v_reset; current.len()];
        let mut sums = vec![0.0; current.len()];
        for _ in 0..window {
            let mut spikes = vec![0.0; current.len()];
            for i in 0..current.len() {
                let v_prime = v[i] + (current[i] - v[i]) * inv_tau;
                let u = v_prime + (-lif.v_threshold);
                let s = if u >= 0.0 { 1.0 } else { 0.0 };
                spikes[i] = s;
                sums[i] += s;
                v[i] = v_prime * (1.0 - s) + s * lif.v_reset;
            }
            on_spikes(&spikes);
        }
        sums.iter().map(|s| s / window as f64).collect()
    };

    for trial in 0..data.n_trials() {
        let base = trial * enc.n_channels * t;
        let mut flat = Vec::with_capacity(enc.n_channels * t_out);
        for sub in 0..enc.n_subencoders {
            let w = &model.core.sub_weights[sub];
            let block: Vec<f64> = (0..c * t)
                .map(|i| data.counts[base + sub * c * t + i] as f64)
                .collect();
            tally((Some(sub), LayerKind::Lt), &block);
            tally((Some(sub), LayerKind::Tcn), &block);

            let mut pooled = vec![0.0; c];
            for ch in 0..c {
                let mut acc = 0.0;
                for ti in 0..t {
                    acc += block[ch * t + ti];
                }
                pooled[ch] = acc * (1.0 / t as f64);
            }
            tally((Some(sub), LayerKind::CaCompress), &pooled);

            let wc = w.ca_compress.data();
            let bc = w.ca_compress_bias.data();
            let mut z = vec![0.0; cr];
            for (k, &f) in pooled.iter().enumerate() {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += f * wc[j * c + k];
                }
            }
            for (zj, b) in z.iter_mut().zip(bc) {
                *zj += *b;
            }
            let u_rate = run_window(&z, &mut |spikes| {
                tally((Some(sub), LayerKind::CaExpand), spikes);
            });

            let we = w.ca_expand.data();
            let be = w.ca_expand_bias.data();
            let mut y = vec![0.0; c];
            for (k, &u) in u_rate.iter().enumerate() {
                for (ch, yc) in y.iter_mut().enumerate() {
                    *yc += u * we[ch * cr + k];
                }
            }
            for (yc, b) in y.iter_mut().zip(be) {
                *yc += *b;
            }
            let gate = run_window(&y, &mut |_| {});

            let wk = w.tcn_kernels.data();
            let bk = w.tcn_bias.data();
            let lt = w.lt.data();
            for ch in 0..c {
                let mut conv = vec![0.0; t];
                for (ti, cv) in conv.iter_mut().enumerate() {
                    let mut acc = bk[ch];
                    for i in 0..enc.kernel_size {
                        let shift = (enc.kernel_size - 1 - i) * enc.dilation;
                        if ti >= shift {
                            acc += wk[ch * enc.kernel_size + i] * block[ch * t + ti - shift];
                        }
                    }
                    *cv = acc;
                }
                for j in 0..t_out {
                    let mut acc = 0.0;
                    for i in 0..p {
                        acc += conv[j * p + i];
                    }
                    let pooled_tcn = acc * (1.0 / p as f64);
                    let mut lt_out = 0.0;
                    for ti in 0..t {
                        lt_out += block[ch * t + ti] * lt[ti * t_out + j];
                    }
                    flat.push(lt_out + pooled_tcn * gate[ch]);
                }
            }
        }
        run_window(&flat, &mut |spikes| {
            tally((None, LayerKind::Classifier), spikes);
        });
    }
    counts
}
