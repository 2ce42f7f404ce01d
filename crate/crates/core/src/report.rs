//! Run artifacts (per-run CSV logs plus a manifest) and the CSV table
//! renderers consumed by the `report` subcommand.

use crate::channel::monte_carlo_decode_prob;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::federation::{RoundRecord, TransmissionMode, CSV_HEADER};
use crate::metrics::{detect_convergence, ConvergenceCriterion};
use crate::rng::{stream, StreamKind};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One grid run inside an output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub mode: TransmissionMode,
    pub channel: String,
    pub alpha: f64,
    pub seed: u64,
    pub file: String,
}

impl RunEntry {
    pub fn new(mode: TransmissionMode, channel: &str, alpha: f64, seed: u64) -> Self {
        let file = format!("{}_{}_a{}_s{}.csv", mode.as_str(), channel, alpha, seed);
        RunEntry { mode, channel: channel.to_string(), alpha, seed, file }
    }
}

pub fn write_run_csv(dir: &Path, entry: &RunEntry, records: &[RoundRecord]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(&entry.file);
    std::fs::write(&path, crate::federation::records_to_csv(records))?;
    Ok(path)
}

/// Manifest: config hash, code version, and one line per run. Everything a
/// re-run needs to reproduce the directory byte for byte.
pub fn write_manifest(dir: &Path, cfg: &ExperimentConfig, entries: &[RunEntry]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut text = String::new();
    let _ = writeln!(text, "config_hash = {}", cfg.content_hash());
    let _ = writeln!(text, "code_version = {}", env!("CARGO_PKG_VERSION"));
    let seeds: Vec<String> = cfg.seeds.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(text, "seeds = {}", seeds.join(","));
    for e in entries {
        let _ = writeln!(text, "run = {}:{}:{}:{}:{}", e.mode.as_str(), e.channel, e.alpha, e.seed, e.file);
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, text)?;
    // The exact configuration rides along for reproduction.
    std::fs::write(dir.join("config.txt"), cfg.serialize())?;
    Ok(path)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<RunEntry>> {
    let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let mut entries = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("run = ") {
            let parts: Vec<&str> = rest.splitn(5, ':').collect();
            if parts.len() != 5 {
                return Err(Error::Parse(format!("malformed manifest run line '{rest}'")));
            }
            entries.push(RunEntry {
                mode: TransmissionMode::parse(parts[0])?,
                channel: parts[1].to_string(),
                alpha: parts[2]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad alpha '{}'", parts[2])))?,
                seed: parts[3]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad seed '{}'", parts[3])))?,
                file: parts[4].to_string(),
            });
        }
    }
    Ok(entries)
}

pub fn read_run_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = std::fs::read_to_string(path)?;
    records_from_csv(&text)
}

pub fn records_from_csv(text: &str) -> Result<Vec<RoundRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(Error::Parse(format!("unexpected CSV header {other:?}"))),
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 16 {
            return Err(Error::Parse(format!("row {}: expected 16 fields, got {}", i + 2, f.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse(format!("row {}: bad {what} '{s}'", i + 2)))
        };
        let opt_num = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() { Ok(None) } else { num(s, what).map(Some) }
        };
        records.push(RoundRecord {
            round: num(f[0], "round")? as usize,
            mode: TransmissionMode::parse(f[1])?,
            alpha: num(f[2], "alpha")?,
            seed: num(f[3], "seed")? as u64,
            acc_half: opt_num(f[4], "acc_0.5x")?,
            acc_full: opt_num(f[5], "acc_1.0x")?,
            loss_half: opt_num(f[6], "loss_0.5x")?,
            loss_full: opt_num(f[7], "loss_1.0x")?,
            lh_contributors: num(f[8], "n_lh_contrib")? as usize,
            rh_contributors: num(f[9], "n_rh_contrib")? as usize,
            bits_decoded_up: num(f[10], "bits_decoded_up")?,
            bits_dropped_up: num(f[11], "bits_dropped_up")?,
            bits_decoded_dn: num(f[12], "bits_decoded_dn")?,
            bits_dropped_dn: num(f[13], "bits_dropped_dn")?,
            comm_mw: num(f[14], "comm_mW")?,
            mflops: num(f[15], "flops")?,
        });
    }
    Ok(records)
}

/// Closed-form vs Monte Carlo decode probabilities for every preset and
/// direction: `preset,k,p_closed,p_mc,std_err`.
pub fn validate_channel_csv(cfg: &ExperimentConfig, draws: usize, seed: u64) -> Result<String> {
    let mut out = String::from("preset,k,p_closed,p_mc,std_err\n");
    for def in &cfg.presets {
        let preset = cfg.resolve_preset(&def.name)?;
        for (dir_name, link) in [("uplink", &preset.uplink), ("downlink", &preset.downlink)] {
            let (p1, p2) = link.decode_probs()?;
            let mut rng = stream(seed, StreamKind::Other { tag: 0x6d63 });
            let mc = monte_carlo_decode_prob(&link.params, &link.alloc, draws, &mut rng)?;
            for (k, closed) in [(1usize, p1), (2, p2)] {
                let (p_mc, se) = mc[k - 1];
                let _ = writeln!(
                    out,
                    "{}-{},{},{:.6},{:.6},{:.6}",
                    preset.name, dir_name, k, closed, p_mc, se
                );
            }
        }
    }
    Ok(out)
}

/// Decode-probability operating points per preset, including the vanilla
/// single-message transmissions: the published-table analogue.
pub fn decode_prob_table(cfg: &ExperimentConfig) -> Result<String> {
    let mut out = String::from("preset,p_up_1,p_up_2,p_up_cp1,p_up_cp2,p_dn_1,p_dn_2,p_dn_cp1,p_dn_cp2\n");
    for def in &cfg.presets {
        let preset = cfg.resolve_preset(&def.name)?;
        let (u1, u2) = preset.uplink.decode_probs()?;
        let (d1, d2) = preset.downlink.decode_probs()?;
        let _ = writeln!(
            out,
            "{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}",
            preset.name,
            u1,
            u2,
            preset.uplink.single_half_prob()?,
            preset.uplink.single_full_prob()?,
            d1,
            d2,
            preset.downlink.single_half_prob()?,
            preset.downlink.single_full_prob()?,
        );
    }
    Ok(out)
}

/// Expected decoded-bits split per preset and direction given total offered
/// megabytes (SC runs offer `offered_mb`, the 0.5x vanilla run half of it).
pub fn bit_accounting_table(cfg: &ExperimentConfig, offered_mb: f64) -> Result<String> {
    let mut out = String::from(
        "preset,direction,sc_half_mb,sc_full_mb,sc_drop_mb,v05_mb,v05_drop_mb,v10_mb,v10_drop_mb\n",
    );
    for def in &cfg.presets {
        let preset = cfg.resolve_preset(&def.name)?;
        for (dir_name, link) in [("uplink", &preset.uplink), ("downlink", &preset.downlink)] {
            let (p1, p2) = link.decode_probs()?;
            let sc = crate::metrics::expected_bit_accounting(offered_mb, p1, p2)?;
            let cp1 = link.single_half_prob()?;
            let cp2 = link.single_full_prob()?;
            let half_total = offered_mb / 2.0;
            let _ = writeln!(
                out,
                "{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}",
                preset.name,
                dir_name,
                sc.half,
                sc.full,
                sc.dropped,
                half_total * cp1,
                half_total * (1.0 - cp1),
                offered_mb * cp2,
                offered_mb * (1.0 - cp2),
            );
        }
    }
    Ok(out)
}

/// Per-round cost constants by method.
pub fn energy_constants_table(cfg: &ExperimentConfig) -> String {
    let e = &cfg.energy;
    let mut out = String::from("method,comm_mw_per_round,compute_mflops_per_round\n");
    let _ = writeln!(out, "slimfl,{},{}", e.slimfl_mw, e.slimfl_mflops);
    let _ = writeln!(out, "vanilla-0.5,{},{}", e.vanilla05_mw, e.vanilla05_mflops);
    let _ = writeln!(out, "vanilla-1.0,{},{}", e.vanilla10_mw, e.vanilla10_mflops);
    let _ = writeln!(out, "vanilla-1.5,{},{}", e.vanilla15_mw, e.vanilla15_mflops);
    out
}

/// The per-run accuracy series the convergence detector watches: the full
/// width when present (SC/SD and vanilla 1.0x), the half width otherwise.
pub fn primary_accuracy_series(records: &[RoundRecord]) -> Vec<f64> {
    let use_full = records.iter().any(|r| r.acc_full.is_some());
    records
        .iter()
        .filter_map(|r| if use_full { r.acc_full } else { r.acc_half })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

type LoadedRun = (RunEntry, Vec<RoundRecord>);

fn group_key(e: &RunEntry) -> (String, String, String) {
    (e.mode.as_str().to_string(), e.channel.clone(), format!("{}", e.alpha))
}

/// Accuracy summary over a trailing window, grouped by (mode, channel, alpha),
/// with both dispersion readings: across seeds and across the final window.
pub fn accuracy_table(runs: &[LoadedRun], window: usize) -> String {
    let mut out = String::from(
        "mode,channel,alpha,width,n_seeds,acc_mean,std_over_seeds,std_over_window\n",
    );
    let mut groups: Vec<(String, String, String)> = runs.iter().map(|(e, _)| group_key(e)).collect();
    groups.sort();
    groups.dedup();
    for key in groups {
        let members: Vec<&LoadedRun> = runs.iter().filter(|(e, _)| group_key(e) == key).collect();
        for (width, pick) in [
            ("0.5x", (|r: &RoundRecord| r.acc_half) as fn(&RoundRecord) -> Option<f64>),
            ("1.0x", |r: &RoundRecord| r.acc_full),
        ] {
            let mut per_seed_mean = Vec::new();
            let mut per_seed_std = Vec::new();
            for (_, records) in &members {
                let series: Vec<f64> = records.iter().filter_map(pick).collect();
                if series.is_empty() {
                    continue;
                }
                let tail = &series[series.len().saturating_sub(window)..];
                let (m, s) = mean_std(tail);
                per_seed_mean.push(m);
                per_seed_std.push(s);
            }
            if per_seed_mean.is_empty() {
                continue;
            }
            let (acc_mean, std_seeds) = mean_std(&per_seed_mean);
            let std_window = per_seed_mean.len() as f64;
            let std_window = per_seed_std.iter().sum::<f64>() / std_window;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.2},{:.2},{:.2}",
                key.0,
                key.1,
                key.2,
                width,
                per_seed_mean.len(),
                acc_mean,
                std_seeds,
                std_window
            );
        }
    }
    out
}

/// Energy-to-convergence summary grouped by (mode, channel, alpha). The 1.5x
/// baseline is synthesized from its 0.5x and 1.0x runs when both are present:
/// it converges once both sub-models have.
pub fn convergence_energy_table(runs: &[LoadedRun], cfg: &ExperimentConfig) -> String {
    let mut out = String::from(
        "mode,channel,alpha,n_seeds,mean_rounds_to_convergence,n_not_converged,comm_w,compute_gflops\n",
    );

    let converged_round = |records: &[RoundRecord]| -> (usize, bool) {
        let series = primary_accuracy_series(records);
        let crit = ConvergenceCriterion::from_series(
            &series,
            cfg.convergence_window.min(series.len().max(1)),
            cfg.convergence_std_ref,
            cfg.convergence_mean_ref_fraction,
        );
        match crit {
            Ok(mut crit) => {
                crit.require_min_above_ref = cfg.convergence_min_above_ref;
                match detect_convergence(&series, &crit) {
                    Some(r) => (r, true),
                    None => (series.len(), false),
                }
            }
            Err(_) => (series.len(), false),
        }
    };

    let mut groups: Vec<(String, String, String)> = runs.iter().map(|(e, _)| group_key(e)).collect();
    // Synthesized 1.5x groups where both parts exist.
    let mut synth = Vec::new();
    for (e, _) in runs.iter().filter(|(e, _)| e.mode == TransmissionMode::Vanilla05) {
        let partner = runs.iter().any(|(f, _)| {
            f.mode == TransmissionMode::Vanilla10
                && f.channel == e.channel
                && f.alpha == e.alpha
                && f.seed == e.seed
        });
        if partner {
            synth.push((
                TransmissionMode::Vanilla15.as_str().to_string(),
                e.channel.clone(),
                format!("{}", e.alpha),
            ));
        }
    }
    groups.extend(synth);
    groups.sort();
    groups.dedup();

    for key in groups {
        let mode = TransmissionMode::parse(&key.0).expect("keys from valid entries");
        let mut rounds = Vec::new();
        let mut misses = 0usize;
        if mode == TransmissionMode::Vanilla15 {
            let halves: Vec<&LoadedRun> = runs
                .iter()
                .filter(|(e, _)| {
                    e.mode == TransmissionMode::Vanilla05
                        && group_key(e).1 == key.1
                        && group_key(e).2 == key.2
                })
                .collect();
            for (he, hr) in halves {
                let full = runs.iter().find(|(e, _)| {
                    e.mode == TransmissionMode::Vanilla10
                        && e.channel == he.channel
                        && e.alpha == he.alpha
                        && e.seed == he.seed
                });
                if let Some((_, fr)) = full {
                    let (r_h, ok_h) = converged_round(hr);
                    let (r_f, ok_f) = converged_round(fr);
                    rounds.push(r_h.max(r_f) as f64);
                    if !(ok_h && ok_f) {
                        misses += 1;
                    }
                }
            }
        } else {
            for (_, records) in runs.iter().filter(|(e, _)| group_key(e) == key) {
                let (r, ok) = converged_round(records);
                rounds.push(r as f64);
                if !ok {
                    misses += 1;
                }
            }
        }
        if rounds.is_empty() {
            continue;
        }
        let ledger = cfg.ledger_for(mode);
        let mean_rounds = rounds.iter().sum::<f64>() / rounds.len() as f64;
        let _ = writeln!(
            out,
            "{},{},{},{},{:.1},{},{:.3},{:.4}",
            key.0,
            key.1,
            key.2,
            rounds.len(),
            mean_rounds,
            misses,
            ledger.comm_mw_per_round * mean_rounds / 1000.0,
            ledger.compute_mflops_per_round * mean_rounds / 1000.0,
        );
    }
    out
}

/// Accuracy series of one width across a run (rounds where it was measured).
pub fn accuracy_series(records: &[RoundRecord], width: crate::nn::Width) -> Vec<f64> {
    records
        .iter()
        .filter_map(|r| match width {
            crate::nn::Width::Half => r.acc_half,
            crate::nn::Width::Full => r.acc_full,
        })
        .collect()
}

/// Mean and population std of the last `window` points.
pub fn tail_stats(series: &[f64], window: usize) -> (f64, f64) {
    mean_std(&series[series.len().saturating_sub(window)..])
}

/// Execute every `(cell, seed)` of the config's reproduction grid, writing one
/// CSV per run plus the manifest. Returns the manifest entries in run order.
/// Deterministic: a second invocation reproduces every byte.
pub fn run_grid(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RunEntry>> {
    let (train, test) = crate::federation::load_datasets(cfg)?;
    let mut entries = Vec::new();
    for cell in &cfg.reproduce_cells {
        let mut run_cfg = cfg.clone();
        run_cfg.mode = cell.mode;
        run_cfg.channel = cell.channel.clone();
        run_cfg.alpha = cell.alpha;
        for &seed in &cfg.seeds {
            let records = crate::federation::run_experiment::<f32>(&run_cfg, seed, &train, &test)?;
            let entry = RunEntry::new(cell.mode, &cell.channel, cell.alpha, seed);
            write_run_csv(out_dir, &entry, &records)?;
            entries.push(entry);
        }
    }
    write_manifest(out_dir, cfg, &entries)?;
    Ok(entries)
}

/// Plain-text summary of a desk-scale grid: end-of-run accuracy, stability,
/// and energy-to-convergence comparisons.
pub fn desk_scale_summary(runs: &[LoadedRun], cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "desk-scale summary ({} runs)", runs.len());
    let tail = 50usize;

    let mut groups: Vec<(String, String, String)> = runs.iter().map(|(e, _)| group_key(e)).collect();
    groups.sort();
    groups.dedup();
    for key in &groups {
        let members: Vec<&LoadedRun> = runs.iter().filter(|(e, _)| group_key(e) == *key).collect();
        for (label, width) in [("0.5x", crate::nn::Width::Half), ("1.0x", crate::nn::Width::Full)] {
            let mut means = Vec::new();
            let mut stds = Vec::new();
            for (_, records) in &members {
                let series = accuracy_series(records, width);
                if series.is_empty() {
                    continue;
                }
                let (m, s) = tail_stats(&series, tail);
                means.push(m);
                stds.push(s);
            }
            if means.is_empty() {
                continue;
            }
            let mean = means.iter().sum::<f64>() / means.len() as f64;
            let std = stds.iter().sum::<f64>() / stds.len() as f64;
            let _ = writeln!(
                out,
                "{} {} alpha={} {}: top-1 {:.2}% (mean of last {} rounds over {} seeds, within-run std {:.2})",
                key.0, key.1, key.2, label, mean, tail, means.len(), std
            );
        }
    }

    let _ = writeln!(out, "\nenergy to convergence:");
    out.push_str(&convergence_energy_table(runs, cfg));
    out
}

/// Load every run named by the manifest in `dir`.
pub fn load_runs(dir: &Path) -> Result<Vec<LoadedRun>> {
    let entries = read_manifest(dir)?;
    entries
        .into_iter()
        .map(|e| {
            let records = read_run_csv(&dir.join(&e.file))?;
            Ok((e, records))
        })
        .collect()
}
