//! Experiment configuration: a flat, diff-friendly `key = value` format with
//! `[section]` headers, full defaults for the reference setup, and strict
//! validation (unknown keys are errors).

use crate::channel::{self, ChannelPreset};
use crate::error::{Error, Result};
use crate::federation::TransmissionMode;
use crate::metrics::EnergyLedger;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    FashionMnist,
    Mnist,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::FashionMnist => "fashion-mnist",
            DatasetKind::Mnist => "mnist",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "fashion-mnist" => Ok(DatasetKind::FashionMnist),
            "mnist" => Ok(DatasetKind::Mnist),
            other => Err(Error::Config(format!("unknown dataset '{other}'"))),
        }
    }

    /// Normalization constants applied when the config does not override them.
    pub fn default_normalization(self) -> (f32, f32) {
        match self {
            DatasetKind::FashionMnist => (0.2860, 0.3530),
            DatasetKind::Mnist => (0.1307, 0.3081),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainerKind {
    Superposition,
    Ustrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// One direction of a channel preset definition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PresetSide {
    /// Code rate is calibrated so that `p1` hits `target_p1` under the noise.
    Calibrated { noise_psd_db: f64, target_p1: f64 },
    /// Noise and code rate are back-solved from a published `(p1, p2)` pair.
    FromPair { p1: f64, p2: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetDef {
    pub name: String,
    pub uplink: PresetSide,
    pub downlink: PresetSide,
}

/// Per-round cost constants by method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyConstants {
    pub slimfl_mw: f64,
    pub vanilla05_mw: f64,
    pub vanilla10_mw: f64,
    pub vanilla15_mw: f64,
    pub slimfl_mflops: f64,
    pub vanilla05_mflops: f64,
    pub vanilla10_mflops: f64,
    pub vanilla15_mflops: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        EnergyConstants {
            slimfl_mw: 125.0,
            vanilla05_mw: 125.0,
            vanilla10_mw: 125.0,
            vanilla15_mw: 250.0,
            slimfl_mflops: 3.56,
            vanilla05_mflops: 0.79,
            vanilla10_mflops: 2.76,
            vanilla15_mflops: 3.56,
        }
    }
}

/// One experiment cell of the reproduction grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub mode: TransmissionMode,
    pub channel: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub devices: usize,
    pub rounds: usize,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub mode: TransmissionMode,
    pub channel: String,
    /// Training samples used (0 = whole set).
    pub train_subset: usize,
    /// Held-out samples evaluated per round (0 = whole test set).
    pub eval_subset: usize,
    pub local_epochs: usize,
    pub out_dir: PathBuf,

    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub w1: f64,
    pub w2: f64,
    pub trainer: TrainerKind,
    pub optimizer: OptimizerKind,
    pub weighted_aggregation: bool,
    pub eval_after_downlink: bool,

    pub distance: f64,
    pub path_loss_exponent: f64,
    pub bandwidth_hz: f64,
    pub uplink_split_w: (f64, f64),
    pub downlink_split_w: (f64, f64),
    pub presets: Vec<PresetDef>,

    pub normalize_mean: Option<f32>,
    pub normalize_std: Option<f32>,

    pub bits_per_round_full: u64,
    pub bits_per_round_half: u64,
    pub energy: EnergyConstants,

    pub convergence_window: usize,
    pub convergence_std_ref: f64,
    pub convergence_mean_ref_fraction: f64,
    pub convergence_min_above_ref: bool,

    pub reproduce_cells: Vec<GridCell>,
}

fn default_presets() -> Vec<PresetDef> {
    vec![
        PresetDef {
            name: "good".into(),
            uplink: PresetSide::Calibrated {
                noise_psd_db: channel::GOOD_NOISE_PSD_DB,
                target_p1: channel::GOOD_TARGET_P1.0,
            },
            downlink: PresetSide::Calibrated {
                noise_psd_db: channel::GOOD_NOISE_PSD_DB,
                target_p1: channel::GOOD_TARGET_P1.1,
            },
        },
        PresetDef {
            name: "poor".into(),
            uplink: PresetSide::Calibrated {
                noise_psd_db: channel::POOR_NOISE_PSD_DB,
                target_p1: channel::POOR_TARGET_P1.0,
            },
            downlink: PresetSide::Calibrated {
                noise_psd_db: channel::POOR_NOISE_PSD_DB,
                target_p1: channel::POOR_TARGET_P1.1,
            },
        },
        PresetDef {
            name: "extremely-poor".into(),
            uplink: PresetSide::FromPair {
                p1: channel::EXTREMELY_POOR_PAIRS.0 .0,
                p2: channel::EXTREMELY_POOR_PAIRS.0 .1,
            },
            downlink: PresetSide::FromPair {
                p1: channel::EXTREMELY_POOR_PAIRS.1 .0,
                p2: channel::EXTREMELY_POOR_PAIRS.1 .1,
            },
        },
    ]
}

fn default_grid() -> Vec<GridCell> {
    let mut cells = Vec::new();
    for mode in [TransmissionMode::BothScSd, TransmissionMode::Vanilla05, TransmissionMode::Vanilla10] {
        for channel in ["good", "poor"] {
            for alpha in [0.1, 1.0, 10.0] {
                cells.push(GridCell { mode, channel: channel.into(), alpha });
            }
        }
    }
    cells
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetKind::FashionMnist,
            data_dir: None,
            devices: 10,
            rounds: 1000,
            alpha: 10.0,
            seeds: vec![1, 2, 3, 4, 5],
            mode: TransmissionMode::BothScSd,
            channel: "good".into(),
            train_subset: 0,
            eval_subset: 1000,
            local_epochs: 1,
            out_dir: PathBuf::from("runs"),

            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 32,
            w1: 0.5,
            w2: 0.5,
            trainer: TrainerKind::Superposition,
            optimizer: OptimizerKind::Adam,
            weighted_aggregation: false,
            eval_after_downlink: true,

            distance: channel::DISTANCE,
            path_loss_exponent: channel::PATH_LOSS_EXPONENT,
            bandwidth_hz: channel::BANDWIDTH_HZ,
            uplink_split_w: channel::UPLINK_SPLIT_W,
            downlink_split_w: channel::DOWNLINK_SPLIT_W,
            presets: default_presets(),

            normalize_mean: None,
            normalize_std: None,

            bits_per_round_full: 172_688,
            bits_per_round_half: 86_344,
            energy: EnergyConstants::default(),

            convergence_window: 100,
            convergence_std_ref: 7.2,
            convergence_mean_ref_fraction: 0.8,
            convergence_min_above_ref: false,

            reproduce_cells: default_grid(),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale overrides: the reduced grid sized for a laptop run while
    /// preserving the qualitative orderings of the full experiments.
    pub fn apply_desk_scale(&mut self) {
        self.devices = 10;
        self.rounds = 200;
        self.train_subset = 6000;
        self.eval_subset = 1000;
        self.seeds = vec![1, 2, 3];
        self.reproduce_cells = vec![
            GridCell { mode: TransmissionMode::BothScSd, channel: "good".into(), alpha: 10.0 },
            GridCell { mode: TransmissionMode::BothScSd, channel: "poor".into(), alpha: 0.1 },
            GridCell { mode: TransmissionMode::Vanilla05, channel: "poor".into(), alpha: 0.1 },
            GridCell { mode: TransmissionMode::Vanilla10, channel: "poor".into(), alpha: 0.1 },
        ];
    }

    pub fn normalization(&self) -> (f32, f32) {
        let (mean, std) = self.dataset.default_normalization();
        (self.normalize_mean.unwrap_or(mean), self.normalize_std.unwrap_or(std))
    }

    /// Resolve a preset name to calibrated per-direction links. The name
    /// `perfect` (always-decoding noiseless limit) is built in.
    pub fn resolve_preset(&self, name: &str) -> Result<ChannelPreset> {
        if name == "perfect" {
            return Ok(ChannelPreset::perfect());
        }
        let def = self
            .presets
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("unknown channel preset '{name}'")))?;
        let build_side = |side: &PresetSide, split: (f64, f64)| -> Result<channel::Link> {
            match *side {
                PresetSide::Calibrated { noise_psd_db, target_p1 } => channel::calibrated_link(
                    self.distance,
                    self.path_loss_exponent,
                    self.bandwidth_hz,
                    noise_psd_db,
                    split,
                    target_p1,
                ),
                PresetSide::FromPair { p1, p2 } => channel::pair_inverted_link(
                    self.distance,
                    self.path_loss_exponent,
                    self.bandwidth_hz,
                    split,
                    p1,
                    p2,
                ),
            }
        };
        Ok(ChannelPreset {
            name: def.name.clone(),
            uplink: build_side(&def.uplink, self.uplink_split_w)?,
            downlink: build_side(&def.downlink, self.downlink_split_w)?,
        })
    }

    pub fn ledger_for(&self, mode: TransmissionMode) -> EnergyLedger {
        let e = &self.energy;
        let (mw, mflops) = match mode {
            TransmissionMode::Vanilla05 => (e.vanilla05_mw, e.vanilla05_mflops),
            TransmissionMode::Vanilla10 => (e.vanilla10_mw, e.vanilla10_mflops),
            TransmissionMode::Vanilla15 => (e.vanilla15_mw, e.vanilla15_mflops),
            _ => (e.slimfl_mw, e.slimfl_mflops),
        };
        EnergyLedger { comm_mw_per_round: mw, compute_mflops_per_round: mflops }
    }

    /// Directory holding the IDX files: explicit config, then the
    /// `SLIMFL_DATA_DIR` environment variable, then `data/<dataset>`.
    pub fn resolved_data_dir(&self) -> PathBuf {
        if let Some(dir) = &self.data_dir {
            return dir.clone();
        }
        if let Ok(dir) = std::env::var("SLIMFL_DATA_DIR") {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        PathBuf::from("data").join(self.dataset.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 {
            return Err(Error::Config("devices must be >= 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config("alpha must be > 0".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        if self.batch_size == 0 || self.local_epochs == 0 {
            return Err(Error::Config("batch_size and local_epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) {
            return Err(Error::Config("w1 and w2 must be >= 0".into()));
        }
        if self.bits_per_round_full == 0 || self.bits_per_round_half == 0 {
            return Err(Error::Config("bits-per-round constants must be > 0".into()));
        }
        if self.convergence_window == 0 || !(self.convergence_std_ref > 0.0) {
            return Err(Error::Config("convergence window and std_ref must be positive".into()));
        }
        // Channel geometry and every referenced preset must resolve.
        self.resolve_preset(&self.channel)?;
        for cell in &self.reproduce_cells {
            self.resolve_preset(&cell.channel)?;
            if !(cell.alpha > 0.0) {
                return Err(Error::Config("grid alpha must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Canonical text form; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "dataset = {}", self.dataset.as_str());
        if let Some(dir) = &self.data_dir {
            let _ = writeln!(s, "data_dir = {}", dir.display());
        }
        let _ = writeln!(s, "devices = {}", self.devices);
        let _ = writeln!(s, "rounds = {}", self.rounds);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "mode = {}", self.mode.as_str());
        let _ = writeln!(s, "channel = {}", self.channel);
        let _ = writeln!(s, "train_subset = {}", self.train_subset);
        let _ = writeln!(s, "eval_subset = {}", self.eval_subset);
        let _ = writeln!(s, "local_epochs = {}", self.local_epochs);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());

        let _ = writeln!(s, "\n[training]");
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "adam_beta1 = {}", self.adam_beta1);
        let _ = writeln!(s, "adam_beta2 = {}", self.adam_beta2);
        let _ = writeln!(s, "adam_epsilon = {}", self.adam_epsilon);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "w1 = {}", self.w1);
        let _ = writeln!(s, "w2 = {}", self.w2);
        let trainer = match self.trainer {
            TrainerKind::Superposition => "superposition",
            TrainerKind::Ustrain => "ustrain",
        };
        let _ = writeln!(s, "trainer = {trainer}");
        let optimizer = match self.optimizer {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        };
        let _ = writeln!(s, "optimizer = {optimizer}");
        let _ = writeln!(s, "weighted_aggregation = {}", self.weighted_aggregation);
        let _ = writeln!(s, "eval_after_downlink = {}", self.eval_after_downlink);

        let _ = writeln!(s, "\n[channel]");
        let _ = writeln!(s, "distance = {}", self.distance);
        let _ = writeln!(s, "path_loss_exponent = {}", self.path_loss_exponent);
        let _ = writeln!(s, "bandwidth_hz = {}", self.bandwidth_hz);
        let _ = writeln!(s, "uplink_p1_w = {}", self.uplink_split_w.0);
        let _ = writeln!(s, "uplink_p2_w = {}", self.uplink_split_w.1);
        let _ = writeln!(s, "downlink_p1_w = {}", self.downlink_split_w.0);
        let _ = writeln!(s, "downlink_p2_w = {}", self.downlink_split_w.1);

        for preset in &self.presets {
            let _ = writeln!(s, "\n[preset.{}]", preset.name);
            let mut side = |label: &str, def: &PresetSide| match *def {
                PresetSide::Calibrated { noise_psd_db, target_p1 } => {
                    let _ = writeln!(s, "{label}_noise_psd_dbhz = {noise_psd_db}");
                    let _ = writeln!(s, "{label}_target_p1 = {target_p1}");
                }
                PresetSide::FromPair { p1, p2 } => {
                    let _ = writeln!(s, "{label}_p1 = {p1}");
                    let _ = writeln!(s, "{label}_p2 = {p2}");
                }
            };
            side("uplink", &preset.uplink);
            side("downlink", &preset.downlink);
        }

        let _ = writeln!(s, "\n[data]");
        if let Some(m) = self.normalize_mean {
            let _ = writeln!(s, "normalize_mean = {m}");
        }
        if let Some(d) = self.normalize_std {
            let _ = writeln!(s, "normalize_std = {d}");
        }
        let _ = writeln!(s, "bits_per_round_full = {}", self.bits_per_round_full);
        let _ = writeln!(s, "bits_per_round_half = {}", self.bits_per_round_half);

        let _ = writeln!(s, "\n[energy]");
        let e = &self.energy;
        let _ = writeln!(s, "slimfl_mw_per_round = {}", e.slimfl_mw);
        let _ = writeln!(s, "vanilla05_mw_per_round = {}", e.vanilla05_mw);
        let _ = writeln!(s, "vanilla10_mw_per_round = {}", e.vanilla10_mw);
        let _ = writeln!(s, "vanilla15_mw_per_round = {}", e.vanilla15_mw);
        let _ = writeln!(s, "slimfl_mflops_per_round = {}", e.slimfl_mflops);
        let _ = writeln!(s, "vanilla05_mflops_per_round = {}", e.vanilla05_mflops);
        let _ = writeln!(s, "vanilla10_mflops_per_round = {}", e.vanilla10_mflops);
        let _ = writeln!(s, "vanilla15_mflops_per_round = {}", e.vanilla15_mflops);

        let _ = writeln!(s, "\n[convergence]");
        let _ = writeln!(s, "window = {}", self.convergence_window);
        let _ = writeln!(s, "std_ref = {}", self.convergence_std_ref);
        let _ = writeln!(s, "mean_ref_fraction = {}", self.convergence_mean_ref_fraction);
        let _ = writeln!(s, "min_above_ref = {}", self.convergence_min_above_ref);

        let _ = writeln!(s, "\n[reproduce]");
        let cells: Vec<String> = self
            .reproduce_cells
            .iter()
            .map(|c| format!("{}:{}:{}", c.mode.as_str(), c.channel, c.alpha))
            .collect();
        let _ = writeln!(s, "cells = {}", cells.join(","));
        s
    }

    /// FNV-1a hash of the canonical serialization; identifies a run setup in
    /// manifests.
    pub fn content_hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.serialize().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

fn parse_bool(v: &str, key: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got '{v}'"))),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

/// Parse the sectioned key-value format. Empty input yields the defaults;
/// unknown sections or keys are errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut preset_sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut preset_order: Vec<String> = Vec::new();
    let mut section = String::from("experiment");
    let mut saw_preset_section = false;

    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            if let Some(preset) = section.strip_prefix("preset.") {
                if preset.is_empty() {
                    return Err(Error::Config(format!("line {}: empty preset name", lineno + 1)));
                }
                if !saw_preset_section {
                    // The first preset section replaces the built-in table.
                    cfg.presets.clear();
                    saw_preset_section = true;
                }
                if !preset_sections.contains_key(preset) {
                    preset_order.push(preset.to_string());
                    preset_sections.insert(preset.to_string(), BTreeMap::new());
                }
            } else if !matches!(
                section.as_str(),
                "experiment" | "training" | "channel" | "data" | "energy" | "convergence" | "reproduce"
            ) {
                return Err(Error::Config(format!("line {}: unknown section [{section}]", lineno + 1)));
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());

        if let Some(preset) = section.strip_prefix("preset.") {
            preset_sections
                .get_mut(preset)
                .expect("section registered above")
                .insert(key.to_string(), value.to_string());
            continue;
        }

        match (section.as_str(), key) {
            ("experiment", "dataset") => cfg.dataset = DatasetKind::parse(value)?,
            ("experiment", "data_dir") => {
                cfg.data_dir = if value.is_empty() { None } else { Some(PathBuf::from(value)) }
            }
            ("experiment", "devices") => cfg.devices = parse_num(value, key)?,
            ("experiment", "rounds") => cfg.rounds = parse_num(value, key)?,
            ("experiment", "alpha") => cfg.alpha = parse_num(value, key)?,
            ("experiment", "seeds") => {
                cfg.seeds = value
                    .split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(|t| parse_num(t.trim(), key))
                    .collect::<Result<_>>()?;
            }
            ("experiment", "mode") => cfg.mode = TransmissionMode::parse(value)?,
            ("experiment", "channel") => cfg.channel = value.to_string(),
            ("experiment", "train_subset") => cfg.train_subset = parse_num(value, key)?,
            ("experiment", "eval_subset") => cfg.eval_subset = parse_num(value, key)?,
            ("experiment", "local_epochs") => cfg.local_epochs = parse_num(value, key)?,
            ("experiment", "out_dir") => cfg.out_dir = PathBuf::from(value),

            ("training", "learning_rate") => cfg.learning_rate = parse_num(value, key)?,
            ("training", "adam_beta1") => cfg.adam_beta1 = parse_num(value, key)?,
            ("training", "adam_beta2") => cfg.adam_beta2 = parse_num(value, key)?,
            ("training", "adam_epsilon") => cfg.adam_epsilon = parse_num(value, key)?,
            ("training", "batch_size") => cfg.batch_size = parse_num(value, key)?,
            ("training", "w1") => cfg.w1 = parse_num(value, key)?,
            ("training", "w2") => cfg.w2 = parse_num(value, key)?,
            ("training", "trainer") => {
                cfg.trainer = match value {
                    "superposition" => TrainerKind::Superposition,
                    "ustrain" => TrainerKind::Ustrain,
                    _ => return Err(Error::Config(format!("unknown trainer '{value}'"))),
                }
            }
            ("training", "optimizer") => {
                cfg.optimizer = match value {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(Error::Config(format!("unknown optimizer '{value}'"))),
                }
            }
            ("training", "weighted_aggregation") => {
                cfg.weighted_aggregation = parse_bool(value, key)?
            }
            ("training", "eval_after_downlink") => {
                cfg.eval_after_downlink = parse_bool(value, key)?
            }

            ("channel", "distance") => cfg.distance = parse_num(value, key)?,
            ("channel", "path_loss_exponent") => cfg.path_loss_exponent = parse_num(value, key)?,
            ("channel", "bandwidth_hz") => cfg.bandwidth_hz = parse_num(value, key)?,
            ("channel", "uplink_p1_w") => cfg.uplink_split_w.0 = parse_num(value, key)?,
            ("channel", "uplink_p2_w") => cfg.uplink_split_w.1 = parse_num(value, key)?,
            ("channel", "downlink_p1_w") => cfg.downlink_split_w.0 = parse_num(value, key)?,
            ("channel", "downlink_p2_w") => cfg.downlink_split_w.1 = parse_num(value, key)?,

            ("data", "normalize_mean") => cfg.normalize_mean = Some(parse_num(value, key)?),
            ("data", "normalize_std") => cfg.normalize_std = Some(parse_num(value, key)?),
            ("data", "bits_per_round_full") => cfg.bits_per_round_full = parse_num(value, key)?,
            ("data", "bits_per_round_half") => cfg.bits_per_round_half = parse_num(value, key)?,

            ("energy", "slimfl_mw_per_round") => cfg.energy.slimfl_mw = parse_num(value, key)?,
            ("energy", "vanilla05_mw_per_round") => cfg.energy.vanilla05_mw = parse_num(value, key)?,
            ("energy", "vanilla10_mw_per_round") => cfg.energy.vanilla10_mw = parse_num(value, key)?,
            ("energy", "vanilla15_mw_per_round") => cfg.energy.vanilla15_mw = parse_num(value, key)?,
            ("energy", "slimfl_mflops_per_round") => cfg.energy.slimfl_mflops = parse_num(value, key)?,
            ("energy", "vanilla05_mflops_per_round") => {
                cfg.energy.vanilla05_mflops = parse_num(value, key)?
            }
            ("energy", "vanilla10_mflops_per_round") => {
                cfg.energy.vanilla10_mflops = parse_num(value, key)?
            }
            ("energy", "vanilla15_mflops_per_round") => {
                cfg.energy.vanilla15_mflops = parse_num(value, key)?
            }

            ("convergence", "window") => cfg.convergence_window = parse_num(value, key)?,
            ("convergence", "std_ref") => cfg.convergence_std_ref = parse_num(value, key)?,
            ("convergence", "mean_ref_fraction") => {
                cfg.convergence_mean_ref_fraction = parse_num(value, key)?
            }
            ("convergence", "min_above_ref") => {
                cfg.convergence_min_above_ref = parse_bool(value, key)?
            }

            ("reproduce", "cells") => {
                cfg.reproduce_cells = value
                    .split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(|t| {
                        let parts: Vec<&str> = t.trim().split(':').collect();
                        if parts.len() != 3 {
                            return Err(Error::Config(format!(
                                "cells: expected mode:channel:alpha, got '{t}'"
                            )));
                        }
                        Ok(GridCell {
                            mode: TransmissionMode::parse(parts[0])?,
                            channel: parts[1].to_string(),
                            alpha: parse_num(parts[2], "cells alpha")?,
                        })
                    })
                    .collect::<Result<_>>()?;
            }

            (section, key) => {
                return Err(Error::Config(format!("unknown key '{key}' in section [{section}]")));
            }
        }
    }

    for name in preset_order {
        let keys = &preset_sections[&name];
        for k in keys.keys() {
            if !matches!(
                k.as_str(),
                "uplink_noise_psd_dbhz"
                    | "downlink_noise_psd_dbhz"
                    | "noise_psd_dbhz"
                    | "uplink_target_p1"
                    | "downlink_target_p1"
                    | "uplink_p1"
                    | "uplink_p2"
                    | "downlink_p1"
                    | "downlink_p2"
            ) {
                return Err(Error::Config(format!("unknown key '{k}' in [preset.{name}]")));
            }
        }
        let get = |k: &str| -> Option<&String> { keys.get(k) };
        let side = |prefix: &str| -> Result<PresetSide> {
            let p1 = get(&format!("{prefix}_p1"));
            let p2 = get(&format!("{prefix}_p2"));
            if let (Some(p1), Some(p2)) = (p1, p2) {
                return Ok(PresetSide::FromPair {
                    p1: parse_num(p1, "p1")?,
                    p2: parse_num(p2, "p2")?,
                });
            }
            let psd = get(&format!("{prefix}_noise_psd_dbhz")).or_else(|| get("noise_psd_dbhz"));
            let target = get(&format!("{prefix}_target_p1"));
            match (psd, target) {
                (Some(psd), Some(target)) => Ok(PresetSide::Calibrated {
                    noise_psd_db: parse_num(psd, "noise_psd_dbhz")?,
                    target_p1: parse_num(target, "target_p1")?,
                }),
                _ => Err(Error::Config(format!(
                    "[preset.{name}]: {prefix} needs either p1/p2 or noise psd + target_p1"
                ))),
            }
        };
        cfg.presets.push(PresetDef { name: name.clone(), uplink: side("uplink")?, downlink: side("downlink")? });
    }

    cfg.validate()?;
    Ok(cfg)
}
