//! The federated round loop and every transmission baseline.
//!
//! One round runs `local train -> uplink -> aggregate -> downlink -> evaluate`
//! across all devices. SC/SD links carry the model as two superposed segment
//! messages; vanilla links carry one fixed-width model per transmission at the
//! full power budget. All randomness is drawn from streams keyed by
//! `(seed, purpose, device, round)`, so trajectories are independent of
//! evaluation order and the 1.5x baseline is exactly the pair of its 0.5x and
//! 1.0x runs.

use crate::channel::{DecodeLevel, Link};
use crate::config::{ExperimentConfig, OptimizerKind, TrainerKind};
use crate::data::{dirichlet_partition_labels, load_idx, standardize, Dataset, Shard, Split, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::nn::{AdamHyper, AdamState, Scalar, Tensor, Width};
use crate::rng::{stream, StreamKind};
use crate::slim::{
    half_specs, plain_train_step, split_segments, superposition_train_step, ul_mobilenet_specs,
    ustrain_step, write_segment, Segment, SegmentTag, SlimModel, UpdateRule,
};
use rand::seq::SliceRandom;
use rand::Rng;

const EVAL_BATCH: usize = 250;

/// Stream tags separating the orthogonal channels of the vanilla sub-models.
const TAG_SLIM: u64 = 0;
const TAG_VANILLA_HALF: u64 = 5;
const TAG_VANILLA_FULL: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransmissionMode {
    /// SC/SD on both directions (the proposed scheme).
    BothScSd,
    /// SC/SD uplink, single full-model downlink.
    UplinkScSdDown10,
    /// SC/SD uplink, single half-model downlink.
    UplinkScSdDown05,
    /// Single full-model uplink, SC/SD downlink.
    Uplink10DownScSd,
    /// Fixed 0.5x federated averaging.
    Vanilla05,
    /// Fixed 1.0x federated averaging.
    Vanilla10,
    /// The 0.5x and 1.0x runs side by side on doubled resources.
    Vanilla15,
}

impl TransmissionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransmissionMode::BothScSd => "both-sc-sd",
            TransmissionMode::UplinkScSdDown10 => "up-scsd-down-10",
            TransmissionMode::UplinkScSdDown05 => "up-scsd-down-05",
            TransmissionMode::Uplink10DownScSd => "up-10-down-scsd",
            TransmissionMode::Vanilla05 => "vanilla-0.5",
            TransmissionMode::Vanilla10 => "vanilla-1.0",
            TransmissionMode::Vanilla15 => "vanilla-1.5",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "both-sc-sd" => TransmissionMode::BothScSd,
            "up-scsd-down-10" => TransmissionMode::UplinkScSdDown10,
            "up-scsd-down-05" => TransmissionMode::UplinkScSdDown05,
            "up-10-down-scsd" => TransmissionMode::Uplink10DownScSd,
            "vanilla-0.5" => TransmissionMode::Vanilla05,
            "vanilla-1.0" => TransmissionMode::Vanilla10,
            "vanilla-1.5" => TransmissionMode::Vanilla15,
            other => return Err(Error::Config(format!("unknown transmission mode '{other}'"))),
        })
    }

    pub fn all() -> [TransmissionMode; 7] {
        [
            TransmissionMode::BothScSd,
            TransmissionMode::UplinkScSdDown10,
            TransmissionMode::UplinkScSdDown05,
            TransmissionMode::Uplink10DownScSd,
            TransmissionMode::Vanilla05,
            TransmissionMode::Vanilla10,
            TransmissionMode::Vanilla15,
        ]
    }
}

/// How one direction carries the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkStyle {
    /// Two superposed segment messages with successive decoding.
    ScSd,
    /// One full-payload message at the total power budget.
    SingleFull,
    /// One half-payload (LH only) message at the total power budget.
    SingleHalf,
}

fn slim_styles(mode: TransmissionMode) -> Option<(LinkStyle, LinkStyle)> {
    match mode {
        TransmissionMode::BothScSd => Some((LinkStyle::ScSd, LinkStyle::ScSd)),
        TransmissionMode::UplinkScSdDown10 => Some((LinkStyle::ScSd, LinkStyle::SingleFull)),
        TransmissionMode::UplinkScSdDown05 => Some((LinkStyle::ScSd, LinkStyle::SingleHalf)),
        TransmissionMode::Uplink10DownScSd => Some((LinkStyle::SingleFull, LinkStyle::ScSd)),
        _ => None,
    }
}

/// One participating device. Randomness is not stored here: every draw comes
/// from a stream keyed by (run seed, device id, round), which keeps devices
/// independent and schedules irrelevant.
pub struct DeviceState<T> {
    pub id: usize,
    pub model: SlimModel<T>,
    pub adam: AdamState<T>,
    pub shard: Shard,
}

pub struct ServerState<T> {
    pub global: SlimModel<T>,
    pub round: usize,
}

/// Per-round log row; the CSV schema of every run artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub mode: TransmissionMode,
    pub alpha: f64,
    pub seed: u64,
    pub acc_half: Option<f64>,
    pub acc_full: Option<f64>,
    pub loss_half: Option<f64>,
    pub loss_full: Option<f64>,
    pub lh_contributors: usize,
    pub rh_contributors: usize,
    pub bits_decoded_up: f64,
    pub bits_dropped_up: f64,
    pub bits_decoded_dn: f64,
    pub bits_dropped_dn: f64,
    pub comm_mw: f64,
    pub mflops: f64,
}

pub const CSV_HEADER: &str = "round,mode,alpha,seed,acc_0.5x,acc_1.0x,loss_0.5x,loss_1.0x,n_lh_contrib,n_rh_contrib,bits_decoded_up,bits_dropped_up,bits_decoded_dn,bits_dropped_dn,comm_mW,flops";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RoundRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.round,
            self.mode.as_str(),
            self.alpha,
            self.seed,
            opt(self.acc_half),
            opt(self.acc_full),
            opt(self.loss_half),
            opt(self.loss_full),
            self.lh_contributors,
            self.rh_contributors,
            self.bits_decoded_up,
            self.bits_dropped_up,
            self.bits_decoded_dn,
            self.bits_dropped_dn,
            self.comm_mw,
            self.mflops,
        )
    }
}

pub fn records_to_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

fn batch_tensor<T: Scalar>(ds: &Dataset, indices: &[usize]) -> (Tensor<T>, Vec<u8>) {
    let px = IMAGE_SIDE * IMAGE_SIDE;
    let mut data = Vec::with_capacity(indices.len() * px);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend(ds.image(i).iter().map(|&v| T::from_f64(v as f64)));
        labels.push(ds.labels[i]);
    }
    (Tensor::new(vec![indices.len(), IMAGE_SIDE, IMAGE_SIDE, 1], data), labels)
}

#[derive(Debug, Clone, Copy)]
enum LocalStep {
    Superposition { w1: f64, w2: f64 },
    Ustrain,
    Plain,
}

/// One local training pass: `local_epochs` shuffled sweeps over the device
/// shard. Returns the mean `(loss_0.5x, loss_1.0x)` over batches (the plain
/// trainer reports its single loss in both slots). Empty shards are a no-op.
fn local_train<T: Scalar>(
    device: &mut DeviceState<T>,
    train: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    round: usize,
    step: LocalStep,
) -> Result<(f64, f64)> {
    if device.shard.indices.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut order = device.shard.indices.clone();
    let mut shuffle_rng = stream(
        seed,
        StreamKind::Shuffle { device: device.id as u64, round: round as u64 },
    );
    let mut sums = (0.0, 0.0);
    let mut batches = 0usize;
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (images, labels) = batch_tensor::<T>(train, chunk);
            let rule = match cfg.optimizer {
                OptimizerKind::Adam => UpdateRule::Adam(&mut device.adam),
                OptimizerKind::Sgd => UpdateRule::Sgd(cfg.learning_rate),
            };
            let (l_half, l_full) = match step {
                LocalStep::Superposition { w1, w2 } => {
                    superposition_train_step(&mut device.model, &images, &labels, w1, w2, rule)?
                }
                LocalStep::Ustrain => {
                    let (l10, l05) = ustrain_step(&mut device.model, &images, &labels, rule)?;
                    (l05, l10)
                }
                LocalStep::Plain => {
                    let l = plain_train_step(&mut device.model, &images, &labels, rule)?;
                    (l, l)
                }
            };
            sums.0 += l_half;
            sums.1 += l_full;
            batches += 1;
        }
    }
    let n = batches.max(1) as f64;
    Ok((sums.0 / n, sums.1 / n))
}

/// Sample the decode outcome of one transmission under the link style.
pub fn sample_link<R: Rng + ?Sized>(
    style: LinkStyle,
    link: &Link,
    rng: &mut R,
) -> Result<DecodeLevel> {
    Ok(match style {
        LinkStyle::ScSd => link.sample(rng)?,
        LinkStyle::SingleFull => {
            if link.sample_single(rng, true) {
                DecodeLevel::Full
            } else {
                DecodeLevel::None
            }
        }
        LinkStyle::SingleHalf => {
            if link.sample_single(rng, false) {
                DecodeLevel::Half
            } else {
                DecodeLevel::None
            }
        }
    })
}

/// Payload bits offered by one transmission under the link style.
fn offered_bits(style: LinkStyle, cfg: &ExperimentConfig) -> f64 {
    match style {
        LinkStyle::SingleHalf => cfg.bits_per_round_half as f64,
        _ => cfg.bits_per_round_full as f64,
    }
}

/// Decoded/dropped split of one transmission outcome.
fn account(style: LinkStyle, level: DecodeLevel, cfg: &ExperimentConfig) -> (f64, f64) {
    let offered = offered_bits(style, cfg);
    let half = cfg.bits_per_round_half as f64;
    match level {
        DecodeLevel::Full => (offered, 0.0),
        DecodeLevel::Half => (half.min(offered), offered - half.min(offered)),
        DecodeLevel::None => (0.0, offered),
    }
}

/// Segment-wise federated averaging. Segments with no contributors carry the
/// previous global values over unchanged. Weights are per-contribution
/// (uniform by default, shard sizes when data-weighted aggregation is on).
pub fn aggregate_segments<T: Scalar>(
    global: &mut SlimModel<T>,
    lh_contribs: &[(Segment<T>, f64)],
    rh_contribs: &[(Segment<T>, f64)],
) -> Result<()> {
    for (contribs, tag) in [(lh_contribs, SegmentTag::Lh), (rh_contribs, SegmentTag::Rh)] {
        if contribs.is_empty() {
            continue;
        }
        let len = contribs[0].0.values.len();
        let mut acc = vec![T::zero(); len];
        let mut weight_sum = T::zero();
        for (seg, w) in contribs {
            debug_assert_eq!(seg.tag, tag);
            debug_assert_eq!(seg.values.len(), len);
            let w = T::from_f64(*w);
            weight_sum += w;
            for (a, &v) in acc.iter_mut().zip(&seg.values) {
                *a += w * v;
            }
        }
        for a in acc.iter_mut() {
            *a = *a / weight_sum;
        }
        write_segment(global, &Segment { tag, values: acc })?;
    }
    Ok(())
}

/// Apply one downlink outcome at the device: a full decode replaces the whole
/// local model, a half decode replaces only the LH segment, and a miss leaves
/// the local model untouched.
pub fn apply_downlink<T: Scalar>(
    device_model: &mut SlimModel<T>,
    global: &SlimModel<T>,
    level: DecodeLevel,
) -> Result<()> {
    match level {
        DecodeLevel::Full => {
            device_model.params = global.params.clone();
            Ok(())
        }
        DecodeLevel::Half => {
            let (lh, _) = split_segments(global);
            write_segment(device_model, &lh)
        }
        DecodeLevel::None => Ok(()),
    }
}

fn eval_indices(cfg: &ExperimentConfig, test: &Dataset) -> Vec<usize> {
    let n = if cfg.eval_subset == 0 { test.len() } else { cfg.eval_subset.min(test.len()) };
    (0..n).collect()
}

fn adam_hyper(cfg: &ExperimentConfig) -> AdamHyper {
    AdamHyper {
        learning_rate: cfg.learning_rate,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        epsilon: cfg.adam_epsilon,
    }
}

fn run_slim<T: Scalar>(
    cfg: &ExperimentConfig,
    seed: u64,
    train: &Dataset,
    test: &Dataset,
    mode: TransmissionMode,
) -> Result<Vec<RoundRecord>> {
    let (up_style, down_style) = slim_styles(mode).expect("slim-family mode");
    let preset = cfg.resolve_preset(&cfg.channel)?;
    let shards = dirichlet_partition_labels(&train.labels, cfg.devices, cfg.alpha, seed)?;
    let global = SlimModel::<T>::build(
        ul_mobilenet_specs(),
        &mut stream(seed, StreamKind::ModelInit { width_tag: TAG_SLIM }),
    )?;
    let hyper = adam_hyper(cfg);
    let mut devices: Vec<DeviceState<T>> = shards
        .into_iter()
        .map(|shard| DeviceState {
            id: shard.device,
            model: global.clone(),
            adam: AdamState::new(&global.params, hyper),
            shard,
        })
        .collect();
    let mut server = ServerState { global, round: 0 };
    let eval_idx = eval_indices(cfg, test);
    let ledger = cfg.ledger_for(mode);
    let step = match cfg.trainer {
        TrainerKind::Superposition => LocalStep::Superposition { w1: cfg.w1, w2: cfg.w2 },
        TrainerKind::Ustrain => LocalStep::Ustrain,
    };

    let mut records = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        for device in devices.iter_mut() {
            local_train(device, train, cfg, seed, round, step)?;
        }

        let mut lh_contribs: Vec<(Segment<T>, f64)> = Vec::new();
        let mut rh_contribs: Vec<(Segment<T>, f64)> = Vec::new();
        let (mut dec_up, mut drop_up) = (0.0, 0.0);
        for device in devices.iter() {
            let mut rng = stream(
                seed,
                StreamKind::Fading {
                    device: device.id as u64,
                    round: round as u64,
                    direction: 0,
                    width_tag: TAG_SLIM,
                },
            );
            let level = sample_link(up_style, &preset.uplink, &mut rng)?;
            let (dec, drop) = account(up_style, level, cfg);
            dec_up += dec;
            drop_up += drop;
            let weight = if cfg.weighted_aggregation {
                device.shard.indices.len() as f64
            } else {
                1.0
            };
            if weight == 0.0 {
                continue;
            }
            if level.decodes_half() {
                let (lh, rh) = split_segments(&device.model);
                lh_contribs.push((lh, weight));
                if level.decodes_full() {
                    rh_contribs.push((rh, weight));
                }
            }
        }
        let (lh_n, rh_n) = (lh_contribs.len(), rh_contribs.len());
        aggregate_segments(&mut server.global, &lh_contribs, &rh_contribs)?;
        server.round = round;

        let run_downlink = |devices: &mut Vec<DeviceState<T>>| -> Result<(f64, f64)> {
            let (mut dec_dn, mut drop_dn) = (0.0, 0.0);
            for device in devices.iter_mut() {
                let mut rng = stream(
                    seed,
                    StreamKind::Fading {
                        device: device.id as u64,
                        round: round as u64,
                        direction: 1,
                        width_tag: TAG_SLIM,
                    },
                );
                let level = sample_link(down_style, &preset.downlink, &mut rng)?;
                let (dec, drop) = account(down_style, level, cfg);
                dec_dn += dec;
                drop_dn += drop;
                apply_downlink(&mut device.model, &server.global, level)?;
            }
            Ok((dec_dn, drop_dn))
        };

        // The evaluation reads the aggregated global model either before or
        // after the downlink fan-out; both orderings see the same parameters.
        let (dec_dn, drop_dn, acc_half, loss_half, acc_full, loss_full);
        if cfg.eval_after_downlink {
            let bits = run_downlink(&mut devices)?;
            dec_dn = bits.0;
            drop_dn = bits.1;
            let (a, l) = evaluate(&server.global, test, &eval_idx, Width::Half, EVAL_BATCH);
            acc_half = a;
            loss_half = l;
            let (a, l) = evaluate(&server.global, test, &eval_idx, Width::Full, EVAL_BATCH);
            acc_full = a;
            loss_full = l;
        } else {
            let (a, l) = evaluate(&server.global, test, &eval_idx, Width::Half, EVAL_BATCH);
            acc_half = a;
            loss_half = l;
            let (a, l) = evaluate(&server.global, test, &eval_idx, Width::Full, EVAL_BATCH);
            acc_full = a;
            loss_full = l;
            let bits = run_downlink(&mut devices)?;
            dec_dn = bits.0;
            drop_dn = bits.1;
        }

        records.push(RoundRecord {
            round,
            mode,
            alpha: cfg.alpha,
            seed,
            acc_half: Some(acc_half),
            acc_full: Some(acc_full),
            loss_half: Some(loss_half),
            loss_full: Some(loss_full),
            lh_contributors: lh_n,
            rh_contributors: rh_n,
            bits_decoded_up: dec_up,
            bits_dropped_up: drop_up,
            bits_decoded_dn: dec_dn,
            bits_dropped_dn: drop_dn,
            comm_mw: ledger.comm_mw_per_round,
            mflops: ledger.compute_mflops_per_round,
        });
    }
    Ok(records)
}

fn run_vanilla<T: Scalar>(
    cfg: &ExperimentConfig,
    seed: u64,
    train: &Dataset,
    test: &Dataset,
    width: Width,
) -> Result<Vec<RoundRecord>> {
    let mode = if width == Width::Half {
        TransmissionMode::Vanilla05
    } else {
        TransmissionMode::Vanilla10
    };
    let preset = cfg.resolve_preset(&cfg.channel)?;
    let specs = match width {
        Width::Half => half_specs(&ul_mobilenet_specs()),
        Width::Full => ul_mobilenet_specs(),
    };
    let width_tag = if width == Width::Half { TAG_VANILLA_HALF } else { TAG_VANILLA_FULL };
    let full_payload = width == Width::Full;
    let global =
        SlimModel::<T>::build(specs, &mut stream(seed, StreamKind::ModelInit { width_tag }))?;
    let shards = dirichlet_partition_labels(&train.labels, cfg.devices, cfg.alpha, seed)?;
    let hyper = adam_hyper(cfg);
    let mut devices: Vec<DeviceState<T>> = shards
        .into_iter()
        .map(|shard| DeviceState {
            id: shard.device,
            model: global.clone(),
            adam: AdamState::new(&global.params, hyper),
            shard,
        })
        .collect();
    let mut server = ServerState { global, round: 0 };
    let eval_idx = eval_indices(cfg, test);
    let ledger = cfg.ledger_for(mode);
    let offered = if full_payload {
        cfg.bits_per_round_full as f64
    } else {
        cfg.bits_per_round_half as f64
    };

    let mut records = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        for device in devices.iter_mut() {
            local_train(device, train, cfg, seed, round, LocalStep::Plain)?;
        }

        let mut contribs: Vec<(&SlimModel<T>, f64)> = Vec::new();
        let (mut dec_up, mut drop_up) = (0.0, 0.0);
        for device in devices.iter() {
            let mut rng = stream(
                seed,
                StreamKind::Fading {
                    device: device.id as u64,
                    round: round as u64,
                    direction: 0,
                    width_tag,
                },
            );
            let ok = preset.uplink.sample_single(&mut rng, full_payload);
            if ok {
                dec_up += offered;
                let weight = if cfg.weighted_aggregation {
                    device.shard.indices.len() as f64
                } else {
                    1.0
                };
                if weight > 0.0 {
                    contribs.push((&device.model, weight));
                }
            } else {
                drop_up += offered;
            }
        }
        let n_contrib = contribs.len();
        if !contribs.is_empty() {
            let mut acc = server.global.params.zeros_like();
            let mut weight_sum = 0.0;
            for (model, w) in &contribs {
                weight_sum += w;
                acc.add_scaled(&model.params, T::from_f64(*w));
            }
            let inv = T::from_f64(1.0 / weight_sum);
            for t in acc.tensors.iter_mut() {
                for v in t.data.iter_mut() {
                    *v *= inv;
                }
            }
            server.global.params = acc;
        }
        server.round = round;

        let (mut dec_dn, mut drop_dn) = (0.0, 0.0);
        for device in devices.iter_mut() {
            let mut rng = stream(
                seed,
                StreamKind::Fading {
                    device: device.id as u64,
                    round: round as u64,
                    direction: 1,
                    width_tag,
                },
            );
            if preset.downlink.sample_single(&mut rng, full_payload) {
                dec_dn += offered;
                device.model.params = server.global.params.clone();
            } else {
                drop_dn += offered;
            }
        }

        // The vanilla model is a fixed-width network; evaluate it whole.
        let (acc, loss) = evaluate(&server.global, test, &eval_idx, Width::Full, EVAL_BATCH);
        let (acc_half, acc_full, loss_half, loss_full) = match width {
            Width::Half => (Some(acc), None, Some(loss), None),
            Width::Full => (None, Some(acc), None, Some(loss)),
        };
        records.push(RoundRecord {
            round,
            mode,
            alpha: cfg.alpha,
            seed,
            acc_half,
            acc_full,
            loss_half,
            loss_full,
            lh_contributors: n_contrib,
            rh_contributors: if full_payload { n_contrib } else { 0 },
            bits_decoded_up: dec_up,
            bits_dropped_up: drop_up,
            bits_decoded_dn: dec_dn,
            bits_dropped_dn: drop_dn,
            comm_mw: ledger.comm_mw_per_round,
            mflops: ledger.compute_mflops_per_round,
        });
    }
    Ok(records)
}

/// Run one experiment at the given seed over pre-standardized datasets.
/// Fully deterministic: the same inputs produce the same records.
pub fn run_experiment<T: Scalar>(
    cfg: &ExperimentConfig,
    seed: u64,
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<RoundRecord>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument("train and test sets must be nonempty".into()));
    }
    match cfg.mode {
        TransmissionMode::Vanilla05 => run_vanilla::<T>(cfg, seed, train, test, Width::Half),
        TransmissionMode::Vanilla10 => run_vanilla::<T>(cfg, seed, train, test, Width::Full),
        TransmissionMode::Vanilla15 => {
            // Defined as the two fixed-width runs side by side on doubled
            // resources; merge their trajectories round by round.
            let half = run_vanilla::<T>(cfg, seed, train, test, Width::Half)?;
            let full = run_vanilla::<T>(cfg, seed, train, test, Width::Full)?;
            let ledger = cfg.ledger_for(TransmissionMode::Vanilla15);
            Ok(half
                .into_iter()
                .zip(full)
                .map(|(h, f)| RoundRecord {
                    round: h.round,
                    mode: TransmissionMode::Vanilla15,
                    alpha: cfg.alpha,
                    seed,
                    acc_half: h.acc_half,
                    acc_full: f.acc_full,
                    loss_half: h.loss_half,
                    loss_full: f.loss_full,
                    lh_contributors: h.lh_contributors,
                    rh_contributors: f.rh_contributors,
                    bits_decoded_up: h.bits_decoded_up + f.bits_decoded_up,
                    bits_dropped_up: h.bits_dropped_up + f.bits_dropped_up,
                    bits_decoded_dn: h.bits_decoded_dn + f.bits_decoded_dn,
                    bits_dropped_dn: h.bits_dropped_dn + f.bits_dropped_dn,
                    comm_mw: ledger.comm_mw_per_round,
                    mflops: ledger.compute_mflops_per_round,
                })
                .collect())
        }
        mode => run_slim::<T>(cfg, seed, train, test, mode),
    }
}

/// Load, subset, and standardize the datasets named by the config.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let dir = cfg.resolved_data_dir();
    let find = |stem: &str| -> Result<std::path::PathBuf> {
        let plain = dir.join(stem);
        if plain.exists() {
            return Ok(plain);
        }
        let gz = dir.join(format!("{stem}.gz"));
        if gz.exists() {
            return Ok(gz);
        }
        Err(Error::Config(format!(
            "dataset file {stem}[.gz] not found under {}",
            dir.display()
        )))
    };
    let mut train = load_idx(
        &find("train-images-idx3-ubyte")?,
        &find("train-labels-idx1-ubyte")?,
        Split::Train,
    )?;
    let mut test = load_idx(
        &find("t10k-images-idx3-ubyte")?,
        &find("t10k-labels-idx1-ubyte")?,
        Split::Test,
    )?;
    train.truncate(cfg.train_subset);
    test.truncate(cfg.eval_subset);
    let (mean, std) = cfg.normalization();
    Ok((standardize(&train, mean, std)?, standardize(&test, mean, std)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slim::build_ul_mobilenet;

    fn synthetic_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = stream(seed, StreamKind::Other { tag: 40 });
        Dataset {
            images: (0..n * IMAGE_SIDE * IMAGE_SIDE).map(|_| rng.random_range(0.0..1.0)).collect(),
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
            split: Split::Train,
        }
    }

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.devices = 3;
        cfg.rounds = 2;
        cfg.alpha = 1.0;
        cfg.seeds = vec![1];
        cfg.batch_size = 8;
        cfg.eval_subset = 0;
        cfg
    }

    #[test]
    fn empty_shard_is_a_noop() {
        let cfg = tiny_config();
        let ds = synthetic_dataset(16, 1);
        let model = build_ul_mobilenet::<f64>(1);
        let mut device = DeviceState {
            id: 0,
            model: model.clone(),
            adam: AdamState::new(&model.params, Default::default()),
            shard: Shard { device: 0, indices: vec![] },
        };
        let losses = local_train(
            &mut device,
            &ds,
            &cfg,
            1,
            1,
            LocalStep::Superposition { w1: 0.5, w2: 0.5 },
        )
        .unwrap();
        assert_eq!(losses, (0.0, 0.0));
        assert_eq!(device.model.params, model.params);
    }

    #[test]
    fn zero_weights_leave_devices_unchanged() {
        let cfg = tiny_config();
        let ds = synthetic_dataset(30, 2);
        let model = build_ul_mobilenet::<f64>(2);
        let mut device = DeviceState {
            id: 0,
            model: model.clone(),
            adam: AdamState::new(&model.params, Default::default()),
            shard: Shard { device: 0, indices: (0..30).collect() },
        };
        local_train(&mut device, &ds, &cfg, 1, 1, LocalStep::Superposition { w1: 0.0, w2: 0.0 })
            .unwrap();
        assert_eq!(device.model.params, model.params);
    }

    #[test]
    fn loss_decreases_on_small_shard() {
        // 20 epochs over a 100-sample shard, averaged across 5 seeds.
        let mut first_half = 0.0;
        let mut last_half = 0.0;
        for seed in 0..5u64 {
            let ds = synthetic_dataset(100, 100 + seed);
            let model = build_ul_mobilenet::<f32>(seed);
            let mut cfg = tiny_config();
            cfg.batch_size = 32;
            let mut device = DeviceState {
                id: 0,
                model,
                adam: AdamState::new(&build_ul_mobilenet::<f32>(seed).params, Default::default()),
                shard: Shard { device: 0, indices: (0..100).collect() },
            };
            let mut first = None;
            let mut last = (0.0, 0.0);
            for round in 1..=20 {
                let l = local_train(
                    &mut device,
                    &ds,
                    &cfg,
                    seed,
                    round,
                    LocalStep::Superposition { w1: 0.5, w2: 0.5 },
                )
                .unwrap();
                if first.is_none() {
                    first = Some(l);
                }
                last = l;
            }
            first_half += first.unwrap().1;
            last_half += last.1;
        }
        assert!(
            last_half < first_half,
            "mean full-width loss did not decrease: {first_half} -> {last_half}"
        );
    }

    #[test]
    fn aggregation_mean_of_two_known_models() {
        let mut global = build_ul_mobilenet::<f64>(3);
        let mut a = global.clone();
        let mut b = global.clone();
        for t in a.params.tensors.iter_mut() {
            t.data.iter_mut().for_each(|v| *v = 2.0);
        }
        for t in b.params.tensors.iter_mut() {
            t.data.iter_mut().for_each(|v| *v = 4.0);
        }
        let (lh_a, rh_a) = split_segments(&a);
        let (lh_b, rh_b) = split_segments(&b);
        aggregate_segments(
            &mut global,
            &[(lh_a, 1.0), (lh_b, 1.0)],
            &[(rh_a, 1.0), (rh_b, 1.0)],
        )
        .unwrap();
        for t in global.params.tensors.iter() {
            assert!(t.data.iter().all(|&v| v == 3.0));
        }
    }

    #[test]
    fn aggregation_single_full_contributor_copies_model() {
        let mut global = build_ul_mobilenet::<f64>(4);
        let device = build_ul_mobilenet::<f64>(5);
        let (lh, rh) = split_segments(&device);
        aggregate_segments(&mut global, &[(lh, 1.0)], &[(rh, 1.0)]).unwrap();
        assert_eq!(global.params, device.params);
    }

    #[test]
    fn aggregation_preserves_uncontributed_segment() {
        let mut global = build_ul_mobilenet::<f64>(6);
        let before = global.clone();
        let device = build_ul_mobilenet::<f64>(7);
        let (lh, _) = split_segments(&device);
        aggregate_segments(&mut global, &[(lh, 1.0)], &[]).unwrap();
        let (_, rh_after) = split_segments(&global);
        let (_, rh_before) = split_segments(&before);
        assert_eq!(rh_after.values, rh_before.values, "RH must carry over");
        let (lh_after, _) = split_segments(&global);
        let (lh_dev, _) = split_segments(&device);
        assert_eq!(lh_after.values, lh_dev.values);
    }

    #[test]
    fn downlink_levels_apply_correctly() {
        let global = build_ul_mobilenet::<f64>(8);
        let local = build_ul_mobilenet::<f64>(9);
        let input = Tensor::new(
            vec![1, IMAGE_SIDE, IMAGE_SIDE, 1],
            (0..IMAGE_SIDE * IMAGE_SIDE).map(|i| (i as f64 * 0.01).sin()).collect(),
        );

        let mut m = local.clone();
        apply_downlink(&mut m, &global, DecodeLevel::None).unwrap();
        assert_eq!(m.params, local.params);

        let mut m = local.clone();
        apply_downlink(&mut m, &global, DecodeLevel::Half).unwrap();
        assert_eq!(m.logits(&input, Width::Half).data, global.logits(&input, Width::Half).data);
        let (_, rh_m) = split_segments(&m);
        let (_, rh_local) = split_segments(&local);
        assert_eq!(rh_m.values, rh_local.values, "local RH survives a half decode");

        let mut m = local.clone();
        apply_downlink(&mut m, &global, DecodeLevel::Full).unwrap();
        assert_eq!(m.params, global.params);
    }

    #[test]
    fn decode_hierarchy_holds_over_a_run() {
        let mut cfg = tiny_config();
        cfg.channel = "poor".into();
        cfg.rounds = 12;
        let train = synthetic_dataset(60, 10);
        let test = synthetic_dataset(40, 11);
        let records = run_experiment::<f32>(&cfg, 3, &train, &test).unwrap();
        assert_eq!(records.len(), 12);
        for r in &records {
            assert!(r.rh_contributors <= r.lh_contributors);
            let b = cfg.bits_per_round_full as f64 * cfg.devices as f64;
            assert!((r.bits_decoded_up + r.bits_dropped_up - b).abs() < 1e-9);
            assert!((r.bits_decoded_dn + r.bits_dropped_dn - b).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_csv() {
        let mut cfg = tiny_config();
        cfg.rounds = 3;
        let train = synthetic_dataset(60, 12);
        let test = synthetic_dataset(30, 13);
        let a = records_to_csv(&run_experiment::<f32>(&cfg, 7, &train, &test).unwrap());
        let b = records_to_csv(&run_experiment::<f32>(&cfg, 7, &train, &test).unwrap());
        assert_eq!(a, b);
        let c = records_to_csv(&run_experiment::<f32>(&cfg, 8, &train, &test).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn vanilla15_is_the_pair_of_its_parts() {
        let mut cfg = tiny_config();
        cfg.rounds = 4;
        cfg.channel = "poor".into();
        let train = synthetic_dataset(60, 14);
        let test = synthetic_dataset(30, 15);

        cfg.mode = TransmissionMode::Vanilla15;
        let merged = run_experiment::<f32>(&cfg, 5, &train, &test).unwrap();
        cfg.mode = TransmissionMode::Vanilla05;
        let half = run_experiment::<f32>(&cfg, 5, &train, &test).unwrap();
        cfg.mode = TransmissionMode::Vanilla10;
        let full = run_experiment::<f32>(&cfg, 5, &train, &test).unwrap();

        for ((m, h), f) in merged.iter().zip(&half).zip(&full) {
            assert_eq!(m.acc_half, h.acc_half);
            assert_eq!(m.loss_half, h.loss_half);
            assert_eq!(m.acc_full, f.acc_full);
            assert_eq!(m.loss_full, f.loss_full);
            assert_eq!(m.bits_decoded_up, h.bits_decoded_up + f.bits_decoded_up);
            assert_eq!(m.comm_mw, 250.0);
        }
    }

    #[test]
    fn single_device_perfect_channel_is_centralized_training() {
        let mut cfg = tiny_config();
        cfg.devices = 1;
        cfg.channel = "perfect".into();
        cfg.rounds = 3;
        let train = synthetic_dataset(40, 16);
        let test = synthetic_dataset(20, 17);
        let records = run_experiment::<f64>(&cfg, 9, &train, &test).unwrap();

        // Centralized reference: same init, same batches, no communication.
        let mut model = SlimModel::<f64>::build(
            ul_mobilenet_specs(),
            &mut stream(9, StreamKind::ModelInit { width_tag: TAG_SLIM }),
        )
        .unwrap();
        let mut adam = AdamState::new(&model.params, adam_hyper(&cfg));
        let shard: Vec<usize> = (0..train.len()).collect();
        for round in 1..=cfg.rounds {
            let mut order = shard.clone();
            let mut rng = stream(9, StreamKind::Shuffle { device: 0, round: round as u64 });
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let (images, labels) = batch_tensor::<f64>(&train, chunk);
                superposition_train_step(
                    &mut model,
                    &images,
                    &labels,
                    cfg.w1,
                    cfg.w2,
                    UpdateRule::Adam(&mut adam),
                )
                .unwrap();
            }
        }
        let eval_idx: Vec<usize> = (0..test.len()).collect();
        let (acc, _) = evaluate(&model, &test, &eval_idx, Width::Full, EVAL_BATCH);
        assert_eq!(records.last().unwrap().acc_full, Some(acc));
    }
}
