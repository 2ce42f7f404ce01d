//! Superposition-coding / successive-decoding link model.
//!
//! A transmitter encodes `K` messages into one signal, giving message `k` the
//! power `P_k` with `P_1 > P_2 > ...`. The receiver decodes message 1 first,
//! treating the rest as interference, cancels it, and proceeds down the list.
//! Under Rayleigh fading (`g ~ Exp(1)`) the probability that messages `1..=k`
//! all decode has a closed form: `p_k = exp(-max_{j<=k} c / (P_j/t' - I_j))`,
//! where `t' = 2^{t/W} - 1` for code rate `t` over bandwidth `W`,
//! `c = sigma^2 d^beta`, and `I_j` is the residual interference power.
//!
//! The SlimFL links use `K = 2`: message 1 carries the left-half (0.5x) model
//! segment, message 2 the right-half complement.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::Exp1;

/// Physical-layer configuration for one link direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Transmitter-receiver distance (unitless; the reference setup uses 1).
    pub distance: f64,
    /// Path loss exponent, >= 2.
    pub path_loss_exponent: f64,
    /// Bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Noise power in W. Zero models the noiseless limit in which every
    /// message decodes with probability 1.
    pub noise_power_w: f64,
    /// Code rate `t` in bit/s.
    pub code_rate: f64,
}

impl ChannelParams {
    /// Build from a noise power spectral density in dB/Hz:
    /// `sigma^2 = 10^(psd/10) * W`.
    pub fn from_noise_psd(
        distance: f64,
        path_loss_exponent: f64,
        bandwidth_hz: f64,
        noise_psd_db_per_hz: f64,
        code_rate: f64,
    ) -> Self {
        ChannelParams {
            distance,
            path_loss_exponent,
            bandwidth_hz,
            noise_power_w: 10f64.powf(noise_psd_db_per_hz / 10.0) * bandwidth_hz,
            code_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance > 0.0) {
            return Err(Error::InvalidArgument("distance must be > 0".into()));
        }
        if !(self.path_loss_exponent >= 2.0) {
            return Err(Error::InvalidArgument("path loss exponent must be >= 2".into()));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidArgument("bandwidth must be > 0".into()));
        }
        if !(self.noise_power_w >= 0.0) {
            return Err(Error::InvalidArgument("noise power must be >= 0".into()));
        }
        if !(self.code_rate > 0.0) {
            return Err(Error::InvalidArgument("code rate must be > 0".into()));
        }
        Ok(())
    }

    /// SINR threshold `t' = 2^{t/W} - 1` implied by the code rate.
    pub fn rate_threshold(&self) -> f64 {
        (self.code_rate / self.bandwidth_hz).exp2() - 1.0
    }

    /// Noise attenuated back to the transmitter: `c = sigma^2 d^beta`.
    pub fn attenuated_noise(&self) -> f64 {
        self.noise_power_w * self.distance.powf(self.path_loss_exponent)
    }

    pub fn with_code_rate(&self, code_rate: f64) -> Self {
        ChannelParams { code_rate, ..self.clone() }
    }
}

/// Per-message transmission powers in W, strictly decreasing in the message
/// index so that successive decoding is well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    per_message_w: Vec<f64>,
}

impl PowerAllocation {
    pub fn new(per_message_w: Vec<f64>) -> Result<Self> {
        if per_message_w.is_empty() {
            return Err(Error::InvalidArgument("power allocation must be nonempty".into()));
        }
        for window in per_message_w.windows(2) {
            if !(window[0] > window[1]) {
                return Err(Error::InvalidArgument(
                    "per-message powers must be strictly decreasing".into(),
                ));
            }
        }
        if !per_message_w.iter().all(|&p| p > 0.0) {
            return Err(Error::InvalidArgument("per-message powers must be positive".into()));
        }
        Ok(PowerAllocation { per_message_w })
    }

    /// The usual two-message split.
    pub fn two(p1_w: f64, p2_w: f64) -> Result<Self> {
        PowerAllocation::new(vec![p1_w, p2_w])
    }

    pub fn message_count(&self) -> usize {
        self.per_message_w.len()
    }

    /// Power of message `k` (1-based).
    pub fn message_power_w(&self, k: usize) -> Result<f64> {
        self.per_message_w
            .get(k.checked_sub(1).ok_or_else(|| {
                Error::InvalidArgument("message index is 1-based".into())
            })?)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("message index {k} out of range")))
    }

    /// Total budget `P^T`.
    pub fn total_w(&self) -> f64 {
        self.per_message_w.iter().sum()
    }
}

/// Outcome of one successive-decoding attempt over a two-message link.
/// Decoding is prefix-monotone: `Full` implies the `Half` condition held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeLevel {
    None,
    Half,
    Full,
}

impl DecodeLevel {
    /// The first message (0.5x segment) was decoded.
    pub fn decodes_half(self) -> bool {
        self != DecodeLevel::None
    }

    /// Both messages (the full model) were decoded.
    pub fn decodes_full(self) -> bool {
        self == DecodeLevel::Full
    }
}

/// One small-scale fading power gain, `g >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingDraw(pub f64);

/// Draw `g ~ Exp(1)` (Rayleigh fading power gain).
pub fn sample_fading<R: Rng + ?Sized>(rng: &mut R) -> FadingDraw {
    FadingDraw(rng.sample::<f64, _>(Exp1))
}

/// Residual interference seen while decoding message `k`: the total power of
/// the not-yet-cancelled messages `k+1..=K`.
pub fn residual_interference(alloc: &PowerAllocation, k: usize) -> Result<f64> {
    if k == 0 || k > alloc.message_count() {
        return Err(Error::InvalidArgument(format!(
            "message index {k} out of range 1..={}",
            alloc.message_count()
        )));
    }
    Ok(alloc.per_message_w[k..].iter().sum())
}

/// Shannon throughput `R = W log2(1 + g d^-beta P_T / (sigma^2 + P_I))`.
pub fn throughput(g: f64, p_t_w: f64, p_i_w: f64, params: &ChannelParams) -> f64 {
    let gamma = g * params.distance.powf(-params.path_loss_exponent) * p_t_w
        / (params.noise_power_w + p_i_w);
    params.bandwidth_hz * (1.0 + gamma).log2()
}

/// Fading-gain threshold above which message `k` decodes:
/// `c / (P_k/t' - I_k)`. Errors when the denominator is not positive, i.e.
/// the split cannot carry message `k` at this code rate no matter the gain.
pub fn decode_threshold(params: &ChannelParams, alloc: &PowerAllocation, k: usize) -> Result<f64> {
    let t_prime = params.rate_threshold();
    let p_k = alloc.message_power_w(k)?;
    let interference = residual_interference(alloc, k)?;
    let denom = p_k / t_prime - interference;
    if denom <= 0.0 {
        return Err(Error::InfeasibleAllocation { k, code_rate: params.code_rate });
    }
    Ok(params.attenuated_noise() / denom)
}

/// Joint decode-success probability of messages `1..=k` under `g ~ Exp(1)`:
/// `p_k = exp(-max_{j<=k} threshold_j)`.
pub fn decode_success_prob(
    params: &ChannelParams,
    alloc: &PowerAllocation,
    k: usize,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for j in 1..=k {
        worst = worst.max(decode_threshold(params, alloc, j)?);
    }
    Ok((-worst).exp())
}

/// Decode probability of a lone message at power `p_t_w` (no interference):
/// `exp(-c t' / P_T)`. This is the vanilla-FL transmission model.
pub fn single_message_decode_prob(params: &ChannelParams, p_t_w: f64) -> Result<f64> {
    if !(p_t_w > 0.0) {
        return Err(Error::InvalidArgument("transmission power must be > 0".into()));
    }
    Ok((-params.attenuated_noise() * params.rate_threshold() / p_t_w).exp())
}

/// Classify one fading draw for a two-message link.
pub fn sample_decode_level(
    g: FadingDraw,
    params: &ChannelParams,
    alloc: &PowerAllocation,
) -> Result<DecodeLevel> {
    if alloc.message_count() != 2 {
        return Err(Error::InvalidArgument("decode levels are defined for K = 2".into()));
    }
    let th1 = decode_threshold(params, alloc, 1)?;
    let th2 = decode_threshold(params, alloc, 2)?;
    Ok(if g.0 >= th1.max(th2) {
        DecodeLevel::Full
    } else if g.0 >= th1 {
        DecodeLevel::Half
    } else {
        DecodeLevel::None
    })
}

/// Monte Carlo estimate of `p_1..p_K` with binomial standard errors.
pub fn monte_carlo_decode_prob<R: Rng + ?Sized>(
    params: &ChannelParams,
    alloc: &PowerAllocation,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    let k_max = alloc.message_count();
    let mut thresholds = Vec::with_capacity(k_max);
    let mut worst: f64 = 0.0;
    for k in 1..=k_max {
        worst = worst.max(decode_threshold(params, alloc, k)?);
        thresholds.push(worst);
    }
    let mut hits = vec![0u64; k_max];
    for _ in 0..draws {
        let g = sample_fading(rng).0;
        for (k, &th) in thresholds.iter().enumerate() {
            if g >= th {
                hits[k] += 1;
            }
        }
    }
    Ok(hits
        .iter()
        .map(|&h| {
            let p = h as f64 / draws as f64;
            (p, (p * (1.0 - p) / draws as f64).sqrt())
        })
        .collect())
}

/// Back-solve the code rate `t` such that `p_1` equals `target_p1`.
///
/// `p_1` is strictly decreasing in `t`, so a bisection over the feasible
/// bracket `(0, W log2(1 + P_1 / I_1))` converges unconditionally. The
/// returned rate satisfies `|p_1(t) - target| < 1e-6`.
pub fn calibrate_code_rate(
    params: &ChannelParams,
    alloc: &PowerAllocation,
    target_p1: f64,
) -> Result<f64> {
    if !(target_p1 > 0.0 && target_p1 < 1.0) {
        return Err(Error::Calibration(format!(
            "target p1 must lie in (0, 1), got {target_p1}"
        )));
    }
    let p1 = alloc.message_power_w(1)?;
    let interference = residual_interference(alloc, 1)?;
    let mut lo = 0.0;
    let mut hi = if interference > 0.0 {
        params.bandwidth_hz * (1.0 + p1 / interference).log2()
    } else {
        // No interference: p1 = exp(-c t'/P1) inverts in closed form.
        let c = params.attenuated_noise();
        if c == 0.0 {
            return Err(Error::Calibration("noiseless link always decodes; no finite rate".into()));
        }
        let t_prime = -target_p1.ln() * p1 / c;
        return Ok(params.bandwidth_hz * (1.0 + t_prime).log2());
    };
    let p_at = |t: f64| -> Result<f64> {
        decode_success_prob(&params.with_code_rate(t), alloc, 1)
    };
    // The open upper end of the bracket has p1 -> 0, the lower end p1 -> 1.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p = p_at(mid)?;
        if (p - target_p1).abs() < 1e-9 {
            return Ok(mid);
        }
        if p > target_p1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let achieved = p_at(t)?;
    if (achieved - target_p1).abs() < 1e-6 {
        Ok(t)
    } else {
        Err(Error::Calibration(format!(
            "no rate in bracket reaches p1 = {target_p1} (best {achieved})"
        )))
    }
}

/// One direction of a preset: channel parameters plus the power split.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub params: ChannelParams,
    pub alloc: PowerAllocation,
}

impl Link {
    /// Closed-form `(p_1, p_2)` for the two-message split.
    pub fn decode_probs(&self) -> Result<(f64, f64)> {
        Ok((
            decode_success_prob(&self.params, &self.alloc, 1)?,
            decode_success_prob(&self.params, &self.alloc, 2)?,
        ))
    }

    /// Probability of decoding a lone half-payload message (rate `t`) sent at
    /// the full power budget. Matches the vanilla 0.5x transmission.
    pub fn single_half_prob(&self) -> Result<f64> {
        single_message_decode_prob(&self.params, self.alloc.total_w())
    }

    /// Probability of decoding a lone full-payload message (rate `2t`) sent at
    /// the full power budget. Matches the vanilla 1.0x transmission.
    pub fn single_full_prob(&self) -> Result<f64> {
        single_message_decode_prob(
            &self.params.with_code_rate(2.0 * self.params.code_rate),
            self.alloc.total_w(),
        )
    }

    /// Draw a fading gain and classify the SC/SD outcome.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DecodeLevel> {
        sample_decode_level(sample_fading(rng), &self.params, &self.alloc)
    }

    /// Draw a fading gain and test a lone message at the full power budget:
    /// the vanilla transmission. `full_payload` selects the rate-2t (whole
    /// model) versus rate-t (half model) encoding.
    pub fn sample_single<R: Rng + ?Sized>(&self, rng: &mut R, full_payload: bool) -> bool {
        let params = if full_payload {
            self.params.with_code_rate(2.0 * self.params.code_rate)
        } else {
            self.params.clone()
        };
        let threshold = params.attenuated_noise() * params.rate_threshold() / self.alloc.total_w();
        sample_fading(rng).0 >= threshold
    }
}

/// A named operating point: per-direction channel parameters with calibrated
/// code rates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPreset {
    pub name: String,
    pub uplink: Link,
    pub downlink: Link,
}

/// Reference geometry shared by every preset.
pub const DISTANCE: f64 = 1.0;
pub const PATH_LOSS_EXPONENT: f64 = 2.5;
pub const BANDWIDTH_HZ: f64 = 1.15e5;

/// Table power splits in W: uplink (20 mW, 5 mW), downlink (80 mW, 20 mW).
pub const UPLINK_SPLIT_W: (f64, f64) = (0.020, 0.005);
pub const DOWNLINK_SPLIT_W: (f64, f64) = (0.080, 0.020);

/// Published `p_1` operating points the preset code rates are calibrated to.
pub const GOOD_TARGET_P1: (f64, f64) = (0.983, 0.996);
pub const POOR_TARGET_P1: (f64, f64) = (0.810, 0.948);

/// Noise power spectral densities that reproduce the published good/poor
/// decode probabilities under the splits above (dB/Hz).
pub const GOOD_NOISE_PSD_DB: f64 = -90.6;
pub const POOR_NOISE_PSD_DB: f64 = -79.6;

/// Published `(p_1, p_2)` pairs of the extremely poor condition; its noise
/// level and code rate are back-solved from the pair per direction.
pub const EXTREMELY_POOR_PAIRS: ((f64, f64), (f64, f64)) = ((0.22, 0.08), (0.80, 0.64));

/// Build a link whose code rate is calibrated so that `p_1` hits `target_p1`
/// under the given noise PSD.
pub fn calibrated_link(
    distance: f64,
    path_loss_exponent: f64,
    bandwidth_hz: f64,
    noise_psd_db: f64,
    split_w: (f64, f64),
    target_p1: f64,
) -> Result<Link> {
    let alloc = PowerAllocation::two(split_w.0, split_w.1)?;
    let uncalibrated = ChannelParams::from_noise_psd(
        distance,
        path_loss_exponent,
        bandwidth_hz,
        noise_psd_db,
        1.0,
    );
    let t = calibrate_code_rate(&uncalibrated, &alloc, target_p1)?;
    let params = uncalibrated.with_code_rate(t);
    params.validate()?;
    Ok(Link { params, alloc })
}

/// Invert a published `(p_1, p_2)` pair into `(sigma^2, t)` for a two-message
/// split: the ratio `ln p_1 / ln p_2` pins `t'` independently of the noise,
/// after which `p_2` fixes `c = sigma^2 d^beta`.
pub fn pair_inverted_link(
    distance: f64,
    path_loss_exponent: f64,
    bandwidth_hz: f64,
    split_w: (f64, f64),
    p1: f64,
    p2: f64,
) -> Result<Link> {
    if !(p2 > 0.0 && p2 < 1.0 && p1 > p2 && p1 < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < p2 < p1 < 1 to invert a pair, got ({p1}, {p2})"
        )));
    }
    let alloc = PowerAllocation::two(split_w.0, split_w.1)?;
    let ratio = p1.ln() / p2.ln();
    let t_prime = (split_w.0 - split_w.1 / ratio) / split_w.1;
    if !(t_prime > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pair ({p1}, {p2}) is inconsistent with the power split"
        )));
    }
    let c = -p2.ln() * split_w.1 / t_prime;
    let params = ChannelParams {
        distance,
        path_loss_exponent,
        bandwidth_hz,
        noise_power_w: c / distance.powf(path_loss_exponent),
        code_rate: bandwidth_hz * (1.0 + t_prime).log2(),
    };
    params.validate()?;
    Ok(Link { params, alloc })
}

impl ChannelPreset {
    pub fn good() -> Self {
        let link = |split, target| {
            calibrated_link(DISTANCE, PATH_LOSS_EXPONENT, BANDWIDTH_HZ, GOOD_NOISE_PSD_DB, split, target)
                .expect("reference preset")
        };
        ChannelPreset {
            name: "good".into(),
            uplink: link(UPLINK_SPLIT_W, GOOD_TARGET_P1.0),
            downlink: link(DOWNLINK_SPLIT_W, GOOD_TARGET_P1.1),
        }
    }

    pub fn poor() -> Self {
        let link = |split, target| {
            calibrated_link(DISTANCE, PATH_LOSS_EXPONENT, BANDWIDTH_HZ, POOR_NOISE_PSD_DB, split, target)
                .expect("reference preset")
        };
        ChannelPreset {
            name: "poor".into(),
            uplink: link(UPLINK_SPLIT_W, POOR_TARGET_P1.0),
            downlink: link(DOWNLINK_SPLIT_W, POOR_TARGET_P1.1),
        }
    }

    pub fn extremely_poor() -> Self {
        let link = |split, pair: (f64, f64)| {
            pair_inverted_link(DISTANCE, PATH_LOSS_EXPONENT, BANDWIDTH_HZ, split, pair.0, pair.1)
                .expect("reference preset")
        };
        ChannelPreset {
            name: "extremely-poor".into(),
            uplink: link(UPLINK_SPLIT_W, EXTREMELY_POOR_PAIRS.0),
            downlink: link(DOWNLINK_SPLIT_W, EXTREMELY_POOR_PAIRS.1),
        }
    }

    /// Noiseless limit: every transmission decodes. Used by federation
    /// equivalence oracles.
    pub fn perfect() -> Self {
        let link = |split: (f64, f64)| Link {
            params: ChannelParams {
                distance: DISTANCE,
                path_loss_exponent: PATH_LOSS_EXPONENT,
                bandwidth_hz: BANDWIDTH_HZ,
                noise_power_w: 0.0,
                code_rate: BANDWIDTH_HZ,
            },
            alloc: PowerAllocation::two(split.0, split.1).expect("static split"),
        };
        ChannelPreset {
            name: "perfect".into(),
            uplink: link(UPLINK_SPLIT_W),
            downlink: link(DOWNLINK_SPLIT_W),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "good" => Some(Self::good()),
            "poor" => Some(Self::poor()),
            "extremely-poor" => Some(Self::extremely_poor()),
            "perfect" => Some(Self::perfect()),
            _ => None,
        }
    }

    /// The named operating points shipped with the simulator.
    pub fn builtin() -> Vec<Self> {
        vec![Self::good(), Self::poor(), Self::extremely_poor()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};

    fn params(noise_w: f64, code_rate: f64) -> ChannelParams {
        ChannelParams {
            distance: 1.0,
            path_loss_exponent: 2.5,
            bandwidth_hz: BANDWIDTH_HZ,
            noise_power_w: noise_w,
            code_rate,
        }
    }

    #[test]
    fn residual_interference_table_split() {
        let alloc = PowerAllocation::two(0.020, 0.005).unwrap();
        assert_eq!(residual_interference(&alloc, 1).unwrap(), 0.005);
        assert_eq!(residual_interference(&alloc, 2).unwrap(), 0.0);
        assert!(residual_interference(&alloc, 3).is_err());
        assert!(residual_interference(&alloc, 0).is_err());
    }

    #[test]
    fn residual_interference_three_messages() {
        // Direct summation oracle: interference of message 1 is P2 + P3.
        let alloc = PowerAllocation::new(vec![4.0, 2.0, 1.0]).unwrap();
        assert_eq!(residual_interference(&alloc, 1).unwrap(), 3.0);
        assert_eq!(residual_interference(&alloc, 2).unwrap(), 1.0);
        assert_eq!(residual_interference(&alloc, 3).unwrap(), 0.0);
    }

    #[test]
    fn allocation_rejects_non_decreasing() {
        assert!(PowerAllocation::two(0.005, 0.020).is_err());
        assert!(PowerAllocation::two(0.020, 0.020).is_err());
        assert!(PowerAllocation::new(vec![]).is_err());
        assert!(PowerAllocation::two(0.020, -0.1).is_err());
    }

    #[test]
    fn throughput_known_points() {
        let p = params(1e-3, 1.0);
        assert_eq!(throughput(0.0, 0.02, 0.0, &p), 0.0);
        // gamma = 3 gives log2(4) = 2 bandwidths.
        let r = throughput(3.0 * p.noise_power_w / 0.02, 0.02, 0.0, &p);
        assert!((r - 2.0 * BANDWIDTH_HZ).abs() < 1e-6);
        // g = 1, P_T = sigma^2, no interference, d = 1: gamma = 1, R = W.
        let r = throughput(1.0, p.noise_power_w, 0.0, &p);
        assert!((r - BANDWIDTH_HZ).abs() < 1e-6);
    }

    #[test]
    fn decode_threshold_known_points() {
        let alloc = PowerAllocation::two(20.0, 5.0).unwrap();
        // c = 0: noiseless channel, threshold 0.
        let p = params(0.0, BANDWIDTH_HZ);
        assert_eq!(decode_threshold(&p, &alloc, 1).unwrap(), 0.0);
        // c = 1, t' = 1 (t = W): threshold = 1 / (20/1 - 5) = 1/15.
        let p = params(1.0, BANDWIDTH_HZ);
        let th = decode_threshold(&p, &alloc, 1).unwrap();
        assert!((th - 1.0 / 15.0).abs() < 1e-12);
        // Just past the feasibility boundary P1/t' = P2.
        let t_boundary = BANDWIDTH_HZ * (1.0f64 + 20.0 / 5.0).log2() + 1.0;
        let p = params(1.0, t_boundary);
        assert!(matches!(
            decode_threshold(&p, &alloc, 1),
            Err(Error::InfeasibleAllocation { k: 1, .. })
        ));
    }

    #[test]
    fn decode_prob_noiseless_is_one() {
        let alloc = PowerAllocation::two(0.020, 0.005).unwrap();
        let p = params(0.0, BANDWIDTH_HZ);
        assert_eq!(decode_success_prob(&p, &alloc, 1).unwrap(), 1.0);
        assert_eq!(decode_success_prob(&p, &alloc, 2).unwrap(), 1.0);
    }

    #[test]
    fn single_message_limits() {
        let p = params(0.0, BANDWIDTH_HZ);
        assert_eq!(single_message_decode_prob(&p, 0.025).unwrap(), 1.0);
        let p = params(1e-3, BANDWIDTH_HZ);
        assert!((single_message_decode_prob(&p, 1e12).unwrap() - 1.0).abs() < 1e-9);
        assert!(single_message_decode_prob(&p, 0.0).is_err());
    }

    #[test]
    fn good_preset_matches_published_table() {
        let preset = ChannelPreset::good();
        let (p1, p2) = preset.uplink.decode_probs().unwrap();
        assert!((p1 - 0.983).abs() < 1e-6, "calibration anchors p1, got {p1}");
        assert!((p2 - 0.964).abs() < 0.002, "implied p2 {p2}");
        let (p1, p2) = preset.downlink.decode_probs().unwrap();
        assert!((p1 - 0.996).abs() < 1e-6);
        assert!((p2 - 0.991).abs() < 0.002);
        // Vanilla transmissions at full power: half payload then full payload.
        assert!((preset.uplink.single_half_prob().unwrap() - 0.993).abs() < 0.001);
        assert!((preset.uplink.single_full_prob().unwrap() - 0.973).abs() < 0.0015);
        assert!((preset.downlink.single_half_prob().unwrap() - 0.998).abs() < 0.001);
        assert!((preset.downlink.single_full_prob().unwrap() - 0.993).abs() < 0.001);
    }

    #[test]
    fn poor_preset_matches_published_table() {
        let preset = ChannelPreset::poor();
        let (p1, p2) = preset.uplink.decode_probs().unwrap();
        assert!((p1 - 0.810).abs() < 1e-6);
        assert!((p2 - 0.632).abs() < 0.002);
        let (p1, p2) = preset.downlink.decode_probs().unwrap();
        assert!((p1 - 0.948).abs() < 1e-6);
        assert!((p2 - 0.891).abs() < 0.002);
        assert!((preset.uplink.single_half_prob().unwrap() - 0.912).abs() < 0.001);
        assert!((preset.uplink.single_full_prob().unwrap() - 0.704).abs() < 0.001);
        assert!((preset.downlink.single_half_prob().unwrap() - 0.977).abs() < 0.001);
        assert!((preset.downlink.single_full_prob().unwrap() - 0.916).abs() < 0.002);
    }

    #[test]
    fn extremely_poor_preset_matches_published_pairs() {
        let preset = ChannelPreset::extremely_poor();
        let (p1, p2) = preset.uplink.decode_probs().unwrap();
        assert!((p1 - 0.22).abs() < 1e-9);
        assert!((p2 - 0.08).abs() < 1e-9);
        let (p1, p2) = preset.downlink.decode_probs().unwrap();
        assert!((p1 - 0.80).abs() < 1e-9);
        assert!((p2 - 0.64).abs() < 1e-9);
    }

    #[test]
    fn calibration_round_trip() {
        for target in [0.9999, 0.983, 0.81, 0.5, 0.22, 0.01] {
            let base = ChannelParams::from_noise_psd(1.0, 2.5, BANDWIDTH_HZ, -85.0, 1.0);
            let alloc = PowerAllocation::two(0.020, 0.005).unwrap();
            let t = calibrate_code_rate(&base, &alloc, target).unwrap();
            let p1 = decode_success_prob(&base.with_code_rate(t), &alloc, 1).unwrap();
            assert!((p1 - target).abs() < 1e-6, "target {target} achieved {p1}");
        }
    }

    #[test]
    fn calibration_rate_vanishes_as_target_approaches_one() {
        let base = ChannelParams::from_noise_psd(1.0, 2.5, BANDWIDTH_HZ, -85.0, 1.0);
        let alloc = PowerAllocation::two(0.020, 0.005).unwrap();
        let t_hi = calibrate_code_rate(&base, &alloc, 1.0 - 1e-4).unwrap();
        let t_higher = calibrate_code_rate(&base, &alloc, 1.0 - 1e-7).unwrap();
        assert!(t_higher < t_hi);
        assert!(t_higher < 1.0, "rate should collapse toward 0, got {t_higher}");
        assert!(calibrate_code_rate(&base, &alloc, 1.0).is_err());
    }

    #[test]
    fn decode_level_prefix_monotone() {
        let preset = ChannelPreset::poor();
        let mut rng = stream(7, StreamKind::Other { tag: 1 });
        for _ in 0..2000 {
            let g = sample_fading(&mut rng);
            let level = sample_decode_level(g, &preset.uplink.params, &preset.uplink.alloc).unwrap();
            if level.decodes_full() {
                assert!(level.decodes_half());
            }
        }
        let th1 = decode_threshold(&preset.uplink.params, &preset.uplink.alloc, 1).unwrap();
        assert!(th1 > 0.0);
        assert_eq!(
            sample_decode_level(FadingDraw(0.0), &preset.uplink.params, &preset.uplink.alloc)
                .unwrap(),
            DecodeLevel::None
        );
    }

    #[test]
    fn monte_carlo_agrees_with_closed_form() {
        // 10^5 draws here; the acceptance suite runs the full 10^6 sweep.
        let draws = 100_000;
        for preset in ChannelPreset::builtin() {
            for link in [&preset.uplink, &preset.downlink] {
                let (p1, p2) = link.decode_probs().unwrap();
                let mut rng = stream(11, StreamKind::Other { tag: 2 });
                let est = monte_carlo_decode_prob(&link.params, &link.alloc, draws, &mut rng)
                    .unwrap();
                for (closed, (mc, _)) in [p1, p2].iter().zip(&est) {
                    let se = (closed * (1.0 - closed) / draws as f64).sqrt();
                    assert!(
                        (closed - mc).abs() < 3.0 * se,
                        "{}: closed {closed} vs mc {mc} (se {se})",
                        preset.name
                    );
                }
            }
        }
    }

    #[test]
    fn fading_moments_and_determinism() {
        let n = 1_000_000;
        let mut rng = stream(5, StreamKind::Other { tag: 3 });
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let g = sample_fading(&mut rng).0;
            assert!(g >= 0.0);
            sum += g;
            sum_sq += g * g;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");

        let a: Vec<f64> = {
            let mut r = stream(5, StreamKind::Other { tag: 3 });
            (0..16).map(|_| sample_fading(&mut r).0).collect()
        };
        let b: Vec<f64> = {
            let mut r = stream(5, StreamKind::Other { tag: 3 });
            (0..16).map(|_| sample_fading(&mut r).0).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn power_monotonicity() {
        let base = params(1e-3, 0.5 * BANDWIDTH_HZ);
        let mut last_p1 = 0.0;
        for p1_w in [0.010, 0.020, 0.040, 0.080] {
            let alloc = PowerAllocation::two(p1_w, 0.005).unwrap();
            let p1 = decode_success_prob(&base, &alloc, 1).unwrap();
            assert!(p1 >= last_p1, "raising P1 lowered p1");
            last_p1 = p1;
        }
        // Scaling the whole budget with a fixed split never lowers any p_k.
        let mut last = (0.0, 0.0);
        for scale in [1.0, 2.0, 4.0] {
            let alloc = PowerAllocation::two(0.020 * scale, 0.005 * scale).unwrap();
            let p1 = decode_success_prob(&base, &alloc, 1).unwrap();
            let p2 = decode_success_prob(&base, &alloc, 2).unwrap();
            assert!(p1 >= last.0 && p2 >= last.1);
            last = (p1, p2);
        }
    }

    #[test]
    fn degenerate_split_approaches_single_message() {
        let base = params(1e-3, 0.5 * BANDWIDTH_HZ);
        let alloc = PowerAllocation::two(0.020, 1e-12).unwrap();
        let p1 = decode_success_prob(&base, &alloc, 1).unwrap();
        let single = single_message_decode_prob(&base, 0.020).unwrap();
        assert!((p1 - single).abs() < 1e-9);
    }

    #[test]
    fn p_sequence_is_non_increasing() {
        let base = params(2e-3, 0.7 * BANDWIDTH_HZ);
        let alloc = PowerAllocation::new(vec![0.05, 0.02, 0.004]).unwrap();
        let p: Vec<f64> = (1..=3)
            .map(|k| decode_success_prob(&base, &alloc, k).unwrap())
            .collect();
        assert!(p[0] >= p[1] && p[1] >= p[2]);
        assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
    }
}
