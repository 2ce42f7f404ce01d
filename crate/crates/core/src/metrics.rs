//! Accuracy evaluation, convergence detection, and bit/energy accounting.

use crate::data::{Dataset, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor, Width};
use crate::slim::SlimModel;

/// Top-1 accuracy (percent) and mean cross-entropy loss of `model` at `width`
/// over the given sample indices. Ties in the argmax resolve to the lowest
/// class index.
pub fn evaluate<T: Scalar>(
    model: &SlimModel<T>,
    dataset: &Dataset,
    indices: &[usize],
    width: Width,
    batch_size: usize,
) -> (f64, f64) {
    assert!(!indices.is_empty(), "evaluation set must be nonempty");
    let px = IMAGE_SIDE * IMAGE_SIDE;
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    for chunk in indices.chunks(batch_size.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * px);
        for &i in chunk {
            data.extend(dataset.image(i).iter().map(|&v| T::from_f64(v as f64)));
        }
        let images = Tensor::new(vec![chunk.len(), IMAGE_SIDE, IMAGE_SIDE, 1], data);
        let logits = model.logits(&images, width);
        let classes = logits.shape[1];
        for (b, &i) in chunk.iter().enumerate() {
            let row = &logits.data[b * classes..(b + 1) * classes];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == dataset.labels[i] as usize {
                correct += 1;
            }
            let (loss, _) = crate::nn::softmax_cross_entropy(row, dataset.labels[i] as usize);
            loss_sum += loss.to_f64();
        }
    }
    (100.0 * correct as f64 / indices.len() as f64, loss_sum / indices.len() as f64)
}

/// Convergence rule over a trailing window of per-round accuracies: the window
/// mean must exceed `mean_ref` while the window standard deviation stays below
/// `std_ref`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceCriterion {
    pub window: usize,
    /// Std threshold in accuracy percentage points.
    pub std_ref: f64,
    pub mean_ref: f64,
    /// Extra condition: the window minimum must also clear `mean_ref`.
    pub require_min_above_ref: bool,
}

impl ConvergenceCriterion {
    /// Derive `mean_ref` as `fraction` of the mean accuracy over the final
    /// `window` rounds of the run.
    pub fn from_series(
        series: &[f64],
        window: usize,
        std_ref: f64,
        mean_ref_fraction: f64,
    ) -> Result<Self> {
        if series.len() < window || window == 0 {
            return Err(Error::InvalidArgument(format!(
                "series of {} rounds is shorter than the {window}-round window",
                series.len()
            )));
        }
        let tail = &series[series.len() - window..];
        let mean = tail.iter().sum::<f64>() / window as f64;
        Ok(ConvergenceCriterion {
            window,
            std_ref,
            mean_ref: mean_ref_fraction * mean,
            require_min_above_ref: false,
        })
    }
}

fn window_stats(window: &[f64]) -> (f64, f64) {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// First 1-based round whose trailing window satisfies the criterion, or
/// `None` when the series never converges.
pub fn detect_convergence(series: &[f64], criterion: &ConvergenceCriterion) -> Option<usize> {
    let w = criterion.window;
    if series.len() < w || w == 0 {
        return None;
    }
    for end in w..=series.len() {
        let win = &series[end - w..end];
        let (mean, std) = window_stats(win);
        let min = win.iter().cloned().fold(f64::INFINITY, f64::min);
        let min_ok = !criterion.require_min_above_ref || min > criterion.mean_ref;
        if mean > criterion.mean_ref && std < criterion.std_ref && min_ok {
            return Some(end);
        }
    }
    None
}

/// Expected split of `offered` payload bits under decode probabilities
/// `(p1, p2)`: fully decoded, half-decoded (only the 0.5x segment got
/// through), and dropped. The three parts sum to `offered` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitAccounting {
    pub full: f64,
    pub half: f64,
    pub dropped: f64,
}

pub fn expected_bit_accounting(offered: f64, p1: f64, p2: f64) -> Result<BitAccounting> {
    if !(0.0..=1.0).contains(&p2) || !(0.0..=1.0).contains(&p1) || p2 > p1 {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= p2 <= p1 <= 1, got p1 = {p1}, p2 = {p2}"
        )));
    }
    if !(offered >= 0.0) {
        return Err(Error::InvalidArgument("offered payload must be nonnegative".into()));
    }
    let full = offered * p2;
    let half = 0.5 * offered * (p1 - p2);
    // Equals offered*(1-p1) + offered/2*(p1-p2); the subtraction form keeps
    // the three parts summing to the offered total to within rounding.
    let dropped = offered - (full + half);
    Ok(BitAccounting { full, half, dropped })
}

/// Per-round cost constants of one method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyLedger {
    pub comm_mw_per_round: f64,
    pub compute_mflops_per_round: f64,
}

/// Cumulative cost of a run measured at its convergence round (or at the
/// horizon when the series never converges).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTotals {
    pub converged_at: Option<usize>,
    pub rounds_counted: usize,
    /// `mW/round * rounds / 1000`.
    pub comm_w: f64,
    /// `MFLOPS/round * rounds / 1000`.
    pub compute_gflops: f64,
}

pub fn energy_to_convergence(
    series: &[f64],
    ledger: &EnergyLedger,
    criterion: &ConvergenceCriterion,
) -> EnergyTotals {
    let converged_at = detect_convergence(series, criterion);
    let rounds = converged_at.unwrap_or(series.len());
    EnergyTotals {
        converged_at,
        rounds_counted: rounds,
        comm_w: ledger.comm_mw_per_round * rounds as f64 / 1000.0,
        compute_gflops: ledger.compute_mflops_per_round * rounds as f64 / 1000.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::rng::{stream, StreamKind};
    use crate::slim::build_ul_mobilenet;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = stream(seed, StreamKind::Other { tag: 30 });
        Dataset {
            images: (0..n * IMAGE_SIDE * IMAGE_SIDE).map(|_| rng.random_range(0.0..1.0)).collect(),
            labels: (0..n).map(|_| rng.random_range(0..10) as u8).collect(),
            split: Split::Test,
        }
    }

    #[test]
    fn random_model_sits_near_chance() {
        let model = build_ul_mobilenet::<f32>(2);
        let ds = random_dataset(2000, 3);
        let idx: Vec<usize> = (0..ds.len()).collect();
        let (acc, loss) = evaluate(&model, &ds, &idx, Width::Full, 256);
        assert!((acc - 10.0).abs() < 5.0, "accuracy {acc}");
        assert!(loss.is_finite());
    }

    #[test]
    fn evaluate_matches_per_sample_recount() {
        let model = build_ul_mobilenet::<f64>(4);
        let ds = random_dataset(1000, 5);
        let idx: Vec<usize> = (0..ds.len()).collect();
        let (acc, _) = evaluate(&model, &ds, &idx, Width::Half, 128);
        // Independent recount, one sample at a time.
        let mut correct = 0usize;
        for i in 0..ds.len() {
            let data: Vec<f64> = ds.image(i).iter().map(|&v| v as f64).collect();
            let images = Tensor::new(vec![1, IMAGE_SIDE, IMAGE_SIDE, 1], data);
            let logits = model.logits(&images, Width::Half);
            let mut best = 0;
            for (j, &v) in logits.data.iter().enumerate() {
                if v > logits.data[best] {
                    best = j;
                }
            }
            if best == ds.labels[i] as usize {
                correct += 1;
            }
        }
        assert_eq!(acc, 100.0 * correct as f64 / ds.len() as f64);
    }

    #[test]
    fn convergence_constant_series() {
        let series = vec![90.0; 150];
        let crit = ConvergenceCriterion {
            window: 100,
            std_ref: 7.2,
            mean_ref: 72.0,
            require_min_above_ref: false,
        };
        assert_eq!(detect_convergence(&series, &crit), Some(100));
    }

    #[test]
    fn convergence_alternating_never() {
        let series: Vec<f64> = (0..400).map(|i| if i % 2 == 0 { 0.0 } else { 100.0 }).collect();
        let crit = ConvergenceCriterion {
            window: 100,
            std_ref: 7.2,
            mean_ref: 10.0,
            require_min_above_ref: false,
        };
        assert_eq!(detect_convergence(&series, &crit), None);
    }

    #[test]
    fn convergence_matches_window_scan_on_ramp() {
        // Noisy saturating ramp, scanned by an independent brute-force loop.
        let mut rng = stream(6, StreamKind::Other { tag: 31 });
        let series: Vec<f64> = (0..300)
            .map(|i| {
                let base = 90.0 * (1.0 - (-(i as f64) / 60.0).exp());
                base + rng.random_range(-3.0..3.0)
            })
            .collect();
        let crit = ConvergenceCriterion {
            window: 100,
            std_ref: 7.2,
            mean_ref: 70.0,
            require_min_above_ref: false,
        };
        let got = detect_convergence(&series, &crit);
        let mut want = None;
        for end in 100..=series.len() {
            let win = &series[end - 100..end];
            let mean = win.iter().sum::<f64>() / 100.0;
            let var = win.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / 100.0;
            if mean > 70.0 && var.sqrt() < 7.2 {
                want = Some(end);
                break;
            }
        }
        assert_eq!(got, want);
        assert!(got.is_some());
    }

    #[test]
    fn mean_ref_from_series_tail() {
        let mut series = vec![10.0; 100];
        series.extend(vec![80.0; 100]);
        let crit = ConvergenceCriterion::from_series(&series, 100, 7.2, 0.8).unwrap();
        assert!((crit.mean_ref - 64.0).abs() < 1e-12);
        assert!(ConvergenceCriterion::from_series(&[1.0; 10], 100, 7.2, 0.8).is_err());
    }

    #[test]
    fn accounting_reference_rows() {
        // Offered 205.8 MB with the published good/poor uplink probabilities.
        let acc = expected_bit_accounting(205.8, 0.983, 0.964).unwrap();
        assert!((acc.half - 1.96).abs() < 0.01);
        assert!((acc.full - 198.45).abs() / 198.45 < 5e-3);
        assert!((acc.dropped - 5.46).abs() / 5.46 < 5e-3);
        let acc = expected_bit_accounting(205.8, 0.810, 0.632).unwrap();
        assert!((acc.full - 130.1).abs() / 130.1 < 5e-3);
        assert!((acc.half - 18.3).abs() / 18.3 < 5e-3);
        assert!((acc.dropped - 57.4).abs() / 57.4 < 5e-3);
    }

    #[test]
    fn accounting_edge_cases() {
        let acc = expected_bit_accounting(100.0, 1.0, 1.0).unwrap();
        assert_eq!((acc.full, acc.half, acc.dropped), (100.0, 0.0, 0.0));
        assert!(expected_bit_accounting(1.0, 0.5, 0.7).is_err());
        assert!(expected_bit_accounting(1.0, 1.2, 0.5).is_err());
    }

    #[test]
    fn energy_reference_point() {
        let series = vec![90.0; 100];
        let crit = ConvergenceCriterion {
            window: 100,
            std_ref: 7.2,
            mean_ref: 72.0,
            require_min_above_ref: false,
        };
        let ledger = EnergyLedger { comm_mw_per_round: 125.0, compute_mflops_per_round: 3.56 };
        let totals = energy_to_convergence(&series, &ledger, &crit);
        assert_eq!(totals.converged_at, Some(100));
        assert!((totals.comm_w - 12.5).abs() < 1e-12);
        assert!((totals.compute_gflops - 0.356).abs() < 1e-12);

        let flat = vec![1.0; 120];
        let totals = energy_to_convergence(&flat, &ledger, &crit);
        assert_eq!(totals.converged_at, None);
        assert_eq!(totals.rounds_counted, 120);
    }

    proptest! {
        #[test]
        fn accounting_conserves_offered(
            offered in 0.0f64..1e9,
            p1 in 0.0f64..=1.0,
            frac in 0.0f64..=1.0,
        ) {
            let p2 = p1 * frac;
            let acc = expected_bit_accounting(offered, p1, p2).unwrap();
            prop_assert!(acc.full >= 0.0 && acc.half >= 0.0 && acc.dropped >= -1e-9);
            let sum = acc.full + acc.half + acc.dropped;
            prop_assert!((sum - offered).abs() <= 2.0 * f64::EPSILON * offered.max(1.0));
            // Subtraction form agrees with the direct dropped formula.
            let direct = offered * (1.0 - p1) + 0.5 * offered * (p1 - p2);
            prop_assert!((acc.dropped - direct).abs() <= 1e-9 * offered.max(1.0));
        }

        #[test]
        fn detection_is_monotone_in_mean_ref(
            seed in 0u64..500,
            lo in 0.0f64..50.0,
            hi_delta in 0.0f64..50.0,
        ) {
            let mut rng = stream(seed, StreamKind::Other { tag: 32 });
            let series: Vec<f64> = (0..250)
                .map(|i| 80.0 * (1.0 - (-(i as f64) / 40.0).exp()) + rng.random_range(-2.0..2.0))
                .collect();
            let mk = |mean_ref| ConvergenceCriterion {
                window: 100, std_ref: 7.2, mean_ref, require_min_above_ref: false,
            };
            let early = detect_convergence(&series, &mk(lo));
            let late = detect_convergence(&series, &mk(lo + hi_delta));
            match (early, late) {
                (None, Some(_)) => prop_assert!(false, "raising mean_ref cannot create detection"),
                (Some(a), Some(b)) => prop_assert!(a <= b),
                _ => {}
            }
        }
    }
}
