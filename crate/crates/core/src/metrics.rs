//! Pixel-level AUROC, average precision and FPR at 95% TPR.
//!
//! All three metrics walk pixels in descending score order and treat each
//! group of equal scores as one atomic step, which makes them independent
//! of input order.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("degenerate labels: {positive} anomaly and {negative} normal pixels after ignore filtering")]
    DegenerateLabels { positive: usize, negative: usize },
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("scores ({scores}) and labels ({labels}) differ in length")]
    LengthMismatch { scores: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Anomaly,
    Ignore,
}

/// Pooled pixel scores with their ground-truth labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalRecord {
    pub scores: Vec<f32>,
    pub labels: Vec<Label>,
}

impl EvalRecord {
    pub fn new(scores: Vec<f32>, labels: Vec<Label>) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { scores, labels })
    }

    /// Record from separate positive and negative score lists.
    pub fn from_classes(positives: &[f32], negatives: &[f32]) -> Self {
        let scores = positives.iter().chain(negatives).copied().collect();
        let labels = std::iter::repeat_n(Label::Anomaly, positives.len())
            .chain(std::iter::repeat_n(Label::Normal, negatives.len()))
            .collect();
        Self { scores, labels }
    }

    pub fn push(&mut self, score: f32, label: Label) {
        self.scores.push(score);
        self.labels.push(label);
    }

    pub fn append(&mut self, other: &mut EvalRecord) {
        self.scores.append(&mut other.scores);
        self.labels.append(&mut other.labels);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn counts(&self) -> PixelCounts {
        let mut c = PixelCounts::default();
        for l in &self.labels {
            match l {
                Label::Anomaly => c.positive += 1,
                Label::Normal => c.negative += 1,
                Label::Ignore => c.ignored += 1,
            }
        }
        c.evaluated = c.positive + c.negative;
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PixelCounts {
    pub evaluated: usize,
    pub ignored: usize,
    pub positive: usize,
    pub negative: usize,
}

// Equal-score groups in descending score order.
struct Ranked {
    // (positives, negatives) per group
    groups: Vec<(u64, u64)>,
    positive: u64,
    negative: u64,
}

fn rank(record: &EvalRecord) -> Result<Ranked, MetricsError> {
    if record.scores.len() != record.labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: record.scores.len(),
            labels: record.labels.len(),
        });
    }
    let mut pixels: Vec<(f32, bool)> = Vec::with_capacity(record.len());
    for (i, (&s, &l)) in record.scores.iter().zip(&record.labels).enumerate() {
        if l == Label::Ignore {
            continue;
        }
        if !s.is_finite() {
            return Err(MetricsError::NonFiniteScore(i));
        }
        pixels.push((s, l == Label::Anomaly));
    }
    let positive = pixels.iter().filter(|p| p.1).count();
    let negative = pixels.len() - positive;
    if positive == 0 || negative == 0 {
        return Err(MetricsError::DegenerateLabels { positive, negative });
    }
    pixels.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups = Vec::new();
    let mut i = 0;
    while i < pixels.len() {
        let s = pixels[i].0;
        let (mut p, mut n) = (0u64, 0u64);
        while i < pixels.len() && pixels[i].0 == s {
            if pixels[i].1 {
                p += 1;
            } else {
                n += 1;
            }
            i += 1;
        }
        groups.push((p, n));
    }
    Ok(Ranked {
        groups,
        positive: positive as u64,
        negative: negative as u64,
    })
}

impl Ranked {
    // Mann-Whitney U with half credit for ties, computed exactly in integers.
    fn auroc(&self) -> f64 {
        let mut twice_wins: u128 = 0;
        let mut neg_seen = 0u64;
        for &(p, n) in &self.groups {
            let neg_below = self.negative - neg_seen - n;
            twice_wins += 2 * p as u128 * neg_below as u128 + p as u128 * n as u128;
            neg_seen += n;
        }
        let pairs = self.positive as u128 * self.negative as u128;
        100.0 * twice_wins as f64 / (2.0 * pairs as f64)
    }

    fn auroc_sweep(&self) -> f64 {
        let (p_total, n_total) = (self.positive as f64, self.negative as f64);
        let (mut tp, mut fp) = (0u64, 0u64);
        let (mut prev_tpr, mut prev_fpr) = (0.0f64, 0.0f64);
        let mut area = 0.0f64;
        for &(p, n) in &self.groups {
            tp += p;
            fp += n;
            let tpr = tp as f64 / p_total;
            let fpr = fp as f64 / n_total;
            area += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
            prev_tpr = tpr;
            prev_fpr = fpr;
        }
        100.0 * area
    }

    fn average_precision(&self) -> f64 {
        let p_total = self.positive as f64;
        let (mut tp, mut fp) = (0u64, 0u64);
        let mut ap = 0.0f64;
        for &(p, n) in &self.groups {
            tp += p;
            fp += n;
            if p > 0 {
                let precision = tp as f64 / (tp + fp) as f64;
                ap += (p as f64 / p_total) * precision;
            }
        }
        100.0 * ap
    }

    fn fpr_at_95_tpr(&self) -> f64 {
        let (mut tp, mut fp) = (0u64, 0u64);
        for &(p, n) in &self.groups {
            tp += p;
            fp += n;
            // tp / P >= 0.95
            if 20 * tp >= 19 * self.positive {
                break;
            }
        }
        100.0 * fp as f64 / self.negative as f64
    }
}

/// AUROC in percent: the fraction of (anomaly, normal) pixel pairs where the
/// anomaly pixel scores higher, ties counted as half.
pub fn auroc(record: &EvalRecord) -> Result<f64, MetricsError> {
    Ok(rank(record)?.auroc())
}

/// AUROC in percent by trapezoidal integration of the ROC curve swept over
/// every distinct score threshold.
pub fn auroc_sweep(record: &EvalRecord) -> Result<f64, MetricsError> {
    Ok(rank(record)?.auroc_sweep())
}

/// Average precision in percent: `sum_n (R_n - R_{n-1}) P_n` with precision
/// and recall evaluated at equal-score group boundaries.
pub fn average_precision(record: &EvalRecord) -> Result<f64, MetricsError> {
    Ok(rank(record)?.average_precision())
}

/// FPR in percent at the first descending threshold whose TPR reaches 95%,
/// without interpolation. A pixel with score `>= t` counts as anomalous.
pub fn fpr_at_95_tpr(record: &EvalRecord) -> Result<f64, MetricsError> {
    Ok(rank(record)?.fpr_at_95_tpr())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub ap: f64,
    pub fpr95: f64,
    pub auroc: f64,
    pub pixel_counts: PixelCounts,
    /// Dataset items that failed to load and were left out.
    pub skipped: usize,
}

impl MetricsReport {
    /// Pooled-pixel metrics for one record.
    pub fn compute(record: &EvalRecord) -> Result<Self, MetricsError> {
        let ranked = rank(record)?;
        let auroc = ranked.auroc();
        debug_assert!((auroc - ranked.auroc_sweep()).abs() < 1e-9);
        Ok(Self {
            ap: ranked.average_precision(),
            fpr95: ranked.fpr_at_95_tpr(),
            auroc,
            pixel_counts: record.counts(),
            skipped: 0,
        })
    }

    /// Machine-readable `key=value` line.
    pub fn key_values(&self) -> String {
        let c = self.pixel_counts;
        format!(
            "ap={:.2} fpr95={:.2} auroc={:.2} evaluated={} ignored={} positive={} negative={} skipped={} mode=pooled",
            self.ap, self.fpr95, self.auroc, c.evaluated, c.ignored, c.positive, c.negative, self.skipped
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.pixel_counts;
        writeln!(f, "{:<10} {:>10}", "metric", "value")?;
        writeln!(f, "{:<10} {:>10.2}", "AP (%)", self.ap)?;
        writeln!(f, "{:<10} {:>10.2}", "FPR95 (%)", self.fpr95)?;
        writeln!(f, "{:<10} {:>10.2}", "AUROC (%)", self.auroc)?;
        writeln!(
            f,
            "pixels: evaluated={} ignored={} positive={} negative={} (pooled)",
            c.evaluated, c.ignored, c.positive, c.negative
        )?;
        write!(f, "items skipped: {}", self.skipped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_hand_case() {
        let r = EvalRecord::from_classes(&[0.35, 0.8], &[0.1, 0.4]);
        assert_eq!(auroc(&r).unwrap(), 75.0);
        assert_eq!(auroc_sweep(&r).unwrap(), 75.0);
    }

    #[test]
    fn auroc_extremes() {
        let r = EvalRecord::from_classes(&[0.9, 0.8, 0.7], &[0.1, 0.2]);
        assert_eq!(auroc(&r).unwrap(), 100.0);
        let r = EvalRecord::from_classes(&[0.5; 4], &[0.5; 3]);
        assert_eq!(auroc(&r).unwrap(), 50.0);
        assert_eq!(auroc_sweep(&r).unwrap(), 50.0);
    }

    #[test]
    fn ap_hand_case() {
        let r = EvalRecord::new(
            vec![0.8, 0.4, 0.35, 0.1],
            vec![Label::Anomaly, Label::Normal, Label::Anomaly, Label::Normal],
        )
        .unwrap();
        let ap = average_precision(&r).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0) * 100.0).abs() < 1e-12);
        assert!((ap - 83.33).abs() < 0.01);
    }

    #[test]
    fn ap_perfect_and_worst() {
        let r = EvalRecord::from_classes(&[0.9, 0.95], &[0.1, 0.3, 0.2]);
        assert_eq!(average_precision(&r).unwrap(), 100.0);
        for k in 1..10usize {
            let negs: Vec<f32> = (0..k).map(|i| 0.5 + i as f32 * 0.01).collect();
            let r = EvalRecord::from_classes(&[0.1], &negs);
            let ap = average_precision(&r).unwrap();
            assert!((ap - 100.0 / (k + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ap_tied_group_is_atomic() {
        // one positive and one negative share a score: a single PR step at
        // precision 1/2 regardless of order
        let a = EvalRecord::from_classes(&[0.5], &[0.5]);
        let b = EvalRecord::new(vec![0.5, 0.5], vec![Label::Normal, Label::Anomaly]).unwrap();
        assert_eq!(average_precision(&a).unwrap(), 50.0);
        assert_eq!(average_precision(&b).unwrap(), 50.0);
    }

    #[test]
    fn fpr95_extremes() {
        let r = EvalRecord::from_classes(&[1.0; 5], &[0.0; 5]);
        assert_eq!(fpr_at_95_tpr(&r).unwrap(), 0.0);
        let r = EvalRecord::from_classes(&[0.3; 5], &[0.3; 5]);
        assert_eq!(fpr_at_95_tpr(&r).unwrap(), 100.0);
    }

    #[test]
    fn fpr95_first_crossing() {
        // 20 positives: TPR reaches 19/20 = 0.95 exactly at the 19th positive
        let pos: Vec<f32> = (0..20).map(|i| 1.0 - i as f32 * 0.04).collect();
        // two negatives above the 19th positive (score 0.28), three below
        let neg = [0.9, 0.5, 0.27, 0.1, 0.05];
        let r = EvalRecord::from_classes(&pos, &neg);
        assert_eq!(fpr_at_95_tpr(&r).unwrap(), 40.0);
    }

    #[test]
    fn degenerate_labels() {
        let r = EvalRecord::new(vec![0.1, 0.2], vec![Label::Normal, Label::Ignore]).unwrap();
        assert_eq!(
            auroc(&r).unwrap_err(),
            MetricsError::DegenerateLabels { positive: 0, negative: 1 }
        );
        assert!(average_precision(&r).is_err());
        assert!(fpr_at_95_tpr(&r).is_err());
        assert!(MetricsReport::compute(&EvalRecord::default()).is_err());
    }

    #[test]
    fn ignore_pixels_may_be_nan() {
        let mut r = EvalRecord::from_classes(&[0.9], &[0.1]);
        r.push(f32::NAN, Label::Ignore);
        assert_eq!(auroc(&r).unwrap(), 100.0);
        r.push(f32::NAN, Label::Normal);
        assert_eq!(auroc(&r).unwrap_err(), MetricsError::NonFiniteScore(3));
    }

    #[test]
    fn report_formats() {
        let r = EvalRecord::from_classes(&[0.9, 0.8], &[0.1, 0.2, 0.85]);
        let rep = MetricsReport::compute(&r).unwrap();
        let kv = rep.key_values();
        assert!(kv.starts_with("ap="));
        assert!(kv.contains("evaluated=5"));
        assert!(kv.contains("mode=pooled"));
        assert!(rep.to_string().contains("AUROC (%)"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        // Scores on a coarse grid so ties are common.
        fn record(max: usize) -> impl Strategy<Value = EvalRecord> {
            prop::collection::vec((0u8..40, 0u8..3), 2..max).prop_filter_map("degenerate", |px| {
                let mut r = EvalRecord::default();
                for (s, l) in px {
                    let label = [Label::Normal, Label::Anomaly, Label::Ignore][l as usize];
                    r.push(s as f32 / 39.0, label);
                }
                let c = r.counts();
                (c.positive > 0 && c.negative > 0).then_some(r)
            })
        }

        fn with_labels(r: &EvalRecord, f: impl Fn(Label) -> Label) -> EvalRecord {
            EvalRecord::new(r.scores.clone(), r.labels.iter().map(|&l| f(l)).collect()).unwrap()
        }

        fn swapped(l: Label) -> Label {
            match l {
                Label::Normal => Label::Anomaly,
                Label::Anomaly => Label::Normal,
                Label::Ignore => Label::Ignore,
            }
        }

        proptest! {
            #[test]
            fn rank_and_sweep_auroc_agree(r in record(10_000)) {
                prop_assert!((auroc(&r).unwrap() - auroc_sweep(&r).unwrap()).abs() <= 1e-9);
            }

            #[test]
            fn auroc_ignores_monotone_transforms(r in record(500)) {
                let mut t = r.clone();
                t.scores.iter_mut().for_each(|s| *s = s.powi(3) * 7.0 - 2.0);
                prop_assert_eq!(auroc(&r).unwrap(), auroc(&t).unwrap());
            }

            #[test]
            fn label_swap_complements_auroc(r in record(500)) {
                let flipped = with_labels(&r, swapped);
                prop_assert!((auroc(&flipped).unwrap() - (100.0 - auroc(&r).unwrap())).abs() <= 1e-9);
                // swapping labels and reversing the score order together is a no-op
                let mut both = flipped.clone();
                both.scores.iter_mut().for_each(|s| *s = -*s);
                prop_assert!((auroc(&both).unwrap() - auroc(&r).unwrap()).abs() <= 1e-9);
            }

            #[test]
            fn ignore_pixels_change_nothing(r in record(500), extra in prop::collection::vec(any::<f32>(), 1..500)) {
                let mut injected = r.clone();
                for s in extra {
                    injected.push(s, Label::Ignore);
                }
                let (a, b) = (MetricsReport::compute(&r).unwrap(), MetricsReport::compute(&injected).unwrap());
                prop_assert_eq!((a.ap, a.fpr95, a.auroc), (b.ap, b.fpr95, b.auroc));
            }

            #[test]
            fn metrics_ignore_pixel_order(r in record(500), seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut px: Vec<(f32, Label)> = r.scores.iter().copied().zip(r.labels.iter().copied()).collect();
                px.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let (scores, labels) = px.into_iter().unzip();
                let shuffled = EvalRecord::new(scores, labels).unwrap();
                let (a, b) = (MetricsReport::compute(&r).unwrap(), MetricsReport::compute(&shuffled).unwrap());
                prop_assert_eq!((a.ap, a.fpr95, a.auroc), (b.ap, b.fpr95, b.auroc));
            }

            #[test]
            fn single_last_positive_gives_base_rate(negatives in prop::collection::vec(0.5f32..1.0, 1..200)) {
                let r = EvalRecord::from_classes(&[0.25], &negatives);
                let base = 100.0 / (negatives.len() + 1) as f64;
                prop_assert!((average_precision(&r).unwrap() - base).abs() <= 1e-9);
            }
        }
    }
}
