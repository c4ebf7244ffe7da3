//! Binary confusion counts and the derived scores.

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    /// Class 1 is the positive (diseased) class.
    pub fn from_predictions(truth: &[u8], predicted: &[u8]) -> Self {
        assert_eq!(truth.len(), predicted.len(), "truth and prediction lengths differ");
        let mut c = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (1, 1) => c.tp += 1,
                (0, 1) => c.fp += 1,
                (1, 0) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Support of class 0 and class 1.
    pub fn supports(&self) -> (u64, u64) {
        (self.tn + self.fp, self.tp + self.fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Positive-class precision, recall and F1.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Support-weighted mean of both classes' F1.
    pub waf: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Precision, recall, F1 for class 1 and the weighted-average F1. Empty
/// denominators score 0.
pub fn compute_metrics(c: &ConfusionCounts) -> Metrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1_pos = f1(precision, recall);
    let f1_neg = f1(ratio(c.tn, c.tn + c.fn_), ratio(c.tn, c.tn + c.fp));
    let (n0, n1) = c.supports();
    let waf = if n0 + n1 == 0 {
        0.0
    } else {
        (n0 as f64 * f1_neg + n1 as f64 * f1_pos) / (n0 + n1) as f64
    };
    Metrics {
        precision,
        recall,
        f1: f1_pos,
        waf,
    }
}

/// Class-0 F1, used when checking the WAF decomposition.
pub fn negative_f1(c: &ConfusionCounts) -> f64 {
    f1(ratio(c.tn, c.tn + c.fn_), ratio(c.tn, c.tn + c.fp))
}

/// True when every prediction carries the same label.
pub fn detect_degenerate(predictions: &[u8]) -> bool {
    predictions.windows(2).all(|w| w[0] == w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let c = ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 6 };
        let m = compute_metrics(&c);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        // class 0: precision 6/7, recall 6/7; supports n1 = 3, n0 = 7
        assert!((negative_f1(&c) - 6.0 / 7.0).abs() < 1e-15);
        assert!((m.waf - (3.0 * (2.0 / 3.0) + 7.0 * (6.0 / 7.0)) / 10.0).abs() < 1e-15);
        assert!((m.waf - 0.8).abs() < 1e-12);
    }

    #[test]
    fn empty_denominators() {
        let m = compute_metrics(&ConfusionCounts { tp: 0, fp: 0, fn_: 3, tn: 2 });
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn perfect() {
        let m = compute_metrics(&ConfusionCounts { tp: 4, fp: 0, fn_: 0, tn: 5 });
        assert_eq!((m.precision, m.recall, m.f1, m.waf), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn degenerate() {
        assert!(detect_degenerate(&[1, 1, 1, 1]));
        assert!(!detect_degenerate(&[1, 0, 1]));
        assert!(detect_degenerate(&[0]));
    }

    #[test]
    fn counts_from_predictions() {
        let c = ConfusionCounts::from_predictions(&[1, 1, 0, 0, 1], &[1, 0, 0, 1, 1]);
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 1 });
        assert_eq!(c.total(), 5);
    }
}
