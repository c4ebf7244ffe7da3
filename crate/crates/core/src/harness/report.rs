//! Evaluation reports: per-fold rows, aggregates, CSV and a plain-text table.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use super::metrics::{compute_metrics, detect_degenerate, ConfusionCounts, Metrics};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    Single,
    Multi,
    Transfer,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Single => "single",
            Setting::Multi => "multi",
            Setting::Transfer => "transfer",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "single" => Ok(Setting::Single),
            "multi" => Ok(Setting::Multi),
            "transfer" => Ok(Setting::Transfer),
            _ => Err(Error::InvalidParameter(format!(
                "unknown setting {s:?} (expected single, multi or transfer)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    BaselineAll,
    BaselineOverlap,
    MlpEmbed,
    Gcn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::BaselineAll, Method::BaselineOverlap, Method::MlpEmbed, Method::Gcn];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::BaselineAll => "baseline_all",
            Method::BaselineOverlap => "baseline_overlap",
            Method::MlpEmbed => "mlp_embed",
            Method::Gcn => "gcn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown method {s:?} (expected baseline_all, baseline_overlap, mlp_embed or gcn)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationMode {
    RandomFeatures,
    UnweightedEdges,
}

impl AblationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::RandomFeatures => "random_features",
            AblationMode::UnweightedEdges => "unweighted_edges",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "random_features" => Ok(AblationMode::RandomFeatures),
            "unweighted_edges" => Ok(AblationMode::UnweightedEdges),
            _ => Err(Error::InvalidParameter(format!(
                "unknown ablation mode {s:?} (expected random_features or unweighted_edges)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    /// `None` for the transfer setting, which has a single test set.
    pub fold: Option<usize>,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub degenerate: bool,
}

impl FoldResult {
    pub fn new(fold: Option<usize>, truth: &[u8], predicted: &[u8]) -> Self {
        let counts = ConfusionCounts::from_predictions(truth, predicted);
        Self {
            fold,
            counts,
            metrics: compute_metrics(&counts),
            degenerate: detect_degenerate(predicted),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub setting: Setting,
    pub method: Method,
    pub dataset: String,
    pub ablation: Option<AblationMode>,
    pub folds: Vec<FoldResult>,
    /// Set when the method could not run at all, e.g. an empty gene overlap.
    pub error: Option<String>,
    /// Transfer only: test-dataset label reads that happened before
    /// evaluation started.
    pub test_label_reads_before_eval: Option<usize>,
}

fn mean(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count();
    if n == 0 {
        return f64::NAN;
    }
    v.sum::<f64>() / n as f64
}

/// Sample standard deviation; 0 for a single value.
fn std(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v.clone());
    (v.map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

impl EvalReport {
    pub fn new(setting: Setting, method: Method, dataset: &str) -> Self {
        Self {
            setting,
            method,
            dataset: dataset.to_string(),
            ablation: None,
            folds: Vec::new(),
            error: None,
            test_label_reads_before_eval: None,
        }
    }

    /// Method column value, with the ablation appended when present.
    pub fn method_label(&self) -> String {
        match self.ablation {
            Some(a) => format!("{}+{}", self.method, a),
            None => self.method.to_string(),
        }
    }

    fn column(&self, f: fn(&Metrics) -> f64) -> impl Iterator<Item = f64> + Clone + '_ {
        self.folds.iter().map(move |r| f(&r.metrics))
    }

    pub fn mean(&self) -> Option<Metrics> {
        if self.folds.is_empty() {
            return None;
        }
        Some(Metrics {
            precision: mean(self.column(|m| m.precision)),
            recall: mean(self.column(|m| m.recall)),
            f1: mean(self.column(|m| m.f1)),
            waf: mean(self.column(|m| m.waf)),
        })
    }

    pub fn std(&self) -> Option<Metrics> {
        if self.folds.is_empty() {
            return None;
        }
        Some(Metrics {
            precision: std(self.column(|m| m.precision)),
            recall: std(self.column(|m| m.recall)),
            f1: std(self.column(|m| m.f1)),
            waf: std(self.column(|m| m.waf)),
        })
    }

    pub fn any_degenerate(&self) -> bool {
        self.folds.iter().any(|f| f.degenerate)
    }

    pub const CSV_HEADER: &'static str = "setting,method,dataset,fold,precision,recall,f1,waf,degenerate";

    /// CSV rows without the header: one per fold, then `mean` and `std`.
    /// A transfer run has a single `all` row. A failed run gets a single
    /// `error` row with empty metric fields.
    pub fn csv_rows(&self) -> String {
        let prefix = format!("{},{},{}", self.setting, self.method_label(), self.dataset);
        let mut out = String::new();
        if self.error.is_some() {
            let _ = writeln!(out, "{prefix},error,,,,,");
            return out;
        }
        let row = |out: &mut String, fold: &str, m: &Metrics, deg: &str| {
            let _ = writeln!(out, "{prefix},{fold},{},{},{},{},{deg}", m.precision, m.recall, m.f1, m.waf);
        };
        for f in &self.folds {
            let name = f.fold.map_or_else(|| "all".to_string(), |i| i.to_string());
            row(&mut out, &name, &f.metrics, if f.degenerate { "true" } else { "false" });
        }
        if self.folds.iter().all(|f| f.fold.is_none()) {
            return out;
        }
        if let (Some(m), Some(s)) = (self.mean(), self.std()) {
            row(&mut out, "mean", &m, if self.any_degenerate() { "true" } else { "false" });
            row(&mut out, "std", &s, "");
        }
        out
    }
}

pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{}\n", EvalReport::CSV_HEADER);
    for r in reports {
        out.push_str(&r.csv_rows());
    }
    out
}

/// Plain-text table, mean ± std per metric. `*` marks a report with at
/// least one fold whose predictions were all the same label.
pub fn reports_to_table(reports: &[EvalReport]) -> String {
    let mut rows = vec![[
        "setting".to_string(),
        "method".into(),
        "dataset".into(),
        "precision".into(),
        "recall".into(),
        "f1".into(),
        "waf".into(),
    ]];
    for r in reports {
        let mut row = [
            r.setting.to_string(),
            r.method_label(),
            r.dataset.clone(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ];
        match (&r.error, r.mean(), r.std()) {
            (Some(e), _, _) => row[3] = format!("error: {e}"),
            (None, Some(m), Some(s)) => {
                let star = if r.any_degenerate() { "*" } else { "" };
                let cell = |a: f64, b: f64| format!("{a:.3} ± {b:.3}{star}");
                row[3] = cell(m.precision, s.precision);
                row[4] = cell(m.recall, s.recall);
                row[5] = cell(m.f1, s.f1);
                row[6] = cell(m.waf, s.waf);
            }
            _ => row[3] = "no results".into(),
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..7)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    if reports.iter().any(EvalReport::any_degenerate) {
        out.push_str("* predicts a single label for every instance of at least one test set\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        let mut r = EvalReport::new(Setting::Single, Method::Gcn, "d1");
        r.folds.push(FoldResult::new(Some(0), &[1, 0, 1, 0], &[1, 0, 0, 0]));
        r.folds.push(FoldResult::new(Some(1), &[1, 0, 1, 0], &[1, 1, 1, 1]));
        r
    }

    #[test]
    fn mean_and_std_follow_folds() {
        let r = report();
        let m = r.mean().unwrap();
        let w: Vec<f64> = r.folds.iter().map(|f| f.metrics.waf).collect();
        assert!((m.waf - (w[0] + w[1]) / 2.0).abs() < 1e-15);
        let s = r.std().unwrap();
        assert!((s.waf - (w[0] - w[1]).abs() / 2f64.sqrt()).abs() < 1e-12);
        assert!(r.any_degenerate());
        assert!(!r.folds[0].degenerate);
    }

    #[test]
    fn csv_layout() {
        let csv = reports_to_csv(&[report()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], EvalReport::CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("single,gcn,d1,0,"));
        assert!(lines[2].ends_with(",true"));
        assert!(lines[3].starts_with("single,gcn,d1,mean,"));
        for l in &lines {
            assert_eq!(l.split(',').count(), 9);
        }
        let mut t = EvalReport::new(Setting::Transfer, Method::Gcn, "d2");
        t.folds.push(FoldResult::new(None, &[1, 0], &[1, 0]));
        let rows = t.csv_rows();
        assert_eq!(rows.lines().count(), 1);
        assert!(rows.starts_with("transfer,gcn,d2,all,1,1,1,1,false"));
    }

    #[test]
    fn table_marks_degenerate() {
        let t = reports_to_table(&[report()]);
        assert!(t.contains('*'));
        let mut e = EvalReport::new(Setting::Multi, Method::BaselineOverlap, "d1");
        e.error = Some("no common genes across datasets".into());
        assert!(reports_to_table(&[e.clone()]).contains("no common genes"));
        assert!(e.csv_rows().contains(",error,"));
    }

    #[test]
    fn names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("svm".parse::<Method>().is_err());
        assert_eq!("transfer".parse::<Setting>().unwrap(), Setting::Transfer);
        assert_eq!("unweighted_edges".parse::<AblationMode>().unwrap(), AblationMode::UnweightedEdges);
    }
}
