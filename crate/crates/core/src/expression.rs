//! Expression dataset ingestion and per-patient normalization.
//!
//! The input dialect is a reduced GEO series matrix: tab-separated, metadata
//! lines start with `!`, a mandatory `!label` line carries the 0/1 diagnosis
//! per patient, the first non-metadata line is the header
//! (`probe_id<TAB>patient...`) and each following line is one probe.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use ndarray::Array2;

use crate::error::{Error, Result};

/// Probe annotation: probe id to optional gene symbol.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbeTable {
    rows: Vec<(String, Option<String>)>,
    index: HashMap<String, usize>,
}

impl ProbeTable {
    pub fn new(rows: Vec<(String, Option<String>)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        for (i, (probe, _)) in rows.iter().enumerate() {
            if index.insert(probe.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate probe id {probe}")));
            }
        }
        Ok(Self { rows, index })
    }

    /// Parses the two-column `probe_id<TAB>gene_symbol` table. An empty or
    /// missing second field marks an unannotated probe.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let probe = fields.next().unwrap_or("").trim();
            if probe.is_empty() {
                return Err(Error::parse(path, lineno, "empty probe id"));
            }
            if lineno == 1 && probe == "probe_id" {
                continue;
            }
            let gene = fields
                .next()
                .map(str::trim)
                .filter(|g| !g.is_empty())
                .map(str::to_string);
            if fields.next().is_some() {
                return Err(Error::parse(path, lineno, "expected two columns"));
            }
            if !seen.insert(probe.to_string()) {
                return Err(Error::parse(path, lineno, format!("duplicate probe id {probe}")));
            }
            rows.push((probe.to_string(), gene));
        }
        Self::new(rows)
    }

    pub fn gene_of(&self, probe: &str) -> Option<Option<&str>> {
        self.index.get(probe).map(|&i| self.rows[i].1.as_deref())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[(String, Option<String>)] {
        &self.rows
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("probe_id\tgene_symbol\n");
        for (probe, gene) in &self.rows {
            let _ = writeln!(out, "{probe}\t{}", gene.as_deref().unwrap_or(""));
        }
        out
    }
}

/// Dense rows × patients matrix. Rows are probe ids straight after parsing
/// and gene symbols after [`map_probes_to_genes`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    pub row_ids: Vec<String>,
    pub patient_ids: Vec<String>,
    pub values: Array2<f64>,
    pub labels: Vec<u8>,
}

impl ExpressionMatrix {
    pub fn new(
        row_ids: Vec<String>,
        patient_ids: Vec<String>,
        values: Array2<f64>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if values.dim() != (row_ids.len(), patient_ids.len()) {
            return Err(Error::InvalidInput(format!(
                "matrix is {:?} but there are {} row ids and {} patients",
                values.dim(),
                row_ids.len(),
                patient_ids.len()
            )));
        }
        if labels.len() != patient_ids.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} patients",
                labels.len(),
                patient_ids.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidInput(format!("label {bad} is not 0/1")));
        }
        Ok(Self {
            row_ids,
            patient_ids,
            values,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_patients(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn label_of(&self, patient: &str) -> Option<u8> {
        self.patient_ids
            .iter()
            .position(|p| p == patient)
            .map(|i| self.labels[i])
    }

    /// Serializes back into the series-matrix dialect.
    pub fn to_series_matrix(&self) -> String {
        let mut out = String::new();
        out.push_str("!label");
        for l in &self.labels {
            let _ = write!(out, "\t{l}");
        }
        out.push('\n');
        out.push_str("probe_id");
        for p in &self.patient_ids {
            let _ = write!(out, "\t{p}");
        }
        out.push('\n');
        for (r, id) in self.row_ids.iter().enumerate() {
            out.push_str(id);
            for v in self.values.row(r) {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn parse_series_matrix(path: impl AsRef<Path>) -> Result<ExpressionMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series_matrix_str(&text, path)
}

pub fn parse_series_matrix_str(text: &str, path: &Path) -> Result<ExpressionMatrix> {
    let mut labels: Option<(usize, Vec<u8>)> = None;
    let mut header: Option<Vec<String>> = None;
    let mut row_ids = Vec::new();
    let mut seen_rows = HashSet::new();
    let mut flat = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('!') {
            let mut parts = meta.split(['\t', ' ']).filter(|s| !s.is_empty());
            if parts.next() == Some("label") {
                if labels.is_some() {
                    return Err(Error::parse(path, lineno, "duplicate !label line"));
                }
                let parsed = parts
                    .map(|t| match t {
                        "0" => Ok(0u8),
                        "1" => Ok(1u8),
                        other => Err(Error::parse(path, lineno, format!("label {other:?} is not 0/1"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                labels = Some((lineno, parsed));
            }
            continue;
        }
        let mut fields = line.split('\t');
        let first = fields.next().unwrap_or("").trim().to_string();
        match &header {
            None => {
                let patients: Vec<String> = fields.map(|f| f.trim().to_string()).collect();
                if patients.is_empty() {
                    return Err(Error::parse(path, lineno, "header lists no patients"));
                }
                let mut uniq = HashSet::new();
                for p in &patients {
                    if p.is_empty() || !uniq.insert(p.as_str()) {
                        return Err(Error::parse(path, lineno, format!("empty or duplicate patient id {p:?}")));
                    }
                }
                header = Some(patients);
            }
            Some(patients) => {
                if first.is_empty() {
                    return Err(Error::parse(path, lineno, "empty probe id"));
                }
                let before = flat.len();
                for f in fields {
                    let v: f64 = f.trim().parse().map_err(|_| {
                        Error::parse(path, lineno, format!("non-numeric value {f:?}"))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::parse(path, lineno, format!("non-finite value {f:?}")));
                    }
                    flat.push(v);
                }
                let got = flat.len() - before;
                if got != patients.len() {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("row has {got} values, header has {} patients", patients.len()),
                    ));
                }
                if !seen_rows.insert(first.clone()) {
                    return Err(Error::parse(path, lineno, format!("duplicate probe id {first}")));
                }
                row_ids.push(first);
            }
        }
    }

    let patients = header.ok_or_else(|| Error::parse(path, 0, "no header line"))?;
    let (label_line, labels) = labels.ok_or_else(|| Error::parse(path, 0, "missing !label line"))?;
    if labels.len() != patients.len() {
        return Err(Error::parse(
            path,
            label_line,
            format!("{} labels for {} patients", labels.len(), patients.len()),
        ));
    }
    let values = Array2::from_shape_vec((row_ids.len(), patients.len()), flat)
        .expect("row lengths checked while parsing");
    ExpressionMatrix::new(row_ids, patients, values, labels)
}

/// Drops unannotated probes and re-keys the remaining rows by gene symbol.
/// Duplicate gene rows are kept; see [`average_duplicate_probes`].
pub fn map_probes_to_genes(m: &ExpressionMatrix, table: &ProbeTable) -> Result<ExpressionMatrix> {
    let missing: Vec<String> = m
        .row_ids
        .iter()
        .filter(|p| table.gene_of(p).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingProbes(missing));
    }
    let mut keep = Vec::new();
    let mut genes = Vec::new();
    for (r, probe) in m.row_ids.iter().enumerate() {
        if let Some(Some(gene)) = table.gene_of(probe) {
            keep.push(r);
            genes.push(gene.trim().to_string());
        }
    }
    let values = m.values.select(ndarray::Axis(0), &keep);
    ExpressionMatrix::new(genes, m.patient_ids.clone(), values, m.labels.clone())
}

/// Collapses rows sharing a gene symbol into their per-patient mean. Output
/// rows are sorted by gene id, and each mean is summed in sorted value order,
/// so any permutation of the input rows gives a bit-identical result.
pub fn average_duplicate_probes(m: &ExpressionMatrix) -> ExpressionMatrix {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (r, g) in m.row_ids.iter().enumerate() {
        groups.entry(g.as_str()).or_default().push(r);
    }
    let n = m.n_patients();
    let mut values = Array2::zeros((groups.len(), n));
    let mut buf = Vec::new();
    for (out_row, rows) in groups.values().enumerate() {
        for c in 0..n {
            buf.clear();
            buf.extend(rows.iter().map(|&r| m.values[[r, c]]));
            buf.sort_by(f64::total_cmp);
            values[[out_row, c]] = buf.iter().sum::<f64>() / buf.len() as f64;
        }
    }
    ExpressionMatrix {
        row_ids: groups.keys().map(|g| g.to_string()).collect(),
        patient_ids: m.patient_ids.clone(),
        values,
        labels: m.labels.clone(),
    }
}

/// One patient's z-scored expression profile.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientProfile {
    pub patient_id: String,
    pub z_values: BTreeMap<String, f64>,
    pub label: u8,
}

/// z-scores one column with the population standard deviation. Returns `None`
/// when the column is constant (σ is zero relative to the values' scale).
pub fn zscore_column(col: &[f64]) -> Option<Vec<f64>> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let scale = col.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    if !(sd > 1e-12 * scale) {
        return None;
    }
    Some(col.iter().map(|x| (x - mean) / sd).collect())
}

/// Normalizes every patient column. Constant columns become all-zero profiles
/// and are reported through a warning.
pub fn zscore_normalize(m: &ExpressionMatrix) -> Result<Vec<PatientProfile>> {
    if m.n_rows() < 2 {
        return Err(Error::InvalidInput(format!(
            "z-score normalization needs at least 2 genes, got {}",
            m.n_rows()
        )));
    }
    let mut out = Vec::with_capacity(m.n_patients());
    for (c, pid) in m.patient_ids.iter().enumerate() {
        let col: Vec<f64> = m.values.column(c).to_vec();
        let z = zscore_column(&col).unwrap_or_else(|| {
            warn!("patient {pid}: constant expression column, profile set to zero");
            vec![0.0; col.len()]
        });
        out.push(PatientProfile {
            patient_id: pid.clone(),
            z_values: m.row_ids.iter().cloned().zip(z).collect(),
            label: m.labels[c],
        });
    }
    Ok(out)
}

/// Full pre-processing chain for one dataset.
pub fn preprocess(series: &ExpressionMatrix, table: &ProbeTable) -> Result<Vec<PatientProfile>> {
    let by_gene = map_probes_to_genes(series, table)?;
    let averaged = average_duplicate_probes(&by_gene);
    zscore_normalize(&averaged)
}

/// Writes profiles as TSV: `patient_id<TAB>label<TAB>gene...` header, one row
/// per patient. All profiles must share the same gene set.
pub fn profiles_to_tsv(profiles: &[PatientProfile]) -> Result<String> {
    let genes: Vec<&String> = profiles
        .first()
        .map(|p| p.z_values.keys().collect())
        .unwrap_or_default();
    let mut out = String::from("patient_id\tlabel");
    for g in &genes {
        let _ = write!(out, "\t{g}");
    }
    out.push('\n');
    for p in profiles {
        if p.z_values.len() != genes.len() || !p.z_values.keys().zip(&genes).all(|(a, b)| a == *b) {
            return Err(Error::InvalidInput(format!(
                "profile {} has a different gene set",
                p.patient_id
            )));
        }
        let _ = write!(out, "{}\t{}", p.patient_id, p.label);
        for v in p.z_values.values() {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn read_profiles(path: impl AsRef<Path>) -> Result<Vec<PatientProfile>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty profile file"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 2 || cols[0] != "patient_id" || cols[1] != "label" {
        return Err(Error::parse(path, 1, "expected header patient_id<TAB>label<TAB>genes..."));
    }
    let genes = &cols[2..];
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols.len() {
            return Err(Error::parse(path, i + 1, "ragged profile row"));
        }
        let label = match f[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(path, i + 1, format!("bad label {other:?}"))),
        };
        let mut z_values = BTreeMap::new();
        for (g, v) in genes.iter().zip(&f[2..]) {
            let v: f64 = v
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("non-numeric value {v:?}")))?;
            z_values.insert(g.to_string(), v);
        }
        out.push(PatientProfile {
            patient_id: f[0].to_string(),
            z_values,
            label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn p() -> &'static Path {
        Path::new("test.tsv")
    }

    const WELL_FORMED: &str = "!series_title\tdemo\n!label\t1\t0\t1\nprobe_id\tp1\tp2\tp3\npA\t1.0\t2.0\t3.0\npB\t4\t5\t6\n";

    #[test]
    fn parses_well_formed_matrix() {
        let m = parse_series_matrix_str(WELL_FORMED, p()).unwrap();
        assert_eq!(m.values.dim(), (2, 3));
        assert_eq!(m.patient_ids, vec!["p1", "p2", "p3"]);
        assert_eq!(m.label_of("p1"), Some(1));
        assert_eq!(m.label_of("p2"), Some(0));
        assert_eq!(m.label_of("p3"), Some(1));
        assert_eq!(m.values[[1, 2]], 6.0);
    }

    #[test]
    fn space_separated_label_line() {
        let text = "!label 1 0 1\nprobe_id\tp1\tp2\tp3\npA\t1\t2\t3\n";
        let m = parse_series_matrix_str(text, p()).unwrap();
        assert_eq!(m.labels, vec![1, 0, 1]);
    }

    #[test]
    fn ragged_row_names_line() {
        let text = "!label\t1\t0\t1\nprobe_id\tp1\tp2\tp3\npA\t1\t2\t3\npB\t1\t2\n";
        match parse_series_matrix_str(text, p()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_label_and_non_numeric() {
        let text = "probe_id\tp1\npA\t1\n";
        assert!(parse_series_matrix_str(text, p()).unwrap_err().to_string().contains("!label"));
        let text = "!label\t0\nprobe_id\tp1\npA\tx\n";
        match parse_series_matrix_str(text, p()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    fn matrix(rows: &[&str], vals: Array2<f64>) -> ExpressionMatrix {
        let n = vals.ncols();
        ExpressionMatrix::new(
            rows.iter().map(|s| s.to_string()).collect(),
            (0..n).map(|i| format!("p{i}")).collect(),
            vals,
            vec![0; n],
        )
        .unwrap()
    }

    #[test]
    fn unannotated_probes_are_dropped() {
        let t = ProbeTable::new(vec![("pA".into(), Some("G1".into())), ("pB".into(), None)]).unwrap();
        let m = matrix(&["pA", "pB"], array![[1.0], [2.0]]);
        let g = map_probes_to_genes(&m, &t).unwrap();
        assert_eq!(g.row_ids, vec!["G1"]);
        assert_eq!(g.values, array![[1.0]]);
    }

    #[test]
    fn duplicate_genes_pass_through_then_average() {
        let t = ProbeTable::new(vec![
            ("pA".into(), Some("G1".into())),
            ("pB".into(), Some("G1".into())),
            ("pC".into(), Some("G1".into())),
        ])
        .unwrap();
        let m = matrix(&["pA", "pB"], array![[2.0], [4.0]]);
        let g = map_probes_to_genes(&m, &t).unwrap();
        assert_eq!(g.row_ids, vec!["G1", "G1"]);
        assert_eq!(average_duplicate_probes(&g).values, array![[3.0]]);

        let m3 = matrix(&["G1", "G1", "G1"], array![[1.0], [2.0], [6.0]]);
        assert_eq!(average_duplicate_probes(&m3).values, array![[3.0]]);
    }

    #[test]
    fn all_annotated_keeps_row_count() {
        let t = ProbeTable::new(vec![("pA".into(), Some("G1".into())), ("pB".into(), Some("G2".into()))]).unwrap();
        let m = matrix(&["pA", "pB"], array![[1.0], [2.0]]);
        let g = map_probes_to_genes(&m, &t).unwrap();
        assert_eq!(g.n_rows(), 2);
        assert_eq!(average_duplicate_probes(&g), g);
    }

    #[test]
    fn missing_probe_is_listed() {
        let t = ProbeTable::new(vec![("pA".into(), Some("G1".into()))]).unwrap();
        let m = matrix(&["pA", "pZ"], array![[1.0], [2.0]]);
        match map_probes_to_genes(&m, &t).unwrap_err() {
            Error::MissingProbes(v) => assert_eq!(v, vec!["pZ"]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn zscore_known_column() {
        let z = zscore_column(&[1.0, 2.0, 3.0]).unwrap();
        // μ = 2, σ = sqrt(2/3)
        let s = (2.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(z[0], -1.0 / s, epsilon = 1e-12);
        assert_abs_diff_eq!(z[0], -1.224745, epsilon = 1e-6);
        assert_abs_diff_eq!(z[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[2], 1.224745, epsilon = 1e-6);
    }

    #[test]
    fn constant_column_becomes_zero() {
        assert!(zscore_column(&[5.0, 5.0, 5.0]).is_none());
        assert!(zscore_column(&[0.1, 0.1, 0.1]).is_none());
        let m = matrix(&["G1", "G2", "G3"], array![[5.0], [5.0], [5.0]]);
        let prof = zscore_normalize(&m).unwrap();
        assert!(prof[0].z_values.values().all(|&v| v == 0.0));
    }

    #[test]
    fn zscore_needs_two_genes() {
        let m = matrix(&["G1"], array![[5.0]]);
        assert!(zscore_normalize(&m).is_err());
    }

    #[test]
    fn profiles_tsv_roundtrip() {
        let m = matrix(&["G1", "G2", "G3"], array![[1.0, 0.5], [2.0, 0.25], [3.5, 9.0]]);
        let prof = zscore_normalize(&m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tsv");
        fs::write(&path, profiles_to_tsv(&prof).unwrap()).unwrap();
        assert_eq!(read_profiles(&path).unwrap(), prof);
    }

    #[test]
    fn series_matrix_roundtrip() {
        let m = parse_series_matrix_str(WELL_FORMED, p()).unwrap();
        let again = parse_series_matrix_str(&m.to_series_matrix(), p()).unwrap();
        assert_eq!(m, again);
    }
}
