use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use genekg_core::kg::{build_domain_kg, parse_annotations, Prefixes};
use genekg_core::ntriples::parse_ntriples;

const TINY: &str = r#"
[run]
seed = 3
jobs = 2

[paths]
ontology = "data/ontology.nt"
annotations = "data/annotations.tsv"
output_dir = "out"

[[datasets]]
name = "A"
series = "data/A_series.txt"
probes = "data/A_probes.tsv"

[[datasets]]
name = "B"
series = "data/B_series.txt"
probes = "data/B_probes.tsv"

[synthetic]
n_classes = 40
module_size = 5
n_genes_per_dataset = 30
n_patients = 20
module_gene_fraction = 0.2

[walks]
max_walks = 12

[embedding]
dim = 12
epochs = 2

[gcn]
hidden = 16
epochs = 30

[mlp]
epochs = 30
"#;

fn genekg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genekg"))
        .arg("--config")
        .arg(dir.join("genekg.toml"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = genekg(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("genekg.toml"), format!("{TINY}{extra}")).unwrap();
    ok(dir.path(), &["gen-synthetic"]);
    dir
}

fn read(p: PathBuf) -> String {
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn preprocess_writes_one_profile_per_dataset_deterministically() {
    let dir = setup("");
    let d = dir.path();
    ok(d, &["preprocess"]);
    let first: Vec<String> = ["A", "B"].iter().map(|n| read(d.join(format!("out/profiles/{n}.tsv")))).collect();
    assert_eq!(fs::read_dir(d.join("out/profiles")).unwrap().count(), 2);
    assert_eq!(first[0].lines().count(), 21);
    ok(d, &["preprocess"]);
    let again: Vec<String> = ["A", "B"].iter().map(|n| read(d.join(format!("out/profiles/{n}.tsv")))).collect();
    assert_eq!(first, again);
}

#[test]
fn missing_probe_table_is_a_config_error() {
    let dir = setup("");
    let d = dir.path();
    fs::remove_file(d.join("data/B_probes.tsv")).unwrap();
    let out = genekg(d, &["preprocess"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("probe table"));
    assert!(!d.join("out").exists(), "no work may happen before validation");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("genekg.toml"), "[walks]\nmax_walk = 5\n").unwrap();
    let out = genekg(dir.path(), &["gen-synthetic"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max_walk"));
}

#[test]
fn build_kg_writes_triples_and_matching_stats() {
    let dir = setup("");
    let d = dir.path();
    ok(d, &["preprocess"]);
    let out = ok(d, &["build-kg"]);
    let stats = read(d.join("out/kg/stats.tsv"));
    assert_eq!(String::from_utf8_lossy(&out.stdout), stats);

    let prefixes = Prefixes::default();
    let ontology = parse_ntriples(d.join("data/ontology.nt")).unwrap();
    let ann = parse_annotations(d.join("data/annotations.tsv"), &prefixes).unwrap();
    let s = build_domain_kg(&ontology, &ann, &prefixes).stats();
    let domain_row = stats.lines().find(|l| l.starts_with("domain\t")).unwrap();
    assert_eq!(domain_row, format!("domain\t{}\t{}\t{}", s.n_triples, s.n_relation_types, s.n_classes));

    let written = parse_ntriples(d.join("out/kg/domain.nt")).unwrap();
    assert_eq!(written.len(), s.n_triples);
    let full = parse_ntriples(d.join("out/kg/full.nt")).unwrap();
    let full_row: Vec<usize> = stats.lines().nth(2).unwrap().split('\t').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(full.len(), full_row[0]);
    assert!(full.len() > written.len());
}

#[test]
fn bad_ontology_line_reports_its_number() {
    let dir = setup("");
    let d = dir.path();
    ok(d, &["preprocess"]);
    let path = d.join("data/ontology.nt");
    let mut text = read(path.clone());
    let line = text.lines().count() + 1;
    text.push_str("<http://x/a> <http://x/p> broken .\n");
    fs::write(&path, text).unwrap();
    let out = genekg(d, &["build-kg"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("ontology.nt:{line}:")), "{err}");
    assert!(err.contains("build-kg"));
}

#[test]
fn embed_update_needs_a_base_model() {
    let dir = setup("");
    let d = dir.path();
    ok(d, &["preprocess"]);
    let out = genekg(d, &["embed", "update"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("embed pretrain"));
    ok(d, &["embed", "pretrain"]);
    ok(d, &["embed", "update"]);
    assert!(d.join("out/embeddings/patients.model").is_file());
}

#[test]
fn evaluate_settings_and_export() {
    let dir = setup("[export]\npatients = [\"A/GSM10003\", \"B/GSM20001\"]\n");
    let d = dir.path();
    for args in [&["preprocess"][..], &["build-kg"], &["embed", "pretrain"], &["embed", "update"]] {
        ok(d, args);
    }

    let out = genekg(d, &["evaluate", "--method", "gcn,svm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("svm"));

    ok(d, &["evaluate", "--setting", "single", "--method", "gcn"]);
    let csv = read(d.join("out/reports/single.csv"));
    for ds in ["A", "B"] {
        let rows: Vec<&str> = csv.lines().filter(|l| l.starts_with(&format!("single,gcn,{ds},"))).collect();
        let folds: Vec<&str> = rows.iter().map(|r| r.split(',').nth(3).unwrap()).collect();
        assert_eq!(folds, ["0", "1", "2", "3", "4", "mean", "std"]);
    }
    assert!(d.join("out/folds/A.folds.tsv").is_file());

    ok(d, &["evaluate", "--setting", "transfer", "--method", "mlp_embed"]);
    let csv = read(d.join("out/reports/transfer.csv"));
    let rows: Vec<&str> = csv.lines().skip(1).filter(|l| l.contains(",A,")).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("transfer,mlp_embed,A,all,"));

    ok(d, &["export-embeddings"]);
    let tsv = read(d.join("out/embeddings/patients.tsv"));
    assert_eq!(tsv.lines().count(), 2);
    assert!(tsv.lines().all(|l| l.split('\t').count() == 13));

    let cfg = read(d.join("genekg.toml")).replace("[export]\npatients = [\"A/GSM10003\", \"B/GSM20001\"]\n", "");
    fs::write(d.join("genekg.toml"), &cfg).unwrap();
    ok(d, &["export-embeddings"]);
    assert_eq!(read(d.join("out/embeddings/patients.tsv")).lines().count(), 40);

    fs::write(d.join("genekg.toml"), format!("{cfg}[export]\npatients = [\"A/GSM99999\"]\n")).unwrap();
    let out = genekg(d, &["export-embeddings"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("GSM99999"));
}

#[test]
fn ablate_writes_three_variants_per_dataset() {
    let dir = setup("[ablation]\ndatasets = [\"B\"]\n");
    let d = dir.path();
    for args in [&["preprocess"][..], &["embed", "pretrain"]] {
        ok(d, args);
    }
    ok(d, &["ablate"]);
    let csv = read(d.join("out/reports/ablation.csv"));
    let methods: std::collections::BTreeSet<&str> =
        csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(
        methods.into_iter().collect::<Vec<_>>(),
        ["gcn", "gcn+random_features", "gcn+unweighted_edges"]
    );
    assert!(csv.lines().skip(1).all(|l| l.contains(",B,")));
}
