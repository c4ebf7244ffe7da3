//! One function per subcommand. Outputs live under the configured output
//! directory: `profiles/`, `kg/`, `embeddings/`, `folds/` and `reports/`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use genekg_core::embedder::{export_tsv, load_model, save_model, EmbeddingModel};
use genekg_core::expression::{parse_series_matrix, preprocess, profiles_to_tsv, read_profiles, PatientProfile, ProbeTable};
use genekg_core::harness::{
    generate_synthetic, link_datasets, pretrain_domain, reports_to_csv, reports_to_table, stratified_kfold,
    update_with_dataset, Dataset, EvalReport, Experiment, FoldSplit, Method, Setting,
};
use genekg_core::kg::{annotations_to_tsv, build_domain_kg, parse_annotations, KgStats, KnowledgeGraph};
use genekg_core::ntriples::{parse_ntriples, write_ntriples};
use genekg_core::{seed, Error};
use log::{info, warn};

use crate::config::Plan;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn stage(name: &'static str) -> impl Fn(Error) -> CliError {
    move |source| CliError::Stage { stage: name, source }
}

fn parent_dir(path: &Path, st: &'static str) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| stage(st)(Error::Io { path: dir.into(), source: e })),
        None => Ok(()),
    }
}

fn write(path: &Path, contents: &str, st: &'static str) -> Result<()> {
    parent_dir(path, st)?;
    fs::write(path, contents).map_err(|e| stage(st)(Error::Io { path: path.into(), source: e }))
}

pub fn profile_path(plan: &Plan, dataset: &str) -> PathBuf {
    plan.output_dir.join("profiles").join(format!("{dataset}.tsv"))
}

pub fn domain_model_path(plan: &Plan) -> PathBuf {
    plan.output_dir.join("embeddings").join("domain.model")
}

pub fn patient_model_path(plan: &Plan) -> PathBuf {
    plan.output_dir.join("embeddings").join("patients.model")
}

pub fn fold_path(plan: &Plan, dataset: &str) -> PathBuf {
    plan.output_dir.join("folds").join(format!("{dataset}.folds.tsv"))
}

pub fn report_path(plan: &Plan, name: &str, ext: &str) -> PathBuf {
    plan.output_dir.join("reports").join(format!("{name}.{ext}"))
}

fn domain_kg(plan: &Plan, st: &'static str) -> Result<KnowledgeGraph> {
    let ontology = parse_ntriples(&plan.ontology).map_err(stage(st))?;
    let annotations = parse_annotations(&plan.annotations, &plan.pipeline.prefixes).map_err(stage(st))?;
    Ok(build_domain_kg(&ontology, &annotations, &plan.pipeline.prefixes))
}

fn load_profiles(plan: &Plan, st: &'static str) -> Result<Vec<(String, Vec<PatientProfile>)>> {
    plan.datasets
        .iter()
        .map(|d| {
            let path = profile_path(plan, &d.name);
            let p = read_profiles(&path)
                .map_err(|e| e.context(format!("profiles of {} (run `preprocess` first)", d.name)))
                .map_err(stage(st))?;
            Ok((d.name.clone(), p))
        })
        .collect()
}

fn datasets(plan: &Plan, st: &'static str) -> Result<Vec<Dataset>> {
    Ok(load_profiles(plan, st)?
        .into_iter()
        .map(|(name, p)| Dataset::new(&name, p))
        .collect())
}

fn base_model(plan: &Plan, st: &'static str) -> Result<EmbeddingModel> {
    let path = domain_model_path(plan);
    if !path.is_file() {
        return Err(stage(st)(Error::InvalidInput(format!(
            "no base model at {} (run `embed pretrain` first)",
            path.display()
        ))));
    }
    load_model(&path).map_err(stage(st))
}

pub fn gen_synthetic(plan: &Plan) -> Result<()> {
    const ST: &str = "gen-synthetic";
    if plan.datasets.is_empty() {
        return Err(CliError::Config("gen-synthetic needs at least one [[datasets]] entry".into()));
    }
    let t = Instant::now();
    let data = generate_synthetic(&plan.synthetic, &plan.pipeline.prefixes).map_err(stage(ST))?;
    write(&plan.ontology, &write_ntriples(&data.ontology), ST)?;
    write(&plan.annotations, &annotations_to_tsv(&data.annotations, &plan.pipeline.prefixes), ST)?;
    for (entry, ds) in plan.datasets.iter().zip(&data.datasets) {
        write(&entry.series, &ds.series.to_series_matrix(), ST)?;
        write(&entry.probes, &ds.probes.to_tsv(), ST)?;
        info!(
            "stage={ST} dataset={} patients={} genes={} module_genes={} rule_accuracy={:.3}",
            entry.name,
            ds.series.n_patients(),
            ds.genes.len(),
            ds.module_genes.len(),
            ds.rule_accuracy
        );
    }
    info!(
        "stage={ST} triples={} annotations={} duration_ms={}",
        data.ontology.len(),
        data.annotations.len(),
        t.elapsed().as_millis()
    );
    Ok(())
}

pub fn preprocess_all(plan: &Plan) -> Result<()> {
    const ST: &str = "preprocess";
    for d in &plan.datasets {
        let t = Instant::now();
        let ctx = |e: Error| stage(ST)(e.context(format!("dataset {}", d.name)));
        let series = parse_series_matrix(&d.series).map_err(ctx)?;
        let table = ProbeTable::from_path(&d.probes).map_err(ctx)?;
        let profiles = preprocess(&series, &table).map_err(ctx)?;
        write(&profile_path(plan, &d.name), &profiles_to_tsv(&profiles).map_err(ctx)?, ST)?;
        info!(
            "stage={ST} dataset={} probes={} patients={} genes={} duration_ms={}",
            d.name,
            series.n_rows(),
            profiles.len(),
            profiles.first().map_or(0, |p| p.z_values.len()),
            t.elapsed().as_millis()
        );
    }
    Ok(())
}

fn stats_line(name: &str, s: &KgStats) -> String {
    format!("{name}\t{}\t{}\t{}\n", s.n_triples, s.n_relation_types, s.n_classes)
}

pub fn build_kg(plan: &Plan) -> Result<KgStats> {
    const ST: &str = "build-kg";
    let t = Instant::now();
    let domain = domain_kg(plan, ST)?;
    let ds = datasets(plan, ST)?;
    let refs: Vec<&Dataset> = ds.iter().collect();
    let full = link_datasets(&domain, &refs, &plan.pipeline);
    let dir = plan.output_dir.join("kg");
    write(&dir.join("domain.nt"), &domain.to_ntriples(), ST)?;
    write(&dir.join("full.nt"), &full.to_ntriples(), ST)?;
    write(&dir.join("zvalues.tsv"), &full.z_table_tsv(), ST)?;
    let (ds_stats, full_stats) = (domain.stats(), full.stats());
    let table = format!(
        "graph\ttriples\trelation_types\tclasses\n{}{}",
        stats_line("domain", &ds_stats),
        stats_line("full", &full_stats)
    );
    write(&dir.join("stats.tsv"), &table, ST)?;
    print!("{table}");
    info!(
        "stage={ST} triples={} relation_types={} classes={} duration_ms={}",
        full_stats.n_triples,
        full_stats.n_relation_types,
        full_stats.n_classes,
        t.elapsed().as_millis()
    );
    Ok(full_stats)
}

pub fn embed_pretrain(plan: &Plan) -> Result<()> {
    const ST: &str = "embed";
    let t = Instant::now();
    let domain = domain_kg(plan, ST)?;
    let model = pretrain_domain(&domain, &plan.pipeline).map_err(stage(ST))?;
    let path = domain_model_path(plan);
    parent_dir(&path, ST)?;
    save_model(&model, path).map_err(stage(ST))?;
    info!(
        "stage={ST} mode=pretrain vocab={} dim={} duration_ms={}",
        model.vocab().len(),
        model.dim(),
        t.elapsed().as_millis()
    );
    Ok(())
}

pub fn embed_update(plan: &Plan) -> Result<()> {
    const ST: &str = "embed";
    let t = Instant::now();
    let mut model = base_model(plan, ST)?;
    let domain = domain_kg(plan, ST)?;
    let ds = datasets(plan, ST)?;
    let refs: Vec<&Dataset> = ds.iter().collect();
    let kg = link_datasets(&domain, &refs, &plan.pipeline);
    let mut added = 0;
    for d in &ds {
        added += update_with_dataset(&mut model, &kg, d, &plan.pipeline).map_err(stage(ST))?;
    }
    let path = patient_model_path(plan);
    parent_dir(&path, ST)?;
    save_model(&model, path).map_err(stage(ST))?;
    info!(
        "stage={ST} mode=update datasets={} new_tokens={added} vocab={} duration_ms={}",
        ds.len(),
        model.vocab().len(),
        t.elapsed().as_millis()
    );
    Ok(())
}

/// Loads the persisted fold split of every dataset, creating it on first
/// use. A file written under a different seed or k is replaced.
fn folds(plan: &Plan, ds: &[Dataset]) -> Result<Vec<FoldSplit>> {
    const ST: &str = "evaluate";
    let mut out = Vec::new();
    for d in ds {
        let path = fold_path(plan, d.name());
        let want_seed = seed::derive(plan.pipeline.seed, &format!("folds/{}", d.name()));
        if let Ok(text) = fs::read_to_string(&path) {
            match FoldSplit::from_tsv(&text, &path) {
                Ok(f) if f.seed == want_seed && f.k() == plan.pipeline.k && f.n() == d.len() && f.dataset == d.name() => {
                    out.push(f);
                    continue;
                }
                Ok(_) => warn!("{} was written for another seed or size, regenerating", path.display()),
                Err(e) => warn!("ignoring unreadable fold file: {e}"),
            }
        }
        let f = stratified_kfold(d.name(), d.labels(), plan.pipeline.k, want_seed).map_err(stage(ST))?;
        write(&path, &f.to_tsv(), ST)?;
        out.push(f);
    }
    Ok(out)
}

fn experiment(plan: &Plan, st: &'static str) -> Result<Experiment> {
    let domain = domain_kg(plan, st)?;
    let base = base_model(plan, st)?;
    let ds = datasets(plan, st)?;
    let splits = folds(plan, &ds)?;
    Experiment::with_folds(plan.pipeline.clone(), domain, base, ds, splits).map_err(stage(st))
}

fn save_reports(plan: &Plan, name: &str, reports: &[EvalReport], st: &'static str) -> Result<()> {
    write(&report_path(plan, name, "csv"), &reports_to_csv(reports), st)?;
    let table = reports_to_table(reports);
    write(&report_path(plan, name, "txt"), &table, st)?;
    print!("{table}");
    Ok(())
}

pub fn evaluate(plan: &Plan) -> Result<Vec<EvalReport>> {
    const ST: &str = "evaluate";
    let needs_siblings = plan.settings.iter().any(|s| *s != Setting::Single);
    if needs_siblings && plan.datasets.len() < 2 {
        return Err(CliError::Config("multi and transfer settings need at least two datasets".into()));
    }
    let exp = experiment(plan, ST)?;
    let all: Vec<&str> = plan.datasets.iter().map(|d| d.name.as_str()).collect();
    let mut every = Vec::new();
    for &setting in &plan.settings {
        let t = Instant::now();
        let mut reports = Vec::new();
        for target in &plan.eval_targets {
            let others: Vec<&str> = all.iter().copied().filter(|n| n != target).collect();
            for &method in &plan.methods {
                let r = match setting {
                    Setting::Single => exp.run_single(target, method),
                    Setting::Multi => exp.run_multi(target, &others, method),
                    Setting::Transfer => exp.run_transfer(target, &others, method),
                }
                .map_err(stage(ST))?;
                reports.push(r);
            }
        }
        save_reports(plan, setting.as_str(), &reports, ST)?;
        info!(
            "stage={ST} setting={setting} reports={} duration_ms={}",
            reports.len(),
            t.elapsed().as_millis()
        );
        every.extend(reports);
    }
    Ok(every)
}

pub fn ablate(plan: &Plan) -> Result<Vec<EvalReport>> {
    const ST: &str = "ablate";
    let t = Instant::now();
    let exp = experiment(plan, ST)?;
    let mut reports = Vec::new();
    for target in &plan.ablation_targets {
        reports.push(exp.run_single(target, Method::Gcn).map_err(stage(ST))?);
        for &mode in &plan.ablation_modes {
            reports.push(exp.run_ablation(target, mode).map_err(stage(ST))?);
        }
    }
    save_reports(plan, "ablation", &reports, ST)?;
    info!("stage={ST} reports={} duration_ms={}", reports.len(), t.elapsed().as_millis());
    Ok(reports)
}

pub fn export_embeddings(plan: &Plan) -> Result<usize> {
    const ST: &str = "export-embeddings";
    let path = patient_model_path(plan);
    if !path.is_file() {
        return Err(stage(ST)(Error::InvalidInput(format!(
            "no patient model at {} (run `embed update` first)",
            path.display()
        ))));
    }
    let profiles = load_profiles(plan, ST)?;
    let mut known = BTreeSet::new();
    for (name, ps) in &profiles {
        for p in ps {
            known.insert(format!("{name}/{}", p.patient_id));
        }
    }
    let wanted: Vec<String> = if plan.export_patients.is_empty() {
        profiles
            .iter()
            .flat_map(|(name, ps)| ps.iter().map(move |p| format!("{name}/{}", p.patient_id)))
            .collect()
    } else {
        if let Some(p) = plan.export_patients.iter().find(|p| !known.contains(*p)) {
            return Err(CliError::Config(format!("export patient {p:?} is not in any profile file")));
        }
        plan.export_patients.clone()
    };
    let model = load_model(&path).map_err(stage(ST))?;
    let prefixes = &plan.pipeline.prefixes;
    let tokens: Vec<String> = wanted
        .iter()
        .map(|w| {
            let (d, p) = w.split_once('/').expect("checked above");
            prefixes.patient_iri(d, p)
        })
        .collect();
    let tsv = export_tsv(&model, tokens.iter().map(String::as_str)).map_err(stage(ST))?;
    write(&plan.output_dir.join("embeddings").join("patients.tsv"), &tsv, ST)?;
    info!("stage={ST} patients={} dim={}", tokens.len(), model.dim());
    Ok(tokens.len())
}
