//! TOML run configuration. Every section and key is optional; anything left
//! out takes the stage defaults, so an empty file is a valid config.

use std::fs;
use std::path::{Path, PathBuf};

use genekg_core::classifiers::MlpParams;
use genekg_core::embedder::SkipGramParams;
use genekg_core::gnn::{Aggregation, GcnParams};
use genekg_core::harness::{AblationMode, Method, PipelineConfig, Setting, SyntheticSpec};
use genekg_core::kg::Prefixes;
use genekg_core::walker::WalkParams;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub paths: PathsSection,
    pub datasets: Vec<DatasetEntry>,
    pub kg: KgSection,
    pub walks: WalksSection,
    pub embedding: EmbeddingSection,
    pub gcn: GcnSection,
    pub mlp: MlpSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
    pub synthetic: SyntheticSection,
    pub export: ExportSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self { seed: p.seed, jobs: p.jobs }
    }
}

/// Relative paths are resolved against the directory holding the config.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub ontology: PathBuf,
    pub annotations: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            ontology: "data/ontology.nt".into(),
            annotations: "data/annotations.tsv".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    pub series: PathBuf,
    pub probes: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgSection {
    pub go_prefix: String,
    pub gene_prefix: String,
    pub patient_prefix: String,
    pub has_function: String,
    pub expresses: String,
    pub link_threshold: f64,
}

impl Default for KgSection {
    fn default() -> Self {
        let p = Prefixes::default();
        Self {
            go_prefix: p.go,
            gene_prefix: p.gene,
            patient_prefix: p.patient,
            has_function: p.has_function,
            expresses: p.expresses,
            link_threshold: PipelineConfig::default().link_threshold,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalksSection {
    pub max_walks: usize,
    pub max_depth: usize,
}

impl Default for WalksSection {
    fn default() -> Self {
        let w = WalkParams::default();
        Self {
            max_walks: w.max_walks,
            max_depth: w.max_depth,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub min_count: u64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        let s = SkipGramParams::default();
        Self {
            dim: s.dim,
            window: s.window,
            epochs: s.epochs,
            negatives: s.negatives,
            learning_rate: s.learning_rate,
            min_count: s.min_count,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcnSection {
    pub hidden: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub aggregation: String,
    pub epochs: usize,
}

impl Default for GcnSection {
    fn default() -> Self {
        let g = GcnParams::default();
        Self {
            hidden: g.hidden,
            layers: g.layers,
            learning_rate: g.learning_rate,
            dropout: g.dropout,
            aggregation: "avg".into(),
            epochs: g.epochs,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpSection {
    pub hidden: Vec<usize>,
    pub activation: String,
    pub solver: String,
    pub alpha: f64,
    /// `constant` or `adaptive`.
    pub schedule: String,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MlpSection {
    fn default() -> Self {
        let m = MlpParams::default();
        Self {
            hidden: m.hidden,
            activation: "relu".into(),
            solver: "adam".into(),
            alpha: m.alpha,
            schedule: "constant".into(),
            learning_rate: m.learning_rate,
            epochs: m.epochs,
            batch_size: m.batch_size,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub k: usize,
    pub grid_search: bool,
    pub settings: Vec<String>,
    pub methods: Vec<String>,
    /// Target datasets; empty means all of them.
    pub datasets: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            k: PipelineConfig::default().k,
            grid_search: false,
            settings: ["single", "multi", "transfer"].map(String::from).to_vec(),
            methods: Method::ALL.iter().map(|m| m.to_string()).collect(),
            datasets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub modes: Vec<String>,
    pub datasets: Vec<String>,
    pub random_feature_scale: f64,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            modes: vec!["random_features".into(), "unweighted_edges".into()],
            datasets: Vec::new(),
            random_feature_scale: PipelineConfig::default().random_feature_scale,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub n_classes: usize,
    pub module_size: usize,
    pub n_genes_per_dataset: usize,
    pub n_patients: usize,
    pub signal_shift: f64,
    pub overlap_fraction: f64,
    pub seed: u64,
    pub module_gene_fraction: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            n_classes: s.n_classes,
            module_size: s.module_size,
            n_genes_per_dataset: s.n_genes_per_dataset,
            n_patients: s.n_patients,
            signal_shift: s.signal_shift,
            overlap_fraction: s.overlap_fraction,
            seed: s.seed,
            module_gene_fraction: s.module_gene_fraction,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    /// `dataset/patient_id` entries; empty exports every patient.
    pub patients: Vec<String>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub settings: Vec<String>,
    pub methods: Vec<String>,
}

/// Which input files a command reads directly from the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Nothing,
    Series,
    Domain,
}

/// A config whose every value has been checked and converted.
#[derive(Debug, Clone)]
pub struct Plan {
    pub pipeline: PipelineConfig,
    pub synthetic: SyntheticSpec,
    pub ontology: PathBuf,
    pub annotations: PathBuf,
    pub output_dir: PathBuf,
    pub datasets: Vec<DatasetEntry>,
    pub settings: Vec<Setting>,
    pub methods: Vec<Method>,
    pub eval_targets: Vec<String>,
    pub ablation_modes: Vec<AblationMode>,
    pub ablation_targets: Vec<String>,
    pub export_patients: Vec<String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.ontology);
        fix(&mut self.paths.annotations);
        fix(&mut self.paths.output_dir);
        for d in &mut self.datasets {
            fix(&mut d.series);
            fix(&mut d.probes);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(j) = o.jobs {
            self.run.jobs = j;
        }
        if !o.settings.is_empty() {
            self.eval.settings = o.settings.clone();
        }
        if !o.methods.is_empty() {
            self.eval.methods = o.methods.clone();
        }
    }

    /// Checks everything a command will use before it does any work.
    pub fn plan(&self, needs: Needs) -> Result<Plan, CliError> {
        let invalid = |m: String| Err(CliError::Config(m));
        let core = |e: genekg_core::Error| CliError::Config(e.to_string());

        let mut names = std::collections::BTreeSet::new();
        for d in &self.datasets {
            let ok = !d.name.is_empty()
                && d.name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
            if !ok {
                return invalid(format!("dataset name {:?} must be non-empty [A-Za-z0-9_.-]", d.name));
            }
            if !names.insert(d.name.as_str()) {
                return invalid(format!("dataset {} listed twice", d.name));
            }
        }

        let prefixes = Prefixes {
            go: self.kg.go_prefix.clone(),
            gene: self.kg.gene_prefix.clone(),
            patient: self.kg.patient_prefix.clone(),
            has_function: self.kg.has_function.clone(),
            expresses: self.kg.expresses.clone(),
        };
        let gcn = GcnParams {
            hidden: self.gcn.hidden,
            layers: self.gcn.layers,
            learning_rate: self.gcn.learning_rate,
            dropout: self.gcn.dropout,
            aggregation: self.gcn.aggregation.parse::<Aggregation>().map_err(core)?,
            epochs: self.gcn.epochs,
        };
        gcn.validate_grid().map_err(|e| CliError::Config(format!("[gcn] {e}")))?;
        let mlp = MlpParams {
            hidden: self.mlp.hidden.clone(),
            activation: self.mlp.activation.parse().map_err(core)?,
            optimizer: self.mlp.solver.parse().map_err(core)?,
            alpha: self.mlp.alpha,
            schedule: self.mlp.schedule.parse().map_err(core)?,
            learning_rate: self.mlp.learning_rate,
            epochs: self.mlp.epochs,
            batch_size: self.mlp.batch_size,
        };
        mlp.validate_grid().map_err(|e| CliError::Config(format!("[mlp] {e}")))?;
        let pipeline = PipelineConfig {
            prefixes,
            link_threshold: self.kg.link_threshold,
            walks: WalkParams {
                max_walks: self.walks.max_walks,
                max_depth: self.walks.max_depth,
            },
            skipgram: SkipGramParams {
                dim: self.embedding.dim,
                window: self.embedding.window,
                epochs: self.embedding.epochs,
                negatives: self.embedding.negatives,
                learning_rate: self.embedding.learning_rate,
                min_count: self.embedding.min_count,
            },
            gcn,
            mlp,
            k: self.eval.k,
            seed: self.run.seed,
            jobs: self.run.jobs,
            grid_search: self.eval.grid_search,
            random_feature_scale: self.ablation.random_feature_scale,
        };
        pipeline.validate().map_err(core)?;

        let synthetic = SyntheticSpec {
            n_classes: self.synthetic.n_classes,
            module_size: self.synthetic.module_size,
            n_genes_per_dataset: self.synthetic.n_genes_per_dataset,
            n_patients: self.synthetic.n_patients,
            signal_shift: self.synthetic.signal_shift,
            overlap_fraction: self.synthetic.overlap_fraction,
            seed: self.synthetic.seed,
            n_datasets: self.datasets.len().max(1),
            module_gene_fraction: self.synthetic.module_gene_fraction,
        };
        synthetic.validate().map_err(|e| CliError::Config(format!("[synthetic] {e}")))?;

        let settings = parse_all::<Setting>(&self.eval.settings, "setting")?;
        let methods = parse_all::<Method>(&self.eval.methods, "method")?;
        let ablation_modes = parse_all::<AblationMode>(&self.ablation.modes, "ablation mode")?;
        let known = |list: &[String], what: &str| -> Result<Vec<String>, CliError> {
            for n in list {
                if !names.contains(n.as_str()) {
                    return Err(CliError::Config(format!("{what} names unknown dataset {n:?}")));
                }
            }
            Ok(if list.is_empty() {
                self.datasets.iter().map(|d| d.name.clone()).collect()
            } else {
                list.to_vec()
            })
        };
        let eval_targets = known(&self.eval.datasets, "[eval] datasets")?;
        let ablation_targets = known(&self.ablation.datasets, "[ablation] datasets")?;
        for p in &self.export.patients {
            match p.split_once('/') {
                Some((d, id)) if names.contains(d) && !id.is_empty() => {}
                _ => return invalid(format!("export patient {p:?} is not dataset/patient_id with a configured dataset")),
            }
        }

        match needs {
            Needs::Nothing => {}
            Needs::Series => {
                if self.datasets.is_empty() {
                    return invalid("no [[datasets]] configured".into());
                }
                for d in &self.datasets {
                    for (what, p) in [("series matrix", &d.series), ("probe table", &d.probes)] {
                        if !p.is_file() {
                            return invalid(format!("dataset {}: {what} {} not found", d.name, p.display()));
                        }
                    }
                }
            }
            Needs::Domain => {
                for (what, p) in [("ontology", &self.paths.ontology), ("annotations", &self.paths.annotations)] {
                    if !p.is_file() {
                        return invalid(format!("{what} file {} not found", p.display()));
                    }
                }
            }
        }

        Ok(Plan {
            pipeline,
            synthetic,
            ontology: self.paths.ontology.clone(),
            annotations: self.paths.annotations.clone(),
            output_dir: self.paths.output_dir.clone(),
            datasets: self.datasets.clone(),
            settings,
            methods,
            eval_targets,
            ablation_modes,
            ablation_targets,
            export_patients: self.export.patients.clone(),
        })
    }
}

fn parse_all<T: std::str::FromStr>(names: &[String], what: &str) -> Result<Vec<T>, CliError> {
    let mut out = Vec::new();
    for n in names {
        match n.parse() {
            Ok(v) => out.push(v),
            Err(_) => return Err(CliError::Config(format!("unknown {what} {n:?}"))),
        }
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("no {what} selected")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let plan = RunConfig::parse("").unwrap().plan(Needs::Nothing).unwrap();
        assert_eq!(plan.pipeline, PipelineConfig::default());
        assert_eq!(plan.settings.len(), 3);
        assert_eq!(plan.methods.len(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[walks]\nmax_walk = 3\n").is_err());
        assert!(RunConfig::parse("[nope]\n").is_err());
        assert!(RunConfig::parse("[[datasets]]\nname = \"a\"\nseries = \"s\"\nprobes = \"p\"\nextra = 1\n").is_err());
    }

    #[test]
    fn grids_are_enforced() {
        let c = RunConfig::parse("[gcn]\nhidden = 24\n").unwrap();
        assert!(matches!(c.plan(Needs::Nothing), Err(CliError::Config(_))));
        let c = RunConfig::parse("[mlp]\nalpha = 0.5\n").unwrap();
        assert!(c.plan(Needs::Nothing).is_err());
        let c = RunConfig::parse("[gcn]\naggregation = \"sum\"\n").unwrap();
        assert!(c.plan(Needs::Nothing).is_err());
    }

    #[test]
    fn overrides_win() {
        let mut c = RunConfig::parse("[run]\nseed = 1\n").unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            jobs: Some(2),
            settings: vec!["transfer".into()],
            methods: vec!["bogus".into()],
        });
        assert_eq!(c.run.seed, 9);
        assert_eq!(c.run.jobs, 2);
        let e = c.plan(Needs::Nothing).unwrap_err();
        assert!(e.to_string().contains("bogus"));
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let mut c = RunConfig::parse("[[datasets]]\nname = \"a\"\nseries = \"s.txt\"\nprobes = \"/abs/p.tsv\"\n").unwrap();
        c.resolve_paths(Path::new("/cfg"));
        assert_eq!(c.datasets[0].series, PathBuf::from("/cfg/s.txt"));
        assert_eq!(c.datasets[0].probes, PathBuf::from("/abs/p.tsv"));
        assert_eq!(c.paths.output_dir, PathBuf::from("/cfg/out"));
    }

    #[test]
    fn missing_inputs_fail_validation() {
        let c = RunConfig::parse("[[datasets]]\nname = \"a\"\nseries = \"/no/such\"\nprobes = \"/no/such\"\n").unwrap();
        assert!(c.plan(Needs::Nothing).is_ok());
        let e = c.plan(Needs::Series).unwrap_err();
        assert!(e.to_string().contains("not found"));
    }
}
