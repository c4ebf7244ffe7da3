//! Experiment orchestration: fold splits, the single / multi / transfer
//! settings, ablations and report aggregation.
//!
//! An [`Experiment`] owns the domain graph, the pretrained embedding model
//! and the datasets. Embeddings for a group of datasets are produced by
//! linking their patients into the domain graph and updating the pretrained
//! model once per dataset; the result is cached per group.

mod folds;
mod metrics;
mod report;
pub mod synthetic;

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use log::{debug, info};
use ndarray::Array2;
use rayon::prelude::*;

pub use folds::{stratified_kfold, FoldSplit};
pub use metrics::{compute_metrics, detect_degenerate, negative_f1, ConfusionCounts, Metrics};
pub use report::{reports_to_csv, reports_to_table, AblationMode, EvalReport, FoldResult, Method, Setting};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticDataset, SyntheticSpec};

use crate::classifiers::{
    baseline_gene_space, predict_mlp, project_profiles, train_mlp, BaselineMode, FeatureDataset, FeatureSpace,
    MlpParams,
};
use crate::embedder::{train_skipgram, EmbeddingModel, SkipGramParams};
use crate::error::{Error, Result};
use crate::expression::PatientProfile;
use crate::gnn::{build_weighted_graph, predict_gcn, train_gcn, GcnParams, RandomFeatures, WeightedGraph};
use crate::kg::{KnowledgeGraph, NodeKind, Prefixes};
use crate::seed;
use crate::walker::{extract_walks_parallel, WalkParams};

/// A named cohort. Labels sit behind an access counter so tests can show
/// that a protocol never looked at them; the profiles handed out carry
/// label 0.
#[derive(Debug)]
pub struct Dataset {
    name: String,
    profiles: Vec<PatientProfile>,
    labels: Vec<u8>,
    label_reads: AtomicUsize,
}

impl Dataset {
    pub fn new(name: &str, mut profiles: Vec<PatientProfile>) -> Self {
        let labels = profiles.iter().map(|p| p.label).collect();
        for p in &mut profiles {
            p.label = 0;
        }
        Self {
            name: name.to_string(),
            profiles,
            labels,
            label_reads: AtomicUsize::new(0),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// Expression profiles with the label field blanked.
    pub fn profiles(&self) -> &[PatientProfile] {
        &self.profiles
    }

    pub fn patient_ids(&self) -> impl Iterator<Item = &str> {
        self.profiles.iter().map(|p| p.patient_id.as_str())
    }

    pub fn labels(&self) -> &[u8] {
        self.label_reads.fetch_add(1, Ordering::SeqCst);
        &self.labels
    }

    pub fn label_reads(&self) -> usize {
        self.label_reads.load(Ordering::SeqCst)
    }

    pub fn genes(&self) -> BTreeSet<&str> {
        self.profiles
            .iter()
            .flat_map(|p| p.z_values.keys().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub prefixes: Prefixes,
    /// Patient-gene links need z strictly above this.
    pub link_threshold: f64,
    pub walks: WalkParams,
    pub skipgram: SkipGramParams,
    pub gcn: GcnParams,
    pub mlp: MlpParams,
    pub k: usize,
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
    /// Pick hyperparameters per fold on an inner split of the training data.
    pub grid_search: bool,
    /// Half-width of the uniform range used by the random-feature ablation.
    pub random_feature_scale: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prefixes: Prefixes::default(),
            link_threshold: 1.0,
            walks: WalkParams::default(),
            skipgram: SkipGramParams::default(),
            gcn: GcnParams::default(),
            mlp: MlpParams::default(),
            k: 5,
            seed: 42,
            jobs: 0,
            grid_search: false,
            random_feature_scale: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.skipgram.validate()?;
        self.gcn.validate()?;
        self.mlp.validate()?;
        if self.k < 2 {
            return Err(Error::InvalidParameter(format!("k must be at least 2, got {}", self.k)));
        }
        if self.walks.max_walks == 0 || self.walks.max_depth == 0 {
            return Err(Error::InvalidParameter("walk count and depth must be positive".into()));
        }
        if !self.link_threshold.is_finite() {
            return Err(Error::InvalidParameter("link threshold must be finite".into()));
        }
        if !(self.random_feature_scale > 0.0) {
            return Err(Error::InvalidParameter("random feature scale must be positive".into()));
        }
        Ok(())
    }
}

/// Tokens of every non-literal node, in node order.
pub fn entity_tokens(kg: &KnowledgeGraph) -> Vec<String> {
    kg.nodes()
        .iter()
        .filter(|n| n.kind != NodeKind::Literal)
        .map(|n| n.token())
        .collect()
}

pub fn patient_tokens(prefixes: &Prefixes, dataset: &Dataset) -> Vec<String> {
    dataset
        .patient_ids()
        .map(|p| prefixes.patient_iri(dataset.name(), p))
        .collect()
}

/// Trains the domain model from walks rooted at every entity of the
/// patient-free graph.
pub fn pretrain_domain(domain: &KnowledgeGraph, config: &PipelineConfig) -> Result<EmbeddingModel> {
    let roots = entity_tokens(domain);
    let corpus = extract_walks_parallel(domain, &roots, &config.walks, seed::derive(config.seed, "walks/domain"), config.jobs)?;
    info!("domain walks: {} roots, {} walks", roots.len(), corpus.len());
    train_skipgram(&corpus, &config.skipgram, seed::derive(config.seed, "embed/domain"))
}

/// Links every dataset's patients into a copy of the domain graph.
pub fn link_datasets(domain: &KnowledgeGraph, datasets: &[&Dataset], config: &PipelineConfig) -> KnowledgeGraph {
    let mut kg = domain.clone();
    for d in datasets {
        let r = kg.link_patients(&config.prefixes, d.name(), d.profiles(), config.link_threshold);
        info!("linked {}: {} patients, {} edges", d.name(), r.patients, r.edges_added);
    }
    kg
}

/// Extends `model` with one dataset's patient walks over `kg`.
pub fn update_with_dataset(
    model: &mut EmbeddingModel,
    kg: &KnowledgeGraph,
    dataset: &Dataset,
    config: &PipelineConfig,
) -> Result<usize> {
    let roots = patient_tokens(&config.prefixes, dataset);
    let label = dataset.name();
    let corpus = extract_walks_parallel(kg, &roots, &config.walks, seed::derive(config.seed, &format!("walks/{label}")), config.jobs)?;
    let added = model.update(&corpus, seed::derive(config.seed, &format!("embed/{label}")))?;
    debug!("{label}: {} walks, {added} new tokens", corpus.len());
    Ok(added)
}

/// Linked graph and embedding model for one group of datasets.
#[derive(Debug)]
pub struct Prepared {
    pub kg: KnowledgeGraph,
    pub model: EmbeddingModel,
}

type PatientRef = (usize, usize);

enum Engine {
    Mlp { rows: HashMap<PatientRef, usize>, x: Array2<f64>, space: FeatureSpace },
    Gcn { graph: WeightedGraph, tokens: HashMap<PatientRef, String> },
}

pub struct Experiment {
    config: PipelineConfig,
    domain: KnowledgeGraph,
    base: EmbeddingModel,
    datasets: Vec<Dataset>,
    folds: Vec<FoldSplit>,
    cache: Mutex<HashMap<Vec<usize>, Arc<Prepared>>>,
    pool: rayon::ThreadPool,
}

impl Experiment {
    /// Fold splits are derived from the configured seed.
    pub fn new(config: PipelineConfig, domain: KnowledgeGraph, base: EmbeddingModel, datasets: Vec<Dataset>) -> Result<Self> {
        let folds = datasets
            .iter()
            .map(|d| stratified_kfold(d.name(), d.labels(), config.k, seed::derive(config.seed, &format!("folds/{}", d.name()))))
            .collect::<Result<Vec<_>>>()?;
        Self::with_folds(config, domain, base, datasets, folds)
    }

    /// Reuses previously persisted splits, one per dataset in order.
    pub fn with_folds(
        config: PipelineConfig,
        domain: KnowledgeGraph,
        base: EmbeddingModel,
        datasets: Vec<Dataset>,
        folds: Vec<FoldSplit>,
    ) -> Result<Self> {
        config.validate()?;
        let mut names = BTreeSet::new();
        for d in &datasets {
            if !names.insert(d.name()) {
                return Err(Error::InvalidInput(format!("dataset {} listed twice", d.name())));
            }
        }
        if folds.len() != datasets.len() {
            return Err(Error::InvalidInput(format!("{} fold splits for {} datasets", folds.len(), datasets.len())));
        }
        for (d, f) in datasets.iter().zip(&folds) {
            if f.dataset != d.name() || f.n() != d.len() || f.k() != config.k {
                return Err(Error::InvalidInput(format!(
                    "fold split for {} does not match the dataset ({} samples, k = {})",
                    d.name(),
                    d.len(),
                    config.k
                )));
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        Ok(Self {
            config,
            domain,
            base,
            datasets,
            folds,
            cache: Mutex::new(HashMap::new()),
            pool,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn folds(&self) -> &[FoldSplit] {
        &self.folds
    }

    pub fn dataset_index(&self, name: &str) -> Result<usize> {
        self.datasets
            .iter()
            .position(|d| d.name() == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown dataset {name:?}")))
    }

    /// Graph and embeddings for a dataset group, built on first use.
    pub fn prepared(&self, members: &[usize]) -> Result<Arc<Prepared>> {
        let mut key = members.to_vec();
        key.sort_unstable();
        key.dedup();
        let mut cache = self.cache.lock().expect("cache lock poisoned");
        if let Some(p) = cache.get(&key) {
            return Ok(Arc::clone(p));
        }
        let group: Vec<&Dataset> = key.iter().map(|&i| &self.datasets[i]).collect();
        let kg = link_datasets(&self.domain, &group, &self.config);
        let mut model = self.base.clone();
        for d in &group {
            update_with_dataset(&mut model, &kg, d, &self.config).map_err(|e| e.context(format!("embedding {}", d.name())))?;
        }
        let p = Arc::new(Prepared { kg, model });
        cache.insert(key, Arc::clone(&p));
        Ok(p)
    }

    fn patients(&self, ds: usize, rows: &[usize]) -> Vec<PatientRef> {
        rows.iter().map(|&r| (ds, r)).collect()
    }

    fn all_patients(&self, ds: usize) -> Vec<PatientRef> {
        (0..self.datasets[ds].len()).map(|r| (ds, r)).collect()
    }

    fn labels_of(&self, refs: &[PatientRef]) -> Vec<u8> {
        let mut cached: HashMap<usize, &[u8]> = HashMap::new();
        refs.iter()
            .map(|&(d, r)| cached.entry(d).or_insert_with(|| self.datasets[d].labels())[r])
            .collect()
    }

    fn token(&self, (d, r): PatientRef) -> String {
        let ds = &self.datasets[d];
        self.config.prefixes.patient_iri(ds.name(), &ds.profiles()[r].patient_id)
    }

    /// `train` lists the datasets whose genes span the `all` baseline;
    /// `involved` adds the test side for `overlap` and for the graph.
    fn engine(&self, method: Method, train: &[usize], involved: &[usize], ablation: Option<AblationMode>) -> Result<Engine> {
        match method {
            Method::BaselineAll | Method::BaselineOverlap => {
                let (mode, space, from) = if method == Method::BaselineAll {
                    (BaselineMode::All, FeatureSpace::ExpressionAll, train)
                } else {
                    (BaselineMode::Overlap, FeatureSpace::ExpressionOverlap, involved)
                };
                let profiles: Vec<&[PatientProfile]> = from.iter().map(|&i| self.datasets[i].profiles()).collect();
                let genes = baseline_gene_space(&profiles, mode)?;
                let mut rows = HashMap::new();
                let mut blocks = Vec::new();
                for &d in involved {
                    let x = project_profiles(self.datasets[d].profiles(), &genes);
                    for r in 0..x.nrows() {
                        rows.insert((d, r), rows.len());
                    }
                    blocks.push(x);
                }
                let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
                let x = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::InvalidInput(e.to_string()))?;
                Ok(Engine::Mlp { rows, x, space })
            }
            Method::MlpEmbed => {
                let prep = self.prepared(involved)?;
                let dim = prep.model.dim();
                let mut rows = HashMap::new();
                let mut x = Vec::new();
                for &d in involved {
                    for r in 0..self.datasets[d].len() {
                        x.extend_from_slice(prep.model.get_embedding(&self.token((d, r)))?);
                        rows.insert((d, r), rows.len());
                    }
                }
                let x = Array2::from_shape_vec((rows.len(), dim), x).expect("embedding rows have the model width");
                Ok(Engine::Mlp { rows, x, space: FeatureSpace::Embedding })
            }
            Method::Gcn => {
                let prep = self.prepared(involved)?;
                let graph = match ablation {
                    Some(AblationMode::RandomFeatures) => {
                        let src = RandomFeatures {
                            dim: prep.model.dim(),
                            seed: seed::derive(self.config.seed, "random_features"),
                            scale: self.config.random_feature_scale,
                        };
                        build_weighted_graph(&prep.kg, &src, false)?
                    }
                    Some(AblationMode::UnweightedEdges) => build_weighted_graph(&prep.kg, &prep.model, true)?,
                    None => build_weighted_graph(&prep.kg, &prep.model, false)?,
                };
                let tokens = involved
                    .iter()
                    .flat_map(|&d| self.all_patients(d))
                    .map(|p| (p, self.token(p)))
                    .collect();
                Ok(Engine::Gcn { graph, tokens })
            }
        }
    }

    fn fit_predict_with(
        &self,
        engine: &Engine,
        train: &[PatientRef],
        train_y: &[u8],
        test: &[PatientRef],
        mlp: &MlpParams,
        gcn: &GcnParams,
        seed: u64,
    ) -> Result<Vec<u8>> {
        match engine {
            Engine::Mlp { rows, x, space } => {
                let pick = |refs: &[PatientRef]| {
                    let idx: Vec<usize> = refs.iter().map(|p| rows[p]).collect();
                    x.select(ndarray::Axis(0), &idx)
                };
                let ids = train.iter().map(|&p| self.token(p)).collect();
                let data = FeatureDataset::new(ids, pick(train), train_y.to_vec(), *space)?;
                let model = train_mlp(&data, mlp, seed)?;
                Ok(predict_mlp(&model, &pick(test))?.0)
            }
            Engine::Gcn { graph, tokens } => {
                let mut g = graph.clone();
                let train_mask: Vec<(String, u8)> = train.iter().zip(train_y).map(|(p, &y)| (tokens[p].clone(), y)).collect();
                let test_mask: Vec<String> = test.iter().map(|p| tokens[p].clone()).collect();
                g.set_masks(&train_mask, &test_mask)?;
                let model = train_gcn(&g, gcn, seed)?;
                Ok(predict_gcn(&model, &g)?.into_iter().map(|p| p.label).collect())
            }
        }
    }

    /// Hyperparameters for one fold: the configured ones, or the best
    /// grid point on an inner stratified split of the training patients.
    fn select(&self, engine: &Engine, train: &[PatientRef], train_y: &[u8], seed: u64) -> Result<(MlpParams, GcnParams)> {
        let (mlp, gcn) = (self.config.mlp.clone(), self.config.gcn);
        if !self.config.grid_search {
            return Ok((mlp, gcn));
        }
        let inner = stratified_kfold("inner", train_y, self.config.k.min(train_y.len()), seed::derive(seed, "inner"))?;
        let (fit_idx, val_idx) = (inner.train_indices(0), inner.folds[0].clone());
        let fit: Vec<PatientRef> = fit_idx.iter().map(|&i| train[i]).collect();
        let fit_y: Vec<u8> = fit_idx.iter().map(|&i| train_y[i]).collect();
        let val: Vec<PatientRef> = val_idx.iter().map(|&i| train[i]).collect();
        let val_y: Vec<u8> = val_idx.iter().map(|&i| train_y[i]).collect();
        let score = |m: &MlpParams, g: &GcnParams| -> Result<f64> {
            let pred = self.fit_predict_with(engine, &fit, &fit_y, &val, m, g, seed)?;
            Ok(compute_metrics(&ConfusionCounts::from_predictions(&val_y, &pred)).waf)
        };
        let mut best: Option<(f64, MlpParams, GcnParams)> = None;
        let candidates: Vec<(MlpParams, GcnParams)> = match engine {
            Engine::Mlp { .. } => MlpParams::grid(&mlp).into_iter().map(|m| (m, gcn)).collect(),
            Engine::Gcn { .. } => GcnParams::grid(gcn.epochs).into_iter().map(|g| (mlp.clone(), g)).collect(),
        };
        for (m, g) in candidates {
            let s = score(&m, &g)?;
            if best.as_ref().is_none_or(|b| s > b.0) {
                best = Some((s, m, g));
            }
        }
        let (_, m, g) = best.expect("parameter grids are non-empty");
        Ok((m, g))
    }

    fn fit_predict(&self, engine: &Engine, train: &[PatientRef], train_y: &[u8], test: &[PatientRef], seed: u64) -> Result<Vec<u8>> {
        let (mlp, gcn) = self.select(engine, train, train_y, seed)?;
        self.fit_predict_with(engine, train, train_y, test, &mlp, &gcn, seed)
    }

    /// Cross-validation on `target`'s folds; `extra` datasets contribute
    /// all their patients to every training partition.
    fn run_cv(&self, setting: Setting, method: Method, target: usize, extra: &[usize], ablation: Option<AblationMode>) -> Result<EvalReport> {
        let name = self.datasets[target].name();
        let mut report = EvalReport::new(setting, method, name);
        report.ablation = ablation;
        let mut group = vec![target];
        group.extend_from_slice(extra);
        let engine = match self.engine(method, &group, &group, ablation) {
            Ok(e) => e,
            Err(e @ Error::NoCommonGenes) => {
                report.error = Some(e.to_string());
                return Ok(report);
            }
            Err(e) => return Err(e.context(format!("{setting}/{method} on {name}"))),
        };
        let split = &self.folds[target];
        let sibling_refs: Vec<PatientRef> = extra.iter().flat_map(|&d| self.all_patients(d)).collect();
        let sibling_y = self.labels_of(&sibling_refs);
        let target_y = self.labels_of(&self.all_patients(target));
        let base_seed = seed::derive(self.config.seed, &format!("model/{name}"));
        let results: Vec<Result<FoldResult>> = self.pool.install(|| {
            (0..split.k())
                .into_par_iter()
                .map(|f| {
                    let train_rows = split.train_indices(f);
                    let mut train = self.patients(target, &train_rows);
                    let mut train_y: Vec<u8> = train_rows.iter().map(|&r| target_y[r]).collect();
                    train.extend_from_slice(&sibling_refs);
                    train_y.extend_from_slice(&sibling_y);
                    let test = self.patients(target, &split.folds[f]);
                    let pred = self
                        .fit_predict(&engine, &train, &train_y, &test, seed::derive_index(base_seed, f as u64))
                        .map_err(|e| e.context(format!("{setting}/{method} on {name}, fold {f}")))?;
                    let truth: Vec<u8> = split.folds[f].iter().map(|&r| target_y[r]).collect();
                    Ok(FoldResult::new(Some(f), &truth, &pred))
                })
                .collect()
        });
        report.folds = results.into_iter().collect::<Result<_>>()?;
        Ok(report)
    }

    pub fn run_single(&self, dataset: &str, method: Method) -> Result<EvalReport> {
        let d = self.dataset_index(dataset)?;
        self.run_cv(Setting::Single, method, d, &[], None)
    }

    pub fn run_multi(&self, target: &str, siblings: &[&str], method: Method) -> Result<EvalReport> {
        let d = self.dataset_index(target)?;
        let extra = siblings.iter().map(|s| self.dataset_index(s)).collect::<Result<Vec<_>>>()?;
        if extra.contains(&d) {
            return Err(Error::InvalidInput(format!("{target} cannot be its own sibling")));
        }
        self.run_cv(Setting::Multi, method, d, &extra, None)
    }

    /// Single GCN run on `dataset` with one component swapped out.
    pub fn run_ablation(&self, dataset: &str, mode: AblationMode) -> Result<EvalReport> {
        let d = self.dataset_index(dataset)?;
        self.run_cv(Setting::Single, Method::Gcn, d, &[], Some(mode))
    }

    /// Trains on every patient of `train` and predicts the whole `test`
    /// dataset. Test labels are read only after prediction.
    pub fn run_transfer(&self, test: &str, train: &[&str], method: Method) -> Result<EvalReport> {
        let t = self.dataset_index(test)?;
        let sources = train.iter().map(|s| self.dataset_index(s)).collect::<Result<Vec<_>>>()?;
        if sources.is_empty() || sources.contains(&t) {
            return Err(Error::InvalidInput(format!("transfer to {test} needs other training datasets")));
        }
        let reads_at_start = self.datasets[t].label_reads();
        let mut report = EvalReport::new(Setting::Transfer, method, test);
        let mut involved = sources.clone();
        involved.push(t);
        let engine = match self.engine(method, &sources, &involved, None) {
            Ok(e) => e,
            Err(e @ Error::NoCommonGenes) => {
                report.error = Some(e.to_string());
                return Ok(report);
            }
            Err(e) => return Err(e.context(format!("transfer/{method} on {test}"))),
        };
        let train_refs: Vec<PatientRef> = sources.iter().flat_map(|&d| self.all_patients(d)).collect();
        let train_y = self.labels_of(&train_refs);
        let test_refs = self.all_patients(t);
        let model_seed = seed::derive(self.config.seed, &format!("model/transfer/{test}"));
        let pred = self
            .pool
            .install(|| self.fit_predict(&engine, &train_refs, &train_y, &test_refs, model_seed))
            .map_err(|e| e.context(format!("transfer/{method} on {test}")))?;
        report.test_label_reads_before_eval = Some(self.datasets[t].label_reads() - reads_at_start);
        let truth = self.labels_of(&test_refs);
        report.folds.push(FoldResult::new(None, &truth, &pred));
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn dataset_hides_and_counts_labels() {
        let p = PatientProfile {
            patient_id: "p1".into(),
            z_values: BTreeMap::from([("G".to_string(), 1.0)]),
            label: 1,
        };
        let d = Dataset::new("d", vec![p]);
        assert_eq!(d.profiles()[0].label, 0);
        assert_eq!(d.label_reads(), 0);
        assert_eq!(d.labels(), &[1]);
        assert_eq!(d.label_reads(), 1);
        assert_eq!(d.genes().into_iter().collect::<Vec<_>>(), vec!["G"]);
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let c = PipelineConfig { k: 1, ..PipelineConfig::default() };
        assert!(c.validate().is_err());
    }
}
