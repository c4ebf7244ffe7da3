//! Planted-signal synthetic data: a GO-like class DAG, gene annotations and
//! expression cohorts whose disease patients over-express the genes
//! annotated to a "disease module" of classes.

use std::collections::{BTreeSet, VecDeque};

use log::info;
use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::expression::{preprocess, ExpressionMatrix, ProbeTable};
use crate::kg::{Prefixes, OWL_CLASS, RDFS_LABEL, RDFS_SUBCLASS_OF, RDF_TYPE};
use crate::ntriples::{Term, Triple};
use crate::seed;

const OWL_RESTRICTION: &str = "http://www.w3.org/2002/07/owl#Restriction";
const OWL_ON_PROPERTY: &str = "http://www.w3.org/2002/07/owl#onProperty";
const OWL_SOME_VALUES_FROM: &str = "http://www.w3.org/2002/07/owl#someValuesFrom";
const OBO_NAMESPACE: &str = "http://www.geneontology.org/formats/oboInOwl#hasOBONamespace";
const PART_OF: &str = "http://purl.obolibrary.org/obo/BFO_0000050";
const ROOTS: [(u32, &str); 3] = [
    (8150, "biological_process"),
    (3674, "molecular_function"),
    (5575, "cellular_component"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Ontology size, including the three roots.
    pub n_classes: usize,
    /// Classes in the disease module.
    pub module_size: usize,
    pub n_genes_per_dataset: usize,
    pub n_patients: usize,
    /// Mean shift of module genes in disease patients, in noise units.
    pub signal_shift: f64,
    /// Fraction of each dataset's genes shared by all datasets.
    pub overlap_fraction: f64,
    pub seed: u64,
    pub n_datasets: usize,
    /// Fraction of each dataset's genes annotated to the module.
    pub module_gene_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 300,
            module_size: 10,
            n_genes_per_dataset: 200,
            n_patients: 60,
            signal_shift: 2.5,
            overlap_fraction: 0.5,
            seed: 7,
            n_datasets: 3,
            module_gene_fraction: 0.2,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_classes < ROOTS.len() + 1 {
            return bad(format!("n_classes must be at least {}", ROOTS.len() + 1));
        }
        if self.module_size == 0 || self.module_size > self.n_classes - ROOTS.len() {
            return bad(format!(
                "module_size {} does not fit the {} non-root classes",
                self.module_size,
                self.n_classes - ROOTS.len()
            ));
        }
        if self.n_genes_per_dataset < 2 || self.n_patients < 2 || self.n_datasets == 0 {
            return bad("need at least 2 genes, 2 patients and 1 dataset".into());
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return bad(format!("overlap_fraction {} outside [0, 1]", self.overlap_fraction));
        }
        if !(self.module_gene_fraction > 0.0 && self.module_gene_fraction < 1.0) {
            return bad(format!("module_gene_fraction {} outside (0, 1)", self.module_gene_fraction));
        }
        if !self.signal_shift.is_finite() {
            return bad("signal_shift must be finite".into());
        }
        if self.n_classes > 9_000_000 {
            return bad("n_classes exceeds the seven-digit identifier space".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub name: String,
    /// Probe-level series matrix, labels included.
    pub series: ExpressionMatrix,
    pub probes: ProbeTable,
    pub genes: Vec<String>,
    pub module_genes: BTreeSet<String>,
    /// Best accuracy of a single threshold on the mean module-gene z-score.
    pub rule_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub ontology: Vec<Triple>,
    /// `(gene symbol, class IRI)` pairs.
    pub annotations: Vec<(String, String)>,
    pub module_classes: Vec<String>,
    pub datasets: Vec<SyntheticDataset>,
}

fn class_id(i: usize) -> u32 {
    match ROOTS.get(i) {
        Some(&(id, _)) => id,
        None => 1_000_000 + i as u32,
    }
}

fn literal(s: &str) -> Term {
    Term::Literal(format!("\"{s}\""))
}

/// Best accuracy over all thresholds and both directions.
pub fn threshold_rule_accuracy(scores: &[f64], labels: &[u8]) -> f64 {
    let n = scores.len();
    if n == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let positives = labels.iter().filter(|&&l| l == 1).count();
    // everything predicted positive, then move the cut up one sample at a time
    let mut correct_above = positives;
    let mut best = correct_above.max(n - correct_above);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            correct_above -= 1;
        } else {
            correct_above += 1;
        }
        let tie = k + 1 < n && scores[order[k + 1]] == scores[i];
        if !tie {
            best = best.max(correct_above).max(n - correct_above);
        }
    }
    best as f64 / n as f64
}

struct Ontology {
    triples: Vec<Triple>,
    iris: Vec<String>,
    children: Vec<Vec<usize>>,
}

fn build_ontology(spec: &SyntheticSpec, prefixes: &Prefixes, rng: &mut impl Rng) -> Result<Ontology> {
    let n = spec.n_classes;
    let iris: Vec<String> = (0..n)
        .map(|i| {
            prefixes
                .go_iri(&format!("GO:{:07}", class_id(i)))
                .ok_or_else(|| Error::InvalidParameter("class id out of range".into()))
        })
        .collect::<Result<_>>()?;
    let mut triples = Vec::new();
    let mut children = vec![Vec::new(); n];
    let mut namespace = vec![0usize; n];
    let mut blanks = 0usize;
    for i in 0..n {
        let c = Term::iri(iris[i].clone());
        triples.push(Triple::new(c.clone(), RDF_TYPE, Term::iri(OWL_CLASS)));
        triples.push(Triple::new(c.clone(), RDFS_LABEL, literal(&format!("synthetic class {i}"))));
        if i >= ROOTS.len() {
            let p = rng.random_range(0..i);
            let mut parents = vec![p];
            if i > ROOTS.len() && rng.random_bool(0.3) {
                let q = rng.random_range(0..i);
                if q != p {
                    parents.push(q);
                }
            }
            namespace[i] = namespace[p];
            for &p in &parents {
                children[p].push(i);
                triples.push(Triple::new(c.clone(), RDFS_SUBCLASS_OF, Term::iri(iris[p].clone())));
            }
            if rng.random_bool(0.2) {
                let b = Term::Blank(format!("r{blanks}"));
                blanks += 1;
                let target = rng.random_range(0..i);
                triples.push(Triple::new(c.clone(), RDFS_SUBCLASS_OF, b.clone()));
                triples.push(Triple::new(b.clone(), RDF_TYPE, Term::iri(OWL_RESTRICTION)));
                triples.push(Triple::new(b.clone(), OWL_ON_PROPERTY, Term::iri(PART_OF)));
                triples.push(Triple::new(b, OWL_SOME_VALUES_FROM, Term::iri(iris[target].clone())));
            }
        } else {
            namespace[i] = i;
        }
        triples.push(Triple::new(c, OBO_NAMESPACE, literal(ROOTS[namespace[i]].1)));
    }
    Ok(Ontology { triples, iris, children })
}

/// A subtree under a random class, topped up with random classes when the
/// subtree is too small.
fn pick_module(spec: &SyntheticSpec, onto: &Ontology, rng: &mut impl Rng) -> Vec<usize> {
    let non_root: Vec<usize> = (ROOTS.len()..spec.n_classes).collect();
    let start = *non_root.choose(rng).expect("validated non-empty");
    let mut module = BTreeSet::new();
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        if module.len() == spec.module_size {
            break;
        }
        if module.insert(c) {
            queue.extend(onto.children[c].iter().copied());
        }
    }
    let mut rest: Vec<usize> = non_root.into_iter().filter(|c| !module.contains(c)).collect();
    rest.shuffle(rng);
    module.extend(rest.into_iter().take(spec.module_size - module.len()));
    module.into_iter().collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec, prefixes: &Prefixes) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(spec.seed, "ontology"));
    let onto = build_ontology(spec, prefixes, &mut rng)?;
    let module = pick_module(spec, &onto, &mut rng);
    let module_set: BTreeSet<usize> = module.iter().copied().collect();
    let others: Vec<usize> = (ROOTS.len()..spec.n_classes).filter(|c| !module_set.contains(c)).collect();

    let n_genes = spec.n_genes_per_dataset;
    let n_shared = (spec.overlap_fraction * n_genes as f64).round() as usize;
    let n_module = ((spec.module_gene_fraction * n_genes as f64).round() as usize).clamp(1, n_genes - 1);
    let module_quota = |pool: usize| (n_module * pool).div_ceil(n_genes).min(pool);

    let mut grng = seed::rng(seed::derive(spec.seed, "genes"));
    // (symbol, is_module) per dataset; shared genes come first
    let shared: Vec<String> = (0..n_shared).map(|i| format!("SG{i:05}")).collect();
    let mut shared_module: Vec<bool> = (0..n_shared).map(|i| i < module_quota(n_shared)).collect();
    shared_module.shuffle(&mut grng);
    let mut gene_sets: Vec<Vec<(String, bool)>> = Vec::new();
    for k in 0..spec.n_datasets {
        let n_unique = n_genes - n_shared;
        let mut flags: Vec<bool> = (0..n_unique).map(|i| i < module_quota(n_unique).min(n_module)).collect();
        flags.shuffle(&mut grng);
        let mut genes: Vec<(String, bool)> = shared.iter().cloned().zip(shared_module.iter().copied()).collect();
        genes.extend(flags.into_iter().enumerate().map(|(i, m)| (format!("D{}G{i:05}", k + 1), m)));
        gene_sets.push(genes);
    }

    let mut annotations = Vec::new();
    let mut annotated = BTreeSet::new();
    for (gene, is_module) in gene_sets.iter().flatten() {
        if !annotated.insert(gene.clone()) {
            continue;
        }
        let (pool, count) = if *is_module {
            (&module, grng.random_range(1..=2usize))
        } else {
            (&others, grng.random_range(1..=3usize))
        };
        let pool = if pool.is_empty() { &module } else { pool };
        for &c in pool.choose_multiple(&mut grng, count.min(pool.len())) {
            annotations.push((gene.clone(), onto.iris[c].clone()));
        }
    }

    let mut datasets = Vec::new();
    for (k, genes) in gene_sets.iter().enumerate() {
        datasets.push(make_dataset(spec, k, genes)?);
    }
    for d in &datasets {
        info!("{}: threshold-rule accuracy on module genes {:.3}", d.name, d.rule_accuracy);
    }
    Ok(SyntheticData {
        ontology: onto.triples,
        annotations,
        module_classes: module.iter().map(|&c| onto.iris[c].clone()).collect(),
        datasets,
    })
}

fn make_dataset(spec: &SyntheticSpec, k: usize, genes: &[(String, bool)]) -> Result<SyntheticDataset> {
    let name = format!("ds{}", k + 1);
    let mut rng = seed::rng(seed::derive(spec.seed, &format!("expression/{name}")));
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let scale = rng.random_range(0.5..2.0);
    let offset = rng.random_range(2.0..10.0);
    let n_p = spec.n_patients;
    let mut labels: Vec<u8> = (0..n_p).map(|i| u8::from(i < n_p / 2)).collect();
    labels.shuffle(&mut rng);
    let baseline: Vec<f64> = genes.iter().map(|_| 0.5 * noise.sample(&mut rng)).collect();

    // probe rows: every gene once, some twice, plus unannotated probes
    let mut probes: Vec<(String, Option<usize>)> = Vec::new();
    for g in 0..genes.len() {
        probes.push((String::new(), Some(g)));
        if rng.random_bool(0.25) {
            probes.push((String::new(), Some(g)));
        }
    }
    for _ in 0..(genes.len() / 10).max(1) {
        probes.push((String::new(), None));
    }
    probes.shuffle(&mut rng);
    for (i, p) in probes.iter_mut().enumerate() {
        p.0 = format!("{name}_P{i:06}");
    }

    let mut values = Array2::zeros((probes.len(), n_p));
    for j in 0..n_p {
        let true_expr: Vec<f64> = genes
            .iter()
            .zip(&baseline)
            .map(|((_, is_module), b)| {
                let shift = if *is_module && labels[j] == 1 { spec.signal_shift } else { 0.0 };
                b + noise.sample(&mut rng) + shift
            })
            .collect();
        for (i, (_, g)) in probes.iter().enumerate() {
            let x = match g {
                Some(g) => true_expr[*g] + 0.1 * noise.sample(&mut rng),
                None => noise.sample(&mut rng),
            };
            values[[i, j]] = offset + scale * x;
        }
    }
    let patient_ids: Vec<String> = (0..n_p).map(|j| format!("GSM{}{j:04}", k + 1)).collect();
    let series = ExpressionMatrix::new(probes.iter().map(|p| p.0.clone()).collect(), patient_ids, values, labels)?;
    let table = ProbeTable::new(
        probes
            .iter()
            .map(|(id, g)| (id.clone(), g.map(|g| genes[g].0.clone())))
            .collect(),
    )?;
    let module_genes: BTreeSet<String> = genes.iter().filter(|g| g.1).map(|g| g.0.clone()).collect();

    let profiles = preprocess(&series, &table)?;
    let scores: Vec<f64> = profiles
        .iter()
        .map(|p| module_genes.iter().map(|g| p.z_values[g]).sum::<f64>() / module_genes.len() as f64)
        .collect();
    let rule_accuracy = threshold_rule_accuracy(&scores, &series.labels);
    Ok(SyntheticDataset {
        name,
        series,
        probes: table,
        genes: genes.iter().map(|g| g.0.clone()).collect(),
        module_genes,
        rule_accuracy,
    })
}
