//! In-memory knowledge graph: ontology triples, gene annotations and
//! patient-gene links, with an outgoing adjacency index for the walker.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use log::{info, warn};

use crate::error::{Error, Result};
use crate::expression::PatientProfile;
use crate::ntriples::{Term, Triple};

pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
pub const OWL_CLASS: &str = "http://www.w3.org/2002/07/owl#Class";
pub const RDFS_SUBCLASS_OF: &str = "http://www.w3.org/2000/01/rdf-schema#subClassOf";
pub const RDFS_LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";

/// IRI namespaces used when creating gene, patient and ontology-class nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prefixes {
    /// `GO:0006915` becomes `{go}GO_0006915`.
    pub go: String,
    pub gene: String,
    pub patient: String,
    pub has_function: String,
    pub expresses: String,
}

impl Default for Prefixes {
    fn default() -> Self {
        Self {
            go: "http://purl.obolibrary.org/obo/".into(),
            gene: "http://genekg.org/gene/".into(),
            patient: "http://genekg.org/patient/".into(),
            has_function: "http://genekg.org/vocab/hasFunction".into(),
            expresses: "http://genekg.org/vocab/expresses".into(),
        }
    }
}

impl Prefixes {
    pub fn gene_iri(&self, symbol: &str) -> String {
        format!("{}{}", self.gene, symbol.trim())
    }

    pub fn patient_iri(&self, dataset: &str, patient: &str) -> String {
        format!("{}{}/{}", self.patient, dataset, patient)
    }

    /// Rewrites a `GO:nnnnnnn` identifier into a full class IRI.
    pub fn go_iri(&self, go_id: &str) -> Option<String> {
        let digits = go_id.strip_prefix("GO:")?;
        (digits.len() == 7 && digits.bytes().all(|b| b.is_ascii_digit()))
            .then(|| format!("{}GO_{digits}", self.go))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Iri,
    Blank,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Patient,
    Gene,
    OntologyClass,
    Other,
}

pub type NodeId = u32;
pub type PredId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub value: String,
    pub role: Role,
}

impl Node {
    /// Token used in walks and as the embedding vocabulary key.
    pub fn token(&self) -> String {
        match self.kind {
            NodeKind::Iri | NodeKind::Literal => self.value.clone(),
            NodeKind::Blank => format!("_:{}", self.value),
        }
    }

    pub fn to_term(&self) -> Term {
        match self.kind {
            NodeKind::Iri => Term::Iri(self.value.clone()),
            NodeKind::Blank => Term::Blank(self.value.clone()),
            NodeKind::Literal => Term::Literal(self.value.clone()),
        }
    }
}

/// Outcome of linking one batch of patient profiles into the graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkReport {
    pub patients: usize,
    pub edges_added: usize,
    /// Distinct gene symbols with no gene node in the graph.
    pub unresolved_genes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KgStats {
    pub n_triples: usize,
    pub n_relation_types: usize,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    nodes: Vec<Node>,
    node_index: HashMap<(NodeKind, String), NodeId>,
    predicates: Vec<String>,
    pred_index: HashMap<String, PredId>,
    triples: Vec<(NodeId, PredId, NodeId)>,
    triple_set: HashSet<(NodeId, PredId, NodeId)>,
    out: Vec<Vec<(PredId, NodeId)>>,
    z_table: HashMap<(NodeId, NodeId), f64>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut kg = Self::new();
        for t in triples {
            kg.add_triple(t);
        }
        kg
    }

    fn intern_node(&mut self, kind: NodeKind, value: &str, role: Role) -> NodeId {
        if let Some(&id) = self.node_index.get(&(kind, value.to_string())) {
            if role != Role::Other && self.nodes[id as usize].role == Role::Other {
                self.nodes[id as usize].role = role;
            }
            return id;
        }
        let id = self.nodes.len() as NodeId;
        self.nodes.push(Node {
            kind,
            value: value.to_string(),
            role,
        });
        self.out.push(Vec::new());
        self.node_index.insert((kind, value.to_string()), id);
        id
    }

    fn intern_term(&mut self, t: &Term, role: Role) -> NodeId {
        match t {
            Term::Iri(v) => self.intern_node(NodeKind::Iri, v, role),
            Term::Blank(v) => self.intern_node(NodeKind::Blank, v, role),
            Term::Literal(v) => self.intern_node(NodeKind::Literal, v, role),
        }
    }

    fn intern_pred(&mut self, p: &str) -> PredId {
        if let Some(&id) = self.pred_index.get(p) {
            return id;
        }
        let id = self.predicates.len() as PredId;
        self.predicates.push(p.to_string());
        self.pred_index.insert(p.to_string(), id);
        id
    }

    fn insert(&mut self, s: NodeId, p: PredId, o: NodeId) -> bool {
        if !self.triple_set.insert((s, p, o)) {
            return false;
        }
        self.triples.push((s, p, o));
        self.out[s as usize].push((p, o));
        true
    }

    /// Adds a triple; returns false when it was already present. Subjects of
    /// `rdf:type owl:Class` statements are tagged as ontology classes.
    pub fn add_triple(&mut self, t: &Triple) -> bool {
        assert!(!t.subject.is_literal(), "literal subject in {t}");
        let class_decl = t.predicate == RDF_TYPE && t.object == Term::Iri(OWL_CLASS.into());
        let role = if class_decl { Role::OntologyClass } else { Role::Other };
        let s = self.intern_term(&t.subject, role);
        let p = self.intern_pred(&t.predicate);
        let o = self.intern_term(&t.object, Role::Other);
        self.insert(s, p, o)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn predicate(&self, id: PredId) -> &str {
        &self.predicates[id as usize]
    }

    pub fn predicate_id(&self, iri: &str) -> Option<PredId> {
        self.pred_index.get(iri).copied()
    }

    pub fn iri_node(&self, iri: &str) -> Option<NodeId> {
        self.node_index.get(&(NodeKind::Iri, iri.to_string())).copied()
    }

    /// Looks a node up by its walk token.
    pub fn node_by_token(&self, token: &str) -> Option<NodeId> {
        if let Some(label) = token.strip_prefix("_:") {
            self.node_index.get(&(NodeKind::Blank, label.to_string())).copied()
        } else if token.starts_with('"') {
            self.node_index.get(&(NodeKind::Literal, token.to_string())).copied()
        } else {
            self.iri_node(token)
        }
    }

    pub fn out_edges(&self, node: NodeId) -> &[(PredId, NodeId)] {
        &self.out[node as usize]
    }

    pub fn has_edge(&self, s: NodeId, p: PredId, o: NodeId) -> bool {
        self.triple_set.contains(&(s, p, o))
    }

    pub fn triple_ids(&self) -> &[(NodeId, PredId, NodeId)] {
        &self.triples
    }

    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.triples.iter().map(|&(s, p, o)| Triple {
            subject: self.node(s).to_term(),
            predicate: self.predicate(p).to_string(),
            object: self.node(o).to_term(),
        })
    }

    pub fn nodes_with_role(&self, role: Role) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.role == role)
            .map(|(i, _)| i as NodeId)
    }

    /// z-value recorded for a patient-gene link, if any.
    pub fn link_weight(&self, patient: NodeId, gene: NodeId) -> Option<f64> {
        self.z_table.get(&(patient, gene)).copied()
    }

    pub fn to_ntriples(&self) -> String {
        let mut out = String::new();
        for t in self.triples() {
            out.push_str(&t.to_string());
            out.push('\n');
        }
        out
    }

    pub fn write_ntriples(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_ntriples()).map_err(|e| Error::io(path, e))
    }

    /// Side table of patient-gene z-values as TSV.
    pub fn z_table_tsv(&self) -> String {
        let mut rows: Vec<_> = self
            .z_table
            .iter()
            .map(|(&(p, g), &z)| (self.node(p).value.as_str(), self.node(g).value.as_str(), z))
            .collect();
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut out = String::from("patient\tgene\tz\n");
        for (p, g, z) in rows {
            out.push_str(&format!("{p}\t{g}\t{z}\n"));
        }
        out
    }

    /// Links every patient to the genes it over-expresses (z strictly above
    /// `threshold`). Patient nodes are created even when they get no edge.
    pub fn link_patients(
        &mut self,
        prefixes: &Prefixes,
        dataset: &str,
        profiles: &[PatientProfile],
        threshold: f64,
    ) -> LinkReport {
        let expresses = self.intern_pred(&prefixes.expresses);
        let mut unresolved = BTreeSet::new();
        let mut report = LinkReport {
            patients: profiles.len(),
            ..LinkReport::default()
        };
        for prof in profiles {
            let iri = prefixes.patient_iri(dataset, &prof.patient_id);
            let pid = self.intern_node(NodeKind::Iri, &iri, Role::Patient);
            for (gene, &z) in &prof.z_values {
                if !(z > threshold) {
                    continue;
                }
                let Some(gid) = self.iri_node(&prefixes.gene_iri(gene)) else {
                    unresolved.insert(gene.clone());
                    continue;
                };
                if self.insert(pid, expresses, gid) {
                    report.edges_added += 1;
                }
                self.z_table.insert((pid, gid), z);
            }
        }
        report.unresolved_genes = unresolved.len();
        if report.unresolved_genes > 0 {
            info!(
                "dataset {dataset}: {} gene symbols have no gene node and were skipped",
                report.unresolved_genes
            );
        }
        report
    }

    pub fn stats(&self) -> KgStats {
        let used: HashSet<PredId> = self.triples.iter().map(|t| t.1).collect();
        KgStats {
            n_triples: self.triples.len(),
            n_relation_types: used.len(),
            n_classes: self.nodes_with_role(Role::OntologyClass).count(),
        }
    }
}

/// Reads the two-column `gene_symbol<TAB>GO:nnnnnnn` annotation table.
/// Lines starting with `!` are comments.
pub fn parse_annotations(path: impl AsRef<Path>, prefixes: &Prefixes) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations_str(&text, path, prefixes)
}

pub fn parse_annotations_str(
    text: &str,
    path: &Path,
    prefixes: &Prefixes,
) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('!') {
            continue;
        }
        let mut f = line.split('\t');
        let gene = f.next().unwrap_or("").trim();
        let go = f.next().unwrap_or("").trim();
        if gene.is_empty() {
            return Err(Error::parse(path, i + 1, "empty gene symbol"));
        }
        let iri = prefixes
            .go_iri(go)
            .ok_or_else(|| Error::parse(path, i + 1, format!("malformed GO id {go:?}")))?;
        out.push((gene.to_string(), iri));
    }
    Ok(out)
}

pub fn annotations_to_tsv(pairs: &[(String, String)], prefixes: &Prefixes) -> String {
    let mut out = String::from("!gene_symbol\tgo_id\n");
    for (g, iri) in pairs {
        let id = iri
            .strip_prefix(&prefixes.go)
            .and_then(|s| s.strip_prefix("GO_"))
            .map(|d| format!("GO:{d}"))
            .unwrap_or_else(|| iri.clone());
        out.push_str(&format!("{g}\t{id}\n"));
    }
    out
}

/// Combines ontology triples with gene annotations. Annotation targets that
/// the ontology never mentions are still linked, with a warning.
pub fn build_domain_kg(
    ontology: &[Triple],
    annotations: &[(String, String)],
    prefixes: &Prefixes,
) -> KnowledgeGraph {
    let mut kg = KnowledgeGraph::from_triples(ontology);
    let has_function = kg.intern_pred(&prefixes.has_function);
    let mut unknown = BTreeSet::new();
    for (gene, class) in annotations {
        if kg.iri_node(class).is_none() {
            unknown.insert(class.clone());
        }
        let g = kg.intern_node(NodeKind::Iri, &prefixes.gene_iri(gene), Role::Gene);
        let c = kg.intern_node(NodeKind::Iri, class, Role::OntologyClass);
        kg.insert(g, has_function, c);
    }
    if !unknown.is_empty() {
        warn!(
            "{} annotated classes are absent from the ontology (e.g. {})",
            unknown.len(),
            unknown.iter().next().unwrap()
        );
    }
    kg
}
