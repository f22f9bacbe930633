//! Knowledge-graph data model and a small RotatE trainer.
//!
//! Entities carry `dim / 2` complex coordinates stored interleaved as
//! `(re, im)` pairs; relations are pure rotations stored as phases.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;
use std::io::BufRead;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::graph::Graph;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self { head, relation, tail }
    }
}

/// Bidirectional label map; ids are positions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
}

impl LabelMap {
    pub fn numeric(n_entities: usize, n_relations: usize) -> Self {
        Self {
            entities: (0..n_entities).map(|i| format!("e{i}")).collect(),
            relations: (0..n_relations).map(|i| format!("r{i}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    n_entities: usize,
    n_relations: usize,
    triples: Vec<Triple>,
    graph: Graph,
    labels: LabelMap,
}

impl KnowledgeGraph {
    /// Build a graph from raw triples. Duplicates are dropped in order of
    /// first appearance; the second value is the number dropped.
    pub fn from_triples(
        n_entities: usize,
        n_relations: usize,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<(Self, usize)> {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut duplicates = 0;
        for t in triples {
            if t.head >= n_entities || t.tail >= n_entities {
                return Err(Error::Index(format!(
                    "entity id in {t:?} exceeds entity count {n_entities}"
                )));
            }
            if t.relation >= n_relations {
                return Err(Error::Index(format!(
                    "relation id in {t:?} exceeds relation count {n_relations}"
                )));
            }
            if seen.insert(t) {
                kept.push(t);
            } else {
                duplicates += 1;
            }
        }
        let graph = Graph::from_edges(n_entities, kept.iter().map(|t| (t.head, t.tail)));
        let kg = Self {
            n_entities,
            n_relations,
            triples: kept,
            graph,
            labels: LabelMap::numeric(n_entities, n_relations),
        };
        Ok((kg, duplicates))
    }

    pub fn with_labels(mut self, labels: LabelMap) -> Result<Self> {
        if labels.entities.len() != self.n_entities || labels.relations.len() != self.n_relations {
            return config("label map does not match graph dimensions");
        }
        self.labels = labels;
        Ok(self)
    }

    /// Same entity and relation sets, different triple list.
    pub fn with_triples(&self, triples: Vec<Triple>) -> Result<Self> {
        let (kg, _) = Self::from_triples(self.n_entities, self.n_relations, triples)?;
        kg.with_labels(self.labels.clone())
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn triple_set(&self) -> HashSet<Triple> {
        self.triples.iter().copied().collect()
    }
}

#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: KnowledgeGraph,
    pub duplicates: usize,
}

/// Read a tab-separated triples file, assigning dense ids in order of first
/// appearance.
pub fn load_triples(path: impl AsRef<Path>) -> Result<LoadedGraph> {
    let file = std::fs::File::open(path)?;
    parse_triples(std::io::BufReader::new(file))
}

pub fn parse_triples<R: BufRead>(reader: R) -> Result<LoadedGraph> {
    let mut entities: HashMap<String, usize> = HashMap::new();
    let mut relations: HashMap<String, usize> = HashMap::new();
    let mut labels = LabelMap::default();
    let mut raw = Vec::new();

    fn intern(map: &mut HashMap<String, usize>, names: &mut Vec<String>, key: &str) -> usize {
        if let Some(&id) = map.get(key) {
            return id;
        }
        let id = names.len();
        map.insert(key.to_string(), id);
        names.push(key.to_string());
        id
    }

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let (h, r, t) = split_line(line, idx + 1)?;
        let head = intern(&mut entities, &mut labels.entities, h);
        let relation = intern(&mut relations, &mut labels.relations, r);
        let tail = intern(&mut entities, &mut labels.entities, t);
        raw.push(Triple { head, relation, tail });
    }
    if raw.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let (graph, duplicates) =
        KnowledgeGraph::from_triples(labels.entities.len(), labels.relations.len(), raw)?;
    if duplicates > 0 {
        log::warn!("dropped {duplicates} duplicate triples");
    }
    Ok(LoadedGraph { graph: graph.with_labels(labels)?, duplicates })
}

/// Read triples against an existing label map (typically the sidecar of an
/// embedding file). Entities absent from the file stay as isolated vertices.
pub fn load_triples_with_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<LoadedGraph> {
    let file = std::fs::File::open(path)?;
    parse_triples_with_labels(std::io::BufReader::new(file), labels)
}

pub fn parse_triples_with_labels<R: BufRead>(reader: R, labels: &LabelMap) -> Result<LoadedGraph> {
    let entities: HashMap<&str, usize> =
        labels.entities.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let relations: HashMap<&str, usize> =
        labels.relations.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut raw = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let (h, r, t) = split_line(line, idx + 1)?;
        let lookup = |map: &HashMap<&str, usize>, key: &str| {
            map.get(key).copied().ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("unknown label {key:?}"),
            })
        };
        raw.push(Triple {
            head: lookup(&entities, h)?,
            relation: lookup(&relations, r)?,
            tail: lookup(&entities, t)?,
        });
    }
    let (graph, duplicates) =
        KnowledgeGraph::from_triples(labels.entities.len(), labels.relations.len(), raw)?;
    Ok(LoadedGraph { graph: graph.with_labels(labels.clone())?, duplicates })
}

fn split_line(line: &str, lineno: usize) -> Result<(&str, &str, &str)> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected 3 tab-separated fields, found {}", fields.len()),
        });
    }
    Ok((fields[0], fields[1], fields[2]))
}

/// Write triples using the graph's labels.
pub fn write_triples(kg: &KnowledgeGraph, mut w: impl std::io::Write) -> Result<()> {
    let l = kg.labels();
    for t in kg.triples() {
        writeln!(w, "{}\t{}\t{}", l.entities[t.head], l.relations[t.relation], l.entities[t.tail])?;
    }
    Ok(())
}

/// Entity vectors plus relation phases.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    entities: Array2<f64>,
    relation_phases: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(entities: Array2<f64>, relation_phases: Array2<f64>) -> Result<Self> {
        let dim = entities.ncols();
        if dim % 2 != 0 {
            return config(format!("embedding dimension {dim} is odd"));
        }
        if relation_phases.nrows() > 0 && relation_phases.ncols() != dim / 2 {
            return Err(Error::Shape(format!(
                "relation phases have {} columns, expected {}",
                relation_phases.ncols(),
                dim / 2
            )));
        }
        if entities.iter().chain(relation_phases.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("embedding contains non-finite values".into()));
        }
        if relation_phases.iter().any(|&p| !(-PI..PI).contains(&p)) {
            return Err(Error::Numeric("relation phase outside [-pi, pi)".into()));
        }
        Ok(Self { entities, relation_phases })
    }

    pub fn entities(&self) -> &Array2<f64> {
        &self.entities
    }

    pub fn relation_phases(&self) -> &Array2<f64> {
        &self.relation_phases
    }

    pub fn n_entities(&self) -> usize {
        self.entities.nrows()
    }

    pub fn dim(&self) -> usize {
        self.entities.ncols()
    }

    /// Replace entity vectors, keeping relation phases.
    pub fn with_entities(&self, entities: Array2<f64>) -> Result<Self> {
        if entities.dim() != self.entities.dim() {
            return Err(Error::Shape("entity matrix shape changed".into()));
        }
        Self::new(entities, self.relation_phases.clone())
    }
}

/// Wrap an angle into `[-pi, pi)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        t -= 2.0 * PI;
    }
    t
}

fn distance_parts(h: ArrayView1<f64>, phases: ArrayView1<f64>, t: ArrayView1<f64>) -> f64 {
    let mut sum = 0.0;
    for k in 0..phases.len() {
        let (s, c) = phases[k].sin_cos();
        let (hr, hi) = (h[2 * k], h[2 * k + 1]);
        let dr = hr * c - hi * s - t[2 * k];
        let di = hr * s + hi * c - t[2 * k + 1];
        sum += dr * dr + di * di;
    }
    sum.sqrt()
}

fn check_triple(emb: &EmbeddingMatrix, t: &Triple) -> Result<()> {
    let n = emb.n_entities();
    if t.head >= n || t.tail >= n {
        return Err(Error::Index(format!("entity id in {t:?} exceeds {n}")));
    }
    if t.relation >= emb.relation_phases.nrows() {
        return Err(Error::Index(format!(
            "relation {} exceeds {}",
            t.relation,
            emb.relation_phases.nrows()
        )));
    }
    Ok(())
}

/// RotatE plausibility `-|| h o r - t ||`.
pub fn rotate_score(emb: &EmbeddingMatrix, t: &Triple) -> Result<f64> {
    check_triple(emb, t)?;
    Ok(-distance_parts(
        emb.entities.row(t.head),
        emb.relation_phases.row(t.relation),
        emb.entities.row(t.tail),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub neg_samples: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { dim: 64, epochs: 50, lr: 0.05, neg_samples: 4, margin: 3.0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return config(format!("dim must be positive and even, got {}", self.dim));
        }
        if self.epochs == 0 {
            return config("epochs must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return config("lr must be finite and non-negative");
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return config("margin must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub embedding: EmbeddingMatrix,
    /// Mean margin loss per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Plain-SGD RotatE with uniform negative sampling and a margin ranking loss
/// `max(0, margin + d(pos) - d(neg))`.
pub fn train_rotate(kg: &KnowledgeGraph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if kg.triples().is_empty() {
        return Err(Error::EmptyGraph);
    }
    let half = cfg.dim / 2;
    let n = kg.n_entities();
    let mut rng = rng::seeded(cfg.seed);
    let bound = 1.0 / (half as f64).sqrt();
    let mut ent = Array2::from_shape_simple_fn((n, cfg.dim), || rng.random_range(-bound..bound));
    let mut rel =
        Array2::from_shape_simple_fn((kg.n_relations(), half), || rng.random_range(-PI..PI));

    let mut order: Vec<usize> = (0..kg.triples().len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut grad_pos = Grad::new(half);
    let mut grad_neg = Grad::new(half);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for &ti in &order {
            let pos = kg.triples()[ti];
            let d_pos = grad_pos.compute(&ent, &rel, &pos);
            for _ in 0..cfg.neg_samples.max(1) {
                let corrupt = rng.random_range(0..n);
                let neg = if rng.random_bool(0.5) {
                    Triple { head: corrupt, ..pos }
                } else {
                    Triple { tail: corrupt, ..pos }
                };
                let d_neg = grad_neg.compute(&ent, &rel, &neg);
                let loss = cfg.margin + d_pos - d_neg;
                count += 1;
                if loss <= 0.0 {
                    continue;
                }
                total += loss;
                grad_pos.apply(&mut ent, &mut rel, &pos, cfg.lr);
                grad_neg.apply(&mut ent, &mut rel, &neg, -cfg.lr);
                // refresh the positive gradient after the shared update
                grad_pos.compute(&ent, &rel, &pos);
            }
        }
        epoch_loss.push(total / count.max(1) as f64);
    }
    rel.mapv_inplace(wrap_phase);
    Ok(TrainOutcome { embedding: EmbeddingMatrix::new(ent, rel)?, epoch_loss })
}

/// Scratch space for the distance gradient of one triple.
struct Grad {
    dh: Vec<f64>,
    dt: Vec<f64>,
    dtheta: Vec<f64>,
}

impl Grad {
    fn new(half: usize) -> Self {
        Self { dh: vec![0.0; 2 * half], dt: vec![0.0; 2 * half], dtheta: vec![0.0; half] }
    }

    /// Distance and its gradient with respect to h, t and the phases.
    fn compute(&mut self, ent: &Array2<f64>, rel: &Array2<f64>, tr: &Triple) -> f64 {
        let h = ent.row(tr.head);
        let t = ent.row(tr.tail);
        let ph = rel.row(tr.relation);
        let half = ph.len();
        let mut sum = 0.0;
        for k in 0..half {
            let (s, c) = ph[k].sin_cos();
            let (hr, hi) = (h[2 * k], h[2 * k + 1]);
            let rr = hr * c - hi * s;
            let ri = hr * s + hi * c;
            let vr = rr - t[2 * k];
            let vi = ri - t[2 * k + 1];
            sum += vr * vr + vi * vi;
            // d/dh of |v|^2 / 2 through the rotation
            self.dh[2 * k] = vr * c + vi * s;
            self.dh[2 * k + 1] = -vr * s + vi * c;
            self.dt[2 * k] = -vr;
            self.dt[2 * k + 1] = -vi;
            // d(rotated)/dtheta = i * rotated
            self.dtheta[k] = vr * (-ri) + vi * rr;
        }
        let d = sum.sqrt();
        let inv = if d > 1e-12 { 1.0 / d } else { 0.0 };
        self.dh.iter_mut().for_each(|g| *g *= inv);
        self.dt.iter_mut().for_each(|g| *g *= inv);
        self.dtheta.iter_mut().for_each(|g| *g *= inv);
        d
    }

    /// Gradient step `x -= lr * grad`; a negative rate ascends.
    fn apply(&self, ent: &mut Array2<f64>, rel: &mut Array2<f64>, tr: &Triple, lr: f64) {
        {
            let mut h = ent.row_mut(tr.head);
            for (x, g) in h.iter_mut().zip(&self.dh) {
                *x -= lr * g;
            }
        }
        {
            let mut t = ent.row_mut(tr.tail);
            for (x, g) in t.iter_mut().zip(&self.dt) {
                *x -= lr * g;
            }
        }
        let mut ph = rel.row_mut(tr.relation);
        for (x, g) in ph.iter_mut().zip(&self.dtheta) {
            *x = wrap_phase(*x - lr * g);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    Head,
    Tail,
}

/// Known-true completions used for filtered ranking.
pub struct FilterIndex {
    tails: HashMap<(usize, usize), HashSet<usize>>,
    heads: HashMap<(usize, usize), HashSet<usize>>,
}

impl FilterIndex {
    pub fn new(kg: &KnowledgeGraph) -> Self {
        let mut tails: HashMap<(usize, usize), HashSet<usize>> = HashMap::new();
        let mut heads: HashMap<(usize, usize), HashSet<usize>> = HashMap::new();
        for t in kg.triples() {
            tails.entry((t.head, t.relation)).or_default().insert(t.tail);
            heads.entry((t.relation, t.tail)).or_default().insert(t.head);
        }
        Self { tails, heads }
    }

    fn known(&self, t: &Triple, mode: RankMode) -> Option<&HashSet<usize>> {
        match mode {
            RankMode::Tail => self.tails.get(&(t.head, t.relation)),
            RankMode::Head => self.heads.get(&(t.relation, t.tail)),
        }
    }
}

/// 1 + number of candidates scoring strictly higher than the true entity.
pub fn rank_entity(
    kg: &KnowledgeGraph,
    emb: &EmbeddingMatrix,
    t: &Triple,
    mode: RankMode,
    filtered: bool,
) -> Result<usize> {
    let filter = filtered.then(|| FilterIndex::new(kg));
    rank_entity_with(emb, t, mode, filter.as_ref())
}

pub fn rank_entity_with(
    emb: &EmbeddingMatrix,
    t: &Triple,
    mode: RankMode,
    filter: Option<&FilterIndex>,
) -> Result<usize> {
    check_triple(emb, t)?;
    let truth = rotate_score(emb, t)?;
    let known = filter.and_then(|f| f.known(t, mode));
    let target = match mode {
        RankMode::Tail => t.tail,
        RankMode::Head => t.head,
    };
    let mut better = 0;
    for cand in 0..emb.n_entities() {
        if cand == target || known.is_some_and(|k| k.contains(&cand)) {
            continue;
        }
        let probe = match mode {
            RankMode::Tail => Triple { tail: cand, ..*t },
            RankMode::Head => Triple { head: cand, ..*t },
        };
        if rotate_score(emb, &probe)? > truth {
            better += 1;
        }
    }
    Ok(better + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn emb(entities: Array2<f64>, phases: Array2<f64>) -> EmbeddingMatrix {
        EmbeddingMatrix::new(entities, phases).unwrap()
    }

    #[test]
    fn parse_counts_and_dedups() {
        let text = "a\tr\tb\nb\tr\tc\nc\ts\ta\n";
        let g = parse_triples(text.as_bytes()).unwrap();
        assert_eq!(g.graph.triples().len(), 3);
        assert_eq!(g.duplicates, 0);

        let g = parse_triples("a\tr\tb\na\tr\tb\n".as_bytes()).unwrap();
        assert_eq!(g.graph.triples().len(), 1);
        assert_eq!(g.duplicates, 1);
        assert_eq!(g.graph.labels().entities, vec!["a", "b"]);
    }

    #[test]
    fn parse_rejects_two_fields() {
        let err = parse_triples("a\tr\tb\na b\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn parse_rejects_empty() {
        assert!(matches!(parse_triples("".as_bytes()), Err(Error::EmptyGraph)));
        assert!(matches!(parse_triples("\n\n".as_bytes()), Err(Error::EmptyGraph)));
    }

    #[test]
    fn labelled_parse_keeps_isolated_entities() {
        let labels = LabelMap {
            entities: vec!["a".into(), "b".into(), "c".into()],
            relations: vec!["r".into()],
        };
        let g = parse_triples_with_labels("b\tr\ta\n".as_bytes(), &labels).unwrap();
        assert_eq!(g.graph.n_entities(), 3);
        assert_eq!(g.graph.triples(), &[Triple::new(1, 0, 0)]);
        assert!(parse_triples_with_labels("z\tr\ta\n".as_bytes(), &labels).is_err());
    }

    #[test]
    fn identity_rotation_scores_zero() {
        let e = emb(array![[0.3, -1.2, 0.5, 2.0]], Array2::zeros((1, 2)));
        assert_eq!(rotate_score(&e, &Triple::new(0, 0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn rotation_by_pi() {
        let e = emb(array![[1.0, 0.0], [-1.0, 0.0]], array![[-PI]]);
        let s = rotate_score(&e, &Triple::new(0, 0, 1)).unwrap();
        assert!(s.abs() < 1e-15, "{s}");
    }

    #[test]
    fn score_out_of_range() {
        let e = emb(array![[1.0, 0.0]], array![[0.0]]);
        assert!(matches!(rotate_score(&e, &Triple::new(0, 0, 3)), Err(Error::Index(_))));
        assert!(matches!(rotate_score(&e, &Triple::new(0, 1, 0)), Err(Error::Index(_))));
    }

    #[test]
    fn odd_dim_rejected() {
        let (kg, _) = KnowledgeGraph::from_triples(2, 1, [Triple::new(0, 0, 1)]).unwrap();
        let cfg = TrainConfig { dim: 7, ..Default::default() };
        assert!(matches!(train_rotate(&kg, &cfg), Err(Error::Config(_))));
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(matches!(train_rotate(&kg, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn wrap_phase_range() {
        for x in [-10.0, -PI, -1.0, 0.0, 3.0, PI, 7.5] {
            let w = wrap_phase(x);
            assert!((-PI..PI).contains(&w), "{x} -> {w}");
            assert!(((x - w) / (2.0 * PI) - ((x - w) / (2.0 * PI)).round()).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_ties_and_argmax() {
        // all entities identical: every candidate ties, rank 1
        let e = emb(Array2::ones((5, 2)), Array2::zeros((1, 1)));
        let (kg, _) = KnowledgeGraph::from_triples(5, 1, [Triple::new(0, 0, 1)]).unwrap();
        let t = Triple::new(0, 0, 1);
        assert_eq!(rank_entity(&kg, &e, &t, RankMode::Tail, false).unwrap(), 1);

        // tail equal to head under identity rotation is the unique maximum
        let e = emb(array![[1.0, 0.0], [1.0, 0.0], [5.0, 0.0], [-3.0, 1.0]], Array2::zeros((1, 1)));
        assert_eq!(rank_entity(&kg, &e, &t, RankMode::Tail, false).unwrap(), 1);
        let t = Triple::new(0, 0, 2);
        assert_eq!(rank_entity(&kg, &e, &t, RankMode::Tail, false).unwrap(), 3);
    }

    #[test]
    fn filtered_rank_skips_known_truths() {
        let e = emb(array![[1.0, 0.0], [1.0, 0.0], [2.0, 0.0]], Array2::zeros((1, 1)));
        let (kg, _) =
            KnowledgeGraph::from_triples(3, 1, [Triple::new(0, 0, 1), Triple::new(0, 0, 2)])
                .unwrap();
        let t = Triple::new(0, 0, 2);
        // entities 0 and 1 both beat 2; filtering removes the known tail 1
        assert_eq!(rank_entity(&kg, &e, &t, RankMode::Tail, false).unwrap(), 3);
        assert_eq!(rank_entity(&kg, &e, &t, RankMode::Tail, true).unwrap(), 2);
    }
}
