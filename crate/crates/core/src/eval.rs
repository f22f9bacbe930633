//! Metrics and the seeded experiment runner.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attacks::{apply_attack, AttackKind, AttackSpec};
use crate::detector::{detect, DetectOptions};
use crate::error::{config, shape, Error, Result};
use crate::graph::redundant::{default_community_size, key_ring, KeySettings};
use crate::graph::{redundant_embed, EmbedOptions};
use crate::kg::{self, EmbeddingMatrix, FilterIndex, KnowledgeGraph, RankMode, TrainConfig};
use crate::par::{self, Execution};
use crate::rng;
use crate::synthetic::{sbm_graph, structured_embedding, SbmConfig};

/// Area under the ROC curve with ties counted one half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return config("AUC needs positive and negative scores");
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let mut sorted_neg = neg.to_vec();
    sorted_neg.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &p in pos {
        let below = sorted_neg.partition_point(|&n| n < p);
        let not_above = sorted_neg.partition_point(|&n| n <= p);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Fraction of positives above the threshold that admits at most
/// `floor(fpr N_neg)` negatives.
pub fn tpr_at_fpr(pos: &[f64], neg: &[f64], fpr: f64) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return config("TPR needs positive and negative scores");
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let allowed = (fpr * neg.len() as f64 + 1e-9).floor() as usize;
    let threshold = sorted.get(allowed).copied().unwrap_or(f64::NEG_INFINITY);
    Ok(pos.iter().filter(|&&p| p > threshold).count() as f64 / pos.len() as f64)
}

pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return shape("cosine of vectors of different length");
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine of a zero vector".into()));
    }
    Ok(dot / (na * nb))
}

/// Cosine similarity of flattened matrices.
pub fn cosine_similarity(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return shape("cosine of matrices of different shape");
    }
    cosine_slices(&a.iter().copied().collect::<Vec<_>>(), &b.iter().copied().collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub gmr: f64,
    pub hmr: f64,
    pub amr: f64,
    pub hits_at_k: f64,
    pub k: usize,
}

pub fn rank_metrics(ranks: &[usize], k: usize) -> Result<RankMetrics> {
    if ranks.is_empty() {
        return config("rank metrics need at least one rank");
    }
    if ranks.contains(&0) {
        return config("ranks are 1-based");
    }
    let n = ranks.len() as f64;
    let gmr = (ranks.iter().map(|&r| (r as f64).ln()).sum::<f64>() / n).exp();
    let hmr = n / ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>();
    let amr = ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
    let hits = ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(RankMetrics { gmr, hmr, amr, hits_at_k: hits, k })
}

/// Filtered head and tail ranks of every triple.
pub fn link_prediction_ranks(kg: &KnowledgeGraph, emb: &EmbeddingMatrix) -> Result<Vec<usize>> {
    let filter = FilterIndex::new(kg);
    let mut ranks = Vec::with_capacity(2 * kg.triples().len());
    for t in kg.triples() {
        ranks.push(kg::rank_entity_with(emb, t, RankMode::Tail, Some(&filter))?);
        ranks.push(kg::rank_entity_with(emb, t, RankMode::Head, Some(&filter))?);
    }
    Ok(ranks)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return config("spearman needs two equal-length samples of size >= 2");
    }
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = avg;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mx = rx.iter().sum::<f64>() / rx.len() as f64;
    let my = ry.iter().sum::<f64>() / ry.len() as f64;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Numeric("spearman of a constant sample".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GraphSource {
    Synthetic(SbmConfig),
    Triples { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EmbeddingSource {
    Rotate(TrainConfig),
    Structured { dim: usize, spread: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSweep {
    pub kind: AttackKind,
    pub intensities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub method: String,
    pub graph: GraphSource,
    pub embedding: EmbeddingSource,
    /// Distinct graphs cycled through by the trials.
    pub graph_pool: usize,
    pub community_size: Option<usize>,
    pub key: KeySettings,
    pub density: f64,
    pub attacks: Vec<AttackSweep>,
    pub trials: usize,
    pub alpha: f64,
    pub seed: u64,
    pub cosine_steps: Vec<usize>,
    pub rank_metrics: bool,
    pub hits_k: usize,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            method: "kgmark".into(),
            graph: GraphSource::Synthetic(SbmConfig::default()),
            embedding: EmbeddingSource::Rotate(TrainConfig { epochs: 20, ..TrainConfig::default() }),
            graph_pool: 4,
            community_size: None,
            key: KeySettings::default(),
            density: crate::DEFAULT_DENSITY,
            attacks: Vec::new(),
            trials: 50,
            alpha: crate::DEFAULT_ALPHA,
            seed: 0,
            cosine_steps: vec![50, 65, 75],
            rank_metrics: true,
            hits_k: 10,
            execution: Execution::Parallel,
        }
    }
}

impl ExperimentConfig {
    /// Every problem found, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.trials == 0 {
            out.push("trials must be at least 1".to_string());
        }
        if self.graph_pool == 0 {
            out.push("graph_pool must be at least 1".to_string());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            out.push(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.density > 0.0 && self.density < 1.0) {
            out.push(format!("density {} outside (0, 1)", self.density));
        }
        if self.community_size.is_some_and(|s| s < 2) {
            out.push("community_size must be at least 2".to_string());
        }
        let t = self.key.schedule.steps;
        if self.key.embed_steps == 0 || self.key.embed_steps > t {
            out.push(format!("embed_steps must be in 1..={t}"));
        }
        if self.key.detect_steps == 0 || self.key.detect_steps > t {
            out.push(format!("detect_steps must be in 1..={t}"));
        }
        if let Err(e) = self.key.schedule.build() {
            out.push(e.to_string());
        }
        for &k in &self.cosine_steps {
            if k == 0 || k > t {
                out.push(format!("cosine step count {k} outside 1..={t}"));
            }
        }
        for a in &self.attacks {
            if a.intensities.is_empty() {
                out.push(format!("attack {} has no intensities", a.kind.name()));
            }
            for &i in &a.intensities {
                if !(0.0..=1.0).contains(&i) {
                    out.push(format!("attack {} intensity {i} outside [0, 1]", a.kind.name()));
                }
            }
        }
        match &self.graph {
            GraphSource::Synthetic(s) => {
                if let Err(e) = s.validate() {
                    out.push(e.to_string());
                }
            }
            GraphSource::Triples { path } => {
                if !path.exists() {
                    out.push(format!("triples file {} not found", path.display()));
                }
                if self.graph_pool != 1 {
                    out.push("graph_pool must be 1 for a triples file".to_string());
                }
            }
        }
        match &self.embedding {
            EmbeddingSource::Rotate(c) => {
                if let Err(e) = c.validate() {
                    out.push(e.to_string());
                }
            }
            EmbeddingSource::Structured { dim, spread } => {
                if *dim == 0 || dim % 2 != 0 {
                    out.push("structured dim must be positive and even".to_string());
                }
                if !(*spread >= 0.0) {
                    out.push("structured spread must be non-negative".to_string());
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    /// `(attack name, intensity, spec kind)` rows, clean first.
    pub fn rows(&self) -> Vec<(Option<AttackKind>, f64)> {
        let mut rows = vec![(None, 0.0)];
        for a in &self.attacks {
            rows.extend(a.intensities.iter().map(|&i| (Some(a.kind), i)));
        }
        rows
    }
}

/// Graph and clean embedding used by a trial.
pub struct Instance {
    pub kg: KnowledgeGraph,
    pub embedding: EmbeddingMatrix,
}

pub fn build_instance(cfg: &ExperimentConfig, index: usize) -> Result<Instance> {
    let seed = rng::derive(cfg.seed, 0x6772_6170_6800 + index as u64);
    let (kg, blocks) = match &cfg.graph {
        GraphSource::Synthetic(s) => {
            let s = SbmConfig { seed: rng::derive(seed, 1), ..s.clone() };
            (sbm_graph(&s)?, s.n_blocks)
        }
        GraphSource::Triples { path } => (kg::load_triples(path)?.graph, 5),
    };
    let embedding = match &cfg.embedding {
        EmbeddingSource::Rotate(t) => {
            let t = TrainConfig { seed: rng::derive(seed, 2), ..t.clone() };
            kg::train_rotate(&kg, &t)?.embedding
        }
        EmbeddingSource::Structured { dim, spread } => {
            structured_embedding(&kg, blocks, *dim, *spread, rng::derive(seed, 2))?
        }
    };
    Ok(Instance { kg, embedding })
}

/// Raw scores of one attack row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RowScores {
    pub attack: String,
    pub intensity: f64,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub positive_detected: Vec<bool>,
    pub negative_detected: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialScores {
    pub rows: Vec<RowScores>,
    /// Cosine between clean and watermarked entity matrices, by step count.
    pub cosine: BTreeMap<usize, Vec<f64>>,
    pub rank: Option<RankMetrics>,
}

struct TrialOut {
    rows: Vec<(f64, f64, bool, bool)>,
    cosine: Vec<(usize, f64)>,
}

fn run_trial(cfg: &ExperimentConfig, pool: &[Instance], i: usize) -> Result<TrialOut> {
    let inst = &pool[i % pool.len()];
    let seed = rng::derive(cfg.seed, i as u64);
    let n = inst.kg.n_entities();
    let dim = inst.embedding.dim();
    let s = cfg.community_size.unwrap_or_else(|| default_community_size(n));
    let ring = key_ring(n, dim, s, cfg.density, rng::derive(seed, 1), &cfg.key)?;
    let opts = EmbedOptions { community_size: Some(s), only: None, execution: Execution::Sequential };
    let marked = redundant_embed(inst.kg.graph(), inst.embedding.entities(), &ring, &opts)?;
    let marked_emb = inst.embedding.with_entities(marked.entities)?;

    let mut cosine = Vec::new();
    for &k in &cfg.cosine_steps {
        let c = if k == cfg.key.embed_steps {
            cosine_similarity(inst.embedding.entities(), marked_emb.entities())?
        } else {
            let ring_k: Vec<_> = ring.iter().map(|key| crate::spectral::WatermarkKey { embed_steps: k, ..key.clone() }).collect();
            let out = redundant_embed(inst.kg.graph(), inst.embedding.entities(), &ring_k, &opts)?;
            cosine_similarity(inst.embedding.entities(), &out.entities)?
        };
        cosine.push((k, c));
    }

    let dopts = DetectOptions { community_size: None, layered: true, execution: Execution::Sequential };
    let mut rows = Vec::new();
    for (r, (kind, intensity)) in cfg.rows().into_iter().enumerate() {
        let attack = kind.map(|k| AttackSpec::new(k, intensity, rng::derive(seed, 100 + r as u64)));
        let run = |emb: &EmbeddingMatrix| -> Result<(f64, bool)> {
            let (kg2, emb2) = match &attack {
                Some(a) => apply_attack(a, &inst.kg, emb)?,
                None => (inst.kg.clone(), emb.clone()),
            };
            let res = detect(kg2.graph(), emb2.entities(), &ring, cfg.alpha, &dopts)?;
            Ok((res.score(), res.decision))
        };
        let (pos, pos_d) = run(&marked_emb)?;
        let (neg, neg_d) = run(&inst.embedding)?;
        rows.push((pos, neg, pos_d, neg_d));
    }
    Ok(TrialOut { rows, cosine })
}

/// Embed, attack and detect for every trial; positives are watermarked,
/// negatives are the clean embedding of the same trial under the same key
/// ring and attack.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<TrialScores> {
    cfg.validate()?;
    let pool_size = match cfg.graph {
        GraphSource::Triples { .. } => 1,
        _ => cfg.graph_pool.min(cfg.trials),
    };
    let pool = par::try_map_indexed(pool_size, cfg.execution, |i| build_instance(cfg, i))?;
    let trials = par::try_map_indexed(cfg.trials, cfg.execution, |i| run_trial(cfg, &pool, i))?;

    let mut out = TrialScores::default();
    for (kind, intensity) in cfg.rows() {
        out.rows.push(RowScores {
            attack: kind.map_or("none", AttackKind::name).to_string(),
            intensity,
            ..RowScores::default()
        });
    }
    for t in &trials {
        for (row, &(p, n, pd, nd)) in out.rows.iter_mut().zip(&t.rows) {
            row.positive.push(p);
            row.negative.push(n);
            row.positive_detected.push(pd);
            row.negative_detected.push(nd);
        }
        for &(k, c) in &t.cosine {
            out.cosine.entry(k).or_default().push(c);
        }
    }
    if cfg.rank_metrics {
        let ring_seed = rng::derive(rng::derive(cfg.seed, 0), 1);
        let inst = &pool[0];
        let n = inst.kg.n_entities();
        let s = cfg.community_size.unwrap_or_else(|| default_community_size(n));
        let ring = key_ring(n, inst.embedding.dim(), s, cfg.density, ring_seed, &cfg.key)?;
        let opts = EmbedOptions { community_size: Some(s), only: None, execution: cfg.execution };
        let marked = redundant_embed(inst.kg.graph(), inst.embedding.entities(), &ring, &opts)?;
        let emb = inst.embedding.with_entities(marked.entities)?;
        out.rank = Some(rank_metrics(&link_prediction_ranks(&inst.kg, &emb)?, cfg.hits_k)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub method: String,
    pub attack: String,
    pub intensity: f64,
    pub auc: f64,
    pub tpr_at_fpr_1pct: f64,
    pub cosine_50: Option<f64>,
    pub cosine_65: Option<f64>,
    pub cosine_75: Option<f64>,
    pub gmr: Option<f64>,
    pub hmr: Option<f64>,
    pub amr: Option<f64>,
    pub hits10: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub notes: Vec<String>,
    pub auc: f64,
    pub tpr_at_fpr: f64,
    pub cosine_by_steps: BTreeMap<usize, f64>,
    pub rank: Option<RankMetrics>,
    pub rows: Vec<MetricsRow>,
    pub false_positives: usize,
    pub true_positives: usize,
    pub trials: usize,
}

/// Protocol choices recorded with every report.
pub const REPORT_NOTES: [&str; 3] = [
    "score = -ln(min p) over all key/community/layer tests",
    "negatives = unwatermarked embedding of the same trial, same key ring and attack",
    "ties in AUC counted as one half",
];

pub fn summarize(cfg: &ExperimentConfig, scores: &TrialScores) -> Result<MetricsReport> {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let cosine_by_steps: BTreeMap<usize, f64> = scores.cosine.iter().map(|(&k, v)| (k, mean(v))).collect();
    let mut rows = Vec::new();
    for r in &scores.rows {
        rows.push(MetricsRow {
            dataset: cfg.dataset.clone(),
            method: cfg.method.clone(),
            attack: r.attack.clone(),
            intensity: r.intensity,
            auc: auc(&r.positive, &r.negative)?,
            tpr_at_fpr_1pct: tpr_at_fpr(&r.positive, &r.negative, 0.01)?,
            cosine_50: cosine_by_steps.get(&50).copied(),
            cosine_65: cosine_by_steps.get(&65).copied(),
            cosine_75: cosine_by_steps.get(&75).copied(),
            gmr: scores.rank.map(|m| m.gmr),
            hmr: scores.rank.map(|m| m.hmr),
            amr: scores.rank.map(|m| m.amr),
            hits10: scores.rank.map(|m| m.hits_at_k),
        });
    }
    let clean = &scores.rows[0];
    Ok(MetricsReport {
        notes: REPORT_NOTES.iter().map(|s| s.to_string()).collect(),
        auc: rows[0].auc,
        tpr_at_fpr: rows[0].tpr_at_fpr_1pct,
        cosine_by_steps,
        rank: scores.rank,
        false_positives: clean.negative_detected.iter().filter(|&&d| d).count(),
        true_positives: clean.positive_detected.iter().filter(|&&d| d).count(),
        trials: cfg.trials,
        rows,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    summarize(cfg, &run_trials(cfg)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// CSV with one row per attack setting, preceded by `#` note lines.
pub fn write_report_csv(w: impl Write, report: &MetricsReport) -> Result<()> {
    let mut w = w;
    for n in &report.notes {
        writeln!(w, "# {n}")?;
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "dataset",
        "method",
        "attack",
        "intensity",
        "auc",
        "tpr_at_fpr_1pct",
        "cosine_50",
        "cosine_65",
        "cosine_75",
        "gmr",
        "hmr",
        "amr",
        "hits10",
    ])?;
    for r in &report.rows {
        csv.write_record([
            r.dataset.clone(),
            r.method.clone(),
            r.attack.clone(),
            format!("{}", r.intensity),
            format!("{:.6}", r.auc),
            format!("{:.6}", r.tpr_at_fpr_1pct),
            fmt_opt(r.cosine_50),
            fmt_opt(r.cosine_65),
            fmt_opt(r.cosine_75),
            fmt_opt(r.gmr),
            fmt_opt(r.hmr),
            fmt_opt(r.amr),
            fmt_opt(r.hits10),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Write `report.csv` and `summary.json` into `dir`.
pub fn write_reports(dir: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_report_csv(std::fs::File::create(dir.join("report.csv"))?, report)?;
    crate::io::write_json(dir.join("summary.json"), report)
}
