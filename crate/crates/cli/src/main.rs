//! `kgmark` command-line front end.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgmark::attacks::{apply_attack, AttackKind, AttackSpec};
use kgmark::detector::{detect, DetectOptions, DetectionResult};
use kgmark::diffusion::Sampler;
use kgmark::eval::{run_experiment, write_reports, ExperimentConfig};
use kgmark::graph::{align_graph, default_community_size, key_ring, partition_communities, redundant_embed};
use kgmark::graph::{EmbedOptions, KeySettings};
use kgmark::io;
use kgmark::kg::{self, EmbeddingMatrix, KnowledgeGraph, LabelMap, TrainConfig};
use kgmark::lawmm::{optimize_mask, LawmmConfig, LawmmSample};
use kgmark::spectral::gen_signature;
use kgmark::{codec, rng};
use ndarray::Axis;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] kgmark::Error),
    #[error("{0}")]
    Usage(String),
}

type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Parser)]
#[command(name = "kgmark", version, about = "Watermark knowledge-graph embeddings in a diffusion latent space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a RotatE embedding from a triples file.
    TrainKge(TrainArgs),
    /// Watermark an embedding and write its key.
    Embed(EmbedArgs),
    /// Test an embedding against one or more keys.
    Detect(DetectArgs),
    /// Apply a post-editing attack to a graph and embedding.
    Attack(AttackArgs),
    /// Run a seeded detection experiment.
    Eval(EvalArgs),
    /// Learn a watermark mask from an embedding's communities.
    OptimizeMask(OptimizeArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    triples: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    embedding: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// Output embedding path.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the key ring; defaults to `<out>.key.json`.
    #[arg(long)]
    key: Option<PathBuf>,
    /// Use this key ring instead of generating one.
    #[arg(long)]
    key_in: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    embedding: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    key: Vec<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    embedding: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    attack: Option<String>,
    #[arg(long)]
    intensity: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output embedding path; the graph goes to `<out>.tsv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    density: Option<f64>,
    /// Output directory for `report.csv` and `summary.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    embedding: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// Key ring output; the trace goes to `<out>.trace.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Settings file shared by the subcommands; flags take precedence.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CliConfig {
    alpha: Option<f64>,
    steps: Option<usize>,
    density: Option<f64>,
    seed: Option<u64>,
    attack: Option<String>,
    intensity: Option<f64>,
    community_size: Option<usize>,
    train: Option<TrainConfig>,
    key: Option<KeySettings>,
    lawmm: Option<LawmmConfig>,
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if !path.is_file() {
        return usage(format!("{what} {} not found", path.display()));
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> CliResult<CliConfig> {
    match path {
        None => Ok(CliConfig::default()),
        Some(p) => {
            require_file(p, "config")?;
            Ok(io::read_json(p)?)
        }
    }
}

fn log_resolved<T: Serialize>(name: &str, value: &T) {
    match serde_json::to_string(value) {
        Ok(s) => log::info!("{name} resolved config: {s}"),
        Err(e) => log::warn!("could not serialize config: {e}"),
    }
}

fn check_density(d: f64) -> CliResult<f64> {
    if !(d > 0.0 && d < 1.0) {
        return usage(format!("density {d} outside (0, 1)"));
    }
    Ok(d)
}

fn check_alpha(a: f64) -> CliResult<f64> {
    if !(a > 0.0 && a < 1.0) {
        return usage(format!("alpha {a} outside (0, 1)"));
    }
    Ok(a)
}

fn key_settings(cfg: &CliConfig, steps: Option<usize>) -> CliResult<KeySettings> {
    let mut s = cfg.key.clone().unwrap_or_default();
    if let Some(k) = steps.or(cfg.steps) {
        if k == 0 || k > s.schedule.steps {
            return usage(format!("steps {k} outside 1..={}", s.schedule.steps));
        }
        s.embed_steps = k;
        s.detect_steps = k;
    }
    Ok(s)
}

/// Embedding plus the graph read against its label sidecar.
fn load_pair(embedding: &Path, graph: &Path) -> CliResult<(KnowledgeGraph, EmbeddingMatrix)> {
    require_file(embedding, "embedding")?;
    require_file(graph, "graph")?;
    let emb = io::read_embedding(embedding)?;
    let labels_file = io::labels_path(embedding);
    let labels = if labels_file.is_file() {
        io::read_labels(embedding)?
    } else {
        LabelMap::numeric(emb.n_entities(), emb.relation_phases().nrows())
    };
    if labels.entities.len() != emb.n_entities() {
        return usage("label sidecar does not match embedding rows");
    }
    let kg = kg::load_triples_with_labels(graph, &labels)?.graph;
    Ok((kg, emb))
}

fn write_embedding_with_labels(path: &Path, emb: &EmbeddingMatrix, labels: &LabelMap) -> CliResult<()> {
    io::write_embedding(path, emb)?;
    io::write_labels(path, labels)?;
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs) -> CliResult<ExitCode> {
    require_file(&a.triples, "triples")?;
    let cfg = load_config(a.config.as_deref())?;
    let mut train = cfg.train.clone().unwrap_or_default();
    if let Some(s) = a.seed.or(cfg.seed) {
        train.seed = s;
    }
    log_resolved("train-kge", &train);
    let loaded = kg::load_triples(&a.triples)?;
    let outcome = kg::train_rotate(&loaded.graph, &train)?;
    write_embedding_with_labels(&a.out, &outcome.embedding, loaded.graph.labels())?;
    log::info!("final epoch loss {:.6}", outcome.epoch_loss.last().copied().unwrap_or(f64::NAN));
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EmbedResolved<'a> {
    density: f64,
    seed: u64,
    community_size: usize,
    key: &'a KeySettings,
    key_in: Option<&'a Path>,
}

fn cmd_embed(a: EmbedArgs) -> CliResult<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let density = check_density(a.density.or(cfg.density).unwrap_or(kgmark::DEFAULT_DENSITY))?;
    let settings = key_settings(&cfg, a.steps)?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    if let Some(k) = &a.key_in {
        require_file(k, "key")?;
    }
    let (kg, emb) = load_pair(&a.embedding, &a.graph)?;
    let n = kg.n_entities();
    let s = cfg.community_size.unwrap_or_else(|| default_community_size(n));
    log_resolved(
        "embed",
        &EmbedResolved { density, seed, community_size: s, key: &settings, key_in: a.key_in.as_deref() },
    );
    let ring = match &a.key_in {
        Some(p) => io::read_key_ring(p)?,
        None => key_ring(n, emb.dim(), s, density, seed, &settings)?,
    };
    let opts = EmbedOptions { community_size: Some(s), ..EmbedOptions::default() };
    let out = redundant_embed(kg.graph(), emb.entities(), &ring, &opts)?;
    let marked = emb.with_entities(out.entities)?;
    write_embedding_with_labels(&a.out, &marked, kg.labels())?;
    let key_path = a.key.clone().unwrap_or_else(|| sidecar(&a.out, ".key.json"));
    io::write_key_ring(&key_path, &ring)?;
    io::write_json(sidecar(&a.out, ".partition.json"), &out.partition)?;
    let cos = kgmark::eval::cosine_similarity(emb.entities(), marked.entities())?;
    log::info!("cosine(original, watermarked) = {cos:.6}");
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct DetectReport<'a> {
    graph_id: String,
    alpha: f64,
    corrected_alpha: f64,
    min_p: f64,
    min_ln_p: f64,
    decision: bool,
    communities: &'a [kgmark::detector::TestRecord],
}

fn cmd_detect(a: DetectArgs) -> CliResult<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let alpha = check_alpha(a.alpha.or(cfg.alpha).unwrap_or(kgmark::DEFAULT_ALPHA))?;
    for k in &a.key {
        require_file(k, "key")?;
    }
    let (kg, emb) = load_pair(&a.embedding, &a.graph)?;
    let mut ring = Vec::new();
    for k in &a.key {
        ring.extend(io::read_key_ring(k)?);
    }
    log_resolved("detect", &serde_json::json!({ "alpha": alpha, "keys": ring.len() }));
    let opts = DetectOptions { community_size: cfg.community_size, ..DetectOptions::default() };
    let res: DetectionResult = detect(kg.graph(), emb.entities(), &ring, alpha, &opts)?;
    let report = DetectReport {
        graph_id: a.graph.display().to_string(),
        alpha,
        corrected_alpha: res.corrected_alpha,
        min_p: res.min_p,
        min_ln_p: res.min_ln_p,
        decision: res.decision,
        communities: &res.communities,
    };
    match &a.out {
        Some(p) => io::write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(kgmark::Error::from)?),
    }
    Ok(if res.decision { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_attack(a: AttackArgs) -> CliResult<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let kind_name = match a.attack.clone().or(cfg.attack.clone()) {
        Some(k) => k,
        None => return usage("--attack is required"),
    };
    let kind = AttackKind::parse(&kind_name)?;
    let spec = AttackSpec::new(kind, a.intensity.or(cfg.intensity).unwrap_or(0.0), a.seed.or(cfg.seed).unwrap_or(0));
    spec.validate()?;
    log_resolved("attack", &spec);
    let (kg, emb) = load_pair(&a.embedding, &a.graph)?;
    let (kg2, emb2) = apply_attack(&spec, &kg, &emb)?;
    let kg2 = if kind == AttackKind::Isomorphism && spec.intensity > 0.0 {
        // names would reveal the permutation; relabel by new position
        let labels = LabelMap {
            entities: (0..kg2.n_entities()).map(|i| format!("v{i}")).collect(),
            relations: kg2.labels().relations.clone(),
        };
        kg2.with_labels(labels)?
    } else {
        kg2
    };
    write_embedding_with_labels(&a.out, &emb2, kg2.labels())?;
    let mut w = BufWriter::new(File::create(sidecar(&a.out, ".tsv")).map_err(kgmark::Error::from)?);
    kg::write_triples(&kg2, &mut w)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: EvalArgs) -> CliResult<ExitCode> {
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => {
            require_file(p, "config")?;
            io::read_json(p)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(x) = a.alpha {
        cfg.alpha = x;
    }
    if let Some(d) = a.density {
        cfg.density = d;
    }
    if let Some(k) = a.steps {
        cfg.key.embed_steps = k;
        cfg.key.detect_steps = k;
    }
    let problems = cfg.problems();
    if !problems.is_empty() {
        return usage(format!("invalid experiment config:\n  - {}", problems.join("\n  - ")));
    }
    log_resolved("eval", &cfg);
    let report = run_experiment(&cfg)?;
    write_reports(&a.out, &report)?;
    log::info!("clean AUC {:.4}", report.auc);
    Ok(ExitCode::SUCCESS)
}

fn cmd_optimize(a: OptimizeArgs) -> CliResult<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let density = check_density(a.density.or(cfg.density).unwrap_or(kgmark::DEFAULT_DENSITY))?;
    let settings = key_settings(&cfg, a.steps)?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let mut lawmm = cfg.lawmm.clone().unwrap_or_default();
    lawmm.target_density = density;
    lawmm.seed = seed;
    lawmm.alpha_correction = settings.alpha_correction;
    log_resolved("optimize-mask", &serde_json::json!({ "lawmm": lawmm, "key": settings }));
    let (kg, emb) = load_pair(&a.embedding, &a.graph)?;
    let n = kg.n_entities();
    let s = cfg.community_size.unwrap_or_else(|| default_community_size(n));
    let partition = partition_communities(&align_graph(kg.graph()), s)?;
    let sampler = Sampler::new(&settings.schedule, settings.predictor)?;

    let mut ring = Vec::new();
    let mut trace = Vec::new();
    for (shape_index, m) in kgmark::graph::redundant::community_heights(n, s)?.into_iter().enumerate() {
        let mut samples = Vec::new();
        for (c, members) in partition.communities.iter().enumerate() {
            if members.len() != m {
                continue;
            }
            let block = emb.entities().select(Axis(0), members);
            let grid = codec::encode_block(&block, c, members.clone())?;
            samples.push(LawmmSample::from_clean(&grid.data, &sampler, settings.embed_steps)?);
        }
        if samples.is_empty() {
            return usage(format!("no community samples of height {m}"));
        }
        let key_seed = rng::derive(seed, 2 * shape_index as u64);
        let sig = gen_signature(key_seed, settings.sigma2, m, emb.dim())?;
        let out = optimize_mask(&samples, &sig.spatial, &sampler, &lawmm)?;
        trace.extend(out.trace.iter().map(|r| (shape_index, *r)));
        ring.push(settings.key(key_seed, out.mask));
    }
    io::write_key_ring(&a.out, &ring)?;
    let mut w = String::from("shape,iteration,loss,density,gradient_norm\n");
    for (shape_index, r) in trace {
        w.push_str(&format!("{shape_index},{},{},{},{}\n", r.iteration, r.loss, r.density, r.gradient_norm));
    }
    std::fs::write(sidecar(&a.out, ".trace.csv"), w).map_err(kgmark::Error::from)?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::TrainKge(a) => cmd_train(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Eval(a) => cmd_eval(a),
        Command::OptimizeMask(a) => cmd_optimize(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    kgmark::par::init_from_env();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
