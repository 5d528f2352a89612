//! Subcommands of the `kgzsl` binary.

pub mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use kgzsl::checkpoint::Checkpoint;
use kgzsl::data::{synth_generate, Dataset, SynthSpec};
use kgzsl::diffcore::gradcheck::{finite_diff_check, finite_diff_check_tampered, DEFAULT_EPS};
use kgzsl::diffcore::{ParamStore, Rng, Tape, Var};
use kgzsl::embeddings::EmbeddingTable;
use kgzsl::graph::{build_adjacency, ClassSpace, GraphMode, KnowledgeGraph};
use kgzsl::model::{joint_loss, Mode, Model, ModelConfig, Variant};
use kgzsl::taxonomy::Taxonomy;
use kgzsl::train_eval::{evaluate, log_csv, prepare_graph, train, MetricsReport, PreparedSplit};

pub use config::RunConfig;

/// Largest per-entry relative error the `gradcheck` command accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or input paths.
    Usage(String),
    Core(kgzsl::Error),
    /// A check ran and failed.
    Failed(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<kgzsl::Error> for CliError {
    fn from(e: kgzsl::Error) -> Self {
        match e {
            kgzsl::Error::Config(m) => CliError::Usage(format!("configuration error: {m}")),
            e => CliError::Core(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "kgzsl", version, about = "Zero-shot multi-label classification over an extended class graph")]
pub struct Cli {
    /// Flat `key = value` run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default `runs/<unix-secs>-seed<seed>`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// rgcn_posvae, rgcn or rgcn_xl.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// WUP threshold for graph edges.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    /// Override any config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

impl From<Split> for GraphMode {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => GraphMode::Train,
            Split::Test => GraphMode::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Layers,
    Threshold,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the class graph for a split and write its edge list.
    BuildGraph {
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
    },
    /// Train on the train split and write a checkpoint.
    Train,
    /// Score a split with a checkpoint and write metrics.
    Eval {
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate once per value of a hyperparameter.
    Ablate {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values; defaults to 1..6 layers or 0.1..0.8.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Compare analytic and finite-difference gradients on a small instance.
    Gradcheck {
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Generate a synthetic benchmark.
    SynthData,
}

impl Cli {
    /// Config file, then `--set` overrides in order, then dedicated flags.
    pub fn run_config(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.set("train.seed", &s.to_string())?;
        }
        if let Some(v) = &self.variant {
            cfg.set("model.variant", v)?;
        }
        if let Some(t) = self.threshold {
            cfg.set("graph.threshold", &t.to_string())?;
        }
        if let Some(l) = self.layers {
            cfg.set("model.layers", &l.to_string())?;
        }
        if let Some(o) = &self.out {
            cfg.set("paths.out_dir", &o.display().to_string())?;
        }
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::BuildGraph { split } => build_graph_cmd(&cfg, (*split).into()),
        Command::Train => train_cmd(&cfg).map(|_| ()),
        Command::Eval { split, checkpoint } => eval_cmd(&cfg, (*split).into(), checkpoint.as_deref()).map(|_| ()),
        Command::Ablate { axis, values } => ablate_cmd(&cfg, *axis, values).map(|_| ()),
        Command::Gradcheck { corrupt_gradient } => gradcheck_cmd(*corrupt_gradient),
        Command::SynthData => synth_cmd(&cfg),
    }
}

fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = match &cfg.paths.out_dir {
        Some(d) => d.clone(),
        None => {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            PathBuf::from("runs").join(format!("{secs}-seed{}", cfg.train.seed))
        }
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn manifest_path(cfg: &RunConfig, mode: GraphMode) -> CliResult<&Path> {
    let (p, key) = match mode {
        GraphMode::Train => (&cfg.paths.train_manifest, "paths.train_manifest"),
        GraphMode::Test => (&cfg.paths.test_manifest, "paths.test_manifest"),
    };
    let p = p.as_deref().ok_or_else(|| CliError::Usage(format!("`{key}` is not set")))?;
    if !p.is_file() {
        return Err(CliError::Usage(format!("{key}: no such file {}", p.display())));
    }
    Ok(p)
}

/// Resolves a resource path: explicit config key, else the manifest's entry.
fn resource(explicit: &Option<PathBuf>, from_manifest: &Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
    let p = explicit
        .clone()
        .or_else(|| from_manifest.clone())
        .ok_or_else(|| CliError::Usage(format!("`{key}` is not set and the manifest names none")))?;
    if !p.is_file() {
        return Err(CliError::Usage(format!("{key}: no such file {}", p.display())));
    }
    Ok(p)
}

/// A loaded split with its taxonomy and embedding table.
struct SplitData {
    dataset: Dataset,
    taxonomy: Taxonomy,
    embeddings: EmbeddingTable,
}

fn load_split(cfg: &RunConfig, mode: GraphMode, d_s: usize, require_aux: bool) -> CliResult<SplitData> {
    let path = manifest_path(cfg, mode)?;
    let dataset = Dataset::load(path, require_aux)?;
    if dataset.manifest.split != mode {
        return Err(CliError::Usage(format!(
            "{} is a {} manifest, expected {mode}",
            path.display(),
            dataset.manifest.split
        )));
    }
    let tax = resource(&cfg.paths.taxonomy, &dataset.manifest.taxonomy, "paths.taxonomy")?;
    let emb = resource(&cfg.paths.embeddings, &dataset.manifest.embeddings, "paths.embeddings")?;
    let taxonomy = Taxonomy::load(&tax)?;
    let embeddings = EmbeddingTable::load(&emb, Some(d_s))?;
    info!(
        "loaded {} {mode} samples, {} taxonomy nodes, {} embeddings",
        dataset.len(),
        taxonomy.len(),
        embeddings.len()
    );
    Ok(SplitData {
        dataset,
        taxonomy,
        embeddings,
    })
}

pub fn build_graph_cmd(cfg: &RunConfig, mode: GraphMode) -> CliResult<()> {
    let path = manifest_path(cfg, mode)?;
    let dataset = Dataset::load(path, false)?;
    let m = &dataset.manifest;
    let tax = Taxonomy::load(resource(&cfg.paths.taxonomy, &m.taxonomy, "paths.taxonomy")?)?;
    let space = ClassSpace::build(&m.seen, &m.unseen, &m.aux, mode)?;
    let graph = build_adjacency(&space, &tax, cfg.threshold)?;
    let dir = out_dir(cfg)?;
    write(&dir.join("graph.edges"), &graph.to_edge_list())?;
    write(&dir.join("classes.tsv"), &graph.class_index())?;
    println!(
        "{} nodes ({} seen, {} unseen, {} aux), {} edges at threshold {}",
        graph.len(),
        space.seen.len(),
        space.unseen.len(),
        space.n_aux(),
        graph.edge_count,
        cfg.threshold
    );
    for ((a, b), n) in graph.edge_counts_by_partition() {
        println!("{}-{}\t{n}", a.name(), b.name());
    }
    Ok(())
}

/// Result of a `train` run.
pub struct TrainRun {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub graph: KnowledgeGraph,
    pub epochs: usize,
}

pub fn train_cmd(cfg: &RunConfig) -> CliResult<TrainRun> {
    cfg.train.validate()?;
    let variant = cfg.model.variant;
    let split = load_split(cfg, GraphMode::Train, cfg.model.d_s, variant.uses_aux())?;
    let model_cfg = cfg.model_config(split.dataset.manifest.d_x);
    model_cfg.validate()?;
    let (graph, inputs) = prepare_graph(
        &split.taxonomy,
        &split.embeddings,
        &split.dataset.manifest,
        cfg.threshold,
        GraphMode::Train,
    )?;
    info!("train graph: {} nodes, {} edges", graph.len(), graph.edge_count);
    let data = PreparedSplit::new(&split.dataset, &graph.space)?;
    let dir = out_dir(cfg)?;
    let every = cfg.checkpoint_every_epoch;
    let outcome = train(&model_cfg, &cfg.train, &inputs, &data, |log, model, store| {
        info!(
            "epoch {:>4}  loss {:.6}  bce {:.6}  aux {:.6}  lr {:e}",
            log.epoch, log.loss, log.bce, log.aux, log.lr
        );
        if every {
            Checkpoint {
                config: model.config().clone(),
                epoch: log.epoch,
                params: store.clone(),
                optimizer: None,
            }
            .save(dir.join(format!("checkpoint_epoch{:04}.bin", log.epoch)))?;
        }
        Ok(())
    })?;
    let ckpt = dir.join("checkpoint.bin");
    outcome.checkpoint().save(&ckpt)?;
    info!("wrote {}", ckpt.display());
    write(&dir.join("train_log.csv"), &log_csv(&outcome.log))?;
    let last = outcome.log.last();
    let record = serde_json::json!({
        "command": "train",
        "seed": cfg.train.seed,
        "config": cfg.echo(),
        "model": model_cfg,
        "epochs_run": outcome.log.len(),
        "final_loss": last.map(|l| l.loss),
        "final_bce": last.map(|l| l.bce),
        "graph_edges": graph.edge_count,
    });
    write(&dir.join("run.json"), &serde_json::to_string_pretty(&record).expect("json"))?;
    println!("trained {} epochs; checkpoint {}", outcome.log.len(), ckpt.display());
    Ok(TrainRun {
        dir,
        checkpoint: ckpt,
        graph,
        epochs: outcome.log.len(),
    })
}

/// Model config for evaluation: the checkpoint's, with explicitly set
/// `model.*` keys taking precedence.
fn eval_model_config(cfg: &RunConfig, stored: &ModelConfig) -> ModelConfig {
    let mut m = stored.clone();
    if cfg.is_explicit("model.d_x") {
        m.d_x = cfg.d_x.unwrap_or(m.d_x);
    }
    if cfg.is_explicit("model.d_s") {
        m.d_s = cfg.model.d_s;
    }
    if cfg.is_explicit("model.d_h") {
        m.d_h = cfg.model.d_h;
    }
    if cfg.is_explicit("model.hidden") {
        m.hidden = cfg.model.hidden;
    }
    if cfg.is_explicit("model.layers") {
        m.layers = cfg.model.layers;
    }
    if cfg.is_explicit("model.variant") {
        m.variant = cfg.model.variant;
    }
    m
}

/// Result of an `eval` run.
pub struct EvalRun {
    pub report: MetricsReport,
    pub graph: KnowledgeGraph,
}

pub fn eval_cmd(cfg: &RunConfig, mode: GraphMode, checkpoint: Option<&Path>) -> CliResult<EvalRun> {
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.checkpoint.clone())
        .ok_or_else(|| CliError::Usage("no checkpoint given (--checkpoint or paths.checkpoint)".into()))?;
    if !ckpt_path.is_file() {
        return Err(CliError::Usage(format!("checkpoint: no such file {}", ckpt_path.display())));
    }
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let model_cfg = eval_model_config(cfg, &ckpt.config);
    model_cfg.validate()?;
    let (model, store) = ckpt.restore(&model_cfg)?;
    let split = load_split(cfg, mode, model_cfg.d_s, model_cfg.variant.uses_aux())?;
    let (graph, inputs) = prepare_graph(&split.taxonomy, &split.embeddings, &split.dataset.manifest, cfg.threshold, mode)?;
    info!("{mode} graph: {} nodes, {} edges", graph.len(), graph.edge_count);
    let data = PreparedSplit::new(&split.dataset, &graph.space)?;
    let report = evaluate(&model, &store, &inputs, &graph.space, &data)?;
    let dir = out_dir(cfg)?;
    write(&dir.join("metrics.json"), &report.to_json())?;
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "seen mAP {}  seen miAP {}  unseen mAP {}  unseen miAP {}  ({} images)",
        f(report.seen_map),
        f(report.seen_miap),
        f(report.unseen_map),
        f(report.unseen_miap),
        report.images
    );
    Ok(EvalRun { report, graph })
}

pub const ABLATION_HEADER: &str = "value,status,edges_train,edges_test,seen_map,seen_miap,unseen_map,unseen_miap";

fn ablation_values(axis: Axis, raw: &[String]) -> CliResult<Vec<String>> {
    let values: Vec<String> = if raw.is_empty() {
        match axis {
            Axis::Layers => (1..=6).map(|l| l.to_string()).collect(),
            Axis::Threshold => (1..=8).map(|t| format!("0.{t}")).collect(),
        }
    } else {
        raw.iter().map(|s| s.trim().to_string()).collect()
    };
    for v in &values {
        let ok = match axis {
            Axis::Layers => v.parse::<usize>().is_ok_and(|l| l >= 1),
            Axis::Threshold => v.parse::<f64>().is_ok_and(|t| t > 0.0 && t <= 1.0),
        };
        if !ok {
            let domain = match axis {
                Axis::Layers => "a positive integer",
                Axis::Threshold => "a number in (0, 1]",
            };
            return Err(CliError::Usage(format!("ablation value `{v}` must be {domain}")));
        }
    }
    Ok(values)
}

/// Runs train + eval per value; failed runs are recorded, not fatal.
/// Returns the CSV path.
pub fn ablate_cmd(cfg: &RunConfig, axis: Axis, raw: &[String]) -> CliResult<PathBuf> {
    let values = ablation_values(axis, raw)?;
    manifest_path(cfg, GraphMode::Train)?;
    manifest_path(cfg, GraphMode::Test)?;
    let dir = out_dir(cfg)?;
    let (key, name) = match axis {
        Axis::Layers => ("model.layers", "layers"),
        Axis::Threshold => ("graph.threshold", "threshold"),
    };
    let mut csv = format!("{ABLATION_HEADER}\n");
    let f = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for v in &values {
        let mut run_cfg = cfg.clone();
        run_cfg.set(key, v)?;
        run_cfg.set("paths.out_dir", &dir.join(format!("{name}_{v}")).display().to_string())?;
        info!("ablation {name} = {v}");
        let result = train_cmd(&run_cfg).and_then(|t| {
            let e = eval_cmd(&run_cfg, GraphMode::Test, Some(&t.checkpoint))?;
            Ok((t, e))
        });
        match result {
            Ok((t, e)) => {
                let r = &e.report;
                csv += &format!(
                    "{v},ok,{},{},{},{},{},{}\n",
                    t.graph.edge_count,
                    e.graph.edge_count,
                    f(r.seen_map),
                    f(r.seen_miap),
                    f(r.unseen_map),
                    f(r.unseen_miap)
                );
            }
            Err(err) => {
                log::error!("ablation {name} = {v} failed: {err}");
                csv += &format!("{v},failed,,,,,,\n");
            }
        }
    }
    let path = dir.join(format!("ablation_{name}.csv"));
    write(&path, &csv)?;
    print!("{csv}");
    Ok(path)
}

/// Worst relative error per parameter group and variant.
pub struct GradcheckLine {
    pub variant: Variant,
    pub group: String,
    pub max_rel_error: f64,
}

/// Checks the full joint loss of every variant on a tiny synthetic graph.
pub fn gradcheck(corrupt: bool) -> CliResult<Vec<GradcheckLine>> {
    let spec = SynthSpec {
        n_seen: 3,
        n_unseen: 1,
        n_aux: 2,
        n_train: 4,
        n_test: 4,
        d_x: 3,
        d_s: 4,
        n_domains: 1,
        label_prob: 0.5,
        ..SynthSpec::default()
    };
    let bench = synth_generate(&spec, 7)?;
    // below the domain-level similarity so targets are linked to each other
    let threshold = 0.4;
    let (graph, inputs) = prepare_graph(&bench.taxonomy, &bench.embeddings, &bench.train.manifest, threshold, GraphMode::Train)?;
    let data = PreparedSplit::new(&bench.train, &graph.space)?;
    let idx = [0, 1];
    let labels = data.label_rows(&idx)?;
    let mut lines = Vec::new();
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            d_x: 3,
            d_s: 4,
            d_h: 3,
            hidden: 5,
            layers: 2,
            variant,
        };
        let (model, mut store) = Model::new(cfg, &mut Rng::new(15))?;
        let loss = |store: &ParamStore, tape: &mut Tape| -> kgzsl::Result<Var> {
            let out = model.forward_batch(tape, store, &inputs, &data.images(&idx), &mut Rng::new(99), Mode::Train)?;
            joint_loss(tape, out.scores, &labels, out.aux_loss, 1.0)
        };
        let report = if corrupt {
            finite_diff_check_tampered(&mut store, DEFAULT_EPS, loss, |s| {
                if let Some(p) = s.iter_mut().next() {
                    p.grad.data_mut()[0] += 1.0;
                }
            })?
        } else {
            finite_diff_check(&mut store, DEFAULT_EPS, loss)?
        };
        let mut groups: Vec<GradcheckLine> = Vec::new();
        for p in &report.params {
            let g = Model::param_group(&p.name);
            match groups.iter_mut().find(|l| l.group == g) {
                Some(l) => l.max_rel_error = l.max_rel_error.max(p.max_rel_error),
                None => groups.push(GradcheckLine {
                    variant,
                    group: g.to_string(),
                    max_rel_error: p.max_rel_error,
                }),
            }
        }
        lines.extend(groups);
    }
    Ok(lines)
}

pub fn gradcheck_cmd(corrupt: bool) -> CliResult<()> {
    let lines = gradcheck(corrupt)?;
    let mut worst: f64 = 0.0;
    for l in &lines {
        let verdict = if l.max_rel_error < GRADCHECK_TOLERANCE { "ok" } else { "FAIL" };
        println!("{:<12} {:<16} {:.3e}  {verdict}", l.variant.name(), l.group, l.max_rel_error);
        worst = worst.max(l.max_rel_error);
    }
    println!("worst relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e})");
    if worst < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Failed(format!("gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}")))
    }
}

pub fn synth_cmd(cfg: &RunConfig) -> CliResult<()> {
    let bench = synth_generate(&cfg.synth, cfg.train.seed)?;
    let dir = out_dir(cfg)?;
    let (train, test) = bench.write(&dir)?;
    println!("{}\n{}", train.display(), test.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ablation_values() {
        assert_eq!(ablation_values(Axis::Layers, &[]).unwrap(), ["1", "2", "3", "4", "5", "6"]);
        assert_eq!(
            ablation_values(Axis::Threshold, &[]).unwrap(),
            ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8"]
        );
        assert!(ablation_values(Axis::Layers, &["2.5".into()]).is_err());
        assert!(ablation_values(Axis::Threshold, &["0".into()]).is_err());
    }

    #[test]
    fn flags_override_config_and_set() {
        let cli = Cli::try_parse_from([
            "kgzsl", "train", "--set", "train.seed=5", "--seed", "9", "--variant", "rgcn", "--layers", "3", "--threshold",
            "0.6",
        ])
        .unwrap();
        let cfg = cli.run_config().unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.model.variant, Variant::Rgcn);
        assert_eq!(cfg.model.layers, 3);
        assert_eq!(cfg.threshold, 0.6);
        assert!(cfg.is_explicit("model.layers") && !cfg.is_explicit("model.d_h"));
    }

    #[test]
    fn eval_config_prefers_explicit_keys() {
        let stored = ModelConfig { d_x: 7, hidden: 12, ..ModelConfig::default() };
        let mut cfg = RunConfig::default();
        assert_eq!(eval_model_config(&cfg, &stored), stored);
        cfg.set("model.hidden", "20").unwrap();
        assert_eq!(eval_model_config(&cfg, &stored).hidden, 20);
        assert_eq!(eval_model_config(&cfg, &stored).d_x, 7);
    }
}
