//! Command implementations behind the `tetrad` binary.

pub mod error;
pub mod manifest;

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;
use tetrad_core::{Model, ParamStore, Tokenizer};
use tetrad_data::{
    build_dataset, load_or_build, load_pairs, load_records, make_target_variant, synth_corpus, unify_records,
    write_jsonl, DatasetKind, EmbeddingTable, InstructionPair, Music4wayRecord, RemoteConfig, RemoteUnifier,
    TargetVariant, TaskTag, TemplateUnifier, Unifier, RECORDS_FILE,
};
use tetrad_train::grid::{default_grid, run_ablation_grid, GridConfig};
use tetrad_train::pipeline::{init_model, run_benchmarks, write_reports};
use tetrad_train::trainer::{load_model, MODEL_DIR};
use tetrad_train::{begin_stage2, build_tokenizer, gradcheck, Corpus, Datasets, RunConfig, Sanity, Trainer};

pub use error::{CliError, Result};
pub use manifest::{claim_dir, claim_file, tree_hash, Hashed, RunManifest, MANIFEST_FILE};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const RUN_CONFIG_FILE: &str = "run.toml";
/// Gradient-check failure threshold (max relative error).
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "tetrad", version, about = "Multimodal music-understanding toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic four-way corpus (music, video, image, text).
    SynthData(SynthArgs),
    /// Build one instruction dataset from a corpus.
    BuildInstructions(BuildArgs),
    /// Train stage 1 or stage 2.
    Train(TrainArgs),
    /// Score a trained run on test splits.
    Eval(EvalArgs),
    /// Train and score the ablation grid.
    Ablate(AblateArgs),
    /// Finite-difference check of the full model's gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub test_fraction: f64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum UnifierChoice {
    Template,
    Remote,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub kind: DatasetKind,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = UnifierChoice::Template)]
    pub unifier: UnifierChoice,
    /// Chat-completions URL for the remote unifier. The key is read from
    /// UNIFIER_API_KEY only.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub remote_model: Option<String>,
    #[arg(long, default_value = "full")]
    pub target_variant: TargetVariant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory of instruction `.jsonl` files.
    #[arg(long)]
    pub data: PathBuf,
    /// Output run directory (defaults to the resumed run when resuming).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: Option<u8>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mie: Option<Switch>,
    #[arg(long)]
    pub pt_layers: Option<usize>,
    #[arg(long, value_enum)]
    pub mwit: Option<Switch>,
    #[arg(long)]
    pub target_variant: Option<TargetVariant>,
    /// Stage-1 run directory to start stage 2 from.
    #[arg(long, conflicts_with = "from_scratch")]
    pub init: Option<PathBuf>,
    /// Allow stage 2 from random weights.
    #[arg(long)]
    pub from_scratch: bool,
    /// Continue an interrupted run.
    #[arg(long, conflicts_with_all = ["init", "from_scratch", "config"])]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "MI2T,MV2T,Any2T")]
    pub tasks: Vec<TaskTag>,
    /// `text-only` also scores with every media block removed.
    #[arg(long, default_value = "full")]
    pub sanity: Sanity,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub max_new: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub grid_config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Subset of cell names, e.g. `vanilla,beta`.
    #[arg(long, value_delimiter = ',')]
    pub cells: Option<Vec<String>>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    let argv: Vec<String> = std::env::args().collect();
    match cli.command {
        Command::SynthData(a) => synth_data(&a, argv),
        Command::BuildInstructions(a) => build_instructions(&a, argv),
        Command::Train(a) => train(&a, argv),
        Command::Eval(a) => eval(&a, argv),
        Command::Ablate(a) => ablate(&a, argv),
        Command::Gradcheck(a) => run_gradcheck(&a),
    }
}

fn hashed(paths: &[PathBuf]) -> Result<Vec<Hashed>> {
    paths.iter().map(|p| Hashed::of(p)).collect()
}

#[allow(clippy::too_many_arguments)]
fn finish(
    dir: &Path,
    command: &str,
    argv: Vec<String>,
    seed: u64,
    config: serde_json::Value,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    started: u64,
) -> Result<RunManifest> {
    let m = RunManifest {
        command: command.to_string(),
        argv,
        seed,
        config,
        inputs: hashed(inputs)?,
        outputs: hashed(outputs)?,
        content_hash: tree_hash(dir, outputs)?,
        started_unix: started,
        finished_unix: manifest::now(),
    };
    m.write(dir)?;
    Ok(m)
}

pub fn synth_data(a: &SynthArgs, argv: Vec<String>) -> Result<()> {
    let started = manifest::now();
    claim_dir(&a.out, a.force)?;
    let records = synth_corpus(&a.out, a.seed, a.count, a.test_fraction)?;
    info!("wrote {} records to {}", records.len(), a.out.display());
    finish(
        &a.out,
        "synth-data",
        argv,
        a.seed,
        json!({ "count": a.count, "test_fraction": a.test_fraction }),
        &[],
        std::slice::from_ref(&a.out),
        started,
    )?;
    Ok(())
}

fn records_of(corpus: &Path) -> Result<Vec<Music4wayRecord>> {
    let path = corpus.join(RECORDS_FILE);
    if !path.exists() {
        return Err(CliError::Missing(path));
    }
    Ok(load_records(&path)?)
}

pub fn build_instructions(a: &BuildArgs, argv: Vec<String>) -> Result<()> {
    let started = manifest::now();
    let name = a.kind.name();
    let data_file = a.out.join(format!("{name}.jsonl"));
    let manifest_file = a.out.join(format!("manifest-{name}.json"));
    claim_file(&data_file, a.force)?;
    claim_file(&manifest_file, a.force)?;
    let records = records_of(&a.corpus)?;

    let remote_cfg = match a.unifier {
        UnifierChoice::Template => {
            if a.endpoint.is_some() || a.remote_model.is_some() {
                return Err(CliError::Config("--endpoint/--remote-model need --unifier remote".into()));
            }
            None
        }
        UnifierChoice::Remote => {
            let endpoint =
                a.endpoint.as_deref().ok_or_else(|| CliError::Config("--unifier remote needs --endpoint".into()))?;
            let mut c = RemoteConfig::new(endpoint);
            if let Some(m) = &a.remote_model {
                c.model = m.clone();
            }
            c.audit_log = Some(a.out.join(format!("audit-{name}.jsonl")));
            Some(c)
        }
    };
    let unifier: Box<dyn Unifier> = match &remote_cfg {
        None => Box::new(TemplateUnifier),
        Some(c) => Box::new(RemoteUnifier::from_env(c.clone())?),
    };
    let unified = unify_records(&records, unifier.as_ref())?;
    let built = build_dataset(&unified, a.kind, unifier.as_ref(), a.target_variant, a.seed)?;
    write_jsonl(&data_file, &built.pairs)?;
    info!("{name}: {} pairs, {} skipped", built.pairs.len(), built.skipped.len());

    let mut outputs = vec![data_file];
    if let Some(p) = remote_cfg.as_ref().and_then(|c| c.audit_log.clone()) {
        if p.exists() {
            outputs.push(p);
        }
    }
    let m = RunManifest {
        command: "build-instructions".into(),
        argv,
        seed: a.seed,
        config: json!({
            "kind": name,
            "unifier": match a.unifier { UnifierChoice::Template => "template", UnifierChoice::Remote => "remote" },
            // the key never enters the manifest
            "remote": remote_cfg,
            "target_variant": a.target_variant.name(),
            "pairs": built.pairs.len(),
            "skipped": built.skipped,
        }),
        inputs: hashed(&[a.corpus.join(RECORDS_FILE)])?,
        outputs: hashed(&outputs)?,
        content_hash: tree_hash(&a.out, &outputs)?,
        started_unix: started,
        finished_unix: manifest::now(),
    };
    fs::write(&manifest_file, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

/// Every instruction file in a data directory, in name order.
pub fn data_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::Missing(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    files.retain(|p| {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        name.ends_with(".jsonl") && !name.starts_with("audit-")
    });
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!("{}: no instruction .jsonl files", dir.display())));
    }
    Ok(files)
}

/// Pairs of a data directory, with MI2T/MV2T targets re-composed for
/// `variant` from the corpus records.
pub fn load_datasets(files: &[PathBuf], records: &[Music4wayRecord], variant: TargetVariant) -> Result<Datasets> {
    let mut pairs: Vec<InstructionPair> = Vec::new();
    for f in files {
        pairs.extend(load_pairs(f)?);
    }
    if variant != TargetVariant::Full {
        let by_id: std::collections::HashMap<&str, &Music4wayRecord> =
            records.iter().map(|r| (r.id.as_str(), r)).collect();
        for p in pairs.iter_mut().filter(|p| matches!(p.task, TaskTag::Mi2t | TaskTag::Mv2t)) {
            let rid = p.record_id.clone().unwrap_or_default();
            let r = by_id
                .get(rid.as_str())
                .ok_or_else(|| CliError::Config(format!("pair {} names unknown record `{rid}`", p.id)))?;
            *p = make_target_variant(p, r, variant)?;
        }
    }
    Ok(Datasets::from_pairs(pairs))
}

struct Loaded {
    datasets: Datasets,
    table: EmbeddingTable,
    inputs: Vec<PathBuf>,
}

fn load_corpus(corpus: &Path, data: &Path, cfg: &RunConfig) -> Result<Loaded> {
    let records = records_of(corpus)?;
    let files = data_files(data)?;
    let datasets = load_datasets(&files, &records, cfg.ablation.target_variant)?;
    let table = load_or_build(corpus, &records, &cfg.encoder)?;
    let mut inputs = vec![corpus.join(RECORDS_FILE)];
    inputs.extend(files);
    Ok(Loaded { datasets, table, inputs })
}

/// Flags over the config file over defaults.
pub fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(m) = a.mie {
        c.ablation.mie = m.on();
    }
    if let Some(m) = a.mwit {
        c.ablation.mwit = m.on();
    }
    if let Some(p) = a.pt_layers {
        c.ablation.pt_layers = p;
    }
    if let Some(v) = a.target_variant {
        c.ablation.target_variant = v;
    }
    let stage = match a.stage {
        Some(1) => &mut c.stage1,
        Some(2) => &mut c.stage2,
        _ => return Err(CliError::Config("--stage 1|2 is required".into())),
    };
    if let Some(lr) = a.lr {
        stage.lr = lr;
    }
    if let Some(e) = a.epochs {
        stage.epochs = e;
    }
    if let Some(b) = a.batch_size {
        stage.batch_size = b;
    }
    if a.max_steps.is_some() {
        stage.max_steps = a.max_steps;
    }
    c.validate()?;
    Ok(c)
}

fn read_run_config(run: &Path) -> Result<RunConfig> {
    let p = run.join(RUN_CONFIG_FILE);
    if !p.exists() {
        return Err(CliError::Missing(p));
    }
    Ok(RunConfig::load(&p)?)
}

fn read_vocab(run: &Path) -> Result<Tokenizer> {
    let p = run.join(VOCAB_FILE);
    if !p.exists() {
        return Err(CliError::Missing(p));
    }
    Ok(Tokenizer::load(&p)?)
}

pub fn train(a: &TrainArgs, argv: Vec<String>) -> Result<()> {
    let started = manifest::now();
    if let Some(run) = &a.resume {
        return resume(a, run, argv, started);
    }
    let out = a.out.clone().ok_or_else(|| CliError::Config("--out is required".into()))?;
    let cfg = resolve_train_config(a)?;
    let stage = a.stage.unwrap_or(1);
    if stage == 2 && a.init.is_none() && !a.from_scratch {
        return Err(CliError::NoStage1);
    }
    if stage == 1 && (a.init.is_some() || a.from_scratch) {
        return Err(CliError::Config("--init/--from-scratch only apply to stage 2".into()));
    }
    claim_dir(&out, a.force)?;
    let loaded = load_corpus(&a.corpus, &a.data, &cfg)?;
    let mut inputs = loaded.inputs.clone();

    // the vocabulary of a continued run is the stage-1 one
    let tokenizer = match &a.init {
        Some(init) => read_vocab(init)?,
        None => build_tokenizer(loaded.datasets.all(), cfg.model.vocab_cap)?,
    };
    let corpus =
        Corpus { datasets: &loaded.datasets, table: &loaded.table, tokenizer: &tokenizer, d_enc: cfg.encoder.d_enc };
    let (mut model, mut store) = match &a.init {
        Some(init) => {
            let dir = init.join(CHECKPOINT_DIR).join(MODEL_DIR);
            if !dir.exists() {
                return Err(CliError::Missing(dir));
            }
            inputs.push(dir.clone());
            let (model, store) = load_model::<f32>(&dir)?;
            let want = cfg.model_config(tokenizer.len());
            if model.config.fusion.n_layers != want.fusion.n_layers || model.config.lm.d_model != want.lm.d_model {
                return Err(CliError::Config(format!(
                    "{} was trained with {} fusion layers and d_model {}; this run asks for {} and {}",
                    init.display(),
                    model.config.fusion.n_layers,
                    model.config.lm.d_model,
                    want.fusion.n_layers,
                    want.lm.d_model
                )));
            }
            (model, store)
        }
        None => init_model(&corpus, &cfg.model, &cfg.ablation, cfg.seed)?,
    };
    let (stage_cfg, data) = if stage == 1 {
        let pairs = loaded.datasets.stage1(tetrad_data::Split::Train);
        (cfg.stage1.clone(), corpus.examples(&pairs, &cfg.ablation, &cfg.model)?)
    } else {
        begin_stage2(&mut model, &mut store, cfg.seed ^ 0x10a)?;
        let pairs = loaded.datasets.stage2(tetrad_data::Split::Train, cfg.ablation.mwit);
        (cfg.stage2.clone(), corpus.examples(&pairs, &cfg.ablation, &cfg.model)?)
    };
    info!("stage {stage}: {} training examples, {}", data.len(), cfg.ablation.label());
    let mut trainer = Trainer::new(&model, &mut store, stage_cfg, cfg.ablation.mode(), cfg.seed)?;
    let result = trainer.run(&mut store, &data, None);
    // a failed run still leaves its checkpoint behind for inspection
    save_run(&out, &trainer, &store, &tokenizer, &cfg)?;
    result?;
    finish_train(&out, argv, &cfg, stage, &inputs, started)
}

fn save_run(out: &Path, t: &Trainer<'_, f32>, store: &ParamStore<f32>, tok: &Tokenizer, cfg: &RunConfig) -> Result<()> {
    t.save(&out.join(CHECKPOINT_DIR), store)?;
    tok.save(&out.join(VOCAB_FILE))?;
    fs::write(out.join(RUN_CONFIG_FILE), cfg.to_toml())?;
    Ok(())
}

fn finish_train(
    out: &Path,
    argv: Vec<String>,
    cfg: &RunConfig,
    stage: u8,
    inputs: &[PathBuf],
    started: u64,
) -> Result<()> {
    let outputs = [out.join(CHECKPOINT_DIR), out.join(VOCAB_FILE), out.join(RUN_CONFIG_FILE)];
    let mut config = serde_json::to_value(cfg)?;
    config["stage"] = json!(stage);
    finish(out, "train", argv, cfg.seed, config, inputs, &outputs, started)?;
    Ok(())
}

fn resume(a: &TrainArgs, run: &Path, argv: Vec<String>, started: u64) -> Result<()> {
    let overrides = a.stage.is_some()
        || a.seed.is_some()
        || a.mie.is_some()
        || a.mwit.is_some()
        || a.pt_layers.is_some()
        || a.target_variant.is_some()
        || a.lr.is_some()
        || a.epochs.is_some()
        || a.batch_size.is_some()
        || a.max_steps.is_some();
    if overrides {
        return Err(CliError::Config(
            "--resume continues the saved configuration; drop the stage and schedule flags".into(),
        ));
    }
    let out = a.out.clone().unwrap_or_else(|| run.to_path_buf());
    if out != run {
        claim_dir(&out, a.force)?;
    }
    let cfg = read_run_config(run)?;
    let tokenizer = read_vocab(run)?;
    let ckpt = run.join(CHECKPOINT_DIR);
    let (model, mut store): (Model, ParamStore<f32>) = load_model(&ckpt.join(MODEL_DIR))?;
    let mut trainer = Trainer::resume(&ckpt, &model, &mut store)?;
    let stage = trainer.stage.stage;
    let loaded = load_corpus(&a.corpus, &a.data, &cfg)?;
    let corpus =
        Corpus { datasets: &loaded.datasets, table: &loaded.table, tokenizer: &tokenizer, d_enc: cfg.encoder.d_enc };
    let pairs = if stage == 1 {
        loaded.datasets.stage1(tetrad_data::Split::Train)
    } else {
        loaded.datasets.stage2(tetrad_data::Split::Train, cfg.ablation.mwit)
    };
    let data = corpus.examples(&pairs, &cfg.ablation, &cfg.model)?;
    info!("resuming stage {stage} at step {}", trainer.position.step);
    let result = trainer.run(&mut store, &data, None);
    save_run(&out, &trainer, &store, &tokenizer, &cfg)?;
    result?;
    let mut inputs = loaded.inputs;
    inputs.push(ckpt);
    finish_train(&out, argv, &cfg, stage, &inputs, started)
}

pub fn eval(a: &EvalArgs, argv: Vec<String>) -> Result<()> {
    let started = manifest::now();
    claim_dir(&a.out, a.force)?;
    let mut cfg = read_run_config(&a.checkpoint)?;
    if let Some(n) = a.max_new {
        cfg.eval.max_new = n;
    }
    if a.limit.is_some() {
        cfg.eval.limit = a.limit;
    }
    let tokenizer = read_vocab(&a.checkpoint)?;
    let model_dir = a.checkpoint.join(CHECKPOINT_DIR).join(MODEL_DIR);
    if !model_dir.exists() {
        return Err(CliError::Missing(model_dir));
    }
    let (model, store): (Model, ParamStore<f32>) = load_model(&model_dir)?;
    let loaded = load_corpus(&a.corpus, &a.data, &cfg)?;
    let corpus =
        Corpus { datasets: &loaded.datasets, table: &loaded.table, tokenizer: &tokenizer, d_enc: cfg.encoder.d_enc };
    let modes: &[Sanity] = match a.sanity {
        Sanity::Full => &[Sanity::Full],
        Sanity::TextOnly => &[Sanity::Full, Sanity::TextOnly],
    };
    let mut reports = Vec::new();
    for &s in modes {
        reports.extend(run_benchmarks(
            &corpus,
            &model,
            &store,
            &cfg.model,
            &cfg.ablation,
            &a.tasks,
            cfg.eval.limit,
            cfg.eval.max_new,
            s,
        )?);
    }
    for r in &reports {
        let g = &r.aggregate;
        println!(
            "{:<16} n={:<4} failed={:<3} BLEU-1 {:.4}  BLEU {:.4}  ROUGE-L P {:.4} R {:.4} F1 {:.4}",
            r.label, g.n, g.failed, g.bleu1, g.bleu, g.rouge_l_p, g.rouge_l_r, g.rouge_l_f1
        );
    }
    write_reports(&a.out, &reports)?;
    let outputs: Vec<PathBuf> = fs::read_dir(&a.out)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.file_name().and_then(|n| n.to_str()) != Some(MANIFEST_FILE))
        .collect();
    let mut inputs = loaded.inputs;
    inputs.push(model_dir);
    let config = json!({
        "run": cfg,
        "tasks": a.tasks.iter().map(|t| t.name()).collect::<Vec<_>>(),
        "sanity": a.sanity,
    });
    finish(&a.out, "eval", argv, cfg.seed, config, &inputs, &outputs, started)?;
    Ok(())
}

pub fn resolve_grid_config(a: &AblateArgs) -> Result<GridConfig> {
    let mut c = match &a.grid_config {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => GridConfig::default(),
    };
    if let Some(s) = &a.seeds {
        c.seeds = s.clone();
    }
    if c.seeds.is_empty() {
        return Err(CliError::Config("the grid needs at least one seed".into()));
    }
    c.stage1.validate()?;
    c.stage2.validate()?;
    Ok(c)
}

pub fn ablate(a: &AblateArgs, argv: Vec<String>) -> Result<()> {
    let started = manifest::now();
    claim_dir(&a.out, a.force)?;
    let cfg = resolve_grid_config(a)?;
    let mut cells = default_grid();
    if let Some(names) = &a.cells {
        if let Some(bad) = names.iter().find(|n| !cells.iter().any(|c| &c.name == *n)) {
            let known: Vec<&str> = cells.iter().map(|c| c.name.as_str()).collect();
            return Err(CliError::Config(format!("unknown cell `{bad}` (known: {})", known.join(", "))));
        }
        cells.retain(|c| names.contains(&c.name));
    }
    let run_cfg = RunConfig { model: cfg.model.clone(), ..RunConfig::default() };
    let loaded = load_corpus(&a.corpus, &a.data, &run_cfg)?;
    let tokenizer = build_tokenizer(loaded.datasets.all(), cfg.model.vocab_cap)?;
    let corpus = Corpus {
        datasets: &loaded.datasets,
        table: &loaded.table,
        tokenizer: &tokenizer,
        d_enc: run_cfg.encoder.d_enc,
    };
    let runs_path = a.out.join("runs.jsonl");
    let mut runs_file = OpenOptions::new().create(true).write(true).truncate(true).open(&runs_path)?;
    let result = run_ablation_grid(&corpus, &cfg, &cells, |r| {
        let line = serde_json::to_string(r).expect("run serializes");
        if let Err(e) = writeln!(runs_file, "{line}") {
            warn!("{}: {e}", runs_path.display());
        }
        match &r.error {
            None => println!("{:<14} seed {} done in {:.0}s", r.cell, r.seed, r.seconds),
            Some(e) => println!("{:<14} seed {} FAILED: {e}", r.cell, r.seed),
        }
    });
    let outputs = [a.out.join("grid.csv"), a.out.join("grid.md"), a.out.join("grid.json"), runs_path.clone()];
    result.write_csv(&outputs[0])?;
    result.write_markdown(&outputs[1])?;
    result.write_json(&outputs[2])?;
    print!("{}", result.to_markdown());
    let config = json!({ "grid": cfg, "cells": cells });
    let seed = cfg.seeds[0];
    finish(&a.out, "ablate", argv, seed, config, &loaded.inputs, &outputs, started)?;
    Ok(())
}

pub fn run_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let checks = gradcheck::pipeline_gradcheck(a.seed)?;
    let mut worst: f64 = 0.0;
    for s in &checks {
        println!("stage {}", s.stage);
        for p in &s.params {
            println!("  {:<40} {:>6} coords  max rel err {:.3e}", p.name, p.coordinates, p.max_rel_error);
        }
        println!("  stage {} max rel err {:.3e}", s.stage, s.max_rel_error);
        worst = worst.max(s.max_rel_error);
    }
    println!("max rel err {worst:.3e} (tolerance {GRADCHECK_TOL:e})");
    if worst.is_nan() || worst > GRADCHECK_TOL {
        return Err(CliError::GradCheck(worst, GRADCHECK_TOL));
    }
    Ok(())
}
