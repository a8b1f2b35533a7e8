//! Operator-facing CLI: run searches, size the space, evaluate genomes, and
//! export artifacts from checkpoints.
//!
//! Conventions: progress goes to standard error, data to files or standard
//! output; every command is deterministic under `--seed`; exit codes are
//! 0 = success, 1 = usage/config error, 2 = runtime failure.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mo_trans::data::{gen_synthetic, load_tsv, Corpus, SyntheticTask};
use mo_trans::evaluator::{Evaluator, NeuralEvaluator, SurrogateEvaluator};
use mo_trans::genome::{
    self, decode_flat, from_json, render_dot, search_space_size, ModelGlobals, SearchConfig,
};
use mo_trans::moead::{checkpoint_load, checkpoint_save, export_pareto_csv, Search};

#[derive(Parser)]
#[command(
    name = "mo-trans",
    version,
    about = "Multi-objective architecture search for transformer translation models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the search; writes the Pareto CSV, a checkpoint, and a manifest.
    Search(SearchArgs),
    /// Print the exact architecture-space size for fixed block counts.
    SpaceSize(SpaceSizeArgs),
    /// Evaluate one genome file and print its metrics as JSON.
    Eval(EvalArgs),
    /// Export artifacts (Pareto CSV, DOT schematics) from a checkpoint.
    Export(ExportArgs),
}

#[derive(Args)]
struct SearchArgs {
    /// JSON config mirroring the full search configuration; flags override
    /// file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = EvaluatorKind::Surrogate)]
    evaluator: EvaluatorKind,
    /// Synthetic task for the neural evaluator (default: copy).
    #[arg(long, value_enum, conflicts_with = "tsv")]
    task: Option<TaskKind>,
    /// Tab-separated source/target corpus for the neural evaluator.
    #[arg(long)]
    tsv: Option<PathBuf>,
    /// Perplexity weight: f2 = k × perplexity.
    #[arg(long)]
    k: Option<f64>,
    /// Population size (one subproblem per weight vector).
    #[arg(long)]
    pop: Option<usize>,
    /// Number of generations to run.
    #[arg(long)]
    gens: Option<usize>,
    /// Neighborhood size.
    #[arg(long)]
    neighbors: Option<usize>,
    /// Output directory for pareto.csv, checkpoint.json, manifest.json.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Continue from this checkpoint. Search parameters come from the
    /// checkpoint; of the overrides only --gens applies (to extend the run).
    /// Pass the same evaluator flags as the original run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Worker threads for evaluating the initial population (the search
    /// itself is single-threaded).
    #[arg(long, default_value_t = 1)]
    init_workers: usize,
}

#[derive(Args)]
struct SpaceSizeArgs {
    /// Number of encoder blocks.
    ne: usize,
    /// Number of decoder blocks.
    nd: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the head-count domain (comma-separated).
    #[arg(long, value_delimiter = ',')]
    heads: Option<Vec<u32>>,
    /// Override the feed-forward dimension domain (comma-separated).
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<u32>>,
}

#[derive(Args)]
struct EvalArgs {
    /// Genome file: JSON object, or whitespace-separated flat encoding.
    genome: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = EvaluatorKind::Surrogate)]
    evaluator: EvaluatorKind,
    #[arg(long, value_enum, conflicts_with = "tsv")]
    task: Option<TaskKind>,
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    checkpoint: PathBuf,
    /// Write the Pareto front CSV here.
    #[arg(long)]
    pareto: Option<PathBuf>,
    /// Archive index of the genome to export.
    #[arg(long)]
    genome: Option<usize>,
    /// Write the DOT schematic of --genome here.
    #[arg(long, requires = "genome")]
    dot: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvaluatorKind {
    Surrogate,
    Neural,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskKind {
    Copy,
    Reverse,
    Sort,
}

impl From<TaskKind> for SyntheticTask {
    fn from(t: TaskKind) -> SyntheticTask {
        match t {
            TaskKind::Copy => SyntheticTask::Copy,
            TaskKind::Reverse => SyntheticTask::Reverse,
            TaskKind::Sort => SyntheticTask::Sort,
        }
    }
}

/// Errors split by exit code: usage/config problems exit 1, runtime
/// failures exit 2.
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage<E: fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime<E: fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Search(args) => cmd_search(args),
        Command::SpaceSize(args) => cmd_space_size(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Export(args) => cmd_export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<SearchConfig, CliError> {
    let Some(path) = path else { return Ok(SearchConfig::default()) };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let config: SearchConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
    Ok(config)
}

fn build_corpus(task: Option<TaskKind>, tsv: Option<&Path>, seed: u64) -> Result<Corpus, CliError> {
    match tsv {
        Some(path) => load_tsv(path, 1)
            .map_err(|e| CliError::Usage(format!("cannot load tsv {}: {e}", path.display()))),
        None => {
            let task = task.unwrap_or(TaskKind::Copy);
            gen_synthetic(task.into(), 2000, 16, [3, 10], seed).map_err(runtime)
        }
    }
}

fn build_evaluator(
    kind: EvaluatorKind,
    task: Option<TaskKind>,
    tsv: Option<&Path>,
    config: &SearchConfig,
) -> Result<(Box<dyn Evaluator>, String), CliError> {
    match kind {
        EvaluatorKind::Surrogate => {
            let globals =
                ModelGlobals { embed_dim: config.embed_dim, src_vocab: 16, tgt_vocab: 16 };
            Ok((Box::new(SurrogateEvaluator { globals }), "surrogate".into()))
        }
        EvaluatorKind::Neural => {
            let corpus = build_corpus(task, tsv, config.seed)?;
            let label = match (task, tsv) {
                (_, Some(p)) => format!("neural:tsv:{}", p.display()),
                (Some(TaskKind::Reverse), None) => "neural:reverse".into(),
                (Some(TaskKind::Sort), None) => "neural:sort".into(),
                _ => "neural:copy".into(),
            };
            let evaluator = NeuralEvaluator {
                corpus,
                embed_dim: config.embed_dim,
                train: config.training.clone(),
                seed: config.seed,
            };
            Ok((Box::new(evaluator), label))
        }
    }
}

#[derive(Serialize)]
struct RunManifest {
    config: SearchConfig,
    seed: u64,
    evaluator: String,
    started_unix: u64,
    finished_unix: u64,
    evaluations: usize,
    generations_completed: usize,
    outputs: ManifestOutputs,
}

#[derive(Serialize)]
struct ManifestOutputs {
    pareto_csv: String,
    checkpoint: String,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)
        .and_then(|()| fs::rename(&tmp, path))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn cmd_search(args: SearchArgs) -> Result<(), CliError> {
    let started = unix_now();

    let mut search = match &args.resume {
        Some(ckpt) => {
            let (mut config, state) = checkpoint_load(ckpt).map_err(usage)?;
            if let Some(gens) = args.gens {
                config.generations = gens;
            }
            Search::restore(config, state).map_err(usage)?
        }
        None => {
            let mut config = load_config(args.config.as_deref())?;
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(k) = args.k {
                config.objective_k = k;
            }
            if let Some(pop) = args.pop {
                config.population = pop;
            }
            if let Some(gens) = args.gens {
                config.generations = gens;
            }
            if let Some(t) = args.neighbors {
                config.neighborhood = t;
            }
            let seed = config.seed;
            Search::new(config, seed).map_err(usage)?
        }
    };

    let (evaluator, evaluator_label) =
        build_evaluator(args.evaluator, args.task, args.tsv.as_deref(), search.config())?;

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let csv_path = args.out.join("pareto.csv");
    let ckpt_path = args.out.join("checkpoint.json");
    let manifest_path = args.out.join("manifest.json");

    if !search.is_initialized() {
        eprintln!(
            "initializing population of {} ({} workers)",
            search.config().population,
            args.init_workers.max(1)
        );
        search.initialize(&*evaluator, args.init_workers.max(1)).map_err(runtime)?;
        checkpoint_save(&search.state(), search.config(), &ckpt_path).map_err(runtime)?;
    }

    let total = search.config().generations;
    while !search.done() {
        let before = search.generation();
        search.step_subproblem(&*evaluator).map_err(runtime)?;
        if search.generation() > before {
            let best_f1 =
                search.ep().entries.iter().map(|e| e.objectives.f1).fold(f64::INFINITY, f64::min);
            eprintln!(
                "gen {}/{}: best f1 {:.3}, EP size {}",
                search.generation(),
                total,
                best_f1,
                search.ep().len()
            );
            checkpoint_save(&search.state(), search.config(), &ckpt_path).map_err(runtime)?;
        }
    }

    export_pareto_csv(search.ep(), &csv_path).map_err(runtime)?;
    checkpoint_save(&search.state(), search.config(), &ckpt_path).map_err(runtime)?;

    let manifest = RunManifest {
        config: search.config().clone(),
        seed: search.config().seed,
        evaluator: evaluator_label,
        started_unix: started,
        finished_unix: unix_now(),
        evaluations: search.eval_log().len(),
        generations_completed: search.generation(),
        outputs: ManifestOutputs {
            pareto_csv: csv_path.display().to_string(),
            checkpoint: ckpt_path.display().to_string(),
        },
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
    write_atomic(&manifest_path, &manifest_json)?;

    eprintln!(
        "done: {} evaluations, EP size {}, artifacts in {}",
        search.eval_log().len(),
        search.ep().len(),
        args.out.display()
    );
    Ok(())
}

/// Rounds a decimal digit string to three significant figures, as
/// `d.dd e exponent`.
fn scientific(digits: &str) -> String {
    let exponent = digits.len() as i64 - 1;
    let mut first4: Vec<u32> = digits.chars().take(4).filter_map(|c| c.to_digit(10)).collect();
    while first4.len() < 4 {
        first4.push(0);
    }
    let packed = first4.iter().fold(0u32, |acc, d| acc * 10 + d);
    let mut mantissa = (packed + 5) / 10; // round half up to 3 digits
    let mut exponent = exponent;
    if mantissa == 1000 {
        mantissa = 100;
        exponent += 1;
    }
    format!("{}.{:02}e{}", mantissa / 100, mantissa % 100, exponent)
}

fn cmd_space_size(args: SpaceSizeArgs) -> Result<(), CliError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(heads) = args.heads {
        config.head_choices = heads;
    }
    if let Some(dims) = args.dims {
        config.ffn_dim_choices = dims;
    }
    if args.ne < 1 || args.nd < 1 {
        return Err(CliError::Usage("ne and nd must be at least 1".into()));
    }
    if config.head_choices.is_empty() || config.ffn_dim_choices.is_empty() {
        return Err(CliError::Usage("head and dim domains must be non-empty".into()));
    }
    let size = search_space_size(args.ne, args.nd, &config);
    let digits = size.to_string();
    println!("{digits} ≈ {}", scientific(&digits));
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }

    let text = fs::read_to_string(&args.genome)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.genome.display())))?;
    let trimmed = text.trim();
    let genome = if trimmed.starts_with('{') {
        from_json(trimmed).map_err(usage)?
    } else {
        let flat: Vec<u32> = trimmed
            .split_whitespace()
            .map(|tok| tok.parse::<u32>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Usage(format!("flat encoding: {e}")))?;
        decode_flat(&flat, &config).map_err(usage)?
    };

    let violations = genome::validate(&genome, &config);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{v}");
        }
        return Err(CliError::Usage(format!("genome violates {} invariant(s)", violations.len())));
    }

    let (evaluator, _) = build_evaluator(args.evaluator, args.task, args.tsv.as_deref(), &config)?;
    let metrics = evaluator.evaluate(&genome).map_err(runtime)?;
    let json = serde_json::to_string_pretty(&metrics).map_err(runtime)?;
    println!("{json}");
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<(), CliError> {
    let (_, state) = checkpoint_load(&args.checkpoint).map_err(usage)?;

    if args.pareto.is_none() && args.genome.is_none() {
        return Err(CliError::Usage(
            "nothing to export: pass --pareto PATH and/or --genome IDX --dot PATH".into(),
        ));
    }

    if let Some(path) = &args.pareto {
        export_pareto_csv(&state.ep, path).map_err(runtime)?;
        eprintln!("wrote {} ({} rows)", path.display(), state.ep.len());
    }

    if let Some(index) = args.genome {
        let entry = state.ep.entries.get(index).ok_or_else(|| {
            CliError::Usage(format!(
                "--genome {index} out of range: archive holds {} entries",
                state.ep.len()
            ))
        })?;
        let dot = render_dot(&entry.genome);
        match &args.dot {
            Some(path) => {
                write_atomic(path, &dot)?;
                eprintln!("wrote {}", path.display());
            }
            None => print!("{dot}"),
        }
    }
    Ok(())
}
