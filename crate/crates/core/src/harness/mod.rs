//! The `abcprune` command line: `search`, `cost` and `replay`.
//!
//! Exit codes: 0 success, 1 invalid input or inconsistent history, 2 fatal
//! evaluator failure, 3 I/O failure.

pub mod config;
pub mod report;

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{cost_report, load_architecture, structure_from_layer_widths, ArchitectureSpec};
use crate::fitness::toy::mlp_widths;
use crate::fitness::{
    train_full_model, Dataset, Evaluator, ExternalEvaluator, SyntheticEvaluator, ToyEvaluator,
};
use crate::search::history::{read_jsonl, write_jsonl};
use crate::search::replay::validate_history;
use crate::search::{run_search_in, SearchConfig};
use crate::seed::{derive_seed, labels};
use crate::space::{PrunedStructure, SearchSpace};
pub use config::{EvaluatorKind, Overrides, RunConfig, ToyConfig};
pub use report::{FitnessSummary, LayerRow, Report};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("evaluator: {0}")]
    Evaluator(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Evaluator(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "abcprune", version, about = "Channel-count search for network pruning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search for the fittest pruned structure and write best.json,
    /// history.jsonl and report.json
    Search {
        /// Run configuration (JSON)
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print channel, FLOP and parameter counts of a descriptor
    Cost {
        #[arg(long)]
        arch: PathBuf,
        /// Pruned structure: a JSON array, best.json, or {"layers": {name: width}}
        #[arg(long)]
        structure: Option<PathBuf>,
    },
    /// Check a history.jsonl for consistency
    Replay { history: PathBuf },
}

/// Runs one command, printing errors to stderr. Returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let stdout = io::stdout();
    let result = match cli.command {
        Command::Search { config, overrides } => {
            RunConfig::resolve(config.as_deref(), &overrides).and_then(|c| cmd_search(&c, &mut stdout.lock()))
        }
        Command::Cost { arch, structure } => cmd_cost(&arch, structure.as_deref(), &mut stdout.lock()),
        Command::Replay { history } => cmd_replay(&history, &mut stdout.lock()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("abcprune: {e}");
            e.exit_code()
        }
    }
}

/// Contents of best.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResult {
    pub structure: PrunedStructure,
    pub fitness: f64,
    pub evaluations: u64,
    pub config: SearchConfig,
}

fn load_spec(path: &Path) -> Result<ArchitectureSpec, CliError> {
    load_architecture(path).map_err(|e| match e {
        crate::arch::ArchError::Io { .. } => CliError::Io(e.to_string()),
        other => CliError::Validation(other.to_string()),
    })
}

struct ToyBackend {
    evaluator: ToyEvaluator,
    full_accuracy: f64,
    config: ToyConfig,
}

fn build_toy(spec: &ArchitectureSpec, toy: &ToyConfig, seed: u64) -> Result<ToyBackend, CliError> {
    let widths = mlp_widths(spec).map_err(CliError::Validation)?;
    let data_seed = toy.dataset.seed.unwrap_or_else(|| derive_seed(seed, labels::DATASET, &[]));
    let data = Dataset::blobs(&toy.dataset, data_seed).map_err(CliError::Validation)?;
    if data.dims() != spec.input_channels || data.classes != spec.num_classes {
        return Err(CliError::Validation(format!(
            "descriptor expects {} features and {} classes, dataset has {} and {}",
            spec.input_channels,
            spec.num_classes,
            data.dims(),
            data.classes
        )));
    }
    let recipe = toy.recipe();
    let full = train_full_model(&widths, &data, toy.pretrain_epochs, seed, &recipe)
        .map_err(|e| CliError::Evaluator(format!("pre-training: {e}")))?;
    let full_accuracy = full.test_accuracy(&data);
    log::info!("pre-trained full model {widths:?}: test accuracy {full_accuracy:.4}");
    Ok(ToyBackend {
        evaluator: ToyEvaluator::new(Arc::new(data), Arc::new(full), recipe),
        full_accuracy,
        config: toy.clone(),
    })
}

pub fn cmd_search(config: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    config.validate()?;
    let spec = load_spec(&config.arch)?;
    let search = config.search_config();
    let space = SearchSpace::build(&spec, search.alpha).map_err(|e| CliError::Validation(e.to_string()))?;

    let mut toy = None;
    let evaluator: Box<dyn Evaluator + '_> = match config.evaluator_kind()? {
        EvaluatorKind::Synthetic => {
            let params = config.synthetic.as_ref().expect("checked by evaluator_kind");
            Box::new(SyntheticEvaluator::new(&space, params).map_err(|e| CliError::Validation(e.to_string()))?)
        }
        EvaluatorKind::Toy => {
            toy = Some(build_toy(&spec, &config.toy.clone().unwrap_or_default(), search.seed)?);
            Box::new(&toy.as_ref().expect("just built").evaluator)
        }
        EvaluatorKind::External => {
            let ext = config.external.clone().expect("checked by evaluator_kind");
            Box::new(ExternalEvaluator::launch(ext).map_err(|e| CliError::Evaluator(e.to_string()))?)
        }
    };

    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    let history_path = config.out_dir.join("history.jsonl");
    let outcome = run_search_in(&space, &search, evaluator.as_ref(), config.parallel_eval);
    let outcome = match outcome {
        Ok(o) => o,
        Err(failure) => {
            write_history(&history_path, &failure.history)?;
            return Err(CliError::Evaluator(failure.error.to_string()));
        }
    };
    drop(evaluator);
    write_history(&history_path, outcome.history())?;

    let best = BestResult {
        structure: outcome.best_structure.clone(),
        fitness: outcome.best_fitness,
        evaluations: outcome.evaluations,
        config: search.clone(),
    };
    let mut report = Report::build(&spec, &best.structure).map_err(|e| CliError::Validation(e.to_string()))?;
    report.fitness = FitnessSummary {
        best_fitness: Some(best.fitness),
        evaluations: Some(best.evaluations),
        ..FitnessSummary::default()
    };
    if let Some(toy) = &toy {
        let epochs = toy.config.finetune_epochs;
        let tuned = toy
            .evaluator
            .fine_tune(&best.structure, epochs, derive_seed(search.seed, labels::FINE_TUNE, &[]))
            .map_err(|e| CliError::Evaluator(format!("fine-tuning: {e}")))?;
        report.fitness.full_model_accuracy = Some(toy.full_accuracy);
        report.fitness.fine_tuned_accuracy = Some(tuned.accuracy);
        report.fitness.fine_tune_epochs = Some(epochs);
        report.fitness.warm_start = Some(tuned.warm_start);
    }

    write_json(&config.out_dir.join("best.json"), &best)?;
    write_json(&config.out_dir.join("report.json"), &report)?;
    let mut print = || -> io::Result<()> {
        writeln!(out, "best structure {} fitness {:.6} after {} evaluations", best.structure, best.fitness, best.evaluations)?;
        if let Some(acc) = report.fitness.fine_tuned_accuracy {
            writeln!(out, "fine-tuned accuracy {acc:.4}")?;
        }
        write!(out, "{}", report.to_table())?;
        writeln!(out, "outputs written to {}", config.out_dir.display())
    };
    print().map_err(|e| CliError::Io(e.to_string()))
}

fn write_history(path: &Path, events: &[crate::search::Event]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_jsonl(events, io::BufWriter::new(file)).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StructureFile {
    Plain(PrunedStructure),
    Best { structure: PrunedStructure },
    Layers { layers: std::collections::BTreeMap<String, usize> },
}

/// Reads a structure as a JSON array, a best.json, or a map from layer
/// name to width (tied layers must agree; unnamed layers keep their base).
pub fn read_structure(spec: &ArchitectureSpec, path: &Path) -> Result<PrunedStructure, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parsed: StructureFile = serde_json::from_str(&text)
        .map_err(|_| CliError::Validation(format!("{}: not a structure file", path.display())))?;
    match parsed {
        StructureFile::Plain(s) | StructureFile::Best { structure: s } => Ok(s),
        StructureFile::Layers { layers } => {
            structure_from_layer_widths(spec, layers.iter().map(|(k, &v)| (k.as_str(), v)))
                .map_err(|e| CliError::Validation(e.to_string()))
        }
    }
}

pub fn cmd_cost(arch: &Path, structure: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = load_spec(arch)?;
    let text = match structure {
        None => {
            let report = cost_report(&spec, None).map_err(|e| CliError::Validation(e.to_string()))?;
            let json = serde_json::to_string_pretty(&report).expect("serializable");
            format!("{}{json}\n", report::baseline_table(&spec, &report))
        }
        Some(path) => {
            let s = read_structure(&spec, path)?;
            let report = Report::build(&spec, &s).map_err(|e| CliError::Validation(e.to_string()))?;
            let json = serde_json::to_string_pretty(&report).expect("serializable");
            format!("{}{json}\n", report.to_table())
        }
    };
    out.write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
}

pub fn cmd_replay(history: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let file = fs::File::open(history).map_err(io_err(history))?;
    let events = read_jsonl(BufReader::new(file))
        .map_err(|(line, msg)| CliError::Validation(format!("{}:{line}: {msg}", history.display())))?;
    let summary = validate_history(&events)
        .map_err(|v| CliError::Validation(format!("{}:{}: {}", history.display(), v.line, v.message)))?;
    let best = summary
        .best_structure
        .as_ref()
        .map_or_else(|| "none".to_string(), |s| s.to_string());
    writeln!(
        out,
        "consistent: {} events, {} cycles, {} evaluations, best fitness {} at {best}{}",
        events.len(),
        summary.cycles,
        summary.evaluations,
        summary.best_fitness,
        if summary.complete { "" } else { " (stopped during initialisation)" }
    )
    .map_err(|e| CliError::Io(e.to_string()))
}
