//! Run configuration: one JSON document, optionally overridden by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::fitness::{BlobsConfig, ExternalConfig, SyntheticParams, TrainRecipe};
use crate::search::SearchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EvaluatorKind {
    Synthetic,
    Toy,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub dataset: BlobsConfig,
    pub pretrain_epochs: u32,
    pub finetune_epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        let recipe = TrainRecipe::default();
        ToyConfig {
            dataset: BlobsConfig::default(),
            pretrain_epochs: 20,
            finetune_epochs: 20,
            learning_rate: recipe.learning_rate,
            batch_size: recipe.batch_size,
        }
    }
}

impl ToyConfig {
    pub fn recipe(&self) -> TrainRecipe {
        TrainRecipe {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Architecture descriptor. Relative paths in a config file resolve
    /// against the file's directory.
    pub arch: PathBuf,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_max_trials")]
    pub max_trials: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub fitness_epochs: u32,
    /// Names the backend when more than one section could apply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluator: Option<EvaluatorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalConfig>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_parallel")]
    pub parallel_eval: usize,
}

fn default_alpha() -> f64 {
    SearchConfig::default().alpha
}
fn default_cycles() -> usize {
    SearchConfig::default().cycles
}
fn default_population() -> usize {
    SearchConfig::default().population
}
fn default_max_trials() -> u32 {
    SearchConfig::default().max_trials
}
fn default_epochs() -> u32 {
    SearchConfig::default().fitness_epochs
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("abcprune-out")
}
fn default_parallel() -> usize {
    1
}

/// Command-line values that replace config fields when present.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Architecture descriptor (JSON)
    #[arg(long)]
    pub arch: Option<PathBuf>,
    /// Largest kept fraction per layer, a multiple of 0.1 in [0.1, 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub max_trials: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub fitness_epochs: Option<u32>,
    /// Selects the backend and drops the other backend sections
    #[arg(long, value_enum)]
    pub evaluator: Option<EvaluatorKind>,
    /// Shell command launching an external evaluator
    #[arg(long)]
    pub external_cmd: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Evaluate employed-phase candidates on N threads
    #[arg(long, value_name = "N")]
    pub parallel_eval: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.arch = base.join(&config.arch);
        config.out_dir = base.join(&config.out_dir);
        Ok(config)
    }

    /// Builds a config from an optional file plus flags. Without a file,
    /// `--arch` is required and every other field takes its default.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut config = match path {
            Some(p) => Self::load(p)?,
            None => {
                let arch = overrides
                    .arch
                    .clone()
                    .ok_or_else(|| CliError::Validation("either --config or --arch is required".into()))?;
                Self::from_json(&serde_json::json!({ "arch": arch }).to_string())?
            }
        };
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.arch {
            self.arch = v.clone();
        }
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = o.cycles {
            self.cycles = v;
        }
        if let Some(v) = o.population {
            self.population = v;
        }
        if let Some(v) = o.max_trials {
            self.max_trials = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.fitness_epochs {
            self.fitness_epochs = v;
        }
        if let Some(cmd) = &o.external_cmd {
            match &mut self.external {
                Some(ext) => ext.command = cmd.clone(),
                None => self.external = Some(ExternalConfig::new(cmd.clone())),
            }
        }
        if let Some(kind) = o.evaluator {
            self.evaluator = Some(kind);
            if kind != EvaluatorKind::Synthetic {
                self.synthetic = None;
            }
            if kind != EvaluatorKind::Toy {
                self.toy = None;
            }
            if kind != EvaluatorKind::External {
                self.external = None;
            }
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.parallel_eval {
            self.parallel_eval = v;
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            cycles: self.cycles,
            population: self.population,
            max_trials: self.max_trials,
            alpha: self.alpha,
            seed: self.seed,
            fitness_epochs: self.fitness_epochs,
        }
    }

    /// The single configured backend.
    pub fn evaluator_kind(&self) -> Result<EvaluatorKind, CliError> {
        let present: Vec<EvaluatorKind> = [
            (EvaluatorKind::Synthetic, self.synthetic.is_some()),
            (EvaluatorKind::Toy, self.toy.is_some()),
            (EvaluatorKind::External, self.external.is_some()),
        ]
        .into_iter()
        .filter_map(|(k, on)| on.then_some(k))
        .collect();
        if present.len() > 1 {
            return Err(CliError::Validation(format!(
                "exactly one evaluator may be configured, found {present:?}"
            )));
        }
        match (self.evaluator, present.first()) {
            (Some(named), Some(&found)) if named != found => Err(CliError::Validation(format!(
                "evaluator is {named:?} but the config has a {found:?} section"
            ))),
            (Some(EvaluatorKind::Synthetic), None) => {
                Err(CliError::Validation("synthetic evaluator needs a `synthetic` section with a target".into()))
            }
            (Some(EvaluatorKind::External), None) => {
                Err(CliError::Validation("external evaluator needs --external-cmd or an `external` section".into()))
            }
            (Some(named), _) => Ok(named),
            (None, Some(&found)) => Ok(found),
            (None, None) => Err(CliError::Validation("no evaluator configured".into())),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.search_config()
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        self.evaluator_kind()?;
        if self.parallel_eval == 0 {
            return Err(CliError::Validation("parallel_eval must be at least 1".into()));
        }
        if !self.arch.is_file() {
            return Err(CliError::Validation(format!(
                "architecture descriptor {} does not exist",
                self.arch.display()
            )));
        }
        if let Some(toy) = &self.toy {
            if toy.pretrain_epochs == 0 {
                return Err(CliError::Validation("toy.pretrain_epochs must be positive".into()));
            }
            if toy.batch_size == 0 || !(toy.learning_rate > 0.0 && toy.learning_rate.is_finite()) {
                return Err(CliError::Validation("toy training needs a positive learning rate and batch size".into()));
            }
        }
        if let Some(ext) = &self.external {
            if ext.command.trim().is_empty() || ext.connections == 0 {
                return Err(CliError::Validation("external evaluator needs a command and at least one connection".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_arch(dir: &Path) -> PathBuf {
        let p = dir.join("a.json");
        std::fs::write(&p, "{}").unwrap();
        p
    }

    #[test]
    fn defaults_mirror_search_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let arch = write_arch(dir.path());
        let c = RunConfig::from_json(&format!(r#"{{"arch": {:?}, "toy": {{}}}}"#, arch)).unwrap();
        assert_eq!(c.search_config(), SearchConfig::default());
        assert_eq!(c.evaluator_kind().unwrap(), EvaluatorKind::Toy);
        c.validate().unwrap();
    }

    #[test]
    fn two_backends_are_rejected() {
        let c = RunConfig::from_json(r#"{"arch": "x", "toy": {}, "external": {"command": "cat"}}"#).unwrap();
        assert!(matches!(c.evaluator_kind(), Err(CliError::Validation(_))));
    }

    #[test]
    fn evaluator_flag_drops_other_sections() {
        let mut c = RunConfig::from_json(r#"{"arch": "x", "toy": {}, "external": {"command": "cat"}}"#).unwrap();
        c.apply(&Overrides {
            evaluator: Some(EvaluatorKind::Toy),
            ..Overrides::default()
        });
        assert_eq!(c.evaluator_kind().unwrap(), EvaluatorKind::Toy);
        assert!(c.external.is_none());
    }

    #[test]
    fn flags_override_fields() {
        let mut c = RunConfig::from_json(r#"{"arch": "x", "toy": {}, "cycles": 7}"#).unwrap();
        c.apply(&Overrides {
            cycles: Some(3),
            seed: Some(11),
            alpha: Some(0.4),
            ..Overrides::default()
        });
        assert_eq!((c.cycles, c.seed, c.alpha), (3, 11, 0.4));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        write_arch(dir.path());
        let cfg = dir.path().join("run.json");
        std::fs::write(&cfg, r#"{"arch": "a.json", "toy": {}, "out_dir": "o"}"#).unwrap();
        let c = RunConfig::resolve(Some(&cfg), &Overrides::default()).unwrap();
        assert_eq!(c.arch, dir.path().join("a.json"));
        assert_eq!(c.out_dir, dir.path().join("o"));
    }

    #[test]
    fn unknown_fields_and_missing_files_fail_validation() {
        assert!(RunConfig::from_json(r#"{"arch": "x", "bogus": 1}"#).is_err());
        let c = RunConfig::from_json(r#"{"arch": "/nonexistent/a.json", "toy": {}}"#).unwrap();
        assert!(matches!(c.validate(), Err(CliError::Validation(_))));
    }
}
