//! Run configuration: defaults, `key = value` files and flag overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fms_core::context::{Aggregator, SelectionMode};
use fms_core::flow::{Coupling, InferenceMode};
use fms_core::kg::Mode;
use fms_core::model::{Ablation, Task, TrainConfig};
use fms_core::Execution;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub setting: Mode,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub ablation: Ablation,
    pub category_threshold: f64,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            setting: Mode::Transductive,
            out: None,
            checkpoint: None,
            ablation: Ablation::None,
            category_threshold: fms_core::eval::DEFAULT_CATEGORY_THRESHOLD,
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_setting(value: &str) -> Result<Mode, CliError> {
    match value {
        "transductive" => Ok(Mode::Transductive),
        "inductive" => Ok(Mode::Inductive),
        _ => Err(CliError::Usage(format!(
            "setting: expected transductive or inductive, got {value:?}"
        ))),
    }
}

fn parse_exec(value: &str) -> Result<Execution, CliError> {
    match value {
        "parallel" => Ok(Execution::Parallel),
        "sequential" => Ok(Execution::Sequential),
        _ => Err(CliError::Usage(format!(
            "exec: expected parallel or sequential, got {value:?}"
        ))),
    }
}

fn exec_str(e: Execution) -> &'static str {
    match e {
        Execution::Parallel => "parallel",
        Execution::Sequential => "sequential",
    }
}

impl RunConfig {
    /// Sets one key. Dashes and underscores in keys are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let tc = &mut self.train;
        let ctx = &mut tc.model.context;
        let flow = &mut tc.model.flow;
        match key.as_str() {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "task" => tc.model.task = parse::<Task>(&key, value)?,
            "setting" => self.setting = parse_setting(value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "ablation" => self.ablation = parse(&key, value)?,
            "dim" => ctx.dim = parse(&key, value)?,
            "hops" => ctx.hops = parse(&key, value)?,
            "topk" | "top_k" => ctx.top_k = parse(&key, value)?,
            "neighbor_samples" => ctx.neighbor_samples = parse(&key, value)?,
            "heads" => ctx.heads = parse(&key, value)?,
            "temperature" => ctx.temperature = parse(&key, value)?,
            "selection_mode" => ctx.selection = parse::<SelectionMode>(&key, value)?,
            "aggregator" => ctx.aggregator = parse::<Aggregator>(&key, value)?,
            "sigma" => flow.sigma = parse(&key, value)?,
            "coupling" => flow.coupling = parse::<Coupling>(&key, value)?,
            "inference" => flow.inference = parse::<InferenceMode>(&key, value)?,
            "cfm_stop_gradient" => flow.stop_gradient = parse(&key, value)?,
            "use_flow" => tc.model.use_flow = parse(&key, value)?,
            "lambda" => tc.lambda = parse(&key, value)?,
            "lr" => tc.lr = parse(&key, value)?,
            "l2" => tc.l2 = parse(&key, value)?,
            "epochs" => tc.epochs = parse(&key, value)?,
            "batch_size" => tc.batch_size = parse(&key, value)?,
            "negatives" => tc.negatives = parse(&key, value)?,
            "seed" => tc.seed = parse(&key, value)?,
            "valid_queries" => {
                tc.valid_queries = match value {
                    "all" => None,
                    v => Some(parse(&key, v)?),
                }
            }
            "candidate_cap" => tc.candidate_cap = parse(&key, value)?,
            "exec" => tc.exec = parse_exec(value)?,
            "category_threshold" => self.category_threshold = parse(&key, value)?,
            _ => return Err(CliError::Usage(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| CliError::Usage(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Applies the ablation to the model configuration. Idempotent.
    pub fn finalize(&mut self) {
        self.train.model.apply_ablation(self.ablation);
        if self.ablation == Ablation::NoFlow {
            self.train.lambda = 0.0;
        }
    }

    pub fn dataset_dir(&self) -> Result<&Path, CliError> {
        self.dataset
            .as_deref()
            .ok_or_else(|| CliError::Usage("--dataset is required".into()))
    }

    /// Checkpoint path: explicit, else `<out>/model.fms`.
    pub fn checkpoint_path(&self) -> Option<PathBuf> {
        self.checkpoint
            .clone()
            .or_else(|| self.out.as_ref().map(|o| o.join("model.fms")))
    }

    /// Every key with its final value, readable by [`RunConfig::apply_text`].
    pub fn resolved(&self) -> String {
        let tc = &self.train;
        let ctx = &tc.model.context;
        let flow = &tc.model.flow;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let mut entries: Vec<(&str, String)> = Vec::new();
        if self.dataset.is_some() {
            entries.push(("dataset", path(&self.dataset)));
        }
        entries.extend([
            ("task", tc.model.task.to_string()),
            ("setting", self.setting.as_str().to_string()),
        ]);
        if self.out.is_some() {
            entries.push(("out", path(&self.out)));
        }
        if self.checkpoint.is_some() {
            entries.push(("checkpoint", path(&self.checkpoint)));
        }
        entries.extend([
            ("ablation", self.ablation.to_string()),
            ("dim", ctx.dim.to_string()),
            ("hops", ctx.hops.to_string()),
            ("topk", ctx.top_k.to_string()),
            ("neighbor_samples", ctx.neighbor_samples.to_string()),
            ("heads", ctx.heads.to_string()),
            ("temperature", ctx.temperature.to_string()),
            ("selection_mode", ctx.selection.to_string()),
            ("aggregator", ctx.aggregator.to_string()),
            ("sigma", flow.sigma.to_string()),
            ("coupling", flow.coupling.to_string()),
            ("inference", flow.inference.to_string()),
            ("cfm_stop_gradient", flow.stop_gradient.to_string()),
            ("use_flow", tc.model.use_flow.to_string()),
            ("lambda", tc.lambda.to_string()),
            ("lr", tc.lr.to_string()),
            ("l2", tc.l2.to_string()),
            ("epochs", tc.epochs.to_string()),
            ("batch_size", tc.batch_size.to_string()),
            ("negatives", tc.negatives.to_string()),
            ("seed", tc.seed.to_string()),
            (
                "valid_queries",
                tc.valid_queries.map_or("all".to_string(), |n| n.to_string()),
            ),
            ("candidate_cap", tc.candidate_cap.to_string()),
            ("exec", exec_str(tc.exec).to_string()),
            ("category_threshold", self.category_threshold.to_string()),
        ]);
        let mut s = String::new();
        for (k, v) in entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
