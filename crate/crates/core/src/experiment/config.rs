//! Sweep configuration files.
//!
//! ```text
//! # comment
//! [dataset]
//! source = synthetic          # or `path`, with `path = <dir>`
//!
//! [grid]
//! strategy = codistill, fedavg
//! skew = 0, 20, 40, 60
//! ```
//!
//! Keys live under a `[section]`; lists are comma separated. Every key not
//! given takes the default of [`ExperimentPlan::default`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{FederationConfig, RepresentationMode, Schedule, Strategy};
use crate::nn::ArchDescriptor;

/// Environment variable that, when set, redirects the output file into this directory.
pub const OUTPUT_DIR_ENV: &str = "CODISTILL_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Synthetic { separation: f64, noise: f64 },
    Directory(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalSet {
    Holdout,
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    Csv,
    JsonLines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub source: DatasetSource,
    pub classes: usize,
    pub side: usize,
    pub holdout_percent: u32,
    pub clients: Vec<usize>,
    pub skews: Vec<u32>,
    pub images_per_class: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub federation: FederationConfig,
    pub model: ArchDescriptor,
    pub init_checkpoint: Option<PathBuf>,
    pub eval_on: EvalSet,
    pub output: PathBuf,
    pub format: OutputFormat,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            source: DatasetSource::Synthetic {
                separation: 0.1,
                noise: 0.3,
            },
            classes: 2,
            side: 32,
            holdout_percent: 20,
            clients: vec![4],
            skews: vec![0],
            images_per_class: vec![200],
            strategies: vec![Strategy::CoDistill],
            seeds: vec![0],
            rounds: 100,
            federation: FederationConfig::default(),
            model: ArchDescriptor::lenet5(2),
            init_checkpoint: None,
            eval_on: EvalSet::Holdout,
            output: PathBuf::from("results.csv"),
            format: OutputFormat::Csv,
        }
    }
}

impl ExperimentPlan {
    /// Number of (cell, seed) runs in the grid.
    pub fn run_count(&self) -> usize {
        self.strategies.len() * self.clients.len() * self.skews.len() * self.images_per_class.len() * self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.clients.is_empty()
            || self.skews.is_empty()
            || self.images_per_class.is_empty()
            || self.strategies.is_empty()
            || self.seeds.is_empty()
        {
            return bad("every grid list must be non-empty".into());
        }
        if let Some(s) = self.skews.iter().find(|&&s| s >= 100) {
            return bad(format!("skew {s} outside [0, 100)"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.classes != 2 {
            return bad(format!("skewed partitioning needs exactly 2 classes, got {}", self.classes));
        }
        if self.holdout_percent == 0 || self.holdout_percent >= 100 {
            return bad(format!("holdout percent {} outside (0, 100)", self.holdout_percent));
        }
        for &n in &self.clients {
            for &b in &self.images_per_class {
                if n < 2 || n % 2 != 0 {
                    return bad(format!("client count must be even and at least 2, got {n}"));
                }
                if b < n {
                    return bad(format!("{b} images per class cannot be shared by {n} clients"));
                }
            }
        }
        if self.model.input_side != self.side || self.model.classes != self.classes {
            return bad("model input side / classes disagree with the dataset".into());
        }
        self.model.validate()?;
        self.federation.validate()
    }

    /// Output path after applying the [`OUTPUT_DIR_ENV`] override.
    pub fn resolved_output(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => {
                let name = self.output.file_name().map_or_else(|| "results.csv".into(), |n| n.to_owned());
                PathBuf::from(dir).join(name)
            }
            _ => self.output.clone(),
        }
    }
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn scalar<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| err(line, format!("`{key}` expects a {}, got `{value}`", short_type::<T>())))
}

fn list<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<&str> = value.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(err(line, format!("`{key}` has an empty list element")));
    }
    items.into_iter().map(|v| scalar(line, key, v)).collect()
}

fn short_type<T>() -> &'static str {
    let full = std::any::type_name::<T>();
    full.rsplit("::").next().unwrap_or(full)
}

/// Parses a config file; relative paths inside it resolve against its directory.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentPlan> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new("")))
}

/// Parses config text; `base` anchors relative paths.
pub fn parse_config_str(text: &str, base: &Path) -> Result<ExperimentPlan> {
    let mut plan = ExperimentPlan::default();
    let mut section: Option<String> = None;
    let mut source_kind: Option<(usize, String)> = None;
    let mut dir: Option<PathBuf> = None;
    let (mut separation, mut noise) = (0.1, 0.3);
    let mut model_line = 0;
    let mut conv_widths = plan.model.conv_widths;
    let (mut kernel, mut fc_width) = (plan.model.kernel, plan.model.fc_width);
    let mut seen = std::collections::HashSet::new();
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line, "section header must end with `]`"))?
                .trim();
            if !["dataset", "grid", "training", "model", "output"].contains(&name) {
                return Err(err(line, format!("unknown section `[{name}]`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(err(line, format!("`{key}` has no value")));
        }
        let sec = section
            .as_deref()
            .ok_or_else(|| err(line, format!("`{key}` appears before any [section]")))?;
        if !seen.insert(format!("{sec}.{key}")) {
            return Err(err(line, format!("`{key}` given twice in [{sec}]")));
        }
        let f = &mut plan.federation;
        match (sec, key) {
            ("dataset", "source") => source_kind = Some((line, value.to_string())),
            ("dataset", "path") => dir = Some(resolve(value)),
            ("dataset", "separation") => separation = scalar(line, key, value)?,
            ("dataset", "noise") => noise = scalar(line, key, value)?,
            ("dataset", "classes") => plan.classes = scalar(line, key, value)?,
            ("dataset", "side") => plan.side = scalar(line, key, value)?,
            ("dataset", "holdout_percent") => plan.holdout_percent = scalar(line, key, value)?,
            ("grid", "clients") => plan.clients = list(line, key, value)?,
            ("grid", "skew") => plan.skews = list(line, key, value)?,
            ("grid", "images_per_class") => plan.images_per_class = list(line, key, value)?,
            ("grid", "strategy") => {
                plan.strategies = value
                    .split(',')
                    .map(|s| s.trim().parse::<Strategy>().map_err(|e| err(line, e.to_string())))
                    .collect::<Result<_>>()?
            }
            ("grid", "seeds") => plan.seeds = list(line, key, value)?,
            ("training", "rounds") => plan.rounds = scalar(line, key, value)?,
            ("training", "local_epochs") => f.hyper.local_epochs = scalar(line, key, value)?,
            ("training", "lambda") => f.lambda = scalar(line, key, value)?,
            ("training", "k") => f.k = scalar(line, key, value)?,
            ("training", "lr") => f.hyper.lr = scalar(line, key, value)?,
            ("training", "momentum") => f.hyper.momentum = scalar(line, key, value)?,
            ("training", "batch_size") => f.hyper.batch_size = scalar(line, key, value)?,
            ("training", "distill_reduction") => {
                f.hyper.distill_reduction = value.parse().map_err(|e: Error| err(line, e.to_string()))?
            }
            ("training", "representation") => {
                f.representation = value
                    .parse::<RepresentationMode>()
                    .map_err(|e| err(line, e.to_string()))?
            }
            ("training", "schedule") => {
                f.schedule = match value {
                    "sequential" => Schedule::Sequential,
                    "parallel" => Schedule::Parallel,
                    _ => return Err(err(line, format!("unknown schedule `{value}`"))),
                }
            }
            ("training", "init_checkpoint") => plan.init_checkpoint = Some(resolve(value)),
            ("training", "eval_on") => {
                plan.eval_on = match value {
                    "holdout" => EvalSet::Holdout,
                    "train" => EvalSet::Train,
                    _ => return Err(err(line, format!("`eval_on` must be holdout or train, got `{value}`"))),
                }
            }
            ("model", "kernel") => {
                model_line = line;
                kernel = scalar(line, key, value)?
            }
            ("model", "conv_widths") => {
                model_line = line;
                let w: Vec<usize> = list(line, key, value)?;
                conv_widths = w
                    .try_into()
                    .map_err(|_| err(line, "`conv_widths` needs exactly three values"))?;
            }
            ("model", "fc_width") => {
                model_line = line;
                fc_width = scalar(line, key, value)?
            }
            ("output", "path") => plan.output = resolve(value),
            ("output", "format") => {
                plan.format = match value {
                    "csv" => OutputFormat::Csv,
                    "jsonl" | "json-lines" => OutputFormat::JsonLines,
                    _ => return Err(err(line, format!("unknown output format `{value}`"))),
                }
            }
            _ => return Err(err(line, format!("unknown key `{key}` in [{sec}]"))),
        }
    }

    plan.source = match source_kind {
        None => DatasetSource::Synthetic { separation, noise },
        Some((_, s)) if s == "synthetic" => DatasetSource::Synthetic { separation, noise },
        Some((line, s)) if s == "path" => {
            DatasetSource::Directory(dir.ok_or_else(|| err(line, "`source = path` needs `path = <dir>`"))?)
        }
        Some((line, s)) => return Err(err(line, format!("unknown dataset source `{s}`"))),
    };
    if let DatasetSource::Synthetic { separation, noise } = plan.source {
        if !(0.0..=1.0).contains(&separation) || !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::invalid("synthetic separation must be in [0, 1] and noise non-negative"));
        }
    }
    plan.model = ArchDescriptor {
        input_side: plan.side,
        kernel,
        conv_widths,
        fc_width,
        classes: plan.classes,
    };
    if model_line > 0 {
        plan.model
            .validate()
            .map_err(|e| err(model_line, e.to_string()))?;
    }
    plan.validate()?;
    Ok(plan)
}
