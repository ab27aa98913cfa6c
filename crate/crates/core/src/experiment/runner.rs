//! Grid execution.
//!
//! For every (seed, client count, budget) the dataset, holdout and zero-skew
//! split are built once and shared by every strategy and skew, so skew curves
//! and strategy comparisons are paired. Each run is then a pure function of
//! the plan and its cell coordinates.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, load_image_dir, stratified_holdout, zero_skew_split, Dataset, SyntheticSpec, ZeroSkewSplit};
use crate::error::{Error, Result};
use crate::federation::{run_strategy, ClientState, ExchangeChannel};
use crate::metrics::{evaluate_run, EvalMeta};
use crate::nn::{checkpoint, init_model, ModelState};
use crate::rng::{derive_seed, Purpose};

use super::config::{DatasetSource, EvalSet, ExperimentPlan};
use super::results::{emit_results, CellKey, ResultRow, ResultsTable};

/// Data shared by every run of one (seed, clients, budget) group.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub holdout: Dataset,
    pub split: ZeroSkewSplit,
}

/// Images per class to generate so that the training pool keeps `budget` after the holdout.
pub fn synthetic_pool_size(budget: usize, holdout_percent: u32) -> usize {
    let keep = 100 - holdout_percent as usize;
    (budget * 100).div_ceil(keep)
}

fn source_dataset(plan: &ExperimentPlan, seed: u64, budget: usize, cache: Option<&Dataset>) -> Result<Dataset> {
    match &plan.source {
        DatasetSource::Synthetic { separation, noise } => gen_synthetic(&SyntheticSpec {
            classes: plan.classes,
            per_class: synthetic_pool_size(budget, plan.holdout_percent),
            side: plan.side,
            separation: *separation,
            noise: *noise,
            seed: derive_seed(seed, Purpose::Synthetic, &[budget as u64]),
        }),
        DatasetSource::Directory(dir) => match cache {
            Some(ds) => Ok(ds.clone()),
            None => load_image_dir(dir, plan.side, plan.classes),
        },
    }
}

pub fn prepare_data(plan: &ExperimentPlan, seed: u64, clients: usize, budget: usize) -> Result<PreparedData> {
    prepare_with(plan, seed, clients, budget, None)
}

fn prepare_with(
    plan: &ExperimentPlan,
    seed: u64,
    clients: usize,
    budget: usize,
    cache: Option<&Dataset>,
) -> Result<PreparedData> {
    let source = source_dataset(plan, seed, budget, cache)?;
    let split = stratified_holdout(&source, plan.holdout_percent, seed)?;
    let zero = zero_skew_split(&split.train, clients, budget / clients, seed)?;
    Ok(PreparedData {
        train: split.train,
        holdout: split.holdout,
        split: zero,
    })
}

/// The shared starting model: the warm-start checkpoint if configured, else a seeded initialization.
pub fn initial_model(plan: &ExperimentPlan, seed: u64) -> Result<ModelState> {
    match &plan.init_checkpoint {
        Some(path) => {
            let m = checkpoint::load(path)?;
            if m.descriptor() != &plan.model {
                return Err(Error::Checkpoint(format!(
                    "{} holds {:?}, plan expects {:?}",
                    path.display(),
                    m.descriptor(),
                    plan.model
                )));
            }
            Ok(m)
        }
        None => init_model(plan.model, seed),
    }
}

/// Accuracy and traffic summary of one finished run.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub client_accuracies: Vec<f64>,
    pub bytes_per_client_round: f64,
    pub bytes_total: u64,
    pub clients: Vec<ClientState>,
}

pub fn run_cell(plan: &ExperimentPlan, data: &PreparedData, init: &ModelState, key: CellKey) -> Result<CellOutcome> {
    let shards = data.split.apply(&data.train, key.skew)?;
    let mut clients: Vec<ClientState> = shards.into_iter().map(|s| ClientState::new(s, init.clone())).collect();
    let mut channel = ExchangeChannel::new();
    let run_seed = derive_seed(
        key.seed,
        Purpose::Cell,
        &[key.clients as u64, key.images_per_class as u64, key.skew as u64],
    );
    run_strategy(key.strategy, &mut clients, plan.rounds, &plan.federation, run_seed, &mut channel)?;
    let eval = match plan.eval_on {
        EvalSet::Holdout => &data.holdout,
        EvalSet::Train => &data.train,
    };
    let meta = EvalMeta {
        strategy: key.strategy.name().into(),
        skew: key.skew,
        images_per_class: key.images_per_class,
        clients: key.clients,
        seed: key.seed,
    };
    let report = evaluate_run(&clients, eval, meta)?;
    let received: u64 = (0..plan.rounds)
        .flat_map(|r| clients.iter().map(move |c| (r, c.id)))
        .map(|(r, id)| channel.bytes_received(r, id))
        .sum();
    let client_rounds = (plan.rounds * clients.len()).max(1);
    Ok(CellOutcome {
        client_accuracies: report.clients.iter().map(|c| c.accuracy).collect(),
        bytes_per_client_round: received as f64 / client_rounds as f64,
        bytes_total: channel.total_bytes(),
        clients,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub key: CellKey,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub table: ResultsTable,
    /// Wall time per run; kept out of the results table so that file stays reproducible.
    pub timings: Vec<CellTiming>,
}

fn all_keys(plan: &ExperimentPlan) -> Vec<CellKey> {
    let mut keys = Vec::with_capacity(plan.run_count());
    for &strategy in &plan.strategies {
        for &clients in &plan.clients {
            for &skew in &plan.skews {
                for &images_per_class in &plan.images_per_class {
                    for &seed in &plan.seeds {
                        keys.push(CellKey {
                            strategy,
                            clients,
                            skew,
                            images_per_class,
                            seed,
                        });
                    }
                }
            }
        }
    }
    keys
}

/// Runs the whole grid. Failed runs become marked rows; `progress` sees every finished run.
pub fn run_experiment<F>(plan: &ExperimentPlan, progress: F) -> Result<ExperimentOutcome>
where
    F: Fn(&ResultRow, f64) + Sync,
{
    plan.validate()?;
    let keys = all_keys(plan);
    let directory_data = match &plan.source {
        DatasetSource::Directory(dir) => Some(load_image_dir(dir, plan.side, plan.classes)?),
        DatasetSource::Synthetic { .. } => None,
    };

    let mut groups: BTreeMap<(u64, usize, usize), Vec<CellKey>> = BTreeMap::new();
    for k in &keys {
        groups.entry((k.seed, k.clients, k.images_per_class)).or_default().push(*k);
    }
    let progress = &progress;
    let finished: Vec<(ResultRow, CellTiming)> = groups
        .into_par_iter()
        .flat_map_iter(|((seed, clients, budget), members)| {
            let prepared = prepare_with(plan, seed, clients, budget, directory_data.as_ref())
                .and_then(|d| Ok((d, initial_model(plan, seed)?)));
            members.into_iter().map(move |key| {
                let start = Instant::now();
                let row = match &prepared {
                    Ok((data, init)) => match run_cell(plan, data, init, key) {
                        Ok(o) => ResultRow::ok(key, o.client_accuracies, o.bytes_per_client_round, o.bytes_total),
                        Err(e) => ResultRow::failed(key, &e.to_string()),
                    },
                    Err(e) => ResultRow::failed(key, &e.to_string()),
                };
                let seconds = start.elapsed().as_secs_f64();
                progress(&row, seconds);
                (row, CellTiming { key, seconds })
            })
        })
        .collect();

    let (rows, mut timings): (Vec<_>, Vec<_>) = finished.into_iter().unzip();
    timings.sort_by_key(|t: &CellTiming| t.key);
    Ok(ExperimentOutcome {
        table: ResultsTable::from_rows(rows),
        timings,
    })
}

/// `results.csv` → `results.timing.csv`.
pub fn timing_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map_or_else(|| "results".into(), |s| s.to_string_lossy().into_owned());
    output.with_file_name(format!("{stem}.timing.csv"))
}

pub fn write_timings(timings: &[CellTiming], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Results(e.to_string());
    w.write_record(["strategy", "clients", "skew", "images_per_class", "seed", "wall_seconds"])
        .map_err(fail)?;
    for t in timings {
        let k = t.key;
        w.write_record([
            k.strategy.name().to_string(),
            k.clients.to_string(),
            k.skew.to_string(),
            k.images_per_class.to_string(),
            k.seed.to_string(),
            format!("{:.3}", t.seconds),
        ])
        .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Results(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Runs the plan and writes the results file plus its timing sidecar.
pub fn run_and_emit<F>(plan: &ExperimentPlan, progress: F) -> Result<(ExperimentOutcome, PathBuf)>
where
    F: Fn(&ResultRow, f64) + Sync,
{
    let outcome = run_experiment(plan, progress)?;
    let path = plan.resolved_output();
    emit_results(&outcome.table, plan.format, &path)?;
    write_timings(&outcome.timings, &timing_path(&path))?;
    Ok((outcome, path))
}
