//! Client lifecycle and round strategies.

pub mod baselines;
pub mod client;
pub mod codistill;
pub mod exchange;
pub mod log;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use baselines::{aggregate_class_means, average_models, run_fedavg, run_feddistill, run_fedproto, run_local_only};
pub use client::{average_representations, ClientState, DistillReduction, DistillTargets, LossSummary, RepresentationMode, TrainHyper};
pub use codistill::{
    codistill_client_round, run_codistillation, select_teacher, teacher_representation, ClassRepresentation,
};
pub use exchange::{Endpoint, ExchangeChannel, Payload, PayloadKind, Transfer};
pub use log::{ClientRoundLog, RoundLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    CoDistill,
    FedAvg,
    FedDistill,
    FedProto,
    LocalOnly,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::CoDistill => "codistill",
            Strategy::FedAvg => "fedavg",
            Strategy::FedDistill => "feddistill",
            Strategy::FedProto => "fedproto",
            Strategy::LocalOnly => "local-only",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "codistill" | "co-distillation" | "cd" => Ok(Strategy::CoDistill),
            "fedavg" => Ok(Strategy::FedAvg),
            "feddistill" | "fd" => Ok(Strategy::FedDistill),
            "fedproto" | "fp" => Ok(Strategy::FedProto),
            "local-only" | "local" => Ok(Strategy::LocalOnly),
            "fedamp" => Err(Error::invalid(
                "strategy `fedamp` is not implemented: its attentive message passing is defined outside this framework",
            )),
            other => Err(Error::invalid(format!("unknown strategy `{other}`"))),
        }
    }
}

/// How per-client work inside a round is executed. Results are identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Schedule {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub lambda: f64,
    pub k: usize,
    pub representation: RepresentationMode,
    pub hyper: TrainHyper,
    pub schedule: Schedule,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            lambda: 1.0,
            k: 32,
            representation: RepresentationMode::Logits,
            hyper: TrainHyper::default(),
            schedule: Schedule::Parallel,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("λ must be non-negative, got {}", self.lambda)));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.hyper.batch_size == 0 || self.hyper.local_epochs == 0 {
            return Err(Error::invalid("batch size and local epochs must be positive"));
        }
        Ok(())
    }
}

/// Dispatches to the strategy's round loop.
pub fn run_strategy(
    strategy: Strategy,
    clients: &mut [ClientState],
    rounds: usize,
    cfg: &FederationConfig,
    seed: u64,
    channel: &mut ExchangeChannel,
) -> Result<Vec<RoundLog>> {
    cfg.validate()?;
    match strategy {
        Strategy::CoDistill => run_codistillation(clients, rounds, cfg, seed, channel),
        Strategy::FedAvg => run_fedavg(clients, rounds, cfg, seed, channel),
        Strategy::FedDistill => run_feddistill(clients, rounds, cfg, seed, channel),
        Strategy::FedProto => run_fedproto(clients, rounds, cfg, seed, channel),
        Strategy::LocalOnly => run_local_only(clients, rounds, cfg, seed),
    }
}

pub(crate) fn validate_clients(clients: &[ClientState], min: usize) -> Result<()> {
    if clients.len() < min {
        return Err(Error::invalid(format!(
            "strategy needs at least {min} clients, got {}",
            clients.len()
        )));
    }
    if let Some(first) = clients.first() {
        let d = first.model.descriptor();
        for c in &clients[1..] {
            c.model.ensure_same_arch(d)?;
        }
    }
    let mut ids: Vec<usize> = clients.iter().map(|c| c.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != clients.len() {
        return Err(Error::invalid("client ids must be unique"));
    }
    Ok(())
}

pub(crate) fn position_of(clients: &[ClientState], id: usize) -> Result<usize> {
    clients
        .iter()
        .position(|c| c.id == id)
        .ok_or_else(|| Error::invalid(format!("unknown client {id}")))
}

/// Applies `f` to every client with its own input, sequentially or on the rayon pool.
pub(crate) fn for_each_client<T, R, F>(
    schedule: Schedule,
    clients: &mut [ClientState],
    inputs: Vec<T>,
    f: F,
) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(&mut ClientState, T) -> Result<R> + Sync,
{
    debug_assert_eq!(clients.len(), inputs.len());
    match schedule {
        Schedule::Sequential => clients.iter_mut().zip(inputs).map(|(c, t)| f(c, t)).collect(),
        Schedule::Parallel => clients
            .par_iter_mut()
            .zip(inputs.into_par_iter())
            .map(|(c, t)| f(c, t))
            .collect(),
    }
}
