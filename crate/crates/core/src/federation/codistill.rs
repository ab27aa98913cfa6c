//! Serverless co-distillation.
//!
//! Every round each client acts as a student: it picks another client
//! uniformly at random as teacher, receives the teacher's mean representation
//! over `k` sampled images of the teacher's expertise class, and trains on
//! `CE + λ · Σ MSE(rep(x), R)` over its own samples of that class. Teachers
//! answer from their model as of the end of the previous round.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose, StreamRng};

use super::client::{train_local, ClientState, DistillTargets, LossSummary, RepresentationMode, TrainHyper};
use super::exchange::{Endpoint, ExchangeChannel, Payload};
use super::log::{ClientRoundLog, RoundLog};
use super::{for_each_client, position_of, validate_clients, FederationConfig};

/// Averaged representation of one class, as sent by a teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRepresentation {
    pub class: usize,
    pub values: Vec<f64>,
    pub producer: usize,
    pub round: usize,
    pub k_used: usize,
    pub mode: RepresentationMode,
}

/// Samples `min(k, available)` expertise-class images without replacement and
/// averages their representations under the teacher's current model.
pub fn teacher_representation(
    teacher: &ClientState,
    k: usize,
    mode: RepresentationMode,
    round: usize,
    rng: &mut StreamRng,
) -> Result<ClassRepresentation> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let class = teacher.expertise();
    let pool = teacher.shard.dataset.class_indices(class);
    if pool.is_empty() {
        return Err(Error::invalid(format!(
            "client {} has no samples of its expertise class {class}",
            teacher.id
        )));
    }
    let take = k.min(pool.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, pool.len(), take)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    Ok(ClassRepresentation {
        class,
        values: teacher.mean_representation(&picked, mode, 64)?,
        producer: teacher.id,
        round,
        k_used: take,
        mode,
    })
}

/// Uniform choice among every client except the student.
pub fn select_teacher(student: usize, clients: &[usize], rng: &mut impl Rng) -> Result<usize> {
    if !clients.contains(&student) {
        return Err(Error::invalid(format!("student {student} is not a known client")));
    }
    let candidates: Vec<usize> = clients.iter().copied().filter(|&c| c != student).collect();
    if candidates.is_empty() {
        return Err(Error::invalid("co-distillation needs at least two clients"));
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

/// One local update of a student given its teacher's representation.
pub fn codistill_client_round(
    student: &mut ClientState,
    teacher_rep: &ClassRepresentation,
    lambda: f64,
    hyper: &TrainHyper,
    rng: &mut StreamRng,
    round: usize,
) -> Result<LossSummary> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("λ must be non-negative, got {lambda}")));
    }
    if teacher_rep.class >= student.model.descriptor().classes {
        return Err(Error::invalid(format!("teacher class {} out of range", teacher_rep.class)));
    }
    let targets = DistillTargets::Class {
        class: teacher_rep.class,
        target: &teacher_rep.values,
    };
    train_local(student, hyper, lambda, teacher_rep.mode, &targets, rng, round)
}

pub fn run_codistillation(
    clients: &mut [ClientState],
    rounds: usize,
    cfg: &FederationConfig,
    seed: u64,
    channel: &mut ExchangeChannel,
) -> Result<Vec<RoundLog>> {
    validate_clients(clients, 2)?;
    let ids: Vec<usize> = clients.iter().map(|c| c.id).collect();
    let mut logs = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let r = round as u64;
        // Teachers answer from the state at the start of the round.
        let requests = clients
            .iter()
            .map(|student| {
                let mut pick = rng::stream(seed, Purpose::Teacher, &[r, student.id as u64]);
                let teacher = select_teacher(student.id, &ids, &mut pick)?;
                let mut sample = rng::stream(seed, Purpose::Sample, &[r, student.id as u64]);
                let rep = teacher_representation(
                    &clients[position_of(clients, teacher)?],
                    cfg.k,
                    cfg.representation,
                    round,
                    &mut sample,
                )?;
                Ok((teacher, rep))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut delivered = Vec::with_capacity(requests.len());
        for ((teacher, rep), &student) in requests.into_iter().zip(&ids) {
            let payload = Payload::Representation {
                class: rep.class,
                values: rep.values.clone(),
            };
            let Payload::Representation { class, values } =
                channel.transmit(round, Endpoint::Client(teacher), Endpoint::Client(student), payload)
            else {
                unreachable!("channel returns the payload it was given");
            };
            delivered.push(ClassRepresentation { class, values, ..rep });
        }

        let losses = for_each_client(cfg.schedule, clients, delivered, |client, rep| {
            let mut shuffle = rng::stream(seed, Purpose::Shuffle, &[r, client.id as u64]);
            let summary = codistill_client_round(client, &rep, cfg.lambda, &cfg.hyper, &mut shuffle, round)?;
            Ok((rep.producer, rep.class, summary))
        })?;

        logs.push(RoundLog {
            round,
            clients: ids
                .iter()
                .zip(losses)
                .map(|(&client, (teacher, class, s))| ClientRoundLog {
                    client,
                    teacher: Some(teacher),
                    teacher_class: Some(class),
                    ce_loss: s.ce,
                    distill_loss: s.distill,
                    total_loss: s.total,
                    bytes_received: channel.bytes_received(round, client),
                })
                .collect(),
            bytes_exchanged: channel.round_bytes(round),
            warnings: Vec::new(),
        });
    }
    Ok(logs)
}
