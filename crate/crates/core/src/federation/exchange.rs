//! Instrumented in-process transport between clients (and the FedAvg /
//! FedDistill aggregator). Every payload crossing a client boundary goes
//! through [`ExchangeChannel::transmit`], which records its kind and size.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endpoint {
    Client(usize),
    Server,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Client(id) => write!(f, "{id}"),
            Endpoint::Server => f.write_str("server"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Rep,
    Params,
    Proto,
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PayloadKind::Rep => "rep",
            PayloadKind::Params => "params",
            PayloadKind::Proto => "proto",
        })
    }
}

/// What may cross the channel. There is deliberately no variant for images.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Averaged logits / probabilities for one class.
    Representation { class: usize, values: Vec<f64> },
    /// Averaged penultimate embedding for one class.
    Prototype { class: usize, values: Vec<f64> },
    /// Full model parameters.
    Parameters(Vec<Tensor>),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Representation { .. } => PayloadKind::Rep,
            Payload::Prototype { .. } => PayloadKind::Proto,
            Payload::Parameters(_) => PayloadKind::Params,
        }
    }

    /// Wire size: 8 bytes per 64-bit value.
    pub fn bytes(&self) -> u64 {
        let values = match self {
            Payload::Representation { values, .. } | Payload::Prototype { values, .. } => values.len(),
            Payload::Parameters(ts) => ts.iter().map(Tensor::len).sum(),
        };
        values as u64 * 8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub round: usize,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub kind: PayloadKind,
    pub bytes: u64,
}

impl fmt::Display for Transfer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{},{}", self.round, self.src, self.dst, self.kind, self.bytes)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExchangeChannel {
    transfers: Vec<Transfer>,
}

impl ExchangeChannel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the transfer and hands the payload to the receiver.
    pub fn transmit(&mut self, round: usize, src: Endpoint, dst: Endpoint, payload: Payload) -> Payload {
        self.transfers.push(Transfer {
            round,
            src,
            dst,
            kind: payload.kind(),
            bytes: payload.bytes(),
        });
        payload
    }

    pub fn transfers(&self) -> &[Transfer] {
        &self.transfers
    }

    pub fn count(&self, kind: PayloadKind) -> usize {
        self.transfers.iter().filter(|t| t.kind == kind).count()
    }

    pub fn total_bytes(&self) -> u64 {
        self.transfers.iter().map(|t| t.bytes).sum()
    }

    pub fn round_bytes(&self, round: usize) -> u64 {
        self.transfers.iter().filter(|t| t.round == round).map(|t| t.bytes).sum()
    }

    pub fn bytes_received(&self, round: usize, client: usize) -> u64 {
        self.transfers
            .iter()
            .filter(|t| t.round == round && t.dst == Endpoint::Client(client))
            .map(|t| t.bytes)
            .sum()
    }

    /// One `round,src,dst,kind,bytes` line per transfer.
    pub fn log_lines(&self) -> String {
        self.transfers.iter().map(|t| format!("{t}\n")).collect()
    }
}
