use serde::{Deserialize, Serialize};

/// One client's view of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundLog {
    pub client: usize,
    pub teacher: Option<usize>,
    pub teacher_class: Option<usize>,
    pub ce_loss: f64,
    pub distill_loss: f64,
    pub total_loss: f64,
    pub bytes_received: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub clients: Vec<ClientRoundLog>,
    /// All bytes moved through the exchange channel this round.
    pub bytes_exchanged: u64,
    pub warnings: Vec<String>,
}
