//! FedAvg, FedDistill, FedProto and the no-exchange control.

use crate::error::{Error, Result};
use crate::nn::ModelState;
use crate::rng::{self, Purpose};

use super::client::{train_local, ClientState, DistillTargets, LossSummary, RepresentationMode};
use super::exchange::{Endpoint, ExchangeChannel, Payload};
use super::log::{ClientRoundLog, RoundLog};
use super::{for_each_client, validate_clients, FederationConfig};

/// Unweighted element-wise mean, computed as `m₀ + Σ(mᵢ − m₀)/n` so that
/// averaging identical models returns them bit for bit.
pub fn average_models(models: &[&ModelState]) -> Result<ModelState> {
    let first = *models
        .first()
        .ok_or_else(|| Error::invalid("cannot average zero models"))?;
    for m in &models[1..] {
        m.ensure_same_arch(first.descriptor())?;
    }
    let inv = 1.0 / models.len() as f64;
    let mut out = first.clone();
    for (pi, p) in out.params_mut().iter_mut().enumerate() {
        let base = first.params()[pi].tensor.data();
        let mut delta = vec![0.0; base.len()];
        for m in &models[1..] {
            for ((d, &v), &b) in delta.iter_mut().zip(m.params()[pi].tensor.data()).zip(base) {
                *d += v - b;
            }
        }
        for (v, d) in p.tensor.data_mut().iter_mut().zip(delta) {
            *v += d * inv;
        }
    }
    Ok(out)
}

fn params_payload(model: &ModelState) -> Payload {
    Payload::Parameters(model.params().iter().map(|p| p.tensor.clone()).collect())
}

fn model_from_payload(template: &ModelState, payload: Payload) -> Result<ModelState> {
    let Payload::Parameters(tensors) = payload else {
        return Err(Error::invalid("expected a parameter payload"));
    };
    let mut m = template.clone();
    for (p, t) in m.params_mut().iter_mut().zip(tensors) {
        t.ensure_shape("parameter payload", p.tensor.shape())?;
        p.tensor = t;
    }
    Ok(m)
}

fn client_logs(clients: &[ClientState], losses: Vec<LossSummary>, channel: &ExchangeChannel, round: usize) -> Vec<ClientRoundLog> {
    clients
        .iter()
        .zip(losses)
        .map(|(c, s)| ClientRoundLog {
            client: c.id,
            teacher: None,
            teacher_class: None,
            ce_loss: s.ce,
            distill_loss: s.distill,
            total_loss: s.total,
            bytes_received: channel.bytes_received(round, c.id),
        })
        .collect()
}

fn train_all(
    clients: &mut [ClientState],
    cfg: &FederationConfig,
    seed: u64,
    round: usize,
    targets: Option<&[Option<Vec<f64>>]>,
    mode: RepresentationMode,
) -> Result<Vec<LossSummary>> {
    let inputs = vec![(); clients.len()];
    for_each_client(cfg.schedule, clients, inputs, |client, ()| {
        let mut shuffle = rng::stream(seed, Purpose::Shuffle, &[round as u64, client.id as u64]);
        let targets = targets.map_or(DistillTargets::None, DistillTargets::PerClass);
        train_local(client, &cfg.hyper, cfg.lambda, mode, &targets, &mut shuffle, round)
    })
}

/// Independent local training with no exchange at all.
pub fn run_local_only(
    clients: &mut [ClientState],
    rounds: usize,
    cfg: &FederationConfig,
    seed: u64,
) -> Result<Vec<RoundLog>> {
    validate_clients(clients, 1)?;
    let channel = ExchangeChannel::new();
    (0..rounds)
        .map(|round| {
            let losses = train_all(clients, cfg, seed, round, None, cfg.representation)?;
            Ok(RoundLog {
                round,
                clients: client_logs(clients, losses, &channel, round),
                bytes_exchanged: 0,
                warnings: Vec::new(),
            })
        })
        .collect()
}

/// Local training, then every client adopts the mean of all client models.
pub fn run_fedavg(
    clients: &mut [ClientState],
    rounds: usize,
    cfg: &FederationConfig,
    seed: u64,
    channel: &mut ExchangeChannel,
) -> Result<Vec<RoundLog>> {
    validate_clients(clients, 1)?;
    let mut logs = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let losses = train_all(clients, cfg, seed, round, None, cfg.representation)?;
        let uploaded = clients
            .iter()
            .map(|c| model_from_payload(&c.model, channel.transmit(round, Endpoint::Client(c.id), Endpoint::Server, params_payload(&c.model))))
            .collect::<Result<Vec<_>>>()?;
        let global = average_models(&uploaded.iter().collect::<Vec<_>>())?;
        for c in clients.iter_mut() {
            let payload = channel.transmit(round, Endpoint::Server, Endpoint::Client(c.id), params_payload(&global));
            c.model = model_from_payload(&global, payload)?;
        }
        logs.push(RoundLog {
            round,
            clients: client_logs(clients, losses, channel, round),
            bytes_exchanged: channel.round_bytes(round),
            warnings: Vec::new(),
        });
    }
    Ok(logs)
}

/// Unweighted mean of per-class vectors over the clients that hold the class.
///
/// `per_client[i][c]` is client `i`'s local mean for class `c`, if it holds any.
pub fn aggregate_class_means(per_client: &[Vec<Option<Vec<f64>>>], classes: usize) -> Vec<Option<Vec<f64>>> {
    (0..classes)
        .map(|c| {
            let held: Vec<&Vec<f64>> = per_client.iter().filter_map(|m| m.get(c).and_then(Option::as_ref)).collect();
            let first = held.first()?;
            let mut sum = vec![0.0; first.len()];
            for v in &held {
                for (s, x) in sum.iter_mut().zip(v.iter()) {
                    *s += x;
                }
            }
            let inv = 1.0 / held.len() as f64;
            Some(sum.into_iter().map(|s| s * inv).collect())
        })
        .collect()
}

fn local_class_means(client: &ClientState, mode: RepresentationMode) -> Result<Vec<Option<Vec<f64>>>> {
    let classes = client.model.descriptor().classes;
    (0..classes)
        .map(|c| {
            let idx = client.shard.dataset.class_indices(c);
            if idx.is_empty() {
                Ok(None)
            } else {
                client.mean_representation(&idx, mode, 64).map(Some)
            }
        })
        .collect()
}

fn run_global_regularized(
    clients: &mut [ClientState],
    rounds: usize,
    cfg: &FederationConfig,
    seed: u64,
    channel: &mut ExchangeChannel,
    mode: RepresentationMode,
) -> Result<Vec<RoundLog>> {
    validate_clients(clients, 2)?;
    let classes = clients[0].model.descriptor().classes;
    let wrap = |class: usize, values: Vec<f64>| match mode {
        RepresentationMode::Penultimate => Payload::Prototype { class, values },
        _ => Payload::Representation { class, values },
    };
    let unwrap = |p: Payload| match p {
        Payload::Prototype { values, .. } | Payload::Representation { values, .. } => values,
        Payload::Parameters(_) => unreachable!("only representations are sent"),
    };
    let mut logs = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let mut uploaded = Vec::with_capacity(clients.len());
        for client in clients.iter() {
            let means = local_class_means(client, mode)?;
            let received = means
                .into_iter()
                .enumerate()
                .map(|(c, m)| {
                    m.map(|values| unwrap(channel.transmit(round, Endpoint::Client(client.id), Endpoint::Server, wrap(c, values))))
                })
                .collect();
            uploaded.push(received);
        }
        let global = aggregate_class_means(&uploaded, classes);
        let warnings: Vec<String> = global
            .iter()
            .enumerate()
            .filter(|(_, g)| g.is_none())
            .map(|(c, _)| format!("class {c} is held by no client; skipped"))
            .collect();
        let mut per_client_targets = Vec::with_capacity(clients.len());
        for client in clients.iter() {
            let t: Vec<Option<Vec<f64>>> = global
                .iter()
                .enumerate()
                .map(|(c, g)| {
                    g.clone()
                        .map(|values| unwrap(channel.transmit(round, Endpoint::Server, Endpoint::Client(client.id), wrap(c, values))))
                })
                .collect();
            per_client_targets.push(t);
        }
        let losses = for_each_client(cfg.schedule, clients, per_client_targets, |client, targets| {
            let mut shuffle = rng::stream(seed, Purpose::Shuffle, &[round as u64, client.id as u64]);
            train_local(client, &cfg.hyper, cfg.lambda, mode, &DistillTargets::PerClass(&targets), &mut shuffle, round)
        })?;
        logs.push(RoundLog {
            round,
            clients: client_logs(clients, losses, channel, round),
            bytes_exchanged: channel.round_bytes(round),
            warnings,
        });
    }
    Ok(logs)
}

/// Every client is regularized toward the all-client mean representation
/// (logits by default) of each sample's own label.
pub fn run_feddistill(
    clients: &mut [ClientState],
    rounds: usize,
    cfg: &FederationConfig,
    seed: u64,
    channel: &mut ExchangeChannel,
) -> Result<Vec<RoundLog>> {
    run_global_regularized(clients, rounds, cfg, seed, channel, cfg.representation)
}

/// As [`run_feddistill`] but on penultimate-layer prototypes.
pub fn run_fedproto(
    clients: &mut [ClientState],
    rounds: usize,
    cfg: &FederationConfig,
    seed: u64,
    channel: &mut ExchangeChannel,
) -> Result<Vec<RoundLog>> {
    run_global_regularized(clients, rounds, cfg, seed, channel, RepresentationMode::Penultimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::fixtures::{single_class_client, tiny_arch, tiny_clients};
    use crate::federation::{PayloadKind, Schedule, TrainHyper};
    use crate::nn::{init_model, ArchDescriptor};

    fn cfg(lambda: f64) -> FederationConfig {
        FederationConfig {
            lambda,
            hyper: TrainHyper {
                batch_size: 8,
                ..TrainHyper::default()
            },
            ..FederationConfig::default()
        }
    }

    fn filled(value: f64) -> ModelState {
        let mut m = ModelState::zeros(tiny_arch()).unwrap();
        for p in m.params_mut() {
            p.tensor.data_mut().fill(value);
        }
        m
    }

    #[test]
    fn averaging_examples() {
        let m = init_model(tiny_arch(), 3).unwrap();
        assert!(average_models(&[&m, &m]).unwrap().bit_eq(&m));

        let mut neg = m.clone();
        for p in neg.params_mut() {
            for v in p.tensor.data_mut() {
                *v = -*v;
            }
        }
        assert!(average_models(&[&m, &neg]).unwrap().flat_values().all(|v| v == 0.0));

        let avg = average_models(&[&filled(1.0), &filled(2.0), &filled(6.0)]).unwrap();
        assert!(avg.flat_values().all(|v| v == 3.0));

        assert!(average_models(&[]).is_err());
        let other = ModelState::zeros(ArchDescriptor::lenet5(2)).unwrap();
        assert!(average_models(&[&m, &other]).is_err());
    }

    #[test]
    fn fedavg_reaches_consensus_every_round() {
        let mut clients = tiny_clients(4, 8, 60, 2);
        let mut ch = ExchangeChannel::new();
        for round in 0..3 {
            run_fedavg(&mut clients, 1, &cfg(1.0), round, &mut ch).unwrap();
            for c in &clients[1..] {
                assert!(c.model.bit_eq(&clients[0].model));
            }
        }
    }

    #[test]
    fn fedavg_moves_whole_models() {
        let mut clients = tiny_clients(4, 8, 20, 2);
        let mut ch = ExchangeChannel::new();
        let logs = run_fedavg(&mut clients, 2, &cfg(1.0), 0, &mut ch).unwrap();
        let p = clients[0].model.param_count() as u64;
        assert_eq!(ch.count(PayloadKind::Params), 2 * 2 * clients.len());
        for log in &logs {
            for c in &log.clients {
                assert_eq!(c.bytes_received, p * 8);
            }
            assert_eq!(log.bytes_exchanged, 2 * clients.len() as u64 * p * 8);
        }
    }

    #[test]
    fn fedavg_rejects_mixed_architectures() {
        let mut clients = tiny_clients(2, 4, 0, 1);
        clients[1].model = ModelState::zeros(ArchDescriptor {
            fc_width: 5,
            ..tiny_arch()
        })
        .unwrap();
        assert!(run_fedavg(&mut clients, 1, &cfg(1.0), 0, &mut ExchangeChannel::new()).is_err());
    }

    #[test]
    fn class_mean_aggregation() {
        let one = aggregate_class_means(&[vec![Some(vec![1.0, 5.0]), None], vec![None, None]], 2);
        assert_eq!(one, vec![Some(vec![1.0, 5.0]), None]);
        let two = aggregate_class_means(&[vec![Some(vec![1.0, 1.0])], vec![Some(vec![3.0, 3.0])]], 1);
        assert_eq!(two, vec![Some(vec![2.0, 2.0])]);
        let protos = aggregate_class_means(
            &[vec![None, Some(vec![0.0, 2.0])], vec![None, Some(vec![4.0, 2.0])]],
            2,
        );
        assert_eq!(protos[1], Some(vec![2.0, 2.0]));
    }

    #[test]
    fn unheld_class_is_skipped_with_warning() {
        let mut clients = vec![single_class_client(0, 0, 6, 1), single_class_client(1, 0, 6, 2)];
        let logs = run_feddistill(&mut clients, 1, &cfg(1.0), 0, &mut ExchangeChannel::new()).unwrap();
        assert_eq!(logs[0].warnings.len(), 1);
        assert!(logs[0].warnings[0].contains("class 1"));
    }

    #[test]
    fn zero_lambda_regularizers_match_local_training() {
        let base = tiny_clients(4, 8, 40, 5);
        let mut local = base.clone();
        run_local_only(&mut local, 2, &cfg(0.0), 9).unwrap();
        for strategy in [run_feddistill, run_fedproto] {
            let mut c = base.clone();
            strategy(&mut c, 2, &cfg(0.0), 9, &mut ExchangeChannel::new()).unwrap();
            for (a, b) in c.iter().zip(&local) {
                assert!(a.model.bit_eq(&b.model));
            }
        }
    }

    #[test]
    fn prototypes_have_penultimate_width() {
        let data = crate::federation::fixtures::tiny_data(4, 0);
        let mut clients: Vec<ClientState> = (0..2)
            .map(|id| {
                let idx: Vec<usize> = (0..data.len()).filter(|i| i % 2 == id).collect();
                let shard = crate::data::ClientShard {
                    client_id: id,
                    dataset: data.subset(&idx),
                    class_counts: vec![2, 2],
                    source_indices: idx,
                    expertise: 0,
                    minority: 1,
                };
                ClientState::new(shard, init_model(ArchDescriptor::lenet5(2), 0).unwrap())
            })
            .collect();
        // 32×32 images are required by the default model.
        for c in &mut clients {
            let n = c.shard.dataset.len();
            let labels = c.shard.dataset.labels().to_vec();
            c.shard.dataset = crate::data::Dataset::new(
                crate::Tensor::new(vec![n, 1, 32, 32], vec![0.25; n * 1024]).unwrap(),
                labels,
                2,
            )
            .unwrap();
        }
        let mut ch = ExchangeChannel::new();
        run_fedproto(&mut clients, 1, &cfg(1.0), 0, &mut ch).unwrap();
        assert!(ch.count(PayloadKind::Proto) > 0);
        assert!(ch.transfers().iter().all(|t| t.kind == PayloadKind::Proto && t.bytes == 84 * 8));
    }

    #[test]
    fn representation_strategies_never_send_parameters() {
        for strategy in [run_feddistill, run_fedproto] {
            let mut c = tiny_clients(4, 8, 20, 3);
            let mut ch = ExchangeChannel::new();
            strategy(&mut c, 2, &cfg(1.0), 0, &mut ch).unwrap();
            assert_eq!(ch.count(PayloadKind::Params), 0);
            assert!(ch.total_bytes() > 0);
        }
    }

    #[test]
    fn schedule_independence_for_baselines() {
        let base = tiny_clients(4, 8, 40, 4);
        let mut seq = cfg(1.0);
        seq.schedule = Schedule::Sequential;
        let par = cfg(1.0);
        type Runner = fn(&mut [ClientState], usize, &FederationConfig, u64, &mut ExchangeChannel) -> Result<Vec<RoundLog>>;
        let runners: [Runner; 3] = [run_fedavg, run_feddistill, run_fedproto];
        for run in runners {
            let mut a = base.clone();
            let mut b = base.clone();
            run(&mut a, 2, &seq, 1, &mut ExchangeChannel::new()).unwrap();
            run(&mut b, 2, &par, 1, &mut ExchangeChannel::new()).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!(x.model.bit_eq(&y.model));
            }
        }
    }

    #[test]
    fn local_only_with_no_rounds_is_identity() {
        let base = tiny_clients(2, 4, 0, 0);
        let mut c = base.clone();
        assert!(run_local_only(&mut c, 0, &cfg(1.0), 0).unwrap().is_empty());
        for (a, b) in c.iter().zip(&base) {
            assert!(a.model.bit_eq(&b.model));
        }
    }
}
