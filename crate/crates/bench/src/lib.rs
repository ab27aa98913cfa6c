//! Fixtures shared by the engine benchmarks.

use codistill_core::data::{gen_synthetic, partition, SkewSpec, SyntheticSpec};
use codistill_core::federation::ClientState;
use codistill_core::nn::{init_model, model::random_batch, ArchDescriptor, ModelState};
use codistill_core::rng::{stream, Purpose};
use codistill_core::Tensor;

/// Default LeNet-5 (two classes) with a random input batch and labels.
pub fn lenet_batch(batch: usize, seed: u64) -> (ModelState, Tensor, Vec<usize>) {
    let model = init_model(ArchDescriptor::lenet5(2), seed).expect("valid descriptor");
    let x = random_batch(&mut stream(seed, Purpose::Synthetic, &[]), batch, 32);
    let labels = (0..batch).map(|i| i % 2).collect();
    (model, x, labels)
}

/// `clients` LeNet clients on synthetic data at the given skew.
pub fn synthetic_clients(clients: usize, per_client_per_class: usize, skew: u32, seed: u64) -> Vec<ClientState> {
    let data = gen_synthetic(&SyntheticSpec {
        classes: 2,
        per_class: clients * per_client_per_class,
        side: 32,
        separation: 0.1,
        noise: 0.3,
        seed,
    })
    .expect("valid synthetic spec");
    let spec = SkewSpec {
        skew,
        n_per_class: per_client_per_class,
        clients,
        seed,
    };
    let model = init_model(ArchDescriptor::lenet5(2), seed).expect("valid descriptor");
    partition(&data, &spec)
        .expect("enough synthetic data")
        .into_iter()
        .map(|s| ClientState::new(s, model.clone()))
        .collect()
}
