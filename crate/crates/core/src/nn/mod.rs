//! Minimal dense engine for the LeNet-style classifier.

pub mod checkpoint;
pub mod gradcheck;
mod kernels;
pub mod loss;
pub mod model;
pub mod network;
pub mod optim;

pub use gradcheck::{finite_diff_gradients, GradCheckOutcome};
pub use loss::{cross_entropy, mse, softmax};
pub use model::{init_model, ArchDescriptor, Gradients, ModelState, Velocity};
pub use network::{backward, backward_with_penultimate, forward, predict, ForwardTrace};
pub use optim::sgd_step;
