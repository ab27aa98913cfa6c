use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

/// Layer widths of the LeNet-style classifier.
///
/// Layout: conv1 → avg-pool → conv2 → avg-pool → conv3 → fc1 → fc2. conv1 and
/// conv2 use a square `kernel`; conv3's kernel spans the whole pooled map, so
/// its output is a flat `conv_widths[2]` vector. Pooling is 2×2, stride 2, and
/// drops a trailing odd row/column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub input_side: usize,
    pub kernel: usize,
    pub conv_widths: [usize; 3],
    pub fc_width: usize,
    pub classes: usize,
}

/// Spatial sizes derived from a descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub conv1_side: usize,
    pub pool1_side: usize,
    pub conv2_side: usize,
    pub pool2_side: usize,
}

impl ArchDescriptor {
    /// Classic LeNet-5 widths on a 32×32 grayscale input.
    pub fn lenet5(classes: usize) -> Self {
        ArchDescriptor {
            input_side: 32,
            kernel: 5,
            conv_widths: [6, 16, 120],
            fc_width: 84,
            classes,
        }
    }

    pub fn validate(&self) -> Result<Geometry> {
        let bad = |msg: String| Err(Error::InvalidDescriptor(msg));
        if self.kernel == 0 || self.input_side == 0 {
            return bad(format!(
                "kernel and input side must be positive (kernel {}, side {})",
                self.kernel, self.input_side
            ));
        }
        if self.conv_widths.iter().any(|&w| w == 0) || self.fc_width == 0 {
            return bad(format!(
                "layer widths must be positive (conv {:?}, fc {})",
                self.conv_widths, self.fc_width
            ));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.input_side < self.kernel + 1 {
            return bad(format!(
                "input side {} too small for kernel {}",
                self.input_side, self.kernel
            ));
        }
        let conv1_side = self.input_side - self.kernel + 1;
        let pool1_side = conv1_side / 2;
        if pool1_side < self.kernel + 1 {
            return bad(format!(
                "pooled conv1 map {pool1_side} too small for kernel {}",
                self.kernel
            ));
        }
        let conv2_side = pool1_side - self.kernel + 1;
        let pool2_side = conv2_side / 2;
        Ok(Geometry {
            conv1_side,
            pool1_side,
            conv2_side,
            pool2_side,
        })
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Result<Vec<(&'static str, Vec<usize>)>> {
        let g = self.validate()?;
        let [c1, c2, c3] = self.conv_widths;
        let k = self.kernel;
        Ok(vec![
            ("conv1.weight", vec![c1, 1, k, k]),
            ("conv1.bias", vec![c1]),
            ("conv2.weight", vec![c2, c1, k, k]),
            ("conv2.bias", vec![c2]),
            ("conv3.weight", vec![c3, c2, g.pool2_side, g.pool2_side]),
            ("conv3.bias", vec![c3]),
            ("fc1.weight", vec![c3, self.fc_width]),
            ("fc1.bias", vec![self.fc_width]),
            ("fc2.weight", vec![self.fc_width, self.classes]),
            ("fc2.bias", vec![self.classes]),
        ])
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum())
    }
}

pub(crate) const CONV1_W: usize = 0;
pub(crate) const CONV1_B: usize = 1;
pub(crate) const CONV2_W: usize = 2;
pub(crate) const CONV2_B: usize = 3;
pub(crate) const CONV3_W: usize = 4;
pub(crate) const CONV3_B: usize = 5;
pub(crate) const FC1_W: usize = 6;
pub(crate) const FC1_B: usize = 7;
pub(crate) const FC2_W: usize = 8;
pub(crate) const FC2_B: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Parameters of one client's classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    descriptor: ArchDescriptor,
    params: Vec<Param>,
}

impl ModelState {
    /// Builds a model from explicit tensors, checking names and shapes.
    pub fn from_params(descriptor: ArchDescriptor, params: Vec<Param>) -> Result<Self> {
        let shapes = descriptor.param_shapes()?;
        if shapes.len() != params.len() {
            return Err(Error::InvalidDescriptor(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if p.name != *name {
                return Err(Error::InvalidDescriptor(format!(
                    "expected parameter {name}, found {}",
                    p.name
                )));
            }
            p.tensor.ensure_shape("parameter", shape)?;
        }
        Ok(ModelState { descriptor, params })
    }

    pub fn zeros(descriptor: ArchDescriptor) -> Result<Self> {
        let params = descriptor
            .param_shapes()?
            .into_iter()
            .map(|(name, shape)| Param {
                name: name.to_string(),
                tensor: Tensor::zeros(&shape),
            })
            .collect();
        Ok(ModelState { descriptor, params })
    }

    pub fn descriptor(&self) -> &ArchDescriptor {
        &self.descriptor
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub(crate) fn weight(&self, idx: usize) -> &[f64] {
        self.params[idx].tensor.data()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Iterates every scalar parameter in storage order.
    pub fn flat_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.params.iter().flat_map(|p| p.tensor.data().iter().copied())
    }

    /// Bit-for-bit equality of descriptors and every parameter value.
    pub fn bit_eq(&self, other: &ModelState) -> bool {
        self.descriptor == other.descriptor
            && self.params.len() == other.params.len()
            && self
                .flat_values()
                .zip(other.flat_values())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn ensure_same_arch(&self, other: &ArchDescriptor) -> Result<()> {
        if &self.descriptor != other {
            return Err(Error::InvalidDescriptor(format!(
                "descriptor mismatch: {:?} vs {:?}",
                self.descriptor, other
            )));
        }
        Ok(())
    }
}

/// Deterministic initialization: LeCun-uniform weights, zero biases.
pub fn init_model(descriptor: ArchDescriptor, seed: u64) -> Result<ModelState> {
    let mut rng = rng::stream(seed, Purpose::Init, &[]);
    let mut model = ModelState::zeros(descriptor)?;
    for p in model.params_mut() {
        if p.name.ends_with(".bias") {
            continue;
        }
        let shape = p.tensor.shape();
        let fan_in: usize = if p.name.starts_with("fc") {
            shape[0]
        } else {
            shape[1..].iter().product()
        };
        let bound = (3.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for v in p.tensor.data_mut() {
            *v = dist.sample(&mut rng);
        }
    }
    Ok(model)
}

/// Per-parameter tensors shaped like a [`ModelState`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(model: &ModelState) -> Self {
        Gradients {
            tensors: model
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.tensor.shape()))
                .collect(),
        }
    }

    pub fn flat_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.data().iter().copied())
    }

    pub(crate) fn ensure_congruent(&self, model: &ModelState) -> Result<()> {
        if self.tensors.len() != model.params().len() {
            return Err(Error::ShapeMismatch {
                context: "gradient tensor count",
                expected: vec![model.params().len()],
                actual: vec![self.tensors.len()],
            });
        }
        for (g, p) in self.tensors.iter().zip(model.params()) {
            g.ensure_shape("gradient", p.tensor.shape())?;
        }
        Ok(())
    }
}

/// Momentum buffer for SGD; starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub tensors: Vec<Tensor>,
}

impl Velocity {
    pub fn zeros_like(model: &ModelState) -> Self {
        Velocity {
            tensors: Gradients::zeros_like(model).tensors,
        }
    }
}

/// Random uniform draw used by tests and benches to fabricate inputs.
pub fn random_batch(rng: &mut impl Rng, batch: usize, side: usize) -> Tensor {
    let data = (0..batch * side * side).map(|_| rng.random::<f64>()).collect();
    Tensor::new(vec![batch, 1, side, side], data).expect("consistent shape")
}
