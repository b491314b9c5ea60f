//! Parameter storage, layer building blocks and the per-forward runtime that
//! binds stored parameters into a graph.

use ndarray::{Array1, Array4, ArrayD, Ix1};
use rand::Rng;

use super::graph::{Graph, NodeId};
use super::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferId(usize);

/// Owns every trainable parameter and non-trainable buffer (running
/// statistics) of a model, in registration order.
pub struct ParamStore<T: Scalar> {
    params: Vec<ArrayD<T>>,
    names: Vec<String>,
    buffers: Vec<ArrayD<T>>,
    buffer_names: Vec<String>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            names: Vec::new(),
            buffers: Vec::new(),
            buffer_names: Vec::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        self.params.push(value);
        self.names.push(name.into());
        ParamId(self.params.len() - 1)
    }

    pub fn register_buffer(&mut self, name: impl Into<String>, value: ArrayD<T>) -> BufferId {
        self.buffers.push(value);
        self.buffer_names.push(name.into());
        BufferId(self.buffers.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, id: ParamId) -> &ArrayD<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[ArrayD<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ArrayD<T>] {
        &mut self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn buffers(&self) -> &[ArrayD<T>] {
        &self.buffers
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffer_names
    }

    pub fn buffer(&self, id: BufferId) -> &ArrayD<T> {
        &self.buffers[id.0]
    }

    pub fn set_buffer(&mut self, id: BufferId, value: ArrayD<T>) {
        self.buffers[id.0] = value;
    }

    pub fn set_buffer_raw(&mut self, index: usize, value: ArrayD<T>) {
        self.buffers[index] = value;
    }

    pub fn set_param_raw(&mut self, index: usize, value: ArrayD<T>) {
        self.params[index] = value;
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }
}

/// Binds stored parameters into a graph for one forward/backward pass.
///
/// `training` selects batch statistics in normalization layers and records
/// running-statistic updates; `trainable` marks parameter leaves as requiring
/// gradients.
pub struct Runtime<'s, T: Scalar> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    bound: Vec<Option<NodeId>>,
    buffer_updates: Vec<(BufferId, ArrayD<T>)>,
    pub training: bool,
    trainable: bool,
}

impl<'s, T: Scalar> Runtime<'s, T> {
    pub fn new(store: &'s ParamStore<T>, training: bool, trainable: bool) -> Self {
        Self {
            graph: Graph::new(),
            bound: vec![None; store.len()],
            buffer_updates: Vec::new(),
            store,
            training,
            trainable,
        }
    }

    /// Leaf node for a parameter, bound once per runtime.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.bound[id.0] {
            return node;
        }
        let node = self.graph.leaf(self.store.param(id).clone(), self.trainable);
        self.bound[id.0] = Some(node);
        node
    }

    pub fn buffer1(&self, id: BufferId) -> Array1<T> {
        self.store
            .buffer(id)
            .view()
            .into_dimensionality::<Ix1>()
            .expect("buffer rank-1")
            .to_owned()
    }

    pub fn record_buffer(&mut self, id: BufferId, value: Array1<T>) {
        self.buffer_updates.push((id, value.into_dyn()));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(BufferId, ArrayD<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Gradients in parameter order after a backward pass; `None` for
    /// parameters that did not participate.
    pub fn param_grads(&self) -> Vec<Option<ArrayD<T>>> {
        self.bound
            .iter()
            .map(|slot| slot.and_then(|node| self.graph.grad(node).cloned()))
            .collect()
    }
}

fn uniform_array<T: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> ArrayD<T> {
    ArrayD::from_shape_simple_fn(shape.to_vec(), || {
        T::from_f64(rng.gen_range(-bound..=bound))
    })
}

/// 2-D convolution layer (square kernel).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_c * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let w = store.register(format!("{name}.w"), uniform_array(&[out_c, in_c, k, k], bound, rng));
        let b = store.register(format!("{name}.b"), ArrayD::zeros(vec![out_c]));
        Self { w, b, stride, pad }
    }

    pub fn forward<T: Scalar>(&self, rt: &mut Runtime<'_, T>, x: NodeId) -> NodeId {
        let w = rt.param(self.w);
        let b = rt.param(self.b);
        rt.graph.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Fully connected layer: x [n, in] -> [n, out].
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = store.register(format!("{name}.w"), uniform_array(&[in_dim, out_dim], bound, rng));
        let b = store.register(format!("{name}.b"), uniform_array(&[out_dim], bound, rng));
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, rt: &mut Runtime<'_, T>, x: NodeId) -> NodeId {
        let w = rt.param(self.w);
        let b = rt.param(self.b);
        let mm = rt.graph.matmul(x, w);
        rt.graph.add_bias(mm, b)
    }
}

/// Batch normalization over (N, H, W) per channel with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let gamma = store.register(format!("{name}.gamma"), ArrayD::ones(vec![channels]));
        let beta = store.register(format!("{name}.beta"), ArrayD::zeros(vec![channels]));
        let running_mean =
            store.register_buffer(format!("{name}.running_mean"), ArrayD::zeros(vec![channels]));
        let running_var =
            store.register_buffer(format!("{name}.running_var"), ArrayD::ones(vec![channels]));
        Self {
            gamma,
            beta,
            running_mean,
            running_var,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward<T: Scalar>(&self, rt: &mut Runtime<'_, T>, x: NodeId) -> NodeId {
        let gamma = rt.param(self.gamma);
        let beta = rt.param(self.beta);
        let mean = rt.buffer1(self.running_mean);
        let var = rt.buffer1(self.running_var);
        let training = rt.training;
        let (out, stats) = rt.graph.batch_norm(
            x,
            gamma,
            beta,
            (&mean, &var),
            T::from_f64(self.eps),
            training,
        );
        if let Some((batch_mean, batch_var)) = stats {
            let mom = T::from_f64(self.momentum);
            let keep = T::one() - mom;
            let new_mean = mean.mapv(|v| v * keep) + batch_mean.mapv(|v| v * mom);
            let new_var = var.mapv(|v| v * keep) + batch_var.mapv(|v| v * mom);
            rt.record_buffer(self.running_mean, new_mean);
            rt.record_buffer(self.running_var, new_var);
        }
        out
    }
}

/// Apply recorded running-statistic updates back onto the store after a
/// training forward pass.
pub fn apply_buffer_updates<T: Scalar>(
    store: &mut ParamStore<T>,
    updates: Vec<(BufferId, ArrayD<T>)>,
) {
    for (id, value) in updates {
        store.set_buffer(id, value);
    }
}

/// Convert a batch of CHW images into one NCHW leaf array.
pub fn stack_images<T: Scalar>(images: &[ndarray::Array3<f32>]) -> Array4<T> {
    let (c, h, w) = images[0].dim();
    let mut out = Array4::zeros((images.len(), c, h, w));
    for (n, img) in images.iter().enumerate() {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[(n, ci, y, x)] = T::from_f64(img[(ci, y, x)] as f64);
                }
            }
        }
    }
    out
}
