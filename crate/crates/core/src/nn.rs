//! Parameterized layers over the autodiff graph.
//!
//! Each layer registers its tensors in a [`ParamStore`] under a dotted name
//! prefix and exposes a `forward` that records ops on a [`Graph`]. Layers
//! hold only parameter ids, so one layer instance can serve many graphs.

use rand::Rng;

use crate::graph::{Graph, Value};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Uniform(-limit, limit) tensor, the default weight init.
pub fn uniform_tensor(rng: &mut impl Rng, shape: Vec<usize>, limit: f32) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f32> = (0..numel).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, data)
}

fn fan_in_limit(fan_in: usize) -> f32 {
    1.0 / (fan_in as f32).sqrt()
}

/// Affine map x·W (+ b) with W stored (in_dim × out_dim).
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        Self::with_bias(store, rng, name, in_dim, out_dim, true)
    }

    /// `bias: false` for maps where a bias would be inert (e.g. attention
    /// key projections, where softmax cancels constant row shifts).
    pub fn with_bias(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let limit = fan_in_limit(in_dim);
        let w = store.register(
            format!("{name}.w"),
            uniform_tensor(rng, vec![in_dim, out_dim], limit),
        );
        let b = bias.then(|| store.register(format!("{name}.b"), Tensor::zeros(&[out_dim])));
        Linear { w, b, in_dim, out_dim }
    }

    /// x (rows × in_dim) → (rows × out_dim).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Value {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_bias_rows(y, b)
            }
            None => y,
        }
    }
}

/// 2-d convolution layer; weight stored (cout × cin·kh·kw).
pub struct Conv2dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let limit = fan_in_limit(cin * kernel * kernel);
        let w = store.register(
            format!("{name}.w"),
            uniform_tensor(rng, vec![cout, cin * kernel * kernel], limit),
        );
        let b = store.register(format!("{name}.b"), Tensor::zeros(&[cout]));
        Conv2dLayer {
            w,
            b,
            kh: kernel,
            kw: kernel,
            stride,
            pad,
        }
    }

    /// x (cin × h × w) → (cout × oh × ow).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Value {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv2d(x, w, b, self.kh, self.kw, self.stride, self.pad)
    }
}

/// Per-row layer normalization with learned gain and bias.
pub struct LayerNormLayer {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.register(format!("{name}.gain"), Tensor::full(&[dim], 1.0));
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[dim]));
        LayerNormLayer { gain, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Value {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, 1e-5)
    }
}

/// Lookup table of n vectors of width dim.
pub struct EmbeddingTable {
    pub table: ParamId,
    pub n: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        n: usize,
        dim: usize,
    ) -> Self {
        let limit = fan_in_limit(dim);
        let table = store.register(
            format!("{name}.table"),
            uniform_tensor(rng, vec![n, dim], limit),
        );
        EmbeddingTable { table, n, dim }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Value {
        let table = g.param(store, self.table);
        g.gather_rows(table, ids)
    }
}
