//! Fully connected feedback network.
//!
//! Layer `l` maps `R^{dims[l]} -> R^{dims[l+1]}` by `z = W_l y + b_l`,
//! followed by the hidden activation on every layer but the last, whose
//! activation is the identity. All parameters live in one flat vector,
//! layer by layer, each layer's weight matrix (row-major, `out × in`)
//! followed by its bias.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dynamics::{FeatureSet, FeedbackPolicy};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn_acc};
use crate::rng::{Purpose, SeededStream};
use crate::scalar::Real;

/// Rows per batched network call. Fixed so that every row sees the same
/// kernel path independent of thread count.
pub(crate) const BATCH_ROWS: usize = 128;

pub const DEFAULT_HIDDEN: usize = 110;
pub const DEFAULT_HIDDEN_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn slope_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::invalid(
                "activation",
                format!("unknown activation `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy<T> {
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<T>,
}

/// Post-activation outputs of every layer for one batch; `acts[0]` is the
/// input and `acts[L]` the network output.
#[derive(Debug, Default)]
pub(crate) struct ForwardCache<T> {
    acts: Vec<Vec<T>>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl<T: Real> MlpPolicy<T> {
    pub fn zeros(dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(
                "dims",
                format!("need at least two positive layer widths, got {dims:?}"),
            ));
        }
        let params = vec![T::zero(); param_count(&dims)];
        Ok(Self {
            dims,
            activation,
            params,
        })
    }

    /// Glorot-uniform weights `U(-l, l)`, `l = sqrt(6 / (fan_in + fan_out))`,
    /// and zero biases.
    pub fn init(dims: Vec<usize>, activation: Activation, stream: &SeededStream) -> Result<Self> {
        let mut out = Self::zeros(dims, activation)?;
        for l in 0..out.num_layers() {
            let (fan_in, fan_out) = (out.dims[l], out.dims[l + 1]);
            let limit = T::lit((6.0 / (fan_in + fan_out) as f64).sqrt());
            let off = out.weight_offset(l);
            let w = &mut out.params[off..off + fan_in * fan_out];
            for (r, row) in w.chunks_exact_mut(fan_in).enumerate() {
                stream.fill_uniform(Purpose::Weights, l as u64, r as u32, row);
                for z in row.iter_mut() {
                    *z = (T::lit(2.0) * *z - T::one()) * limit;
                }
            }
        }
        Ok(out)
    }

    /// `[input, hidden × layers, output]` network.
    pub fn standard(
        input: usize,
        output: usize,
        hidden: usize,
        layers: usize,
        activation: Activation,
        stream: &SeededStream,
    ) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, layers));
        dims.push(output);
        Self::init(dims, activation, stream)
    }

    pub fn from_params(dims: Vec<usize>, activation: Activation, params: Vec<T>) -> Result<Self> {
        let mut out = Self::zeros(dims, activation)?;
        if params.len() != out.params.len() {
            return Err(Error::ShapeMismatch {
                what: "parameter vector",
                expected: out.params.len(),
                got: params.len(),
            });
        }
        out.params = params;
        Ok(out)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn weight_offset(&self, layer: usize) -> usize {
        param_count(&self.dims[..=layer])
    }

    pub fn bias_offset(&self, layer: usize) -> usize {
        self.weight_offset(layer) + self.dims[layer] * self.dims[layer + 1]
    }

    pub fn weight(&self, layer: usize) -> &[T] {
        let off = self.weight_offset(layer);
        &self.params[off..off + self.dims[layer] * self.dims[layer + 1]]
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        let off = self.bias_offset(layer);
        &self.params[off..off + self.dims[layer + 1]]
    }

    /// Evaluates the network on one input.
    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                what: "network input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut cache = ForwardCache::default();
        self.forward_cached(input, 1, &mut cache);
        Ok(cache.acts.pop().unwrap())
    }

    /// Batched forward pass over `rows` inputs, filling `cache`.
    pub(crate) fn forward_cached(&self, inputs: &[T], rows: usize, cache: &mut ForwardCache<T>) {
        let layers = self.num_layers();
        cache.acts.resize_with(layers + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(&inputs[..rows * self.dims[0]]);
        for l in 0..layers {
            let (fin, fout) = (self.dims[l], self.dims[l + 1]);
            let (done, rest) = cache.acts.split_at_mut(l + 1);
            let prev = &done[l];
            let z = &mut rest[0];
            z.clear();
            let bias = self.bias(l);
            for _ in 0..rows {
                z.extend_from_slice(bias);
            }
            gemm_nt(rows, fin, fout, prev, self.weight(l), T::one(), z);
            if l + 1 < layers {
                let act = self.activation;
                z.iter_mut().for_each(|v| *v = act.apply(*v));
            }
        }
    }

    /// Batched forward pass in fixed-size blocks, possibly in parallel.
    pub fn forward_batch(&self, inputs: &[T], rows: usize) -> Vec<T> {
        let (fin, fout) = (self.input_dim(), self.output_dim());
        let mut out = vec![T::zero(); rows * fout];
        out.par_chunks_mut(BATCH_ROWS * fout)
            .zip(inputs[..rows * fin].par_chunks(BATCH_ROWS * fin))
            .for_each_init(ForwardCache::default, |cache, (o, x)| {
                let r = x.len() / fin;
                self.forward_cached(x, r, cache);
                o.copy_from_slice(&cache.acts[self.num_layers()]);
            });
        out
    }

    /// Reverse pass for a batch whose forward pass is in `cache`.
    ///
    /// Adds `d(loss)/d(params)` to `grad` given `d_out = d(loss)/d(output)`,
    /// and writes `d(loss)/d(input)` into `d_in` when requested.
    pub(crate) fn backward_cached(
        &self,
        cache: &ForwardCache<T>,
        rows: usize,
        d_out: &[T],
        grad: &mut [T],
        d_in: Option<&mut [T]>,
    ) {
        let layers = self.num_layers();
        let mut delta = d_out[..rows * self.output_dim()].to_vec();
        let mut prev_delta = Vec::new();
        let mut d_in = d_in;
        for l in (0..layers).rev() {
            let (fin, fout) = (self.dims[l], self.dims[l + 1]);
            let input = &cache.acts[l];
            let woff = self.weight_offset(l);
            let boff = self.bias_offset(l);
            gemm_tn_acc(
                fout,
                rows,
                fin,
                &delta,
                input,
                &mut grad[woff..woff + fin * fout],
            );
            let gb = &mut grad[boff..boff + fout];
            for row in delta.chunks_exact(fout) {
                for (g, &dv) in gb.iter_mut().zip(row) {
                    *g = *g + dv;
                }
            }
            if l == 0 {
                if let Some(out) = d_in.take() {
                    gemm_nn(
                        rows,
                        fout,
                        fin,
                        &delta,
                        self.weight(0),
                        &mut out[..rows * fin],
                    );
                }
                break;
            }
            prev_delta.resize(rows * fin, T::zero());
            gemm_nn(rows, fout, fin, &delta, self.weight(l), &mut prev_delta);
            let act = self.activation;
            for (dv, &y) in prev_delta.iter_mut().zip(input) {
                *dv = *dv * act.slope_from_output(y);
            }
            std::mem::swap(&mut delta, &mut prev_delta);
        }
    }

    /// Text checkpoint: header lines, then one parameter per line in
    /// exponent notation (round-trips exactly).
    ///
    /// ```text
    /// mfc-policy 1
    /// dims 2 110 110 1
    /// activation relu
    /// params 12541
    /// 1.2345e-1
    /// ...
    /// ```
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::with_capacity(self.params.len() * 24 + 64);
        s.push_str("mfc-policy 1\n");
        s.push_str("dims");
        for d in &self.dims {
            s.push_str(&format!(" {d}"));
        }
        s.push('\n');
        s.push_str(&format!("activation {}\n", self.activation));
        s.push_str(&format!("params {}\n", self.params.len()));
        for p in &self.params {
            s.push_str(&format!("{p:e}\n"));
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("mfc-policy 1") {
            return Err(bad("missing `mfc-policy 1` header"));
        }
        let dims: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("dims "))
            .ok_or_else(|| bad("missing dims line"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad layer width")))
            .collect::<Result<_>>()?;
        let activation: Activation = lines
            .next()
            .and_then(|l| l.strip_prefix("activation "))
            .ok_or_else(|| bad("missing activation line"))?
            .trim()
            .parse()?;
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("params "))
            .ok_or_else(|| bad("missing params line"))?
            .trim()
            .parse()
            .map_err(|_| bad("bad parameter count"))?;
        let params: Vec<T> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<T>()
                    .map_err(|_| bad("bad parameter value"))
            })
            .collect::<Result<_>>()?;
        if params.len() != count {
            return Err(bad("parameter count does not match header"));
        }
        Self::from_params(dims, activation, params)
    }

    pub(crate) fn features_for(&self, d: usize) -> Result<FeatureSet> {
        FeatureSet::from_input_dim(self.input_dim(), d).ok_or(Error::ShapeMismatch {
            what: "policy input (expected d+1 or 2d+1)",
            expected: d + 1,
            got: self.input_dim(),
        })
    }
}

impl<T: Real> FeedbackPolicy<T> for MlpPolicy<T> {
    fn controls(&self, t: T, grid: &TimeGrid<T>, e: &Ensemble<T>) -> Result<Vec<T>> {
        let features = self.features_for(e.dim())?;
        if self.output_dim() != e.dim() {
            return Err(Error::ShapeMismatch {
                what: "policy output",
                expected: e.dim(),
                got: self.output_dim(),
            });
        }
        let inputs = features.batch(grid, t, e);
        Ok(self.forward_batch(&inputs, e.len()))
    }
}
