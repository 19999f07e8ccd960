//! A minimal feedforward network stack built around the variable projection
//! layer. Layers operate on flat `f64` vectors; multi-channel data uses
//! channel-major layout (all of channel 0, then channel 1, …).
//!
//! The variable projection layer owns two trainable parameters (translation
//! and dilation of its basis family) and maps a signal either to its
//! least-squares coefficients (`Feature` mode, m → n) or to its orthogonal
//! projection onto the basis span (`Filter` mode, m → m). Backpropagation
//! through the layer uses the analytic pseudoinverse and projector
//! derivatives from [`crate::vp`].

use crate::error::{Error, Result};
use crate::hermite::{adaptive_hermite, SampleGrid, SampledBasis, VpParams};
use crate::vp::{d_pinv, d_projection, pseudoinverse, PinvBundle};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// What the variable projection layer emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VpMode {
    /// Least-squares coefficients `c = Φ⁺x` (output length n).
    Feature,
    /// Orthogonal projection `x̂ = ΦΦ⁺x` (output length m).
    Filter,
}

/// Pooling operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Mean,
    Max,
}

/// One layer of the network.
#[derive(Debug, Clone)]
pub enum LayerSpec {
    /// Adaptive-basis variable projection over `grid` with `n` functions.
    Vp {
        mode: VpMode,
        grid: SampleGrid,
        n: usize,
    },
    /// Fully connected affine map.
    Dense { input: usize, output: usize },
    /// Elementwise rectifier (subgradient 0 at 0).
    Relu { len: usize },
    /// Numerically stable softmax.
    Softmax { len: usize },
    /// Single-channel input convolved with `channels` kernels of width
    /// `kernel`, zero-padded to keep each channel at `input_len` samples
    /// (stride 1, cross-correlation orientation).
    Conv1d {
        input_len: usize,
        channels: usize,
        kernel: usize,
    },
    /// Channel-wise pooling with non-overlapping windows of `width`;
    /// trailing samples that do not fill a window are dropped.
    Pool {
        channels: usize,
        input_len: usize,
        width: usize,
        kind: PoolKind,
    },
}

impl LayerSpec {
    pub fn input_len(&self) -> usize {
        match self {
            LayerSpec::Vp { grid, .. } => grid.len(),
            LayerSpec::Dense { input, .. } => *input,
            LayerSpec::Relu { len } | LayerSpec::Softmax { len } => *len,
            LayerSpec::Conv1d { input_len, .. } => *input_len,
            LayerSpec::Pool {
                channels,
                input_len,
                ..
            } => channels * input_len,
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            LayerSpec::Vp { mode, grid, n } => match mode {
                VpMode::Feature => *n,
                VpMode::Filter => grid.len(),
            },
            LayerSpec::Dense { output, .. } => *output,
            LayerSpec::Relu { len } | LayerSpec::Softmax { len } => *len,
            LayerSpec::Conv1d {
                input_len,
                channels,
                ..
            } => channels * input_len,
            LayerSpec::Pool {
                channels,
                input_len,
                width,
                ..
            } => channels * (input_len / width),
        }
    }

    /// Number of trainable parameters the layer owns.
    pub fn param_len(&self) -> usize {
        match self {
            LayerSpec::Vp { .. } => 2,
            LayerSpec::Dense { input, output } => output * input + output,
            LayerSpec::Conv1d {
                channels, kernel, ..
            } => channels * kernel + channels,
            _ => 0,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            LayerSpec::Vp { grid, n, .. } => {
                if *n == 0 {
                    return Err(Error::InvalidArgument(
                        "variable projection layer needs at least one basis function".into(),
                    ));
                }
                if *n > grid.len() {
                    return Err(Error::InvalidArgument(format!(
                        "basis count {} exceeds sample count {}",
                        n,
                        grid.len()
                    )));
                }
            }
            LayerSpec::Dense { input, output } => {
                if *input == 0 || *output == 0 {
                    return Err(Error::InvalidArgument(
                        "dense layer dimensions must be positive".into(),
                    ));
                }
            }
            LayerSpec::Relu { len } | LayerSpec::Softmax { len } => {
                if *len == 0 {
                    return Err(Error::InvalidArgument(
                        "activation layer length must be positive".into(),
                    ));
                }
            }
            LayerSpec::Conv1d {
                input_len,
                channels,
                kernel,
            } => {
                if *input_len == 0 || *channels == 0 || *kernel == 0 {
                    return Err(Error::InvalidArgument(
                        "convolution dimensions must be positive".into(),
                    ));
                }
                if kernel > input_len {
                    return Err(Error::InvalidArgument(format!(
                        "kernel width {kernel} exceeds input length {input_len}"
                    )));
                }
            }
            LayerSpec::Pool {
                channels,
                input_len,
                width,
                ..
            } => {
                if *channels == 0 || *input_len == 0 || *width == 0 {
                    return Err(Error::InvalidArgument(
                        "pooling dimensions must be positive".into(),
                    ));
                }
                if width > input_len {
                    return Err(Error::InvalidArgument(format!(
                        "pool width {width} exceeds channel length {input_len}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-layer data computed once per parameter update and shared across the
/// samples of a batch.
pub struct NetCaches {
    layers: Vec<LayerCache>,
}

enum LayerCache {
    None,
    Vp(Box<VpCache>),
    Dense {
        w: DMatrix<f64>,
        b: DVector<f64>,
    },
}

/// The sampled basis, its pseudoinverse, and the parameter derivative of the
/// layer's linear operator (pseudoinverse in feature mode, projector in
/// filter mode), one matrix per nonlinear parameter.
pub struct VpCache {
    pub basis: SampledBasis,
    pub bundle: PinvBundle,
    pub d_ops: [DMatrix<f64>; 2],
}

/// Intermediate activations of one forward pass: `activations[i]` is the
/// input of layer `i`, and the last entry is the network output.
pub struct Trace {
    pub activations: Vec<DVector<f64>>,
}

impl Trace {
    pub fn output(&self) -> &DVector<f64> {
        self.activations.last().expect("trace is never empty")
    }
}

/// Parameter gradients (aligned with [`Network::params`]) plus the gradient
/// with respect to the network input.
pub struct Gradients {
    pub params: Vec<DVector<f64>>,
    pub input: DVector<f64>,
}

impl Gradients {
    /// Elementwise accumulation; shapes must agree.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            *a += b;
        }
        self.input += &other.input;
    }

    pub fn scale(&mut self, factor: f64) {
        for p in &mut self.params {
            *p *= factor;
        }
        self.input *= factor;
    }
}

/// A feedforward network: a layer sequence plus one flat parameter vector
/// per layer (empty for parameterless layers).
///
/// Flattening conventions: variable projection layers store
/// `[translation, dilation]`; dense layers store the weight matrix row by
/// row followed by the biases; convolution layers store each kernel in turn
/// followed by the per-channel biases.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<LayerSpec>,
    params: Vec<DVector<f64>>,
}

impl Network {
    /// Validates the layer chain and allocates parameters: zeros everywhere
    /// except variable projection layers, which start centered on their
    /// interval with a dilation placing the basis support well inside it.
    pub fn new(layers: Vec<LayerSpec>) -> Result<Network> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        for spec in &layers {
            spec.validate()?;
        }
        for pair in layers.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            if prev.output_len() != next.input_len() {
                return Err(Error::InvalidArgument(format!(
                    "layer output length {} does not match next input length {}",
                    prev.output_len(),
                    next.input_len()
                )));
            }
        }
        let params = layers
            .iter()
            .map(|spec| match spec {
                LayerSpec::Vp { grid, .. } => {
                    let (a, b) = grid.interval();
                    DVector::from_vec(vec![(a + b) / 2.0, 12.0 / (b - a)])
                }
                other => DVector::zeros(other.param_len()),
            })
            .collect();
        Ok(Network { layers, params })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[DVector<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].input_len()
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].output_len()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(DVector::len).sum()
    }

    /// Indices of the variable projection layers.
    pub fn vp_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, LayerSpec::Vp { .. }).then_some(i))
            .collect()
    }

    /// Whether the final layer is a softmax (required by the fused
    /// cross-entropy backward pass).
    pub fn ends_in_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::Softmax { .. }))
    }

    /// Initializes dense and convolution weights uniformly in
    /// `±√(6/(fan_in + fan_out))` and biases to zero; variable projection
    /// parameters are left untouched. Deterministic in layer order.
    pub fn init_glorot<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (spec, params) in self.layers.iter().zip(self.params.iter_mut()) {
            match spec {
                LayerSpec::Dense { input, output } => {
                    let bound = (6.0 / (input + output) as f64).sqrt();
                    for o in 0..*output {
                        for i in 0..*input {
                            params[o * input + i] = rng.random_range(-bound..bound);
                        }
                    }
                    for o in 0..*output {
                        params[output * input + o] = 0.0;
                    }
                }
                LayerSpec::Conv1d {
                    channels, kernel, ..
                } => {
                    // Each output sample sees `kernel` inputs and each input
                    // feeds `channels·kernel` outputs.
                    let fan_in = *kernel;
                    let fan_out = channels * kernel;
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for c in 0..*channels {
                        for k in 0..*kernel {
                            params[c * kernel + k] = rng.random_range(-bound..bound);
                        }
                    }
                    for c in 0..*channels {
                        params[channels * kernel + c] = 0.0;
                    }
                }
                _ => {}
            }
        }
    }

    /// Builds the per-layer caches for the current parameters. Must be
    /// called again after any parameter update that touches a variable
    /// projection or weight layer.
    pub fn prepare(&self) -> Result<NetCaches> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (spec, params) in self.layers.iter().zip(&self.params) {
            let cache = match spec {
                LayerSpec::Vp { mode, grid, n } => {
                    let vp_params = VpParams::new(params[0], params[1])?;
                    let basis = adaptive_hermite(grid, *n, &vp_params)?;
                    let bundle = pseudoinverse(&basis.phi)?;
                    if bundle.rank < *n {
                        log::warn!(
                            "variable projection basis is rank deficient ({} of {n})",
                            bundle.rank
                        );
                    }
                    let d_ops = match mode {
                        VpMode::Feature => [
                            d_pinv(&bundle, &basis.dphi[0])?,
                            d_pinv(&bundle, &basis.dphi[1])?,
                        ],
                        VpMode::Filter => [
                            d_projection(&bundle, &basis.dphi[0])?,
                            d_projection(&bundle, &basis.dphi[1])?,
                        ],
                    };
                    LayerCache::Vp(Box::new(VpCache {
                        basis,
                        bundle,
                        d_ops,
                    }))
                }
                LayerSpec::Dense { input, output } => {
                    let w = DMatrix::from_fn(*output, *input, |o, i| params[o * input + i]);
                    let b = DVector::from_fn(*output, |o, _| params[output * input + o]);
                    LayerCache::Dense { w, b }
                }
                _ => LayerCache::None,
            };
            layers.push(cache);
        }
        Ok(NetCaches { layers })
    }

    /// Access to a prepared variable projection cache (for diagnostics).
    pub fn vp_cache<'a>(&self, caches: &'a NetCaches, layer: usize) -> Option<&'a VpCache> {
        match caches.layers.get(layer) {
            Some(LayerCache::Vp(cache)) => Some(cache),
            _ => None,
        }
    }

    /// Runs the network on one sample, recording every intermediate
    /// activation for the backward pass.
    pub fn forward(&self, caches: &NetCaches, x: &DVector<f64>) -> Result<Trace> {
        if x.len() != self.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} does not match network input {}",
                x.len(),
                self.input_len()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (idx, (spec, params)) in self.layers.iter().zip(&self.params).enumerate() {
            let input = &activations[idx];
            let output = match (spec, &caches.layers[idx]) {
                (LayerSpec::Vp { mode, .. }, LayerCache::Vp(cache)) => {
                    let c = &cache.bundle.pinv * input;
                    match mode {
                        VpMode::Feature => c,
                        VpMode::Filter => &cache.bundle.phi * c,
                    }
                }
                (LayerSpec::Dense { .. }, LayerCache::Dense { w, b }) => w * input + b,
                (LayerSpec::Relu { .. }, _) => input.map(|v| v.max(0.0)),
                (LayerSpec::Softmax { .. }, _) => softmax(input),
                (
                    LayerSpec::Conv1d {
                        input_len,
                        channels,
                        kernel,
                    },
                    _,
                ) => conv1d_forward(params, *input_len, *channels, *kernel, input),
                (
                    LayerSpec::Pool {
                        channels,
                        input_len,
                        width,
                        kind,
                    },
                    _,
                ) => pool_forward(*channels, *input_len, *width, *kind, input),
                _ => unreachable!("cache kind matches layer kind by construction"),
            };
            activations.push(output);
        }
        Ok(Trace { activations })
    }

    /// Backpropagates an output-side gradient through every layer, returning
    /// parameter gradients and the input gradient. Each layer applies the
    /// exact adjoint of the forward map it computed, so the result matches
    /// finite differences of the composed network to roundoff-limited
    /// precision.
    pub fn backward(
        &self,
        caches: &NetCaches,
        trace: &Trace,
        d_output: &DVector<f64>,
    ) -> Result<Gradients> {
        if d_output.len() != self.output_len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient length {} does not match network output {}",
                d_output.len(),
                self.output_len()
            )));
        }
        self.backward_from(caches, trace, d_output.clone(), self.layers.len())
    }

    /// Fused backward pass for cross-entropy on a softmax output: starts
    /// from `probs − onehot(label)` at the softmax input, which is both
    /// cheaper and better conditioned than differentiating the two steps
    /// separately.
    pub fn backward_ce(&self, caches: &NetCaches, trace: &Trace, label: usize) -> Result<Gradients> {
        if !self.ends_in_softmax() {
            return Err(Error::InvalidArgument(
                "fused cross-entropy backward needs a softmax output layer".into(),
            ));
        }
        let probs = trace.output();
        if label >= probs.len() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                probs.len()
            )));
        }
        let mut d = probs.clone();
        d[label] -= 1.0;
        self.backward_from(caches, trace, d, self.layers.len() - 1)
    }

    /// Shared reverse walk: `upstream` is the gradient at the output of
    /// layer `from − 1` (i.e. layers `from..` are already accounted for).
    fn backward_from(
        &self,
        caches: &NetCaches,
        trace: &Trace,
        mut upstream: DVector<f64>,
        from: usize,
    ) -> Result<Gradients> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::ShapeMismatch(
                "trace does not belong to this network".into(),
            ));
        }
        let mut grads: Vec<DVector<f64>> = self
            .params
            .iter()
            .map(|p| DVector::zeros(p.len()))
            .collect();
        for idx in (0..from).rev() {
            let input = &trace.activations[idx];
            let output = &trace.activations[idx + 1];
            upstream = match (&self.layers[idx], &caches.layers[idx]) {
                (LayerSpec::Vp { mode, .. }, LayerCache::Vp(cache)) => {
                    for (j, d_op) in cache.d_ops.iter().enumerate() {
                        grads[idx][j] = upstream.dot(&(d_op * input));
                    }
                    match mode {
                        VpMode::Feature => cache.bundle.pinv.tr_mul(&upstream),
                        VpMode::Filter => {
                            // Adjoint of x ↦ Φ(Φ⁺x).
                            cache.bundle.pinv.tr_mul(&cache.bundle.phi.tr_mul(&upstream))
                        }
                    }
                }
                (LayerSpec::Dense { input: ni, output: no }, LayerCache::Dense { w, .. }) => {
                    for o in 0..*no {
                        let u = upstream[o];
                        for i in 0..*ni {
                            grads[idx][o * ni + i] = u * input[i];
                        }
                        grads[idx][no * ni + o] = u;
                    }
                    w.tr_mul(&upstream)
                }
                (LayerSpec::Relu { .. }, _) => DVector::from_fn(input.len(), |i, _| {
                    if input[i] > 0.0 {
                        upstream[i]
                    } else {
                        0.0
                    }
                }),
                (LayerSpec::Softmax { .. }, _) => {
                    // d_z = y ∘ (u − ⟨u, y⟩)
                    let dot = upstream.dot(output);
                    DVector::from_fn(output.len(), |i, _| output[i] * (upstream[i] - dot))
                }
                (
                    LayerSpec::Conv1d {
                        input_len,
                        channels,
                        kernel,
                    },
                    _,
                ) => conv1d_backward(
                    &self.params[idx],
                    *input_len,
                    *channels,
                    *kernel,
                    input,
                    &upstream,
                    &mut grads[idx],
                ),
                (
                    LayerSpec::Pool {
                        channels,
                        input_len,
                        width,
                        kind,
                    },
                    _,
                ) => pool_backward(*channels, *input_len, *width, *kind, input, &upstream),
                _ => unreachable!("cache kind matches layer kind by construction"),
            };
        }
        Ok(Gradients {
            params: grads,
            input: upstream,
        })
    }
}

fn softmax(z: &DVector<f64>) -> DVector<f64> {
    let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e = z.map(|v| (v - zmax).exp());
    let sum: f64 = e.iter().sum();
    e /= sum;
    e
}

fn conv1d_forward(
    params: &DVector<f64>,
    input_len: usize,
    channels: usize,
    kernel: usize,
    x: &DVector<f64>,
) -> DVector<f64> {
    let pad = (kernel - 1) / 2;
    let mut y = DVector::zeros(channels * input_len);
    for c in 0..channels {
        let bias = params[channels * kernel + c];
        for i in 0..input_len {
            let mut acc = bias;
            for k in 0..kernel {
                let j = i + k;
                if j >= pad && j - pad < input_len {
                    acc += params[c * kernel + k] * x[j - pad];
                }
            }
            y[c * input_len + i] = acc;
        }
    }
    y
}

fn conv1d_backward(
    params: &DVector<f64>,
    input_len: usize,
    channels: usize,
    kernel: usize,
    x: &DVector<f64>,
    upstream: &DVector<f64>,
    grad: &mut DVector<f64>,
) -> DVector<f64> {
    let pad = (kernel - 1) / 2;
    let mut d_x = DVector::zeros(input_len);
    for c in 0..channels {
        let mut d_bias = 0.0;
        for i in 0..input_len {
            let u = upstream[c * input_len + i];
            d_bias += u;
            for k in 0..kernel {
                let j = i + k;
                if j >= pad && j - pad < input_len {
                    grad[c * kernel + k] += u * x[j - pad];
                    d_x[j - pad] += u * params[c * kernel + k];
                }
            }
        }
        grad[channels * kernel + c] = d_bias;
    }
    d_x
}

fn pool_forward(
    channels: usize,
    input_len: usize,
    width: usize,
    kind: PoolKind,
    x: &DVector<f64>,
) -> DVector<f64> {
    let out_len = input_len / width;
    let mut y = DVector::zeros(channels * out_len);
    for c in 0..channels {
        for o in 0..out_len {
            let start = c * input_len + o * width;
            y[c * out_len + o] = match kind {
                PoolKind::Mean => {
                    (0..width).map(|k| x[start + k]).sum::<f64>() / width as f64
                }
                PoolKind::Max => {
                    // Strict comparison keeps the lowest index on ties.
                    let mut best = x[start];
                    for k in 1..width {
                        if x[start + k] > best {
                            best = x[start + k];
                        }
                    }
                    best
                }
            };
        }
    }
    y
}

fn pool_backward(
    channels: usize,
    input_len: usize,
    width: usize,
    kind: PoolKind,
    x: &DVector<f64>,
    upstream: &DVector<f64>,
) -> DVector<f64> {
    let out_len = input_len / width;
    let mut d_x = DVector::zeros(channels * input_len);
    for c in 0..channels {
        for o in 0..out_len {
            let start = c * input_len + o * width;
            let u = upstream[c * out_len + o];
            match kind {
                PoolKind::Mean => {
                    for k in 0..width {
                        d_x[start + k] = u / width as f64;
                    }
                }
                PoolKind::Max => {
                    let mut best = 0;
                    for k in 1..width {
                        if x[start + k] > x[start + best] {
                            best = k;
                        }
                    }
                    d_x[start + best] = u;
                }
            }
        }
    }
    d_x
}
