use std::hash::{Hash, Hasher};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NetworkConfig, Posteriorgram};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;

const INIT_RANGE: f64 = 0.1;
const FORGET_BIAS: f64 = 1.0;

/// One LSTM direction. Gate blocks along the `4H` axis are ordered
/// input, forget, candidate, output; pre-activations are
/// `x · w_input + h_prev · w_recurrent + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_input: Array2<f64>,
    pub w_recurrent: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LstmParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_input: Array2::zeros((input, 4 * hidden)),
            w_recurrent: Array2::zeros((hidden, 4 * hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_recurrent.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub layers: Vec<LayerParams>,
    /// `2H x (K+1)`; rows `0..H` read the forward direction.
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl NetworkParams {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let h = config.hidden_size;
        let layers = (0..config.num_layers)
            .map(|l| {
                let input = if l == 0 { config.input_dim } else { 2 * h };
                LayerParams {
                    forward: LstmParams::zeros(input, h),
                    backward: LstmParams::zeros(input, h),
                }
            })
            .collect();
        Self {
            config: config.clone(),
            layers,
            w_out: Array2::zeros((2 * h, config.output_dim)),
            b_out: Array1::zeros(config.output_dim),
        }
    }

    /// All tensors in declaration order: per layer, forward then backward
    /// direction (input weights, recurrent weights, bias), then the output
    /// projection and its bias.
    pub fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut out = Vec::with_capacity(6 * self.layers.len() + 2);
        for layer in &self.layers {
            for dir in [&layer.forward, &layer.backward] {
                out.push(dir.w_input.view().into_dyn());
                out.push(dir.w_recurrent.view().into_dyn());
                out.push(dir.bias.view().into_dyn());
            }
        }
        out.push(self.w_out.view().into_dyn());
        out.push(self.b_out.view().into_dyn());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = Vec::with_capacity(6 * self.layers.len() + 2);
        for layer in &mut self.layers {
            for dir in [&mut layer.forward, &mut layer.backward] {
                out.push(dir.w_input.view_mut().into_dyn());
                out.push(dir.w_recurrent.view_mut().into_dyn());
                out.push(dir.bias.view_mut().into_dyn());
            }
        }
        out.push(self.w_out.view_mut().into_dyn());
        out.push(self.b_out.view_mut().into_dyn());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().flat_map(|t| t.iter()).all(|v| v.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &NetworkParams) {
        for (mut a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, &b);
        }
    }

    /// Digest of every parameter bit pattern; ties a forward cache to the
    /// exact parameters that produced it.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for t in self.tensors() {
            t.shape().hash(&mut h);
            for v in t.iter() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Uniform weights in `[-0.1, 0.1]`, forget-gate biases at 1.
pub fn init_params(cfg: &NetworkConfig) -> Result<NetworkParams> {
    cfg.validate()?;
    let mut p = NetworkParams::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for mut t in p.tensors_mut() {
        t.mapv_inplace(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE));
    }
    let h = cfg.hidden_size;
    for layer in &mut p.layers {
        for dir in [&mut layer.forward, &mut layer.backward] {
            dir.bias.slice_mut(s![h..2 * h]).fill(FORGET_BIAS);
        }
    }
    Ok(p)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one direction, stored in natural time order.
#[derive(Clone, Debug)]
struct DirectionCache {
    /// Post-nonlinearity gate values `[i, f, g, o]`, `T x 4H`.
    gates: Array2<f64>,
    cells: Array2<f64>,
    hidden: Array2<f64>,
}

#[derive(Clone, Debug)]
struct LayerCache {
    input: Array2<f64>,
    forward: DirectionCache,
    backward: DirectionCache,
}

/// Everything `backward` needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    top: Array2<f64>,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn num_frames(&self) -> usize {
        self.top.nrows()
    }
}

fn time_index(step: usize, len: usize, reverse: bool) -> usize {
    if reverse {
        len - 1 - step
    } else {
        step
    }
}

fn run_direction(p: &LstmParams, x: ArrayView2<f64>, reverse: bool) -> DirectionCache {
    let t_len = x.nrows();
    let h = p.hidden_size();
    let mut gates = x.dot(&p.w_input) + &p.bias;
    let mut cells = Array2::zeros((t_len, h));
    let mut hidden = Array2::zeros((t_len, h));
    let mut h_prev = Array1::<f64>::zeros(h);
    let mut c_prev = Array1::<f64>::zeros(h);
    for step in 0..t_len {
        let t = time_index(step, t_len, reverse);
        let mut a = gates.row_mut(t);
        a += &h_prev.dot(&p.w_recurrent);
        for j in 0..h {
            let i = sigmoid(a[j]);
            let f = sigmoid(a[h + j]);
            let g = a[2 * h + j].tanh();
            let o = sigmoid(a[3 * h + j]);
            let c = f * c_prev[j] + i * g;
            a[j] = i;
            a[h + j] = f;
            a[2 * h + j] = g;
            a[3 * h + j] = o;
            c_prev[j] = c;
            h_prev[j] = o * c.tanh();
        }
        cells.row_mut(t).assign(&c_prev);
        hidden.row_mut(t).assign(&h_prev);
    }
    DirectionCache {
        gates,
        cells,
        hidden,
    }
}

fn backprop_direction(
    p: &LstmParams,
    cache: &DirectionCache,
    input: &Array2<f64>,
    d_hidden: ArrayView2<f64>,
    reverse: bool,
) -> (LstmParams, Array2<f64>) {
    let t_len = input.nrows();
    let h = p.hidden_size();
    let mut d_pre = Array2::<f64>::zeros((t_len, 4 * h));
    let mut dh_next = Array1::<f64>::zeros(h);
    let mut dc_next = Array1::<f64>::zeros(h);
    let mut h_prev_rows = Array2::<f64>::zeros((t_len, h));
    for step in (0..t_len).rev() {
        let t = time_index(step, t_len, reverse);
        let prev = (step > 0).then(|| time_index(step - 1, t_len, reverse));
        if let Some(pt) = prev {
            h_prev_rows.row_mut(t).assign(&cache.hidden.row(pt));
        }
        let gates = cache.gates.row(t);
        let mut da = d_pre.row_mut(t);
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let c = cache.cells[[t, j]];
            let c_prev = prev.map_or(0.0, |pt| cache.cells[[pt, j]]);
            let tc = c.tanh();
            let dh = d_hidden[[t, j]] + dh_next[j];
            let d_o = dh * tc;
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            da[j] = dc * g * i * (1.0 - i);
            da[h + j] = dc * c_prev * f * (1.0 - f);
            da[2 * h + j] = dc * i * (1.0 - g * g);
            da[3 * h + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        dh_next = p.w_recurrent.dot(&da);
    }
    let grads = LstmParams {
        w_input: input.t().dot(&d_pre),
        w_recurrent: h_prev_rows.t().dot(&d_pre),
        bias: d_pre.sum_axis(Axis(0)),
    };
    let d_input = d_pre.dot(&p.w_input.t());
    (grads, d_input)
}

/// Runs every layer in both time directions, projects the concatenated top
/// states and applies a row-wise softmax.
pub fn forward(p: &NetworkParams, x: &FeatureSequence) -> Result<(Posteriorgram, ForwardCache)> {
    forward_frames(p, x.frames().view())
}

pub(crate) fn forward_frames(p: &NetworkParams, x: ArrayView2<f64>) -> Result<(Posteriorgram, ForwardCache)> {
    if x.ncols() != p.config.input_dim {
        return Err(Error::DimensionMismatch {
            expected: p.config.input_dim,
            got: x.ncols(),
        });
    }
    let mut input = x.to_owned();
    let mut layers = Vec::with_capacity(p.layers.len());
    for layer in &p.layers {
        let fwd = run_direction(&layer.forward, input.view(), false);
        let bwd = run_direction(&layer.backward, input.view(), true);
        let next = concatenate(Axis(1), &[fwd.hidden.view(), bwd.hidden.view()])
            .expect("both directions have T rows");
        layers.push(LayerCache {
            input,
            forward: fwd,
            backward: bwd,
        });
        input = next;
    }
    let logits = input.dot(&p.w_out) + &p.b_out;
    let y = Posteriorgram::from_logits(&logits)?;
    Ok((
        y,
        ForwardCache {
            layers,
            top: input,
            fingerprint: p.fingerprint(),
        },
    ))
}

/// Backpropagation through time from gradients on the pre-softmax logits.
pub fn backward(p: &NetworkParams, cache: &ForwardCache, d_logits: &Array2<f64>) -> Result<NetworkParams> {
    if cache.fingerprint != p.fingerprint() || cache.layers.len() != p.layers.len() {
        return Err(Error::CacheMismatch);
    }
    if d_logits.dim() != (cache.num_frames(), p.config.output_dim) {
        return Err(Error::CacheMismatch);
    }
    let h = p.config.hidden_size;
    let mut grads = NetworkParams::zeros(&p.config);
    grads.w_out = cache.top.t().dot(d_logits);
    grads.b_out = d_logits.sum_axis(Axis(0));
    let mut d_top = d_logits.dot(&p.w_out.t());
    for (l, (layer, lc)) in p.layers.iter().zip(&cache.layers).enumerate().rev() {
        let (gf, dxf) = backprop_direction(&layer.forward, &lc.forward, &lc.input, d_top.slice(s![.., ..h]), false);
        let (gb, dxb) = backprop_direction(&layer.backward, &lc.backward, &lc.input, d_top.slice(s![.., h..]), true);
        grads.layers[l] = LayerParams {
            forward: gf,
            backward: gb,
        };
        d_top = dxf + dxb;
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok(grads)
}

/// Clips the global gradient norm to `clip_norm`, then steps
/// `p -= lr * grads`. Returns the norm before clipping.
pub fn sgd_step(p: &mut NetworkParams, grads: &NetworkParams, lr: f64, clip_norm: f64) -> Result<f64> {
    if !(lr > 0.0 && clip_norm > 0.0) {
        return Err(Error::invalid("learning rate and clip norm must be positive"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    let norm = grads.sq_norm().sqrt();
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    p.add_scaled(-lr * scale, grads);
    Ok(norm)
}
