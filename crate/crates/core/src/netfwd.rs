//! From-scratch MLP with MSE loss over a flat parameter vector.
//!
//! Provides the forward pass, gradient, Pearlmutter Hessian-vector product
//! (forward-over-reverse), and Jacobian products, all as pure functions of
//! (params, batch). Loss convention: L(θ) = (1/N) Σ_i ½‖f(θ,x_i) − y_i‖².
//! Weight decay is never part of the loss here; the trainer applies it.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::parallel::map_rows;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// Architecture description: layer sizes include input and output widths.
/// Hidden layers use `activation`; the output layer is linear.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub init_seed: u64,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, init_seed: u64) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            activation,
            init_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "MlpSpec needs at least input and output sizes".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument("layer sizes must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total parameter count: Σ (fanin·fanout + fanout).
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .collect::<Vec<_>>()
            .iter()
            .sum()
    }

    /// Byte offsets of (weight, bias) blocks per layer in the flat vector.
    /// Weights are row-major [fanin][fanout].
    pub fn layout(&self) -> Vec<(usize, usize)> {
        let mut offsets = Vec::with_capacity(self.depth());
        let mut pos = 0;
        for w in self.layer_sizes.windows(2) {
            let w_off = pos;
            pos += w[0] * w[1];
            let b_off = pos;
            pos += w[1];
            offsets.push((w_off, b_off));
        }
        offsets
    }
}

/// Flat parameter vector with the layout of an `MlpSpec`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm2(&self.values)
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        crate::linalg::dot(&self.values, &other.values)
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "ParamVector".into(),
            });
        }
        Ok(())
    }
}

/// Inputs with regression targets (one-hot rows for classification data).
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub inputs: DenseMatrix,
    pub targets: DenseMatrix,
}

impl LabeledBatch {
    pub fn new(inputs: DenseMatrix, targets: DenseMatrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::Dimension {
                context: "LabeledBatch targets".into(),
                expected: inputs.rows(),
                actual: targets.rows(),
            });
        }
        if inputs.rows() == 0 {
            return Err(Error::InvalidArgument("batch must have N >= 1".into()));
        }
        if inputs.as_slice().iter().any(|v| !v.is_finite())
            || targets.as_slice().iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                context: "LabeledBatch".into(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn n(&self) -> usize {
        self.inputs.rows()
    }
}

/// Uniform initialization on [−1/√fanin, +1/√fanin], seeded.
pub fn init_params(spec: &MlpSpec) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for w in spec.layer_sizes.windows(2) {
        let bound = 1.0 / (w[0] as f64).sqrt();
        for _ in 0..w[0] * w[1] {
            values.push(rng.gen_range(-bound..bound));
        }
        for _ in 0..w[1] {
            values.push(rng.gen_range(-bound..bound));
        }
    }
    ParamVector { values }
}

fn act(a: Activation, s: f64) -> f64 {
    match a {
        Activation::Relu => {
            if s > 0.0 {
                s
            } else {
                0.0
            }
        }
        Activation::Tanh => s.tanh(),
        Activation::Identity => s,
    }
}

/// φ'(s), expressed from pre-activation s and post-activation a.
fn act_prime(kind: Activation, s: f64, a: f64) -> f64 {
    match kind {
        Activation::Relu => {
            // Subgradient at 0 is taken to be 0.
            if s > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - a * a,
        Activation::Identity => 1.0,
    }
}

/// φ''(s). ReLU is treated piecewise-linearly: zero curvature everywhere.
fn act_second(kind: Activation, _s: f64, a: f64) -> f64 {
    match kind {
        Activation::Relu => 0.0,
        Activation::Tanh => -2.0 * a * (1.0 - a * a),
        Activation::Identity => 0.0,
    }
}

/// Cached quantities from one forward pass: post-activations per layer
/// (activations[0] is the input) and pre-activations per weight layer.
struct ForwardCache {
    activations: Vec<DenseMatrix>,
    preacts: Vec<DenseMatrix>,
}

struct Blocks<'a> {
    spec: &'a MlpSpec,
    values: &'a [f64],
    layout: Vec<(usize, usize)>,
}

impl<'a> Blocks<'a> {
    fn new(spec: &'a MlpSpec, params: &'a ParamVector) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::Dimension {
                context: "ParamVector length".into(),
                expected: spec.param_count(),
                actual: params.len(),
            });
        }
        Ok(Self {
            spec,
            values: &params.values,
            layout: spec.layout(),
        })
    }

    fn weight(&self, l: usize) -> &[f64] {
        let (w_off, b_off) = self.layout[l];
        &self.values[w_off..b_off]
    }

    fn bias(&self, l: usize) -> &[f64] {
        let (_, b_off) = self.layout[l];
        let out = self.spec.layer_sizes[l + 1];
        &self.values[b_off..b_off + out]
    }
}

/// s = a W + 1 b^T, row-parallel over samples.
fn affine(a: &DenseMatrix, w: &[f64], b: &[f64], fanin: usize, fanout: usize) -> DenseMatrix {
    let n = a.rows();
    let mut out = DenseMatrix::zeros(n, fanout);
    let a_data = a.as_slice();
    map_rows(out.as_mut_slice(), n, fanout, |i, row| {
        row.copy_from_slice(b);
        let arow = &a_data[i * fanin..(i + 1) * fanin];
        for (k, &aik) in arow.iter().enumerate() {
            if aik != 0.0 {
                let wrow = &w[k * fanout..(k + 1) * fanout];
                for (j, &wkj) in wrow.iter().enumerate() {
                    row[j] += aik * wkj;
                }
            }
        }
    });
    out
}

/// delta W^T: back-propagated signal, row-parallel over samples.
fn backprop_signal(delta: &DenseMatrix, w: &[f64], fanin: usize, fanout: usize) -> DenseMatrix {
    let n = delta.rows();
    let mut out = DenseMatrix::zeros(n, fanin);
    let d_data = delta.as_slice();
    map_rows(out.as_mut_slice(), n, fanin, |i, row| {
        let drow = &d_data[i * fanout..(i + 1) * fanout];
        for (k, r) in row.iter_mut().enumerate() {
            let wrow = &w[k * fanout..(k + 1) * fanout];
            let mut s = 0.0;
            for (j, &wkj) in wrow.iter().enumerate() {
                s += drow[j] * wkj;
            }
            *r = s;
        }
    });
    out
}

/// gW = a^T delta (fanin×fanout), parallel over fanin rows; the sample sum
/// runs in fixed order so results are deterministic.
fn weight_grad(a: &DenseMatrix, delta: &DenseMatrix, fanin: usize, fanout: usize) -> Vec<f64> {
    let n = a.rows();
    let mut gw = vec![0.0; fanin * fanout];
    let a_data = a.as_slice();
    let d_data = delta.as_slice();
    map_rows(&mut gw, fanin, fanout, |k, row| {
        for i in 0..n {
            let aik = a_data[i * fanin + k];
            if aik != 0.0 {
                let drow = &d_data[i * fanout..(i + 1) * fanout];
                for (j, r) in row.iter_mut().enumerate() {
                    *r += aik * drow[j];
                }
            }
        }
    });
    gw
}

fn column_sum(m: &DenseMatrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            s[j] += v;
        }
    }
    s
}

fn forward(params: &ParamVector, batch: &LabeledBatch, spec: &MlpSpec) -> Result<ForwardCache> {
    let blocks = Blocks::new(spec, params)?;
    if batch.inputs.cols() != spec.input_dim() {
        return Err(Error::Dimension {
            context: "batch input width".into(),
            expected: spec.input_dim(),
            actual: batch.inputs.cols(),
        });
    }
    let depth = spec.depth();
    let mut activations = Vec::with_capacity(depth + 1);
    let mut preacts = Vec::with_capacity(depth);
    activations.push(batch.inputs.clone());
    for l in 0..depth {
        let fanin = spec.layer_sizes[l];
        let fanout = spec.layer_sizes[l + 1];
        let s = affine(&activations[l], blocks.weight(l), blocks.bias(l), fanin, fanout);
        if s.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::ActivationOverflow { layer: l });
        }
        let a_out = if l + 1 == depth {
            s.clone()
        } else {
            let mut a = s.clone();
            for v in a.as_mut_slice().iter_mut() {
                *v = act(spec.activation, *v);
            }
            a
        };
        preacts.push(s);
        activations.push(a_out);
    }
    Ok(ForwardCache {
        activations,
        preacts,
    })
}

/// Backward pass from an output-space signal `delta_out` (N×C) to the flat
/// parameter gradient Jᵀ·delta_out (with the chain through activations).
fn backward(
    cache: &ForwardCache,
    blocks: &Blocks,
    spec: &MlpSpec,
    delta_out: DenseMatrix,
) -> ParamVector {
    let depth = spec.depth();
    let mut grad = vec![0.0; spec.param_count()];
    let mut delta = delta_out;
    for l in (0..depth).rev() {
        let fanin = spec.layer_sizes[l];
        let fanout = spec.layer_sizes[l + 1];
        let (w_off, b_off) = blocks.layout[l];
        let gw = weight_grad(&cache.activations[l], &delta, fanin, fanout);
        grad[w_off..w_off + fanin * fanout].copy_from_slice(&gw);
        let gb = column_sum(&delta);
        grad[b_off..b_off + fanout].copy_from_slice(&gb);
        if l > 0 {
            let mut sig = backprop_signal(&delta, blocks.weight(l), fanin, fanout);
            let a_vals = cache.activations[l].as_slice();
            let s_vals = cache.preacts[l - 1].as_slice();
            for (idx, v) in sig.as_mut_slice().iter_mut().enumerate() {
                *v *= act_prime(spec.activation, s_vals[idx], a_vals[idx]);
            }
            delta = sig;
        }
    }
    ParamVector { values: grad }
}

/// Loss and gradient of the unregularized MSE loss.
pub fn loss_and_grad(
    params: &ParamVector,
    batch: &LabeledBatch,
    spec: &MlpSpec,
) -> Result<(f64, ParamVector)> {
    let blocks = Blocks::new(spec, params)?;
    let cache = forward(params, batch, spec)?;
    let n = batch.n() as f64;
    let f = cache.activations.last().unwrap();
    let mut loss = 0.0;
    let mut delta = DenseMatrix::zeros(f.rows(), f.cols());
    for i in 0..f.rows() {
        for j in 0..f.cols() {
            let e = f.get(i, j) - batch.targets.get(i, j);
            loss += 0.5 * e * e;
            delta.set(i, j, e / n);
        }
    }
    loss /= n;
    let grad = backward(&cache, &blocks, spec, delta);
    Ok((loss, grad))
}

/// Network outputs f(θ, X) as an N×C matrix.
pub fn outputs(params: &ParamVector, batch: &LabeledBatch, spec: &MlpSpec) -> Result<DenseMatrix> {
    let cache = forward(params, batch, spec)?;
    Ok(cache.activations.last().unwrap().clone())
}

/// Tangent forward pass: directional derivative of every pre-/post-activation
/// along the parameter direction `v`.
struct TangentCache {
    r_activations: Vec<DenseMatrix>,
    r_preacts: Vec<DenseMatrix>,
}

fn tangent_forward(
    cache: &ForwardCache,
    blocks: &Blocks,
    vblocks: &Blocks,
    spec: &MlpSpec,
) -> TangentCache {
    let depth = spec.depth();
    let n = cache.activations[0].rows();
    let mut r_activations = Vec::with_capacity(depth + 1);
    let mut r_preacts = Vec::with_capacity(depth);
    r_activations.push(DenseMatrix::zeros(n, spec.input_dim()));
    for l in 0..depth {
        let fanin = spec.layer_sizes[l];
        let fanout = spec.layer_sizes[l + 1];
        // Rs = Ra_{l-1} W + a_{l-1} V + 1 vb^T
        let mut rs = affine(&r_activations[l], blocks.weight(l), &vec![0.0; fanout], fanin, fanout);
        let term2 = affine(&cache.activations[l], vblocks.weight(l), vblocks.bias(l), fanin, fanout);
        for (a, b) in rs.as_mut_slice().iter_mut().zip(term2.as_slice()) {
            *a += b;
        }
        let ra = if l + 1 == depth {
            rs.clone()
        } else {
            let mut ra = rs.clone();
            let s_vals = cache.preacts[l].as_slice();
            let a_vals = cache.activations[l + 1].as_slice();
            for (idx, v) in ra.as_mut_slice().iter_mut().enumerate() {
                *v *= act_prime(spec.activation, s_vals[idx], a_vals[idx]);
            }
            ra
        };
        r_preacts.push(rs);
        r_activations.push(ra);
    }
    TangentCache {
        r_activations,
        r_preacts,
    }
}

/// Hessian-vector product ∇²L(θ)·v of the unregularized loss
/// (forward-over-reverse / Pearlmutter pass).
pub fn hvp(
    params: &ParamVector,
    batch: &LabeledBatch,
    spec: &MlpSpec,
    v: &ParamVector,
) -> Result<ParamVector> {
    v.check_finite()?;
    let blocks = Blocks::new(spec, params)?;
    let vblocks = Blocks::new(spec, v)?;
    let cache = forward(params, batch, spec)?;
    let tangent = tangent_forward(&cache, &blocks, &vblocks, spec);

    let depth = spec.depth();
    let n = batch.n() as f64;
    let f = cache.activations.last().unwrap();

    // delta_L = (f - y)/N, R delta_L = Rf/N.
    let mut delta = DenseMatrix::zeros(f.rows(), f.cols());
    for i in 0..f.rows() {
        for j in 0..f.cols() {
            delta.set(i, j, (f.get(i, j) - batch.targets.get(i, j)) / n);
        }
    }
    let mut r_delta = tangent.r_activations[depth].clone();
    for v in r_delta.as_mut_slice().iter_mut() {
        *v /= n;
    }

    let mut out = vec![0.0; spec.param_count()];
    for l in (0..depth).rev() {
        let fanin = spec.layer_sizes[l];
        let fanout = spec.layer_sizes[l + 1];
        let (w_off, b_off) = blocks.layout[l];

        // R gW = Ra_{l-1}^T delta + a_{l-1}^T Rdelta
        let mut rgw = weight_grad(&tangent.r_activations[l], &delta, fanin, fanout);
        let rgw2 = weight_grad(&cache.activations[l], &r_delta, fanin, fanout);
        for (a, b) in rgw.iter_mut().zip(&rgw2) {
            *a += b;
        }
        out[w_off..w_off + fanin * fanout].copy_from_slice(&rgw);
        let rgb = column_sum(&r_delta);
        out[b_off..b_off + fanout].copy_from_slice(&rgb);

        if l > 0 {
            // Rdelta_{l-1} = (Rdelta W^T + delta V^T) ⊙ φ'(s)
            //              + (delta W^T) ⊙ φ''(s) ⊙ Rs
            let mut term = backprop_signal(&r_delta, blocks.weight(l), fanin, fanout);
            let term_v = backprop_signal(&delta, vblocks.weight(l), fanin, fanout);
            for (a, b) in term.as_mut_slice().iter_mut().zip(term_v.as_slice()) {
                *a += b;
            }
            let sig = backprop_signal(&delta, blocks.weight(l), fanin, fanout);

            let s_vals = cache.preacts[l - 1].as_slice();
            let a_vals = cache.activations[l].as_slice();
            let rs_vals = tangent.r_preacts[l - 1].as_slice();
            let sig_vals = sig.as_slice();
            for (idx, v) in term.as_mut_slice().iter_mut().enumerate() {
                let phi1 = act_prime(spec.activation, s_vals[idx], a_vals[idx]);
                let phi2 = act_second(spec.activation, s_vals[idx], a_vals[idx]);
                *v = *v * phi1 + sig_vals[idx] * phi2 * rs_vals[idx];
            }
            r_delta = term;

            // delta_{l-1} = (delta W^T) ⊙ φ'(s)
            let mut d = sig;
            for (idx, v) in d.as_mut_slice().iter_mut().enumerate() {
                *v *= act_prime(spec.activation, s_vals[idx], a_vals[idx]);
            }
            delta = d;
        }
    }
    Ok(ParamVector { values: out })
}

/// Jacobian-vector product: J v as a flat vector of length N·C (sample-major).
pub fn jvp(
    params: &ParamVector,
    batch: &LabeledBatch,
    spec: &MlpSpec,
    v: &ParamVector,
) -> Result<Vec<f64>> {
    v.check_finite()?;
    let blocks = Blocks::new(spec, params)?;
    let vblocks = Blocks::new(spec, v)?;
    let cache = forward(params, batch, spec)?;
    let tangent = tangent_forward(&cache, &blocks, &vblocks, spec);
    Ok(tangent.r_activations[spec.depth()].as_slice().to_vec())
}

/// Vector-Jacobian product: Jᵀ w for a flat output-space vector w of length N·C.
pub fn vjp(
    params: &ParamVector,
    batch: &LabeledBatch,
    spec: &MlpSpec,
    w: &[f64],
) -> Result<ParamVector> {
    let blocks = Blocks::new(spec, params)?;
    let cache = forward(params, batch, spec)?;
    let n = batch.n();
    let c = spec.output_dim();
    if w.len() != n * c {
        return Err(Error::Dimension {
            context: "vjp cotangent length".into(),
            expected: n * c,
            actual: w.len(),
        });
    }
    let delta = DenseMatrix::from_rows(n, c, w.to_vec())?;
    Ok(backward(&cache, &blocks, spec, delta))
}
