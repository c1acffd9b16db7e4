use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{affine_row, Graph, NodeId};
use super::params::{glorot, Bound, ParamSet};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Slope used for the negative half of leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => x,
        }
    }

    /// Scalar version, identical to the graph op.
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Fully connected network: `layer_sizes = [d_in, h_1, ..., d_out]`, the
/// activation follows every layer except the last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("zero-width layer in {layer_sizes:?}")));
        }
        Ok(Self {
            layer_sizes,
            activation,
        })
    }

    pub fn leaky(layer_sizes: Vec<usize>) -> Result<Self> {
        Self::new(layer_sizes, Activation::LeakyRelu)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn hidden(&self) -> &[usize] {
        &self.layer_sizes[1..self.layer_sizes.len() - 1]
    }

    /// `(n_in, n_out)` of every layer.
    pub fn layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_sizes.windows(2).map(|w| (w[0], w[1]))
    }

    /// Number of scalars in the flat weight layout: per layer `W` (row-major
    /// `[out, in]`) followed by `b`.
    pub fn param_count(&self) -> usize {
        self.layers().map(|(i, o)| i * o + o).sum()
    }

    /// Offsets of each layer inside the flat layout.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers()
            .map(|(i, o)| {
                let here = off;
                off += i * o + o;
                here
            })
            .collect()
    }
}

pub fn weight_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.l{layer}.w")
}

pub fn bias_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.l{layer}.b")
}

/// Initialises `W_i`, `b_i` for every layer under `prefix`. The last layer's
/// weights are multiplied by `out_gain`.
pub fn init_mlp<R: Rng + ?Sized>(
    spec: &MlpSpec,
    prefix: &str,
    params: &mut ParamSet,
    rng: &mut R,
    out_gain: f64,
) {
    let n = spec.n_layers();
    for (l, (i, o)) in spec.layers().enumerate() {
        let gain = if l + 1 == n { out_gain } else { 1.0 };
        params.insert(weight_name(prefix, l), glorot(rng, &[o, i], i, o, gain));
        params.insert(bias_name(prefix, l), Tensor::zeros(&[o]));
    }
}

/// Forward pass with parameters bound from a [`ParamSet`].
pub fn mlp_forward(
    g: &mut Graph,
    spec: &MlpSpec,
    prefix: &str,
    bound: &Bound,
    x: NodeId,
) -> Result<NodeId> {
    let width = g.value(x).cols();
    if width != spec.input_dim() {
        return Err(shape_err(format!("{prefix} input"), spec.input_dim(), width));
    }
    let n = spec.n_layers();
    let mut h = x;
    for (l, (i, o)) in spec.layers().enumerate() {
        let (wn, bn) = (weight_name(prefix, l), bias_name(prefix, l));
        let w = bound
            .try_get(&wn)
            .ok_or_else(|| shape_err(format!("{prefix} layer {l}"), &wn, "missing"))?;
        let b = bound
            .try_get(&bn)
            .ok_or_else(|| shape_err(format!("{prefix} layer {l}"), &bn, "missing"))?;
        if g.value(w).shape() != [o, i] {
            return Err(shape_err(
                format!("{prefix} layer {l} weight"),
                format!("[{o}, {i}]"),
                format!("{:?}", g.value(w).shape()),
            ));
        }
        if g.value(b).len() != o {
            return Err(shape_err(format!("{prefix} layer {l} bias"), o, g.value(b).len()));
        }
        h = g.linear(h, w, b);
        if l + 1 < n {
            h = spec.activation.apply(g, h);
        }
    }
    Ok(h)
}

/// Forward pass whose weights come from a flat node (`[1, P]` shared or
/// `[B, P]` per-sample), so gradients reach whatever produced them.
pub fn mlp_forward_external(
    g: &mut Graph,
    spec: &MlpSpec,
    flat: NodeId,
    x: NodeId,
) -> Result<NodeId> {
    let p = g.value(flat).cols();
    if p != spec.param_count() {
        return Err(Error::WeightCount {
            expected: spec.param_count(),
            actual: p,
        });
    }
    let width = g.value(x).cols();
    if width != spec.input_dim() {
        return Err(shape_err("external MLP input", spec.input_dim(), width));
    }
    let wr = g.value(flat).rows();
    if wr != 1 && wr != g.value(x).rows() {
        return Err(shape_err("external MLP weight rows", g.value(x).rows(), wr));
    }
    let n = spec.n_layers();
    let mut h = x;
    for (l, ((i, o), off)) in spec.layers().zip(spec.layer_offsets()).enumerate() {
        h = g.linear_ext(h, flat, off, i, o);
        if l + 1 < n {
            h = spec.activation.apply(g, h);
        }
    }
    Ok(h)
}

/// Graph-free forward pass over row-major `x` (`rows x input_dim`) with a
/// single flat weight vector. Matches [`mlp_forward_external`] bit for bit.
pub fn mlp_apply_flat(spec: &MlpSpec, flat: &[f64], x: &[f64]) -> Vec<f64> {
    assert_eq!(flat.len(), spec.param_count(), "mlp_apply_flat: weight count");
    let d_in = spec.input_dim();
    assert_eq!(x.len() % d_in, 0, "mlp_apply_flat: input width");
    let rows = x.len() / d_in;
    let n = spec.n_layers();
    let mut h = x.to_vec();
    for (l, ((i, o), off)) in spec.layers().zip(spec.layer_offsets()).enumerate() {
        let w = &flat[off..off + o * i];
        let b = &flat[off + o * i..off + o * i + o];
        let mut next = vec![0.0; rows * o];
        for r in 0..rows {
            affine_row(&h[r * i..(r + 1) * i], w, b, &mut next[r * o..(r + 1) * o]);
        }
        if l + 1 < n {
            next.iter_mut().for_each(|v| *v = spec.activation.eval(*v));
        }
        h = next;
    }
    h
}

/// Flat weight vector of an MLP stored in `params` under `prefix`.
pub fn flatten_mlp(spec: &MlpSpec, prefix: &str, params: &ParamSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(spec.param_count());
    for l in 0..spec.n_layers() {
        for name in [weight_name(prefix, l), bias_name(prefix, l)] {
            let t = params
                .get(&name)
                .ok_or_else(|| shape_err("flatten_mlp", &name, "missing"))?;
            out.extend_from_slice(t.data());
        }
    }
    Ok(out)
}

/// Splits a flat weight vector into `W_i`, `b_i` tensors under `prefix`.
pub fn unflatten_mlp(spec: &MlpSpec, prefix: &str, flat: &[f64]) -> Result<ParamSet> {
    if flat.len() != spec.param_count() {
        return Err(Error::WeightCount {
            expected: spec.param_count(),
            actual: flat.len(),
        });
    }
    let mut ps = ParamSet::new();
    let mut off = 0;
    for (l, (i, o)) in spec.layers().enumerate() {
        let w = flat[off..off + i * o].to_vec();
        off += i * o;
        let b = flat[off..off + o].to_vec();
        off += o;
        ps.insert(weight_name(prefix, l), Tensor::matrix(o, i, w));
        ps.insert(bias_name(prefix, l), Tensor::vector(b));
    }
    Ok(ps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(spec: &MlpSpec, params: &ParamSet, x: Vec<f64>) -> Vec<f64> {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let n = x.len();
        let xi = g.leaf(Tensor::matrix(1, n, x));
        let y = mlp_forward(&mut g, spec, "f", &b, xi).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn identity_single_weight() {
        let spec = MlpSpec::new(vec![1, 1], Activation::Identity).unwrap();
        let mut p = ParamSet::new();
        p.insert("f.l0.w", Tensor::matrix(1, 1, vec![1.0]));
        p.insert("f.l0.b", Tensor::vector(vec![0.0]));
        assert_eq!(run(&spec, &p, vec![3.5]), vec![3.5]);
    }

    #[test]
    fn affine_two_inputs() {
        let spec = MlpSpec::new(vec![2, 1], Activation::Identity).unwrap();
        let mut p = ParamSet::new();
        p.insert("f.l0.w", Tensor::matrix(1, 2, vec![1.0, 1.0]));
        p.insert("f.l0.b", Tensor::vector(vec![0.5]));
        assert_eq!(run(&spec, &p, vec![1.0, 2.0]), vec![3.5]);
    }

    #[test]
    fn two_layer_matches_straight_line_evaluation() {
        let spec = MlpSpec::leaky(vec![2, 3, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = ParamSet::new();
        init_mlp(&spec, "f", &mut p, &mut rng, 1.0);
        p.insert("f.l0.b", Tensor::vector(vec![0.1, -0.3, 0.2]));
        p.insert("f.l1.b", Tensor::vector(vec![-0.05]));
        let x = [0.4, -1.3];
        let w0 = p.get("f.l0.w").unwrap().data();
        let b0 = p.get("f.l0.b").unwrap().data();
        let w1 = p.get("f.l1.w").unwrap().data();
        let b1 = p.get("f.l1.b").unwrap().data();
        let mut expect = b1[0];
        for j in 0..3 {
            let pre = w0[j * 2] * x[0] + w0[j * 2 + 1] * x[1] + b0[j];
            let act = if pre > 0.0 { pre } else { 0.01 * pre };
            expect += w1[j] * act;
        }
        let got = run(&spec, &p, x.to_vec());
        assert!((got[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn external_affine() {
        let spec = MlpSpec::new(vec![1, 1], Activation::Identity).unwrap();
        let mut g = Graph::new();
        let w = g.leaf(Tensor::matrix(1, 2, vec![2.0, 1.0]));
        let x = g.leaf(Tensor::matrix(1, 1, vec![3.0]));
        let y = mlp_forward_external(&mut g, &spec, w, x).unwrap();
        assert_eq!(g.value(y).data(), &[7.0]);
    }

    #[test]
    fn external_length_mismatch_reports_counts() {
        let spec = MlpSpec::leaky(vec![2, 3, 2]).unwrap();
        let mut g = Graph::new();
        let w = g.leaf(Tensor::matrix(1, 5, vec![0.0; 5]));
        let x = g.leaf(Tensor::matrix(1, 2, vec![0.0; 2]));
        match mlp_forward_external(&mut g, &spec, w, x) {
            Err(Error::WeightCount { expected, actual }) => {
                assert_eq!((expected, actual), (17, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_layer_is_named() {
        let spec = MlpSpec::leaky(vec![2, 3, 1]).unwrap();
        let mut p = ParamSet::new();
        p.insert("f.l0.w", Tensor::zeros(&[3, 2]));
        p.insert("f.l0.b", Tensor::zeros(&[3]));
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let x = g.leaf(Tensor::zeros(&[1, 2]));
        let err = mlp_forward(&mut g, &spec, "f", &b, x).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn wrong_input_width_rejected() {
        let spec = MlpSpec::leaky(vec![2, 1]).unwrap();
        let mut p = ParamSet::new();
        init_mlp(&spec, "f", &mut p, &mut ChaCha8Rng::seed_from_u64(0), 1.0);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let x = g.leaf(Tensor::zeros(&[1, 3]));
        assert!(mlp_forward(&mut g, &spec, "f", &b, x).is_err());
    }

    #[test]
    fn leaky_relu_values() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.0, 1.0, -1.0]));
        let y = g.leaky_relu(x, LEAKY_SLOPE);
        assert_eq!(g.value(y).data(), &[0.0, 1.0, -0.01]);
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::leaky(vec![3]).is_err());
        assert!(MlpSpec::leaky(vec![3, 0, 1]).is_err());
    }
}
