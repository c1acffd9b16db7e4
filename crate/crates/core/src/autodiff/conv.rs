use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{ConvGeom, Graph, NodeId};
use super::mlp::LEAKY_SLOPE;
use super::params::{glorot, Bound, ParamSet};
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// Conv -> leaky ReLU -> 2x2 max-pool, repeated, then one dense layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStackSpec {
    pub side: usize,
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub out_dim: usize,
}

impl ConvStackSpec {
    /// 16x16 single-channel input, kernels 5/3/3 with 2/4/8 channels.
    pub fn shape_encoder(out_dim: usize) -> Self {
        Self {
            side: 16,
            in_channels: 1,
            channels: vec![2, 4, 8],
            kernels: vec![5, 3, 3],
            out_dim,
        }
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.side * self.side
    }

    fn geoms(&self) -> Vec<ConvGeom> {
        let mut side = self.side;
        let mut c_in = self.in_channels;
        self.channels
            .iter()
            .zip(&self.kernels)
            .map(|(&c_out, &k)| {
                let g = ConvGeom {
                    c_in,
                    c_out,
                    h: side,
                    w: side,
                    k,
                };
                side /= 2;
                c_in = c_out;
                g
            })
            .collect()
    }

    /// Length of the flattened feature map entering the dense layer.
    pub fn feature_len(&self) -> usize {
        let side = self.side >> self.channels.len();
        self.channels.last().copied().unwrap_or(self.in_channels) * side * side
    }
}

pub fn init_conv_stack<R: Rng + ?Sized>(
    spec: &ConvStackSpec,
    prefix: &str,
    params: &mut ParamSet,
    rng: &mut R,
) {
    for (l, g) in spec.geoms().iter().enumerate() {
        let fan_in = g.c_in * g.k * g.k;
        let fan_out = g.c_out * g.k * g.k;
        params.insert(
            format!("{prefix}.conv{l}.k"),
            glorot(rng, &[g.c_out, g.c_in, g.k, g.k], fan_in, fan_out, 1.0),
        );
        params.insert(format!("{prefix}.conv{l}.b"), Tensor::zeros(&[g.c_out]));
    }
    let f = spec.feature_len();
    params.insert(
        format!("{prefix}.fc.w"),
        glorot(rng, &[spec.out_dim, f], f, spec.out_dim, 1.0),
    );
    params.insert(format!("{prefix}.fc.b"), Tensor::zeros(&[spec.out_dim]));
}

/// Runs the stack on `[B, side * side]` grids and returns `[B, out_dim]`.
pub fn conv2d_forward(
    g: &mut Graph,
    spec: &ConvStackSpec,
    prefix: &str,
    bound: &Bound,
    x: NodeId,
) -> Result<NodeId> {
    let width = g.value(x).cols();
    if width != spec.input_len() {
        return Err(shape_err(
            format!("{prefix} input grid"),
            format!("{0}x{0}", spec.side),
            format!("{width} cells"),
        ));
    }
    let mut h = x;
    for (l, geom) in spec.geoms().into_iter().enumerate() {
        let k = bound.get(&format!("{prefix}.conv{l}.k"));
        let b = bound.get(&format!("{prefix}.conv{l}.b"));
        h = g.conv2d(h, k, b, geom);
        h = g.leaky_relu(h, LEAKY_SLOPE);
        h = g.max_pool2(h, geom.c_out, geom.h, geom.w);
    }
    let w = bound.get(&format!("{prefix}.fc.w"));
    let b = bound.get(&format!("{prefix}.fc.b"));
    Ok(g.linear(h, w, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ConvStackSpec, ParamSet) {
        let spec = ConvStackSpec::shape_encoder(8);
        let mut p = ParamSet::new();
        init_conv_stack(&spec, "e", &mut p, &mut ChaCha8Rng::seed_from_u64(3));
        // nonzero biases so the zero-input case is not trivially zero
        for (name, t) in p.iter_mut() {
            if name.ends_with(".b") {
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    *v = 0.05 * (i as f64 + 1.0);
                }
            }
        }
        (spec, p)
    }

    fn encode(spec: &ConvStackSpec, p: &ParamSet, grid: Vec<f64>) -> Vec<f64> {
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let x = g.leaf(Tensor::matrix(1, grid.len(), grid));
        let y = conv2d_forward(&mut g, spec, "e", &b, x).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn zero_grid_is_bias_only_pass() {
        let (spec, p) = setup();
        let got = encode(&spec, &p, vec![0.0; 256]);
        // With the first kernel zeroed the first layer emits only its bias,
        // whatever the input; that must match the zero-grid pass.
        let mut q = p.clone();
        q.get_mut("e.conv0.k").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut noise = vec![0.0; 256];
        noise.iter_mut().enumerate().for_each(|(i, v)| *v = (i % 7) as f64);
        assert_eq!(got, encode(&spec, &q, noise));
    }

    #[test]
    fn shifted_impulses_differ() {
        let (spec, p) = setup();
        let mut a = vec![0.0; 256];
        a[5 * 16 + 5] = 1.0;
        let mut b = vec![0.0; 256];
        b[10 * 16 + 9] = 1.0;
        let (ya, yb) = (encode(&spec, &p, a), encode(&spec, &p, b));
        let d: f64 = ya.iter().zip(&yb).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(d > 0.0);
    }

    #[test]
    fn wrong_resolution_rejected() {
        let (spec, p) = setup();
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let x = g.leaf(Tensor::zeros(&[1, 64]));
        assert!(conv2d_forward(&mut g, &spec, "e", &b, x).is_err());
    }

    #[test]
    fn feature_len_is_eight_channels_of_two_by_two() {
        assert_eq!(ConvStackSpec::shape_encoder(8).feature_len(), 32);
    }
}
