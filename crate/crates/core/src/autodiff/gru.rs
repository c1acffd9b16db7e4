use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::{glorot, Bound, ParamSet};
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// Gated recurrent unit with input width `input` and state width `hidden`.
///
/// `r = sig(Wr x + Ur h)`, `u = sig(Wu x + Uu h)`, `n = tanh(Wn x + r * (Un h))`,
/// `h' = (1 - u) * h + u * n` (biases omitted above).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruSpec {
    pub input: usize,
    pub hidden: usize,
}

pub fn init_gru<R: Rng + ?Sized>(spec: GruSpec, prefix: &str, params: &mut ParamSet, rng: &mut R) {
    let h3 = 3 * spec.hidden;
    params.insert(
        format!("{prefix}.wx"),
        glorot(rng, &[h3, spec.input], spec.input, spec.hidden, 1.0),
    );
    params.insert(
        format!("{prefix}.wh"),
        glorot(rng, &[h3, spec.hidden], spec.hidden, spec.hidden, 1.0),
    );
    params.insert(format!("{prefix}.bx"), Tensor::zeros(&[h3]));
    params.insert(format!("{prefix}.bh"), Tensor::zeros(&[h3]));
}

pub fn gru_cell_step(
    g: &mut Graph,
    spec: GruSpec,
    prefix: &str,
    bound: &Bound,
    h: NodeId,
    x: NodeId,
) -> Result<NodeId> {
    if g.value(x).cols() != spec.input {
        return Err(shape_err(format!("{prefix} input"), spec.input, g.value(x).cols()));
    }
    if g.value(h).cols() != spec.hidden {
        return Err(shape_err(format!("{prefix} state"), spec.hidden, g.value(h).cols()));
    }
    if g.value(h).rows() != g.value(x).rows() {
        return Err(shape_err(
            format!("{prefix} batch"),
            g.value(x).rows(),
            g.value(h).rows(),
        ));
    }
    let hd = spec.hidden;
    let gx = g.linear(
        x,
        bound.get(&format!("{prefix}.wx")),
        bound.get(&format!("{prefix}.bx")),
    );
    let gh = g.linear(
        h,
        bound.get(&format!("{prefix}.wh")),
        bound.get(&format!("{prefix}.bh")),
    );
    let (xr, hr) = (g.slice(gx, 0, hd), g.slice(gh, 0, hd));
    let r_pre = g.add(xr, hr);
    let r = g.sigmoid(r_pre);
    let (xu, hu) = (g.slice(gx, hd, hd), g.slice(gh, hd, hd));
    let u_pre = g.add(xu, hu);
    let u = g.sigmoid(u_pre);
    let (xn, hn) = (g.slice(gx, 2 * hd, hd), g.slice(gh, 2 * hd, hd));
    let rh = g.mul(r, hn);
    let n_pre = g.add(xn, rh);
    let n = g.tanh(n_pre);
    let diff = g.sub(n, h);
    let step = g.mul(u, diff);
    Ok(g.add(h, step))
}

/// Runs the cell over `xs` in order starting from `h0`.
pub fn gru_unroll(
    g: &mut Graph,
    spec: GruSpec,
    prefix: &str,
    bound: &Bound,
    h0: NodeId,
    xs: &[NodeId],
) -> Result<NodeId> {
    let mut h = h0;
    for &x in xs {
        h = gru_cell_step(g, spec, prefix, bound, h, x)?;
    }
    Ok(h)
}
