//! Interaction and shape encoders, and the shape decoder.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{
    conv2d_forward, flatten_mlp, init_conv_stack, init_mlp, mlp_apply_flat, mlp_forward, Bound,
    ConvStackSpec, Graph, MlpSpec, NodeId, ParamSet, Tensor,
};
use crate::env::{rotate_grid, Grid, GRID_CELLS, THETA_INDEX};
use crate::error::{shape_err, Error, Result};
use crate::model::{Context, Item};
use crate::norm::Normalizer;

pub const EINT: &str = "eint";
pub const EVIS: &str = "evis";
pub const DECODER: &str = "dec";

/// Shape codes kept per encoded context before the cache is reset.
const CODE_CACHE: usize = 4096;

/// MLP over a flattened window of `k` interaction steps.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionEncoder {
    pub spec: MlpSpec,
    pub k: usize,
    pub step_dim: usize,
}

impl InteractionEncoder {
    pub fn new(k: usize, step_dim: usize, hidden: &[usize], z_dim: usize) -> Result<Self> {
        let mut sizes = vec![k * step_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(z_dim);
        Ok(Self {
            spec: MlpSpec::leaky(sizes)?,
            k,
            step_dim,
        })
    }

    pub fn window_len(&self) -> usize {
        self.k * self.step_dim
    }

    pub fn z_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        init_mlp(&self.spec, EINT, params, rng, 1.0);
    }

    /// `[B, k * step_dim]` windows to `[B, z_int]`.
    pub fn encode(&self, g: &mut Graph, bound: &Bound, window: NodeId) -> Result<NodeId> {
        let w = g.value(window).cols();
        if w != self.window_len() {
            return Err(shape_err(
                "interaction window",
                format!("{} steps x {}", self.k, self.step_dim),
                format!("{w} values"),
            ));
        }
        mlp_forward(g, &self.spec, EINT, bound, window)
    }
}

/// Conv stack over the oriented 16x16 occupancy grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeEncoder {
    pub spec: ConvStackSpec,
}

impl ShapeEncoder {
    pub fn new(z_dim: usize) -> Self {
        Self {
            spec: ConvStackSpec::shape_encoder(z_dim),
        }
    }

    pub fn z_dim(&self) -> usize {
        self.spec.out_dim
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        init_conv_stack(&self.spec, EVIS, params, rng);
    }

    /// `[B, 256]` grids to `[B, z_vis]`.
    pub fn encode(&self, g: &mut Graph, bound: &Bound, grids: NodeId) -> Result<NodeId> {
        conv2d_forward(g, &self.spec, EVIS, bound, grids)
    }
}

/// MLP from `z_vis` back to 256 unconstrained cell values.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeDecoder {
    pub spec: MlpSpec,
}

impl ShapeDecoder {
    pub fn new(z_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            spec: MlpSpec::leaky(vec![z_dim, hidden, GRID_CELLS])?,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        init_mlp(&self.spec, DECODER, params, rng, 1.0);
    }

    pub fn decode(&self, g: &mut Graph, bound: &Bound, z_vis: NodeId) -> Result<NodeId> {
        mlp_forward(g, &self.spec, DECODER, bound, z_vis)
    }
}

/// Mean squared reconstruction error against the oriented input grids.
pub fn recon_loss(g: &mut Graph, decoded: NodeId, grids: NodeId) -> NodeId {
    g.mse(decoded, grids)
}

/// `z = [z_int, z_vis]`; locomotion passes `z_int` alone.
pub fn assemble_latent(g: &mut Graph, z_int: NodeId, z_vis: Option<NodeId>) -> NodeId {
    match z_vis {
        Some(v) => g.concat(&[z_int, v]),
        None => z_int,
    }
}

/// The complete observation encoder of a model: interaction branch, optional
/// shape branch, optional reconstruction decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemEncoder {
    pub eint: InteractionEncoder,
    pub evis: Option<ShapeEncoder>,
    pub dec: Option<ShapeDecoder>,
    /// Feed the canonical grid instead of the re-oriented one.
    pub canonical: bool,
}

/// Graph nodes produced while encoding a batch.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub z: NodeId,
    pub z_vis: Option<NodeId>,
    pub grids: Option<NodeId>,
}

impl SystemEncoder {
    pub fn z_dim(&self) -> usize {
        self.eint.z_dim() + self.evis.as_ref().map_or(0, ShapeEncoder::z_dim)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        self.eint.init(params, rng);
        if let Some(e) = &self.evis {
            e.init(params, rng);
        }
        if let Some(d) = &self.dec {
            d.init(params, rng);
        }
    }

    pub fn shape_input(&self, grid: &Grid, theta: f64) -> Grid {
        if self.canonical {
            grid.clone()
        } else {
            rotate_grid(grid, theta)
        }
    }

    /// Whether the code depends on the current orientation.
    pub fn oriented(&self) -> bool {
        self.evis.is_some() && !self.canonical
    }

    /// `z` for every item of a batch, `[B, z_dim]`.
    pub fn encode_items(
        &self,
        g: &mut Graph,
        bound: &Bound,
        items: &[Item],
        wnorm: &Normalizer,
    ) -> Result<Encoded> {
        let k = self.eint.k;
        let windows: Vec<Vec<f64>> = items.iter().map(|it| wnorm.apply(&it.ctx.flat_window(k))).collect();
        let wn = g.leaf(Tensor::from_rows(&windows));
        let z_int = self.eint.encode(g, bound, wn)?;
        let Some(enc) = &self.evis else {
            return Ok(Encoded {
                z: z_int,
                z_vis: None,
                grids: None,
            });
        };
        let mut cells = Vec::with_capacity(items.len() * GRID_CELLS);
        for it in items {
            let grid = context_grid(&it.ctx)?;
            cells.extend_from_slice(self.shape_input(grid, it.state[THETA_INDEX]).cells());
        }
        let gn = g.leaf(Tensor::matrix(items.len(), GRID_CELLS, cells));
        let zv = enc.encode(g, bound, gn)?;
        Ok(Encoded {
            z: assemble_latent(g, z_int, Some(zv)),
            z_vis: Some(zv),
            grids: Some(gn),
        })
    }

    /// Reconstruction loss of the batch grids, averaged with that of the
    /// shape-only grids when any are given. `None` without a decoder.
    pub fn aux_loss(
        &self,
        g: &mut Graph,
        bound: &Bound,
        enc: &Encoded,
        aux_grids: &[Grid],
    ) -> Result<Option<NodeId>> {
        let (Some(dec), Some(evis), Some(zv), Some(grids)) = (&self.dec, &self.evis, enc.z_vis, enc.grids) else {
            return Ok(None);
        };
        let r = dec.decode(g, bound, zv)?;
        let mut aux = recon_loss(g, r, grids);
        if !aux_grids.is_empty() {
            let cells: Vec<f64> = aux_grids.iter().flat_map(|gr| gr.cells().iter().copied()).collect();
            let ag = g.leaf(Tensor::matrix(aux_grids.len(), GRID_CELLS, cells));
            let za = evis.encode(g, bound, ag)?;
            let ra = dec.decode(g, bound, za)?;
            let extra = recon_loss(g, ra, ag);
            let s = g.add(aux, extra);
            aux = g.scale(s, 0.5);
        }
        Ok(Some(aux))
    }

    /// Graph-free encoding of one context for inference.
    pub fn encode_context(&self, params: &ParamSet, ctx: &Context, wnorm: &Normalizer) -> Result<ContextCode> {
        let window = wnorm.apply(&ctx.flat_window(self.eint.k));
        let flat = flatten_mlp(&self.eint.spec, EINT, params)?;
        let grid = match self.evis {
            Some(_) => Some(context_grid(ctx)?.clone()),
            None => None,
        };
        Ok(ContextCode {
            z_int: mlp_apply_flat(&self.eint.spec, &flat, &window),
            grid,
            evis: params.with_prefix(EVIS),
            z_vis: HashMap::new(),
        })
    }

    /// `z_vis` of one grid.
    pub fn shape_code(&self, evis_params: &ParamSet, grid: &Grid) -> Result<Vec<f64>> {
        let enc = self
            .evis
            .as_ref()
            .ok_or_else(|| Error::Config("model has no shape encoder".into()))?;
        let mut g = Graph::new();
        let b = evis_params.bind(&mut g);
        let x = g.leaf(Tensor::matrix(1, GRID_CELLS, grid.cells().to_vec()));
        let z = enc.encode(&mut g, &b, x)?;
        Ok(g.value(z).data().to_vec())
    }
}

fn context_grid(ctx: &Context) -> Result<&Grid> {
    ctx.grid
        .as_ref()
        .ok_or_else(|| Error::Config("pushing context without a shape grid".into()))
}

/// Encoded context; shape codes are memoised per orientation.
#[derive(Clone, Debug)]
pub struct ContextCode {
    pub z_int: Vec<f64>,
    grid: Option<Grid>,
    evis: ParamSet,
    z_vis: HashMap<u64, Vec<f64>>,
}

impl ContextCode {
    /// `z` at orientation `theta`.
    pub fn z(&mut self, enc: &SystemEncoder, theta: f64) -> Result<Vec<f64>> {
        let mut z = self.z_int.clone();
        if let Some(grid) = &self.grid {
            let key = if enc.canonical { 0 } else { theta.to_bits() };
            if !self.z_vis.contains_key(&key) {
                if self.z_vis.len() >= CODE_CACHE {
                    self.z_vis.clear();
                }
                let code = enc.shape_code(&self.evis, &enc.shape_input(grid, theta))?;
                self.z_vis.insert(key, code);
            }
            z.extend_from_slice(&self.z_vis[&key]);
        }
        Ok(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::env::{rotate_grid, shape_grid, ShapeKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn encode_grid(enc: &ShapeEncoder, p: &ParamSet, cells: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let x = g.leaf(Tensor::matrix(1, GRID_CELLS, cells.to_vec()));
        let z = enc.encode(&mut g, &b, x).unwrap();
        g.value(z).data().to_vec()
    }

    #[test]
    fn zero_params_give_output_bias() {
        let enc = InteractionEncoder::new(5, 18, &[8], 2).unwrap();
        let mut p = ParamSet::new();
        enc.init(&mut p, &mut rng());
        for (name, t) in p.iter_mut() {
            let last_bias = name == "eint.l1.b";
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = if last_bias { 0.5 + i as f64 } else { 0.0 };
            }
        }
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let w = g.leaf(Tensor::matrix(1, 90, vec![0.3; 90]));
        let z = enc.encode(&mut g, &b, w).unwrap();
        assert_eq!(g.value(z).data(), &[0.5, 1.5]);
    }

    #[test]
    fn window_length_is_checked() {
        let enc = InteractionEncoder::new(5, 18, &[8], 2).unwrap();
        let mut p = ParamSet::new();
        enc.init(&mut p, &mut rng());
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let w = g.leaf(Tensor::matrix(1, 72, vec![0.0; 72]));
        assert!(enc.encode(&mut g, &b, w).is_err());
    }

    #[test]
    fn interaction_encoder_is_order_sensitive() {
        let enc = InteractionEncoder::new(5, 4, &[8], 2).unwrap();
        let mut p = ParamSet::new();
        enc.init(&mut p, &mut rng());
        let mut r = rng();
        let w: Vec<f64> = (0..20).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut swapped = w.clone();
        for i in 0..4 {
            swapped.swap(4 + i, 8 + i);
        }
        let run = |x: Vec<f64>| {
            let mut g = Graph::new();
            let b = p.bind(&mut g);
            let n = g.leaf(Tensor::matrix(1, 20, x));
            let z = enc.encode(&mut g, &b, n).unwrap();
            g.value(z).data().to_vec()
        };
        assert_ne!(run(w), run(swapped));
    }

    #[test]
    fn unrotated_grid_encodes_identically() {
        let enc = ShapeEncoder::new(8);
        let mut p = ParamSet::new();
        enc.init(&mut p, &mut rng());
        let grid = shape_grid(ShapeKind::L, 0.1, 0.12);
        let a = encode_grid(&enc, &p, grid.cells());
        let b = encode_grid(&enc, &p, rotate_grid(&grid, 0.0).cells());
        assert_eq!(a, b);
    }

    #[test]
    fn circle_code_survives_quarter_turns() {
        let enc = ShapeEncoder::new(8);
        let mut p = ParamSet::new();
        enc.init(&mut p, &mut rng());
        let grid = shape_grid(ShapeKind::Ellipse, 0.12, 0.12);
        let base = encode_grid(&enc, &p, grid.cells());
        for k in 1..4 {
            let th = k as f64 * std::f64::consts::FRAC_PI_2;
            let z = encode_grid(&enc, &p, rotate_grid(&grid, th).cells());
            for (a, b) in base.iter().zip(&z) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reconstruction_loss_arithmetic() {
        let grid = shape_grid(ShapeKind::T, 0.1, 0.1);
        let mut g = Graph::new();
        let t = g.leaf(Tensor::matrix(1, GRID_CELLS, grid.cells().to_vec()));
        let same = g.leaf(Tensor::matrix(1, GRID_CELLS, grid.cells().to_vec()));
        let half = g.leaf(Tensor::matrix(1, GRID_CELLS, vec![0.5; GRID_CELLS]));
        let l0 = recon_loss(&mut g, same, t);
        let l1 = recon_loss(&mut g, half, t);
        assert_eq!(g.value(l0).data()[0], 0.0);
        assert!((g.value(l1).data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn latent_dims() {
        let mut g = Graph::new();
        let zi = g.leaf(Tensor::matrix(3, 2, vec![0.0; 6]));
        let zv = g.leaf(Tensor::matrix(3, 8, vec![0.0; 24]));
        let z = assemble_latent(&mut g, zi, Some(zv));
        assert_eq!(g.value(z).shape(), &[3, 10]);
        assert_eq!(assemble_latent(&mut g, zi, None), zi);
    }
}
