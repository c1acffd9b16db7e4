//! The hypernetwork and the HyperDynamics model built around it.
//!
//! `z = [E_int(window), E_vis(rotate(grid, theta))]` is mapped by an MLP to
//! the complete flat weight vector of a dynamics MLP, which then predicts the
//! state delta from the orientation-free state and the action. For pushing
//! the weights are regenerated whenever the orientation changes; for
//! locomotion one `z` (and one generated expert) serves the whole horizon.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    flatten_mlp, glorot, init_mlp, mlp_apply_flat, mlp_forward, mlp_forward_external, Bound, Graph,
    MlpSpec, NodeId, ParamSet, Tensor,
};
use crate::encoders::{
    ContextCode, Encoded, InteractionEncoder, ShapeDecoder, ShapeEncoder, SystemEncoder, DECODER,
    EVIS,
};
use crate::env::{obs_of, EnvKind, Grid, THETA_INDEX};
use crate::error::{shape_err, Error, Result};
use crate::model::{
    prediction_loss, Batch, Context, DynamicsModel, Item, Losses, Method, Model, Norms, Objective,
};
use crate::norm::Normalizer;

pub const HYPER: &str = "hyper";

/// Generated experts kept per prepared system before the cache is reset.
const WEIGHT_CACHE: usize = 512;

/// Number of weights and biases of an MLP.
pub fn param_count(spec: &MlpSpec) -> usize {
    spec.param_count()
}

/// Pushing expert: orientation-free state (7) + action (2) -> full delta (8).
pub fn push_target(hidden: &[usize]) -> Result<MlpSpec> {
    let mut s = vec![9];
    s.extend_from_slice(hidden);
    s.push(8);
    MlpSpec::leaky(s)
}

/// Locomotion expert: `(x, v, a)` -> `(dx, dv)`.
pub fn loco_target(hidden: &[usize]) -> Result<MlpSpec> {
    let mut s = vec![3];
    s.extend_from_slice(hidden);
    s.push(2);
    MlpSpec::leaky(s)
}

/// `[|z|, hidden, param_count(target)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperNet {
    pub spec: MlpSpec,
}

impl HyperNet {
    pub fn new(z_dim: usize, hidden: usize, target: &MlpSpec) -> Result<Self> {
        Ok(Self {
            spec: MlpSpec::leaky(vec![z_dim, hidden, param_count(target)])?,
        })
    }

    /// Output weights are scaled by 0.1; the output bias starts at a Glorot
    /// draw of the target network, so the initial experts are ordinary
    /// freshly initialised MLPs with a small `z`-dependent perturbation.
    pub fn init<R: Rng + ?Sized>(&self, target: &MlpSpec, params: &mut ParamSet, rng: &mut R) {
        init_mlp(&self.spec, HYPER, params, rng, 0.1);
        let mut flat = Vec::with_capacity(param_count(target));
        for (i, o) in target.layers() {
            flat.extend_from_slice(glorot(rng, &[o, i], i, o, 1.0).data());
            flat.extend(std::iter::repeat(0.0).take(o));
        }
        let last = self.spec.n_layers() - 1;
        params.insert(format!("{HYPER}.l{last}.b"), Tensor::vector(flat));
    }

    /// `[B, |z|]` codes to `[B, P]` flat expert weights.
    pub fn generate_weights(&self, g: &mut Graph, bound: &Bound, z: NodeId) -> Result<NodeId> {
        let d = g.value(z).cols();
        if d != self.spec.input_dim() {
            return Err(shape_err("latent code", self.spec.input_dim(), d));
        }
        mlp_forward(g, &self.spec, HYPER, bound, z)
    }
}

/// Runs the generated expert(s) `w` on inputs `x`.
pub fn predict_delta(g: &mut Graph, target: &MlpSpec, w: NodeId, x: NodeId) -> Result<NodeId> {
    mlp_forward_external(g, target, w, x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub env: EnvKind,
    pub k: usize,
    pub eint_hidden: Vec<usize>,
    pub z_int: usize,
    /// 0 disables the shape branch (locomotion).
    pub z_vis: usize,
    pub hyper_hidden: usize,
    pub target_hidden: Vec<usize>,
    pub decoder_hidden: usize,
    pub use_decoder: bool,
    /// Feed the canonical grid and put the orientation into the expert's
    /// input instead of re-orienting the grid.
    pub canonical_shape: bool,
    pub aux_weight: f64,
    pub objective: Objective,
}

impl HyperConfig {
    pub fn push_default() -> Self {
        Self {
            env: EnvKind::Push,
            k: 5,
            eint_hidden: vec![8],
            z_int: 2,
            z_vis: 8,
            hyper_hidden: 16,
            target_hidden: vec![32, 32, 32],
            decoder_hidden: 128,
            use_decoder: true,
            canonical_shape: false,
            aux_weight: 1.0,
            objective: Objective::Mse,
        }
    }

    pub fn loco_default(env: EnvKind) -> Self {
        Self {
            env,
            k: 16,
            eint_hidden: vec![32, 32],
            z_int: 2,
            z_vis: 0,
            hyper_hidden: 16,
            target_hidden: vec![32, 32],
            decoder_hidden: 0,
            use_decoder: false,
            canonical_shape: false,
            aux_weight: 0.0,
            objective: Objective::Mse,
        }
    }

    /// Expert input width.
    pub fn target_in(&self) -> usize {
        match self.env {
            EnvKind::Push if self.canonical_shape => 11,
            EnvKind::Push => 9,
            _ => 3,
        }
    }

    pub fn target_spec(&self) -> Result<MlpSpec> {
        let mut s = vec![self.target_in()];
        s.extend_from_slice(&self.target_hidden);
        s.push(self.env.state_dim());
        MlpSpec::leaky(s)
    }

    pub fn z_dim(&self) -> usize {
        self.z_int + self.z_vis
    }

    /// Checks the branch layout against the environment.
    pub fn validate(&self) -> Result<()> {
        if self.env == EnvKind::Push && self.z_vis == 0 {
            return Err(Error::Config("pushing needs z_vis > 0".into()));
        }
        if self.env != EnvKind::Push && self.z_vis != 0 {
            return Err(Error::Config("locomotion has no shape branch; set z_vis = 0".into()));
        }
        if self.k == 0 || self.z_int == 0 {
            return Err(Error::Config("k and z_int must be positive".into()));
        }
        Ok(())
    }

    pub fn system_encoder(&self) -> Result<SystemEncoder> {
        let eint = InteractionEncoder::new(self.k, self.env.window_step_dim(), &self.eint_hidden, self.z_int)?;
        let evis = (self.z_vis > 0).then(|| ShapeEncoder::new(self.z_vis));
        let dec = if evis.is_some() && self.use_decoder {
            Some(ShapeDecoder::new(self.z_vis, self.decoder_hidden)?)
        } else {
            None
        };
        Ok(SystemEncoder {
            eint,
            evis,
            dec,
            canonical: self.canonical_shape,
        })
    }
}

struct Prepared {
    code: ContextCode,
    hyper_flat: Vec<f64>,
    weights: HashMap<u64, Arc<Vec<f64>>>,
}

pub struct HyperDynamics {
    pub cfg: HyperConfig,
    pub encoder: SystemEncoder,
    pub hyper: HyperNet,
    pub target: MlpSpec,
    pub params: ParamSet,
    pub norms: Norms,
    prepared: Option<Prepared>,
}

impl HyperDynamics {
    pub fn new<R: Rng + ?Sized>(cfg: HyperConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let target = cfg.target_spec()?;
        let encoder = cfg.system_encoder()?;
        let hyper = HyperNet::new(cfg.z_dim(), cfg.hyper_hidden, &target)?;
        let mut params = ParamSet::new();
        encoder.init(&mut params, rng);
        hyper.init(&target, &mut params, rng);
        let norms = Norms::identity(cfg.target_in(), cfg.env.state_dim(), encoder.eint.window_len());
        Ok(Self {
            cfg,
            encoder,
            hyper,
            target,
            params,
            norms,
            prepared: None,
        })
    }

    /// Raw expert input for a state/action pair.
    pub fn target_input(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut x = match self.cfg.env {
            EnvKind::Push => {
                let mut o = obs_of(state);
                if self.cfg.canonical_shape {
                    let th = state[THETA_INDEX];
                    o.push(th.cos());
                    o.push(th.sin());
                }
                o
            }
            _ => state.to_vec(),
        };
        x.extend_from_slice(action);
        x
    }

    /// Normalised predictions `[B, state_dim]` for a batch, as a graph node.
    pub fn forward_batch(&self, g: &mut Graph, bound: &Bound, items: &[Item]) -> Result<(NodeId, Encoded)> {
        let enc = self.encoder.encode_items(g, bound, items, &self.norms.w)?;
        let w = self.hyper.generate_weights(g, bound, enc.z)?;
        let xs: Vec<Vec<f64>> = items
            .iter()
            .map(|it| self.norms.x.apply(&self.target_input(&it.state, &it.action)))
            .collect();
        let x = g.leaf(Tensor::from_rows(&xs));
        Ok((predict_delta(g, &self.target, w, x)?, enc))
    }

    fn weights_for(&mut self, theta: f64) -> Result<Arc<Vec<f64>>> {
        let key = if self.encoder.oriented() { theta.to_bits() } else { 0 };
        let prep = self
            .prepared
            .as_mut()
            .ok_or_else(|| Error::Config("model used before prepare()".into()))?;
        if let Some(w) = prep.weights.get(&key) {
            return Ok(w.clone());
        }
        let z = prep.code.z(&self.encoder, theta)?;
        let w = Arc::new(mlp_apply_flat(&self.hyper.spec, &prep.hyper_flat, &z));
        if prep.weights.len() >= WEIGHT_CACHE {
            prep.weights.clear();
        }
        prep.weights.insert(key, w.clone());
        Ok(w)
    }

    /// Generated expert weights for the prepared system at orientation `theta`.
    pub fn expert_weights(&mut self, theta: f64) -> Result<Vec<f64>> {
        Ok(self.weights_for(theta)?.as_ref().clone())
    }

    /// `z_vis` for one grid.
    pub fn shape_code(&self, grid: &Grid) -> Result<Vec<f64>> {
        self.encoder.shape_code(&self.params.with_prefix(EVIS), grid)
    }

    /// Decoded grid values for a shape code.
    pub fn decode(&self, z_vis: &[f64]) -> Result<Vec<f64>> {
        let dec = self
            .encoder
            .dec
            .as_ref()
            .ok_or_else(|| Error::Config("model has no decoder".into()))?;
        let flat = flatten_mlp(&dec.spec, DECODER, &self.params)?;
        Ok(mlp_apply_flat(&dec.spec, &flat, z_vis))
    }

    /// `z_int` of the prepared system.
    pub fn z_int(&self) -> Option<&[f64]> {
        self.prepared.as_ref().map(|p| p.code.z_int.as_slice())
    }
}

impl DynamicsModel for HyperDynamics {
    fn prepare(&mut self, ctx: &Context) -> Result<()> {
        self.prepared = Some(Prepared {
            code: self.encoder.encode_context(&self.params, ctx, &self.norms.w)?,
            hyper_flat: flatten_mlp(&self.hyper.spec, HYPER, &self.params)?,
            weights: HashMap::new(),
        });
        Ok(())
    }

    fn predict(&mut self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(states.len());
        if !self.encoder.oriented() {
            let w = self.weights_for(0.0)?;
            let mut x = Vec::with_capacity(states.len() * self.cfg.target_in());
            for (s, a) in states.iter().zip(actions) {
                self.norms.x.apply_into(&self.target_input(s, a), &mut x);
            }
            let y = mlp_apply_flat(&self.target, &w, &x);
            for r in y.chunks(self.target.output_dim()) {
                out.push(self.norms.y.invert(r));
            }
        } else {
            for (s, a) in states.iter().zip(actions) {
                let w = self.weights_for(s[THETA_INDEX])?;
                let x = self.norms.x.apply(&self.target_input(s, a));
                out.push(self.norms.y.invert(&mlp_apply_flat(&self.target, &w, &x)));
            }
        }
        Ok(out)
    }
}

impl Model for HyperDynamics {
    fn method(&self) -> Method {
        Method::Hyperdynamics
    }

    fn env(&self) -> EnvKind {
        self.cfg.env
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        self.prepared = None;
        &mut self.params
    }

    fn fit_normalizers(&mut self, items: &[Item]) {
        let xs: Vec<Vec<f64>> = items.iter().map(|it| self.target_input(&it.state, &it.action)).collect();
        let ws: Vec<Vec<f64>> = items.iter().map(|it| it.ctx.flat_window(self.cfg.k)).collect();
        self.norms.x = Normalizer::fit(self.cfg.target_in(), xs.iter().map(Vec::as_slice));
        self.norms.y = Normalizer::fit(self.cfg.env.state_dim(), items.iter().map(|it| it.delta.as_slice()));
        self.norms.w = Normalizer::fit(self.encoder.eint.window_len(), ws.iter().map(Vec::as_slice));
        self.prepared = None;
    }

    fn loss(&self, g: &mut Graph, bound: &Bound, batch: &Batch) -> Result<Losses> {
        if batch.items.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let (pred, enc) = self.forward_batch(g, bound, &batch.items)?;
        let ys: Vec<Vec<f64>> = batch.items.iter().map(|it| self.norms.y.apply(&it.delta)).collect();
        let y = g.leaf(Tensor::from_rows(&ys));
        let pred_loss = prediction_loss(g, pred, y, self.cfg.objective);
        let aux = self.encoder.aux_loss(g, bound, &enc, &batch.aux_grids)?;
        let total = match aux {
            Some(a) => {
                let weighted = g.scale(a, self.cfg.aux_weight);
                g.add(pred_loss, weighted)
            }
            None => pred_loss,
        };
        Ok(Losses {
            total: Some(total),
            pred: Some(pred_loss),
            aux,
        })
    }

    fn aux_state(&self) -> ParamSet {
        self.norms.to_params("norm")
    }

    fn load_aux_state(&mut self, state: &ParamSet) -> Result<()> {
        self.prepared = None;
        self.norms.from_params("norm", state)
    }

    fn forward_hidden(&self) -> Vec<usize> {
        self.target.hidden().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn paper_target_param_counts() {
        assert_eq!(param_count(&push_target(&[32, 32, 32]).unwrap()), 2696);
        assert_eq!(param_count(&loco_target(&[128, 128]).unwrap()), 17282);
        assert_eq!(param_count(&MlpSpec::leaky(vec![1, 1]).unwrap()), 2);
    }

    #[test]
    fn zero_hyper_params_emit_output_bias() {
        let target = MlpSpec::leaky(vec![2, 3, 1]).unwrap();
        let h = HyperNet::new(4, 5, &target).unwrap();
        let mut p = ParamSet::new();
        h.init(&target, &mut p, &mut ChaCha8Rng::seed_from_u64(0));
        let bias = p.get("hyper.l1.b").unwrap().data().to_vec();
        for (name, t) in p.iter_mut() {
            if name != "hyper.l1.b" {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let z = g.leaf(Tensor::matrix(1, 4, vec![0.7, -0.2, 0.1, 3.0]));
        let w = h.generate_weights(&mut g, &b, z).unwrap();
        assert_eq!(g.value(w).data(), bias.as_slice());
        assert_eq!(bias.len(), param_count(&target));
    }

    #[test]
    fn latent_width_is_checked() {
        let target = MlpSpec::leaky(vec![2, 1]).unwrap();
        let h = HyperNet::new(4, 5, &target).unwrap();
        let mut p = ParamSet::new();
        h.init(&target, &mut p, &mut ChaCha8Rng::seed_from_u64(0));
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let z = g.leaf(Tensor::matrix(1, 3, vec![0.0; 3]));
        assert!(h.generate_weights(&mut g, &b, z).is_err());
    }
}
