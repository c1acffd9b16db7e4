//! Dense tensors, a reverse-mode tape, and the layers built on it.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod mlp;
pub mod params;
pub mod tensor;

pub use adam::{clip_global_norm, AdamState};
pub use conv::{conv2d_forward, init_conv_stack, ConvStackSpec};
pub use gradcheck::{finite_diff_check, finite_diff_report, rel_error, GradCheckReport};
pub use graph::{ConvGeom, Graph, NodeId};
pub use gru::{gru_cell_step, gru_unroll, init_gru, GruSpec};
pub use mlp::{
    flatten_mlp, init_mlp, mlp_apply_flat, mlp_forward, mlp_forward_external, unflatten_mlp, Activation, MlpSpec,
    LEAKY_SLOPE,
};
pub use params::{glorot, Bound, ParamSet};
pub use tensor::Tensor;
