//! Analytic toy worlds: planar pushing and 1-D locomotion.

pub mod collect;
pub mod grid;
pub mod loco;
pub mod push;
pub mod shapes;

pub use collect::*;
pub use grid::{rotate_grid, Grid, CELL_SIZE, GRID_CELLS, GRID_SIDE};
pub use loco::*;
pub use push::*;
pub use shapes::*;
