//! 16x16 occupancy grids in the object frame.
//!
//! Cell `(i, j)` (row `i`, column `j`) has its centre at `(j - 7.5, i - 7.5)`
//! in cell units relative to the grid centre; one cell is [`CELL_SIZE`] metres.

use serde::{Deserialize, Serialize};

pub const GRID_SIDE: usize = 16;
pub const GRID_CELLS: usize = GRID_SIDE * GRID_SIDE;
pub const CELL_SIZE: f64 = 0.01;
const HALF: f64 = GRID_SIDE as f64 / 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    cells: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self::empty()
    }
}

impl Grid {
    pub fn empty() -> Self {
        Self {
            cells: vec![0.0; GRID_CELLS],
        }
    }

    pub fn from_cells(cells: Vec<f64>) -> Self {
        assert_eq!(cells.len(), GRID_CELLS, "grid must be 16x16");
        Self { cells }
    }

    /// Grid from a predicate over cell-centre coordinates (cell units).
    pub fn from_fn(mut inside: impl FnMut(f64, f64) -> bool) -> Self {
        let mut g = Self::empty();
        for i in 0..GRID_SIDE {
            for j in 0..GRID_SIDE {
                let (x, y) = cell_center(i, j);
                if inside(x, y) {
                    g.cells[i * GRID_SIDE + j] = 1.0;
                }
            }
        }
        g
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[i * GRID_SIDE + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.cells[i * GRID_SIDE + j] = v;
    }

    /// Cells with value >= 0.5.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..GRID_CELLS)
            .filter(|&k| self.cells[k] >= 0.5)
            .map(|k| (k / GRID_SIDE, k % GRID_SIDE))
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied().count()
    }

    /// Mean occupied cell centre in cell units, `None` for an empty grid.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut sx, mut sy) = (0.0, 0.0);
        for (i, j) in self.occupied() {
            let (x, y) = cell_center(i, j);
            sx += x;
            sy += y;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Whether the point `(x, y)` (cell units, grid-centred) lies in an occupied cell.
    pub fn occupied_at(&self, x: f64, y: f64) -> bool {
        let j = (x + HALF).floor();
        let i = (y + HALF).floor();
        if i < 0.0 || j < 0.0 || i >= GRID_SIDE as f64 || j >= GRID_SIDE as f64 {
            return false;
        }
        self.cells[i as usize * GRID_SIDE + j as usize] >= 0.5
    }

    /// Squared L2 distance between cell vectors.
    pub fn dist2(&self, other: &Grid) -> f64 {
        self.cells
            .iter()
            .zip(&other.cells)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    fn sample_bilinear(&self, u: f64, v: f64) -> f64 {
        // u: column coordinate, v: row coordinate, both in cell-index space
        let j0 = u.floor();
        let i0 = v.floor();
        let (fu, fv) = (u - j0, v - i0);
        let at = |i: f64, j: f64| -> f64 {
            if i < 0.0 || j < 0.0 || i >= GRID_SIDE as f64 || j >= GRID_SIDE as f64 {
                0.0
            } else {
                self.cells[i as usize * GRID_SIDE + j as usize]
            }
        };
        let top = at(i0, j0) * (1.0 - fu) + at(i0, j0 + 1.0) * fu;
        let bot = at(i0 + 1.0, j0) * (1.0 - fu) + at(i0 + 1.0, j0 + 1.0) * fu;
        top * (1.0 - fv) + bot * fv
    }
}

pub fn cell_center(i: usize, j: usize) -> (f64, f64) {
    (j as f64 - (HALF - 0.5), i as f64 - (HALF - 0.5))
}

/// Rotates a grid by `theta` (counter-clockwise) about the grid centre using
/// inverse-mapped bilinear sampling; out-of-grid samples read as 0.
pub fn rotate_grid(grid: &Grid, theta: f64) -> Grid {
    let (s, c) = theta.sin_cos();
    let mut out = Grid::empty();
    for i in 0..GRID_SIDE {
        for j in 0..GRID_SIDE {
            let (x, y) = cell_center(i, j);
            // source = R(-theta) * (x, y)
            let xs = c * x + s * y;
            let ys = -s * x + c * y;
            let v = grid.sample_bilinear(xs + (HALF - 0.5), ys + (HALF - 0.5));
            out.cells[i * GRID_SIDE + j] = v.clamp(0.0, 1.0);
        }
    }
    out
}
