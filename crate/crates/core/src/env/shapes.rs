//! Procedural shape library.
//!
//! Each shape is a kind plus two size parameters `(a, b)`: the width and
//! height of its bounding box in metres. Bar-like kinds (L, T, U, H) use a
//! bar thickness of `0.4 * min(a, b)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{Grid, CELL_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Triangle,
    L,
    T,
    U,
    H,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 7] = [
        ShapeKind::Rectangle,
        ShapeKind::Ellipse,
        ShapeKind::Triangle,
        ShapeKind::L,
        ShapeKind::T,
        ShapeKind::U,
        ShapeKind::H,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Triangle => "triangle",
            ShapeKind::L => "l",
            ShapeKind::T => "t",
            ShapeKind::U => "u",
            ShapeKind::H => "h",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub a: f64,
    pub b: f64,
}

impl ShapeSpec {
    pub const fn new(kind: ShapeKind, a: f64, b: f64) -> Self {
        Self { kind, a, b }
    }

    pub fn label(&self) -> String {
        format!(
            "{}_{:.0}x{:.0}",
            self.kind.name(),
            self.a * 100.0,
            self.b * 100.0
        )
    }

    pub fn grid(&self) -> Grid {
        shape_grid(self.kind, self.a, self.b)
    }
}

/// Rasterises a shape by testing cell centres against the outline. The
/// bounding box is centred on the grid; boundaries are exclusive.
pub fn shape_grid(kind: ShapeKind, a: f64, b: f64) -> Grid {
    let ha = a / (2.0 * CELL_SIZE);
    let hb = b / (2.0 * CELL_SIZE);
    let t = 2.0 * 0.4 * ha.min(hb);
    Grid::from_fn(|x, y| {
        if x.abs() >= ha || y.abs() >= hb {
            return false;
        }
        let left = x < -ha + t;
        let right = x > ha - t;
        let bottom = y < -hb + t;
        let top = y > hb - t;
        match kind {
            ShapeKind::Rectangle => true,
            ShapeKind::Ellipse => (x / ha).powi(2) + (y / hb).powi(2) < 1.0,
            // apex at the top, base along the bottom edge
            ShapeKind::Triangle => x.abs() < ha * (hb - y) / (2.0 * hb),
            ShapeKind::L => left || bottom,
            ShapeKind::T => top || x.abs() < t / 2.0,
            ShapeKind::U => left || right || bottom,
            ShapeKind::H => left || right || y.abs() < t / 2.0,
        }
    })
}

/// Fixed training shapes.
pub const TRAIN_SHAPES: [ShapeSpec; 12] = [
    ShapeSpec::new(ShapeKind::Rectangle, 0.10, 0.06),
    ShapeSpec::new(ShapeKind::Rectangle, 0.08, 0.08),
    ShapeSpec::new(ShapeKind::Ellipse, 0.10, 0.07),
    ShapeSpec::new(ShapeKind::Ellipse, 0.12, 0.12),
    ShapeSpec::new(ShapeKind::Triangle, 0.10, 0.08),
    ShapeSpec::new(ShapeKind::Triangle, 0.08, 0.12),
    ShapeSpec::new(ShapeKind::L, 0.10, 0.10),
    ShapeSpec::new(ShapeKind::L, 0.12, 0.08),
    ShapeSpec::new(ShapeKind::T, 0.10, 0.08),
    ShapeSpec::new(ShapeKind::T, 0.08, 0.12),
    ShapeSpec::new(ShapeKind::U, 0.12, 0.08),
    ShapeSpec::new(ShapeKind::H, 0.10, 0.10),
];

/// Held-out shapes: one per kind, with size bins absent from training.
pub const TEST_SHAPES: [ShapeSpec; 7] = [
    ShapeSpec::new(ShapeKind::Rectangle, 0.12, 0.07),
    ShapeSpec::new(ShapeKind::Ellipse, 0.08, 0.11),
    ShapeSpec::new(ShapeKind::Triangle, 0.12, 0.10),
    ShapeSpec::new(ShapeKind::L, 0.08, 0.12),
    ShapeSpec::new(ShapeKind::T, 0.12, 0.10),
    ShapeSpec::new(ShapeKind::U, 0.10, 0.10),
    ShapeSpec::new(ShapeKind::H, 0.12, 0.08),
];

/// Object size range (metres) for the shape-only stream.
pub const SIZE_RANGE: (f64, f64) = (0.07, 0.12);

/// Random shape for the shape-only autoencoding stream. Grids identical to a
/// held-out shape are rejected.
pub fn sample_aux_shape<R: Rng + ?Sized>(rng: &mut R) -> (ShapeSpec, Grid) {
    let test_grids: Vec<Grid> = TEST_SHAPES.iter().map(ShapeSpec::grid).collect();
    loop {
        let kind = ShapeKind::ALL[rng.gen_range(0..ShapeKind::ALL.len())];
        let a = rng.gen_range(SIZE_RANGE.0..SIZE_RANGE.1);
        let b = rng.gen_range(SIZE_RANGE.0..SIZE_RANGE.1);
        let spec = ShapeSpec::new(kind, a, b);
        let g = spec.grid();
        if g.occupied_count() > 0 && !test_grids.contains(&g) {
            return (spec, g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::grid::{rotate_grid, GRID_CELLS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_square_fills_interior() {
        let g = shape_grid(ShapeKind::Rectangle, 0.16, 0.16);
        assert_eq!(g.occupied_count(), GRID_CELLS);
    }

    #[test]
    fn l_shape_count_matches_enumeration() {
        // 10x8 cells, thickness 3.2 cells: three full columns and three full rows
        let g = shape_grid(ShapeKind::L, 0.10, 0.08);
        assert_eq!(g.occupied_count(), 3 * 8 + 3 * 10 - 3 * 3);
    }

    #[test]
    fn circle_survives_quarter_turn() {
        let g = shape_grid(ShapeKind::Ellipse, 0.12, 0.12);
        let r = rotate_grid(&g, std::f64::consts::FRAC_PI_2);
        assert!(g.cells().iter().zip(r.cells()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn library_grids_are_distinct_and_nonempty() {
        let all: Vec<Grid> = TRAIN_SHAPES.iter().chain(&TEST_SHAPES).map(|s| s.grid()).collect();
        for (i, a) in all.iter().enumerate() {
            assert!(a.occupied_count() > 0);
            for b in &all[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn aux_stream_never_yields_test_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let test: Vec<Grid> = TEST_SHAPES.iter().map(|s| s.grid()).collect();
        for _ in 0..300 {
            let (_, g) = sample_aux_shape(&mut rng);
            assert!(!test.contains(&g));
        }
    }
}
