//! Per-feature standardisation.

use serde::{Deserialize, Serialize};

/// Features whose spread is below this are only centred.
const MIN_STD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits mean and standard deviation over `rows` (each of equal width).
    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            assert_eq!(r.len(), dim, "normalizer: row width");
            for k in 0..dim {
                sum[k] += r[k];
                sq[k] += r[k] * r[k];
            }
            n += 1;
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / nf - m * m).max(0.0).sqrt();
                if s < MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(
            x.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(v, (m, s))| (v - m) / s),
        );
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// Normalises a flat batch of rows of width `dim`.
    pub fn apply_rows(&self, flat: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(flat.len());
        for r in flat.chunks(d) {
            self.apply_into(r, &mut out);
        }
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.mean.iter().chain(&self.std).copied().collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        let d = flat.len() / 2;
        Self {
            mean: flat[..d].to_vec(),
            std: flat[d..].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_standardises() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let n = Normalizer::fit(2, rows.iter().map(|r| r.as_slice()));
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std, vec![1.0, 1.0]);
        assert_eq!(n.apply(&[3.0, 6.0]), vec![1.0, 1.0]);
        assert_eq!(n.invert(&[1.0, 1.0]), vec![3.0, 6.0]);
    }
}
