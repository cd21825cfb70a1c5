//! Reproducible random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::matrix::{Matrix, Scalar};

/// Seed plus stream index. Equal pairs reproduce equal sample sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSeed {
    pub seed: u64,
    pub stream: u64,
}

impl RandomSeed {
    pub const fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// A sibling stream, used to give independent draws to Q, K and V or to
    /// individual Monte-Carlo trials.
    pub const fn derive(self, offset: u64) -> Self {
        Self {
            seed: self.seed,
            stream: self
                .stream
                .wrapping_mul(0x9E37_79B9)
                .wrapping_add(offset)
                .wrapping_add(1),
        }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// `n × d` matrix of i.i.d. standard normals.
pub fn sample_gaussian<T: Scalar>(n: usize, d: usize, seed: RandomSeed) -> Matrix<T> {
    let mut rng = seed.rng();
    Matrix::from_fn(n, d, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)))
}

/// `n × d` matrix of i.i.d. uniforms on `[lo, hi)`.
pub fn sample_uniform<T: Scalar>(
    n: usize,
    d: usize,
    lo: f64,
    hi: f64,
    seed: RandomSeed,
) -> Matrix<T> {
    let mut rng = seed.rng();
    Matrix::from_fn(n, d, |_, _| T::lit(rng.gen_range(lo..hi)))
}

/// `n × d` matrix whose rows are uniform on the unit sphere in `R^d`:
/// Gaussian rows scaled to unit length. Normalization runs in `f64` before
/// conversion.
pub fn sample_sphere_rows<T: Scalar>(n: usize, d: usize, seed: RandomSeed) -> Matrix<T> {
    let mut rng = seed.rng();
    let mut data = Vec::with_capacity(n * d);
    let mut row = vec![0.0f64; d];
    for _ in 0..n {
        let norm = loop {
            row.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        data.extend(row.iter().map(|x| T::lit(x / norm)));
    }
    Matrix::new(n, d, data).expect("n, d >= 1")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_rows_have_unit_norm() {
        let m: Matrix = sample_sphere_rows(500, 7, RandomSeed::new(1, 0));
        for r in m.row_iter() {
            let n: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn one_dimensional_sphere_is_signs() {
        let m: Matrix = sample_sphere_rows(200, 1, RandomSeed::new(2, 0));
        assert!(m.as_slice().iter().all(|&x| x == 1.0 || x == -1.0));
        assert!(m.as_slice().contains(&1.0) && m.as_slice().contains(&-1.0));
    }

    #[test]
    fn sphere_coordinates_are_centered() {
        let m: Matrix = sample_sphere_rows(100_000, 3, RandomSeed::new(3, 0));
        for j in 0..3 {
            let mean = (0..m.rows()).map(|i| m.get(i, j)).sum::<f64>() / m.rows() as f64;
            assert!(mean.abs() < 0.02, "coordinate {j} mean {mean}");
        }
    }

    #[test]
    fn deterministic_per_seed_and_stream() {
        let a: Matrix = sample_sphere_rows(10, 4, RandomSeed::new(9, 2));
        let b: Matrix = sample_sphere_rows(10, 4, RandomSeed::new(9, 2));
        let c: Matrix = sample_sphere_rows(10, 4, RandomSeed::new(9, 3));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
