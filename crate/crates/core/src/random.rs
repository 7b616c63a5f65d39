//! Seeded random states and operators.
//!
//! The generator is ChaCha20 (`rand_chacha::ChaCha20Rng::seed_from_u64`),
//! a counter-based stream cipher whose output is fixed by the seed on every
//! platform. Complex normal entries have independent real and imaginary parts
//! with variance 1/2 each, drawn in row-major order, real part first.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::operators::{hermitian_part, CMatrix, DensityMatrix, HermitianOperator, StateOperator};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// `rows x cols` matrix of standard complex normal entries.
pub fn ginibre(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> CMatrix {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            m[(i, j)] = Complex64::new(re * scale, im * scale);
        }
    }
    m
}

/// Normalized `dim x rank` state operator with complex normal entries.
pub fn random_state_operator(dim: usize, rank: usize, seed: u64) -> Result<StateOperator> {
    if dim == 0 || rank == 0 || rank > dim {
        return Err(Error::InvalidArgument(format!(
            "rank must satisfy 1 <= rank <= dim, got rank {rank} in dim {dim}"
        )));
    }
    let g = ginibre(dim, rank, &mut rng(seed));
    StateOperator::new(g)?.normalized()
}

/// Unit-trace density matrix of the given rank.
pub fn random_mixed(dim: usize, rank: usize, seed: u64) -> Result<DensityMatrix> {
    Ok(random_state_operator(dim, rank, seed)?.density())
}

pub fn random_pure(dim: usize, seed: u64) -> Result<StateOperator> {
    random_state_operator(dim, 1, seed)
}

/// GUE-distributed Hermitian matrix.
pub fn random_hermitian(dim: usize, seed: u64) -> HermitianOperator {
    let g = ginibre(dim, dim, &mut rng(seed));
    HermitianOperator::from_matrix_unchecked(hermitian_part(&g))
}

/// Haar-distributed unitary from the QR decomposition of a Ginibre matrix,
/// with the phases of `R`'s diagonal absorbed into `Q`.
pub fn random_unitary(dim: usize, seed: u64) -> CMatrix {
    let g = ginibre(dim, dim, &mut rng(seed));
    let qr = g.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Uniform real numbers in `[lo, hi)`.
pub fn uniform_vec(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}
