//! Numerical kernels: symmetric eigensolver, k-means, seeded randomness.

mod eigen;
mod kmeans;
mod rng;

pub use eigen::{eig_symmetric, EigenResult, SymmetricMatrix};
pub use kmeans::{kmeans, kmeans_with_cap, KMeansResult, DEFAULT_MAX_ITERATIONS};
pub use rng::RandomSource;


pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
