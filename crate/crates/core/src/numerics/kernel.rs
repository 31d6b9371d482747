#[allow(unused_imports)]
use num_traits::Float;

/// Unnormalized Gaussian smoothing kernel `exp(-||a - b||^2 / (2 lambda^2))`.
///
/// The Gaussian normalizing constant is dropped: every place the kernel
/// appears it enters a ratio in which the constant cancels, and dropping
/// it keeps small length scales well away from underflow.
pub fn smoothing_kernel(a: &[f64], b: &[f64], lambda: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    debug_assert!(lambda > 0.0);
    let mut sq = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sq += d * d;
    }
    (-sq / (2.0 * lambda * lambda)).exp()
}
