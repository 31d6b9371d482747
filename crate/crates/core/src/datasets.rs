//! Synthetic multi-task dataset generators and train/test splitting.
//!
//! Each generator draws per-task latents `u` and per-sample latents `z`
//! uniformly from their cubes, maps them through an analytic surface and
//! adds isotropic Gaussian noise. Ground-truth latents are kept next to
//! the data for evaluation only.
//!
//! Reproducibility: task `i` draws from stream `i << 32` of a counter
//! RNG seeded with the dataset seed, and sample `j` of task `i` from
//! stream `(i << 32) + 1 + j`, so generation is order-independent and
//! portable across platforms.

use alloc::vec::Vec;

use ndarray::Array2;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::mt_ksmm::MultiTaskDataset;
use crate::{Error, Result};

/// A dataset bundled with the latents it was generated from.
#[derive(Debug, Clone)]
pub struct LabeledMultiTaskDataset {
    pub data: MultiTaskDataset,
    /// True sample latents (`N x D_L`), when known.
    pub true_z: Option<Array2<f64>>,
    /// True task latents (`I x D_T`), when known.
    pub true_u: Option<Array2<f64>>,
}

/// The invented stand-in surfaces of the shape family (the saddle is the
/// only generator with quantitative targets).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    /// `x3 = z1^2 + z2^2 + u`.
    Convex,
    /// Planar triangle support rotated by `u * pi / 2`.
    Triangle,
    /// `x3 = u * sin(pi z1)`; all tasks intersect on the line `x3 = 0`.
    Sine,
}

/// Regression-toy input distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionKind {
    /// `t ~ Uniform[-1, 1]` for every task.
    Plain,
    /// `t ~ Uniform[-1 + u/2, 1 + u/2]` — the input range shifts with
    /// the task latent (invented shift law).
    DomainShift,
}

/// Coefficients of the slanted sinusoid `s = (a u) sin(t + b u) + (c u) t + d u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for RegressionParams {
    fn default() -> Self {
        Self { a: 0.5, b: 1.0, c: 0.5, d: 0.5 }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut r = ChaCha12Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn task_rng(seed: u64, task: usize) -> ChaCha12Rng {
    stream_rng(seed, (task as u64) << 32)
}

fn sample_rng(seed: u64, task: usize, sample: usize) -> ChaCha12Rng {
    stream_rng(seed, ((task as u64) << 32) + 1 + sample as u64)
}

/// The saddle surface embedded in 10-D:
/// `x = (z1, z2, z1^2 - z2^2 + u, 0, ..., 0)`.
pub fn saddle_map(z1: f64, z2: f64, u: f64) -> [f64; 10] {
    let mut x = [0.0; 10];
    x[0] = z1;
    x[1] = z2;
    x[2] = z1 * z1 - z2 * z2 + u;
    x
}

/// Noiseless shape-family surfaces, also embedded in 10-D.
pub fn shape_map(kind: ShapeKind, z1: f64, z2: f64, u: f64) -> [f64; 10] {
    let mut x = [0.0; 10];
    match kind {
        ShapeKind::Convex => {
            x[0] = z1;
            x[1] = z2;
            x[2] = z1 * z1 + z2 * z2 + u;
        }
        ShapeKind::Sine => {
            x[0] = z1;
            x[1] = z2;
            x[2] = u * (core::f64::consts::PI * z1).sin();
        }
        ShapeKind::Triangle => {
            // fold the square onto the triangle {a + b <= 1, a, b >= 0},
            // center at its centroid, rotate by u * pi/2
            let mut a = (z1 + 1.0) / 2.0;
            let mut b = (z2 + 1.0) / 2.0;
            if a + b > 1.0 {
                a = 1.0 - a;
                b = 1.0 - b;
            }
            let (qa, qb) = (a - 1.0 / 3.0, b - 1.0 / 3.0);
            let angle = u * core::f64::consts::FRAC_PI_2;
            let (s, c) = angle.sin_cos();
            x[0] = c * qa - s * qb;
            x[1] = s * qa + c * qb;
        }
    }
    x
}

/// The slanted sinusoid of the regression toys.
pub fn regression_map(t: f64, u: f64, p: &RegressionParams) -> f64 {
    (p.a * u) * (t + p.b * u).sin() + (p.c * u) * t + p.d * u
}

fn validate_gen(n_tasks: usize, samples_per_task: usize, sigma: f64) -> Result<()> {
    if n_tasks == 0 || samples_per_task == 0 {
        return Err(Error::InvalidConfig(
            "generators need at least one task and one sample per task".into(),
        ));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig("sigma must be finite and non-negative".into()));
    }
    Ok(())
}

fn generate_surface(
    n_tasks: usize,
    samples_per_task: usize,
    sigma: f64,
    seed: u64,
    map: impl Fn(f64, f64, f64) -> [f64; 10],
) -> Result<LabeledMultiTaskDataset> {
    validate_gen(n_tasks, samples_per_task, sigma)?;
    let n = n_tasks * samples_per_task;
    let mut x = Array2::zeros((n, 10));
    let mut true_z = Array2::zeros((n, 2));
    let mut true_u = Array2::zeros((n_tasks, 1));
    let mut task_of = Vec::with_capacity(n);
    for i in 0..n_tasks {
        let u: f64 = task_rng(seed, i).gen_range(-1.0..=1.0);
        true_u[[i, 0]] = u;
        for j in 0..samples_per_task {
            let mut r = sample_rng(seed, i, j);
            let z1: f64 = r.gen_range(-1.0..=1.0);
            let z2: f64 = r.gen_range(-1.0..=1.0);
            let row = i * samples_per_task + j;
            true_z[[row, 0]] = z1;
            true_z[[row, 1]] = z2;
            let point = map(z1, z2, u);
            for (d, &v) in point.iter().enumerate() {
                let noise: f64 = r.sample(StandardNormal);
                x[[row, d]] = v + sigma * noise;
            }
            task_of.push(i);
        }
    }
    Ok(LabeledMultiTaskDataset {
        data: MultiTaskDataset::new(x, task_of, n_tasks)?,
        true_z: Some(true_z),
        true_u: Some(true_u),
    })
}

/// Saddle-shaped hyperboloid family, the benchmark with quantitative
/// targets.
pub fn gen_saddle(
    n_tasks: usize,
    samples_per_task: usize,
    sigma: f64,
    seed: u64,
) -> Result<LabeledMultiTaskDataset> {
    generate_surface(n_tasks, samples_per_task, sigma, seed, saddle_map)
}

/// Convex / triangle / sine manifold families (qualitative stand-ins).
pub fn gen_shape_family(
    kind: ShapeKind,
    n_tasks: usize,
    samples_per_task: usize,
    sigma: f64,
    seed: u64,
) -> Result<LabeledMultiTaskDataset> {
    generate_surface(n_tasks, samples_per_task, sigma, seed, move |z1, z2, u| {
        shape_map(kind, z1, z2, u)
    })
}

/// Slanted-sinusoid regression toys; observations are `(t, s)` pairs and
/// the true sample latent is `t` itself.
pub fn gen_regression(
    kind: RegressionKind,
    n_tasks: usize,
    samples_per_task: usize,
    params: &RegressionParams,
    seed: u64,
) -> Result<LabeledMultiTaskDataset> {
    validate_gen(n_tasks, samples_per_task, 0.0)?;
    if ![params.a, params.b, params.c, params.d].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidConfig("regression params must be finite".into()));
    }
    let n = n_tasks * samples_per_task;
    let mut x = Array2::zeros((n, 2));
    let mut true_z = Array2::zeros((n, 1));
    let mut true_u = Array2::zeros((n_tasks, 1));
    let mut task_of = Vec::with_capacity(n);
    for i in 0..n_tasks {
        let u: f64 = task_rng(seed, i).gen_range(-1.0..=1.0);
        true_u[[i, 0]] = u;
        let (lo, hi) = match kind {
            RegressionKind::Plain => (-1.0, 1.0),
            RegressionKind::DomainShift => (-1.0 + u / 2.0, 1.0 + u / 2.0),
        };
        for j in 0..samples_per_task {
            let mut r = sample_rng(seed, i, j);
            let t: f64 = r.gen_range(lo..=hi);
            let row = i * samples_per_task + j;
            true_z[[row, 0]] = t;
            x[[row, 0]] = t;
            x[[row, 1]] = regression_map(t, u, params);
            task_of.push(i);
        }
    }
    Ok(LabeledMultiTaskDataset {
        data: MultiTaskDataset::new(x, task_of, n_tasks)?,
        true_z: Some(true_z),
        true_u: Some(true_u),
    })
}

/// A train / existing-task-test / new-task split.
#[derive(Debug, Clone)]
pub struct Split {
    /// Training tasks, `samples_per_task_train` samples each.
    pub train: LabeledMultiTaskDataset,
    /// Held-out samples of the training tasks, indexed by the same task
    /// ids as `train`; `None` when every sample went into training.
    pub existing_test: Option<LabeledMultiTaskDataset>,
    /// The remaining tasks with all their samples, re-indexed from 0.
    pub new_tasks: Option<LabeledMultiTaskDataset>,
}

/// Partitions tasks into train/new at random (by `seed`) and holds out
/// all but the first `samples_per_task_train` samples of each training
/// task as existing-task test data.
pub fn split_existing_new(
    ds: &LabeledMultiTaskDataset,
    n_train_tasks: usize,
    samples_per_task_train: usize,
    seed: u64,
) -> Result<Split> {
    let n_tasks = ds.data.n_tasks();
    if n_train_tasks == 0 || n_train_tasks > n_tasks {
        return Err(Error::InvalidConfig(alloc::format!(
            "n_train_tasks must be in 1..={n_tasks} (got {n_train_tasks})"
        )));
    }
    for i in 0..n_tasks {
        if ds.data.samples_of(i).len() < samples_per_task_train {
            return Err(Error::InvalidConfig(alloc::format!(
                "task {i} has fewer than {samples_per_task_train} samples"
            )));
        }
    }
    if samples_per_task_train == 0 {
        return Err(Error::InvalidConfig("samples_per_task_train must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n_tasks).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // Fisher-Yates
    for k in (1..n_tasks).rev() {
        let j = rng.gen_range(0..=k);
        order.swap(k, j);
    }
    let train_tasks = &order[..n_train_tasks];
    let new_tasks = &order[n_train_tasks..];

    let mut train_rows = Vec::new();
    let mut train_assign = Vec::new();
    let mut test_rows = Vec::new();
    let mut test_assign = Vec::new();
    for (new_id, &old_id) in train_tasks.iter().enumerate() {
        let rows = ds.data.samples_of(old_id);
        for (k, &row) in rows.iter().enumerate() {
            if k < samples_per_task_train {
                train_rows.push(row);
                train_assign.push(new_id);
            } else {
                test_rows.push(row);
                test_assign.push(new_id);
            }
        }
    }
    let mut new_rows = Vec::new();
    let mut new_assign = Vec::new();
    for (new_id, &old_id) in new_tasks.iter().enumerate() {
        for &row in ds.data.samples_of(old_id) {
            new_rows.push(row);
            new_assign.push(new_id);
        }
    }

    let subset = |rows: &[usize], assign: Vec<usize>, tasks: &[usize], n: usize| -> Result<LabeledMultiTaskDataset> {
        let x = take_rows(ds.data.x(), rows);
        let true_z = ds.true_z.as_ref().map(|z| take_rows(z, rows));
        let true_u = ds.true_u.as_ref().map(|u| take_rows(u, tasks));
        Ok(LabeledMultiTaskDataset {
            data: MultiTaskDataset::new(x, assign, n)?,
            true_z,
            true_u,
        })
    };

    let train = subset(&train_rows, train_assign, train_tasks, n_train_tasks)?;
    let existing_test = if test_rows.is_empty() {
        None
    } else {
        Some(subset(&test_rows, test_assign, train_tasks, n_train_tasks)?)
    };
    let new = if new_rows.is_empty() {
        None
    } else {
        Some(subset(&new_rows, new_assign, new_tasks, new_tasks.len())?)
    };
    Ok(Split { train, existing_test, new_tasks: new })
}

fn take_rows(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), m.ncols()));
    for (r, &src) in rows.iter().enumerate() {
        out.row_mut(r).assign(&m.row(src));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn saddle_analytic_points() {
        let x = saddle_map(0.5, -0.5, 1.0);
        assert_eq!(&x[..3], &[0.5, -0.5, 1.0]);
        assert!(x[3..].iter().all(|&v| v == 0.0));
        let zero = saddle_map(0.0, 0.0, 0.0);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saddle_noise_moments() {
        let ds = gen_saddle(100, 1000, 0.1, 42).unwrap();
        let z = ds.true_z.as_ref().unwrap();
        let u = ds.true_u.as_ref().unwrap();
        // per-coordinate residual standard deviation
        let n = ds.data.n_samples();
        let mut count = 0usize;
        let mut sq = 0.0;
        for row in 0..n {
            let i = ds.data.task_of()[row];
            let clean = saddle_map(z[[row, 0]], z[[row, 1]], u[[i, 0]]);
            for d in 0..10 {
                let r = ds.data.x()[[row, d]] - clean[d];
                sq += r * r;
                count += 1;
            }
        }
        let sd = (sq / count as f64).sqrt();
        assert!((0.099..=0.101).contains(&sd), "noise sd {sd}");
    }

    #[test]
    fn sigma_zero_lies_on_manifold() {
        let ds = gen_saddle(5, 20, 0.0, 7).unwrap();
        let z = ds.true_z.as_ref().unwrap();
        let u = ds.true_u.as_ref().unwrap();
        for row in 0..ds.data.n_samples() {
            let i = ds.data.task_of()[row];
            let clean = saddle_map(z[[row, 0]], z[[row, 1]], u[[i, 0]]);
            for d in 0..10 {
                assert_eq!(ds.data.x()[[row, d]], clean[d]);
            }
        }
    }

    #[test]
    fn latents_are_uniform() {
        // Kolmogorov-Smirnov against Uniform[-1, 1], per latent dim
        let ds = gen_saddle(100, 1000, 0.0, 3).unwrap();
        let z = ds.true_z.as_ref().unwrap();
        for dim in 0..2 {
            let mut v: alloc::vec::Vec<f64> = z.column(dim).iter().copied().collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = v.len() as f64;
            let mut ks: f64 = 0.0;
            for (k, &x) in v.iter().enumerate() {
                let cdf = (x + 1.0) / 2.0;
                let lo = k as f64 / n;
                let hi = (k + 1) as f64 / n;
                ks = ks.max((cdf - lo).abs()).max((cdf - hi).abs());
            }
            assert!(ks < 0.02, "dim {dim}: KS statistic {ks}");
        }
    }

    #[test]
    fn shape_family_analytic_points() {
        let convex = shape_map(ShapeKind::Convex, 1.0, 0.0, 0.0);
        assert_abs_diff_eq!(convex[2], 1.0, epsilon = 1e-15);
        for u in [-1.0, -0.3, 0.8] {
            let sine = shape_map(ShapeKind::Sine, 0.0, 0.4, u);
            assert_abs_diff_eq!(sine[2], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn triangle_rotates_with_u() {
        // the u=1 support is the u=0 support rotated by 90 degrees
        for z1 in [-0.9, -0.2, 0.3, 0.8] {
            for z2 in [-0.7, 0.0, 0.6] {
                let p0 = shape_map(ShapeKind::Triangle, z1, z2, 0.0);
                let p1 = shape_map(ShapeKind::Triangle, z1, z2, 1.0);
                // rotate p0 by pi/2: (x, y) -> (-y, x)
                assert_abs_diff_eq!(p1[0], -p0[1], epsilon = 1e-9);
                assert_abs_diff_eq!(p1[1], p0[0], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn regression_formula_values() {
        let p = RegressionParams::default();
        // every term carries a factor u
        for t in [-1.0, 0.0, 0.5] {
            assert_eq!(regression_map(t, 0.0, &p), 0.0);
        }
        let pure_sine = RegressionParams { a: 1.0, b: 0.0, c: 0.0, d: 0.0 };
        let t = core::f64::consts::FRAC_PI_6;
        assert_abs_diff_eq!(regression_map(t, 1.0, &pure_sine), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn domain_shift_moves_input_range() {
        let p = RegressionParams::default();
        let ds = gen_regression(RegressionKind::DomainShift, 200, 50, &p, 11).unwrap();
        let u = ds.true_u.as_ref().unwrap();
        for row in 0..ds.data.n_samples() {
            let i = ds.data.task_of()[row];
            let t = ds.data.x()[[row, 0]];
            let (lo, hi) = (-1.0 + u[[i, 0]] / 2.0, 1.0 + u[[i, 0]] / 2.0);
            assert!(t >= lo && t <= hi, "t {t} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn split_shapes_and_partition() {
        let ds = gen_saddle(30, 10, 0.1, 5).unwrap();
        let split = split_existing_new(&ds, 20, 2, 1).unwrap();
        assert_eq!(split.train.data.n_samples(), 40);
        assert_eq!(split.train.data.n_tasks(), 20);
        let test = split.existing_test.as_ref().unwrap();
        assert_eq!(test.data.n_samples(), 20 * 8);
        assert_eq!(test.data.n_tasks(), 20);
        let new = split.new_tasks.as_ref().unwrap();
        assert_eq!(new.data.n_samples(), 10 * 10);
        assert_eq!(new.data.n_tasks(), 10);
        // partition: total sample count preserved
        assert_eq!(
            split.train.data.n_samples() + test.data.n_samples() + new.data.n_samples(),
            ds.data.n_samples()
        );
        // determinism
        let again = split_existing_new(&ds, 20, 2, 1).unwrap();
        assert_eq!(split.train.data.x(), again.train.data.x());
        // different seed gives a different task partition
        let other = split_existing_new(&ds, 20, 2, 2).unwrap();
        assert_ne!(split.train.data.x(), other.train.data.x());
    }

    #[test]
    fn split_with_full_samples_has_no_existing_test() {
        let ds = gen_saddle(6, 4, 0.1, 8).unwrap();
        let split = split_existing_new(&ds, 6, 4, 0).unwrap();
        assert!(split.existing_test.is_none());
        assert!(split.new_tasks.is_none());
        assert_eq!(split.train.data.n_samples(), 24);
    }

    #[test]
    fn split_rejects_infeasible_counts() {
        let ds = gen_saddle(5, 4, 0.1, 8).unwrap();
        assert!(split_existing_new(&ds, 6, 2, 0).is_err());
        assert!(split_existing_new(&ds, 3, 5, 0).is_err());
        assert!(split_existing_new(&ds, 0, 2, 0).is_err());
    }

    #[test]
    fn generation_is_order_independent_per_task() {
        // the same task and sample indices yield the same values
        // regardless of how many other tasks exist
        let small = gen_saddle(3, 5, 0.1, 9).unwrap();
        let large = gen_saddle(10, 5, 0.1, 9).unwrap();
        for row in 0..small.data.n_samples() {
            for d in 0..10 {
                assert_eq!(small.data.x()[[row, d]], large.data.x()[[row, d]]);
            }
        }
    }
}
