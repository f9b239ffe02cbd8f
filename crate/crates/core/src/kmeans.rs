//! Lloyd's k-means.
//!
//! Used for the per-subspace PQ codebooks and for the coarse quantizer of
//! the inverted index. Single-threaded; callers parallelize across fits.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::VectorMatrix;

pub const DEFAULT_MAX_ITERS: usize = 20;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop once the inertia improves by less than `tol * max(1, previous)`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: VectorMatrix,
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after the initial assignment and after every iteration.
    pub inertia_trace: Vec<f64>,
}

/// Clusters `points` into `k` groups, initialized from `k` distinct rows
/// sampled uniformly with `params.seed`.
pub fn kmeans_fit(points: &VectorMatrix, k: usize, params: &KMeansParams) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if k > points.n_rows() {
        return Err(Error::TooFewPoints {
            k,
            n: points.n_rows(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let picked = index::sample(&mut rng, points.n_rows(), k);
    let d = points.n_dims();
    let mut init = Vec::with_capacity(k * d);
    for i in picked.iter() {
        init.extend_from_slice(points.row(i));
    }
    let init = VectorMatrix::from_parts_unchecked(k, d, init);
    kmeans_fit_from(points, init, params)
}

/// Runs Lloyd's iterations from explicit initial centroids.
pub fn kmeans_fit_from(
    points: &VectorMatrix,
    init: VectorMatrix,
    params: &KMeansParams,
) -> Result<KMeansResult> {
    if params.max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
    }
    if params.tol.is_nan() || params.tol < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tol must be >= 0, got {}",
            params.tol
        )));
    }
    if init.n_dims() != points.n_dims() {
        return Err(Error::Shape(format!(
            "centroids have {} columns, points have {}",
            init.n_dims(),
            points.n_dims()
        )));
    }
    if init.n_rows() > points.n_rows() {
        return Err(Error::TooFewPoints {
            k: init.n_rows(),
            n: points.n_rows(),
        });
    }

    let k = init.n_rows();
    let d = points.n_dims();
    let mut centroids = init.into_values();
    let mut assignments = vec![0usize; points.n_rows()];
    let mut dists = vec![0f64; points.n_rows()];

    let mut inertia = assign(points, &centroids, k, &mut assignments, &mut dists);
    let mut trace = vec![inertia];
    let mut iterations_run = 0;

    while iterations_run < params.max_iters {
        reseed_empty(points, &mut centroids, k, &mut assignments, &mut dists);
        update_means(points, &mut centroids, k, &assignments);
        let prev = inertia;
        inertia = assign(points, &centroids, k, &mut assignments, &mut dists);
        trace.push(inertia);
        iterations_run += 1;
        if prev - inertia < params.tol * prev.max(1.0) {
            break;
        }
    }

    Ok(KMeansResult {
        centroids: VectorMatrix::from_parts_unchecked(k, d, centroids),
        assignments,
        inertia,
        iterations_run,
        inertia_trace: trace,
    })
}

/// Index and squared distance of the centroid nearest to `point`; ties go to
/// the lowest index.
pub fn nearest_centroid(point: &[f32], centroids: &VectorMatrix) -> Result<(usize, f64)> {
    if point.len() != centroids.n_dims() {
        return Err(Error::Shape(format!(
            "point has {} dims, centroids have {}",
            point.len(),
            centroids.n_dims()
        )));
    }
    Ok(nearest(point, centroids.values(), centroids.n_dims()))
}

/// `centroids` is a row-major slab of width `d` with at least one row.
#[inline]
pub(crate) fn nearest(point: &[f32], centroids: &[f32], d: usize) -> (usize, f64) {
    CentroidBlocks::new(centroids, d).nearest(point)
}

const LANES: usize = 8;

/// Centroids widened to `f64` and transposed into blocks of [`LANES`] rows so
/// the distance loop runs over contiguous lanes. Every lane accumulates its
/// squared differences in dimension order, so distances are bit-identical to
/// `squared_l2`.
pub(crate) struct CentroidBlocks {
    d: usize,
    k: usize,
    blocks: Vec<[f64; LANES]>,
}

impl CentroidBlocks {
    pub(crate) fn new(centroids: &[f32], d: usize) -> Self {
        debug_assert!(d > 0 && centroids.len().is_multiple_of(d));
        let k = centroids.len() / d;
        let n_blocks = k.div_ceil(LANES);
        // Padding lanes sit at infinity and never win.
        let mut blocks = vec![[f64::INFINITY; LANES]; n_blocks * d];
        for (j, c) in centroids.chunks_exact(d).enumerate() {
            let (b, lane) = (j / LANES, j % LANES);
            for (t, &v) in c.iter().enumerate() {
                blocks[b * d + t][lane] = v as f64;
            }
        }
        Self { d, k, blocks }
    }

    /// Index and squared distance of the nearest centroid; ties go to the
    /// lowest index.
    #[inline]
    pub(crate) fn nearest(&self, point: &[f32]) -> (usize, f64) {
        debug_assert_eq!(point.len(), self.d);
        let mut best = (0usize, f64::INFINITY);
        for (b, block) in self.blocks.chunks_exact(self.d).enumerate() {
            let mut acc = [0f64; LANES];
            for (&x, row) in point.iter().zip(block) {
                let x = x as f64;
                for lane in 0..LANES {
                    let diff = x - row[lane];
                    acc[lane] += diff * diff;
                }
            }
            for (lane, &dist) in acc.iter().enumerate() {
                if dist < best.1 {
                    best = (b * LANES + lane, dist);
                }
            }
        }
        debug_assert!(best.0 < self.k);
        best
    }
}

fn assign(
    points: &VectorMatrix,
    centroids: &[f32],
    k: usize,
    assignments: &mut [usize],
    dists: &mut [f64],
) -> f64 {
    let d = points.n_dims();
    debug_assert_eq!(centroids.len(), k * d);
    let blocks = CentroidBlocks::new(centroids, d);
    let mut inertia = 0.0;
    for (i, row) in points.rows().enumerate() {
        let (j, dist) = blocks.nearest(row);
        assignments[i] = j;
        dists[i] = dist;
        inertia += dist;
    }
    inertia
}

/// Moves each empty centroid onto the point farthest from its own centroid,
/// taking that point out of a cluster that can spare it.
fn reseed_empty(
    points: &VectorMatrix,
    centroids: &mut [f32],
    k: usize,
    assignments: &mut [usize],
    dists: &mut [f64],
) {
    let d = points.n_dims();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut donor: Option<usize> = None;
        for i in 0..assignments.len() {
            if counts[assignments[i]] > 1
                && dists[i] > 0.0
                && donor.is_none_or(|best| dists[i] > dists[best])
            {
                donor = Some(i);
            }
        }
        // All points coincide with their centroids: keep the stale centroid.
        let Some(i) = donor else { continue };
        counts[assignments[i]] -= 1;
        counts[empty] = 1;
        assignments[i] = empty;
        dists[i] = 0.0;
        centroids[empty * d..(empty + 1) * d].copy_from_slice(points.row(i));
    }
}

fn update_means(points: &VectorMatrix, centroids: &mut [f32], k: usize, assignments: &[usize]) {
    let d = points.n_dims();
    let mut sums = vec![0f64; k * d];
    let mut counts = vec![0usize; k];
    for (row, &a) in points.rows().zip(assignments) {
        counts[a] += 1;
        for (s, &v) in sums[a * d..(a + 1) * d].iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    for j in 0..k {
        if counts[j] == 0 {
            continue;
        }
        let n = counts[j] as f64;
        for (c, s) in centroids[j * d..(j + 1) * d]
            .iter_mut()
            .zip(&sums[j * d..(j + 1) * d])
        {
            *c = (s / n) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn params(seed: u64) -> KMeansParams {
        KMeansParams {
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn k1_is_the_mean() {
        let pts = VectorMatrix::from_rows(&[[0.0, 1.0], [2.0, 3.0], [4.0, 8.0]]).unwrap();
        let r = kmeans_fit(&pts, 1, &params(1)).unwrap();
        assert_eq!(r.centroids.row(0), &[2.0, 4.0]);
        // Total squared deviation: x: 4+0+4, y: 9+1+16.
        assert!((r.inertia - 34.0).abs() < 1e-9);
    }

    #[test]
    fn two_points_two_clusters() {
        let pts = VectorMatrix::from_rows(&[[0.0, 0.0], [10.0, 10.0]]).unwrap();
        let r = kmeans_fit(&pts, 2, &params(4)).unwrap();
        let mut rows: Vec<Vec<f32>> = r.centroids.rows().map(|c| c.to_vec()).collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(rows, vec![vec![0.0, 0.0], vec![10.0, 10.0]]);
        assert_eq!(r.inertia, 0.0);
    }

    /// Brute force over all 2-partitions of {0,1,9,10}.
    fn best_two_partition(xs: &[f64]) -> f64 {
        let n = xs.len();
        let mut best = f64::INFINITY;
        for mask in 1..(1u32 << n) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let members: Vec<f64> = (0..n)
                    .filter(|&i| ((mask >> i) & 1 == 1) == side)
                    .map(|i| xs[i])
                    .collect();
                let mean = members.iter().sum::<f64>() / members.len() as f64;
                cost += members.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
            }
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn one_dimensional_hand_example() {
        let oracle = best_two_partition(&[0.0, 1.0, 9.0, 10.0]);
        assert_eq!(oracle, 1.0);

        let pts = VectorMatrix::from_rows(&[[0.0f32], [1.0], [9.0], [10.0]]).unwrap();
        let init = VectorMatrix::from_rows(&[[0.0f32], [9.0]]).unwrap();
        let r = kmeans_fit_from(&pts, init, &params(0)).unwrap();
        assert_eq!(r.centroids.values(), &[0.5, 9.5]);
        assert_eq!(r.inertia, oracle);
        assert_eq!(r.assignments, vec![0, 0, 1, 1]);
    }

    #[test]
    fn parameter_errors() {
        let pts = VectorMatrix::from_rows(&[[0.0f32], [1.0]]).unwrap();
        assert!(kmeans_fit(&pts, 0, &params(0)).is_err());
        assert!(matches!(
            kmeans_fit(&pts, 3, &params(0)),
            Err(Error::TooFewPoints { k: 3, n: 2 })
        ));
        let zero_iters = KMeansParams {
            max_iters: 0,
            ..Default::default()
        };
        assert!(kmeans_fit(&pts, 1, &zero_iters).is_err());
    }

    #[test]
    fn nearest_centroid_examples() {
        let c = VectorMatrix::from_rows(&[[0.0f32, 0.0], [2.0, 0.0], [5.0, 5.0], [1.0, 7.0]])
            .unwrap();
        assert_eq!(nearest_centroid(&[1.0, 7.0], &c).unwrap(), (3, 0.0));
        assert_eq!(nearest_centroid(&[1.0, 0.0], &c).unwrap().0, 0);
        assert!(nearest_centroid(&[1.0], &c).is_err());
    }

    #[test]
    fn nearest_centroid_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let vals: Vec<f32> = (0..16 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = VectorMatrix::new(16, 8, vals).unwrap();
        for _ in 0..50 {
            let p: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut best = (usize::MAX, f64::INFINITY);
            for j in 0..16 {
                let dist: f64 = (0..8)
                    .map(|t| (p[t] as f64 - c.row(j)[t] as f64).powi(2))
                    .sum();
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            let got = nearest_centroid(&p, &c).unwrap();
            assert_eq!(got.0, best.0);
            assert!((got.1 - best.1).abs() <= 1e-12 * best.1.max(1.0));
        }
    }

    #[test]
    fn empty_clusters_are_reseeded_not_nan() {
        // Three far points plus duplicated initial centroids force empties.
        let pts = VectorMatrix::from_rows(&[[0.0f32], [0.1], [50.0], [100.0]]).unwrap();
        let init = VectorMatrix::from_rows(&[[0.0f32], [0.0], [0.0]]).unwrap();
        let r = kmeans_fit_from(&pts, init, &params(0)).unwrap();
        assert!(r.centroids.values().iter().all(|v| v.is_finite()));
        let mut used = r.assignments.clone();
        used.sort();
        used.dedup();
        assert_eq!(used.len(), 3);
        assert!(r.inertia < 0.01);
    }

    #[test]
    fn identical_points_keep_finite_centroids() {
        let pts = VectorMatrix::new(5, 2, vec![1.0; 10]).unwrap();
        let r = kmeans_fit(&pts, 3, &params(2)).unwrap();
        assert!(r.centroids.values().iter().all(|&v| v == 1.0));
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f32> = (0..300 * 3).map(|_| rng.random()).collect();
        let pts = VectorMatrix::new(300, 3, vals).unwrap();
        let a = kmeans_fit(&pts, 7, &params(9)).unwrap();
        let b = kmeans_fit(&pts, 7, &params(9)).unwrap();
        assert_eq!(a, b);
    }
}
