use thiserror::Error;

use crate::pc::PointCloud;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DistortionError {
    #[error("distortion is undefined for an empty {0} cloud")]
    Empty(&'static str),
}

/// Static 3-d tree over a point set for exact nearest-neighbour queries.
pub struct KdTree {
    pts: Vec<[f64; 3]>,
}

const LEAF: usize = 8;

impl KdTree {
    pub fn new(points: impl IntoIterator<Item = [f64; 3]>) -> Self {
        let mut pts: Vec<[f64; 3]> = points.into_iter().collect();
        build(&mut pts, 0);
        KdTree { pts }
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Squared distance to the nearest stored point; infinite when empty.
    pub fn nearest_dist2(&self, q: [f64; 3]) -> f64 {
        let mut best = (f64::INFINITY, [f64::INFINITY; 3]);
        search(&self.pts, 0, q, &mut best);
        best.0
    }

    /// Sum of nearest squared distances for every query. A query starts from
    /// the previous query's neighbour as an upper bound, which prunes most of
    /// the tree when queries arrive in spatially coherent order.
    fn sum_nearest_dist2(&self, queries: &[[f64; 3]]) -> f64 {
        let mut best = (f64::INFINITY, [f64::INFINITY; 3]);
        let mut sum = 0.0;
        for &q in queries {
            best.0 = dist2(q, best.1);
            search(&self.pts, 0, q, &mut best);
            sum += best.0;
        }
        sum
    }
}

#[inline]
fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn build(pts: &mut [[f64; 3]], depth: usize) {
    if pts.len() <= LEAF {
        return;
    }
    let axis = depth % 3;
    let mid = pts.len() / 2;
    pts.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let (lo, hi) = pts.split_at_mut(mid);
    build(lo, depth + 1);
    build(&mut hi[1..], depth + 1);
}

fn search(pts: &[[f64; 3]], depth: usize, q: [f64; 3], best: &mut (f64, [f64; 3])) {
    if pts.len() <= LEAF {
        for &p in pts {
            let d2 = dist2(p, q);
            if d2 < best.0 {
                *best = (d2, p);
            }
        }
        return;
    }
    let mid = pts.len() / 2;
    let p = pts[mid];
    let d2 = dist2(p, q);
    if d2 < best.0 {
        *best = (d2, p);
    }
    let axis = depth % 3;
    let diff = q[axis] - p[axis];
    let (near, far) = if diff < 0.0 {
        (&pts[..mid], &pts[mid + 1..])
    } else {
        (&pts[mid + 1..], &pts[..mid])
    };
    search(near, depth + 1, q, best);
    if diff * diff < best.0 {
        search(far, depth + 1, q, best);
    }
}

/// Queries are taken in the source tree's storage order, which is spatially
/// coherent. Chunks are summed in a fixed order so the result does not
/// depend on the thread count.
fn directed_rmse(from: &KdTree, to: &KdTree) -> f64 {
    use rayon::prelude::*;
    let partial: Vec<f64> = from
        .pts
        .par_chunks(4096)
        .map(|c| to.sum_nearest_dist2(c))
        .collect();
    (partial.iter().sum::<f64>() / from.len() as f64).sqrt()
}

/// Symmetric point-to-point error: the larger of the two directed
/// nearest-neighbour RMS distances, in metres.
pub fn d1_distortion(
    original: &PointCloud,
    reconstructed: &PointCloud,
) -> Result<f64, DistortionError> {
    if original.is_empty() {
        return Err(DistortionError::Empty("original"));
    }
    if reconstructed.is_empty() {
        return Err(DistortionError::Empty("reconstructed"));
    }
    let to_rec = KdTree::new(reconstructed.points.iter().map(|p| p.coords()));
    let to_orig = KdTree::new(original.points.iter().map(|p| p.coords()));
    Ok(directed_rmse(&to_orig, &to_rec).max(directed_rmse(&to_rec, &to_orig)))
}
