//! Lloyd's k-means with k-means++ seeding, used to initialize codebooks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<[f64; 3]>,
    pub assignments: Vec<usize>,
    /// Total squared distortion after seeding and after every iteration.
    pub distortion: Vec<f64>,
}

#[inline]
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Index of the nearest centroid; ties go to the lowest index.
#[inline]
pub(crate) fn nearest(p: &[f64; 3], centroids: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn assign(points: &[[f64; 3]], centroids: &[[f64; 3]]) -> (Vec<usize>, Vec<f64>) {
    points.iter().map(|p| nearest(p, centroids)).unzip()
}

pub fn kmeans_init(points: &[[f64; 3]], clusters: usize, iters: usize, seed: u64) -> Result<KMeansResult> {
    if clusters == 0 || points.len() < clusters {
        return Err(Error::InsufficientPoints {
            points: points.len(),
            clusters,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centroids = vec![points[rng.gen_range(0..points.len())]];
    let mut best: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < clusters {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &d) in best.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            // Floating-point leftovers must not land on an already chosen point.
            if best[idx] == 0.0 {
                idx = argmax(&best);
            }
            idx
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[pick];
        for (b, p) in best.iter_mut().zip(points) {
            *b = b.min(dist2(p, &c));
        }
        centroids.push(c);
    }

    let (mut assignments, mut dists) = assign(points, &centroids);
    let mut distortion = vec![dists.iter().sum()];
    for _ in 0..iters {
        let mut sums = vec![[0.0f64; 3]; clusters];
        let mut counts = vec![0usize; clusters];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for i in 0..3 {
                sums[a][i] += p[i];
            }
        }
        for k in 0..clusters {
            if counts[k] > 0 {
                let n = counts[k] as f64;
                centroids[k] = [sums[k][0] / n, sums[k][1] / n, sums[k][2] / n];
            }
        }
        // Empty clusters take over the worst-served point.
        for k in 0..clusters {
            if counts[k] == 0 {
                let far = argmax(&dists);
                centroids[k] = points[far];
                dists[far] = 0.0;
            }
        }
        (assignments, dists) = assign(points, &centroids);
        distortion.push(dists.iter().sum());
    }
    Ok(KMeansResult {
        centroids,
        assignments,
        distortion,
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
