use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DciError, EnrichedTrace, TraceEventKind};
use crate::rng;

pub const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each assignment step.
    pub objective_history: Vec<f64>,
    pub converged: bool,
}

impl Clustering {
    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, lowest index on ties.
fn nearest(v: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, m)| (c, dist2(v, m)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// k-means with farthest-point seeding. The first centre is a seeded uniform
/// pick; each further centre is the point farthest from those chosen, lowest
/// index on ties. Lloyd iterations run until assignments stop changing or
/// [`MAX_LLOYD_ITERATIONS`] is hit. An emptied cluster keeps its centroid.
pub fn cluster_traces(vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering, DciError> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(DciError::BadK { k, n });
    }
    let dim = vectors[0].len();
    if let Some((index, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(DciError::DimensionMismatch { index, expected: dim, got: v.len() });
    }

    let first = rng::stream(seed, "kmeans", 0).random_range(0..n);
    let mut centroids = vec![vectors[first].clone()];
    let mut min_d: Vec<f64> = vectors.iter().map(|v| dist2(v, &centroids[0])).collect();
    while centroids.len() < k {
        let far = (0..n).fold(0, |best, i| if min_d[i] > min_d[best] { i } else { best });
        centroids.push(vectors[far].clone());
        for (d, v) in min_d.iter_mut().zip(vectors) {
            *d = d.min(dist2(v, &vectors[far]));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        let mut wcss = 0.0;
        for (a, v) in assignments.iter_mut().zip(vectors) {
            let (c, d) = nearest(v, &centroids);
            wcss += d;
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        history.push(wcss);
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, v) in assignments.iter().zip(vectors) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(v) {
                *s += x;
            }
        }
        for ((c, s), &m) in centroids.iter_mut().zip(sums).zip(&counts) {
            if m > 0 {
                *c = s.into_iter().map(|x| x / m as f64).collect();
            }
        }
    }
    Ok(Clustering { assignments, centroids, objective_history: history, converged })
}

/// Numeric view of a trace for clustering: one-hot event kind, then scaled
/// port, TTL, window size, first two IPv4 octets and presence flags.
pub fn trace_vector(t: &EnrichedTrace) -> Vec<f64> {
    let r = &t.base.record;
    let mut v: Vec<f64> = TraceEventKind::ALL.iter().map(|&k| f64::from(u8::from(r.event_kind == k))).collect();
    let octets = match r.ip {
        Some(std::net::IpAddr::V4(ip)) => [ip.octets()[0], ip.octets()[1]],
        _ => [0, 0],
    };
    v.extend([
        f64::from(r.port.unwrap_or(0)) / 65535.0,
        f64::from(r.ttl.unwrap_or(0)) / 255.0,
        f64::from(r.win.unwrap_or(0)) / 65535.0,
        f64::from(octets[0]) / 255.0,
        f64::from(octets[1]) / 255.0,
        f64::from(u8::from(r.ip.is_some())),
        f64::from(u8::from(r.payload_hash.is_some())),
        f64::from(u8::from(r.peer.is_some())),
    ]);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn k1_centroid_is_mean() {
        let v = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 8.0]];
        let c = cluster_traces(&v, 1, 3).unwrap();
        assert_eq!(c.assignments, vec![0, 0, 0]);
        assert_eq!(c.centroids, vec![vec![2.0, 4.0]]);
        assert!(c.converged);
    }

    #[test]
    fn validation() {
        let v = vec![vec![0.0], vec![1.0]];
        assert_eq!(cluster_traces(&v, 3, 0), Err(DciError::BadK { k: 3, n: 2 }));
        assert_eq!(cluster_traces(&v, 0, 0), Err(DciError::BadK { k: 0, n: 2 }));
        let ragged = vec![vec![0.0], vec![1.0, 2.0]];
        assert_eq!(
            cluster_traces(&ragged, 1, 0),
            Err(DciError::DimensionMismatch { index: 1, expected: 1, got: 2 })
        );
    }

    proptest! {
        #[test]
        fn objective_never_increases(
            pts in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 4..40),
            k in 1usize..4,
            seed in any::<u64>(),
        ) {
            let c = cluster_traces(&pts, k, seed).unwrap();
            for w in c.objective_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
            prop_assert_eq!(c.assignments.len(), pts.len());
            prop_assert!(c.assignments.iter().all(|&a| a < k));
            prop_assert_eq!(cluster_traces(&pts, k, seed).unwrap(), c);
        }
    }
}
