//! K-means and agglomerative clustering of attack vectors.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttackError, ClusterMethod};

const KMEANS_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    Ward,
    Complete,
}

impl FromStr for Linkage {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ward" => Ok(Linkage::Ward),
            "complete" => Ok(Linkage::Complete),
            _ => Err(AttackError::Unknown {
                what: "linkage",
                value: s.into(),
            }),
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_of<'a>(members: impl Iterator<Item = &'a Vec<f64>>, dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    let mut count = 0usize;
    for v in members {
        for (a, b) in m.iter_mut().zip(v) {
            *a += b;
        }
        count += 1;
    }
    m.iter_mut().for_each(|a| *a /= count as f64);
    m
}

fn check(vectors: &[Vec<f64>], k: usize) -> Result<usize, AttackError> {
    if k == 0 || vectors.len() < k {
        return Err(AttackError::TooFewVectors {
            k,
            got: vectors.len(),
        });
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(AttackError::Config("vectors of different lengths".into()));
    }
    Ok(dim)
}

/// Lloyd's algorithm with k-means++ seeding. Returns the centroids.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>, AttackError> {
    let dim = check(vectors, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![vectors[rng.random_range(0..vectors.len())].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| dist2(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            // All remaining points coincide with a centroid.
            centroids.len()
        };
        centroids.push(vectors[pick].clone());
        for (d, v) in d2.iter_mut().zip(vectors) {
            *d = d.min(dist2(v, centroids.last().unwrap()));
        }
    }

    let mut assign = vec![usize::MAX; vectors.len()];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (a, v) in assign.iter_mut().zip(vectors) {
            let best = (0..k)
                .min_by(|&i, &j| dist2(v, &centroids[i]).total_cmp(&dist2(v, &centroids[j])))
                .unwrap();
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members = vectors.iter().zip(&assign).filter(|(_, &a)| a == c);
            if members.clone().next().is_some() {
                *centroid = mean_of(members.map(|(v, _)| v), dim);
            }
        }
    }
    Ok(centroids)
}

/// Bottom-up merging until `k` clusters remain; returns cluster means in
/// order of each cluster's first member.
pub fn agglomerative(
    vectors: &[Vec<f64>],
    linkage: Linkage,
    k: usize,
) -> Result<Vec<Vec<f64>>, AttackError> {
    let dim = check(vectors, k)?;
    let merges = nn_chain(vectors, linkage);
    // Replay the cheapest n − k merges.
    let mut order: Vec<usize> = (0..merges.len()).collect();
    order.sort_by(|&a, &b| merges[a].2.total_cmp(&merges[b].2).then(a.cmp(&b)));
    let mut parent: Vec<usize> = (0..vectors.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &m in order.iter().take(vectors.len() - k) {
        let (a, b, _) = merges[m];
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra.max(rb)] = ra.min(rb);
    }
    let roots: Vec<usize> = (0..vectors.len()).map(|i| find(&mut parent, i)).collect();
    let mut seen = Vec::new();
    for &r in &roots {
        if !seen.contains(&r) {
            seen.push(r);
        }
    }
    Ok(seen
        .iter()
        .map(|&r| {
            mean_of(
                vectors.iter().zip(&roots).filter(|(_, &x)| x == r).map(|(v, _)| v),
                dim,
            )
        })
        .collect())
}

/// Nearest-neighbour chain over a dense dissimilarity matrix with
/// Lance–Williams updates. Ward works on squared Euclidean distances.
/// Returns merges `(point_a, point_b, height)` with representative points.
fn nn_chain(vectors: &[Vec<f64>], linkage: Linkage) -> Vec<(usize, usize, f64)> {
    let n = vectors.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dist2(&vectors[i], &vectors[j]);
            let v = match linkage {
                Linkage::Ward => v,
                Linkage::Complete => v.sqrt(),
            };
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).unwrap());
        }
        loop {
            let a = *chain.last().unwrap();
            let prev = chain.len().checked_sub(2).map(|i| chain[i]);
            // Nearest active neighbour; prefer the chain predecessor on ties.
            let mut best = prev.unwrap_or(usize::MAX);
            let mut best_d = prev.map_or(f64::INFINITY, |p| d[a * n + p]);
            for j in 0..n {
                if active[j] && j != a && d[a * n + j] < best_d {
                    best = j;
                    best_d = d[a * n + j];
                }
            }
            if Some(best) == prev {
                chain.pop();
                chain.pop();
                let (i, j) = (a.min(best), a.max(best));
                merges.push((i, j, best_d));
                // Merge j into i.
                for m in 0..n {
                    if !active[m] || m == i || m == j {
                        continue;
                    }
                    let (dim, djm, dij) = (d[i * n + m], d[j * n + m], best_d);
                    let v = match linkage {
                        Linkage::Complete => dim.max(djm),
                        Linkage::Ward => {
                            let (si, sj, sm) = (size[i] as f64, size[j] as f64, size[m] as f64);
                            ((si + sm) * dim + (sj + sm) * djm - sm * dij) / (si + sj + sm)
                        }
                    };
                    d[i * n + m] = v;
                    d[m * n + i] = v;
                }
                size[i] += size[j];
                active[j] = false;
                remaining -= 1;
                break;
            }
            chain.push(best);
        }
    }
    merges
}

/// Cluster centroids of the given (nonzero) vectors; `None` returns them all.
pub fn cluster_attacks(
    vectors: &[Vec<f64>],
    method: ClusterMethod,
    seed: u64,
) -> Result<Vec<Vec<f64>>, AttackError> {
    match method {
        ClusterMethod::None => {
            if vectors.is_empty() {
                return Err(AttackError::TooFewVectors { k: 1, got: 0 });
            }
            Ok(vectors.to_vec())
        }
        ClusterMethod::KMeans { k } => kmeans(vectors, k, seed),
        ClusterMethod::Agglomerative { linkage, k } => agglomerative(vectors, linkage, k),
    }
}
