//! First-neighbor hierarchical clustering.
//!
//! Every point is linked to its first nearest neighbor; the connected
//! components of the (symmetrized) link graph form a partition. The same
//! step is then repeated on the cluster means, giving progressively coarser
//! partitions until a single cluster remains or nothing merges.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl Metric {
    pub fn distance(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b.iter()) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                match (na > 0.0, nb > 0.0) {
                    (true, true) => 1.0 - dot / (na.sqrt() * nb.sqrt()),
                    (false, false) => 0.0,
                    _ => 1.0,
                }
            }
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// A flat clustering: `labels[i]` is the cluster of sample `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub num_clusters: usize,
}

impl Partition {
    /// Member indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// Partitions from finest (level 0) to coarsest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinchHierarchy {
    pub levels: Vec<Partition>,
}

impl FinchHierarchy {
    pub fn cluster_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|p| p.num_clusters).collect()
    }
}

/// Index of each row's nearest other row. Ties go to the lower index.
pub fn first_neighbors(points: ArrayView2<f64>, metric: Metric) -> Vec<usize> {
    let n = points.nrows();
    (0..n)
        .map(|i| {
            let pi = points.row(i);
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for j in (0..n).filter(|&j| j != i) {
                let d = metric.distance(pi, points.row(j));
                if d < best_d || best == usize::MAX {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Connected components of the graph with edges `i -- nn[i]`. Components
/// are numbered in order of their lowest member.
pub fn neighbor_components(nn: &[usize]) -> Partition {
    let mut ds = DisjointSet::new(nn.len());
    for (i, &j) in nn.iter().enumerate() {
        ds.union(i, j);
    }
    let mut id_of_root = vec![usize::MAX; nn.len()];
    let mut next = 0;
    let labels = (0..nn.len())
        .map(|i| {
            let r = ds.find(i);
            if id_of_root[r] == usize::MAX {
                id_of_root[r] = next;
                next += 1;
            }
            id_of_root[r]
        })
        .collect();
    Partition {
        labels,
        num_clusters: next,
    }
}

fn cluster_means(data: ArrayView2<f64>, p: &Partition) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((p.num_clusters, data.ncols()));
    let mut counts = vec![0usize; p.num_clusters];
    for (row, &c) in data.axis_iter(Axis(0)).zip(&p.labels) {
        let mut s = sums.row_mut(c);
        s += &row;
        counts[c] += 1;
    }
    for (mut s, &n) in sums.axis_iter_mut(Axis(0)).zip(&counts) {
        s /= n as f64;
    }
    sums
}

pub fn finch_cluster(data: ArrayView2<f64>, metric: Metric) -> Result<FinchHierarchy> {
    if data.nrows() < 2 {
        return Err(Error::InputTooShort(format!(
            "clustering needs at least 2 vectors, got {}",
            data.nrows()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite value in clustering input".into()));
    }
    let mut levels = vec![neighbor_components(&first_neighbors(data, metric))];
    loop {
        let current = levels.last().expect("at least one level");
        if current.num_clusters <= 1 {
            break;
        }
        let means = cluster_means(data, current);
        let merged = neighbor_components(&first_neighbors(means.view(), metric));
        if merged.num_clusters >= current.num_clusters {
            break;
        }
        let labels = current.labels.iter().map(|&c| merged.labels[c]).collect();
        levels.push(Partition {
            labels,
            num_clusters: merged.num_clusters,
        });
    }
    Ok(FinchHierarchy { levels })
}

/// Picks the level whose cluster count is closest to `target`; ties go to
/// the finer level.
pub fn select_partition(h: &FinchHierarchy, target: usize) -> Option<(usize, &Partition)> {
    h.levels
        .iter()
        .enumerate()
        .min_by_key(|(i, p)| (p.num_clusters.abs_diff(target), *i))
}
