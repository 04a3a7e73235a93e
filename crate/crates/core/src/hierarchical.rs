//! Ward agglomerative clustering of rate-of-change profiles.
//!
//! Linkage runs on squared Euclidean distances with the Lance-Williams
//! update for Ward. Merge heights are reported as the increase in
//! within-cluster sum of squares caused by each merge, so the heights of a
//! full dendrogram add up to the total sum of squares of the profiles.
//! [`Dendrogram::ward_d2_heights`] converts them to the distance scale used
//! by R's `hclust(method = "ward.D2")`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data_model::Partition;
use crate::error::{Error, Result};
use crate::preprocess::RateProfile;
use crate::shape_kmeans::size_order;

/// Condensed symmetric distance matrix with a zero diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityMatrix {
    n: usize,
    condensed: Vec<f64>,
    pub metric: String,
    pub labels: Vec<String>,
}

impl DissimilarityMatrix {
    /// Euclidean distances between points given as equal-length rows.
    pub fn euclidean(points: &[Vec<f64>], labels: Vec<String>) -> Result<Self> {
        let n = points.len();
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        if let Some(width) = points.first().map(Vec::len) {
            if let Some(p) = points.iter().find(|p| p.len() != width) {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    found: p.len(),
                });
            }
        }
        let condensed = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                ((i + 1)..n).map(move |j| {
                    points[i]
                        .iter()
                        .zip(&points[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
            })
            .collect();
        Ok(DissimilarityMatrix {
            n,
            condensed,
            metric: "euclidean".into(),
            labels,
        })
    }

    /// Builds a matrix from a condensed upper triangle (row-major, i < j).
    pub fn from_condensed(n: usize, condensed: Vec<f64>, metric: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        if condensed.len() != n * n.saturating_sub(1) / 2 || labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n * n.saturating_sub(1) / 2,
                found: condensed.len(),
            });
        }
        if condensed.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::InvalidParameter("distances must be non-negative".into()));
        }
        Ok(DissimilarityMatrix {
            n,
            condensed,
            metric: metric.into(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.condensed[self.offset(i, j)],
            std::cmp::Ordering::Greater => self.condensed[self.offset(j, i)],
        }
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        self.n * i - i * (i + 1) / 2 + j - i - 1
    }

    pub fn max(&self) -> f64 {
        self.condensed.iter().copied().fold(0.0, f64::max)
    }

    pub fn condensed(&self) -> &[f64] {
        &self.condensed
    }
}

/// Pairwise Euclidean distances between rate vectors.
pub fn distance_matrix(profiles: &[RateProfile]) -> Result<DissimilarityMatrix> {
    let points: Vec<Vec<f64>> = profiles.iter().map(|p| p.rates.clone()).collect();
    let labels = profiles.iter().map(|p| p.subject_id.clone()).collect();
    DissimilarityMatrix::euclidean(&points, labels)
}

/// One agglomeration step. Leaves are nodes `0..n`; the cluster formed by
/// merge `s` is node `n + s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
    pub leaf_order: Vec<usize>,
    pub labels: Vec<String>,
    pub height_convention: String,
}

impl Dendrogram {
    pub fn heights(&self) -> impl Iterator<Item = f64> + '_ {
        self.merges.iter().map(|m| m.height)
    }

    /// Whether merge heights never decrease.
    pub fn is_monotone(&self) -> bool {
        self.merges.windows(2).all(|w| w[1].height >= w[0].height)
    }

    /// `sqrt(2 * height)`: the merge distance under the ward.D2 convention.
    pub fn ward_d2_heights(&self) -> Vec<f64> {
        self.heights().map(|h| (2.0 * h).sqrt()).collect()
    }

    /// Height removed when refining from `k - 1` to `k` clusters.
    fn refinement_height(&self, k: usize) -> f64 {
        self.merges[self.n - k].height
    }
}

/// Relative tolerance under which two merge costs count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

fn tied(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * (scale + a.abs().max(b.abs()))
}

/// Ward linkage with deterministic ties: among pairs whose costs agree to
/// [`TIE_TOLERANCE`] (relative to the largest squared input distance plus
/// the costs themselves) the one with the smallest
/// `(min node id, max node id)` merges first.
///
/// A per-cluster nearest-neighbour cache keeps the typical cost near
/// quadratic; rows are rescanned only when their cached partner merges.
pub fn ward_linkage(dist: &DissimilarityMatrix) -> Result<Dendrogram> {
    let n = dist.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("Ward linkage needs at least 2 subjects, got {n}")));
    }
    let mut d = vec![0.0; n * n];
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let sq = dist.get(i, j).powi(2);
            d[i * n + j] = sq;
            d[j * n + i] = sq;
            scale = scale.max(sq);
        }
    }
    // `a` strictly below `b` beyond the tie tolerance.
    let below = |a: f64, b: f64| a < b && !tied(a, b, scale);
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node: Vec<usize> = (0..n).collect();

    let nearest_of = |i: usize, d: &[f64], active: &[bool], node: &[usize]| -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in 0..n {
            if j == i || !active[j] {
                continue;
            }
            let v = d[i * n + j];
            let better = best.0 == usize::MAX
                || below(v, best.1)
                || (tied(v, best.1, scale) && node[j] < node[best.0]);
            if better {
                best = (j, v);
            }
        }
        best
    };
    let mut nn: Vec<(usize, f64)> = (0..n).map(|i| nearest_of(i, &d, &active, &node)).collect();

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..(n - 1) {
        let pair_key = |i: usize| {
            let j = nn[i].0;
            (nn[i].1, node[i].min(node[j]), node[i].max(node[j]))
        };
        let mut i = usize::MAX;
        for c in (0..n).filter(|&c| active[c]) {
            if i == usize::MAX {
                i = c;
                continue;
            }
            let (kc, ki) = (pair_key(c), pair_key(i));
            if below(kc.0, ki.0) || (tied(kc.0, ki.0, scale) && (kc.1, kc.2) < (ki.1, ki.2)) {
                i = c;
            }
        }
        let j = nn[i].0;
        let dij = d[i * n + j];
        let (si, sj) = (size[i] as f64, size[j] as f64);
        let (slot, gone) = (i.min(j), i.max(j));

        merges.push(Merge {
            left: node[i].min(node[j]),
            right: node[i].max(node[j]),
            height: (0.5 * dij).max(0.0),
            size: size[i] + size[j],
        });

        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let sk = size[k] as f64;
            let v = ((si + sk) * d[k * n + i] + (sj + sk) * d[k * n + j] - sk * dij) / (si + sj + sk);
            d[k * n + slot] = v;
            d[slot * n + k] = v;
        }
        active[gone] = false;
        size[slot] = size[i] + size[j];
        node[slot] = n + step;

        for k in 0..n {
            if !active[k] || k == slot {
                continue;
            }
            if nn[k].0 == i || nn[k].0 == j {
                nn[k] = nearest_of(k, &d, &active, &node);
            } else if below(d[k * n + slot], nn[k].1) {
                nn[k] = (slot, d[k * n + slot]);
            }
        }
        nn[slot] = nearest_of(slot, &d, &active, &node);
    }

    Ok(Dendrogram {
        n,
        leaf_order: leaf_order(n, &merges),
        merges,
        labels: dist.labels.clone(),
        height_convention: "ward: increase in within-cluster sum of squares (sqrt(2*h) gives ward.D2)".into(),
    })
}

fn leaf_order(n: usize, merges: &[Merge]) -> Vec<usize> {
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![n + merges.len() - 1];
    while let Some(v) = stack.pop() {
        if v < n {
            order.push(v);
        } else {
            let m = &merges[v - n];
            stack.push(m.right);
            stack.push(m.left);
        }
    }
    order
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Cluster index of every leaf when the tree is cut into `k` groups.
/// Groups are numbered by decreasing size, then by their first leaf.
pub fn cut_labels(dendrogram: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let n = dendrogram.n;
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("cannot cut {n} leaves into {k} groups")));
    }
    let mut parent: Vec<usize> = (0..(2 * n - 1)).collect();
    for (s, m) in dendrogram.merges.iter().take(n - k).enumerate() {
        let a = find(&mut parent, m.left);
        let b = find(&mut parent, m.right);
        parent[a] = n + s;
        parent[b] = n + s;
    }
    let mut root_index = BTreeMap::new();
    let raw: Vec<usize> = (0..n)
        .map(|leaf| {
            let r = find(&mut parent, leaf);
            let next = root_index.len();
            *root_index.entry(r).or_insert(next)
        })
        .collect();
    let order = size_order(&raw, k);
    let mut rank = vec![0usize; k];
    for (r, &g) in order.iter().enumerate() {
        rank[g] = r;
    }
    Ok(raw.into_iter().map(|g| rank[g]).collect())
}

/// Undoes the last `k - 1` merges and labels the groups `G1..Gk`.
pub fn cut_tree(dendrogram: &Dendrogram, k: usize) -> Result<Partition> {
    let labels = cut_labels(dendrogram, k)?;
    let names: Vec<String> = (1..=k).map(|g| format!("G{g}")).collect();
    let mut params = BTreeMap::new();
    params.insert("k".into(), json!(k));
    params.insert("linkage".into(), json!("ward"));
    params.insert("height_convention".into(), json!(dendrogram.height_convention));
    Partition::from_assignments("hca", params, &dendrogram.labels, &labels, &names)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElbowRule {
    /// Largest ratio of successive refinement heights.
    #[default]
    Ratio,
    /// Largest drop between successive refinement heights.
    SecondDifference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestCut {
    pub k: usize,
    pub warning: Option<String>,
}

/// Number of clusters with the greatest relative loss of inertia.
///
/// With `h(k)` the height undone when going from `k - 1` to `k` clusters,
/// returns the `k` in `2..=k_max` maximising `h(k) / h(k + 1)`; a zero
/// denominator counts as infinity and ties go to the smallest `k`.
pub fn best_cut(dendrogram: &Dendrogram, k_max: usize, rule: ElbowRule) -> Result<BestCut> {
    let n = dendrogram.n;
    if k_max < 2 {
        return Err(Error::InvalidParameter(format!("k_max must be at least 2, got {k_max}")));
    }
    if n < 3 {
        return Err(Error::InvalidParameter(format!("elbow selection needs at least 3 subjects, got {n}")));
    }
    let upper = k_max.min(n - 1);
    let score = |k: usize| {
        let (hk, next) = (dendrogram.refinement_height(k), dendrogram.refinement_height(k + 1));
        match rule {
            ElbowRule::Ratio if next == 0.0 => f64::INFINITY,
            ElbowRule::Ratio => hk / next,
            ElbowRule::SecondDifference => hk - next,
        }
    };
    let mut best = (2, score(2));
    for k in 3..=upper {
        let s = score(k);
        if s > best.1 {
            best = (k, s);
        }
    }
    let zero = (2..=upper + 1).any(|k| dendrogram.refinement_height(k) == 0.0);
    let warning = zero.then(|| "zero merge heights in the elbow range; structure is degenerate".to_string());
    Ok(BestCut { k: best.0, warning })
}
