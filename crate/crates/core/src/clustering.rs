//! Hierarchical clustering into groups of two or three.
//!
//! Starting from singletons, the algorithm repeatedly
//!
//! * splits a group of four (if one exists) into the two pairs with the
//!   smallest summed within-pair distance, otherwise
//! * merges the solitary point with the smallest distance to any member of a
//!   group of size at most three into that group,
//!
//! until every group has two or three members. Merging into a triple creates
//! a group of four, which is split on the next pass, so at most one group of
//! four exists at any time. Ties go to the lexicographically smallest index
//! pair.

use nalgebra::DMatrix;

use crate::error::{PanelError, Result};

/// A partition of `0..M` with 0-based labels `0..n_groups`.
///
/// Labels are canonical: groups are numbered in order of their smallest
/// member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl Grouping {
    /// Build from arbitrary labels; relabels canonically.
    pub fn from_labels(raw: &[usize]) -> Result<Self> {
        if raw.is_empty() {
            return Err(PanelError::domain("grouping must cover at least one index"));
        }
        let mut map = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        let mut sizes: Vec<usize> = Vec::new();
        for &r in raw {
            let next = map.len();
            let g = *map.entry(r).or_insert(next);
            if g == sizes.len() {
                sizes.push(0);
            }
            sizes[g] += 1;
            labels.push(g);
        }
        Ok(Grouping { labels, sizes })
    }

    /// Build from explicit member lists.
    pub fn from_groups(groups: &[Vec<usize>], m: usize) -> Result<Self> {
        let mut raw = vec![usize::MAX; m];
        for (g, members) in groups.iter().enumerate() {
            for &i in members {
                if i >= m || raw[i] != usize::MAX {
                    return Err(PanelError::domain(format!("index {i} out of range or assigned twice")));
                }
                raw[i] = g;
            }
        }
        if raw.contains(&usize::MAX) {
            return Err(PanelError::domain("groups do not cover every index"));
        }
        Grouping::from_labels(&raw)
    }

    /// Everything in one group.
    pub fn single(m: usize) -> Result<Self> {
        Grouping::from_labels(&vec![0; m])
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_groups(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of indices partitioned.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Member lists, each sorted ascending, in label order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_groups()];
        for (i, &g) in self.labels.iter().enumerate() {
            out[g].push(i);
        }
        out
    }
}

/// Euclidean distances between rows of `points` (M×d), with `+∞` on the
/// diagonal.
pub fn pairwise_distances(points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = points.nrows();
    if m == 0 {
        return Err(PanelError::domain("need at least one point"));
    }
    let mut a = DMatrix::from_element(m, m, f64::INFINITY);
    for i in 0..m {
        for j in (i + 1)..m {
            let d = (points.row(i) - points.row(j)).norm();
            a[(i, j)] = d;
            a[(j, i)] = d;
        }
    }
    Ok(a)
}

/// Distances between a list of equal-length vectors.
pub fn pairwise_distances_of(points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let Some(first) = points.first() else {
        return Err(PanelError::domain("need at least one point"));
    };
    let d = first.len();
    if points.iter().any(|p| p.len() != d) {
        return Err(PanelError::domain("points have different lengths"));
    }
    pairwise_distances(&DMatrix::from_fn(points.len(), d, |i, j| points[i][j]))
}

/// One step of the clustering loop, recorded by [`pair_triple_partition_traced`].
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterStep {
    /// Singleton `i` merged with the group containing `j`.
    Merge { i: usize, j: usize },
    /// A group of four split into two pairs.
    Split { first: [usize; 2], second: [usize; 2] },
}

/// Partition the points behind `distances` into groups of two or three.
pub fn pair_triple_partition(distances: &DMatrix<f64>) -> Result<Grouping> {
    partition_impl(distances, None)
}

/// As [`pair_triple_partition`], also returning the step sequence and the
/// number of groups of four present after each step.
pub fn pair_triple_partition_traced(distances: &DMatrix<f64>) -> Result<(Grouping, Vec<(ClusterStep, usize)>)> {
    let mut trace = Vec::new();
    let g = partition_impl(distances, Some(&mut trace))?;
    Ok((g, trace))
}

fn partition_impl(a: &DMatrix<f64>, mut trace: Option<&mut Vec<(ClusterStep, usize)>>) -> Result<Grouping> {
    let m = a.nrows();
    if m == 0 || a.ncols() != m {
        return Err(PanelError::domain("distance matrix must be square and non-empty"));
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let (x, y) = (a[(i, j)], a[(j, i)]);
            if x != y && !(x.is_nan() && y.is_nan()) {
                return Err(PanelError::domain(format!("distance matrix not symmetric at ({i},{j})")));
            }
            if x.is_nan() || x < 0.0 {
                return Err(PanelError::domain(format!("invalid distance {x} at ({i},{j})")));
            }
        }
    }
    if m == 1 {
        return Grouping::single(1);
    }

    // cluster id per point; clusters stored as member lists
    let mut owner: Vec<usize> = (0..m).collect();
    let mut clusters: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();

    loop {
        if let Some(c4) = clusters.iter().position(|c| c.len() == 4) {
            let mut q = clusters[c4].clone();
            q.sort_unstable();
            let [p, r, s, u] = [q[0], q[1], q[2], q[3]];
            // pairings listed in lexicographic order of their first pair
            let pairings = [([p, r], [s, u]), ([p, s], [r, u]), ([p, u], [r, s])];
            let mut best = 0;
            let mut best_cost = f64::INFINITY;
            for (idx, (x, y)) in pairings.iter().enumerate() {
                let cost = a[(x[0], x[1])] + a[(y[0], y[1])];
                if cost < best_cost {
                    best_cost = cost;
                    best = idx;
                }
            }
            let (first, second) = pairings[best];
            clusters[c4] = first.to_vec();
            let new_id = clusters.len();
            clusters.push(second.to_vec());
            for &i in &second {
                owner[i] = new_id;
            }
            if let Some(t) = trace.as_deref_mut() {
                let fours = clusters.iter().filter(|c| c.len() == 4).count();
                t.push((ClusterStep::Split { first, second }, fours));
            }
            continue;
        }

        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..m {
            if clusters[owner[i]].len() != 1 {
                continue;
            }
            for j in 0..m {
                if j == i || clusters[owner[j]].len() > 3 {
                    continue;
                }
                let d = a[(i, j)];
                // strict comparison keeps the first (smallest i, then j) on ties
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else {
            break;
        };
        let (ci, cj) = (owner[i], owner[j]);
        clusters[ci].clear();
        clusters[cj].push(i);
        owner[i] = cj;
        if let Some(t) = trace.as_deref_mut() {
            let fours = clusters.iter().filter(|c| c.len() == 4).count();
            t.push((ClusterStep::Merge { i, j }, fours));
        }
        if clusters.iter().all(|c| c.is_empty() || c.len() == 2 || c.len() == 3) {
            break;
        }
    }

    let raw: Vec<usize> = owner;
    Grouping::from_labels(&raw)
}

/// Cluster the rows of `points` (M×d).
pub fn cluster_rows(points: &DMatrix<f64>) -> Result<Grouping> {
    pair_triple_partition(&pairwise_distances(points)?)
}
