//! Agglomerative clustering, cophenetic distances, final scores and flat cuts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DistanceMatrix, ScoreMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        })
    }
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" | "upgma" => Ok(Linkage::Average),
            other => Err(Error::invalid("linkage", format!("unknown linkage {other:?}"))),
        }
    }
}

/// One merge step. Cluster ids below `N` are leaves; merge `m` creates
/// cluster `N + m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub leaves: Vec<usize>,
    pub merges: Vec<Merge>,
    pub linkage: Linkage,
    /// Parent cluster of every node (leaves and merges); the root has none.
    parent: Vec<usize>,
}

/// Lance-Williams update for the supported linkages, clamped into
/// `[min, max]` of the two inputs so rounding cannot create inversions.
#[inline]
fn linkage_update(linkage: Linkage, d_a: f64, d_b: f64, size_a: usize, size_b: usize) -> f64 {
    let (lo, hi) = if d_a <= d_b { (d_a, d_b) } else { (d_b, d_a) };
    match linkage {
        Linkage::Single => lo,
        Linkage::Complete => hi,
        Linkage::Average => {
            let v = (size_a as f64 * d_a + size_b as f64 * d_b) / (size_a + size_b) as f64;
            v.clamp(lo, hi)
        }
    }
}

/// Standard agglomerative clustering: repeatedly merges the two closest
/// clusters. A cluster is identified by its lowest leaf index, and ties in
/// distance go to the lexicographically lowest pair of those indices.
pub fn build_dendrogram(d: &DistanceMatrix, linkage: Linkage) -> Result<Dendrogram> {
    d.check_invariants()?;
    let n = d.len();
    if n < 2 {
        return Err(Error::invalid("distances", "need at least 2 tracks"));
    }
    // Slot `s` holds the cluster whose lowest leaf is `s`.
    let mut dist = d.values().to_vec();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node_of = (0..n).collect::<Vec<_>>();
    let mut nn = vec![usize::MAX; n];
    let mut nn_dist = vec![f64::INFINITY; n];

    let nearest = |dist: &[f64], active: &[bool], s: usize| -> (usize, f64) {
        let row = &dist[s * n..(s + 1) * n];
        let mut best = (usize::MAX, f64::INFINITY);
        for (t, &v) in row.iter().enumerate() {
            if t != s && active[t] && v < best.1 {
                best = (t, v);
            }
        }
        best
    };
    for s in 0..n {
        (nn[s], nn_dist[s]) = nearest(&dist, &active, s);
    }

    let mut merges = Vec::with_capacity(n - 1);
    let mut parent = vec![usize::MAX; 2 * n - 1];
    for step in 0..n - 1 {
        // Global minimum under (distance, lower slot, higher slot).
        let mut best: Option<(f64, usize, usize)> = None;
        for s in 0..n {
            if !active[s] {
                continue;
            }
            let cand = (nn_dist[s], s.min(nn[s]), s.max(nn[s]));
            let better = match best {
                None => true,
                Some(b) => cand.0 < b.0 || (cand.0 == b.0 && (cand.1, cand.2) < (b.1, b.2)),
            };
            if better {
                best = Some(cand);
            }
        }
        let (height, a, b) = best.expect("at least two active clusters");

        let new_node = n + step;
        let (node_a, node_b) = (node_of[a], node_of[b]);
        parent[node_a] = new_node;
        parent[node_b] = new_node;
        merges.push(Merge {
            cluster_a: node_a.min(node_b),
            cluster_b: node_a.max(node_b),
            height,
            size: size[a] + size[b],
        });

        // Merge b into a (a < b keeps the lowest leaf as the slot id).
        active[b] = false;
        for t in 0..n {
            if !active[t] || t == a {
                continue;
            }
            let v = linkage_update(linkage, dist[a * n + t], dist[b * n + t], size[a], size[b]);
            dist[a * n + t] = v;
            dist[t * n + a] = v;
        }
        size[a] += size[b];
        node_of[a] = new_node;

        for t in 0..n {
            if !active[t] {
                continue;
            }
            if t == a || nn[t] == a || nn[t] == b {
                (nn[t], nn_dist[t]) = nearest(&dist, &active, t);
            } else {
                let v = dist[t * n + a];
                if v < nn_dist[t] || (v == nn_dist[t] && a < nn[t]) {
                    nn[t] = a;
                    nn_dist[t] = v;
                }
            }
        }
    }

    Ok(Dendrogram {
        leaves: (0..n).collect(),
        merges,
        linkage,
        parent,
    })
}

impl Dendrogram {
    /// Rebuilds a dendrogram from its merge list.
    pub fn from_merges(n: usize, merges: Vec<Merge>, linkage: Linkage) -> Result<Self> {
        if n < 2 || merges.len() != n - 1 {
            return Err(Error::invalid("dendrogram", format!("{n} leaves need {} merges", n.saturating_sub(1))));
        }
        let mut parent = vec![usize::MAX; 2 * n - 1];
        let mut size = vec![1usize; 2 * n - 1];
        let mut prev = 0.0;
        for (m, merge) in merges.iter().enumerate() {
            let node = n + m;
            for c in [merge.cluster_a, merge.cluster_b] {
                if c >= node || parent[c] != usize::MAX {
                    return Err(Error::invalid("dendrogram", format!("merge {m} reuses cluster {c}")));
                }
                parent[c] = node;
            }
            size[node] = size[merge.cluster_a] + size[merge.cluster_b];
            if size[node] != merge.size || merge.height.partial_cmp(&prev).is_none_or(|o| o.is_lt()) {
                return Err(Error::invalid("dendrogram", format!("merge {m} is inconsistent")));
            }
            prev = merge.height;
        }
        Ok(Dendrogram {
            leaves: (0..n).collect(),
            merges,
            linkage,
            parent,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn root_height(&self) -> f64 {
        self.merges.last().map_or(0.0, |m| m.height)
    }

    fn height_of(&self, node: usize) -> f64 {
        let n = self.n_leaves();
        if node < n {
            0.0
        } else {
            self.merges[node - n].height
        }
    }

    /// Height of the lowest merge containing both leaves; 0 when `i == j`.
    pub fn cophenetic_distance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let mut is_ancestor = vec![false; self.parent.len()];
        let mut node = i;
        while node != usize::MAX {
            is_ancestor[node] = true;
            node = self.parent[node];
        }
        let mut node = j;
        while !is_ancestor[node] {
            node = self.parent[node];
        }
        self.height_of(node)
    }

    /// Cophenetic distances from leaf `i` to every leaf.
    pub fn cophenetic_row(&self, i: usize) -> Vec<f64> {
        let n = self.n_leaves();
        let mut members: Vec<Vec<usize>> = (0..n).map(|x| vec![x]).collect();
        let mut holder = i;
        let mut row = vec![0.0; n];
        for (m, merge) in self.merges.iter().enumerate() {
            let a = std::mem::take(&mut members[merge.cluster_a]);
            let b = std::mem::take(&mut members[merge.cluster_b]);
            if merge.cluster_a == holder || merge.cluster_b == holder {
                let other = if merge.cluster_a == holder { &b } else { &a };
                for &x in other {
                    row[x] = merge.height;
                }
                holder = n + m;
            }
            let (mut big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
            big.extend(small);
            members.push(big);
        }
        row
    }

    /// Full cophenetic matrix, row-major.
    pub fn cophenetic_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.n_leaves();
        let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut out = vec![vec![0.0; n]; n];
        for merge in &self.merges {
            let a = std::mem::take(&mut members[merge.cluster_a]);
            let b = std::mem::take(&mut members[merge.cluster_b]);
            for &x in &a {
                for &y in &b {
                    out[x][y] = merge.height;
                    out[y][x] = merge.height;
                }
            }
            let mut joined = a;
            joined.extend(b);
            members.push(joined);
        }
        out
    }

    /// Groups leaves joined by merges strictly below `threshold`. Each
    /// cluster is labeled by its lowest member leaf index.
    pub fn cut_clusters(&self, threshold: f64) -> Vec<usize> {
        self.cut_where(|h| h < threshold)
    }

    /// Groups leaves joined by merges whose ensemble score
    /// `100 × (1 − height)` reaches `score`. The reference's cluster is then
    /// exactly the set of tracks with `ensemble_score >= score`.
    pub fn cut_clusters_at_score(&self, score: f64) -> Vec<usize> {
        self.cut_where(|h| ensemble_score(h) >= score)
    }

    /// `joined` must be monotone: true for a height implies true below it.
    fn cut_where(&self, joined: impl Fn(f64) -> bool) -> Vec<usize> {
        let n = self.n_leaves();
        let mut low: Vec<usize> = (0..2 * n - 1).collect();
        for (m, merge) in self.merges.iter().enumerate() {
            low[n + m] = low[merge.cluster_a].min(low[merge.cluster_b]);
        }
        // top-down: a joined parent hands its label to the whole subtree
        let mut label = vec![usize::MAX; 2 * n - 1];
        for node in (0..2 * n - 1).rev() {
            let p = self.parent[node];
            label[node] = if p != usize::MAX && joined(self.height_of(p)) {
                label[p]
            } else {
                low[node]
            };
        }
        label.truncate(n);
        label
    }

    /// Nested `{height, children}` view with leaf ids, rooted at the final merge.
    pub fn to_tree(&self, track_ids: &[String]) -> TreeNode {
        let n = self.n_leaves();
        let mut nodes: Vec<Option<TreeNode>> = (0..n)
            .map(|i| {
                Some(TreeNode {
                    height: 0.0,
                    id: Some(track_ids[i].clone()),
                    index: Some(i),
                    children: Vec::new(),
                })
            })
            .collect();
        for merge in &self.merges {
            let a = nodes[merge.cluster_a].take().expect("unused cluster");
            let b = nodes[merge.cluster_b].take().expect("unused cluster");
            nodes.push(Some(TreeNode {
                height: merge.height,
                id: None,
                index: None,
                children: vec![a, b],
            }));
        }
        nodes.pop().flatten().expect("root")
    }

    /// Inverse of [`Dendrogram::to_tree`] for trees whose leaves carry indices.
    pub fn from_tree(root: &TreeNode, linkage: Linkage) -> Result<Self> {
        // post-order, then sort merges by height to recover the merge order
        struct Pending {
            height: f64,
            left: usize,
            right: usize,
            order: usize,
        }
        fn walk(node: &TreeNode, pending: &mut Vec<Pending>, leaves: &mut usize) -> Result<(usize, bool)> {
            match (node.index, node.children.as_slice()) {
                (Some(i), []) => {
                    *leaves += 1;
                    Ok((i, true))
                }
                (None, [l, r]) => {
                    let (a, a_leaf) = walk(l, pending, leaves)?;
                    let (b, b_leaf) = walk(r, pending, leaves)?;
                    let order = pending.len();
                    pending.push(Pending {
                        height: node.height,
                        left: if a_leaf { a } else { usize::MAX - a },
                        right: if b_leaf { b } else { usize::MAX - b },
                        order,
                    });
                    Ok((order, false))
                }
                _ => Err(Error::invalid("dendrogram", "malformed node")),
            }
        }
        let mut pending = Vec::new();
        let mut n = 0;
        walk(root, &mut pending, &mut n)?;
        let mut order: Vec<usize> = (0..pending.len()).collect();
        order.sort_by(|&x, &y| {
            pending[x]
                .height
                .total_cmp(&pending[y].height)
                .then(pending[x].order.cmp(&pending[y].order))
        });
        let mut rank = vec![0; pending.len()];
        for (r, &p) in order.iter().enumerate() {
            rank[p] = r;
        }
        let resolve = |c: usize| if c > usize::MAX / 2 { n + rank[usize::MAX - c] } else { c };
        let mut sizes = vec![1usize; 2 * n - 1];
        let mut merges = Vec::with_capacity(pending.len());
        for &p in &order {
            let (a, b) = (resolve(pending[p].left), resolve(pending[p].right));
            let node = n + merges.len();
            sizes[node] = sizes[a] + sizes[b];
            merges.push(Merge {
                cluster_a: a.min(b),
                cluster_b: a.max(b),
                height: pending[p].height,
                size: sizes[node],
            });
        }
        Dendrogram::from_merges(n, merges, linkage)
    }
}

/// Recursive dendrogram node as exchanged with the annotator UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackScore {
    pub track_id: String,
    pub direct_score: f64,
    pub ensemble_score: f64,
    pub cophenetic_to_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalScoreTable {
    pub reference: usize,
    pub rows: Vec<TrackScore>,
}

impl FinalScoreTable {
    pub fn direct(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.direct_score).collect()
    }

    pub fn ensemble(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ensemble_score).collect()
    }

    /// `track_id,direct_score,ensemble_score` CSV.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("track_id,direct_score,ensemble_score\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{}\n",
                r.track_id,
                crate::model::format_f64(r.direct_score),
                crate::model::format_f64(r.ensemble_score)
            ));
        }
        out
    }
}

/// `100 × (1 − cophenetic distance to the reference)`, clamped to `[0, 100]`.
pub fn ensemble_score(cophenetic: f64) -> f64 {
    (100.0 * (1.0 - cophenetic)).clamp(0.0, 100.0)
}

/// Raw direct score on the display scale: capped at 100, self pinned to 100.
pub fn direct_score(raw: f64) -> f64 {
    raw.min(100.0)
}

pub fn final_scores(dend: &Dendrogram, reference: usize, direct: &ScoreMatrix) -> Result<FinalScoreTable> {
    let n = dend.n_leaves();
    if reference >= n {
        return Err(Error::IndexOutOfRange { index: reference, len: n });
    }
    if direct.len() != n {
        return Err(Error::DimensionMismatch(direct.len(), n));
    }
    let cophenetic = dend.cophenetic_row(reference);
    let rows = (0..n)
        .map(|i| {
            let c = cophenetic[i];
            TrackScore {
                track_id: direct.track_ids()[i].clone(),
                direct_score: if i == reference { 100.0 } else { direct_score(direct.get(reference, i)) },
                ensemble_score: if i == reference { 100.0 } else { ensemble_score(c) },
                cophenetic_to_reference: c,
            }
        })
        .collect();
    Ok(FinalScoreTable { reference, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    /// Leaves 0..4 standing for tracks 1..4: d(1,2)=0.1, d(3,4)=0.2, cross 0.9.
    fn four_leaf() -> DistanceMatrix {
        DistanceMatrix::from_rows(
            ids(4),
            &[
                vec![0.0, 0.1, 0.9, 0.9],
                vec![0.1, 0.0, 0.9, 0.9],
                vec![0.9, 0.9, 0.0, 0.2],
                vec![0.9, 0.9, 0.2, 0.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn two_leaves() {
        let d = DistanceMatrix::from_rows(ids(2), &[vec![0.0, 0.3], vec![0.3, 0.0]]).unwrap();
        let dend = build_dendrogram(&d, Linkage::Average).unwrap();
        assert_eq!(dend.merges, vec![Merge { cluster_a: 0, cluster_b: 1, height: 0.3, size: 2 }]);
    }

    #[test]
    fn four_leaf_average() {
        let dend = build_dendrogram(&four_leaf(), Linkage::Average).unwrap();
        let heights: Vec<f64> = dend.merges.iter().map(|m| m.height).collect();
        assert_eq!(heights, vec![0.1, 0.2, 0.9]);
        assert_eq!(dend.cophenetic_distance(0, 1), 0.1);
        assert_eq!(dend.cophenetic_distance(0, 2), 0.9);
        assert_eq!(dend.cophenetic_distance(3, 3), 0.0);
        assert_eq!(dend.cophenetic_row(0), vec![0.0, 0.1, 0.9, 0.9]);
        assert_eq!(dend.cophenetic_row(3), dend.cophenetic_matrix()[3]);
        assert_eq!(dend.cut_clusters(0.5), vec![0, 0, 2, 2]);
        assert_eq!(dend.cut_clusters(0.0), vec![0, 1, 2, 3]);
        assert_eq!(dend.cut_clusters(1.0), vec![0, 0, 0, 0]);
    }

    #[test]
    fn final_scores_four_leaf() {
        let dend = build_dendrogram(&four_leaf(), Linkage::Average).unwrap();
        let raw = ScoreMatrix::from_fn(ids(4), |i, j| (i + j) as f64 * 50.0).unwrap();
        let table = final_scores(&dend, 0, &raw).unwrap();
        assert_eq!(table.rows[0].direct_score, 100.0);
        assert_eq!(table.rows[0].ensemble_score, 100.0);
        assert!((table.rows[1].ensemble_score - 90.0).abs() < 1e-12);
        assert_eq!(table.rows[1].direct_score, 50.0);
        assert_eq!(table.rows[3].direct_score, 100.0); // capped
        assert!((table.rows[2].ensemble_score - 10.0).abs() < 1e-12);
    }

    #[test]
    fn root_merge_scores_near_zero() {
        let d = DistanceMatrix::from_rows(
            ids(3),
            &[vec![0.0, 0.1, 1.0], vec![0.1, 0.0, 1.0], vec![1.0, 1.0, 0.0]],
        )
        .unwrap();
        let dend = build_dendrogram(&d, Linkage::Average).unwrap();
        let raw = ScoreMatrix::from_fn(ids(3), |_, _| 1.0).unwrap();
        let table = final_scores(&dend, 0, &raw).unwrap();
        assert_eq!(table.rows[2].ensemble_score, 0.0);
    }

    #[test]
    fn duplicate_merges_first() {
        let d = DistanceMatrix::from_rows(
            ids(3),
            &[vec![0.0, 0.4, 0.0], vec![0.4, 0.0, 0.4], vec![0.0, 0.4, 0.0]],
        )
        .unwrap();
        let dend = build_dendrogram(&d, Linkage::Average).unwrap();
        assert_eq!(dend.merges[0], Merge { cluster_a: 0, cluster_b: 2, height: 0.0, size: 2 });
    }

    #[test]
    fn tie_break_lowest_pair() {
        let mut rows = vec![vec![0.5; 4]; 4];
        (0..4).for_each(|i| rows[i][i] = 0.0);
        let d = DistanceMatrix::from_rows(ids(4), &rows).unwrap();
        let dend = build_dendrogram(&d, Linkage::Single).unwrap();
        assert_eq!((dend.merges[0].cluster_a, dend.merges[0].cluster_b), (0, 1));
        // cluster {0,1} (slot 0) now ties with leaf 2 at 0.5
        assert_eq!((dend.merges[1].cluster_a, dend.merges[1].cluster_b), (2, 4));
    }

    #[test]
    fn linkages_differ() {
        let d = DistanceMatrix::from_rows(
            ids(3),
            &[vec![0.0, 0.2, 0.4], vec![0.2, 0.0, 0.8], vec![0.4, 0.8, 0.0]],
        )
        .unwrap();
        let h = |l| build_dendrogram(&d, l).unwrap().root_height();
        assert_eq!(h(Linkage::Single), 0.4);
        assert_eq!(h(Linkage::Complete), 0.8);
        assert!((h(Linkage::Average) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn tree_roundtrip() {
        let dend = build_dendrogram(&four_leaf(), Linkage::Average).unwrap();
        let tree = dend.to_tree(&ids(4));
        assert_eq!(tree.height, 0.9);
        let back = Dendrogram::from_tree(&tree, Linkage::Average).unwrap();
        assert_eq!(back.cophenetic_matrix(), dend.cophenetic_matrix());
        assert_eq!(back.cut_clusters(0.15), dend.cut_clusters(0.15));
    }

    #[test]
    fn rejects_bad_merge_lists() {
        let m = |a, b, h, s| Merge { cluster_a: a, cluster_b: b, height: h, size: s };
        assert!(Dendrogram::from_merges(3, vec![m(0, 1, 0.1, 2)], Linkage::Single).is_err());
        assert!(Dendrogram::from_merges(3, vec![m(0, 1, 0.3, 2), m(2, 3, 0.1, 3)], Linkage::Single).is_err());
        assert!(Dendrogram::from_merges(3, vec![m(0, 1, 0.1, 2), m(1, 2, 0.3, 2)], Linkage::Single).is_err());
    }
}
