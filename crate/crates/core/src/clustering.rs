//! Agglomerative average-linkage clustering over the similarity matrix,
//! with a silhouette-selected flat cut.
//!
//! At every step the pair of clusters with the highest average pairwise
//! correlation merges; ties break on the lexicographically smallest
//! (min-leaf, min-leaf) pair so runs are reproducible. Inter-cluster
//! sums update by addition (the weighted Lance-Williams form of average
//! linkage), giving O(n²) total work on typical inputs instead of
//! recomputing every pair sum from scratch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::SimilarityMatrix;

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("similarity matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("need at least {need} items, got {got}")]
    TooFewItems { need: usize, got: usize },
    #[error("k={k} out of range [{lo}, {hi}]")]
    KOutOfRange { k: usize, lo: usize, hi: usize },
    #[error("bad assignment: {0}")]
    BadAssignment(String),
}

/// One merge step. Cluster ids follow the usual convention: leaves are
/// 0..n-1 and the t-th merge creates cluster n+t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

/// Stepwise dendrogram: exactly n-1 merges over n leaves.
#[derive(Debug, Clone)]
pub struct Dendrogram {
    n_leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }
}

/// Candidate pair ordering: higher linkage similarity wins; ties fall to
/// the smaller (min-leaf, min-leaf) key. `partner_epoch` detects stale
/// entries after the partner's cluster has changed.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    sim: f64,
    p: usize,
    q: usize,
    partner: usize,
    partner_epoch: usize,
}

fn beats(a: &Candidate, b: &Candidate) -> bool {
    a.sim > b.sim || (a.sim == b.sim && (a.p, a.q) < (b.p, b.q))
}

/// Greedy average-linkage agglomeration over a symmetric similarity
/// matrix.
pub fn build_dendrogram(sim: &SimilarityMatrix) -> Result<Dendrogram, ClusteringError> {
    let n = sim.n();
    if n < 2 {
        return Err(ClusteringError::TooFewItems { need: 2, got: n });
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if sim.get(i, j) != sim.get(j, i) {
                return Err(ClusteringError::NotSymmetric { i, j });
            }
        }
    }

    // pair_sum[i][j] = sum of leaf-pair similarities between clusters in
    // slots i and j; the linkage value is pair_sum / (|u|*|v|).
    let mut pair_sum: Vec<f64> = (0..n * n).map(|k| sim.get(k / n, k % n)).collect();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut min_leaf: Vec<usize> = (0..n).collect();
    let mut cluster_id: Vec<usize> = (0..n).collect();
    let mut epoch = vec![0usize; n];
    let mut best: Vec<Option<Candidate>> = vec![None; n];

    struct State<'a> {
        n: usize,
        pair_sum: &'a [f64],
        size: &'a [usize],
        min_leaf: &'a [usize],
        active: &'a [bool],
        epoch: &'a [usize],
    }
    let candidate = |s: &State, owner: usize, partner: usize, sum: f64| -> Candidate {
        let (p, q) = if s.min_leaf[owner] <= s.min_leaf[partner] {
            (s.min_leaf[owner], s.min_leaf[partner])
        } else {
            (s.min_leaf[partner], s.min_leaf[owner])
        };
        Candidate {
            sim: sum / (s.size[owner] * s.size[partner]) as f64,
            p,
            q,
            partner,
            partner_epoch: s.epoch[partner],
        }
    };
    // Full scan of one slot's row; the row is contiguous in memory.
    let rescan = |s: &State, i: usize| -> Option<Candidate> {
        let row = &s.pair_sum[i * s.n..(i + 1) * s.n];
        let mut out: Option<Candidate> = None;
        for (j, &sum) in row.iter().enumerate() {
            if j != i && s.active[j] {
                let c = candidate(s, i, j, sum);
                if out.as_ref().is_none_or(|cur| beats(&c, cur)) {
                    out = Some(c);
                }
            }
        }
        out
    };

    macro_rules! state {
        () => {
            &State {
                n,
                pair_sum: &pair_sum,
                size: &size,
                min_leaf: &min_leaf,
                active: &active,
                epoch: &epoch,
            }
        };
    }

    for (i, slot) in best.iter_mut().enumerate() {
        *slot = rescan(state!(), i);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for t in 0..(n - 1) {
        // Global winner among the per-slot bests. A cached entry whose
        // partner cluster has since changed is a stale upper bound
        // (average linkage can only pull a cluster's best value down),
        // so it is revalidated lazily, only when it reaches the top.
        let (u, v, win) = loop {
            let mut win_slot = usize::MAX;
            for i in 0..n {
                if active[i] {
                    if let Some(c) = &best[i] {
                        if win_slot == usize::MAX || beats(c, best[win_slot].as_ref().unwrap()) {
                            win_slot = i;
                        }
                    }
                }
            }
            let c = best[win_slot].unwrap();
            if active[c.partner] && epoch[c.partner] == c.partner_epoch {
                break (win_slot, c.partner, c);
            }
            best[win_slot] = rescan(state!(), win_slot);
        };
        // Record with the smaller min-leaf side first.
        let (first, second) = if min_leaf[u] <= min_leaf[v] { (u, v) } else { (v, u) };
        merges.push(Merge {
            a: cluster_id[first],
            b: cluster_id[second],
            similarity: win.sim,
        });

        // Merge v into u.
        active[v] = false;
        for k in 0..n {
            if k != u && k != v && active[k] {
                let merged = pair_sum[u * n + k] + pair_sum[v * n + k];
                pair_sum[u * n + k] = merged;
                pair_sum[k * n + u] = merged;
            }
        }
        size[u] += size[v];
        min_leaf[u] = min_leaf[u].min(min_leaf[v]);
        cluster_id[u] = n + t;
        epoch[u] = t + 1;
        best[v] = None;

        best[u] = rescan(state!(), u);
        for k in 0..n {
            if k == u || !active[k] {
                continue;
            }
            // Entries pointing elsewhere stay valid; the new cluster
            // just has to be offered as a candidate.
            let c = candidate(state!(), k, u, pair_sum[u * n + k]);
            if best[k].as_ref().is_none_or(|cur| beats(&c, cur)) {
                best[k] = Some(c);
            }
        }
    }

    Ok(Dendrogram { n_leaves: n, merges })
}

/// Flat cut: undo the last k-1 merges and label the connected groups.
/// Labels are contiguous, assigned in order of each group's first leaf.
pub fn cut(dendrogram: &Dendrogram, k: usize) -> Result<Vec<usize>, ClusteringError> {
    let n = dendrogram.n_leaves;
    if k < 2 || k > n {
        return Err(ClusteringError::KOutOfRange { k, lo: 2, hi: n });
    }
    let applied = n - k;
    let mut parent: Vec<usize> = (0..n + applied).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (t, m) in dendrogram.merges[..applied].iter().enumerate() {
        let new_id = n + t;
        let ra = find(&mut parent, m.a);
        let rb = find(&mut parent, m.b);
        parent[ra] = new_id;
        parent[rb] = new_id;
    }
    let mut labels = Vec::with_capacity(n);
    let mut label_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    for leaf in 0..n {
        let root = find(&mut parent, leaf);
        let next = label_of_root.len();
        let label = *label_of_root.entry(root).or_insert(next);
        labels.push(label);
    }
    debug_assert_eq!(label_of_root.len(), k);
    Ok(labels)
}

/// Pairwise distance matrix for silhouette scoring; built from a
/// similarity matrix as d = 1 - corr.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_similarity(sim: &SimilarityMatrix) -> Self {
        let n = sim.n();
        let values = (0..n * n).map(|k| 1.0 - sim.get(k / n, k % n)).collect();
        DistanceMatrix { n, values }
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n);
        DistanceMatrix { n, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Per-item silhouette values and their mean.
#[derive(Debug, Clone)]
pub struct SilhouetteReport {
    /// Cohesion a(x): mean distance to co-members (0 for singletons).
    pub cohesion: Vec<f64>,
    /// Separation b(x): smallest mean distance to another cluster.
    pub separation: Vec<f64>,
    /// s(x) = (b-a)/max(a,b), 0 for singletons.
    pub scores: Vec<f64>,
    /// Mean of the per-item scores.
    pub coefficient: f64,
}

/// Silhouette of a flat assignment over a distance matrix.
pub fn silhouette(
    assignment: &[usize],
    distances: &DistanceMatrix,
) -> Result<SilhouetteReport, ClusteringError> {
    let n = assignment.len();
    if n != distances.n() {
        return Err(ClusteringError::BadAssignment(format!(
            "{n} labels for a {}x{} distance matrix",
            distances.n(),
            distances.n()
        )));
    }
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(ClusteringError::KOutOfRange { k, lo: 2, hi: n });
    }
    let mut counts = vec![0usize; k];
    for &label in assignment {
        if label >= k {
            return Err(ClusteringError::BadAssignment(format!("label {label} out of range")));
        }
        counts[label] += 1;
    }
    if counts.contains(&0) {
        return Err(ClusteringError::BadAssignment("empty cluster label".into()));
    }

    let mut cohesion = vec![0f64; n];
    let mut separation = vec![0f64; n];
    let mut scores = vec![0f64; n];
    let mut sums = vec![0f64; k];
    for x in 0..n {
        sums.fill(0.0);
        for y in 0..n {
            if y != x {
                sums[assignment[y]] += distances.get(x, y);
            }
        }
        let own = assignment[x];
        let b = (0..k)
            .filter(|&l| l != own)
            .map(|l| sums[l] / counts[l] as f64)
            .fold(f64::INFINITY, f64::min);
        separation[x] = b;
        if counts[own] == 1 {
            // Singleton convention: s = 0.
            cohesion[x] = 0.0;
            scores[x] = 0.0;
        } else {
            let a = sums[own] / (counts[own] - 1) as f64;
            cohesion[x] = a;
            let denom = a.max(b);
            scores[x] = if denom == 0.0 { 0.0 } else { (b - a) / denom };
        }
    }
    let coefficient = scores.iter().sum::<f64>() / n as f64;
    Ok(SilhouetteReport { cohesion, separation, scores, coefficient })
}

/// A selected flat clustering.
#[derive(Debug, Clone)]
pub struct ClusterResult {
    /// Video id -> contiguous cluster label.
    pub assignment: BTreeMap<String, usize>,
    pub k: usize,
    pub silhouette: f64,
    labels: Vec<usize>,
    ids: Vec<String>,
}

impl ClusterResult {
    fn new(ids: &[String], labels: Vec<usize>, k: usize, silhouette: f64) -> Self {
        let assignment =
            ids.iter().cloned().zip(labels.iter().copied()).collect::<BTreeMap<_, _>>();
        ClusterResult { assignment, k, silhouette, labels, ids: ids.to_vec() }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Clusters as id lists, ordered by label.
    pub fn groups(&self) -> Vec<Vec<String>> {
        let mut groups = vec![Vec::new(); self.k];
        for (id, &label) in self.ids.iter().zip(&self.labels) {
            groups[label].push(id.clone());
        }
        groups
    }
}

/// Evaluates every cut k in [2, n-1] and returns the one maximizing the
/// silhouette coefficient; ties go to the smallest k.
pub fn select_clustering(sim: &SimilarityMatrix) -> Result<ClusterResult, ClusteringError> {
    let n = sim.n();
    if n < 3 {
        return Err(ClusteringError::TooFewItems { need: 3, got: n });
    }
    let dendrogram = build_dendrogram(sim)?;
    let distances = DistanceMatrix::from_similarity(sim);
    let mut chosen: Option<(usize, Vec<usize>, f64)> = None;
    for k in 2..=(n - 1) {
        let labels = cut(&dendrogram, k)?;
        let report = silhouette(&labels, &distances)?;
        if chosen.as_ref().is_none_or(|(_, _, sc)| report.coefficient > *sc) {
            chosen = Some((k, labels, report.coefficient));
        }
    }
    let (k, labels, sc) = chosen.unwrap();
    Ok(ClusterResult::new(sim.ids(), labels, k, sc))
}

/// Cuts at a caller-fixed k instead of selecting by silhouette.
pub fn cluster_with_k(sim: &SimilarityMatrix, k: usize) -> Result<ClusterResult, ClusteringError> {
    let dendrogram = build_dendrogram(sim)?;
    let labels = cut(&dendrogram, k)?;
    let sc = silhouette(&labels, &DistanceMatrix::from_similarity(sim))?.coefficient;
    Ok(ClusterResult::new(sim.ids(), labels, k, sc))
}

/// The clusters.json wire format.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClustersDoc {
    pub k: usize,
    pub silhouette: f64,
    pub clusters: Vec<Vec<String>>,
}

impl ClustersDoc {
    pub fn from_result(result: &ClusterResult) -> Self {
        ClustersDoc { k: result.k, silhouette: result.silhouette, clusters: result.groups() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("clusters document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ClusteringError> {
        serde_json::from_str(text)
            .map_err(|e| ClusteringError::BadAssignment(format!("clusters json: {e}")))
    }
}
