//! Solver-independent TSP instance features: problem size, cost-matrix,
//! minimum-spanning-tree, bottleneck cluster distances, 2-opt local-search
//! probing, landscape ruggedness, node-distribution and timing features.

pub mod parse;
pub mod probe;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{EpmError, Result};

/// A symmetric TSP instance, either as Euclidean coordinates (with the full
/// cost matrix derived) or as an explicit cost matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TspInstance {
    n: usize,
    costs: Vec<f64>,
    pub coords: Option<Vec<(f64, f64)>>,
    /// True when costs follow the TSPLIB EUC_2D nearest-integer convention.
    pub rounded: bool,
}

impl TspInstance {
    /// Builds from 2-D coordinates; `round` applies the TSPLIB EUC_2D
    /// nearest-integer distance convention.
    pub fn from_coords(coords: Vec<(f64, f64)>, round: bool) -> Result<Self> {
        let n = coords.len();
        if n < 3 {
            return Err(EpmError::Domain(format!(
                "instance needs >= 3 nodes, got {}",
                n
            )));
        }
        let mut costs = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let dx = coords[i].0 - coords[j].0;
                let dy = coords[i].1 - coords[j].1;
                let mut d = (dx * dx + dy * dy).sqrt();
                if round {
                    d = d.round();
                }
                costs[i * n + j] = d;
                costs[j * n + i] = d;
            }
        }
        Ok(TspInstance {
            n,
            costs,
            coords: Some(coords),
            rounded: round,
        })
    }

    /// Builds from a full cost matrix; it must be symmetric with a zero
    /// diagonal and nonnegative entries.
    pub fn from_cost_matrix(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let n = matrix.len();
        if n < 3 {
            return Err(EpmError::Domain(format!(
                "instance needs >= 3 nodes, got {}",
                n
            )));
        }
        let mut costs = vec![0.0; n * n];
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(EpmError::Schema("cost matrix must be square".into()));
            }
            for (j, &v) in row.iter().enumerate() {
                if i == j && v != 0.0 {
                    return Err(EpmError::Domain("cost matrix diagonal must be zero".into()));
                }
                if v < 0.0 || !v.is_finite() {
                    return Err(EpmError::Domain("costs must be finite and >= 0".into()));
                }
                if matrix[j][i] != v {
                    return Err(EpmError::Domain("cost matrix must be symmetric".into()));
                }
                costs[i * n + j] = v;
            }
        }
        Ok(TspInstance {
            n,
            costs,
            coords: None,
            rounded: false,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.costs[i * self.n + j]
    }

    /// Strict upper-triangle costs in row order.
    pub fn pairwise_costs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n - 1) / 2);
        for i in 0..self.n {
            for j in i + 1..self.n {
                out.push(self.cost(i, j));
            }
        }
        out
    }
}

/// Mean, variation coefficient (sample sd / mean), and skew (standardized
/// population third moment). Constant vectors, and vectors too short for a
/// spread estimate, report 0 for both vc and skew.
pub fn stats3(v: &[f64]) -> (f64, f64, f64) {
    assert!(!v.is_empty());
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    let sample_sd = (ss / (n - 1.0)).sqrt();
    if sample_sd < 1e-12 {
        return (mean, 0.0, 0.0);
    }
    let vc = if mean == 0.0 { 0.0 } else { sample_sd / mean };
    let pop_sd = (ss / n).sqrt();
    let m3: f64 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    (mean, vc, m3 / pop_sd.powi(3))
}

/// Cost statistics over all node pairs.
pub fn cost_matrix_features(inst: &TspInstance) -> (f64, f64, f64) {
    stats3(&inst.pairwise_costs())
}

/// Minimum spanning tree by Prim's algorithm; edges returned as (i, j, cost)
/// with i < j, sorted ascending by (cost, i, j).
pub fn mst_edges(inst: &TspInstance) -> Vec<(usize, usize, f64)> {
    let n = inst.n();
    let mut in_tree = vec![false; n];
    let mut best_cost = vec![f64::INFINITY; n];
    let mut best_from = vec![0usize; n];
    in_tree[0] = true;
    for j in 1..n {
        best_cost[j] = inst.cost(0, j);
    }
    let mut edges = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let mut pick = usize::MAX;
        for j in 0..n {
            if !in_tree[j] && (pick == usize::MAX || best_cost[j] < best_cost[pick]) {
                pick = j;
            }
        }
        let a = best_from[pick].min(pick);
        let b = best_from[pick].max(pick);
        edges.push((a, b, inst.cost(a, b)));
        in_tree[pick] = true;
        for j in 0..n {
            if !in_tree[j] && inst.cost(pick, j) < best_cost[j] {
                best_cost[j] = inst.cost(pick, j);
                best_from[j] = pick;
            }
        }
    }
    edges.sort_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    edges
}

/// MST features: (sum, mean, vc, skew) of edge costs followed by
/// (mean, vc, skew) of node degrees.
pub fn mst_features(inst: &TspInstance) -> [f64; 7] {
    let edges = mst_edges(inst);
    let costs: Vec<f64> = edges.iter().map(|e| e.2).collect();
    let sum: f64 = costs.iter().sum();
    let (mean, vc, skew) = stats3(&costs);
    let mut degrees = vec![0.0f64; inst.n()];
    for &(a, b, _) in &edges {
        degrees[a] += 1.0;
        degrees[b] += 1.0;
    }
    let (dmean, dvc, dskew) = stats3(&degrees);
    [sum, mean, vc, skew, dmean, dvc, dskew]
}

/// Bottleneck distances for all pairs: the minimum over paths of the maximum
/// edge cost, computed as the maximum edge on the unique MST path.
pub fn bottleneck_distances(inst: &TspInstance) -> Vec<f64> {
    let n = inst.n();
    let edges = mst_edges(inst);
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(a, b, c) in &edges {
        adj[a].push((b, c));
        adj[b].push((a, c));
    }
    // DFS from each source, tracking the max edge seen; emit upper triangle
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    let mut maxedge = vec![0.0f64; n];
    let mut visited = vec![false; n];
    for s in 0..n {
        for v in visited.iter_mut() {
            *v = false;
        }
        let mut stack = vec![s];
        visited[s] = true;
        maxedge[s] = 0.0;
        while let Some(u) = stack.pop() {
            for &(w, c) in &adj[u] {
                if !visited[w] {
                    visited[w] = true;
                    maxedge[w] = maxedge[u].max(c);
                    stack.push(w);
                }
            }
        }
        for t in s + 1..n {
            out.push(maxedge[t]);
        }
    }
    out
}

/// Cluster-distance features: stats over all-pairs bottleneck distances.
pub fn cluster_distance_features(inst: &TspInstance) -> (f64, f64, f64) {
    stats3(&bottleneck_distances(inst))
}

/// Node-distribution features over coordinates normalized to the rectangle
/// [(0,0), (400,400)].
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDistributionFeatures {
    pub cost_sd: f64,
    pub distinct_fractions: [f64; 4],
    pub centroid: (f64, f64),
    pub radius: f64,
    pub area: f64,
    pub nnd_sd: f64,
    pub nnd_vc: f64,
    pub clusters_per_node: f64,
    pub outliers_per_node: f64,
    pub cluster_size_vc: f64,
}

const NORM_SIDE: f64 = 400.0;
const GRID_CELLS: usize = 10; // 40 x 40 cells over the normalized square

pub fn node_distribution_features(inst: &TspInstance) -> Result<NodeDistributionFeatures> {
    let coords = inst.coords.as_ref().ok_or_else(|| {
        EpmError::FeatureUnavailable("node distribution needs coordinates".into())
    })?;
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in coords {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    if max_x - min_x <= 0.0 || max_y - min_y <= 0.0 {
        return Err(EpmError::Domain(
            "normalization failed: zero coordinate extent".into(),
        ));
    }
    let norm: Vec<(f64, f64)> = coords
        .iter()
        .map(|&(x, y)| {
            (
                (x - min_x) / (max_x - min_x) * NORM_SIDE,
                (y - min_y) / (max_y - min_y) * NORM_SIDE,
            )
        })
        .collect();
    let n = norm.len();

    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let dx = norm[i].0 - norm[j].0;
            let dy = norm[i].1 - norm[j].1;
            dists.push((dx * dx + dy * dy).sqrt());
        }
    }
    let dmean = dists.iter().sum::<f64>() / dists.len() as f64;
    let cost_sd = if dists.len() < 2 {
        0.0
    } else {
        (dists.iter().map(|d| (d - dmean).powi(2)).sum::<f64>() / (dists.len() - 1) as f64).sqrt()
    };

    let mut distinct_fractions = [0.0; 4];
    for (k, frac) in distinct_fractions.iter_mut().enumerate() {
        let scale = 10f64.powi(k as i32 + 1);
        let mut rounded: Vec<i64> = dists.iter().map(|d| (d * scale).round() as i64).collect();
        rounded.sort_unstable();
        rounded.dedup();
        *frac = rounded.len() as f64 / dists.len() as f64;
    }

    let cx = norm.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let cy = norm.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let radius = norm
        .iter()
        .map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n as f64;

    let (mut nmin_x, mut nmax_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut nmin_y, mut nmax_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &norm {
        nmin_x = nmin_x.min(x);
        nmax_x = nmax_x.max(x);
        nmin_y = nmin_y.min(y);
        nmax_y = nmax_y.max(y);
    }
    let area = (nmax_x - nmin_x) * (nmax_y - nmin_y);

    let nnd: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dx = norm[i].0 - norm[j].0;
                    let dy = norm[i].1 - norm[j].1;
                    (dx * dx + dy * dy).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let (nnd_mean, nnd_vc_raw, _) = stats3(&nnd);
    let nnd_sd = nnd_vc_raw * nnd_mean; // stats3 returns sample sd / mean

    // grid-density clustering: occupied 40x40 cells, 4-connected components;
    // a component with >= 2 points is a cluster, a single point alone in its
    // component is an outlier
    let cell_of = |p: &(f64, f64)| -> (usize, usize) {
        let cx = ((p.0 / (NORM_SIDE / GRID_CELLS as f64)) as usize).min(GRID_CELLS - 1);
        let cy = ((p.1 / (NORM_SIDE / GRID_CELLS as f64)) as usize).min(GRID_CELLS - 1);
        (cx, cy)
    };
    let mut counts = vec![vec![0usize; GRID_CELLS]; GRID_CELLS];
    for p in &norm {
        let (cx, cy) = cell_of(p);
        counts[cx][cy] += 1;
    }
    let mut seen = vec![vec![false; GRID_CELLS]; GRID_CELLS];
    let mut cluster_sizes = Vec::new();
    let mut outliers = 0usize;
    for sx in 0..GRID_CELLS {
        for sy in 0..GRID_CELLS {
            if counts[sx][sy] == 0 || seen[sx][sy] {
                continue;
            }
            let mut stack = vec![(sx, sy)];
            seen[sx][sy] = true;
            let mut total = 0usize;
            while let Some((x, y)) = stack.pop() {
                total += counts[x][y];
                let mut push = |nx: usize, ny: usize, stack: &mut Vec<(usize, usize)>| {
                    if counts[nx][ny] > 0 && !seen[nx][ny] {
                        seen[nx][ny] = true;
                        stack.push((nx, ny));
                    }
                };
                if x > 0 {
                    push(x - 1, y, &mut stack);
                }
                if x + 1 < GRID_CELLS {
                    push(x + 1, y, &mut stack);
                }
                if y > 0 {
                    push(x, y - 1, &mut stack);
                }
                if y + 1 < GRID_CELLS {
                    push(x, y + 1, &mut stack);
                }
            }
            if total >= 2 {
                cluster_sizes.push(total as f64);
            } else {
                outliers += 1;
            }
        }
    }
    let cluster_size_vc = if cluster_sizes.is_empty() {
        0.0
    } else {
        stats3(&cluster_sizes).1
    };

    Ok(NodeDistributionFeatures {
        cost_sd,
        distinct_fractions,
        centroid: (cx, cy),
        radius,
        area,
        nnd_sd,
        nnd_vc: nnd_vc_raw,
        clusters_per_node: cluster_sizes.len() as f64 / n as f64,
        outliers_per_node: outliers as f64 / n as f64,
        cluster_size_vc,
    })
}

/// One extracted feature row with its stable header.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureRow {
    pub names: Vec<String>,
    pub values: Vec<Option<f64>>,
}

/// Stable feature header shared by all instances.
pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = vec!["n_nodes".into()];
    for g in ["cost_mean", "cost_vc", "cost_skew"] {
        names.push(g.into());
    }
    for g in [
        "mst_cost_sum",
        "mst_cost_mean",
        "mst_cost_vc",
        "mst_cost_skew",
        "mst_degree_mean",
        "mst_degree_vc",
        "mst_degree_skew",
    ] {
        names.push(g.into());
    }
    for g in [
        "cluster_distance_mean",
        "cluster_distance_vc",
        "cluster_distance_skew",
    ] {
        names.push(g.into());
    }
    for group in [
        "ls2opt_construction",
        "ls2opt_localmin",
        "ls2opt_improvement",
        "ls2opt_steps",
        "ls2opt_min_distance",
        "ls2opt_edge_prob",
    ] {
        for s in ["mean", "vc", "skew"] {
            names.push(format!("{}_{}", group, s));
        }
    }
    names.push("acf_lag1".into());
    for g in [
        "time_cost_matrix_s",
        "time_mst_s",
        "time_cluster_s",
        "time_probe_s",
        "time_acf_s",
        "time_node_dist_s",
    ] {
        names.push(g.into());
    }
    for g in [
        "nd_cost_sd",
        "nd_distinct_1dp",
        "nd_distinct_2dp",
        "nd_distinct_3dp",
        "nd_distinct_4dp",
        "nd_centroid_x",
        "nd_centroid_y",
        "nd_radius",
        "nd_area",
        "nd_nnd_sd",
        "nd_nnd_vc",
        "nd_clusters_per_node",
        "nd_outliers_per_node",
        "nd_cluster_size_vc",
    ] {
        names.push(g.into());
    }
    names
}

/// Extracts every implemented feature group, recording per-group wall-clock
/// times as features. Non-timing values are deterministic for a given seed;
/// node-distribution features are unavailable markers for cost-matrix-only
/// instances.
pub fn extract_all(inst: &TspInstance, seed: u64) -> Result<FeatureRow> {
    let names = feature_names();
    let mut values: Vec<Option<f64>> = Vec::with_capacity(names.len());
    values.push(Some(inst.n() as f64));

    let t0 = Instant::now();
    let (cm, cv, cs) = cost_matrix_features(inst);
    let time_cost = t0.elapsed().as_secs_f64();
    values.extend([Some(cm), Some(cv), Some(cs)]);

    let t0 = Instant::now();
    let mst = mst_features(inst);
    let time_mst = t0.elapsed().as_secs_f64();
    values.extend(mst.iter().map(|&v| Some(v)));

    let t0 = Instant::now();
    let (bm, bv, bs) = cluster_distance_features(inst);
    let time_cluster = t0.elapsed().as_secs_f64();
    values.extend([Some(bm), Some(bv), Some(bs)]);

    let t0 = Instant::now();
    let probe = probe::local_search_probe(inst, probe::ProbeConfig::default_with_seed(seed))?;
    let time_probe = t0.elapsed().as_secs_f64();
    values.extend(probe.iter().map(|&v| Some(v)));

    let t0 = Instant::now();
    let acf = probe::autocorrelation_coefficient(inst, 2000, seed.wrapping_add(1))?;
    let time_acf = t0.elapsed().as_secs_f64();
    values.push(Some(acf));

    let t0 = Instant::now();
    let nd = node_distribution_features(inst);
    let time_nd = t0.elapsed().as_secs_f64();

    values.extend([
        Some(time_cost),
        Some(time_mst),
        Some(time_cluster),
        Some(time_probe),
        Some(time_acf),
        Some(time_nd),
    ]);

    match nd {
        Ok(nd) => {
            values.extend([
                Some(nd.cost_sd),
                Some(nd.distinct_fractions[0]),
                Some(nd.distinct_fractions[1]),
                Some(nd.distinct_fractions[2]),
                Some(nd.distinct_fractions[3]),
                Some(nd.centroid.0),
                Some(nd.centroid.1),
                Some(nd.radius),
                Some(nd.area),
                Some(nd.nnd_sd),
                Some(nd.nnd_vc),
                Some(nd.clusters_per_node),
                Some(nd.outliers_per_node),
                Some(nd.cluster_size_vc),
            ]);
        }
        Err(EpmError::FeatureUnavailable(_)) => {
            values.extend(std::iter::repeat(None).take(14));
        }
        Err(e) => return Err(e),
    }

    debug_assert_eq!(values.len(), names.len());
    Ok(FeatureRow { names, values })
}
