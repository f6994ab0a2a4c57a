//! Local-search probing: nearest-neighbour construction, 2-opt
//! first-improvement descent, and the random-walk ruggedness coefficient.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{stats3, TspInstance};
use crate::error::{EpmError, Result};

/// Accepted-move threshold; improvements smaller than this are treated as
/// noise so descent terminates under floating-point cost updates.
const IMPROVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub runs: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl ProbeConfig {
    pub fn default_with_seed(seed: u64) -> Self {
        ProbeConfig {
            runs: 20,
            max_steps: 1000,
            seed,
        }
    }
}

pub fn tour_cost(inst: &TspInstance, tour: &[usize]) -> f64 {
    let n = tour.len();
    (0..n).map(|i| inst.cost(tour[i], tour[(i + 1) % n])).sum()
}

/// Greedy nearest-neighbour construction from a start node; ties break
/// toward the lowest node index.
pub fn nearest_neighbor_tour(inst: &TspInstance, start: usize) -> Vec<usize> {
    let n = inst.n();
    let mut visited = vec![false; n];
    let mut tour = Vec::with_capacity(n);
    let mut current = start;
    visited[start] = true;
    tour.push(start);
    for _ in 1..n {
        let mut best = usize::MAX;
        for j in 0..n {
            if !visited[j] && (best == usize::MAX || inst.cost(current, j) < inst.cost(current, best))
            {
                best = j;
            }
        }
        visited[best] = true;
        tour.push(best);
        current = best;
    }
    tour
}

/// 2-opt move delta for reversing the segment (i+1 ..= j) of the tour.
fn move_delta(inst: &TspInstance, tour: &[usize], i: usize, j: usize) -> f64 {
    let n = tour.len();
    let (a, b) = (tour[i], tour[i + 1]);
    let (c, d) = (tour[j], tour[(j + 1) % n]);
    inst.cost(a, c) + inst.cost(b, d) - inst.cost(a, b) - inst.cost(c, d)
}

/// First-improvement 2-opt descent capped at `max_steps` accepted moves.
/// Returns (tour, accepted moves, final cost).
pub fn two_opt_descent(
    inst: &TspInstance,
    mut tour: Vec<usize>,
    max_steps: usize,
) -> (Vec<usize>, usize, f64) {
    let n = tour.len();
    let mut cost = tour_cost(inst, &tour);
    let mut steps = 0;
    'descent: while steps < max_steps {
        for i in 0..n - 1 {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue; // both edges share the wrap-around node
                }
                let delta = move_delta(inst, &tour, i, j);
                if delta < -IMPROVE_TOL {
                    tour[i + 1..=j].reverse();
                    cost += delta;
                    steps += 1;
                    continue 'descent;
                }
            }
        }
        break;
    }
    (tour, steps, cost)
}

/// True when some 2-opt move still improves the tour beyond the tolerance.
pub fn has_improving_move(inst: &TspInstance, tour: &[usize]) -> bool {
    let n = tour.len();
    for i in 0..n - 1 {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if move_delta(inst, tour, i, j) < -IMPROVE_TOL {
                return true;
            }
        }
    }
    false
}

/// Undirected edge set of a tour, as (min, max) node pairs.
fn edge_set(tour: &[usize]) -> Vec<(usize, usize)> {
    let n = tour.len();
    let mut edges: Vec<(usize, usize)> = (0..n)
        .map(|i| {
            let a = tour[i];
            let b = tour[(i + 1) % n];
            (a.min(b), a.max(b))
        })
        .collect();
    edges.sort_unstable();
    edges
}

fn shared_edges(a: &[(usize, usize)], b: &[(usize, usize)]) -> usize {
    let mut count = 0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// The 18 local-search probing features: per run a nearest-neighbour
/// construction followed by a capped 2-opt descent, then distributional
/// statistics across runs, edge-set Hamming distances between the local
/// minima, and per-edge frequencies across minima.
pub fn local_search_probe(inst: &TspInstance, config: ProbeConfig) -> Result<Vec<f64>> {
    if inst.n() < 4 {
        return Err(EpmError::Domain(
            "local-search probing needs n >= 4".into(),
        ));
    }
    let n = inst.n();
    let results: Vec<(f64, f64, f64, f64, Vec<(usize, usize)>)> = (0..config.runs)
        .into_par_iter()
        .map(|r| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(r as u64).wrapping_mul(0x9E3779B97F4A7C15 | 1));
            let start = rng.gen_range(0..n);
            let tour = nearest_neighbor_tour(inst, start);
            let construction = tour_cost(inst, &tour);
            let (local, steps, final_cost) = two_opt_descent(inst, tour, config.max_steps);
            let improvement = if steps == 0 {
                0.0
            } else {
                (construction - final_cost) / steps as f64
            };
            (
                construction,
                final_cost,
                improvement,
                steps as f64,
                edge_set(&local),
            )
        })
        .collect();

    let constructions: Vec<f64> = results.iter().map(|r| r.0).collect();
    let finals: Vec<f64> = results.iter().map(|r| r.1).collect();
    let improvements: Vec<f64> = results.iter().map(|r| r.2).collect();
    let steps: Vec<f64> = results.iter().map(|r| r.3).collect();

    let mut hamming = Vec::new();
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            let shared = shared_edges(&results[i].4, &results[j].4);
            hamming.push((n - shared) as f64);
        }
    }
    let hamming_stats = if hamming.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        stats3(&hamming)
    };

    let mut edge_counts: std::collections::HashMap<(usize, usize), usize> =
        std::collections::HashMap::new();
    for r in &results {
        for &e in &r.4 {
            *edge_counts.entry(e).or_insert(0) += 1;
        }
    }
    let mut probs: Vec<f64> = edge_counts
        .values()
        .map(|&c| c as f64 / config.runs as f64)
        .collect();
    probs.sort_by(|a, b| a.total_cmp(b));
    let prob_stats = stats3(&probs);

    let mut out = Vec::with_capacity(18);
    for (m, v, s) in [
        stats3(&constructions),
        stats3(&finals),
        stats3(&improvements),
        stats3(&steps),
        hamming_stats,
        prob_stats,
    ] {
        out.extend([m, v, s]);
    }
    Ok(out)
}

/// Lag-1 autocorrelation of tour cost along an uninformed random 2-opt walk;
/// constant series report 0.
pub fn autocorrelation_coefficient(inst: &TspInstance, walk_len: usize, seed: u64) -> Result<f64> {
    if inst.n() < 4 {
        return Err(EpmError::Domain("random walk needs n >= 4".into()));
    }
    let n = inst.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tour: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    tour.shuffle(&mut rng);
    let mut cost = tour_cost(inst, &tour);
    let mut series = Vec::with_capacity(walk_len + 1);
    series.push(cost);
    for _ in 0..walk_len {
        // uniform random valid 2-opt move
        let (i, j) = loop {
            let i = rng.gen_range(0..n - 1);
            let j = rng.gen_range(0..n);
            if j >= i + 2 && !(i == 0 && j == n - 1) {
                break (i, j);
            }
        };
        let delta = move_delta(inst, &tour, i, j);
        tour[i + 1..=j].reverse();
        cost += delta;
        series.push(cost);
    }
    let a = &series[..series.len() - 1];
    let b = &series[1..];
    match crate::metrics::pearson_cc(a, b) {
        Ok(r) => Ok(r.clamp(-1.0, 1.0)),
        Err(_) => Ok(0.0), // constant series by policy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit_square() -> TspInstance {
        TspInstance::from_coords(
            vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)],
            false,
        )
        .unwrap()
    }

    #[test]
    fn nn_tour_visits_all_nodes() {
        let inst = unit_square();
        let tour = nearest_neighbor_tour(&inst, 0);
        let mut sorted = tour.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn square_nn_tour_is_two_opt_optimal() {
        // the perimeter tour admits no improving move: probing reports zero
        // steps and zero improvement
        let inst = unit_square();
        let tour = nearest_neighbor_tour(&inst, 0);
        assert!(!has_improving_move(&inst, &tour));
        let (t, steps, cost) = two_opt_descent(&inst, tour, 1000);
        assert_eq!(steps, 0);
        assert_eq!(cost, 4.0);
        assert!(!has_improving_move(&inst, &t));
    }

    #[test]
    fn descent_strictly_decreases_and_ends_local_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(5..=8);
            let coords: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)))
                .collect();
            let inst = TspInstance::from_coords(coords, false).unwrap();
            let mut tour: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            tour.shuffle(&mut rng);
            let start_cost = tour_cost(&inst, &tour);
            let (t, steps, cost) = two_opt_descent(&inst, tour, 1000);
            assert!(cost <= start_cost + 1e-9);
            assert!(!has_improving_move(&inst, &t), "still improvable");
            // running cost matches recomputation
            assert!((tour_cost(&inst, &t) - cost).abs() < 1e-6);
            let _ = steps;
        }
    }

    #[test]
    fn probe_deterministic_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let coords: Vec<(f64, f64)> = (0..15)
            .map(|_| (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)))
            .collect();
        let inst = TspInstance::from_coords(coords, false).unwrap();
        let a = local_search_probe(&inst, ProbeConfig::default_with_seed(5)).unwrap();
        let b = local_search_probe(&inst, ProbeConfig::default_with_seed(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 18);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identical_minima_give_zero_distances_and_unit_probs() {
        // a square has one 2-opt optimum reachable from every start
        let inst = unit_square();
        let f = local_search_probe(
            &inst,
            ProbeConfig {
                runs: 8,
                max_steps: 1000,
                seed: 1,
            },
        )
        .unwrap();
        // hamming distance stats (indices 12..15) all zero
        assert_eq!(&f[12..15], &[0.0, 0.0, 0.0]);
        // edge probability mean 1, vc 0, skew 0
        assert_eq!(&f[15..18], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn probe_rejects_tiny_instances() {
        let inst = TspInstance::from_coords(vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], false)
            .unwrap();
        assert!(local_search_probe(&inst, ProbeConfig::default_with_seed(0)).is_err());
    }

    #[test]
    fn acf_constant_costs_zero() {
        let m = vec![
            vec![0.0, 1.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0, 0.0],
        ];
        let inst = TspInstance::from_cost_matrix(m).unwrap();
        assert_eq!(autocorrelation_coefficient(&inst, 500, 3).unwrap(), 0.0);
    }

    #[test]
    fn acf_bounded_and_smooth_on_clustered_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // clustered metric instance: 4 tight clusters far apart
        let mut coords = Vec::new();
        for c in 0..4 {
            let cx = (c % 2) as f64 * 100.0;
            let cy = (c / 2) as f64 * 100.0;
            for _ in 0..25 {
                coords.push((cx + rng.gen_range(0.0..5.0), cy + rng.gen_range(0.0..5.0)));
            }
        }
        let inst = TspInstance::from_coords(coords, false).unwrap();
        let r = autocorrelation_coefficient(&inst, 2000, 9).unwrap();
        assert!(r >= -1.0 && r <= 1.0);
        assert!(r > 0.5, "lag-1 autocorrelation {}", r);
        // recomputation with the same seed is identical
        assert_eq!(r, autocorrelation_coefficient(&inst, 2000, 9).unwrap());
    }
}
