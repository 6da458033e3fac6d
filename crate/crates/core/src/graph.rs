//! Attention graphs and path-length analysis.
//!
//! Tokens become nodes; a directed edge `(i, j)` exists when the attention
//! weight exceeds the inclusion threshold, with length `1 / A_ij` so that
//! strong attention means short edges. Two path semantics are exposed:
//! unweighted hop counts, which measure how many attention applications are
//! needed for one token to influence another, and weighted shortest paths
//! over the reciprocal lengths. Conflating the two would make hop-count
//! statistics and edge-length statistics disagree, so both are first class.

use std::collections::BinaryHeap;
use std::collections::VecDeque;

use crate::attention::StochasticMatrix;
use crate::error::{Error, Result};

/// Hop count marking an unreachable pair.
pub const UNREACHABLE: u32 = u32::MAX;

/// Directed attention graph with reciprocal-weight edge lengths.
#[derive(Debug, Clone)]
pub struct AttentionGraph {
    n: usize,
    theta: f64,
    /// Outgoing edges per node, ascending target index: `(target, weight,
    /// length)`.
    adjacency: Vec<Vec<(usize, f64, f64)>>,
}

impl AttentionGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    /// True when the threshold removed every edge; reported, never fatal.
    pub fn is_edgeless(&self) -> bool {
        self.edge_count() == 0
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(src, out)| out.iter().map(move |&(dst, w, len)| (src, dst, w, len)))
    }
}

/// Build the graph of all off-diagonal pairs with `A_ij > theta`.
///
/// Self-loops are excluded (a token trivially reaches itself in zero hops);
/// masked key columns carry zero weight and never clear the threshold.
pub fn build_graph(a: &StochasticMatrix, theta: f64) -> Result<AttentionGraph> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidParameter {
            name: "theta",
            reason: "inclusion threshold must lie in [0, 1]",
            value: theta,
        });
    }
    let n = a.n();
    let w = a.weights();
    let mut adjacency = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let weight = w[(i, j)];
            if weight > theta {
                adjacency[i].push((j, weight, 1.0 / weight));
            }
        }
    }
    Ok(AttentionGraph { n, theta, adjacency })
}

/// All-pairs hop counts and their summary statistics.
#[derive(Debug, Clone)]
pub struct PathStats {
    /// `hops[i][j]`, with [`UNREACHABLE`] where no path exists and 0 on the
    /// diagonal.
    pub shortest_hops: Vec<Vec<u32>>,
    /// Mean over reachable ordered off-diagonal pairs.
    pub mean_hops: f64,
    /// Maximum over reachable ordered pairs (0 when none are reachable).
    pub max_hops: u32,
    pub unreachable_pairs: usize,
}

/// Breadth-first hop counts between all ordered pairs: the number of
/// attention applications needed for influence to travel.
pub fn shortest_hops(g: &AttentionGraph) -> PathStats {
    let n = g.n;
    let mut hops = vec![vec![UNREACHABLE; n]; n];
    let mut total: u64 = 0;
    let mut reachable: usize = 0;
    let mut max_hops = 0u32;
    for src in 0..n {
        let row = &mut hops[src];
        row[src] = 0;
        let mut queue = VecDeque::with_capacity(n);
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = row[u];
            for &(v, _, _) in &g.adjacency[u] {
                if row[v] == UNREACHABLE {
                    row[v] = du + 1;
                    queue.push_back(v);
                }
            }
        }
        for (dst, &h) in row.iter().enumerate() {
            if dst == src {
                continue;
            }
            if h != UNREACHABLE {
                total += h as u64;
                reachable += 1;
                max_hops = max_hops.max(h);
            }
        }
    }
    let pairs = n * n - n;
    PathStats {
        shortest_hops: hops,
        mean_hops: if reachable > 0 { total as f64 / reachable as f64 } else { 0.0 },
        max_hops,
        unreachable_pairs: pairs - reachable,
    }
}

/// Dijkstra over the reciprocal-weight edge lengths: `lengths[i][j]` is the
/// minimal total `1/A` along a directed path, `inf` when unreachable.
pub fn shortest_weighted_lengths(g: &AttentionGraph) -> Vec<Vec<f64>> {
    #[derive(PartialEq)]
    struct Entry(f64, usize);
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            // Min-heap on length, ties by ascending node index for
            // deterministic traversal.
            other
                .0
                .partial_cmp(&self.0)
                .unwrap()
                .then(other.1.cmp(&self.1))
        }
    }
    let n = g.n;
    let mut out = vec![vec![f64::INFINITY; n]; n];
    for src in 0..n {
        let dist = &mut out[src];
        dist[src] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Entry(0.0, src));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, _, len) in &g.adjacency[u] {
                let cand = d + len;
                if cand < dist[v] {
                    dist[v] = cand;
                    heap.push(Entry(cand, v));
                }
            }
        }
    }
    out
}

/// One row of the mean-path-versus-length table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PathLengthRow {
    pub variant: String,
    pub n_tokens: usize,
    pub seed: u64,
    pub mean_hops: f64,
    pub max_hops: u32,
    pub unreachable_pairs: usize,
}

/// Mean shortest-hop statistics for each sequence length and each attention
/// construction, one row per `(variant, n, seed)`.
///
/// The caller supplies a closure that builds the attention weights for a
/// given `(variant index, n, seed)`; this keeps the module independent of
/// how embeddings are produced.
pub fn mean_path_vs_length(
    variants: &[String],
    sequence_lengths: &[usize],
    seeds: &[u64],
    theta: f64,
    mut weights_for: impl FnMut(usize, usize, u64) -> Result<StochasticMatrix>,
) -> Result<Vec<PathLengthRow>> {
    let mut rows = Vec::new();
    for &n in sequence_lengths {
        for &seed in seeds {
            for (vi, vname) in variants.iter().enumerate() {
                let a = weights_for(vi, n, seed)?;
                let g = build_graph(&a, theta)?;
                let stats = shortest_hops(&g);
                rows.push(PathLengthRow {
                    variant: vname.clone(),
                    n_tokens: n,
                    seed,
                    mean_hops: stats.mean_hops,
                    max_hops: stats.max_hops,
                    unreachable_pairs: stats.unreachable_pairs,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::row_normalize;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_attention(n: usize) -> StochasticMatrix {
        row_normalize(&DMatrix::from_element(n, n, 1.0), None).unwrap()
    }

    #[test]
    fn uniform_attention_complete_digraph() {
        let g = build_graph(&uniform_attention(4), 0.0).unwrap();
        assert_eq!(g.edge_count(), 12);
        for (_, _, w, len) in g.edges() {
            assert!((w - 0.25).abs() < 1e-15);
            assert!((len - 4.0).abs() < 1e-12);
        }
        let stats = shortest_hops(&g);
        assert_eq!(stats.max_hops, 1);
        assert!((stats.mean_hops - 1.0).abs() < 1e-15);
        assert_eq!(stats.unreachable_pairs, 0);

        // theta = 1: nothing exceeds 1.
        let empty = build_graph(&uniform_attention(4), 1.0).unwrap();
        assert!(empty.is_edgeless());
        let stats = shortest_hops(&empty);
        assert_eq!(stats.unreachable_pairs, 12);
        assert_eq!(stats.mean_hops, 0.0);
    }

    #[test]
    fn directed_cycle_hops() {
        // Ring: each token attends its successor strongly, itself weakly.
        let n = 5;
        let mut score = DMatrix::zeros(n, n);
        for i in 0..n {
            score[(i, i)] = 0.1;
            score[(i, (i + 1) % n)] = 1.0;
        }
        let a = row_normalize(&score, None).unwrap();
        let g = build_graph(&a, 0.2).unwrap();
        let stats = shortest_hops(&g);
        for i in 0..n {
            for k in 1..n {
                assert_eq!(stats.shortest_hops[i][(i + k) % n], k as u32);
            }
        }
        assert_eq!(stats.max_hops, (n - 1) as u32);
    }

    /// Exhaustive Floyd-Warshall oracle on random thresholded instances.
    #[test]
    fn hops_match_floyd_warshall() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..40 {
            let n = 2 + (trial % 14);
            let raw = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() + 1e-3);
            let a = row_normalize(&raw, None).unwrap();
            let theta = rng.random::<f64>() * 0.3;
            let g = build_graph(&a, theta).unwrap();
            let stats = shortest_hops(&g);

            // Brute force: hop-count adjacency then full relaxation.
            let big = 1_000_000u32;
            let mut d = vec![vec![big; n]; n];
            for i in 0..n {
                d[i][i] = 0;
                for j in 0..n {
                    if i != j && a.weights()[(i, j)] > theta {
                        d[i][j] = 1;
                    }
                }
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let via = d[i][k].saturating_add(d[k][j]);
                        if via < d[i][j] {
                            d[i][j] = via;
                        }
                    }
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let want = if d[i][j] >= big { UNREACHABLE } else { d[i][j] };
                    assert_eq!(stats.shortest_hops[i][j], want, "trial {trial} ({i},{j})");
                }
            }
        }
    }

    /// Weighted lengths agree with a Floyd-Warshall relaxation of 1/A.
    #[test]
    fn weighted_lengths_match_floyd_warshall() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let n = 3 + (trial % 10);
            let raw = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() + 1e-3);
            let a = row_normalize(&raw, None).unwrap();
            let g = build_graph(&a, 0.02).unwrap();
            let got = shortest_weighted_lengths(&g);
            let mut d = vec![vec![f64::INFINITY; n]; n];
            for i in 0..n {
                d[i][i] = 0.0;
                for j in 0..n {
                    if i != j && a.weights()[(i, j)] > 0.02 {
                        d[i][j] = 1.0 / a.weights()[(i, j)];
                    }
                }
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        if d[i][k] + d[k][j] < d[i][j] {
                            d[i][j] = d[i][k] + d[k][j];
                        }
                    }
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let (a, b) = (got[i][j], d[i][j]);
                    if a.is_infinite() || b.is_infinite() {
                        assert_eq!(a.is_infinite(), b.is_infinite());
                    } else {
                        assert!((a - b).abs() < 1e-9, "trial {trial} ({i},{j})");
                    }
                }
            }
        }
    }

    /// Raising theta never shortens any path.
    #[test]
    fn monotone_in_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 10;
        let raw = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() + 1e-3);
        let a = row_normalize(&raw, None).unwrap();
        let lo = shortest_hops(&build_graph(&a, 0.02).unwrap());
        let hi = shortest_hops(&build_graph(&a, 0.08).unwrap());
        for i in 0..n {
            for j in 0..n {
                assert!(hi.shortest_hops[i][j] >= lo.shortest_hops[i][j]);
            }
        }
    }

    /// Weight-tied power-law attention at theta = 0 yields a complete graph:
    /// every pair interacts in a single step.
    #[test]
    fn power_law_graph_complete_at_zero_threshold() {
        use crate::attention::{
            fna_score, AttentionConfig, AttentionVariant, EmbeddingMatrix, Manifold,
            ProjectionSet,
        };
        use crate::kernel::FractionalOrder;
        let x = EmbeddingMatrix::new(crate::synthetic::gaussian_cloud(30, 4, 5.0, 3)).unwrap();
        let p = ProjectionSet::weight_tied_identity(4, DMatrix::identity(4, 4)).unwrap();
        let cfg = AttentionConfig::new(
            FractionalOrder::new(1.2).unwrap(),
            1.0,
            1,
            4,
            Manifold::Euclidean,
            AttentionVariant::Fna,
        )
        .unwrap();
        let a = row_normalize(&fna_score(&x, &p, &cfg).unwrap(), None).unwrap();
        let g = build_graph(&a, 0.0).unwrap();
        let stats = shortest_hops(&g);
        assert_eq!(stats.max_hops, 1);
        assert_eq!(stats.unreachable_pairs, 0);
    }

    #[test]
    fn two_token_mean_and_table_shape() {
        let rows = mean_path_vs_length(
            &["uniform".into()],
            &[2, 4],
            &[0, 1],
            0.0,
            |_, n, _| Ok(uniform_attention(n)),
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert!((r.mean_hops - 1.0).abs() < 1e-15);
        }
        assert!(build_graph(&uniform_attention(3), -0.1).is_err());
    }
}
