//! Cuthill-McKee bandwidth reduction with multi-start search, and the
//! per-partition third-stage reordering of diagonal blocks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::{BandedMatrix, PartitionLayout};
use crate::error::Result;
use crate::real::Real;
use crate::sparse::{invert_permutation, SparseMatrix};

/// At most this many CM orderings are produced per connected component.
pub const MAX_CM_ITERATIONS: usize = 3;

/// Symmetrized adjacency of a square pattern, without self loops. Each
/// neighbor list is sorted by ascending degree, ties by ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjGraph {
    adj: Vec<Vec<usize>>,
    degree: Vec<usize>,
}

impl AdjGraph {
    /// Build from `(i, j)` positions of an `n x n` pattern.
    pub fn from_pattern<I: IntoIterator<Item = (usize, usize)>>(n: usize, pattern: I) -> Self {
        let mut adj = vec![Vec::new(); n];
        for (i, j) in pattern {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
        for list in &mut adj {
            list.sort_by_key(|&v| (degree[v], v));
        }
        Self { adj, degree }
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degree[i]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degree
    }

    /// Half-bandwidth of the pattern after the symmetric relabeling
    /// `perm[new] = old`.
    pub fn bandwidth_under(&self, perm: &[usize]) -> usize {
        let pos = invert_permutation(perm);
        (0..self.n())
            .flat_map(|i| self.adj[i].iter().map(move |&j| (i, j)))
            .map(|(i, j)| pos[i].abs_diff(pos[j]))
            .max()
            .unwrap_or(0)
    }
}

/// Nonzero pattern of `a` (explicit zeros ignored), symmetrized.
pub fn build_graph(a: &SparseMatrix) -> AdjGraph {
    AdjGraph::from_pattern(
        a.n(),
        a.triplets().filter(|t| t.2 != 0.0).map(|(i, j, _)| (i, j)),
    )
}

/// Breadth-first layering of one connected component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStructure {
    pub start: usize,
    /// Component nodes in CM order (level by level).
    pub order: Vec<usize>,
    /// Level of `order[t]`.
    pub levels: Vec<usize>,
}

impl LevelStructure {
    /// Cuthill-McKee traversal from `start`: each visited node appends its
    /// unvisited neighbors in (degree, index) order.
    fn traverse(g: &AdjGraph, start: usize, visited: &mut [bool]) -> Self {
        let mut order = vec![start];
        let mut levels = vec![0];
        visited[start] = true;
        let mut head = 0;
        while head < order.len() {
            let (v, l) = (order[head], levels[head]);
            for &u in g.neighbors(v) {
                if !visited[u] {
                    visited[u] = true;
                    order.push(u);
                    levels.push(l + 1);
                }
            }
            head += 1;
        }
        for &v in &order {
            visited[v] = false;
        }
        Self {
            start,
            order,
            levels,
        }
    }

    /// Number of levels.
    pub fn height(&self) -> usize {
        self.levels.last().map_or(0, |l| l + 1)
    }

    /// Largest number of nodes on one level.
    pub fn width(&self) -> usize {
        let mut counts = vec![0usize; self.height()];
        for &l in &self.levels {
            counts[l] += 1;
        }
        counts.into_iter().max().unwrap_or(0)
    }

    pub fn last_level(&self) -> impl Iterator<Item = usize> + '_ {
        let h = self.height();
        self.order
            .iter()
            .zip(&self.levels)
            .filter(move |&(_, &l)| l + 1 == h)
            .map(|(&v, _)| v)
    }

    pub fn level_of(&self, v: usize) -> Option<usize> {
        self.order
            .iter()
            .position(|&u| u == v)
            .map(|t| self.levels[t])
    }

    /// Every edge within the component spans at most one level.
    pub fn is_valid_layering(&self, g: &AdjGraph) -> bool {
        let mut lv = vec![usize::MAX; g.n()];
        for (&v, &l) in self.order.iter().zip(&self.levels) {
            lv[v] = l;
        }
        self.order.iter().all(|&v| {
            g.neighbors(v)
                .iter()
                .all(|&u| lv[u] != usize::MAX && lv[u].abs_diff(lv[v]) <= 1)
        })
    }

    fn local_bandwidth(&self, g: &AdjGraph) -> usize {
        let mut pos = vec![0usize; g.n()];
        for (t, &v) in self.order.iter().enumerate() {
            pos[v] = t;
        }
        self.order
            .iter()
            .flat_map(|&v| g.neighbors(v).iter().map(move |&u| (u, v)))
            .map(|(u, v)| pos[u].abs_diff(pos[v]))
            .max()
            .unwrap_or(0)
    }
}

/// Output of a CM reordering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmResult {
    /// `perm[new] = old`
    pub perm: Vec<usize>,
    pub achieved_k: usize,
    pub starts_tried: Vec<usize>,
    /// Winning level structure of each component, in output order.
    pub components: Vec<LevelStructure>,
}

impl CmResult {
    pub fn identity(n: usize, k: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            achieved_k: k,
            starts_tried: Vec::new(),
            components: Vec::new(),
        }
    }
}

fn min_degree_node<I: IntoIterator<Item = usize>>(g: &AdjGraph, nodes: I) -> Option<usize> {
    nodes.into_iter().min_by_key(|&v| (g.degree(v), v))
}

/// Multi-start CM on one component. Returns the best level structure and
/// its local bandwidth.
fn reorder_component(
    g: &AdjGraph,
    first: usize,
    visited: &mut [bool],
    rng: &mut ChaCha8Rng,
    tried: &mut Vec<usize>,
) -> (LevelStructure, usize) {
    let mut considered = vec![first];
    let first_ls = LevelStructure::traverse(g, first, visited);
    tried.push(first);
    let mut best_k = first_ls.local_bandwidth(g);
    let mut best = first_ls.clone();
    let mut incumbent = first_ls;

    for _ in 1..MAX_CM_ITERATIONS {
        let next = min_degree_node(
            g,
            incumbent.last_level().filter(|v| !considered.contains(v)),
        )
        .or_else(|| {
            let mut pool: Vec<usize> = incumbent
                .order
                .iter()
                .copied()
                .filter(|v| !considered.contains(v))
                .collect();
            pool.sort_unstable();
            (!pool.is_empty()).then(|| pool[rng.random_range(0..pool.len())])
        });
        let Some(start) = next else { break };
        considered.push(start);
        tried.push(start);
        let ls = LevelStructure::traverse(g, start, visited);
        let k = ls.local_bandwidth(g);
        let deeper = ls.height() > incumbent.height() && ls.width() < incumbent.width();
        if k < best_k {
            best_k = k;
            best = ls.clone();
        }
        if !deeper {
            break;
        }
        incumbent = ls;
    }
    (best, best_k)
}

/// Multi-start Cuthill-McKee. Components are ordered contiguously, in
/// ascending order of their minimum-degree node; `seed` drives the random
/// fallback start.
pub fn cm_reorder(g: &AdjGraph, seed: u64) -> CmResult {
    let n = g.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // components and their minimum-degree representatives
    let mut comp = vec![usize::MAX; n];
    let mut reps = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = reps.len();
        comp[s] = id;
        let mut stack = vec![s];
        let mut members = vec![s];
        while let Some(v) = stack.pop() {
            for &u in g.neighbors(v) {
                if comp[u] == usize::MAX {
                    comp[u] = id;
                    stack.push(u);
                    members.push(u);
                }
            }
        }
        reps.push(min_degree_node(g, members).expect("nonempty component"));
    }
    reps.sort_unstable();

    let mut visited = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    let mut starts_tried = Vec::new();
    let mut components = Vec::with_capacity(reps.len());
    for rep in reps {
        let (ls, _) = reorder_component(g, rep, &mut visited, &mut rng, &mut starts_tried);
        perm.extend_from_slice(&ls.order);
        components.push(ls);
    }
    let achieved_k = g.bandwidth_under(&perm);
    CmResult {
        perm,
        achieved_k,
        starts_tried,
        components,
    }
}

/// Graph of the diagonal block `[off, off + size)` of a banded matrix.
pub fn block_graph<T: Real>(a: &BandedMatrix<T>, off: usize, size: usize) -> AdjGraph {
    let k = a.k();
    let pattern = (0..size).flat_map(move |i| {
        let lo = i.saturating_sub(k);
        let hi = (i + k + 1).min(size);
        (lo..hi).map(move |j| (i, j))
    });
    let entries: Vec<(usize, usize)> = pattern
        .filter(|&(i, j)| a.get(off + i, off + j) != T::zero())
        .collect();
    AdjGraph::from_pattern(size, entries)
}

/// Reorder each diagonal block independently. A block keeps its identity
/// ordering when CM does not reduce its bandwidth, so every resulting
/// `K_i` is at most the global `K`. Couplings are untouched.
pub fn third_stage<T: Real>(
    a: &BandedMatrix<T>,
    layout: &PartitionLayout,
    seed: u64,
) -> Result<(Vec<CmResult>, PartitionLayout)> {
    let results: Vec<CmResult> = (0..layout.p())
        .into_par_iter()
        .map(|i| {
            let size = layout.sizes()[i];
            let g = block_graph(a, layout.offsets()[i], size);
            let identity_k = g.bandwidth_under(&(0..size).collect::<Vec<_>>());
            let cm = cm_reorder(&g, seed);
            if cm.achieved_k < identity_k {
                cm
            } else {
                CmResult {
                    starts_tried: cm.starts_tried,
                    ..CmResult::identity(size, identity_k)
                }
            }
        })
        .collect();
    let ks = results.iter().map(|r| r.achieved_k).collect();
    let layout = layout.clone().with_partition_bandwidths(ks)?;
    Ok((results, layout))
}
