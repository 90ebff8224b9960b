//! Diagonal boosting: a row permutation maximizing the product of the
//! diagonal magnitudes, found as a minimum-cost perfect matching on the
//! bipartite row/column graph with costs `c_ij = log a_i - log |a_ij|`
//! (`a_i` the row's largest magnitude). Optional row/column scalings from
//! the matching duals bring the permuted matrix to I-matrix form: unit
//! diagonal magnitudes and off-diagonal magnitudes at most one.
//!
//! Stages: [`build_weights`], [`initial_match`] (tight-edge greedy),
//! [`perfect_match`] (Dijkstra shortest augmenting paths on reduced costs)
//! and [`extract_result`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SapError};
use crate::sparse::SparseMatrix;

/// Bipartite row/column graph with nonnegative edge costs in CSR form.
/// Structurally absent or zero-valued entries carry no edge (infinite cost).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBipartite {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    cost: Vec<f64>,
    row_max: Vec<f64>,
}

impl WeightedBipartite {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row_max(&self) -> &[f64] {
        &self.row_max
    }

    /// `(column, cost)` edges of row `i`, ascending column.
    pub fn edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.cost[r].iter().copied())
    }

    pub fn cost(&self, i: usize, j: usize) -> Option<f64> {
        self.edges(i).find(|&(c, _)| c == j).map(|(_, v)| v)
    }
}

/// Partial or perfect matching with dual variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchState {
    /// Column matched to each row.
    pub row_match: Vec<Option<usize>>,
    /// Row matched to each column.
    pub col_match: Vec<Option<usize>>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl MatchState {
    pub fn matched(&self) -> usize {
        self.row_match.iter().filter(|m| m.is_some()).count()
    }

    pub fn is_perfect(&self) -> bool {
        self.row_match.iter().all(Option::is_some)
    }

    /// Largest violation of dual feasibility `u_i + v_j <= c_ij` over all
    /// edges, and of complementary slackness on matched edges.
    pub fn dual_violation(&self, w: &WeightedBipartite) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..w.n {
            for (j, c) in w.edges(i) {
                let reduced = reduced_cost(c, self.u[i], self.v[j]);
                worst = worst.max(-reduced);
                if self.row_match[i] == Some(j) {
                    worst = worst.max(reduced.abs());
                }
            }
        }
        worst
    }

    pub fn total_cost(&self, w: &WeightedBipartite) -> f64 {
        (0..w.n)
            .filter_map(|i| self.row_match[i].map(|j| w.cost(i, j).expect("matched edges exist")))
            .sum()
    }
}

/// Output of diagonal boosting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbResult {
    /// `perm[new_row] = old_row`: row `perm[j]` of the input becomes row
    /// `j`, putting its matched entry on the diagonal.
    pub perm: Vec<usize>,
    /// Row scaling, indexed by original row.
    pub row_scale: Vec<f64>,
    /// Column scaling, indexed by column.
    pub col_scale: Vec<f64>,
    pub scaled: bool,
}

impl DbResult {
    /// `D_r Q A D_c` (unscaled when `scaled` is false).
    pub fn apply(&self, a: &SparseMatrix) -> SparseMatrix {
        let identity: Vec<usize> = (0..a.ncols()).collect();
        let pa = a.permute(&self.perm, &identity);
        if !self.scaled {
            return pa;
        }
        let rows: Vec<f64> = self.perm.iter().map(|&old| self.row_scale[old]).collect();
        pa.scale_rows_cols(&rows, &self.col_scale)
    }

    /// `D_r Q b`
    pub fn apply_rhs(&self, b: &[f64]) -> Vec<f64> {
        self.perm
            .iter()
            .map(|&old| b[old] * self.row_scale[old])
            .collect()
    }

    /// `x = D_c y`
    pub fn recover_solution(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.col_scale).map(|(a, b)| a * b).collect()
    }
}

#[inline]
fn reduced_cost(c: f64, u: f64, v: f64) -> f64 {
    (c - u) - v
}

/// Build the weighted bipartite graph. Fails on a row without nonzero
/// values.
pub fn build_weights(a: &SparseMatrix) -> Result<WeightedBipartite> {
    if !a.is_square() {
        return Err(SapError::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    let n = a.n();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(a.nnz());
    let mut cost = Vec::with_capacity(a.nnz());
    let mut row_max = Vec::with_capacity(n);
    row_ptr.push(0);
    for i in 0..n {
        let amax = a.row(i).map(|(_, v)| v.abs()).fold(0.0, f64::max);
        if amax == 0.0 {
            return Err(SapError::StructurallySingular { rows: vec![i] });
        }
        let log_max = amax.ln();
        for (j, v) in a.row(i) {
            if v != 0.0 {
                col_idx.push(j);
                cost.push(log_max - v.abs().ln());
            }
        }
        row_max.push(amax);
        row_ptr.push(col_idx.len());
    }
    Ok(WeightedBipartite {
        n,
        row_ptr,
        col_idx,
        cost,
        row_max,
    })
}

/// Row and column dual initialization followed by greedy matching of tight
/// edges (length-one augmenting paths), rows in ascending order, columns in
/// ascending order within a row.
pub fn initial_match(w: &WeightedBipartite) -> MatchState {
    let n = w.n;
    let u: Vec<f64> = (0..n)
        .map(|i| w.edges(i).map(|(_, c)| c).fold(f64::INFINITY, f64::min))
        .collect();
    let mut v = vec![f64::INFINITY; n];
    for (i, &ui) in u.iter().enumerate() {
        for (j, c) in w.edges(i) {
            v[j] = v[j].min(c - ui);
        }
    }
    // columns without edges never enter a matching
    for vj in &mut v {
        if !vj.is_finite() {
            *vj = 0.0;
        }
    }
    let mut row_match = vec![None; n];
    let mut col_match = vec![None; n];
    for i in 0..n {
        for (j, c) in w.edges(i) {
            if col_match[j].is_none() && reduced_cost(c, u[i], v[j]) <= 0.0 {
                row_match[i] = Some(j);
                col_match[j] = Some(i);
                break;
            }
        }
    }
    MatchState {
        row_match,
        col_match,
        u,
        v,
    }
}

#[derive(PartialEq)]
struct Frontier {
    dist: f64,
    col: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties by lowest column
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.col.cmp(&self.col))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Complete the matching by shortest augmenting paths from every free row.
/// Duals stay feasible after each augmentation.
pub fn perfect_match(mut state: MatchState, w: &WeightedBipartite) -> Result<MatchState> {
    let n = w.n;
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut scanned: Vec<usize> = Vec::new();
    let mut tree_rows: Vec<(usize, f64)> = Vec::new();
    let mut heap = BinaryHeap::new();

    for root in 0..n {
        if state.row_match[root].is_some() {
            continue;
        }
        for &j in &touched {
            dist[j] = f64::INFINITY;
            pred[j] = usize::MAX;
            done[j] = false;
        }
        touched.clear();
        scanned.clear();
        tree_rows.clear();
        heap.clear();

        let relax = |i: usize,
                     base: f64,
                     dist: &mut [f64],
                     pred: &mut [usize],
                     touched: &mut Vec<usize>,
                     heap: &mut BinaryHeap<Frontier>,
                     done: &[bool]| {
            for (j, c) in w.edges(i) {
                if done[j] {
                    continue;
                }
                let nd = base + reduced_cost(c, state.u[i], state.v[j]).max(0.0);
                if nd < dist[j] {
                    if dist[j].is_infinite() {
                        touched.push(j);
                    }
                    dist[j] = nd;
                    pred[j] = i;
                    heap.push(Frontier { dist: nd, col: j });
                }
            }
        };

        tree_rows.push((root, 0.0));
        relax(
            root,
            0.0,
            &mut dist,
            &mut pred,
            &mut touched,
            &mut heap,
            &done,
        );
        let mut end = None;
        while let Some(Frontier { dist: d, col: j }) = heap.pop() {
            if done[j] || d > dist[j] {
                continue;
            }
            done[j] = true;
            scanned.push(j);
            match state.col_match[j] {
                None => {
                    end = Some((j, d));
                    break;
                }
                Some(i) => {
                    tree_rows.push((i, d));
                    relax(i, d, &mut dist, &mut pred, &mut touched, &mut heap, &done);
                }
            }
        }

        let Some((end_col, delta)) = end else {
            let mut rows: Vec<usize> = tree_rows.iter().map(|&(i, _)| i).collect();
            rows.sort_unstable();
            return Err(SapError::StructurallySingular { rows });
        };

        for &(i, d) in &tree_rows {
            state.u[i] += delta - d;
        }
        for &j in &scanned {
            state.v[j] -= delta - dist[j];
        }

        let mut j = end_col;
        loop {
            let i = pred[j];
            let next = state.row_match[i];
            state.row_match[i] = Some(j);
            state.col_match[j] = Some(i);
            match next {
                Some(prev) if i != root => j = prev,
                _ => break,
            }
        }
    }
    Ok(state)
}

/// Permutation (and optional scalings) from a perfect matching:
/// `r_i = exp(u_i) / a_i`, `s_j = exp(v_j)`.
pub fn extract_result(
    state: &MatchState,
    w: &WeightedBipartite,
    apply_scaling: bool,
) -> Result<DbResult> {
    if !state.is_perfect() {
        let rows = (0..w.n).filter(|&i| state.row_match[i].is_none()).collect();
        return Err(SapError::StructurallySingular { rows });
    }
    let perm: Vec<usize> = state
        .col_match
        .iter()
        .map(|m| m.expect("perfect"))
        .collect();
    let (row_scale, col_scale) = if apply_scaling {
        (
            (0..w.n).map(|i| state.u[i].exp() / w.row_max[i]).collect(),
            state.v.iter().map(|v| v.exp()).collect(),
        )
    } else {
        (vec![1.0; w.n], vec![1.0; w.n])
    };
    Ok(DbResult {
        perm,
        row_scale,
        col_scale,
        scaled: apply_scaling,
    })
}

/// All four stages.
pub fn diagonal_boosting(a: &SparseMatrix, apply_scaling: bool) -> Result<DbResult> {
    let w = build_weights(a)?;
    let state = perfect_match(initial_match(&w), &w)?;
    extract_result(&state, &w, apply_scaling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;

    fn example() -> SparseMatrix {
        SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 3.0), (1, 0, 4.0), (1, 1, 2.0)])
            .unwrap()
    }

    #[test]
    fn weights_of_two_by_two() {
        let w = build_weights(&example()).unwrap();
        assert!((w.cost(0, 0).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert_eq!(w.cost(0, 1).unwrap(), 0.0);
        assert_eq!(w.cost(1, 0).unwrap(), 0.0);
        assert!((w.cost(1, 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(w.row_max(), &[3.0, 4.0]);
    }

    #[test]
    fn diagonal_weights_vanish_and_scale_invariant() {
        let d =
            SparseMatrix::from_triplets(3, 3, &[(0, 0, 2.0), (1, 1, -5.0), (2, 2, 0.5)]).unwrap();
        let w = build_weights(&d).unwrap();
        assert!((0..3).all(|i| w.cost(i, i) == Some(0.0)));
        let a = gallery::random_sparse(8, 0.4, 3);
        let wa = build_weights(&a).unwrap();
        let wb = build_weights(&a.scale(37.5)).unwrap();
        for i in 0..8 {
            for ((j1, c1), (j2, c2)) in wa.edges(i).zip(wb.edges(i)) {
                assert_eq!(j1, j2);
                assert!((c1 - c2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_row_is_structurally_singular() {
        let a =
            SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (2, 2, 1.0), (1, 1, 0.0)]).unwrap();
        assert!(
            matches!(build_weights(&a), Err(SapError::StructurallySingular { rows }) if rows == vec![1])
        );
    }

    #[test]
    fn initial_match_two_by_two() {
        let w = build_weights(&example()).unwrap();
        let s = initial_match(&w);
        assert_eq!(s.u, vec![0.0, 0.0]);
        assert_eq!(s.v, vec![0.0, 0.0]);
        assert_eq!(s.row_match, vec![Some(1), Some(0)]);
        assert!(s.is_perfect());
    }

    #[test]
    fn initial_match_diagonal_is_identity() {
        let d = SparseMatrix::from_triplets(
            4,
            4,
            &[(0, 0, 2.0), (1, 1, 3.0), (2, 2, 1.0), (3, 3, 9.0)],
        )
        .unwrap();
        let s = initial_match(&build_weights(&d).unwrap());
        assert_eq!(s.row_match, (0..4).map(Some).collect::<Vec<_>>());
    }

    #[test]
    fn all_equal_weights_feasible() {
        let t: Vec<_> = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j, 1.0)))
            .collect();
        let a = SparseMatrix::from_triplets(4, 4, &t).unwrap();
        let w = build_weights(&a).unwrap();
        let s = initial_match(&w);
        assert!(s.dual_violation(&w) <= 1e-12);
        let s = perfect_match(s, &w).unwrap();
        assert!(s.is_perfect());
        assert!(s.dual_violation(&w) <= 1e-12);
    }

    #[test]
    fn perfect_initial_match_unchanged() {
        let w = build_weights(&example()).unwrap();
        let s = initial_match(&w);
        assert_eq!(perfect_match(s.clone(), &w).unwrap(), s);
    }

    #[test]
    fn structurally_singular_rejected() {
        // column 2 has no entries
        let a = SparseMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0), (2, 0, 1.0)],
        )
        .unwrap();
        let w = build_weights(&a).unwrap();
        assert!(matches!(
            perfect_match(initial_match(&w), &w),
            Err(SapError::StructurallySingular { .. })
        ));
    }

    #[test]
    fn scaling_of_two_by_two() {
        let r = diagonal_boosting(&example(), true).unwrap();
        assert_eq!(r.perm, vec![1, 0]);
        assert!((r.row_scale[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.row_scale[1] - 0.25).abs() < 1e-15);
        assert_eq!(r.col_scale, vec![1.0, 1.0]);
        let s = r.apply(&example());
        assert!((s.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((s.get(1, 1) - 1.0).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.5).abs() < 1e-15);
        assert!((s.get(1, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn scaled_diagonal_is_unit() {
        let d =
            SparseMatrix::from_triplets(3, 3, &[(0, 0, 2.0), (1, 1, -5.0), (2, 2, 0.5)]).unwrap();
        let s = diagonal_boosting(&d, true).unwrap().apply(&d);
        for i in 0..3 {
            assert!((s.get(i, i).abs() - 1.0).abs() < 1e-15);
        }
        assert_eq!(s.nnz(), 3);
    }

    fn brute_force_best_log(a: &SparseMatrix) -> f64 {
        fn rec(a: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == a.len() {
                *best = best.max(acc);
                return;
            }
            for j in 0..a.len() {
                if !used[j] && a[row][j] != 0.0 {
                    used[j] = true;
                    rec(a, row + 1, used, acc + a[row][j].abs().ln(), best);
                    used[j] = false;
                }
            }
        }
        let d = a.to_dense();
        let mut best = f64::NEG_INFINITY;
        rec(&d, 0, &mut vec![false; d.len()], 0.0, &mut best);
        best
    }

    #[test]
    fn matches_brute_force_on_small_matrices() {
        for seed in 0..200u64 {
            let n = 2 + (seed % 5) as usize;
            let a = gallery::random_sparse(n, 0.4, seed);
            let w = build_weights(&a).unwrap();
            let s = perfect_match(initial_match(&w), &w).unwrap();
            assert!(s.dual_violation(&w) <= 1e-12, "seed {seed}");
            let r = extract_result(&s, &w, false).unwrap();
            let got: f64 = r
                .perm
                .iter()
                .enumerate()
                .map(|(new, &old)| a.get(old, new).abs().ln())
                .sum();
            assert!(
                (got - brute_force_best_log(&a)).abs() <= 1e-9,
                "seed {seed}"
            );
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scale_invariant_permutation(seed in 0u64..500, gamma in 1e-3f64..1e3) {
                let a = gallery::random_sparse(12, 0.3, seed);
                let p1 = diagonal_boosting(&a, false).unwrap().perm;
                let p2 = diagonal_boosting(&a.scale(gamma), false).unwrap().perm;
                prop_assert_eq!(p1, p2);
            }

            #[test]
            fn i_matrix_property(seed in 0u64..500) {
                let a = gallery::random_sparse(30, 0.1, seed);
                let r = diagonal_boosting(&a, true).unwrap();
                prop_assert!(crate::sparse::is_permutation(&r.perm));
                let s = r.apply(&a);
                for (i, j, v) in s.triplets() {
                    if i == j {
                        prop_assert!((v.abs() - 1.0).abs() <= 1e-12);
                    } else {
                        prop_assert!(v.abs() <= 1.0 + 1e-12);
                    }
                }
            }
        }
    }
}
