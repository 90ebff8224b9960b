//! Seeded synthetic test matrices: random banded systems of prescribed
//! diagonal dominance, 2D Poisson and convection-diffusion stencils, and
//! shuffled path patterns.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::banded::{BandedMatrix, PartitionLayout};
use crate::sparse::SparseMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Full-band random matrix: off-diagonal entries uniform in `[-1, 1)`, and
/// each diagonal entry set to `d` times its row's off-diagonal absolute sum,
/// so the degree of diagonal dominance is exactly `d`.
pub fn random_banded(n: usize, k: usize, d: f64, seed: u64) -> BandedMatrix {
    let mut rng = rng(seed);
    let mut a = BandedMatrix::zeros(n, k);
    for i in 0..n {
        let mut off = 0.0;
        for j in i.saturating_sub(k)..(i + k + 1).min(n) {
            if j != i {
                let v: f64 = rng.random_range(-1.0..1.0);
                off += v.abs();
                a.set(i, j, v).expect("in band");
            }
        }
        let diag = if off > 0.0 { d * off } else { 1.0 };
        a.set(i, i, diag).expect("in band");
    }
    a
}

/// Zero every entry of `a` that couples different partitions of the
/// `p`-way layout.
pub fn block_diagonal(mut a: BandedMatrix, p: usize) -> BandedMatrix {
    let layout = PartitionLayout::new(a.n(), p, a.k()).expect("feasible partition count");
    let owner: Vec<usize> = (0..p)
        .flat_map(|i| std::iter::repeat_n(i, layout.sizes()[i]))
        .collect();
    for i in 0..a.n() {
        for j in i.saturating_sub(a.k())..(i + a.k() + 1).min(a.n()) {
            if owner[i] != owner[j] {
                a.set(i, j, 0.0).expect("in band");
            }
        }
    }
    a
}

/// Random right-hand side uniform in `[-1, 1)`.
pub fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// 5-point Laplacian on an `m x m` interior grid (Dirichlet boundary),
/// natural row-major numbering. SPD, `N = m^2`.
pub fn poisson_2d(m: usize) -> SparseMatrix {
    convection_diffusion_2d(m, 0.0, 0.0)
}

/// Upwinded convection-diffusion `-lap(u) + (bx, by) . grad(u)` on an
/// `m x m` grid with unit mesh width scaling. Nonsymmetric for nonzero
/// wind; diagonally dominant for any wind.
pub fn convection_diffusion_2d(m: usize, bx: f64, by: f64) -> SparseMatrix {
    let idx = |r: usize, c: usize| r * m + c;
    let mut t = Vec::with_capacity(5 * m * m);
    for r in 0..m {
        for c in 0..m {
            let i = idx(r, c);
            // first-order upwind: wind > 0 takes the backward difference
            let (wx, ex) = if bx >= 0.0 {
                (-1.0 - bx, -1.0)
            } else {
                (-1.0, -1.0 + bx)
            };
            let (sy, ny) = if by >= 0.0 {
                (-1.0 - by, -1.0)
            } else {
                (-1.0, -1.0 + by)
            };
            t.push((i, i, 4.0 + bx.abs() + by.abs()));
            if c > 0 {
                t.push((i, idx(r, c - 1), wx));
            }
            if c + 1 < m {
                t.push((i, idx(r, c + 1), ex));
            }
            if r > 0 {
                t.push((i, idx(r - 1, c), sy));
            }
            if r + 1 < m {
                t.push((i, idx(r + 1, c), ny));
            }
        }
    }
    SparseMatrix::from_triplets(m * m, m * m, &t).expect("grid indices in range")
}

/// Symmetric pattern of a path `0 - 1 - ... - n-1` after relabeling node
/// `v` as `labels[v]`, with unit off-diagonals and diagonal 4.
pub fn path_matrix(labels: &[usize]) -> SparseMatrix {
    let n = labels.len();
    let mut t: Vec<_> = (0..n).map(|i| (i, i, 4.0)).collect();
    for v in 1..n {
        let (a, b) = (labels[v - 1], labels[v]);
        t.push((a, b, -1.0));
        t.push((b, a, -1.0));
    }
    SparseMatrix::from_triplets(n, n, &t).expect("labels in range")
}

/// A random relabeling of `0..n`.
pub fn shuffled_labels(n: usize, seed: u64) -> Vec<usize> {
    let mut l: Vec<usize> = (0..n).collect();
    l.shuffle(&mut rng(seed));
    l
}

/// Banded matrix of `p` diagonal blocks, each a path whose nodes have been
/// shuffled within windows of `k / 2` labels, so consecutive path nodes stay
/// within distance `k` and the block's own bandwidth is close to `k`.
/// Adjacent blocks are coupled through their corner entries. Returns the
/// matrix with half-bandwidth `k`.
pub fn shuffled_path_blocks(block: usize, p: usize, k: usize, seed: u64) -> BandedMatrix {
    let n = block * p;
    let mut rng = rng(seed);
    let window = (k / 2).max(1);
    let mut a = BandedMatrix::zeros(n, k);
    for b in 0..p {
        let off = b * block;
        let mut labels: Vec<usize> = (0..block).collect();
        for chunk in labels.chunks_mut(window) {
            chunk.shuffle(&mut rng);
        }
        for v in 0..block {
            a.set(off + v, off + v, 4.0).expect("diagonal");
        }
        for v in 1..block {
            let (x, y) = (off + labels[v - 1], off + labels[v]);
            let w = rng.random_range(0.5..1.0);
            a.set(x, y, -w).expect("within band");
            a.set(y, x, -w).expect("within band");
        }
        if b + 1 < p {
            let e = off + block;
            a.set(e - 1, e, -0.5).expect("coupling");
            a.set(e, e - 1, -0.5).expect("coupling");
        }
    }
    a
}

/// Random sparse square matrix with full structural support: a random
/// permutation's positions are always present, plus each other position
/// with probability `density`. Values have magnitudes in `[0.1, 10)` with
/// random signs.
pub fn random_sparse(n: usize, density: f64, seed: u64) -> SparseMatrix {
    let mut rng = rng(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut t = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if perm[i] == j || rng.random_bool(density) {
                let mag: f64 = rng.random_range(0.1..10.0);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                t.push((i, j, sign * mag));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &t).expect("indices in range")
}
