//! Mini-batch optimal transport: squared-Euclidean cost matrices, exact
//! linear assignment, and batch 2-Wasserstein distances.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Pairwise squared-Euclidean costs between two equal-size batches.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub costs: DMatrix<f64>,
}

/// A minimum-cost perfect matching: row i pairs with column perm[i].
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub total_cost: f64,
}

/// costs[i][j] = ||x0_i - x1_j||^2 over rows of the two batch matrices.
pub fn cost_matrix(x0: &DMatrix<f64>, x1: &DMatrix<f64>) -> Result<CostMatrix> {
    if x0.nrows() != x1.nrows() || x0.ncols() != x1.ncols() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", x0.nrows(), x0.ncols()),
            got: format!("{}x{}", x1.nrows(), x1.ncols()),
        });
    }
    let b = x0.nrows();
    let costs = DMatrix::from_fn(b, b, |i, j| {
        let mut acc = 0.0;
        for k in 0..x0.ncols() {
            let d = x0[(i, k)] - x1[(j, k)];
            acc += d * d;
        }
        acc
    });
    Ok(CostMatrix { costs })
}

/// Exact minimum-cost assignment (Jonker-Volgenant shortest augmenting
/// paths, O(B^3)). Cost ties between optimal permutations are settled by a
/// lexicographic pass of cost-neutral swaps.
pub fn assign(cost: &CostMatrix) -> Result<Assignment> {
    let c = &cost.costs;
    if c.nrows() != c.ncols() {
        return Err(Error::ShapeMismatch {
            expected: "square cost matrix".into(),
            got: format!("{}x{}", c.nrows(), c.ncols()),
        });
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "assignment cost matrix".into(),
        });
    }
    let n = c.nrows();
    // 1-based potentials; p[j] = row matched to column j (0 = unmatched).
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = c[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    lexicographic_refine(c, &mut perm);
    let total_cost = (0..n).map(|i| c[(i, perm[i])]).sum();
    Ok(Assignment { perm, total_cost })
}

/// Applies cost-neutral pairwise swaps until the permutation is a
/// 2-swap-local lexicographic minimum among optimal matchings.
fn lexicographic_refine(c: &DMatrix<f64>, perm: &mut [usize]) {
    let n = perm.len();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in i + 1..n {
                if perm[i] > perm[j]
                    && c[(i, perm[j])] + c[(j, perm[i])] == c[(i, perm[i])] + c[(j, perm[j])]
                {
                    perm.swap(i, j);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Mean per-sample squared transport cost under the optimal matching.
pub fn batch_w2(x0: &DMatrix<f64>, x1: &DMatrix<f64>) -> Result<f64> {
    let cm = cost_matrix(x0, x1)?;
    let a = assign(&cm)?;
    Ok(a.total_cost / x0.nrows() as f64)
}

/// Expected cost of a uniformly random coupling: mean of all cost entries.
pub fn random_coupling_cost(cost: &CostMatrix) -> f64 {
    cost.costs.iter().sum::<f64>() / (cost.costs.nrows() * cost.costs.ncols()) as f64
}

#[cfg(test)]
pub fn brute_force_assign(c: &DMatrix<f64>) -> Assignment {
    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for rest in permutations(n - 1) {
            for pos in 0..=rest.len() {
                let mut p = rest.clone();
                p.insert(pos, n - 1);
                out.push(p);
            }
        }
        out
    }
    let n = c.nrows();
    let mut best: Option<Assignment> = None;
    let mut perms = permutations(n);
    perms.sort();
    for perm in perms {
        let cost: f64 = (0..n).map(|i| c[(i, perm[i])]).sum();
        let better = match &best {
            None => true,
            Some(b) => cost < b.total_cost,
        };
        if better {
            best = Some(Assignment {
                perm,
                total_cost: cost,
            });
        }
    }
    best.unwrap()
}
