//! Maximum-weight perfect matching `M(X) = argmax_P ⟨P, X⟩_F`.
//!
//! [`hungarian`] runs the O(N³) shortest augmenting path method on the
//! negated weights, then uses the optimal dual potentials to pick the
//! lexicographically smallest mapping among all optimal matchings.
//! [`brute_force_match`] enumerates all N! permutations and serves as the
//! reference for small N.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::matrix::LogitsMatrix;
use crate::perm::Permutation;
use crate::scalar::Scalar;

/// Largest N accepted by [`brute_force_match`].
pub const BRUTE_FORCE_MAX_N: usize = 8;

/// Reduced costs within this many ulps of the weight scale count as tight.
const TIGHT_ULPS: f64 = 64.0;

/// Optimal assignment under maximization; ties resolve to the
/// lexicographically smallest mapping.
pub fn hungarian<T: Scalar>(x: &LogitsMatrix<T>) -> Result<Permutation> {
    let n = x.n();
    if n == 0 {
        return Ok(Permutation::identity(0));
    }
    let m = x.matrix();
    if let Some((i, j)) = m.first_non_finite() {
        return Err(Error::Domain(format!("non-finite weight at ({i}, {j})")));
    }
    let cost = |i: usize, j: usize| -m[(i, j)];
    let (row_pot, col_pot, assignment) = solve_min_cost(n, &cost);

    let scale = m.max_abs().max(T::one());
    let tol = T::of(TIGHT_ULPS * (n as f64)) * T::epsilon() * scale;
    let tight = |i: usize, j: usize| cost(i, j) - row_pot[i] - col_pot[j] <= tol;
    let mapping = lexicographic_min_matching(n, assignment, tight);
    Permutation::new(mapping)
}

/// Shortest augmenting path Hungarian method on an `n×n` cost matrix.
///
/// Returns row potentials, column potentials and the row→column assignment.
/// At termination `cost(i, j) − u[i] − v[j] ≥ 0` for all pairs with equality
/// on assigned pairs.
fn solve_min_cost<T: Scalar>(n: usize, cost: &impl Fn(usize, usize) -> T) -> (Vec<T>, Vec<T>, Vec<usize>) {
    // 1-indexed with a virtual column 0
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] = u[owner[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    (u[1..].to_vec(), v[1..].to_vec(), assignment)
}

/// Lexicographically smallest perfect matching inside the tight-edge graph,
/// starting from a known perfect matching `assignment` of that graph.
///
/// Rows are fixed in order. For row `i` currently matched to `c0`, column
/// `j` is reachable iff `j == c0` or the row owning `j` has an alternating
/// path to `c0` through unfixed rows; swapping along that cycle keeps the
/// matching perfect. One reverse BFS per row gives O(N³) overall.
fn lexicographic_min_matching(
    n: usize,
    mut assignment: Vec<usize>,
    tight: impl Fn(usize, usize) -> bool,
) -> Vec<usize> {
    let adj: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| tight(i, j)).collect()).collect();
    let mut owner = vec![0usize; n];
    for (i, &j) in assignment.iter().enumerate() {
        owner[j] = i;
    }
    let mut fixed_col = vec![false; n];

    for i in 0..n {
        let c0 = assignment[i];
        // next_col[k]: column row k moves into on its way to freeing c0
        let mut reach = vec![false; n];
        let mut next_col = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        // rows k (≠ i, unfixed) with a tight edge into c0
        let visit_col = |col: usize, reach: &mut Vec<bool>, next_col: &mut Vec<usize>, queue: &mut VecDeque<usize>| {
            for k in i + 1..n {
                if !reach[k] && adj[k][col] && assignment[k] != col {
                    reach[k] = true;
                    next_col[k] = col;
                    queue.push_back(k);
                }
            }
        };
        visit_col(c0, &mut reach, &mut next_col, &mut queue);
        while let Some(k) = queue.pop_front() {
            // the column owned by k can be freed if k moves on
            let col = assignment[k];
            visit_col(col, &mut reach, &mut next_col, &mut queue);
        }

        let chosen = (0..n)
            .filter(|&j| !fixed_col[j] && adj[i][j])
            .find(|&j| j == c0 || reach[owner[j]])
            .unwrap_or(c0);

        if chosen != c0 {
            // rotate: i takes `chosen`, each row on the path takes its next column
            let mut k = owner[chosen];
            assignment[i] = chosen;
            owner[chosen] = i;
            loop {
                let col = next_col[k];
                assignment[k] = col;
                let prev = owner[col];
                owner[col] = k;
                if col == c0 {
                    break;
                }
                k = prev;
            }
        }
        fixed_col[assignment[i]] = true;
    }
    assignment
}

/// Result of exhaustive search.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceMatch<T> {
    /// First maximizer in lexicographic order.
    pub permutation: Permutation,
    pub value: T,
    /// Whether no other permutation attains exactly the same value.
    pub is_unique: bool,
}

/// Exhaustive maximization over all N! permutations; N ≤ 8.
pub fn brute_force_match<T: Scalar>(x: &LogitsMatrix<T>) -> Result<BruteForceMatch<T>> {
    let n = x.n();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::Size {
            n,
            max: BRUTE_FORCE_MAX_N,
        });
    }
    let m = x.matrix();
    let mut current: Vec<usize> = (0..n).collect();
    let mut best = current.clone();
    let mut best_value = T::neg_infinity();
    let mut ties = 0usize;
    loop {
        let value = current
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, &j)| acc + m[(i, j)]);
        if value > best_value {
            best_value = value;
            best.clone_from(&current);
            ties = 1;
        } else if value == best_value {
            ties += 1;
        }
        if !next_permutation(&mut current) {
            break;
        }
    }
    Ok(BruteForceMatch {
        permutation: Permutation::new(best)?,
        value: best_value,
        is_unique: ties == 1,
    })
}

/// Advances to the next permutation in lexicographic order.
pub(crate) fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
