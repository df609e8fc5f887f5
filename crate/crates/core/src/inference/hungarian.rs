//! O(m³) shortest-augmenting-path assignment (Hungarian method) with
//! deterministic tie-breaking.

/// Returns `perm` maximizing `Σ_i w[i*m + perm[i]]`.
///
/// The solver runs on the negated weights as a min-cost problem. Its optimal
/// duals identify every optimal assignment: by complementary slackness they use
/// only tight edges. The lexicographically smallest perfect matching on the
/// tight subgraph is then picked greedily row by row.
pub fn max_weight_assignment(m: usize, w: &[f64]) -> Vec<usize> {
    assert_eq!(w.len(), m * m);
    if m == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| -w[i * m + j];
    let (u, v, col_of_row) = solve_min_cost(m, &cost);

    let scale = w.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let tol = 1e-9 * (1.0 + scale);
    let tight: Vec<Vec<usize>> = (0..m)
        .map(|i| {
            (0..m)
                .filter(|&j| cost(i, j) - u[i] - v[j] <= tol)
                .collect()
        })
        .collect();

    lexicographic_perfect_matching(m, &tight, col_of_row)
}

/// Dual potentials for rows and columns plus an optimal assignment.
fn solve_min_cost(m: usize, cost: &dyn Fn(usize, usize) -> f64) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    // 1-based arrays; index 0 is the virtual root of each augmentation.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of_col = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
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
            for j in 0..=m {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; m];
    for j in 1..=m {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    (u[1..].to_vec(), v[1..].to_vec(), col_of_row)
}

/// Greedy lexicographic minimization over perfect matchings of `tight`.
///
/// `current` must already be a perfect matching of `tight`.
fn lexicographic_perfect_matching(
    m: usize,
    tight: &[Vec<usize>],
    mut current: Vec<usize>,
) -> Vec<usize> {
    let mut col_taken = vec![false; m];
    for i in 0..m {
        for &j in &tight[i] {
            if col_taken[j] {
                continue;
            }
            if j == current[i] {
                break;
            }
            if let Some(rest) = complete_matching(m, tight, i, j, &col_taken) {
                current[i..].copy_from_slice(&rest[i..]);
                break;
            }
        }
        col_taken[current[i]] = true;
    }
    current
}

/// Tries to extend rows `0..=row` (already decided, with `row → col`) to a
/// perfect matching of `tight`. Rows before `row` keep their column in `taken`.
fn complete_matching(
    m: usize,
    tight: &[Vec<usize>],
    row: usize,
    col: usize,
    taken: &[bool],
) -> Option<Vec<usize>> {
    let mut blocked = taken.to_vec();
    blocked[col] = true;
    let mut row_of_col: Vec<Option<usize>> = vec![None; m];
    for r in row + 1..m {
        let mut seen = vec![false; m];
        if !augment(r, tight, &blocked, &mut seen, &mut row_of_col) {
            return None;
        }
    }
    let mut out = vec![usize::MAX; m];
    out[row] = col;
    for (c, r) in row_of_col.iter().enumerate() {
        if let Some(r) = r {
            out[*r] = c;
        }
    }
    // entries before `row` are left unset
    Some(out)
}

fn augment(
    r: usize,
    tight: &[Vec<usize>],
    blocked: &[bool],
    seen: &mut [bool],
    row_of_col: &mut [Option<usize>],
) -> bool {
    for &c in &tight[r] {
        if blocked[c] || seen[c] {
            continue;
        }
        seen[c] = true;
        let free = match row_of_col[c] {
            None => true,
            Some(other) => augment(other, tight, blocked, seen, row_of_col),
        };
        if free {
            row_of_col[c] = Some(r);
            return true;
        }
    }
    false
}
