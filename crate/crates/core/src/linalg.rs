//! Dense least squares by Householder QR with column pivoting.

/// Result of [`lstsq`].
#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub x: Vec<f64>,
    pub rank: usize,
    /// `|R[0,0]| / |R[rank-1,rank-1]|`, a cheap condition estimate.
    pub condition: f64,
}

/// Relative threshold on the diagonal of R below which a direction is
/// treated as numerically dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Householder reflection that maps `x` onto `-sign(x0)·‖x‖·e0`.
/// Returns `(v, beta)` with `H = I - beta·v·vᵀ`, or `None` for a zero vector.
fn householder(x: &[f64]) -> Option<(Vec<f64>, f64)> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    let alpha = if x[0] >= 0.0 { -norm } else { norm };
    let mut v = x.to_vec();
    v[0] -= alpha;
    let vv: f64 = v.iter().map(|a| a * a).sum();
    if vv == 0.0 {
        return None;
    }
    Some((v, 2.0 / vv))
}

fn reflect(v: &[f64], beta: f64, target: &mut [f64]) {
    let dot: f64 = v.iter().zip(target.iter()).map(|(a, b)| a * b).sum();
    let s = beta * dot;
    for (t, a) in target.iter_mut().zip(v) {
        *t -= s * a;
    }
}

/// Minimum-norm least-squares solution of `A x ≈ b`.
///
/// `columns` holds A column by column (each of length `n`). Rank-deficient
/// systems get the solution of smallest Euclidean norm via a complete
/// orthogonal decomposition.
pub fn lstsq(columns: &[Vec<f64>], b: &[f64]) -> LstsqSolution {
    let p = columns.len();
    let n = b.len();
    if p == 0 {
        return LstsqSolution {
            x: Vec::new(),
            rank: 0,
            condition: 1.0,
        };
    }
    let mut a: Vec<Vec<f64>> = columns.to_vec();
    let mut rhs = b.to_vec();
    let mut perm: Vec<usize> = (0..p).collect();
    let steps = n.min(p);

    for k in 0..steps {
        // pivot: largest remaining column norm
        let mut best = k;
        let mut best_norm = -1.0;
        for (j, col) in a.iter().enumerate().skip(k) {
            let norm: f64 = col[k..].iter().map(|v| v * v).sum();
            if norm > best_norm {
                best_norm = norm;
                best = j;
            }
        }
        a.swap(k, best);
        perm.swap(k, best);
        if let Some((v, beta)) = householder(&a[k][k..]) {
            for col in a.iter_mut().skip(k) {
                reflect(&v, beta, &mut col[k..]);
            }
            reflect(&v, beta, &mut rhs[k..]);
        }
    }

    let r00 = a[0][0].abs();
    let rank = if r00 == 0.0 {
        0
    } else {
        (0..steps)
            .take_while(|&k| a[k][k].abs() > RANK_TOLERANCE * r00)
            .count()
    };
    if rank == 0 {
        return LstsqSolution {
            x: vec![0.0; p],
            rank,
            condition: f64::INFINITY,
        };
    }
    let condition = r00 / a[rank - 1][rank - 1].abs();
    let c = &rhs[..rank];

    let z = if rank == p {
        let mut z = vec![0.0; p];
        for i in (0..p).rev() {
            let mut s = c[i];
            for (j, zj) in z.iter().enumerate().skip(i + 1) {
                s -= a[j][i] * zj;
            }
            z[i] = s / a[i][i];
        }
        z
    } else {
        // R_top (rank×p) has full row rank. Factor R_topᵀ = Q2·L, then
        // R_top = Lᵀ·Q2ᵀ and the minimum-norm solution is Q2·L⁻ᵀ·c.
        let mut t: Vec<Vec<f64>> = (0..rank)
            .map(|i| (0..p).map(|j| if j >= i { a[j][i] } else { 0.0 }).collect())
            .collect();
        let mut reflectors = Vec::with_capacity(rank);
        for k in 0..rank {
            let h = householder(&t[k][k..]);
            if let Some((v, beta)) = &h {
                for col in t.iter_mut().skip(k) {
                    reflect(v, *beta, &mut col[k..]);
                }
            }
            reflectors.push(h);
        }
        // solve Lᵀ w = c, with L[i][j] = t[j][i] for i <= j
        let mut w = vec![0.0; rank];
        for i in 0..rank {
            let mut s = c[i];
            for (j, wj) in w.iter().enumerate().take(i) {
                s -= t[i][j] * wj;
            }
            w[i] = s / t[i][i];
        }
        // z = Q2·[w; 0] = H0·H1·…·H(r-1)·[w; 0]
        let mut z = vec![0.0; p];
        z[..rank].copy_from_slice(&w);
        for k in (0..rank).rev() {
            if let Some((v, beta)) = &reflectors[k] {
                reflect(v, *beta, &mut z[k..]);
            }
        }
        z
    };

    let mut x = vec![0.0; p];
    for (k, &j) in perm.iter().enumerate() {
        x[j] = z[k];
    }
    LstsqSolution { x, rank, condition }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_square_system() {
        // [[2,1],[1,3]] x = [3,5] -> x = [0.8, 1.4]
        let sol = lstsq(&[vec![2.0, 1.0], vec![1.0, 3.0]], &[3.0, 5.0]);
        assert_eq!(sol.rank, 2);
        assert!((sol.x[0] - 0.8).abs() < 1e-14 && (sol.x[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn duplicate_columns_split_evenly() {
        // x1 + x2 = 2 for every row: minimum norm is (1, 1)
        let col = vec![1.0, 2.0, 3.0];
        let b = vec![2.0, 4.0, 6.0];
        let sol = lstsq(&[col.clone(), col], &b);
        assert_eq!(sol.rank, 1);
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overdetermined_line() {
        // y = 1 + 2x on four points, with an intercept column
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ones = vec![1.0; 4];
        let b: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x).collect();
        let sol = lstsq(&[ones, xs.to_vec()], &b);
        assert!((sol.x[0] - 1.0).abs() < 1e-13 && (sol.x[1] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn zero_matrix() {
        let sol = lstsq(&[vec![0.0; 3]], &[1.0, 2.0, 3.0]);
        assert_eq!((sol.rank, sol.x.clone()), (0, vec![0.0]));
    }
}
