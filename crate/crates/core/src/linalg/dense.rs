use crate::error::{Error, Result};

/// Largest system the dense oracle accepts.
pub const DENSE_LIMIT: usize = 5000;

/// Solves `a x = b` by LU factorization with partial pivoting.
///
/// `a` is row-major and consumed. Intended for verification and tiny systems.
pub fn solve_dense_oracle(mut a: Vec<Vec<f64>>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    if n > DENSE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "dense oracle limited to {DENSE_LIMIT} unknowns, got {n}"
        )));
    }
    if b.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = scale * n as f64 * f64::EPSILON;
    let mut x = b.to_vec();
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|i| (i, a[i][k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot <= tiny || pivot == 0.0 {
            return Err(Error::Singular { column: k, pivot });
        }
        a.swap(k, p);
        x.swap(k, p);
        let (top, bottom) = a.split_at_mut(k + 1);
        let row_k = &top[k];
        for (off, row) in bottom.iter_mut().enumerate() {
            let f = row[k] / row_k[k];
            if f == 0.0 {
                continue;
            }
            row[k] = f;
            for j in k + 1..n {
                row[j] -= f * row_k[j];
            }
            x[k + 1 + off] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    Ok(x)
}

/// Numerical rank by Gaussian elimination with full pivoting.
pub fn dense_rank(mut a: Vec<Vec<f64>>, rel_tol: f64) -> usize {
    let n = a.len();
    if n == 0 {
        return 0;
    }
    let m = a[0].len();
    let scale = a.iter().flat_map(|r| r.iter()).fold(0.0f64, |s, v| s.max(v.abs()));
    let mut rank = 0;
    let mut cols: Vec<usize> = (0..m).collect();
    for r in 0..n.min(m) {
        let mut best = (r, r, 0.0);
        for i in r..n {
            for (jj, &j) in cols.iter().enumerate().skip(r) {
                if a[i][j].abs() > best.2 {
                    best = (i, jj, a[i][j].abs());
                }
            }
        }
        if best.2 <= rel_tol * scale {
            break;
        }
        a.swap(r, best.0);
        cols.swap(r, best.1);
        let pc = cols[r];
        for i in r + 1..n {
            let f = a[i][pc] / a[r][pc];
            for &j in &cols[r..] {
                a[i][j] -= f * a[r][j];
            }
        }
        rank += 1;
    }
    rank
}
