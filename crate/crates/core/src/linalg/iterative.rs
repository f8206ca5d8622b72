//! Restarted GMRES with an incomplete LU preconditioner.
//!
//! The factorization works on a reverse Cuthill-McKee reordering of the
//! matrix, which interleaves the field blocks of the coupled layout node by
//! node and keeps the level-of-fill pattern narrow.

use std::collections::{BTreeMap, VecDeque};

use super::sparse::{dot, norm2, SparseMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual target `||b - A x|| / ||b||`.
    pub tol: f64,
    /// Krylov subspace size before restart.
    pub restart: usize,
    pub max_iter: usize,
    /// Level of fill of the incomplete factorization.
    pub fill_level: usize,
    pub reorder: bool,
    /// Return the current iterate instead of failing once a restart cycle
    /// reduces the residual by less than 10%. Meant for singular but
    /// meaningful systems; the achieved residual is reported in the stats.
    pub accept_stagnation: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            restart: 100,
            max_iter: 10_000,
            fill_level: 1,
            reorder: true,
            accept_stagnation: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    /// Set when the tolerance was not met and the iterate was accepted anyway.
    pub stagnated: bool,
}

/// Reverse Cuthill-McKee ordering of the graph of `a`: `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(a.row(v).0.iter().copied().filter(|&w| !visited[w]));
            nbrs.sort_by_key(|&w| (degree[w], w));
            for &w in &nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Incomplete LU factorization with level-based fill, `L` unit lower.
#[derive(Debug, Clone)]
pub struct Ilu {
    perm: Option<Vec<usize>>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    diag: Vec<usize>,
}

impl Ilu {
    pub fn new(a: &SparseMatrix, fill_level: usize, reorder: bool) -> Result<Self> {
        let n = a.dim();
        let perm = reorder.then(|| reverse_cuthill_mckee(a));
        let mut inv = vec![0usize; n];
        if let Some(p) = &perm {
            for (new, &old) in p.iter().enumerate() {
                inv[old] = new;
            }
        }
        let map = |i: usize| if perm.is_some() { inv[i] } else { i };
        let old_of = |i: usize| perm.as_ref().map_or(i, |p| p[i]);

        // symbolic phase: pattern and fill levels row by row
        let mut row_ptr = vec![0usize];
        let mut col_idx: Vec<usize> = Vec::new();
        let mut levels: Vec<usize> = Vec::new();
        let mut diag = vec![0usize; n];
        let mut row: BTreeMap<usize, usize> = BTreeMap::new();
        for i in 0..n {
            row.clear();
            for &j in a.row(old_of(i)).0 {
                row.insert(map(j), 0);
            }
            row.insert(i, 0);
            if fill_level > 0 {
                let mut cursor = 0usize;
                while let Some((&k, &lik)) = row.range(cursor..i).next() {
                    cursor = k + 1;
                    for p in diag[k] + 1..row_ptr[k + 1] {
                        let lev = lik + levels[p] + 1;
                        if lev <= fill_level {
                            let e = row.entry(col_idx[p]).or_insert(lev);
                            *e = (*e).min(lev);
                        }
                    }
                }
            }
            for (&j, &l) in &row {
                if j == i {
                    diag[i] = col_idx.len();
                }
                col_idx.push(j);
                levels.push(l);
            }
            row_ptr.push(col_idx.len());
        }

        // numeric phase
        let mut values = vec![0.0; col_idx.len()];
        for i in 0..n {
            let (cols, vals) = a.row(old_of(i));
            let base = row_ptr[i];
            let pattern = &col_idx[base..row_ptr[i + 1]];
            for (&j, &v) in cols.iter().zip(vals) {
                let p = pattern.binary_search(&map(j)).expect("pattern contains A");
                values[base + p] += v;
            }
        }
        let mut work = vec![0.0; n];
        let mut in_row = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (row_ptr[i], row_ptr[i + 1]);
            for p in start..end {
                work[col_idx[p]] = values[p];
                in_row[col_idx[p]] = i;
            }
            let row_scale = values[start..end].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for p in start..diag[i] {
                let k = col_idx[p];
                let lik = work[k] / values[diag[k]];
                work[k] = lik;
                if lik == 0.0 {
                    continue;
                }
                for q in diag[k] + 1..row_ptr[k + 1] {
                    let j = col_idx[q];
                    if in_row[j] == i {
                        work[j] -= lik * values[q];
                    }
                }
            }
            for p in start..end {
                values[p] = work[col_idx[p]];
            }
            let d = &mut values[diag[i]];
            let floor = 1e-12 * row_scale.max(f64::MIN_POSITIVE);
            if d.abs() < floor {
                *d = if *d < 0.0 { -floor } else { floor };
            }
        }
        Ok(Ilu {
            perm,
            row_ptr,
            col_idx,
            values,
            diag,
        })
    }

    /// `z = (LU)^-1 r` in the original numbering.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.diag.len();
        let mut y: Vec<f64> = match &self.perm {
            Some(p) => p.iter().map(|&old| r[old]).collect(),
            None => r.to_vec(),
        };
        for i in 0..n {
            let mut s = y[i];
            for p in self.row_ptr[i]..self.diag[i] {
                s -= self.values[p] * y[self.col_idx[p]];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for p in self.diag[i] + 1..self.row_ptr[i + 1] {
                s -= self.values[p] * y[self.col_idx[p]];
            }
            y[i] = s / self.values[self.diag[i]];
        }
        match &self.perm {
            Some(p) => {
                for (new, &old) in p.iter().enumerate() {
                    z[old] = y[new];
                }
            }
            None => z.copy_from_slice(&y),
        }
    }
}

/// Solves `a x = b` starting from zero.
pub fn solve_iterative(a: &SparseMatrix, b: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    solve_iterative_from(a, b, None, opts)
}

/// Solves `a x = b` with restarted, right-preconditioned GMRES.
pub fn solve_iterative_from(
    a: &SparseMatrix,
    b: &[f64],
    guess: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    solve_preconditioned(a, b, guess, a, opts)
}

/// GMRES on `a x = b`, preconditioned by the incomplete factorization of
/// `precond` (which must have the dimension of `a`).
pub fn solve_preconditioned(
    a: &SparseMatrix,
    b: &[f64],
    guess: Option<&[f64]>,
    precond: &SparseMatrix,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if precond.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: precond.dim(),
        });
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                residual: 0.0,
                stagnated: false,
            },
        ));
    }
    let ilu = Ilu::new(precond, opts.fill_level, opts.reorder)?;
    let m = opts.restart.max(1);
    let mut x = guess.map_or_else(|| vec![0.0; n], |g| g.to_vec());
    let mut r = vec![0.0; n];
    let residual = |x: &[f64], r: &mut Vec<f64>| -> f64 {
        a.matvec(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        norm2(r)
    };
    let mut rnorm = residual(&x, &mut r);
    let mut iterations = 0;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut hess = vec![vec![0.0; m]; m + 1];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];

    let mut stagnated = false;
    while rnorm / bnorm > opts.tol {
        if iterations >= opts.max_iter {
            if opts.accept_stagnation {
                stagnated = true;
                break;
            }
            return Err(Error::NoConvergence { iterations, residual: rnorm / bnorm });
        }
        let start_norm = rnorm;
        basis.clear();
        basis.push(r.iter().map(|v| v / rnorm).collect());
        let mut g = vec![0.0; m + 1];
        g[0] = rnorm;
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut used = 0;
        for j in 0..m {
            ilu.apply(&basis[j], &mut z);
            a.matvec(&z, &mut w);
            // modified Gram-Schmidt
            for (i, v) in basis.iter().enumerate() {
                let h = dot(&w, v);
                hess[i][j] = h;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= h * vk;
                }
            }
            let hnext = norm2(&w);
            hess[j + 1][j] = hnext;
            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let denom = hess[j][j].hypot(hess[j + 1][j]);
            if denom == 0.0 {
                break;
            }
            cs[j] = hess[j][j] / denom;
            sn[j] = hess[j + 1][j] / denom;
            hess[j][j] = denom;
            hess[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            iterations += 1;
            let happy = hnext <= 1e-14 * denom;
            if g[j + 1].abs() / bnorm <= opts.tol * 0.5 || happy || iterations >= opts.max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        // back substitution for the least-squares coefficients
        let mut yk = vec![0.0; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for k in i + 1..used {
                s -= hess[i][k] * yk[k];
            }
            yk[i] = s / hess[i][i];
        }
        let mut update = vec![0.0; n];
        for (k, coef) in yk.iter().enumerate() {
            for (u, v) in update.iter_mut().zip(&basis[k]) {
                *u += coef * v;
            }
        }
        ilu.apply(&update, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
        rnorm = residual(&x, &mut r);
        if !rnorm.is_finite() {
            return Err(Error::NoConvergence { iterations, residual: f64::INFINITY });
        }
        if rnorm / bnorm <= opts.tol {
            break;
        }
        if opts.accept_stagnation && rnorm >= 0.9 * start_norm {
            stagnated = true;
            break;
        }
        if used == 0 || rnorm >= start_norm * (1.0 - 1e-12) {
            // stagnation: a full cycle made no progress
            return Err(Error::NoConvergence { iterations, residual: rnorm / bnorm });
        }
    }
    Ok((
        x,
        SolveStats {
            iterations,
            residual: rnorm / bnorm,
            stagnated,
        },
    ))
}
