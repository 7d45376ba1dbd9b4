//! Sparse linear algebra: CSR storage, preconditioned Krylov solvers, and a
//! singular-value based condition estimator.
//!
//! Everything here is deterministic: assembly hands over rows in canonical
//! order, the solvers run serially with fixed reduction order, and the
//! condition estimator starts from a fixed vector. BiCGSTAB is the default
//! method; on one of its classical breakdowns the driver falls back to
//! restarted GMRES from the current iterate instead of giving up.

use std::io::Write;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

/// Square sparse matrix in compressed sparse row format.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row coordinate lists; duplicate column entries are
    /// summed. Column indices must be < n.
    pub fn from_row_lists(n: usize, mut rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::domain(format!(
                "row list count {} does not match dimension {n}",
                rows.len()
            )));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0usize);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for row in rows.iter_mut() {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<u32> = None;
            for &(c, v) in row.iter() {
                if c as usize >= n {
                    return Err(Error::domain(format!("column {c} out of range (n = {n})")));
                }
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(CsrMatrix { n, row_ptr, cols, vals })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[i] = acc;
        }
    }

    /// y = A^T x (column scatter; serial, fixed order).
    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for i in 0..self.n {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let xi = x[i];
            for k in lo..hi {
                y[self.cols[k] as usize] += self.vals[k] * xi;
            }
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n + 1];
        for &c in &self.cols {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.n {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut cols = vec![0u32; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        let mut cursor = counts;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.cols[k] as usize;
                cols[cursor[c]] = i as u32;
                vals[cursor[c]] = self.vals[k];
                cursor[c] += 1;
            }
        }
        CsrMatrix { n: self.n, row_ptr, cols, vals }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// MatrixMarket coordinate output (1-based indices) for external debris
    /// inspection.
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                writeln!(w, "{} {} {:e}", i + 1, self.cols[k] as usize + 1, self.vals[k])?;
            }
        }
        Ok(())
    }
}

/// Which Krylov method drives the solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    BiCgStab,
    Gmres { restart: usize },
}

/// Preconditioner choice. Block-Jacobi inverts the overlapping element
/// diagonal blocks, so it needs the element dof groups from the assembler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondSpec {
    None,
    Jacobi,
    BlockJacobi,
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub method: SolveMethod,
    pub precond: PrecondSpec,
    pub rel_tol: f64,
    /// None means 10 n.
    pub max_iters: Option<usize>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            method: SolveMethod::BiCgStab,
            precond: PrecondSpec::Jacobi,
            rel_tol: 1e-10,
            max_iters: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    /// True relative residual ||b - Ax|| / ||b||, recomputed after the run.
    pub residual: f64,
    pub converged: bool,
    /// BiCGSTAB hit a breakdown and GMRES finished the job.
    pub used_fallback: bool,
    pub wall_time: Duration,
}

enum Precond {
    Identity,
    Jacobi(Vec<f64>),
    Blocks {
        /// (dofs, dense inverse, row-major len^2), plus 1/multiplicity per dof.
        blocks: Vec<(Vec<u32>, Vec<f64>)>,
        scale: Vec<f64>,
    },
}

impl Precond {
    fn build(a: &CsrMatrix, spec: PrecondSpec, groups: Option<&[Vec<u32>]>) -> Result<Self> {
        match spec {
            PrecondSpec::None => Ok(Precond::Identity),
            PrecondSpec::Jacobi => {
                let inv = a
                    .diagonal()
                    .into_iter()
                    .map(|d| if d.abs() > 1e-300 { 1.0 / d } else { 1.0 })
                    .collect();
                Ok(Precond::Jacobi(inv))
            }
            PrecondSpec::BlockJacobi => {
                let groups = groups.ok_or_else(|| {
                    Error::domain("block-jacobi needs element dof groups")
                })?;
                let mut mult = vec![0.0f64; a.n()];
                let mut blocks = Vec::with_capacity(groups.len());
                for dofs in groups {
                    let m = dofs.len();
                    if m == 0 {
                        continue;
                    }
                    let mut dense = vec![0.0; m * m];
                    for (li, &gi) in dofs.iter().enumerate() {
                        for (lj, &gj) in dofs.iter().enumerate() {
                            dense[li * m + lj] = a.get(gi as usize, gj as usize);
                        }
                    }
                    let inv = invert_dense(m, &dense).ok_or_else(|| {
                        Error::domain("singular element block in block-jacobi")
                    })?;
                    for &g in dofs {
                        mult[g as usize] += 1.0;
                    }
                    blocks.push((dofs.clone(), inv));
                }
                let scale = mult
                    .into_iter()
                    .map(|m| if m > 0.0 { 1.0 / m } else { 1.0 })
                    .collect();
                Ok(Precond::Blocks { blocks, scale })
            }
        }
    }

    /// y = M^-1 r.
    fn apply(&self, r: &[f64], y: &mut [f64]) {
        match self {
            Precond::Identity => y.copy_from_slice(r),
            Precond::Jacobi(inv) => {
                for i in 0..r.len() {
                    y[i] = inv[i] * r[i];
                }
            }
            Precond::Blocks { blocks, scale } => {
                y.fill(0.0);
                for (dofs, inv) in blocks {
                    let m = dofs.len();
                    for li in 0..m {
                        let mut acc = 0.0;
                        for lj in 0..m {
                            acc += inv[li * m + lj] * r[dofs[lj] as usize];
                        }
                        y[dofs[li] as usize] += acc;
                    }
                }
                for i in 0..y.len() {
                    y[i] *= scale[i];
                }
            }
        }
    }
}

/// Dense inverse by Gauss-Jordan with partial pivoting; None when singular.
fn invert_dense(n: usize, a: &[f64]) -> Option<Vec<f64>> {
    let mut work = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if work[r * n + col].abs() > work[pivot * n + col].abs() {
                pivot = r;
            }
        }
        if work[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                work.swap(col * n + j, pivot * n + j);
                inv.swap(col * n + j, pivot * n + j);
            }
        }
        let d = work[col * n + col];
        for j in 0..n {
            work[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = work[r * n + col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                work[r * n + j] -= factor * work[col * n + j];
                inv[r * n + j] -= factor * inv[col * n + j];
            }
        }
    }
    Some(inv)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve A x = b starting from zero. Never panics on stagnation: a
/// non-converged run comes back as `Ok` with `converged = false` and the
/// final residual in the report. `groups` feeds the block-Jacobi
/// preconditioner and is ignored otherwise.
pub fn solve(
    a: &CsrMatrix,
    b: &[f64],
    cfg: &SolveConfig,
    groups: Option<&[Vec<u32>]>,
) -> Result<(Vec<f64>, SolveReport)> {
    solve_from(a, b, None, cfg, groups)
}

/// Solve A x = b from an optional initial guess (used to warm-start time
/// stepping, where the previous step is an excellent predictor).
pub fn solve_from(
    a: &CsrMatrix,
    b: &[f64],
    guess: Option<&[f64]>,
    cfg: &SolveConfig,
    groups: Option<&[Vec<u32>]>,
) -> Result<(Vec<f64>, SolveReport)> {
    if b.len() != a.n() {
        return Err(Error::domain(format!(
            "rhs length {} does not match matrix dimension {}",
            b.len(),
            a.n()
        )));
    }
    if !(cfg.rel_tol > 0.0 && cfg.rel_tol < 1.0) {
        return Err(Error::domain(format!("rel_tol {} outside (0,1)", cfg.rel_tol)));
    }
    let start = Instant::now();
    let n = a.n();
    let max_iters = cfg.max_iters.unwrap_or(10 * n.max(1));
    let precond = Precond::build(a, cfg.precond, groups)?;
    let b_norm = norm(b);
    let mut x = match guess {
        Some(g) => {
            if g.len() != n {
                return Err(Error::domain(format!(
                    "guess length {} does not match matrix dimension {n}",
                    g.len()
                )));
            }
            g.to_vec()
        }
        None => vec![0.0; n],
    };
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                residual: 0.0,
                converged: true,
                used_fallback: false,
                wall_time: start.elapsed(),
            },
        ));
    }

    let mut iterations = 0usize;
    let mut used_fallback = false;
    match cfg.method {
        SolveMethod::BiCgStab => {
            let outcome = bicgstab(a, b, &mut x, &precond, cfg.rel_tol, max_iters, &mut iterations);
            if matches!(outcome, KrylovOutcome::Breakdown) && iterations < max_iters {
                used_fallback = true;
                gmres(
                    a,
                    b,
                    &mut x,
                    &precond,
                    cfg.rel_tol,
                    max_iters,
                    50,
                    &mut iterations,
                );
            }
        }
        SolveMethod::Gmres { restart } => {
            let m = restart.max(1);
            gmres(a, b, &mut x, &precond, cfg.rel_tol, max_iters, m, &mut iterations);
        }
    }

    // Independent residual check; this is what gets reported.
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let residual = norm(&r) / b_norm;
    Ok((
        x,
        SolveReport {
            iterations,
            residual,
            converged: residual <= cfg.rel_tol,
            used_fallback,
            wall_time: start.elapsed(),
        },
    ))
}

enum KrylovOutcome {
    Converged,
    Breakdown,
    MaxIters,
}

fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    precond: &Precond,
    rel_tol: f64,
    max_iters: usize,
    iterations: &mut usize,
) -> KrylovOutcome {
    let n = a.n();
    let b_norm = norm(b);
    let tol = rel_tol * b_norm;

    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if norm(&r) <= tol {
        return KrylovOutcome::Converged;
    }
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];

    while *iterations < max_iters {
        *iterations += 1;
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 {
            return KrylovOutcome::Breakdown;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond.apply(&p, &mut p_hat);
        a.matvec(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom.abs() < 1e-300 {
            return KrylovOutcome::Breakdown;
        }
        alpha = rho_new / denom;
        // s lives in r to save an allocation.
        for i in 0..n {
            r[i] -= alpha * v[i];
        }
        for i in 0..n {
            x[i] += alpha * p_hat[i];
        }
        if norm(&r) <= tol {
            return KrylovOutcome::Converged;
        }
        precond.apply(&r, &mut s_hat);
        a.matvec(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt.abs() < 1e-300 {
            return KrylovOutcome::Breakdown;
        }
        omega = dot(&t, &r) / tt;
        if omega.abs() < 1e-300 {
            return KrylovOutcome::Breakdown;
        }
        for i in 0..n {
            x[i] += omega * s_hat[i];
        }
        for i in 0..n {
            r[i] -= omega * t[i];
        }
        rho = rho_new;
        if norm(&r) <= tol {
            return KrylovOutcome::Converged;
        }
    }
    KrylovOutcome::MaxIters
}

fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    precond: &Precond,
    rel_tol: f64,
    max_iters: usize,
    restart: usize,
    iterations: &mut usize,
) -> KrylovOutcome {
    let n = a.n();
    let b_norm = norm(b);
    let tol = rel_tol * b_norm;
    let m = restart;

    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];

    loop {
        a.matvec(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm(&r);
        if beta <= tol {
            return KrylovOutcome::Converged;
        }
        if *iterations >= max_iters {
            return KrylovOutcome::MaxIters;
        }

        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|ri| ri / beta).collect());
        // Hessenberg stored column-wise, plus Givens rotation history.
        let mut h = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut cols = 0usize;

        for j in 0..m {
            if *iterations >= max_iters {
                break;
            }
            *iterations += 1;
            precond.apply(&basis[j], &mut z);
            a.matvec(&z, &mut w);
            for i in 0..=j {
                let hij = dot(&w, &basis[i]);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(&basis[i]) {
                    *wk -= hij * vk;
                }
            }
            let hnext = norm(&w);
            h[j + 1][j] = hnext;
            cols = j + 1;
            let lucky = hnext < 1e-300;
            if !lucky {
                basis.push(w.iter().map(|wk| wk / hnext).collect());
            }
            // Apply accumulated rotations, then zero the subdiagonal.
            for i in 0..j {
                let tmp = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = tmp;
            }
            let denom = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if denom < 1e-300 {
                break;
            }
            cs[j] = h[j][j] / denom;
            sn[j] = h[j + 1][j] / denom;
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            if g[j + 1].abs() <= tol || lucky {
                break;
            }
        }

        if cols > 0 {
            // Back substitution for y, then x += M^-1 (V y).
            let mut y = vec![0.0f64; cols];
            for i in (0..cols).rev() {
                let mut acc = g[i];
                for j in i + 1..cols {
                    acc -= h[i][j] * y[j];
                }
                y[i] = acc / h[i][i];
            }
            let mut update = vec![0.0; n];
            for (j, yj) in y.iter().enumerate() {
                for i in 0..n {
                    update[i] += yj * basis[j][i];
                }
            }
            precond.apply(&update, &mut z);
            for i in 0..n {
                x[i] += z[i];
            }
        }

        if *iterations >= max_iters {
            // Final residual check happens in the driver.
            a.matvec(x, &mut r);
            for i in 0..n {
                r[i] = b[i] - r[i];
            }
            return if norm(&r) <= tol {
                KrylovOutcome::Converged
            } else {
                KrylovOutcome::MaxIters
            };
        }
    }
}

/// Singular-value condition estimate kappa = sigma_max / sigma_min via 100
/// fixed-start power iterations on A^T A (largest) and inverse iterations
/// through the solver (smallest).
#[derive(Debug, Clone)]
pub struct ConditionEstimate {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub kappa: f64,
    /// False when an inner solve failed; the estimate is then partial.
    pub complete: bool,
}

pub fn estimate_condition(
    a: &CsrMatrix,
    inner: &SolveConfig,
    power_iters: usize,
) -> Result<ConditionEstimate> {
    let n = a.n();
    if n == 0 {
        return Err(Error::domain("empty matrix"));
    }
    let at = a.transpose();
    let start = vec![1.0 / (n as f64).sqrt(); n];

    // Largest singular value: power iteration on A^T A.
    let mut v = start.clone();
    let mut av = vec![0.0; n];
    let mut atav = vec![0.0; n];
    for _ in 0..power_iters {
        a.matvec(&v, &mut av);
        at.matvec(&av, &mut atav);
        let s = norm(&atav);
        if s < 1e-300 {
            break;
        }
        for i in 0..n {
            v[i] = atav[i] / s;
        }
    }
    a.matvec(&v, &mut av);
    let sigma_max = norm(&av);

    // Smallest singular value: inverse iteration, v <- (A^T A)^-1 v via two
    // inner solves per step.
    let mut complete = true;
    let mut v = start;
    for _ in 0..power_iters {
        let (w, rep1) = solve(&at, &v, inner, None)?;
        if !rep1.converged {
            complete = false;
            break;
        }
        let (z, rep2) = solve(a, &w, inner, None)?;
        if !rep2.converged {
            complete = false;
            break;
        }
        let s = norm(&z);
        if s < 1e-300 {
            break;
        }
        for i in 0..n {
            v[i] = z[i] / s;
        }
    }
    a.matvec(&v, &mut av);
    let sigma_min = norm(&av);

    let kappa = if sigma_min > 0.0 { sigma_max / sigma_min } else { f64::INFINITY };
    Ok(ConditionEstimate {
        sigma_max,
        sigma_min,
        kappa,
        complete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_matrix(entries: &[f64]) -> CsrMatrix {
        let rows = entries
            .iter()
            .enumerate()
            .map(|(i, &v)| vec![(i as u32, v)])
            .collect();
        CsrMatrix::from_row_lists(entries.len(), rows).unwrap()
    }

    #[test]
    fn csr_merges_duplicate_entries() {
        let a = CsrMatrix::from_row_lists(
            2,
            vec![vec![(0, 1.0), (1, 2.0), (0, 3.0)], vec![(1, 5.0)]],
        )
        .unwrap();
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(0, 1), 2.0);
        assert_eq!(a.get(1, 0), 0.0);
        assert_eq!(a.nnz(), 3);
    }

    #[test]
    fn matvec_and_transpose_agree_with_dense() {
        let a = CsrMatrix::from_row_lists(
            3,
            vec![
                vec![(0, 2.0), (2, -1.0)],
                vec![(0, 1.0), (1, 3.0)],
                vec![(2, 4.0)],
            ],
        )
        .unwrap();
        let x = [1.0, -2.0, 0.5];
        let mut y = vec![0.0; 3];
        a.matvec(&x, &mut y);
        assert_eq!(y, vec![1.5, -5.0, 2.0]);
        let mut yt = vec![0.0; 3];
        a.matvec_transpose(&x, &mut yt);
        // A^T x computed by hand.
        assert_eq!(yt, vec![0.0, -6.0, 1.0]);
        let t = a.transpose();
        let mut yt2 = vec![0.0; 3];
        t.matvec(&x, &mut yt2);
        assert_eq!(yt, yt2);
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let a = CsrMatrix::from_row_lists(
            3,
            vec![
                vec![(0, 4.0), (1, 1.0)],
                vec![(0, -1.0), (1, 5.0), (2, 2.0)],
                vec![(1, 1.0), (2, 3.0)],
            ],
        )
        .unwrap();
        let b = [6.0, 10.0, 7.0];
        let cfg = SolveConfig::default();
        let (x, rep) = solve(&a, &b, &cfg, None).unwrap();
        assert!(rep.converged, "residual {}", rep.residual);
        let mut check = vec![0.0; 3];
        a.matvec(&x, &mut check);
        for (have, want) in check.iter().zip(b) {
            assert!((have - want).abs() < 1e-8);
        }
    }

    #[test]
    fn gmres_matches_bicgstab() {
        let a = CsrMatrix::from_row_lists(
            4,
            vec![
                vec![(0, 10.0), (1, 1.0), (3, 2.0)],
                vec![(0, 2.0), (1, 8.0)],
                vec![(1, -3.0), (2, 7.0), (3, 1.0)],
                vec![(0, 1.0), (3, 9.0)],
            ],
        )
        .unwrap();
        let b = [1.0, 2.0, 3.0, 4.0];
        let (x1, r1) = solve(&a, &b, &SolveConfig::default(), None).unwrap();
        let cfg2 = SolveConfig {
            method: SolveMethod::Gmres { restart: 4 },
            ..Default::default()
        };
        let (x2, r2) = solve(&a, &b, &cfg2, None).unwrap();
        assert!(r1.converged && r2.converged);
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn report_residual_is_the_true_residual() {
        let a = diag_matrix(&[2.0, 4.0, 8.0]);
        let b = [2.0, 4.0, 8.0];
        let (x, rep) = solve(&a, &b, &SolveConfig::default(), None).unwrap();
        let mut r = vec![0.0; 3];
        a.matvec(&x, &mut r);
        let num: f64 = r
            .iter()
            .zip(b)
            .map(|(ri, bi)| (bi - ri) * (bi - ri))
            .sum::<f64>()
            .sqrt();
        let denom = (2.0f64 * 2.0 + 16.0 + 64.0).sqrt();
        assert!((rep.residual - num / denom).abs() < 1e-13);
    }

    #[test]
    fn exhausted_iterations_report_not_converged() {
        let a = CsrMatrix::from_row_lists(
            3,
            vec![
                vec![(0, 1.0), (1, 0.99), (2, 0.98)],
                vec![(0, 0.99), (1, 1.0), (2, 0.99)],
                vec![(0, 0.98), (1, 0.99), (2, 1.0)],
            ],
        )
        .unwrap();
        let cfg = SolveConfig {
            max_iters: Some(1),
            rel_tol: 1e-14,
            ..Default::default()
        };
        let (_, rep) = solve(&a, &[1.0, -1.0, 0.3], &cfg, None).unwrap();
        assert!(!rep.converged);
        assert!(rep.iterations <= 1);
    }

    #[test]
    fn zero_rhs_short_circuits() {
        let a = diag_matrix(&[1.0, 2.0]);
        let (x, rep) = solve(&a, &[0.0, 0.0], &SolveConfig::default(), None).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn block_jacobi_requires_groups_and_works_with_them() {
        let a = CsrMatrix::from_row_lists(
            4,
            vec![
                vec![(0, 4.0), (1, 1.0)],
                vec![(0, 1.0), (1, 4.0)],
                vec![(2, 5.0), (3, 2.0)],
                vec![(2, 2.0), (3, 5.0)],
            ],
        )
        .unwrap();
        let cfg = SolveConfig {
            precond: PrecondSpec::BlockJacobi,
            ..Default::default()
        };
        assert!(solve(&a, &[1.0; 4], &cfg, None).is_err());
        let groups = vec![vec![0u32, 1], vec![2, 3]];
        let (x, rep) = solve(&a, &[5.0, 5.0, 7.0, 7.0], &cfg, Some(&groups)).unwrap();
        assert!(rep.converged);
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[3] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn condition_of_identity_is_one() {
        let a = diag_matrix(&[1.0; 8]);
        let est = estimate_condition(&a, &SolveConfig::default(), 100).unwrap();
        assert!(est.complete);
        assert!((est.kappa - 1.0).abs() < 1e-10);
    }

    #[test]
    fn condition_of_scaled_diagonal() {
        // Singular values are the diagonal magnitudes, so kappa = 100 exactly.
        let a = diag_matrix(&[1.0, 3.0, 10.0, 40.0, 100.0]);
        let est = estimate_condition(&a, &SolveConfig::default(), 100).unwrap();
        assert!(est.complete);
        assert!(
            (est.kappa - 100.0).abs() < 1.0,
            "kappa = {} (want 100 within 1%)",
            est.kappa
        );
    }

    #[test]
    fn matrix_market_output_round_trips_header() {
        let a = diag_matrix(&[1.5, -2.0]);
        let mut buf = Vec::new();
        a.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "%%MatrixMarket matrix coordinate real general"
        );
        assert_eq!(lines.next().unwrap(), "2 2 2");
        assert_eq!(lines.next().unwrap(), "1 1 1.5e0");
    }
}
