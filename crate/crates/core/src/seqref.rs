//! Sequential time-stepping reference: the same spatial discretization
//! marched with Crank-Nicolson, for head-to-head comparison with the
//! space-time solver.
//!
//! The spatial grid is uniform, the mass matrix is consistent, and there is
//! no stabilization, so the comparison isolates what the space-time form and
//! its least-squares term buy. Each step solves
//!
//! ```text
//! (M/dt + A/2) u_{n+1} = (M/dt - A/2) u_n + (f_n + f_{n+1})/2
//! ```
//!
//! with Dirichlet data imposed at t_{n+1} and the previous step as the
//! iterative solver's initial guess. The advection field is sampled at the
//! initial time; every built-in problem transports with a steady field.

use crate::basis::{BasisSpec, QuadratureRule};
use crate::error::{Error, Result};
use crate::linsolve::{solve_from, CsrMatrix, SolveConfig};
use crate::problem::ProblemSpec;

/// Uniform tensor grid over the spatial domain only.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    dim: usize,
    degree: usize,
    cells: usize,
    lo: [f64; 2],
    len: [f64; 2],
}

impl SpatialGrid {
    pub fn uniform(problem: &ProblemSpec, level: u8, degree: usize) -> Result<SpatialGrid> {
        let d = problem.dim_space();
        if level > 16 {
            return Err(Error::domain(format!("spatial level {level} above 16")));
        }
        if degree < 1 || degree > crate::basis::MAX_DEGREE {
            return Err(Error::domain(format!("degree {degree} outside 1..=3")));
        }
        let mut lo = [0.0; 2];
        let mut len = [0.0; 2];
        for a in 0..d {
            let [l, u] = problem.domain.extent(a);
            lo[a] = l;
            len[a] = u - l;
        }
        Ok(SpatialGrid {
            dim: d,
            degree,
            cells: 1usize << level,
            lo,
            len,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells
    }

    /// Nodes per axis: degree * cells + 1.
    pub fn nodes_per_axis(&self) -> usize {
        self.degree * self.cells + 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().pow(self.dim as u32)
    }

    pub fn element_count(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn node_position(&self, id: usize) -> [f64; 2] {
        let na = self.nodes_per_axis();
        let denom = (self.degree * self.cells) as f64;
        let mut p = [0.0; 2];
        let mut rest = id;
        for a in 0..self.dim {
            let i = rest % na;
            rest /= na;
            p[a] = self.lo[a] + (i as f64 / denom) * self.len[a];
        }
        p
    }

    pub fn is_boundary(&self, id: usize) -> bool {
        let na = self.nodes_per_axis();
        let mut rest = id;
        for _ in 0..self.dim {
            let i = rest % na;
            rest /= na;
            if i == 0 || i == na - 1 {
                return true;
            }
        }
        false
    }

    /// Global node ids of one element, local lexicographic order.
    fn element_nodes(&self, cell: usize) -> Vec<usize> {
        let k = self.degree;
        let na = self.nodes_per_axis();
        let mut base = [0usize; 2];
        let mut rest = cell;
        for a in 0..self.dim {
            base[a] = (rest % self.cells) * k;
            rest /= self.cells;
        }
        let per = (k + 1).pow(self.dim as u32);
        let mut out = Vec::with_capacity(per);
        for j in 0..per {
            let mut rest = j;
            let mut id = 0usize;
            let mut stride = 1usize;
            for a in 0..self.dim {
                let l = rest % (k + 1);
                rest /= k + 1;
                id += (base[a] + l) * stride;
                stride *= na;
            }
            out.push(id);
        }
        out
    }

    fn cell_box(&self, cell: usize) -> ([f64; 2], [f64; 2]) {
        let mut lo = [0.0; 2];
        let mut size = [0.0; 2];
        let mut rest = cell;
        for a in 0..self.dim {
            let i = rest % self.cells;
            rest /= self.cells;
            let h = self.len[a] / self.cells as f64;
            lo[a] = self.lo[a] + i as f64 * h;
            size[a] = h;
        }
        (lo, size)
    }

    /// Evaluate a nodal field at a spatial point.
    pub fn evaluate(&self, values: &[f64], x: &[f64]) -> Result<f64> {
        if values.len() != self.node_count() {
            return Err(Error::domain(format!(
                "value count {} does not match node count {}",
                values.len(),
                self.node_count()
            )));
        }
        if x.len() != self.dim {
            return Err(Error::domain(format!(
                "point has {} coordinates, grid has {}",
                x.len(),
                self.dim
            )));
        }
        let basis = BasisSpec::new(self.degree, self.dim)?;
        let mut cell = 0usize;
        let mut stride = 1usize;
        let mut xi = [0.0f64; 3];
        for a in 0..self.dim {
            let h = self.len[a] / self.cells as f64;
            let rel = (x[a] - self.lo[a]) / h;
            let i = (rel.floor() as isize).clamp(0, self.cells as isize - 1) as usize;
            xi[a] = (rel - i as f64).clamp(0.0, 1.0);
            cell += i * stride;
            stride *= self.cells;
        }
        let phi = basis.shape_values(&xi)?;
        let ids = self.element_nodes(cell);
        Ok(phi
            .iter()
            .zip(ids)
            .map(|(v, id)| v * values[id])
            .sum())
    }

    /// Sample a nodal field along the segment from `a` to `b`: `samples`
    /// evenly spaced (arc length, value) pairs including both endpoints.
    pub fn profile(
        &self,
        values: &[f64],
        a: &[f64],
        b: &[f64],
        samples: usize,
    ) -> Result<Vec<(f64, f64)>> {
        if samples < 2 {
            return Err(Error::domain("a profile needs at least two samples"));
        }
        let length = a
            .iter()
            .zip(b)
            .map(|(p, q)| (q - p) * (q - p))
            .sum::<f64>()
            .sqrt();
        let mut out = Vec::with_capacity(samples);
        let mut x = vec![0.0f64; self.dim];
        for i in 0..samples {
            let s = i as f64 / (samples - 1) as f64;
            for k in 0..self.dim {
                x[k] = a[k] + s * (b[k] - a[k]);
            }
            out.push((s * length, self.evaluate(values, &x)?));
        }
        Ok(out)
    }

    /// L2 norm over the domain of a nodal field minus a reference function.
    pub fn l2_error(
        &self,
        values: &[f64],
        reference: &dyn Fn(&[f64]) -> f64,
        quad_order: usize,
    ) -> Result<f64> {
        let basis = BasisSpec::new(self.degree, self.dim)?;
        let quad = QuadratureRule::gauss(quad_order, self.dim)?;
        let mut total = 0.0;
        for cell in 0..self.element_count() {
            let (lo, size) = self.cell_box(cell);
            let ids = self.element_nodes(cell);
            let mut vol = 1.0;
            for a in 0..self.dim {
                vol *= size[a];
            }
            for (iq, xi) in quad.points.iter().enumerate() {
                let phi = basis.shape_values(xi)?;
                let mut x = [0.0f64; 2];
                for a in 0..self.dim {
                    x[a] = lo[a] + xi[a] * size[a];
                }
                let uh: f64 = phi.iter().zip(&ids).map(|(v, &id)| v * values[id]).sum();
                let e = uh - reference(&x[..self.dim]);
                total += quad.weights[iq] * vol * e * e;
            }
        }
        Ok(total.sqrt())
    }
}

/// Assembled spatial operators plus the free/fixed split.
pub struct CnSystem {
    pub grid: SpatialGrid,
    /// Consistent mass matrix over all nodes.
    pub mass: CsrMatrix,
    /// Spatial operator nu * stiffness + advection, over all nodes.
    pub stiff: CsrMatrix,
    free: Vec<usize>,
    /// Free-vector index of each node; usize::MAX for boundary nodes.
    free_of_node: Vec<usize>,
    /// Per-element free dof groups for block-Jacobi.
    groups: Vec<Vec<u32>>,
    t0: f64,
    t_final: f64,
}

impl CnSystem {
    pub fn build(
        problem: &ProblemSpec,
        level: u8,
        degree: usize,
        quad_order: Option<usize>,
    ) -> Result<CnSystem> {
        problem.validate()?;
        let grid = SpatialGrid::uniform(problem, level, degree)?;
        let d = grid.dim();
        let basis = BasisSpec::new(degree, d)?;
        let quad = QuadratureRule::gauss(quad_order.unwrap_or(degree + 2), d)?;
        let n = grid.node_count();
        let t0 = problem.domain.time_origin();
        let m = basis.nodes_per_element();

        let mut mass_rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        let mut stiff_rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        let mut groups = Vec::with_capacity(grid.element_count());
        for cell in 0..grid.element_count() {
            let ids = grid.element_nodes(cell);
            let (lo, size) = grid.cell_box(cell);
            let mut vol = 1.0;
            for a in 0..d {
                vol *= size[a];
            }
            let mut m_loc = vec![0.0f64; m * m];
            let mut a_loc = vec![0.0f64; m * m];
            for (iq, xi) in quad.points.iter().enumerate() {
                let w = quad.weights[iq] * vol;
                let phi = basis.shape_values(xi)?;
                let grads = basis.shape_gradients(xi)?;
                let mut x = [0.0f64; 2];
                for a in 0..d {
                    x[a] = lo[a] + xi[a] * size[a];
                }
                let adv = problem.advection_at(&x[..d], t0);
                for i in 0..m {
                    for j in 0..m {
                        let mut diff = 0.0;
                        let mut conv = 0.0;
                        for a in 0..d {
                            let gj = grads[j][a] / size[a];
                            diff += gj * grads[i][a] / size[a];
                            conv += adv[a] * gj;
                        }
                        m_loc[i * m + j] += w * phi[j] * phi[i];
                        a_loc[i * m + j] += w * (problem.nu * diff + conv * phi[i]);
                    }
                }
            }
            for i in 0..m {
                for j in 0..m {
                    mass_rows[ids[i]].push((ids[j] as u32, m_loc[i * m + j]));
                    stiff_rows[ids[i]].push((ids[j] as u32, a_loc[i * m + j]));
                }
            }
            let mut group: Vec<u32> = ids
                .iter()
                .filter(|&&id| !grid.is_boundary(id))
                .map(|&id| id as u32)
                .collect();
            group.sort_unstable();
            groups.push(group);
        }
        let mass = CsrMatrix::from_row_lists(n, mass_rows)?;
        let stiff = CsrMatrix::from_row_lists(n, stiff_rows)?;

        let free: Vec<usize> = (0..n).filter(|&id| !grid.is_boundary(id)).collect();
        let mut free_of_node = vec![usize::MAX; n];
        for (k, &id) in free.iter().enumerate() {
            free_of_node[id] = k;
        }
        // Re-express the groups in free-vector indices.
        let groups = groups
            .into_iter()
            .map(|g| {
                g.into_iter()
                    .map(|id| free_of_node[id as usize] as u32)
                    .collect()
            })
            .collect();
        Ok(CnSystem {
            grid,
            mass,
            stiff,
            free,
            free_of_node,
            groups,
            t0,
            t_final: problem.domain.final_time(),
        })
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    /// Nodal interpolation of the initial data.
    pub fn initial_values(&self, problem: &ProblemSpec) -> Vec<f64> {
        (0..self.grid.node_count())
            .map(|id| {
                let p = self.grid.node_position(id);
                (problem.initial)(&p[..self.grid.dim()], self.t0)
            })
            .collect()
    }

    /// Consistent load vector of f(., t) over all nodes.
    pub fn load_vector(&self, problem: &ProblemSpec, t: f64, quad_order: Option<usize>) -> Result<Vec<f64>> {
        let d = self.grid.dim();
        let degree = self.grid.degree();
        let basis = BasisSpec::new(degree, d)?;
        let quad = QuadratureRule::gauss(quad_order.unwrap_or(degree + 2), d)?;
        let mut out = vec![0.0f64; self.grid.node_count()];
        for cell in 0..self.grid.element_count() {
            let ids = self.grid.element_nodes(cell);
            let (lo, size) = self.grid.cell_box(cell);
            let mut vol = 1.0;
            for a in 0..d {
                vol *= size[a];
            }
            for (iq, xi) in quad.points.iter().enumerate() {
                let w = quad.weights[iq] * vol;
                let phi = basis.shape_values(xi)?;
                let mut x = [0.0f64; 2];
                for a in 0..d {
                    x[a] = lo[a] + xi[a] * size[a];
                }
                let f = (problem.forcing)(&x[..d], t);
                for i in 0..phi.len() {
                    out[ids[i]] += w * f * phi[i];
                }
            }
        }
        Ok(out)
    }

    /// M-weighted inner product of two full nodal vectors.
    pub fn mass_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut mv = vec![0.0; v.len()];
        self.mass.matvec(v, &mut mv);
        u.iter().zip(&mv).map(|(a, b)| a * b).sum()
    }

    /// Left-hand operator (M/dt + A/2) restricted to free nodes, plus the
    /// free-row x fixed-column coupling used for Dirichlet lifting.
    fn step_matrices(&self, dt: f64) -> Result<(CsrMatrix, Vec<Vec<(usize, f64)>>)> {
        let nf = self.free.len();
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nf];
        let mut fixed_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nf];
        for (r, &id) in self.free.iter().enumerate() {
            let (mc, mv) = self.mass.row(id);
            for (c, v) in mc.iter().zip(mv) {
                let k = *v / dt + self.stiff.get(id, *c as usize) / 2.0;
                let col = self.free_of_node[*c as usize];
                if col == usize::MAX {
                    fixed_cols[r].push((*c as usize, k));
                } else {
                    rows[r].push((col as u32, k));
                }
            }
        }
        Ok((CsrMatrix::from_row_lists(nf, rows)?, fixed_cols))
    }

    /// One Crank-Nicolson step from the full nodal vector `u` at time `t`.
    pub fn step(
        &self,
        problem: &ProblemSpec,
        u: &[f64],
        t: f64,
        dt: f64,
        solver: &SolveConfig,
    ) -> Result<(Vec<f64>, usize)> {
        let (lhs, fixed_cols) = self.step_matrices(dt)?;
        self.step_with(problem, u, t, dt, solver, &lhs, &fixed_cols, None)
            .map(|(u, iters, _)| (u, iters))
    }

    #[allow(clippy::too_many_arguments)]
    fn step_with(
        &self,
        problem: &ProblemSpec,
        u: &[f64],
        t: f64,
        dt: f64,
        solver: &SolveConfig,
        lhs: &CsrMatrix,
        fixed_cols: &[Vec<(usize, f64)>],
        load_now: Option<&[f64]>,
    ) -> Result<(Vec<f64>, usize, Vec<f64>)> {
        let n = self.grid.node_count();
        if u.len() != n {
            return Err(Error::domain(format!(
                "state length {} does not match node count {n}",
                u.len()
            )));
        }
        let d = self.grid.dim();
        let t_next = t + dt;
        let f_now = match load_now {
            Some(f) => f.to_vec(),
            None => self.load_vector(problem, t, None)?,
        };
        let f_next = self.load_vector(problem, t_next, None)?;

        // w = (M/dt - A/2) u + (f_n + f_{n+1}) / 2 over all nodes.
        let mut mu = vec![0.0; n];
        self.mass.matvec(u, &mut mu);
        let mut au = vec![0.0; n];
        self.stiff.matvec(u, &mut au);
        let mut w = vec![0.0; n];
        for i in 0..n {
            w[i] = mu[i] / dt - au[i] / 2.0 + 0.5 * (f_now[i] + f_next[i]);
        }

        // Dirichlet data at the new time level.
        let mut g_next = vec![0.0; n];
        for id in 0..n {
            if self.free_of_node[id] == usize::MAX {
                let p = self.grid.node_position(id);
                g_next[id] = (problem.dirichlet)(&p[..d], t_next);
            }
        }

        let nf = self.free.len();
        let mut rhs = vec![0.0; nf];
        for r in 0..nf {
            let mut acc = w[self.free[r]];
            for &(col, k) in &fixed_cols[r] {
                acc -= k * g_next[col];
            }
            rhs[r] = acc;
        }
        let guess: Vec<f64> = self.free.iter().map(|&id| u[id]).collect();
        let (x, rep) = solve_from(lhs, &rhs, Some(&guess), solver, Some(&self.groups))?;
        if !rep.converged {
            return Err(Error::SolveFailed {
                iterations: rep.iterations,
                residual: rep.residual,
            });
        }
        let mut next = g_next;
        for (r, &id) in self.free.iter().enumerate() {
            next[id] = x[r];
        }
        Ok((next, rep.iterations, f_next))
    }

    /// March from the initial data to the final time in `steps` equal steps,
    /// capturing the state nearest to each requested snapshot time.
    pub fn march(
        &self,
        problem: &ProblemSpec,
        steps: usize,
        solver: &SolveConfig,
        snapshot_times: &[f64],
    ) -> Result<CnRun> {
        if steps == 0 {
            return Err(Error::domain("step count must be at least 1"));
        }
        let dt = (self.t_final - self.t0) / steps as f64;
        let (lhs, fixed_cols) = self.step_matrices(dt)?;
        let mut u = self.initial_values(problem);
        let mut iterations = 0usize;
        let mut load = self.load_vector(problem, self.t0, None)?;

        // Snapshot bookkeeping: step index nearest to each requested time.
        let snap_steps: Vec<usize> = snapshot_times
            .iter()
            .map(|&t| {
                let k = ((t - self.t0) / dt).round();
                (k.max(0.0) as usize).min(steps)
            })
            .collect();
        let mut snapshots: Vec<(f64, Vec<f64>)> = Vec::with_capacity(snapshot_times.len());
        for (si, &k) in snap_steps.iter().enumerate() {
            if k == 0 {
                snapshots.push((self.t0, u.clone()));
            } else {
                let _ = si;
            }
        }

        for n in 0..steps {
            let t = self.t0 + n as f64 * dt;
            let (next, iters, f_next) = self
                .step_with(problem, &u, t, dt, solver, &lhs, &fixed_cols, Some(&load))
                .map_err(|e| Error::TimeMarch {
                    step: n,
                    source: Box::new(e),
                })?;
            u = next;
            load = f_next;
            iterations += iters;
            let done = n + 1;
            for &k in &snap_steps {
                if k == done {
                    snapshots.push((self.t0 + done as f64 * dt, u.clone()));
                }
            }
        }
        Ok(CnRun {
            final_values: u,
            dt,
            steps,
            iterations,
            snapshots,
        })
    }
}

/// Outcome of a Crank-Nicolson march.
pub struct CnRun {
    /// Full nodal state at the final time.
    pub final_values: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    /// Total inner Krylov iterations across all steps.
    pub iterations: usize,
    /// (time, state) pairs for the requested snapshot times, in request
    /// order.
    pub snapshots: Vec<(f64, Vec<f64>)>,
}
