//! Patch tests: when the exact solution lies in the discrete space, the
//! solver must reproduce it to solver tolerance, hanging nodes included.
//!
//! The solutions below are tensor-product polynomials of exactly the element
//! degree, so interpolation is exact, the strong residual vanishes pointwise,
//! and the stabilized system is solved by the interpolant itself. Any
//! discrepancy beyond iteration tolerance means a bug in assembly, Dirichlet
//! handling, or the hanging-node constraints.

use std::sync::Arc;

use stfem::assembly::{assemble, AssemblyOptions};
use stfem::basis::BasisSpec;
use stfem::linsolve::{solve, PrecondSpec, SolveConfig, SolveMethod};
use stfem::mesh::{SpaceTimeDomain, SpaceTimeMesh};
use stfem::problem::{ExactSolution, ProblemSpec, ScalarFn, VectorFn};

/// Mesh with hanging nodes at two level jumps.
fn hanging_mesh(dim_space: usize) -> SpaceTimeMesh {
    let domain = SpaceTimeDomain::unit(dim_space).unwrap();
    let mesh = SpaceTimeMesh::uniform(domain, 2).unwrap();
    let picks: Vec<_> = [0usize, mesh.len() / 3, mesh.len() / 2]
        .iter()
        .map(|&i| mesh.leaves()[i])
        .collect();
    let mesh = mesh.refine(&picks).unwrap().balance_2to1().unwrap();
    let again = [mesh.leaves()[1], mesh.leaves()[mesh.len() / 4]];
    mesh.refine(&again).unwrap().balance_2to1().unwrap()
}

/// Build a problem whose exact solution is `u` with constant advection `a`,
/// deriving forcing and boundary data from the solution itself.
fn manufactured(
    dim_space: usize,
    nu: f64,
    a: [f64; 2],
    u: ScalarFn,
    u_t: ScalarFn,
    grad: VectorFn,
    lap: ScalarFn,
) -> ProblemSpec {
    let forcing: ScalarFn = {
        let (u_t, grad, lap) = (u_t.clone(), grad.clone(), lap.clone());
        Arc::new(move |x: &[f64], t: f64| {
            let g = grad(x, t);
            let mut conv = 0.0;
            for i in 0..x.len() {
                conv += a[i] * g[i];
            }
            u_t(x, t) + conv - nu * lap(x, t)
        })
    };
    ProblemSpec {
        name: "patch".into(),
        domain: SpaceTimeDomain::unit(dim_space).unwrap(),
        nu,
        advection: Some(Arc::new(move |_: &[f64], _: f64| a)),
        divergence_free: true,
        forcing,
        dirichlet: u.clone(),
        initial: u.clone(),
        exact: Some(ExactSolution {
            value: u,
            time_deriv: u_t,
            gradient: grad,
            laplacian: lap,
        }),
    }
}

fn max_nodal_error(problem: &ProblemSpec, mesh: &SpaceTimeMesh, degree: usize) -> f64 {
    let d = mesh.dim_space();
    let nodes = mesh.nodes(degree).unwrap();
    let basis = BasisSpec::new(degree, mesh.dim()).unwrap();
    let opts = AssemblyOptions::default();
    let sys = assemble(mesh, &nodes, problem, &basis, &opts).unwrap();
    let cfg = SolveConfig {
        method: SolveMethod::Gmres {
            restart: sys.dof_map.n_free().max(1),
        },
        precond: PrecondSpec::Jacobi,
        rel_tol: 1e-12,
        max_iters: Some(10_000),
    };
    let (x, rep) = solve(&sys.matrix, &sys.rhs, &cfg, Some(&sys.dof_groups)).unwrap();
    assert!(rep.converged, "solver stalled at residual {}", rep.residual);
    let values = sys.dof_map.nodal_values(&x).unwrap();
    let exact = problem.exact.as_ref().unwrap();
    let mut worst = 0.0f64;
    for id in 0..nodes.len() as u32 {
        let p = nodes.position(id);
        let want = (exact.value)(&p[..d], p[d]);
        worst = worst.max((values[id as usize] - want).abs());
    }
    worst
}

#[test]
fn bilinear_solution_is_reproduced_in_1d() {
    let u: ScalarFn = Arc::new(|x: &[f64], t: f64| 0.3 + 0.7 * x[0] - 0.4 * t + 1.1 * x[0] * t);
    let u_t: ScalarFn = Arc::new(|x: &[f64], _| -0.4 + 1.1 * x[0]);
    let grad: VectorFn = Arc::new(|_: &[f64], t: f64| [0.7 + 1.1 * t, 0.0]);
    let lap: ScalarFn = Arc::new(|_: &[f64], _| 0.0);
    let problem = manufactured(1, 0.05, [1.0, 0.0], u, u_t, grad, lap);
    let err = max_nodal_error(&problem, &hanging_mesh(1), 1);
    assert!(err <= 1e-9, "nodal error {err:.3e} exceeds solver tolerance");
}

#[test]
fn biquadratic_solution_is_reproduced_in_1d() {
    let u: ScalarFn = Arc::new(|x: &[f64], t: f64| x[0] * x[0] * t * t);
    let u_t: ScalarFn = Arc::new(|x: &[f64], t: f64| 2.0 * x[0] * x[0] * t);
    let grad: VectorFn = Arc::new(|x: &[f64], t: f64| [2.0 * x[0] * t * t, 0.0]);
    let lap: ScalarFn = Arc::new(|_: &[f64], t: f64| 2.0 * t * t);
    let problem = manufactured(1, 0.05, [1.0, 0.0], u, u_t, grad, lap);
    let err = max_nodal_error(&problem, &hanging_mesh(1), 2);
    assert!(err <= 1e-9, "nodal error {err:.3e} exceeds solver tolerance");
}

#[test]
fn trilinear_solution_is_reproduced_in_2d() {
    let u: ScalarFn =
        Arc::new(|x: &[f64], t: f64| x[0] * x[1] * t + 0.5 * x[0] - 0.2 * x[1] + 0.1);
    let u_t: ScalarFn = Arc::new(|x: &[f64], _| x[0] * x[1]);
    let grad: VectorFn = Arc::new(|x: &[f64], t: f64| [x[1] * t + 0.5, x[0] * t - 0.2]);
    let lap: ScalarFn = Arc::new(|_: &[f64], _| 0.0);
    let problem = manufactured(2, 0.05, [1.0, 0.5], u, u_t, grad, lap);
    let err = max_nodal_error(&problem, &hanging_mesh(2), 1);
    assert!(err <= 1e-9, "nodal error {err:.3e} exceeds solver tolerance");
}

#[test]
fn triquadratic_solution_is_reproduced_in_2d() {
    let u: ScalarFn = Arc::new(|x: &[f64], t: f64| x[0] * x[0] * x[1] * t * t);
    let u_t: ScalarFn = Arc::new(|x: &[f64], t: f64| 2.0 * x[0] * x[0] * x[1] * t);
    let grad: VectorFn =
        Arc::new(|x: &[f64], t: f64| [2.0 * x[0] * x[1] * t * t, x[0] * x[0] * t * t]);
    let lap: ScalarFn = Arc::new(|x: &[f64], t: f64| 2.0 * x[1] * t * t);
    let problem = manufactured(2, 0.05, [1.0, 0.5], u, u_t, grad, lap);
    let err = max_nodal_error(&problem, &hanging_mesh(2), 2);
    assert!(err <= 1e-9, "nodal error {err:.3e} exceeds solver tolerance");
}
