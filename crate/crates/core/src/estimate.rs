//! A-posteriori machinery: the residual estimator that drives adaptivity and
//! the exact-error norms used to judge it.
//!
//! The element indicator is
//!
//! ```text
//! eta_K^2 = h_K^2 ||f - M u_h||_K^2 + 1/2 sum_E h_E ||j||_E^2
//! ```
//!
//! where the sum runs over the interior faces of K whose normal points along
//! a spatial axis and j is the jump of the diffusive flux nu du/dn across the
//! face. Faces with a time-direction normal carry no flux term (the discrete
//! space is continuous across them and the form integrates dt u by parts in
//! time only through the final slab), and boundary faces contribute nothing.
//! Both neighbors of a face receive half of its jump term; across a hanging
//! face the integral is taken per fine subface with h_E from the fine side.

use crate::assembly::{gls_parameter, FieldFunction, GlsParams};
use crate::basis::{BasisSpec, QuadratureRule};
use crate::error::{Error, Result};
use crate::mesh::{ElementId, FaceKind, SpaceTimeMesh};
use crate::problem::ProblemSpec;

/// Estimator output over one mesh, in canonical leaf order.
#[derive(Debug, Clone)]
pub struct EstimatorReport {
    pub per_element: Vec<f64>,
    /// Root sum of squares of the element indicators.
    pub global: f64,
    pub max_element: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EstimateOptions {
    /// Quadrature points per axis; default degree + 2.
    pub quad_order: Option<usize>,
}

/// Exact-error norms of a discrete field against the problem's reference
/// solution.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// L2 norm over the whole space-time cylinder.
    pub err_l2: f64,
    /// L2 norm over the final-time slab.
    pub err_gamma_t: f64,
    /// Energy norm: final slab, nu-weighted spatial gradient, and the
    /// stabilization-weighted strong residual.
    pub err_h: f64,
    /// err_h plus the time-derivative seminorm; the estimator is judged
    /// against this one.
    pub err_vh_star: f64,
    /// Plain (unweighted) time-derivative seminorm, for reference.
    pub err_time: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NormOptions {
    pub gls: GlsParams,
    /// Quadrature points per axis; default degree + 3 to resolve the smooth
    /// reference solution.
    pub quad_order: Option<usize>,
}

/// Geometry of one leaf, cached for repeated gradient evaluations.
struct ElementGeom {
    lo: [f64; 3],
    size: [f64; 3],
}

impl ElementGeom {
    fn of(mesh: &SpaceTimeMesh, e: ElementId) -> ElementGeom {
        let (lo, size) = mesh.element_box(e);
        ElementGeom { lo, size }
    }

    fn reference(&self, p: &[f64; 3], dim: usize) -> [f64; 3] {
        let mut xi = [0.0f64; 3];
        for a in 0..dim {
            xi[a] = ((p[a] - self.lo[a]) / self.size[a]).clamp(0.0, 1.0);
        }
        xi
    }
}

/// d(u_h)/dx_axis at a physical point, one-sided from the given element.
fn directional_gradient(
    basis: &BasisSpec,
    geom: &ElementGeom,
    coeffs: &[f64],
    p: &[f64; 3],
    axis: usize,
    dim: usize,
) -> Result<f64> {
    let xi = geom.reference(p, dim);
    let grads = basis.shape_gradients(&xi)?;
    let mut acc = 0.0;
    for (c, g) in coeffs.iter().zip(&grads) {
        acc += c * g[axis];
    }
    Ok(acc / geom.size[axis])
}

fn tangent_axes(axis: usize, dim: usize) -> Vec<usize> {
    (0..dim).filter(|&a| a != axis).collect()
}

/// Integral of the squared diffusive-flux jump over one planar subface.
/// `plane` is the face coordinate along `axis`; the subface box spans the
/// tangent axes of `window`.
#[allow(clippy::too_many_arguments)]
fn jump_square_on_subface(
    mesh: &SpaceTimeMesh,
    basis: &BasisSpec,
    field: &FieldFunction,
    face_quad: &QuadratureRule,
    nu: f64,
    axis: usize,
    plane: f64,
    window: &ElementGeom,
    sides: (ElementId, ElementId),
) -> Result<f64> {
    let dim = mesh.dim();
    let tang = tangent_axes(axis, dim);
    let geom_a = ElementGeom::of(mesh, sides.0);
    let geom_b = ElementGeom::of(mesh, sides.1);
    let coeffs_a = field.element_coeffs(sides.0);
    let coeffs_b = field.element_coeffs(sides.1);
    let mut area = 1.0;
    for &a in &tang {
        area *= window.size[a];
    }
    let mut total = 0.0;
    for (q, xi) in face_quad.points.iter().enumerate() {
        let mut p = [0.0f64; 3];
        p[axis] = plane;
        for (k, &a) in tang.iter().enumerate() {
            p[a] = window.lo[a] + xi[k] * window.size[a];
        }
        let ga = directional_gradient(basis, &geom_a, &coeffs_a, &p, axis, dim)?;
        let gb = directional_gradient(basis, &geom_b, &coeffs_b, &p, axis, dim)?;
        let j = nu * (ga - gb);
        total += face_quad.weights[q] * area * j * j;
    }
    Ok(total)
}

/// Residual estimator for a solved field.
pub fn estimate(
    problem: &ProblemSpec,
    field: &FieldFunction,
    opts: &EstimateOptions,
) -> Result<EstimatorReport> {
    let mesh = field.mesh();
    let nodes = field.node_set();
    let dim = mesh.dim();
    let d = mesh.dim_space();
    if problem.dim_space() != d {
        return Err(Error::domain(format!(
            "problem is {}d in space but mesh is {d}d",
            problem.dim_space()
        )));
    }
    let degree = nodes.degree();
    let basis = BasisSpec::new(degree, dim)?;
    let q = opts.quad_order.unwrap_or(degree + 2);
    let cell_quad = QuadratureRule::gauss(q, dim)?;
    let face_quad = QuadratureRule::gauss(q, dim - 1)?;
    let nu = problem.nu;

    let mut eta_sq = vec![0.0f64; mesh.len()];

    // Interior residual, element by element.
    for (k, &elem) in mesh.leaves().iter().enumerate() {
        let geom = ElementGeom::of(mesh, elem);
        let coeffs = field.element_coeffs(elem);
        let mut vol = 1.0;
        for a in 0..dim {
            vol *= geom.size[a];
        }
        let h = mesh.element_size(elem);
        let mut res_sq = 0.0;
        for (iq, xi) in cell_quad.points.iter().enumerate() {
            let mut p = [0.0f64; 3];
            for a in 0..dim {
                p[a] = geom.lo[a] + xi[a] * geom.size[a];
            }
            let grads = basis.shape_gradients(xi)?;
            let seconds = basis.shape_second_derivatives(xi)?;
            let mut du_dt = 0.0;
            let mut conv = 0.0;
            let mut lap = 0.0;
            let adv = problem.advection_at(&p[..d], p[d]);
            for (c, (g, s)) in coeffs.iter().zip(grads.iter().zip(&seconds)) {
                du_dt += c * g[d] / geom.size[d];
                for a in 0..d {
                    conv += adv[a] * c * g[a] / geom.size[a];
                    lap += c * s[a] / (geom.size[a] * geom.size[a]);
                }
            }
            let f = (problem.forcing)(&p[..d], p[d]);
            let r = f - (du_dt + conv - nu * lap);
            res_sq += cell_quad.weights[iq] * vol * r * r;
        }
        eta_sq[k] += h * h * res_sq;
    }

    // Flux jumps across interior faces with spatial normals.
    for face in mesh.enumerate_faces()? {
        if face.axis >= d {
            continue;
        }
        match &face.kind {
            FaceKind::Boundary { .. } => {}
            FaceKind::Conforming { neg, pos } => {
                let window = ElementGeom::of(mesh, *neg);
                let plane = window.lo[face.axis] + window.size[face.axis];
                let jump_sq = jump_square_on_subface(
                    mesh, &basis, field, &face_quad, nu, face.axis, plane, &window,
                    (*neg, *pos),
                )?;
                let h_e = face_size(&window, face.axis, dim);
                let half = 0.5 * h_e * jump_sq;
                eta_sq[mesh.leaf_index(*neg).unwrap()] += half;
                eta_sq[mesh.leaf_index(*pos).unwrap()] += half;
            }
            FaceKind::Hanging { coarse, coarse_on_neg, fine } => {
                for &f in fine {
                    let window = ElementGeom::of(mesh, f);
                    let plane = if *coarse_on_neg {
                        window.lo[face.axis]
                    } else {
                        window.lo[face.axis] + window.size[face.axis]
                    };
                    let jump_sq = jump_square_on_subface(
                        mesh, &basis, field, &face_quad, nu, face.axis, plane, &window,
                        (*coarse, f),
                    )?;
                    let h_e = face_size(&window, face.axis, dim);
                    let half = 0.5 * h_e * jump_sq;
                    eta_sq[mesh.leaf_index(*coarse).unwrap()] += half;
                    eta_sq[mesh.leaf_index(f).unwrap()] += half;
                }
            }
        }
    }

    let per_element: Vec<f64> = eta_sq.iter().map(|s| s.sqrt()).collect();
    let global = eta_sq.iter().sum::<f64>().sqrt();
    let max_element = per_element.iter().cloned().fold(0.0, f64::max);
    Ok(EstimatorReport {
        per_element,
        global,
        max_element,
    })
}

/// Face diameter proxy: the largest tangent side of the subface window.
fn face_size(window: &ElementGeom, axis: usize, dim: usize) -> f64 {
    let mut h = 0.0f64;
    for a in 0..dim {
        if a != axis {
            h = h.max(window.size[a]);
        }
    }
    h
}

/// Exact-error norms against the problem's reference solution. The
/// stabilization weight is re-evaluated per element with the same formula the
/// assembler uses (the advection scale is taken over this rule's points).
pub fn error_norms(
    problem: &ProblemSpec,
    field: &FieldFunction,
    opts: &NormOptions,
) -> Result<ErrorReport> {
    let exact = problem.exact()?;
    let mesh = field.mesh();
    let nodes = field.node_set();
    let dim = mesh.dim();
    let d = mesh.dim_space();
    let degree = nodes.degree();
    let basis = BasisSpec::new(degree, dim)?;
    let q = opts.quad_order.unwrap_or(degree + 3);
    let cell_quad = QuadratureRule::gauss(q, dim)?;
    let face_quad = QuadratureRule::gauss(q, dim - 1)?;
    let nu = problem.nu;
    let t_final = mesh.domain().final_time();
    let time_tol = 1e-12 * mesh.domain().length(d).max(1.0);

    let mut l2_sq = 0.0;
    let mut grad_sq = 0.0;
    let mut stab_sq = 0.0;
    let mut time_sq = 0.0;
    let mut gamma_t_sq = 0.0;

    for &elem in mesh.leaves() {
        let geom = ElementGeom::of(mesh, elem);
        let coeffs = field.element_coeffs(elem);
        let mut vol = 1.0;
        for a in 0..dim {
            vol *= geom.size[a];
        }
        let h = mesh.element_size(elem);

        // Advection scale for this element's stabilization weight.
        let mut a_tilde: f64 = 1.0;
        if problem.advection.is_some() {
            for xi in &cell_quad.points {
                let mut p = [0.0f64; 3];
                for a in 0..dim {
                    p[a] = geom.lo[a] + xi[a] * geom.size[a];
                }
                let adv = problem.advection_at(&p[..d], p[d]);
                a_tilde = a_tilde.max((adv[0] * adv[0] + adv[1] * adv[1] + 1.0).sqrt());
            }
        }
        let eps = gls_parameter(nu, h, a_tilde, &opts.gls);

        for (iq, xi) in cell_quad.points.iter().enumerate() {
            let mut p = [0.0f64; 3];
            for a in 0..dim {
                p[a] = geom.lo[a] + xi[a] * geom.size[a];
            }
            let w = cell_quad.weights[iq] * vol;
            let phi = basis.shape_values(xi)?;
            let grads = basis.shape_gradients(xi)?;
            let seconds = basis.shape_second_derivatives(xi)?;
            let mut uh = 0.0;
            let mut duh_dt = 0.0;
            let mut grad_uh = [0.0f64; 2];
            let mut lap_uh = 0.0;
            for (i, c) in coeffs.iter().enumerate() {
                uh += c * phi[i];
                duh_dt += c * grads[i][d] / geom.size[d];
                for a in 0..d {
                    grad_uh[a] += c * grads[i][a] / geom.size[a];
                    lap_uh += c * seconds[i][a] / (geom.size[a] * geom.size[a]);
                }
            }
            let xs = &p[..d];
            let t = p[d];
            let e = (exact.value)(xs, t) - uh;
            let de_dt = (exact.time_deriv)(xs, t) - duh_dt;
            let ex_grad = (exact.gradient)(xs, t);
            let mut grad_e = [0.0f64; 2];
            for a in 0..d {
                grad_e[a] = ex_grad[a] - grad_uh[a];
            }
            let lap_e = (exact.laplacian)(xs, t) - lap_uh;
            let adv = problem.advection_at(xs, t);
            let mut conv_e = 0.0;
            let mut grad_e_sq = 0.0;
            for a in 0..d {
                conv_e += adv[a] * grad_e[a];
                grad_e_sq += grad_e[a] * grad_e[a];
            }
            let me = de_dt + conv_e - nu * lap_e;
            l2_sq += w * e * e;
            grad_sq += w * grad_e_sq;
            time_sq += w * de_dt * de_dt;
            stab_sq += eps * w * me * me;
        }

        // Final-time slab contribution from elements touching t = T.
        let top = geom.lo[d] + geom.size[d];
        if (top - t_final).abs() <= time_tol {
            let mut area = 1.0;
            for a in 0..d {
                area *= geom.size[a];
            }
            for (iq, xi) in face_quad.points.iter().enumerate() {
                let mut p = [0.0f64; 3];
                p[d] = top;
                for a in 0..d {
                    p[a] = geom.lo[a] + xi[a] * geom.size[a];
                }
                let xi_elem = geom.reference(&p, dim);
                let phi = basis.shape_values(&xi_elem)?;
                let uh: f64 = coeffs.iter().zip(&phi).map(|(c, v)| c * v).sum();
                let e = (exact.value)(&p[..d], p[d]) - uh;
                gamma_t_sq += face_quad.weights[iq] * area * e * e;
            }
        }
    }

    let err_h = (gamma_t_sq + nu * grad_sq + stab_sq).sqrt();
    Ok(ErrorReport {
        err_l2: l2_sq.sqrt(),
        err_gamma_t: gamma_t_sq.sqrt(),
        err_h,
        err_vh_star: (gamma_t_sq + nu * grad_sq + stab_sq + time_sq).sqrt(),
        err_time: time_sq.sqrt(),
    })
}

/// Integral of `f` over the final-time boundary t = T.
pub fn integrate_over_final_time(
    mesh: &SpaceTimeMesh,
    quad_order: usize,
    f: &dyn Fn(&[f64; 3]) -> f64,
) -> Result<f64> {
    let dim = mesh.dim();
    let d = mesh.dim_space();
    let quad = QuadratureRule::gauss(quad_order, dim - 1)?;
    let t_final = mesh.domain().final_time();
    let time_tol = 1e-12 * mesh.domain().length(d).max(1.0);
    let mut total = 0.0;
    for &elem in mesh.leaves() {
        let geom = ElementGeom::of(mesh, elem);
        let top = geom.lo[d] + geom.size[d];
        if (top - t_final).abs() > time_tol {
            continue;
        }
        let mut area = 1.0;
        for a in 0..d {
            area *= geom.size[a];
        }
        for (iq, xi) in quad.points.iter().enumerate() {
            let mut p = [0.0f64; 3];
            p[d] = top;
            for a in 0..d {
                p[a] = geom.lo[a] + xi[a] * geom.size[a];
            }
            total += quad.weights[iq] * area * f(&p);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::interpolate_nodal;
    use crate::mesh::SpaceTimeDomain;
    use crate::problem::{make_heat_mms, ExactSolution, ProblemSpec};
    use std::sync::Arc;

    /// Heat problem whose exact solution is the globally bilinear u = x t.
    fn bilinear_problem(nu: f64) -> ProblemSpec {
        let mut p = make_heat_mms(nu, 1).unwrap();
        p.forcing = Arc::new(|x: &[f64], _| x[0]);
        p.dirichlet = Arc::new(|x: &[f64], t| x[0] * t);
        p.initial = Arc::new(|_: &[f64], _| 0.0);
        p.exact = Some(ExactSolution {
            value: Arc::new(|x: &[f64], t| x[0] * t),
            time_deriv: Arc::new(|x: &[f64], _| x[0]),
            gradient: Arc::new(|_: &[f64], t| [t, 0.0]),
            laplacian: Arc::new(|_: &[f64], _| 0.0),
        });
        p
    }

    fn field_from(
        mesh: &SpaceTimeMesh,
        nodes: &crate::mesh::NodeSet,
        f: impl Fn(&[f64], f64) -> f64,
    ) -> Vec<f64> {
        let hanging = mesh.hanging_nodes(nodes).unwrap();
        interpolate_nodal(nodes, &hanging, mesh.dim_space(), f)
    }

    #[test]
    fn estimator_vanishes_when_the_field_solves_the_pde() {
        // u = x t is in the discrete space and solves the equation with
        // f = x, so residual and jumps are zero even across hanging faces.
        let domain = SpaceTimeDomain::unit(1).unwrap();
        let mesh = SpaceTimeMesh::uniform(domain, 2)
            .unwrap()
            .refine(&[ElementId::new(2, [1, 1, 0])])
            .unwrap()
            .balance_2to1()
            .unwrap();
        let nodes = mesh.nodes(1).unwrap();
        let problem = bilinear_problem(1e-2);
        let values = field_from(&mesh, &nodes, |x, t| x[0] * t);
        let field = FieldFunction::new(&mesh, &nodes, values).unwrap();
        let report = estimate(&problem, &field, &EstimateOptions::default()).unwrap();
        assert!(report.global < 1e-12, "eta = {}", report.global);
    }

    #[test]
    fn kink_in_space_produces_the_expected_jump_terms() {
        // Piecewise-linear u = max(x - 1/2, 0), constant in time, f = 0:
        // residual vanishes elementwise but the flux jumps by nu at x = 1/2.
        let domain = SpaceTimeDomain::unit(1).unwrap();
        let mesh = SpaceTimeMesh::uniform(domain, 1).unwrap();
        let nodes = mesh.nodes(1).unwrap();
        let mut problem = make_heat_mms(1.0, 1).unwrap();
        problem.forcing = Arc::new(|_: &[f64], _| 0.0);
        let values = field_from(&mesh, &nodes, |x, _| (x[0] - 0.5).max(0.0));
        let field = FieldFunction::new(&mesh, &nodes, values).unwrap();
        let report = estimate(&problem, &field, &EstimateOptions::default()).unwrap();
        // Each face at x = 1/2 has ||j||^2 = nu^2 * 1/2 and h_E = 1/2, and
        // every element touches exactly one such face:
        // eta_K^2 = 1/2 * 1/2 * 1/2 = 1/8.
        let want = 0.125f64.sqrt();
        for (k, eta) in report.per_element.iter().enumerate() {
            assert!((eta - want).abs() < 1e-12, "element {k}: {eta} vs {want}");
        }
        assert!((report.global - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn kink_in_time_hits_the_residual_but_not_the_jumps() {
        // u = max(t - 1/2, 0) has a time-direction kink; faces with time
        // normals carry no flux term, so only the residual |dt u| = 1 on the
        // upper elements contributes: eta_K^2 = h^2 ||1||^2 = 1/4 * 1/4.
        let domain = SpaceTimeDomain::unit(1).unwrap();
        let mesh = SpaceTimeMesh::uniform(domain, 1).unwrap();
        let nodes = mesh.nodes(1).unwrap();
        let mut problem = make_heat_mms(1.0, 1).unwrap();
        problem.forcing = Arc::new(|_: &[f64], _| 0.0);
        let values = field_from(&mesh, &nodes, |_, t| (t - 0.5).max(0.0));
        let field = FieldFunction::new(&mesh, &nodes, values).unwrap();
        let report = estimate(&problem, &field, &EstimateOptions::default()).unwrap();
        for (k, &elem) in mesh.leaves().iter().enumerate() {
            let (lo, _) = mesh.element_box(elem);
            let want = if lo[1] > 0.25 { 0.25 } else { 0.0 };
            assert!(
                (report.per_element[k] - want).abs() < 1e-12,
                "element {k}: {} vs {want}",
                report.per_element[k]
            );
        }
    }

    #[test]
    fn norms_vanish_for_the_exact_interpolant() {
        let domain = SpaceTimeDomain::unit(1).unwrap();
        let mesh = SpaceTimeMesh::uniform(domain, 2).unwrap();
        let nodes = mesh.nodes(1).unwrap();
        let problem = bilinear_problem(0.3);
        let values = field_from(&mesh, &nodes, |x, t| x[0] * t);
        let field = FieldFunction::new(&mesh, &nodes, values).unwrap();
        let report = error_norms(&problem, &field, &NormOptions::default()).unwrap();
        assert!(report.err_l2 < 1e-13);
        assert!(report.err_h < 1e-13);
        assert!(report.err_vh_star < 1e-13);
    }

    #[test]
    fn norms_of_a_known_error_field() {
        // Zero discrete field: every norm is a norm of the exact solution
        // u = x t itself, all computable in closed form.
        let domain = SpaceTimeDomain::unit(1).unwrap();
        let mesh = SpaceTimeMesh::uniform(domain, 1).unwrap();
        let nodes = mesh.nodes(1).unwrap();
        let problem = bilinear_problem(0.5);
        let field = FieldFunction::new(&mesh, &nodes, vec![0.0; nodes.len()]).unwrap();
        let gls = GlsParams { enabled: false, ..Default::default() };
        let report = error_norms(
            &problem,
            &field,
            &NormOptions { gls, quad_order: Some(4) },
        )
        .unwrap();
        // ||xt||^2 over the cylinder = 1/9; ||xt||^2 at t=1 is 1/3;
        // ||grad e||^2 = ||t||^2 = 1/3; ||dt e||^2 = ||x||^2 = 1/3.
        assert!((report.err_l2 - (1.0f64 / 9.0).sqrt()).abs() < 1e-12);
        assert!((report.err_gamma_t - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let want_h = (1.0f64 / 3.0 + 0.5 / 3.0).sqrt();
        assert!((report.err_h - want_h).abs() < 1e-12);
        let want_star = (1.0f64 / 3.0 + 0.5 / 3.0 + 1.0 / 3.0).sqrt();
        assert!((report.err_vh_star - want_star).abs() < 1e-12);
        assert!((report.err_time - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn final_time_integration_measures_the_top_boundary() {
        let domain = SpaceTimeDomain::unit(2).unwrap();
        let mesh = SpaceTimeMesh::uniform(domain, 2).unwrap();
        // Integral of x y over the unit square at t = 1.
        let value = integrate_over_final_time(&mesh, 3, &|p| p[0] * p[1]).unwrap();
        assert!((value - 0.25).abs() < 1e-13);
        // A refined top layer still tiles the same boundary.
        let marks: Vec<ElementId> = mesh
            .leaves()
            .iter()
            .filter(|e| {
                let (lo, size) = mesh.element_box(**e);
                lo[2] + size[2] >= 1.0 - 1e-12
            })
            .cloned()
            .collect();
        let refined = mesh.refine(&marks).unwrap().balance_2to1().unwrap();
        let value2 = integrate_over_final_time(&refined, 3, &|p| p[0] * p[1]).unwrap();
        assert!((value2 - 0.25).abs() < 1e-13);
    }
}
