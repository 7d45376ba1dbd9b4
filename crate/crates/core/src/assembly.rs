//! Assembly of the stabilized space-time weak form into sparse systems.
//!
//! The bilinear form pairs trial u against test v as
//!
//! ```text
//! b(u, v) = (dt u, v) + (a . grad u, v) + nu (grad u, grad v)
//!           + sum_K eps_K (M u, M v)_K
//! ```
//!
//! with the strong operator `M = dt + a . grad - nu lap` applied elementwise;
//! gradients and the Laplacian act in space only, time is just the last mesh
//! axis. The right-hand side carries the matching least-squares term,
//! `l(v) = (f, v) + sum_K eps_K (f, M v)_K`.
//!
//! Dirichlet data enters by lifting: fixed nodes never receive equations and
//! their columns move to the right-hand side. Hanging nodes are condensed
//! through their master weights, so the assembled system only ever sees free
//! coefficients and stays square and non-singular.

use crate::basis::{BasisSpec, QuadratureRule, RefPoint};
use crate::error::{Error, Result};
use crate::linsolve::CsrMatrix;
use crate::mesh::{BoundaryTag, ElementId, HangingNode, NodeSet, SpaceTimeMesh};
use crate::problem::ProblemSpec;

/// Least-squares stabilization controls. The weight per element is
/// `eps_K = 1 / (c1 nu / h^2 + c2 |a~| / h)` where `|a~|` is the largest
/// space-time advection magnitude `sqrt(|a|^2 + 1)` seen at the quadrature
/// points of the element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlsParams {
    pub c1: f64,
    pub c2: f64,
    pub enabled: bool,
}

impl Default for GlsParams {
    fn default() -> Self {
        GlsParams { c1: 4.0, c2: 2.0, enabled: true }
    }
}

/// Stabilization weight for one element. Zero when disabled.
pub fn gls_parameter(nu: f64, h: f64, a_tilde: f64, params: &GlsParams) -> f64 {
    if !params.enabled {
        return 0.0;
    }
    1.0 / (params.c1 * nu / (h * h) + params.c2 * a_tilde / h)
}

/// Largest space-time advection magnitude over an element's quadrature
/// points; the constant 1 is the unit speed along the time axis.
fn advection_scale(adv: &[[f64; 2]]) -> f64 {
    let mut a_tilde: f64 = 1.0;
    for a in adv {
        a_tilde = a_tilde.max((a[0] * a[0] + a[1] * a[1] + 1.0).sqrt());
    }
    a_tilde
}

fn space_time(p: &[f64; 3], dim_space: usize) -> (&[f64], f64) {
    (&p[..dim_space], p[dim_space])
}

/// What a mesh node means to the algebraic system.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeRole {
    /// Unknown coefficient with its index in the free vector.
    Free(u32),
    /// Dirichlet node carrying boundary or initial data.
    Fixed(f64),
    /// Hanging node: an affine combination of free coefficients plus the
    /// contribution of any fixed masters.
    Constrained { terms: Vec<(u32, f64)>, offset: f64 },
}

/// Node-to-dof translation for one mesh, degree, and problem.
#[derive(Debug, Clone)]
pub struct DofMap {
    roles: Vec<NodeRole>,
    n_free: usize,
}

impl DofMap {
    /// Classify every node. The initial slab wins at t = t0 (the lateral
    /// data is evaluated only for t > t0), and hanging constraints override
    /// boundary data so the discrete space stays conforming; fixed masters
    /// feed the constraint offset instead.
    pub fn build(
        mesh: &SpaceTimeMesh,
        nodes: &NodeSet,
        hanging: &[HangingNode],
        problem: &ProblemSpec,
    ) -> Result<DofMap> {
        if problem.dim_space() != mesh.dim_space() {
            return Err(Error::domain(format!(
                "problem is {}d in space but mesh is {}d",
                problem.dim_space(),
                mesh.dim_space()
            )));
        }
        let d = mesh.dim_space();
        let n = nodes.len();
        let mut is_hanging = vec![false; n];
        for hn in hanging {
            is_hanging[hn.node as usize] = true;
        }
        let mut roles = Vec::with_capacity(n);
        let mut n_free = 0u32;
        for id in 0..n as u32 {
            if is_hanging[id as usize] {
                // Placeholder; resolved below once masters have roles.
                roles.push(NodeRole::Constrained { terms: Vec::new(), offset: 0.0 });
                continue;
            }
            let p = nodes.position(id);
            let role = match mesh.domain().classify_boundary(&p) {
                Some(BoundaryTag::Gamma0) => {
                    let (xs, t) = space_time(&p, d);
                    NodeRole::Fixed((problem.initial)(xs, t))
                }
                Some(BoundaryTag::GammaS) => {
                    let (xs, t) = space_time(&p, d);
                    NodeRole::Fixed((problem.dirichlet)(xs, t))
                }
                _ => {
                    let k = n_free;
                    n_free += 1;
                    NodeRole::Free(k)
                }
            };
            roles.push(role);
        }
        for hn in hanging {
            let mut terms = Vec::with_capacity(hn.masters.len());
            let mut offset = 0.0;
            for &(master, w) in &hn.masters {
                match &roles[master as usize] {
                    NodeRole::Free(k) => terms.push((*k, w)),
                    NodeRole::Fixed(v) => offset += w * v,
                    NodeRole::Constrained { .. } => {
                        return Err(Error::domain(
                            "hanging-node master is itself hanging; constraint chain unresolved",
                        ));
                    }
                }
            }
            roles[hn.node as usize] = NodeRole::Constrained { terms, offset };
        }
        Ok(DofMap { roles, n_free: n_free as usize })
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn role(&self, node: u32) -> &NodeRole {
        &self.roles[node as usize]
    }

    pub fn n_fixed(&self) -> usize {
        self.roles
            .iter()
            .filter(|r| matches!(r, NodeRole::Fixed(_)))
            .count()
    }

    /// Expand the free solution vector to values at every node.
    pub fn nodal_values(&self, free: &[f64]) -> Result<Vec<f64>> {
        if free.len() != self.n_free {
            return Err(Error::domain(format!(
                "free vector length {} does not match dof count {}",
                free.len(),
                self.n_free
            )));
        }
        Ok(self
            .roles
            .iter()
            .map(|role| match role {
                NodeRole::Free(k) => free[*k as usize],
                NodeRole::Fixed(v) => *v,
                NodeRole::Constrained { terms, offset } => {
                    terms.iter().map(|&(k, w)| w * free[k as usize]).sum::<f64>() + offset
                }
            })
            .collect())
    }
}

/// Assembly knobs: stabilization and the quadrature order (points per axis).
/// The default order `degree + 2` integrates every term of the form exactly
/// for elementwise-polynomial advection up to per-axis degree one.
#[derive(Debug, Clone, Copy, Default)]
pub struct AssemblyOptions {
    pub gls: GlsParams,
    pub quad_order: Option<usize>,
}

/// Dense local system of one element, in local lexicographic node order.
/// `matrix[i * m + j]` pairs test i against trial j.
#[derive(Debug, Clone)]
pub struct ElementSystem {
    pub nodes: Vec<u32>,
    pub matrix: Vec<f64>,
    pub rhs: Vec<f64>,
    pub epsilon: f64,
}

/// Reference shape data tabulated once per quadrature rule.
pub(crate) struct ShapeTable {
    pub(crate) phi: Vec<Vec<f64>>,
    pub(crate) grad: Vec<Vec<RefPoint>>,
    pub(crate) second: Vec<Vec<RefPoint>>,
}

impl ShapeTable {
    pub(crate) fn new(basis: &BasisSpec, quad: &QuadratureRule) -> Result<ShapeTable> {
        let mut phi = Vec::with_capacity(quad.len());
        let mut grad = Vec::with_capacity(quad.len());
        let mut second = Vec::with_capacity(quad.len());
        for p in &quad.points {
            phi.push(basis.shape_values(p)?);
            grad.push(basis.shape_gradients(p)?);
            second.push(basis.shape_second_derivatives(p)?);
        }
        Ok(ShapeTable { phi, grad, second })
    }
}

/// Local stiffness and load of one element, exposed for direct inspection.
pub fn element_system(
    mesh: &SpaceTimeMesh,
    nodes: &NodeSet,
    problem: &ProblemSpec,
    basis: &BasisSpec,
    elem: ElementId,
    quad: &QuadratureRule,
    gls: &GlsParams,
) -> Result<ElementSystem> {
    let table = ShapeTable::new(basis, quad)?;
    assemble_element(mesh, nodes, problem, basis, elem, quad, &table, gls)
}

#[allow(clippy::too_many_arguments)]
fn assemble_element(
    mesh: &SpaceTimeMesh,
    nodes: &NodeSet,
    problem: &ProblemSpec,
    basis: &BasisSpec,
    elem: ElementId,
    quad: &QuadratureRule,
    table: &ShapeTable,
    gls: &GlsParams,
) -> Result<ElementSystem> {
    let d = mesh.dim_space();
    let dim = mesh.dim();
    if basis.dim() != dim {
        return Err(Error::domain(format!(
            "basis dimension {} does not match mesh dimension {dim}",
            basis.dim()
        )));
    }
    let (lo, size) = mesh.element_box(elem);
    let mut sides = [1.0f64; 3];
    let mut vol = 1.0;
    for a in 0..dim {
        sides[a] = size[a];
        vol *= sides[a];
    }
    let nu = problem.nu;
    let m = basis.nodes_per_element();
    let nq = quad.len();

    let mut pos = vec![[0.0f64; 3]; nq];
    let mut adv = vec![[0.0f64; 2]; nq];
    for (q, xi) in quad.points.iter().enumerate() {
        let mut p = [0.0; 3];
        for a in 0..dim {
            p[a] = lo[a] + xi[a] * sides[a];
        }
        pos[q] = p;
        let (xs, t) = space_time(&p, d);
        adv[q] = problem.advection_at(xs, t);
    }
    let epsilon = if gls.enabled {
        gls_parameter(nu, mesh.element_size(elem), advection_scale(&adv), gls)
    } else {
        0.0
    };

    let mut matrix = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    let mut grad_phys = vec![[0.0f64; 3]; m];
    // transport = dt + a . grad, op = transport - nu lap (the strong residual
    // operator applied to each shape function).
    let mut transport = vec![0.0f64; m];
    let mut op = vec![0.0f64; m];

    for q in 0..nq {
        let w = quad.weights[q] * vol;
        let phi = &table.phi[q];
        let gr = &table.grad[q];
        let sec = &table.second[q];
        for i in 0..m {
            let mut g = [0.0f64; 3];
            for a in 0..dim {
                g[a] = gr[i][a] / sides[a];
            }
            let mut lap = 0.0;
            let mut conv = 0.0;
            for a in 0..d {
                lap += sec[i][a] / (sides[a] * sides[a]);
                conv += adv[q][a] * g[a];
            }
            grad_phys[i] = g;
            transport[i] = g[d] + conv;
            op[i] = transport[i] - nu * lap;
        }
        let (xs, t) = space_time(&pos[q], d);
        let f = (problem.forcing)(xs, t);
        for i in 0..m {
            rhs[i] += w * f * (phi[i] + epsilon * op[i]);
            let row = &mut matrix[i * m..(i + 1) * m];
            for j in 0..m {
                let mut diff = 0.0;
                for a in 0..d {
                    diff += grad_phys[j][a] * grad_phys[i][a];
                }
                row[j] += w * (transport[j] * phi[i] + nu * diff + epsilon * op[j] * op[i]);
            }
        }
    }
    Ok(ElementSystem {
        nodes: nodes.element_nodes(elem),
        matrix,
        rhs,
        epsilon,
    })
}

/// Assembled global system plus everything needed to interpret its solution.
#[derive(Debug)]
pub struct DiscreteSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dof_map: DofMap,
    /// Free dofs touched by each leaf, in mesh order; feeds block-Jacobi.
    pub dof_groups: Vec<Vec<u32>>,
    /// Stabilization weight of each leaf, in mesh order.
    pub epsilons: Vec<f64>,
}

/// Assemble the full constrained system over all leaves.
pub fn assemble(
    mesh: &SpaceTimeMesh,
    nodes: &NodeSet,
    problem: &ProblemSpec,
    basis: &BasisSpec,
    opts: &AssemblyOptions,
) -> Result<DiscreteSystem> {
    problem.validate()?;
    if nodes.degree() != basis.degree() {
        return Err(Error::domain(format!(
            "node set degree {} does not match basis degree {}",
            nodes.degree(),
            basis.degree()
        )));
    }
    let hanging = mesh.hanging_nodes(nodes)?;
    let dof_map = DofMap::build(mesh, nodes, &hanging, problem)?;
    let q = opts.quad_order.unwrap_or(basis.degree() + 2);
    let quad = QuadratureRule::gauss(q, mesh.dim())?;
    let table = ShapeTable::new(basis, &quad)?;

    let m = basis.nodes_per_element();
    let n_free = dof_map.n_free();
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_free];
    let mut rhs = vec![0.0; n_free];
    let mut dof_groups = Vec::with_capacity(mesh.len());
    let mut epsilons = Vec::with_capacity(mesh.len());
    let mut terms_buf: Vec<Vec<(u32, f64)>> = vec![Vec::new(); m];
    let mut offsets = vec![0.0f64; m];

    for &elem in mesh.leaves() {
        let es = assemble_element(mesh, nodes, problem, basis, elem, &quad, &table, &opts.gls)?;
        epsilons.push(es.epsilon);
        for li in 0..m {
            terms_buf[li].clear();
            offsets[li] = 0.0;
            match dof_map.role(es.nodes[li]) {
                NodeRole::Free(k) => terms_buf[li].push((*k, 1.0)),
                NodeRole::Fixed(v) => offsets[li] = *v,
                NodeRole::Constrained { terms, offset } => {
                    terms_buf[li].extend_from_slice(terms);
                    offsets[li] = *offset;
                }
            }
        }
        for li in 0..m {
            for &(r, wi) in &terms_buf[li] {
                rhs[r as usize] += wi * es.rhs[li];
            }
            for lj in 0..m {
                let a = es.matrix[li * m + lj];
                if a == 0.0 {
                    continue;
                }
                for &(r, wi) in &terms_buf[li] {
                    if offsets[lj] != 0.0 {
                        rhs[r as usize] -= wi * a * offsets[lj];
                    }
                    for &(c, wj) in &terms_buf[lj] {
                        rows[r as usize].push((c, wi * wj * a));
                    }
                }
            }
        }
        let mut group: Vec<u32> = terms_buf.iter().flatten().map(|&(k, _)| k).collect();
        group.sort_unstable();
        group.dedup();
        dof_groups.push(group);
    }

    let matrix = CsrMatrix::from_row_lists(n_free, rows)?;
    Ok(DiscreteSystem {
        matrix,
        rhs,
        dof_map,
        dof_groups,
        epsilons,
    })
}

/// A finite element field: nodal coefficients over one mesh and node set.
pub struct FieldFunction<'a> {
    mesh: &'a SpaceTimeMesh,
    nodes: &'a NodeSet,
    basis: BasisSpec,
    values: Vec<f64>,
}

impl<'a> FieldFunction<'a> {
    pub fn new(mesh: &'a SpaceTimeMesh, nodes: &'a NodeSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != nodes.len() {
            return Err(Error::domain(format!(
                "value count {} does not match node count {}",
                values.len(),
                nodes.len()
            )));
        }
        let basis = BasisSpec::new(nodes.degree(), mesh.dim())?;
        Ok(FieldFunction { mesh, nodes, basis, values })
    }

    /// Reconstruct the full field from the solved free coefficients.
    pub fn from_free(
        mesh: &'a SpaceTimeMesh,
        nodes: &'a NodeSet,
        dof_map: &DofMap,
        free: &[f64],
    ) -> Result<Self> {
        Self::new(mesh, nodes, dof_map.nodal_values(free)?)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_set(&self) -> &NodeSet {
        self.nodes
    }

    pub fn mesh(&self) -> &SpaceTimeMesh {
        self.mesh
    }

    pub fn element_coeffs(&self, elem: ElementId) -> Vec<f64> {
        self.nodes
            .element_nodes(elem)
            .into_iter()
            .map(|id| self.values[id as usize])
            .collect()
    }

    pub fn evaluate_point(&self, p: &[f64; 3]) -> Result<f64> {
        let elem = self.mesh.find_leaf(p)?;
        let xi = self.mesh.to_reference(elem, p);
        let phi = self.basis.shape_values(&xi)?;
        let ids = self.nodes.element_nodes(elem);
        Ok(phi
            .iter()
            .zip(ids)
            .map(|(v, id)| v * self.values[id as usize])
            .sum())
    }

    /// Evaluate at a spatial point and time.
    pub fn evaluate(&self, x_space: &[f64], t: f64) -> Result<f64> {
        let d = self.mesh.dim_space();
        if x_space.len() != d {
            return Err(Error::domain(format!(
                "point has {} spatial coordinates, mesh has {d}",
                x_space.len()
            )));
        }
        let mut p = [0.0f64; 3];
        p[..d].copy_from_slice(x_space);
        p[d] = t;
        self.evaluate_point(&p)
    }

    /// Sample the field along the spatial segment from `a` to `b` at time
    /// `t`: `samples` evenly spaced (arc length, value) pairs including both
    /// endpoints.
    pub fn profile(
        &self,
        a: &[f64],
        b: &[f64],
        t: f64,
        samples: usize,
    ) -> Result<Vec<(f64, f64)>> {
        let d = self.mesh.dim_space();
        if a.len() != d || b.len() != d {
            return Err(Error::domain(format!(
                "profile endpoints must have {d} coordinates"
            )));
        }
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
        let mut x = vec![0.0f64; d];
        for i in 0..samples {
            let s = i as f64 / (samples - 1) as f64;
            for k in 0..d {
                x[k] = a[k] + s * (b[k] - a[k]);
            }
            out.push((s * length, self.evaluate(&x, t)?));
        }
        Ok(out)
    }
}

/// Nodal interpolation that respects hanging constraints: hanging nodes take
/// the value their masters imply, so the interpolant lives in the discrete
/// space. For smooth data the difference from plain evaluation is the usual
/// interpolation error of the coarse side.
pub fn interpolate_nodal(
    nodes: &NodeSet,
    hanging: &[HangingNode],
    dim_space: usize,
    f: impl Fn(&[f64], f64) -> f64,
) -> Vec<f64> {
    let mut values: Vec<f64> = (0..nodes.len() as u32)
        .map(|id| {
            let p = nodes.position(id);
            let (xs, t) = space_time(&p, dim_space);
            f(xs, t)
        })
        .collect();
    for hn in hanging {
        values[hn.node as usize] = hn
            .masters
            .iter()
            .map(|&(m, w)| w * values[m as usize])
            .sum();
    }
    values
}
