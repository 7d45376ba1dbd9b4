//! Tensor-product Lagrange bases and Gauss-Legendre quadrature on the
//! reference hypercube [0,1]^dim.
//!
//! Nodes are equispaced per axis (degree k has k+1 of them), and multi-indices
//! are flattened lexicographically with axis 0 running fastest. `dim` is the
//! number of reference axes: for a space-time element in d space dimensions
//! that is d+1, for the spatial meshes of the sequential reference it is d.

use crate::error::{Error, Result};

/// Highest supported polynomial degree per axis.
pub const MAX_DEGREE: usize = 3;

/// Coordinates in reference space. Only the first `dim` entries are used;
/// trailing entries stay zero.
pub type RefPoint = [f64; 3];

const POINT_TOL: f64 = 1e-12;

/// One-dimensional Lagrange basis of degree `k` on [0,1] with equispaced
/// nodes, stored as monomial coefficients so that values and the first two
/// derivatives can be evaluated anywhere without removable singularities.
#[derive(Debug, Clone)]
struct Lagrange1d {
    /// coeffs[i][m] is the x^m coefficient of shape function i.
    coeffs: Vec<Vec<f64>>,
}

impl Lagrange1d {
    fn new(degree: usize) -> Result<Self> {
        if degree < 1 || degree > MAX_DEGREE {
            return Err(Error::Degree(degree));
        }
        let nodes: Vec<f64> = (0..=degree).map(|i| i as f64 / degree as f64).collect();
        let mut coeffs = Vec::with_capacity(degree + 1);
        for i in 0..=degree {
            let mut c = vec![1.0];
            let mut denom = 1.0;
            for (j, &xj) in nodes.iter().enumerate() {
                if j == i {
                    continue;
                }
                let mut next = vec![0.0; c.len() + 1];
                for (m, &cm) in c.iter().enumerate() {
                    next[m + 1] += cm;
                    next[m] -= xj * cm;
                }
                c = next;
                denom *= nodes[i] - xj;
            }
            for cm in &mut c {
                *cm /= denom;
            }
            coeffs.push(c);
        }
        Ok(Lagrange1d { coeffs })
    }

    fn value(&self, i: usize, x: f64) -> f64 {
        horner(&self.coeffs[i], x)
    }

    fn deriv(&self, i: usize, x: f64) -> f64 {
        let c = &self.coeffs[i];
        let mut acc = 0.0;
        for m in (1..c.len()).rev() {
            acc = acc * x + c[m] * m as f64;
        }
        acc
    }

    fn deriv2(&self, i: usize, x: f64) -> f64 {
        let c = &self.coeffs[i];
        let mut acc = 0.0;
        for m in (2..c.len()).rev() {
            acc = acc * x + c[m] * (m * (m - 1)) as f64;
        }
        acc
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &cm in c.iter().rev() {
        acc = acc * x + cm;
    }
    acc
}

/// Nodal tensor-product Lagrange basis on [0,1]^dim.
#[derive(Debug, Clone)]
pub struct BasisSpec {
    degree: usize,
    dim: usize,
    line: Lagrange1d,
}

impl BasisSpec {
    /// Degree `k` in 1..=3, `dim` in 1..=3 reference axes.
    pub fn new(degree: usize, dim: usize) -> Result<Self> {
        if dim < 1 || dim > 3 {
            return Err(Error::domain(format!("unsupported reference dimension {dim}")));
        }
        Ok(BasisSpec {
            degree,
            dim,
            line: Lagrange1d::new(degree)?,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_element(&self) -> usize {
        (self.degree + 1).pow(self.dim as u32)
    }

    /// Multi-index of flattened node `j` (axis 0 fastest).
    pub fn node_multi_index(&self, j: usize) -> [usize; 3] {
        let n1 = self.degree + 1;
        let mut m = [0usize; 3];
        let mut rest = j;
        for axis in 0..self.dim {
            m[axis] = rest % n1;
            rest /= n1;
        }
        debug_assert_eq!(rest, 0);
        m
    }

    /// Reference coordinates of node `j`.
    pub fn node_position(&self, j: usize) -> RefPoint {
        let m = self.node_multi_index(j);
        let mut p = [0.0; 3];
        for axis in 0..self.dim {
            p[axis] = m[axis] as f64 / self.degree as f64;
        }
        p
    }

    fn check_point(&self, p: &RefPoint) -> Result<()> {
        for axis in 0..self.dim {
            if !(p[axis] >= -POINT_TOL && p[axis] <= 1.0 + POINT_TOL) {
                return Err(Error::domain(format!(
                    "reference point {:?} outside [0,1]^{}",
                    &p[..self.dim],
                    self.dim
                )));
            }
        }
        Ok(())
    }

    /// Values of all shape functions at `p`, in node order.
    pub fn shape_values(&self, p: &RefPoint) -> Result<Vec<f64>> {
        self.check_point(p)?;
        let n1 = self.degree + 1;
        let per_axis: Vec<Vec<f64>> = (0..self.dim)
            .map(|axis| (0..n1).map(|i| self.line.value(i, p[axis])).collect())
            .collect();
        Ok(self.tensorize(&per_axis))
    }

    /// Reference-space gradients (d/dxi per axis) of all shape functions.
    pub fn shape_gradients(&self, p: &RefPoint) -> Result<Vec<RefPoint>> {
        self.check_point(p)?;
        let n1 = self.degree + 1;
        let vals: Vec<Vec<f64>> = (0..self.dim)
            .map(|axis| (0..n1).map(|i| self.line.value(i, p[axis])).collect())
            .collect();
        let ders: Vec<Vec<f64>> = (0..self.dim)
            .map(|axis| (0..n1).map(|i| self.line.deriv(i, p[axis])).collect())
            .collect();
        let n = self.nodes_per_element();
        let mut out = vec![[0.0; 3]; n];
        for j in 0..n {
            let m = self.node_multi_index(j);
            for g_axis in 0..self.dim {
                let mut prod = 1.0;
                for axis in 0..self.dim {
                    let table = if axis == g_axis { &ders } else { &vals };
                    prod *= table[axis][m[axis]];
                }
                out[j][g_axis] = prod;
            }
        }
        Ok(out)
    }

    /// Pure second derivatives d^2/dxi_a^2 (no mixed terms; the spatial
    /// Laplacian on an axis-aligned box only needs these).
    pub fn shape_second_derivatives(&self, p: &RefPoint) -> Result<Vec<RefPoint>> {
        self.check_point(p)?;
        let n1 = self.degree + 1;
        let vals: Vec<Vec<f64>> = (0..self.dim)
            .map(|axis| (0..n1).map(|i| self.line.value(i, p[axis])).collect())
            .collect();
        let der2: Vec<Vec<f64>> = (0..self.dim)
            .map(|axis| (0..n1).map(|i| self.line.deriv2(i, p[axis])).collect())
            .collect();
        let n = self.nodes_per_element();
        let mut out = vec![[0.0; 3]; n];
        for j in 0..n {
            let m = self.node_multi_index(j);
            for g_axis in 0..self.dim {
                let mut prod = 1.0;
                for axis in 0..self.dim {
                    let table = if axis == g_axis { &der2 } else { &vals };
                    prod *= table[axis][m[axis]];
                }
                out[j][g_axis] = prod;
            }
        }
        Ok(out)
    }

    fn tensorize(&self, per_axis: &[Vec<f64>]) -> Vec<f64> {
        let n = self.nodes_per_element();
        let mut out = vec![0.0; n];
        for (j, slot) in out.iter_mut().enumerate() {
            let m = self.node_multi_index(j);
            let mut prod = 1.0;
            for (axis, table) in per_axis.iter().enumerate() {
                prod *= table[m[axis]];
            }
            *slot = prod;
        }
        out
    }
}

/// Tensor Gauss-Legendre rule on [0,1]^dim with `q` points per axis
/// (exact for per-axis polynomial degree up to 2q-1).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    dim: usize,
    points_per_axis: usize,
    pub points: Vec<RefPoint>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss(q: usize, dim: usize) -> Result<Self> {
        if q < 1 || q > 16 {
            return Err(Error::domain(format!("quadrature order {q} outside 1..=16")));
        }
        if dim < 1 || dim > 3 {
            return Err(Error::domain(format!("quadrature dimension {dim} outside 1..=3")));
        }
        let (x1, w1) = gauss_legendre_01(q);
        let total = q.pow(dim as u32);
        let mut points = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rest = flat;
            let mut p = [0.0; 3];
            let mut w = 1.0;
            for axis in 0..dim {
                let i = rest % q;
                rest /= q;
                p[axis] = x1[i];
                w *= w1[i];
            }
            points.push(p);
            weights.push(w);
        }
        Ok(QuadratureRule {
            dim,
            points_per_axis: q,
            points,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on [0,1], by Newton iteration on the
/// Legendre polynomial (initial guesses from the Chebyshev approximation).
fn gauss_legendre_01(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; q];
    let mut ws = vec![0.0; q];
    for i in 0..q {
        // Root i (descending in x) of P_q on [-1,1].
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(q, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(q, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map [-1,1] -> [0,1]; store in ascending order.
        xs[q - 1 - i] = 0.5 * (x + 1.0);
        ws[q - 1 - i] = 0.5 * w;
    }
    (xs, ws)
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_unsupported_degrees() {
        assert!(BasisSpec::new(0, 2).is_err());
        assert!(BasisSpec::new(4, 2).is_err());
        for k in 1..=3 {
            assert!(BasisSpec::new(k, 2).is_ok());
        }
    }

    #[test]
    fn kronecker_property_at_nodes() {
        for dim in 1..=3 {
            for k in 1..=3 {
                let b = BasisSpec::new(k, dim).unwrap();
                for j in 0..b.nodes_per_element() {
                    let vals = b.shape_values(&b.node_position(j)).unwrap();
                    for (i, v) in vals.iter().enumerate() {
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert_abs_diff_eq!(*v, expect, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_and_gradient_sum() {
        let pts = [[0.3, 0.7, 0.1], [0.0, 1.0, 0.5], [0.25, 0.25, 0.25]];
        for dim in 1..=3 {
            for k in 1..=3 {
                let b = BasisSpec::new(k, dim).unwrap();
                for p in &pts {
                    let vals = b.shape_values(p).unwrap();
                    let grads = b.shape_gradients(p).unwrap();
                    assert_abs_diff_eq!(vals.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                    for axis in 0..dim {
                        let g: f64 = grads.iter().map(|g| g[axis]).sum();
                        assert_abs_diff_eq!(g, 0.0, epsilon = 1e-11);
                    }
                }
            }
        }
    }

    #[test]
    fn bilinear_gradient_pattern_at_center() {
        // k=1, two reference axes: d/dx of the four shape functions at the
        // center is the alternating +/- 1/2 pattern in node order.
        let b = BasisSpec::new(1, 2).unwrap();
        let g = b.shape_gradients(&[0.5, 0.5, 0.0]).unwrap();
        let dx: Vec<f64> = g.iter().map(|g| g[0]).collect();
        let expect = [-0.5, 0.5, -0.5, 0.5];
        for (have, want) in dx.iter().zip(expect) {
            assert_abs_diff_eq!(*have, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        for dim in 1..=3usize {
            for k in 1..=3 {
                let b = BasisSpec::new(k, dim).unwrap();
                let p = [0.37, 0.61, 0.22];
                let grads = b.shape_gradients(&p).unwrap();
                for axis in 0..dim {
                    let mut pp = p;
                    let mut pm = p;
                    pp[axis] += h;
                    pm[axis] -= h;
                    let vp = b.shape_values(&pp).unwrap();
                    let vm = b.shape_values(&pm).unwrap();
                    for j in 0..b.nodes_per_element() {
                        let fd = (vp[j] - vm[j]) / (2.0 * h);
                        assert_abs_diff_eq!(grads[j][axis], fd, epsilon = 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn second_derivatives_match_finite_differences() {
        let h = 1e-4;
        for dim in 1..=3usize {
            for k in 2..=3 {
                let b = BasisSpec::new(k, dim).unwrap();
                let p = [0.41, 0.33, 0.58];
                let d2 = b.shape_second_derivatives(&p).unwrap();
                for axis in 0..dim {
                    let mut pp = p;
                    let mut pm = p;
                    pp[axis] += h;
                    pm[axis] -= h;
                    let vp = b.shape_values(&pp).unwrap();
                    let vm = b.shape_values(&pm).unwrap();
                    let v0 = b.shape_values(&p).unwrap();
                    for j in 0..b.nodes_per_element() {
                        let fd = (vp[j] - 2.0 * v0[j] + vm[j]) / (h * h);
                        assert_abs_diff_eq!(d2[j][axis], fd, epsilon = 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn linear_elements_have_zero_second_derivative() {
        let b = BasisSpec::new(1, 3).unwrap();
        let d2 = b.shape_second_derivatives(&[0.3, 0.6, 0.9]).unwrap();
        for row in d2 {
            for axis in 0..3 {
                assert_abs_diff_eq!(row[axis], 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn point_outside_reference_element_is_rejected() {
        let b = BasisSpec::new(1, 2).unwrap();
        assert!(b.shape_values(&[1.2, 0.5, 0.0]).is_err());
        assert!(b.shape_values(&[-0.1, 0.5, 0.0]).is_err());
        // Closed element: the boundary itself is fine.
        assert!(b.shape_values(&[1.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn gauss_weights_sum_to_one() {
        for dim in 1..=3 {
            for q in 1..=8 {
                let rule = QuadratureRule::gauss(q, dim).unwrap();
                let total: f64 = rule.weights.iter().sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-13);
                assert_eq!(rule.len(), q.pow(dim as u32));
            }
        }
    }

    #[test]
    fn two_point_rule_integrates_cubics_exactly() {
        // q=2 is exact through degree 3: int_0^1 x^3 = 1/4, and the tensor
        // product integrates x^3 y^3 over the unit square to exactly 1/16.
        let rule1 = QuadratureRule::gauss(2, 1).unwrap();
        let v1: f64 = rule1
            .points
            .iter()
            .zip(&rule1.weights)
            .map(|(p, w)| w * p[0].powi(3))
            .sum();
        assert_abs_diff_eq!(v1, 0.25, epsilon = 1e-14);

        let rule2 = QuadratureRule::gauss(2, 2).unwrap();
        let v2: f64 = rule2
            .points
            .iter()
            .zip(&rule2.weights)
            .map(|(p, w)| w * p[0].powi(3) * p[1].powi(3))
            .sum();
        assert_abs_diff_eq!(v2, 1.0 / 16.0, epsilon = 1e-14);
    }

    #[test]
    fn gauss_exactness_boundary() {
        // q points integrate degree 2q-1 exactly but not 2q.
        for q in 1..=6usize {
            let rule = QuadratureRule::gauss(q, 1).unwrap();
            let deg = 2 * q - 1;
            let quad: f64 = rule
                .points
                .iter()
                .zip(&rule.weights)
                .map(|(p, w)| w * p[0].powi(deg as i32))
                .sum();
            assert_abs_diff_eq!(quad, 1.0 / (deg as f64 + 1.0), epsilon = 1e-13);

            let deg2 = 2 * q;
            let quad2: f64 = rule
                .points
                .iter()
                .zip(&rule.weights)
                .map(|(p, w)| w * p[0].powi(deg2 as i32))
                .sum();
            assert!((quad2 - 1.0 / (deg2 as f64 + 1.0)).abs() > 1e-8);
        }
    }

    #[test]
    fn quadratic_basis_interpolates_quadratics() {
        let b = BasisSpec::new(2, 1).unwrap();
        let f = |x: f64| 3.0 * x * x - 2.0 * x + 0.5;
        let nodal: Vec<f64> = (0..3).map(|j| f(b.node_position(j)[0])).collect();
        for &x in &[0.1, 0.45, 0.83] {
            let vals = b.shape_values(&[x, 0.0, 0.0]).unwrap();
            let interp: f64 = vals.iter().zip(&nodal).map(|(v, c)| v * c).sum();
            assert_abs_diff_eq!(interp, f(x), epsilon = 1e-12);
        }
    }
}
