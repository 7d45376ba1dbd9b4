//! Problem definitions: coefficients, boundary/initial data, and (when
//! known) exact solutions of
//!
//! ```text
//!   du/dt + (a . grad)u - nu * lap(u) = f
//! ```
//!
//! on the unit space-time cylinder. All callbacks take the spatial point and
//! the time separately; `grad` and `lap` are always purely spatial.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::SpaceTimeDomain;

/// Scalar field of space and time.
pub type ScalarFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
/// Vector field of space and time; only the first `dim_space` entries are
/// meaningful.
pub type VectorFn = Arc<dyn Fn(&[f64], f64) -> [f64; 2] + Send + Sync>;

/// Exact solution with the derivatives the error norms and the estimator
/// effectivity need.
#[derive(Clone)]
pub struct ExactSolution {
    pub value: ScalarFn,
    pub time_deriv: ScalarFn,
    pub gradient: VectorFn,
    pub laplacian: ScalarFn,
}

/// A fully specified initial-boundary value problem.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub domain: SpaceTimeDomain,
    pub nu: f64,
    /// None means zero advection.
    pub advection: Option<VectorFn>,
    /// Promise that div(a) = 0, used by energy identities.
    pub divergence_free: bool,
    pub forcing: ScalarFn,
    /// Dirichlet trace g on the lateral boundary.
    pub dirichlet: ScalarFn,
    /// Initial value u0; evaluated with t = t0.
    pub initial: ScalarFn,
    pub exact: Option<ExactSolution>,
}

impl ProblemSpec {
    pub fn dim_space(&self) -> usize {
        self.domain.dim_space()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::domain(format!(
                "diffusivity must be positive and finite, got {}",
                self.nu
            )));
        }
        Ok(())
    }

    /// Advection vector at a point (zero when no advection is set).
    pub fn advection_at(&self, x: &[f64], t: f64) -> [f64; 2] {
        match &self.advection {
            Some(a) => a(x, t),
            None => [0.0, 0.0],
        }
    }

    pub fn exact(&self) -> Result<&ExactSolution> {
        self.exact
            .as_ref()
            .ok_or_else(|| Error::NoExactSolution(self.name.clone()))
    }
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("dim_space", &self.dim_space())
            .field("nu", &self.nu)
            .field("has_advection", &self.advection.is_some())
            .field("divergence_free", &self.divergence_free)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::domain(format!("diffusivity must be positive, got {nu}")));
    }
    Ok(())
}

/// Heat equation (a = 0) with the decaying-sine manufactured solution
/// u = exp(-t) * prod_i sin(2 pi x_i) and matching forcing.
pub fn make_heat_mms(nu: f64, dim_space: usize) -> Result<ProblemSpec> {
    check_nu(nu)?;
    let domain = SpaceTimeDomain::unit(dim_space)?;
    let exact = decaying_sine_exact(dim_space);
    let value = exact.value.clone();
    // f = u_t - nu lap(u) = (-1 + d * 4 pi^2 nu) u
    let factor = -1.0 + dim_space as f64 * 4.0 * PI * PI * nu;
    let forcing: ScalarFn = Arc::new(move |x, t| factor * value(x, t));
    let u0 = exact.value.clone();
    Ok(ProblemSpec {
        name: "heat_mms".into(),
        domain,
        nu,
        advection: None,
        divergence_free: true,
        forcing,
        dirichlet: Arc::new(|_, _| 0.0),
        initial: Arc::new(move |x, _| u0(x, 0.0)),
        exact: Some(exact),
    })
}

/// Advection-diffusion with the same decaying-sine solution. In d = 2 the
/// advection field rotates rigidly about the domain center,
/// a = 2 pi (-(y - 1/2), x - 1/2); in d = 1 it is the constant unit field.
/// Both are divergence-free.
pub fn make_advdiff_mms(nu: f64, dim_space: usize) -> Result<ProblemSpec> {
    check_nu(nu)?;
    let domain = SpaceTimeDomain::unit(dim_space)?;
    let exact = decaying_sine_exact(dim_space);
    let advection: VectorFn = match dim_space {
        1 => Arc::new(|_, _| [1.0, 0.0]),
        2 => Arc::new(|x, _| [-2.0 * PI * (x[1] - 0.5), 2.0 * PI * (x[0] - 0.5)]),
        d => return Err(Error::domain(format!("advdiff_mms needs d in {{1,2}}, got {d}"))),
    };
    let value = exact.value.clone();
    let grad = exact.gradient.clone();
    let adv = advection.clone();
    let factor = -1.0 + dim_space as f64 * 4.0 * PI * PI * nu;
    let forcing: ScalarFn = Arc::new(move |x, t| {
        let a = adv(x, t);
        let g = grad(x, t);
        factor * value(x, t) + a[0] * g[0] + a[1] * g[1]
    });
    let u0 = exact.value.clone();
    Ok(ProblemSpec {
        name: "advdiff_mms".into(),
        domain,
        nu,
        advection: Some(advection),
        divergence_free: true,
        forcing,
        dirichlet: Arc::new(|_, _| 0.0),
        initial: Arc::new(move |x, _| u0(x, 0.0)),
        exact: Some(exact),
    })
}

/// u = exp(-t) * prod sin(2 pi x_i) with all derivatives.
fn decaying_sine_exact(dim_space: usize) -> ExactSolution {
    let d = dim_space;
    let value: ScalarFn = Arc::new(move |x: &[f64], t: f64| {
        let mut v = (-t).exp();
        for xi in x.iter().take(d) {
            v *= (2.0 * PI * xi).sin();
        }
        v
    });
    let v1 = value.clone();
    let v2 = value.clone();
    let gradient: VectorFn = Arc::new(move |x: &[f64], t: f64| {
        let mut g = [0.0, 0.0];
        for axis in 0..d {
            let mut prod = (-t).exp() * 2.0 * PI * (2.0 * PI * x[axis]).cos();
            for (j, xj) in x.iter().enumerate().take(d) {
                if j != axis {
                    prod *= (2.0 * PI * xj).sin();
                }
            }
            g[axis] = prod;
        }
        g
    });
    let laplacian: ScalarFn =
        Arc::new(move |x, t| -(d as f64) * 4.0 * PI * PI * v1(x, t));
    let time_deriv: ScalarFn = Arc::new(move |x, t| -v2(x, t));
    ExactSolution {
        value,
        time_deriv,
        gradient,
        laplacian,
    }
}

/// Rigid rotation about the domain center, one full revolution per unit time.
fn rotating_field() -> VectorFn {
    Arc::new(|x, _| [-2.0 * PI * (x[1] - 0.5), 2.0 * PI * (x[0] - 0.5)])
}

/// Gaussian pulse advected once around the domain center (d = 2, f = 0,
/// homogeneous Dirichlet walls). `width` is the Gaussian radius parameter.
pub fn make_rotating_gaussian(nu: f64, center: [f64; 2], width: f64) -> Result<ProblemSpec> {
    check_nu(nu)?;
    if !(width > 0.0) {
        return Err(Error::domain(format!("pulse width must be positive, got {width}")));
    }
    let domain = SpaceTimeDomain::unit(2)?;
    let initial: ScalarFn = Arc::new(move |x, _| {
        let rx = x[0] - center[0];
        let ry = x[1] - center[1];
        (-(rx * rx + ry * ry) / (width * width)).exp()
    });
    Ok(ProblemSpec {
        name: "rotating_gaussian".into(),
        domain,
        nu,
        advection: Some(rotating_field()),
        divergence_free: true,
        forcing: Arc::new(|_, _| 0.0),
        dirichlet: Arc::new(|_, _| 0.0),
        initial,
        exact: None,
    })
}

/// Sharp-edged disc advected once around the domain center (d = 2); the
/// essentially vanishing diffusivity makes this a stress test for the
/// stabilization.
pub fn make_rotating_disc(nu: f64, center: [f64; 2], sigma: f64) -> Result<ProblemSpec> {
    check_nu(nu)?;
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("disc radius must be positive, got {sigma}")));
    }
    let domain = SpaceTimeDomain::unit(2)?;
    let initial: ScalarFn = Arc::new(move |x, _| {
        let rx = (x[0] - center[0]) / sigma;
        let ry = (x[1] - center[1]) / sigma;
        if rx * rx + ry * ry <= 1.0 {
            1.0
        } else {
            0.0
        }
    });
    Ok(ProblemSpec {
        name: "rotating_disc".into(),
        domain,
        nu,
        advection: Some(rotating_field()),
        divergence_free: true,
        forcing: Arc::new(|_, _| 0.0),
        dirichlet: Arc::new(|_, _| 0.0),
        initial,
        exact: None,
    })
}

/// Stationary Gaussian source decaying in time (d = 2, a = 0):
/// u = exp(-2t/theta - r^2/width^2) centered at (1/2, 1/2), with the forcing
/// that makes u exact and the exact Dirichlet trace on the walls. The sharp
/// spatial feature drives the adaptive studies.
pub fn make_gaussian_source(nu: f64, width: f64, theta: f64) -> Result<ProblemSpec> {
    check_nu(nu)?;
    if !(width > 0.0 && theta > 0.0) {
        return Err(Error::domain(format!(
            "width and decay time must be positive, got {width}, {theta}"
        )));
    }
    let domain = SpaceTimeDomain::unit(2)?;
    let center = [0.5, 0.5];
    let d2 = width * width;
    let d4 = d2 * d2;
    let value: ScalarFn = Arc::new(move |x, t| {
        let rx = x[0] - center[0];
        let ry = x[1] - center[1];
        (-2.0 * t / theta - (rx * rx + ry * ry) / d2).exp()
    });
    let v1 = value.clone();
    let v2 = value.clone();
    let v3 = value.clone();
    let v4 = value.clone();
    let v5 = value.clone();
    let v6 = value.clone();
    let time_deriv: ScalarFn = Arc::new(move |x, t| -2.0 / theta * v1(x, t));
    let gradient: VectorFn = Arc::new(move |x, t| {
        let v = v2(x, t);
        [
            -2.0 * (x[0] - center[0]) / d2 * v,
            -2.0 * (x[1] - center[1]) / d2 * v,
        ]
    });
    let laplacian: ScalarFn = Arc::new(move |x, t| {
        let rx = x[0] - center[0];
        let ry = x[1] - center[1];
        4.0 / d4 * (rx * rx + ry * ry - d2) * v3(x, t)
    });
    // f = u_t - nu lap(u)
    let forcing: ScalarFn = Arc::new(move |x, t| {
        let rx = x[0] - center[0];
        let ry = x[1] - center[1];
        -(2.0 / theta + nu * 4.0 / d4 * (rx * rx + ry * ry - d2)) * v4(x, t)
    });
    Ok(ProblemSpec {
        name: "gaussian_source".into(),
        domain,
        nu,
        advection: None,
        divergence_free: true,
        forcing,
        dirichlet: Arc::new(move |x, t| v5(x, t)),
        initial: Arc::new(move |x, _| v6(x, 0.0)),
        exact: Some(ExactSolution {
            value,
            time_deriv,
            gradient,
            laplacian,
        }),
    })
}

/// Optional overrides for the named constructors; `None` keeps each case's
/// default.
#[derive(Debug, Clone, Default)]
pub struct ProblemParams {
    pub nu: Option<f64>,
    pub width: Option<f64>,
    pub sigma: Option<f64>,
    pub theta: Option<f64>,
    pub center: Option<[f64; 2]>,
}

/// Case lookup used by the command line. Unknown names are a domain error.
pub fn by_name(name: &str, dim_space: usize, params: &ProblemParams) -> Result<ProblemSpec> {
    match name {
        "heat_mms" => make_heat_mms(params.nu.unwrap_or(1e-2), dim_space),
        "advdiff_mms" => make_advdiff_mms(params.nu.unwrap_or(1e-2), dim_space),
        "rotating_gaussian" => {
            if dim_space != 2 {
                return Err(Error::domain("rotating_gaussian is a d=2 case"));
            }
            make_rotating_gaussian(
                params.nu.unwrap_or(1e-4),
                params.center.unwrap_or([1.0 / 3.0, 1.0 / 3.0]),
                params.width.unwrap_or(0.05),
            )
        }
        "rotating_disc" => {
            if dim_space != 2 {
                return Err(Error::domain("rotating_disc is a d=2 case"));
            }
            make_rotating_disc(
                params.nu.unwrap_or(1e-8),
                params.center.unwrap_or([1.0 / 3.0, 1.0 / 3.0]),
                params.sigma.unwrap_or(0.1),
            )
        }
        "gaussian_source" => {
            if dim_space != 2 {
                return Err(Error::domain("gaussian_source is a d=2 case"));
            }
            make_gaussian_source(
                params.nu.unwrap_or(0.01),
                params.width.unwrap_or(0.05),
                params.theta.unwrap_or(1.0),
            )
        }
        other => Err(Error::domain(format!(
            "unknown problem `{other}` (expected heat_mms, advdiff_mms, rotating_gaussian, rotating_disc, gaussian_source)"
        ))),
    }
}
