//! CSV report writers and convergence-rate fitting.
//!
//! All numbers are written with Rust's shortest round-trip `Display` for
//! `f64`, so identical runs produce byte-identical files.

use std::io::Write;

use crate::adapt::AdaptRound;
use crate::{Error, Result};

/// One row of a uniform-refinement study.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    /// Mesh width of the level.
    pub h: f64,
    /// Global error indicator η_Ω.
    pub eta: f64,
    /// Discrete energy norm of the error.
    pub err_h: f64,
    /// Space-time L² norm of the error.
    pub err_l2: f64,
}

/// Write a refinement study with header `h,eta,err_h,err_l2`.
pub fn write_convergence_csv<W: Write>(w: &mut W, rows: &[ConvergenceRow]) -> Result<()> {
    writeln!(w, "h,eta,err_h,err_l2")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.h, r.eta, r.err_h, r.err_l2)?;
    }
    Ok(())
}

/// Write an adaptive-loop trace with header `round,dof,eta,err_l2`.
/// The error column is left empty when the problem has no exact solution.
pub fn write_trace_csv<W: Write>(w: &mut W, rows: &[AdaptRound]) -> Result<()> {
    writeln!(w, "round,dof,eta,err_l2")?;
    for r in rows {
        write!(w, "{},{},{},", r.round, r.dofs, r.eta)?;
        match r.err_l2 {
            Some(e) => writeln!(w, "{e}")?,
            None => writeln!(w)?,
        }
    }
    Ok(())
}

/// Write a line-profile sample with header `arc_length,u`.
pub fn write_profile_csv<W: Write>(w: &mut W, samples: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "arc_length,u")?;
    for (s, u) in samples {
        writeln!(w, "{s},{u}")?;
    }
    Ok(())
}

/// Least-squares slope of `log y` against `log x`.
///
/// This is the observed convergence rate when `x` is a mesh width and `y`
/// an error norm (both must be positive). At least two points are required.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::domain("slope fit needs matching x/y lengths"));
    }
    if xs.len() < 2 {
        return Err(Error::domain("slope fit needs at least two points"));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::domain(
            "slope fit needs positive finite data (an error norm hit zero or diverged)",
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        return Err(Error::domain("slope fit needs at least two distinct x values"));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_csv_layout() {
        let rows = [
            ConvergenceRow {
                h: 0.5,
                eta: 0.25,
                err_h: 0.125,
                err_l2: 0.0625,
            },
            ConvergenceRow {
                h: 0.25,
                eta: 0.125,
                err_h: 0.0625,
                err_l2: 0.015625,
            },
        ];
        let mut buf = Vec::new();
        write_convergence_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "h,eta,err_h,err_l2\n0.5,0.25,0.125,0.0625\n0.25,0.125,0.0625,0.015625\n"
        );
    }

    #[test]
    fn trace_csv_handles_missing_error() {
        let rows = [
            AdaptRound {
                round: 0,
                dofs: 25,
                elements: 16,
                eta: 0.5,
                max_eta: 0.25,
                err_l2: Some(0.125),
            },
            AdaptRound {
                round: 1,
                dofs: 41,
                elements: 28,
                eta: 0.25,
                max_eta: 0.125,
                err_l2: None,
            },
        ];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "round,dof,eta,err_l2\n0,25,0.5,0.125\n1,41,0.25,\n"
        );
    }

    #[test]
    fn profile_csv_layout() {
        let mut buf = Vec::new();
        write_profile_csv(&mut buf, &[(0.0, 1.0), (0.5, 0.25)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "arc_length,u\n0,1\n0.5,0.25\n"
        );
    }

    #[test]
    fn slope_of_exact_power_law() {
        let xs = [0.5, 0.25, 0.125, 0.0625];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        let slope = log_log_slope(&xs, &ys).unwrap();
        assert!((slope - 2.0).abs() < 1e-12, "slope {slope}");
    }

    #[test]
    fn slope_rejects_bad_input() {
        assert!(log_log_slope(&[1.0], &[1.0]).is_err());
        assert!(log_log_slope(&[1.0, 2.0], &[1.0]).is_err());
        assert!(log_log_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
        assert!(log_log_slope(&[1.0, 1.0], &[2.0, 3.0]).is_err());
    }
}
