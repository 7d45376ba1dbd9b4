//! Solve-estimate-mark-refine loop with 2:1 rebalancing after every
//! refinement.
//!
//! Each round solves on the current mesh, evaluates the residual estimator,
//! appends one trace row, and either stops (indicator below tolerance, round
//! budget exhausted, every mark already at the level cap, or a failed solve)
//! or refines the marked leaves and goes again.

use crate::assembly::{assemble, AssemblyOptions, FieldFunction};
use crate::error::Result;
use crate::estimate::{error_norms, estimate, EstimateOptions, NormOptions};
use crate::linsolve::{solve, SolveConfig};
use crate::mesh::{ElementId, SpaceTimeMesh};
use crate::problem::ProblemSpec;

/// How rounds pick elements to refine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarkingStrategy {
    /// Refine every element whose indicator exceeds the tolerance.
    Threshold,
    /// Refine the smallest set carrying the given fraction of the squared
    /// global indicator.
    Dorfler { fraction: f64 },
}

#[derive(Debug, Clone)]
pub struct AdaptConfig {
    pub degree: usize,
    /// Convergence target for the largest element indicator, and the marking
    /// threshold for the threshold strategy.
    pub eta_tol: f64,
    pub marking: MarkingStrategy,
    pub max_rounds: usize,
    pub max_level: u8,
    pub assembly: AssemblyOptions,
    pub solver: SolveConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            degree: 1,
            eta_tol: 1e-3,
            marking: MarkingStrategy::Threshold,
            max_rounds: 10,
            max_level: 12,
            assembly: AssemblyOptions::default(),
            solver: SolveConfig::default(),
        }
    }
}

/// One row of the adaptation trace.
#[derive(Debug, Clone)]
pub struct AdaptRound {
    pub round: usize,
    /// Total node count of the round's mesh (free, fixed, and hanging).
    pub dofs: usize,
    pub elements: usize,
    pub eta: f64,
    pub max_eta: f64,
    /// Exact L2 error when the problem has a reference solution.
    pub err_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    /// Largest element indicator at or below the tolerance.
    Converged,
    MaxRounds,
    /// Every marked element already sits at the level cap.
    MaxLevel,
    /// The linear solver did not converge; the trace covers the completed
    /// rounds.
    SolveFailed { iterations: usize, residual: f64 },
}

#[derive(Debug)]
pub struct AdaptResult {
    pub mesh: SpaceTimeMesh,
    /// Nodal values of the last successfully solved field on `mesh`
    /// (node order of `mesh.nodes(degree)`); None when the first solve
    /// already failed.
    pub nodal_values: Option<Vec<f64>>,
    pub trace: Vec<AdaptRound>,
    pub stop: StopReason,
}

/// Indices of the leaves a strategy selects, ascending.
fn select_marks(per_element: &[f64], marking: MarkingStrategy, eta_tol: f64) -> Vec<usize> {
    match marking {
        MarkingStrategy::Threshold => per_element
            .iter()
            .enumerate()
            .filter(|&(_, eta)| *eta > eta_tol)
            .map(|(k, _)| k)
            .collect(),
        MarkingStrategy::Dorfler { fraction } => {
            let total: f64 = per_element.iter().map(|e| e * e).sum();
            if total <= 0.0 {
                return Vec::new();
            }
            let mut order: Vec<usize> = (0..per_element.len()).collect();
            order.sort_by(|&a, &b| {
                per_element[b]
                    .partial_cmp(&per_element[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let target = fraction * total;
            let mut acc = 0.0;
            let mut picked = Vec::new();
            for k in order {
                picked.push(k);
                acc += per_element[k] * per_element[k];
                if acc >= target {
                    break;
                }
            }
            picked.sort_unstable();
            picked
        }
    }
}

/// Run the adaptive loop from the given starting mesh.
pub fn adapt(
    problem: &ProblemSpec,
    start: SpaceTimeMesh,
    cfg: &AdaptConfig,
) -> Result<AdaptResult> {
    use crate::error::Error;
    problem.validate()?;
    if !(cfg.eta_tol > 0.0) {
        return Err(Error::domain(format!("eta_tol {} must be positive", cfg.eta_tol)));
    }
    if cfg.max_rounds == 0 {
        return Err(Error::domain("max_rounds must be at least 1"));
    }
    if let MarkingStrategy::Dorfler { fraction } = cfg.marking {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::domain(format!(
                "marking fraction {fraction} outside (0, 1]"
            )));
        }
    }

    let mut mesh = start;
    let mut trace: Vec<AdaptRound> = Vec::new();
    let mut nodal_values: Option<Vec<f64>> = None;
    let est_opts = EstimateOptions::default();
    let norm_opts = NormOptions {
        gls: cfg.assembly.gls,
        quad_order: None,
    };

    for round in 0..cfg.max_rounds {
        let nodes = mesh.nodes(cfg.degree)?;
        let basis = crate::basis::BasisSpec::new(cfg.degree, mesh.dim())?;
        let sys = assemble(&mesh, &nodes, problem, &basis, &cfg.assembly)?;
        let (x, rep) = solve(&sys.matrix, &sys.rhs, &cfg.solver, Some(&sys.dof_groups))?;
        if !rep.converged {
            return Ok(AdaptResult {
                mesh,
                nodal_values,
                trace,
                stop: StopReason::SolveFailed {
                    iterations: rep.iterations,
                    residual: rep.residual,
                },
            });
        }
        let values = sys.dof_map.nodal_values(&x)?;
        let field = FieldFunction::new(&mesh, &nodes, values.clone())?;
        let report = estimate(problem, &field, &est_opts)?;
        let err_l2 = if problem.exact.is_some() {
            Some(error_norms(problem, &field, &norm_opts)?.err_l2)
        } else {
            None
        };
        nodal_values = Some(values);
        trace.push(AdaptRound {
            round,
            dofs: nodes.len(),
            elements: mesh.len(),
            eta: report.global,
            max_eta: report.max_element,
            err_l2,
        });

        if report.max_element <= cfg.eta_tol {
            return Ok(AdaptResult {
                mesh,
                nodal_values,
                trace,
                stop: StopReason::Converged,
            });
        }
        if round + 1 == cfg.max_rounds {
            return Ok(AdaptResult {
                mesh,
                nodal_values,
                trace,
                stop: StopReason::MaxRounds,
            });
        }

        let picked = select_marks(&report.per_element, cfg.marking, cfg.eta_tol);
        let marks: Vec<ElementId> = picked
            .iter()
            .map(|&k| mesh.leaves()[k])
            .filter(|e| e.level() < cfg.max_level)
            .collect();
        if marks.is_empty() {
            return Ok(AdaptResult {
                mesh,
                nodal_values,
                trace,
                stop: StopReason::MaxLevel,
            });
        }
        mesh = mesh.refine(&marks)?.balance_2to1()?;
    }
    unreachable!("the round loop always returns");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SpaceTimeDomain;
    use crate::problem::make_heat_mms;

    #[test]
    fn threshold_marks_everything_above_tolerance() {
        let eta = [0.5, 0.01, 0.3, 0.02];
        let picked = select_marks(&eta, MarkingStrategy::Threshold, 0.05);
        assert_eq!(picked, vec![0, 2]);
    }

    #[test]
    fn dorfler_takes_the_smallest_dominating_set() {
        let eta = [0.1, 3.0, 0.1, 3.0];
        // Squared total 18.02, target 9.01: one element carries 9, just
        // short, so the two largest get picked (ties resolve by index).
        let picked = select_marks(&eta, MarkingStrategy::Dorfler { fraction: 0.5 }, 0.0);
        assert_eq!(picked, vec![1, 3]);
        let all = select_marks(&eta, MarkingStrategy::Dorfler { fraction: 1.0 }, 0.0);
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn loose_tolerance_converges_without_refining() {
        let problem = make_heat_mms(1e-2, 1).unwrap();
        let mesh = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(1).unwrap(), 2).unwrap();
        let start_elements = mesh.len();
        let cfg = AdaptConfig { eta_tol: 100.0, ..Default::default() };
        let result = adapt(&problem, mesh, &cfg).unwrap();
        assert_eq!(result.stop, StopReason::Converged);
        assert_eq!(result.trace.len(), 1);
        assert_eq!(result.mesh.len(), start_elements);
        assert!(result.nodal_values.is_some());
        assert!(result.trace[0].err_l2.is_some());
    }

    #[test]
    fn round_budget_stops_the_loop_and_indicator_decreases() {
        let problem = make_heat_mms(1e-2, 1).unwrap();
        let mesh = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(1).unwrap(), 2).unwrap();
        let cfg = AdaptConfig {
            eta_tol: 1e-9,
            max_rounds: 3,
            ..Default::default()
        };
        let result = adapt(&problem, mesh, &cfg).unwrap();
        assert_eq!(result.stop, StopReason::MaxRounds);
        assert_eq!(result.trace.len(), 3);
        assert!(result.trace[2].eta < result.trace[0].eta);
        assert!(result.trace[2].dofs > result.trace[0].dofs);
    }

    #[test]
    fn level_cap_blocks_further_refinement() {
        let problem = make_heat_mms(1e-2, 1).unwrap();
        let mesh = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(1).unwrap(), 2).unwrap();
        let cfg = AdaptConfig {
            eta_tol: 1e-12,
            max_level: 2,
            ..Default::default()
        };
        let result = adapt(&problem, mesh, &cfg).unwrap();
        assert_eq!(result.stop, StopReason::MaxLevel);
        assert_eq!(result.trace.len(), 1);
        assert_eq!(result.mesh.max_level(), 2);
    }

    #[test]
    fn failed_solve_preserves_the_partial_trace() {
        let problem = make_heat_mms(1e-2, 1).unwrap();
        let mesh = SpaceTimeMesh::uniform(SpaceTimeDomain::unit(1).unwrap(), 2).unwrap();
        let cfg = AdaptConfig {
            solver: SolveConfig {
                max_iters: Some(1),
                rel_tol: 1e-14,
                ..Default::default()
            },
            ..Default::default()
        };
        let result = adapt(&problem, mesh, &cfg).unwrap();
        assert!(matches!(result.stop, StopReason::SolveFailed { .. }));
        assert!(result.trace.is_empty());
        assert!(result.nodal_values.is_none());
    }
}
