//! Newton–Raphson with a Stokes initial guess and continuation in the inflow speed.

use serde::{Deserialize, Serialize};

use super::{FlowSolution, InsProblem, ParameterPoint};
use crate::linalg::{norm2, SparseLu};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// Solve the Stokes problem (convection dropped) first.
    Stokes,
    /// Boundary data on Dirichlet unknowns, zero elsewhere.
    DirichletOnly,
    /// Start from a given velocity and pressure.
    Warm { u: Vec<f64>, p: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    /// Absolute tolerance on the Euclidean norm of the nonlinear residual.
    /// Residuals at the round-off level of the summed terms also count as
    /// converged, so large speeds do not stall on floating-point noise.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Retry with continuation in `w_i` when Newton fails from the initial guess.
    pub continuation: bool,
    /// Largest Reynolds-number increment per continuation step.
    pub max_delta_re: f64,
    pub initial: InitialGuess,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 50, continuation: true, max_delta_re: 25.0, initial: InitialGuess::Stokes }
    }
}

/// Multiple of machine epsilon, relative to the magnitude of the summed
/// terms, below which the residual norm is round-off and counts as converged.
const ROUNDOFF: f64 = 8.0 * f64::EPSILON;

/// No reduction by a factor of two over the last five iterations.
fn stalled(history: &[f64]) -> bool {
    let n = history.len();
    n > 5 && history[n - 1] > 0.5 * history[n - 6]
}

struct Converged {
    x: Vec<f64>,
    iterations: usize,
    history: Vec<f64>,
}

struct Failed {
    iterations: usize,
    residual: f64,
    linear: Option<Error>,
}

/// Solves the steady Navier–Stokes problem at `mu`.
pub fn solve_steady_ins(problem: &InsProblem, mu: &ParameterPoint, opts: &NewtonOptions) -> Result<FlowSolution> {
    if !(opts.tolerance > 0.0) {
        return Err(Error::invalid("Newton tolerance must be positive"));
    }
    let g = problem.dirichlet_values(mu)?;
    let n = problem.system_size();
    let nh = problem.space().velocity_dofs();
    let np = problem.space().pressure_dofs();

    let x0 = match &opts.initial {
        InitialGuess::Stokes => stokes(problem, &g)?,
        InitialGuess::DirichletOnly => {
            let mut x = vec![0.0; n];
            x[..nh].copy_from_slice(&g);
            x
        }
        InitialGuess::Warm { u, p } => {
            if u.len() != nh || p.len() != np {
                return Err(Error::Dimension { expected: nh + np, got: u.len() + p.len() });
            }
            let mut x = vec![0.0; n];
            x[..nh].copy_from_slice(u);
            x[nh..nh + np].copy_from_slice(p);
            x
        }
    };

    let first = newton(problem, &g, x0, opts);
    let done = match first {
        Ok(c) => c,
        Err(f) if !opts.continuation => return Err(failure(f)),
        Err(f) => {
            log::debug!("Newton failed at {mu} (residual {:.3e}); switching to continuation", f.residual);
            continuation(problem, mu, &g, opts, f.iterations)?
        }
    };
    Ok(FlowSolution {
        u: done.x[..nh].to_vec(),
        p: done.x[nh..nh + np].to_vec(),
        mu: *mu,
        newton_iterations: done.iterations,
        residual_norm: *done.history.last().unwrap(),
        residual_history: done.history,
    })
}

fn failure(f: Failed) -> Error {
    f.linear.unwrap_or(Error::NonConvergence { iterations: f.iterations, residual: f.residual })
}

/// Stokes solution with the given boundary data.
pub(crate) fn stokes(problem: &InsProblem, g: &[f64]) -> Result<Vec<f64>> {
    let n = problem.system_size();
    let nh = g.len();
    let mut x = vec![0.0; n];
    x[..nh].copy_from_slice(g);
    let mut r = problem.layout().base.mul_vec(&x);
    for i in 0..nh {
        if problem.dirichlet_mask()[i] {
            r[i] = 0.0;
        }
    }
    let jac = problem.jacobian(&x, false);
    let lu = SparseLu::factor_with(&problem.layout().lu, &jac)?;
    r.iter_mut().for_each(|v| *v = -*v);
    lu.solve_in_place(&mut r)?;
    for (xi, di) in x.iter_mut().zip(&r) {
        *xi += di;
    }
    Ok(x)
}

fn newton(problem: &InsProblem, g: &[f64], mut x: Vec<f64>, opts: &NewtonOptions) -> std::result::Result<Converged, Failed> {
    let nh = g.len();
    for i in 0..nh {
        if problem.dirichlet_mask()[i] {
            x[i] = g[i];
        }
    }
    let mut history = Vec::new();
    for it in 0..=opts.max_iterations {
        let mut r = problem.residual(&x, g);
        let nr = norm2(&r);
        history.push(nr);
        if nr <= opts.tolerance || nr <= ROUNDOFF * problem.residual_scale(&x) {
            return Ok(Converged { x, iterations: it, history });
        }
        let diverged = !nr.is_finite() || nr > 1e8 * history[0].max(opts.tolerance) || stalled(&history);
        if diverged || it == opts.max_iterations {
            return Err(Failed { iterations: it, residual: nr, linear: None });
        }
        let jac = problem.jacobian(&x, true);
        let lu = match SparseLu::factor_with(&problem.layout().lu, &jac) {
            Ok(lu) => lu,
            Err(e) => return Err(Failed { iterations: it, residual: nr, linear: Some(e) }),
        };
        r.iter_mut().for_each(|v| *v = -*v);
        if let Err(e) = lu.solve_in_place(&mut r) {
            return Err(Failed { iterations: it, residual: nr, linear: Some(e) });
        }
        for (xi, di) in x.iter_mut().zip(&r) {
            *xi += di;
        }
    }
    unreachable!("loop returns on the last iteration")
}

fn continuation(
    problem: &InsProblem,
    mu: &ParameterPoint,
    g: &[f64],
    opts: &NewtonOptions,
    spent: usize,
) -> Result<Converged> {
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let re = gmax * problem.mesh().characteristic_length() / problem.nu();
    let steps = ((re / opts.max_delta_re).ceil() as usize).max(2);
    let nh = g.len();
    let np = problem.space().pressure_dofs();

    let mut total = spent;
    let mut s = 0.0;
    let mut ds = 1.0 / steps as f64;
    let mut x = vec![0.0; problem.system_size()];
    let mut halvings = 0;
    loop {
        let target = (s + ds).min(1.0);
        let gk: Vec<f64> = g.iter().map(|v| v * target).collect();
        let mut guess = x.clone();
        if s > 0.0 {
            let ratio = target / s;
            guess[..nh].iter_mut().for_each(|v| *v *= ratio);
            guess[nh..nh + np].iter_mut().for_each(|v| *v *= ratio * ratio);
        } else {
            guess = stokes(problem, &gk)?;
        }
        match newton(problem, &gk, guess, opts) {
            Ok(c) => {
                total += c.iterations;
                s = target;
                x = c.x;
                if s >= 1.0 {
                    return Ok(Converged { x, iterations: total, history: c.history });
                }
            }
            Err(f) => {
                total += f.iterations;
                halvings += 1;
                if halvings > 10 || f.linear.is_some() {
                    return Err(failure(f));
                }
                ds *= 0.5;
                log::debug!("continuation step at {mu} failed; step reduced to {ds}");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fom_ins::InflowModel;
    use crate::mesh::{rectangle_mesh, BoundaryTag::*};

    fn channel(nx: usize, ny: usize, nu: f64) -> InsProblem {
        let mesh = rectangle_mesh(4.0, 1.0, nx, ny, [NoSlip, Outflow, NoSlip, Inflow], false).unwrap();
        let profile = Arc::new(|x: [f64; 2]| [4.0 * x[1] * (1.0 - x[1]), 0.0]);
        InsProblem::with_inflow(Arc::new(mesh), nu, InflowModel::Profile(profile)).unwrap()
    }

    #[test]
    fn zero_speed_gives_zero_flow() {
        let p = channel(8, 2, 1.0);
        let s = solve_steady_ins(&p, &ParameterPoint::speed(0.0), &NewtonOptions::default()).unwrap();
        assert_eq!(s.newton_iterations, 0);
        assert!(s.u.iter().chain(&s.p).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_direction_on_fixed_problem() {
        let p = channel(4, 2, 1.0);
        assert!(solve_steady_ins(&p, &ParameterPoint::wind(1.0, 10.0), &NewtonOptions::default()).is_err());
        let bad = NewtonOptions { tolerance: 0.0, ..Default::default() };
        assert!(solve_steady_ins(&p, &ParameterPoint::speed(1.0), &bad).is_err());
    }
}
