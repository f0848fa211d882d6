//! The minimizing-movement time stepper.
//!
//! One step from `(u~, v~)` minimizes
//!
//! ```text
//! J(X, v) = dist((X,v), (u~,v~))^2 / (2 tau) + H(X, v)
//! ```
//!
//! by alternating two block solves:
//!
//! - the v-block is an exact quadratic: its optimality system is tridiagonal
//!   (screened Poisson with Neumann closure) and is solved directly;
//! - the X-block is a strictly monotone quantile vector minimizing
//!   `1/(2 tau) int (X - X~)^2 dm - int log dX/dm dm + int W(X) dm
//!   - chi int v(X) dm`, handled by damped Newton with the exact tridiagonal
//!   Hessian of the penalty + barrier + potential terms; the log barrier
//!   keeps `X` monotone at any finite objective value and the line search is
//!   capped to stay strictly feasible.
//!
//! Both blocks decrease the same discrete functional, so the scheme inherits
//! the classical minimizing-movement energy inequality
//! `H(new) + dist^2/(2 tau) <= H(old)` up to the configured tolerance.

use crate::energetics::{entropy, entropy_of, EnergyReport, LyapunovReport, ModelParams};
use crate::equilibrium::EquilibriumPair;
use crate::grid_transport::{
    compound_dist, wasserstein2, EulerianField, Grid, QuantileDensity, State,
};
use crate::{tridiag, Error, Result};

// ---------------------------------------------------------------------------
// Configuration and reports
// ---------------------------------------------------------------------------

/// Tolerances and limits of the inner block solvers.
#[derive(Debug, Clone, Copy)]
pub struct InnerSolverConfig {
    pub max_outer_alternations: usize,
    pub max_newton_iters: usize,
    /// Sup-norm tolerance on the X-block gradient, scaled by `1/N_m` at the
    /// point of use (gradient entries carry the quantile mass `1/N_m`).
    pub grad_tol: f64,
    /// Alternation stops once the penalized energy decrease falls below this.
    pub energy_decrease_tol: f64,
    pub backtrack_factor: f64,
    pub armijo_c: f64,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        Self {
            max_outer_alternations: 50,
            max_newton_iters: 40,
            grad_tol: 1e-9,
            energy_decrease_tol: 1e-12,
            backtrack_factor: 0.5,
            armijo_c: 1e-4,
        }
    }
}

impl InnerSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_alternations == 0 || self.max_newton_iters == 0 {
            return Err(Error::InvalidArgument(
                "iteration limits must be positive".into(),
            ));
        }
        if !(self.grad_tol > 0.0) || !(self.energy_decrease_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidArgument(
                "backtracking factor must lie in (0,1)".into(),
            ));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::InvalidArgument("Armijo constant must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Per-step solver diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct JkoStepReport {
    pub alternations: usize,
    pub newton_iters: usize,
    /// Sup norm of the X-block gradient at the accepted iterate.
    pub grad_norm: f64,
    /// `dist((u^n, v^n), (u^{n-1}, v^{n-1}))`.
    pub step_distance: f64,
    /// `H(old) - [dist^2/(2 tau) + H(new)]`; nonnegative up to the
    /// energy-decrease tolerance.
    pub energy_decrease: f64,
}

// ---------------------------------------------------------------------------
// v-block: exact quadratic solve
// ---------------------------------------------------------------------------

/// Quantile mass lumped to the grid nodes by the interpolation hat weights:
/// `c_i = (1/N) sum_j phi_i(X_j)`, so that `sum_i c_i v_i = (1/N) sum_j v(X_j)`
/// exactly for every nodal field `v`.
pub(crate) fn lump_to_nodes(x: &QuantileDensity, grid: &Grid) -> Result<Vec<f64>> {
    let mut c = vec![0.0; grid.n_nodes()];
    let inv_n = 1.0 / x.n_quantiles() as f64;
    let r = grid.half_width();
    for &p in x.positions() {
        if !grid.contains(p) {
            return Err(Error::DomainOverflow {
                lo: p,
                hi: p,
                half_width: r,
            });
        }
        let i = grid.cell_of(p);
        let t = (p - grid.node(i)) / grid.h();
        c[i] += (1.0 - t) * inv_n;
        c[i + 1] += t * inv_n;
    }
    Ok(c)
}

/// Solve `(alpha I - D2) v = rhs` with the homogeneous-Neumann ghost closure
/// `(D2 v)_0 = 2 (v_1 - v_0) / h^2` (and mirrored at the right end).
pub(crate) fn screened_neumann_solve(grid: &Grid, alpha: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = grid.n_nodes();
    let ih2 = 1.0 / (grid.h() * grid.h());
    let mut lower = vec![-ih2; n - 1];
    let mut upper = vec![-ih2; n - 1];
    let diag = vec![alpha + 2.0 * ih2; n];
    upper[0] = -2.0 * ih2;
    lower[n - 2] = -2.0 * ih2;
    tridiag::solve(&lower, &diag, &upper, rhs)
        .ok_or_else(|| Error::InvalidArgument("singular screened-Poisson system".into()))
}

/// Exact minimizer of the v-block:
/// `(1/tau + kappa) v - D2 v = v_prev/tau + chi u` on the grid, where `u` is
/// the hat-lumped Eulerian resampling of the quantile density (the exact
/// linearization of the coupling term `-chi/N sum_j v(X_j)`).
pub fn solve_v_subproblem(
    v_prev: &EulerianField,
    u: &QuantileDensity,
    tau: f64,
    p: &ModelParams,
) -> Result<EulerianField> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    p.check_field(v_prev)?;
    let grid = *v_prev.grid();
    let c = lump_to_nodes(u, &grid)?;
    let inv_tau = 1.0 / tau;
    let rhs: Vec<f64> = v_prev
        .values()
        .iter()
        .enumerate()
        .map(|(i, &vp)| vp * inv_tau + p.chi * c[i] / grid.trap_weight(i))
        .collect();
    let sol = screened_neumann_solve(&grid, inv_tau + p.kappa, &rhs)?;
    EulerianField::new(grid, sol)
}

// ---------------------------------------------------------------------------
// X-block: barrier-safeguarded Newton descent
// ---------------------------------------------------------------------------

pub(crate) struct XStats {
    pub iterations: usize,
    pub grad_norm: f64,
}

struct XProblem<'a> {
    anchor: Option<&'a [f64]>,
    /// `1/(tau N)`; zero when minimizing the bare energy (no anchor).
    inv_tau_n: f64,
    v: Option<&'a EulerianField>,
    p: &'a ModelParams,
    /// Entropy weights of the gaps.
    gap_w: Vec<f64>,
    inv_n: f64,
    half_width: f64,
}

impl<'a> XProblem<'a> {
    fn new(
        n: usize,
        anchor: Option<(&'a [f64], f64)>,
        v: Option<&'a EulerianField>,
        p: &'a ModelParams,
    ) -> Self {
        let inv_n = 1.0 / n as f64;
        let mut gap_w = vec![inv_n; n - 1];
        gap_w[0] += 0.5 * inv_n;
        gap_w[n - 2] += 0.5 * inv_n;
        let (anchor, inv_tau_n) = match anchor {
            Some((a, tau)) => (Some(a), 1.0 / (tau * n as f64)),
            None => (None, 0.0),
        };
        Self {
            anchor,
            inv_tau_n,
            v,
            p,
            gap_w,
            inv_n,
            half_width: p.half_width,
        }
    }

    fn chi_active(&self) -> bool {
        self.p.chi != 0.0 && self.v.is_some()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let nf = n as f64;
        let mut f = 0.0;
        if let Some(a) = self.anchor {
            let mut pen = 0.0;
            for j in 0..n {
                let d = x[j] - a[j];
                pen += d * d;
            }
            f += 0.5 * self.inv_tau_n * pen;
        }
        for k in 0..n - 1 {
            let gap = x[k + 1] - x[k];
            if !(gap > 0.0) {
                return f64::INFINITY;
            }
            f -= self.gap_w[k] * (nf * gap).ln();
        }
        for &xj in x {
            if xj < -self.half_width || xj > self.half_width {
                return f64::INFINITY;
            }
            f += self.inv_n * self.p.potential.eval(xj);
        }
        if self.chi_active() {
            let v = self.v.unwrap();
            let mut acc = 0.0;
            for &xj in x {
                // positions are inside the domain here
                acc += v.interp(xj).unwrap_or(f64::NAN);
            }
            f -= self.p.chi * self.inv_n * acc;
        }
        f
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let n = x.len();
        for j in 0..n {
            let mut gj = 0.0;
            if let Some(a) = self.anchor {
                gj += self.inv_tau_n * (x[j] - a[j]);
            }
            if j + 1 < n {
                gj += self.gap_w[j] / (x[j + 1] - x[j]);
            }
            if j > 0 {
                gj -= self.gap_w[j - 1] / (x[j] - x[j - 1]);
            }
            gj += self.inv_n * self.p.potential.grad(x[j]);
            g[j] = gj;
        }
        if self.chi_active() {
            let v = self.v.unwrap();
            for j in 0..n {
                g[j] -= self.p.chi * self.inv_n * v.interp_slope(x[j]).unwrap_or(0.0);
            }
        }
    }

    /// Tridiagonal Hessian: penalty + barrier + potential curvature, plus the
    /// diagonal coupling curvature estimated from second differences of `v`.
    fn hessian(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = x.len();
        let mut lower = vec![0.0; n - 1];
        let mut diag = vec![self.inv_tau_n; n];
        let mut upper = vec![0.0; n - 1];
        for k in 0..n - 1 {
            let gap = x[k + 1] - x[k];
            let b = self.gap_w[k] / (gap * gap);
            diag[k] += b;
            diag[k + 1] += b;
            lower[k] -= b;
            upper[k] -= b;
        }
        for j in 0..n {
            diag[j] += self.inv_n * self.p.potential.curv(x[j]);
        }
        if self.chi_active() {
            let v = self.v.unwrap();
            for j in 0..n {
                diag[j] -= self.p.chi * self.inv_n * cell_curvature(v, x[j]);
            }
        }
        (lower, diag, upper)
    }
}

/// Second-derivative estimate of the interpolant of `v` on the cell
/// containing `x`, from differences of adjacent cell slopes.
fn cell_curvature(v: &EulerianField, x: f64) -> f64 {
    let grid = v.grid();
    let h = grid.h();
    let nc = grid.n_cells();
    let i = grid.cell_of(x);
    let slope = |c: usize| (v.values()[c + 1] - v.values()[c]) / h;
    if i >= 1 && i + 1 < nc {
        (slope(i + 1) - slope(i - 1)) / (2.0 * h)
    } else if i == 0 {
        (slope(1) - slope(0)) / h
    } else {
        (slope(nc - 1) - slope(nc - 2)) / h
    }
}

/// Largest step along `d` keeping all gaps positive and the positions inside
/// the domain; returns `f64::INFINITY` when unconstrained.
fn max_feasible_step(x: &[f64], d: &[f64], half_width: f64) -> f64 {
    let n = x.len();
    let mut alpha = f64::INFINITY;
    for k in 0..n - 1 {
        let dd = d[k + 1] - d[k];
        if dd < 0.0 {
            alpha = alpha.min((x[k + 1] - x[k]) / -dd);
        }
    }
    if d[0] < 0.0 {
        alpha = alpha.min((x[0] + half_width) / -d[0]);
    }
    if d[n - 1] > 0.0 {
        alpha = alpha.min((half_width - x[n - 1]) / d[n - 1]);
    }
    alpha
}

/// Damped Newton descent on the X-block objective.
///
/// `anchor = Some((previous positions, tau))` gives the JKO subproblem;
/// `anchor = None` minimizes the bare energy (used for the discrete
/// equilibrium).
pub(crate) fn minimize_x(
    start: &QuantileDensity,
    anchor: Option<(&QuantileDensity, f64)>,
    v: Option<&EulerianField>,
    p: &ModelParams,
    cfg: &InnerSolverConfig,
) -> Result<(QuantileDensity, XStats)> {
    let n = start.n_quantiles();
    if let Some((a, tau)) = anchor {
        if a.n_quantiles() != n {
            return Err(Error::ResolutionMismatch {
                left: a.n_quantiles(),
                right: n,
            });
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
    }
    let problem = XProblem::new(n, anchor.map(|(a, t)| (a.positions(), t)), v, p);
    let tol = cfg.grad_tol / n as f64;

    let mut x = start.positions().to_vec();
    let mut f = problem.objective(&x);
    if !f.is_finite() {
        return Err(Error::InvalidDensity(
            "start of the X-block is infeasible (outside the domain?)".into(),
        ));
    }
    let mut g = vec![0.0; n];
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..cfg.max_newton_iters {
        problem.gradient(&x, &mut g);
        grad_norm = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if grad_norm <= tol {
            break;
        }
        iterations += 1;

        let (lower, diag, upper) = problem.hessian(&x);
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut dir = tridiag::solve(&lower, &diag, &upper, &neg_g).unwrap_or_else(|| neg_g.clone());
        let mut slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            dir = neg_g.clone();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }

        let mut accepted = false;
        for attempt in 0..2 {
            let alpha_start = (0.99 * max_feasible_step(&x, &dir, problem.half_width)).min(1.0);
            let mut alpha = alpha_start;
            for _ in 0..60 {
                if alpha <= 0.0 {
                    break;
                }
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + alpha * di).collect();
                let ft = problem.objective(&trial);
                if ft <= f + cfg.armijo_c * alpha * slope {
                    x = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
                alpha *= cfg.backtrack_factor;
            }
            if accepted || attempt == 1 {
                break;
            }
            // Newton step failed to make progress: steepest-descent fallback.
            dir = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }

        if !accepted {
            // At the floor of double precision the predicted decrease is
            // below round-off; treat that as converged rather than stalled.
            if slope.abs() <= 1e-14 * (1.0 + f.abs()) {
                break;
            }
            return Err(Error::InnerStall {
                grad_norm,
                tol,
                last_iterate: x,
            });
        }
    }

    Ok((
        QuantileDensity::new(x)?,
        XStats {
            iterations,
            grad_norm,
        },
    ))
}

/// Minimize the X-block of the JKO functional anchored at (and started from)
/// `x_prev`, with the chemoattractant `v` frozen.
pub fn solve_x_subproblem(
    x_prev: &QuantileDensity,
    v: &EulerianField,
    tau: f64,
    p: &ModelParams,
    cfg: &InnerSolverConfig,
) -> Result<QuantileDensity> {
    let (x, _) = minimize_x(x_prev, Some((x_prev, tau)), Some(v), p, cfg)?;
    Ok(x)
}

// ---------------------------------------------------------------------------
// Full step and trajectory
// ---------------------------------------------------------------------------

fn penalized_energy(
    u: &QuantileDensity,
    v: &EulerianField,
    prev: &State,
    tau: f64,
    p: &ModelParams,
) -> Result<f64> {
    let w2 = wasserstein2(u, &prev.u)?;
    let dv = v.sub(&prev.v)?;
    let h = entropy_of(u, v, p)?.total;
    Ok((w2 * w2 + dv.l2_norm_sq()) / (2.0 * tau) + h)
}

/// One minimizing-movement step: alternate the exact v-solve and the Newton
/// X-solve (v first) until the penalized energy stagnates.
pub fn jko_step(
    s_prev: &State,
    tau: f64,
    p: &ModelParams,
    cfg: &InnerSolverConfig,
) -> Result<(State, JkoStepReport)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    cfg.validate()?;
    p.check_field(&s_prev.v)?;

    let h_old = entropy(s_prev, p)?.total;
    let mut x = s_prev.u.clone();
    let mut v = s_prev.v.clone();
    let mut j_cur = h_old; // penalized energy of the start (distance zero)
    let mut alternations = 0;
    let mut newton_iters = 0;
    let mut grad_norm = 0.0;

    for _ in 0..cfg.max_outer_alternations {
        alternations += 1;
        let mut improved = 0.0;

        let v_new = solve_v_subproblem(&s_prev.v, &x, tau, p)?;
        let j_v = penalized_energy(&x, &v_new, s_prev, tau, p)?;
        if j_v <= j_cur {
            improved += j_cur - j_v;
            v = v_new;
            j_cur = j_v;
        }

        let (x_new, stats) = minimize_x(&x, Some((&s_prev.u, tau)), Some(&v), p, cfg)?;
        newton_iters += stats.iterations;
        grad_norm = stats.grad_norm;
        let j_x = penalized_energy(&x_new, &v, s_prev, tau, p)?;
        if j_x <= j_cur {
            improved += j_cur - j_x;
            x = x_new;
            j_cur = j_x;
        }

        if improved < cfg.energy_decrease_tol {
            break;
        }
    }

    let new_state = State::new(x, v);
    let step_distance = compound_dist(&new_state, s_prev)?;
    Ok((
        new_state,
        JkoStepReport {
            alternations,
            newton_iters,
            grad_norm,
            step_distance,
            energy_decrease: h_old - j_cur,
        },
    ))
}

/// Gaps to the equilibrium attached to each trajectory entry.
#[derive(Debug, Clone, Copy)]
pub struct EqGap {
    pub w2: f64,
    pub v_l2: f64,
    pub v_h1: f64,
}

/// Piecewise-constant-in-time discrete solution: iterate `n` covers
/// `((n-1) tau, n tau]`.
#[derive(Debug, Clone)]
pub struct JkoTrajectory {
    pub tau: f64,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub step_reports: Vec<JkoStepReport>,
    pub energies: Vec<EnergyReport>,
    pub lyapunovs: Option<Vec<LyapunovReport>>,
    pub eq_gaps: Option<Vec<EqGap>>,
}

impl JkoTrajectory {
    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Index of the iterate covering time `t`.
    pub fn index_at(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let n = (t / self.tau - 1e-12).ceil() as usize;
        n.min(self.states.len() - 1)
    }

    pub fn state_at(&self, t: f64) -> &State {
        &self.states[self.index_at(t)]
    }

    /// `(t, L)` series for decay fits.
    pub fn lyapunov_series(&self) -> Option<Vec<(f64, f64)>> {
        self.lyapunovs
            .as_ref()
            .map(|ls| self.times.iter().copied().zip(ls.iter().map(|r| r.l)).collect())
    }
}

/// A step failure wrapping the trajectory computed so far.
#[derive(Debug)]
pub struct EvolveFailure {
    pub partial: JkoTrajectory,
    pub failed_step: usize,
    pub source: Error,
}

impl std::fmt::Display for EvolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "JKO step {} failed after {} completed steps: {}",
            self.failed_step,
            self.partial.n_steps(),
            self.source
        )
    }
}

impl std::error::Error for EvolveFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

fn eq_gap(state: &State, eq: &EquilibriumPair) -> Result<EqGap> {
    let w2 = wasserstein2(&state.u, eq.x_inf())?;
    let dv = state.v.sub(eq.v_lyap())?;
    Ok(EqGap {
        w2,
        v_l2: dv.l2_norm_sq().sqrt(),
        v_h1: dv.h1_norm_sq().sqrt(),
    })
}

/// Run `ceil(T / tau)` minimizing-movement steps from `s0`. When an
/// equilibrium is supplied, Lyapunov values and equilibrium gaps are attached
/// to every entry.
pub fn evolve(
    s0: &State,
    tau: f64,
    t_final: f64,
    p: &ModelParams,
    cfg: &InnerSolverConfig,
    eq: Option<&EquilibriumPair>,
) -> std::result::Result<JkoTrajectory, Box<EvolveFailure>> {
    let fail = |traj: JkoTrajectory, step: usize, source: Error| {
        Box::new(EvolveFailure {
            partial: traj,
            failed_step: step,
            source,
        })
    };

    let mut traj = JkoTrajectory {
        tau,
        times: vec![0.0],
        states: vec![s0.clone()],
        step_reports: Vec::new(),
        energies: Vec::new(),
        lyapunovs: eq.map(|_| Vec::new()),
        eq_gaps: eq.map(|_| Vec::new()),
    };

    let empty = JkoTrajectory {
        tau,
        times: Vec::new(),
        states: Vec::new(),
        step_reports: Vec::new(),
        energies: Vec::new(),
        lyapunovs: None,
        eq_gaps: None,
    };

    if !(tau > 0.0) {
        return Err(fail(
            empty,
            0,
            Error::InvalidArgument(format!("tau must be positive, got {tau}")),
        ));
    }
    if t_final < 0.0 {
        return Err(fail(
            empty,
            0,
            Error::InvalidArgument(format!("T must be nonnegative, got {t_final}")),
        ));
    }

    let attach = |traj: &mut JkoTrajectory| -> Result<()> {
        let s = traj.states.last().unwrap();
        traj.energies.push(entropy(s, p)?);
        if let Some(eq) = eq {
            traj.lyapunovs
                .as_mut()
                .unwrap()
                .push(crate::energetics::lyapunov_parts(s, eq, p)?);
            traj.eq_gaps.as_mut().unwrap().push(eq_gap(s, eq)?);
        }
        Ok(())
    };

    if let Err(e) = attach(&mut traj) {
        return Err(fail(traj, 0, e));
    }

    let steps = (t_final / tau - 1e-9).ceil().max(0.0) as usize;
    for n in 1..=steps {
        let prev = traj.states.last().unwrap().clone();
        match jko_step(&prev, tau, p, cfg) {
            Ok((state, report)) => {
                traj.times.push(n as f64 * tau);
                traj.states.push(state);
                traj.step_reports.push(report);
                if let Err(e) = attach(&mut traj) {
                    return Err(fail(traj, n, e));
                }
            }
            Err(e) => return Err(fail(traj, n, e)),
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_transport::density_to_quantiles;
    use crate::tridiag;

    fn params(chi: f64) -> ModelParams {
        let mut p = ModelParams::quadratic(chi, 1.0, 1.0).unwrap();
        p.n_cells = 400;
        p.n_quantiles = 200;
        p
    }

    fn gaussian_quantiles(p: &ModelParams, mean: f64, var: f64) -> QuantileDensity {
        let grid = p.grid();
        let raw = EulerianField::from_fn(grid, |x| {
            (-(x - mean) * (x - mean) / (2.0 * var)).exp()
        })
        .unwrap();
        let mass = raw.trapezoid();
        let u = EulerianField::new(grid, raw.values().iter().map(|v| v / mass).collect()).unwrap();
        density_to_quantiles(&u, p.n_quantiles).unwrap()
    }

    #[test]
    fn v_subproblem_zero_data() {
        let p = params(0.0);
        let u = gaussian_quantiles(&p, 0.0, 1.0);
        let v0 = EulerianField::zeros(p.grid());
        let v = solve_v_subproblem(&v0, &u, 0.1, &p).unwrap();
        assert!(v.sup_norm() < 1e-14);
    }

    #[test]
    fn v_subproblem_residual_is_tiny() {
        let p = params(0.4);
        let u = gaussian_quantiles(&p, 0.3, 1.2);
        let grid = p.grid();
        let v0 = EulerianField::from_fn(grid, |x| 0.2 * (-(x * x) / 4.0).exp()).unwrap();
        let tau = 0.05;
        let v = solve_v_subproblem(&v0, &u, tau, &p).unwrap();

        // plug back into the strong-form tridiagonal system
        let c = lump_to_nodes(&u, &grid).unwrap();
        let n = grid.n_nodes();
        let ih2 = 1.0 / (grid.h() * grid.h());
        let alpha = 1.0 / tau + p.kappa;
        let mut lower = vec![-ih2; n - 1];
        let mut upper = vec![-ih2; n - 1];
        let diag = vec![alpha + 2.0 * ih2; n];
        upper[0] = -2.0 * ih2;
        lower[n - 2] = -2.0 * ih2;
        let rhs: Vec<f64> = v0
            .values()
            .iter()
            .enumerate()
            .map(|(i, &vp)| vp / tau + p.chi * c[i] / grid.trap_weight(i))
            .collect();
        let r = tridiag::residual(&lower, &diag, &upper, v.values(), &rhs);
        let rnorm = r.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let rhsnorm = rhs.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(rnorm <= 1e-12 * rhsnorm, "residual {rnorm} vs rhs {rhsnorm}");
    }

    #[test]
    fn v_subproblem_implicit_euler_consistency() {
        let p = params(0.1);
        let u = gaussian_quantiles(&p, 0.0, 1.0);
        let grid = p.grid();
        let v0 = EulerianField::from_fn(grid, |x| (-(x * x) / 2.0).exp()).unwrap();
        let tau = 1e-6;
        let v = solve_v_subproblem(&v0, &u, tau, &p).unwrap();
        let gap = v.sub(&v0).unwrap().l2_norm_sq().sqrt();
        assert!(gap <= 50.0 * tau, "v moved {gap} for tau {tau}");
    }

    #[test]
    fn v_subproblem_rejects_bad_tau() {
        let p = params(0.0);
        let u = gaussian_quantiles(&p, 0.0, 1.0);
        let v0 = EulerianField::zeros(p.grid());
        assert!(matches!(
            solve_v_subproblem(&v0, &u, 0.0, &p),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn x_subproblem_fixed_point_returns_immediately() {
        let p = params(0.0);
        let v = EulerianField::zeros(p.grid());
        let cfg = InnerSolverConfig::default();
        let start = gaussian_quantiles(&p, 0.2, 1.0);
        let solved = solve_x_subproblem(&start, &v, 0.05, &p, &cfg).unwrap();
        // restarting at the minimizer must not move
        let (again, stats) = minimize_x(&solved, Some((&start, 0.05)), Some(&v), &p, &cfg).unwrap();
        assert!(stats.iterations <= 1, "iterations {}", stats.iterations);
        let shift: f64 = again
            .positions()
            .iter()
            .zip(solved.positions())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(shift < 1e-10, "moved by {shift}");
    }

    #[test]
    fn x_subproblem_mean_recursion() {
        // With W = lambda0 x^2/2 and chi = 0 the barrier gradient telescopes,
        // so the minimizer mean obeys exactly mean = m/(1 + lambda0 tau).
        let p = params(0.0);
        let v = EulerianField::zeros(p.grid());
        let cfg = InnerSolverConfig::default();
        let m0 = 0.8;
        let start = gaussian_quantiles(&p, m0, 1.0);
        let tau = 0.07;
        let solved = solve_x_subproblem(&start, &v, tau, &p, &cfg).unwrap();
        let expect = start.mean() / (1.0 + tau);
        assert!(
            (solved.mean() - expect).abs() < 1e-6,
            "mean {} vs {}",
            solved.mean(),
            expect
        );
    }

    #[test]
    fn x_subproblem_outputs_stay_monotone() {
        let p = params(0.3);
        let grid = p.grid();
        let v = EulerianField::from_fn(grid, |x| 0.4 * (x * 0.9).sin()).unwrap();
        let cfg = InnerSolverConfig::default();
        let mut state = gaussian_quantiles(&p, -0.5, 0.7);
        for k in 0..5 {
            state = solve_x_subproblem(&state, &v, 0.02 * (k + 1) as f64, &p, &cfg).unwrap();
            // QuantileDensity enforces strict monotonicity on construction
            assert_eq!(state.n_quantiles(), p.n_quantiles);
        }
    }

    #[test]
    fn jko_step_energy_inequality() {
        let p = params(0.1);
        let cfg = InnerSolverConfig::default();
        let grid = p.grid();
        let u = gaussian_quantiles(&p, 1.0, 1.5);
        let v = EulerianField::from_fn(grid, |x| 0.3 * (-(x - 1.0) * (x - 1.0)).exp()).unwrap();
        let mut s = State::new(u, v);
        let tau = 0.01;
        for _ in 0..5 {
            let h_old = entropy(&s, &p).unwrap().total;
            let (next, report) = jko_step(&s, tau, &p, &cfg).unwrap();
            let h_new = entropy(&next, &p).unwrap().total;
            let d = report.step_distance;
            assert!(
                h_new + d * d / (2.0 * tau) <= h_old + 1e-10,
                "energy inequality violated: {} vs {}",
                h_new + d * d / (2.0 * tau),
                h_old
            );
            assert!(report.energy_decrease >= -1e-12);
            s = next;
        }
    }

    #[test]
    fn jko_mean_follows_implicit_euler() {
        let p = params(0.0);
        let cfg = InnerSolverConfig::default();
        let u = gaussian_quantiles(&p, 1.0, 1.0);
        let mut s = State::new(u, EulerianField::zeros(p.grid()));
        let tau = 0.05;
        let n = 8;
        for _ in 0..n {
            s = jko_step(&s, tau, &p, &cfg).unwrap().0;
        }
        let expect = 1.0 / (1.0 + tau).powi(n);
        assert!(
            (s.u.mean() - expect).abs() < 1e-4 + 1e-3 * expect,
            "mean {} vs {}",
            s.u.mean(),
            expect
        );
    }

    #[test]
    fn evolve_zero_horizon_and_query_convention() {
        let p = params(0.0);
        let cfg = InnerSolverConfig::default();
        let s0 = State::new(gaussian_quantiles(&p, 0.0, 1.0), EulerianField::zeros(p.grid()));

        let traj = evolve(&s0, 0.1, 0.0, &p, &cfg, None).unwrap();
        assert_eq!(traj.states.len(), 1);

        let traj = evolve(&s0, 0.1, 0.35, &p, &cfg, None).unwrap();
        assert_eq!(traj.n_steps(), 4); // ceil(0.35/0.1)
        assert_eq!(traj.index_at(0.0), 0);
        assert_eq!(traj.index_at(0.15), 2); // t = 1.5 tau -> iterate 2
        assert_eq!(traj.index_at(0.2), 2); // t = 2 tau -> iterate 2
        assert_eq!(traj.index_at(0.21), 3);
    }

    #[test]
    fn evolve_ou_variance_tracks_closed_form() {
        // chi = 0, lambda0 = 1: var(t) = 1 + (var0 - 1) e^{-2t}
        let p = params(0.0);
        let cfg = InnerSolverConfig::default();
        let s0 = State::new(gaussian_quantiles(&p, 0.0, 4.0), EulerianField::zeros(p.grid()));
        let tau = 0.01;
        let traj = evolve(&s0, tau, 0.5, &p, &cfg, None).unwrap();
        for (i, s) in traj.states.iter().enumerate().step_by(10) {
            let t = traj.times[i];
            let expect = 1.0 + 3.0 * (-2.0 * t).exp();
            let got = crate::grid_transport::variance(&s.u);
            assert!(
                (got - expect).abs() < 0.03 * expect,
                "t = {t}: var {got} vs {expect}"
            );
        }
    }
}
