//! The entropy functional, the perturbed potential, the Lyapunov
//! decomposition and the dissipation integrals.
//!
//! The driving functional is
//!
//! ```text
//! H(u,v) = int [ u log u + u W + 1/2 v_x^2 + kappa/2 v^2 - chi u v ] dx
//! ```
//!
//! evaluated with one fixed set of discrete rules everywhere:
//!
//! - `int u log u dx = -sum_k omega_k log(N (X_{k+1} - X_k))` over quantile
//!   gaps, with the end gaps carrying the extra `1/(2N)` of the half-mass
//!   extensions; this is the exact entropy of the piecewise-constant
//!   reconstruction.
//! - `int u f dx = (1/N) sum_j f(X_j)` (midpoint rule in mass space), with
//!   `f` interpolated piecewise-linearly when it lives on the grid.
//! - `1/2 ||v_x||^2` is the exact Dirichlet energy of the piecewise-linear
//!   interpolant (cell slopes); `||v||^2` is the trapezoid rule.
//!
//! With these rules the v-block of the JKO step is an exactly solvable
//! quadratic, and the decomposition
//! `H(u,v) - H(u_inf,v_inf) = L_u + L_v + chi L_*` holds to round-off
//! against the Lagrangian equilibrium of [`crate::equilibrium`].

use crate::equilibrium::EquilibriumPair;
use crate::grid_transport::{quantiles_to_density, EulerianField, Grid, QuantileDensity, State};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Model parameters
// ---------------------------------------------------------------------------

/// Confinement potential: analytic quadratic well or a nodal table.
#[derive(Debug, Clone)]
pub enum PotentialSpec {
    /// `W(x) = lambda0 x^2 / 2`
    Quadratic { lambda0: f64 },
    /// Nodal values with first/second derivative tables (centered
    /// differences, one-sided at the ends). Evaluation clamps to the grid.
    Tabulated {
        grid: Grid,
        w: Vec<f64>,
        w_x: Vec<f64>,
        w_xx: Vec<f64>,
    },
}

impl PotentialSpec {
    pub fn quadratic(lambda0: f64) -> Result<Self> {
        if !(lambda0 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda0 must be positive, got {lambda0}"
            )));
        }
        Ok(Self::Quadratic { lambda0 })
    }

    /// Build a tabulated potential from nodal values; derivative tables come
    /// from centered differences (one-sided copies at the two ends).
    pub fn from_values(grid: Grid, w: Vec<f64>) -> Result<Self> {
        if w.len() != grid.n_nodes() {
            return Err(Error::GridMismatch(format!(
                "potential table has {} values, grid has {} nodes",
                w.len(),
                grid.n_nodes()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite potential value".into()));
        }
        let h = grid.h();
        let n = w.len();
        let mut w_x = vec![0.0; n];
        let mut w_xx = vec![0.0; n];
        for i in 1..n - 1 {
            w_x[i] = (w[i + 1] - w[i - 1]) / (2.0 * h);
            w_xx[i] = (w[i + 1] - 2.0 * w[i] + w[i - 1]) / (h * h);
        }
        w_x[0] = (w[1] - w[0]) / h;
        w_x[n - 1] = (w[n - 1] - w[n - 2]) / h;
        w_xx[0] = w_xx[1];
        w_xx[n - 1] = w_xx[n - 2];
        Ok(Self::Tabulated { grid, w, w_x, w_xx })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Quadratic { lambda0 } => 0.5 * lambda0 * x * x,
            Self::Tabulated { grid, w, .. } => Self::interp_clamped(grid, w, x),
        }
    }

    /// Derivative consistent with `eval`: exact for the quadratic, the cell
    /// slope of the `w` table otherwise.
    pub fn grad(&self, x: f64) -> f64 {
        match self {
            Self::Quadratic { lambda0 } => lambda0 * x,
            Self::Tabulated { grid, w, .. } => {
                let r = grid.half_width();
                if x <= -r || x >= r {
                    return 0.0;
                }
                let i = grid.cell_of(x);
                (w[i + 1] - w[i]) / grid.h()
            }
        }
    }

    /// Curvature estimate (used for Newton Hessians and convexity reports).
    pub fn curv(&self, x: f64) -> f64 {
        match self {
            Self::Quadratic { lambda0 } => *lambda0,
            Self::Tabulated { grid, w_xx, .. } => Self::interp_clamped(grid, w_xx, x),
        }
    }

    /// Nodal lower bound of the second derivative (the convexity modulus).
    pub fn convexity_lower_bound(&self) -> f64 {
        match self {
            Self::Quadratic { lambda0 } => *lambda0,
            Self::Tabulated { w_xx, .. } => w_xx.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    fn interp_clamped(grid: &Grid, table: &[f64], x: f64) -> f64 {
        let r = grid.half_width();
        if x <= -r {
            return table[0];
        }
        if x >= r {
            return table[table.len() - 1];
        }
        let i = grid.cell_of(x);
        let t = (x - grid.node(i)) / grid.h();
        (1.0 - t) * table[i] + t * table[i + 1]
    }
}

/// Model coefficients and discretization sizes.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub chi: f64,
    pub kappa: f64,
    pub potential: PotentialSpec,
    pub half_width: f64,
    pub n_cells: usize,
    pub n_quantiles: usize,
}

impl ModelParams {
    pub const DEFAULT_N_CELLS: usize = 800;
    pub const DEFAULT_N_QUANTILES: usize = 400;

    pub fn new(
        chi: f64,
        kappa: f64,
        potential: PotentialSpec,
        half_width: f64,
        n_cells: usize,
        n_quantiles: usize,
    ) -> Result<Self> {
        if !chi.is_finite() {
            return Err(Error::InvalidArgument(format!("chi must be finite, got {chi}")));
        }
        if !(kappa >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kappa must be nonnegative, got {kappa}"
            )));
        }
        Grid::new(half_width, n_cells)?;
        if n_quantiles < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_quantiles must be at least 2, got {n_quantiles}"
            )));
        }
        Ok(Self {
            chi,
            kappa,
            potential,
            half_width,
            n_cells,
            n_quantiles,
        })
    }

    /// Quadratic-well model at the default resolutions, with the domain
    /// half-width chosen so the confinement keeps all but ~1e-10 of the
    /// equilibrium mass inside.
    pub fn quadratic(chi: f64, kappa: f64, lambda0: f64) -> Result<Self> {
        let potential = PotentialSpec::quadratic(lambda0)?;
        Self::new(
            chi,
            kappa,
            potential,
            Self::default_half_width(lambda0),
            Self::DEFAULT_N_CELLS,
            Self::DEFAULT_N_QUANTILES,
        )
    }

    /// `R = 10 / sqrt(lambda0)`: ten standard deviations of the decoupled
    /// Gibbs state.
    pub fn default_half_width(lambda0: f64) -> f64 {
        10.0 / lambda0.sqrt()
    }

    pub fn grid(&self) -> Grid {
        // parameters were validated at construction
        Grid::new(self.half_width, self.n_cells).expect("validated at construction")
    }

    pub fn check_field(&self, v: &EulerianField) -> Result<()> {
        if *v.grid() != self.grid() {
            return Err(Error::GridMismatch(
                "field grid does not match model grid".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Entropy
// ---------------------------------------------------------------------------

/// The entropy split into its four summands; `total` is their exact sum.
#[derive(Debug, Clone, Copy)]
pub struct EnergyReport {
    pub internal: f64,
    pub potential: f64,
    pub v_part: f64,
    pub coupling: f64,
    pub total: f64,
}

impl EnergyReport {
    fn new(internal: f64, potential: f64, v_part: f64, coupling: f64) -> Self {
        Self {
            internal,
            potential,
            v_part,
            coupling,
            total: internal + potential + v_part + coupling,
        }
    }
}

/// `int u log u dx` of the piecewise-constant reconstruction of `x`.
pub fn lagrangian_log_entropy(x: &QuantileDensity) -> f64 {
    let p = x.positions();
    let n = p.len() as f64;
    let mut s = 0.0;
    for k in 0..p.len() - 1 {
        s -= x.gap_weight(k) * (n * (p[k + 1] - p[k])).ln();
    }
    s
}

/// `(1/N) sum_j f(X_j)`, the Lagrangian form of `int u f dx`.
pub fn lagrangian_integral(x: &QuantileDensity, f: impl Fn(f64) -> f64) -> f64 {
    x.positions().iter().map(|&p| f(p)).sum::<f64>() / x.n_quantiles() as f64
}

/// Evaluate the entropy of a state.
pub fn entropy(s: &State, p: &ModelParams) -> Result<EnergyReport> {
    entropy_of(&s.u, &s.v, p)
}

/// [`entropy`] on borrowed components.
pub fn entropy_of(u: &QuantileDensity, v: &EulerianField, p: &ModelParams) -> Result<EnergyReport> {
    p.check_field(v)?;
    let internal = lagrangian_log_entropy(u);
    let potential = lagrangian_integral(u, |x| p.potential.eval(x));
    let v_part = v.dirichlet_energy() + 0.5 * p.kappa * v.l2_norm_sq();
    let coupling = if p.chi == 0.0 {
        0.0
    } else {
        let mut acc = 0.0;
        for &xj in u.positions() {
            acc += v.interp(xj)?;
        }
        -p.chi * acc / u.n_quantiles() as f64
    };
    Ok(EnergyReport::new(internal, potential, v_part, coupling))
}

/// Entropy of an Eulerian pair (used for the finite-difference oracle, whose
/// density never leaves the grid). Nodes with `u <= 0` contribute nothing to
/// `u log u`.
pub fn entropy_eulerian(u: &EulerianField, v: &EulerianField, p: &ModelParams) -> Result<EnergyReport> {
    p.check_field(u)?;
    p.check_field(v)?;
    let grid = u.grid();
    let mut internal = 0.0;
    let mut potential = 0.0;
    let mut coupling = 0.0;
    for (i, &ui) in u.values().iter().enumerate() {
        let w = grid.trap_weight(i);
        if ui > 0.0 {
            internal += w * ui * ui.ln();
        }
        potential += w * ui * p.potential.eval(grid.node(i));
        coupling -= p.chi * w * ui * v.values()[i];
    }
    let v_part = v.dirichlet_energy() + 0.5 * p.kappa * v.l2_norm_sq();
    Ok(EnergyReport::new(internal, potential, v_part, coupling))
}

// ---------------------------------------------------------------------------
// Perturbed potential and Lyapunov decomposition
// ---------------------------------------------------------------------------

/// `W^eps = W - chi v_inf` as a nodal table plus its measured convexity
/// modulus `lambda_eps = min_i (W^eps)_xx(x_i)`.
#[derive(Debug, Clone)]
pub struct PerturbedPotential {
    pub spec: PotentialSpec,
    pub lambda_eps: f64,
}

/// Tabulate the perturbed potential `W^eps := W - chi v_inf` on the grid.
pub fn perturbed_potential(p: &ModelParams, eq: &EquilibriumPair) -> Result<PerturbedPotential> {
    p.check_field(eq.v_lyap())?;
    let grid = p.grid();
    let table: Vec<f64> = grid
        .nodes()
        .zip(eq.v_lyap().values())
        .map(|(x, &v)| p.potential.eval(x) - p.chi * v)
        .collect();
    let spec = PotentialSpec::from_values(grid, table)?;
    let lambda_eps = spec.convexity_lower_bound();
    Ok(PerturbedPotential { spec, lambda_eps })
}

/// The Lyapunov decomposition `H - H_inf = L + chi L_*`, `L = L_u + L_v`.
#[derive(Debug, Clone, Copy)]
pub struct LyapunovReport {
    pub l: f64,
    pub l_u: f64,
    pub l_v: f64,
    pub l_star: f64,
}

/// Evaluate `L_u`, `L_v`, `L_*` of a state against the Lagrangian
/// equilibrium. All integrals use the same discrete rules as [`entropy`], so
/// the decomposition identity holds to round-off.
pub fn lyapunov_parts(s: &State, eq: &EquilibriumPair, p: &ModelParams) -> Result<LyapunovReport> {
    p.check_field(&s.v)?;
    p.check_field(eq.v_lyap())?;
    let x_inf = eq.x_inf();
    if s.u.n_quantiles() != x_inf.n_quantiles() {
        return Err(Error::ResolutionMismatch {
            left: s.u.n_quantiles(),
            right: x_inf.n_quantiles(),
        });
    }

    let v_inf = eq.v_lyap();
    let weps = |x: f64| -> Result<f64> { Ok(p.potential.eval(x) - p.chi * v_inf.interp(x)?) };

    let mut pot_s = 0.0;
    let mut pot_inf = 0.0;
    for (&a, &b) in s.u.positions().iter().zip(x_inf.positions()) {
        pot_s += weps(a)?;
        pot_inf += weps(b)?;
    }
    let n = s.u.n_quantiles() as f64;
    let l_u = lagrangian_log_entropy(&s.u) - lagrangian_log_entropy(x_inf) + (pot_s - pot_inf) / n;

    let dv = s.v.sub(v_inf)?;
    let l_v = dv.dirichlet_energy() + 0.5 * p.kappa * dv.l2_norm_sq();

    let mut cross_s = 0.0;
    let mut cross_inf = 0.0;
    for (&a, &b) in s.u.positions().iter().zip(x_inf.positions()) {
        cross_s += dv.interp(a)?;
        cross_inf += dv.interp(b)?;
    }
    let l_star = -(cross_s - cross_inf) / n;

    Ok(LyapunovReport {
        l: l_u + l_v,
        l_u,
        l_v,
        l_star,
    })
}

// ---------------------------------------------------------------------------
// Dissipation integrals
// ---------------------------------------------------------------------------

/// `int u ((log u + W^eps)_x)^2 dx`, split into the part measured with
/// centered differences on interior nodes and the one-sided contributions
/// where the density meets its support floor or the domain boundary.
#[derive(Debug, Clone, Copy)]
pub struct FisherReport {
    pub interior: f64,
    pub boundary: f64,
    pub total: f64,
}

/// Fisher-type dissipation of `u` with respect to the perturbed potential.
///
/// The quantile density is resampled to the grid; nodes below the floor
/// `1e-12 * max u` are excluded (the mass they carry is negligible and
/// `log u` is meaningless there).
pub fn fisher_dissipation_u(
    u: &QuantileDensity,
    weps: &PotentialSpec,
    grid: &Grid,
) -> Result<FisherReport> {
    let dens = quantiles_to_density(u, grid)?;
    let vals = dens.values();
    let n = vals.len();
    let floor = 1e-12 * vals.iter().cloned().fold(0.0f64, f64::max);
    if floor <= 0.0 {
        return Err(Error::InvalidDensity("density vanishes on the grid".into()));
    }
    let valid: Vec<bool> = vals.iter().map(|&v| v > floor).collect();
    let g: Vec<f64> = (0..n)
        .map(|i| {
            if valid[i] {
                vals[i].ln() + weps.eval(grid.node(i))
            } else {
                0.0
            }
        })
        .collect();
    let h = grid.h();
    let mut interior = 0.0;
    let mut boundary = 0.0;
    for i in 0..n {
        if !valid[i] {
            continue;
        }
        let w = grid.trap_weight(i);
        let left_ok = i > 0 && valid[i - 1];
        let right_ok = i + 1 < n && valid[i + 1];
        let contrib = if left_ok && right_ok {
            let d = (g[i + 1] - g[i - 1]) / (2.0 * h);
            w * vals[i] * d * d
        } else if right_ok {
            let d = (g[i + 1] - g[i]) / h;
            w * vals[i] * d * d
        } else if left_ok {
            let d = (g[i] - g[i - 1]) / h;
            w * vals[i] * d * d
        } else {
            0.0 // isolated valid node
        };
        // A node counts as interior only when its whole 2-neighborhood is
        // valid; a support jump contaminates the centered difference of the
        // node next to it, so that node belongs to the boundary bucket too.
        let deep = i >= 2 && i + 2 < n && valid[i - 2] && valid[i - 1] && valid[i + 1] && valid[i + 2];
        if deep {
            interior += contrib;
        } else {
            boundary += contrib;
        }
    }
    Ok(FisherReport {
        interior,
        boundary,
        total: interior + boundary,
    })
}

/// `||(v - v_inf)_xx - kappa (v - v_inf)||_L2^2` with second differences and
/// the homogeneous-Neumann ghost closure at the two boundary nodes.
pub fn dissipation_v(v: &EulerianField, eq: &EquilibriumPair, kappa: f64) -> Result<f64> {
    let dv = v.sub(eq.v_lyap())?;
    let grid = dv.grid();
    let h2 = grid.h() * grid.h();
    let w = dv.values();
    let n = w.len();
    let mut acc = 0.0;
    for i in 0..n {
        let d2 = if i == 0 {
            2.0 * (w[1] - w[0]) / h2
        } else if i == n - 1 {
            2.0 * (w[n - 2] - w[n - 1]) / h2
        } else {
            (w[i + 1] - 2.0 * w[i] + w[i - 1]) / h2
        };
        let r = d2 - kappa * w[i];
        acc += grid.trap_weight(i) * r * r;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_transport::{build_uniform_grid, density_to_quantiles};

    fn normalized_field(grid: Grid, f: impl Fn(f64) -> f64) -> EulerianField {
        let raw = EulerianField::from_fn(grid, f).unwrap();
        let mass = raw.trapezoid();
        EulerianField::new(grid, raw.values().iter().map(|v| v / mass).collect()).unwrap()
    }

    fn gaussian(grid: Grid, mean: f64, var: f64) -> EulerianField {
        normalized_field(grid, |x| (-(x - mean) * (x - mean) / (2.0 * var)).exp())
    }

    #[test]
    fn entropy_of_uniform_block_is_zero() {
        // u uniform on [0,1], v = 0, W = 0 (tabulated zeros), any chi
        let grid = build_uniform_grid(2.0, 200).unwrap();
        let p = ModelParams::new(
            0.7,
            0.0,
            PotentialSpec::from_values(grid, vec![0.0; grid.n_nodes()]).unwrap(),
            2.0,
            200,
            64,
        )
        .unwrap();
        let n_m = 64;
        let u = QuantileDensity::new(
            (0..n_m).map(|j| (j as f64 + 0.5) / n_m as f64).collect(),
        )
        .unwrap();
        let s = State::new(u, EulerianField::zeros(grid));
        let e = entropy(&s, &p).unwrap();
        assert!(e.total.abs() < 1e-12, "H = {}", e.total);
        assert_eq!(e.total, e.internal + e.potential + e.v_part + e.coupling);
    }

    #[test]
    fn entropy_of_gaussian_matches_closed_form() {
        // H = int u log u + int u x^2/2 = -(1/2)ln(2 pi e) + 1/2 = -(1/2)ln(2 pi)
        let p = ModelParams::new(
            0.0,
            0.0,
            PotentialSpec::quadratic(1.0).unwrap(),
            10.0,
            2000,
            1000,
        )
        .unwrap();
        let grid = p.grid();
        let u = density_to_quantiles(&gaussian(grid, 0.0, 1.0), 1000).unwrap();
        let s = State::new(u, EulerianField::zeros(grid));
        let e = entropy(&s, &p).unwrap();
        let exact = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((e.total - exact).abs() < 5e-3, "H = {} vs {}", e.total, exact);
    }

    #[test]
    fn v_part_matches_fine_quadrature() {
        let p = ModelParams::new(0.0, 1.0, PotentialSpec::quadratic(1.0).unwrap(), 10.0, 800, 100)
            .unwrap();
        let grid = p.grid();
        let bump = |x: f64| (-(x - 0.5) * (x - 0.5) / 2.0).exp();
        let v = EulerianField::from_fn(grid, bump).unwrap();
        let e_coarse = v.dirichlet_energy() + 0.5 * p.kappa * v.l2_norm_sq();

        // independent quadrature at 10x resolution with analytic derivative
        let fine = build_uniform_grid(10.0, 8000).unwrap();
        let dbump = |x: f64| -(x - 0.5) * bump(x);
        let mut quad = 0.0;
        for i in 0..fine.n_nodes() {
            let x = fine.node(i);
            quad += fine.trap_weight(i) * (0.5 * dbump(x) * dbump(x) + 0.5 * bump(x) * bump(x));
        }
        assert!(
            (e_coarse - quad).abs() < 1e-4,
            "coarse {e_coarse} vs quadrature {quad}"
        );
    }

    #[test]
    fn part_sum_identity_is_exact() {
        let p = ModelParams::new(0.3, 1.2, PotentialSpec::quadratic(0.8).unwrap(), 11.0, 400, 80)
            .unwrap();
        let grid = p.grid();
        let u = density_to_quantiles(&gaussian(grid, -0.4, 1.7), 80).unwrap();
        let v = EulerianField::from_fn(grid, |x| 0.3 * (-(x * x) / 3.0).exp()).unwrap();
        let e = entropy(&State::new(u, v), &p).unwrap();
        assert_eq!(e.total, e.internal + e.potential + e.v_part + e.coupling);
    }

    #[test]
    fn tabulated_quadratic_matches_analytic() {
        let grid = build_uniform_grid(5.0, 100).unwrap();
        let table: Vec<f64> = grid.nodes().map(|x| 0.5 * x * x).collect();
        let tab = PotentialSpec::from_values(grid, table).unwrap();
        // second differences of a quadratic are exact
        assert!((tab.convexity_lower_bound() - 1.0).abs() < 1e-9);
        assert!((tab.eval(1.25) - 0.5 * 1.25 * 1.25).abs() < 1e-3);
        assert!((tab.curv(0.7) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fisher_vanishes_on_gibbs_state() {
        let p = ModelParams::new(0.0, 1.0, PotentialSpec::quadratic(1.0).unwrap(), 10.0, 1600, 800)
            .unwrap();
        let grid = p.grid();
        let gibbs = normalized_field(grid, |x| (-0.5 * x * x).exp());
        let u = density_to_quantiles(&gibbs, 800).unwrap();
        let f = fisher_dissipation_u(&u, &PotentialSpec::quadratic(1.0).unwrap(), &grid).unwrap();
        assert!(f.total < 1e-6, "fisher = {}", f.total);
    }

    #[test]
    fn fisher_of_shifted_gaussian_is_mean_squared() {
        // (log N(mu,1) + x^2/2)_x = mu, so the integral is mu^2
        let p = ModelParams::new(0.0, 1.0, PotentialSpec::quadratic(1.0).unwrap(), 10.0, 800, 400)
            .unwrap();
        let grid = p.grid();
        let mu = 0.8;
        let u = density_to_quantiles(&gaussian(grid, mu, 1.0), 400).unwrap();
        let f = fisher_dissipation_u(&u, &PotentialSpec::quadratic(1.0).unwrap(), &grid).unwrap();
        assert!(
            (f.total - mu * mu).abs() < 0.02 * mu * mu,
            "fisher = {} vs {}",
            f.total,
            mu * mu
        );
    }

    #[test]
    fn fisher_of_uniform_block_is_boundary_only() {
        let grid = build_uniform_grid(4.0, 400).unwrap();
        let q = QuantileDensity::new(
            (0..100)
                .map(|j| -1.0 + 2.0 * (j as f64 + 0.5) / 100.0)
                .collect(),
        )
        .unwrap();
        let zero_pot = PotentialSpec::from_values(grid, vec![0.0; grid.n_nodes()]).unwrap();
        let f = fisher_dissipation_u(&q, &zero_pot, &grid).unwrap();
        // log u is flat inside the block; all signal sits at the jump cells
        assert!(f.interior < 1e-8, "interior = {}", f.interior);
        assert!(f.boundary > 0.0);
    }
}
