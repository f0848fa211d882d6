//! Spatial discretization and exact 1D optimal transport.
//!
//! Probability densities are carried as quantile vectors: strictly increasing
//! positions `X_j` holding cumulative mass `m_j = (j - 1/2) / N`. In one
//! dimension the quadratic Wasserstein distance between two densities is the
//! L2 distance between their quantile functions, so transport distances are
//! cheap and mass is conserved by construction.
//!
//! A quantile vector is identified with the piecewise-constant density that
//! puts mass `1/N` uniformly on each gap `[X_j, X_{j+1}]` and mass `1/(2N)`
//! on a half-gap extension at either end (the extension reuses the adjacent
//! gap's density, i.e. the quantile function's end slopes). That convention
//! makes the total mass exactly 1 and gives the discrete entropy formula
//! used in [`crate::energetics`] its midpoint end weights.

use crate::{Error, Result};

/// Tolerance on the trapezoid mass of an Eulerian density before it may be
/// converted to quantiles.
pub const MASS_TOL: f64 = 1e-8;

/// Node values below `-NEGATIVE_TOL` make a density invalid; values in
/// `(-NEGATIVE_TOL, 0)` are clipped to zero.
pub const NEGATIVE_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// Uniform node-centered grid on `[-R, R]` with `n_cells + 1` nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    half_width: f64,
    n_cells: usize,
    h: f64,
}

impl Grid {
    pub fn new(half_width: f64, n_cells: usize) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid half-width must be positive and finite, got {half_width}"
            )));
        }
        if n_cells < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 cells, got {n_cells}"
            )));
        }
        Ok(Self {
            half_width,
            n_cells,
            h: 2.0 * half_width / n_cells as f64,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `x_i`, exactly symmetric about 0 and exactly `+-R` at the ends.
    pub fn node(&self, i: usize) -> f64 {
        let n = self.n_cells as f64;
        self.half_width * (2.0 * i as f64 - n) / n
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(|i| self.node(i))
    }

    /// Trapezoid quadrature weight of node `i` (`h/2` at the ends).
    pub fn trap_weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n_cells {
            0.5 * self.h
        } else {
            self.h
        }
    }

    /// Index of the cell containing `x`, clamped to `[0, n_cells - 1]`.
    pub fn cell_of(&self, x: f64) -> usize {
        let raw = ((x + self.half_width) / self.h).floor();
        (raw.max(0.0) as usize).min(self.n_cells - 1)
    }

    pub fn contains(&self, x: f64) -> bool {
        -self.half_width <= x && x <= self.half_width
    }
}

/// Build a uniform grid over `[-R, R]`.
pub fn build_uniform_grid(half_width: f64, n_cells: usize) -> Result<Grid> {
    Grid::new(half_width, n_cells)
}

// ---------------------------------------------------------------------------
// QuantileDensity
// ---------------------------------------------------------------------------

/// Inverse distribution function of a probability density: positions `X_j`
/// at the mass points `m_j = (j - 1/2) / N`, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileDensity {
    positions: Vec<f64>,
}

impl QuantileDensity {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidDensity(format!(
                "need at least 2 quantiles, got {}",
                positions.len()
            )));
        }
        for w in positions.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidDensity(format!(
                    "quantile positions must be strictly increasing ({} !< {})",
                    w[0], w[1]
                )));
            }
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidDensity("non-finite quantile position".into()));
        }
        Ok(Self { positions })
    }

    pub fn n_quantiles(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Mass point `m_j = (j + 1/2)/N` of quantile `j` (0-indexed).
    pub fn mass_point(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.positions.len() as f64
    }

    /// Entropy weight of gap `k` (between quantiles `k` and `k+1`): `1/N`,
    /// plus `1/(2N)` for each domain end the gap's density is extended to.
    pub fn gap_weight(&self, k: usize) -> f64 {
        let n = self.positions.len() as f64;
        let mut w = 1.0 / n;
        if k == 0 {
            w += 0.5 / n;
        }
        if k == self.positions.len() - 2 {
            w += 0.5 / n;
        }
        w
    }

    /// Support of the piecewise-constant reconstruction, including the
    /// half-mass end extensions.
    pub fn extended_support(&self) -> (f64, f64) {
        let x = &self.positions;
        let n = x.len();
        let lo = x[0] - 0.5 * (x[1] - x[0]);
        let hi = x[n - 1] + 0.5 * (x[n - 1] - x[n - 2]);
        (lo, hi)
    }

    /// Mean position, `int_0^1 X(m) dm` by the midpoint rule.
    pub fn mean(&self) -> f64 {
        self.positions.iter().sum::<f64>() / self.positions.len() as f64
    }

    /// Translate by `a` (an isometry of the Wasserstein distance).
    pub fn shifted(&self, a: f64) -> Self {
        Self {
            positions: self.positions.iter().map(|x| x + a).collect(),
        }
    }

    /// Total mass; identically 1 for this representation.
    pub fn mass(&self) -> f64 {
        1.0
    }
}

/// Second moment `m_2(u) = int_0^1 X(m)^2 dm` (midpoint rule).
pub fn second_moment(x: &QuantileDensity) -> f64 {
    x.positions().iter().map(|v| v * v).sum::<f64>() / x.n_quantiles() as f64
}

/// Variance of the represented density.
pub fn variance(x: &QuantileDensity) -> f64 {
    let m = x.mean();
    second_moment(x) - m * m
}

// ---------------------------------------------------------------------------
// EulerianField
// ---------------------------------------------------------------------------

/// Real values on the nodes of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct EulerianField {
    grid: Grid,
    values: Vec<f64>,
}

impl EulerianField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::GridMismatch(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite field value".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            values: vec![0.0; grid.n_nodes()],
            grid,
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().map(f).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Piecewise-linear interpolation at `x` (must lie inside the domain).
    pub fn interp(&self, x: f64) -> Result<f64> {
        if !self.grid.contains(x) {
            return Err(Error::DomainOverflow {
                lo: x,
                hi: x,
                half_width: self.grid.half_width(),
            });
        }
        let i = self.grid.cell_of(x);
        let t = (x - self.grid.node(i)) / self.grid.h();
        Ok((1.0 - t) * self.values[i] + t * self.values[i + 1])
    }

    /// Slope of the interpolant on the cell containing `x`.
    pub fn interp_slope(&self, x: f64) -> Result<f64> {
        if !self.grid.contains(x) {
            return Err(Error::DomainOverflow {
                lo: x,
                hi: x,
                half_width: self.grid.half_width(),
            });
        }
        let i = self.grid.cell_of(x);
        Ok((self.values[i + 1] - self.values[i]) / self.grid.h())
    }

    /// Trapezoid rule for `int f dx`.
    pub fn trapezoid(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.trap_weight(i) * v)
            .sum()
    }

    /// Trapezoid rule for `int f^2 dx`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.trap_weight(i) * v * v)
            .sum()
    }

    /// Exact Dirichlet energy `1/2 int (f_x)^2 dx` of the piecewise-linear
    /// interpolant (cell slopes).
    pub fn dirichlet_energy(&self) -> f64 {
        let h = self.grid.h();
        self.values
            .windows(2)
            .map(|w| {
                let d = w[1] - w[0];
                0.5 * d * d / h
            })
            .sum()
    }

    /// Discrete `H^1` norm squared: `||f||^2 + ||f_x||^2` with cell-slope
    /// gradients.
    pub fn h1_norm_sq(&self) -> f64 {
        self.l2_norm_sq() + 2.0 * self.dirichlet_energy()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Trapezoid rule for `int x^k f(x) dx`.
    pub fn moment(&self, k: u32) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.trap_weight(i) * self.grid.node(i).powi(k as i32) * v)
            .sum()
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "R {} vs {}, n_cells {} vs {}",
                self.grid.half_width(),
                other.grid.half_width(),
                self.grid.n_cells(),
                other.grid.n_cells()
            )));
        }
        Ok(())
    }

    /// Nodewise difference `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            grid: self.grid,
            values,
        })
    }

    /// Trapezoid rule for `int |self - other| dx`.
    pub fn l1_gap(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (a, b))| self.grid.trap_weight(i) * (a - b).abs())
            .sum())
    }
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

/// A point of the product space: cell density in quantile form plus the
/// chemoattractant field on the grid.
#[derive(Debug, Clone)]
pub struct State {
    pub u: QuantileDensity,
    pub v: EulerianField,
}

impl State {
    pub fn new(u: QuantileDensity, v: EulerianField) -> Self {
        Self { u, v }
    }
}

// ---------------------------------------------------------------------------
// Piecewise-linear CDF (conversion machinery)
// ---------------------------------------------------------------------------

/// A continuous piecewise-linear cumulative distribution function.
struct PiecewiseCdf {
    xs: Vec<f64>,
    cum: Vec<f64>,
}

impl PiecewiseCdf {
    /// CDF of a nonnegative field, accumulating trapezoid cell masses.
    fn from_field(u: &EulerianField) -> Self {
        let grid = u.grid();
        let h = grid.h();
        let mut xs = Vec::with_capacity(grid.n_nodes());
        let mut cum = Vec::with_capacity(grid.n_nodes());
        xs.push(grid.node(0));
        cum.push(0.0);
        let v = u.values();
        let mut acc = 0.0;
        for i in 0..grid.n_cells() {
            acc += 0.5 * h * (v[i].max(0.0) + v[i + 1].max(0.0));
            xs.push(grid.node(i + 1));
            cum.push(acc);
        }
        Self { xs, cum }
    }

    /// CDF of the piecewise-constant reconstruction of a quantile vector,
    /// including the half-mass end extensions.
    fn from_quantiles(x: &QuantileDensity) -> Self {
        let p = x.positions();
        let n = p.len();
        let dm = 1.0 / n as f64;
        let (lo, hi) = x.extended_support();
        let mut xs = Vec::with_capacity(n + 2);
        let mut cum = Vec::with_capacity(n + 2);
        xs.push(lo);
        cum.push(0.0);
        xs.push(p[0]);
        cum.push(0.5 * dm);
        for j in 1..n {
            xs.push(p[j]);
            cum.push((j as f64 + 0.5) * dm);
        }
        xs.push(hi);
        cum.push(1.0);
        Self { xs, cum }
    }

    fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Evaluate at `x`, clamped to `[0, total]` outside the breakpoints.
    fn eval(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= *self.xs.last().unwrap() {
            return self.total();
        }
        let k = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(k) => return self.cum[k],
            Err(k) => k - 1,
        };
        let t = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
        self.cum[k] + t * (self.cum[k + 1] - self.cum[k])
    }

    /// Leftmost positions where the CDF crosses each target in `ms`
    /// (`ms` strictly increasing, within `(0, total)`).
    fn invert_sweep(&self, ms: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(ms.len());
        let mut k = 0usize;
        for &m in ms {
            while k + 1 < self.cum.len() && self.cum[k + 1] < m {
                k += 1;
            }
            // cum[k] < m <= cum[k+1]; take the leftmost crossing so flat
            // segments cannot produce ties.
            let seg = self.cum[k + 1] - self.cum[k];
            let t = if seg > 0.0 { (m - self.cum[k]) / seg } else { 1.0 };
            out.push(self.xs[k] + t * (self.xs[k + 1] - self.xs[k]));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Representation changes
// ---------------------------------------------------------------------------

/// Convert a nonnegative grid density with trapezoid mass 1 into `n_quantiles`
/// quantile positions by inverting its piecewise-linear CDF in a single sweep.
pub fn density_to_quantiles(u: &EulerianField, n_quantiles: usize) -> Result<QuantileDensity> {
    if n_quantiles < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 quantiles, got {n_quantiles}"
        )));
    }
    if let Some(bad) = u.values().iter().find(|&&v| v < -NEGATIVE_TOL) {
        return Err(Error::InvalidDensity(format!(
            "density has negative value {bad}"
        )));
    }
    let cdf = PiecewiseCdf::from_field(u);
    let mass = cdf.total();
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(Error::NormalizationError {
            mass,
            tol: MASS_TOL,
        });
    }
    let n = n_quantiles as f64;
    let ms: Vec<f64> = (0..n_quantiles).map(|j| (j as f64 + 0.5) / n * mass).collect();
    let positions = cdf.invert_sweep(&ms);
    QuantileDensity::new(positions)
}

/// Resample the piecewise-constant reconstruction of a quantile vector onto
/// grid nodes: node value = reconstruction mass inside the node's control
/// volume divided by the volume width. Trapezoid mass is exactly the mass
/// inside the domain (1 whenever the support fits).
pub fn quantiles_to_density(x: &QuantileDensity, grid: &Grid) -> Result<EulerianField> {
    let (lo, hi) = x.extended_support();
    let r = grid.half_width();
    if lo < -r || hi > r {
        return Err(Error::DomainOverflow {
            lo,
            hi,
            half_width: r,
        });
    }
    let cdf = PiecewiseCdf::from_quantiles(x);
    let h = grid.h();
    let values = (0..grid.n_nodes())
        .map(|i| {
            let xi = grid.node(i);
            let a = (xi - 0.5 * h).max(-r);
            let b = (xi + 0.5 * h).min(r);
            (cdf.eval(b) - cdf.eval(a)) / (b - a)
        })
        .collect();
    EulerianField::new(*grid, values)
}

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

/// Exact 1D quadratic Wasserstein distance:
/// `W2(u, u')^2 = int_0^1 |X(m) - Y(m)|^2 dm`.
pub fn wasserstein2(x: &QuantileDensity, y: &QuantileDensity) -> Result<f64> {
    if x.n_quantiles() != y.n_quantiles() {
        return Err(Error::ResolutionMismatch {
            left: x.n_quantiles(),
            right: y.n_quantiles(),
        });
    }
    let n = x.n_quantiles() as f64;
    let sq: f64 = x
        .positions()
        .iter()
        .zip(y.positions())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sq / n).sqrt())
}

/// Compound metric: `sqrt(W2(u,u')^2 + ||v - v'||_L2^2)`.
pub fn compound_dist(a: &State, b: &State) -> Result<f64> {
    let w2 = wasserstein2(&a.u, &b.u)?;
    let dv = a.v.sub(&b.v)?;
    Ok((w2 * w2 + dv.l2_norm_sq()).sqrt())
}

/// Exact `L^1` distance between the piecewise-constant reconstructions of two
/// quantile vectors, integrated over the merged breakpoint partition.
pub fn l1_distance(x: &QuantileDensity, y: &QuantileDensity) -> f64 {
    let cx = PiecewiseCdf::from_quantiles(x);
    let cy = PiecewiseCdf::from_quantiles(y);
    // Merge breakpoints; on each piece both densities are constant.
    let mut pts: Vec<f64> = cx.xs.iter().chain(cy.xs.iter()).copied().collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mx = cx.eval(b) - cx.eval(a);
        let my = cy.eval(b) - cy.eval(a);
        total += (mx - my).abs();
    }
    total
}

// ---------------------------------------------------------------------------
// Field sampling along quantiles
// ---------------------------------------------------------------------------

/// Values and first derivatives of `v` at the quantile positions:
/// piecewise-linear values, cell-slope derivatives.
pub fn sample_field_at(v: &EulerianField, x: &QuantileDensity) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut vals = Vec::with_capacity(x.n_quantiles());
    let mut slopes = Vec::with_capacity(x.n_quantiles());
    for &p in x.positions() {
        vals.push(v.interp(p)?);
        slopes.push(v.interp_slope(p)?);
    }
    Ok((vals, slopes))
}
