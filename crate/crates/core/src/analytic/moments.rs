//! Renewal equations for the mean and variance of `X(t)`.
//!
//! Conditioning on the first switch gives, for a start in state `i`,
//!
//! ```text
//! mu_i(t)    = a_i(t) + integral_0^t mu_{1-i}(t - u) f_i(u) du
//! sigma_i(t) = b_i(t) + integral_0^t sigma_{1-i}(t - u) f_i(u) du
//! ```
//!
//! with `a_i(t) = integral_0^t (Fbar_i c_bar_i + f_i h_i)` and `b_i` built from
//! the solved means. Velocities that depend on the previous sojourn are
//! averaged over it with the opposite state's law.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::process::{RegimeSpec, TauAverager, TAU_NODES};
use crate::quad;
use crate::switching::SojournDistribution;

use super::volterra::{ProductWeights, TimeGrid, VolterraKernels};

/// How the variance forcing treats the randomness of the first segment's
/// displacement over the previous sojourn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceMode {
    /// Average the squared bracket over `tau`.
    #[default]
    Exact,
    /// Square the `tau`-averaged bracket.
    SquaredMean,
}

/// Regime coefficients at one local time `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub c_bar: f64,
    pub l_bar: f64,
    pub l_sq_bar: f64,
    /// Jump for a completed sojourn of length `u`.
    pub h: f64,
}

impl Coefficients {
    /// `E[l + h]` and `E[(l + h)^2]`.
    fn first_segment_moments(&self) -> (f64, f64) {
        (self.l_bar + self.h, self.l_sq_bar + 2.0 * self.h * self.l_bar + self.h * self.h)
    }
}

/// Mean and variance curves on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentCurves {
    pub t: Vec<f64>,
    pub mu: [Vec<f64>; 2],
    pub sigma: [Vec<f64>; 2],
    pub conditional: Option<ConditionalCurves>,
}

/// `mu_i(t | s)` for `t = s, s + step, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalCurves {
    pub s: f64,
    pub t: Vec<f64>,
    pub mu: [Vec<f64>; 2],
}

/// Sojourn laws and regimes with the `tau` averaging set up.
#[derive(Debug, Clone)]
pub struct RenewalModel {
    pub regime: RegimeSpec,
    pub dists: [SojournDistribution; 2],
    averagers: [Option<TauAverager>; 2],
}

/// Runs a quadrature whose integrand may fail; the first failure wins.
fn try_quad<const N: usize, F>(f: F, a: f64, b: f64, tol: f64) -> Result<[f64; N]>
where
    F: Fn(f64) -> Result<[f64; N]>,
{
    let err = RefCell::new(None);
    let v = quad::integrate_vec(
        |u| match f(u) {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                [0.0; N]
            }
        },
        a,
        b,
        tol,
    );
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

impl RenewalModel {
    pub fn new(regime: &RegimeSpec, dists: &[SojournDistribution; 2]) -> Self {
        let averagers = [0, 1].map(|i| {
            regime.states[i]
                .velocity
                .depends_on_prev()
                .then(|| TauAverager::new(&dists[1 - i], TAU_NODES))
        });
        Self { regime: regime.clone(), dists: dists.clone(), averagers }
    }

    pub fn prev_dependent(&self) -> bool {
        self.averagers.iter().any(Option::is_some)
    }

    pub fn coefficients(&self, i: usize, u: f64) -> Result<Coefficients> {
        let st = &self.regime.states[i];
        let h = st.jump.value(u);
        match &self.averagers[i] {
            None => {
                let l = st.velocity.displacement(0.0, 0.0, u)?;
                Ok(Coefficients { c_bar: st.velocity.value(0.0, u), l_bar: l, l_sq_bar: l * l, h })
            }
            Some(avg) => {
                let c_bar = avg.expect(|tau| st.velocity.value(tau, u));
                let (mut l1, mut l2) = (0.0, 0.0);
                if u > 0.0 {
                    for (&tau, &w) in avg.nodes.iter().zip(&avg.weights) {
                        let l = st.velocity.displacement(tau, 0.0, u)?;
                        l1 += w * l;
                        l2 += w * l * l;
                    }
                }
                Ok(Coefficients { c_bar, l_bar: l1, l_sq_bar: l2, h })
            }
        }
    }

    /// `d a_i / du = Fbar_i(u) c_bar_i(u) + f_i(u) h_i(u)`.
    pub fn forcing_density(&self, i: usize, u: f64) -> Result<f64> {
        let d = &self.dists[i];
        let k = self.coefficients(i, u)?;
        let f = d.density(u);
        let jump = if f == 0.0 { 0.0 } else { f * k.h };
        Ok(d.survival(u) * k.c_bar + jump)
    }

    /// `a_i` at increasing points, by cumulative Gauss–Kronrod.
    pub fn mean_forcing_points(&self, points: &[f64]) -> Result<[Vec<f64>; 2]> {
        check_points(points)?;
        let mut out = [Vec::with_capacity(points.len()), Vec::with_capacity(points.len())];
        let mut acc = [0.0; 2];
        let mut prev = 0.0;
        for &t in points {
            if t > prev {
                let tol = 1e-15_f64.max(1e-14 * (t - prev));
                let inc = try_quad(|u| Ok([self.forcing_density(0, u)?, self.forcing_density(1, u)?]), prev, t, tol)?;
                acc[0] += inc[0];
                acc[1] += inc[1];
            }
            out[0].push(acc[0]);
            out[1].push(acc[1]);
            prev = t;
        }
        Ok(out)
    }

    pub fn mean_forcing_at(&self, i: usize, t: f64) -> Result<f64> {
        Ok(try_quad(|u| Ok([self.forcing_density(i, u)?]), 0.0, t, 1e-14)?[0])
    }

    /// Conditional forcing `a_i(t | s) = l_bar_i(s) + (a_i(t) - a_i(s)) / Fbar_i(s)`
    /// at points `t >= s`.
    pub fn conditional_mean_forcing(&self, s: f64, points: &[f64]) -> Result<[Vec<f64>; 2]> {
        if points.first().is_some_and(|&t| t < s) {
            return Err(Error::Domain(format!("conditional forcing needs t >= s = {s}")));
        }
        let mut with_s = Vec::with_capacity(points.len() + 1);
        with_s.push(s);
        with_s.extend_from_slice(points);
        let a = self.mean_forcing_points(&with_s)?;
        let mut out = [Vec::new(), Vec::new()];
        for i in 0..2 {
            let surv = self.dists[i].survival(s);
            if surv < 1e-300 {
                return Err(Error::DegenerateCondition(format!("survival of state {i} at s={s} underflows")));
            }
            let l = self.coefficients(i, s)?.l_bar;
            out[i] = a[i][1..].iter().map(|&at| l + (at - a[i][0]) / surv).collect();
        }
        Ok(out)
    }

    pub fn kernels(&self, grid: TimeGrid) -> VolterraKernels {
        VolterraKernels::new([&self.dists[0], &self.dists[1]], grid)
    }

    pub fn mean_grid(&self, kernels: &VolterraKernels) -> Result<[Vec<f64>; 2]> {
        let a = self.mean_forcing_points(&kernels.grid.points())?;
        kernels.solve([&a[0], &a[1]])
    }

    /// Coefficients on every grid node, per state.
    fn coefficient_table(&self, grid: &TimeGrid) -> Result<[Vec<Coefficients>; 2]> {
        let mut out = [Vec::with_capacity(grid.len()), Vec::with_capacity(grid.len())];
        for (i, col) in out.iter_mut().enumerate() {
            for k in 0..=grid.n {
                col.push(self.coefficients(i, grid.t(k))?);
            }
        }
        Ok(out)
    }

    /// `integral_0^t E[(l_i + h_i)^2](u) f_i(u) du` at increasing points; in
    /// the literal mode the square of the mean is used instead.
    fn segment_square_points(&self, points: &[f64], mode: VarianceMode) -> Result<[Vec<f64>; 2]> {
        let q = |i: usize, u: f64| -> Result<f64> {
            let f = self.dists[i].density(u);
            if f == 0.0 {
                return Ok(0.0);
            }
            let (m1, m2) = self.coefficients(i, u)?.first_segment_moments();
            Ok(f * match mode {
                VarianceMode::Exact => m2,
                VarianceMode::SquaredMean => m1 * m1,
            })
        };
        let mut out = [Vec::with_capacity(points.len()), Vec::with_capacity(points.len())];
        let mut acc = [0.0; 2];
        let mut prev = 0.0;
        for &t in points {
            if t > prev {
                let tol = 1e-15_f64.max(1e-14 * (t - prev));
                let inc = try_quad(|u| Ok([q(0, u)?, q(1, u)?]), prev, t, tol)?;
                acc[0] += inc[0];
                acc[1] += inc[1];
            }
            out[0].push(acc[0]);
            out[1].push(acc[1]);
            prev = t;
        }
        Ok(out)
    }

    /// `b_i` on the grid from solved means `mu`.
    pub fn variance_forcing_grid(
        &self,
        kernels: &VolterraKernels,
        mu: &[Vec<f64>; 2],
        mode: VarianceMode,
    ) -> Result<[Vec<f64>; 2]> {
        let grid = kernels.grid;
        let coef = self.coefficient_table(&grid)?;
        let mut b = [vec![0.0; grid.len()], vec![0.0; grid.len()]];
        let square = self.segment_square_points(&grid.points(), mode)?;
        for i in 0..2 {
            let seg: Vec<(f64, f64)> = coef[i].iter().map(Coefficients::first_segment_moments).collect();
            let other = &mu[1 - i];
            let w = &kernels.weights[i];
            for n in 0..=grid.n {
                let c = mu[i][n];
                let k = &coef[i][n];
                let first = match mode {
                    VarianceMode::Exact => k.l_sq_bar - 2.0 * c * k.l_bar + c * c,
                    VarianceMode::SquaredMean => (k.l_bar - c) * (k.l_bar - c),
                };
                // the mean-free square is integrated exactly, only the
                // cross terms go through the nodal rule
                let integral = w.integrate_nodal(0, n, |j| {
                    let d = other[n - j] - c;
                    2.0 * d * seg[j].0 + d * d
                });
                b[i][n] = self.dists[i].survival(grid.t(n)) * first + square[i][n] + integral;
            }
        }
        Ok(b)
    }

    /// Means and variances by the grid solver.
    pub fn moments_grid(&self, grid: TimeGrid, mode: VarianceMode) -> Result<MomentCurves> {
        let kernels = self.kernels(grid);
        let mu = self.mean_grid(&kernels)?;
        let b = self.variance_forcing_grid(&kernels, &mu, mode)?;
        let mut sigma = kernels.solve([&b[0], &b[1]])?;
        clamp_variance(&mut sigma);
        Ok(MomentCurves { t: grid.points(), mu, sigma, conditional: None })
    }

    /// `mu_i(t | s)` on `t = s + k step`, `k = 0..=cells`, from the
    /// unconditional means on a grid with the same step.
    pub fn conditional_mean(
        &self,
        s: f64,
        kernels: &VolterraKernels,
        mu: &[Vec<f64>; 2],
        cells: usize,
    ) -> Result<ConditionalCurves> {
        let grid = kernels.grid;
        if s < 0.0 {
            return Err(Error::Domain(format!("elapsed time must be nonnegative, got {s}")));
        }
        if cells > grid.n {
            return Err(Error::GridCoverage(format!("{cells} cells requested, unconditional grid has {}", grid.n)));
        }
        let t: Vec<f64> = (0..=cells).map(|k| s + grid.t(k)).collect();
        let a = self.conditional_mean_forcing(s, &t)?;
        let mut out = [Vec::with_capacity(t.len()), Vec::with_capacity(t.len())];
        for i in 0..2 {
            let surv = self.dists[i].survival(s);
            let w = if s == 0.0 {
                kernels.weights[i].clone()
            } else {
                ProductWeights::shifted(&self.dists[i], grid.step, cells, s)
            };
            let other = &mu[1 - i];
            for k in 0..=cells {
                let conv = w.integrate_nodal(0, k, |j| other[k - j]);
                out[i].push(a[i][k] + conv / surv);
            }
        }
        Ok(ConditionalCurves { s, t, mu: out })
    }
}

pub(crate) fn check_points(points: &[f64]) -> Result<()> {
    if points.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) || points.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("time points must be finite, nonnegative and increasing".into()));
    }
    Ok(())
}

/// Rounds tiny negative variances from cancellation up to zero.
pub(crate) fn clamp_variance(sigma: &mut [Vec<f64>; 2]) {
    for s in sigma.iter_mut() {
        let scale = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for v in s.iter_mut() {
            if *v < 0.0 {
                if *v < -1e-9 * scale.max(1e-12) {
                    log::warn!("variance solve produced {v:.3e}");
                }
                *v = 0.0;
            }
        }
    }
}

/// `(a_0, a_1)` at increasing points; `s` gives the conditional forcing.
pub fn mean_forcing(
    regime: &RegimeSpec,
    dists: &[SojournDistribution; 2],
    t_points: &[f64],
    s: Option<f64>,
) -> Result<[Vec<f64>; 2]> {
    let m = RenewalModel::new(regime, dists);
    match s {
        None => m.mean_forcing_points(t_points),
        Some(s) => m.conditional_mean_forcing(s, t_points),
    }
}

/// `(b_0, b_1)` on the grid of `mu`.
pub fn variance_forcing(
    regime: &RegimeSpec,
    dists: &[SojournDistribution; 2],
    mu: &[Vec<f64>; 2],
    grid: TimeGrid,
    mode: VarianceMode,
) -> Result<[Vec<f64>; 2]> {
    if mu.iter().any(|m| m.len() != grid.len()) {
        return Err(Error::GridCoverage("mean curves do not cover the grid".into()));
    }
    let m = RenewalModel::new(regime, dists);
    m.variance_forcing_grid(&m.kernels(grid), mu, mode)
}

/// `mu_i(t | s)` at `t = s, s + step, ..., s + t_len` for both start states.
pub fn conditional_mean(
    regime: &RegimeSpec,
    dists: &[SojournDistribution; 2],
    s: f64,
    grid: TimeGrid,
) -> Result<ConditionalCurves> {
    let m = RenewalModel::new(regime, dists);
    let k = m.kernels(grid);
    let mu = m.mean_grid(&k)?;
    m.conditional_mean(s, &k, &mu, grid.n)
}
