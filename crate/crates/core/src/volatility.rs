//! Historical volatility `HV_i(t) = sqrt(sigma_i(t) / t)`.

use crate::analytic::{phi_lambda, variance_curves, MomentMethod, TimeGrid, VarianceMode};
use crate::error::{Error, Result};
use crate::interp;
use crate::process::{sample_points, RegimeSpec};
use crate::rng;
use crate::stats::SampleSummary;
use crate::switching::{SojournDistribution, SwitchingModel};

/// Derived quantities of the symmetric constant model `lambda_0 = lambda_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricHVParams {
    pub lambda: f64,
    pub c0: f64,
    pub c1: f64,
    pub h0: f64,
    pub h1: f64,
    /// `(c_0 - c_1) / 2`
    pub c: f64,
    /// `(h_0 + h_1) / 2`
    pub big_b: f64,
    /// `(h_0 - h_1) / 2`
    pub b: f64,
    pub gamma: [f64; 2],
}

impl SymmetricHVParams {
    pub fn new(lambda: f64, c: [f64; 2], h: [f64; 2]) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("rate must be positive, got {lambda}")));
        }
        let half = (c[0] - c[1]) / 2.0;
        let gamma = [0, 1].map(|i| {
            let sign = if i == 0 { 1.0 } else { -1.0 };
            -2.0 * half * (half / lambda + sign * h[i])
        });
        let p = Self {
            lambda,
            c0: c[0],
            c1: c[1],
            h0: h[0],
            h1: h[1],
            c: half,
            big_b: (h[0] + h[1]) / 2.0,
            b: (h[0] - h[1]) / 2.0,
            gamma,
        };
        debug_assert!(p.is_consistent());
        Ok(p)
    }

    /// Builds the parameters from a constant regime with equal exponential rates.
    pub fn from_model(regime: &RegimeSpec, dists: &[SojournDistribution; 2]) -> Result<Self> {
        let (c, h) = regime
            .as_constant()
            .ok_or_else(|| Error::MethodMismatch("symmetric formula needs constant velocities and jumps".into()))?;
        match (dists[0].exponential_rate(), dists[1].exponential_rate()) {
            (Some(a), Some(b)) if a == b => Self::new(a, c, h),
            _ => Err(Error::MethodMismatch("symmetric formula needs equal exponential rates".into())),
        }
    }

    pub fn is_consistent(&self) -> bool {
        let again = Self {
            c: (self.c0 - self.c1) / 2.0,
            big_b: (self.h0 + self.h1) / 2.0,
            b: (self.h0 - self.h1) / 2.0,
            ..*self
        };
        let g0 = -2.0 * again.c * (again.c / self.lambda + self.h0);
        let g1 = -2.0 * again.c * (again.c / self.lambda - self.h1);
        again.c == self.c && again.big_b == self.big_b && again.b == self.b && g0 == self.gamma[0] && g1 == self.gamma[1]
    }
}

/// Small-time limits per start state and the common large-time limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvLimits {
    pub small_t: [f64; 2],
    pub large_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityCurve {
    pub t: Vec<f64>,
    pub hv: [Vec<f64>; 2],
    pub limits: Option<HvLimits>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvOptions {
    pub method: MomentMethod,
    /// Step of the grid solver; ignored by the closed form.
    pub step: f64,
    pub mode: VarianceMode,
}

impl Default for HvOptions {
    fn default() -> Self {
        Self { method: MomentMethod::Grid, step: 1e-3, mode: VarianceMode::Exact }
    }
}

fn check_times(t: &[f64]) -> Result<()> {
    if t.is_empty() || t.iter().any(|&v| !(v > 0.0) || !v.is_finite()) || t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("volatility times must be positive and increasing".into()));
    }
    Ok(())
}

fn limits_unordered(c: [f64; 2], h: [f64; 2], lambda: [f64; 2]) -> HvLimits {
    let lam = (lambda[0] + lambda[1]) / 2.0;
    let big_b = (h[0] + h[1]) / 2.0;
    let half = (c[0] - c[1]) / 2.0;
    let a = lambda[0] * big_b + half;
    let d = lambda[1] * big_b - half;
    HvLimits {
        small_t: [lambda[0].sqrt() * h[0].abs(), lambda[1].sqrt() * h[1].abs()],
        large_t: (lambda[0] * lambda[1] / (2.0 * lam.powi(3)) * (a * a + d * d)).sqrt(),
    }
}

/// Limits of `HV_i(t)` as `t -> 0` and `t -> infinity` for constant
/// parameters, with the states labelled so that `c_0 > c_1`.
pub fn hv_limits(c0: f64, c1: f64, h0: f64, h1: f64, lambda0: f64, lambda1: f64) -> Result<HvLimits> {
    if c0 <= c1 {
        return Err(Error::InvalidParameter(format!("limits need c0 > c1, got c0={c0}, c1={c1}")));
    }
    if !(lambda0 > 0.0 && lambda1 > 0.0) {
        return Err(Error::InvalidParameter("rates must be positive".into()));
    }
    Ok(limits_unordered([c0, c1], [h0, h1], [lambda0, lambda1]))
}

/// The limits for a constant regime with exponential sojourns, if it is one.
/// The large-time value does not depend on which state carries the larger
/// velocity, so no ordering is imposed here.
pub fn model_limits(regime: &RegimeSpec, dists: &[SojournDistribution; 2]) -> Option<HvLimits> {
    let (c, h) = regime.as_constant()?;
    let l = [dists[0].exponential_rate()?, dists[1].exponential_rate()?];
    Some(limits_unordered(c, h, l))
}

/// `HV_i` at `t_points` from the variance of `X_i(t)`.
pub fn hv_curve(
    regime: &RegimeSpec,
    dists: &[SojournDistribution; 2],
    t_points: &[f64],
    opts: &HvOptions,
) -> Result<VolatilityCurve> {
    check_times(t_points)?;
    let t_max = *t_points.last().unwrap();
    let sigma: [Vec<f64>; 2] = match opts.method {
        MomentMethod::ClosedFormExp => {
            let mut pts = Vec::with_capacity(t_points.len() + 1);
            pts.push(0.0);
            pts.extend_from_slice(t_points);
            let m = crate::analytic::closed_form_moments(regime, dists, &pts, opts.mode)?;
            m.sigma.map(|s| s[1..].to_vec())
        }
        MomentMethod::Grid => {
            let grid = TimeGrid::new(t_max, opts.step)?;
            let m = variance_curves(regime, dists, grid, MomentMethod::Grid, opts.mode)?;
            m.sigma.map(|s| t_points.iter().map(|&t| interp::linear(&m.t, &s, t)).collect())
        }
    };
    let hv = sigma.map(|s| s.iter().zip(t_points).map(|(v, t)| (v / t).sqrt()).collect());
    Ok(VolatilityCurve { t: t_points.to_vec(), hv, limits: model_limits(regime, dists) })
}

/// Closed-form symmetric-case volatility.
pub fn hv_symmetric(p: &SymmetricHVParams, t_points: &[f64]) -> Result<VolatilityCurve> {
    check_times(t_points)?;
    let lam = p.lambda;
    let k = p.c + lam * p.b;
    let mut hv = [Vec::with_capacity(t_points.len()), Vec::with_capacity(t_points.len())];
    for &t in t_points {
        let phi2 = phi_lambda(2.0 * lam, t);
        let phi1 = phi_lambda(lam, t);
        let base = p.c * p.c / lam + lam * p.big_b * p.big_b + k * k * phi2 / (lam * t);
        for (i, out) in hv.iter_mut().enumerate() {
            let sign = if i == 0 { 1.0 } else { -1.0 };
            let v = base + p.gamma[i] * phi1 / t + sign * 2.0 * p.big_b * k * (-2.0 * lam * t).exp();
            out.push(v.max(0.0).sqrt());
        }
    }
    let limits = Some(limits_unordered([p.c0, p.c1], [p.h0, p.h1], [lam, lam]));
    Ok(VolatilityCurve { t: t_points.to_vec(), hv, limits })
}

/// Volatility of the moving-average comparison model.
pub fn hv_moving_average(sigma: f64, lambda0: f64, lambda1: f64, t_points: &[f64]) -> Result<Vec<f64>> {
    check_times(t_points)?;
    let two_lam = lambda0 + lambda1;
    if !(lambda1 > 0.0) || !(two_lam > 0.0) {
        return Err(Error::InvalidParameter("moving-average curve needs lambda1 > 0 and lambda0 + lambda1 > 0".into()));
    }
    Ok(t_points
        .iter()
        .map(|&t| {
            let ratio = phi_lambda(two_lam / 2.0, t) / t;
            sigma / two_lam * (lambda1 * lambda1 + lambda0 * (2.0 * lambda1 + lambda0) * ratio).sqrt()
        })
        .collect())
}

/// Monte Carlo estimate of `HV_i(t)` with a delta-method standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct McVolatility {
    pub t: Vec<f64>,
    pub hv: Vec<f64>,
    pub se: Vec<f64>,
    pub mean: Vec<SampleSummary>,
}

pub fn mc_volatility(
    model: &SwitchingModel,
    regime: &RegimeSpec,
    t_points: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<McVolatility> {
    check_times(t_points)?;
    if n_paths < 2 {
        return Err(Error::InvalidParameter("need at least two paths".into()));
    }
    let paths = rng::try_replicate(n_paths, seed, |r| sample_points(model, regime, t_points, r))?;
    let mut hv = Vec::with_capacity(t_points.len());
    let mut se = Vec::with_capacity(t_points.len());
    let mut mean = Vec::with_capacity(t_points.len());
    for (k, &t) in t_points.iter().enumerate() {
        let xs: Vec<f64> = paths.iter().map(|p| p[k].x).collect();
        let s = SampleSummary::from_slice(&xs);
        let v = (s.variance / t).sqrt();
        hv.push(v);
        se.push(if v > 0.0 { s.se_variance / (2.0 * t * v) } else { 0.0 });
        mean.push(s);
    }
    Ok(McVolatility { t: t_points.to_vec(), hv, se, mean })
}
