//! Price model `S(t) = S(0) exp(integral_0^t velocity) prod (1 + h)`, bond
//! and option pricing.
//!
//! Option values are the pair `Phi_i(x, t)`: the value of the payoff at `U`
//! seen from time `t`, spot `x`, with a switch into state `i` occurring at
//! `t`. Elapsed-time slices `Phi_i(x, t | s)` carry the time since the last
//! switch. Three routes are provided: a backward Volterra solve for general
//! regimes, a characteristics PDE solver for constant parameters, and Monte
//! Carlo.

mod fundamental;
mod pde;

pub use fundamental::{solve_fundamental, FundamentalOptions};
pub use pde::solve_pde_constant;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::interp::{monotone_slopes, UniformGrid};
use crate::process::{path_from_flow, CustomVelocity, PathRecord, RegimeSpec, Velocity};
use crate::rng;
use crate::stats::SampleSummary;
use crate::switching::{generate_flow_with, SojournDistribution, State, SwitchingFlow, SwitchingModel};

/// Interest-rate functions `r_i(T, t)`, same shape as velocities.
#[derive(Debug, Clone)]
pub struct RateRegime {
    pub r: [Velocity; 2],
}

impl RateRegime {
    pub fn constant(r: [f64; 2]) -> Self {
        Self { r: r.map(Velocity::Constant) }
    }

    pub fn as_constant(&self) -> Option<[f64; 2]> {
        Some([self.r[0].as_constant()?, self.r[1].as_constant()?])
    }
}

#[derive(Debug, Clone)]
pub struct MarketModel {
    pub spot: f64,
    pub regime: RegimeSpec,
    /// Sojourn laws under the pricing measure.
    pub q_dists: [SojournDistribution; 2],
    pub rates: Option<RateRegime>,
    pub maturity: f64,
}

impl MarketModel {
    pub fn new(spot: f64, regime: RegimeSpec, q_dists: [SojournDistribution; 2], maturity: f64) -> Result<Self> {
        if !(spot > 0.0) || !spot.is_finite() {
            return Err(Error::InvalidParameter(format!("spot must be positive, got {spot}")));
        }
        if !(maturity > 0.0) || !maturity.is_finite() {
            return Err(Error::InvalidParameter(format!("maturity must be positive, got {maturity}")));
        }
        regime.check_jumps_above_minus_one(maturity)?;
        Ok(Self { spot, regime, q_dists, rates: None, maturity })
    }

    pub fn with_rates(mut self, rates: RateRegime) -> Result<Self> {
        for (i, r) in rates.r.iter().enumerate() {
            for k in 0..=64 {
                let t = self.maturity * k as f64 / 64.0;
                if r.value(0.0, t) < 0.0 {
                    return Err(Error::InvalidParameter(format!("rate of state {i} is negative at t={t}")));
                }
            }
        }
        self.rates = Some(rates);
        Ok(self)
    }

    /// Velocities `c_i - r_i` of the discounted price.
    pub fn discounted_regime(&self) -> RegimeSpec {
        let Some(rates) = &self.rates else {
            return self.regime.clone();
        };
        let mut out = self.regime.clone();
        for i in 0..2 {
            let c = self.regime.states[i].velocity.clone();
            let r = rates.r[i].clone();
            out.states[i].velocity = match (c.as_constant(), r.as_constant()) {
                (Some(a), Some(b)) => Velocity::Constant(a - b),
                _ => {
                    let prev = c.depends_on_prev() || r.depends_on_prev();
                    let (c2, r2) = (c.clone(), r.clone());
                    Velocity::Custom(CustomVelocity {
                        f: Arc::new(move |p, t| c.value(p, t) - r.value(p, t)),
                        antiderivative: Some(Arc::new(move |p, t| {
                            match (c2.displacement(p, 0.0, t), r2.displacement(p, 0.0, t)) {
                                (Ok(a), Ok(b)) => a - b,
                                _ => f64::NAN,
                            }
                        })),
                        prev_dependent: prev,
                    })
                }
            };
        }
        out
    }

    pub fn switching_model(&self, initial: State) -> SwitchingModel {
        SwitchingModel::new(self.q_dists[0].clone(), self.q_dists[1].clone()).with_initial_state(initial)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payoff {
    Call { strike: f64 },
    Put { strike: f64 },
    Digital { strike: f64 },
    /// `H(x) = x`
    Asset,
    /// `H(x) = 1`
    Unit,
}

impl Payoff {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Self::Call { strike } => (x - strike).max(0.0),
            Self::Put { strike } => (strike - x).max(0.0),
            Self::Digital { strike } => {
                if x > strike {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Asset => x,
            Self::Unit => 1.0,
        }
    }

}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionSpec {
    pub payoff: Payoff,
    pub maturity: f64,
}

impl OptionSpec {
    pub fn new(payoff: Payoff, maturity: f64) -> Result<Self> {
        match payoff {
            Payoff::Call { strike } | Payoff::Put { strike } | Payoff::Digital { strike } if !(strike > 0.0) => {
                return Err(Error::InvalidParameter(format!("strike must be positive, got {strike}")));
            }
            _ => {}
        }
        if !(maturity > 0.0) {
            return Err(Error::InvalidParameter(format!("maturity must be positive, got {maturity}")));
        }
        Ok(Self { payoff, maturity })
    }
}

/// The common rate when the bond is deterministic (`r_0 = r_1` constant);
/// values are then `exp(-rho (U - t))` times the undiscounted expectation.
pub(crate) fn deterministic_rate(model: &MarketModel) -> Result<f64> {
    match &model.rates {
        None => Ok(0.0),
        Some(r) => match r.as_constant() {
            Some([a, b]) if a == b => Ok(a),
            _ => Err(Error::MethodMismatch(
                "this solver needs a deterministic bond (equal constant rates); use mc_price".into(),
            )),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PricingMethod {
    Fundamental,
    Pde,
}

/// `Phi_i(x, t | s)` for the elapsed times of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSlice {
    pub s: f64,
    pub phi: [Vec<Vec<f64>>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSurface {
    pub method: PricingMethod,
    /// Uniform grid in `ln x`.
    pub y: UniformGrid,
    pub t: Vec<f64>,
    /// `phi[i][n][j] = Phi_i(exp(y_j), t_n)`.
    pub phi: [Vec<Vec<f64>>; 2],
    pub conditional: Vec<ConditionalSlice>,
    /// Sojourns are exponential, so values do not depend on elapsed time.
    pub memoryless: bool,
}

impl PriceSurface {
    pub fn spots(&self) -> Vec<f64> {
        self.y.points().into_iter().map(f64::exp).collect()
    }

    /// `V(t | s) = Phi_state(spot, t | s)`, interpolated in `t`, `s` and `ln x`.
    pub fn value_at(&self, spot: f64, t: f64, state: State, s: f64) -> Result<f64> {
        if !(spot > 0.0) {
            return Err(Error::InvalidParameter(format!("spot must be positive, got {spot}")));
        }
        let (t0, t1) = (self.t[0], *self.t.last().unwrap());
        if t < t0 - 1e-12 || t > t1 + 1e-12 {
            return Err(Error::OutOfRange { t, horizon: t1 });
        }
        let y = spot.ln();
        let at = |rows: &Vec<Vec<f64>>| -> f64 {
            let k = self.t.partition_point(|&v| v <= t).clamp(1, self.t.len() - 1);
            let w = ((t - self.t[k - 1]) / (self.t[k] - self.t[k - 1])).clamp(0.0, 1.0);
            let a = eval_extrapolated(&self.y, &rows[k - 1], y);
            let b = eval_extrapolated(&self.y, &rows[k], y);
            a + w * (b - a)
        };
        let i = state.idx();
        if s <= 0.0 || self.memoryless {
            return Ok(at(&self.phi[i]));
        }
        // piecewise linear in s through s = 0 and the computed slices
        let mut prev = (0.0, at(&self.phi[i]));
        for slice in &self.conditional {
            let v = at(&slice.phi[i]);
            if s <= slice.s {
                let w = (s - prev.0) / (slice.s - prev.0);
                return Ok(prev.1 + w * (v - prev.1));
            }
            prev = (slice.s, v);
        }
        Err(Error::GridCoverage(format!("elapsed time {s} beyond the computed slices")))
    }
}

/// Evaluates the monotone cubic through `values` at `y`, linear in `x = e^y`
/// beyond the grid.
fn eval_extrapolated(grid: &UniformGrid, values: &[f64], y: f64) -> f64 {
    let slopes = monotone_slopes(grid.step, values);
    let mut out = [0.0];
    ShiftedEval::new(grid, y - grid.start).apply(values, &slopes, 0..1, &mut out, 1.0);
    out[0]
}

/// Evaluation of a grid function at `y_j + d` for all `j`; for a uniform
/// grid the cell offset and Hermite basis are shared by every node.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ShiftedEval {
    start: f64,
    step: f64,
    len: usize,
    d: f64,
    offset: i64,
    basis: [f64; 4],
}

impl ShiftedEval {
    pub(crate) fn new(grid: &UniformGrid, d: f64) -> Self {
        let o = d / grid.step;
        let k = o.floor();
        let s = o - k;
        let s2 = s * s;
        let s3 = s2 * s;
        let basis = [2.0 * s3 - 3.0 * s2 + 1.0, (s3 - 2.0 * s2 + s) * grid.step, -2.0 * s3 + 3.0 * s2, (s3 - s2) * grid.step];
        Self { start: grid.start, step: grid.step, len: grid.len, d, offset: k as i64, basis }
    }

    /// Adds `weight * g(y_j + d)` to `out[j - range.start]` for `j` in `range`.
    pub(crate) fn apply(&self, g: &[f64], slopes: &[f64], range: std::ops::Range<usize>, out: &mut [f64], weight: f64) {
        let n = self.len as i64;
        let [b0, b1, b2, b3] = self.basis;
        for (slot, j) in out.iter_mut().zip(range) {
            let a = j as i64 + self.offset;
            let v = if a >= 0 && a + 1 < n {
                let a = a as usize;
                b0 * g[a] + b1 * slopes[a] + b2 * g[a + 1] + b3 * slopes[a + 1]
            } else if a + 1 == n && self.basis[2] == 0.0 {
                g[a as usize]
            } else {
                // linear in x from the nearest edge cell
                let y = self.start + j as f64 * self.step + self.d;
                let (k0, k1) = if a < 0 { (0, 1) } else { (self.len - 2, self.len - 1) };
                let x0 = (self.start + k0 as f64 * self.step).exp();
                let x1 = (self.start + k1 as f64 * self.step).exp();
                let slope = (g[k1] - g[k0]) / (x1 - x0);
                let (xe, ge) = if a < 0 { (x0, g[k0]) } else { (x1, g[k1]) };
                ge + slope * (y.exp() - xe)
            };
            *slot += weight * v;
        }
    }
}

/// Default grid in `ln x`: `ln S(0) +- (6 sigma max(1, sqrt U) + max|c| U)`
/// with `sigma` the long-run volatility when it is available.
pub fn default_log_grid(model: &MarketModel, nodes: usize) -> UniformGrid {
    let sigma = crate::volatility::model_limits(&model.regime, &model.q_dists).map(|l| l.large_t).unwrap_or(0.5);
    let u = model.maturity;
    let mut speed: f64 = 0.0;
    for st in &model.regime.states {
        for k in 0..=32 {
            speed = speed.max(st.velocity.value(0.0, u * k as f64 / 32.0).abs());
        }
    }
    let half = 6.0 * sigma.max(0.05) * u.sqrt().max(1.0) + speed * u;
    let y0 = model.spot.ln();
    UniformGrid::new(y0 - half, y0 + half, nodes.max(3))
}

/// Path of `S` on `sample_grid` along `flow`.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePath {
    pub path: PathRecord,
    pub s: Vec<f64>,
}

pub fn stochastic_exponential_path(model: &MarketModel, flow: SwitchingFlow, sample_grid: &[f64]) -> Result<PricePath> {
    let path = path_from_flow(flow, &model.regime, sample_grid)?;
    if let Some(ev) = path.jump_log.iter().find(|e| !(1.0 + e.amplitude > 0.0)) {
        return Err(Error::Positivity { time: ev.time, factor: 1.0 + ev.amplitude });
    }
    let s = path.drift.iter().zip(&path.kappa).map(|(d, k)| model.spot * d.exp() * k).collect();
    Ok(PricePath { path, s })
}

/// `B(t) = exp(integral_0^t r_state)` along `flow`.
pub fn bond_factor(rates: &RateRegime, flow: &SwitchingFlow, t: f64) -> Result<f64> {
    if t > flow.horizon {
        return Err(Error::OutOfRange { t, horizon: flow.horizon });
    }
    let mut acc = 0.0;
    for seg in flow.segments() {
        if seg.start >= t {
            break;
        }
        acc += rates.r[seg.state.idx()].displacement(seg.prev_sojourn, 0.0, seg.end.min(t) - seg.start)?;
    }
    Ok(acc.exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McPrice {
    pub price: f64,
    pub se: f64,
    pub n_paths: usize,
}

/// Discounted payoff averaged over paths started at a switch into each
/// state.
pub fn mc_price(model: &MarketModel, option: &OptionSpec, n_paths: usize, seed: u64) -> Result<[McPrice; 2]> {
    if n_paths < 2 {
        return Err(Error::InvalidParameter("need at least two paths".into()));
    }
    let u = option.maturity;
    let mut out = [McPrice { price: 0.0, se: 0.0, n_paths }; 2];
    for state in State::BOTH {
        let sw = model.switching_model(state);
        let stream_seed = seed.wrapping_add(state.idx() as u64 * 0x9e37_79b9_7f4a_7c15);
        let values = rng::try_replicate(n_paths, stream_seed, |r| {
            let flow = generate_flow_with(&sw, u, r)?;
            let bond = match &model.rates {
                Some(rates) => bond_factor(rates, &flow, u)?,
                None => 1.0,
            };
            let p = stochastic_exponential_path(model, flow, &[u])?;
            Ok(option.payoff.value(p.s[0]) / bond)
        })?;
        let s = SampleSummary::from_slice(&values);
        out[state.idx()] = McPrice { price: s.mean, se: s.se_mean, n_paths };
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
