//! Jump-telegraph paths.
//!
//! On the segment that starts at `tau_n` the particle moves with velocity
//! `c_state(T_n, t - tau_n)`, where `T_n` is the sojourn that just ended
//! (`T_0` on the first segment). Leaving a state after a sojourn of length
//! `T` adds the jump `h_state(T)`.

use std::fmt;
use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};
use crate::quad;
use crate::rng::StreamRng;
use crate::switching::{
    generate_flow_with, PrevSojourn, SojournDistribution, State, SwitchingFlow, SwitchingModel, TRUNCATION_EPS,
};

/// Absolute tolerance for displacements computed by quadrature.
pub const DISPLACEMENT_TOL: f64 = 1e-10;

/// Default node count of the Gauss–Legendre rule averaging over `tau`.
pub const TAU_NODES: usize = 256;

pub type SurfaceFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type CurveFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Velocity given on a `(T, t)` grid, bilinear inside and flat outside.
#[derive(Debug, Clone, PartialEq)]
pub struct Table2d {
    prev_grid: Vec<f64>,
    time_grid: Vec<f64>,
    /// `values[k][j]` is the velocity at `(prev_grid[k], time_grid[j])`.
    values: Vec<Vec<f64>>,
    cumulative: Vec<Vec<f64>>,
}

impl Table2d {
    pub fn new(prev_grid: Vec<f64>, time_grid: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let increasing = |g: &[f64]| !g.is_empty() && g.windows(2).all(|w| w[1] > w[0]) && g.iter().all(|v| v.is_finite());
        if !increasing(&prev_grid) || !increasing(&time_grid) || time_grid[0] < 0.0 {
            return Err(Error::InvalidParameter("table2d grids must be finite and strictly increasing".into()));
        }
        if values.len() != prev_grid.len() || values.iter().any(|r| r.len() != time_grid.len()) {
            return Err(Error::InvalidParameter("table2d values must be |T_grid| rows of |t_grid| entries".into()));
        }
        let cumulative = values
            .iter()
            .map(|row| {
                let mut acc = time_grid[0] * row[0];
                let mut out = Vec::with_capacity(row.len());
                out.push(acc);
                for j in 1..row.len() {
                    acc += 0.5 * (row[j] + row[j - 1]) * (time_grid[j] - time_grid[j - 1]);
                    out.push(acc);
                }
                out
            })
            .collect();
        Ok(Self { prev_grid, time_grid, values, cumulative })
    }

    fn prev_weights(&self, prev: f64) -> (usize, usize, f64) {
        bracket(&self.prev_grid, prev)
    }

    fn row_value(&self, k: usize, t: f64) -> f64 {
        let (a, b, w) = bracket(&self.time_grid, t);
        self.values[k][a] + w * (self.values[k][b] - self.values[k][a])
    }

    /// `integral_0^t` of row `k`.
    fn row_integral(&self, k: usize, t: f64) -> f64 {
        let g = &self.time_grid;
        let row = &self.values[k];
        if t <= g[0] {
            return t.max(0.0) * row[0];
        }
        let n = g.len();
        if t >= g[n - 1] {
            return self.cumulative[k][n - 1] + (t - g[n - 1]) * row[n - 1];
        }
        let j = g.partition_point(|&x| x <= t) - 1;
        let v = self.row_value(k, t);
        self.cumulative[k][j] + 0.5 * (row[j] + v) * (t - g[j])
    }

    pub fn value(&self, prev: f64, t: f64) -> f64 {
        let (a, b, w) = self.prev_weights(prev);
        (1.0 - w) * self.row_value(a, t) + w * self.row_value(b, t)
    }

    pub fn integral(&self, prev: f64, t: f64) -> f64 {
        let (a, b, w) = self.prev_weights(prev);
        (1.0 - w) * self.row_integral(a, t) + w * self.row_integral(b, t)
    }

    fn depends_on_prev(&self) -> bool {
        self.prev_grid.len() > 1 && self.values.windows(2).any(|w| w[0] != w[1])
    }
}

/// Lower/upper node indices and weight of `x` on a sorted grid, clamped.
fn bracket(g: &[f64], x: f64) -> (usize, usize, f64) {
    let n = g.len();
    if n == 1 || x <= g[0] {
        return (0, 0, 0.0);
    }
    if x >= g[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let j = g.partition_point(|&v| v <= x) - 1;
    (j, j + 1, (x - g[j]) / (g[j + 1] - g[j]))
}

#[derive(Clone)]
pub struct CustomVelocity {
    pub f: SurfaceFn,
    /// `(T, t) -> integral_0^t f(T, u) du` when known in closed form.
    pub antiderivative: Option<SurfaceFn>,
    pub prev_dependent: bool,
}

/// Velocity surface `c(T, t)` of one state; `t` is the time since the
/// segment began and `T` the sojourn that preceded it.
#[derive(Clone)]
pub enum Velocity {
    Constant(f64),
    /// `a / (1 + a t)`, `a >= 0`.
    Hyperbolic { a: f64 },
    /// `slope * t`.
    Linear { slope: f64 },
    Table2d(Table2d),
    Custom(CustomVelocity),
}

impl fmt::Debug for Velocity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Hyperbolic { a } => write!(f, "Hyperbolic {{ a: {a} }}"),
            Self::Linear { slope } => write!(f, "Linear {{ slope: {slope} }}"),
            Self::Table2d(t) => write!(f, "Table2d({}x{})", t.prev_grid.len(), t.time_grid.len()),
            Self::Custom(c) => write!(f, "Custom {{ prev_dependent: {} }}", c.prev_dependent),
        }
    }
}

impl Velocity {
    pub fn value(&self, prev: f64, t: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Hyperbolic { a } => a / (1.0 + a * t),
            Self::Linear { slope } => slope * t,
            Self::Table2d(tab) => tab.value(prev, t),
            Self::Custom(c) => (c.f)(prev, t),
        }
    }

    /// `integral_s^t c(T, u) du` in local time.
    pub fn displacement(&self, prev: f64, s: f64, t: f64) -> Result<f64> {
        if s == t {
            return Ok(0.0);
        }
        Ok(match self {
            Self::Constant(c) => c * (t - s),
            Self::Hyperbolic { a } => ((1.0 + a * t) / (1.0 + a * s)).ln(),
            Self::Linear { slope } => 0.5 * slope * (t - s) * (t + s),
            Self::Table2d(tab) => tab.integral(prev, t) - tab.integral(prev, s),
            Self::Custom(c) => match &c.antiderivative {
                Some(anti) => anti(prev, t) - anti(prev, s),
                None => quad::adaptive_gauss_legendre(|u| (c.f)(prev, u), s, t, DISPLACEMENT_TOL)?.0,
            },
        })
    }

    /// Whether the surface varies with the previous sojourn `T`.
    pub fn depends_on_prev(&self) -> bool {
        match self {
            Self::Constant(_) | Self::Hyperbolic { .. } | Self::Linear { .. } => false,
            Self::Table2d(t) => t.depends_on_prev(),
            Self::Custom(c) => c.prev_dependent,
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Self::Constant(c) => Some(*c),
            _ => None,
        }
    }
}

/// Jump amplitude `h(T)` as a function of the completed sojourn.
#[derive(Clone)]
pub enum Jump {
    Constant(f64),
    /// `b / (1 + a T)`.
    Hyperbolic { a: f64, b: f64 },
    /// `slope * T`.
    Linear { slope: f64 },
    /// Linear interpolation, flat outside.
    Table { grid: Vec<f64>, values: Vec<f64> },
    Custom(CurveFn),
}

impl fmt::Debug for Jump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(h) => write!(f, "Constant({h})"),
            Self::Hyperbolic { a, b } => write!(f, "Hyperbolic {{ a: {a}, b: {b} }}"),
            Self::Linear { slope } => write!(f, "Linear {{ slope: {slope} }}"),
            Self::Table { grid, .. } => write!(f, "Table({} nodes)", grid.len()),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Jump {
    pub fn table(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("jump table needs an increasing grid with one value per node".into()));
        }
        if grid[0] < 0.0 || values.iter().chain(&grid).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("jump table entries must be finite on t >= 0".into()));
        }
        Ok(Self::Table { grid, values })
    }

    pub fn value(&self, sojourn: f64) -> f64 {
        match self {
            Self::Constant(h) => *h,
            Self::Hyperbolic { a, b } => b / (1.0 + a * sojourn),
            Self::Linear { slope } => slope * sojourn,
            Self::Table { grid, values } => crate::interp::linear(grid, values, sojourn),
            Self::Custom(h) => h(sojourn),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Self::Constant(h) => Some(*h),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StateRegime {
    pub velocity: Velocity,
    pub jump: Jump,
}

/// Velocity surfaces and jump amplitudes of both states.
#[derive(Debug, Clone)]
pub struct RegimeSpec {
    pub states: [StateRegime; 2],
}

impl RegimeSpec {
    pub fn new(state0: StateRegime, state1: StateRegime) -> Self {
        Self { states: [state0, state1] }
    }

    /// Constant velocities `c_i` and jumps `h_i`.
    pub fn constant(c: [f64; 2], h: [f64; 2]) -> Self {
        Self::new(
            StateRegime { velocity: Velocity::Constant(c[0]), jump: Jump::Constant(h[0]) },
            StateRegime { velocity: Velocity::Constant(c[1]), jump: Jump::Constant(h[1]) },
        )
    }

    pub fn velocity(&self, state: State) -> &Velocity {
        &self.states[state.idx()].velocity
    }

    pub fn jump(&self, state: State) -> &Jump {
        &self.states[state.idx()].jump
    }

    pub fn as_constant(&self) -> Option<([f64; 2], [f64; 2])> {
        let c = [self.states[0].velocity.as_constant()?, self.states[1].velocity.as_constant()?];
        let h = [self.states[0].jump.as_constant()?, self.states[1].jump.as_constant()?];
        Some((c, h))
    }

    pub fn depends_on_prev(&self) -> bool {
        self.states.iter().any(|s| s.velocity.depends_on_prev())
    }

    /// Grid scan of `|c_i|` over `[0, t_max]^2`.
    pub fn check_bounded(&self, t_max: f64, bound: f64) -> Result<()> {
        let n = 200;
        for state in State::BOTH {
            let v = self.velocity(state);
            for a in 0..=n {
                let prev = t_max * a as f64 / n as f64;
                for b in 0..=n {
                    let t = t_max * b as f64 / n as f64;
                    let c = v.value(prev, t);
                    if !c.is_finite() || c.abs() > bound {
                        return Err(Error::InvalidParameter(format!(
                            "velocity of state {state} is {c} at T={prev}, t={t}, above bound {bound}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks `h_i(T) > -1` on `[0, t_max]`, as required for positive prices.
    pub fn check_jumps_above_minus_one(&self, t_max: f64) -> Result<()> {
        let n = 2000;
        for state in State::BOTH {
            for k in 0..=n {
                let t = t_max * k as f64 / n as f64;
                let h = self.jump(state).value(t);
                if !(1.0 + h > 0.0) {
                    return Err(Error::Positivity { time: t, factor: 1.0 + h });
                }
            }
        }
        Ok(())
    }
}

/// `l_i(T; s, t) = integral_s^t c_i(T, u - origin) du` on one segment.
pub fn segment_displacement(
    regime: &RegimeSpec,
    state: State,
    prev: f64,
    s: f64,
    t: f64,
    segment_origin: f64,
) -> Result<f64> {
    if !(segment_origin <= s && s <= t) {
        return Err(Error::Domain(format!("need origin <= s <= t, got {segment_origin}, {s}, {t}")));
    }
    regime.velocity(state).displacement(prev, s - segment_origin, t - segment_origin)
}

/// Gauss–Legendre rule for expectations over a sojourn law on
/// `[0, support_truncation]`, weights premultiplied by the density.
#[derive(Debug, Clone)]
pub struct TauAverager {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Mass the rule misses: `|1 - sum(weights)|`.
    pub tail_mass: f64,
}

impl TauAverager {
    pub fn new(dist: &SojournDistribution, n: usize) -> Self {
        let end = dist.support_truncation(TRUNCATION_EPS);
        let rule = if n == TAU_NODES { quad::gl(TAU_NODES).clone() } else { quad::GaussLegendre::new(n) };
        let (nodes, weights): (Vec<f64>, Vec<f64>) =
            rule.mapped(0.0, end).map(|(x, w)| (x, w * dist.density(x))).unzip();
        let tail_mass = (1.0 - weights.iter().sum::<f64>()).abs();
        if tail_mass > 1e-8 {
            warn!("sojourn quadrature misses mass {tail_mass:.3e}");
        }
        Self { nodes, weights, tail_mass }
    }

    pub fn expect<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * g(x)).sum()
    }

    pub fn try_expect<F: FnMut(f64) -> Result<f64>>(&self, mut g: F) -> Result<f64> {
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * g(x)?;
        }
        Ok(acc)
    }
}

/// Regime coefficients of one state averaged over the previous sojourn.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeMeans {
    pub t: Vec<f64>,
    /// `c_bar_i(t)`.
    pub c_bar: Vec<f64>,
    /// `l_bar_i(t) = E l_i(tau; t)`.
    pub l_bar: Vec<f64>,
    /// `E l_i(tau; t)^2`, used by the exact variance forcing.
    pub l_sq_bar: Vec<f64>,
    /// `h_i(t)`: the jump for a sojourn of length `t`.
    pub jump: Vec<f64>,
    pub tail_mass: f64,
}

/// Averages `c_i(tau, t)` and `l_i(tau; t)` over `tau ~ f_{1-i}`.
pub fn mean_regime_coefficients(
    regime: &RegimeSpec,
    state: State,
    other_state_dist: &SojournDistribution,
    t_grid: &[f64],
) -> Result<RegimeMeans> {
    if t_grid.iter().any(|&t| t < 0.0) || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("time grid must be nonnegative and increasing".into()));
    }
    let v = regime.velocity(state);
    let n = t_grid.len();
    let mut out = RegimeMeans {
        t: t_grid.to_vec(),
        c_bar: Vec::with_capacity(n),
        l_bar: Vec::with_capacity(n),
        l_sq_bar: Vec::with_capacity(n),
        jump: t_grid.iter().map(|&t| regime.jump(state).value(t)).collect(),
        tail_mass: 0.0,
    };
    if v.depends_on_prev() {
        let avg = TauAverager::new(other_state_dist, TAU_NODES);
        out.tail_mass = avg.tail_mass;
        for &t in t_grid {
            out.c_bar.push(avg.expect(|tau| v.value(tau, t)));
            if t == 0.0 {
                out.l_bar.push(0.0);
                out.l_sq_bar.push(0.0);
                continue;
            }
            let mut l1 = 0.0;
            let mut l2 = 0.0;
            for (&tau, &w) in avg.nodes.iter().zip(&avg.weights) {
                let l = v.displacement(tau, 0.0, t)?;
                l1 += w * l;
                l2 += w * l * l;
            }
            out.l_bar.push(l1);
            out.l_sq_bar.push(l2);
        }
    } else {
        for &t in t_grid {
            out.c_bar.push(v.value(0.0, t));
            let l = v.displacement(0.0, 0.0, t)?;
            out.l_bar.push(l);
            out.l_sq_bar.push(l * l);
        }
    }
    Ok(out)
}

/// Jump at one switching time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub exiting_state: State,
    /// Completed sojourn `T_n`.
    pub sojourn: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub flow: SwitchingFlow,
    pub sample_times: Vec<f64>,
    /// `X(t)` on `sample_times`.
    pub x: Vec<f64>,
    /// Continuous part of `X`, `integral_0^t` of the velocity.
    pub drift: Vec<f64>,
    /// `kappa(t) = prod (1 + h)` over switches up to `t`.
    pub kappa: Vec<f64>,
    pub state: Vec<State>,
    /// `(X(tau_n-), X(tau_n))` for every switch.
    pub switch_limits: Vec<(f64, f64)>,
    pub jump_log: Vec<JumpEvent>,
    /// Sojourn argument fed to the velocity of each segment.
    pub prev_sojourns_used: Vec<f64>,
}

fn check_sample_grid(grid: &[f64], horizon: f64) -> Result<()> {
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("sample grid must be nondecreasing".into()));
    }
    if let (Some(&a), Some(&b)) = (grid.first(), grid.last()) {
        if a < 0.0 || b > horizon {
            return Err(Error::OutOfRange { t: if a < 0.0 { a } else { b }, horizon });
        }
    }
    Ok(())
}

/// Simulates one path on `[0, horizon]` with stream `(seed, 0)`.
pub fn simulate_path(
    model: &SwitchingModel,
    regime: &RegimeSpec,
    horizon: f64,
    sample_grid: &[f64],
    seed: u64,
) -> Result<PathRecord> {
    let mut r = crate::rng::stream(seed, 0);
    simulate_path_with(model, regime, horizon, sample_grid, &mut r)
}

pub fn simulate_path_with(
    model: &SwitchingModel,
    regime: &RegimeSpec,
    horizon: f64,
    sample_grid: &[f64],
    rng: &mut StreamRng,
) -> Result<PathRecord> {
    check_sample_grid(sample_grid, horizon)?;
    let flow = generate_flow_with(model, horizon, rng)?;
    path_from_flow(flow, regime, sample_grid)
}

/// Evaluates `X`, its drift and `kappa` along a given flow.
pub fn path_from_flow(flow: SwitchingFlow, regime: &RegimeSpec, sample_grid: &[f64]) -> Result<PathRecord> {
    check_sample_grid(sample_grid, flow.horizon)?;
    let m = sample_grid.len();
    let mut rec = PathRecord {
        sample_times: sample_grid.to_vec(),
        x: Vec::with_capacity(m),
        drift: Vec::with_capacity(m),
        kappa: Vec::with_capacity(m),
        state: Vec::with_capacity(m),
        switch_limits: Vec::with_capacity(flow.switch_count()),
        jump_log: Vec::with_capacity(flow.switch_count()),
        prev_sojourns_used: Vec::with_capacity(flow.switch_count() + 1),
        flow: flow.clone(),
    };
    let mut drift0 = 0.0;
    let mut jumps = 0.0;
    let mut kappa = 1.0;
    let mut next = 0;
    for seg in flow.segments() {
        let v = regime.velocity(seg.state);
        rec.prev_sojourns_used.push(seg.prev_sojourn);
        while next < m && (sample_grid[next] < seg.end || (!seg.switched && sample_grid[next] <= seg.end)) {
            let d = drift0 + v.displacement(seg.prev_sojourn, 0.0, sample_grid[next] - seg.start)?;
            rec.drift.push(d);
            rec.x.push(d + jumps);
            rec.kappa.push(kappa);
            rec.state.push(seg.state);
            next += 1;
        }
        if seg.switched {
            drift0 += v.displacement(seg.prev_sojourn, 0.0, seg.len())?;
            let sojourn = flow.sojourns[seg.index];
            let h = regime.jump(seg.state).value(sojourn);
            let left = drift0 + jumps;
            jumps += h;
            kappa *= 1.0 + h;
            rec.switch_limits.push((left, drift0 + jumps));
            rec.jump_log.push(JumpEvent { time: seg.end, exiting_state: seg.state, sojourn, amplitude: h });
        }
    }
    Ok(rec)
}

/// Values of a path at one requested time, without storing the flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub x: f64,
    pub drift: f64,
    /// `sum ln(1 + h)`; NaN once a factor `1 + h <= 0` has occurred.
    pub log_kappa: f64,
    pub state: State,
    pub switches: usize,
    pub elapsed: f64,
}

/// Samples `X` at increasing `times` along one freshly drawn path.
///
/// Consumes the random stream exactly like [`generate_flow_with`] up to the
/// last requested time, so both routes see the same path for one stream.
pub fn sample_points(
    model: &SwitchingModel,
    regime: &RegimeSpec,
    times: &[f64],
    rng: &mut StreamRng,
) -> Result<Vec<PathPoint>> {
    let Some(&t_end) = times.last() else {
        return Ok(Vec::new());
    };
    check_sample_grid(times, t_end)?;
    let mut state = model.initial_state;
    let mut prev = match model.prev_sojourn {
        PrevSojourn::Sampled => model.dist(state.other()).sample(rng),
        PrevSojourn::Fixed(v) => v,
    };
    let mut out = Vec::with_capacity(times.len());
    let (mut start, mut drift0, mut jumps, mut log_kappa) = (0.0, 0.0, 0.0, 0.0);
    let mut switches = 0usize;
    let mut next = 0;
    loop {
        let sojourn = model.dist(state).sample(rng);
        let end = start + sojourn;
        let v = regime.velocity(state);
        while next < times.len() && times[next] < end {
            let d = drift0 + v.displacement(prev, 0.0, times[next] - start)?;
            out.push(PathPoint {
                x: d + jumps,
                drift: d,
                log_kappa,
                state,
                switches,
                elapsed: times[next] - start,
            });
            next += 1;
        }
        if next == times.len() {
            return Ok(out);
        }
        if switches >= model.max_switches {
            return Err(Error::Explosion { cap: model.max_switches, horizon: t_end });
        }
        drift0 += v.displacement(prev, 0.0, sojourn)?;
        let h = regime.jump(state).value(sojourn);
        jumps += h;
        log_kappa += if 1.0 + h > 0.0 { (1.0 + h).ln() } else { f64::NAN };
        switches += 1;
        start = end;
        prev = sojourn;
        state = state.other();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stats::{ks_two_sample_critical, weighted_ks_two_sample};
    use proptest::prelude::*;

    fn exp(rate: f64) -> SojournDistribution {
        SojournDistribution::exponential(rate).unwrap()
    }

    fn fig5() -> RegimeSpec {
        RegimeSpec::new(
            StateRegime { velocity: Velocity::Hyperbolic { a: 1.2 }, jump: Jump::Hyperbolic { a: 1.2, b: -0.05 } },
            StateRegime { velocity: Velocity::Hyperbolic { a: 0.6 }, jump: Jump::Hyperbolic { a: 0.6, b: -0.02 } },
        )
    }

    #[test]
    fn displacement_examples() {
        let r = RegimeSpec::constant([1.5, -0.5], [0.0, 0.0]);
        assert!((segment_displacement(&r, State::Zero, 0.3, 1.0, 1.4, 0.5).unwrap() - 0.6).abs() < 1e-15);
        let f5 = fig5();
        for t in [0.1, 1.0, 7.5] {
            let l = segment_displacement(&f5, State::Zero, 0.0, 0.0, t, 0.0).unwrap();
            assert!((l - (1.0 + 1.2 * t).ln()).abs() < 1e-14);
        }
        assert_eq!(segment_displacement(&f5, State::One, 0.2, 0.7, 0.7, 0.0).unwrap(), 0.0);
        assert!(segment_displacement(&f5, State::One, 0.2, 0.7, 0.6, 0.0).is_err());
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        let custom = Velocity::Custom(CustomVelocity {
            f: Arc::new(|prev, t| prev * (t * 3.0).cos() + 1.0 / (1.0 + t)),
            antiderivative: None,
            prev_dependent: true,
        });
        let got = custom.displacement(0.7, 0.2, 2.3).unwrap();
        let want = 0.7 * ((6.9f64).sin() - (0.6f64).sin()) / 3.0 + (3.3f64 / 1.2).ln();
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn table2d_integral_is_exact() {
        let tab = Table2d::new(vec![0.0, 1.0], vec![0.0, 0.5, 2.0], vec![vec![1.0, 2.0, 0.0], vec![3.0, 3.0, 3.0]]).unwrap();
        let v = Velocity::Table2d(tab);
        // half-way between rows at T = 0.5
        let want = 0.5 * (0.75 + 0.5 * 1.5 * 2.0) + 0.5 * 3.0 * 2.0 + 0.5 * 0.5 * 0.0 + 0.5 * 3.0 * 1.0;
        let got = v.displacement(0.5, 0.0, 3.0).unwrap();
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        let fine = quad::integrate(|u| v.value(0.5, u), 0.0, 0.5, 1e-14)
            + quad::integrate(|u| v.value(0.5, u), 0.5, 2.0, 1e-14)
            + quad::integrate(|u| v.value(0.5, u), 2.0, 3.0, 1e-14);
        assert!((got - fine).abs() < 1e-12);
        assert!(v.depends_on_prev());
    }

    #[test]
    fn regime_means() {
        let r = RegimeSpec::constant([1.2, 0.6], [-0.05, -0.02]);
        let m = mean_regime_coefficients(&r, State::Zero, &exp(15.0), &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(m.c_bar, vec![1.2; 3]);
        assert_eq!(m.l_bar[0], 0.0);
        assert!((m.l_bar[2] - 1.2).abs() < 1e-15);

        let tau_velocity = RegimeSpec::new(
            StateRegime {
                velocity: Velocity::Custom(CustomVelocity {
                    f: Arc::new(|prev, _| prev),
                    antiderivative: Some(Arc::new(|prev, t| prev * t)),
                    prev_dependent: true,
                }),
                jump: Jump::Constant(0.0),
            },
            StateRegime { velocity: Velocity::Constant(0.0), jump: Jump::Constant(0.0) },
        );
        let mu = 4.0;
        let m = mean_regime_coefficients(&tau_velocity, State::Zero, &exp(mu), &[0.0, 2.0]).unwrap();
        // truncating the support at 1e-10 tail mass costs about 6e-10 here
        assert!((m.c_bar[0] - 1.0 / mu).abs() < 1e-8);
        assert!((m.l_bar[1] - 2.0 / mu).abs() < 1e-8);
        assert!((m.l_sq_bar[1] - 4.0 * 2.0 / (mu * mu)).abs() < 1e-7);
        assert_eq!(m.l_bar[0], 0.0);
        assert!(m.tail_mass < 1e-8);
    }

    #[test]
    fn classic_telegraph_path() {
        let model = SwitchingModel::new(exp(3.0), exp(3.0));
        let r = RegimeSpec::constant([1.0, -1.0], [0.0, 0.0]);
        let grid: Vec<f64> = (0..=400).map(|k| k as f64 * 0.01).collect();
        let p = simulate_path(&model, &r, 4.0, &grid, 9).unwrap();
        assert_eq!(p.x[0], 0.0);
        for k in 1..grid.len() {
            let (a, b) = (grid[k - 1], grid[k]);
            if p.flow.count_until(a) == p.flow.count_until(b) && p.flow.switch_times.iter().all(|&t| t != a) {
                let slope = (p.x[k] - p.x[k - 1]) / (b - a);
                let want = if p.state[k] == State::Zero { 1.0 } else { -1.0 };
                assert!((slope - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn no_switch_path_is_first_displacement() {
        let model = SwitchingModel::new(exp(1e-9), exp(1e-9)).with_prev_sojourn(PrevSojourn::Fixed(0.4));
        let tab = Table2d::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![vec![0.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let r = RegimeSpec::new(
            StateRegime { velocity: Velocity::Table2d(tab), jump: Jump::Constant(0.1) },
            StateRegime { velocity: Velocity::Constant(0.0), jump: Jump::Constant(0.0) },
        );
        let p = simulate_path(&model, &r, 1.0, &[0.5, 1.0], 1).unwrap();
        assert!(p.jump_log.is_empty());
        for (k, &t) in [0.5, 1.0].iter().enumerate() {
            assert!((p.x[k] - r.velocity(State::Zero).displacement(0.4, 0.0, t).unwrap()).abs() < 1e-15);
        }
        assert_eq!(p.prev_sojourns_used, vec![0.4]);
    }

    #[test]
    fn refinement_does_not_change_values() {
        let model = SwitchingModel::new(exp(4.0), exp(2.0));
        let coarse: Vec<f64> = (0..=10).map(|k| k as f64 * 0.3).collect();
        let fine: Vec<f64> = (0..=30).map(|k| k as f64 * 0.1).collect();
        let a = simulate_path(&model, &fig5(), 3.0, &coarse, 77).unwrap();
        let b = simulate_path(&model, &fig5(), 3.0, &fine, 77).unwrap();
        for (k, &t) in coarse.iter().enumerate() {
            let j = fine.iter().position(|&u| (u - t).abs() < 1e-12).unwrap();
            assert!((a.x[k] - b.x[j]).abs() < 1e-13);
        }
    }

    #[test]
    fn fast_sampler_agrees_with_full_path() {
        let model = SwitchingModel::new(exp(4.0), exp(2.0));
        let times = [0.25, 1.0, 2.5];
        for k in 0..50 {
            let p = simulate_path_with(&model, &fig5(), 2.5, &times, &mut rng::stream(3, k)).unwrap();
            let q = sample_points(&model, &fig5(), &times, &mut rng::stream(3, k)).unwrap();
            for j in 0..times.len() {
                assert!((p.x[j] - q[j].x).abs() < 1e-13);
                assert!((p.kappa[j] - q[j].log_kappa.exp()).abs() < 1e-12);
                assert_eq!(p.state[j], q[j].state);
            }
        }
    }

    #[test]
    fn first_switch_recursion_in_law() {
        // X_0(t) = l_0(T_0; t) 1{tau_1 > t} + [l_0(T_0; tau_1) + h_0(tau_1) + X_1'(t - tau_1)] 1{tau_1 <= t}
        // where X_1' restarts in state 1 with previous sojourn tau_1.
        let model = SwitchingModel::new(exp(3.0), exp(5.0));
        let regime = RegimeSpec::new(
            StateRegime { velocity: Velocity::Hyperbolic { a: 1.2 }, jump: Jump::Linear { slope: -0.1 } },
            StateRegime {
                velocity: Velocity::Custom(CustomVelocity {
                    f: Arc::new(|prev, t| -0.5 - prev + 0.2 * t),
                    antiderivative: Some(Arc::new(|prev, t| (-0.5 - prev) * t + 0.1 * t * t)),
                    prev_dependent: true,
                }),
                jump: Jump::Constant(0.05),
            },
        );
        let t = 1.0;
        let n = 10_000;
        let direct = rng::replicate(n, 100, |r| sample_points(&model, &regime, &[t], r).unwrap()[0].x);
        let assembled = rng::replicate(n, 200, |r| {
            let t0 = model.dist(State::One).sample(r);
            let tau1 = model.dist(State::Zero).sample(r);
            let v0 = regime.velocity(State::Zero);
            if tau1 > t {
                return v0.displacement(t0, 0.0, t).unwrap();
            }
            let restart = model.clone().with_initial_state(State::One).with_prev_sojourn(PrevSojourn::Fixed(tau1));
            let rest = sample_points(&restart, &regime, &[t - tau1], r).unwrap()[0].x;
            v0.displacement(t0, 0.0, tau1).unwrap() + regime.jump(State::Zero).value(tau1) + rest
        });
        let w = vec![1.0; n];
        let (d, _, _) = weighted_ks_two_sample(&direct, &w, &assembled, &w);
        assert!(d < ks_two_sample_critical(n as f64, n as f64, 0.01), "D = {d}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn path_invariants(seed in any::<u64>(), r0 in 0.5f64..8.0, r1 in 0.5f64..8.0) {
            let model = SwitchingModel::new(exp(r0), exp(r1));
            let grid: Vec<f64> = (0..=50).map(|k| k as f64 * 0.04).collect();
            let p = simulate_path(&model, &fig5(), 2.0, &grid, seed).unwrap();
            for (k, ev) in p.jump_log.iter().enumerate() {
                let (l, rgt) = p.switch_limits[k];
                prop_assert!((rgt - l - ev.amplitude).abs() < 1e-15);
                // the exiting state is the one occupied just before the switch
                let before = p.flow.state_at(ev.time - 0.5 * p.flow.sojourns[k]).unwrap().state;
                prop_assert_eq!(ev.exiting_state, before);
                prop_assert_eq!(ev.sojourn, p.flow.sojourns[k]);
            }
            prop_assert_eq!(p.prev_sojourns_used.len(), p.flow.switch_count() + 1);
            // derivative between switches equals the velocity
            for seg in p.flow.segments() {
                let len = seg.len();
                if len > 1e-3 {
                    let mid = seg.start + 0.5 * len;
                    let h = 1e-6 * len;
                    let v = fig5().velocity(seg.state).clone();
                    let d = (v.displacement(seg.prev_sojourn, 0.0, mid + h - seg.start).unwrap()
                        - v.displacement(seg.prev_sojourn, 0.0, mid - h - seg.start).unwrap()) / (2.0 * h);
                    prop_assert!((d - v.value(seg.prev_sojourn, mid - seg.start)).abs() < 1e-6);
                }
            }
        }
    }
}
