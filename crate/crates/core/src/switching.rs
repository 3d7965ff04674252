//! Two-state semi-Markov switching: sojourn laws, conditional survival and
//! generation of the switching flow `tau_1 < tau_2 < ...`.
//!
//! Under `P_i` the first sojourn is drawn from the law of state `i`, the next
//! from the law of state `1 - i`, and so on. The velocity regime entered at a
//! switch is keyed by the sojourn that just ended, so the flow also carries a
//! virtual previous sojourn `T_0` for the very first segment.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::quad;
use crate::rng::{self, StreamRng};

/// Default probability mass left beyond [`SojournDistribution::support_truncation`].
pub const TRUNCATION_EPS: f64 = 1e-10;

/// Default cap on the number of switches generated for one flow.
pub const DEFAULT_MAX_SWITCHES: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum State {
    Zero,
    One,
}

impl State {
    pub const BOTH: [State; 2] = [State::Zero, State::One];

    #[inline]
    pub fn idx(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn other(self) -> State {
        match self {
            State::Zero => State::One,
            State::One => State::Zero,
        }
    }

    pub fn from_index(i: usize) -> Option<State> {
        match i {
            0 => Some(State::Zero),
            1 => Some(State::One),
            _ => None,
        }
    }

    /// State occupied after `n` switches starting from `self`.
    #[inline]
    pub fn after(self, n: usize) -> State {
        if n % 2 == 0 {
            self
        } else {
            self.other()
        }
    }

    /// `(-1)^i`.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            State::Zero => 1.0,
            State::One => -1.0,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.idx())
    }
}

pub type HazardFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Survival law given on a time grid.
///
/// Without a hazard function the log-survival is interpolated linearly
/// between nodes (piecewise-constant hazard). With one, the nodes store the
/// exact cumulative hazard and values in between are integrated from it.
#[derive(Clone)]
pub struct TabulatedSurvival {
    times: Vec<f64>,
    cum_hazard: Vec<f64>,
    hazard: Option<HazardFn>,
}

impl fmt::Debug for TabulatedSurvival {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TabulatedSurvival")
            .field("nodes", &self.times.len())
            .field("t_max", &self.times.last())
            .field("exact_hazard", &self.hazard.is_some())
            .finish()
    }
}

impl TabulatedSurvival {
    /// Survival column must start at `(0, 1)`, be strictly decreasing and
    /// stay positive.
    pub fn from_table(times: Vec<f64>, survival: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times.len() != survival.len() {
            return Err(Error::InvalidParameter("table needs >= 2 rows of equal length".into()));
        }
        if times[0] != 0.0 || survival[0] != 1.0 {
            return Err(Error::InvalidParameter("table must start at t=0 with survival 1".into()));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidParameter("table times must be strictly increasing".into()));
            }
        }
        for w in survival.windows(2) {
            if !(w[1] < w[0]) || w[1] <= 0.0 {
                return Err(Error::InvalidParameter(
                    "table survival must be strictly decreasing and positive".into(),
                ));
            }
        }
        let cum_hazard = survival.iter().map(|s| -s.ln()).collect();
        Ok(Self { times, cum_hazard, hazard: None })
    }

    /// Law with hazard `alpha`; cumulative hazard tabulated on `times` by
    /// 8-point Gauss–Legendre per cell.
    pub fn from_hazard(times: Vec<f64>, hazard: HazardFn) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::InvalidParameter("hazard grid must start at 0 with >= 2 nodes".into()));
        }
        let rule = quad::gl(8);
        let mut cum = Vec::with_capacity(times.len());
        cum.push(0.0);
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidParameter("hazard grid must be strictly increasing".into()));
            }
            let inc = rule.integrate(w[0], w[1], |t| hazard(t));
            if !(inc >= 0.0) {
                return Err(Error::InvalidParameter(format!("negative hazard on [{}, {}]", w[0], w[1])));
            }
            cum.push(cum.last().unwrap() + inc);
        }
        Ok(Self { times, cum_hazard: cum, hazard: Some(hazard) })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn log_survival_nodes(&self) -> Vec<f64> {
        self.cum_hazard.iter().map(|h| -h).collect()
    }

    fn cell(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&x| x <= t);
        k.saturating_sub(1).min(self.times.len() - 2)
    }

    fn last_cell_hazard(&self) -> f64 {
        let n = self.times.len();
        (self.cum_hazard[n - 1] - self.cum_hazard[n - 2]) / (self.times[n - 1] - self.times[n - 2])
    }

    fn cumulative_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let n = self.times.len();
        match &self.hazard {
            Some(alpha) => {
                let k = if t >= self.times[n - 1] { n - 1 } else { self.cell(t) };
                let t0 = self.times[k];
                if t == t0 {
                    return self.cum_hazard[k];
                }
                let extra = if t - t0 <= self.times[1] - self.times[0] + 1e-12 {
                    quad::gl(8).integrate(t0, t, |u| alpha(u))
                } else {
                    quad::integrate(|u| alpha(u), t0, t, 1e-13)
                };
                self.cum_hazard[k] + extra
            }
            None => {
                if t >= self.times[n - 1] {
                    return self.cum_hazard[n - 1] + self.last_cell_hazard() * (t - self.times[n - 1]);
                }
                let k = self.cell(t);
                let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
                self.cum_hazard[k] + w * (self.cum_hazard[k + 1] - self.cum_hazard[k])
            }
        }
    }

    fn hazard(&self, t: f64) -> f64 {
        if let Some(alpha) = &self.hazard {
            return alpha(t.max(0.0));
        }
        let n = self.times.len();
        if t >= self.times[n - 1] {
            return self.last_cell_hazard();
        }
        let k = self.cell(t.max(0.0));
        (self.cum_hazard[k + 1] - self.cum_hazard[k]) / (self.times[k + 1] - self.times[k])
    }

    fn inverse_cumulative_hazard(&self, target: f64) -> f64 {
        let n = self.times.len();
        if self.hazard.is_none() {
            if target >= self.cum_hazard[n - 1] {
                return self.times[n - 1] + (target - self.cum_hazard[n - 1]) / self.last_cell_hazard();
            }
            let k = self.cum_hazard.partition_point(|&h| h <= target).saturating_sub(1);
            let w = (target - self.cum_hazard[k]) / (self.cum_hazard[k + 1] - self.cum_hazard[k]);
            return self.times[k] + w * (self.times[k + 1] - self.times[k]);
        }
        let (lo, hi) = if target >= self.cum_hazard[n - 1] {
            let mut hi = self.times[n - 1] * 2.0;
            while self.cumulative_hazard(hi) < target {
                hi *= 2.0;
                if !hi.is_finite() {
                    return f64::INFINITY;
                }
            }
            (self.times[n - 1], hi)
        } else {
            let k = self.cum_hazard.partition_point(|&h| h <= target).saturating_sub(1);
            (self.times[k], self.times[k + 1])
        };
        solve_monotone(|t| self.cumulative_hazard(t) - target, |t| self.hazard(t), lo, hi)
    }
}

/// Law of one state's sojourn time.
#[derive(Debug, Clone)]
pub enum SojournDistribution {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Weibull { shape: f64, scale: f64 },
    Tabulated(TabulatedSurvival),
}

impl SojournDistribution {
    pub fn exponential(rate: f64) -> Result<Self> {
        positive("rate", rate)?;
        Ok(Self::Exponential { rate })
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        positive("shape", shape)?;
        positive("rate", rate)?;
        Ok(Self::Gamma { shape, rate })
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self> {
        positive("shape", shape)?;
        positive("scale", scale)?;
        Ok(Self::Weibull { shape, scale })
    }

    pub fn table(times: Vec<f64>, survival: Vec<f64>) -> Result<Self> {
        Ok(Self::Tabulated(TabulatedSurvival::from_table(times, survival)?))
    }

    /// Rate when the law is exponential.
    pub fn exponential_rate(&self) -> Option<f64> {
        match self {
            Self::Exponential { rate } => Some(*rate),
            _ => None,
        }
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => rate * t,
            Self::Weibull { shape, scale } => (t / scale).powf(*shape),
            Self::Gamma { shape, rate } => {
                let lower = gamma_lr(*shape, rate * t);
                if lower < 0.5 {
                    -(-lower).ln_1p()
                } else {
                    -gamma_ur(*shape, rate * t).ln()
                }
            }
            Self::Tabulated(tab) => tab.cumulative_hazard(t),
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match self {
            Self::Gamma { shape, rate } => gamma_ur(*shape, rate * t),
            _ => (-self.cumulative_hazard(t)).exp(),
        }
    }

    pub fn density(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => rate * (-rate * t).exp(),
            Self::Gamma { shape, rate } => gamma_density(*shape, *rate, t),
            Self::Weibull { .. } | Self::Tabulated(_) => self.hazard(t) * self.survival(t),
        }
    }

    pub fn hazard(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self {
            Self::Exponential { rate } => *rate,
            Self::Weibull { shape, scale } => shape / scale * (t / scale).powf(shape - 1.0),
            Self::Gamma { shape, rate } => {
                let s = self.survival(t);
                if s < 1e-280 {
                    // hazard of the gamma law tends to its rate
                    *rate
                } else {
                    gamma_density(*shape, *rate, t) / s
                }
            }
            Self::Tabulated(tab) => tab.hazard(t),
        }
    }

    /// `inf{t : 1 - survival(t) >= u}` for `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        self.inverse_cumulative_hazard(-(-u).ln_1p())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng::open01(rng))
    }

    /// Time beyond which the remaining mass is at most `eps`.
    pub fn support_truncation(&self, eps: f64) -> f64 {
        self.inverse_cumulative_hazard(-eps.ln())
    }

    fn inverse_cumulative_hazard(&self, target: f64) -> f64 {
        if target <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => target / rate,
            Self::Weibull { shape, scale } => scale * target.powf(1.0 / shape),
            Self::Gamma { shape, rate } => {
                let mut hi = (shape / rate).max(1e-12);
                while self.cumulative_hazard(hi) < target {
                    hi *= 2.0;
                }
                solve_monotone(|t| self.cumulative_hazard(t) - target, |t| self.hazard(t), 0.0, hi)
            }
            Self::Tabulated(tab) => tab.inverse_cumulative_hazard(target),
        }
    }

    /// `integral_a^b survival(v) dv`.
    pub fn integrated_survival(&self, a: f64, b: f64) -> f64 {
        match self {
            Self::Exponential { rate } => ((-rate * a).exp() - (-rate * b).exp()) / rate,
            _ => quad::integrate(|v| self.survival(v), a, b, 1e-16_f64.max(1e-15 * (b - a))),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Gamma { shape, rate } => shape / rate,
            Self::Weibull { shape, scale } => scale * ln_gamma(1.0 + 1.0 / shape).exp(),
            Self::Tabulated(_) => {
                let end = self.support_truncation(1e-14);
                quad::integrate(|v| self.survival(v), 0.0, end, 1e-12)
            }
        }
    }

    /// Conditional survival `P(T > t | T > s)`; see [`conditional_survival`].
    pub fn conditional_survival(&self, t: f64, s: f64) -> Result<f64> {
        conditional_survival(self, t, s)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

fn gamma_density(shape: f64, rate: f64, t: f64) -> f64 {
    if t == 0.0 {
        return if shape < 1.0 {
            f64::INFINITY
        } else if shape == 1.0 {
            rate
        } else {
            0.0
        };
    }
    (shape * rate.ln() + (shape - 1.0) * t.ln() - rate * t - ln_gamma(shape)).exp()
}

/// Safeguarded Newton on an increasing function with root in `[lo, hi]`.
fn solve_monotone<F, D>(f: F, df: D, mut lo: f64, mut hi: f64) -> f64
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = df(x);
        let newton = x - fx / d;
        let next = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) || hi - lo <= 1e-15 * hi.abs() {
            return next;
        }
        x = next;
    }
    x
}

/// `P(T > t | T > s) = survival(t) / survival(s)` for `0 <= s < t`.
pub fn conditional_survival(dist: &SojournDistribution, t: f64, s: f64) -> Result<f64> {
    if !(s >= 0.0 && s < t) {
        return Err(Error::Domain(format!("conditional survival needs 0 <= s < t, got s={s}, t={t}")));
    }
    let ss = dist.survival(s);
    if ss <= 0.0 {
        return Err(Error::DegenerateCondition(format!("survival({s}) = 0")));
    }
    Ok(dist.survival(t) / ss)
}

/// Inverse-CDF realisation of one sojourn.
pub fn sample_sojourn(dist: &SojournDistribution, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("uniform variate must lie in (0, 1), got {u}")));
    }
    Ok(dist.quantile(u))
}

/// How the virtual sojourn `T_0` preceding time 0 is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrevSojourn {
    /// Drawn from the law of the state opposite to the initial one.
    Sampled,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct SwitchingModel {
    /// Sojourn laws in state 0 and state 1.
    pub dists: [SojournDistribution; 2],
    pub initial_state: State,
    pub prev_sojourn: PrevSojourn,
    pub max_switches: usize,
}

impl SwitchingModel {
    pub fn new(dist0: SojournDistribution, dist1: SojournDistribution) -> Self {
        Self {
            dists: [dist0, dist1],
            initial_state: State::Zero,
            prev_sojourn: PrevSojourn::Sampled,
            max_switches: DEFAULT_MAX_SWITCHES,
        }
    }

    pub fn with_initial_state(mut self, state: State) -> Self {
        self.initial_state = state;
        self
    }

    pub fn with_prev_sojourn(mut self, prev: PrevSojourn) -> Self {
        self.prev_sojourn = prev;
        self
    }

    pub fn with_max_switches(mut self, cap: usize) -> Self {
        self.max_switches = cap;
        self
    }

    pub fn dist(&self, state: State) -> &SojournDistribution {
        &self.dists[state.idx()]
    }
}

/// Realised switching times on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingFlow {
    pub initial_state: State,
    pub prev_sojourn_t0: f64,
    /// `tau_1 < tau_2 < ... <= horizon`.
    pub switch_times: Vec<f64>,
    /// `T_n = tau_n - tau_{n-1}`, aligned with `switch_times`.
    pub sojourns: Vec<f64>,
    /// Full length of the sojourn in progress at the horizon (it ends after
    /// the horizon).
    pub censored_sojourn: f64,
    pub horizon: f64,
}

/// Position of a flow at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateAt {
    pub state: State,
    pub switches: usize,
    pub last_switch: f64,
    pub elapsed: f64,
}

/// One inter-switch piece of a flow, truncated at the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub index: usize,
    pub state: State,
    pub start: f64,
    pub end: f64,
    /// Sojourn that preceded this segment (`T_0` for the first).
    pub prev_sojourn: f64,
    /// Whether the segment ends with a switch inside the horizon.
    pub switched: bool,
}

impl Segment {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl SwitchingFlow {
    pub fn switch_count(&self) -> usize {
        self.switch_times.len()
    }

    /// `N(t)`: number of switches in `[0, t]`.
    pub fn count_until(&self, t: f64) -> usize {
        self.switch_times.partition_point(|&tau| tau <= t)
    }

    pub fn state_at(&self, t: f64) -> Result<StateAt> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::OutOfRange { t, horizon: self.horizon });
        }
        let n = self.count_until(t);
        let last = if n == 0 { 0.0 } else { self.switch_times[n - 1] };
        Ok(StateAt { state: self.initial_state.after(n), switches: n, last_switch: last, elapsed: t - last })
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        let n = self.switch_times.len();
        (0..=n).map(move |k| {
            let start = if k == 0 { 0.0 } else { self.switch_times[k - 1] };
            let (end, switched) = if k < n { (self.switch_times[k], true) } else { (self.horizon, false) };
            let prev = if k == 0 { self.prev_sojourn_t0 } else { self.sojourns[k - 1] };
            Segment { index: k, state: self.initial_state.after(k), start, end, prev_sojourn: prev, switched }
        })
    }
}

/// Generates a flow on `[0, horizon]` using stream `(seed, 0)`.
pub fn generate_flow(model: &SwitchingModel, horizon: f64, seed: u64) -> Result<SwitchingFlow> {
    let mut r = rng::stream(seed, 0);
    generate_flow_with(model, horizon, &mut r)
}

pub fn generate_flow_with(model: &SwitchingModel, horizon: f64, rng: &mut StreamRng) -> Result<SwitchingFlow> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    let start = model.initial_state;
    let t0 = match model.prev_sojourn {
        PrevSojourn::Sampled => model.dist(start.other()).sample(rng),
        PrevSojourn::Fixed(v) => v,
    };
    let mut switch_times = Vec::new();
    let mut sojourns = Vec::new();
    let mut t = 0.0;
    let mut state = start;
    loop {
        let sojourn = model.dist(state).sample(rng);
        let next = t + sojourn;
        if next > horizon {
            return Ok(SwitchingFlow {
                initial_state: start,
                prev_sojourn_t0: t0,
                switch_times,
                sojourns,
                censored_sojourn: sojourn,
                horizon,
            });
        }
        if switch_times.len() >= model.max_switches {
            return Err(Error::Explosion { cap: model.max_switches, horizon });
        }
        switch_times.push(next);
        sojourns.push(sojourn);
        t = next;
        state = state.other();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn laws() -> Vec<SojournDistribution> {
        vec![
            SojournDistribution::exponential(5.0).unwrap(),
            SojournDistribution::gamma(2.5, 3.0).unwrap(),
            SojournDistribution::gamma(0.7, 1.5).unwrap(),
            SojournDistribution::weibull(1.7, 0.4).unwrap(),
            SojournDistribution::weibull(0.6, 1.2).unwrap(),
            SojournDistribution::table(vec![0.0, 0.2, 0.5, 1.0, 2.0], vec![1.0, 0.7, 0.4, 0.15, 0.02]).unwrap(),
        ]
    }

    #[test]
    fn conditional_survival_of_exponential() {
        let d = SojournDistribution::exponential(5.0).unwrap();
        let v = conditional_survival(&d, 0.3, 0.1).unwrap();
        assert!((v - 0.367_879_441_171_442_33).abs() < 1e-15);
        for s in [0.0, 0.4, 2.0] {
            let v = conditional_survival(&d, s + 0.7, s).unwrap();
            assert!((v - d.survival(0.7)).abs() < 1e-14);
        }
        let near = conditional_survival(&d, 0.5 + 1e-12, 0.5).unwrap();
        assert!((near - 1.0).abs() < 1e-10);
    }

    #[test]
    fn conditional_survival_errors() {
        let d = SojournDistribution::exponential(1.0).unwrap();
        assert!(matches!(conditional_survival(&d, 0.3, 0.3), Err(Error::Domain(_))));
        assert!(matches!(conditional_survival(&d, 0.3, 0.5), Err(Error::Domain(_))));
        let far = SojournDistribution::exponential(1000.0).unwrap();
        assert!(matches!(conditional_survival(&far, 2.0, 1.0), Err(Error::DegenerateCondition(_))));
    }

    #[test]
    fn conditional_survival_identity_on_grid() {
        for d in laws() {
            for i in 0..20 {
                for j in (i + 1)..20 {
                    let (s, t) = (0.1 * i as f64, 0.1 * j as f64);
                    let v = conditional_survival(&d, t, s).unwrap();
                    assert!((v * d.survival(s) - d.survival(t)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn exponential_quantiles() {
        let d = SojournDistribution::exponential(2.0).unwrap();
        assert!((sample_sojourn(&d, 0.5).unwrap() - 0.346_573_590_279_972_64).abs() < 1e-15);
        assert!(sample_sojourn(&d, 1e-300).unwrap() < 1e-299);
        let t_star = 0.83;
        let u = 1.0 - (-2.0f64 * t_star).exp();
        assert!((sample_sojourn(&d, u).unwrap() - t_star).abs() < 1e-14);
        assert!(sample_sojourn(&d, 0.0).is_err() && sample_sojourn(&d, 1.0).is_err());
    }

    #[test]
    fn distribution_invariants() {
        for d in laws() {
            assert_eq!(d.survival(0.0), 1.0);
            let mut prev = 1.0;
            for k in 1..400 {
                let t = 0.01 * k as f64;
                let s = d.survival(t);
                assert!(s <= prev + 1e-15, "{d:?} not monotone at {t}");
                prev = s;
                // density = -dS/dt by central differences; table kinks excluded
                if matches!(d, SojournDistribution::Tabulated(_)) {
                    continue;
                }
                let h = 1e-5 * t.max(0.01);
                let fd = (d.survival(t - h) - d.survival(t + h)) / (2.0 * h);
                let f = d.density(t);
                assert!((fd - f).abs() <= 1e-6 * f.max(1e-3), "{d:?} density at {t}: {f} vs {fd}");
                assert!((d.hazard(t) * s - f).abs() <= 1e-12 * f.max(1.0));
            }
            let end = d.support_truncation(TRUNCATION_EPS);
            assert!(d.survival(end) <= TRUNCATION_EPS * (1.0 + 1e-8));
            assert!(d.survival(end * 0.999) > TRUNCATION_EPS * 0.5);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for d in laws() {
            for &u in &[1e-9, 0.01, 0.3, 0.5, 0.9, 0.999] {
                let t = d.quantile(u);
                let cdf = 1.0 - d.survival(t);
                assert!((cdf - u).abs() < 1e-9 * u.max(1e-3), "{d:?}: u={u} t={t} cdf={cdf}");
            }
        }
    }

    #[test]
    fn sampler_passes_ks_for_every_law() {
        for (k, d) in laws().into_iter().enumerate() {
            let mut r = rng::stream(11, k as u64);
            let xs: Vec<f64> = (0..100_000).map(|_| d.sample(&mut r)).collect();
            let dstat = crate::stats::ks_statistic(&xs, |t| 1.0 - d.survival(t));
            let crit = crate::stats::ks_critical(xs.len() as f64, 0.01);
            assert!(dstat < crit, "{d:?}: D={dstat} crit={crit}");
        }
    }

    #[test]
    fn tabulated_from_hazard_is_exact_at_nodes() {
        let grid: Vec<f64> = (0..=100).map(|k| 0.02 * k as f64).collect();
        let tab = TabulatedSurvival::from_hazard(grid.clone(), Arc::new(|t| 1.0 + t)).unwrap();
        for (t, ls) in grid.iter().zip(tab.log_survival_nodes()) {
            assert!((ls + t + t * t / 2.0).abs() < 1e-12);
        }
        let d = SojournDistribution::Tabulated(tab);
        assert!((d.survival(0.517) - (-0.517f64 - 0.517 * 0.517 / 2.0).exp()).abs() < 1e-13);
        assert!((d.survival(3.1) - (-3.1f64 - 3.1 * 3.1 / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn table_validation() {
        assert!(SojournDistribution::table(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(SojournDistribution::table(vec![0.0, 1.0], vec![0.9, 0.5]).is_err());
        assert!(SojournDistribution::table(vec![0.0, 1.0, 0.5], vec![1.0, 0.5, 0.2]).is_err());
        assert!(SojournDistribution::exponential(-1.0).is_err());
    }

    #[test]
    fn flow_alternates_and_is_deterministic() {
        let m = SwitchingModel::new(
            SojournDistribution::exponential(5.0).unwrap(),
            SojournDistribution::exponential(2.0).unwrap(),
        );
        let a = generate_flow(&m, 10.0, 42).unwrap();
        let b = generate_flow(&m, 10.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.censored_sojourn > a.horizon - a.switch_times.last().copied().unwrap_or(0.0));
        let fixed = m.clone().with_prev_sojourn(PrevSojourn::Fixed(0.25));
        assert_eq!(generate_flow(&fixed, 1.0, 1).unwrap().prev_sojourn_t0, 0.25);
    }

    #[test]
    fn horizon_before_first_switch_gives_empty_flow() {
        let m = SwitchingModel::new(
            SojournDistribution::exponential(1e-6).unwrap(),
            SojournDistribution::exponential(1e-6).unwrap(),
        );
        let f = generate_flow(&m, 1e-3, 3).unwrap();
        assert!(f.switch_times.is_empty());
        assert_eq!(f.segments().count(), 1);
    }

    #[test]
    fn explosion_guard() {
        let m = SwitchingModel::new(
            SojournDistribution::exponential(1e3).unwrap(),
            SojournDistribution::exponential(1e3).unwrap(),
        )
        .with_max_switches(100);
        assert!(matches!(generate_flow(&m, 10.0, 0), Err(Error::Explosion { cap: 100, .. })));
    }

    #[test]
    fn state_at_conventions() {
        let flow = SwitchingFlow {
            initial_state: State::Zero,
            prev_sojourn_t0: 0.1,
            switch_times: vec![0.4, 0.9],
            sojourns: vec![0.4, 0.5],
            censored_sojourn: 0.6,
            horizon: 1.0,
        };
        let s = flow.state_at(0.0).unwrap();
        assert_eq!((s.state, s.elapsed), (State::Zero, 0.0));
        let s = flow.state_at(0.39).unwrap();
        assert_eq!(s.state, State::Zero);
        assert!((s.elapsed - 0.39).abs() < 1e-15);
        let s = flow.state_at(0.4).unwrap();
        assert_eq!((s.state, s.elapsed, s.switches), (State::One, 0.0, 1));
        let s = flow.state_at(0.95).unwrap();
        assert_eq!(s.state, State::Zero);
        assert!((s.elapsed - 0.05).abs() < 1e-15);
        assert!(flow.state_at(1.01).is_err());
        assert!(flow.state_at(-0.1).is_err());
    }

    #[test]
    fn equal_rate_switch_counts_are_poisson() {
        let lambda = 5.0;
        let horizon = 10.0;
        let m = SwitchingModel::new(
            SojournDistribution::exponential(lambda).unwrap(),
            SojournDistribution::exponential(lambda).unwrap(),
        );
        let reps = 10_000;
        let counts: Vec<usize> = (0..reps)
            .map(|k| {
                let mut r = rng::stream(2024, k);
                generate_flow_with(&m, horizon, &mut r).unwrap().switch_count()
            })
            .collect();
        let mean = counts.iter().sum::<usize>() as f64 / reps as f64;
        let se = (lambda * horizon / reps as f64).sqrt();
        assert!((mean - 50.0).abs() < 3.0 * se, "mean {mean}");

        // chi-square against Poisson(50), tails pooled so every bin expects >= 5
        let pois = |k: usize| {
            (-(lambda * horizon) + k as f64 * (lambda * horizon).ln() - ln_gamma(k as f64 + 1.0)).exp()
        };
        let (lo, hi) = (30usize, 72usize);
        let mut obs = vec![0.0; hi - lo + 1];
        let mut exp = vec![0.0; hi - lo + 1];
        for &c in &counts {
            obs[c.clamp(lo, hi) - lo] += 1.0;
        }
        let below: f64 = (0..lo).map(pois).sum();
        exp[0] = below + pois(lo);
        for k in lo + 1..hi {
            exp[k - lo] = pois(k);
        }
        exp[hi - lo] = 1.0 - exp[..hi - lo].iter().sum::<f64>();
        let exp: Vec<f64> = exp.iter().map(|p| p * reps as f64).collect();
        let (stat, dof) = crate::stats::chi_square(&obs, &exp);
        assert!(stat < crate::stats::chi_square_critical(dof, 0.01), "chi2 {stat} dof {dof}");
    }

    fn arb_law() -> impl Strategy<Value = SojournDistribution> {
        prop_oneof![
            (0.1f64..20.0).prop_map(|r| SojournDistribution::exponential(r).unwrap()),
            (0.5f64..4.0, 0.5f64..10.0).prop_map(|(k, r)| SojournDistribution::gamma(k, r).unwrap()),
            (0.5f64..3.0, 0.05f64..2.0).prop_map(|(k, s)| SojournDistribution::weibull(k, s).unwrap()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn generated_flows_satisfy_invariants(
            d0 in arb_law(), d1 in arb_law(), start in 0usize..2, horizon in 0.01f64..5.0, seed in any::<u64>()
        ) {
            let m = SwitchingModel::new(d0, d1).with_initial_state(State::from_index(start).unwrap());
            let f = generate_flow(&m, horizon, seed).unwrap();
            prop_assert!(f.prev_sojourn_t0 >= 0.0);
            let mut t = 0.0;
            for (k, (&tau, &soj)) in f.switch_times.iter().zip(&f.sojourns).enumerate() {
                prop_assert!(soj > 0.0);
                t += soj;
                prop_assert_eq!(t, tau);
                prop_assert!(tau <= horizon);
                let at = f.state_at(tau).unwrap();
                prop_assert_eq!(at.state, m.initial_state.after(k + 1));
            }
            prop_assert!(t + f.censored_sojourn > horizon);
        }
    }
}
