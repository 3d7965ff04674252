//! When is `X` a martingale, sojourn laws that make it one, and the change
//! of switching rates that turns a physical model into a martingale model.
//!
//! `X_i` is a martingale iff `Fbar_i(t) c_bar_i(t) + h_i(t) f_i(t) = 0` for
//! both states, i.e. the hazard of the sojourn law equals `-c_bar_i / h_i`.

use std::sync::Arc;

use crate::analytic::RenewalModel;
use crate::error::{Error, Result};
use crate::process::{path_from_flow, RegimeSpec};
use crate::quad;
use crate::rng;
use crate::stats::{self, SampleSummary, WeightedMean};
use crate::switching::{
    generate_flow_with, SojournDistribution, State, SwitchingFlow, SwitchingModel, TabulatedSurvival,
    TRUNCATION_EPS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    pub t: Vec<f64>,
    /// `Fbar_i(t) c_bar_i(t) + h_i(t) f_i(t)` per state.
    pub residual: [Vec<f64>; 2],
    pub max_abs_residual: f64,
    /// Times where `c_bar_i / h_i >= 0`, or `h_i = 0` with `c_bar_i != 0`.
    pub sign_violations: [Vec<f64>; 2],
    /// Times where `h_i = 0`.
    pub zero_jumps: [Vec<f64>; 2],
    /// `integral_0^T c_bar_i / h_i` at the largest grid time; `-inf` once a
    /// zero jump with nonzero velocity is crossed.
    pub divergence_check: [f64; 2],
}

impl MartingaleReport {
    pub fn is_martingale(&self, tol: f64) -> bool {
        self.max_abs_residual <= tol
    }
}

fn check_grid(t: &[f64]) -> Result<()> {
    if t.is_empty() || t.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("time grid must be nonnegative and strictly increasing".into()));
    }
    Ok(())
}

pub fn martingale_residual(
    regime: &RegimeSpec,
    dists: &[SojournDistribution; 2],
    t_grid: &[f64],
) -> Result<MartingaleReport> {
    check_grid(t_grid)?;
    let model = RenewalModel::new(regime, dists);
    let mut residual = [Vec::with_capacity(t_grid.len()), Vec::with_capacity(t_grid.len())];
    let mut sign_violations = [Vec::new(), Vec::new()];
    let mut zero_jumps = [Vec::new(), Vec::new()];
    let mut max_abs: f64 = 0.0;
    for i in 0..2 {
        let d = &dists[i];
        for &t in t_grid {
            let k = model.coefficients(i, t)?;
            let f = d.density(t);
            let r = d.survival(t) * k.c_bar + if f == 0.0 { 0.0 } else { k.h * f };
            if !r.is_finite() {
                return Err(Error::Overflow(format!("residual of state {i} at t={t} is {r}")));
            }
            if k.h == 0.0 {
                zero_jumps[i].push(t);
                if k.c_bar != 0.0 {
                    sign_violations[i].push(t);
                }
            } else if k.c_bar / k.h >= 0.0 && k.c_bar != 0.0 {
                sign_violations[i].push(t);
            }
            max_abs = max_abs.max(r.abs());
            residual[i].push(r);
        }
    }
    let t_end = *t_grid.last().unwrap();
    let divergence_check = [0, 1].map(|i| {
        if !zero_jumps[i].is_empty() && !sign_violations[i].is_empty() {
            return f64::NEG_INFINITY;
        }
        let ratio = |u: f64| match model.coefficients(i, u) {
            Ok(k) if k.h != 0.0 => k.c_bar / k.h,
            _ => 0.0,
        };
        quad::integrate(ratio, 0.0, t_end, 1e-10)
    });
    Ok(MartingaleReport { t: t_grid.to_vec(), residual, max_abs_residual: max_abs, sign_violations, zero_jumps, divergence_check })
}

/// Sojourn laws with hazard `-c_i / h_i`, tabulated on `t_grid` and exact
/// beyond it. Velocities must not depend on the previous sojourn, since the
/// averaged velocity would depend on the law being built.
pub fn martingale_density_from_regimes(regime: &RegimeSpec, t_grid: &[f64]) -> Result<[SojournDistribution; 2]> {
    check_grid(t_grid)?;
    if t_grid[0] != 0.0 || t_grid.len() < 2 {
        return Err(Error::InvalidParameter("hazard grid must start at 0 and have two nodes".into()));
    }
    if regime.depends_on_prev() {
        return Err(Error::UnsupportedRegime(
            "martingale densities need velocities independent of the previous sojourn".into(),
        ));
    }
    let mut out = Vec::with_capacity(2);
    for i in 0..2 {
        let st = regime.states[i].clone();
        let ratio = move |t: f64| -> f64 {
            let h = st.jump.value(t);
            let c = st.velocity.value(0.0, t);
            if h == 0.0 {
                if c == 0.0 {
                    0.0
                } else {
                    f64::NAN
                }
            } else {
                -c / h
            }
        };
        let bad: Vec<f64> = t_grid.iter().copied().filter(|&t| !(ratio(t) > 0.0)).collect();
        if !bad.is_empty() {
            return Err(Error::PreconditionViolation {
                reason: format!("state {i}: velocity and jump must have opposite signs"),
                times: bad,
            });
        }
        let tab = TabulatedSurvival::from_hazard(t_grid.to_vec(), Arc::new(ratio))?;
        let reach = *tab.log_survival_nodes().last().unwrap();
        if reach > TRUNCATION_EPS.ln() {
            log::warn!(
                "state {i}: integrated hazard {:.3} by t={} has not passed {:.3}; the tail relies on extrapolation",
                -reach,
                t_grid.last().unwrap(),
                -TRUNCATION_EPS.ln()
            );
        }
        out.push(SojournDistribution::Tabulated(tab));
    }
    let d1 = out.pop().unwrap();
    let d0 = out.pop().unwrap();
    Ok([d0, d1])
}

/// Change from physical rates `mu_i` to martingale rates `lambda_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureChangeSpec {
    pub mu: [f64; 2],
    pub lambda: [f64; 2],
}

impl MeasureChangeSpec {
    pub fn new(mu: [f64; 2], lambda: [f64; 2]) -> Result<Self> {
        if mu.iter().chain(&lambda).any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidParameter("all rates must be positive".into()));
        }
        Ok(Self { mu, lambda })
    }

    /// `c*_i = mu_i - lambda_i`
    pub fn c_star(&self, state: State) -> f64 {
        let i = state.idx();
        self.mu[i] - self.lambda[i]
    }

    /// `h*_i = -c*_i / mu_i`, so `1 + h*_i = lambda_i / mu_i`.
    pub fn h_star(&self, state: State) -> f64 {
        -self.c_star(state) / self.mu[state.idx()]
    }

    pub fn physical_dists(&self) -> [SojournDistribution; 2] {
        self.mu.map(|r| SojournDistribution::Exponential { rate: r })
    }

    pub fn martingale_dists(&self) -> [SojournDistribution; 2] {
        self.lambda.map(|r| SojournDistribution::Exponential { rate: r })
    }
}

/// Density of the rate-`lambda` law against the rate-`mu` law on the flow
/// up to `t`.
pub fn radon_nikodym_weight(spec: &MeasureChangeSpec, flow: &SwitchingFlow, t: f64) -> f64 {
    let mut log_w = 0.0;
    for seg in flow.segments() {
        if seg.start >= t {
            break;
        }
        log_w += spec.c_star(seg.state) * (seg.end.min(t) - seg.start);
        if seg.switched && seg.end <= t {
            log_w += spec.h_star(seg.state).ln_1p();
        }
    }
    log_w.exp()
}

/// Weight of the first `k` sojourns, stopped at the `k`-th switch.
fn stopped_weight(spec: &MeasureChangeSpec, flow: &SwitchingFlow, k: usize) -> f64 {
    let mut log_w = 0.0;
    for seg in flow.segments().take(k) {
        log_w += spec.c_star(seg.state) * (seg.end - seg.start) + spec.h_star(seg.state).ln_1p();
    }
    log_w.exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SojournKs {
    pub state: State,
    pub statistic: f64,
    pub critical: f64,
    pub effective_n: f64,
}

impl SojournKs {
    pub fn passed(&self) -> bool {
        self.statistic <= self.critical
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureChangeReport {
    pub t: f64,
    pub n_paths: usize,
    /// Sample of `w(t)` under the physical law.
    pub weight: SampleSummary,
    /// `(sum w)^2 / sum w^2` for `w(t)`.
    pub effective_n: f64,
    pub log_weight_variance: f64,
    pub sojourn_ks: [SojournKs; 2],
    /// Sample of `w(t) X(t)` under the physical law.
    pub weighted_x: SampleSummary,
    pub two_sample_statistic: f64,
    pub two_sample_critical: f64,
    pub proportionality_residual: f64,
}

impl MeasureChangeReport {
    pub fn weight_ok(&self) -> bool {
        self.weight.mean_z(1.0).abs() <= 3.0
    }

    pub fn sojourns_ok(&self) -> bool {
        self.sojourn_ks.iter().all(SojournKs::passed)
    }

    pub fn martingale_ok(&self) -> bool {
        self.weighted_x.mean_z(0.0).abs() <= 3.0
    }

    pub fn distribution_ok(&self) -> bool {
        self.two_sample_statistic <= self.two_sample_critical
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureCheckOptions {
    pub initial_state: State,
    pub alpha: f64,
    /// Paths of the direct simulation for the two-sample comparison.
    pub direct_paths: usize,
}

impl Default for MeasureCheckOptions {
    fn default() -> Self {
        Self { initial_state: State::Zero, alpha: 0.01, direct_paths: 10_000 }
    }
}

/// Largest `|c_bar_i + lambda_i h_i|` relative to `max(1, |c_bar_i|)` on `points`.
pub fn proportionality_residual(regime: &RegimeSpec, lambda: [f64; 2], points: &[f64]) -> Result<f64> {
    let d = lambda.map(|r| SojournDistribution::Exponential { rate: r });
    let model = RenewalModel::new(regime, &d);
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for &t in points {
            let k = model.coefficients(i, t)?;
            worst = worst.max((k.c_bar + lambda[i] * k.h).abs() / k.c_bar.abs().max(1.0));
        }
    }
    Ok(worst)
}

struct WeightedPath {
    w: f64,
    x: f64,
    sojourn: [Option<(f64, f64)>; 2],
}

/// Checks the rate change on `n_paths` physical flows: the weight has mean
/// one, reweighted sojourns follow `Exp(lambda_i)`, the reweighted `X(t)`
/// has mean zero, and its law matches a direct simulation at rates `lambda`.
pub fn verify_measure_change(
    spec: &MeasureChangeSpec,
    regime: &RegimeSpec,
    t: f64,
    n_paths: usize,
    seed: u64,
    opts: &MeasureCheckOptions,
) -> Result<MeasureChangeReport> {
    if !(t > 0.0) || n_paths < 2 || opts.direct_paths < 2 {
        return Err(Error::InvalidParameter("need t > 0 and at least two paths".into()));
    }
    let probe: Vec<f64> = (0..=64).map(|k| t * k as f64 / 64.0).collect();
    let prop = proportionality_residual(regime, spec.lambda, &probe)?;
    if prop > 1e-8 {
        let bad = probe
            .iter()
            .copied()
            .filter(|&u| proportionality_residual(regime, spec.lambda, &[u]).is_ok_and(|r| r > 1e-8))
            .collect();
        return Err(Error::PreconditionViolation {
            reason: format!("regime is not proportional to the target rates (residual {prop:.3e})"),
            times: bad,
        });
    }

    let [p0, p1] = spec.physical_dists();
    let physical = SwitchingModel::new(p0, p1).with_initial_state(opts.initial_state);
    // long enough that the first two sojourns complete
    let min_rate = spec.mu[0].min(spec.mu[1]);
    let horizon = t.max(60.0 / min_rate);
    let first = opts.initial_state;
    let paths = rng::try_replicate(n_paths, seed, |r| {
        let flow = generate_flow_with(&physical, horizon, r)?;
        let w = radon_nikodym_weight(spec, &flow, t);
        let sojourn = [0, 1].map(|k| {
            (flow.sojourns.len() > k).then(|| (flow.sojourns[k], stopped_weight(spec, &flow, k + 1)))
        });
        let x = path_from_flow(flow, regime, &[t])?.x[0];
        Ok(WeightedPath { w, x, sojourn })
    })?;

    let w: Vec<f64> = paths.iter().map(|p| p.w).collect();
    let weight = SampleSummary::from_slice(&w);
    let effective_n = WeightedMean::importance(&w, &w).effective_n;
    let logs: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let log_weight_variance = SampleSummary::from_slice(&logs).variance;
    let wx: Vec<f64> = paths.iter().map(|p| p.w * p.x).collect();
    let weighted_x = SampleSummary::from_slice(&wx);

    let sojourn_ks = [0, 1].map(|k| {
        let state = first.after(k);
        let rate = spec.lambda[state.idx()];
        let (xs, ws): (Vec<f64>, Vec<f64>) = paths.iter().filter_map(|p| p.sojourn[k]).unzip();
        let (d, n_eff) = stats::weighted_ks_statistic(&xs, &ws, |x| -(-rate * x).exp_m1());
        SojournKs { state, statistic: d, critical: stats::ks_critical(n_eff, opts.alpha), effective_n: n_eff }
    });

    let [q0, q1] = spec.martingale_dists();
    let direct = SwitchingModel::new(q0, q1).with_initial_state(opts.initial_state);
    let direct_x = rng::try_replicate(opts.direct_paths, seed ^ 0x5eed_d1ec, |r| {
        Ok(crate::process::sample_points(&direct, regime, &[t], r)?[0].x)
    })?;
    let ones = vec![1.0; direct_x.len()];
    let xs: Vec<f64> = paths.iter().map(|p| p.x).collect();
    let (d2, na, nb) = stats::weighted_ks_two_sample(&xs, &w, &direct_x, &ones);

    Ok(MeasureChangeReport {
        t,
        n_paths,
        weight,
        effective_n,
        log_weight_variance,
        sojourn_ks,
        weighted_x,
        two_sample_statistic: d2,
        two_sample_critical: stats::ks_two_sample_critical(na, nb, opts.alpha),
        proportionality_residual: prop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{conditional_mean, TimeGrid};
    use crate::process::{Jump, StateRegime, Velocity};
    use crate::switching::generate_flow;

    fn grid(t: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|k| t * k as f64 / n as f64).collect()
    }

    fn exp2(a: f64, b: f64) -> [SojournDistribution; 2] {
        [SojournDistribution::exponential(a).unwrap(), SojournDistribution::exponential(b).unwrap()]
    }

    #[test]
    fn proportional_constant_regime_is_a_martingale() {
        let regime = RegimeSpec::constant([0.75, 0.3], [-0.05, -0.02]);
        let r = martingale_residual(&regime, &exp2(15.0, 15.0), &grid(2.0, 50)).unwrap();
        assert!(r.max_abs_residual < 1e-15);
        assert!(r.sign_violations.iter().all(Vec::is_empty));
        assert!((r.divergence_check[0] + 30.0).abs() < 1e-9);
    }

    #[test]
    fn first_figure_is_not_a_martingale() {
        let regime = RegimeSpec::constant([1.0, -1.0], [-0.05, 0.05]);
        let r = martingale_residual(&regime, &exp2(5.0, 5.0), &[0.0, 0.5, 1.0]).unwrap();
        assert!((r.residual[0][0] - 0.75).abs() < 1e-15);
        assert!((r.residual[1][0] + 0.75).abs() < 1e-15);
        assert!(!r.is_martingale(1e-6));
    }

    #[test]
    fn same_signs_are_reported() {
        let regime = RegimeSpec::constant([1.0, -1.0], [0.05, 0.05]);
        let r = martingale_residual(&regime, &exp2(5.0, 5.0), &[0.0, 1.0]).unwrap();
        assert_eq!(r.sign_violations[0], vec![0.0, 1.0]);
        assert!(r.sign_violations[1].is_empty());
        let z = RegimeSpec::constant([1.0, 0.0], [0.0, 0.0]);
        let r = martingale_residual(&z, &exp2(5.0, 5.0), &[0.0, 1.0]).unwrap();
        assert_eq!(r.zero_jumps[0].len(), 2);
        assert_eq!(r.sign_violations[0].len(), 2);
        assert!(r.sign_violations[1].is_empty());
        assert_eq!(r.divergence_check[0], f64::NEG_INFINITY);
    }

    #[test]
    fn constructed_laws_for_proportional_regimes_are_exponential() {
        let regime = RegimeSpec::constant([0.75, 0.3], [-0.05, -0.02]);
        let d = martingale_density_from_regimes(&regime, &grid(2.0, 200)).unwrap();
        for t in [0.0, 0.3, 1.7, 2.5] {
            assert!((d[0].survival(t) - (-15.0 * t).exp()).abs() < 1e-13);
            assert!((d[1].survival(t) - (-15.0 * t).exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn makeham_survival() {
        // c_0 / h_0 = -(1 + t)
        let regime = RegimeSpec::new(
            StateRegime {
                velocity: Velocity::Custom(crate::process::CustomVelocity {
                    f: Arc::new(|_, t| 0.05 * (1.0 + t)),
                    antiderivative: Some(Arc::new(|_, t| 0.05 * (t + t * t / 2.0))),
                    prev_dependent: false,
                }),
                jump: Jump::Constant(-0.05),
            },
            StateRegime { velocity: Velocity::Constant(0.3), jump: Jump::Constant(-0.02) },
        );
        let times = grid(3.0, 300);
        let d = martingale_density_from_regimes(&regime, &times).unwrap();
        if let SojournDistribution::Tabulated(tab) = &d[0] {
            for (k, &t) in times.iter().enumerate() {
                assert!((tab.log_survival_nodes()[k] + t + t * t / 2.0).abs() < 1e-12);
            }
        } else {
            panic!("expected a tabulated law");
        }
        assert!((d[0].survival(1.0) - (-1.5f64).exp()).abs() < 1e-12);
        let r = martingale_residual(&regime, &d, &grid(3.0, 60)).unwrap();
        assert!(r.max_abs_residual < 1e-10, "{}", r.max_abs_residual);
        // flat conditional mean: l_bar_i(s)
        let c = conditional_mean(&regime, &d, 0.4, TimeGrid::new(1.0, 2e-3).unwrap()).unwrap();
        let l0 = 0.05 * (0.4 + 0.08);
        assert!(c.mu[0].iter().all(|m| (m - l0).abs() < 1e-6));
    }

    #[test]
    fn precondition_lists_offending_times() {
        let regime = RegimeSpec::constant([1.0, -1.0], [-0.05, -0.05]);
        match martingale_density_from_regimes(&regime, &[0.0, 0.5, 1.0]) {
            Err(Error::PreconditionViolation { times, .. }) => assert_eq!(times, vec![0.0, 0.5, 1.0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn weights_of_simple_flows() {
        let spec = MeasureChangeSpec::new([10.0, 12.0], [24.0, 30.0]).unwrap();
        assert!((1.0 + spec.h_star(State::Zero) - 2.4).abs() < 1e-15);
        let flow = SwitchingFlow {
            initial_state: State::Zero,
            prev_sojourn_t0: 0.1,
            switch_times: vec![],
            sojourns: vec![],
            censored_sojourn: 3.0,
            horizon: 1.0,
        };
        let w = radon_nikodym_weight(&spec, &flow, 0.7);
        assert!((w - (-14.0f64 * 0.7).exp()).abs() < 1e-15);
        let same = MeasureChangeSpec::new([10.0, 12.0], [10.0, 12.0]).unwrap();
        let model = SwitchingModel::new(SojournDistribution::exponential(10.0).unwrap(), SojournDistribution::exponential(12.0).unwrap());
        let f = generate_flow(&model, 2.0, 3).unwrap();
        assert!((radon_nikodym_weight(&same, &f, 2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_change_passes_every_check() {
        let spec = MeasureChangeSpec::new([24.0, 30.0], [24.0, 30.0]).unwrap();
        let regime = RegimeSpec::constant([1.2, 0.6], [-0.05, -0.02]);
        let opts = MeasureCheckOptions { direct_paths: 2_000, ..Default::default() };
        let r = verify_measure_change(&spec, &regime, 1.0, 4_000, 8, &opts).unwrap();
        assert_eq!(r.weight.variance, 0.0);
        assert!(r.sojourns_ok() && r.martingale_ok() && r.distribution_ok(), "{r:?}");
    }

    #[test]
    fn non_proportional_regime_is_rejected() {
        let spec = MeasureChangeSpec::new([10.0, 12.0], [24.0, 30.0]).unwrap();
        let regime = RegimeSpec::constant([1.0, 0.6], [-0.05, -0.02]);
        let e = verify_measure_change(&spec, &regime, 1.0, 100, 1, &MeasureCheckOptions::default());
        assert!(matches!(e, Err(Error::PreconditionViolation { .. })));
    }
}
