//! Backward Volterra solve for `Phi_i`.
//!
//! In the time to maturity `r = U - t` and `y = ln x`,
//!
//! ```text
//! Psi_i(y, r) = Fbar_i(r) E H(e^{y + l_i(tau; 0, r)})
//!             + integral_0^r f_i(v) E Psi_{1-i}(y + l_i(tau; 0, v) + ln(1 + h_i(v)), r - v) dv
//! ```
//!
//! with `tau ~ f_{1-i}` the sojourn preceding the switch. The `v` integral
//! uses the same product-trapezoid cell moments as the moment solver, and
//! shifted values of `Psi` come from monotone cubic interpolation in `y`.

use rayon::prelude::*;

use super::{default_log_grid, deterministic_rate, ConditionalSlice, MarketModel, OptionSpec, PriceSurface, PricingMethod, ShiftedEval};
use crate::analytic::ProductWeights;
use crate::error::{Error, Result};
use crate::interp::{monotone_slopes, UniformGrid};
use crate::process::{RegimeSpec, TauAverager};
use crate::switching::SojournDistribution;

#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalOptions {
    /// Grid in `ln x`; defaults to [`default_log_grid`] with 801 nodes.
    pub y_grid: Option<UniformGrid>,
    /// Target time step; the step used divides the maturity evenly.
    pub time_step: f64,
    /// Elapsed times for the conditional slices (positive, increasing).
    pub s_grid: Vec<f64>,
    /// Divide the conditional slices by `Fbar_i(s)`.
    pub normalized: bool,
    /// Gauss–Legendre nodes for the average over the preceding sojourn.
    pub tau_nodes: usize,
    /// Cap on the fixed-point iterations for the implicit end term.
    pub fixed_point_iterations: usize,
}

impl Default for FundamentalOptions {
    fn default() -> Self {
        Self { y_grid: None, time_step: 5e-3, s_grid: Vec::new(), normalized: true, tau_nodes: 64, fixed_point_iterations: 50 }
    }
}

const CHUNK: usize = 64;

/// `(tau, weight)` nodes for the preceding sojourn of state `i`.
fn tau_rule(regime: &RegimeSpec, dists: &[SojournDistribution; 2], i: usize, n: usize) -> Vec<(f64, f64)> {
    if regime.states[i].velocity.depends_on_prev() {
        let avg = TauAverager::new(&dists[1 - i], n);
        avg.nodes.iter().copied().zip(avg.weights.iter().copied()).collect()
    } else {
        vec![(0.0, 1.0)]
    }
}

/// Shift sets `(d, weight)` at `v = s + k dt` for `k = 0..=cells`.
fn shift_table(
    regime: &RegimeSpec,
    i: usize,
    taus: &[(f64, f64)],
    s: f64,
    dt: f64,
    cells: usize,
) -> Result<Vec<Vec<(f64, f64)>>> {
    let st = &regime.states[i];
    (0..=cells)
        .map(|k| {
            let v = s + k as f64 * dt;
            let jump = st.jump.value(v).ln_1p();
            taus.iter().map(|&(tau, w)| Ok((st.velocity.displacement(tau, s, v)? + jump, w))).collect()
        })
        .collect()
}

/// Fixed-point stop: successive iterates agree to near round-off.
pub(super) fn converged(a: &[Vec<f64>; 2], b: &[Vec<f64>; 2]) -> bool {
    a.iter().zip(b).all(|(u, v)| u.iter().zip(v).all(|(x, y)| (x - y).abs() <= 1e-14 * x.abs().max(1.0)))
}

struct Level {
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl Level {
    fn new(h: f64, values: Vec<f64>) -> Self {
        let slopes = monotone_slopes(h, &values);
        Self { values, slopes }
    }
}

fn check_coverage(grid: &UniformGrid, shifts: &[Vec<(f64, f64)>]) -> Result<()> {
    let width = grid.end() - grid.start;
    let worst = shifts.iter().flatten().fold(0.0f64, |m, &(d, _)| m.max(d.abs()));
    if !worst.is_finite() || worst > 0.5 * width {
        return Err(Error::GridCoverage(format!(
            "log-price shift {worst:.3} exceeds half the grid width {width:.3}"
        )));
    }
    Ok(())
}

/// Adds the convolution `sum_k` over cells `0..m` (skipping the implicit
/// `(m0 - m1)[0]` term) to `out`.
#[allow(clippy::too_many_arguments)]
fn convolution(
    grid: &UniformGrid,
    w: &ProductWeights,
    shifts: &[Vec<(f64, f64)>],
    other: &[Level],
    m: usize,
    scale: f64,
    out: &mut [f64],
) {
    let evals: Vec<Vec<(ShiftedEval, f64)>> =
        shifts.iter().map(|set| set.iter().map(|&(d, wt)| (ShiftedEval::new(grid, d), wt)).collect()).collect();
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let range = c * CHUNK..c * CHUNK + chunk.len();
        for k in 0..m {
            let a = (w.m0[k] - w.m1[k]) * scale;
            if k > 0 && a != 0.0 {
                let lvl = &other[m - k];
                for &(ev, wt) in &evals[k] {
                    ev.apply(&lvl.values, &lvl.slopes, range.clone(), chunk, a * wt);
                }
            }
            let b = w.m1[k] * scale;
            if b != 0.0 {
                let lvl = &other[m - k - 1];
                for &(ev, wt) in &evals[k + 1] {
                    ev.apply(&lvl.values, &lvl.slopes, range.clone(), chunk, b * wt);
                }
            }
        }
    });
}

/// `Phi_i(x, t)` on `t = 0, dt, ..., U` and the elapsed-time slices.
pub fn solve_fundamental(model: &MarketModel, option: &OptionSpec, opts: &FundamentalOptions) -> Result<PriceSurface> {
    let u = option.maturity;
    if (u - model.maturity).abs() > 1e-12 * u.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "option maturity {u} differs from the model maturity {}",
            model.maturity
        )));
    }
    if !(opts.time_step > 0.0) || opts.tau_nodes == 0 {
        return Err(Error::InvalidParameter("time step and tau nodes must be positive".into()));
    }
    if opts.s_grid.iter().any(|&s| !(s > 0.0)) || opts.s_grid.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidParameter("elapsed times must be positive and increasing".into()));
    }
    let rho = deterministic_rate(model)?;
    let payoff = |x: f64| option.payoff.value(x);
    let regime = &model.regime;
    let dists = &model.q_dists;
    let grid = opts.y_grid.unwrap_or_else(|| default_log_grid(model, 801));
    let ys = grid.points();
    let steps = (u / opts.time_step).ceil().max(1.0) as usize;
    let dt = u / steps as f64;

    let taus = [tau_rule(regime, dists, 0, opts.tau_nodes), tau_rule(regime, dists, 1, opts.tau_nodes)];
    let weights = [0, 1].map(|i| ProductWeights::shifted(&dists[i], dt, steps, 0.0));
    let shifts = [shift_table(regime, 0, &taus[0], 0.0, dt, steps)?, shift_table(regime, 1, &taus[1], 0.0, dt, steps)?];
    check_coverage(&grid, &shifts[0])?;
    check_coverage(&grid, &shifts[1])?;

    let terminal = |i: usize, s: f64, r: f64, norm: f64| -> Result<Vec<f64>> {
        let surv = dists[i].survival(s + r) / norm;
        let st = &regime.states[i];
        let mut out = vec![0.0; ys.len()];
        if surv == 0.0 {
            return Ok(out);
        }
        for &(tau, wt) in &taus[i] {
            let l = st.velocity.displacement(tau, s, s + r)?;
            for (o, &y) in out.iter_mut().zip(&ys) {
                *o += surv * wt * payoff((y + l).exp());
            }
        }
        Ok(out)
    };

    // backward levels m: r = m dt
    let mut levels: [Vec<Level>; 2] = [Vec::with_capacity(steps + 1), Vec::with_capacity(steps + 1)];
    for lv in levels.iter_mut() {
        lv.push(Level::new(grid.step, ys.iter().map(|&y| payoff(y.exp())).collect()));
    }
    let implicit: [Vec<(ShiftedEval, f64)>; 2] =
        [0, 1].map(|i| shifts[i][0].iter().map(|&(d, wt)| (ShiftedEval::new(&grid, d), wt)).collect());
    for m in 1..=steps {
        let mut rest = [terminal(0, 0.0, m as f64 * dt, 1.0)?, terminal(1, 0.0, m as f64 * dt, 1.0)?];
        for i in 0..2 {
            convolution(&grid, &weights[i], &shifts[i], &levels[1 - i], m, 1.0, &mut rest[i]);
        }
        let mut cur = [levels[0][m - 1].values.clone(), levels[1][m - 1].values.clone()];
        for _ in 0..opts.fixed_point_iterations {
            let slopes = [monotone_slopes(grid.step, &cur[0]), monotone_slopes(grid.step, &cur[1])];
            let mut next = rest.clone();
            for i in 0..2 {
                let a = weights[i].m0[0] - weights[i].m1[0];
                for &(ev, wt) in &implicit[i] {
                    ev.apply(&cur[1 - i], &slopes[1 - i], 0..ys.len(), &mut next[i], a * wt);
                }
            }
            let done = converged(&cur, &next);
            cur = next;
            if done {
                break;
            }
        }
        let [c0, c1] = cur;
        levels[0].push(Level::new(grid.step, c0));
        levels[1].push(Level::new(grid.step, c1));
    }

    let t: Vec<f64> = (0..=steps).map(|n| n as f64 * dt).collect();
    let discount = |m: usize, mut row: Vec<f64>| {
        let d = (-rho * m as f64 * dt).exp();
        row.iter_mut().for_each(|v| *v *= d);
        row
    };
    let phi = [0, 1].map(|i| (0..=steps).map(|n| discount(steps - n, levels[i][steps - n].values.clone())).collect::<Vec<_>>());

    let mut conditional = Vec::with_capacity(opts.s_grid.len());
    for &s in &opts.s_grid {
        let mut slice: [Vec<Vec<f64>>; 2] = [Vec::with_capacity(steps + 1), Vec::with_capacity(steps + 1)];
        for i in 0..2 {
            let surv_s = dists[i].survival(s);
            if surv_s < 1e-300 {
                return Err(Error::DegenerateCondition(format!("survival of state {i} at s={s} underflows")));
            }
            let norm = if opts.normalized { surv_s } else { 1.0 };
            let w = ProductWeights::shifted(&dists[i], dt, steps, s);
            let sh = shift_table(regime, i, &taus[i], s, dt, steps)?;
            check_coverage(&grid, &sh)?;
            for n in 0..=steps {
                let m = steps - n;
                let mut row = terminal(i, s, m as f64 * dt, norm)?;
                // slice values use the full cell moments including the first
                let mut first = vec![0.0; ys.len()];
                if m > 0 {
                    let a = (w.m0[0] - w.m1[0]) / norm;
                    let lvl = &levels[1 - i][m];
                    for &(d, wt) in &sh[0] {
                        ShiftedEval::new(&grid, d).apply(&lvl.values, &lvl.slopes, 0..ys.len(), &mut first, a * wt);
                    }
                }
                convolution(&grid, &w, &sh, &levels[1 - i], m, 1.0 / norm, &mut row);
                for (r, f) in row.iter_mut().zip(first) {
                    *r += f;
                }
                slice[i].push(discount(m, row));
            }
        }
        conditional.push(ConditionalSlice { s, phi: slice });
    }

    let memoryless = dists.iter().all(|d| d.exponential_rate().is_some()) && !regime.depends_on_prev();
    Ok(PriceSurface { method: PricingMethod::Fundamental, y: grid, t, phi, conditional, memoryless })
}
