//! Characteristics solver for constant velocities, jumps and rates with
//! exponential sojourns.
//!
//! With `y = ln x` and `r = U - t`, the values satisfy
//!
//! ```text
//! Psi_r = c_i Psi_y - (r_i + lambda_i) Psi_i + lambda_i Psi_{1-i}(y + ln(1 + h_i))
//! ```
//!
//! Along `dy/dr = -c_i` only the decay and the coupling remain. The decay
//! is integrated exactly and the coupling by second-order exponential time
//! differencing, with the new-level coupling found by fixed-point iteration.

use super::fundamental::converged;
use super::{default_log_grid, MarketModel, OptionSpec, PriceSurface, PricingMethod, ShiftedEval};
use crate::error::{Error, Result};
use crate::interp::{monotone_slopes, UniformGrid};

const MAX_ITERATIONS: usize = 50;

/// `Phi_i(x, t)` from the PDE; `grid` defaults to [`default_log_grid`] with
/// 801 nodes and `time_step` is rounded so that it divides the maturity.
pub fn solve_pde_constant(
    model: &MarketModel,
    option: &OptionSpec,
    grid: Option<UniformGrid>,
    time_step: f64,
) -> Result<PriceSurface> {
    let (c, h) = model
        .regime
        .as_constant()
        .ok_or_else(|| Error::MethodMismatch("the PDE solver needs constant velocities and jumps".into()))?;
    let lambda = match (model.q_dists[0].exponential_rate(), model.q_dists[1].exponential_rate()) {
        (Some(a), Some(b)) => [a, b],
        _ => return Err(Error::MethodMismatch("the PDE solver needs exponential sojourns".into())),
    };
    let rates = match &model.rates {
        None => [0.0, 0.0],
        Some(r) => r.as_constant().ok_or_else(|| Error::MethodMismatch("the PDE solver needs constant rates".into()))?,
    };
    if !(time_step > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {time_step}")));
    }
    let u = option.maturity;
    let grid = grid.unwrap_or_else(|| default_log_grid(model, 801));
    let steps = (u / time_step).ceil().max(1.0) as usize;
    let dt = u / steps as f64;
    let ys = grid.points();
    let n = ys.len();

    let a = [0, 1].map(|i| rates[i] + lambda[i]);
    let decay = a.map(|v| (-v * dt).exp());
    let e1 = a.map(|v| -(-v * dt).exp_m1() / v);
    let e2 = [0, 1].map(|i| 1.0 / a[i] - e1[i] / (a[i] * dt));
    let jump = h.map(f64::ln_1p);
    let foot = [0, 1].map(|i| ShiftedEval::new(&grid, c[i] * dt));
    let start_coupling = [0, 1].map(|i| ShiftedEval::new(&grid, c[i] * dt + jump[i]));
    let end_coupling = [0, 1].map(|i| ShiftedEval::new(&grid, jump[i]));

    let terminal: Vec<f64> = ys.iter().map(|&y| option.payoff.value(y.exp())).collect();
    let mut levels = [vec![terminal.clone()], vec![terminal]];
    for m in 1..=steps {
        let prev = [&levels[0][m - 1], &levels[1][m - 1]];
        let slopes = [monotone_slopes(grid.step, prev[0]), monotone_slopes(grid.step, prev[1])];
        let mut known = [vec![0.0; n], vec![0.0; n]];
        for i in 0..2 {
            foot[i].apply(prev[i], &slopes[i], 0..n, &mut known[i], decay[i]);
            start_coupling[i].apply(prev[1 - i], &slopes[1 - i], 0..n, &mut known[i], lambda[i] * (e1[i] - e2[i]));
        }
        let mut cur = [prev[0].clone(), prev[1].clone()];
        for _ in 0..MAX_ITERATIONS {
            let s = [monotone_slopes(grid.step, &cur[0]), monotone_slopes(grid.step, &cur[1])];
            let mut next = known.clone();
            for i in 0..2 {
                end_coupling[i].apply(&cur[1 - i], &s[1 - i], 0..n, &mut next[i], lambda[i] * e2[i]);
            }
            let done = converged(&cur, &next);
            cur = next;
            if done {
                break;
            }
        }
        let [c0, c1] = cur;
        levels[0].push(c0);
        levels[1].push(c1);
    }
    let [l0, l1] = levels;
    let phi = [l0, l1].map(|mut l| {
        l.reverse();
        l
    });
    let t = (0..=steps).map(|k| k as f64 * dt).collect();
    Ok(PriceSurface { method: PricingMethod::Pde, y: grid, t, phi, conditional: Vec::new(), memoryless: true })
}
