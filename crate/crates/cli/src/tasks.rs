//! One function per task kind. Each returns its tables, scalar results and
//! tolerance checks; nothing touches the file system here.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use telegraph_core::analytic::{density_surface, mc_density, variance_curves, DensityOptions, MomentMethod, TimeGrid, VarianceMode};
use telegraph_core::interp;
use telegraph_core::market::{
    default_log_grid, mc_price, solve_fundamental, solve_pde_constant, FundamentalOptions, MarketModel, OptionSpec,
    Payoff, PriceSurface, RateRegime,
};
use telegraph_core::martingale::{martingale_residual, verify_measure_change, MeasureChangeSpec, MeasureCheckOptions};
use telegraph_core::process::simulate_path_with;
use telegraph_core::rng;
use telegraph_core::stats::SampleSummary;
use telegraph_core::volatility::{hv_curve, mc_volatility, HvOptions};
use telegraph_core::State;

use crate::config::{MethodConfig, Model, OptionConfig, TaskConfig};
use crate::error::CliError;
use crate::output::{num, Check, Table};

#[derive(Debug, Default)]
pub struct TaskOutput {
    pub tables: Vec<Table>,
    pub results: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
}

pub fn run(task: &TaskConfig, model: &Model, prefix: &str) -> Result<TaskOutput, CliError> {
    match task {
        TaskConfig::Simulate { seed, horizon, samples, paths, spot } => simulate(model, prefix, *seed, *horizon, *samples, *paths, *spot),
        TaskConfig::Moments { seed, t_max, step, method, literal_variance, mc_paths, mc_times, z_tolerance } => {
            moments(model, prefix, *seed, *t_max, *step, *method, *literal_variance, *mc_paths, mc_times, *z_tolerance)
        }
        TaskConfig::Density { seed, t, s, x_min, x_max, cells, step, mc_paths, mass_tolerance, z_tolerance } => {
            let opts = DensityOptions { x_min: *x_min, x_max: *x_max, cells: *cells, time_step: *step, ..Default::default() };
            density(model, prefix, *seed, *t, *s, &opts, *mc_paths, *mass_tolerance, *z_tolerance)
        }
        TaskConfig::MartingaleCheck { t_max, points, tolerance, .. } => martingale(model, prefix, *t_max, *points, *tolerance),
        TaskConfig::MeasureCheck { seed, mu, t, paths, direct_paths, alpha } => {
            measure(model, prefix, *seed, *mu, *t, *paths, *direct_paths, *alpha)
        }
        TaskConfig::Price { .. } => price(task, model, prefix),
        TaskConfig::Hv { seed, t_max, points, method, step, mc_paths, mc_times, edge_tolerance } => {
            hv(model, prefix, *seed, *t_max, *points, *method, *step, *mc_paths, mc_times, *edge_tolerance)
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{name} must be positive, got {v}")))
    }
}

fn moment_method(model: &Model, m: MethodConfig) -> MomentMethod {
    let closed = model.regime.as_constant().is_some() && model.dists.iter().all(|d| d.exponential_rate().is_some());
    match m {
        MethodConfig::Auto if closed => MomentMethod::ClosedFormExp,
        MethodConfig::Auto | MethodConfig::Grid => MomentMethod::Grid,
        MethodConfig::ClosedForm => MomentMethod::ClosedFormExp,
    }
}

fn method_name(m: MomentMethod) -> &'static str {
    match m {
        MomentMethod::Grid => "grid",
        MomentMethod::ClosedFormExp => "closed_form",
    }
}

fn simulate(model: &Model, prefix: &str, seed: u64, horizon: f64, samples: usize, paths: usize, spot: f64) -> Result<TaskOutput, CliError> {
    positive("horizon", horizon)?;
    positive("spot", spot)?;
    if samples < 2 || paths == 0 {
        return Err(CliError::Validation("simulate needs samples >= 2 and paths >= 1".into()));
    }
    let grid: Vec<f64> = (0..samples).map(|k| horizon * k as f64 / (samples - 1) as f64).collect();
    let sw = model.switching(model.initial_state);
    let mut out = TaskOutput::default();
    let mut switches = Vec::with_capacity(paths);
    for p in 0..paths {
        let mut r = rng::stream(seed, p as u64);
        let rec = simulate_path_with(&sw, &model.regime, horizon, &grid, &mut r)?;
        let file = if paths == 1 { format!("{prefix}_path.csv") } else { format!("{prefix}_path{p}.csv") };
        let mut t = Table::new(file, &["t", "state", "X", "kappa", "S"]);
        for k in 0..grid.len() {
            let s = spot * rec.drift[k].exp() * rec.kappa[k];
            if !(s > 0.0) {
                return Err(CliError::Runtime(format!("price factor lost positivity at t={}", grid[k])));
            }
            t.push([num(grid[k]), rec.state[k].idx().to_string(), num(rec.x[k]), num(rec.kappa[k]), num(s)]);
        }
        switches.push(rec.flow.switch_count());
        out.tables.push(t);
    }
    out.results.insert("switches".into(), json!(switches));
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn moments(
    model: &Model,
    prefix: &str,
    seed: u64,
    t_max: f64,
    step: f64,
    method: MethodConfig,
    literal: bool,
    mc_paths: usize,
    mc_times: &[f64],
    z_tol: f64,
) -> Result<TaskOutput, CliError> {
    let grid = TimeGrid::new(t_max, step)?;
    let mode = if literal { VarianceMode::SquaredMean } else { VarianceMode::Exact };
    let m = moment_method(model, method);
    let curves = variance_curves(&model.regime, &model.dists, grid, m, mode)?;
    let mut out = TaskOutput::default();
    let mut t = Table::new(format!("{prefix}_moments.csv"), &["t", "mu0", "mu1", "sigma0", "sigma1"]);
    for k in 0..curves.t.len() {
        t.push([curves.t[k], curves.mu[0][k], curves.mu[1][k], curves.sigma[0][k], curves.sigma[1][k]].map(num));
    }
    out.tables.push(t);
    out.results.insert("method".into(), json!(method_name(m)));
    let last = curves.t.len() - 1;
    out.results.insert("mu_end".into(), json!([curves.mu[0][last], curves.mu[1][last]]));
    out.results.insert("sigma_end".into(), json!([curves.sigma[0][last], curves.sigma[1][last]]));
    if mc_paths > 0 {
        let times = check_mc_times(mc_times, t_max)?;
        let mut mc = Table::new(
            format!("{prefix}_moments_mc.csv"),
            &["t", "state", "mean", "se_mean", "variance", "se_variance", "z_mean", "z_variance"],
        );
        for state in State::BOTH {
            let i = state.idx();
            let sw = model.switching(state);
            let pts = rng::try_replicate(mc_paths, seed.wrapping_add(i as u64), |r| {
                telegraph_core::process::sample_points(&sw, &model.regime, &times, r)
            })?;
            for (k, &tk) in times.iter().enumerate() {
                let xs: Vec<f64> = pts.iter().map(|p| p[k].x).collect();
                let s = SampleSummary::from_slice(&xs);
                let mu = interp::linear(&curves.t, &curves.mu[i], tk);
                let sigma = interp::linear(&curves.t, &curves.sigma[i], tk);
                let (zm, zv) = (s.mean_z(mu), s.variance_z(sigma));
                mc.push([num(tk), i.to_string(), num(s.mean), num(s.se_mean), num(s.variance), num(s.se_variance), num(zm), num(zv)]);
                out.checks.push(Check::at_most(format!("mc_mean_z[{i}]@{tk}"), zm.abs(), z_tol));
                out.checks.push(Check::at_most(format!("mc_variance_z[{i}]@{tk}"), zv.abs(), z_tol));
            }
        }
        out.tables.push(mc);
    }
    Ok(out)
}

fn check_mc_times(times: &[f64], t_max: f64) -> Result<Vec<f64>, CliError> {
    if times.is_empty() {
        return Err(CliError::Validation("mc_times must be given when mc_paths > 0".into()));
    }
    if times.iter().any(|&t| !(t > 0.0) || t > t_max) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Validation(format!("mc_times must be increasing within (0, {t_max}]")));
    }
    Ok(times.to_vec())
}

#[allow(clippy::too_many_arguments)]
fn density(
    model: &Model,
    prefix: &str,
    seed: u64,
    t: f64,
    s: f64,
    opts: &DensityOptions,
    mc_paths: usize,
    mass_tol: f64,
    z_tol: f64,
) -> Result<TaskOutput, CliError> {
    let surf = density_surface(&model.regime, &model.dists, t, s, opts)?;
    let mut out = TaskOutput::default();
    let n_last = surf.t.len() - 1;
    // ten slices plus the end keep the table small
    let mut slices: Vec<usize> = (0..=10).map(|k| (k * n_last) / 10).collect();
    slices.dedup();
    let mut table = Table::new(format!("{prefix}_density.csv"), &["t", "x", "p0", "p1"]);
    for &n in &slices {
        for (m, &x) in surf.x.iter().enumerate() {
            table.push([surf.t[n], x, surf.p[0][n][m], surf.p[1][n][m]].map(num));
        }
    }
    out.tables.push(table);
    for i in 0..2 {
        let mut atoms = Table::new(format!("{prefix}_atoms{i}.csv"), &["t", "atom_x", "atom_mass"]);
        for (n, &(x, mass)) in surf.atoms[i].iter().enumerate() {
            atoms.push([surf.t[n], x, mass].map(num));
        }
        out.tables.push(atoms);
    }
    let mass = [surf.total_mass(State::Zero, n_last), surf.total_mass(State::One, n_last)];
    out.results.insert("total_mass".into(), json!(mass));
    out.results.insert("atom_mass".into(), json!([surf.atoms[0][n_last].1, surf.atoms[1][n_last].1]));
    out.results.insert("outside_mass".into(), json!([surf.outside[0][n_last], surf.outside[1][n_last]]));
    for i in 0..2 {
        out.checks.push(Check::at_most(format!("total_mass_error[{i}]"), (mass[i] - 1.0).abs(), mass_tol));
    }
    if mc_paths > 0 {
        if s != 0.0 {
            return Err(CliError::Validation("the Monte Carlo density is only available for s = 0".into()));
        }
        let mut hist = Table::new(format!("{prefix}_density_mc.csv"), &["x", "p0", "p1"]);
        let mut dens = Vec::new();
        for state in State::BOTH {
            let i = state.idx();
            let mc = mc_density(&model.switching(state), &model.regime, t, &surf.x_edges, mc_paths, seed.wrapping_add(i as u64))?;
            let atom = surf.atoms[i][n_last].1;
            let se = (atom * (1.0 - atom) / mc_paths as f64).sqrt();
            let z = (mc.atom_fraction - atom) / se;
            out.results.insert(format!("mc_atom_fraction[{i}]"), json!(mc.atom_fraction));
            out.checks.push(Check::at_most(format!("atom_z[{i}]"), z.abs(), z_tol));
            dens.push(mc.density());
        }
        for (m, &x) in surf.x.iter().enumerate() {
            hist.push([x, dens[0][m], dens[1][m]].map(num));
        }
        out.tables.push(hist);
    }
    Ok(out)
}

fn martingale(model: &Model, prefix: &str, t_max: f64, points: usize, tol: f64) -> Result<TaskOutput, CliError> {
    positive("t_max", t_max)?;
    if points == 0 {
        return Err(CliError::Validation("points must be positive".into()));
    }
    let grid: Vec<f64> = (0..=points).map(|k| t_max * k as f64 / points as f64).collect();
    let r = martingale_residual(&model.regime, &model.dists, &grid)?;
    let mut out = TaskOutput::default();
    let mut t = Table::new(format!("{prefix}_martingale.csv"), &["t", "residual0", "residual1"]);
    for k in 0..grid.len() {
        t.push([grid[k], r.residual[0][k], r.residual[1][k]].map(num));
    }
    out.tables.push(t);
    out.results.insert("max_abs_residual".into(), json!(r.max_abs_residual));
    out.results.insert("sign_violations".into(), json!([r.sign_violations[0].len(), r.sign_violations[1].len()]));
    out.results.insert("zero_jumps".into(), json!([r.zero_jumps[0].len(), r.zero_jumps[1].len()]));
    let div = r.divergence_check.map(|v| if v.is_finite() { json!(v) } else { json!("-inf") });
    out.results.insert("divergence_check".into(), json!(div));
    out.checks.push(Check::at_most("max_abs_residual", r.max_abs_residual, tol));
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn measure(
    model: &Model,
    prefix: &str,
    seed: u64,
    mu: [f64; 2],
    t: f64,
    paths: usize,
    direct_paths: usize,
    alpha: f64,
) -> Result<TaskOutput, CliError> {
    let lambda = match (model.dists[0].exponential_rate(), model.dists[1].exponential_rate()) {
        (Some(a), Some(b)) => [a, b],
        _ => return Err(CliError::Validation("measure-check needs exponential target sojourns".into())),
    };
    let spec = MeasureChangeSpec::new(mu, lambda)?;
    let opts = MeasureCheckOptions { initial_state: model.initial_state, alpha, direct_paths };
    let r = verify_measure_change(&spec, &model.regime, t, paths, seed, &opts)?;
    let mut out = TaskOutput::default();
    out.checks.push(Check::at_most("weight_mean_z", r.weight.mean_z(1.0).abs(), 3.0));
    for ks in &r.sojourn_ks {
        out.checks.push(Check::at_most(format!("sojourn_ks[{}]", ks.state.idx()), ks.statistic, ks.critical));
    }
    out.checks.push(Check::at_most("weighted_x_z", r.weighted_x.mean_z(0.0).abs(), 3.0));
    out.checks.push(Check::at_most("two_sample_ks", r.two_sample_statistic, r.two_sample_critical));
    let mut table = Table::new(format!("{prefix}_measure.csv"), &["check", "value", "threshold", "passed"]);
    for c in &out.checks {
        table.push([c.name.clone(), num(c.value), num(c.threshold), c.passed.to_string()]);
    }
    out.tables.push(table);
    out.results.insert("weight_mean".into(), json!(r.weight.mean));
    out.results.insert("weight_se".into(), json!(r.weight.se_mean));
    out.results.insert("effective_n".into(), json!(r.effective_n));
    out.results.insert("log_weight_variance".into(), json!(r.log_weight_variance));
    out.results.insert("weighted_x_mean".into(), json!(r.weighted_x.mean));
    out.results.insert("weighted_x_se".into(), json!(r.weighted_x.se_mean));
    Ok(out)
}

fn payoff(o: &OptionConfig) -> Result<OptionSpec, CliError> {
    let strike = || o.strike.ok_or_else(|| CliError::Validation(format!("payoff `{}` needs a strike", o.payoff)));
    let p = match o.payoff.as_str() {
        "call" => Payoff::Call { strike: strike()? },
        "put" => Payoff::Put { strike: strike()? },
        "digital" => Payoff::Digital { strike: strike()? },
        "asset" => Payoff::Asset,
        "unit" => Payoff::Unit,
        other => return Err(CliError::Validation(format!("unknown payoff `{other}`"))),
    };
    Ok(OptionSpec::new(p, o.maturity)?)
}

fn price(task: &TaskConfig, model: &Model, prefix: &str) -> Result<TaskOutput, CliError> {
    let TaskConfig::Price { seed, option, spot, rates, methods, step, nodes, mc_paths, s_grid, normalized, tolerance, z_tolerance } = task
    else {
        unreachable!()
    };
    let opt = payoff(option)?;
    let mut market = MarketModel::new(*spot, model.regime.clone(), model.dists.clone(), opt.maturity)?;
    if let Some(r) = rates {
        market = market.with_rates(RateRegime::constant(*r))?;
    }
    for m in methods {
        if !matches!(m.as_str(), "pde" | "fundamental" | "mc") {
            return Err(CliError::Validation(format!("unknown pricing method `{m}`")));
        }
    }
    let grid = default_log_grid(&market, *nodes);
    let mut out = TaskOutput::default();
    let mut table = Table::new(format!("{prefix}_price.csv"), &["method", "state", "spot", "t", "value"]);
    let mut cond = Table::new(format!("{prefix}_price_conditional.csv"), &["method", "state", "s", "spot", "t", "value"]);
    let mut at_spot: BTreeMap<&str, [f64; 2]> = BTreeMap::new();
    let emit = |name: &'static str, surf: &PriceSurface, table: &mut Table, cond: &mut Table| -> Result<[f64; 2], CliError> {
        let spots = surf.spots();
        for i in 0..2 {
            for (j, x) in spots.iter().enumerate() {
                table.push([name.to_string(), i.to_string(), num(*x), num(surf.t[0]), num(surf.phi[i][0][j])]);
            }
            for slice in &surf.conditional {
                for (j, x) in spots.iter().enumerate() {
                    cond.push([name.to_string(), i.to_string(), num(slice.s), num(*x), num(surf.t[0]), num(slice.phi[i][0][j])]);
                }
            }
        }
        Ok([surf.value_at(*spot, 0.0, State::Zero, 0.0)?, surf.value_at(*spot, 0.0, State::One, 0.0)?])
    };
    if methods.iter().any(|m| m == "pde") {
        let surf = solve_pde_constant(&market, &opt, Some(grid), *step)?;
        at_spot.insert("pde", emit("pde", &surf, &mut table, &mut cond)?);
    }
    if methods.iter().any(|m| m == "fundamental") {
        let fo = FundamentalOptions { y_grid: Some(grid), time_step: *step, s_grid: s_grid.clone(), normalized: *normalized, ..Default::default() };
        let surf = solve_fundamental(&market, &opt, &fo)?;
        at_spot.insert("fundamental", emit("fundamental", &surf, &mut table, &mut cond)?);
    }
    let mut mc = None;
    if methods.iter().any(|m| m == "mc") && *mc_paths > 0 {
        let p = mc_price(&market, &opt, *mc_paths, *seed)?;
        for (i, v) in p.iter().enumerate() {
            table.push(["mc".to_string(), i.to_string(), num(*spot), num(0.0), num(v.price)]);
        }
        out.results.insert("mc_se".into(), json!([p[0].se, p[1].se]));
        at_spot.insert("mc", [p[0].price, p[1].price]);
        mc = Some(p);
    }
    for (k, v) in &at_spot {
        out.results.insert(format!("value_{k}"), json!(v));
    }
    if let (Some(p), Some(f)) = (at_spot.get("pde"), at_spot.get("fundamental")) {
        for i in 0..2 {
            out.checks.push(Check::at_most(format!("pde_vs_fundamental[{i}]"), (p[i] - f[i]).abs() / p[i].abs(), *tolerance));
        }
    }
    if let Some(mc) = mc {
        if let Some(reference) = at_spot.get("pde").or(at_spot.get("fundamental")) {
            for i in 0..2 {
                let z = (mc[i].price - reference[i]) / mc[i].se;
                out.checks.push(Check::at_most(format!("mc_z[{i}]"), z.abs(), *z_tolerance));
            }
        }
    }
    out.tables.push(table);
    if !cond.rows.is_empty() {
        out.tables.push(cond);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn hv(
    model: &Model,
    prefix: &str,
    seed: u64,
    t_max: f64,
    points: usize,
    method: MethodConfig,
    step: f64,
    mc_paths: usize,
    mc_times: &[f64],
    edge_tol: f64,
) -> Result<TaskOutput, CliError> {
    positive("t_max", t_max)?;
    if points == 0 {
        return Err(CliError::Validation("points must be positive".into()));
    }
    let mut grid: Vec<f64> = (1..=points).map(|k| t_max * k as f64 / points as f64).collect();
    if grid[0] > 1e-3 {
        grid.insert(0, 1e-3);
    }
    let mc_t = if mc_paths > 0 { check_mc_times(mc_times, t_max)? } else { Vec::new() };
    let mut all: Vec<f64> = grid.iter().chain(&mc_t).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let m = moment_method(model, method);
    let opts = HvOptions { method: m, step, mode: VarianceMode::Exact };
    let curve = hv_curve(&model.regime, &model.dists, &all, &opts)?;
    let at = |i: usize, t: f64| curve.hv[i][all.iter().position(|&v| v == t).unwrap()];

    let mut out = TaskOutput::default();
    let mut table = Table::new(format!("{prefix}_hv.csv"), &["t", "hv0", "hv1"]);
    for &t in &grid {
        table.push([t, at(0, t), at(1, t)].map(num));
    }
    out.tables.push(table);
    out.results.insert("method".into(), json!(method_name(m)));
    let bad = curve.hv.iter().flatten().filter(|v| !(v.is_finite() && **v > 0.0)).count();
    out.checks.push(Check::at_most("non_positive_or_nonfinite", bad as f64, 0.0));
    let edge = [at(0, t_max), at(1, t_max)];
    out.results.insert("hv_right_edge".into(), json!(edge));
    match curve.limits {
        Some(l) => {
            out.results.insert("limits".into(), json!({"small_t": l.small_t, "large_t": l.large_t}));
            for i in 0..2 {
                out.checks.push(Check::at_most(format!("right_edge_vs_large_t[{i}]"), (edge[i] / l.large_t - 1.0).abs(), edge_tol));
            }
        }
        None => {
            out.results.insert("limits".into(), Value::Null);
        }
    }
    if mc_paths > 0 {
        let mut mc_table = Table::new(format!("{prefix}_hv_mc.csv"), &["t", "state", "hv_mc", "se", "hv", "z"]);
        for state in State::BOTH {
            let i = state.idx();
            let mc = mc_volatility(&model.switching(state), &model.regime, &mc_t, mc_paths, seed.wrapping_add(i as u64))?;
            for (k, &t) in mc_t.iter().enumerate() {
                let z = (mc.hv[k] - at(i, t)) / mc.se[k];
                mc_table.push([num(t), i.to_string(), num(mc.hv[k]), num(mc.se[k]), num(at(i, t)), num(z)]);
                out.checks.push(Check::at_most(format!("mc_z[{i}]@{t}"), z.abs(), 3.0));
            }
        }
        out.tables.push(mc_table);
    }
    Ok(out)
}
