use super::*;
use crate::process::Jump;

fn exp2(a: f64, b: f64) -> [SojournDistribution; 2] {
    [SojournDistribution::exponential(a).unwrap(), SojournDistribution::exponential(b).unwrap()]
}

fn martingale_model() -> MarketModel {
    MarketModel::new(1.0, RegimeSpec::constant([0.75, 0.3], [-0.05, -0.02]), exp2(15.0, 15.0), 1.0).unwrap()
}

fn call(k: f64) -> OptionSpec {
    OptionSpec::new(Payoff::Call { strike: k }, 1.0).unwrap()
}

fn coarse() -> FundamentalOptions {
    FundamentalOptions { y_grid: Some(UniformGrid::new(-1.5, 1.5, 301)), time_step: 1e-2, ..Default::default() }
}

#[test]
fn unit_claim_is_worth_one() {
    let m = martingale_model();
    let unit = OptionSpec::new(Payoff::Unit, 1.0).unwrap();
    let f = solve_fundamental(&m, &unit, &coarse()).unwrap();
    let p = solve_pde_constant(&m, &unit, Some(UniformGrid::new(-1.5, 1.5, 301)), 1e-2).unwrap();
    for s in [&f, &p] {
        for i in 0..2 {
            for row in &s.phi[i] {
                assert!(row.iter().all(|v| (v - 1.0).abs() < 1e-12));
            }
        }
    }
}

#[test]
fn deterministic_bond_discounts() {
    let m = martingale_model().with_rates(RateRegime::constant([0.05, 0.05])).unwrap();
    let unit = OptionSpec::new(Payoff::Unit, 1.0).unwrap();
    let f = solve_fundamental(&m, &unit, &coarse()).unwrap();
    let p = solve_pde_constant(&m, &unit, Some(UniformGrid::new(-1.5, 1.5, 301)), 1e-2).unwrap();
    for s in [&f, &p] {
        for (n, &t) in s.t.iter().enumerate() {
            let d = (-0.05 * (1.0 - t)).exp();
            // the fundamental solve is exact here, the PDE coupling second order
            let tol = if s.method == PricingMethod::Pde { 1e-6 } else { 1e-12 };
            assert!(s.phi[0][n].iter().all(|v| (v - d).abs() < tol), "{:?} {t} {} {d}", s.method, s.phi[0][n][0]);
        }
    }
    let unequal = martingale_model().with_rates(RateRegime::constant([0.05, 0.02])).unwrap();
    assert!(matches!(solve_fundamental(&unequal, &unit, &coarse()), Err(Error::MethodMismatch(_))));
}

#[test]
fn terminal_condition_holds() {
    let m = martingale_model();
    let f = solve_fundamental(&m, &call(1.0), &coarse()).unwrap();
    let last = f.t.len() - 1;
    for (j, x) in f.spots().into_iter().enumerate() {
        assert_eq!(f.phi[0][last][j], (x - 1.0).max(0.0));
    }
}

#[test]
fn asset_claim_is_a_martingale() {
    let m = martingale_model();
    let asset = OptionSpec::new(Payoff::Asset, 1.0).unwrap();
    let f = solve_fundamental(&m, &asset, &coarse()).unwrap();
    let p = solve_pde_constant(&m, &asset, Some(UniformGrid::new(-1.5, 1.5, 301)), 1e-2).unwrap();
    for s in [&f, &p] {
        for i in 0..2 {
            let v = s.value_at(1.0, 0.0, State::BOTH[i], 0.0).unwrap();
            assert!((v - 1.0).abs() < 1e-4, "{:?} {i} {v}", s.method);
        }
    }
}

#[test]
fn fixed_spot_without_motion() {
    let regime = RegimeSpec::constant([0.0, 0.0], [0.0, 0.0]);
    let m = MarketModel::new(1.0, regime, exp2(5.0, 7.0), 1.0).unwrap();
    let f = solve_fundamental(&m, &call(1.0), &coarse()).unwrap();
    for (j, x) in f.spots().into_iter().enumerate() {
        assert!((f.phi[1][0][j] - (x - 1.0).max(0.0)).abs() < 1e-12);
    }
}

#[test]
fn rare_switching_is_pure_transport() {
    let m = MarketModel::new(1.0, RegimeSpec::constant([0.4, -0.3], [-0.05, 0.05]), exp2(1e-9, 1e-9), 1.0).unwrap();
    let grid = UniformGrid::new(-1.5, 1.5, 601);
    let p = solve_pde_constant(&m, &call(1.0), Some(grid), 1e-2).unwrap();
    let f = solve_fundamental(&m, &call(1.0), &FundamentalOptions { y_grid: Some(grid), ..coarse() }).unwrap();
    for s in [&p, &f] {
        for (i, c) in [0.4f64, -0.3].into_iter().enumerate() {
            let v = s.value_at(1.0, 0.0, State::BOTH[i], 0.0).unwrap();
            assert!((v - (c.exp() - 1.0).max(0.0)).abs() < 1e-6, "{:?} {i} {v}", s.method);
        }
    }
}

#[test]
fn methods_agree_on_a_call() {
    let m = martingale_model();
    let grid = UniformGrid::new(-1.5, 1.5, 601);
    let f = solve_fundamental(&m, &call(1.0), &FundamentalOptions { y_grid: Some(grid), time_step: 5e-3, ..Default::default() })
        .unwrap();
    let p = solve_pde_constant(&m, &call(1.0), Some(grid), 5e-3).unwrap();
    let mc = mc_price(&m, &call(1.0), 20_000, 5).unwrap();
    for i in 0..2 {
        let a = f.value_at(1.0, 0.0, State::BOTH[i], 0.0).unwrap();
        let b = p.value_at(1.0, 0.0, State::BOTH[i], 0.0).unwrap();
        assert!((a - b).abs() / b < 2e-3, "{i}: {a} {b}");
        assert!((mc[i].price - b).abs() < 3.0 * mc[i].se, "{i}: {:?} {b}", mc[i]);
    }
}

#[test]
fn parity_and_shape() {
    let m = martingale_model();
    let grid = UniformGrid::new(-1.5, 1.5, 301);
    let c = solve_pde_constant(&m, &call(1.0), Some(grid), 1e-2).unwrap();
    let p = solve_pde_constant(&m, &OptionSpec::new(Payoff::Put { strike: 1.0 }, 1.0).unwrap(), Some(grid), 1e-2).unwrap();
    for i in 0..2 {
        for x in [0.6, 0.9, 1.0, 1.2, 1.8] {
            let cv = c.value_at(x, 0.0, State::BOTH[i], 0.0).unwrap();
            let pv = p.value_at(x, 0.0, State::BOTH[i], 0.0).unwrap();
            assert!((cv - pv - (x - 1.0)).abs() < 1e-4, "{x}: {cv} {pv}");
            assert!(cv >= (x - 1.0f64).max(0.0) - 1e-9);
        }
        assert!(c.phi[i][0].windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }
}

#[test]
fn memoryless_slices_match_the_unconditional_values() {
    let m = martingale_model();
    let opts = FundamentalOptions { s_grid: vec![0.1, 0.3], ..coarse() };
    let f = solve_fundamental(&m, &call(1.0), &opts).unwrap();
    let raw = solve_fundamental(&m, &call(1.0), &FundamentalOptions { normalized: false, ..opts }).unwrap();
    for (k, slice) in f.conditional.iter().enumerate() {
        let surv = (-15.0 * slice.s).exp();
        for i in 0..2 {
            for n in 0..f.t.len() {
                for j in 0..f.y.len {
                    assert!((slice.phi[i][n][j] - f.phi[i][n][j]).abs() < 1e-8);
                    assert!((raw.conditional[k].phi[i][n][j] - surv * slice.phi[i][n][j]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn elapsed_time_matters_for_gamma_sojourns() {
    let d = [SojournDistribution::gamma(3.0, 30.0).unwrap(), SojournDistribution::gamma(2.0, 20.0).unwrap()];
    let regime = RegimeSpec::new(
        crate::process::StateRegime { velocity: Velocity::Constant(0.4), jump: Jump::Constant(-0.05) },
        crate::process::StateRegime { velocity: Velocity::Constant(-0.2), jump: Jump::Constant(0.03) },
    );
    let m = MarketModel::new(1.0, regime, d, 1.0).unwrap();
    let f = solve_fundamental(&m, &call(1.0), &FundamentalOptions { s_grid: vec![0.2], ..coarse() }).unwrap();
    assert!(!f.memoryless);
    let a = f.value_at(1.0, 0.0, State::Zero, 0.0).unwrap();
    let b = f.value_at(1.0, 0.0, State::Zero, 0.2).unwrap();
    assert!((a - b).abs() > 1e-3, "{a} {b}");
    assert!(matches!(solve_pde_constant(&m, &call(1.0), None, 1e-2), Err(Error::MethodMismatch(_))));
    assert!(matches!(f.value_at(1.0, 0.0, State::Zero, 0.5), Err(Error::GridCoverage(_))));
    let mc = mc_price(&m, &call(1.0), 20_000, 9).unwrap();
    for i in 0..2 {
        let v = f.value_at(1.0, 0.0, State::BOTH[i], 0.0).unwrap();
        assert!((mc[i].price - v).abs() < 3.0 * mc[i].se + 2e-3, "{i}: {:?} {v}", mc[i]);
    }
}

#[test]
fn narrow_grid_is_rejected() {
    let m = MarketModel::new(1.0, RegimeSpec::constant([3.0, -3.0], [-0.05, 0.05]), exp2(1.0, 1.0), 1.0).unwrap();
    let opts = FundamentalOptions { y_grid: Some(UniformGrid::new(-0.5, 0.5, 51)), ..coarse() };
    assert!(matches!(solve_fundamental(&m, &call(1.0), &opts), Err(Error::GridCoverage(_))));
}

#[test]
fn price_paths_and_bonds() {
    let m = martingale_model();
    let flow = SwitchingFlow {
        initial_state: State::Zero,
        prev_sojourn_t0: 0.0,
        switch_times: vec![0.2],
        sojourns: vec![0.2],
        censored_sojourn: 0.5,
        horizon: 1.0,
    };
    let p = stochastic_exponential_path(&m, flow.clone(), &[0.1, 0.5]).unwrap();
    assert!((p.s[0] - (0.075f64).exp()).abs() < 1e-14);
    assert!((p.s[1] - (0.15f64 + 0.09).exp() * 0.95).abs() < 1e-14);
    let b = bond_factor(&RateRegime::constant([0.1, 0.2]), &flow, 0.5).unwrap();
    assert!((b - (0.02f64 + 0.06).exp()).abs() < 1e-14);
}
