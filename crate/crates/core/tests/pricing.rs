use proptest::prelude::*;

use telegraph_core::interp::UniformGrid;
use telegraph_core::market::{
    bond_factor, mc_price, solve_fundamental, solve_pde_constant, stochastic_exponential_path, FundamentalOptions,
    MarketModel, OptionSpec, Payoff, RateRegime,
};
use telegraph_core::martingale::{radon_nikodym_weight, MeasureChangeSpec};
use telegraph_core::process::StateRegime;
use telegraph_core::rng;
use telegraph_core::stats::SampleSummary;
use telegraph_core::switching::{generate_flow, generate_flow_with};
use telegraph_core::{Jump, RegimeSpec, SojournDistribution, State, SwitchingModel, Velocity};

fn exp2(a: f64, b: f64) -> [SojournDistribution; 2] {
    [SojournDistribution::exponential(a).unwrap(), SojournDistribution::exponential(b).unwrap()]
}

fn hyperbolic_regime() -> RegimeSpec {
    RegimeSpec::new(
        StateRegime { velocity: Velocity::Hyperbolic { a: 1.2 }, jump: Jump::Hyperbolic { a: 1.2, b: -0.05 } },
        StateRegime { velocity: Velocity::Hyperbolic { a: 0.6 }, jump: Jump::Hyperbolic { a: 0.6, b: -0.02 } },
    )
}

fn call(k: f64) -> OptionSpec {
    OptionSpec::new(Payoff::Call { strike: k }, 1.0).unwrap()
}

#[test]
fn discounting_equals_shifted_velocities_pathwise() {
    let m = MarketModel::new(1.3, hyperbolic_regime(), exp2(24.0, 30.0), 1.0)
        .unwrap()
        .with_rates(RateRegime::constant([0.03, 0.07]))
        .unwrap();
    let shifted = MarketModel::new(1.3, m.discounted_regime(), exp2(24.0, 30.0), 1.0).unwrap();
    let rates = m.rates.clone().unwrap();
    let grid = [0.25, 0.5, 1.0];
    for seed in 0..50 {
        let flow = generate_flow(&m.switching_model(State::BOTH[(seed % 2) as usize]), 1.0, seed).unwrap();
        let a = stochastic_exponential_path(&m, flow.clone(), &grid).unwrap();
        let b = stochastic_exponential_path(&shifted, flow.clone(), &grid).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            let disc = a.s[k] / bond_factor(&rates, &flow, t).unwrap();
            assert!((disc - b.s[k]).abs() <= 1e-12 * b.s[k], "seed {seed} t {t}: {disc} {}", b.s[k]);
        }
    }
}

#[test]
fn conditional_value_tends_to_unconditional() {
    let d = [SojournDistribution::gamma(3.0, 30.0).unwrap(), SojournDistribution::gamma(2.0, 20.0).unwrap()];
    let regime = RegimeSpec::constant([0.4, -0.2], [-0.05, 0.03]);
    let m = MarketModel::new(1.0, regime, d, 1.0).unwrap();
    let opts = FundamentalOptions {
        y_grid: Some(UniformGrid::new(-1.5, 1.5, 301)),
        time_step: 1e-2,
        s_grid: vec![1e-5, 1e-4],
        ..Default::default()
    };
    let f = solve_fundamental(&m, &call(1.0), &opts).unwrap();
    let gap = |k: usize| {
        let slice = &f.conditional[k];
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for (n, row) in slice.phi[i].iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    worst = worst.max((v - f.phi[i][n][j]).abs());
                }
            }
        }
        worst
    };
    let (near, far) = (gap(0), gap(1));
    assert!(near < 1e-4, "{near}");
    // the gap closes linearly in s
    assert!(far / near > 5.0, "{near} {far}");
}

#[test]
fn pricing_measure_matches_reweighted_physical_paths() {
    // proportional regime, so the rate change from mu to lambda is a martingale measure
    let regime = RegimeSpec::constant([1.2, 0.6], [-0.05, -0.02]);
    let lambda = [24.0, 30.0];
    let spec = MeasureChangeSpec::new([20.0, 27.0], lambda).unwrap();
    let m = MarketModel::new(1.0, regime, exp2(lambda[0], lambda[1]), 1.0).unwrap();
    let option = call(1.0);
    let q = mc_price(&m, &option, 40_000, 71).unwrap();
    let [p0, p1] = spec.physical_dists();
    let physical = SwitchingModel::new(p0, p1).with_initial_state(State::Zero);
    let values = rng::try_replicate(40_000, 72, |r| {
        let flow = generate_flow_with(&physical, 1.0, r)?;
        let w = radon_nikodym_weight(&spec, &flow, 1.0);
        let s = stochastic_exponential_path(&m, flow, &[1.0])?.s[0];
        Ok(w * option.payoff.value(s))
    })
    .unwrap();
    let p = SampleSummary::from_slice(&values);
    let z = (p.mean - q[0].price) / (p.se_mean.powi(2) + q[0].se.powi(2)).sqrt();
    assert!(z.abs() < 3.0, "physical {} +- {}, pricing {:?}", p.mean, p.se_mean, q[0]);
}

#[test]
fn standard_error_shrinks_with_paths() {
    let m = MarketModel::new(1.0, RegimeSpec::constant([0.75, 0.3], [-0.05, -0.02]), exp2(15.0, 15.0), 1.0).unwrap();
    let a = mc_price(&m, &call(1.0), 10_000, 3).unwrap();
    let b = mc_price(&m, &call(1.0), 20_000, 3).unwrap();
    for i in 0..2 {
        let ratio = a[i].se / b[i].se;
        assert!((ratio - 2f64.sqrt()).abs() < 0.1, "state {i}: {ratio}");
    }
}

#[test]
fn discounted_asset_has_constant_expectation() {
    let m = MarketModel::new(1.0, RegimeSpec::constant([0.75, 0.3], [-0.05, -0.02]), exp2(15.0, 15.0), 1.0).unwrap();
    let asset = OptionSpec::new(Payoff::Asset, 1.0).unwrap();
    for p in mc_price(&m, &asset, 50_000, 13).unwrap() {
        assert!((p.price - 1.0).abs() < 3.0 * p.se, "{p:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn call_surface_is_monotone_and_above_intrinsic(
        lambda in 5.0..25.0f64,
        h0 in -0.1..-0.01f64,
        h1 in 0.01..0.1f64,
        strike in 0.8..1.2f64,
    ) {
        // c_i = -lambda h_i keeps the price a martingale
        let regime = RegimeSpec::constant([-lambda * h0, -lambda * h1], [h0, h1]);
        let m = MarketModel::new(1.0, regime, exp2(lambda, lambda), 1.0).unwrap();
        let s = solve_pde_constant(&m, &call(strike), Some(UniformGrid::new(-1.5, 1.5, 201)), 2e-2).unwrap();
        let spots = s.spots();
        for i in 0..2 {
            let row = &s.phi[i][0];
            // away from the truncated edges
            for j in 50..spots.len() - 50 {
                prop_assert!(row[j] >= (spots[j] - strike).max(0.0) - 1e-6, "node {j} {} {}", row[j], spots[j]);
                if j > 50 {
                    prop_assert!(row[j] >= row[j - 1] - 1e-12);
                }
            }
        }
    }
}
