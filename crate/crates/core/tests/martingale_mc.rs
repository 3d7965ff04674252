use telegraph_core::martingale::martingale_residual;
use telegraph_core::process::StateRegime;
use telegraph_core::volatility::mc_volatility;
use telegraph_core::{Jump, RegimeSpec, SojournDistribution, State, SwitchingModel, Velocity};

const TIMES: [f64; 5] = [0.25, 0.5, 1.0, 1.5, 2.0];

fn exp2(a: f64, b: f64) -> [SojournDistribution; 2] {
    [SojournDistribution::exponential(a).unwrap(), SojournDistribution::exponential(b).unwrap()]
}

fn largest_z(regime: &RegimeSpec, d: &[SojournDistribution; 2], seed: u64) -> [f64; 2] {
    State::BOTH.map(|s| {
        let model = SwitchingModel::new(d[0].clone(), d[1].clone()).with_initial_state(s);
        let mc = mc_volatility(&model, regime, &TIMES, 20_000, seed + s.idx() as u64).unwrap();
        mc.mean.iter().map(|m| m.mean_z(0.0).abs()).fold(0.0, f64::max)
    })
}

fn residual(regime: &RegimeSpec, d: &[SojournDistribution; 2]) -> f64 {
    let t: Vec<f64> = (0..=40).map(|k| 0.05 * k as f64).collect();
    martingale_residual(regime, d, &t).unwrap().max_abs_residual
}

#[test]
fn zero_residual_regimes_have_zero_mean() {
    let hyperbolic = RegimeSpec::new(
        StateRegime { velocity: Velocity::Hyperbolic { a: 1.2 }, jump: Jump::Hyperbolic { a: 1.2, b: -0.05 } },
        StateRegime { velocity: Velocity::Hyperbolic { a: 0.6 }, jump: Jump::Hyperbolic { a: 0.6, b: -0.02 } },
    );
    let constant = RegimeSpec::constant([1.2, 0.6], [-0.05, -0.02]);
    for (regime, seed) in [(hyperbolic, 101), (constant, 103)] {
        let d = exp2(24.0, 30.0);
        assert!(residual(&regime, &d) < 1e-12);
        let z = largest_z(&regime, &d, seed);
        assert!(z.iter().all(|&v| v < 3.5), "{z:?}");
    }
}

#[test]
fn nonzero_residual_shows_in_the_mean() {
    let regime = RegimeSpec::constant([1.0, -1.0], [-0.05, 0.05]);
    let d = exp2(5.0, 5.0);
    assert!(residual(&regime, &d) > 0.1);
    let z = largest_z(&regime, &d, 105);
    assert!(z.iter().all(|&v| v > 10.0), "{z:?}");
}
