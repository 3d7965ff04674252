//! Closed-form solutions for exponential sojourns.
//!
//! With `Lambda = [[-l0, l0], [l1, -l1]]` and `L = [[0, l0], [l1, 0]]` the
//! pair `u = g + f * u` is solved by
//!
//! ```text
//! u(t) = g(t) + integral_0^t (I + phi(t - v) Lambda) L g(v) dv
//! ```
//!
//! where `exp(t Lambda) = I + phi(t) Lambda`, `phi(t) = (1 - e^{-2 lam t}) / (2 lam)`
//! and `2 lam = l0 + l1`. Writing `phi = (1 - e)/(2 lam)` splits the
//! integral into `integral g` and `integral e^{-2 lam (t - v)} g`, which are
//! accumulated along increasing evaluation points.

use crate::error::{Error, Result};
use crate::process::RegimeSpec;
use crate::quad;
use crate::switching::SojournDistribution;

use super::moments::{check_points, clamp_variance, MomentCurves, RenewalModel, VarianceMode};

/// `(1 - e^{-2 lam t}) / (2 lam)`, accurate near `t = 0`.
pub fn phi_lambda(lambda: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    -(-2.0 * lambda * t).exp_m1() / (2.0 * lambda)
}

/// `exp(t Lambda)` for the two-state generator with rates `lambda0`, `lambda1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixExpLambda {
    pub lambda0: f64,
    pub lambda1: f64,
}

impl MatrixExpLambda {
    pub fn new(lambda0: f64, lambda1: f64) -> Result<Self> {
        if !(lambda0 > 0.0 && lambda1 > 0.0) {
            return Err(Error::InvalidParameter("rates must be positive".into()));
        }
        Ok(Self { lambda0, lambda1 })
    }

    pub fn half_sum(&self) -> f64 {
        0.5 * (self.lambda0 + self.lambda1)
    }

    pub fn at(&self, t: f64) -> [[f64; 2]; 2] {
        let p = phi_lambda(self.half_sum(), t);
        [[1.0 - p * self.lambda0, p * self.lambda0], [p * self.lambda1, 1.0 - p * self.lambda1]]
    }

    /// `L v`.
    fn l(&self, v: [f64; 2]) -> [f64; 2] {
        [self.lambda0 * v[1], self.lambda1 * v[0]]
    }

    /// `Lambda v`.
    fn big(&self, v: [f64; 2]) -> [f64; 2] {
        [self.lambda0 * (v[1] - v[0]), self.lambda1 * (v[0] - v[1])]
    }

    /// `g + L G1 + Lambda L (G1 - G2) / (2 lam)` with `G1 = integral g` and
    /// `G2 = integral e^{-2 lam (t - v)} g`.
    fn assemble(&self, g: [f64; 2], g1: [f64; 2], g2: [f64; 2]) -> [f64; 2] {
        let two_lam = self.lambda0 + self.lambda1;
        let lg1 = self.l(g1);
        let diff = self.l([(g1[0] - g2[0]) / two_lam, (g1[1] - g2[1]) / two_lam]);
        let bd = self.big(diff);
        [g[0] + lg1[0] + bd[0], g[1] + lg1[1] + bd[1]]
    }
}

/// Solves the exponential pair at increasing `points` for a forcing given
/// pointwise. `tol` bounds each interval's quadrature error.
pub fn solve_exp_pair<G>(m: &MatrixExpLambda, g: G, points: &[f64], tol: f64) -> Result<[Vec<f64>; 2]>
where
    G: Fn(f64) -> [f64; 2],
{
    check_points(points)?;
    let two_lam = m.lambda0 + m.lambda1;
    let mut out = [Vec::with_capacity(points.len()), Vec::with_capacity(points.len())];
    let (mut g1, mut g2) = ([0.0; 2], [0.0; 2]);
    let mut prev = 0.0;
    for &t in points {
        if t > prev {
            let inc = quad::integrate_vec(
                |v| {
                    let gv = g(v);
                    let e = (-two_lam * (t - v)).exp();
                    [gv[0], gv[1], e * gv[0], e * gv[1]]
                },
                prev,
                t,
                tol,
            );
            let decay = (-two_lam * (t - prev)).exp();
            g1 = [g1[0] + inc[0], g1[1] + inc[1]];
            g2 = [decay * g2[0] + inc[2], decay * g2[1] + inc[3]];
        }
        let u = m.assemble(if t == 0.0 { [0.0; 2] } else { g(t) }, g1, g2);
        out[0].push(u[0]);
        out[1].push(u[1]);
        prev = t;
    }
    Ok(out)
}

/// Closed-form means `(mu_0, mu_1)` from the forcing `a(i, t)`.
pub fn closed_form_mean_exp<A>(lambda0: f64, lambda1: f64, a: A, t_points: &[f64]) -> Result<[Vec<f64>; 2]>
where
    A: Fn(usize, f64) -> f64,
{
    let m = MatrixExpLambda::new(lambda0, lambda1)?;
    solve_exp_pair(&m, |t| [a(0, t), a(1, t)], t_points, 1e-14)
}

/// Pointwise closed-form mean for exponential sojourns.
///
/// The mean is `integral_0^t K(t - v) a'(v) dv` with
/// `K(r) = I + L r + Lambda L (r - phi(r)) / (2 lam)`, one quadrature per
/// evaluation; for constant regimes everything is analytic.
pub struct ExpMean<'a> {
    m: MatrixExpLambda,
    model: &'a RenewalModel,
    constant: Option<[f64; 2]>,
}

impl<'a> ExpMean<'a> {
    pub fn new(model: &'a RenewalModel) -> Result<Self> {
        let rates = exp_rates(&model.dists)?;
        let m = MatrixExpLambda::new(rates[0], rates[1])?;
        let constant = model
            .regime
            .as_constant()
            .map(|(c, h)| [c[0] + rates[0] * h[0], c[1] + rates[1] * h[1]]);
        Ok(Self { m, model, constant })
    }

    pub fn at(&self, t: f64) -> Result<[f64; 2]> {
        if t <= 0.0 {
            return Ok([0.0; 2]);
        }
        let m = &self.m;
        let lam = m.half_sum();
        let rates = [m.lambda0, m.lambda1];
        let (a, a1, a2) = match self.constant {
            Some(k) => {
                // a_i(t) = k_i (1 - e^{-l_i t}) / l_i
                let mut a = [0.0; 2];
                let mut a1 = [0.0; 2];
                let mut a2 = [0.0; 2];
                for i in 0..2 {
                    let li = rates[i];
                    let lo = rates[1 - i];
                    let frac = -(-li * t).exp_m1() / li;
                    a[i] = k[i] * frac;
                    a1[i] = k[i] / li * (t - frac);
                    a2[i] = k[i] / li * (phi_lambda(lam, t) - (-li * t).exp() * (-(-lo * t).exp_m1()) / lo);
                }
                (a, a1, a2)
            }
            None => {
                let model = self.model;
                let err = std::cell::RefCell::new(None);
                let v = quad::integrate_vec(
                    |v| {
                        let d = [model.forcing_density(0, v), model.forcing_density(1, v)];
                        let d = match d {
                            [Ok(x), Ok(y)] => [x, y],
                            [Err(e), _] | [_, Err(e)] => {
                                err.borrow_mut().get_or_insert(e);
                                [0.0; 2]
                            }
                        };
                        let r = t - v;
                        let w2 = phi_lambda(lam, r);
                        [d[0], d[1], d[0] * r, d[1] * r, d[0] * w2, d[1] * w2]
                    },
                    0.0,
                    t,
                    1e-14,
                );
                if let Some(e) = err.into_inner() {
                    return Err(e);
                }
                // integral_0^t e^{-2 lam (t - u)} a(u) du = integral_0^t a'(v) phi(t - v) dv
                ([v[0], v[1]], [v[2], v[3]], [v[4], v[5]])
            }
        };
        Ok(m.assemble(a, a1, a2))
    }
}

fn exp_rates(dists: &[SojournDistribution; 2]) -> Result<[f64; 2]> {
    match (dists[0].exponential_rate(), dists[1].exponential_rate()) {
        (Some(a), Some(b)) => Ok([a, b]),
        _ => Err(Error::MethodMismatch("closed-form route needs exponential sojourns".into())),
    }
}

/// Closed-form means and variances at increasing `points`.
pub fn closed_form_moments(
    regime: &RegimeSpec,
    dists: &[SojournDistribution; 2],
    points: &[f64],
    mode: VarianceMode,
) -> Result<MomentCurves> {
    let model = RenewalModel::new(regime, dists);
    let mean = ExpMean::new(&model)?;
    let m = mean.m;
    check_points(points)?;
    let mut mu = [Vec::with_capacity(points.len()), Vec::with_capacity(points.len())];
    for &t in points {
        let v = mean.at(t)?;
        mu[0].push(v[0]);
        mu[1].push(v[1]);
    }
    let err = std::cell::RefCell::new(None);
    let b = |t: f64| -> [f64; 2] {
        match variance_forcing_at(&model, &mean, t, mode) {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                [0.0; 2]
            }
        }
    };
    let mut sigma = solve_exp_pair(&m, b, points, 1e-13)?;
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    clamp_variance(&mut sigma);
    Ok(MomentCurves { t: points.to_vec(), mu, sigma, conditional: None })
}

/// `b_i(t)` with means from the closed form.
fn variance_forcing_at(model: &RenewalModel, mean: &ExpMean<'_>, t: f64, mode: VarianceMode) -> Result<[f64; 2]> {
    if t <= 0.0 {
        return Ok([0.0; 2]);
    }
    let mu_t = mean.at(t)?;
    let mut out = [0.0; 2];
    for i in 0..2 {
        let c = mu_t[i];
        let k = model.coefficients(i, t)?;
        let first = match mode {
            VarianceMode::Exact => k.l_sq_bar - 2.0 * c * k.l_bar + c * c,
            VarianceMode::SquaredMean => (k.l_bar - c) * (k.l_bar - c),
        };
        let err = std::cell::RefCell::new(None);
        let dist = &model.dists[i];
        let integral = quad::integrate(
            |u| {
                let r = (|| -> Result<f64> {
                    let k = model.coefficients(i, u)?;
                    let d = mean.at(t - u)?[1 - i] - c;
                    let m1 = k.l_bar + k.h;
                    let v = match mode {
                        VarianceMode::Exact => {
                            k.l_sq_bar + 2.0 * k.h * k.l_bar + k.h * k.h + 2.0 * d * m1 + d * d
                        }
                        VarianceMode::SquaredMean => (m1 + d) * (m1 + d),
                    };
                    Ok(v * dist.density(u))
                })();
                r.unwrap_or_else(|e| {
                    err.borrow_mut().get_or_insert(e);
                    0.0
                })
            },
            0.0,
            t,
            1e-13,
        );
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        out[i] = dist.survival(t) * first + integral;
    }
    Ok(out)
}
