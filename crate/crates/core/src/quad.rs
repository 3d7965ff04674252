//! Quadrature rules used throughout the crate.
//!
//! * [`GaussLegendre`]: fixed n-point rule, nodes found by Newton iteration on
//!   the Legendre recurrence.
//! * [`adaptive_gauss_legendre`]: recursive bisection driven by the
//!   difference between a 10-point rule and its two halves.
//! * [`integrate`]: recursive Gauss–Kronrod 7/15, the workhorse for the
//!   closed-form routes where integrands are smooth but can be stiff near
//!   the origin.

use std::sync::OnceLock;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    pub fn try_integrate<F: FnMut(f64) -> Result<f64>>(&self, a: f64, b: f64, mut f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (x, w) in self.mapped(a, b) {
            acc += w * f(x)?;
        }
        Ok(acc)
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

pub(crate) fn gl(n: usize) -> &'static GaussLegendre {
    static GL8: OnceLock<GaussLegendre> = OnceLock::new();
    static GL10: OnceLock<GaussLegendre> = OnceLock::new();
    static GL64: OnceLock<GaussLegendre> = OnceLock::new();
    static GL256: OnceLock<GaussLegendre> = OnceLock::new();
    match n {
        8 => GL8.get_or_init(|| GaussLegendre::new(8)),
        10 => GL10.get_or_init(|| GaussLegendre::new(10)),
        64 => GL64.get_or_init(|| GaussLegendre::new(64)),
        256 => GL256.get_or_init(|| GaussLegendre::new(256)),
        _ => panic!("no cached Gauss-Legendre rule with {n} nodes"),
    }
}

const MAX_DEPTH: u32 = 48;

/// Adaptive Gauss–Legendre on `[a, b]` with absolute tolerance `tol`.
///
/// Returns the value together with the accumulated error estimate.
pub fn adaptive_gauss_legendre<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<(f64, f64)> {
    let mut f = f;
    if a == b {
        return Ok((0.0, 0.0));
    }
    let rule = gl(10);
    let whole = rule.integrate(a, b, &mut f);
    let mut err = 0.0;
    let v = agl_step(&mut f, rule, a, b, whole, tol, 0, &mut err);
    if err > tol {
        return Err(Error::QuadratureNonConvergence { estimate: err, tolerance: tol });
    }
    Ok((v, err))
}

#[allow(clippy::too_many_arguments)]
fn agl_step<F: FnMut(f64) -> f64>(
    f: &mut F,
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    err: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let left = rule.integrate(a, m, &mut *f);
    let right = rule.integrate(m, b, &mut *f);
    let diff = (left + right - whole).abs();
    if diff <= tol || depth >= MAX_DEPTH || m <= a || m >= b {
        *err += diff;
        return left + right;
    }
    agl_step(f, rule, a, m, left, 0.5 * tol, depth + 1, err)
        + agl_step(f, rule, m, b, right, 0.5 * tol, depth + 1, err)
}

// Gauss–Kronrod 7/15 abscissae and weights (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Recursive Gauss–Kronrod integration with absolute tolerance `tol`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    gk_step(&mut f, a, b, tol, 0)
}

fn gk_step<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (v, e) = gk15(f, a, b);
    let m = 0.5 * (a + b);
    if e <= tol || depth >= MAX_DEPTH || m <= a || m >= b {
        return v;
    }
    gk_step(f, a, m, 0.5 * tol, depth + 1) + gk_step(f, m, b, 0.5 * tol, depth + 1)
}

/// Vector-valued variant of [`integrate`]; the error test uses the largest
/// component error.
pub fn integrate_vec<const N: usize, F: FnMut(f64) -> [f64; N]>(mut f: F, a: f64, b: f64, tol: f64) -> [f64; N] {
    if a == b {
        return [0.0; N];
    }
    gk_vec_step(&mut f, a, b, tol, 0)
}

pub fn integrate_pair<F: FnMut(f64) -> [f64; 2]>(f: F, a: f64, b: f64, tol: f64) -> [f64; 2] {
    integrate_vec(f, a, b, tol)
}

fn gk_vec_step<const N: usize, F: FnMut(f64) -> [f64; N]>(f: &mut F, a: f64, b: f64, tol: f64, depth: u32) -> [f64; N] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = [0.0; N];
    let mut gauss = [0.0; N];
    for k in 0..N {
        kron[k] = fc[k] * WGK[7];
        gauss[k] = fc[k] * WG[3];
    }
    for j in 0..7 {
        let x = h * XGK[j];
        let lo = f(c - x);
        let hi = f(c + x);
        for k in 0..N {
            let s = lo[k] + hi[k];
            kron[k] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * s;
            }
        }
    }
    let mut v = [0.0; N];
    let mut e: f64 = 0.0;
    for k in 0..N {
        v[k] = kron[k] * h;
        e = e.max(((kron[k] - gauss[k]) * h).abs());
    }
    if e <= tol || depth >= MAX_DEPTH || c <= a || c >= b {
        return v;
    }
    let l = gk_vec_step(f, a, c, 0.5 * tol, depth + 1);
    let r = gk_vec_step(f, c, b, 0.5 * tol, depth + 1);
    let mut out = [0.0; N];
    for k in 0..N {
        out[k] = l[k] + r[k];
    }
    out
}
