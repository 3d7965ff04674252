//! Coupled renewal-type Volterra pairs
//!
//! ```text
//! u_0(t) = g_0(t) + integral_0^t u_1(t - v) f_0(v) dv
//! u_1(t) = g_1(t) + integral_0^t u_0(t - v) f_1(v) dv
//! ```
//!
//! solved by product trapezoidal integration: the unknown is interpolated
//! linearly on each cell and integrated exactly against the kernel, so only
//! the kernel's cell moments enter. Densities that blow up at the origin
//! (Weibull shape below one) are handled without special cases.

use crate::error::{Error, Result};
use crate::switching::SojournDistribution;

/// Uniform grid `t_k = k * step`, `k = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub step: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("bad grid: t_max={t_max}, step={step}")));
        }
        let n = (t_max / step).round() as usize;
        if n == 0 || ((n as f64 * step) - t_max).abs() > 1e-9 * t_max {
            return Err(Error::InvalidParameter(format!("t_max={t_max} is not a multiple of step={step}")));
        }
        Ok(Self { step, n })
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    pub fn t_max(&self) -> f64 {
        self.t(self.n)
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.t(k)).collect()
    }

    /// Node index of `t` when it lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.step).round();
        if k >= 0.0 && k as usize <= self.n && (k * self.step - t).abs() <= 1e-9 * self.step.max(t) {
            Some(k as usize)
        } else {
            None
        }
    }
}

/// Cell moments of a sojourn density on `[shift + k step, shift + (k+1) step]`:
/// `m0 = integral f`, `m1 = integral f (v - v_k) / step`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductWeights {
    pub m0: Vec<f64>,
    pub m1: Vec<f64>,
}

impl ProductWeights {
    pub fn new(dist: &SojournDistribution, grid: &TimeGrid) -> Self {
        Self::shifted(dist, grid.step, grid.n, 0.0)
    }

    /// Moments of `cells` cells starting at `shift`.
    pub fn shifted(dist: &SojournDistribution, step: f64, cells: usize, shift: f64) -> Self {
        let mut m0 = Vec::with_capacity(cells);
        let mut m1 = Vec::with_capacity(cells);
        let mut s_lo = dist.survival(shift);
        for k in 0..cells {
            let a = shift + k as f64 * step;
            let b = a + step;
            let s_hi = dist.survival(b);
            let int_s = dist.integrated_survival(a, b);
            m0.push(s_lo - s_hi);
            m1.push(((int_s - step * s_hi) / step).max(0.0));
            s_lo = s_hi;
        }
        Self { m0, m1 }
    }

    pub fn zero(cells: usize) -> Self {
        Self { m0: vec![0.0; cells], m1: vec![0.0; cells] }
    }

    pub fn cells(&self) -> usize {
        self.m0.len()
    }

    /// `integral over cells a..b of g(v) f(v) dv` with `g` linear per cell,
    /// given by its node values `g(k)` for `k` in `a..=b`.
    pub fn integrate_nodal<G: FnMut(usize) -> f64>(&self, a: usize, b: usize, mut g: G) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut acc = 0.0;
        let mut g_lo = g(a);
        for k in a..b {
            let g_hi = g(k + 1);
            acc += (self.m0[k] - self.m1[k]) * g_lo + self.m1[k] * g_hi;
            g_lo = g_hi;
        }
        acc
    }

    /// Convolution weights: coefficient of `U[n - j]` in
    /// `integral_0^{t_n} U(t_n - v) f(v) dv`. `w[0]` multiplies the current
    /// value; the value at `U[0]` gets the end weight `m1[n-1]` separately.
    fn convolution(&self) -> Vec<f64> {
        let n = self.cells();
        let mut w = vec![0.0; n + 1];
        for j in 0..n {
            w[j] += self.m0[j] - self.m1[j];
            w[j + 1] += self.m1[j];
        }
        w
    }
}

/// Precomputed product weights for both kernels on one grid.
#[derive(Debug, Clone)]
pub struct VolterraKernels {
    pub grid: TimeGrid,
    pub weights: [ProductWeights; 2],
}

impl VolterraKernels {
    pub fn new(kernels: [&SojournDistribution; 2], grid: TimeGrid) -> Self {
        Self { grid, weights: [ProductWeights::new(kernels[0], &grid), ProductWeights::new(kernels[1], &grid)] }
    }

    pub fn from_weights(grid: TimeGrid, weights: [ProductWeights; 2]) -> Self {
        assert!(weights.iter().all(|w| w.cells() >= grid.n));
        Self { grid, weights }
    }

    pub fn solve(&self, forcing: [&[f64]; 2]) -> Result<[Vec<f64>; 2]> {
        let n = self.grid.n;
        if forcing.iter().any(|g| g.len() != n + 1) {
            return Err(Error::InvalidParameter(format!("forcing must have {} values", n + 1)));
        }
        let conv = [self.weights[0].convolution(), self.weights[1].convolution()];
        let mut u = [vec![0.0; n + 1], vec![0.0; n + 1]];
        u[0][0] = forcing[0][0];
        u[1][0] = forcing[1][0];
        for m in 1..=n {
            // known part of each convolution: U[m-j] for j = 1..m-1, and the
            // end cell, whose weight at U[0] is m1[m-1] only.
            let mut r = [forcing[0][m], forcing[1][m]];
            for i in 0..2 {
                let w = &conv[i];
                let other = &u[1 - i];
                let mut acc = 0.0;
                for j in 1..m {
                    acc += w[j] * other[m - j];
                }
                acc += self.weights[i].m1[m - 1] * other[0];
                r[i] += acc;
            }
            let a0 = conv[0][0];
            let a1 = conv[1][0];
            let det = 1.0 - a0 * a1;
            let u0 = (r[0] + a0 * r[1]) / det;
            let u1 = (r[1] + a1 * r[0]) / det;
            if !u0.is_finite() || !u1.is_finite() {
                return Err(Error::Overflow(format!("Volterra solution not finite at t={}", self.grid.t(m))));
            }
            u[0][m] = u0;
            u[1][m] = u1;
        }
        Ok(u)
    }

    /// `integral_0^{t_m} u(t_m - v) f_i(v) dv` on every node `m`.
    pub fn convolve(&self, i: usize, u: &[f64]) -> Vec<f64> {
        let n = self.grid.n;
        (0..=n)
            .map(|m| self.weights[i].integrate_nodal(0, m, |k| u[m - k]))
            .collect()
    }
}

/// A coupled pair with its kernels and forcings.
#[derive(Debug, Clone)]
pub struct VolterraPairProblem {
    pub grid: TimeGrid,
    pub kernels: [SojournDistribution; 2],
    pub forcing: [Vec<f64>; 2],
}

pub fn solve_volterra_pair(problem: &VolterraPairProblem) -> Result<[Vec<f64>; 2]> {
    let k = VolterraKernels::new([&problem.kernels[0], &problem.kernels[1]], problem.grid);
    k.solve([&problem.forcing[0], &problem.forcing[1]])
}
