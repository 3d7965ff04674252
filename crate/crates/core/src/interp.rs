//! Interpolation on uniform grids.

/// Uniform one-dimensional grid `x_k = start + k * step`, `k = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformGrid {
    pub fn new(start: f64, end: f64, len: usize) -> Self {
        assert!(len >= 2 && end > start);
        Self { start, step: (end - start) / (len - 1) as f64, len }
    }

    pub fn at(&self, k: usize) -> f64 {
        self.start + self.step * k as f64
    }

    pub fn end(&self) -> f64 {
        self.at(self.len - 1)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.at(k)).collect()
    }

    /// Cell index and fractional position of `x`, clamped to the grid.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let pos = (x - self.start) / self.step;
        if pos <= 0.0 {
            return (0, 0.0);
        }
        let last = (self.len - 2) as f64;
        if pos >= last + 1.0 {
            return (self.len - 2, 1.0);
        }
        let k = pos.floor().min(last);
        (k as usize, pos - k)
    }
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Butland slopes).
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    grid: UniformGrid,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(grid: UniformGrid, values: Vec<f64>) -> Self {
        assert_eq!(grid.len, values.len());
        let slopes = monotone_slopes(grid.step, &values);
        Self { grid, values, slopes }
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Interpolated value; outside the grid the end value is held.
    pub fn eval(&self, x: f64) -> f64 {
        let (k, s) = self.grid.locate(x);
        hermite(self.values[k], self.values[k + 1], self.slopes[k], self.slopes[k + 1], self.grid.step, s)
    }
}

pub(crate) fn monotone_slopes(h: f64, y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut d = vec![0.0; n];
    if n < 2 {
        return d;
    }
    let delta: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    if n == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
        return d;
    }
    for k in 1..n - 1 {
        let (a, b) = (delta[k - 1], delta[k]);
        d[k] = if a * b <= 0.0 { 0.0 } else { 2.0 * a * b / (a + b) };
    }
    d[0] = end_slope(delta[0], delta[1]);
    d[n - 1] = end_slope(delta[n - 2], delta[n - 3]);
    d
}

fn end_slope(d0: f64, d1: f64) -> f64 {
    let s = (3.0 * d0 - d1) / 2.0;
    if s * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}

#[inline]
pub(crate) fn hermite(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
}

/// Piecewise-linear interpolation on sorted abscissae, flat outside.
pub fn linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    if x <= xs[0] {
        return ys[0];
    }
    let n = xs.len();
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x) - 1;
    let w = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + w * (ys[k + 1] - ys[k])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_nodes_and_linear_data() {
        let g = UniformGrid::new(-1.0, 2.0, 31);
        let vals: Vec<f64> = g.points().iter().map(|x| 3.0 * x - 1.0).collect();
        let p = MonotoneCubic::new(g, vals.clone());
        for k in 0..g.len {
            assert!((p.eval(g.at(k)) - vals[k]).abs() < 1e-14);
        }
        assert!((p.eval(0.123) - (3.0 * 0.123 - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn preserves_monotonicity_across_a_kink() {
        let g = UniformGrid::new(0.0, 2.0, 41);
        let vals: Vec<f64> = g.points().iter().map(|&x| (x - 1.0f64).max(0.0)).collect();
        let p = MonotoneCubic::new(g, vals);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=2000 {
            let v = p.eval(2.0 * k as f64 / 2000.0);
            assert!(v >= prev - 1e-15 && v >= -1e-15);
            prev = v;
        }
    }

    #[test]
    fn smooth_functions_converge() {
        let err = |n: usize| {
            let g = UniformGrid::new(0.0, 3.0, n);
            let p = MonotoneCubic::new(g, g.points().iter().map(|x| x.sin()).collect());
            (0..997).map(|k| 3.0 * k as f64 / 997.0).map(|x| (p.eval(x) - x.sin()).abs()).fold(0.0, f64::max)
        };
        assert!(err(201) < 1e-4);
        assert!(err(401) < err(201));
    }

    #[test]
    fn linear_interpolation_is_flat_outside() {
        let xs = [0.0, 1.0, 3.0];
        let ys = [1.0, 0.5, 0.0];
        assert_eq!(linear(&xs, &ys, -1.0), 1.0);
        assert_eq!(linear(&xs, &ys, 2.0), 0.25);
        assert_eq!(linear(&xs, &ys, 9.0), 0.0);
    }
}
