//! Distribution of `X(t)` for velocities that do not depend on the previous
//! sojourn.
//!
//! Starting in state `i`, either no switch occurs before `t` (an atom at
//! `l_i(t)` with mass `Fbar_i(t)`) or the first switch happens at `u` and the
//! process restarts in state `1 - i`, shifted by `l_i(u) + h_i(u)`:
//!
//! ```text
//! P_i(t, dx) = Fbar_i(t) delta_{l_i(t)} + integral_0^t f_i(u) P_{1-i}(t - u, dx - l_i(u) - h_i(u)) du
//! ```
//!
//! The absolutely continuous parts are stored as cell masses on a uniform
//! `x` grid and stepped forward in time. Shifted masses are split between
//! the two cells they overlap; the restarted process's own atom is smeared
//! over `u` and deposited as uniform segments.

use crate::error::{Error, Result};
use crate::process::{sample_points, RegimeSpec};
use crate::rng;
use crate::switching::{SojournDistribution, State, SwitchingModel};

use super::volterra::ProductWeights;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityOptions {
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
    /// Target time step; the step actually used divides `t - s` evenly.
    pub time_step: f64,
    /// Sub-intervals per time step for the smeared atom deposits.
    pub substeps: usize,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self { x_min: -1.0, x_max: 1.0, cells: 400, time_step: 1e-3, substeps: 4 }
    }
}

/// Densities `p_i(x, t | s)` on cell centres together with the atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySurface {
    pub x_edges: Vec<f64>,
    pub x: Vec<f64>,
    pub s: f64,
    pub t: Vec<f64>,
    /// `p[i][n][m]`: density of the continuous part for start state `i`.
    pub p: [Vec<Vec<f64>>; 2],
    /// `(location, mass)` of the no-switch atom for each start state and time.
    pub atoms: [Vec<(f64, f64)>; 2],
    /// Continuous mass that left the `x` grid.
    pub outside: [Vec<f64>; 2],
}

impl DensitySurface {
    pub fn cell_width(&self) -> f64 {
        self.x_edges[1] - self.x_edges[0]
    }

    /// Atom mass plus integrated density at time index `n`.
    pub fn total_mass(&self, state: State, n: usize) -> f64 {
        let i = state.idx();
        self.atoms[i][n].1 + self.p[i][n].iter().sum::<f64>() * self.cell_width()
    }

    /// Cell probabilities (continuous part only) at time index `n`.
    pub fn cell_masses(&self, state: State, n: usize) -> Vec<f64> {
        let w = self.cell_width();
        self.p[state.idx()][n].iter().map(|d| d * w).collect()
    }
}

struct Cells {
    lo: f64,
    dx: f64,
    m: usize,
}

impl Cells {
    /// Adds `weight * src` shifted right by `d` into `dst`; returns lost mass.
    fn shift_add(&self, dst: &mut [f64], src: &[f64], d: f64, weight: f64) -> f64 {
        if weight == 0.0 {
            return 0.0;
        }
        let o = d / self.dx;
        let k = o.floor();
        let frac = o - k;
        let k = k as i64;
        let m = self.m as i64;
        let mut lost = 0.0;
        for (j, &q) in src.iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let q = q * weight;
            let a = j as i64 + k;
            let (qa, qb) = (q * (1.0 - frac), q * frac);
            if (0..m).contains(&a) {
                dst[a as usize] += qa;
            } else {
                lost += qa;
            }
            if (0..m).contains(&(a + 1)) {
                dst[(a + 1) as usize] += qb;
            } else {
                lost += qb;
            }
        }
        lost
    }

    /// Spreads `mass` uniformly over the segment between `y0` and `y1`.
    fn deposit(&self, dst: &mut [f64], y0: f64, y1: f64, mass: f64) -> f64 {
        let (a, b) = if y0 <= y1 { (y0, y1) } else { (y1, y0) };
        let pa = (a - self.lo) / self.dx;
        let pb = (b - self.lo) / self.dx;
        let m = self.m as f64;
        if pb - pa < 1e-12 {
            if pa >= 0.0 && pa < m {
                dst[pa as usize] += mass;
                return 0.0;
            }
            return mass;
        }
        let dens = mass / (pb - pa);
        let mut placed = 0.0;
        let first = pa.max(0.0).floor() as usize;
        let last = (pb.min(m).ceil() as usize).min(self.m);
        for (c, slot) in dst.iter_mut().enumerate().take(last).skip(first) {
            let lo = (c as f64).max(pa);
            let hi = ((c + 1) as f64).min(pb);
            if hi > lo {
                let v = dens * (hi - lo);
                *slot += v;
                placed += v;
            }
        }
        mass - placed
    }
}

fn check_options(opts: &DensityOptions) -> Result<()> {
    if !(opts.x_max > opts.x_min) || opts.cells < 2 || !(opts.time_step > 0.0) || opts.substeps == 0 {
        return Err(Error::InvalidParameter("density grid needs x_max > x_min, cells >= 2, step > 0".into()));
    }
    Ok(())
}

/// Law of `X(t)` given no switch before `s`, for both start states, on the
/// times `s + k dt` up to `t`.
pub fn density_surface(
    regime: &RegimeSpec,
    dists: &[SojournDistribution; 2],
    t: f64,
    s: f64,
    opts: &DensityOptions,
) -> Result<DensitySurface> {
    check_options(opts)?;
    if regime.depends_on_prev() {
        return Err(Error::UnsupportedRegime(
            "density solver needs velocities independent of the previous sojourn; use mc_density".into(),
        ));
    }
    if !(s >= 0.0 && t > s) {
        return Err(Error::Domain(format!("need 0 <= s < t, got s={s}, t={t}")));
    }
    let span = t - s;
    let steps = (span / opts.time_step).ceil().max(1.0) as usize;
    let dt = span / steps as f64;
    let cells = Cells { lo: opts.x_min, dx: (opts.x_max - opts.x_min) / opts.cells as f64, m: opts.cells };
    let mc = opts.cells;

    let disp = |i: usize, u: f64| regime.states[i].velocity.displacement(0.0, 0.0, u);
    let jump = |i: usize, u: f64| regime.states[i].jump.value(u);

    // unconditional cell masses Q_i[n] at times n dt, n = 0..=steps
    let w: [ProductWeights; 2] = [ProductWeights::shifted(&dists[0], dt, steps, 0.0), ProductWeights::shifted(&dists[1], dt, steps, 0.0)];
    let mut shift = [Vec::with_capacity(steps + 1), Vec::with_capacity(steps + 1)];
    for (i, sh) in shift.iter_mut().enumerate() {
        for k in 0..=steps {
            let u = k as f64 * dt;
            sh.push(disp(i, u)? + jump(i, u));
        }
    }
    let mut q: [Vec<Vec<f64>>; 2] = [vec![vec![0.0; mc]], vec![vec![0.0; mc]]];
    let mut lost: [Vec<f64>; 2] = [vec![0.0], vec![0.0]];

    // contribution of the restarted atom over u in [u_a, u_b], landing at
    // time `time`: location l_i(u) + h_i(u) + l_{1-i}(time - u)
    let atom_deposit = |dst: &mut [f64], i: usize, dist: &SojournDistribution, time: f64, u_a: f64, u_b: f64, norm: f64| -> Result<f64> {
        let sub = opts.substeps;
        let h = (u_b - u_a) / sub as f64;
        let other = &dists[1 - i];
        let y = |u: f64| -> Result<f64> { Ok(disp(i, u)? + jump(i, u) + disp(1 - i, time - u)?) };
        let mut lost = 0.0;
        let mut ya = y(u_a)?;
        let mut sa = dist.survival(u_a);
        for j in 0..sub {
            let ub = u_a + (j + 1) as f64 * h;
            let yb = y(ub)?;
            let sb = dist.survival(ub);
            let mass = (sa - sb) * other.survival(time - (ub - 0.5 * h)) / norm;
            lost += cells.deposit(dst, ya, yb, mass);
            ya = yb;
            sa = sb;
        }
        Ok(lost)
    };

    for n in 1..=steps {
        let time = n as f64 * dt;
        let mut rest = [vec![0.0; mc], vec![0.0; mc]];
        let mut lost_n = [0.0; 2];
        for i in 0..2 {
            let other = &q[1 - i];
            let wi = &w[i];
            for k in 0..n {
                // (m0 - m1)[k] at u_k uses Q[n - k]; the k = 0 term is implicit
                if k > 0 {
                    lost_n[i] += cells.shift_add(&mut rest[i], &other[n - k], shift[i][k], wi.m0[k] - wi.m1[k]);
                }
                lost_n[i] += cells.shift_add(&mut rest[i], &other[n - k - 1], shift[i][k + 1], wi.m1[k]);
                lost_n[i] += atom_deposit(&mut rest[i], i, &dists[i], time, k as f64 * dt, (k + 1) as f64 * dt, 1.0)?;
            }
        }
        // implicit end term by fixed-point iteration, seeded with the previous step
        let mut cur = [q[0][n - 1].clone(), q[1][n - 1].clone()];
        let mut lost_implicit = [0.0; 2];
        for _ in 0..4 {
            let mut next = [rest[0].clone(), rest[1].clone()];
            for i in 0..2 {
                lost_implicit[i] = cells.shift_add(&mut next[i], &cur[1 - i], shift[i][0], w[i].m0[0] - w[i].m1[0]);
            }
            cur = next;
        }
        for i in 0..2 {
            lost[i].push(lost_n[i] + lost_implicit[i]);
        }
        let [c0, c1] = cur;
        q[0].push(c0);
        q[1].push(c1);
    }

    let x_edges: Vec<f64> = (0..=mc).map(|k| cells.lo + k as f64 * cells.dx).collect();
    let x: Vec<f64> = (0..mc).map(|k| cells.lo + (k as f64 + 0.5) * cells.dx).collect();
    let times: Vec<f64> = (0..=steps).map(|k| s + k as f64 * dt).collect();
    let mut p: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    let mut atoms: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    let mut outside: [Vec<f64>; 2] = [Vec::new(), Vec::new()];

    if s == 0.0 {
        for i in 0..2 {
            for (n, &tn) in times.iter().enumerate() {
                p[i].push(q[i][n].iter().map(|v| v / cells.dx).collect());
                atoms[i].push((disp(i, tn)?, dists[i].survival(tn)));
                outside[i].push(lost[i][n]);
            }
        }
    } else {
        // condition on no switch before s: first switch u in [s, s + j dt]
        for i in 0..2 {
            let norm = dists[i].survival(s);
            if norm < 1e-300 {
                return Err(Error::DegenerateCondition(format!("survival of state {i} at s={s} underflows")));
            }
            let wi = ProductWeights::shifted(&dists[i], dt, steps, s);
            let sh: Vec<f64> = (0..=steps)
                .map(|k| {
                    let u = s + k as f64 * dt;
                    Ok(disp(i, u)? + jump(i, u))
                })
                .collect::<Result<_>>()?;
            for (j, &tn) in times.iter().enumerate() {
                let mut acc = vec![0.0; mc];
                let mut out_mass = 0.0;
                for k in 0..j {
                    // u = s + k dt, so t - u = (j - k) dt
                    out_mass += cells.shift_add(&mut acc, &q[1 - i][j - k], sh[k], (wi.m0[k] - wi.m1[k]) / norm);
                    out_mass += cells.shift_add(&mut acc, &q[1 - i][j - k - 1], sh[k + 1], wi.m1[k] / norm);
                    let ua = s + k as f64 * dt;
                    out_mass += atom_deposit(&mut acc, i, &dists[i], tn, ua, ua + dt, norm)?;
                }
                p[i].push(acc.iter().map(|v| v / cells.dx).collect());
                atoms[i].push((disp(i, tn)?, dists[i].survival(tn) / norm));
                outside[i].push(out_mass);
            }
        }
    }
    Ok(DensitySurface { x_edges, x, s, t: times, p, atoms, outside })
}

/// Histogram of `X(t)` from simulated paths; paths without a switch are
/// counted separately as the estimate of the atom.
#[derive(Debug, Clone, PartialEq)]
pub struct McDensity {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n_paths: usize,
    pub no_switch: u64,
    /// Switched paths falling outside the edges.
    pub outside: u64,
    pub atom_fraction: f64,
    pub atom_se: f64,
}

impl McDensity {
    /// Histogram density of the continuous part.
    pub fn density(&self) -> Vec<f64> {
        let n = self.n_paths as f64;
        self.counts
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&c, e)| c as f64 / n / (e[1] - e[0]))
            .collect()
    }
}

pub fn mc_density(
    model: &SwitchingModel,
    regime: &RegimeSpec,
    t: f64,
    edges: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<McDensity> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("histogram edges must be strictly increasing".into()));
    }
    if !(t > 0.0) || n_paths == 0 {
        return Err(Error::InvalidParameter("need t > 0 and at least one path".into()));
    }
    let points = rng::try_replicate(n_paths, seed, |r| Ok(sample_points(model, regime, &[t], r)?[0]))?;
    let mut counts = vec![0u64; edges.len() - 1];
    let (mut no_switch, mut outside) = (0u64, 0u64);
    for p in points {
        if p.switches == 0 {
            no_switch += 1;
            continue;
        }
        let k = edges.partition_point(|&e| e <= p.x);
        if k == 0 || k == edges.len() {
            outside += 1;
        } else {
            counts[k - 1] += 1;
        }
    }
    let frac = no_switch as f64 / n_paths as f64;
    Ok(McDensity {
        edges: edges.to_vec(),
        counts,
        n_paths,
        no_switch,
        outside,
        atom_fraction: frac,
        atom_se: (frac * (1.0 - frac) / n_paths as f64).sqrt(),
    })
}
