//! Moment and density analytics: a coupled Volterra solver, renewal
//! equations for means and variances, closed forms for exponential
//! sojourns and the distribution of `X(t)`.

mod closed_form;
mod density;
mod moments;
mod volterra;

pub use closed_form::{closed_form_mean_exp, closed_form_moments, phi_lambda, solve_exp_pair, ExpMean, MatrixExpLambda};
pub use density::{density_surface, mc_density, DensityOptions, DensitySurface, McDensity};
pub use moments::{
    conditional_mean, mean_forcing, variance_forcing, Coefficients, ConditionalCurves, MomentCurves, RenewalModel,
    VarianceMode,
};
pub use volterra::{solve_volterra_pair, ProductWeights, TimeGrid, VolterraKernels, VolterraPairProblem};

use crate::error::Result;
use crate::process::RegimeSpec;
use crate::switching::SojournDistribution;

/// Solver used for moment curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentMethod {
    /// Product-trapezoidal Volterra solve on the grid.
    #[default]
    Grid,
    /// Matrix-exponential closed form; exponential sojourns only.
    ClosedFormExp,
}

/// Means and variances of `X(t)` for both start states on `grid`.
pub fn variance_curves(
    regime: &RegimeSpec,
    dists: &[SojournDistribution; 2],
    grid: TimeGrid,
    method: MomentMethod,
    mode: VarianceMode,
) -> Result<MomentCurves> {
    match method {
        MomentMethod::Grid => RenewalModel::new(regime, dists).moments_grid(grid, mode),
        MomentMethod::ClosedFormExp => closed_form_moments(regime, dists, &grid.points(), mode),
    }
}
