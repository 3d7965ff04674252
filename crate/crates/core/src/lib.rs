//! Telegraph processes driven by two-state semi-Markov switching: simulation,
//! moment and density solvers, martingale checks, option pricing and
//! historical volatility.

pub mod analytic;
pub mod error;
pub mod interp;
pub mod market;
pub mod martingale;
pub mod process;
pub mod quad;
pub mod rng;
pub mod stats;
pub mod switching;
pub mod volatility;

pub use error::{Error, Result};
pub use process::{Jump, RegimeSpec, StateRegime, Velocity};
pub use switching::{PrevSojourn, SojournDistribution, State, SwitchingFlow, SwitchingModel};
