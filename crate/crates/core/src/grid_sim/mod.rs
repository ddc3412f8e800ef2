//! Synthetic hourly load and phase-angle data from a DC power-flow surrogate.

mod dataset;
mod profile;
mod system;

pub use dataset::HourlyDataset;
pub use profile::{generate_year, LoadProfileSpec, PvProfileSpec, MIN_DAYS};
pub use system::{solve_dc_power_flow, BusSystem, DcSolver, Line, BALANCE_TOL};
