//! The data model: functional panels, calendar dummies, spatial adjacency,
//! CAR precision matrices, the structured factor loading matrix, priors,
//! and the full parameter state of the model.

mod calendar;
mod graph;
mod hyper;
mod loading;
mod panel;
mod state;

pub use calendar::{build_calendar, Calendar, DayType, Extension};
pub use graph::{car_precision, reorder_for_factors, AdjacencyGraph, CarPrecision, Permutation};
pub use hyper::{parse_config, Hyperparams};
pub use loading::FactorLoading;
pub use panel::{denormalize_panel, normalize_panel, Cube, FunctionalPanel};
pub use state::ModelState;
