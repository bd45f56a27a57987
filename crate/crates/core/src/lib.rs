//! Evidential value for fabrication of the raw data behind a published ANOVA
//! table, computed from cell means, F-statistics and observation counts.
//!
//! The crate is organized bottom-up:
//!
//! * [`study`] — the study-file model (design, cell means, grouping, F-statistics).
//! * [`density`] — equicorrelated normal log-densities in closed form.
//! * [`variance`] — recovery of the error variance from F-statistics and the
//!   worst-case table inside the rounding box.
//! * [`evidence`] — S statistics, correlation estimates and the evidential value.
//! * [`simulation`] — the copying model, Monte Carlo calibration and numerical
//!   oracles for the closed forms.
//! * [`report`] — command orchestration and machine-readable reports.

pub mod density;
pub mod error;
pub mod evidence;
pub mod report;
pub mod simulation;
pub mod study;
pub mod variance;

pub use error::{Error, Result};
