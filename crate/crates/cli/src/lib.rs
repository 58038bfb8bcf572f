//! Batch driver for the decomposition and common-trend pipeline.
//!
//! Output layout under the configured directory:
//!
//! ```text
//! config.effective.toml        every setting, defaults included
//! manifest.json                command and per-series failures
//! <depth>m/panel.csv           box-averaged series
//! <depth>m/decomp/<box>.csv    components per box, manifest.json with fits
//! <depth>m/trends/states.csv   predicted states and updated trends
//! <depth>m/trends/model.json   A, C, K, spectrum, events
//! <depth>m/maps/trend1.csv     correlation map; trend<j>.csv loadings, j ≥ 2
//! <depth>m/recon/<box>.csv     reconstructions over trends {1}, {1,2}, …
//! reports/change_points.csv    univariate and common-trend change points
//! reports/trends_<depth>m.csv  common trends on a relative scale
//! reports/stratification_<shallow>m_<deep>m.csv
//! ```

pub mod config;
pub mod pipeline;
pub mod simulate;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book {}
