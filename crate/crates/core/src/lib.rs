//! Isolation Forest anomaly detection with weakly supervised tree selection.
//!
//! A standard forest is grown without labels. A small labeled subset then
//! ranks the trees by individual average precision, and only the best-ranked
//! prefix with the highest ensemble AP is kept. The reduced forest is usually
//! both more accurate and a fraction of the size of the original, which
//! matters when the model has to fit on a microcontroller.
//!
//! ```
//! use tiws::{data, forest::ForestParams, selection};
//!
//! let ds = data::make_toy(data::ToyKind::DoubleCluster, 200, 10, 1).unwrap();
//! let params = ForestParams::default().with_seed(7);
//! let (reduced, result) = selection::tiws_fit(ds.features(), &ds, &params).unwrap();
//! assert_eq!(reduced.n_trees(), result.selected_size);
//! assert!(result.selected_ap() >= result.full_forest_ap());
//! ```

pub mod data;
pub mod error;
pub mod experiment;
pub mod forest;
pub mod metrics;
pub mod selection;
pub mod store;

pub use error::{Error, Result};
