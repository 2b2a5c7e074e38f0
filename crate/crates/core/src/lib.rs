//! Semi-supervised learning by meta-gradient reweighting of pseudo-labeled
//! samples, on small dense networks, with the diagnostics needed to check the
//! method's claims numerically.
//!
//! ```
//! use meta_semi::data::{build_dataset, DatasetSource, DatasetSpec, LabelBudget};
//! use meta_semi::train::{train, TrainConfig};
//!
//! let spec = DatasetSpec {
//!     source: DatasetSource::TwoMoons { n: 200, noise: 0.1 },
//!     labels_per_class: LabelBudget::PerClass(3),
//!     val_fraction: 0.0,
//!     n_test: 100,
//!     test_fraction: 0.0,
//!     standardize: true,
//! };
//! let data = build_dataset(&spec, 7).unwrap();
//! let cfg = TrainConfig { hidden: vec![8], epochs: 2, ..TrainConfig::default() };
//! let (_, history) = train(&cfg, &data).unwrap();
//! assert_eq!(history.len(), 2);
//! ```

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod ema;
pub mod error;
pub mod meta;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/meta-gradient.md")]
    mod meta_gradient {}
    #[doc = include_str!("../../../book/src/linearity.md")]
    mod linearity {}
    #[doc = include_str!("../../../book/src/pseudo-labels.md")]
    mod pseudo_labels {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/files.md")]
    mod files {}
}
