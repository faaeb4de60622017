//! Hierarchical quadratic random forest for multichannel volumetric data.
//!
//! The forest grows one hierarchical decision tree per weak classifier. Each
//! tree maps the resolution layers of a multiresolution patch pyramid onto its
//! own layers: a decision node classifies the patches it receives with a
//! group-Lasso-penalized multiclass sparse discriminant over squared features,
//! then decomposes every patch into its eight finer-resolution children and
//! routes them along the branch of the estimated class. Leaves collect voxel
//! statistics at the finest resolution.
//!
//! Crate layout follows the pipeline:
//! - [`stats`]: class-conditional statistics and impurity measures
//! - [`msda`]: the group-Lasso blockwise coordinate-descent solver
//! - [`discriminant`]: per-node scores, threshold search, LDA/QDA baselines
//! - [`pyramid`]: volume ingestion and the multiresolution patch pyramid
//! - [`features`]: local/contextual feature extraction and squared expansion
//! - [`smote`]: per-node class balancing by convex interpolation
//! - [`forest`]: tree growth, prediction, consolidation, graph-record export
//! - [`hyperopt`]: random hyperparameter search with the 20-trial stopping rule
//! - [`synth`]: synthetic labeled volume generation
//! - [`io`]: MRV1 volumes, model persistence, manifests, reports
//!
//! The `parallel` feature (default) runs the data-parallel inner loops on
//! rayon; without it every loop degrades to its sequential form.

pub mod discriminant;
pub mod error;
pub mod features;
pub mod forest;
pub mod hyperopt;
pub mod io;
pub mod msda;
pub(crate) mod par;
pub mod pyramid;
pub mod smote;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
