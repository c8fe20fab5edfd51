//! Cross-protocol harmonization: prediction onto a common design, feature
//! extraction and batch adjustment.

pub mod combat;
pub mod pipeline;

pub use combat::{apply_combat, combat, fit_combat, CombatModel, CombatOptions};
pub use pipeline::{harmonize_pipeline, DatasetFeatures, DatasetInput, PipelineConfig, PipelineOutput};
