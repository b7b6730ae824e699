//! End-to-end reconstruction: OCR/equipment fusion followed by search.

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::fusion::{fuse_instance, CodeAssignment, FusionError};
use crate::ingest::{EquipmentRow, OcrCode};
use crate::objective::PlausibilityModel;
use crate::optimizer::{anneal, OptimizerError, SearchReport};
use crate::plant::PlantInstance;
use crate::rules::Rulebook;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

#[derive(Debug, Clone, Serialize)]
pub struct Reconstruction {
    /// instance with fused class probabilities
    #[serde(skip)]
    pub fused: PlantInstance,
    pub assignment: CodeAssignment,
    pub report: SearchReport,
}

/// Fuses equipment evidence into `inst` and anneals the structure.
pub fn reconstruct(
    inst: &PlantInstance,
    codes: &[OcrCode],
    equipment: &[EquipmentRow],
    rulebook: &Rulebook,
    model: &PlausibilityModel,
    config: &RunConfig,
) -> Result<Reconstruction, PipelineError> {
    config.validate()?;
    let (fused, assignment) = fuse_instance(
        inst,
        codes,
        equipment,
        rulebook,
        config.beta,
        config.gamma,
        config.match_cutoff_factor,
    )?;
    let report = anneal(&fused, rulebook, model, config)?;
    Ok(Reconstruction {
        fused,
        assignment,
        report,
    })
}
