//! Reconstruction of a gas plant's hierarchical structure (components,
//! sections, lines) from scene-graph evidence, equipment lists, regulations
//! and registry statistics.

pub mod bench;
pub mod config;
pub mod egrtr;
pub mod fusion;
pub mod ingest;
pub mod objective;
pub mod optimizer;
pub mod pipeline;
pub mod plant;
pub mod report;
pub mod rules;

pub use config::{AnnealingSchedule, RunConfig};
pub use objective::{score, EnergyBreakdown, PlausibilityModel, Scorer};
pub use plant::{ClassVocabularies, ComponentClass, Detection, HierarchicalStructure, PlantInstance};
pub use rules::Rulebook;
