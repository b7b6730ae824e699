//! Result documents: a provenance header, the labelled hierarchy
//! (lines → sections → components), the energy breakdown and search
//! statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::RunConfig;
use crate::fusion::CodeAssignment;
use crate::ingest::{to_pretty_json, write_config};
use crate::objective::EnergyBreakdown;
use crate::optimizer::SearchReport;
use crate::plant::{ClassVocabularies, ComponentClass, GroupDraft, HierarchicalStructure, PlantInstance, StructureDraft};

pub const TOOL_NAME: &str = "plantstruct";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("{path}: unknown label `{label}`")]
    UnknownLabel { path: String, label: String },
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        write!(out, "{b:02x}").expect("writing to a String cannot fail");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub tool: String,
    pub version: String,
    /// digest of the canonical configuration text
    pub config_sha256: String,
    /// input name → digest of its raw bytes
    pub inputs: BTreeMap<String, String>,
}

impl Header {
    pub fn new<'a>(config_text: &str, inputs: impl IntoIterator<Item = (&'a str, &'a [u8])>) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            inputs: inputs.into_iter().map(|(name, bytes)| (name.to_string(), sha256_hex(bytes))).collect(),
        }
    }

    /// Header for a run driven by `config`, hashed in its canonical form.
    pub fn for_run<'a>(config: &RunConfig, inputs: impl IntoIterator<Item = (&'a str, &'a [u8])>) -> Self {
        Self::new(&write_config(config), inputs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyDocument {
    pub lines: Vec<LineDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineDocument {
    pub id: usize,
    pub class: String,
    pub sections: Vec<SectionDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionDocument {
    pub id: usize,
    pub class: String,
    pub components: Vec<ComponentDocument>,
}

/// `id` is the component's position in the scene graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDocument {
    pub id: usize,
    pub class: ComponentClass,
}

pub fn hierarchy_document(s: &HierarchicalStructure, vocab: &ClassVocabularies) -> HierarchyDocument {
    let sections = s.sections();
    let lines = s
        .lines()
        .into_iter()
        .enumerate()
        .map(|(l, members)| LineDocument {
            id: l,
            class: vocab.line_classes()[s.line_class[l]].clone(),
            sections: members
                .into_iter()
                .map(|k| SectionDocument {
                    id: k,
                    class: vocab.section_classes()[s.section_class[k]].clone(),
                    components: sections[k]
                        .iter()
                        .map(|&i| ComponentDocument {
                            id: i,
                            class: vocab.component_classes()[s.component_class[i]].clone(),
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();
    HierarchyDocument { lines }
}

/// Resolves labels back to class ids. Group membership is kept as written,
/// so overlaps and gaps surface in [`crate::plant::validate_draft`].
pub fn draft_from_hierarchy(doc: &HierarchyDocument, vocab: &ClassVocabularies) -> Result<StructureDraft, ReportError> {
    let unknown = |path: String, label: &str| ReportError::UnknownLabel {
        path,
        label: label.to_string(),
    };
    let mut draft = StructureDraft::default();
    for (li, line) in doc.lines.iter().enumerate() {
        let line_class = vocab
            .line_index(&line.class)
            .ok_or_else(|| unknown(format!("lines[{li}].class"), &line.class))?;
        let line_group = draft.lines.entry(line.id).or_insert(GroupDraft {
            class: line_class,
            members: Vec::new(),
        });
        line_group.members.extend(line.sections.iter().map(|s| s.id));
        for (si, section) in line.sections.iter().enumerate() {
            let path = format!("lines[{li}].sections[{si}]");
            let section_class = vocab
                .section_index(&section.class)
                .ok_or_else(|| unknown(format!("{path}.class"), &section.class))?;
            let group = draft.sections.entry(section.id).or_insert(GroupDraft {
                class: section_class,
                members: Vec::new(),
            });
            for (ci, c) in section.components.iter().enumerate() {
                let class = vocab
                    .component_index(&c.class)
                    .ok_or_else(|| unknown(format!("{path}.components[{ci}].class"), &c.class.to_string()))?;
                group.members.push(c.id);
                draft.component_class.insert(c.id, class);
            }
        }
    }
    Ok(draft)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Anneal,
    BruteForce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchStats {
    pub method: Method,
    pub iterations: u64,
    pub restarts: u64,
    pub accepted_moves: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultDocument {
    pub header: Header,
    pub hierarchy: HierarchyDocument,
    pub energy: EnergyBreakdown,
    pub search: SearchStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matching: Option<CodeAssignment>,
}

impl ResultDocument {
    pub fn new(
        header: Header,
        inst: &PlantInstance,
        report: &SearchReport,
        method: Method,
        matching: Option<CodeAssignment>,
    ) -> Self {
        Self {
            header,
            hierarchy: hierarchy_document(&report.best, inst.vocab()),
            energy: report.best_score,
            search: SearchStats {
                method,
                iterations: report.iterations,
                restarts: report.restarts,
                accepted_moves: report.accepted_moves,
                seed: report.seed,
            },
            matching,
        }
    }

    pub fn to_json(&self) -> String {
        to_pretty_json(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::validate_draft;
    use crate::plant::tests::{arb_structure, uniform_instance, vocab};
    use proptest::prelude::*;

    #[test]
    fn sha256_known_vectors() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn header_digests_inputs_and_config() {
        let config = RunConfig::default();
        let a = Header::for_run(&config, [("scene_graph", b"x".as_slice())]);
        let b = Header::for_run(&RunConfig { seed: 1, ..config }, [("scene_graph", b"x".as_slice())]);
        assert_eq!(a.inputs["scene_graph"], sha256_hex(b"x"));
        assert_ne!(a.config_sha256, b.config_sha256);
        assert_eq!(a.version, TOOL_VERSION);
    }

    #[test]
    fn unknown_label_is_reported_with_path() {
        let s = HierarchicalStructure::singletons(1);
        let mut doc = hierarchy_document(&s, &vocab(2, 1));
        doc.lines[0].sections[0].class = "bogus".into();
        assert_eq!(
            draft_from_hierarchy(&doc, &vocab(2, 1)),
            Err(ReportError::UnknownLabel {
                path: "lines[0].sections[0].class".into(),
                label: "bogus".into()
            })
        );
    }

    proptest! {
        #[test]
        fn hierarchy_round_trips(s in arb_structure(6)) {
            let s = s.canonicalize();
            let inst = uniform_instance(s.n_components(), 3, 3);
            let doc = hierarchy_document(&s, inst.vocab());
            let json = serde_json::to_string(&doc).unwrap();
            let back: HierarchyDocument = serde_json::from_str(&json).unwrap();
            let draft = draft_from_hierarchy(&back, inst.vocab()).unwrap();
            let parsed = validate_draft(&draft, &inst).unwrap();
            prop_assert_eq!(parsed.canonicalize(), s);
        }
    }
}
