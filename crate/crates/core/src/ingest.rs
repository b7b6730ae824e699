//! Parsing and serialization of every external document: scene graph,
//! equipment table, OCR codes, regulations, registry and run configuration.
//!
//! Structured documents are JSON; tables are comma-delimited UTF-8.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::objective::{ModelDocument, ObjectiveError, PlausibilityModel};
use crate::plant::{BBox, ClassVocabularies, ComponentClass, Detection, PlantError, PlantInstance};
use crate::rules::{CatalogueEntry, Rulebook};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed table: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing mandatory column `{0}`")]
    MissingColumn(&'static str),
    #[error("{path}: expected length {expected}, found {found}")]
    Dimension { path: String, expected: usize, found: usize },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: unknown label `{label}`")]
    UnknownLabel { path: String, label: String },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid model: {0}")]
    Model(#[from] ObjectiveError),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> IngestError {
    IngestError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

fn unknown(path: impl Into<String>, label: impl Into<String>) -> IngestError {
    IngestError::UnknownLabel {
        path: path.into(),
        label: label.into(),
    }
}

// ---------------------------------------------------------------------------
// scene graph

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGraphDocument {
    pub component_classes: Vec<ComponentClass>,
    pub section_classes: Vec<String>,
    pub line_classes: Vec<String>,
    pub detections: Vec<DetectionDocument>,
    pub g_conn: Vec<Vec<f64>>,
    pub g_rel: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionDocument {
    pub id: usize,
    pub bbox: [f64; 4],
    pub probs: Vec<f64>,
}

/// Just the three class lists; any document carrying them (a scene graph,
/// for instance) can serve as a vocabulary file.
#[derive(Debug, Clone, Deserialize)]
struct VocabularyDocument {
    component_classes: Vec<ComponentClass>,
    section_classes: Vec<String>,
    line_classes: Vec<String>,
}

pub fn parse_vocabularies(bytes: &[u8]) -> Result<ClassVocabularies, IngestError> {
    let doc: VocabularyDocument = serde_json::from_slice(bytes)?;
    Ok(ClassVocabularies::new(
        doc.component_classes,
        doc.section_classes,
        doc.line_classes,
    )?)
}

pub fn parse_scene_graph(bytes: &[u8]) -> Result<PlantInstance, IngestError> {
    let doc: SceneGraphDocument = serde_json::from_slice(bytes)?;
    scene_graph_from_document(doc)
}

pub fn scene_graph_from_document(doc: SceneGraphDocument) -> Result<PlantInstance, IngestError> {
    let vocab = ClassVocabularies::new(doc.component_classes, doc.section_classes, doc.line_classes)?;
    let n = doc.detections.len();
    let nt = vocab.n_section();

    let mut detections = Vec::with_capacity(n);
    for (pos, d) in doc.detections.into_iter().enumerate() {
        if d.probs.len() != vocab.n_component() {
            return Err(IngestError::Dimension {
                path: format!("detections[{pos}].probs"),
                expected: vocab.n_component(),
                found: d.probs.len(),
            });
        }
        let [x, y, w, h] = d.bbox;
        detections.push(Detection::new(d.id, BBox::new(x, y, w, h), d.probs)?);
    }

    check_len("g_conn", doc.g_conn.len(), n)?;
    let mut g_conn = Array2::zeros((n, n));
    for (i, row) in doc.g_conn.iter().enumerate() {
        check_len(&format!("g_conn[{i}]"), row.len(), n)?;
        for (j, &v) in row.iter().enumerate() {
            g_conn[[i, j]] = v;
        }
    }
    check_len("g_rel", doc.g_rel.len(), n)?;
    let mut g_rel = Array3::zeros((n, n, nt));
    for (i, plane) in doc.g_rel.iter().enumerate() {
        check_len(&format!("g_rel[{i}]"), plane.len(), n)?;
        for (j, row) in plane.iter().enumerate() {
            check_len(&format!("g_rel[{i}][{j}]"), row.len(), nt)?;
            for (k, &v) in row.iter().enumerate() {
                g_rel[[i, j, k]] = v;
            }
        }
    }
    Ok(PlantInstance::new(vocab, detections, g_conn, g_rel)?)
}

fn check_len(path: &str, found: usize, expected: usize) -> Result<(), IngestError> {
    if found == expected {
        Ok(())
    } else {
        Err(IngestError::Dimension {
            path: path.to_string(),
            expected,
            found,
        })
    }
}

pub fn scene_graph_document(inst: &PlantInstance) -> SceneGraphDocument {
    let vocab = inst.vocab();
    SceneGraphDocument {
        component_classes: vocab.component_classes().to_vec(),
        section_classes: vocab.section_classes().to_vec(),
        line_classes: vocab.line_classes().to_vec(),
        detections: inst
            .detections()
            .iter()
            .map(|d| {
                let b = d.bbox();
                DetectionDocument {
                    id: d.id(),
                    bbox: [b.x, b.y, b.w, b.h],
                    probs: d.probs().to_vec(),
                }
            })
            .collect(),
        g_conn: inst.g_conn().outer_iter().map(|r| r.to_vec()).collect(),
        g_rel: inst
            .g_rel()
            .outer_iter()
            .map(|plane| plane.outer_iter().map(|r| r.to_vec()).collect())
            .collect(),
    }
}

pub fn write_scene_graph(inst: &PlantInstance) -> String {
    to_pretty_json(&scene_graph_document(inst))
}

pub(crate) fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("document types always serialize");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// equipment list

/// One row of the extracted equipment list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquipmentRow {
    pub code: String,
    pub type_label: String,
    pub subtype_label: String,
    pub description: String,
    pub specs: BTreeMap<String, String>,
}

const EQUIPMENT_COLUMNS: [&str; 4] = ["code", "type", "subtype", "description"];

/// Parses the equipment table. Duplicate codes are kept and logged.
pub fn parse_equipment(bytes: &[u8]) -> Result<Vec<EquipmentRow>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = reader.headers()?.clone();
    let mut index = [0usize; 4];
    for (slot, name) in index.iter_mut().zip(EQUIPMENT_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(IngestError::MissingColumn(name))?;
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let code = field(index[0]);
        if code.trim().is_empty() {
            return Err(invalid(format!("row {}", line + 1), "empty equipment code"));
        }
        let specs = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !index.contains(i))
            .map(|(i, h)| (h.to_string(), field(i)))
            .collect();
        rows.push(EquipmentRow {
            code,
            type_label: field(index[1]),
            subtype_label: field(index[2]),
            description: field(index[3]),
            specs,
        });
    }
    for code in duplicate_codes(&rows) {
        log::warn!("equipment code `{code}` appears more than once; all rows kept");
    }
    Ok(rows)
}

pub fn duplicate_codes(rows: &[EquipmentRow]) -> Vec<String> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows {
        *seen.entry(&r.code).or_default() += 1;
    }
    seen.into_iter()
        .filter(|(_, n)| *n > 1)
        .map(|(c, _)| c.to_string())
        .collect()
}

pub fn write_equipment(rows: &[EquipmentRow]) -> String {
    let spec_keys: Vec<&String> = {
        let mut keys: Vec<&String> = rows.iter().flat_map(|r| r.specs.keys()).collect();
        keys.sort();
        keys.dedup();
        keys
    };
    let mut writer = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = EQUIPMENT_COLUMNS
        .iter()
        .copied()
        .chain(spec_keys.iter().map(|k| k.as_str()))
        .collect();
    writer.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut fields = vec![
            r.code.as_str(),
            r.type_label.as_str(),
            r.subtype_label.as_str(),
            r.description.as_str(),
        ];
        fields.extend(spec_keys.iter().map(|k| r.specs.get(*k).map(String::as_str).unwrap_or("")));
        writer.write_record(&fields).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

// ---------------------------------------------------------------------------
// OCR codes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrCode {
    pub code: String,
    pub x: f64,
    pub y: f64,
}

pub fn parse_ocr_codes(bytes: &[u8]) -> Result<Vec<OcrCode>, IngestError> {
    let codes: Vec<OcrCode> = serde_json::from_slice(bytes)?;
    for (i, c) in codes.iter().enumerate() {
        if !(c.x.is_finite() && c.y.is_finite()) {
            return Err(invalid(format!("[{i}]"), "coordinates must be finite"));
        }
    }
    Ok(codes)
}

pub fn write_ocr_codes(codes: &[OcrCode]) -> String {
    to_pretty_json(&codes)
}

// ---------------------------------------------------------------------------
// regulations

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulationsDocument {
    #[serde(default)]
    pub sections: Vec<SectionRuleDocument>,
    #[serde(default)]
    pub lines: Vec<LineRuleDocument>,
    #[serde(default)]
    pub catalogue: Vec<CatalogueDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionRuleDocument {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub mandatory: Vec<ComponentClass>,
    #[serde(default)]
    pub optional: Vec<ComponentClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRuleDocument {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub min_sections: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogueDocument {
    #[serde(rename = "type")]
    pub kind: String,
    pub subtype: String,
    #[serde(default)]
    pub mandatory_characteristics: Vec<String>,
}

pub fn parse_regulations(bytes: &[u8], vocab: &ClassVocabularies) -> Result<Rulebook, IngestError> {
    let doc: RegulationsDocument = serde_json::from_slice(bytes)?;
    rulebook_from_document(&doc, vocab)
}

pub fn rulebook_from_document(doc: &RegulationsDocument, vocab: &ClassVocabularies) -> Result<Rulebook, IngestError> {
    let mut rb = Rulebook::permissive(vocab.n_section(), vocab.n_line());
    let component = |path: String, c: &ComponentClass| vocab.component_index(c).ok_or_else(|| unknown(path, c.to_string()));

    for (i, rule) in doc.sections.iter().enumerate() {
        let t = vocab
            .section_index(&rule.kind)
            .ok_or_else(|| unknown(format!("sections[{i}].type"), &rule.kind))?;
        if rb.section_rules[t].is_some() {
            return Err(invalid(format!("sections[{i}]"), format!("duplicate rule for `{}`", rule.kind)));
        }
        let mandatory = rule
            .mandatory
            .iter()
            .enumerate()
            .map(|(j, c)| component(format!("sections[{i}].mandatory[{j}]"), c))
            .collect::<Result<Vec<_>, _>>()?;
        let optional = rule
            .optional
            .iter()
            .enumerate()
            .map(|(j, c)| component(format!("sections[{i}].optional[{j}]"), c))
            .collect::<Result<Vec<_>, _>>()?;
        rb.set_section_rule(t, mandatory, optional);
    }
    for (i, rule) in doc.lines.iter().enumerate() {
        let l = vocab
            .line_index(&rule.kind)
            .ok_or_else(|| unknown(format!("lines[{i}].type"), &rule.kind))?;
        if rb.line_rules[l].is_some() {
            return Err(invalid(format!("lines[{i}]"), format!("duplicate rule for `{}`", rule.kind)));
        }
        let min_sections = rule
            .min_sections
            .iter()
            .enumerate()
            .map(|(j, s)| {
                vocab
                    .section_index(s)
                    .ok_or_else(|| unknown(format!("lines[{i}].min_sections[{j}]"), s))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rb.set_line_rule(l, min_sections);
    }
    for (i, entry) in doc.catalogue.iter().enumerate() {
        let class = ComponentClass::new(&entry.kind, &entry.subtype);
        let index = component(format!("catalogue[{i}]"), &class)?;
        rb.catalogue.insert(
            class,
            CatalogueEntry {
                class: index,
                mandatory_characteristics: entry.mandatory_characteristics.clone(),
            },
        );
    }
    Ok(rb)
}

pub fn regulations_document(rb: &Rulebook, vocab: &ClassVocabularies) -> RegulationsDocument {
    let comp = |c: &usize| vocab.component_classes()[*c].clone();
    RegulationsDocument {
        sections: rb
            .section_rules
            .iter()
            .enumerate()
            .filter_map(|(t, r)| {
                r.as_ref().map(|r| SectionRuleDocument {
                    kind: vocab.section_classes()[t].clone(),
                    mandatory: r.mandatory.iter().map(comp).collect(),
                    optional: r.optional.iter().map(comp).collect(),
                })
            })
            .collect(),
        lines: rb
            .line_rules
            .iter()
            .enumerate()
            .filter_map(|(l, r)| {
                r.as_ref().map(|r| LineRuleDocument {
                    kind: vocab.line_classes()[l].clone(),
                    min_sections: r.min_sections.iter().map(|&s| vocab.section_classes()[s].clone()).collect(),
                })
            })
            .collect(),
        catalogue: rb
            .catalogue
            .iter()
            .map(|(class, e)| CatalogueDocument {
                kind: class.kind.clone(),
                subtype: class.subtype.clone(),
                mandatory_characteristics: e.mandatory_characteristics.clone(),
            })
            .collect(),
    }
}

pub fn write_regulations(rb: &Rulebook, vocab: &ClassVocabularies) -> String {
    to_pretty_json(&regulations_document(rb, vocab))
}

// ---------------------------------------------------------------------------
// registry

/// One installed plant from the registry, resolved against the vocabularies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryRecord {
    pub plant_id: String,
    pub lines: Vec<RegistryLine>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryLine {
    pub line_type: usize,
    pub sections: Vec<RegistrySection>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrySection {
    pub section_type: usize,
    pub components: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RegistryRow {
    plant_id: String,
    line_idx: usize,
    line_type: String,
    section_idx: usize,
    section_type: String,
    component_classes: String,
}

type PlantRows = BTreeMap<usize, (usize, BTreeMap<usize, RegistrySection>)>;

/// Parses the registry table (one row per section occurrence). Plants keep
/// their order of first appearance; lines and sections are ordered by index.
pub fn parse_registry(bytes: &[u8], vocab: &ClassVocabularies) -> Result<Vec<RegistryRecord>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(bytes);
    let mut order: Vec<String> = Vec::new();
    let mut plants: BTreeMap<String, PlantRows> = BTreeMap::new();
    for (i, row) in reader.deserialize::<RegistryRow>().enumerate() {
        let row = row?;
        let path = format!("row {}", i + 1);
        let line_type = vocab
            .line_index(&row.line_type)
            .ok_or_else(|| unknown(format!("{path}.line_type"), &row.line_type))?;
        let section_type = vocab
            .section_index(&row.section_type)
            .ok_or_else(|| unknown(format!("{path}.section_type"), &row.section_type))?;
        let components = row
            .component_classes
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|label| {
                label
                    .parse::<ComponentClass>()
                    .ok()
                    .and_then(|c| vocab.component_index(&c))
                    .ok_or_else(|| unknown(format!("{path}.component_classes"), label))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if components.is_empty() {
            return Err(invalid(path, "section without components"));
        }
        if !plants.contains_key(&row.plant_id) {
            order.push(row.plant_id.clone());
        }
        let lines = plants.entry(row.plant_id.clone()).or_default();
        let (lt, sections) = lines.entry(row.line_idx).or_insert((line_type, BTreeMap::new()));
        if *lt != line_type {
            return Err(invalid(path, format!("line {} changes type", row.line_idx)));
        }
        let section = RegistrySection {
            section_type,
            components,
        };
        match sections.get(&row.section_idx) {
            Some(prev) if *prev != section => {
                return Err(invalid(path, format!("conflicting rows for section {}", row.section_idx)));
            }
            Some(_) => {}
            None => {
                sections.insert(row.section_idx, section);
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let lines = plants.remove(&id).unwrap_or_default();
            RegistryRecord {
                plant_id: id,
                lines: lines
                    .into_values()
                    .map(|(line_type, sections)| RegistryLine {
                        line_type,
                        sections: sections.into_values().collect(),
                    })
                    .collect(),
            }
        })
        .collect())
}

pub fn write_registry(records: &[RegistryRecord], vocab: &ClassVocabularies) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in records {
        for (li, line) in r.lines.iter().enumerate() {
            for (si, section) in line.sections.iter().enumerate() {
                writer
                    .serialize(RegistryRow {
                        plant_id: r.plant_id.clone(),
                        line_idx: li,
                        line_type: vocab.line_classes()[line.line_type].clone(),
                        section_idx: si,
                        section_type: vocab.section_classes()[section.section_type].clone(),
                        component_classes: section
                            .components
                            .iter()
                            .map(|&c| vocab.component_classes()[c].to_string())
                            .collect::<Vec<_>>()
                            .join(";"),
                    })
                    .expect("in-memory write");
            }
        }
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 labels")
}

// ---------------------------------------------------------------------------
// run configuration

/// Parses a config document; absent keys take their defaults and an empty
/// document yields [`RunConfig::default`].
pub fn parse_config(bytes: &[u8]) -> Result<RunConfig, IngestError> {
    let config: RunConfig = if bytes.iter().all(u8::is_ascii_whitespace) {
        RunConfig::default()
    } else {
        serde_json::from_slice(bytes)?
    };
    config.validate()?;
    Ok(config)
}

pub fn write_config(config: &RunConfig) -> String {
    to_pretty_json(config)
}

// ---------------------------------------------------------------------------
// fitted plausibility model

pub fn parse_model(bytes: &[u8], vocab: &ClassVocabularies) -> Result<PlausibilityModel, IngestError> {
    let doc: ModelDocument = serde_json::from_slice(bytes)?;
    Ok(PlausibilityModel::from_document(&doc, vocab)?)
}

pub fn write_model(model: &PlausibilityModel, vocab: &ClassVocabularies) -> String {
    to_pretty_json(&model.to_document(vocab))
}
