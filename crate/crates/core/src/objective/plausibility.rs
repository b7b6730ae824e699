//! Registry-trained plausibility statistics: Laplace-smoothed conditional
//! frequencies of section and line compositions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::RegistryRecord;
use crate::plant::ClassVocabularies;

use super::ObjectiveError;

pub const DEFAULT_SMOOTHING: f64 = 1.0;
pub const DEFAULT_MODEL_EPSILON: f64 = 1e-9;

/// Observed compositions of one parent class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompositionRow {
    total: f64,
    /// sorted multiset -> occurrence count
    counts: BTreeMap<Vec<usize>, f64>,
}

impl CompositionRow {
    fn add(&mut self, mut composition: Vec<usize>) {
        composition.sort_unstable();
        *self.counts.entry(composition).or_insert(0.0) += 1.0;
        self.total += 1.0;
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn observed(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.counts.iter().map(|(k, &v)| (k.as_slice(), v))
    }

    fn floor(&self, smoothing: f64) -> f64 {
        smoothing / (self.total + smoothing * (self.counts.len() as f64 + 1.0))
    }
}

/// Conditional composition frequencies for every parent class.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionTable {
    rows: Vec<CompositionRow>,
    smoothing: f64,
    unobserved_floor: f64,
}

impl CompositionTable {
    fn new(rows: Vec<CompositionRow>, smoothing: f64) -> Self {
        let unobserved_floor = rows
            .iter()
            .filter(|r| r.total > 0.0)
            .map(|r| r.floor(smoothing))
            .fold(1.0, f64::min);
        Self {
            rows,
            smoothing,
            unobserved_floor,
        }
    }

    pub fn rows(&self) -> &[CompositionRow] {
        &self.rows
    }

    /// Smoothed probability of the sorted multiset `composition` given `parent`.
    /// Parents never seen in the registry get the smallest observed floor.
    pub fn prob(&self, parent: usize, composition: &[usize]) -> f64 {
        match self.rows.get(parent) {
            Some(row) if row.total > 0.0 => {
                let count = row.counts.get(composition).copied().unwrap_or(0.0);
                (count + self.smoothing) / (row.total + self.smoothing * (row.counts.len() as f64 + 1.0))
            }
            _ => self.unobserved_floor,
        }
    }

    /// Probability assigned to any unseen composition of `parent`.
    pub fn floor(&self, parent: usize) -> f64 {
        match self.rows.get(parent) {
            Some(row) if row.total > 0.0 => row.floor(self.smoothing),
            _ => self.unobserved_floor,
        }
    }
}

/// Smoothed frequency tables learned from the plant registry.
#[derive(Debug, Clone, PartialEq)]
pub struct PlausibilityModel {
    section_table: CompositionTable,
    line_table: CompositionTable,
    line_type_counts: Vec<f64>,
    smoothing: f64,
    epsilon: f64,
}

impl PlausibilityModel {
    pub fn section_table(&self) -> &CompositionTable {
        &self.section_table
    }

    pub fn line_table(&self) -> &CompositionTable {
        &self.line_table
    }

    /// Number of registry lines of each line type.
    pub fn line_type_counts(&self) -> &[f64] {
        &self.line_type_counts
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// `ln` of the section-composition probability, floored at `ln(epsilon)`.
    pub fn section_log_prob(&self, section_class: usize, sorted_components: &[usize]) -> f64 {
        self.section_table
            .prob(section_class, sorted_components)
            .max(self.epsilon)
            .ln()
    }

    /// `ln` of the line-composition probability, floored at `ln(epsilon)`.
    pub fn line_log_prob(&self, line_class: usize, sorted_sections: &[usize]) -> f64 {
        self.line_table.prob(line_class, sorted_sections).max(self.epsilon).ln()
    }
}

/// Fits the model from resolved registry records.
///
/// Records sharing a `plant_id` describe the same plant: identical copies are
/// counted once, conflicting copies are rejected.
pub fn fit_plausibility(
    records: &[RegistryRecord],
    vocab: &ClassVocabularies,
    smoothing: f64,
) -> Result<PlausibilityModel, ObjectiveError> {
    if records.is_empty() {
        return Err(ObjectiveError::EmptyRegistry);
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(ObjectiveError::BadSmoothing(smoothing));
    }
    let mut plants: BTreeMap<&str, &RegistryRecord> = BTreeMap::new();
    for record in records {
        if let Some(prev) = plants.insert(&record.plant_id, record) {
            if prev != record {
                return Err(ObjectiveError::ConflictingRecord(record.plant_id.clone()));
            }
        }
    }

    let mut section_rows = vec![CompositionRow::default(); vocab.n_section()];
    let mut line_rows = vec![CompositionRow::default(); vocab.n_line()];
    let mut line_type_counts = vec![0.0; vocab.n_line()];
    for record in plants.values() {
        for line in &record.lines {
            let row = line_rows
                .get_mut(line.line_type)
                .ok_or(ObjectiveError::UnknownLineClass(line.line_type))?;
            row.add(line.sections.iter().map(|s| s.section_type).collect());
            line_type_counts[line.line_type] += 1.0;
            for section in &line.sections {
                let row = section_rows
                    .get_mut(section.section_type)
                    .ok_or(ObjectiveError::UnknownSectionClass(section.section_type))?;
                if let Some(&c) = section.components.iter().find(|&&c| c >= vocab.n_component()) {
                    return Err(ObjectiveError::UnknownComponentClass(c));
                }
                row.add(section.components.clone());
            }
        }
    }
    Ok(PlausibilityModel {
        section_table: CompositionTable::new(section_rows, smoothing),
        line_table: CompositionTable::new(line_rows, smoothing),
        line_type_counts,
        smoothing,
        epsilon: DEFAULT_MODEL_EPSILON,
    })
}

/// Document form of a fitted model. Compositions are written as label lists;
/// probabilities are informational and recomputed from counts on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub smoothing: f64,
    pub epsilon: f64,
    pub section_table: Vec<TableRowDocument>,
    pub line_table: Vec<TableRowDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRowDocument {
    pub parent: String,
    pub total: f64,
    pub unseen_probability: f64,
    pub entries: Vec<TableEntryDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntryDocument {
    pub composition: Vec<String>,
    pub count: f64,
    pub probability: f64,
}

impl PlausibilityModel {
    pub fn to_document(&self, vocab: &ClassVocabularies) -> ModelDocument {
        let components: Vec<String> = vocab.component_classes().iter().map(|c| c.to_string()).collect();
        ModelDocument {
            smoothing: self.smoothing,
            epsilon: self.epsilon,
            section_table: table_doc(&self.section_table, vocab.section_classes(), &components),
            line_table: table_doc(&self.line_table, vocab.line_classes(), vocab.section_classes()),
        }
    }

    pub fn from_document(doc: &ModelDocument, vocab: &ClassVocabularies) -> Result<Self, ObjectiveError> {
        if !(doc.smoothing > 0.0 && doc.smoothing.is_finite()) {
            return Err(ObjectiveError::BadSmoothing(doc.smoothing));
        }
        let components: Vec<String> = vocab.component_classes().iter().map(|c| c.to_string()).collect();
        let section_rows = rows_from_doc(&doc.section_table, vocab.section_classes(), &components)?;
        let line_rows = rows_from_doc(&doc.line_table, vocab.line_classes(), vocab.section_classes())?;
        let line_type_counts = line_rows.iter().map(|r| r.total).collect();
        Ok(Self {
            section_table: CompositionTable::new(section_rows, doc.smoothing),
            line_table: CompositionTable::new(line_rows, doc.smoothing),
            line_type_counts,
            smoothing: doc.smoothing,
            epsilon: doc.epsilon,
        })
    }
}

fn table_doc(table: &CompositionTable, parents: &[String], children: &[String]) -> Vec<TableRowDocument> {
    table
        .rows
        .iter()
        .enumerate()
        .map(|(p, row)| TableRowDocument {
            parent: parents[p].clone(),
            total: row.total,
            unseen_probability: table.floor(p),
            entries: row
                .counts
                .iter()
                .map(|(comp, &count)| TableEntryDocument {
                    composition: comp.iter().map(|&c| children[c].clone()).collect(),
                    count,
                    probability: table.prob(p, comp),
                })
                .collect(),
        })
        .collect()
}

fn rows_from_doc(
    rows: &[TableRowDocument],
    parents: &[String],
    children: &[String],
) -> Result<Vec<CompositionRow>, ObjectiveError> {
    let mut out = vec![CompositionRow::default(); parents.len()];
    for row in rows {
        let p = parents
            .iter()
            .position(|x| *x == row.parent)
            .ok_or_else(|| ObjectiveError::UnknownLabel(row.parent.clone()))?;
        let target = &mut out[p];
        for entry in &row.entries {
            let mut comp = entry
                .composition
                .iter()
                .map(|label| {
                    children
                        .iter()
                        .position(|x| x == label)
                        .ok_or_else(|| ObjectiveError::UnknownLabel(label.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            comp.sort_unstable();
            if !(entry.count > 0.0 && entry.count.is_finite()) {
                return Err(ObjectiveError::BadCount(entry.count));
            }
            *target.counts.entry(comp).or_insert(0.0) += entry.count;
            target.total += entry.count;
        }
    }
    Ok(out)
}
