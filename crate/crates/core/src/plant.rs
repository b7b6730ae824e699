//! Core domain types: class vocabularies, detections, the fused plant
//! evidence and the three-level hierarchical structure built on top of it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance within which detection probabilities are silently renormalized.
pub const PROB_RENORM_TOLERANCE: f64 = 1e-3;

pub const MEASUREMENT_LINE: &str = "measurement";
pub const REGULATION_LINE: &str = "regulation";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("{0} vocabulary is empty")]
    EmptyVocabulary(&'static str),
    #[error("duplicate label `{label}` in {list} vocabulary")]
    DuplicateLabel { list: &'static str, label: String },
    #[error("line vocabulary must contain `{0}`")]
    MissingLineClass(&'static str),
    #[error("invalid component class label `{0}` (expected `type/subtype`)")]
    BadComponentLabel(String),
    #[error("detection {id}: bbox width and height must be positive")]
    DegenerateBox { id: usize },
    #[error("detection {id}: expected {expected} probabilities, found {found}")]
    ProbLength { id: usize, expected: usize, found: usize },
    #[error("detection {id}: probability {value} at index {index} outside [0, 1]")]
    ProbRange { id: usize, index: usize, value: f64 },
    #[error("detection {id}: probabilities sum to {sum}, not 1")]
    ProbSum { id: usize, sum: f64 },
    #[error("detection at position {position} carries id {id}")]
    DetectionOrder { position: usize, id: usize },
    #[error("{what}: expected shape {expected:?}, found {found:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{what}[{index}] = {value} outside [0, 1]")]
    GraphRange {
        what: &'static str,
        index: String,
        value: f64,
    },
    #[error("structure is invalid: {0:?}")]
    InvalidStructure(Vec<Violation>),
}

/// A component class, printed as `type/subtype`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComponentClass {
    pub kind: String,
    pub subtype: String,
}

impl ComponentClass {
    pub fn new(kind: impl Into<String>, subtype: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            subtype: subtype.into(),
        }
    }
}

impl fmt::Display for ComponentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind, self.subtype)
    }
}

impl FromStr for ComponentClass {
    type Err = PlantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((kind, subtype)) if !kind.is_empty() => Ok(Self::new(kind, subtype)),
            _ => Err(PlantError::BadComponentLabel(s.to_string())),
        }
    }
}

impl Serialize for ComponentClass {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ComponentClass {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The three ordered label lists: component, section and line classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVocabularies")]
pub struct ClassVocabularies {
    component_classes: Vec<ComponentClass>,
    section_classes: Vec<String>,
    line_classes: Vec<String>,
}

#[derive(Deserialize)]
struct RawVocabularies {
    component_classes: Vec<ComponentClass>,
    section_classes: Vec<String>,
    line_classes: Vec<String>,
}

impl TryFrom<RawVocabularies> for ClassVocabularies {
    type Error = PlantError;

    fn try_from(raw: RawVocabularies) -> Result<Self, Self::Error> {
        ClassVocabularies::new(raw.component_classes, raw.section_classes, raw.line_classes)
    }
}

fn check_unique<T: Ord + fmt::Display>(list: &'static str, labels: &[T]) -> Result<(), PlantError> {
    if labels.is_empty() {
        return Err(PlantError::EmptyVocabulary(list));
    }
    let mut seen = std::collections::BTreeSet::new();
    for label in labels {
        if !seen.insert(label) {
            return Err(PlantError::DuplicateLabel {
                list,
                label: label.to_string(),
            });
        }
    }
    Ok(())
}

impl ClassVocabularies {
    pub fn new(
        component_classes: Vec<ComponentClass>,
        section_classes: Vec<String>,
        line_classes: Vec<String>,
    ) -> Result<Self, PlantError> {
        check_unique("component", &component_classes)?;
        check_unique("section", &section_classes)?;
        check_unique("line", &line_classes)?;
        for required in [MEASUREMENT_LINE, REGULATION_LINE] {
            if !line_classes.iter().any(|l| l == required) {
                return Err(PlantError::MissingLineClass(required));
            }
        }
        Ok(Self {
            component_classes,
            section_classes,
            line_classes,
        })
    }

    pub fn component_classes(&self) -> &[ComponentClass] {
        &self.component_classes
    }

    pub fn section_classes(&self) -> &[String] {
        &self.section_classes
    }

    pub fn line_classes(&self) -> &[String] {
        &self.line_classes
    }

    pub fn n_component(&self) -> usize {
        self.component_classes.len()
    }

    pub fn n_section(&self) -> usize {
        self.section_classes.len()
    }

    pub fn n_line(&self) -> usize {
        self.line_classes.len()
    }

    pub fn component_index(&self, class: &ComponentClass) -> Option<usize> {
        self.component_classes.iter().position(|c| c == class)
    }

    pub fn section_index(&self, label: &str) -> Option<usize> {
        self.section_classes.iter().position(|c| c == label)
    }

    pub fn line_index(&self, label: &str) -> Option<usize> {
        self.line_classes.iter().position(|c| c == label)
    }
}

/// Axis-aligned box in image pixels: top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn centroid(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }
}

/// A detected symbol with its class distribution over the component vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    id: usize,
    bbox: BBox,
    probs: Vec<f64>,
}

impl Detection {
    /// Builds a detection, renormalizing `probs` when the sum is within
    /// [`PROB_RENORM_TOLERANCE`] of one and rejecting it otherwise.
    pub fn new(id: usize, bbox: BBox, probs: Vec<f64>) -> Result<Self, PlantError> {
        if !(bbox.w > 0.0 && bbox.h > 0.0) {
            return Err(PlantError::DegenerateBox { id });
        }
        let probs = normalize_probs(id, probs)?;
        Ok(Self { id, bbox, probs })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

fn normalize_probs(id: usize, mut probs: Vec<f64>) -> Result<Vec<f64>, PlantError> {
    for (index, &value) in probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(PlantError::ProbRange { id, index, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_RENORM_TOLERANCE {
        return Err(PlantError::ProbSum { id, sum });
    }
    if sum != 1.0 {
        probs.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(probs)
}

/// All fused evidence for one plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantInstance {
    vocab: ClassVocabularies,
    detections: Vec<Detection>,
    g_conn: Array2<f64>,
    g_rel: Array3<f64>,
}

impl PlantInstance {
    /// Validates shapes and ranges. The diagonal of `g_conn` is forced to zero.
    pub fn new(
        vocab: ClassVocabularies,
        detections: Vec<Detection>,
        mut g_conn: Array2<f64>,
        g_rel: Array3<f64>,
    ) -> Result<Self, PlantError> {
        let n = detections.len();
        for (position, det) in detections.iter().enumerate() {
            if det.id != position {
                return Err(PlantError::DetectionOrder {
                    position,
                    id: det.id,
                });
            }
            if det.probs.len() != vocab.n_component() {
                return Err(PlantError::ProbLength {
                    id: det.id,
                    expected: vocab.n_component(),
                    found: det.probs.len(),
                });
            }
        }
        if g_conn.dim() != (n, n) {
            return Err(PlantError::Shape {
                what: "g_conn",
                expected: vec![n, n],
                found: g_conn.shape().to_vec(),
            });
        }
        if g_rel.dim() != (n, n, vocab.n_section()) {
            return Err(PlantError::Shape {
                what: "g_rel",
                expected: vec![n, n, vocab.n_section()],
                found: g_rel.shape().to_vec(),
            });
        }
        if let Some(((i, j), &value)) = g_conn
            .indexed_iter()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(PlantError::GraphRange {
                what: "g_conn",
                index: format!("{i}][{j}"),
                value,
            });
        }
        if let Some(((i, j, k), &value)) = g_rel
            .indexed_iter()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(PlantError::GraphRange {
                what: "g_rel",
                index: format!("{i}][{j}][{k}"),
                value,
            });
        }
        g_conn.diag_mut().fill(0.0);
        Ok(Self {
            vocab,
            detections,
            g_conn,
            g_rel,
        })
    }

    pub fn vocab(&self) -> &ClassVocabularies {
        &self.vocab
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn n(&self) -> usize {
        self.detections.len()
    }

    pub fn g_conn(&self) -> &Array2<f64> {
        &self.g_conn
    }

    pub fn g_rel(&self) -> &Array3<f64> {
        &self.g_rel
    }

    pub fn prob(&self, component: usize, class: usize) -> f64 {
        self.detections[component].probs[class]
    }

    /// Returns a copy with every detection's distribution replaced.
    pub fn with_probs(&self, probs: Vec<Vec<f64>>) -> Result<Self, PlantError> {
        let detections = self
            .detections
            .iter()
            .zip(probs)
            .map(|(d, p)| Detection::new(d.id, d.bbox, p))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(
            self.vocab.clone(),
            detections,
            self.g_conn.clone(),
            self.g_rel.clone(),
        )
    }
}

/// The triplet of section partition, line partition and class assignment.
///
/// Section ids index `section_class` and `line_of`; line ids index
/// `line_class`. Field order defines the lexicographic order used to break
/// ties between equally scored canonical structures.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HierarchicalStructure {
    /// component id -> section id
    pub section_of: Vec<usize>,
    /// section id -> line id
    pub line_of: Vec<usize>,
    pub component_class: Vec<usize>,
    pub section_class: Vec<usize>,
    pub line_class: Vec<usize>,
}

/// A violated structure axiom.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// partition not covering
    NotCovering { component: usize },
    /// component listed in more than one section
    Overlap { component: usize, sections: [usize; 2] },
    /// section listed in more than one line
    SectionOverlap { section: usize, lines: [usize; 2] },
    UnknownComponent { component: usize },
    UnknownSection { component: usize, section: usize },
    SectionWithoutLine { section: usize },
    UnknownLine { section: usize, line: usize },
    EmptySection { section: usize },
    EmptyLine { line: usize },
    MissingClass { level: Level, id: usize },
    ClassOutOfRange { level: Level, id: usize, class: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Component,
    Section,
    Line,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotCovering { component } => {
                write!(f, "partition not covering: component {component} unassigned")
            }
            Violation::Overlap { component, sections } => write!(
                f,
                "overlap: component {component} in sections {} and {}",
                sections[0], sections[1]
            ),
            Violation::SectionOverlap { section, lines } => write!(
                f,
                "overlap: section {section} in lines {} and {}",
                lines[0], lines[1]
            ),
            Violation::UnknownComponent { component } => {
                write!(f, "unknown component {component}")
            }
            Violation::UnknownSection { component, section } => {
                write!(f, "component {component} references unknown section {section}")
            }
            Violation::SectionWithoutLine { section } => {
                write!(f, "line partition not covering: section {section} unassigned")
            }
            Violation::UnknownLine { section, line } => {
                write!(f, "section {section} references unknown line {line}")
            }
            Violation::EmptySection { section } => write!(f, "section {section} is empty"),
            Violation::EmptyLine { line } => write!(f, "line {line} is empty"),
            Violation::MissingClass { level, id } => write!(f, "{level:?} {id} has no class"),
            Violation::ClassOutOfRange { level, id, class } => {
                write!(f, "{level:?} {id} has out-of-range class {class}")
            }
        }
    }
}

impl HierarchicalStructure {
    /// Every component in its own section, all sections in one line, all classes 0.
    pub fn singletons(n: usize) -> Self {
        Self {
            section_of: (0..n).collect(),
            line_of: vec![0; n],
            component_class: vec![0; n],
            section_class: vec![0; n],
            line_class: vec![0],
        }
    }

    pub fn n_components(&self) -> usize {
        self.section_of.len()
    }

    pub fn n_sections(&self) -> usize {
        self.section_class.len()
    }

    pub fn n_lines(&self) -> usize {
        self.line_class.len()
    }

    /// Member components of every section, ascending.
    pub fn sections(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_sections()];
        for (c, &s) in self.section_of.iter().enumerate() {
            out[s].push(c);
        }
        out
    }

    /// Member sections of every line, ascending.
    pub fn lines(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_lines()];
        for (s, &l) in self.line_of.iter().enumerate() {
            out[l].push(s);
        }
        out
    }

    /// True when section ids follow first appearance in component order and
    /// line ids follow first appearance in section order.
    pub fn is_canonical(&self) -> bool {
        first_appearance_ordered(&self.section_of) && first_appearance_ordered(&self.line_of)
    }

    /// Renumbers sections and lines by their smallest member component.
    ///
    /// Panics if the structure is not valid; check with
    /// [`validate_structure`] first when the input is untrusted.
    pub fn canonicalize(&self) -> Self {
        if self.is_canonical() {
            return self.clone();
        }
        let section_map = first_appearance_map(&self.section_of, self.n_sections());
        let section_of = self.section_of.iter().map(|&s| section_map[s]).collect();
        let mut section_class = vec![0; self.n_sections()];
        let mut line_of_new = vec![0; self.n_sections()];
        for (old, &new) in section_map.iter().enumerate() {
            section_class[new] = self.section_class[old];
            line_of_new[new] = self.line_of[old];
        }
        let line_map = first_appearance_map(&line_of_new, self.n_lines());
        let line_of = line_of_new.iter().map(|&l| line_map[l]).collect();
        let mut line_class = vec![0; self.n_lines()];
        for (old, &new) in line_map.iter().enumerate() {
            line_class[new] = self.line_class[old];
        }
        Self {
            section_of,
            line_of,
            component_class: self.component_class.clone(),
            section_class,
            line_class,
        }
    }

    /// Fallible variant of [`canonicalize`](Self::canonicalize).
    pub fn try_canonicalize(&self, inst: &PlantInstance) -> Result<Self, PlantError> {
        validate_structure(self, inst).map_err(PlantError::InvalidStructure)?;
        Ok(self.canonicalize())
    }

    /// Canonical form with sections redistributed over lines so that
    /// `(line_of, line_class)` is lexicographically smallest among all
    /// structures with the same sections and the same multiset of lines,
    /// a line being described by its class and section-class multiset.
    ///
    /// Such structures differ only in which of several same-class sections
    /// sits in which line.
    pub fn normalize_lines(&self) -> Self {
        let s = self.canonicalize();
        let n_classes = s.section_class.iter().max().map_or(0, |m| m + 1);
        let mut templates: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
        for (j, members) in s.lines().iter().enumerate() {
            let mut slots = vec![0; n_classes];
            for &k in members {
                slots[s.section_class[k]] += 1;
            }
            *templates.entry((s.line_class[j], slots)).or_default() += 1;
        }
        let templates: Vec<((usize, Vec<usize>), usize)> = templates.into_iter().collect();
        let mut search = LineSearch {
            section_class: &s.section_class,
            templates: templates.iter().map(|(t, _)| t.clone()).collect(),
            remaining: templates.iter().map(|(_, c)| *c).collect(),
            open: Vec::new(),
            line_of: Vec::with_capacity(s.n_sections()),
            best: None,
        };
        search.run();
        let (line_of, line_class) = search.best.expect("the current assignment is always reachable");
        Self {
            line_of,
            line_class,
            ..s
        }
    }
}

struct LineSearch<'a> {
    section_class: &'a [usize],
    templates: Vec<(usize, Vec<usize>)>,
    remaining: Vec<usize>,
    /// (template, free slots per section class) for each opened line
    open: Vec<(usize, Vec<usize>)>,
    line_of: Vec<usize>,
    best: Option<(Vec<usize>, Vec<usize>)>,
}

impl LineSearch<'_> {
    fn run(&mut self) {
        let k = self.line_of.len();
        if k == self.section_class.len() {
            let line_class = self.open.iter().map(|(t, _)| self.templates[*t].0).collect();
            let candidate = (self.line_of.clone(), line_class);
            if self.best.as_ref().is_none_or(|b| candidate < *b) {
                self.best = Some(candidate);
            }
            return;
        }
        let t = self.section_class[k];
        // joining the lowest open line with room beats opening any new line
        if let Some(j) = self.open.iter().position(|(_, free)| free[t] > 0) {
            self.open[j].1[t] -= 1;
            self.line_of.push(j);
            self.run();
            self.line_of.pop();
            self.open[j].1[t] += 1;
            return;
        }
        for tpl in 0..self.templates.len() {
            if self.remaining[tpl] == 0 || self.templates[tpl].1[t] == 0 {
                continue;
            }
            let mut free = self.templates[tpl].1.clone();
            free[t] -= 1;
            self.remaining[tpl] -= 1;
            self.line_of.push(self.open.len());
            self.open.push((tpl, free));
            self.run();
            self.open.pop();
            self.line_of.pop();
            self.remaining[tpl] += 1;
        }
    }
}

fn first_appearance_ordered(ids: &[usize]) -> bool {
    let mut next = 0;
    for &id in ids {
        if id == next {
            next += 1;
        } else if id > next {
            return false;
        }
    }
    true
}

/// old id -> new id, numbering ids by first appearance in `ids`.
fn first_appearance_map(ids: &[usize], count: usize) -> Vec<usize> {
    let mut map = vec![usize::MAX; count];
    let mut next = 0;
    for &id in ids {
        if map[id] == usize::MAX {
            map[id] = next;
            next += 1;
        }
    }
    map
}

/// Checks the partition axioms and class assignments against `inst`.
pub fn validate_structure(s: &HierarchicalStructure, inst: &PlantInstance) -> Result<(), Vec<Violation>> {
    let n = inst.n();
    let vocab = inst.vocab();
    let mut violations = Vec::new();

    for component in s.section_of.len()..n {
        violations.push(Violation::NotCovering { component });
    }
    for component in n..s.section_of.len() {
        violations.push(Violation::UnknownComponent { component });
    }
    let k = s.section_class.len();
    let mut section_sizes = vec![0usize; k];
    for (component, &section) in s.section_of.iter().enumerate().take(n) {
        if section < k {
            section_sizes[section] += 1;
        } else {
            violations.push(Violation::UnknownSection { component, section });
        }
    }
    for (section, &size) in section_sizes.iter().enumerate() {
        if size == 0 {
            violations.push(Violation::EmptySection { section });
        }
    }

    for section in s.line_of.len()..k {
        violations.push(Violation::SectionWithoutLine { section });
    }
    let m = s.line_class.len();
    let mut line_sizes = vec![0usize; m];
    for (section, &line) in s.line_of.iter().enumerate().take(k) {
        if line < m {
            line_sizes[line] += 1;
        } else {
            violations.push(Violation::UnknownLine { section, line });
        }
    }
    for (line, &size) in line_sizes.iter().enumerate() {
        if size == 0 {
            violations.push(Violation::EmptyLine { line });
        }
    }

    check_classes(&mut violations, Level::Component, &s.component_class, n, vocab.n_component());
    check_classes(&mut violations, Level::Section, &s.section_class, k, vocab.n_section());
    check_classes(&mut violations, Level::Line, &s.line_class, m, vocab.n_line());

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

fn check_classes(out: &mut Vec<Violation>, level: Level, classes: &[usize], expected: usize, bound: usize) {
    for id in classes.len()..expected {
        out.push(Violation::MissingClass { level, id });
    }
    for (id, &class) in classes.iter().enumerate() {
        if class >= bound {
            out.push(Violation::ClassOutOfRange { level, id, class });
        }
    }
}

/// Member-list form of a structure, as read from documents. Unlike
/// [`HierarchicalStructure`] it can express overlapping groups.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StructureDraft {
    pub component_class: BTreeMap<usize, usize>,
    pub sections: BTreeMap<usize, GroupDraft>,
    pub lines: BTreeMap<usize, GroupDraft>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupDraft {
    pub class: usize,
    pub members: Vec<usize>,
}

/// Validates a member-list draft and converts it to a dense structure.
pub fn validate_draft(draft: &StructureDraft, inst: &PlantInstance) -> Result<HierarchicalStructure, Vec<Violation>> {
    let n = inst.n();
    let mut violations = Vec::new();

    // dense renumbering of opaque section / line ids
    let section_ids: Vec<usize> = draft.sections.keys().copied().collect();
    let line_ids: Vec<usize> = draft.lines.keys().copied().collect();
    let section_pos: BTreeMap<usize, usize> = section_ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let line_pos: BTreeMap<usize, usize> = line_ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();

    let mut section_of: Vec<Option<usize>> = vec![None; n];
    for (&sid, group) in &draft.sections {
        if group.members.is_empty() {
            violations.push(Violation::EmptySection { section: sid });
        }
        for &c in &group.members {
            if c >= n {
                violations.push(Violation::UnknownComponent { component: c });
                continue;
            }
            match section_of[c] {
                Some(prev) => violations.push(Violation::Overlap {
                    component: c,
                    sections: [section_ids[prev], sid],
                }),
                None => section_of[c] = Some(section_pos[&sid]),
            }
        }
    }
    for (c, s) in section_of.iter().enumerate() {
        if s.is_none() {
            violations.push(Violation::NotCovering { component: c });
        }
    }

    let mut line_of: Vec<Option<usize>> = vec![None; section_ids.len()];
    for (&lid, group) in &draft.lines {
        if group.members.is_empty() {
            violations.push(Violation::EmptyLine { line: lid });
        }
        for &sid in &group.members {
            let Some(&pos) = section_pos.get(&sid) else {
                violations.push(Violation::UnknownLine { section: sid, line: lid });
                continue;
            };
            match line_of[pos] {
                Some(prev) => violations.push(Violation::SectionOverlap {
                    section: sid,
                    lines: [line_ids[prev], lid],
                }),
                None => line_of[pos] = Some(line_pos[&lid]),
            }
        }
    }
    for (pos, l) in line_of.iter().enumerate() {
        if l.is_none() {
            violations.push(Violation::SectionWithoutLine {
                section: section_ids[pos],
            });
        }
    }

    let mut component_class = vec![0; n];
    for (c, slot) in component_class.iter_mut().enumerate() {
        match draft.component_class.get(&c) {
            Some(&class) => *slot = class,
            None => violations.push(Violation::MissingClass {
                level: Level::Component,
                id: c,
            }),
        }
    }

    if !violations.is_empty() {
        return Err(violations);
    }
    let s = HierarchicalStructure {
        section_of: section_of.into_iter().map(Option::unwrap).collect(),
        line_of: line_of.into_iter().map(Option::unwrap).collect(),
        component_class,
        section_class: draft.sections.values().map(|g| g.class).collect(),
        line_class: draft.lines.values().map(|g| g.class).collect(),
    };
    validate_structure(&s, inst)?;
    Ok(s)
}
