//! Local moves over valid hierarchical structures.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::Serialize;

use crate::plant::{HierarchicalStructure, PlantInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MoveKind {
    ReassignComponent,
    SplitSection,
    MergeSections,
    RelabelComponent,
    RelabelSection,
    RelabelLine,
    MoveSectionToLine,
    SplitLine,
    MergeLines,
}

impl MoveKind {
    pub const ALL: [MoveKind; 9] = [
        MoveKind::ReassignComponent,
        MoveKind::SplitSection,
        MoveKind::MergeSections,
        MoveKind::RelabelComponent,
        MoveKind::RelabelSection,
        MoveKind::RelabelLine,
        MoveKind::MoveSectionToLine,
        MoveKind::SplitLine,
        MoveKind::MergeLines,
    ];

    /// Proposal weight, in the order of [`MoveKind::ALL`].
    pub const WEIGHTS: [f64; 9] = [0.30, 0.10, 0.10, 0.15, 0.10, 0.05, 0.10, 0.05, 0.05];

    pub fn weight(self) -> f64 {
        Self::WEIGHTS[self as usize]
    }
}

/// A move with its payload. Group ids refer to the structure the move was
/// proposed for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Move {
    ReassignComponent { component: usize, to_section: usize },
    /// `moved` leave `section` for a new section of the same class and line
    SplitSection { section: usize, moved: Vec<usize> },
    /// `absorbed` joins `into`
    MergeSections { into: usize, absorbed: usize },
    RelabelComponent { component: usize, class: usize },
    RelabelSection { section: usize, class: usize },
    RelabelLine { line: usize, class: usize },
    MoveSectionToLine { section: usize, to_line: usize },
    /// `moved` sections leave `line` for a new line of the same class
    SplitLine { line: usize, moved: Vec<usize> },
    MergeLines { into: usize, absorbed: usize },
}

impl Move {
    pub fn kind(&self) -> MoveKind {
        match self {
            Move::ReassignComponent { .. } => MoveKind::ReassignComponent,
            Move::SplitSection { .. } => MoveKind::SplitSection,
            Move::MergeSections { .. } => MoveKind::MergeSections,
            Move::RelabelComponent { .. } => MoveKind::RelabelComponent,
            Move::RelabelSection { .. } => MoveKind::RelabelSection,
            Move::RelabelLine { .. } => MoveKind::RelabelLine,
            Move::MoveSectionToLine { .. } => MoveKind::MoveSectionToLine,
            Move::SplitLine { .. } => MoveKind::SplitLine,
            Move::MergeLines { .. } => MoveKind::MergeLines,
        }
    }

    /// Applies the move, deleting groups it empties. The result is canonical.
    pub fn apply(&self, s: &HierarchicalStructure) -> HierarchicalStructure {
        let mut t = s.clone();
        match *self {
            Move::ReassignComponent { component, to_section } => t.section_of[component] = to_section,
            Move::SplitSection { section, ref moved } => {
                let new = t.section_class.len();
                t.section_class.push(s.section_class[section]);
                t.line_of.push(s.line_of[section]);
                for &c in moved {
                    t.section_of[c] = new;
                }
            }
            Move::MergeSections { into, absorbed } => {
                for k in t.section_of.iter_mut().filter(|k| **k == absorbed) {
                    *k = into;
                }
            }
            Move::RelabelComponent { component, class } => t.component_class[component] = class,
            Move::RelabelSection { section, class } => t.section_class[section] = class,
            Move::RelabelLine { line, class } => t.line_class[line] = class,
            Move::MoveSectionToLine { section, to_line } => t.line_of[section] = to_line,
            Move::SplitLine { line, ref moved } => {
                let new = t.line_class.len();
                t.line_class.push(s.line_class[line]);
                for &k in moved {
                    t.line_of[k] = new;
                }
            }
            Move::MergeLines { into, absorbed } => {
                for j in t.line_of.iter_mut().filter(|j| **j == absorbed) {
                    *j = into;
                }
            }
        }
        drop_empty_groups(t).canonicalize()
    }
}

/// Removes sections without components and lines without sections,
/// compacting the remaining ids in order.
fn drop_empty_groups(s: HierarchicalStructure) -> HierarchicalStructure {
    let mut used = vec![false; s.section_class.len()];
    for &k in &s.section_of {
        used[k] = true;
    }
    let section_map = compact_ids(&used);
    let section_class: Vec<usize> = keep(&s.section_class, &used);
    let line_of_raw: Vec<usize> = keep(&s.line_of, &used);
    let mut line_used = vec![false; s.line_class.len()];
    for &j in &line_of_raw {
        line_used[j] = true;
    }
    let line_map = compact_ids(&line_used);
    HierarchicalStructure {
        section_of: s.section_of.iter().map(|&k| section_map[k]).collect(),
        line_of: line_of_raw.iter().map(|&j| line_map[j]).collect(),
        component_class: s.component_class,
        section_class,
        line_class: keep(&s.line_class, &line_used),
    }
}

fn compact_ids(used: &[bool]) -> Vec<usize> {
    let mut next = 0;
    used.iter()
        .map(|&u| {
            let id = next;
            next += usize::from(u);
            id
        })
        .collect()
}

fn keep(values: &[usize], used: &[bool]) -> Vec<usize> {
    values.iter().zip(used).filter(|(_, &u)| u).map(|(&v, _)| v).collect()
}

/// Whether `kind` has at least one target in `s`.
pub fn is_applicable(kind: MoveKind, s: &HierarchicalStructure, inst: &PlantInstance) -> bool {
    let vocab = inst.vocab();
    match kind {
        MoveKind::ReassignComponent | MoveKind::MergeSections => s.n_sections() >= 2,
        MoveKind::SplitSection => s.sections().iter().any(|m| m.len() >= 2),
        MoveKind::RelabelComponent => vocab.n_component() >= 2 && s.n_components() >= 1,
        MoveKind::RelabelSection => vocab.n_section() >= 2 && s.n_sections() >= 1,
        MoveKind::RelabelLine => vocab.n_line() >= 2 && s.n_lines() >= 1,
        MoveKind::MoveSectionToLine | MoveKind::MergeLines => s.n_lines() >= 2,
        MoveKind::SplitLine => s.lines().iter().any(|m| m.len() >= 2),
    }
}

/// Samples a move kind by weight, resampling kinds without targets, then a
/// uniform payload among that kind's targets.
///
/// Panics if no kind is applicable, which cannot happen for a non-empty
/// structure since every vocabulary has at least two line classes.
pub fn propose_move<R: Rng + ?Sized>(s: &HierarchicalStructure, inst: &PlantInstance, rng: &mut R) -> Move {
    let applicable: Vec<bool> = MoveKind::ALL.iter().map(|&k| is_applicable(k, s, inst)).collect();
    assert!(applicable.iter().any(|&a| a), "no applicable move");
    let kinds = WeightedIndex::new(MoveKind::WEIGHTS).expect("weights are positive");
    let kind = loop {
        let k = MoveKind::ALL[kinds.sample(rng)];
        if applicable[k as usize] {
            break k;
        }
    };
    let vocab = inst.vocab();
    match kind {
        MoveKind::ReassignComponent => {
            let component = rng.gen_range(0..s.n_components());
            let to_section = other_than(s.section_of[component], s.n_sections(), rng);
            Move::ReassignComponent { component, to_section }
        }
        MoveKind::SplitSection => {
            let groups = s.sections();
            let (section, moved) = split_group(&groups, rng);
            Move::SplitSection { section, moved }
        }
        MoveKind::MergeSections => {
            let (into, absorbed) = ordered_pair(s.n_sections(), rng);
            Move::MergeSections { into, absorbed }
        }
        MoveKind::RelabelComponent => {
            let component = rng.gen_range(0..s.n_components());
            let class = other_than(s.component_class[component], vocab.n_component(), rng);
            Move::RelabelComponent { component, class }
        }
        MoveKind::RelabelSection => {
            let section = rng.gen_range(0..s.n_sections());
            let class = other_than(s.section_class[section], vocab.n_section(), rng);
            Move::RelabelSection { section, class }
        }
        MoveKind::RelabelLine => {
            let line = rng.gen_range(0..s.n_lines());
            let class = other_than(s.line_class[line], vocab.n_line(), rng);
            Move::RelabelLine { line, class }
        }
        MoveKind::MoveSectionToLine => {
            let section = rng.gen_range(0..s.n_sections());
            let to_line = other_than(s.line_of[section], s.n_lines(), rng);
            Move::MoveSectionToLine { section, to_line }
        }
        MoveKind::SplitLine => {
            let groups = s.lines();
            let (line, moved) = split_group(&groups, rng);
            Move::SplitLine { line, moved }
        }
        MoveKind::MergeLines => {
            let (into, absorbed) = ordered_pair(s.n_lines(), rng);
            Move::MergeLines { into, absorbed }
        }
    }
}

/// Uniform value in `0..n` other than `current`; requires `n >= 2`.
fn other_than<R: Rng + ?Sized>(current: usize, n: usize, rng: &mut R) -> usize {
    let x = rng.gen_range(0..n - 1);
    if x >= current {
        x + 1
    } else {
        x
    }
}

/// Uniform unordered pair of distinct ids, smaller id first.
fn ordered_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize) {
    let a = rng.gen_range(0..n);
    let b = other_than(a, n, rng);
    (a.min(b), a.max(b))
}

/// Picks a group with at least two members and a uniform non-trivial
/// bipartition of it; the first member always stays.
fn split_group<R: Rng + ?Sized>(groups: &[Vec<usize>], rng: &mut R) -> (usize, Vec<usize>) {
    let splittable: Vec<usize> = (0..groups.len()).filter(|&g| groups[g].len() >= 2).collect();
    let g = splittable[rng.gen_range(0..splittable.len())];
    let rest = &groups[g][1..];
    // nonzero mask over the members after the first
    let mask: u64 = rng.gen_range(1..(1u64 << rest.len()));
    let moved = rest.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &m)| m).collect();
    (g, moved)
}
