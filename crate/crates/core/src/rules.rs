//! Regulations rulebook: section and line composition requirements plus the
//! equipment catalogue.

use std::collections::BTreeMap;

use crate::plant::ComponentClass;

/// Required and permitted component classes for one section type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SectionRule {
    /// sorted, unique
    pub mandatory: Vec<usize>,
    /// sorted, unique
    pub optional: Vec<usize>,
}

/// Minimum multiset of section types for one line type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LineRule {
    /// sorted, with repetition
    pub min_sections: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogueEntry {
    pub class: usize,
    pub mandatory_characteristics: Vec<String>,
}

/// Section types or line types without an entry are unconstrained.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rulebook {
    pub section_rules: Vec<Option<SectionRule>>,
    pub line_rules: Vec<Option<LineRule>>,
    pub catalogue: BTreeMap<ComponentClass, CatalogueEntry>,
}

impl Rulebook {
    /// A rulebook that constrains nothing.
    pub fn permissive(n_section: usize, n_line: usize) -> Self {
        Self {
            section_rules: vec![None; n_section],
            line_rules: vec![None; n_line],
            catalogue: BTreeMap::new(),
        }
    }

    pub fn set_section_rule(&mut self, section_class: usize, mandatory: Vec<usize>, optional: Vec<usize>) {
        self.section_rules[section_class] = Some(SectionRule {
            mandatory: sorted_unique(mandatory),
            optional: sorted_unique(optional),
        });
    }

    pub fn set_line_rule(&mut self, line_class: usize, mut min_sections: Vec<usize>) {
        min_sections.sort_unstable();
        self.line_rules[line_class] = Some(LineRule { min_sections });
    }

    /// Resolves an equipment (type, subtype) pair to a component class index.
    pub fn resolve(&self, kind: &str, subtype: &str) -> Option<&CatalogueEntry> {
        self.catalogue.get(&ComponentClass::new(kind, subtype))
    }
}

fn sorted_unique(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}
