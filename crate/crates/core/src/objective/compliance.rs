//! Continuous compliance scores of sections and lines against the rulebook.

use crate::rules::Rulebook;

use super::ObjectiveError;

/// Penalty per component whose class is neither mandatory nor optional.
pub const EXTRA_CLASS_PENALTY: f64 = 0.1;

/// Fraction of mandatory classes present, minus [`EXTRA_CLASS_PENALTY`] per
/// extra component, clamped to `[0, 1]`. `components` may be unsorted.
pub fn phi_section(section_class: usize, components: &[usize], rulebook: &Rulebook) -> Result<f64, ObjectiveError> {
    let rule = rulebook
        .section_rules
        .get(section_class)
        .ok_or(ObjectiveError::UnknownSectionClass(section_class))?;
    let Some(rule) = rule else {
        return Ok(1.0);
    };
    let coverage = if rule.mandatory.is_empty() {
        1.0
    } else {
        let present = rule.mandatory.iter().filter(|m| components.contains(m)).count();
        present as f64 / rule.mandatory.len() as f64
    };
    let extras = components
        .iter()
        .filter(|c| rule.mandatory.binary_search(c).is_err() && rule.optional.binary_search(c).is_err())
        .count();
    Ok((coverage - EXTRA_CLASS_PENALTY * extras as f64).clamp(0.0, 1.0))
}

/// Multiplicity-aware coverage of the line's minimum section multiset.
/// Lines carry minimum requirements only, so extra sections are not penalized.
pub fn phi_line(line_class: usize, sections: &[usize], rulebook: &Rulebook) -> Result<f64, ObjectiveError> {
    let rule = rulebook
        .line_rules
        .get(line_class)
        .ok_or(ObjectiveError::UnknownLineClass(line_class))?;
    let Some(rule) = rule else {
        return Ok(1.0);
    };
    if rule.min_sections.is_empty() {
        return Ok(1.0);
    }
    let mut covered = 0usize;
    let mut i = 0;
    let req = &rule.min_sections;
    while i < req.len() {
        let class = req[i];
        let mut needed = 0;
        while i < req.len() && req[i] == class {
            needed += 1;
            i += 1;
        }
        let have = sections.iter().filter(|&&s| s == class).count();
        covered += needed.min(have);
    }
    Ok(covered as f64 / req.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    // component classes: 0 filter, 1 valve, 2 heater
    fn rulebook() -> Rulebook {
        let mut rb = Rulebook::permissive(3, 2);
        rb.set_section_rule(0, vec![0, 1], vec![]);
        rb.set_section_rule(1, vec![0], vec![]);
        rb.set_section_rule(2, vec![], vec![1]);
        rb.set_line_rule(0, vec![0]);
        rb.set_line_rule(1, vec![1, 1]);
        rb
    }

    #[test]
    fn full_section_compliance() {
        assert_eq!(phi_section(0, &[1, 0], &rulebook()).unwrap(), 1.0);
    }

    #[test]
    fn half_of_mandatory() {
        assert_eq!(phi_section(0, &[0], &rulebook()).unwrap(), 0.5);
    }

    #[test]
    fn extra_class_penalty() {
        assert!((phi_section(1, &[0, 2], &rulebook()).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn vacuous_and_clamped_sections() {
        let rb = rulebook();
        assert_eq!(phi_section(2, &[1, 1], &rb).unwrap(), 1.0);
        assert_eq!(phi_section(0, &[2; 12], &rb).unwrap(), 0.0);
        assert_eq!(phi_section(7, &[0], &rb), Err(ObjectiveError::UnknownSectionClass(7)));
    }

    #[test]
    fn line_coverage() {
        let rb = rulebook();
        assert_eq!(phi_line(0, &[0], &rb).unwrap(), 1.0);
        assert_eq!(phi_line(1, &[1], &rb).unwrap(), 0.5);
        assert_eq!(phi_line(1, &[1, 1, 1, 0], &rb).unwrap(), 1.0);
        let mut rb = rb;
        rb.set_line_rule(0, vec![]);
        assert_eq!(phi_line(0, &[], &rb).unwrap(), 1.0);
    }
}
