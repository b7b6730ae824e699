use std::path::Path;

use plantstruct::ingest::{
    parse_config, parse_equipment, parse_model, parse_ocr_codes, parse_registry, parse_regulations, parse_scene_graph, write_model, EquipmentRow,
    OcrCode,
};
use plantstruct::objective::fit_plausibility;
use plantstruct::optimizer::brute_force;
use plantstruct::pipeline::reconstruct;
use plantstruct::plant::validate_structure;
use plantstruct::report::HierarchyDocument;
use plantstruct::{HierarchicalStructure, PlantInstance, PlausibilityModel, RunConfig, Rulebook};

fn read(rel: &str) -> Vec<u8> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel);
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

struct Plant {
    inst: PlantInstance,
    equipment: Vec<EquipmentRow>,
    codes: Vec<OcrCode>,
    rulebook: Rulebook,
    model: PlausibilityModel,
    config: RunConfig,
}

fn plant(dir: &str, config: &str) -> Plant {
    let inst = parse_scene_graph(&read(&format!("{dir}/scene_graph.json"))).unwrap();
    let rulebook = parse_regulations(&read("regulations.json"), inst.vocab()).unwrap();
    let model = parse_model(&read("model.json"), inst.vocab()).unwrap();
    Plant {
        equipment: parse_equipment(&read(&format!("{dir}/equipment.csv"))).unwrap(),
        codes: parse_ocr_codes(&read(&format!("{dir}/ocr.json"))).unwrap(),
        config: parse_config(&read(config)).unwrap(),
        inst,
        rulebook,
        model,
    }
}

fn golden_hierarchy(name: &str) -> serde_json::Value {
    let doc: serde_json::Value = serde_json::from_slice(&read(&format!("golden/{name}"))).unwrap();
    doc["hierarchy"].clone()
}

#[test]
fn f1_anneal_reaches_exhaustive_optimum() {
    let p = plant("f1", "config.json");
    let rec = reconstruct(&p.inst, &p.codes, &p.equipment, &p.rulebook, &p.model, &p.config).unwrap();
    let oracle = brute_force(&rec.fused, &p.rulebook, &p.model, &p.config).unwrap();
    assert_eq!(rec.report.best, oracle.best);
    assert_eq!(rec.report.best_score.total, oracle.best_score.total);
    validate_structure(&oracle.best, &rec.fused).unwrap();

    let golden: HierarchyDocument = serde_json::from_value(golden_hierarchy("f1_oracle.json")).unwrap();
    let ours = plantstruct::report::hierarchy_document(&oracle.best, rec.fused.vocab());
    assert_eq!(serde_json::to_value(ours).unwrap(), serde_json::to_value(golden).unwrap());
}

#[test]
fn f1_matches_every_code() {
    let p = plant("f1", "config.json");
    let rec = reconstruct(&p.inst, &p.codes, &p.equipment, &p.rulebook, &p.model, &p.config).unwrap();
    assert_eq!(rec.assignment.pairs.len(), 3);
    assert!(rec.assignment.unmatched_codes.is_empty());
}

#[test]
fn plant_a_recovers_three_sections_with_its_config() {
    let p = plant("plant_a", "plant_a/config.json");
    let rec = reconstruct(&p.inst, &p.codes, &p.equipment, &p.rulebook, &p.model, &p.config).unwrap();
    let expected = HierarchicalStructure {
        section_of: vec![0, 0, 1, 1, 2, 2, 2],
        line_of: vec![0, 0, 1],
        component_class: vec![0, 1, 2, 1, 3, 1, 5],
        section_class: vec![0, 1, 2],
        line_class: vec![0, 1],
    };
    assert_eq!(rec.report.best, expected);
    // the stray code far from every symbol stays unmatched
    assert_eq!(rec.assignment.unmatched_codes.len(), 1);
}

#[test]
fn plant_a_default_weights_prefer_splitting() {
    let p = plant("plant_a", "config.json");
    let rec = reconstruct(&p.inst, &p.codes, &p.equipment, &p.rulebook, &p.model, &p.config).unwrap();
    assert!(rec.report.best.n_sections() > 3);
}

#[test]
fn registry_fit_reproduces_model_fixture() {
    let inst = parse_scene_graph(&read("f1/scene_graph.json")).unwrap();
    let records = parse_registry(&read("registry.csv"), inst.vocab()).unwrap();
    assert_eq!(records.len(), 10);
    let model = fit_plausibility(&records, inst.vocab(), 1.0).unwrap();
    assert_eq!(write_model(&model, inst.vocab()).into_bytes(), read("model.json"));
}
