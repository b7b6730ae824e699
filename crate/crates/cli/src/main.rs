//! `plantstruct` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 internal invariant
//! breach (including `validate` finding a structure that breaks the
//! partition axioms).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use plantstruct::bench::{bench_csv, corrupt_instance, run_benchmark, sample_structure, summarize, BenchSettings, LevelSummary, NoiseSpec};
use plantstruct::config::derive_seed;
use plantstruct::egrtr::{self, DecoderTrace, HeadConfig};
use plantstruct::fusion::fuse_instance;
use plantstruct::ingest::{
    parse_config, parse_equipment, parse_model, parse_ocr_codes, parse_registry, parse_regulations, parse_scene_graph,
    parse_vocabularies, write_model, write_scene_graph, EquipmentRow, OcrCode,
};
use plantstruct::objective::fit_plausibility;
use plantstruct::optimizer::{brute_force, SearchReport};
use plantstruct::pipeline::{reconstruct, PipelineError};
use plantstruct::plant::{validate_draft, validate_structure, Violation};
use plantstruct::report::{draft_from_hierarchy, hierarchy_document, Header, HierarchyDocument, Method, ResultDocument};
use plantstruct::{PlantInstance, RunConfig};

/// Gradient-check step and pass threshold used by `egrtr-demo`.
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "plantstruct", version, about = "Reconstruct gas plant hierarchies from scene-graph evidence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse OCR/equipment evidence and anneal the structure
    Reconstruct(ReconstructArgs),
    /// Fuse OCR/equipment evidence into the scene graph only
    Fuse(FuseArgs),
    /// Exact optimum by exhaustive enumeration (small instances)
    Oracle(OracleArgs),
    /// Fit the plausibility model from a registry table
    FitModel(FitModelArgs),
    /// Sample a ground-truth plant and its corrupted scene graph
    Synth(SynthArgs),
    /// Sweep noise levels over sampled plants
    Bench(BenchArgs),
    /// Run the relational head on a random trace and check its gradients
    EgrtrDemo(EgrtrArgs),
    /// Check a structure document against a scene graph
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    scene_graph: PathBuf,
    #[arg(long)]
    equipment: PathBuf,
    #[arg(long)]
    ocr: PathBuf,
    #[arg(long)]
    regulations: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// overrides the config's search seed
    #[arg(long)]
    seed: Option<u64>,
    /// result document; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    scene_graph: PathBuf,
    #[arg(long)]
    equipment: PathBuf,
    #[arg(long)]
    ocr: PathBuf,
    #[arg(long)]
    regulations: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// fused scene graph; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// code-to-detection matching report
    #[arg(long)]
    matching: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    scene_graph: PathBuf,
    /// fused together with --ocr when given
    #[arg(long, requires = "ocr")]
    equipment: Option<PathBuf>,
    #[arg(long, requires = "equipment")]
    ocr: Option<PathBuf>,
    #[arg(long)]
    regulations: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitModelArgs {
    #[arg(long)]
    registry: PathBuf,
    /// scene graph whose class vocabularies resolve registry labels
    #[arg(long)]
    scene_graph: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    smoothing: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    model: PathBuf,
    /// scene graph supplying the class vocabularies
    #[arg(long)]
    scene_graph: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    p_edge_flip: f64,
    /// receives truth.json and scene_graph.json
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    /// scene graph supplying the class vocabularies
    #[arg(long)]
    scene_graph: PathBuf,
    #[arg(long)]
    regulations: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// class-probability noise levels
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.3, 1.0])]
    noise: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    p_edge_flip: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// per-row table; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// per-level means with provenance header
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct EgrtrArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    rel_classes: usize,
    #[arg(long, default_value_t = 6)]
    enc_tokens: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// also write the seeded weights document
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scene_graph: PathBuf,
    /// result document or bare hierarchy document
    #[arg(long)]
    structure: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Input(anyhow::Error),
    Invariant(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::FitModel(a) => cmd_fit_model(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
        Command::EgrtrDemo(a) => cmd_egrtr(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(e)) => {
            eprintln!("invariant breach: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types always serialize");
    s.push('\n');
    s
}

/// Raw input bytes together with the name used in provenance headers.
struct Input {
    name: &'static str,
    bytes: Vec<u8>,
    path: PathBuf,
}

impl Input {
    fn load(name: &'static str, path: &Path) -> anyhow::Result<Self> {
        Ok(Self {
            name,
            bytes: read(path)?,
            path: path.to_path_buf(),
        })
    }

    fn context(&self) -> String {
        self.path.display().to_string()
    }
}

fn digests<'a>(inputs: &[&'a Input]) -> Vec<(&'static str, &'a [u8])> {
    inputs.iter().map(|i| (i.name, i.bytes.as_slice())).collect()
}

struct Evidence {
    scene: Input,
    inst: PlantInstance,
    regulations: Input,
    rulebook: plantstruct::Rulebook,
    config_input: Input,
    config: RunConfig,
}

fn load_evidence(scene: &Path, regulations: &Path, config: &Path) -> anyhow::Result<Evidence> {
    let scene = Input::load("scene_graph", scene)?;
    let inst = parse_scene_graph(&scene.bytes).with_context(|| scene.context())?;
    let regulations = Input::load("regulations", regulations)?;
    let rulebook = parse_regulations(&regulations.bytes, inst.vocab()).with_context(|| regulations.context())?;
    let config_input = Input::load("config", config)?;
    let config = parse_config(&config_input.bytes).with_context(|| config_input.context())?;
    Ok(Evidence {
        scene,
        inst,
        regulations,
        rulebook,
        config_input,
        config,
    })
}

fn load_codes(equipment: &Path, ocr: &Path) -> anyhow::Result<(Input, Vec<EquipmentRow>, Input, Vec<OcrCode>)> {
    let eq = Input::load("equipment", equipment)?;
    let rows = parse_equipment(&eq.bytes).with_context(|| eq.context())?;
    let oc = Input::load("ocr", ocr)?;
    let codes = parse_ocr_codes(&oc.bytes).with_context(|| oc.context())?;
    Ok((eq, rows, oc, codes))
}

/// The best structure must be valid and canonical for its instance.
fn check_report(report: &SearchReport, inst: &PlantInstance) -> CmdResult {
    if let Err(v) = validate_structure(&report.best, inst) {
        return Err(Failure::Invariant(anyhow!("search returned an invalid structure: {v:?}")));
    }
    if !report.best.is_canonical() {
        return Err(Failure::Invariant(anyhow!("search returned a non-canonical structure")));
    }
    Ok(())
}

fn cmd_reconstruct(a: ReconstructArgs) -> CmdResult {
    let mut ev = load_evidence(&a.scene_graph, &a.regulations, &a.config)?;
    if let Some(seed) = a.seed {
        ev.config.seed = seed;
    }
    let (eq, rows, oc, codes) = load_codes(&a.equipment, &a.ocr)?;
    let model_input = Input::load("model", &a.model)?;
    let model = parse_model(&model_input.bytes, ev.inst.vocab()).with_context(|| model_input.context())?;

    let rec = reconstruct(&ev.inst, &codes, &rows, &ev.rulebook, &model, &ev.config).map_err(|e| match e {
        PipelineError::Config(_) => Failure::Input(anyhow!(e).context(ev.config_input.context())),
        other => Failure::Input(anyhow!(other)),
    })?;
    check_report(&rec.report, &rec.fused)?;
    let header = Header::for_run(
        &ev.config,
        digests(&[&ev.scene, &eq, &oc, &ev.regulations, &model_input, &ev.config_input]),
    );
    let doc = ResultDocument::new(header, &rec.fused, &rec.report, Method::Anneal, Some(rec.assignment));
    emit(a.out.as_deref(), &doc.to_json())?;
    Ok(())
}

fn cmd_fuse(a: FuseArgs) -> CmdResult {
    let ev = load_evidence(&a.scene_graph, &a.regulations, &a.config)?;
    let (eq, rows, oc, codes) = load_codes(&a.equipment, &a.ocr)?;
    let c = &ev.config;
    let (fused, assignment) = fuse_instance(&ev.inst, &codes, &rows, &ev.rulebook, c.beta, c.gamma, c.match_cutoff_factor)
        .map_err(|e| Failure::Input(anyhow!(e)))?;
    emit(a.out.as_deref(), &write_scene_graph(&fused))?;
    if let Some(path) = a.matching.as_deref() {
        #[derive(Serialize)]
        struct MatchingReport<'a> {
            header: Header,
            matching: &'a plantstruct::fusion::CodeAssignment,
        }
        let header = Header::for_run(c, digests(&[&ev.scene, &eq, &oc, &ev.regulations, &ev.config_input]));
        emit(
            Some(path),
            &to_json(&MatchingReport {
                header,
                matching: &assignment,
            }),
        )?;
    }
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> CmdResult {
    let ev = load_evidence(&a.scene_graph, &a.regulations, &a.config)?;
    let model_input = Input::load("model", &a.model)?;
    let model = parse_model(&model_input.bytes, ev.inst.vocab()).with_context(|| model_input.context())?;
    ev.config.validate().map_err(|e| Failure::Input(anyhow!(e).context(ev.config_input.context())))?;

    let mut inputs = vec![&ev.scene];
    let loaded;
    let (inst, matching) = match (a.equipment.as_deref(), a.ocr.as_deref()) {
        (Some(eq_path), Some(ocr_path)) => {
            loaded = load_codes(eq_path, ocr_path)?;
            let (ref eq, ref rows, ref oc, ref codes) = loaded;
            inputs.extend([eq, oc]);
            let c = &ev.config;
            let (fused, assignment) = fuse_instance(&ev.inst, codes, rows, &ev.rulebook, c.beta, c.gamma, c.match_cutoff_factor)
                .map_err(|e| Failure::Input(anyhow!(e)))?;
            (fused, Some(assignment))
        }
        _ => (ev.inst.clone(), None),
    };
    inputs.extend([&ev.regulations, &model_input, &ev.config_input]);

    let report = brute_force(&inst, &ev.rulebook, &model, &ev.config).map_err(|e| Failure::Input(anyhow!(e)))?;
    check_report(&report, &inst)?;
    let doc = ResultDocument::new(Header::for_run(&ev.config, digests(&inputs)), &inst, &report, Method::BruteForce, matching);
    emit(a.out.as_deref(), &doc.to_json())?;
    Ok(())
}

fn cmd_fit_model(a: FitModelArgs) -> CmdResult {
    let scene = read(&a.scene_graph)?;
    let vocab = parse_vocabularies(&scene).with_context(|| a.scene_graph.display().to_string())?;
    let registry = read(&a.registry)?;
    let records = parse_registry(&registry, &vocab).with_context(|| a.registry.display().to_string())?;
    let model = fit_plausibility(&records, &vocab, a.smoothing).map_err(|e| Failure::Input(anyhow!(e)))?;
    emit(a.out.as_deref(), &write_model(&model, &vocab))?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    use rand::SeedableRng;
    let scene = Input::load("scene_graph", &a.scene_graph)?;
    let vocab = parse_vocabularies(&scene.bytes).with_context(|| scene.context())?;
    let model_input = Input::load("model", &a.model)?;
    let model = parse_model(&model_input.bytes, &vocab).with_context(|| model_input.context())?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(a.seed, "synth"));
    let (truth, clean) = sample_structure(&model, &vocab, &mut rng).map_err(|e| Failure::Input(anyhow!(e)))?;
    let spec = NoiseSpec {
        sigma_prob: a.sigma,
        p_edge_flip: a.p_edge_flip,
        seed: derive_seed(a.seed, "noise"),
    };
    let noisy = corrupt_instance(&clean, &spec).map_err(|e| Failure::Input(anyhow!(e)))?;

    #[derive(Serialize)]
    struct Truth {
        header: Header,
        noise: NoiseSpec,
        hierarchy: HierarchyDocument,
    }
    let settings = format!("seed={} sigma={} p_edge_flip={}", a.seed, a.sigma, a.p_edge_flip);
    let truth_doc = Truth {
        header: Header::new(&settings, digests(&[&scene, &model_input])),
        noise: spec,
        hierarchy: hierarchy_document(&truth, &vocab),
    };
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    emit(Some(&a.out_dir.join("truth.json")), &to_json(&truth_doc))?;
    emit(Some(&a.out_dir.join("scene_graph.json")), &write_scene_graph(&noisy))?;
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    let mut ev = load_evidence(&a.scene_graph, &a.regulations, &a.config)?;
    let model_input = Input::load("model", &a.model)?;
    let vocab = ev.inst.vocab().clone();
    let model = parse_model(&model_input.bytes, &vocab).with_context(|| model_input.context())?;
    ev.config.seed = derive_seed(a.seed, "search");
    let settings = BenchSettings {
        instances: a.instances,
        sigma_levels: a.noise.clone(),
        p_edge_flip: a.p_edge_flip,
        seed: derive_seed(a.seed, "synth"),
    };
    let rows = run_benchmark(&model, &vocab, &ev.rulebook, &ev.config, &settings).map_err(|e| Failure::Input(anyhow!(e)))?;
    emit(a.out.as_deref(), &bench_csv(&rows))?;
    if let Some(path) = a.summary.as_deref() {
        #[derive(Serialize)]
        struct Summary {
            header: Header,
            settings: BenchSettings,
            levels: Vec<LevelSummary>,
        }
        let summary = Summary {
            header: Header::for_run(&ev.config, digests(&[&ev.scene, &ev.regulations, &model_input, &ev.config_input])),
            settings,
            levels: summarize(&rows),
        };
        emit(Some(path), &to_json(&summary))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Range {
    min: f64,
    max: f64,
}

impl Range {
    fn of<'a>(values: impl Iterator<Item = &'a f64>) -> Self {
        values.fold(
            Range {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |r, &v| Range {
                min: r.min.min(v),
                max: r.max.max(v),
            },
        )
    }
}

#[derive(Serialize)]
struct GradientSummary {
    step: f64,
    parameters: usize,
    max_relative_error: f64,
    max_absolute_error: f64,
    worst: String,
    passed: bool,
}

#[derive(Serialize)]
struct EgrtrReport {
    header: Header,
    config: HeadConfig,
    init_seed: u64,
    trace_seed: u64,
    parameters: usize,
    shapes: std::collections::BTreeMap<&'static str, Vec<usize>>,
    g_rel: Range,
    g_conn: Range,
    gates: Range,
    outputs_in_unit_interval: bool,
    gates_open_interval: bool,
    broadcast_constant: bool,
    gradient_check: GradientSummary,
}

fn cmd_egrtr(a: EgrtrArgs) -> CmdResult {
    let config = HeadConfig::new(a.n, a.d_model, a.layers, a.rel_classes);
    let init_seed = derive_seed(a.seed, "init");
    let trace_seed = derive_seed(a.seed, "trace");
    let state = egrtr::init_state(config, init_seed).map_err(|e| Failure::Input(anyhow!(e)))?;
    if a.enc_tokens == 0 {
        return Err(Failure::Input(anyhow!("--enc-tokens must be positive")));
    }
    let trace = DecoderTrace::random(&config, a.enc_tokens, trace_seed);
    let out = egrtr::forward(&trace, &state).map_err(|e| Failure::Invariant(anyhow!(e)))?;
    let check = egrtr::gradient_check(&trace, &state, GRAD_STEP).map_err(|e| Failure::Invariant(anyhow!(e)))?;

    let broadcast_constant = out.r_prime.iter().enumerate().all(|(l, r)| {
        r.outer_iter()
            .all(|plane| plane.outer_iter().all(|cell| cell == out.experts.row(l)))
    });
    let shapes = [
        ("r_a", vec![out.r_a.len(), a.n, a.n, 2 * a.d_model]),
        ("r_z", out.r_z.shape().to_vec()),
        ("experts", out.experts.shape().to_vec()),
        ("fused", out.fused.shape().to_vec()),
        ("gates", out.gates.shape().to_vec()),
        ("g_rel", out.g_rel.shape().to_vec()),
        ("g_conn", out.g_conn.shape().to_vec()),
    ]
    .into_iter()
    .collect();
    let config_text = to_json(&config);
    let report = EgrtrReport {
        header: Header::new(&config_text, []),
        config,
        init_seed,
        trace_seed,
        parameters: state.parameter_count(),
        shapes,
        outputs_in_unit_interval: out.g_rel.iter().chain(out.g_conn.iter()).all(|v| (0.0..=1.0).contains(v)),
        gates_open_interval: out.gates.iter().all(|&g| g > 0.0 && g < 1.0),
        g_rel: Range::of(out.g_rel.iter()),
        g_conn: Range::of(out.g_conn.iter()),
        gates: Range::of(out.gates.iter()),
        broadcast_constant,
        gradient_check: GradientSummary {
            step: GRAD_STEP,
            parameters: check.parameters,
            max_relative_error: check.max_relative_error,
            max_absolute_error: check.max_absolute_error,
            worst: check.worst,
            passed: check.max_relative_error < GRAD_TOLERANCE,
        },
    };
    emit(a.out.as_deref(), &to_json(&report))?;
    if let Some(path) = a.weights_out.as_deref() {
        emit(Some(path), &to_json(&state.to_document()))?;
    }
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> CmdResult {
    let scene = read(&a.scene_graph)?;
    let inst = parse_scene_graph(&scene).with_context(|| a.scene_graph.display().to_string())?;
    let bytes = read(&a.structure)?;
    let ctx = || a.structure.display().to_string();
    let value: serde_json::Value = serde_json::from_slice(&bytes).with_context(ctx)?;
    let hierarchy_value = value.get("hierarchy").cloned().unwrap_or(value);
    let hierarchy: HierarchyDocument = serde_json::from_value(hierarchy_value).with_context(ctx)?;
    let draft = draft_from_hierarchy(&hierarchy, inst.vocab()).with_context(ctx)?;

    #[derive(Serialize)]
    struct Validation {
        valid: bool,
        violations: Vec<Violation>,
    }
    let violations = validate_draft(&draft, &inst).err().unwrap_or_default();
    let report = Validation {
        valid: violations.is_empty(),
        violations,
    };
    emit(a.out.as_deref(), &to_json(&report))?;
    if report.valid {
        Ok(())
    } else {
        Err(Failure::Invariant(anyhow!("{} violation(s) in {}", report.violations.len(), ctx())))
    }
}
