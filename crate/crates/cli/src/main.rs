mod hinton;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use strudel::dataset::{load_dataset, presets, save_dataset, DatasetSpec, GenerationConfig, MixingSpec};
use strudel::joint::JointDistribution;
use strudel::metrics::{evaluate_group, percent, MetricReport};
use strudel::pipeline::{
    build_dataset, compute_metrics_with_background, load_probe, parse_projections, run_ablation, run_experiment,
    save_experiment, save_metrics, save_probe, AblationRow, ExperimentConfig, PooledImportances, RunManifest,
};
use strudel::probing::{probe_dataset, ProbeConfig};
use strudel::schema::{HierarchySchema, Projection, SchemaDoc, Side};
use strudel::theory::{verification_cases, verify_case, verify_lemmas, CaseReport, LemmaReport};

use hinton::Hinton;

const EXIT_INPUT: u8 = 2;
const EXIT_VERIFY: u8 = 3;

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

trait Classify<T> {
    /// Marks an error as caused by bad input or configuration.
    fn input(self) -> Result<T, Failure>;
    /// Marks an error as a runtime failure.
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_INPUT,
            error: e.into(),
        })
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }
}

#[derive(Parser)]
#[command(name = "strudel", version, about = "Structured disentanglement metrics for slot-based representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the multi-object preset dataset spec as JSON.
    Spec(SpecArgs),
    /// Generate grouped factor samples, optionally with synthetic latents.
    Generate(GenerateArgs),
    /// Align slots and fit the factor predictors.
    Probe(ProbeArgs),
    /// Score probe results (or a joint matrix) under hierarchy projections.
    Metrics(MetricsArgs),
    /// Check the score relations on random joints.
    Verify(VerifyArgs),
    /// Compare runs with and without slot alignment and local groups.
    Ablate(ExperimentArgs),
    /// Generate, probe and score in one go.
    Run(ExperimentArgs),
    /// Draw an importance matrix as an SVG Hinton diagram.
    Hinton(HintonArgs),
}

#[derive(Args)]
struct SpecArgs {
    #[arg(long, default_value_t = 4)]
    objects: usize,
    #[arg(long, default_value_t = 8)]
    dims: usize,
    /// Add a background slot with its own colour factors.
    #[arg(long)]
    background: bool,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Dataset spec (JSON).
    spec: PathBuf,
    #[arg(long, default_value_t = 10)]
    groups: usize,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit,validation,evaluation sizes; defaults to 60/20/20.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    splits: Option<Vec<usize>>,
    /// Sample every factor from its full domain instead of locally.
    #[arg(long)]
    global: bool,
    /// Mixing spec (JSON) for synthetic latents.
    #[arg(long, conflicts_with = "oracle")]
    mixing: Option<PathBuf>,
    /// Synthetic latents from the default noiseless, shuffled mixing.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    /// Dataset directory.
    dataset: PathBuf,
    /// Probe config (JSON); missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the number of alignment iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Skip slot alignment.
    #[arg(long)]
    no_perm: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Probe output directory.
    #[arg(required_unless_present = "joint_file")]
    probe: Option<PathBuf>,
    /// Score a single joint matrix instead: JSON with `schema` and `matrix`.
    #[arg(long, conflicts_with = "probe")]
    joint_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "identity")]
    projections: Vec<String>,
    /// Factors treated as background (tuple keys or labels); replaces the
    /// ones marked in the factor specs.
    #[arg(long, value_delimiter = ',')]
    background: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Schema to test: toy, asymmetric, three-level or all.
    #[arg(long, default_value = "all")]
    schema: String,
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for a JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (JSON). Without it, the shuffled oracle is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    objects: usize,
    #[arg(long, default_value_t = 10)]
    groups: usize,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HintonArgs {
    /// Probe directory or joint file.
    input: PathBuf,
    #[arg(long, default_value = "identity")]
    projection: String,
    /// Draw one group instead of the group average.
    #[arg(long)]
    group: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize)]
struct JointFile {
    schema: SchemaDoc,
    matrix: Vec<Vec<f64>>,
    #[serde(default)]
    background: Vec<String>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_joint_file(path: &Path) -> anyhow::Result<(JointDistribution, Vec<String>)> {
    let file: JointFile = read_json(path)?;
    let schema = Arc::new(HierarchySchema::try_from(file.schema)?);
    let rows = file.matrix.len();
    let cols = file.matrix.first().map_or(0, Vec::len);
    if file.matrix.iter().any(|r| r.len() != cols) {
        return Err(anyhow!("{}: matrix rows have different lengths", path.display()));
    }
    let m = Array2::from_shape_vec((rows, cols), file.matrix.into_iter().flatten().collect())?;
    Ok((JointDistribution::normalize(schema, &m)?, file.background))
}

fn resolve_background(schema: &HierarchySchema, names: &[String]) -> anyhow::Result<Vec<usize>> {
    let mut out = Vec::new();
    for name in names {
        let hits: Vec<usize> = (0..schema.n_factors())
            .filter(|&j| {
                let key = schema.tuple_key(Side::Factors, j);
                key == *name || key.split('|').any(|l| l == name)
            })
            .collect();
        if hits.is_empty() {
            return Err(anyhow!(
                "background `{name}` matches no factor; factors are {}",
                schema.tuple_keys(Side::Factors).join(", ")
            ));
        }
        out.extend(hits);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn print_report(report: &MetricReport) {
    for (name, scores) in &report.aggregate.projections {
        let show = |s: &strudel::metrics::Summary| match (s.mean, s.stderr) {
            (Some(m), Some(e)) => format!("{:5.1} ± {:.1}", percent(m), percent(e)),
            (Some(m), None) => format!("{:5.1}", percent(m)),
            _ => "  n/a".into(),
        };
        println!(
            "{name:<24} C {}  D {}",
            show(&scores.completeness),
            show(&scores.disentanglement)
        );
    }
    if let Some(i) = report.informativeness.global {
        println!("{:<24} I {:5.1}", "informativeness", percent(i));
    }
}

/// Rows are factors; columns hold per-projection completeness and
/// informativeness.
fn per_factor_csv(report: &MetricReport) -> String {
    let projections: Vec<&String> = report.aggregate.per_factor_by_projection.keys().collect();
    let mut s = String::from("factor");
    for p in &projections {
        s.push_str(&format!(",C({p})"));
    }
    s.push_str(",I\n");
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for key in report.per_factor_completeness.keys() {
        s.push_str(key);
        for p in &projections {
            let v = report.aggregate.per_factor_by_projection[*p].get(key).and_then(|s| s.mean);
            s.push(',');
            s.push_str(&cell(v));
        }
        s.push(',');
        s.push_str(&cell(report.informativeness.per_factor.get(key).copied().flatten()));
        s.push('\n');
    }
    s
}

fn cmd_spec(args: SpecArgs) -> CmdResult {
    let spec = presets::multi_dsprites(args.objects, args.dims, args.background);
    spec.validate().input()?;
    let mut text = serde_json::to_string_pretty(&spec).runtime()?;
    text.push('\n');
    match args.out {
        Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display())).runtime(),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> CmdResult {
    let started = Instant::now();
    let spec: DatasetSpec = read_json(&args.spec).input()?;
    spec.validate().input()?;
    let mut generation = GenerationConfig::new(args.groups, args.samples, args.seed);
    if let Some(s) = &args.splits {
        generation.splits = [s[0], s[1], s[2]];
    }
    generation.local = !args.global;
    let mixing = match (&args.mixing, args.oracle) {
        (Some(path), _) => Some(read_json::<MixingSpec>(path).input()?),
        (None, true) => Some(MixingSpec::default()),
        (None, false) => None,
    };
    let ds = build_dataset(&spec, &generation, mixing.as_ref()).input()?;
    save_dataset(&ds, &args.out).runtime()?;
    let config = serde_json::json!({ "spec": spec, "generation": generation, "mixing": mixing });
    let mut manifest = RunManifest::new("generate", &config, vec![args.seed]);
    manifest.inputs.push(args.spec.display().to_string());
    manifest.finish(started).write(&args.out).runtime()?;
    println!("wrote {} groups to {}", ds.groups.len(), args.out.display());
    Ok(())
}

fn cmd_probe(args: ProbeArgs) -> CmdResult {
    let started = Instant::now();
    let ds = load_dataset(&args.dataset).input()?;
    let mut config = match &args.config {
        Some(path) => read_json::<ProbeConfig>(path).input()?,
        None => ProbeConfig::default(),
    };
    if let Some(n) = args.iters {
        config.n_iters = n;
    }
    if args.no_perm {
        config.n_iters = 0;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate().input()?;
    let result = probe_dataset(&ds, &config).input()?;
    save_probe(&result, &ds, &args.out).runtime()?;
    let mut manifest = RunManifest::new("probe", &config, vec![config.seed]);
    manifest.inputs.push(args.dataset.display().to_string());
    manifest.finish(started).write(&args.out).runtime()?;
    let violations: usize = result.groups.iter().map(|g| g.trace.violations).sum();
    println!(
        "probed {} groups; {} alignment steps increased the residual",
        result.groups.len(),
        violations
    );
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> CmdResult {
    let started = Instant::now();
    let (report, input) = if let Some(path) = &args.joint_file {
        let (p, file_background) = read_joint_file(path).input()?;
        let names = args.background.clone().unwrap_or(file_background);
        let background = resolve_background(p.schema(), &names).input()?;
        let projections = parse_projections(p.schema(), &args.projections).input()?;
        let group = evaluate_group(p.matrix(), p.schema_arc(), &projections, &background, None).input()?;
        let report = strudel::metrics::aggregate_groups(vec![group]).input()?;
        (report, path)
    } else {
        let dir = args.probe.as_ref().expect("clap requires a probe dir without --joint-file");
        let bundle = load_probe(dir).input()?;
        let background = match &args.background {
            Some(names) => resolve_background(&bundle.schema, names).input()?,
            None => bundle.catalog.background_factors(),
        };
        let projections = parse_projections(&bundle.schema, &args.projections).input()?;
        let report =
            compute_metrics_with_background(&bundle.result.groups, &bundle.schema, &background, &projections)
                .input()?;
        (report, dir)
    };
    save_metrics(&report, &args.out).runtime()?;
    fs::write(args.out.join("per_factor.csv"), per_factor_csv(&report)).runtime()?;
    let config = serde_json::json!({ "projections": args.projections, "background": args.background });
    let mut manifest = RunManifest::new("metrics", &config, Vec::new());
    manifest.inputs.push(input.display().to_string());
    manifest.finish(started).write(&args.out).runtime()?;
    print_report(&report);
    Ok(())
}

#[derive(Serialize)]
struct VerifyReport {
    cases: Vec<CaseReport>,
    lemmas: LemmaReport,
    passed: bool,
}

fn cmd_verify(args: VerifyArgs) -> CmdResult {
    let started = Instant::now();
    let cases: Vec<_> = verification_cases()
        .into_iter()
        .filter(|c| args.schema == "all" || c.name == args.schema)
        .collect();
    if cases.is_empty() {
        let names: Vec<String> = verification_cases().into_iter().map(|c| c.name).collect();
        return Err(anyhow!("unknown schema `{}`; choose all, {}", args.schema, names.join(", "))).input();
    }
    let mut reports = Vec::new();
    let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
    for case in &cases {
        let r = verify_case(case, args.draws, args.seed).runtime()?;
        println!(
            "{:<12} dci-equivalence    worst gap    C {:.3e}  D {:.3e}  {}",
            r.case,
            r.equivalence_gap.completeness,
            r.equivalence_gap.disentanglement,
            verdict(r.equivalence_holds())
        );
        println!(
            "{:<12} lower-bound        worst slack  C {:.3e}  D {:.3e}  {}",
            r.case,
            r.lower_slack.completeness,
            r.lower_slack.disentanglement,
            verdict(r.lower_holds())
        );
        println!(
            "{:<12} upper-bound        worst slack  C {:.3e}  D {:.3e}  {}",
            r.case,
            r.upper_slack.completeness,
            r.upper_slack.disentanglement,
            verdict(r.upper_holds())
        );
        println!(
            "{:<12} two-part-identity  worst resid  C {:.3e}  D {:.3e}  {}",
            r.case,
            r.identity_residual.completeness,
            r.identity_residual.disentanglement,
            verdict(r.identity_holds())
        );
        reports.push(r);
    }
    let lemmas = verify_lemmas(args.draws, args.seed).runtime()?;
    println!(
        "{:<12} information-lemmas worst        {:.3e}  {}",
        "3-way",
        [
            lemmas.worst.change_of_base,
            -lemmas.worst.subadditivity,
            -lemmas.worst.mi_min,
            -lemmas.worst.joint_vs_marginal,
            lemmas.worst.mi_identity,
            lemmas.worst.chain_rule
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max),
        verdict(lemmas.passes())
    );
    let passed = reports.iter().all(CaseReport::passes) && lemmas.passes();
    if let Some(out) = &args.out {
        let report = VerifyReport {
            cases: reports,
            lemmas,
            passed,
        };
        write_json(&out.join("verify.json"), &report).runtime()?;
        let config = serde_json::json!({ "schema": args.schema, "draws": args.draws });
        RunManifest::new("verify", &config, vec![args.seed])
            .finish(started)
            .write(out)
            .runtime()?;
    }
    if passed {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFY,
            error: anyhow!("verification failed"),
        })
    }
}

fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => read_json::<ExperimentConfig>(path).input()?,
        None => ExperimentConfig::oracle(args.objects, args.groups, args.samples, args.seed.unwrap_or(0)),
    };
    if let Some(seed) = args.seed {
        cfg.generation.seed = seed;
        cfg.probe.seed = seed;
    }
    if let Some(n) = args.iters {
        cfg.probe.n_iters = n;
    }
    Ok(cfg)
}

fn ablation_table(rows: &[AblationRow]) -> String {
    let mark = |b: bool| if b { "+" } else { "-" };
    let cell = |r: &AblationRow, proj: &str, c: bool| {
        r.report
            .projections
            .get(proj)
            .and_then(|s| if c { s.completeness } else { s.disentanglement })
            .map(|v| format!("{:.1}", percent(v)))
            .unwrap_or_else(|| "n/a".into())
    };
    let mut s = String::from("alignment,local_groups,object_C,object_D,property_C,property_D,identity_C,identity_D,I\n");
    for r in rows {
        let info = r.report.informativeness.global.map(|v| format!("{:.1}", percent(v))).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            mark(r.alignment),
            mark(r.local_groups),
            cell(r, "object", true),
            cell(r, "object", false),
            cell(r, "property", true),
            cell(r, "property", false),
            cell(r, "identity", true),
            cell(r, "identity", false),
            info
        ));
    }
    s
}

fn cmd_ablate(args: ExperimentArgs) -> CmdResult {
    let started = Instant::now();
    let cfg = experiment_config(&args)?;
    let rows = run_ablation(&cfg).input()?;
    write_json(&args.out.join("ablation.json"), &rows).runtime()?;
    let table = ablation_table(&rows);
    fs::write(args.out.join("ablation.csv"), &table).runtime()?;
    RunManifest::new("ablate", &cfg, vec![cfg.generation.seed])
        .finish(started)
        .write(&args.out)
        .runtime()?;
    print!("{table}");
    Ok(())
}

fn cmd_run(args: ExperimentArgs) -> CmdResult {
    let started = Instant::now();
    let cfg = experiment_config(&args)?;
    let output = run_experiment(&cfg).input()?;
    save_experiment(&output, &args.out).runtime()?;
    fs::write(args.out.join("metrics/per_factor.csv"), per_factor_csv(&output.report)).runtime()?;
    RunManifest::new("run", &cfg, vec![cfg.generation.seed])
        .finish(started)
        .write(&args.out)
        .runtime()?;
    print_report(&output.report);
    Ok(())
}

fn cmd_hinton(args: HintonArgs) -> CmdResult {
    let (p, title) = if args.input.is_dir() {
        let bundle = load_probe(&args.input).input()?;
        let (matrix, title) = match args.group {
            Some(g) => {
                let group = bundle
                    .result
                    .groups
                    .iter()
                    .find(|x| x.group_id == g)
                    .ok_or_else(|| anyhow!("no group {g} in {}", args.input.display()))
                    .input()?;
                (group.thresholded.clone(), format!("group {g}"))
            }
            None => {
                let pooled = PooledImportances::of(&bundle.result.groups, &bundle.schema)
                    .ok_or_else(|| anyhow!("{} holds no groups", args.input.display()))
                    .input()?;
                (pooled.thresholded, "group average".to_string())
            }
        };
        (JointDistribution::normalize(bundle.schema.clone(), &matrix).input()?, title)
    } else {
        let (p, _) = read_joint_file(&args.input).input()?;
        (p, String::from("joint"))
    };
    let projection = Projection::parse(p.schema(), &args.projection).input()?;
    let title = format!("{title}, {} projection", projection.name(p.schema()));
    let svg = Hinton::from_joint(&p, &projection, &title).runtime()?.to_svg();
    if let Some(parent) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent).runtime()?;
    }
    fs::write(&args.out, svg)
        .with_context(|| format!("writing {}", args.out.display()))
        .runtime()?;
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("STRUDEL_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| anyhow!("STRUDEL_THREADS must be a positive integer, got `{value}`"))
        .input()?;
    if n == 0 {
        return Err(anyhow!("STRUDEL_THREADS must be at least 1")).input();
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().runtime()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Spec(a) => cmd_spec(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Run(a) => cmd_run(a),
        Command::Hinton(a) => cmd_hinton(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
