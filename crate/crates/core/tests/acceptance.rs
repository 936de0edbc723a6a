//! Acceptance suite: one pass/fail line per criterion. Exits non-zero when
//! any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{array, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use strudel::joint::JointDistribution;
use strudel::metrics::{completeness, disentanglement, informativeness};
use strudel::pipeline::{list_files, run_experiment, save_experiment, ExperimentConfig, ExperimentOutput, MANIFEST_FILE};
use strudel::regressors::{Predictor, Standardizer};
use strudel::schema::{presets, HierarchySchema, Projection};
use strudel::theory::{
    check_k2_identity, check_lower_bound, check_upper_bound, random_joint, verify_lemmas, CONCENTRATIONS,
};

const DRAWS: usize = 10_000;
const SEED: u64 = 20_240_613;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
}

fn draw(schema: &Arc<HierarchySchema>, i: usize) -> JointDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    rng.set_stream(i as u64);
    random_joint(schema.clone(), CONCENTRATIONS[i % CONCENTRATIONS.len()], &mut rng).expect("valid concentration")
}

/// Column-mass weighted `1 − H_L(column)`, written out directly.
fn dci_completeness(p: ArrayView2<'_, f64>) -> f64 {
    let (l, _) = p.dim();
    let mut total = 0.0;
    for col in p.columns() {
        let mass: f64 = col.sum();
        if mass <= 0.0 {
            continue;
        }
        let mut h = 0.0;
        for &v in col {
            if v > 0.0 {
                let q = v / mass;
                h -= q * q.ln() / (l as f64).ln();
            }
        }
        total += mass * (1.0 - h);
    }
    total
}

fn criterion_1() -> (bool, String) {
    let schema = Arc::new(presets::toy());
    let id = Projection::identity(&schema);
    let (gc, gd) = (0..DRAWS)
        .into_par_iter()
        .map(|i| {
            let p = draw(&schema, i);
            let c = (completeness(&p, &id).unwrap() - dci_completeness(p.matrix().view())).abs();
            let d = (disentanglement(&p, &id).unwrap() - dci_completeness(p.matrix().t())).abs();
            (c, d)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    (
        gc <= 1e-12 && gd <= 1e-12,
        format!("max |C−DCI| {gc:.2e}, max |D−DCI| {gd:.2e} over {DRAWS} toy draws"),
    )
}

struct BoundSlacks {
    lower: [f64; 2],
    upper: [f64; 2],
}

/// Smallest slacks of the lower chain and the upper bound, per metric.
fn bound_slacks(schema: HierarchySchema) -> BoundSlacks {
    let schema = Arc::new(schema);
    let id = Projection::identity(&schema);
    let parts: Vec<Projection> = (0..schema.n_levels()).map(Projection::single).collect();
    let min2 = |a: [f64; 2], b: [f64; 2]| [a[0].min(b[0]), a[1].min(b[1])];
    let (lower, upper) = (0..DRAWS)
        .into_par_iter()
        .map(|i| {
            let p = draw(&schema, i);
            let lo = check_lower_bound(&p, &id, &parts).unwrap();
            let up = check_upper_bound(&p, &id, &parts).unwrap();
            (
                [lo.completeness.min_slack(), lo.disentanglement.min_slack()],
                [up.completeness.slack, up.disentanglement.slack],
            )
        })
        .reduce(
            || ([f64::INFINITY; 2], [f64::INFINITY; 2]),
            |a, b| (min2(a.0, b.0), min2(a.1, b.1)),
        );
    BoundSlacks { lower, upper }
}

fn three_level() -> HierarchySchema {
    presets::three_level(2, &["color"], &["x", "y"], 2)
}

fn criterion_4() -> (bool, String) {
    let schema = Arc::new(presets::toy());
    let (p1, p2) = (Projection::single(0), Projection::single(1));
    let worst = (0..DRAWS)
        .into_par_iter()
        .map(|i| {
            let p = draw(&schema, i);
            let id = check_k2_identity(&p, &p1, &p2).unwrap();
            id.completeness.residual.abs().max(id.disentanglement.residual.abs())
        })
        .reduce(|| 0.0, f64::max);
    (worst <= 1e-9, format!("max residual {worst:.2e} over {DRAWS} toy draws"))
}

fn criterion_5() -> (bool, String) {
    let m = array![
        [0.125, 0.125, 0.0, 0.0],
        [0.125, 0.125, 0.0, 0.0],
        [0.0, 0.0, 0.125, 0.125],
        [0.0, 0.0, 0.125, 0.125]
    ];
    let schema = Arc::new(presets::toy());
    let p = JointDistribution::new(schema.clone(), m).unwrap();
    let object = Projection::parse(&schema, "object").unwrap();
    let property = Projection::parse(&schema, "property").unwrap();
    let id = Projection::identity(&schema);
    let got = [
        ("C(object)", completeness(&p, &object).unwrap(), 1.0),
        ("D(object)", disentanglement(&p, &object).unwrap(), 1.0),
        ("C(property)", completeness(&p, &property).unwrap(), 0.0),
        ("D(property)", disentanglement(&p, &property).unwrap(), 0.0),
        ("C(identity)", completeness(&p, &id).unwrap(), 0.5),
    ];
    let worst = got.iter().map(|(_, v, want)| (v - want).abs()).fold(0.0, f64::max);
    let text = got
        .iter()
        .map(|(k, v, _)| format!("{k}={v:.3}"))
        .collect::<Vec<_>>()
        .join(" ");
    (worst <= 1e-12, format!("{text} (max error {worst:.1e})"))
}

/// Predicts the fit-split target mean whatever the input.
struct FitMean(Vec<f64>, usize);

impl Predictor for FitMean {
    fn n_inputs(&self) -> usize {
        self.1
    }

    fn n_outputs(&self) -> usize {
        self.0.len()
    }

    fn predict_into(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// Baseline on one generated group, targets standardized with fit stats.
fn mean_predictor_errors() -> Vec<Option<f64>> {
    let cfg = ExperimentConfig::oracle(4, 1, 2000, 7);
    let ds = strudel::pipeline::build_dataset(&cfg.spec, &cfg.generation, cfg.mixing.as_ref()).unwrap();
    let g = &ds.groups[0];
    let v = Standardizer::fit_rows(g.factors.view(), &g.splits.fit).transform(g.factors.view());
    let z = g.latents.as_ref().unwrap();
    let fit = v.select(ndarray::Axis(0), &g.splits.fit);
    let mean: Vec<f64> = fit.columns().into_iter().map(|c| c.mean().unwrap()).collect();
    let predictor = FitMean(mean, z.ncols());
    let eval_v = v.select(ndarray::Axis(0), &g.splits.evaluation);
    let eval_z = z.select(ndarray::Axis(0), &g.splits.evaluation);
    informativeness(&predictor, eval_z.view(), eval_v.view()).unwrap().per_factor
}

fn object_scores(out: &ExperimentOutput) -> (f64, f64) {
    let s = &out.report.projections["object"];
    (s.completeness.unwrap(), s.disentanglement.unwrap())
}

fn oracle(seed: u64) -> ExperimentConfig {
    let cfg = ExperimentConfig::oracle(4, 10, 5000, seed);
    assert_eq!(cfg.spec.properties.len(), 8);
    assert_eq!(cfg.probe.n_iters, 100);
    assert_eq!(cfg.probe.threshold_fraction, 0.03);
    cfg
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    list_files(dir)
        .unwrap()
        .into_iter()
        .filter(|f| !f.ends_with(MANIFEST_FILE))
        .map(|f| {
            let bytes = fs::read(dir.join(&f)).unwrap();
            (f, bytes)
        })
        .collect()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}

fn main() {
    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut record = |id, name, passed, detail: String, seconds| {
        let o = Outcome {
            id,
            name,
            passed,
            detail,
            seconds,
        };
        println!(
            "[{}] criterion {:>2} {:<26} {} ({:.1} s)",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail,
            o.seconds
        );
        outcomes.push(o);
    };

    let ((ok, detail), s) = timed(criterion_1);
    record(1, "dci-equivalence", ok && s < 30.0, format!("{detail}; limit 30 s"), s);

    let ((toy, three), s) = timed(|| (bound_slacks(presets::toy()), bound_slacks(three_level())));
    let lower_min = toy.lower.iter().chain(&three.lower).cloned().fold(f64::INFINITY, f64::min);
    record(
        2,
        "lower-bound-chain",
        lower_min >= -1e-9 && s < 60.0,
        format!(
            "min slack toy C {:.2e} D {:.2e}, three-level C {:.2e} D {:.2e}; limit 60 s",
            toy.lower[0], toy.lower[1], three.lower[0], three.lower[1]
        ),
        s,
    );
    let upper_min = toy.upper.iter().chain(&three.upper).cloned().fold(f64::INFINITY, f64::min);
    record(
        3,
        "upper-bound",
        upper_min >= -1e-9,
        format!(
            "min slack toy C {:.2e} D {:.2e}, three-level C {:.2e} D {:.2e}",
            toy.upper[0], toy.upper[1], three.upper[0], three.upper[1]
        ),
        s,
    );

    let ((ok, detail), s) = timed(criterion_4);
    record(4, "two-part-identity", ok, detail, s);

    let ((ok, detail), s) = timed(criterion_5);
    record(5, "worked-matrix", ok, detail, s);

    let n_threads = std::thread::available_parallelism().map_or(4, |n| n.get()).max(4);
    let pool_n = rayon::ThreadPoolBuilder::new().num_threads(n_threads).build().unwrap();
    let started = Instant::now();
    let mut with_alignment = Vec::new();
    let mut first_dir = None;
    for &seed in &SEEDS {
        let out = pool_n.install(|| run_experiment(&oracle(seed))).unwrap();
        if seed == SEEDS[0] {
            let dir = tempfile::tempdir().unwrap();
            save_experiment(&out, dir.path()).unwrap();
            first_dir = Some(dir);
        }
        with_alignment.push(out);
    }
    let s6 = started.elapsed().as_secs_f64();
    let scores: Vec<(f64, f64)> = with_alignment.iter().map(object_scores).collect();
    let mean_c = scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64;
    let mean_d = scores.iter().map(|s| s.1).sum::<f64>() / scores.len() as f64;
    record(
        6,
        "oracle-recovery",
        mean_c >= 0.95 && mean_d >= 0.95 && s6 < 600.0,
        format!("object-level mean C {mean_c:.4} D {mean_d:.4} over {} seeds; limit 600 s", SEEDS.len()),
        s6,
    );

    let started = Instant::now();
    let drops: Vec<f64> = SEEDS
        .iter()
        .zip(&scores)
        .map(|(&seed, &(_, d))| {
            let mut cfg = oracle(seed);
            cfg.probe.n_iters = 0;
            let out = pool_n.install(|| run_experiment(&cfg)).unwrap();
            d - object_scores(&out).1
        })
        .collect();
    let min_drop = drops.iter().cloned().fold(f64::INFINITY, f64::min);
    record(
        7,
        "alignment-ablation",
        min_drop >= 0.20,
        format!(
            "object-level D drop without alignment per seed [{}], min {min_drop:.4}",
            drops.iter().map(|d| format!("{d:.3}")).collect::<Vec<_>>().join(", ")
        ),
        started.elapsed().as_secs_f64(),
    );

    let started = Instant::now();
    let oracle_i = with_alignment
        .iter()
        .map(|o| o.report.informativeness.global.unwrap())
        .fold(0.0, f64::max);
    let baseline = mean_predictor_errors();
    let baseline_worst = baseline
        .iter()
        .map(|v| v.map_or(f64::INFINITY, |v| (v - 1.0).abs()))
        .fold(0.0, f64::max);
    record(
        8,
        "informativeness",
        oracle_i <= 0.05 && baseline_worst <= 1e-6,
        format!(
            "oracle global I {oracle_i:.2e} (max over seeds); mean predictor max |I−1| {baseline_worst:.1e} over {} factors",
            baseline.len()
        ),
        started.elapsed().as_secs_f64(),
    );

    let violations: usize = with_alignment
        .iter()
        .flat_map(|o| &o.probe.groups)
        .map(|g| g.trace.violations)
        .sum();
    let steps: usize = with_alignment
        .iter()
        .flat_map(|o| &o.probe.groups)
        .map(|g| g.trace.residual_after.len())
        .sum();
    let recomputed: usize = with_alignment
        .iter()
        .flat_map(|o| &o.probe.groups)
        .map(|g| {
            g.trace
                .residual_before
                .iter()
                .zip(&g.trace.residual_after)
                .filter(|(b, a)| a > b)
                .count()
        })
        .sum();
    record(
        9,
        "em-monotonicity",
        violations == 0 && recomputed == 0,
        format!("{violations} violations in {steps} E steps"),
        0.0,
    );

    let (lemmas, s) = timed(|| verify_lemmas(DRAWS, SEED).unwrap());
    record(
        10,
        "information-lemmas",
        lemmas.passes(),
        format!(
            "change of base {:.1e}, subadditivity {:.1e}, min MI {:.1e}, joint−marginal {:.1e} over {DRAWS} tables",
            lemmas.worst.change_of_base, lemmas.worst.subadditivity, lemmas.worst.mi_min, lemmas.worst.joint_vs_marginal
        ),
        s,
    );

    let started = Instant::now();
    let pool_1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let rerun = pool_1.install(|| run_experiment(&oracle(SEEDS[0]))).unwrap();
    let dir_1 = tempfile::tempdir().unwrap();
    save_experiment(&rerun, dir_1.path()).unwrap();
    let a = snapshot(first_dir.as_ref().unwrap().path());
    let b = snapshot(dir_1.path());
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    record(
        11,
        "determinism",
        !a.is_empty() && a.len() == b.len() && differing.is_empty(),
        format!(
            "{} CSV/JSON files compared at 1 and {n_threads} threads, {} differ",
            a.len(),
            differing.len() + a.len().abs_diff(b.len())
        ),
        started.elapsed().as_secs_f64(),
    );

    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
