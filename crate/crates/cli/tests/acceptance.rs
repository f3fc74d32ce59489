//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line even when it passes.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roughness::evaluation::{compare_controllers, labeled_scores, roc_curve, PatchScorer, SweepConfig};
use roughness::geometry::{interpolate_pose, project_scan};
use roughness::labeling::design_highpass;
use roughness::pipeline::{detect_events, label_log, LabelConfig, LabeledPatches, PatchGrid};
use roughness::scoring::{delta, score_patch};
use roughness::simworld::{generate_terrain, simulate_traversal, Bump, PoseErrorConfig, ShockConfig, TerrainProfile};
use roughness::training::{coordinate_ascent, evaluate_params, TrainingConfig};
use roughness::{LaserPoint, ParameterVector, PatchSample, SensorLog, SimConfig, TrainingOutcome};

const COURSE_A_SEED: u64 = 11;
const COURSE_B_SEED: u64 = 22;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("criterion {id:>2} {:<4} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn random_point(rng: &mut ChaCha8Rng, rates: bool) -> LaserPoint {
    let rate = |rng: &mut ChaCha8Rng| if rates { rng.random_range(-0.3..0.3) } else { 0.0 };
    LaserPoint {
        x: rng.random_range(0.0..1.0),
        y: rng.random_range(-0.3..0.3),
        z: rng.random_range(-0.2..0.2),
        tau: rng.random_range(0.0..2.0),
        roll_rate: rate(rng),
        pitch_rate: rate(rng),
        beam: 0,
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> ParameterVector {
    let alpha =
        std::array::from_fn(|i| if i % 2 == 0 { rng.random_range(0.0..2.0) } else { rng.random_range(0.3..2.5) });
    ParameterVector {
        alpha,
        v: rng.random_range(0.3..2.0),
        omega: rng.random_range(1..=40),
        zeta: rng.random_range(0.3..2.5),
    }
}

// Brute-force scoring oracle: every ordered-by-index pair written out term
// by term, a full descending sort, and the weighted sum with explicit powers.
fn oracle_delta(r: &LaserPoint, c: &LaserPoint, p: &ParameterVector) -> f64 {
    let a = &p.alpha;
    let dist = ((r.x - c.x).powi(2) + (r.y - c.y).powi(2)).sqrt();
    a[0] * (r.z - c.z).abs().powf(a[1])
        - a[2] * (r.tau - c.tau).abs().powf(a[3])
        - a[4] * dist.powf(a[5])
        - a[6] * r.roll_rate.abs().powf(a[7])
        - a[6] * c.roll_rate.abs().powf(a[7])
        - a[8] * r.pitch_rate.abs().powf(a[9])
        - a[8] * c.pitch_rate.abs().powf(a[9])
}

fn oracle_wheel(points: &[LaserPoint], p: &ParameterVector) -> f64 {
    let mut all = Vec::new();
    for i in 0..points.len() {
        for j in 0..points.len() {
            if i < j {
                all.push(oracle_delta(&points[i], &points[j], p));
            }
        }
    }
    all.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut w: Vec<f64> = all.into_iter().take(p.omega as usize).collect();
    w.reverse();
    w.iter().enumerate().map(|(i, x)| x * p.v.powi(i as i32)).sum()
}

fn oracle_combined(left: &[LaserPoint], right: &[LaserPoint], p: &ParameterVector) -> f64 {
    let clamp = |r: f64| if r < 0.0 { 0.0 } else { r };
    clamp(oracle_wheel(left, p)).powf(p.zeta) + clamp(oracle_wheel(right, p)).powf(p.zeta)
}

fn criterion_1(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cases: Vec<_> = (0..100)
        .map(|_| {
            let nl = rng.random_range(2..=12);
            let nr = rng.random_range(2..=12);
            let left: Vec<_> = (0..nl).map(|_| random_point(&mut rng, true)).collect();
            let right: Vec<_> = (0..nr).map(|_| random_point(&mut rng, true)).collect();
            (left, right, random_params(&mut rng))
        })
        .collect();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    for (left, right, p) in &cases {
        let got = score_patch(left, right, p).expect("scorable").r_combined;
        let want = oracle_combined(left, right, p);
        if !rel_close(got, want, 1e-9) {
            mismatches += 1;
        }
        if got != want {
            worst = worst.max((got - want).abs() / got.abs().max(want.abs()));
        }
    }
    let elapsed = start.elapsed();
    report.line(
        1,
        "scoring matches brute-force oracle",
        mismatches == 0 && elapsed < Duration::from_secs(1),
        format!("100 patches, {mismatches} mismatches, worst relative error {worst:.2e}, {elapsed:.2?}"),
    );
}

fn criterion_2(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut asymmetric = 0;
    let mut nonzero_self = 0;
    for _ in 0..10_000 {
        let p = random_params(&mut rng);
        let a = random_point(&mut rng, true);
        let b = random_point(&mut rng, true);
        if delta(&a, &b, &p) != delta(&b, &a, &p) {
            asymmetric += 1;
        }
        let still = random_point(&mut rng, false);
        if delta(&still, &still, &p) != 0.0 {
            nonzero_self += 1;
        }
    }
    report.line(
        2,
        "difference score symmetric and zero on itself",
        asymmetric == 0 && nonzero_self == 0,
        format!("10000 pairs, {asymmetric} asymmetric, {nonzero_self} non-zero self scores"),
    );
}

// Exhaustive threshold oracle: every candidate μ, counts recomputed from
// scratch, best objective with ties going to the larger μ.
fn oracle_threshold(dataset: &[PatchSample], p: &ParameterVector, cfg: &TrainingConfig) -> (f64, usize, usize, f64) {
    let scores: Vec<Option<f64>> =
        dataset.iter().map(|d| score_patch(&d.left_points, &d.right_points, p).ok().map(|s| s.r_combined)).collect();
    let labels: Vec<bool> = dataset.iter().map(|d| d.ruggedness_label >= cfg.ruggedness_threshold).collect();
    let positives = labels.iter().filter(|y| **y).count();
    let negatives = labels.len() - positives;
    let max = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let above = if scores.iter().all(Option::is_none) || max == 0.0 {
        1.0
    } else if max > 0.0 {
        2.0 * max
    } else {
        0.0
    };
    let mut candidates: Vec<f64> = scores.iter().flatten().copied().collect();
    candidates.push(above);
    let mut best: Option<(f64, usize, usize, f64)> = None;
    for &mu in &candidates {
        let mut tp = 0;
        let mut fp = 0;
        for (s, y) in scores.iter().zip(&labels) {
            if matches!(s, Some(r) if *r > mu) {
                if *y {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let tp_rate = if positives == 0 { 0.0 } else { tp as f64 / positives as f64 };
        let fp_rate = if negatives == 0 { 0.0 } else { fp as f64 / negatives as f64 };
        let objective = tp_rate - cfg.lambda * fp_rate;
        let better = match best {
            None => true,
            Some((bmu, _, _, bobj)) => objective > bobj || (objective == bobj && mu > bmu),
        };
        if better {
            best = Some((mu, tp, fp, objective));
        }
    }
    best.expect("at least one candidate")
}

fn random_dataset(rng: &mut ChaCha8Rng) -> Vec<PatchSample> {
    let n = rng.random_range(2..=200);
    let mut out: Vec<PatchSample> = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.random_bool(0.1) {
            // Duplicates produce tied scores.
            let twin = out[rng.random_range(0..i)].clone();
            out.push(twin);
            continue;
        }
        let side = |rng: &mut ChaCha8Rng| {
            let k = if rng.random_bool(0.05) { 1 } else { rng.random_range(2..=6) };
            (0..k).map(|_| random_point(rng, true)).collect::<Vec<_>>()
        };
        let left = side(rng);
        let right = side(rng);
        let label = if rng.random_bool(0.2) { rng.random_range(0.02..0.1) } else { rng.random_range(0.0..0.02) };
        out.push(PatchSample { left_points: left, right_points: right, ruggedness_label: label, location: i as f64 });
    }
    if !out.iter().any(|p| p.ruggedness_label >= 0.02) {
        out[0].ruggedness_label = 0.05;
    }
    out
}

fn criterion_3(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let cfg = TrainingConfig::default();
    let cases: Vec<_> = (0..50).map(|_| (random_dataset(&mut rng), random_params(&mut rng))).collect();
    let start = Instant::now();
    let mut mismatches = 0;
    for (dataset, p) in &cases {
        let got = evaluate_params(p, dataset, &cfg).expect("valid dataset");
        let want = oracle_threshold(dataset, p, &cfg);
        if (got.mu, got.rates.tp, got.rates.fp, got.objective) != want {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    report.line(
        3,
        "threshold search matches exhaustive scan",
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!("50 datasets, {mismatches} mismatches, {elapsed:.2?}"),
    );
}

fn criterion_4(report: &mut Report, outcome: &TrainingOutcome, dataset: &[PatchSample], cfg: &TrainingConfig) {
    let increasing = outcome.progress.windows(2).all(|w| w[1].objective > w[0].objective);
    let last = evaluate_params(&outcome.model.params, dataset, cfg).expect("trained dataset");
    let rederived = last.mu == outcome.model.mu && last.objective == outcome.objective && last.rates == outcome.rates;
    report.line(
        4,
        "coordinate ascent monotone, final threshold re-derived",
        increasing && rederived,
        format!(
            "{} accepted moves, strictly increasing: {increasing}, final mu {} re-derived exactly: {rederived}",
            outcome.progress.len(),
            outcome.model.mu
        ),
    );
}

// Discrete frequency response, evaluated directly from the taps.
fn response_db(taps: &[f64], freq: f64, rate: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * freq / rate;
    let (mut re, mut im) = (0.0, 0.0);
    for (n, h) in taps.iter().enumerate() {
        re += h * (w * n as f64).cos();
        im -= h * (w * n as f64).sin();
    }
    20.0 * (re * re + im * im).sqrt().max(1e-300).log10()
}

fn criterion_5(report: &mut Report) {
    let labels = LabelConfig::default();
    let spec = design_highpass(100.0, labels.cutoff_hz, labels.filter_taps).expect("filter designs");
    let dc = response_db(&spec.taps, 0.0, 100.0);
    let stop = (0..=500).map(|i| response_db(&spec.taps, i as f64 * 0.01, 100.0)).fold(f64::NEG_INFINITY, f64::max);
    let pass = (0..=300).map(|i| response_db(&spec.taps, 20.0 + i as f64 * 0.1, 100.0)).fold(f64::INFINITY, f64::min);
    report.line(
        5,
        "high-pass filter contract",
        spec.taps.len() == 40 && dc <= -60.0 && stop <= -40.0 && pass >= -3.0,
        format!("{} taps, |H(0)| {dc:.1} dB, max stopband {stop:.1} dB, min passband {pass:.2} dB", spec.taps.len()),
    );
}

fn quiet(track_length: f64, mph: f64) -> SimConfig {
    SimConfig {
        track_length,
        speed_profile: vec![[0.0, mph]],
        pose_error: PoseErrorConfig { z_error_rate: 0.0, orientation_sigma_deg: 0.0, ..Default::default() },
        shock: ShockConfig { imu_noise: 0.0, ..Default::default() },
        ..Default::default()
    }
}

fn criterion_6(report: &mut Report) {
    let bump = Bump { s: 60.0, lateral: -0.8, height: 0.08, width: 0.4, lateral_extent: 0.3 };
    let terrain = TerrainProfile::flat(120.0).with_bumps(vec![bump]);
    let labels = LabelConfig::default();
    let rugged: Vec<f64> = [5.0, 15.0, 25.0, 35.0]
        .iter()
        .map(|mph| {
            let log = simulate_traversal(&terrain, &quiet(120.0, *mph)).expect("simulates");
            let (events, _) = detect_events(&log.imu, &log.speeds, &labels).expect("labels");
            events.iter().map(|e| e.ruggedness).fold(0.0, f64::max)
        })
        .collect();
    let max = rugged.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rugged.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = max / min;
    report.line(
        6,
        "ruggedness is speed independent",
        min > 0.0 && ratio <= 1.10,
        format!(
            "5/15/25/35 mph -> {} G/mph, max/min {ratio:.3}",
            rugged.iter().map(|r| format!("{r:.5}")).collect::<Vec<_>>().join("/")
        ),
    );
}

/// Least-squares fit `y = a + b x`; returns (slope, R²).
fn regress(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    (sxy / sxx, sxy * sxy / (sxx * syy))
}

fn criterion_7(report: &mut Report) {
    let cfg = SimConfig { track_length: 300.0, speed_profile: vec![[0.0, 25.0]], ..Default::default() };
    let log = simulate_traversal(&TerrainProfile::flat(300.0), &cfg).expect("simulates");
    let center = (log.scans[0].ranges.len() / 2) as u16;
    let heights: Vec<(f64, f64)> = log
        .scans
        .iter()
        .filter_map(|scan| {
            let pose = interpolate_pose(&log.poses, scan.timestamp).ok()?;
            let point = project_scan(scan, &pose, &cfg.mount).into_iter().find(|p| p.beam == center)?;
            Some((scan.timestamp, point.z))
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..heights.len() {
        for k in 1..=5 {
            if let Some(later) = heights.get(i + k) {
                pairs.push((later.0 - heights[i].0, (later.1 - heights[i].1).abs()));
            }
        }
    }
    let (slope, r2) = regress(&pairs);
    let rate = cfg.pose_error.z_error_rate;
    let rel = (slope / rate - 1.0).abs();
    report.line(
        7,
        "inter-scan height error grows with time at the configured rate",
        pairs.len() >= 500 && r2 >= 0.8 && rel <= 0.15,
        format!("{} pairs, slope {slope:.4} m/s vs {rate} m/s ({:.1}% off), R^2 {r2:.3}", pairs.len(), rel * 100.0),
    );
}

fn course(seed: u64) -> (SensorLog, LabeledPatches) {
    let cfg = SimConfig { seed, ..Default::default() };
    let terrain = generate_terrain(seed, cfg.track_length, &cfg.terrain).expect("terrain");
    let log = simulate_traversal(&terrain, &cfg).expect("simulates");
    let labeled = label_log(&log, &PatchGrid::default(), &LabelConfig::default()).expect("labels");
    (log, labeled)
}

fn tp_grid(scores: &[(f64, bool)], grid: &[f64]) -> Vec<f64> {
    let roc = roc_curve(scores).expect("both classes");
    grid.iter().map(|fp| roc.tp_at_fp(*fp)).collect()
}

fn main_criteria(report: &mut Report) {
    criterion_1(report);
    criterion_2(report);
    criterion_3(report);

    let start = Instant::now();
    let train_cfg = TrainingConfig::default();
    let (log_a, a) = course(COURSE_A_SEED);
    let (log_b, b) = course(COURSE_B_SEED);
    let th = train_cfg.ruggedness_threshold;
    let (a_end, b_end) = (log_a.span().1, log_b.span().1);
    let train_set = a.dataset();
    let outcome = coordinate_ascent(&train_set, &train_cfg).expect("trains");
    let test_set = b.dataset();
    let scores = labeled_scores(&test_set, PatchScorer::Model(&outcome.model), th);
    let roc = roc_curve(&scores).expect("both classes");
    let elapsed = start.elapsed();
    criterion_4(report, &outcome, &train_set, &train_cfg);
    criterion_5(report);
    criterion_6(report);
    criterion_7(report);
    let tp05 = roc.tp_at_fp(0.05);
    report.line(
        8,
        "train on course A, test on course B",
        roc.auc >= 0.90 && tp05 >= 0.6 && elapsed < Duration::from_secs(600),
        format!(
            "{:.0} m / {:.0} m courses, positive rate {:.2}% / {:.2}%, test AUC {:.4}, tp {tp05:.3} at fp 0.05, pipeline {elapsed:.1?}",
            a_end,
            b_end,
            100.0 * a.positive_rate(th),
            100.0 * b.positive_rate(th),
            roc.auc
        ),
    );

    let grid = [0.0, 0.01, 0.02, 0.05, 0.10, 0.15, 0.20];
    let learned = tp_grid(&scores, &grid);
    let baseline = tp_grid(&labeled_scores(&test_set, PatchScorer::Baseline, th), &grid);
    let cells: Vec<String> = grid
        .iter()
        .zip(learned.iter().zip(&baseline))
        .map(|(fp, (l, b))| format!("fp {fp:.2}: {l:.3}{}{b:.3}", if l >= b { ">=" } else { "<" }))
        .collect();
    let held = learned.iter().zip(&baseline).all(|(l, b)| l >= b);
    println!(
        "invariant    {:<4} learned tp >= z-range baseline tp on course B: {}",
        if held { "HOLD" } else { "MISS" },
        cells.join(", ")
    );

    let sweep = SweepConfig::default();
    let controllers =
        compare_controllers(&log_b, &b.patches, PatchScorer::Model(&outcome.model), &sweep, &LabelConfig::default())
            .expect("controllers run");
    let c = controllers.comparison;
    report.line(
        9,
        "proactive beats reactive on course B",
        c.best_reduction >= 0.25 && c.dominated_fraction >= 0.8,
        format!(
            "best shock reduction {:.1}% at time {:.3} ({} matched pairs), dominated at {:.0}% of {} reactive settings",
            100.0 * c.best_reduction,
            c.best_reduction_time,
            c.matched_pairs,
            100.0 * c.dominated_fraction,
            controllers.reactive.len()
        ),
    );
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_roughness")).args(args).status().expect("binary runs");
    assert!(status.success(), "roughness {args:?} failed with {status}");
}

/// File name and contents, sorted by name.
type DirContents = Vec<(String, Vec<u8>)>;

fn files(dir: &Path) -> DirContents {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("readable"))
        })
        .collect();
    out.sort();
    out
}

fn criterion_10(report: &mut Report) {
    let root = tempfile::tempdir().expect("tempdir");
    let pipeline = |run: &str| -> Vec<(String, DirContents)> {
        let d = |name: &str| root.path().join(run).join(name).to_string_lossy().into_owned();
        let (log, labels, model, eval, base, speed) =
            (d("log"), d("labels"), d("model"), d("eval"), d("base"), d("speed"));
        let model_file = format!("{model}/model.txt");
        let log_spec = format!("course={log}");
        run_cli(&["simulate", "--seed", "5", "--length", "1500", "--out", &log]);
        run_cli(&["label", "--log", &log, "--out", &labels]);
        run_cli(&["train", "--log", &log, "--iterations", "2", "--out", &model]);
        run_cli(&["eval", "--model", &model_file, "--log", &log_spec, "--out", &eval]);
        run_cli(&["eval", "--scorer", "baseline", "--log", &log_spec, "--out", &base]);
        run_cli(&["speedsim", "--model", &model_file, "--log", &log, "--out", &speed]);
        [log, labels, model, eval, base, speed]
            .iter()
            .map(|dir| (Path::new(dir).file_name().unwrap().to_string_lossy().into_owned(), files(Path::new(dir))))
            .collect()
    };
    let first = pipeline("first");
    let second = pipeline("second");
    let total: usize = first.iter().map(|(_, f)| f.len()).sum();
    let differing: Vec<String> = first
        .iter()
        .zip(&second)
        .flat_map(|((stage, a), (_, b))| {
            let mut diffs: Vec<String> =
                a.iter().filter(|f| !b.contains(f)).map(|(name, _)| format!("{stage}/{name}")).collect();
            if a.len() != b.len() {
                diffs.push(format!("{stage}: file count"));
            }
            diffs
        })
        .collect();
    report.line(
        10,
        "every command reruns byte-identically",
        differing.is_empty(),
        format!("6 commands, {total} output files compared, differing: {differing:?}"),
    );
}

fn main() {
    let mut report = Report { failures: 0 };
    main_criteria(&mut report);
    criterion_10(&mut report);
    if report.failures > 0 {
        println!("{} acceptance criteria failed", report.failures);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
