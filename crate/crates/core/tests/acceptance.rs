//! Acceptance criteria. Each test prints one `PASS` or `FAIL` line and then
//! asserts on the same outcome. Tests run one at a time so that the wall-clock
//! limits measure a single criterion.

use affclt::affinity::{m_ball, singleton, AffinityMap};
use affclt::apps::{
    exposure_map, exposure_probabilities_exact, ht_design_expectation, ht_estimate, q_hat_star, ExposureDesign,
    ExposureKind, OutcomeTable, PositivityMode,
};
use affclt::config::ExperimentConfig;
use affclt::diagnostics::{
    a1_sum, a2_sum, a3_sum, corollary_sums, geometric_grid, Evaluation, SignMode, SumOptions, DEFAULT_TAU,
};
use affclt::kernel::empirical_cov_kernel;
use affclt::models::{matern_bessel, matern_closed_form, replicate, Generator, MaternParams};
use affclt::rng::stream;
use affclt::runner::{self, EstimateKind, RunOutput};
use serde_json::Value;
use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Written straight to the process stdout so the line survives output capture.
fn report(criterion: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {criterion}: {} {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn config(name: &str) -> ExperimentConfig {
    let text = match name {
        "m_dependent" => include_str!("../../../configs/m_dependent.toml"),
        "andrews_ar" => include_str!("../../../configs/andrews_ar.toml"),
        "edge_shock" => include_str!("../../../configs/edge_shock.toml"),
        "matern_grid" => include_str!("../../../configs/matern_grid.toml"),
        "sbm_growing_k" => include_str!("../../../configs/sbm_growing_k.toml"),
        "sbm_fixed_k" => include_str!("../../../configs/sbm_fixed_k.toml"),
        "ht_path4" => include_str!("../../../configs/ht_path4.toml"),
        "qhat_star" => include_str!("../../../configs/qhat_star.toml"),
        "qhat_sbm" => include_str!("../../../configs/qhat_sbm.toml"),
        "socio_identity" => include_str!("../../../configs/socio_identity.toml"),
        other => panic!("unknown config {other}"),
    };
    ExperimentConfig::parse(text).unwrap()
}

fn json(out: &RunOutput, file: &str) -> Value {
    serde_json::from_slice(out.files.get(file).unwrap_or_else(|| panic!("{file} not produced"))).unwrap()
}

/// Single-marginal KS and the per-test gate `1.63 / sqrt(R)`.
fn whitened_ks(cfg: &ExperimentConfig) -> (f64, f64) {
    let out = runner::run_normality_cfg(cfg).unwrap();
    let rep = json(&out, "normality.json");
    let r = rep["replications"].as_u64().unwrap() as f64;
    let ks = rep["marginals"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["ks"].as_f64().unwrap())
        .fold(0.0, f64::max);
    (ks, 1.63 / r.sqrt())
}

/// Verdict and slope CI per assumption; `None` for a ratio that is zero at
/// every grid point, which has no log-log slope.
fn diagnose(cfg: &ExperimentConfig) -> Vec<(String, Option<[f64; 2]>)> {
    let out = runner::run_diagnose(cfg).unwrap();
    json(&out, "diagnostics.json")["verdicts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| {
            let ci = v["ci"]
                .as_array()
                .map(|ci| [ci[0].as_f64().unwrap(), ci[1].as_f64().unwrap()]);
            assert!(ci.is_some() || v["identically_zero"].as_bool().unwrap());
            (v["verdict"].as_str().unwrap().to_string(), ci)
        })
        .collect()
}

// ---------------------------------------------------------------- 1

struct KernelCase {
    name: &'static str,
    g: std::sync::Arc<dyn Generator>,
    pairs: Vec<(usize, usize)>,
    oracle: Box<dyn Fn(usize, usize) -> f64>,
}

fn kernel_cases() -> Vec<KernelCase> {
    let seed = 2024;
    let mut cases = Vec::new();

    let andrews = config("andrews_ar");
    let g = andrews.require_model().unwrap().build(100, seed).unwrap();
    let (rho, q) = (0.5f64, 0.5f64);
    cases.push(KernelCase {
        name: "andrews_ar",
        g,
        pairs: (0..20).map(|k| (10 + 3 * k, 10 + 3 * k + k % 7)).collect(),
        oracle: Box::new(move |a, b| q * (1.0 - q) / (1.0 - rho * rho) * rho.powi(a.abs_diff(b) as i32)),
    });

    let ma1: ExperimentConfig =
        ExperimentConfig::parse("schema_version = 1\n[model]\nkind = \"m_dependent\"\nweights = [1.0, 0.5]\n").unwrap();
    let g = ma1.require_model().unwrap().build(100, seed).unwrap();
    cases.push(KernelCase {
        name: "ma1",
        g,
        pairs: (0..20).map(|k| (5 + 4 * k, 5 + 4 * k + k % 4)).collect(),
        oracle: Box::new(|a, b| match a.abs_diff(b) {
            0 => 1.25,
            1 => 0.5,
            _ => 0.0,
        }),
    });

    let matern = ExperimentConfig::parse(
        "schema_version = 1\n[model]\nkind = \"matern_gp\"\nlocations = { type = \"grid\", spacing = 1.0 }\n\
         sigma2 = 1.0\nphi = 0.25\nnu = 0.5\n",
    )
    .unwrap();
    let g = matern.require_model().unwrap().build(100, seed).unwrap();
    let locs = g.locations().unwrap().clone();
    cases.push(KernelCase {
        name: "matern_gp",
        g,
        pairs: (0..20).map(|k| (k, (k * 37 + 11) % 100)).collect(),
        oracle: Box::new(move |a, b| {
            let (x, y) = (locs.point(a), locs.point(b));
            let h = x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            (-std::f64::consts::SQRT_2 * 0.25 * h).exp()
        }),
    });

    let edge = config("edge_shock");
    let g = edge.require_model().unwrap().build(50, seed).unwrap();
    let graph = g.graph().unwrap().clone();
    let mut pairs: Vec<(usize, usize)> = (0..7).map(|i| (i, i)).collect();
    pairs.extend(graph.edges().iter().take(7).map(|&(u, v)| (u as usize, v as usize)));
    pairs.extend(
        (0..50)
            .flat_map(|i| (i + 1..50).map(move |j| (i, j)))
            .filter(|&(i, j)| !graph.adjacent(i, j))
            .take(7),
    );
    cases.push(KernelCase {
        name: "edge_shock",
        g,
        pairs,
        oracle: Box::new(move |a, b| {
            // Unit-variance shocks: shared incident edges.
            if a == b {
                graph.degree(a) as f64
            } else {
                f64::from(u8::from(graph.adjacent(a, b)))
            }
        }),
    });
    cases
}

#[test]
fn criterion_01_kernel_fidelity() {
    let _s = serial();
    let start = Instant::now();
    let mut pass = true;
    let mut worst = Vec::new();
    for case in kernel_cases() {
        assert!(
            case.pairs.len() >= 20,
            "{} has {} probe pairs",
            case.name,
            case.pairs.len()
        );
        let kernel = case.g.kernel().unwrap();
        let reps = replicate(case.g.as_ref(), 77, stream::EVALUATION, 100_000);
        let emp = empirical_cov_kernel(&reps, &case.pairs).unwrap();
        let mut max_z: f64 = 0.0;
        for &(a, b) in &case.pairs {
            let truth = (case.oracle)(a, b);
            let analytic = kernel.eval(a, b).unwrap();
            pass &= (analytic - truth).abs() < 1e-12;
            let z = (emp.eval(a, b).unwrap() - truth).abs() / emp.se(a, b).unwrap();
            max_z = max_z.max(z);
        }
        pass &= max_z <= 3.0;
        worst.push(format!("{}={max_z:.2}", case.name));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 300.0;
    report(
        "1",
        pass,
        &format!("max |z| {} in {secs:.0}s (limit 3 SE, 300s)", worst.join(" ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_positive_cases() {
    let _s = serial();
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, name) in [
        ("a", "m_dependent"),
        ("b", "andrews_ar"),
        ("c", "edge_shock"),
        ("d", "matern_grid"),
    ] {
        let cfg = config(name);
        let nc = cfg.normality.as_ref().unwrap();
        assert_eq!(nc.replications, 2000);
        assert_eq!(nc.n, if label == "d" { 64 * 64 } else { 10_000 });
        let (ks, gate) = whitened_ks(&cfg);
        let ok = ks < gate;
        pass &= ok;
        parts.push(format!(
            "({label}) {name} KS {ks:.4} {}",
            if ok { "ok" } else { "over" }
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 1200.0;
    report(
        "2",
        pass,
        &format!(
            "{}; gate 1.63/sqrt(2000) = {:.4}; {secs:.0}s (limit 1200s)",
            parts.join(", "),
            1.63 / 2000f64.sqrt()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_03_sbm_dichotomy() {
    let _s = serial();
    let start = Instant::now();
    let grid = [1024, 2048, 4096, 8192, 16384];

    let mut growing = config("sbm_growing_k");
    assert_eq!(growing.diagnostics.as_ref().unwrap().n_grid, grid);
    let mut growing_ok = true;
    let mut growing_ks = Vec::new();
    for n in grid {
        growing.normality.as_mut().unwrap().n = n;
        let out = runner::run_normality_cfg(&growing).unwrap();
        let rep = json(&out, "normality.json");
        growing_ok &= rep["pass"].as_bool().unwrap();
        growing_ks.push(format!("{:.4}", rep["marginals"][0]["ks"].as_f64().unwrap()));
    }

    let fixed = config("sbm_fixed_k");
    assert_eq!(fixed.diagnostics.as_ref().unwrap().n_grid, grid);
    assert_eq!(fixed.normality.as_ref().unwrap().n, 16384);
    let out = runner::run_normality_cfg(&fixed).unwrap();
    let fixed_ks = json(&out, "normality.json")["marginals"][0]["ks"].as_f64().unwrap();
    let verdicts = diagnose(&fixed);
    let (a3, ci) = &verdicts[2];
    let ci = ci.unwrap_or([0.0, 0.0]);
    let a3_fail = a3 == "FAIL" && ci[0] >= DEFAULT_TAU;

    let secs = start.elapsed().as_secs_f64();
    let pass = growing_ok && fixed_ks > 0.05 && a3_fail && secs <= 1800.0;
    report(
        "3",
        pass,
        &format!(
            "growing k gates {} (KS {}); fixed k KS {fixed_ks:.4} (needs > 0.05), A3 {a3} CI [{:.4}, {:.4}] (needs FAIL); {secs:.0}s (limit 1800s)",
            if growing_ok { "pass" } else { "fail" },
            growing_ks.join(" "),
            ci[0],
            ci[1]
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_scaling_verdicts() {
    let _s = serial();
    let grid = geometric_grid(1000, 31623, 5);
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, name) in [("a", "m_dependent"), ("b", "andrews_ar"), ("c", "edge_shock")] {
        let mut cfg = config(name);
        cfg.diagnostics.as_mut().unwrap().n_grid = grid.clone();
        let verdicts = diagnose(&cfg);
        // A ratio that is exactly zero on the whole grid counts as vanishing.
        let ok = verdicts.iter().all(|(_, ci)| ci.is_none_or(|c| c[1] < 0.0));
        pass &= ok;
        let uppers: Vec<String> = verdicts
            .iter()
            .map(|(_, ci)| ci.map_or("zero".into(), |c| format!("{:+.4}", c[1])))
            .collect();
        parts.push(format!("({label}) upper CI {}", uppers.join("/")));
    }
    report("4", pass, &format!("{} (all must be < 0)", parts.join(", ")));
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_corollary_reduction() {
    let _s = serial();
    let g = config("m_dependent").require_model().unwrap().build(2000, 1).unwrap();
    let reps = replicate(g.as_ref(), 31, stream::EVALUATION, 400);
    let aff = singleton(2000, 1);
    let exhaustive = SumOptions {
        evaluation: Evaluation::Exhaustive,
        ..SumOptions::default()
    };
    let c = corollary_sums(&reps).unwrap();
    let a2 = a2_sum(&reps, &aff, &exhaustive).unwrap();
    let a3 = a3_sum(&reps, &aff, SignMode::Positive).unwrap();
    let d2 = (c.squares_cov.estimate - a2.estimate).abs();
    let d3 = (c.cross_cov.estimate - a3.estimate).abs();
    let pass = d2 <= 1e-10 && d3 <= 1e-10;
    report("5", pass, &format!("|diff| (i) {d2:e}, (ii) {d3:e} (limit 1e-10)"));
    assert!(pass);
}

// ---------------------------------------------------------------- 6

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Ratio(i128, i128);

impl Ratio {
    fn new(n: i128, d: i128) -> Self {
        fn gcd(a: i128, b: i128) -> i128 {
            if b == 0 {
                a.abs()
            } else {
                gcd(b, a % b)
            }
        }
        let g = gcd(n, d).max(1) * d.signum();
        Ratio(n / g, d / g)
    }

    fn add(self, o: Ratio) -> Ratio {
        Ratio::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }

    fn mul(self, o: Ratio) -> Ratio {
        Ratio::new(self.0 * o.0, self.1 * o.1)
    }

    fn to_f64(self) -> f64 {
        self.0 as f64 / self.1 as f64
    }
}

#[test]
fn criterion_06_ht_unbiasedness() {
    let _s = serial();
    let n = 4usize;
    let graph = affclt::models::GraphTopology::path(n);
    // Outcomes in halves: y = units / 2.
    let units: [(i64, [i128; 4]); 4] = [
        (1, [6, 10, 8, 12]),
        (2, [7, 11, 9, 13]),
        (3, [3, 5, 4, 6]),
        (4, [2, 4, 3, 5]),
    ];
    let (dk, dl) = (1i64, 4i64);
    let table: OutcomeTable = units
        .iter()
        .map(|(l, v)| (*l, v.iter().map(|&u| u as f64 / 2.0).collect()))
        .collect();
    let y = |label: i64, i: usize| Ratio::new(units.iter().find(|(l, _)| *l == label).unwrap().1[i], 2);

    // Exposure labels by direct neighbor inspection on the path.
    let label_of = |t: &[bool], i: usize| {
        let exposed = (i > 0 && t[i - 1]) || (i + 1 < n && t[i + 1]);
        match (t[i], exposed) {
            (true, false) => 1,
            (true, true) => 2,
            (false, true) => 3,
            (false, false) => 4,
        }
    };
    let assignments: Vec<Vec<bool>> = (0..1u32 << n)
        .map(|b| (0..n).map(|i| b >> i & 1 == 1).collect())
        .collect();
    let count = |d: i64, i: usize| assignments.iter().filter(|t| label_of(t, i) == d).count() as i128;

    let design = ExposureDesign::new(graph.clone(), 0.5, ExposureKind::FourLevel).unwrap();
    let probs = exposure_probabilities_exact(&design).unwrap();
    let mut mean = Ratio(0, 1);
    let mut max_err: f64 = 0.0;
    for t in &assignments {
        let mut est = Ratio(0, 1);
        for i in 0..n {
            let d = label_of(t, i);
            // y / pi with pi = count / 16.
            if d == dk {
                est = est.add(y(dk, i).mul(Ratio::new(16, count(dk, i))));
            } else if d == dl {
                est = est.add(y(dl, i).mul(Ratio::new(-16, count(dl, i))));
            }
        }
        est = est.mul(Ratio::new(1, n as i128));
        mean = mean.add(est.mul(Ratio::new(1, 16)));

        let labels = exposure_map(&graph, t).unwrap();
        let obs: Vec<f64> = (0..n).map(|i| table[&labels[i]][i]).collect();
        let lib = ht_estimate(&labels, &obs, &probs, dk, dl, PositivityMode::Strict).unwrap();
        max_err = max_err.max((lib.value - est.to_f64()).abs());
    }
    let mut tau = Ratio(0, 1);
    for i in 0..n {
        tau = tau.add(y(dk, i).add(y(dl, i).mul(Ratio(-1, 1))));
    }
    tau = tau.mul(Ratio::new(1, n as i128));
    let lib_mean = ht_design_expectation(&design, &table, dk, dl).unwrap();
    let pass = mean == tau && (lib_mean - tau.to_f64()).abs() < 1e-12 && max_err < 1e-12;
    report(
        "6",
        pass,
        &format!(
            "exact mean {}/{} vs tau {}/{}; library mean error {:e}, per-assignment error {max_err:e}",
            mean.0,
            mean.1,
            tau.0,
            tau.1,
            (lib_mean - tau.to_f64()).abs()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_z_estimator() {
    let _s = serial();
    let star = config("qhat_star");
    let qc = star.estimate.as_ref().unwrap().qhat.as_ref().unwrap();
    assert_eq!(qc.replications, 2000);
    let leaves = qc.n - 1;
    let outcomes = qc.outcomes.as_ref().unwrap();
    let m = outcomes[1..].iter().filter(|&&x| x == 1).count();
    let closed = q_hat_star(m, leaves).unwrap();
    let est = json(
        &runner::run_estimate(&star, EstimateKind::QHat).unwrap(),
        "estimate_qhat.json",
    );
    let q_star = est["q_hat"].as_f64().unwrap();

    let sbm = config("qhat_sbm");
    let sc = sbm.estimate.as_ref().unwrap().qhat.as_ref().unwrap();
    assert_eq!((sc.n, sc.truth), (500, Some(0.2)));
    let est = json(
        &runner::run_estimate(&sbm, EstimateKind::QHat).unwrap(),
        "estimate_qhat.json",
    );
    let q_sbm = est["q_hat"].as_f64().unwrap();

    let pass = (q_star - closed).abs() <= 0.02 && (0.15..=0.25).contains(&q_sbm);
    report(
        "7",
        pass,
        &format!("star q_hat {q_star:.4} vs m/k = {closed:.4} (limit 0.02); sbm q_hat {q_sbm:.4} (range [0.15, 0.25])"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_08_matern_closed_forms() {
    let _s = serial();
    let mut worst: f64 = 0.0;
    for (k, nu) in [(0u32, 0.5), (1, 1.5)] {
        for phi in [0.3, 1.0, 2.5] {
            let m = MaternParams { sigma2: 1.7, phi, nu };
            for step in 1..=50 {
                let h = step as f64 / 10.0;
                worst = worst.max((matern_closed_form(&m, k, h) - matern_bessel(&m, h)).abs());
            }
        }
    }
    let pass = worst <= 1e-9;
    report(
        "8",
        pass,
        &format!("max |closed - bessel| {worst:e} over h = 0.1..5 (limit 1e-9)"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

fn run_all(threads: usize) -> Vec<(String, Vec<u8>)> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut files = Vec::new();
        let mut push = |tag: &str, out: RunOutput| {
            for (p, b) in out.files.entries() {
                files.push((format!("{tag}/{}", p.display()), b.clone()));
            }
        };
        for name in ["m_dependent", "andrews_ar", "edge_shock"] {
            let cfg = config(name);
            push(&format!("{name}/diagnose"), runner::run_diagnose(&cfg).unwrap());
            push(&format!("{name}/normality"), runner::run_normality_cfg(&cfg).unwrap());
        }
        let matern = config("matern_grid");
        push("matern_grid/normality", runner::run_normality_cfg(&matern).unwrap());
        push("matern_grid/gen", runner::run_gen(&matern).unwrap());
        push("edge_shock/gen", runner::run_gen(&config("edge_shock")).unwrap());
        push(
            "ht_path4",
            runner::run_estimate(&config("ht_path4"), EstimateKind::Ht).unwrap(),
        );
        push(
            "qhat_star",
            runner::run_estimate(&config("qhat_star"), EstimateKind::QHat).unwrap(),
        );
        push(
            "qhat_sbm",
            runner::run_estimate(&config("qhat_sbm"), EstimateKind::QHat).unwrap(),
        );
        push(
            "socio",
            runner::run_estimate(&config("socio_identity"), EstimateKind::Socio).unwrap(),
        );
        files
    })
}

#[test]
fn criterion_09_determinism() {
    let _s = serial();
    let first = run_all(1);
    let second = run_all(3);
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    let pass = first.len() == second.len() && differing.is_empty() && !first.is_empty();
    report(
        "9",
        pass,
        &format!(
            "{} result files compared across reruns (1 and 3 threads), {} differ",
            first.len(),
            differing.len()
        ),
    );
    assert!(pass, "differing files: {differing:?}");
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_subsampling() {
    let _s = serial();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let cases: Vec<(&str, std::sync::Arc<dyn Generator>, AffinityMap)> = {
        let md = config("m_dependent").require_model().unwrap().build(200, 3).unwrap();
        let es = config("edge_shock").require_model().unwrap().build(200, 3).unwrap();
        let es_aff = affclt::affinity::graph_neighborhood(es.graph().unwrap(), 1).unwrap();
        vec![("m_dependent", md, m_ball(200, 2)), ("edge_shock", es, es_aff)]
    };
    for (_, g, aff) in &cases {
        let reps = replicate(g.as_ref(), 17, stream::EVALUATION, 200);
        let exhaustive = SumOptions {
            evaluation: Evaluation::Exhaustive,
            ..SumOptions::default()
        };
        let e1 = a1_sum(&reps, aff, &exhaustive).unwrap().estimate;
        let e2 = a2_sum(&reps, aff, &exhaustive).unwrap().estimate;
        for repeat in 0..100 {
            let opts = SumOptions {
                s1: 200,
                s2: 200,
                evaluation: Evaluation::Sampled,
                seed: repeat,
            };
            let s1 = a1_sum(&reps, aff, &opts).unwrap();
            let s2 = a2_sum(&reps, aff, &opts).unwrap();
            assert!(s1.subsampled && s2.subsampled);
            worst = worst.max((s1.estimate - e1).abs() / s1.se_subsample);
            worst = worst.max((s2.estimate - e2).abs() / s2.se_subsample);
            checked += 2;
        }
    }
    let pass = worst <= 4.0;
    report(
        "10",
        pass,
        &format!("{checked} budgeted estimates, max |budgeted - exhaustive| / subsampling SE = {worst:.2} (limit 4)"),
    );
    assert!(pass);
}
