//! Config-driven runs. Every run computes all of its files in memory and
//! returns them staged; nothing touches the output directory on error.

use crate::affinity::{hybrid_set, DecayBound};
use crate::apps::{
    exposure_probabilities, ht_design_expectation, ht_estimate, keyed_assignment, q_hat_mc, q_hat_star,
    socio_cov_kernel, socio_distance, true_effect, ExposureDesign, HtEstimate, OutcomeTable, PsdReport, QHat,
    SocioCovSpec, MAX_ENUMERATION_N,
};
use crate::config::{ArrayFormat, ExperimentConfig, HtConfig, QHatConfig, SocioConfig};
use crate::diagnostics::{run_diagnostics, Verdict};
use crate::error::{Error, Result};
use crate::io::{write_arrays_binary, write_arrays_csv, StagedOutput};
use crate::models::diffusion::run_key;
use crate::models::{sir_with_seeds, GraphSpec, Metric};
use crate::normality::{run_normality, write_qq_csv};
use crate::rng::{derive_seed, stream};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

#[derive(Debug)]
pub struct RunOutput {
    pub files: StagedOutput,
    pub exit_code: i32,
    /// One-line human summary for stderr.
    pub summary: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimateKind {
    Ht,
    QHat,
    Socio,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Top-level wrapper carried by every estimate file.
#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    tool_version: &'a str,
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

fn tagged<T: Serialize>(cfg: &ExperimentConfig, hash: &str, body: T) -> Result<Vec<u8>> {
    json_bytes(&Tagged {
        tool_version: crate::VERSION,
        config_hash: hash,
        seed: cfg.seed,
        body,
    })
}

pub fn run_diagnose(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let hash = cfg.hash()?;
    let model = cfg.require_model()?;
    let recipe = cfg.require_affinity()?;
    let dc = cfg
        .diagnostics
        .as_ref()
        .ok_or_else(|| cfg_err("missing [diagnostics] section"))?;
    let seed = cfg.seed;
    let build = |n: usize| {
        let g = model.build(n, seed)?;
        let aff = recipe.build(model, g.as_ref(), seed)?;
        Ok((g, aff))
    };
    let mut report = run_diagnostics(&dc.n_grid, build, &dc.options(), seed)?;
    report.config_hash = Some(hash.clone());
    let mut files = StagedOutput::new();
    files.add("diagnostics.json", {
        let mut s = report.to_json()?;
        s.push('\n');
        s.into_bytes()
    });
    files.add_with("diagnostics.csv", |b| report.write_csv(b))?;
    for k in 1..=3u8 {
        files.add(format!("plot_a{k}.dat"), report.plot_data(k).into_bytes());
    }
    let exit_code = match report.overall {
        Verdict::Pass => EXIT_OK,
        Verdict::Fail => EXIT_FAIL,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    };
    let summary = report
        .verdicts
        .iter()
        .map(|v| format!("A{}: {}", v.assumption, v.fit.verdict))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(RunOutput {
        files,
        exit_code,
        summary: format!("{summary}; overall {}", report.overall),
    })
}

pub fn run_normality_cfg(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let hash = cfg.hash()?;
    let model = cfg.require_model()?;
    let recipe = cfg.require_affinity()?;
    let nc = cfg
        .normality
        .as_ref()
        .ok_or_else(|| cfg_err("missing [normality] section"))?;
    let g = model.build(nc.n, cfg.seed)?;
    let aff = recipe.build(model, g.as_ref(), cfg.seed)?;
    let (mut report, rows) = run_normality(g.as_ref(), &aff, &nc.options(), cfg.seed)?;
    report.config_hash = Some(hash.clone());
    let mut files = StagedOutput::new();
    files.add("normality.json", {
        let mut s = report.to_json()?;
        s.push('\n');
        s.into_bytes()
    });
    files.add_with("qq.csv", |b| write_qq_csv(&rows, Some(&hash), b))?;
    let worst = report
        .marginals
        .iter()
        .map(|m| m.ks)
        .chain(report.projections.iter().map(|p| p.projection.ks))
        .fold(0.0, f64::max);
    Ok(RunOutput {
        files,
        exit_code: if report.pass { EXIT_OK } else { EXIT_FAIL },
        summary: format!(
            "{}: max KS {worst:.4} vs critical {:.4} over {} tests",
            if report.pass { "PASS" } else { "FAIL" },
            report.critical_value,
            report.tests
        ),
    })
}

pub fn run_estimate(cfg: &ExperimentConfig, kind: EstimateKind) -> Result<RunOutput> {
    let hash = cfg.hash()?;
    let est = cfg
        .estimate
        .as_ref()
        .ok_or_else(|| cfg_err("missing [estimate] section"))?;
    let missing = |s: &str| cfg_err(format!("missing [estimate.{s}] section"));
    let mut files = StagedOutput::new();
    let summary = match kind {
        EstimateKind::Ht => {
            let (body, summary) = estimate_ht(est.ht.as_ref().ok_or_else(|| missing("ht"))?, cfg.seed)?;
            files.add("estimate_ht.json", tagged(cfg, &hash, body)?);
            summary
        }
        EstimateKind::QHat => {
            let (body, summary) = estimate_qhat(est.qhat.as_ref().ok_or_else(|| missing("qhat"))?, cfg.seed)?;
            files.add("estimate_qhat.json", tagged(cfg, &hash, body)?);
            summary
        }
        EstimateKind::Socio => {
            let sc = est.socio.as_ref().ok_or_else(|| missing("socio"))?;
            let (body, kernel, summary) = estimate_socio(sc, cfg.seed)?;
            files.add("estimate_socio.json", tagged(cfg, &hash, body)?);
            if let Some(k) = kernel {
                files.add_with("socio_kernel.csv", |b| write_matrix_csv(&k, &hash, b))?;
            }
            summary
        }
    };
    Ok(RunOutput {
        files,
        exit_code: EXIT_OK,
        summary,
    })
}

#[derive(Serialize)]
struct HtRecord {
    #[serde(flatten)]
    estimate: HtEstimate,
    n: usize,
    labels: Vec<i64>,
    probabilities_exact: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    probability_replications: Option<usize>,
    /// Largest Monte Carlo `se / pi` over the contrasted labels.
    #[serde(skip_serializing_if = "Option::is_none")]
    probability_max_rel_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    design_expectation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_effect: Option<f64>,
    /// `|E tau_hat - tau|`; nonzero when some units lack positivity.
    #[serde(skip_serializing_if = "Option::is_none")]
    design_bias: Option<f64>,
}

fn read_observed_csv(path: &Path, n: usize) -> Result<(Vec<bool>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut t = vec![None; n];
    let mut y = vec![0.0; n];
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Parse("observed data needs columns node,treated,outcome".into()));
        }
        let i: usize = parse(&rec[0])?;
        if i >= n {
            return Err(Error::Parse(format!("node {i} out of range")));
        }
        let treated: u8 = parse(&rec[1])?;
        if treated > 1 {
            return Err(Error::Parse("treated must be 0 or 1".into()));
        }
        t[i] = Some(treated == 1);
        y[i] = parse(&rec[2])?;
    }
    let t = t
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| Error::Parse(format!("no row for node {i}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((t, y))
}

fn read_table_csv(path: &Path, n: usize) -> Result<OutcomeTable> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut table: OutcomeTable = BTreeMap::new();
    let mut seen: BTreeMap<i64, Vec<bool>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Parse(
                "potential outcomes need columns node,label,outcome".into(),
            ));
        }
        let (i, label, y): (usize, i64, f64) = (parse(&rec[0])?, parse(&rec[1])?, parse(&rec[2])?);
        if i >= n {
            return Err(Error::Parse(format!("node {i} out of range")));
        }
        table.entry(label).or_insert_with(|| vec![0.0; n])[i] = y;
        seen.entry(label).or_insert_with(|| vec![false; n])[i] = true;
    }
    if let Some((l, _)) = seen.iter().find(|(_, s)| s.iter().any(|x| !x)) {
        return Err(Error::Parse(format!("label {l} is missing some nodes")));
    }
    Ok(table)
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("cannot parse {s:?}")))
}

fn outcome_table(ht: &HtConfig) -> Result<Option<OutcomeTable>> {
    if let Some(path) = &ht.potential_outcomes_csv {
        return read_table_csv(path, ht.n).map(Some);
    }
    let Some(map) = &ht.potential_outcomes else {
        return Ok(None);
    };
    let mut table = BTreeMap::new();
    for (k, v) in map {
        let label: i64 = k
            .parse()
            .map_err(|_| cfg_err(format!("potential outcome label {k:?} is not an integer")))?;
        if v.len() != ht.n {
            return Err(cfg_err(format!(
                "potential outcomes for label {k} need {} values",
                ht.n
            )));
        }
        table.insert(label, v.clone());
    }
    Ok(Some(table))
}

fn estimate_ht(ht: &HtConfig, seed: u64) -> Result<(HtRecord, String)> {
    let graph = ht.graph.build(ht.n, derive_seed(seed, stream::GRAPH, ht.n as u64))?;
    let design = ExposureDesign::new(graph, ht.treat_prob, ht.exposure)?;
    let table = outcome_table(ht)?;
    let (y, labels) = if let Some(path) = &ht.data {
        let (t, y) = read_observed_csv(path, ht.n)?;
        (y, design.labels(&t)?)
    } else if let (Some(a), Some(y)) = (&ht.assignment, &ht.outcomes) {
        if a.len() != ht.n || y.len() != ht.n || a.iter().any(|&x| x > 1) {
            return Err(cfg_err(
                "assignment and outcomes need n entries; assignment must be 0/1",
            ));
        }
        let t: Vec<bool> = a.iter().map(|&x| x == 1).collect();
        (y.clone(), design.labels(&t)?)
    } else if let Some(table) = &table {
        // Draws an assignment and reads the realized outcomes from the table.
        let t = keyed_assignment(ht.n, ht.treat_prob, derive_seed(seed, stream::ESTIMATION, 0));
        let labels = design.labels(&t)?;
        let y = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                table
                    .get(l)
                    .map(|v| v[i])
                    .ok_or_else(|| cfg_err(format!("no potential outcomes for label {l}")))
            })
            .collect::<Result<Vec<_>>>()?;
        (y, labels)
    } else {
        return Err(cfg_err("estimate.ht needs observed data or potential outcomes"));
    };
    let probs = exposure_probabilities(&design, ht.mc_replications, derive_seed(seed, stream::ESTIMATION, 1))?;
    let [dk, dl] = ht.contrast;
    let estimate = ht_estimate(&labels, &y, &probs, dk, dl, ht.positivity)?;
    let max_rel = (!probs.exact).then(|| {
        let mut m: f64 = 0.0;
        for d in [dk, dl] {
            for i in 0..ht.n {
                let p = probs.get(d, i);
                if p > 0.0 {
                    m = m.max(probs.se(d, i) / p);
                }
            }
        }
        m
    });
    let (expectation, truth) = match &table {
        Some(tab) => {
            let truth = true_effect(tab, dk, dl)?;
            let e = if ht.n <= MAX_ENUMERATION_N {
                Some(ht_design_expectation(&design, tab, dk, dl)?)
            } else {
                None
            };
            (e, Some(truth))
        }
        None => (None, None),
    };
    let summary = format!(
        "{} = {:.6} over {} units",
        estimate.estimand, estimate.value, estimate.included
    );
    Ok((
        HtRecord {
            estimate,
            n: ht.n,
            labels,
            probabilities_exact: probs.exact,
            probability_replications: probs.replications,
            probability_max_rel_se: max_rel,
            design_expectation: expectation,
            true_effect: truth,
            design_bias: expectation.zip(truth).map(|(e, t)| (e - t).abs()),
        },
        summary,
    ))
}

#[derive(Serialize)]
struct QHatRecord {
    estimand: &'static str,
    #[serde(flatten)]
    fit: QHat,
    observed_infected: usize,
    /// `m / k` when the graph is a star seeded at its center over one period.
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<f64>,
}

fn estimate_qhat(qc: &QHatConfig, seed: u64) -> Result<(QHatRecord, String)> {
    let graph = qc.graph.build(qc.n, derive_seed(seed, stream::GRAPH, qc.n as u64))?;
    if qc.seeds.iter().any(|&s| s >= qc.n) {
        return Err(cfg_err("estimate.qhat seed node out of range"));
    }
    let outcomes: Vec<bool> = match (&qc.outcomes, qc.truth) {
        (Some(o), _) => {
            if o.len() != qc.n || o.iter().any(|&x| x > 1) {
                return Err(cfg_err("estimate.qhat outcomes need n entries of 0/1"));
            }
            o.iter().map(|&x| x == 1).collect()
        }
        (None, Some(q)) => {
            if !(0.0..=1.0).contains(&q) {
                return Err(cfg_err("estimate.qhat truth must be in [0, 1]"));
            }
            let key = run_key(derive_seed(seed, stream::EVALUATION, 0));
            sir_with_seeds(&graph, &qc.seeds, q, qc.periods, key).infected
        }
        (None, None) => return Err(cfg_err("estimate.qhat needs outcomes or truth")),
    };
    let observed = outcomes.iter().filter(|&&x| x).count();
    let closed_form = if matches!(qc.graph, GraphSpec::Star) && qc.seeds == [0] && qc.periods == 1 {
        let leaves_hit = outcomes.iter().skip(1).filter(|&&x| x).count();
        Some(q_hat_star(leaves_hit, qc.n - 1)?)
    } else {
        None
    };
    let fit = q_hat_mc(
        &graph,
        &qc.seeds,
        qc.periods,
        &outcomes,
        &qc.grid.values(),
        qc.replications,
        seed,
    )?;
    let summary = format!("q_hat = {:.6}", fit.q_hat);
    Ok((
        QHatRecord {
            estimand: "q",
            fit,
            observed_infected: observed,
            closed_form,
            truth: qc.truth,
        },
        summary,
    ))
}

#[derive(Serialize)]
struct SocioRecord {
    n: usize,
    groups: Vec<usize>,
    psd: PsdReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    composition_distances: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hybrid_set_sizes: Option<Vec<usize>>,
    kernel_written: bool,
}

type SocioOut = (SocioRecord, Option<Vec<Vec<f64>>>, String);

fn estimate_socio(sc: &SocioConfig, _seed: u64) -> Result<SocioOut> {
    let locations = sc.locations.build(sc.n)?;
    let spec = SocioCovSpec {
        locations: locations.clone(),
        groups: sc.groups.clone(),
        affinity: sc.affinity.clone(),
        spatial: sc.spatial,
    };
    let (kernel, psd) = socio_cov_kernel(spec)?;
    let distances = sc
        .compositions
        .as_ref()
        .map(|c| {
            c.iter()
                .map(|a| c.iter().map(|b| socio_distance(a, b)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let sizes = sc
        .epsilon
        .map(|eps| {
            let decay = DecayBound::Matern {
                sigma2: sc.spatial.sigma2,
                phi: sc.spatial.phi,
                nu: sc.spatial.nu,
            };
            let m = hybrid_set(&locations, eps, decay, Metric::Euclidean, &sc.groups, &sc.affinity)?;
            Ok::<_, Error>((0..m.len()).map(|a| m.set_len(a)).collect())
        })
        .transpose()?;
    let dense = (sc.n <= sc.dense_limit).then(|| {
        (0..sc.n)
            .map(|i| (0..sc.n).map(|j| kernel.eval(i, j).unwrap_or(0.0)).collect())
            .collect::<Vec<Vec<f64>>>()
    });
    let summary = format!(
        "socio kernel n={}, psd {}",
        sc.n,
        psd.psd.map_or("unchecked".to_string(), |b| b.to_string())
    );
    Ok((
        SocioRecord {
            n: sc.n,
            groups: sc.groups.clone(),
            psd,
            composition_distances: distances,
            hybrid_set_sizes: sizes,
            kernel_written: dense.is_some(),
        },
        dense,
        summary,
    ))
}

fn write_matrix_csv(m: &[Vec<f64>], hash: &str, w: &mut Vec<u8>) -> Result<()> {
    use std::io::Write;
    writeln!(w, "# config_hash={hash} tool_version={}", crate::VERSION)?;
    for row in m {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn run_gen(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let hash = cfg.hash()?;
    let model = cfg.require_model()?;
    let gc = cfg.gen.as_ref().ok_or_else(|| cfg_err("missing [gen] section"))?;
    let g = model.build(gc.n, cfg.seed)?;
    let arrays: Vec<_> = (0..gc.replications)
        .map(|r| g.generate(derive_seed(cfg.seed, stream::EVALUATION, r as u64)))
        .collect();
    let mut files = StagedOutput::new();
    match gc.format {
        ArrayFormat::Csv => files.add_with("arrays.csv", |b| write_arrays_csv(&arrays, Some(hash.clone()), b))?,
        ArrayFormat::Binary => files.add_with("arrays.bin", |b| write_arrays_binary(&arrays, Some(hash.clone()), b))?,
    }
    if gc.write_affinity {
        if let Some(recipe) = &cfg.affinity {
            let aff = recipe.build(model, g.as_ref(), cfg.seed)?;
            files.add_with("affinity.txt", |b| aff.write_text_tagged(b, Some(&hash)))?;
        }
    }
    Ok(RunOutput {
        files,
        exit_code: EXIT_OK,
        summary: format!("{} replications of {} at n={}", gc.replications, g.model_id(), gc.n),
    })
}

#[derive(Serialize)]
struct Info {
    tool_version: &'static str,
    schema_version: u32,
    models: Vec<&'static str>,
    recipes: Vec<&'static str>,
    subcommands: Vec<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

/// Tool description, plus the effective config and its hash when given.
pub fn info(cfg: Option<&ExperimentConfig>) -> Result<String> {
    let info = Info {
        tool_version: crate::VERSION,
        schema_version: crate::config::SCHEMA_VERSION,
        models: crate::ModelId::ALL.iter().map(|m| m.as_str()).collect(),
        recipes: vec![
            "singleton",
            "m_ball",
            "distance_ball",
            "graph_neighborhood",
            "infection_ball",
            "block_set",
            "hybrid_set",
        ],
        subcommands: vec![
            "diagnose",
            "normality",
            "estimate ht",
            "estimate qhat",
            "estimate socio",
            "gen",
            "info",
        ],
        config_hash: cfg.map(|c| c.hash()).transpose()?,
        config: cfg.map(serde_json::to_value).transpose()?,
    };
    Ok(serde_json::to_string_pretty(&info)? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qhat_star_config_reports_closed_form() {
        let cfg = ExperimentConfig::parse(
            r#"
schema_version = 1
seed = 3
[estimate.qhat]
n = 11
graph = { type = "star" }
seeds = [0]
periods = 1
outcomes = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0, 1]
grid = { points = 19 }
replications = 400
"#,
        )
        .unwrap();
        let out = run_estimate(&cfg, EstimateKind::QHat).unwrap();
        let v: serde_json::Value = serde_json::from_slice(out.files.get("estimate_qhat.json").unwrap()).unwrap();
        assert_eq!(v["closed_form"].as_f64().unwrap(), 0.3);
        assert!((v["q_hat"].as_f64().unwrap() - 0.3).abs() < 0.06);
        assert_eq!(v["config_hash"].as_str().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn missing_section_is_a_config_error() {
        let cfg = ExperimentConfig::parse("schema_version = 1").unwrap();
        assert!(matches!(run_estimate(&cfg, EstimateKind::Ht), Err(Error::Config(_))));
        assert!(matches!(run_diagnose(&cfg), Err(Error::Config(_))));
    }
}
