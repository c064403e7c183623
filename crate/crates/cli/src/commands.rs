use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;

use slfcert::checker::{
    check_plain_supersolution, classify, stability_conclusion, Grid, GridSpec, LyapunovVerdict,
    PlainStatus, Stability, StabilityConclusion, DEFAULT_TOL,
};
use slfcert::connector::{
    build_smoothed, connector_curve_csv, fcip_certificate, fcip_conclusion, ConnectorInput,
    FcipCertificate,
};
use slfcert::expr::{self, Expr};
use slfcert::json;
use slfcert::lqg::{certify_nas, LqgCertificate};
use slfcert::montecarlo::{
    check_chebyshev_bound, estimate_stability_profile, simulate, ChebyshevReport, PathStats,
    StabilityProfile,
};
use slfcert::sde::{classify_origin, OriginClass};

use crate::scenario::Loaded;

/// Command result in the exit-code contract: 0 certified, 2 not verified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Certified,
    NotVerified,
}

#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    command: &'static str,
    scenario_sha256: &'a str,
    seed: Option<u64>,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    command: &'static str,
    run: &Loaded,
    body: &T,
) -> anyhow::Result<()> {
    let artifact = Artifact {
        command,
        scenario_sha256: &run.sha256,
        seed: run.seed,
        body,
    };
    let text = json::to_string(&artifact)?;
    fs::write(dir.join(name), text).with_context(|| format!("writing {name}"))
}

fn write_text(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    fs::write(dir.join(name), text).with_context(|| format!("writing {name}"))
}

#[derive(Serialize)]
struct ClassifyReport {
    system: String,
    origin: OriginClass,
    candidate: &'static str,
    grid: GridSpec,
    verdict: LyapunovVerdict,
    /// Plain (all-elements) supersolution check with `l = 0`.
    plain_supersolution: PlainStatus,
    fcip_surrogate: String,
    fcip: FcipCertificate,
    conclusion: StabilityConclusion,
}

/// Forward-completeness surrogate: the scenario's connectors over the
/// candidate's exponents, or `x_i²/2` smoothed with knots 0.5 and 1.
fn fcip_surrogate(
    run: &Loaded,
    n: usize,
) -> anyhow::Result<(slfcert::candidates::Candidate, String)> {
    let sc = &run.scenario;
    if let Some(inputs) = &sc.connectors {
        let exponents = match sc.candidate.as_ref() {
            Some(slfcert::candidates::CandidateSpec::PowerSum { exponents })
            | Some(slfcert::candidates::CandidateSpec::Smoothed { exponents, .. }) => {
                exponents.clone()
            }
            Some(slfcert::candidates::CandidateSpec::AbsSum { weights }) => {
                vec![1.0; weights.len()]
            }
            _ => vec![2.0; n],
        };
        if inputs.len() != exponents.len() {
            bail!(
                "`connectors` has {} entries for {} coordinates",
                inputs.len(),
                exponents.len()
            );
        }
        let specs = inputs
            .iter()
            .zip(&exponents)
            .map(|(c, &p)| c.resolve(p))
            .collect::<Result<Vec<_>, _>>()
            .context("connectors")?;
        let desc =
            format!("smoothed power sum with exponents {exponents:?} from scenario connectors");
        return Ok((build_smoothed(&exponents, specs)?, desc));
    }
    let quad = ConnectorInput {
        a: 0.5,
        b: 1.0,
        p: Some(2.0),
        inner: Some("x1^2/2".into()),
        alpha: None,
    };
    let specs = (0..n)
        .map(|_| quad.resolve(2.0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((
        build_smoothed(&vec![2.0; n], specs)?,
        "default: sum of x_i^2/2 with connectors a=0.5, b=1".into(),
    ))
}

pub fn classify_cmd(run: &Loaded, out: &Path) -> anyhow::Result<Outcome> {
    let sc = &run.scenario;
    let sys = sc.system()?;
    let cand = sc.candidate()?;
    let rates: Vec<Expr> = sc
        .rates
        .iter()
        .enumerate()
        .map(|(i, s)| expr::parse(s, sys.n).with_context(|| format!("rates[{i}]")))
        .collect::<anyhow::Result<_>>()?;
    let grid_spec = sc.grid.clone().unwrap_or_default();
    let grid = Grid::build(&grid_spec, sys.n)?;
    let tol = sc.tol.unwrap_or(DEFAULT_TOL);
    let origin = classify_origin(&sys, 1e-12)?;
    let verdict = classify(&sys, &cand, &rates, &grid, tol)?;
    let plain = check_plain_supersolution(&sys, &cand, &Expr::Num(0.0), &grid, tol)?;
    let (surrogate, desc) = fcip_surrogate(run, sys.n)?;
    let fcip = fcip_certificate(&sys, &surrogate, &sc.fcip_grid.clone().unwrap_or_default())?;
    let conclusion = stability_conclusion(verdict.classification, origin, fcip_conclusion(&fcip));
    fs::create_dir_all(out)?;
    write_text(out, "margins.csv", &verdict.margins_csv())?;
    let report = ClassifyReport {
        system: sys.name.clone().unwrap_or_else(|| "inline".into()),
        origin,
        candidate: cand.family(),
        grid: grid_spec,
        verdict,
        plain_supersolution: plain.plain_supersolution,
        fcip_surrogate: desc,
        fcip,
        conclusion,
    };
    write_json(out, "classify.json", "classify", run, &report)?;
    Ok(if conclusion.conclusion != Stability::None {
        Outcome::Certified
    } else {
        Outcome::NotVerified
    })
}

pub fn lqg_cmd(run: &Loaded, out: &Path) -> anyhow::Result<Outcome> {
    let sc = &run.scenario;
    let prob = sc.lqg.as_ref().context("scenario has no `lqg` problem")?;
    let cert: LqgCertificate = certify_nas(prob, &sc.lqg_grid.clone().unwrap_or_default())?;
    fs::create_dir_all(out)?;
    write_json(out, "lqg.json", "lqg", run, &cert)?;
    Ok(if cert.nas {
        Outcome::Certified
    } else {
        Outcome::NotVerified
    })
}

#[derive(Serialize)]
struct SimulateReport {
    system: String,
    stats: Option<PathStats>,
    chebyshev: Vec<ChebyshevReport>,
    profile: Option<StabilityProfile>,
}

fn profile_csv(p: &StabilityProfile) -> String {
    let mut text = String::from("x0_norm,eta,estimate,wilson_low,wilson_high\n");
    for row in &p.rows {
        let r = row.x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (e, eta) in row.exceedance.iter().zip(&p.etas) {
            text.push_str(&format!(
                "{r:.16e},{eta:.16e},{:.16e},{:.16e},{:.16e}\n",
                e.estimate, e.wilson_low, e.wilson_high
            ));
        }
    }
    text
}

pub fn simulate_cmd(run: &Loaded, out: &Path) -> anyhow::Result<Outcome> {
    let sc = &run.scenario;
    let sys = sc.system()?;
    let sim = sc.sim.as_ref().context("scenario has no `sim` section")?;
    if sim.x0.is_none() && sim.x0_list.is_none() {
        bail!("`sim` needs `x0` or `x0_list`");
    }
    fs::create_dir_all(out)?;
    let mut outcome = Outcome::Certified;
    let mut report = SimulateReport {
        system: sys.name.clone().unwrap_or_else(|| "inline".into()),
        stats: None,
        chebyshev: Vec::new(),
        profile: None,
    };
    if let Some(x0) = &sim.x0 {
        let stats = simulate(&sys, x0, &sim.config)?;
        write_text(out, "timeseries.csv", &stats.timeseries_csv())?;
        if !stats.trajectories.is_empty() {
            write_text(out, "paths.csv", &stats.paths_csv())?;
        }
        if sc.candidate.is_some() {
            let cand = sc.candidate()?;
            for &eta in &sim.config.thresholds {
                let r = check_chebyshev_bound(&sys, &cand, x0, eta, &sim.config)?;
                if !r.passed {
                    outcome = Outcome::NotVerified;
                }
                report.chebyshev.push(r);
            }
        }
        report.stats = Some(stats);
    }
    if let Some(list) = &sim.x0_list {
        let etas = sim
            .eta_list
            .clone()
            .unwrap_or_else(|| sim.config.thresholds.clone());
        let profile =
            estimate_stability_profile(&sys, list, &etas, &sim.config, sim.hit_eps_sensitivity)?;
        write_text(out, "profile.csv", &profile_csv(&profile))?;
        report.profile = Some(profile);
    }
    write_json(out, "simulate.json", "simulate", run, &report)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct SmoothReport {
    a: f64,
    b: f64,
    p: f64,
    inner: String,
    alpha: [f64; 6],
    boundary_residual: f64,
    knot_mismatch: f64,
    min_slope: f64,
}

pub fn smooth_cmd(run: &Loaded, out: &Path) -> anyhow::Result<Outcome> {
    let s = run
        .scenario
        .smooth
        .as_ref()
        .context("scenario has no `smooth` section")?;
    let input = ConnectorInput {
        a: s.a,
        b: s.b,
        p: Some(s.p),
        inner: s.inner.clone(),
        alpha: None,
    };
    let spec = input.resolve(s.p)?;
    fs::create_dir_all(out)?;
    write_text(
        out,
        "connector.csv",
        &connector_curve_csv(&spec, s.range, s.points),
    )?;
    let report = SmoothReport {
        a: spec.a,
        b: spec.b,
        p: spec.p,
        inner: spec.inner.render(),
        alpha: spec.alpha,
        boundary_residual: spec.boundary_residual()?,
        knot_mismatch: spec.knot_mismatch()?,
        min_slope: spec.min_slope().0,
    };
    write_json(out, "smooth.json", "smooth", run, &report)?;
    Ok(Outcome::Certified)
}

pub const SUMMARY: &str = "summary.json";

/// Merge every JSON artifact in `dir` into `summary.json`.
pub fn report_cmd(dir: &Path) -> anyhow::Result<Outcome> {
    fs::create_dir_all(dir)?;
    let mut reports = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        if !name.ends_with(".json") || name == SUMMARY {
            continue;
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {name}"))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {name}"))?;
        reports.insert(name, value);
    }
    #[derive(Serialize)]
    struct Summary {
        count: usize,
        reports: BTreeMap<String, serde_json::Value>,
    }
    let summary = Summary {
        count: reports.len(),
        reports,
    };
    fs::write(dir.join(SUMMARY), json::to_string(&summary)?)?;
    Ok(Outcome::Certified)
}
