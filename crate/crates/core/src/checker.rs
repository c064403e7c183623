//! Grid verification of the Lyapunov inequality `−ℒV − l ≥ 0` in the
//! weak sense (some subjet element at each point) and in the plain sense
//! (every subjet element), and the resulting stability classification.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{Candidate, MembershipTest, Provenance, SemijetElement};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::generator::apply_generator;
use crate::sde::{OriginClass, SdeSystem};

pub const DEFAULT_TOL: f64 = 1e-9;
const SHELL_EXPONENTS: std::ops::RangeInclusive<i32> = 1..=6;
const ESCALATION_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_width: f64,
    /// Points per axis; a single entry applies to every axis.
    pub counts: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            half_width: 2.0,
            counts: vec![21],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Shell {
    pub radius: f64,
    pub indices: Vec<usize>,
}

/// Sample points standing in for "every x ∈ ℝⁿ": a box, its kink slices
/// (any subset of coordinates zeroed) and small shells around the origin.
#[derive(Debug, Clone, Serialize)]
pub struct Grid {
    pub points: Vec<Vec<f64>>,
    pub shells: Vec<Shell>,
    pub half_width: f64,
    pub box_points: usize,
}

fn key(x: &[f64]) -> Vec<u64> {
    // -0.0 and 0.0 are the same point
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

impl Grid {
    pub fn build(spec: &GridSpec, n: usize) -> Result<Grid> {
        if n == 0 {
            return Err(Error::InvalidInput(
                "grid dimension must be positive".into(),
            ));
        }
        let counts: Vec<usize> = match spec.counts.len() {
            1 => vec![spec.counts[0]; n],
            k if k == n => spec.counts.clone(),
            k => {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: k,
                })
            }
        };
        if !(spec.half_width > 0.0) || counts.iter().any(|&c| c < 1) {
            return Err(Error::InvalidInput(
                "grid needs a positive half-width and at least one point per axis".into(),
            ));
        }
        let l = spec.half_width;
        let axes: Vec<Vec<f64>> = counts
            .iter()
            .map(|&c| {
                let mut axis: Vec<f64> = if c == 1 {
                    vec![0.0]
                } else {
                    (0..c)
                        .map(|k| -l + 2.0 * l * k as f64 / (c - 1) as f64)
                        .collect()
                };
                // the zero entry produces every kink slice
                if !axis.contains(&0.0) {
                    axis.push(0.0);
                }
                axis
            })
            .collect();
        let mut points = vec![Vec::with_capacity(n)];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p: Vec<f64>| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        let mut seen: HashSet<Vec<u64>> = HashSet::new();
        let mut unique = Vec::with_capacity(points.len());
        for mut p in points {
            p.iter_mut().for_each(|v| *v += 0.0);
            if seen.insert(key(&p)) {
                unique.push(p);
            }
        }
        let box_points = unique.len();

        let directions = shell_directions(n);
        let mut shells = Vec::new();
        for k in SHELL_EXPONENTS {
            let r = 10f64.powi(-k);
            let mut indices = Vec::with_capacity(directions.len());
            for d in &directions {
                let p: Vec<f64> = d.iter().map(|v| v * r + 0.0).collect();
                if seen.insert(key(&p)) {
                    unique.push(p);
                    indices.push(unique.len() - 1);
                } else if let Some(i) = unique.iter().position(|q| key(q) == key(&p)) {
                    indices.push(i);
                }
            }
            shells.push(Shell { radius: r, indices });
        }
        Ok(Grid {
            points: unique,
            shells,
            half_width: l,
            box_points,
        })
    }

    /// A grid of explicit points; strict-rate positivity is then checked on
    /// every nonzero point.
    pub fn from_points(points: Vec<Vec<f64>>) -> Grid {
        let mut seen = HashSet::new();
        let points: Vec<Vec<f64>> = points
            .into_iter()
            .map(|p| p.into_iter().map(|v| v + 0.0).collect::<Vec<f64>>())
            .filter(|p| seen.insert(key(p)))
            .collect();
        let half_width = points.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        Grid {
            box_points: points.len(),
            points,
            shells: Vec::new(),
            half_width,
        }
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }
}

/// Unit directions with entries in {−1, 0, 1}/√k (every signed support);
/// axes and signed diagonals only in high dimension.
fn shell_directions(n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    if n <= 8 {
        let total = 3usize.pow(n as u32);
        for code in 1..total {
            let mut c = code;
            let mut d = vec![0.0; n];
            for v in d.iter_mut() {
                *v = [0.0, 1.0, -1.0][c % 3];
                c /= 3;
            }
            let k = d.iter().filter(|v| **v != 0.0).count() as f64;
            d.iter_mut().for_each(|v| *v /= k.sqrt());
            out.push(d);
        }
    } else {
        for i in 0..n {
            for s in [1.0, -1.0] {
                let mut d = vec![0.0; n];
                d[i] = s;
                out.push(d);
            }
        }
        let inv = 1.0 / (n as f64).sqrt();
        for s in [1.0, -1.0] {
            out.push(vec![s * inv; n]);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginRecord {
    pub x: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub x: Vec<f64>,
    pub element: SemijetElement,
    pub margin: f64,
    /// Refuted by unbounded curvature rather than an explicit negative margin.
    pub analytic: bool,
    pub membership_verified: bool,
}

#[derive(Debug, Clone, Serialize)]
pub enum PlainStatus {
    Holds,
    Refuted(Box<Counterexample>),
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    NotVerified,
    Slf,
    StrictSlf,
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovVerdict {
    pub weak_supersolution: bool,
    pub plain_supersolution: PlainStatus,
    pub classification: Classification,
    /// Rate function the margins refer to.
    pub rate: String,
    pub tol: f64,
    pub grid_points: usize,
    pub kink_points: usize,
    pub worst: Option<MarginRecord>,
    pub margin_records: Vec<MarginRecord>,
    pub counterexamples: Vec<Counterexample>,
    pub notes: Vec<String>,
}

impl LyapunovVerdict {
    /// `x1,…,xn,margin` rows for plotting.
    pub fn margins_csv(&self) -> String {
        let n = self.margin_records.first().map_or(0, |r| r.x.len());
        let mut out: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        out.push("margin".into());
        let mut text = out.join(",") + "\n";
        for r in &self.margin_records {
            let row: Vec<String> =
                r.x.iter()
                    .chain(std::iter::once(&r.margin))
                    .map(|v| format!("{v:.16e}"))
                    .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        text
    }
}

fn check_inputs(sys: &SdeSystem, c: &Candidate, l: &Expr, grid: &Grid) -> Result<()> {
    if c.dim() != sys.n {
        return Err(Error::DimensionMismatch {
            expected: sys.n,
            got: c.dim(),
        });
    }
    if grid.dim() != sys.n {
        return Err(Error::DimensionMismatch {
            expected: sys.n,
            got: grid.dim(),
        });
    }
    l.check_dimension(sys.n)?;
    for x in &grid.points {
        let v = l.eval(x)?;
        if !(v >= 0.0) {
            return Err(Error::NegativeRate {
                point: x.clone(),
                value: v,
            });
        }
    }
    Ok(())
}

/// `−ℒ(x, p, X) − l(x)`
fn margin(sys: &SdeSystem, x: &[f64], e: &SemijetElement, lx: f64) -> Result<f64> {
    // + 0.0 turns −0 into 0 in reports
    Ok(-apply_generator(sys, x, &e.p, &e.x)?.value - lx + 0.0)
}

fn candidate_notes(c: &Candidate, grid: &Grid) -> Vec<String> {
    let mut notes = Vec::new();
    if c.has_steep_kinks() {
        notes.push("steep kink: exponents below one have unbounded slope at zero".into());
    }
    if grid.points.iter().any(|x| c.kinks(x).len() > 1) {
        notes.push(
            "points with several zero coordinates use the coordinate-wise product subjet".into(),
        );
    }
    notes
}

fn weak_margins(
    sys: &SdeSystem,
    c: &Candidate,
    l: &Expr,
    grid: &Grid,
) -> Result<Vec<MarginRecord>> {
    grid.points
        .par_iter()
        .map(|x| {
            let e = c.canonical_witness(x)?;
            let m = margin(sys, x, &e, l.eval(x)?)?;
            Ok(MarginRecord {
                x: x.clone(),
                margin: m,
            })
        })
        .collect()
}

fn weak_verdict(
    sys: &SdeSystem,
    c: &Candidate,
    l: &Expr,
    grid: &Grid,
    tol: f64,
) -> Result<LyapunovVerdict> {
    check_inputs(sys, c, l, grid)?;
    let records = weak_margins(sys, c, l, grid)?;
    let worst = records
        .iter()
        .min_by(|a, b| a.margin.total_cmp(&b.margin))
        .cloned();
    let weak = records.iter().all(|r| r.margin >= -tol);
    Ok(LyapunovVerdict {
        weak_supersolution: weak,
        plain_supersolution: PlainStatus::Unknown,
        classification: Classification::NotVerified,
        rate: l.render(),
        tol,
        grid_points: grid.points.len(),
        kink_points: grid.points.iter().filter(|x| !c.smooth_locus(x)).count(),
        worst,
        margin_records: records,
        counterexamples: Vec::new(),
        notes: candidate_notes(c, grid),
    })
}

pub fn check_weak_supersolution(
    sys: &SdeSystem,
    c: &Candidate,
    l: &Expr,
    grid: &Grid,
    tol: f64,
) -> Result<LyapunovVerdict> {
    weak_verdict(sys, c, l, grid, tol)
}

/// Elements tried at a kink beyond the membership-checked adversarial set:
/// the canonical witness with curvature `10^k` on every kink coordinate.
fn escalation(base: &SemijetElement, kinks: &[usize]) -> impl Iterator<Item = SemijetElement> {
    let kinks = kinks.to_vec();
    let base = base.clone();
    (0..=6).map(move |k| {
        let s = 10f64.powi(k).min(ESCALATION_CAP);
        let mut e = base.clone();
        e.provenance = Provenance::Adversarial;
        for &i in &kinks {
            e.x[(i, i)] = s;
        }
        e
    })
}

fn plain_at(
    sys: &SdeSystem,
    c: &Candidate,
    l: &Expr,
    x: &[f64],
    tol: f64,
) -> Result<Option<Counterexample>> {
    let lx = l.eval(x)?;
    let kinks = c.kinks(x);
    let witness = c.canonical_witness(x)?;
    let found = |e: SemijetElement, m: f64, analytic: bool, verified: bool| Counterexample {
        x: x.to_vec(),
        element: e,
        margin: m,
        analytic,
        membership_verified: verified,
    };
    if kinks.is_empty() {
        // the true jet dominates every smaller curvature
        let m = margin(sys, x, &witness, lx)?;
        if m < -tol {
            let verified = c.membership(x, &witness, &MembershipTest::default()).passed;
            return Ok(Some(found(witness, m, false, verified)));
        }
        return Ok(None);
    }
    let test = MembershipTest::default();
    let m = margin(sys, x, &witness, lx)?;
    if m < -tol {
        let verified = c.membership(x, &witness, &test).passed;
        return Ok(Some(found(witness, m, false, verified)));
    }
    for e in c.adversarial_elements(x, 16)? {
        let m = margin(sys, x, &e, lx)?;
        if m < -tol {
            return Ok(Some(found(e, m, false, true)));
        }
    }
    let mut last = None;
    for e in escalation(&witness, &kinks) {
        let m = margin(sys, x, &e, lx)?;
        if m < -tol {
            let verified = c.membership(x, &e, &test).passed;
            return Ok(Some(found(e, m, false, verified)));
        }
        last = Some((e, m));
    }
    let mut intensity = 0.0;
    for &k in &kinks {
        intensity += sys.noise_intensity(x, k)?;
    }
    if intensity > 0.0 {
        // the curvature term ½ X_kk Σ σ_k² is unbounded above
        let (e, m) = last.expect("escalation is non-empty");
        let verified = c.membership(x, &e, &test).passed;
        return Ok(Some(found(e, m, true, verified)));
    }
    Ok(None)
}

pub fn check_plain_supersolution(
    sys: &SdeSystem,
    c: &Candidate,
    l: &Expr,
    grid: &Grid,
    tol: f64,
) -> Result<LyapunovVerdict> {
    let mut verdict = weak_verdict(sys, c, l, grid, tol)?;
    let first = grid
        .points
        .par_iter()
        .map(|x| plain_at(sys, c, l, x, tol))
        .find_map_first(|r| match r {
            Ok(None) => None,
            other => Some(other),
        });
    verdict.plain_supersolution = match first {
        None => PlainStatus::Holds,
        Some(Err(e)) => return Err(e),
        Some(Ok(Some(ce))) => {
            verdict.counterexamples.push(ce.clone());
            PlainStatus::Refuted(Box::new(ce))
        }
        Some(Ok(None)) => unreachable!("filtered above"),
    };
    Ok(verdict)
}

/// Whether `l` is bounded away from zero on every shell (or, on grids
/// without shells, positive at every nonzero point).
fn rate_is_positive(l: &Expr, grid: &Grid) -> Result<bool> {
    if grid.shells.is_empty() {
        for x in grid.points.iter().filter(|x| x.iter().any(|v| *v != 0.0)) {
            if !(l.eval(x)? > 0.0) {
                return Ok(false);
            }
        }
        return Ok(true);
    }
    for shell in &grid.shells {
        let mut min = f64::INFINITY;
        for &i in &shell.indices {
            min = min.min(l.eval(&grid.points[i])?);
        }
        if !(min > 0.0) {
            return Ok(false);
        }
    }
    for x in grid.points.iter().filter(|x| x.iter().any(|v| *v != 0.0)) {
        if !(l.eval(x)? > 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// SLF if the weak check passes with `l = 0`; strict SLF if it also passes
/// with one of the supplied positive rates.
pub fn classify(
    sys: &SdeSystem,
    c: &Candidate,
    rates: &[Expr],
    grid: &Grid,
    tol: f64,
) -> Result<LyapunovVerdict> {
    let zero = Expr::Num(0.0);
    let mut base = weak_verdict(sys, c, &zero, grid, tol)?;
    if !base.weak_supersolution {
        return Ok(base);
    }
    base.classification = Classification::Slf;
    for l in rates {
        if !rate_is_positive(l, grid)? {
            base.notes.push(format!(
                "rate {} is not positive on every shell",
                l.render()
            ));
            continue;
        }
        let v = weak_verdict(sys, c, l, grid, tol)?;
        if v.weak_supersolution {
            let mut v = v;
            v.classification = Classification::StrictSlf;
            for n in &base.notes {
                if !v.notes.contains(n) {
                    v.notes.push(n.clone());
                }
            }
            return Ok(v);
        }
        base.notes.push(format!(
            "rate {} fails the weak check (worst margin {:e})",
            l.render(),
            v.worst.map_or(f64::NAN, |w| w.margin)
        ));
    }
    Ok(base)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stability {
    None,
    #[serde(rename = "NS")]
    Ns,
    #[serde(rename = "SiP")]
    SiP,
    #[serde(rename = "NAS")]
    Nas,
    #[serde(rename = "ASiP")]
    ASiP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StabilityConclusion {
    pub conclusion: Stability,
    /// The classification rests on finite-grid evidence.
    pub grid_evidence: bool,
}

pub fn stability_conclusion(
    classification: Classification,
    origin: OriginClass,
    fcip: bool,
) -> StabilityConclusion {
    let conclusion = match (classification, origin, fcip) {
        (_, _, false)
        | (Classification::NotVerified, _, _)
        | (_, OriginClass::NotEquilibrium, _) => Stability::None,
        (Classification::Slf, OriginClass::NoisyEquilibrium, true) => Stability::Ns,
        (Classification::Slf, OriginClass::AlmostSureEquilibrium, true) => Stability::SiP,
        (Classification::StrictSlf, OriginClass::NoisyEquilibrium, true) => Stability::Nas,
        (Classification::StrictSlf, OriginClass::AlmostSureEquilibrium, true) => Stability::ASiP,
    };
    StabilityConclusion {
        conclusion,
        grid_evidence: conclusion != Stability::None,
    }
}
