//! Euler–Maruyama estimates of the stopped-process functionals: exceedance
//! of the running supremum, hitting of the origin, terminal magnitudes and
//! probability envelopes.
//!
//! Path `i` draws its normals from ChaCha8 seeded with the configuration
//! seed on stream `i`, so results do not depend on how paths are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::Candidate;
use crate::error::{Error, Result};
use crate::sde::SdeSystem;

const Z95: f64 = 1.959_963_984_540_054;
pub const MAX_KEPT_PATHS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Radius of the ball treated as the origin.
    pub hit_eps: f64,
    /// Levels η for the exceedance frequencies of `sup |x(t∧τ0)|`.
    pub thresholds: Vec<f64>,
    /// Envelope levels ε: quantile curves of `|x(t)|` at probability `1 − ε`.
    pub envelope_eps: Vec<f64>,
    /// Number of equally spaced report times on `[0, T]`.
    pub time_points: usize,
    /// Do not freeze paths at the origin.
    pub unstopped: bool,
    /// In one dimension a sign change between steps, or a Brownian-bridge
    /// touch of zero between same-sign steps, also counts as hitting the
    /// origin.
    pub crossing_detection: bool,
    /// Number of leading paths whose trajectories are retained.
    pub keep_paths: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            horizon: 1.0,
            n_paths: 1000,
            seed: 0,
            hit_eps: 1e-4,
            thresholds: vec![1.0],
            envelope_eps: vec![0.1, 0.01],
            time_points: 21,
            unstopped: false,
            crossing_detection: true,
            keep_paths: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if self.dt > self.horizon {
            return bad("dt must not exceed the horizon");
        }
        if self.n_paths == 0 {
            return bad("n_paths must be at least 1");
        }
        if !(self.hit_eps > 0.0) {
            return bad("hit_eps must be positive");
        }
        if self.keep_paths > MAX_KEPT_PATHS {
            return bad("at most 100 paths can be retained");
        }
        if self.envelope_eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return bad("envelope levels must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }

    fn report_steps(&self) -> Vec<usize> {
        let steps = self.steps();
        let m = self.time_points.max(2);
        let mut out: Vec<usize> = (0..m)
            .map(|k| ((k as f64 * steps as f64) / (m - 1) as f64).round() as usize)
            .collect();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone)]
struct PathOutcome {
    sup: f64,
    tau0: Option<f64>,
    terminal: f64,
    /// `|x|` at each report time.
    samples: Vec<f64>,
    exploded: bool,
    failed: bool,
    trajectory: Option<Vec<(f64, Vec<f64>)>>,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn simulate_path(
    sys: &SdeSystem,
    x0: &[f64],
    cfg: &SimConfig,
    index: u64,
    report: &[usize],
    keep: bool,
) -> PathOutcome {
    let n = sys.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let steps = cfg.steps();
    let sqdt = cfg.dt.sqrt();
    let stride = (steps / 1000).max(1);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut sup = norm(&x);
    let mut tau0 = (sup <= cfg.hit_eps).then_some(0.0);
    let mut frozen = tau0.is_some() && !cfg.unstopped;
    let mut samples = Vec::with_capacity(report.len());
    let mut next_report = 0;
    let mut trajectory = keep.then(|| vec![(0.0, x.clone())]);
    let out = |sup: f64, tau0, terminal, samples, exploded, failed, trajectory| PathOutcome {
        sup,
        tau0,
        terminal,
        samples,
        exploded,
        failed,
        trajectory,
    };

    for k in 0..=steps {
        if next_report < report.len() && report[next_report] == k {
            samples.push(norm(&x));
            next_report += 1;
        }
        if k == steps {
            break;
        }
        if frozen {
            continue;
        }
        if sys.drift_into(&x, &mut f).is_err() {
            return out(sup, tau0, f64::NAN, samples, false, true, trajectory);
        }
        for i in 0..n {
            next[i] = x[i] + f[i] * cfg.dt;
        }
        let mut var = 0.0;
        for alpha in 0..sys.d {
            if sys.diffusion_into(alpha, &x, &mut s).is_err() {
                return out(sup, tau0, f64::NAN, samples, false, true, trajectory);
            }
            let xi: f64 = rng.sample(StandardNormal);
            for i in 0..n {
                next[i] += s[i] * sqdt * xi;
            }
            var += s[0] * s[0];
        }
        let t = (k + 1) as f64 * cfg.dt;
        if next.iter().any(|v| !v.is_finite()) {
            return out(
                f64::INFINITY,
                tau0,
                f64::INFINITY,
                samples,
                true,
                false,
                trajectory,
            );
        }
        let crossing = if cfg.crossing_detection && n == 1 && tau0.is_none() {
            let prod = x[0] * next[0];
            if prod < 0.0 {
                // linear interpolation of the crossing time
                let frac = x[0].abs() / (x[0].abs() + next[0].abs());
                Some(k as f64 * cfg.dt + frac * cfg.dt)
            } else if prod > 0.0 && var > 0.0 {
                // Brownian bridge between the two endpoints touches zero
                // with probability exp(−2 x_k x_{k+1} / (σ² dt))
                let touch = (-2.0 * prod / (var * cfg.dt)).exp();
                (touch > 1e-12 && rng.random::<f64>() < touch)
                    .then_some(k as f64 * cfg.dt + 0.5 * cfg.dt)
            } else {
                None
            }
        } else {
            None
        };
        if let Some(hit) = crossing {
            tau0 = Some(hit);
            if !cfg.unstopped {
                x[0] = 0.0;
                frozen = true;
                if let Some(tr) = trajectory.as_mut() {
                    tr.push((t, x.clone()));
                }
                continue;
            }
        }
        std::mem::swap(&mut x, &mut next);
        let r = norm(&x);
        sup = sup.max(r);
        if r <= cfg.hit_eps && tau0.is_none() {
            tau0 = Some(t);
            frozen = !cfg.unstopped;
        }
        if let Some(tr) = trajectory.as_mut() {
            if (k + 1) % stride == 0 || frozen {
                tr.push((t, x.clone()));
            }
        }
    }
    let terminal = norm(&x);
    out(sup, tau0, terminal, samples, false, false, trajectory)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Proportion {
    pub count: usize,
    pub total: usize,
    pub estimate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

pub fn wilson(count: usize, total: usize) -> Proportion {
    if total == 0 {
        return Proportion {
            count,
            total,
            estimate: f64::NAN,
            wilson_low: 0.0,
            wilson_high: 1.0,
        };
    }
    let nf = total as f64;
    let p = count as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    Proportion {
        count,
        total,
        estimate: p,
        wilson_low: if count == 0 {
            0.0
        } else {
            (centre - half).max(0.0)
        },
        wilson_high: if count == total {
            1.0
        } else {
            (centre + half).min(1.0)
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exceedance {
    pub eta: f64,
    pub probability: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Envelope {
    pub eps: f64,
    /// Quantile of `|x(t)|` at level `1 − ε` for each report time.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathStats {
    pub x0: Vec<f64>,
    pub n_paths: usize,
    pub completed: usize,
    pub failed: usize,
    pub exploded: usize,
    pub dt: f64,
    pub horizon: f64,
    pub hit_eps: f64,
    pub stopped: bool,
    pub crossing_detection: bool,
    pub seed: u64,
    pub exceedance: Vec<Exceedance>,
    /// `P[τ0 ≤ T]`
    pub hit_by_horizon: Proportion,
    pub times: Vec<f64>,
    /// Empirical `P[τ0 ≤ t]` at each report time.
    pub tau0_cdf: Vec<f64>,
    /// `(level, quantile)` of `|x(T∧τ0)|`.
    pub terminal_quantiles: Vec<(f64, f64)>,
    pub envelopes: Vec<Envelope>,
    #[serde(skip)]
    pub trajectories: Vec<Vec<(f64, Vec<f64>)>>,
}

/// Nearest-rank quantile of sorted data.
fn quantile(sorted: &[f64], level: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (level * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub const TERMINAL_LEVELS: [f64; 5] = [0.5, 0.9, 0.95, 0.99, 1.0];

pub fn simulate(sys: &SdeSystem, x0: &[f64], cfg: &SimConfig) -> Result<PathStats> {
    cfg.validate()?;
    sys.check_point(x0)?;
    let report = cfg.report_steps();
    let outcomes: Vec<PathOutcome> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| simulate_path(sys, x0, cfg, i as u64, &report, i < cfg.keep_paths))
        .collect();

    let ok: Vec<&PathOutcome> = outcomes.iter().filter(|o| !o.failed).collect();
    let completed = ok.len();
    let exceedance = cfg
        .thresholds
        .iter()
        .map(|&eta| Exceedance {
            eta,
            probability: wilson(ok.iter().filter(|o| o.sup > eta).count(), completed),
        })
        .collect();
    let horizon = cfg.steps() as f64 * cfg.dt;
    let times: Vec<f64> = report.iter().map(|&k| k as f64 * cfg.dt).collect();
    let tau0_cdf = times
        .iter()
        .map(|&t| {
            let hits = ok.iter().filter(|o| o.tau0.is_some_and(|h| h <= t)).count();
            if completed == 0 {
                f64::NAN
            } else {
                hits as f64 / completed as f64
            }
        })
        .collect();
    let hit_by_horizon = wilson(
        ok.iter()
            .filter(|o| o.tau0.is_some_and(|h| h <= horizon))
            .count(),
        completed,
    );
    let mut terminal: Vec<f64> = ok.iter().map(|o| o.terminal).collect();
    terminal.sort_by(f64::total_cmp);
    let terminal_quantiles = TERMINAL_LEVELS
        .iter()
        .map(|&q| (q, quantile(&terminal, q)))
        .collect();
    let envelopes = cfg
        .envelope_eps
        .iter()
        .map(|&eps| Envelope {
            eps,
            values: (0..report.len())
                .map(|j| {
                    let mut col: Vec<f64> = ok
                        .iter()
                        .map(|o| o.samples.get(j).copied().unwrap_or(f64::INFINITY))
                        .collect();
                    col.sort_by(f64::total_cmp);
                    quantile(&col, 1.0 - eps)
                })
                .collect(),
        })
        .collect();
    Ok(PathStats {
        x0: x0.to_vec(),
        n_paths: cfg.n_paths,
        completed,
        failed: cfg.n_paths - completed,
        exploded: ok.iter().filter(|o| o.exploded).count(),
        dt: cfg.dt,
        horizon,
        hit_eps: cfg.hit_eps,
        stopped: !cfg.unstopped,
        crossing_detection: cfg.crossing_detection,
        seed: cfg.seed,
        exceedance,
        hit_by_horizon,
        times,
        tau0_cdf,
        terminal_quantiles,
        envelopes,
        trajectories: outcomes.into_iter().filter_map(|o| o.trajectory).collect(),
    })
}

impl PathStats {
    /// `t, tau0_cdf, q_<1−ε>…` rows.
    pub fn timeseries_csv(&self) -> String {
        let mut header = vec!["t".to_string(), "tau0_cdf".to_string()];
        header.extend(self.envelopes.iter().map(|e| format!("q{}", 1.0 - e.eps)));
        let mut out = header.join(",") + "\n";
        for (j, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:.16e}"), format!("{:.16e}", self.tau0_cdf[j])];
            row.extend(
                self.envelopes
                    .iter()
                    .map(|e| format!("{:.16e}", e.values[j])),
            );
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// `path, t, x1…xn` rows of the retained trajectories.
    pub fn paths_csv(&self) -> String {
        let n = self.x0.len();
        let mut header = vec!["path".to_string(), "t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        let mut out = header.join(",") + "\n";
        for (p, tr) in self.trajectories.iter().enumerate() {
            for (t, x) in tr {
                let mut row = vec![p.to_string(), format!("{t:.16e}")];
                row.extend(x.iter().map(|v| format!("{v:.16e}")));
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChebyshevReport {
    pub x0: Vec<f64>,
    pub eta: f64,
    pub v_x0: f64,
    /// Infimum of the candidate on `|x| = η`.
    pub v_eta: f64,
    pub bound: f64,
    pub slack: f64,
    pub exceedance: Proportion,
    pub passed: bool,
    /// The candidate's Lyapunov property is taken on trust from the caller.
    pub candidate_assumed_slf: bool,
    pub horizon: f64,
}

/// `P[sup |x(t∧τ0)| > η] ≤ V(x0) / inf_{|x|=η} V`, checked with the upper
/// Wilson limit and an absolute slack of 0.01.
pub fn check_chebyshev_bound(
    sys: &SdeSystem,
    c: &Candidate,
    x0: &[f64],
    eta: f64,
    cfg: &SimConfig,
) -> Result<ChebyshevReport> {
    if c.dim() != sys.n {
        return Err(Error::DimensionMismatch {
            expected: sys.n,
            got: c.dim(),
        });
    }
    let mut cfg = cfg.clone();
    cfg.thresholds = vec![eta];
    cfg.unstopped = false;
    let stats = simulate(sys, x0, &cfg)?;
    let v_x0 = c.evaluate(x0);
    let v_eta = c.sphere_infimum(eta);
    let bound = v_x0 / v_eta;
    let slack = 0.01;
    let exceedance = stats.exceedance[0].probability.clone();
    Ok(ChebyshevReport {
        x0: x0.to_vec(),
        eta,
        v_x0,
        v_eta,
        bound,
        slack,
        passed: exceedance.wilson_high <= bound + slack,
        exceedance,
        candidate_assumed_slf: true,
        horizon: stats.horizon,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileRow {
    pub x0: Vec<f64>,
    pub exceedance: Vec<Proportion>,
    pub terminal_quantiles: Vec<(f64, f64)>,
    pub hit_by_horizon: Proportion,
}

#[derive(Debug, Clone, Serialize)]
pub struct Sensitivity {
    pub hit_eps: f64,
    /// `exceedance[x0][η]` frequencies.
    pub exceedance: Vec<Vec<f64>>,
    pub hit_by_horizon: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityProfile {
    pub etas: Vec<f64>,
    pub rows: Vec<ProfileRow>,
    /// Per η: frequencies never increase as `|x0|` shrinks.
    pub nonincreasing: Vec<bool>,
    /// Per η: frequencies strictly decrease as `|x0|` shrinks.
    pub strictly_decreasing: Vec<bool>,
    pub horizon: f64,
    pub sensitivity: Vec<Sensitivity>,
}

/// Exceedance table over initial states and levels with common random
/// numbers (every row reuses the same path streams).
pub fn estimate_stability_profile(
    sys: &SdeSystem,
    x0_list: &[Vec<f64>],
    eta_list: &[f64],
    cfg: &SimConfig,
    hit_eps_sensitivity: bool,
) -> Result<StabilityProfile> {
    let mut cfg = cfg.clone();
    cfg.thresholds = eta_list.to_vec();
    let run = |cfg: &SimConfig| -> Result<Vec<PathStats>> {
        x0_list.iter().map(|x0| simulate(sys, x0, cfg)).collect()
    };
    let stats = run(&cfg)?;
    let rows: Vec<ProfileRow> = stats
        .iter()
        .map(|s| ProfileRow {
            x0: s.x0.clone(),
            exceedance: s.exceedance.iter().map(|e| e.probability.clone()).collect(),
            terminal_quantiles: s.terminal_quantiles.clone(),
            hit_by_horizon: s.hit_by_horizon.clone(),
        })
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| norm(&rows[b].x0).total_cmp(&norm(&rows[a].x0)));
    let column = |j: usize| -> Vec<f64> {
        order
            .iter()
            .map(|&i| rows[i].exceedance[j].estimate)
            .collect()
    };
    let nonincreasing = (0..eta_list.len())
        .map(|j| column(j).windows(2).all(|w| w[1] <= w[0]))
        .collect();
    let strictly_decreasing = (0..eta_list.len())
        .map(|j| column(j).windows(2).all(|w| w[1] < w[0]))
        .collect();
    let mut sensitivity = Vec::new();
    if hit_eps_sensitivity {
        for eps in [1e-3, 1e-4, 1e-5] {
            let mut c = cfg.clone();
            c.hit_eps = eps;
            let st = run(&c)?;
            sensitivity.push(Sensitivity {
                hit_eps: eps,
                exceedance: st
                    .iter()
                    .map(|s| {
                        s.exceedance
                            .iter()
                            .map(|e| e.probability.estimate)
                            .collect()
                    })
                    .collect(),
                hit_by_horizon: st.iter().map(|s| s.hit_by_horizon.estimate).collect(),
            });
        }
    }
    Ok(StabilityProfile {
        etas: eta_list.to_vec(),
        rows,
        nonincreasing,
        strictly_decreasing,
        horizon: stats.first().map_or(cfg.horizon, |s| s.horizon),
        sensitivity,
    })
}
