//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use slfcert::candidates::{Candidate, MembershipTest, SemijetElement};
use slfcert::checker::{
    check_plain_supersolution, check_weak_supersolution, classify, Classification, Grid, GridSpec,
    PlainStatus, DEFAULT_TOL,
};
use slfcert::connector::{
    build_smoothed, fcip_certificate, fit_connector, solve_connector, FcipGrid,
};
use slfcert::expr::{parse, Expr};
use slfcert::generator::apply_generator_smooth;
use slfcert::lqg::{certify_nas, solve_care, LqgGrid, LqgProblem};
use slfcert::montecarlo::{check_chebyshev_bound, simulate, SimConfig};
use slfcert::sde::builtin_example;
use slfcert::{json, linalg};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// Elements produced while checking criteria 1–3, re-checked in criterion 10.
type Emitted = Vec<(Candidate, Vec<f64>, SemijetElement)>;

/// Canonical witnesses at every kink point of the grid.
fn witnesses(c: &Candidate, grid: &Grid, out: &mut Emitted) {
    for x in grid.points.iter().filter(|x| !c.smooth_locus(x)) {
        out.push((c.clone(), x.clone(), c.canonical_witness(x).unwrap()));
    }
}

/// Adversarial elements the plain check tries at `x`, and the counterexample.
fn tried_at(c: &Candidate, x: &[f64], ce: Option<&SemijetElement>, out: &mut Emitted) {
    for e in c.adversarial_elements(x, 16).unwrap() {
        out.push((c.clone(), x.to_vec(), e));
    }
    if let Some(e) = ce {
        out.push((c.clone(), x.to_vec(), e.clone()));
    }
}

fn dichotomy(emitted: &mut Emitted) -> Outcome {
    let sys = builtin_example("ou_additive").unwrap();
    let v = Candidate::abs_sum(vec![1.0]).unwrap();
    let grid = Grid::build(&GridSpec::default(), 1).unwrap();
    let zero = Expr::Num(0.0);
    let weak = check_weak_supersolution(&sys, &v, &zero, &grid, DEFAULT_TOL).unwrap();
    let at_origin = weak
        .margin_records
        .iter()
        .find(|r| r.x == [0.0])
        .map(|r| r.margin);
    let plain = check_plain_supersolution(&sys, &v, &zero, &grid, DEFAULT_TOL).unwrap();
    let surrogate = apply_generator_smooth(&sys, &parse("x1^2", 1).unwrap(), &[0.0]).unwrap();
    witnesses(&v, &grid, emitted);
    let (ok_ce, detail) = match &plain.plain_supersolution {
        PlainStatus::Refuted(ce) => {
            tried_at(&v, &ce.x, Some(&ce.element), emitted);
            let p0 = ce.element.p[0];
            let xx = ce.element.x[(0, 0)];
            let ok = ce.x == [0.0]
                && p0 > -1.0
                && p0 < 1.0
                && xx > 0.0
                && (ce.margin + 0.5 * xx).abs() < 1e-12;
            (
                ok,
                format!("counterexample p0={p0} X={xx} margin={}", ce.margin),
            )
        }
        other => (false, format!("plain status {other:?}")),
    };
    let passed = weak.weak_supersolution
        && at_origin == Some(0.0)
        && ok_ce
        && (-surrogate.value + 1.0).abs() < 1e-12;
    outcome(
        passed,
        format!(
            "weak={} witness margin at 0 = {:?}; {detail}; -Lphi(0) for phi=x^2 = {}",
            weak.weak_supersolution, at_origin, -surrogate.value
        ),
    )
}

fn contrast(emitted: &mut Emitted) -> Outcome {
    let sys = builtin_example("geometric_half").unwrap();
    let v = Candidate::abs_sum(vec![1.0]).unwrap();
    let grid = Grid::build(&GridSpec::default(), 1).unwrap();
    let rate = parse("abs(x1)/2", 1).unwrap();
    let has_origin = grid.points.iter().any(|x| x == &[0.0]);
    let plain = check_plain_supersolution(&sys, &v, &rate, &grid, DEFAULT_TOL).unwrap();
    let cls = classify(&sys, &v, std::slice::from_ref(&rate), &grid, DEFAULT_TOL).unwrap();
    witnesses(&v, &grid, emitted);
    tried_at(&v, &[0.0], None, emitted);
    // every adversarial element at the origin has margin exactly zero
    let adv = v.adversarial_elements(&[0.0], 16).unwrap();
    let exact = adv.iter().all(|e| {
        let g = slfcert::generator::apply_generator(&sys, &[0.0], &e.p, &e.x).unwrap();
        -g.value - rate.eval(&[0.0]).unwrap() == 0.0
    });
    let holds = matches!(plain.plain_supersolution, PlainStatus::Holds);
    outcome(
        has_origin && holds && exact && cls.classification == Classification::StrictSlf,
        format!(
            "plain={:?} adversarial margins at 0 exactly zero={} ({} elements) classification={:?}",
            plain.plain_supersolution,
            exact,
            adv.len(),
            cls.classification
        ),
    )
}

fn chained(emitted: &mut Emitted) -> Outcome {
    let sys = builtin_example("chained3").unwrap();
    let v = Candidate::abs_sum(vec![1.0; 3]).unwrap();
    let grid = Grid::build(&GridSpec::default(), 3).unwrap();
    let rate = parse("abs(x1)+abs(x2)+abs(x3)", 3).unwrap();
    let cls = classify(&sys, &v, std::slice::from_ref(&rate), &grid, DEFAULT_TOL).unwrap();
    let worst = cls.worst.as_ref().map_or(f64::NAN, |w| w.margin);
    let full = check_plain_supersolution(&sys, &v, &rate, &grid, DEFAULT_TOL).unwrap();
    let slice = Grid::from_points(
        grid.points
            .iter()
            .filter(|x| x[0] == 0.0)
            .cloned()
            .collect(),
    );
    let on_slice = check_plain_supersolution(&sys, &v, &rate, &slice, DEFAULT_TOL).unwrap();
    witnesses(&v, &grid, emitted);
    let refuted_full = matches!(full.plain_supersolution, PlainStatus::Refuted(_));
    let (slice_ok, detail) = match &on_slice.plain_supersolution {
        PlainStatus::Refuted(ce) => {
            tried_at(&v, &ce.x, Some(&ce.element), emitted);
            // σ_1ᵀ X σ_1 with σ_1 = (1, 0, x2)
            let s1 = [1.0, 0.0, ce.x[1]];
            let quad: f64 = (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| s1[i] * ce.element.x[(i, j)] * s1[j])
                .sum();
            (
                ce.x[0] == 0.0 && quad > 0.0 && ce.margin < 0.0,
                format!(
                    "slice counterexample at {:?} sigma1'X sigma1={quad} margin={}",
                    ce.x, ce.margin
                ),
            )
        }
        other => (false, format!("slice status {other:?}")),
    };
    if let PlainStatus::Refuted(ce) = &full.plain_supersolution {
        tried_at(&v, &ce.x, Some(&ce.element), emitted);
    }
    outcome(
        cls.classification == Classification::StrictSlf
            && worst >= -1e-9
            && refuted_full
            && slice_ok,
        format!(
            "classification={:?} worst margin={worst:e} on {} points; full grid refuted={refuted_full}; {detail}",
            cls.classification, cls.grid_points
        ),
    )
}

fn connectors() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_res: f64 = 0.0;
    let mut worst_knot: f64 = 0.0;
    let mut non_monotone = 0;
    let mut solved = 0;
    let mut failures = Vec::new();
    for _ in 0..100 {
        let b: f64 = rng.random_range(f64::EPSILON..=1.0);
        let a = rng.random_range(0.0..b);
        let p: f64 = rng.random_range(1.0..=6.0);
        // inner κ/2 t² must stay below the outer value b^p/p at t = a
        let kappa = rng.random_range(0.0..1.0) * 2.0 * b.powf(p) / (p * a * a);
        let inner = parse(&format!("{} * x1^2", kappa / 2.0), 1).unwrap();
        let spec = match solve_connector(a, b, p, inner.clone()) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("a={a:.4} b={b:.4} p={p:.3}: {e}"));
                continue;
            }
        };
        solved += 1;
        worst_res = worst_res.max(spec.boundary_residual().unwrap());
        worst_knot = worst_knot.max(spec.knot_mismatch().unwrap());
        if fit_connector(a, b, p, inner).is_err() {
            non_monotone += 1;
        }
    }
    let mut worst_identity: f64 = 0.0;
    for (a, b, p, src) in [
        (0.1, 0.5, 2.0, "x1^2/2"),
        (0.5, 1.0, 2.0, "x1^2/2"),
        (0.05, 0.4, 4.0, "x1^4/4"),
    ] {
        let spec = fit_connector(a, b, p, parse(src, 1).unwrap()).unwrap();
        let k = p as usize;
        for (i, c) in spec.alpha.iter().enumerate() {
            let want = if i == k { 1.0 / p } else { 0.0 };
            worst_identity = worst_identity.max((c - want).abs());
        }
    }
    outcome(
        solved == 100 && worst_res < 1e-9 && worst_knot < 1e-8 && worst_identity < 1e-12,
        format!(
            "{solved} solved, max boundary residual {worst_res:e}, max knot mismatch {worst_knot:e}, \
             {non_monotone} rejected as non-monotone; identity coefficient error {worst_identity:e}{}",
            failures.first().map_or(String::new(), |f| format!("; {} failed, first {f}", failures.len()))
        ),
    )
}

fn fcip() -> Outcome {
    let sys = builtin_example("ou_additive").unwrap();
    let spec = fit_connector(0.5, 1.0, 2.0, parse("x1^2/2", 1).unwrap()).unwrap();
    let c = build_smoothed(&[2.0], vec![spec]).unwrap();
    let cert = fcip_certificate(&sys, &c, &FcipGrid::default()).unwrap();
    outcome(
        cert.c == 0.0
            && (cert.g - 0.5).abs() <= 1e-6
            && cert.case_a_max < 0.0
            && cert.grid.half_width >= 100.0
            && cert.verdict,
        format!(
            "c={} g={} case (a) max={:e} out to {} verdict={}",
            cert.c, cert.g, cert.case_a_max, cert.grid.half_width, cert.verdict
        ),
    )
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn random_problem(rng: &mut ChaCha8Rng, max_n: usize) -> LqgProblem {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=n);
    let d = rng.random_range(1..=n);
    let c = normal_matrix(rng, n, n);
    let h = normal_matrix(rng, m, m);
    LqgProblem {
        a: normal_matrix(rng, n, n),
        b: normal_matrix(rng, n, m),
        q: DMatrix::identity(n, n) + &c * c.transpose() / n as f64,
        r: DMatrix::identity(m, m) + &h * h.transpose() / m as f64,
        g: normal_matrix(rng, n, d),
    }
}

fn riccati() -> Outcome {
    let one = DMatrix::from_element(1, 1, 1.0);
    let scalar = LqgProblem {
        a: one.clone(),
        b: one.clone(),
        q: one.clone(),
        r: one.clone(),
        g: one,
    };
    let p = solve_care(&scalar).unwrap().p[(0, 0)];
    let scalar_err = (p - (1.0 + 2f64.sqrt())).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let prob = random_problem(&mut rng, 8);
        match solve_care(&prob) {
            Ok(sol) => {
                let rel = sol.residual / (1.0 + sol.p.norm());
                worst = worst.max(rel);
                let acl = &prob.a
                    - &prob.b
                        * prob.r.clone().cholesky().unwrap().inverse()
                        * prob.b.transpose()
                        * &sol.p;
                if !(rel < 1e-8 && linalg::is_hurwitz(&acl)) {
                    bad.push(k);
                }
            }
            Err(e) => {
                eprintln!("problem {k}: {e}");
                bad.push(k);
            }
        }
    }
    outcome(
        scalar_err < 1e-10 && bad.is_empty(),
        format!(
            "scalar error {scalar_err:e}; 50 random problems, worst relative residual {worst:e}, failures {bad:?}"
        ),
    )
}

fn generator_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lines = Vec::new();
    let mut all = true;
    for k in 0..10 {
        let prob = random_problem(&mut rng, 5);
        let cert = certify_nas(&prob, &LqgGrid::default()).unwrap();
        let ok = cert.smooth_points >= 1000
            && cert.identity_max_residual < 1e-8
            && cert.m_positive_definite
            && cert.nas;
        all &= ok;
        lines.push(format!(
            "#{k} n={} residual={:.2e} maxLV={:.2e} M>0={} NAS={}",
            prob.n(),
            cert.identity_max_residual,
            cert.max_generator,
            cert.m_positive_definite,
            cert.nas
        ));
    }
    outcome(all, lines.join("; "))
}

fn monte_carlo() -> Outcome {
    let sys = builtin_example("ou_additive").unwrap();
    let v = Candidate::abs_sum(vec![1.0]).unwrap();
    let cfg = SimConfig {
        dt: 1e-3,
        horizon: 20.0,
        n_paths: 100_000,
        seed: 8,
        hit_eps: 1e-4,
        envelope_eps: vec![],
        ..SimConfig::default()
    };
    let bound = check_chebyshev_bound(&sys, &v, &[0.1], 1.0, &cfg).unwrap();
    let from_one = simulate(&sys, &[1.0], &cfg).unwrap();
    let hit = from_one.hit_by_horizon.estimate;
    // P[τ0 ≤ T | x0] = erfc(x0 / √(2s)), s = (e^{2T} − 1)/2
    // erfc(z) = 1 − 2z/√π + O(z³) and z ≈ 2e-9 here
    let s = ((2.0 * 20.0f64).exp() - 1.0) / 2.0;
    let z = 1.0 / (2.0 * s).sqrt();
    let reference = 1.0 - 2.0 * z / std::f64::consts::PI.sqrt();
    outcome(
        bound.exceedance.estimate <= 0.1 + 0.01 && bound.passed && hit >= 0.99,
        format!(
            "exceedance {:.5} (Wilson upper {:.5}) vs bound {} + 0.01; P[tau0<=20|x0=1] = {hit:.5} (reference {reference:.9})",
            bound.exceedance.estimate, bound.exceedance.wilson_high, bound.bound
        ),
    )
}

fn determinism() -> Outcome {
    let sys = builtin_example("chained3").unwrap();
    let cfg = SimConfig {
        dt: 1e-3,
        horizon: 1.0,
        n_paths: 2000,
        seed: 9,
        thresholds: vec![0.5, 1.0, 2.0],
        ..SimConfig::default()
    };
    let run = |threads: usize| -> String {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let stats = pool
            .install(|| simulate(&sys, &[0.3, -0.2, 0.1], &cfg))
            .unwrap();
        json::to_string(&stats).unwrap()
    };
    let outputs: Vec<String> = [1, 4, 16].iter().map(|&t| run(t)).collect();
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    outcome(
        same,
        format!(
            "{} bytes, identical across 1/4/16 threads: {same}",
            outputs[0].len()
        ),
    )
}

fn membership(emitted: &Emitted) -> Outcome {
    let test = MembershipTest {
        seed: 0xACCE97,
        ..MembershipTest::default()
    };
    let failures: Vec<String> = emitted
        .par_iter()
        .filter_map(|(c, x, e)| {
            let r = c.membership(x, e, &test);
            (!r.passed).then(|| {
                format!(
                    "{x:?} X={:?} worst={:?}",
                    e.x.diagonal().as_slice(),
                    r.worst
                )
            })
        })
        .collect();
    outcome(
        failures.is_empty(),
        format!(
            "{} elements checked, {} failed{}",
            emitted.len(),
            failures.len(),
            failures
                .first()
                .map_or(String::new(), |f| format!(", first: {f}"))
        ),
    )
}

fn main() {
    let mut emitted = Emitted::new();
    let limits = [
        1.0,
        1.0,
        5.0,
        2.0,
        2.0,
        10.0,
        30.0,
        120.0,
        f64::INFINITY,
        f64::INFINITY,
    ];
    let mut results: Vec<(Outcome, Duration)> = Vec::new();
    let mut timed = |f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        results.push((o, t.elapsed()));
    };
    timed(&mut || dichotomy(&mut emitted));
    timed(&mut || contrast(&mut emitted));
    timed(&mut || chained(&mut emitted));
    timed(&mut connectors);
    timed(&mut fcip);
    timed(&mut riccati);
    timed(&mut generator_identity);
    timed(&mut monte_carlo);
    timed(&mut determinism);
    timed(&mut || membership(&emitted));

    let mut failed = 0;
    for (i, ((o, elapsed), limit)) in results.iter().zip(limits).enumerate() {
        let secs = elapsed.as_secs_f64();
        let in_time = secs < limit;
        let pass = o.passed && in_time;
        if !pass {
            failed += 1;
        }
        let budget = if limit.is_finite() {
            format!(" (limit {limit} s)")
        } else {
            String::new()
        };
        println!(
            "criterion {:2}: {} [{secs:.2} s{budget}] {}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
