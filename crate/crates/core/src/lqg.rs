//! LQ regulator for `dx = (Ax + Bu) dt + Σ_k G_k dw_k` and the non-smooth
//! Lyapunov certificate in the eigen-coordinates of the Riccati solution.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::Candidate;
use crate::error::{Error, Result};
use crate::expr::sgn;
use crate::generator::apply_generator;
use crate::json;
use crate::linalg::{is_hurwitz, jacobi_eigen, solve_lyapunov, spectral_abscissa};
use crate::sde::{classify_origin, OriginClass, SdeSystem};

const MAX_NEWTON: usize = 100;
const MAX_HOMOTOPY: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqgProblem {
    #[serde(rename = "A", with = "json::matrix")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "json::matrix")]
    pub b: DMatrix<f64>,
    #[serde(rename = "Q", with = "json::matrix")]
    pub q: DMatrix<f64>,
    #[serde(rename = "R", with = "json::matrix")]
    pub r: DMatrix<f64>,
    #[serde(rename = "G", with = "json::matrix")]
    pub g: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiccatiSolution {
    #[serde(rename = "P", with = "json::matrix")]
    pub p: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Largest real part of the closed-loop spectrum.
    pub closed_loop_abscissa: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralTransform {
    #[serde(rename = "T", with = "json::matrix")]
    pub t: DMatrix<f64>,
    pub pbar: Vec<f64>,
}

fn square(m: &DMatrix<f64>, what: &str, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "{what} must be {n}×{n}, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn symmetric_pd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::InvalidInput(format!("{what} is not symmetric")));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(what.into()));
    }
    Ok(())
}

impl LqgProblem {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        square(&self.a, "A", n)?;
        square(&self.q, "Q", n)?;
        let m = self.b.ncols();
        if self.b.nrows() != n {
            return Err(Error::InvalidInput(format!("B must have {n} rows")));
        }
        square(&self.r, "R", m)?;
        if self.g.nrows() != n {
            return Err(Error::InvalidInput(format!("G must have {n} rows")));
        }
        symmetric_pd(&self.q, "Q")?;
        symmetric_pd(&self.r, "R")?;
        Ok(())
    }

    fn r_inv(&self) -> Result<DMatrix<f64>> {
        self.r
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::NotPositiveDefinite("R".into()))
    }

    /// `B R⁻¹ Bᵀ`
    fn s_matrix(&self) -> Result<DMatrix<f64>> {
        Ok(&self.b * self.r_inv()? * self.b.transpose())
    }

    pub fn care_residual(&self, p: &DMatrix<f64>) -> Result<f64> {
        let s = self.s_matrix()?;
        Ok((self.a.transpose() * p + p * &self.a - p * s * p + &self.q).norm())
    }
}

/// Newton–Kleinman from a stabilizing gain for `A − βI`, moving the shift
/// towards zero until the gain stabilizes `A` itself.
fn newton_kleinman(
    prob: &LqgProblem,
    shift: f64,
    mut k: DMatrix<f64>,
) -> Result<(DMatrix<f64>, usize, f64)> {
    let n = prob.n();
    let r_inv = prob.r_inv()?;
    let a = &prob.a - DMatrix::<f64>::identity(n, n) * shift;
    let s = prob.s_matrix()?;
    let mut p_prev: Option<DMatrix<f64>> = None;
    let mut residual = f64::INFINITY;
    // after the tolerance is met, a few more steps while the residual keeps halving
    let mut polish: Option<(DMatrix<f64>, usize, f64)> = None;
    for it in 1..=MAX_NEWTON {
        let ak = &a - &prob.b * &k;
        let c = &prob.q + k.transpose() * &prob.r * &k;
        let p = solve_lyapunov(&ak, &c)?;
        residual = (a.transpose() * &p + &p * &a - &p * &s * &p + &prob.q).norm();
        let pn = p.norm();
        let stalled = p_prev
            .as_ref()
            .is_some_and(|q| (&p - q).norm() <= 1e-15 * pn.max(1.0));
        k = &r_inv * prob.b.transpose() * &p;
        if !residual.is_finite() {
            break;
        }
        if let Some((best, best_it, best_res)) = polish.take() {
            if !(residual < 0.5 * best_res) || it >= best_it + 3 {
                return Ok(if residual < best_res {
                    (p, it, residual)
                } else {
                    (best, best_it, best_res)
                });
            }
            polish = Some((p.clone(), it, residual));
        } else if residual < 1e-10 * (1.0 + pn) {
            polish = Some((p.clone(), it, residual));
        }
        if stalled {
            return Ok(polish.unwrap_or((p, it, residual)));
        }
        p_prev = Some(p);
    }
    if let Some(done) = polish {
        return Ok(done);
    }
    Err(Error::RiccatiDivergence {
        iterations: MAX_NEWTON,
        residual,
    })
}

pub fn solve_care(prob: &LqgProblem) -> Result<RiccatiSolution> {
    prob.validate()?;
    let n = prob.n();
    let m = prob.b.ncols();
    let r_inv = prob.r_inv()?;
    let mut k = DMatrix::zeros(m, n);
    let mut total = 0;
    if !is_hurwitz(&prob.a) {
        let mut shift = spectral_abscissa(&prob.a).max(0.0) + 1.0;
        let mut stabilized = false;
        for _ in 0..MAX_HOMOTOPY {
            let (p, it, _) = newton_kleinman(prob, shift, k.clone())?;
            total += it;
            k = &r_inv * prob.b.transpose() * &p;
            let alpha = spectral_abscissa(&(&prob.a - &prob.b * &k));
            if alpha < 0.0 {
                stabilized = true;
                break;
            }
            let next = 0.5 * (alpha + shift);
            if shift - next <= 1e-9 * (1.0 + alpha.abs()) {
                break;
            }
            shift = next;
        }
        if !stabilized {
            return Err(Error::Unstabilizable(format!(
                "closed loop keeps an eigenvalue with real part ≥ 0 (shift stalled at {shift:e})"
            )));
        }
    }
    let (p, it, _) = newton_kleinman(prob, 0.0, k)?;
    total += it;
    let p = (&p + p.transpose()) * 0.5;
    let residual = prob.care_residual(&p)?;
    let pn = p.norm();
    if !(residual < 1e-8 * (1.0 + pn)) {
        return Err(Error::RiccatiDivergence {
            iterations: total,
            residual,
        });
    }
    let gain = &r_inv * prob.b.transpose() * &p;
    let closed_loop_abscissa = spectral_abscissa(&(&prob.a - &prob.b * gain));
    if !(closed_loop_abscissa < 0.0) {
        return Err(Error::Unstabilizable(format!(
            "Riccati solution does not stabilize (abscissa {closed_loop_abscissa:e})"
        )));
    }
    Ok(RiccatiSolution {
        p,
        residual,
        iterations: total,
        closed_loop_abscissa,
    })
}

/// `A − B R⁻¹ Bᵀ P`
pub fn closed_loop_matrix(prob: &LqgProblem, sol: &RiccatiSolution) -> Result<DMatrix<f64>> {
    Ok(&prob.a - prob.s_matrix()? * &sol.p)
}

pub fn closed_loop(prob: &LqgProblem, sol: &RiccatiSolution) -> Result<SdeSystem> {
    SdeSystem::linear(
        &closed_loop_matrix(prob, sol)?,
        &prob.g,
        Some("lqg_closed_loop".into()),
    )
}

pub fn spectral_transform(sol: &RiccatiSolution) -> Result<SpectralTransform> {
    let e = jacobi_eigen(&sol.p)?;
    if let Some(bad) = e.values.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::NotPositiveDefinite(format!(
            "P has eigenvalue {bad}"
        )));
    }
    let n = sol.p.nrows();
    let t = e.vectors;
    let ortho = (t.transpose() * &t - DMatrix::<f64>::identity(n, n)).norm();
    let d = DMatrix::from_diagonal(&DVector::from_vec(e.values.clone()));
    let eig = (&sol.p * &t - &t * d).norm();
    if !(ortho < 1e-10 && eig < 1e-8 * (1.0 + sol.p.norm())) {
        return Err(Error::EigenConvergence(0));
    }
    Ok(SpectralTransform { t, pbar: e.values })
}

/// The closed loop in eigen-coordinates `z = Tᵀx`, with its drift matrix
/// `TᵀA_LQ T` and noise matrix `TᵀG`.
pub fn transformed_system(
    prob: &LqgProblem,
    sol: &RiccatiSolution,
    tr: &SpectralTransform,
) -> Result<(SdeSystem, DMatrix<f64>, DMatrix<f64>)> {
    let n = prob.n();
    let diag = DMatrix::from_diagonal(&DVector::from_vec(tr.pbar.clone()));
    let mismatch = (tr.t.transpose() * &sol.p * &tr.t - diag).norm();
    if !(mismatch < 1e-8 * (1.0 + sol.p.norm())) {
        return Err(Error::InvalidInput(format!(
            "TᵀPT is not diagonal (mismatch {mismatch:e})"
        )));
    }
    let abar = tr.t.transpose() * closed_loop_matrix(prob, sol)? * &tr.t;
    let gbar = tr.t.transpose() * &prob.g;
    debug_assert_eq!(abar.nrows(), n);
    let sys = SdeSystem::linear(&abar, &gbar, Some("lqg_eigen_coordinates".into()))?;
    Ok((sys, abar, gbar))
}

pub fn vlq_value(sol: &RiccatiSolution, x: &[f64]) -> f64 {
    let v = DVector::from_column_slice(x);
    v.dot(&(&sol.p * &v))
}

/// `y(z)_i = sgn(z_i) |z_i|^{1/2}`
pub fn y_of(z: &[f64]) -> DVector<f64> {
    DVector::from_iterator(z.len(), z.iter().map(|&v| sgn(v) * v.abs().sqrt()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LqgGrid {
    pub half_width: f64,
    pub per_axis: usize,
    /// Uniform random points in the box, all off the kink set.
    pub random_points: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for LqgGrid {
    fn default() -> Self {
        LqgGrid {
            half_width: 2.0,
            per_axis: 9,
            random_points: 1000,
            seed: 1,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LqgCertificate {
    pub problem: LqgProblem,
    pub riccati: RiccatiSolution,
    pub transform: SpectralTransform,
    #[serde(rename = "A_bar", with = "json::matrix")]
    pub abar: DMatrix<f64>,
    #[serde(rename = "M", with = "json::matrix")]
    pub m: DMatrix<f64>,
    pub m_min_eigenvalue: f64,
    pub m_positive_definite: bool,
    pub smooth_points: usize,
    /// Largest `|ℒV̄(z) + ½ y(z)ᵀ M y(z)|` over smooth-locus points.
    pub identity_max_residual: f64,
    /// Largest `ℒV̄(z)` over smooth-locus points; negative is required.
    pub max_generator: f64,
    pub kink_points: usize,
    /// Smallest `−ℒV̄` at kink points using canonical witnesses.
    pub min_kink_margin: f64,
    pub fcip_c: f64,
    /// `Σ_k G_kᵀ P G_k`
    pub fcip_g: f64,
    pub fcip_residual: f64,
    /// `ℒ(xᵀPx)` at the origin; positive whenever there is noise.
    pub vlq_generator_at_origin: f64,
    pub origin: OriginClass,
    /// Margins only: `M ≻ 0`, `ℒV̄ < 0` on the smooth locus and witness
    /// margins at kinks.
    pub strict_slf_evidence: bool,
    /// All checks including the closed-form generator identity.
    pub nas: bool,
    pub asip_eligible: bool,
    pub notes: Vec<String>,
}

fn grid_points(n: usize, grid: &LqgGrid) -> Vec<Vec<f64>> {
    let m = grid.per_axis.max(2);
    let axis: Vec<f64> = (0..m)
        .map(|k| -grid.half_width + 2.0 * grid.half_width * k as f64 / (m - 1) as f64)
        .collect();
    let mut pts = vec![vec![]];
    for _ in 0..n {
        pts = pts
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
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    for _ in 0..grid.random_points {
        pts.push(
            (0..n)
                .map(|_| loop {
                    let v = rng.random_range(-grid.half_width..grid.half_width);
                    if v != 0.0 {
                        break v;
                    }
                })
                .collect(),
        );
    }
    // kink slices: each box point with one coordinate zeroed
    let base: Vec<Vec<f64>> = pts
        .iter()
        .take(grid.random_points.min(200))
        .cloned()
        .collect();
    for p in base {
        for i in 0..n {
            let mut q = p.clone();
            q[i] = 0.0;
            pts.push(q);
        }
    }
    pts.push(vec![0.0; n]);
    pts
}

pub fn certify_nas(prob: &LqgProblem, grid: &LqgGrid) -> Result<LqgCertificate> {
    let sol = solve_care(prob)?;
    let tr = spectral_transform(&sol)?;
    let (zsys, abar, _) = transformed_system(prob, &sol, &tr)?;
    let n = prob.n();
    let s = prob.s_matrix()?;
    let core = &prob.q + &sol.p * &s * &sol.p;
    let m = tr.t.transpose() * &core * &tr.t;
    let m = (&m + m.transpose()) * 0.5;
    let m_positive_definite = m.clone().cholesky().is_some();
    let m_min_eigenvalue = jacobi_eigen(&m)?.values[0];
    let vbar = Candidate::abs_sum(tr.pbar.clone())?;

    let points = grid_points(n, grid);
    let (smooth, kinks): (Vec<_>, Vec<_>) = points.into_iter().partition(|z| vbar.smooth_locus(z));
    let smooth_eval = smooth
        .par_iter()
        .map(|z| {
            let e = vbar.jet_at(z)?;
            let lv = apply_generator(&zsys, z, &e.p, &e.x)?.value;
            let y = y_of(z);
            let closed = -0.5 * y.dot(&(&m * &y));
            Ok((lv, (lv - closed).abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    let kink_eval = kinks
        .par_iter()
        .map(|z| {
            let e = vbar.canonical_witness(z)?;
            Ok(-apply_generator(&zsys, z, &e.p, &e.x)?.value)
        })
        .collect::<Result<Vec<_>>>()?;
    let max_generator = smooth_eval
        .iter()
        .map(|r| r.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let identity_max_residual = smooth_eval.iter().map(|r| r.1).fold(0.0, f64::max);
    let min_kink_margin = kink_eval.iter().copied().fold(f64::INFINITY, f64::min);

    let a_lq = closed_loop_matrix(prob, &sol)?;
    let pa = &sol.p * &a_lq;
    let fcip_residual = (&pa + pa.transpose() + &core).norm();
    let fcip_g = (prob.g.transpose() * &sol.p * &prob.g).trace();
    let xsys = closed_loop(prob, &sol)?;
    let origin = classify_origin(&xsys, 1e-12)?;
    let fcip_ok = fcip_residual < 1e-8 * (1.0 + core.norm());

    let margins_ok = max_generator < 0.0 && min_kink_margin >= -grid.tol;
    let strict_slf_evidence = m_positive_definite && margins_ok;
    let identity_ok = identity_max_residual < 1e-8;
    let nas = strict_slf_evidence && identity_ok && fcip_ok;
    let mut notes = Vec::new();
    if !identity_ok {
        notes.push(format!(
            "generator of V̄ differs from −½yᵀMy by up to {identity_max_residual:e}; \
             the closed form requires the eigen-coordinate drift to commute with diag(|z|)"
        ));
    }
    if max_generator >= 0.0 {
        notes.push(format!(
            "ℒV̄ reaches {max_generator:e} ≥ 0 on the smooth locus"
        ));
    }
    if n >= 2 && prob.g.amax() > 0.0 {
        notes.push(
            "additive noise in dimension ≥ 2: hitting the origin exactly is not probed; \
             Monte Carlo evidence is descriptive only"
                .into(),
        );
    }
    Ok(LqgCertificate {
        problem: prob.clone(),
        transform: tr,
        abar,
        m,
        m_min_eigenvalue,
        m_positive_definite,
        smooth_points: smooth.len(),
        identity_max_residual,
        max_generator,
        kink_points: kinks.len(),
        min_kink_margin,
        fcip_c: 0.0,
        fcip_g,
        fcip_residual,
        vlq_generator_at_origin: fcip_g,
        origin,
        strict_slf_evidence,
        nas,
        asip_eligible: prob.g.iter().all(|&v| v == 0.0),
        notes,
        riccati: sol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, b: f64, q: f64, r: f64, g: f64) -> LqgProblem {
        let m = |v| DMatrix::from_element(1, 1, v);
        LqgProblem {
            a: m(a),
            b: m(b),
            q: m(q),
            r: m(r),
            g: m(g),
        }
    }

    fn identity_problem(n: usize, noise: f64) -> LqgProblem {
        LqgProblem {
            a: DMatrix::zeros(n, n),
            b: DMatrix::identity(n, n),
            q: DMatrix::identity(n, n),
            r: DMatrix::identity(n, n),
            g: DMatrix::identity(n, n) * noise,
        }
    }

    #[test]
    fn identity_riccati() {
        let sol = solve_care(&identity_problem(3, 1.0)).unwrap();
        assert!((&sol.p - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn scalar_riccati_matches_quadratic_formula() {
        // 2P − P² + 1 = 0, positive root
        let want = 1.0 + 2f64.sqrt();
        let prob = scalar(1.0, 1.0, 1.0, 1.0, 1.0);
        let sol = solve_care(&prob).unwrap();
        assert!((sol.p[(0, 0)] - want).abs() < 1e-10);
        let sys = closed_loop(&prob, &sol).unwrap();
        let f = sys.drift_at(&[1.0]).unwrap()[0];
        assert!((f + 2f64.sqrt()).abs() < 1e-10);
        assert!((vlq_value(&sol, &[1.0]) - 2.41421356).abs() < 1e-8);
        assert_eq!(vlq_value(&sol, &[0.0]), 0.0);
    }

    #[test]
    fn unstabilizable() {
        assert!(matches!(
            solve_care(&scalar(0.0, 0.0, 1.0, 1.0, 1.0)),
            Err(Error::Unstabilizable(_))
        ));
        let prob = LqgProblem {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(1, 1),
            g: DMatrix::zeros(2, 1),
        };
        assert!(matches!(solve_care(&prob), Err(Error::Unstabilizable(_))));
    }

    #[test]
    fn unstable_but_controllable() {
        let prob = LqgProblem {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.5]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            q: DMatrix::identity(2, 2),
            r: DMatrix::from_element(1, 1, 0.1),
            g: DMatrix::identity(2, 2),
        };
        let sol = solve_care(&prob).unwrap();
        assert!(sol.residual < 1e-8 * (1.0 + sol.p.norm()));
        assert!(sol.closed_loop_abscissa < 0.0);
    }

    #[test]
    fn eigen_transform_examples() {
        let sol = |p: DMatrix<f64>| RiccatiSolution {
            p,
            residual: 0.0,
            iterations: 0,
            closed_loop_abscissa: -1.0,
        };
        let tr =
            spectral_transform(&sol(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]))).unwrap();
        assert_eq!(tr.pbar, vec![2.0, 3.0]);
        assert_eq!(tr.t, DMatrix::<f64>::identity(2, 2));
        let tr =
            spectral_transform(&sol(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]))).unwrap();
        assert!((tr.pbar[0] - 1.0).abs() < 1e-14 && (tr.pbar[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn transformed_matches_direct_product() {
        let prob = LqgProblem {
            a: DMatrix::from_row_slice(2, 2, &[0.3, 1.0, -0.5, 0.2]),
            b: DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            q: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            r: DMatrix::from_element(1, 1, 1.0),
            g: DMatrix::from_row_slice(2, 1, &[0.2, 0.1]),
        };
        let sol = solve_care(&prob).unwrap();
        let tr = spectral_transform(&sol).unwrap();
        let (sys, abar, gbar) = transformed_system(&prob, &sol, &tr).unwrap();
        let a_lq = closed_loop_matrix(&prob, &sol).unwrap();
        let direct = tr.t.transpose() * &a_lq * &tr.t;
        assert!((&abar - direct).amax() < 1e-14);
        let z = [0.7, -1.1];
        let f = sys.drift_at(&z).unwrap();
        let want = &abar * DVector::from_column_slice(&z);
        assert!((f[0] - want[0]).abs() < 1e-12 && (f[1] - want[1]).abs() < 1e-12);
        assert_eq!(
            sys.diffusion_at(&z).unwrap()[0],
            gbar.column(0).iter().copied().collect::<Vec<_>>()
        );
    }

    #[test]
    fn identity_problem_certificate() {
        let cert = certify_nas(&identity_problem(2, 1.0), &LqgGrid::default()).unwrap();
        assert!((&cert.m - DMatrix::<f64>::identity(2, 2) * 2.0).amax() < 1e-12);
        assert!(cert.identity_max_residual < 1e-12);
        assert!(cert.nas);
        assert!(!cert.asip_eligible);
        assert_eq!(cert.origin, OriginClass::NoisyEquilibrium);
        assert!((cert.fcip_g - 2.0).abs() < 1e-12);
        assert!(cert.vlq_generator_at_origin > 0.0);
        // margins are −(|z1| + |z2|)
        let z = [0.5, -1.5];
        let zsys = SdeSystem::linear(&cert.abar, &DMatrix::identity(2, 2), None).unwrap();
        let vbar = Candidate::abs_sum(cert.transform.pbar.clone()).unwrap();
        let e = vbar.jet_at(&z).unwrap();
        let lv = apply_generator(&zsys, &z, &e.p, &e.x).unwrap().value;
        assert!((lv + 2.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_and_noise_free_certificates() {
        let cert = certify_nas(&scalar(1.0, 1.0, 1.0, 1.0, 1.0), &LqgGrid::default()).unwrap();
        assert!(cert.nas);
        assert_eq!(cert.transform.t[(0, 0)], 1.0);
        let quiet = certify_nas(&identity_problem(2, 0.0), &LqgGrid::default()).unwrap();
        assert!(quiet.asip_eligible && quiet.nas);
        assert_eq!(quiet.origin, OriginClass::AlmostSureEquilibrium);
    }

    #[test]
    fn rejects_bad_weights() {
        let mut prob = identity_problem(2, 1.0);
        prob.q[(0, 0)] = -1.0;
        assert!(matches!(
            solve_care(&prob),
            Err(Error::NotPositiveDefinite(_))
        ));
    }
}
