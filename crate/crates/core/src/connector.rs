//! C² smoothing of power-sum candidates and the forward-completeness
//! certificate built on the smoothed function.
//!
//! Each coordinate term `|t|^p / p` is replaced on `|t| < b` by a smooth
//! inner function `v` on `|t| < a` and a quintic connector
//! `c(t) = Σ_k α_k |t|^k` on `a ≤ |t| < b`, matched to second order at both
//! knots.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::Candidate;
use crate::error::{Error, Result};
use crate::expr::{self, sgn, Expr};
use crate::generator::apply_generator;
use crate::sde::SdeSystem;

/// Residual bound on the six boundary conditions.
pub const BOUNDARY_TOL: f64 = 1e-9;
const MONOTONE_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectorSpec {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    /// Inner function in the single variable `x1`.
    pub inner: Expr,
    pub alpha: [f64; 6],
}

/// Serialized connector: knots, optional exponent and inner function,
/// optional precomputed coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectorInput {
    pub a: f64,
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<[f64; 6]>,
}

impl ConnectorInput {
    pub fn resolve(&self, exponent: f64) -> Result<ConnectorSpec> {
        if let Some(p) = self.p {
            if p != exponent {
                return Err(Error::InvalidInput(format!(
                    "connector exponent {p} differs from the base exponent {exponent}"
                )));
            }
        }
        let inner = match &self.inner {
            Some(src) => expr::parse(src, 1)?,
            None => default_inner(self.a, exponent),
        };
        match self.alpha {
            None => fit_connector(self.a, self.b, exponent, inner),
            Some(alpha) => {
                let spec = ConnectorSpec {
                    a: self.a,
                    b: self.b,
                    p: exponent,
                    inner,
                    alpha,
                };
                spec.validate()?;
                Ok(spec)
            }
        }
    }
}

/// `(κ/2) x1²` with `κ = a^{p−2}`, matching the outer branch's curvature
/// scale at the inner knot.
pub fn default_inner(a: f64, p: f64) -> Expr {
    let kappa = a.powf(p - 2.0);
    expr::parse(&format!("{} * x1^2", kappa / 2.0), 1).expect("well-formed default inner")
}

fn poly(alpha: &[f64; 6], s: f64) -> (f64, f64, f64) {
    let mut v = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for k in (0..6).rev() {
        let kf = k as f64;
        v = v * s + alpha[k];
        if k >= 1 {
            d1 = d1 * s + kf * alpha[k];
        }
        if k >= 2 {
            d2 = d2 * s + kf * (kf - 1.0) * alpha[k];
        }
    }
    (v, d1, d2)
}

fn power_jet(p: f64, t: f64) -> (f64, f64, f64) {
    let s = t.abs();
    (
        s.powf(p) / p,
        sgn(t) * s.powf(p - 1.0),
        (p - 1.0) * s.powf(p - 2.0),
    )
}

impl ConnectorSpec {
    pub fn inner_jet(&self, t: f64) -> Result<(f64, f64, f64)> {
        let j = self.inner.eval_jet(&[t])?;
        if !j.smooth {
            return Err(Error::ConnectorPrecondition(format!(
                "inner function is not C² at {t}"
            )));
        }
        Ok((j.value, j.gradient[0], j.hessian[(0, 0)]))
    }

    /// Connector value and derivatives with respect to `|t| = s`.
    pub fn connector_jet(&self, s: f64) -> (f64, f64, f64) {
        poly(&self.alpha, s)
    }

    pub fn power_jet(&self, t: f64) -> (f64, f64, f64) {
        power_jet(self.p, t)
    }

    /// The smoothed coordinate term and its first two derivatives in `t`.
    pub fn coordinate_jet(&self, t: f64) -> (f64, f64, f64) {
        let s = t.abs();
        if s >= self.b {
            self.power_jet(t)
        } else if s >= self.a {
            let (v, d1, d2) = self.connector_jet(s);
            (v, sgn(t) * d1, d2)
        } else {
            self.inner_jet(t).unwrap_or((f64::NAN, f64::NAN, f64::NAN))
        }
    }

    pub fn coordinate_value(&self, t: f64) -> f64 {
        let s = t.abs();
        if s >= self.b {
            s.powf(self.p) / self.p
        } else if s >= self.a {
            self.connector_jet(s).0
        } else {
            self.inner.eval(&[t]).unwrap_or(f64::NAN)
        }
    }

    /// `‖Mα − rhs‖_∞` for the six boundary conditions.
    pub fn boundary_residual(&self) -> Result<f64> {
        let (m, rhs) = boundary_system(self.a, self.b, self.p, &self.inner)?;
        let alpha = SVector::<f64, 6>::from_column_slice(&self.alpha);
        Ok((m * alpha - rhs).amax())
    }

    /// Largest one-sided mismatch of value, slope and curvature across the
    /// two knots.
    pub fn knot_mismatch(&self) -> Result<f64> {
        let (va, da, dda) = self.inner_jet(self.a)?;
        let (ca, dca, ddca) = self.connector_jet(self.a);
        let (cb, dcb, ddcb) = self.connector_jet(self.b);
        let (pb, dpb, ddpb) = self.power_jet(self.b);
        Ok([
            va - ca,
            da - dca,
            dda - ddca,
            cb - pb,
            dcb - dpb,
            ddcb - ddpb,
        ]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs())))
    }

    /// Smallest connector slope on a dense sample of `(a, b)`, with its
    /// location.
    pub fn min_slope(&self) -> (f64, f64) {
        let mut worst = (f64::INFINITY, self.a);
        for k in 1..=MONOTONE_SAMPLES {
            let s = self.a + (self.b - self.a) * k as f64 / (MONOTONE_SAMPLES + 1) as f64;
            let d = self.connector_jet(s).1;
            if d < worst.0 {
                worst = (d, s);
            }
        }
        worst
    }

    fn validate(&self) -> Result<()> {
        check_knots(self.a, self.b)?;
        let residual = self.boundary_residual()?;
        if !(residual < BOUNDARY_TOL) {
            return Err(Error::IllConditionedConnector { residual });
        }
        let (slope, at) = self.min_slope();
        if !(slope > 0.0) {
            return Err(Error::NonMonotoneConnector { at, slope });
        }
        Ok(())
    }
}

fn check_knots(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::ConnectorPrecondition(format!(
            "inner knot must be positive and finite, got a = {a}"
        )));
    }
    if a == b {
        return Err(Error::SingularConnector(a));
    }
    if a > b {
        return Err(Error::InvalidInput(format!(
            "connector knots out of order: a = {a} > b = {b}"
        )));
    }
    Ok(())
}

/// Rows: value, slope, curvature at `a` then at `b`; columns: `s^0..s^5`.
fn boundary_system(
    a: f64,
    b: f64,
    p: f64,
    inner: &Expr,
) -> Result<(SMatrix<f64, 6, 6>, SVector<f64, 6>)> {
    let mut m = SMatrix::<f64, 6, 6>::zeros();
    for (row, s) in [(0, a), (3, b)] {
        for k in 0..6 {
            let kf = k as f64;
            m[(row, k)] = s.powi(k as i32);
            if k >= 1 {
                m[(row + 1, k)] = kf * s.powi(k as i32 - 1);
            }
            if k >= 2 {
                m[(row + 2, k)] = kf * (kf - 1.0) * s.powi(k as i32 - 2);
            }
        }
    }
    let j = inner.eval_jet(&[a])?;
    let (pb, dpb, ddpb) = power_jet(p, b);
    let rhs = SVector::<f64, 6>::from_column_slice(&[
        j.value,
        j.gradient[0],
        j.hessian[(0, 0)],
        pb,
        dpb,
        ddpb,
    ]);
    Ok((m, rhs))
}

fn check_inner(a: f64, inner: &Expr) -> Result<()> {
    inner.check_dimension(1)?;
    let (v0, _, _) = {
        let j = inner.eval_jet(&[0.0])?;
        if !j.smooth {
            return Err(Error::ConnectorPrecondition(
                "inner function is not C² at 0".into(),
            ));
        }
        (j.value, j.gradient[0], j.hessian[(0, 0)])
    };
    if v0.abs() > 1e-14 {
        return Err(Error::ConnectorPrecondition(format!(
            "inner function must vanish at 0, got {v0}"
        )));
    }
    for k in 1..=200 {
        let t = a * k as f64 / 200.0;
        let jp = inner.eval_jet(&[t])?;
        let jm = inner.eval_jet(&[-t])?;
        if !(jp.smooth && jm.smooth) {
            return Err(Error::ConnectorPrecondition(format!(
                "inner function is not C² at ±{t}"
            )));
        }
        if (jp.value - jm.value).abs() > 1e-12 * jp.value.abs().max(1e-300) {
            return Err(Error::ConnectorPrecondition(format!(
                "inner function is not even at ±{t}"
            )));
        }
        if !(jp.value > 0.0) {
            return Err(Error::ConnectorPrecondition(format!(
                "inner function is not positive at {t}"
            )));
        }
    }
    Ok(())
}

/// Solve the boundary system without the monotonicity requirement.
pub fn solve_connector(a: f64, b: f64, p: f64, inner: Expr) -> Result<ConnectorSpec> {
    check_knots(a, b)?;
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::ConnectorPrecondition(format!(
            "exponent must be positive, got {p}"
        )));
    }
    check_inner(a, &inner)?;
    let va = inner.eval(&[a])?;
    let outer = b.powf(p) / p;
    if !(outer > va) {
        return Err(Error::ConnectorPrecondition(format!(
            "outer value b^p/p = {outer} must exceed inner value v(a) = {va}"
        )));
    }
    // Solve in s/b to keep the Vandermonde block well scaled.
    let (m, rhs) = boundary_system(a / b, 1.0, p, &Expr::Num(0.0))?;
    let j = inner.eval_jet(&[a])?;
    let (pb, dpb, ddpb) = power_jet(p, b);
    let mut scaled_rhs = rhs;
    scaled_rhs[0] = j.value;
    scaled_rhs[1] = b * j.gradient[0];
    scaled_rhs[2] = b * b * j.hessian[(0, 0)];
    scaled_rhs[3] = pb;
    scaled_rhs[4] = b * dpb;
    scaled_rhs[5] = b * b * ddpb;
    let beta = m
        .lu()
        .solve(&scaled_rhs)
        .ok_or_else(|| Error::Singular("connector boundary system".into()))?;
    let mut alpha = [0.0; 6];
    for k in 0..6 {
        alpha[k] = beta[k] / b.powi(k as i32);
    }
    let spec = ConnectorSpec {
        a,
        b,
        p,
        inner,
        alpha,
    };
    let residual = spec.boundary_residual()?;
    if !(residual < BOUNDARY_TOL) {
        return Err(Error::IllConditionedConnector { residual });
    }
    Ok(spec)
}

/// Fit the quintic connector and require it to be strictly increasing on
/// `(a, b)`.
pub fn fit_connector(a: f64, b: f64, p: f64, inner: Expr) -> Result<ConnectorSpec> {
    let spec = solve_connector(a, b, p, inner)?;
    let (slope, at) = spec.min_slope();
    if !(slope > 0.0) {
        return Err(Error::NonMonotoneConnector { at, slope });
    }
    Ok(spec)
}

/// `Σ V_i(x_i)` where each term is a smoothed `|x_i|^{p_i}/p_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedPowerSum {
    pub exponents: Vec<f64>,
    pub connectors: Vec<ConnectorSpec>,
}

impl SmoothedPowerSum {
    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn coordinate_value(&self, i: usize, t: f64) -> f64 {
        self.connectors[i].coordinate_value(t)
    }

    pub fn coordinate_jet(&self, i: usize, t: f64) -> (f64, f64, f64) {
        self.connectors[i].coordinate_jet(t)
    }

    fn gradient_and_hessian(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim();
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            let (_, d1, d2) = self.coordinate_jet(i, x[i]);
            g[i] = d1;
            h[(i, i)] = d2;
        }
        (g, h)
    }
}

pub fn build_smoothed(exponents: &[f64], specs: Vec<ConnectorSpec>) -> Result<Candidate> {
    if specs.len() != exponents.len() {
        return Err(Error::DimensionMismatch {
            expected: exponents.len(),
            got: specs.len(),
        });
    }
    Candidate::power_sum(exponents.to_vec())?;
    for (i, (spec, &p)) in specs.iter().zip(exponents).enumerate() {
        if spec.p != p {
            return Err(Error::InvalidCandidate(format!(
                "connector {i} has exponent {} but the base uses {p}",
                spec.p
            )));
        }
        spec.validate()?;
        for k in 1..=1000 {
            let t = spec.b * k as f64 / 1000.0;
            if !(spec.coordinate_value(t) > 0.0 && spec.coordinate_value(-t) > 0.0) {
                return Err(Error::InvalidCandidate(format!(
                    "smoothed term {i} is not positive at ±{t}"
                )));
            }
        }
    }
    Ok(Candidate::Smoothed(SmoothedPowerSum {
        exponents: exponents.to_vec(),
        connectors: specs,
    }))
}

/// Sampling layout for the forward-completeness certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FcipGrid {
    /// Outer radius `L` of the sampled box.
    pub half_width: f64,
    /// Samples per half-axis in each region.
    pub per_axis: usize,
    /// Random directions on the far-field shell of radius `10 L`.
    pub far_directions: usize,
    pub seed: u64,
}

impl Default for FcipGrid {
    fn default() -> Self {
        FcipGrid {
            half_width: 100.0,
            per_axis: 16,
            far_directions: 2000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FcipGridMeta {
    pub half_width: f64,
    pub far_radius: f64,
    pub case_a_points: usize,
    pub case_b_points: usize,
    pub case_c_points: usize,
}

/// `ℒy ≤ c·y + g` evidence for the smoothed candidate.
#[derive(Debug, Clone, Serialize)]
pub struct FcipCertificate {
    pub c: f64,
    pub g: f64,
    pub case_a_max: f64,
    pub case_b_bound: f64,
    pub case_c_bound: f64,
    pub verdict: bool,
    pub case_a_violation: Option<Vec<f64>>,
    /// Leading-order sign test on the far field, only for affine systems
    /// with a quadratic base.
    pub far_field_analytic: Option<bool>,
    pub grid: FcipGridMeta,
}

fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![lo];
    }
    (0..m)
        .map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64)
        .collect()
}

fn product(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(axes.len())];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

fn signed(values: &[f64]) -> Vec<f64> {
    values.iter().flat_map(|&v| [v, -v]).collect()
}

/// `ℒV(x)` for the smoothed candidate at each point, in order.
fn generator_values(
    sys: &SdeSystem,
    s: &SmoothedPowerSum,
    points: &[Vec<f64>],
) -> Result<Vec<f64>> {
    points
        .par_iter()
        .map(|x| {
            let (g, h) = s.gradient_and_hessian(x);
            Ok(apply_generator(sys, x, &g, &h)?.value)
        })
        .collect()
}

fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b] || v.is_nan()) {
            best = Some(i);
            if v.is_nan() {
                break;
            }
        }
    }
    best
}

pub fn fcip_certificate(
    sys: &SdeSystem,
    candidate: &Candidate,
    grid: &FcipGrid,
) -> Result<FcipCertificate> {
    let Candidate::Smoothed(s) = candidate else {
        return Err(Error::InvalidCandidate(format!(
            "forward-completeness certificate needs a smoothed candidate, got {}",
            candidate.family()
        )));
    };
    let n = s.dim();
    if sys.n != n {
        return Err(Error::DimensionMismatch {
            expected: sys.n,
            got: n,
        });
    }
    let l = grid.half_width;
    let m = grid.per_axis.max(2);
    let outer: Vec<Vec<f64>> = s
        .connectors
        .iter()
        .map(|c| signed(&linspace(c.b, l.max(c.b), m)))
        .collect();

    // Case (a): every coordinate on its power branch.
    let mut case_a = product(&outer);
    let far = 10.0 * l;
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    for mask in 0..(1usize << n.min(12)) {
        let v = far / (n as f64).sqrt();
        case_a.push(
            (0..n)
                .map(|i| if mask >> i & 1 == 1 { -v } else { v })
                .collect(),
        );
    }
    for _ in 0..grid.far_directions {
        let dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let x: Vec<f64> = dir.iter().map(|v| v * far / norm).collect();
        if x.iter().zip(&s.connectors).all(|(v, c)| v.abs() >= c.b) {
            case_a.push(x);
        }
    }
    let values_a = generator_values(sys, s, &case_a)?;
    let ia = argmax(&values_a).expect("case (a) grid is non-empty");
    let case_a_max = values_a[ia];
    let verdict = case_a_max <= 0.0;

    // Case (b): every coordinate on its inner branch, odd count keeps 0.
    let inner_axes: Vec<Vec<f64>> = s
        .connectors
        .iter()
        .map(|c| linspace(-c.a, c.a, 2 * m + 1))
        .collect();
    let case_b = product(&inner_axes);
    let values_b = generator_values(sys, s, &case_b)?;
    let case_b_bound = values_b[argmax(&values_b).expect("non-empty")];

    // Case (c): each nonempty subset S below b, the rest on the power branch.
    let mut case_c = Vec::new();
    for subset in 1..(1usize << n) {
        let axes: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = &s.connectors[i];
                if subset >> i & 1 == 1 {
                    let step = 2.0 * c.b / (2 * m + 1) as f64;
                    (0..=2 * m)
                        .map(|k| -c.b + step * (k as f64 + 0.5))
                        .chain([c.a, -c.a])
                        .collect()
                } else {
                    outer[i].clone()
                }
            })
            .collect();
        case_c.extend(
            product(&axes)
                .into_iter()
                .filter(|x| !x.iter().zip(&s.connectors).all(|(v, c)| v.abs() <= c.a)),
        );
    }
    let case_c_bound = if case_c.is_empty() {
        f64::NEG_INFINITY
    } else {
        let values_c = generator_values(sys, s, &case_c)?;
        values_c[argmax(&values_c).expect("non-empty")]
    };

    let g = 0.0f64.max(case_b_bound).max(case_c_bound);
    Ok(FcipCertificate {
        c: 0.0,
        g,
        case_a_max,
        case_b_bound,
        case_c_bound,
        verdict,
        case_a_violation: (!verdict).then(|| case_a[ia].clone()),
        far_field_analytic: far_field_sign(sys, s),
        grid: FcipGridMeta {
            half_width: l,
            far_radius: far,
            case_a_points: case_a.len(),
            case_b_points: case_b.len(),
            case_c_points: case_c.len(),
        },
    })
}

pub fn fcip_conclusion(cert: &FcipCertificate) -> bool {
    cert.verdict
}

/// For affine drift `Ax + c` and affine diffusion columns `C_α x + s_α`
/// with every exponent equal to 2, `ℒV` is eventually dominated by
/// `xᵀ(sym A + ½ Σ C_αᵀC_α)x`; returns whether that form is negative
/// definite. `None` when the structure does not apply.
pub fn far_field_sign(sys: &SdeSystem, s: &SmoothedPowerSum) -> Option<bool> {
    if s.exponents.iter().any(|&p| p != 2.0) {
        return None;
    }
    let n = sys.n;
    let drift = affine_part(&sys.drift, n)?;
    let mut form = (&drift + drift.transpose()) * 0.5;
    for col in &sys.diffusion {
        let c = affine_part(col, n)?;
        form += (c.transpose() * &c) * 0.5;
    }
    Some(form.symmetric_eigenvalues().max() < 0.0)
}

/// Jacobian of a vector field if it is affine on sampled points.
fn affine_part(components: &[Expr], n: usize) -> Option<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut jac: Option<DMatrix<f64>> = None;
    for _ in 0..8 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut j = DMatrix::zeros(n, n);
        for (i, e) in components.iter().enumerate() {
            let jet = e.eval_jet(&x).ok()?;
            if !jet.smooth || jet.hessian.amax() != 0.0 {
                return None;
            }
            j.set_row(i, &jet.gradient.transpose());
        }
        match &jac {
            None => jac = Some(j),
            Some(prev) if (prev - &j).amax() > 1e-12 * prev.amax().max(1.0) => return None,
            _ => {}
        }
    }
    jac
}

/// Sampled branches on `[0, range]` for plotting: inner, connector and
/// power curves evaluated on the whole interval.
pub fn connector_curve_csv(spec: &ConnectorSpec, range: f64, points: usize) -> String {
    let mut out = String::from("x,v_branch,c_branch,power_branch\n");
    for t in linspace(0.0, range, points.max(2)) {
        let v = spec.inner.eval(&[t]).unwrap_or(f64::NAN);
        let c = spec.connector_jet(t).0;
        let pw = t.powf(spec.p) / spec.p;
        out.push_str(&format!("{t:.16e},{v:.16e},{c:.16e},{pw:.16e}\n"));
    }
    out
}
