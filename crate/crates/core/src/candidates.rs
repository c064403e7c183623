//! Structured Lyapunov candidates and their second-order subjets.
//!
//! Every family is either separable (`V(x) = Σ φ_i(x_i)`) or smooth, so the
//! lower semijet at a point is known in closed form: smooth coordinates
//! contribute their derivatives, and kink coordinates leave an interval of
//! admissible slopes with unconstrained curvature.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::connector::{self, ConnectorInput, SmoothedPowerSum};
use crate::error::{Error, Result};
use crate::expr::sgn;
use crate::json;

#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    /// `Σ |x_i|^{p_i} / p_i`
    PowerSum {
        exponents: Vec<f64>,
    },
    /// `Σ w_i |x_i|`
    WeightedAbsSum {
        weights: Vec<f64>,
    },
    /// `xᵀ P x`
    Quadratic {
        p: DMatrix<f64>,
    },
    Smoothed(SmoothedPowerSum),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CandidateSpec {
    PowerSum {
        exponents: Vec<f64>,
    },
    AbsSum {
        weights: Vec<f64>,
    },
    Quadratic {
        #[serde(rename = "P")]
        p: Vec<Vec<f64>>,
    },
    Smoothed {
        exponents: Vec<f64>,
        connectors: Vec<ConnectorInput>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Provenance {
    TrueJet,
    CanonicalWitness,
    Adversarial,
}

/// A pair `(p, X)` claimed to lie in the second-order subjet.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemijetElement {
    #[serde(with = "json::vector")]
    pub p: DVector<f64>,
    #[serde(rename = "X", with = "json::matrix")]
    pub x: DMatrix<f64>,
    pub provenance: Provenance,
}

/// Numerical spot check of subjet membership: the second-order remainder
/// `V(y) − V(x) − p·(y−x) − ½(y−x)ᵀX(y−x)` must stay above `−rel·r²` on
/// random points of each ball `|y − x| ≤ r`.
#[derive(Debug, Clone)]
pub struct MembershipTest {
    pub radii: Vec<f64>,
    pub samples: usize,
    pub rel: f64,
    pub seed: u64,
}

impl Default for MembershipTest {
    fn default() -> Self {
        MembershipTest {
            radii: vec![1e-2, 1e-3],
            samples: 10_000,
            rel: 1e-3,
            seed: 0x5EED_CAFE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipReport {
    /// `(radius, min remainder / r²)` per tested radius.
    pub worst: Vec<(f64, f64)>,
    pub passed: bool,
}

// Curvature ladder for kink coordinates.
const LADDER: [f64; 7] = [2.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6];

impl Candidate {
    pub fn power_sum(exponents: Vec<f64>) -> Result<Candidate> {
        if exponents.is_empty() || exponents.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidCandidate(format!(
                "power-sum exponents must be positive, got {exponents:?}"
            )));
        }
        Ok(Candidate::PowerSum { exponents })
    }

    pub fn abs_sum(weights: Vec<f64>) -> Result<Candidate> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidCandidate(format!(
                "weights must be positive, got {weights:?}"
            )));
        }
        Ok(Candidate::WeightedAbsSum { weights })
    }

    pub fn quadratic(p: DMatrix<f64>) -> Result<Candidate> {
        if p.nrows() != p.ncols() || p.nrows() == 0 {
            return Err(Error::InvalidCandidate(
                "P must be a non-empty square matrix".into(),
            ));
        }
        let asym = (&p - p.transpose()).amax();
        if asym > 1e-12 * p.amax().max(1.0) {
            return Err(Error::InvalidCandidate(format!(
                "P is not symmetric (|P − Pᵀ| = {asym:e})"
            )));
        }
        if p.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(
                "quadratic candidate matrix".into(),
            ));
        }
        Ok(Candidate::Quadratic { p })
    }

    pub fn from_spec(spec: &CandidateSpec) -> Result<Candidate> {
        match spec {
            CandidateSpec::PowerSum { exponents } => Candidate::power_sum(exponents.clone()),
            CandidateSpec::AbsSum { weights } => Candidate::abs_sum(weights.clone()),
            CandidateSpec::Quadratic { p } => {
                Candidate::quadratic(json::from_rows(p).map_err(Error::InvalidCandidate)?)
            }
            CandidateSpec::Smoothed {
                exponents,
                connectors,
            } => {
                if connectors.len() != exponents.len() {
                    return Err(Error::DimensionMismatch {
                        expected: exponents.len(),
                        got: connectors.len(),
                    });
                }
                let specs = connectors
                    .iter()
                    .zip(exponents)
                    .map(|(c, &p)| c.resolve(p))
                    .collect::<Result<Vec<_>>>()?;
                connector::build_smoothed(exponents, specs)
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Candidate::PowerSum { exponents } => exponents.len(),
            Candidate::WeightedAbsSum { weights } => weights.len(),
            Candidate::Quadratic { p } => p.nrows(),
            Candidate::Smoothed(s) => s.dim(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Candidate::PowerSum { .. } => "power_sum",
            Candidate::WeightedAbsSum { .. } => "abs_sum",
            Candidate::Quadratic { .. } => "quadratic",
            Candidate::Smoothed(_) => "smoothed",
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Value of the i-th separable term.
    fn coord_value(&self, i: usize, t: f64) -> f64 {
        match self {
            Candidate::PowerSum { exponents } => t.abs().powf(exponents[i]) / exponents[i],
            Candidate::WeightedAbsSum { weights } => weights[i] * t.abs(),
            Candidate::Smoothed(s) => s.coordinate_value(i, t),
            Candidate::Quadratic { .. } => unreachable!("quadratic candidates are not separable"),
        }
    }

    /// Value and first two derivatives of the i-th separable term, `None`
    /// at a kink.
    fn coord_jet(&self, i: usize, t: f64) -> Option<(f64, f64, f64)> {
        match self {
            Candidate::PowerSum { exponents } => {
                let p = exponents[i];
                let s = t.abs();
                if t == 0.0 {
                    if p < 2.0 {
                        None
                    } else if p == 2.0 {
                        Some((0.0, 0.0, 1.0))
                    } else {
                        Some((0.0, 0.0, 0.0))
                    }
                } else {
                    Some((
                        s.powf(p) / p,
                        sgn(t) * s.powf(p - 1.0),
                        (p - 1.0) * s.powf(p - 2.0),
                    ))
                }
            }
            Candidate::WeightedAbsSum { weights } => {
                (t != 0.0).then(|| (weights[i] * t.abs(), weights[i] * sgn(t), 0.0))
            }
            Candidate::Smoothed(s) => Some(s.coordinate_jet(i, t)),
            Candidate::Quadratic { .. } => unreachable!("quadratic candidates are not separable"),
        }
    }

    /// Half-width of the admissible slope interval at a kink of coordinate i.
    fn kink_slope(&self, i: usize) -> f64 {
        match self {
            Candidate::WeightedAbsSum { weights } => weights[i],
            Candidate::PowerSum { exponents } if exponents[i] == 1.0 => 1.0,
            Candidate::PowerSum { exponents } if exponents[i] < 1.0 => f64::INFINITY,
            _ => 0.0,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "point dimension");
        match self {
            Candidate::Quadratic { p } => {
                let v = DVector::from_column_slice(x);
                v.dot(&(p * &v))
            }
            _ => x
                .iter()
                .enumerate()
                .map(|(i, &t)| self.coord_value(i, t))
                .sum(),
        }
    }

    /// Coordinates where the candidate fails to be C².
    pub fn kinks(&self, x: &[f64]) -> Vec<usize> {
        match self {
            Candidate::WeightedAbsSum { .. } => (0..x.len()).filter(|&i| x[i] == 0.0).collect(),
            Candidate::PowerSum { exponents } => (0..x.len())
                .filter(|&i| x[i] == 0.0 && exponents[i] < 2.0)
                .collect(),
            Candidate::Quadratic { .. } | Candidate::Smoothed(_) => Vec::new(),
        }
    }

    pub fn smooth_locus(&self, x: &[f64]) -> bool {
        self.kinks(x).is_empty()
    }

    /// Power-sum exponents strictly below one give kinks with unbounded slope.
    pub fn has_steep_kinks(&self) -> bool {
        matches!(self, Candidate::PowerSum { exponents } if exponents.iter().any(|&p| p < 1.0))
    }

    pub fn jet_at(&self, x: &[f64]) -> Result<SemijetElement> {
        self.check_point(x)?;
        if !self.smooth_locus(x) {
            return Err(Error::NonSmoothPoint);
        }
        Ok(self.witness_unchecked(x))
    }

    /// Classical derivatives on smooth coordinates; slope 0 and zero
    /// curvature rows on kink coordinates.
    pub fn canonical_witness(&self, x: &[f64]) -> Result<SemijetElement> {
        self.check_point(x)?;
        Ok(self.witness_unchecked(x))
    }

    fn witness_unchecked(&self, x: &[f64]) -> SemijetElement {
        let n = x.len();
        if let Candidate::Quadratic { p } = self {
            let v = DVector::from_column_slice(x);
            return SemijetElement {
                p: (p * &v) * 2.0,
                x: p * 2.0,
                provenance: Provenance::TrueJet,
            };
        }
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let mut kink = false;
        for i in 0..n {
            match self.coord_jet(i, x[i]) {
                Some((_, d1, d2)) => {
                    grad[i] = d1;
                    hess[(i, i)] = d2;
                }
                None => kink = true,
            }
        }
        SemijetElement {
            p: grad,
            x: hess,
            provenance: if kink {
                Provenance::CanonicalWitness
            } else {
                Provenance::TrueJet
            },
        }
    }

    /// Elements probing the unconstrained directions of the subjet at a
    /// kink: escalating curvature on kink coordinates, off-center slopes,
    /// cross terms, and boundary slopes with non-positive curvature. Only
    /// elements passing [`Candidate::membership`] are returned.
    pub fn adversarial_elements(&self, x: &[f64], count: usize) -> Result<Vec<SemijetElement>> {
        self.check_point(x)?;
        let kinks = self.kinks(x);
        if kinks.is_empty() {
            return Err(Error::SmoothPoint);
        }
        let test = MembershipTest::default();
        let base = self.witness_unchecked(x);
        let n = x.len();
        let smooth: Vec<usize> = (0..n).filter(|i| !kinks.contains(i)).collect();
        let mut out = Vec::with_capacity(count);
        let offer = |e: SemijetElement, out: &mut Vec<SemijetElement>| -> bool {
            if out.len() < count && self.membership(x, &e, &test).passed {
                out.push(e);
                true
            } else {
                false
            }
        };

        let with = |slope_scale: f64, curvature: f64, cross: f64| {
            let mut e = base.clone();
            e.provenance = Provenance::Adversarial;
            for &k in &kinks {
                let half = self.kink_slope(k).min(1.0);
                e.p[k] = slope_scale * half;
                e.x[(k, k)] = curvature;
                if cross != 0.0 {
                    for &j in &smooth {
                        e.x[(k, j)] = cross;
                        e.x[(j, k)] = cross;
                    }
                }
            }
            if cross != 0.0 {
                for &j in &smooth {
                    e.x[(j, j)] -= 1.0;
                }
            }
            e
        };

        for &s in &LADDER {
            if out.len() >= count {
                break;
            }
            if !offer(with(0.0, s, 0.0), &mut out) {
                break;
            }
            if kinks.iter().any(|&k| self.kink_slope(k) > 0.0) {
                offer(with(0.5, s, 0.0), &mut out);
                offer(with(-0.5, s, 0.0), &mut out);
            }
            if !smooth.is_empty() {
                offer(with(0.0, s, 1.0), &mut out);
            }
        }
        // boundary slopes admit only non-positive curvature
        for sign in [1.0, -1.0] {
            if kinks
                .iter()
                .all(|&k| self.kink_slope(k).is_finite() && self.kink_slope(k) > 0.0)
            {
                let mut e = base.clone();
                e.provenance = Provenance::Adversarial;
                for &k in &kinks {
                    e.p[k] = sign * self.kink_slope(k);
                }
                for i in 0..n {
                    e.x[(i, i)] -= 1.0;
                }
                offer(e, &mut out);
            }
        }
        // random fill
        let mut rng = ChaCha8Rng::seed_from_u64(test.seed ^ 0xADE5);
        let mut attempts = 0;
        while out.len() < count && attempts < 50 * count.max(1) {
            attempts += 1;
            let u: f64 = rng.random_range(-0.5..0.5);
            let curvature = rng.random_range(0.0..20.0);
            let cross: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
            offer(
                with(u, curvature, if smooth.is_empty() { 0.0 } else { cross }),
                &mut out,
            );
        }
        Ok(out)
    }

    pub fn membership(
        &self,
        x: &[f64],
        e: &SemijetElement,
        test: &MembershipTest,
    ) -> MembershipReport {
        let n = x.len();
        let vx = self.evaluate(x);
        let mut rng = ChaCha8Rng::seed_from_u64(test.seed);
        let mut y = vec![0.0; n];
        let mut h = vec![0.0; n];
        let mut worst = Vec::with_capacity(test.radii.len());
        let mut passed = true;
        for &r in &test.radii {
            let mut min_rem = f64::INFINITY;
            let mut probe = |h: &[f64], y: &mut [f64]| {
                for i in 0..n {
                    y[i] = x[i] + h[i];
                }
                let mut lin = 0.0;
                let mut quad = 0.0;
                for i in 0..n {
                    lin += e.p[i] * h[i];
                    for j in 0..n {
                        quad += h[i] * e.x[(i, j)] * h[j];
                    }
                }
                let rem = self.evaluate(y) - vx - lin - 0.5 * quad;
                min_rem = min_rem.min(rem);
            };
            // axis points and the signed diagonals on the sphere
            for i in 0..n {
                for s in [r, -r, 0.5 * r, -0.5 * r] {
                    h.iter_mut().for_each(|v| *v = 0.0);
                    h[i] = s;
                    probe(&h, &mut y);
                }
            }
            let diag = r / (n as f64).sqrt();
            for mask in 0..(1usize << n.min(10)) {
                for (i, v) in h.iter_mut().enumerate() {
                    *v = if mask >> i & 1 == 1 { -diag } else { diag };
                }
                probe(&h, &mut y);
            }
            for _ in 0..test.samples {
                let mut norm = 0.0;
                for v in h.iter_mut() {
                    *v = rng.sample(StandardNormal);
                    norm += *v * *v;
                }
                let radius = r * rng.random::<f64>().powf(1.0 / n as f64) / norm.sqrt();
                h.iter_mut().for_each(|v| *v *= radius);
                probe(&h, &mut y);
            }
            let scaled = min_rem / (r * r);
            passed &= scaled >= -test.rel;
            worst.push((r, scaled));
        }
        MembershipReport { worst, passed }
    }

    /// Infimum of `V` over the sphere `|x| = η`.
    pub fn sphere_infimum(&self, eta: f64) -> f64 {
        match self {
            Candidate::WeightedAbsSum { weights } => {
                weights.iter().copied().fold(f64::INFINITY, f64::min) * eta
            }
            // each term is concave in x_i², so the minimum sits on an axis
            Candidate::PowerSum { exponents } if exponents.iter().all(|&p| p <= 2.0) => exponents
                .iter()
                .map(|&p| eta.powf(p) / p)
                .fold(f64::INFINITY, f64::min),
            // convex in x_i² with a common exponent: minimum at equal magnitudes
            Candidate::PowerSum { exponents } if exponents.iter().all(|&p| p == exponents[0]) => {
                let n = exponents.len() as f64;
                let p = exponents[0];
                n.powf(1.0 - p / 2.0) * eta.powf(p) / p
            }
            Candidate::Quadratic { p } => p.clone().symmetric_eigenvalues().min() * eta * eta,
            _ => self.sampled_sphere_min(eta),
        }
    }

    fn sampled_sphere_min(&self, eta: f64) -> f64 {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5FE7E);
        let mut best = f64::INFINITY;
        let mut h = vec![0.0; n];
        for i in 0..n {
            h.iter_mut().for_each(|v| *v = 0.0);
            h[i] = eta;
            best = best.min(self.evaluate(&h));
        }
        for _ in 0..100_000 {
            let mut norm = 0.0;
            for v in h.iter_mut() {
                *v = rng.sample(StandardNormal);
                norm += *v * *v;
            }
            let s = eta / norm.sqrt();
            h.iter_mut().for_each(|v| *v *= s);
            best = best.min(self.evaluate(&h));
        }
        best
    }
}
