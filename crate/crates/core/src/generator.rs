//! The infinitesimal operator `ℒ(x, p, X) = p·f(x) + ½ Σ_α σ_α(x)ᵀ X σ_α(x)`.
//!
//! Throughout the crate the Lyapunov residual is `F = −ℒv − l`; a
//! supersolution means `F ≥ 0`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::sde::SdeSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorValue {
    pub value: f64,
    pub drift_part: f64,
    pub diffusion_part: f64,
}

impl GeneratorValue {
    fn new(drift_part: f64, diffusion_part: f64) -> GeneratorValue {
        GeneratorValue {
            value: drift_part + diffusion_part,
            drift_part,
            diffusion_part,
        }
    }
}

pub fn apply_generator(
    sys: &SdeSystem,
    x: &[f64],
    p: &DVector<f64>,
    xx: &DMatrix<f64>,
) -> Result<GeneratorValue> {
    sys.check_point(x)?;
    let n = sys.n;
    if p.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: p.len(),
        });
    }
    if xx.nrows() != n || xx.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: xx.nrows().max(xx.ncols()),
        });
    }
    let sym = (xx + xx.transpose()) * 0.5;
    let mut buf = vec![0.0; n];
    sys.drift_into(x, &mut buf)?;
    let drift_part: f64 = p.iter().zip(&buf).map(|(a, b)| a * b).sum();
    let mut diffusion_part = 0.0;
    for alpha in 0..sys.d {
        sys.diffusion_into(alpha, x, &mut buf)?;
        let s = DVector::from_column_slice(&buf);
        diffusion_part += s.dot(&(&sym * &s));
    }
    Ok(GeneratorValue::new(drift_part, 0.5 * diffusion_part))
}

/// `ℒφ(x)` using the automatic-differentiation jet of a smooth test function.
pub fn apply_generator_smooth(sys: &SdeSystem, phi: &Expr, x: &[f64]) -> Result<GeneratorValue> {
    sys.check_point(x)?;
    let jet = phi.eval_jet(x)?;
    if !jet.smooth {
        return Err(Error::NonSmoothPoint);
    }
    apply_generator(sys, x, &jet.gradient, &jet.hessian)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::sde::builtin_example;
    use proptest::prelude::*;

    fn scalar(v: f64) -> (DVector<f64>, DMatrix<f64>) {
        (DVector::from_element(1, v), DMatrix::zeros(1, 1))
    }

    #[test]
    fn worked_examples() {
        let ou = builtin_example("ou_additive").unwrap();
        let (p, xx) = scalar(1.0);
        assert_eq!(apply_generator(&ou, &[2.0], &p, &xx).unwrap().value, -2.0);
        let gh = builtin_example("geometric_half").unwrap();
        assert_eq!(apply_generator(&gh, &[3.0], &p, &xx).unwrap().value, -1.5);
        let c3 = builtin_example("chained3").unwrap();
        let g = apply_generator(
            &c3,
            &[1.0, 2.0, 3.0],
            &DVector::zeros(3),
            &DMatrix::zeros(3, 3),
        )
        .unwrap();
        assert_eq!(g.value, 0.0);
    }

    #[test]
    fn smooth_test_function() {
        let ou = builtin_example("ou_additive").unwrap();
        let phi = parse("x1^2", 1).unwrap();
        assert_eq!(
            apply_generator_smooth(&ou, &phi, &[0.0]).unwrap().value,
            1.0
        );
        assert_eq!(
            apply_generator_smooth(&ou, &phi, &[1.0]).unwrap().value,
            -1.0
        );
        let kink = parse("abs(x1)", 1).unwrap();
        assert!(matches!(
            apply_generator_smooth(&ou, &kink, &[0.0]),
            Err(Error::NonSmoothPoint)
        ));
    }

    #[test]
    fn asymmetric_hessian_is_symmetrized() {
        let c3 = builtin_example("chained3").unwrap();
        let x = [0.5, -1.0, 2.0];
        let p = DVector::zeros(3);
        let xx = DMatrix::from_row_slice(3, 3, &[1.0, 4.0, 0.0, 0.0, 2.0, 1.0, 2.0, 3.0, -1.0]);
        let sym = (&xx + xx.transpose()) * 0.5;
        let a = apply_generator(&c3, &x, &p, &xx).unwrap();
        let b = apply_generator(&c3, &x, &p, &sym).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.value, a.drift_part + a.diffusion_part);
    }

    fn sym_from(v: &[f64], n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_row_slice(n, n, &v[..n * n]);
        (&m + m.transpose()) * 0.5
    }

    proptest! {
        #[test]
        fn linear_in_jet(
            x in proptest::collection::vec(-2.0f64..2.0, 3),
            p1 in proptest::collection::vec(-2.0f64..2.0, 3),
            p2 in proptest::collection::vec(-2.0f64..2.0, 3),
            m1 in proptest::collection::vec(-2.0f64..2.0, 9),
            m2 in proptest::collection::vec(-2.0f64..2.0, 9),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let sys = builtin_example("chained3").unwrap();
            let (p1, p2) = (DVector::from_vec(p1), DVector::from_vec(p2));
            let (x1, x2) = (sym_from(&m1, 3), sym_from(&m2, 3));
            let g1 = apply_generator(&sys, &x, &p1, &x1).unwrap().value;
            let g2 = apply_generator(&sys, &x, &p2, &x2).unwrap().value;
            let g = apply_generator(&sys, &x, &(&p1 * a + &p2 * b), &(&x1 * a + &x2 * b)).unwrap().value;
            let expect = a * g1 + b * g2;
            prop_assert!((g - expect).abs() <= 1e-12 * expect.abs().max(1.0) * 10.0);
        }

        #[test]
        fn degenerate_ellipticity(
            x in proptest::collection::vec(-2.0f64..2.0, 3),
            m in proptest::collection::vec(-2.0f64..2.0, 9),
            l in proptest::collection::vec(-2.0f64..2.0, 9),
        ) {
            let sys = builtin_example("chained3").unwrap();
            let p = DVector::zeros(3);
            let base = sym_from(&m, 3);
            let l = DMatrix::from_row_slice(3, 3, &l);
            let psd = &l * l.transpose();
            let lo = apply_generator(&sys, &x, &p, &base).unwrap().value;
            let hi = apply_generator(&sys, &x, &p, &(&base + psd)).unwrap().value;
            prop_assert!(hi >= lo - 1e-12);
        }

        #[test]
        fn smooth_matches_finite_difference_jets(
            x in proptest::collection::vec(-1.0f64..1.0, 3),
            c in proptest::collection::vec(0.1f64..2.0, 3),
        ) {
            let sys = builtin_example("chained3").unwrap();
            let src = format!("{}*x1^2*x2 + sin({}*x3) + exp({}*x1*x3)", c[0], c[1], c[2]);
            let phi = parse(&src, 3).unwrap();
            let h = 1e-4;
            let f = |y: &[f64]| phi.eval(y).unwrap();
            let mut p = DVector::zeros(3);
            let mut xx = DMatrix::zeros(3, 3);
            for i in 0..3 {
                let mut yp = x.clone();
                let mut ym = x.clone();
                yp[i] += h;
                ym[i] -= h;
                p[i] = (f(&yp) - f(&ym)) / (2.0 * h);
                for j in 0..3 {
                    let e = |si: f64, sj: f64| {
                        let mut y = x.clone();
                        y[i] += si * h;
                        y[j] += sj * h;
                        f(&y)
                    };
                    xx[(i, j)] = (e(1.0, 1.0) - e(1.0, -1.0) - e(-1.0, 1.0) + e(-1.0, -1.0)) / (4.0 * h * h);
                }
            }
            let fd = apply_generator(&sys, &x, &p, &xx).unwrap().value;
            let ad = apply_generator_smooth(&sys, &phi, &x).unwrap().value;
            prop_assert!((fd - ad).abs() < 1e-5 * ad.abs().max(1.0));
        }
    }
}
