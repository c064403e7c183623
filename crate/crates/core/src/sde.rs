//! Autonomous Itô systems `dx = f(x) dt + Σ_α σ_α(x) dw_α`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, BinOp, Expr};

#[derive(Debug, Clone, PartialEq)]
pub struct SdeSystem {
    pub n: usize,
    pub d: usize,
    pub drift: Vec<Expr>,
    /// `diffusion[α]` is the column σ_α with `n` components.
    pub diffusion: Vec<Vec<Expr>>,
    pub name: Option<String>,
}

/// Serialized form: expressions as strings, diffusion listed column by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub n: usize,
    pub d: usize,
    pub drift: Vec<String>,
    pub diffusion: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OriginClass {
    AlmostSureEquilibrium,
    NoisyEquilibrium,
    NotEquilibrium,
}

pub const BUILTIN_NAMES: [&str; 3] = ["ou_additive", "geometric_half", "chained3"];

impl SdeSystem {
    pub fn new(
        n: usize,
        drift: Vec<Expr>,
        diffusion: Vec<Vec<Expr>>,
        name: Option<String>,
    ) -> Result<SdeSystem> {
        if drift.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: drift.len(),
            });
        }
        for col in &diffusion {
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: col.len(),
                });
            }
        }
        for e in drift.iter().chain(diffusion.iter().flatten()) {
            e.check_dimension(n)?;
        }
        Ok(SdeSystem {
            n,
            d: diffusion.len(),
            drift,
            diffusion,
            name,
        })
    }

    pub fn from_spec(spec: &SystemSpec) -> Result<SdeSystem> {
        if spec.diffusion.len() != spec.d {
            return Err(Error::DimensionMismatch {
                expected: spec.d,
                got: spec.diffusion.len(),
            });
        }
        let drift = spec
            .drift
            .iter()
            .map(|s| expr::parse(s, spec.n))
            .collect::<Result<Vec<_>, _>>()?;
        let diffusion = spec
            .diffusion
            .iter()
            .map(|col| col.iter().map(|s| expr::parse(s, spec.n)).collect())
            .collect::<Result<Vec<Vec<_>>, _>>()?;
        SdeSystem::new(spec.n, drift, diffusion, spec.name.clone())
    }

    pub fn to_spec(&self) -> SystemSpec {
        SystemSpec {
            n: self.n,
            d: self.d,
            drift: self.drift.iter().map(Expr::render).collect(),
            diffusion: self
                .diffusion
                .iter()
                .map(|col| col.iter().map(Expr::render).collect())
                .collect(),
            name: self.name.clone(),
        }
    }

    /// Affine drift `A x` with constant diffusion columns `G[:, k]`.
    pub fn linear(a: &DMatrix<f64>, g: &DMatrix<f64>, name: Option<String>) -> Result<SdeSystem> {
        let n = a.nrows();
        if a.ncols() != n || g.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if a.ncols() != n { a.ncols() } else { g.nrows() },
            });
        }
        let drift = (0..n)
            .map(|i| linear_form(a.row(i).iter().copied()))
            .collect();
        let diffusion = (0..g.ncols())
            .map(|k| (0..n).map(|i| Expr::constant(g[(i, k)])).collect())
            .collect();
        SdeSystem::new(n, drift, diffusion, name)
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), expr::ExprError> {
        for (o, e) in out.iter_mut().zip(&self.drift) {
            *o = e.eval(x)?;
        }
        Ok(())
    }

    /// Column `alpha` of the diffusion evaluated at `x`.
    pub fn diffusion_into(
        &self,
        alpha: usize,
        x: &[f64],
        out: &mut [f64],
    ) -> Result<(), expr::ExprError> {
        for (o, e) in out.iter_mut().zip(&self.diffusion[alpha]) {
            *o = e.eval(x)?;
        }
        Ok(())
    }

    pub fn drift_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.n];
        self.drift_into(x, &mut out)?;
        Ok(out)
    }

    pub fn diffusion_at(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_point(x)?;
        (0..self.d)
            .map(|alpha| {
                let mut col = vec![0.0; self.n];
                self.diffusion_into(alpha, x, &mut col)?;
                Ok(col)
            })
            .collect()
    }

    /// Σ_α σ_α,k(x)², the noise intensity along coordinate `k`.
    pub fn noise_intensity(&self, x: &[f64], k: usize) -> Result<f64> {
        let mut s = 0.0;
        for col in &self.diffusion {
            let v = col[k].eval(x)?;
            s += v * v;
        }
        Ok(s)
    }
}

/// Σ_j c_j x_j with zero terms dropped; negative coefficients as negations.
fn linear_form(coeffs: impl Iterator<Item = f64>) -> Expr {
    let mut acc: Option<Expr> = None;
    for (j, c) in coeffs.enumerate() {
        if c == 0.0 {
            continue;
        }
        let term = |c: f64| {
            if c == 1.0 {
                Expr::Var(j)
            } else {
                Expr::binary(BinOp::Mul, Expr::Num(c), Expr::Var(j))
            }
        };
        acc = Some(match acc {
            None if c < 0.0 => Expr::neg(term(-c)),
            None => term(c),
            Some(a) if c < 0.0 => Expr::binary(BinOp::Sub, a, term(-c)),
            Some(a) => Expr::binary(BinOp::Add, a, term(c)),
        });
    }
    acc.unwrap_or(Expr::Num(0.0))
}

pub fn classify_origin(sys: &SdeSystem, tol: f64) -> Result<OriginClass> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be non-negative, got {tol}"
        )));
    }
    let zero = vec![0.0; sys.n];
    let f0 = sys.drift_at(&zero)?;
    if norm(&f0) > tol {
        return Ok(OriginClass::NotEquilibrium);
    }
    let worst = sys
        .diffusion_at(&zero)?
        .iter()
        .map(|c| norm(c))
        .fold(0.0, f64::max);
    Ok(if worst <= tol {
        OriginClass::AlmostSureEquilibrium
    } else {
        OriginClass::NoisyEquilibrium
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn builtin_example(name: &str) -> Result<SdeSystem> {
    let spec = |n: usize, drift: &[&str], diffusion: &[&[&str]]| SystemSpec {
        n,
        d: diffusion.len(),
        drift: drift.iter().map(|s| s.to_string()).collect(),
        diffusion: diffusion
            .iter()
            .map(|c| c.iter().map(|s| s.to_string()).collect())
            .collect(),
        name: Some(name.to_string()),
    };
    let s = match name {
        "ou_additive" => spec(1, &["-x1"], &[&["1"]]),
        "geometric_half" => spec(1, &["-x1/2"], &[&["x1"]]),
        "chained3" => spec(
            3,
            &["-x1", "-x2", "-x3"],
            &[&["1", "0", "x2"], &["0", "1", "0"]],
        ),
        _ => return Err(Error::UnknownExample(name.to_string())),
    };
    SdeSystem::from_spec(&s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_classify() {
        let expected = [
            OriginClass::NoisyEquilibrium,
            OriginClass::AlmostSureEquilibrium,
            OriginClass::NoisyEquilibrium,
        ];
        for (name, want) in BUILTIN_NAMES.iter().zip(expected) {
            let sys = builtin_example(name).unwrap();
            assert_eq!(classify_origin(&sys, 1e-12).unwrap(), want, "{name}");
        }
    }

    #[test]
    fn builtin_values() {
        let c = builtin_example("chained3").unwrap();
        assert_eq!(
            c.diffusion_at(&[0.0, 5.0, 0.0]).unwrap()[0],
            vec![1.0, 0.0, 5.0]
        );
        let ou = builtin_example("ou_additive").unwrap();
        assert_eq!(ou.drift_at(&[2.0]).unwrap(), vec![-2.0]);
        assert!(matches!(
            builtin_example("foo"),
            Err(Error::UnknownExample(_))
        ));
    }

    #[test]
    fn shifted_drift_is_not_an_equilibrium() {
        let spec = SystemSpec {
            n: 1,
            d: 1,
            drift: vec!["-x1+1".into()],
            diffusion: vec![vec!["1".into()]],
            name: None,
        };
        let sys = SdeSystem::from_spec(&spec).unwrap();
        assert_eq!(
            classify_origin(&sys, 1e-12).unwrap(),
            OriginClass::NotEquilibrium
        );
    }

    #[test]
    fn tolerance_monotone() {
        let spec = SystemSpec {
            n: 1,
            d: 1,
            drift: vec!["-x1+1e-6".into()],
            diffusion: vec![vec!["1e-8 + x1".into()]],
            name: None,
        };
        let sys = SdeSystem::from_spec(&spec).unwrap();
        let classes: Vec<_> = [0.0, 1e-9, 1e-7, 1e-5]
            .iter()
            .map(|&t| classify_origin(&sys, t).unwrap())
            .collect();
        assert_eq!(
            classes,
            vec![
                OriginClass::NotEquilibrium,
                OriginClass::NotEquilibrium,
                OriginClass::NotEquilibrium,
                OriginClass::AlmostSureEquilibrium
            ]
        );
    }

    #[test]
    fn dimension_checks() {
        let spec = SystemSpec {
            n: 1,
            d: 1,
            drift: vec!["-x2".into()],
            diffusion: vec![vec!["1".into()]],
            name: None,
        };
        assert!(SdeSystem::from_spec(&spec).is_err());
        let spec = SystemSpec {
            n: 2,
            d: 1,
            drift: vec!["-x1".into(), "-x2".into()],
            diffusion: vec![vec!["1".into()]],
            name: None,
        };
        assert!(matches!(
            SdeSystem::from_spec(&spec),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn linear_system_round_trips() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.25]);
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -0.5]);
        let sys = SdeSystem::linear(&a, &g, None).unwrap();
        let x = [0.3, -1.7];
        let f = sys.drift_at(&x).unwrap();
        assert!((f[0] - (-0.3 + 0.5 * -1.7)).abs() < 1e-15);
        assert!((f[1] - 2.25 * 1.7).abs() < 1e-15);
        assert_eq!(sys.diffusion_at(&x).unwrap()[0], vec![1.0, -0.5]);
        let again = SdeSystem::from_spec(&sys.to_spec()).unwrap();
        assert_eq!(again, sys);
    }
}
