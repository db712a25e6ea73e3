//! Test functions `f : R^k -> R`.
//!
//! The canonical form is a finite sum of monomials
//! `c · Π_j sgn(x_j)^{s_j} |x_j|^{p_j}`, which covers `x^p` (integer `p`,
//! `s = p mod 2`) and `|x|^p` (real `p`, `s = 0`). Gaussian moments of this
//! form are available in closed form. Anything else goes through
//! [`TestFunction::general`].

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// One coordinate factor `sgn(x)^s · |x|^power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factor {
    pub power: f64,
    /// `true` when the factor flips sign with its argument.
    pub odd: bool,
}

impl Factor {
    pub const ONE: Factor = Factor { power: 0.0, odd: false };

    /// `x^p` for a nonnegative integer `p`.
    pub fn plain(p: u32) -> Self {
        Factor {
            power: p as f64,
            odd: p % 2 == 1,
        }
    }

    /// `|x|^p` for real `p >= 0`.
    pub fn abs(p: f64) -> Self {
        Factor { power: p, odd: false }
    }

    /// Product of two factors on the same coordinate.
    pub fn merge(self, other: Factor) -> Factor {
        Factor {
            power: self.power + other.power,
            odd: self.odd ^ other.odd,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let a = x.abs();
        let m = if self.power == 0.0 {
            1.0
        } else if self.power.fract() == 0.0 && self.power <= i32::MAX as f64 {
            a.powi(self.power as i32)
        } else {
            a.powf(self.power)
        };
        if self.odd && x < 0.0 {
            -m
        } else {
            m
        }
    }

    fn is_one(&self) -> bool {
        self.power == 0.0 && !self.odd
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    /// One factor per coordinate; `factors.len() == k`.
    pub factors: Vec<Factor>,
}

impl Monomial {
    pub fn new(coeff: f64, factors: Vec<Factor>) -> Self {
        Monomial { coeff, factors }
    }

    pub fn degree(&self) -> f64 {
        self.factors.iter().map(|f| f.power).sum()
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeff * self.factors.iter().zip(x).map(|(f, &xi)| f.eval(xi)).product::<f64>()
    }
}

pub type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Representation {
    Monomials(Vec<Monomial>),
    General { name: String, eval: Evaluator },
}

#[derive(Clone)]
pub struct TestFunction {
    k: usize,
    repr: Representation,
    growth_p: f64,
    globally_even: bool,
    even_each: bool,
}

impl TestFunction {
    pub fn from_monomials(k: usize, terms: Vec<Monomial>) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("test function dimension k must be at least 1"));
        }
        for t in &terms {
            if t.factors.len() != k {
                return Err(Error::param(format!(
                    "monomial has {} factors, expected {k}",
                    t.factors.len()
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::param("monomial coefficient must be finite"));
            }
            if let Some(f) = t.factors.iter().find(|f| !(f.power.is_finite() && f.power >= 0.0)) {
                return Err(Error::param(format!("exponent must be nonnegative, got {}", f.power)));
            }
        }
        let terms: Vec<Monomial> = terms.into_iter().filter(|t| t.coeff != 0.0).collect();
        let growth_p = terms
            .iter()
            .flat_map(|t| t.factors.iter().map(|f| f.power))
            .fold(0.0f64, f64::max)
            .max(1.0);
        let globally_even = terms
            .iter()
            .all(|t| t.factors.iter().filter(|f| f.odd).count() % 2 == 0);
        let even_each = terms.iter().all(|t| t.factors.iter().all(|f| !f.odd));
        Ok(TestFunction {
            k,
            repr: Representation::Monomials(terms),
            growth_p,
            globally_even,
            even_each,
        })
    }

    /// Arbitrary `f` with declared growth exponent and symmetry.
    pub fn general(
        name: impl Into<String>,
        k: usize,
        eval: Evaluator,
        growth_p: f64,
        globally_even: bool,
        even_each: bool,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("test function dimension k must be at least 1"));
        }
        if !(growth_p.is_finite() && growth_p > 0.0) {
            return Err(Error::param("growth exponent must be positive"));
        }
        Ok(TestFunction {
            k,
            repr: Representation::General {
                name: name.into(),
                eval,
            },
            growth_p,
            globally_even: globally_even || even_each,
            even_each,
        })
    }

    /// `|x|^p` on `R`.
    pub fn abs_power(p: f64) -> Result<Self> {
        Self::from_monomials(1, vec![Monomial::new(1.0, vec![Factor::abs(p)])])
    }

    /// `x^p` on `R` for an integer `p`.
    pub fn power(p: u32) -> Self {
        Self::from_monomials(1, vec![Monomial::new(1.0, vec![Factor::plain(p)])]).expect("valid monomial")
    }

    pub fn constant(k: usize, c: f64) -> Result<Self> {
        Self::from_monomials(k, vec![Monomial::new(c, vec![Factor::ONE; k])])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn representation(&self) -> &Representation {
        &self.repr
    }

    pub fn monomials(&self) -> Option<&[Monomial]> {
        match &self.repr {
            Representation::Monomials(t) => Some(t),
            Representation::General { .. } => None,
        }
    }

    pub fn growth_p(&self) -> f64 {
        self.growth_p
    }

    /// Constant `K_0` with `|f(x)| <= K_0 Π (1 + |x_j|^p)`, `p = growth_p`.
    /// Only known for the monomial form.
    pub fn growth_k0(&self) -> Option<f64> {
        self.monomials().map(|t| t.iter().map(|m| m.coeff.abs()).sum())
    }

    /// `f(-x) = f(x)`.
    pub fn is_globally_even(&self) -> bool {
        self.globally_even
    }

    /// `f` is even in each coordinate separately.
    pub fn is_even_in_each(&self) -> bool {
        self.even_each
    }

    /// Whether either symmetry hypothesis of the CLT holds: a globally even
    /// polynomial, or a smooth function even in each argument.
    pub fn satisfies_clt_symmetry(&self) -> bool {
        match &self.repr {
            Representation::Monomials(terms) => {
                let polynomial = terms
                    .iter()
                    .all(|t| t.factors.iter().all(|f| f.power.fract() == 0.0 && (f.odd == (f.power as u64 % 2 == 1))));
                self.even_each || (polynomial && self.globally_even)
            }
            Representation::General { .. } => self.even_each,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.k {
            return Err(Error::param(format!(
                "test function takes {} arguments, got {}",
                self.k,
                x.len()
            )));
        }
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match &self.repr {
            Representation::Monomials(terms) => terms.iter().map(|t| t.eval(x)).sum(),
            Representation::General { eval, .. } => eval(x),
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms = match &self.repr {
            Representation::General { name, .. } => return f.write_str(name),
            Representation::Monomials(t) => t,
        };
        if terms.is_empty() {
            return f.write_str("0");
        }
        let var = |j: usize| if self.k == 1 { "x".to_string() } else { format!("x{}", j + 1) };
        for (i, t) in terms.iter().enumerate() {
            let mut parts = Vec::new();
            for (j, fac) in t.factors.iter().enumerate().filter(|(_, f)| !f.is_one()) {
                let integral = fac.power.fract() == 0.0;
                let plain_ok = integral && fac.odd == (fac.power as u64 % 2 == 1);
                let pow = |s: String| {
                    if fac.power == 1.0 {
                        s
                    } else {
                        format!("{s}^{}", fac.power)
                    }
                };
                parts.push(if plain_ok {
                    pow(var(j))
                } else if !fac.odd {
                    pow(format!("|{}|", var(j)))
                } else {
                    format!("sgn({})*{}", var(j), pow(format!("|{}|", var(j))))
                });
            }
            let c = t.coeff;
            let sign = if c < 0.0 { "-" } else { "+" };
            if i == 0 {
                if c < 0.0 {
                    f.write_str("-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            let mag = c.abs();
            match (parts.is_empty(), mag == 1.0) {
                (true, _) => write!(f, "{mag}")?,
                (false, true) => f.write_str(&parts.join("*"))?,
                (false, false) => write!(f, "{mag}*{}", parts.join("*"))?,
            }
        }
        Ok(())
    }
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TestFunction(k = {}, f = {})", self.k, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::parse_test_function;
    use proptest::prelude::*;

    #[test]
    fn eval_examples() {
        assert_eq!(parse_test_function("x^2").unwrap().eval(&[3.0]).unwrap(), 9.0);
        assert_eq!(parse_test_function("x1^2*x2^2").unwrap().eval(&[2.0, 0.5]).unwrap(), 1.0);
        assert_eq!(parse_test_function("|x|^3").unwrap().eval(&[-2.0]).unwrap(), 8.0);
        assert_eq!(parse_test_function("x^3").unwrap().eval(&[-2.0]).unwrap(), -8.0);
    }

    #[test]
    fn dimension_mismatch() {
        let f = parse_test_function("x1^2*x2^2").unwrap();
        assert!(matches!(f.eval(&[1.0]), Err(Error::Parameter(_))));
    }

    #[test]
    fn symmetry_metadata() {
        let f = parse_test_function("x1*x2").unwrap();
        assert!(f.is_globally_even());
        assert!(!f.is_even_in_each());
        assert!(f.satisfies_clt_symmetry());

        let f = parse_test_function("x^3 + x^2").unwrap();
        assert!(!f.is_globally_even());
        assert!(!f.satisfies_clt_symmetry());

        let f = parse_test_function("|x1|^1.5*x2^2").unwrap();
        assert!(f.is_even_in_each());
        assert!(f.satisfies_clt_symmetry());
    }

    #[test]
    fn merged_factor_parity() {
        let sq = Factor::plain(1).merge(Factor::plain(1));
        assert_eq!(sq, Factor::plain(2));
        let odd = Factor::plain(1).merge(Factor::abs(0.5));
        assert!(odd.odd);
        assert_eq!(odd.eval(-4.0), -8.0);
    }

    #[test]
    fn display_round_trips_through_parser() {
        for s in ["x^2", "|x|^3", "x1^2*x2^2", "x^4 + 2*x^2", "-x1*x2 + 0.5", "|x1|^1.5*x3"] {
            let f = parse_test_function(s).unwrap();
            let g = parse_test_function(&f.to_string()).unwrap();
            assert_eq!(f.monomials(), g.monomials(), "{s} -> {f}");
        }
    }

    proptest! {
        #[test]
        fn growth_bound_holds(
            coeffs in proptest::collection::vec(-3.0f64..3.0, 1..4),
            pows in proptest::collection::vec((0u32..5, 0.0f64..4.0, any::<bool>()), 6),
            x in proptest::collection::vec(-20.0f64..20.0, 2),
        ) {
            let terms: Vec<Monomial> = coeffs.iter().enumerate().map(|(i, &c)| {
                let fac = |j: usize| {
                    let (ip, rp, use_abs) = pows[(2 * i + j) % pows.len()];
                    if use_abs { Factor::abs(rp) } else { Factor::plain(ip) }
                };
                Monomial::new(c, vec![fac(0), fac(1)])
            }).collect();
            let f = TestFunction::from_monomials(2, terms).unwrap();
            let p = f.growth_p();
            let k0 = f.growth_k0().unwrap();
            let bound = k0 * x.iter().map(|v| 1.0 + v.abs().powf(p)).product::<f64>();
            prop_assert!(f.eval(&x).unwrap().abs() <= bound * (1.0 + 1e-12));
        }
    }
}
