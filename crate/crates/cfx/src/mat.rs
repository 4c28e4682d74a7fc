//! Exact 2x2 integer matrices and their Möbius action.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::cf::CFString;
use crate::error::{CfError, Result};

/// A 2x2 matrix with arbitrary-precision integer entries,
/// `(a, b; c, d)`, acting on reals by `x -> (a x + b) / (c x + d)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mat2 {
    pub a: BigInt,
    pub b: BigInt,
    pub c: BigInt,
    pub d: BigInt,
}

impl Mat2 {
    pub fn new(a: impl Into<BigInt>, b: impl Into<BigInt>, c: impl Into<BigInt>, d: impl Into<BigInt>) -> Self {
        Mat2 { a: a.into(), b: b.into(), c: c.into(), d: d.into() }
    }

    pub fn identity() -> Self {
        Mat2::new(1, 0, 0, 1)
    }

    /// The generator `A_i = (1, i; 0, 1)`, `x -> x + i`.
    pub fn gen_a(i: i64) -> Self {
        Mat2::new(1, i, 0, 1)
    }

    /// The generator `J = (0, 1; 1, 0)`, `x -> 1/x`.
    pub fn gen_j() -> Self {
        Mat2::new(0, 1, 1, 0)
    }

    pub fn det(&self) -> BigInt {
        &self.a * &self.d - &self.b * &self.c
    }

    pub fn mul(&self, rhs: &Mat2) -> Mat2 {
        Mat2 {
            a: &self.a * &rhs.a + &self.b * &rhs.c,
            b: &self.a * &rhs.b + &self.b * &rhs.d,
            c: &self.c * &rhs.a + &self.d * &rhs.c,
            d: &self.c * &rhs.b + &self.d * &rhs.d,
        }
    }

    pub fn neg(&self) -> Mat2 {
        Mat2 { a: -&self.a, b: -&self.b, c: -&self.c, d: -&self.d }
    }

    /// The Möbius action `M · x = (a x + b) / (c x + d)`. Errors with
    /// [`CfError::Pole`] when the denominator vanishes at `x`.
    pub fn apply(&self, x: &BigRational) -> Result<BigRational> {
        let den = BigRational::from(self.c.clone()) * x + BigRational::from(self.d.clone());
        if den.is_zero() {
            return Err(CfError::Pole);
        }
        let num = BigRational::from(self.a.clone()) * x + BigRational::from(self.b.clone());
        Ok(num / den)
    }

    /// Compact fixed-width form, when every entry fits in `i128`. State
    /// matrices always do (their entries are bounded by `|det|`).
    pub fn to_small(&self) -> Option<[i128; 4]> {
        Some([
            i128::try_from(&self.a).ok()?,
            i128::try_from(&self.b).ok()?,
            i128::try_from(&self.c).ok()?,
            i128::try_from(&self.d).ok()?,
        ])
    }

    pub fn from_small(m: [i128; 4]) -> Self {
        Mat2::new(m[0], m[1], m[2], m[3])
    }

    /// Parses the CLI form `a,b;c,d`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || CfError::Format(format!("matrix must look like 'a,b;c,d', got '{text}'"));
        let (top, bottom) = text.split_once(';').ok_or_else(bad)?;
        let mut vals = Vec::new();
        for part in top.split(',').chain(bottom.split(',')) {
            vals.push(part.trim().parse::<BigInt>().map_err(|_| bad())?);
        }
        if vals.len() != 4 {
            return Err(bad());
        }
        let d = vals.pop().unwrap();
        let c = vals.pop().unwrap();
        let b = vals.pop().unwrap();
        let a = vals.pop().unwrap();
        Ok(Mat2 { a, b, c, d })
    }
}

impl fmt::Display for Mat2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{};{},{})", self.a, self.b, self.c, self.d)
    }
}

/// The matrix encoded by a string:
/// `M_s = A_h · J · A_{c1} · ... · J · A_{cn}`. Its columns are the last
/// two convergents, `M_s = (p_{n-1}, p_n; q_{n-1}, q_n)`.
pub fn string_to_matrix(s: &CFString) -> Mat2 {
    let conv = s.convergents();
    let n = conv.len() - 1;
    let (pn, qn) = conv[n].clone();
    let (pm, qm) = if n == 0 {
        (BigInt::one(), BigInt::zero())
    } else {
        conv[n - 1].clone()
    };
    Mat2 { a: pm, b: pn, c: qm, d: qn }
}

/// Determinant sign of a string matrix: `det M_s = (-1)^n` for `n` tail
/// digits.
pub fn string_det(s: &CFString) -> i64 {
    if s.len() % 2 == 0 {
        1
    } else {
        -1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators() {
        assert_eq!(Mat2::gen_a(3).det(), BigInt::one());
        assert_eq!(Mat2::gen_j().det(), BigInt::from(-1));
        assert_eq!(Mat2::gen_a(0), Mat2::identity());
    }

    #[test]
    fn string_matrix_examples() {
        let s = CFString::new(0, vec![2, 3]).unwrap();
        assert_eq!(string_to_matrix(&s), Mat2::new(1, 3, 2, 7));
        let s = CFString::new(0, vec![1]).unwrap();
        assert_eq!(string_to_matrix(&s), Mat2::new(0, 1, 1, 1));
        assert_eq!(string_to_matrix(&CFString::empty()), Mat2::identity());
        let s = CFString::new(2, vec![]).unwrap();
        assert_eq!(string_to_matrix(&s), Mat2::gen_a(2));
    }

    #[test]
    fn string_matrix_is_generator_product() {
        let s = CFString::new(-1, vec![1, 4, 2]).unwrap();
        let mut expect = Mat2::gen_a(-1);
        for &d in s.tail() {
            expect = expect.mul(&Mat2::gen_j()).mul(&Mat2::gen_a(d as i64));
        }
        assert_eq!(string_to_matrix(&s), expect);
    }

    #[test]
    fn annihilation_pair_squares_to_identity() {
        // (A_{-1} J A_1)^2 = I
        let w = Mat2::gen_a(-1).mul(&Mat2::gen_j()).mul(&Mat2::gen_a(1));
        assert_eq!(w.mul(&w), Mat2::identity());
    }

    #[test]
    fn det_sign_alternates() {
        let s = CFString::new(0, vec![5]).unwrap();
        assert_eq!(string_to_matrix(&s).det(), BigInt::from(string_det(&s)));
        let s = CFString::new(0, vec![5, 2]).unwrap();
        assert_eq!(string_to_matrix(&s).det(), BigInt::from(string_det(&s)));
    }

    #[test]
    fn apply_and_pole() {
        let m = Mat2::new(1, 0, 2, -1);
        let x = BigRational::new(1.into(), 2.into());
        assert!(matches!(m.apply(&x), Err(CfError::Pole)));
        let x = BigRational::new(1.into(), 3.into());
        assert_eq!(m.apply(&x).unwrap(), BigRational::new((-1).into(), 1.into()));
    }

    #[test]
    fn parse_roundtrip() {
        let m = Mat2::parse("2,0;0,1").unwrap();
        assert_eq!(m, Mat2::new(2, 0, 0, 1));
        assert!(Mat2::parse("2,0,0,1").is_err());
        assert!(Mat2::parse("2,x;0,1").is_err());
    }
}
