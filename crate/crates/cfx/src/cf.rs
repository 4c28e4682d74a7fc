//! Continued fraction strings, their matrix encodings, and the exact
//! interval/measure machinery built on top of them.
//!
//! A *string* `[h; c1, c2, ..., cn]` stands for the matrix product
//! `A_h · J · A_{c1} · J · A_{c2} · ... · J · A_{cn}` where
//! `A_i = (1, i; 0, 1)` and `J = (0, 1; 1, 0)`. Acting on a real
//! `x ∈ [0, 1)` on the right, the string computes
//! `h + 1/(c1 + 1/(c2 + ... + 1/(cn + x)))`, i.e. it prepends a partial
//! continued fraction expansion. A string is *proper* when `h = 0`; a
//! proper string names a cylinder set of the Gauss map.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{CfError, Result};

/// A single partial quotient. Tail digits are always `>= 1`; the newtype
/// guards that invariant at API boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digit(u64);

impl Digit {
    pub fn new(value: u64) -> Result<Self> {
        if value == 0 {
            return Err(CfError::InvalidDigit(value));
        }
        Ok(Digit(value))
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Digit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A continued fraction string: an integer head followed by tail digits,
/// each `>= 1`. The empty string `[0;]` is the identity.
///
/// Heads are unrestricted integers in general; strings *emitted by the
/// transducer* additionally satisfy `head >= -1`, and when the head is
/// `-1` the tail is nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CFString {
    head: i64,
    tail: Vec<u64>,
}

impl CFString {
    /// The empty string `[0;]`, i.e. the identity matrix.
    pub fn empty() -> Self {
        CFString { head: 0, tail: Vec::new() }
    }

    pub fn new(head: i64, tail: Vec<u64>) -> Result<Self> {
        if let Some(&bad) = tail.iter().find(|&&d| d == 0) {
            return Err(CfError::InvalidDigit(bad));
        }
        Ok(CFString { head, tail })
    }

    /// A proper string (head 0) from raw digits.
    pub fn proper(tail: Vec<u64>) -> Result<Self> {
        Self::new(0, tail)
    }

    pub fn head(&self) -> i64 {
        self.head
    }

    pub fn tail(&self) -> &[u64] {
        &self.tail
    }

    /// Number of tail digits. The head does not count towards the length.
    pub fn len(&self) -> usize {
        self.tail.len()
    }

    pub fn is_empty(&self) -> bool {
        self.head == 0 && self.tail.is_empty()
    }

    pub fn is_proper(&self) -> bool {
        self.head == 0
    }

    /// Appends one digit without any junction logic (the digit is a new
    /// rightmost factor `J · A_d`).
    pub fn push(&mut self, d: Digit) {
        self.tail.push(d.get());
    }

    /// The convergents `p_k / q_k` of the string, starting with the head
    /// convergent `p_0/q_0 = head/1`. Computed by the standard
    /// second-order recurrence in exact integers.
    pub fn convergents(&self) -> Vec<(BigInt, BigInt)> {
        let mut out = Vec::with_capacity(self.tail.len() + 1);
        let mut p_prev = BigInt::one();
        let mut q_prev = BigInt::zero();
        let mut p = BigInt::from(self.head);
        let mut q = BigInt::one();
        out.push((p.clone(), q.clone()));
        for &c in &self.tail {
            let c = BigInt::from(c);
            let p_next = &c * &p + &p_prev;
            let q_next = &c * &q + &q_prev;
            p_prev = p;
            q_prev = q;
            p = p_next;
            q = q_next;
            out.push((p.clone(), q.clone()));
        }
        out
    }

    /// The exact value of the string applied to `x`, i.e.
    /// `M_s · x = (p_{n-1} x + p_n) / (q_{n-1} x + q_n)`.
    pub fn value_at(&self, x: &BigRational) -> Result<BigRational> {
        crate::mat::string_to_matrix(self).apply(x)
    }

    /// Exact value of a (finite) string, `M_s · 0 = p_n / q_n`.
    pub fn value(&self) -> BigRational {
        let (p, q) = self.convergents().pop().expect("at least the head convergent");
        BigRational::new(p, q)
    }

    /// Canonicalizes a rational expansion in place: a trailing tail digit
    /// `1` is folded into its predecessor (`[..., a, 1] -> [..., a + 1]`),
    /// so nonempty tails end with a digit `>= 2`.
    pub fn canonicalize(&mut self) {
        while self.tail.last() == Some(&1) {
            self.tail.pop();
            match self.tail.last_mut() {
                Some(last) => *last += 1,
                None => {
                    self.head += 1;
                    break;
                }
            }
        }
    }
}

impl fmt::Display for CFString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{};", self.head)?;
        for (i, d) in self.tail.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// Concatenates two strings, resolving the junction so that the result
/// is again a well-formed string with the same matrix product:
/// `M_result = M_s · M_t`.
///
/// The junction rules are the two generator identities
///
/// * `A_a · A_b = A_{a+b}` — when the last digit of `s` and the head of
///   `t` sum to something positive they merge into one digit;
/// * `A_u · J · A_1 · A_{-1} · J · A_v = A_{u+v}` — when they sum to
///   zero (last digit `1`, head `-1`) both vanish and the two
///   neighbouring terms merge.
///
/// The head of `t` must be `>= -1`; deeper negative heads never occur in
/// emitted strings and have no junction rule.
///
/// ```
/// use cfx::cf::{concat, CFString};
/// use cfx::mat::string_to_matrix;
///
/// let s = CFString::new(2, vec![3, 1]).unwrap();
/// let t = CFString::new(-1, vec![4, 5]).unwrap();
/// let joined = concat(&s, &t).unwrap();
/// // [2; 3, 1] ++ [-1; 4, 5]: the 1/-1 pair annihilates, 3 and 4 merge.
/// assert_eq!(joined, CFString::new(2, vec![7, 5]).unwrap());
/// // The rewrite is exactly matrix multiplication.
/// assert_eq!(
///     string_to_matrix(&joined),
///     string_to_matrix(&s).mul(&string_to_matrix(&t))
/// );
/// ```
pub fn concat(s: &CFString, t: &CFString) -> Result<CFString> {
    if t.head < -1 {
        return Err(CfError::Internal(format!(
            "concat: right operand head {} < -1 has no junction rule",
            t.head
        )));
    }
    let mut head = s.head;
    let mut tail = s.tail.clone();
    let mut rest: &[u64] = &t.tail;

    if let Some(last) = tail.last_mut() {
        let sum = *last as i128 + t.head as i128;
        if sum > 0 {
            *last = u64::try_from(sum).map_err(|_| CfError::DigitOverflow(sum.to_string()))?;
        } else {
            // sum == 0: last digit is 1, incoming head is -1. Both cancel
            // and the neighbours merge.
            tail.pop();
            let (&d1, r) = rest
                .split_first()
                .ok_or_else(|| CfError::Internal("concat: [-1;] with empty tail".into()))?;
            rest = r;
            match tail.last_mut() {
                Some(prev) => {
                    let merged = *prev as u128 + d1 as u128;
                    *prev = u64::try_from(merged)
                        .map_err(|_| CfError::DigitOverflow(merged.to_string()))?;
                }
                None => {
                    head = head
                        .checked_add(i64::try_from(d1).map_err(|_| {
                            CfError::HeadOverflow(d1.to_string())
                        })?)
                        .ok_or_else(|| CfError::HeadOverflow(format!("{head} + {d1}")))?;
                }
            }
        }
    } else {
        head = head
            .checked_add(t.head)
            .ok_or_else(|| CfError::HeadOverflow(format!("{head} + {}", t.head)))?;
    }
    tail.extend_from_slice(rest);
    CFString::new(head, tail)
}

/// Euclidean expansion of the rational `p/q` (`q != 0`) as a canonical
/// string: `p/q = [a0; a1, ..., an]` with `an >= 2` when the tail is
/// nonempty.
pub fn rational_to_cf(p: &BigInt, q: &BigInt) -> Result<CFString> {
    if q.is_zero() {
        return Err(CfError::ZeroDeterminant(format!("{p}/{q}")));
    }
    let (mut p, q) = if q.is_negative() {
        (-p.clone(), -q.clone())
    } else {
        (p.clone(), q.clone())
    };
    let a0 = num_integer::Integer::div_floor(&p, &q);
    let head = i64::try_from(&a0).map_err(|_| CfError::HeadOverflow(a0.to_string()))?;
    p -= &a0 * &q;
    // Now 0 <= p < q; run Euclid on (q, p).
    let mut tail = Vec::new();
    let (mut num, mut den) = (q, p);
    while !den.is_zero() {
        let a = &num / &den;
        let r = &num - &a * &den;
        tail.push(u64::try_from(&a).map_err(|_| CfError::DigitOverflow(a.to_string()))?);
        num = den;
        den = r;
    }
    // Euclid always terminates with a final quotient >= 2 (remainders
    // decrease strictly), so the string is already canonical.
    CFString::new(head, tail)
}

/// One endpoint of an exact interval, together with whether the endpoint
/// itself belongs to the set.
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub value: BigRational,
    pub closed: bool,
}

/// Compares two rationals by cross-multiplication. The `Ord` impl on
/// `BigRational` recurses once per shared continued-fraction digit of
/// the two values, which overflows the stack when comparing nearly
/// equal numbers with expansions thousands of digits long; this
/// version uses constant stack depth.
pub fn cmp_rationals(a: &BigRational, b: &BigRational) -> std::cmp::Ordering {
    debug_assert!(a.denom().is_positive() && b.denom().is_positive());
    (a.numer() * b.denom()).cmp(&(b.numer() * a.denom()))
}

/// An exact interval with rational endpoints, `lo < hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct CFInterval {
    pub lo: Endpoint,
    pub hi: Endpoint,
}

impl CFInterval {
    pub fn new(lo: Endpoint, hi: Endpoint) -> Result<Self> {
        if cmp_rationals(&lo.value, &hi.value) != std::cmp::Ordering::Less {
            return Err(CfError::Internal(format!(
                "interval endpoints out of order: {} >= {}",
                lo.value, hi.value
            )));
        }
        Ok(CFInterval { lo, hi })
    }

    pub fn width(&self) -> BigRational {
        &self.hi.value - &self.lo.value
    }

    pub fn contains(&self, x: &BigRational) -> bool {
        use std::cmp::Ordering::*;
        let lo = cmp_rationals(x, &self.lo.value);
        let hi = cmp_rationals(x, &self.hi.value);
        (lo == Greater || (self.lo.closed && lo == Equal))
            && (hi == Less || (self.hi.closed && hi == Equal))
    }

    /// True when `self` is contained in `other`.
    pub fn subset_of(&self, other: &CFInterval) -> bool {
        use std::cmp::Ordering::*;
        let lo = cmp_rationals(&self.lo.value, &other.lo.value);
        let hi = cmp_rationals(&self.hi.value, &other.hi.value);
        let lo_ok = lo == Greater || (lo == Equal && (other.lo.closed || !self.lo.closed));
        let hi_ok = hi == Less || (hi == Equal && (other.hi.closed || !self.hi.closed));
        lo_ok && hi_ok
    }
}

impl fmt::Display for CFInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}, {}{}",
            if self.lo.closed { '[' } else { '(' },
            self.lo.value,
            self.hi.value,
            if self.hi.closed { ']' } else { ')' },
        )
    }
}

/// The cylinder set of a proper string: all `x ∈ [0, 1)` whose expansion
/// begins with the string's digits.
#[derive(Debug, Clone)]
pub struct Cylinder {
    pub string: CFString,
    pub interval: CFInterval,
    pub measure: f64,
}

impl Cylinder {
    pub fn new(string: CFString) -> Result<Self> {
        let interval = cylinder_interval(&string)?;
        let measure = gauss_measure(&string)?;
        Ok(Cylinder { string, interval, measure })
    }
}

/// The exact interval of the cylinder named by a proper string. One
/// endpoint is the last convergent `p_n/q_n` (which belongs to the
/// cylinder, hence closed), the other is the mediant
/// `(p_n + p_{n-1})/(q_n + q_{n-1})` (excluded, hence open). Which one is
/// smaller alternates with the depth. The empty string names `[0, 1)`.
pub fn cylinder_interval(s: &CFString) -> Result<CFInterval> {
    if !s.is_proper() {
        return Err(CfError::Internal(format!(
            "cylinder_interval: {s} is not a proper string"
        )));
    }
    let conv = s.convergents();
    let n = conv.len() - 1;
    if n == 0 {
        return Ok(CFInterval {
            lo: Endpoint { value: BigRational::zero(), closed: true },
            hi: Endpoint { value: BigRational::one(), closed: false },
        });
    }
    let (pn, qn) = &conv[n];
    let (pm, qm) = &conv[n - 1];
    let v_conv = BigRational::new(pn.clone(), qn.clone());
    let v_med = BigRational::new(pn + pm, qn + qm);
    if cmp_rationals(&v_conv, &v_med) == std::cmp::Ordering::Less {
        CFInterval::new(
            Endpoint { value: v_conv, closed: true },
            Endpoint { value: v_med, closed: false },
        )
    } else {
        CFInterval::new(
            Endpoint { value: v_med, closed: false },
            Endpoint { value: v_conv, closed: true },
        )
    }
}

/// The Gauss measure of the cylinder of a proper string:
/// `μ(A) = (1/log 2) ∫_A dx / (1 + x)`, evaluated in closed form as
/// `log2((1 + hi) / (1 + lo))`. The ratio is formed exactly before the
/// single floating point log, so deep cylinders do not lose precision to
/// cancellation.
pub fn gauss_measure(s: &CFString) -> Result<f64> {
    let iv = cylinder_interval(s)?;
    let one = BigRational::one();
    let ratio = (&one + &iv.hi.value) / (&one + &iv.lo.value);
    Ok(ratio
        .to_f64()
        .ok_or_else(|| CfError::Internal("measure ratio out of f64 range".into()))?
        .log2())
}

/// `μ` of the rank-1 cylinder `[k]`: `log2(1 + 1/(k(k+2)))`.
pub fn gauss_measure_digit(k: u64) -> f64 {
    let k = k as f64;
    (1.0 / (k * (k + 2.0))).ln_1p() / std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(head: i64, tail: &[u64]) -> CFString {
        CFString::new(head, tail.to_vec()).unwrap()
    }

    #[test]
    fn convergents_of_golden_prefix() {
        let golden = s(0, &[1, 1, 1, 1]);
        let conv = golden.convergents();
        let pairs: Vec<(i64, i64)> = conv
            .iter()
            .map(|(p, q)| (p.try_into().unwrap(), q.try_into().unwrap()))
            .collect();
        assert_eq!(pairs, vec![(0, 1), (1, 1), (1, 2), (2, 3), (3, 5)]);
    }

    #[test]
    fn convergents_examples() {
        let conv = s(0, &[2, 3]).convergents();
        let pairs: Vec<(i64, i64)> = conv
            .iter()
            .map(|(p, q)| (p.try_into().unwrap(), q.try_into().unwrap()))
            .collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2), (3, 7)]);
        let conv = s(2, &[]).convergents();
        assert_eq!(conv.len(), 1);
        assert_eq!(conv[0].0, BigInt::from(2));
    }

    #[test]
    fn concat_plain_append() {
        // [0;2].[0;3] = [0;2,3]
        let r = concat(&s(0, &[2]), &s(0, &[3])).unwrap();
        assert_eq!(r, s(0, &[2, 3]));
    }

    #[test]
    fn concat_positive_junction_merges_digits() {
        // [0;2].[3;4]: trailing 2 and head 3 merge to 5.
        let r = concat(&s(0, &[2]), &s(3, &[4])).unwrap();
        assert_eq!(r, s(0, &[5, 4]));
    }

    #[test]
    fn concat_zero_junction() {
        // [0;2,1].[-1;1,5] = [0;3,5]
        let r = concat(&s(0, &[2, 1]), &s(-1, &[1, 5])).unwrap();
        assert_eq!(r, s(0, &[3, 5]));
    }

    #[test]
    fn concat_annihilation() {
        // [-1;1].[-1;1] = [0;]
        let r = concat(&s(-1, &[1]), &s(-1, &[1])).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn concat_into_empty_left() {
        let r = concat(&CFString::empty(), &s(-1, &[1, 5])).unwrap();
        assert_eq!(r, s(-1, &[1, 5]));
    }

    #[test]
    fn concat_matches_matrix_product() {
        use crate::mat::string_to_matrix;
        let cases = [
            (s(0, &[2, 1]), s(-1, &[1, 5])),
            (s(0, &[2]), s(0, &[3])),
            (s(1, &[2, 1]), s(-1, &[3])),
            (s(-1, &[1]), s(-1, &[1])),
            (s(0, &[7, 1]), s(-1, &[1])),
            (s(0, &[]), s(2, &[4])),
        ];
        for (a, b) in cases {
            let r = concat(&a, &b).unwrap();
            let lhs = string_to_matrix(&a).mul(&string_to_matrix(&b));
            assert_eq!(string_to_matrix(&r), lhs, "concat({a}, {b}) = {r}");
        }
    }

    #[test]
    fn rational_expansions() {
        let cf = |p: i64, q: i64| rational_to_cf(&BigInt::from(p), &BigInt::from(q)).unwrap();
        assert_eq!(cf(3, 7), s(0, &[2, 3]));
        assert_eq!(cf(6, 7), s(0, &[1, 6]));
        assert_eq!(cf(-1, 3), s(-1, &[1, 2]));
        assert_eq!(cf(1, 1), s(1, &[]));
        assert_eq!(cf(0, 5), s(0, &[]));
        assert_eq!(cf(21, 34), s(0, &[1, 1, 1, 1, 1, 1, 2]));
    }

    #[test]
    fn rational_to_cf_roundtrip_is_canonical() {
        for p in -40i64..40 {
            for q in 1i64..40 {
                let cf = rational_to_cf(&BigInt::from(p), &BigInt::from(q)).unwrap();
                assert_ne!(cf.tail().last(), Some(&1), "canonical form for {p}/{q}");
                let v = cf.value();
                assert_eq!(v, BigRational::new(BigInt::from(p), BigInt::from(q)));
            }
        }
    }

    #[test]
    fn rank_one_measures() {
        // μ(C_[1]) = log2(4/3), μ(C_[2]) = log2(9/8).
        let m1 = gauss_measure(&s(0, &[1])).unwrap();
        assert!((m1 - (4.0f64 / 3.0).log2()).abs() < 1e-15);
        let m2 = gauss_measure(&s(0, &[2])).unwrap();
        assert!((m2 - (9.0f64 / 8.0).log2()).abs() < 1e-15);
        assert!((m1 - gauss_measure_digit(1)).abs() < 1e-15);
        assert!((m2 - gauss_measure_digit(2)).abs() < 1e-15);
    }

    #[test]
    fn rank_two_measure() {
        // C_[1,2] = (one of the) intervals with μ = log2(21/20).
        let m = gauss_measure(&s(0, &[1, 2])).unwrap();
        assert!((m - (21.0f64 / 20.0).log2()).abs() < 1e-15, "{m}");
    }

    #[test]
    fn empty_cylinder_is_unit_interval() {
        let iv = cylinder_interval(&CFString::empty()).unwrap();
        assert_eq!(iv.lo.value, BigRational::zero());
        assert_eq!(iv.hi.value, BigRational::one());
        assert!((gauss_measure(&CFString::empty()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cylinder_of_single_digit() {
        // C_[2] = (1/3, 1/2]
        let iv = cylinder_interval(&s(0, &[2])).unwrap();
        assert_eq!(iv.lo.value, BigRational::new(1.into(), 3.into()));
        assert!(!iv.lo.closed);
        assert_eq!(iv.hi.value, BigRational::new(1.into(), 2.into()));
        assert!(iv.hi.closed);
    }

    #[test]
    fn measure_additivity_over_refinement() {
        // μ(C_s) = Σ_a μ(C_{s·[a]}) + tail, tail <= log2(1 + 1/(A+1)).
        for base in [s(0, &[]), s(0, &[1]), s(0, &[2, 1])] {
            let total = gauss_measure(&base).unwrap();
            let cap = 10_000u64;
            let mut sum = 0.0;
            for a in 1..=cap {
                let refined = concat(&base, &s(0, &[a])).unwrap();
                sum += gauss_measure(&refined).unwrap();
            }
            let tail = total - sum;
            let bound = (1.0 / (cap as f64 + 1.0)).ln_1p() / std::f64::consts::LN_2;
            assert!(tail >= -1e-9, "negative tail {tail} for {base}");
            // The tail within a cylinder is at most the unconditional
            // rank-1 tail bound (the conditional density is bounded by a
            // constant multiple of the unconditional one).
            assert!(tail <= 2.0 * bound, "tail {tail} > bound {bound} for {base}");
        }
    }

    #[test]
    fn canonicalize_folds_trailing_one() {
        let mut a = s(0, &[2, 1]);
        a.canonicalize();
        assert_eq!(a, s(0, &[3]));
        let mut b = s(0, &[1]);
        b.canonicalize();
        assert_eq!(b, s(1, &[]));
    }

    #[test]
    fn digit_zero_rejected() {
        assert!(Digit::new(0).is_err());
        assert!(CFString::new(0, vec![1, 0, 2]).is_err());
    }
}
