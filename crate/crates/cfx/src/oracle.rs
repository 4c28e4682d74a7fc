//! Independent exact verification of the transducer.
//!
//! Given an input prefix, the set of compatible inputs is the prefix's
//! cylinder interval. Pushing that interval through the Möbius map of
//! `M` (exact rational endpoints) and extracting the continued fraction
//! digits shared by *every* point of the image yields digits of `Mx`
//! that are certified unconditionally — with no reference to the
//! transducer being tested. Deliberately slow and exact: there is no
//! floating point anywhere on this path.

use num_rational::BigRational;
use num_traits::{Signed, Zero};

use crate::cf::{cylinder_interval, CFInterval, CFString, Digit, Endpoint};
use crate::error::{CfError, Result};
use crate::lab::{sample_source, SourceSpec};
use crate::mat::Mat2;
use crate::transducer::{head_normalize, TransducerState, DEFAULT_HOLDBACK};

/// The exact image `M · C` of a prefix cylinder `C`, as an interval
/// with rational endpoints. Fails if the pole of `M` touches the
/// cylinder (the image would be unbounded); a longer prefix shrinks the
/// cylinder away from the pole whenever the input itself is not the
/// pole.
pub fn image_interval(prefix: &CFString, m: &Mat2) -> Result<CFInterval> {
    if m.det().is_zero() {
        return Err(CfError::ZeroDeterminant(m.to_string()));
    }
    let cyl = cylinder_interval(prefix)?;
    let den = |x: &BigRational| BigRational::from(m.c.clone()) * x + BigRational::from(m.d.clone());
    let d_lo = den(&cyl.lo.value);
    let d_hi = den(&cyl.hi.value);
    if d_lo.is_zero() || d_hi.is_zero() || (d_lo.is_positive() != d_hi.is_positive()) {
        return Err(CfError::Pole);
    }
    let y_lo = Endpoint {
        value: m.apply(&cyl.lo.value)?,
        closed: cyl.lo.closed,
    };
    let y_hi = Endpoint {
        value: m.apply(&cyl.hi.value)?,
        closed: cyl.hi.closed,
    };
    // No pole inside, so M is monotone on the cylinder; it is
    // decreasing when det and denominator signs disagree.
    if crate::cf::cmp_rationals(&y_lo.value, &y_hi.value) == std::cmp::Ordering::Less {
        CFInterval::new(y_lo, y_hi)
    } else {
        CFInterval::new(y_hi, y_lo)
    }
}

/// Both continued fraction expansions of a rational: the canonical one
/// (`rational_to_cf` never ends in a tail digit 1) and the alternate
/// representative `[…, d] = […, d−1, 1]` (for an integer,
/// `[h] = [h−1; 1]`).
fn representatives(x: &BigRational) -> Result<Vec<CFString>> {
    let canon = crate::cf::rational_to_cf(x.numer(), x.denom())?;
    let alt = if canon.tail().is_empty() {
        CFString::new(canon.head() - 1, vec![1])?
    } else {
        let mut t = canon.tail().to_vec();
        let last = t.pop().expect("nonempty");
        debug_assert!(last >= 2, "canonical expansions end in a digit >= 2");
        t.push(last - 1);
        t.push(1);
        CFString::new(canon.head(), t)?
    };
    Ok(vec![canon, alt])
}

fn common_prefix(a: &CFString, b: &CFString) -> Option<CFString> {
    if a.head() != b.head() {
        return None;
    }
    let shared: Vec<u64> = a
        .tail()
        .iter()
        .zip(b.tail())
        .take_while(|(x, y)| x == y)
        .map(|(x, _)| *x)
        .collect();
    CFString::new(a.head(), shared).ok()
}

/// The digits shared by every point of an interval: the interval lies
/// between its endpoints, so any expansion prefix common to *some*
/// representative of each endpoint brackets every interior point into
/// that prefix's cylinder. Taking the best of the four representative
/// pairings avoids the boundary artifact where a cylinder endpoint
/// carries the shared digits only in its non-canonical expansion.
/// `None` when not even the integer part is pinned down.
fn interval_digits(iv: &CFInterval) -> Result<Option<CFString>> {
    let lo_reps = representatives(&iv.lo.value)?;
    let hi_reps = representatives(&iv.hi.value)?;
    let mut best: Option<CFString> = None;
    for a in &lo_reps {
        for b in &hi_reps {
            if let Some(c) = common_prefix(a, b) {
                if best
                    .as_ref()
                    .map(|cur| c.tail().len() > cur.tail().len())
                    .unwrap_or(true)
                {
                    best = Some(c);
                }
            }
        }
    }
    Ok(best)
}

/// Digits of `Mx` guaranteed for every `x` in a prefix cylinder.
#[derive(Debug, Clone)]
pub struct CertifiedPrefix {
    /// The certified string (head plus `certified_len` tail digits).
    /// Meaningless when `head_certified` is false.
    pub digits: CFString,
    /// Whether even the integer part is pinned down by the interval.
    pub head_certified: bool,
    /// Number of certified tail digits.
    pub certified_len: usize,
    /// The pre-image cylinder interval.
    pub witness: CFInterval,
    /// Its exact image under `M`.
    pub image: CFInterval,
}

/// Certifies an expansion prefix of `Mx` from an expansion prefix of
/// `x`: every real in the image interval has a continued fraction
/// beginning with the returned digits.
///
/// ```
/// use cfx::cf::CFString;
/// use cfx::mat::Mat2;
/// use cfx::oracle::certified_digits;
///
/// // 160 golden-ratio digits certify 50+ digits of the doubled value.
/// let prefix = CFString::proper(vec![1; 160]).unwrap();
/// let cert = certified_digits(&prefix, &Mat2::new(2, 0, 0, 1)).unwrap();
/// assert!(cert.head_certified);
/// assert_eq!(cert.digits.head(), 1);
/// assert!(cert.certified_len >= 50);
/// assert!(cert.digits.tail()[..40].iter().all(|&d| d == 4));
/// ```
pub fn certified_digits(prefix: &CFString, m: &Mat2) -> Result<CertifiedPrefix> {
    let witness = cylinder_interval(prefix)?;
    let image = image_interval(prefix, m)?;
    let (digits, head_certified) = match interval_digits(&image)? {
        Some(d) => (d, true),
        None => (CFString::empty(), false),
    };
    let certified_len = digits.tail().len();
    Ok(CertifiedPrefix {
        digits,
        head_certified,
        certified_len,
        witness,
        image,
    })
}

/// Outcome of replaying a digit stream through both the streaming
/// transducer and the interval oracle.
#[derive(Debug)]
pub struct VerifyReport {
    /// Input digits consumed.
    pub n: u64,
    /// Tail digits the oracle certified from the full input prefix.
    pub certified_len: usize,
    /// Finalized transducer output digits available for comparison.
    pub emitted_len: usize,
    /// Compared positions that agreed (all of them when no mismatch).
    pub match_len: usize,
    /// 1-based tail position of the first disagreement, if any.
    pub first_mismatch: Option<usize>,
    pub heads_match: bool,
    /// `certified_len` at each intermediate checkpoint — must be
    /// nondecreasing (refining the cylinder never retracts digits).
    pub refinement: Vec<usize>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.heads_match && self.first_mismatch.is_none()
    }
}

/// Feeds `n` digits from the source to the streaming transducer and,
/// independently, certifies digits of the image through the interval
/// oracle at growing input prefixes; compares the two streams.
/// Divergence is reported, not raised: a mismatch here means a bug in
/// one of the two engines.
pub fn verify_transduction(m: &Mat2, spec: &SourceSpec, n: u64) -> Result<VerifyReport> {
    let source = sample_source(spec)?;
    let digits: Vec<u64> = source.take(n as usize).collect();
    let n = digits.len() as u64;
    if n == 0 {
        return Err(CfError::NeedsMoreDigits);
    }

    // Transducer side, with head alignment if M is not a state.
    let mut it = digits.iter().copied();
    let (mut t, consumed) = if crate::states::classify(m)?.is_some() {
        (TransducerState::new(m, DEFAULT_HOLDBACK)?, 0usize)
    } else {
        let hn = head_normalize(m, 0, &mut it)?;
        (
            TransducerState::with_prefix(&hn.prefix, &hn.state, DEFAULT_HOLDBACK)?,
            hn.consumed,
        )
    };
    for &d in &digits[consumed..] {
        t.push_digit(Digit::new(d)?)?;
    }
    let head = t.head();
    let emitted: Vec<u64> = t.emitted().to_vec();

    // Oracle side: certify at growing prefixes, keep the longest.
    let mut refinement = Vec::new();
    let mut certified = None;
    for k in 1..=4u64 {
        let cut = (n * k / 4) as usize;
        if cut == 0 {
            continue;
        }
        let prefix = CFString::proper(digits[..cut].to_vec())?;
        let cp = certified_digits(&prefix, m)?;
        refinement.push(cp.certified_len);
        certified = Some(cp);
    }
    let certified = certified.expect("n > 0 gives at least one checkpoint");

    let heads_match = certified.head_certified && head == certified.digits.head();
    let cert_tail = certified.digits.tail();
    let compare = emitted.len().min(cert_tail.len());
    let mut match_len = compare;
    let mut first_mismatch = None;
    for i in 0..compare {
        if emitted[i] != cert_tail[i] {
            match_len = i;
            first_mismatch = Some(i + 1);
            break;
        }
    }
    Ok(VerifyReport {
        n,
        certified_len: certified.certified_len,
        emitted_len: emitted.len(),
        match_len,
        first_mismatch,
        heads_match,
        refinement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    fn s(head: i64, tail: &[u64]) -> CFString {
        CFString::new(head, tail.to_vec()).unwrap()
    }

    #[test]
    fn image_of_digit_two_cylinder_under_identity() {
        let iv = image_interval(&s(0, &[2]), &Mat2::identity()).unwrap();
        assert_eq!(iv.lo.value, BigRational::new(1.into(), 3.into()));
        assert!(!iv.lo.closed);
        assert_eq!(iv.hi.value, BigRational::new(1.into(), 2.into()));
        assert!(iv.hi.closed);
    }

    #[test]
    fn image_width_shrinks_with_convergent_denominators() {
        let prefix = s(0, &[1; 10]);
        let m = Mat2::new(2, 0, 0, 1);
        let iv = image_interval(&prefix, &m).unwrap();
        let conv = prefix.convergents();
        let q10 = &conv[10].1;
        let q9 = &conv[9].1;
        let bound = BigRational::new(2.into(), q10 * q9);
        assert!(iv.width() < bound, "width {} vs {bound}", iv.width());
    }

    #[test]
    fn pole_inside_cylinder_is_detected() {
        // (1,0;2,-1) has its pole at x = 1/2, inside the cylinder of
        // [1] = (1/2, 1).
        let err = image_interval(&s(0, &[1]), &Mat2::new(1, 0, 2, -1));
        assert!(matches!(err, Err(CfError::Pole)));
    }

    #[test]
    fn certified_digits_of_golden_prefix_under_doubling() {
        // Output digits of [1;4,4,…] carry ~3× the entropy of input
        // ones, so 160 input digits certify a little over 50 output
        // digits.
        let cp = certified_digits(&s(0, &[1; 160]), &Mat2::new(2, 0, 0, 1)).unwrap();
        assert_eq!(cp.digits.head(), 1);
        assert!(cp.certified_len >= 50, "only {}", cp.certified_len);
        assert!(cp.digits.tail()[..20].iter().all(|&d| d == 4));
    }

    #[test]
    fn identity_certifies_almost_the_whole_prefix() {
        for prefix in [s(0, &[2, 3]), s(0, &[1, 2, 3, 4, 5]), s(0, &[7, 7, 7])] {
            let cp = certified_digits(&prefix, &Mat2::identity()).unwrap();
            assert_eq!(cp.digits.head(), 0);
            assert!(cp.certified_len + 1 >= prefix.tail().len());
            assert_eq!(
                &prefix.tail()[..cp.certified_len],
                cp.digits.tail(),
                "prefix {prefix}"
            );
        }
    }

    #[test]
    fn enclosure_soundness_on_rationals_inside_the_cylinder() {
        use crate::cf::rational_to_cf;
        let prefix = s(0, &[3, 1, 4, 1]);
        let m = Mat2::new(1, -2, 1, 3);
        let cp = certified_digits(&prefix, &m).unwrap();
        let cyl = cylinder_interval(&prefix).unwrap();
        // Sample rationals in the cylinder by refining the prefix.
        for extra in [vec![2u64], vec![5, 1], vec![1, 1, 1]] {
            let mut digitvec = prefix.tail().to_vec();
            digitvec.extend(&extra);
            let x = CFString::proper(digitvec).unwrap().value();
            assert!(cyl.contains(&x));
            let y = m.apply(&x).unwrap();
            let expansion = rational_to_cf(y.numer(), y.denom()).unwrap();
            assert_eq!(expansion.head(), cp.digits.head());
            assert_eq!(
                &expansion.tail()[..cp.certified_len],
                cp.digits.tail(),
                "x extension {extra:?}"
            );
        }
    }

    #[test]
    fn refinement_is_monotone() {
        let m = Mat2::new(0, 2, 1, 1);
        let digits = [2u64, 1, 3, 1, 1, 4, 2, 6, 1, 1, 2, 5, 1, 3, 3, 1];
        let mut last = 0;
        for cut in 2..=digits.len() {
            let cp = certified_digits(&s(0, &digits[..cut]), &m).unwrap();
            assert!(
                cp.certified_len >= last,
                "certified_len dropped at cut {cut}"
            );
            last = cp.certified_len;
        }
        assert!(last > 0);
    }

    #[test]
    fn verify_identity_and_section_one_matrices() {
        let spec = SourceSpec::RationalRandom {
            bits: 2_000,
            seed: 21,
        };
        for m in [
            Mat2::identity(),
            Mat2::new(2, 0, 0, 1),
            Mat2::new(1, 0, 0, 2),
        ] {
            let report = verify_transduction(&m, &spec, 800).unwrap();
            assert!(report.is_clean(), "mismatch for {m}: {report:?}");
            assert!(report.match_len > 500, "only {} matched", report.match_len);
            assert!(
                report.refinement.windows(2).all(|w| w[0] <= w[1]),
                "refinement not monotone: {:?}",
                report.refinement
            );
        }
    }

    #[test]
    fn verify_a_matrix_needing_head_normalization() {
        let spec = SourceSpec::RationalRandom {
            bits: 2_000,
            seed: 33,
        };
        // All-positive entries: not a state, |det| = 5.
        let m = Mat2::new(3, 1, 1, 2);
        let report = verify_transduction(&m, &spec, 600).unwrap();
        assert!(report.is_clean(), "{report:?}");
        assert!(report.match_len > 300);
        let one = BigRational::one();
        let _ = one;
    }
}
