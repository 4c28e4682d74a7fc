//! The digit transducer: absorbing one input digit into a state matrix
//! and emitting the output digits that become fixed in the process.
//!
//! The single-digit step takes a state `M` and a digit `j >= 1`, forms
//! `M · J · A_j`, and factors it as
//! `A_{d0} · J · A_{d1} · ... · J · A_{dm} · M'` with `M'` again a state.
//! The factorization is a Euclidean subtraction loop on the rows: swap
//! the rows, subtract the largest multiple of the (new) bottom row that
//! keeps the top row non-negative, and stop as soon as the matrix
//! matches a state pattern. The defining identity
//! `M · J · A_j = M_out · M'` is machine-checked (always in the tests,
//! on a sample of steps during long runs).

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

use crate::cf::{concat, rational_to_cf, CFString, Digit};
use crate::error::{CfError, Result};
use crate::mat::{string_to_matrix, Mat2};
use crate::states::{classify, classify_small};

/// Iteration budget multiplier for the absorption loop: the loop for a
/// determinant-`D` state finishes well within `64 · D` rounds.
const CAP_PER_DET: u64 = 64;

/// Result of absorbing one digit: the emitted string and the successor
/// state. `out` may be empty; its head is `>= -1`, and a head of `-1`
/// comes with a nonempty tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepResult {
    pub out: CFString,
    pub next: Mat2,
}

/// Shared Euclidean emission loop. `cur` starts at
/// `A_{d0}^{-1} · M · J · A_j`; rows are swapped and reduced until a
/// state pattern appears. A zero quotient is a bare row swap
/// (`J · A_0 · J = I`): nothing is emitted and the *next* quotient merges
/// into the previously emitted digit (or the head). Two zero quotients
/// in a row cannot make progress and abort loudly.
fn emission_loop(
    mut cur: [i128; 4],
    head: &mut i64,
    digits: &mut Vec<u64>,
    cap: u64,
    ctx: ([i128; 4], u64),
) -> Result<[i128; 4]> {
    let fmt_ctx = |m: [i128; 4]| format!("({},{};{},{})", m[0], m[1], m[2], m[3]);
    let mut merge_next = false;
    let mut zero_run = 0u32;
    let mut iters = 0u64;
    while classify_small(cur).is_none() {
        iters += 1;
        if iters > cap {
            return Err(CfError::NonTermination {
                state: fmt_ctx(ctx.0),
                digit: ctx.1,
                cap,
            });
        }
        let [a, b, c, d] = cur;
        // Quotients floor(bottom/top), defined only for positive top
        // entries. Inside the loop both top entries are >= 0 and not
        // both zero, and the bottom row is the previous top row.
        let qa = (a > 0).then(|| c / a);
        let qb = (b > 0).then(|| d / b);
        let mut q = match (qa, qb) {
            (Some(x), Some(y)) => x.min(y),
            (Some(x), None) => x,
            (None, Some(y)) => y,
            (None, None) => {
                return Err(CfError::Internal(format!(
                    "absorption loop lost both pivots at {cur:?} (state {}, digit {})",
                    fmt_ctx(ctx.0),
                    ctx.1
                )))
            }
        };
        if q == 0 {
            // Subtracting nothing makes no progress. One past a floored
            // quotient drives one top entry negative, which is legal
            // exactly when the result is a type V/VI state; take the
            // smallest quotient with a state exit if there is one.
            let mut exit = None;
            for cand in [qa.map(|x| x + 1), qb.map(|x| x + 1)].into_iter().flatten() {
                if cand >= 1
                    && classify_small([c - cand * a, d - cand * b, a, b]).is_some()
                    && exit.map_or(true, |e| cand < e)
                {
                    exit = Some(cand);
                }
            }
            match exit {
                Some(cand) => q = cand,
                None => {
                    // Bare row swap (J · A_0 · J = I): emit nothing; the
                    // next quotient fuses with the previous digit.
                    zero_run += 1;
                    if zero_run >= 2 {
                        return Err(CfError::ZeroQuotientRun {
                            state: fmt_ctx(ctx.0),
                            digit: ctx.1,
                        });
                    }
                    cur = [c, d, a, b];
                    merge_next = true;
                    continue;
                }
            }
        }
        zero_run = 0;
        let qq = u64::try_from(q).map_err(|_| CfError::DigitOverflow(q.to_string()))?;
        cur = [c - q * a, d - q * b, a, b];
        if merge_next {
            merge_next = false;
            match digits.last_mut() {
                Some(last) => {
                    *last = last
                        .checked_add(qq)
                        .ok_or_else(|| CfError::DigitOverflow(format!("{last} + {qq}")))?
                }
                None => {
                    *head = i64::try_from(*head as i128 + q)
                        .map_err(|_| CfError::HeadOverflow(format!("{head} + {q}")))?
                }
            }
        } else {
            digits.push(qq);
        }
    }
    if merge_next {
        // The loop ended right after a bare swap; the swap was the last
        // factor, so it cannot be fused with a later digit.
        return Err(CfError::ZeroQuotientRun {
            state: fmt_ctx(ctx.0),
            digit: ctx.1,
        });
    }
    Ok(cur)
}

/// Absorbs digit `j` into the compact state `m`, returning the emitted
/// string and the successor in compact form.
pub(crate) fn step_small(m: [i128; 4], j: u64) -> Result<(CFString, [i128; 4])> {
    let ty = classify_small(m).ok_or_else(|| {
        CfError::NotAState(format!("({},{};{},{})", m[0], m[1], m[2], m[3]))
    })?;
    use crate::states::StateType::*;
    let [al, be, ga, de] = m;
    let det = (al * de - be * ga).abs() as u64;
    let jj = j as i128;
    // M_{-1} = M · J · A_j.
    let [a, b, c, d] = [be, al + be * jj, de, ga + de * jj];
    let quot = |x: i128, y: i128| Integer::div_floor(&x, &y);
    let d0: i128 = match ty {
        I | IV => quot(a, c).min(quot(b, d)),
        II | III => {
            if c == 0 {
                quot(b, d)
            } else {
                quot(a, c).min(quot(b, d))
            }
        }
        V => {
            if b > 0 {
                quot(a, c).min(quot(b, d))
            } else {
                // b == 0 takes d0 = 0; b < 0 means M_{-1} is already a
                // type VI state and the emitted string is empty.
                0
            }
        }
        VI => {
            if b > 0 {
                // M_{-1} is already a type V state.
                0
            } else {
                -1
            }
        }
    };
    let cur = [a - d0 * c, b - d0 * d, c, d];
    let mut head = i64::try_from(d0).map_err(|_| CfError::HeadOverflow(d0.to_string()))?;
    let mut digits = Vec::new();
    let next = emission_loop(cur, &mut head, &mut digits, CAP_PER_DET * det.max(1), (m, j))?;
    let out = if head == 0 && digits.is_empty() {
        CFString::empty()
    } else {
        CFString::new(head, digits)?
    };
    debug_assert!(
        out.head() >= -1 && (out.head() != -1 || out.len() >= 1),
        "emitted head shape violated: {out}"
    );
    Ok((out, next))
}

/// Absorbs one digit into a state matrix. The caller gets the emitted
/// string (possibly empty) and the successor state; the identity
/// `M · J · A_j = M_out · M'` holds exactly.
///
/// ```
/// use cfx::cf::{CFString, Digit};
/// use cfx::mat::Mat2;
/// use cfx::transducer::{step, step_identity_holds};
///
/// // Doubling: absorbing digit 6 emits [0; 3] and lands on (1,0;0,2).
/// let m = Mat2::new(2, 0, 0, 1);
/// let r = step(&m, Digit::new(6).unwrap()).unwrap();
/// assert_eq!(r.out, CFString::new(0, vec![3]).unwrap());
/// assert_eq!(r.next, Mat2::new(1, 0, 0, 2));
/// assert!(step_identity_holds(&m, 6, &r.out, &r.next));
/// ```
pub fn step(m: &Mat2, j: Digit) -> Result<StepResult> {
    let small = m
        .to_small()
        .ok_or_else(|| CfError::NotAState(m.to_string()))?;
    let (out, next) = step_small(small, j.get())?;
    Ok(StepResult { out, next: Mat2::from_small(next) })
}

/// Checks the defining identity of a step in exact arithmetic.
pub fn step_identity_holds(before: &Mat2, j: u64, out: &CFString, next: &Mat2) -> bool {
    let lhs = before
        .mul(&Mat2::gen_j())
        .mul(&Mat2::gen_a(i64::try_from(j).expect("digit fits")));
    let rhs = string_to_matrix(out).mul(next);
    lhs == rhs
}

/// Runs the transducer over a whole proper string, concatenating the
/// emitted pieces. Returns the resultant string `R` and the final state
/// `U`; the exact relation is `M · M_s = M_R · U`.
///
/// ```
/// use cfx::cf::CFString;
/// use cfx::mat::Mat2;
/// use cfx::transducer::run;
///
/// // 2 · [0; 1, 1, 1, ...] = [1; 4, 4, 4, ...] (twice the reciprocal
/// // golden ratio).
/// let ones = CFString::new(0, vec![1; 160]).unwrap();
/// let (out, _) = run(&Mat2::new(2, 0, 0, 1), &ones).unwrap();
/// assert_eq!(out.head(), 1);
/// assert!(out.tail()[..40].iter().all(|&d| d == 4));
/// ```
pub fn run(m: &Mat2, s: &CFString) -> Result<(CFString, Mat2)> {
    if !s.is_proper() {
        return Err(CfError::Internal(format!("run: input {s} is not proper")));
    }
    let mut state = m
        .to_small()
        .ok_or_else(|| CfError::NotAState(m.to_string()))?;
    let mut resultant = CFString::empty();
    for &c in s.tail() {
        let (out, next) = step_small(state, c)?;
        state = next;
        resultant = concat(&resultant, &out)?;
    }
    Ok((resultant, Mat2::from_small(state)))
}

/// Result of aligning an arbitrary nonsingular matrix with a digit
/// stream: after absorbing `consumed` leading digits, the product
/// factors as `M_prefix · state` with `state` in the state set.
#[derive(Debug, Clone)]
pub struct HeadNormalization {
    pub consumed: usize,
    pub prefix: CFString,
    pub state: Mat2,
}

/// Aligns a nonsingular integer matrix with the beginning of a digit
/// stream. `a0` is the integer part of the input (`x = [a0; a1, ...]`,
/// `x - a0 ∈ [0, 1)`); `digits` supplies `a1, a2, ...` and is consumed
/// exactly `consumed` times.
///
/// Digits are absorbed until the bottom row of
/// `M · A_{a0} · J · A_{a1} ... J · A_{ak}` has strictly one sign (the
/// whole matrix is negated if that sign is negative). One unconstrained
/// integer head `d0` is then split off, after which the usual emission
/// loop lands in the state set. If `M` is already a state and `a0 = 0`
/// there is nothing to do.
///
/// Because of the possible negation, the factorization identity
/// `M · A_{a0} J A_{a1} ... = prefix_matrix · state` holds up to an
/// overall sign; the induced Möbius map is the same either way.
pub fn head_normalize(
    m: &Mat2,
    a0: i64,
    digits: &mut dyn Iterator<Item = u64>,
) -> Result<HeadNormalization> {
    let det = m.det();
    if det.is_zero() {
        return Err(CfError::ZeroDeterminant(m.to_string()));
    }
    if a0 == 0 && classify(m)?.is_some() {
        return Ok(HeadNormalization {
            consumed: 0,
            prefix: CFString::empty(),
            state: m.clone(),
        });
    }
    let mut w = m.mul(&Mat2::gen_a(a0));
    let mut consumed = 0usize;
    // Convergents of the consumed input prefix, for the pole check on
    // exhausted (rational) streams.
    let (mut p_prev, mut q_prev) = (BigInt::from(1), BigInt::from(0));
    let (mut p, mut q) = (BigInt::from(a0), BigInt::from(1));
    loop {
        let same_sign = (w.c.is_positive() && w.d.is_positive())
            || (w.c.is_negative() && w.d.is_negative());
        if same_sign {
            break;
        }
        match digits.next() {
            Some(d) => {
                if d == 0 {
                    return Err(CfError::InvalidDigit(0));
                }
                w = w.mul(&Mat2::gen_j()).mul(&Mat2::gen_a(d as i64));
                consumed += 1;
                let dp = BigInt::from(d);
                let (np, nq) = (&dp * &p + &p_prev, &dp * &q + &q_prev);
                p_prev = p;
                q_prev = q;
                p = np;
                q = nq;
            }
            None => {
                // Finite stream: the input is exactly the rational p/q.
                // Either it sits on the pole of M, or we simply ran out.
                if (&m.c * &p + &m.d * &q).is_zero() {
                    return Err(CfError::Pole);
                }
                return Err(CfError::NeedsMoreDigits);
            }
        }
    }
    if w.c.is_negative() {
        w = w.neg();
    }
    // Split off the head: the largest d0 keeping the top row
    // non-negative after subtracting d0 times the bottom row.
    let d0 = Integer::div_floor(&w.a, &w.c).min(Integer::div_floor(&w.b, &w.d));
    let head0 = i64::try_from(&d0).map_err(|_| CfError::HeadOverflow(d0.to_string()))?;
    let cur = Mat2 {
        a: &w.a - &d0 * &w.c,
        b: &w.b - &d0 * &w.d,
        c: w.c.clone(),
        d: w.d.clone(),
    };
    let (head, tail, state) = emission_loop_big(cur, head0, m, consumed)?;
    let prefix = CFString::new(head, tail)?;
    // The exact identity M · A_{a0} · J·A_{a1} ··· J·A_{ak} = M_prefix ·
    // state involves the consumed digits, which the iterator has already
    // yielded; the tests re-check it with recorded digit prefixes.
    Ok(HeadNormalization { consumed, prefix, state })
}

/// Arbitrary-precision twin of the emission loop, used only during head
/// normalization where entries are not yet bounded by the determinant.
fn emission_loop_big(
    mut cur: Mat2,
    mut head: i64,
    origin: &Mat2,
    consumed: usize,
) -> Result<(i64, Vec<u64>, Mat2)> {
    let mut digits: Vec<u64> = Vec::new();
    let mut merge_next = false;
    let mut zero_run = 0u32;
    // Entries shrink geometrically; budget on the bit size.
    let cap = 64 * (cur.a.bits() + cur.b.bits() + cur.c.bits() + cur.d.bits() + 8);
    let mut iters = 0u64;
    while classify(&cur)?.is_none() {
        iters += 1;
        if iters > cap {
            return Err(CfError::NonTermination {
                state: origin.to_string(),
                digit: consumed as u64,
                cap,
            });
        }
        let qa = (cur.a.is_positive()).then(|| Integer::div_floor(&cur.c, &cur.a));
        let qb = (cur.b.is_positive()).then(|| Integer::div_floor(&cur.d, &cur.b));
        let mut q = match (qa.clone(), qb.clone()) {
            (Some(x), Some(y)) => x.min(y),
            (Some(x), None) => x,
            (None, Some(y)) => y,
            (None, None) => {
                return Err(CfError::Internal(format!(
                    "head normalization lost both pivots at {cur} (from {origin})"
                )))
            }
        };
        if q.is_zero() {
            // Same overshoot exit as the compact loop: one past a
            // floored quotient is legal when it lands in a type V/VI
            // state.
            let mut exit: Option<BigInt> = None;
            let one = BigInt::from(1);
            for cand in [qa.map(|x| &x + &one), qb.map(|x| &x + &one)].into_iter().flatten() {
                if cand.is_positive() {
                    let probe = Mat2 {
                        a: &cur.c - &cand * &cur.a,
                        b: &cur.d - &cand * &cur.b,
                        c: cur.a.clone(),
                        d: cur.b.clone(),
                    };
                    if classify(&probe).unwrap_or(None).is_some()
                        && exit.as_ref().map_or(true, |e| &cand < e)
                    {
                        exit = Some(cand);
                    }
                }
            }
            match exit {
                Some(cand) => q = cand,
                None => {
                    zero_run += 1;
                    if zero_run >= 2 {
                        return Err(CfError::ZeroQuotientRun {
                            state: origin.to_string(),
                            digit: consumed as u64,
                        });
                    }
                    cur = Mat2 {
                        a: cur.c.clone(),
                        b: cur.d.clone(),
                        c: cur.a,
                        d: cur.b,
                    };
                    merge_next = true;
                    continue;
                }
            }
        }
        zero_run = 0;
        let next = Mat2 {
            a: &cur.c - &q * &cur.a,
            b: &cur.d - &q * &cur.b,
            c: cur.a.clone(),
            d: cur.b.clone(),
        };
        let qq = u64::try_from(&q).map_err(|_| CfError::DigitOverflow(q.to_string()))?;
        if merge_next {
            merge_next = false;
            match digits.last_mut() {
                Some(last) => {
                    *last = last
                        .checked_add(qq)
                        .ok_or_else(|| CfError::DigitOverflow(format!("{last} + {qq}")))?
                }
                None => {
                    head = head
                        .checked_add(i64::try_from(qq).map_err(|_| {
                            CfError::HeadOverflow(qq.to_string())
                        })?)
                        .ok_or_else(|| CfError::HeadOverflow(format!("{head} + {qq}")))?
                }
            }
        } else {
            digits.push(qq);
        }
        cur = next;
    }
    if merge_next {
        return Err(CfError::ZeroQuotientRun {
            state: origin.to_string(),
            digit: consumed as u64,
        });
    }
    Ok((head, digits, cur))
}

/// Streaming transducer state: digits go in one at a time, output digits
/// come out once they can no longer be revised. The last `holdback` tail
/// digits of the output are kept mutable; everything in front of them is
/// final.
///
/// ```
/// use cfx::cf::{CFString, Digit};
/// use cfx::mat::Mat2;
/// use cfx::transducer::{TransducerState, DEFAULT_HOLDBACK};
///
/// let mut t = TransducerState::new(&Mat2::new(2, 0, 0, 1), DEFAULT_HOLDBACK).unwrap();
/// for _ in 0..160 {
///     t.push_digit(Digit::new(1).unwrap()).unwrap();
/// }
/// // Finalized digits are safe to print; a short suffix stays pending.
/// assert!(t.emitted().iter().take(40).all(|&d| d == 4));
/// let full = t.finish(None).unwrap();
/// assert_eq!(full.head(), 1);
/// ```
#[derive(Debug, Clone)]
pub struct TransducerState {
    state: [i128; 4],
    head: i64,
    head_flushed: bool,
    /// Mutable tail of the output string.
    pending: Vec<u64>,
    /// Finalized output tail digits, in order.
    emitted: Vec<u64>,
    holdback: usize,
    verify_every: u64,
    steps: u64,
    // Diagnostics.
    m_max: usize,
    m_max_first: u64,
    annih_run: u64,
    annih_max: u64,
    annih_max_first: u64,
}

/// Default hold-back window; calibration starts here and doubles on
/// underflow.
pub const DEFAULT_HOLDBACK: usize = 8;

impl TransducerState {
    /// Starts a stream from a head-normalized state with an already
    /// emitted prefix.
    pub fn with_prefix(prefix: &CFString, state: &Mat2, holdback: usize) -> Result<Self> {
        let small = state
            .to_small()
            .ok_or_else(|| CfError::NotAState(state.to_string()))?;
        if classify_small(small).is_none() {
            return Err(CfError::NotAState(state.to_string()));
        }
        Ok(TransducerState {
            state: small,
            head: prefix.head(),
            head_flushed: false,
            pending: prefix.tail().to_vec(),
            emitted: Vec::new(),
            holdback: holdback.max(2),
            verify_every: if cfg!(debug_assertions) { 1 } else { 1024 },
            steps: 0,
            m_max: 0,
            m_max_first: 0,
            annih_run: 0,
            annih_max: 0,
            annih_max_first: 0,
        })
    }

    pub fn new(state: &Mat2, holdback: usize) -> Result<Self> {
        Self::with_prefix(&CFString::empty(), state, holdback)
    }

    /// How often the step identity is re-verified in exact arithmetic
    /// (`1` = every step). Debug builds default to every step, release
    /// builds to one step in 1024.
    pub fn set_verify_every(&mut self, n: u64) {
        self.verify_every = n.max(1);
    }

    pub fn state(&self) -> Mat2 {
        Mat2::from_small(self.state)
    }

    pub fn head(&self) -> i64 {
        self.head
    }

    /// Finalized output digits so far (not counting the head).
    pub fn emitted(&self) -> &[u64] {
        &self.emitted
    }

    /// Output digits still subject to revision.
    pub fn pending(&self) -> &[u64] {
        &self.pending
    }

    /// Total output length so far: finalized plus mutable tail digits.
    pub fn output_len(&self) -> usize {
        self.emitted.len() + self.pending.len()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Longest single-step emission seen, and the step index where it
    /// was first attained.
    pub fn emission_peak(&self) -> (usize, u64) {
        (self.m_max, self.m_max_first)
    }

    /// Longest run of consecutive `[-1;1]` emissions, and the step index
    /// where it was first attained.
    pub fn annihilation_peak(&self) -> (u64, u64) {
        (self.annih_max, self.annih_max_first)
    }

    /// Absorbs one input digit. Returns how many output digits became
    /// final during this push (they are appended to `emitted`).
    pub fn push_digit(&mut self, j: Digit) -> Result<usize> {
        let before = self.state;
        let (out, next) = step_small(self.state, j.get())?;
        self.steps += 1;
        if self.verify_every > 0 && self.steps % self.verify_every == 0 {
            let b = Mat2::from_small(before);
            let n = Mat2::from_small(next);
            if !step_identity_holds(&b, j.get(), &out, &n) {
                return Err(CfError::Internal(format!(
                    "step identity failed: state {b}, digit {j}, out {out}, next {n}"
                )));
            }
        }
        self.state = next;
        // Diagnostics.
        if out.len() > self.m_max {
            self.m_max = out.len();
            self.m_max_first = self.steps;
        }
        if out.head() == -1 && out.tail() == [1] {
            self.annih_run += 1;
            if self.annih_run > self.annih_max {
                self.annih_max = self.annih_run;
                self.annih_max_first = self.steps;
            }
        } else {
            self.annih_run = 0;
        }
        self.absorb(&out)?;
        // Flush everything beyond the hold-back window.
        let before_len = self.emitted.len();
        while self.pending.len() > self.holdback {
            self.head_flushed = true;
            self.emitted.push(self.pending.remove(0));
        }
        Ok(self.emitted.len() - before_len)
    }

    /// Junction logic between the mutable output tail and a freshly
    /// emitted string. Mirrors [`concat`], but knows that digits in
    /// front of `pending` are flushed and immutable: a rewrite that
    /// would reach them is a hold-back underflow.
    fn absorb(&mut self, out: &CFString) -> Result<()> {
        let h2 = out.head();
        let mut rest: &[u64] = out.tail();
        if let Some(last) = self.pending.last_mut() {
            let sum = *last as i128 + h2 as i128;
            if sum > 0 {
                *last = u64::try_from(sum)
                    .map_err(|_| CfError::DigitOverflow(sum.to_string()))?;
            } else {
                self.pending.pop();
                let (&d1, r) = rest
                    .split_first()
                    .ok_or_else(|| CfError::Internal("emitted [-1;] with empty tail".into()))?;
                rest = r;
                match self.pending.last_mut() {
                    Some(prev) => {
                        *prev = prev
                            .checked_add(d1)
                            .ok_or_else(|| CfError::DigitOverflow(format!("{prev} + {d1}")))?
                    }
                    None if !self.head_flushed => {
                        self.head = self
                            .head
                            .checked_add(i64::try_from(d1).map_err(|_| {
                                CfError::HeadOverflow(d1.to_string())
                            })?)
                            .ok_or_else(|| CfError::HeadOverflow(format!("head + {d1}")))?;
                    }
                    None => {
                        return Err(CfError::HoldbackUnderflow { holdback: self.holdback })
                    }
                }
            }
        } else if !self.head_flushed {
            self.head = self
                .head
                .checked_add(h2)
                .ok_or_else(|| CfError::HeadOverflow(format!("head + {h2}")))?;
        } else if h2 != 0 {
            return Err(CfError::HoldbackUnderflow { holdback: self.holdback });
        }
        self.pending.extend_from_slice(rest);
        Ok(())
    }

    /// Ends the stream. With `tail = Some(y)` the remaining input has
    /// the exact value `y = T^n x ∈ [0, 1)` (use `0` when the input
    /// digits were the complete expansion of a rational); the mutable
    /// output tail is then resolved exactly and the *complete* output
    /// string (head, finalized and resolved digits) is returned in
    /// canonical form. With `tail = None` the pending digits are
    /// returned as they stand, unresolved.
    pub fn finish(mut self, tail: Option<&BigRational>) -> Result<CFString> {
        let mut full = CFString::new(self.head, std::mem::take(&mut self.emitted))?;
        let pending = CFString::proper(std::mem::take(&mut self.pending))?;
        // `full ++ pending` never triggers junction logic (pending is a
        // plain digit suffix of the output string).
        full = concat(&full, &pending)?;
        match tail {
            None => Ok(full),
            Some(y) => {
                let state = Mat2::from_small(self.state);
                let den = BigRational::from(state.c.clone()) * y
                    + BigRational::from(state.d.clone());
                if den.is_zero() {
                    // The residual value is infinite: appending infinity
                    // truncates the last digit of the string
                    // (M_s · ∞ = p_{n-1}/q_{n-1}).
                    let mut t = full.tail().to_vec();
                    if t.pop().is_none() {
                        return Err(CfError::Pole);
                    }
                    let mut s = CFString::new(full.head(), t)?;
                    s.canonicalize();
                    return Ok(s);
                }
                let y_out = state.apply(y)?;
                let (num, den) = (y_out.numer().clone(), y_out.denom().clone());
                let rest = rational_to_cf(&num, &den)?;
                let mut s = concat(&full, &rest)?;
                s.canonicalize();
                Ok(s)
            }
        }
    }
}
