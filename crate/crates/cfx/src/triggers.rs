//! Trigger strings: which minimal input substrings (with their entry
//! states) force a given target string to appear in the output.
//!
//! An occurrence of a target `r` in an output string is *nice* when it
//! stays clear of the digits a junction can still rewrite: the first
//! tail digit is head-mutable, the last two are tail-mutable. Nice
//! occurrences survive arbitrary extension of the input on either side,
//! which is what makes the minimal decomposition well defined.

use crate::cf::{CFString, Digit};
use crate::error::{CfError, Result};
use crate::mat::Mat2;
use crate::transducer::{run, step, TransducerState, DEFAULT_HOLDBACK};

/// Where a nice occurrence may start. The front boundary of "nice" is
/// genuinely ambiguous by one digit; the conservative reading keeps one
/// extra digit of context and is the default everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiceConvention {
    /// Occurrences confined to `d₂ … d_{m−2}`.
    Conservative,
    /// Occurrences confined to `d₁ … d_{m−2}`.
    Wide,
}

impl NiceConvention {
    fn min_start(self) -> usize {
        match self {
            NiceConvention::Conservative => 2,
            NiceConvention::Wide => 1,
        }
    }
}

fn matches_at(tail: &[u64], r: &[u64], start1: usize) -> bool {
    let i = start1 - 1;
    i + r.len() <= tail.len() && &tail[i..i + r.len()] == r
}

/// Every start index (1-based over the tail digits) where `r` occurs as
/// a contiguous digit substring, boundary positions included.
pub fn all_occurrences(t: &CFString, r: &CFString) -> Vec<usize> {
    let tail = t.tail();
    let rt = r.tail();
    if rt.is_empty() || rt.len() > tail.len() {
        return Vec::new();
    }
    (1..=tail.len() - rt.len() + 1)
        .filter(|&i| matches_at(tail, rt, i))
        .collect()
}

/// Start indices of the *nice* occurrences of `r` in `t`: occurrences
/// that avoid the head-mutable and tail-mutable digit positions.
pub fn occurrences_nicely(t: &CFString, r: &CFString, conv: NiceConvention) -> Vec<usize> {
    let m = t.tail().len();
    let rlen = r.tail().len();
    if rlen == 0 || m < rlen + 4 {
        return Vec::new();
    }
    all_occurrences(t, r)
        .into_iter()
        .filter(|&i| i >= conv.min_start() && i + rlen - 1 + 2 <= m)
        .collect()
}

/// Whether `r` occurs nicely in `t` with its first digit at 1-based
/// tail position `start1`.
pub fn is_nice_at(t: &CFString, r: &CFString, start1: usize, conv: NiceConvention) -> bool {
    start1 >= conv.min_start()
        && start1 + r.tail().len() - 1 + 2 <= t.tail().len()
        && matches_at(t.tail(), r.tail(), start1)
}

/// A minimal input substring `s`, together with the state it is read
/// from, whose output contains the target nicely. Extending the input
/// on either side of `s` cannot disturb the occurrence; shrinking `s`
/// breaks it.
#[derive(Debug, Clone)]
pub struct TriggerInstance {
    pub s: CFString,
    pub state: Mat2,
    /// Nice occurrences of the target in `R(s, state)` that need all of
    /// `s` (they share this minimal decomposition).
    pub multiplicity: usize,
    /// 1-based start of the target within the tail of `R(s, state)`.
    pub relative_position: usize,
}

/// Per-digit trace of a full run: the state entered after each input
/// digit and the output length at that point, plus the final output.
struct RunTrace {
    /// `states[k]` is the state after absorbing `k` input digits
    /// (`states[0]` is the starting matrix).
    states: Vec<Mat2>,
    /// `out_len[k]` is the output tail length after `k` input digits.
    /// Later junctions can retroactively shrink these by at most 2.
    out_len: Vec<usize>,
    output: CFString,
}

fn trace_run(m: &Mat2, input: &CFString) -> Result<RunTrace> {
    let mut t = TransducerState::new(m, DEFAULT_HOLDBACK)?;
    let mut states = Vec::with_capacity(input.tail().len() + 1);
    let mut out_len = Vec::with_capacity(input.tail().len() + 1);
    states.push(m.clone());
    out_len.push(0);
    for &d in input.tail() {
        t.push_digit(Digit::new(d)?)?;
        states.push(t.state());
        out_len.push(t.output_len());
    }
    let output = t.finish(None)?;
    Ok(RunTrace {
        states,
        out_len,
        output,
    })
}

/// Inner shrink loop. `(w_lo, w_hi)` is the half-open input digit
/// window, `state` the state entered at `w_lo`, `rel` the occurrence
/// start inside `R(window, state)`. Returns the fixed-point window and
/// relative position.
fn shrink(
    input: &[u64],
    mut w_lo: usize,
    mut w_hi: usize,
    mut state: Mat2,
    mut rel: usize,
    r: &CFString,
    conv: NiceConvention,
) -> Result<(usize, usize, Mat2, CFString, usize)> {
    let seg = |lo: usize, hi: usize| CFString::proper(input[lo..hi].to_vec());
    let mut out = run(&state, &seg(w_lo, w_hi)?)?.0;
    if !is_nice_at(&out, r, rel, conv) {
        return Err(CfError::Internal(format!(
            "shrink started from a non-nice occurrence at {rel} in {out}"
        )));
    }
    // Front shrink: the untouched suffix keeps the occurrence at a
    // fixed distance from the end of the output.
    let mut end_offset = out.tail().len() - rel;
    while w_lo < w_hi {
        let next_state = step(&state, Digit::new(input[w_lo])?)?.next;
        let candidate = run(&next_state, &seg(w_lo + 1, w_hi)?)?.0;
        if candidate.tail().len() <= end_offset {
            break;
        }
        let cand_rel = candidate.tail().len() - end_offset;
        if !is_nice_at(&candidate, r, cand_rel, conv) {
            break;
        }
        w_lo += 1;
        state = next_state;
        out = candidate;
        rel = cand_rel;
        end_offset = out.tail().len() - rel;
    }
    // Back shrink: the occurrence start no longer moves.
    while w_hi > w_lo {
        let candidate = run(&state, &seg(w_lo, w_hi - 1)?)?.0;
        if !is_nice_at(&candidate, r, rel, conv) {
            break;
        }
        w_hi -= 1;
        out = candidate;
    }
    let s = seg(w_lo, w_hi)?;
    // Round trip: replaying the decomposition in isolation must still
    // produce the target nicely. Anything else is a transducer bug.
    if !is_nice_at(&out, r, rel, conv) {
        return Err(CfError::Internal(format!(
            "minimal decomposition lost its occurrence: {s} from {state}"
        )));
    }
    Ok((w_lo, w_hi, state, out, rel))
}

/// Locates the input window producing the output region around an
/// occurrence, using the per-digit trace, then shrinks it to the fixed
/// point. Returns the window bounds along with the instance data.
fn decompose_with_trace(
    trace: &RunTrace,
    input: &[u64],
    occ: usize,
    r: &CFString,
    conv: NiceConvention,
) -> Result<(usize, usize, Mat2, CFString, usize)> {
    let rlen = r.tail().len();
    let n = input.len();
    // Output positions move by at most 2 after being recorded, so pad
    // the localization slack accordingly.
    let mut lo_target = occ.saturating_sub(4);
    let mut hi_target = occ + rlen + 3;
    for _widen in 0..6 {
        let w_lo = match trace.out_len.partition_point(|&l| l <= lo_target) {
            0 => 0,
            p => p - 1,
        };
        let w_hi = trace.out_len.partition_point(|&l| l < hi_target).min(n);
        let state = trace.states[w_lo].clone();
        let window = CFString::proper(input[w_lo..w_hi].to_vec())?;
        let out = run(&state, &window)?.0;
        // The occurrence sits near `occ - out_len[w_lo]`; junctions at
        // the chopped boundaries can shift it by a couple of digits.
        let expected = occ as i64 - trace.out_len[w_lo] as i64;
        let found = (-3..=3i64)
            .map(|d| expected + d)
            .filter(|&p| p >= 1)
            .find(|&p| is_nice_at(&out, r, p as usize, conv));
        if let Some(rel) = found {
            return shrink(input, w_lo, w_hi, state, rel as usize, r, conv);
        }
        lo_target = lo_target.saturating_sub(3);
        hi_target += 3;
        if w_lo == 0 && w_hi == n {
            break;
        }
    }
    Err(CfError::Internal(format!(
        "could not localize occurrence at {occ} of {r}"
    )))
}

fn multiplicity_of(
    out: &CFString,
    s: &CFString,
    state: &Mat2,
    r: &CFString,
    conv: NiceConvention,
) -> Result<(usize, usize)> {
    // Count the nice occurrences in R(s, state) that are themselves
    // minimal for this window: shrinking from them goes nowhere.
    let digits = s.tail();
    let mut count = 0;
    let mut first = None;
    for p in occurrences_nicely(out, r, conv) {
        let (w_lo, w_hi, ..) = shrink(digits, 0, digits.len(), state.clone(), p, r, conv)?;
        if w_lo == 0 && w_hi == digits.len() {
            count += 1;
            first.get_or_insert(p);
        }
    }
    Ok((count.max(1), first.unwrap_or(0)))
}

/// The minimal decomposition of the nice occurrence starting at
/// 1-based output position `occ` when `full` is read from `m`.
pub fn minimal_decomposition(
    full: &CFString,
    m: &Mat2,
    occ: usize,
    r: &CFString,
    conv: NiceConvention,
) -> Result<TriggerInstance> {
    let trace = trace_run(m, full)?;
    if !is_nice_at(&trace.output, r, occ, conv) {
        return Err(CfError::Format(format!(
            "position {occ} is not a nice occurrence of {r}"
        )));
    }
    let (w_lo, w_hi, state, out, rel) =
        decompose_with_trace(&trace, full.tail(), occ, r, conv)?;
    let s = CFString::proper(full.tail()[w_lo..w_hi].to_vec())?;
    let (multiplicity, first) = multiplicity_of(&out, &s, &state, r, conv)?;
    Ok(TriggerInstance {
        s,
        state,
        multiplicity,
        relative_position: if first > 0 { first } else { rel },
    })
}

/// Census of every nice occurrence of `r` in `R(input, m)`, grouped by
/// minimal decomposition, plus raw counting data.
#[derive(Debug)]
pub struct TriggerCensus {
    pub instances: Vec<TriggerInstance>,
    /// Occurrences of `r` anywhere in the output, boundaries included.
    pub occurrence_count: usize,
    /// Occurrences passing the niceness filter.
    pub nice_count: usize,
    /// Longest trigger string seen.
    pub max_trigger_len: usize,
}

impl TriggerCensus {
    pub fn multiplicity_sum(&self) -> usize {
        self.instances.iter().map(|t| t.multiplicity).sum()
    }
}

///
/// ```
/// use cfx::cf::CFString;
/// use cfx::mat::Mat2;
/// use cfx::triggers::{trigger_census, NiceConvention};
///
/// let input = CFString::proper(vec![5, 1, 2, 9, 9, 3]).unwrap();
/// let target = CFString::new(0, vec![2]).unwrap();
/// let census = trigger_census(
///     &Mat2::identity(), &input, &target, NiceConvention::Conservative,
/// ).unwrap();
/// assert_eq!(census.nice_count, 1);
/// // The minimal trigger keeps one digit before and two after.
/// assert_eq!(census.instances[0].s, CFString::proper(vec![1, 2, 9, 9]).unwrap());
/// assert_eq!(census.instances[0].multiplicity, 1);
/// ```
pub fn trigger_census(
    m: &Mat2,
    input: &CFString,
    r: &CFString,
    conv: NiceConvention,
) -> Result<TriggerCensus> {
    if !r.is_proper() || r.tail().is_empty() {
        return Err(CfError::Format("target must be a proper nonempty string".into()));
    }
    let trace = trace_run(m, input)?;
    let occurrence_count = all_occurrences(&trace.output, r).len();
    let nice = occurrences_nicely(&trace.output, r, conv);
    let nice_count = nice.len();

    // Group by input window: occurrences shrinking to the same window
    // share one instance, counted with multiplicity.
    let mut groups: std::collections::BTreeMap<(usize, usize), (Mat2, CFString, usize, usize)> =
        std::collections::BTreeMap::new();
    for occ in nice {
        let (w_lo, w_hi, state, _out, rel) =
            decompose_with_trace(&trace, input.tail(), occ, r, conv)?;
        groups
            .entry((w_lo, w_hi))
            .and_modify(|e| e.2 += 1)
            .or_insert((state, CFString::empty(), 1, rel));
    }
    let mut instances = Vec::with_capacity(groups.len());
    let mut max_trigger_len = 0;
    for ((w_lo, w_hi), (state, _, mult, rel)) in groups {
        let s = CFString::proper(input.tail()[w_lo..w_hi].to_vec())?;
        max_trigger_len = max_trigger_len.max(s.tail().len());
        instances.push(TriggerInstance {
            s,
            state,
            multiplicity: mult,
            relative_position: rel,
        });
    }
    Ok(TriggerCensus {
        instances,
        occurrence_count,
        nice_count,
        max_trigger_len,
    })
}
