//! Statistics laboratory: deterministic digit sources standing in for
//! typical (CF-normal) inputs, long orbit runs through the streaming
//! transducer, and convergence reports comparing empirical frequencies
//! against the Gauss measure and the Markov surrogate.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::PathBuf;

use num_bigint::{BigInt, RandBigInt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cf::{gauss_measure, gauss_measure_digit, rational_to_cf, CFString, Digit};
use crate::error::{CfError, Result};
use crate::graph::{ComponentGraph, MarkovModel};
use crate::mat::Mat2;
use crate::transducer::{head_normalize, TransducerState, DEFAULT_HOLDBACK};

/// Where input digits come from. Every source is deterministic: the
/// same spec always yields the same stream.
#[derive(Debug, Clone)]
pub enum SourceSpec {
    /// `x = p/q` with `q` a random odd `bits`-bit integer and `p`
    /// uniform in `(0, q)`. A single rational yields roughly
    /// `0.58 · bits` digits; when it runs out the stream chains to the
    /// rational drawn from `seed + 1`, then `seed + 2`, and so on, so
    /// arbitrarily long runs stay reproducible from the base seed.
    RationalRandom { bits: u64, seed: u64 },
    /// Digits read from a `cfd1` file; finite.
    File { path: PathBuf },
    /// The expansion of an explicit rational; finite.
    Explicit { p: BigInt, q: BigInt },
}

enum SourceKind {
    Finite(std::vec::IntoIter<u64>),
    Chained {
        bits: u64,
        next_seed: u64,
        buf: std::vec::IntoIter<u64>,
    },
}

/// A deterministic digit stream (tail digits only; sources always
/// describe numbers in `[0, 1)`).
pub struct DigitSource {
    kind: SourceKind,
}

fn random_rational_digits(bits: u64, seed: u64) -> Result<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = rng.gen_biguint(bits);
    q.set_bit(bits - 1, true);
    q.set_bit(0, true);
    let one = num_bigint::BigUint::from(1u32);
    let p = rng.gen_biguint_range(&one, &q);
    let s = rational_to_cf(&BigInt::from(p), &BigInt::from(q))?;
    Ok(s.tail().to_vec())
}

impl DigitSource {
    pub fn new(spec: &SourceSpec) -> Result<DigitSource> {
        let kind = match spec {
            SourceSpec::RationalRandom { bits, seed } => {
                if *bits < 2 {
                    return Err(CfError::Format("rational-random needs bits >= 2".into()));
                }
                SourceKind::Chained {
                    bits: *bits,
                    next_seed: seed.wrapping_add(1),
                    buf: random_rational_digits(*bits, *seed)?.into_iter(),
                }
            }
            SourceSpec::File { path } => {
                let f = std::fs::File::open(path)
                    .map_err(|e| CfError::Format(format!("{}: {e}", path.display())))?;
                let s = crate::stream::parse(BufReader::new(f))?;
                SourceKind::Finite(s.tail().to_vec().into_iter())
            }
            SourceSpec::Explicit { p, q } => {
                let s = rational_to_cf(p, q)?;
                SourceKind::Finite(s.tail().to_vec().into_iter())
            }
        };
        Ok(DigitSource { kind })
    }
}

impl Iterator for DigitSource {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        match &mut self.kind {
            SourceKind::Finite(it) => it.next(),
            SourceKind::Chained {
                bits,
                next_seed,
                buf,
            } => loop {
                if let Some(d) = buf.next() {
                    return Some(d);
                }
                let digits = random_rational_digits(*bits, *next_seed)
                    .expect("bits checked at construction");
                *next_seed = next_seed.wrapping_add(1);
                *buf = digits.into_iter();
            },
        }
    }
}

/// Builds the digit stream for a spec.
pub fn sample_source(spec: &SourceSpec) -> Result<DigitSource> {
    DigitSource::new(spec)
}

/// Snapshot of the running statistics at one checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub n: u64,
    pub ell: usize,
    pub c1: f64,
    pub output_digit_counts: BTreeMap<u64, u64>,
    pub output_pair_counts: BTreeMap<(u64, u64), u64>,
}

/// Everything recorded along one orbit of the skew product
/// (input shift × state update).
#[derive(Debug, Clone)]
pub struct OrbitStats {
    pub matrix: Mat2,
    /// Digits consumed, including any used by head normalization.
    pub n_consumed: u64,
    /// Output length at the checkpoints n/4, n/2, 3n/4, n.
    pub checkpoints: Vec<Checkpoint>,
    /// Visits per state (keyed by the display form of the matrix).
    pub state_counts: BTreeMap<String, u64>,
    /// Visits per input cylinder of rank 1 and 2, digits ≤ 8.
    pub cylinder_counts: BTreeMap<Vec<u64>, u64>,
    /// Joint visits (cylinder, state).
    pub cylinder_state_counts: BTreeMap<(Vec<u64>, String), u64>,
    /// Finalized output digit frequencies.
    pub output_digit_counts: BTreeMap<u64, u64>,
    /// Adjacent finalized output digit pairs.
    pub output_pair_counts: BTreeMap<(u64, u64), u64>,
    pub output_total: u64,
    pub pair_total: u64,
    /// Longest single-step emission and the step where it first
    /// appeared.
    pub m_max: usize,
    pub m_max_first: u64,
    /// Longest annihilation run and the step where it first appeared.
    pub annihilation_max: u64,
    pub annihilation_first: u64,
    pub c1_estimate: f64,
    /// Set when the run aborted early; the other fields hold the
    /// partial statistics accumulated up to that point.
    pub aborted: Option<String>,
}

impl OrbitStats {
    /// Empirical frequency of a single output digit.
    pub fn digit_freq(&self, k: u64) -> f64 {
        if self.output_total == 0 {
            return 0.0;
        }
        *self.output_digit_counts.get(&k).unwrap_or(&0) as f64 / self.output_total as f64
    }

    /// Empirical frequency of an output string of rank 1 or 2.
    pub fn rho_estimate(&self, r: &[u64]) -> f64 {
        match r {
            [k] => self.digit_freq(*k),
            [a, b] => {
                if self.pair_total == 0 {
                    return 0.0;
                }
                *self.output_pair_counts.get(&(*a, *b)).unwrap_or(&0) as f64
                    / self.pair_total as f64
            }
            _ => 0.0,
        }
    }

    /// Empirical state occupancy, normalized.
    pub fn occupancy(&self) -> BTreeMap<String, f64> {
        let total: u64 = self.state_counts.values().sum();
        self.state_counts
            .iter()
            .map(|(k, v)| (k.clone(), *v as f64 / total.max(1) as f64))
            .collect()
    }
}

/// Runs `n` input digits from the source through the transducer,
/// recording occupancy, output frequencies, and boundedness trackers.
///
/// If the matrix is not itself a state, head normalization runs first
/// and its consumed digits count toward `n`.
///
/// ```
/// use cfx::lab::{run_experiment, SourceSpec};
/// use cfx::mat::Mat2;
///
/// // The identity echoes its input: ℓ(n) = n exactly.
/// let spec = SourceSpec::RationalRandom { bits: 2_000, seed: 1 };
/// let stats = run_experiment(&Mat2::identity(), &spec, 500).unwrap();
/// assert_eq!(stats.n_consumed, 500);
/// assert_eq!(stats.checkpoints.last().unwrap().ell, 500);
/// assert_eq!(stats.c1_estimate, 1.0);
/// ```
pub fn run_experiment(m: &Mat2, spec: &SourceSpec, n: u64) -> Result<OrbitStats> {
    let mut source = sample_source(spec)?.peekable();
    let mut stats = OrbitStats {
        matrix: m.clone(),
        n_consumed: 0,
        checkpoints: Vec::new(),
        state_counts: BTreeMap::new(),
        cylinder_counts: BTreeMap::new(),
        cylinder_state_counts: BTreeMap::new(),
        output_digit_counts: BTreeMap::new(),
        output_pair_counts: BTreeMap::new(),
        output_total: 0,
        pair_total: 0,
        m_max: 0,
        m_max_first: 0,
        annihilation_max: 0,
        annihilation_first: 0,
        c1_estimate: 0.0,
        aborted: None,
    };

    // Align the matrix with the stream head if necessary.
    let mut t = if crate::states::classify(m)?.is_some() {
        TransducerState::new(m, DEFAULT_HOLDBACK)?
    } else {
        let mut consumed_digits = Vec::new();
        let hn = {
            let mut tap = std::iter::from_fn(|| {
                let d = source.next()?;
                consumed_digits.push(d);
                Some(d)
            });
            head_normalize(m, 0, &mut tap)?
        };
        stats.n_consumed = hn.consumed as u64;
        TransducerState::with_prefix(&hn.prefix, &hn.state, DEFAULT_HOLDBACK)?
    };
    t.set_verify_every(4096);

    let checkpoints_at: Vec<u64> = (1..=4).map(|k| n * k / 4).collect();
    let mut next_checkpoint = 0usize;
    let mut emitted_seen = 0usize;
    let mut last_emitted: Option<u64> = None;

    while stats.n_consumed < n {
        let Some(d) = source.next() else {
            stats.aborted = Some("source exhausted".into());
            break;
        };
        // Skew-product occupancy *before* absorbing the digit: the
        // remaining input starts with d (and the peeked digit after
        // it), the component is the current state.
        let state_key = t.state().to_string();
        *stats.state_counts.entry(state_key.clone()).or_insert(0) += 1;
        if d <= 8 {
            *stats.cylinder_counts.entry(vec![d]).or_insert(0) += 1;
            *stats
                .cylinder_state_counts
                .entry((vec![d], state_key.clone()))
                .or_insert(0) += 1;
            if let Some(&d2) = source.peek() {
                if d2 <= 8 {
                    *stats.cylinder_counts.entry(vec![d, d2]).or_insert(0) += 1;
                    *stats
                        .cylinder_state_counts
                        .entry((vec![d, d2], state_key))
                        .or_insert(0) += 1;
                }
            }
        }

        match t.push_digit(Digit::new(d)?) {
            Ok(_) => {}
            Err(e) => {
                stats.aborted = Some(e.to_string());
                break;
            }
        }
        stats.n_consumed += 1;

        // Fold digits that became final into the frequency tables.
        let emitted = t.emitted();
        for &out in &emitted[emitted_seen..] {
            *stats.output_digit_counts.entry(out).or_insert(0) += 1;
            stats.output_total += 1;
            if let Some(prev) = last_emitted {
                *stats.output_pair_counts.entry((prev, out)).or_insert(0) += 1;
                stats.pair_total += 1;
            }
            last_emitted = Some(out);
        }
        emitted_seen = emitted.len();

        while next_checkpoint < checkpoints_at.len()
            && stats.n_consumed >= checkpoints_at[next_checkpoint]
        {
            stats.checkpoints.push(Checkpoint {
                n: stats.n_consumed,
                ell: t.output_len(),
                c1: t.output_len() as f64 / stats.n_consumed as f64,
                output_digit_counts: stats.output_digit_counts.clone(),
                output_pair_counts: stats.output_pair_counts.clone(),
            });
            next_checkpoint += 1;
        }
    }

    let (m_max, m_first) = t.emission_peak();
    let (a_max, a_first) = t.annihilation_peak();
    stats.m_max = m_max;
    stats.m_max_first = m_first;
    stats.annihilation_max = a_max;
    stats.annihilation_first = a_first;
    stats.c1_estimate = if stats.n_consumed > 0 {
        t.output_len() as f64 / stats.n_consumed as f64
    } else {
        0.0
    };
    Ok(stats)
}

/// One line of a frequency comparison: empirical value against a
/// reference, with a 3σ binomial radius.
#[derive(Debug, Clone)]
pub struct FreqLine {
    pub label: String,
    pub estimate: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub within: bool,
}

/// Drift and agreement diagnostics computed from a finished run.
#[derive(Debug)]
pub struct ConvergenceReport {
    /// `|c1(n) − c1(n/2)| / c1(n)`.
    pub c1_drift: f64,
    /// Same relative drift for each rank-1 output digit ≤ 8.
    pub rho_drift: BTreeMap<u64, f64>,
    /// Output digit frequencies against the Gauss measure.
    pub digit_lines: Vec<FreqLine>,
    /// Rank-1 input cylinder marginals against the Gauss measure.
    pub cylinder_lines: Vec<FreqLine>,
    /// State occupancy against the Markov surrogate's stationary
    /// vector, when a model is supplied.
    pub occupancy_lines: Vec<FreqLine>,
    /// No new emission-length maximum in the second half of the run.
    pub m_max_stable: bool,
    /// No new annihilation-run maximum in the second half.
    pub annihilation_stable: bool,
}

fn three_sigma(mu: f64, n: u64) -> f64 {
    3.0 * (mu * (1.0 - mu) / n.max(1) as f64).sqrt()
}

pub fn convergence_report(
    stats: &OrbitStats,
    model: Option<(&ComponentGraph, &MarkovModel)>,
) -> Result<ConvergenceReport> {
    if stats.checkpoints.len() < 2 {
        return Err(CfError::Format(
            "convergence report needs at least two checkpoints".into(),
        ));
    }
    let half = &stats.checkpoints[stats.checkpoints.len() / 2 - 1];
    let full = stats.checkpoints.last().unwrap();
    let c1_drift = if full.c1 != 0.0 {
        (full.c1 - half.c1).abs() / full.c1
    } else {
        0.0
    };

    let mut rho_drift = BTreeMap::new();
    let half_total: u64 = half.output_digit_counts.values().sum();
    let full_total: u64 = full.output_digit_counts.values().sum();
    for k in 1..=8u64 {
        let h = *half.output_digit_counts.get(&k).unwrap_or(&0) as f64 / half_total.max(1) as f64;
        let f = *full.output_digit_counts.get(&k).unwrap_or(&0) as f64 / full_total.max(1) as f64;
        let drift = if f != 0.0 { (f - h).abs() / f } else { 0.0 };
        rho_drift.insert(k, drift);
    }

    let mut digit_lines = Vec::new();
    for k in 1..=8u64 {
        let mu = gauss_measure_digit(k);
        let est = stats.digit_freq(k);
        let tol = three_sigma(mu, stats.output_total);
        digit_lines.push(FreqLine {
            label: format!("out[{k}]"),
            estimate: est,
            reference: mu,
            tolerance: tol,
            within: (est - mu).abs() <= tol,
        });
    }

    let visits: u64 = stats.state_counts.values().sum();
    let mut cylinder_lines = Vec::new();
    for k in 1..=8u64 {
        let mu = gauss_measure(&CFString::proper(vec![k])?)?;
        let est = *stats.cylinder_counts.get(&vec![k]).unwrap_or(&0) as f64 / visits.max(1) as f64;
        let tol = three_sigma(mu, visits);
        cylinder_lines.push(FreqLine {
            label: format!("C[{k}]"),
            estimate: est,
            reference: mu,
            tolerance: tol,
            within: (est - mu).abs() <= tol,
        });
    }

    let mut occupancy_lines = Vec::new();
    if let Some((graph, markov)) = model {
        let occ = stats.occupancy();
        for (row, &i) in markov.states.iter().enumerate() {
            let key = graph.states.members[i].0.to_string();
            let pi = markov.stationary[row];
            let est = *occ.get(&key).unwrap_or(&0.0);
            let tol = three_sigma(pi.clamp(1e-12, 1.0 - 1e-12), visits).max(0.02);
            occupancy_lines.push(FreqLine {
                label: key,
                estimate: est,
                reference: pi,
                tolerance: tol,
                within: (est - pi).abs() <= tol,
            });
        }
    }

    let half_n = stats.n_consumed / 2;
    Ok(ConvergenceReport {
        c1_drift,
        rho_drift,
        digit_lines,
        cylinder_lines,
        occupancy_lines,
        m_max_stable: stats.m_max_first <= half_n,
        annihilation_stable: stats.annihilation_first <= half_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_source_is_euclid() {
        let spec = SourceSpec::Explicit {
            p: BigInt::from(3),
            q: BigInt::from(7),
        };
        let digits: Vec<u64> = sample_source(&spec).unwrap().collect();
        assert_eq!(digits, vec![2, 3]);
    }

    #[test]
    fn same_seed_same_stream() {
        let spec = SourceSpec::RationalRandom { bits: 256, seed: 7 };
        let a: Vec<u64> = sample_source(&spec).unwrap().take(500).collect();
        let b: Vec<u64> = sample_source(&spec).unwrap().take(500).collect();
        assert_eq!(a, b);
        // 500 digits needs more than one 256-bit rational, so chaining
        // is exercised too.
        assert!(a.len() == 500);
    }

    #[test]
    fn digit_yield_tracks_levy_rate() {
        let digits = random_rational_digits(20_000, 3).unwrap();
        assert!(
            digits.len() as f64 >= 0.4 * 20_000.0,
            "only {} digits",
            digits.len()
        );
    }

    #[test]
    fn identity_run_echoes_input() {
        let spec = SourceSpec::RationalRandom {
            bits: 4_000,
            seed: 11,
        };
        let stats = run_experiment(&Mat2::identity(), &spec, 2_000).unwrap();
        assert!(stats.aborted.is_none());
        assert_eq!(stats.n_consumed, 2_000);
        assert!((stats.c1_estimate - 1.0).abs() < 1e-9);
        // Output digit counts equal input counts (identity echoes).
        let input: Vec<u64> = sample_source(&spec).unwrap().take(2_000).collect();
        for k in 1..=8u64 {
            let in_count = input.iter().filter(|&&d| d == k).count() as u64;
            let out_count = *stats.output_digit_counts.get(&k).unwrap_or(&0);
            // The streaming hold-back keeps the last few digits pending.
            assert!(
                in_count.abs_diff(out_count) <= DEFAULT_HOLDBACK as u64 + 2,
                "digit {k}: {in_count} in vs {out_count} out"
            );
        }
    }

    #[test]
    fn halver_on_all_ones_cycles_parity_states() {
        // Feeding the golden ratio tail into the halver visits the
        // three doubling/halving states cyclically.
        let spec = SourceSpec::Explicit {
            p: BigInt::from(6765),
            q: BigInt::from(10946),
        };
        let stats = run_experiment(&Mat2::new(1, 0, 0, 2), &spec, 18).unwrap();
        assert!(stats.aborted.is_none());
        let keys: Vec<&String> = stats.state_counts.keys().collect();
        assert!(keys.iter().any(|k| k.as_str() == "(1,0;0,2)"));
        assert!(keys.iter().any(|k| k.as_str() == "(2,0;0,1)"));
    }

    #[test]
    fn doubler_digit_frequencies_approach_gauss() {
        let spec = SourceSpec::RationalRandom {
            bits: 60_000,
            seed: 5,
        };
        let m = Mat2::new(2, 0, 0, 1);
        let stats = run_experiment(&m, &spec, 30_000).unwrap();
        assert!(stats.aborted.is_none());
        let report = convergence_report(&stats, None).unwrap();
        let bad: Vec<&FreqLine> = report
            .digit_lines
            .iter()
            .filter(|l| !l.within)
            .collect();
        assert!(
            bad.len() <= 1,
            "digit frequencies off: {:?}",
            bad.iter().map(|l| &l.label).collect::<Vec<_>>()
        );
        assert!(report.c1_drift < 0.05, "c1 drift {}", report.c1_drift);
    }

    #[test]
    fn occupancy_marginal_consistency() {
        let spec = SourceSpec::RationalRandom {
            bits: 20_000,
            seed: 9,
        };
        let stats = run_experiment(&Mat2::new(2, 0, 0, 1), &spec, 10_000).unwrap();
        // Σ over states of (cylinder, state) visits equals cylinder
        // visits, per cylinder.
        for (cyl, &count) in &stats.cylinder_counts {
            let joint: u64 = stats
                .cylinder_state_counts
                .iter()
                .filter(|((c, _), _)| c == cyl)
                .map(|(_, v)| *v)
                .sum();
            assert_eq!(joint, count, "cylinder {cyl:?}");
        }
    }
}
