use std::io::{self, Read, Write};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_bigint::BigInt;
use num_rational::BigRational;
use serde_json::json;

use cfx::cf::{gauss_measure, CFString, Digit};
use cfx::error::CfError;
use cfx::graph::{ComponentGraph, MarkovModel};
use cfx::lab::{convergence_report, run_experiment, sample_source, SourceSpec};
use cfx::mat::Mat2;
use cfx::oracle::verify_transduction;
use cfx::states::enumerate;
use cfx::stream;
use cfx::transducer::{head_normalize, TransducerState};
use cfx::triggers::{trigger_census, NiceConvention};

/// Exact continued fraction transduction under integer Möbius maps,
/// plus the analysis machinery around it.
#[derive(Parser)]
#[command(name = "cfx", version)]
struct Cli {
    /// Worker threads for parallelizable analyses (env: CFX_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct SourceArgs {
    /// Bit size of the random rational source.
    #[arg(long, default_value_t = 100_000)]
    bits: u64,
    /// Seed of the random rational source (recorded in reports).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Read input digits from a cfd1 file instead of the random source.
    #[arg(long)]
    source_file: Option<std::path::PathBuf>,
}

impl SourceArgs {
    fn spec(&self) -> SourceSpec {
        match &self.source_file {
            Some(path) => SourceSpec::File { path: path.clone() },
            None => SourceSpec::RationalRandom {
                bits: self.bits,
                seed: self.seed,
            },
        }
    }

    fn describe(&self) -> serde_json::Value {
        match &self.source_file {
            Some(p) => json!({"kind": "file", "path": p.display().to_string()}),
            None => json!({"kind": "rational-random", "bits": self.bits, "seed": self.seed}),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Transduce a cfd1 digit stream on stdin into the expansion of Mx
    /// on stdout.
    Transform {
        /// The matrix, as "a,b;c,d".
        #[arg(long)]
        matrix: String,
        /// Digits held back from flushing (junctions may rewrite them).
        #[arg(long, default_value_t = 8)]
        holdback: usize,
        /// Exact rational value of the input remainder after the last
        /// provided digit ("p/q"; use "0/1" if the input terminates).
        /// Resolves the held-back digits exactly.
        #[arg(long)]
        tail_exact: Option<String>,
    },
    /// Enumerate the state set of a determinant magnitude.
    States {
        #[arg(long)]
        det: u64,
        /// Print only the number of states.
        #[arg(long)]
        count: bool,
        #[arg(long)]
        json: bool,
    },
    /// Transition graph: components, sinks, entry strings, and
    /// optionally the Markov surrogate.
    Graph {
        #[arg(long)]
        det: u64,
        /// Also build the Markov surrogate and stationary vector, one
        /// chain per sink component.
        #[arg(long)]
        markov: bool,
        /// Digit cutoff for exact Gauss mass summation.
        #[arg(long, default_value_t = 4096)]
        cutoff: u64,
        /// Write a GraphViz DOT rendering of the transition graph.
        #[arg(long)]
        dot: Option<std::path::PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Trigger census for a target string over a sampled input.
    Triggers {
        #[arg(long)]
        matrix: String,
        /// Target digits, e.g. "2" or "1,2".
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 10_000)]
        digits: u64,
        /// Allow occurrences starting at the first tail digit.
        #[arg(long)]
        wide: bool,
        #[command(flatten)]
        source: SourceArgs,
        /// "json" or "text".
        #[arg(long, default_value = "text")]
        report: String,
    },
    /// Long orbit run: digit statistics, occupancy, convergence.
    Simulate {
        #[arg(long)]
        matrix: String,
        #[arg(long, default_value_t = 100_000)]
        digits: u64,
        #[command(flatten)]
        source: SourceArgs,
        /// "json" or "text".
        #[arg(long, default_value = "text")]
        report: String,
    },
    /// Replay a stream through the transducer and the exact interval
    /// oracle; nonzero exit on any divergence.
    Verify {
        #[arg(long)]
        matrix: String,
        #[arg(long, default_value_t = 2_000)]
        digits: u64,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        json: bool,
    },
    /// Gauss measure of a cylinder, e.g. --cylinder "1" or "1,2".
    Measure {
        #[arg(long)]
        cylinder: String,
    },
}

fn exit_code_for(e: &CfError) -> u8 {
    match e {
        CfError::Pole => 2,
        CfError::HoldbackUnderflow { .. } | CfError::ReductionUnderflow => 3,
        CfError::NonTermination { .. } | CfError::ZeroQuotientRun { .. } => 4,
        CfError::ClosureViolation { .. } | CfError::PeriodicityNotFound { .. } => 5,
        _ => 1,
    }
}

fn parse_digit_list(text: &str) -> Result<Vec<u64>, CfError> {
    text.split([',', ' '])
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<u64>()
                .map_err(|_| CfError::Format(format!("bad digit {t:?}")))
        })
        .collect()
}

fn parse_rational(text: &str) -> Result<BigRational, CfError> {
    let (p, q) = match text.split_once('/') {
        Some((p, q)) => (p, q),
        None => (text, "1"),
    };
    let p: BigInt = p
        .trim()
        .parse()
        .map_err(|_| CfError::Format(format!("bad numerator {p:?}")))?;
    let q: BigInt = q
        .trim()
        .parse()
        .map_err(|_| CfError::Format(format!("bad denominator {q:?}")))?;
    if q == BigInt::from(0) {
        return Err(CfError::ZeroDeterminant(text.into()));
    }
    Ok(BigRational::new(p, q))
}

fn workers(cli_flag: Option<usize>) -> usize {
    cli_flag
        .or_else(|| {
            std::env::var("CFX_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
        .max(1)
}

fn cmd_transform(matrix: &str, holdback: usize, tail_exact: Option<&str>) -> Result<(), CfError> {
    let m = Mat2::parse(matrix)?;
    let mut buf = String::new();
    io::stdin()
        .read_to_string(&mut buf)
        .map_err(|e| CfError::Format(e.to_string()))?;
    let input = stream::parse(buf.as_bytes())?;
    let mut it = input.tail().iter().copied();
    let hn = head_normalize(&m, input.head(), &mut it)?;
    let mut t = TransducerState::with_prefix(&hn.prefix, &hn.state, holdback)?;
    for d in it {
        t.push_digit(Digit::new(d)?)?;
    }
    let tail = tail_exact.map(parse_rational).transpose()?;
    let out = t.finish(tail.as_ref())?;
    let stdout = io::stdout();
    stream::write(&mut stdout.lock(), &out).map_err(|e| CfError::Format(e.to_string()))?;
    Ok(())
}

fn cmd_states(det: u64, count: bool, as_json: bool) -> Result<(), CfError> {
    let set = enumerate(det)?;
    if count {
        println!("{}", set.len());
        return Ok(());
    }
    if as_json {
        let members: Vec<_> = set
            .members
            .iter()
            .map(|(m, ty)| json!({"matrix": m.to_string(), "type": ty.to_string()}))
            .collect();
        println!(
            "{}",
            json!({"schema": "cfx/1", "det": det, "count": set.len(), "states": members})
        );
    } else {
        for (m, ty) in &set.members {
            println!("{m}  type {ty}");
        }
        println!("{} states with |det| = {det}", set.len());
    }
    Ok(())
}

fn cmd_graph(
    det: u64,
    markov: bool,
    cutoff: u64,
    dot: Option<&std::path::Path>,
    as_json: bool,
    workers: usize,
) -> Result<(), CfError> {
    let g = ComponentGraph::build_with_workers(det, workers)?;
    g.verify_sinks()?;
    if let Some(path) = dot {
        std::fs::write(path, g.to_dot()).map_err(|e| CfError::Format(e.to_string()))?;
    }
    let models = if markov {
        g.sinks
            .iter()
            .map(|&sink| MarkovModel::build(&g, sink, cutoff))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    if as_json {
        let comps: Vec<_> = g
            .sccs
            .iter()
            .enumerate()
            .map(|(cid, comp)| {
                json!({
                    "id": cid,
                    "sink": g.sinks.contains(&cid),
                    "states": comp.iter().map(|&i| g.states.members[i].0.to_string()).collect::<Vec<_>>(),
                })
            })
            .collect();
        let mut doc = json!({
            "schema": "cfx/1",
            "det": det,
            "states": g.states.len(),
            "components": comps,
            "sinks": g.sinks,
        });
        if !models.is_empty() {
            doc["markov"] = models
                .iter()
                .map(|model| {
                    json!({
                        "sink": model.sink,
                        "a_max": model.a_max,
                        "tail_bound": model.tail_mass,
                        "iterations": model.iterations,
                        "residual": model.residual,
                        "gap": model.gap(),
                        "K": model.kernel,
                        "pi": model.states.iter().zip(&model.stationary)
                            .map(|(&i, pi)| json!({"state": g.states.members[i].0.to_string(), "pi": pi}))
                            .collect::<Vec<_>>(),
                    })
                })
                .collect::<Vec<_>>()
                .into();
        }
        println!("{doc}");
    } else {
        println!("{} states, {} components, sinks: {:?}", g.states.len(), g.sccs.len(), g.sinks);
        for (cid, comp) in g.sccs.iter().enumerate() {
            let tag = if g.sinks.contains(&cid) { " (sink)" } else { "" };
            let names: Vec<String> = comp
                .iter()
                .map(|&i| g.states.members[i].0.to_string())
                .collect();
            println!("component {cid}{tag}: {}", names.join(" "));
        }
        for model in &models {
            println!(
                "markov (sink {}): gap {:.6}, residual {:.2e} after {} iterations",
                model.sink,
                model.gap(),
                model.residual,
                model.iterations
            );
        }
    }
    Ok(())
}

fn cmd_triggers(
    matrix: &str,
    target: &str,
    digits: u64,
    wide: bool,
    source: &SourceArgs,
    report: &str,
) -> Result<(), CfError> {
    let m = Mat2::parse(matrix)?;
    let r = CFString::proper(parse_digit_list(target)?)?;
    let input_digits: Vec<u64> = sample_source(&source.spec())?.take(digits as usize).collect();
    let input = CFString::proper(input_digits)?;
    let conv = if wide {
        NiceConvention::Wide
    } else {
        NiceConvention::Conservative
    };
    let census = trigger_census(&m, &input, &r, conv)?;
    let slack = census.occurrence_count as i64 - census.multiplicity_sum() as i64;
    if report == "json" {
        let instances: Vec<_> = census
            .instances
            .iter()
            .map(|t| {
                json!({
                    "s": t.s.to_string(),
                    "state": t.state.to_string(),
                    "multiplicity": t.multiplicity,
                    "relative_position": t.relative_position,
                })
            })
            .collect();
        println!(
            "{}",
            json!({
                "schema": "cfx/1",
                "matrix": m.to_string(),
                "det": m.det().to_string(),
                "target": r.to_string(),
                "n": input.tail().len(),
                "source": source.describe(),
                "occurrence_count": census.occurrence_count,
                "nice_count": census.nice_count,
                "multiplicity_sum": census.multiplicity_sum(),
                "slack": slack,
                "max_trigger_len": census.max_trigger_len,
                "instances": instances,
            })
        );
    } else {
        println!(
            "{} occurrences of {r} ({} nice); census multiplicity sum {} (slack {slack}); longest trigger {} digits",
            census.occurrence_count,
            census.nice_count,
            census.multiplicity_sum(),
            census.max_trigger_len
        );
        for t in census.instances.iter().take(20) {
            println!(
                "  {} from {}  ×{} at {}",
                t.s, t.state, t.multiplicity, t.relative_position
            );
        }
        if census.instances.len() > 20 {
            println!("  … {} more", census.instances.len() - 20);
        }
    }
    Ok(())
}

fn cmd_simulate(matrix: &str, digits: u64, source: &SourceArgs, report: &str) -> Result<(), CfError> {
    let m = Mat2::parse(matrix)?;
    let stats = run_experiment(&m, &source.spec(), digits)?;
    let det = m.det();
    let d_abs = det.magnitude().try_into().unwrap_or(u64::MAX);
    let reference = if d_abs <= 16 {
        ComponentGraph::build(d_abs)
            .and_then(|g| {
                let sink = g.sinks[0];
                MarkovModel::build(&g, sink, 4096).map(|mm| (g, mm))
            })
            .ok()
    } else {
        None
    };
    let rep = convergence_report(&stats, reference.as_ref().map(|(g, mm)| (g, mm)))?;

    if report == "json" {
        let digit_freqs: serde_json::Map<String, serde_json::Value> = (1..=8u64)
            .map(|k| (k.to_string(), json!(stats.digit_freq(k))))
            .collect();
        let cylinder_freqs: Vec<_> = rep
            .cylinder_lines
            .iter()
            .map(|l| json!({"cylinder": l.label, "freq": l.estimate, "mu": l.reference, "within_3sigma": l.within}))
            .collect();
        let occupancy: serde_json::Map<String, serde_json::Value> = stats
            .occupancy()
            .into_iter()
            .map(|(k, v)| (k, json!(v)))
            .collect();
        let pi_reference: Vec<_> = rep
            .occupancy_lines
            .iter()
            .map(|l| json!({"state": l.label, "occupancy": l.estimate, "pi": l.reference, "within": l.within}))
            .collect();
        let verdicts = json!({
            "digits_within_3sigma": rep.digit_lines.iter().filter(|l| l.within).count(),
            "digits_total": rep.digit_lines.len(),
            "c1_drift": rep.c1_drift,
            "m_max_stable": rep.m_max_stable,
            "annihilation_stable": rep.annihilation_stable,
            "aborted": stats.aborted,
        });
        println!(
            "{}",
            json!({
                "schema": "cfx/1",
                "matrix": m.to_string(),
                "det": det.to_string(),
                "n": stats.n_consumed,
                "source": source.describe(),
                "ell": stats.checkpoints.last().map(|c| c.ell),
                "c1": stats.c1_estimate,
                "m_max": stats.m_max,
                "annih_max": stats.annihilation_max,
                "digit_freqs": digit_freqs,
                "cylinder_freqs": cylinder_freqs,
                "state_occupancy": occupancy,
                "pi_reference": pi_reference,
                "verdicts": verdicts,
            })
        );
    } else {
        println!(
            "n = {}, ℓ(n) = {}, c1 ≈ {:.6} (drift {:.4})",
            stats.n_consumed,
            stats.checkpoints.last().map(|c| c.ell).unwrap_or(0),
            stats.c1_estimate,
            rep.c1_drift
        );
        println!(
            "m_max = {} (first at step {}), annihilation_max = {} (first at {})",
            stats.m_max, stats.m_max_first, stats.annihilation_max, stats.annihilation_first
        );
        for l in &rep.digit_lines {
            println!(
                "  {}: {:.6} vs μ {:.6} ± {:.6} {}",
                l.label,
                l.estimate,
                l.reference,
                l.tolerance,
                if l.within { "ok" } else { "OFF" }
            );
        }
        if let Some(reason) = &stats.aborted {
            println!("aborted early: {reason}");
        }
    }
    Ok(())
}

fn cmd_verify(matrix: &str, digits: u64, source: &SourceArgs, as_json: bool) -> Result<bool, CfError> {
    let m = Mat2::parse(matrix)?;
    let report = verify_transduction(&m, &source.spec(), digits)?;
    if as_json {
        println!(
            "{}",
            json!({
                "schema": "cfx/1",
                "matrix": m.to_string(),
                "det": m.det().to_string(),
                "n": report.n,
                "source": source.describe(),
                "certified_len": report.certified_len,
                "emitted_len": report.emitted_len,
                "match_len": report.match_len,
                "first_mismatch": report.first_mismatch,
                "heads_match": report.heads_match,
                "refinement": report.refinement,
                "clean": report.is_clean(),
            })
        );
    } else {
        println!(
            "{} digits in; {} certified, {} emitted, {} compared and matching; heads {}",
            report.n,
            report.certified_len,
            report.emitted_len,
            report.match_len,
            if report.heads_match { "match" } else { "MISMATCH" }
        );
        if let Some(pos) = report.first_mismatch {
            println!("FIRST MISMATCH at output digit {pos}");
        }
    }
    Ok(report.is_clean())
}

fn cmd_measure(cylinder: &str) -> Result<(), CfError> {
    let s = CFString::proper(parse_digit_list(cylinder)?)?;
    println!("{:.12}", gauss_measure(&s)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool, CfError> {
    let w = workers(cli.workers);
    match &cli.cmd {
        Cmd::Transform {
            matrix,
            holdback,
            tail_exact,
        } => cmd_transform(matrix, *holdback, tail_exact.as_deref()).map(|_| true),
        Cmd::States { det, count, json } => cmd_states(*det, *count, *json).map(|_| true),
        Cmd::Graph {
            det,
            markov,
            cutoff,
            dot,
            json,
        } => cmd_graph(*det, *markov, *cutoff, dot.as_deref(), *json, w).map(|_| true),
        Cmd::Triggers {
            matrix,
            target,
            digits,
            wide,
            source,
            report,
        } => cmd_triggers(matrix, target, *digits, *wide, source, report).map(|_| true),
        Cmd::Simulate {
            matrix,
            digits,
            source,
            report,
        } => cmd_simulate(matrix, *digits, source, report).map(|_| true),
        Cmd::Verify {
            matrix,
            digits,
            source,
            json,
        } => cmd_verify(matrix, *digits, source, *json),
        Cmd::Measure { cylinder } => cmd_measure(cylinder).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
