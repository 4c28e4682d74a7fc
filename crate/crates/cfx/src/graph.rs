//! Structure of the step relation over a whole state set: per-state
//! successor maps (eventually periodic in the input digit), the
//! transition graph with its strongly connected components and sink
//! components, and a Markov chain surrogate for digit statistics.

use std::collections::{BTreeMap, HashMap, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::cf::{gauss_measure_digit, CFString, Digit};
use crate::error::{CfError, Result};
use crate::mat::Mat2;
use crate::states::{enumerate, StateSet};
use crate::transducer::{step, StepResult};

/// How many full periods the analyzer verifies before accepting a
/// `(preperiod, period)` pair.
const VERIFY_PERIODS: u64 = 64;

/// One residue class of input digits `j ≡ residue (mod period)`,
/// `j > preperiod`. The output string for such `j` is the template with
/// `k = (j - j_start) / period` substituted into the affine entries; at
/// most one entry (possibly the head) has a nonzero slope.
#[derive(Debug, Clone)]
pub struct ResidueClass {
    /// `j mod period` for members of this class.
    pub residue: u64,
    /// Smallest digit in the class beyond the preperiod.
    pub j_start: u64,
    /// Output head as `base + slope * k`.
    pub head_base: i64,
    pub head_slope: i64,
    /// Output tail digits, each as `base + slope * k`.
    pub tail: Vec<(u64, i64)>,
    /// The successor state, constant over the class.
    pub next: Mat2,
}

/// The complete successor map of a single state: an exceptional table
/// for small digits plus eventually periodic residue classes.
#[derive(Debug, Clone)]
pub struct SuccessorMap {
    pub state: Mat2,
    /// Digits `1..=preperiod` are listed explicitly.
    pub preperiod: u64,
    pub period: u64,
    /// Step results for `j = 1..=preperiod`, in digit order.
    pub exceptional: Vec<StepResult>,
    /// One class per residue `0..period`, ordered by `j_start`.
    pub classes: Vec<ResidueClass>,
}

fn affine_fit(values: &[i128]) -> Option<(i128, i128)> {
    let base = values[0];
    if values.len() == 1 {
        return Some((base, 0));
    }
    let slope = values[1] - values[0];
    for w in values.windows(2) {
        if w[1] - w[0] != slope {
            return None;
        }
    }
    Some((base, slope))
}

impl SuccessorMap {
    /// Finds the minimal period, then the minimal preperiod for it, by
    /// probing `step(state, j)` over a window of [`VERIFY_PERIODS`]
    /// periods. The probe budget scales with the determinant; if no
    /// pair explains the pattern the state set is not eventually
    /// periodic within the budget and an error is returned.
    pub fn analyze(state: &Mat2) -> Result<SuccessorMap> {
        let d = {
            let det = state.det();
            let mag: num_bigint::BigInt = if det < num_bigint::BigInt::from(0) {
                -det
            } else {
                det
            };
            u64::try_from(mag).map_err(|_| CfError::Internal("determinant too large".into()))?
        };
        let p_max = (4 * d).max(8);
        let t_max = (8 * d).max(8);
        let mut probes: Vec<StepResult> = Vec::new();
        let probe_to = |probes: &mut Vec<StepResult>, n: u64| -> Result<()> {
            while (probes.len() as u64) < n {
                let j = probes.len() as u64 + 1;
                probes.push(step(state, Digit::new(j)?)?);
            }
            Ok(())
        };

        for period in 1..=p_max {
            for preperiod in 0..=t_max {
                let window_end = preperiod + VERIFY_PERIODS * period;
                probe_to(&mut probes, window_end)?;
                if let Some(classes) = Self::try_fit(&probes, preperiod, period) {
                    return Ok(SuccessorMap {
                        state: state.clone(),
                        preperiod,
                        period,
                        exceptional: probes[..preperiod as usize].to_vec(),
                        classes,
                    });
                }
            }
        }
        Err(CfError::PeriodicityNotFound {
            state: state.to_string(),
            j_max: t_max + VERIFY_PERIODS * p_max,
        })
    }

    /// Checks whether `(preperiod, period)` explains every probe beyond
    /// the preperiod, and builds the residue classes if so.
    fn try_fit(probes: &[StepResult], preperiod: u64, period: u64) -> Option<Vec<ResidueClass>> {
        let mut classes = Vec::with_capacity(period as usize);
        for offset in 1..=period {
            let j_start = preperiod + offset;
            let members: Vec<&StepResult> = (0..)
                .map(|k| j_start + k * period)
                .take_while(|j| *j <= probes.len() as u64)
                .map(|j| &probes[(j - 1) as usize])
                .collect();
            if members.len() < 2 {
                return None;
            }
            let first = members[0];
            let tail_len = first.out.tail().len();
            if !members.iter().all(|r| {
                r.next == first.next && r.out.tail().len() == tail_len
            }) {
                return None;
            }
            let heads: Vec<i128> = members.iter().map(|r| r.out.head() as i128).collect();
            let (head_base, head_slope) = affine_fit(&heads)?;
            let mut tail = Vec::with_capacity(tail_len);
            let mut live_slots = if head_slope != 0 { 1 } else { 0 };
            for pos in 0..tail_len {
                let col: Vec<i128> = members.iter().map(|r| r.out.tail()[pos] as i128).collect();
                let (base, slope) = affine_fit(&col)?;
                if slope != 0 {
                    // Digits must stay >= 1 for arbitrarily large k.
                    if slope < 0 {
                        return None;
                    }
                    live_slots += 1;
                }
                tail.push((u64::try_from(base).ok()?, slope as i64));
            }
            if live_slots > 1 {
                return None;
            }
            classes.push(ResidueClass {
                residue: j_start % period,
                j_start,
                head_base: i64::try_from(head_base).ok()?,
                head_slope: i64::try_from(head_slope).ok()?,
                tail,
                next: first.next.clone(),
            });
        }
        Some(classes)
    }

    fn class_for(&self, j: u64) -> &ResidueClass {
        let offset = (j - self.preperiod - 1) % self.period;
        &self.classes[offset as usize]
    }

    /// The successor state for input digit `j`, without building the
    /// output string.
    pub fn next_state(&self, j: u64) -> &Mat2 {
        if j <= self.preperiod {
            &self.exceptional[(j - 1) as usize].next
        } else {
            &self.class_for(j).next
        }
    }

    /// Reconstructs the full step result for digit `j` from the
    /// templates. Agrees with [`step`] for every `j`.
    pub fn predict(&self, j: u64) -> Result<StepResult> {
        if j == 0 {
            return Err(CfError::InvalidDigit(0));
        }
        if j <= self.preperiod {
            return Ok(self.exceptional[(j - 1) as usize].clone());
        }
        let class = self.class_for(j);
        let k = ((j - class.j_start) / self.period) as i128;
        let head = class.head_base as i128 + class.head_slope as i128 * k;
        let head = i64::try_from(head).map_err(|_| CfError::HeadOverflow(head.to_string()))?;
        let mut tail = Vec::with_capacity(class.tail.len());
        for &(base, slope) in &class.tail {
            let v = base as i128 + slope as i128 * k;
            tail.push(u64::try_from(v).map_err(|_| CfError::DigitOverflow(v.to_string()))?);
        }
        Ok(StepResult {
            out: CFString::new(head, tail)?,
            next: class.next.clone(),
        })
    }

    /// Every distinct successor state, each with the smallest digit
    /// that reaches it.
    pub fn successor_witnesses(&self) -> Vec<(Mat2, u64)> {
        let mut seen: BTreeMap<String, (Mat2, u64)> = BTreeMap::new();
        let mut visit = |next: &Mat2, j: u64| {
            seen.entry(next.to_string())
                .or_insert_with(|| (next.clone(), j));
        };
        for (i, r) in self.exceptional.iter().enumerate() {
            visit(&r.next, i as u64 + 1);
        }
        for class in &self.classes {
            visit(&class.next, class.j_start);
        }
        let mut out: Vec<(Mat2, u64)> = seen.into_values().collect();
        out.sort_by_key(|(_, j)| *j);
        out
    }
}

/// Analyzes every state of a set, spreading the work over `workers`
/// threads.
fn analyze_all(states: &StateSet, workers: usize) -> Result<Vec<SuccessorMap>> {
    if workers <= 1 || states.len() < 2 {
        return states
            .members
            .iter()
            .map(|(m, _)| SuccessorMap::analyze(m))
            .collect();
    }
    let chunk = states.len().div_ceil(workers);
    let results: Vec<Result<Vec<SuccessorMap>>> = std::thread::scope(|scope| {
        states
            .members
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|(m, _)| SuccessorMap::analyze(m)).collect()))
            .collect::<Vec<_>>()
            .into_iter()
            .map(|h| h.join().expect("analysis thread panicked"))
            .collect()
    });
    let mut maps = Vec::with_capacity(states.len());
    for r in results {
        maps.extend(r?);
    }
    Ok(maps)
}

/// The transition graph of a whole state set: one node per state, one
/// edge per distinct successor with a witness digit, plus the strongly
/// connected component structure.
#[derive(Debug)]
pub struct ComponentGraph {
    pub states: StateSet,
    pub successors: Vec<SuccessorMap>,
    /// Adjacency: `edges[i]` lists `(target_index, witness_digit)`.
    pub edges: Vec<Vec<(usize, u64)>>,
    /// Strongly connected components in reverse topological order.
    pub sccs: Vec<Vec<usize>>,
    /// `scc_of[i]` is the component id of state `i`.
    pub scc_of: Vec<usize>,
    /// Component ids with no edge leaving the component.
    pub sinks: Vec<usize>,
}

impl ComponentGraph {
    /// Builds the graph for determinant magnitude `d`, verifying along
    /// the way that every successor stays inside the enumerated set.
    ///
    /// ```
    /// use cfx::graph::{ComponentGraph, MarkovModel};
    ///
    /// let g = ComponentGraph::build(2).unwrap();
    /// // The eight |det| = 2 states settle into one five-state sink.
    /// assert_eq!(g.states.len(), 8);
    /// assert_eq!(g.sinks.len(), 1);
    /// assert_eq!(g.sccs[g.sinks[0]].len(), 5);
    /// g.verify_sinks().unwrap();
    ///
    /// // The Markov surrogate on the sink has a positive spectral gap
    /// // and a fully supported stationary vector.
    /// let mk = MarkovModel::build(&g, g.sinks[0], 4096).unwrap();
    /// assert!(mk.gap() > 0.1);
    /// assert!(mk.stationary.iter().all(|&p| p > 0.0 && p < 1.0));
    /// ```
    pub fn build(d: u64) -> Result<ComponentGraph> {
        Self::build_with_workers(d, 1)
    }

    /// Like [`ComponentGraph::build`], analyzing states on `workers`
    /// threads (the per-state successor analysis is pure and
    /// embarrassingly parallel).
    pub fn build_with_workers(d: u64, workers: usize) -> Result<ComponentGraph> {
        let states = enumerate(d)?;
        let maps = analyze_all(&states, workers.max(1))?;
        let mut successors = Vec::with_capacity(states.len());
        let mut edges: Vec<Vec<(usize, u64)>> = Vec::with_capacity(states.len());
        for ((m, _), map) in states.members.iter().zip(maps) {
            let mut adj = Vec::new();
            for (next, witness) in map.successor_witnesses() {
                let idx = states.index_of(&next).ok_or_else(|| CfError::ClosureViolation {
                    state: m.to_string(),
                    successor: next.to_string(),
                    d,
                })?;
                adj.push((idx, witness));
            }
            successors.push(map);
            edges.push(adj);
        }

        let mut pg: DiGraph<usize, u64> = DiGraph::new();
        let nodes: Vec<NodeIndex> = (0..states.len()).map(|i| pg.add_node(i)).collect();
        for (i, adj) in edges.iter().enumerate() {
            for &(t, w) in adj {
                pg.add_edge(nodes[i], nodes[t], w);
            }
        }
        let sccs: Vec<Vec<usize>> = tarjan_scc(&pg)
            .into_iter()
            .map(|comp| comp.into_iter().map(|n| pg[n]).collect())
            .collect();
        let mut scc_of = vec![0usize; states.len()];
        for (cid, comp) in sccs.iter().enumerate() {
            for &i in comp {
                scc_of[i] = cid;
            }
        }
        let mut sinks = Vec::new();
        for (cid, comp) in sccs.iter().enumerate() {
            let leaves = comp
                .iter()
                .flat_map(|&i| edges[i].iter())
                .any(|&(t, _)| scc_of[t] != cid);
            if !leaves {
                sinks.push(cid);
            }
        }
        Ok(ComponentGraph {
            states,
            successors,
            edges,
            sccs,
            scc_of,
            sinks,
        })
    }

    /// Shortest digit string (BFS over witness edges) leading from
    /// state `from` to any state in component `scc`. `None` if the
    /// component is unreachable.
    pub fn entry_string(&self, from: usize, scc: usize) -> Option<Vec<u64>> {
        if self.scc_of[from] == scc {
            return Some(Vec::new());
        }
        let mut parent: HashMap<usize, (usize, u64)> = HashMap::new();
        let mut queue = VecDeque::from([from]);
        while let Some(i) = queue.pop_front() {
            for &(t, w) in &self.edges[i] {
                if t != from && !parent.contains_key(&t) {
                    parent.insert(t, (i, w));
                    if self.scc_of[t] == scc {
                        let mut digits = vec![w];
                        let mut cur = i;
                        while cur != from {
                            let (p, pw) = parent[&cur];
                            digits.push(pw);
                            cur = p;
                        }
                        digits.reverse();
                        return Some(digits);
                    }
                    queue.push_back(t);
                }
            }
        }
        None
    }

    /// Entry strings from `from` to every sink component, paired with
    /// the component id. Unreachable sinks are omitted.
    pub fn entry_strings(&self, from: usize) -> Vec<(usize, Vec<u64>)> {
        self.sinks
            .iter()
            .filter_map(|&scc| self.entry_string(from, scc).map(|s| (scc, s)))
            .collect()
    }

    /// Direct verification of the two transitive-component conditions
    /// for every sink: no edge leaves the component (closure over all
    /// residue classes and exceptions — the edge set was derived from
    /// exactly those), and every member reaches every other member
    /// inside the component.
    pub fn verify_sinks(&self) -> Result<()> {
        for &sink in &self.sinks {
            let members = &self.sccs[sink];
            for &i in members {
                for &(t, _) in &self.edges[i] {
                    if self.scc_of[t] != sink {
                        return Err(CfError::ClosureViolation {
                            state: self.states.members[i].0.to_string(),
                            successor: self.states.members[t].0.to_string(),
                            d: self.states.d,
                        });
                    }
                }
                // BFS inside the component from i.
                let mut seen: std::collections::HashSet<usize> = [i].into_iter().collect();
                let mut queue = VecDeque::from([i]);
                while let Some(cur) = queue.pop_front() {
                    for &(t, _) in &self.edges[cur] {
                        if seen.insert(t) {
                            queue.push_back(t);
                        }
                    }
                }
                for &j in members {
                    if !seen.contains(&j) {
                        return Err(CfError::Internal(format!(
                            "sink {sink} not mutually reachable: {} cannot reach {}",
                            self.states.members[i].0, self.states.members[j].0
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// GraphViz DOT rendering. Edge labels summarize the successor
    /// map: preperiod, period, and one residue→successor line each.
    pub fn to_dot(&self) -> String {
        use std::fmt::Write;
        let mut out = String::from("digraph states {\n  rankdir=LR;\n");
        for (i, (m, ty)) in self.states.members.iter().enumerate() {
            let shape = if self.sinks.contains(&self.scc_of[i]) {
                "doublecircle"
            } else {
                "circle"
            };
            let _ = writeln!(
                out,
                "  n{i} [label=\"{m}\\n{ty}\" shape={shape}];"
            );
        }
        for (i, map) in self.successors.iter().enumerate() {
            for &(t, w) in &self.edges[i] {
                let residues: Vec<String> = map
                    .classes
                    .iter()
                    .filter(|c| self.states.index_of(&c.next) == Some(t))
                    .map(|c| format!("r{}", c.residue))
                    .collect();
                let _ = writeln!(
                    out,
                    "  n{i} -> n{t} [label=\"j={w} t={} p={} {}\"];",
                    map.preperiod,
                    map.period,
                    residues.join(",")
                );
            }
        }
        out.push_str("}\n");
        out
    }
}

/// A finite-state Markov surrogate over one transitive (sink)
/// component: digits are drawn from the Gauss measure independently of
/// the state, giving transition mass
/// `K[i][s] = Σ_{a: next(a)=s} log2(1 + 1/(a(a+2)))`. Digits above
/// `a_max` are folded in through the residue classes: the leftover mass
/// `log2(1 + 1/(a_max+1))` is split evenly over the classes of each
/// row, which is exact in the limit and off by O(1/a_max) otherwise.
/// Restricting to a sink is what makes the chain irreducible, so the
/// stationary vector has all coordinates strictly inside (0, 1).
#[derive(Debug)]
pub struct MarkovModel {
    pub d: u64,
    pub a_max: u64,
    /// Which sink component of the graph this chain lives on.
    pub sink: usize,
    /// Graph state indices of the component members, in row order.
    pub states: Vec<usize>,
    /// Row-stochastic transition matrix over `states`.
    pub kernel: Vec<Vec<f64>>,
    /// Gauss mass of digits above `a_max` (the part distributed by
    /// residue class rather than summed digit by digit), per row.
    pub tail_mass: f64,
    pub stationary: Vec<f64>,
    pub iterations: u64,
    pub residual: f64,
}

impl MarkovModel {
    /// Builds the surrogate chain on sink component `sink` of the
    /// graph. Sinks are closed under the step relation, so every
    /// successor reached below stays inside the component.
    pub fn build(graph: &ComponentGraph, sink: usize, a_max: u64) -> Result<MarkovModel> {
        if !graph.sinks.contains(&sink) {
            return Err(CfError::Format(format!(
                "component {sink} is not a sink (sinks: {:?})",
                graph.sinks
            )));
        }
        let mut states = graph.sccs[sink].clone();
        states.sort_unstable();
        let row_of: HashMap<usize, usize> =
            states.iter().enumerate().map(|(r, &i)| (i, r)).collect();
        let n = states.len();
        let mut kernel = vec![vec![0.0f64; n]; n];
        let tail_mass = (1.0 + 1.0 / (a_max as f64 + 1.0)).log2();
        for (row, &i) in states.iter().enumerate() {
            let map = &graph.successors[i];
            for a in 1..=a_max {
                let s = graph
                    .states
                    .index_of(map.next_state(a))
                    .expect("closure checked at build time");
                kernel[row][row_of[&s]] += gauss_measure_digit(a);
            }
            let per_class = tail_mass / map.period as f64;
            for class in &map.classes {
                let s = graph
                    .states
                    .index_of(&class.next)
                    .expect("closure checked at build time");
                kernel[row][row_of[&s]] += per_class;
            }
        }

        let mut pi = vec![1.0 / n as f64; n];
        let mut residual = f64::INFINITY;
        let mut iterations = 0u64;
        const MAX_ITERS: u64 = 200_000;
        while residual > 1e-13 {
            if iterations >= MAX_ITERS {
                return Err(CfError::NoConvergence(format!(
                    "stationary distribution residual {residual:.3e} after {iterations} iterations"
                )));
            }
            let mut next = vec![0.0f64; n];
            for (i, row) in kernel.iter().enumerate() {
                let w = pi[i];
                if w == 0.0 {
                    continue;
                }
                for (s, k) in row.iter().enumerate() {
                    next[s] += w * k;
                }
            }
            let norm: f64 = next.iter().sum();
            for v in &mut next {
                *v /= norm;
            }
            residual = pi
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
            pi = next;
            iterations += 1;
        }
        Ok(MarkovModel {
            d: graph.states.d,
            a_max,
            sink,
            states,
            kernel,
            tail_mass,
            stationary: pi,
            iterations,
            residual,
        })
    }

    /// Distance of the stationary vector from the degenerate corners:
    /// `min(min_i π_i, 1 - max_i π_i)`.
    pub fn gap(&self) -> f64 {
        let min = self.stationary.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.stationary.iter().cloned().fold(0.0, f64::max);
        min.min(1.0 - max)
    }
}
