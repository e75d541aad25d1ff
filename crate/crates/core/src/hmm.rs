//! Left-to-right HMMs with Gaussian-mixture emissions: initialization,
//! Baum-Welch training, forward scoring and Viterbi decoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{gmm_fit, GaussianMixture, GmmOptions, MixtureAccumulator, PreparedMixture};
use crate::math::{derive_seed, log_sum_exp};

pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 50;

/// Largest forward jump allowed by the topology (self, next, next-but-one).
const MAX_JUMP: usize = 2;

/// Left-to-right topology with skip: state `i` may move to `i`, `i + 1` or
/// `i + 2`, clamped at the last state which only self-loops. State 0 is the
/// only start state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub states: usize,
}

impl Topology {
    pub fn new(states: usize) -> Result<Self> {
        if states == 0 {
            return Err(Error::invalid("an HMM needs at least one state"));
        }
        Ok(Topology { states })
    }

    pub fn allows(&self, from: usize, to: usize) -> bool {
        to >= from && to <= self.last_successor(from)
    }

    fn last_successor(&self, from: usize) -> usize {
        (from + MAX_JUMP).min(self.states - 1)
    }

    /// Allowed successors of `from`, ascending.
    pub fn successors(&self, from: usize) -> std::ops::RangeInclusive<usize> {
        from..=self.last_successor(from)
    }

    /// Allowed predecessors of `to`, ascending.
    pub fn predecessors(&self, to: usize) -> std::ops::RangeInclusive<usize> {
        to.saturating_sub(MAX_JUMP)..=to
    }

    /// Row-stochastic matrix uniform over each row's allowed successors.
    pub fn uniform_transitions(&self) -> Vec<Vec<f64>> {
        (0..self.states)
            .map(|i| {
                let succ = self.successors(i);
                let p = 1.0 / succ.clone().count() as f64;
                (0..self.states)
                    .map(|j| if succ.contains(&j) { p } else { 0.0 })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureHmm {
    pub topology: Topology,
    /// Always one-hot on state 0.
    pub initial: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
    pub emissions: Vec<GaussianMixture>,
}

impl GestureHmm {
    /// Builds a model over the left-to-right topology from its transition
    /// rows and per-state mixtures.
    pub fn from_parts(transitions: Vec<Vec<f64>>, emissions: Vec<GaussianMixture>) -> Result<Self> {
        let topology = Topology::new(transitions.len())?;
        let mut initial = vec![0.0; topology.states];
        initial[0] = 1.0;
        let hmm = GestureHmm {
            topology,
            initial,
            transitions,
            emissions,
        };
        hmm.validate()?;
        Ok(hmm)
    }

    pub fn states(&self) -> usize {
        self.topology.states
    }

    pub fn dim(&self) -> usize {
        self.emissions.first().map_or(0, GaussianMixture::dim)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.topology.states;
        if self.initial.len() != n || self.initial[0] != 1.0 || self.initial[1..].iter().any(|p| *p != 0.0) {
            return Err(Error::invalid("initial distribution must be one-hot on state 0"));
        }
        if self.transitions.len() != n || self.emissions.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} transition rows and emissions, got {} and {}",
                self.transitions.len(),
                self.emissions.len()
            )));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(format!("transition row {i} has {} entries", row.len())));
            }
            for (j, p) in row.iter().enumerate() {
                if !(p.is_finite() && *p >= 0.0) || (!self.topology.allows(i, j) && *p != 0.0) {
                    return Err(Error::invalid(format!("transition {i}->{j} = {p} not allowed")));
                }
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("transition row {i} sums to {total}")));
            }
        }
        let d = self.dim();
        for (j, e) in self.emissions.iter().enumerate() {
            e.validate()?;
            if e.dim() != d {
                return Err(Error::invalid(format!("emission {j} has dimension {}", e.dim())));
            }
        }
        Ok(())
    }

    fn log_transitions(&self) -> Vec<Vec<f64>> {
        self.transitions
            .iter()
            .map(|r| r.iter().map(|p| p.ln()).collect())
            .collect()
    }
}

fn check_sequence<O: AsRef<[f64]>>(seq: &[O], dim: usize) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::invalid("empty observation sequence"));
    }
    for (t, o) in seq.iter().enumerate() {
        let o = o.as_ref();
        if o.len() != dim {
            return Err(Error::invalid(format!(
                "window {t} has dimension {}, model expects {dim}",
                o.len()
            )));
        }
        if o.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("window {t} is not finite")));
        }
    }
    Ok(())
}

/// Per-sequence emission tables: `log_b[t * n + j]` and mixture terms
/// `terms[(t * n + j) * m + k] = log c_jk + log N_jk(o_t)`.
struct EmissionTable {
    log_b: Vec<f64>,
    terms: Vec<f64>,
    max_m: usize,
}

fn emission_table<O: AsRef<[f64]>>(prepared: &[PreparedMixture], seq: &[O], keep_terms: bool) -> EmissionTable {
    let n = prepared.len();
    let max_m = prepared.iter().map(PreparedMixture::components).max().unwrap_or(0);
    let mut log_b = Vec::with_capacity(seq.len() * n);
    let mut terms = if keep_terms { vec![f64::NEG_INFINITY; seq.len() * n * max_m] } else { Vec::new() };
    let mut scratch = vec![0.0; max_m];
    for (t, o) in seq.iter().enumerate() {
        for (j, p) in prepared.iter().enumerate() {
            let m = p.components();
            let v = p.log_pdf(o.as_ref(), &mut scratch[..m]);
            log_b.push(v);
            if keep_terms {
                let base = (t * n + j) * max_m;
                terms[base..base + m].copy_from_slice(&scratch[..m]);
            }
        }
    }
    EmissionTable { log_b, terms, max_m }
}

/// Log-space forward pass; returns `log_alpha` (T × N, row-major).
fn forward_pass(hmm: &GestureHmm, log_a: &[Vec<f64>], log_b: &[f64], t_len: usize) -> Vec<f64> {
    let n = hmm.states();
    let mut la = vec![f64::NEG_INFINITY; t_len * n];
    la[0] = log_b[0];
    let mut buf = [0.0; MAX_JUMP + 1];
    for t in 1..t_len {
        for j in 0..n {
            let mut k = 0;
            for i in hmm.topology.predecessors(j) {
                buf[k] = la[(t - 1) * n + i] + log_a[i][j];
                k += 1;
            }
            la[t * n + j] = log_sum_exp(&buf[..k]) + log_b[t * n + j];
        }
    }
    la
}

fn backward_pass(hmm: &GestureHmm, log_a: &[Vec<f64>], log_b: &[f64], t_len: usize) -> Vec<f64> {
    let n = hmm.states();
    let mut lb = vec![0.0; t_len * n];
    let mut buf = [0.0; MAX_JUMP + 1];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for i in 0..n {
            let mut k = 0;
            for j in hmm.topology.successors(i) {
                buf[k] = log_a[i][j] + log_b[(t + 1) * n + j] + lb[(t + 1) * n + j];
                k += 1;
            }
            lb[t * n + i] = log_sum_exp(&buf[..k]);
        }
    }
    lb
}

/// `log P(O | model)`, summed over all state paths.
pub fn forward_log_likelihood<O: AsRef<[f64]>>(hmm: &GestureHmm, sequence: &[O]) -> Result<f64> {
    check_sequence(sequence, hmm.dim())?;
    let prepared: Vec<PreparedMixture> = hmm.emissions.iter().map(GaussianMixture::prepare).collect();
    let table = emission_table(&prepared, sequence, false);
    let la = forward_pass(hmm, &hmm.log_transitions(), &table.log_b, sequence.len());
    let n = hmm.states();
    Ok(log_sum_exp(&la[(sequence.len() - 1) * n..]))
}

/// Max-product decoding over a sparse lattice. `log_emit` is T × N
/// row-major; `preds(j)` yields `(i, log a_ij)` in ascending `i`. Ties go
/// to the lower state index both in the final argmax and at every
/// backpointer.
pub(crate) fn viterbi_lattice<P, I>(n: usize, log_prior: &[f64], log_emit: &[f64], preds: P) -> (Vec<usize>, f64)
where
    P: Fn(usize) -> I,
    I: Iterator<Item = (usize, f64)>,
{
    let t_len = log_emit.len() / n;
    let mut delta: Vec<f64> = (0..n).map(|j| log_prior[j] + log_emit[j]).collect();
    let mut next = vec![f64::NEG_INFINITY; n];
    let mut back = vec![0usize; t_len * n];
    for t in 1..t_len {
        for j in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = usize::MAX;
            for (i, la) in preds(j) {
                let v = delta[i] + la;
                if arg == usize::MAX || v > best {
                    best = v;
                    arg = i;
                }
            }
            back[t * n + j] = arg;
            next[j] = best + log_emit[t * n + j];
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut state = 0;
    for j in 1..n {
        if delta[j] > delta[state] {
            state = j;
        }
    }
    let score = delta[state];
    let mut path = vec![0; t_len];
    path[t_len - 1] = state;
    for t in (1..t_len).rev() {
        state = back[t * n + state];
        path[t - 1] = state;
    }
    (path, score)
}

/// Most probable state path and its joint log-probability
/// `max_Q log P(O, Q | model)`.
pub fn viterbi<O: AsRef<[f64]>>(hmm: &GestureHmm, sequence: &[O]) -> Result<(Vec<usize>, f64)> {
    check_sequence(sequence, hmm.dim())?;
    let prepared: Vec<PreparedMixture> = hmm.emissions.iter().map(GaussianMixture::prepare).collect();
    let table = emission_table(&prepared, sequence, false);
    let log_a = hmm.log_transitions();
    let log_pi: Vec<f64> = hmm.initial.iter().map(|p| p.ln()).collect();
    let topo = hmm.topology;
    Ok(viterbi_lattice(hmm.states(), &log_pi, &table.log_b, |j| {
        let log_a = &log_a;
        topo.predecessors(j).map(move |i| (i, log_a[i][j]))
    }))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitReport {
    /// States whose temporal slice was empty in every sequence and were
    /// fitted on all windows instead.
    pub fallback_states: Vec<usize>,
    /// `(state, components)` for states with fewer windows than requested
    /// components.
    pub reduced_components: Vec<(usize, usize)>,
}

/// Uniform transitions over the topology; state `j`'s mixture is fitted on
/// the `j`-th of `n_states` equal temporal slices of every sequence.
pub fn init_hmm<S, O>(
    n_states: usize,
    n_mix: usize,
    sequences: &[S],
    seed: u64,
) -> Result<(GestureHmm, InitReport)>
where
    S: AsRef<[O]>,
    O: AsRef<[f64]>,
{
    let topology = Topology::new(n_states)?;
    if n_mix == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    let first = sequences
        .iter()
        .find(|s| !s.as_ref().is_empty())
        .ok_or_else(|| Error::invalid("no training windows"))?;
    let dim = first.as_ref()[0].as_ref().len();
    for s in sequences {
        let s = s.as_ref();
        if !s.is_empty() {
            check_sequence(s, dim)?;
        }
    }
    let mut pools: Vec<Vec<&[f64]>> = vec![Vec::new(); n_states];
    let mut all: Vec<&[f64]> = Vec::new();
    for s in sequences {
        let s = s.as_ref();
        let t_len = s.len();
        for (t, o) in s.iter().enumerate() {
            pools[t * n_states / t_len].push(o.as_ref());
            all.push(o.as_ref());
        }
    }
    let mut report = InitReport::default();
    let mut emissions = Vec::with_capacity(n_states);
    for (j, pool) in pools.iter().enumerate() {
        let pool = if pool.is_empty() {
            report.fallback_states.push(j);
            &all
        } else {
            pool
        };
        let m = n_mix.min(pool.len());
        if m < n_mix {
            report.reduced_components.push((j, m));
        }
        let (g, _) = gmm_fit(pool, &GmmOptions::new(m, derive_seed(seed, &[j as u64])))?;
        emissions.push(g);
    }
    let hmm = GestureHmm::from_parts(topology.uniform_transitions(), emissions)?;
    Ok((hmm, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaumWelchOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BaumWelchOptions {
    fn default() -> Self {
        BaumWelchOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericalFailure {
    pub iteration: usize,
    pub sequence: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchReport {
    /// Re-estimation steps applied.
    pub iterations: usize,
    /// Mean per-window training log-likelihood of the starting model, then
    /// of the model after each re-estimation.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    /// Set when an E-step hit a sequence with zero likelihood; the returned
    /// model is the last one that scored every sequence.
    pub failure: Option<NumericalFailure>,
}

impl BaumWelchReport {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

struct Expectation {
    mean_ll: f64,
    transitions: Vec<Vec<f64>>,
    emissions: Vec<MixtureAccumulator>,
}

fn expectation<S, O>(hmm: &GestureHmm, sequences: &[S]) -> std::result::Result<Expectation, (usize, String)>
where
    S: AsRef<[O]>,
    O: AsRef<[f64]>,
{
    let n = hmm.states();
    let log_a = hmm.log_transitions();
    let prepared: Vec<PreparedMixture> = hmm.emissions.iter().map(GaussianMixture::prepare).collect();
    let mut trans = vec![vec![0.0; n]; n];
    let mut accs: Vec<MixtureAccumulator> = hmm.emissions.iter().map(MixtureAccumulator::new).collect();
    let mut total_ll = 0.0;
    let mut windows = 0usize;
    let mut resp = Vec::new();
    for (s, seq) in sequences.iter().enumerate() {
        let seq = seq.as_ref();
        let t_len = seq.len();
        let table = emission_table(&prepared, seq, true);
        let la = forward_pass(hmm, &log_a, &table.log_b, t_len);
        let lb = backward_pass(hmm, &log_a, &table.log_b, t_len);
        let ll = log_sum_exp(&la[(t_len - 1) * n..]);
        if !ll.is_finite() {
            return Err((s, format!("sequence log-likelihood is {ll}")));
        }
        total_ll += ll;
        windows += t_len;
        for t in 0..t_len {
            for j in 0..n {
                let idx = t * n + j;
                let gamma = (la[idx] + lb[idx] - ll).exp();
                if gamma == 0.0 {
                    continue;
                }
                let m = hmm.emissions[j].len();
                let base = idx * table.max_m;
                resp.clear();
                resp.extend(
                    table.terms[base..base + m]
                        .iter()
                        .map(|term| gamma * (term - table.log_b[idx]).exp()),
                );
                accs[j].add(seq[t].as_ref(), &resp);
            }
            if t + 1 < t_len {
                for i in 0..n {
                    let a = la[t * n + i];
                    if a == f64::NEG_INFINITY {
                        continue;
                    }
                    for j in hmm.topology.successors(i) {
                        let nxt = (t + 1) * n + j;
                        trans[i][j] += (a + log_a[i][j] + table.log_b[nxt] + lb[nxt] - ll).exp();
                    }
                }
            }
        }
    }
    Ok(Expectation {
        mean_ll: total_ll / windows as f64,
        transitions: trans,
        emissions: accs,
    })
}

fn maximization(hmm: &GestureHmm, e: &Expectation) -> GestureHmm {
    let transitions = e
        .transitions
        .iter()
        .zip(&hmm.transitions)
        .map(|(counts, prev)| {
            let total: f64 = counts.iter().sum();
            if total > 0.0 {
                counts.iter().map(|c| c / total).collect()
            } else {
                prev.clone()
            }
        })
        .collect();
    let emissions = e
        .emissions
        .iter()
        .zip(&hmm.emissions)
        .map(|(acc, prev)| acc.finish(prev))
        .collect();
    GestureHmm {
        topology: hmm.topology,
        initial: hmm.initial.clone(),
        transitions,
        emissions,
    }
}

/// Re-estimates transitions and emission mixtures from every training
/// sequence jointly. The initial distribution stays fixed.
pub fn baum_welch<S, O>(
    hmm: &GestureHmm,
    sequences: &[S],
    opts: &BaumWelchOptions,
) -> Result<(GestureHmm, BaumWelchReport)>
where
    S: AsRef<[O]>,
    O: AsRef<[f64]>,
{
    if sequences.is_empty() {
        return Err(Error::invalid("no training sequences"));
    }
    for s in sequences {
        check_sequence(s.as_ref(), hmm.dim())?;
    }
    let mut model = hmm.clone();
    let mut report = BaumWelchReport {
        iterations: 0,
        log_likelihood_trace: Vec::new(),
        converged: false,
        failure: None,
    };
    let mut e = match expectation(&model, sequences) {
        Ok(e) => e,
        Err((sequence, message)) => {
            return Err(Error::Numerical { sequence, message });
        }
    };
    report.log_likelihood_trace.push(e.mean_ll);
    while report.iterations < opts.max_iter {
        let next = maximization(&model, &e);
        let next_e = match expectation(&next, sequences) {
            Ok(x) => x,
            Err((sequence, message)) => {
                report.failure = Some(NumericalFailure {
                    iteration: report.iterations + 1,
                    sequence,
                    message,
                });
                break;
            }
        };
        report.iterations += 1;
        report.log_likelihood_trace.push(next_e.mean_ll);
        let gain = next_e.mean_ll - e.mean_ll;
        model = next;
        e = next_e;
        if gain < opts.tol {
            report.converged = true;
            break;
        }
    }
    Ok((model, report))
}
