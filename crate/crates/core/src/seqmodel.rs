//! Gesture-context model: an order-`n` chain over gesture labels rewritten
//! as a first-order HMM whose states are `n`-tuples of labels. Observables
//! are the per-gesture score vectors produced by an [`HmmBank`].
//!
//! State index `i` encodes the tuple `(g_1, …, g_n)` in base 5 with `g_1`
//! most significant, so `i % 5` is the most recent label and states are
//! enumerated in lexicographic canonical-label order.
//!
//! [`HmmBank`]: crate::classifier::HmmBank

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classifier::ScoreVector;
use crate::error::{Error, Result};
use crate::gmm::{gmm_fit, GaussianMixture, GmmOptions, PreparedMixture};
use crate::hmm::viterbi_lattice;
use crate::math::derive_seed;
use crate::signal::GestureLabel;

pub const MAX_ORDER: usize = 6;
/// Mixture components per tied emission density.
pub const EMISSION_COMPONENTS: usize = 7;

const LABELS: usize = GestureLabel::COUNT;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContextState(pub Vec<GestureLabel>);

impl ContextState {
    pub fn most_recent(&self) -> GestureLabel {
        *self.0.last().expect("context states are never empty")
    }
}

impl fmt::Display for ContextState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|l| write!(f, "{}", l.code()))
    }
}

/// Index arithmetic for the `5^n` context states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    pub order: usize,
}

impl StateSpace {
    pub fn new(order: usize) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::invalid(format!(
                "context order must be in 1..={MAX_ORDER}, got {order}"
            )));
        }
        Ok(StateSpace { order })
    }

    pub fn len(&self) -> usize {
        LABELS.pow(self.order as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, labels: &[GestureLabel]) -> usize {
        debug_assert_eq!(labels.len(), self.order);
        labels.iter().fold(0, |acc, l| acc * LABELS + l.index())
    }

    pub fn state(&self, index: usize) -> ContextState {
        let mut labels = vec![GestureLabel::Rest; self.order];
        let mut rest = index;
        for slot in labels.iter_mut().rev() {
            *slot = GestureLabel::ALL[rest % LABELS];
            rest /= LABELS;
        }
        ContextState(labels)
    }

    pub fn most_recent(&self, index: usize) -> GestureLabel {
        GestureLabel::ALL[index % LABELS]
    }

    /// Successor of `index` after observing `next`.
    pub fn successor(&self, index: usize, next: GestureLabel) -> usize {
        (index % (self.len() / LABELS)) * LABELS + next.index()
    }

    /// The five compatible successors, in canonical order of the appended
    /// label.
    pub fn successors(&self, index: usize) -> [usize; LABELS] {
        GestureLabel::ALL.map(|g| self.successor(index, g))
    }

    /// The five compatible predecessors, ascending.
    pub fn predecessors(&self, index: usize) -> [usize; LABELS] {
        let stride = self.len() / LABELS;
        std::array::from_fn(|g| g * stride + index / LABELS)
    }

    /// `from -> to` is possible iff the last `n - 1` labels of `from` are the
    /// first `n - 1` labels of `to`.
    pub fn compatible(&self, from: usize, to: usize) -> bool {
        from % (self.len() / LABELS) == to / LABELS
    }
}

/// All `5^n` context states in index order, plus the index arithmetic that
/// serves as the compatibility mask.
pub fn enumerate_states(order: usize) -> Result<(Vec<ContextState>, StateSpace)> {
    let space = StateSpace::new(order)?;
    Ok(((0..space.len()).map(|i| space.state(i)).collect(), space))
}

/// Transition probabilities stored per row over the five compatible
/// successors; `rows[i][g]` is the probability of moving from state `i` to
/// `space.successor(i, g)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transitions {
    pub space: StateSpace,
    pub rows: Vec<[f64; LABELS]>,
}

impl Transitions {
    /// Dense lookup `P(to | from)`; zero for incompatible pairs.
    pub fn get(&self, from: usize, to: usize) -> f64 {
        if self.space.compatible(from, to) {
            self.rows[from][to % LABELS]
        } else {
            0.0
        }
    }
}

/// Add-one smoothed transition estimates. Each row's denominator is the
/// row's outgoing count plus its 5 compatible successors, so unseen
/// contexts become uniform. Counting never crosses a session boundary.
pub fn estimate_transitions(sessions: &[Vec<GestureLabel>], order: usize) -> Result<Transitions> {
    let space = StateSpace::new(order)?;
    let mut counts = vec![[0u64; LABELS]; space.len()];
    for labels in sessions {
        for w in labels.windows(order + 1) {
            counts[space.index(&w[..order])][w[order].index()] += 1;
        }
    }
    let rows = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            let denom = (total + LABELS as u64) as f64;
            let mut p = row.map(|c| (c + 1) as f64 / denom);
            guard_rounding(&mut p);
            p
        })
        .collect();
    Ok(Transitions { space, rows })
}

/// Add-one smoothed frequencies of every `n`-gram across sessions.
pub fn estimate_priors(sessions: &[Vec<GestureLabel>], order: usize) -> Result<Vec<f64>> {
    let space = StateSpace::new(order)?;
    let mut counts = vec![0u64; space.len()];
    for labels in sessions {
        for w in labels.windows(order) {
            counts[space.index(w)] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let denom = (total + space.len() as u64) as f64;
    let mut p: Vec<f64> = counts.iter().map(|c| (c + 1) as f64 / denom).collect();
    guard_rounding(&mut p);
    Ok(p)
}

/// Rescales only when accumulated rounding pushes the sum measurably off 1,
/// so small tables keep their correctly rounded quotients.
fn guard_rounding(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-13 {
        p.iter_mut().for_each(|v| *v /= s);
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmissionReport {
    /// Labels with fewer than the requested number of score vectors and the
    /// component count actually used.
    pub reduced: Vec<(GestureLabel, usize)>,
}

/// One mixture per label, fitted on the score vectors of gestures truly
/// carrying that label.
pub fn fit_emissions(
    scored: &[(ScoreVector, GestureLabel)],
    components: usize,
    seed: u64,
) -> Result<(Vec<GaussianMixture>, EmissionReport)> {
    let mut report = EmissionReport::default();
    let mut out = Vec::with_capacity(LABELS);
    for label in GestureLabel::ALL {
        let data: Vec<&ScoreVector> = scored
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(s, _)| s)
            .collect();
        if data.is_empty() {
            return Err(Error::invalid(format!("no score vectors for label {label}")));
        }
        let m = components.min(data.len());
        if m < components {
            report.reduced.push((label, m));
        }
        let opts = GmmOptions::new(m, derive_seed(seed, &[label.index() as u64]));
        out.push(gmm_fit(&data, &opts)?.0);
    }
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceModel {
    pub order: usize,
    pub priors: Vec<f64>,
    pub transitions: Transitions,
    /// Tied emissions in canonical label order; every state ending in label
    /// `g` uses `emissions[g]`.
    pub emissions: Vec<GaussianMixture>,
}

impl SequenceModel {
    pub fn space(&self) -> StateSpace {
        self.transitions.space
    }

    pub fn emission_for_state(&self, state: usize) -> &GaussianMixture {
        &self.emissions[self.space().most_recent(state).index()]
    }

    pub fn validate(&self) -> Result<()> {
        let space = StateSpace::new(self.order)?;
        if self.transitions.space != space
            || self.priors.len() != space.len()
            || self.transitions.rows.len() != space.len()
        {
            return Err(Error::invalid("sequence model tables do not match its order"));
        }
        if self.emissions.len() != LABELS {
            return Err(Error::invalid("sequence model needs one emission per label"));
        }
        for e in &self.emissions {
            e.validate()?;
            if e.dim() != LABELS {
                return Err(Error::invalid("emission mixtures must be 5-dimensional"));
            }
        }
        let stochastic = |v: &[f64]| {
            v.iter().all(|p| p.is_finite() && *p > 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-12
        };
        if !stochastic(&self.priors) || !self.transitions.rows.iter().all(|r| stochastic(r)) {
            return Err(Error::invalid("sequence model probabilities are not stochastic"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceFitReport {
    pub emissions: EmissionReport,
}

/// Fits priors and transitions from per-session label sequences and the
/// tied emissions from labeled score vectors.
pub fn fit_sequence_model(
    sessions: &[Vec<GestureLabel>],
    scored: &[(ScoreVector, GestureLabel)],
    order: usize,
    seed: u64,
) -> Result<(SequenceModel, SequenceFitReport)> {
    let transitions = estimate_transitions(sessions, order)?;
    let priors = estimate_priors(sessions, order)?;
    let (emissions, report) = fit_emissions(scored, EMISSION_COMPONENTS, seed)?;
    Ok((
        SequenceModel {
            order,
            priors,
            transitions,
            emissions,
        },
        SequenceFitReport { emissions: report },
    ))
}

/// Viterbi over the context states of one session; the label at each step is
/// the most recent label of the decoded state.
pub fn decode_session(model: &SequenceModel, scores: &[ScoreVector]) -> Result<Vec<GestureLabel>> {
    if scores.is_empty() {
        return Err(Error::invalid("session has no gestures to decode"));
    }
    if let Some(t) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("score vector {t} is not finite")));
    }
    let space = model.space();
    let n = space.len();
    let prepared: Vec<PreparedMixture> = model.emissions.iter().map(GaussianMixture::prepare).collect();
    let mut scratch = vec![0.0; prepared.iter().map(PreparedMixture::components).max().unwrap_or(1)];
    let mut log_emit = Vec::with_capacity(scores.len() * n);
    for s in scores {
        let per_label: Vec<f64> = prepared
            .iter()
            .map(|p| p.log_pdf(&s.0, &mut scratch[..p.components()]))
            .collect();
        log_emit.extend((0..n).map(|state| per_label[state % LABELS]));
    }
    let log_prior: Vec<f64> = model.priors.iter().map(|p| p.ln()).collect();
    let log_rows: Vec<[f64; LABELS]> = model.transitions.rows.iter().map(|r| r.map(f64::ln)).collect();
    let (path, _) = viterbi_lattice(n, &log_prior, &log_emit, |j| {
        let log_rows = &log_rows;
        space
            .predecessors(j)
            .into_iter()
            .map(move |i| (i, log_rows[i][j % LABELS]))
    });
    Ok(path.into_iter().map(|s| space.most_recent(s)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub prior: u64,
    pub transition: u64,
    pub emission: u64,
    pub total: u64,
}

/// Free-parameter tally for an order-`n` model with `dim`-dimensional
/// observables and `components` Gaussians per label (means and variances).
pub fn param_count(order: usize, dim: usize, components: usize) -> Result<ParamCount> {
    if order == 0 {
        return Err(Error::invalid("context order must be at least 1"));
    }
    let prior = (LABELS as u64).pow(order as u32);
    let transition = LABELS as u64 * prior;
    let emission = 2 * (LABELS * dim * components) as u64;
    Ok(ParamCount {
        prior,
        transition,
        emission,
        total: prior + transition + emission,
    })
}
