//! Exhaustive reference implementations and random instance generators
//! shared by the integration tests.
#![allow(dead_code)]

use gesture_hmm::gmm::{Gaussian, GaussianMixture};
use gesture_hmm::hmm::GestureHmm;
use gesture_hmm::seqmodel::{SequenceModel, StateSpace, Transitions};
use gesture_hmm::signal::GestureLabel;
use gesture_hmm::ScoreVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn gauss_log_pdf(mean: &[f64], var: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(var)
        .zip(x)
        .map(|((m, v), x)| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m) * (x - m) / v))
        .sum()
}

pub fn mixture_log_pdf(g: &GaussianMixture, x: &[f64]) -> f64 {
    let terms: Vec<f64> = g
        .weights
        .iter()
        .zip(&g.components)
        .map(|(w, c)| w.ln() + gauss_log_pdf(&c.mean, &c.variance, x))
        .collect();
    lse(&terms)
}

/// Visits every state path of length `t` over `n` states.
pub fn for_each_path(n: usize, t: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0; t];
    loop {
        f(&path);
        let mut k = t;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            path[k] += 1;
            if path[k] < n {
                break;
            }
            path[k] = 0;
        }
    }
}

fn hmm_path_log_prob(hmm: &GestureHmm, path: &[usize], obs: &[Vec<f64>]) -> f64 {
    let mut lp = hmm.initial[path[0]].ln() + mixture_log_pdf(&hmm.emissions[path[0]], &obs[0]);
    for k in 1..path.len() {
        lp += hmm.transitions[path[k - 1]][path[k]].ln() + mixture_log_pdf(&hmm.emissions[path[k]], &obs[k]);
    }
    lp
}

/// Log of the sum over all N^T state paths.
pub fn brute_forward(hmm: &GestureHmm, obs: &[Vec<f64>]) -> f64 {
    let mut terms = Vec::new();
    for_each_path(hmm.transitions.len(), obs.len(), |p| terms.push(hmm_path_log_prob(hmm, p, obs)));
    lse(&terms)
}

/// Highest-probability path; the first one in lexicographic order wins ties.
pub fn brute_viterbi(hmm: &GestureHmm, obs: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for_each_path(hmm.transitions.len(), obs.len(), |p| {
        let lp = hmm_path_log_prob(hmm, p, obs);
        if lp > best.1 {
            best = (p.to_vec(), lp);
        }
    });
    best
}

fn random_mixture(rng: &mut ChaCha8Rng, m: usize, d: usize, spread: f64) -> GaussianMixture {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let components = (0..m)
        .map(|_| Gaussian {
            mean: (0..d).map(|_| rng.random_range(-spread..spread)).collect(),
            variance: (0..d).map(|_| rng.random_range(0.3..2.0)).collect(),
        })
        .collect();
    GaussianMixture::new(raw.iter().map(|w| w / s).collect(), components).unwrap()
}

/// Left-to-right-with-skip model with random rows and mixtures.
pub fn random_hmm(rng: &mut ChaCha8Rng, n: usize, m: usize, d: usize) -> GestureHmm {
    let transitions = (0..n)
        .map(|i| {
            let mut row = vec![0.0; n];
            for j in i..=(i + 2).min(n - 1) {
                row[j] = rng.random_range(0.1..1.0);
            }
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect();
    let emissions = (0..n).map(|_| random_mixture(rng, m, d, 2.0)).collect();
    GestureHmm::from_parts(transitions, emissions).unwrap()
}

pub fn random_observations(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<Vec<f64>> {
    (0..t).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
}

fn random_simplex<const K: usize>(rng: &mut ChaCha8Rng) -> [f64; K] {
    let raw: [f64; K] = std::array::from_fn(|_| rng.random_range(0.05..1.0));
    let s: f64 = raw.iter().sum();
    raw.map(|v| v / s)
}

pub fn random_sequence_model(rng: &mut ChaCha8Rng, order: usize) -> SequenceModel {
    let space = StateSpace::new(order).unwrap();
    let n = space.len();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let model = SequenceModel {
        order,
        priors: raw.iter().map(|v| v / s).collect(),
        transitions: Transitions {
            space,
            rows: (0..n).map(|_| random_simplex::<5>(rng)).collect(),
        },
        emissions: (0..5)
            .map(|_| {
                let m = rng.random_range(1..=3);
                random_mixture(rng, m, 5, 4.0)
            })
            .collect(),
    };
    model.validate().unwrap();
    model
}

pub fn random_scores(rng: &mut ChaCha8Rng, t: usize) -> Vec<ScoreVector> {
    (0..t)
        .map(|_| ScoreVector(std::array::from_fn(|_| rng.random_range(-5.0..5.0))))
        .collect()
}

/// Exhaustive search over label tuples of length `order` chained by the
/// shift rule. Returns the most recent label of each state on the best path.
pub fn brute_decode(model: &SequenceModel, scores: &[ScoreVector]) -> Vec<GestureLabel> {
    let order = model.order;
    let states: Vec<Vec<usize>> = {
        let mut all = Vec::new();
        for_each_path(5, order, |p| all.push(p.to_vec()));
        all
    };
    // most significant digit first
    let index = |s: &[usize]| s.iter().fold(0, |acc, g| acc * 5 + g);
    let emit: Vec<Vec<f64>> = scores
        .iter()
        .map(|sv| model.emissions.iter().map(|e| mixture_log_pdf(e, &sv.0)).collect())
        .collect();
    let mut best: (Vec<usize>, f64) = (Vec::new(), f64::NEG_INFINITY);
    let mut path: Vec<usize> = Vec::new();
    fn dfs(
        model: &SequenceModel,
        states: &[Vec<usize>],
        index: &dyn Fn(&[usize]) -> usize,
        emit: &[Vec<f64>],
        path: &mut Vec<usize>,
        lp: f64,
        best: &mut (Vec<usize>, f64),
    ) {
        let t = path.len();
        if t == emit.len() {
            if lp > best.1 {
                *best = (path.clone(), lp);
            }
            return;
        }
        for (k, s) in states.iter().enumerate() {
            let step = if t == 0 {
                model.priors[index(s)].ln()
            } else {
                let prev = &states[path[t - 1]];
                if prev[1..] != s[..s.len() - 1] {
                    continue;
                }
                model.transitions.rows[index(prev)][*s.last().unwrap()].ln()
            };
            path.push(k);
            dfs(model, states, index, emit, path, lp + step + emit[t][*s.last().unwrap()], best);
            path.pop();
        }
    }
    dfs(model, &states, &index, &emit, &mut path, 0.0, &mut best);
    best.0
        .iter()
        .map(|&k| GestureLabel::from_index(*states[k].last().unwrap()).unwrap())
        .collect()
}
