//! Diagonal-covariance Gaussian mixtures: log-density evaluation and
//! expectation-maximization fitting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, LN_2PI};

/// Lower bound on every stored variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Lower bound on mixture weights, keeps starved components strictly positive.
pub(crate) const WEIGHT_FLOOR: f64 = 1e-12;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Axis-aligned Gaussian: `variance` holds the diagonal of the covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Gaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, m), v) in x.iter().zip(&self.mean).zip(&self.variance) {
            let d = xi - m;
            acc += LN_2PI + v.ln() + d * d / v;
        }
        -0.5 * acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub components: Vec<Gaussian>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        let g = GaussianMixture { weights, components };
        g.validate()?;
        Ok(g)
    }

    pub fn single(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![Gaussian { mean, variance }])
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, Gaussian::dim)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() || self.weights.len() != self.components.len() {
            return Err(Error::invalid(format!(
                "mixture has {} weights for {} components",
                self.weights.len(),
                self.components.len()
            )));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::invalid("mixture dimension must be positive"));
        }
        for (k, c) in self.components.iter().enumerate() {
            if c.mean.len() != d || c.variance.len() != d {
                return Err(Error::invalid(format!("component {k} dimension mismatch")));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::invalid(format!("component {k} mean not finite")));
            }
            if c.variance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid(format!(
                    "component {k} variance must be positive"
                )));
            }
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("mixture weights must be positive"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}")));
        }
        Ok(())
    }

    /// Log-density of `x` under the mixture.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "observation has dimension {}, mixture expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.prepare().log_pdf(x, &mut vec![0.0; self.len()]))
    }

    pub(crate) fn prepare(&self) -> PreparedMixture {
        let dim = self.dim();
        let mut means = Vec::with_capacity(self.len() * dim);
        let mut inv_var = Vec::with_capacity(self.len() * dim);
        let mut log_const = Vec::with_capacity(self.len());
        for (w, c) in self.weights.iter().zip(&self.components) {
            means.extend_from_slice(&c.mean);
            inv_var.extend(c.variance.iter().map(|v| 1.0 / v));
            let log_det: f64 = c.variance.iter().map(|v| v.ln()).sum();
            log_const.push(w.ln() - 0.5 * (dim as f64 * LN_2PI + log_det));
        }
        PreparedMixture {
            dim,
            means,
            inv_var,
            log_const,
        }
    }
}

/// Mixture with per-component constants precomputed for repeated
/// evaluation.
pub(crate) struct PreparedMixture {
    dim: usize,
    means: Vec<f64>,
    inv_var: Vec<f64>,
    /// `log c_k - (D log 2pi + log |Sigma_k|) / 2`
    log_const: Vec<f64>,
}

impl PreparedMixture {
    pub(crate) fn components(&self) -> usize {
        self.log_const.len()
    }

    /// Fills `terms[k] = log c_k + log N_k(x)` and returns their
    /// log-sum-exp.
    pub(crate) fn log_pdf(&self, x: &[f64], terms: &mut [f64]) -> f64 {
        for (k, term) in terms.iter_mut().enumerate() {
            let mu = &self.means[k * self.dim..(k + 1) * self.dim];
            let iv = &self.inv_var[k * self.dim..(k + 1) * self.dim];
            let mut q = 0.0;
            for i in 0..self.dim {
                let d = x[i] - mu[i];
                q += d * d * iv[i];
            }
            *term = self.log_const[k] - 0.5 * q;
        }
        log_sum_exp(terms)
    }
}

/// Weighted sufficient statistics for one mixture's M-step. Moments are
/// accumulated around the previous means to keep the variance update
/// well conditioned.
pub(crate) struct MixtureAccumulator {
    dim: usize,
    shift: Vec<f64>,
    occupancy: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl MixtureAccumulator {
    pub(crate) fn new(prev: &GaussianMixture) -> Self {
        let dim = prev.dim();
        let m = prev.len();
        MixtureAccumulator {
            dim,
            shift: prev.components.iter().flat_map(|c| c.mean.iter().copied()).collect(),
            occupancy: vec![0.0; m],
            first: vec![0.0; m * dim],
            second: vec![0.0; m * dim],
        }
    }

    /// Adds `x` with per-component posterior mass `resp`.
    pub(crate) fn add(&mut self, x: &[f64], resp: &[f64]) {
        for (k, &r) in resp.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            self.occupancy[k] += r;
            let base = k * self.dim;
            for i in 0..self.dim {
                let d = x[i] - self.shift[base + i];
                self.first[base + i] += r * d;
                self.second[base + i] += r * d * d;
            }
        }
    }

    pub(crate) fn total(&self) -> f64 {
        self.occupancy.iter().sum()
    }

    /// Re-estimated mixture. Components that received no mass keep their
    /// previous parameters with a floored weight; a mixture that received
    /// no mass at all is returned unchanged.
    pub(crate) fn finish(&self, prev: &GaussianMixture) -> GaussianMixture {
        let total = self.total();
        if !(total > 0.0) {
            return prev.clone();
        }
        let mut weights = Vec::with_capacity(prev.len());
        let mut components = Vec::with_capacity(prev.len());
        for (k, prev_c) in prev.components.iter().enumerate() {
            let occ = self.occupancy[k];
            weights.push((occ / total).max(WEIGHT_FLOOR));
            if occ <= f64::MIN_POSITIVE * 1e10 {
                components.push(prev_c.clone());
                continue;
            }
            let base = k * self.dim;
            let mut mean = Vec::with_capacity(self.dim);
            let mut variance = Vec::with_capacity(self.dim);
            for i in 0..self.dim {
                let m1 = self.first[base + i] / occ;
                let m2 = self.second[base + i] / occ;
                mean.push(self.shift[base + i] + m1);
                variance.push((m2 - m1 * m1).max(VARIANCE_FLOOR));
            }
            components.push(Gaussian { mean, variance });
        }
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
        GaussianMixture { weights, components }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub components: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl GmmOptions {
    pub fn new(components: usize, seed: u64) -> Self {
        GmmOptions {
            components,
            seed,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFitReport {
    /// Number of M-steps performed.
    pub iterations: usize,
    /// Mean per-point log-likelihood of the initial model followed by the
    /// model after each M-step.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    /// Two or more components ended up with identical parameters, e.g.
    /// because every data point was the same.
    pub duplicate_components: bool,
}

impl GmmFitReport {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

fn check_data<X: AsRef<[f64]>>(data: &[X]) -> Result<usize> {
    let Some(first) = data.first() else {
        return Err(Error::invalid("no data to fit"));
    };
    let dim = first.as_ref().len();
    if dim == 0 {
        return Err(Error::invalid("data points have dimension 0"));
    }
    for (i, x) in data.iter().enumerate() {
        let x = x.as_ref();
        if x.len() != dim {
            return Err(Error::invalid(format!(
                "point {i} has dimension {}, expected {dim}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("point {i} is not finite")));
        }
    }
    Ok(dim)
}

/// Population variance per dimension, floored.
pub(crate) fn pooled_variance<X: AsRef<[f64]>>(data: &[X], dim: usize) -> Vec<f64> {
    let n = data.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in data {
        for (m, v) in mean.iter_mut().zip(x.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for x in data {
        for i in 0..dim {
            var[i] += (x.as_ref()[i] - mean[i]).powi(2);
        }
    }
    var.into_iter().map(|v| (v / n).max(VARIANCE_FLOOR)).collect()
}

/// Seeded D²-weighted farthest-point choice of `m` initial centers.
fn seed_centers<X: AsRef<[f64]>>(data: &[X], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let sq_dist = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum() };
    let first = rng.random_range(0..data.len());
    let mut centers = vec![data[first].as_ref().to_vec()];
    let mut nearest: Vec<f64> = data.iter().map(|x| sq_dist(x.as_ref(), &centers[0])).collect();
    while centers.len() < m {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| nearest.iter().rposition(|d| *d > 0.0).unwrap_or(0))
        } else {
            rng.random_range(0..data.len())
        };
        let c = data[pick].as_ref().to_vec();
        for (d, x) in nearest.iter_mut().zip(data) {
            *d = d.min(sq_dist(x.as_ref(), &c));
        }
        centers.push(c);
    }
    centers
}

/// Initial mixture: seeded centers, pooled variance, uniform weights.
pub(crate) fn initial_mixture<X: AsRef<[f64]>>(data: &[X], m: usize, seed: u64) -> GaussianMixture {
    let dim = data[0].as_ref().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variance = pooled_variance(data, dim);
    let components = seed_centers(data, m, &mut rng)
        .into_iter()
        .map(|mean| Gaussian {
            mean,
            variance: variance.clone(),
        })
        .collect();
    GaussianMixture {
        weights: vec![1.0 / m as f64; m],
        components,
    }
}

/// One E-step: mean log-likelihood of `data` under `model` and the
/// accumulated statistics for the next M-step.
fn expectation<X: AsRef<[f64]>>(data: &[X], model: &GaussianMixture) -> (f64, MixtureAccumulator) {
    let prepared = model.prepare();
    let mut acc = MixtureAccumulator::new(model);
    let mut terms = vec![0.0; prepared.components()];
    let mut total = 0.0;
    for x in data {
        let x = x.as_ref();
        let ll = prepared.log_pdf(x, &mut terms);
        total += ll;
        terms.iter_mut().for_each(|t| *t = (*t - ll).exp());
        acc.add(x, &terms);
    }
    (total / data.len() as f64, acc)
}

fn has_duplicates(g: &GaussianMixture) -> bool {
    let c = &g.components;
    (0..c.len()).any(|i| (i + 1..c.len()).any(|j| c[i] == c[j]))
}

/// Fits an `opts.components`-component diagonal mixture by EM. Stops once
/// the mean log-likelihood improves by less than `opts.tol` or after
/// `opts.max_iter` M-steps.
pub fn gmm_fit<X: AsRef<[f64]>>(data: &[X], opts: &GmmOptions) -> Result<(GaussianMixture, GmmFitReport)> {
    if opts.components == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    check_data(data)?;
    if data.len() < opts.components {
        return Err(Error::invalid(format!(
            "{} data points cannot support {} components",
            data.len(),
            opts.components
        )));
    }
    let mut model = initial_mixture(data, opts.components, opts.seed);
    let (mut ll, mut acc) = expectation(data, &model);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let next = acc.finish(&model);
        let (next_ll, next_acc) = expectation(data, &next);
        iterations += 1;
        trace.push(next_ll);
        model = next;
        acc = next_acc;
        let gain = next_ll - ll;
        ll = next_ll;
        if gain < opts.tol {
            converged = true;
            break;
        }
    }
    let duplicate_components = has_duplicates(&model);
    Ok((
        model,
        GmmFitReport {
            iterations,
            log_likelihood_trace: trace,
            converged,
            duplicate_components,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn g1(mean: f64, var: f64) -> Gaussian {
        Gaussian {
            mean: vec![mean],
            variance: vec![var],
        }
    }

    #[test]
    fn standard_normal_peak() {
        let g = GaussianMixture::single(vec![0.0], vec![1.0]).unwrap();
        let v = g.log_pdf(&[0.0]).unwrap();
        assert!((v - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn identical_components_match_single() {
        let single = GaussianMixture::single(vec![0.3, -1.0], vec![2.0, 0.5]).unwrap();
        let c = single.components[0].clone();
        let double = GaussianMixture::new(vec![0.5, 0.5], vec![c.clone(), c]).unwrap();
        for x in [[0.0, 0.0], [1.5, -2.0], [10.0, 3.0]] {
            let a = single.log_pdf(&x).unwrap();
            let b = double.log_pdf(&x).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_component_direct_sum() {
        let g = GaussianMixture::new(vec![0.3, 0.7], vec![g1(-1.0, 1.0), g1(2.0, 4.0)]).unwrap();
        let x: f64 = 0.5;
        let pdf = |m: f64, v: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        let expect = (0.3 * pdf(-1.0, 1.0) + 0.7 * pdf(2.0, 4.0)).ln();
        assert!((g.log_pdf(&[x]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn far_tail_stays_finite() {
        let g = GaussianMixture::new(vec![0.5, 0.5], vec![g1(0.0, 1e-6), g1(1.0, 1e-6)]).unwrap();
        let v = g.log_pdf(&[0.15]).unwrap();
        assert!(v.is_finite() && v < -1e3);
    }

    #[test]
    fn dimension_mismatch() {
        let g = GaussianMixture::single(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(g.log_pdf(&[0.0, 1.0]), Err(Error::Validation(_))));
    }

    #[test]
    fn invalid_mixtures_rejected() {
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![g1(0.0, 1.0), g1(1.0, 1.0)]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![g1(0.0, 0.0)]).is_err());
        assert!(GaussianMixture::new(vec![], vec![]).is_err());
    }

    #[test]
    fn recovers_single_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(3.0, 2.0).unwrap();
        let data: Vec<Vec<f64>> = (0..500).map(|_| vec![normal.sample(&mut rng)]).collect();
        let (g, report) = gmm_fit(&data, &GmmOptions::new(1, 5)).unwrap();
        let c = &g.components[0];
        assert!((c.mean[0] - 3.0).abs() < 3.0 * 2.0 / 500f64.sqrt());
        assert!((c.variance[0] - 4.0).abs() < 0.25 * 4.0);
        assert!(report.converged);
    }

    #[test]
    fn too_few_points() {
        let data = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            gmm_fit(&data, &GmmOptions::new(3, 0)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn identical_points_give_duplicates() {
        let data = vec![vec![2.0, 2.0]; 10];
        let (g, report) = gmm_fit(&data, &GmmOptions::new(3, 1)).unwrap();
        g.validate().unwrap();
        assert!(report.duplicate_components);
        assert!(g.components.iter().all(|c| c.variance == vec![VARIANCE_FLOOR; 2]));
    }

    #[test]
    fn saturated_mixture_collapses_to_points() {
        let points = [0.0, 1.0, 3.0];
        let data: Vec<Vec<f64>> = points.iter().map(|v| vec![*v]).collect();
        for seed in 0..20 {
            let opts = GmmOptions {
                components: points.len(),
                seed,
                tol: 1e-14,
                max_iter: 500,
            };
            let (g, report) = gmm_fit(&data, &opts).unwrap();
            g.validate().unwrap();
            assert!(report.final_log_likelihood().is_finite());
            let mut means: Vec<f64> = g.components.iter().map(|c| c.mean[0]).collect();
            means.sort_by(f64::total_cmp);
            for (m, x) in means.iter().zip(points) {
                assert!((m - x).abs() < 1e-6, "seed {seed}: {g:?}");
            }
            assert!(g.components.iter().all(|c| c.variance[0] == VARIANCE_FLOOR));
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<Vec<f64>> = (0..200)
            .map(|i| vec![rng.random::<f64>() + (i % 3) as f64 * 4.0, rng.random::<f64>()])
            .collect();
        let a = gmm_fit(&data, &GmmOptions::new(3, 9)).unwrap();
        let b = gmm_fit(&data, &GmmOptions::new(3, 9)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn em_never_decreases_and_keeps_invariants(
            seed in any::<u64>(),
            m in 1usize..5,
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 8..60),
        ) {
            let opts = GmmOptions { components: m, seed, tol: 1e-10, max_iter: 60 };
            let (g, report) = gmm_fit(&rows, &opts).unwrap();
            for pair in report.log_likelihood_trace.windows(2) {
                prop_assert!(pair[1] >= pair[0] - 1e-8, "{:?}", report.log_likelihood_trace);
            }
            let total: f64 = g.weights.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(g.weights.iter().all(|w| *w > 0.0));
            prop_assert!(g.components.iter().all(|c| c.variance.iter().all(|v| *v >= VARIANCE_FLOOR)));
        }
    }
}
