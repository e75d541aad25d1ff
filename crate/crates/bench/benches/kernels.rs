use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gesture_hmm::gmm::{gmm_fit, Gaussian, GaussianMixture, GmmOptions};
use gesture_hmm::hmm::{forward_log_likelihood, viterbi, GestureHmm};
use gesture_hmm::seqmodel::{decode_session, fit_sequence_model};
use gesture_hmm::signal::{GestureLabel, FEATURE_DIM};
use gesture_hmm::ScoreVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn mixture(rng: &mut ChaCha8Rng, m: usize, d: usize) -> GaussianMixture {
    let components = (0..m)
        .map(|_| Gaussian {
            mean: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
            variance: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
        })
        .collect();
    GaussianMixture::new(vec![1.0 / m as f64; m], components).unwrap()
}

fn bakis(rng: &mut ChaCha8Rng, n: usize, m: usize) -> GestureHmm {
    let transitions = (0..n)
        .map(|i| {
            let mut row = vec![0.0; n];
            for p in row.iter_mut().take((i + 3).min(n)).skip(i) {
                *p = rng.random_range(0.1..1.0);
            }
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect();
    let emissions = (0..n).map(|_| mixture(rng, m, FEATURE_DIM)).collect();
    GestureHmm::from_parts(transitions, emissions).unwrap()
}

fn windows(rng: &mut ChaCha8Rng, t: usize) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| (0..FEATURE_DIM).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

fn hmm_kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hmm = bakis(&mut rng, 13, 5);
    let mut group = c.benchmark_group("gesture_hmm");
    for t in [10, 40] {
        let obs = windows(&mut rng, t);
        group.bench_with_input(BenchmarkId::new("forward", t), &obs, |b, obs| {
            b.iter(|| forward_log_likelihood(black_box(&hmm), black_box(obs)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("viterbi", t), &obs, |b, obs| {
            b.iter(|| viterbi(black_box(&hmm), black_box(obs)).unwrap())
        });
    }
    group.finish();
}

fn gmm_kernel(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = windows(&mut rng, 1000);
    let mut group = c.benchmark_group("gmm_fit");
    group.sample_size(10);
    for m in [1, 5] {
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            b.iter(|| gmm_fit(black_box(&data), &GmmOptions::new(m, 0)).unwrap())
        });
    }
    group.finish();
}

fn decode_kernel(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sessions = Vec::new();
    let mut scored = Vec::new();
    for _ in 0..20 {
        let labels: Vec<GestureLabel> = (0..60).map(|_| GestureLabel::ALL[rng.random_range(0..5)]).collect();
        for l in &labels {
            let mut s: [f64; 5] = std::array::from_fn(|_| rng.random_range(-120.0..-80.0));
            s[l.index()] += 15.0;
            scored.push((ScoreVector(s), *l));
        }
        sessions.push(labels);
    }
    let session: Vec<ScoreVector> = scored[..60].iter().map(|p| p.0).collect();
    let mut group = c.benchmark_group("decode_session");
    for order in [1, 2, 4] {
        let (model, _) = fit_sequence_model(&sessions, &scored, order, 0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(order), &model, |b, model| {
            b.iter(|| decode_session(black_box(model), black_box(&session)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, hmm_kernels, gmm_kernel, decode_kernel);
criterion_main!(benches);
