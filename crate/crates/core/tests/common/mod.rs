#![allow(dead_code)]

use ndarray::{Array1, Array2};
use ptd::classifier::{risk, Architecture, Batch, ClassifierParams, RiskKind, RiskOptions};
use ptd::rng::{self, streams, Rng};
use ptd::transition::SlackVariable;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn fixture_rng(seed: u64) -> Rng {
    rng::stream(seed, streams::FIXTURE)
}

pub fn normal(r: &mut Rng) -> f64 {
    StandardNormal.sample(r)
}

pub fn random_simplex(r: &mut Rng, m: usize) -> Array1<f64> {
    // uniform on the simplex via normalised exponentials
    let e: Array1<f64> = (0..m).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
    let s = e.sum();
    e / s
}

pub fn random_stochastic(r: &mut Rng, c: usize) -> Array2<f64> {
    let mut t = Array2::zeros((c, c));
    for i in 0..c {
        t.row_mut(i).assign(&random_simplex(r, c));
    }
    t
}

/// Largest relative gap between analytic and central-difference gradients,
/// over all classifier parameters and (for revision kinds) the slack.
pub fn gradient_check(kind: RiskKind, seed: u64, detach_weight: bool) -> f64 {
    const STEP: f64 = 1e-5;
    let (c, d, b) = (3, 5, 6);
    let mut r = fixture_rng(seed);
    let arch = Architecture {
        hidden: vec![4],
        ..Default::default()
    };
    let mut params = ClassifierParams::init(d, c, &arch, seed).unwrap();
    // nonzero biases so every path is exercised
    let mut flat = params.flatten();
    for v in flat.iter_mut() {
        *v += 0.1 * normal(&mut r);
    }
    params.assign_flat(&flat).unwrap();
    let x = Array2::from_shape_fn((b, d), |_| normal(&mut r));
    let labels: Vec<usize> = (0..b).map(|i| i % c).collect();
    let ts: Vec<Array2<f64>> = (0..b)
        .map(|_| {
            let mut t = random_stochastic(&mut r, c);
            for i in 0..c {
                t[[i, i]] += 1.0;
            }
            t.mapv(|v| v / 2.0)
        })
        .collect();
    let slack = kind.is_revision().then(|| SlackVariable {
        delta: Array2::from_shape_fn((c, c), |_| 0.05 * normal(&mut r)),
    });
    let loss = |p: &ClassifierParams, s: Option<&SlackVariable>| {
        let batch = Batch {
            features: x.view(),
            labels: &labels,
            transitions: &ts,
        };
        risk(
            p,
            batch,
            kind,
            s,
            RiskOptions {
                detach_weight,
                ..Default::default()
            },
        )
        .unwrap()
    };

    let out = loss(&params, slack.as_ref());
    assert_eq!(out.clamp_count, 0);
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    let analytic = out.grads.flatten();
    for k in 0..flat.len() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        let mut fp = flat.clone();
        fp[k] += STEP;
        plus.assign_flat(&fp).unwrap();
        fp[k] -= 2.0 * STEP;
        minus.assign_flat(&fp).unwrap();
        let numeric = (loss(&plus, slack.as_ref()).loss - loss(&minus, slack.as_ref()).loss) / (2.0 * STEP);
        worst = worst.max(rel(analytic[k], numeric));
    }
    if let Some(s) = slack.as_ref() {
        let sg = out.slack_grad.as_ref().expect("slack gradient");
        for i in 0..c {
            for j in 0..c {
                let mut sp = s.clone();
                sp.delta[[i, j]] += STEP;
                let mut sm = s.clone();
                sm.delta[[i, j]] -= STEP;
                let numeric = (loss(&params, Some(&sp)).loss - loss(&params, Some(&sm)).loss) / (2.0 * STEP);
                worst = worst.max(rel(sg[[i, j]], numeric));
            }
        }
    }
    worst
}

/// Three Gaussian classes with means on a circle of `radius` around
/// `(offset, offset)`, isotropic `spread`; instance `i` has class `i mod 3`.
pub fn mixture(n: usize, radius: f64, spread: f64, offset: f64, seed: u64) -> ptd::dataio::Dataset {
    let mut r = fixture_rng(seed);
    let mut x = Array2::zeros((n, 2));
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    for (i, &k) in labels.iter().enumerate() {
        let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
        x[[i, 0]] = offset + radius * a.cos() + spread * normal(&mut r);
        x[[i, 1]] = offset + radius * a.sin() + spread * normal(&mut r);
    }
    ptd::dataio::Dataset::new(x, 3)
        .unwrap()
        .with_clean_labels(labels)
        .unwrap()
}

/// Simplex projection by bisection on the threshold, independent of the
/// sort-based kernel under test.
pub fn bisection_projection(v: &[f64]) -> Vec<f64> {
    let excess = |t: f64| v.iter().map(|x| (x - t).max(0.0)).sum::<f64>() - 1.0;
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| (x - t).max(0.0)).collect()
}
