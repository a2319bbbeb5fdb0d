#![allow(dead_code)]

use std::sync::Arc;

use preclin_core::animal_prior::{AnimalStudy, DOG_REFERENCE_PRIOR};
use preclin_core::config::{PriorConfig, PriorSource, StudyFile};
use preclin_core::dose_model::{dlt_risk, DoseGrid, ThetaPoint};
use preclin_core::engine::{Trial, TrialConfig};
use preclin_core::inference::MixtureModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn dog_study(trial: TrialConfig) -> StudyFile {
    StudyFile {
        grid: DoseGrid::auy922(),
        animal: Some(AnimalStudy::dog_example()),
        prior: PriorConfig { source: PriorSource::Reference, ..PriorConfig::default() },
        trial,
        scenarios: Vec::new(),
    }
}

/// Reference dog prior on the AUY922 grid with the default component setup.
pub fn dog_model() -> Arc<MixtureModel> {
    dog_study(TrialConfig::default()).build_model(&DOG_REFERENCE_PRIOR).unwrap()
}

pub fn grid_index(dose: f64) -> usize {
    DoseGrid::auy922().index_of(dose).unwrap()
}

/// Replays `(dose, n_dlt)` cohorts of three under the dynamic weight with
/// `max_cohorts` cohorts planned; returns the weight after each cohort.
pub fn replay_weights(model: &Arc<MixtureModel>, path: &[(f64, usize)], max_cohorts: usize) -> Vec<f64> {
    let cfg = TrialConfig { max_cohorts, start_dose: Some(path[0].0), ..TrialConfig::default() };
    let mut trial = Trial::new(model.clone(), cfg).unwrap();
    path.iter()
        .map(|&(d, r)| {
            let outcomes = (0..3).map(|k| k < r).collect();
            trial.replay_cohort(grid_index(d), outcomes).unwrap().weight
        })
        .collect()
}

/// Data example 2: an early toxicity at 4 mg/m², two clean cohorts at the
/// lowest doses, then three toxicities at 8 mg/m².
pub const EXAMPLE_2: [(f64, usize); 4] = [(4.0, 1), (4.0, 0), (2.0, 0), (8.0, 3)];
/// Data example 3: clean escalation 4 → 28 mg/m².
pub const EXAMPLE_3: [(f64, usize); 5] = [(4.0, 0), (8.0, 0), (16.0, 0), (22.0, 0), (28.0, 0)];

/// Importance-sampling estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

/// Posterior means of `(theta1, theta2, p_1..p_n)` under the mixture prior
/// with weight `w`, by sampling the prior and weighting by the likelihood.
/// `theta1` is reported at the informative component's reference dose.
pub fn is_oracle(model: &MixtureModel, w: f64, counts: &[(u32, u32)], draws: usize, seed: u64) -> Vec<Estimate> {
    let grid = &model.dose_grid;
    let comps = [&model.informative, &model.weak];
    let chol: Vec<(f64, f64, f64)> = comps
        .iter()
        .map(|c| {
            let p = c.prior;
            let l11 = p.s11.sqrt();
            let l21 = p.s12 / l11;
            (l11, l21, (p.s22 - l21 * l21).sqrt())
        })
        .collect();
    let d_ref = model.informative.d_ref;
    let nq = 2 + grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(draws);
    let mut logw = Vec::with_capacity(draws);
    for _ in 0..draws {
        let c = if rng.random::<f64>() < w { 0 } else { 1 };
        let (l11, l21, l22) = chol[c];
        let (z1, z2): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        let prior = comps[c].prior;
        let t = ThetaPoint { theta1: prior.mu1 + l11 * z1, theta2: prior.mu2 + l21 * z1 + l22 * z2 };
        let mut x = Vec::with_capacity(nq);
        x.push(t.theta1 + t.theta2.exp() * (d_ref / comps[c].d_ref).ln());
        x.push(t.theta2);
        let mut ll = 0.0;
        for (d, &(n, r)) in grid.doses.iter().zip(counts) {
            let p = dlt_risk(t, *d, comps[c].d_ref).unwrap();
            if n > 0 {
                ll += r as f64 * p.ln() + (n - r) as f64 * (1.0 - p).ln();
            }
            x.push(p);
        }
        xs.push(x);
        logw.push(ll);
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let wts: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = wts.iter().sum();
    (0..nq)
        .map(|q| {
            let mean = wts.iter().zip(&xs).map(|(w, x)| w * x[q]).sum::<f64>() / total;
            let var = wts.iter().zip(&xs).map(|(w, x)| (w * (x[q] - mean)).powi(2)).sum::<f64>();
            Estimate { mean, se: var.sqrt() / total }
        })
        .collect()
}

/// Quadrature counterparts of [`is_oracle`].
pub fn quadrature_means(model: &MixtureModel, w: f64, counts: &[(u32, u32)]) -> Vec<f64> {
    let post = model.posterior(w, counts).unwrap();
    let (t1, t2) = post.mean_theta();
    let mut out = vec![t1, t2];
    out.extend(post.summarize(&model.dose_grid).pr_dlt);
    out
}

/// A random trial-like dataset of at most four cohorts of three.
pub fn random_dataset(rng: &mut ChaCha8Rng, n_doses: usize) -> Vec<(u32, u32)> {
    let risks = [0.03, 0.07, 0.12, 0.2, 0.3, 0.38, 0.48, 0.56, 0.63];
    let mut counts = vec![(0u32, 0u32); n_doses];
    let mut i = rng.random_range(0..4usize);
    for _ in 0..rng.random_range(1..=4usize) {
        let r = (0..3).filter(|_| rng.random::<f64>() < risks[i.min(8)]).count() as u32;
        counts[i].0 += 3;
        counts[i].1 += r;
        i = if r >= 2 { i.saturating_sub(1) } else { (i + rng.random_range(0..=2usize)).min(n_doses - 1) };
    }
    counts
}

/// Runs the oracle comparison on `n` datasets; returns how many agree on
/// every quantity within three standard errors.
pub fn oracle_agreement(n: usize, draws: usize, seed: u64) -> usize {
    use rayon::prelude::*;
    let model = dog_model();
    (0..n)
        .into_par_iter()
        .filter(|&k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let counts = random_dataset(&mut rng, model.dose_grid.len());
            let w = rng.random_range(0.1..0.9);
            let oracle = is_oracle(&model, w, &counts, draws, rng.random());
            let quad = quadrature_means(&model, w, &counts);
            quad.iter().zip(&oracle).all(|(q, o)| (q - o.mean).abs() <= 3.0 * o.se)
        })
        .count()
}
