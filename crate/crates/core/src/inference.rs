//! Posterior computation for the two-component mixture on a tensor quadrature
//! grid over `theta`.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::animal_prior::BvnParams;
use crate::dose_model::{log_risks, DoseGrid, ThetaPoint};
use crate::error::{Error, Result};
use crate::math::expit;

/// Resolution of the risk histogram used for medians.
const RISK_BINS: usize = 4000;
pub const UNDERDOSE_CUT: f64 = 0.16;
pub const OVERDOSE_CUT: f64 = 0.33;

/// Tensor-grid settings, shared by both components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Nodes per axis; odd and at least 101.
    pub nodes: usize,
    /// Box half-width in marginal prior standard deviations.
    pub half_width: f64,
    /// Box expansions attempted when posterior mass piles up at the edge.
    pub max_expansions: usize,
    /// Largest tolerated mass in the two outermost node layers.
    pub edge_tolerance: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { nodes: 201, half_width: 6.0, max_expansions: 3, edge_tolerance: 1e-3 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 101 || self.nodes.is_multiple_of(2) {
            return Err(Error::Domain(format!("grid nodes per axis must be odd and >= 101, got {}", self.nodes)));
        }
        if !(self.half_width > 0.0) {
            return Err(Error::Domain("grid half-width must be positive".into()));
        }
        Ok(())
    }
}

/// Quadrature grid for one bivariate-normal prior, with the per-dose risk
/// tables pre-computed.
#[derive(Debug)]
pub struct ThetaGrid {
    pub prior: BvnParams,
    /// Reference dose of this component's parameterization.
    pub d_ref: f64,
    pub n: usize,
    pub half_width: f64,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    /// `ln(prior pdf × trapezoid weight)` per node (row-major, theta1 outer).
    log_prior_w: Vec<f64>,
    /// `ln` of the quadrature prior mass; the marginal likelihood is
    /// normalized by it so that empty data gives exactly 1.
    log_prior_mass: f64,
    n_doses: usize,
    /// Dose-major `ln p_i` and `ln(1 - p_i)`.
    log_p: Vec<f64>,
    log_q: Vec<f64>,
    risk: Vec<f64>,
    bin: Vec<u16>,
}

impl ThetaGrid {
    pub fn new(prior: &BvnParams, d_ref: f64, grid: &DoseGrid, spec: &GridSpec) -> Result<Self> {
        Self::with_half_width(prior, d_ref, grid, spec.nodes, spec.half_width)
    }

    fn with_half_width(prior: &BvnParams, d_ref: f64, grid: &DoseGrid, n: usize, half_width: f64) -> Result<Self> {
        prior.validate()?;
        if !(d_ref > 0.0) {
            return Err(Error::Domain(format!("reference dose must be positive, got {d_ref}")));
        }
        let axis = |mu: f64, sd: f64| -> (Vec<f64>, f64) {
            let lo = mu - half_width * sd;
            let h = 2.0 * half_width * sd / (n - 1) as f64;
            ((0..n).map(|k| lo + k as f64 * h).collect(), h)
        };
        let (theta1, h1) = axis(prior.mu1, prior.sd1());
        let (theta2, h2) = axis(prior.mu2, prior.sd2());
        let ratios: Vec<f64> = grid.doses.iter().map(|d| (d / d_ref).ln()).collect();
        let n_doses = ratios.len();
        let nodes = n * n;

        let mut log_prior_w = Vec::with_capacity(nodes);
        let mut log_p = Vec::with_capacity(nodes * n_doses);
        let mut log_q = Vec::with_capacity(nodes * n_doses);
        let mut risk = Vec::with_capacity(nodes * n_doses);
        let mut bin = Vec::with_capacity(nodes * n_doses);
        let edge = |k: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        for (a, &t1) in theta1.iter().enumerate() {
            for (b, &t2) in theta2.iter().enumerate() {
                let w = h1 * h2 * edge(a) * edge(b);
                log_prior_w.push(prior.log_pdf(t1, t2) + w.ln());
                let slope = t2.exp();
                for &l in &ratios {
                    let z = t1 + slope * l;
                    let (lp, lq) = log_risks(z);
                    let p = expit(z);
                    log_p.push(lp);
                    log_q.push(lq);
                    risk.push(p);
                    bin.push(((p * RISK_BINS as f64) as usize).min(RISK_BINS - 1) as u16);
                }
            }
        }
        // dose-major so the likelihood update streams contiguously
        let transpose = |v: Vec<f64>| -> Vec<f64> {
            (0..n_doses).flat_map(|i| (0..nodes).map(move |k| (k, i))).map(|(k, i)| v[k * n_doses + i]).collect()
        };
        let (log_p, log_q) = (transpose(log_p), transpose(log_q));
        let max = log_prior_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mass: f64 = log_prior_w.iter().map(|v| (v - max).exp()).sum();
        Ok(ThetaGrid {
            prior: *prior,
            d_ref,
            n,
            half_width,
            theta1,
            theta2,
            log_prior_w,
            log_prior_mass: max + mass.ln(),
            n_doses,
            log_p,
            log_q,
            risk,
            bin,
        })
    }

    pub fn n_doses(&self) -> usize {
        self.n_doses
    }

    fn node(&self, k: usize) -> ThetaPoint {
        ThetaPoint { theta1: self.theta1[k / self.n], theta2: self.theta2[k % self.n] }
    }

    /// Smallest theta1 index with `risk[dose i] >= cut` in column `b`
    /// (risk increases with theta1), or `n` if none.
    fn first_at_least(&self, b: usize, i: usize, cut: f64) -> usize {
        let (n, nd) = (self.n, self.n_doses);
        let (mut lo, mut hi) = (0, n);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.risk[(mid * n + b) * nd + i] >= cut {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    /// `Σ weights` over nodes whose risk at each dose is at least `cut`.
    fn mass_at_least(&self, weights: &[f64], cut: f64) -> Vec<f64> {
        let n = self.n;
        // suffix[a * n + b] = Σ_{a' >= a} w[a' n + b]; row n is zero.
        let mut suffix = vec![0.0; (n + 1) * n];
        for a in (0..n).rev() {
            for b in 0..n {
                suffix[a * n + b] = suffix[(a + 1) * n + b] + weights[a * n + b];
            }
        }
        (0..self.n_doses)
            .map(|i| (0..n).map(|b| suffix[self.first_at_least(b, i, cut) * n + b]).sum())
            .collect()
    }

    /// Fraction of `weights` in the two outermost layers of the box.
    fn edge_mass(&self, weights: &[f64]) -> f64 {
        let n = self.n;
        let row = |a: usize| weights[a * n..(a + 1) * n].iter().sum::<f64>();
        let rows: f64 = [0, 1, n - 2, n - 1].iter().map(|&a| row(a)).sum();
        let cols: f64 = (2..n - 2)
            .map(|a| {
                let r = &weights[a * n..(a + 1) * n];
                r[0] + r[1] + r[n - 2] + r[n - 1]
            })
            .sum();
        rows + cols
    }
}

/// Log-likelihood of per-dose `(n, r)` counts at `theta`, parameterized on `d_ref`.
pub fn log_likelihood(theta: ThetaPoint, d_ref: f64, grid: &DoseGrid, counts: &[(u32, u32)]) -> f64 {
    grid.doses
        .iter()
        .map(|d| (d / d_ref).ln())
        .zip(counts)
        .filter(|(_, c)| c.0 > 0)
        .map(|(l, &(n, r))| {
            let (lp, lq) = log_risks(theta.log_odds(l));
            r as f64 * lp + (n - r) as f64 * lq
        })
        .sum()
}

/// Normalized posterior weights of one component on its grid.
#[derive(Debug, Clone)]
pub struct ComponentPosterior {
    pub grid: Arc<ThetaGrid>,
    /// Node weights summing to 1.
    pub weights: Vec<f64>,
    /// `ln` of the prior-normalized marginal likelihood.
    pub log_marginal: f64,
    /// Index of the heaviest node.
    pub argmax: usize,
}

impl ComponentPosterior {
    /// Posterior means of `(theta1, theta2)` on the component's own reference dose.
    pub fn mean_theta(&self) -> (f64, f64) {
        self.mean_theta_at(self.grid.d_ref)
    }

    /// Posterior means with `theta1` read as the log-odds at `d_ref`.
    pub fn mean_theta_at(&self, d_ref: f64) -> (f64, f64) {
        let n = self.grid.n;
        let shift = (d_ref / self.grid.d_ref).ln();
        let (mut m1, mut m2) = (0.0, 0.0);
        for (k, w) in self.weights.iter().enumerate() {
            let t2 = self.grid.theta2[k % n];
            m1 += w * (self.grid.theta1[k / n] + t2.exp() * shift);
            m2 += w * t2;
        }
        (m1, m2)
    }

    pub fn sd_theta(&self) -> (f64, f64) {
        let n = self.grid.n;
        let (m1, m2) = self.mean_theta();
        let (mut v1, mut v2) = (0.0, 0.0);
        for (k, w) in self.weights.iter().enumerate() {
            v1 += w * (self.grid.theta1[k / n] - m1).powi(2);
            v2 += w * (self.grid.theta2[k % n] - m2).powi(2);
        }
        (v1.sqrt(), v2.sqrt())
    }

    /// Posterior mean of the risk at each dose.
    pub fn mean_risk(&self) -> Vec<f64> {
        let nd = self.grid.n_doses;
        let mut out = vec![0.0; nd];
        for (k, w) in self.weights.iter().enumerate() {
            for (o, p) in out.iter_mut().zip(&self.grid.risk[k * nd..(k + 1) * nd]) {
                *o += w * p;
            }
        }
        out
    }

    /// Log posterior density at `theta`, where `theta` is parameterized on
    /// `d_ref`. The change of reference dose is a unit-Jacobian shear.
    fn log_density(&self, theta: ThetaPoint, d_ref: f64, dose_grid: &DoseGrid, counts: &[(u32, u32)]) -> f64 {
        let own = ThetaPoint {
            theta1: theta.theta1 + theta.theta2.exp() * (self.grid.d_ref / d_ref).ln(),
            theta2: theta.theta2,
        };
        self.grid.prior.log_pdf(own.theta1, own.theta2) + log_likelihood(own, self.grid.d_ref, dose_grid, counts)
            - self.log_marginal
            - self.grid.log_prior_mass
    }
}

fn weights_on(grid: &ThetaGrid, counts: &[(u32, u32)]) -> (Vec<f64>, f64) {
    let nodes = grid.log_prior_w.len();
    let mut logw = grid.log_prior_w.clone();
    for (i, &(n, r)) in counts.iter().enumerate().filter(|(_, c)| c.0 > 0) {
        let (r, s) = (r as f64, (n - r) as f64);
        let lp = &grid.log_p[i * nodes..(i + 1) * nodes];
        let lq = &grid.log_q[i * nodes..(i + 1) * nodes];
        for ((v, a), b) in logw.iter_mut().zip(lp).zip(lq) {
            *v += r * a + s * b;
        }
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in logw.iter_mut() {
        let x = *v - max;
        // exp underflows to zero well before this
        *v = if x < -745.0 { 0.0 } else { x.exp() };
        total += *v;
    }
    let inv = 1.0 / total;
    for v in logw.iter_mut() {
        *v *= inv;
    }
    (logw, max + total.ln())
}

/// Bayes update of one component; retries on a wider box when the posterior
/// leaks to the edge.
pub fn component_posterior(
    grid: &Arc<ThetaGrid>,
    dose_grid: &DoseGrid,
    counts: &[(u32, u32)],
    spec: &GridSpec,
) -> Result<ComponentPosterior> {
    if counts.len() != grid.n_doses || counts.iter().any(|&(n, r)| r > n) {
        return Err(Error::InvalidCohort("counts do not match the dose grid".into()));
    }
    if counts.iter().all(|c| c.0 == 0) {
        let (weights, log_z) = weights_on(grid, counts);
        let argmax = argmax(&weights);
        return Ok(ComponentPosterior {
            grid: grid.clone(),
            weights,
            log_marginal: log_z - grid.log_prior_mass,
            argmax,
        }
        .with_exact_empty());
    }
    let mut current = grid.clone();
    for attempt in 0..=spec.max_expansions {
        let (weights, log_z) = weights_on(&current, counts);
        if !log_z.is_finite() {
            return Err(Error::Numeric("posterior mass vanished on the quadrature grid".into()));
        }
        if current.edge_mass(&weights) <= spec.edge_tolerance {
            let argmax = argmax(&weights);
            return Ok(ComponentPosterior {
                log_marginal: log_z - current.log_prior_mass,
                grid: current,
                weights,
                argmax,
            });
        }
        if attempt < spec.max_expansions {
            current = Arc::new(ThetaGrid::with_half_width(
                &grid.prior,
                grid.d_ref,
                dose_grid,
                grid.n,
                current.half_width * 1.5,
            )?);
        }
    }
    Err(Error::Numeric(format!(
        "posterior mass at the grid boundary after {} expansions",
        spec.max_expansions
    )))
}

impl ComponentPosterior {
    fn with_exact_empty(mut self) -> Self {
        self.log_marginal = 0.0;
        self
    }
}

fn argmax(w: &[f64]) -> usize {
    w.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0)
}

/// Serializable description of a mixture prior/posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureBelief {
    pub comp_informative: BvnParams,
    pub comp_weak: BvnParams,
    pub informative_d_ref: f64,
    pub weak_d_ref: f64,
    pub weight: f64,
    pub posterior_weight: Option<f64>,
}

/// Pre-computed grids for both components on one dose grid.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    pub dose_grid: DoseGrid,
    pub spec: GridSpec,
    pub informative: Arc<ThetaGrid>,
    pub weak: Arc<ThetaGrid>,
    empty: OnceLock<(ComponentPosterior, ComponentPosterior)>,
}

impl MixtureModel {
    /// The informative component is parameterized on the grid's reference
    /// dose, the weak one on `weak_d_ref`.
    pub fn new(
        dose_grid: &DoseGrid,
        informative: &BvnParams,
        weak: &BvnParams,
        weak_d_ref: f64,
        spec: &GridSpec,
    ) -> Result<Self> {
        dose_grid.validate()?;
        spec.validate()?;
        let (a, b) = rayon::join(
            || ThetaGrid::new(informative, dose_grid.d_ref, dose_grid, spec),
            || ThetaGrid::new(weak, weak_d_ref, dose_grid, spec),
        );
        Ok(MixtureModel {
            dose_grid: dose_grid.clone(),
            spec: *spec,
            informative: Arc::new(a?),
            weak: Arc::new(b?),
            empty: OnceLock::new(),
        })
    }

    pub fn belief(&self, weight: f64) -> MixtureBelief {
        MixtureBelief {
            comp_informative: self.informative.prior,
            comp_weak: self.weak.prior,
            informative_d_ref: self.informative.d_ref,
            weak_d_ref: self.weak.d_ref,
            weight,
            posterior_weight: None,
        }
    }

    /// Posterior given prior weight `weight` and per-dose `(n, r)` counts.
    pub fn posterior(&self, weight: f64, counts: &[(u32, u32)]) -> Result<MixturePosterior> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Domain(format!("mixture weight must be in [0, 1], got {weight}")));
        }
        let (inf, weak) = if counts.len() == self.dose_grid.len() && counts.iter().all(|c| *c == (0, 0)) {
            if self.empty.get().is_none() {
                let pair = (
                    component_posterior(&self.informative, &self.dose_grid, counts, &self.spec)?,
                    component_posterior(&self.weak, &self.dose_grid, counts, &self.spec)?,
                );
                let _ = self.empty.set(pair);
            }
            self.empty.get().cloned().expect("set above")
        } else {
            (
                component_posterior(&self.informative, &self.dose_grid, counts, &self.spec)?,
                component_posterior(&self.weak, &self.dose_grid, counts, &self.spec)?,
            )
        };
        let w_post = posterior_weight(weight, inf.log_marginal, weak.log_marginal)?;
        Ok(MixturePosterior { prior_weight: weight, posterior_weight: w_post, counts: counts.to_vec(), informative: inf, weak })
    }
}

/// `w M_pi / (w M_pi + (1 - w) M_m)`, evaluated in log space.
pub fn posterior_weight(weight: f64, log_m_inf: f64, log_m_weak: f64) -> Result<f64> {
    if weight == 1.0 || weight == 0.0 {
        return Ok(weight);
    }
    let a = weight.ln() + log_m_inf;
    let b = (1.0 - weight).ln() + log_m_weak;
    if !a.is_finite() && !b.is_finite() {
        return Err(Error::DegenerateData);
    }
    Ok(1.0 / (1.0 + (b - a).exp()))
}

#[derive(Debug, Clone)]
pub struct MixturePosterior {
    pub prior_weight: f64,
    pub posterior_weight: f64,
    pub counts: Vec<(u32, u32)>,
    pub informative: ComponentPosterior,
    pub weak: ComponentPosterior,
}

/// Per-dose posterior summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub doses: Vec<f64>,
    pub median: Vec<f64>,
    pub pr_under: Vec<f64>,
    pub pr_target: Vec<f64>,
    pub pr_over: Vec<f64>,
    /// Predictive probability of a DLT (the posterior mean risk).
    pub pr_dlt: Vec<f64>,
    pub posterior_weight: f64,
}

impl MixturePosterior {
    pub fn belief(&self) -> MixtureBelief {
        MixtureBelief {
            comp_informative: self.informative.grid.prior,
            comp_weak: self.weak.grid.prior,
            informative_d_ref: self.informative.grid.d_ref,
            weak_d_ref: self.weak.grid.d_ref,
            weight: self.prior_weight,
            posterior_weight: Some(self.posterior_weight),
        }
    }

    fn components(&self) -> [(f64, &ComponentPosterior); 2] {
        [(self.posterior_weight, &self.informative), (1.0 - self.posterior_weight, &self.weak)]
    }

    /// Mixed posterior probability that the risk at dose `i` is below `x`.
    pub fn prob_risk_below(&self, i: usize, x: f64) -> f64 {
        1.0 - self.pr_at_least(x)[i]
    }

    /// Overdose probabilities `Pr(p_i >= 0.33)` for every dose.
    pub fn pr_over(&self) -> Vec<f64> {
        self.pr_at_least(OVERDOSE_CUT)
    }

    /// `Pr(p_i >= cut)` for every dose.
    pub fn pr_at_least(&self, cut: f64) -> Vec<f64> {
        let nd = self.informative.grid.n_doses;
        let mut out = vec![0.0; nd];
        for (wc, c) in self.components() {
            if wc == 0.0 {
                continue;
            }
            for (o, m) in out.iter_mut().zip(c.grid.mass_at_least(&c.weights, cut)) {
                *o += wc * m;
            }
        }
        out
    }

    pub fn summarize(&self, dose_grid: &DoseGrid) -> PosteriorSummary {
        let nd = dose_grid.len();
        let mut hist = vec![0.0; nd * RISK_BINS];
        let mut under = vec![0.0; nd];
        let mut over = vec![0.0; nd];
        let mut mean = vec![0.0; nd];
        for (wc, c) in self.components() {
            if wc == 0.0 {
                continue;
            }
            let g = &c.grid;
            for (k, w) in c.weights.iter().enumerate() {
                let ww = wc * w;
                for i in 0..nd {
                    let p = g.risk[k * nd + i];
                    hist[i * RISK_BINS + g.bin[k * nd + i] as usize] += ww;
                    mean[i] += ww * p;
                    if p < UNDERDOSE_CUT {
                        under[i] += ww;
                    } else if p >= OVERDOSE_CUT {
                        over[i] += ww;
                    }
                }
            }
        }
        let median = (0..nd)
            .map(|i| histogram_quantile(&hist[i * RISK_BINS..(i + 1) * RISK_BINS], 0.5))
            .collect();
        let target = under.iter().zip(&over).map(|(u, o)| (1.0 - u - o).max(0.0)).collect();
        PosteriorSummary {
            doses: dose_grid.doses.clone(),
            median,
            pr_under: under,
            pr_target: target,
            pr_over: over,
            pr_dlt: mean,
            posterior_weight: self.posterior_weight,
        }
    }

    /// Joint posterior mode of the mixture, approximated by the better of the
    /// two component argmax nodes, with its reference dose.
    pub fn mode(&self, dose_grid: &DoseGrid) -> (ThetaPoint, f64) {
        let cands = [
            (self.informative.grid.node(self.informative.argmax), self.informative.grid.d_ref),
            (self.weak.grid.node(self.weak.argmax), self.weak.grid.d_ref),
        ];
        let density = |(t, d_ref): (ThetaPoint, f64)| -> f64 {
            self.components()
                .iter()
                .filter(|(wc, _)| *wc > 0.0)
                .map(|(wc, c)| wc * c.log_density(t, d_ref, dose_grid, &self.counts).exp())
                .sum()
        };
        if density(cands[0]) >= density(cands[1]) {
            cands[0]
        } else {
            cands[1]
        }
    }

    /// Mixed posterior means of `(theta1, theta2)`, with `theta1` the
    /// log-odds at the informative component's reference dose.
    pub fn mean_theta(&self) -> (f64, f64) {
        let d_ref = self.informative.grid.d_ref;
        let (a, b) = (self.informative.mean_theta_at(d_ref), self.weak.mean_theta_at(d_ref));
        let w = self.posterior_weight;
        (w * a.0 + (1.0 - w) * b.0, w * a.1 + (1.0 - w) * b.1)
    }
}

fn histogram_quantile(h: &[f64], level: f64) -> f64 {
    let total: f64 = h.iter().sum();
    let target = level * total;
    let mut acc = 0.0;
    for (b, m) in h.iter().enumerate() {
        if acc + m >= target && *m > 0.0 {
            let frac = (target - acc) / m;
            return (b as f64 + frac) / h.len() as f64;
        }
        acc += m;
    }
    1.0
}

/// Beta distribution with the given mean and sd: `(a, b, a + b)`.
pub fn ess_moment_match(mean: f64, sd: f64) -> Result<(f64, f64, f64)> {
    if !(mean > 0.0 && mean < 1.0 && sd > 0.0) || sd * sd >= mean * (1.0 - mean) {
        return Err(Error::NoBetaMatch { mean, sd });
    }
    let k = mean * (1.0 - mean) / (sd * sd) - 1.0;
    let (a, b) = (mean * k, (1.0 - mean) * k);
    Ok((a, b, a + b))
}

/// Prior mean and sd of the risk at every dose for a single BVN component.
pub fn component_risk_moments(post: &ComponentPosterior) -> Vec<(f64, f64)> {
    let nd = post.grid.n_doses;
    let mut m = vec![0.0; nd];
    let mut s = vec![0.0; nd];
    for (k, w) in post.weights.iter().enumerate() {
        for i in 0..nd {
            let p = post.grid.risk[k * nd + i];
            m[i] += w * p;
            s[i] += w * p * p;
        }
    }
    m.iter().zip(&s).map(|(a, b)| (*a, (b - a * a).max(0.0).sqrt())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::animal_prior::weakly_informative_prior;

    fn model() -> MixtureModel {
        let g = DoseGrid::auy922();
        let inf = BvnParams::new(-0.524, 0.147, 0.151, -0.008, 0.001).unwrap().inflated(2.0);
        MixtureModel::new(&g, &inf, &weakly_informative_prior(&g), 16.0, &GridSpec::default()).unwrap()
    }

    #[test]
    fn empty_data_marginal_is_one() {
        let m = model();
        let post = m.posterior(0.5, &[(0, 0); 9]).unwrap();
        assert_eq!(post.informative.log_marginal, 0.0);
        assert_eq!(post.weak.log_marginal, 0.0);
        assert_eq!(post.posterior_weight, 0.5);
    }

    #[test]
    fn weight_identities() {
        assert_eq!(posterior_weight(1.0, -3.0, -1.0).unwrap(), 1.0);
        assert_eq!(posterior_weight(0.0, -3.0, -1.0).unwrap(), 0.0);
        assert!((posterior_weight(0.3, -2.0, -2.0).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(
            posterior_weight(0.3, f64::NEG_INFINITY, f64::NEG_INFINITY),
            Err(Error::DegenerateData)
        );
    }

    #[test]
    fn no_dlt_at_low_dose_lowers_theta1() {
        let m = model();
        let mut counts = vec![(0, 0); 9];
        counts[0] = (3, 0);
        let post = m.posterior(1.0, &counts).unwrap();
        let prior = m.posterior(1.0, &[(0, 0); 9]).unwrap();
        // no DLT shifts the curve down at low doses
        assert!(post.informative.mean_risk()[0] < prior.informative.mean_risk()[0]);
        let w = m.posterior(0.0, &counts).unwrap();
        assert!(w.weak.mean_theta().0 < weakly_informative_prior(&m.dose_grid).mu1);
    }

    #[test]
    fn interval_probabilities_sum_to_one() {
        let m = model();
        let mut counts = vec![(0, 0); 9];
        counts[1] = (3, 1);
        counts[2] = (3, 0);
        let s = m.posterior(0.4, &counts).unwrap().summarize(&m.dose_grid);
        for i in 0..9 {
            assert!((s.pr_under[i] + s.pr_target[i] + s.pr_over[i] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dlt_raises_weight_when_informative_predicts_more_risk() {
        let m = model();
        // at 54 the informative prior expects ~0.55, the weak prior less
        let mut counts = vec![(0, 0); 9];
        counts[7] = (3, 1);
        let w1 = m.posterior(0.5, &counts).unwrap().posterior_weight;
        counts[7] = (3, 2);
        let w2 = m.posterior(0.5, &counts).unwrap().posterior_weight;
        assert!(w2 > w1);
    }

    #[test]
    fn ess_examples() {
        let (a, b, e) = ess_moment_match(0.3, (0.3f64 * 0.7 / 11.0).sqrt()).unwrap();
        assert!((a - 3.0).abs() < 1e-12 && (b - 7.0).abs() < 1e-12 && (e - 10.0).abs() < 1e-12);
        let (a, b, e) = ess_moment_match(0.033, 0.022).unwrap();
        assert!((e - 64.9).abs() < 1.0 && (a - 2.1).abs() < 0.1 && (b - 62.8).abs() < 1.5);
        assert!((ess_moment_match(0.625, 0.114).unwrap().2 - 17.0).abs() < 0.1);
        assert!(matches!(ess_moment_match(0.5, 0.5), Err(Error::NoBetaMatch { .. })));
    }
}
