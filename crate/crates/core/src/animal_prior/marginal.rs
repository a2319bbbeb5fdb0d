//! Joint and marginal prior of the DLT risk at a grid dose induced by two
//! beta pseudo-arms.
//!
//! Working on the log-odds scale `x = logit(p)` removes the `1/(p(1-p))`
//! Jacobian factor, so tables and quadrature use the density of `x`; the
//! density of `p` is recovered on request.

use crate::error::{Error, Result};
use crate::math::{composite_gl, expit, gauss_legendre, ln_beta, log_expit, logit};

use super::PseudoArm;

/// Scale of the `theta2 = c * atanh(u)` substitution.
const TANH_SCALE: f64 = 5.0;
/// Base rule: 67 panels of 3 points = 201 nodes.
const BASE_PANELS: usize = 67;
const PANEL_ORDER: usize = 3;
const MAX_REFINEMENTS: usize = 6;
const REFINE_RTOL: f64 = 1e-6;

const X_LO: f64 = -45.0;
const X_HI: f64 = 45.0;
const X_PANEL: f64 = 0.25;
const X_ORDER: usize = 4;

/// Quadrature rule over `theta2 ∈ ℝ` after mapping to `u ∈ (-1, 1)`.
#[derive(Debug, Clone)]
pub struct ThetaRule {
    panels: usize,
    slopes: Vec<f64>,
    log_slopes: Vec<f64>,
    weights: Vec<f64>,
}

impl ThetaRule {
    pub fn new(panels: usize) -> Self {
        let (us, ws) = composite_gl(-1.0, 1.0, panels, PANEL_ORDER);
        let mut slopes = Vec::with_capacity(us.len());
        let mut log_slopes = Vec::with_capacity(us.len());
        let mut weights = Vec::with_capacity(us.len());
        for (u, w) in us.iter().zip(&ws) {
            let t2 = TANH_SCALE * u.atanh();
            log_slopes.push(t2);
            slopes.push(t2.exp());
            weights.push(w * TANH_SCALE / (1.0 - u * u));
        }
        ThetaRule { panels, slopes, log_slopes, weights }
    }

    pub fn base() -> Self {
        Self::new(BASE_PANELS)
    }

    pub fn refined(&self) -> Self {
        Self::new(self.panels * 2)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Pre-computed pieces of the joint density for one grid dose.
#[derive(Debug, Clone)]
struct JointKernel {
    /// `ln(d_j / d_i)` per arm.
    offsets: [f64; 2],
    shapes: [(f64, f64); 2],
    /// `ln|ln(d_-1/d_0)| - ln B(t_-1, v_-1) - ln B(t_0, v_0)`.
    log_const: f64,
}

impl JointKernel {
    fn new(dose: f64, arms: &[PseudoArm]) -> Result<Self> {
        if arms.len() != 2 {
            return Err(Error::Domain(format!(
                "the Jacobian construction needs exactly two pseudo-arms, got {}",
                arms.len()
            )));
        }
        if !(dose > 0.0) {
            return Err(Error::Domain(format!("dose must be positive, got {dose}")));
        }
        let (lo, hi) = (&arms[0], &arms[1]);
        if lo.human_dose == hi.human_dose {
            return Err(Error::DegenerateGeometry(format!(
                "pseudo-arms share the dose {}",
                lo.human_dose
            )));
        }
        let spread = (lo.human_dose / hi.human_dose).ln().abs();
        Ok(JointKernel {
            offsets: [(lo.human_dose / dose).ln(), (hi.human_dose / dose).ln()],
            shapes: [(lo.a, lo.b), (hi.a, hi.b)],
            log_const: spread.ln() - ln_beta(lo.a, lo.b) - ln_beta(hi.a, hi.b),
        })
    }

    /// Log density of `(logit p_i, theta2)`.
    #[inline]
    fn log_density_x(&self, x: f64, theta2: f64, slope: f64) -> f64 {
        let mut acc = self.log_const + theta2;
        for j in 0..2 {
            let z = x + slope * self.offsets[j];
            let (t, v) = self.shapes[j];
            acc += t * log_expit(z) + v * log_expit(-z);
        }
        acc
    }

    fn density_x(&self, x: f64, rule: &ThetaRule) -> f64 {
        rule.slopes
            .iter()
            .zip(&rule.log_slopes)
            .zip(&rule.weights)
            .map(|((s, t2), w)| w * self.log_density_x(x, *t2, *s).exp())
            .sum()
    }
}

/// Joint prior density of `(p_i, theta2)` at `dose_i`.
///
/// The marginal does not depend on the reference dose: `theta1` is
/// eliminated through `z_j = logit(p_i) + exp(theta2) ln(d_j / d_i)`.
pub fn joint_density(p: f64, theta2: f64, dose_i: f64, arms: &[PseudoArm]) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p must lie in (0, 1), got {p}")));
    }
    let k = JointKernel::new(dose_i, arms)?;
    let x = logit(p);
    Ok(k.log_density_x(x, theta2, theta2.exp()).exp() / (p * (1.0 - p)))
}

/// Marginal prior density of `p_i`, integrating `theta2` out with rule
/// doubling until the relative change falls below 1e-6.
pub fn marginal_density(p: f64, dose_i: f64, arms: &[PseudoArm]) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p must lie in (0, 1), got {p}")));
    }
    let k = JointKernel::new(dose_i, arms)?;
    let x = logit(p);
    let (fx, _) = converged_density_x(&k, x)?;
    Ok(fx / (p * (1.0 - p)))
}

fn converged_density_x(k: &JointKernel, x: f64) -> Result<(f64, ThetaRule)> {
    let mut rule = ThetaRule::base();
    let mut prev = k.density_x(x, &rule);
    for _ in 0..MAX_REFINEMENTS {
        let next_rule = rule.refined();
        let next = k.density_x(x, &next_rule);
        let scale = next.abs().max(1e-300);
        if (next - prev).abs() / scale < REFINE_RTOL || next < 1e-250 {
            return Ok((next, next_rule));
        }
        prev = next;
        rule = next_rule;
    }
    Err(Error::Numeric(format!(
        "theta2 quadrature did not converge at logit(p) = {x}"
    )))
}

/// Tabulated marginal prior of `p_i` at one grid dose.
///
/// The total mass equals `Pr(p_0 > p_-1)` under the independent beta
/// pseudo-priors (the transform's image), so every reported cdf, percentile
/// and moment is normalized by it.
#[derive(Debug, Clone)]
pub struct MarginalPrior {
    dose: f64,
    kernel: JointKernel,
    rule: ThetaRule,
    cumulative: Vec<f64>,
    mass: f64,
    mean: f64,
    second_moment: f64,
}

impl MarginalPrior {
    pub fn new(dose_i: f64, arms: &[PseudoArm]) -> Result<Self> {
        let kernel = JointKernel::new(dose_i, arms)?;
        let panels = ((X_HI - X_LO) / X_PANEL).round() as usize;
        let (xs, ws) = composite_gl(X_LO, X_HI, panels, X_ORDER);

        // choose the theta2 rule at the density peak on a coarse scan
        let peak = (0..=180)
            .map(|i| X_LO + i as f64 * 0.5)
            .max_by(|a, b| {
                kernel
                    .density_x(*a, &ThetaRule::base())
                    .total_cmp(&kernel.density_x(*b, &ThetaRule::base()))
            })
            .unwrap_or(0.0);
        let (_, rule) = converged_density_x(&kernel, peak)?;

        let mut cumulative = Vec::with_capacity(panels + 1);
        cumulative.push(0.0);
        let (mut mass, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for (chunk_x, chunk_w) in xs.chunks(X_ORDER).zip(ws.chunks(X_ORDER)) {
            for (x, w) in chunk_x.iter().zip(chunk_w) {
                let f = w * kernel.density_x(*x, &rule);
                let p = expit(*x);
                mass += f;
                m1 += f * p;
                m2 += f * p * p;
            }
            cumulative.push(mass);
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Numeric(format!("marginal at dose {dose_i} has no mass")));
        }
        Ok(MarginalPrior {
            dose: dose_i,
            kernel,
            rule,
            cumulative,
            mass,
            mean: m1 / mass,
            second_moment: m2 / mass,
        })
    }

    pub fn dose(&self) -> f64 {
        self.dose
    }

    /// Integral of the unnormalized marginal over (0, 1).
    pub fn total_mass(&self) -> f64 {
        self.mass
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sd(&self) -> f64 {
        (self.second_moment - self.mean * self.mean).max(0.0).sqrt()
    }

    /// Unnormalized density of `p` at `p`, with the table's theta2 rule.
    pub fn density(&self, p: f64) -> f64 {
        if !(p > 0.0 && p < 1.0) {
            return 0.0;
        }
        self.kernel.density_x(logit(p), &self.rule) / (p * (1.0 - p))
    }

    /// Unnormalized cdf `F_i(q)`.
    pub fn cdf_unnormalized(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return 0.0;
        }
        if q >= 1.0 {
            return self.mass;
        }
        self.cdf_x(logit(q))
    }

    /// Normalized cdf `F_i(q) / F_i(1)`.
    pub fn cdf(&self, q: f64) -> f64 {
        self.cdf_unnormalized(q) / self.mass
    }

    fn cdf_x(&self, x: f64) -> f64 {
        if x <= X_LO {
            return 0.0;
        }
        if x >= X_HI {
            return self.mass;
        }
        let k = (((x - X_LO) / X_PANEL).floor() as usize).min(self.cumulative.len() - 2);
        let edge = X_LO + k as f64 * X_PANEL;
        let (gx, gw) = gauss_legendre(X_ORDER);
        let half = 0.5 * (x - edge);
        let partial: f64 = gx
            .iter()
            .zip(&gw)
            .map(|(u, w)| half * w * self.kernel.density_x(edge + half * (u + 1.0), &self.rule))
            .sum();
        self.cumulative[k] + partial
    }

    /// Risk `q` with normalized cdf equal to `level`.
    pub fn percentile(&self, level: f64) -> Result<f64> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Domain(format!("percentile level must be in (0, 1), got {level}")));
        }
        let target = level * self.mass;
        let (mut lo, mut hi) = (X_LO, X_HI);
        if self.cdf_x(lo) > target || self.cdf_x(hi) < target {
            return Err(Error::Numeric(format!(
                "percentile {level} is not bracketed at dose {}",
                self.dose
            )));
        }
        // bisection on the log-odds scale until the risk interval is below 1e-9
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf_x(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if expit(hi) - expit(lo) < 1e-9 {
                break;
            }
        }
        Ok(expit(0.5 * (lo + hi)))
    }
}

/// Percentile `q_ik` of the normalized marginal prior at `dose_i`.
pub fn marginal_percentile(dose_i: f64, level: f64, arms: &[PseudoArm]) -> Result<f64> {
    MarginalPrior::new(dose_i, arms)?.percentile(level)
}
