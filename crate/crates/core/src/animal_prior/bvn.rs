use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bivariate normal over `(theta1, theta2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BvnParams {
    pub mu1: f64,
    pub mu2: f64,
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
}

impl BvnParams {
    pub fn new(mu1: f64, mu2: f64, s11: f64, s12: f64, s22: f64) -> Result<Self> {
        let b = BvnParams { mu1, mu2, s11, s12, s22 };
        b.validate()?;
        Ok(b)
    }

    /// From means, standard deviations and correlation.
    pub fn from_sd(mu1: f64, mu2: f64, sd1: f64, sd2: f64, rho: f64) -> Result<Self> {
        Self::new(mu1, mu2, sd1 * sd1, rho * sd1 * sd2, sd2 * sd2)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu1, self.mu2, self.s11, self.s12, self.s22]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("BVN parameters must be finite".into()));
        }
        if !(self.s11 > 0.0 && self.s22 > 0.0) || self.det() <= 0.0 {
            return Err(Error::Domain("BVN covariance must be positive definite".into()));
        }
        Ok(())
    }

    pub fn sd1(&self) -> f64 {
        self.s11.sqrt()
    }

    pub fn sd2(&self) -> f64 {
        self.s22.sqrt()
    }

    pub fn rho(&self) -> f64 {
        self.s12 / (self.s11 * self.s22).sqrt()
    }

    pub fn det(&self) -> f64 {
        self.s11 * self.s22 - self.s12 * self.s12
    }

    /// Same mean, covariance multiplied by `factor`.
    pub fn inflated(&self, factor: f64) -> Self {
        BvnParams {
            s11: self.s11 * factor,
            s12: self.s12 * factor,
            s22: self.s22 * factor,
            ..*self
        }
    }

    /// Log density at `(t1, t2)`.
    #[inline]
    pub fn log_pdf(&self, t1: f64, t2: f64) -> f64 {
        let det = self.det();
        let d1 = t1 - self.mu1;
        let d2 = t2 - self.mu2;
        let q = (self.s22 * d1 * d1 - 2.0 * self.s12 * d1 * d2 + self.s11 * d2 * d2) / det;
        -0.5 * q - (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_definite() {
        assert!(BvnParams::new(0.0, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(BvnParams::new(0.0, 0.0, -1.0, 0.0, 1.0).is_err());
        assert!(BvnParams::new(0.0, 0.0, 0.151, -0.008, 0.001).is_ok());
    }

    #[test]
    fn log_pdf_at_mean_of_standard() {
        let b = BvnParams::new(0.0, 0.0, 1.0, 0.0, 1.0).unwrap();
        let expected = -(2.0 * std::f64::consts::PI).ln();
        assert!((b.log_pdf(0.0, 0.0) - expected).abs() < 1e-14);
    }

    #[test]
    fn sd_roundtrip() {
        let b = BvnParams::from_sd(1.0, 2.0, 0.5, 0.2, -0.3).unwrap();
        assert!((b.rho() + 0.3).abs() < 1e-14);
        assert!((b.sd1() - 0.5).abs() < 1e-14);
        let c = b.inflated(2.0);
        assert!((c.rho() + 0.3).abs() < 1e-14);
        assert!((c.s22 - 0.08).abs() < 1e-14);
    }
}
