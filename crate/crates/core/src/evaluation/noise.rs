//! Posterior label-noise rates of an imperfect lab test.
//!
//! With true infection state `C` and lab result `R`, sensitivity
//! `Sn = P(R=1 | C=1)`, specificity `Sp = P(R=0 | C=0)` and prevalence
//! `P(C=1)`, Bayes' rule gives the probability that an observed label is
//! wrong (`p_flip`) or right (`p_retain`).

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseTable {
    pub sensitivity: f64,
    pub specificity: f64,
    pub prevalence: f64,
    /// `P(R=0)`
    pub p_r0: f64,
    /// `P(C=1 | R=0)`
    pub p_flip_0: f64,
    /// `P(C=0 | R=1)`
    pub p_flip_1: f64,
    /// `P(C=0 | R=0)`
    pub p_retain_0: f64,
    /// `P(C=1 | R=1)`
    pub p_retain_1: f64,
}

impl NoiseTable {
    pub fn p_r1(&self) -> f64 {
        1.0 - self.p_r0
    }

    /// Recovers `P(R=1 | C=1)` from the posteriors and prevalence.
    pub fn implied_sensitivity(&self) -> f64 {
        self.p_retain_1 * self.p_r1() / self.prevalence
    }

    pub fn render(&self) -> String {
        format!(
            "Sn={:.4} Sp={:.4} P(C=1)={:.4}\n\
             P(R=0)={:.4}  P(R=1)={:.4}\n\
             p_flip(0)={:.4}  p_retain(0)={:.4}\n\
             p_flip(1)={:.4}  p_retain(1)={:.4}\n",
            self.sensitivity,
            self.specificity,
            self.prevalence,
            self.p_r0,
            self.p_r1(),
            self.p_flip_0,
            self.p_retain_0,
            self.p_flip_1,
            self.p_retain_1
        )
    }
}

pub fn label_noise_table(sensitivity: f64, specificity: f64, prevalence: f64) -> Result<NoiseTable, EvalError> {
    for (name, v) in [("sensitivity", sensitivity), ("specificity", specificity), ("prevalence", prevalence)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(EvalError::OutOfRange { name, value: v });
        }
    }
    let p_c1 = prevalence;
    let p_c0 = 1.0 - prevalence;
    let p_r0 = specificity * p_c0 + (1.0 - sensitivity) * p_c1;
    let p_r1 = sensitivity * p_c1 + (1.0 - specificity) * p_c0;
    if p_r0 <= 0.0 || p_r1 <= 0.0 {
        return Err(EvalError::Degenerate(format!("P(R=0)={p_r0}, P(R=1)={p_r1}")));
    }
    let p_retain_0 = specificity * p_c0 / p_r0;
    let p_retain_1 = sensitivity * p_c1 / p_r1;
    Ok(NoiseTable {
        sensitivity,
        specificity,
        prevalence,
        p_r0,
        p_flip_0: 1.0 - p_retain_0,
        p_flip_1: 1.0 - p_retain_1,
        p_retain_0,
        p_retain_1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let t = label_noise_table(0.70, 0.95, 0.10).unwrap();
        assert!((t.p_r0 - 0.885).abs() < 1e-12);
        assert!((t.p_flip_0 - 0.0339).abs() < 1e-4);
        assert!((t.p_flip_1 - 0.3913).abs() < 1e-4);
        assert!((t.p_retain_1 - 0.6087).abs() < 1e-4);
        assert!((t.p_retain_0 - 0.9661).abs() < 1e-4);
    }

    #[test]
    fn near_perfect_test_has_no_flips() {
        let t = label_noise_table(1.0 - 1e-9, 1.0 - 1e-9, 0.3).unwrap();
        assert!(t.p_flip_0 < 1e-8 && t.p_flip_1 < 1e-8);
    }

    #[test]
    fn identities_over_grid() {
        for i in 1..20 {
            for j in 1..20 {
                for k in 1..20 {
                    let (sn, sp, pr) = (i as f64 / 20.0, j as f64 / 20.0, k as f64 / 20.0);
                    let t = label_noise_table(sn, sp, pr).unwrap();
                    assert!((t.p_flip_0 + t.p_retain_0 - 1.0).abs() < 1e-12);
                    assert!((t.p_flip_1 + t.p_retain_1 - 1.0).abs() < 1e-12);
                    let p_r1 = sn * pr + (1.0 - sp) * (1.0 - pr);
                    assert!((t.p_r0 + p_r1 - 1.0).abs() < 1e-12);
                    assert!((t.implied_sensitivity() - sn).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(label_noise_table(0.0, 0.9, 0.1).is_err());
        assert!(label_noise_table(0.7, 1.0, 0.1).is_err());
        assert!(label_noise_table(0.7, 0.9, f64::NAN).is_err());
    }
}
