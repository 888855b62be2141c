use rand::Rng;

use super::NetworkSpec;
use crate::error::{Error, Result};
use crate::rng::{substream, tag};

/// Which fully connected units are active in one round. Kept units are
/// rescaled by `1/κ` so that unmasked inference sees the same expected
/// activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub keep: Vec<bool>,
    pub seed: u64,
}

impl DropoutMask {
    pub fn from_keep(keep: Vec<bool>) -> Self {
        DropoutMask { keep, seed: 0 }
    }

    #[inline]
    pub fn factor(&self, unit: usize, keep_prob: f64) -> f64 {
        if self.keep[unit] {
            1.0 / keep_prob
        } else {
            0.0
        }
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Independent Bernoulli(κ) draw per unit, reproducible from `round_seed`.
pub fn draw_dropout_mask(spec: &NetworkSpec, round_seed: u64) -> DropoutMask {
    let mut rng = substream(round_seed, &[tag::MASK]);
    let keep_prob = spec.keep_prob.clamp(0.0, 1.0);
    DropoutMask {
        keep: (0..spec.fc_units).map(|_| rng.random_bool(keep_prob)).collect(),
        seed: round_seed,
    }
}

/// Heavy-ball momentum: `v ← μ v + g`, `θ ← θ − η v`. With `μ = 0` this is
/// plain gradient descent.
pub fn sgd_step(
    theta: &mut [f64],
    velocity: &mut [f64],
    grad: &[f64],
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if theta.len() != velocity.len() || theta.len() != grad.len() {
        return Err(Error::invalid(format!(
            "sgd_step length mismatch: θ {}, velocity {}, gradient {}",
            theta.len(),
            velocity.len(),
            grad.len()
        )));
    }
    if !learning_rate.is_finite() || !momentum.is_finite() {
        return Err(Error::NumericFailure("non-finite step hyperparameters".into()));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NumericFailure(format!("gradient coordinate {i} is not finite")));
    }
    for ((t, v), g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g;
        *t -= learning_rate * *v;
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::NumericFailure("parameters became non-finite".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step() {
        let mut theta = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut theta, &mut v, &[0.5, 0.25], 1.0, 0.0).unwrap();
        assert_eq!(theta, vec![0.5, -2.25]);

        let before = theta.clone();
        let mut v = vec![0.0; 2];
        sgd_step(&mut theta, &mut v, &[0.0, 0.0], 0.1, 0.9).unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn two_momentum_steps() {
        let (eta, mu) = (0.1, 0.9);
        let (g1, g2) = (2.0, -1.0);
        let mut theta = vec![3.0];
        let mut v = vec![0.0];
        sgd_step(&mut theta, &mut v, &[g1], eta, mu).unwrap();
        sgd_step(&mut theta, &mut v, &[g2], eta, mu).unwrap();
        // v1 = g1, θ1 = θ0 − η g1; v2 = μ g1 + g2, θ2 = θ1 − η v2
        let v2 = mu * g1 + g2;
        let expected = 3.0 - eta * g1 - eta * v2;
        assert!((theta[0] - expected).abs() < 1e-15);
        assert!((v[0] - v2).abs() < 1e-15);
    }

    #[test]
    fn non_finite_rejected() {
        let mut theta = vec![0.0];
        let mut v = vec![0.0];
        assert!(matches!(
            sgd_step(&mut theta, &mut v, &[f64::NAN], 0.1, 0.0),
            Err(Error::NumericFailure(_))
        ));
        assert!(sgd_step(&mut theta, &mut v, &[1.0, 2.0], 0.1, 0.0).is_err());
    }

    #[test]
    fn masks() {
        let spec = NetworkSpec::standard(4, 2, 2);
        assert_eq!(draw_dropout_mask(&spec, 5), draw_dropout_mask(&spec, 5));
        assert_ne!(draw_dropout_mask(&spec, 5), draw_dropout_mask(&spec, 6));

        let single = NetworkSpec { fc_units: 1, ..spec.clone() };
        assert_eq!(draw_dropout_mask(&single, 1).keep.len(), 1);

        let small = NetworkSpec { fc_units: 16, ..spec };
        let ones: usize = (0..10_000).map(|s| draw_dropout_mask(&small, s).kept()).sum();
        let frac = ones as f64 / (10_000.0 * 16.0);
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }
}
