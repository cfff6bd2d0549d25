//! SGD with Nesterov momentum and `1 / (1 + decay * n)` learning-rate decay.
//!
//! The update is the lookahead form
//!
//! ```text
//! v <- mu * v - lr * g(theta + mu * v)
//! theta <- theta + v
//! ```
//!
//! so the caller is responsible for evaluating gradients at the lookahead
//! point `theta + mu * v` (see [`lookahead`]).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Per-minibatch decay rate.
    pub decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            decay: 1e-4,
            momentum: 0.9,
            batch_size: 128,
            epochs: 128,
            val_fraction: 0.10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return bad(format!("decay must be non-negative, got {}", self.decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("validation fraction must be in (0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }
}

/// Learning rate for the update following `n` completed updates.
pub fn lr_at(cfg: &TrainConfig, n: u64) -> f64 {
    cfg.learning_rate / (1.0 + cfg.decay * n as f64)
}

/// Momentum buffers, one per parameter array, and the update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub velocity: Vec<Vec<f64>>,
    /// Number of completed updates.
    pub iteration: u64,
}

impl OptState {
    /// Zero velocities shaped like `param_lens`.
    pub fn new(param_lens: impl IntoIterator<Item = usize>) -> Self {
        Self {
            velocity: param_lens.into_iter().map(|n| vec![0.0; n]).collect(),
            iteration: 0,
        }
    }
}

/// Writes `theta + mu * v` into `out`.
pub fn lookahead(theta: &[f64], velocity: &[f64], mu: f64, out: &mut [f64]) {
    for ((o, &t), &v) in out.iter_mut().zip(theta).zip(velocity) {
        *o = t + mu * v;
    }
}

/// One Nesterov update of a single parameter array.
pub fn nesterov_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, mu: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape(
            "nesterov_step",
            format!("params [{}]", params.len()),
            format!("grads [{}], velocity [{}]", grads.len(), velocity.len()),
        ));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = mu * *v - lr * g;
        *p += *v;
    }
    Ok(())
}

/// Updates every parameter array in `params` with the matching gradient and
/// velocity, then advances the iteration counter.
pub fn nesterov_update<'a>(
    params: impl IntoIterator<Item = &'a mut [f64]>,
    grads: impl IntoIterator<Item = &'a [f64]>,
    state: &mut OptState,
    lr: f64,
    mu: f64,
) -> Result<()> {
    let params: Vec<&mut [f64]> = params.into_iter().collect();
    let grads: Vec<&[f64]> = grads.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::shape(
            "nesterov_update",
            format!("{} parameter arrays", params.len()),
            format!("{} gradients, {} velocities", grads.len(), state.velocity.len()),
        ));
    }
    for ((p, g), v) in params.into_iter().zip(grads).zip(&mut state.velocity) {
        nesterov_step(p, g, v, lr, mu)?;
    }
    state.iteration += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(&cfg, 0), 1e-2);
        assert_eq!(lr_at(&cfg, 10_000), 5e-3);
        let flat = TrainConfig { decay: 0.0, ..cfg.clone() };
        assert!((0..1000).all(|n| lr_at(&flat, n) == flat.learning_rate));
        assert!((0..1000).all(|n| lr_at(&cfg, n + 1) < lr_at(&cfg, n)));
    }

    #[test]
    fn scalar_quadratic_two_steps() {
        // f(theta) = theta^2 / 2, so g(theta) = theta.
        let (lr, mu) = (0.1, 0.9);
        let mut theta = [1.0];
        let mut v = [0.0];
        let mut look = [0.0];

        lookahead(&theta, &v, mu, &mut look);
        nesterov_step(&mut theta, &look, &mut v, lr, mu).unwrap();
        assert!((v[0] + 0.1).abs() < 1e-12);
        assert!((theta[0] - 0.9).abs() < 1e-12);

        lookahead(&theta, &v, mu, &mut look);
        assert!((look[0] - 0.81).abs() < 1e-12);
        nesterov_step(&mut theta, &look, &mut v, lr, mu).unwrap();
        assert!((v[0] + 0.171).abs() < 1e-12);
        assert!((theta[0] - 0.729).abs() < 1e-12);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut theta = [1.0, -2.0, 0.5];
        let g = [0.3, -0.1, 2.0];
        let mut v = [0.0; 3];
        let expected: Vec<f64> = theta.iter().zip(&g).map(|(t, g)| t - 0.05 * g).collect();
        nesterov_step(&mut theta, &g, &mut v, 0.05, 0.0).unwrap();
        assert_eq!(theta.to_vec(), expected);
    }

    #[test]
    fn zero_gradients_keep_zero_velocity() {
        let mut state = OptState::new([3, 2]);
        let mut a = vec![1.0, 2.0, 3.0];
        let mut b = vec![4.0, 5.0];
        for _ in 0..5 {
            nesterov_update(
                [a.as_mut_slice(), b.as_mut_slice()],
                [[0.0; 3].as_slice(), [0.0; 2].as_slice()],
                &mut state,
                0.1,
                0.9,
            )
            .unwrap();
        }
        assert!(state.velocity.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(state.iteration, 5);
        assert_eq!(a, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = [0.0; 2];
        let mut v = [0.0; 2];
        assert!(nesterov_step(&mut p, &[0.0; 3], &mut v, 0.1, 0.9).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { decay: -1.0, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { val_fraction: 1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
