//! Projected gradient descent on the cross-entropy loss, white-box against
//! a supplied model. The perturbation budget is scaled against the [0, 1]
//! pixel range: the effective budget is `scale * epsilon`.

use crate::error::CoreError;
use crate::model::ModelSpec;
use crate::nn::{self, Targets};
use crate::params::ParamVector;
use crate::tensor::Tensor;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttackConfig {
    /// L-inf budget as a fraction of the [0, 1] pixel range.
    pub epsilon: f32,
    /// Budget scale against the upper limit 1.0; the applied bound is
    /// `scale * epsilon`.
    pub scale: f32,
    pub steps: usize,
    /// Per-step size; defaults to a quarter of the effective budget.
    pub step_size: Option<f32>,
}

impl AttackConfig {
    pub fn new(epsilon: f32) -> Self {
        AttackConfig { epsilon, scale: 0.4, steps: 10, step_size: None }
    }

    /// The applied L-inf bound.
    pub fn effective_epsilon(&self) -> f32 {
        self.scale * self.epsilon
    }

    pub fn step(&self) -> f32 {
        self.step_size.unwrap_or(self.effective_epsilon() / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(CoreError::InvalidParameter(format!(
                "attack epsilon {} not in [0,1]",
                self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(CoreError::InvalidParameter("attack needs at least 1 step".into()));
        }
        if let Some(s) = self.step_size {
            if s > self.epsilon {
                return Err(CoreError::InvalidParameter(format!(
                    "step size {s} exceeds epsilon {}",
                    self.epsilon
                )));
            }
        }
        Ok(())
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig::new(1.0)
    }
}

/// Iterated sign-gradient ascent on the cross-entropy, projected onto the
/// L-inf ball of radius `scale * epsilon` around the input and clipped to
/// [0, 1]. Deterministic: no random start.
pub fn pgd_attack(
    model: &ModelSpec,
    params: &ParamVector<f32>,
    batch: &Tensor<f32>,
    labels: &[u16],
    cfg: &AttackConfig,
) -> Result<Tensor<f32>> {
    cfg.validate()?;
    if batch.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(CoreError::InvalidParameter(
            "pgd_attack expects normalized inputs in [0,1]".into(),
        ));
    }
    let eps = cfg.effective_epsilon();
    let step = cfg.step();
    let mut adv = batch.clone();
    for _ in 0..cfg.steps {
        let (_, grad) =
            nn::backward_with_input_grad(model, params, &adv, Targets::Hard(labels), 0)?;
        grad.err_if_not_finite("pgd input gradient")?;
        for ((a, &g), &x0) in adv.data_mut().iter_mut().zip(grad.data()).zip(batch.data()) {
            let stepped = *a + step * sign(g);
            *a = stepped.clamp(x0 - eps, x0 + eps).clamp(0.0, 1.0);
        }
    }
    Ok(adv)
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Largest absolute pixel delta between two batches.
pub fn linf_delta(a: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputShape, ModelSpec};

    fn setup() -> (ModelSpec, ParamVector<f32>, Tensor<f32>, Vec<u16>) {
        let spec = ModelSpec::dense(vec![8], InputShape::Flat { features: 6 }, 3).unwrap();
        let params = spec.init_params::<f32>(5);
        let data: Vec<f32> = (0..24).map(|i| (i as f32 * 0.613) % 1.0).collect();
        let batch = Tensor::new(vec![4, 6], data).unwrap();
        (spec, params, batch, vec![0, 1, 2, 0])
    }

    #[test]
    fn zero_epsilon_leaves_batch_unchanged() {
        let (spec, params, batch, labels) = setup();
        let cfg = AttackConfig::new(0.0);
        let adv = pgd_attack(&spec, &params, &batch, &labels, &cfg).unwrap();
        assert_eq!(adv, batch);
    }

    #[test]
    fn linf_bound_holds_exactly() {
        let (spec, params, batch, labels) = setup();
        let cfg = AttackConfig::new(0.3);
        let adv = pgd_attack(&spec, &params, &batch, &labels, &cfg).unwrap();
        let bound = cfg.effective_epsilon();
        assert!(linf_delta(&adv, &batch) <= bound);
        assert!(adv.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn attack_does_not_decrease_loss() {
        let (spec, params, batch, labels) = setup();
        let cfg = AttackConfig::new(0.5);
        let adv = pgd_attack(&spec, &params, &batch, &labels, &cfg).unwrap();
        let clean = nn::cross_entropy(&nn::forward(&spec, &params, &batch).unwrap(), &labels).unwrap();
        let attacked = nn::cross_entropy(&nn::forward(&spec, &params, &adv).unwrap(), &labels).unwrap();
        assert!(attacked >= clean, "{attacked} < {clean}");
    }

    #[test]
    fn rejects_unnormalized_inputs() {
        let (spec, params, _, labels) = setup();
        let batch = Tensor::new(vec![4, 6], vec![2.0; 24]).unwrap();
        assert!(pgd_attack(&spec, &params, &batch, &labels, &AttackConfig::default()).is_err());
    }
}
