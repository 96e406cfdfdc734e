//! Temperature scaling with an input perturbation, applied in embedding space.

use alloc::vec::Vec;

use crate::nnet::{Classifier, LinearProbe};
use crate::numerics::{argmax, check_len, softmax};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OdinMode {
    /// Max softmax of the perturbed input.
    #[default]
    Perturbed,
    /// Increase of the max softmax caused by the perturbation.
    Difference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdinConfig {
    pub temperature: f64,
    pub epsilon: f64,
    pub mode: OdinMode,
}

impl Default for OdinConfig {
    fn default() -> Self {
        Self {
            temperature: 1000.0,
            epsilon: 0.0014,
            mode: OdinMode::Perturbed,
        }
    }
}

impl OdinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("ODIN temperature must be positive"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("ODIN epsilon must be non-negative"));
        }
        Ok(())
    }
}

fn scaled_softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    softmax(&scaled)
}

/// `∇ₓ log softmax(f(x)/T)_ŷ` for any classifier, via its input VJP.
pub fn log_softmax_input_grad<C: Classifier + ?Sized>(
    model: &C,
    x: &[f64],
    class: usize,
    temperature: f64,
) -> Result<Vec<f64>> {
    let probs = scaled_softmax(&model.logits(x)?, temperature)?;
    let out_grad: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(c, p)| ((c == class) as u8 as f64 - p) / temperature)
        .collect();
    model.input_vjp(x, &out_grad)
}

/// Closed form of [`log_softmax_input_grad`] for a linear probe:
/// `(W_ŷ − Σ_c S_c W_c) / T`.
pub fn linear_log_softmax_input_grad(
    probe: &LinearProbe,
    x: &[f64],
    class: usize,
    temperature: f64,
) -> Result<Vec<f64>> {
    let probs = scaled_softmax(&probe.logits(x)?, temperature)?;
    let w = probe.weights();
    let mut g = w.row(class).to_vec();
    for (c, &p) in probs.iter().enumerate() {
        for (gi, wi) in g.iter_mut().zip(w.row(c)) {
            *gi -= p * wi;
        }
    }
    g.iter_mut().for_each(|v| *v /= temperature);
    Ok(g)
}

pub fn score_odin<C: Classifier + ?Sized>(model: &C, x: &[f64], cfg: &OdinConfig) -> Result<f64> {
    check_len(model.input_dim(), x.len())?;
    let t = cfg.temperature;
    let clean = scaled_softmax(&model.logits(x)?, t)?;
    let predicted = argmax(&clean).ok_or(Error::Empty)?;
    let clean_max = clean[predicted];
    if cfg.epsilon == 0.0 && cfg.mode == OdinMode::Perturbed {
        return Ok(clean_max);
    }
    let grad = log_softmax_input_grad(model, x, predicted, t)?;
    let perturbed: Vec<f64> = x
        .iter()
        .zip(&grad)
        .map(|(xi, gi)| xi + cfg.epsilon * sign(*gi))
        .collect();
    let noisy = scaled_softmax(&model.logits(&perturbed)?, t)?;
    let noisy_max = noisy.into_iter().fold(0.0, f64::max);
    Ok(match cfg.mode {
        OdinMode::Perturbed => noisy_max,
        OdinMode::Difference => noisy_max - clean_max,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::score_maxsoftmax;
    use crate::nnet::Mlp;
    use crate::numerics::Matrix;
    use crate::rng::Rng;

    fn probe(rng: &mut Rng) -> LinearProbe {
        LinearProbe::new(Matrix::new(4, 6, rng.gaussian_vec(24)).unwrap(), rng.gaussian_vec(4)).unwrap()
    }

    #[test]
    fn zero_epsilon_is_scaled_maxsoftmax() {
        let mut rng = Rng::seed_from_u64(8);
        let p = probe(&mut rng);
        let x = rng.gaussian_vec(6);
        let cfg = OdinConfig { temperature: 3.0, epsilon: 0.0, mode: OdinMode::Perturbed };
        let scaled: Vec<f64> = p.logits(&x).unwrap().iter().map(|l| l / 3.0).collect();
        assert_eq!(score_odin(&p, &x, &cfg).unwrap(), score_maxsoftmax(&scaled).unwrap());
    }

    #[test]
    fn generic_and_closed_form_gradients_agree() {
        let mut rng = Rng::seed_from_u64(12);
        let p = probe(&mut rng);
        let mlp = Mlp::from_layers(alloc::vec![p.layer.clone()]).unwrap();
        let x = rng.gaussian_vec(6);
        let a = linear_log_softmax_input_grad(&p, &x, 2, 1.7).unwrap();
        let b = log_softmax_input_grad(&mlp, &x, 2, 1.7).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn default_setting_stays_in_range() {
        let mut rng = Rng::seed_from_u64(21);
        let p = probe(&mut rng);
        for _ in 0..20 {
            let x = rng.gaussian_vec(6);
            let s = score_odin(&p, &x, &OdinConfig::default()).unwrap();
            assert!(s > 0.25 && s <= 1.0);
        }
    }

    #[test]
    fn dimension_checked() {
        let mut rng = Rng::seed_from_u64(1);
        let p = probe(&mut rng);
        assert!(score_odin(&p, &[1.0], &OdinConfig::default()).is_err());
    }
}
