//! Central finite-difference verification of [`loss_and_grads`].
//!
//! The numeric side only ever calls the forward [`loss`], so it shares no
//! code with the hand-written backward pass.

use serde::{Deserialize, Serialize};

use super::backward::{loss, loss_and_grads, TrainingExample};
use super::params::ModelParams;
use super::EncoderConfig;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// Central difference step.
    pub epsilon: f64,
    /// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            floor: 1e-6,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Largest analytic gradient magnitude seen, to show the tensor was live.
    pub max_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub pass: bool,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares every gradient coordinate with `(L(p + ε) - L(p - ε)) / 2ε`.
pub fn check_gradients(
    batch: &[TrainingExample],
    params: &ModelParams<f64>,
    config: &EncoderConfig,
    check: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grads(batch, params, config)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, m.as_slice().to_vec()))
        .collect();
    let mut probe = params.clone();
    let mut tensors = Vec::with_capacity(analytic.len());
    for (t, (name, grad)) in analytic.iter().enumerate() {
        let mut worst = TensorCheck {
            name: name.clone(),
            coordinates: grad.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            max_grad: 0.0,
        };
        for (k, &a) in grad.iter().enumerate() {
            let original = probe.tensors()[t].1.as_slice()[k];
            let eval = |value: f64, probe: &mut ModelParams<f64>| -> Result<f64> {
                probe.tensors_mut()[t].1.as_mut_slice()[k] = value;
                loss(batch, probe, config)
            };
            let plus = eval(original + check.epsilon, &mut probe)?;
            let minus = eval(original - check.epsilon, &mut probe)?;
            probe.tensors_mut()[t].1.as_mut_slice()[k] = original;
            let numeric = (plus - minus) / (2.0 * check.epsilon);
            worst.max_abs_err = worst.max_abs_err.max((a - numeric).abs());
            worst.max_rel_err = worst.max_rel_err.max(relative_error(a, numeric, check.floor));
            worst.max_grad = worst.max_grad.max(a.abs());
        }
        tensors.push(worst);
    }
    let max_rel_err = tensors.iter().fold(0.0f64, |m, t| m.max(t.max_rel_err));
    Ok(GradCheckReport {
        tensors,
        max_rel_err,
        pass: max_rel_err < check.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::BiasMode;
    use crate::linearize::PositionalScheme;
    use crate::table::{CellCoord, Table, TableTextPair};

    fn covering_batch(config: &EncoderConfig) -> Vec<TrainingExample> {
        // Multi-token cells and headers, two rows and two columns: every one
        // of the thirteen relation types occurs.
        let table = Table::from_strs(
            &["song title", "length"],
            &[&["screwed up", "5:02"], &["ghetto queen", "5:00"]],
        )
        .unwrap();
        let pair = TableTextPair::new("longest song?", table, [CellCoord::new(0, 1)]).unwrap();
        vec![TrainingExample::prepare(&pair, config).unwrap()]
    }

    #[test]
    fn small_model_passes() {
        for (scheme, mode) in [
            (PositionalScheme::Pcp, BiasMode::BiasAfterScale),
            (PositionalScheme::Pcp, BiasMode::BiasBeforeScale),
            (PositionalScheme::RcGp, BiasMode::Mask),
        ] {
            let mut config = EncoderConfig::new(2, 2, 8)
                .with_vocab(32, 20)
                .with_scheme(scheme)
                .with_bias_mode(mode);
            // Large weights keep the attention gradients well above the floor.
            config.init_std = 0.5;
            let mut params = ModelParams::<f64>::init(&config, 11).unwrap();
            params.randomize_bias_scalars(12, 0.5);
            let batch = covering_batch(&config);
            let report = check_gradients(&batch, &params, &config, &GradCheckConfig::default()).unwrap();
            assert!(report.pass, "{scheme}/{mode}: {}", report.max_rel_err);
        }
    }
}
