use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::augment::AugmentedDataset;
use super::train::{evaluate, train, EpochMetrics, TrainConfig};
use crate::encoder::{EncoderConfig, Model};
use crate::error::Result;
use crate::relations::BiasTypeId;
use crate::table::TableTextPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub ablated_types: Vec<BiasTypeId>,
    pub eval_accuracy: f64,
    pub final_train_loss: f64,
    pub trace: Vec<EpochMetrics>,
}

/// Full model against the same model with some relation types folded into
/// OTHERS, trained from the same initial parameters on the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub full: ArmResult,
    pub ablated: ArmResult,
    /// `100 * (full - ablated)` eval accuracy.
    pub drop_points: f64,
}

impl AblationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:>9} {:>11}", "model", "accuracy", "train loss");
        for arm in [&self.full, &self.ablated] {
            let label = if arm.ablated_types.is_empty() {
                "full".to_string()
            } else {
                let names: Vec<&str> = arm.ablated_types.iter().map(|t| t.name()).collect();
                format!("- {}", names.join(", "))
            };
            let _ = writeln!(
                s,
                "{label:<28} {:>8.1}% {:>11.4}",
                100.0 * arm.eval_accuracy,
                arm.final_train_loss
            );
        }
        let _ = writeln!(s, "drop: {:.1} points", self.drop_points);
        s
    }
}

fn run_arm(
    config: EncoderConfig,
    init_seed: u64,
    data: &AugmentedDataset,
    eval: &[TableTextPair],
    train_config: &TrainConfig,
) -> Result<ArmResult> {
    let ablated_types = config.ablated_types.iter().copied().collect();
    let model = Model::<f64>::new(config, init_seed)?;
    let out = train(model, data, &[], train_config)?;
    Ok(ArmResult {
        ablated_types,
        eval_accuracy: evaluate(&out.model, eval)?.accuracy,
        final_train_loss: out.trace.last().map_or(f64::NAN, |m| m.train_loss),
        trace: out.trace,
    })
}

pub fn compare_ablation(
    config: &EncoderConfig,
    types: &BTreeSet<BiasTypeId>,
    data: &AugmentedDataset,
    eval: &[TableTextPair],
    train_config: &TrainConfig,
    init_seed: u64,
) -> Result<AblationReport> {
    let mut full_config = config.clone();
    full_config.ablated_types.clear();
    let ablated_config = full_config.clone().with_ablation(types.iter().copied());
    ablated_config.validate()?;
    let full = run_arm(full_config, init_seed, data, eval, train_config)?;
    let ablated = run_arm(ablated_config, init_seed, data, eval, train_config)?;
    Ok(AblationReport {
        drop_points: 100.0 * (full.eval_accuracy - ablated.eval_accuracy),
        full,
        ablated,
    })
}
