//! Layer-wise leakage metrics: usable information and gradient sensitivity.

mod family;
mod predictor;
mod sensitivity;
mod vinfo;

pub use family::{FamilyKind, PredictiveFamily, Reducer};
pub use predictor::{clamp_prob, cross_entropy, train_predictor, Predictor, PropertySample, PROB_FLOOR};
pub use sensitivity::{
    jacobian_of_gradients, normalized_sensitivity_profile, sensitivity, sensitivity_norms, JacobianResult, Norm,
    OutputSide, SensitivityResult, RANGE_EPSILON,
};
pub use vinfo::{null_entropy, v_information, v_information_split, EvalMode, VInfo, VInfoOptions};

use serde::{Deserialize, Serialize};

/// One row of a metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub layer_index: usize,
    pub layer_kind: String,
    pub metric_name: String,
    pub norm: String,
    pub value: f64,
    pub num_samples: usize,
    pub skipped_degenerate: usize,
    pub family: String,
    pub seed: u64,
}

/// Writes metric rows with a header line.
pub fn write_metric_csv<W: std::io::Write>(rows: &[MetricRow], out: W) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| crate::Error::io("metric csv", e))?;
    Ok(())
}
