use serde::{Deserialize, Serialize};

use super::{accuracy_sweep, unprotected_scores, Population};
use crate::error::{Error, Result};
use crate::protection::ProtectionParams;

/// The α grid of the standard ablation.
pub const ABLATION_ALPHAS: [f64; 6] = [0.0, 0.25, 0.5, 0.75, 0.9, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `None` for the unprotected baseline.
    pub alpha: Option<f64>,
    pub genuine_mean: f64,
    pub impostor_mean: f64,
    pub gap: f64,
    pub eer: f64,
}

/// Mean genuine and impostor scores per `α`, other parameters as given.
///
/// Every `α` reuses the same enrollment seed, so records keep their keys
/// and masks across the sweep and only the rotation amount changes. A
/// final row without `alpha` holds the unprotected baseline.
pub fn alpha_ablation(
    pop: &Population,
    alphas: &[f64],
    params: &ProtectionParams,
    impostor_pairs: usize,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    if let Some(a) = alphas.iter().find(|a| !(0.0..1.0).contains(*a)) {
        return Err(Error::InvalidParams(format!("alpha {a} outside [0, 1)")));
    }
    let mut rows = Vec::with_capacity(alphas.len() + 1);
    for &alpha in alphas {
        let p = ProtectionParams { alpha, ..*params };
        let r = accuracy_sweep(pop, &p, &[], impostor_pairs, seed)?;
        rows.push(AblationRow {
            alpha: Some(alpha),
            genuine_mean: r.scores.genuine_mean(),
            impostor_mean: r.scores.impostor_mean(),
            gap: r.scores.gap(),
            eer: r.eer.eer,
        });
    }
    let base = unprotected_scores(pop, impostor_pairs, seed)?;
    rows.push(AblationRow {
        alpha: None,
        genuine_mean: base.genuine_mean(),
        impostor_mean: base.impostor_mean(),
        gap: base.gap(),
        eer: base.eer()?.eer,
    });
    Ok(rows)
}
