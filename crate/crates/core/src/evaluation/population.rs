use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protection::sample_key;
use crate::seed::{derive_seed, gaussian_vec, rng_from};
use crate::template::{group_normalize, groupwise_similarity, GroupLayout, GroupWeights, Template};

const BISECTION_STEPS: usize = 50;
/// Calibration stops early once within this relative distance of the target.
const EARLY_STOP: f64 = 1e-4;
/// A calibrated population must land within this relative distance.
const ACCEPT: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPopulation {
    pub identities: usize,
    pub samples_per_identity: usize,
    pub layout: GroupLayout,
    /// Target mean angle between samples of one identity, radians.
    pub intra_angle: f64,
    pub seed: u64,
}

impl Default for SyntheticPopulation {
    /// 50 identities with 4 samples each at 25°, default layout.
    fn default() -> Self {
        Self {
            identities: 50,
            samples_per_identity: 4,
            layout: GroupLayout::default(),
            intra_angle: 25f64.to_radians(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTemplate {
    pub label: String,
    pub identity: usize,
    pub template: Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub config: SyntheticPopulation,
    pub centers: Vec<Template>,
    pub samples: Vec<LabeledTemplate>,
    /// Per-coordinate noise level found by calibration.
    pub sigma: f64,
    /// Mean genuine angle of the generated samples, radians.
    pub mean_genuine_angle: f64,
}

impl Population {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn layout(&self) -> GroupLayout {
        self.config.layout
    }
}

/// Angle whose cosine is the uniform group-wise similarity.
pub fn template_angle(a: &Template, b: &Template) -> Result<f64> {
    let s = groupwise_similarity(a, b, &GroupWeights::uniform(a.layout().m()))?;
    Ok(s.clamp(-1.0, 1.0).acos())
}

fn perturb(centers: &[Template], noise: &[Vec<f64>], per_id: usize, sigma: f64) -> Result<Vec<Template>> {
    noise
        .par_iter()
        .enumerate()
        .map(|(i, z)| {
            let c = &centers[i / per_id];
            let v: Vec<f64> = c.values().iter().zip(z).map(|(x, n)| x + sigma * n).collect();
            group_normalize(&v, c.layout())
        })
        .collect()
}

fn mean_genuine_angle(samples: &[Template], per_id: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for block in samples.chunks(per_id) {
        for i in 0..block.len() {
            for j in i + 1..block.len() {
                sum += template_angle(&block[i], &block[j])?;
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Draws identity centers uniformly on each group sphere and perturbs them
/// with isotropic noise whose level is bisected to hit `intra_angle`.
///
/// The noise draws are fixed before calibration, so the angle is a
/// monotone function of the noise level and the final samples are exactly
/// the ones calibration measured.
pub fn generate_population(cfg: &SyntheticPopulation) -> Result<Population> {
    if cfg.identities < 2 {
        return Err(Error::InvalidArgument("at least 2 identities are required".into()));
    }
    if cfg.samples_per_identity == 0 {
        return Err(Error::InvalidArgument(
            "at least 1 sample per identity is required".into(),
        ));
    }
    if !(cfg.intra_angle >= 0.0 && cfg.intra_angle < std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidArgument(format!(
            "intra-class angle {} must lie in [0, π/2)",
            cfg.intra_angle
        )));
    }
    let layout = cfg.layout;
    let per_id = cfg.samples_per_identity;
    let centers: Vec<Template> = (0..cfg.identities)
        .map(|i| {
            sample_key(layout, derive_seed(derive_seed(cfg.seed, 1), i as u64))
                .template()
                .clone()
        })
        .collect();

    let labeled = |templates: Vec<Template>| -> Vec<LabeledTemplate> {
        templates
            .into_iter()
            .enumerate()
            .map(|(i, template)| LabeledTemplate {
                label: format!("id{:04}", i / per_id),
                identity: i / per_id,
                template,
            })
            .collect()
    };

    if cfg.intra_angle == 0.0 {
        let samples: Vec<Template> = centers
            .iter()
            .flat_map(|c| std::iter::repeat(c.clone()).take(per_id))
            .collect();
        return Ok(Population {
            config: *cfg,
            centers,
            samples: labeled(samples),
            sigma: 0.0,
            mean_genuine_angle: 0.0,
        });
    }

    // single-sample populations calibrate on a second, discarded sample
    let cal_per = per_id.max(2);
    let noise: Vec<Vec<f64>> = (0..cfg.identities * cal_per)
        .map(|i| {
            gaussian_vec(
                &mut rng_from(derive_seed(derive_seed(cfg.seed, 2), i as u64)),
                layout.d(),
            )
        })
        .collect();
    let target = cfg.intra_angle;
    let angle_at = |sigma: f64| -> Result<(f64, Vec<Template>)> {
        let s = perturb(&centers, &noise, cal_per, sigma)?;
        Ok((mean_genuine_angle(&s, cal_per)?, s))
    };

    let (mut lo, mut hi) = (0.0, 1.0 / (layout.group_dim() as f64).sqrt());
    let mut best: Option<(f64, f64, Vec<Template>)> = None;
    let mut bracketed = false;
    for _ in 0..BISECTION_STEPS {
        // double the upper end until it overshoots, then bisect
        let probe = if bracketed { 0.5 * (lo + hi) } else { hi };
        let (angle, samples) = angle_at(probe)?;
        if best
            .as_ref()
            .map_or(true, |(_, a, _)| (angle - target).abs() < (a - target).abs())
        {
            best = Some((probe, angle, samples));
        }
        if (angle - target).abs() <= EARLY_STOP * target {
            break;
        }
        if angle < target {
            lo = probe;
            if !bracketed {
                hi *= 2.0;
            }
        } else {
            hi = probe;
            bracketed = true;
        }
    }
    let (sigma, angle, samples) = best.expect("at least one bisection step");
    if (angle - target).abs() > ACCEPT * target {
        return Err(Error::CalibrationFailure(format!(
            "mean genuine angle {:.3}° after {BISECTION_STEPS} steps, target {:.3}°",
            angle.to_degrees(),
            target.to_degrees()
        )));
    }
    Ok(Population {
        config: *cfg,
        centers,
        samples: labeled(
            samples
                .into_iter()
                .enumerate()
                .filter(|(i, _)| i % cal_per < per_id)
                .map(|(_, t)| t)
                .collect(),
        ),
        sigma,
        mean_genuine_angle: angle,
    })
}
