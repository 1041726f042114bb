//! Inversion attacks on protected templates.
//!
//! Given a protected group `p`, its key `k` and `α`, the kept coordinates
//! satisfy `σ·pᵢ = a(θ)·tᵢ + b(θ)·kᵢ` with `a = sin((1-α)θ)/sin θ` and
//! `b = sin(αθ)/sin θ`. Here `θ = ∠(t, k)` and `σ` is the norm the kept
//! block had before it was re-normalized. For a fixed `θ` this is linear
//! in `t`, so the attack is a scalar Newton iteration on `θ`:
//!
//! * every attempt draws a starting `θ` and a fill for the dropped
//!   coordinates (i.i.d. normal with variance `1/group_dim`);
//! * for each `θ`, `σ` is solved in closed form so the estimate
//!   `t̂ = [(σp − b·k)/a ; fill]` has unit norm (without dropout `σ = 1`
//!   and `t̂` is not renormalized);
//! * the residual `f(θ) = ∠(t̂, k) − θ` is driven to zero with a
//!   forward-difference derivative, iterates projected into `(0, π)`;
//! * a root only counts if re-protecting `t̂` reproduces `p`. Otherwise the
//!   attempt is rerun with a fresh initialization.
//!
//! Without dropout there is no fill and `σ = 1`, which makes the system
//! full rank and the recovery exact.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::EnrollmentRecord;
use crate::protection::{apply_mask, random_dropout_mask, sample_key, slerp, slerp_coefficients, DropoutMask};
use crate::seed::{derive_seed, rng_from};
use crate::stats;
use crate::template::{groupwise_similarity, included_angle, normalize_in_place, GroupLayout, GroupWeights, Template};

const THETA_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NRConfig {
    pub max_iterations: usize,
    /// Stop once `|f(θ)|` falls below this many radians.
    pub residual_tolerance: f64,
    pub max_reruns: usize,
    pub init_seed: u64,
    /// Max-abs tolerance when re-protecting an estimate to check it against `p`.
    pub consistency_tolerance: f64,
    /// Finite-difference step for `f'(θ)`, radians.
    pub derivative_step: f64,
}

impl Default for NRConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            residual_tolerance: 1e-6,
            max_reruns: 10_000,
            init_seed: 0,
            consistency_tolerance: 1e-4,
            derivative_step: 1e-6,
        }
    }
}

impl NRConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.max_reruns == 0 {
            return Err(Error::InvalidArgument(
                "iteration and rerun limits must be at least 1".into(),
            ));
        }
        let positive = [
            self.residual_tolerance,
            self.consistency_tolerance,
            self.derivative_step,
        ];
        if positive.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    /// Attempts consumed, counting the successful one.
    pub reruns_used: usize,
    pub converged: bool,
    pub recovered: Option<Vec<f64>>,
    /// Angle between the estimate and the key.
    pub theta_estimate: Option<f64>,
    /// `|∠(t̃, k) − ∠(t, k)|`; only with ground truth.
    pub delta_theta: Option<f64>,
}

/// Scalars of one group that the residual depends on.
struct Group<'a> {
    p: &'a [f64],
    k: &'a [f64],
    kept: &'a [bool],
    alpha: f64,
    pk: f64,
    pp: f64,
    kk: f64,
    has_drop: bool,
}

/// The estimate at a given `θ`, in closed form.
#[derive(Clone, Copy)]
struct Estimate {
    sigma: f64,
    a: f64,
    b: f64,
    cos_to_key: f64,
}

impl<'a> Group<'a> {
    fn new(p: &'a [f64], k: &'a [f64], kept: &'a [bool], alpha: f64) -> Self {
        let (mut pk, mut pp, mut kk) = (0.0, 0.0, 0.0);
        for ((x, y), keep) in p.iter().zip(k).zip(kept) {
            if *keep {
                pk += x * y;
                pp += x * x;
                kk += y * y;
            }
        }
        Self {
            p,
            k,
            kept,
            alpha,
            pk,
            pp,
            kk,
            has_drop: kept.iter().any(|x| !x),
        }
    }

    /// `z2 = |fill|²`, `zk = fill · k` over the dropped coordinates.
    fn estimate(&self, theta: f64, z2: f64, zk: f64) -> Option<Estimate> {
        let (a, b) = slerp_coefficients(theta, self.alpha)?;
        let sigma = if self.has_drop {
            // |σp − b·k|² = a²(1 − z2) on the kept block
            let rhs = a * a * (1.0 - z2);
            let disc = b * b * self.pk * self.pk - self.pp * (b * b * self.kk - rhs);
            if disc < 0.0 {
                return None;
            }
            let root = disc.sqrt();
            let hi = (b * self.pk + root) / self.pp;
            let lo = (b * self.pk - root) / self.pp;
            // the pre-renormalization norm of the kept block lies in (0, 1]
            if hi > 0.0 && hi <= 1.0 + 1e-12 {
                hi
            } else if lo > 0.0 && lo <= 1.0 + 1e-12 {
                lo
            } else {
                return None;
            }
        } else {
            1.0
        };
        let kept_sq = (sigma * sigma * self.pp - 2.0 * sigma * b * self.pk + b * b * self.kk) / (a * a);
        let kept_dot = (sigma * self.pk - b * self.kk) / a;
        // Without dropout the norm equation is what pins θ down, so the
        // estimate is deliberately left unnormalized; with dropout σ already
        // made it unit and the division only absorbs rounding.
        let norm = if self.has_drop { (kept_sq + z2).sqrt() } else { 1.0 };
        if norm.is_nan() || norm <= 0.0 {
            return None;
        }
        Some(Estimate {
            sigma,
            a,
            b,
            cos_to_key: ((kept_dot + zk) / norm).clamp(-1.0, 1.0),
        })
    }

    fn residual(&self, theta: f64, z2: f64, zk: f64) -> Option<f64> {
        let e = self.estimate(theta, z2, zk)?;
        Some(e.cos_to_key.acos() - theta)
    }

    fn materialize(&self, e: &Estimate, fill: &[f64]) -> Option<Vec<f64>> {
        let mut t: Vec<f64> = self
            .p
            .iter()
            .zip(self.k)
            .zip(self.kept)
            .zip(fill)
            .map(|(((p, k), keep), z)| if *keep { (e.sigma * p - e.b * k) / e.a } else { *z })
            .collect();
        normalize_in_place(&mut t)?;
        Some(t)
    }

    /// Re-protects an estimate and compares it to the published group.
    fn consistent(&self, t: &[f64], tol: f64) -> bool {
        let Ok(rotated) = slerp(t, self.k, self.alpha) else {
            return false;
        };
        let layout = match GroupLayout::whole(t.len()) {
            Ok(l) => l,
            Err(_) => return false,
        };
        let (Ok(rt), Ok(mask)) = (
            Template::from_raw(rotated, layout),
            DropoutMask::from_kept(self.kept.to_vec(), layout),
        ) else {
            return false;
        };
        match apply_mask(&rt, &mask) {
            Ok(q) => q.values().iter().zip(self.p).all(|(x, y)| (x - y).abs() <= tol),
            Err(_) => false,
        }
    }
}

fn newton(group: &Group<'_>, theta0: f64, z2: f64, zk: f64, cfg: &NRConfig) -> Option<f64> {
    let lo = THETA_MARGIN;
    let hi = PI - THETA_MARGIN;
    let h = cfg.derivative_step;
    let mut theta = theta0;
    for _ in 0..cfg.max_iterations {
        let f = group.residual(theta, z2, zk)?;
        if f.abs() < cfg.residual_tolerance {
            return Some(theta);
        }
        let df = match group.residual(theta + h, z2, zk) {
            Some(f2) => (f2 - f) / h,
            None => (f - group.residual(theta - h, z2, zk)?) / h,
        };
        if df == 0.0 || !df.is_finite() {
            return None;
        }
        theta = (theta - f / df).clamp(lo, hi);
    }
    None
}

fn check_group_inputs(p: &[f64], k: &[f64], alpha: f64, kept: &[bool]) -> Result<()> {
    if p.len() < 2 {
        return Err(Error::InvalidArgument("group dimension must be at least 2".into()));
    }
    if k.len() != p.len() || kept.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: if k.len() != p.len() { k.len() } else { kept.len() },
        });
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParams(format!("alpha {alpha} outside [0, 1)")));
    }
    if kept.iter().all(|x| !x) {
        return Err(Error::ZeroGroup { group: 0 });
    }
    Ok(())
}

/// Newton–Raphson recovery of one group from `(p, k, α, mask)`.
///
/// `truth`, when given, is only used to fill in `delta_theta`.
pub fn nr_invert_group(
    p_group: &[f64],
    k_group: &[f64],
    alpha: f64,
    mask_group: &[bool],
    cfg: &NRConfig,
    truth: Option<&[f64]>,
) -> Result<AttackReport> {
    cfg.validate()?;
    check_group_inputs(p_group, k_group, alpha, mask_group)?;
    let group = Group::new(p_group, k_group, mask_group, alpha);
    let scale = 1.0 / (p_group.len() as f64).sqrt();
    let mut rng = rng_from(cfg.init_seed);
    let mut fill = vec![0.0; p_group.len()];

    for attempt in 1..=cfg.max_reruns {
        let mut z2 = 0.0;
        let mut zk = 0.0;
        for ((z, keep), k) in fill.iter_mut().zip(mask_group).zip(k_group) {
            *z = if *keep {
                0.0
            } else {
                let v: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * scale;
                z2 += v * v;
                zk += v * k;
                v
            };
        }
        let theta0 = rng.random_range(THETA_MARGIN..PI - THETA_MARGIN);
        if z2 >= 1.0 {
            continue;
        }
        let Some(theta) = newton(&group, theta0, z2, zk, cfg) else {
            continue;
        };
        let Some(est) = group.estimate(theta, z2, zk) else {
            continue;
        };
        let Some(t) = group.materialize(&est, &fill) else {
            continue;
        };
        if !group.consistent(&t, cfg.consistency_tolerance) {
            continue;
        }
        let theta_estimate = included_angle(&t, k_group)?;
        let delta_theta = match truth {
            Some(truth) => Some((theta_estimate - included_angle(truth, k_group)?).abs()),
            None => None,
        };
        return Ok(AttackReport {
            reruns_used: attempt,
            converged: true,
            recovered: Some(t),
            theta_estimate: Some(theta_estimate),
            delta_theta,
        });
    }
    Ok(AttackReport {
        reruns_used: cfg.max_reruns,
        converged: false,
        recovered: None,
        theta_estimate: None,
        delta_theta: None,
    })
}

/// Seed of the attack on group `i`; group 0 uses the configured seed.
fn group_seed(base: u64, group: usize) -> u64 {
    base.wrapping_add((group as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullAttackReport {
    pub groups: Vec<AttackReport>,
    /// Every group converged within its rerun budget.
    pub converged: bool,
    pub total_reruns: usize,
    pub mean_reruns: f64,
    /// `log10 Πᵢ rerunsᵢ`: attempts needed to hit all groups in one go.
    pub log10_product_cost: f64,
    /// `log10 r̄ᵐ` with `r̄` the mean per-group reruns.
    pub log10_mean_cost: f64,
    pub recovered: Option<Template>,
    pub cosine_to_truth: Option<f64>,
}

/// Attacks every group of a record independently.
pub fn full_template_attack(
    rec: &EnrollmentRecord,
    alpha: f64,
    cfg: &NRConfig,
    truth: Option<&Template>,
) -> Result<FullAttackReport> {
    let layout = rec.protected.layout();
    if let Some(t) = truth {
        layout.check_same(&t.layout())?;
    }
    let p = rec.protected.template();
    let k = rec.key.template();
    let kept = rec.protected.mask().kept();
    let groups = (0..layout.m())
        .into_par_iter()
        .map(|i| {
            let range = layout.group_range(i);
            let group_cfg = NRConfig {
                init_seed: group_seed(cfg.init_seed, i),
                ..*cfg
            };
            nr_invert_group(
                p.group(i),
                k.group(i),
                alpha,
                &kept[range],
                &group_cfg,
                truth.map(|t| t.group(i)),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let converged = groups.iter().all(|g| g.converged);
    let total_reruns: usize = groups.iter().map(|g| g.reruns_used).sum();
    let mean_reruns = total_reruns as f64 / groups.len() as f64;
    let log10_product_cost = groups.iter().map(|g| (g.reruns_used as f64).log10()).sum();
    let log10_mean_cost = layout.m() as f64 * mean_reruns.log10();
    let recovered = if converged {
        let values: Vec<f64> = groups
            .iter()
            .flat_map(|g| g.recovered.clone().unwrap_or_default())
            .collect();
        Some(Template::from_raw(values, layout)?)
    } else {
        None
    };
    let cosine_to_truth = match (&recovered, truth) {
        (Some(r), Some(t)) => Some(groupwise_similarity(r, t, &GroupWeights::uniform(layout.m()))?),
        _ => None,
    };
    Ok(FullAttackReport {
        groups,
        converged,
        total_reruns,
        mean_reruns,
        log10_product_cost,
        log10_mean_cost,
        recovered,
        cosine_to_truth,
    })
}

/// One trial of the Δθ experiment, as written to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub d: usize,
    pub beta: f64,
    pub trial: usize,
    pub reruns: usize,
    pub converged: bool,
    pub delta_theta_rad: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaThetaRow {
    pub d: usize,
    pub beta: f64,
    pub trials: usize,
    pub converged: usize,
    pub censored: usize,
    pub mean_reruns: f64,
    pub min: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaThetaStudy {
    pub rows: Vec<DeltaThetaRow>,
    pub trials: Vec<TrialRecord>,
}

/// Inverts one synthetic single-group template of dimension `d`.
pub fn attack_random_group(d: usize, alpha: f64, beta: f64, seed: u64, cfg: &NRConfig) -> Result<AttackReport> {
    let layout = GroupLayout::whole(d)?;
    let t = sample_key(layout, derive_seed(seed, 1));
    let k = sample_key(layout, derive_seed(seed, 2));
    let rotated = Template::from_raw(slerp(t.values(), k.values(), alpha)?, layout)?;
    let mask = random_dropout_mask(layout, beta, derive_seed(seed, 3))?;
    let p = apply_mask(&rotated, &mask)?;
    let group_cfg = NRConfig {
        init_seed: derive_seed(seed, 4),
        ..*cfg
    };
    nr_invert_group(p.values(), k.values(), alpha, mask.kept(), &group_cfg, Some(t.values()))
}

/// Δθ of the first accepted estimate versus template dimension.
///
/// Non-converged trials are censored: counted, but left out of the
/// quantiles.
pub fn delta_theta_experiment(
    d_values: &[usize],
    beta: f64,
    trials: usize,
    seed: u64,
    alpha: f64,
    cfg: &NRConfig,
) -> Result<DeltaThetaStudy> {
    if trials < 100 {
        return Err(Error::InvalidArgument(
            "at least 100 trials per dimension are required".into(),
        ));
    }
    if let Some(d) = d_values.iter().find(|d| **d < 2 || **d % 2 != 0) {
        return Err(Error::InvalidArgument(format!(
            "dimension {d} must be even and at least 2"
        )));
    }
    let mut rows = Vec::with_capacity(d_values.len());
    let mut records = Vec::with_capacity(d_values.len() * trials);
    for &d in d_values {
        let reports = (0..trials)
            .into_par_iter()
            .map(|trial| attack_random_group(d, alpha, beta, derive_seed(seed, (d as u64) << 32 | trial as u64), cfg))
            .collect::<Result<Vec<_>>>()?;
        let deltas: Vec<f64> = reports.iter().filter_map(|r| r.delta_theta).collect();
        let sorted = stats::sorted(&deltas);
        rows.push(DeltaThetaRow {
            d,
            beta,
            trials,
            converged: deltas.len(),
            censored: trials - deltas.len(),
            mean_reruns: reports.iter().map(|r| r.reruns_used as f64).sum::<f64>() / trials as f64,
            min: sorted.first().copied(),
            median: stats::quantile_sorted(&sorted, 0.5),
            max: sorted.last().copied(),
        });
        records.extend(reports.into_iter().enumerate().map(|(trial, r)| TrialRecord {
            d,
            beta,
            trial,
            reruns: r.reruns_used,
            converged: r.converged,
            delta_theta_rad: r.delta_theta,
        }));
    }
    Ok(DeltaThetaStudy { rows, trials: records })
}

/// Reconstructs `p` from an estimate: `a(θ̃)·t̃ + b(θ̃)·k` with `θ̃ = ∠(t̃, k)`.
pub fn reproject(t: &[f64], k: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let theta = included_angle(t, k)?;
    let (a, b) = slerp_coefficients(theta, alpha).ok_or(Error::DegenerateAngle { group: 0 })?;
    Ok(t.iter().zip(k).map(|(x, y)| a * x + b * y).collect())
}
