//! The protection transform: every group of a template is rotated along the
//! great circle toward a per-sample random key, then a share of its
//! coordinates is dropped and the survivors re-normalized.

use rand::seq::index;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::{self, derive_seed, gaussian_vec, rng_from};
use crate::template::{dot, group_normalize, included_angle, normalize_in_place, GroupLayout, GroupWeights, Template};

/// Below this `sin θ` a template and its key are treated as (anti)parallel.
pub const DEGENERATE_SIN: f64 = 1e-9;

/// Number of fresh keys tried after the first one hits a degenerate angle.
pub const KEY_RESAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DropoutMode {
    /// Every group drops the same number of uniformly chosen coordinates.
    Random,
    /// Groups with higher weight drop fewer coordinates.
    Weighted,
}

impl DropoutMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DropoutMode::Random => "random",
            DropoutMode::Weighted => "weighted",
        }
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            DropoutMode::Random => 0,
            DropoutMode::Weighted => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DropoutMode::Random),
            1 => Some(DropoutMode::Weighted),
            _ => None,
        }
    }
}

impl std::str::FromStr for DropoutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(DropoutMode::Random),
            "weighted" => Ok(DropoutMode::Weighted),
            other => Err(Error::InvalidArgument(format!("unknown dropout mode `{other}`"))),
        }
    }
}

/// Configuration of the transform.
///
/// `rng_seed` is the base seed from which callers derive per-record seeds;
/// it is not part of the parameter fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtectionParams {
    pub alpha: f64,
    pub beta: f64,
    pub layout: GroupLayout,
    pub dropout_mode: DropoutMode,
    pub rng_seed: u64,
}

impl Default for ProtectionParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 0.5,
            layout: GroupLayout::default(),
            dropout_mode: DropoutMode::Random,
            rng_seed: 0,
        }
    }
}

impl ProtectionParams {
    pub fn new(alpha: f64, beta: f64, layout: GroupLayout, dropout_mode: DropoutMode) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            layout,
            dropout_mode,
            rng_seed: 0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidParams(format!("alpha {} outside [0, 1)", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidParams(format!("beta {} outside [0, 1)", self.beta)));
        }
        let g = self.layout.group_dim();
        match self.dropout_mode {
            DropoutMode::Random => {
                let drop = drop_count(self.beta, g);
                if drop > g - 1 {
                    return Err(Error::BudgetTooLarge { drop, group_dim: g });
                }
            }
            DropoutMode::Weighted => {
                let budget = drop_count(self.beta, self.layout.d());
                let capacity = self.layout.m() * (g - 1);
                if budget > capacity {
                    return Err(Error::InfeasibleBudget { budget, capacity });
                }
            }
        }
        Ok(())
    }

    /// Stable hash of everything that affects how templates are transformed
    /// and compared. Seeds are excluded.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"slerpshield-params-v1");
        h.update((self.layout.d() as u64).to_le_bytes());
        h.update((self.layout.m() as u64).to_le_bytes());
        h.update(self.alpha.to_bits().to_le_bytes());
        h.update(self.beta.to_bits().to_le_bytes());
        h.update([self.dropout_mode.code()]);
        let digest = h.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }
}

/// `floor(ratio · n)`, tolerant of representation error such as `0.3 · 10`.
pub fn drop_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 1e-9).floor().max(0.0) as usize
}

/// Random rotation target: a group-normalized Gaussian vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyTemplate(Template);

impl KeyTemplate {
    pub fn from_template(t: Template) -> Self {
        KeyTemplate(t)
    }

    /// Group-normalizes `values` into a key.
    pub fn from_values(values: &[f64], layout: GroupLayout) -> Result<Self> {
        Ok(KeyTemplate(group_normalize(values, layout)?))
    }

    /// Takes already normalized key values as they are, e.g. from
    /// storage, rejecting groups that are off the unit sphere by more
    /// than `tol`.
    pub fn from_normalized(values: Vec<f64>, layout: GroupLayout, tol: f64) -> Result<Self> {
        let t = Template::from_raw(values, layout)?;
        if let Some(group) = t.groups().position(|g| (dot(g, g).sqrt() - 1.0).abs() > tol) {
            return Err(Error::InvalidArgument(format!("key group {group} is not unit norm")));
        }
        Ok(KeyTemplate(t))
    }

    pub fn template(&self) -> &Template {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn layout(&self) -> GroupLayout {
        self.0.layout()
    }
}

/// Which coordinates survive dropout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropoutMask {
    kept: Vec<bool>,
    per_group_drop_counts: Vec<usize>,
}

impl DropoutMask {
    /// Mask that keeps everything.
    pub fn full(layout: GroupLayout) -> Self {
        Self {
            kept: vec![true; layout.d()],
            per_group_drop_counts: vec![0; layout.m()],
        }
    }

    pub fn from_kept(kept: Vec<bool>, layout: GroupLayout) -> Result<Self> {
        if kept.len() != layout.d() {
            return Err(Error::DimensionMismatch {
                expected: layout.d(),
                actual: kept.len(),
            });
        }
        let g = layout.group_dim();
        let per_group_drop_counts: Vec<usize> = kept
            .chunks_exact(g)
            .map(|c| c.iter().filter(|k| !**k).count())
            .collect();
        if let Some(group) = per_group_drop_counts.iter().position(|&c| c == g) {
            return Err(Error::ZeroGroup { group });
        }
        Ok(Self {
            kept,
            per_group_drop_counts,
        })
    }

    fn from_counts<R: rand::Rng>(layout: GroupLayout, counts: &[usize], rng: &mut R) -> Self {
        let g = layout.group_dim();
        let mut kept = vec![true; layout.d()];
        for (i, &c) in counts.iter().enumerate() {
            let base = i * g;
            for j in index::sample(rng, g, c) {
                kept[base + j] = false;
            }
        }
        Self {
            kept,
            per_group_drop_counts: counts.to_vec(),
        }
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn per_group_drop_counts(&self) -> &[usize] {
        &self.per_group_drop_counts
    }

    pub fn total_dropped(&self) -> usize {
        self.per_group_drop_counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

/// Shareable protected form of a template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedTemplate {
    template: Template,
    mask: DropoutMask,
    weights: GroupWeights,
    params_fingerprint: u64,
}

impl ProtectedTemplate {
    /// Reassembles a protected template from stored parts, checking that
    /// dropped coordinates are zero and kept ones are group-normalized.
    pub fn from_parts(
        values: Vec<f64>,
        mask: DropoutMask,
        weights: GroupWeights,
        layout: GroupLayout,
        params_fingerprint: u64,
    ) -> Result<Self> {
        let template = Template::from_raw(values, layout)?;
        if mask.len() != layout.d() {
            return Err(Error::DimensionMismatch {
                expected: layout.d(),
                actual: mask.len(),
            });
        }
        weights.check_layout(&layout)?;
        let p = Self {
            template,
            mask,
            weights,
            params_fingerprint,
        };
        if !p.satisfies_invariants(1e-6) {
            return Err(Error::Format(
                "protected values are inconsistent with their dropout mask".into(),
            ));
        }
        Ok(p)
    }

    pub fn template(&self) -> &Template {
        &self.template
    }

    pub fn values(&self) -> &[f64] {
        self.template.values()
    }

    pub fn layout(&self) -> GroupLayout {
        self.template.layout()
    }

    pub fn mask(&self) -> &DropoutMask {
        &self.mask
    }

    pub fn weights(&self) -> &GroupWeights {
        &self.weights
    }

    pub fn params_fingerprint(&self) -> u64 {
        self.params_fingerprint
    }

    /// Dropped coordinates are exactly zero and every group has unit norm.
    pub fn satisfies_invariants(&self, tol: f64) -> bool {
        let zeros = self.values().iter().zip(self.mask.kept()).all(|(v, k)| *k || *v == 0.0);
        zeros && self.template.groups().all(|g| (dot(g, g).sqrt() - 1.0).abs() <= tol)
    }
}

/// Draws a key for `layout`: i.i.d. standard normal coordinates, then
/// group normalization.
pub fn sample_key(layout: GroupLayout, rng_seed: u64) -> KeyTemplate {
    let mut rng = rng_from(rng_seed);
    loop {
        let raw = gaussian_vec(&mut rng, layout.d());
        // a zero group has probability zero; redraw rather than fail
        if let Ok(t) = group_normalize(&raw, layout) {
            return KeyTemplate(t);
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("alpha {alpha} outside [0, 1]")))
    }
}

/// Slerp coefficients `(sin((1-α)θ)/sin θ, sin(αθ)/sin θ)`, or `None`
/// when the pair is degenerate.
pub(crate) fn slerp_coefficients(theta: f64, alpha: f64) -> Option<(f64, f64)> {
    let s = theta.sin();
    if s < DEGENERATE_SIN {
        return None;
    }
    Some((((1.0 - alpha) * theta).sin() / s, (alpha * theta).sin() / s))
}

fn slerp_into(t: &[f64], k: &[f64], alpha: f64, out: &mut [f64]) -> bool {
    let theta = dot(t, k).clamp(-1.0, 1.0).acos();
    match slerp_coefficients(theta, alpha) {
        Some((a, b)) => {
            for ((o, x), y) in out.iter_mut().zip(t).zip(k) {
                *o = a * x + b * y;
            }
            true
        }
        None => false,
    }
}

/// Spherical linear interpolation from `t` (α = 0) to `k` (α = 1).
pub fn slerp(t: &[f64], k: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if t.len() != k.len() {
        return Err(Error::DimensionMismatch {
            expected: t.len(),
            actual: k.len(),
        });
    }
    let mut out = vec![0.0; t.len()];
    if slerp_into(t, k, alpha, &mut out) {
        Ok(out)
    } else {
        Err(Error::DegenerateAngle { group: 0 })
    }
}

/// Slerp applied independently to every group.
pub fn group_slerp(t: &Template, k: &KeyTemplate, alpha: f64) -> Result<Template> {
    check_alpha(alpha)?;
    let layout = t.layout();
    layout.check_same(&k.layout())?;
    let g = layout.group_dim();
    let mut out = vec![0.0; layout.d()];
    for (i, ((o, tg), kg)) in out
        .chunks_exact_mut(g)
        .zip(t.groups())
        .zip(k.template().groups())
        .enumerate()
    {
        if !slerp_into(tg, kg, alpha, o) {
            return Err(Error::DegenerateAngle { group: i });
        }
    }
    Template::from_raw(out, layout)
}

/// Per-group random dropout of `floor(β · group_dim)` coordinates.
pub fn random_dropout_mask(layout: GroupLayout, beta: f64, rng_seed: u64) -> Result<DropoutMask> {
    let g = layout.group_dim();
    let drop = drop_count(beta, g);
    if drop > g - 1 {
        return Err(Error::BudgetTooLarge { drop, group_dim: g });
    }
    let counts = vec![drop; layout.m()];
    Ok(DropoutMask::from_counts(layout, &counts, &mut rng_from(rng_seed)))
}

/// Splits the global budget `floor(β · d)` across groups in proportion to
/// `1 - wᵢ`.
///
/// Shares above the per-group cap `group_dim - 1` are clamped and their
/// excess redistributed over the remaining groups. The fractional shares
/// are then settled by largest remainder, ties going to the lower group
/// index, so the counts sum to the budget exactly and never increase
/// with weight.
pub fn weighted_dropout_counts(weights: &GroupWeights, layout: GroupLayout, beta: f64) -> Result<Vec<usize>> {
    weights.check_layout(&layout)?;
    let m = layout.m();
    let cap = layout.group_dim() - 1;
    let budget = drop_count(beta, layout.d());
    if budget > m * cap {
        return Err(Error::InfeasibleBudget {
            budget,
            capacity: m * cap,
        });
    }

    let w = weights.as_slice();
    let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    let mut q: Vec<f64> = w.iter().map(|x| 1.0 - x).collect();
    if hi - lo < 1e-15 || q.iter().sum::<f64>() <= 0.0 {
        q = vec![1.0; m];
    }

    let cap_f = cap as f64;
    let mut share = vec![0.0; m];
    let mut clamped = vec![false; m];
    let mut remaining = budget as f64;
    loop {
        let free: Vec<usize> = (0..m).filter(|&i| !clamped[i]).collect();
        if free.is_empty() {
            break;
        }
        let mass: f64 = free.iter().map(|&i| q[i]).sum();
        for &i in &free {
            share[i] = if mass > 0.0 {
                remaining * q[i] / mass
            } else {
                remaining / free.len() as f64
            };
        }
        let over: Vec<usize> = free.iter().copied().filter(|&i| share[i] > cap_f).collect();
        if over.is_empty() {
            break;
        }
        for i in over {
            share[i] = cap_f;
            clamped[i] = true;
            remaining -= cap_f;
        }
    }

    let mut counts: Vec<usize> = share.iter().map(|s| (s.floor() as usize).min(cap)).collect();
    let assigned: usize = counts.iter().sum();
    let mut leftover = budget.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        let ra = share[a] - counts[a] as f64;
        let rb = share[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    while leftover > 0 {
        let before = leftover;
        for &i in &order {
            if leftover == 0 {
                break;
            }
            if counts[i] < cap {
                counts[i] += 1;
                leftover -= 1;
            }
        }
        debug_assert!(leftover < before);
    }
    Ok(counts)
}

/// Mask dropping `counts[i]` uniformly chosen coordinates from group `i`.
pub fn mask_from_counts(layout: GroupLayout, counts: &[usize], rng_seed: u64) -> Result<DropoutMask> {
    if counts.len() != layout.m() {
        return Err(Error::DimensionMismatch {
            expected: layout.m(),
            actual: counts.len(),
        });
    }
    let g = layout.group_dim();
    if let Some(&drop) = counts.iter().find(|&&c| c > g - 1) {
        return Err(Error::BudgetTooLarge { drop, group_dim: g });
    }
    Ok(DropoutMask::from_counts(layout, counts, &mut rng_from(rng_seed)))
}

/// Dropout mask for `params`, in its configured mode.
pub fn dropout_mask(params: &ProtectionParams, weights: &GroupWeights, rng_seed: u64) -> Result<DropoutMask> {
    match params.dropout_mode {
        DropoutMode::Random => random_dropout_mask(params.layout, params.beta, rng_seed),
        DropoutMode::Weighted => {
            let counts = weighted_dropout_counts(weights, params.layout, params.beta)?;
            mask_from_counts(params.layout, &counts, rng_seed)
        }
    }
}

/// Zeroes dropped coordinates and re-normalizes the kept part of every group.
pub fn apply_mask(t: &Template, mask: &DropoutMask) -> Result<Template> {
    let layout = t.layout();
    if mask.len() != layout.d() {
        return Err(Error::DimensionMismatch {
            expected: layout.d(),
            actual: mask.len(),
        });
    }
    let mut values: Vec<f64> = t
        .values()
        .iter()
        .zip(mask.kept())
        .map(|(v, k)| if *k { *v } else { 0.0 })
        .collect();
    for (group, chunk) in values.chunks_exact_mut(layout.group_dim()).enumerate() {
        normalize_in_place(chunk).ok_or(Error::ZeroGroup { group })?;
    }
    Template::from_raw(values, layout)
}

/// Enrolls `t`: samples a key, rotates, drops out and re-normalizes.
///
/// The key comes from a sub-stream of `rng_seed`; on a degenerate angle up
/// to [`KEY_RESAMPLES`] further keys are tried. The mask is drawn from a
/// separate sub-stream, so it does not depend on how many keys were tried.
pub fn protect(
    t: &Template,
    params: &ProtectionParams,
    weights: &GroupWeights,
    rng_seed: u64,
) -> Result<(ProtectedTemplate, KeyTemplate)> {
    params.validate()?;
    t.layout().check_same(&params.layout)?;
    weights.check_layout(&params.layout)?;

    let key_base = derive_seed(rng_seed, seed::STREAM_KEY);
    let mut last_err = Error::DegenerateAngle { group: 0 };
    for attempt in 0..=KEY_RESAMPLES {
        let key = sample_key(params.layout, derive_seed(key_base, attempt as u64));
        match group_slerp(t, &key, params.alpha) {
            Ok(rotated) => {
                let mask = dropout_mask(params, weights, derive_seed(rng_seed, seed::STREAM_MASK))?;
                let template = apply_mask(&rotated, &mask)?;
                let protected = ProtectedTemplate {
                    template,
                    mask,
                    weights: weights.clone(),
                    params_fingerprint: params.fingerprint(),
                };
                return Ok((protected, key));
            }
            Err(e @ Error::DegenerateAngle { .. }) => last_err = e,
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

/// Transforms a query with an enrolled key and mask. The key is fixed, so a
/// degenerate angle is returned as an error rather than resampled.
pub fn protect_query(
    t_q: &Template,
    key: &KeyTemplate,
    mask: &DropoutMask,
    weights: &GroupWeights,
    params: &ProtectionParams,
) -> Result<ProtectedTemplate> {
    t_q.layout().check_same(&params.layout)?;
    let rotated = group_slerp(t_q, key, params.alpha)?;
    let template = apply_mask(&rotated, mask)?;
    Ok(ProtectedTemplate {
        template,
        mask: mask.clone(),
        weights: weights.clone(),
        params_fingerprint: params.fingerprint(),
    })
}

/// Angle between `t` and a key in the same group, for diagnostics.
pub fn key_angle(t: &[f64], k: &[f64]) -> Result<f64> {
    included_angle(t, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, SQRT_2};

    fn unit(d: usize, seed: u64) -> Vec<f64> {
        sample_key(GroupLayout::whole(d).unwrap(), seed).values().to_vec()
    }

    /// Independent route: rotate inside the plane spanned by `t` and `k`
    /// using an orthonormal basis built by Gram-Schmidt.
    fn plane_rotation(t: &[f64], k: &[f64], alpha: f64) -> Vec<f64> {
        let c = dot(t, k);
        let mut u: Vec<f64> = k.iter().zip(t).map(|(kk, tt)| kk - c * tt).collect();
        let n = dot(&u, &u).sqrt();
        u.iter_mut().for_each(|x| *x /= n);
        let theta = c.clamp(-1.0, 1.0).acos();
        t.iter()
            .zip(&u)
            .map(|(tt, uu)| (alpha * theta).cos() * tt + (alpha * theta).sin() * uu)
            .collect()
    }

    #[test]
    fn slerp_endpoints() {
        let t = unit(8, 1);
        let k = unit(8, 2);
        assert_eq!(slerp(&t, &k, 0.0).unwrap(), t);
        let at_one = slerp(&t, &k, 1.0).unwrap();
        for (a, b) in at_one.iter().zip(&k) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn slerp_midpoint_of_orthogonal_axes() {
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        let mid = slerp(&e1, &e2, 0.5).unwrap();
        assert_abs_diff_eq!(mid[0], SQRT_2 / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mid[1], SQRT_2 / 2.0, epsilon = 1e-15);
        assert_eq!(mid[2], 0.0);
    }

    #[test]
    fn slerp_alpha_point_nine_gives_81_degrees() {
        let e1 = [1.0, 0.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0, 0.0];
        let p = slerp(&e1, &e2, 0.9).unwrap();
        // direct evaluation: coefficients sin(0.1·π/2), sin(0.9·π/2)
        assert_abs_diff_eq!(p[0], (0.05 * std::f64::consts::PI).sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(included_angle(&p, &e1).unwrap(), 0.9 * FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(included_angle(&p, &e1).unwrap().to_degrees(), 81.0, epsilon = 1e-9);
    }

    #[test]
    fn slerp_rejects_degenerate_pairs() {
        let t = [1.0, 0.0];
        assert_eq!(slerp(&t, &t, 0.5), Err(Error::DegenerateAngle { group: 0 }));
        assert_eq!(slerp(&t, &[-1.0, 0.0], 0.5), Err(Error::DegenerateAngle { group: 0 }));
        assert!(matches!(slerp(&t, &[0.0, 1.0], 1.5), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn slerp_matches_plane_rotation() {
        for s in 0..200 {
            let t = unit(16, 3 * s);
            let k = unit(16, 3 * s + 1);
            let alpha = (s as f64 + 0.5) / 200.0;
            let a = slerp(&t, &k, alpha).unwrap();
            let b = plane_rotation(&t, &k, alpha);
            for (x, y) in a.iter().zip(&b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn group_slerp_per_group_oracle() {
        let layout = GroupLayout::new(64, 4).unwrap();
        let t = sample_key(layout, 5).template().clone();
        let k = sample_key(layout, 6);
        let p = group_slerp(&t, &k, 0.7).unwrap();
        for i in 0..4 {
            let expected = plane_rotation(t.group(i), k.template().group(i), 0.7);
            for (x, y) in p.group(i).iter().zip(&expected) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
            let theta = included_angle(t.group(i), k.template().group(i)).unwrap();
            assert_abs_diff_eq!(
                included_angle(p.group(i), t.group(i)).unwrap(),
                0.7 * theta,
                epsilon = 1e-6
            );
        }
        assert_eq!(group_slerp(&t, &k, 0.0).unwrap(), t);
    }

    #[test]
    fn group_slerp_single_group_reduces_to_slerp() {
        let layout = GroupLayout::whole(32).unwrap();
        let t = sample_key(layout, 8).template().clone();
        let k = sample_key(layout, 9);
        let a = group_slerp(&t, &k, 0.4).unwrap();
        let b = slerp(t.values(), k.values(), 0.4).unwrap();
        assert_eq!(a.values(), &b[..]);
    }

    #[test]
    fn group_slerp_names_degenerate_group() {
        let layout = GroupLayout::new(4, 2).unwrap();
        let t = group_normalize(&[1.0, 0.0, 1.0, 0.0], layout).unwrap();
        let k = KeyTemplate::from_values(&[0.0, 1.0, 1.0, 0.0], layout).unwrap();
        assert_eq!(group_slerp(&t, &k, 0.5), Err(Error::DegenerateAngle { group: 1 }));
    }

    #[test]
    fn keys_are_deterministic_and_unit() {
        let layout = GroupLayout::new(4, 2).unwrap();
        let k = sample_key(layout, 42);
        assert_eq!(k, sample_key(layout, 42));
        for g in k.template().groups() {
            assert_abs_diff_eq!(dot(g, g), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn distinct_seeds_give_near_orthogonal_keys() {
        let layout = GroupLayout::default();
        let m = layout.m() as f64;
        for s in 0..1000u64 {
            let a = sample_key(layout, 2 * s);
            let b = sample_key(layout, 2 * s + 1);
            let cos = dot(a.values(), b.values()) / m;
            assert!(cos.abs() < 0.5, "seed pair {s}: cos {cos}");
        }
    }

    #[test]
    fn random_mask_counts() {
        let layout = GroupLayout::default();
        let none = random_dropout_mask(layout, 0.0, 1).unwrap();
        assert!(none.kept().iter().all(|k| *k));
        let half = random_dropout_mask(layout, 0.5, 1).unwrap();
        assert!(half.per_group_drop_counts().iter().all(|&c| c == 8));
        for chunk in half.kept().chunks(16) {
            assert_eq!(chunk.iter().filter(|k| !**k).count(), 8);
        }
        assert_eq!(half, random_dropout_mask(layout, 0.5, 1).unwrap());
        assert_ne!(half, random_dropout_mask(layout, 0.5, 2).unwrap());
        assert_eq!(
            random_dropout_mask(GroupLayout::new(4, 2).unwrap(), 0.5, 1)
                .unwrap()
                .total_dropped(),
            2
        );
        assert!(matches!(
            random_dropout_mask(GroupLayout::new(4, 2).unwrap(), 1.0, 1),
            Err(Error::BudgetTooLarge { .. })
        ));
    }

    /// Brute force: all count vectors within the cap summing to the budget,
    /// minimizing squared distance to the unclamped proportional shares.
    fn brute_force_counts(w: &[f64], group_dim: usize, budget: usize) -> Vec<usize> {
        let m = w.len();
        let q: Vec<f64> = w.iter().map(|x| 1.0 - x).collect();
        let qs: f64 = q.iter().sum();
        let shares: Vec<f64> = q.iter().map(|x| budget as f64 * x / qs).collect();
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut c = vec![0usize; m];
        fn rec(
            i: usize,
            left: usize,
            c: &mut Vec<usize>,
            cap: usize,
            shares: &[f64],
            best: &mut Option<(f64, Vec<usize>)>,
        ) {
            if i == c.len() {
                if left == 0 {
                    let cost: f64 = c.iter().zip(shares).map(|(a, s)| (*a as f64 - s).powi(2)).sum();
                    if best.as_ref().map_or(true, |(b, _)| cost < *b - 1e-12) {
                        *best = Some((cost, c.clone()));
                    }
                }
                return;
            }
            for v in 0..=cap.min(left) {
                c[i] = v;
                rec(i + 1, left - v, c, cap, shares, best);
            }
            c[i] = 0;
        }
        rec(0, budget, &mut c, group_dim - 1, &shares, &mut best);
        best.unwrap().1
    }

    #[test]
    fn weighted_counts_examples() {
        let layout = GroupLayout::new(32, 2).unwrap();
        let w = GroupWeights::new(vec![0.75, 0.25]).unwrap();
        let c = weighted_dropout_counts(&w, layout, 0.5).unwrap();
        assert_eq!(c, vec![4, 12]);
        assert_eq!(c, brute_force_counts(w.as_slice(), 16, 16));

        let layout = GroupLayout::default();
        let c = weighted_dropout_counts(&GroupWeights::uniform(49), layout, 0.5).unwrap();
        assert!(c.iter().all(|&x| x == 8));
        assert_eq!(c.iter().sum::<usize>(), 392);
    }

    #[test]
    fn weighted_counts_clamp_heavy_group() {
        // one group carries all the weight: it drops nothing, the rest
        // absorb the budget up to their cap
        let layout = GroupLayout::new(48, 3).unwrap();
        let w = GroupWeights::new(vec![0.0, 1.0, 0.0]).unwrap();
        let c = weighted_dropout_counts(&w, layout, 0.5).unwrap();
        assert_eq!(c, vec![12, 0, 12]);

        // two groups: the light group saturates at its cap, the heavy
        // group takes only the overflow
        let layout = GroupLayout::new(32, 2).unwrap();
        let w = GroupWeights::new(vec![1.0, 0.0]).unwrap();
        let c = weighted_dropout_counts(&w, layout, 0.5).unwrap();
        assert_eq!(c, vec![1, 15]);
    }

    #[test]
    fn weighted_counts_match_brute_force_when_unclamped() {
        let layout = GroupLayout::new(40, 4).unwrap();
        let cases = [
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.4, 0.3, 0.2, 0.1],
            vec![0.25, 0.25, 0.3, 0.2],
            vec![0.05, 0.45, 0.45, 0.05],
        ];
        for w in cases {
            let gw = GroupWeights::new(w.clone()).unwrap();
            for beta in [0.1, 0.3, 0.5] {
                let c = weighted_dropout_counts(&gw, layout, beta).unwrap();
                assert_eq!(
                    c,
                    brute_force_counts(&w, 10, drop_count(beta, 40)),
                    "w={w:?} beta={beta}"
                );
            }
        }
    }

    #[test]
    fn weighted_ties_favor_lower_index() {
        let layout = GroupLayout::new(30, 3).unwrap();
        let c = weighted_dropout_counts(&GroupWeights::uniform(3), layout, 0.35).unwrap();
        // budget 10 split 10/3 each: the extra coordinate goes to group 0
        assert_eq!(c, vec![4, 3, 3]);
    }

    #[test]
    fn weighted_rejects_infeasible_budget() {
        let layout = GroupLayout::new(4, 2).unwrap();
        let err = weighted_dropout_counts(&GroupWeights::uniform(2), layout, 0.75).unwrap_err();
        assert_eq!(err, Error::InfeasibleBudget { budget: 3, capacity: 2 });
    }

    #[test]
    fn identity_pipeline() {
        let layout = GroupLayout::default();
        let params = ProtectionParams::new(0.0, 0.0, layout, DropoutMode::Random).unwrap();
        let t = sample_key(layout, 77).template().clone();
        let (p, _) = protect(&t, &params, &GroupWeights::uniform(49), 3).unwrap();
        for (a, b) in p.values().iter().zip(t.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn protect_is_seeded() {
        let params = ProtectionParams::default();
        let w = GroupWeights::uniform(49);
        let t = sample_key(params.layout, 1).template().clone();
        let (p1, k1) = protect(&t, &params, &w, 10).unwrap();
        let (p1b, k1b) = protect(&t, &params, &w, 10).unwrap();
        let (p2, k2) = protect(&t, &params, &w, 11).unwrap();
        assert_eq!(p1, p1b);
        assert_eq!(k1, k1b);
        assert_ne!(k1, k2);
        assert_ne!(p1.values(), p2.values());
    }

    #[test]
    fn protected_invariants_hold_over_random_templates() {
        let w = GroupWeights::normalized((1..=49).map(|x| x as f64).collect()).unwrap();
        for mode in [DropoutMode::Random, DropoutMode::Weighted] {
            let params = ProtectionParams {
                dropout_mode: mode,
                ..ProtectionParams::default()
            };
            for s in 0..500u64 {
                let t = sample_key(params.layout, 1_000 + s).template().clone();
                let (p, _) = protect(&t, &params, &w, s).unwrap();
                assert!(p.satisfies_invariants(1e-6));
                assert_eq!(p.mask().total_dropped(), 392);
                assert_eq!(p.params_fingerprint(), params.fingerprint());
            }
        }
    }

    #[test]
    fn query_reproduces_enrollment() {
        let params = ProtectionParams::default();
        let w = GroupWeights::uniform(49);
        let t = sample_key(params.layout, 4).template().clone();
        let (p, k) = protect(&t, &params, &w, 99).unwrap();
        let q = protect_query(&t, &k, p.mask(), &w, &params).unwrap();
        for (a, b) in p.values().iter().zip(q.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }

        let ident = ProtectionParams::new(0.0, 0.0, params.layout, DropoutMode::Random).unwrap();
        let raw: Vec<f64> = (0..784).map(|i| (i as f64 * 0.37).sin() + 0.1).collect();
        let tq = group_normalize(&raw, params.layout).unwrap();
        let q = protect_query(&tq, &k, &DropoutMask::full(params.layout), &w, &ident).unwrap();
        for (a, b) in q.values().iter().zip(tq.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn query_with_degenerate_key_errors() {
        let layout = GroupLayout::new(4, 2).unwrap();
        let params = ProtectionParams::new(0.9, 0.0, layout, DropoutMode::Random).unwrap();
        let t = group_normalize(&[1.0, 0.0, 0.0, 1.0], layout).unwrap();
        let k = KeyTemplate::from_template(t.clone());
        let err = protect_query(&t, &k, &DropoutMask::full(layout), &GroupWeights::uniform(2), &params);
        assert_eq!(err, Err(Error::DegenerateAngle { group: 0 }));
    }

    #[test]
    fn params_validation_and_fingerprint() {
        let layout = GroupLayout::default();
        assert!(ProtectionParams::new(1.0, 0.5, layout, DropoutMode::Random).is_err());
        assert!(ProtectionParams::new(0.9, 1.0, layout, DropoutMode::Random).is_err());
        let small = GroupLayout::new(4, 2).unwrap();
        assert!(ProtectionParams::new(0.9, 0.5, small, DropoutMode::Random).is_ok());
        let a = ProtectionParams::default();
        assert_eq!(a.fingerprint(), a.with_seed(99).fingerprint());
        let b = ProtectionParams { alpha: 0.8, ..a };
        assert_ne!(a.fingerprint(), b.fingerprint());
        let c = ProtectionParams {
            dropout_mode: DropoutMode::Weighted,
            ..a
        };
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    proptest! {
        #[test]
        fn geodesic_angle_split(seed in any::<u64>(), alpha in 0.0f64..1.0, d in 2usize..40) {
            let l = GroupLayout::whole(d).unwrap();
            let t = sample_key(l, seed);
            let k = sample_key(l, seed ^ 0xabcdef);
            let theta = included_angle(t.values(), k.values()).unwrap();
            prop_assume!(theta.sin() > 1e-6);
            let p = slerp(t.values(), k.values(), alpha).unwrap();
            prop_assert!((dot(&p, &p).sqrt() - 1.0).abs() < 1e-9);
            let to_t = included_angle(&p, t.values()).unwrap();
            let to_k = included_angle(&p, k.values()).unwrap();
            prop_assert!((to_t + to_k - theta).abs() < 1e-6);
            prop_assert!((to_t - alpha * theta).abs() < 1e-6);
        }

        #[test]
        fn angle_to_key_decreases_with_alpha(seed in any::<u64>(), a1 in 0.01f64..0.98, gap in 0.005f64..0.5) {
            let l = GroupLayout::whole(12).unwrap();
            let t = sample_key(l, seed);
            let k = sample_key(l, !seed);
            let a2 = (a1 + gap).min(0.995);
            prop_assume!(a2 > a1 + 1e-3);
            let p1 = slerp(t.values(), k.values(), a1).unwrap();
            let p2 = slerp(t.values(), k.values(), a2).unwrap();
            prop_assert!(included_angle(&p2, k.values()).unwrap() < included_angle(&p1, k.values()).unwrap());
        }

        #[test]
        fn weighted_budget_is_exact(raw in proptest::collection::vec(0.0f64..1.0, 2..12), beta in 0.0f64..0.9, g in 2usize..20) {
            prop_assume!(raw.iter().sum::<f64>() > 1e-6);
            let m = raw.len();
            let layout = GroupLayout::new(m * g, m).unwrap();
            let w = GroupWeights::normalized(raw).unwrap();
            let budget = drop_count(beta, m * g);
            match weighted_dropout_counts(&w, layout, beta) {
                Ok(c) => {
                    prop_assert_eq!(c.iter().sum::<usize>(), budget);
                    prop_assert!(c.iter().all(|&x| x < g));
                    for i in 0..m {
                        for j in 0..m {
                            if w.as_slice()[i] > w.as_slice()[j] {
                                prop_assert!(c[i] <= c[j]);
                            }
                        }
                    }
                }
                Err(Error::InfeasibleBudget { .. }) => prop_assert!(budget > m * (g - 1)),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
