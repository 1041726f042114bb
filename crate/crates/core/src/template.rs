//! Templates on (products of) hyperspheres.
//!
//! A template of dimension `d` is split into `m` contiguous groups of
//! `d / m` coordinates. Each group is normalized on its own sphere, and
//! similarity is the weighted sum of per-group cosines.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slices with a norm below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Contiguous equal-size partition of `d` coordinates into `m` groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupLayout {
    d: usize,
    m: usize,
}

impl GroupLayout {
    pub fn new(d: usize, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidLayout("group count must be at least 1".into()));
        }
        if d % m != 0 {
            return Err(Error::InvalidLayout(format!(
                "dimension {d} is not divisible by group count {m}"
            )));
        }
        if d / m < 2 {
            return Err(Error::InvalidLayout(format!("group dimension {} is below 2", d / m)));
        }
        Ok(Self { d, m })
    }

    /// Single-group layout covering the whole vector.
    pub fn whole(d: usize) -> Result<Self> {
        Self::new(d, 1)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn group_dim(&self) -> usize {
        self.d / self.m
    }

    pub fn group_range(&self, group: usize) -> Range<usize> {
        let g = self.group_dim();
        group * g..(group + 1) * g
    }

    pub fn groups(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.m).map(move |i| self.group_range(i))
    }

    pub(crate) fn check_same(&self, other: &GroupLayout) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::LayoutMismatch {
                left_d: self.d,
                left_m: self.m,
                right_d: other.d,
                right_m: other.m,
            })
        }
    }
}

impl Default for GroupLayout {
    /// 49 groups of 16 coordinates (d = 784).
    fn default() -> Self {
        Self { d: 784, m: 49 }
    }
}

/// Nonnegative per-group weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights(Vec<f64>);

impl GroupWeights {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidWeights("no weights given".into()));
        }
        if let Some(bad) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidWeights(format!("weight {bad} is negative or not finite")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(w))
    }

    /// Scales nonnegative raw scores so they sum to one.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        if sum.is_nan() || sum <= 0.0 || raw.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidWeights(
                "raw weights must be finite, nonnegative and not all zero".into(),
            ));
        }
        Self::new(raw.into_iter().map(|x| x / sum).collect())
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn check_layout(&self, layout: &GroupLayout) -> Result<()> {
        if self.0.len() == layout.m() {
            Ok(())
        } else {
            Err(Error::InvalidWeights(format!(
                "{} weights for {} groups",
                self.0.len(),
                layout.m()
            )))
        }
    }
}

/// A feature vector together with its group layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    values: Vec<f64>,
    layout: GroupLayout,
}

impl Template {
    /// Wraps `values` without normalizing them.
    pub fn from_raw(values: Vec<f64>, layout: GroupLayout) -> Result<Self> {
        if values.len() != layout.d() {
            return Err(Error::DimensionMismatch {
                expected: layout.d(),
                actual: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> GroupLayout {
        self.layout
    }

    pub fn group(&self, i: usize) -> &[f64] {
        &self.values[self.layout.group_range(i)]
    }

    pub fn groups(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.layout.group_dim())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` in place to unit norm. Returns the original norm.
pub(crate) fn normalize_in_place(v: &mut [f64]) -> Option<f64> {
    let n = norm(v);
    if n < ZERO_NORM || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(n)
}

/// Normalizes every group slice of `v` to unit norm.
pub fn group_normalize(v: &[f64], layout: GroupLayout) -> Result<Template> {
    if v.len() != layout.d() {
        return Err(Error::DimensionMismatch {
            expected: layout.d(),
            actual: v.len(),
        });
    }
    let mut values = v.to_vec();
    for (group, chunk) in values.chunks_exact_mut(layout.group_dim()).enumerate() {
        normalize_in_place(chunk).ok_or(Error::ZeroGroup { group })?;
    }
    Ok(Template { values, layout })
}

/// Angle between two unit vectors, in `[0, π]`.
pub fn included_angle(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(dot(a, b).clamp(-1.0, 1.0).acos())
}

/// Cosine of the angle between two nonzero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let denom = norm(a) * norm(b);
    if denom < ZERO_NORM {
        return None;
    }
    Some((dot(a, b) / denom).clamp(-1.0, 1.0))
}

/// Weighted sum of per-group cosines.
///
/// Each group is compared by cosine rather than raw dot product, which is
/// the same thing for group-normalized inputs and re-normalizes groups
/// whose dropped coordinates were zeroed.
pub fn groupwise_similarity(a: &Template, b: &Template, weights: &GroupWeights) -> Result<f64> {
    a.layout.check_same(&b.layout)?;
    weights.check_layout(&a.layout)?;
    let mut score = 0.0;
    for (i, ((ga, gb), w)) in a.groups().zip(b.groups()).zip(weights.as_slice()).enumerate() {
        let c = cosine(ga, gb).ok_or(Error::ZeroGroup { group: i })?;
        score += w * c;
    }
    Ok(score)
}
