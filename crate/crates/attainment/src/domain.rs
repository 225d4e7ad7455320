//! Domain types for the 5-D feature-parameter space.
//!
//! Every module in this crate works on the same space: two environment
//! features (synthetic-ice occurrence and ramp inclination) concatenated with
//! three PID gains. The coordinate order is fixed as
//! `[ice, angle_deg, kp, ki, kd]` everywhere — serialization, kernels and
//! distances all share this layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of dimensions of the feature-parameter space.
pub const DIMS: usize = 5;

/// One axis of the feature-parameter space, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Ice,
    AngleDeg,
    Kp,
    Ki,
    Kd,
}

impl Dimension {
    pub const ALL: [Dimension; DIMS] = [
        Dimension::Ice,
        Dimension::AngleDeg,
        Dimension::Kp,
        Dimension::Ki,
        Dimension::Kd,
    ];

    pub fn index(self) -> usize {
        match self {
            Dimension::Ice => 0,
            Dimension::AngleDeg => 1,
            Dimension::Kp => 2,
            Dimension::Ki => 3,
            Dimension::Kd => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Ice => "ice",
            Dimension::AngleDeg => "angle_deg",
            Dimension::Kp => "kp",
            Dimension::Ki => "ki",
            Dimension::Kd => "kd",
        }
    }

    pub fn from_index(i: usize) -> Option<Dimension> {
        Dimension::ALL.get(i).copied()
    }

    /// Parses the names used in files and CLI flags. `angle` is accepted as a
    /// shorthand for `angle_deg`.
    pub fn parse(s: &str) -> Option<Dimension> {
        match s {
            "ice" => Some(Dimension::Ice),
            "angle" | "angle_deg" => Some(Dimension::AngleDeg),
            "kp" => Some(Dimension::Kp),
            "ki" => Some(Dimension::Ki),
            "kd" => Some(Dimension::Kd),
            _ => None,
        }
    }

    /// The two environment-feature dimensions.
    pub fn is_feature(self) -> bool {
        matches!(self, Dimension::Ice | Dimension::AngleDeg)
    }
}

impl std::fmt::Display for Dimension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn ensure_finite(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { field, value })
    }
}

/// Environment features: ice occurrence in [0, 1] and ramp angle in [0, 30]°.
///
/// Ice is a real, not a boolean: calibrated encoder readings and
/// counterfactual solutions land between the two physical endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureVectorRepr", into = "FeatureVectorRepr")]
pub struct FeatureVector {
    ice: f64,
    angle_deg: f64,
}

#[derive(Serialize, Deserialize)]
struct FeatureVectorRepr {
    ice: f64,
    angle_deg: f64,
}

impl TryFrom<FeatureVectorRepr> for FeatureVector {
    type Error = Error;
    fn try_from(r: FeatureVectorRepr) -> Result<Self> {
        FeatureVector::new(r.ice, r.angle_deg)
    }
}

impl From<FeatureVector> for FeatureVectorRepr {
    fn from(z: FeatureVector) -> Self {
        FeatureVectorRepr {
            ice: z.ice,
            angle_deg: z.angle_deg,
        }
    }
}

impl FeatureVector {
    /// Feature ranges are fixed by the experiment: ice in [0, 1], angle in
    /// [0, 30] degrees. Values outside are rejected.
    pub fn new(ice: f64, angle_deg: f64) -> Result<FeatureVector> {
        ensure_finite("ice", ice)?;
        ensure_finite("angle_deg", angle_deg)?;
        if !(0.0..=1.0).contains(&ice) {
            return Err(Error::OutOfBounds {
                dim: Dimension::Ice,
                value: ice,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if !(0.0..=30.0).contains(&angle_deg) {
            return Err(Error::OutOfBounds {
                dim: Dimension::AngleDeg,
                value: angle_deg,
                lo: 0.0,
                hi: 30.0,
            });
        }
        Ok(FeatureVector { ice, angle_deg })
    }

    pub fn ice(&self) -> f64 {
        self.ice
    }

    pub fn angle_deg(&self) -> f64 {
        self.angle_deg
    }
}

/// PID gains. All finite and non-negative; upper limits come from
/// [`DomainBounds`] and are enforced wherever a bounds context exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GainVectorRepr", into = "GainVectorRepr")]
pub struct GainVector {
    kp: f64,
    ki: f64,
    kd: f64,
}

#[derive(Serialize, Deserialize)]
struct GainVectorRepr {
    kp: f64,
    ki: f64,
    kd: f64,
}

impl TryFrom<GainVectorRepr> for GainVector {
    type Error = Error;
    fn try_from(r: GainVectorRepr) -> Result<Self> {
        GainVector::new(r.kp, r.ki, r.kd)
    }
}

impl From<GainVector> for GainVectorRepr {
    fn from(g: GainVector) -> Self {
        GainVectorRepr {
            kp: g.kp,
            ki: g.ki,
            kd: g.kd,
        }
    }
}

impl GainVector {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Result<GainVector> {
        for (field, value) in [("kp", kp), ("ki", ki), ("kd", kd)] {
            ensure_finite(field, value)?;
            if value < 0.0 {
                let dim = Dimension::parse(field).expect("gain dimension");
                return Err(Error::OutOfBounds {
                    dim,
                    value,
                    lo: 0.0,
                    hi: f64::INFINITY,
                });
            }
        }
        Ok(GainVector { kp, ki, kd })
    }

    pub fn kp(&self) -> f64 {
        self.kp
    }

    pub fn ki(&self) -> f64 {
        self.ki
    }

    pub fn kd(&self) -> f64 {
        self.kd
    }
}

/// A point x = (z, θ) of the feature-parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureParameterPoint {
    pub z: FeatureVector,
    pub theta: GainVector,
}

impl FeatureParameterPoint {
    pub fn new(z: FeatureVector, theta: GainVector) -> FeatureParameterPoint {
        FeatureParameterPoint { z, theta }
    }

    /// Canonical coordinate layout `[ice, angle_deg, kp, ki, kd]`.
    pub fn to_array(&self) -> [f64; DIMS] {
        [
            self.z.ice,
            self.z.angle_deg,
            self.theta.kp,
            self.theta.ki,
            self.theta.kd,
        ]
    }

    /// Builds a point from canonical coordinates, enforcing type invariants.
    pub fn from_array(a: [f64; DIMS]) -> Result<FeatureParameterPoint> {
        Ok(FeatureParameterPoint {
            z: FeatureVector::new(a[0], a[1])?,
            theta: GainVector::new(a[2], a[3], a[4])?,
        })
    }

    pub fn coord(&self, dim: Dimension) -> f64 {
        self.to_array()[dim.index()]
    }
}

impl std::fmt::Display for FeatureParameterPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = self.to_array();
        write!(
            f,
            "(ice={}, angle={}, kp={}, ki={}, kd={})",
            a[0], a[1], a[2], a[3], a[4]
        )
    }
}

/// Where a trial outcome came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialSource {
    Simulated,
    Physical,
}

/// One observed (x, y) pair with provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub x: FeatureParameterPoint,
    pub y: u8,
    pub seed: u64,
    pub source: TrialSource,
}

impl TrialRecord {
    pub fn new(
        x: FeatureParameterPoint,
        y: u8,
        seed: u64,
        source: TrialSource,
    ) -> Result<TrialRecord> {
        if y > 1 {
            return Err(Error::InvalidConfig(format!(
                "trial outcome must be 0 or 1, got {y}"
            )));
        }
        Ok(TrialRecord { x, y, seed, source })
    }

    pub fn succeeded(&self) -> bool {
        self.y == 1
    }
}

/// Per-dimension closed intervals bounding the feature-parameter space.
///
/// Defaults bracket every gain value that shows up in practice: kp in [0, 2],
/// ki in [0, 0.1], kd in [0, 0.5], with the fixed feature ranges for ice and
/// angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoundsRepr", into = "BoundsRepr")]
pub struct DomainBounds {
    lo: [f64; DIMS],
    hi: [f64; DIMS],
}

/// File representation: named per-dimension `[lo, hi]` pairs, in canonical
/// field order so serialization is byte-stable.
#[derive(Serialize, Deserialize)]
struct BoundsRepr {
    ice: [f64; 2],
    angle_deg: [f64; 2],
    kp: [f64; 2],
    ki: [f64; 2],
    kd: [f64; 2],
}

impl TryFrom<BoundsRepr> for DomainBounds {
    type Error = Error;
    fn try_from(r: BoundsRepr) -> Result<Self> {
        DomainBounds::new([r.ice, r.angle_deg, r.kp, r.ki, r.kd])
    }
}

impl From<DomainBounds> for BoundsRepr {
    fn from(b: DomainBounds) -> Self {
        let pair = |d: usize| [b.lo[d], b.hi[d]];
        BoundsRepr {
            ice: pair(0),
            angle_deg: pair(1),
            kp: pair(2),
            ki: pair(3),
            kd: pair(4),
        }
    }
}

impl Default for DomainBounds {
    fn default() -> Self {
        DomainBounds {
            lo: [0.0; DIMS],
            hi: [1.0, 30.0, 2.0, 0.1, 0.5],
        }
    }
}

impl DomainBounds {
    pub fn new(intervals: [[f64; 2]; DIMS]) -> Result<DomainBounds> {
        let mut lo = [0.0; DIMS];
        let mut hi = [0.0; DIMS];
        for (d, [a, b]) in intervals.into_iter().enumerate() {
            let dim = Dimension::from_index(d).expect("dimension index");
            ensure_finite(dim.name(), a)?;
            ensure_finite(dim.name(), b)?;
            if a >= b {
                return Err(Error::InvalidConfig(format!(
                    "bounds for {dim} must satisfy lo < hi, got [{a}, {b}]"
                )));
            }
            lo[d] = a;
            hi[d] = b;
        }
        Ok(DomainBounds { lo, hi })
    }

    pub fn lo(&self, dim: Dimension) -> f64 {
        self.lo[dim.index()]
    }

    pub fn hi(&self, dim: Dimension) -> f64 {
        self.hi[dim.index()]
    }

    pub fn interval(&self, dim: Dimension) -> (f64, f64) {
        (self.lo[dim.index()], self.hi[dim.index()])
    }

    /// Checks every coordinate, naming the first offending dimension.
    pub fn check(&self, x: &FeatureParameterPoint) -> Result<()> {
        let a = x.to_array();
        for dim in Dimension::ALL {
            let d = dim.index();
            if a[d] < self.lo[d] || a[d] > self.hi[d] {
                return Err(Error::OutOfBounds {
                    dim,
                    value: a[d],
                    lo: self.lo[d],
                    hi: self.hi[d],
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &FeatureParameterPoint) -> bool {
        self.check(x).is_ok()
    }

    /// Clamps canonical coordinates into the bounds, reporting whether any
    /// coordinate moved.
    pub fn clamp_array(&self, a: [f64; DIMS]) -> ([f64; DIMS], bool) {
        let mut out = a;
        let mut clamped = false;
        for (d, v) in out.iter_mut().enumerate() {
            let c = v.clamp(self.lo[d], self.hi[d]);
            if c != *v {
                clamped = true;
            }
            *v = c;
        }
        (out, clamped)
    }
}

/// Affine map of an in-bounds point onto the unit cube, coordinate-wise
/// `(v - lo) / (hi - lo)`. Inverse of [`denormalize`].
pub fn normalize(x: &FeatureParameterPoint, bounds: &DomainBounds) -> Result<[f64; DIMS]> {
    bounds.check(x)?;
    Ok(normalize_unchecked(&x.to_array(), bounds))
}

pub(crate) fn normalize_unchecked(a: &[f64; DIMS], bounds: &DomainBounds) -> [f64; DIMS] {
    let mut u = [0.0; DIMS];
    for d in 0..DIMS {
        u[d] = (a[d] - bounds.lo[d]) / (bounds.hi[d] - bounds.lo[d]);
    }
    u
}

/// Maps unit-cube coordinates back into the raw domain.
pub fn denormalize(u: &[f64; DIMS], bounds: &DomainBounds) -> Result<FeatureParameterPoint> {
    for (d, v) in u.iter().enumerate() {
        let dim = Dimension::from_index(d).expect("dimension index");
        ensure_finite(dim.name(), *v)?;
        if !(0.0..=1.0).contains(v) {
            return Err(Error::OutOfBounds {
                dim,
                value: *v,
                lo: 0.0,
                hi: 1.0,
            });
        }
    }
    FeatureParameterPoint::from_array(denormalize_unchecked(u, bounds))
}

pub(crate) fn denormalize_unchecked(u: &[f64; DIMS], bounds: &DomainBounds) -> [f64; DIMS] {
    let mut a = [0.0; DIMS];
    for d in 0..DIMS {
        a[d] = bounds.lo[d] + u[d] * (bounds.hi[d] - bounds.lo[d]);
    }
    a
}
