//! Sim-to-real feature calibration.
//!
//! An external encoder reads the physical scene into raw scalar latents; a
//! per-dimension linear map translates those readings into the feature
//! coordinates the model was trained on. Two endpoint readings per dimension
//! pin the map exactly, so a handful of physical samples is enough to carry
//! a simulation-trained posterior onto the real system.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Dimension, DomainBounds, FeatureParameterPoint, FeatureVector, GainVector};
use crate::error::{Error, Result};
use crate::gp::FittedModel;
use crate::region::AttainmentQuery;

/// A raw-latent reading paired with the feature value it corresponds to.
pub type Endpoint = (f64, f64);

/// Affine map from raw encoder latents to one feature dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    pub slope: f64,
    pub intercept: f64,
    pub source_endpoints: [Endpoint; 2],
    pub feature_dim: Dimension,
}

impl LinearMap {
    /// Exact two-point fit: the map reproduces both endpoints.
    pub fn fit(p1: Endpoint, p2: Endpoint, feature_dim: Dimension) -> Result<LinearMap> {
        if !feature_dim.is_feature() {
            return Err(Error::InvalidConfig(format!(
                "{feature_dim} is not a feature dimension"
            )));
        }
        for (name, v) in [
            ("raw endpoint", p1.0),
            ("feature endpoint", p1.1),
            ("raw endpoint", p2.0),
            ("feature endpoint", p2.1),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    field: name,
                    value: v,
                });
            }
        }
        if p1.0 == p2.0 {
            return Err(Error::DegenerateEndpoints { raw: p1.0 });
        }
        let slope = (p2.1 - p1.1) / (p2.0 - p1.0);
        let intercept = p1.1 - slope * p1.0;
        Ok(LinearMap {
            slope,
            intercept,
            source_endpoints: [p1, p2],
            feature_dim,
        })
    }

    /// Maps a raw reading into feature space and clamps it into the feature
    /// dimension's bounds; the flag reports whether clamping moved it.
    pub fn apply_with_bounds(&self, raw: f64, bounds: &DomainBounds) -> Result<MappedFeature> {
        if !raw.is_finite() {
            return Err(Error::NonFinite {
                field: "raw latent",
                value: raw,
            });
        }
        let unclamped = self.slope * raw + self.intercept;
        let (lo, hi) = bounds.interval(self.feature_dim);
        let value = unclamped.clamp(lo, hi);
        Ok(MappedFeature {
            value,
            clamped: value != unclamped,
        })
    }

    /// [`LinearMap::apply_with_bounds`] against the default bounds.
    pub fn apply(&self, raw: f64) -> Result<MappedFeature> {
        self.apply_with_bounds(raw, &DomainBounds::default())
    }

    /// Decodes a feature-space ice value to presence/absence at the midpoint
    /// of the {0, 1} endpoints: present iff value ≥ 0.5.
    ///
    /// The threshold is applied in feature space, not raw-latent space. A
    /// counterfactual landing just above the midpoint (say 0.53) therefore
    /// decodes as *present*; a consumer that wants the solution to mean
    /// "no ice" must drive the feature below 0.5.
    pub fn decode_binary(&self, value: f64) -> Result<IcePresence> {
        if self.feature_dim != Dimension::Ice {
            return Err(Error::InvalidConfig(format!(
                "decode_binary applies to the ice map, not {}",
                self.feature_dim
            )));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite {
                field: "feature value",
                value,
            });
        }
        Ok(if value >= 0.5 {
            IcePresence::Present
        } else {
            IcePresence::Absent
        })
    }
}

/// A mapped feature value plus whether it was clamped into bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappedFeature {
    pub value: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcePresence {
    Present,
    Absent,
}

pub const CALIBRATION_SCHEMA: &str = "attainment-calibration-v1";

/// One map per feature dimension, as stored in a calibration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    schema: String,
    pub ice: LinearMap,
    pub angle: LinearMap,
}

impl CalibrationSet {
    pub fn new(ice: LinearMap, angle: LinearMap) -> Result<CalibrationSet> {
        if ice.feature_dim != Dimension::Ice || angle.feature_dim != Dimension::AngleDeg {
            return Err(Error::InvalidConfig(
                "calibration set needs an ice map and an angle map".into(),
            ));
        }
        Ok(CalibrationSet {
            schema: CALIBRATION_SCHEMA.to_string(),
            ice,
            angle,
        })
    }

    /// Identity calibration: raw readings are already feature coordinates.
    pub fn identity() -> CalibrationSet {
        CalibrationSet {
            schema: CALIBRATION_SCHEMA.to_string(),
            ice: LinearMap::fit((0.0, 0.0), (1.0, 1.0), Dimension::Ice).expect("identity"),
            angle: LinearMap::fit((0.0, 0.0), (30.0, 30.0), Dimension::AngleDeg)
                .expect("identity"),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        self.write_json(&mut file)?;
        Ok(())
    }

    pub fn write_json(&self, w: &mut impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut *w, self)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CalibrationSet> {
        let file = std::fs::File::open(path)?;
        Self::read_json(file)
    }

    pub fn read_json(r: impl Read) -> Result<CalibrationSet> {
        let set: CalibrationSet = serde_json::from_reader(r).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if set.schema != CALIBRATION_SCHEMA {
            return Err(Error::SchemaMismatch {
                expected: CALIBRATION_SCHEMA.to_string(),
                found: set.schema,
            });
        }
        if set.ice.feature_dim != Dimension::Ice || set.angle.feature_dim != Dimension::AngleDeg {
            return Err(Error::InvalidConfig(
                "calibration file maps the wrong dimensions".into(),
            ));
        }
        Ok(set)
    }
}

/// A calibrated prediction: the composed feature-parameter point, its
/// success probability and its membership flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPrediction {
    pub x: FeatureParameterPoint,
    pub probability: f64,
    pub attainable: bool,
    pub ice_clamped: bool,
    pub angle_clamped: bool,
}

/// Composes the linear maps with the fitted model: raw latents are mapped
/// (and clamped) into feature space, joined with the gains, and scored
/// against the threshold.
pub fn calibrated_predict(
    model: &FittedModel,
    maps: &CalibrationSet,
    raw_ice: f64,
    raw_angle: f64,
    theta: &GainVector,
    eta_p: f64,
) -> Result<CalibratedPrediction> {
    let bounds = model.bounds();
    let ice = maps.ice.apply_with_bounds(raw_ice, bounds)?;
    let angle = maps.angle.apply_with_bounds(raw_angle, bounds)?;
    let x = FeatureParameterPoint::new(FeatureVector::new(ice.value, angle.value)?, *theta);
    let q = AttainmentQuery::new(model, eta_p)?;
    let probability = q.success_probability(&x)?;
    Ok(CalibratedPrediction {
        x,
        probability,
        attainable: probability >= eta_p,
        ice_clamped: ice.clamped,
        angle_clamped: angle.clamped,
    })
}
