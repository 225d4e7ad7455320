//! Desk-scale surrogate of the ramp-traversal experiment.
//!
//! A PID-controlled wheeled robot climbs an inclined plane under one of two
//! friction regimes. The longitudinal dynamics are 1-D with a scalar slip
//! accumulator; per step:
//!
//! * velocity error `e = v_set - v`, integral clamped to `±integral_clamp`,
//! * PID drive `a_cmd = kp·e + ki·E + kd·(e - e_prev)/dt`,
//! * traction limit `a_trac = μ·g·cos(angle)` with `μ` drawn once per trial,
//! * applied acceleration `a = min(a_cmd, a_trac) - g·sin(angle)`,
//! * slip accumulator `S += dt·slip_gain·max(0, a_cmd - a_trac)·(1.5 - μ)`;
//!   the trial fails as a slip when `S ≥ 1`.
//!
//! The trial succeeds when the robot covers `ramp_length` before `horizon`;
//! otherwise it times out. Two failure modes result: slipping (excess drive
//! on low friction) and timing out (drive too weak for the slope), matching
//! the two observed failure causes on the real ramp.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    DomainBounds, FeatureParameterPoint, FeatureVector, GainVector, TrialRecord, TrialSource,
};
use crate::error::{Error, Result};

/// Physical and numerical constants of the surrogate ramp rig.
///
/// The drive scale is calibrated so that the default gain bounds are all
/// meaningful: with `gravity = 1.0` the strongest proportional drive
/// (kp = 2, e = 0.4) just clears the steepest slope, the ice traction limit
/// binds at moderate gains, and the integral/derivative terms stay minor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Distance to cover, in metres.
    pub ramp_length: f64,
    /// Integration step, seconds.
    pub dt: f64,
    /// Trial budget, seconds.
    pub horizon: f64,
    /// Velocity ceiling, m/s.
    pub v_max: f64,
    /// PID set-point as a fraction of `v_max` (0.4 = 40% of max wheel speed).
    pub setpoint_fraction: f64,
    /// Friction coefficient of the bare metal ramp.
    pub mu_metal: f64,
    /// Friction coefficient with synthetic ice present.
    pub mu_ice: f64,
    /// Std-dev of the per-trial Gaussian perturbation of μ.
    pub friction_noise_std: f64,
    /// Scale of the slip accumulator integrand.
    pub slip_gain: f64,
    /// Effective gravity of the desk-scale rig, m/s².
    pub gravity: f64,
    /// Anti-windup clamp on the error integral.
    pub integral_clamp: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            ramp_length: 4.0,
            dt: 0.05,
            horizon: 30.0,
            v_max: 1.0,
            setpoint_fraction: 0.4,
            mu_metal: 0.9,
            mu_ice: 0.3,
            friction_noise_std: 0.05,
            slip_gain: 20.0,
            gravity: 1.0,
            integral_clamp: 0.5,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ramp_length", self.ramp_length),
            ("dt", self.dt),
            ("v_max", self.v_max),
            ("mu_metal", self.mu_metal),
            ("mu_ice", self.mu_ice),
            ("slip_gain", self.slip_gain),
            ("gravity", self.gravity),
            ("integral_clamp", self.integral_clamp),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !self.horizon.is_finite() || self.horizon < self.dt {
            return Err(Error::InvalidConfig(format!(
                "horizon must be at least dt, got {}",
                self.horizon
            )));
        }
        if !self.setpoint_fraction.is_finite()
            || self.setpoint_fraction <= 0.0
            || self.setpoint_fraction > 1.0
        {
            return Err(Error::InvalidConfig(format!(
                "setpoint_fraction must be in (0, 1], got {}",
                self.setpoint_fraction
            )));
        }
        if !self.friction_noise_std.is_finite() || self.friction_noise_std < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "friction_noise_std must be non-negative, got {}",
                self.friction_noise_std
            )));
        }
        if self.mu_ice >= self.mu_metal {
            return Err(Error::InvalidConfig(format!(
                "mu_ice ({}) must be below mu_metal ({})",
                self.mu_ice, self.mu_metal
            )));
        }
        Ok(())
    }
}

/// Why a trial ended without success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    None,
    Timeout,
    Slip,
}

/// One integration step of a trial trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub time: f64,
    pub position: f64,
    pub velocity: f64,
    pub pid_output: f64,
    pub traction_limit: f64,
    pub slip: f64,
}

/// Full per-step record of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    pub steps: Vec<TraceStep>,
    pub outcome: u8,
    pub failure_reason: FailureReason,
}

impl TrialTrace {
    /// CSV with header `time,position,velocity,pid_output,traction_limit,slip`.
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "time,position,velocity,pid_output,traction_limit,slip")?;
        for s in &self.steps {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.time, s.position, s.velocity, s.pid_output, s.traction_limit, s.slip
            )?;
        }
        Ok(())
    }
}

/// Runs one trial and returns its record.
pub fn run_trial(
    z: &FeatureVector,
    theta: &GainVector,
    seed: u64,
    cfg: &SimConfig,
) -> Result<TrialRecord> {
    let (record, _) = simulate(z, theta, seed, cfg, false)?;
    Ok(record)
}

/// Runs one trial and keeps the full per-step trace.
pub fn run_trial_traced(
    z: &FeatureVector,
    theta: &GainVector,
    seed: u64,
    cfg: &SimConfig,
) -> Result<(TrialRecord, TrialTrace)> {
    let (record, trace) = simulate(z, theta, seed, cfg, true)?;
    Ok((record, trace.expect("trace requested")))
}

fn simulate(
    z: &FeatureVector,
    theta: &GainVector,
    seed: u64,
    cfg: &SimConfig,
    keep_trace: bool,
) -> Result<(TrialRecord, Option<TrialTrace>)> {
    cfg.validate()?;

    // Ice counts as present from the feature midpoint up.
    let ice_present = z.ice() >= 0.5;
    let mu_base = if ice_present { cfg.mu_ice } else { cfg.mu_metal };
    let mu = if cfg.friction_noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, cfg.friction_noise_std)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .sample(&mut rng);
        (mu_base + noise).max(0.02)
    } else {
        mu_base
    };

    let angle = z.angle_deg().to_radians();
    let g_sin = cfg.gravity * angle.sin();
    let a_trac = mu * cfg.gravity * angle.cos();
    let v_set = cfg.setpoint_fraction * cfg.v_max;

    let steps = (cfg.horizon / cfg.dt).floor() as usize;
    let mut trace = keep_trace.then(|| Vec::with_capacity(steps));

    let mut position = 0.0_f64;
    let mut velocity = 0.0_f64;
    let mut integral = 0.0_f64;
    let mut prev_error = v_set; // derivative term starts at zero
    let mut slip = 0.0_f64;
    let mut outcome = 0_u8;
    let mut reason = FailureReason::Timeout;

    for step in 0..steps {
        let error = v_set - velocity;
        integral = (integral + error * cfg.dt).clamp(-cfg.integral_clamp, cfg.integral_clamp);
        let derivative = (error - prev_error) / cfg.dt;
        prev_error = error;

        let a_cmd = theta.kp() * error + theta.ki() * integral + theta.kd() * derivative;

        let excess = (a_cmd - a_trac).max(0.0);
        slip += cfg.dt * cfg.slip_gain * excess * (1.5 - mu);

        if let Some(t) = trace.as_mut() {
            t.push(TraceStep {
                time: step as f64 * cfg.dt,
                position,
                velocity,
                pid_output: a_cmd,
                traction_limit: a_trac,
                slip,
            });
        }

        if slip >= 1.0 {
            reason = FailureReason::Slip;
            break;
        }

        let a = a_cmd.min(a_trac) - g_sin;
        velocity = (velocity + a * cfg.dt).clamp(0.0, cfg.v_max);
        position += velocity * cfg.dt;

        if position >= cfg.ramp_length {
            outcome = 1;
            reason = FailureReason::None;
            break;
        }
    }

    let record = TrialRecord::new(
        FeatureParameterPoint::new(*z, *theta),
        outcome,
        seed,
        TrialSource::Simulated,
    )?;
    let trace = trace.map(|steps| TrialTrace {
        steps,
        outcome,
        failure_reason: reason,
    });
    Ok((record, trace))
}

/// Runs one trial per (plan point, seed) pair, in plan-major order.
pub fn sample_dataset(
    plan: &[(FeatureVector, GainVector)],
    seeds: &[u64],
    cfg: &SimConfig,
) -> Result<Vec<TrialRecord>> {
    let mut records = Vec::with_capacity(plan.len() * seeds.len());
    for (z, theta) in plan {
        for &seed in seeds {
            records.push(run_trial(z, theta, seed, cfg)?);
        }
    }
    Ok(records)
}

/// Grid values used by the reference sampling plan.
pub const REFERENCE_ICE: [f64; 2] = [0.0, 1.0];
pub const REFERENCE_ANGLES: [f64; 7] = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0];
pub const REFERENCE_KP: [f64; 8] = [0.05, 0.2, 0.5, 0.8, 1.1, 1.4, 1.7, 2.0];
pub const REFERENCE_KI: [f64; 3] = [0.0, 1e-5, 0.05];
pub const REFERENCE_KD: [f64; 2] = [0.0, 0.25];

/// The reference sampling plan: the full 672-point factorial over
/// [`REFERENCE_ICE`] × [`REFERENCE_ANGLES`] × [`REFERENCE_KP`] ×
/// [`REFERENCE_KI`] × [`REFERENCE_KD`] (kd fastest, row-major), trimmed to
/// 420 points by keeping exactly the indices with `i % 8 < 5`. The stride
/// drops three of every eight points while leaving at least three (ki, kd)
/// combinations in every (ice, angle, kp) cell.
pub fn reference_plan() -> Vec<(FeatureVector, GainVector)> {
    let mut plan = Vec::with_capacity(420);
    let mut index = 0_usize;
    for &ice in &REFERENCE_ICE {
        for &angle in &REFERENCE_ANGLES {
            for &kp in &REFERENCE_KP {
                for &ki in &REFERENCE_KI {
                    for &kd in &REFERENCE_KD {
                        if index % 8 < 5 {
                            plan.push((
                                FeatureVector::new(ice, angle).expect("reference feature"),
                                GainVector::new(kp, ki, kd).expect("reference gains"),
                            ));
                        }
                        index += 1;
                    }
                }
            }
        }
    }
    plan
}

/// Samples the reference plan with one trial per point, seeding trial `i`
/// with `base_seed + i` so friction noise varies across the plan.
pub fn reference_dataset(base_seed: u64, cfg: &SimConfig) -> Result<Vec<TrialRecord>> {
    let plan = reference_plan();
    let mut records = Vec::with_capacity(plan.len());
    for (i, (z, theta)) in plan.iter().enumerate() {
        records.push(run_trial(z, theta, base_seed.wrapping_add(i as u64), cfg)?);
    }
    Ok(records)
}

/// Bounds matching the reference plan (the crate-wide defaults).
pub fn reference_bounds() -> DomainBounds {
    DomainBounds::default()
}
