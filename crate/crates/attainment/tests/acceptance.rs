//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers (run with `--nocapture` to see them).
//!
//! The expensive fixtures — the seeded reference dataset and its fitted
//! model — are built once and shared across criteria.

use std::sync::OnceLock;
use std::time::Instant;

use attainment::calibration::{calibrated_predict, CalibrationSet, LinearMap};
use attainment::domain::{
    Dimension, DomainBounds, FeatureParameterPoint, FeatureVector, GainVector, TrialRecord,
};
use attainment::gp::{FitConfig, FittedModel, GpHyperparams};
use attainment::region::{slice_grid, AttainmentQuery, SliceSpec};
use attainment::simulator::{
    reference_bounds, reference_dataset, run_trial, run_trial_traced, FailureReason, SimConfig,
};
use attainment::solver::{brute_force_nearest, solve, FreezeMask, SolverConfig};
use attainment::DIMS;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REFERENCE_SEED: u64 = 20260808;
const FIT_SEED: u64 = 7;
const ETA_P: f64 = 0.8;

struct Fixture {
    records: Vec<TrialRecord>,
    bounds: DomainBounds,
    model: FittedModel,
    fit_secs: f64,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let cfg = SimConfig::default();
        let records = reference_dataset(REFERENCE_SEED, &cfg).expect("reference dataset");
        let bounds = reference_bounds();
        let t0 = Instant::now();
        let model = FittedModel::fit(
            &records,
            &bounds,
            &FitConfig {
                seed: FIT_SEED,
                ..FitConfig::default()
            },
        )
        .expect("reference fit");
        let fit_secs = t0.elapsed().as_secs_f64();
        Fixture {
            records,
            bounds,
            model,
            fit_secs,
        }
    })
}

fn point(a: [f64; DIMS]) -> FeatureParameterPoint {
    FeatureParameterPoint::from_array(a).unwrap()
}

/// Criterion 1: the two-point linear maps fitted from the four reference
/// endpoint readings reproduce the expected slopes and intercepts to ±0.01.
#[test]
fn acceptance_1_calibration_coefficients() {
    let t0 = Instant::now();
    let ice = LinearMap::fit((0.35, 0.0), (1.26, 1.0), Dimension::Ice).unwrap();
    let angle = LinearMap::fit((0.095, 0.0), (-1.63, 30.0), Dimension::AngleDeg).unwrap();
    let elapsed = t0.elapsed();

    assert!((ice.slope - 1.10).abs() <= 0.01, "ice slope {}", ice.slope);
    assert!(
        (ice.intercept - -0.38).abs() <= 0.01,
        "ice intercept {}",
        ice.intercept
    );
    assert!(
        (angle.slope - -17.39).abs() <= 0.01,
        "angle slope {}",
        angle.slope
    );
    assert!(
        (angle.intercept - 1.65).abs() <= 0.01,
        "angle intercept {}",
        angle.intercept
    );
    assert!(elapsed.as_millis() < 100, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 1 calibration-coefficients: PASS (ice {:.4}x{:+.4}, angle {:.4}x{:+.4}, {:?})",
        ice.slope, ice.intercept, angle.slope, angle.intercept, elapsed
    );
}

/// Criterion 2: reference-region phenomenology on the seeded ~420-trial
/// dataset at η_p = 0.8 — (a) ice strictly shrinks the (angle, kp) region,
/// (b) at ice = 1 the top quartile of kp is excluded while lower kp remain,
/// (c) attainability is constant along ki and kd for ≥95% of angle columns
/// at kp = 1, no ice. Everything, including the GP fit, inside 5 minutes.
#[test]
fn acceptance_2_region_phenomenology() {
    let fx = fixture();
    let q = AttainmentQuery::new(&fx.model, ETA_P).unwrap();
    let t0 = Instant::now();

    // (a) (angle, kp) slices, ki/kd unrestricted
    let slice_at_ice = |ice: f64| {
        let spec = SliceSpec::new(Dimension::AngleDeg, Dimension::Kp, 100)
            .unwrap()
            .fix(Dimension::Ice, ice)
            .unwrap();
        slice_grid(&q, &spec).unwrap()
    };
    let with_ice = slice_at_ice(1.0).attainable_count();
    let without_ice = slice_at_ice(0.0).attainable_count();
    assert!(
        with_ice < without_ice,
        "(a) ice region {with_ice} not strictly below metal region {without_ice}"
    );

    // (b) (kp, ice) slice, angle/ki/kd unrestricted; look at the ice = 1 edge
    let kp_ice = slice_grid(
        &q,
        &SliceSpec::new(Dimension::Kp, Dimension::Ice, 100).unwrap(),
    )
    .unwrap();
    let res = 100;
    let ice1 = res - 1;
    let (kp_lo, kp_hi) = fx.bounds.interval(Dimension::Kp);
    let quartile = kp_hi - 0.25 * (kp_hi - kp_lo);
    let top_attainable = (0..res)
        .filter(|&i| kp_ice.coords[0][i] >= quartile && kp_ice.cell(i, ice1).attainable)
        .count();
    let low_attainable = (0..res)
        .filter(|&i| kp_ice.coords[0][i] < quartile && kp_ice.cell(i, ice1).attainable)
        .count();
    assert_eq!(
        top_attainable, 0,
        "(b) {top_attainable} top-quartile kp cells attainable at ice=1"
    );
    assert!(low_attainable > 0, "(b) no lower-kp cell attainable at ice=1");

    // (c) (angle, ki) and (angle, kd) at kp = 1, no ice
    let mut constancy = Vec::new();
    for dim in [Dimension::Ki, Dimension::Kd] {
        let spec = SliceSpec::new(Dimension::AngleDeg, dim, 100)
            .unwrap()
            .fix(Dimension::Ice, 0.0)
            .unwrap()
            .fix(Dimension::Kp, 1.0)
            .unwrap();
        let grid = slice_grid(&q, &spec).unwrap();
        let constant_cols = (0..res)
            .filter(|&i| {
                let first = grid.cell(i, 0).attainable;
                (1..res).all(|j| grid.cell(i, j).attainable == first)
            })
            .count();
        assert!(
            constant_cols >= 95,
            "(c) only {constant_cols}/100 constant columns along {dim}"
        );
        constancy.push((dim, constant_cols));
    }

    let total = fx.fit_secs + t0.elapsed().as_secs_f64();
    assert!(total < 300.0, "took {total:.1}s including fit");
    println!(
        "ACCEPTANCE 2 region-phenomenology: PASS (ice {with_ice} < metal {without_ice}; \
         top-quartile 0, lower {low_attainable}; constancy {constancy:?}; {total:.1}s total)"
    );
}

/// Criterion 3: fitting the ~420-point reference dataset stays under 60 s.
#[test]
fn acceptance_3_fit_budget() {
    let fx = fixture();
    assert!(fx.records.len() >= 400, "only {} records", fx.records.len());
    assert!(
        fx.fit_secs < 60.0,
        "fit took {:.1}s on {} records",
        fx.fit_secs,
        fx.records.len()
    );
    println!(
        "ACCEPTANCE 3 fit-budget: PASS ({} records fitted in {:.1}s)",
        fx.records.len(),
        fx.fit_secs
    );
}

/// Criterion 4: on 20 seeded random failing queries, adaptive and
/// counterfactual solve distances stay within two grid-cell diagonals of the
/// res-200 brute-force oracle; feasible solutions are members; frozen
/// dimensions are preserved bitwise.
#[test]
fn acceptance_4_solver_oracle_equivalence() {
    let fx = fixture();
    let q = AttainmentQuery::new(&fx.model, ETA_P).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(424242);

    let mut failing = Vec::new();
    while failing.len() < 20 {
        let mut a = [0.0; DIMS];
        for (d, v) in a.iter_mut().enumerate() {
            let dim = Dimension::from_index(d).unwrap();
            let (lo, hi) = fx.bounds.interval(dim);
            *v = rng.random_range(lo..hi);
        }
        let x = point(a);
        if !q.is_attainable(&x).unwrap() {
            failing.push(x);
        }
    }

    let grid_res = 200;
    let mut checked = 0;
    for (i, x) in failing.iter().enumerate() {
        for (mode, mask) in [
            ("adaptive", FreezeMask::adaptive()),
            ("counterfactual", FreezeMask::counterfactual()),
        ] {
            let cfg = SolverConfig {
                seed: 1000 + i as u64,
                ..SolverConfig::default()
            };
            let s = solve(&q, x, &mask, &cfg).unwrap();
            let o = brute_force_nearest(&q, x, &mask, grid_res).unwrap();
            assert_eq!(
                s.feasible, o.feasible,
                "{mode} #{i}: solver feasible {} vs oracle {}",
                s.feasible, o.feasible
            );
            for r in [&s, &o] {
                let xs = r.x_star.to_array();
                let xa = x.to_array();
                for dim in Dimension::ALL {
                    if mask.is_frozen(dim) {
                        assert_eq!(
                            xs[dim.index()].to_bits(),
                            xa[dim.index()].to_bits(),
                            "{mode} #{i}: frozen {dim} drifted"
                        );
                    }
                }
                if r.feasible {
                    assert!(
                        q.is_attainable(&r.x_star).unwrap(),
                        "{mode} #{i}: feasible result not attainable"
                    );
                }
            }
            if o.feasible {
                let free = mask.free_indices().len() as f64;
                let cell_diag = free.sqrt() / (grid_res as f64 - 1.0);
                assert!(
                    s.distance <= o.distance + 2.0 * cell_diag,
                    "{mode} #{i}: solver {} vs oracle {} (+{})",
                    s.distance,
                    o.distance,
                    2.0 * cell_diag
                );
                checked += 1;
            }
        }
    }
    println!(
        "ACCEPTANCE 4 solver-oracle: PASS (20 failing queries x2 modes, {checked} feasible distance checks)"
    );
}

/// Criterion 5: simulator physics invariants with zero friction noise —
/// (a) ice on a slope steeper than its friction cone fails for 100 random
/// gain vectors, (b) a kp witness pair shows success turning into slip
/// failure as kp rises on ice, (c) identical seeds reproduce identical
/// traces bitwise.
#[test]
fn acceptance_5_simulator_invariants() {
    let noise_free = SimConfig {
        friction_noise_std: 0.0,
        ..SimConfig::default()
    };

    // (a) tan(angle) > mu_ice = 0.3 means traction can never beat gravity
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for i in 0..100 {
        let kp = rng.random_range(0.0..2.0);
        let ki = rng.random_range(0.0..0.1);
        let kd = rng.random_range(0.0..0.5);
        let angle = rng.random_range(17.0..30.0);
        let z = FeatureVector::new(1.0, angle).unwrap();
        let theta = GainVector::new(kp, ki, kd).unwrap();
        let r = run_trial(&z, &theta, i, &noise_free).unwrap();
        assert_eq!(r.y, 0, "gains ({kp:.3},{ki:.4},{kd:.3}) at {angle:.1}°");
    }

    // (b) slip witness on ice at a climbable angle
    let z = FeatureVector::new(1.0, 5.0).unwrap();
    let lo = run_trial(&z, &GainVector::new(0.8, 0.0, 0.0).unwrap(), 0, &noise_free).unwrap();
    let (hi, hi_trace) =
        run_trial_traced(&z, &GainVector::new(2.0, 0.0, 0.0).unwrap(), 0, &noise_free).unwrap();
    assert_eq!(lo.y, 1, "kp_lo should succeed");
    assert_eq!(hi.y, 0, "kp_hi should fail");
    assert_eq!(hi_trace.failure_reason, FailureReason::Slip);

    // (c) bitwise trace determinism under friction noise
    let noisy = SimConfig::default();
    let z = FeatureVector::new(1.0, 9.0).unwrap();
    let theta = GainVector::new(1.2, 0.01, 0.2).unwrap();
    let (r1, t1) = run_trial_traced(&z, &theta, 917, &noisy).unwrap();
    let (r2, t2) = run_trial_traced(&z, &theta, 917, &noisy).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(t1.steps.len(), t2.steps.len());
    for (a, b) in t1.steps.iter().zip(&t2.steps) {
        for (va, vb) in [
            (a.time, b.time),
            (a.position, b.position),
            (a.velocity, b.velocity),
            (a.pid_output, b.pid_output),
            (a.traction_limit, b.traction_limit),
            (a.slip, b.slip),
        ] {
            assert_eq!(va.to_bits(), vb.to_bits());
        }
    }
    println!(
        "ACCEPTANCE 5 simulator-invariants: PASS (100 steep-ice failures, slip witness kp 0.8→2.0, bitwise traces)"
    );
}

/// Criterion 6: GP numerical properties — Gram PSD on 50 random point sets,
/// near-interpolation at noise 1e-6, prior reversion far from data, and
/// variance monotone non-increasing under data addition.
#[test]
fn acceptance_6_gp_numerics() {
    use attainment::gp::rbf_kernel;
    use attainment::TrialSource;

    // PSD: min eigenvalue of the noise-free Gram ≥ -1e-8
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut min_eig_seen = f64::INFINITY;
    for _ in 0..50 {
        let n = rng.random_range(5..=50);
        let pts: Vec<[f64; DIMS]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
            .collect();
        let ls: [f64; DIMS] =
            std::array::from_fn(|_| (rng.random_range(0.05_f64.ln()..3.0_f64.ln())).exp());
        let signal = (rng.random_range(0.1_f64.ln()..2.0_f64.ln())).exp();
        let h = GpHyperparams::new(ls, signal, 1e-6).unwrap();
        let mut k = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = rbf_kernel(&pts[i], &pts[j], &h);
            }
        }
        let eigs = nalgebra::SymmetricEigen::new(k).eigenvalues;
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        min_eig_seen = min_eig_seen.min(min);
        assert!(min >= -1e-8, "min eigenvalue {min}");
    }

    // Training set: well-separated points in [0, 0.5]^5 so a far corner
    // reverts to the prior. Labels from a deterministic rule.
    let bounds = DomainBounds::default();
    let mut pts: Vec<[f64; DIMS]> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    while pts.len() < 25 {
        let cand: [f64; DIMS] = std::array::from_fn(|_| rng.random_range(0.0..0.5));
        let min_d2 = pts
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&cand)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        if min_d2 > 0.25 * 0.25 {
            pts.push(cand);
        }
    }
    let to_record = |u: &[f64; DIMS], y: u8| {
        let raw = [u[0], u[1] * 30.0, u[2] * 2.0, u[3] * 0.1, u[4] * 0.5];
        TrialRecord::new(point(raw), y, 0, TrialSource::Simulated).unwrap()
    };
    let records: Vec<TrialRecord> = pts
        .iter()
        .enumerate()
        .map(|(i, u)| to_record(u, (i % 2) as u8))
        .collect();
    let h = GpHyperparams::new([0.2; DIMS], 1.0, 1e-6).unwrap();
    let model = FittedModel::fit(&records, &bounds, &FitConfig::with_fixed(h)).unwrap();

    // near-interpolation at the training points
    let mut worst = 0.0_f64;
    for r in &records {
        let (mu, _) = model.predict(&r.x).unwrap();
        worst = worst.max((mu - r.y as f64).abs());
    }
    assert!(worst <= 0.01, "worst interpolation gap {worst}");

    // prior reversion at the far corner
    let far = point([1.0, 30.0, 2.0, 0.1, 0.5]);
    let (mu, var) = model.predict(&far).unwrap();
    assert!(
        (mu - model.prior_mean()).abs() <= 0.01,
        "far mean {mu} vs prior {}",
        model.prior_mean()
    );
    assert!((var - 1.0).abs() <= 0.01, "far variance {var}");

    // variance monotone non-increasing when a training point is added
    let extra = to_record(&[0.55, 0.55, 0.55, 0.55, 0.55], 1);
    let mut grown = records.clone();
    grown.push(extra);
    let h = GpHyperparams::new([0.2; DIMS], 1.0, 1e-6).unwrap();
    let model_grown = FittedModel::fit(&grown, &bounds, &FitConfig::with_fixed(h)).unwrap();
    let mut worst_increase = f64::NEG_INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let u: [f64; DIMS] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let probe = to_record(&u, 0).x;
        let (_, v_small) = model.predict(&probe).unwrap();
        let (_, v_big) = model_grown.predict(&probe).unwrap();
        worst_increase = worst_increase.max(v_big - v_small);
        assert!(
            v_big <= v_small + 1e-9,
            "variance grew from {v_small} to {v_big} at {u:?}"
        );
    }
    println!(
        "ACCEPTANCE 6 gp-numerics: PASS (min eig {min_eig_seen:.2e}, interp gap {worst:.2e}, \
         worst variance increase {worst_increase:.2e})"
    );
}

/// Criterion 7: hide an affine encoder over the feature axes, regenerate the
/// four endpoint readings, refit the calibration and check that calibrated
/// predictions agree with ground-truth-feature predictions to 0.02 mean
/// absolute probability over 200 random points.
#[test]
fn acceptance_7_calibration_fine_tuning() {
    let fx = fixture();

    // Hidden encoder: feature → raw latent (chosen so the endpoint readings
    // are the reference endpoint readings used throughout).
    let encode_ice = |ice: f64| 0.91 * ice + 0.35;
    let encode_angle = |angle: f64| -0.0575 * angle + 0.095;

    let ice_map = LinearMap::fit(
        (encode_ice(0.0), 0.0),
        (encode_ice(1.0), 1.0),
        Dimension::Ice,
    )
    .unwrap();
    let angle_map = LinearMap::fit(
        (encode_angle(0.0), 0.0),
        (encode_angle(30.0), 30.0),
        Dimension::AngleDeg,
    )
    .unwrap();
    let maps = CalibrationSet::new(ice_map, angle_map).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(20202);
    let mut abs_err_sum = 0.0;
    let n = 200;
    let q = AttainmentQuery::new(&fx.model, ETA_P).unwrap();
    for _ in 0..n {
        let ice = rng.random_range(0.0..1.0);
        let angle = rng.random_range(0.0..30.0);
        let theta = GainVector::new(
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..0.1),
            rng.random_range(0.0..0.5),
        )
        .unwrap();
        let truth = q
            .success_probability(&FeatureParameterPoint::new(
                FeatureVector::new(ice, angle).unwrap(),
                theta,
            ))
            .unwrap();
        let calibrated = calibrated_predict(
            &fx.model,
            &maps,
            encode_ice(ice),
            encode_angle(angle),
            &theta,
            ETA_P,
        )
        .unwrap();
        abs_err_sum += (calibrated.probability - truth).abs();
    }
    let mae = abs_err_sum / n as f64;
    assert!(mae <= 0.02, "mean absolute probability error {mae}");
    println!("ACCEPTANCE 7 calibration-fine-tuning: PASS (MAE {mae:.2e} over {n} points)");
}
