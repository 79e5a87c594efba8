//! Acceptance run: one line per criterion, non-zero exit if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gaussent::criterion::{ppt_min_symplectic_eigenvalue, simon_criterion};
use gaussent::factory::*;
use gaussent::locc::{run_scheme, FiveGroupPlan, SchemeVariant};
use gaussent::sampler::{estimate_functional, sample_wigner, Backend, MomentEstimate};
use gaussent::stokes::{expect_stokes, full_pipeline, joint_state_readouts, StokesConfig, StokesNetwork};
use gaussent::symplectic::displacement;
use gaussent::twocopy::*;
use gaussent::{GaussianState, Verdict};
use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))
}

fn criterion_exactness() -> Check {
    let start = Instant::now();
    let v = simon_criterion(&GaussianState::vacuum(2)).map_err(|e| e.to_string())?;
    let vm = v.margin + 0.25;
    ensure((vm - 0.25).abs() <= 1e-12, || format!("vacuum D - 4detΓ = {vm}"))?;
    let th = thermal(1.0).unwrap().tensor_product(&thermal(1.0).unwrap());
    let t = simon_criterion(&th).map_err(|e| e.to_string())?;
    let tm = t.margin + 0.25;
    ensure((tm + 15.75).abs() <= 1e-9, || format!("thermal pair D - 4detΓ = {tm}"))?;
    let s = simon_criterion(&two_mode_squeezed_vacuum(0.5).unwrap()).map_err(|e| e.to_string())?;
    let sm = s.margin + 0.25;
    let want = 2f64.cosh() / 2.0 - 0.25;
    ensure((sm - want).abs() <= 1e-9, || format!("TMSV D - 4detΓ = {sm}, want {want}"))?;
    ensure(s.verdict == Verdict::Entangled, || format!("TMSV verdict {:?}", s.verdict))?;
    within_time(start, Duration::from_secs(1))?;
    Ok(format!("vacuum {vm:.3e}, thermal {tm}, TMSV {sm:.10}"))
}

fn spectral_agreement() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..1000 {
        let s = random_state(seed, 0.5, 0.5).unwrap();
        let xi = ppt_min_symplectic_eigenvalue(&s).map_err(|e| e.to_string())?;
        let oracle = common::spectral_min(&common::mirror(s.cov()));
        worst = worst.max(((xi - oracle) / oracle).abs());
    }
    ensure(worst <= 1e-8, || format!("worst relative error {worst:.3e}"))?;
    within_time(start, Duration::from_secs(10))?;
    Ok(format!("1000 states, worst relative error {worst:.2e}"))
}

fn tmsv_law() -> Check {
    let mut worst: f64 = 0.0;
    for k in 1..=10 {
        let r = k as f64 / 10.0;
        let rep = simon_criterion(&two_mode_squeezed_vacuum(r).unwrap()).map_err(|e| e.to_string())?;
        worst = worst
            .max((rep.xi_min - (-2.0 * r).exp() / 2.0).abs())
            .max((rep.log_negativity - 2.0 * r).abs());
    }
    ensure(worst <= 1e-9, || format!("worst deviation {worst:.3e}"))?;
    Ok(format!("r = 0.1..1.0, worst deviation {worst:.2e}"))
}

fn locc_estimator() -> Check {
    let start = Instant::now();
    let s = two_mode_squeezed_vacuum(0.5).unwrap();
    let out = run_scheme(&s, &FiveGroupPlan::new(SchemeVariant::SchemeI, 100_000), 1).map_err(|e| e.to_string())?;
    let mut worst_z: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let z = (out.estimate.gamma_hat[i][j] - s.cov()[(i, j)]).abs() / out.estimate.std_errors[i][j];
            worst_z = worst_z.max(z);
        }
    }
    ensure(worst_z <= 5.0, || format!("entry off by {worst_z:.2} standard errors"))?;
    let mut points = Vec::new();
    for n in [1_000usize, 10_000, 100_000] {
        let mut mse = 0.0;
        for rep in 0..10 {
            let est = run_scheme(&s, &FiveGroupPlan::new(SchemeVariant::SchemeI, n), 7 * n as u64 + rep)
                .map_err(|e| e.to_string())?
                .estimate;
            mse += (est.gamma_matrix() - s.cov()).map(|x| x * x).mean();
        }
        points.push(((n as f64).ln(), (mse / 10.0).sqrt().ln()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = points.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    ensure((slope + 0.5).abs() <= 0.1, || format!("RMS slope {slope:.3}"))?;
    within_time(start, Duration::from_secs(60))?;
    Ok(format!("worst entry {worst_z:.2}σ, RMS slope {slope:.3}"))
}

fn stokes_consistency() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut worst_gamma: f64 = 0.0;
    for _ in 0..100 {
        let shift = displacement(Complex::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
            .unwrap()
            .direct_sum(&displacement(Complex::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).unwrap());
        let s = random_state(rng.random(), 0.5, 0.5).unwrap().apply_transform(&shift).unwrap();
        let nets = [
            StokesNetwork::SingleMode {
                mode: rng.random_range(0..2),
                phi: rng.random_range(-3.2..3.2),
                reference: random_reference(&mut rng),
            },
            StokesNetwork::TwoMode {
                phi1: rng.random_range(-3.2..3.2),
                phi2: rng.random_range(-3.2..3.2),
                reference_c: random_reference(&mut rng),
                reference_d: random_reference(&mut rng),
            },
        ];
        for net in &nets {
            let a = expect_stokes(net, &s).map_err(|e| e.to_string())?;
            let b = joint_state_readouts(net, &s).map_err(|e| e.to_string())?;
            for (x, y) in a.iter().zip(&b) {
                worst = worst.max((x.value.value - y.value.value).abs());
            }
        }
        let out = full_pipeline(&s, &StokesConfig::default(), &Backend::Analytic).map_err(|e| e.to_string())?;
        for i in 0..4 {
            for j in 0..4 {
                worst_gamma = worst_gamma.max((out.estimate.gamma_hat[i][j] - s.cov()[(i, j)]).abs());
            }
        }
    }
    ensure(worst <= 1e-10, || format!("readout mismatch {worst:.3e}"))?;
    ensure(worst_gamma <= 1e-9, || format!("reconstruction error {worst_gamma:.3e}"))?;
    Ok(format!("readouts {worst:.2e}, Γ̂ {worst_gamma:.2e}"))
}

fn exact_dets(state: &GaussianState) -> DeterminantEstimates {
    let b = state.blocks().unwrap();
    DeterminantEstimates {
        det_a: MomentEstimate::exact(b.det_a()),
        det_b: MomentEstimate::exact(b.det_b()),
        det_c: MomentEstimate::exact(b.det_c()),
        det_gamma: MomentEstimate::exact(state.det_cov()),
    }
}

fn twocopy_pipeline() -> Check {
    let start = Instant::now();
    let mut exact_misses = 0;
    for seed in 0..1000 {
        let s = random_state(seed, 0.5, 0.5).unwrap();
        let truth = simon_criterion(&s).map_err(|e| e.to_string())?;
        let r = assemble_verdict(&exact_dets(&s), CMethod::Method3);
        if truth.margin.abs() >= 1e-9 && r.report.verdict != truth.verdict {
            exact_misses += 1;
        }
    }
    ensure(exact_misses == 0, || format!("{exact_misses} exact-input disagreements"))?;
    let mut agree = 0;
    let mut far_misses = Vec::new();
    for k in 0..200u64 {
        let s = random_state(10_000 + k, 0.5, 0.5).unwrap();
        let truth = simon_criterion(&s).map_err(|e| e.to_string())?;
        let backend = Backend::Sampled { shots: 100_000, seed: k };
        let r = run_twocopy(&s, CMethod::Method3, &backend, &TwoCopyConfig::default()).map_err(|e| e.to_string())?;
        if r.verdict.report.verdict.is_separable() == truth.verdict.is_separable() {
            agree += 1;
        } else if truth.margin.abs() > 5.0 * r.verdict.margin_std_error {
            far_misses.push(k);
        }
    }
    ensure(agree >= 198, || format!("agreement {agree}/200"))?;
    ensure(far_misses.is_empty(), || format!("disagreements far from the boundary: {far_misses:?}"))?;
    within_time(start, Duration::from_secs(300))?;
    Ok(format!("exact 1000/1000, sampled agreement {agree}/200"))
}

fn reference_moments_sampled() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_z: f64 = 0.0;
    for k in 0..20 {
        let p = random_reference(&mut rng);
        let closed = reference_moments(&p).map_err(|e| e.to_string())?;
        let batch = sample_wigner(&displaced_squeezed_thermal(&p).unwrap(), 100_000, k).map_err(|e| e.to_string())?;
        let checks = [
            (estimate_functional(&batch, |x| x[0]), closed.q_mean),
            (estimate_functional(&batch, |x| x[1]), closed.p_mean),
            (estimate_functional(&batch, |x| x[0] * x[0]), closed.q2),
            (estimate_functional(&batch, |x| x[1] * x[1]), closed.p2),
            (estimate_functional(&batch, |x| x[0] * x[1]), closed.qp.re),
            (estimate_functional(&batch, |x| x[0] * x[0] - x[1] * x[1]), closed.q2_minus_p2),
            (estimate_functional(&batch, |x| x[0] * x[0] + x[1] * x[1]), closed.q2_plus_p2),
        ];
        for (est, truth) in checks {
            worst_z = worst_z.max((est.value - truth).abs() / est.std_error);
        }
    }
    ensure(worst_z <= 5.0, || format!("worst deviation {worst_z:.2}σ"))?;
    Ok(format!("20 draws, worst deviation {worst_z:.2}σ"))
}

fn reproducibility() -> Check {
    let s = random_state(3, 0.5, 0.5).unwrap();
    let twice = |f: &dyn Fn() -> Vec<u8>| f() == f();
    let payloads: [(&str, &dyn Fn() -> Vec<u8>); 5] = [
        ("sampler", &|| {
            let mut buf = Vec::new();
            sample_wigner(&s, 5000, 11).unwrap().write_csv(&mut buf).unwrap();
            buf
        }),
        ("locc_i", &|| {
            serde_json::to_vec(&run_scheme(&s, &FiveGroupPlan::new(SchemeVariant::SchemeI, 5000), 11).unwrap()).unwrap()
        }),
        ("locc_ii", &|| {
            serde_json::to_vec(&run_scheme(&s, &FiveGroupPlan::new(SchemeVariant::SchemeII, 5000), 11).unwrap()).unwrap()
        }),
        ("stokes", &|| {
            let b = Backend::Sampled { shots: 5000, seed: 11 };
            serde_json::to_vec(&full_pipeline(&s, &StokesConfig::default(), &b).unwrap()).unwrap()
        }),
        ("twocopy", &|| {
            let b = Backend::Sampled { shots: 5000, seed: 11 };
            let mut all = Vec::new();
            for m in [CMethod::Method1, CMethod::Method2, CMethod::Method3] {
                match run_twocopy(&s, m, &b, &TwoCopyConfig::default()) {
                    Ok(r) => all.extend(serde_json::to_vec(&r).unwrap()),
                    Err(e) => all.extend(e.to_string().into_bytes()),
                }
            }
            all
        }),
    ];
    let bad: Vec<&str> = payloads.iter().filter(|(_, f)| !twice(*f)).map(|(n, _)| *n).collect();
    ensure(bad.is_empty(), || format!("payload differs for {bad:?}"))?;
    Ok("sampler, locc_i, locc_ii, stokes, twocopy".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("criterion exactness", criterion_exactness),
        ("symplectic eigenvalue vs spectral oracle", spectral_agreement),
        ("TMSV analytic law", tmsv_law),
        ("LOCC estimator", locc_estimator),
        ("Stokes consistency", stokes_consistency),
        ("two-copy pipeline", twocopy_pipeline),
        ("reference-state moments", reference_moments_sampled),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("acceptance {}: PASS  {name} ({detail}; {took:.2?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("acceptance {}: FAIL  {name} ({why}; {took:.2?})", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
