//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ghbs_core::constitutive::{youngs_modulus, ElasticParams, HydrateSandModel, MaterialState, PlasticParams};
use ghbs_core::inverse::synthetic::PlantedRidge;
use ghbs_core::inverse::{misfit, misfit_gradient, Dataset, ForwardModel, NoiseModel, NoiseSettings, TriaxForward};
use ghbs_core::mcmc::{ess, metropolis, reconstruct, sample_inactive, ChainConfig, InactiveConfig};
use ghbs_core::pipeline::io::read_toml;
use ghbs_core::pipeline::{Pipeline, PipelineConfig, ReconstructSummary};
use ghbs_core::prior::{in_unit_box, sample_prior, PriorBox};
use ghbs_core::subspace::{estimate_c, heuristic_sample_count, subspace_distance, ActiveSubspace};
use ghbs_core::surrogate::SurrogateFit;
use ghbs_core::tensor::SymTensor2;
use ghbs_core::triax::{default_stations, LoadingSchedule, TriaxialTest};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn constitutive_suite() -> Outcome {
    let prior = PriorBox::default();
    let ep = ElasticParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut plastic_steps = 0;
    let mut worst_yield = 0.0f64;
    let mut worst_dilatancy = 0.0f64;
    let mut worst_superposition = 0.0f64;
    for draw in 0..200 {
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let pp = prior.to_physical(&x).map_err(|e| e.to_string())?;
        let model = HydrateSandModel::new(ep, pp, 1e6, Default::default()).map_err(|e| e.to_string())?;
        let mut start = MaterialState::with_stress(SymTensor2::isotropic(-1e6));
        start.lambda_acc = rng.random_range(0.0..0.05);
        start.lambda_dot = rng.random_range(0.0..2e-3);
        let dt = 10.0;

        // compressive deviatoric increment large enough to yield
        let e = rng.random_range(5e-3..3e-2);
        let nu = rng.random_range(0.1..0.5);
        let shear = |r: &mut ChaCha8Rng| r.random_range(-0.1..0.1) * e;
        let d = SymTensor2::new(-e, nu * e, nu * e, shear(&mut rng), shear(&mut rng), shear(&mut rng));
        let next = model.integrate_step(&start, &d, dt).map_err(|e| format!("draw {draw}: {e}"))?;
        let dl = next.lambda_acc - start.lambda_acc;
        if dl < 0.0 {
            return Err(format!("draw {draw}: negative plastic increment {dl:e}"));
        }
        if dl > 0.0 {
            plastic_steps += 1;
            worst_yield = worst_yield.max(next.yield_value(&pp).abs() / model.tol_yield());
            let dep = next.eps_p - start.eps_p;
            let vol = dep.trace();
            let dev = (2.0f64 / 3.0).sqrt() * dep.dev().norm();
            worst_dilatancy = worst_dilatancy.max(rel(vol / dev, next.hardening(&pp).beta));
        }

        // elastic superposition from the isotropic state
        let small = |r: &mut ChaCha8Rng| SymTensor2::from_components([0; 6].map(|_| r.random_range(-1e-6..1e-6)));
        let (a, b) = (small(&mut rng), small(&mut rng));
        let base = MaterialState::with_stress(SymTensor2::isotropic(-1e6));
        let sa = model.integrate_step(&base, &a, dt).map_err(|e| e.to_string())?.sigma - base.sigma;
        let sb = model.integrate_step(&base, &b, dt).map_err(|e| e.to_string())?.sigma - base.sigma;
        let sab = model.integrate_step(&base, &(a + b), dt).map_err(|e| e.to_string())?.sigma - base.sigma;
        worst_superposition = worst_superposition.max((sab - (sa + sb)).max_abs() / sab.max_abs());
    }
    check(
        plastic_steps >= 150 && worst_yield <= 1.0 && worst_dilatancy <= 1e-8 && worst_superposition <= 1e-10,
        format!(
            "{plastic_steps}/200 plastic, max |F|/tol {worst_yield:.2e}, dilatancy rel err {worst_dilatancy:.2e}, superposition rel err {worst_superposition:.2e}"
        ),
    )
}

fn elastic_oracle() -> Outcome {
    let ep = ElasticParams::default();
    let pp = PlasticParams {
        cohesion: 1e12,
        ..PriorBox::default().to_physical(&[0.0; 8]).unwrap()
    };
    let test = TriaxialTest::new(ep, LoadingSchedule::default());
    let traj = test.simulate(&pp).map_err(|e| e.to_string())?;
    let e = youngs_modulus(&ep, test.schedule.sigma_c);
    let target_ratio = 1.0 - 2.0 * ep.poisson;
    let mut worst_e = 0.0f64;
    let mut worst_v = 0.0f64;
    for w in traj.points.windows(2) {
        let da = w[1].axial_strain - w[0].axial_strain;
        worst_e = worst_e.max(rel((w[1].q - w[0].q) / da.abs(), e));
        worst_v = worst_v.max(rel((w[1].vol_strain - w[0].vol_strain) / da, target_ratio));
    }
    check(
        worst_e <= 1e-6 && worst_v <= 1e-6,
        format!("dq/d|eps_a| rel err {worst_e:.2e}, d eps_v/d eps_a rel err {worst_v:.2e}"),
    )
}

fn step_halving() -> Outcome {
    let pp = PriorBox::default().to_physical(&[0.0; 8]).unwrap();
    let sched = LoadingSchedule::default();
    let stations = default_stations(&sched, 23);
    let coarse = TriaxialTest::new(ElasticParams::default(), sched)
        .qoi(&pp, &stations)
        .map_err(|e| e.to_string())?;
    let fine = TriaxialTest::new(ElasticParams::default(), sched.refined(2))
        .qoi(&pp, &stations)
        .map_err(|e| e.to_string())?;
    let mut worst = (0.0f64, "");
    for i in 0..stations.len() {
        for (err, name) in [
            (rel(coarse.vol_strain[i], fine.vol_strain[i]), "vol_strain"),
            (rel(coarse.shear_stress[i], fine.shear_stress[i]), "shear_stress"),
        ] {
            if err > worst.0 {
                worst = (err, name);
            }
        }
    }
    check(worst.0 < 0.01, format!("max station rel diff {:.3e} ({})", worst.0, worst.1))
}

/// Synthetic triaxial data at the prior midpoint with 2% noise.
fn synthetic_triaxial() -> (TriaxForward, Dataset, NoiseModel) {
    let stations = default_stations(&LoadingSchedule::default(), 23);
    let fwd = TriaxForward {
        test: TriaxialTest::new(ElasticParams::default(), LoadingSchedule::default()),
        prior: PriorBox::default(),
        stations: stations.clone(),
    };
    let clean = fwd.evaluate(&[0.0; 8]).unwrap();
    let clean_ds = Dataset::from_vector(stations.clone(), &clean).unwrap();
    let noise = NoiseModel::relative_to(&clean_ds, &NoiseSettings::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d: Vec<f64> = clean
        .iter()
        .zip(&noise.sigma)
        .map(|(g, s)| g + s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (fwd, Dataset::from_vector(stations, &d).unwrap(), noise)
}

fn gradient_consistency() -> Outcome {
    let (fwd, ds, noise) = synthetic_triaxial();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = 1e-4;
    let mut worst = 0.0f64;
    for point in 0..20 {
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-0.9..0.9)).collect();
        let s = misfit_gradient(&x, &ds, &noise, &fwd, 1e-4).map_err(|e| format!("point {point}: {e}"))?;
        let gnorm = s.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        // along the gradient itself and along a random direction
        let random: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
        for dir in [s.grad.clone(), random] {
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let v: Vec<f64> = dir.iter().map(|a| a / norm).collect();
            let shifted = |sign: f64| -> Vec<f64> { x.iter().zip(&v).map(|(a, b)| a + sign * t * b).collect() };
            let fp = misfit(&shifted(1.0), &ds, &noise, &fwd).map_err(|e| e.to_string())?;
            let fm = misfit(&shifted(-1.0), &ds, &noise, &fwd).map_err(|e| e.to_string())?;
            let fd = (fp - fm) / (2.0 * t);
            let analytic: f64 = s.grad.iter().zip(&v).map(|(a, b)| a * b).sum();
            worst = worst.max((fd - analytic).abs() / gnorm);
        }
    }
    check(worst <= 0.01, format!("max directional error / |grad| {worst:.3e} over 20 points"))
}

fn planted_subspace() -> Outcome {
    let fwd = PlantedRidge::standard();
    let n = 8;
    let m = fwd.curvature.len();
    let stations: Vec<f64> = (1..=m).map(|i| i as f64).collect();
    let ds = Dataset::from_vector(stations, &fwd.evaluate(&[0.0; 8]).unwrap()).unwrap();
    let noise = NoiseModel::new(vec![1.0; 2 * m]).unwrap();
    let xs = sample_prior(&mut ChaCha8Rng::seed_from_u64(5), 500, n);
    let grads: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| misfit_gradient(x, &ds, &noise, &fwd, 1e-4).map(|s| s.grad))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let spec = estimate_c(&grads).map_err(|e| e.to_string())?;
    let ratio = spec.eigenvalues[0] / spec.eigenvalues[2];
    let mut seed = DMatrix::identity(n, n);
    for i in 0..n {
        seed[(i, 0)] = fwd.w1[i];
        seed[(i, 1)] = fwd.w2[i];
    }
    let truth = seed.qr().q();
    let dist = subspace_distance(&spec.eigenvectors, &truth, 2);
    check(
        ratio > 100.0 && dist < 0.05 && spec.suggested_dimension() == 2,
        format!(
            "lambda1/lambda3 {ratio:.1}, 2D distance {dist:.2e}, largest gap at {}",
            spec.suggested_dimension()
        ),
    )
}

fn heuristic() -> Outcome {
    let n = heuristic_sample_count(10.0, 8, 8.0).map_err(|e| e.to_string())?;
    check(n == 167, format!("count {n}"))
}

fn config(out: &Path, body: &str) -> PipelineConfig {
    let text = format!("out = {:?}\n{body}", out.display().to_string());
    PipelineConfig::from_toml_str(&text, "acceptance").unwrap()
}

fn planted_surrogate() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = config(
        dir.path(),
        "[forward]\nmodel = \"planted-ridge\"\n[noise]\nabsolute = 1.0\n[synthetic]\nadd_noise = false\n[subspace]\ndim = 2\nn_boot = 30\n",
    );
    let p = Pipeline::new(cfg).map_err(|e| e.to_string())?;
    for stage in ["synth-data", "gradients", "subspace", "surrogate"] {
        p.run(stage).map_err(|e| e.to_string())?;
    }
    let fit: SurrogateFit = read_toml(&p.path("surrogate_k2.toml")).map_err(|e| e.to_string())?;
    check(fit.r2 >= 0.95, format!("r2 {:.4} over {} samples", fit.r2, fit.n_samples))
}

fn mcmc_oracles() -> Outcome {
    // 1D standard Gaussian
    let cfg = ChainConfig {
        n_steps: 400_000,
        burn_in: 20_000,
        proposal_scale: 5.0,
        proposal_cov: None,
        seed: 3,
    };
    let chain = metropolis(|y| -0.5 * y[0] * y[0], &[0.0], &cfg).map_err(|e| e.to_string())?;
    let s = chain.component(0);
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s.len() - 1) as f64;

    // AR(1) effective sample size
    let phi: f64 = 0.9;
    let n = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut series = Vec::with_capacity(n);
    let mut v: f64 = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
    for _ in 0..n {
        v = phi * v + rng.sample::<f64, _>(StandardNormal);
        series.push(v);
    }
    let expected = (1.0 - phi) / (1.0 + phi) * n as f64;
    let ess_err = rel(ess(&series, None), expected);

    // inactive sampling under a random rotation never leaves the box
    let q = DMatrix::<f64>::from_fn(8, 8, |_, _| rng.sample(StandardNormal)).qr().q();
    let sub = ActiveSubspace::from_basis(&q, 2).map_err(|e| e.to_string())?;
    let ys: Vec<Vec<f64>> = sample_prior(&mut rng, 200, 8).iter().map(|x| sub.project_active(x)).collect();
    let icfg = InactiveConfig {
        proposal_scale: 3.0,
        ..InactiveConfig::preset_2d(9)
    };
    let zs: Vec<Vec<Vec<f64>>> = sample_inactive(&ys, &sub, &icfg)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|c| c.z)
        .collect();
    let mut out_of_box = 0;
    let mut total = 0;
    for (y, zs) in ys.iter().zip(&zs) {
        for z in zs {
            total += 1;
            out_of_box += usize::from(!in_unit_box(&sub.reconstruct(y, z)));
        }
    }
    let assembled = reconstruct(&ys, &zs, &sub, &PriorBox::default()).is_ok();
    check(
        rel(var, 1.0) <= 0.05 && ess_err <= 0.25 && out_of_box == 0 && assembled,
        format!(
            "Gaussian variance {var:.4}, AR(1) ESS rel err {ess_err:.3}, {out_of_box}/{total} reconstructions out of box"
        ),
    )
}

fn end_to_end_recovery() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = config(
        dir.path(),
        "[gradients]\nn_samples = 120\n[subspace]\ndim = 2\n[mcmc]\nn_steps = 200000\nburn_in = 20000\n",
    );
    let p = Pipeline::new(cfg).map_err(|e| e.to_string())?;
    p.run("all").map_err(|e| e.to_string())?;
    let rec: ReconstructSummary = read_toml(&p.path("reconstruct_k2.toml")).map_err(|e| e.to_string())?;
    let inside = rec.mean_normalized.iter().all(|v| v.abs() <= 1.0);
    check(
        rec.fraction_within_3sigma >= 0.9 && inside,
        format!(
            "{:.1}% of 46 observations within 3 sigma, {} posterior samples",
            100.0 * rec.fraction_within_3sigma,
            rec.n_samples
        ),
    )
}

fn reproducibility() -> Outcome {
    let body = "[gradients]\nn_samples = 40\n[subspace]\ndim = 2\n[mcmc]\nn_steps = 10000\nburn_in = 1000\n";
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg_b = config(b.path(), body);
    cfg_b.workers = 1;
    Pipeline::new(config(a.path(), body)).and_then(|p| p.run("all")).map_err(|e| e.to_string())?;
    Pipeline::new(cfg_b).and_then(|p| p.run("all")).map_err(|e| e.to_string())?;
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let x = std::fs::read(a.path().join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(name)).unwrap_or_default();
        if x != y {
            differing.push(name.to_string_lossy().into_owned());
        }
    }
    let count_b = std::fs::read_dir(b.path()).map_err(|e| e.to_string())?.count();
    check(
        differing.is_empty() && count_b == names.len(),
        format!("{} files compared, differing: {differing:?}", names.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("constitutive correctness", constitutive_suite),
        ("elastic oracle", elastic_oracle),
        ("discretization convergence", step_halving),
        ("gradient consistency", gradient_consistency),
        ("active-subspace oracle", planted_subspace),
        ("heuristic sample count", heuristic),
        ("planted-ridge surrogate quality", planted_surrogate),
        ("MCMC statistical oracles", mcmc_oracles),
        ("end-to-end synthetic recovery", end_to_end_recovery),
        ("bitwise reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
