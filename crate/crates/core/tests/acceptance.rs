//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; the process fails if any criterion does.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use contrastive_moments::density1d::{band_with_mass, DensityModel};
use contrastive_moments::estimator::{candidates_with_data, isotropic_candidates, AlphaConfig, CandidateKind, CandidateSet};
use contrastive_moments::experiment::{
    self, dimension_trend, mass_trend_non_increasing, median, Cell, SweepConfig, TrialRecord,
};
use contrastive_moments::margin::{select, sin_theta, DEFAULT_MIN_SIDE_FRACTION};
use contrastive_moments::oracle::{self, HalfLine};
use contrastive_moments::quadrature::integrate;
use contrastive_moments::rng::{derive_seed, seeded, stream};
use contrastive_moments::sampler::{generate, generate_unstandardized, make_instance, random_rotation, AffineMode};
use ndarray::{Array1, Array2};
use rand::Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn moment_ratio_monotone() -> Outcome {
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.05).collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for law in [HalfLine::HalfGaussian, HalfLine::Exponential { gamma: 1.0 }] {
        let r = oracle::mr_monotonicity(law, &grid).map_err(fail)?;
        let strict = r.values.windows(2).all(|w| w[1] < w[0]);
        ok &= r.verdict && strict && r.worst_violation <= 1e-8;
        lines.push(format!("{} worst={:.2e}", law.name(), r.worst_violation));
    }
    check(ok, lines.join(", "))
}

fn exponential_closed_forms() -> Outcome {
    let mut rng = seeded(20);
    let mut worst_nk = 0.0f64;
    for _ in 0..20 {
        let beta = rng.random_range(0.5..2.0);
        let gamma = rng.random_range(0.5..2.0);
        let t = rng.random_range(0.0..5.0);
        for k in 0..=4 {
            let closed = oracle::exp_nk(beta, gamma, k, t).map_err(fail)?;
            let q = integrate(
                |x| x.powi(k as i32) * beta * (-gamma * x).exp(),
                t,
                t + 80.0 / gamma,
                1e-13,
                1e-15,
            );
            worst_nk = worst_nk.max((closed - q.value).abs());
        }
    }
    let mut min_h = f64::INFINITY;
    let mut worst_identity = 0.0f64;
    for (beta, gamma) in [(1.0, 1.0), (2.0, 0.5), (0.5, 3.0), (1.5, 1.5)] {
        for i in 0..=200 {
            let t = i as f64 * 0.05;
            let h = oracle::exp_h(beta, gamma, t).map_err(fail)?;
            let closed = oracle::exp_h_closed(beta, gamma, t);
            min_h = min_h.min(h);
            worst_identity = worst_identity.max((h - closed).abs() / closed.abs().max(1.0));
        }
    }
    check(
        worst_nk <= 1e-9 && min_h > 0.0 && worst_identity <= 1e-9,
        format!("N_k err={worst_nk:.2e}, min H={min_h:.3e}, identity err={worst_identity:.2e}"),
    )
}

/// (left tail, band mass) pairs; none puts equal mass on both sides.
const ASYMMETRIC_SPLITS: [(f64, f64); 10] = [
    (0.05, 0.2),
    (0.1, 0.3),
    (0.02, 0.5),
    (0.3, 0.1),
    (0.5, 0.2),
    (0.6, 0.3),
    (0.15, 0.15),
    (0.25, 0.4),
    (0.01, 0.1),
    (0.7, 0.2),
];

fn contrastive_mean_roots() -> Outcome {
    let grid: Vec<f64> = (0..=98).map(|i| -0.5 + i as f64 * 0.005).collect();
    let mut most_changes = 0;
    let mut worst_symmetric = 0.0f64;
    for model in DensityModel::ALL {
        for (left, mass) in ASYMMETRIC_SPLITS {
            let band = band_with_mass(model, left, mass).map_err(fail)?;
            let changes = oracle::count_sign_changes_f(model, &band, &grid).map_err(fail)?;
            most_changes = most_changes.max(changes);
        }
        for mass in [0.05, 0.1, 0.2, 0.4, 0.6] {
            let band = band_with_mass(model, (1.0 - mass) / 2.0, mass).map_err(fail)?;
            for &alpha in &grid {
                let f = oracle::f_alpha(model, &band, alpha).map_err(fail)?;
                worst_symmetric = worst_symmetric.max(f.abs());
            }
        }
    }
    check(
        most_changes <= 1 && worst_symmetric <= 1e-9,
        format!("max sign changes={most_changes}, max |F| symmetric={worst_symmetric:.2e}"),
    )
}

fn spectral_gap_positive() -> Outcome {
    let mut min_s = f64::INFINITY;
    let mut worst_zero = 0.0f64;
    for model in DensityModel::ALL {
        for mass in [0.1, 0.2, 0.4] {
            let band = band_with_mass(model, (1.0 - mass) / 2.0, mass).map_err(fail)?;
            min_s = min_s.min(oracle::s_alpha(model, &band, -0.1).map_err(fail)?);
            worst_zero = worst_zero.max(oracle::s_alpha(model, &band, 0.0).map_err(fail)?.abs());
        }
    }
    check(
        min_s > 0.0 && worst_zero <= 1e-10,
        format!("min S(-0.1)={min_s:.3e}, max |S(0)|={worst_zero:.2e}"),
    )
}

fn desk_config(a: f64, b: f64) -> SweepConfig {
    SweepConfig {
        a,
        b,
        dim: 10,
        samples: 200_000,
        trials: 10,
        seed: 1,
        affine: "random".into(),
        kappa_max: 5.0,
        ..SweepConfig::default()
    }
}

fn run_single_cell(cfg: &SweepConfig) -> Vec<TrialRecord> {
    let cell = Cell { model: cfg.family, a: cfg.a, b: cfg.b, dim: cfg.dim };
    experiment::run_cells(cfg, &[cell])
}

fn symmetric_recovery() -> Outcome {
    let records = run_single_cell(&desk_config(-0.5, 0.5));
    if let Some(bad) = records.iter().find(|r| !r.is_ok()) {
        return Err(format!("trial status {}", bad.status));
    }
    let m = median(records.iter().map(|r| r.sin_theta_selected));
    let cov = records.iter().filter(|r| r.selected_kind == Some(CandidateKind::Cov)).count();
    check(m <= 0.2 && cov >= 8, format!("median sin={m:.4}, cov chosen {cov}/10"))
}

fn asymmetric_recovery() -> Outcome {
    let records = run_single_cell(&desk_config(-2.0, 0.5));
    if let Some(bad) = records.iter().find(|r| !r.is_ok()) {
        return Err(format!("trial status {}", bad.status));
    }
    let m = median(records.iter().map(TrialRecord::best_mean));
    check(m <= 0.25, format!("median best-mean sin={m:.4}"))
}

fn isotropic_path() -> Outcome {
    let e1 = {
        let mut v = Array1::zeros(10);
        v[0] = 1.0;
        v
    };
    let mut mean_sins = Vec::new();
    let mut eig_sins = Vec::new();
    for seed in 0..10u64 {
        for (a, b, out) in [(0.3, 1.3, &mut mean_sins), (-0.8, 0.8, &mut eig_sins)] {
            let trial = derive_seed(7, &[seed]);
            let mut rng = seeded(derive_seed(trial, &[stream::INSTANCE]));
            let inst = make_instance(DensityModel::Gaussian, a, b, 10, 0.001, AffineMode::Identity, &mut rng)
                .map_err(fail)?;
            let data = generate_unstandardized(&inst, 100_000, derive_seed(trial, &[stream::DATA])).map_err(fail)?;
            let c = isotropic_candidates(data.x.view()).map_err(fail)?;
            let dir = if a > 0.0 { c.mean } else { c.cov_top.vector };
            out.push(sin_theta(e1.view(), dir.view()).map_err(fail)?);
        }
    }
    let (m1, m2) = (median(mean_sins), median(eig_sins));
    check(m1 <= 0.2 && m2 <= 0.2, format!("median mean sin={m1:.4}, median top-eigvec sin={m2:.4}"))
}

fn sweep_trends() -> Outcome {
    let out = tempfile::tempdir().map_err(fail)?;
    let cfg = SweepConfig {
        out: out.path().to_path_buf(),
        ..SweepConfig::default()
    };
    let dim = experiment::sweep_dimension(&cfg).map_err(fail)?;
    let rho = dimension_trend(&dim.points);
    let eps = experiment::sweep_epsilon(&cfg).map_err(fail)?;
    let monotone = mass_trend_non_increasing(&eps.points);
    let dims: Vec<String> = dim.points.iter().map(|p| format!("{}:{:.3}", p.d, p.median_sin_theta)).collect();
    let masses: Vec<String> = eps.points.iter().map(|p| format!("{}:{:.3}", p.mass, p.median_sin_theta)).collect();
    check(
        rho >= 0.0 && monotone,
        format!("spearman={rho:.3} [{}]; mass medians [{}]", dims.join(" "), masses.join(" ")),
    )
}

fn cli(args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_contrastive-moments"))
        .args(args)
        .output()
        .map_err(fail)?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&status.stderr)))
    }
}

fn same_bytes(a: &Path, b: &Path) -> Result<bool, String> {
    Ok(std::fs::read(a).map_err(fail)? == std::fs::read(b).map_err(fail)?)
}

fn cli_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(fail)?;
    let config = root.path().join("small.cfg");
    std::fs::write(
        &config,
        "family = laplace\ndim = 4\nsamples = 3000\ntrials = 2\nseed = 11\n\
         grid_lo = -1\ngrid_hi = 1\ngrid_step = 0.5\nmasses = 0.2,0.4\n",
    )
    .map_err(fail)?;
    let cfg = config.to_str().unwrap();
    let mut compared = 0;
    for (cmd, files) in [
        ("generate", vec!["data.csv", "instance.json"]),
        ("sweep-grid", vec!["grid_laplace.csv", "grid_laplace_summary.csv"]),
        ("sweep-eps", vec!["eps_laplace.csv", "eps_laplace_summary.csv"]),
    ] {
        let dirs: Vec<_> = (0..2).map(|i| root.path().join(format!("{cmd}{i}"))).collect();
        for d in &dirs {
            cli(&[cmd, "--config", cfg, "--out", d.to_str().unwrap()])?;
        }
        for f in files {
            if !same_bytes(&dirs[0].join(f), &dirs[1].join(f))? {
                return Err(format!("{cmd}: {f} differs between runs"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} output files byte-identical across repeated runs"))
}

fn direction_error(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let minus = (a - b).iter().map(|v| v * v).sum::<f64>().sqrt();
    let plus = (a + b).iter().map(|v| v * v).sum::<f64>().sqrt();
    minus.min(plus)
}

fn directions(c: &CandidateSet) -> Vec<Option<Array1<f64>>> {
    c.directions().into_iter().map(|(_, d)| d).collect()
}

fn rotation_equivariance() -> Outcome {
    let alphas = AlphaConfig::default();
    let mut rng = seeded(derive_seed(99, &[stream::INSTANCE]));
    let inst = make_instance(DensityModel::Gaussian, -1.0, 0.3, 8, 0.001, AffineMode::RandomAffine { kappa_max: 5.0 }, &mut rng)
        .map_err(fail)?;
    let x = generate(&inst, 50_000, derive_seed(99, &[stream::DATA])).map_err(fail)?.x;
    let (base, y) = candidates_with_data(x.view(), &alphas).map_err(fail)?;
    let base_kind = select(y.view(), &base, DEFAULT_MIN_SIDE_FRACTION).map_err(fail)?.kind;
    let mut worst = 0.0f64;
    for k in 0..5u64 {
        let r: Array2<f64> = random_rotation(8, &mut seeded(derive_seed(99, &[10 + k])));
        let xr = x.dot(&r.t());
        let (rot, yr) = candidates_with_data(xr.view(), &alphas).map_err(fail)?;
        for (d0, d1) in directions(&base).iter().zip(directions(&rot)) {
            match (d0, d1) {
                (Some(d0), Some(d1)) => worst = worst.max(direction_error(&r.dot(d0), &d1)),
                (None, None) => {}
                _ => return Err(format!("rotation {k}: a candidate was flagged on one side only")),
            }
        }
        let kind = select(yr.view(), &rot, DEFAULT_MIN_SIDE_FRACTION).map_err(fail)?.kind;
        if kind != base_kind {
            return Err(format!("rotation {k}: selected {kind} instead of {base_kind}"));
        }
    }
    check(worst <= 1e-6, format!("max |R·v - v_R|={worst:.2e} over 5 rotations"))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "moment ratio strictly decreasing", budget: Duration::from_secs(5), run: moment_ratio_monotone },
        Criterion { id: 2, name: "exponential closed forms", budget: Duration::from_secs(2), run: exponential_closed_forms },
        Criterion { id: 3, name: "contrastive mean root structure", budget: Duration::from_secs(10), run: contrastive_mean_roots },
        Criterion { id: 4, name: "spectral gap positivity", budget: Duration::from_secs(5), run: spectral_gap_positive },
        Criterion { id: 5, name: "symmetric band recovery", budget: Duration::from_secs(60), run: symmetric_recovery },
        Criterion { id: 6, name: "asymmetric band recovery", budget: Duration::from_secs(60), run: asymmetric_recovery },
        Criterion { id: 7, name: "isotropic path", budget: Duration::from_secs(30), run: isotropic_path },
        Criterion { id: 8, name: "dimension and mass trends", budget: Duration::from_secs(300), run: sweep_trends },
        Criterion { id: 9, name: "CLI determinism", budget: Duration::from_secs(60), run: cli_determinism },
        Criterion { id: 10, name: "rotation equivariance", budget: Duration::from_secs(20), run: rotation_equivariance },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over budget {:?}", c.budget)),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} [{}] {} ({:.1}s)",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
