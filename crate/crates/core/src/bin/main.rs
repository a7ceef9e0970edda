use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use contrastive_moments::estimator::{candidates_with_data, isotropic_candidates, unit_or_flag, CandidateKind};
use contrastive_moments::experiment::{self, SweepConfig};
use contrastive_moments::margin::{select, select_from, sin_theta};
use contrastive_moments::rng::{derive_seed, seeded, stream};
use contrastive_moments::sampler::{self, MarginInstance};
use contrastive_moments::{Error, Result};

#[derive(Parser)]
#[command(name = "contrastive-moments", version, about = "Recover the normal of a removed band from unlabeled affine product data")]
#[command(allow_negative_numbers = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each overrides the same key from `--config`.
#[derive(Args, Debug, Default)]
struct Common {
    /// key=value file applied before the flags below
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    a: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    b: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    alpha1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    alpha2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    alpha3: Option<f64>,
    /// identity, rotation or random
    #[arg(long)]
    affine: Option<String>,
    #[arg(long)]
    kappa_max: Option<f64>,
    #[arg(long)]
    min_side_fraction: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other config key, as key=value; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Record wall-clock time per trial (makes CSVs run-dependent)
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset and write it with its hidden instance
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Keep the truncated coordinate unstandardized
        #[arg(long)]
        unstandardized: bool,
    },
    /// Estimate the normal from a dataset file
    Recover {
        #[command(flatten)]
        common: Common,
        /// Dataset (CSV or binary)
        #[arg(long)]
        input: PathBuf,
        /// instance.json written by `generate`, for scoring
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Plain mean and uncentered covariance, no whitening or re-weighting
        #[arg(long)]
        isotropic: bool,
    },
    /// Median sin θ over a grid of (a, b) pairs
    SweepGrid {
        #[command(flatten)]
        common: Common,
    },
    /// Median sin θ as the dimension grows
    SweepDim {
        #[command(flatten)]
        common: Common,
    },
    /// Median sin θ as the band mass shrinks
    SweepEps {
        #[command(flatten)]
        common: Common,
    },
    /// Best re-weighted mean against the covariance candidate as b varies, a fixed
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Run the one-dimensional oracle checks; exit status 1 if any fails
    VerifyLemmas {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Bin,
}

impl Common {
    fn pairs(&self) -> Result<Vec<(String, String)>> {
        let mut p: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                p.push((k.to_string(), v));
            }
        };
        push("family", self.family.clone());
        push("a", self.a.map(|v| v.to_string()));
        push("b", self.b.map(|v| v.to_string()));
        push("dim", self.dim.map(|v| v.to_string()));
        push("samples", self.samples.map(|v| v.to_string()));
        push("trials", self.trials.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("alpha1", self.alpha1.map(|v| v.to_string()));
        push("alpha2", self.alpha2.map(|v| v.to_string()));
        push("alpha3", self.alpha3.map(|v| v.to_string()));
        push("affine", self.affine.clone());
        push("kappa-max", self.kappa_max.map(|v| v.to_string()));
        push("min-side-fraction", self.min_side_fraction.map(|v| v.to_string()));
        push("epsilon", self.epsilon.map(|v| v.to_string()));
        push("out", self.out.as_ref().map(|v| v.display().to_string()));
        if self.timing {
            push("timing", Some("true".into()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            p.push((k.to_string(), v.to_string()));
        }
        Ok(p)
    }

    fn config(&self) -> Result<SweepConfig> {
        let mut cfg = match &self.config {
            Some(path) => SweepConfig::from_file(path)?,
            None => SweepConfig::default(),
        };
        cfg.apply_pairs(self.pairs()?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn make_instance(cfg: &SweepConfig) -> Result<MarginInstance> {
    let mut rng = seeded(derive_seed(cfg.seed, &[stream::INSTANCE]));
    sampler::make_instance(cfg.family, cfg.a, cfg.b, cfg.dim, cfg.epsilon, cfg.affine_mode()?, &mut rng)
}

fn generate(cfg: &SweepConfig, format: Format, unstandardized: bool) -> Result<()> {
    let instance = make_instance(cfg)?;
    let seed = derive_seed(cfg.seed, &[stream::DATA]);
    let data = if unstandardized {
        sampler::generate_unstandardized(&instance, cfg.samples, seed)?
    } else {
        sampler::generate(&instance, cfg.samples, seed)?
    };
    fs::create_dir_all(&cfg.out)?;
    let path = match format {
        Format::Csv => {
            let p = cfg.out.join("data.csv");
            sampler::write_csv(&data.x, fs::File::create(&p)?)?;
            p
        }
        Format::Bin => {
            let p = cfg.out.join("data.bin");
            sampler::write_binary(&data.x, fs::File::create(&p)?)?;
            p
        }
    };
    let inst_path = cfg.out.join("instance.json");
    fs::write(&inst_path, serde_json::to_string_pretty(&instance)?)?;
    println!("wrote {} ({} x {}) and {}", path.display(), cfg.samples, cfg.dim, inst_path.display());
    Ok(())
}

fn recover(cfg: &SweepConfig, input: &Path, instance: Option<&Path>, isotropic: bool) -> Result<()> {
    let x = sampler::read_dataset(input)?;
    let instance: Option<MarginInstance> = match instance {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => None,
    };
    let report = if isotropic {
        let iso = isotropic_candidates(x.view())?;
        let dirs = [
            (CandidateKind::Mean1, unit_or_flag(&iso.mean)),
            (CandidateKind::Cov, unit_or_flag(&iso.cov_top.vector)),
        ];
        let sel = select_from(x.view(), &dirs, cfg.min_side_fraction)?;
        let scores = match &instance {
            Some(inst) => {
                let truth = inst.normal_in_input()?;
                let mut s = serde_json::Map::new();
                for (kind, dir) in &dirs {
                    if let Some(d) = dir {
                        s.insert(format!("sin_theta_{}", if *kind == CandidateKind::Cov { "cov" } else { "mean" }), json!(sin_theta(truth.view(), d.view())?));
                    }
                }
                s.insert("sin_theta_selected".into(), json!(sin_theta(truth.view(), sel.chosen.view())?));
                Some(serde_json::Value::Object(s))
            }
            None => None,
        };
        json!({
            "path": "isotropic",
            "rows": x.nrows(),
            "dim": x.ncols(),
            "selected_kind": if sel.kind == CandidateKind::Cov { "cov" } else { "mean" },
            "direction": sel.chosen.to_vec(),
            "margin": sel.report(sel.kind),
            "spectral_gap": iso.cov_top.value - iso.cov_second,
            "scores": scores,
        })
    } else {
        let (cands, y) = candidates_with_data(x.view(), &cfg.alphas)?;
        let sel = select(y.view(), &cands, cfg.min_side_fraction)?;
        let scores = match &instance {
            Some(inst) => {
                let truth = inst.normal_in_whitened(&cands.whitener.sqrt)?;
                let mut s = serde_json::Map::new();
                for (kind, dir) in cands.directions() {
                    let v = match dir {
                        Some(d) => json!(sin_theta(truth.view(), d.view())?),
                        None => serde_json::Value::Null,
                    };
                    s.insert(format!("sin_theta_{kind}"), v);
                }
                s.insert("sin_theta_selected".into(), json!(sin_theta(truth.view(), sel.chosen.view())?));
                Some(serde_json::Value::Object(s))
            }
            None => None,
        };
        let widths: serde_json::Map<String, serde_json::Value> = sel
            .reports
            .iter()
            .map(|(k, r)| (k.label().to_string(), json!(r.as_ref().map(|r| r.width))))
            .collect();
        json!({
            "path": "contrastive",
            "rows": x.nrows(),
            "dim": x.ncols(),
            "alphas": cfg.alphas,
            "selected_kind": sel.kind,
            "direction_whitened": sel.chosen.to_vec(),
            "direction_input": cands.whitener.direction_to_input(&sel.chosen).to_vec(),
            "margin_widths": widths,
            "spectral_gap": cands.spectral_gap(),
            "scores": scores,
        })
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate { common, format, unstandardized } => generate(&common.config()?, format, unstandardized)?,
        Command::Recover { common, input, instance, isotropic } => {
            recover(&common.config()?, &input, instance.as_deref(), isotropic)?
        }
        Command::SweepGrid { common } => {
            let out = experiment::sweep_grid(&common.config()?)?;
            let skipped = out.records.iter().filter(|r| !r.is_ok()).count();
            println!("{} cells, {} trials, {} not ok", out.points.len(), out.records.len(), skipped);
            print_files(&out.files);
        }
        Command::SweepDim { common } => {
            let out = experiment::sweep_dimension(&common.config()?)?;
            for p in &out.points {
                println!("d={:<4} median sin θ = {:.6} ({} trials)", p.d, p.median_sin_theta, p.ok_trials);
            }
            println!("spearman(d, median) = {:.4}", experiment::dimension_trend(&out.points));
            print_files(&out.files);
        }
        Command::SweepEps { common } => {
            let out = experiment::sweep_epsilon(&common.config()?)?;
            for p in &out.points {
                println!("mass={:<5} median sin θ = {:.6} ({} trials)", p.mass, p.median_sin_theta, p.ok_trials);
            }
            println!("non-increasing in mass: {}", experiment::mass_trend_non_increasing(&out.points));
            print_files(&out.files);
        }
        Command::Compare { common } => {
            let out = experiment::compare_mean_cov(&common.config()?)?;
            for p in &out.points {
                println!(
                    "b={:<6} best mean = {:.6}  cov = {:.6}  selected = {:.6}",
                    p.b, p.median_best_mean, p.median_cov, p.median_selected
                );
            }
            print_files(&out.files);
        }
        Command::VerifyLemmas { common } => {
            let out = common.out.clone();
            let summary = experiment::verify_lemmas(out.as_deref())?;
            for r in &summary.reports {
                println!("{} {} (worst {:.3e}, tolerance {:.0e})", if r.verdict { "PASS" } else { "FAIL" }, r.lemma_id, r.worst_violation, r.tolerance);
            }
            if !summary.all_pass {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
