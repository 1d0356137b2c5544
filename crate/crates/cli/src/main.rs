//! Command-line front end: classify a connection profile, construct the
//! compatible model, verify the pair, integrate geodesics, and export the
//! curvature tables.

use berwald_core::classifier::{classify, ClassifySettings, Label};
use berwald_core::config::{load_config_file, Config};
use berwald_core::constructor::construct;
use berwald_core::model::{FinslerModel, SamplePoint};
use berwald_core::verifier::{
    conservation_check, geodesic, residual_sweep, Dynamics, GeodesicOptions, SweepSettings,
};
use clap::{Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "berwald",
    version,
    about = "Berwald metrizability toolkit for spherically symmetric connections",
    disable_help_subcommand = true
)]
struct Cli {
    /// Path to the run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for the generated artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Override the number of verification samples.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Override the sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the residual tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Override the evaluation grid as NTxNR, e.g. 21x21.
    #[arg(long, global = true)]
    grid: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify the profile and write report.json.
    Classify,
    /// Construct the compatible model and write model.json.
    Construct,
    /// Construct and run the verification sweep; write verification.json.
    Verify,
    /// Integrate a geodesic of the profile's connection; write trajectory.csv.
    Geodesic,
    /// Export the curvature coefficient tables; write curvature_grid.csv.
    Curvature,
}

/// Exit codes: 0 pass, 1 usage/config error, 2 mathematical failure.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path too.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

struct Loaded {
    cfg: Config,
    hash: String,
}

fn load(cli: &Cli) -> Result<Loaded, String> {
    let Some(path) = &cli.config else {
        return Err("--config PATH is required".into());
    };
    let bytes = std::fs::read(path).map_err(|e| format!("cannot read {path:?}: {e}"))?;
    let hash = hex_digest(&bytes);
    let mut cfg = load_config_file(path).map_err(|e| e.to_string())?;
    if let Some(samples) = cli.samples {
        cfg.samples = samples;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(tol) = cli.tol {
        cfg.tol_residual = tol;
    }
    if let Some(grid) = &cli.grid {
        let Some((nt, nr)) = grid.split_once('x') else {
            return Err(format!("--grid expects NTxNR, got `{grid}`"));
        };
        cfg.nt = nt.parse().map_err(|_| format!("bad grid size `{nt}`"))?;
        cfg.nr = nr.parse().map_err(|_| format!("bad grid size `{nr}`"))?;
        if cfg.nt < 3 || cfg.nr < 3 {
            return Err("grid must be at least 3x3".into());
        }
    }
    Ok(Loaded { cfg, hash })
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn classify_settings(cfg: &Config) -> ClassifySettings {
    ClassifySettings {
        nt: cfg.nt,
        nr: cfg.nr,
        tol_zero: cfg.tol_zero,
        seed: cfg.seed,
        random_batch: 50,
    }
}

fn sweep_settings(cfg: &Config) -> SweepSettings {
    SweepSettings {
        samples: cfg.samples,
        seed: cfg.seed,
        tol_residual: cfg.tol_residual,
        ..Default::default()
    }
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf, String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {dir:?}: {e}"))?;
    let path = dir.join(name);
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| format!("serialize: {e}"))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| format!("cannot write {path:?}: {e}"))?;
    Ok(path)
}

fn run(cli: &Cli) -> Result<ExitCode, String> {
    let started = Instant::now();
    let loaded = load(cli)?;
    let cfg = &loaded.cfg;
    let code = match cli.command {
        Command::Classify => cmd_classify(cli, &loaded)?,
        Command::Construct => cmd_construct(cli, &loaded)?,
        Command::Verify => cmd_verify(cli, &loaded)?,
        Command::Geodesic => cmd_geodesic(cli, &loaded)?,
        Command::Curvature => cmd_curvature(cli, &loaded)?,
    };
    let _ = cfg;
    eprintln!("elapsed: {} ms", started.elapsed().as_millis());
    Ok(code)
}

fn cmd_classify(cli: &Cli, loaded: &Loaded) -> Result<ExitCode, String> {
    let report = classify(&loaded.cfg.profile, &classify_settings(&loaded.cfg))
        .map_err(|e| e.to_string())?;
    let value = json!({
        "version": VERSION,
        "config_hash": loaded.hash,
        "classification": report,
    });
    let path = write_json(&cli.out, "report.json", &value)?;
    println!("label: {}", report.label);
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

/// Construct the model for the classified label; `Err(exit-2 message)` when
/// the label admits no non-quadratic model.
fn build_model(loaded: &Loaded) -> Result<(Label, FinslerModel), String> {
    let report = classify(&loaded.cfg.profile, &classify_settings(&loaded.cfg))
        .map_err(|e| e.to_string())?;
    if !report.label.is_constructible() {
        return Err(format!(
            "profile classifies as `{}`: no non-quadratic Berwald-compatible model exists \
             (the quadratic/pseudo-Riemannian branch is out of scope)",
            report.label
        ));
    }
    let model = construct(&loaded.cfg.profile, &report.label, &loaded.cfg.free)
        .map_err(|e| e.to_string())?;
    Ok((report.label, model))
}

/// A small spot table of the constructed model on a coarse grid, evaluated
/// at the first admissible probe velocity.
fn spot_table(cfg: &Config, m: &FinslerModel) -> Vec<serde_json::Value> {
    let probes: [[f64; 4]; 6] = [
        [1.0, 0.3, 0.7, 0.2],
        [1.0, 0.5, 0.5, -0.3],
        [1.3, -0.4, 0.8, 0.3],
        [0.9, 0.2, 1.1, 0.4],
        [1.5, 0.8, 0.9, 0.1],
        [2.0, 0.5, 1.0, 0.5],
    ];
    let mut rows = Vec::new();
    for (t, r) in cfg.profile.domain.grid(5, 5) {
        let mut value = None;
        for vel in probes {
            let Ok(p) = SamplePoint::new(t, r, 1.2, 0.4, vel) else { continue };
            if !m.admissible(&p) {
                continue;
            }
            if let Ok(l) = m.value(&p) {
                value = Some((vel, l));
                break;
            }
        }
        if let Some((vel, l)) = value {
            rows.push(json!({"t": t, "r": r, "vel": vel, "L": l}));
        }
    }
    rows
}

fn cmd_construct(cli: &Cli, loaded: &Loaded) -> Result<ExitCode, String> {
    let (label, model) = match build_model(loaded) {
        Ok(pair) => pair,
        Err(msg) => {
            eprintln!("{msg}");
            return Ok(ExitCode::from(2));
        }
    };
    let value = json!({
        "version": VERSION,
        "config_hash": loaded.hash,
        "label": label.to_string(),
        "model": model.info(),
        "l_spot_table": spot_table(&loaded.cfg, &model),
    });
    let path = write_json(&cli.out, "model.json", &value)?;
    println!("constructed {}", model.info().class);
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(cli: &Cli, loaded: &Loaded) -> Result<ExitCode, String> {
    let (label, model) = match build_model(loaded) {
        Ok(pair) => pair,
        Err(msg) => {
            eprintln!("{msg}");
            return Ok(ExitCode::from(2));
        }
    };
    let cfg = &loaded.cfg;
    let report = residual_sweep(&model, &cfg.profile, &sweep_settings(cfg));
    let rank_deficient = model
        .info()
        .params
        .iter()
        .any(|p| p.name == "metric_rank_deficient");
    let (min_det, det_samples) =
        berwald_core::verifier::det_audit(&model, &cfg.profile, &sweep_settings(cfg));
    let det_pass = rank_deficient || min_det > 1e-12;
    let overall = report.overall_pass && det_pass;
    let value = json!({
        "version": VERSION,
        "config_hash": loaded.hash,
        "label": label.to_string(),
        "verification": report,
        "det_audit": {
            "min_abs_det": min_det,
            "samples": det_samples,
            "pass": det_pass,
            "note": if rank_deficient {
                "metric is structurally rank-deficient for this class; \
                 Berwald compatibility certified by the horizontal system"
            } else {
                ""
            },
        },
        "overall_pass": overall,
    });
    let path = write_json(&cli.out, "verification.json", &value)?;
    println!(
        "verification: {} (max residual {:.3e}, {} samples)",
        if overall { "pass" } else { "FAIL" },
        report.max_residual(),
        report.samples_accepted
    );
    println!("wrote {}", path.display());
    Ok(if overall { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_geodesic(cli: &Cli, loaded: &Loaded) -> Result<ExitCode, String> {
    let cfg = &loaded.cfg;
    let initial = match cfg.geodesic_initial {
        Some(p) => p,
        None => {
            let (t, r) = cfg.profile.domain.center();
            SamplePoint::new(t, r, std::f64::consts::FRAC_PI_2, 0.0, [1.0, 0.2, 0.1, 0.05])
                .map_err(|e| e.to_string())?
        }
    };
    let traj = geodesic(
        &Dynamics::Profile(&cfg.profile),
        &initial,
        &GeodesicOptions { h: cfg.geodesic_h, steps: cfg.geodesic_steps },
    );
    // L along the trajectory when the profile admits a constructed model.
    let model = build_model(loaded).ok().map(|(_, m)| m);
    std::fs::create_dir_all(&cli.out).map_err(|e| format!("cannot create out dir: {e}"))?;
    let path = cli.out.join("trajectory.csv");
    let mut csv = String::from("step,t,r,theta,phi,dt,dr,dtheta,dphi,L\n");
    for (i, p) in traj.states.iter().enumerate() {
        let l = model
            .as_ref()
            .and_then(|m| m.value(p).ok())
            .map(|v| v.to_string())
            .unwrap_or_else(|| "nan".into());
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            i, p.t, p.r, p.theta, p.phi, p.vel[0], p.vel[1], p.vel[2], p.vel[3], l
        ));
    }
    std::fs::write(&path, csv).map_err(|e| format!("cannot write {path:?}: {e}"))?;
    if let Some(m) = &model {
        if let Ok(drift) = conservation_check(m, &traj) {
            println!("L drift along trajectory: {drift:.3e}");
        }
    }
    println!("termination: {:?}", traj.termination);
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_curvature(cli: &Cli, loaded: &Loaded) -> Result<ExitCode, String> {
    let cfg = &loaded.cfg;
    std::fs::create_dir_all(&cli.out).map_err(|e| format!("cannot create out dir: {e}"))?;
    let path = cli.out.join("curvature_grid.csv");
    let mut csv = String::from("t,r");
    for i in 1..=14 {
        csv.push_str(&format!(",a{i}"));
    }
    for i in 1..=5 {
        csv.push_str(&format!(",A{i}"));
    }
    for i in 1..=5 {
        csv.push_str(&format!(",B{i}"));
    }
    csv.push_str(",a,b,c,capA,capB,capC,capD,capE,capF,M,Mtilde,N,Ntilde\n");
    for (t, r) in cfg.profile.domain.grid(cfg.nt, cfg.nr) {
        let ct = cfg.profile.curvature_table(t, r).map_err(|e| e.to_string())?;
        csv.push_str(&format!("{t},{r}"));
        for v in ct.a.iter().chain(ct.dbl_t.iter()).chain(ct.dbl_r.iter()) {
            csv.push_str(&format!(",{v}"));
        }
        match cfg.profile.derived_coeffs(t, r) {
            Ok(dc) => {
                csv.push_str(&format!(",{},{},{}", dc.a, dc.b, dc.c));
                for v in dc.cap {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push_str(&format!(",{},{},{},{}", dc.m, dc.m_tilde, dc.n, dc.n_tilde));
            }
            Err(_) => {
                for _ in 0..13 {
                    csv.push_str(",nan");
                }
            }
        }
        csv.push('\n');
    }
    std::fs::write(&path, csv).map_err(|e| format!("cannot write {path:?}: {e}"))?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

