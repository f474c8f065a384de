use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use ebm_spectral::analysis::{convergence_from, explicit_k0, verify_bounds};
use ebm_spectral::experiments::{
    check_residuals, limit_rows, preset, reproduce_figures, spectrum_rows, write_json,
    write_limit_csv, write_spectrum_csv, RESIDUAL_TOL,
};
use ebm_spectral::inverse::{perturbation_study, recover_model};
use ebm_spectral::model::{fit_prony, FitMode, ModelConfig};
use ebm_spectral::rootfinder::{cluster_roots, clusters, limit_roots};
use ebm_spectral::{ClusterObservation, Error, ModeIndex, PronyModel, Result, StretchedExponential};

use super::{Command, FitArgs, Format, Mode, ModelArgs, OutputArgs, RangeArgs};

/// Largest relative matching distance accepted when the recovered model is
/// run forward again.
const RECONSTRUCTION_TOL: f64 = 1e-8;

fn load(args: &ModelArgs) -> Result<PronyModel> {
    match (&args.model, &args.preset) {
        (Some(path), None) => Ok(ModelConfig::from_path(path)?.model),
        (None, Some(name)) => preset(name),
        _ => Err(Error::Config("give exactly one of --model or --preset".into())),
    }
}

fn range(args: &RangeArgs) -> Result<Vec<ModeIndex>> {
    if args.k_max < args.k_min {
        return Err(Error::Config(format!(
            "empty k range {}..={}",
            args.k_min, args.k_max
        )));
    }
    ModeIndex::range(args.k_min, args.k_max)
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn csv_writer(out: &OutputArgs) -> Result<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(sink(&out.out)?))
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Spectrum { model, range: r, output } => {
            let model = load(&model)?;
            let cl = clusters(&model, &range(&r)?)?;
            let rows = spectrum_rows(&model, &cl);
            check_residuals("spectrum", rows.iter().map(|r| r.residual), RESIDUAL_TOL)?;
            match output.format {
                Format::Csv => write_spectrum_csv(&rows, sink(&output.out)?),
                Format::Json => write_json(&rows, sink(&output.out)?),
            }
        }
        Command::Limit { model, output } => {
            let model = load(&model)?;
            let rows = limit_rows(&model, &limit_roots(&model)?)?;
            check_residuals("limit", rows.iter().map(|r| r.residual), RESIDUAL_TOL)?;
            match output.format {
                Format::Csv => write_limit_csv(&rows, sink(&output.out)?),
                Format::Json => write_json(&rows, sink(&output.out)?),
            }
        }
        Command::Converge { model, range: r, output } => {
            let model = load(&model)?;
            let limit = limit_roots(&model)?;
            let cl = clusters(&model, &range(&r)?)?;
            let rows = spectrum_rows(&model, &cl);
            check_residuals("converge", rows.iter().map(|r| r.residual), RESIDUAL_TOL)?;
            let report = convergence_from(&model, &limit, &cl);
            match output.format {
                Format::Csv => report.write_csv(sink(&output.out)?),
                Format::Json => write_json(&report, sink(&output.out)?),
            }
        }
        Command::K0 {
            model,
            range: r,
            bounds,
            output,
        } => k0(&load(&model)?, &r, bounds, &output),
        Command::Invert {
            first,
            second,
            output,
        } => invert(&first, &second, &output),
        Command::Observe { model, k, out } => {
            let model = load(&model)?;
            let cluster = cluster_roots(&model, ModeIndex::new(k)?)?;
            let mut w = sink(&out)?;
            writeln!(w, "{}", ClusterObservation::from_cluster(&cluster).to_json())?;
            w.flush()?;
            Ok(())
        }
        Command::Perturb {
            model,
            k1,
            k2,
            noise,
            trials,
            seed,
            output,
        } => {
            let model = load(&model)?;
            let study =
                perturbation_study(&model, ModeIndex::new(k1)?, ModeIndex::new(k2)?, noise, trials, seed)?;
            match output.format {
                Format::Json => write_json(&study, sink(&output.out)?),
                Format::Csv => {
                    let mut w = csv_writer(&output)?;
                    w.write_record(["trial", "r_error", "b_error", "D_error", "failure"])?;
                    for t in &study.trials {
                        let (r, b, d) = t
                            .errors
                            .map_or((String::new(), String::new(), String::new()), |e| {
                                (fmt(e.r), fmt(e.b), fmt(e.d))
                            });
                        w.write_record([
                            t.trial.to_string(),
                            r,
                            b,
                            d,
                            t.failure.clone().unwrap_or_default(),
                        ])?;
                    }
                    w.flush()?;
                    Ok(())
                }
            }
        }
        Command::Fit(args) => fit(&args),
        Command::ReproduceFigures { out, k_max } => {
            let manifest = reproduce_figures(&out, k_max)?;
            eprintln!(
                "wrote {} datasets and manifest.json to {}",
                manifest.files.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn k0(model: &PronyModel, r: &RangeArgs, bounds: bool, output: &OutputArgs) -> Result<()> {
    let cert = explicit_k0(model)?;
    let violations = cert.violations(model);
    if bounds {
        if output.format == Format::Csv {
            return Err(Error::Config("--bounds output is JSON only".into()));
        }
        let report = verify_bounds(model, &range(r)?)?;
        write_json(
            &serde_json::json!({ "certificate": cert, "bounds": report }),
            sink(&output.out)?,
        )?;
    } else {
        match output.format {
            Format::Json => write_json(&cert, sink(&output.out)?)?,
            Format::Csv => {
                let mut w = csv_writer(output)?;
                w.write_record([
                    "b_max", "b_min", "r_gap", "mu", "R", "delta", "epsilon", "m", "k0_value",
                    "k0", "mu_exact", "R_exact",
                ])?;
                w.write_record([
                    fmt(cert.b_max),
                    fmt(cert.b_min),
                    fmt(cert.r_gap),
                    fmt(cert.mu),
                    fmt(cert.r_big),
                    fmt(cert.delta),
                    fmt(cert.epsilon),
                    fmt(cert.m),
                    fmt(cert.k0_value),
                    cert.k0.to_string(),
                    cert.mu_exact.to_string(),
                    cert.r_big_exact.to_string(),
                ])?;
                w.flush()?;
            }
        }
    }
    match violations.first() {
        None => Ok(()),
        Some(v) => Err(Error::Unsupported(format!("certificate invariant violated: {v}"))),
    }
}

fn invert(first: &Path, second: &Path, output: &OutputArgs) -> Result<()> {
    let o1 = ClusterObservation::from_path(first)?;
    let o2 = ClusterObservation::from_path(second)?;
    let rec = recover_model(&o1, &o2)?;
    match output.format {
        Format::Json => write_json(&rec, sink(&output.out)?)?,
        Format::Csv => {
            let mut w = csv_writer(output)?;
            w.write_record(["parameter", "index", "value"])?;
            for (i, r) in rec.model.rates().iter().enumerate() {
                w.write_record(["r".into(), (i + 1).to_string(), fmt(*r)])?;
            }
            for (i, b) in rec.model.weights().iter().enumerate() {
                w.write_record(["b".into(), (i + 1).to_string(), fmt(*b)])?;
            }
            w.write_record(["D".into(), "0".into(), fmt(rec.d)])?;
            w.flush()?;
        }
    }
    let worst = rec
        .diagnostics
        .reconstruction
        .iter()
        .map(|d| d.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    check_residuals("reconstruction", [worst], RECONSTRUCTION_TOL)
}

fn fit(args: &FitArgs) -> Result<()> {
    let (target, rates, d) = match &args.model {
        Some(path) => {
            let config = ModelConfig::from_path(path)?;
            let target = config
                .stretched
                .ok_or_else(|| Error::Config("model config has no [stretched] block".into()))?;
            (target, config.model.rates().to_vec(), args.d.or(Some(config.model.d())))
        }
        None => {
            let rates = match (&args.rates, args.n) {
                (Some(r), _) => r.clone(),
                (None, Some(n)) => (1..=n).map(|i| 5.0 * i as f64).collect(),
                (None, None) => return Err(Error::Config("give --rates, --n, or --model".into())),
            };
            (StretchedExponential::new(args.tau, args.beta)?, rates, args.d)
        }
    };
    if args.points < 2 {
        return Err(Error::InvalidGrid("need at least two grid points".into()));
    }
    let step = (args.t_max - args.t_min) / (args.points - 1) as f64;
    let grid: Vec<f64> = (0..args.points).map(|i| args.t_min + step * i as f64).collect();
    let mode = match args.mode {
        Mode::EqualContribution => FitMode::EqualContribution,
        Mode::LeastSquares => FitMode::LeastSquares,
    };
    let fit = fit_prony(&target, &rates, &grid, mode, d)?;
    match args.output.format {
        Format::Json => write_json(&fit, sink(&args.output.out)?),
        Format::Csv => {
            let mut w = csv_writer(&args.output)?;
            w.write_record(["index", "rate", "stiffness", "weight", "kept"])?;
            for (i, (&r, &s)) in rates.iter().zip(&fit.ladder_stiffness).enumerate() {
                let kept = !fit.pruned.contains(&i);
                w.write_record([
                    (i + 1).to_string(),
                    fmt(r),
                    fmt(s),
                    fmt(s * r),
                    kept.to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        }
    }
}
