use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use spectral_enkf_cli::{
    run, CliError, ExperimentConfig, ExperimentKind, MethodName, OutputFormat, TransformChoice,
};

/// Spectral ensemble Kalman filter experiments.
#[derive(Debug, Parser)]
#[command(name = "spectral-enkf", version)]
struct Args {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// transform_matrix, covariance_compare or assimilate.
    #[arg(long)]
    experiment: Option<ExperimentKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid size.
    #[arg(long)]
    n: Option<usize>,
    /// Small ensemble size.
    #[arg(long)]
    members: Option<usize>,
    /// Reference ensemble size for covariance_compare.
    #[arg(long)]
    reference_members: Option<usize>,
    /// Comma separated subset of classical,fft,wavelet.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodName>>,
    #[arg(long)]
    octaves: Option<usize>,
    /// identity, sine or wavelet (transform_matrix only).
    #[arg(long)]
    transform: Option<TransformChoice>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma separated subset of csv,json,svg.
    #[arg(long, value_delimiter = ',')]
    formats: Option<Vec<OutputFormat>>,
    #[arg(long)]
    workers: Option<usize>,
}

fn load(args: Args) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.experiment {
        cfg.experiment = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.members {
        cfg.members = v;
    }
    if let Some(v) = args.reference_members {
        cfg.reference_members = v;
    }
    if let Some(v) = args.methods {
        cfg.methods = v;
    }
    if let Some(v) = args.octaves {
        cfg.octaves = Some(v);
    }
    if let Some(v) = args.transform {
        cfg.transform = v;
    }
    if let Some(v) = args.out {
        cfg.out = v;
    }
    if let Some(v) = args.formats {
        cfg.formats = v;
    }
    if let Some(v) = args.workers {
        cfg.workers = Some(v);
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = load(args).and_then(|cfg| run(&cfg).map(|out| (cfg, out)));
    match outcome {
        Ok((cfg, out)) => {
            if let Some(report) = &out.report {
                for m in &report.methods {
                    println!(
                        "{:<10} rmse_var1={} rmse_var2={} frobenius={} wall_ms={:.2}",
                        m.method,
                        fmt_opt(m.rmse_var1),
                        fmt_opt(m.rmse_var2),
                        fmt_opt(m.frobenius_to_reference),
                        m.wall_ms
                    );
                }
            }
            println!(
                "wrote {} files to {}",
                out.manifest.files.len(),
                cfg.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}
