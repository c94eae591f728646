//! Experiment runners: transform matrix export, covariance comparison and the
//! single-step assimilation comparison on the synthetic two-variable model.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use spectral_enkf::linalg::row_mean;
use spectral_enkf::synthetic::{make_ensemble, make_truth_and_obs, SyntheticConfig};
use spectral_enkf::{
    classical_update, draw_perturbations, make_transform, reconstruct_dense, sample_covariance,
    spectral_diagonal, spectral_update_multi, AnalysisResult, Ensemble, ObservationSpec,
    OrthonormalTransform, SpectralConfig, TransformKind, WaveletFilter,
};

use crate::config::{ExperimentConfig, ExperimentKind, MethodName, OutputFormat};
use crate::error::CliError;
use crate::output::{heatmap_svg, Manifest, OutputDir};

/// Metrics for one method; fields that do not apply to an experiment are
/// `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub rmse_var1: Option<f64>,
    pub rmse_var2: Option<f64>,
    pub innovation_norm_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frobenius_to_reference: Option<f64>,
    pub wall_ms: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub methods: Vec<MethodMetrics>,
}

impl MetricsReport {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == name)
    }
}

pub fn wavelet_filter(name: &str) -> Result<WaveletFilter, CliError> {
    match name {
        "coif2" => Ok(WaveletFilter::coiflet2()),
        "haar" => Ok(WaveletFilter::haar()),
        other => Err(CliError::Config(format!("unknown wavelet `{other}`"))),
    }
}

pub fn method_transform(
    method: MethodName,
    n: usize,
    octaves: Option<usize>,
    filter: &WaveletFilter,
) -> spectral_enkf::Result<Option<OrthonormalTransform>> {
    match method {
        MethodName::Classical => Ok(None),
        MethodName::Fft => make_transform(TransformKind::SineOrthonormal, n, None, None).map(Some),
        MethodName::Wavelet => make_transform(
            TransformKind::WaveletPeriodized,
            n,
            octaves,
            Some(filter.clone()),
        )
        .map(Some),
    }
}

/// The four covariance panels for variable 1.
#[derive(Debug, Clone)]
pub struct CovariancePanels {
    /// Sample covariance of the reference ensemble.
    pub reference: DMatrix<f64>,
    /// Sample covariance of the small ensemble.
    pub sample: DMatrix<f64>,
    /// Reconstructed sine-diagonal estimate from the small ensemble.
    pub sine: DMatrix<f64>,
    /// Reconstructed wavelet-diagonal estimate from the small ensemble.
    pub wavelet: DMatrix<f64>,
}

impl CovariancePanels {
    pub fn frobenius_to_reference(&self, panel: &DMatrix<f64>) -> f64 {
        (panel - &self.reference).norm()
    }
}

/// Builds the panels; the small ensemble is the first `cfg.members` members
/// of the reference ensemble.
pub fn covariance_panels(
    cfg: &SyntheticConfig,
    reference_members: usize,
    octaves: Option<usize>,
    filter: &WaveletFilter,
) -> spectral_enkf::Result<CovariancePanels> {
    let reference_ens = make_ensemble(&SyntheticConfig {
        members: reference_members,
        ..cfg.clone()
    })?;
    let small = reference_ens.leading_members(cfg.members)?;
    let sine = make_transform(TransformKind::SineOrthonormal, cfg.n, None, None)?;
    let wavelet = make_transform(
        TransformKind::WaveletPeriodized,
        cfg.n,
        octaves,
        Some(filter.clone()),
    )?;
    let sine_diag = spectral_diagonal(&small, 0, &sine)?;
    let wavelet_diag = spectral_diagonal(&small, 0, &wavelet)?;
    Ok(CovariancePanels {
        reference: sample_covariance(&reference_ens, 0, 0)?,
        sample: sample_covariance(&small, 0, 0)?,
        sine: reconstruct_dense(&sine, sine_diag.diag()),
        wavelet: reconstruct_dense(&wavelet, wavelet_diag.diag()),
    })
}

/// One analysis step of `method` on `ens`.
pub fn assimilate(
    method: MethodName,
    ens: &Ensemble,
    obs: &ObservationSpec,
    perturbations: &DMatrix<f64>,
    octaves: Option<usize>,
    filter: &WaveletFilter,
) -> spectral_enkf::Result<AnalysisResult> {
    match method {
        MethodName::Classical => classical_update(ens, obs, perturbations),
        _ => {
            let transforms = ens
                .variables()
                .iter()
                .map(|v| {
                    method_transform(method, v.grid().len(), octaves, filter)
                        .map(|t| t.expect("spectral method has a transform"))
                })
                .collect::<spectral_enkf::Result<Vec<_>>>()?;
            spectral_update_multi(ens, obs, &SpectralConfig::new(transforms), perturbations)
        }
    }
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (sum / a.len() as f64).sqrt()
}

/// Result of one method in the assimilation comparison.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: MethodName,
    pub result: AnalysisResult,
    pub metrics: MethodMetrics,
}

/// Shared inputs of the assimilation comparison.
#[derive(Debug, Clone)]
pub struct AssimilationSetup {
    pub ensemble: Ensemble,
    pub truth: Vec<f64>,
    pub observation: ObservationSpec,
    pub perturbations: DMatrix<f64>,
}

pub fn assimilation_setup(
    synthetic: &SyntheticConfig,
    recenter: bool,
) -> spectral_enkf::Result<AssimilationSetup> {
    let ensemble = make_ensemble(synthetic)?;
    let (truth, observation) = make_truth_and_obs(synthetic)?;
    let perturbations = draw_perturbations(
        &observation.data,
        &observation.noise,
        synthetic.members,
        synthetic.seed,
        recenter,
    )?;
    Ok(AssimilationSetup {
        ensemble,
        truth,
        observation,
        perturbations,
    })
}

/// Runs every method on the same setup. Variable 2 is scored against
/// `coupling × truth`, its expectation given the true bump.
pub fn run_methods(
    setup: &AssimilationSetup,
    methods: &[MethodName],
    octaves: Option<usize>,
    filter: &WaveletFilter,
    coupling: f64,
    seed: u64,
) -> spectral_enkf::Result<Vec<MethodRun>> {
    let truth2: Vec<f64> = setup.truth.iter().map(|v| coupling * v).collect();
    methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let result = assimilate(
                method,
                &setup.ensemble,
                &setup.observation,
                &setup.perturbations,
                octaves,
                filter,
            )?
            .with_seed(seed);
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let mean1 = row_mean(result.analysis.members(0)?);
            let mean2 = row_mean(result.analysis.members(1)?);
            let norms = &result.diagnostics.innovation_norms;
            let metrics = MethodMetrics {
                method: method.as_str().into(),
                rmse_var1: Some(rmse(mean1.as_slice(), &setup.truth)),
                rmse_var2: Some(rmse(mean2.as_slice(), &truth2)),
                innovation_norm_mean: Some(norms.iter().sum::<f64>() / norms.len() as f64),
                frobenius_to_reference: None,
                wall_ms,
                seed,
            };
            Ok(MethodRun {
                method,
                result,
                metrics,
            })
        })
        .collect()
}

/// Outputs of one experiment run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Option<MetricsReport>,
    pub manifest: Manifest,
}

/// Runs the configured experiment inside a pool of `cfg.workers` threads.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let job = || match cfg.experiment {
        ExperimentKind::TransformMatrix => run_transform_matrix(cfg).map(|manifest| RunOutput {
            report: None,
            manifest,
        }),
        ExperimentKind::CovarianceCompare => {
            run_covariance_experiment(cfg).map(|(report, manifest)| RunOutput {
                report: Some(report),
                manifest,
            })
        }
        ExperimentKind::Assimilate => {
            run_assimilation_experiment(cfg).map(|(report, manifest)| RunOutput {
                report: Some(report),
                manifest,
            })
        }
    };
    match cfg.workers {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(job),
        None => job(),
    }
}

pub fn run_transform_matrix(cfg: &ExperimentConfig) -> Result<Manifest, CliError> {
    let filter = wavelet_filter(&cfg.wavelet)?;
    let t = make_transform(cfg.transform.kind(), cfg.n, cfg.octaves, Some(filter))?;
    let matrix = t.as_matrix();
    let mut out = OutputDir::create(&cfg.out)?;
    let name = format!("transform_{}_{}", t.kind().label(), cfg.n);
    if cfg.wants(OutputFormat::Csv) {
        out.matrix_csv(&format!("{name}.csv"), &matrix)?;
    }
    if cfg.wants(OutputFormat::Svg) {
        let magnitude = matrix.map(f64::abs);
        let scale = magnitude.max();
        out.svg(
            &format!("{name}.svg"),
            &heatmap_svg(&magnitude, scale, &format!("|F|, {name}")),
        )?;
    }
    out.finish()
}

pub fn run_covariance_experiment(
    cfg: &ExperimentConfig,
) -> Result<(MetricsReport, Manifest), CliError> {
    let filter = wavelet_filter(&cfg.wavelet)?;
    let synthetic = cfg.synthetic();
    let start = Instant::now();
    let panels = covariance_panels(&synthetic, cfg.reference_members, cfg.octaves, &filter)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    let named = [
        ("a_reference", "reference", &panels.reference),
        ("b_sample", "sample", &panels.sample),
        ("c_fft", "fft", &panels.sine),
        ("d_wavelet", "wavelet", &panels.wavelet),
    ];
    let mut out = OutputDir::create(&cfg.out)?;
    if cfg.wants(OutputFormat::Csv) {
        for (file, _, m) in named {
            out.matrix_csv(&format!("covariance_{file}.csv"), m)?;
        }
    }
    if cfg.wants(OutputFormat::Svg) {
        // Shared symmetric scale anchored to the reference panel.
        let scale = panels.reference.amax();
        for (file, label, m) in named {
            out.svg(
                &format!("covariance_{file}.svg"),
                &heatmap_svg(m, scale, label),
            )?;
        }
    }
    let methods = named[1..]
        .iter()
        .map(|(_, label, m)| MethodMetrics {
            method: (*label).into(),
            rmse_var1: None,
            rmse_var2: None,
            innovation_norm_mean: None,
            frobenius_to_reference: Some(panels.frobenius_to_reference(m)),
            wall_ms,
            seed: cfg.seed,
        })
        .collect();
    let report = MetricsReport {
        experiment: ExperimentKind::CovarianceCompare,
        seed: cfg.seed,
        methods,
    };
    if cfg.wants(OutputFormat::Json) {
        out.json("metrics.json", &report)?;
    }
    Ok((report, out.finish()?))
}

pub fn run_assimilation_experiment(
    cfg: &ExperimentConfig,
) -> Result<(MetricsReport, Manifest), CliError> {
    let filter = wavelet_filter(&cfg.wavelet)?;
    let synthetic = cfg.synthetic();
    let setup = assimilation_setup(&synthetic, cfg.recenter_perturbations)?;
    let runs = run_methods(
        &setup,
        &cfg.methods,
        cfg.octaves,
        &filter,
        synthetic.coupling,
        cfg.seed,
    )?;

    let mut out = OutputDir::create(&cfg.out)?;
    let grid = synthetic.grid()?;
    let members = synthetic.members;
    for run in &runs {
        for var in 0..2 {
            let forecast = setup.ensemble.members(var)?;
            let analysis = run.result.analysis.members(var)?;
            let mut header = vec!["x".to_string()];
            let mut columns = vec![grid.nodes().to_vec()];
            for k in 0..members {
                header.push(format!("forecast_{}", k + 1));
                columns.push(forecast.column(k).iter().copied().collect());
            }
            for k in 0..members {
                header.push(format!("analysis_{}", k + 1));
                columns.push(analysis.column(k).iter().copied().collect());
            }
            if var == 0 {
                header.push("data".into());
                columns.push(setup.observation.data.clone());
            }
            let name = format!("assimilate_{}_var{}", run.method, var + 1);
            if cfg.wants(OutputFormat::Csv) {
                out.curves_csv(&format!("{name}.csv"), &header, &columns)?;
            }
            if cfg.wants(OutputFormat::Svg) {
                let data = (var == 0).then_some(setup.observation.data.as_slice());
                out.svg(
                    &format!("{name}.svg"),
                    &curves_svg(
                        grid.nodes(),
                        forecast.column(0).as_slice(),
                        analysis.column(0).as_slice(),
                        data,
                        &name,
                    ),
                )?;
            }
        }
    }
    let report = MetricsReport {
        experiment: ExperimentKind::Assimilate,
        seed: cfg.seed,
        methods: runs.into_iter().map(|r| r.metrics).collect(),
    };
    if cfg.wants(OutputFormat::Json) {
        out.json("metrics.json", &report)?;
    }
    Ok((report, out.finish()?))
}

/// Line plot of member 1: forecast dashed black, analysis solid blue, data
/// dotted red.
fn curves_svg(
    x: &[f64],
    forecast: &[f64],
    analysis: &[f64],
    data: Option<&[f64]>,
    title: &str,
) -> String {
    let (w, h, pad) = (480.0, 300.0, 30.0);
    let all = forecast
        .iter()
        .chain(analysis)
        .chain(data.into_iter().flatten());
    let (lo, hi) = all.fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let path = |y: &[f64]| {
        let points: Vec<String> = x
            .iter()
            .zip(y)
            .map(|(xv, yv)| {
                let px = pad + xv * (w - 2.0 * pad);
                let py = h - pad - (yv - lo) / span * (h - 2.0 * pad);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        points.join(" ")
    };
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">
<text x="{pad}" y="18" font-family="sans-serif" font-size="12">{title}</text>
<polyline fill="none" stroke="black" stroke-dasharray="6,4" points="{}"/>
<polyline fill="none" stroke="blue" points="{}"/>
"#,
        path(forecast),
        path(analysis)
    );
    if let Some(d) = data {
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"red\" stroke-dasharray=\"2,3\" points=\"{}\"/>\n",
            path(d)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Diagonal of a square matrix as a vector.
pub fn diagonal(m: &DMatrix<f64>) -> DVector<f64> {
    m.diagonal()
}

/// Index of the largest entry.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::MIN),
            |best, (i, x)| if *x > best.1 { (i, *x) } else { best },
        )
        .0
}

/// Standard deviation over mean.
pub fn coefficient_of_variation(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean.abs()
}
