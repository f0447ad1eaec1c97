use std::path::Path;

use cavity_detect::counting::{
    g2_estimate, nonlinear_noise_prediction, pooled_variance_to_mean, variance_to_mean, Averaging, NoiseModel,
};
use cavity_detect::fidelity::{comparison_table, fidelity_curve, ComparisonRow};
use cavity_detect::lindblad::C64;
use cavity_detect::neff::{ks_distance, neff_distribution, NeffKind, NeffMoments, NeffRequest};
use cavity_detect::quantum::{steady_state_converged, steady_state_with, SystemSpec};
use cavity_detect::transit::{fit_cloud_profile, simulate_counts, FitOptions, ProfileData};
use cavity_detect::zeeman::{equilibrium_populations, sigma_fraction, LevelScheme};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{self, CurvePoint};
use crate::manifest::OutputSet;

/// What a command produced: a JSON summary plus an optional main table.
pub struct Report {
    pub summary: Value,
    pub table: Option<Vec<u8>>,
    pub text: Option<String>,
}

fn finish(
    out: OutputSet,
    command: &str,
    cfg: &RunConfig,
    summary: Value,
    table: Option<Vec<u8>>,
) -> Result<Report, CliError> {
    out.finish(command, cfg)?;
    Ok(Report {
        summary,
        table,
        text: None,
    })
}

pub fn neff(cfg: &RunConfig, out_dir: &Path) -> Result<Report, CliError> {
    let n = &cfg.neff;
    if n.mean_neff.is_nan() || n.mean_neff <= 0.0 {
        return Err(CliError::Usage(format!(
            "neff.mean_neff must be a positive mean, got {}",
            n.mean_neff
        )));
    }
    let req = NeffRequest {
        params: cfg.params,
        mean_neff: n.mean_neff,
        samples: n.samples,
        bins: n.bins,
        resolution: n.resolution,
        truncate: true,
        seed: cfg.seed,
    };
    let dist = neff_distribution(n.model, &req)?;
    let other_kind = match n.model {
        NeffKind::MonteCarloEmpirical => NeffKind::GaussianApprox,
        NeffKind::GaussianApprox => NeffKind::MonteCarloEmpirical,
    };
    let other = neff_distribution(other_kind, &req)?;
    let (mean, variance, ratio_stderr) = match &dist.samples {
        Some(s) => {
            let m = NeffMoments::from_samples(s)?;
            (m.mean, m.variance, Some(m.ratio_stderr))
        }
        None => (dist.mean(), dist.variance(), None),
    };
    let points: Vec<CurvePoint> = dist
        .nodes
        .iter()
        .zip(&dist.density)
        .map(|(&x, &y)| CurvePoint { x, y, yerr: 0.0 })
        .collect();
    let table = io::curve_to_csv(&points);
    let summary = json!({
        "model": n.model,
        "requested_mean_neff": n.mean_neff,
        "mean": mean,
        "variance": variance,
        "var_over_mean": variance / mean,
        "var_over_mean_stderr": ratio_stderr,
        "normalization": dist.normalization,
        "truncated": dist.truncated,
        "ks_compared_with": other_kind,
        "ks_statistic": ks_distance(&dist, &other),
    });
    let mut out = OutputSet::create(out_dir)?;
    out.write("neff_density.csv", &table)?;
    out.write_json("neff_moments.json", &summary)?;
    finish(out, "neff", cfg, summary, Some(table))
}

pub fn simulate(cfg: &RunConfig, out_dir: &Path) -> Result<Report, CliError> {
    let plan = cfg.experiment_plan()?;
    let stream = simulate_counts(&plan, &cfg.cloud)?;
    let table = io::counts_to_csv(&stream, plan.grid.start_ms);
    let total: u64 = stream.counts().iter().sum();
    let summary = json!({
        "mode": plan.signal.mode,
        "trials": stream.trials(),
        "bins": stream.bins(),
        "bin_width_us": stream.bin_width(),
        "start_ms": plan.grid.start_ms,
        "motion": plan.motion,
        "refresh_bins": plan.refresh(),
        "transit_time_us": plan.transit_time_us(),
        "cooperativity_ratio": plan.signal.cooperativity_ratio,
        "total_counts": total,
        "mean_counts_per_bin": total as f64 / stream.counts().len() as f64,
    });
    let mut out = OutputSet::create(out_dir)?;
    out.write("counts.csv", &table)?;
    out.write_json("simulate_summary.json", &summary)?;
    finish(out, "simulate", cfg, summary, Some(table))
}

#[derive(Serialize)]
struct FidelityOptimum {
    k: u32,
    f_max: f64,
    t_max_us: f64,
}

pub fn analyze(cfg: &RunConfig, input: &Path, out_dir: &Path) -> Result<Report, CliError> {
    let bytes = io::read_file(input)?;
    let (stream, start_ms) = io::parse_counts(&bytes, input, cfg.plan.bin_width_us)?;
    let a = &cfg.analysis;
    let mut out = OutputSet::create(out_dir)?;
    let mut summary = serde_json::Map::new();
    summary.insert("trials".into(), json!(stream.trials()));
    summary.insert("bins".into(), json!(stream.bins()));
    summary.insert("bin_width_us".into(), json!(stream.bin_width()));

    let max_lag = a.max_lag.min(stream.bins().saturating_sub(1));
    let g2 = g2_estimate(&stream, max_lag)?;
    let g2_points: Vec<CurvePoint> = g2
        .iter()
        .map(|p| CurvePoint {
            x: p.tau_us,
            y: p.g2,
            yerr: p.stderr,
        })
        .collect();
    let g2_csv = io::curve_to_csv(&g2_points);
    out.write("g2.csv", &g2_csv)?;
    summary.insert("g2".into(), json!(g2));

    if stream.trials() >= 2 {
        let v = variance_to_mean(&stream, a.variance_window)?;
        let pts: Vec<CurvePoint> = v
            .iter()
            .map(|p| CurvePoint {
                x: start_ms * 1000.0 + p.t_us,
                y: p.ratio,
                yerr: p.stderr,
            })
            .collect();
        out.write("variance.csv", &io::curve_to_csv(&pts))?;
        let pooled = pooled_variance_to_mean(&stream)?;
        summary.insert("var_over_mean".into(), json!(pooled.value));
        summary.insert("var_over_mean_stderr".into(), json!(pooled.stderr));
        if cfg.cloud.fwhm_ms.is_infinite() && cfg.cloud.peak_mean_neff > 0.0 {
            summary.insert(
                "predicted_var_over_mean".into(),
                json!(predicted_ratio(cfg, stream.bin_width())?),
            );
        }
    }

    let rates = cfg.detector_rates()?;
    let mut optima = Vec::new();
    let times: Vec<f64> = (0..a.fidelity_points.max(2))
        .map(|i| a.fidelity_window_us * i as f64 / (a.fidelity_points.max(2) - 1) as f64)
        .collect();
    for &k in &a.thresholds {
        let curve = fidelity_curve(&rates, k, &times)?;
        let pts: Vec<CurvePoint> = curve
            .samples
            .iter()
            .map(|&(x, y)| CurvePoint { x, y, yerr: 0.0 })
            .collect();
        out.write(&format!("fidelity_k{k}.csv"), &io::curve_to_csv(&pts))?;
        summary.insert(format!("F{k}max"), json!(curve.optimum.fidelity));
        summary.insert(format!("T{k}max_us"), json!(curve.optimum.t_us));
        optima.push(FidelityOptimum {
            k,
            f_max: curve.optimum.fidelity,
            t_max_us: curve.optimum.t_us,
        });
    }
    summary.insert("fidelity".into(), json!(optima));

    if a.fit {
        let data = ProfileData::from_stream(&stream, start_ms)?;
        let opts = FitOptions {
            model: a.fit_model.clone(),
            seed: cfg.seed,
            ..FitOptions::default()
        };
        let fit = fit_cloud_profile(
            &data,
            &cfg.signal_model()?,
            cfg.plan.background_per_us,
            &cfg.cloud,
            &opts,
        )?;
        summary.insert("cloud_fit".into(), json!(fit));
    }

    let summary = Value::Object(summary);
    out.write_json("analysis.json", &summary)?;
    finish(out, "analyze", cfg, summary, Some(g2_csv))
}

/// Var(k)/⟨k⟩ expected for a stationary cloud, background included.
fn predicted_ratio(cfg: &RunConfig, bin_width: f64) -> Result<f64, CliError> {
    let signal = cfg.signal_model()?;
    let req = NeffRequest {
        samples: cfg.neff.samples,
        bins: cfg.neff.bins,
        resolution: cfg.neff.resolution,
        ..NeffRequest::new(cfg.params, cfg.cloud.peak_mean_neff, cfg.seed ^ 0x5eed)
    };
    let dist = neff_distribution(NeffKind::MonteCarloEmpirical, &req)?;
    let model = NoiseModel {
        collection: signal.calibration.efficiency,
        fibre: signal.drive.fibre_coupling,
        kappa: cfg.params.kappa,
        bin_width,
        per_atom_yield: signal.calibration.fluorescence_rate_one_atom * bin_width,
    };
    let background = cfg.plan.background_per_us;
    let map = |n: f64| signal.detected_rate(n) + background;
    Ok(nonlinear_noise_prediction(&dist, &map, &model, Averaging::RawSamples)?)
}

fn percent(x: f64, digits: usize) -> String {
    format!("{:.*}%", digits, 100.0 * x)
}

pub fn render_table1(rows: &[ComparisonRow]) -> String {
    let mut lines = vec![format!(
        "{:<14} {:>8} {:>8} {:>11} {:>10} {:>11} {:>10}",
        "source", "S1/ms", "B/ms", "F1max", "T1max/µs", "F2max", "T2max/µs"
    )];
    for r in rows {
        lines.push(format!(
            "{:<14} {:>8} {:>8} {:>11} {:>10.1} {:>11} {:>10.1}",
            r.label,
            r.signal_per_ms,
            r.background_per_ms,
            percent(r.f1_max, 3),
            r.t1_max_us,
            percent(r.f2_max, 5),
            r.t2_max_us
        ));
    }
    lines.join("\n") + "\n"
}

pub fn table1(cfg: &RunConfig, out_dir: &Path) -> Result<Report, CliError> {
    let rows = comparison_table()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).expect("in-memory csv write");
    }
    let table = w.into_inner().expect("in-memory csv flush");
    let summary: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "label": r.label,
                "S1_per_ms": r.signal_per_ms,
                "B_per_ms": r.background_per_ms,
                "F1max": r.f1_max,
                "T1max_us": r.t1_max_us,
                "F2max": r.f2_max,
                "T2max_us": r.t2_max_us,
            })
        })
        .collect();
    let text = render_table1(&rows);
    let mut out = OutputSet::create(out_dir)?;
    out.write("table1.csv", &table)?;
    out.write("table1.txt", text.as_bytes())?;
    out.write_json("table1.json", &summary)?;
    out.finish("table1", cfg)?;
    Ok(Report {
        summary: Value::Array(summary),
        table: Some(table),
        text: Some(text),
    })
}

pub fn steady(cfg: &RunConfig, out_dir: &Path) -> Result<Report, CliError> {
    let s = &cfg.steady;
    let spec = SystemSpec {
        couplings: s.couplings.iter().map(|c| c * cfg.params.g).collect(),
        rabi: vec![C64::new(s.rabi, 0.0); s.couplings.len()],
        ..SystemSpec::empty_cavity(cfg.params, s.pump_over_kappa * cfg.params.kappa)
    }
    .with_cutoff(s.fock_cutoff);
    let ss = if s.converge_cutoff {
        steady_state_converged(&spec, &s.solver)?
    } else {
        steady_state_with(&spec, &s.solver)?
    };
    let b = cfg.signal.fringe_amplitude;
    let field = ss.field();
    let summary = json!({
        "atoms": spec.n_atoms(),
        "fock_cutoff": ss.spec.fock_cutoff,
        "dim": ss.spec.dim(),
        "solver": ss.solver,
        "residual": ss.residual,
        "photons": ss.photons(),
        "field_re": field.re,
        "field_im": field.im,
        "g2_zero": ss.g2_zero().ok(),
        "excitation": (0..spec.n_atoms()).map(|j| ss.excitation(j)).collect::<Vec<_>>(),
        "cavity_emission_per_us": ss.cavity_emission_rate(),
        "atomic_emission_per_us": ss.atomic_emission_rate(),
        "reflected_fraction": ss.reflected_fraction(b).ok(),
        "closed_form_reflection": ss.closed_form_reflection(b),
    });
    let mut out = OutputSet::create(out_dir)?;
    out.write_json("steady_state.json", &summary)?;
    finish(out, "steady", cfg, summary, None)
}

pub fn zeeman(cfg: &RunConfig, out_dir: &Path) -> Result<Report, CliError> {
    let z = &cfg.zeeman;
    let scheme = LevelScheme::f2_to_f3();
    let state = equilibrium_populations(&scheme, &z.drive(z.saturation), &z.model)?;
    let ratio = z.ratio(z.saturation)?;
    let scan: Vec<CurvePoint> = z
        .scan
        .iter()
        .map(|&s| z.ratio(s).map(|y| CurvePoint { x: s, y, yerr: 0.0 }))
        .collect::<Result<_, _>>()?;
    let table = io::curve_to_csv(&scan);
    let spread = scan.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max)
        - scan.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let summary = json!({
        "model": z.model,
        "polarization": z.polarization,
        "collection": z.collection,
        "saturation": z.saturation,
        "ground_m": scheme.ground_m,
        "excited_m": scheme.excited_m,
        "populations": state.populations,
        "excited_population": state.excited_population(&scheme),
        "sigma_fraction": sigma_fraction(&state.populations, &scheme).ok(),
        "cooperativity_ratio": ratio,
        "scan_spread": if scan.is_empty() { None } else { Some(spread) },
    });
    let mut out = OutputSet::create(out_dir)?;
    out.write("zeeman_scan.csv", &table)?;
    out.write_json("zeeman.json", &summary)?;
    finish(out, "zeeman", cfg, summary, Some(table))
}
