use std::fs;
use std::path::{Path, PathBuf};

use identikit::dataset::{format_f64, DataSet};
use identikit::linalg::RankTolerance;
use identikit::model::{output_series, simulate as integrate_model};
use identikit::ols::{self, FitConfig, FitResult, ResidualSummary};
use identikit::subset::{enumerate_subsets, feasibility_cut, sweep, SelectionContext, SubsetReport, SubsetSpec};
use identikit::synthetic::{self, NoiseSpec};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", cfg.out.display())))?;
    Ok(&cfg.out)
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Config(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let model = cfg.model();
    let theta = cfg.parameter_set()?.values;
    let grid = cfg.time_grid()?;
    let integrator = cfg.integrator()?;
    let traj = integrate_model(&model, &theta, &grid, &integrator)?;
    let z = output_series(&model, &theta, &grid, &integrator)?;
    let dir = out_dir(cfg)?;

    let rows = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, x)| std::iter::once(*t).chain(x[..4].iter().copied()).map(format_f64).collect());
    write_csv(&dir.join("trajectory.csv"), &["t", "S", "E", "I", "R"], rows)?;
    let rows = grid.points().iter().zip(&z).map(|(t, z)| vec![format_f64(*t), format_f64(*z)]);
    write_csv(&dir.join("incidence.csv"), &["t", "z"], rows)?;
    println!("wrote {} states and {} incidence values to {}", traj.times.len(), z.len(), dir.display());
    Ok(())
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg
        .seed
        .ok_or_else(|| CliError::Config("a seed is required (--seed or `seed` in the config)".into()))?;
    let model = cfg.model();
    let theta = cfg.parameter_set()?.values;
    let grid = cfg.time_grid()?;
    let noise = NoiseSpec { sigma0: cfg.sigma0_sq.sqrt(), seed };
    let data = synthetic::generate(&model, &theta, &grid, &noise, &cfg.integrator()?)?;
    let path = out_dir(cfg)?.join(format!("data_seed{seed}.csv"));
    fs::write(&path, data.to_csv())?;
    println!("wrote {} observations to {} ({})", data.len(), path.display(), data.provenance);
    Ok(())
}

pub fn select(cfg: &RunConfig) -> Result<(), CliError> {
    let model = cfg.model();
    let nominal = cfg.parameter_set()?;
    let grid = cfg.time_grid()?;
    let integrator = cfg.integrator()?;
    let core: Vec<&str> = cfg.select.core.iter().map(String::as_str).collect();
    let pool: Vec<&str> = cfg.select.pool.iter().map(String::as_str).collect();
    if cfg.select.j_max > pool.len() {
        return Err(CliError::Config(format!("j range exceeds the pool size {}", pool.len())));
    }
    let ctx = SelectionContext {
        model: &model,
        nominal: &nominal,
        grid: &grid,
        integrator: &integrator,
        sigma0_sq: cfg.sigma0_sq,
        rank_tolerance: RankTolerance::Machine,
    };
    let dir = out_dir(cfg)?;

    for j in cfg.select.j_min..=cfg.select.j_max {
        let subsets = enumerate_subsets(j, &core, &pool, &nominal)?;
        let p = core.len() + j;
        let reports = sweep(&ctx, &subsets);
        write_subset_reports(&dir.join(format!("subsets_p{p}.csv")), p, &reports)?;
        let scatter = reports
            .iter()
            .filter_map(|r| Some(vec![r.subset.label(), format_f64(r.kappa?), format_f64(r.score?)]));
        write_csv(&dir.join(format!("scatter_p{p}.csv")), &["subset", "kappa", "alpha"], scatter)?;

        let feasible = feasibility_cut(&reports, cfg.thresholds());
        let retained = reports.iter().filter(|r| r.rank_ok).count();
        println!(
            "p = {p}: {} subsets, {retained} full rank, {} feasible (kappa <= {:e}, alpha <= {:e})",
            reports.len(),
            feasible.len(),
            cfg.select.kappa_max,
            cfg.select.alpha_max
        );
        if !feasible.is_empty() {
            println!("  {:<40} {:>12} {:>12}", "subset", "kappa", "alpha");
            for r in feasible.iter().take(cfg.select.top) {
                println!("  {:<40} {:>12.2e} {:>12.2e}", r.subset.label(), r.kappa.unwrap(), r.score.unwrap());
            }
        }
    }
    Ok(())
}

fn write_subset_reports(path: &Path, p: usize, reports: &[SubsetReport]) -> Result<(), CliError> {
    let cv_names: Vec<String> = (1..=p).map(|i| format!("cv_{i}")).collect();
    let mut header = vec!["subset", "p", "rank", "rank_ok", "kappa", "alpha"];
    header.extend(cv_names.iter().map(String::as_str));
    header.push("failure");
    let rows = reports.iter().map(|r| {
        let mut row = vec![
            r.subset.label(),
            r.p.to_string(),
            r.rank.map(|k| k.to_string()).unwrap_or_default(),
            r.rank_ok.to_string(),
            opt_f64(r.kappa),
            opt_f64(r.score),
        ];
        for i in 0..p {
            row.push(opt_f64(r.cv.as_ref().and_then(|c| c.get(i).copied())));
        }
        row.push(r.failure.clone().unwrap_or_default());
        row
    });
    write_csv(path, &header, rows)
}

#[derive(Serialize)]
struct FitReport<'a> {
    data: &'a str,
    subset: String,
    fixed: &'a std::collections::BTreeMap<String, f64>,
    result: &'a FitResult,
    residual_diagnostics: Option<ResidualSummary>,
}

pub fn fit(cfg: &RunConfig, data_path: &Path) -> Result<(), CliError> {
    let file = fs::File::open(data_path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", data_path.display())))?;
    let origin = data_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let data = DataSet::from_csv(file, format!("file {origin}"))
        .map_err(|e| CliError::Config(format!("{}: {e}", data_path.display())))?;

    let model = cfg.model();
    let nominal = cfg.parameter_set()?;
    let spec = SubsetSpec::new(&cfg.fit.subset, &nominal)?;
    let mut fit_cfg = FitConfig::seirs(&spec, &nominal)?;
    fit_cfg.max_iterations = cfg.fit.max_iterations;
    fit_cfg.gradient_tol = cfg.fit.gradient_tol;
    fit_cfg.step_tol = cfg.fit.step_tol;
    fit_cfg.cost_tol = cfg.fit.cost_tol;
    fit_cfg.t0 = cfg.grid.t0;

    let result = ols::fit(&data, &model, &spec, &fit_cfg, &cfg.integrator()?)?;
    let diagnostics = ols::residual_diagnostics(&result.residuals, &result.times).ok();
    let dir = out_dir(cfg)?;

    let report = FitReport {
        data: &data.provenance,
        subset: spec.label(),
        fixed: &spec.fixed,
        result: &result,
        residual_diagnostics: diagnostics.clone(),
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(dir.join("fit_report.json"), json + "\n")?;

    let table = fit_table(&spec, &result, diagnostics.as_ref());
    fs::write(dir.join("fit_table.txt"), &table)?;
    print!("{table}");

    let rows = (0..result.times.len()).map(|j| {
        vec![
            format_f64(result.times[j]),
            format_f64(data.values[j]),
            format_f64(result.fitted[j]),
            format_f64(result.residuals[j]),
        ]
    });
    write_csv(&dir.join("residuals.csv"), &["t", "y", "z", "r"], rows)?;

    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    if !result.converged {
        return Err(CliError::Numerical(format!(
            "fit did not converge ({:?} after {} iterations); partial report written to {}",
            result.termination,
            result.iterations,
            report_path(dir).display()
        )));
    }
    if result.rank_deficient_at_solution {
        return Err(CliError::Numerical("sensitivity matrix is rank deficient at the estimate".into()));
    }
    Ok(())
}

fn report_path(dir: &Path) -> PathBuf {
    dir.join("fit_report.json")
}

fn fit_table(spec: &SubsetSpec, r: &FitResult, diag: Option<&ResidualSummary>) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "Subset {}", spec.label());
    let _ = writeln!(s, "{:<10} {:>14} {:>14} {:>14}", "Parameter", "Estimate", "S.E.", "C.V.");
    for i in 0..r.names.len() {
        let se = r.se.as_ref().map(|v| format!("{:.2e}", v[i])).unwrap_or_else(|| "-".into());
        let cv = r.cv.as_ref().map(|v| format!("{:.2e}", v[i])).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "{:<10} {:>14.4e} {:>14} {:>14}", r.names[i], r.estimate[i], se, cv);
    }
    let _ = writeln!(
        s,
        "J = {:.6e}  sigma_hat^2 = {:.4e}  n = {}  iterations = {}  termination = {:?}",
        r.objective,
        r.sigma_hat_sq,
        r.residuals.len(),
        r.iterations,
        r.termination
    );
    if let Some(d) = diag {
        let _ = writeln!(
            s,
            "residuals: mean = {:.3e}  lag-1 autocorrelation = {:.3}  sign runs = {} (expected {:.1}, z = {:.2})",
            d.mean, d.lag1_autocorrelation, d.sign_runs, d.expected_runs, d.runs_z
        );
    }
    s
}
