//! Acceptance suite: runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero when any criterion fails.

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use identikit::dataset::DataSet;
use identikit::linalg::{condition_number, fisher, fisher_condition_number, numerical_rank, svd, RankTolerance};
use identikit::model::{output_series, ModelSystem, ParameterSet};
use identikit::ode::{IntegratorConfig, TimeGrid};
use identikit::ols::{fit, linearized_estimator, linearized_estimator_normal, residual_diagnostics, FitConfig, FitResult};
use identikit::seirs::{NominalScenario, SeirsModel, PARAM_NAMES};
use identikit::sensitivity::{finite_difference_sensitivities, max_relative_column_discrepancy, output_sensitivities};
use identikit::subset::{enumerate_subsets, sweep, SelectionContext, SubsetSpec, SEIRS_CORE, SEIRS_POOL};
use identikit::synthetic::{generate, GaussianStream, NoiseSpec};
use nalgebra::DMatrix;

const SEED: u64 = 42;

const NESTED_FITS: [&[&str]; 5] = [
    &["S0", "N", "L", "D", "M", "beta0", "a1", "b1"],
    &["N", "L", "D", "M", "beta0", "a1", "b1"],
    &["N", "L", "D", "beta0", "a1", "b1"],
    &["L", "D", "beta0", "a1", "b1"],
    &["L", "beta0", "a1", "b1"],
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn scenario() -> &'static NominalScenario {
    static S: OnceLock<NominalScenario> = OnceLock::new();
    S.get_or_init(NominalScenario::default)
}

fn nominal() -> ParameterSet {
    scenario().params.to_parameter_set()
}

fn integrator() -> IntegratorConfig {
    IntegratorConfig::default()
}

fn noisy_data() -> &'static DataSet {
    static D: OnceLock<DataSet> = OnceLock::new();
    D.get_or_init(|| {
        let sc = scenario();
        let noise = NoiseSpec { sigma0: sc.sigma0_sq.sqrt(), seed: SEED };
        generate(&SeirsModel, &sc.params.to_vec(), &sc.grid, &noise, &integrator()).unwrap()
    })
}

fn fit_names(data: &DataSet, names: &[&str]) -> FitResult {
    let full = nominal();
    let spec = SubsetSpec::new(names, &full).unwrap();
    let cfg = FitConfig::seirs(&spec, &full).unwrap();
    fit(data, &SeirsModel, &spec, &cfg, &integrator()).unwrap()
}

/// The five nested fits on one shared seeded dataset.
fn nested_fits() -> &'static Vec<FitResult> {
    static F: OnceLock<Vec<FitResult>> = OnceLock::new();
    F.get_or_init(|| NESTED_FITS.iter().map(|names| fit_names(noisy_data(), names)).collect())
}

fn cv_of(r: &FitResult, name: &str) -> f64 {
    let i = r.names.iter().position(|n| n == name).unwrap();
    r.cv.as_ref().expect("covariance at the estimate")[i]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    svd(m).unwrap().singular_values.iter().copied().collect()
}

fn context<'a>(nominal: &'a ParameterSet, integrator: &'a IntegratorConfig) -> SelectionContext<'a, SeirsModel> {
    SelectionContext {
        model: &SeirsModel,
        nominal,
        grid: &scenario().grid,
        integrator,
        sigma0_sq: scenario().sigma0_sq,
        rank_tolerance: RankTolerance::Machine,
    }
}

fn c1_full_vector_rank() -> Outcome {
    let sc = scenario();
    let chi = output_sensitivities(&SeirsModel, &sc.params.to_vec(), &PARAM_NAMES, &sc.grid, &integrator()).unwrap();
    let s = singular_values(&chi.values);
    let rank = numerical_rank(&s, chi.nrows(), chi.ncols());
    outcome(rank < 11, format!("numerical rank {rank} of 11, s_min/s_max = {:.3e}", s[10] / s[0]))
}

fn c2_p4_ordering() -> Outcome {
    let full = nominal();
    let cfg = integrator();
    let reports = sweep(&context(&full, &cfg), &enumerate_subsets(1, &SEIRS_CORE, &SEIRS_POOL, &full).unwrap());
    let top: Vec<String> = reports.iter().take(3).map(|r| r.subset.label()).collect();
    let order_ok = top == ["(L,beta0,a1,b1)", "(M,beta0,a1,b1)", "(P,beta0,a1,b1)"];
    let mut detail = format!("top three {top:?}");
    let mut ranges_ok = true;
    for lead in ["L", "M", "P"] {
        let label = format!("({lead},beta0,a1,b1)");
        let r = reports.iter().find(|r| r.subset.label() == label).unwrap();
        let (k, a) = (r.kappa.unwrap(), r.score.unwrap());
        ranges_ok &= (1e4..=1e7).contains(&k) && (5e-3..=5e-1).contains(&a);
        detail.push_str(&format!("; {lead}: kappa {k:.3e}, alpha {a:.3e}"));
    }
    outcome(order_ok && ranges_ok, detail)
}

fn c3_condition_identity() -> Outcome {
    let mut g = GaussianStream::new(3);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let p = 2 + k % 10;
        let scales: Vec<f64> = (0..p).map(|c| 10f64.powi((c as i32 * 7 + k as i32) % 7 - 3)).collect();
        let m = DMatrix::from_fn(60 + k, p, |_, c| g.next_normal() * scales[c]);
        let kappa = condition_number(&singular_values(&m), m.nrows()).unwrap();
        worst = worst.max(rel(fisher_condition_number(&fisher(&m)).unwrap(), kappa * kappa));
    }
    let sc = scenario();
    let theta = sc.params.to_vec();
    for lead in ["L", "M", "P"] {
        let names = [lead, "beta0", "a1", "b1"];
        let chi = output_sensitivities(&SeirsModel, &theta, &names, &sc.grid, &integrator()).unwrap().values;
        let kappa = condition_number(&singular_values(&chi), chi.nrows()).unwrap();
        worst = worst.max(rel(fisher_condition_number(&fisher(&chi)).unwrap(), kappa * kappa));
    }
    outcome(worst <= 1e-6, format!("max relative deviation {worst:.3e} over 53 matrices"))
}

fn c4_sensitivity_oracle() -> Outcome {
    let sc = scenario();
    let theta = sc.params.to_vec();
    let cfg = integrator();
    let mut detail = Vec::new();
    let mut pass = true;
    for names in [&["beta0", "a1", "b1"][..], &["L", "D", "beta0", "a1", "b1"]] {
        let fwd = output_sensitivities(&SeirsModel, &theta, names, &sc.grid, &cfg).unwrap();
        let fd = finite_difference_sensitivities(&SeirsModel, &theta, names, &sc.grid, &cfg.tightened(1e3), 1e-5).unwrap();
        let d = max_relative_column_discrepancy(&fwd.values, &fd.values);
        pass &= d <= 1e-3;
        detail.push(format!("{names:?}: {d:.2e}"));
    }
    outcome(pass, detail.join("; "))
}

fn c5_exact_recovery() -> Outcome {
    let sc = scenario();
    let clean = generate(&SeirsModel, &sc.params.to_vec(), &sc.grid, &NoiseSpec { sigma0: 0.0, seed: SEED }, &integrator()).unwrap();
    let names = ["L", "beta0", "a1", "b1"];
    let r = fit_names(&clean, &names);
    let truth = SubsetSpec::new(&names, &nominal()).unwrap().active_values(&nominal()).unwrap();
    let worst = r.estimate.iter().zip(&truth).map(|(e, t)| rel(*e, *t)).fold(0.0, f64::max);
    outcome(
        worst < 1e-6 && r.objective < 1e-6,
        format!("max relative error {worst:.2e}, J = {:.2e}", r.objective),
    )
}

fn c6_best_case_cvs() -> Outcome {
    let r = &nested_fits()[4];
    let limits = [0.01, 0.01, 0.01, 0.05];
    let cv = r.cv.as_ref().unwrap();
    let pass = r.converged && cv.iter().zip(limits).all(|(c, l)| c.abs() < l);
    outcome(pass, format!("CVs {:?}", cv.iter().map(|c| format!("{c:.2e}")).collect::<Vec<_>>()))
}

fn c7_nested_improvement() -> Outcome {
    let fits = nested_fits();
    let n8 = cv_of(&fits[0], "N");
    let n7 = cv_of(&fits[1], "N");
    let drop_n = n8.abs() / n7.abs();
    let mut pass = drop_n >= 10.0;
    let mut detail = format!("CV(N) {n8:.2e} -> {n7:.2e} (factor {drop_n:.1})");
    for name in &fits[2].names {
        let f = cv_of(&fits[0], name).abs() / cv_of(&fits[2], name).abs();
        pass &= f >= 10.0;
        detail.push_str(&format!("; {name} x{f:.1}"));
    }
    outcome(pass, detail)
}

/// Output rate `θ0 + θ1 cos 2πt + θ2 sin 2πt + θ3 t`.
struct LinearOutput;

const LINEAR_NAMES: [&str; 4] = ["c0", "c1", "c2", "c3"];

fn basis(t: f64) -> [f64; 4] {
    [1.0, (2.0 * PI * t).cos(), (2.0 * PI * t).sin(), t]
}

impl ModelSystem for LinearOutput {
    fn state_dim(&self) -> usize {
        1
    }
    fn param_names(&self) -> &[&'static str] {
        &LINEAR_NAMES
    }
    fn validate(&self, _theta: &[f64]) -> identikit::Result<()> {
        Ok(())
    }
    fn initial_state(&self, _theta: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
    fn initial_state_jacobian(&self, _theta: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(1, 4)
    }
    fn vector_field(&self, _t: f64, _x: &[f64], _theta: &[f64], dx: &mut [f64]) {
        dx[0] = 0.0;
    }
    fn state_jacobian(&self, _t: f64, _x: &[f64], _theta: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn param_jacobian(&self, _t: f64, _x: &[f64], _theta: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(1, 4)
    }
    fn output_rate(&self, t: f64, _x: &[f64], theta: &[f64]) -> f64 {
        basis(t).iter().zip(theta).map(|(b, c)| b * c).sum()
    }
    fn output_rate_state_grad(&self, _t: f64, _x: &[f64], _theta: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
    fn output_rate_param_grad(&self, t: f64, _x: &[f64], _theta: &[f64]) -> Vec<f64> {
        basis(t).to_vec()
    }
}

fn c8_linearization() -> Outcome {
    let mut g = GaussianStream::new(8);
    let mut worst_forms = 0.0f64;
    for k in 0..100 {
        let p = 2 + k % 6;
        let chi = DMatrix::from_fn(50, p, |_, _| g.next_normal());
        let eps: Vec<f64> = (0..50).map(|_| g.next_normal()).collect();
        let theta0: Vec<f64> = (0..p).map(|i| 1.0 + i as f64).collect();
        let a = linearized_estimator(&chi, &eps, &theta0).unwrap();
        let b = linearized_estimator_normal(&chi, &eps, &theta0).unwrap();
        for i in 0..p {
            worst_forms = worst_forms.max(rel(b[i], a[i]));
        }
    }

    let theta0 = vec![100.0, 20.0, -15.0, 4.0];
    let names: Vec<String> = LINEAR_NAMES.iter().map(|s| s.to_string()).collect();
    let full = ParameterSet::new(names.clone(), theta0.clone(), vec![String::new(); 4]).unwrap();
    let grid = TimeGrid::uniform(0.0, 3.0, 52.0).unwrap();
    let cfg = integrator();
    let chi = output_sensitivities(&LinearOutput, &theta0, &names, &grid, &cfg).unwrap();
    let eps: Vec<f64> = (0..grid.len()).map(|_| 0.5 * g.next_normal()).collect();
    let y = chi.outputs.iter().zip(&eps).map(|(z, e)| z + e).collect();
    let data = DataSet::new(grid.points().to_vec(), y, "linear").unwrap();
    let spec = SubsetSpec::new(&names, &full).unwrap();
    let inf = f64::INFINITY;
    let mut fc = FitConfig::new(theta0.clone(), vec![-inf; 4], vec![inf; 4]);
    fc.gradient_tol = 1e-14;
    fc.step_tol = 1e-15;
    let r = fit(&data, &LinearOutput, &spec, &fc, &cfg).unwrap();
    let lin = linearized_estimator(&chi.values, &eps, &theta0).unwrap();
    let worst_fit = r.estimate.iter().zip(&lin).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);

    outcome(
        worst_forms <= 1e-8 && worst_fit <= 1e-8 && r.converged,
        format!("normal vs SVD {worst_forms:.2e} over 100 instances; linear fit vs linearized {worst_fit:.2e}"),
    )
}

fn c9_combinatorics() -> Outcome {
    let full = nominal();
    let binom = |n: usize, k: usize| (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1));
    let mut total = 0;
    let mut counts_ok = true;
    for j in 1..=7 {
        let c = enumerate_subsets(j, &SEIRS_CORE, &SEIRS_POOL, &full).unwrap().len();
        counts_ok &= c == binom(8, j);
        total += c;
    }
    let cfg = integrator();
    let ctx = context(&full, &cfg);
    let start = Instant::now();
    let mut evaluated = 0;
    for j in 1..=5 {
        evaluated += sweep(&ctx, &enumerate_subsets(j, &SEIRS_CORE, &SEIRS_POOL, &full).unwrap()).len();
    }
    let elapsed = start.elapsed();
    outcome(
        counts_ok && total == 254 && elapsed < Duration::from_secs(600),
        format!("{total} subsets for j = 1..7; p = 4..8 sweep of {evaluated} subsets in {elapsed:.1?}"),
    )
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_identikit")).args(args).output().expect("run identikit")
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let out_s = out.to_str().unwrap();
        let g = run_cli(&["generate", "--seed", "42", "--out", out_s]);
        assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
        let data = out.join("data_seed42.csv");
        let f = run_cli(&["fit", "--data", data.to_str().unwrap(), "--out", out_s]);
        assert!(f.status.success(), "{}", String::from_utf8_lossy(&f.stderr));
        let read = |name: &str| std::fs::read(out.join(name)).unwrap();
        files.push((read("data_seed42.csv"), read("fit_report.json"), read("residuals.csv")));
    }
    let same_data = files[0].0 == files[1].0;
    let same_report = files[0].1 == files[1].1 && files[0].2 == files[1].2;
    outcome(same_data && same_report, format!("data identical: {same_data}; fit report identical: {same_report}"))
}

fn c11_residual_structure() -> Outcome {
    let fits = nested_fits();
    let lag = |r: &FitResult| residual_diagnostics(&r.residuals, &r.times).unwrap().lag1_autocorrelation;
    let (l8, l5) = (lag(&fits[0]), lag(&fits[3]));
    outcome(l8 > l5 && l5.abs() < 0.2, format!("lag-1 autocorrelation p=8: {l8:.4}, (L,D,beta0,a1,b1): {l5:.4}"))
}

fn c12_noise_statistics() -> Outcome {
    let sc = scenario();
    let theta = sc.params.to_vec();
    let cfg = integrator();
    let sigma0 = sc.sigma0_sq.sqrt();
    let z = output_series(&SeirsModel, &theta, &sc.grid, &cfg).unwrap();

    let mean_var = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
    };
    let v: Vec<f64> = noisy_data().values.iter().zip(&z).map(|(y, z)| (y - z) / sigma0).collect();
    let (m1, v1) = mean_var(&v);
    let single_ok = m1.abs() <= 4.0 / (v.len() as f64).sqrt() && (v1 - 1.0).abs() <= 0.5;

    let j = 130;
    let draws: Vec<f64> = (0..1000u64)
        .map(|seed| generate(&SeirsModel, &theta, &sc.grid, &NoiseSpec { sigma0, seed }, &cfg).unwrap().values[j] - z[j])
        .collect();
    let (m, var) = mean_var(&draws);
    let rep_ok = m.abs() <= 5.0 * sigma0 / 1000f64.sqrt() && (var / sc.sigma0_sq - 1.0).abs() <= 0.2;
    outcome(
        single_ok && rep_ok,
        format!(
            "one dataset: mean {m1:.3}, var {v1:.3}; 1000 replicates at j={j}: mean {m:.3}, var/sigma0^2 {:.3}",
            var / sc.sigma0_sq
        ),
    )
}

fn example_select_p11_rank_deficient() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&["select", "--j-range", "8", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("subsets_p11.csv")).unwrap();
    let row = reader.records().next().unwrap().unwrap();
    let (rank, rank_ok) = (row[2].to_string(), row[3].to_string());
    outcome(rank_ok == "false", format!("rank {rank}, rank_ok = {rank_ok} for the full vector"))
}

fn example_eight_parameter_cvs() -> Outcome {
    let cv = nested_fits()[0].cv.clone().unwrap();
    let above = cv.iter().filter(|c| c.abs() > 1.0).count();
    let largest = cv.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    outcome(above >= 2, format!("{above} CVs above 1, largest |CV| {largest:.2e}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("rank deficiency of the full parameter vector", c1_full_vector_rank),
        ("p=4 feasibility ordering and magnitudes", c2_p4_ordering),
        ("condition number of the Fisher information", c3_condition_identity),
        ("forward sensitivities vs finite differences", c4_sensitivity_oracle),
        ("exact recovery from noise-free data", c5_exact_recovery),
        ("best-case subset CVs", c6_best_case_cvs),
        ("nested-subset CV improvement", c7_nested_improvement),
        ("linearized estimator identities", c8_linearization),
        ("subset combinatorics and sweep time", c9_combinatorics),
        ("generate/fit determinism", c10_determinism),
        ("residual temporal structure", c11_residual_structure),
        ("synthetic noise statistics", c12_noise_statistics),
    ];
    let examples: [(&str, fn() -> Outcome); 2] = [
        ("select marks the 11-parameter vector rank deficient", example_select_p11_rank_deficient),
        ("8-parameter fit has several CVs above 1", example_eight_parameter_cvs),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let labelled = criteria
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("criterion {:>2}", i + 1), c))
        .chain(examples.iter().enumerate().map(|(i, c)| (format!("example   {}", i + 1), c)));
    for (label, (name, check)) in labelled {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{label} {}: {} ({}) [{:.1?}]",
            if result.pass { "PASS" } else { "FAIL" },
            name,
            result.detail,
            start.elapsed()
        );
    }
    let total = criteria.len() + examples.len();
    println!("acceptance: {} of {total} passed, {failed} failed", total - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
