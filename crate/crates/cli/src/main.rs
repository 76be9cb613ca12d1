//! `identikit`: simulate the seasonal SEIRS model, generate synthetic data,
//! rank parameter subsets by identifiability, and fit them by least squares.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<identikit::Error> for CliError {
    fn from(e: identikit::Error) -> Self {
        use identikit::Error::*;
        match e {
            InvalidGrid(_) | InvalidIntegratorConfig(_) | InvalidParameters(_) | SubsetUnknownName(_)
            | DuplicateName(_) | InvalidSubsetSize { .. } | InvalidFitConfig(_) | DataParse(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Exit status: 0 success, 1 usage or configuration error, 2 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "identikit", version, about, long_about = None)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; built-in nominal values are used when omitted
    /// (model seirs, sigma0_sq 500, grid 0:5:52, rel_tol 1e-8, abs_tol 1e-10)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of the synthetic noise stream
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Observation grid as t0:span:cadence (years, years, observations per year)
    #[arg(long, global = true)]
    grid: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write trajectory.csv (t,S,E,I,R) and incidence.csv (t,z) at the nominal values
    Simulate,
    /// Write data_seed{S}.csv with y = z + sigma0 * N(0,1)
    Generate {
        /// Noise variance, overriding the config
        #[arg(long)]
        sigma0_sq: Option<f64>,
    },
    /// Rank parameter subsets by condition number and uncertainty score
    Select {
        /// Range of pool choices j, as `a..b` or a single j; p = |core| + j [default: 1..5]
        #[arg(long)]
        j_range: Option<String>,
    },
    /// Fit an active subset to an observation CSV
    Fit {
        /// Observation file with header `t,y`
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated active parameters [default: L,beta0,a1,b1]
        #[arg(long)]
        subset: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.common.out {
        cfg.out = out;
    }
    if let Some(seed) = cli.common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(grid) = &cli.common.grid {
        cfg.grid = config::parse_grid(grid).map_err(CliError::Config)?;
    }

    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Generate { sigma0_sq } => {
            if let Some(s) = sigma0_sq {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(CliError::Config("sigma0_sq must be finite and nonnegative".into()));
                }
                cfg.sigma0_sq = s;
            }
            commands::generate(&cfg)
        }
        Command::Select { j_range } => {
            if let Some(r) = j_range {
                let (a, b) = config::parse_range(&r).map_err(CliError::Config)?;
                if a == 0 || a > b {
                    return Err(CliError::Config(format!("invalid j range `{r}`")));
                }
                cfg.select.j_min = a;
                cfg.select.j_max = b;
            }
            commands::select(&cfg)
        }
        Command::Fit { data, subset } => {
            if let Some(s) = subset {
                cfg.fit.subset = config::parse_list(&s);
            }
            commands::fit(&cfg, &data)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    use identikit::seirs::{SeirsParameters, PARAM_NAMES};

    fn cli(args: &[&str]) -> Result<(), CliError> {
        run(Cli::try_parse_from(std::iter::once("identikit").chain(args.iter().copied())).unwrap())
    }

    fn column(path: &Path, k: usize) -> Vec<f64> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(k).unwrap().parse().unwrap())
            .collect()
    }

    fn config_with(overrides: &[(&str, f64)]) -> String {
        let mut text = String::from("[parameters]\n");
        for (n, v) in PARAM_NAMES.iter().zip(SeirsParameters::nominal().to_vec()) {
            let v = overrides.iter().find(|(o, _)| o == n).map_or(v, |(_, x)| *x);
            text.push_str(&format!("{n} = {v:e}\n"));
        }
        text
    }

    fn fit_report(dir: &Path) -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(dir.join("fit_report.json")).unwrap()).unwrap()
    }

    fn floats(v: &serde_json::Value) -> Vec<f64> {
        v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
    }

    #[test]
    fn simulate_writes_trajectory_and_incidence() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        cli(&["simulate", "--out", out]).unwrap();
        let z = column(&dir.path().join("incidence.csv"), 1);
        assert_eq!(z.len(), 260);
        assert!(z.iter().all(|v| *v >= 0.0));
        assert_eq!(column(&dir.path().join("trajectory.csv"), 0).len(), 261);
    }

    #[test]
    fn no_infection_gives_zero_incidence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, config_with(&[("E0", 0.0), ("I0", 0.0)])).unwrap();
        cli(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]).unwrap();
        assert!(column(&dir.path().join("incidence.csv"), 1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn missing_parameter_is_a_config_error_naming_it() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        let text: String = config_with(&[]).lines().filter(|l| !l.starts_with("beta0")).map(|l| format!("{l}\n")).collect();
        std::fs::write(&cfg, text).unwrap();
        let err = cli(&["simulate", "--config", cfg.to_str().unwrap()]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("beta0"), "{err}");
    }

    #[test]
    fn select_single_j_emits_eight_rows() {
        let dir = tempfile::tempdir().unwrap();
        cli(&["select", "--j-range", "1..1", "--out", dir.path().to_str().unwrap()]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("subsets_p4.csv")).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("subset,p,rank,rank_ok,kappa,alpha,cv_1,cv_2,cv_3,cv_4"));
        assert_eq!(std::fs::read_to_string(dir.path().join("scatter_p4.csv")).unwrap().lines().count(), 9);
        assert!(!dir.path().join("subsets_p5.csv").exists());
    }

    #[test]
    fn generate_is_reproducible_and_noise_free_matches_incidence() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        for d in [&a, &b] {
            cli(&["generate", "--seed", "7", "--out", d.to_str().unwrap()]).unwrap();
        }
        let bytes = std::fs::read(a.join("data_seed7.csv")).unwrap();
        assert_eq!(bytes, std::fs::read(b.join("data_seed7.csv")).unwrap());
        assert_eq!(column(&a.join("data_seed7.csv"), 1).len(), 260);

        let c = dir.path().join("c");
        let c_s = c.to_str().unwrap();
        cli(&["generate", "--seed", "7", "--sigma0-sq", "0", "--out", c_s]).unwrap();
        cli(&["simulate", "--out", c_s]).unwrap();
        assert_eq!(column(&c.join("data_seed7.csv"), 1), column(&c.join("incidence.csv"), 1));

        let err = cli(&["generate", "--out", c_s]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn fit_reports_small_cvs_and_nested_subsets_improve() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        cli(&["generate", "--seed", "42", "--out", out]).unwrap();
        let data = dir.path().join("data_seed42.csv");
        let data = data.to_str().unwrap();

        let subsets = ["S0,N,L,D,M,beta0,a1,b1", "N,L,D,M,beta0,a1,b1", "N,L,D,beta0,a1,b1", "L,D,beta0,a1,b1", "L,beta0,a1,b1"];
        let mut previous: Option<(Vec<String>, Vec<f64>)> = None;
        for s in subsets {
            cli(&["fit", "--data", data, "--subset", s, "--out", out]).unwrap();
            let report = fit_report(dir.path());
            let names: Vec<String> = report["result"]["names"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
            let cv = floats(&report["result"]["cv"]);
            if let Some((pn, pcv)) = &previous {
                for (i, n) in names.iter().enumerate() {
                    let k = pn.iter().position(|m| m == n).unwrap();
                    assert!(cv[i].abs() <= 2.0 * pcv[k].abs(), "{s}: {n} {} vs {}", cv[i], pcv[k]);
                }
            }
            previous = Some((names, cv));
        }
        let (_, cv) = previous.unwrap();
        for (c, limit) in cv.iter().zip([0.01, 0.01, 0.01, 0.05]) {
            assert!(c.abs() < limit);
        }
        let residuals = std::fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
        assert!(residuals.starts_with("t,y,z,r\n"));
        assert_eq!(residuals.lines().count(), 261);
    }

    #[test]
    fn noise_free_fit_recovers_generating_values() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        cli(&["generate", "--seed", "1", "--sigma0-sq", "0", "--out", out]).unwrap();
        let data = dir.path().join("data_seed1.csv");
        let nominal = SeirsParameters::nominal().to_parameter_set();
        for s in ["L,beta0,a1,b1", "L,D,beta0,a1,b1", "N,L,D,beta0,a1,b1"] {
            cli(&["fit", "--data", data.to_str().unwrap(), "--subset", s, "--out", out]).unwrap();
            let report = fit_report(dir.path());
            for (name, est) in s.split(',').zip(floats(&report["result"]["estimate"])) {
                let truth = nominal.get(name).unwrap();
                assert!((est - truth).abs() <= 1e-5 * truth.abs(), "{name}: {est} vs {truth}");
            }
        }
    }

    #[test]
    fn fit_failures_map_to_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let err = cli(&["fit", "--data", "/nonexistent/data.csv", "--out", out]).unwrap_err();
        assert_eq!(err.exit_code(), 1);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "t,y\n0.1,oops\n").unwrap();
        let err = cli(&["fit", "--data", bad.to_str().unwrap(), "--out", out]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("line 2"), "{err}");

        cli(&["generate", "--seed", "3", "--out", out]).unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "[fit]\nsubset = [\"N\", \"L\", \"D\", \"beta0\", \"a1\", \"b1\"]\nmax_iterations = 1\n").unwrap();
        let data = dir.path().join("data_seed3.csv");
        let err = cli(&["fit", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", out]).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
        assert_eq!(fit_report(dir.path())["result"]["converged"], false);

        let err = cli(&["fit", "--data", data.to_str().unwrap(), "--subset", "L,Q", "--out", out]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
