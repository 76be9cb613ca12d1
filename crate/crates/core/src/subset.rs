//! Combinatorial subset selection: enumerate candidate active subsets,
//! keep those whose sensitivity matrix has full numerical rank, and rank the
//! survivors by selection score `α = ‖ν‖` (ties by condition number).

use std::cmp::Ordering;
use std::collections::BTreeMap;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{analyze, RankTolerance};
use crate::model::{resolve_indices, ModelSystem, ParameterSet};
use crate::ode::{IntegratorConfig, TimeGrid};
use crate::sensitivity::output_sensitivities;

/// Always-estimated transmission parameters of the SEIRS search.
pub const SEIRS_CORE: [&str; 3] = ["beta0", "a1", "b1"];
/// Candidates added to the core, in canonical order.
pub const SEIRS_POOL: [&str; 8] = ["S0", "E0", "I0", "N", "L", "D", "M", "P"];

/// Active (estimated) parameters plus the fixed values of the complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub active: Vec<String>,
    pub fixed: BTreeMap<String, f64>,
}

impl SubsetSpec {
    /// Activates `active`; every other parameter of `full` is fixed at its value there.
    pub fn new<S: AsRef<str>>(active: &[S], full: &ParameterSet) -> Result<Self> {
        let mut names: Vec<String> = Vec::with_capacity(active.len());
        for a in active {
            let a = a.as_ref();
            if full.index_of(a).is_none() {
                return Err(Error::SubsetUnknownName(a.to_string()));
            }
            if names.iter().any(|n| n == a) {
                return Err(Error::DuplicateName(a.to_string()));
            }
            names.push(a.to_string());
        }
        let fixed = full
            .names
            .iter()
            .zip(&full.values)
            .filter(|(n, _)| !names.contains(n))
            .map(|(n, v)| (n.clone(), *v))
            .collect();
        Ok(Self { active: names, fixed })
    }

    pub fn p(&self) -> usize {
        self.active.len()
    }

    /// `(L,beta0,a1,b1)`
    pub fn label(&self) -> String {
        format!("({})", self.active.join(","))
    }

    /// Full parameter vector in `model` order with active entries taken from `active_values`.
    pub fn assemble<M: ModelSystem + ?Sized>(&self, model: &M, active_values: &[f64]) -> Result<Vec<f64>> {
        if active_values.len() != self.active.len() {
            return Err(Error::DimensionMismatch { expected: self.active.len(), got: active_values.len() });
        }
        model
            .param_names()
            .iter()
            .map(|name| {
                if let Some(k) = self.active.iter().position(|a| a == name) {
                    Ok(active_values[k])
                } else {
                    self.fixed
                        .get(*name)
                        .copied()
                        .ok_or_else(|| Error::SubsetUnknownName(name.to_string()))
                }
            })
            .collect()
    }

    /// Current values of the active parameters in `full`.
    pub fn active_values(&self, full: &ParameterSet) -> Result<Vec<f64>> {
        self.active
            .iter()
            .map(|n| full.get(n).ok_or_else(|| Error::SubsetUnknownName(n.clone())))
            .collect()
    }
}

/// All `C(|pool|, j)` subsets `pool-choice ++ core`, in lexicographic pool order.
pub fn enumerate_subsets(j: usize, core: &[&str], pool: &[&str], nominal: &ParameterSet) -> Result<Vec<SubsetSpec>> {
    if j < 1 || j > pool.len() {
        return Err(Error::InvalidSubsetSize { j, pool: pool.len() });
    }
    pool.iter()
        .combinations(j)
        .map(|choice| {
            let active: Vec<&str> = choice.into_iter().copied().chain(core.iter().copied()).collect();
            SubsetSpec::new(&active, nominal)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub subset: SubsetSpec,
    pub p: usize,
    /// Numerical rank of χ, absent when χ could not be computed.
    pub rank: Option<usize>,
    pub rank_ok: bool,
    pub kappa: Option<f64>,
    pub score: Option<f64>,
    pub cv: Option<Vec<f64>>,
    /// Why the subset was rejected, when it was.
    pub failure: Option<String>,
}

impl SubsetReport {
    fn failed(subset: &SubsetSpec, rank: Option<usize>, reason: String) -> Self {
        Self {
            p: subset.p(),
            subset: subset.clone(),
            rank,
            rank_ok: false,
            kappa: None,
            score: None,
            cv: None,
            failure: Some(reason),
        }
    }
}

/// Everything the rank and standard-error tests need besides the subset itself.
pub struct SelectionContext<'a, M: ?Sized> {
    pub model: &'a M,
    pub nominal: &'a ParameterSet,
    pub grid: &'a TimeGrid,
    pub integrator: &'a IntegratorConfig,
    pub sigma0_sq: f64,
    pub rank_tolerance: RankTolerance,
}

impl<M: ModelSystem + ?Sized> SelectionContext<'_, M> {
    fn check(&self) -> Result<()> {
        let names = self.model.param_names();
        if self.nominal.names.len() != names.len() || self.nominal.names.iter().zip(names).any(|(a, b)| a != b) {
            return Err(Error::InvalidParameters(
                "nominal parameter set does not match the model's parameter order".into(),
            ));
        }
        Ok(())
    }
}

/// Computes χ at the nominal values and runs the rank and standard-error tests.
/// Failures are recorded in the report.
pub fn evaluate_subset<M: ModelSystem + ?Sized>(ctx: &SelectionContext<'_, M>, subset: &SubsetSpec) -> SubsetReport {
    let outcome = (|| {
        ctx.check()?;
        resolve_indices(ctx.model, &subset.active)?;
        let theta = subset.assemble(ctx.model, &subset.active_values(ctx.nominal)?)?;
        let chi = output_sensitivities(ctx.model, &theta, &subset.active, ctx.grid, ctx.integrator)?;
        if chi.nrows() <= chi.ncols() {
            return Err(Error::DegenerateDof { n: chi.nrows(), p: chi.ncols() });
        }
        let values = subset.active_values(ctx.nominal)?;
        analyze(&chi.values, &values, ctx.sigma0_sq, ctx.rank_tolerance)
    })();

    match outcome {
        Err(e) => SubsetReport::failed(subset, None, e.to_string()),
        Ok(ident) if !ident.full_rank() => SubsetReport::failed(
            subset,
            Some(ident.rank),
            format!("rank deficient: numerical rank {} < {}", ident.rank, subset.p()),
        ),
        Ok(ident) => {
            let unc = ident.uncertainty.expect("full-rank analysis carries a score");
            SubsetReport {
                subset: subset.clone(),
                p: subset.p(),
                rank: Some(ident.rank),
                rank_ok: true,
                kappa: ident.kappa,
                score: Some(unc.score),
                cv: Some(unc.cv),
                failure: None,
            }
        }
    }
}

fn evaluate_all<M: ModelSystem + ?Sized>(ctx: &SelectionContext<'_, M>, subsets: &[SubsetSpec]) -> Vec<SubsetReport> {
    // par_iter().collect() keeps input order, independent of completion order
    subsets.par_iter().map(|s| evaluate_subset(ctx, s)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankFilter {
    /// Subsets with full-rank χ, in input order.
    pub retained: Vec<SubsetSpec>,
    pub rejected: Vec<SubsetReport>,
}

pub fn full_rank_filter<M: ModelSystem + ?Sized>(ctx: &SelectionContext<'_, M>, subsets: &[SubsetSpec]) -> RankFilter {
    let mut retained = Vec::new();
    let mut rejected = Vec::new();
    for report in evaluate_all(ctx, subsets) {
        if report.rank_ok {
            retained.push(report.subset);
        } else {
            rejected.push(report);
        }
    }
    RankFilter { retained, rejected }
}

/// Orders by `α`, then `κ`, then subset label.
pub fn report_order(a: &SubsetReport, b: &SubsetReport) -> Ordering {
    let key = |r: &SubsetReport| (r.score.unwrap_or(f64::INFINITY), r.kappa.unwrap_or(f64::INFINITY));
    let (sa, ka) = key(a);
    let (sb, kb) = key(b);
    sa.total_cmp(&sb)
        .then(ka.total_cmp(&kb))
        .then_with(|| a.subset.label().cmp(&b.subset.label()))
}

/// Scores subsets that passed the rank test; the result is sorted by [`report_order`].
/// A subset that turns out rank deficient here keeps its failure in the report.
pub fn score_subsets<M: ModelSystem + ?Sized>(ctx: &SelectionContext<'_, M>, retained: &[SubsetSpec]) -> Vec<SubsetReport> {
    let mut reports = evaluate_all(ctx, retained);
    reports.sort_by(report_order);
    reports
}

/// Rank test and scoring in one pass: scored subsets sorted first, then
/// rejected ones in input order.
pub fn sweep<M: ModelSystem + ?Sized>(ctx: &SelectionContext<'_, M>, subsets: &[SubsetSpec]) -> Vec<SubsetReport> {
    let (mut ok, bad): (Vec<_>, Vec<_>) = evaluate_all(ctx, subsets).into_iter().partition(|r| r.rank_ok);
    ok.sort_by(report_order);
    ok.extend(bad);
    ok
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityThresholds {
    pub kappa_max: f64,
    pub alpha_max: f64,
}

impl Default for FeasibilityThresholds {
    fn default() -> Self {
        Self { kappa_max: 1e11, alpha_max: 1.0 }
    }
}

/// Scored reports with `κ ≤ kappa_max` and `α ≤ alpha_max`.
pub fn feasibility_cut(reports: &[SubsetReport], thresholds: FeasibilityThresholds) -> Vec<SubsetReport> {
    reports
        .iter()
        .filter(|r| match (r.kappa, r.score) {
            (Some(k), Some(a)) => r.rank_ok && k <= thresholds.kappa_max && a <= thresholds.alpha_max,
            _ => false,
        })
        .cloned()
        .collect()
}
