//! Bounded weighted least squares and model training.
//!
//! Every model is linear in its parameters, so training reduces to
//!
//! ```text
//! minimize  sum_r w_r * (x_r . c - y_r)^2   subject to  c_j >= l_j  (where given)
//! ```
//!
//! Rows are weighted with `1 / E_r^2`, which turns the objective into the sum
//! of squared relative errors. Bounds are handled by an active-set method in
//! the style of Lawson and Hanson, extended with free (unbounded) variables.
//! Each subproblem is solved by a truncated SVD, which yields the minimum-norm
//! solution when the passive columns are rank deficient.

use std::collections::BTreeSet;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::catalog::FeatureCatalog;
use crate::dataset::{Dataset, Preset, StreamRecord};
use crate::error::{Error, Result};
use crate::models::{FeatureModel, FittedModel, Model, ModelKind, QpModel, TimeModel, TrainingMeta, UfTimeModel};

/// Relative singular-value cutoff for the least-squares subproblems.
pub const SVD_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
    pub columns: Vec<String>,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>, targets: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let columns = (0..x.ncols()).map(|j| format!("c{j}")).collect();
        let d = DesignMatrix { x, targets, weights, columns };
        d.check()?;
        Ok(d)
    }

    /// Unit weights.
    pub fn unweighted(x: DMatrix<f64>, targets: Vec<f64>) -> Result<Self> {
        let n = targets.len();
        Self::new(x, targets, vec![1.0; n])
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    fn check(&self) -> Result<()> {
        if self.targets.len() != self.x.nrows() || self.weights.len() != self.x.nrows() {
            return Err(Error::data(format!(
                "design matrix has {} rows but {} targets and {} weights",
                self.x.nrows(),
                self.targets.len(),
                self.weights.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::data(format!("row weights must be finite and > 0, found {w}")));
        }
        if self.x.iter().chain(&self.targets).any(|v| !v.is_finite()) {
            return Err(Error::data("design matrix contains non-finite values"));
        }
        Ok(())
    }

    /// `sum_r w_r (x_r . c - y_r)^2`.
    pub fn objective(&self, c: &[f64]) -> f64 {
        let c = DVector::from_column_slice(c);
        let r = &self.x * c;
        r.iter().zip(&self.targets).zip(&self.weights).map(|((p, y), w)| w * (p - y).powi(2)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coeffs: Vec<f64>,
    /// Weighted SSE at `coeffs`.
    pub objective_value: f64,
    pub iterations: usize,
    /// Columns whose coefficient sits on its lower bound.
    pub active_bounds: Vec<usize>,
    /// All-zero columns; their coefficient is set to the bound (or 0).
    pub excluded_columns: Vec<usize>,
    /// Numerical rank of the final passive subproblem.
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Least-squares solve on a subset of (already weighted and scaled) columns.
/// Returns the coefficients for those columns and the numerical rank.
fn ls_subset(a: &DMatrix<f64>, b: &DVector<f64>, cols: &[usize]) -> Result<(Vec<f64>, usize)> {
    if cols.is_empty() {
        return Ok((Vec::new(), 0));
    }
    let svd = a.select_columns(cols).svd(true, true);
    let smax = svd.singular_values.max();
    let tol = SVD_RTOL * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let sol = svd.solve(b, tol).map_err(|e| Error::Numerical(format!("SVD solve failed: {e}")))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("least-squares subproblem produced non-finite values".into()));
    }
    Ok((sol.iter().copied().collect(), rank))
}

/// Minimizes the weighted SSE of `design` subject to optional per-column
/// lower bounds.
pub fn solve_bounded_ls(design: &DesignMatrix, lower_bounds: Option<&[Option<f64>]>) -> Result<FitResult> {
    design.check()?;
    let (m, n) = (design.nrows(), design.ncols());
    if m == 0 || n == 0 {
        return Err(Error::data(format!("empty least-squares system ({m} x {n})")));
    }
    let lower: Vec<Option<f64>> = match lower_bounds {
        Some(l) if l.len() != n => {
            return Err(Error::data(format!("{} lower bounds for {n} columns", l.len())));
        }
        Some(l) => l.to_vec(),
        None => vec![None; n],
    };
    if lower.iter().flatten().any(|l| !l.is_finite()) {
        return Err(Error::data("lower bounds must be finite"));
    }

    let x = &design.x;
    let excluded: Vec<usize> = (0..n).filter(|&j| x.column(j).iter().all(|&v| v == 0.0)).collect();
    if !excluded.is_empty() {
        warn!("least squares: {} all-zero column(s) excluded", excluded.len());
    }
    let kept: Vec<usize> = (0..n).filter(|j| !excluded.contains(j)).collect();

    let mut coeffs = vec![0.0; n];
    for &j in &excluded {
        coeffs[j] = lower[j].unwrap_or(0.0);
    }
    if kept.is_empty() {
        let objective_value = design.objective(&coeffs);
        return Ok(FitResult {
            coeffs,
            objective_value,
            iterations: 0,
            active_bounds: excluded.iter().copied().filter(|&j| lower[j].is_some()).collect(),
            excluded_columns: excluded,
            rank: 0,
            rank_deficient: false,
        });
    }

    // Weighted, shifted and column-normalized system in z:
    //   c_j = l_j + z_j / d_j  (bounded, z_j >= 0)   or   c_j = z_j / d_j  (free)
    let sw: Vec<f64> = design.weights.iter().map(|w| w.sqrt()).collect();
    let k = kept.len();
    let mut a = DMatrix::zeros(m, k);
    let mut scale = vec![0.0; k];
    for (kk, &j) in kept.iter().enumerate() {
        let mut col = x.column(j).clone_owned();
        for r in 0..m {
            col[r] *= sw[r];
        }
        let d = col.norm();
        scale[kk] = d;
        a.set_column(kk, &(col / d));
    }
    let mut b = DVector::from_fn(m, |r, _| design.targets[r]);
    for (&j, _) in kept.iter().zip(0..) {
        if let Some(l) = lower[j] {
            b -= x.column(j) * l;
        }
    }
    for r in 0..m {
        b[r] *= sw[r];
    }

    let bounded: Vec<bool> = kept.iter().map(|&j| lower[j].is_some()).collect();
    let all: Vec<usize> = (0..k).collect();
    let mut iterations = 1;

    // Unconstrained solve first; it is the answer whenever it is feasible.
    let (z0, mut rank) = ls_subset(&a, &b, &all)?;
    let mut z = if z0.iter().zip(&bounded).all(|(v, &bd)| !bd || *v >= 0.0) {
        z0
    } else {
        let (z, r, it) = active_set(&a, &b, &bounded)?;
        rank = r;
        iterations += it;
        z
    };

    let passive = z.iter().zip(&bounded).filter(|(v, &bd)| !bd || **v > 0.0).count();
    let rank_deficient = rank < passive;
    if rank_deficient {
        // minimum norm in the original (unnormalized) coordinates
        let pcols: Vec<usize> = (0..k).filter(|&i| !bounded[i] || z[i] > 0.0).collect();
        let mut unscaled = a.select_columns(&pcols);
        for (c, &i) in pcols.iter().enumerate() {
            unscaled.column_mut(c).scale_mut(scale[i]);
        }
        let (u, _) = ls_subset(&unscaled, &b, &(0..pcols.len()).collect::<Vec<_>>())?;
        let feasible = pcols.iter().zip(&u).all(|(&i, &v)| !bounded[i] || v >= 0.0);
        if feasible {
            for (&i, &v) in pcols.iter().zip(&u) {
                z[i] = v * scale[i];
            }
        }
        warn!("least squares: rank {rank} < {passive} free columns, returning minimum-norm solution");
    }

    let mut active_bounds = Vec::new();
    for (kk, &j) in kept.iter().enumerate() {
        match lower[j] {
            Some(l) => {
                let zj = z[kk].max(0.0);
                coeffs[j] = l + zj / scale[kk];
                if zj == 0.0 {
                    active_bounds.push(j);
                }
            }
            None => coeffs[j] = z[kk] / scale[kk],
        }
    }
    active_bounds.extend(excluded.iter().copied().filter(|&j| lower[j].is_some()));
    active_bounds.sort_unstable();
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("solver produced non-finite coefficients".into()));
    }
    let objective_value = design.objective(&coeffs);
    Ok(FitResult { coeffs, objective_value, iterations, active_bounds, excluded_columns: excluded, rank, rank_deficient })
}

/// Active-set iteration for `min |a z - b|` with `z_i >= 0` where `bounded[i]`.
fn active_set(a: &DMatrix<f64>, b: &DVector<f64>, bounded: &[bool]) -> Result<(Vec<f64>, usize, usize)> {
    let k = a.ncols();
    let max_iter = 3 * k + 50;
    let mut passive: BTreeSet<usize> = (0..k).filter(|&i| !bounded[i]).collect();
    let mut z = vec![0.0; k];
    let mut rank = 0;

    let solve = |passive: &BTreeSet<usize>| -> Result<(Vec<f64>, usize)> {
        let cols: Vec<usize> = passive.iter().copied().collect();
        let (s, r) = ls_subset(a, b, &cols)?;
        let mut full = vec![0.0; k];
        for (&i, v) in cols.iter().zip(s) {
            full[i] = v;
        }
        Ok((full, r))
    };

    if !passive.is_empty() {
        let (s, r) = solve(&passive)?;
        z = s;
        rank = r;
    }
    let tol = 1e-12 * b.norm().max(f64::MIN_POSITIVE) * (k as f64).sqrt();
    let mut rejected: BTreeSet<usize> = BTreeSet::new();
    let mut iter = 0;
    loop {
        iter += 1;
        if iter > max_iter {
            return Err(Error::Numerical(format!("active-set solver did not converge in {max_iter} iterations")));
        }
        let zv = DVector::from_column_slice(&z);
        let g = a.transpose() * (b - a * zv);
        let cand = (0..k)
            .filter(|&i| bounded[i] && !passive.contains(&i) && !rejected.contains(&i) && g[i] > tol)
            .max_by(|&i, &j| g[i].total_cmp(&g[j]));
        let Some(t) = cand else { break };
        passive.insert(t);

        let mut first = true;
        loop {
            let (s, r) = solve(&passive)?;
            rank = r;
            if passive.iter().all(|&i| !bounded[i] || s[i] > 0.0) {
                z = s;
                rejected.clear();
                break;
            }
            if first && s[t] <= 0.0 {
                // entering column cannot move off its bound
                passive.remove(&t);
                rejected.insert(t);
                break;
            }
            first = false;
            let alpha = passive
                .iter()
                .filter(|&&i| bounded[i] && s[i] <= 0.0)
                .map(|&i| z[i] / (z[i] - s[i]))
                .fold(f64::INFINITY, f64::min);
            for i in 0..k {
                z[i] += alpha * (s[i] - z[i]);
            }
            let drop: Vec<usize> = passive.iter().copied().filter(|&i| bounded[i] && z[i] <= 1e-15 * (1.0 + z[i].abs())).collect();
            for i in drop {
                z[i] = 0.0;
                passive.remove(&i);
            }
            rejected.clear();
            if !passive.contains(&t) {
                break;
            }
        }
    }
    Ok((z, rank, iter))
}

/// How feature-energy coefficients are constrained during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsPolicy {
    NonNegative,
    Unbounded,
}

fn relative_weight(r: &StreamRecord) -> Result<f64> {
    if !(r.energy_joules > 0.0) {
        return Err(Error::data(format!("record {}: energy must be > 0 for relative weighting", r.key())));
    }
    Ok(1.0 / (r.energy_joules * r.energy_joules))
}

/// Builds the linear system for a model kind.
///
/// The QP kind yields the time-polynomial system `[qp^3, -qp^2, -qp, 1]`
/// against `enc_time_s`; the power factor is fitted afterwards by [`fit`].
pub fn build_design(records: &[StreamRecord], kind: ModelKind, catalog: &FeatureCatalog) -> Result<DesignMatrix> {
    let n = records.len();
    let mut targets = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let missing = |r: &StreamRecord, what: &str| Error::data(format!("record {}: {what} required for {kind} model", r.key()));

    let (x, columns) = match kind {
        ModelKind::Em | ModelKind::Sm => {
            let slots = catalog.selected_slots(kind.variant().unwrap());
            let mut x = DMatrix::zeros(n, slots.len());
            for (i, r) in records.iter().enumerate() {
                if r.features.len() != catalog.slot_count() {
                    return Err(Error::data(format!("record {}: feature vector has wrong length", r.key())));
                }
                for (j, &s) in slots.iter().enumerate() {
                    x[(i, j)] = r.features.counts()[s] as f64;
                }
                targets.push(r.energy_joules);
                weights.push(relative_weight(r)?);
            }
            (x, slots.iter().map(|&s| catalog.slot_name(s).to_string()).collect())
        }
        ModelKind::Time | ModelKind::UfTime => {
            let mut x = DMatrix::zeros(n, 2);
            for (i, r) in records.iter().enumerate() {
                let t = if kind == ModelKind::Time {
                    r.enc_time_s.ok_or_else(|| missing(r, "enc_time"))?
                } else {
                    r.uf_time_s.ok_or_else(|| missing(r, "uf_time"))?
                };
                x[(i, 0)] = 1.0;
                x[(i, 1)] = t;
                targets.push(r.energy_joules);
                weights.push(relative_weight(r)?);
            }
            (x, vec!["e0".to_string(), "p".to_string()])
        }
        ModelKind::Qp => {
            let mut x = DMatrix::zeros(n, 4);
            for (i, r) in records.iter().enumerate() {
                let qp = f64::from(r.qp_equiv.ok_or_else(|| missing(r, "qp_equiv"))?);
                let t = r.enc_time_s.ok_or_else(|| missing(r, "enc_time"))?;
                if !(t > 0.0) {
                    return Err(Error::data(format!("record {}: enc_time must be > 0 for relative weighting", r.key())));
                }
                x[(i, 0)] = qp.powi(3);
                x[(i, 1)] = -qp * qp;
                x[(i, 2)] = -qp;
                x[(i, 3)] = 1.0;
                targets.push(t);
                weights.push(1.0 / (t * t));
            }
            (x, ["kappa", "lambda", "mu", "t0"].map(String::from).to_vec())
        }
    };
    let d = DesignMatrix { x, targets, weights, columns };
    d.check()?;
    Ok(d)
}

/// Training options beyond the data itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub bounds: BoundsPolicy,
    pub fold_seed: Option<u64>,
    pub held_out_fold: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { bounds: BoundsPolicy::NonNegative, fold_seed: None, held_out_fold: None }
    }
}

/// Trains `kind` on the records of `dataset` within `scope` (`None` = all presets).
pub fn fit(dataset: &Dataset, kind: ModelKind, scope: Option<Preset>, opts: FitOptions, catalog: &FeatureCatalog) -> Result<FittedModel> {
    fit_with_diagnostics(dataset, kind, scope, opts, catalog).map(|(m, _)| m)
}

/// Like [`fit`], also returning the solver diagnostics of the final solve.
pub fn fit_with_diagnostics(
    dataset: &Dataset,
    kind: ModelKind,
    scope: Option<Preset>,
    opts: FitOptions,
    catalog: &FeatureCatalog,
) -> Result<(FittedModel, FitResult)> {
    let records: Vec<StreamRecord> = match scope {
        Some(p) => dataset.records.iter().filter(|r| r.meta.preset == p).cloned().collect(),
        None => dataset.records.clone(),
    };
    if records.is_empty() {
        return Err(Error::data(format!("no records in scope '{}'", TrainingMeta::scope_label(scope))));
    }
    let (model, result) = fit_records(&records, kind, opts.bounds, catalog)?;
    let training = TrainingMeta {
        dataset_hash: dataset.content_hash(),
        preset_scope: TrainingMeta::scope_label(scope),
        fold_seed: opts.fold_seed,
        held_out_fold: opts.held_out_fold,
        records: records.len(),
        bounded: opts.bounds == BoundsPolicy::NonNegative && kind.variant().is_some(),
    };
    Ok((FittedModel { model, training }, result))
}

/// Fits a model to a slice of records without provenance bookkeeping.
pub fn fit_records(records: &[StreamRecord], kind: ModelKind, bounds: BoundsPolicy, catalog: &FeatureCatalog) -> Result<(Model, FitResult)> {
    let design = build_design(records, kind, catalog)?;
    match kind {
        ModelKind::Em | ModelKind::Sm => {
            let variant = kind.variant().unwrap();
            let lower = match bounds {
                BoundsPolicy::NonNegative => Some(vec![Some(0.0); design.ncols()]),
                BoundsPolicy::Unbounded => None,
            };
            let res = solve_bounded_ls(&design, lower.as_deref())?;
            let slots = catalog.selected_slots(variant);
            let unidentifiable = res.excluded_columns.iter().map(|&j| slots[j]).collect();
            let model = FeatureModel { variant, coeffs: res.coeffs.clone(), unidentifiable };
            Ok((Model::Feature(model), res))
        }
        ModelKind::Time | ModelKind::UfTime => {
            let res = solve_bounded_ls(&design, None)?;
            let (e0, p) = (res.coeffs[0], res.coeffs[1]);
            let model = if kind == ModelKind::Time { Model::Time(TimeModel { e0, p }) } else { Model::UfTime(UfTimeModel { e0, p }) };
            Ok((model, res))
        }
        ModelKind::Qp => {
            let res = solve_bounded_ls(&design, None)?;
            let (kappa, lambda, mu, t0) = (res.coeffs[0], res.coeffs[1], res.coeffs[2], res.coeffs[3]);
            let mut qp = QpModel { kappa, lambda, mu, t0, p_avg: 0.0 };
            // second stage: scalar power minimizing the relative energy error
            let (mut num, mut den) = (0.0, 0.0);
            for r in records {
                let t = qp.time(r.qp_equiv.unwrap());
                let w = relative_weight(r)?;
                num += w * t * r.energy_joules;
                den += w * t * t;
            }
            if !(den > 0.0) {
                return Err(Error::Numerical("QP model: fitted time polynomial is zero on every record".into()));
            }
            qp.p_avg = num / den;
            Ok((Model::Qp(qp), res))
        }
    }
}
