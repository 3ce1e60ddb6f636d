//! Error metrics, k-fold cross-validation and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::FeatureCatalog;
use crate::dataset::{Dataset, Preset, StreamRecord};
use crate::error::{Error, Result};
use crate::fitting::{fit_records, BoundsPolicy};
use crate::models::ModelKind;

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_SEED: u64 = 20_221_107;

/// Signed relative error `(estimated - measured) / measured`.
pub fn relative_error(estimated: f64, measured: f64) -> Result<f64> {
    if !(measured > 0.0) {
        return Err(Error::data(format!("relative error needs measured > 0, found {measured}")));
    }
    Ok((estimated - measured) / measured)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// Train and validate within each preset separately.
    PerPreset,
    /// Pool every preset into one cross-validation.
    AllPresets,
    Both,
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-preset" => Ok(Grouping::PerPreset),
            "all-presets" => Ok(Grouping::AllPresets),
            "both" => Ok(Grouping::Both),
            _ => Err(Error::InvalidArgument(format!("unknown grouping '{s}' (expected per-preset, all-presets, both)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    /// Stream key, `sequence/preset/crf`.
    pub key: String,
    pub preset: Preset,
    /// `"per-preset"` or `"all-presets"`.
    pub grouping: Grouping,
    /// Validation fold this row belonged to.
    pub fold: usize,
    /// Fold excluded from the training set of the model that produced `estimated`.
    pub model_held_out: usize,
    pub measured: f64,
    pub estimated: f64,
    pub eps: f64,
}

pub fn mean_abs(eps: impl IntoIterator<Item = f64>) -> Result<f64> {
    let (n, sum) = eps.into_iter().fold((0usize, 0.0), |(n, s), e| (n + 1, s + e.abs()));
    if n == 0 {
        return Err(Error::data("mean absolute error of an empty set"));
    }
    Ok(sum / n as f64)
}

/// Arithmetic mean of `|eps|`.
pub fn mean_abs_error(rows: &[ResidualRow]) -> Result<f64> {
    mean_abs(rows.iter().map(|r| r.eps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    /// Fold index of each input position.
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }

    pub fn members(&self, fold: usize) -> Vec<usize> {
        self.fold_of.iter().enumerate().filter(|(_, &f)| f == fold).map(|(i, _)| i).collect()
    }
}

/// Random partition of `n` items into `k` folds whose sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, found {k}")));
    }
    if n < k {
        return Err(Error::data(format!("{n} records cannot be split into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment { k, seed, fold_of })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    /// Preset name or `"all"`.
    pub scope: String,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub kind: ModelKind,
    pub k: usize,
    pub seed: u64,
    pub bounds: BoundsPolicy,
    /// Mean |eps| per preset, per-preset training.
    pub per_preset: BTreeMap<Preset, f64>,
    /// Unweighted mean of `per_preset`.
    pub average_over_presets: Option<f64>,
    /// Mean |eps| with all presets trained and validated together.
    pub all_presets_pooled: Option<f64>,
    pub folds: Vec<FoldSummary>,
    pub residuals: Vec<ResidualRow>,
}

#[allow(clippy::too_many_arguments)]
fn cv_scope(
    records: &[StreamRecord],
    kind: ModelKind,
    k: usize,
    seed: u64,
    bounds: BoundsPolicy,
    grouping: Grouping,
    scope: &str,
    catalog: &FeatureCatalog,
) -> Result<(Vec<ResidualRow>, FoldSummary)> {
    let folds = kfold_split(records.len(), k, seed).map_err(|e| e.context(format!("scope {scope}")))?;
    let per_fold: Vec<Result<Vec<ResidualRow>>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<StreamRecord> =
                records.iter().zip(&folds.fold_of).filter(|(_, &f)| f != fold).map(|(r, _)| r.clone()).collect();
            let ctx = |e: Error| e.context(format!("{kind} model, scope {scope}, fold {fold}"));
            let (model, _) = fit_records(&train, kind, bounds, catalog).map_err(ctx)?;
            folds
                .members(fold)
                .into_iter()
                .map(|i| {
                    let r = &records[i];
                    let estimated = model.predict_record(r, catalog).map_err(ctx)?;
                    Ok(ResidualRow {
                        key: r.key().to_string(),
                        preset: r.meta.preset,
                        grouping,
                        fold,
                        model_held_out: fold,
                        measured: r.energy_joules,
                        estimated,
                        eps: relative_error(estimated, r.energy_joules).map_err(ctx)?,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(records.len());
    for r in per_fold {
        rows.extend(r?);
    }
    Ok((rows, FoldSummary { scope: scope.to_string(), sizes: folds.sizes() }))
}

/// Cross-validation options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    pub grouping: Grouping,
    pub k: usize,
    pub seed: u64,
    pub bounds: BoundsPolicy,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions { grouping: Grouping::Both, k: DEFAULT_FOLDS, seed: DEFAULT_SEED, bounds: BoundsPolicy::NonNegative }
    }
}

/// k-fold cross-validation of one model kind.
///
/// Per-preset grouping draws folds within each preset; all-presets grouping
/// draws them over the pooled dataset. Both use the same seed.
pub fn cross_validate(dataset: &Dataset, kind: ModelKind, opts: CvOptions, catalog: &FeatureCatalog) -> Result<EvaluationReport> {
    if dataset.is_empty() {
        return Err(Error::data("cross-validation of an empty dataset"));
    }
    let mut report = EvaluationReport {
        kind,
        k: opts.k,
        seed: opts.seed,
        bounds: opts.bounds,
        per_preset: BTreeMap::new(),
        average_over_presets: None,
        all_presets_pooled: None,
        folds: Vec::new(),
        residuals: Vec::new(),
    };
    if matches!(opts.grouping, Grouping::PerPreset | Grouping::Both) {
        let results: Vec<_> = Preset::ALL
            .par_iter()
            .filter_map(|&p| {
                let recs: Vec<StreamRecord> = dataset.records.iter().filter(|r| r.meta.preset == p).cloned().collect();
                (!recs.is_empty()).then(|| {
                    cv_scope(&recs, kind, opts.k, opts.seed, opts.bounds, Grouping::PerPreset, p.as_str(), catalog).map(|r| (p, r))
                })
            })
            .collect();
        for res in results {
            let (p, (rows, folds)) = res?;
            report.per_preset.insert(p, mean_abs_error(&rows)?);
            report.folds.push(folds);
            report.residuals.extend(rows);
        }
        report.average_over_presets = Some(report.per_preset.values().sum::<f64>() / report.per_preset.len() as f64);
    }
    if matches!(opts.grouping, Grouping::AllPresets | Grouping::Both) {
        let (rows, folds) =
            cv_scope(&dataset.records, kind, opts.k, opts.seed, opts.bounds, Grouping::AllPresets, "all", catalog)?;
        report.all_presets_pooled = Some(mean_abs_error(&rows)?);
        report.folds.push(folds);
        report.residuals.extend(rows);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Delimited,
    PlotData,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "text-table" => Ok(ReportFormat::Text),
            "delimited" | "csv" => Ok(ReportFormat::Delimited),
            "plot-data" | "plot" => Ok(ReportFormat::PlotData),
            _ => Err(Error::InvalidArgument(format!("unknown report format '{s}' (expected text, delimited, plot-data)"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOptions {
    /// Sequence to plot; required for plot data.
    pub sequence: Option<String>,
    /// Restrict to one CRF; otherwise measured and estimated energies are
    /// averaged over the sequence's CRFs.
    pub crf: Option<u32>,
    /// Report to plot; defaults to SM when present, else the first report.
    pub kind: Option<ModelKind>,
}

const AVERAGE_ROW: &str = "average";
const POOLED_ROW: &str = "all presets";

fn table_rows(reports: &[EvaluationReport]) -> Vec<(String, Vec<Option<f64>>)> {
    let mut rows: Vec<(String, Vec<Option<f64>>)> = Preset::ALL
        .iter()
        .map(|p| (p.to_string(), reports.iter().map(|r| r.per_preset.get(p).copied()).collect()))
        .collect();
    rows.push((AVERAGE_ROW.into(), reports.iter().map(|r| r.average_over_presets).collect()));
    rows.push((POOLED_ROW.into(), reports.iter().map(|r| r.all_presets_pooled).collect()));
    rows
}

/// Indices of the row minimum; ties flag every minimum.
fn row_minima(vals: &[Option<f64>]) -> Vec<usize> {
    let min = vals.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    vals.iter().enumerate().filter(|(_, v)| **v == Some(min)).map(|(i, _)| i).collect()
}

/// Renders one or more reports (one column per model kind).
pub fn render_report(reports: &[EvaluationReport], format: ReportFormat, plot: &PlotOptions) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::data("no reports to render"));
    }
    if let Some(r) = reports.iter().find(|r| r.residuals.is_empty()) {
        return Err(Error::data(format!("{} report has no residuals", r.kind)));
    }
    let mut out = String::new();
    match format {
        ReportFormat::Text => {
            let rows = table_rows(reports);
            let _ = write!(out, "{:<12}", "Presets");
            for r in reports {
                let _ = write!(out, " {:>10}", r.kind.as_str());
            }
            out.push('\n');
            for (label, vals) in rows {
                let minima = row_minima(&vals);
                let _ = write!(out, "{label:<12}");
                for (i, v) in vals.iter().enumerate() {
                    let cell = match v {
                        Some(v) => format!("{:.2}%{}", 100.0 * v, if minima.contains(&i) { "*" } else { " " }),
                        None => "- ".to_string(),
                    };
                    let _ = write!(out, " {cell:>10}");
                }
                out.push('\n');
            }
            out.push_str("* lowest value in row\n");
        }
        ReportFormat::Delimited => {
            out.push_str("preset");
            for r in reports {
                out.push(',');
                out.push_str(r.kind.as_str());
            }
            out.push('\n');
            for (label, vals) in table_rows(reports) {
                out.push_str(&label);
                for v in vals {
                    out.push(',');
                    if let Some(v) = v {
                        let _ = write!(out, "{v}");
                    }
                }
                out.push('\n');
            }
        }
        ReportFormat::PlotData => {
            let seq = plot.sequence.as_deref().ok_or_else(|| Error::InvalidArgument("plot data needs a sequence name".into()))?;
            let report = match plot.kind {
                Some(k) => reports.iter().find(|r| r.kind == k).ok_or_else(|| Error::data(format!("no {k} report to plot")))?,
                None => reports.iter().find(|r| r.kind == ModelKind::Sm).unwrap_or(&reports[0]),
            };
            let has_per_preset = report.residuals.iter().any(|r| r.grouping == Grouping::PerPreset);
            let grouping = if has_per_preset { Grouping::PerPreset } else { Grouping::AllPresets };
            out.push_str("preset_index,preset,measured_kj,estimated_kj,streams\n");
            let mut any = false;
            for p in Preset::ALL {
                let rows: Vec<&ResidualRow> = report
                    .residuals
                    .iter()
                    .filter(|r| r.grouping == grouping && r.preset == p)
                    .filter(|r| {
                        let key: crate::dataset::StreamKey = r.key.parse().expect("residual keys are well formed");
                        key.sequence_name == seq && plot.crf.is_none_or(|c| c == key.crf)
                    })
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                any = true;
                let n = rows.len() as f64;
                let measured = rows.iter().map(|r| r.measured).sum::<f64>() / n / 1000.0;
                let estimated = rows.iter().map(|r| r.estimated).sum::<f64>() / n / 1000.0;
                let _ = writeln!(out, "{},{},{measured},{estimated},{}", p.index(), p, rows.len());
            }
            if !any {
                return Err(Error::data(format!("no residuals for sequence '{seq}'")));
            }
        }
    }
    Ok(out)
}

/// Numeric content of a delimited report.
#[derive(Debug, Clone, PartialEq)]
pub struct DelimitedReport {
    pub kinds: Vec<ModelKind>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl DelimitedReport {
    /// The same table as read directly from evaluation reports.
    pub fn from_reports(reports: &[EvaluationReport]) -> Self {
        DelimitedReport { kinds: reports.iter().map(|r| r.kind).collect(), rows: table_rows(reports) }
    }
}

pub fn parse_delimited(text: &str) -> Result<DelimitedReport> {
    const WHAT: &str = "delimited report";
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(WHAT, 1, "empty input"))?;
    let mut cols = header.split(',');
    if cols.next() != Some("preset") {
        return Err(Error::parse(WHAT, 1, "first column must be 'preset'"));
    }
    let kinds = cols.map(|c| c.parse::<ModelKind>().map_err(|e| Error::parse(WHAT, 1, e.to_string()))).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut cells = line.split(',');
        let label = cells.next().unwrap_or_default().to_string();
        let vals = cells
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|_| Error::parse(WHAT, i + 2, format!("malformed number '{c}'")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != kinds.len() {
            return Err(Error::parse(WHAT, i + 2, format!("expected {} values, found {}", kinds.len(), vals.len())));
        }
        rows.push((label, vals));
    }
    Ok(DelimitedReport { kinds, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(eps: f64) -> ResidualRow {
        ResidualRow {
            key: "A/fast/18".into(),
            preset: Preset::Fast,
            grouping: Grouping::PerPreset,
            fold: 0,
            model_held_out: 0,
            measured: 100.0,
            estimated: 100.0 * (1.0 + eps),
            eps,
        }
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(110.0, 100.0).unwrap(), 0.10);
        assert_eq!(relative_error(90.0, 100.0).unwrap(), -0.10);
        assert_eq!(relative_error(42.5, 42.5).unwrap(), 0.0);
        assert!(relative_error(1.0, 0.0).is_err());
        assert!(relative_error(1.0, -1.0).is_err());
    }

    #[test]
    fn mean_abs_error_examples() {
        assert_eq!(mean_abs_error(&[row(0.1), row(-0.1)]).unwrap(), 0.10);
        assert_eq!(mean_abs_error(&[row(0.0)]).unwrap(), 0.0);
        assert!((mean_abs_error(&[row(0.02), row(0.04), row(0.06)]).unwrap() - 0.04).abs() < 1e-15);
        assert!(mean_abs_error(&[]).is_err());
    }

    #[test]
    fn fold_sizes() {
        assert_eq!(kfold_split(20, 10, 1).unwrap().sizes(), vec![2; 10]);
        let mut s = kfold_split(23, 10, 1).unwrap().sizes();
        s.sort_unstable();
        assert_eq!(s, vec![2, 2, 2, 2, 2, 2, 2, 3, 3, 3]);
        assert!(kfold_split(9, 10, 1).is_err());
    }

    #[test]
    fn fold_determinism() {
        assert_eq!(kfold_split(88, 10, 42).unwrap(), kfold_split(88, 10, 42).unwrap());
        assert_ne!(kfold_split(88, 10, 42).unwrap(), kfold_split(88, 10, 43).unwrap());
    }

    #[test]
    fn row_minimum_ties() {
        assert_eq!(row_minima(&[Some(0.2), Some(0.1), Some(0.1), None]), vec![1, 2]);
        assert_eq!(row_minima(&[None, None]), Vec::<usize>::new());
    }

    #[test]
    fn unknown_format() {
        assert!("svg".parse::<ReportFormat>().is_err());
    }

    proptest! {
        #[test]
        fn folds_partition(n in 10usize..300, k in 2usize..11, seed in any::<u64>()) {
            let f = kfold_split(n, k, seed).unwrap();
            let sizes = f.sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all: Vec<usize> = (0..k).flat_map(|i| f.members(i)).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn mean_abs_properties(eps in prop::collection::vec(-1.0f64..1.0, 1..50)) {
            let rows: Vec<_> = eps.iter().map(|&e| row(e)).collect();
            let m = mean_abs_error(&rows).unwrap();
            let signed = eps.iter().sum::<f64>() / eps.len() as f64;
            prop_assert!(m + 1e-15 >= signed.abs());
            let mut rev = rows.clone();
            rev.reverse();
            prop_assert!((mean_abs_error(&rev).unwrap() - m).abs() < 1e-12);
        }
    }
}
