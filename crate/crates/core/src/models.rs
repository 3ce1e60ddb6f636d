//! Estimator families and their prediction functions.
//!
//! * [`FeatureModel`]: sum of feature counts times per-feature energies.
//! * [`QpModel`]: cubic encoding-time polynomial in QP times a mean power.
//! * [`TimeModel`]: offset plus power times the measured encoding time.
//! * [`UfTimeModel`]: same form, driven by the ultrafast-preset encoding time.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::catalog::{FeatureCatalog, FeatureVector, Variant, CATALOG_VERSION};
use crate::dataset::{Preset, StreamRecord};
use crate::error::{Error, Result};

/// The five estimators compared in the evaluation table, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "QP")]
    Qp,
    #[serde(rename = "T")]
    Time,
    #[serde(rename = "UF")]
    UfTime,
    #[serde(rename = "EM")]
    Em,
    #[serde(rename = "SM")]
    Sm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Qp, ModelKind::Time, ModelKind::UfTime, ModelKind::Em, ModelKind::Sm];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Qp => "QP",
            ModelKind::Time => "T",
            ModelKind::UfTime => "UF",
            ModelKind::Em => "EM",
            ModelKind::Sm => "SM",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            ModelKind::Em => Some(Variant::Em),
            ModelKind::Sm => Some(Variant::Sm),
            _ => None,
        }
    }
}

impl From<Variant> for ModelKind {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Sm => ModelKind::Sm,
            Variant::Em => ModelKind::Em,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "qp" => ModelKind::Qp,
            "t" | "time" => ModelKind::Time,
            "uf" | "uf-time" | "ultrafast" => ModelKind::UfTime,
            "em" => ModelKind::Em,
            "sm" => ModelKind::Sm,
            _ => return Err(Error::InvalidArgument(format!("unknown model kind '{s}' (expected qp, t, uf, em, sm)"))),
        })
    }
}

/// Per-feature energies for the slots selected by `variant`.
///
/// Slots outside the variant have no coefficient at all.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    pub variant: Variant,
    /// Joules per occurrence, one per selected slot in slot order.
    pub coeffs: Vec<f64>,
    /// Selected slots that never occurred in the training data.
    pub unidentifiable: Vec<usize>,
}

impl FeatureModel {
    pub fn new(variant: Variant, coeffs: Vec<f64>, catalog: &FeatureCatalog) -> Result<Self> {
        let expected = catalog.selected_slots(variant).len();
        if coeffs.len() != expected {
            return Err(Error::data(format!("{variant} model needs {expected} coefficients, found {}", coeffs.len())));
        }
        Ok(FeatureModel { variant, coeffs, unidentifiable: Vec::new() })
    }

    pub fn zeros(variant: Variant, catalog: &FeatureCatalog) -> Self {
        FeatureModel { variant, coeffs: vec![0.0; catalog.selected_slots(variant).len()], unidentifiable: Vec::new() }
    }

    /// Coefficient of a catalog slot, `None` if the slot is not in the variant.
    pub fn coeff_for_slot(&self, slot: usize, catalog: &FeatureCatalog) -> Option<f64> {
        catalog.selected_slots(self.variant).iter().position(|&s| s == slot).map(|i| self.coeffs[i])
    }
}

/// `p_avg * (kappa*qp^3 - lambda*qp^2 - mu*qp + t0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpModel {
    pub kappa: f64,
    pub lambda: f64,
    pub mu: f64,
    pub t0: f64,
    pub p_avg: f64,
}

impl QpModel {
    pub fn time(&self, qp: u32) -> f64 {
        let q = f64::from(qp);
        self.kappa * q.powi(3) - self.lambda * q * q - self.mu * q + self.t0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    pub e0: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UfTimeModel {
    pub e0: f64,
    pub p: f64,
}

pub fn predict_feature(model: &FeatureModel, v: &FeatureVector, catalog: &FeatureCatalog) -> Result<f64> {
    if v.len() != catalog.slot_count() {
        return Err(Error::VersionMismatch {
            expected: format!("{} ({} slots)", catalog.version(), catalog.slot_count()),
            found: format!("vector with {} slots", v.len()),
        });
    }
    let slots = catalog.selected_slots(model.variant);
    if slots.len() != model.coeffs.len() {
        return Err(Error::data(format!("{} model has {} coefficients for {} slots", model.variant, model.coeffs.len(), slots.len())));
    }
    Ok(slots.iter().zip(&model.coeffs).map(|(&s, &e)| v.counts()[s] as f64 * e).sum())
}

pub fn predict_qp(model: &QpModel, qp: u32) -> Result<f64> {
    if qp > 51 {
        return Err(Error::data(format!("qp {qp} outside 0..=51")));
    }
    Ok(model.p_avg * model.time(qp))
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::data(format!("encoding time must be finite and >= 0, found {t}")));
    }
    Ok(())
}

pub fn predict_time(model: &TimeModel, t_enc: f64) -> Result<f64> {
    check_time(t_enc)?;
    Ok(model.e0 + model.p * t_enc)
}

pub fn predict_uf(model: &UfTimeModel, t_uf: f64) -> Result<f64> {
    check_time(t_uf)?;
    Ok(model.e0 + model.p * t_uf)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Feature(FeatureModel),
    Qp(QpModel),
    Time(TimeModel),
    UfTime(UfTimeModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Feature(m) => m.variant.into(),
            Model::Qp(_) => ModelKind::Qp,
            Model::Time(_) => ModelKind::Time,
            Model::UfTime(_) => ModelKind::UfTime,
        }
    }

    /// Predicts the encoding energy of a record from the fields this model uses.
    pub fn predict_record(&self, r: &StreamRecord, catalog: &FeatureCatalog) -> Result<f64> {
        let key = r.key();
        let res = match self {
            Model::Feature(m) => predict_feature(m, &r.features, catalog),
            Model::Qp(m) => {
                let qp = r.qp_equiv.ok_or_else(|| Error::data("qp_equiv required"))?;
                predict_qp(m, qp)
            }
            Model::Time(m) => predict_time(m, r.enc_time_s.ok_or_else(|| Error::data("enc_time required"))?),
            Model::UfTime(m) => predict_uf(m, r.uf_time_s.ok_or_else(|| Error::data("uf_time required"))?),
        }
        .and_then(|e| if e.is_finite() { Ok(e) } else { Err(Error::Numerical(format!("non-finite estimate {e}"))) });
        res.map_err(|e| e.context(format!("record {key}")))
    }
}

/// Where a fitted model's coefficients came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub dataset_hash: String,
    /// Preset the training data was restricted to, or `"all"`.
    pub preset_scope: String,
    pub fold_seed: Option<u64>,
    /// Validation fold excluded from training, when trained inside cross-validation.
    pub held_out_fold: Option<usize>,
    pub records: usize,
    pub bounded: bool,
}

impl TrainingMeta {
    pub fn scope_label(scope: Option<Preset>) -> String {
        scope.map(|p| p.to_string()).unwrap_or_else(|| "all".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub model: Model,
    pub training: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    catalog_version: String,
    kind: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    variant: Option<Variant>,
    coeffs: Map<String, Value>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    unidentifiable: Vec<String>,
    training: TrainingMeta,
}

fn num(map: &Map<String, Value>, name: &str) -> Result<f64> {
    map.get(name)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::data(format!("model file: missing numeric coefficient '{name}'")))
}

impl FittedModel {
    pub fn to_json(&self, catalog: &FeatureCatalog) -> String {
        let mut coeffs = Map::new();
        let mut put = |k: &str, v: f64| {
            coeffs.insert(k.to_string(), Value::from(v));
        };
        let mut unidentifiable = Vec::new();
        let variant = match &self.model {
            Model::Feature(m) => {
                for (&s, &c) in catalog.selected_slots(m.variant).iter().zip(&m.coeffs) {
                    put(catalog.slot_name(s), c);
                }
                unidentifiable = m.unidentifiable.iter().map(|&s| catalog.slot_name(s).to_string()).collect();
                Some(m.variant)
            }
            Model::Qp(m) => {
                put("kappa", m.kappa);
                put("lambda", m.lambda);
                put("mu", m.mu);
                put("t0", m.t0);
                put("p_avg", m.p_avg);
                None
            }
            Model::Time(TimeModel { e0, p }) | Model::UfTime(UfTimeModel { e0, p }) => {
                put("e0", *e0);
                put("p", *p);
                None
            }
        };
        let file = ModelFile {
            catalog_version: CATALOG_VERSION.to_string(),
            kind: self.model.kind(),
            variant,
            coeffs,
            unidentifiable,
            training: self.training.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, catalog: &FeatureCatalog) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.catalog_version != catalog.version() {
            return Err(Error::VersionMismatch { expected: catalog.version().into(), found: file.catalog_version });
        }
        let c = &file.coeffs;
        let model = match file.kind {
            ModelKind::Em | ModelKind::Sm => {
                let variant = file.kind.variant().unwrap();
                if file.variant.is_some_and(|v| v != variant) {
                    return Err(Error::data("model file: variant does not match kind"));
                }
                let slots = catalog.selected_slots(variant);
                if c.len() != slots.len() {
                    return Err(Error::data(format!("model file: {variant} needs {} coefficients, found {}", slots.len(), c.len())));
                }
                let coeffs = slots.iter().map(|&s| num(c, catalog.slot_name(s))).collect::<Result<Vec<_>>>()?;
                let unidentifiable = file
                    .unidentifiable
                    .iter()
                    .map(|n| catalog.slot_by_name(n).ok_or_else(|| Error::data(format!("model file: unknown slot '{n}'"))))
                    .collect::<Result<Vec<_>>>()?;
                Model::Feature(FeatureModel { variant, coeffs, unidentifiable })
            }
            ModelKind::Qp => Model::Qp(QpModel {
                kappa: num(c, "kappa")?,
                lambda: num(c, "lambda")?,
                mu: num(c, "mu")?,
                t0: num(c, "t0")?,
                p_avg: num(c, "p_avg")?,
            }),
            ModelKind::Time => Model::Time(TimeModel { e0: num(c, "e0")?, p: num(c, "p")? }),
            ModelKind::UfTime => Model::UfTime(UfTimeModel { e0: num(c, "e0")?, p: num(c, "p")? }),
        };
        Ok(FittedModel { model, training: file.training })
    }
}
