//! Synthetic corpora with known per-feature energies, and an independent
//! weighted least-squares oracle for checking the solver.
//!
//! Count synthesis, per stream:
//!
//! * `units = width * height * frame_count / 4096` (64x64 CTUs coded).
//! * Every slot count is `units * family_scale * depth_scale * crf_scale *
//!   LU(0.25, 4)`, rounded, where `LU(a, b)` is log-uniform on `[a, b]` and
//!   drawn independently per stream and slot.
//! * `family_scale` is 200 for pel- and coefficient-level rows, 1 otherwise;
//!   `depth_scale` is 0.2 / 0.8 / 3 / 10 for d0..d3.
//! * `crf_scale = ((51 - crf) / 25)^2` for residual rows, 1 otherwise.
//! * SMP rows are zero below `slow`, AMP rows below `slower`, SAO rows at
//!   `ultrafast`, loosely following which tools each x265 preset enables.
//! * `E0 = 1`; `Islice` is uniform in 1..=4; `PBslice` is
//!   `(frame_count - Islice) * slices_per_frame` with `slices_per_frame`
//!   uniform in 1..=4.
//!
//! Energy is `sum(n_i * e_i) * (1 + u)` with `u` uniform in
//! `[-noise_rel, noise_rel]`. Encoding time is the noiseless energy divided
//! by [`SYNTH_POWER_W`]; the ultrafast time is the encoding time of the
//! ultrafast stream with the same sequence and CRF; `qp_equiv` is the CRF.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::catalog::{FeatureCatalog, FeatureVector, Variant};
use crate::dataset::{reference_sequences, Dataset, Preset, StreamMeta, StreamRecord, STANDARD_CRFS};
use crate::error::{Error, Result};

/// Mean encoding power used to derive synthetic encoding times.
pub const SYNTH_POWER_W: f64 = 40.0;

pub const DEFAULT_NOISE_REL: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub variant: Variant,
    /// Energy per occurrence for each slot selected by `variant`, in slot order.
    pub true_coeffs: Vec<f64>,
    pub corpus: Vec<StreamMeta>,
    pub noise_rel: f64,
    pub seed: u64,
}

/// Reference grid: every sequence at every preset and CRF (792 streams).
pub fn reference_corpus() -> Vec<StreamMeta> {
    let mut out = Vec::new();
    for s in reference_sequences() {
        for p in Preset::ALL {
            for crf in STANDARD_CRFS {
                out.push(StreamMeta::from_info(&s, p, crf));
            }
        }
    }
    out
}

/// Default ground-truth energies: fixed per slot, independent of `seed`.
pub fn default_true_coeffs(variant: Variant, catalog: &FeatureCatalog) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_e0e0);
    let per_slot: Vec<f64> = (0..catalog.slot_count())
        .map(|s| {
            let draw = 10f64.powf(rng.gen_range(-5.0..-3.0));
            match catalog.slot_name(s) {
                "E0" => 2.0,
                "Islice" => 0.5,
                "PBslice" => 0.2,
                _ => draw,
            }
        })
        .collect();
    catalog.selected_slots(variant).into_iter().map(|s| per_slot[s]).collect()
}

impl SynthSpec {
    pub fn reference(variant: Variant, seed: u64, catalog: &FeatureCatalog) -> Self {
        SynthSpec {
            variant,
            true_coeffs: default_true_coeffs(variant, catalog),
            corpus: reference_corpus(),
            noise_rel: DEFAULT_NOISE_REL,
            seed,
        }
    }

    pub fn with_noise(mut self, noise_rel: f64) -> Self {
        self.noise_rel = noise_rel;
        self
    }

    fn validate(&self, catalog: &FeatureCatalog) -> Result<()> {
        let expected = catalog.selected_slots(self.variant).len();
        if self.true_coeffs.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "{} ground truth needs {expected} coefficients, found {}",
                self.variant,
                self.true_coeffs.len()
            )));
        }
        if self.true_coeffs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidArgument("ground-truth coefficients must be finite and >= 0".into()));
        }
        if !(self.noise_rel >= 0.0 && self.noise_rel < 1.0) {
            return Err(Error::InvalidArgument(format!("noise_rel must lie in [0, 1), found {}", self.noise_rel)));
        }
        Ok(())
    }
}

fn is_pel_level(label: &str) -> bool {
    label.starts_with("fracpel")
        || label.starts_with("fracops")
        || matches!(label, "chrHalfpel" | "coeff" | "coeffg1" | "val" | "zeroCoeff" | "CSBF")
}

fn tool_enabled(label: &str, preset: Preset) -> bool {
    if label.ends_with("SMP") {
        preset >= Preset::Slow
    } else if label.ends_with("AMP") {
        preset >= Preset::Slower
    } else if label.starts_with("SAO") {
        preset > Preset::Ultrafast
    } else {
        true
    }
}

fn synth_features(meta: &StreamMeta, rng: &mut ChaCha8Rng, catalog: &FeatureCatalog) -> FeatureVector {
    const DEPTH_SCALE: [f64; 4] = [0.2, 0.8, 3.0, 10.0];
    let units = meta.pixels() as f64 * f64::from(meta.frame_count) / 4096.0;
    let crf_scale = ((51.0 - f64::from(meta.crf)) / 25.0).powi(2);
    let mut v = FeatureVector::minimal(catalog);
    let islice = rng.gen_range(1..=4i64);
    let slices_per_frame = rng.gen_range(1..=4i64);
    for s in 0..catalog.slot_count() {
        let def = catalog.slot_def(s);
        // always draw so that the stream of random numbers does not depend on the preset
        let lu = (rng.gen_range(0.25f64.ln()..4f64.ln())).exp();
        let n = match def.label {
            "E0" => 1,
            "Islice" => islice,
            "PBslice" => (i64::from(meta.frame_count) - islice).max(0) * slices_per_frame,
            label if !tool_enabled(label, meta.preset) => 0,
            label => {
                let mut scale = if is_pel_level(label) { 200.0 } else { 1.0 };
                if def.has_depth {
                    scale *= DEPTH_SCALE[usize::from(catalog.slots()[s].depth)];
                }
                if def.category == crate::catalog::FeatureCategory::Residual {
                    scale *= crf_scale;
                }
                (units * scale * lu).round() as i64
            }
        };
        v.counts_mut()[s] = n;
    }
    v
}

/// Generates a synthetic dataset from `spec`.
pub fn generate(spec: &SynthSpec, catalog: &FeatureCatalog) -> Result<Dataset> {
    spec.validate(catalog)?;
    let slots = catalog.selected_slots(spec.variant);
    let mut records = Vec::with_capacity(spec.corpus.len());
    let mut noiseless = Vec::with_capacity(spec.corpus.len());
    for (i, meta) in spec.corpus.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let features = synth_features(meta, &mut rng, catalog);
        let exact: f64 = slots.iter().zip(&spec.true_coeffs).map(|(&s, &e)| features.counts()[s] as f64 * e).sum();
        let u = if spec.noise_rel > 0.0 { rng.gen_range(-spec.noise_rel..=spec.noise_rel) } else { 0.0 };
        noiseless.push(exact);
        records.push(StreamRecord {
            meta: meta.clone(),
            features,
            energy_joules: exact * (1.0 + u),
            enc_time_s: Some(exact / SYNTH_POWER_W),
            uf_time_s: None,
            qp_equiv: Some(meta.crf.min(51)),
        });
    }
    let uf: HashMap<(String, u32), f64> = records
        .iter()
        .filter(|r| r.meta.preset == Preset::Ultrafast)
        .map(|r| ((r.meta.sequence_name.clone(), r.meta.crf), r.enc_time_s.unwrap()))
        .collect();
    for r in &mut records {
        r.uf_time_s = uf.get(&(r.meta.sequence_name.clone(), r.meta.crf)).copied();
    }
    let mut ds = Dataset::new(records);
    ds.sort_canonical();
    ds.validate(catalog)?;
    Ok(ds)
}

/// Ground-truth coefficient file written next to a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub variant: Variant,
    pub noise_rel: f64,
    pub seed: u64,
    pub coeffs: Map<String, Value>,
}

impl GroundTruth {
    pub fn from_spec(spec: &SynthSpec, catalog: &FeatureCatalog) -> Self {
        let coeffs = catalog
            .selected_slots(spec.variant)
            .into_iter()
            .zip(&spec.true_coeffs)
            .map(|(s, &c)| (catalog.slot_name(s).to_string(), Value::from(c)))
            .collect();
        GroundTruth { variant: spec.variant, noise_rel: spec.noise_rel, seed: spec.seed, coeffs }
    }

    /// Coefficients in slot order of the variant.
    pub fn values(&self, catalog: &FeatureCatalog) -> Result<Vec<f64>> {
        catalog
            .selected_slots(self.variant)
            .into_iter()
            .map(|s| {
                let name = catalog.slot_name(s);
                self.coeffs.get(name).and_then(Value::as_f64).ok_or_else(|| Error::data(format!("ground truth: missing '{name}'")))
            })
            .collect()
    }
}

/// Solves the weighted normal equations `X^T W X c = X^T W y` by explicit
/// Gram assembly and Cholesky factorization.
///
/// `x` is row-major. This path shares nothing with the production solver.
#[allow(clippy::needless_range_loop)]
pub fn oracle_wls(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let m = x.len();
    if m == 0 || y.len() != m || w.len() != m {
        return Err(Error::data("oracle: inconsistent system dimensions"));
    }
    let n = x[0].len();
    if n == 0 || x.iter().any(|r| r.len() != n) {
        return Err(Error::data("oracle: ragged or empty design"));
    }
    let mut g = vec![vec![0.0f64; n]; n];
    let mut rhs = vec![0.0f64; n];
    for r in 0..m {
        for i in 0..n {
            let wi = w[r] * x[r][i];
            rhs[i] += wi * y[r];
            for j in 0..=i {
                g[i][j] += wi * x[r][j];
            }
        }
    }
    let max_diag = (0..n).map(|i| g[i][i]).fold(0.0, f64::max);
    // Cholesky, lower triangle in place
    for j in 0..n {
        let mut d = g[j][j];
        for k in 0..j {
            d -= g[j][k] * g[j][k];
        }
        if !(d > 1e-12 * max_diag) {
            return Err(Error::Numerical(format!("oracle: design is rank deficient at column {j}")));
        }
        let d = d.sqrt();
        g[j][j] = d;
        for i in j + 1..n {
            let mut s = g[i][j];
            for k in 0..j {
                s -= g[i][k] * g[j][k];
            }
            g[i][j] = s / d;
        }
    }
    // forward then backward substitution
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= g[i][k] * z[k];
        }
        z[i] = s / g[i][i];
    }
    let mut c = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= g[k][i] * c[k];
        }
        c[i] = s / g[i][i];
    }
    Ok(c)
}
