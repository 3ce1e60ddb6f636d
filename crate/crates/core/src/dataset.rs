//! Stream records, delimited-table ingestion and the canonical JSON dataset.
//!
//! Feature tables are comma-delimited with a header. The first three columns
//! are `sequence_name,preset,crf`; the remaining columns are slot names from
//! the catalog export (`skip_d2`, `noMPM`, ...). A real analyzer dump needs a
//! thin converter into this layout.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{FeatureCatalog, FeatureVector, CATALOG_VERSION};
use crate::error::{Error, Result};

/// x265 speed presets, fastest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Ultrafast,
    Superfast,
    Veryfast,
    Faster,
    Fast,
    Medium,
    Slow,
    Slower,
    Veryslow,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::Ultrafast,
        Preset::Superfast,
        Preset::Veryfast,
        Preset::Faster,
        Preset::Fast,
        Preset::Medium,
        Preset::Slow,
        Preset::Slower,
        Preset::Veryslow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Ultrafast => "ultrafast",
            Preset::Superfast => "superfast",
            Preset::Veryfast => "veryfast",
            Preset::Faster => "faster",
            Preset::Fast => "fast",
            Preset::Medium => "medium",
            Preset::Slow => "slow",
            Preset::Slower => "slower",
            Preset::Veryslow => "veryslow",
        }
    }

    /// Position in [`Preset::ALL`], 0 for ultrafast.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::data(format!("unknown preset '{s}'")))
    }
}

/// CRF values of the reference experiment grid.
pub const STANDARD_CRFS: [u32; 4] = [18, 23, 28, 33];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SequenceClass {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl FromStr for SequenceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "A" | "a" => SequenceClass::A,
            "B" | "b" => SequenceClass::B,
            "C" | "c" => SequenceClass::C,
            "D" | "d" => SequenceClass::D,
            "E" | "e" => SequenceClass::E,
            "F" | "f" => SequenceClass::F,
            _ => return Err(Error::data(format!("unknown sequence class '{s}'"))),
        })
    }
}

/// Per-sequence properties, independent of encoder configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub name: String,
    pub class: SequenceClass,
    pub width: u32,
    pub height: u32,
    pub frame_rate: f64,
    pub frame_count: u32,
}

/// The 22 test sequences of the reference corpus, first 64 frames each.
///
/// `RaceHorses` exists in class C and D; the class letter is appended so
/// that stream keys stay unique.
pub fn reference_sequences() -> Vec<SequenceInfo> {
    use SequenceClass::*;
    #[rustfmt::skip]
    let rows: [(&str, SequenceClass, u32, u32, f64); 22] = [
        ("PeopleOnStreet", A, 2560, 1600, 30.0),
        ("Traffic", A, 2560, 1600, 30.0),
        ("BasketballDrive", B, 1920, 1080, 50.0),
        ("BQTerrace", B, 1920, 1080, 60.0),
        ("Cactus", B, 1920, 1080, 50.0),
        ("Kimono1", B, 1920, 1080, 24.0),
        ("ParkScene", B, 1920, 1080, 24.0),
        ("BasketballDrill", C, 832, 480, 50.0),
        ("BQMall", C, 832, 480, 60.0),
        ("PartyScene", C, 832, 480, 50.0),
        ("RaceHorsesC", C, 832, 480, 30.0),
        ("BasketballPass", D, 416, 240, 50.0),
        ("BlowingBubbles", D, 416, 240, 50.0),
        ("BQSquare", D, 416, 240, 60.0),
        ("RaceHorsesD", D, 416, 240, 30.0),
        ("FourPeople", E, 1280, 720, 60.0),
        ("Johnny", E, 1280, 720, 60.0),
        ("KristenAndSara", E, 1280, 720, 60.0),
        ("BasketballDrillText", F, 832, 480, 50.0),
        ("ChinaSpeed", F, 1024, 768, 30.0),
        ("SlideEditing", F, 1280, 720, 30.0),
        ("Slideshow", F, 1280, 720, 20.0),
    ];
    rows.into_iter()
        .map(|(name, class, width, height, frame_rate)| SequenceInfo {
            name: name.to_string(),
            class,
            width,
            height,
            frame_rate,
            frame_count: 64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamKey {
    pub sequence_name: String,
    pub preset: Preset,
    pub crf: u32,
}

impl StreamKey {
    pub fn new(sequence_name: impl Into<String>, preset: Preset, crf: u32) -> Self {
        StreamKey { sequence_name: sequence_name.into(), preset, crf }
    }
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.sequence_name, self.preset, self.crf)
    }
}

impl FromStr for StreamKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut it = s.rsplitn(3, '/');
        let (crf, preset, name) = match (it.next(), it.next(), it.next()) {
            (Some(c), Some(p), Some(n)) => (c, p, n),
            _ => return Err(Error::data(format!("malformed stream key '{s}'"))),
        };
        let crf = crf.parse().map_err(|_| Error::data(format!("malformed crf in stream key '{s}'")))?;
        Ok(StreamKey::new(name, preset.parse()?, crf))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub sequence_name: String,
    pub class: SequenceClass,
    pub width: u32,
    pub height: u32,
    pub frame_rate: f64,
    pub frame_count: u32,
    pub preset: Preset,
    pub crf: u32,
}

impl StreamMeta {
    pub fn from_info(info: &SequenceInfo, preset: Preset, crf: u32) -> Self {
        StreamMeta {
            sequence_name: info.name.clone(),
            class: info.class,
            width: info.width,
            height: info.height,
            frame_rate: info.frame_rate,
            frame_count: info.frame_count,
            preset,
            crf,
        }
    }

    pub fn key(&self) -> StreamKey {
        StreamKey::new(self.sequence_name.clone(), self.preset, self.crf)
    }

    pub fn crf_is_standard(&self) -> bool {
        STANDARD_CRFS.contains(&self.crf)
    }

    pub fn pixels(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub meta: StreamMeta,
    pub features: FeatureVector,
    /// Measured encoding energy in joules.
    pub energy_joules: f64,
    pub enc_time_s: Option<f64>,
    /// Encoding time of the same sequence and CRF under the ultrafast preset.
    pub uf_time_s: Option<f64>,
    pub qp_equiv: Option<u32>,
}

impl StreamRecord {
    pub fn key(&self) -> StreamKey {
        self.meta.key()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub catalog_version: String,
    pub records: Vec<StreamRecord>,
}

impl Dataset {
    pub fn new(records: Vec<StreamRecord>) -> Self {
        Dataset { catalog_version: CATALOG_VERSION.to_string(), records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorts records by (sequence, preset, crf).
    pub fn sort_canonical(&mut self) {
        self.records.sort_by_key(StreamRecord::key);
    }

    pub fn filter_preset(&self, preset: Preset) -> Dataset {
        Dataset {
            catalog_version: self.catalog_version.clone(),
            records: self.records.iter().filter(|r| r.meta.preset == preset).cloned().collect(),
        }
    }

    /// Checks every dataset invariant against `catalog`.
    pub fn validate(&self, catalog: &FeatureCatalog) -> Result<()> {
        if self.catalog_version != catalog.version() {
            return Err(Error::VersionMismatch {
                expected: catalog.version().to_string(),
                found: self.catalog_version.clone(),
            });
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            let key = r.key();
            let violations = catalog.validate_vector(&r.features);
            if !violations.is_empty() {
                let msgs: Vec<_> = violations.iter().map(|v| v.to_string()).collect();
                return Err(Error::data(format!("record {key}: {}", msgs.join("; "))));
            }
            if !(r.energy_joules.is_finite() && r.energy_joules >= 0.0) {
                return Err(Error::data(format!("record {key}: invalid energy {}", r.energy_joules)));
            }
            for (name, t) in [("enc_time_s", r.enc_time_s), ("uf_time_s", r.uf_time_s)] {
                if let Some(t) = t {
                    if !(t.is_finite() && t >= 0.0) {
                        return Err(Error::data(format!("record {key}: invalid {name} {t}")));
                    }
                }
            }
            if !seen.insert(key.clone()) {
                return Err(Error::data(format!("duplicate stream key {key}")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(save_dataset(self)))
    }
}

/// Result of [`parse_feature_table`].
#[derive(Debug, Clone, Default)]
pub struct FeatureTable {
    pub rows: Vec<(StreamKey, FeatureVector)>,
    /// Slot columns absent from the header and filled with defaults.
    pub missing_columns: Vec<String>,
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn key_from_fields(what: &str, line: usize, rec: &csv::StringRecord) -> Result<StreamKey> {
    let name = rec.get(0).unwrap_or("");
    if name.is_empty() {
        return Err(Error::parse(what, line, "empty sequence_name"));
    }
    let preset: Preset = rec.get(1).unwrap_or("").parse().map_err(|e: Error| Error::parse(what, line, e.to_string()))?;
    let crf = rec
        .get(2)
        .unwrap_or("")
        .parse::<u32>()
        .map_err(|_| Error::parse(what, line, format!("invalid crf '{}'", rec.get(2).unwrap_or(""))))?;
    Ok(StreamKey::new(name, preset, crf))
}

fn check_key_header(what: &str, header: &csv::StringRecord) -> Result<()> {
    let expect = ["sequence_name", "preset", "crf"];
    for (i, e) in expect.iter().enumerate() {
        if header.get(i) != Some(e) {
            return Err(Error::parse(what, 1, format!("column {} must be '{e}'", i + 1)));
        }
    }
    Ok(())
}

/// Parses a feature-count table into one vector per stream.
pub fn parse_feature_table(text: &str, catalog: &FeatureCatalog) -> Result<FeatureTable> {
    const WHAT: &str = "feature table";
    let mut rdr = reader(text);
    let header = rdr.headers().map_err(|e| Error::parse(WHAT, 1, e.to_string()))?.clone();
    check_key_header(WHAT, &header)?;

    let mut columns = Vec::new();
    let mut present = HashSet::new();
    for name in header.iter().skip(3) {
        let slot = catalog
            .slot_by_name(name)
            .ok_or_else(|| Error::parse(WHAT, 1, format!("unknown column '{name}'")))?;
        if !present.insert(slot) {
            return Err(Error::parse(WHAT, 1, format!("duplicate column '{name}'")));
        }
        columns.push(slot);
    }
    let missing_columns: Vec<String> =
        (0..catalog.slot_count()).filter(|s| !present.contains(s)).map(|s| catalog.slot_name(s).to_string()).collect();
    for name in &missing_columns {
        warn!("feature table: column '{name}' missing, defaulting to {}", if name == "E0" { 1 } else { 0 });
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(WHAT, line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(Error::parse(WHAT, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let key = key_from_fields(WHAT, line, &rec)?;
        let mut v = FeatureVector::minimal(catalog);
        for (field, &slot) in rec.iter().skip(3).zip(&columns) {
            let col = catalog.slot_name(slot);
            let n: i64 = field
                .parse()
                .map_err(|_| Error::parse(WHAT, line, format!("column {col}: non-integer count '{field}'")))?;
            if n < 0 {
                return Err(Error::parse(WHAT, line, format!("column {col}: negative count {n}")));
            }
            v.counts_mut()[slot] = n;
        }
        if !seen.insert(key.clone()) {
            return Err(Error::parse(WHAT, line, format!("duplicate stream key {key}")));
        }
        rows.push((key, v));
    }
    Ok(FeatureTable { rows, missing_columns })
}

/// One row of a measurement table.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRow {
    pub key: StreamKey,
    pub energy_joules: f64,
    pub enc_time_s: Option<f64>,
    pub uf_time_s: Option<f64>,
    pub qp_equiv: Option<u32>,
}

pub const MEASUREMENT_HEADER: [&str; 7] =
    ["sequence_name", "preset", "crf", "energy_j", "enc_time_s", "uf_time_s", "qp_equiv"];

fn non_negative(what: &str, line: usize, col: &str, field: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::parse(what, line, format!("column {col}: malformed number '{field}'")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::parse(what, line, format!("column {col}: value must be finite and >= 0, found {field}")));
    }
    Ok(v)
}

/// Parses a measurement table (`sequence_name,preset,crf,energy_j,enc_time_s,uf_time_s,qp_equiv`).
/// The last three columns may be empty or omitted.
pub fn parse_measurement_table(text: &str) -> Result<Vec<MeasurementRow>> {
    const WHAT: &str = "measurement table";
    let mut rdr = reader(text);
    let header = rdr.headers().map_err(|e| Error::parse(WHAT, 1, e.to_string()))?.clone();
    check_key_header(WHAT, &header)?;
    if header.len() < 4 || header.len() > 7 {
        return Err(Error::parse(WHAT, 1, format!("expected 4 to 7 columns, found {}", header.len())));
    }
    for (i, h) in header.iter().enumerate() {
        if h != MEASUREMENT_HEADER[i] {
            return Err(Error::parse(WHAT, 1, format!("column {} must be '{}'", i + 1, MEASUREMENT_HEADER[i])));
        }
    }

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(WHAT, line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(Error::parse(WHAT, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let key = key_from_fields(WHAT, line, &rec)?;
        let energy_joules = non_negative(WHAT, line, "energy_j", &rec[3])?;
        let opt = |idx: usize| -> Result<Option<f64>> {
            match rec.get(idx) {
                None | Some("") => Ok(None),
                Some(f) => non_negative(WHAT, line, MEASUREMENT_HEADER[idx], f).map(Some),
            }
        };
        let enc_time_s = opt(4)?;
        let uf_time_s = opt(5)?;
        let qp_equiv = match rec.get(6) {
            None | Some("") => None,
            Some(f) => {
                let qp: u32 = f.parse().map_err(|_| Error::parse(WHAT, line, format!("column qp_equiv: malformed integer '{f}'")))?;
                if qp > 51 {
                    return Err(Error::parse(WHAT, line, format!("column qp_equiv: {qp} outside 0..=51")));
                }
                Some(qp)
            }
        };
        if !seen.insert(key.clone()) {
            return Err(Error::parse(WHAT, line, format!("duplicate stream key {key}")));
        }
        out.push(MeasurementRow { key, energy_joules, enc_time_s, uf_time_s, qp_equiv });
    }
    Ok(out)
}

/// Renders measurement rows in the table format read by [`parse_measurement_table`].
pub fn write_measurement_table(rows: &[MeasurementRow]) -> String {
    let mut s = MEASUREMENT_HEADER.join(",");
    s.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.key.sequence_name,
            r.key.preset,
            r.key.crf,
            r.energy_joules,
            opt(r.enc_time_s),
            opt(r.uf_time_s),
            r.qp_equiv.map(|q| q.to_string()).unwrap_or_default()
        ));
    }
    s
}

/// Parses a sequence metadata table
/// (`sequence_name,class,width,height,frame_rate,frame_count`).
pub fn parse_sequence_table(text: &str) -> Result<Vec<SequenceInfo>> {
    const WHAT: &str = "sequence table";
    const HEADER: [&str; 6] = ["sequence_name", "class", "width", "height", "frame_rate", "frame_count"];
    let mut rdr = reader(text);
    let header = rdr.headers().map_err(|e| Error::parse(WHAT, 1, e.to_string()))?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::parse(WHAT, 1, format!("header must be {}", HEADER.join(","))));
    }
    let mut out: Vec<SequenceInfo> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(WHAT, line, e.to_string()))?;
        if rec.len() != HEADER.len() {
            return Err(Error::parse(WHAT, line, format!("expected {} fields, found {}", HEADER.len(), rec.len())));
        }
        let bad = |col: &str| Error::parse(WHAT, line, format!("column {col}: malformed value"));
        let info = SequenceInfo {
            name: rec[0].to_string(),
            class: rec[1].parse().map_err(|e: Error| Error::parse(WHAT, line, e.to_string()))?,
            width: rec[2].parse().map_err(|_| bad("width"))?,
            height: rec[3].parse().map_err(|_| bad("height"))?,
            frame_rate: rec[4].parse().map_err(|_| bad("frame_rate"))?,
            frame_count: rec[5].parse().map_err(|_| bad("frame_count"))?,
        };
        if out.iter().any(|s| s.name == info.name) {
            return Err(Error::parse(WHAT, line, format!("duplicate sequence '{}'", info.name)));
        }
        out.push(info);
    }
    Ok(out)
}

/// Bookkeeping from [`join`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JoinReport {
    /// Keys with features but no measurement.
    pub feature_orphans: Vec<StreamKey>,
    /// Keys with a measurement but no features.
    pub measurement_orphans: Vec<StreamKey>,
    /// Keys whose CRF lies outside the reference grid.
    pub nonstandard_crf: Vec<StreamKey>,
}

impl JoinReport {
    pub fn orphan_count(&self) -> usize {
        self.feature_orphans.len() + self.measurement_orphans.len()
    }
}

/// Inner join of feature vectors and measurements on the stream key.
pub fn join(
    features: &[(StreamKey, FeatureVector)],
    measurements: &[MeasurementRow],
    sequences: &[SequenceInfo],
    catalog: &FeatureCatalog,
) -> Result<(Dataset, JoinReport)> {
    let meas: HashMap<&StreamKey, &MeasurementRow> = measurements.iter().map(|m| (&m.key, m)).collect();
    let feat_keys: HashSet<&StreamKey> = features.iter().map(|(k, _)| k).collect();
    let seqs: HashMap<&str, &SequenceInfo> = sequences.iter().map(|s| (s.name.as_str(), s)).collect();

    let mut report = JoinReport::default();
    let mut records = Vec::new();
    for (key, v) in features {
        let Some(m) = meas.get(key) else {
            report.feature_orphans.push(key.clone());
            continue;
        };
        let info = seqs
            .get(key.sequence_name.as_str())
            .ok_or_else(|| Error::data(format!("no sequence metadata for '{}'", key.sequence_name)))?;
        let meta = StreamMeta::from_info(info, key.preset, key.crf);
        if !meta.crf_is_standard() {
            warn!("stream {key}: crf {} outside the reference grid", key.crf);
            report.nonstandard_crf.push(key.clone());
        }
        records.push(StreamRecord {
            meta,
            features: v.clone(),
            energy_joules: m.energy_joules,
            enc_time_s: m.enc_time_s,
            uf_time_s: m.uf_time_s,
            qp_equiv: m.qp_equiv,
        });
    }
    report.measurement_orphans = measurements.iter().filter(|m| !feat_keys.contains(&m.key)).map(|m| m.key.clone()).collect();
    report.feature_orphans.sort();
    report.measurement_orphans.sort();
    report.nonstandard_crf.sort();

    if records.is_empty() {
        return Err(Error::data("join: feature and measurement tables share no stream key"));
    }
    let mut ds = Dataset::new(records);
    ds.sort_canonical();
    ds.validate(catalog)?;
    Ok((ds, report))
}

/// Serializes a dataset to its canonical JSON document.
pub fn save_dataset(ds: &Dataset) -> Vec<u8> {
    let mut out = serde_json::to_vec(ds).expect("dataset serialization cannot fail");
    out.push(b'\n');
    out
}

/// Parses and validates a canonical JSON dataset.
pub fn load_dataset(bytes: &[u8], catalog: &FeatureCatalog) -> Result<Dataset> {
    #[derive(Deserialize)]
    struct Probe {
        catalog_version: String,
    }
    let probe: Probe = serde_json::from_slice(bytes)?;
    if probe.catalog_version != catalog.version() {
        return Err(Error::VersionMismatch { expected: catalog.version().to_string(), found: probe.catalog_version });
    }
    let ds: Dataset = serde_json::from_slice(bytes)?;
    ds.validate(catalog)?;
    Ok(ds)
}

/// Distinct presets present in a dataset, in preset order.
pub fn presets_in(ds: &Dataset) -> Vec<Preset> {
    ds.records.iter().map(|r| r.meta.preset).collect::<BTreeSet<_>>().into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::build_catalog;

    fn header(c: &FeatureCatalog) -> String {
        let mut h = vec!["sequence_name".to_string(), "preset".into(), "crf".into()];
        h.extend(c.slot_names().iter().cloned());
        h.join(",")
    }

    fn zero_row(c: &FeatureCatalog, key: &str) -> String {
        let mut r = vec![key.to_string()];
        r.extend((0..c.slot_count()).map(|i| if i == 0 { "1".to_string() } else { "0".to_string() }));
        r.join(",")
    }

    #[test]
    fn minimal_feature_row() {
        let c = build_catalog();
        let text = format!("{}\n{}\n", header(&c), zero_row(&c, "Cactus,medium,23"));
        let t = parse_feature_table(&text, &c).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.missing_columns.is_empty());
        assert_eq!(t.rows[0].0, StreamKey::new("Cactus", Preset::Medium, 23));
        assert_eq!(t.rows[0].1, FeatureVector::minimal(&c));
    }

    #[test]
    fn negative_count_names_row_and_column() {
        let c = build_catalog();
        let text = "sequence_name,preset,crf,E0,skip_d0\nCactus,medium,23,1,0\nCactus,fast,23,1,-3\n";
        let err = parse_feature_table(text, &c).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("skip_d0"), "{err}");
    }

    #[test]
    fn duplicate_feature_key() {
        let c = build_catalog();
        let text = "sequence_name,preset,crf,E0\nA,fast,23,1\nA,fast,23,1\n";
        let err = parse_feature_table(text, &c).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn unknown_column_and_wrong_field_count() {
        let c = build_catalog();
        assert!(parse_feature_table("sequence_name,preset,crf,bogus\n", &c).is_err());
        assert!(parse_feature_table("sequence_name,preset,crf,E0\nA,fast,23\n", &c).is_err());
        assert!(parse_feature_table("sequence_name,preset,crf,E0\nA,fast,23,1.5\n", &c).is_err());
    }

    #[test]
    fn missing_columns_default() {
        let c = build_catalog();
        let t = parse_feature_table("sequence_name,preset,crf,skip_d1\nA,slow,18,7\n", &c).unwrap();
        assert_eq!(t.missing_columns.len(), c.slot_count() - 1);
        assert!(t.missing_columns.contains(&"E0".to_string()));
        let v = &t.rows[0].1;
        assert_eq!(v.counts()[0], 1);
        assert_eq!(v.counts()[c.slot_by_name("skip_d1").unwrap()], 7);
        assert_eq!(v.counts().iter().sum::<i64>(), 8);
    }

    const MHEAD: &str = "sequence_name,preset,crf,energy_j,enc_time_s,uf_time_s,qp_equiv\n";

    #[test]
    fn measurement_row() {
        let rows = parse_measurement_table(&format!("{MHEAD}Cactus,medium,23,1234.5,60.2,4.1,25\n")).unwrap();
        assert_eq!(
            rows,
            vec![MeasurementRow {
                key: StreamKey::new("Cactus", Preset::Medium, 23),
                energy_joules: 1234.5,
                enc_time_s: Some(60.2),
                uf_time_s: Some(4.1),
                qp_equiv: Some(25),
            }]
        );
    }

    #[test]
    fn measurement_negative_energy() {
        assert!(parse_measurement_table(&format!("{MHEAD}Cactus,medium,23,-1,60.2,4.1,25\n")).is_err());
        assert!(parse_measurement_table(&format!("{MHEAD}Cactus,medium,23,abc,,,\n")).is_err());
    }

    #[test]
    fn measurement_empty_optionals() {
        let rows = parse_measurement_table(&format!("{MHEAD}Cactus,medium,23,10,5,,\n")).unwrap();
        assert_eq!(rows[0].uf_time_s, None);
        assert_eq!(rows[0].qp_equiv, None);
        assert_eq!(rows[0].enc_time_s, Some(5.0));
        let short = parse_measurement_table("sequence_name,preset,crf,energy_j\nX,fast,18,3\n").unwrap();
        assert_eq!(short[0].enc_time_s, None);
    }

    #[test]
    fn measurement_table_writer_round_trips() {
        let rows = parse_measurement_table(&format!("{MHEAD}Cactus,medium,23,1234.5,60.2,,25\nX,fast,18,0.1,,,\n")).unwrap();
        assert_eq!(parse_measurement_table(&write_measurement_table(&rows)).unwrap(), rows);
    }

    fn meas(key: &StreamKey, e: f64) -> MeasurementRow {
        MeasurementRow { key: key.clone(), energy_joules: e, enc_time_s: None, uf_time_s: None, qp_equiv: None }
    }

    #[test]
    fn join_reports_orphans() {
        let c = build_catalog();
        let seqs = reference_sequences();
        let keys: Vec<_> = [18, 23, 28].iter().map(|&crf| StreamKey::new("Cactus", Preset::Fast, crf)).collect();
        let feats: Vec<_> = keys.iter().map(|k| (k.clone(), FeatureVector::minimal(&c))).collect();
        let other = StreamKey::new("Johnny", Preset::Fast, 18);
        let ms = vec![meas(&keys[0], 1.0), meas(&keys[2], 2.0)];
        let (ds, rep) = join(&feats, &ms, &seqs, &c).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(rep.feature_orphans, vec![keys[1].clone()]);
        assert!(rep.measurement_orphans.is_empty());

        let err = join(&feats, &[meas(&other, 1.0)], &seqs, &c).unwrap_err();
        assert!(err.to_string().contains("share no stream key"));
    }

    #[test]
    fn join_flags_nonstandard_crf_and_missing_meta() {
        let c = build_catalog();
        let k = StreamKey::new("Cactus", Preset::Fast, 40);
        let (_, rep) = join(&[(k.clone(), FeatureVector::minimal(&c))], &[meas(&k, 1.0)], &reference_sequences(), &c).unwrap();
        assert_eq!(rep.nonstandard_crf, vec![k]);
        let u = StreamKey::new("Unknown", Preset::Fast, 18);
        assert!(join(&[(u.clone(), FeatureVector::minimal(&c))], &[meas(&u, 1.0)], &reference_sequences(), &c).is_err());
    }

    #[test]
    fn reference_grid_is_792() {
        let c = build_catalog();
        let mut feats = Vec::new();
        let mut ms = Vec::new();
        for s in reference_sequences() {
            for p in Preset::ALL {
                for crf in STANDARD_CRFS {
                    let k = StreamKey::new(s.name.clone(), p, crf);
                    feats.push((k.clone(), FeatureVector::minimal(&c)));
                    ms.push(meas(&k, 100.0));
                }
            }
        }
        let (ds, rep) = join(&feats, &ms, &reference_sequences(), &c).unwrap();
        assert_eq!(ds.len(), 792);
        assert_eq!(rep.orphan_count(), 0);
        assert_eq!(ds.filter_preset(Preset::Medium).len(), 88);
    }

    #[test]
    fn tampered_version_rejected() {
        let c = build_catalog();
        let mut ds = Dataset::new(vec![]);
        let bytes = save_dataset(&ds);
        assert_eq!(load_dataset(&bytes, &c).unwrap(), ds);
        ds.catalog_version = "hevc-enc-features/0".into();
        let err = load_dataset(&save_dataset(&ds), &c).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { .. }));
    }

    #[test]
    fn stream_key_text_round_trip() {
        let k = StreamKey::new("Cactus", Preset::Veryslow, 33);
        assert_eq!(k.to_string(), "Cactus/veryslow/33");
        assert_eq!(k.to_string().parse::<StreamKey>().unwrap(), k);
        assert!("Cactus/33".parse::<StreamKey>().is_err());
    }

    #[test]
    fn sequence_table_parse() {
        let t = "sequence_name,class,width,height,frame_rate,frame_count\nFoo,B,1920,1080,50,64\n";
        let s = parse_sequence_table(t).unwrap();
        assert_eq!(s[0].class, SequenceClass::B);
        assert_eq!(s[0].frame_count, 64);
        assert!(parse_sequence_table("name,class\n").is_err());
    }
}
