//! Bit-stream feature catalog.
//!
//! Every feature is a countable decoding sub-process. Features marked with a
//! depth expand into one slot per CU depth (`d0` = 64x64 down to `d3` = 8x8).
//! Slots are laid out densely in table order, depth-major within a row, and
//! the slot index is the only key used internally. Paper-style feature IDs
//! are carried as display metadata: they collide at 85 (`TrIntraY_d3` and
//! `TrIntraC_d0`) and `mergeAMP` only spans two IDs (38..39), so it carries
//! two depth slots.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag embedded in every dataset and model file.
pub const CATALOG_VERSION: &str = "hevc-enc-features/1";

/// Version of the JSON catalog export document.
pub const EXPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureCategory {
    General,
    Intra,
    Inter,
    Residual,
    InLoop,
}

impl FeatureCategory {
    pub const ALL: [FeatureCategory; 5] = [
        FeatureCategory::General,
        FeatureCategory::Intra,
        FeatureCategory::Inter,
        FeatureCategory::Residual,
        FeatureCategory::InLoop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureCategory::General => "general",
            FeatureCategory::Intra => "intra",
            FeatureCategory::Inter => "inter",
            FeatureCategory::Residual => "residual",
            FeatureCategory::InLoop => "in_loop",
        }
    }
}

/// Feature-model variant: simple (SM) or elaborate (EM).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SM")]
    Sm,
    #[serde(rename = "EM")]
    Em,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Sm => "SM",
            Variant::Em => "EM",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sm" => Ok(Variant::Sm),
            "em" => Ok(Variant::Em),
            _ => Err(Error::InvalidArgument(format!("unknown variant '{s}' (expected sm or em)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureDef {
    pub label: &'static str,
    pub feature_id_lo: u16,
    pub feature_id_hi: u16,
    pub depth_count: u8,
    /// Row is written with a `(d)` suffix, i.e. its slots are depth-indexed.
    pub has_depth: bool,
    pub category: FeatureCategory,
    pub in_sm: bool,
    pub in_em: bool,
}

impl FeatureDef {
    pub fn in_variant(&self, variant: Variant) -> bool {
        match variant {
            Variant::Sm => self.in_sm,
            Variant::Em => self.in_em,
        }
    }
}

const fn row(
    label: &'static str,
    ids: (u16, u16),
    depth_count: u8,
    category: FeatureCategory,
    in_sm: bool,
    in_em: bool,
) -> FeatureDef {
    FeatureDef {
        label,
        feature_id_lo: ids.0,
        feature_id_hi: ids.1,
        depth_count,
        has_depth: depth_count > 1,
        category,
        in_sm,
        in_em,
    }
}

use FeatureCategory::{General, InLoop, Inter, Intra, Residual};

#[rustfmt::skip]
static TABLE: [FeatureDef; 50] = [
    row("E0",           (1, 1),     1, General,  true,  true),
    row("Islice",       (2, 2),     1, General,  true,  true),
    row("PBslice",      (3, 3),     1, General,  true,  true),
    row("intraCU",      (4, 4),     1, Intra,    true,  true),
    row("pla",          (5, 8),     4, Intra,    false, true),
    row("dc",           (9, 12),    4, Intra,    false, true),
    row("hvd",          (13, 16),   4, Intra,    false, true),
    row("ang",          (17, 20),   4, Intra,    false, true),
    row("all",          (21, 24),   4, Intra,    true,  false),
    row("noMPM",        (25, 25),   1, Intra,    true,  true),
    row("skip",         (26, 29),   4, Inter,    true,  true),
    row("merge",        (30, 33),   4, Inter,    true,  true),
    row("mergeSMP",     (34, 37),   4, Inter,    true,  true),
    row("mergeAMP",     (38, 39),   2, Inter,    true,  true),
    row("inter",        (40, 43),   4, Inter,    true,  true),
    row("interSMP",     (44, 47),   4, Inter,    false, true),
    row("interAMP",     (48, 51),   4, Inter,    false, true),
    row("interCU",      (52, 55),   4, Inter,    true,  false),
    row("fracpelHor",   (56, 59),   4, Inter,    false, true),
    row("fracpelVer",   (60, 63),   4, Inter,    false, true),
    row("fracpelAvg",   (64, 64),   1, Inter,    true,  false),
    row("chrHalfpel",   (65, 68),   4, Inter,    true,  true),
    row("bi",           (69, 69),   1, Inter,    true,  true),
    row("MVD",          (70, 70),   1, Inter,    true,  true),
    row("uni",          (71, 71),   1, Inter,    true,  true),
    row("fracopsHor",   (72, 72),   1, Inter,    false, true),
    row("fracopsVer",   (73, 73),   1, Inter,    false, true),
    row("fracopsBoth",  (74, 77),   4, Inter,    true,  false),
    row("coeff",        (78, 78),   1, Residual, true,  true),
    row("coeffg1",      (79, 79),   1, Residual, false, true),
    row("CSBF",         (80, 80),   1, Residual, false, true),
    row("val",          (81, 81),   1, Residual, true,  true),
    row("TrIntraY",     (82, 85),   4, Residual, false, true),
    row("TrIntraC",     (85, 88),   4, Residual, false, true),
    row("TrInterY",     (89, 92),   4, Residual, false, true),
    row("TrInterC",     (93, 96),   4, Residual, false, true),
    row("Tr",           (97, 100),  4, Residual, true,  false),
    row("TSF",          (101, 101), 1, Residual, false, true),
    row("zeroCoeff",    (102, 102), 1, Residual, false, true),
    row("Bs0",          (103, 103), 1, InLoop,   false, true),
    row("Bs1",          (104, 104), 1, InLoop,   false, true),
    row("Bs2",          (105, 105), 1, InLoop,   false, true),
    row("Bs",           (106, 106), 1, InLoop,   true,  false),
    row("SAO_Y_BO",     (107, 107), 1, InLoop,   false, true),
    row("SAO_Y_EO",     (108, 108), 1, InLoop,   false, true),
    row("SAO_Y",        (109, 109), 1, InLoop,   true,  false),
    row("SAO_C_BO",     (110, 110), 1, InLoop,   false, true),
    row("SAO_C_EO",     (111, 111), 1, InLoop,   false, true),
    row("SAO_C",        (112, 112), 1, InLoop,   true,  false),
    row("SAO_allComps", (113, 113), 1, InLoop,   false, true),
];

/// One dense position in a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub def: usize,
    pub depth: u8,
}

#[derive(Debug, Clone)]
pub struct FeatureCatalog {
    defs: Vec<FeatureDef>,
    slots: Vec<Slot>,
    names: Vec<String>,
    by_name: HashMap<String, usize>,
    by_label_depth: HashMap<(&'static str, u8), usize>,
}

/// Builds the canonical catalog.
pub fn build_catalog() -> FeatureCatalog {
    let defs = TABLE.to_vec();
    let mut slots = Vec::new();
    let mut names = Vec::new();
    for (i, def) in defs.iter().enumerate() {
        for d in 0..def.depth_count {
            slots.push(Slot { def: i, depth: d });
            names.push(if def.has_depth { format!("{}_d{}", def.label, d) } else { def.label.to_string() });
        }
    }
    let by_name = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    let by_label_depth = slots.iter().enumerate().map(|(i, s)| ((defs[s.def].label, s.depth), i)).collect();
    FeatureCatalog { defs, slots, names, by_name, by_label_depth }
}

impl FeatureCatalog {
    /// Shared instance of the canonical catalog.
    pub fn canonical() -> &'static FeatureCatalog {
        static CATALOG: OnceLock<FeatureCatalog> = OnceLock::new();
        CATALOG.get_or_init(build_catalog)
    }

    pub fn version(&self) -> &'static str {
        CATALOG_VERSION
    }

    pub fn defs(&self) -> &[FeatureDef] {
        &self.defs
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn def(&self, label: &str) -> Option<&FeatureDef> {
        self.defs.iter().find(|d| d.label == label)
    }

    pub fn slot_def(&self, slot: usize) -> &FeatureDef {
        &self.defs[self.slots[slot].def]
    }

    /// Column name of a slot: `label` or `label_d<k>`.
    pub fn slot_name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn slot_names(&self) -> &[String] {
        &self.names
    }

    pub fn slot_by_name(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Slot for a `(label, depth)` pair; depth-less rows use depth 0.
    pub fn slot_of(&self, label: &str, depth: u8) -> Option<usize> {
        self.by_label_depth.get(&(label, depth)).copied()
    }

    pub fn feature_id(&self, slot: usize) -> u16 {
        let s = self.slots[slot];
        self.defs[s.def].feature_id_lo + u16::from(s.depth)
    }

    /// Index of the constant-offset slot (always the first).
    pub fn e0_slot(&self) -> usize {
        0
    }

    pub fn selection_mask(&self, variant: Variant) -> Vec<bool> {
        self.slots.iter().map(|s| self.defs[s.def].in_variant(variant)).collect()
    }

    /// Slot indices selected by `variant`, in slot order.
    pub fn selected_slots(&self, variant: Variant) -> Vec<usize> {
        (0..self.slots.len()).filter(|&i| self.slot_def(i).in_variant(variant)).collect()
    }

    pub fn validate_vector(&self, v: &FeatureVector) -> Vec<Violation> {
        let mut out = Vec::new();
        if v.len() != self.slot_count() {
            out.push(Violation::Length { expected: self.slot_count(), found: v.len() });
            return out;
        }
        for (i, &n) in v.counts().iter().enumerate() {
            if n < 0 {
                out.push(Violation::Negative { slot: self.names[i].clone(), value: n });
            }
        }
        let e0 = v.counts()[self.e0_slot()];
        if e0 != 1 {
            out.push(Violation::OffsetNotOne { value: e0 });
        }
        out
    }

    pub fn export(&self) -> CatalogExport {
        CatalogExport {
            format_version: EXPORT_FORMAT_VERSION,
            catalog_version: CATALOG_VERSION.to_string(),
            slots: (0..self.slot_count())
                .map(|i| {
                    let def = self.slot_def(i);
                    ExportedSlot {
                        index: i,
                        name: self.names[i].clone(),
                        label: def.label.to_string(),
                        depth: def.has_depth.then_some(self.slots[i].depth),
                        category: def.category,
                        sm: def.in_sm,
                        em: def.in_em,
                        feature_id: self.feature_id(i),
                    }
                })
                .collect(),
        }
    }
}

/// A problem found by [`FeatureCatalog::validate_vector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Length { expected: usize, found: usize },
    Negative { slot: String, value: i64 },
    OffsetNotOne { value: i64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Length { expected, found } => {
                write!(f, "expected {expected} counts, found {found}")
            }
            Violation::Negative { slot, value } => write!(f, "slot {slot} has negative count {value}"),
            Violation::OffsetNotOne { value } => write!(f, "E0 must be 1 (found {value})"),
        }
    }
}

/// Occurrence counts for every catalog slot of one coded stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<i64>);

impl FeatureVector {
    pub fn new(counts: Vec<i64>) -> Self {
        FeatureVector(counts)
    }

    /// All-zero vector with the offset slot set to 1.
    pub fn minimal(catalog: &FeatureCatalog) -> Self {
        let mut counts = vec![0; catalog.slot_count()];
        counts[catalog.e0_slot()] = 1;
        FeatureVector(counts)
    }

    pub fn counts(&self) -> &[i64] {
        &self.0
    }

    pub fn counts_mut(&mut self) -> &mut [i64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogExport {
    pub format_version: u32,
    pub catalog_version: String,
    pub slots: Vec<ExportedSlot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedSlot {
    pub index: usize,
    pub name: String,
    pub label: String,
    pub depth: Option<u8>,
    pub category: FeatureCategory,
    pub sm: bool,
    pub em: bool,
    pub feature_id: u16,
}
