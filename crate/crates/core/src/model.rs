//! Domain types shared by every stage: identity keys, inspection records, the
//! board layout, and the per-pin feature encoding.

use std::collections::HashMap;
use std::fmt;

use chrono::{Datelike, NaiveDate, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies one PCB: a figure on a panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoardKey {
    pub panel_id: u32,
    pub figure_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComponentKey {
    pub panel_id: u32,
    pub figure_id: u32,
    pub component_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PinKey {
    pub panel_id: u32,
    pub figure_id: u32,
    pub component_id: String,
    pub pin_number: u32,
}

impl ComponentKey {
    pub fn board(&self) -> BoardKey {
        BoardKey {
            panel_id: self.panel_id,
            figure_id: self.figure_id,
        }
    }
}

impl PinKey {
    pub fn component(&self) -> ComponentKey {
        ComponentKey {
            panel_id: self.panel_id,
            figure_id: self.figure_id,
            component_id: self.component_id.clone(),
        }
    }

    pub fn board(&self) -> BoardKey {
        BoardKey {
            panel_id: self.panel_id,
            figure_id: self.figure_id,
        }
    }
}

impl fmt::Display for BoardKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.panel_id, self.figure_id)
    }
}

impl fmt::Display for ComponentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.panel_id, self.figure_id, self.component_id)
    }
}

impl fmt::Display for PinKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.panel_id, self.figure_id, self.component_id, self.pin_number
        )
    }
}

/// Header names of the twelve numeric SPI measurements, in file order.
pub const MEASUREMENT_COLUMNS: [&str; 12] = [
    "Volume(%)",
    "Height(um)",
    "Area(%)",
    "OffsetX(%)",
    "OffsetY(%)",
    "SizeX",
    "SizeY",
    "Volume(um3)",
    "Area(um2)",
    "Shape(um)",
    "PosX(mm)",
    "PosY(mm)",
];

/// The numeric part of an SPI row.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolderMeasurements {
    pub volume_pct: f64,
    pub height_um: f64,
    pub area_pct: f64,
    pub offset_x_pct: f64,
    pub offset_y_pct: f64,
    pub size_x: f64,
    pub size_y: f64,
    pub volume_um3: f64,
    pub area_um2: f64,
    pub shape_um: f64,
    pub pos_x_mm: f64,
    pub pos_y_mm: f64,
}

impl SolderMeasurements {
    /// Values in [`MEASUREMENT_COLUMNS`] order.
    pub fn to_array(&self) -> [f64; 12] {
        [
            self.volume_pct,
            self.height_um,
            self.area_pct,
            self.offset_x_pct,
            self.offset_y_pct,
            self.size_x,
            self.size_y,
            self.volume_um3,
            self.area_um2,
            self.shape_um,
            self.pos_x_mm,
            self.pos_y_mm,
        ]
    }

    pub fn from_array(v: [f64; 12]) -> Self {
        SolderMeasurements {
            volume_pct: v[0],
            height_um: v[1],
            area_pct: v[2],
            offset_x_pct: v[3],
            offset_y_pct: v[4],
            size_x: v[5],
            size_y: v[6],
            volume_um3: v[7],
            area_um2: v[8],
            shape_um: v[9],
            pos_x_mm: v[10],
            pos_y_mm: v[11],
        }
    }
}

/// One SPI measurement row.
#[derive(Debug, Clone, PartialEq)]
pub struct PinRecord {
    pub key: PinKey,
    pub date: NaiveDate,
    pub time: NaiveTime,
    pub pad_id: u32,
    pub pad_type: u8,
    pub measurements: SolderMeasurements,
    pub spi_result: String,
}

impl PinRecord {
    /// Checks the record-level invariants: finite measurements, nonnegative
    /// height/volume/area, binary pad type.
    pub fn validate(&self) -> Result<()> {
        for (name, value) in MEASUREMENT_COLUMNS
            .iter()
            .zip(self.measurements.to_array())
        {
            if !value.is_finite() {
                return Err(Error::NonFinite { field: name, value });
            }
        }
        let m = &self.measurements;
        for (name, value) in [
            ("Height(um)", m.height_um),
            ("Volume(um3)", m.volume_um3),
            ("Area(um2)", m.area_um2),
        ] {
            if value < 0.0 {
                return Err(Error::Data(format!(
                    "pin {}: {name} is negative ({value})",
                    self.key
                )));
            }
        }
        if self.pad_type > 1 {
            return Err(Error::Data(format!(
                "pin {}: PadType must be 0 or 1, got {}",
                self.key, self.pad_type
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorLabel {
    Good,
    Bad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RepairLabel {
    FalseScrap,
    NotPossibleToRepair,
}

impl OperatorLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            OperatorLabel::Good => "Good",
            OperatorLabel::Bad => "Bad",
        }
    }
}

impl RepairLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RepairLabel::FalseScrap => "FalseScrap",
            RepairLabel::NotPossibleToRepair => "NotPossibleToRepair",
        }
    }
}

/// One defect flagged by the optical inspection station, with the human
/// verdicts attached downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct AoiRecord {
    pub panel_id: u32,
    pub figure_id: u32,
    pub component_id: String,
    pub pin_number: Option<u32>,
    pub machine_label: String,
    pub operator_label: OperatorLabel,
    pub repair_label: Option<RepairLabel>,
}

impl AoiRecord {
    pub fn board(&self) -> BoardKey {
        BoardKey {
            panel_id: self.panel_id,
            figure_id: self.figure_id,
        }
    }

    pub fn component(&self) -> ComponentKey {
        ComponentKey {
            panel_id: self.panel_id,
            figure_id: self.figure_id,
            component_id: self.component_id.clone(),
        }
    }

    /// Full pin key, when the pin number was recorded.
    pub fn pin(&self) -> Option<PinKey> {
        self.pin_number.map(|pin_number| PinKey {
            panel_id: self.panel_id,
            figure_id: self.figure_id,
            component_id: self.component_id.clone(),
            pin_number,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.repair_label.is_some() && self.operator_label == OperatorLabel::Good {
            return Err(Error::Data(format!(
                "AOI record {}: repair label present on an operator-Good record",
                self.component()
            )));
        }
        Ok(())
    }
}

/// The fixed design map of one board.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardLayout {
    components: Vec<(String, u32)>,
    figures_per_panel: u32,
}

impl BoardLayout {
    pub fn new(components: Vec<(String, u32)>, figures_per_panel: u32) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("board layout has no components".into()));
        }
        if figures_per_panel == 0 {
            return Err(Error::Config("figures_per_panel must be positive".into()));
        }
        let mut seen = HashMap::new();
        for (id, pins) in &components {
            if *pins == 0 {
                return Err(Error::Config(format!("component {id} has zero pins")));
            }
            if seen.insert(id.as_str(), ()).is_some() {
                return Err(Error::Config(format!("component {id} listed twice")));
            }
        }
        Ok(BoardLayout {
            components,
            figures_per_panel,
        })
    }

    /// The production board: 128 components, 389 pins, 8 boards per panel.
    pub fn default_board() -> Self {
        let mut components = Vec::with_capacity(128);
        let groups: [(&str, u32, u32); 6] = [
            ("R", 108, 2),
            ("Q", 1, 3),
            ("D", 3, 5),
            ("T", 7, 6),
            ("U", 8, 8),
            ("J", 1, 49),
        ];
        for (prefix, count, pins) in groups {
            for i in 1..=count {
                components.push((format!("{prefix}{i}"), pins));
            }
        }
        BoardLayout {
            components,
            figures_per_panel: 8,
        }
    }

    pub fn components(&self) -> &[(String, u32)] {
        &self.components
    }

    pub fn figures_per_panel(&self) -> u32 {
        self.figures_per_panel
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    pub fn pin_count(&self, component_id: &str) -> Option<u32> {
        self.components
            .iter()
            .find(|(id, _)| id == component_id)
            .map(|&(_, n)| n)
    }

    /// Position of a component in layout order.
    pub fn position(&self, component_id: &str) -> Option<usize> {
        self.components.iter().position(|(id, _)| id == component_id)
    }

    /// Pins per board.
    pub fn total_pins(&self) -> u64 {
        self.components.iter().map(|&(_, n)| u64::from(n)).sum()
    }

    /// Number of components per pin count, ascending by pin count.
    pub fn pin_count_histogram(&self) -> Vec<(u32, usize)> {
        let mut hist = std::collections::BTreeMap::new();
        for &(_, n) in &self.components {
            *hist.entry(n).or_insert(0usize) += 1;
        }
        hist.into_iter().collect()
    }
}

impl Default for BoardLayout {
    fn default() -> Self {
        BoardLayout::default_board()
    }
}

/// Token reserved for categories outside a closed vocabulary.
pub const OTHER_TOKEN: &str = "other";

/// Closed categorical vocabulary with an optional reserved `other` slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary(Vec<String>);

impl Vocabulary {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Vocabulary(tokens.into_iter().map(Into::into).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Column slot for a token. Unknown tokens fall into the `other` slot when
    /// the vocabulary has one; otherwise they have no slot.
    pub fn slot(&self, token: &str) -> Option<usize> {
        self.0
            .iter()
            .position(|t| t == token)
            .or_else(|| self.0.iter().position(|t| t.eq_ignore_ascii_case(OTHER_TOKEN)))
    }

    pub fn default_spi_results() -> Self {
        Vocabulary::new(["Good", "W.Insufficient", "E.shape", "E.Position", OTHER_TOKEN])
    }

    pub fn default_machine_labels() -> Self {
        Vocabulary::new(["LeanSoldering", "Translated", "Misaligned", OTHER_TOKEN])
    }
}

/// Which pin-record fields become model features, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingConfig {
    pub result_vocabulary: Vocabulary,
    pub machine_label_vocabulary: Vocabulary,
    pub use_spi_result: bool,
    pub include_pad_id: bool,
    pub include_date_time: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            result_vocabulary: Vocabulary::default_spi_results(),
            machine_label_vocabulary: Vocabulary::default_machine_labels(),
            use_spi_result: true,
            include_pad_id: false,
            include_date_time: false,
        }
    }
}

/// Turns pin records into fixed-width feature vectors.
#[derive(Debug, Clone)]
pub struct PinEncoder {
    config: EncodingConfig,
    names: Vec<String>,
}

impl PinEncoder {
    pub fn new(config: &EncodingConfig) -> Self {
        let mut names: Vec<String> = MEASUREMENT_COLUMNS.iter().map(|s| s.to_string()).collect();
        names.push("PadType".into());
        if config.use_spi_result {
            names.extend(
                config
                    .result_vocabulary
                    .tokens()
                    .iter()
                    .map(|t| format!("Result={t}")),
            );
        }
        if config.include_pad_id {
            names.push("PadID".into());
        }
        if config.include_date_time {
            names.push("Date".into());
            names.push("Time".into());
        }
        PinEncoder {
            config: config.clone(),
            names,
        }
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    /// Writes the encoding of `record` into `out`, which must be `width()` long.
    pub fn encode_into(&self, record: &PinRecord, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.width());
        let values = record.measurements.to_array();
        for (name, &v) in MEASUREMENT_COLUMNS.iter().zip(values.iter()) {
            if !v.is_finite() {
                return Err(Error::NonFinite { field: name, value: v });
            }
        }
        out[..12].copy_from_slice(&values);
        out[12] = f64::from(record.pad_type);
        let mut at = 13;
        if self.config.use_spi_result {
            let k = self.config.result_vocabulary.len();
            let slots = &mut out[at..at + k];
            slots.fill(0.0);
            if let Some(i) = self.config.result_vocabulary.slot(&record.spi_result) {
                slots[i] = 1.0;
            }
            at += k;
        }
        if self.config.include_pad_id {
            out[at] = f64::from(record.pad_id);
            at += 1;
        }
        if self.config.include_date_time {
            out[at] = f64::from(record.date.num_days_from_ce());
            out[at + 1] = f64::from(record.time.num_seconds_from_midnight());
        }
        Ok(())
    }
}

/// Feature vector of a single pin, with its column names.
pub fn per_pin_feature_vector(
    record: &PinRecord,
    encoding: &EncodingConfig,
) -> Result<(Vec<String>, Vec<f64>)> {
    let encoder = PinEncoder::new(encoding);
    let mut values = vec![0.0; encoder.width()];
    encoder.encode_into(record, &mut values)?;
    Ok((encoder.names, values))
}

/// Sum of pin counts over the layout.
pub fn total_pins(layout: &BoardLayout) -> u64 {
    layout.total_pins()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn pin(panel: u32, figure: u32, component: &str, pin_number: u32) -> PinRecord {
        PinRecord {
            key: PinKey {
                panel_id: panel,
                figure_id: figure,
                component_id: component.to_string(),
                pin_number,
            },
            date: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
            time: NaiveTime::from_hms_opt(8, 30, 0).unwrap(),
            pad_id: pin_number,
            pad_type: 0,
            measurements: SolderMeasurements::from_array([
                101.3, 150.0, 99.0, 0.5, -0.5, 300.0, 250.0, 1.1e7, 7.5e4, 12.0, 10.0, 20.0,
            ]),
            spi_result: "Good".into(),
        }
    }

    pub fn aoi(panel: u32, figure: u32, component: &str, pin: Option<u32>) -> AoiRecord {
        AoiRecord {
            panel_id: panel,
            figure_id: figure,
            component_id: component.to_string(),
            pin_number: pin,
            machine_label: "LeanSoldering".into(),
            operator_label: OperatorLabel::Good,
            repair_label: None,
        }
    }
}
