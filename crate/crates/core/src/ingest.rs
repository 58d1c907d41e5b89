//! SPI and AOI CSV ingestion with row-level cleaning.
//!
//! Columns are located by header name, so permuted files read identically.
//! Rows with missing or non-finite measurements are dropped and counted as
//! `nan`; rows that cannot be parsed at all are counted as `malformed`. Every
//! dropped row is kept in the report with its line number.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AoiRecord, OperatorLabel, PinKey, PinRecord, RepairLabel, SolderMeasurements,
    MEASUREMENT_COLUMNS,
};

/// Canonical SPI header, in export order.
pub const SPI_HEADER: [&str; 21] = [
    "PanelID",
    "FigureID",
    "Date",
    "Time",
    "ComponentID",
    "PinNumber",
    "PadID",
    "PadType",
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
    "Result",
];

/// Canonical AOI header, in export order.
pub const AOI_HEADER: [&str; 7] = [
    "PanelID",
    "FigureID",
    "ComponentID",
    "PinNumber",
    "MachineLabel",
    "OperatorLabel",
    "RepairLabel",
];

/// How to read real-world files whose layout differs from the canonical one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    /// Canonical SPI column name -> header used in the file.
    pub spi_columns: BTreeMap<String, String>,
    /// Canonical AOI column name -> header used in the file.
    pub aoi_columns: BTreeMap<String, String>,
    pub delimiter: char,
    /// Accept `1,5` as one and a half.
    pub decimal_comma: bool,
    pub date_format: String,
    pub time_format: String,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            spi_columns: BTreeMap::new(),
            aoi_columns: BTreeMap::new(),
            delimiter: ',',
            decimal_comma: false,
            date_format: "%Y-%m-%d".into(),
            time_format: "%H:%M:%S".into(),
        }
    }
}

impl SchemaConfig {
    fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(u8::is_ascii)
            .ok_or_else(|| Error::Config(format!("delimiter {:?} is not ASCII", self.delimiter)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ColumnStats {
    pub count: u64,
    pub min: f64,
    pub max: f64,
    pub sum: f64,
}

impl ColumnStats {
    fn push(&mut self, v: f64) {
        if self.count == 0 {
            self.min = v;
            self.max = v;
        } else {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
        self.count += 1;
        self.sum += v;
    }

    pub fn merge(&mut self, other: &ColumnStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.count += other.count;
        self.sum += other.sum;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    NotANumber,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedRow {
    pub line: u64,
    pub reason: DropReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestReport {
    pub rows_read: u64,
    pub rows_kept: u64,
    pub rows_dropped_nan: u64,
    pub rows_dropped_malformed: u64,
    /// Numeric column name -> statistics over kept rows.
    pub columns: BTreeMap<String, ColumnStats>,
    pub dropped: Vec<DroppedRow>,
}

impl IngestReport {
    fn drop_row(&mut self, line: u64, reason: DropReason, detail: String) {
        match reason {
            DropReason::NotANumber => self.rows_dropped_nan += 1,
            DropReason::Malformed => self.rows_dropped_malformed += 1,
        }
        self.dropped.push(DroppedRow {
            line,
            reason,
            detail,
        });
    }

    /// Combines reports of consecutive file chunks.
    pub fn merge(&mut self, other: &IngestReport) {
        self.rows_read += other.rows_read;
        self.rows_kept += other.rows_kept;
        self.rows_dropped_nan += other.rows_dropped_nan;
        self.rows_dropped_malformed += other.rows_dropped_malformed;
        for (name, stats) in &other.columns {
            self.columns.entry(name.clone()).or_default().merge(stats);
        }
        self.dropped.extend(other.dropped.iter().cloned());
    }

    /// Line-numbered list of dropped rows.
    pub fn sidecar(&self) -> String {
        let mut out = String::from("line,reason,detail\n");
        for d in &self.dropped {
            let reason = match d.reason {
                DropReason::NotANumber => "nan",
                DropReason::Malformed => "malformed",
            };
            let _ = writeln!(out, "{},{},\"{}\"", d.line, reason, d.detail.replace('"', "'"));
        }
        out
    }
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows_read = {}", self.rows_read)?;
        writeln!(f, "rows_kept = {}", self.rows_kept)?;
        writeln!(f, "rows_dropped_nan = {}", self.rows_dropped_nan)?;
        writeln!(f, "rows_dropped_malformed = {}", self.rows_dropped_malformed)?;
        for (name, s) in &self.columns {
            writeln!(
                f,
                "column.{name} = min {} max {} mean {}",
                s.min,
                s.max,
                s.mean()
            )?;
        }
        Ok(())
    }
}

fn open_reader(path: &Path, schema: &SchemaConfig) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    if len == 0 {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(csv::ReaderBuilder::new()
        .delimiter(schema.delimiter_byte()?)
        .flexible(true)
        .from_reader(file))
}

/// Resolves canonical columns to header positions, reporting every missing one.
fn locate<const N: usize>(
    path: &Path,
    reader: &mut csv::Reader<File>,
    wanted: &[&str; N],
    overrides: &BTreeMap<String, String>,
) -> Result<[usize; N]> {
    let headers = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    let mut idx = [0usize; N];
    let mut missing = Vec::new();
    for (slot, &name) in idx.iter_mut().zip(wanted.iter()) {
        let header = overrides.get(name).map_or(name, String::as_str);
        match headers
            .iter()
            .position(|h| h.trim().trim_start_matches('\u{feff}') == header)
        {
            Some(i) => *slot = i,
            None => missing.push(header.to_string()),
        }
    }
    if missing.is_empty() {
        Ok(idx)
    } else {
        Err(Error::MissingColumns {
            path: path.to_path_buf(),
            missing,
        })
    }
}

enum CellError {
    Nan(String),
    Malformed(String),
}

fn cell<'r>(rec: &'r csv::StringRecord, idx: usize, name: &str) -> std::result::Result<&'r str, CellError> {
    rec.get(idx)
        .map(str::trim)
        .ok_or_else(|| CellError::Malformed(format!("row has no {name} field")))
}

fn parse_int(text: &str, name: &str) -> std::result::Result<u32, CellError> {
    text.parse::<u32>()
        .map_err(|_| CellError::Malformed(format!("{name}: {text:?} is not a nonnegative integer")))
}

fn parse_real(text: &str, name: &str, decimal_comma: bool) -> std::result::Result<f64, CellError> {
    let lowered = text.to_ascii_lowercase();
    if text.is_empty() || matches!(lowered.as_str(), "nan" | "na" | "n/a" | "null") {
        return Err(CellError::Nan(format!("{name} is missing ({text:?})")));
    }
    let parsed = if decimal_comma && text.contains(',') {
        text.replace(',', ".").parse::<f64>()
    } else {
        text.parse::<f64>()
    };
    match parsed {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(CellError::Nan(format!("{name} is not finite ({v})"))),
        Err(_) => Err(CellError::Malformed(format!("{name}: {text:?} is not a number"))),
    }
}

fn parse_spi_row(
    rec: &csv::StringRecord,
    idx: &[usize; 21],
    schema: &SchemaConfig,
) -> std::result::Result<PinRecord, CellError> {
    let get = |i: usize| cell(rec, idx[i], SPI_HEADER[i]);
    let panel_id = parse_int(get(0)?, "PanelID")?;
    let figure_id = parse_int(get(1)?, "FigureID")?;
    let date_text = get(2)?;
    let date = NaiveDate::parse_from_str(date_text, &schema.date_format)
        .map_err(|_| CellError::Malformed(format!("Date: {date_text:?}")))?;
    let time_text = get(3)?;
    let time = NaiveTime::parse_from_str(time_text, &schema.time_format)
        .map_err(|_| CellError::Malformed(format!("Time: {time_text:?}")))?;
    let component_id = get(4)?;
    if component_id.is_empty() {
        return Err(CellError::Malformed("ComponentID is empty".into()));
    }
    let pin_number = parse_int(get(5)?, "PinNumber")?;
    let pad_id = parse_int(get(6)?, "PadID")?;
    let pad_type = match get(7)? {
        "0" => 0,
        "1" => 1,
        other => return Err(CellError::Malformed(format!("PadType: {other:?}"))),
    };
    // All measurement cells are checked so that any NaN wins over later garbage.
    let mut values = [0.0; 12];
    let mut first_error = None;
    for (c, slot) in values.iter_mut().enumerate() {
        match parse_real(get(8 + c)?, MEASUREMENT_COLUMNS[c], schema.decimal_comma) {
            Ok(v) => *slot = v,
            Err(e @ CellError::Nan(_)) => return Err(e),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    let record = PinRecord {
        key: PinKey {
            panel_id,
            figure_id,
            component_id: component_id.to_string(),
            pin_number,
        },
        date,
        time,
        pad_id,
        pad_type,
        measurements: SolderMeasurements::from_array(values),
        spi_result: get(20)?.to_string(),
    };
    record
        .validate()
        .map_err(|e| CellError::Malformed(e.to_string()))?;
    Ok(record)
}

/// Reads an SPI export. Records come back in file order.
pub fn read_spi(path: &Path, schema: &SchemaConfig) -> Result<(Vec<PinRecord>, IngestReport)> {
    let mut reader = open_reader(path, schema)?;
    let idx = locate(path, &mut reader, &SPI_HEADER, &schema.spi_columns)?;
    let mut report = IngestReport::default();
    let mut stats = [ColumnStats::default(); 12];
    let mut records = Vec::new();
    let mut rec = csv::StringRecord::new();
    loop {
        let line = reader.position().line() + 1;
        match reader.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                report.rows_read += 1;
                report.drop_row(line, DropReason::Malformed, e.to_string());
                continue;
            }
        }
        report.rows_read += 1;
        let line = rec.position().map_or(line, csv::Position::line);
        match parse_spi_row(&rec, &idx, schema) {
            Ok(r) => {
                for (s, v) in stats.iter_mut().zip(r.measurements.to_array()) {
                    s.push(v);
                }
                report.rows_kept += 1;
                records.push(r);
            }
            Err(CellError::Nan(detail)) => report.drop_row(line, DropReason::NotANumber, detail),
            Err(CellError::Malformed(detail)) => {
                report.drop_row(line, DropReason::Malformed, detail)
            }
        }
    }
    for (name, s) in MEASUREMENT_COLUMNS.iter().zip(stats) {
        report.columns.insert(name.to_string(), s);
    }
    Ok((records, report))
}

/// Folds case, spaces and separators: "False Scrap" and "false_scrap" agree.
fn fold_token(text: &str) -> String {
    text.chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

pub fn parse_operator_label(text: &str) -> Option<OperatorLabel> {
    match fold_token(text).as_str() {
        "good" => Some(OperatorLabel::Good),
        "bad" => Some(OperatorLabel::Bad),
        _ => None,
    }
}

pub fn parse_repair_label(text: &str) -> Option<RepairLabel> {
    match fold_token(text).as_str() {
        "falsescrap" => Some(RepairLabel::FalseScrap),
        "notpossibletorepair" => Some(RepairLabel::NotPossibleToRepair),
        _ => None,
    }
}

fn parse_aoi_row(rec: &csv::StringRecord, idx: &[usize; 7]) -> std::result::Result<AoiRecord, CellError> {
    let get = |i: usize| cell(rec, idx[i], AOI_HEADER[i]);
    let panel_id = parse_int(get(0)?, "PanelID")?;
    let figure_id = parse_int(get(1)?, "FigureID")?;
    let component_id = get(2)?;
    if component_id.is_empty() {
        return Err(CellError::Malformed("ComponentID is empty".into()));
    }
    let pin_text = get(3)?;
    let pin_number = if pin_text.is_empty() || pin_text.eq_ignore_ascii_case("nan") {
        None
    } else {
        // Some exports write pin numbers as floats ("2.0").
        let n = pin_text
            .parse::<u32>()
            .ok()
            .or_else(|| {
                pin_text
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v <= f64::from(u32::MAX))
                    .map(|v| v as u32)
            })
            .ok_or_else(|| CellError::Malformed(format!("PinNumber: {pin_text:?}")))?;
        Some(n)
    };
    let machine_label = get(4)?.to_string();
    let op_text = get(5)?;
    let operator_label = parse_operator_label(op_text)
        .ok_or_else(|| CellError::Malformed(format!("unknown OperatorLabel {op_text:?}")))?;
    let repair_text = get(6)?;
    let repair_label = match operator_label {
        OperatorLabel::Good => None,
        OperatorLabel::Bad if repair_text.is_empty() => None,
        OperatorLabel::Bad => Some(parse_repair_label(repair_text).ok_or_else(|| {
            CellError::Malformed(format!("unknown RepairLabel {repair_text:?}"))
        })?),
    };
    Ok(AoiRecord {
        panel_id,
        figure_id,
        component_id: component_id.to_string(),
        pin_number,
        machine_label,
        operator_label,
        repair_label,
    })
}

/// Reads an AOI defect export. A blank pin number keeps the row with no pin.
pub fn read_aoi(path: &Path, schema: &SchemaConfig) -> Result<(Vec<AoiRecord>, IngestReport)> {
    let mut reader = open_reader(path, schema)?;
    let idx = locate(path, &mut reader, &AOI_HEADER, &schema.aoi_columns)?;
    let mut report = IngestReport::default();
    let mut records = Vec::new();
    let mut rec = csv::StringRecord::new();
    loop {
        let line = reader.position().line() + 1;
        match reader.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                report.rows_read += 1;
                report.drop_row(line, DropReason::Malformed, e.to_string());
                continue;
            }
        }
        report.rows_read += 1;
        let line = rec.position().map_or(line, csv::Position::line);
        match parse_aoi_row(&rec, &idx) {
            Ok(r) => {
                report.rows_kept += 1;
                records.push(r);
            }
            Err(CellError::Nan(detail)) => report.drop_row(line, DropReason::NotANumber, detail),
            Err(CellError::Malformed(detail)) => {
                report.drop_row(line, DropReason::Malformed, detail)
            }
        }
    }
    Ok((records, report))
}

fn quoted(s: &str) -> std::borrow::Cow<'_, str> {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\"")).into()
    } else {
        s.into()
    }
}

pub fn write_spi_to(out: impl Write, records: &[PinRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::with_capacity(1 << 20, out);
    writeln!(w, "{}", SPI_HEADER.join(","))?;
    for r in records {
        write!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.key.panel_id,
            r.key.figure_id,
            r.date.format("%Y-%m-%d"),
            r.time.format("%H:%M:%S"),
            quoted(&r.key.component_id),
            r.key.pin_number,
            r.pad_id,
            r.pad_type
        )?;
        for v in r.measurements.to_array() {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{}", quoted(&r.spi_result))?;
    }
    w.flush()
}

pub fn write_aoi_to(out: impl Write, records: &[AoiRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", AOI_HEADER.join(","))?;
    for r in records {
        let pin = r.pin_number.map(|p| p.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.panel_id,
            r.figure_id,
            quoted(&r.component_id),
            pin,
            quoted(&r.machine_label),
            r.operator_label.as_str(),
            r.repair_label.map_or("", RepairLabel::as_str)
        )?;
    }
    w.flush()
}

pub fn write_spi(path: &Path, records: &[PinRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_spi_to(file, records).map_err(|e| Error::io(path, e))
}

pub fn write_aoi(path: &Path, records: &[AoiRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_aoi_to(file, records).map_err(|e| Error::io(path, e))
}
