//! Pin, component and board feature tables, the three label joins, and
//! group-aware k-fold splitting.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AoiRecord, BoardKey, BoardLayout, ComponentKey, EncodingConfig, OperatorLabel, PinEncoder,
    PinKey, PinRecord, RepairLabel, Vocabulary,
};
use crate::table::{FeatureTable, Level, RowKeys};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassificationTask {
    /// Does the optical inspection flag a defect?
    #[serde(rename = "c1")]
    C1AoiDefect,
    /// Does the operator confirm the flagged defect?
    #[serde(rename = "c2")]
    C2OperatorLabel,
    /// Is the confirmed defect beyond repair?
    #[serde(rename = "c3")]
    C3RepairLabel,
}

impl ClassificationTask {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassificationTask::C1AoiDefect => "c1",
            ClassificationTask::C2OperatorLabel => "c2",
            ClassificationTask::C3RepairLabel => "c3",
        }
    }
}

impl std::str::FromStr for ClassificationTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c1" => Ok(ClassificationTask::C1AoiDefect),
            "c2" => Ok(ClassificationTask::C2OperatorLabel),
            "c3" => Ok(ClassificationTask::C3RepairLabel),
            other => Err(Error::Config(format!(
                "unknown task {other:?}; expected one of c1, c2, c3"
            ))),
        }
    }
}

impl std::fmt::Display for ClassificationTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pins of every board, indexed by layout position and pin number.
///
/// Building this once lets all component tables and the board table share
/// a single pass over the records.
#[derive(Debug)]
pub struct PinGrid<'a> {
    pins: &'a [PinRecord],
    layout: &'a BoardLayout,
    boards: Vec<BoardKey>,
    /// `slots[board][offset(component) + pin - 1]` -> record index.
    slots: Vec<Vec<Option<u32>>>,
    offsets: Vec<usize>,
}

impl<'a> PinGrid<'a> {
    pub fn new(pins: &'a [PinRecord], layout: &'a BoardLayout) -> Result<Self> {
        if pins.is_empty() {
            return Err(Error::Data("no pin records".into()));
        }
        let mut offsets = Vec::with_capacity(layout.component_count());
        let mut total = 0usize;
        let mut position = HashMap::with_capacity(layout.component_count());
        for (i, (id, n)) in layout.components().iter().enumerate() {
            offsets.push(total);
            position.insert(id.as_str(), i);
            total += *n as usize;
        }
        let mut board_index: BTreeMap<BoardKey, usize> = BTreeMap::new();
        for p in pins {
            board_index.entry(p.key.board()).or_insert(0);
        }
        let boards: Vec<BoardKey> = board_index.keys().copied().collect();
        for (i, slot) in board_index.values_mut().enumerate() {
            *slot = i;
        }
        let mut slots = vec![vec![None; total]; boards.len()];
        for (ri, p) in pins.iter().enumerate() {
            let board = p.key.board();
            let ci = *position.get(p.key.component_id.as_str()).ok_or_else(|| {
                Error::Structural {
                    panel_id: board.panel_id,
                    figure_id: board.figure_id,
                    message: format!("component {} is not in the layout", p.key.component_id),
                }
            })?;
            let n = layout.components()[ci].1;
            if p.key.pin_number == 0 || p.key.pin_number > n {
                return Err(Error::Structural {
                    panel_id: board.panel_id,
                    figure_id: board.figure_id,
                    message: format!(
                        "component {} has pin {} but the layout lists {n} pins",
                        p.key.component_id, p.key.pin_number
                    ),
                });
            }
            let slot = &mut slots[board_index[&board]][offsets[ci] + p.key.pin_number as usize - 1];
            if slot.is_some() {
                return Err(Error::Structural {
                    panel_id: board.panel_id,
                    figure_id: board.figure_id,
                    message: format!("duplicate record for pin {}", p.key),
                });
            }
            *slot = Some(ri as u32);
        }
        Ok(PinGrid {
            pins,
            layout,
            boards,
            slots,
            offsets,
        })
    }

    pub fn boards(&self) -> &[BoardKey] {
        &self.boards
    }

    pub fn layout(&self) -> &BoardLayout {
        self.layout
    }

    fn component_pins(&self, board: usize, ci: usize) -> Result<Vec<&'a PinRecord>> {
        let (id, n) = &self.layout.components()[ci];
        let start = self.offsets[ci];
        (0..*n as usize)
            .map(|k| {
                self.slots[board][start + k]
                    .map(|ri| &self.pins[ri as usize])
                    .ok_or_else(|| {
                        let b = self.boards[board];
                        Error::Structural {
                            panel_id: b.panel_id,
                            figure_id: b.figure_id,
                            message: format!("component {id} is missing pin {}", k + 1),
                        }
                    })
            })
            .collect()
    }

    fn position(&self, component_id: &str) -> Result<usize> {
        self.layout
            .position(component_id)
            .ok_or_else(|| Error::Data(format!("component {component_id} is not in the layout")))
    }

    /// One row per board: the component's pin vectors side by side in
    /// ascending pin order.
    pub fn component_table(&self, component_id: &str, encoding: &EncodingConfig) -> Result<FeatureTable> {
        let ci = self.position(component_id)?;
        let encoder = PinEncoder::new(encoding);
        let n = self.layout.components()[ci].1 as usize;
        let pw = encoder.width();
        let names = pinned_names(&encoder, n, "");
        let width = n * pw;
        let mut values = vec![0.0; self.boards.len() * width];
        values
            .par_chunks_mut(width)
            .enumerate()
            .try_for_each(|(b, row)| -> Result<()> {
                for (k, pin) in self.component_pins(b, ci)?.into_iter().enumerate() {
                    encoder.encode_into(pin, &mut row[k * pw..(k + 1) * pw])?;
                }
                Ok(())
            })?;
        let keys = self
            .boards
            .iter()
            .map(|b| ComponentKey {
                panel_id: b.panel_id,
                figure_id: b.figure_id,
                component_id: component_id.to_string(),
            })
            .collect();
        FeatureTable::new(names, values, RowKeys::Component(keys))
    }

    /// One row per board holding every pin of every component, components in
    /// layout order.
    pub fn board_table(&self, encoding: &EncodingConfig) -> Result<FeatureTable> {
        let encoder = PinEncoder::new(encoding);
        let pw = encoder.width();
        let mut names = Vec::new();
        for (id, n) in self.layout.components() {
            names.extend(pinned_names(&encoder, *n as usize, &format!("{id}/")));
        }
        let width = names.len();
        let mut values = vec![0.0; self.boards.len() * width];
        values
            .par_chunks_mut(width)
            .enumerate()
            .try_for_each(|(b, row)| -> Result<()> {
                let mut at = 0;
                for ci in 0..self.layout.component_count() {
                    for pin in self.component_pins(b, ci)? {
                        encoder.encode_into(pin, &mut row[at..at + pw])?;
                        at += pw;
                    }
                }
                Ok(())
            })?;
        FeatureTable::new(names, values, RowKeys::Board(self.boards.clone()))
    }

    /// One row per (board, component) across several components, padded to
    /// the widest component with zeros and tagged with a `PinCount` column.
    pub fn combined_component_table(
        &self,
        components: &[String],
        encoding: &EncodingConfig,
    ) -> Result<FeatureTable> {
        let encoder = PinEncoder::new(encoding);
        let pw = encoder.width();
        let positions: Vec<usize> = components
            .iter()
            .map(|c| self.position(c))
            .collect::<Result<_>>()?;
        let max_pins = positions
            .iter()
            .map(|&ci| self.layout.components()[ci].1 as usize)
            .max()
            .ok_or_else(|| Error::Config("no components selected".into()))?;
        let mut names = pinned_names(&encoder, max_pins, "");
        names.push("PinCount".into());
        let width = names.len();
        let rows = self.boards.len() * positions.len();
        let mut values = vec![0.0; rows * width];
        values
            .par_chunks_mut(width)
            .enumerate()
            .try_for_each(|(r, row)| -> Result<()> {
                let (b, j) = (r / positions.len(), r % positions.len());
                let pins = self.component_pins(b, positions[j])?;
                row[width - 1] = pins.len() as f64;
                for (k, pin) in pins.into_iter().enumerate() {
                    encoder.encode_into(pin, &mut row[k * pw..(k + 1) * pw])?;
                }
                Ok(())
            })?;
        let mut keys = Vec::with_capacity(rows);
        for b in &self.boards {
            for c in components {
                keys.push(ComponentKey {
                    panel_id: b.panel_id,
                    figure_id: b.figure_id,
                    component_id: c.clone(),
                });
            }
        }
        FeatureTable::new(names, values, RowKeys::Component(keys))
    }
}

fn pinned_names(encoder: &PinEncoder, pins: usize, prefix: &str) -> Vec<String> {
    let mut names = Vec::with_capacity(pins * encoder.width());
    for k in 1..=pins {
        for c in encoder.column_names() {
            names.push(format!("{prefix}{c}@pin{k}"));
        }
    }
    names
}

/// Layout implied by the data: components in order of first appearance, each
/// with its highest pin number. For files whose design map is not known.
pub fn infer_layout(pins: &[PinRecord], figures_per_panel: u32) -> Result<BoardLayout> {
    let mut order: Vec<(String, u32)> = Vec::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for p in pins {
        match seen.get(p.key.component_id.as_str()) {
            Some(&i) => order[i].1 = order[i].1.max(p.key.pin_number),
            None => {
                seen.insert(&p.key.component_id, order.len());
                order.push((p.key.component_id.clone(), p.key.pin_number));
            }
        }
    }
    BoardLayout::new(order, figures_per_panel)
}

/// One row per pin record, in input order.
pub fn build_pin_table(pins: &[PinRecord], encoding: &EncodingConfig) -> Result<FeatureTable> {
    if pins.is_empty() {
        return Err(Error::Data("no pin records".into()));
    }
    let encoder = PinEncoder::new(encoding);
    let w = encoder.width();
    let mut values = vec![0.0; pins.len() * w];
    values
        .par_chunks_mut(w)
        .zip(pins.par_iter())
        .try_for_each(|(row, pin)| encoder.encode_into(pin, row))?;
    let keys = pins.iter().map(|p| p.key.clone()).collect();
    FeatureTable::new(encoder.column_names().to_vec(), values, RowKeys::Pin(keys))
}

pub fn build_component_table(
    pins: &[PinRecord],
    component_id: &str,
    layout: &BoardLayout,
    encoding: &EncodingConfig,
) -> Result<FeatureTable> {
    PinGrid::new(pins, layout)?.component_table(component_id, encoding)
}

pub fn build_board_table(
    pins: &[PinRecord],
    layout: &BoardLayout,
    encoding: &EncodingConfig,
) -> Result<FeatureTable> {
    PinGrid::new(pins, layout)?.board_table(encoding)
}

/// Bookkeeping from a label join.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinReport {
    pub aoi_records: usize,
    /// AOI rows that matched no table row.
    pub aoi_unmatched: usize,
    /// AOI rows ignored at pin level because their pin number is blank.
    pub aoi_missing_pin: usize,
    /// Operator-Bad rows without a repair label (C3 only).
    pub bad_without_repair: usize,
}

/// Join key of a row at the table's granularity.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum JoinKey {
    Pin(PinKey),
    Component(ComponentKey),
    Board(BoardKey),
}

fn row_join_keys(table: &FeatureTable) -> Vec<JoinKey> {
    match table.row_keys() {
        RowKeys::Pin(k) => k.iter().cloned().map(JoinKey::Pin).collect(),
        RowKeys::Component(k) => k.iter().cloned().map(JoinKey::Component).collect(),
        RowKeys::Board(k) => k.iter().copied().map(JoinKey::Board).collect(),
    }
}

/// Key an AOI record joins on at this table's level, or `None` when it cannot
/// take part (blank pin at pin level, other component at board level).
fn aoi_join_key(table: &FeatureTable, aoi: &AoiRecord) -> Result<Option<JoinKey>> {
    Ok(match table.level() {
        Level::Pin => aoi.pin().map(JoinKey::Pin),
        Level::Component => Some(JoinKey::Component(aoi.component())),
        Level::Board => {
            let target = table.target_component().ok_or_else(|| {
                Error::Config("board-level labels need a target component".into())
            })?;
            (aoi.component_id == target).then(|| JoinKey::Board(aoi.board()))
        }
    })
}

/// Groups AOI records by join key, counting the ones that cannot join.
fn group_aoi<'r>(
    table: &FeatureTable,
    aoi: impl Iterator<Item = &'r AoiRecord>,
    report: &mut JoinReport,
) -> Result<HashMap<JoinKey, Vec<&'r AoiRecord>>> {
    let mut groups: HashMap<JoinKey, Vec<&AoiRecord>> = HashMap::new();
    for a in aoi {
        report.aoi_records += 1;
        match aoi_join_key(table, a)? {
            Some(k) => groups.entry(k).or_default().push(a),
            None if table.level() == Level::Pin => report.aoi_missing_pin += 1,
            None => {}
        }
    }
    Ok(groups)
}

fn count_unmatched(
    groups: &HashMap<JoinKey, Vec<&AoiRecord>>,
    rows: &[JoinKey],
    report: &mut JoinReport,
) {
    let present: HashSet<&JoinKey> = rows.iter().collect();
    report.aoi_unmatched += groups
        .iter()
        .filter(|(k, _)| !present.contains(k))
        .map(|(_, v)| v.len())
        .sum::<usize>();
}

/// Classification 1 (left join): every row kept, target 1 when an AOI record
/// matches at the table's granularity.
pub fn attach_labels_c1(table: &FeatureTable, aoi: &[AoiRecord]) -> Result<(FeatureTable, JoinReport)> {
    let mut report = JoinReport::default();
    let groups = group_aoi(table, aoi.iter(), &mut report)?;
    let rows = row_join_keys(table);
    count_unmatched(&groups, &rows, &mut report);
    let target = rows.iter().map(|k| u8::from(groups.contains_key(k))).collect();
    Ok((table.clone().with_target(target)?, report))
}

fn machine_label_names(vocab: &Vocabulary) -> Vec<String> {
    vocab.tokens().iter().map(|t| format!("AOI={t}")).collect()
}

/// Inner join shared by classifications 2 and 3: keeps matched rows, appends
/// multi-hot machine labels (plus extra columns) and sets target to the max of
/// the per-record targets.
fn inner_join(
    table: &FeatureTable,
    groups: &HashMap<JoinKey, Vec<&AoiRecord>>,
    vocab: &Vocabulary,
    extra: &[(&str, fn(&AoiRecord) -> f64)],
    target_of: fn(&AoiRecord) -> u8,
) -> Result<FeatureTable> {
    let rows = row_join_keys(table);
    let kept: Vec<usize> = (0..rows.len()).filter(|&i| groups.contains_key(&rows[i])).collect();
    let mut names = machine_label_names(vocab);
    names.extend(extra.iter().map(|(n, _)| n.to_string()));
    let add = names.len();
    let mut block = vec![0.0; kept.len() * add];
    let mut target = Vec::with_capacity(kept.len());
    for (j, &i) in kept.iter().enumerate() {
        let cells = &mut block[j * add..(j + 1) * add];
        let mut y = 0u8;
        for a in &groups[&rows[i]] {
            if let Some(s) = vocab.slot(&a.machine_label) {
                cells[s] = 1.0;
            }
            for (e, (_, f)) in extra.iter().enumerate() {
                let slot = &mut cells[vocab.len() + e];
                *slot = f64::max(*slot, f(a));
            }
            y = y.max(target_of(a));
        }
        target.push(y);
    }
    table
        .select_rows(&kept)
        .append_columns(&names, &block)?
        .with_target(target)
}

/// Classification 2 (inner join): rows flagged by AOI, target = operator Bad.
pub fn attach_labels_c2(
    table: &FeatureTable,
    aoi: &[AoiRecord],
    encoding: &EncodingConfig,
) -> Result<(FeatureTable, JoinReport)> {
    let mut report = JoinReport::default();
    let groups = group_aoi(table, aoi.iter(), &mut report)?;
    count_unmatched(&groups, &row_join_keys(table), &mut report);
    let out = inner_join(
        table,
        &groups,
        &encoding.machine_label_vocabulary,
        &[],
        |a| u8::from(a.operator_label == OperatorLabel::Bad),
    )?;
    Ok((out, report))
}

/// Classification 3 (inner join on operator-Bad records): target = not
/// repairable; machine and operator labels become features.
pub fn attach_labels_c3(
    table: &FeatureTable,
    aoi: &[AoiRecord],
    encoding: &EncodingConfig,
) -> Result<(FeatureTable, JoinReport)> {
    let mut report = JoinReport::default();
    let bad: Vec<&AoiRecord> = aoi
        .iter()
        .filter(|a| a.operator_label == OperatorLabel::Bad)
        .collect();
    report.bad_without_repair = bad.iter().filter(|a| a.repair_label.is_none()).count();
    let usable = bad.into_iter().filter(|a| a.repair_label.is_some());
    let groups = group_aoi(table, usable, &mut report)?;
    report.aoi_records = aoi.len();
    count_unmatched(&groups, &row_join_keys(table), &mut report);
    let out = inner_join(
        table,
        &groups,
        &encoding.machine_label_vocabulary,
        &[("OperatorLabel", |a| {
            f64::from(u8::from(a.operator_label == OperatorLabel::Bad))
        })],
        |a| u8::from(a.repair_label == Some(RepairLabel::NotPossibleToRepair)),
    )?;
    Ok((out, report))
}

/// Attaches the labels of `task`.
pub fn attach_labels(
    task: ClassificationTask,
    table: &FeatureTable,
    aoi: &[AoiRecord],
    encoding: &EncodingConfig,
) -> Result<(FeatureTable, JoinReport)> {
    match task {
        ClassificationTask::C1AoiDefect => attach_labels_c1(table, aoi),
        ClassificationTask::C2OperatorLabel => attach_labels_c2(table, aoi, encoding),
        ClassificationTask::C3RepairLabel => attach_labels_c3(table, aoi, encoding),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splitting unit of each row: the row itself for pin tables, its board
/// otherwise, so no board straddles train and test.
fn split_groups(table: &FeatureTable) -> Vec<Vec<usize>> {
    match table.level() {
        Level::Pin => (0..table.n_rows()).map(|i| vec![i]).collect(),
        Level::Component | Level::Board => {
            let mut index: HashMap<BoardKey, usize> = HashMap::new();
            let mut groups: Vec<Vec<usize>> = Vec::new();
            for i in 0..table.n_rows() {
                let b = table.row_keys().board(i);
                let g = *index.entry(b).or_insert_with(|| {
                    groups.push(Vec::new());
                    groups.len() - 1
                });
                groups[g].push(i);
            }
            groups
        }
    }
}

/// Partitions rows into `k` folds of near-equal size.
///
/// Groups are shuffled with `seed` and dealt round-robin; in stratified mode
/// positive groups are dealt first so that each fold receives its share of
/// positives to within one.
pub fn kfold_split(table: &FeatureTable, k: usize, seed: u64, stratified: bool) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("k = {k}; need at least 2 folds")));
    }
    let groups = split_groups(table);
    if groups.len() < k {
        return Err(Error::Config(format!(
            "{} split groups cannot fill {k} folds",
            groups.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = if stratified {
        let target = table
            .target()
            .ok_or_else(|| Error::Config("stratified split needs a target".into()))?;
        let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
            (0..groups.len()).partition(|&g| groups[g].iter().any(|&i| target[i] == 1));
        if pos.len() < k {
            return Err(Error::Config(format!(
                "only {} positive groups for {k} stratified folds; use unstratified splitting",
                pos.len()
            )));
        }
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        pos.into_iter().chain(neg).collect()
    } else {
        let mut all: Vec<usize> = (0..groups.len()).collect();
        all.shuffle(&mut rng);
        all
    };
    let mut assignment = vec![0usize; table.n_rows()];
    for (slot, &g) in order.iter().enumerate() {
        for &i in &groups[g] {
            assignment[i] = slot % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..table.n_rows()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}
