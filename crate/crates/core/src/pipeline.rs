//! End-to-end runs: feature tables for every requested level, one
//! cross-validated model per dataset, and verdict fusion at component
//! granularity.
//!
//! All levels share one board-level fold partition, so every
//! (board, component) pair is scored by models that never saw its board.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage, StageExt};
use crate::eval::{self, ConfusionCounts, CvConfig, CvOutcome, F1Score, RocCurve};
use crate::features::{self, ClassificationTask, Fold, JoinReport, PinGrid};
use crate::gbdt::{self, TrainConfig, DEFAULT_TOP_K};
use crate::ingest::{self, IngestReport, SchemaConfig};
use crate::model::{
    AoiRecord, BoardKey, BoardLayout, ComponentKey, EncodingConfig, OperatorLabel, PinKey,
    PinRecord, RepairLabel,
};
use crate::table::{FeatureTable, Level, RowKeys};

/// Boards per panel assumed when the layout is inferred from the data.
pub const INFERRED_FIGURES_PER_PANEL: u32 = 8;

/// How verdicts of several levels combine into one.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FusionRule {
    /// Defective if any member says so.
    #[default]
    AnyPositive,
    /// Defective if at least half of the members say so (ties count as
    /// defective).
    MajorityVote,
    /// Defective if the mean member probability reaches the threshold.
    MeanProbability(f64),
}

impl FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "any-positive" | "any" => return Ok(FusionRule::AnyPositive),
            "majority-vote" | "majority" => return Ok(FusionRule::MajorityVote),
            _ => {}
        }
        if let Some(t) = s.strip_prefix("mean-probability:").or(s.strip_prefix("mean:")) {
            let t: f64 = t
                .parse()
                .map_err(|_| Error::Config(format!("bad mean-probability threshold {t:?}")))?;
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("mean-probability threshold {t} outside [0, 1]")));
            }
            return Ok(FusionRule::MeanProbability(t));
        }
        Err(Error::Config(format!(
            "unknown fusion rule {s:?}; expected any-positive, majority-vote or mean-probability:<t>"
        )))
    }
}

impl fmt::Display for FusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionRule::AnyPositive => f.write_str("any-positive"),
            FusionRule::MajorityVote => f.write_str("majority-vote"),
            FusionRule::MeanProbability(t) => write!(f, "mean-probability:{t}"),
        }
    }
}

impl TryFrom<String> for FusionRule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FusionRule> for String {
    fn from(r: FusionRule) -> String {
        r.to_string()
    }
}

impl FusionRule {
    /// Fused (verdict, score) of the members that cover a key.
    pub fn combine(&self, members: &[(bool, f64)]) -> (bool, f64) {
        if members.is_empty() {
            return (false, 0.0);
        }
        let n = members.len() as f64;
        match *self {
            FusionRule::AnyPositive => (
                members.iter().any(|m| m.0),
                members.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max),
            ),
            FusionRule::MajorityVote => {
                let yes = members.iter().filter(|m| m.0).count();
                (2 * yes >= members.len(), yes as f64 / n)
            }
            FusionRule::MeanProbability(t) => {
                let mean = members.iter().map(|m| m.1).sum::<f64>() / n;
                (mean >= t, mean)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentMode {
    /// One model per layout component.
    #[default]
    PerComponent,
    /// One model over every component, padded to the widest.
    Combined,
}

impl ComponentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ComponentMode::PerComponent => "per-component",
            ComponentMode::Combined => "combined",
        }
    }
}

impl FromStr for ComponentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "per-component" => Ok(ComponentMode::PerComponent),
            "combined" => Ok(ComponentMode::Combined),
            other => Err(Error::Config(format!(
                "unknown component mode {other:?}; expected per-component or combined"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: ClassificationTask,
    pub levels: Vec<Level>,
    pub component_mode: ComponentMode,
    /// Board-level models are trained for this many components, taken by
    /// descending defect count. `None` trains one for every defective one.
    pub top_n_components: Option<usize>,
    pub train: TrainConfig,
    pub folds: usize,
    pub stratified: bool,
    pub fusion: FusionRule,
    /// Seeds the fold partition.
    pub seed: u64,
    /// Board level is off for c2/c3 because few boards carry those labels.
    pub allow_board_c2c3: bool,
    pub encoding: EncodingConfig,
    /// Design map; inferred from the SPI records when absent.
    pub layout: Option<BoardLayout>,
    pub schema: SchemaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: ClassificationTask::C1AoiDefect,
            levels: vec![Level::Pin],
            component_mode: ComponentMode::PerComponent,
            top_n_components: Some(35),
            train: TrainConfig::default(),
            folds: 5,
            stratified: true,
            fusion: FusionRule::AnyPositive,
            seed: 0,
            allow_board_c2c3: false,
            encoding: EncodingConfig::default(),
            layout: None,
            schema: SchemaConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("no levels selected".into()));
        }
        let distinct: HashSet<_> = self.levels.iter().collect();
        if distinct.len() != self.levels.len() {
            return Err(Error::Config("a level is listed twice".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds = {}; need at least 2", self.folds)));
        }
        if self.top_n_components == Some(0) {
            return Err(Error::Config("top_n_components must be positive".into()));
        }
        if let FusionRule::MeanProbability(t) = self.fusion {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("mean-probability threshold {t} outside [0, 1]")));
            }
        }
        if self.levels.contains(&Level::Board) && self.task != ClassificationTask::C1AoiDefect {
            if !self.allow_board_c2c3 {
                return Err(Error::Config(format!(
                    "board level is disabled for task {}; set allow_board_c2c3 to enable it",
                    self.task
                )));
            }
            log::warn!("board level enabled for task {}: few boards carry this label", self.task);
        }
        self.train.validate()
    }

    /// Levels in pin, component, board order.
    fn sorted_levels(&self) -> Vec<Level> {
        let mut l = self.levels.clone();
        l.sort();
        l
    }
}

/// Component ids by descending AOI record count, ties by id.
pub fn rank_components_by_defects(aoi: &[AoiRecord]) -> Result<Vec<String>> {
    if aoi.is_empty() {
        return Err(Error::Data("no AOI records to rank components by".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for a in aoi {
        *counts.entry(a.component_id.as_str()).or_insert(0) += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked.into_iter().map(|(c, _)| c.to_string()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftedVerdict {
    pub positive: bool,
    pub probability: f64,
}

/// Component verdicts from pin verdicts: positive if any pin is, with the
/// largest pin probability.
pub fn lift_pin_verdicts<'a>(
    pins: impl IntoIterator<Item = (&'a PinKey, bool, f64)>,
) -> BTreeMap<ComponentKey, LiftedVerdict> {
    let mut out: BTreeMap<ComponentKey, LiftedVerdict> = BTreeMap::new();
    for (key, positive, probability) in pins {
        out.entry(key.component())
            .and_modify(|v| {
                v.positive |= positive;
                v.probability = v.probability.max(probability);
            })
            .or_insert(LiftedVerdict {
                positive,
                probability,
            });
    }
    out
}

/// Board-to-fold assignment shared by every level of a run.
#[derive(Debug, Clone)]
pub struct BoardFolds {
    fold_of: HashMap<BoardKey, usize>,
    k: usize,
}

impl BoardFolds {
    /// Splits `boards` into `k` folds, stratified on `positive` when asked
    /// and possible.
    pub fn new(boards: &[BoardKey], positive: &HashSet<BoardKey>, k: usize, seed: u64, stratified: bool) -> Result<Self> {
        let target = boards.iter().map(|b| u8::from(positive.contains(b))).collect();
        let table = FeatureTable::new(Vec::new(), Vec::new(), RowKeys::Board(boards.to_vec()))?
            .with_target(target)?;
        let split = match features::kfold_split(&table, k, seed, stratified) {
            Ok(s) => s,
            Err(e) if stratified => {
                log::warn!("falling back to unstratified folds: {e}");
                features::kfold_split(&table, k, seed, false)?
            }
            Err(e) => return Err(e),
        };
        let mut fold_of = HashMap::with_capacity(boards.len());
        for (f, fold) in split.iter().enumerate() {
            for &i in &fold.test {
                fold_of.insert(boards[i], f);
            }
        }
        Ok(BoardFolds { fold_of, k })
    }

    pub fn fold(&self, board: &BoardKey) -> Option<usize> {
        self.fold_of.get(board).copied()
    }

    /// The partition restricted to a table's rows.
    pub fn folds_for(&self, table: &FeatureTable) -> Result<Vec<Fold>> {
        let mut folds = vec![
            Fold {
                train: Vec::new(),
                test: Vec::new()
            };
            self.k
        ];
        for r in 0..table.n_rows() {
            let b = table.row_keys().board(r);
            let f = self
                .fold(&b)
                .ok_or_else(|| Error::Data(format!("board {b} has no fold")))?;
            for (g, fold) in folds.iter_mut().enumerate() {
                if g == f {
                    fold.test.push(r);
                } else {
                    fold.train.push(r);
                }
            }
        }
        Ok(folds)
    }
}

/// One cross-validated dataset of a run.
#[derive(Debug, Clone)]
pub struct ModelResult {
    pub name: String,
    pub level: Level,
    /// Component the model covers, or `all`.
    pub components: String,
    pub rows: usize,
    pub columns: usize,
    pub positives: usize,
    pub join: JoinReport,
    pub outcome: CvOutcome,
    row_keys: RowKeys,
    target_component: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedModel {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldFusion {
    pub fold: usize,
    pub counts: ConfusionCounts,
    pub recall: f64,
    /// Recall of each member level on the same rows.
    pub member_recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionReport {
    pub rule: FusionRule,
    pub members: Vec<Level>,
    /// (board, component) pairs that carry a label for the task.
    pub rows: usize,
    pub positives: usize,
    pub folds: Vec<FoldFusion>,
    pub counts: ConfusionCounts,
    pub f1: F1Score,
    pub macro_f1: f64,
    pub recall: f64,
    pub auc: Option<f64>,
    pub member_counts: Vec<ConfusionCounts>,
    pub roc: Option<RocCurve>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub spi_ingest: Option<IngestReport>,
    pub aoi_ingest: Option<IngestReport>,
    pub pin_records: usize,
    pub aoi_records: usize,
    pub boards: usize,
    pub models: Vec<ModelResult>,
    pub skipped: Vec<SkippedModel>,
    pub fusion: Option<FusionReport>,
    /// Wall-clock time per stage; kept out of the text report so that it
    /// stays reproducible.
    pub timing: Vec<(String, Duration)>,
}

#[derive(Debug, Clone)]
enum Job {
    Pin,
    Component(String),
    Combined,
    Board(String),
}

impl Job {
    fn name(&self) -> String {
        match self {
            Job::Pin => "pin".into(),
            Job::Component(c) => format!("component/{c}"),
            Job::Combined => "component/combined".into(),
            Job::Board(c) => format!("board/{c}"),
        }
    }

    fn level(&self) -> Level {
        match self {
            Job::Pin => Level::Pin,
            Job::Component(_) | Job::Combined => Level::Component,
            Job::Board(_) => Level::Board,
        }
    }

    fn components(&self) -> &str {
        match self {
            Job::Pin | Job::Combined => "all",
            Job::Component(c) | Job::Board(c) => c,
        }
    }
}

/// Reads both files and runs the pipeline on them.
pub fn run(config: &RunConfig, spi_path: &Path, aoi_path: &Path) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let (pins, spi_report) = ingest::read_spi(spi_path, &config.schema).stage(Stage::Ingest)?;
    let (aoi, aoi_report) = ingest::read_aoi(aoi_path, &config.schema).stage(Stage::Ingest)?;
    let ingest_time = start.elapsed();
    let mut report = run_records(config, &pins, &aoi)?;
    report.spi_ingest = Some(spi_report);
    report.aoi_ingest = Some(aoi_report);
    report.timing.insert(0, ("ingest".into(), ingest_time));
    Ok(report)
}

/// Runs the pipeline on records already in memory.
pub fn run_records(config: &RunConfig, pins: &[PinRecord], aoi: &[AoiRecord]) -> Result<RunReport> {
    config.validate()?;
    let mut timing = Vec::new();
    let clock = Instant::now();
    let layout = match &config.layout {
        Some(l) => l.clone(),
        None => features::infer_layout(pins, INFERRED_FIGURES_PER_PANEL).stage(Stage::Features)?,
    };
    let levels = config.sorted_levels();
    let grid = PinGrid::new(pins, &layout).stage(Stage::Features)?;
    let positive_boards: HashSet<BoardKey> = aoi
        .iter()
        .filter(|a| task_positive(config.task, a) == Some(true))
        .map(AoiRecord::board)
        .collect();
    let board_folds = BoardFolds::new(
        grid.boards(),
        &positive_boards,
        config.folds,
        config.seed,
        config.stratified,
    )
    .stage(Stage::Features)?;

    let mut jobs = Vec::new();
    for level in &levels {
        match level {
            Level::Pin => jobs.push(Job::Pin),
            Level::Component => match config.component_mode {
                ComponentMode::PerComponent => jobs.extend(
                    layout
                        .components()
                        .iter()
                        .map(|(c, _)| Job::Component(c.clone())),
                ),
                ComponentMode::Combined => jobs.push(Job::Combined),
            },
            Level::Board => {
                let ranked = rank_components_by_defects(aoi).stage(Stage::Features)?;
                let ranked = ranked.into_iter().filter(|c| layout.position(c).is_some());
                let take = config.top_n_components.unwrap_or(usize::MAX);
                jobs.extend(ranked.take(take).map(Job::Board));
            }
        }
    }
    let board_table = if levels.contains(&Level::Board) {
        Some(grid.board_table(&config.encoding).stage(Stage::Features)?)
    } else {
        None
    };
    timing.push(("prepare".to_string(), clock.elapsed()));

    let clock = Instant::now();
    let done = AtomicUsize::new(0);
    let total = jobs.len();
    let outcomes: Vec<std::result::Result<ModelResult, SkippedModel>> = jobs
        .par_iter()
        .map(|job| {
            let out = run_job(config, job, pins, aoi, &grid, board_table.as_ref(), &board_folds);
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            log::info!("model {n}/{total} ({}) finished", job.name());
            out
        })
        .collect::<Result<_>>()?;
    timing.push(("training".to_string(), clock.elapsed()));

    let mut models = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Ok(m) => models.push(m),
            Err(s) => {
                log::info!("skipped {}: {}", s.name, s.reason);
                skipped.push(s);
            }
        }
    }
    if !skipped.is_empty() {
        log::warn!("{} of {total} models skipped for lack of both classes; see the report", skipped.len());
    }

    let clock = Instant::now();
    let fusion = if models.is_empty() {
        None
    } else {
        Some(fuse(config, &levels, &models, aoi, &grid, &layout, &board_folds).stage(Stage::Fusion)?)
    };
    timing.push(("fusion".to_string(), clock.elapsed()));

    Ok(RunReport {
        config: config.clone(),
        spi_ingest: None,
        aoi_ingest: None,
        pin_records: pins.len(),
        aoi_records: aoi.len(),
        boards: grid.boards().len(),
        models,
        skipped,
        fusion,
        timing,
    })
}

/// Whether an AOI record is a positive of the task at its key, or `None`
/// when the record does not take part in the task.
fn task_positive(task: ClassificationTask, a: &AoiRecord) -> Option<bool> {
    match task {
        ClassificationTask::C1AoiDefect => Some(true),
        ClassificationTask::C2OperatorLabel => Some(a.operator_label == OperatorLabel::Bad),
        ClassificationTask::C3RepairLabel => match (a.operator_label, a.repair_label) {
            (OperatorLabel::Bad, Some(r)) => Some(r == RepairLabel::NotPossibleToRepair),
            _ => None,
        },
    }
}

fn run_job(
    config: &RunConfig,
    job: &Job,
    pins: &[PinRecord],
    aoi: &[AoiRecord],
    grid: &PinGrid<'_>,
    board_table: Option<&FeatureTable>,
    board_folds: &BoardFolds,
) -> Result<std::result::Result<ModelResult, SkippedModel>> {
    let name = job.name();
    let skip = |reason: String| {
        Ok(Err(SkippedModel {
            name: name.clone(),
            reason,
        }))
    };
    let enc = &config.encoding;
    let table = match job {
        Job::Pin => features::build_pin_table(pins, enc),
        Job::Component(c) => grid.component_table(c, enc),
        Job::Combined => {
            let all: Vec<String> = grid.layout().components().iter().map(|(c, _)| c.clone()).collect();
            grid.combined_component_table(&all, enc)
        }
        Job::Board(c) => Ok(board_table
            .expect("board table built for board jobs")
            .clone()
            .with_target_component(c.clone())),
    }
    .stage(Stage::Features)?;
    let (table, join) = features::attach_labels(config.task, &table, aoi, enc).stage(Stage::Labels)?;
    let target = table.target().expect("labelled table");
    let positives = table.positives();
    if table.n_rows() == 0 {
        return skip("no labelled rows".into());
    }
    if positives == 0 || positives == target.len() {
        return skip(format!("single class ({positives} of {} rows positive)", target.len()));
    }
    let folds = board_folds.folds_for(&table).stage(Stage::Training)?;
    for (i, f) in folds.iter().enumerate() {
        let pos = f.train.iter().filter(|&&r| target[r] == 1).count();
        if pos == 0 || pos == f.train.len() {
            return skip(format!("training folds of fold {i} hold a single class"));
        }
    }
    let cv = CvConfig {
        folds: config.folds,
        seed: config.seed,
        stratified: config.stratified,
    };
    let outcome = eval::cross_validate_folds(&table, &config.train, &folds, &cv).stage(Stage::Training)?;
    Ok(Ok(ModelResult {
        name,
        level: job.level(),
        components: job.components().to_string(),
        rows: table.n_rows(),
        columns: table.n_cols(),
        positives,
        join,
        outcome,
        row_keys: table.row_keys().clone(),
        target_component: table.target_component().map(str::to_string),
    }))
}

/// Component key of each row of a component or board table.
fn component_keys(keys: &RowKeys, target_component: Option<&str>) -> Vec<ComponentKey> {
    match keys {
        RowKeys::Pin(k) => k.iter().map(PinKey::component).collect(),
        RowKeys::Component(k) => k.clone(),
        RowKeys::Board(k) => k
            .iter()
            .map(|b| ComponentKey {
                panel_id: b.panel_id,
                figure_id: b.figure_id,
                component_id: target_component.unwrap_or_default().to_string(),
            })
            .collect(),
    }
}

fn merge_verdicts(
    into: &mut BTreeMap<ComponentKey, LiftedVerdict>,
    from: impl IntoIterator<Item = (ComponentKey, LiftedVerdict)>,
) {
    for (key, v) in from {
        into.entry(key)
            .and_modify(|e| {
                e.positive |= v.positive;
                e.probability = e.probability.max(v.probability);
            })
            .or_insert(v);
    }
}

/// Fuses the member levels over every labelled (board, component) pair.
fn fuse(
    config: &RunConfig,
    levels: &[Level],
    models: &[ModelResult],
    aoi: &[AoiRecord],
    grid: &PinGrid<'_>,
    layout: &BoardLayout,
    board_folds: &BoardFolds,
) -> Result<FusionReport> {
    // Ground truth per pair.
    let mut truth: BTreeMap<ComponentKey, bool> = BTreeMap::new();
    if config.task == ClassificationTask::C1AoiDefect {
        for b in grid.boards() {
            for (c, _) in layout.components() {
                truth.insert(
                    ComponentKey {
                        panel_id: b.panel_id,
                        figure_id: b.figure_id,
                        component_id: c.clone(),
                    },
                    false,
                );
            }
        }
    }
    for a in aoi {
        if let Some(p) = task_positive(config.task, a) {
            let key = a.component();
            if config.task == ClassificationTask::C1AoiDefect && !truth.contains_key(&key) {
                continue;
            }
            *truth.entry(key).or_insert(false) |= p;
        }
    }

    let members: Vec<Level> = levels
        .iter()
        .copied()
        .filter(|l| models.iter().any(|m| m.level == *l))
        .collect();
    // Member verdicts per pair; pin verdicts are lifted.
    let mut verdicts: Vec<BTreeMap<ComponentKey, LiftedVerdict>> = Vec::new();
    for level in &members {
        let mut map: BTreeMap<ComponentKey, LiftedVerdict> = BTreeMap::new();
        for m in models.iter().filter(|m| m.level == *level) {
            let (predicted, scores) = (&m.outcome.predicted, &m.outcome.scores);
            match &m.row_keys {
                RowKeys::Pin(pk) => {
                    let lifted = lift_pin_verdicts(
                        pk.iter().enumerate().map(|(r, k)| (k, predicted[r], scores[r])),
                    );
                    merge_verdicts(&mut map, lifted);
                }
                _ => merge_verdicts(
                    &mut map,
                    component_keys(&m.row_keys, m.target_component.as_deref())
                        .into_iter()
                        .enumerate()
                        .map(|(r, k)| {
                            (
                                k,
                                LiftedVerdict {
                                    positive: predicted[r],
                                    probability: scores[r],
                                },
                            )
                        }),
                ),
            }
        }
        verdicts.push(map);
    }

    let k = config.folds;
    let mut fold_counts = vec![ConfusionCounts::default(); k];
    let mut member_fold = vec![vec![ConfusionCounts::default(); members.len()]; k];
    let mut member_counts = vec![ConfusionCounts::default(); members.len()];
    let mut scores = Vec::with_capacity(truth.len());
    let mut targets = Vec::with_capacity(truth.len());
    let mut present = Vec::with_capacity(members.len());
    for (key, &y) in &truth {
        let f = board_folds
            .fold(&key.board())
            .ok_or_else(|| Error::Data(format!("board of {key} has no fold")))?;
        present.clear();
        for (j, map) in verdicts.iter().enumerate() {
            let v = map.get(key);
            if let Some(v) = v {
                present.push((v.positive, v.probability));
            }
            let predicted = v.is_some_and(|v| v.positive);
            let c = ConfusionCounts::from_predictions(&[predicted], &[u8::from(y)]);
            member_fold[f][j].add(&c);
            member_counts[j].add(&c);
        }
        let (verdict, score) = config.fusion.combine(&present);
        fold_counts[f].add(&ConfusionCounts::from_predictions(&[verdict], &[u8::from(y)]));
        scores.push(score);
        targets.push(u8::from(y));
    }
    let mut counts = ConfusionCounts::default();
    for c in &fold_counts {
        counts.add(c);
    }
    let folds = (0..k)
        .map(|f| FoldFusion {
            fold: f,
            counts: fold_counts[f],
            recall: fold_counts[f].recall(),
            member_recall: member_fold[f].iter().map(ConfusionCounts::recall).collect(),
        })
        .collect();
    let roc = eval::roc(&scores, &targets).ok();
    Ok(FusionReport {
        rule: config.fusion,
        members,
        rows: truth.len(),
        positives: targets.iter().filter(|&&y| y == 1).count(),
        folds,
        counts,
        f1: eval::f1(&counts),
        macro_f1: eval::macro_f1(&counts),
        recall: counts.recall(),
        auc: roc.as_ref().map(|r| r.auc),
        member_counts,
        roc,
    })
}

impl RunReport {
    pub fn models_trained(&self) -> usize {
        self.models.len()
    }

    pub fn model(&self, name: &str) -> Option<&ModelResult> {
        self.models.iter().find(|m| m.name == name)
    }

    /// One row per model: task, level, components and the headline metrics.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(
            "task,level,components,rows,positives,f1_pooled,f1_mean,macro_f1_pooled,macro_f1_mean,auc_pooled,auc_mean\n",
        );
        for m in &self.models {
            let r = &m.outcome.report;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
                self.config.task,
                m.level,
                m.components,
                m.rows,
                m.positives,
                r.pooled_f1.value,
                r.mean_f1,
                r.pooled_macro_f1,
                r.mean_macro_f1,
                eval::opt(r.pooled_auc),
                eval::opt(r.mean_auc),
            );
        }
        out
    }

    /// Per-fold fused and member recall.
    pub fn fusion_csv(&self) -> Option<String> {
        let fu = self.fusion.as_ref()?;
        let mut out = String::from("fold,tp,fp,tn,fn,fused_recall");
        for l in &fu.members {
            let _ = write!(out, ",{l}_recall");
        }
        out.push('\n');
        for f in &fu.folds {
            let c = &f.counts;
            let _ = write!(out, "{},{},{},{},{},{:.6}", f.fold, c.tp, c.fp, c.tn, c.fn_, f.recall);
            for r in &f.member_recall {
                let _ = write!(out, ",{r:.6}");
            }
            out.push('\n');
        }
        Some(out)
    }

    pub fn timing_text(&self) -> String {
        let mut out = String::new();
        for (stage, d) in &self.timing {
            let _ = writeln!(out, "{stage} = {:.3}", d.as_secs_f64());
        }
        let total: Duration = self.timing.iter().map(|(_, d)| *d).sum();
        let _ = writeln!(out, "total = {:.3}", total.as_secs_f64());
        out
    }

    /// Writes the report, metric tables, ROC curves and fold models under
    /// `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        let write = |rel: &str, text: &str| -> Result<()> {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        let result = (|| {
            write("report.txt", &self.to_string())?;
            write("timing.txt", &self.timing_text())?;
            write("metrics.csv", &self.metrics_csv())?;
            if let Some(csv) = self.fusion_csv() {
                write("fusion.csv", &csv)?;
            }
            if let Some(roc) = self.fusion.as_ref().and_then(|f| f.roc.as_ref()) {
                write("roc/fused.csv", &roc.to_csv())?;
            }
            for m in &self.models {
                let file = file_name(&m.name);
                if let Some(roc) = &m.outcome.roc {
                    write(&format!("roc/{file}.csv"), &roc.to_csv())?;
                }
                for (i, model) in m.outcome.models.iter().enumerate() {
                    write(&format!("models/{file}/fold{i}.model"), &model.to_text())?;
                }
            }
            Ok(())
        })();
        result.stage(Stage::Output)
    }
}

/// Model name as a file name: `/` and anything unusual become `_`.
fn file_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn write_ingest(f: &mut fmt::Formatter<'_>, label: &str, r: &IngestReport) -> fmt::Result {
    writeln!(f, "[ingest {label}]")?;
    writeln!(f, "rows_read = {}", r.rows_read)?;
    writeln!(f, "rows_kept = {}", r.rows_kept)?;
    writeln!(f, "rows_dropped_nan = {}", r.rows_dropped_nan)?;
    writeln!(f, "rows_dropped_malformed = {}", r.rows_dropped_malformed)
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(f, "[run]")?;
        writeln!(f, "task = {}", c.task)?;
        let levels: Vec<&str> = c.sorted_levels().iter().map(|l| l.as_str()).collect();
        writeln!(f, "levels = {}", levels.join(","))?;
        writeln!(f, "component_mode = {}", c.component_mode.as_str())?;
        match c.top_n_components {
            Some(n) => writeln!(f, "top_n_components = {n}")?,
            None => writeln!(f, "top_n_components = all")?,
        }
        writeln!(f, "fusion = {}", c.fusion)?;
        writeln!(f, "folds = {}", c.folds)?;
        writeln!(f, "stratified = {}", c.stratified)?;
        writeln!(f, "seed = {}", c.seed)?;
        writeln!(f, "split_method = {}", c.train.split_method.as_str())?;
        writeln!(f, "max_depth = {}", c.train.max_depth)?;
        writeln!(f, "num_rounds = {}", c.train.num_rounds)?;
        writeln!(f, "learning_rate = {:?}", c.train.learning_rate)?;
        writeln!(f, "pin_records = {}", self.pin_records)?;
        writeln!(f, "aoi_records = {}", self.aoi_records)?;
        writeln!(f, "boards = {}", self.boards)?;
        writeln!(f, "models_trained = {}", self.models.len())?;
        writeln!(f, "models_skipped = {}", self.skipped.len())?;
        if let Some(r) = &self.spi_ingest {
            write_ingest(f, "spi", r)?;
        }
        if let Some(r) = &self.aoi_ingest {
            write_ingest(f, "aoi", r)?;
        }
        for s in &self.skipped {
            writeln!(f, "[skipped {}]", s.name)?;
            writeln!(f, "reason = {}", s.reason)?;
        }
        for m in &self.models {
            writeln!(f, "[model {}]", m.name)?;
            writeln!(f, "level = {}", m.level)?;
            writeln!(f, "components = {}", m.components)?;
            writeln!(f, "rows = {}", m.rows)?;
            writeln!(f, "columns = {}", m.columns)?;
            writeln!(f, "positives = {}", m.positives)?;
            writeln!(f, "aoi_unmatched = {}", m.join.aoi_unmatched)?;
            writeln!(f, "aoi_missing_pin = {}", m.join.aoi_missing_pin)?;
            let imp = m.outcome.importance();
            let order = gbdt::rank_by_importance(&imp);
            for (rank, &i) in order.iter().take(DEFAULT_TOP_K).enumerate() {
                writeln!(f, "importance.{} = {} {:.6}", rank + 1, imp[i].0, imp[i].1)?;
            }
            m.outcome.report.write_sections(f, &format!("{} ", m.name))?;
        }
        if let Some(fu) = &self.fusion {
            writeln!(f, "[fusion]")?;
            writeln!(f, "rule = {}", fu.rule)?;
            let members: Vec<&str> = fu.members.iter().map(|l| l.as_str()).collect();
            writeln!(f, "members = {}", members.join(","))?;
            writeln!(f, "rows = {}", fu.rows)?;
            writeln!(f, "positives = {}", fu.positives)?;
            write_fusion_counts(f, &fu.counts)?;
            writeln!(f, "recall = {:.6}", fu.recall)?;
            writeln!(f, "f1 = {:.6}", fu.f1.value)?;
            writeln!(f, "f1_degenerate = {}", fu.f1.degenerate)?;
            writeln!(f, "macro_f1 = {:.6}", fu.macro_f1)?;
            writeln!(f, "auc = {}", eval::opt(fu.auc))?;
            for (l, c) in fu.members.iter().zip(&fu.member_counts) {
                writeln!(f, "{l}_recall = {:.6}", c.recall())?;
                writeln!(f, "{l}_f1 = {:.6}", eval::f1(c).value)?;
            }
            for fold in &fu.folds {
                writeln!(f, "[fusion fold {}]", fold.fold)?;
                write_fusion_counts(f, &fold.counts)?;
                writeln!(f, "recall = {:.6}", fold.recall)?;
                for (l, r) in fu.members.iter().zip(&fold.member_recall) {
                    writeln!(f, "{l}_recall = {r:.6}")?;
                }
            }
        }
        Ok(())
    }
}

fn write_fusion_counts(f: &mut fmt::Formatter<'_>, c: &ConfusionCounts) -> fmt::Result {
    writeln!(f, "tp = {}", c.tp)?;
    writeln!(f, "fp = {}", c.fp)?;
    writeln!(f, "tn = {}", c.tn)?;
    writeln!(f, "fn = {}", c.fn_)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::aoi;

    #[test]
    fn ranking_orders_by_count_then_id() {
        let mut records = Vec::new();
        for (c, n) in [("A", 5), ("B", 2), ("C", 5)] {
            for _ in 0..n {
                records.push(aoi(1, 1, c, Some(1)));
            }
        }
        assert_eq!(rank_components_by_defects(&records).unwrap(), ["A", "C", "B"]);
        assert!(rank_components_by_defects(&[]).is_err());
    }

    #[test]
    fn lifting_is_or_and_max() {
        let key = |pin| PinKey {
            panel_id: 1,
            figure_id: 1,
            component_id: "U1".into(),
            pin_number: pin,
        };
        let keys = [key(1), key(2), key(3)];
        let lifted = lift_pin_verdicts(
            keys.iter().zip([(false, 0.2), (false, 0.7), (true, 0.6)]).map(|(k, (v, p))| (k, v, p)),
        );
        let v = lifted.values().next().unwrap();
        assert!(v.positive);
        assert_eq!(v.probability, 0.7);
        let lifted = lift_pin_verdicts(keys.iter().map(|k| (k, false, 0.1)));
        assert!(!lifted.values().next().unwrap().positive);
    }

    #[test]
    fn fusion_rules() {
        let m = [(true, 0.9), (false, 0.2)];
        assert_eq!(FusionRule::AnyPositive.combine(&m), (true, 0.9));
        // Even split goes positive.
        assert!(FusionRule::MajorityVote.combine(&m).0);
        assert!(!FusionRule::MajorityVote.combine(&[(true, 0.9), (false, 0.2), (false, 0.1)]).0);
        assert!(FusionRule::MeanProbability(0.55).combine(&m).0);
        assert!(!FusionRule::MeanProbability(0.56).combine(&m).0);
        assert_eq!(FusionRule::AnyPositive.combine(&[]), (false, 0.0));
    }

    #[test]
    fn fusion_rule_text_round_trips() {
        for r in [
            FusionRule::AnyPositive,
            FusionRule::MajorityVote,
            FusionRule::MeanProbability(0.25),
        ] {
            assert_eq!(r.to_string().parse::<FusionRule>().unwrap(), r);
        }
        assert!("mean-probability:1.5".parse::<FusionRule>().is_err());
        assert!("vote".parse::<FusionRule>().is_err());
    }

    #[test]
    fn board_level_c2_needs_override() {
        let mut c = RunConfig {
            task: ClassificationTask::C2OperatorLabel,
            levels: vec![Level::Board],
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.allow_board_c2c3 = true;
        assert!(c.validate().is_ok());
        c.levels = vec![Level::Pin, Level::Pin];
        assert!(c.validate().is_err());
    }
}
