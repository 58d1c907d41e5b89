use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use spi_defect::features::{infer_layout, ClassificationTask};
use spi_defect::ingest::{self, IngestReport};
use spi_defect::pipeline::{self, INFERRED_FIGURES_PER_PANEL};
use spi_defect::synthgen;
use spi_defect::{AoiRecord, Error, OperatorLabel, PinRecord, RepairLabel, Result};

use crate::config::CliConfigFile;
use crate::{GenerateArgs, InspectArgs, RunArgs, TaskArg};

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let mut cfg = CliConfigFile::load(args.config.as_deref())?.generator;
    if let Some(p) = args.panels {
        cfg.num_panels = p;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.signal {
        cfg.planted_signal_strength = s;
    }
    if let Some(p) = args.defect_rate {
        cfg.pin_defect_rate = p;
    }
    let (pins, aoi) = synthgen::generate(&cfg)?;
    ingest::write_spi(&args.out_spi, &pins)?;
    ingest::write_aoi(&args.out_aoi, &aoi)?;
    print!("{}", cascade_summary(pins.len(), &aoi));
    Ok(())
}

/// Record counts and realized rates of the inspection cascade.
fn cascade_summary(pins: usize, aoi: &[AoiRecord]) -> String {
    let bad = aoi.iter().filter(|a| a.operator_label == OperatorLabel::Bad).count();
    let scrap = aoi
        .iter()
        .filter(|a| a.repair_label == Some(RepairLabel::NotPossibleToRepair))
        .count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut out = String::new();
    let _ = writeln!(out, "spi_records = {pins}");
    let _ = writeln!(out, "aoi_records = {}", aoi.len());
    let _ = writeln!(out, "aoi_per_pin = {:.6}", ratio(aoi.len(), pins));
    let _ = writeln!(out, "operator_bad_rate = {:.6}", ratio(bad, aoi.len()));
    let _ = writeln!(out, "not_repairable_rate = {:.6}", ratio(scrap, bad));
    out
}

pub fn inspect(args: &InspectArgs) -> Result<()> {
    let schema = CliConfigFile::load(args.config.as_deref())?.run.schema;
    let out = match (&args.spi, &args.aoi) {
        (Some(p), _) => {
            let (pins, report) = ingest::read_spi(p, &schema)?;
            let mut s = ingest_summary(&report);
            s.push_str(&spi_summary(&pins)?);
            s
        }
        (None, Some(p)) => {
            let (aoi, report) = ingest::read_aoi(p, &schema)?;
            let mut s = ingest_summary(&report);
            s.push_str(&aoi_summary(&aoi));
            s
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    print!("{out}");
    Ok(())
}

fn ingest_summary(r: &IngestReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "rows_read = {}", r.rows_read);
    let _ = writeln!(out, "rows_kept = {}", r.rows_kept);
    let _ = writeln!(out, "rows_dropped_nan = {}", r.rows_dropped_nan);
    let _ = writeln!(out, "rows_dropped_malformed = {}", r.rows_dropped_malformed);
    for d in r.dropped.iter().take(10) {
        let _ = writeln!(out, "dropped line {}: {}", d.line, d.detail);
    }
    if !r.columns.is_empty() {
        let _ = writeln!(out, "\ncolumn                min           mean            max");
        for (name, s) in &r.columns {
            let _ = writeln!(out, "{name:<16} {:>12.4} {:>14.4} {:>14.4}", s.min, s.mean(), s.max);
        }
    }
    out
}

fn bar(count: usize, max: usize) -> String {
    let width = if max == 0 { 0 } else { (count * 40).div_ceil(max) };
    "#".repeat(width)
}

fn spi_summary(pins: &[PinRecord]) -> Result<String> {
    let mut out = String::new();
    if pins.is_empty() {
        return Ok(out);
    }
    let layout = infer_layout(pins, INFERRED_FIGURES_PER_PANEL)?;
    let boards: std::collections::HashSet<_> = pins.iter().map(|p| p.key.board()).collect();
    let _ = writeln!(out, "\nboards = {}", boards.len());
    let _ = writeln!(out, "components_per_board = {}", layout.component_count());
    let _ = writeln!(out, "pins_per_board = {}", layout.total_pins());
    let _ = writeln!(out, "\npins per component   components");
    let hist = layout.pin_count_histogram();
    let max = hist.iter().map(|h| h.1).max().unwrap_or(0);
    for (pins, n) in hist {
        let _ = writeln!(out, "{pins:>18}   {n:>10}  {}", bar(n, max));
    }
    let mut results: BTreeMap<&str, usize> = BTreeMap::new();
    for p in pins {
        *results.entry(p.spi_result.as_str()).or_insert(0) += 1;
    }
    let _ = writeln!(out, "\nspi result            pins");
    for (r, n) in results {
        let _ = writeln!(out, "{r:<16} {n:>10}");
    }
    Ok(out)
}

fn aoi_summary(aoi: &[AoiRecord]) -> String {
    let mut out = String::new();
    let mut faults: BTreeMap<&str, usize> = BTreeMap::new();
    for a in aoi {
        *faults.entry(a.machine_label.as_str()).or_insert(0) += 1;
    }
    let mut faults: Vec<_> = faults.into_iter().collect();
    faults.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let _ = writeln!(out, "\nfault type            records");
    let max = faults.first().map_or(0, |f| f.1);
    for (f, n) in &faults {
        let _ = writeln!(out, "{f:<16} {n:>10}  {}", bar(*n, max));
    }
    let blank = aoi.iter().filter(|a| a.pin_number.is_none()).count();
    let _ = writeln!(out, "\nmissing_pin_number = {blank}");
    let bad = aoi.iter().filter(|a| a.operator_label == OperatorLabel::Bad).count();
    let scrap = aoi
        .iter()
        .filter(|a| a.repair_label == Some(RepairLabel::NotPossibleToRepair))
        .count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let _ = writeln!(out, "operator_bad = {bad}");
    let _ = writeln!(out, "operator_bad_rate = {:.6}", ratio(bad, aoi.len()));
    let _ = writeln!(out, "not_repairable = {scrap}");
    let _ = writeln!(out, "not_repairable_rate = {:.6}", ratio(scrap, bad));
    out
}

pub fn run(args: &RunArgs) -> Result<()> {
    let mut cfg = CliConfigFile::load(args.config.as_deref())?.run;
    if let Some(t) = args.task {
        cfg.task = match t {
            TaskArg::C1 => ClassificationTask::C1AoiDefect,
            TaskArg::C2 => ClassificationTask::C2OperatorLabel,
            TaskArg::C3 => ClassificationTask::C3RepairLabel,
        };
    }
    if let Some(l) = &args.levels {
        cfg.levels = l.iter().map(|&l| l.into()).collect();
    }
    if let Some(m) = args.component_mode {
        cfg.component_mode = m.into();
    }
    if let Some(n) = args.top_n {
        cfg.top_n_components = Some(n as usize);
    }
    if let Some(f) = &args.fusion {
        cfg.fusion = f.parse()?;
    }
    if let Some(k) = args.folds {
        cfg.folds = k as usize;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(d) = args.max_depth {
        cfg.train.max_depth = d;
    }
    if let Some(r) = args.rounds {
        cfg.train.num_rounds = r;
    }
    if let Some(m) = args.split_method {
        cfg.train.split_method = m.into();
    }
    if let Some(k) = args.top_k_features {
        cfg.train.feature_top_k = Some(k);
    }
    cfg.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0) as usize)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let report = pool.install(|| pipeline::run(&cfg, &args.spi, &args.aoi))?;
    report.write_outputs(&args.out_dir)?;
    print!("{}", run_summary(&report, &args.out_dir));
    Ok(())
}

fn run_summary(report: &pipeline::RunReport, out_dir: &Path) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "models_trained = {}\nmodels_skipped = {}",
        report.models_trained(),
        report.skipped.len()
    );
    for m in &report.models {
        let r = &m.outcome.report;
        let auc = r.pooled_auc.map_or_else(|| "n/a".into(), |a| format!("{a:.4}"));
        let _ = writeln!(
            out,
            "{:<24} rows {:>8}  f1 {:.4}  macro_f1 {:.4}  auc {auc}",
            m.name, m.rows, r.pooled_f1.value, r.pooled_macro_f1
        );
    }
    if let Some(f) = &report.fusion {
        let _ = writeln!(
            out,
            "{:<24} rows {:>8}  f1 {:.4}  macro_f1 {:.4}  recall {:.4}",
            format!("fused ({})", f.rule),
            f.rows,
            f.f1.value,
            f.macro_f1,
            f.recall
        );
    }
    let _ = writeln!(out, "report written to {}", out_dir.join("report.txt").display());
    out
}
