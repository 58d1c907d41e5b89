//! Defect detection for PCB assembly from solder-paste-inspection (SPI)
//! measurements.
//!
//! The crate covers the whole batch flow: typed SPI/AOI records and their CSV
//! formats, a seeded synthetic line generator, pin/component/board feature
//! tables joined with the three inspection labels, a second-order
//! gradient-boosted tree learner, cross-validated F1/ROC evaluation, and the
//! orchestration that fuses verdicts across aggregation levels.

pub mod error;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod synthgen;
pub mod table;

pub use error::{Error, ErrorKind, Result, Stage};
pub use model::{
    AoiRecord, BoardKey, BoardLayout, ComponentKey, EncodingConfig, OperatorLabel, PinKey,
    PinRecord, RepairLabel,
};
pub use table::{FeatureTable, Level, RowKeys};
