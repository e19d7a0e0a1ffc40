//! Objective metrics for content representations: bit-rate of symbol
//! streams and machine ABX discriminability over DTW-aligned frames, plus a
//! linear probe for how much speaker identity a representation keeps.

mod abx;
mod bitrate;
mod dtw;
mod items;
mod probe;
mod report;

pub use abx::{abx_score, AbxConfig, AbxItem, AbxMode, AbxReport, CellScore};
pub use bitrate::{bitrate, SymbolKey, SymbolStream};
pub use dtw::{dtw_distance, frame_distance, Dtw, FrameMetric};
pub use items::{codes_to_frames, read_item_file, ItemSpec, build_abx_items};
pub use probe::{LinearProbe, ProbeConfig};
pub use report::MetricReport;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("item file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
