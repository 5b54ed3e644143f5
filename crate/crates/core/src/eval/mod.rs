//! Retrieval metrics, per-unit sweeps and CSV reports.

mod report;
mod retrieval;
mod sweep;

pub use report::{emit_csv, fmt_float, to_csv_string, CsvTable, ProxyTable};
pub use retrieval::{ap_at_k, nearest_neighbors, retrieval_map, RetrievalResult};
pub use sweep::{per_unit_sweep, SweepRow, SweepTable};
