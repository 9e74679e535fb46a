//! Scenario files, plots and the commands behind the `hems` binary.

// `!(x > 0.0)` style tests are deliberate: they also reject NaN. Index loops
// mirror the recurrences they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod error;
pub mod scenario;
pub mod svg;
pub mod sweep;

pub use error::CliError;

use std::path::Path;

use hybrid_ems::Error;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Header plus one line per row.
pub fn write_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize to memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is utf-8")
}

/// Rows of a table written by [`write_csv`].
pub fn read_csv<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<Vec<T>, CliError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| Error::Parse { path: origin.to_path_buf(), message: e.to_string() }.into())
}
