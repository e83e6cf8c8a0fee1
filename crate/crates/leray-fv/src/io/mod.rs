//! Result emission: coefficient CSV time series and legacy-VTK field dumps,
//! plus the matching re-parsers used to validate emitted files.

mod csv;
mod vtk;

pub use csv::{read_csv, write_csv, write_csv_to};
pub use vtk::{validate_vtk, write_vtk, write_vtk_to};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}
