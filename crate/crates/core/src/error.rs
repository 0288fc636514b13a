use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    AllMaskedRow {
        row: usize,
    },
    IndexOutOfRange {
        index: usize,
        len: usize,
    },
    DomainError {
        what: &'static str,
        value: f64,
    },
    EmptyAfterFilter,
    EmptyTrain,
    EmptyInput(&'static str),
    UnknownPoi(usize),
    AllMasked,
    EmptyRanks,
    NoValidSamples,
    DivergenceDetected {
        epoch: usize,
    },
    InvalidConfig(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "shape mismatch in {op}: {left:?} vs {right:?}")
            }
            Error::AllMaskedRow { row } => write!(f, "softmax row {row} has no unmasked entry"),
            Error::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
            Error::DomainError { what, value } => write!(f, "{what} out of domain: {value}"),
            Error::EmptyAfterFilter => f.write_str("no check-ins survive the sparsity filter"),
            Error::EmptyTrain => f.write_str("train split would be empty"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::UnknownPoi(p) => write!(f, "POI {p} has no check-ins in the train split"),
            Error::AllMasked => f.write_str("every position is masked"),
            Error::EmptyRanks => f.write_str("rank list is empty"),
            Error::NoValidSamples => f.write_str("no evaluation samples"),
            Error::DivergenceDetected { epoch } => {
                write!(f, "training diverged: non-finite loss in epoch {epoch}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
