use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {edge} has length {length:e}, not above the degeneracy threshold {eps:e}")]
    DegenerateEdge { edge: usize, length: f64, eps: f64 },

    #[error("edge {edge} references vertex {index}, but the shape has {vertex_count} vertices")]
    IndexOutOfRange {
        edge: usize,
        index: usize,
        vertex_count: usize,
    },

    #[error("edge {edge} is a self-loop on vertex {vertex}")]
    SelfLoop { edge: usize, vertex: usize },

    #[error("edge {edge} duplicates edge {first} ({i}, {j})")]
    DuplicateEdge {
        edge: usize,
        first: usize,
        i: usize,
        j: usize,
    },

    #[error("shape needs at least 2 vertices and 1 edge (got {vertices} vertices, {edges} edges)")]
    EmptyShape { vertices: usize, edges: usize },

    #[error("closed polyline needs at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("non-finite coordinate at vertex {0}")]
    NonFinite(usize),

    #[error("parse error{}: {message}", fmt_line(*line))]
    Parse { line: Option<usize>, message: String },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset has a single class; at least 2 are required")]
    SingleClass,

    #[error("shape {index} has no label")]
    MissingLabel { index: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class {label} has {count} samples; at least 2 are needed to split")]
    ClassTooSmall { label: u32, count: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_line(line: Option<usize>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn parse(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
