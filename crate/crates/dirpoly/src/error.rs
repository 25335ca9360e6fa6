use thiserror::Error;

/// Crate-wide error type. Every rejected precondition names the offending
/// value so batch drivers can log it verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("horizon {n_max} exceeds box radius {box_radius}: kernel mass would leak")]
    HorizonExceedsBox { n_max: u32, box_radius: i32 },

    #[error("memory budget exceeded: need {need} bytes, budget {budget}")]
    MemoryBudget { need: u64, budget: u64 },

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("mismatched identifiers: {0}")]
    Mismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("divergent quantity: {0}")]
    Divergent(String),

    #[error("exact-mode budget exceeded: {0}")]
    Budget(String),

    #[error("boxes overlap: {0}")]
    OverlappingBoxes(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}
