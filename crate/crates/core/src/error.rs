use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VmemError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("physical access of {len} bytes at {addr:#x} outside memory of size {size:#x}")]
    OutOfBounds { addr: u64, len: usize, size: u64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("cache configuration error in `{key}`: {reason}")]
    Config { key: &'static str, reason: String },
}

/// Malformed instruction, naming the operand that is wrong.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot decode {opcode}: bad {field} ({reason})")]
pub struct DecodeError {
    pub opcode: &'static str,
    pub field: &'static str,
    pub reason: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProgramError {
    #[error("instruction {index}: {source}")]
    Decode { index: usize, source: DecodeError },
    #[error("instruction {index}: branch target {target} out of range")]
    BadTarget { index: usize, target: usize },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("unbalanced transaction markers at instruction {0}")]
    UnbalancedTx(usize),
    #[error("nested transactions are not supported (instruction {0})")]
    NestedTx(usize),
    #[error("instruction {index}: control flow crosses the transaction region boundary")]
    TxEscape { index: usize },
    #[error("instruction {0}: TIME_READ must be followed by a load")]
    UnpairedTimer(usize),
    #[error("program contains no transaction region")]
    NoTransaction,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("step limit of {0} instructions exceeded")]
    StepLimit(u64),
    #[error("transactions are not supported by this CPU")]
    NoTransactions,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttackError {
    #[error("probe array page {page} at {va:#x} is not user-accessible")]
    ProbeNotUser { page: usize, va: u64 },
    #[error("exception suppression requested but the CPU has no transactional memory")]
    NoTransactions,
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error("direct-physical map not found after {probes} probes")]
    NotFound { probes: u64 },
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Machine(#[from] crate::machine::MachineError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

impl HarnessError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        HarnessError::Config { key: key.into(), reason: reason.into() }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Process exit code: 1 for configuration problems, 2 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io { .. } => 2,
            _ => 1,
        }
    }
}
