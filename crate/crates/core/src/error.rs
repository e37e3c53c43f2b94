use alloc::string::String;

use crate::tasks::TaskId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("{coeffs} coefficients given for {vectors} vectors")]
    CountMismatch { coeffs: usize, vectors: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("no gradient supplied for task {0} with nonzero weight")]
    MissingGradient(TaskId),
    #[error("non-finite loss on task {0}")]
    NonFiniteLoss(TaskId),
    #[error("task {0} does not have a classification head")]
    NotClassification(TaskId),
    #[error("metric mismatch between compared performances")]
    MetricMismatch,
    #[error("zero-norm gradient")]
    ZeroNorm,
    #[error("baseline entry {0} is zero")]
    ZeroBaseline(usize),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("diverged at step {step} on task {task}{}", branch_suffix(*.branch))]
    Diverged {
        task: TaskId,
        step: u64,
        branch: Option<usize>,
    },
}

fn branch_suffix(branch: Option<usize>) -> String {
    match branch {
        Some(b) => alloc::format!(" in branch {b}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    /// Tags a divergence error with the branch it occurred in.
    pub fn in_branch(self, branch_id: usize) -> Self {
        match self {
            Error::Diverged { task, step, .. } => Error::Diverged {
                task,
                step,
                branch: Some(branch_id),
            },
            other => other,
        }
    }
}
