use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("trace: {0}")]
    Trace(String),

    #[error("network: {0}")]
    Network(String),

    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e} p.u.)")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("beyond static stability limit: p_max*cos(theta_ig) = {0:.6} <= 0")]
    BeyondStabilityLimit(f64),

    #[error("infeasible tuning target: {0}")]
    InfeasibleTuning(String),

    #[error("parse error{}: {message}", fmt_line(*.line))]
    Parse { line: Option<usize>, message: String },

    #[error("schema error{}: {message}", fmt_line(*.line))]
    Schema { line: Option<usize>, message: String },

    #[error("dangling reference at `{key}`: no {kind} with id `{id}`")]
    Reference { key: String, kind: &'static str, id: String },

    #[error("validation error at `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn fmt_line(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by the scenario content rather than the run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Schema { .. }
                | Error::Reference { .. }
                | Error::Validation { .. }
                | Error::Invalid(_)
        )
    }
}
