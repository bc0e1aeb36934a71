use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage a failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Collect,
    DataMatrices,
    ValueIteration,
    Fit,
    Stability,
    Oracle,
    Io,
    Config,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Collect => "collect",
            Stage::DataMatrices => "data-matrices",
            Stage::ValueIteration => "value-iteration",
            Stage::Fit => "fit",
            Stage::Stability => "stability",
            Stage::Oracle => "oracle",
            Stage::Io => "io",
            Stage::Config => "config",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: ‖Y−Yᵀ‖ = {asymmetry:.3e}, ‖Y‖ = {norm:.3e}")]
    AsymmetricInput { asymmetry: f64, norm: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("insufficient quadrature: {points} points, need at least {required}")]
    InsufficientQuadrature { points: usize, required: usize },

    #[error("rank deficient regressor: σ_min/count = {sigma_scaled:.3e} < α = {alpha:.3e}")]
    RankDeficient { sigma_scaled: f64, alpha: f64 },

    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("Riccati solution blew up at s = {s}: ‖P‖ = {norm:.3e}")]
    RiccatiBlowup { s: f64, norm: f64 },

    #[error("no periodic convergence within horizon {horizon}: last gap {gap:.3e}")]
    NoConvergence { horizon: f64, gap: f64 },

    #[error("R(t) is not invertible at t = {t}")]
    SingularR { t: f64 },

    #[error("too few data rows: {rows}, need more than {required}")]
    TooFewRows { rows: usize, required: usize },

    #[error("value-iteration flow blew up at s = {s}: ‖Ŵ‖ = {norm:.3e}")]
    Blowup { s: f64, norm: f64 },

    #[error("horizon s_f = {s_f} too short, need more than {required}")]
    HorizonTooShort { s_f: f64, required: f64 },

    #[error("invalid fit window: {0}")]
    BadWindow(String),

    #[error("closed loop is not stable (max multiplier {max_multiplier:.6}); cost diverges")]
    DivergentCost { max_multiplier: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("[{stage}] {source}")]
    AtStage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at(self, stage: Stage) -> Error {
        match self {
            e @ Error::AtStage { .. } => e,
            e => Error::AtStage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The stage tag, if the error was annotated.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::AtStage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// Strips stage annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
