use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid level graph: {0}")]
    InvalidGraph(String),

    #[error("graphs at levels {upper} and {lower} are not composable: {detail}")]
    NotComposable {
        upper: i64,
        lower: i64,
        detail: String,
    },

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("level range [{lo}, {hi}] leaves the diagram window [{window_lo}, {window_hi}]")]
    WindowOverflow {
        lo: i64,
        hi: i64,
        window_lo: i64,
        window_hi: i64,
    },

    #[error("paths live on different windows")]
    WindowMismatch,

    #[error("incompatible path at level {level}: {detail}")]
    BadPath { level: i64, detail: String },

    #[error("endpoints are not comparable in the Vershik ordering")]
    Incomparable,

    #[error("arc endpoints are out of order")]
    ReversedArc,

    #[error("window exhausted after flow time {reached} (requested {requested})")]
    WindowExhausted { reached: f64, requested: f64 },

    #[error("incidence matrix at level {0} is singular")]
    Singular(i64),

    #[error("no strictly positive product of incidence matrices within the window")]
    NoPositivityWindow,

    #[error("exponent gap unresolved: {0}")]
    GapUnresolved(String),

    #[error("vector has a component outside the unstable subspace (residual {0:e})")]
    NotInUnstable(f64),

    #[error("declared decay violated at level {level}: |defect| = {observed:e} > {allowed:e}")]
    DecayViolated {
        level: i64,
        observed: f64,
        allowed: f64,
    },

    #[error("degenerate dual system (condition number {0:e})")]
    DegenerateDuals(f64),

    #[error("level {0} is not covered by this family")]
    LevelMismatch(i64),

    #[error("cylinder function cannot be resolved: {0}")]
    Unresolvable(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
