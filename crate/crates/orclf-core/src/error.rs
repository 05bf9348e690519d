use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite evaluation at t={t}, x={x:?}: {what}")]
    NumericDomain { t: f64, x: Vec<f64>, what: String },
    #[error("ORCLF certificate not verifiable here: t={t}, x={x:?}, best margin {best_margin:e} (need <= {required:e})")]
    CertificateNotVerifiable {
        t: f64,
        x: Vec<f64>,
        best_margin: f64,
        required: f64,
    },
    #[error("increase covering density: no certified refinement up to level {level} near t={t}, x={x:?}")]
    CoverageGap { t: f64, x: Vec<f64>, level: u32 },
    #[error("band grid explosion at (i={i}, j={j}): {which} needs N={needed:e} above cap {cap}")]
    BandGridExplosion {
        i: i32,
        j: i64,
        which: String,
        needed: f64,
        cap: u64,
    },
    #[error("schedule construction error at band {band}: {msg}")]
    Schedule { band: i32, msg: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("integration failed at t={t}: {msg}")]
    Integration { t: f64, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
