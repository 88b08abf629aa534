use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("value is not p-integral (valuation {valuation})")]
    NotIntegral { valuation: i64 },
    #[error("modulus {p}^{n} exceeds the 62-bit kernel")]
    ModulusTooLarge { p: u64, n: u32 },
    #[error("element is not invertible")]
    NotInvertible,
    #[error("window too small: need [{need_lo}, {need_hi}], have [{have_lo}, {have_hi}]")]
    Window {
        need_lo: i64,
        need_hi: i64,
        have_lo: i64,
        have_hi: i64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no such element: {0}")]
    Infeasible(String),
    #[error("inconsistent linear system: {0}")]
    Inconsistent(String),
    #[error("insufficient precision: {0}")]
    Precision(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("iteration did not converge: {0}")]
    Convergence(String),
    #[error("internal consistency failure: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
