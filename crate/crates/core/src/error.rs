use crate::expr::ExprError;

/// Errors produced by the numerical routines and the problem loader.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("{pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("projection failed: {0}")]
    Projection(String),
    #[error("penalty schedule rejected: {0}")]
    Schedule(String),
    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },
    #[error("invariance violated at t = {t}: constraint {index} exceeds its bound by {excess:e}")]
    Invariance { t: f64, index: usize, excess: f64 },
    #[error("grid mismatch: {0}")]
    Grid(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
