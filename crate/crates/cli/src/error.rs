use std::fmt;

use pmr_core::annotate::AnnotateError;
use pmr_core::compare::CompareError;
use pmr_core::gateway::GatewayError;
use pmr_core::metrics::MetricsError;
use pmr_core::rank::RankError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data { stage: &'static str, message: String },
    Backend { stage: &'static str, message: String },
    Internal { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data { .. } => 3,
            CliError::Backend { .. } => 4,
            CliError::Internal { .. } => 5,
        }
    }

    pub fn data(stage: &'static str, e: impl fmt::Display) -> Self {
        CliError::Data {
            stage,
            message: e.to_string(),
        }
    }

    pub fn internal(stage: &'static str, e: impl fmt::Display) -> Self {
        CliError::Internal {
            stage,
            message: e.to_string(),
        }
    }

    pub fn from_compare(stage: &'static str, e: &CompareError) -> Self {
        if compare_is_backend(e) {
            CliError::Backend {
                stage,
                message: e.to_string(),
            }
        } else {
            Self::data(stage, e)
        }
    }

    pub fn from_rank(stage: &'static str, e: RankError) -> Self {
        match &e {
            RankError::Aborted { failures, .. } => match failures.iter().find(|f| compare_is_backend(f)) {
                Some(f) => CliError::Backend {
                    stage,
                    message: format!("{e}; first backend failure: {f}"),
                },
                None => Self::data(stage, format!("{e}; first failure: {}", failures[0])),
            },
            RankError::Pool(_) => Self::internal(stage, e),
            _ => Self::data(stage, e),
        }
    }

    pub fn from_metrics(stage: &'static str, e: MetricsError) -> Self {
        match &e {
            MetricsError::Compare(c) => Self::from_compare(stage, c),
            MetricsError::Pool(_) => Self::internal(stage, e),
            _ => Self::data(stage, e),
        }
    }

    pub fn from_annotate(stage: &'static str, e: AnnotateError) -> Self {
        match e {
            AnnotateError::Backend(g) => Self::from_gateway(stage, g),
            AnnotateError::Pool(_) => Self::internal(stage, e),
            other => Self::data(stage, other),
        }
    }

    pub fn from_gateway(stage: &'static str, e: GatewayError) -> Self {
        match e {
            GatewayError::Config(m) => CliError::Config(m),
            other => CliError::Backend {
                stage,
                message: other.to_string(),
            },
        }
    }
}

fn compare_is_backend(e: &CompareError) -> bool {
    match e {
        CompareError::Backend(_) => true,
        CompareError::ComparisonFailed { reason, .. } => compare_is_backend(reason),
        _ => false,
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data { stage, message } => write!(f, "data error in stage {stage}: {message}"),
            CliError::Backend { stage, message } => write!(f, "backend error in stage {stage}: {message}"),
            CliError::Internal { stage, message } => write!(f, "internal error in stage {stage}: {message}"),
        }
    }
}

impl std::error::Error for CliError {}
