use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("non-finite loss in {stage} at step {step} ({stats})")]
    NonFinite {
        stage: &'static str,
        step: usize,
        stats: ParamStats,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Summary of a parameter buffer, attached to divergence diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamStats {
    pub len: usize,
    pub non_finite: usize,
    pub min: f32,
    pub max: f32,
    pub mean: f64,
}

impl ParamStats {
    pub fn of(values: &[f32]) -> Self {
        let mut stats = ParamStats {
            len: values.len(),
            non_finite: 0,
            min: f32::INFINITY,
            max: f32::NEG_INFINITY,
            mean: 0.0,
        };
        let mut sum = 0.0f64;
        for &v in values {
            if !v.is_finite() {
                stats.non_finite += 1;
                continue;
            }
            stats.min = stats.min.min(v);
            stats.max = stats.max.max(v);
            sum += v as f64;
        }
        let finite = stats.len - stats.non_finite;
        if finite > 0 {
            stats.mean = sum / finite as f64;
        }
        stats
    }
}

impl fmt::Display for ParamStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} params, {} non-finite, min {:e}, max {:e}, mean {:e}",
            self.len, self.non_finite, self.min, self.max, self.mean
        )
    }
}
