use std::path::PathBuf;

/// Errors produced by the rcpda library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("size mismatch in {context}: expected {expected:?}, got {actual:?}")]
    SizeMismatch {
        context: &'static str,
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },

    #[error("radar return at t={source_time} s is {delta} s from t={target_time} s, beyond the {window} s window")]
    WindowExceeded {
        source_time: f64,
        target_time: f64,
        delta: f64,
        window: f64,
    },

    #[error("bounding boxes belong to different instances ({a} vs {b})")]
    InstanceMismatch { a: u32, b: u32 },

    #[error("time {t} s is outside the interval [{start}, {end}] s")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error("point ({x:.3}, {y:.3}, {z:.3}) lies outside bounding box of instance {instance}")]
    PointOutsideBox { x: f64, y: f64, z: f64, instance: u32 },

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("thresholds must be strictly increasing inside (0, 1), got {0:?}")]
    InvalidThresholds(Vec<f64>),

    #[error("frame {frame} is out of range (scene has {count} frames)")]
    FrameOutOfRange { frame: usize, count: usize },

    #[error("accumulation window [{first}, {last}] around frame {target} exceeds the {count} available frames")]
    WindowOutOfRange {
        target: usize,
        first: isize,
        last: isize,
        count: usize,
    },

    #[error("unknown actor instance {0}")]
    UnknownInstance(u32),

    #[error("JSON parse error at line {line}, column {column} (field `{path}`): {message}")]
    SceneParse {
        line: usize,
        column: usize,
        path: String,
        message: String,
    },

    #[error("malformed {format} data: {message}")]
    Format {
        format: &'static str,
        message: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }

    /// Attributes an error to a named pipeline stage.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by user-supplied configuration rather than data.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidConfig(_)
            | Error::InvalidThresholds(_)
            | Error::SceneParse { .. }
            | Error::InvalidRotation(_)
            | Error::WindowOutOfRange { .. }
            | Error::FrameOutOfRange { .. } => true,
            Error::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
