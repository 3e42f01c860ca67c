use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PanelError>;

/// A `(unit, time)` label pair absent from a long-format file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingCell {
    pub unit: String,
    pub time: String,
}

impl fmt::Display for MissingCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.unit, self.time)
    }
}

/// Which half-sample failed during a jackknife.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfSample {
    Full,
    UnitsFirst,
    UnitsSecond,
    PeriodsFirst,
    PeriodsSecond,
}

impl fmt::Display for HalfSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            HalfSample::Full => "full sample",
            HalfSample::UnitsFirst => "first unit half",
            HalfSample::UnitsSecond => "second unit half",
            HalfSample::PeriodsFirst => "first period half",
            HalfSample::PeriodsSecond => "second period half",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("unbalanced panel: missing cells {}", format_missing(.missing))]
    Balance { missing: Vec<MissingCell> },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("bootstrap failed: {failed} of {total} resamples could not be estimated")]
    Bootstrap { failed: usize, total: usize },

    #[error("jackknife failed on the {half}: {source}")]
    Jackknife {
        half: HalfSample,
        #[source]
        source: Box<PanelError>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl PanelError {
    /// Short stable name used by the CLI and the C ABI.
    pub fn name(&self) -> &'static str {
        match self {
            PanelError::Balance { .. } => "BalanceError",
            PanelError::Parse { .. } => "ParseError",
            PanelError::Domain(_) => "DomainError",
            PanelError::SingularDesign(_) => "SingularDesignError",
            PanelError::Bootstrap { .. } => "BootstrapError",
            PanelError::Jackknife { .. } => "JackknifeError",
            PanelError::Io(_) => "IoError",
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        PanelError::Domain(msg.into())
    }
}

fn format_missing(missing: &[MissingCell]) -> String {
    const SHOWN: usize = 20;
    let mut out: Vec<String> = missing.iter().take(SHOWN).map(|m| m.to_string()).collect();
    if missing.len() > SHOWN {
        out.push(format!("... and {} more", missing.len() - SHOWN));
    }
    out.join(", ")
}
