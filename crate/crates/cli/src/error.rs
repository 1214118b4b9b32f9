use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },
    #[error("{artifact} not found at {path}; run `histoforest {stage}` first")]
    MissingPrerequisite {
        artifact: &'static str,
        stage: &'static str,
        path: PathBuf,
    },
    #[error(
        "{artifact} at {path} comes from a different configuration \
         (digest {found}, expected {expected}); rerun `histoforest {stage}`"
    )]
    StaleArtifact {
        artifact: &'static str,
        stage: &'static str,
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] histoforest_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::MissingPrerequisite { .. } => "missing_prerequisite",
            CliError::StaleArtifact { .. } => "stale_artifact",
            CliError::Io { .. } => "io",
            CliError::Core(_) => "pipeline",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            CliError::MissingPrerequisite { .. } | CliError::StaleArtifact { .. } => 3,
            CliError::Io { .. } | CliError::Core(_) => 1,
        }
    }

    /// `error kind=<kind> [field=..|artifact=..] message="..."` on one line.
    pub fn one_line(&self) -> String {
        let mut s = format!("error kind={}", self.kind());
        match self {
            CliError::Config { field, .. } => s.push_str(&format!(" field={}", quote(field))),
            CliError::MissingPrerequisite { artifact, stage, .. } | CliError::StaleArtifact { artifact, stage, .. } => {
                s.push_str(&format!(" artifact={} stage={stage}", quote(artifact)))
            }
            _ => {}
        }
        s.push_str(&format!(" message={}", quote(&self.to_string())));
        s
    }
}

fn quote(s: &str) -> String {
    let escaped: String = s
        .chars()
        .flat_map(|c| match c {
            '"' => vec!['\\', '"'],
            '\\' => vec!['\\', '\\'],
            '\n' | '\r' => vec![' '],
            c => vec![c],
        })
        .collect();
    format!("\"{escaped}\"")
}
