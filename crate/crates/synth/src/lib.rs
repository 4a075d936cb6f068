//! Mini application fixtures and a synthetic social-network generator.

pub mod fixtures;
pub mod gen;

use std::path::PathBuf;

use dagmig_core::error::{SpecError, StoreError};
use dagmig_core::model::AppId;
use thiserror::Error;

pub use fixtures::{
    profile, Fixtures, Profile, Shape, APPS, DIASPORA, GNUSOCIAL, MASTODON, TWITTER,
};
pub use gen::{content_hash, generate, Dataset, GenConfig, Volumes};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{}: {}", .0.display(), .1)]
    Spec(PathBuf, SpecError),
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, std::io::Error),
    #[error("no schema document for {0}")]
    MissingSchema(AppId),
    #[error("no DAG document for {0}")]
    MissingDag(AppId),
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("no generator profile for {0}")]
    NoProfile(AppId),
    #[error(transparent)]
    Store(#[from] StoreError),
}
