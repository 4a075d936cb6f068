//! Migration engine for interlinked user data across applications with
//! different schemas.

pub mod clock;
pub mod engine;
pub mod error;
pub mod model;
pub mod psm;
pub mod specio;
pub mod store;
pub mod tracker;
pub mod validate;
