//! Embedded application stores and the metadata store, bundled as a
//! [`World`].

mod app;
mod meta;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use app::{AppStore, StoreSnapshot, StoredNode};
pub use meta::{
    AttributeChangeRow, BagEntry, BagReason, DisplayEvent, LeaseState, MetaSnapshot, MetaStore,
    MigrationId, MigrationLease, MigrationRecord, Outcome, PlaceholderInfo, PlaceholderKind,
    PlaceholderLoc, ReferenceRow, TrackedState, WalOp, WalRecord,
};

use crate::error::StoreError;
use crate::model::{AppId, Dag};

/// All application stores plus the shared metadata store.
#[derive(Debug, Default)]
pub struct World {
    apps: BTreeMap<AppId, Arc<AppStore>>,
    meta: Arc<MetaStore>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub apps: Vec<StoreSnapshot>,
    pub meta: MetaSnapshot,
}

/// Comparable state used by rollback checks: application contents and
/// the tracked metadata (relationship rows, bags, placeholders).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldState {
    pub apps: Vec<StoreSnapshot>,
    pub tracked: TrackedState,
}

impl World {
    pub fn new() -> Self {
        World::default()
    }

    pub fn add_app(&mut self, dag: Arc<Dag>, key_base: i64) -> Arc<AppStore> {
        let store = Arc::new(AppStore::new(dag, key_base));
        self.apps.insert(store.app().clone(), store.clone());
        store
    }

    pub fn app(&self, id: &AppId) -> Option<&Arc<AppStore>> {
        self.apps.get(id)
    }

    pub fn apps(&self) -> impl Iterator<Item = &Arc<AppStore>> {
        self.apps.values()
    }

    pub fn meta(&self) -> &Arc<MetaStore> {
        &self.meta
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            apps: self.apps.values().map(|a| a.snapshot()).collect(),
            meta: self.meta.snapshot(),
        }
    }

    pub fn state(&self) -> WorldState {
        WorldState {
            apps: self.apps.values().map(|a| a.snapshot()).collect(),
            tracked: self.meta.tracked_state(),
        }
    }

    /// Rebuilds a world from `snap`; `dags` supplies each application's
    /// DAG and key base.
    pub fn from_snapshot(
        snap: WorldSnapshot,
        dags: impl IntoIterator<Item = (Arc<Dag>, i64)>,
    ) -> Result<World, StoreError> {
        let mut w = World {
            apps: BTreeMap::new(),
            meta: Arc::new(MetaStore::from_snapshot(snap.meta)),
        };
        for (dag, base) in dags {
            w.add_app(dag, base);
        }
        for s in &snap.apps {
            let store = w
                .apps
                .get(&s.app)
                .ok_or_else(|| StoreError::Invalid(format!("no DAG for application {}", s.app)))?;
            store.restore(s)?;
        }
        Ok(w)
    }
}

/// Write-ahead discipline for one migration: `log` runs before the
/// mutation it describes, `applied` right after it.
pub trait Journal {
    fn migration_id(&self) -> MigrationId;
    fn log(&self, op: WalOp) -> Result<u64, crate::error::EngineError>;
    fn applied(&self, seq: u64) -> Result<(), crate::error::EngineError>;
}
