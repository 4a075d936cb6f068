//! A world holding the mini applications, the derived mapping routes
//! between them, and a record of what existed before any migration.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use dagmig_core::engine::MigrationContext;
use dagmig_core::model::{AppId, Dag, MigrationType, NodeId};
use dagmig_core::psm::SchemaMapping;
use dagmig_core::store::{AppStore, World, WorldSnapshot};
use dagmig_synth::{generate, Dataset, Fixtures, GenConfig};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Gap between the key spaces of consecutive applications.
pub const KEY_SPACE: i64 = 1_000_000_000;

/// Every node that existed before migrations started, with its owner.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Baseline {
    pub owners: HashMap<NodeId, NodeId>,
}

impl Baseline {
    pub fn capture(world: &World) -> Baseline {
        let mut owners = HashMap::new();
        for store in world.apps() {
            for n in store.all_nodes() {
                let owner = owner_key(store.dag(), &n).unwrap_or_else(|| n.id.clone());
                owners.insert(n.id, owner);
            }
        }
        Baseline { owners }
    }

    pub fn len(&self) -> usize {
        self.owners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owners.is_empty()
    }
}

/// Owner root named by the first ownership attribute, raw key only.
pub(crate) fn owner_key(dag: &Dag, n: &dagmig_core::model::DataNode) -> Option<NodeId> {
    if dag.is_root(&n.id.node_type) {
        return Some(n.id.clone());
    }
    let spec = dag.node_type(&n.id.node_type)?;
    spec.owned_by
        .iter()
        .find_map(|e| dag.referenced(e, n.get(&e.from)))
}

pub struct Lab {
    pub world: World,
    pub fixtures: Fixtures,
    pub baseline: Baseline,
    routes: BTreeMap<(AppId, AppId), Arc<SchemaMapping>>,
}

impl Lab {
    pub fn new() -> Result<Lab, HarnessError> {
        Ok(Self::with_fixtures(Fixtures::builtin()?))
    }

    pub fn with_fixtures(fixtures: Fixtures) -> Lab {
        let mut world = World::new();
        for (dag, base) in Self::key_bases(&fixtures) {
            world.add_app(dag, base);
        }
        Self::assemble(world, fixtures, Baseline::default())
    }

    fn key_bases(fixtures: &Fixtures) -> Vec<(Arc<Dag>, i64)> {
        fixtures
            .dags
            .values()
            .enumerate()
            .map(|(i, d)| (d.clone(), i as i64 * KEY_SPACE))
            .collect()
    }

    fn assemble(world: World, fixtures: Fixtures, baseline: Baseline) -> Lab {
        let routes = fixtures
            .derived()
            .into_iter()
            .map(|m| ((m.from_app.clone(), m.to_app.clone()), Arc::new(m)))
            .collect();
        Lab {
            world,
            fixtures,
            baseline,
            routes,
        }
    }

    pub fn store(&self, app: &str) -> Result<&Arc<AppStore>, HarnessError> {
        self.world
            .app(&AppId::from(app))
            .ok_or_else(|| HarnessError::Usage(format!("unknown application {app}")))
    }

    pub fn route(&self, from: &str, to: &str) -> Result<Arc<SchemaMapping>, HarnessError> {
        self.routes
            .get(&(AppId::from(from), AppId::from(to)))
            .cloned()
            .ok_or_else(|| HarnessError::Usage(format!("no mapping route from {from} to {to}")))
    }

    /// Routes into `to` from every other application, for bag contents.
    pub fn routes_into(&self, to: &str) -> BTreeMap<AppId, Arc<SchemaMapping>> {
        self.routes
            .iter()
            .filter(|((_, t), _)| t.as_str() == to)
            .map(|((f, _), m)| (f.clone(), m.clone()))
            .collect()
    }

    pub fn routes(&self) -> impl Iterator<Item = &Arc<SchemaMapping>> {
        self.routes.values()
    }

    /// Fills `app` with a generated dataset and refreshes the baseline.
    pub fn populate(&mut self, app: &str, cfg: &GenConfig) -> Result<Dataset, HarnessError> {
        let store = self.store(app)?.clone();
        let ds = generate(cfg, &store, self.world.meta())?;
        self.baseline = Baseline::capture(&self.world);
        Ok(ds)
    }

    pub fn context(
        &self,
        user: &NodeId,
        dst: &str,
        mtype: MigrationType,
    ) -> Result<MigrationContext, HarnessError> {
        let mapping = self.route(user.app.as_str(), dst)?;
        Ok(MigrationContext::new(user.clone(), mtype, mapping)
            .with_bag_mappings(self.routes_into(dst)))
    }

    /// Users (roots) currently living in `app`, in key order.
    pub fn users(&self, app: &str) -> Result<Vec<NodeId>, HarnessError> {
        let store = self.store(app)?;
        Ok(store.node_ids(store.dag().root_type()))
    }

    /// Independent copy of the whole lab, metadata included.
    pub fn fork(&self) -> Result<Lab, HarnessError> {
        let world = World::from_snapshot(self.world.snapshot(), Self::key_bases(&self.fixtures))
            .map_err(|e| HarnessError::State(e.to_string()))?;
        Ok(Self::assemble(
            world,
            self.fixtures.clone(),
            self.baseline.clone(),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let state = SavedLab {
            world: self.world.snapshot(),
            baseline: self
                .baseline
                .owners
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        };
        let body = serde_json::to_vec(&state).map_err(|e| HarnessError::State(e.to_string()))?;
        std::fs::write(path, body).map_err(|e| HarnessError::Io(path.to_owned(), e))
    }

    /// Restores a lab saved with [`Lab::save`] over the given fixtures.
    pub fn load(path: &Path, fixtures: Fixtures) -> Result<Lab, HarnessError> {
        let body = std::fs::read(path).map_err(|e| HarnessError::Io(path.to_owned(), e))?;
        let state: SavedLab =
            serde_json::from_slice(&body).map_err(|e| HarnessError::State(e.to_string()))?;
        let world = World::from_snapshot(state.world, Self::key_bases(&fixtures))
            .map_err(|e| HarnessError::State(e.to_string()))?;
        let baseline = Baseline {
            owners: state.baseline.into_iter().collect(),
        };
        Ok(Self::assemble(world, fixtures, baseline))
    }
}

#[derive(Serialize, Deserialize)]
struct SavedLab {
    world: WorldSnapshot,
    baseline: Vec<(NodeId, NodeId)>,
}
