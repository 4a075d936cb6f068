//! Baselines without ordering, flags, bags or tracking. Naive copies a
//! user's owned data in a fixed entity order and deletes it at the
//! source as it goes; afterwards it deletes whatever became dangling in
//! either application, since it cannot re-integrate it. Naive+ adds a
//! destination lock: nothing arrives visible, and one validation pass at
//! the end displays what is valid.

use std::collections::{BTreeMap, HashMap};

use dagmig_core::clock::Meter;
use dagmig_core::engine::{Costs, Counts, MigrationReport, TimelineEntry};
use dagmig_core::model::{AttrRef, DataNode, Flags, MigrationType, NodeId, RefKind, Value};
use dagmig_core::psm::SchemaMapping;
use dagmig_core::store::{AppStore, Outcome, World};
use dagmig_core::validate::is_displayable;
use serde::{Deserialize, Serialize};

use crate::audit::dangling_reason;
use crate::HarnessError;

/// Migration id used for baseline display events.
pub const BASELINE_MIGRATION: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveReport {
    pub report: MigrationReport,
    /// Dangling objects found (and deleted) after this migration.
    pub dangling_src: u64,
    pub dangling_dst: u64,
    /// Objects written to the destination.
    pub arrived: u64,
}

/// One baseline run over several users. Keeps the old-to-new key map
/// so later users' references to earlier users' data can be substituted.
#[derive(Debug, Default)]
pub struct Naive {
    locked: bool,
    ids: HashMap<NodeId, NodeId>,
}

/// Blob-aware size, the same transfer model the engine charges.
fn weight(store: &AppStore, n: &DataNode) -> (u64, u64) {
    let dag = store.dag();
    let Some(spec) = dag.node_type(&n.id.node_type) else {
        return (1, n.byte_size());
    };
    let blobs: u64 = spec
        .tables
        .iter()
        .filter_map(|t| dag.schema().table(t))
        .filter_map(|t| t.blob_size.as_ref().map(|b| AttrRef::new(&t.name, b)))
        .filter_map(|a| n.get(&a).as_int())
        .map(|v| v.max(0) as u64)
        .sum();
    (spec.tables.len() as u64, n.byte_size() + blobs)
}

impl Naive {
    pub fn plain() -> Naive {
        Naive::default()
    }

    pub fn locked() -> Naive {
        Naive {
            locked: true,
            ids: HashMap::new(),
        }
    }

    /// Source node types in the baseline's fixed order: posts, likes,
    /// comments, conversations, messages, then the rest by name.
    fn order(src: &AppStore) -> Vec<String> {
        let app = src.app().as_str();
        let mut out: Vec<String> = Vec::new();
        if let Some(p) = dagmig_synth::profile(app) {
            for sh in [p.post, p.like, p.comment, p.conversation, p.message]
                .into_iter()
                .flatten()
            {
                out.push(sh.node_type.to_owned());
            }
        }
        let dag = src.dag();
        let mut rest: Vec<String> = dag
            .node_types()
            .iter()
            .map(|n| n.name.clone())
            .filter(|n| !out.contains(n) && !dag.is_root(n))
            .collect();
        rest.sort();
        out.extend(rest);
        out
    }

    fn translate(
        &mut self,
        src: &AppStore,
        dst: &AppStore,
        m: &SchemaMapping,
        n: &DataNode,
    ) -> Option<DataNode> {
        let nm = m.node_map(&n.id.node_type)?;
        let sdag = src.dag();
        let spec = sdag.node_type(&n.id.node_type)?;
        let edges: BTreeMap<&AttrRef, &str> = spec
            .reference_edges()
            .map(|(_, e)| (&e.from, e.to.as_str()))
            .collect();
        let key = dst.fresh_key();
        let mut attrs = BTreeMap::new();
        for am in &nm.attributes {
            let mut v = am.eval(n, &mut || key);
            // Direct id substitution for references to data already moved.
            if am.is_pure_copy() {
                if let Some(to) = edges.get(&am.from[0]) {
                    if let Some(k) = v.as_int() {
                        let old = NodeId::new(sdag.app().as_str(), *to, k);
                        if let Some(new) = self.ids.get(&old) {
                            v = Value::Int(new.key);
                        }
                    }
                }
            }
            attrs.insert(am.to.clone(), v);
        }
        let id = NodeId::new(dst.app().as_str(), &nm.to_node, key);
        let flags = if self.locked {
            Flags::ARRIVED
        } else {
            Flags::NATIVE
        };
        Some(DataNode { id, attrs, flags })
    }

    /// Migrates `user` with `mapping` (source and destination taken from
    /// it). The root is copied first and deleted last.
    pub fn migrate(
        &mut self,
        world: &World,
        user: &NodeId,
        mapping: &SchemaMapping,
    ) -> Result<NaiveReport, HarnessError> {
        let get = |a: &dagmig_core::model::AppId| {
            world
                .app(a)
                .cloned()
                .ok_or_else(|| HarnessError::Usage(format!("unknown application {a}")))
        };
        let (src, dst) = (get(&mapping.from_app)?, get(&mapping.to_app)?);
        let root = src
            .read(user)
            .ok_or_else(|| HarnessError::Usage(format!("{user} is not in {}", mapping.from_app)))?;
        let clock = Meter::new();
        let mut counts = Counts::default();
        let mut timeline: BTreeMap<NodeId, TimelineEntry> = BTreeMap::new();
        let mut arrived_ids: Vec<NodeId> = Vec::new();
        let mut src_edges = 0u64;

        let mut owned: Vec<DataNode> = Vec::new();
        for id in src.referencing(user, RefKind::Ownership) {
            if let Some(n) = src.read(&id) {
                owned.push(n);
            }
        }
        let order = Self::order(&src);
        owned.sort_by_key(|n| {
            (
                order
                    .iter()
                    .position(|t| *t == n.id.node_type)
                    .unwrap_or(usize::MAX),
                n.id.key,
            )
        });

        let mut copy =
            |me: &mut Self, n: &DataNode, delete: bool| -> Result<Option<NodeId>, HarnessError> {
                let (rows, bytes) = weight(&src, n);
                clock.txn(rows, 0);
                src_edges += src.dag().node_type(&n.id.node_type).map_or(0, |s| {
                    s.reference_edges()
                        .filter(|(_, e)| n.get(&e.from).as_int().is_some())
                        .count() as u64
                });
                let out = match me.translate(&src, &dst, mapping, n) {
                    Some(new) => {
                        dst.insert(&new)
                            .map_err(dagmig_core::error::EngineError::from)?;
                        let t = clock.txn(rows, bytes);
                        me.ids.insert(n.id.clone(), new.id.clone());
                        timeline.insert(
                            n.id.clone(),
                            TimelineEntry {
                                origin: n.id.clone(),
                                dst: Some(new.id.clone()),
                                source_invisible: None,
                                arrived: Some(t),
                                displayed: (!me.locked).then_some(t),
                                from_bag: false,
                            },
                        );
                        Some(new.id)
                    }
                    None => None,
                };
                if delete {
                    src.delete(&n.id)
                        .map_err(dagmig_core::error::EngineError::from)?;
                    let t = clock.txn(1, 0);
                    counts.deleted += 1;
                    if let Some(e) = timeline.get_mut(&n.id) {
                        e.source_invisible = Some(t);
                    }
                }
                Ok(out)
            };

        if let Some(id) = copy(self, &root, false)? {
            arrived_ids.push(id);
        }
        for n in &owned {
            counts.considered += 1;
            if let Some(id) = copy(self, n, true)? {
                counts.migrated += 1;
                arrived_ids.push(id);
            }
        }
        src.delete(user)
            .map_err(dagmig_core::error::EngineError::from)?;
        let t = clock.txn(1, 0);
        if let Some(e) = timeline.get_mut(user) {
            e.source_invisible = Some(t);
        }
        let walk_end = clock.now();

        if self.locked {
            // One validation pass, parents first.
            let dag = dst.dag().clone();
            let new_root = self.ids.get(user).cloned();
            let rank: HashMap<&str, usize> = dag
                .topo_types()
                .iter()
                .enumerate()
                .map(|(i, t)| (t.as_str(), i))
                .collect();
            let mut pending = arrived_ids.clone();
            pending.sort_by_key(|id| {
                (
                    rank.get(id.node_type.as_str())
                        .copied()
                        .unwrap_or(usize::MAX),
                    id.key,
                )
            });
            let end = clock.txn(pending.len() as u64, 0);
            let back: HashMap<&NodeId, &NodeId> = self.ids.iter().map(|(o, n)| (n, o)).collect();
            for id in &pending {
                let Some(n) = dst.read(id) else { continue };
                if is_displayable(&dst, &n, new_root.as_ref()) {
                    dst.set_flags(id, None, Flags::NATIVE)
                        .map_err(dagmig_core::error::EngineError::from)?;
                    world
                        .meta()
                        .push_display_event(BASELINE_MIGRATION, id.clone(), end);
                    counts.displayed += 1;
                    if let Some(e) = back.get(id).and_then(|o| timeline.get_mut(*o)) {
                        e.displayed = Some(end);
                    }
                }
            }
        } else {
            counts.displayed = arrived_ids.len() as u64;
        }

        let gone: Vec<NodeId> = owned
            .iter()
            .map(|n| n.id.clone())
            .chain([user.clone()])
            .collect();
        let dangling_src = sweep_from(&src, gone);
        let dangling_dst = sweep_from(&dst, arrived_ids.clone());
        let end = clock.now();
        Ok(NaiveReport {
            report: MigrationReport {
                migration_id: BASELINE_MIGRATION,
                user: user.clone(),
                src: mapping.from_app.clone(),
                dst: mapping.to_app.clone(),
                mtype: MigrationType::Deletion,
                outcome: Outcome::Committed,
                counts,
                timeline: timeline.into_values().collect(),
                costs: Costs {
                    walk_end,
                    end,
                    migration_work: walk_end,
                    validation_work: end - walk_end,
                },
                src_nodes: owned.len() as u64 + 1,
                src_edges,
                dst_nodes: arrived_ids.len() as u64,
                dst_edges: 0,
                error: None,
            },
            dangling_src,
            dangling_dst,
            arrived: arrived_ids.len() as u64,
        })
    }
}

/// Deletes shown nodes that are dangling until none are left. Returns
/// how many were deleted.
pub fn sweep(store: &AppStore) -> u64 {
    sweep_from(store, store.all_ids())
}

/// Like [`sweep`], but only `seeds` and whatever refers to a deleted
/// node are examined; anything else cannot have changed.
pub fn sweep_from(store: &AppStore, seeds: Vec<NodeId>) -> u64 {
    let kinds = [RefKind::Dependency, RefKind::Ownership, RefKind::Sharing];
    let mut work = seeds;
    let mut total = 0;
    while let Some(id) = work.pop() {
        let Some(n) = store.read(&id) else {
            // Already gone: its referrers may dangle now.
            for k in kinds {
                work.extend(store.referencing(&id, k));
            }
            continue;
        };
        if n.flags.app_visible()
            && dangling_reason(store, &n).is_some()
            && store.delete(&id).is_ok()
        {
            total += 1;
            for k in kinds {
                work.extend(store.referencing(&id, k));
            }
        }
    }
    total
}

/// Naive migration of one user with a fresh key map.
pub fn run_naive(
    world: &World,
    user: &NodeId,
    mapping: &SchemaMapping,
) -> Result<NaiveReport, HarnessError> {
    Naive::plain().migrate(world, user, mapping)
}

/// Naive+ migration of one user with a fresh key map.
pub fn run_naive_plus(
    world: &World,
    user: &NodeId,
    mapping: &SchemaMapping,
) -> Result<NaiveReport, HarnessError> {
    Naive::locked().migrate(world, user, mapping)
}
