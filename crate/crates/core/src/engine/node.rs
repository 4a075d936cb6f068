//! Per-migration state and the node-level steps shared by both
//! migration types.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;

use super::{
    weight, Costs, Counts, Decision, Lane, MigrationContext, MigrationReport, TimelineEntry, Txn,
    ValidationMode, NEW_ID_RETRIES,
};
use crate::clock::Meter;
use crate::error::{EngineError, StoreError};
use crate::model::{
    AttrRef, DataNode, Flags, InstanceGraph, MigrationType, NodeId, NodeSelector, RefKind, Value,
};
use crate::psm::SchemaMapping;
use crate::store::{
    AppStore, AttributeChangeRow, BagEntry, BagReason, Journal, MetaStore, MigrationId, Outcome,
    PlaceholderLoc, ReferenceRow, WalOp, World,
};
use crate::tracker::{Referent, Tracker};
use crate::validate::{Settle, Validator};

/// Shared-data policy: may `user` (a canonical root) migrate `node`,
/// which lives in `store`, with a migration of type `mtype`?
pub fn decide(
    world: &World,
    store: &AppStore,
    node: &DataNode,
    user: &NodeId,
    mtype: MigrationType,
) -> Decision {
    let tracker = Tracker::new(world);
    let Some(owner) = tracker.owner_of(store, node) else {
        return Decision::SkipNotShared;
    };
    if owner == *user {
        return Decision::Yes;
    }
    let grants = world.meta().grants_between(&owner, user);
    if grants.is_empty() {
        return Decision::SkipNotShared;
    }
    // A grant keeps covering the object after it moves: a node selector
    // through the identity class, a plain type selector through the
    // types the object had. Predicates only apply to the current shape.
    let class = world.meta().identity_class(&node.id);
    let matching: Vec<_> = grants
        .iter()
        .filter(|g| match &g.selector {
            NodeSelector::Node(id) => class.contains(id),
            NodeSelector::Type {
                node_type: Some(t),
                predicate: None,
            } => *t == node.id.node_type || class.iter().any(|m| m.node_type == *t),
            s => s.matches(node),
        })
        .collect();
    if matching.iter().any(|g| g.allowed.contains(&mtype)) {
        Decision::Yes
    } else if matching.is_empty() {
        Decision::SkipNotShared
    } else {
        Decision::SkipWrongType
    }
}

pub(crate) enum Placed {
    Arrived { dst: NodeId, touched: Vec<NodeId> },
    Bagged,
}

#[derive(Default)]
pub(crate) struct Acc {
    pub counts: Counts,
    pub timeline: BTreeMap<NodeId, TimelineEntry>,
    /// Destination node -> referent of each of its reference attributes.
    pub dst_refs: HashMap<NodeId, BTreeMap<AttrRef, Referent>>,
    pub dst_origin: HashMap<NodeId, NodeId>,
    /// Destination nodes in arrival order, with arrival time.
    pub arrivals: Vec<(NodeId, u64)>,
    pub done_at: HashMap<NodeId, u64>,
    pub migration_work: u64,
    pub walk_end: u64,
    pub end: u64,
    pub validation_work: u64,
    pub src_nodes: u64,
    pub src_edges: u64,
}

pub(crate) struct Run<'w> {
    pub world: &'w World,
    pub ctx: &'w MigrationContext,
    pub mid: MigrationId,
    /// Canonical root of the migrating user.
    pub user: NodeId,
    pub src: Arc<AppStore>,
    pub dst: Arc<AppStore>,
    pub txn: Txn,
    pub validator: Mutex<Validator>,
    pub acc: Mutex<Acc>,
    pub error: Mutex<Option<EngineError>>,
    home: SchemaMapping,
}

impl<'w> Run<'w> {
    pub fn new(
        world: &'w World,
        ctx: &'w MigrationContext,
        mid: MigrationId,
        user: NodeId,
        src: Arc<AppStore>,
        dst: Arc<AppStore>,
    ) -> Self {
        let home = SchemaMapping::identity(dst.dag());
        Run {
            txn: Txn::new(world.meta().clone(), mid, ctx.fault),
            validator: Mutex::new(Validator::new(None, ctx.seed, Meter::new())),
            acc: Mutex::new(Acc::default()),
            error: Mutex::new(None),
            world,
            ctx,
            mid,
            user,
            src,
            dst,
            home,
        }
    }

    pub fn meta(&self) -> &MetaStore {
        self.world.meta()
    }

    pub fn tracker(&self) -> Tracker<'w> {
        Tracker::new(self.world)
    }

    /// Records the first error of a worker and stops the others.
    pub fn fail(&self, e: EngineError) {
        self.txn.halt();
        let mut slot = self.error.lock();
        if slot.is_none() || matches!(e, EngineError::Crash { .. }) {
            *slot = Some(e);
        }
    }

    pub fn take_error(&self) -> Option<EngineError> {
        self.error.lock().take()
    }

    /// Mapping that carries nodes of `app` into the destination.
    pub fn mapping_for(&self, app: &crate::model::AppId) -> Option<&SchemaMapping> {
        if *app == self.ctx.src {
            Some(&self.ctx.mapping)
        } else if *app == self.ctx.dst {
            Some(&self.home)
        } else {
            self.ctx.bag_mappings.get(app).map(|m| &**m)
        }
    }

    fn before_cutoff(&self, node: &DataNode) -> bool {
        let Some(cutoff) = self.ctx.cutoff else {
            return true;
        };
        let dag = self.src.dag();
        let Some(anchor) = dag.anchor(&node.id.node_type) else {
            return true;
        };
        match &anchor.created {
            Some(c) => node
                .get(&AttrRef::new(&anchor.name, c))
                .as_int()
                .is_none_or(|t| t < cutoff),
            None => true,
        }
    }

    /// Nodes the user may take along: owned by or shared with the user.
    pub fn candidates(&self, lane: &mut Lane, root: &NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        for kind in [RefKind::Ownership, RefKind::Sharing] {
            let found = self.src.referencing(root, kind);
            lane.op(found.len() as u64 + 1, 0);
            for id in found {
                if let Some(n) = self.src.read(&id) {
                    if self.before_cutoff(&n) {
                        out.insert(id);
                    }
                }
            }
        }
        out.remove(root);
        out
    }

    /// Records the size of the user's graph: nodes, and edges touching them.
    pub fn measure_source(&self, root: &NodeId, nodes: &BTreeSet<NodeId>) {
        let dag = self.src.dag();
        let mut edges = 0u64;
        let all: Vec<&NodeId> = std::iter::once(root).chain(nodes.iter()).collect();
        for id in &all {
            let Some(n) = self.src.read(id) else { continue };
            if let Some(spec) = dag.node_type(&id.node_type) {
                edges += spec
                    .reference_edges()
                    .filter(|(_, e)| n.get(&e.from).as_int().is_some())
                    .count() as u64;
            }
            edges += self
                .src
                .dependents(id)
                .iter()
                .filter(|d| !nodes.contains(*d))
                .count() as u64;
        }
        let mut acc = self.acc.lock();
        acc.src_nodes = all.len() as u64;
        acc.src_edges = edges;
    }

    pub fn referents_src(&self, node: &DataNode) -> BTreeMap<AttrRef, Referent> {
        self.tracker().referents(&self.src, node)
    }

    /// Referents stored with a bag entry, with kinds from its origin DAG.
    pub fn bag_refs(&self, e: &BagEntry) -> BTreeMap<AttrRef, Referent> {
        let mut out = BTreeMap::new();
        let Some(store) = self.world.app(&e.origin.app) else {
            return out;
        };
        let Some(spec) = store.dag().node_type(&e.origin.node_type) else {
            return out;
        };
        for (kind, edge) in spec.reference_edges() {
            if let Some(n) = e.refs.get(&edge.from) {
                out.insert(
                    edge.from.clone(),
                    Referent {
                        node: n.clone(),
                        kind,
                    },
                );
            }
        }
        out
    }

    pub fn timeline(&self, origin: &NodeId, f: impl FnOnce(&mut TimelineEntry)) {
        let mut acc = self.acc.lock();
        let e = acc
            .timeline
            .entry(origin.clone())
            .or_insert_with(|| TimelineEntry {
                origin: origin.clone(),
                dst: None,
                source_invisible: None,
                arrived: None,
                displayed: None,
                from_bag: false,
            });
        f(e);
    }

    pub fn count(&self, f: impl FnOnce(&mut Counts)) {
        f(&mut self.acc.lock().counts);
    }

    // -- journaled primitives -------------------------------------------------

    pub fn put_bag(&self, lane: &mut Lane, entry: BagEntry) -> Result<(), EngineError> {
        let bytes: u64 = entry.attrs.values().map(Value::byte_size).sum();
        lane.op(1, bytes);
        let previous = self.meta().bag_get(&entry.origin);
        let seq = self.txn.log(WalOp::BagPut {
            owner: entry.owner.clone(),
            origin: entry.origin.clone(),
            previous,
        })?;
        self.meta().bag_put(entry);
        self.txn.applied(seq)
    }

    pub fn take_bag(&self, lane: &mut Lane, entry: &BagEntry) -> Result<(), EngineError> {
        lane.op(1, 0);
        let seq = self.txn.log(WalOp::BagTake {
            entry: entry.clone(),
        })?;
        self.meta().bag_take(&entry.owner, &entry.origin)?;
        self.txn.applied(seq)
    }

    /// Deletes a node from `store`, returning the virtual time it vanished.
    pub fn delete(
        &self,
        lane: &mut Lane,
        store: &AppStore,
        id: &NodeId,
    ) -> Result<u64, EngineError> {
        let pre = store
            .read(id)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        let (rows, _) = weight(store, &pre);
        let t = lane.op(rows, 0);
        let seq = self.txn.log(WalOp::DeleteNode { pre_image: pre })?;
        store.delete(id)?;
        self.txn.applied(seq)?;
        Ok(t)
    }

    pub fn mark_migrated(&self, lane: &mut Lane, id: &NodeId) -> Result<(), EngineError> {
        let Some(prev) = self.src.flags(id) else {
            return Ok(());
        };
        if prev.migrated {
            return Ok(());
        }
        lane.op(1, 0);
        let seq = self.txn.log(WalOp::MarkMigrated {
            node: id.clone(),
            prev,
        })?;
        self.src.set_flags(
            id,
            Some(prev),
            Flags {
                migrated: true,
                ..prev
            },
        )?;
        self.txn.applied(seq)
    }

    /// Entry holding the data of a whole node.
    fn whole_entry(
        &self,
        node: &DataNode,
        owner: NodeId,
        reason: BagReason,
        refs: &BTreeMap<AttrRef, Referent>,
        identity: &[AttrRef],
    ) -> BagEntry {
        BagEntry {
            owner,
            origin: node.id.clone(),
            attrs: node
                .attrs
                .iter()
                .filter(|(a, v)| !v.is_null() && !v.is_placeholder() && !identity.contains(a))
                .map(|(a, v)| (a.clone(), v.clone()))
                .collect(),
            refs: refs
                .iter()
                .map(|(a, r)| (a.clone(), r.node.clone()))
                .collect(),
            reason,
            partial: false,
            migration_id: self.mid,
        }
    }

    /// Bags a source node that would dangle, for its owner, and deletes it.
    pub fn bag_dangling(&self, lane: &mut Lane, id: &NodeId) -> Result<(), EngineError> {
        let Some(node) = self.src.read(id) else {
            return Ok(());
        };
        let tracker = self.tracker();
        let owner = tracker
            .owner_of(&self.src, &node)
            .unwrap_or_else(|| self.user.clone());
        let refs = self.referents_src(&node);
        let identity = self.src.dag().identity_attributes(&id.node_type);
        self.put_bag(
            lane,
            self.whole_entry(&node, owner, BagReason::DanglingSource, &refs, &identity),
        )?;
        let t = self.delete(lane, &self.src, id)?;
        self.timeline(id, |e| e.source_invisible = Some(t));
        self.count(|c| {
            c.considered += 1;
            c.bagged_dangling_source += 1;
            c.deleted += 1;
        });
        Ok(())
    }

    /// Source nodes that stop satisfying their display rule once every
    /// node in `removed` is gone, transitively, children before parents.
    pub fn doomed(&self, lane: &mut Lane, removed: &[NodeId]) -> Vec<NodeId> {
        let store = &*self.src;
        let mut gone: BTreeSet<NodeId> = removed.iter().cloned().collect();
        let mut found: Vec<NodeId> = Vec::new();
        let mut queue: Vec<NodeId> = removed.to_vec();
        let is_root = |id: &NodeId| store.dag().is_root(&id.node_type);
        while let Some(r) = queue.pop() {
            let kinds: &[RefKind] = if is_root(&r) {
                &[RefKind::Dependency, RefKind::Ownership, RefKind::Sharing]
            } else {
                &[RefKind::Dependency]
            };
            let mut refs: Vec<NodeId> = kinds
                .iter()
                .flat_map(|k| store.referencing(&r, *k))
                .collect();
            refs.sort();
            refs.dedup();
            lane.op(refs.len() as u64 + 1, 0);
            for x in refs {
                if gone.contains(&x) {
                    continue;
                }
                let Some(n) = store.read(&x) else { continue };
                if rule_holds(store, &n, &BTreeSet::new()) && !rule_holds(store, &n, &gone) {
                    gone.insert(x.clone());
                    found.push(x.clone());
                    queue.push(x);
                }
            }
        }
        leaf_first(store, found)
    }

    // -- node migration -------------------------------------------------------

    /// Moves one node (from the source DAG or from a bag) into the
    /// destination under the migration flag. Bags what the mapping cannot
    /// carry. Merges matching bag entries first.
    pub fn migrate_node(
        &self,
        lane: &mut Lane,
        mut node: DataNode,
        mut refs: BTreeMap<AttrRef, Referent>,
        mapping: &SchemaMapping,
        is_root: bool,
    ) -> Result<Placed, EngineError> {
        let meta = self.meta();
        let from_app = node.id.app.clone();
        let from_dag = self
            .world
            .app(&from_app)
            .ok_or_else(|| EngineError::UnknownApp(from_app.to_string()))?
            .dag()
            .clone();
        let identity = from_dag.identity_attributes(&node.id.node_type);
        let Some(nm) = mapping.node_map(&node.id.node_type) else {
            self.put_bag(
                lane,
                self.whole_entry(
                    &node,
                    self.user.clone(),
                    BagReason::NoMapping,
                    &refs,
                    &identity,
                ),
            )?;
            self.count(|c| c.bagged_no_mapping += 1);
            return Ok(Placed::Bagged);
        };
        let dst_dag = self.dst.dag().clone();
        let dst_type = nm.to_node.clone();
        let anchor = dst_dag
            .anchor(&dst_type)
            .ok_or_else(|| EngineError::Invalid(format!("unknown destination type {dst_type}")))?;
        let key_attr = AttrRef::new(&anchor.name, &anchor.key);
        let dst_identity = dst_dag.identity_attributes(&dst_type);
        let dst_attrs: BTreeSet<AttrRef> = dst_dag.node_attributes(&dst_type).into_iter().collect();

        // Bag entries for the same object: entries from the source app merge
        // into the node, entries from elsewhere fill what the mapping misses.
        let class = meta.identity_class(&node.id);
        lane.op(class.len() as u64, 0);
        let mut fills: Vec<(BTreeMap<AttrRef, Value>, BTreeMap<AttrRef, Referent>)> = Vec::new();
        let (mut merged, mut conflicts) = (0u64, 0u64);
        for m in &class {
            let Some(e) = meta.bag_get(m) else { continue };
            if e.migration_id == self.mid {
                continue;
            }
            if m.app == from_app {
                self.take_bag(lane, &e)?;
                for (a, v) in &e.attrs {
                    match node.attrs.get(a) {
                        None | Some(Value::Null) => {
                            node.attrs.insert(a.clone(), v.clone());
                        }
                        Some(cur) if cur != v => conflicts += 1,
                        _ => {}
                    }
                }
                for (a, r) in self.bag_refs(&e) {
                    refs.entry(a).or_insert(r);
                }
                merged += 1;
                continue;
            }
            let Some(tm) = self
                .mapping_for(&m.app)
                .and_then(|x| x.node_map(&m.node_type))
            else {
                continue;
            };
            if tm.to_node != dst_type {
                continue;
            }
            self.take_bag(lane, &e)?;
            let as_node = e.as_node();
            let entry_refs = self.bag_refs(&e);
            let mut vals = BTreeMap::new();
            let mut vrefs = BTreeMap::new();
            for am in &tm.attributes {
                if am.uses_new_id() || dst_identity.contains(&am.to) {
                    continue;
                }
                let v = am.eval(&as_node, &mut || 0);
                if !v.is_null() && !v.is_placeholder() {
                    vals.insert(am.to.clone(), v);
                }
                if am.is_pure_copy() {
                    if let Some(r) = entry_refs.get(&am.from[0]) {
                        vrefs.insert(am.to.clone(), r.clone());
                    }
                }
            }
            fills.push((vals, vrefs));
            merged += 1;
        }

        // Map the attributes.
        let mut fresh = || self.dst.fresh_key();
        let mut attrs: BTreeMap<AttrRef, Value> = BTreeMap::new();
        for am in &nm.attributes {
            attrs.insert(am.to.clone(), am.eval(&node, &mut fresh));
        }
        let mut dst_refs: BTreeMap<AttrRef, Referent> = BTreeMap::new();
        for am in nm.attributes.iter().filter(|a| a.is_pure_copy()) {
            if let Some(r) = refs.get(&am.from[0]) {
                dst_refs.insert(am.to.clone(), r.clone());
            }
        }
        for (vals, vrefs) in fills {
            for (a, v) in vals {
                if !dst_attrs.contains(&a) {
                    continue;
                }
                match attrs.get(&a) {
                    None | Some(Value::Null) => {
                        attrs.insert(a, v);
                    }
                    Some(cur) if *cur != v => conflicts += 1,
                    _ => {}
                }
            }
            for (a, r) in vrefs {
                dst_refs.entry(a).or_insert(r);
            }
        }
        for a in &dst_attrs {
            attrs.entry(a.clone()).or_insert(Value::Null);
        }

        let mut key = attrs
            .get(&key_attr)
            .and_then(Value::as_int)
            .unwrap_or_else(&mut fresh);
        let mut tries = 0;
        while self.dst.contains(&crate::model::NodeId {
            app: self.dst.app().clone(),
            node_type: dst_type.clone(),
            key,
        }) {
            tries += 1;
            if tries > NEW_ID_RETRIES {
                return Err(EngineError::KeysExhausted(node.id.clone()));
            }
            key = fresh();
        }
        for a in &dst_identity {
            attrs.insert(a.clone(), Value::Int(key));
        }
        let dst_id = NodeId {
            app: self.dst.app().clone(),
            node_type: dst_type.clone(),
            key,
        };
        let tracker = self.tracker();
        if tracker.live_identity(&node.id, self.dst.app()).is_some() {
            self.count(|c| c.duplicates += 1);
        }

        // Relationships as they were, before anything moves.
        let rows: Vec<ReferenceRow> = refs
            .iter()
            .map(|(a, r)| ReferenceRow {
                migration_id: self.mid,
                app: from_app.clone(),
                from_node: node.id.clone(),
                from_attr: a.clone(),
                to_node: r.node.clone(),
                kind: r.kind,
            })
            .collect();
        lane.op(rows.len() as u64, 0);
        meta.record_references(rows);

        let dn = DataNode {
            id: dst_id.clone(),
            attrs,
            flags: Flags::ARRIVED,
        };
        let (wrows, wbytes) = weight(&self.dst, &dn);
        let t_arr = lane.op(wrows, wbytes);
        let op = if is_root {
            WalOp::CopyRoot {
                src: node.id.clone(),
                dst: dst_id.clone(),
            }
        } else {
            WalOp::MigrateNode {
                src: node.id.clone(),
                dst: dst_id.clone(),
            }
        };
        let seq = self.txn.log(op)?;
        self.dst.insert(&dn)?;
        self.txn.applied(seq)?;

        lane.op(1, 0);
        meta.record_attribute_change(AttributeChangeRow {
            migration_id: self.mid,
            from_app: from_app.clone(),
            to_app: self.dst.app().clone(),
            old_node: node.id.clone(),
            new_node: dst_id.clone(),
            attr: key_attr,
            old_value: Value::Int(node.id.key),
            new_value: Value::Int(key),
        })?;

        // Whatever the mapping leaves behind goes to the user's bag.
        let used = nm.mapped_sources();
        let leftovers: BTreeMap<AttrRef, Value> = node
            .attrs
            .iter()
            .filter(|(a, v)| {
                !used.contains(a) && !identity.contains(a) && !v.is_null() && !v.is_placeholder()
            })
            .map(|(a, v)| (a.clone(), v.clone()))
            .collect();
        let leftover_refs: BTreeMap<AttrRef, NodeId> = refs
            .iter()
            .filter(|(a, _)| !used.contains(a))
            .map(|(a, r)| (a.clone(), r.node.clone()))
            .collect();
        if !leftovers.is_empty() || !leftover_refs.is_empty() {
            self.put_bag(
                lane,
                BagEntry {
                    owner: self.user.clone(),
                    origin: node.id.clone(),
                    attrs: leftovers,
                    refs: leftover_refs,
                    reason: BagReason::NoMapping,
                    partial: true,
                    migration_id: self.mid,
                },
            )?;
        }

        if is_root {
            self.validator.lock().set_user_root(dst_id.clone());
        }
        let ref_edges = dst_dag
            .node_type(&dst_type)
            .map_or(0, |s| s.reference_edges().count());
        lane.op(ref_edges as u64, 0);
        let changed = tracker.relink(&self.txn, &dst_id, &dst_refs)?;
        let touched = tracker.resolve_on_arrival(&self.txn, &dst_id)?;
        lane.op(touched.len() as u64 + 1, 0);

        let mut acc = self.acc.lock();
        acc.counts.relinked += changed.len() as u64 + touched.len() as u64;
        acc.counts.merged += merged;
        acc.counts.merge_conflicts += conflicts;
        acc.dst_refs.insert(dst_id.clone(), dst_refs);
        acc.dst_origin.insert(dst_id.clone(), node.id.clone());
        drop(acc);
        self.timeline(&node.id, |e| {
            e.dst = Some(dst_id.clone());
            e.arrived = Some(t_arr);
        });
        Ok(Placed::Arrived {
            dst: dst_id,
            touched,
        })
    }

    /// Tells validation about an arrival at virtual time `t`.
    pub fn announce(&self, dst: &NodeId, touched: &[NodeId], t: u64) -> Result<(), EngineError> {
        self.acc.lock().arrivals.push((dst.clone(), t));
        if self.ctx.validation != ValidationMode::Concurrent {
            return Ok(());
        }
        let mut v = self.validator.lock();
        v.on_arrival(&self.dst, self.meta(), &self.txn, dst, t)?;
        v.on_changed(&self.dst, self.meta(), &self.txn, touched, t)
    }

    /// Runs what is left of validation once the walk is over at `t`.
    pub fn finish_validation(&self, t: u64) -> Result<(), EngineError> {
        let mut v = self.validator.lock();
        match self.ctx.validation {
            ValidationMode::Off => {}
            ValidationMode::Concurrent => {
                v.phase2(&self.dst, self.meta(), &self.txn, self, t)?;
            }
            ValidationMode::Deferred => {
                v.lane().catch_up(t);
                let arrivals = self.acc.lock().arrivals.clone();
                for (id, _) in arrivals {
                    if self.dst.contains(&id) {
                        v.on_arrival(&self.dst, self.meta(), &self.txn, &id, t)?;
                    }
                }
                v.phase2(&self.dst, self.meta(), &self.txn, self, t)?;
            }
        }
        let shown: Vec<(NodeId, u64)> = v.shown_at().iter().map(|(k, t)| (k.clone(), *t)).collect();
        let mut acc = self.acc.lock();
        acc.counts.displayed = shown.len() as u64;
        acc.validation_work = v.busy();
        acc.end = acc.walk_end.max(v.lane().now());
        for (id, ts) in shown {
            if let Some(o) = acc.dst_origin.get(&id).cloned() {
                if let Some(e) = acc.timeline.get_mut(&o) {
                    e.displayed = Some(ts);
                }
            }
        }
        Ok(())
    }

    pub fn close_lane(&self, lane: &Lane) {
        let mut acc = self.acc.lock();
        acc.migration_work += lane.work();
        acc.walk_end = acc.walk_end.max(lane.now());
    }

    pub fn report(&self, outcome: Outcome, error: Option<String>) -> MigrationReport {
        let acc = self.acc.lock();
        let dag = self.dst.dag();
        let mut dst_nodes = 0;
        let mut dst_edges = 0;
        for (id, _) in &acc.arrivals {
            let Some(n) = self.dst.read(id) else { continue };
            dst_nodes += 1;
            if let Some(spec) = dag.node_type(&id.node_type) {
                dst_edges += spec
                    .reference_edges()
                    .filter(|(_, e)| n.get(&e.from).as_int().is_some())
                    .count() as u64;
            }
        }
        let mut counts = acc.counts.clone();
        let mut timeline: Vec<TimelineEntry> = acc.timeline.values().cloned().collect();
        if outcome == Outcome::RolledBack {
            counts = Counts::default();
            timeline.clear();
        }
        MigrationReport {
            migration_id: self.mid,
            user: self.ctx.user.clone(),
            src: self.ctx.src.clone(),
            dst: self.ctx.dst.clone(),
            mtype: self.ctx.mtype,
            outcome,
            counts,
            timeline,
            costs: Costs {
                walk_end: acc.walk_end,
                end: acc.end.max(acc.walk_end),
                migration_work: acc.migration_work,
                validation_work: acc.validation_work,
            },
            src_nodes: acc.src_nodes,
            src_edges: acc.src_edges,
            dst_nodes: if outcome == Outcome::RolledBack {
                0
            } else {
                dst_nodes
            },
            dst_edges: if outcome == Outcome::RolledBack {
                0
            } else {
                dst_edges
            },
            error,
        }
    }
}

impl Settle for Run<'_> {
    fn relink(&self, j: &dyn Journal, node: &NodeId) -> Result<(), EngineError> {
        let refs = self.acc.lock().dst_refs.get(node).cloned();
        if let Some(refs) = refs {
            let n = self.tracker().relink(j, node, &refs)?.len();
            self.count(|c| c.relinked += n as u64);
        }
        Ok(())
    }

    fn bag_failed(&self, j: &dyn Journal, node: &NodeId) -> Result<(), EngineError> {
        let Some(dn) = self.dst.read(node) else {
            return Ok(());
        };
        let tracker = self.tracker();
        let owner = tracker
            .ownership_of_migrated(node)
            .unwrap_or_else(|_| self.user.clone());
        let refs = tracker.referents(&self.dst, &dn);
        let identity = self.dst.dag().identity_attributes(&node.node_type);
        let entry = self.whole_entry(&dn, owner, BagReason::FailedValidation, &refs, &identity);
        let previous = self.meta().bag_get(&entry.origin);
        let seq = j.log(WalOp::BagPut {
            owner: entry.owner.clone(),
            origin: entry.origin.clone(),
            previous,
        })?;
        self.meta().bag_put(entry);
        j.applied(seq)?;
        // Placeholders die with the node; journal them so rollback can
        // bring them back.
        for attr in refs.keys() {
            let loc = PlaceholderLoc {
                app: node.app.clone(),
                table: attr.table.clone(),
                row: node.key,
                attr: attr.attr.clone(),
            };
            if let Some(p) = self.meta().placeholder_at(&loc) {
                let seq = j.log(WalOp::Relink {
                    node: node.clone(),
                    attr: attr.clone(),
                    old: dn.get(attr).clone(),
                    old_placeholder: Some(p),
                })?;
                self.meta().placeholder_clear(&loc);
                j.applied(seq)?;
            }
        }
        let seq = j.log(WalOp::DeleteNode { pre_image: dn })?;
        self.dst.delete(node)?;
        j.applied(seq)?;
        self.count(|c| c.bagged_failed_validation += 1);
        Ok(())
    }
}

/// Whether `node` satisfies its display rule in `store` when the nodes
/// in `gone` are treated as absent.
pub(crate) fn rule_holds(store: &AppStore, node: &DataNode, gone: &BTreeSet<NodeId>) -> bool {
    let dag = store.dag();
    if dag.is_root(&node.id.node_type) {
        return true;
    }
    let Some(spec) = dag.node_type(&node.id.node_type) else {
        return false;
    };
    let present = |id: &NodeId| !gone.contains(id) && store.is_visible(id);
    let rule = &spec.display_rule;
    if rule.requires_parents_displayed {
        for e in spec
            .depends_on
            .iter()
            .filter(|e| !rule.exceptions.contains(&e.to))
        {
            match node.get(&e.from) {
                Value::Null => {}
                Value::Placeholder(_) => return false,
                v => {
                    if !dag.referenced(e, v).is_some_and(|p| present(&p)) {
                        return false;
                    }
                }
            }
        }
    }
    let any = |edges: &[crate::model::EdgeSpec]| {
        edges.iter().any(|e| {
            dag.referenced(e, node.get(&e.from))
                .is_some_and(|r| present(&r))
        })
    };
    match (rule.requires_owner_root, rule.requires_sharer_root) {
        (false, false) => true,
        (true, false) => any(&spec.owned_by),
        (false, true) => any(&spec.shared_with),
        (true, true) => any(&spec.owned_by) || any(&spec.shared_with),
    }
}

/// Orders `nodes` so that every node precedes the nodes it depends on.
fn leaf_first(store: &AppStore, nodes: Vec<NodeId>) -> Vec<NodeId> {
    let set: BTreeSet<NodeId> = nodes.iter().cloned().collect();
    let mut pending: BTreeMap<NodeId, usize> = nodes
        .iter()
        .map(|n| {
            let k = store
                .dependents(n)
                .iter()
                .filter(|d| set.contains(*d))
                .count();
            (n.clone(), k)
        })
        .collect();
    let mut out = Vec::with_capacity(nodes.len());
    let mut ready: BTreeSet<NodeId> = pending
        .iter()
        .filter(|(_, k)| **k == 0)
        .map(|(n, _)| n.clone())
        .collect();
    while let Some(n) = ready.pop_first() {
        pending.remove(&n);
        for p in store.dependencies(&n) {
            if let Some(k) = pending.get_mut(&p) {
                *k -= 1;
                if *k == 0 {
                    ready.insert(p);
                }
            }
        }
        out.push(n);
    }
    // Anything left sits on an instance cycle; keep it rather than drop it.
    out.extend(pending.into_keys());
    out
}
