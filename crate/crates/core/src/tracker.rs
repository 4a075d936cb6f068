//! Relationship tracker: resolves references after identities change,
//! writes placeholders for referents that are elsewhere, and rewrites
//! those placeholders when the referent shows up.

use std::collections::BTreeMap;

use crate::error::{EngineError, TrackerError};
use crate::model::{AppId, AttrRef, DataNode, NodeId, RefKind, Value};
use crate::store::{
    AppStore, Journal, MetaStore, PlaceholderInfo, PlaceholderKind, PlaceholderLoc, WalOp, World,
};

/// Referent of one reference attribute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Referent {
    pub node: NodeId,
    pub kind: RefKind,
}

pub struct Tracker<'w> {
    world: &'w World,
}

impl<'w> Tracker<'w> {
    pub fn new(world: &'w World) -> Self {
        Tracker { world }
    }

    fn meta(&self) -> &MetaStore {
        self.world.meta()
    }

    /// The identity a user (or any node) had first.
    pub fn canonical(&self, node: &NodeId) -> NodeId {
        self.meta().earliest(node)
    }

    /// Referents of every reference attribute of `node`, which lives (or
    /// lived) in `store`. Raw keys resolve through the DAG, placeholders
    /// through the side table.
    pub fn referents(&self, store: &AppStore, node: &DataNode) -> BTreeMap<AttrRef, Referent> {
        let dag = store.dag();
        let mut out = BTreeMap::new();
        let Some(spec) = dag.node_type(&node.id.node_type) else {
            return out;
        };
        for (kind, e) in spec.reference_edges() {
            let v = node.get(&e.from);
            let target = match v {
                Value::Placeholder(_) => self
                    .meta()
                    .placeholder_at(&PlaceholderLoc {
                        app: store.app().clone(),
                        table: e.from.table.clone(),
                        row: node.id.key,
                        attr: e.from.attr.clone(),
                    })
                    .map(|p| p.original),
                other => dag.referenced(e, other),
            };
            if let Some(t) = target {
                out.insert(e.from.clone(), Referent { node: t, kind });
            }
        }
        out
    }

    /// A live node of `app` that is the same logical object as `node`.
    pub fn live_identity(&self, node: &NodeId, app: &AppId) -> Option<NodeId> {
        let store = self.world.app(app)?;
        if node.app == *app && store.contains(node) {
            return Some(node.clone());
        }
        self.meta()
            .identity_class(node)
            .into_iter()
            .filter(|m| m.app == *app && store.contains(m))
            .max()
    }

    fn loc(app: &AppId, node: &NodeId, attr: &AttrRef) -> PlaceholderLoc {
        PlaceholderLoc {
            app: app.clone(),
            table: attr.table.clone(),
            row: node.key,
            attr: attr.attr.clone(),
        }
    }

    /// Rewrites the reference attributes of `node` (a destination node)
    /// given the referent each attribute should point at. Returns the
    /// attributes that changed.
    pub fn relink(
        &self,
        j: &dyn Journal,
        node: &NodeId,
        refs: &BTreeMap<AttrRef, Referent>,
    ) -> Result<Vec<AttrRef>, EngineError> {
        let store = self
            .world
            .app(&node.app)
            .ok_or_else(|| EngineError::UnknownApp(node.app.to_string()))?;
        let Some(current) = store.read(node) else {
            return Ok(Vec::new());
        };
        let dag = store.dag();
        let Some(spec) = dag.node_type(&node.node_type) else {
            return Ok(Vec::new());
        };
        let mut changed = Vec::new();
        for (_, e) in spec.reference_edges() {
            let Some(r) = refs.get(&e.from) else { continue };
            let cur = current.get(&e.from).clone();
            let loc = Self::loc(&node.app, node, &e.from);
            let existing = self.meta().placeholder_at(&loc);
            let target = self
                .live_identity(&r.node, &node.app)
                .filter(|t| t.node_type == e.to);
            match target {
                Some(t) => {
                    let want = Value::Int(t.key);
                    if cur == want && existing.is_none() {
                        continue;
                    }
                    let seq = j.log(WalOp::Relink {
                        node: node.clone(),
                        attr: e.from.clone(),
                        old: cur,
                        old_placeholder: existing,
                    })?;
                    store.update_attr(node, &e.from, want)?;
                    self.meta().placeholder_clear(&loc);
                    j.applied(seq)?;
                }
                None => {
                    if cur.is_placeholder()
                        && existing.as_ref().is_some_and(|p| p.original == r.node)
                    {
                        continue;
                    }
                    let kind = if dag.is_root(&e.to) {
                        PlaceholderKind::AbsentUser
                    } else {
                        PlaceholderKind::RemoteData
                    };
                    let seq = j.log(WalOp::Relink {
                        node: node.clone(),
                        attr: e.from.clone(),
                        old: cur,
                        old_placeholder: existing,
                    })?;
                    store.update_attr(node, &e.from, Value::placeholder())?;
                    self.meta().placeholder_set(PlaceholderInfo {
                        loc,
                        original: r.node.clone(),
                        kind,
                        migration_id: j.migration_id(),
                    });
                    j.applied(seq)?;
                }
            }
            changed.push(e.from.clone());
        }
        Ok(changed)
    }

    /// Points every placeholder standing for `arrived` (under any of its
    /// identities) at `arrived`. Returns the nodes that were rewritten.
    pub fn resolve_on_arrival(
        &self,
        j: &dyn Journal,
        arrived: &NodeId,
    ) -> Result<Vec<NodeId>, EngineError> {
        let Some(store) = self.world.app(&arrived.app) else {
            return Ok(Vec::new());
        };
        if !store.contains(arrived) {
            return Ok(Vec::new());
        }
        let dag = store.dag();
        let mut touched = Vec::new();
        for m in self.meta().identity_class(arrived) {
            for p in self.meta().placeholders_for(&m) {
                if p.loc.app != arrived.app {
                    continue;
                }
                let Some(ty) = dag.type_of_table(&p.loc.table) else {
                    continue;
                };
                let attr = p.loc.attr_ref();
                let points_here = ty
                    .reference_edges()
                    .any(|(_, e)| e.from == attr && e.to == arrived.node_type);
                if !points_here {
                    continue;
                }
                let holder = NodeId {
                    app: arrived.app.clone(),
                    node_type: ty.name.clone(),
                    key: p.loc.row,
                };
                let Some(cur) = store.read(&holder).map(|n| n.get(&attr).clone()) else {
                    continue;
                };
                let seq = j.log(WalOp::Relink {
                    node: holder.clone(),
                    attr: attr.clone(),
                    old: cur,
                    old_placeholder: Some(p.clone()),
                })?;
                store.update_attr(&holder, &attr, Value::Int(arrived.key))?;
                self.meta().placeholder_clear(&p.loc);
                j.applied(seq)?;
                touched.push(holder);
            }
        }
        touched.sort();
        touched.dedup();
        Ok(touched)
    }

    /// Canonical owner a migrated node had before it moved.
    pub fn ownership_of_migrated(&self, node: &NodeId) -> Result<NodeId, TrackerError> {
        let ancestors = self.meta().ancestors(node);
        if ancestors.is_empty() {
            return Err(TrackerError::NotTracked(node.clone()));
        }
        let is_root = self
            .world
            .app(&node.app)
            .is_some_and(|s| s.dag().is_root(&node.node_type));
        if is_root {
            return Ok(self.canonical(node));
        }
        for a in &ancestors {
            if let Some(r) = self
                .meta()
                .references_from(a)
                .into_iter()
                .find(|r| r.kind == RefKind::Ownership)
            {
                return Ok(self.canonical(&r.to_node));
            }
        }
        Err(TrackerError::NotTracked(node.clone()))
    }

    /// Canonical owner of a node at its current location: through the
    /// ownership attribute, a placeholder, or the tracked history.
    pub fn owner_of(&self, store: &AppStore, node: &DataNode) -> Option<NodeId> {
        if store.dag().is_root(&node.id.node_type) {
            return Some(self.canonical(&node.id));
        }
        let refs = self.referents(store, node);
        refs.values()
            .find(|r| r.kind == RefKind::Ownership)
            .map(|r| self.canonical(&r.node))
            .or_else(|| self.ownership_of_migrated(&node.id).ok())
    }

    /// Canonical roots a node is shared with.
    pub fn sharers_of(&self, store: &AppStore, node: &DataNode) -> Vec<NodeId> {
        self.referents(store, node)
            .values()
            .filter(|r| r.kind == RefKind::Sharing)
            .map(|r| self.canonical(&r.node))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::tests::{fig4, put, src, ALICE, BOB};
    use crate::engine::{migrate, MigrationContext};
    use crate::model::MigrationType;
    use crate::store::AttributeChangeRow;
    use crate::validate::Unjournaled;

    fn dst(ty: &str, key: i64) -> NodeId {
        NodeId::new("dst", ty, key)
    }

    fn moved(world: &World, old: &NodeId, new: &NodeId, attr: AttrRef) {
        world
            .meta()
            .record_attribute_change(AttributeChangeRow {
                migration_id: 1,
                from_app: old.app.clone(),
                to_app: new.app.clone(),
                old_node: old.clone(),
                new_node: new.clone(),
                attr,
                old_value: Value::Int(old.key),
                new_value: Value::Int(new.key),
            })
            .unwrap();
    }

    fn refs(attr: AttrRef, to: NodeId) -> BTreeMap<AttrRef, Referent> {
        [(
            attr,
            Referent {
                node: to,
                kind: RefKind::Dependency,
            },
        )]
        .into()
    }

    #[test]
    fn relink_replaces_the_stale_source_key() {
        let f = fig4();
        let w = &f.world;
        put(w, &dst("account", 11), &[]);
        put(w, &dst("status", 12), &[("account_id", 11.into())]);
        moved(
            w,
            &src("post", 2),
            &dst("status", 12),
            AttrRef::new("statuses", "id"),
        );
        // Copied verbatim, the reply would point at status 2.
        put(
            w,
            &dst("reply", 13),
            &[("account_id", 11.into()), ("status_id", 2.into())],
        );
        let attr = AttrRef::new("replies", "status_id");
        let t = Tracker::new(w);
        let changed = t
            .relink(
                &Unjournaled(1),
                &dst("reply", 13),
                &refs(attr.clone(), src("post", 2)),
            )
            .unwrap();
        assert_eq!(changed, vec![attr.clone()]);
        let reply = w
            .app(&AppId::from("dst"))
            .unwrap()
            .read(&dst("reply", 13))
            .unwrap();
        assert_eq!(reply.get(&attr), &Value::Int(12));
    }

    #[test]
    fn referent_left_behind_becomes_a_placeholder() {
        let f = fig4();
        let w = &f.world;
        put(w, &dst("answer", 20), &[("reply_id", 5.into())]);
        let attr = AttrRef::new("answers", "reply_id");
        let t = Tracker::new(w);
        t.relink(
            &Unjournaled(1),
            &dst("answer", 20),
            &refs(attr.clone(), src("comment", 5)),
        )
        .unwrap();
        let store = w.app(&AppId::from("dst")).unwrap();
        assert!(store
            .read(&dst("answer", 20))
            .unwrap()
            .get(&attr)
            .is_placeholder());
        let p = w.meta().placeholders_for(&src("comment", 5));
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].kind, PlaceholderKind::RemoteData);
        // The stored referent survives a second relink unchanged.
        let again = t
            .relink(
                &Unjournaled(1),
                &dst("answer", 20),
                &refs(attr, src("comment", 5)),
            )
            .unwrap();
        assert!(again.is_empty());
    }

    #[test]
    fn arrival_resolves_placeholders_once() {
        let f = fig4();
        let w = &f.world;
        put(w, &dst("reply", 13), &[("status_id", 2.into())]);
        let attr = AttrRef::new("replies", "status_id");
        let t = Tracker::new(w);
        t.relink(
            &Unjournaled(1),
            &dst("reply", 13),
            &refs(attr.clone(), src("post", 2)),
        )
        .unwrap();
        put(w, &dst("status", 12), &[]);
        moved(
            w,
            &src("post", 2),
            &dst("status", 12),
            AttrRef::new("statuses", "id"),
        );
        let touched = t
            .resolve_on_arrival(&Unjournaled(1), &dst("status", 12))
            .unwrap();
        assert_eq!(touched, vec![dst("reply", 13)]);
        let store = w.app(&AppId::from("dst")).unwrap();
        assert_eq!(
            store.read(&dst("reply", 13)).unwrap().get(&attr),
            &Value::Int(12)
        );
        let state = w.state();
        assert!(t
            .resolve_on_arrival(&Unjournaled(1), &dst("status", 12))
            .unwrap()
            .is_empty());
        assert!(w.state() == state);
        // A node nobody waits for resolves nothing.
        put(w, &dst("status", 30), &[]);
        assert!(t
            .resolve_on_arrival(&Unjournaled(1), &dst("status", 30))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn tracked_owner_survives_the_move() {
        let f = fig4();
        let w = &f.world;
        let c = MigrationContext::new(
            src("person", ALICE),
            MigrationType::Deletion,
            f.forth.clone(),
        );
        migrate(w, &c).unwrap();
        let store = w.app(&AppId::from("dst")).unwrap();
        let body =
            |n: &DataNode, s: &str| n.get(&AttrRef::new("statuses", "body")) == &Value::from(s);
        let statuses = store.all_nodes();
        let status1 = statuses.iter().find(|n| body(n, "hi")).unwrap();
        let status2 = statuses.iter().find(|n| body(n, "s2")).unwrap();
        let t = Tracker::new(w);
        assert_eq!(
            t.ownership_of_migrated(&status1.id).unwrap(),
            src("person", BOB)
        );
        assert_eq!(
            t.ownership_of_migrated(&status2.id).unwrap(),
            src("person", ALICE)
        );
        put(w, &dst("status", 99), &[]);
        assert_eq!(
            t.ownership_of_migrated(&dst("status", 99)),
            Err(TrackerError::NotTracked(dst("status", 99)))
        );
    }
}
