use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::StoreError;
use crate::model::{
    AppId, AttrRef, Dag, DataNode, Flags, InstanceGraph, NodeId, RefKind, Row, Value,
};

/// One stored node: its member rows by table, and lifecycle flags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredNode {
    pub key: i64,
    pub rows: BTreeMap<String, Row>,
    pub flags: Flags,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub app: AppId,
    pub nodes: BTreeMap<String, Vec<StoredNode>>,
}

impl StoreSnapshot {
    /// Same content with the source-side `migrated` mark cleared.
    pub fn without_migrated_marks(&self) -> StoreSnapshot {
        let mut out = self.clone();
        for n in out.nodes.values_mut().flatten() {
            n.flags.migrated = false;
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.nodes.values().map(Vec::len).sum()
    }
}

#[derive(Default)]
struct Data {
    nodes: BTreeMap<String, BTreeMap<i64, StoredNode>>,
    /// (reference attribute, referenced key) -> referring anchor keys.
    index: HashMap<(AttrRef, i64), BTreeSet<i64>>,
}

/// Embedded store of one application. Every method is one linearizable
/// transaction.
pub struct AppStore {
    dag: Arc<Dag>,
    ref_attrs: BTreeSet<AttrRef>,
    next_key: AtomicI64,
    data: RwLock<Data>,
}

impl std::fmt::Debug for AppStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppStore")
            .field("app", self.app())
            .finish_non_exhaustive()
    }
}

impl AppStore {
    /// `key_base` offsets generated keys so raw keys of different
    /// applications never coincide.
    pub fn new(dag: Arc<Dag>, key_base: i64) -> Self {
        AppStore {
            ref_attrs: dag.reference_attributes().into_iter().collect(),
            dag,
            next_key: AtomicI64::new(key_base + 1),
            data: RwLock::new(Data::default()),
        }
    }

    pub fn dag(&self) -> &Arc<Dag> {
        &self.dag
    }

    pub fn app(&self) -> &AppId {
        self.dag.app()
    }

    /// A key not yet handed out by this store.
    pub fn fresh_key(&self) -> i64 {
        self.next_key.fetch_add(1, Ordering::SeqCst)
    }

    fn check_app(&self, id: &NodeId) -> Result<(), StoreError> {
        if id.app != *self.app() {
            return Err(StoreError::Invalid(format!(
                "{id} does not belong to {}",
                self.app()
            )));
        }
        if self.dag.node_type(&id.node_type).is_none() {
            return Err(StoreError::Invalid(format!("unknown node type in {id}")));
        }
        Ok(())
    }

    fn to_data_node(&self, ty: &str, n: &StoredNode) -> DataNode {
        let attrs = n
            .rows
            .iter()
            .flat_map(|(t, row)| {
                row.iter()
                    .map(move |(a, v)| (AttrRef::new(t, a), v.clone()))
            })
            .collect();
        DataNode {
            id: NodeId {
                app: self.app().clone(),
                node_type: ty.to_owned(),
                key: n.key,
            },
            attrs,
            flags: n.flags,
        }
    }

    pub fn read(&self, id: &NodeId) -> Option<DataNode> {
        if id.app != *self.app() {
            return None;
        }
        let d = self.data.read();
        d.nodes
            .get(&id.node_type)
            .and_then(|m| m.get(&id.key))
            .map(|n| self.to_data_node(&id.node_type, n))
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        id.app == *self.app()
            && self
                .data
                .read()
                .nodes
                .get(&id.node_type)
                .is_some_and(|m| m.contains_key(&id.key))
    }

    pub fn flags(&self, id: &NodeId) -> Option<Flags> {
        let d = self.data.read();
        d.nodes
            .get(&id.node_type)
            .and_then(|m| m.get(&id.key))
            .map(|n| n.flags)
    }

    /// Read as the application sees it: hidden while flagged or undisplayable.
    pub fn read_visible(&self, id: &NodeId) -> Option<DataNode> {
        self.read(id).filter(|n| n.flags.app_visible())
    }

    pub fn is_visible(&self, id: &NodeId) -> bool {
        self.flags(id).is_some_and(|f| f.app_visible())
    }

    /// Member-table row addressed by `(table, key)`.
    pub fn read_row(&self, table: &str, key: i64) -> Option<Row> {
        let ty = self.dag.type_of_table(table)?;
        let d = self.data.read();
        d.nodes.get(&ty.name)?.get(&key)?.rows.get(table).cloned()
    }

    fn index_node(
        index: &mut HashMap<(AttrRef, i64), BTreeSet<i64>>,
        refs: &BTreeSet<AttrRef>,
        n: &StoredNode,
        add: bool,
    ) {
        for (t, row) in &n.rows {
            for (a, v) in row {
                let Some(k) = v.as_int() else { continue };
                let attr = AttrRef::new(t, a);
                if !refs.contains(&attr) {
                    continue;
                }
                if add {
                    index.entry((attr, k)).or_default().insert(n.key);
                } else if let Some(set) = index.get_mut(&(attr.clone(), k)) {
                    set.remove(&n.key);
                    if set.is_empty() {
                        index.remove(&(attr, k));
                    }
                }
            }
        }
    }

    pub fn insert(&self, node: &DataNode) -> Result<(), StoreError> {
        self.check_app(&node.id)?;
        let spec = self.dag.node_type(&node.id.node_type).expect("checked");
        let mut rows: BTreeMap<String, Row> = BTreeMap::new();
        for t in &spec.tables {
            let table = self.dag.schema().table(t).expect("validated dag");
            let mut row: Row = table
                .attributes
                .iter()
                .map(|a| (a.clone(), Value::Null))
                .collect();
            row.insert(table.key.clone(), Value::Int(node.id.key));
            rows.insert(t.clone(), row);
        }
        for (a, v) in &node.attrs {
            let Some(row) = rows.get_mut(&a.table) else {
                return Err(StoreError::Invalid(format!(
                    "{a} is not part of {}",
                    node.id.node_type
                )));
            };
            let table = self.dag.schema().table(&a.table).expect("member");
            if !table.has_attr(&a.attr) {
                return Err(StoreError::Invalid(format!("unknown attribute {a}")));
            }
            if a.attr != table.key {
                row.insert(a.attr.clone(), v.clone());
            }
        }
        let stored = StoredNode {
            key: node.id.key,
            rows,
            flags: node.flags,
        };
        let mut d = self.data.write();
        let map = d.nodes.entry(node.id.node_type.clone()).or_default();
        if map.contains_key(&node.id.key) {
            return Err(StoreError::KeyCollision {
                table: spec.anchor_table().to_owned(),
                key: node.id.key,
            });
        }
        map.insert(node.id.key, stored.clone());
        Self::index_node(&mut d.index, &self.ref_attrs, &stored, true);
        self.next_key.fetch_max(node.id.key + 1, Ordering::SeqCst);
        Ok(())
    }

    /// Removes the node and returns its pre-image.
    pub fn delete(&self, id: &NodeId) -> Result<DataNode, StoreError> {
        let mut d = self.data.write();
        let stored = d
            .nodes
            .get_mut(&id.node_type)
            .and_then(|m| m.remove(&id.key))
            .filter(|_| id.app == *self.app())
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        Self::index_node(&mut d.index, &self.ref_attrs, &stored, false);
        Ok(self.to_data_node(&id.node_type, &stored))
    }

    /// Compare-and-set on the node flags. Returns false when `expected`
    /// does not match the current flags.
    pub fn set_flags(
        &self,
        id: &NodeId,
        expected: Option<Flags>,
        new: Flags,
    ) -> Result<bool, StoreError> {
        let mut d = self.data.write();
        let n = d
            .nodes
            .get_mut(&id.node_type)
            .and_then(|m| m.get_mut(&id.key))
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        if expected.is_some_and(|e| e != n.flags) {
            return Ok(false);
        }
        n.flags = new;
        Ok(true)
    }

    /// Overwrites one attribute, returning the previous value.
    pub fn update_attr(
        &self,
        id: &NodeId,
        attr: &AttrRef,
        value: Value,
    ) -> Result<Value, StoreError> {
        let mut guard = self.data.write();
        let d = &mut *guard;
        let n = d
            .nodes
            .get_mut(&id.node_type)
            .and_then(|m| m.get_mut(&id.key))
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        let slot = n
            .rows
            .get_mut(&attr.table)
            .and_then(|r| r.get_mut(&attr.attr))
            .ok_or_else(|| StoreError::NotFound(format!("{id} {attr}")))?;
        let old = std::mem::replace(slot, value.clone());
        if self.ref_attrs.contains(attr) {
            if let Some(k) = old.as_int() {
                if let Some(set) = d.index.get_mut(&(attr.clone(), k)) {
                    set.remove(&id.key);
                }
            }
            if let Some(k) = value.as_int() {
                d.index.entry((attr.clone(), k)).or_default().insert(id.key);
            }
        }
        Ok(old)
    }

    /// Live nodes referring to `id` through edges of `kind`.
    pub fn referencing(&self, id: &NodeId, kind: RefKind) -> Vec<NodeId> {
        let d = self.data.read();
        let mut out = Vec::new();
        for n in self.dag.node_types() {
            for (k, e) in n.reference_edges() {
                if k != kind || e.to != id.node_type {
                    continue;
                }
                if let Some(keys) = d.index.get(&(e.from.clone(), id.key)) {
                    out.extend(keys.iter().map(|&key| NodeId {
                        app: self.app().clone(),
                        node_type: n.name.clone(),
                        key,
                    }));
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    pub fn node_ids(&self, node_type: &str) -> Vec<NodeId> {
        let d = self.data.read();
        d.nodes
            .get(node_type)
            .map(|m| {
                m.keys()
                    .map(|&key| NodeId {
                        app: self.app().clone(),
                        node_type: node_type.to_owned(),
                        key,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn all_ids(&self) -> Vec<NodeId> {
        self.dag
            .node_types()
            .iter()
            .flat_map(|n| self.node_ids(&n.name))
            .collect()
    }

    pub fn all_nodes(&self) -> Vec<DataNode> {
        let d = self.data.read();
        let mut out = Vec::new();
        for (ty, m) in &d.nodes {
            out.extend(m.values().map(|n| self.to_data_node(ty, n)));
        }
        out
    }

    pub fn count(&self) -> usize {
        self.data.read().nodes.values().map(BTreeMap::len).sum()
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        let d = self.data.read();
        StoreSnapshot {
            app: self.app().clone(),
            nodes: d
                .nodes
                .iter()
                .filter(|(_, m)| !m.is_empty())
                .map(|(t, m)| (t.clone(), m.values().cloned().collect()))
                .collect(),
        }
    }

    /// Replaces the whole content with `snap`.
    pub fn restore(&self, snap: &StoreSnapshot) -> Result<(), StoreError> {
        if snap.app != *self.app() {
            return Err(StoreError::Invalid(format!(
                "snapshot of {} loaded into {}",
                snap.app,
                self.app()
            )));
        }
        let mut fresh = Data::default();
        let mut max_key = 0;
        for (t, nodes) in &snap.nodes {
            if self.dag.node_type(t).is_none() {
                return Err(StoreError::Invalid(format!("unknown node type {t}")));
            }
            for n in nodes {
                Self::index_node(&mut fresh.index, &self.ref_attrs, n, true);
                fresh
                    .nodes
                    .entry(t.clone())
                    .or_default()
                    .insert(n.key, n.clone());
                max_key = max_key.max(n.key);
            }
        }
        *self.data.write() = fresh;
        self.next_key.fetch_max(max_key + 1, Ordering::SeqCst);
        Ok(())
    }
}

impl InstanceGraph for AppStore {
    fn dependents(&self, node: &NodeId) -> Vec<NodeId> {
        if node.app != *self.app() {
            return Vec::new();
        }
        let d = self.data.read();
        let mut out = Vec::new();
        for (child, e) in self.dag.incoming_dependencies(&node.node_type) {
            if let Some(keys) = d.index.get(&(e.from.clone(), node.key)) {
                out.extend(keys.iter().map(|&key| NodeId {
                    app: self.app().clone(),
                    node_type: child.clone(),
                    key,
                }));
            }
        }
        out.sort();
        out.dedup();
        out
    }

    fn dependencies(&self, node: &NodeId) -> Vec<NodeId> {
        let Some(n) = self.read(node) else {
            return Vec::new();
        };
        let mut out: Vec<NodeId> = n
            .references(&self.dag, RefKind::Dependency)
            .into_iter()
            .filter(|p| self.contains(p))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}
