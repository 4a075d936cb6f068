//! Metadata kept outside the applications: relationship tables, data
//! bags, write-ahead logs, leases, placeholders, grants and the display
//! timeline. A single lock makes every call linearizable.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::StoreError;
use crate::model::{
    AppId, AttrRef, DataNode, Flags, MigrationType, NodeId, RefKind, SharingGrant, Value,
};

pub type MigrationId = u64;

/// A relationship observed at the source before a node moved.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub migration_id: MigrationId,
    pub app: AppId,
    pub from_node: NodeId,
    pub from_attr: AttrRef,
    pub to_node: NodeId,
    pub kind: RefKind,
}

/// Identity (or attribute) change of a node moved by a migration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeChangeRow {
    pub migration_id: MigrationId,
    pub from_app: AppId,
    pub to_app: AppId,
    pub old_node: NodeId,
    pub new_node: NodeId,
    pub attr: AttrRef,
    pub old_value: Value,
    pub new_value: Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BagReason {
    NoMapping,
    DanglingSource,
    FailedValidation,
}

impl std::fmt::Display for BagReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BagReason::NoMapping => "no_mapping",
            BagReason::DanglingSource => "dangling_source",
            BagReason::FailedValidation => "failed_validation",
        })
    }
}

/// Data held outside any application for its owner.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagEntry {
    /// Canonical root of the owning user.
    pub owner: NodeId,
    /// Identity the data had when it was bagged.
    pub origin: NodeId,
    pub attrs: BTreeMap<AttrRef, Value>,
    /// Referents of the reference attributes, resolved at bagging time.
    #[serde(default)]
    pub refs: BTreeMap<AttrRef, NodeId>,
    pub reason: BagReason,
    /// Leftover attributes of a node whose other part was migrated.
    pub partial: bool,
    pub migration_id: MigrationId,
}

impl BagEntry {
    pub fn as_node(&self) -> DataNode {
        DataNode {
            id: self.origin.clone(),
            attrs: self.attrs.clone(),
            flags: Flags::NATIVE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlaceholderLoc {
    pub app: AppId,
    pub table: String,
    pub row: i64,
    pub attr: String,
}

impl PlaceholderLoc {
    pub fn attr_ref(&self) -> AttrRef {
        AttrRef::new(&self.table, &self.attr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceholderKind {
    AbsentUser,
    RemoteData,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceholderInfo {
    pub loc: PlaceholderLoc,
    pub original: NodeId,
    pub kind: PlaceholderKind,
    pub migration_id: MigrationId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaseState {
    Active,
    Committed,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationLease {
    pub user: NodeId,
    pub migration_id: MigrationId,
    pub mtype: MigrationType,
    pub state: LeaseState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Committed,
    RolledBack,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub id: MigrationId,
    /// Canonical root of the migrating user.
    pub user: NodeId,
    pub src: AppId,
    pub dst: AppId,
    pub mtype: MigrationType,
    pub outcome: Option<Outcome>,
}

/// Journaled operation with what rollback needs to undo it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WalOp {
    CopyRoot {
        src: NodeId,
        dst: NodeId,
    },
    MigrateNode {
        src: NodeId,
        dst: NodeId,
    },
    BagPut {
        owner: NodeId,
        origin: NodeId,
        previous: Option<BagEntry>,
    },
    BagTake {
        entry: BagEntry,
    },
    DeleteNode {
        pre_image: DataNode,
    },
    DisplayNode {
        node: NodeId,
        prev: Flags,
    },
    Relink {
        node: NodeId,
        attr: AttrRef,
        old: Value,
        old_placeholder: Option<PlaceholderInfo>,
    },
    MarkMigrated {
        node: NodeId,
        prev: Flags,
    },
    Commit,
    Abort,
}

impl WalOp {
    pub fn kind(&self) -> &'static str {
        match self {
            WalOp::CopyRoot { .. } => "copy_root",
            WalOp::MigrateNode { .. } => "migrate_node",
            WalOp::BagPut { .. } => "bag_put",
            WalOp::BagTake { .. } => "bag_take",
            WalOp::DeleteNode { .. } => "delete_node",
            WalOp::DisplayNode { .. } => "display_node",
            WalOp::Relink { .. } => "relink",
            WalOp::MarkMigrated { .. } => "mark_migrated",
            WalOp::Commit => "commit",
            WalOp::Abort => "abort",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, WalOp::Commit | WalOp::Abort)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalRecord {
    pub migration_id: MigrationId,
    pub seq: u64,
    pub op: WalOp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayEvent {
    /// Global order of display transitions.
    pub seq: u64,
    pub migration_id: MigrationId,
    pub node: NodeId,
    pub vtime: u64,
}

/// Serializable image of the whole metadata store.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaSnapshot {
    pub next_migration_id: MigrationId,
    pub next_event_seq: u64,
    pub references: Vec<ReferenceRow>,
    pub changes: Vec<AttributeChangeRow>,
    pub bags: Vec<BagEntry>,
    pub placeholders: Vec<PlaceholderInfo>,
    pub grants: Vec<SharingGrant>,
    pub leases: Vec<MigrationLease>,
    pub migrations: Vec<MigrationRecord>,
    pub wal: Vec<WalRecord>,
    pub events: Vec<DisplayEvent>,
}

/// The part of the metadata that rollback must restore exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrackedState {
    pub references: Vec<ReferenceRow>,
    pub changes: Vec<AttributeChangeRow>,
    pub bags: Vec<BagEntry>,
    pub placeholders: Vec<PlaceholderInfo>,
}

#[derive(Default)]
struct Meta {
    next_migration_id: MigrationId,
    next_event_seq: u64,
    references: Vec<ReferenceRow>,
    refs_by_node: HashMap<NodeId, Vec<usize>>,
    changes: Vec<AttributeChangeRow>,
    by_old: HashMap<NodeId, Vec<usize>>,
    by_new: HashMap<NodeId, usize>,
    bags: BTreeMap<NodeId, BTreeMap<NodeId, BagEntry>>,
    bag_owner: HashMap<NodeId, NodeId>,
    placeholders: BTreeMap<PlaceholderLoc, PlaceholderInfo>,
    by_original: HashMap<NodeId, BTreeSet<PlaceholderLoc>>,
    grants: Vec<SharingGrant>,
    leases: BTreeMap<MigrationId, MigrationLease>,
    migrations: BTreeMap<MigrationId, MigrationRecord>,
    wal: BTreeMap<MigrationId, Vec<WalRecord>>,
    events: Vec<DisplayEvent>,
    claims: HashMap<NodeId, (MigrationId, bool)>,
}

impl Meta {
    fn reindex(&mut self) {
        self.refs_by_node.clear();
        for (i, r) in self.references.iter().enumerate() {
            self.refs_by_node
                .entry(r.from_node.clone())
                .or_default()
                .push(i);
        }
        self.by_old.clear();
        self.by_new.clear();
        for (i, c) in self.changes.iter().enumerate() {
            self.by_old.entry(c.old_node.clone()).or_default().push(i);
            self.by_new.insert(c.new_node.clone(), i);
        }
        self.bag_owner = self
            .bags
            .iter()
            .flat_map(|(o, m)| m.keys().map(move |k| (k.clone(), o.clone())))
            .collect();
        self.by_original.clear();
        for (loc, p) in &self.placeholders {
            self.by_original
                .entry(p.original.clone())
                .or_default()
                .insert(loc.clone());
        }
    }

    fn predecessor(&self, node: &NodeId) -> Option<&AttributeChangeRow> {
        self.by_new.get(node).map(|&i| &self.changes[i])
    }

    fn remove_placeholder(&mut self, loc: &PlaceholderLoc) -> Option<PlaceholderInfo> {
        let p = self.placeholders.remove(loc)?;
        if let Some(set) = self.by_original.get_mut(&p.original) {
            set.remove(loc);
            if set.is_empty() {
                self.by_original.remove(&p.original);
            }
        }
        Some(p)
    }

    fn remove_bag(&mut self, owner: &NodeId, origin: &NodeId) -> Option<BagEntry> {
        let m = self.bags.get_mut(owner)?;
        let e = m.remove(origin)?;
        if m.is_empty() {
            self.bags.remove(owner);
        }
        self.bag_owner.remove(origin);
        Some(e)
    }
}

#[derive(Default)]
pub struct MetaStore {
    inner: Mutex<Meta>,
}

impl std::fmt::Debug for MetaStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetaStore").finish_non_exhaustive()
    }
}

impl MetaStore {
    pub fn new() -> Self {
        MetaStore::default()
    }

    // -- leases and the migration registry ---------------------------------

    /// Grants a lease iff `user` (a canonical root) holds no active one.
    /// The check and the grant happen under one lock.
    pub fn acquire_lease(
        &self,
        user: &NodeId,
        mtype: MigrationType,
        src: &AppId,
        dst: &AppId,
    ) -> Result<MigrationLease, StoreError> {
        let mut m = self.inner.lock();
        if m.leases
            .values()
            .any(|l| l.user == *user && l.state == LeaseState::Active)
        {
            return Err(StoreError::LeaseDenied(user.clone()));
        }
        m.next_migration_id += 1;
        let id = m.next_migration_id;
        let lease = MigrationLease {
            user: user.clone(),
            migration_id: id,
            mtype,
            state: LeaseState::Active,
        };
        m.leases.insert(id, lease.clone());
        m.migrations.insert(
            id,
            MigrationRecord {
                id,
                user: user.clone(),
                src: src.clone(),
                dst: dst.clone(),
                mtype,
                outcome: None,
            },
        );
        Ok(lease)
    }

    pub fn finish_lease(&self, id: MigrationId, state: LeaseState) -> Result<(), StoreError> {
        let mut m = self.inner.lock();
        let lease = m
            .leases
            .get_mut(&id)
            .ok_or_else(|| StoreError::NotFound(format!("lease {id}")))?;
        lease.state = state;
        if let Some(r) = m.migrations.get_mut(&id) {
            r.outcome = match state {
                LeaseState::Active => None,
                LeaseState::Committed => Some(Outcome::Committed),
                LeaseState::Aborted => Some(Outcome::RolledBack),
            };
        }
        Ok(())
    }

    pub fn lease(&self, id: MigrationId) -> Option<MigrationLease> {
        self.inner.lock().leases.get(&id).cloned()
    }

    pub fn active_lease(&self, user: &NodeId) -> Option<MigrationLease> {
        self.inner
            .lock()
            .leases
            .values()
            .find(|l| l.user == *user && l.state == LeaseState::Active)
            .cloned()
    }

    pub fn migration(&self, id: MigrationId) -> Option<MigrationRecord> {
        self.inner.lock().migrations.get(&id).cloned()
    }

    pub fn migrations(&self) -> Vec<MigrationRecord> {
        self.inner.lock().migrations.values().cloned().collect()
    }

    // -- write-ahead log ------------------------------------------------------

    /// Appends a record and returns its sequence number (1-based).
    pub fn wal_append(&self, id: MigrationId, op: WalOp) -> Result<u64, StoreError> {
        let mut m = self.inner.lock();
        let log = m.wal.entry(id).or_default();
        if log.last().is_some_and(|r| r.op.is_terminal()) {
            return Err(StoreError::WalSealed(id));
        }
        let seq = log.len() as u64 + 1;
        log.push(WalRecord {
            migration_id: id,
            seq,
            op,
        });
        Ok(seq)
    }

    pub fn wal_scan(&self, id: MigrationId) -> Vec<WalRecord> {
        self.inner.lock().wal.get(&id).cloned().unwrap_or_default()
    }

    pub fn wal_terminal(&self, id: MigrationId) -> Option<WalOp> {
        self.inner
            .lock()
            .wal
            .get(&id)
            .and_then(|l| l.last())
            .filter(|r| r.op.is_terminal())
            .map(|r| r.op.clone())
    }

    /// Migrations whose log has records but no terminal one.
    pub fn wal_unsealed(&self) -> Vec<MigrationId> {
        self.inner
            .lock()
            .wal
            .iter()
            .filter(|(_, l)| !l.last().is_some_and(|r| r.op.is_terminal()))
            .map(|(id, _)| *id)
            .collect()
    }

    // -- relationship tables --------------------------------------------------

    pub fn record_references(&self, rows: Vec<ReferenceRow>) {
        let mut m = self.inner.lock();
        for r in rows {
            let i = m.references.len();
            m.refs_by_node
                .entry(r.from_node.clone())
                .or_default()
                .push(i);
            m.references.push(r);
        }
    }

    pub fn references_from(&self, node: &NodeId) -> Vec<ReferenceRow> {
        let m = self.inner.lock();
        m.refs_by_node
            .get(node)
            .map(|v| v.iter().map(|&i| m.references[i].clone()).collect())
            .unwrap_or_default()
    }

    pub fn record_attribute_change(&self, row: AttributeChangeRow) -> Result<(), StoreError> {
        let mut m = self.inner.lock();
        let dup = m.by_old.get(&row.old_node).is_some_and(|v| {
            v.iter().any(|&i| {
                let c = &m.changes[i];
                c.migration_id == row.migration_id && c.attr == row.attr
            })
        });
        if dup {
            return Err(StoreError::Invalid(format!(
                "change of {} {} already recorded for migration {}",
                row.old_node, row.attr, row.migration_id
            )));
        }
        let i = m.changes.len();
        m.by_old.entry(row.old_node.clone()).or_default().push(i);
        m.by_new.insert(row.new_node.clone(), i);
        m.changes.push(row);
        Ok(())
    }

    /// Identity `old` received in migration `id` (any migration when
    /// `None`, most recent first).
    pub fn lookup_new_identity(&self, old: &NodeId, id: Option<MigrationId>) -> Option<NodeId> {
        let m = self.inner.lock();
        m.by_old.get(old).and_then(|v| {
            v.iter()
                .rev()
                .map(|&i| &m.changes[i])
                .find(|c| id.is_none_or(|id| c.migration_id == id))
                .map(|c| c.new_node.clone())
        })
    }

    /// The identity `node` had before its most recent move, with the
    /// migration that moved it.
    pub fn predecessor(&self, node: &NodeId) -> Option<(NodeId, MigrationId)> {
        let m = self.inner.lock();
        m.predecessor(node)
            .map(|c| (c.old_node.clone(), c.migration_id))
    }

    /// Earlier identities of `node`, nearest first.
    pub fn ancestors(&self, node: &NodeId) -> Vec<NodeId> {
        let m = self.inner.lock();
        let mut out = Vec::new();
        let mut cur = node.clone();
        while let Some(c) = m.predecessor(&cur) {
            if out.contains(&c.old_node) || c.old_node == *node {
                break;
            }
            cur = c.old_node.clone();
            out.push(cur.clone());
        }
        out
    }

    /// First identity in the history of `node` (itself when untracked).
    pub fn earliest(&self, node: &NodeId) -> NodeId {
        self.ancestors(node).pop().unwrap_or_else(|| node.clone())
    }

    /// Every identity linked to `node` through recorded moves, in either
    /// direction, sorted.
    pub fn identity_class(&self, node: &NodeId) -> Vec<NodeId> {
        let m = self.inner.lock();
        let mut seen: BTreeSet<NodeId> = BTreeSet::new();
        let mut queue = VecDeque::from([node.clone()]);
        seen.insert(node.clone());
        while let Some(n) = queue.pop_front() {
            let mut next: Vec<NodeId> = Vec::new();
            if let Some(c) = m.predecessor(&n) {
                next.push(c.old_node.clone());
            }
            if let Some(v) = m.by_old.get(&n) {
                next.extend(v.iter().map(|&i| m.changes[i].new_node.clone()));
            }
            for x in next {
                if seen.insert(x.clone()) {
                    queue.push_back(x);
                }
            }
        }
        seen.into_iter().collect()
    }

    pub fn changes_of(&self, id: MigrationId) -> Vec<AttributeChangeRow> {
        self.inner
            .lock()
            .changes
            .iter()
            .filter(|c| c.migration_id == id)
            .cloned()
            .collect()
    }

    pub fn all_changes(&self) -> Vec<AttributeChangeRow> {
        self.inner.lock().changes.clone()
    }

    pub fn all_references(&self) -> Vec<ReferenceRow> {
        self.inner.lock().references.clone()
    }

    /// Drops relationship rows written by migration `id`.
    pub fn remove_tracker_rows(&self, id: MigrationId) {
        let mut m = self.inner.lock();
        m.references.retain(|r| r.migration_id != id);
        m.changes.retain(|c| c.migration_id != id);
        m.reindex();
    }

    // -- data bags -----------------------------------------------------------

    /// Stores `entry`, merging with an existing entry for the same origin.
    /// Returns the entry it replaced.
    pub fn bag_put(&self, entry: BagEntry) -> Option<BagEntry> {
        let mut m = self.inner.lock();
        let prev = match m.bag_owner.get(&entry.origin).cloned() {
            Some(owner) => m.remove_bag(&owner, &entry.origin),
            None => None,
        };
        let merged = match &prev {
            Some(p) if p.owner == entry.owner => {
                let mut attrs = p.attrs.clone();
                attrs.extend(entry.attrs.clone());
                let mut refs = p.refs.clone();
                refs.extend(entry.refs.clone());
                BagEntry {
                    attrs,
                    refs,
                    partial: p.partial && entry.partial,
                    ..entry
                }
            }
            _ => entry,
        };
        m.bag_owner
            .insert(merged.origin.clone(), merged.owner.clone());
        m.bags
            .entry(merged.owner.clone())
            .or_default()
            .insert(merged.origin.clone(), merged);
        prev
    }

    pub fn bag_take(&self, owner: &NodeId, origin: &NodeId) -> Result<BagEntry, StoreError> {
        self.inner
            .lock()
            .remove_bag(owner, origin)
            .ok_or_else(|| StoreError::NotFound(format!("bag entry {origin} of {owner}")))
    }

    /// Removes whatever entry exists for `origin`; used by rollback.
    pub fn bag_remove(&self, origin: &NodeId) -> Option<BagEntry> {
        let mut m = self.inner.lock();
        let owner = m.bag_owner.get(origin).cloned()?;
        m.remove_bag(&owner, origin)
    }

    /// Puts `entry` back verbatim, replacing any entry for its origin.
    pub fn bag_restore(&self, entry: BagEntry) {
        let mut m = self.inner.lock();
        if let Some(owner) = m.bag_owner.get(&entry.origin).cloned() {
            m.remove_bag(&owner, &entry.origin);
        }
        m.bag_owner
            .insert(entry.origin.clone(), entry.owner.clone());
        m.bags
            .entry(entry.owner.clone())
            .or_default()
            .insert(entry.origin.clone(), entry);
    }

    pub fn bag_list(&self, owner: &NodeId) -> Vec<BagEntry> {
        self.inner
            .lock()
            .bags
            .get(owner)
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default()
    }

    pub fn bag_get(&self, origin: &NodeId) -> Option<BagEntry> {
        let m = self.inner.lock();
        let owner = m.bag_owner.get(origin)?;
        m.bags.get(owner).and_then(|b| b.get(origin)).cloned()
    }

    pub fn bag_all(&self) -> Vec<BagEntry> {
        self.inner
            .lock()
            .bags
            .values()
            .flat_map(|m| m.values().cloned())
            .collect()
    }

    // -- placeholders ----------------------------------------------------------

    pub fn placeholder_set(&self, info: PlaceholderInfo) -> Option<PlaceholderInfo> {
        let mut m = self.inner.lock();
        let prev = m.remove_placeholder(&info.loc);
        m.by_original
            .entry(info.original.clone())
            .or_default()
            .insert(info.loc.clone());
        m.placeholders.insert(info.loc.clone(), info);
        prev
    }

    pub fn placeholder_clear(&self, loc: &PlaceholderLoc) -> Option<PlaceholderInfo> {
        self.inner.lock().remove_placeholder(loc)
    }

    pub fn placeholder_at(&self, loc: &PlaceholderLoc) -> Option<PlaceholderInfo> {
        self.inner.lock().placeholders.get(loc).cloned()
    }

    pub fn placeholders_for(&self, original: &NodeId) -> Vec<PlaceholderInfo> {
        let m = self.inner.lock();
        m.by_original
            .get(original)
            .map(|locs| {
                locs.iter()
                    .filter_map(|l| m.placeholders.get(l).cloned())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn placeholders(&self) -> Vec<PlaceholderInfo> {
        self.inner.lock().placeholders.values().cloned().collect()
    }

    // -- grants ----------------------------------------------------------------

    pub fn add_grant(&self, grant: SharingGrant) {
        let mut m = self.inner.lock();
        if !m.grants.contains(&grant) {
            m.grants.push(grant);
        }
    }

    pub fn grants(&self) -> Vec<SharingGrant> {
        self.inner.lock().grants.clone()
    }

    pub fn grants_between(&self, grantor: &NodeId, grantee: &NodeId) -> Vec<SharingGrant> {
        self.inner
            .lock()
            .grants
            .iter()
            .filter(|g| g.grantor == *grantor && g.grantee == *grantee)
            .cloned()
            .collect()
    }

    // -- display timeline ------------------------------------------------------

    pub fn push_display_event(&self, id: MigrationId, node: NodeId, vtime: u64) -> u64 {
        let mut m = self.inner.lock();
        m.next_event_seq += 1;
        let seq = m.next_event_seq;
        m.events.push(DisplayEvent {
            seq,
            migration_id: id,
            node,
            vtime,
        });
        seq
    }

    pub fn display_events(&self) -> Vec<DisplayEvent> {
        self.inner.lock().events.clone()
    }

    pub fn remove_display_events(&self, id: MigrationId) {
        self.inner.lock().events.retain(|e| e.migration_id != id);
    }

    // -- worker claims ---------------------------------------------------------

    /// Claims `node` for migration `id`; false if already claimed.
    pub fn claim(&self, node: &NodeId, id: MigrationId) -> bool {
        let mut m = self.inner.lock();
        if m.claims.contains_key(node) {
            return false;
        }
        m.claims.insert(node.clone(), (id, false));
        true
    }

    pub fn mark_done(&self, node: &NodeId) {
        if let Some(c) = self.inner.lock().claims.get_mut(node) {
            c.1 = true;
        }
    }

    /// True when `node` is not claimed or its claim finished.
    pub fn settled(&self, node: &NodeId) -> bool {
        self.inner.lock().claims.get(node).is_none_or(|c| c.1)
    }

    pub fn release_claims(&self, id: MigrationId) {
        self.inner.lock().claims.retain(|_, c| c.0 != id);
    }

    // -- snapshots -------------------------------------------------------------

    pub fn tracked_state(&self) -> TrackedState {
        let m = self.inner.lock();
        TrackedState {
            references: m.references.clone(),
            changes: m.changes.clone(),
            bags: m.bags.values().flat_map(|b| b.values().cloned()).collect(),
            placeholders: m.placeholders.values().cloned().collect(),
        }
    }

    pub fn snapshot(&self) -> MetaSnapshot {
        let m = self.inner.lock();
        MetaSnapshot {
            next_migration_id: m.next_migration_id,
            next_event_seq: m.next_event_seq,
            references: m.references.clone(),
            changes: m.changes.clone(),
            bags: m.bags.values().flat_map(|b| b.values().cloned()).collect(),
            placeholders: m.placeholders.values().cloned().collect(),
            grants: m.grants.clone(),
            leases: m.leases.values().cloned().collect(),
            migrations: m.migrations.values().cloned().collect(),
            wal: m.wal.values().flatten().cloned().collect(),
            events: m.events.clone(),
        }
    }

    pub fn from_snapshot(s: MetaSnapshot) -> MetaStore {
        let mut m = Meta {
            next_migration_id: s.next_migration_id,
            next_event_seq: s.next_event_seq,
            references: s.references,
            changes: s.changes,
            grants: s.grants,
            events: s.events,
            ..Meta::default()
        };
        for b in s.bags {
            m.bags
                .entry(b.owner.clone())
                .or_default()
                .insert(b.origin.clone(), b);
        }
        for p in s.placeholders {
            m.placeholders.insert(p.loc.clone(), p);
        }
        m.leases = s.leases.into_iter().map(|l| (l.migration_id, l)).collect();
        m.migrations = s.migrations.into_iter().map(|r| (r.id, r)).collect();
        for r in s.wal {
            m.wal.entry(r.migration_id).or_default().push(r);
        }
        m.reindex();
        MetaStore {
            inner: Mutex::new(m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn n(app: &str, t: &str, k: i64) -> NodeId {
        NodeId::new(app, t, k)
    }

    fn entry(owner: &NodeId, origin: &NodeId) -> BagEntry {
        BagEntry {
            owner: owner.clone(),
            origin: origin.clone(),
            attrs: [("comments.body".parse().unwrap(), Value::from("x"))].into(),
            refs: BTreeMap::new(),
            reason: BagReason::DanglingSource,
            partial: false,
            migration_id: 1,
        }
    }

    #[test]
    fn lease_is_exclusive_until_finished() {
        let m = MetaStore::new();
        let u = n("a", "person", 1);
        let (a, b) = (AppId::from("a"), AppId::from("b"));
        let l = m
            .acquire_lease(&u, MigrationType::Deletion, &a, &b)
            .unwrap();
        assert!(matches!(
            m.acquire_lease(&u, MigrationType::Independent, &a, &b),
            Err(StoreError::LeaseDenied(_))
        ));
        m.finish_lease(l.migration_id, LeaseState::Committed)
            .unwrap();
        assert!(m.acquire_lease(&u, MigrationType::Deletion, &a, &b).is_ok());
    }

    #[test]
    fn concurrent_acquirers_get_one_lease() {
        let m = Arc::new(MetaStore::new());
        let u = n("a", "person", 1);
        let wins: usize = std::thread::scope(|s| {
            let hs: Vec<_> = (0..16)
                .map(|_| {
                    let m = m.clone();
                    let u = u.clone();
                    s.spawn(move || {
                        m.acquire_lease(&u, MigrationType::Deletion, &"a".into(), &"b".into())
                            .is_ok() as usize
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).sum()
        });
        assert_eq!(wins, 1);
    }

    #[test]
    fn wal_orders_and_seals() {
        let m = MetaStore::new();
        for k in 0..5 {
            let seq = m
                .wal_append(
                    7,
                    WalOp::MarkMigrated {
                        node: n("a", "post", k),
                        prev: Flags::NATIVE,
                    },
                )
                .unwrap();
            assert_eq!(seq, k as u64 + 1);
        }
        let scan = m.wal_scan(7);
        assert_eq!(
            scan.iter().map(|r| r.seq).collect::<Vec<_>>(),
            vec![1, 2, 3, 4, 5]
        );
        assert_eq!(m.wal_unsealed(), vec![7]);
        m.wal_append(7, WalOp::Commit).unwrap();
        assert_eq!(m.wal_append(7, WalOp::Abort), Err(StoreError::WalSealed(7)));
        assert!(m.wal_unsealed().is_empty());
    }

    #[test]
    fn bag_put_is_idempotent_and_take_removes() {
        let m = MetaStore::new();
        let bob = n("a", "person", 1);
        let c2 = n("a", "comment", 6);
        assert!(m.bag_put(entry(&bob, &c2)).is_none());
        assert!(m.bag_put(entry(&bob, &c2)).is_some());
        assert_eq!(m.bag_list(&bob).len(), 1);
        assert_eq!(m.bag_take(&bob, &c2).unwrap().origin, c2);
        assert!(m.bag_list(&bob).is_empty());
        assert!(matches!(
            m.bag_take(&bob, &c2),
            Err(StoreError::NotFound(_))
        ));
    }

    #[test]
    fn identity_lookups() {
        let m = MetaStore::new();
        let post1 = n("a", "post", 2);
        let status1 = n("b", "status", 12);
        assert_eq!(m.lookup_new_identity(&post1, None), None);
        m.record_attribute_change(AttributeChangeRow {
            migration_id: 1,
            from_app: "a".into(),
            to_app: "b".into(),
            old_node: post1.clone(),
            new_node: status1.clone(),
            attr: "posts.id".parse().unwrap(),
            old_value: 2.into(),
            new_value: 12.into(),
        })
        .unwrap();
        assert_eq!(m.lookup_new_identity(&post1, None), Some(status1.clone()));
        assert_eq!(
            m.lookup_new_identity(&post1, Some(1)),
            Some(status1.clone())
        );
        assert_eq!(m.lookup_new_identity(&post1, Some(2)), None);
        assert_eq!(m.earliest(&status1), post1);
        assert_eq!(
            m.identity_class(&post1),
            vec![post1.clone(), status1.clone()]
        );
        m.remove_tracker_rows(1);
        assert_eq!(m.lookup_new_identity(&post1, None), None);
    }

    #[test]
    fn snapshot_round_trips_through_json() {
        let m = MetaStore::new();
        let bob = n("a", "person", 1);
        m.bag_put(entry(&bob, &n("a", "comment", 6)));
        m.wal_append(1, WalOp::Commit).unwrap();
        let snap = m.snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        let back: MetaSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back, snap);
        let again = MetaStore::from_snapshot(back);
        assert_eq!(again.bag_list(&bob).len(), 1);
        assert_eq!(again.snapshot(), snap);
    }
}
