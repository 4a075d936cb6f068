//! Migration controller: deletion and independent migrations, shared-data
//! policy, data-bag migration, the migration transaction and rollback.
//!
//! Every mutation is preceded by a write-ahead record. An injected crash
//! stops the migration where it stands; [`recover`] then rolls back every
//! migration whose log was never sealed.

mod bags;
mod deletion;
mod independent;
mod node;
mod rollback;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::{Meter, BYTES_PER_UNIT, ROW_COST, TXN_OVERHEAD};
use crate::error::EngineError;
use crate::model::{AppId, DataNode, MigrationType, NodeId};
use crate::psm::SchemaMapping;
use crate::store::{Journal, LeaseState, MetaStore, MigrationId, Outcome, WalOp, World};

pub use node::decide as can_migrate;
pub use rollback::{recover, rollback};

/// Fresh destination keys tried before a migration gives up.
pub const NEW_ID_RETRIES: usize = 8;

/// Where an injected crash strikes, by write-ahead sequence number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultPoint {
    /// The record is durable, its mutation never happens.
    BeforeMutation(u64),
    /// The mutation happened, nothing after it does.
    AfterMutation(u64),
}

impl FromStr for FaultPoint {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, n) = s
            .split_once(':')
            .ok_or_else(|| format!("fault point {s:?} is not of the form wal:N"))?;
        let n: u64 = n
            .parse()
            .map_err(|_| format!("bad sequence number in {s:?}"))?;
        match kind {
            "wal" | "wal-before" => Ok(FaultPoint::BeforeMutation(n)),
            "wal-after" => Ok(FaultPoint::AfterMutation(n)),
            other => Err(format!("unknown fault kind {other:?}")),
        }
    }
}

impl fmt::Display for FaultPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultPoint::BeforeMutation(n) => write!(f, "wal:{n}"),
            FaultPoint::AfterMutation(n) => write!(f, "wal-after:{n}"),
        }
    }
}

/// When display validation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// Phase 1 alongside the walk, phase 2 after it.
    #[default]
    Concurrent,
    /// Everything after the walk, on a lane that starts when the walk ends.
    Deferred,
    /// No validation; arrivals stay hidden. For cost measurements only.
    Off,
}

#[derive(Clone, Debug)]
pub struct MigrationContext {
    /// The migrating user's root in the source application.
    pub user: NodeId,
    pub src: AppId,
    pub dst: AppId,
    pub mtype: MigrationType,
    pub mapping: Arc<SchemaMapping>,
    /// Mappings into the destination for bag contents from other apps.
    pub bag_mappings: BTreeMap<AppId, Arc<SchemaMapping>>,
    /// Only nodes created before this instant migrate.
    pub cutoff: Option<i64>,
    pub workers: usize,
    pub seed: u64,
    pub fault: Option<FaultPoint>,
    pub validation: ValidationMode,
    /// Nodes per transaction in independent migrations.
    pub batch_size: usize,
}

impl MigrationContext {
    pub fn new(user: NodeId, mtype: MigrationType, mapping: Arc<SchemaMapping>) -> Self {
        MigrationContext {
            src: mapping.from_app.clone(),
            dst: mapping.to_app.clone(),
            user,
            mtype,
            mapping,
            bag_mappings: BTreeMap::new(),
            cutoff: None,
            workers: 1,
            seed: 0,
            fault: None,
            validation: ValidationMode::Concurrent,
            batch_size: 64,
        }
    }

    pub fn with_bag_mappings(mut self, m: BTreeMap<AppId, Arc<SchemaMapping>>) -> Self {
        self.bag_mappings = m;
        self
    }

    pub fn with_cutoff(mut self, cutoff: Option<i64>) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn with_workers(mut self, n: usize) -> Self {
        self.workers = n.max(1);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_fault(mut self, f: Option<FaultPoint>) -> Self {
        self.fault = f;
        self
    }

    pub fn with_validation(mut self, v: ValidationMode) -> Self {
        self.validation = v;
        self
    }
}

/// Outcome of the shared-data policy for one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Yes,
    SkipNotShared,
    SkipWrongType,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    /// Source nodes the walk looked at, root excluded.
    pub considered: u64,
    pub migrated: u64,
    pub bagged_no_mapping: u64,
    pub bagged_dangling_source: u64,
    pub skipped_not_shared: u64,
    pub skipped_wrong_type: u64,
    pub deleted: u64,
    /// Nodes already copied by an earlier independent migration.
    pub already_migrated: u64,
    /// Bag entries moved into the destination after the walk.
    pub from_bags: u64,
    /// Bag entries merged into outgoing nodes.
    pub merged: u64,
    pub merge_conflicts: u64,
    pub bagged_failed_validation: u64,
    pub displayed: u64,
    /// Copies made although the object already lived at the destination.
    pub duplicates: u64,
    pub relinked: u64,
}

impl Counts {
    /// migrated + bagged + skipped, which equals `considered`.
    pub fn settled(&self) -> u64 {
        self.migrated
            + self.bagged_no_mapping
            + self.bagged_dangling_source
            + self.skipped_not_shared
            + self.skipped_wrong_type
            + self.already_migrated
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub origin: NodeId,
    pub dst: Option<NodeId>,
    /// When the object stopped being visible at the source.
    pub source_invisible: Option<u64>,
    pub arrived: Option<u64>,
    /// When the destination allowed it to be displayed.
    pub displayed: Option<u64>,
    /// The object came out of a data bag rather than the source app.
    #[serde(default)]
    pub from_bag: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Costs {
    /// Virtual time when the migration workers finished.
    pub walk_end: u64,
    /// Virtual time when validation finished too.
    pub end: u64,
    /// Units charged by migration workers.
    pub migration_work: u64,
    /// Units charged by validation, idle time excluded.
    pub validation_work: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationReport {
    pub migration_id: MigrationId,
    pub user: NodeId,
    pub src: AppId,
    pub dst: AppId,
    pub mtype: MigrationType,
    pub outcome: Outcome,
    pub counts: Counts,
    pub timeline: Vec<TimelineEntry>,
    pub costs: Costs,
    /// Size of the user's graph at the source before migrating.
    pub src_nodes: u64,
    pub src_edges: u64,
    /// Size of what arrived at the destination.
    pub dst_nodes: u64,
    pub dst_edges: u64,
    pub error: Option<String>,
}

/// Runs one migration under a fresh lease. Failures roll back at once
/// and come back as a `RolledBack` report; an injected crash returns
/// [`EngineError::Crash`] with the state as the crash left it.
pub fn migrate(world: &World, ctx: &MigrationContext) -> Result<MigrationReport, EngineError> {
    let src = world
        .app(&ctx.src)
        .ok_or_else(|| EngineError::UnknownApp(ctx.src.to_string()))?
        .clone();
    let dst = world
        .app(&ctx.dst)
        .ok_or_else(|| EngineError::UnknownApp(ctx.dst.to_string()))?
        .clone();
    if ctx.mapping.from_app != ctx.src || ctx.mapping.to_app != ctx.dst {
        return Err(EngineError::Invalid(format!(
            "mapping {} -> {} does not connect {} to {}",
            ctx.mapping.from_app, ctx.mapping.to_app, ctx.src, ctx.dst
        )));
    }
    if ctx.user.app != ctx.src
        || !src.dag().is_root(&ctx.user.node_type)
        || !src.contains(&ctx.user)
    {
        return Err(EngineError::Invalid(format!(
            "{} is not a user of {}",
            ctx.user, ctx.src
        )));
    }
    let meta = world.meta();
    let user = meta.earliest(&ctx.user);
    let lease = meta.acquire_lease(&user, ctx.mtype, &ctx.src, &ctx.dst)?;
    let run = node::Run::new(world, ctx, lease.migration_id, user, src, dst);

    let walked = match ctx.mtype {
        MigrationType::Deletion => deletion::run(&run),
        MigrationType::Independent => independent::run(&run),
    };
    let result = walked.and_then(|()| {
        let seq = run.txn.log(WalOp::Commit)?;
        run.txn.applied(seq)
    });
    match result {
        Ok(()) => {
            meta.release_claims(run.mid);
            meta.finish_lease(run.mid, LeaseState::Committed)?;
            Ok(run.report(Outcome::Committed, None))
        }
        Err(EngineError::Crash { seq }) => Err(EngineError::Crash { seq }),
        Err(e) => {
            rollback(world, run.mid)?;
            Ok(run.report(Outcome::RolledBack, Some(e.to_string())))
        }
    }
}

/// The migration's write-ahead log, with optional crash injection.
pub(crate) struct Txn {
    meta: Arc<MetaStore>,
    mid: MigrationId,
    fault: Option<FaultPoint>,
    /// Sequence number of the injected crash, 0 when none happened.
    crashed: AtomicU64,
    halted: AtomicBool,
}

impl Txn {
    fn new(meta: Arc<MetaStore>, mid: MigrationId, fault: Option<FaultPoint>) -> Self {
        Txn {
            meta,
            mid,
            fault,
            crashed: AtomicU64::new(0),
            halted: AtomicBool::new(false),
        }
    }

    fn crash(&self, seq: u64) -> EngineError {
        self.crashed.store(seq, Ordering::SeqCst);
        self.halted.store(true, Ordering::SeqCst);
        EngineError::Crash { seq }
    }

    pub(crate) fn halt(&self) {
        self.halted.store(true, Ordering::SeqCst);
    }

    pub(crate) fn halted(&self) -> bool {
        self.halted.load(Ordering::SeqCst)
    }
}

impl Journal for Txn {
    fn migration_id(&self) -> MigrationId {
        self.mid
    }

    fn log(&self, op: WalOp) -> Result<u64, EngineError> {
        let c = self.crashed.load(Ordering::SeqCst);
        if c != 0 {
            return Err(EngineError::Crash { seq: c });
        }
        let seq = self.meta.wal_append(self.mid, op)?;
        if self.fault == Some(FaultPoint::BeforeMutation(seq)) {
            return Err(self.crash(seq));
        }
        Ok(seq)
    }

    fn applied(&self, seq: u64) -> Result<(), EngineError> {
        if self.fault == Some(FaultPoint::AfterMutation(seq)) {
            return Err(self.crash(seq));
        }
        Ok(())
    }
}

/// Stages of one batched transaction: read, write, track, bag, mark.
pub(crate) const BATCH_STAGES: u64 = 5;

/// One worker's virtual clock. In batched mode row costs accumulate and
/// are charged per batch by [`Lane::flush`].
pub(crate) struct Lane {
    meter: Meter,
    batched: bool,
    rows: u64,
    bytes: u64,
    work: u64,
}

impl Lane {
    pub(crate) fn new(start: u64, batched: bool) -> Self {
        Lane {
            meter: Meter::starting_at(start),
            batched,
            rows: 0,
            bytes: 0,
            work: 0,
        }
    }

    /// Charges one store transaction (or its rows, when batched).
    pub(crate) fn op(&mut self, rows: u64, bytes: u64) -> u64 {
        if self.batched {
            self.rows += rows;
            self.bytes += bytes;
            self.meter.now()
        } else {
            let c = crate::clock::txn_cost(rows, bytes);
            self.work += c;
            self.meter.advance(c)
        }
    }

    /// Charges the accumulated rows as `stages` batched transactions.
    pub(crate) fn flush(&mut self, stages: u64) -> u64 {
        let c = stages * TXN_OVERHEAD + self.rows * ROW_COST + self.bytes / BYTES_PER_UNIT;
        self.rows = 0;
        self.bytes = 0;
        self.work += c;
        self.meter.advance(c)
    }

    pub(crate) fn now(&self) -> u64 {
        self.meter.now()
    }

    /// Time at which everything charged so far is done.
    pub(crate) fn commit(&mut self) -> u64 {
        if self.batched {
            self.flush(BATCH_STAGES)
        } else {
            self.now()
        }
    }

    pub(crate) fn catch_up(&self, t: u64) {
        self.meter.catch_up(t);
    }

    pub(crate) fn work(&self) -> u64 {
        self.work
    }
}

/// Member rows and bytes of a node, media blobs included, for cost
/// accounting.
pub(crate) fn weight(store: &crate::store::AppStore, node: &DataNode) -> (u64, u64) {
    let dag = store.dag();
    let Some(spec) = dag.node_type(&node.id.node_type) else {
        return (1, node.byte_size());
    };
    let blobs: u64 = spec
        .tables
        .iter()
        .filter_map(|t| dag.schema().table(t))
        .filter_map(|t| {
            t.blob_size
                .as_ref()
                .map(|b| crate::model::AttrRef::new(&t.name, b))
        })
        .filter_map(|a| node.get(&a).as_int())
        .map(|v| v.max(0) as u64)
        .sum();
    (spec.tables.len() as u64, node.byte_size() + blobs)
}

#[cfg(test)]
pub(crate) mod tests;
