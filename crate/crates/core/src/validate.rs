//! Two-phase display validation at the destination.
//!
//! Phase 1 runs alongside the migration: every arrival is checked against
//! the destination's display rules and either shown at once or parked
//! until the nodes blocking it are shown. Phase 2 runs once the walk is
//! over and settles every node still parked, in one pass.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::{txn_cost, Meter, ROW_COST, TXN_OVERHEAD};
use crate::error::EngineError;
use crate::model::{DataNode, Flags, NodeId, Value};
use crate::store::{AppStore, Journal, MetaStore, WalOp};

/// Re-check every parked node after this many arrivals (or as many as
/// are parked, if more), to catch unblocking changes nobody announced.
pub const SWEEP_EVERY: u64 = 256;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Display,
    /// Not yet. Lists the nodes whose display would change the answer;
    /// empty when only a relink can help.
    Blocked(Vec<NodeId>),
}

fn shown(store: &AppStore, id: &NodeId) -> bool {
    store.is_visible(id)
}

/// Checks `node` against its display rule in `store`. The migrating
/// user's own root always passes.
pub fn check(store: &AppStore, node: &DataNode, user_root: Option<&NodeId>) -> Verdict {
    let dag = store.dag();
    if dag.is_root(&node.id.node_type) || user_root == Some(&node.id) {
        return Verdict::Display;
    }
    let Some(spec) = dag.node_type(&node.id.node_type) else {
        return Verdict::Blocked(Vec::new());
    };
    let rule = &spec.display_rule;
    let mut blockers = Vec::new();
    let mut ok = true;

    if rule.requires_parents_displayed {
        for e in &spec.depends_on {
            if rule.exceptions.contains(&e.to) {
                continue;
            }
            match node.get(&e.from) {
                Value::Null => {}
                Value::Placeholder(_) => ok = false,
                v => match dag.referenced(e, v) {
                    Some(p) if shown(store, &p) => {}
                    Some(p) => {
                        ok = false;
                        blockers.push(p);
                    }
                    None => ok = false,
                },
            }
        }
    }

    let roots = |edges: &[crate::model::EdgeSpec], found: &mut Vec<NodeId>| -> bool {
        let mut any = false;
        for e in edges {
            if let Some(r) = dag.referenced(e, node.get(&e.from)) {
                if shown(store, &r) {
                    any = true;
                } else {
                    found.push(r);
                }
            }
        }
        any
    };
    let mut root_blockers = Vec::new();
    let owner_ok = rule
        .requires_owner_root
        .then(|| roots(&spec.owned_by, &mut root_blockers));
    let sharer_ok = rule
        .requires_sharer_root
        .then(|| roots(&spec.shared_with, &mut root_blockers));
    let roots_ok = match (owner_ok, sharer_ok) {
        (None, None) => true,
        (Some(a), None) | (None, Some(a)) => a,
        (Some(a), Some(b)) => a || b,
    };
    if !roots_ok {
        ok = false;
        blockers.extend(root_blockers);
    }

    if ok {
        Verdict::Display
    } else {
        blockers.sort();
        blockers.dedup();
        Verdict::Blocked(blockers)
    }
}

pub fn is_displayable(store: &AppStore, node: &DataNode, user_root: Option<&NodeId>) -> bool {
    check(store, node, user_root) == Verdict::Display
}

/// Makes `node` visible: journaled flag transition plus a timeline event.
/// Returns false when the node is gone or already visible.
pub fn display(
    store: &AppStore,
    meta: &MetaStore,
    j: &dyn Journal,
    node: &NodeId,
    vtime: u64,
) -> Result<bool, EngineError> {
    let Some(prev) = store.flags(node) else {
        return Ok(false);
    };
    if prev.app_visible() {
        return Ok(false);
    }
    let seq = j.log(WalOp::DisplayNode {
        node: node.clone(),
        prev,
    })?;
    let done = store.set_flags(node, Some(prev), Flags::NATIVE)?;
    if done {
        meta.push_display_event(j.migration_id(), node.clone(), vtime);
    }
    j.applied(seq)?;
    Ok(done)
}

/// What phase 2 needs from the migration that owns the parked nodes.
pub trait Settle {
    /// Second-chance reference repair before the final check.
    fn relink(&self, j: &dyn Journal, node: &NodeId) -> Result<(), EngineError>;
    /// Removes a node that can never be shown, keeping its data.
    fn bag_failed(&self, j: &dyn Journal, node: &NodeId) -> Result<(), EngineError>;
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PhaseTwo {
    pub displayed: Vec<NodeId>,
    pub bagged: Vec<NodeId>,
}

/// Validation state for one migration into one destination store.
pub struct Validator {
    user_root: Option<NodeId>,
    pending: BTreeSet<NodeId>,
    /// blocker -> parked nodes it blocks
    waiting: HashMap<NodeId, BTreeSet<NodeId>>,
    ready: BTreeSet<NodeId>,
    rng: ChaCha8Rng,
    lane: Meter,
    since_sweep: u64,
    /// Units spent checking and displaying, idle time excluded.
    busy: u64,
    /// node -> virtual time it became visible
    shown_at: BTreeMap<NodeId, u64>,
}

impl Validator {
    pub fn new(user_root: Option<NodeId>, seed: u64, lane: Meter) -> Self {
        Validator {
            user_root,
            pending: BTreeSet::new(),
            waiting: HashMap::new(),
            ready: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            lane,
            since_sweep: 0,
            busy: 0,
            shown_at: BTreeMap::new(),
        }
    }

    pub fn set_user_root(&mut self, root: NodeId) {
        self.user_root = Some(root);
    }

    pub fn lane(&self) -> &Meter {
        &self.lane
    }

    pub fn busy(&self) -> u64 {
        self.busy
    }

    fn charge(&mut self, rows: u64, bytes: u64) -> u64 {
        let c = txn_cost(rows, bytes);
        self.busy += c;
        self.lane.advance(c)
    }

    /// Opens a read transaction; the checks inside it pay per row.
    fn open_read(&mut self) {
        self.busy += TXN_OVERHEAD;
        self.lane.advance(TXN_OVERHEAD);
    }

    fn charge_rows(&mut self, rows: u64) {
        self.busy += rows * ROW_COST;
        self.lane.advance(rows * ROW_COST);
    }

    pub fn pending(&self) -> &BTreeSet<NodeId> {
        &self.pending
    }

    pub fn shown_at(&self) -> &BTreeMap<NodeId, u64> {
        &self.shown_at
    }

    fn evaluate(&mut self, store: &AppStore, id: &NodeId) {
        let Some(node) = store.read(id) else {
            self.pending.remove(id);
            return;
        };
        let parents = store
            .dag()
            .node_type(&id.node_type)
            .map_or(0, |s| s.depends_on.len());
        self.charge_rows(1 + parents as u64);
        match check(store, &node, self.user_root.as_ref()) {
            Verdict::Display => {
                self.ready.insert(id.clone());
            }
            Verdict::Blocked(bs) => {
                for b in bs {
                    self.waiting.entry(b).or_default().insert(id.clone());
                }
            }
        }
    }

    /// A node arrived at virtual time `t`.
    pub fn on_arrival(
        &mut self,
        store: &AppStore,
        meta: &MetaStore,
        j: &dyn Journal,
        id: &NodeId,
        t: u64,
    ) -> Result<(), EngineError> {
        self.lane.catch_up(t);
        self.pending.insert(id.clone());
        self.since_sweep += 1;
        self.open_read();
        self.evaluate(store, id);
        if self.since_sweep >= SWEEP_EVERY.max(self.pending.len() as u64) {
            self.since_sweep = 0;
            self.sweep(store);
        }
        self.drain(store, meta, j)
    }

    /// References of these parked nodes changed at virtual time `t`.
    pub fn on_changed(
        &mut self,
        store: &AppStore,
        meta: &MetaStore,
        j: &dyn Journal,
        ids: &[NodeId],
        t: u64,
    ) -> Result<(), EngineError> {
        let mut any = false;
        for id in ids {
            if self.pending.contains(id) {
                if !any {
                    self.lane.catch_up(t);
                    self.open_read();
                    any = true;
                }
                self.evaluate(store, id);
            }
        }
        self.drain(store, meta, j)
    }

    fn sweep(&mut self, store: &AppStore) {
        let all: Vec<NodeId> = self.pending.iter().cloned().collect();
        for id in all {
            self.evaluate(store, &id);
        }
    }

    /// Displays eligible nodes, picked at random, until none is left.
    fn drain(
        &mut self,
        store: &AppStore,
        meta: &MetaStore,
        j: &dyn Journal,
    ) -> Result<(), EngineError> {
        while !self.ready.is_empty() {
            let i = self.rng.random_range(0..self.ready.len());
            let id = self.ready.iter().nth(i).cloned().expect("index in range");
            self.ready.remove(&id);
            if !self.pending.contains(&id) {
                continue;
            }
            // The state may have moved since the node was queued.
            let Some(node) = store.read(&id) else {
                self.pending.remove(&id);
                continue;
            };
            if !is_displayable(store, &node, self.user_root.as_ref()) {
                self.open_read();
                self.evaluate(store, &id);
                continue;
            }
            let t = self.charge(1, 0);
            display(store, meta, j, &id, t)?;
            self.pending.remove(&id);
            self.shown_at.insert(id.clone(), t);
            if let Some(ws) = self.waiting.remove(&id) {
                for w in ws {
                    if self.pending.contains(&w) {
                        self.evaluate(store, &w);
                    }
                }
            }
        }
        Ok(())
    }

    /// Settles every parked node in one pass, parents before children.
    pub fn phase2(
        &mut self,
        store: &AppStore,
        meta: &MetaStore,
        j: &dyn Journal,
        hooks: &dyn Settle,
        start: u64,
    ) -> Result<PhaseTwo, EngineError> {
        self.lane.catch_up(start);
        self.open_read();
        let topo: HashMap<&str, usize> = store
            .dag()
            .topo_types()
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let mut order: Vec<NodeId> = self.pending.iter().cloned().collect();
        order.sort_by(|a, b| {
            let ra = topo
                .get(a.node_type.as_str())
                .copied()
                .unwrap_or(usize::MAX);
            let rb = topo
                .get(b.node_type.as_str())
                .copied()
                .unwrap_or(usize::MAX);
            (ra, a.key).cmp(&(rb, b.key))
        });
        let mut out = PhaseTwo::default();
        for id in order {
            if !store.contains(&id) {
                self.pending.remove(&id);
                continue;
            }
            hooks.relink(j, &id)?;
            let node = store.read(&id).expect("checked above");
            let parents = store
                .dag()
                .node_type(&id.node_type)
                .map_or(0, |s| s.depends_on.len());
            self.charge_rows(1 + parents as u64);
            if is_displayable(store, &node, self.user_root.as_ref()) {
                let t = self.charge(1, 0);
                display(store, meta, j, &id, t)?;
                self.shown_at.insert(id.clone(), t);
                out.displayed.push(id.clone());
            } else {
                self.charge(2, node.byte_size());
                hooks.bag_failed(j, &id)?;
                out.bagged.push(id.clone());
            }
            self.pending.remove(&id);
        }
        self.waiting.clear();
        self.ready.clear();
        Ok(out)
    }
}

/// Journal that records nothing, for work outside a migration
/// transaction (baselines, deferred validation, unit tests).
pub struct Unjournaled(pub crate::store::MigrationId);

impl Journal for Unjournaled {
    fn migration_id(&self) -> crate::store::MigrationId {
        self.0
    }
    fn log(&self, _op: WalOp) -> Result<u64, EngineError> {
        Ok(0)
    }
    fn applied(&self, _seq: u64) -> Result<(), EngineError> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttrRef, Flags};
    use crate::specio::{load_dag_spec, load_schema, SpecDocument};
    use std::sync::Arc;

    // account(root) <- status <- reply <- subreply
    const SCHEMA: &str = r#"{"version":1,"app":"dst","tables":[
        {"name":"accounts","key":"id","attributes":["id","name"]},
        {"name":"statuses","key":"id","attributes":["id","account_id","body"]},
        {"name":"replies","key":"id","attributes":["id","account_id","status_id"]},
        {"name":"subreplies","key":"id","attributes":["id","account_id","status_id","parent_id"]}]}"#;
    const DAG: &str = r#"{"version":1,"app":"dst","root":"account","nodes":[
        {"name":"account","tables":["accounts"]},
        {"name":"status","tables":["statuses"],
         "owned_by":[{"from":"statuses.account_id","to":"account","to_attr":"accounts.id"}]},
        {"name":"reply","tables":["replies"],
         "depends_on":[{"from":"replies.status_id","to":"status","to_attr":"statuses.id"}],
         "owned_by":[{"from":"replies.account_id","to":"account","to_attr":"accounts.id"}]},
        {"name":"subreply","tables":["subreplies"],
         "depends_on":[{"from":"subreplies.status_id","to":"status","to_attr":"statuses.id"},
                       {"from":"subreplies.parent_id","to":"reply","to_attr":"replies.id"}],
         "owned_by":[{"from":"subreplies.account_id","to":"account","to_attr":"accounts.id"}]}]}"#;

    fn store() -> AppStore {
        let schema = load_schema(&SpecDocument::inline(SCHEMA)).unwrap();
        let dag = load_dag_spec(&SpecDocument::inline(DAG), &schema).unwrap();
        AppStore::new(Arc::new(dag), 0)
    }

    fn put(s: &AppStore, ty: &str, key: i64, attrs: &[(&str, Value)], flags: Flags) -> NodeId {
        let id = NodeId::new("dst", ty, key);
        let table = s.dag().node_type(ty).unwrap().anchor_table().to_owned();
        let mut map = BTreeMap::new();
        map.insert(AttrRef::new(&table, "id"), Value::Int(key));
        for (a, v) in attrs {
            map.insert(AttrRef::new(&table, *a), v.clone());
        }
        s.insert(&DataNode {
            id: id.clone(),
            attrs: map,
            flags,
        })
        .unwrap();
        id
    }

    #[test]
    fn reply_waits_for_its_status() {
        let s = store();
        let acct = put(&s, "account", 3, &[], Flags::NATIVE);
        let status = put(
            &s,
            "status",
            12,
            &[("account_id", Value::Int(3))],
            Flags::ARRIVED,
        );
        let reply = put(
            &s,
            "reply",
            13,
            &[("account_id", Value::Int(3)), ("status_id", Value::Int(12))],
            Flags::ARRIVED,
        );
        let r = s.read(&reply).unwrap();
        assert_eq!(
            check(&s, &r, Some(&acct)),
            Verdict::Blocked(vec![status.clone()])
        );
        s.set_flags(&status, None, Flags::NATIVE).unwrap();
        assert!(is_displayable(&s, &r, Some(&acct)));
    }

    #[test]
    fn placeholder_parent_blocks_and_null_parent_does_not() {
        let s = store();
        put(&s, "account", 3, &[], Flags::NATIVE);
        let a = put(
            &s,
            "reply",
            20,
            &[
                ("account_id", Value::Int(3)),
                ("status_id", Value::placeholder()),
            ],
            Flags::ARRIVED,
        );
        assert_eq!(
            check(&s, &s.read(&a).unwrap(), None),
            Verdict::Blocked(vec![])
        );
        let st = put(
            &s,
            "status",
            21,
            &[("account_id", Value::Int(3))],
            Flags::NATIVE,
        );
        let b = put(
            &s,
            "reply",
            22,
            &[
                ("account_id", Value::Int(3)),
                ("status_id", Value::Int(st.key)),
            ],
            Flags::ARRIVED,
        );
        assert!(is_displayable(&s, &s.read(&b).unwrap(), None));
    }

    #[test]
    fn user_root_shows_immediately() {
        let s = store();
        let acct = put(&s, "account", 3, &[], Flags::ARRIVED);
        assert!(is_displayable(&s, &s.read(&acct).unwrap(), Some(&acct)));
    }

    #[test]
    fn reverse_arrival_displays_parent_first() {
        let s = store();
        let meta = MetaStore::new();
        let j = Unjournaled(1);
        let acct = put(&s, "account", 3, &[], Flags::NATIVE);
        let mut v = Validator::new(Some(acct), 7, Meter::new());
        let reply = put(
            &s,
            "reply",
            13,
            &[("account_id", Value::Int(3)), ("status_id", Value::Int(12))],
            Flags::ARRIVED,
        );
        v.on_arrival(&s, &meta, &j, &reply, 10).unwrap();
        assert!(meta.display_events().is_empty());
        let status = put(
            &s,
            "status",
            12,
            &[("account_id", Value::Int(3))],
            Flags::ARRIVED,
        );
        v.on_arrival(&s, &meta, &j, &status, 20).unwrap();
        let order: Vec<NodeId> = meta.display_events().into_iter().map(|e| e.node).collect();
        assert_eq!(order, vec![status, reply]);
        assert!(v.pending().is_empty());
    }

    struct Recorder(parking_lot::Mutex<Vec<NodeId>>, Arc<AppStore>);
    impl Settle for Recorder {
        fn relink(&self, _j: &dyn Journal, _node: &NodeId) -> Result<(), EngineError> {
            Ok(())
        }
        fn bag_failed(&self, _j: &dyn Journal, node: &NodeId) -> Result<(), EngineError> {
            self.1.delete(node)?;
            self.0.lock().push(node.clone());
            Ok(())
        }
    }

    #[test]
    fn phase_two_bags_orphans_and_empties_pending() {
        let s = Arc::new(store());
        let meta = MetaStore::new();
        let j = Unjournaled(1);
        let acct = put(&s, "account", 3, &[], Flags::NATIVE);
        let mut v = Validator::new(Some(acct), 1, Meter::new());
        // status 12 never arrives
        let orphan = put(
            &s,
            "reply",
            14,
            &[("account_id", Value::Int(3)), ("status_id", Value::Int(12))],
            Flags::ARRIVED,
        );
        v.on_arrival(&s, &meta, &j, &orphan, 1).unwrap();
        let rec = Recorder(Default::default(), s.clone());
        let out = v.phase2(&s, &meta, &j, &rec, 100).unwrap();
        assert_eq!(out.bagged, vec![orphan.clone()]);
        assert!(out.displayed.is_empty());
        assert!(v.pending().is_empty());
        assert!(!s.contains(&orphan));
    }

    #[test]
    fn chain_in_reverse_is_fully_displayed() {
        let s = Arc::new(store());
        let meta = MetaStore::new();
        let j = Unjournaled(1);
        let acct = put(&s, "account", 3, &[], Flags::NATIVE);
        let mut v = Validator::new(Some(acct), 3, Meter::new());
        let c = put(
            &s,
            "subreply",
            32,
            &[
                ("account_id", Value::Int(3)),
                ("status_id", Value::Int(30)),
                ("parent_id", Value::Int(31)),
            ],
            Flags::ARRIVED,
        );
        v.on_arrival(&s, &meta, &j, &c, 1).unwrap();
        let b = put(
            &s,
            "reply",
            31,
            &[("account_id", Value::Int(3)), ("status_id", Value::Int(30))],
            Flags::ARRIVED,
        );
        v.on_arrival(&s, &meta, &j, &b, 2).unwrap();
        let a = put(
            &s,
            "status",
            30,
            &[("account_id", Value::Int(3))],
            Flags::ARRIVED,
        );
        v.on_arrival(&s, &meta, &j, &a, 3).unwrap();
        let rec = Recorder(Default::default(), s.clone());
        let out = v.phase2(&s, &meta, &j, &rec, 10).unwrap();
        assert!(out.bagged.is_empty());
        let order: Vec<NodeId> = meta.display_events().into_iter().map(|e| e.node).collect();
        assert_eq!(order, vec![a, b, c]);
    }
}
