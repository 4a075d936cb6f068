//! Anomaly auditor. Recomputes dangling data, data loss, ownership
//! violations and premature display by scanning stores, bags, grants and
//! the display timeline. It deliberately shares no code with the
//! validator or the engine's bookkeeping.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use dagmig_core::model::{AppId, Dag, DataNode, NodeId, NodeSelector, Value};
use dagmig_core::store::{AppStore, MetaStore, World};
use serde::{Deserialize, Serialize};

use crate::lab::Baseline;

/// Findings kept per application and category; counts stay exact.
const KEEP: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Dangling,
    DataLoss,
    OwnershipViolation,
    PrematureDisplay,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Dangling => "dangling",
            Category::DataLoss => "data_loss",
            Category::OwnershipViolation => "ownership_violation",
            Category::PrematureDisplay => "premature_display",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub category: Category,
    pub node: NodeId,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppAudit {
    pub app: AppId,
    pub total: u64,
    pub counts: BTreeMap<Category, u64>,
    /// A sample of the findings, at most a few per category.
    pub findings: Vec<Finding>,
}

impl AppAudit {
    pub fn count(&self, c: Category) -> u64 {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    /// Dangling objects as a percentage of all objects in the app.
    pub fn dangling_pct(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.count(Category::Dangling) as f64 / self.total as f64
        }
    }

    fn add(&mut self, category: Category, node: &NodeId, detail: String) {
        let c = self.counts.entry(category).or_default();
        *c += 1;
        if *c as usize <= KEEP {
            self.findings.push(Finding {
                category,
                node: node.clone(),
                detail,
            });
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnomalyAudit {
    pub apps: Vec<AppAudit>,
}

impl AnomalyAudit {
    pub fn app(&self, app: &str) -> Option<&AppAudit> {
        self.apps.iter().find(|a| a.app.as_str() == app)
    }

    pub fn total(&self, c: Category) -> u64 {
        self.apps.iter().map(|a| a.count(c)).sum()
    }

    pub fn findings(&self) -> u64 {
        self.apps.iter().flat_map(|a| a.counts.values()).sum()
    }

    pub fn is_clean(&self) -> bool {
        self.findings() == 0
    }
}

/// Raw-key target of an edge attribute, ignoring any engine metadata.
fn target(dag: &Dag, to: &str, v: &Value) -> Option<NodeId> {
    v.as_int().map(|k| NodeId::new(dag.app().as_str(), to, k))
}

/// Why a shown node is dangling, if it is.
pub(crate) fn dangling_reason(store: &AppStore, n: &DataNode) -> Option<String> {
    let dag = store.dag();
    if dag.is_root(&n.id.node_type) {
        return None;
    }
    let spec = dag.node_type(&n.id.node_type)?;
    let rule = &spec.display_rule;
    if rule.requires_parents_displayed {
        for e in spec
            .depends_on
            .iter()
            .filter(|e| !rule.exceptions.contains(&e.to))
        {
            match target(dag, &e.to, n.get(&e.from)) {
                Some(p) if store.is_visible(&p) => {}
                Some(p) => return Some(format!("parent {p} missing or hidden")),
                None => return Some(format!("{} does not name a parent", e.from)),
            }
        }
    }
    let live = |edges: &[dagmig_core::model::EdgeSpec]| {
        edges
            .iter()
            .any(|e| target(dag, &e.to, n.get(&e.from)).is_some_and(|r| store.is_visible(&r)))
    };
    let owner = rule.requires_owner_root.then(|| live(&spec.owned_by));
    let sharer = rule.requires_sharer_root.then(|| live(&spec.shared_with));
    let ok = match (owner, sharer) {
        (Some(a), Some(b)) => a || b,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => true,
    };
    (!ok).then(|| "no displayed owner or sharer root".to_owned())
}

/// Scans every application. `baseline` lists what existed before the
/// migrations under audit; data loss is judged against it.
pub fn audit(world: &World, baseline: &Baseline) -> AnomalyAudit {
    let meta = world.meta();
    let mut apps: BTreeMap<AppId, AppAudit> = world
        .apps()
        .map(|s| {
            (
                s.app().clone(),
                AppAudit {
                    app: s.app().clone(),
                    total: s.count() as u64,
                    counts: BTreeMap::new(),
                    findings: Vec::new(),
                },
            )
        })
        .collect();

    let mut nodes: HashMap<AppId, Vec<DataNode>> = HashMap::new();
    for store in world.apps() {
        let all = store.all_nodes();
        let a = apps.get_mut(store.app()).expect("listed");
        for n in all.iter().filter(|n| n.flags.app_visible()) {
            if let Some(why) = dangling_reason(store, n) {
                a.add(Category::Dangling, &n.id, why);
            }
        }
        nodes.insert(store.app().clone(), all);
    }

    // Data loss: every baseline object must still exist somewhere, under
    // some identity, or wait in a bag.
    let mut lost: Vec<&NodeId> = Vec::new();
    for o in baseline.owners.keys() {
        let here = world.app(&o.app).is_some_and(|s| s.contains(o));
        if here {
            continue;
        }
        let kept = meta
            .identity_class(o)
            .iter()
            .any(|m| world.app(&m.app).is_some_and(|s| s.contains(m)) || meta.bag_get(m).is_some());
        if !kept {
            lost.push(o);
        }
    }
    lost.sort();
    for o in lost {
        if let Some(a) = apps.get_mut(&o.app) {
            a.add(
                Category::DataLoss,
                o,
                "not in any application or bag".into(),
            );
        }
    }

    ownership(world, meta, baseline, &nodes, &mut apps);
    premature(world, meta, &mut apps);
    AnomalyAudit {
        apps: apps.into_values().collect(),
    }
}

/// Objects that arrived through a migration by someone other than their
/// original owner need a matching grant.
fn ownership(
    world: &World,
    meta: &MetaStore,
    baseline: &Baseline,
    nodes: &HashMap<AppId, Vec<DataNode>>,
    apps: &mut BTreeMap<AppId, AppAudit>,
) {
    let grants = meta.grants();
    let migrations: HashMap<u64, _> = meta.migrations().into_iter().map(|m| (m.id, m)).collect();
    for store in world.apps() {
        for n in &nodes[store.app()] {
            if baseline.owners.contains_key(&n.id) {
                continue;
            }
            let Some((_, mid)) = meta.predecessor(&n.id) else {
                continue;
            };
            let Some(m) = migrations.get(&mid) else {
                continue;
            };
            let origin = meta.earliest(&n.id);
            let Some(owner) = baseline.owners.get(&origin) else {
                continue;
            };
            let mover = meta.earliest(&m.user);
            if *owner == mover {
                continue;
            }
            let class = meta.identity_class(&n.id);
            let consented = grants.iter().any(|g| {
                g.grantor == *owner
                    && g.grantee == mover
                    && g.allowed.contains(&m.mtype)
                    && match &g.selector {
                        NodeSelector::Node(id) => class.contains(id),
                        NodeSelector::Type { node_type, .. } => node_type
                            .as_ref()
                            .is_none_or(|t| class.iter().any(|c| c.node_type == *t)),
                    }
            });
            if !consented {
                apps.get_mut(store.app()).expect("listed").add(
                    Category::OwnershipViolation,
                    &n.id,
                    format!("owned by {owner}, moved by {mover} without a grant"),
                );
            }
        }
    }
}

/// A display event must come after the display of every required
/// parent and of a root that justifies it.
fn premature(world: &World, meta: &MetaStore, apps: &mut BTreeMap<AppId, AppAudit>) {
    let events = meta.display_events();
    let mut first: HashMap<&NodeId, u64> = HashMap::new();
    for e in &events {
        first.entry(&e.node).or_insert(e.seq);
    }
    // Shown before `seq`: an earlier display event, or native to the app.
    let before = |p: &NodeId, seq: u64| match first.get(p) {
        Some(s) => *s < seq,
        None => meta.predecessor(p).is_none(),
    };
    for e in &events {
        if first[&e.node] != e.seq {
            continue;
        }
        let Some(store) = world.app(&e.node.app) else {
            continue;
        };
        let Some(n) = store.read(&e.node) else {
            continue;
        };
        let dag = store.dag();
        if dag.is_root(&n.id.node_type) {
            continue;
        }
        let Some(spec) = dag.node_type(&n.id.node_type) else {
            continue;
        };
        let rule = &spec.display_rule;
        let mut bad = Vec::new();
        if rule.requires_parents_displayed {
            for e2 in spec
                .depends_on
                .iter()
                .filter(|x| !rule.exceptions.contains(&x.to))
            {
                if let Some(p) = target(dag, &e2.to, n.get(&e2.from)) {
                    if !before(&p, e.seq) {
                        bad.push(p);
                    }
                }
            }
        }
        let roots_ok = |edges: &[dagmig_core::model::EdgeSpec]| {
            edges
                .iter()
                .any(|x| target(dag, &x.to, n.get(&x.from)).is_some_and(|r| before(&r, e.seq)))
        };
        let owner = rule.requires_owner_root.then(|| roots_ok(&spec.owned_by));
        let sharer = rule
            .requires_sharer_root
            .then(|| roots_ok(&spec.shared_with));
        let roots = match (owner, sharer) {
            (Some(a), Some(b)) => a || b,
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => true,
        };
        if !bad.is_empty() || !roots {
            let what = if bad.is_empty() {
                "its root".to_owned()
            } else {
                bad.iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            apps.get_mut(store.app()).expect("listed").add(
                Category::PrematureDisplay,
                &n.id,
                format!("displayed before {what}"),
            );
        }
    }
}
