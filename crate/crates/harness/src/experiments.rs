//! End-to-end experiments, one per acceptance criterion. Each returns a
//! [`Verdict`] with a one-line summary; the structured reports behind
//! them are public so the CLI can print them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, Barrier};

use dagmig_core::engine::{migrate, recover, FaultPoint, MigrationReport, ValidationMode};
use dagmig_core::error::EngineError;
use dagmig_core::model::{AppId, AttrRef, DataNode, MigrationType, NodeId, RefKind};
use dagmig_core::psm::{compose, SchemaMapping};
use dagmig_core::store::{LeaseState, MetaStore, Outcome, WalOp};
use dagmig_core::tracker::Tracker;
use dagmig_synth::{Dataset, GenConfig, DIASPORA, GNUSOCIAL, MASTODON, TWITTER};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{audit, AnomalyAudit, Category};
use crate::metrics::{graph_size, median, unavailable_fractions, Cdf, ScalingReport};
use crate::naive::Naive;
use crate::{HarnessError, Lab};

/// Outcome of one criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(id: u8, name: &str, pass: bool, detail: String) -> Verdict {
        Verdict {
            id,
            name: name.to_owned(),
            pass,
            detail,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:>2} {}: {}", self.id, self.name, self.detail)
    }
}

/// A lab with `users` generated miniDiaspora users.
pub fn workload(users: usize, seed: u64) -> Result<(Lab, Dataset), HarnessError> {
    let mut lab = Lab::new()?;
    let ds = lab.populate(
        DIASPORA,
        &GenConfig::default().with_users(users).with_seed(seed),
    )?;
    Ok((lab, ds))
}

/// Migrates `users` one at a time to `dst`. A rolled-back migration is
/// an error here: experiments assume a fault-free run.
pub fn migrate_all(
    lab: &Lab,
    users: &[NodeId],
    dst: &str,
    mtype: MigrationType,
    validation: ValidationMode,
    seed: u64,
) -> Result<Vec<MigrationReport>, HarnessError> {
    let mut out = Vec::with_capacity(users.len());
    for u in users {
        let ctx = lab
            .context(u, dst, mtype)?
            .with_seed(seed)
            .with_validation(validation);
        let r = migrate(&lab.world, &ctx)?;
        if r.outcome != Outcome::Committed {
            return Err(HarnessError::State(format!(
                "migration of {u} rolled back: {}",
                r.error.unwrap_or_default()
            )));
        }
        out.push(r);
    }
    Ok(out)
}

fn audit_line(a: &AnomalyAudit) -> String {
    let per_app: Vec<String> = a
        .apps
        .iter()
        .map(|x| {
            format!(
                "{} n={} d={} l={} o={} p={}",
                x.app,
                x.total,
                x.count(Category::Dangling),
                x.count(Category::DataLoss),
                x.count(Category::OwnershipViolation),
                x.count(Category::PrematureDisplay)
            )
        })
        .collect();
    per_app.join("; ")
}

// -- 1 -------------------------------------------------------------------

pub fn anomaly_freedom(users: usize, seed: u64) -> Result<Verdict, HarnessError> {
    let (lab, ds) = workload(users, seed)?;
    migrate_all(
        &lab,
        &ds.users,
        MASTODON,
        MigrationType::Deletion,
        ValidationMode::Concurrent,
        seed,
    )?;
    let a = audit(&lab.world, &lab.baseline);
    let left = lab.users(DIASPORA)?.len();
    Ok(Verdict::new(
        1,
        "anomaly freedom",
        a.is_clean() && left == 0,
        format!("{users} users, {left} left at source; {}", audit_line(&a)),
    ))
}

// -- 2 -------------------------------------------------------------------

/// Cumulative dangling percentages after each naive migration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NaiveCurve {
    pub src_pct: Vec<f64>,
    pub dst_pct: Vec<f64>,
    pub src_total: u64,
    pub arrived: u64,
}

impl NaiveCurve {
    pub fn monotone(v: &[f64]) -> bool {
        v.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Naive deletion of every user into `dst`. Source percentages are over
/// the initial source population, destination ones over everything that
/// arrived by the end.
pub fn naive_curve(users: usize, seed: u64, dst: &str) -> Result<NaiveCurve, HarnessError> {
    let (lab, ds) = workload(users, seed)?;
    let m = lab.route(DIASPORA, dst)?;
    let src_total = lab.store(DIASPORA)?.count() as u64;
    let mut naive = Naive::plain();
    let (mut s, mut d, mut arrived) = (0u64, 0u64, 0u64);
    let mut raw = Vec::with_capacity(ds.users.len());
    for u in &ds.users {
        let r = naive.migrate(&lab.world, u, &m)?;
        s += r.dangling_src;
        d += r.dangling_dst;
        arrived += r.arrived;
        raw.push((s, d));
    }
    let pct = |x: u64, of: u64| {
        if of == 0 {
            0.0
        } else {
            100.0 * x as f64 / of as f64
        }
    };
    Ok(NaiveCurve {
        src_pct: raw.iter().map(|r| pct(r.0, src_total)).collect(),
        dst_pct: raw.iter().map(|r| pct(r.1, arrived)).collect(),
        src_total,
        arrived,
    })
}

pub fn naive_contrast(users: usize, seed: u64) -> Result<Verdict, HarnessError> {
    let c = naive_curve(users, seed, MASTODON)?;
    let (s, d) = (
        c.src_pct.last().copied().unwrap_or(0.0),
        c.dst_pct.last().copied().unwrap_or(0.0),
    );
    let mono = NaiveCurve::monotone(&c.src_pct) && NaiveCurve::monotone(&c.dst_pct);
    Ok(Verdict::new(
        2,
        "naive contrast",
        s > 10.0 && d > s && mono,
        format!("source {s:.1}%, destination {d:.1}%, monotone {mono}"),
    ))
}

// -- 3 -------------------------------------------------------------------

pub const CYCLE: [&str; 5] = [DIASPORA, MASTODON, TWITTER, GNUSOCIAL, DIASPORA];

/// Conservation ledger of a round trip.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    /// Node types whose every attribute survives the cycle unchanged.
    pub fully_mapped: Vec<String>,
    pub originals: u64,
    /// Each user's own objects, judged right after that user's cycle.
    pub own: Tally,
    /// Every original, judged once all users are done. Objects displaced
    /// by a later user's migration wait in their owner's bag here.
    pub end: Tally,
    /// Fully mapped own objects not restored identically.
    pub fully_mapped_failures: u64,
    pub examples: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub restored: u64,
    pub identical: u64,
    pub bagged: BTreeMap<String, u64>,
    /// Neither restored nor in a bag.
    pub unaccounted: u64,
}

impl Tally {
    pub fn bagged_total(&self) -> u64 {
        self.bagged.values().sum()
    }
}

enum Fate {
    Restored(Vec<AttrRef>),
    Bagged(String),
    Lost,
}

/// Attributes the cycle maps back onto themselves by pure copies, per
/// source node type, and whether that is every non-key attribute.
fn cycle_identity(lab: &Lab) -> Result<BTreeMap<String, (BTreeSet<AttrRef>, bool)>, HarnessError> {
    let mut m: Option<SchemaMapping> = None;
    for w in CYCLE.windows(2) {
        let leg = lab.route(w[0], w[1])?;
        m = Some(match m {
            None => (*leg).clone(),
            Some(acc) => compose(&acc, &leg).map_err(|e| HarnessError::State(e.to_string()))?,
        });
    }
    let m = m.expect("cycle has legs");
    let dag = lab.store(DIASPORA)?.dag().clone();
    let mut out = BTreeMap::new();
    for nt in dag.node_types() {
        let keys: BTreeSet<AttrRef> = dag.identity_attributes(&nt.name).into_iter().collect();
        let all: BTreeSet<AttrRef> = dag
            .node_attributes(&nt.name)
            .into_iter()
            .filter(|a| !keys.contains(a))
            .collect();
        let same: BTreeSet<AttrRef> = m
            .node_map(&nt.name)
            .filter(|nm| nm.to_node == nt.name)
            .map(|nm| {
                nm.attributes
                    .iter()
                    .filter(|a| a.is_pure_copy() && a.from[0] == a.to)
                    .map(|a| a.to.clone())
                    .collect()
            })
            .unwrap_or_default();
        let full = !all.is_empty() && all.is_subset(&same);
        out.insert(nt.name.clone(), (same, full));
    }
    Ok(out)
}

/// Where an original miniDiaspora object is now, and which of the
/// cycle-preserved attributes differ if it is back.
fn fate(lab: &Lab, o: &DataNode, same: &BTreeSet<AttrRef>) -> Fate {
    let meta = lab.world.meta();
    let tracker = Tracker::new(&lab.world);
    let Some(d) = lab.world.app(&o.id.app) else {
        return Fate::Lost;
    };
    let dag = d.dag();
    let edge = |a: &AttrRef| {
        dag.node_types()
            .iter()
            .flat_map(|n| n.reference_edges())
            .find(|(_, e)| e.from == *a)
            .map(|(_, e)| e.clone())
    };
    match tracker
        .live_identity(&o.id, &o.id.app)
        .and_then(|id| d.read(&id))
    {
        Some(n) if n.flags.app_visible() => {
            let refs = tracker.referents(d, &n);
            let diff = same
                .iter()
                .filter(|a| match edge(a) {
                    Some(e) => {
                        let was = dag.referenced(&e, o.get(a)).map(|x| meta.earliest(&x));
                        let now = refs.get(*a).map(|r| meta.earliest(&r.node));
                        was != now
                    }
                    None => o.get(a) != n.get(a),
                })
                .cloned()
                .collect();
            Fate::Restored(diff)
        }
        _ => {
            let class = meta.identity_class(&o.id);
            meta.bag_all()
                .into_iter()
                .find(|b| b.origin == o.id || class.contains(&b.origin))
                .map_or(Fate::Lost, |b| Fate::Bagged(format!("{:?}", b.reason)))
        }
    }
}

/// Every user travels the whole cycle before the next one starts.
pub fn round_trip_ledger(users: usize, seed: u64) -> Result<RoundTrip, HarnessError> {
    let (lab, ds) = workload(users, seed)?;
    let originals: Vec<DataNode> = lab.store(DIASPORA)?.all_nodes();
    let identity = cycle_identity(&lab)?;
    let mut by_owner: HashMap<&NodeId, Vec<&DataNode>> = HashMap::new();
    for o in &originals {
        if let Some(owner) = lab.baseline.owners.get(&o.id) {
            by_owner.entry(owner).or_default().push(o);
        }
    }
    let mut out = RoundTrip {
        fully_mapped: identity
            .iter()
            .filter(|(_, v)| v.1)
            .map(|(k, _)| k.clone())
            .collect(),
        originals: originals.len() as u64,
        ..RoundTrip::default()
    };
    let judge = |o: &DataNode,
                 tally: &mut Tally,
                 own: bool,
                 out_fail: &mut u64,
                 examples: &mut Vec<String>| {
        let (same, full) = identity.get(&o.id.node_type).cloned().unwrap_or_default();
        let mut note = |m: String| {
            if examples.len() < 10 {
                examples.push(m);
            }
        };
        match fate(&lab, o, &same) {
            Fate::Restored(diff) => {
                tally.restored += 1;
                if diff.is_empty() {
                    tally.identical += 1;
                } else if full && own {
                    *out_fail += 1;
                    note(format!("{} differs in {diff:?}", o.id));
                }
            }
            Fate::Bagged(reason) => {
                if full && own {
                    *out_fail += 1;
                    note(format!("{} bagged ({reason})", o.id));
                }
                *tally.bagged.entry(reason).or_default() += 1;
            }
            Fate::Lost => {
                tally.unaccounted += 1;
                note(format!("{} lost", o.id));
            }
        }
    };
    for u in &ds.users {
        let mut cur = u.clone();
        for w in CYCLE.windows(2) {
            let ctx = lab
                .context(&cur, w[1], MigrationType::Deletion)?
                .with_seed(seed);
            let r = migrate(&lab.world, &ctx)?;
            if r.outcome != Outcome::Committed {
                return Err(HarnessError::State(format!(
                    "{cur} -> {}: {:?}",
                    w[1], r.error
                )));
            }
            cur = r
                .timeline
                .iter()
                .find(|e| e.origin == cur)
                .and_then(|e| e.dst.clone())
                .ok_or_else(|| {
                    HarnessError::State(format!("root {cur} did not arrive at {}", w[1]))
                })?;
        }
        for o in by_owner.get(u).into_iter().flatten() {
            judge(
                o,
                &mut out.own,
                true,
                &mut out.fully_mapped_failures,
                &mut out.examples,
            );
        }
    }
    let mut ignored = 0;
    for o in &originals {
        judge(o, &mut out.end, false, &mut ignored, &mut out.examples);
    }
    Ok(out)
}

pub fn round_trip(users: usize, seed: u64) -> Result<Verdict, HarnessError> {
    let r = round_trip_ledger(users, seed)?;
    let (o, e) = (&r.own, &r.end);
    Ok(Verdict::new(
        3,
        "re-integration round trip",
        r.fully_mapped_failures == 0
            && o.unaccounted == 0
            && e.unaccounted == 0
            && e.restored + e.bagged_total() == r.originals,
        format!(
            "{} originals; own objects after each cycle: {} restored ({} identical), {} bagged {:?}, {} lost; \
             at the end: {} restored, {} bagged {:?}, {} lost; fully mapped {:?}, {} failures{}",
            r.originals,
            o.restored,
            o.identical,
            o.bagged_total(),
            o.bagged,
            o.unaccounted,
            e.restored,
            e.bagged_total(),
            e.bagged,
            e.unaccounted,
            r.fully_mapped,
            r.fully_mapped_failures,
            r.examples.first().map(|x| format!(" (e.g. {x})")).unwrap_or_default()
        ),
    ))
}

// -- 4 and 6 -------------------------------------------------------------

/// Per-user reports of the same workload under three configurations.
#[derive(Clone, Debug, Default)]
pub struct CostRuns {
    pub deletion: Vec<MigrationReport>,
    pub independent: Vec<MigrationReport>,
    /// Deletion with display validation on.
    pub validated: Vec<MigrationReport>,
}

pub fn cost_runs(users: usize, seed: u64) -> Result<CostRuns, HarnessError> {
    let run = |mtype, validation| -> Result<Vec<MigrationReport>, HarnessError> {
        let (lab, ds) = workload(users, seed)?;
        migrate_all(&lab, &ds.users, MASTODON, mtype, validation, seed)
    };
    Ok(CostRuns {
        deletion: run(MigrationType::Deletion, ValidationMode::Off)?,
        independent: run(MigrationType::Independent, ValidationMode::Off)?,
        validated: run(MigrationType::Deletion, ValidationMode::Concurrent)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub deletion_cost: u64,
    pub independent_cost: u64,
    pub validated_cost: u64,
    /// Deletion over independent cost.
    pub ratio: f64,
    /// Extra time validation adds, as a fraction of deletion cost.
    pub overhead: f64,
}

pub fn rates_of(runs: &CostRuns) -> Rates {
    let total = |v: &[MigrationReport]| v.iter().map(|r| r.costs.end).sum::<u64>();
    let (d, i, v) = (
        total(&runs.deletion),
        total(&runs.independent),
        total(&runs.validated),
    );
    Rates {
        deletion_cost: d,
        independent_cost: i,
        validated_cost: v,
        ratio: d as f64 / i.max(1) as f64,
        overhead: (v as f64 - d as f64) / d.max(1) as f64,
    }
}

pub fn rate_ordering(runs: &CostRuns) -> Verdict {
    let r = rates_of(runs);
    Verdict::new(
        4,
        "rate ordering",
        r.independent_cost < r.deletion_cost && r.ratio >= 3.0 && r.overhead <= 0.10,
        format!(
            "deletion {} independent {} units, ratio {:.2}; validation overhead {:.2}%",
            r.deletion_cost,
            r.independent_cost,
            r.ratio,
            100.0 * r.overhead
        ),
    )
}

pub fn scaling_of(runs: &CostRuns) -> Vec<ScalingReport> {
    let pts = |v: &[MigrationReport], f: fn(&MigrationReport) -> u64| -> Vec<(f64, f64)> {
        v.iter().map(|r| (graph_size(r), f(r) as f64)).collect()
    };
    vec![
        ScalingReport::new("deletion", &pts(&runs.deletion, |r| r.costs.end)),
        ScalingReport::new("independent", &pts(&runs.independent, |r| r.costs.end)),
        ScalingReport::new(
            "validation",
            &pts(&runs.validated, |r| r.costs.validation_work),
        ),
    ]
}

pub fn scaling(runs: &CostRuns) -> Verdict {
    let reports = scaling_of(runs);
    let ok = reports
        .iter()
        .all(|s| s.fit.is_some_and(|f| f.n >= 30 && f.r2 >= 0.9) && s.span() >= 10.0);
    let detail: Vec<String> = reports
        .iter()
        .map(|s| match s.fit {
            Some(f) => format!(
                "{} n={} R2={:.3} slope={:.2} span {:.0}x",
                s.algorithm,
                f.n,
                f.r2,
                f.slope,
                s.span()
            ),
            None => format!("{} no fit", s.algorithm),
        })
        .collect();
    Verdict::new(6, "linear scaling", ok, detail.join("; "))
}

// -- 5 -------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Continuity {
    pub aware: Cdf,
    pub naive_plus: Cdf,
    pub aware_median: f64,
    pub naive_plus_median: f64,
    /// Objects unavailable for more than a quarter of their
    /// migration.
    pub tail: usize,
    pub dominates: bool,
}

/// Share of a migration an object may stay hidden before it counts as
/// late-displayable.
pub const TAIL_FRACTION: f64 = 0.25;

pub fn continuity_report(users: usize, seed: u64) -> Result<Continuity, HarnessError> {
    let (lab, ds) = workload(users, seed)?;
    let aware = migrate_all(
        &lab,
        &ds.users,
        MASTODON,
        MigrationType::Deletion,
        ValidationMode::Concurrent,
        seed,
    )?;
    let s: Vec<f64> = aware.iter().flat_map(unavailable_fractions).collect();

    let (lab, ds) = workload(users, seed)?;
    let m = lab.route(DIASPORA, MASTODON)?;
    let mut naive = Naive::locked();
    let mut n: Vec<f64> = Vec::new();
    for u in &ds.users {
        n.extend(unavailable_fractions(
            &naive.migrate(&lab.world, u, &m)?.report,
        ));
    }
    let (sc, nc) = (Cdf::new(&s), Cdf::new(&n));
    Ok(Continuity {
        dominates: sc.dominates(&nc),
        aware_median: median(&s).unwrap_or(0.0),
        naive_plus_median: median(&n).unwrap_or(0.0),
        tail: s.iter().filter(|x| **x > TAIL_FRACTION).count(),
        aware: sc,
        naive_plus: nc,
    })
}

pub fn continuity(users: usize, seed: u64) -> Result<Verdict, HarnessError> {
    let c = continuity_report(users, seed)?;
    Ok(Verdict::new(
        5,
        "service continuity",
        c.dominates && c.aware_median <= 0.5 * c.naive_plus_median && c.tail > 0,
        format!(
            "median {:.3} vs naive+ {:.3}, dominates {}, {} objects hidden > {TAIL_FRACTION} of their migration",
            c.aware_median, c.naive_plus_median, c.dominates, c.tail
        ),
    ))
}

// -- 7 -------------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Atomicity {
    pub user: Option<NodeId>,
    pub user_nodes: u64,
    pub wal_points: u64,
    pub schedules: u64,
    pub back_to_start: u64,
    pub committed: u64,
    pub neither: u64,
    pub unclean_audits: u64,
}

/// The user whose owned data is closest to `target` nodes.
fn user_near(lab: &Lab, users: &[NodeId], target: usize) -> Result<NodeId, HarnessError> {
    let store = lab.store(DIASPORA)?;
    users
        .iter()
        .min_by_key(|u| (store.referencing(u, RefKind::Ownership).len() + 1).abs_diff(target))
        .cloned()
        .ok_or_else(|| HarnessError::Usage("empty workload".into()))
}

pub fn atomicity_report(
    users: usize,
    target_nodes: usize,
    seed: u64,
) -> Result<Atomicity, HarnessError> {
    let (lab, ds) = workload(users, seed)?;
    let user = user_near(&lab, &ds.users, target_nodes)?;
    let ctx = |l: &Lab| lab_ctx(l, &user, seed);
    let before = lab.world.state();
    let done = lab.fork()?;
    let r = migrate(&done.world, &ctx(&done)?)?;
    let committed = done.world.state();
    let n = done.world.meta().wal_scan(r.migration_id).len() as u64;
    let mut out = Atomicity {
        user: Some(user.clone()),
        user_nodes: r.src_nodes,
        wal_points: n,
        ..Atomicity::default()
    };
    for seq in 1..=n {
        for fault in [
            FaultPoint::BeforeMutation(seq),
            FaultPoint::AfterMutation(seq),
        ] {
            let l = lab.fork()?;
            out.schedules += 1;
            match migrate(&l.world, &ctx(&l)?.with_fault(Some(fault))) {
                Err(EngineError::Crash { .. }) => {}
                other => {
                    return Err(HarnessError::State(format!(
                        "{fault}: expected a crash, got {other:?}"
                    )))
                }
            }
            recover(&l.world)?;
            let now = l.world.state();
            if now == before {
                out.back_to_start += 1;
            } else if now == committed {
                out.committed += 1;
            } else {
                out.neither += 1;
            }
            if !audit(&l.world, &l.baseline).is_clean() {
                out.unclean_audits += 1;
            }
        }
    }
    Ok(out)
}

fn lab_ctx(
    lab: &Lab,
    user: &NodeId,
    seed: u64,
) -> Result<dagmig_core::engine::MigrationContext, HarnessError> {
    Ok(lab
        .context(user, MASTODON, MigrationType::Deletion)?
        .with_seed(seed))
}

pub fn atomicity(users: usize, target_nodes: usize, seed: u64) -> Result<Verdict, HarnessError> {
    let a = atomicity_report(users, target_nodes, seed)?;
    Ok(Verdict::new(
        7,
        "transaction atomicity",
        a.wal_points > 0 && a.neither == 0 && a.unclean_audits == 0,
        format!(
            "{}-node user, {} WAL points, {} schedules: {} rolled back, {} committed, {} neither, {} unclean audits",
            a.user_nodes, a.wal_points, a.schedules, a.back_to_start, a.committed, a.neither, a.unclean_audits
        ),
    ))
}

// -- 8 -------------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OrderingTrace {
    pub migrations: u64,
    pub deletes_checked: u64,
    pub displays_checked: u64,
    pub deletion_violations: Vec<String>,
    pub display_violations: Vec<String>,
}

/// Parents a node of `store`'s app must not be shown without.
fn required_parents(lab: &Lab, app: &AppId, n: &DataNode) -> Vec<NodeId> {
    let Some(store) = lab.world.app(app) else {
        return Vec::new();
    };
    let dag = store.dag();
    let Some(spec) = dag.node_type(&n.id.node_type) else {
        return Vec::new();
    };
    if !spec.display_rule.requires_parents_displayed {
        return Vec::new();
    }
    let refs = Tracker::new(&lab.world).referents(store, n);
    spec.depends_on
        .iter()
        .filter(|e| !spec.display_rule.exceptions.contains(&e.to))
        .filter_map(|e| refs.get(&e.from).map(|r| r.node.clone()))
        .collect()
}

/// Random deletion and independent migrations between the four apps,
/// each checked against its own write-ahead log and display events.
pub fn ordering_trace(
    migrations: usize,
    users: usize,
    seed: u64,
) -> Result<OrderingTrace, HarnessError> {
    let (lab, _) = workload(users, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let apps = [DIASPORA, MASTODON, TWITTER, GNUSOCIAL];
    let mut out = OrderingTrace::default();
    while (out.migrations as usize) < migrations {
        let src = *apps.choose(&mut rng).expect("apps");
        let pool = lab.users(src)?;
        let Some(user) = pool.choose(&mut rng).cloned() else {
            continue;
        };
        let dst = **apps
            .iter()
            .filter(|a| **a != src)
            .collect::<Vec<_>>()
            .choose(&mut rng)
            .expect("apps");
        let mtype = if rng.random_bool(0.7) {
            MigrationType::Deletion
        } else {
            MigrationType::Independent
        };
        let ctx = lab
            .context(&user, dst, mtype)?
            .with_seed(rng.random())
            .with_workers(rng.random_range(1..=4));
        let r = migrate(&lab.world, &ctx)?;
        out.migrations += 1;
        let meta = lab.world.meta();
        let wal = meta.wal_scan(r.migration_id);

        // Deletion: a dependency parent never goes before its child, and
        // the root goes last.
        let deleted: HashMap<NodeId, (u64, DataNode)> = wal
            .iter()
            .filter_map(|w| match &w.op {
                // Destination deletes are failed validations leaving for bags.
                WalOp::DeleteNode { pre_image } if pre_image.id.app.as_str() == src => {
                    Some((pre_image.id.clone(), (w.seq, pre_image.clone())))
                }
                _ => None,
            })
            .collect();
        let sdag = lab.store(src)?.dag().clone();
        for (id, (seq, node)) in &deleted {
            out.deletes_checked += 1;
            for e in sdag
                .node_type(&id.node_type)
                .map(|s| s.depends_on.clone())
                .unwrap_or_default()
            {
                if let Some(p) = sdag.referenced(&e, node.get(&e.from)) {
                    if let Some((pseq, _)) = deleted.get(&p) {
                        if pseq < seq {
                            out.deletion_violations
                                .push(format!("{p} deleted before its child {id}"));
                        }
                    }
                }
            }
            if let Some((rseq, _)) = deleted.get(&user) {
                if rseq < seq {
                    out.deletion_violations
                        .push(format!("root {user} deleted before {id}"));
                }
            }
        }

        // Display: every required parent was shown earlier or was never
        // migrated at all.
        let events = meta.display_events();
        let first: HashMap<&NodeId, u64> = events.iter().rev().map(|e| (&e.node, e.seq)).collect();
        let dst_id = AppId::from(dst);
        let dstore = lab.store(dst)?;
        for e in events.iter().filter(|e| e.migration_id == r.migration_id) {
            out.displays_checked += 1;
            let Some(n) = dstore.read(&e.node) else {
                continue;
            };
            for p in required_parents(&lab, &dst_id, &n) {
                let earlier = first.get(&p).is_some_and(|s| *s < e.seq);
                let native = meta.predecessor(&p).is_none() && dstore.is_visible(&p);
                if !earlier && !native {
                    out.display_violations
                        .push(format!("{} shown before its parent {p}", e.node));
                }
            }
        }
    }
    Ok(out)
}

pub fn ordering(migrations: usize, users: usize, seed: u64) -> Result<Verdict, HarnessError> {
    let t = ordering_trace(migrations, users, seed)?;
    Ok(Verdict::new(
        8,
        "ordering invariants",
        t.deletion_violations.is_empty()
            && t.display_violations.is_empty()
            && t.deletes_checked > 0
            && t.displays_checked > 0,
        format!(
            "{} migrations, {} deletions and {} displays checked, {} + {} violations{}",
            t.migrations,
            t.deletes_checked,
            t.displays_checked,
            t.deletion_violations.len(),
            t.display_violations.len(),
            t.deletion_violations
                .iter()
                .chain(&t.display_violations)
                .next()
                .map(|v| format!(" (e.g. {v})"))
                .unwrap_or_default()
        ),
    ))
}

// -- 9 -------------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompositionCheck {
    pub rows: u64,
    pub values_compared: u64,
    pub mismatches: Vec<String>,
    /// Composed entries whose source or target the corresponding leg
    /// does not cover.
    pub coverage_excess: Vec<String>,
}

/// Composes D→G with G→T and replays a generated corpus through it and
/// through the direct D→T mapping.
pub fn composition_check(users: usize, seed: u64) -> Result<CompositionCheck, HarnessError> {
    let (lab, _) = workload(users, seed)?;
    let first = lab.route(DIASPORA, GNUSOCIAL)?;
    let second = lab.route(GNUSOCIAL, TWITTER)?;
    let composed = compose(&first, &second).map_err(|e| HarnessError::State(e.to_string()))?;
    let direct = lab
        .fixtures
        .direct_mapping(DIASPORA, TWITTER)
        .ok_or_else(|| HarnessError::State("no direct D->T mapping".into()))?;
    let mut out = CompositionCheck::default();
    for n in lab.store(DIASPORA)?.all_nodes() {
        let (Some(c), Some(d)) = (
            composed.node_map(&n.id.node_type),
            direct.node_map(&n.id.node_type),
        ) else {
            continue;
        };
        if c.to_node != d.to_node {
            out.mismatches
                .push(format!("{}: {} vs {}", n.id, c.to_node, d.to_node));
            continue;
        }
        out.rows += 1;
        for ca in &c.attributes {
            let Some(da) = d.for_target(&ca.to) else {
                continue;
            };
            // Both sides draw the same fresh key.
            let key = n.id.key;
            let (cv, dv) = (ca.eval(&n, &mut || key), da.eval(&n, &mut || key));
            out.values_compared += 1;
            if cv != dv && out.mismatches.len() < 20 {
                out.mismatches
                    .push(format!("{} {}: {cv:?} vs {dv:?}", n.id, ca.to));
            }
        }
    }
    for c in &composed.node_maps {
        let leg1 = first.node_map(&c.from_node);
        let sources: BTreeSet<&AttrRef> = leg1.map(|m| m.mapped_sources()).unwrap_or_default();
        for a in c.mapped_sources() {
            if !sources.contains(a) {
                out.coverage_excess
                    .push(format!("{a} mapped only by the composition"));
            }
        }
        let targets: BTreeSet<&AttrRef> = second
            .node_maps
            .iter()
            .filter(|m| m.to_node == c.to_node)
            .flat_map(|m| m.attributes.iter().map(|a| &a.to))
            .collect();
        for a in &c.attributes {
            if !targets.contains(&a.to) {
                out.coverage_excess
                    .push(format!("{} produced only by the composition", a.to));
            }
        }
    }
    Ok(out)
}

pub fn composition(users: usize, seed: u64) -> Result<Verdict, HarnessError> {
    let c = composition_check(users, seed)?;
    Ok(Verdict::new(
        9,
        "mapping composition",
        c.mismatches.is_empty() && c.coverage_excess.is_empty() && c.values_compared > 0,
        format!(
            "{} rows, {} values compared, {} mismatches, {} coverage excesses",
            c.rows,
            c.values_compared,
            c.mismatches.len(),
            c.coverage_excess.len()
        ),
    ))
}

// -- 10 ------------------------------------------------------------------

/// Winners per round of `threads` simultaneous acquisitions.
pub fn lease_rounds(threads: usize, rounds: usize) -> Vec<usize> {
    let meta = Arc::new(MetaStore::new());
    let user = NodeId::new(DIASPORA, "person", 1);
    let (src, dst) = (AppId::from(DIASPORA), AppId::from(MASTODON));
    (0..rounds)
        .map(|_| {
            let barrier = Arc::new(Barrier::new(threads));
            let handles: Vec<_> = (0..threads)
                .map(|_| {
                    let (meta, barrier, user, src, dst) = (
                        meta.clone(),
                        barrier.clone(),
                        user.clone(),
                        src.clone(),
                        dst.clone(),
                    );
                    std::thread::spawn(move || {
                        barrier.wait();
                        meta.acquire_lease(&user, MigrationType::Deletion, &src, &dst)
                            .ok()
                    })
                })
                .collect();
            let won: Vec<_> = handles
                .into_iter()
                .filter_map(|h| h.join().ok().flatten())
                .collect();
            for l in &won {
                meta.finish_lease(l.migration_id, LeaseState::Committed)
                    .ok();
            }
            won.len()
        })
        .collect()
}

pub fn lease_exclusivity(threads: usize, rounds: usize) -> Verdict {
    let wins = lease_rounds(threads, rounds);
    let bad = wins.iter().filter(|w| **w != 1).count();
    Verdict::new(
        10,
        "lease exclusivity",
        bad == 0 && wins.len() == rounds,
        format!("{threads} acquirers x {rounds} rounds, {bad} rounds without exactly one winner"),
    )
}

/// Parameters of the full acceptance run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub seed: u64,
    pub anomaly_users: usize,
    pub workload_users: usize,
    pub atomicity_users: usize,
    pub atomicity_nodes: usize,
    pub ordering_migrations: usize,
    pub lease_threads: usize,
    pub lease_rounds: usize,
}

impl Default for Suite {
    fn default() -> Self {
        Suite {
            seed: 7,
            anomaly_users: 1000,
            workload_users: 100,
            atomicity_users: 40,
            atomicity_nodes: 30,
            ordering_migrations: 50,
            lease_threads: 16,
            lease_rounds: 100,
        }
    }
}

impl Suite {
    /// Every criterion in order. Errors become failing verdicts.
    pub fn run(&self) -> Vec<Verdict> {
        let s = self.seed;
        let w = self.workload_users;
        let fail = |id: u8, name: &str, e: HarnessError| {
            Verdict::new(id, name, false, format!("error: {e}"))
        };
        let runs = cost_runs(w, s);
        let (four, six) = match &runs {
            Ok(r) => (rate_ordering(r), scaling(r)),
            Err(e) => (
                fail(4, "rate ordering", HarnessError::State(e.to_string())),
                fail(6, "linear scaling", HarnessError::State(e.to_string())),
            ),
        };
        vec![
            anomaly_freedom(self.anomaly_users, s)
                .unwrap_or_else(|e| fail(1, "anomaly freedom", e)),
            naive_contrast(self.anomaly_users, s).unwrap_or_else(|e| fail(2, "naive contrast", e)),
            round_trip(w, s).unwrap_or_else(|e| fail(3, "re-integration round trip", e)),
            four,
            continuity(w, s).unwrap_or_else(|e| fail(5, "service continuity", e)),
            six,
            atomicity(self.atomicity_users, self.atomicity_nodes, s)
                .unwrap_or_else(|e| fail(7, "transaction atomicity", e)),
            ordering(self.ordering_migrations, w, s)
                .unwrap_or_else(|e| fail(8, "ordering invariants", e)),
            composition(w, s).unwrap_or_else(|e| fail(9, "mapping composition", e)),
            lease_exclusivity(self.lease_threads, self.lease_rounds),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_lines_lead_with_the_result() {
        let v = Verdict::new(3, "x", true, "ok".into());
        assert_eq!(v.to_string(), "PASS  3 x: ok");
        let v = Verdict::new(10, "y", false, "no".into());
        assert_eq!(v.to_string(), "FAIL 10 y: no");
    }

    #[test]
    fn monotone_allows_plateaus() {
        assert!(NaiveCurve::monotone(&[0.0, 1.0, 1.0, 2.0]));
        assert!(!NaiveCurve::monotone(&[0.0, 2.0, 1.0]));
    }

    #[test]
    fn a_lone_user_produces_no_naive_dangling() {
        let c = naive_curve(1, 3, MASTODON).unwrap();
        assert_eq!(c.src_pct, vec![0.0]);
        assert_eq!(c.dst_pct, vec![0.0]);
    }
}
