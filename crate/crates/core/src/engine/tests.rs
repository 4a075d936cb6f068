use std::collections::BTreeSet;

use super::*;
use crate::model::{AttrRef, Flags, NodeSelector, SharingGrant, Value};
use crate::specio::{load_dag_spec, load_mapping, load_schema, SpecDocument};
use crate::store::{BagEntry, BagReason, PlaceholderKind, PlaceholderLoc, WorldState};

// Source: person <- post <- comment <- reply <- subreply.
// Posts are owned by their author and may be shared with one person.
const SRC_SCHEMA: &str = r#"{"version":1,"app":"src","tables":[
    {"name":"people","key":"id","attributes":["id","name"]},
    {"name":"posts","key":"id","attributes":["id","author_id","shared_with","text","lang","loc"]},
    {"name":"comments","key":"id","attributes":["id","author_id","post_id","text"]},
    {"name":"replies","key":"id","attributes":["id","author_id","comment_id","text"]},
    {"name":"subreplies","key":"id","attributes":["id","author_id","reply_id","text"]}]}"#;
const SRC_DAG: &str = r#"{"version":1,"app":"src","root":"person","nodes":[
    {"name":"person","tables":["people"]},
    {"name":"post","tables":["posts"],
     "owned_by":[{"from":"posts.author_id","to":"person","to_attr":"people.id"}],
     "shared_with":[{"from":"posts.shared_with","to":"person","to_attr":"people.id"}],
     "display_rule":{"requires_parents_displayed":true,"requires_owner_root":true,"requires_sharer_root":true}},
    {"name":"comment","tables":["comments"],
     "depends_on":[{"from":"comments.post_id","to":"post","to_attr":"posts.id"}],
     "owned_by":[{"from":"comments.author_id","to":"person","to_attr":"people.id"}]},
    {"name":"reply","tables":["replies"],
     "depends_on":[{"from":"replies.comment_id","to":"comment","to_attr":"comments.id"}],
     "owned_by":[{"from":"replies.author_id","to":"person","to_attr":"people.id"}]},
    {"name":"subreply","tables":["subreplies"],
     "depends_on":[{"from":"subreplies.reply_id","to":"reply","to_attr":"replies.id"}],
     "owned_by":[{"from":"subreplies.author_id","to":"person","to_attr":"people.id"}]}]}"#;

const DST_SCHEMA: &str = r#"{"version":1,"app":"dst","tables":[
    {"name":"accounts","key":"id","attributes":["id","name"]},
    {"name":"statuses","key":"id","attributes":["id","account_id","shared_with","body"]},
    {"name":"replies","key":"id","attributes":["id","account_id","status_id","body"]},
    {"name":"answers","key":"id","attributes":["id","account_id","reply_id","body"]},
    {"name":"followups","key":"id","attributes":["id","account_id","answer_id","body"]}]}"#;
const DST_DAG: &str = r#"{"version":1,"app":"dst","root":"account","nodes":[
    {"name":"account","tables":["accounts"]},
    {"name":"status","tables":["statuses"],
     "owned_by":[{"from":"statuses.account_id","to":"account","to_attr":"accounts.id"}],
     "shared_with":[{"from":"statuses.shared_with","to":"account","to_attr":"accounts.id"}],
     "display_rule":{"requires_parents_displayed":true,"requires_owner_root":true,"requires_sharer_root":true}},
    {"name":"reply","tables":["replies"],
     "depends_on":[{"from":"replies.status_id","to":"status","to_attr":"statuses.id"}],
     "owned_by":[{"from":"replies.account_id","to":"account","to_attr":"accounts.id"}]},
    {"name":"answer","tables":["answers"],
     "depends_on":[{"from":"answers.reply_id","to":"reply","to_attr":"replies.id"}],
     "owned_by":[{"from":"answers.account_id","to":"account","to_attr":"accounts.id"}]},
    {"name":"followup","tables":["followups"],
     "depends_on":[{"from":"followups.answer_id","to":"answer","to_attr":"answers.id"}],
     "owned_by":[{"from":"followups.account_id","to":"account","to_attr":"accounts.id"}]}]}"#;

const FORTH: &str = r#"{"version":1,"from_app":"src","to_app":"dst","node_maps":[
    {"from_node":"person","to_node":"account","attributes":[
        {"from":"people.id","to":"accounts.id","transform":"newID"},
        {"from":"people.name","to":"accounts.name","transform":"copy"}]},
    {"from_node":"post","to_node":"status","attributes":[
        {"from":"posts.id","to":"statuses.id","transform":"newID"},
        {"from":"posts.author_id","to":"statuses.account_id","transform":"copy"},
        {"from":"posts.shared_with","to":"statuses.shared_with","transform":"copy"},
        {"from":"posts.text","to":"statuses.body","transform":"copy"}]},
    {"from_node":"comment","to_node":"reply","attributes":[
        {"from":"comments.id","to":"replies.id","transform":"newID"},
        {"from":"comments.author_id","to":"replies.account_id","transform":"copy"},
        {"from":"comments.post_id","to":"replies.status_id","transform":"copy"},
        {"from":"comments.text","to":"replies.body","transform":"copy"}]},
    {"from_node":"reply","to_node":"answer","attributes":[
        {"from":"replies.id","to":"answers.id","transform":"newID"},
        {"from":"replies.author_id","to":"answers.account_id","transform":"copy"},
        {"from":"replies.comment_id","to":"answers.reply_id","transform":"copy"},
        {"from":"replies.text","to":"answers.body","transform":"copy"}]},
    {"from_node":"subreply","to_node":"followup","attributes":[
        {"from":"subreplies.id","to":"followups.id","transform":"newID"},
        {"from":"subreplies.author_id","to":"followups.account_id","transform":"copy"},
        {"from":"subreplies.reply_id","to":"followups.answer_id","transform":"copy"},
        {"from":"subreplies.text","to":"followups.body","transform":"copy"}]}]}"#;

const BACK: &str = r#"{"version":1,"from_app":"dst","to_app":"src","node_maps":[
    {"from_node":"account","to_node":"person","attributes":[
        {"from":"accounts.id","to":"people.id","transform":"newID"},
        {"from":"accounts.name","to":"people.name","transform":"copy"}]},
    {"from_node":"status","to_node":"post","attributes":[
        {"from":"statuses.id","to":"posts.id","transform":"newID"},
        {"from":"statuses.account_id","to":"posts.author_id","transform":"copy"},
        {"from":"statuses.shared_with","to":"posts.shared_with","transform":"copy"},
        {"from":"statuses.body","to":"posts.text","transform":"copy"}]},
    {"from_node":"reply","to_node":"comment","attributes":[
        {"from":"replies.id","to":"comments.id","transform":"newID"},
        {"from":"replies.account_id","to":"comments.author_id","transform":"copy"},
        {"from":"replies.status_id","to":"comments.post_id","transform":"copy"},
        {"from":"replies.body","to":"comments.text","transform":"copy"}]}]}"#;

pub(crate) struct Fixture {
    pub world: World,
    pub forth: Arc<SchemaMapping>,
    pub back: Arc<SchemaMapping>,
}

pub(crate) const BOB: i64 = 1;
pub(crate) const ALICE: i64 = 2;

pub(crate) fn src(ty: &str, key: i64) -> NodeId {
    NodeId::new("src", ty, key)
}

pub(crate) fn put(world: &World, id: &NodeId, attrs: &[(&str, Value)]) {
    let store = world.app(&id.app).unwrap();
    let table = store
        .dag()
        .node_type(&id.node_type)
        .unwrap()
        .anchor_table()
        .to_owned();
    let attrs = attrs
        .iter()
        .map(|(a, v)| (AttrRef::new(&table, *a), v.clone()))
        .collect();
    store
        .insert(&DataNode {
            id: id.clone(),
            attrs,
            flags: Flags::NATIVE,
        })
        .unwrap();
}

/// Bob (1) and Alice (2) in the source. Bob's Post1 is shared with Alice
/// for both migration types; Alice's Comment1 replies to it, Bob's
/// Comment2 to Comment1, Alice's Comment3 to Comment2. Alice's bag holds
/// Status2 from an earlier stay at the destination.
pub(crate) fn fig4() -> Fixture {
    let ss = load_schema(&SpecDocument::inline(SRC_SCHEMA)).unwrap();
    let sd = load_dag_spec(&SpecDocument::inline(SRC_DAG), &ss).unwrap();
    let ds = load_schema(&SpecDocument::inline(DST_SCHEMA)).unwrap();
    let dd = load_dag_spec(&SpecDocument::inline(DST_DAG), &ds).unwrap();
    let forth = Arc::new(load_mapping(&SpecDocument::inline(FORTH), &sd, &dd).unwrap());
    let back = Arc::new(load_mapping(&SpecDocument::inline(BACK), &dd, &sd).unwrap());
    let mut world = World::new();
    world.add_app(Arc::new(sd), 0);
    world.add_app(Arc::new(dd), 10);

    put(&world, &src("person", BOB), &[("name", "bob".into())]);
    put(&world, &src("person", ALICE), &[("name", "alice".into())]);
    put(
        &world,
        &src("post", 2),
        &[
            ("author_id", BOB.into()),
            ("shared_with", ALICE.into()),
            ("text", "hi".into()),
            ("lang", "en".into()),
            ("loc", "nyc".into()),
        ],
    );
    put(
        &world,
        &src("comment", 5),
        &[
            ("author_id", ALICE.into()),
            ("post_id", 2.into()),
            ("text", "c1".into()),
        ],
    );
    put(
        &world,
        &src("reply", 6),
        &[
            ("author_id", BOB.into()),
            ("comment_id", 5.into()),
            ("text", "c2".into()),
        ],
    );
    put(
        &world,
        &src("subreply", 7),
        &[
            ("author_id", ALICE.into()),
            ("reply_id", 6.into()),
            ("text", "c3".into()),
        ],
    );
    world.meta().add_grant(SharingGrant {
        grantor: src("person", BOB),
        grantee: src("person", ALICE),
        selector: NodeSelector::Node(src("post", 2)),
        allowed: [MigrationType::Deletion, MigrationType::Independent].into(),
    });
    world.meta().bag_put(BagEntry {
        owner: src("person", ALICE),
        origin: NodeId::new("dst", "status", 3),
        attrs: [(AttrRef::new("statuses", "body"), Value::from("s2"))].into(),
        refs: [(AttrRef::new("statuses", "account_id"), src("person", ALICE))].into(),
        reason: BagReason::DanglingSource,
        partial: false,
        migration_id: 0,
    });
    Fixture { world, forth, back }
}

pub(crate) fn ctx(f: &Fixture, mtype: MigrationType) -> MigrationContext {
    MigrationContext::new(src("person", ALICE), mtype, f.forth.clone())
}

fn dst_with_body(world: &World, ty: &str, body: &str) -> Option<DataNode> {
    let store = world.app(&AppId::from("dst")).unwrap();
    store
        .all_nodes()
        .into_iter()
        .find(|n| n.id.node_type == ty && n.attrs.values().any(|v| *v == Value::from(body)))
}

fn bag_origins(world: &World, owner: i64) -> BTreeSet<(String, String, BagReason)> {
    world
        .meta()
        .bag_list(&src("person", owner))
        .into_iter()
        .map(|e| (e.origin.app.to_string(), e.origin.node_type, e.reason))
        .collect()
}

#[test]
fn deletion_reproduces_the_worked_example() {
    let f = fig4();
    let r = migrate(&f.world, &ctx(&f, MigrationType::Deletion)).unwrap();
    assert_eq!(r.outcome, Outcome::Committed, "{:?}", r.error);

    // Only Bob's root is left at the source.
    let s = f.world.app(&AppId::from("src")).unwrap();
    let left: Vec<NodeId> = s.all_ids();
    assert_eq!(left, vec![src("person", BOB)]);

    let d = f.world.app(&AppId::from("dst")).unwrap();
    let status1 = dst_with_body(&f.world, "status", "hi").expect("Status1");
    let reply1 = dst_with_body(&f.world, "reply", "c1").expect("Reply1");
    let status2 = dst_with_body(&f.world, "status", "s2").expect("Status2");
    assert!(
        dst_with_body(&f.world, "followup", "c3").is_none(),
        "Reply2 is bagged"
    );
    let root3 = d.node_ids("account");
    assert_eq!(root3.len(), 1);
    for n in [&status1, &reply1, &status2] {
        assert!(n.flags.app_visible(), "{} should be displayed", n.id);
    }

    // Reply1 points at Status1, not at the stale source key.
    assert_eq!(
        reply1.get(&AttrRef::new("replies", "status_id")),
        &Value::Int(status1.id.key)
    );
    // Bob never joined: his ownership survives as a placeholder.
    assert!(status1
        .get(&AttrRef::new("statuses", "account_id"))
        .is_placeholder());
    let ph = f
        .world
        .meta()
        .placeholder_at(&PlaceholderLoc {
            app: AppId::from("dst"),
            table: "statuses".into(),
            row: status1.id.key,
            attr: "account_id".into(),
        })
        .unwrap();
    assert_eq!(ph.original, src("person", BOB));
    assert_eq!(ph.kind, PlaceholderKind::AbsentUser);
    assert_eq!(
        status1.get(&AttrRef::new("statuses", "shared_with")),
        &Value::Int(root3[0].key)
    );

    assert_eq!(
        bag_origins(&f.world, BOB),
        [("src".into(), "reply".into(), BagReason::DanglingSource)].into()
    );
    assert_eq!(
        bag_origins(&f.world, ALICE),
        [
            ("src".into(), "post".into(), BagReason::NoMapping),
            ("dst".into(), "followup".into(), BagReason::FailedValidation),
        ]
        .into()
    );
    let leftovers = f.world.meta().bag_get(&src("post", 2)).unwrap();
    assert!(leftovers.partial);
    assert_eq!(
        leftovers
            .attrs
            .keys()
            .map(|a| a.attr.as_str())
            .collect::<Vec<_>>(),
        vec!["lang", "loc"]
    );

    let c = &r.counts;
    assert_eq!(c.considered, c.settled());
    assert_eq!(c.migrated, 3);
    assert_eq!(c.bagged_dangling_source, 1);
    assert_eq!(c.bagged_failed_validation, 1);
    assert_eq!(c.from_bags, 1);
    assert_eq!(c.deleted, 4);

    // Reply1 arrived before Status1 but was displayed after it.
    let events: Vec<NodeId> = f
        .world
        .meta()
        .display_events()
        .into_iter()
        .map(|e| e.node)
        .collect();
    let pos = |id: &NodeId| events.iter().position(|e| e == id).unwrap();
    assert!(pos(&status1.id) < pos(&reply1.id));
    let arrivals = r
        .timeline
        .iter()
        .filter_map(|t| Some((t.dst.clone()?, t.arrived?)));
    let at: BTreeMap<NodeId, u64> = arrivals.collect();
    assert!(at[&reply1.id] < at[&status1.id]);
}

#[test]
fn independent_leaves_the_source_alone() {
    let f = fig4();
    let before = f.world.app(&AppId::from("src")).unwrap().snapshot();
    let r = migrate(&f.world, &ctx(&f, MigrationType::Independent)).unwrap();
    assert_eq!(r.outcome, Outcome::Committed, "{:?}", r.error);
    let after = f.world.app(&AppId::from("src")).unwrap().snapshot();
    assert_eq!(before, after.without_migrated_marks());
    assert!(after.nodes["post"][0].flags.migrated);

    assert!(bag_origins(&f.world, BOB).is_empty());
    assert_eq!(
        bag_origins(&f.world, ALICE),
        [
            ("src".into(), "post".into(), BagReason::NoMapping),
            ("dst".into(), "followup".into(), BagReason::FailedValidation),
        ]
        .into()
    );
    assert!(dst_with_body(&f.world, "status", "hi")
        .unwrap()
        .flags
        .app_visible());
    assert!(dst_with_body(&f.world, "reply", "c1")
        .unwrap()
        .flags
        .app_visible());
    assert_eq!(r.counts.considered, r.counts.settled());
}

#[test]
fn independent_rerun_copies_nothing() {
    let f = fig4();
    let first = migrate(&f.world, &ctx(&f, MigrationType::Independent)).unwrap();
    assert_eq!(first.counts.migrated, 3);
    let count = f.world.app(&AppId::from("dst")).unwrap().count();
    let second = migrate(&f.world, &ctx(&f, MigrationType::Independent)).unwrap();
    assert_eq!(second.outcome, Outcome::Committed);
    assert_eq!(second.counts.migrated, 0);
    assert_eq!(second.counts.already_migrated, 3);
    assert_eq!(f.world.app(&AppId::from("dst")).unwrap().count(), count);
}

#[test]
fn grants_decide_per_migration_type() {
    let f = fig4();
    let s = f.world.app(&AppId::from("src")).unwrap().clone();
    let alice = src("person", ALICE);
    let post = s.read(&src("post", 2)).unwrap();
    let comment2 = s.read(&src("reply", 6)).unwrap();
    assert_eq!(
        can_migrate(&f.world, &s, &post, &alice, MigrationType::Deletion),
        Decision::Yes
    );
    assert_eq!(
        can_migrate(&f.world, &s, &comment2, &alice, MigrationType::Deletion),
        Decision::SkipNotShared
    );
    let own = s.read(&src("comment", 5)).unwrap();
    assert_eq!(
        can_migrate(&f.world, &s, &own, &alice, MigrationType::Deletion),
        Decision::Yes
    );

    f.world.meta().add_grant(SharingGrant {
        grantor: src("person", BOB),
        grantee: alice.clone(),
        selector: NodeSelector::Node(src("reply", 6)),
        allowed: [MigrationType::Independent].into(),
    });
    assert_eq!(
        can_migrate(&f.world, &s, &comment2, &alice, MigrationType::Deletion),
        Decision::SkipWrongType
    );
    assert_eq!(
        can_migrate(&f.world, &s, &comment2, &alice, MigrationType::Independent),
        Decision::Yes
    );
}

#[test]
fn migrating_back_merges_bagged_leftovers() {
    let f = fig4();
    migrate(&f.world, &ctx(&f, MigrationType::Deletion)).unwrap();
    let d = f.world.app(&AppId::from("dst")).unwrap();
    let root3 = d.node_ids("account")[0].clone();
    let back = MigrationContext::new(root3, MigrationType::Deletion, f.back.clone());
    let r = migrate(&f.world, &back).unwrap();
    assert_eq!(r.outcome, Outcome::Committed, "{:?}", r.error);
    assert!(r.counts.merged >= 1);

    let s = f.world.app(&AppId::from("src")).unwrap();
    let post = s
        .all_nodes()
        .into_iter()
        .find(|n| {
            n.id.node_type == "post" && *n.get(&AttrRef::new("posts", "text")) == Value::from("hi")
        })
        .expect("Post1 is back");
    assert_eq!(post.get(&AttrRef::new("posts", "lang")), &Value::from("en"));
    assert_eq!(post.get(&AttrRef::new("posts", "loc")), &Value::from("nyc"));
    // Bob stayed, so the ownership placeholder resolves to his root.
    assert_eq!(
        post.get(&AttrRef::new("posts", "author_id")),
        &Value::Int(BOB)
    );
    assert!(post.flags.app_visible());
    assert!(f.world.meta().bag_get(&src("post", 2)).is_none());
}

#[test]
fn user_with_only_a_root() {
    let f = fig4();
    let s = f.world.app(&AppId::from("src")).unwrap();
    put(&f.world, &src("person", 9), &[("name", "carol".into())]);
    let c = MigrationContext::new(src("person", 9), MigrationType::Deletion, f.forth.clone());
    let r = migrate(&f.world, &c).unwrap();
    assert_eq!(r.outcome, Outcome::Committed);
    assert_eq!(r.counts.considered, 0);
    assert!(!s.contains(&src("person", 9)));
    assert_eq!(
        f.world
            .app(&AppId::from("dst"))
            .unwrap()
            .node_ids("account")
            .len(),
        1
    );
}

#[test]
fn second_lease_for_the_same_user_is_refused() {
    let f = fig4();
    let alice = src("person", ALICE);
    f.world
        .meta()
        .acquire_lease(
            &alice,
            MigrationType::Deletion,
            &AppId::from("src"),
            &AppId::from("dst"),
        )
        .unwrap();
    let e = migrate(&f.world, &ctx(&f, MigrationType::Deletion)).unwrap_err();
    assert!(matches!(
        e,
        EngineError::Store(crate::error::StoreError::LeaseDenied(_))
    ));
}

type Shape = (
    Vec<(String, String, usize)>,
    Vec<(String, BagReason)>,
    usize,
);

/// Node counts per type and bag entries by origin type and reason.
fn shape(w: &WorldState) -> Shape {
    let nodes = w
        .apps
        .iter()
        .flat_map(|a| {
            a.nodes
                .iter()
                .map(move |(t, ns)| (a.app.to_string(), t.clone(), ns.len()))
        })
        .collect();
    let mut bags: Vec<_> = w
        .tracked
        .bags
        .iter()
        .map(|b| (b.origin.node_type.clone(), b.reason))
        .collect();
    bags.sort();
    (nodes, bags, w.tracked.placeholders.len())
}

fn wal_len(mtype: MigrationType) -> u64 {
    let f = fig4();
    let r = migrate(&f.world, &ctx(&f, mtype)).unwrap();
    f.world.meta().wal_scan(r.migration_id).len() as u64
}

#[test]
fn every_crash_point_recovers_to_before_or_after() {
    for mtype in [MigrationType::Deletion, MigrationType::Independent] {
        let committed = {
            let f = fig4();
            migrate(&f.world, &ctx(&f, mtype)).unwrap();
            f.world.state()
        };
        let n = wal_len(mtype);
        assert!(n > 10);
        for seq in 1..=n {
            for fault in [
                FaultPoint::BeforeMutation(seq),
                FaultPoint::AfterMutation(seq),
            ] {
                let f = fig4();
                let before = f.world.state();
                let c = ctx(&f, mtype).with_fault(Some(fault));
                let e = migrate(&f.world, &c).unwrap_err();
                assert!(
                    matches!(e, EngineError::Crash { seq: s } if s == seq),
                    "{e}"
                );
                recover(&f.world).unwrap();
                let now = f.world.state();
                // A durable commit record commits, whatever follows it.
                let is_commit = seq == n;
                if is_commit {
                    assert!(now == committed, "{mtype} {fault}: not the committed state");
                } else {
                    assert!(now == before, "{mtype} {fault}: not the initial state");
                }
                // Recovery is idempotent and the user may migrate again.
                recover(&f.world).unwrap();
                assert!(f.world.state() == now);
                if !is_commit {
                    // Fresh keys are not rewound, so compare shapes.
                    let r = migrate(&f.world, &ctx(&f, mtype)).unwrap();
                    assert_eq!(r.outcome, Outcome::Committed);
                    assert_eq!(
                        shape(&f.world.state()),
                        shape(&committed),
                        "{mtype} {fault}"
                    );
                }
            }
        }
    }
}

#[test]
fn rollback_of_a_committed_migration_is_refused() {
    let f = fig4();
    let r = migrate(&f.world, &ctx(&f, MigrationType::Deletion)).unwrap();
    let state = f.world.state();
    assert_eq!(
        rollback(&f.world, r.migration_id).unwrap(),
        Outcome::Committed
    );
    assert!(f.world.state() == state);
}

#[test]
fn workers_agree_with_a_single_worker() {
    let single = {
        let f = fig4();
        migrate(&f.world, &ctx(&f, MigrationType::Deletion)).unwrap();
        f.world.state()
    };
    for workers in [2, 4] {
        let f = fig4();
        let r = migrate(
            &f.world,
            &ctx(&f, MigrationType::Deletion).with_workers(workers),
        )
        .unwrap();
        assert_eq!(
            r.outcome,
            Outcome::Committed,
            "{workers} workers: {:?}",
            r.error
        );
        let s = f.world.state();
        let count = |w: &WorldState| w.apps.iter().map(|a| a.node_count()).sum::<usize>();
        assert_eq!(count(&s), count(&single));
        assert_eq!(s.tracked.bags.len(), single.tracked.bags.len());
    }
}

#[test]
fn validation_off_leaves_arrivals_hidden() {
    let f = fig4();
    let c = ctx(&f, MigrationType::Independent).with_validation(ValidationMode::Off);
    let r = migrate(&f.world, &c).unwrap();
    assert_eq!(r.counts.displayed, 0);
    let d = f.world.app(&AppId::from("dst")).unwrap();
    assert!(d.all_nodes().iter().all(|n| n.flags.migration_flag));
}

#[test]
fn deferred_validation_reaches_the_same_display_set() {
    let shown = |mode| {
        let f = fig4();
        migrate(
            &f.world,
            &ctx(&f, MigrationType::Deletion).with_validation(mode),
        )
        .unwrap();
        let d = f.world.app(&AppId::from("dst")).unwrap();
        d.all_nodes()
            .into_iter()
            .filter(|n| n.flags.app_visible())
            .map(|n| n.id)
            .collect::<BTreeSet<_>>()
    };
    assert_eq!(
        shown(ValidationMode::Concurrent),
        shown(ValidationMode::Deferred)
    );
}

#[test]
fn fault_points_parse() {
    assert_eq!(
        "wal:17".parse::<FaultPoint>().unwrap(),
        FaultPoint::BeforeMutation(17)
    );
    assert_eq!(
        "wal-after:3".parse::<FaultPoint>().unwrap(),
        FaultPoint::AfterMutation(3)
    );
    assert!("disk:3".parse::<FaultPoint>().is_err());
    assert_eq!(FaultPoint::AfterMutation(3).to_string(), "wal-after:3");
}

#[test]
fn cutoff_keeps_newer_nodes_out_of_the_walk() {
    // No creation attribute in this fixture: the cutoff changes nothing.
    let f = fig4();
    let r = migrate(
        &f.world,
        &ctx(&f, MigrationType::Independent).with_cutoff(Some(0)),
    )
    .unwrap();
    assert_eq!(r.counts.migrated, 3);
}

#[test]
fn wal_kinds_cover_the_run() {
    let f = fig4();
    let r = migrate(&f.world, &ctx(&f, MigrationType::Deletion)).unwrap();
    let kinds: BTreeSet<&str> = f
        .world
        .meta()
        .wal_scan(r.migration_id)
        .iter()
        .map(|w| w.op.kind())
        .collect();
    for k in [
        "copy_root",
        "migrate_node",
        "bag_put",
        "bag_take",
        "delete_node",
        "display_node",
        "relink",
        "commit",
    ] {
        assert!(kinds.contains(k), "missing {k}");
    }
}
