//! Property tests for the graph operations, spec validation, spec
//! round-trips and mapping composition, each against a brute-force oracle.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use dagmig_core::error::SpecError;
use dagmig_core::model::{
    deletion_order, sole_dependents, AppId, AppSchema, AttrRef, Dag, DagSpec, EdgeSpec,
    InstanceGraph, MigrationType, NodeId, NodeTypeSpec, OrderStep, TableSpec,
};
use dagmig_core::psm::{compose, coverage, AttrMap, Derivation, NodeMap, SchemaMapping};
use dagmig_core::specio::{load_dag_spec, save_dag};
use dagmig_core::store::MetaStore;
use proptest::prelude::*;

/// Instance graph where node i may depend on any node with a smaller index.
#[derive(Debug, Clone)]
struct Layered {
    parents: Vec<BTreeSet<usize>>,
}

fn id(i: usize) -> NodeId {
    NodeId::new("a", "n", i as i64)
}

impl InstanceGraph for Layered {
    fn dependents(&self, node: &NodeId) -> Vec<NodeId> {
        let k = node.key as usize;
        (0..self.parents.len())
            .filter(|c| self.parents[*c].contains(&k))
            .map(id)
            .collect()
    }
    fn dependencies(&self, node: &NodeId) -> Vec<NodeId> {
        self.parents[node.key as usize]
            .iter()
            .map(|p| id(*p))
            .collect()
    }
}

fn layered(max: usize) -> impl Strategy<Value = Layered> {
    (2..max).prop_flat_map(|n| {
        let per_node: Vec<_> = (0..n)
            .map(|i| proptest::collection::btree_set(0..i.max(1), 0..=i.min(3)))
            .collect();
        per_node.prop_map(move |mut ps| {
            ps[0].clear();
            Layered { parents: ps }
        })
    })
}

/// Nodes still attached, through parents, to some parentless node other
/// than `target` once `target` is gone.
fn attached_without(g: &Layered, target: usize) -> BTreeSet<usize> {
    let n = g.parents.len();
    let mut ok = BTreeSet::new();
    // Indices only point downwards, so one ascending pass settles all.
    for i in 0..n {
        if i == target {
            continue;
        }
        if g.parents[i].is_empty() || g.parents[i].iter().any(|p| ok.contains(p)) {
            ok.insert(i);
        }
    }
    ok
}

proptest! {
    #[test]
    fn deletion_order_puts_children_before_parents(g in layered(50)) {
        let n = g.parents.len();
        let root = id(0);
        let all: BTreeSet<NodeId> = (0..n).map(id).collect();
        let order = deletion_order(&g, &root, &all).unwrap();
        prop_assert_eq!(order.first(), Some(&OrderStep::CopyRoot(root.clone())));
        prop_assert_eq!(order.last(), Some(&OrderStep::DeleteRoot(root.clone())));
        let pos: BTreeMap<NodeId, usize> = order
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, OrderStep::Migrate(_)))
            .map(|(i, s)| (s.node().clone(), i))
            .collect();
        prop_assert_eq!(pos.len(), n - 1);
        for (c, ps) in g.parents.iter().enumerate() {
            for p in ps {
                if *p == 0 || c == 0 {
                    continue;
                }
                prop_assert!(pos[&id(c)] < pos[&id(*p)], "{} before its dependent {}", p, c);
            }
        }
    }

    #[test]
    fn sole_dependents_match_reachability(g in layered(60), t in 0usize..60) {
        let n = g.parents.len();
        let target = t % n;
        let got: BTreeSet<usize> = sole_dependents(&g, &id(target))
            .into_iter()
            .map(|x| x.key as usize)
            .collect();
        let attached = attached_without(&g, target);
        let want: BTreeSet<usize> = (0..n).filter(|i| *i != target && !attached.contains(i)).collect();
        prop_assert_eq!(&got, &want);
        // Nothing in the result keeps a live parent outside it.
        for d in &got {
            prop_assert!(g.parents[*d].iter().all(|p| *p == target || got.contains(p)));
        }
    }
}

fn type_dag(k: usize, edges: &[(usize, usize)]) -> (DagSpec, AppSchema) {
    let mut tables = vec![TableSpec {
        name: "roots".into(),
        key: "id".into(),
        attributes: vec!["id".into()],
        blob_size: None,
        created: None,
    }];
    let mut nodes = vec![NodeTypeSpec {
        name: "root".into(),
        tables: vec!["roots".into()],
        joins: vec![],
        depends_on: vec![],
        owned_by: vec![],
        shared_with: vec![],
        display_rule: Default::default(),
    }];
    for i in 0..k {
        let mut attrs = vec!["id".to_owned(), "owner".to_owned()];
        let mut deps = Vec::new();
        for (j, (c, p)) in edges.iter().enumerate() {
            if *c == i {
                let a = format!("p{j}");
                deps.push(EdgeSpec {
                    from: AttrRef::new(format!("t{i}"), &a),
                    to: format!("n{p}"),
                    to_attr: AttrRef::new(format!("t{p}"), "id"),
                });
                attrs.push(a);
            }
        }
        tables.push(TableSpec {
            name: format!("t{i}"),
            key: "id".into(),
            attributes: attrs,
            blob_size: None,
            created: None,
        });
        nodes.push(NodeTypeSpec {
            name: format!("n{i}"),
            tables: vec![format!("t{i}")],
            joins: vec![],
            depends_on: deps,
            owned_by: vec![EdgeSpec {
                from: AttrRef::new(format!("t{i}"), "owner"),
                to: "root".into(),
                to_attr: AttrRef::new("roots", "id"),
            }],
            shared_with: vec![],
            display_rule: Default::default(),
        });
    }
    let app = AppId::from("p");
    (
        DagSpec {
            app: app.clone(),
            root: "root".into(),
            nodes,
        },
        AppSchema { app, tables },
    )
}

/// Floyd-Warshall style closure over the type edges.
fn has_cycle(k: usize, edges: &[(usize, usize)]) -> bool {
    let mut reach = vec![vec![false; k]; k];
    for (c, p) in edges {
        reach[*c][*p] = true;
    }
    for m in 0..k {
        for a in 0..k {
            for b in 0..k {
                if reach[a][m] && reach[m][b] {
                    reach[a][b] = true;
                }
            }
        }
    }
    (0..k).any(|i| reach[i][i])
}

proptest! {
    #[test]
    fn type_cycles_are_rejected(
        k in 1usize..6,
        raw in proptest::collection::vec((0usize..6, 0usize..6), 0..8),
    ) {
        let edges: Vec<(usize, usize)> = raw.into_iter().map(|(a, b)| (a % k, b % k)).collect();
        let (spec, schema) = type_dag(k, &edges);
        let res = Dag::new(spec, schema);
        if has_cycle(k, &edges) {
            prop_assert!(matches!(res, Err(SpecError::Cycle { .. })), "{:?}", res.err());
        } else {
            prop_assert!(res.is_ok(), "{:?}", res.err());
        }
    }

    #[test]
    fn acyclic_specs_round_trip(
        k in 1usize..6,
        raw in proptest::collection::vec((0usize..6, 0usize..6), 0..8),
    ) {
        // Orient every edge downwards so the spec is acyclic.
        let edges: Vec<(usize, usize)> = raw
            .into_iter()
            .map(|(a, b)| (a % k, b % k))
            .filter(|(a, b)| a > b)
            .collect();
        let (spec, schema) = type_dag(k, &edges);
        let dag = Dag::new(spec.clone(), schema.clone()).unwrap();
        let back = load_dag_spec(&save_dag(&dag), &schema).unwrap();
        prop_assert_eq!(back.spec(), &spec);
    }
}

const WIDTH: usize = 6;

fn flat_dag(app: &str, table: &str) -> Dag {
    let mut attrs = vec!["id".to_owned(), "owner".to_owned()];
    attrs.extend((0..WIDTH).map(|i| format!("x{i}")));
    let (mut spec, mut schema) = type_dag(1, &[]);
    spec.app = AppId::from(app);
    schema.app = AppId::from(app);
    schema.tables[1] = TableSpec {
        name: table.into(),
        key: "id".into(),
        attributes: attrs,
        blob_size: None,
        created: None,
    };
    spec.nodes[1].tables = vec![table.into()];
    spec.nodes[1].owned_by[0].from = AttrRef::new(table, "owner");
    Dag::new(spec, schema).unwrap()
}

/// Copies `x{i}` to `x{pairs[i]}` for every mapped i, plus the key and owner.
fn copies(from: (&str, &str), to: (&str, &str), pairs: &BTreeMap<usize, usize>) -> SchemaMapping {
    let a = |t: &str, n: &str| AttrRef::new(t, n);
    let mut attributes = vec![
        AttrMap::copy(a(from.1, "id"), a(to.1, "id")),
        AttrMap::copy(a(from.1, "owner"), a(to.1, "owner")),
    ];
    for (i, j) in pairs {
        attributes.push(AttrMap::copy(
            a(from.1, &format!("x{i}")),
            a(to.1, &format!("x{j}")),
        ));
    }
    SchemaMapping {
        from_app: AppId::from(from.0),
        to_app: AppId::from(to.0),
        node_maps: vec![
            NodeMap {
                from_node: "root".into(),
                to_node: "root".into(),
                attributes: vec![AttrMap::copy(a("roots", "id"), a("roots", "id"))],
            },
            NodeMap {
                from_node: "n0".into(),
                to_node: "n0".into(),
                attributes,
            },
        ],
        derivation: Derivation::Direct,
    }
}

fn partial_injection() -> impl Strategy<Value = BTreeMap<usize, usize>> {
    (
        proptest::collection::vec(any::<bool>(), WIDTH),
        Just((0..WIDTH).collect::<Vec<_>>()).prop_shuffle(),
    )
        .prop_map(|(keep, perm)| {
            (0..WIDTH)
                .filter(|i| keep[*i])
                .map(|i| (i, perm[i]))
                .collect()
        })
}

proptest! {
    #[test]
    fn composition_never_gains_attributes(ab in partial_injection(), bc in partial_injection()) {
        let (da, db) = (flat_dag("a", "ta"), flat_dag("b", "tb"));
        let m_ab = copies(("a", "ta"), ("b", "tb"), &ab);
        let m_bc = copies(("b", "tb"), ("c", "tc"), &bc);
        let m_ac = compose(&m_ab, &m_bc).unwrap();
        prop_assert_eq!(m_ac.path(), vec![AppId::from("a"), AppId::from("b"), AppId::from("c")]);

        let mapped = |m: &SchemaMapping, dag: &Dag| -> BTreeSet<AttrRef> {
            let all: BTreeSet<AttrRef> = dag.node_attributes("n0").into_iter().collect();
            let lost = coverage(m, dag).unwrap_unmapped("n0");
            all.difference(&lost).cloned().collect()
        };
        let via = mapped(&m_ac, &da);
        let first = mapped(&m_ab, &da);
        prop_assert!(via.is_subset(&first));
        prop_assert!(via.len() <= mapped(&m_bc, &db).len());
        // Brute force: x_i survives iff its image is mapped again.
        let want: BTreeSet<AttrRef> = ab
            .iter()
            .filter(|(_, j)| bc.contains_key(j))
            .map(|(i, _)| AttrRef::new("ta", format!("x{i}")))
            .chain(["id", "owner"].map(|n| AttrRef::new("ta", n)))
            .collect();
        prop_assert_eq!(via, want);
        let cov = |m: &SchemaMapping, d: &Dag| coverage(m, d).node("n0").unwrap().fraction();
        prop_assert!(cov(&m_ac, &da) <= cov(&m_ab, &da).min(cov(&m_bc, &db)) + 1e-12);
    }
}

trait Unmapped {
    fn unwrap_unmapped(&self, node: &str) -> BTreeSet<AttrRef>;
}

impl Unmapped for dagmig_core::psm::CoverageReport {
    fn unwrap_unmapped(&self, node: &str) -> BTreeSet<AttrRef> {
        self.node(node).unwrap().unmapped.iter().cloned().collect()
    }
}

#[test]
fn one_lease_among_concurrent_acquirers() {
    for _ in 0..20 {
        let meta = Arc::new(MetaStore::new());
        let user = NodeId::new("a", "root", 1);
        let wins: usize = std::thread::scope(|s| {
            let hs: Vec<_> = (0..16)
                .map(|_| {
                    let (meta, user) = (meta.clone(), user.clone());
                    s.spawn(move || {
                        meta.acquire_lease(
                            &user,
                            MigrationType::Deletion,
                            &AppId::from("a"),
                            &AppId::from("b"),
                        )
                        .is_ok() as usize
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).sum()
        });
        assert_eq!(wins, 1);
    }
}
