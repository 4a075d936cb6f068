//! Application schemas, DAG specifications, node identities and the
//! instance-graph operations every other module consumes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ModelError, SpecError};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AppId(pub String);

impl AppId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AppId {
    fn from(s: &str) -> Self {
        AppId(s.to_owned())
    }
}

/// Marker carried by [`Value::Placeholder`]. Serialises as
/// `{"$placeholder": true}` so it never collides with a legal scalar.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct PlaceholderMark {
    #[serde(rename = "$placeholder")]
    pub marker: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Int(i64),
    Text(String),
    Placeholder(PlaceholderMark),
}

impl Value {
    pub fn placeholder() -> Self {
        Value::Placeholder(PlaceholderMark { marker: true })
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn is_placeholder(&self) -> bool {
        matches!(self, Value::Placeholder(_))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    /// Approximate encoded size, used by the transfer-cost model.
    pub fn byte_size(&self) -> u64 {
        match self {
            Value::Null | Value::Placeholder(_) => 1,
            Value::Int(_) => 8,
            Value::Text(s) => s.len() as u64,
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

/// Single table row, attribute name to value.
pub type Row = BTreeMap<String, Value>;

/// A qualified attribute, written `table.attr` in documents.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttrRef {
    pub table: String,
    pub attr: String,
}

impl AttrRef {
    pub fn new(table: impl Into<String>, attr: impl Into<String>) -> Self {
        AttrRef {
            table: table.into(),
            attr: attr.into(),
        }
    }
}

impl fmt::Display for AttrRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.attr)
    }
}

impl FromStr for AttrRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('.') {
            Some((t, a)) if !t.is_empty() && !a.is_empty() && !a.contains('.') => {
                Ok(AttrRef::new(t.trim(), a.trim()))
            }
            _ => Err(format!("expected `table.attribute`, got {s:?}")),
        }
    }
}

impl Serialize for AttrRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AttrRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Identity of a node instance: application, node type and the key of
/// its anchor row. Extension rows share the anchor key, so the tuple
/// determines every member row.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub app: AppId,
    pub node_type: String,
    pub key: i64,
}

impl NodeId {
    pub fn new(app: impl Into<String>, node_type: impl Into<String>, key: i64) -> Self {
        NodeId {
            app: AppId(app.into()),
            node_type: node_type.into(),
            key,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.app, self.node_type, self.key)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flags {
    /// Source side: copied by an independent migration.
    pub migrated: bool,
    /// Destination side: arrived but not yet validated.
    pub migration_flag: bool,
    pub displayable: bool,
}

impl Flags {
    pub const NATIVE: Flags = Flags {
        migrated: false,
        migration_flag: false,
        displayable: true,
    };

    pub const ARRIVED: Flags = Flags {
        migrated: false,
        migration_flag: true,
        displayable: false,
    };

    /// What the owning application is allowed to show.
    pub fn app_visible(&self) -> bool {
        self.displayable && !self.migration_flag
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MigrationType {
    Deletion,
    Independent,
}

impl fmt::Display for MigrationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MigrationType::Deletion => "deletion",
            MigrationType::Independent => "independent",
        })
    }
}

impl FromStr for MigrationType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deletion" => Ok(MigrationType::Deletion),
            "independent" => Ok(MigrationType::Independent),
            other => Err(format!("unknown migration type {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefKind {
    Dependency,
    Ownership,
    Sharing,
}

// ---------------------------------------------------------------------------
// Schemas

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub key: String,
    pub attributes: Vec<String>,
    /// Attribute holding the size of an out-of-band media blob.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob_size: Option<String>,
    /// Attribute holding the creation timestamp, used for migration cutoffs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<String>,
}

impl TableSpec {
    pub fn has_attr(&self, attr: &str) -> bool {
        self.attributes.iter().any(|a| a == attr)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppSchema {
    pub app: AppId,
    pub tables: Vec<TableSpec>,
}

impl AppSchema {
    pub fn table(&self, name: &str) -> Option<&TableSpec> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn has_attr(&self, attr: &AttrRef) -> bool {
        self.table(&attr.table)
            .is_some_and(|t| t.has_attr(&attr.attr))
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let mut names = HashSet::new();
        for (i, t) in self.tables.iter().enumerate() {
            let path = format!("/tables/{i}");
            if !names.insert(t.name.as_str()) {
                return Err(SpecError::invalid(
                    path,
                    format!("duplicate table {:?}", t.name),
                ));
            }
            let mut attrs = HashSet::new();
            for a in &t.attributes {
                if !attrs.insert(a.as_str()) {
                    return Err(SpecError::invalid(
                        path.clone(),
                        format!("duplicate attribute {a:?} in {}", t.name),
                    ));
                }
            }
            for extra in [Some(&t.key), t.blob_size.as_ref(), t.created.as_ref()]
                .into_iter()
                .flatten()
            {
                if !t.has_attr(extra) {
                    return Err(SpecError::UnknownAttribute {
                        path: path.clone(),
                        attr: format!("{}.{}", t.name, extra),
                    });
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// DAG specifications

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: AttrRef,
    pub to: String,
    pub to_attr: AttrRef,
}

/// Equality binding an extension table's key to the anchor key,
/// written `ext.key = anchor.key`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Join {
    pub left: AttrRef,
    pub right: AttrRef,
}

impl fmt::Display for Join {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.left, self.right)
    }
}

impl Serialize for Join {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Join {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let (l, r) = s
            .split_once('=')
            .ok_or_else(|| serde::de::Error::custom(format!("join {s:?} lacks `=`")))?;
        Ok(Join {
            left: l.trim().parse().map_err(serde::de::Error::custom)?,
            right: r.trim().parse().map_err(serde::de::Error::custom)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayRule {
    pub requires_parents_displayed: bool,
    #[serde(default)]
    pub exceptions: Vec<String>,
    /// Root requirements are disjunctive: when both flags are set, either
    /// a displayed owner root or a displayed sharer root satisfies them.
    pub requires_owner_root: bool,
    pub requires_sharer_root: bool,
}

impl Default for DisplayRule {
    fn default() -> Self {
        DisplayRule {
            requires_parents_displayed: true,
            exceptions: Vec::new(),
            requires_owner_root: true,
            requires_sharer_root: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTypeSpec {
    pub name: String,
    pub tables: Vec<String>,
    #[serde(default)]
    pub joins: Vec<Join>,
    #[serde(default)]
    pub depends_on: Vec<EdgeSpec>,
    #[serde(default)]
    pub owned_by: Vec<EdgeSpec>,
    #[serde(default)]
    pub shared_with: Vec<EdgeSpec>,
    #[serde(default)]
    pub display_rule: DisplayRule,
}

impl NodeTypeSpec {
    pub fn anchor_table(&self) -> &str {
        &self.tables[0]
    }

    pub fn reference_edges(&self) -> impl Iterator<Item = (RefKind, &EdgeSpec)> {
        self.depends_on
            .iter()
            .map(|e| (RefKind::Dependency, e))
            .chain(self.owned_by.iter().map(|e| (RefKind::Ownership, e)))
            .chain(self.shared_with.iter().map(|e| (RefKind::Sharing, e)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagSpec {
    pub app: AppId,
    pub root: String,
    pub nodes: Vec<NodeTypeSpec>,
}

/// A [`DagSpec`] checked against its [`AppSchema`], with lookup tables.
#[derive(Clone, Debug)]
pub struct Dag {
    spec: DagSpec,
    schema: AppSchema,
    by_name: HashMap<String, usize>,
    by_table: HashMap<String, usize>,
    /// parent type -> (child type, edge)
    incoming: HashMap<String, Vec<(String, EdgeSpec)>>,
    /// Node types ordered parents first.
    topo: Vec<String>,
}

impl PartialEq for Dag {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.schema == other.schema
    }
}

impl Dag {
    pub fn new(spec: DagSpec, schema: AppSchema) -> Result<Dag, SpecError> {
        schema.validate()?;
        if spec.app != schema.app {
            return Err(SpecError::invalid(
                "/app",
                format!(
                    "DAG for {} checked against schema of {}",
                    spec.app, schema.app
                ),
            ));
        }
        if spec.nodes.is_empty() {
            return Err(SpecError::invalid("/nodes", "no node types declared"));
        }
        let mut by_name = HashMap::new();
        let mut by_table = HashMap::new();
        for (i, n) in spec.nodes.iter().enumerate() {
            let path = format!("/nodes/{i}");
            if by_name.insert(n.name.clone(), i).is_some() {
                return Err(SpecError::invalid(
                    path,
                    format!("duplicate node type {:?}", n.name),
                ));
            }
            if n.tables.is_empty() {
                return Err(SpecError::invalid(
                    path,
                    format!("node type {:?} has no tables", n.name),
                ));
            }
            for (j, t) in n.tables.iter().enumerate() {
                if schema.table(t).is_none() {
                    return Err(SpecError::UnknownTable {
                        path: format!("{path}/tables/{j}"),
                        table: t.clone(),
                    });
                }
                if let Some(prev) = by_table.insert(t.clone(), i) {
                    return Err(SpecError::invalid(
                        format!("{path}/tables/{j}"),
                        format!("table {t:?} already belongs to {:?}", spec.nodes[prev].name),
                    ));
                }
            }
        }
        if !by_name.contains_key(&spec.root) {
            return Err(SpecError::RootMissing(spec.root.clone()));
        }

        for (i, n) in spec.nodes.iter().enumerate() {
            let path = format!("/nodes/{i}");
            Self::check_joins(&schema, n, &path)?;
            let members: HashSet<&str> = n.tables.iter().map(String::as_str).collect();
            let groups: [(&str, &Vec<EdgeSpec>); 3] = [
                ("depends_on", &n.depends_on),
                ("owned_by", &n.owned_by),
                ("shared_with", &n.shared_with),
            ];
            for (label, edges) in groups {
                for (j, e) in edges.iter().enumerate() {
                    let epath = format!("{path}/{label}/{j}");
                    if !members.contains(e.from.table.as_str()) {
                        return Err(SpecError::UnknownTable {
                            path: format!("{epath}/from"),
                            table: e.from.table.clone(),
                        });
                    }
                    if !schema.has_attr(&e.from) {
                        return Err(SpecError::UnknownAttribute {
                            path: format!("{epath}/from"),
                            attr: e.from.to_string(),
                        });
                    }
                    let Some(&target) = by_name.get(&e.to) else {
                        return Err(SpecError::UnknownNode {
                            path: format!("{epath}/to"),
                            node: e.to.clone(),
                        });
                    };
                    if label != "depends_on" && e.to != spec.root {
                        return Err(SpecError::invalid(
                            format!("{epath}/to"),
                            format!("{label} edges must target the root type {:?}", spec.root),
                        ));
                    }
                    let tnode = &spec.nodes[target];
                    let anchor = schema.table(tnode.anchor_table()).expect("checked above");
                    if schema.table(&e.to_attr.table).is_none() {
                        return Err(SpecError::UnknownTable {
                            path: format!("{epath}/to_attr"),
                            table: e.to_attr.table.clone(),
                        });
                    }
                    if !schema.has_attr(&e.to_attr) {
                        return Err(SpecError::UnknownAttribute {
                            path: format!("{epath}/to_attr"),
                            attr: e.to_attr.to_string(),
                        });
                    }
                    if e.to_attr.table != anchor.name || e.to_attr.attr != anchor.key {
                        return Err(SpecError::invalid(
                            format!("{epath}/to_attr"),
                            format!(
                                "edges must reference the anchor key {}.{}",
                                anchor.name, anchor.key
                            ),
                        ));
                    }
                }
            }
            if n.name != spec.root && n.owned_by.is_empty() {
                return Err(SpecError::invalid(
                    format!("{path}/owned_by"),
                    format!("node type {:?} has no ownership edge", n.name),
                ));
            }
            for (j, ex) in n.display_rule.exceptions.iter().enumerate() {
                if !n.depends_on.iter().any(|e| &e.to == ex) {
                    return Err(SpecError::invalid(
                        format!("{path}/display_rule/exceptions/{j}"),
                        format!("{ex:?} is not a dependency parent of {:?}", n.name),
                    ));
                }
            }
        }

        let topo = type_topo(&spec)?;
        let mut incoming: HashMap<String, Vec<(String, EdgeSpec)>> = HashMap::new();
        for n in &spec.nodes {
            for e in &n.depends_on {
                incoming
                    .entry(e.to.clone())
                    .or_default()
                    .push((n.name.clone(), e.clone()));
            }
        }
        Ok(Dag {
            spec,
            schema,
            by_name,
            by_table,
            incoming,
            topo,
        })
    }

    fn check_joins(schema: &AppSchema, n: &NodeTypeSpec, path: &str) -> Result<(), SpecError> {
        let anchor = schema.table(n.anchor_table()).expect("checked");
        for (j, join) in n.joins.iter().enumerate() {
            let jpath = format!("{path}/joins/{j}");
            for side in [&join.left, &join.right] {
                if !n.tables.contains(&side.table) {
                    return Err(SpecError::UnknownTable {
                        path: jpath.clone(),
                        table: side.table.clone(),
                    });
                }
                if !schema.has_attr(side) {
                    return Err(SpecError::UnknownAttribute {
                        path: jpath.clone(),
                        attr: side.to_string(),
                    });
                }
            }
        }
        for ext in &n.tables[1..] {
            let t = schema.table(ext).expect("checked");
            let bound = n.joins.iter().any(|j| {
                let pair = |a: &AttrRef, b: &AttrRef| {
                    a.table == t.name
                        && a.attr == t.key
                        && b.table == anchor.name
                        && b.attr == anchor.key
                };
                pair(&j.left, &j.right) || pair(&j.right, &j.left)
            });
            if !bound {
                return Err(SpecError::invalid(
                    format!("{path}/joins"),
                    format!(
                        "member table {:?} must join its key {:?} to {}.{}",
                        t.name, t.key, anchor.name, anchor.key
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &DagSpec {
        &self.spec
    }

    pub fn schema(&self) -> &AppSchema {
        &self.schema
    }

    pub fn app(&self) -> &AppId {
        &self.spec.app
    }

    pub fn root_type(&self) -> &str {
        &self.spec.root
    }

    pub fn is_root(&self, node_type: &str) -> bool {
        self.spec.root == node_type
    }

    pub fn node_types(&self) -> &[NodeTypeSpec] {
        &self.spec.nodes
    }

    pub fn node_type(&self, name: &str) -> Option<&NodeTypeSpec> {
        self.by_name.get(name).map(|&i| &self.spec.nodes[i])
    }

    pub fn type_of_table(&self, table: &str) -> Option<&NodeTypeSpec> {
        self.by_table.get(table).map(|&i| &self.spec.nodes[i])
    }

    pub fn anchor(&self, node_type: &str) -> Option<&TableSpec> {
        self.node_type(node_type)
            .and_then(|n| self.schema.table(n.anchor_table()))
    }

    /// Dependency edges pointing at `parent_type`, with the child type.
    pub fn incoming_dependencies(&self, parent_type: &str) -> &[(String, EdgeSpec)] {
        self.incoming
            .get(parent_type)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Node types, parents before children.
    pub fn topo_types(&self) -> &[String] {
        &self.topo
    }

    /// Every attribute of every member table of `node_type`.
    pub fn node_attributes(&self, node_type: &str) -> Vec<AttrRef> {
        let Some(n) = self.node_type(node_type) else {
            return Vec::new();
        };
        n.tables
            .iter()
            .filter_map(|t| self.schema.table(t))
            .flat_map(|t| t.attributes.iter().map(move |a| AttrRef::new(&t.name, a)))
            .collect()
    }

    /// Attributes whose values are determined by the node identity
    /// (anchor key and extension-table keys).
    pub fn identity_attributes(&self, node_type: &str) -> Vec<AttrRef> {
        let Some(n) = self.node_type(node_type) else {
            return Vec::new();
        };
        n.tables
            .iter()
            .filter_map(|t| self.schema.table(t))
            .map(|t| AttrRef::new(&t.name, &t.key))
            .collect()
    }

    /// Attributes carrying references (edge sources), useful for indexing.
    pub fn reference_attributes(&self) -> Vec<AttrRef> {
        let mut out: Vec<AttrRef> = self
            .spec
            .nodes
            .iter()
            .flat_map(|n| n.reference_edges().map(|(_, e)| e.from.clone()))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Node identity referenced by `value` through `edge`.
    pub fn referenced(&self, edge: &EdgeSpec, value: &Value) -> Option<NodeId> {
        value
            .as_int()
            .map(|k| NodeId::new(self.spec.app.as_str(), &edge.to, k))
    }
}

fn type_topo(spec: &DagSpec) -> Result<Vec<String>, SpecError> {
    // Kahn over type-level dependency edges, alphabetical tie-break.
    let mut indeg: BTreeMap<&str, usize> =
        spec.nodes.iter().map(|n| (n.name.as_str(), 0)).collect();
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for n in &spec.nodes {
        let parents: BTreeSet<&str> = n.depends_on.iter().map(|e| e.to.as_str()).collect();
        for p in parents {
            *indeg.get_mut(n.name.as_str()).expect("declared") += 1;
            children.entry(p).or_default().push(n.name.as_str());
        }
    }
    let mut ready: BTreeSet<&str> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut out = Vec::new();
    while let Some(n) = ready.pop_first() {
        out.push(n.to_owned());
        for c in children.get(n).into_iter().flatten() {
            let d = indeg.get_mut(c).expect("declared");
            *d -= 1;
            if *d == 0 {
                ready.insert(c);
            }
        }
    }
    if out.len() == spec.nodes.len() {
        return Ok(out);
    }
    // Recover one cycle for the diagnostic.
    let stuck: BTreeSet<&str> = indeg
        .iter()
        .filter(|(_, d)| **d > 0)
        .map(|(n, _)| *n)
        .collect();
    let parent_of = |name: &str| -> Option<&str> {
        spec.nodes.iter().find(|n| n.name == name).and_then(|n| {
            n.depends_on
                .iter()
                .map(|e| e.to.as_str())
                .find(|p| stuck.contains(p))
        })
    };
    let start = *stuck.iter().next().expect("nonempty when stuck");
    let mut seen = Vec::new();
    let mut cur = start;
    while !seen.contains(&cur) {
        seen.push(cur);
        cur = parent_of(cur).unwrap_or(cur);
    }
    let pos = seen.iter().position(|n| *n == cur).expect("revisited");
    let mut cycle: Vec<String> = seen[pos..].iter().map(|s| s.to_string()).collect();
    cycle.push(cur.to_owned());
    Err(SpecError::Cycle { cycle })
}

// ---------------------------------------------------------------------------
// Data nodes and grants

/// A materialised node: the flattened attributes of all member rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataNode {
    pub id: NodeId,
    pub attrs: BTreeMap<AttrRef, Value>,
    pub flags: Flags,
}

impl DataNode {
    pub fn get(&self, attr: &AttrRef) -> &Value {
        static NULL: Value = Value::Null;
        self.attrs.get(attr).unwrap_or(&NULL)
    }

    /// Identities this node references through edges of `kind`, raw keys only.
    pub fn references(&self, dag: &Dag, kind: RefKind) -> Vec<NodeId> {
        let Some(spec) = dag.node_type(&self.id.node_type) else {
            return Vec::new();
        };
        spec.reference_edges()
            .filter(|(k, _)| *k == kind)
            .filter_map(|(_, e)| dag.referenced(e, self.get(&e.from)))
            .collect()
    }

    pub fn byte_size(&self) -> u64 {
        self.attrs.values().map(Value::byte_size).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttrPredicate {
    pub attr: AttrRef,
    pub equals: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeSelector {
    Node(NodeId),
    /// All nodes of a type (any type when `None`), optionally filtered.
    Type {
        node_type: Option<String>,
        predicate: Option<AttrPredicate>,
    },
}

impl NodeSelector {
    pub fn matches(&self, node: &DataNode) -> bool {
        match self {
            NodeSelector::Node(id) => *id == node.id,
            NodeSelector::Type {
                node_type,
                predicate,
            } => {
                node_type.as_ref().is_none_or(|t| *t == node.id.node_type)
                    && predicate
                        .as_ref()
                        .is_none_or(|p| *node.get(&p.attr) == p.equals)
            }
        }
    }
}

/// Permission from a data owner letting another user migrate the
/// selected nodes. Users are identified by their canonical root.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SharingGrant {
    pub grantor: NodeId,
    pub grantee: NodeId,
    pub selector: NodeSelector,
    pub allowed: BTreeSet<MigrationType>,
}

// ---------------------------------------------------------------------------
// Instance-graph operations

/// Read access to the live dependency graph of one application.
pub trait InstanceGraph {
    /// Live nodes with a dependency edge to `node`.
    fn dependents(&self, node: &NodeId) -> Vec<NodeId>;
    /// Live nodes that `node` depends on.
    fn dependencies(&self, node: &NodeId) -> Vec<NodeId>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderStep {
    CopyRoot(NodeId),
    Migrate(NodeId),
    DeleteRoot(NodeId),
}

impl OrderStep {
    pub fn node(&self) -> &NodeId {
        match self {
            OrderStep::CopyRoot(n) | OrderStep::Migrate(n) | OrderStep::DeleteRoot(n) => n,
        }
    }
}

/// Source-side order for a deletion migration: the root is copied first,
/// every node follows all of its (transitive) dependents, and the root is
/// deleted last. Subtrees are emitted one at a time, tops and siblings
/// in ascending node order.
pub fn deletion_order<G: InstanceGraph>(
    graph: &G,
    root: &NodeId,
    user_nodes: &BTreeSet<NodeId>,
) -> Result<Vec<OrderStep>, ModelError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut marks: HashMap<NodeId, Mark> = HashMap::new();
    let mut out = vec![OrderStep::CopyRoot(root.clone())];

    // Start from the tops so each subtree goes out just before its top
    // and its members are not kept waiting on unrelated work.
    let is_top = |n: &NodeId| {
        !graph
            .dependencies(n)
            .iter()
            .any(|p| p != root && user_nodes.contains(p))
    };
    let (tops, rest): (Vec<&NodeId>, Vec<&NodeId>) = user_nodes.iter().partition(|n| is_top(n));
    for start in tops.into_iter().chain(rest) {
        if start == root || marks.contains_key(start) {
            continue;
        }
        // Iterative DFS: (node, sorted dependents, next index)
        let mut stack: Vec<(NodeId, Vec<NodeId>, usize)> = Vec::new();
        marks.insert(start.clone(), Mark::Open);
        let mut kids = graph.dependents(start);
        kids.sort();
        stack.push((start.clone(), kids, 0));
        while let Some((node, kids, idx)) = stack.last_mut() {
            if *idx < kids.len() {
                let child = kids[*idx].clone();
                *idx += 1;
                match marks.get(&child) {
                    Some(Mark::Done) => {}
                    Some(Mark::Open) => {
                        let pos = stack.iter().position(|(n, _, _)| *n == child).unwrap_or(0);
                        let mut cycle: Vec<NodeId> =
                            stack[pos..].iter().map(|(n, _, _)| n.clone()).collect();
                        cycle.push(child);
                        return Err(ModelError::Cycle(cycle));
                    }
                    None => {
                        if child == *root {
                            continue;
                        }
                        marks.insert(child.clone(), Mark::Open);
                        let mut grand = graph.dependents(&child);
                        grand.sort();
                        stack.push((child, grand, 0));
                    }
                }
            } else {
                let node = node.clone();
                stack.pop();
                marks.insert(node.clone(), Mark::Done);
                if user_nodes.contains(&node) {
                    out.push(OrderStep::Migrate(node));
                }
            }
        }
    }
    out.push(OrderStep::DeleteRoot(root.clone()));
    Ok(out)
}

/// Nodes that become dangling once `target` disappears: those whose every
/// live dependency parent is `target` or itself in the result.
pub fn sole_dependents<G: InstanceGraph>(graph: &G, target: &NodeId) -> BTreeSet<NodeId> {
    let mut descendants: BTreeSet<NodeId> = BTreeSet::new();
    let mut queue = vec![target.clone()];
    while let Some(n) = queue.pop() {
        for c in graph.dependents(&n) {
            if c != *target && descendants.insert(c.clone()) {
                queue.push(c);
            }
        }
    }
    let parents: BTreeMap<&NodeId, Vec<NodeId>> = descendants
        .iter()
        .map(|d| (d, graph.dependencies(d)))
        .collect();
    let mut closure: BTreeSet<NodeId> = BTreeSet::new();
    loop {
        let mut changed = false;
        for (d, ps) in &parents {
            if closure.contains(*d) || ps.is_empty() {
                continue;
            }
            if ps.iter().all(|p| p == target || closure.contains(p)) {
                closure.insert((*d).clone());
                changed = true;
            }
        }
        if !changed {
            return closure;
        }
    }
}

/// Follows the ownership edges of `node` to its owning root. Roots own
/// themselves.
pub fn resolve_owner(
    dag: &Dag,
    node: &DataNode,
    exists: impl Fn(&NodeId) -> bool,
) -> Result<NodeId, ModelError> {
    if dag.is_root(&node.id.node_type) {
        return Ok(node.id.clone());
    }
    let spec = dag.node_type(&node.id.node_type);
    let mut named = None;
    for e in spec.into_iter().flat_map(|s| s.owned_by.iter()) {
        if let Some(owner) = dag.referenced(e, node.get(&e.from)) {
            if exists(&owner) {
                return Ok(owner);
            }
            named.get_or_insert(owner);
        }
    }
    Err(ModelError::OwnerUnresolvable {
        node: node.id.clone(),
        named,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Small in-memory instance graph: child -> parents.
    #[derive(Default, Clone)]
    pub(crate) struct MemGraph {
        pub parents: BTreeMap<NodeId, Vec<NodeId>>,
    }

    impl MemGraph {
        pub fn add(&mut self, n: &NodeId, parents: &[&NodeId]) {
            self.parents
                .entry(n.clone())
                .or_default()
                .extend(parents.iter().map(|p| (*p).clone()));
            for p in parents {
                self.parents.entry((*p).clone()).or_default();
            }
        }
    }

    impl InstanceGraph for MemGraph {
        fn dependents(&self, node: &NodeId) -> Vec<NodeId> {
            self.parents
                .iter()
                .filter(|(_, ps)| ps.contains(node))
                .map(|(c, _)| c.clone())
                .collect()
        }
        fn dependencies(&self, node: &NodeId) -> Vec<NodeId> {
            self.parents.get(node).cloned().unwrap_or_default()
        }
    }

    fn n(t: &str, k: i64) -> NodeId {
        NodeId::new("src", t, k)
    }

    /// The running example: Post1 <- Comment1 <- Comment2 <- Comment3.
    fn fig4() -> (MemGraph, NodeId, [NodeId; 4]) {
        let root2 = n("account", 2);
        let post1 = n("post", 2);
        let c1 = n("comment", 5);
        let c2 = n("reply", 6);
        let c3 = n("thread_reply", 7);
        let mut g = MemGraph::default();
        g.add(&post1, &[]);
        g.add(&c1, &[&post1]);
        g.add(&c2, &[&c1]);
        g.add(&c3, &[&c2]);
        g.add(&root2, &[]);
        (g, root2, [post1, c1, c2, c3])
    }

    #[test]
    fn deletion_order_follows_dependents_first() {
        let (g, root2, [post1, c1, _c2, c3]) = fig4();
        let user: BTreeSet<NodeId> = [post1.clone(), c1.clone(), c3.clone(), root2.clone()].into();
        let order = deletion_order(&g, &root2, &user).unwrap();
        assert_eq!(
            order,
            vec![
                OrderStep::CopyRoot(root2.clone()),
                OrderStep::Migrate(c3),
                OrderStep::Migrate(c1),
                OrderStep::Migrate(post1),
                OrderStep::DeleteRoot(root2),
            ]
        );
    }

    #[test]
    fn deletion_order_root_only() {
        let mut g = MemGraph::default();
        let root = n("account", 1);
        g.add(&root, &[]);
        let order = deletion_order(&g, &root, &[root.clone()].into()).unwrap();
        assert_eq!(
            order,
            vec![
                OrderStep::CopyRoot(root.clone()),
                OrderStep::DeleteRoot(root)
            ]
        );
    }

    #[test]
    fn deletion_order_reports_instance_cycle() {
        let mut g = MemGraph::default();
        let a = n("a", 1);
        let b = n("b", 2);
        g.add(&a, &[&b]);
        g.add(&b, &[&a]);
        let root = n("account", 9);
        let err = deletion_order(&g, &root, &[a.clone()].into()).unwrap_err();
        match err {
            ModelError::Cycle(c) => {
                assert!(c.contains(&a) && c.contains(&b));
                assert_eq!(c.first(), c.last());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sole_dependents_of_comment1() {
        let (g, _, [_post1, c1, c2, c3]) = fig4();
        // Comment3 is already gone in the running example.
        let mut g2 = g.clone();
        g2.parents.remove(&c3);
        assert_eq!(sole_dependents(&g2, &c1), [c2.clone()].into());
        // With Comment3 still present the closure is transitive.
        assert_eq!(sole_dependents(&g, &c1), [c2, c3].into());
    }

    #[test]
    fn sole_dependents_of_leaf_is_empty() {
        let (g, _, [.., c3]) = fig4();
        assert!(sole_dependents(&g, &c3).is_empty());
    }

    #[test]
    fn sole_dependents_skips_nodes_with_other_parent() {
        let mut g = MemGraph::default();
        let p1 = n("post", 1);
        let p2 = n("post", 2);
        let shared = n("like", 3);
        let only = n("like", 4);
        g.add(&shared, &[&p1, &p2]);
        g.add(&only, &[&p1]);
        assert_eq!(sole_dependents(&g, &p1), [only].into());
    }
}
