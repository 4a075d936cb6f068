//! Pairwise schema mappings: attribute-level transforms between two
//! applications, their transitive composition, loss (coverage) reports,
//! and derivation of routes for application pairs without a direct mapping.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::PsmError;
use crate::model::{AppId, AttrRef, Dag, DataNode, Value};

/// The closed set of attribute transforms.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Transform {
    Copy,
    Constant(Value),
    NewId,
    Concat(String),
    Truncate(usize),
    Placeholder,
}

impl Transform {
    /// Number of source attributes the transform consumes when it is the
    /// first stage of a pipeline; `None` means "one or more".
    fn arity(&self) -> Option<usize> {
        match self {
            Transform::Constant(_) | Transform::Placeholder => Some(0),
            Transform::Concat(_) => None,
            Transform::Copy | Transform::Truncate(_) | Transform::NewId => Some(1),
        }
    }

    fn unary(&self) -> bool {
        matches!(
            self,
            Transform::Copy | Transform::Truncate(_) | Transform::NewId
        )
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Copy => f.write_str("copy"),
            Transform::NewId => f.write_str("newID"),
            Transform::Placeholder => f.write_str("placeholder"),
            Transform::Truncate(n) => write!(f, "truncate({n})"),
            Transform::Concat(sep) => {
                write!(f, "concat({})", serde_json::to_string(sep).expect("string"))
            }
            Transform::Constant(v) => {
                write!(f, "constant({})", serde_json::to_string(v).expect("value"))
            }
        }
    }
}

impl FromStr for Transform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, arg) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            Some(_) => return Err(s.to_owned()),
            None => (s, None),
        };
        match (name, arg) {
            ("copy", None) => Ok(Transform::Copy),
            ("newID", None) => Ok(Transform::NewId),
            ("placeholder", None) => Ok(Transform::Placeholder),
            ("truncate", Some(a)) => a
                .trim()
                .parse()
                .map(Transform::Truncate)
                .map_err(|_| s.to_owned()),
            ("concat", Some(a)) => serde_json::from_str::<String>(a.trim())
                .map(Transform::Concat)
                .map_err(|_| s.to_owned()),
            ("constant", Some(a)) => serde_json::from_str::<Value>(a.trim())
                .map(Transform::Constant)
                .map_err(|_| s.to_owned()),
            _ => Err(name.to_owned()),
        }
    }
}

/// One destination attribute computed from zero or more source attributes
/// through a pipeline of transforms applied left to right.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttrMap {
    pub from: Vec<AttrRef>,
    pub to: AttrRef,
    pub transforms: Vec<Transform>,
}

impl AttrMap {
    pub fn copy(from: AttrRef, to: AttrRef) -> Self {
        AttrMap {
            from: vec![from],
            to,
            transforms: vec![Transform::Copy],
        }
    }

    pub fn pipeline_string(&self) -> String {
        self.transforms
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" | ")
    }

    pub fn parse_pipeline(s: &str) -> Result<Vec<Transform>, String> {
        s.split(" | ").map(str::parse).collect()
    }

    /// Checks the pipeline shape against the number of inputs.
    pub fn check_shape(&self) -> Result<(), String> {
        let Some(first) = self.transforms.first() else {
            return Err("empty transform pipeline".into());
        };
        match first.arity() {
            Some(n) if n != self.from.len() => {
                return Err(format!(
                    "{first} expects {n} source attribute(s), got {}",
                    self.from.len()
                ))
            }
            None if self.from.is_empty() => return Err(format!("{first} needs source attributes")),
            _ => {}
        }
        if let Some(bad) = self.transforms[1..].iter().find(|t| !t.unary()) {
            return Err(format!("{bad} can only start a pipeline"));
        }
        Ok(())
    }

    /// True when the pipeline passes the single input through unchanged in
    /// meaning (so the value may be a reference the tracker re-links).
    pub fn is_pure_copy(&self) -> bool {
        self.from.len() == 1 && self.transforms.iter().all(|t| *t == Transform::Copy)
    }

    pub fn uses_new_id(&self) -> bool {
        self.transforms.contains(&Transform::NewId)
    }

    pub fn eval(&self, src: &DataNode, new_id: &mut dyn FnMut() -> i64) -> Value {
        let inputs: Vec<&Value> = self.from.iter().map(|a| src.get(a)).collect();
        let mut cur = Value::Null;
        for (i, t) in self.transforms.iter().enumerate() {
            cur = if i == 0 {
                match t {
                    Transform::Copy => inputs[0].clone(),
                    Transform::NewId => Value::Int(new_id()),
                    Transform::Constant(v) => v.clone(),
                    Transform::Placeholder => Value::placeholder(),
                    Transform::Truncate(n) => truncate(inputs[0], *n),
                    Transform::Concat(sep) => concat(&inputs, sep),
                }
            } else {
                match t {
                    Transform::Copy => cur,
                    Transform::NewId => Value::Int(new_id()),
                    Transform::Truncate(n) => truncate(&cur, *n),
                    _ => unreachable!("shape checked"),
                }
            };
        }
        cur
    }
}

fn truncate(v: &Value, n: usize) -> Value {
    match v {
        Value::Text(s) if s.chars().count() > n => Value::Text(s.chars().take(n).collect()),
        other => other.clone(),
    }
}

fn concat(inputs: &[&Value], sep: &str) -> Value {
    let parts: Vec<String> = inputs
        .iter()
        .filter_map(|v| match v {
            Value::Text(s) => Some(s.clone()),
            Value::Int(i) => Some(i.to_string()),
            _ => None,
        })
        .collect();
    if parts.is_empty() {
        Value::Null
    } else {
        Value::Text(parts.join(sep))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FromField {
    One(AttrRef),
    Many(Vec<AttrRef>),
}

#[derive(Serialize, Deserialize)]
struct AttrMapDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    from: Option<FromField>,
    to: AttrRef,
    transform: String,
}

impl Serialize for AttrMap {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let from = match self.from.as_slice() {
            [] => None,
            [one] => Some(FromField::One(one.clone())),
            many => Some(FromField::Many(many.to_vec())),
        };
        AttrMapDoc {
            from,
            to: self.to.clone(),
            transform: self.pipeline_string(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AttrMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = AttrMapDoc::deserialize(d)?;
        let transforms = AttrMap::parse_pipeline(&doc.transform)
            .map_err(|name| serde::de::Error::custom(format!("unknown transform \"{name}\"")))?;
        let from = match doc.from {
            None => Vec::new(),
            Some(FromField::One(a)) => vec![a],
            Some(FromField::Many(v)) => v,
        };
        Ok(AttrMap {
            from,
            to: doc.to,
            transforms,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMap {
    pub from_node: String,
    pub to_node: String,
    pub attributes: Vec<AttrMap>,
}

impl NodeMap {
    pub fn for_target(&self, to: &AttrRef) -> Option<&AttrMap> {
        self.attributes.iter().find(|a| a.to == *to)
    }

    pub fn mapped_sources(&self) -> BTreeSet<&AttrRef> {
        self.attributes.iter().flat_map(|a| a.from.iter()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivation {
    Direct,
    Composed(Vec<AppId>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchemaMapping {
    pub from_app: AppId,
    pub to_app: AppId,
    pub node_maps: Vec<NodeMap>,
    pub derivation: Derivation,
}

impl SchemaMapping {
    pub fn node_map(&self, from_node: &str) -> Option<&NodeMap> {
        self.node_maps.iter().find(|m| m.from_node == from_node)
    }

    /// Applications visited, source first.
    pub fn path(&self) -> Vec<AppId> {
        match &self.derivation {
            Derivation::Direct => vec![self.from_app.clone(), self.to_app.clone()],
            Derivation::Composed(p) => p.clone(),
        }
    }

    /// Maps every attribute of every node type onto itself, regenerating
    /// anchor keys. Used when bag contents return to their origin app.
    pub fn identity(dag: &Dag) -> SchemaMapping {
        let node_maps = dag
            .node_types()
            .iter()
            .map(|n| {
                let anchor = dag.anchor(&n.name).expect("validated");
                let ext_keys = dag.identity_attributes(&n.name);
                let attributes = dag
                    .node_attributes(&n.name)
                    .into_iter()
                    .filter_map(|a| {
                        if a.table == anchor.name && a.attr == anchor.key {
                            Some(AttrMap {
                                from: vec![a.clone()],
                                to: a,
                                transforms: vec![Transform::NewId],
                            })
                        } else if ext_keys.contains(&a) {
                            None
                        } else {
                            Some(AttrMap::copy(a.clone(), a))
                        }
                    })
                    .collect();
                NodeMap {
                    from_node: n.name.clone(),
                    to_node: n.name.clone(),
                    attributes,
                }
            })
            .collect();
        SchemaMapping {
            from_app: dag.app().clone(),
            to_app: dag.app().clone(),
            node_maps,
            derivation: Derivation::Direct,
        }
    }
}

// ---------------------------------------------------------------------------
// Composition

fn chain(first: &[Transform], second: &[Transform]) -> Vec<Transform> {
    if first.contains(&Transform::NewId) || second.contains(&Transform::NewId) {
        // Only the final identity matters.
        return vec![Transform::NewId];
    }
    let mut out: Vec<Transform> = first
        .iter()
        .chain(second.iter())
        .filter(|t| **t != Transform::Copy)
        .cloned()
        .collect();
    if out.is_empty() {
        out.push(Transform::Copy);
    }
    out
}

/// `a -> b` then `b -> c` gives `a -> c`. An attribute survives only when
/// both legs map it.
pub fn compose(ab: &SchemaMapping, bc: &SchemaMapping) -> Result<SchemaMapping, PsmError> {
    if ab.to_app != bc.from_app {
        return Err(PsmError::CompositionDomain {
            left_to: ab.to_app.to_string(),
            right_from: bc.from_app.to_string(),
        });
    }
    let mut node_maps: Vec<NodeMap> = Vec::new();
    let mut seen_targets: HashMap<String, String> = HashMap::new();
    for left in &ab.node_maps {
        let Some(right) = bc.node_map(&left.to_node) else {
            continue;
        };
        if let Some(prev) = seen_targets.insert(right.to_node.clone(), left.from_node.clone()) {
            return Err(PsmError::ConflictingNodeMaps {
                to_node: right.to_node.clone(),
                first: prev,
                second: left.from_node.clone(),
            });
        }
        let mut attributes = Vec::new();
        for r in &right.attributes {
            if r.from.is_empty() {
                attributes.push(r.clone());
                continue;
            }
            let legs: Option<Vec<&AttrMap>> = r.from.iter().map(|b| left.for_target(b)).collect();
            let Some(legs) = legs else {
                continue;
            };
            if let [only] = legs.as_slice() {
                attributes.push(AttrMap {
                    from: only.from.clone(),
                    to: r.to.clone(),
                    transforms: chain(&only.transforms, &r.transforms),
                });
            } else {
                if !legs.iter().all(|l| l.is_pure_copy()) {
                    return Err(PsmError::UnsupportedChain {
                        attr: r.to.to_string(),
                        msg: "multi-input transform fed by non-copy transforms".into(),
                    });
                }
                attributes.push(AttrMap {
                    from: legs.iter().map(|l| l.from[0].clone()).collect(),
                    to: r.to.clone(),
                    transforms: r.transforms.clone(),
                });
            }
        }
        node_maps.push(NodeMap {
            from_node: left.from_node.clone(),
            to_node: right.to_node.clone(),
            attributes,
        });
    }
    let mut path = ab.path();
    path.extend(bc.path().into_iter().skip(1));
    Ok(SchemaMapping {
        from_app: ab.from_app.clone(),
        to_app: bc.to_app.clone(),
        node_maps,
        derivation: Derivation::Composed(path),
    })
}

// ---------------------------------------------------------------------------
// Coverage

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeCoverage {
    pub node_type: String,
    pub mapped: usize,
    pub total: usize,
    pub unmapped: Vec<AttrRef>,
}

impl NodeCoverage {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.mapped as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub nodes: Vec<NodeCoverage>,
    pub aggregate: f64,
}

impl CoverageReport {
    pub fn node(&self, node_type: &str) -> Option<&NodeCoverage> {
        self.nodes.iter().find(|n| n.node_type == node_type)
    }

    pub fn unmapped(&self) -> BTreeSet<&AttrRef> {
        self.nodes.iter().flat_map(|n| n.unmapped.iter()).collect()
    }
}

/// Attributes of the source application without a mapping entry. Extension
/// table keys are excluded: they follow the anchor key.
pub fn coverage(m: &SchemaMapping, src: &Dag) -> CoverageReport {
    coverage_weighted(m, src, &HashMap::new())
}

/// Like [`coverage`], with the aggregate weighted by per-type row counts
/// (types missing from `rows` weigh 1).
pub fn coverage_weighted(
    m: &SchemaMapping,
    src: &Dag,
    rows: &HashMap<String, u64>,
) -> CoverageReport {
    let mut nodes = Vec::new();
    let (mut num, mut den) = (0.0, 0.0);
    for n in src.node_types() {
        let anchor = src.anchor(&n.name).expect("validated");
        let ext_keys: BTreeSet<AttrRef> = src
            .identity_attributes(&n.name)
            .into_iter()
            .filter(|a| a.table != anchor.name)
            .collect();
        let attrs: Vec<AttrRef> = src
            .node_attributes(&n.name)
            .into_iter()
            .filter(|a| !ext_keys.contains(a))
            .collect();
        let mapped_set: BTreeSet<&AttrRef> = m
            .node_map(&n.name)
            .map(NodeMap::mapped_sources)
            .unwrap_or_default();
        let unmapped: Vec<AttrRef> = attrs
            .iter()
            .filter(|a| !mapped_set.contains(a))
            .cloned()
            .collect();
        let cov = NodeCoverage {
            node_type: n.name.clone(),
            mapped: attrs.len() - unmapped.len(),
            total: attrs.len(),
            unmapped,
        };
        let w = rows.get(&n.name).copied().unwrap_or(1) as f64;
        num += w * cov.fraction();
        den += w;
        nodes.push(cov);
    }
    CoverageReport {
        nodes,
        aggregate: if den == 0.0 { 0.0 } else { num / den },
    }
}

// ---------------------------------------------------------------------------
// Route derivation

/// For every ordered pair of applications connected in the digraph of
/// `direct` mappings, emits one mapping: the direct one when it exists,
/// otherwise the composed path with the best aggregate coverage (ties:
/// fewer hops, then lexicographically smaller path). Output is sorted by
/// `(from_app, to_app)` and includes the direct mappings.
pub fn derive_all(direct: &[SchemaMapping], dags: &BTreeMap<AppId, Dag>) -> Vec<SchemaMapping> {
    let mut edges: BTreeMap<&AppId, Vec<&SchemaMapping>> = BTreeMap::new();
    for m in direct {
        edges.entry(&m.from_app).or_default().push(m);
    }
    for v in edges.values_mut() {
        v.sort_by(|a, b| a.to_app.cmp(&b.to_app));
    }
    let apps: BTreeSet<&AppId> = direct
        .iter()
        .flat_map(|m| [&m.from_app, &m.to_app])
        .collect();
    let mut out = Vec::new();
    for &x in &apps {
        // Enumerate simple paths from x.
        let mut best: BTreeMap<&AppId, (f64, usize, Vec<AppId>, SchemaMapping)> = BTreeMap::new();
        let mut stack: Vec<(Vec<&AppId>, Option<SchemaMapping>)> = vec![(vec![x], None)];
        while let Some((path, acc)) = stack.pop() {
            let last = *path.last().expect("nonempty");
            for leg in edges.get(last).into_iter().flatten() {
                if path.contains(&&leg.to_app) {
                    continue;
                }
                let composed = match &acc {
                    None => (*leg).clone(),
                    Some(prev) => match compose(prev, leg) {
                        Ok(m) => m,
                        Err(_) => continue,
                    },
                };
                let mut next_path = path.clone();
                next_path.push(&leg.to_app);
                let hops = next_path.len() - 1;
                let names: Vec<AppId> = next_path.iter().map(|a| (*a).clone()).collect();
                let score = dags
                    .get(x)
                    .map(|d| coverage(&composed, d).aggregate)
                    .unwrap_or(0.0);
                let better = match best.get(&leg.to_app) {
                    None => true,
                    Some((s, h, p, _)) => {
                        // Direct mappings (one hop) always win.
                        if *h == 1 {
                            false
                        } else if hops == 1 {
                            true
                        } else {
                            score > *s || (score == *s && (hops < *h || (hops == *h && names < *p)))
                        }
                    }
                };
                if better {
                    best.insert(&leg.to_app, (score, hops, names, composed.clone()));
                }
                stack.push((next_path, Some(composed)));
            }
        }
        for (_, (_, _, _, m)) in best {
            out.push(m);
        }
    }
    out.sort_by(|a, b| (&a.from_app, &a.to_app).cmp(&(&b.from_app, &b.to_app)));
    out
}
