//! Loading and saving of schema, DAG and mapping documents (JSON).
//!
//! Every document carries a top-level `"version"`; unversioned or
//! unknown-version documents are rejected before anything else is read.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::SpecError;
use crate::model::{AppId, AppSchema, Dag, DagSpec};
use crate::psm::{AttrMap, Derivation, NodeMap, SchemaMapping, Transform};

pub const FORMAT_VERSION: u64 = 1;

/// Raw document text plus where it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecDocument {
    pub content: String,
    pub source: Option<PathBuf>,
}

impl SpecDocument {
    pub fn inline(content: impl Into<String>) -> Self {
        SpecDocument {
            content: content.into(),
            source: None,
        }
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        Ok(SpecDocument {
            content: std::fs::read_to_string(path)?,
            source: Some(path.to_owned()),
        })
    }

    fn origin(&self) -> String {
        self.source
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "<inline>".into())
    }

    /// Parses the document and checks the version, returning the tree.
    pub fn tree(&self) -> Result<Json, SpecError> {
        let tree: Json = serde_json::from_str(&self.content).map_err(|e| SpecError::Parse {
            path: self.origin(),
            msg: e.to_string(),
        })?;
        let found = tree.get("version").and_then(Json::as_u64);
        if found != Some(FORMAT_VERSION) {
            return Err(SpecError::Version {
                path: format!("{}#/version", self.origin()),
                found,
            });
        }
        Ok(tree)
    }

    pub fn version(&self) -> Result<u64, SpecError> {
        self.tree().map(|_| FORMAT_VERSION)
    }

    fn decode<T: DeserializeOwned>(&self) -> Result<T, SpecError> {
        let tree = self.tree()?;
        serde_json::from_value(tree).map_err(|e| SpecError::Parse {
            path: self.origin(),
            msg: e.to_string(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    version: u64,
    #[serde(flatten)]
    body: T,
}

fn encode<T: Serialize>(body: &T) -> SpecDocument {
    let doc = Versioned {
        version: FORMAT_VERSION,
        body,
    };
    let mut content = serde_json::to_string_pretty(&doc).expect("spec types always serialise");
    content.push('\n');
    SpecDocument::inline(content)
}

pub fn load_schema(doc: &SpecDocument) -> Result<AppSchema, SpecError> {
    let schema: AppSchema = doc.decode()?;
    schema.validate()?;
    Ok(schema)
}

pub fn load_dag_spec(doc: &SpecDocument, schema: &AppSchema) -> Result<Dag, SpecError> {
    let spec: DagSpec = doc.decode()?;
    Dag::new(spec, schema.clone())
}

#[derive(Serialize, Deserialize)]
struct MappingDoc {
    from_app: AppId,
    to_app: AppId,
    node_maps: Vec<NodeMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    derivation: Option<Vec<AppId>>,
}

/// Parses a mapping and checks every entry against the source and
/// destination DAGs (node types and their member tables).
pub fn load_mapping(doc: &SpecDocument, src: &Dag, dst: &Dag) -> Result<SchemaMapping, SpecError> {
    // Unknown transforms surface as parse errors from serde; report them
    // with their location instead.
    let tree = doc.tree()?;
    if let Some(maps) = tree.get("node_maps").and_then(Json::as_array) {
        for (i, nm) in maps.iter().enumerate() {
            let attrs = nm.get("attributes").and_then(Json::as_array);
            for (j, am) in attrs.into_iter().flatten().enumerate() {
                if let Some(t) = am.get("transform").and_then(Json::as_str) {
                    if let Err(name) = AttrMap::parse_pipeline(t) {
                        return Err(SpecError::UnknownTransform {
                            path: format!("/node_maps/{i}/attributes/{j}/transform"),
                            name,
                        });
                    }
                }
            }
        }
    }
    let raw: MappingDoc = doc.decode()?;
    if raw.from_app != *src.app() || raw.to_app != *dst.app() {
        return Err(SpecError::invalid(
            "/from_app",
            format!(
                "mapping {} -> {} checked against {} -> {}",
                raw.from_app,
                raw.to_app,
                src.app(),
                dst.app()
            ),
        ));
    }
    let mut seen_from = HashSet::new();
    for (i, nm) in raw.node_maps.iter().enumerate() {
        let path = format!("/node_maps/{i}");
        let Some(from) = src.node_type(&nm.from_node) else {
            return Err(SpecError::UnknownNode {
                path: format!("{path}/from_node"),
                node: nm.from_node.clone(),
            });
        };
        let Some(to) = dst.node_type(&nm.to_node) else {
            return Err(SpecError::UnknownNode {
                path: format!("{path}/to_node"),
                node: nm.to_node.clone(),
            });
        };
        if !seen_from.insert(nm.from_node.as_str()) {
            return Err(SpecError::invalid(
                format!("{path}/from_node"),
                format!("node type {:?} mapped more than once", nm.from_node),
            ));
        }
        let mut seen_to = HashSet::new();
        for (j, am) in nm.attributes.iter().enumerate() {
            let apath = format!("{path}/attributes/{j}");
            for a in &am.from {
                if !from.tables.contains(&a.table) {
                    return Err(SpecError::UnknownTable {
                        path: format!("{apath}/from"),
                        table: a.table.clone(),
                    });
                }
                if !src.schema().has_attr(a) {
                    return Err(SpecError::UnknownAttribute {
                        path: format!("{apath}/from"),
                        attr: a.to_string(),
                    });
                }
            }
            if !to.tables.contains(&am.to.table) {
                return Err(SpecError::UnknownTable {
                    path: format!("{apath}/to"),
                    table: am.to.table.clone(),
                });
            }
            if !dst.schema().has_attr(&am.to) {
                return Err(SpecError::UnknownAttribute {
                    path: format!("{apath}/to"),
                    attr: am.to.to_string(),
                });
            }
            if !seen_to.insert(&am.to) {
                return Err(SpecError::DuplicateDestination {
                    path: format!("{apath}/to"),
                    attr: am.to.to_string(),
                });
            }
            am.check_shape()
                .map_err(|msg| SpecError::invalid(format!("{apath}/transform"), msg))?;
            if am.transforms.contains(&Transform::Placeholder) && am.transforms.len() > 1 {
                return Err(SpecError::invalid(
                    format!("{apath}/transform"),
                    "placeholder cannot be chained",
                ));
            }
        }
    }
    Ok(SchemaMapping {
        from_app: raw.from_app,
        to_app: raw.to_app,
        node_maps: raw.node_maps,
        derivation: match raw.derivation {
            None => Derivation::Direct,
            Some(path) => Derivation::Composed(path),
        },
    })
}

pub fn save_schema(schema: &AppSchema) -> SpecDocument {
    encode(schema)
}

pub fn save_dag(dag: &Dag) -> SpecDocument {
    encode(dag.spec())
}

pub fn save_mapping(m: &SchemaMapping) -> SpecDocument {
    encode(&MappingDoc {
        from_app: m.from_app.clone(),
        to_app: m.to_app.clone(),
        node_maps: m.node_maps.clone(),
        derivation: match &m.derivation {
            Derivation::Direct => None,
            Derivation::Composed(p) => Some(p.clone()),
        },
    })
}
