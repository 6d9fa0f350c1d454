//! Hierarchical registry of model branches and their variables.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

use crate::error::{CoreError, Result};
use crate::units::{SeriesKind, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sector {
    Water,
    Energy,
    Food,
}

impl Sector {
    pub const ALL: [Sector; 3] = [Sector::Water, Sector::Energy, Sector::Food];

    pub fn root(self) -> &'static str {
        match self {
            Sector::Water => "water",
            Sector::Energy => "energy",
            Sector::Food => "food",
        }
    }

    pub fn from_root(root: &str) -> Option<Sector> {
        Sector::ALL.into_iter().find(|s| s.root() == root)
    }
}

/// Either a literal number or a reference such as `climate:population`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseValue {
    Number(f64),
    Series(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDef {
    pub key: String,
    pub label: String,
    pub unit: Unit,
    pub kind: SeriesKind,
    pub base_value: BaseValue,
    pub adjustable: bool,
    #[serde(default)]
    pub default_delta_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect: Option<crate::scenario::LeverEffect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchNode {
    pub id: String,
    pub sector: Sector,
    pub label: String,
    pub children: Vec<String>,
    pub variables: Vec<VariableDef>,
}

impl BranchNode {
    pub fn parent_id(&self) -> Option<&str> {
        self.id.rsplit_once('/').map(|(p, _)| p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchTree {
    pub nodes: Vec<BranchNode>,
}

/// Result of resolving a path: the empty path lists the sector roots.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolved<'a> {
    Roots(Vec<&'a BranchNode>),
    Node(&'a BranchNode),
}

impl BranchTree {
    pub fn get(&self, id: &str) -> Option<&BranchNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn roots(&self) -> Vec<&BranchNode> {
        Sector::ALL
            .iter()
            .filter_map(|s| self.get(s.root()))
            .collect()
    }

    pub fn resolve(&self, path: &str) -> Result<Resolved<'_>> {
        let path = path.trim_matches('/');
        if path.is_empty() {
            return Ok(Resolved::Roots(self.roots()));
        }
        if path.split('/').any(|seg| seg.is_empty()) {
            return Err(CoreError::InvalidPath(path.to_string()));
        }
        if let Some(n) = self.get(path) {
            return Ok(Resolved::Node(n));
        }
        let mut hint = None;
        let mut prefix = path;
        while let Some((parent, _)) = prefix.rsplit_once('/') {
            if self.get(parent).is_some() {
                hint = Some(parent.to_string());
                break;
            }
            prefix = parent;
        }
        Err(CoreError::BranchNotFound {
            path: path.to_string(),
            hint,
        })
    }

    /// Resolves to a single node; the empty path is not a node.
    pub fn node(&self, path: &str) -> Result<&BranchNode> {
        match self.resolve(path)? {
            Resolved::Node(n) => Ok(n),
            Resolved::Roots(_) => Err(CoreError::InvalidPath(path.to_string())),
        }
    }

    /// Adjustable variables with the id of the node that owns each.
    pub fn adjustable(&self) -> Vec<(&str, &VariableDef)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                n.variables
                    .iter()
                    .filter(|v| v.adjustable)
                    .map(move |v| (n.id.as_str(), v))
            })
            .collect()
    }

    pub fn find_variable(&self, key: &str) -> Option<(&BranchNode, &VariableDef)> {
        self.nodes
            .iter()
            .find_map(|n| n.variables.iter().find(|v| v.key == key).map(|v| (n, v)))
    }

    /// Descendants of `id` in depth-first order, `id` first.
    pub fn subtree(&self, id: &str) -> Vec<&BranchNode> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            if let Some(n) = self.get(cur) {
                out.push(n);
                stack.extend(n.children.iter().rev().map(String::as_str));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(CoreError::schema("tree.nodes", format!("duplicate id `{}`", n.id)));
            }
        }
        let mut parent_of: BTreeMap<&str, &str> = BTreeMap::new();
        for n in &self.nodes {
            let root = n.id.split('/').next().unwrap_or_default();
            if Sector::from_root(root) != Some(n.sector) {
                return Err(CoreError::schema(
                    format!("tree.{}", n.id),
                    format!("sector {:?} does not match root `{root}`", n.sector),
                ));
            }
            for c in &n.children {
                if !ids.contains(c.as_str()) {
                    return Err(CoreError::schema(
                        format!("tree.{}.children", n.id),
                        format!("unknown child `{c}`"),
                    ));
                }
                if let Some(prev) = parent_of.insert(c, &n.id) {
                    return Err(CoreError::schema(
                        format!("tree.{c}"),
                        format!("has two parents `{prev}` and `{}`", n.id),
                    ));
                }
                if c.rsplit_once('/').map(|(p, _)| p) != Some(n.id.as_str()) {
                    return Err(CoreError::schema(
                        format!("tree.{c}"),
                        format!("child path is not under `{}`", n.id),
                    ));
                }
            }
        }
        for n in &self.nodes {
            let is_root = Sector::from_root(&n.id).is_some();
            if is_root == parent_of.contains_key(n.id.as_str()) {
                return Err(CoreError::schema(
                    format!("tree.{}", n.id),
                    if is_root {
                        "sector root has a parent"
                    } else {
                        "node is not attached to the tree"
                    },
                ));
            }
        }
        for s in Sector::ALL {
            if self.get(s.root()).is_none() {
                return Err(CoreError::schema("tree", format!("missing root `{}`", s.root())));
            }
        }
        let mut keys = HashSet::new();
        for n in &self.nodes {
            for v in &n.variables {
                if !keys.insert(v.key.as_str()) {
                    return Err(CoreError::schema(
                        format!("tree.{}.variables", n.id),
                        format!("variable `{}` appears more than once", v.key),
                    ));
                }
                if v.kind == SeriesKind::Share {
                    if let BaseValue::Number(x) = v.base_value {
                        if !(0.0..=1.0).contains(&x) {
                            return Err(CoreError::schema(
                                format!("tree.{}.{}", n.id, v.key),
                                "share base value outside [0, 1]",
                            ));
                        }
                    }
                }
                if v.adjustable && v.default_delta_pct != 0.0 {
                    return Err(CoreError::schema(
                        format!("tree.{}.{}", n.id, v.key),
                        "adjustable variable must default to a 0% delta",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Incremental builder that keeps parent/child links consistent.
#[derive(Debug, Default)]
pub struct TreeBuilder {
    nodes: Vec<BranchNode>,
    index: BTreeMap<String, usize>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        let mut b = TreeBuilder::default();
        for s in Sector::ALL {
            let mut label = s.root().to_string();
            label[..1].make_ascii_uppercase();
            b.insert(s.root().to_string(), s, label);
        }
        b
    }

    fn insert(&mut self, id: String, sector: Sector, label: String) {
        self.index.insert(id.clone(), self.nodes.len());
        self.nodes.push(BranchNode {
            id,
            sector,
            label,
            children: Vec::new(),
            variables: Vec::new(),
        });
    }

    /// Adds `path` and any missing ancestors. Labels of existing nodes are kept.
    pub fn node(&mut self, path: &str, label: &str) -> &mut Self {
        if self.index.contains_key(path) {
            return self;
        }
        let (parent, _) = path.rsplit_once('/').expect("non-root path");
        if !self.index.contains_key(parent) {
            let parent_label = parent.rsplit('/').next().unwrap_or(parent).replace('_', " ");
            self.node(parent, &parent_label);
        }
        let sector = self.nodes[self.index[parent]].sector;
        self.insert(path.to_string(), sector, label.to_string());
        let pi = self.index[parent];
        self.nodes[pi].children.push(path.to_string());
        self
    }

    pub fn variable(&mut self, path: &str, var: VariableDef) -> &mut Self {
        if !self.index.contains_key(path) {
            let label = path.rsplit('/').next().unwrap_or(path).replace('_', " ");
            self.node(path, &label);
        }
        let i = self.index[path];
        self.nodes[i].variables.push(var);
        self
    }

    pub fn build(self) -> BranchTree {
        BranchTree { nodes: self.nodes }
    }
}
