//! Declared spatial cause structure and its compilation into attention masks.
//!
//! A network groups the `p` observed variables into clusters. Variables are
//! laid out cluster by cluster, so cluster `s` owns a consecutive index range.
//! A directed edge `from -> to` between clusters says the `from` cluster may
//! cause the `to` cluster; the same edge set is used at every time step.
//!
//! The spatial mask lets variable `i` attend to variable `j` exactly when the
//! cluster of `j` is a parent of, or equal to, the cluster of `i`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{MaskCell, MaskMatrix};

/// 1-based cluster index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterId(pub usize);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub id: ClusterId,
    pub name: String,
    pub variables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterDecl {
    pub name: String,
    pub variables: Vec<String>,
}

/// JSON document declaring a network.
///
/// ```json
/// {
///   "clusters": [{"name": "rain", "variables": ["P1", "P2"]},
///                {"name": "river", "variables": ["WL"]}],
///   "edges": [["rain", "river"]],
///   "target_variable": "WL"
/// }
/// ```
///
/// Edges name clusters and read `from -> to`. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub clusters: Vec<ClusterDecl>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    pub target_variable: String,
}

impl NetworkConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("network config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network config serializes")
    }

    /// The four-cluster river network: precipitation, the tidal bridge, the
    /// dam and the bridge cluster that holds the target `WL_B0`.
    pub fn han_river() -> Self {
        let cluster = |name: &str, vars: &[&str]| ClusterDecl {
            name: name.to_string(),
            variables: vars.iter().map(|v| v.to_string()).collect(),
        };
        let edge = |a: &str, b: &str| (a.to_string(), b.to_string());
        Self {
            clusters: vec![
                cluster("precipitation", &["P1", "P2", "P3"]),
                cluster("tidal_bridge", &["WL_B4"]),
                cluster("dam", &["WL_D", "IF_D", "STR_D", "JUS_D", "OF_D"]),
                cluster(
                    "bridges",
                    &["WL_B1", "FL_B1", "WL_B0", "WL_B2", "FL_B2", "WL_B3", "FL_B3"],
                ),
            ],
            edges: vec![
                edge("precipitation", "dam"),
                edge("precipitation", "bridges"),
                edge("tidal_bridge", "bridges"),
                edge("dam", "bridges"),
            ],
            target_variable: "WL_B0".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultilayerNetwork {
    clusters: Vec<ClusterSpec>,
    edges: BTreeSet<(ClusterId, ClusterId)>,
    target: Option<usize>,
}

impl MultilayerNetwork {
    /// Builds a network from cluster variable lists (ids assigned 1..=S in
    /// order) and `(from, to)` cluster-id edges. Duplicate edges collapse.
    pub fn new(
        clusters: Vec<(String, Vec<String>)>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::config("network needs at least one cluster"));
        }
        let mut seen_clusters = HashSet::new();
        let mut seen_vars = HashSet::new();
        let mut specs = Vec::with_capacity(clusters.len());
        for (k, (name, variables)) in clusters.into_iter().enumerate() {
            if !seen_clusters.insert(name.clone()) {
                return Err(Error::config(format!("duplicate cluster name {name:?}")));
            }
            if variables.is_empty() {
                return Err(Error::config(format!("cluster {name:?} has no variables")));
            }
            for v in &variables {
                if !seen_vars.insert(v.clone()) {
                    return Err(Error::config(format!("duplicate variable name {v:?}")));
                }
            }
            specs.push(ClusterSpec {
                id: ClusterId(k + 1),
                name,
                variables,
            });
        }
        let s = specs.len();
        let mut edge_set = BTreeSet::new();
        for (from, to) in edges {
            if from == 0 || from > s || to == 0 || to > s {
                return Err(Error::config(format!(
                    "edge ({from},{to}) references an unknown cluster (have 1..={s})"
                )));
            }
            if from == to {
                return Err(Error::config(format!(
                    "self edge ({from},{from}); self influence is implicit"
                )));
            }
            edge_set.insert((ClusterId(from), ClusterId(to)));
        }
        Ok(Self {
            clusters: specs,
            edges: edge_set,
            target: None,
        })
    }

    /// Marks `name` as the forecast target.
    pub fn with_target(mut self, name: &str) -> Result<Self> {
        let idx = self
            .variable_index(name)
            .ok_or_else(|| Error::config(format!("target variable {name:?} is not declared")))?;
        self.target = Some(idx);
        Ok(self)
    }

    pub fn clusters(&self) -> &[ClusterSpec] {
        &self.clusters
    }

    pub fn edges(&self) -> &BTreeSet<(ClusterId, ClusterId)> {
        &self.edges
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    /// Total variable count `p`.
    pub fn p(&self) -> usize {
        self.clusters.iter().map(|c| c.variables.len()).sum()
    }

    pub fn variables(&self) -> Vec<String> {
        self.clusters
            .iter()
            .flat_map(|c| c.variables.iter().cloned())
            .collect()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.clusters
            .iter()
            .flat_map(|c| c.variables.iter())
            .position(|v| v == name)
    }

    pub fn target_index(&self) -> Option<usize> {
        self.target
    }

    pub fn target_name(&self) -> Option<String> {
        self.target.map(|i| self.variables()[i].clone())
    }

    pub fn target_cluster(&self) -> Option<ClusterId> {
        self.target.map(|i| self.cluster_of(i))
    }

    /// Consecutive index range owned by each cluster, in id order.
    pub fn partition(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.clusters
            .iter()
            .map(|c| {
                let r = start..start + c.variables.len();
                start = r.end;
                r
            })
            .collect()
    }

    /// Cluster of variable index `i`.
    pub fn cluster_of(&self, i: usize) -> ClusterId {
        let mut end = 0;
        for c in &self.clusters {
            end += c.variables.len();
            if i < end {
                return c.id;
            }
        }
        panic!("variable index {i} out of range (p = {end})");
    }

    /// `Pa(v_s)`: clusters with an edge into `s`.
    pub fn parents(&self, s: ClusterId) -> BTreeSet<ClusterId> {
        self.edges
            .iter()
            .filter(|(_, to)| *to == s)
            .map(|(from, _)| *from)
            .collect()
    }

    pub fn to_config(&self) -> NetworkConfig {
        let name_of = |id: ClusterId| self.clusters[id.0 - 1].name.clone();
        NetworkConfig {
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterDecl {
                    name: c.name.clone(),
                    variables: c.variables.clone(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|&(a, b)| (name_of(a), name_of(b)))
                .collect(),
            target_variable: self.target_name().unwrap_or_default(),
        }
    }
}

/// Resolves cluster names in `config` and builds the network with its target.
pub fn build_network(config: &NetworkConfig) -> Result<MultilayerNetwork> {
    let ids: HashMap<&str, usize> = config
        .clusters
        .iter()
        .enumerate()
        .map(|(k, c)| (c.name.as_str(), k + 1))
        .collect();
    let lookup = |name: &str| {
        ids.get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("edge references unknown cluster {name:?}")))
    };
    let mut edges = Vec::with_capacity(config.edges.len());
    for (from, to) in &config.edges {
        edges.push((lookup(from)?, lookup(to)?));
    }
    let clusters = config
        .clusters
        .iter()
        .map(|c| (c.name.clone(), c.variables.clone()))
        .collect();
    MultilayerNetwork::new(clusters, edges)?.with_target(&config.target_variable)
}

/// `p x p` mask: row `i` may attend to column `j` iff `cluster(j)` is a parent
/// of, or equal to, `cluster(i)`.
pub fn spatial_mask(net: &MultilayerNetwork) -> MaskMatrix {
    let p = net.p();
    let cluster: Vec<ClusterId> = (0..p).map(|i| net.cluster_of(i)).collect();
    MaskMatrix::from_fn(p, p, |i, j| {
        let (si, sj) = (cluster[i], cluster[j]);
        if si == sj || net.edges.contains(&(sj, si)) {
            MaskCell::Permit
        } else {
            MaskCell::Forbid
        }
    })
}

/// `n x n` lower-triangular mask enforcing that no step sees a later one.
pub fn temporal_mask(n: usize) -> Result<MaskMatrix> {
    MaskMatrix::causal(n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub acyclic: bool,
    pub target: Option<ClusterId>,
    /// Clusters that neither reach nor are reached from the target.
    pub unreachable: Vec<ClusterId>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Checks the edge set for cycles and for clusters disconnected from the
/// target cluster. Problems are reported, never raised.
pub fn validate_assumptions(net: &MultilayerNetwork) -> ValidationReport {
    let s = net.cluster_count();
    let mut out = vec![Vec::new(); s + 1];
    let mut inn = vec![Vec::new(); s + 1];
    for &(a, b) in &net.edges {
        out[a.0].push(b.0);
        inn[b.0].push(a.0);
    }

    // Kahn: every node is removed iff the graph has no cycle.
    let mut indeg: Vec<usize> = (0..=s).map(|k| inn[k].len()).collect();
    let mut queue: Vec<usize> = (1..=s).filter(|&k| indeg[k] == 0).collect();
    let mut removed = 0;
    while let Some(k) = queue.pop() {
        removed += 1;
        for &n in &out[k] {
            indeg[n] -= 1;
            if indeg[n] == 0 {
                queue.push(n);
            }
        }
    }
    let acyclic = removed == s;

    let mut warnings = Vec::new();
    if !acyclic {
        warnings.push("spatial edge set contains a cycle".to_string());
    }

    let target = net.target_cluster();
    let mut unreachable = Vec::new();
    match target {
        Some(t) => {
            let reach = |adj: &Vec<Vec<usize>>| {
                let mut seen = vec![false; s + 1];
                let mut stack = vec![t.0];
                seen[t.0] = true;
                while let Some(k) = stack.pop() {
                    for &n in &adj[k] {
                        if !seen[n] {
                            seen[n] = true;
                            stack.push(n);
                        }
                    }
                }
                seen
            };
            let downstream = reach(&out);
            let upstream = reach(&inn);
            for k in 1..=s {
                if !downstream[k] && !upstream[k] {
                    unreachable.push(ClusterId(k));
                    warnings.push(format!(
                        "cluster {:?} is not connected to the target cluster",
                        net.clusters[k - 1].name
                    ));
                }
            }
        }
        None => warnings.push("no target variable declared".to_string()),
    }

    ValidationReport {
        acyclic,
        target,
        unreachable,
        warnings,
    }
}
