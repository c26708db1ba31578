//! File formats: JSON network and prior files, CSV data and result tables,
//! and run reports.
//!
//! Network file:
//!
//! ```json
//! {"nodes": [{"name": "A", "domain": ["0", "1"]},
//!            {"name": "X", "domain": ["0", "1"], "parents": ["A"]}]}
//! ```
//!
//! Prior file. Every field is optional; node blocks override `default`
//! field by field.
//!
//! ```json
//! {"default": {"alpha": "flat", "mu": "uniform",
//!              "pi": {"pi0": 0.25, "pi1": 0.5, "pi2": 0.25},
//!              "correlation_mode": "quadratic", "adjust": false,
//!              "seed": 7, "mc_samples": 200000},
//!  "nodes": {"X": {"alpha": 2, "mu": {"0": 0.4, "1": 0.6},
//!                  "pi": {"pi0": 0.1, "piW": {"A": 0.6}, "pi2": 0.3}}}}
//! ```
//!
//! A node block may instead carry raw Gamma shapes under `dd`
//! (`alpha0`, `alpha_parent`, `alpha2`; see [`DdPrior`]).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlation::CorrelationMode;
use crate::error::{Error, Result};
use crate::estimator::{EstimateOptions, EstimateTable, NodePrior, SolveRow};
use crate::model::{BeliefNet, CountTable, Dataset, NodeSpec};
use crate::prior::{DdPrior, MddPrior, PiVector};

/// `pi` used when neither the node block nor `default` gives one.
pub const DEFAULT_PI: PiVector = PiVector {
    pi0: 0.25,
    pi1: 0.5,
    pi2: 0.25,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub nodes: Vec<NodeSpec>,
}

pub fn parse_network(text: &str) -> Result<BeliefNet> {
    let file: NetworkFile =
        serde_json::from_str(text).map_err(|e| Error::parse("network file", e))?;
    BeliefNet::new(file.nodes)
}

pub fn network_to_json(net: &BeliefNet) -> String {
    let file = NetworkFile {
        nodes: net.nodes().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("network serializes")
}

/// Reads a CSV data file. A file with no header at all is an empty dataset
/// over the network's columns.
pub fn read_dataset<R: Read>(reader: R, net: &BeliefNet) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let columns: Vec<String> = match records.next() {
        None => return Ok(Dataset::new(net.nodes().iter().map(|n| n.name.clone()).collect())),
        Some(header) => header
            .map_err(|e| Error::parse("data header", e))?
            .iter()
            .map(|c| c.trim().to_string())
            .collect(),
    };
    let mut data = Dataset::new(columns);
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(|e| Error::parse(format!("data record {}", i + 1), e))?;
        if rec.len() != data.columns.len() {
            return Err(Error::RecordWidth {
                record: i + 1,
                expected: data.columns.len(),
                found: rec.len(),
            });
        }
        data.push(&rec.iter().map(str::trim).collect::<Vec<_>>());
    }
    Ok(data)
}

pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&data.columns).map_err(csv_err)?;
    for r in &data.records {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Numeric(format!("csv write failed: {other:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flat {
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Uniform {
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Flat(Flat),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MuSpec {
    Uniform(Uniform),
    Values(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PiSpec {
    Symmetric {
        pi0: f64,
        pi1: f64,
        pi2: f64,
    },
    PerParent {
        pi0: f64,
        #[serde(rename = "piW")]
        pi_w: BTreeMap<String, f64>,
        pi2: f64,
    },
}

/// Raw Gamma shapes for a general DD prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdTables {
    pub alpha0: Vec<f64>,
    /// One block per parent, `level * |X| + x`.
    pub alpha_parent: Vec<Vec<f64>>,
    /// `row * |X| + x`.
    pub alpha2: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AlphaSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<MuSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<PiSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_mode: Option<CorrelationMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjust: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renormalize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dd: Option<DdTables>,
}

impl NodeConfig {
    fn overlay(&self, base: &NodeConfig) -> NodeConfig {
        NodeConfig {
            alpha: self.alpha.clone().or_else(|| base.alpha.clone()),
            mu: self.mu.clone().or_else(|| base.mu.clone()),
            pi: self.pi.clone().or_else(|| base.pi.clone()),
            correlation_mode: self.correlation_mode.or(base.correlation_mode),
            adjust: self.adjust.or(base.adjust),
            renormalize: self.renormalize.or(base.renormalize),
            seed: self.seed.or(base.seed),
            mc_samples: self.mc_samples.or(base.mc_samples),
            dd: self.dd.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default)]
    pub default: NodeConfig,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub nodes: BTreeMap<String, NodeConfig>,
}

/// Prior and options for one node after merging `default` and overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedNode {
    pub prior: NodePrior,
    pub options: EstimateOptions,
}

impl PriorConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("prior file", e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prior config serializes")
    }

    /// Checks that every node block names a node of `net`.
    pub fn check_nodes(&self, net: &BeliefNet) -> Result<()> {
        match self.nodes.keys().find(|k| net.node_index(k).is_none()) {
            Some(k) => Err(Error::UnknownNode(k.clone())),
            None => Ok(()),
        }
    }

    pub fn resolve(&self, net: &BeliefNet, node: &str) -> Result<ResolvedNode> {
        let spec = net.node(node)?;
        let merged = match self.nodes.get(node) {
            Some(block) => block.overlay(&self.default),
            None => NodeConfig {
                dd: None,
                ..self.default.clone()
            },
        };
        let defaults = EstimateOptions::default();
        let options = EstimateOptions {
            mode: merged.correlation_mode.unwrap_or(defaults.mode),
            adjust: merged.adjust.unwrap_or(defaults.adjust),
            renormalize: merged.renormalize.unwrap_or(defaults.renormalize),
            scaled: defaults.scaled,
            mc_seed: merged.seed.unwrap_or(defaults.mc_seed),
            mc_samples: merged.mc_samples.unwrap_or(defaults.mc_samples),
        };
        let k = spec.domain.len();
        if self.default.dd.is_some() {
            return Err(Error::hyper("dd", "default", "is only allowed in node blocks"));
        }
        if let Some(dd) = &merged.dd {
            let block = &self.nodes[node];
            if block.alpha.is_some() || block.mu.is_some() || block.pi.is_some() {
                return Err(Error::hyper(
                    "dd",
                    node,
                    "cannot be combined with alpha, mu or pi in the same block",
                ));
            }
            let prior = DdPrior::new(
                node,
                k,
                net.layout(node)?,
                dd.alpha0.clone(),
                dd.alpha_parent.clone(),
                dd.alpha2.clone(),
            )?;
            return Ok(ResolvedNode {
                prior: NodePrior::Dd(prior),
                options,
            });
        }
        let alpha = match merged.alpha {
            None | Some(AlphaSpec::Flat(_)) => k as f64,
            Some(AlphaSpec::Value(a)) => a,
        };
        let mu = match &merged.mu {
            None | Some(MuSpec::Uniform(_)) => vec![1.0 / k as f64; k],
            Some(MuSpec::Values(map)) => {
                if let Some(key) = map.keys().find(|l| !spec.domain.contains(l)) {
                    return Err(Error::hyper("mu", key, "is not a value of the node"));
                }
                spec.domain
                    .iter()
                    .map(|l| {
                        map.get(l)
                            .copied()
                            .ok_or_else(|| Error::hyper("mu", l, "has no mean"))
                    })
                    .collect::<Result<_>>()?
            }
        };
        let prior = match merged.pi {
            None => MddPrior::symmetric(node, alpha, mu, DEFAULT_PI, spec.parents.len())?,
            Some(PiSpec::Symmetric { pi0, pi1, pi2 }) => MddPrior::symmetric(
                node,
                alpha,
                mu,
                PiVector::new(pi0, pi1, pi2)?,
                spec.parents.len(),
            )?,
            Some(PiSpec::PerParent { pi0, pi_w, pi2 }) => {
                if let Some(key) = pi_w.keys().find(|p| !spec.parents.contains(p)) {
                    return Err(Error::hyper("piW", key, "is not a parent of the node"));
                }
                let weights = spec
                    .parents
                    .iter()
                    .map(|p| pi_w.get(p).copied().unwrap_or(0.0))
                    .collect();
                MddPrior::new(node, alpha, mu, pi0, weights, pi2)?
            }
        };
        Ok(ResolvedNode {
            prior: NodePrior::Mdd(prior),
            options,
        })
    }
}

/// Writes `node,row,x,n_f,m_xf,p,theta_hat,clamped`. `p` is `NaN` for rows
/// without data.
pub fn write_estimates<W: Write>(
    writer: W,
    tables: &[(&CountTable, &EstimateTable)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["node", "row", "x", "n_f", "m_xf", "p", "theta_hat", "clamped"])
        .map_err(csv_err)?;
    for (counts, est) in tables {
        for f in 0..counts.n_rows() {
            let n = counts.n(f);
            let row = counts.layout.row_label(f);
            for (x, label) in counts.values.iter().enumerate() {
                let m = counts.m(f, x);
                let p = if n > 0 { m as f64 / n as f64 } else { f64::NAN };
                let cell = f * counts.n_values() + x;
                w.write_record([
                    counts.node.as_str(),
                    row.as_str(),
                    label.as_str(),
                    &n.to_string(),
                    &m.to_string(),
                    &p.to_string(),
                    &est.theta[cell].to_string(),
                    if est.clamped[cell] { "true" } else { "false" },
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightRecord {
    pub node: String,
    pub row: String,
    pub sources: Vec<String>,
    pub weights: Vec<f64>,
    pub mse: f64,
    pub condition: f64,
    pub unique: bool,
    pub b: Vec<Vec<f64>>,
    pub b_scale: f64,
}

/// Weight and `B` records for every row that has them.
pub fn weight_records(est: &EstimateTable) -> Vec<WeightRecord> {
    est.rows
        .iter()
        .enumerate()
        .filter_map(|(f, r)| r.as_ref().map(|r| (f, r)))
        .map(|(f, r)| WeightRecord {
            node: est.node.clone(),
            row: est.layout.row_label(f),
            sources: r
                .solution
                .labels
                .iter()
                .map(|l| match l {
                    SolveRow::Row(g) => est.layout.row_label(*g),
                    SolveRow::PriorMean => "*".to_string(),
                })
                .collect(),
            weights: r.solution.weights.clone(),
            mse: r.solution.mse,
            condition: r.solution.condition,
            unique: r.solution.unique,
            b: r.b.clone(),
            b_scale: r.b_scale,
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDiagnostics {
    pub node: String,
    pub prior: &'static str,
    pub mode: CorrelationMode,
    pub clamped_cells: usize,
    pub rows_without_data: usize,
    pub non_unique_rows: usize,
    pub max_condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub nodes: Vec<NodeDiagnostics>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        RunReport {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            inputs: Vec::new(),
            seed: None,
            nodes: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &str, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            role: role.to_string(),
            path: path.to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn add_node(&mut self, counts: &CountTable, est: &EstimateTable, resolved: &ResolvedNode) {
        let solutions: Vec<_> = est.rows.iter().flatten().map(|r| &r.solution).collect();
        self.nodes.push(NodeDiagnostics {
            node: est.node.clone(),
            prior: match resolved.prior {
                NodePrior::Mdd(_) => "mdd",
                NodePrior::Dd(_) => "dd",
            },
            mode: resolved.options.mode,
            clamped_cells: est.clamped_cells(),
            rows_without_data: counts.row_totals().iter().filter(|&&n| n == 0).count(),
            non_unique_rows: solutions.iter().filter(|s| !s.unique).count(),
            max_condition: solutions.iter().map(|s| s.condition).fold(0.0, f64::max),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NET: &str = r#"{"nodes": [
        {"name": "A", "domain": ["lo", "hi"]},
        {"name": "X", "domain": ["0", "1", "2"], "parents": ["A"]}]}"#;

    #[test]
    fn prior_config_round_trips() {
        let text = r#"{"default": {"alpha": "flat", "mu": "uniform",
            "pi": {"pi0": 0.25, "pi1": 0.5, "pi2": 0.25}, "seed": 3},
            "nodes": {"X": {"alpha": 2.5, "mu": {"0": 0.2, "1": 0.3, "2": 0.5},
                "pi": {"pi0": 0.1, "piW": {"A": 0.6}, "pi2": 0.3},
                "correlation_mode": "exact", "adjust": true}}}"#;
        let cfg = PriorConfig::parse(text).unwrap();
        assert_eq!(PriorConfig::parse(&cfg.to_json()).unwrap(), cfg);
        let net = parse_network(NET).unwrap();
        let x = cfg.resolve(&net, "X").unwrap();
        assert!(x.options.adjust);
        assert_eq!(x.options.mode, CorrelationMode::Exact);
        assert_eq!(x.options.mc_seed, 3);
        match x.prior {
            NodePrior::Mdd(p) => {
                assert_eq!(p.alpha, 2.5);
                assert_eq!(p.pi_parent, vec![0.6]);
            }
            NodePrior::Dd(_) => panic!("expected MDD"),
        }
        match cfg.resolve(&net, "A").unwrap().prior {
            NodePrior::Mdd(p) => {
                assert_eq!(p.alpha, 2.0);
                assert_eq!(p.mu, vec![0.5, 0.5]);
                assert_eq!(p.pi0, 0.75);
            }
            NodePrior::Dd(_) => panic!("expected MDD"),
        }
    }

    #[test]
    fn bad_prior_blocks() {
        let net = parse_network(NET).unwrap();
        let cfg = PriorConfig::parse(r#"{"nodes": {"Q": {}}}"#).unwrap();
        assert!(matches!(cfg.check_nodes(&net), Err(Error::UnknownNode(_))));
        let cfg = PriorConfig::parse(r#"{"nodes": {"X": {"mu": {"0": 1.0}}}}"#).unwrap();
        assert!(cfg.resolve(&net, "X").is_err());
        assert!(PriorConfig::parse(r#"{"default": {"alpha": "wide"}}"#).is_err());
        assert!(PriorConfig::parse(r#"{"default": {"bogus": 1}}"#).is_err());
    }

    #[test]
    fn network_round_trip() {
        let net = parse_network(NET).unwrap();
        assert_eq!(parse_network(&network_to_json(&net)).unwrap().nodes(), net.nodes());
        assert!(matches!(
            parse_network("{\"nodes\": ["),
            Err(e) if e.kind() == crate::error::ErrorKind::Parse
        ));
    }

    #[test]
    fn dataset_round_trip_and_empty_file() {
        let net = parse_network(NET).unwrap();
        let data = read_dataset("X,A,extra\n0,lo,z\n2,hi,\n".as_bytes(), &net).unwrap();
        assert_eq!(data.len(), 2);
        let mut out = Vec::new();
        write_dataset(&mut out, &data).unwrap();
        assert_eq!(read_dataset(out.as_slice(), &net).unwrap(), data);
        let empty = read_dataset("".as_bytes(), &net).unwrap();
        assert!(empty.is_empty());
        assert!(matches!(
            read_dataset("A,X\nlo\n".as_bytes(), &net),
            Err(Error::RecordWidth { record: 1, .. })
        ));
    }
}
