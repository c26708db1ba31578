//! Belief-net structure, CP-table row indexing, tuple counting and sample
//! proportions.
//!
//! Rows of a CP-table are enumerated in mixed-radix order over the parent
//! domains, with the last-listed parent varying fastest. For three binary
//! parents `A, B, C` the rows are `000, 001, 010, ..., 111`.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One variable of the net: its finite domain and ordered parent list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub domain: Vec<String>,
    #[serde(default)]
    pub parents: Vec<String>,
}

impl NodeSpec {
    pub fn new<S: Into<String>>(name: S, domain: &[&str], parents: &[&str]) -> Self {
        NodeSpec {
            name: name.into(),
            domain: domain.iter().map(|s| s.to_string()).collect(),
            parents: parents.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Binary `{0,1}` node with the given parents.
    pub fn binary<S: Into<String>>(name: S, parents: &[&str]) -> Self {
        Self::new(name, &["0", "1"], parents)
    }
}

/// A validated DAG over discrete nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefNet {
    nodes: Vec<NodeSpec>,
    index: HashMap<String, usize>,
    topo: Vec<usize>,
}

/// Checks names, domains, parent references and acyclicity, in that order,
/// and returns a topological order (ties broken by declaration order).
pub fn validate_network(nodes: &[NodeSpec]) -> Result<Vec<usize>> {
    let mut index = HashMap::with_capacity(nodes.len());
    for (i, node) in nodes.iter().enumerate() {
        if index.insert(node.name.as_str(), i).is_some() {
            return Err(Error::DuplicateNode(node.name.clone()));
        }
    }
    for node in nodes {
        if node.domain.len() < 2 {
            return Err(Error::DomainTooSmall {
                node: node.name.clone(),
                size: node.domain.len(),
            });
        }
        let mut seen = HashSet::new();
        for label in &node.domain {
            if !seen.insert(label.as_str()) {
                return Err(Error::DuplicateLabel {
                    node: node.name.clone(),
                    label: label.clone(),
                });
            }
        }
    }
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    let mut indegree = vec![0usize; nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        let mut seen = HashSet::new();
        for parent in &node.parents {
            let Some(&p) = index.get(parent.as_str()) else {
                return Err(Error::UnknownParent {
                    node: node.name.clone(),
                    parent: parent.clone(),
                });
            };
            if !seen.insert(p) {
                return Err(Error::DuplicateParent {
                    node: node.name.clone(),
                    parent: parent.clone(),
                });
            }
            children[p].push(i);
            indegree[i] += 1;
        }
    }

    // Kahn's algorithm, always taking the lowest-index ready node.
    let mut ready: std::collections::BTreeSet<usize> =
        (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() < nodes.len() {
        let stuck = (0..nodes.len()).find(|&i| indegree[i] > 0).unwrap();
        return Err(Error::Cycle(nodes[stuck].name.clone()));
    }
    Ok(order)
}

impl BeliefNet {
    pub fn new(nodes: Vec<NodeSpec>) -> Result<Self> {
        let topo = validate_network(&nodes)?;
        let index = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.name.clone(), i))
            .collect();
        Ok(BeliefNet { nodes, index, topo })
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> Result<&NodeSpec> {
        self.index
            .get(name)
            .map(|&i| &self.nodes[i])
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn topological_order(&self) -> impl Iterator<Item = &NodeSpec> + '_ {
        self.topo.iter().map(move |&i| &self.nodes[i])
    }

    /// Row layout of the CP-table for `name`.
    pub fn layout(&self, name: &str) -> Result<RowLayout> {
        let node = self.node(name)?;
        let domains = node
            .parents
            .iter()
            .map(|p| self.node(p).map(|n| n.domain.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(RowLayout {
            parents: node.parents.clone(),
            domains,
        })
    }
}

/// A parent assignment `f`, one domain index per parent, in parent order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowIndex(pub Vec<usize>);

/// Mixed-radix indexing of CP-table rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLayout {
    pub parents: Vec<String>,
    pub domains: Vec<Vec<String>>,
}

impl RowLayout {
    /// Layout with synthetic parent names `W1..` and labels `0..k-1`.
    pub fn from_radices(radices: &[usize]) -> Self {
        RowLayout {
            parents: (1..=radices.len()).map(|i| format!("W{i}")).collect(),
            domains: radices
                .iter()
                .map(|&k| (0..k).map(|v| v.to_string()).collect())
                .collect(),
        }
    }

    pub fn n_parents(&self) -> usize {
        self.parents.len()
    }

    pub fn radices(&self) -> Vec<usize> {
        self.domains.iter().map(Vec::len).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.domains.iter().map(Vec::len).product()
    }

    pub fn encode(&self, f: &RowIndex) -> Result<usize> {
        if f.0.len() != self.domains.len() {
            return Err(Error::Shape(format!(
                "row assignment has {} components, expected {}",
                f.0.len(),
                self.domains.len()
            )));
        }
        let mut row = 0;
        for (&v, dom) in f.0.iter().zip(&self.domains) {
            if v >= dom.len() {
                return Err(Error::Shape(format!(
                    "value index {v} outside domain of size {}",
                    dom.len()
                )));
            }
            row = row * dom.len() + v;
        }
        Ok(row)
    }

    pub fn decode(&self, mut row: usize) -> RowIndex {
        let mut out = vec![0; self.domains.len()];
        for (slot, dom) in out.iter_mut().zip(&self.domains).rev() {
            *slot = row % dom.len();
            row /= dom.len();
        }
        RowIndex(out)
    }

    /// Number of parents on which rows `f` and `g` agree.
    pub fn agreement(&self, f: usize, g: usize) -> usize {
        let (a, b) = (self.decode(f), self.decode(g));
        a.0.iter().zip(&b.0).filter(|(x, y)| x == y).count()
    }

    /// `A=0;B=1` style label; empty for a root node.
    pub fn row_label(&self, row: usize) -> String {
        let f = self.decode(row);
        self.parents
            .iter()
            .zip(&self.domains)
            .zip(&f.0)
            .map(|((p, dom), &v)| format!("{p}={}", dom[v]))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Counts `m_{xf}` for one node, stored row-major (`row * n_values + x`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    pub node: String,
    pub values: Vec<String>,
    pub layout: RowLayout,
    counts: Vec<u64>,
}

impl CountTable {
    pub fn zeros(node: impl Into<String>, values: Vec<String>, layout: RowLayout) -> Self {
        let len = values.len() * layout.n_rows();
        CountTable {
            node: node.into(),
            values,
            layout,
            counts: vec![0; len],
        }
    }

    pub fn from_counts(
        node: impl Into<String>,
        values: Vec<String>,
        layout: RowLayout,
        counts: Vec<u64>,
    ) -> Result<Self> {
        if counts.len() != values.len() * layout.n_rows() {
            return Err(Error::Shape(format!(
                "{} counts for a {}x{} table",
                counts.len(),
                layout.n_rows(),
                values.len()
            )));
        }
        Ok(CountTable {
            node: node.into(),
            values,
            layout,
            counts,
        })
    }

    /// Binary-child table from per-row `(n_f, m_{1f})` pairs.
    pub fn binary_from_totals(
        node: impl Into<String>,
        layout: RowLayout,
        rows: &[(u64, u64)],
    ) -> Result<Self> {
        let mut counts = Vec::with_capacity(rows.len() * 2);
        for &(n, m1) in rows {
            if m1 > n {
                return Err(Error::Shape(format!("m = {m1} exceeds n = {n}")));
            }
            counts.extend([n - m1, m1]);
        }
        Self::from_counts(node, vec!["0".into(), "1".into()], layout, counts)
    }

    pub fn n_values(&self) -> usize {
        self.values.len()
    }

    pub fn n_rows(&self) -> usize {
        self.layout.n_rows()
    }

    pub fn m(&self, row: usize, x: usize) -> u64 {
        self.counts[row * self.values.len() + x]
    }

    pub fn row(&self, row: usize) -> &[u64] {
        let k = self.values.len();
        &self.counts[row * k..(row + 1) * k]
    }

    pub fn n(&self, row: usize) -> u64 {
        self.row(row).iter().sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        (0..self.n_rows()).map(|r| self.n(r)).collect()
    }

    /// Column totals `m_{x.}`.
    pub fn column_totals(&self) -> Vec<u64> {
        let mut out = vec![0; self.n_values()];
        for row in self.counts.chunks(self.n_values()) {
            for (o, &c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn raw(&self) -> &[u64] {
        &self.counts
    }

    pub fn increment(&mut self, row: usize, x: usize) {
        let k = self.values.len();
        self.counts[row * k + x] += 1;
    }
}

/// Complete-tuple data keyed by column name. Values are matched against
/// domains as exact strings; an empty cell is a missing value.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl Dataset {
    pub fn new(columns: Vec<String>) -> Self {
        Dataset {
            columns,
            records: Vec::new(),
        }
    }

    pub fn push<S: AsRef<str>>(&mut self, record: &[S]) {
        self.records
            .push(record.iter().map(|s| s.as_ref().to_string()).collect());
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Counts every node's `(x, f)` cells. Tables are returned in node
/// declaration order. Columns not named in the net are ignored.
pub fn count_tuples(net: &BeliefNet, data: &Dataset) -> Result<Vec<CountTable>> {
    let column_of: HashMap<&str, usize> = data
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut node_col = Vec::with_capacity(net.nodes().len());
    let mut lookup: Vec<HashMap<&str, usize>> = Vec::with_capacity(net.nodes().len());
    for node in net.nodes() {
        let col = *column_of
            .get(node.name.as_str())
            .ok_or_else(|| Error::MissingColumn(node.name.clone()))?;
        node_col.push(col);
        lookup.push(
            node.domain
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i))
                .collect(),
        );
    }

    let parent_ids: Vec<Vec<usize>> = net
        .nodes()
        .iter()
        .map(|n| n.parents.iter().map(|p| net.node_index(p).unwrap()).collect())
        .collect();
    let mut tables = net
        .nodes()
        .iter()
        .map(|n| Ok(CountTable::zeros(&n.name, n.domain.clone(), net.layout(&n.name)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut encoded = vec![0usize; net.nodes().len()];
    for (r, record) in data.records.iter().enumerate() {
        if record.len() != data.columns.len() {
            return Err(Error::RecordWidth {
                record: r + 1,
                expected: data.columns.len(),
                found: record.len(),
            });
        }
        for (v, node) in net.nodes().iter().enumerate() {
            let cell = record[node_col[v]].as_str();
            if cell.is_empty() {
                return Err(Error::MissingValue {
                    record: r + 1,
                    column: node.name.clone(),
                });
            }
            encoded[v] = *lookup[v].get(cell).ok_or_else(|| Error::UnknownLabel {
                record: r + 1,
                column: node.name.clone(),
                label: cell.to_string(),
            })?;
        }
        for (v, table) in tables.iter_mut().enumerate() {
            let mut row = 0;
            for &p in &parent_ids[v] {
                row = row * net.nodes()[p].domain.len() + encoded[p];
            }
            table.increment(row, encoded[v]);
        }
    }
    Ok(tables)
}

/// Sample proportions `p_{x|f} = m_{xf}/n_f`; rows with `n_f = 0` are
/// inactive and carry no proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionTable {
    pub node: String,
    pub values: Vec<String>,
    pub layout: RowLayout,
    pub n: Vec<u64>,
    rows: Vec<Option<Vec<f64>>>,
}

impl ProportionTable {
    pub fn p(&self, row: usize) -> Option<&[f64]> {
        self.rows[row].as_deref()
    }

    pub fn active_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&r| self.rows[r].is_some()).collect()
    }

    pub fn n_values(&self) -> usize {
        self.values.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

pub fn proportions(counts: &CountTable) -> ProportionTable {
    let rows = (0..counts.n_rows())
        .map(|r| {
            let n = counts.n(r);
            (n > 0).then(|| counts.row(r).iter().map(|&m| m as f64 / n as f64).collect())
        })
        .collect();
    ProportionTable {
        node: counts.node.clone(),
        values: counts.values.clone(),
        layout: counts.layout.clone(),
        n: counts.row_totals(),
        rows,
    }
}
