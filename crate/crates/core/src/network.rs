//! Binary relational data as an adjacency matrix with an undefined diagonal.
//!
//! Entry `(i, j)` is 1 when node `i` sends a tie to node `j`. Self-ties do
//! not exist: the diagonal holds a sentinel that every accessor and
//! statistic skips.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};

const UNDEFINED: u8 = u8::MAX;

const MANIFEST_MAGIC: &str = "# ame-network v1";

/// Square binary adjacency matrix over labelled nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectedNetwork {
    n: usize,
    adjacency: Vec<u8>,
    node_ids: Vec<String>,
    symmetric: bool,
}

impl DirectedNetwork {
    /// Builds a network from labelled edges `(source, target)` given as node
    /// indices. Duplicate edges are merged. When `symmetric` is set every
    /// edge is stored in both directions.
    pub fn from_edges(
        node_ids: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        symmetric: bool,
    ) -> Result<Self> {
        let mut net = Self::empty(node_ids, symmetric)?;
        for (i, j) in edges {
            if i >= net.n || j >= net.n {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    n: net.n,
                });
            }
            if i == j {
                return Err(Error::Network(format!(
                    "self-tie on node {:?}",
                    net.node_ids[i]
                )));
            }
            net.adjacency[i * net.n + j] = 1;
            if symmetric {
                net.adjacency[j * net.n + i] = 1;
            }
        }
        Ok(net)
    }

    /// Builds a network by evaluating `tie(i, j)` on every off-diagonal pair.
    /// The result must be symmetric when `symmetric` is requested.
    pub fn from_fn(
        node_ids: Vec<String>,
        symmetric: bool,
        mut tie: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut net = Self::empty(node_ids, symmetric)?;
        let n = net.n;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    net.adjacency[i * n + j] = u8::from(tie(i, j));
                }
            }
        }
        if symmetric && !net.is_structurally_symmetric() {
            return Err(Error::Network(
                "symmetric flag set on an asymmetric adjacency".into(),
            ));
        }
        Ok(net)
    }

    fn empty(node_ids: Vec<String>, symmetric: bool) -> Result<Self> {
        let n = node_ids.len();
        if n < 2 {
            return Err(Error::Network(format!("need at least 2 nodes, got {n}")));
        }
        let mut seen = HashMap::with_capacity(n);
        for (k, id) in node_ids.iter().enumerate() {
            if let Some(prev) = seen.insert(id.as_str(), k) {
                return Err(Error::Network(format!(
                    "duplicate node id {id:?} at positions {prev} and {k}"
                )));
            }
        }
        let mut adjacency = vec![0u8; n * n];
        for i in 0..n {
            adjacency[i * n + i] = UNDEFINED;
        }
        Ok(Self {
            n,
            adjacency,
            node_ids,
            symmetric,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|x| x == id)
    }

    /// Tie value, or `None` on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> Option<bool> {
        match self.adjacency[i * self.n + j] {
            UNDEFINED => None,
            v => Some(v == 1),
        }
    }

    /// Tie value for an off-diagonal pair. Callers guarantee `i != j`.
    #[inline]
    pub fn tie(&self, i: usize, j: usize) -> bool {
        debug_assert!(i != j);
        self.adjacency[i * self.n + j] == 1
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.n {
            Err(Error::IndexOutOfRange { index: i, n: self.n })
        } else {
            Ok(())
        }
    }

    /// Number of distinct nodes `i` sends a tie to.
    pub fn out_degree(&self, i: usize) -> Result<usize> {
        self.check(i)?;
        Ok((0..self.n).filter(|&j| j != i && self.tie(i, j)).count())
    }

    /// Number of distinct nodes sending a tie to `j`.
    pub fn in_degree(&self, j: usize) -> Result<usize> {
        self.check(j)?;
        Ok((0..self.n).filter(|&i| i != j && self.tie(i, j)).count())
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.out_degree(i).unwrap()).collect()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        (0..self.n).map(|j| self.in_degree(j).unwrap()).collect()
    }

    /// Number of ordered pairs with a tie.
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&v| v == 1).count()
    }

    /// Fraction of ordered off-diagonal pairs carrying a tie.
    pub fn density(&self) -> f64 {
        self.edge_count() as f64 / (self.n * (self.n - 1)) as f64
    }

    /// Number of unordered pairs tied in both directions.
    pub fn mutual_dyads(&self) -> usize {
        let mut count = 0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.tie(i, j) && self.tie(j, i) {
                    count += 1;
                }
            }
        }
        count
    }

    /// Number of unordered pairs with at least one tie.
    pub fn linked_dyads(&self) -> usize {
        let mut count = 0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.tie(i, j) || self.tie(j, i) {
                    count += 1;
                }
            }
        }
        count
    }

    fn is_structurally_symmetric(&self) -> bool {
        (0..self.n).all(|i| ((i + 1)..self.n).all(|j| self.tie(i, j) == self.tie(j, i)))
    }

    /// Undirected version: a tie in either direction becomes a tie in both.
    pub fn symmetrize(&self) -> Self {
        let n = self.n;
        let mut out = self.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = u8::from(self.tie(i, j) || self.tie(j, i));
                out.adjacency[i * n + j] = v;
                out.adjacency[j * n + i] = v;
            }
        }
        out.symmetric = true;
        out
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut out = self.clone();
        for i in 0..n {
            for j in 0..n {
                out.adjacency[i * n + j] = self.adjacency[j * n + i];
            }
        }
        out
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n;
        if perm.len() != n {
            return Err(Error::Dimension(format!(
                "permutation of length {} for {n} nodes",
                perm.len()
            )));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Input("not a permutation".into()));
            }
        }
        let node_ids = perm.iter().map(|&p| self.node_ids[p].clone()).collect();
        let mut out = Self::empty(node_ids, self.symmetric)?;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    out.adjacency[i * n + j] = self.adjacency[perm[i] * n + perm[j]];
                }
            }
        }
        Ok(out)
    }

    /// Dense 0/1 matrix with `NaN` on the diagonal.
    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| match self.get(i, j) {
            None => f64::NAN,
            Some(true) => 1.0,
            Some(false) => 0.0,
        })
    }

    /// Edges as `(source, target)` index pairs in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n;
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.tie(i, j))
            .collect()
    }

    /// Writes the node manifest: a header, the symmetry flag, then one node
    /// id per line in index order.
    pub fn write_manifest<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "{MANIFEST_MAGIC}").unwrap();
        writeln!(out, "# symmetric: {}", self.symmetric).unwrap();
        for id in &self.node_ids {
            validate_id(id)?;
            writeln!(out, "{id}").unwrap();
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Writes `source_id<TAB>target_id` lines in row-major order.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = String::new();
        for (i, j) in self.edges() {
            writeln!(out, "{}\t{}", self.node_ids[i], self.node_ids[j]).unwrap();
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Reads a network back from its manifest and edge list.
    pub fn read<M: Read, E: Read>(manifest: M, edges: E) -> Result<Self> {
        let mut lines = BufReader::new(manifest).lines();
        match lines.next() {
            Some(Ok(l)) if l == MANIFEST_MAGIC => {}
            _ => return Err(Error::Network("missing node manifest header".into())),
        }
        let symmetric = match lines.next() {
            Some(Ok(l)) => match l.strip_prefix("# symmetric: ") {
                Some("true") => true,
                Some("false") => false,
                _ => return Err(Error::Network(format!("bad symmetry line {l:?}"))),
            },
            _ => return Err(Error::Network("missing symmetry line".into())),
        };
        let mut node_ids = Vec::new();
        for line in lines {
            let line = line?;
            if !line.is_empty() {
                node_ids.push(line);
            }
        }
        let index: HashMap<&str, usize> = node_ids
            .iter()
            .enumerate()
            .map(|(k, s)| (s.as_str(), k))
            .collect();
        let mut pairs = Vec::new();
        for (lineno, line) in BufReader::new(edges).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (s, t) = line.split_once('\t').ok_or_else(|| Error::Schema {
                line: lineno as u64 + 1,
                message: "expected source<TAB>target".into(),
            })?;
            let lookup = |id: &str| {
                index.get(id).copied().ok_or_else(|| Error::Schema {
                    line: lineno as u64 + 1,
                    message: format!("unknown node id {id:?}"),
                })
            };
            pairs.push((lookup(s)?, lookup(t)?));
        }
        let net = Self::from_edges(node_ids.clone(), pairs, false)?;
        if symmetric && !net.is_structurally_symmetric() {
            return Err(Error::Network(
                "manifest marks the network symmetric but the edge list is not".into(),
            ));
        }
        Ok(Self { symmetric, ..net })
    }
}

fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) || id.starts_with('#') {
        return Err(Error::Network(format!(
            "node id {id:?} cannot be serialized"
        )));
    }
    Ok(())
}
