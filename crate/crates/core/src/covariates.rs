//! Per-node design matrix shared by the row and column roles.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::format::fmt_real;

/// Nodal covariates. Row `k` of `values` belongs to `node_ids[k]`; column
/// `c` is named `columns[c]`. The same table supplies both the sender and
/// the receiver covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateTable {
    node_ids: Vec<String>,
    columns: Vec<String>,
    values: DMatrix<f64>,
}

impl CovariateTable {
    pub fn new(node_ids: Vec<String>, columns: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != node_ids.len() || values.ncols() != columns.len() {
            return Err(Error::Dimension(format!(
                "covariate matrix is {}x{} but there are {} nodes and {} columns",
                values.nrows(),
                values.ncols(),
                node_ids.len(),
                columns.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("covariates must be finite".into()));
        }
        Ok(Self {
            node_ids,
            columns,
            values,
        })
    }

    /// Table with no covariate columns.
    pub fn empty(node_ids: Vec<String>) -> Self {
        let n = node_ids.len();
        Self {
            node_ids,
            columns: Vec::new(),
            values: DMatrix::zeros(n, 0),
        }
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|x| x == name)?;
        Some(self.values.column(c).iter().copied().collect())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["node_id".to_string()];
        header.extend(self.columns.iter().cloned());
        out.write_record(&header)?;
        for (k, id) in self.node_ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.values.row(k).iter().map(|&v| fmt_real(v)));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("node_id") {
            return Err(Error::Schema {
                line: 1,
                message: "first column must be node_id".into(),
            });
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut node_ids = Vec::new();
        let mut flat = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            node_ids.push(rec[0].to_string());
            for field in rec.iter().skip(1) {
                let v: f64 = field.parse().map_err(|_| Error::Schema {
                    line,
                    message: format!("not a number: {field:?}"),
                })?;
                flat.push(v);
            }
        }
        let values = DMatrix::from_row_slice(node_ids.len(), columns.len(), &flat);
        Self::new(node_ids, columns, values)
    }

    /// Reorders rows to follow `order`, which must be a permutation of the
    /// table's node ids.
    pub fn aligned_to(&self, order: &[String]) -> Result<Self> {
        if order.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} covariate rows for {} network nodes",
                self.n(),
                order.len()
            )));
        }
        let mut rows = Vec::with_capacity(order.len());
        for id in order {
            let k = self
                .node_ids
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| Error::Input(format!("no covariates for node {id:?}")))?;
            rows.push(k);
        }
        let values = self.values.select_rows(&rows);
        Self::new(order.to_vec(), self.columns.clone(), values)
    }
}
