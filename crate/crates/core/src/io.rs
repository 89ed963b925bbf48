//! JSON formats for algebras, elements, projections, measures, Kraus maps and
//! trees. Complex numbers are `[re, im]` pairs; matrices are lists of rows.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::algebra::{Algebra, Element};
use crate::cpmaps::KrausMap;
use crate::linalg::{CMat, CVec, C64};
use crate::measure::{OperatorMap, QuantumMeasure, TabulatedMeasure};
use crate::projection::Projection;
use crate::pvariation::OrthoTree;
use crate::{Error, Result};

pub type ComplexJson = [f64; 2];

fn cj(z: C64) -> ComplexJson {
    [z.re, z.im]
}

fn jc(z: &ComplexJson) -> C64 {
    C64::new(z[0], z[1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatrixJson(pub Vec<Vec<ComplexJson>>);

impl From<&CMat> for MatrixJson {
    fn from(m: &CMat) -> Self {
        MatrixJson((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| cj(m[(i, j)])).collect()).collect())
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<CMat> {
        let rows = self.0.len();
        let cols = self.0.first().map_or(0, |r| r.len());
        if self.0.iter().any(|r| r.len() != cols) {
            return Err(Error::Parse("ragged matrix rows".into()));
        }
        Ok(CMat::from_fn(rows, cols, |i, j| jc(&self.0[i][j])))
    }

    pub fn to_matrix_sized(&self, rows: usize, cols: usize) -> Result<CMat> {
        let m = self.to_matrix()?;
        if m.shape() != (rows, cols) && !(rows * cols == 0 && m.is_empty()) {
            return Err(Error::Parse(format!(
                "expected a {rows}x{cols} matrix, found {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(if m.is_empty() { CMat::zeros(rows, cols) } else { m })
    }
}

pub fn vector_json(v: &CVec) -> Vec<ComplexJson> {
    v.iter().map(|z| cj(*z)).collect()
}

pub fn vector_from_json(v: &[ComplexJson]) -> CVec {
    CVec::from_iterator(v.len(), v.iter().map(jc))
}

/// Each block flattened row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementJson {
    pub blocks: Vec<Vec<ComplexJson>>,
}

impl From<&Element> for ElementJson {
    fn from(e: &Element) -> Self {
        ElementJson {
            blocks: e
                .blocks()
                .iter()
                .map(|b| {
                    let n = b.nrows();
                    (0..n * n).map(|k| cj(b[(k / n, k % n)])).collect()
                })
                .collect(),
        }
    }
}

impl ElementJson {
    pub fn to_element(&self, alg: &Algebra) -> Result<Element> {
        if self.blocks.len() != alg.num_blocks() {
            return Err(Error::Parse(format!(
                "element has {} blocks, algebra has {}",
                self.blocks.len(),
                alg.num_blocks()
            )));
        }
        let mut flat = Vec::with_capacity(alg.total_dim());
        for (b, &n) in self.blocks.iter().zip(alg.blocks()) {
            if b.len() != n * n {
                return Err(Error::Parse(format!("block of size {n} needs {} entries", n * n)));
            }
            flat.extend(b.iter().map(jc));
        }
        alg.unflatten(&flat)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionJson {
    pub blocks: Vec<Vec<ComplexJson>>,
    pub rank: usize,
}

impl From<&Projection> for ProjectionJson {
    fn from(p: &Projection) -> Self {
        ProjectionJson {
            blocks: ElementJson::from(p.element()).blocks,
            rank: p.rank(),
        }
    }
}

impl ProjectionJson {
    /// Validates the element as a projection with the stated rank.
    pub fn to_projection(&self, alg: &Algebra) -> Result<Projection> {
        let e = ElementJson {
            blocks: self.blocks.clone(),
        }
        .to_element(alg)?;
        let p = Projection::new(alg, e)?;
        if p.rank() != self.rank {
            return Err(Error::Parse(format!("stated rank {} but trace gives {}", self.rank, p.rank())));
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrausJson {
    pub n: usize,
    pub d: usize,
    pub kraus: Vec<MatrixJson>,
}

impl From<&KrausMap> for KrausJson {
    fn from(k: &KrausMap) -> Self {
        KrausJson {
            n: k.n(),
            d: k.d(),
            kraus: k.kraus().iter().map(MatrixJson::from).collect(),
        }
    }
}

impl KrausJson {
    pub fn to_kraus(&self) -> Result<KrausMap> {
        let ks = self
            .kraus
            .iter()
            .map(|m| m.to_matrix_sized(self.d, self.n))
            .collect::<Result<Vec<_>>>()?;
        KrausMap::new(self.n, self.d, ks)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairJson {
    pub projection: ProjectionJson,
    pub value: MatrixJson,
}

/// A measure file. Linear maps list `Ū(E)` for the matrix units in
/// flattening order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureJson {
    LinearMap {
        algebra: Algebra,
        d: usize,
        units: Vec<MatrixJson>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kraus: Option<KrausJson>,
    },
    Tabulated {
        algebra: Algebra,
        d: usize,
        pairs: Vec<PairJson>,
    },
}

/// A parsed measure file.
#[derive(Clone, Debug)]
pub struct MeasureFile {
    pub measure: QuantumMeasure,
    /// CP representative, when the file came from one.
    pub kraus: Option<KrausMap>,
}

impl MeasureFile {
    pub fn to_json(&self) -> MeasureJson {
        match &self.measure {
            QuantumMeasure::Linear(m) => MeasureJson::LinearMap {
                algebra: m.algebra().clone(),
                d: m.d(),
                units: m.units().iter().map(MatrixJson::from).collect(),
                kraus: self.kraus.as_ref().map(KrausJson::from),
            },
            QuantumMeasure::Tabulated(t) => MeasureJson::Tabulated {
                algebra: t.algebra().clone(),
                d: t.d(),
                pairs: t
                    .pairs()
                    .iter()
                    .map(|(p, v)| PairJson {
                        projection: p.into(),
                        value: v.into(),
                    })
                    .collect(),
            },
        }
    }

    pub fn from_json(j: &MeasureJson) -> Result<Self> {
        match j {
            MeasureJson::LinearMap { algebra, d, units, kraus } => {
                let alg = Algebra::new(algebra.blocks().to_vec())?;
                let units = units
                    .iter()
                    .map(|u| u.to_matrix_sized(*d, *d))
                    .collect::<Result<Vec<_>>>()?;
                let map = OperatorMap::new(alg, *d, units)?;
                let kraus = kraus.as_ref().map(|k| k.to_kraus()).transpose()?;
                if let Some(k) = &kraus {
                    if k.d() != *d || Algebra::full(k.n()) != *map.algebra() {
                        return Err(Error::Parse("Kraus data does not match the measure".into()));
                    }
                    let dist = k.to_operator_map().unit_distance(&map);
                    if dist > 1e-9 {
                        return Err(Error::Parse(format!("Kraus data disagrees with units by {dist:.2e}")));
                    }
                }
                Ok(MeasureFile {
                    measure: QuantumMeasure::Linear(map),
                    kraus,
                })
            }
            MeasureJson::Tabulated { algebra, d, pairs } => {
                let alg = Algebra::new(algebra.blocks().to_vec())?;
                let pairs = pairs
                    .iter()
                    .map(|pj| Ok((pj.projection.to_projection(&alg)?, pj.value.to_matrix_sized(*d, *d)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(MeasureFile {
                    measure: QuantumMeasure::Tabulated(TabulatedMeasure::new(alg, *d, pairs)?),
                    kraus: None,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeJson {
    pub nodes: Vec<Vec<usize>>,
    /// Keys are node sequences joined by `.`.
    pub labels: BTreeMap<String, ProjectionJson>,
}

pub fn node_key(node: &[usize]) -> String {
    node.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(".")
}

impl From<&OrthoTree> for TreeJson {
    fn from(t: &OrthoTree) -> Self {
        let labels = t.labels();
        TreeJson {
            nodes: labels.keys().cloned().collect(),
            labels: labels.iter().map(|(k, p)| (node_key(k), p.into())).collect(),
        }
    }
}

impl TreeJson {
    pub fn to_tree(&self, alg: &Algebra) -> Result<OrthoTree> {
        let mut labels = BTreeMap::new();
        for node in &self.nodes {
            let key = node_key(node);
            let p = self
                .labels
                .get(&key)
                .ok_or_else(|| Error::Parse(format!("node {key} has no label")))?;
            labels.insert(node.clone(), p.to_projection(alg)?);
        }
        if labels.len() != self.labels.len() {
            return Err(Error::Parse("labels for nodes not listed".into()));
        }
        OrthoTree::from_labels(alg, &labels)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn to_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_pretty(value)?)?;
    Ok(())
}
