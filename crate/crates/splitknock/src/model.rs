//! Core domain types: regression datasets, linear transformations on the
//! coefficients, run configuration, and sample splitting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Regression observations: design X (n x p) and response y (length n).
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                if !x[(i, j)].is_finite() {
                    return Err(Error::NonFiniteInput { row: i, col: j });
                }
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { row: i, col: 0 });
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rescales each design column by its sample l2 norm divided by sqrt(n).
    /// Off by default; column normalization is the caller's choice.
    pub fn standardized(&self) -> Dataset {
        let n = self.n() as f64;
        let mut x = self.x.clone();
        for mut col in x.column_iter_mut() {
            let scale = col.norm() / n.sqrt();
            if scale > 0.0 {
                col /= scale;
            }
        }
        Dataset {
            x,
            y: self.y.clone(),
        }
    }

    /// Row subset preserving the order of `idx` (0-based, distinct).
    pub fn restrict(&self, idx: &[usize]) -> Result<Dataset> {
        if idx.is_empty() {
            return Err(Error::InvalidIndex("empty restriction".into()));
        }
        let mut seen = vec![false; self.n()];
        for &i in idx {
            if i >= self.n() {
                return Err(Error::InvalidIndex(format!(
                    "row {} out of range for n = {}",
                    i,
                    self.n()
                )));
            }
            if seen[i] {
                return Err(Error::InvalidIndex(format!("duplicate row {i}")));
            }
            seen[i] = true;
        }
        let x = DMatrix::from_fn(idx.len(), self.p(), |r, c| self.x[(idx[r], c)]);
        let y = DVector::from_fn(idx.len(), |r, _| self.y[idx[r]]);
        Ok(Dataset { x, y })
    }

    /// Column subset of the design, preserving the order of `cols`.
    pub fn restrict_columns(&self, cols: &[usize]) -> Result<Dataset> {
        if cols.is_empty() {
            return Err(Error::InvalidIndex("empty column restriction".into()));
        }
        for &c in cols {
            if c >= self.p() {
                return Err(Error::InvalidIndex(format!(
                    "column {} out of range for p = {}",
                    c,
                    self.p()
                )));
            }
        }
        let x = DMatrix::from_fn(self.n(), cols.len(), |r, c| self.x[(r, cols[c])]);
        Ok(Dataset {
            x,
            y: self.y.clone(),
        })
    }
}

/// Construction tag for the linear transformation gamma = D beta.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransformKind {
    /// D = I_p: plain variable selection.
    Identity,
    /// Successive differences along a line: D is (p-1) x p with rows
    /// (e_i - e_{i+1})^T.
    LineDifference,
    /// One row per directed edge: +1 at the tail, -1 at the head.
    GraphDifference,
    /// Identity stacked over the line difference: (2p-1) x p.
    Stacked,
    /// Arbitrary user-supplied matrix.
    Custom,
}

/// The m x p transformation together with its construction tag. For
/// graph-difference transforms the 0-based edge list is retained; row i
/// estimates beta_tail - beta_head of edge i, so a positive directional
/// estimate means the tail coefficient is larger.
#[derive(Debug, Clone)]
pub struct LinearTransform {
    d: DMatrix<f64>,
    kind: TransformKind,
    edges: Option<Vec<(usize, usize)>>,
}

impl LinearTransform {
    pub fn identity(p: usize) -> Self {
        Self {
            d: DMatrix::identity(p, p),
            kind: TransformKind::Identity,
            edges: None,
        }
    }

    pub fn line_difference(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::InvalidParameter(
                "line difference needs p >= 2".into(),
            ));
        }
        let mut d = DMatrix::zeros(p - 1, p);
        for i in 0..p - 1 {
            d[(i, i)] = 1.0;
            d[(i, i + 1)] = -1.0;
        }
        Ok(Self {
            d,
            kind: TransformKind::LineDifference,
            edges: None,
        })
    }

    /// Edges are 0-based (tail, head) pairs; duplicates and out-of-range
    /// indices are rejected.
    pub fn graph_difference(p: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::InvalidEdge("empty edge list".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut d = DMatrix::zeros(edges.len(), p);
        for (row, &(tail, head)) in edges.iter().enumerate() {
            if tail >= p || head >= p {
                return Err(Error::InvalidEdge(format!(
                    "edge ({tail}, {head}) out of range for p = {p}"
                )));
            }
            if tail == head {
                return Err(Error::InvalidEdge(format!("self loop at {tail}")));
            }
            if !seen.insert((tail, head)) {
                return Err(Error::InvalidEdge(format!("duplicate edge ({tail}, {head})")));
            }
            d[(row, tail)] = 1.0;
            d[(row, head)] = -1.0;
        }
        Ok(Self {
            d,
            kind: TransformKind::GraphDifference,
            edges: Some(edges.to_vec()),
        })
    }

    /// Identity rows over line-difference rows, (2p-1) x p.
    pub fn stacked(p: usize) -> Result<Self> {
        let line = Self::line_difference(p)?;
        let mut d = DMatrix::zeros(2 * p - 1, p);
        d.view_mut((0, 0), (p, p)).copy_from(&DMatrix::identity(p, p));
        d.view_mut((p, 0), (p - 1, p)).copy_from(&line.d);
        Ok(Self {
            d,
            kind: TransformKind::Stacked,
            edges: None,
        })
    }

    pub fn custom(d: DMatrix<f64>) -> Result<Self> {
        for j in 0..d.ncols() {
            for i in 0..d.nrows() {
                if !d[(i, j)].is_finite() {
                    return Err(Error::NonFiniteInput { row: i, col: j });
                }
            }
        }
        Ok(Self {
            d,
            kind: TransformKind::Custom,
            edges: None,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn kind(&self) -> &TransformKind {
        &self.kind
    }

    pub fn edges(&self) -> Option<&[(usize, usize)]> {
        self.edges.as_deref()
    }

    pub fn m(&self) -> usize {
        self.d.nrows()
    }

    pub fn p(&self) -> usize {
        self.d.ncols()
    }

    pub fn apply(&self, beta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m());
        self.apply_into(beta, &mut out);
        out
    }

    pub fn apply_transpose(&self, gamma: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.p());
        self.apply_transpose_into(gamma, &mut out);
        out
    }

    /// out = D beta, exploiting the difference structure when the kind
    /// allows it (rows with at most two nonzeros).
    pub fn apply_into(&self, beta: &DVector<f64>, out: &mut DVector<f64>) {
        let p = self.p();
        match self.kind {
            TransformKind::Identity => out.copy_from(beta),
            TransformKind::LineDifference => {
                for i in 0..p - 1 {
                    out[i] = beta[i] - beta[i + 1];
                }
            }
            TransformKind::Stacked => {
                for i in 0..p {
                    out[i] = beta[i];
                }
                for i in 0..p - 1 {
                    out[p + i] = beta[i] - beta[i + 1];
                }
            }
            TransformKind::GraphDifference => {
                let edges = self.edges.as_ref().expect("graph transform keeps edges");
                for (row, &(tail, head)) in edges.iter().enumerate() {
                    out[row] = beta[tail] - beta[head];
                }
            }
            TransformKind::Custom => out.gemv(1.0, &self.d, beta, 0.0),
        }
    }

    /// out = D^T gamma.
    pub fn apply_transpose_into(&self, gamma: &DVector<f64>, out: &mut DVector<f64>) {
        let p = self.p();
        match self.kind {
            TransformKind::Identity => out.copy_from(gamma),
            TransformKind::LineDifference => {
                out.fill(0.0);
                for i in 0..p - 1 {
                    out[i] += gamma[i];
                    out[i + 1] -= gamma[i];
                }
            }
            TransformKind::Stacked => {
                for i in 0..p {
                    out[i] = gamma[i];
                }
                for i in 0..p - 1 {
                    out[i] += gamma[p + i];
                    out[i + 1] -= gamma[p + i];
                }
            }
            TransformKind::GraphDifference => {
                out.fill(0.0);
                let edges = self.edges.as_ref().expect("graph transform keeps edges");
                for (row, &(tail, head)) in edges.iter().enumerate() {
                    out[tail] += gamma[row];
                    out[head] -= gamma[row];
                }
            }
            TransformKind::Custom => out.gemv_tr(1.0, &self.d, gamma, 0.0),
        }
    }

    /// Row/column submatrix as a custom transform (used after screening).
    pub fn restricted(&self, rows: &[usize], cols: &[usize]) -> Result<LinearTransform> {
        for &r in rows {
            if r >= self.m() {
                return Err(Error::InvalidIndex(format!("transform row {r} out of range")));
            }
        }
        for &c in cols {
            if c >= self.p() {
                return Err(Error::InvalidIndex(format!(
                    "transform column {c} out of range"
                )));
            }
        }
        let d = DMatrix::from_fn(rows.len(), cols.len(), |r, c| self.d[(rows[r], cols[c])]);
        LinearTransform::custom(d)
    }
}

/// How to choose the s vector of the copy construction. Only the
/// equi-correlated rule is implemented; the enum leaves room for an SDP
/// based choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SMethod {
    #[default]
    Equicorrelated,
}

/// How the rows are divided into the two halves of the procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Uniformly random partition driven by the seed.
    #[default]
    Random,
    /// First n1 rows; deterministic, for regression tests.
    FirstN1,
}

/// Tuning parameters for one split knockoff run.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    /// Variable-splitting strength (Euclidean gap penalty is 1/(2 nu)).
    pub nu: f64,
    /// Nominal directional FDR level in (0, 1).
    pub q: f64,
    /// Knockoff+ thresholding (adds 1 to the negative count).
    pub plus: bool,
    /// Rows assigned to the first half.
    pub n1: usize,
    /// Number of points on the regularization grid.
    pub lambda_count: usize,
    /// Ratio of the smallest to the largest grid value.
    pub lambda_min_ratio: f64,
    /// Seed for the sample split (and anything else randomized downstream).
    pub seed: u64,
    pub s_method: SMethod,
    /// Bisection steps used to refine each significance bracket.
    pub refine_bisection_steps: usize,
    pub split_mode: SplitMode,
    /// Run the filter even when some path points did not converge.
    pub allow_nonconverged: bool,
}

impl SplitConfig {
    pub fn new(nu: f64, q: f64, n1: usize) -> Self {
        Self {
            nu,
            q,
            plus: false,
            n1,
            lambda_count: 200,
            lambda_min_ratio: 1e-3,
            seed: 0,
            s_method: SMethod::Equicorrelated,
            refine_bisection_steps: 30,
            split_mode: SplitMode::Random,
            allow_nonconverged: false,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "q must lie in (0, 1), got {}",
                self.q
            )));
        }
        if !(self.nu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "nu must be positive, got {}",
                self.nu
            )));
        }
        if self.n1 == 0 || self.n1 >= n {
            return Err(Error::InvalidSplit { n1: self.n1, n });
        }
        if self.lambda_count == 0 {
            return Err(Error::InvalidParameter("lambda_count must be >= 1".into()));
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda_min_ratio must lie in (0, 1), got {}",
                self.lambda_min_ratio
            )));
        }
        Ok(())
    }
}

/// Partition of the row indices {0..n-1} into the two halves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub idx1: Vec<usize>,
    pub idx2: Vec<usize>,
}

/// Uniformly random partition with |idx1| = n1, deterministic per rng seed.
pub fn split_samples(n: usize, n1: usize, rng: &mut Rng) -> Result<DataSplit> {
    if n1 == 0 || n1 >= n {
        return Err(Error::InvalidSplit { n1, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    let mut idx1: Vec<usize> = perm[..n1].to_vec();
    let mut idx2: Vec<usize> = perm[n1..].to_vec();
    idx1.sort_unstable();
    idx2.sort_unstable();
    Ok(DataSplit { idx1, idx2 })
}

/// Deterministic first-n1 partition for regression tests.
pub fn split_first(n: usize, n1: usize) -> Result<DataSplit> {
    if n1 == 0 || n1 >= n {
        return Err(Error::InvalidSplit { n1, n });
    }
    Ok(DataSplit {
        idx1: (0..n1).collect(),
        idx2: (n1..n).collect(),
    })
}
