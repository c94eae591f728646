//! Ensembles, grids and the sample statistics computed from them.
//!
//! The spectral estimates keep only the diagonal of `F C Fᵀ`: for a variable
//! `u` with members `u_k` and `û_k = F u_k`,
//!
//! ```text
//! D̂_ii = 1/(N-1) Σ_k (û_ik - mean_k û_ik)²
//! ```
//!
//! Cross-variable diagonals first interpolate one variable onto the grid of
//! the other with an [`InterpolationOperator`].

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg::{anomalies, inf_norm, paired_row_covariance, row_mean, transform_columns};
use crate::transforms::OrthonormalTransform;

/// Cell-centred nodes on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
}

impl Grid {
    /// `x_i = (i - 1/2)/n` for `i = 1..n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGrid);
        }
        let nodes = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        Ok(Self { nodes })
    }

    /// Arbitrary strictly increasing nodes.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid);
        }
        Ok(Self { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Index of the node closest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let mut best = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            if (node - x).abs() < (self.nodes[best] - x).abs() {
                best = i;
            }
        }
        best
    }
}

/// One gridded variable of an ensemble, members stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    name: String,
    grid: Grid,
    members: DMatrix<f64>,
}

impl Variable {
    pub fn new(name: impl Into<String>, grid: Grid, members: DMatrix<f64>) -> Result<Self> {
        check_len(grid.len(), members.nrows())?;
        Ok(Self {
            name: name.into(),
            grid,
            members,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }
}

/// `N` model states over one or more gridded variables.
///
/// Construction accepts any `N ≥ 1`; statistics that need a spread report
/// [`Error::EnsembleTooSmall`] when `N < 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    variables: Vec<Variable>,
    member_count: usize,
}

impl Ensemble {
    pub fn new(variables: Vec<Variable>) -> Result<Self> {
        let first = variables.first().ok_or(Error::UnknownVariable(0))?;
        let member_count = first.members.ncols();
        for v in &variables {
            check_len(member_count, v.members.ncols())?;
        }
        if member_count == 0 {
            return Err(Error::EnsembleTooSmall(0));
        }
        Ok(Self {
            variables,
            member_count,
        })
    }

    pub fn single(grid: Grid, members: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![Variable::new("u", grid, members)?])
    }

    pub fn member_count(&self) -> usize {
        self.member_count
    }

    pub fn variable_count(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, index: usize) -> Result<&Variable> {
        self.variables
            .get(index)
            .ok_or(Error::UnknownVariable(index))
    }

    pub fn members(&self, index: usize) -> Result<&DMatrix<f64>> {
        Ok(&self.variable(index)?.members)
    }

    /// Total state dimension over all variables.
    pub fn state_dim(&self) -> usize {
        self.variables.iter().map(|v| v.grid.len()).sum()
    }

    /// Row offset of each variable in the stacked state.
    pub fn offsets(&self) -> Vec<usize> {
        self.variables
            .iter()
            .scan(0, |acc, v| {
                let start = *acc;
                *acc += v.grid.len();
                Some(start)
            })
            .collect()
    }

    /// All variables stacked into one `state_dim × N` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.state_dim(), self.member_count);
        for (v, offset) in self.variables.iter().zip(self.offsets()) {
            out.rows_mut(offset, v.grid.len()).copy_from(&v.members);
        }
        out
    }

    /// An ensemble with this layout and the given stacked members.
    pub fn with_stacked(&self, stacked: &DMatrix<f64>) -> Result<Self> {
        check_len(self.state_dim(), stacked.nrows())?;
        check_len(self.member_count, stacked.ncols())?;
        let variables = self
            .variables
            .iter()
            .zip(self.offsets())
            .map(|(v, offset)| Variable {
                name: v.name.clone(),
                grid: v.grid.clone(),
                members: stacked.rows(offset, v.grid.len()).into_owned(),
            })
            .collect();
        Ok(Self {
            variables,
            member_count: self.member_count,
        })
    }

    /// The first `count` members.
    pub fn leading_members(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.member_count {
            return Err(Error::DimensionMismatch {
                expected: self.member_count,
                actual: count,
            });
        }
        let variables = self
            .variables
            .iter()
            .map(|v| Variable {
                name: v.name.clone(),
                grid: v.grid.clone(),
                members: v.members.columns(0, count).into_owned(),
            })
            .collect();
        Ok(Self {
            variables,
            member_count: count,
        })
    }

    pub(crate) fn require_spread(&self) -> Result<()> {
        if self.member_count < 2 {
            Err(Error::EnsembleTooSmall(self.member_count))
        } else {
            Ok(())
        }
    }
}

pub fn sample_mean(ens: &Ensemble, var: usize) -> Result<DVector<f64>> {
    Ok(row_mean(ens.members(var)?))
}

/// `C = 1/(N-1) Σ_k (a_k - ā)(b_k - b̄)ᵀ`.
pub fn sample_covariance(ens: &Ensemble, var_a: usize, var_b: usize) -> Result<DMatrix<f64>> {
    ens.require_spread()?;
    let a = anomalies(ens.members(var_a)?);
    let b = anomalies(ens.members(var_b)?);
    Ok(a * b.transpose() / (ens.member_count() as f64 - 1.0))
}

/// Nonnegative diagonal of `F C Fᵀ` for one variable.
#[derive(Debug, Clone)]
pub struct DiagonalSpectralCovariance {
    transform: OrthonormalTransform,
    diag: Vec<f64>,
}

impl DiagonalSpectralCovariance {
    pub fn new(transform: OrthonormalTransform, diag: Vec<f64>) -> Result<Self> {
        check_len(transform.size(), diag.len())?;
        if let Some(v) = diag.iter().find(|v| v.is_nan() || **v < 0.0) {
            return Err(Error::NegativeVariance(*v));
        }
        Ok(Self { transform, diag })
    }

    pub fn transform(&self) -> &OrthonormalTransform {
        &self.transform
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// `Fᵀ Diag(d) F`.
    pub fn reconstruct_dense(&self) -> DMatrix<f64> {
        reconstruct_dense(&self.transform, &self.diag)
    }
}

/// Signed diagonal of `F C(P u, v) Fᵀ`.
#[derive(Debug, Clone)]
pub struct CrossSpectralDiagonal {
    transform: OrthonormalTransform,
    diag: Vec<f64>,
    projection: InterpolationOperator,
}

impl CrossSpectralDiagonal {
    pub fn transform(&self) -> &OrthonormalTransform {
        &self.transform
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn projection(&self) -> &InterpolationOperator {
        &self.projection
    }

    /// `Fᵀ Diag(d) F` on the target grid.
    pub fn reconstruct_dense(&self) -> DMatrix<f64> {
        reconstruct_dense(&self.transform, &self.diag)
    }

    /// Approximate `C(u, v) ≈ P† Fᵀ Diag(d) F`, source rows by target columns.
    pub fn reconstruct_cross_covariance(&self) -> DMatrix<f64> {
        self.projection.left_inverse() * self.reconstruct_dense()
    }
}

/// `Fᵀ Diag(d) F` for an arbitrary diagonal.
pub fn reconstruct_dense(transform: &OrthonormalTransform, diag: &[f64]) -> DMatrix<f64> {
    let f = transform.as_matrix();
    let mut scaled = f.clone();
    for (mut row, d) in scaled.row_iter_mut().zip(diag) {
        row *= *d;
    }
    f.transpose() * scaled
}

pub fn spectral_diagonal(
    ens: &Ensemble,
    var: usize,
    t: &OrthonormalTransform,
) -> Result<DiagonalSpectralCovariance> {
    let members = ens.members(var)?;
    check_len(members.nrows(), t.size())?;
    ens.require_spread()?;
    let hat = transform_columns(t, members, false);
    let diag = paired_row_covariance(&hat, &hat);
    Ok(DiagonalSpectralCovariance {
        transform: t.clone(),
        diag,
    })
}

pub fn spectral_cross_diagonal(
    ens: &Ensemble,
    var_a: usize,
    var_b: usize,
    proj: &InterpolationOperator,
    t: &OrthonormalTransform,
) -> Result<CrossSpectralDiagonal> {
    let a = ens.members(var_a)?;
    let b = ens.members(var_b)?;
    check_len(proj.source_len(), a.nrows())?;
    check_len(proj.target_len(), b.nrows())?;
    check_len(t.size(), b.nrows())?;
    ens.require_spread()?;
    let projected = proj.matrix() * a;
    let a_hat = transform_columns(t, &projected, false);
    let b_hat = transform_columns(t, b, false);
    Ok(CrossSpectralDiagonal {
        transform: t.clone(),
        diag: paired_row_covariance(&a_hat, &b_hat),
        projection: proj.clone(),
    })
}

/// Piecewise-linear projection `P` between grids with its pseudoinverse `P†`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationOperator {
    source: Grid,
    target: Grid,
    matrix: DMatrix<f64>,
    left_inverse: DMatrix<f64>,
}

/// Default bound on `‖P†P - I‖∞` for identical grids.
pub const IDENTITY_LEFT_INVERSE_TOLERANCE: f64 = 1e-8;
/// Default bound on `‖P†P - I‖∞` for genuine interpolation.
pub const INTERPOLATION_LEFT_INVERSE_TOLERANCE: f64 = 0.1;

pub fn build_interpolation(source: &Grid, target: &Grid) -> Result<InterpolationOperator> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if source == target {
        let n = source.len();
        return Ok(InterpolationOperator {
            source: source.clone(),
            target: target.clone(),
            matrix: DMatrix::identity(n, n),
            left_inverse: DMatrix::identity(n, n),
        });
    }
    let xs = source.nodes();
    let mut matrix = DMatrix::zeros(target.len(), source.len());
    for (row, &x) in target.nodes().iter().enumerate() {
        // Constant extension outside the source nodes.
        if x <= xs[0] {
            matrix[(row, 0)] = 1.0;
        } else if x >= xs[xs.len() - 1] {
            matrix[(row, xs.len() - 1)] = 1.0;
        } else {
            let right = xs.partition_point(|&s| s <= x);
            let left = right - 1;
            let weight = (x - xs[left]) / (xs[right] - xs[left]);
            matrix[(row, left)] = 1.0 - weight;
            matrix[(row, right)] += weight;
        }
    }
    let left_inverse = matrix
        .clone()
        .pseudo_inverse(1e-12)
        .expect("SVD of a finite interpolation matrix");
    Ok(InterpolationOperator {
        source: source.clone(),
        target: target.clone(),
        matrix,
        left_inverse,
    })
}

impl InterpolationOperator {
    pub fn identity(grid: &Grid) -> Self {
        build_interpolation(grid, grid).expect("identity on a nonempty grid")
    }

    pub fn source(&self) -> &Grid {
        &self.source
    }

    pub fn target(&self) -> &Grid {
        &self.target
    }

    pub fn source_len(&self) -> usize {
        self.source.len()
    }

    pub fn target_len(&self) -> usize {
        self.target.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn left_inverse(&self) -> &DMatrix<f64> {
        &self.left_inverse
    }

    pub fn is_identity(&self) -> bool {
        self.source == self.target
    }

    /// `‖P†P - I‖∞`.
    pub fn left_inverse_defect(&self) -> f64 {
        let n = self.source.len();
        inf_norm(&(&self.left_inverse * &self.matrix - DMatrix::identity(n, n)))
    }

    /// Checks the defect against the default tolerance for this kind of
    /// operator.
    pub fn validate(&self) -> Result<()> {
        let tolerance = if self.is_identity() {
            IDENTITY_LEFT_INVERSE_TOLERANCE
        } else {
            INTERPOLATION_LEFT_INVERSE_TOLERANCE
        };
        self.validate_with(tolerance)
    }

    pub fn validate_with(&self, tolerance: f64) -> Result<()> {
        let defect = self.left_inverse_defect();
        if defect <= tolerance {
            Ok(())
        } else {
            Err(Error::LeftInverseDefect { defect, tolerance })
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.source.len(), x.len())?;
        Ok((&self.matrix * DVector::from_column_slice(x))
            .iter()
            .copied()
            .collect())
    }
}
