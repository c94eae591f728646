//! Analysis updates: the stochastic ensemble Kalman filter and its spectral
//! variants.
//!
//! Every method updates each member with its own perturbed data,
//!
//! ```text
//! u_k^a = u_k + Q Hᵀ (H Q Hᵀ + R)⁻¹ (d + e_k - H u_k)
//! ```
//!
//! and differs only in how `Q Hᵀ` and `H Q Hᵀ + R` are approximated. The
//! spectral methods transform the observed fields, keep the diagonal of their
//! sample covariance, solve the innovation system mode by mode and map the
//! gain back with the inverse transform.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::covariance::{Ensemble, Grid, InterpolationOperator};
use crate::error::{check_len, Error, Result};
use crate::linalg::{anomalies, paired_row_covariance, psd_solve, transform_columns};
use crate::transforms::{OrthonormalTransform, TransformKind};

/// Observation error model.
///
/// The two sample-based variants carry the variances the perturbations are
/// drawn from; the filter itself then uses only the drawn perturbations.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// `R = σ² I`.
    ScalarDiag(f64),
    /// `R = diag(r)`.
    Diag(Vec<f64>),
    /// `R̂ = Ê Êᵀ/(N-1)` from the centred, transformed perturbations, inverted
    /// with the Sherman–Morrison–Woodbury identity.
    SamplePerturbation(Vec<f64>),
    /// Diagonal of the transformed perturbation sample covariance.
    SpectralDiag(Vec<f64>),
}

impl NoiseModel {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let entries: &[f64] = match self {
            NoiseModel::ScalarDiag(v) => std::slice::from_ref(v),
            NoiseModel::Diag(r)
            | NoiseModel::SamplePerturbation(r)
            | NoiseModel::SpectralDiag(r) => {
                check_len(dim, r.len())?;
                r
            }
        };
        match entries.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            Some(v) => Err(Error::NegativeVariance(*v)),
            None => Ok(()),
        }
    }

    /// Per-coordinate variance of the perturbation draws.
    pub fn draw_variance(&self, dim: usize) -> Vec<f64> {
        match self {
            NoiseModel::ScalarDiag(v) => vec![*v; dim],
            NoiseModel::Diag(r)
            | NoiseModel::SamplePerturbation(r)
            | NoiseModel::SpectralDiag(r) => r.clone(),
        }
    }

    /// Physical-space `R` used by the dense updates.
    pub fn covariance(&self, perturbations: &DMatrix<f64>) -> DMatrix<f64> {
        let dim = perturbations.nrows();
        match self {
            NoiseModel::ScalarDiag(v) => DMatrix::identity(dim, dim) * *v,
            NoiseModel::Diag(r) => DMatrix::from_diagonal(&r.clone().into()),
            NoiseModel::SamplePerturbation(_) => sample_perturbation_covariance(perturbations),
            NoiseModel::SpectralDiag(_) => {
                DMatrix::from_diagonal(&paired_row_covariance(perturbations, perturbations).into())
            }
        }
    }
}

fn sample_perturbation_covariance(e: &DMatrix<f64>) -> DMatrix<f64> {
    let a = anomalies(e);
    &a * a.transpose() / (e.ncols() as f64 - 1.0)
}

/// Draws `members` zero-mean perturbation vectors, one per column.
pub fn perturb_data<R: Rng + ?Sized>(
    data: &[f64],
    noise: &NoiseModel,
    members: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let dim = data.len();
    noise.validate(dim)?;
    let std: Vec<f64> = noise.draw_variance(dim).iter().map(|v| v.sqrt()).collect();
    let mut out = DMatrix::zeros(dim, members);
    for k in 0..members {
        for i in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            out[(i, k)] = std[i] * z;
        }
    }
    Ok(out)
}

/// Perturbations drawn from one seed-derived stream per member, so that
/// member `k` gets the same draw regardless of ensemble size or threading.
pub fn draw_perturbations(
    data: &[f64],
    noise: &NoiseModel,
    members: usize,
    seed: u64,
    recenter: bool,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(data.len(), members);
    for k in 0..members {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PERTURBATION_SEED_SALT);
        rng.set_stream(k as u64);
        out.set_column(k, &perturb_data(data, noise, 1, &mut rng)?.column(0));
    }
    if recenter {
        recenter_perturbations(&mut out);
    }
    Ok(out)
}

const PERTURBATION_SEED_SALT: u64 = 0x5eed_da7a_0b5e_0001;

/// Subtracts the sample mean from every perturbation.
pub fn recenter_perturbations(e: &mut DMatrix<f64>) {
    *e = anomalies(e);
}

/// One observed variable: `H_j = P_j S_j` with `S_j` selecting `variable` and
/// `P_j` an optional interpolation onto the observation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBlock {
    pub variable: usize,
    pub projection: Option<InterpolationOperator>,
}

impl ObservationBlock {
    pub fn direct(variable: usize) -> Self {
        Self {
            variable,
            projection: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSpec {
    pub blocks: Vec<ObservationBlock>,
    pub data: Vec<f64>,
    pub noise: NoiseModel,
}

impl ObservationSpec {
    pub fn new(blocks: Vec<ObservationBlock>, data: Vec<f64>, noise: NoiseModel) -> Self {
        Self {
            blocks,
            data,
            noise,
        }
    }

    /// Direct observation of one variable on its own grid.
    pub fn identity(variable: usize, data: Vec<f64>, noise: NoiseModel) -> Self {
        Self::new(vec![ObservationBlock::direct(variable)], data, noise)
    }

    fn block_grid<'a>(&'a self, ens: &'a Ensemble, block: usize) -> Result<&'a Grid> {
        let b = &self.blocks[block];
        let var = ens.variable(b.variable)?;
        match &b.projection {
            Some(p) => {
                check_len(var.grid().len(), p.source_len())?;
                Ok(p.target())
            }
            None => Ok(var.grid()),
        }
    }

    pub fn block_dims(&self, ens: &Ensemble) -> Result<Vec<usize>> {
        (0..self.blocks.len())
            .map(|j| self.block_grid(ens, j).map(Grid::len))
            .collect()
    }

    pub fn dimension(&self, ens: &Ensemble) -> Result<usize> {
        Ok(self.block_dims(ens)?.iter().sum())
    }

    pub fn validate(&self, ens: &Ensemble) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::UnsupportedObservation(
                "no observation blocks".into(),
            ));
        }
        let dim = self.dimension(ens)?;
        check_len(dim, self.data.len())?;
        self.noise.validate(dim)
    }

    /// `H u_k` for every member, one column each.
    pub fn apply(&self, ens: &Ensemble) -> Result<DMatrix<f64>> {
        let dims = self.block_dims(ens)?;
        let mut out = DMatrix::zeros(dims.iter().sum(), ens.member_count());
        let mut offset = 0;
        for (b, dim) in self.blocks.iter().zip(&dims) {
            let members = ens.members(b.variable)?;
            let observed = match &b.projection {
                Some(p) => p.matrix() * members,
                None => members.clone(),
            };
            out.rows_mut(offset, *dim).copy_from(&observed);
            offset += dim;
        }
        Ok(out)
    }

    /// Dense `H` acting on the stacked state.
    pub fn matrix(&self, ens: &Ensemble) -> Result<DMatrix<f64>> {
        let dims = self.block_dims(ens)?;
        let offsets = ens.offsets();
        let mut h = DMatrix::zeros(dims.iter().sum(), ens.state_dim());
        let mut row = 0;
        for (b, dim) in self.blocks.iter().zip(&dims) {
            let n = ens.variable(b.variable)?.grid().len();
            let col = offsets[b.variable];
            match &b.projection {
                Some(p) => h.view_mut((row, col), (*dim, n)).copy_from(p.matrix()),
                None => h
                    .view_mut((row, col), (n, n))
                    .copy_from(&DMatrix::<f64>::identity(n, n)),
            }
            row += dim;
        }
        Ok(h)
    }

    fn innovations(&self, observed: &DMatrix<f64>, perturbations: &DMatrix<f64>) -> DMatrix<f64> {
        let mut innov = perturbations - observed;
        for mut column in innov.column_iter_mut() {
            for (v, d) in column.iter_mut().zip(&self.data) {
                *v += d;
            }
        }
        innov
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Classical,
    SpectralSingle(TransformKind),
    SpectralMulti,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub method: Method,
    /// `‖d + e_k - H u_k‖₂` per member.
    pub innovation_norms: Vec<f64>,
    /// `D̂_ii/(D̂_ii + R̂_ii)` per observed mode, when `R̂` is diagonal.
    pub mode_gains: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisResult {
    pub analysis: Ensemble,
    pub diagnostics: Diagnostics,
}

impl AnalysisResult {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.diagnostics.seed = Some(seed);
        self
    }
}

fn column_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.norm()).collect()
}

fn check_inputs(ens: &Ensemble, obs: &ObservationSpec, perturbations: &DMatrix<f64>) -> Result<()> {
    ens.require_spread()?;
    obs.validate(ens)?;
    check_len(obs.data.len(), perturbations.nrows())?;
    check_len(ens.member_count(), perturbations.ncols())
}

/// Stochastic EnKF with the dense sample covariance.
pub fn classical_update(
    ens: &Ensemble,
    obs: &ObservationSpec,
    perturbations: &DMatrix<f64>,
) -> Result<AnalysisResult> {
    check_inputs(ens, obs, perturbations)?;
    let scale = 1.0 / (ens.member_count() as f64 - 1.0).sqrt();
    let state = ens.stacked();
    let observed = obs.apply(ens)?;
    let a = anomalies(&state) * scale;
    let ha = anomalies(&observed) * scale;
    let innovation_matrix = &ha * ha.transpose() + obs.noise.covariance(perturbations);
    let innov = obs.innovations(&observed, perturbations);
    let chol = innovation_matrix
        .cholesky()
        .ok_or(Error::SingularInnovationMatrix)?;
    let weights = chol.solve(&innov);
    let analysis = &state + a * (ha.transpose() * weights);
    Ok(AnalysisResult {
        analysis: ens.with_stacked(&analysis)?,
        diagnostics: Diagnostics {
            method: Method::Classical,
            innovation_norms: column_norms(&innov),
            mode_gains: None,
            seed: None,
        },
    })
}

/// `R̂` in the transform domain.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectralNoise {
    /// Diagonal `R̂`, cases (i) and (iii).
    Diagonal(Vec<f64>),
    /// `R̂ = Ê Êᵀ/(N-1)` for the given `m × N` factor `Ê`.
    LowRank(DMatrix<f64>),
}

impl SpectralNoise {
    fn dim(&self) -> usize {
        match self {
            SpectralNoise::Diagonal(r) => r.len(),
            SpectralNoise::LowRank(e) => e.nrows(),
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            SpectralNoise::Diagonal(r) => r.iter().all(|v| *v == 0.0),
            SpectralNoise::LowRank(e) => e.iter().all(|v| *v == 0.0),
        }
    }

    /// Transforms a physical noise model block by block.
    pub fn resolve(
        noise: &NoiseModel,
        transforms: &[&OrthonormalTransform],
        perturbations: &DMatrix<f64>,
    ) -> Result<Self> {
        let dim: usize = transforms.iter().map(|t| t.size()).sum();
        check_len(dim, perturbations.nrows())?;
        noise.validate(dim)?;
        let per_block = |m: &DMatrix<f64>| -> DMatrix<f64> {
            let mut out = DMatrix::zeros(m.nrows(), m.ncols());
            let mut offset = 0;
            for t in transforms {
                let block = m.rows(offset, t.size()).into_owned();
                out.rows_mut(offset, t.size())
                    .copy_from(&transform_columns(t, &block, false));
                offset += t.size();
            }
            out
        };
        Ok(match noise {
            NoiseModel::ScalarDiag(v) => SpectralNoise::Diagonal(vec![*v; dim]),
            NoiseModel::Diag(r) => {
                // Diagonal of F diag(r) Fᵀ.
                let mut out = Vec::with_capacity(dim);
                let mut offset = 0;
                for t in transforms {
                    let f = t.as_matrix();
                    let block = &r[offset..offset + t.size()];
                    for row in f.row_iter() {
                        out.push(row.iter().zip(block).map(|(a, v)| a * a * v).sum());
                    }
                    offset += t.size();
                }
                SpectralNoise::Diagonal(out)
            }
            NoiseModel::SamplePerturbation(_) => {
                SpectralNoise::LowRank(per_block(&anomalies(perturbations)))
            }
            NoiseModel::SpectralDiag(_) => {
                let hat = per_block(perturbations);
                SpectralNoise::Diagonal(paired_row_covariance(&hat, &hat))
            }
        })
    }
}

/// Symmetric matrix over stacked observation blocks whose block `(a, b)` is
/// diagonal when the blocks have equal size and zero otherwise.
///
/// Entries sharing a mode index across equal-size blocks form small dense
/// groups, so the matrix is block diagonal after a permutation.
#[derive(Debug, Clone)]
struct ModeCovariance {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    /// `diagonals[a][b]` is present iff `sizes[a] == sizes[b]`.
    diagonals: Vec<Vec<Option<Vec<f64>>>>,
}

impl ModeCovariance {
    fn diagonal(d: &[f64]) -> Self {
        Self {
            sizes: vec![d.len()],
            offsets: vec![0],
            diagonals: vec![vec![Some(d.to_vec())]],
        }
    }

    /// Cross diagonals of transformed, observed members, one matrix per block.
    fn from_members(blocks: &[DMatrix<f64>]) -> Self {
        let sizes: Vec<usize> = blocks.iter().map(|b| b.nrows()).collect();
        let offsets = sizes
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let diagonals = blocks
            .iter()
            .map(|a| {
                blocks
                    .iter()
                    .map(|b| (a.nrows() == b.nrows()).then(|| paired_row_covariance(a, b)))
                    .collect()
            })
            .collect();
        Self {
            sizes,
            offsets,
            diagonals,
        }
    }

    fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Groups of block indices with a common size.
    fn size_classes(&self) -> Vec<Vec<usize>> {
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for (a, size) in self.sizes.iter().enumerate() {
            match classes.iter_mut().find(|c| self.sizes[c[0]] == *size) {
                Some(c) => c.push(a),
                None => classes.push(vec![a]),
            }
        }
        classes
    }

    fn group_matrix(&self, class: &[usize], mode: usize) -> DMatrix<f64> {
        DMatrix::from_fn(class.len(), class.len(), |p, q| {
            self.diagonals[class[p]][class[q]].as_ref().unwrap()[mode]
        })
    }

    fn positions(&self, class: &[usize], mode: usize) -> Vec<usize> {
        class.iter().map(|a| self.offsets[*a] + mode).collect()
    }

    fn is_zero(&self) -> bool {
        self.diagonals
            .iter()
            .flatten()
            .flatten()
            .all(|d| d.iter().all(|v| *v == 0.0))
    }

    fn dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for class in self.size_classes() {
            for mode in 0..self.sizes[class[0]] {
                let g = self.group_matrix(&class, mode);
                let pos = self.positions(&class, mode);
                for (p, &i) in pos.iter().enumerate() {
                    for (q, &j) in pos.iter().enumerate() {
                        out[(i, j)] = g[(p, q)];
                    }
                }
            }
        }
        out
    }

    /// `(D + diag(r))⁻¹ rhs`, applying the zero-mode rule, plus the per-mode
    /// gain `diag(D (D + diag(r))⁻¹)`.
    fn solve_diagonal(&self, r: &[f64], rhs: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
        let mut x = DMatrix::zeros(rhs.nrows(), rhs.ncols());
        let mut gains = vec![0.0; rhs.nrows()];
        for class in self.size_classes() {
            for mode in 0..self.sizes[class[0]] {
                let pos = self.positions(&class, mode);
                let d = self.group_matrix(&class, mode);
                if pos.len() == 1 {
                    let i = pos[0];
                    let total = d[(0, 0)] + r[i];
                    // A mode without prior or data variance carries no
                    // information and is left unchanged.
                    if total > 0.0 {
                        for k in 0..rhs.ncols() {
                            x[(i, k)] = rhs[(i, k)] / total;
                        }
                        gains[i] = d[(0, 0)] / total;
                    }
                    continue;
                }
                let mut g = d.clone();
                for (p, &i) in pos.iter().enumerate() {
                    g[(p, p)] += r[i];
                }
                let local = DMatrix::from_fn(pos.len(), rhs.ncols(), |p, k| rhs[(pos[p], k)]);
                let solved = psd_solve(&g, &local);
                let gain = psd_solve(&g, &d);
                for (p, &i) in pos.iter().enumerate() {
                    for k in 0..rhs.ncols() {
                        x[(i, k)] = solved[(p, k)];
                    }
                    gains[i] = gain[(p, p)];
                }
            }
        }
        (x, gains)
    }

    /// `D⁻¹ rhs` when every group is positive definite.
    fn try_inverse_apply(&self, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let mut x = DMatrix::zeros(rhs.nrows(), rhs.ncols());
        for class in self.size_classes() {
            for mode in 0..self.sizes[class[0]] {
                let pos = self.positions(&class, mode);
                let g = self.group_matrix(&class, mode);
                let chol = g.cholesky()?;
                let local = DMatrix::from_fn(pos.len(), rhs.ncols(), |p, k| rhs[(pos[p], k)]);
                let solved = chol.solve(&local);
                for (p, &i) in pos.iter().enumerate() {
                    for k in 0..rhs.ncols() {
                        x[(i, k)] = solved[(p, k)];
                    }
                }
            }
        }
        Some(x)
    }

    /// `(D + Ê Êᵀ/(N-1))⁻¹ rhs` by Sherman–Morrison–Woodbury with an `N × N`
    /// inner system; falls back to a dense solve when `D` is singular.
    fn solve_low_rank(&self, factor: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let u = factor / (factor.ncols() as f64 - 1.0).sqrt();
        match (self.try_inverse_apply(rhs), self.try_inverse_apply(&u)) {
            (Some(y), Some(z)) => {
                let inner = DMatrix::identity(u.ncols(), u.ncols()) + u.transpose() * &z;
                let w = psd_solve(&inner, &(u.transpose() * &y));
                y - z * w
            }
            _ => psd_solve(&(self.dense() + &u * u.transpose()), rhs),
        }
    }

    fn solve(
        &self,
        noise: &SpectralNoise,
        rhs: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, Option<Vec<f64>>)> {
        check_len(self.dim(), noise.dim())?;
        check_len(self.dim(), rhs.nrows())?;
        if self.is_zero() && noise.is_zero() {
            if rhs.iter().any(|v| *v != 0.0) {
                return Err(Error::SingularInnovationMatrix);
            }
            return Ok((DMatrix::zeros(rhs.nrows(), rhs.ncols()), None));
        }
        Ok(match noise {
            SpectralNoise::Diagonal(r) => {
                let (x, gains) = self.solve_diagonal(r, rhs);
                (x, Some(gains))
            }
            SpectralNoise::LowRank(e) => (self.solve_low_rank(e, rhs), None),
        })
    }
}

/// `(D̂ + R̂)⁻¹ rhs` for diagonal `D̂`; one right-hand side per column.
pub fn innovation_solve(
    dhat: &[f64],
    noise: &SpectralNoise,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    ModeCovariance::diagonal(dhat)
        .solve(noise, rhs)
        .map(|(x, _)| x)
}

fn scale_rows(m: &DMatrix<f64>, factors: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut row, f) in out.row_iter_mut().zip(factors) {
        row *= *f;
    }
    out
}

/// Spectral EnKF for a single, fully observed variable.
pub fn spectral_update_single(
    ens: &Ensemble,
    obs: &ObservationSpec,
    t: &OrthonormalTransform,
    perturbations: &DMatrix<f64>,
) -> Result<AnalysisResult> {
    let direct = ens.variable_count() == 1
        && obs.blocks.len() == 1
        && obs.blocks[0].variable == 0
        && obs.blocks[0]
            .projection
            .as_ref()
            .is_none_or(InterpolationOperator::is_identity);
    if !direct {
        return Err(Error::UnsupportedObservation(
            "single-variable update needs H = I; use spectral_update_multi".into(),
        ));
    }
    check_inputs(ens, obs, perturbations)?;
    let members = ens.members(0)?;
    check_len(members.nrows(), t.size())?;

    let u_hat = transform_columns(t, members, false);
    let innov = obs.innovations(members, perturbations);
    let innov_hat = transform_columns(t, &innov, false);
    let dhat = paired_row_covariance(&u_hat, &u_hat);
    let noise = SpectralNoise::resolve(&obs.noise, &[t], perturbations)?;
    let (x, gains) = ModeCovariance::diagonal(&dhat).solve(&noise, &innov_hat)?;
    let analysis_hat = u_hat + scale_rows(&x, &dhat);
    let analysis = transform_columns(t, &analysis_hat, true);
    Ok(AnalysisResult {
        analysis: ens.with_stacked(&analysis)?,
        diagnostics: Diagnostics {
            method: Method::SpectralSingle(t.kind()),
            innovation_norms: column_norms(&innov),
            mode_gains: gains,
            seed: None,
        },
    })
}

/// Approximation of the state–observation cross covariance `Q Hᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrossMode {
    /// `P† Fᵀ D̂(P u_i, H_j u) F`.
    #[default]
    SpectralDiagonal,
    /// Dense sample cross covariance `C(u_i, H_j u)`.
    SampleCovariance,
}

/// Approximation of `H Q Hᵀ` in the innovation system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InnovationCovariance {
    /// Diagonal blocks `Fᵀ D̂(H_i u, H_j u) F`.
    #[default]
    SpectralDiagonal,
    /// Full dense sample covariance of `H u`; a diagnostic that turns the
    /// update back into the classical filter when combined with
    /// [`CrossMode::SampleCovariance`].
    DenseSample,
}

/// Interpolation from the grid of `variable` to the grid of observation
/// `block`, needed when the two grids differ.
#[derive(Debug, Clone, PartialEq)]
pub struct StateProjection {
    pub variable: usize,
    pub block: usize,
    pub operator: InterpolationOperator,
}

#[derive(Debug, Clone)]
pub struct SpectralConfig {
    /// One transform per state variable, sized to its grid.
    pub transforms: Vec<OrthonormalTransform>,
    pub cross_mode: CrossMode,
    pub innovation: InnovationCovariance,
    pub projections: Vec<StateProjection>,
}

impl SpectralConfig {
    pub fn new(transforms: Vec<OrthonormalTransform>) -> Self {
        Self {
            transforms,
            cross_mode: CrossMode::default(),
            innovation: InnovationCovariance::default(),
            projections: Vec::new(),
        }
    }

    pub fn with_cross_mode(mut self, mode: CrossMode) -> Self {
        self.cross_mode = mode;
        self
    }

    pub fn with_innovation(mut self, innovation: InnovationCovariance) -> Self {
        self.innovation = innovation;
        self
    }

    pub fn with_projection(mut self, projection: StateProjection) -> Self {
        self.projections.push(projection);
        self
    }

    fn projection(&self, variable: usize, block: usize) -> Option<&InterpolationOperator> {
        self.projections
            .iter()
            .find(|p| p.variable == variable && p.block == block)
            .map(|p| &p.operator)
    }
}

/// Spectral EnKF over several variables with block-diagonal spectral
/// innovation covariance.
pub fn spectral_update_multi(
    ens: &Ensemble,
    obs: &ObservationSpec,
    cfg: &SpectralConfig,
    perturbations: &DMatrix<f64>,
) -> Result<AnalysisResult> {
    check_inputs(ens, obs, perturbations)?;
    check_len(ens.variable_count(), cfg.transforms.len())?;
    for (v, t) in ens.variables().iter().zip(&cfg.transforms) {
        check_len(v.grid().len(), t.size())?;
    }
    let members = ens.member_count();
    let dims = obs.block_dims(ens)?;
    let obs_offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();

    // Each observation grid must coincide with a model grid; the block uses
    // that variable's transform.
    let block_grids: Vec<&Grid> = (0..obs.blocks.len())
        .map(|j| obs.block_grid(ens, j))
        .collect::<Result<_>>()?;
    let block_transforms: Vec<&OrthonormalTransform> = obs
        .blocks
        .iter()
        .zip(&block_grids)
        .map(|(b, grid)| {
            let own = ens.variable(b.variable)?.grid() == *grid;
            let v = if own {
                Some(b.variable)
            } else {
                ens.variables().iter().position(|v| v.grid() == *grid)
            };
            v.map(|v| &cfg.transforms[v]).ok_or_else(|| {
                Error::UnsupportedObservation(
                    "observation grid does not match any model grid".into(),
                )
            })
        })
        .collect::<Result<_>>()?;

    let observed = obs.apply(ens)?;
    let innov = obs.innovations(&observed, perturbations);
    let block_rows = |m: &DMatrix<f64>, j: usize| m.rows(obs_offsets[j], dims[j]).into_owned();
    let observed_hat: Vec<DMatrix<f64>> = (0..dims.len())
        .map(|j| transform_columns(block_transforms[j], &block_rows(&observed, j), false))
        .collect();
    let stack = |blocks: &[DMatrix<f64>]| {
        let mut out = DMatrix::zeros(innov.nrows(), members);
        for (j, b) in blocks.iter().enumerate() {
            out.rows_mut(obs_offsets[j], dims[j]).copy_from(b);
        }
        out
    };

    let (weights, weights_hat, mode_gains) = match cfg.innovation {
        InnovationCovariance::SpectralDiagonal => {
            let innov_hat = stack(
                &(0..dims.len())
                    .map(|j| transform_columns(block_transforms[j], &block_rows(&innov, j), false))
                    .collect::<Vec<_>>(),
            );
            let noise = SpectralNoise::resolve(&obs.noise, &block_transforms, perturbations)?;
            let (x_hat, gains) =
                ModeCovariance::from_members(&observed_hat).solve(&noise, &innov_hat)?;
            let x = stack(
                &(0..dims.len())
                    .map(|j| transform_columns(block_transforms[j], &block_rows(&x_hat, j), true))
                    .collect::<Vec<_>>(),
            );
            (x, x_hat, gains)
        }
        InnovationCovariance::DenseSample => {
            let ha = anomalies(&observed) / (members as f64 - 1.0).sqrt();
            let s = &ha * ha.transpose() + obs.noise.covariance(perturbations);
            let x = s
                .cholesky()
                .ok_or(Error::SingularInnovationMatrix)?
                .solve(&innov);
            let x_hat = stack(
                &(0..dims.len())
                    .map(|j| transform_columns(block_transforms[j], &block_rows(&x, j), false))
                    .collect::<Vec<_>>(),
            );
            (x, x_hat, None)
        }
    };

    let observed_anomalies = anomalies(&observed) / (members as f64 - 1.0).sqrt();
    let mut analysis = ens.stacked();
    for (i, (var, offset)) in ens.variables().iter().zip(ens.offsets()).enumerate() {
        let state = var.members();
        let mut increment = DMatrix::zeros(state.nrows(), members);
        for j in 0..dims.len() {
            match cfg.cross_mode {
                CrossMode::SampleCovariance => {
                    let a = anomalies(state) / (members as f64 - 1.0).sqrt();
                    increment += a
                        * (block_rows(&observed_anomalies, j).transpose()
                            * block_rows(&weights, j));
                }
                CrossMode::SpectralDiagonal => {
                    let projection = if var.grid() == block_grids[j] {
                        None
                    } else {
                        let p = cfg.projection(i, j).ok_or(Error::MissingProjection {
                            variable: i,
                            block: j,
                        })?;
                        check_len(state.nrows(), p.source_len())?;
                        check_len(dims[j], p.target_len())?;
                        Some(p)
                    };
                    let projected = match projection {
                        Some(p) => p.matrix() * state,
                        None => state.clone(),
                    };
                    let t = block_transforms[j];
                    let projected_hat = transform_columns(t, &projected, false);
                    let cross = paired_row_covariance(&projected_hat, &observed_hat[j]);
                    let scaled = scale_rows(&block_rows(&weights_hat, j), &cross);
                    let back = transform_columns(t, &scaled, true);
                    increment += match projection {
                        Some(p) => p.left_inverse() * back,
                        None => back,
                    };
                }
            }
        }
        analysis
            .rows_mut(offset, state.nrows())
            .zip_apply(&increment, |a, b| *a += b);
    }

    Ok(AnalysisResult {
        analysis: ens.with_stacked(&analysis)?,
        diagnostics: Diagnostics {
            method: Method::SpectralMulti,
            innovation_norms: column_norms(&innov),
            mode_gains,
            seed: None,
        },
    })
}
