//! Two-variable stochastic test model on `[0, 1]`.
//!
//! Variable 1 is a Gaussian bump `h exp(-(x - c)²/w²)` with random centre,
//! width and height. Variable 2 is a smooth random sine series plus `0.3`
//! times variable 1, so `Cov(u₁, u₂) = 0.3 Cov(u₁, u₁)` in expectation.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::covariance::{Ensemble, Grid, Variable};
use crate::enkf::{NoiseModel, ObservationSpec};
use crate::error::Result;

/// Smallest bump width kept when sampling `w`.
pub const MIN_WIDTH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParam {
    pub mean: f64,
    pub std: f64,
}

impl GaussianParam {
    pub const fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Normal::new(self.mean, self.std)
            .expect("finite, nonnegative standard deviation")
            .sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n: usize,
    pub members: usize,
    pub seed: u64,
    pub center: GaussianParam,
    pub width: GaussianParam,
    pub height: GaussianParam,
    /// `σ₀`: amplitude `a_m` has standard deviation `σ₀/m`.
    pub smooth_amplitude: f64,
    /// `M`: highest sine frequency in the smooth field.
    pub max_frequency: usize,
    pub coupling: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self::with_size(128)
    }
}

impl SyntheticConfig {
    pub fn with_size(n: usize) -> Self {
        Self {
            n,
            members: 10,
            seed: 0,
            center: GaussianParam::new(0.3, 0.1),
            width: GaussianParam::new(0.1, 0.01),
            height: GaussianParam::new(1.0, 0.1),
            smooth_amplitude: 0.2,
            max_frequency: (n / 2).max(1),
            coupling: 0.3,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::uniform(self.n)
    }
}

/// `h exp(-(x - c)²/w²)` at `x`.
pub fn bump(x: f64, center: f64, width: f64, height: f64) -> f64 {
    height * (-((x - center) / width).powi(2)).exp()
}

pub fn bump_on_grid(grid: &Grid, center: f64, width: f64, height: f64) -> Vec<f64> {
    grid.nodes()
        .iter()
        .map(|&x| bump(x, center, width, height))
        .collect()
}

/// Bump parameters drawn for one member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpDraw {
    pub center: f64,
    pub width: f64,
    pub height: f64,
}

pub fn draw_bump<R: Rng + ?Sized>(rng: &mut R, cfg: &SyntheticConfig) -> BumpDraw {
    let center = cfg.center.sample(rng);
    let width = loop {
        let w = cfg.width.sample(rng);
        if w > MIN_WIDTH {
            break w;
        }
    };
    let height = cfg.height.sample(rng);
    BumpDraw {
        center,
        width,
        height,
    }
}

pub fn sample_var1<R: Rng + ?Sized>(rng: &mut R, cfg: &SyntheticConfig) -> Result<Vec<f64>> {
    let b = draw_bump(rng, cfg);
    Ok(bump_on_grid(&cfg.grid()?, b.center, b.width, b.height))
}

/// `Σ_{m=1..M} a_m sin(mπx)` with `a_m ~ N(0, (σ₀/m)²)`.
pub fn sample_smooth_field<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SyntheticConfig,
) -> Result<Vec<f64>> {
    let grid = cfg.grid()?;
    let mut field = vec![0.0; grid.len()];
    for m in 1..=cfg.max_frequency {
        let z: f64 = rng.sample(StandardNormal);
        let amplitude = cfg.smooth_amplitude / m as f64 * z;
        let freq = m as f64 * std::f64::consts::PI;
        for (v, x) in field.iter_mut().zip(grid.nodes()) {
            *v += amplitude * (freq * x).sin();
        }
    }
    Ok(field)
}

pub fn sample_var2<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SyntheticConfig,
    u1: &[f64],
) -> Result<Vec<f64>> {
    crate::error::check_len(cfg.n, u1.len())?;
    let mut field = sample_smooth_field(rng, cfg)?;
    for (v, u) in field.iter_mut().zip(u1) {
        *v += cfg.coupling * u;
    }
    Ok(field)
}

/// Random stream for member `k`; member draws do not depend on the
/// ensemble size, so smaller ensembles are prefixes of larger ones.
pub fn member_rng(seed: u64, member: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member as u64);
    rng
}

pub fn make_ensemble(cfg: &SyntheticConfig) -> Result<Ensemble> {
    let grid = cfg.grid()?;
    let mut u1 = DMatrix::zeros(cfg.n, cfg.members);
    let mut u2 = DMatrix::zeros(cfg.n, cfg.members);
    for k in 0..cfg.members {
        let mut rng = member_rng(cfg.seed, k);
        let a = sample_var1(&mut rng, cfg)?;
        let b = sample_var2(&mut rng, cfg, &a)?;
        u1.set_column(k, &nalgebra::DVector::from_vec(a));
        u2.set_column(k, &nalgebra::DVector::from_vec(b));
    }
    Ensemble::new(vec![
        Variable::new("u1", grid.clone(), u1)?,
        Variable::new("u2", grid, u2)?,
    ])
}

/// Truth bump parameters used for the observation.
pub const TRUTH_BUMP: BumpDraw = BumpDraw {
    center: 0.4,
    width: 0.12,
    height: 1.5,
};

/// Observation error variance `0.01²`.
pub const OBSERVATION_VARIANCE: f64 = 1e-4;

/// The fixed truth for variable 1 and its direct, full-grid observation.
pub fn make_truth_and_obs(cfg: &SyntheticConfig) -> Result<(Vec<f64>, ObservationSpec)> {
    let grid = cfg.grid()?;
    let truth = bump_on_grid(
        &grid,
        TRUTH_BUMP.center,
        TRUTH_BUMP.width,
        TRUTH_BUMP.height,
    );
    let obs = ObservationSpec::identity(
        0,
        truth.clone(),
        NoiseModel::ScalarDiag(OBSERVATION_VARIANCE),
    );
    Ok((truth, obs))
}
