//! Orthonormal changes of basis used by the spectral filters.
//!
//! Three kinds are supported: the identity, the orthonormal type-I discrete
//! sine transform, and the periodized orthogonal wavelet transform computed
//! with the pyramid algorithm. Every transform is a real orthonormal matrix
//! `F`, so the inverse is `Fᵀ`.
//!
//! # Wavelet coefficient layout
//!
//! With `n = 2^p` and `J` octaves the forward wavelet transform returns
//!
//! ```text
//! [ a_J | d_J | d_{J-1} | ... | d_1 ]
//!   n/2^J  n/2^J  n/2^(J-1)      n/2
//! ```
//!
//! where `a_J` are the scaling coefficients after `J` lowpass steps and `d_s`
//! are the detail coefficients produced at step `s`. Index `ℓ` in
//! `[n/2^s, n/2^(s-1))` is the detail coefficient `j = ℓ - n/2^s` of octave
//! `k = p - s`, which holds `2^k` translates. Indices below `n/2^J` are the
//! `2^(p-J)` scaling translates of octave `p - J`.
//!
//! One pyramid step on a block of even length `m` computes
//!
//! ```text
//! a_i = Σ_k h_k x_{(2i + k) mod m},   d_i = Σ_k g_k x_{(2i + k) mod m}
//! ```
//!
//! so row `ℓ` of `as_matrix` is the periodized, dilated filter response.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};

const FILTER_TOLERANCE: f64 = 1e-12;

/// Coiflet order-2 scaling filter.
///
/// Tabulated values refined in extended precision so that normalization,
/// shift orthogonality and the three vanishing wavelet moments hold to
/// double precision.
#[allow(clippy::excessive_precision)]
const COIFLET2_LOWPASS: [f64; 12] = [
    -0.000_720_549_445_548_318_464_66,
    -0.001_823_208_870_738_953_169_5,
    0.005_611_434_819_186_059_336_3,
    0.023_680_171_945_274_188_815,
    -0.059_434_418_648_215_948_799,
    -0.076_488_599_079_324_096_358,
    0.417_005_184_423_069_659_62,
    0.812_723_635_449_686_868_76,
    0.386_110_066_822_385_400_09,
    -0.067_372_554_722_737_164_029,
    -0.041_464_936_784_321_041_067,
    0.016_387_336_464_378_394_066,
];

/// Quadrature mirror filter pair for one pyramid step.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilter {
    name: String,
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
}

impl WaveletFilter {
    /// Builds the pair from scaling taps, deriving `g_k = (-1)^k h_{L-1-k}`,
    /// and rejects taps that are not an orthonormal scaling filter.
    pub fn new(name: impl Into<String>, lowpass: Vec<f64>) -> Result<Self> {
        let len = lowpass.len();
        if len < 2 || !len.is_multiple_of(2) {
            return Err(Error::InvalidFilter(format!(
                "tap count must be even and at least 2, got {len}"
            )));
        }
        let highpass = (0..len)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * lowpass[len - 1 - k]
            })
            .collect();
        let filter = Self {
            name: name.into(),
            lowpass,
            highpass,
        };
        filter.validate()?;
        Ok(filter)
    }

    pub fn coiflet2() -> Self {
        Self::new("coif2", COIFLET2_LOWPASS.to_vec()).expect("tabulated Coiflet-2 taps are valid")
    }

    pub fn haar() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::new("haar", vec![h, h]).expect("Haar taps are valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn highpass(&self) -> &[f64] {
        &self.highpass
    }

    pub fn len(&self) -> usize {
        self.lowpass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lowpass.is_empty()
    }

    /// Correlation `Σ_k h_k h_{k+2m}` of the scaling taps at even shift `2m`.
    pub fn shift_correlation(&self, shift: usize) -> f64 {
        let h = &self.lowpass;
        let offset = 2 * shift;
        if offset >= h.len() {
            return 0.0;
        }
        h.iter().zip(&h[offset..]).map(|(a, b)| a * b).sum()
    }

    fn validate(&self) -> Result<()> {
        let sum: f64 = self.lowpass.iter().sum();
        if (sum - std::f64::consts::SQRT_2).abs() > FILTER_TOLERANCE {
            return Err(Error::InvalidFilter(format!(
                "lowpass taps sum to {sum}, expected sqrt(2)"
            )));
        }
        for shift in 0..self.len() / 2 {
            let expected = if shift == 0 { 1.0 } else { 0.0 };
            let corr = self.shift_correlation(shift);
            if (corr - expected).abs() > FILTER_TOLERANCE {
                return Err(Error::InvalidFilter(format!(
                    "shift {shift} correlation {corr}, expected {expected}"
                )));
            }
        }
        let highsum: f64 = self.highpass.iter().sum();
        if highsum.abs() > FILTER_TOLERANCE {
            return Err(Error::InvalidFilter(format!(
                "highpass taps sum to {highsum}, expected 0"
            )));
        }
        Ok(())
    }
}

pub fn coiflet2_filter() -> WaveletFilter {
    WaveletFilter::coiflet2()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Identity,
    SineOrthonormal,
    WaveletPeriodized,
}

impl TransformKind {
    pub fn label(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::SineOrthonormal => "sine",
            TransformKind::WaveletPeriodized => "wavelet",
        }
    }
}

/// Octave count used when none is given: `min(5, log2 n)`.
pub fn default_octaves(n: usize) -> usize {
    if n < 2 {
        return 1;
    }
    (n.ilog2() as usize).clamp(1, 5)
}

#[derive(Clone)]
struct SinePlan {
    fft: Arc<dyn Fft<f64>>,
    scale: f64,
}

#[derive(Clone)]
enum Basis {
    Identity,
    Sine(SinePlan),
    Wavelet {
        filter: WaveletFilter,
        octaves: usize,
    },
}

/// An orthonormal `n × n` transform with fast forward and inverse application.
///
/// Immutable after construction; `forward` and `inverse` take `&self` and are
/// safe to call from many threads at once.
#[derive(Clone)]
pub struct OrthonormalTransform {
    size: usize,
    basis: Basis,
}

impl fmt::Debug for OrthonormalTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("OrthonormalTransform");
        s.field("kind", &self.kind()).field("size", &self.size);
        if let Basis::Wavelet { filter, octaves } = &self.basis {
            s.field("filter", &filter.name()).field("octaves", octaves);
        }
        s.finish()
    }
}

/// Builds a transform of the given kind. `octaves` and `filter` only apply to
/// the wavelet kind and default to `min(5, log2 n)` and Coiflet-2.
pub fn make_transform(
    kind: TransformKind,
    n: usize,
    octaves: Option<usize>,
    filter: Option<WaveletFilter>,
) -> Result<OrthonormalTransform> {
    match kind {
        TransformKind::Identity => OrthonormalTransform::identity(n),
        TransformKind::SineOrthonormal => OrthonormalTransform::sine(n),
        TransformKind::WaveletPeriodized => OrthonormalTransform::wavelet(
            n,
            octaves.unwrap_or_else(|| default_octaves(n)),
            filter.unwrap_or_else(WaveletFilter::coiflet2),
        ),
    }
}

impl OrthonormalTransform {
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::SizeTooSmall(n));
        }
        Ok(Self {
            size: n,
            basis: Basis::Identity,
        })
    }

    /// Orthonormal DST-I with entries `sqrt(2/(n+1)) sin(π i j/(n+1))`,
    /// evaluated through a real-odd FFT of length `2(n+1)`.
    pub fn sine(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::SizeTooSmall(n));
        }
        let fft = FftPlanner::new().plan_fft_forward(2 * (n + 1));
        Ok(Self {
            size: n,
            basis: Basis::Sine(SinePlan {
                fft,
                scale: (2.0 / (n as f64 + 1.0)).sqrt(),
            }),
        })
    }

    pub fn wavelet(n: usize, octaves: usize, filter: WaveletFilter) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(n));
        }
        let max = n.ilog2() as usize;
        if octaves == 0 || octaves > max {
            return Err(Error::OctavesOutOfRange {
                octaves,
                max,
                size: n,
            });
        }
        Ok(Self {
            size: n,
            basis: Basis::Wavelet { filter, octaves },
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kind(&self) -> TransformKind {
        match self.basis {
            Basis::Identity => TransformKind::Identity,
            Basis::Sine(_) => TransformKind::SineOrthonormal,
            Basis::Wavelet { .. } => TransformKind::WaveletPeriodized,
        }
    }

    pub fn octaves(&self) -> Option<usize> {
        match &self.basis {
            Basis::Wavelet { octaves, .. } => Some(*octaves),
            _ => None,
        }
    }

    pub fn filter(&self) -> Option<&WaveletFilter> {
        match &self.basis {
            Basis::Wavelet { filter, .. } => Some(filter),
            _ => None,
        }
    }

    /// Index ranges of the wavelet detail coefficients, coarsest octave first.
    /// Empty for the other kinds.
    pub fn detail_ranges(&self) -> Vec<Range<usize>> {
        match &self.basis {
            Basis::Wavelet { octaves, .. } => {
                let coarse = self.size >> octaves;
                let mut start = coarse;
                let mut ranges = Vec::with_capacity(*octaves);
                while start < self.size {
                    ranges.push(start..2 * start);
                    start *= 2;
                }
                ranges
            }
            _ => Vec::new(),
        }
    }

    /// `û = F x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size, x.len())?;
        let mut out = vec![0.0; self.size];
        self.forward_into(x, &mut out);
        Ok(out)
    }

    /// `x = Fᵀ û`.
    pub fn inverse(&self, xhat: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size, xhat.len())?;
        let mut out = vec![0.0; self.size];
        self.inverse_into(xhat, &mut out);
        Ok(out)
    }

    /// Applies `F`; both slices must have length `size`.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.size);
        assert_eq!(out.len(), self.size);
        match &self.basis {
            Basis::Identity => out.copy_from_slice(x),
            Basis::Sine(plan) => plan.apply(x, out),
            Basis::Wavelet { filter, octaves } => wavelet_forward(filter, *octaves, x, out),
        }
    }

    /// Applies `Fᵀ`; both slices must have length `size`.
    pub fn inverse_into(&self, xhat: &[f64], out: &mut [f64]) {
        assert_eq!(xhat.len(), self.size);
        assert_eq!(out.len(), self.size);
        match &self.basis {
            Basis::Identity => out.copy_from_slice(xhat),
            // DST-I is symmetric and self-inverse.
            Basis::Sine(plan) => plan.apply(xhat, out),
            Basis::Wavelet { filter, octaves } => wavelet_inverse(filter, *octaves, xhat, out),
        }
    }

    /// Dense `F` with entry `(ℓ, i) = F_{ℓi}`; column `i` is `forward(e_i)`.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        let n = self.size;
        let mut matrix = DMatrix::zeros(n, n);
        let mut unit = vec![0.0; n];
        let mut column = vec![0.0; n];
        for i in 0..n {
            unit[i] = 1.0;
            self.forward_into(&unit, &mut column);
            matrix.column_mut(i).copy_from_slice(&column);
            unit[i] = 0.0;
        }
        matrix
    }
}

impl SinePlan {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let len = 2 * (n + 1);
        let mut buffer = vec![Complex64::new(0.0, 0.0); len];
        for (j, &value) in x.iter().enumerate() {
            buffer[j + 1].re = value;
            buffer[len - 1 - j].re = -value;
        }
        self.fft.process(&mut buffer);
        // Z_k = -2i Σ_j x_j sin(π k j/(n+1)) for the odd extension.
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = -0.5 * self.scale * buffer[k + 1].im;
        }
    }
}

fn wavelet_forward(filter: &WaveletFilter, octaves: usize, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    let mut approx = x.to_vec();
    let mut next = vec![0.0; n / 2];
    let mut len = n;
    for _ in 0..octaves {
        let half = len / 2;
        analysis_step(
            filter,
            &approx[..len],
            &mut next[..half],
            &mut out[half..len],
        );
        approx[..half].copy_from_slice(&next[..half]);
        len = half;
    }
    out[..len].copy_from_slice(&approx[..len]);
}

fn wavelet_inverse(filter: &WaveletFilter, octaves: usize, xhat: &[f64], out: &mut [f64]) {
    let n = xhat.len();
    let mut len = n >> octaves;
    let mut approx = vec![0.0; n];
    approx[..len].copy_from_slice(&xhat[..len]);
    let mut rebuilt = vec![0.0; n];
    for _ in 0..octaves {
        synthesis_step(
            filter,
            &approx[..len],
            &xhat[len..2 * len],
            &mut rebuilt[..2 * len],
        );
        len *= 2;
        approx[..len].copy_from_slice(&rebuilt[..len]);
    }
    out.copy_from_slice(&approx);
}

/// One periodized lowpass/highpass split of `src` (length a power of two).
fn analysis_step(filter: &WaveletFilter, src: &[f64], lo: &mut [f64], hi: &mut [f64]) {
    let mask = src.len() - 1;
    let taps = filter.lowpass().iter().zip(filter.highpass());
    for (i, (a, d)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
        let base = 2 * i;
        let mut sa = 0.0;
        let mut sd = 0.0;
        for (k, (h, g)) in taps.clone().enumerate() {
            let value = src[(base + k) & mask];
            sa += h * value;
            sd += g * value;
        }
        *a = sa;
        *d = sd;
    }
}

/// Adjoint of [`analysis_step`].
fn synthesis_step(filter: &WaveletFilter, lo: &[f64], hi: &[f64], dst: &mut [f64]) {
    let mask = dst.len() - 1;
    dst.fill(0.0);
    let taps = filter.lowpass().iter().zip(filter.highpass());
    for (i, (&a, &d)) in lo.iter().zip(hi).enumerate() {
        let base = 2 * i;
        for (k, (h, g)) in taps.clone().enumerate() {
            dst[(base + k) & mask] += h * a + g * d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Dense DST-I straight from its definition.
    fn dense_sine(n: usize) -> DMatrix<f64> {
        let scale = (2.0 / (n as f64 + 1.0)).sqrt();
        DMatrix::from_fn(n, n, |i, j| {
            scale * (std::f64::consts::PI * ((i + 1) * (j + 1)) as f64 / (n as f64 + 1.0)).sin()
        })
    }

    #[test]
    fn coiflet2_taps_satisfy_filter_invariants() {
        let f = coiflet2_filter();
        assert_eq!(f.len(), 12);
        let sum: f64 = f.lowpass().iter().sum();
        assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(f.shift_correlation(1).abs() < 1e-12);
        for m in 0..6 {
            let expected = if m == 0 { 1.0 } else { 0.0 };
            assert!(
                (f.shift_correlation(m) - expected).abs() < 1e-12,
                "shift {m}"
            );
        }
        assert!(f.highpass().iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn coiflet2_taps_match_published_table() {
        // Published double-precision Coiflet-2 scaling coefficients.
        let table = [
            -0.0007205494453645122,
            -0.0018232088707029932,
            0.0056114348193944995,
            0.023680171946334084,
            -0.0594344186464569,
            -0.0764885990783064,
            0.41700518442169254,
            0.8127236354455423,
            0.3861100668211622,
            -0.06737255472196302,
            -0.04146493678175915,
            0.016387336463522112,
        ];
        for (a, b) in coiflet2_filter().lowpass().iter().zip(table) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn coiflet2_highpass_has_vanishing_moments() {
        let f = coiflet2_filter();
        for p in 0..4 {
            let moment: f64 = f
                .highpass()
                .iter()
                .enumerate()
                .map(|(k, g)| g * (k as f64).powi(p))
                .sum();
            assert!(moment.abs() < 1e-9, "moment {p} = {moment}");
        }
    }

    #[test]
    fn rejects_non_orthonormal_filter() {
        assert!(matches!(
            WaveletFilter::new("bad", vec![1.0, 0.5]),
            Err(Error::InvalidFilter(_))
        ));
        assert!(WaveletFilter::new("odd", vec![1.0, 0.2, 0.2]).is_err());
    }

    #[test]
    fn identity_matrix() {
        let t = make_transform(TransformKind::Identity, 8, None, None).unwrap();
        assert_eq!(t.as_matrix(), DMatrix::identity(8, 8));
        let t4 = OrthonormalTransform::identity(4).unwrap();
        assert_eq!(t4.as_matrix(), DMatrix::identity(4, 4));
        let x = [1.0, -2.0, 3.5, 0.0, 4.0, 1.0, 2.0, 9.0];
        assert_eq!(t.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn wavelet_requires_power_of_two() {
        let err = make_transform(
            TransformKind::WaveletPeriodized,
            12,
            Some(3),
            Some(coiflet2_filter()),
        )
        .unwrap_err();
        assert_eq!(err, Error::NotPowerOfTwo(12));
    }

    #[test]
    fn wavelet_octave_range() {
        assert!(matches!(
            OrthonormalTransform::wavelet(64, 7, coiflet2_filter()),
            Err(Error::OctavesOutOfRange { .. })
        ));
        assert!(matches!(
            OrthonormalTransform::wavelet(64, 0, coiflet2_filter()),
            Err(Error::OctavesOutOfRange { .. })
        ));
        assert!(OrthonormalTransform::wavelet(64, 6, coiflet2_filter()).is_ok());
    }

    #[test]
    fn default_octaves_caps_at_five() {
        assert_eq!(default_octaves(64), 5);
        assert_eq!(default_octaves(128), 5);
        assert_eq!(default_octaves(8), 3);
        assert_eq!(default_octaves(2), 1);
    }

    #[test]
    fn dimension_mismatch() {
        let t = OrthonormalTransform::sine(8).unwrap();
        assert_eq!(
            t.forward(&[1.0; 7]).unwrap_err(),
            Error::DimensionMismatch {
                expected: 8,
                actual: 7
            }
        );
        assert!(t.inverse(&[1.0; 9]).is_err());
    }

    #[test]
    fn sine_matches_dense_definition_and_is_symmetric() {
        for n in [1, 2, 7, 8, 33, 64] {
            let t = OrthonormalTransform::sine(n).unwrap();
            let f = t.as_matrix();
            assert!(max_abs(&(&f - dense_sine(n))) < 1e-12, "n = {n}");
            assert!(max_abs(&(&f - f.transpose())) < 1e-12);
            let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
            let a = t.inverse(&y).unwrap();
            let b = t.forward(&y).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wavelet_rows_are_orthonormal() {
        for n in [2, 4, 8, 16, 64, 128] {
            let t = make_transform(TransformKind::WaveletPeriodized, n, None, None).unwrap();
            let f = t.as_matrix();
            let defect = &f * f.transpose() - DMatrix::identity(n, n);
            assert!(max_abs(&defect) < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn constant_vector_has_no_detail_energy() {
        let t = OrthonormalTransform::wavelet(64, 5, coiflet2_filter()).unwrap();
        let xhat = t.forward(&[1.0; 64]).unwrap();
        let ranges = t.detail_ranges();
        assert_eq!(ranges.len(), 5);
        assert_eq!(ranges[0], 2..4);
        assert_eq!(ranges[4], 32..64);
        for r in ranges {
            for l in r {
                assert!(xhat[l].abs() < 1e-10, "detail {l} = {}", xhat[l]);
            }
        }
        // The two coarse scaling coefficients carry the whole energy.
        let energy: f64 = xhat[..2].iter().map(|v| v * v).sum();
        assert!((energy - 64.0).abs() < 1e-9);
    }

    #[test]
    fn unit_coefficient_inverts_to_row() {
        let t = OrthonormalTransform::wavelet(32, 3, coiflet2_filter()).unwrap();
        let f = t.as_matrix();
        for l in [0, 3, 4, 9, 31] {
            let mut e = vec![0.0; 32];
            e[l] = 1.0;
            let row = t.inverse(&e).unwrap();
            for i in 0..32 {
                assert!((row[i] - f[(l, i)]).abs() < 1e-13);
            }
            let back = t.forward(&row).unwrap();
            for (i, v) in back.iter().enumerate() {
                let expected = if i == l { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn haar_single_octave_pairs() {
        let t = OrthonormalTransform::wavelet(4, 1, WaveletFilter::haar()).unwrap();
        let y = t.forward(&[1.0, 3.0, 5.0, 7.0]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expected = [4.0 * s, 12.0 * s, -2.0 * s, -2.0 * s];
        for (a, b) in y.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
