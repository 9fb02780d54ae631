//! Discretization of the periodic box `[-a/2, a/2)^2`.
//!
//! Fields are stored as `n x n` spectral coefficients. The transform is scaled
//! so that the plain Euclidean sum over coefficients equals the continuous L²
//! inner product approximated by the trapezoidal rule on the real-space nodes:
//!
//! ```text
//! to_spectral: c = (a / n²) · FFT(u)
//! to_real:     u = IFFT(c) / a          (IFFT unnormalized)
//! ```
//!
//! so `Σ |c|² = (a/n)² Σ |u|²` and a unit coefficient at mode 0 is the constant
//! function `1/a`. Every inner product in the crate uses the coefficient sum;
//! no other scale factors appear anywhere.
//!
//! Sample layout (real and spectral): flat index `row * n + col`, with `col`
//! running along `x1` and `row` along `x2`.

use std::fmt;
use std::ops::{Add, Deref, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub struct Grid {
    a: f64,
    n: usize,
    xs: Vec<f64>,
    ks: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Grid {
    /// Box width `a`, `n` nodes per axis. `n` must be a positive multiple of 16
    /// so that the field fits the four pooling stages of the predictor network.
    pub fn new(a: f64, n: usize) -> Result<Self> {
        if n < 16 || !n.is_multiple_of(16) {
            return Err(Error::InvalidGrid(format!(
                "n = {n} must be a positive multiple of 16"
            )));
        }
        Self::build(a, n)
    }

    pub fn shared(a: f64, n: usize) -> Result<Arc<Self>> {
        Self::new(a, n).map(Arc::new)
    }

    /// Bypasses the multiple-of-16 constraint. Only for small test grids that
    /// never reach the network.
    #[doc(hidden)]
    pub fn new_unconstrained(a: f64, n: usize) -> Result<Self> {
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!("n = {n} must be even")));
        }
        Self::build(a, n)
    }

    fn build(a: f64, n: usize) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidGrid(format!("box width a = {a} must be positive")));
        }
        let h = a / n as f64;
        let xs = (0..n).map(|i| -a / 2.0 + i as f64 * h).collect();
        let dk = 2.0 * std::f64::consts::PI / a;
        let ks = (0..n)
            .map(|i| {
                let m = if i < n / 2 { i as i64 } else { i as i64 - n as i64 };
                dk * m as f64
            })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Self { a, n, xs, ks, forward, inverse })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> f64 {
        self.a / self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.spacing().powi(2)
    }

    /// Node coordinates along one axis.
    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    /// Angular wavenumbers along one axis, DFT ordering.
    pub fn ks(&self) -> &[f64] {
        &self.ks
    }

    /// `(x1, x2)` of flat sample index `idx`.
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        (self.xs[idx % self.n], self.xs[idx / self.n])
    }

    /// `(k1, k2)` of flat coefficient index `idx`.
    pub fn wavevector(&self, idx: usize) -> (f64, f64) {
        (self.ks[idx % self.n], self.ks[idx / self.n])
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other) || (self.n == other.n && self.a == other.a)
    }

    fn fft2(&self, buf: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        let n = self.n;
        plan.process(buf);
        transpose_in_place(buf, n);
        plan.process(buf);
        transpose_in_place(buf, n);
    }

    /// Real-space samples to spectral coefficients.
    pub fn to_spectral(&self, samples: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(samples.len())?;
        let mut buf = samples.to_vec();
        self.fft2(&mut buf, false);
        let scale = self.a / (self.n * self.n) as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        Ok(buf)
    }

    /// Spectral coefficients to real-space samples.
    pub fn to_real(&self, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(coeffs.len())?;
        let mut buf = coeffs.to_vec();
        self.fft2(&mut buf, true);
        let scale = 1.0 / self.a;
        buf.iter_mut().for_each(|c| *c *= scale);
        Ok(buf)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} samples", self.len()),
                got: format!("{len}"),
            });
        }
        Ok(())
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("a", &self.a).field("n", &self.n).finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.same_as(other)
    }
}

fn transpose_in_place(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// A complex field in spectral coefficients.
#[derive(Clone)]
pub struct Field {
    grid: Arc<Grid>,
    coeffs: Vec<Complex64>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("grid", &self.grid)
            .field("norm", &self.norm())
            .finish()
    }
}

impl Field {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let coeffs = vec![Complex64::new(0.0, 0.0); grid.len()];
        Self { grid, coeffs }
    }

    pub fn from_coeffs(grid: Arc<Grid>, coeffs: Vec<Complex64>) -> Result<Self> {
        grid.check_len(coeffs.len())?;
        Ok(Self { grid, coeffs })
    }

    pub fn from_real(grid: Arc<Grid>, samples: &[Complex64]) -> Result<Self> {
        let coeffs = grid.to_spectral(samples)?;
        Ok(Self { grid, coeffs })
    }

    /// Samples `f(x1, x2)` on the nodes.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let samples: Vec<_> = (0..grid.len())
            .map(|idx| {
                let (x1, x2) = grid.coords(idx);
                f(x1, x2)
            })
            .collect();
        let coeffs = grid.to_spectral(&samples).expect("length matches grid");
        Self { grid, coeffs }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn to_real(&self) -> Vec<Complex64> {
        self.grid.to_real(&self.coeffs).expect("length matches grid")
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)))
        }
    }

    /// `Re <self, other>` without the grid check.
    pub fn dot(&self, other: &Field) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(v, w)| v.re * w.re + v.im * w.im)
            .sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.coeffs.iter_mut().for_each(|c| *c *= s);
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.scale(s);
        self
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &Field) {
        debug_assert!(self.grid.same_as(&x.grid));
        self.coeffs
            .iter_mut()
            .zip(&x.coeffs)
            .for_each(|(s, xi)| *s += xi * alpha);
    }

    /// Multiplies every coefficient by a complex scalar.
    pub fn scale_complex(&mut self, s: Complex64) {
        self.coeffs.iter_mut().for_each(|c| *c *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// `Re ∫ conj(v) w dx`.
pub fn inner_l2(v: &Field, w: &Field) -> Result<f64> {
    v.check_same_grid(w)?;
    Ok(v.dot(w))
}

impl Add<&Field> for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub<&Field> for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        self.clone().scaled(rhs)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.clone().scaled(-1.0)
    }
}

/// A point on the L² unit sphere.
#[derive(Clone, Debug)]
pub struct State(Field);

impl State {
    /// Normalizes `field`; fails when its norm is below `1e-14`.
    pub fn normalized(mut field: Field) -> Result<Self> {
        let norm = field.norm();
        if !(norm >= 1e-14) || !norm.is_finite() {
            return Err(Error::DegenerateDirection { norm });
        }
        field.scale(1.0 / norm);
        Ok(Self(field))
    }

    /// Standard-normal real and imaginary parts for every coefficient, then
    /// normalized. Deterministic in `seed`.
    pub fn random(grid: Arc<Grid>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..grid.len())
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            })
            .collect();
        Self::normalized(Field { grid, coeffs }).expect("random field is nonzero")
    }

    pub fn as_field(&self) -> &Field {
        &self.0
    }

    pub fn into_field(self) -> Field {
        self.0
    }
}

impl Deref for State {
    type Target = Field;
    fn deref(&self) -> &Field {
        &self.0
    }
}

/// A field L²-orthogonal (real inner product) to some base state. The base is
/// not stored; callers pass it where it matters.
#[derive(Clone, Debug)]
pub struct TangentField(Field);

impl TangentField {
    /// Orthogonal projection `w - phi Re<phi, w>` onto the tangent space at `phi`.
    pub fn project(base: &State, mut w: Field) -> Result<Self> {
        w.check_same_grid(base)?;
        let c = base.dot(&w);
        w.axpy(-c, base);
        Ok(Self(w))
    }

    /// Wraps a field the caller knows to be tangent.
    pub fn from_field_unchecked(field: Field) -> Self {
        Self(field)
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        Self(Field::zeros(grid))
    }

    pub fn as_field(&self) -> &Field {
        &self.0
    }

    pub fn into_field(self) -> Field {
        self.0
    }

    pub fn scaled(self, s: f64) -> Self {
        Self(self.0.scaled(s))
    }

    /// `self += alpha * x`; tangent spaces are linear.
    pub fn axpy(&mut self, alpha: f64, x: &TangentField) {
        self.0.axpy(alpha, &x.0);
    }

    pub fn tangency_defect(&self, base: &State) -> f64 {
        base.dot(&self.0).abs()
    }
}

impl Deref for TangentField {
    type Target = Field;
    fn deref(&self) -> &Field {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn grid_spacing_and_wavenumbers() {
        let g = Grid::new(20.0, 64).unwrap();
        assert!((g.spacing() - 0.3125).abs() < 1e-15);
        assert!((g.cell_area() - 0.3125f64.powi(2)).abs() < 1e-15);
        assert_eq!(g.xs()[0], -10.0);
        assert!((g.xs()[63] - (10.0 - 0.3125)).abs() < 1e-12);
        let dk = 2.0 * PI / 20.0;
        for k in g.ks() {
            let m = k / dk;
            assert!((m - m.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(Grid::new(20.0, 15), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid::new(20.0, 8), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid::new(0.0, 64), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid::new(-1.0, 64), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn small_grid_dft_order() {
        let g = Grid::new_unconstrained(20.0, 4).unwrap();
        let dk = 2.0 * PI / 20.0;
        let expected = [0.0, dk, -2.0 * dk, -dk];
        for (k, e) in g.ks().iter().zip(expected) {
            assert!((k - e).abs() < 1e-15);
        }
    }

    #[test]
    fn wavenumbers_symmetric_except_nyquist() {
        let g = Grid::new(20.0, 32).unwrap();
        let ks = g.ks();
        for i in 1..32 {
            if i == 16 {
                continue;
            }
            assert!((ks[i] + ks[32 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_field_has_unit_norm() {
        let g = Grid::shared(20.0, 64).unwrap();
        let f = Field::from_fn(g.clone(), |_, _| c(1.0 / 20.0, 0.0));
        assert!((inner_l2(&f, &f).unwrap() - 1.0).abs() < 1e-12);
        // all weight on mode 0
        assert!((f.coeffs()[0] - c(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn unit_mode_zero_is_constant_one_over_a() {
        let g = Grid::shared(20.0, 32).unwrap();
        let mut f = Field::zeros(g.clone());
        f.coeffs_mut()[0] = c(1.0, 0.0);
        for u in f.to_real() {
            assert!((u - c(1.0 / 20.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn orthogonality() {
        let g = Grid::shared(20.0, 32).unwrap();
        let mut v = Field::zeros(g.clone());
        let mut w = Field::zeros(g.clone());
        v.coeffs_mut()[3] = c(1.0, 0.5);
        w.coeffs_mut()[40] = c(-0.3, 2.0);
        assert_eq!(inner_l2(&v, &w).unwrap(), 0.0);

        let s = State::random(g.clone(), 7);
        let mut iv = s.as_field().clone();
        iv.scale_complex(c(0.0, 1.0));
        assert!(inner_l2(&s, &iv).unwrap().abs() < 1e-15);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = Field::zeros(Grid::shared(20.0, 32).unwrap());
        let b = Field::zeros(Grid::shared(20.0, 64).unwrap());
        assert!(matches!(inner_l2(&a, &b), Err(Error::GridMismatch(_))));
        let b2 = Field::zeros(Grid::shared(10.0, 32).unwrap());
        assert!(inner_l2(&a, &b2).is_err());
    }

    #[test]
    fn transform_round_trip_and_parseval() {
        for n in [16, 32, 64, 128] {
            let g = Grid::shared(20.0, n).unwrap();
            let s = State::random(g.clone(), n as u64);
            let real = s.to_real();
            let back = g.to_spectral(&real).unwrap();
            let err: f64 = back
                .iter()
                .zip(s.coeffs())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-12 * s.norm(), "n={n}: {err}");
            let real_norm: f64 = real.iter().map(|u| u.norm_sqr()).sum::<f64>() * g.cell_area();
            assert!((real_norm.sqrt() - s.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_in_transforms() {
        let g = Grid::new(20.0, 16).unwrap();
        assert!(matches!(
            g.to_spectral(&[c(0.0, 0.0); 10]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(g.to_real(&[c(0.0, 0.0); 257]).is_err());
    }

    #[test]
    fn random_state_is_normalized_and_reproducible() {
        let g = Grid::shared(20.0, 32).unwrap();
        let a = State::random(g.clone(), 42);
        let b = State::random(g.clone(), 42);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_eq!(a.coeffs(), b.coeffs());
        let c2 = State::random(g, 43);
        assert_ne!(a.coeffs(), c2.coeffs());
    }

    #[test]
    fn random_states_nearly_orthogonal() {
        // Re<phi1, phi2> has standard deviation 1/sqrt(2 n^2) for independent draws.
        let n = 32;
        let g = Grid::shared(20.0, n).unwrap();
        let sd = 1.0 / (2.0 * (n * n) as f64).sqrt();
        let mut sum_sq = 0.0;
        let pairs = 1000;
        for s in 0..pairs {
            let a = State::random(g.clone(), 2 * s);
            let b = State::random(g.clone(), 2 * s + 1);
            let ip = inner_l2(&a, &b).unwrap();
            assert!(ip.abs() < 3.0 * sd * 5.0);
            sum_sq += ip * ip;
        }
        let measured = (sum_sq / pairs as f64).sqrt();
        assert!((measured / sd - 1.0).abs() < 0.1, "measured sd {measured} vs {sd}");
    }

    #[test]
    fn projection_is_tangent() {
        let g = Grid::shared(20.0, 32).unwrap();
        let phi = State::random(g.clone(), 1);
        let w = State::random(g, 2).into_field();
        let t = TangentField::project(&phi, w).unwrap();
        assert!(t.tangency_defect(&phi) < 1e-15);
    }

    #[test]
    fn degenerate_normalization() {
        let g = Grid::shared(20.0, 16).unwrap();
        assert!(matches!(
            State::normalized(Field::zeros(g)),
            Err(Error::DegenerateDirection { .. })
        ));
    }
}
