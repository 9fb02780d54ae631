//! Gross–Pitaevskii energy, the density-dependent Hamiltonian
//! `A_phi = -Δ + V + ω L_z + κ|phi|²` and its inverse.
//!
//! The Laplacian and the partial derivatives inside `L_z` are spectral
//! multipliers; the trap, the coordinate factors of `L_z` and the density are
//! applied pointwise on the real-space nodes (no dealiasing).

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Grid, State};

/// Physical and discretization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpeParams {
    pub a: f64,
    pub n: usize,
    pub v1: f64,
    pub v2: f64,
    pub omega: f64,
    pub kappa: f64,
}

impl GpeParams {
    pub fn new(a: f64, n: usize, v1: f64, v2: f64, omega: f64, kappa: f64) -> Result<Self> {
        let p = Self { a, n, v1, v2, omega, kappa };
        p.validate()?;
        Ok(p)
    }

    /// Trap amplitudes positive, `κ ≥ 0`, `ω ≥ 0`, and `ω² < 4 min(v1, v2)`.
    ///
    /// The last condition makes `-Δ + V + ω L_z` positive: writing
    /// `-Δ + ω L_z = (p - A)² - ω²|x|²/4` leaves a trap `(v_i - ω²/4) x_i²`.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.v1 > 0.0 && self.v2 > 0.0) {
            return bad(format!("trap amplitudes must be positive (v1 = {}, v2 = {})", self.v1, self.v2));
        }
        if !(self.kappa >= 0.0) {
            return bad(format!("kappa = {} must be nonnegative", self.kappa));
        }
        if !(self.omega >= 0.0) {
            return bad(format!("omega = {} must be nonnegative", self.omega));
        }
        if !(self.omega * self.omega < 4.0 * self.v1.min(self.v2)) {
            return bad(format!(
                "rotation too fast for the trap: omega^2 = {} >= 4 min(v1, v2) = {}",
                self.omega * self.omega,
                4.0 * self.v1.min(self.v2)
            ));
        }
        if !(self.a > 0.0) {
            return bad(format!("box width a = {} must be positive", self.a));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        Grid::shared(self.a, self.n)
    }

    pub fn potential_at(&self, x1: f64, x2: f64) -> f64 {
        self.v1 * x1 * x1 + self.v2 * x2 * x2
    }
}

/// Parameter-dependent but state-independent pieces of the operator.
#[derive(Debug)]
pub struct GpeOperator {
    params: GpeParams,
    grid: Arc<Grid>,
    potential: Vec<f64>,
    ksq: Vec<f64>,
}

/// Per-term contributions to the energy.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyParts {
    pub kinetic: f64,
    pub potential: f64,
    pub rotation: f64,
    pub interaction: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential + self.rotation + self.interaction
    }
}

impl GpeOperator {
    pub fn new(params: GpeParams) -> Result<Self> {
        let grid = params.grid()?;
        Self::with_grid(params, grid)
    }

    pub fn with_grid(params: GpeParams, grid: Arc<Grid>) -> Result<Self> {
        params.validate()?;
        if grid.n() != params.n || grid.a() != params.a {
            return Err(Error::GridMismatch(format!(
                "params (a = {}, n = {}) vs {:?}",
                params.a, params.n, grid
            )));
        }
        let potential = (0..grid.len())
            .map(|i| {
                let (x1, x2) = grid.coords(i);
                params.potential_at(x1, x2)
            })
            .collect();
        let ksq = (0..grid.len())
            .map(|i| {
                let (k1, k2) = grid.wavevector(i);
                k1 * k1 + k2 * k2
            })
            .collect();
        Ok(Self { params, grid, potential, ksq })
    }

    pub fn params(&self) -> &GpeParams {
        &self.params
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn check_field(&self, v: &Field) -> Result<()> {
        if v.grid().same_as(&self.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{:?} vs operator {:?}", v.grid(), self.grid)))
        }
    }

    /// Real-space samples of `∂_1 v` and `∂_2 v`.
    fn gradient_samples(&self, v: &Field) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.grid.n();
        let ks = self.grid.ks();
        let mut d1 = v.coeffs().to_vec();
        let mut d2 = v.coeffs().to_vec();
        for (idx, (c1, c2)) in d1.iter_mut().zip(d2.iter_mut()).enumerate() {
            let (k1, k2) = (ks[idx % n], ks[idx / n]);
            *c1 *= Complex64::new(0.0, k1);
            *c2 *= Complex64::new(0.0, k2);
        }
        let d1 = self.grid.to_real(&d1).expect("grid length");
        let d2 = self.grid.to_real(&d2).expect("grid length");
        (d1, d2)
    }

    /// `(L_z v)` at each node given the derivative samples.
    fn lz_samples(&self, d1: &[Complex64], d2: &[Complex64]) -> Vec<Complex64> {
        let minus_i = Complex64::new(0.0, -1.0);
        (0..self.grid.len())
            .map(|i| {
                let (x1, x2) = self.grid.coords(i);
                minus_i * (d2[i] * x1 - d1[i] * x2)
            })
            .collect()
    }

    /// `(-Δ + V + ω L_z + κ ρ) v`, `density` being `ρ` on the nodes (or none).
    pub(crate) fn apply_with_density(&self, density: Option<&[f64]>, v: &Field) -> Field {
        let u = v.to_real();
        let omega = self.params.omega;
        let kappa = self.params.kappa;
        let mut w: Vec<Complex64> = match density {
            Some(rho) => u
                .iter()
                .zip(&self.potential)
                .zip(rho)
                .map(|((ui, vi), ri)| ui * (vi + kappa * ri))
                .collect(),
            None => u.iter().zip(&self.potential).map(|(ui, vi)| ui * vi).collect(),
        };
        if omega != 0.0 {
            let (d1, d2) = self.gradient_samples(v);
            let lz = self.lz_samples(&d1, &d2);
            w.iter_mut().zip(lz).for_each(|(wi, li)| *wi += li * omega);
        }
        let mut out = self.grid.to_spectral(&w).expect("grid length");
        out.iter_mut()
            .zip(v.coeffs())
            .zip(&self.ksq)
            .for_each(|((o, c), k2)| *o += c * k2);
        Field::from_coeffs(self.grid.clone(), out).expect("grid length")
    }

    pub fn energy_parts(&self, phi: &Field) -> Result<EnergyParts> {
        self.check_field(phi)?;
        let h2 = self.grid.cell_area();
        let kinetic = 0.5
            * phi
                .coeffs()
                .iter()
                .zip(&self.ksq)
                .map(|(c, k2)| k2 * c.norm_sqr())
                .sum::<f64>();
        let u = phi.to_real();
        let potential = 0.5 * h2 * u.iter().zip(&self.potential).map(|(ui, vi)| vi * ui.norm_sqr()).sum::<f64>();
        let interaction = 0.25 * self.params.kappa * h2 * u.iter().map(|ui| ui.norm_sqr().powi(2)).sum::<f64>();
        let rotation = if self.params.omega != 0.0 {
            let (d1, d2) = self.gradient_samples(phi);
            let lz = self.lz_samples(&d1, &d2);
            0.5 * self.params.omega * h2 * u.iter().zip(&lz).map(|(ui, li)| (ui.conj() * li).re).sum::<f64>()
        } else {
            0.0
        };
        Ok(EnergyParts { kinetic, potential, rotation, interaction })
    }

    /// `∫ ½|∇φ|² + ½V|φ|² + ½ω Re(conj(φ) L_z φ) + ¼κ|φ|⁴`.
    pub fn energy(&self, phi: &Field) -> Result<f64> {
        Ok(self.energy_parts(phi)?.total())
    }

    /// `E(phi + delta) - E(phi)` evaluated from `delta` directly, so the
    /// result keeps full relative precision when `delta` is tiny.
    pub fn energy_difference(&self, phi: &Field, delta: &Field) -> Result<f64> {
        self.check_field(phi)?;
        self.check_field(delta)?;
        let mut sum = phi.clone();
        sum.scale(2.0);
        sum.axpy(1.0, delta);
        let quadratic = 0.5 * delta.dot(&self.apply_with_density(None, &sum));
        let interaction = if self.params.kappa != 0.0 {
            let u = phi.to_real();
            let d = delta.to_real();
            let h2 = self.grid.cell_area();
            0.25 * self.params.kappa
                * h2
                * u.iter()
                    .zip(&d)
                    .map(|(ui, di)| {
                        let rho_old = ui.norm_sqr();
                        let rho_new = (ui + di).norm_sqr();
                        let drho = (di.conj() * (ui * 2.0 + di)).re;
                        drho * (rho_old + rho_new)
                    })
                    .sum::<f64>()
        } else {
            0.0
        };
        Ok(quadratic + interaction)
    }

    /// `∫ |φ|⁴`.
    pub fn quartic_integral(&self, phi: &Field) -> f64 {
        let h2 = self.grid.cell_area();
        h2 * phi.to_real().iter().map(|u| u.norm_sqr().powi(2)).sum::<f64>()
    }

    pub fn context(self: &Arc<Self>, phi: &State) -> Result<HamiltonianContext> {
        self.check_field(phi)?;
        let density = phi.to_real().iter().map(|u| u.norm_sqr()).collect();
        Ok(HamiltonianContext { op: self.clone(), density })
    }

    /// Context for an arbitrary nonnegative density (tests, linear problems).
    pub fn context_with_density(self: &Arc<Self>, density: Vec<f64>) -> Result<HamiltonianContext> {
        if density.len() != self.grid.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} density samples", self.grid.len()),
                got: format!("{}", density.len()),
            });
        }
        if density.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidParams("density must be nonnegative".into()));
        }
        Ok(HamiltonianContext { op: self.clone(), density })
    }
}

/// Free-function form of [`GpeOperator::energy`].
pub fn energy(phi: &State, params: &GpeParams) -> Result<f64> {
    GpeOperator::with_grid(*params, phi.grid().clone())?.energy(phi)
}

/// The Hamiltonian frozen at one density.
#[derive(Clone, Debug)]
pub struct HamiltonianContext {
    op: Arc<GpeOperator>,
    density: Vec<f64>,
}

/// Result of an inner linear solve.
#[derive(Clone, Debug)]
pub struct InverseSolve {
    pub x: Field,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Options of the preconditioned CG inner solver.
#[derive(Clone, Copy, Debug)]
pub struct InnerSolveOptions {
    pub rtol: f64,
    /// `None` means `10 * n`.
    pub max_iters: Option<usize>,
    /// Shift of the kinetic preconditioner `(|k|²/2 + shift)⁻¹`.
    pub shift: f64,
}

impl InnerSolveOptions {
    pub fn with_rtol(rtol: f64) -> Self {
        Self { rtol, max_iters: None, shift: 1.0 }
    }
}

impl HamiltonianContext {
    pub fn operator(&self) -> &Arc<GpeOperator> {
        &self.op
    }

    pub fn params(&self) -> &GpeParams {
        &self.op.params
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.op.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn apply(&self, v: &Field) -> Result<Field> {
        self.op.check_field(v)?;
        Ok(self.op.apply_with_density(Some(&self.density), v))
    }

    /// `a_phi(v, w) = Re<v, A_phi w>`.
    pub fn bilinear(&self, v: &Field, w: &Field) -> Result<f64> {
        self.op.check_field(v)?;
        Ok(v.dot(&self.apply(w)?))
    }

    /// Solves `A x = b` to `|A x - b| <= rtol |b|` with kinetic-preconditioned CG.
    pub fn solve_inverse(&self, b: &Field, rtol: f64) -> Result<InverseSolve> {
        self.solve_inverse_with(b, InnerSolveOptions::with_rtol(rtol), None)
    }

    pub fn solve_inverse_with(
        &self,
        b: &Field,
        opts: InnerSolveOptions,
        initial: Option<&Field>,
    ) -> Result<InverseSolve> {
        self.op.check_field(b)?;
        if !(opts.rtol > 0.0 && opts.rtol < 1.0) {
            return Err(Error::InvalidParams(format!("rtol = {} must lie in (0, 1)", opts.rtol)));
        }
        let max_iters = opts.max_iters.unwrap_or(10 * self.grid().n());
        let precond: Vec<f64> = self.op.ksq.iter().map(|k2| 1.0 / (0.5 * k2 + opts.shift)).collect();
        let apply_precond = |r: &Field| {
            let mut z = r.clone();
            z.coeffs_mut().iter_mut().zip(&precond).for_each(|(c, p)| *c *= p);
            z
        };

        let b_norm = b.norm();
        let mut x = match initial {
            Some(x0) => {
                self.op.check_field(x0)?;
                x0.clone()
            }
            None => Field::zeros(self.grid().clone()),
        };
        if b_norm == 0.0 {
            return Ok(InverseSolve { x: Field::zeros(self.grid().clone()), iterations: 0, relative_residual: 0.0 });
        }
        let target = opts.rtol * b_norm;
        let mut iterations = 0;
        // Outer loop restarts from the true residual whenever the recursive one
        // has drifted below the target while the true one has not.
        loop {
            let mut r = b - &self.apply(&x)?;
            let mut r_norm = r.norm();
            if r_norm <= target {
                return Ok(InverseSolve { x, iterations, relative_residual: r_norm / b_norm });
            }
            if iterations >= max_iters {
                return Err(Error::InnerSolveDiverged { iterations, residual: r_norm / b_norm });
            }
            let mut z = apply_precond(&r);
            let mut p = z.clone();
            let mut rz = r.dot(&z);
            while iterations < max_iters {
                let ap = self.apply(&p)?;
                let curvature = p.dot(&ap);
                if !(curvature > 0.0) {
                    return Err(Error::NotCoercive { curvature });
                }
                let alpha = rz / curvature;
                x.axpy(alpha, &p);
                r.axpy(-alpha, &ap);
                iterations += 1;
                r_norm = r.norm();
                if r_norm <= target {
                    break;
                }
                z = apply_precond(&r);
                let rz_new = r.dot(&z);
                let beta = rz_new / rz;
                rz = rz_new;
                let mut p_new = z.clone();
                p_new.axpy(beta, &p);
                p = p_new;
            }
        }
    }

    /// `<phi, A_phi phi>`, the Lagrange multiplier at an eigenvector.
    pub fn rayleigh_quotient(&self, phi: &Field) -> Result<f64> {
        self.bilinear(phi, phi)
    }
}

/// Convenience: apply the Hamiltonian of `ctx` to `v`.
pub fn apply_hamiltonian(ctx: &HamiltonianContext, v: &Field) -> Result<Field> {
    ctx.apply(v)
}

pub fn bilinear_a(ctx: &HamiltonianContext, v: &Field, w: &Field) -> Result<f64> {
    ctx.bilinear(v, w)
}

pub fn solve_inverse(ctx: &HamiltonianContext, b: &Field, rtol: f64) -> Result<Field> {
    ctx.solve_inverse(b, rtol).map(|s| s.x)
}
