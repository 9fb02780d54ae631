//! Geometry of the L² unit sphere under the energy-adaptive metric
//! `g_phi(v, w) = a_phi(v, w)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{Field, State, TangentField};
use crate::hamiltonian::{GpeOperator, HamiltonianContext, InnerSolveOptions};

/// Everything the outer iteration needs at one iterate: the Hamiltonian at
/// `phi`, `A phi`, and the cached inverse `y = A⁻¹ phi` with `d = <y, phi>`.
#[derive(Clone, Debug)]
pub struct MetricContext {
    state: State,
    ham: HamiltonianContext,
    a_phi: Field,
    y: Field,
    d: f64,
    inner_iterations: usize,
}

impl MetricContext {
    /// Builds the context, solving `A y = phi` to relative residual `rtol`.
    /// `warm_start` seeds the inner CG (typically the previous iterate's `y`).
    pub fn new(
        op: &Arc<GpeOperator>,
        state: State,
        rtol: f64,
        warm_start: Option<&Field>,
    ) -> Result<Self> {
        let ham = op.context(&state)?;
        let a_phi = ham.apply(&state)?;
        let solve = ham.solve_inverse_with(&state, InnerSolveOptions::with_rtol(rtol), warm_start)?;
        let d = solve.x.dot(&state);
        if !(d > 0.0) {
            return Err(Error::NotCoercive { curvature: d });
        }
        Ok(Self { state, ham, a_phi, y: solve.x, d, inner_iterations: solve.iterations })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn hamiltonian(&self) -> &HamiltonianContext {
        &self.ham
    }

    /// `A⁻¹ phi` as computed by the inner solve.
    pub fn inverse_applied(&self) -> &Field {
        &self.y
    }

    pub fn inner_iterations(&self) -> usize {
        self.inner_iterations
    }

    /// `phi - y / <y, phi>`.
    ///
    /// Tangent in exact arithmetic; the subtraction leaves a normal component
    /// of absolute size ~1e-16, which is projected out because near
    /// convergence it would dominate `DE(phi)[g]`.
    pub fn gradient(&self) -> TangentField {
        let mut g = self.state.as_field().clone();
        g.axpy(-1.0 / self.d, &self.y);
        TangentField::project(&self.state, g).expect("same grid")
    }

    /// `DE(phi)[v] = a_phi(phi, v)`.
    pub fn directional_derivative(&self, v: &Field) -> f64 {
        self.a_phi.dot(v)
    }

    /// `<phi, A_phi phi>`.
    pub fn lambda(&self) -> f64 {
        self.a_phi.dot(&self.state)
    }

    /// `|A_phi phi - lambda phi|`.
    pub fn eigen_residual(&self) -> f64 {
        let mut r = self.a_phi.clone();
        r.axpy(-self.lambda(), &self.state);
        r.norm()
    }

    pub fn energy_norm(&self, v: &Field) -> Result<f64> {
        let q = self.ham.bilinear(v, v)?;
        if q < 0.0 {
            return Err(Error::NotCoercive { curvature: q });
        }
        Ok(q.sqrt())
    }
}

pub fn ea_gradient(mc: &MetricContext) -> TangentField {
    mc.gradient()
}

pub fn energy_norm(mc: &MetricContext, v: &Field) -> Result<f64> {
    mc.energy_norm(v)
}

/// `(phi + v) / |phi + v|`.
pub fn retract(phi: &State, v: &Field) -> Result<State> {
    phi.check_same_grid(v)?;
    State::normalized(phi.as_field() + v)
}

/// Differentiated normalization: with `u = phi + v`,
/// `w / |u| - u Re<u, w> / |u|³`, re-projected onto the tangent space at
/// `u / |u|` to remove rounding drift.
pub fn transport(phi: &State, v: &Field, w: &Field) -> Result<TangentField> {
    phi.check_same_grid(v)?;
    phi.check_same_grid(w)?;
    let u = phi.as_field() + v;
    let norm = u.norm();
    if !(norm >= 1e-14) {
        return Err(Error::DegenerateDirection { norm });
    }
    let mut out = w.clone().scaled(1.0 / norm);
    out.axpy(-u.dot(w) / norm.powi(3), &u);
    let new_base = State::normalized(u)?;
    TangentField::project(&new_base, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::hamiltonian::GpeParams;
    use num_complex::Complex64;

    fn setup(omega: f64, kappa: f64) -> (Arc<GpeOperator>, Arc<Grid>) {
        let op = Arc::new(GpeOperator::new(GpeParams::new(20.0, 32, 1.0, 1.0, omega, kappa).unwrap()).unwrap());
        let grid = op.grid().clone();
        (op, grid)
    }

    fn tangent(phi: &State, seed: u64, scale: f64) -> TangentField {
        let w = State::random(phi.grid().clone(), seed).into_field();
        TangentField::project(phi, w).unwrap().scaled(scale)
    }

    #[test]
    fn retraction_at_zero_is_identity() {
        let (_, grid) = setup(0.0, 0.0);
        let phi = State::random(grid.clone(), 1);
        let r = retract(&phi, &Field::zeros(grid)).unwrap();
        assert!((r.as_field() - phi.as_field()).norm() < 1e-14);
    }

    #[test]
    fn retraction_is_second_order_close_to_line() {
        let (_, grid) = setup(0.0, 0.0);
        let phi = State::random(grid, 1);
        let v = tangent(&phi, 2, 1.0);
        let err = |t: f64| {
            let vt = v.as_field() * t;
            let r = retract(&phi, &vt).unwrap();
            (r.as_field() - &(phi.as_field() + &vt)).norm()
        };
        let ratio = err(1e-2) / err(1e-3);
        assert!((ratio - 100.0).abs() < 5.0, "ratio {ratio}");
    }

    #[test]
    fn degenerate_retraction() {
        let (_, grid) = setup(0.0, 0.0);
        let phi = State::random(grid, 1);
        let minus = -phi.as_field();
        assert!(matches!(retract(&phi, &minus), Err(Error::DegenerateDirection { .. })));
        assert!(transport(&phi, &minus, &minus).is_err());
    }

    #[test]
    fn transport_at_zero_and_linearity() {
        let (_, grid) = setup(0.0, 0.0);
        let phi = State::random(grid.clone(), 3);
        let w = tangent(&phi, 4, 1.0);
        let t0 = transport(&phi, &Field::zeros(grid), &w).unwrap();
        assert!((t0.as_field() - w.as_field()).norm() < 1e-12);

        let v = tangent(&phi, 5, 0.4);
        let w2 = tangent(&phi, 6, 1.0);
        let alpha = -1.7;
        let mut combo = w.as_field() * alpha;
        combo.axpy(1.0, &w2);
        let lhs = transport(&phi, &v, &combo).unwrap();
        let mut rhs = transport(&phi, &v, &w).unwrap().into_field().scaled(alpha);
        rhs.axpy(1.0, &transport(&phi, &v, &w2).unwrap());
        assert!((lhs.as_field() - &rhs).norm() < 1e-12);
        let new_base = retract(&phi, &v).unwrap();
        assert!(lhs.tangency_defect(&new_base) < 1e-12);
    }

    #[test]
    fn gradient_tangent_and_metric_consistent() {
        let (op, grid) = setup(0.8, 200.0);
        let phi = State::random(grid, 7);
        let mc = MetricContext::new(&op, phi.clone(), 1e-8, None).unwrap();
        let g = mc.gradient();
        assert!(g.tangency_defect(&phi) < 1e-10);
        let en = mc.energy_norm(&g).unwrap();
        let via_apply = g.dot(&mc.hamiltonian().apply(&g).unwrap());
        assert!((en * en - via_apply).abs() < 1e-10 * via_apply);
        // Riesz identity: a(g, v) = DE[v] on tangent vectors.
        let v = tangent(&phi, 8, 1.0);
        let lhs = mc.hamiltonian().bilinear(&g, &v).unwrap();
        let rhs = mc.directional_derivative(&v);
        assert!((lhs - rhs).abs() < 1e-6 * rhs.abs().max(1.0));
    }

    #[test]
    fn energy_norm_homogeneity() {
        let (op, grid) = setup(0.5, 50.0);
        let phi = State::random(grid.clone(), 9);
        let mc = MetricContext::new(&op, phi.clone(), 1e-6, None).unwrap();
        assert_eq!(mc.energy_norm(&Field::zeros(grid)).unwrap(), 0.0);
        let v = tangent(&phi, 10, 1.0);
        let base = mc.energy_norm(&v).unwrap();
        for alpha in [-3.0, 0.25, 7.5] {
            let scaled = mc.energy_norm(&(v.as_field() * alpha)).unwrap();
            assert!((scaled - alpha.abs() * base).abs() < 1e-12 * scaled.max(1.0));
        }
    }

    #[test]
    fn gradient_vanishes_at_eigenvector() {
        // Linear case: the discrete ground state of -Δ + |x|² is an eigenvector.
        let (op, grid) = setup(0.0, 0.0);
        let gauss = State::normalized(Field::from_fn(grid, |x1, x2| {
            Complex64::new((-(x1 * x1 + x2 * x2) / 2.0).exp(), 0.0)
        }))
        .unwrap();
        let mc = MetricContext::new(&op, gauss, 1e-12, None).unwrap();
        let g = mc.gradient();
        assert!(mc.energy_norm(&g).unwrap() < 1e-6);
    }
}
