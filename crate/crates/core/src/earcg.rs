//! Energy-adaptive Riemannian conjugate gradient.
//!
//! One outer step: pick `tau` along `eta` by nonmonotone Armijo backtracking
//! seeded with the previous step, retract, recompute the energy-adaptive
//! gradient, and form the next direction from the transported previous one
//! with `beta = max(0, min(FR, PR))` measured in the energy metric.
//!
//! Energy decrements are computed with [`GpeOperator::energy_difference`] and
//! accumulated into an "energy level"; the Armijo test and the nonmonotone
//! reference both use these levels so the step-size logic keeps working when
//! the decrements fall far below the rounding error of the absolute energy.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::accelerator::AccelEvent;
use crate::error::{Error, Result};
use crate::field::{State, TangentField};
use crate::hamiltonian::{GpeOperator, GpeParams};
use crate::manifold::{retract, transport, MetricContext};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    /// Number of past energy levels in the nonmonotone reference (current included).
    pub window: usize,
    pub max_backtracks: usize,
    /// Clamp of the interpolated shrink factor.
    pub shrink_min: f64,
    pub shrink_max: f64,
    /// Largest growth factor of the single extrapolation trial made when the
    /// initial step passes at once; `<= 1` disables it.
    pub max_extrapolation: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self { c1: 1e-4, window: 5, max_backtracks: 25, shrink_min: 0.1, shrink_max: 0.5, max_extrapolation: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarcgConfig {
    /// Stop once the energy norm of the gradient drops below this.
    pub tol: f64,
    pub max_iters: usize,
    pub line_search: LineSearchConfig,
    /// Inner solve tolerance is `min(inner_rtol_max, inner_rtol_factor * |g|_a)`,
    /// floored at `inner_rtol_min`.
    pub inner_rtol_max: f64,
    pub inner_rtol_factor: f64,
    pub inner_rtol_min: f64,
}

impl Default for EarcgConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 30_000,
            line_search: LineSearchConfig::default(),
            inner_rtol_max: 1e-2,
            inner_rtol_factor: 0.1,
            inner_rtol_min: 1e-12,
        }
    }
}

impl EarcgConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidParams(format!(
                "need tol > 0 and max_iters >= 1 (tol = {}, max_iters = {})",
                self.tol, self.max_iters
            )));
        }
        if self.line_search.window == 0 {
            return Err(Error::InvalidParams("line-search window must be >= 1".into()));
        }
        Ok(())
    }

    fn inner_rtol(&self, gnorm: f64, tightening: f64) -> f64 {
        (self.inner_rtol_factor * tightening * gnorm)
            .min(self.inner_rtol_max)
            .max(self.inner_rtol_min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterEvent {
    Plain,
    NnApplied,
    NnRejected,
    NnForced,
}

/// One line of the trace. `k = 0` describes the initial guess.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub k: usize,
    pub energy: f64,
    /// Accumulated energy decrements since the start of the run.
    pub energy_level: f64,
    pub gnorm: f64,
    pub tau: f64,
    pub beta: f64,
    /// Fletcher–Reeves ratio of this step (`beta <= fr` always).
    pub fr: f64,
    pub backtracks: usize,
    pub restarted: bool,
    pub inner_iterations: usize,
    pub wall_seconds: f64,
    pub event: IterEvent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    Stagnated,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterRecord>,
    pub accel_events: Vec<AccelEvent>,
    pub warnings: Vec<String>,
    pub termination: Termination,
    pub iterations: usize,
    pub final_energy: f64,
    pub final_lambda: f64,
    pub final_gnorm: f64,
    pub wall_seconds: f64,
}

impl RunTrace {
    /// JSON-lines: one record per line.
    pub fn records_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// What the callback sees after every iterate.
pub struct IterationView<'a> {
    pub k: usize,
    pub state: &'a State,
    pub gradient: &'a TangentField,
    pub gnorm: f64,
    pub tau: f64,
    pub energy: f64,
}

#[derive(Clone, Debug)]
pub struct LineSearchOutcome {
    pub tau: f64,
    pub state: State,
    pub delta_energy: f64,
    pub backtracks: usize,
}

/// Nonmonotone Armijo backtracking on `f(tau) = E(R(phi + tau eta))`.
///
/// Accepts the first `tau` with `f(tau) - f(0) <= ref_excess + c1 tau DE[eta]`,
/// where `ref_excess >= 0` is how far the nonmonotone reference sits above
/// `f(0)`. Trial steps shrink by quadratic interpolation, clamped to
/// `[shrink_min, shrink_max]`. Fails with [`Error::LineSearchStagnation`] when
/// `eta` is not a descent direction or all backtracks are used up.
pub fn line_search(
    op: &GpeOperator,
    mc: &MetricContext,
    eta: &TangentField,
    tau_init: f64,
    ref_excess: f64,
    cfg: &LineSearchConfig,
) -> Result<LineSearchOutcome> {
    let slope = mc.directional_derivative(eta);
    if !(slope < 0.0) {
        return Err(Error::LineSearchStagnation { backtracks: 0 });
    }
    let phi = mc.state();
    let eta_sq = eta.norm_sqr();
    let mut tau = if tau_init > 0.0 && tau_init.is_finite() { tau_init } else { 1.0 };
    for backtracks in 0..=cfg.max_backtracks {
        let (state, df) = trial(op, phi, eta, eta_sq, tau)?;
        if df.is_finite() && df <= ref_excess + cfg.c1 * tau * slope {
            if backtracks == 0 && cfg.max_extrapolation > 1.0 {
                if let Some(better) = extrapolate(op, phi, eta, eta_sq, tau, slope, df, ref_excess, cfg)? {
                    return Ok(better);
                }
            }
            return Ok(LineSearchOutcome { tau, state, delta_energy: df, backtracks });
        }
        let denom = 2.0 * (df - slope * tau);
        let factor = if df.is_finite() && denom > 0.0 {
            (-slope * tau / denom).clamp(cfg.shrink_min, cfg.shrink_max)
        } else {
            cfg.shrink_min
        };
        tau *= factor;
    }
    Err(Error::LineSearchStagnation { backtracks: cfg.max_backtracks })
}

/// `R(phi + tau eta) - phi` and the corresponding energy change, computed
/// without cancellation: `1/s - 1 = -tau²|eta|² / (s (1 + s))`, `s = |phi + tau eta|`.
fn trial(op: &GpeOperator, phi: &State, eta: &TangentField, eta_sq: f64, tau: f64) -> Result<(State, f64)> {
    let state = retract(phi, &(eta.as_field() * tau))?;
    let s = (1.0 + tau * tau * eta_sq).sqrt();
    let mut delta = eta.as_field() * (tau / s);
    delta.axpy(-tau * tau * eta_sq / (s * (1.0 + s)), phi);
    let df = op.energy_difference(phi, &delta)?;
    Ok((state, df))
}

/// One trial at the minimizer of the quadratic through `f(0)`, `f'(0)` and
/// `f(tau)` when it lies well beyond `tau`. Kept only if it satisfies the
/// Armijo condition and lowers the energy further.
#[allow(clippy::too_many_arguments)]
fn extrapolate(
    op: &GpeOperator,
    phi: &State,
    eta: &TangentField,
    eta_sq: f64,
    tau: f64,
    slope: f64,
    df: f64,
    ref_excess: f64,
    cfg: &LineSearchConfig,
) -> Result<Option<LineSearchOutcome>> {
    let curvature = 2.0 * (df - slope * tau) / (tau * tau);
    if !(curvature > 0.0) {
        return Ok(None);
    }
    let target = (-slope / curvature).min(cfg.max_extrapolation * tau);
    if !(target > 1.5 * tau) {
        return Ok(None);
    }
    let (state, df_ext) = trial(op, phi, eta, eta_sq, target)?;
    if df_ext.is_finite() && df_ext < df && df_ext <= ref_excess + cfg.c1 * target * slope {
        Ok(Some(LineSearchOutcome { tau: target, state, delta_energy: df_ext, backtracks: 0 }))
    } else {
        Ok(None)
    }
}

/// Result of one outer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub tau: f64,
    pub beta: f64,
    pub fr: f64,
    pub backtracks: usize,
    pub restarted: bool,
}

/// Steppable EARCG state machine. [`earcg_solve`] drives it to convergence;
/// the accelerator drives it step by step and swaps iterates in between.
pub struct Earcg {
    op: Arc<GpeOperator>,
    cfg: EarcgConfig,
    mc: MetricContext,
    g: TangentField,
    gnorm: f64,
    eta: TangentField,
    tau: f64,
    energy: f64,
    level: f64,
    history: VecDeque<f64>,
    k: usize,
    start: Instant,
    trace: Vec<IterRecord>,
    warnings: Vec<String>,
    accel_events: Vec<AccelEvent>,
    inner_first: usize,
    /// Extra factor on the inner tolerance; shrinks whenever an inexact
    /// gradient stalls the line search.
    tightening: f64,
}

impl Earcg {
    pub fn new(phi0: State, params: &GpeParams, cfg: EarcgConfig) -> Result<Self> {
        let op = Arc::new(GpeOperator::with_grid(*params, phi0.grid().clone())?);
        Self::with_operator(op, phi0, cfg)
    }

    pub fn with_operator(op: Arc<GpeOperator>, phi0: State, cfg: EarcgConfig) -> Result<Self> {
        cfg.validate()?;
        let start = Instant::now();
        let mc = MetricContext::new(&op, phi0, cfg.inner_rtol_max, None)?;
        let g = mc.gradient();
        let gnorm = mc.energy_norm(&g)?;
        let energy = op.energy(mc.state())?;
        let eta = TangentField::from_field_unchecked(-g.as_field());
        let mut s = Self {
            op,
            cfg,
            g,
            gnorm,
            eta,
            tau: 1.0,
            energy,
            level: 0.0,
            history: VecDeque::from([0.0]),
            k: 0,
            start,
            trace: Vec::new(),
            warnings: Vec::new(),
            accel_events: Vec::new(),
            inner_first: mc.inner_iterations(),
            tightening: 1.0,
            mc,
        }
        .refine_initial()?;
        let inner = s.inner_first;
        s.push_record(StepInfo { tau: 0.0, beta: 0.0, fr: 0.0, backtracks: 0, restarted: false }, inner, IterEvent::Plain);
        Ok(s)
    }

    pub fn operator(&self) -> &Arc<GpeOperator> {
        &self.op
    }

    pub fn config(&self) -> &EarcgConfig {
        &self.cfg
    }

    pub fn state(&self) -> &State {
        self.mc.state()
    }

    pub fn gradient(&self) -> &TangentField {
        &self.g
    }

    pub fn gnorm(&self) -> f64 {
        self.gnorm
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn lambda(&self) -> f64 {
        self.mc.lambda()
    }

    pub fn metric(&self) -> &MetricContext {
        &self.mc
    }

    pub fn iterations(&self) -> usize {
        self.k
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn is_converged(&self) -> bool {
        self.gnorm < self.cfg.tol
    }

    pub fn elapsed_seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub fn records(&self) -> &[IterRecord] {
        &self.trace
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn push_accel_event(&mut self, event: AccelEvent) {
        self.accel_events.push(event);
    }

    /// Tags the most recent record.
    pub fn tag_last(&mut self, event: IterEvent) {
        if let Some(r) = self.trace.last_mut() {
            r.event = event;
        }
    }

    fn view(&self) -> IterationView<'_> {
        IterationView {
            k: self.k,
            state: self.mc.state(),
            gradient: &self.g,
            gnorm: self.gnorm,
            tau: self.tau,
            energy: self.energy,
        }
    }

    fn push_record(&mut self, info: StepInfo, inner_iterations: usize, event: IterEvent) {
        self.trace.push(IterRecord {
            k: self.k,
            energy: self.energy,
            energy_level: self.level,
            gnorm: self.gnorm,
            tau: info.tau,
            beta: info.beta,
            fr: info.fr,
            backtracks: info.backtracks,
            restarted: info.restarted,
            inner_iterations,
            wall_seconds: self.start.elapsed().as_secs_f64(),
            event,
        });
    }

    /// The first inverse solve used the loosest tolerance; redo it if the
    /// initial gradient turned out small enough to need a tighter one.
    fn refine_initial(mut self) -> Result<Self> {
        let rtol = self.cfg.inner_rtol(self.gnorm, self.tightening);
        if rtol < self.cfg.inner_rtol_max {
            let state = self.mc.state().clone();
            let warm = self.mc.inverse_applied().clone();
            self.mc = MetricContext::new(&self.op, state, rtol, Some(&warm))?;
            self.inner_first += self.mc.inner_iterations();
            self.g = self.mc.gradient();
            self.gnorm = self.mc.energy_norm(&self.g)?;
            self.eta = TangentField::from_field_unchecked(-self.g.as_field());
        }
        Ok(self)
    }

    fn nonmonotone_excess(&self) -> f64 {
        let reference = self.history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (reference - self.level).max(0.0)
    }

    fn steepest(&self) -> TangentField {
        TangentField::from_field_unchecked(-self.g.as_field())
    }

    /// Recomputes the gradient at the current iterate with a 100x tighter
    /// inner tolerance. Returns `false` once the floor has been reached.
    fn tighten(&mut self) -> Result<bool> {
        let current = self.cfg.inner_rtol(self.gnorm, self.tightening);
        if current <= self.cfg.inner_rtol_min {
            return Ok(false);
        }
        self.tightening *= 0.01;
        let rtol = self.cfg.inner_rtol(self.gnorm, self.tightening);
        let state = self.mc.state().clone();
        let mc = MetricContext::new(&self.op, state, rtol, Some(self.mc.inverse_applied()))?;
        self.g = mc.gradient();
        self.gnorm = mc.energy_norm(&self.g)?;
        self.mc = mc;
        self.eta = self.steepest();
        Ok(true)
    }

    fn search(&mut self, excess: f64, restarted: &mut bool) -> Result<Option<LineSearchOutcome>> {
        let ls_cfg = self.cfg.line_search;
        match line_search(&self.op, &self.mc, &self.eta, self.tau, excess, &ls_cfg) {
            Ok(ls) => return Ok(Some(ls)),
            Err(Error::LineSearchStagnation { .. }) => {}
            Err(e) => return Err(e),
        }
        // Steepest descent from a unit step, then with ever more accurate
        // gradients until the inner solver's floor.
        loop {
            if *restarted {
                if !self.tighten()? {
                    return Ok(None);
                }
                if let Some(r) = self.trace.last_mut() {
                    r.gnorm = self.gnorm;
                }
                if self.is_converged() {
                    return Ok(None);
                }
            }
            self.eta = self.steepest();
            *restarted = true;
            match line_search(&self.op, &self.mc, &self.eta, 1.0, excess, &ls_cfg) {
                Ok(ls) => return Ok(Some(ls)),
                Err(Error::LineSearchStagnation { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }

    /// Performs one outer iteration. Returns `Ok(None)` when no step was
    /// taken: either a more accurate gradient showed the iterate is already
    /// converged, or the line search stagnated along steepest descent even
    /// with the tightest inner tolerance.
    pub fn step(&mut self) -> Result<Option<StepInfo>> {
        let excess = self.nonmonotone_excess();
        let ls_cfg = self.cfg.line_search;
        let mut restarted = false;

        // Direction reset when eta is not a (numerically) descent direction.
        let slope = self.mc.directional_derivative(&self.eta);
        let eta_norm = self.mc.energy_norm(&self.eta)?;
        if !(slope < -1e-14 * eta_norm * self.gnorm) {
            self.eta = self.steepest();
            restarted = true;
        }

        let Some(ls) = self.search(excess, &mut restarted)? else {
            return Ok(None);
        };
        let step_vec = self.eta.as_field() * ls.tau;
        let old_state = self.mc.state().clone();
        let transported_g = transport(&old_state, &step_vec, &self.g)?;
        let transported_eta = transport(&old_state, &step_vec, &self.eta)?;

        let rtol = self.cfg.inner_rtol(self.gnorm, self.tightening);
        let warm = self.mc.inverse_applied().clone();
        let mc_new = MetricContext::new(&self.op, ls.state, rtol, Some(&warm))?;
        let g_new = mc_new.gradient();
        let a_g_new = mc_new.hamiltonian().apply(&g_new)?;
        let gg_new = g_new.dot(&a_g_new);
        if gg_new < 0.0 {
            return Err(Error::NotCoercive { curvature: gg_new });
        }
        let gg_old = self.gnorm * self.gnorm;
        let fr = gg_new / gg_old;
        let pr = (gg_new - a_g_new.dot(&transported_g)) / gg_old;
        let mut beta = fr.min(pr).max(0.0);
        if !beta.is_finite() {
            beta = 0.0;
        }

        let mut eta_new = transported_eta.scaled(beta);
        eta_new.axpy(-1.0, &g_new);

        self.level += ls.delta_energy;
        self.history.push_back(self.level);
        while self.history.len() > ls_cfg.window {
            self.history.pop_front();
        }
        self.energy = self.op.energy(mc_new.state())?;
        self.tau = ls.tau;
        self.gnorm = gg_new.sqrt();
        self.g = g_new;
        self.eta = eta_new;
        let inner = mc_new.inner_iterations();
        self.mc = mc_new;
        self.k += 1;

        let info = StepInfo { tau: ls.tau, beta, fr, backtracks: ls.backtracks, restarted };
        self.push_record(info, inner, IterEvent::Plain);
        Ok(Some(info))
    }

    /// Swaps in a new iterate and forgets the conjugate-gradient memory:
    /// `eta = -g`, `tau = 1`, nonmonotone window restarted.
    pub fn replace_state(&mut self, state: State) -> Result<()> {
        self.op.check_field(&state)?;
        let rtol = self.cfg.inner_rtol(self.gnorm, self.tightening);
        let mc = MetricContext::new(&self.op, state, rtol, Some(self.mc.inverse_applied()))?;
        let g = mc.gradient();
        let gnorm = mc.energy_norm(&g)?;
        let energy = self.op.energy(mc.state())?;
        self.level += energy - self.energy;
        self.history.clear();
        self.history.push_back(self.level);
        self.energy = energy;
        self.mc = mc;
        self.g = g;
        self.gnorm = gnorm;
        self.eta = self.steepest();
        self.tau = 1.0;
        if let Some(r) = self.trace.last_mut() {
            r.energy = energy;
            r.energy_level = self.level;
            r.gnorm = gnorm;
        }
        Ok(())
    }

    pub fn finish(self, termination: Termination) -> (State, RunTrace) {
        let wall_seconds = self.start.elapsed().as_secs_f64();
        let trace = RunTrace {
            records: self.trace,
            accel_events: self.accel_events,
            warnings: self.warnings,
            termination,
            iterations: self.k,
            final_energy: self.energy,
            final_lambda: self.mc.lambda(),
            final_gnorm: self.gnorm,
            wall_seconds,
        };
        (self.mc.state().clone(), trace)
    }

    /// Runs until convergence, the iteration cap, or stagnation, calling
    /// `callback` on the initial iterate and after every step.
    pub fn run(mut self, callback: &mut dyn FnMut(&IterationView<'_>)) -> Result<(State, RunTrace)> {
        callback(&self.view());
        loop {
            if self.is_converged() {
                return Ok(self.finish(Termination::Converged));
            }
            if self.k >= self.cfg.max_iters {
                return Ok(self.finish(Termination::MaxIterations));
            }
            match self.step()? {
                Some(_) => callback(&self.view()),
                None if self.is_converged() => return Ok(self.finish(Termination::Converged)),
                None => {
                    self.warn(format!("line search stagnated at k = {}", self.k));
                    return Ok(self.finish(Termination::Stagnated));
                }
            }
        }
    }
}

/// Runs EARCG from `phi0` to `cfg.tol`.
pub fn earcg_solve(phi0: State, params: &GpeParams, cfg: EarcgConfig) -> Result<(State, RunTrace)> {
    Earcg::new(phi0, params, cfg)?.run(&mut |_| {})
}

pub fn earcg_solve_with(
    phi0: State,
    params: &GpeParams,
    cfg: EarcgConfig,
    callback: &mut dyn FnMut(&IterationView<'_>),
) -> Result<(State, RunTrace)> {
    Earcg::new(phi0, params, cfg)?.run(callback)
}
