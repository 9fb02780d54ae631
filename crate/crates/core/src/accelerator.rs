//! Three-phase hybrid solve: EARCG down to `eps1_max`, then try the learned
//! predictor every `n_e` iterations inside `[eps1_min, eps1_max]` and keep
//! the first candidate whose norm is within `e0` of one (or apply it
//! unconditionally at `eps1_min`), then EARCG again down to `eps2`.

use serde::{Deserialize, Serialize};

use crate::earcg::{Earcg, EarcgConfig, IterEvent, RunTrace, Termination};
use crate::error::{Error, Result};
use crate::field::{Field, State, TangentField};
use crate::hamiltonian::GpeParams;
use crate::nn::UNet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccelConfig {
    pub eps1_min: f64,
    pub eps1_max: f64,
    pub eps2: f64,
    pub n_e: usize,
    pub e0: f64,
}

impl Default for AccelConfig {
    fn default() -> Self {
        Self { eps1_min: 1e-4, eps1_max: 1e-1, eps2: 1e-8, n_e: 5, e0: 5e-3 }
    }
}

impl AccelConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 < self.eps2 && self.eps2 < self.eps1_min && self.eps1_min < self.eps1_max;
        if !ordered || self.n_e == 0 || !(self.e0 > 0.0) {
            return Err(Error::InvalidParams(format!(
                "need 0 < eps2 < eps1_min < eps1_max, n_e >= 1, e0 > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelDecision {
    Accepted,
    Rejected,
    Forced,
    /// Applied without consulting the indicator (random-application baseline).
    Unconditional,
}

impl AccelDecision {
    pub fn is_application(self) -> bool {
        !matches!(self, AccelDecision::Rejected)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccelEvent {
    pub k: usize,
    pub gnorm: f64,
    pub indicator: f64,
    pub decision: AccelDecision,
    pub pre_energy: f64,
    /// Energy of the normalized candidate; `None` when it was not used.
    pub post_energy: Option<f64>,
    /// L¹ density errors against the final state, filled in by the bench.
    pub pre_density_error: Option<f64>,
    pub post_density_error: Option<f64>,
}

/// `|1 - |candidate||`.
pub fn norm_error_indicator(candidate: &Field) -> f64 {
    (1.0 - candidate.norm()).abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Invoke {
    Skip,
    Try,
    Force,
}

/// `k_in_phase2` counts iterates since the gradient norm first dropped to
/// `eps1_max` or below.
pub fn should_invoke(k_in_phase2: usize, gnorm: f64, already_applied: bool, cfg: &AccelConfig) -> Invoke {
    if already_applied {
        Invoke::Skip
    } else if gnorm < cfg.eps1_min {
        Invoke::Force
    } else if gnorm <= cfg.eps1_max && k_in_phase2.is_multiple_of(cfg.n_e) {
        Invoke::Try
    } else {
        Invoke::Skip
    }
}

/// Produces an unnormalized candidate from the current iterate and gradient.
pub trait Predictor {
    fn predict(&self, phi: &State, g: &TangentField) -> Result<Field>;
}

impl Predictor for UNet {
    fn predict(&self, phi: &State, g: &TangentField) -> Result<Field> {
        self.predict_field(phi, g)
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, phi: &State, g: &TangentField) -> Result<Field> {
        (**self).predict(phi, g)
    }
}

/// Predictors with known outputs, for tests and benchmark baselines.
pub mod doubles {
    use super::*;

    /// Always returns a fixed field, typically a converged ground state.
    #[derive(Clone, Debug)]
    pub struct Oracle(pub Field);

    impl Predictor for Oracle {
        fn predict(&self, phi: &State, _g: &TangentField) -> Result<Field> {
            phi.check_same_grid(&self.0)?;
            Ok(self.0.clone())
        }
    }

    /// Returns `factor * phi`.
    #[derive(Clone, Copy, Debug)]
    pub struct Scaled(pub f64);

    impl Predictor for Scaled {
        fn predict(&self, phi: &State, _g: &TangentField) -> Result<Field> {
            Ok(phi.as_field() * self.0)
        }
    }

    /// Always fails, like a model that cannot be evaluated.
    #[derive(Clone, Copy, Debug)]
    pub struct Failing;

    impl Predictor for Failing {
        fn predict(&self, _phi: &State, _g: &TangentField) -> Result<Field> {
            Err(Error::Model("predictor unavailable".into()))
        }
    }
}

/// When to use the predictor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Trigger {
    /// Windowed tries gated by the indicator, forced at `eps1_min`.
    Strategy,
    /// Apply once, unconditionally, when the gradient norm first drops below `eps1`.
    Threshold { eps1: f64 },
}

/// The iterate handed to the predictor and the normalized candidate that
/// replaced it.
#[derive(Clone, Debug)]
pub struct Application {
    pub input: State,
    pub output: State,
}

#[derive(Clone, Debug)]
pub struct AccelRun {
    pub state: State,
    pub trace: RunTrace,
    pub application: Option<Application>,
    /// Iterations spent before the gradient first entered the window.
    pub phase1_iterations: Option<usize>,
}

/// Hybrid solve with the indicator-gated strategy. `earcg_cfg.tol` is
/// replaced by `accel_cfg.eps2`.
pub fn accelerated_solve(
    phi0: State,
    params: &GpeParams,
    accel_cfg: &AccelConfig,
    earcg_cfg: EarcgConfig,
    model: &dyn Predictor,
) -> Result<(State, RunTrace)> {
    let run = accelerated_solve_with(phi0, params, accel_cfg, earcg_cfg, model, Trigger::Strategy)?;
    Ok((run.state, run.trace))
}

pub fn accelerated_solve_with(
    phi0: State,
    params: &GpeParams,
    accel_cfg: &AccelConfig,
    earcg_cfg: EarcgConfig,
    model: &dyn Predictor,
    trigger: Trigger,
) -> Result<AccelRun> {
    accel_cfg.validate()?;
    let cfg = EarcgConfig { tol: accel_cfg.eps2, ..earcg_cfg };
    let mut solver = Earcg::new(phi0, params, cfg)?;
    let mut applied = false;
    let mut phase2_start: Option<usize> = None;
    let mut application = None;

    let termination = loop {
        if solver.is_converged() {
            break Termination::Converged;
        }
        if solver.iterations() >= cfg.max_iters {
            break Termination::MaxIterations;
        }
        if !applied {
            let gnorm = solver.gnorm();
            if phase2_start.is_none() && gnorm <= accel_cfg.eps1_max {
                phase2_start = Some(solver.iterations());
            }
            let action = match trigger {
                Trigger::Strategy => {
                    let k2 = phase2_start.map_or(0, |s| solver.iterations() - s);
                    should_invoke(k2, gnorm, false, accel_cfg)
                }
                Trigger::Threshold { eps1 } if gnorm < eps1 => Invoke::Force,
                Trigger::Threshold { .. } => Invoke::Skip,
            };
            if action != Invoke::Skip {
                let unconditional = matches!(trigger, Trigger::Threshold { .. });
                match invoke(&mut solver, model, accel_cfg, action == Invoke::Force, unconditional) {
                    Ok(Some(app)) => {
                        applied = true;
                        application = Some(app);
                    }
                    Ok(None) => {
                        // Rejected, or a forced candidate that could not be used.
                        if action == Invoke::Force {
                            applied = true;
                        }
                    }
                    Err(e) => {
                        solver.warn(format!("predictor failed at k = {}: {e}; continuing without it", solver.iterations()));
                        applied = true;
                    }
                }
                if solver.is_converged() {
                    break Termination::Converged;
                }
            }
        }
        match solver.step()? {
            Some(_) => {}
            None if solver.is_converged() => break Termination::Converged,
            None => {
                let k = solver.iterations();
                solver.warn(format!("line search stagnated at k = {k}"));
                break Termination::Stagnated;
            }
        }
    };
    let (state, trace) = solver.finish(termination);
    Ok(AccelRun { state, trace, application, phase1_iterations: phase2_start })
}

/// One predictor call. Returns the application when the iterate was replaced.
/// Predictor failures are returned as errors; an unusable forced candidate is
/// logged and yields `Ok(None)`.
fn invoke(
    solver: &mut Earcg,
    model: &dyn Predictor,
    cfg: &AccelConfig,
    force: bool,
    unconditional: bool,
) -> Result<Option<Application>> {
    let k = solver.iterations();
    let gnorm = solver.gnorm();
    let pre_energy = solver.energy();
    let candidate = model.predict(solver.state(), solver.gradient())?;
    solver.operator().check_field(&candidate)?;
    if !candidate.is_finite() {
        return Err(Error::Model("non-finite prediction".into()));
    }
    let indicator = norm_error_indicator(&candidate);
    let decision = if unconditional {
        AccelDecision::Unconditional
    } else if indicator < cfg.e0 {
        AccelDecision::Accepted
    } else if force {
        AccelDecision::Forced
    } else {
        AccelDecision::Rejected
    };
    let mut event = AccelEvent {
        k,
        gnorm,
        indicator,
        decision,
        pre_energy,
        post_energy: None,
        pre_density_error: None,
        post_density_error: None,
    };
    if decision == AccelDecision::Rejected {
        solver.tag_last(IterEvent::NnRejected);
        solver.push_accel_event(event);
        return Ok(None);
    }
    let tag = if decision == AccelDecision::Forced { IterEvent::NnForced } else { IterEvent::NnApplied };
    solver.tag_last(tag);
    let input = solver.state().clone();
    let replaced = State::normalized(candidate).and_then(|s| solver.replace_state(s.clone()).map(|_| s));
    match replaced {
        Ok(output) => {
            event.post_energy = Some(solver.energy());
            solver.push_accel_event(event);
            Ok(Some(Application { input, output }))
        }
        Err(e) => {
            solver.warn(format!("candidate at k = {k} unusable ({e}); continuing with EARCG"));
            solver.push_accel_event(event);
            Ok(None)
        }
    }
}
