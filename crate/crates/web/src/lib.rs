//! wasm-bindgen bindings for the browser demo in `www/`.

use wasm_bindgen::prelude::*;

use gpe_core::accelerator::{norm_error_indicator, AccelConfig};
use gpe_core::earcg::Earcg;
use gpe_core::plot::{density, density_rgb};
use gpe_core::{EarcgConfig, GpeParams, State};

fn js(e: gpe_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// An EARCG run advanced a few iterations per animation frame.
#[wasm_bindgen]
pub struct Demo {
    params: GpeParams,
    solver: Earcg,
    stalled: bool,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, omega: f64, kappa: f64, seed: u64) -> Result<Demo, JsError> {
        let params = GpeParams::new(20.0, n, 1.0, 1.0, omega, kappa).map_err(js)?;
        let solver = start(&params, seed)?;
        Ok(Demo { params, solver, stalled: false })
    }

    pub fn reset(&mut self, seed: u64) -> Result<(), JsError> {
        self.solver = start(&self.params, seed)?;
        self.stalled = false;
        Ok(())
    }

    /// Runs up to `count` iterations; returns true once finished.
    pub fn step(&mut self, count: usize) -> Result<bool, JsError> {
        for _ in 0..count {
            if self.done() {
                break;
            }
            if self.solver.step().map_err(js)?.is_none() {
                self.stalled = true;
            }
        }
        Ok(self.done())
    }

    pub fn done(&self) -> bool {
        self.stalled || self.solver.is_converged()
    }

    pub fn energy(&self) -> f64 {
        self.solver.energy()
    }

    pub fn gnorm(&self) -> f64 {
        self.solver.gnorm()
    }

    pub fn iterations(&self) -> usize {
        self.solver.iterations()
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    /// RGBA pixels of `|phi|²`, `n` by `n`, top row = largest x2.
    pub fn density_rgba(&self) -> Vec<u8> {
        let rgb = density_rgb(&density(self.solver.state()), self.params.n, 1);
        rgb.chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
    }

    /// Indicator of the current iterate scaled by `factor`, the way a
    /// predictor with a norm error would return it.
    pub fn indicator(&self, factor: f64) -> f64 {
        norm_error_indicator(&(self.solver.state().as_field() * factor))
    }
}

fn start(params: &GpeParams, seed: u64) -> Result<Earcg, JsError> {
    let grid = params.grid().map_err(js)?;
    Earcg::new(State::random(grid, seed), params, EarcgConfig::with_tol(1e-8)).map_err(js)
}

/// Geometric tolerance schedule from `eps_max` down to `eps_min`.
#[wasm_bindgen]
pub fn tolerance_schedule(eps_min: f64, eps_max: f64, m: usize) -> Result<Vec<f64>, JsError> {
    gpe_core::dataset::tolerance_schedule(eps_min, eps_max, m).map_err(js)
}

/// Acceptance threshold of the indicator.
#[wasm_bindgen]
pub fn indicator_threshold() -> f64 {
    AccelConfig::default().e0
}
