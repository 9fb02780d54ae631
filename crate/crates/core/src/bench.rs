//! Paired classical/accelerated runs and the quality measures used to compare
//! them: iterations saved, wall time saved, and `impr_rho`, the relative
//! reduction of the L¹ density error achieved by the predictor.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accelerator::{accelerated_solve_with, doubles, AccelConfig, AccelEvent, Predictor, Trigger};
use crate::dataset::{plan_runs, ParamGroup};
use crate::earcg::{earcg_solve, EarcgConfig, RunTrace, Termination};
use crate::error::{Error, Result};
use crate::field::{Field, State};
use crate::hamiltonian::GpeParams;
use crate::nn::UNet;

/// `∫ | |u|² - |v|² | dx` on the grid.
pub fn density_l1_distance(u: &Field, v: &Field) -> Result<f64> {
    u.check_same_grid(v)?;
    let (a, b) = (u.to_real(), v.to_real());
    let sum: f64 = a.iter().zip(&b).map(|(x, y)| (x.norm_sqr() - y.norm_sqr()).abs()).sum();
    Ok(sum * u.grid().cell_area())
}

/// `(|rho_in - rho*| - |rho_out - rho*|) / |rho_in - rho*|` in L¹.
/// `None` when the input density already equals the reference.
pub fn impr_rho(phi_in: &Field, phi_out: &Field, phi_ref: &Field) -> Result<Option<f64>> {
    let before = density_l1_distance(phi_in, phi_ref)?;
    let after = density_l1_distance(phi_out, phi_ref)?;
    Ok((before > 0.0).then(|| (before - after) / before))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Strategy,
    RandomApply,
}

impl std::str::FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strategy" => Ok(Self::Strategy),
            "random_apply" | "random-apply" => Ok(Self::RandomApply),
            _ => Err(Error::InvalidParams(format!("unknown mode {s:?} (strategy, random_apply)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub id: u64,
    pub seed: u64,
    pub params: GpeParams,
}

/// `count` cases drawn from `group`.
pub fn sample_cases(group: ParamGroup, count: usize, seed: u64, n: usize) -> Result<Vec<BenchCase>> {
    Ok(plan_runs(group, count, seed, n)?
        .into_iter()
        .map(|p| BenchCase { id: p.run_id, seed: p.seed, params: p.params })
        .collect())
}

/// What produces the candidate in the accelerated run.
#[derive(Clone, Debug)]
pub enum BenchModel {
    Network(Arc<UNet>),
    /// Returns the classical run's converged state.
    Oracle,
    /// Returns the current iterate unchanged.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub wall_seconds: f64,
    pub energy: f64,
    pub lambda: f64,
    pub gnorm: f64,
    pub converged: bool,
}

impl RunSummary {
    pub fn from_trace(t: &RunTrace) -> Self {
        Self {
            iterations: t.iterations,
            wall_seconds: t.wall_seconds,
            energy: t.final_energy,
            lambda: t.final_lambda,
            gnorm: t.final_gnorm,
            converged: t.termination == Termination::Converged,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub case_id: u64,
    pub params: GpeParams,
    pub seed: u64,
    pub mode: BenchMode,
    pub classical: RunSummary,
    pub accelerated: RunSummary,
    /// Threshold sampled for the random-application baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps1: Option<f64>,
    /// Against the accelerated run's final state; `None` without an application.
    pub impr_rho: Option<f64>,
    pub same_minimum: bool,
    pub events: Vec<AccelEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl BenchRecord {
    /// `100 (1 - accelerated / classical)` iterations.
    pub fn iterations_saved_pct(&self) -> f64 {
        100.0 * (1.0 - self.accelerated.iterations as f64 / self.classical.iterations.max(1) as f64)
    }

    pub fn wall_saved_pct(&self) -> f64 {
        100.0 * (1.0 - self.accelerated.wall_seconds / self.classical.wall_seconds)
    }
}

/// Runs the classical and the accelerated solve from the same initial state.
/// The random-application threshold is drawn log-uniformly from the window
/// using the case seed.
pub fn bench_case(
    case: &BenchCase,
    model: &BenchModel,
    mode: BenchMode,
    accel: &AccelConfig,
    earcg: EarcgConfig,
) -> Result<BenchRecord> {
    let grid = case.params.grid()?;
    let phi0 = State::random(grid, case.seed);
    let cfg = EarcgConfig { tol: accel.eps2, ..earcg };
    let (classical_state, classical) = earcg_solve(phi0.clone(), &case.params, cfg)?;

    let oracle;
    let predictor: &dyn Predictor = match model {
        BenchModel::Network(net) => net.as_ref(),
        BenchModel::Oracle => {
            oracle = doubles::Oracle(classical_state.into_field());
            &oracle
        }
        BenchModel::Identity => &doubles::Scaled(1.0),
    };
    let (trigger, eps1) = match mode {
        BenchMode::Strategy => (Trigger::Strategy, None),
        BenchMode::RandomApply => {
            let mut rng = ChaCha8Rng::seed_from_u64(case.seed ^ 0x5eed_e951);
            let t: f64 = rng.random();
            let eps1 = (accel.eps1_min.ln() + t * (accel.eps1_max.ln() - accel.eps1_min.ln())).exp();
            (Trigger::Threshold { eps1 }, Some(eps1))
        }
    };
    let run = accelerated_solve_with(phi0, &case.params, accel, cfg, predictor, trigger)?;

    let mut events = run.trace.accel_events.clone();
    let mut impr = None;
    if let Some(app) = &run.application {
        let reference = run.state.as_field();
        let pre = density_l1_distance(app.input.as_field(), reference)?;
        let post = density_l1_distance(app.output.as_field(), reference)?;
        if let Some(ev) = events.iter_mut().rev().find(|e| e.decision.is_application()) {
            ev.pre_density_error = Some(pre);
            ev.post_density_error = Some(post);
        }
        impr = impr_rho(app.input.as_field(), app.output.as_field(), reference)?;
    }
    let classical = RunSummary::from_trace(&classical);
    let accelerated = RunSummary::from_trace(&run.trace);
    Ok(BenchRecord {
        case_id: case.id,
        params: case.params,
        seed: case.seed,
        mode,
        same_minimum: (classical.energy - accelerated.energy).abs() < 1e-8,
        classical,
        accelerated,
        eps1,
        impr_rho: impr,
        events,
        warnings: run.trace.warnings,
    })
}

/// Mean and median of one measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self { count, mean: f64::NAN, median: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let median = if count % 2 == 1 { v[count / 2] } else { 0.5 * (v[count / 2 - 1] + v[count / 2]) };
        Self { count, mean, median }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub mode: BenchMode,
    pub cases: usize,
    pub iterations_saved_pct: Stat,
    pub wall_saved_pct: Stat,
    pub impr_rho: Stat,
    /// Percentage of cases with `impr_rho > 0`.
    pub improvement_rate_pct: f64,
    /// Percentage of cases with fewer accelerated than classical iterations.
    pub fewer_iterations_pct: f64,
    pub same_minimum_pct: f64,
}

/// Pure aggregation over records of one mode, in id order.
pub fn summarize(mode: BenchMode, records: &[BenchRecord]) -> BenchSummary {
    let mut rs: Vec<&BenchRecord> = records.iter().filter(|r| r.mode == mode).collect();
    rs.sort_by_key(|r| r.case_id);
    let cases = rs.len();
    let pct = |k: usize| if cases == 0 { f64::NAN } else { 100.0 * k as f64 / cases as f64 };
    let iters: Vec<f64> = rs.iter().map(|r| r.iterations_saved_pct()).collect();
    let wall: Vec<f64> = rs.iter().map(|r| r.wall_saved_pct()).collect();
    let impr: Vec<f64> = rs.iter().filter_map(|r| r.impr_rho).collect();
    BenchSummary {
        mode,
        cases,
        iterations_saved_pct: Stat::of(&iters),
        wall_saved_pct: Stat::of(&wall),
        impr_rho: Stat::of(&impr),
        improvement_rate_pct: pct(rs.iter().filter(|r| r.impr_rho.is_some_and(|v| v > 0.0)).count()),
        fewer_iterations_pct: pct(rs.iter().filter(|r| r.accelerated.iterations < r.classical.iterations).count()),
        same_minimum_pct: pct(rs.iter().filter(|r| r.same_minimum).count()),
    }
}

pub fn records_to_jsonl(records: &[BenchRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
}

pub fn records_from_jsonl(s: &str) -> Result<Vec<BenchRecord>> {
    s.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Header plus one row per summary.
pub fn summary_csv(summaries: &[BenchSummary]) -> String {
    let mut out = String::from(
        "mode,cases,iter_saved_mean,iter_saved_median,wall_saved_mean,wall_saved_median,\
         impr_rho_mean,impr_rho_median,improvement_rate_pct,fewer_iterations_pct,same_minimum_pct\n",
    );
    for s in summaries {
        let mode = serde_json::to_value(s.mode).expect("mode serializes");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            mode.as_str().unwrap_or_default(),
            s.cases,
            s.iterations_saved_pct.mean,
            s.iterations_saved_pct.median,
            s.wall_saved_pct.mean,
            s.wall_saved_pct.median,
            s.impr_rho.mean,
            s.impr_rho.median,
            s.improvement_rate_pct,
            s.fewer_iterations_pct,
            s.same_minimum_pct
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use num_complex::Complex64;

    fn gauss(grid: &Arc<Grid>, s: f64) -> Field {
        Field::from_fn(grid.clone(), |x1, x2| Complex64::new((-(x1 * x1 + x2 * x2) / (2.0 * s * s)).exp(), 0.0))
    }

    #[test]
    fn impr_rho_examples() {
        let grid = Grid::shared(20.0, 32).unwrap();
        let reference = State::normalized(gauss(&grid, 1.0)).unwrap();
        let input = State::normalized(gauss(&grid, 1.5)).unwrap();
        assert_eq!(impr_rho(&input, &reference, &reference).unwrap(), Some(1.0));
        assert_eq!(impr_rho(&input, &input, &reference).unwrap(), Some(0.0));
        assert_eq!(impr_rho(&reference, &input, &reference).unwrap(), None);

        // Output density error twice the input's: rho_out = rho* + 2 (rho_in - rho*),
        // clamped only where rounding noise in the far tails goes negative.
        let input = State::normalized(gauss(&grid, 1.1)).unwrap();
        let (ri, rr) = (input.to_real(), reference.to_real());
        let out: Vec<Complex64> = ri
            .iter()
            .zip(&rr)
            .map(|(a, b)| Complex64::new((2.0 * a.norm_sqr() - b.norm_sqr()).max(0.0).sqrt(), 0.0))
            .collect();
        let out = Field::from_real(grid.clone(), &out).unwrap();
        let v = impr_rho(&input, &out, &reference).unwrap().unwrap();
        assert!((v + 1.0).abs() < 1e-10, "{v}");
    }

    #[test]
    fn stat_mean_median() {
        let s = Stat::of(&[3.0, 1.0, 2.0, 10.0]);
        assert_eq!((s.count, s.mean, s.median), (4, 4.0, 2.5));
        assert!(Stat::of(&[]).mean.is_nan());
    }

    #[test]
    fn summary_recomputes_from_jsonl() {
        let case = BenchCase { id: 3, seed: 12, params: GpeParams::new(20.0, 32, 1.0, 1.0, 0.0, 0.0).unwrap() };
        let accel = AccelConfig::default();
        let records: Vec<_> = [BenchMode::Strategy, BenchMode::RandomApply]
            .into_iter()
            .map(|m| bench_case(&case, &BenchModel::Oracle, m, &accel, EarcgConfig::default()).unwrap())
            .collect();
        let back = records_from_jsonl(&records_to_jsonl(&records)).unwrap();
        assert_eq!(back, records);
        for m in [BenchMode::Strategy, BenchMode::RandomApply] {
            assert_eq!(
                serde_json::to_string(&summarize(m, &back)).unwrap(),
                serde_json::to_string(&summarize(m, &records)).unwrap()
            );
        }
        let strat = &records[0];
        assert!(strat.same_minimum);
        assert!(strat.accelerated.iterations < strat.classical.iterations);
        assert!(strat.impr_rho.unwrap() > 0.99);
        assert!(records[1].eps1.is_some());
    }
}
