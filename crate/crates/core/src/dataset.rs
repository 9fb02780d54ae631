//! Training data: EARCG runs from random states, with `(phi, g)` captured the
//! first time the gradient norm drops below each of a log-spaced set of
//! tolerances, paired with the converged state.
//!
//! GPDS file layout, little-endian:
//!
//! ```text
//! b"GPDS" | u32 version = 1 | u64 sample count | u32 n
//! per sample:
//!   f64 v1, v2, omega, kappa, a | f64 tolerance | u64 run id | u8 j (1-based)
//!   phi_j, g_j, phi_star: each n*n*2 f32, laid out as nn::prepare_input
//!   (row-major, channel fastest, channels [re, im])
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::earcg::{Earcg, EarcgConfig, Termination};
use crate::error::{Error, Result};
use crate::field::{Field, State};
use crate::hamiltonian::GpeParams;
use crate::nn::field_channels;

pub const DATASET_MAGIC: [u8; 4] = *b"GPDS";
pub const DATASET_VERSION: u32 = 1;
const HEADER_BYTES: usize = 20;
const META_BYTES: usize = 5 * 8 + 8 + 8 + 1;

/// `m` tolerances from `eps_max` down to `eps_min`, equally spaced in log:
/// `exp((1 - t) ln eps_max + t ln eps_min)` with `t = (j - 1) / (m - 1)`.
/// The endpoints are returned exactly.
pub fn tolerance_schedule(eps_min: f64, eps_max: f64, m: usize) -> Result<Vec<f64>> {
    if !(eps_min > 0.0 && eps_min < eps_max && eps_max.is_finite()) || m < 2 {
        return Err(Error::InvalidParams(format!(
            "need 0 < eps_min < eps_max and m >= 2 (got {eps_min}, {eps_max}, {m})"
        )));
    }
    let (lmin, lmax) = (eps_min.ln(), eps_max.ln());
    Ok((0..m)
        .map(|i| match i {
            0 => eps_max,
            i if i == m - 1 => eps_min,
            i => {
                let t = i as f64 / (m - 1) as f64;
                ((1.0 - t) * lmax + t * lmin).exp()
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// kappa in [200, 1000], omega in [0.8, 1.6], v1 in [1, 2].
    Broad,
    /// kappa in [600, 1000], omega in [1.2, 1.6], v1 in [1, 2].
    Hard,
    /// Desk-scale regime: kappa in [50, 200], omega in [0.3, 0.6], v1 in [1, 2].
    Mild,
}

impl ParamGroup {
    /// `(kappa, omega, v1)` ranges.
    pub fn ranges(self) -> [(f64, f64); 3] {
        match self {
            ParamGroup::Broad => [(200.0, 1000.0), (0.8, 1.6), (1.0, 2.0)],
            ParamGroup::Hard => [(600.0, 1000.0), (1.2, 1.6), (1.0, 2.0)],
            ParamGroup::Mild => [(50.0, 200.0), (0.3, 0.6), (1.0, 2.0)],
        }
    }
}

impl std::str::FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "broad" => Ok(Self::Broad),
            "hard" => Ok(Self::Hard),
            "mild" => Ok(Self::Mild),
            _ => Err(Error::InvalidParams(format!("unknown group {s:?} (broad, hard, mild)"))),
        }
    }
}

/// Uniform draw from the group's box with `a = 20`, `v2 = 1`.
pub fn sample_params<R: Rng + ?Sized>(rng: &mut R, group: ParamGroup, n: usize) -> Result<GpeParams> {
    let [(k0, k1), (w0, w1), (v0, v1)] = group.ranges();
    let kappa = rng.random_range(k0..=k1);
    let omega = rng.random_range(w0..=w1);
    let v1 = rng.random_range(v0..=v1);
    GpeParams::new(20.0, n, v1, 1.0, omega, kappa)
}

/// One training pair. Field arrays are `(n, n, 2)` real-space `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePoint {
    pub phi: Vec<f32>,
    pub g: Vec<f32>,
    pub phi_star: Vec<f32>,
    pub tolerance: f64,
    pub params: GpeParams,
    pub run_id: u64,
    /// 1-based position in the tolerance schedule.
    pub j: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub run_id: u64,
    pub seed: u64,
    pub params: GpeParams,
}

/// Draws parameters and state seeds for `runs` runs from one master seed, so
/// the plan does not depend on how the runs are later scheduled.
pub fn plan_runs(group: ParamGroup, runs: usize, seed: u64, n: usize) -> Result<Vec<RunPlan>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..runs as u64)
        .map(|run_id| {
            let params = sample_params(&mut rng, group, n)?;
            Ok(RunPlan { run_id, seed: rng.random(), params })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub eps1_min: f64,
    pub eps1_max: f64,
    pub eps2: f64,
    pub samples_per_run: usize,
    pub earcg: EarcgConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { eps1_min: 1e-4, eps1_max: 1e-1, eps2: 1e-8, samples_per_run: 20, earcg: EarcgConfig::default() }
    }
}

#[derive(Clone, Debug)]
pub enum RunOutcome {
    Samples { samples: Vec<SamplePoint>, iterations: usize },
    Skipped { reason: String, iterations: usize },
}

/// Runs EARCG from `State::random(seed)` to `cfg.eps2`, capturing `(phi, g)`
/// at the first iterate whose gradient norm is below each scheduled
/// tolerance. Runs that start below `eps1_min`, miss a capture, or do not
/// converge are skipped; solver errors are reported as skips too.
pub fn generate_run(plan: &RunPlan, cfg: &GenerationConfig) -> RunOutcome {
    match plan.params.grid() {
        Ok(grid) => generate_run_from(State::random(grid, plan.seed), plan, cfg),
        Err(e) => RunOutcome::Skipped { reason: format!("invalid parameters: {e}"), iterations: 0 },
    }
}

/// As [`generate_run`], from a given initial state instead of the plan's seed.
pub fn generate_run_from(phi0: State, plan: &RunPlan, cfg: &GenerationConfig) -> RunOutcome {
    match try_generate_run(phi0, plan, cfg) {
        Ok(outcome) => outcome,
        Err(e) => RunOutcome::Skipped { reason: format!("solver error: {e}"), iterations: 0 },
    }
}

fn try_generate_run(phi0: State, plan: &RunPlan, cfg: &GenerationConfig) -> Result<RunOutcome> {
    let schedule = tolerance_schedule(cfg.eps1_min, cfg.eps1_max, cfg.samples_per_run)?;
    if schedule.len() > u8::MAX as usize {
        return Err(Error::InvalidParams("at most 255 samples per run".into()));
    }
    let solver = Earcg::new(phi0, &plan.params, EarcgConfig { tol: cfg.eps2, ..cfg.earcg })?;
    if solver.gnorm() < cfg.eps1_min {
        return Ok(RunOutcome::Skipped {
            reason: format!("initial gradient norm {:e} already below {:e}", solver.gnorm(), cfg.eps1_min),
            iterations: 0,
        });
    }
    let mut captured: Vec<(f64, Vec<f32>, Vec<f32>)> = Vec::with_capacity(schedule.len());
    let (phi_star, trace) = solver.run(&mut |view| {
        while captured.len() < schedule.len() && view.gnorm < schedule[captured.len()] {
            let phi = field_channels(view.state).to_f32();
            let g = field_channels(view.gradient).to_f32();
            captured.push((view.gnorm, phi, g));
        }
    })?;
    let iterations = trace.iterations;
    if trace.termination != Termination::Converged {
        return Ok(RunOutcome::Skipped {
            reason: format!("not converged ({:?}, |g|_a = {:e})", trace.termination, trace.final_gnorm),
            iterations,
        });
    }
    if captured.len() < schedule.len() {
        return Ok(RunOutcome::Skipped {
            reason: format!("only {} of {} tolerances crossed", captured.len(), schedule.len()),
            iterations,
        });
    }
    let star = field_channels(&phi_star).to_f32();
    let samples = captured
        .into_iter()
        .zip(&schedule)
        .enumerate()
        .map(|(i, ((_, phi, g), &tolerance))| SamplePoint {
            phi,
            g,
            phi_star: star.clone(),
            tolerance,
            params: plan.params,
            run_id: plan.run_id,
            j: (i + 1) as u8,
        })
        .collect();
    Ok(RunOutcome::Samples { samples, iterations })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub run_id: u64,
    pub seed: u64,
    pub params: GpeParams,
    pub iterations: usize,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub group: ParamGroup,
    pub seed: u64,
    pub n: usize,
    pub config: GenerationConfig,
    pub runs: Vec<ManifestEntry>,
}

impl ManifestEntry {
    pub fn new(plan: &RunPlan, outcome: &RunOutcome) -> Self {
        let (iterations, samples, skip_reason) = match outcome {
            RunOutcome::Samples { samples, iterations } => (*iterations, samples.len(), None),
            RunOutcome::Skipped { reason, iterations } => (*iterations, 0, Some(reason.clone())),
        };
        Self { run_id: plan.run_id, seed: plan.seed, params: plan.params, iterations, samples, skip_reason }
    }
}

/// Sequential batch generation; callers wanting parallelism can map
/// [`generate_run`] over [`plan_runs`] themselves.
pub fn generate_batch(
    group: ParamGroup,
    runs: usize,
    seed: u64,
    n: usize,
    cfg: &GenerationConfig,
) -> Result<(Vec<SamplePoint>, Manifest)> {
    let mut samples = Vec::new();
    let mut entries = Vec::new();
    for plan in plan_runs(group, runs, seed, n)? {
        let outcome = generate_run(&plan, cfg);
        entries.push(ManifestEntry::new(&plan, &outcome));
        if let RunOutcome::Samples { samples: s, .. } = outcome {
            samples.extend(s);
        }
    }
    Ok((samples, Manifest { group, seed, n, config: cfg.clone(), runs: entries }))
}

/// Serializes samples; all must share one grid size.
pub fn dataset_to_bytes(samples: &[SamplePoint]) -> Result<Vec<u8>> {
    let n = samples.first().map_or(0, |s| s.params.n);
    let arr = 2 * n * n;
    for (i, s) in samples.iter().enumerate() {
        if s.params.n != n {
            return Err(Error::InvalidParams(format!("sample {i} has n = {}, file has n = {n}", s.params.n)));
        }
        if s.phi.len() != arr || s.g.len() != arr || s.phi_star.len() != arr {
            return Err(Error::ShapeMismatch {
                expected: format!("{arr} values per array"),
                got: format!("sample {i}: {}, {}, {}", s.phi.len(), s.g.len(), s.phi_star.len()),
            });
        }
    }
    let n32 = u32::try_from(n).map_err(|_| Error::InvalidParams(format!("n = {n} too large")))?;
    let mut out = Vec::with_capacity(HEADER_BYTES + samples.len() * (META_BYTES + 3 * 4 * arr));
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    out.extend_from_slice(&n32.to_le_bytes());
    for s in samples {
        let p = &s.params;
        for v in [p.v1, p.v2, p.omega, p.kappa, p.a, s.tolerance] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&s.run_id.to_le_bytes());
        out.push(s.j);
        for arr in [&s.phi, &s.g, &s.phi_star] {
            for v in arr.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(len) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(Error::Dataset {
                offset: self.pos as u64,
                msg: format!("truncated {what}: need {len} bytes, {} left", self.bytes.len() - self.pos),
            }),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(count * 4, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Vec<SamplePoint>> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = c.array("magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::Dataset { offset: 0, msg: format!("bad magic {magic:?}") });
    }
    let version = c.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::Dataset { offset: 4, msg: format!("unsupported version {version}") });
    }
    let count = c.u64("sample count")?;
    let n = c.u32("grid size")? as usize;
    let arr = 2 * n * n;
    let record = META_BYTES + 3 * 4 * arr;
    let remaining = (bytes.len() - HEADER_BYTES) as u64;
    if count.checked_mul(record as u64).is_none_or(|need| need > remaining) {
        return Err(Error::Dataset {
            offset: HEADER_BYTES as u64,
            msg: format!("header promises {count} samples of {record} bytes, only {remaining} bytes follow"),
        });
    }
    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = c.pos as u64;
        let [v1, v2, omega, kappa, a, tolerance] = [(); 6].map(|_| c.f64("metadata"));
        let params = GpeParams { a: a?, n, v1: v1?, v2: v2?, omega: omega?, kappa: kappa? };
        let tolerance = tolerance?;
        let run_id = c.u64("run id")?;
        let j = c.take(1, "j")?[0];
        params
            .validate()
            .map_err(|e| Error::Dataset { offset: at, msg: format!("invalid parameters: {e}") })?;
        let phi = c.f32s(arr, "phi")?;
        let g = c.f32s(arr, "g")?;
        let phi_star = c.f32s(arr, "phi_star")?;
        samples.push(SamplePoint { phi, g, phi_star, tolerance, params, run_id, j });
    }
    if c.pos != bytes.len() {
        return Err(Error::Dataset { offset: c.pos as u64, msg: format!("{} trailing bytes", bytes.len() - c.pos) });
    }
    Ok(samples)
}

pub fn write_dataset(samples: &[SamplePoint], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(samples)?)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<SamplePoint>> {
    dataset_from_bytes(&std::fs::read(path)?)
}

/// Rebuilds the complex field stored in an `(n, n, 2)` array.
pub fn channels_to_field(data: &[f32], grid: &std::sync::Arc<crate::field::Grid>) -> Result<Field> {
    let t = crate::nn::Tensor::new(grid.n(), grid.n(), 2, data.iter().map(|&v| f64::from(v)).collect())?;
    crate::nn::postprocess(&t, grid)
}
