//! The acceptance suite behind `verify`.
//!
//! Each criterion runs its experiments, records the raw measurements in
//! `measured` and judges them through one or more [`Check`]s.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::csl::{
    step_linear_csl, CslParams, CslRealization, CslRoute, LocalizationKernel, NoiseField,
};
use crate::error::Result;
use crate::generators::{build_hamiltonian, GeneratorMatrix, Potential};
use crate::jump::{
    bell_transition, check_continuity, csl_source_terms, gaussian_homogeneous, source_matrix,
    NormSource,
};
use crate::lattice::{to_momentum, to_position, Grid, Representation, WaveFunction};
use crate::rng::Stream;

use super::config::{ExperimentConfig, InitialState, Scenario};
use super::output::{write_trajectories_to, MomentsFile, SCHEMA_VERSION};
use super::scenarios::{run_experiment, run_with_threads, ExperimentOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `value` passes when it is below this bound.
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn below(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value < threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub measured: BTreeMap<String, f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub seed: u64,
    pub passed: bool,
    pub criteria: Vec<CriterionResult>,
}

struct Builder {
    id: u8,
    name: &'static str,
    start: Instant,
    checks: Vec<Check>,
    measured: BTreeMap<String, f64>,
}

impl Builder {
    fn new(id: u8, name: &'static str) -> Self {
        Self {
            id,
            name,
            start: Instant::now(),
            checks: Vec::new(),
            measured: BTreeMap::new(),
        }
    }

    fn measure(&mut self, key: impl Into<String>, v: f64) {
        self.measured.insert(key.into(), v);
    }

    fn check(&mut self, name: &str, value: f64, threshold: f64) {
        self.checks.push(Check::below(name, value, threshold));
    }

    fn finish(self) -> CriterionResult {
        CriterionResult {
            id: self.id,
            name: self.name.into(),
            passed: !self.checks.is_empty() && self.checks.iter().all(|c| c.passed),
            checks: self.checks,
            measured: self.measured,
            seconds: self.start.elapsed().as_secs_f64(),
        }
    }
}

fn fit(out: &ExperimentOutput, name: &str) -> f64 {
    out.stats.fit(name).map_or(f64::NAN, |f| f.value)
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Lattice spacings of the Bohm-limit sweep, and the plane-wave mode
/// index on each, chosen so the momentum is the same on all three.
pub const BOHM_SWEEP: [(f64, i32); 3] = [(0.1, 8), (0.05, 4), (0.025, 2)];

/// Mean jump velocity of a plane wave with `β = 0` on three lattices.
pub fn criterion_1(seed: u64) -> Result<CriterionResult> {
    let mut b = Builder::new(1, "causal limit: plane-wave jump velocity");
    let mut errors = Vec::new();
    for (i, &(a, mode)) in BOHM_SWEEP.iter().enumerate() {
        let mut cfg = ExperimentConfig::preset(Scenario::BohmLimit);
        cfg.seed = seed;
        cfg.spacing = a;
        cfg.p0 = 2.0 * PI * cfg.hbar * mode as f64 / (cfg.n_sites as f64 * a);
        let out = run_experiment(&cfg)?;
        let target = fit(&out, "lattice_momentum") / cfg.mass;
        let exact = fit(&out, "rate_velocity");
        let mc = fit(&out, "mean_velocity");
        b.measure(format!("spacing_{i}"), a);
        b.measure(format!("momentum_{i}"), fit(&out, "lattice_momentum"));
        b.measure(format!("rate_velocity_{i}"), exact);
        b.measure(format!("walker_velocity_{i}"), mc);
        b.check(
            &format!("walker velocity error at a={a}"),
            rel(mc, target),
            0.02,
        );
        b.check(
            &format!("rate velocity error at a={a}"),
            rel(exact, target),
            0.02,
        );
        errors.push(rel(exact, target));
    }
    // At least first order: each halving must cut the error by 0.6 or more.
    for k in 1..errors.len() {
        b.check(&format!("error ratio {k}"), errors[k] / errors[k - 1], 0.6);
    }
    Ok(b.finish())
}

/// Nelson-calibrated jumps: free spreading and the harmonic ground state.
pub fn criterion_2(seed: u64) -> Result<CriterionResult> {
    let mut b = Builder::new(2, "Nelson limit: free spreading and ground-state histogram");
    let mut cfg = ExperimentConfig::preset(Scenario::NelsonVariance);
    cfg.seed = seed;
    let out = run_experiment(&cfg)?;
    let s0 = cfg.sigma0;
    let t = cfg.t_final;
    let expected = s0 * s0 * (1.0 + (cfg.hbar * t / (2.0 * cfg.mass * s0 * s0)).powi(2));
    let var = fit(&out, "var_x");
    b.measure("free_var_x", var);
    b.measure("free_t", t);
    b.measure("free_sigma0", s0);
    b.check("free variance relative error", rel(var, expected), 0.03);

    let mut cfg = ExperimentConfig::preset(Scenario::NelsonVariance);
    cfg.seed = seed;
    cfg.n_sites = 64;
    cfg.spacing = 0.25;
    cfg.potential = super::config::PotentialSpec::Named("harmonic(1)".into());
    cfg.initial = InitialState::Ground;
    cfg.t_final = 5.0;
    cfg.dt = 0.01;
    let out = run_experiment(&cfg)?;
    let tv = fit(&out, "final_tv");
    b.measure("ground_tv", tv);
    b.check("ground-state TV", tv, 0.05);
    Ok(b.finish())
}

/// Walker histograms against `|φ|²` under unitary and collapse dynamics.
pub fn criterion_3(seed: u64) -> Result<CriterionResult> {
    let mut b = Builder::new(3, "equivariance of the jump process");
    let mut cfg = ExperimentConfig::preset(Scenario::UnitaryEquivariance);
    cfg.seed = seed;
    let out = run_experiment(&cfg)?;
    let tv = fit(&out, "final_tv");
    b.measure("unitary_tv", tv);
    b.measure("unitary_max_tv", fit(&out, "max_tv"));
    b.check("unitary TV", tv, 0.05);

    let mut cfg = ExperimentConfig::preset(Scenario::CslCollapse);
    cfg.seed = seed;
    let out = run_experiment(&cfg)?;
    let tv = fit(&out, "final_tv");
    b.measure("csl_tv", tv);
    b.measure("csl_max_tv", fit(&out, "max_tv"));
    b.check("CSL TV", tv, 0.07);
    Ok(b.finish())
}

/// Growth rate of the momentum variance.
pub fn criterion_4(seed: u64) -> Result<CriterionResult> {
    let mut b = Builder::new(4, "momentum diffusion slope");
    let mut cfg = ExperimentConfig::preset(Scenario::CslMomentumDiffusion);
    cfg.seed = seed;
    let out = run_experiment(&cfg)?;
    let slope = fit(&out, "var_p_slope");
    let expected = cfg.hbar * cfg.hbar * cfg.alpha * cfg.lambda / 2.0;
    b.measure("var_p_slope", slope);
    b.measure(
        "var_p_slope_stderr",
        out.stats.fit("var_p_slope").map_or(f64::NAN, |f| f.stderr),
    );
    b.check("slope relative error", rel(slope, expected), 0.05);
    Ok(b.finish())
}

/// Coupled Langevin moments against the phase-space density.
pub fn criterion_5(seed: u64) -> Result<CriterionResult> {
    let mut b = Builder::new(5, "phase-space Fokker-Planck equivalence");
    let mut cfg = ExperimentConfig::preset(Scenario::PhaseSpaceFokkerPlanck);
    cfg.seed = seed;
    let out = run_experiment(&cfg)?;
    let oracle = out
        .oracle
        .as_ref()
        .expect("the phase-space scenario solves the oracle");
    let mut worst = 0.0f64;
    for k in 1..out.stats.times.len() {
        let t = out.stats.times[k];
        let (m, o) = (out.stats.moments_at(k), oracle.moments_at(k));
        for ((name, a), e) in super::stats::Moments::names()
            .iter()
            .zip(m.values())
            .zip(o.values())
        {
            b.measure(format!("{name}@{t}"), a);
            b.measure(format!("oracle_{name}@{t}"), e);
            worst = worst.max(rel(a, e));
        }
    }
    b.check("largest relative moment error", worst, 0.10);
    Ok(b.finish())
}

/// Decay of the averaged coherence at two separations.
pub fn criterion_6(seed: u64) -> Result<CriterionResult> {
    let mut b = Builder::new(6, "decoherence rate");
    let mut cfg = ExperimentConfig::preset(Scenario::DecoherenceRate);
    cfg.seed = seed;
    let out = run_experiment(&cfg)?;
    for &d in &cfg.separations {
        let rate = fit(&out, &format!("decoherence_rate_{d}"));
        let expected = cfg.lambda * (1.0 - (-cfg.alpha * d * d / 4.0).exp());
        b.measure(format!("rate_{d}"), rate);
        b.check(&format!("rate error at d={d}"), rel(rate, expected), 0.10);
    }
    Ok(b.finish())
}

fn random_state(grid: &Grid, rng: &mut Stream) -> Result<WaveFunction> {
    let amps = Array1::from_shape_fn(grid.n_sites(), |_| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    WaveFunction::new(grid.clone(), amps)?.normalized()
}

fn random_hermitian(n: usize, rng: &mut Stream) -> Result<GeneratorMatrix> {
    let mut m = Array2::<Complex64>::zeros((n, n));
    for i in 0..n {
        m[[i, i]] = Complex64::new(rng.sample(StandardNormal), 0.0);
        for j in (i + 1)..n {
            let z = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            m[[i, j]] = z;
            m[[j, i]] = z.conj();
        }
    }
    GeneratorMatrix::from_dense(m, Representation::Position)
}

fn output_bytes(out: &ExperimentOutput) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_trajectories_to(&mut buf, &out.records)?;
    buf.extend(
        serde_json::to_vec(&MomentsFile::new(out))
            .map_err(|e| crate::error::Error::Io(e.to_string()))?,
    );
    Ok(buf)
}

/// Exact identities of the lattice objects and reproducibility.
pub fn criterion_7(seed: u64) -> Result<CriterionResult> {
    let mut b = Builder::new(7, "structural invariants");
    let mut rng = Stream::seed_from_u64(seed);
    let grid = Grid::centered(32, 0.5)?;

    let mut antisym = 0.0f64;
    let mut min_t = f64::INFINITY;
    let mut dft = 0.0f64;
    for _ in 0..50 {
        let phi = random_state(&grid, &mut rng)?;
        let h = random_hermitian(grid.n_sites(), &mut rng)?;
        let j = source_matrix(&phi, &h)?;
        antisym = antisym.max(j.antisymmetry_defect());
        let mut sparse = phi.clone();
        for k in (0..grid.n_sites()).step_by(3) {
            sparse.amplitudes[k] = Complex64::new(0.0, 0.0);
        }
        let sparse = sparse.normalized()?;
        for psi in [&phi, &sparse] {
            let p = psi.probabilities();
            let jm = source_matrix(psi, &h)?;
            min_t = min_t.min(bell_transition(&jm, &p, None).min_entry());
            min_t = min_t.min(gaussian_homogeneous(&p, &grid, 1.5, 2.0, None)?.min_entry());
        }
        let back = to_position(&to_momentum(&phi, 1.0)?, 1.0)?;
        dft = dft.max(back.max_abs_diff(&phi));
    }
    b.measure("antisymmetry_defect", antisym);
    b.measure("min_transition_rate", min_t);
    b.measure("dft_round_trip", dft);
    b.check("J antisymmetry", antisym, 1e-12);
    b.check(
        "negative rate magnitude",
        (-min_t).max(0.0),
        f64::MIN_POSITIVE,
    );
    b.check("DFT round trip", dft, 1e-10);

    let g1 = Grid::centered(32, 1.0)?;
    let h = build_hamiltonian(&g1, 1.0, &Potential::Free, 1.0)?;
    let kernel = LocalizationKernel::new(&g1, 1.0)?;
    let params = CslParams::new(1.0, 0.0, 1.0, 1.0)?;
    let mut real = CslRealization::new(
        &WaveFunction::gaussian(g1.clone(), 0.0, 2.0, 1.0, 1.0)?,
        CslRoute::Linear,
    )?;
    for _ in 0..1000 {
        real.step(&h, &kernel, &params, 1e-3, &mut rng)?;
    }
    let drift = (real.norm() - 1.0).abs();
    b.measure("lambda0_norm_drift", drift);
    b.check("norm drift at λ=0 over 1000 steps", drift, 1e-6);

    let mut mismatches = 0.0;
    for s in [Scenario::CslCollapse, Scenario::PhaseSpaceFokkerPlanck] {
        let mut cfg = ExperimentConfig::preset(s);
        cfg.seed = seed;
        cfg.trajectories = 300;
        cfg.realizations = 7;
        cfg.t_final = 0.5;
        cfg.n_sites = 128;
        let first = output_bytes(&run_with_threads(&cfg, Some(1))?)?;
        for threads in [Some(1), Some(3), None] {
            if output_bytes(&run_with_threads(&cfg, threads)?)? != first {
                mismatches += 1.0;
            }
        }
    }
    b.measure("rerun_mismatches", mismatches);
    b.check("differing reruns", mismatches, 0.5);
    Ok(b.finish())
}

/// Number of random instances in the continuity sweep.
pub const CONTINUITY_INSTANCES: usize = 100;

/// Continuity residual of the normalised collapse step under dt-halving,
/// with and without the collapse source terms.
pub fn criterion_8(seed: u64) -> Result<CriterionResult> {
    let mut b = Builder::new(8, "continuity with collapse source terms");
    let mut rng = Stream::seed_from_u64(seed ^ 0x8);
    let grid = Grid::centered(16, 0.5)?;
    let h = build_hamiltonian(&grid, 1.0, &Potential::Free, 1.0)?;
    let kernel = LocalizationKernel::new(&grid, 1.0)?;
    let mut worst = 0.0f64;
    let mut ablation = f64::INFINITY;
    let mut ratios = Vec::new();
    for _ in 0..CONTINUITY_INSTANCES {
        let lambda = rng.random_range(0.2..2.0);
        let params = CslParams::new(1.0, lambda, 1.0, 1.0)?;
        let phi = random_state(&grid, &mut rng)?;
        let sd = (params.gamma() / grid.spacing()).sqrt();
        let rate = Array1::from_shape_fn(grid.n_sites(), |_| {
            sd * rng.sample::<f64, _>(StandardNormal)
        });
        let j0 = source_matrix(&phi, &h)?;
        let diag = csl_source_terms(&phi, &kernel, &rate, &params, NormSource::NormalizedRoute)?;
        let j = j0.clone().with_diagonal(&diag)?;
        let mut with = Vec::new();
        let mut without = Vec::new();
        for dt in [2e-3, 1e-3, 5e-4] {
            let noise = NoiseField::with_increments(grid.clone(), &rate * dt, dt)?;
            let next = step_linear_csl(&phi, &h, &kernel, &noise, &params, dt)?.normalized()?;
            with.push(check_continuity(&phi, &next, &j, dt)?);
            without.push(check_continuity(&phi, &next, &j0, dt)?);
        }
        for k in 1..3 {
            let r = with[k] / with[k - 1];
            ratios.push(r);
            worst = worst.max((r - 0.5).abs());
            ablation = ablation.min(without[k] / without[k - 1]);
        }
    }
    b.measure(
        "mean_halving_ratio",
        ratios.iter().sum::<f64>() / ratios.len() as f64,
    );
    b.measure("worst_halving_ratio_deviation", worst);
    b.measure("smallest_ablation_ratio", ablation);
    b.check("largest |ratio - 0.5|", worst, 0.1);
    // Without the source terms the residual does not vanish with dt.
    b.check("ablation ratio shortfall", (0.9 - ablation).max(0.0), 1e-12);
    Ok(b.finish())
}

pub type CriterionFn = fn(u64) -> Result<CriterionResult>;

pub const CRITERIA: [CriterionFn; 8] = [
    criterion_1,
    criterion_2,
    criterion_3,
    criterion_4,
    criterion_5,
    criterion_6,
    criterion_7,
    criterion_8,
];

/// Run every criterion. Numerical aborts are propagated.
pub fn run_verify(seed: u64) -> Result<VerifyReport> {
    let criteria = CRITERIA
        .iter()
        .map(|f| f(seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport {
        schema_version: SCHEMA_VERSION,
        seed,
        passed: criteria.iter().all(|c| c.passed),
        criteria,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structural_criterion_passes() {
        let r = criterion_7(3).unwrap();
        assert!(r.passed, "{r:#?}");
    }

    #[test]
    fn continuity_criterion_passes() {
        let r = criterion_8(3).unwrap();
        assert!(r.passed, "{r:#?}");
    }

    #[test]
    fn a_criterion_without_checks_fails() {
        assert!(!Builder::new(0, "empty").finish().passed);
    }

    #[test]
    fn integrator_names_are_snake_case() {
        assert_eq!(
            serde_json::to_string(&super::super::config::Integrator::CslP).unwrap(),
            "\"csl_p\""
        );
    }
}
