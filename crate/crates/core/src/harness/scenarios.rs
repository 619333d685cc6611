//! Running a configured experiment.

use ndarray::Array1;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::csl::{CslParams, CslRealization, CslRoute, LocalizationKernel};
use crate::error::{Error, Result};
use crate::generators::{build_hamiltonian, GeneratorMatrix, Spectrum};
use crate::jump::{
    beable_rates, checkpoint_steps, equivariance_run, sample_site, total_variation,
    walker_position, EquivarianceRun, Evolution,
};
use crate::langevin::{
    step_bohm, step_csl_momentum, step_csl_position, step_nelson, step_phase_space,
    AccumulatedNoiseIntegral, GuidanceField, LangevinState, TrajectoryStreams,
};
use crate::lattice::{Grid, Representation, WaveFunction};
use crate::rng::{StreamKind, StreamSeeder};

use super::config::{ExperimentConfig, InitialState, Integrator, Scenario};
use super::fokker_planck::{fokker_planck_oracle, PhaseSpaceDensity};
use super::stats::{fit_decay_rate, linear_fit, EnsembleStats, Histogram, Moments};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "BEABLE_CSL_THREADS";

/// One row of `trajectories.csv`. Position-only beables report `p = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub id: usize,
    pub x: f64,
    pub p: f64,
}

/// `φ` of the first realization at the final time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub x: Vec<f64>,
    pub psi: Vec<Complex64>,
}

impl Snapshot {
    fn of(run: &EquivarianceRun, t: f64) -> Option<Self> {
        run.final_states.first().map(|phi| Self {
            t,
            x: phi.grid.coordinates().to_vec(),
            psi: phi.amplitudes.to_vec(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub stats: EnsembleStats,
    /// Moments of the phase-space density solved on a grid, when the
    /// scenario has one.
    pub oracle: Option<EnsembleStats>,
    pub records: Vec<TrajectoryRecord>,
    pub snapshot: Option<Snapshot>,
}

/// Run `cfg` on a pool sized by [`THREADS_ENV`] when it is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse()
                .ok()
                .filter(|&n: &usize| n > 0)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "{THREADS_ENV} must be a positive integer, got {v:?}"
                    ))
                })?,
        ),
        Err(_) => None,
    };
    run_with_threads(cfg, threads)
}

/// Run `cfg` on a dedicated pool of `threads` workers, or on the global
/// pool. Results do not depend on the choice.
pub fn run_with_threads(
    cfg: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| dispatch(cfg)),
        None => dispatch(cfg),
    }
}

fn dispatch(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    use Integrator as I;
    use Scenario as S;
    match (cfg.scenario, cfg.integrator) {
        (S::UnitaryEquivariance | S::BohmLimit | S::NelsonVariance, I::Jump) => unitary_jump(cfg),
        (S::UnitaryEquivariance | S::BohmLimit | S::NelsonVariance, I::Bohm | I::Nelson) => {
            unitary_langevin(cfg)
        }
        (S::CslCollapse, I::Jump) => csl_collapse(cfg),
        (
            S::CslMomentumDiffusion | S::PhaseSpaceFokkerPlanck,
            I::CslP | I::CslX | I::PhaseSpace,
        ) => csl_langevin(cfg),
        (S::DecoherenceRate, _) => decoherence(cfg),
        (s, i) => Err(Error::Config(format!(
            "integrator {i:?} does not apply to {}",
            s.name()
        ))),
    }
}

fn steps_of(cfg: &ExperimentConfig) -> (usize, f64) {
    let n = (cfg.t_final / cfg.dt).ceil() as usize;
    let h = if n > 0 {
        cfg.t_final / n as f64
    } else {
        cfg.dt
    };
    (n, h)
}

fn lattice_momentum(grid: &Grid, p0: f64, hbar: f64) -> f64 {
    let dk = 2.0 * std::f64::consts::PI * hbar / grid.span();
    (p0 / dk).round() * dk
}

/// The configured initial wavefunction.
pub fn initial_state(
    cfg: &ExperimentConfig,
    grid: &Grid,
    spectrum: Option<&Spectrum>,
) -> Result<WaveFunction> {
    let hb = cfg.hbar;
    let eig = |k| {
        spectrum
            .ok_or_else(|| Error::Config("initial state needs the Hamiltonian spectrum".into()))?
            .eigenstate(grid, k)
    };
    match cfg.initial {
        InitialState::Gaussian => {
            WaveFunction::gaussian(grid.clone(), cfg.x0, cfg.sigma0, cfg.p0, hb)
        }
        InitialState::Ground => eig(0),
        InitialState::Superposition => {
            let (e0, e1) = (eig(0)?, eig(1)?);
            let amps = (&e0.amplitudes + &e1.amplitudes).mapv(|z| z / 2f64.sqrt());
            WaveFunction::new(grid.clone(), amps)?.normalized()
        }
        InitialState::PlaneWave => {
            let k = lattice_momentum(grid, cfg.p0, hb) / hb;
            WaveFunction::from_fn(grid.clone(), |x| Complex64::from_polar(1.0, k * x))?.normalized()
        }
        InitialState::TwoPackets => {
            let h = 0.5 * cfg.separation;
            let a = WaveFunction::gaussian(grid.clone(), cfg.x0 - h, cfg.sigma0, cfg.p0, hb)?;
            let b = WaveFunction::gaussian(grid.clone(), cfg.x0 + h, cfg.sigma0, cfg.p0, hb)?;
            WaveFunction::new(grid.clone(), &a.amplitudes + &b.amplitudes)?.normalized()
        }
        InitialState::Uniform => {
            WaveFunction::from_fn(grid.clone(), |_| Complex64::new(1.0, 0.0))?.normalized()
        }
    }
}

fn hamiltonian(cfg: &ExperimentConfig, grid: &Grid) -> Result<GeneratorMatrix> {
    build_hamiltonian(grid, cfg.mass, &cfg.potential.resolve(grid)?, cfg.hbar)
}

fn site_histogram(t: f64, grid: &Grid, sites: impl Iterator<Item = usize>) -> Histogram {
    let mut counts = vec![0u64; grid.n_sites()];
    for s in sites {
        counts[s] += 1;
    }
    Histogram {
        t,
        origin: grid.origin(),
        spacing: grid.spacing(),
        counts,
    }
}

/// Variance of a lattice density, using minimum-image distances from its
/// circular mean.
fn lattice_variance(p: &Array1<f64>, grid: &Grid) -> f64 {
    let n = grid.n_sites() as f64;
    let (mut c, mut s) = (0.0, 0.0);
    for (k, &w) in p.iter().enumerate() {
        let th = 2.0 * std::f64::consts::PI * k as f64 / n;
        c += w * th.cos();
        s += w * th.sin();
    }
    let centre = grid.origin()
        + s.atan2(c).rem_euclid(2.0 * std::f64::consts::PI) / (2.0 * std::f64::consts::PI)
            * grid.span();
    let total: f64 = p.sum();
    let mean: f64 = p
        .iter()
        .enumerate()
        .map(|(k, &w)| w * grid.min_image(grid.coordinate(k) - centre))
        .sum::<f64>()
        / total;
    p.iter()
        .enumerate()
        .map(|(k, &w)| w * (grid.min_image(grid.coordinate(k) - centre) - mean).powi(2))
        .sum::<f64>()
        / total
}

fn jump_stats(
    run: &EquivarianceRun,
    grid: &Grid,
) -> Result<(EnsembleStats, Vec<TrajectoryRecord>)> {
    let mut stats = EnsembleStats::default();
    let mut records = Vec::new();
    for (k, &t) in run.times.iter().enumerate() {
        let walkers = &run.snapshots[k];
        let xs: Vec<f64> = walkers.iter().map(|w| walker_position(w, grid)).collect();
        let ps = vec![0.0; xs.len()];
        stats.push_moments(t, &Moments::from_samples(&xs, &ps)?);
        stats
            .histograms
            .push(site_histogram(t, grid, walkers.iter().map(|w| w.site)));
        records.extend(
            xs.iter()
                .enumerate()
                .map(|(id, &x)| TrajectoryRecord { t, id, x, p: 0.0 }),
        );
    }
    stats.tv_distance = run.tv_series.clone();
    stats.series.insert(
        "target_var_x".into(),
        run.targets
            .iter()
            .map(|p| lattice_variance(p, grid))
            .collect(),
    );
    let max_tv = run.tv_series.iter().cloned().fold(0.0, f64::max);
    stats.set_fit("final_tv", run.tv, 0.0);
    stats.set_fit("max_tv", max_tv, 0.0);
    Ok((stats, records))
}

fn unitary_jump(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let grid = cfg.grid()?;
    let h = hamiltonian(cfg, &grid)?;
    let spectrum = h.spectrum()?;
    let phi0 = initial_state(cfg, &grid, Some(&spectrum))?;
    let jump = cfg.jump_params()?;
    let seeder = StreamSeeder::new(cfg.seed);
    let run = equivariance_run(
        &phi0,
        Evolution::Unitary {
            hamiltonian: &h,
            spectrum: &spectrum,
        },
        &jump,
        cfg.trajectories,
        cfg.t_final,
        cfg.dt,
        &seeder,
        cfg.checkpoints,
    )?;
    let (mut stats, records) = jump_stats(&run, &grid)?;
    let p0 = phi0.probabilities();
    let rates = beable_rates(&phi0, &h, jump.beta, jump.sigma, jump.eps_floor)?;
    stats.set_fit("rate_velocity", rates.mean_velocity(&p0, &grid), 0.0);
    stats.set_fit("position_diffusion", jump.position_diffusion(&grid), 0.0);
    finish_unitary(cfg, &grid, &mut stats)?;
    let snapshot = cfg
        .snapshots
        .then(|| Snapshot::of(&run, cfg.t_final))
        .flatten();
    Ok(ExperimentOutput {
        config: cfg.clone(),
        stats,
        oracle: None,
        records,
        snapshot,
    })
}

/// Fits shared by the unitary scenarios.
fn finish_unitary(cfg: &ExperimentConfig, grid: &Grid, stats: &mut EnsembleStats) -> Result<()> {
    if stats.times.len() >= 2 {
        let fit = linear_fit(&stats.times, &stats.mean_x)?;
        stats.set_fit("mean_velocity", fit.slope, fit.slope_stderr);
    }
    if cfg.initial == InitialState::PlaneWave {
        stats.set_fit(
            "lattice_momentum",
            lattice_momentum(grid, cfg.p0, cfg.hbar),
            0.0,
        );
    }
    let last = stats.times.len() - 1;
    let target = stats.series["target_var_x"][last];
    stats.set_fit("var_x", stats.var_x[last], 0.0);
    stats.set_fit("target_var_x", target, 0.0);
    Ok(())
}

fn unitary_langevin(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let grid = cfg.grid()?;
    let h = hamiltonian(cfg, &grid)?;
    let spectrum = h.spectrum()?;
    let params = cfg.csl_params()?;
    let nu = if cfg.integrator == Integrator::Nelson {
        params.nu
    } else {
        0.0
    };
    let (n_steps, dt) = steps_of(cfg);
    let marks = checkpoint_steps(n_steps, cfg.checkpoints);
    let half = spectrum.propagator(0.5 * dt);
    let seeder = StreamSeeder::new(cfg.seed);
    let mut phi = initial_state(cfg, &grid, Some(&spectrum))?;
    let p0 = phi.probabilities();
    let mut states: Vec<LangevinState> = (0..cfg.trajectories)
        .map(|i| {
            let site = sample_site(&p0, &mut seeder.stream(StreamKind::InitialSample, i as u64));
            LangevinState::new(grid.coordinate(site), 0.0)
        })
        .collect();
    let mut streams: Vec<TrajectoryStreams> = (0..cfg.trajectories)
        .map(|i| TrajectoryStreams::new(&seeder, i as u64))
        .collect();
    let mut stats = EnsembleStats::default();
    let mut records = Vec::new();
    let mut targets = Vec::new();
    let mut clamps = 0usize;
    let mut mark = marks.iter().peekable();
    for step in 0..=n_steps {
        if mark.peek() == Some(&&step) {
            mark.next();
            let t = step as f64 * dt;
            let target = phi.probabilities();
            let xs: Vec<f64> = states.iter().map(|s| s.x).collect();
            let ps = vec![0.0; xs.len()];
            stats.push_moments(t, &Moments::from_samples(&xs, &ps)?);
            let hist = site_histogram(t, &grid, xs.iter().map(|&x| grid.nearest_site(x)));
            let probs = Array1::from(hist.probabilities());
            stats.tv_distance.push(total_variation(&probs, &target));
            stats.histograms.push(hist);
            records.extend(xs.iter().enumerate().map(|(id, &x)| TrajectoryRecord {
                t,
                id,
                x,
                p: 0.0,
            }));
            targets.push(lattice_variance(&target, &grid));
        }
        if step == n_steps {
            break;
        }
        let mid = half.apply(&phi);
        let field = GuidanceField::from_wavefunction(&mid, cfg.hbar, cfg.mass)?;
        let hits: Vec<bool> = states
            .par_iter_mut()
            .zip(streams.par_iter_mut())
            .enumerate()
            .map(|(i, (s, st))| -> Result<bool> {
                let (next, hit) = if nu > 0.0 {
                    step_nelson(s, &field, nu, dt, &mut st.diffusion)?
                } else {
                    (step_bohm(s, &field, dt), false)
                };
                if !next.x.is_finite() {
                    return Err(Error::Instability("non-finite position".into()).at(i, step));
                }
                *s = next;
                Ok(hit)
            })
            .collect::<Result<_>>()?;
        clamps += hits.iter().filter(|&&b| b).count();
        phi = half.apply(&mid);
    }
    stats.series.insert("target_var_x".into(), targets);
    stats.set_fit("final_tv", *stats.tv_distance.last().unwrap_or(&0.0), 0.0);
    stats.set_fit("node_clamps", clamps as f64, 0.0);
    finish_unitary(cfg, &grid, &mut stats)?;
    Ok(ExperimentOutput {
        config: cfg.clone(),
        stats,
        oracle: None,
        records,
        snapshot: None,
    })
}

fn csl_collapse(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let grid = cfg.grid()?;
    let h = hamiltonian(cfg, &grid)?;
    let spectrum = h.spectrum()?;
    let kernel = LocalizationKernel::new(&grid, cfg.alpha)?;
    let params = cfg.csl_params()?;
    let phi0 = initial_state(cfg, &grid, Some(&spectrum))?;
    let jump = cfg.jump_params()?;
    let seeder = StreamSeeder::new(cfg.seed);
    let run = equivariance_run(
        &phi0,
        Evolution::Csl {
            hamiltonian: &h,
            kernel: &kernel,
            params,
            route: cfg.route()?,
            realizations: cfg.realizations,
        },
        &jump,
        cfg.trajectories,
        cfg.t_final,
        cfg.dt,
        &seeder,
        cfg.checkpoints,
    )?;
    let (mut stats, records) = jump_stats(&run, &grid)?;
    let n = run.final_probabilities.len() as f64;
    let ipr = run
        .final_probabilities
        .iter()
        .map(|p| p.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / n;
    stats.set_fit("inverse_participation", ipr, 0.0);
    stats.set_fit(
        "initial_inverse_participation",
        phi0.probabilities().iter().map(|v| v * v).sum(),
        0.0,
    );
    let snapshot = cfg
        .snapshots
        .then(|| Snapshot::of(&run, cfg.t_final))
        .flatten();
    Ok(ExperimentOutput {
        config: cfg.clone(),
        stats,
        oracle: None,
        records,
        snapshot,
    })
}

/// Langevin trajectories driven by independent collapse-noise realizations,
/// one per trajectory, sampled lazily on the configured z-lattice.
fn csl_langevin(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let grid = cfg.grid()?;
    let params = cfg.csl_params()?;
    let (n_steps, dt) = steps_of(cfg);
    let marks = checkpoint_steps(n_steps, cfg.checkpoints);
    let seeder = StreamSeeder::new(cfg.seed);
    let paths: Vec<Vec<(f64, f64)>> = (0..cfg.trajectories)
        .into_par_iter()
        .map(|i| -> Result<Vec<(f64, f64)>> {
            let mut init = seeder.stream(StreamKind::InitialSample, i as u64);
            let x: f64 = cfg.x0 + cfg.sigma0 * init.sample::<f64, _>(StandardNormal);
            let p: f64 = cfg.p0 + cfg.sigma_p * init.sample::<f64, _>(StandardNormal);
            let mut s = LangevinState::new(x, p);
            let mut streams = TrajectoryStreams::new(&seeder, i as u64);
            let mut acc = AccumulatedNoiseIntegral::lazy(&grid, &params)?;
            let mut out = Vec::with_capacity(marks.len());
            let mut mark = marks.iter().peekable();
            for step in 0..=n_steps {
                if mark.peek() == Some(&&step) {
                    mark.next();
                    out.push((s.x, s.p));
                }
                if step == n_steps {
                    break;
                }
                s = match cfg.integrator {
                    Integrator::PhaseSpace => {
                        step_phase_space(&s, &mut acc, &params, dt, &mut streams)?
                    }
                    Integrator::CslX => {
                        let next = step_csl_position(
                            &s,
                            &mut acc,
                            &params,
                            dt,
                            &mut streams,
                            cfg.drift_mode,
                        );
                        acc.advance(dt)?;
                        next
                    }
                    _ => {
                        let mut next = step_csl_momentum(&s, &params, dt, &mut streams.momentum);
                        next.x += next.p / params.mass * dt;
                        next
                    }
                };
                if !(s.x.is_finite() && s.p.is_finite()) {
                    return Err(Error::Instability("non-finite beable".into()).at(i, step));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut stats = EnsembleStats::default();
    let mut records = Vec::with_capacity(paths.len() * marks.len());
    for (k, &m) in marks.iter().enumerate() {
        let t = m as f64 * dt;
        let xs: Vec<f64> = paths.iter().map(|p| p[k].0).collect();
        let ps: Vec<f64> = paths.iter().map(|p| p[k].1).collect();
        stats.push_moments(t, &Moments::from_samples(&xs, &ps)?);
        stats.histograms.push(site_histogram(
            t,
            &grid,
            xs.iter().map(|&x| grid.nearest_site(x)),
        ));
        records.extend((0..xs.len()).map(|id| TrajectoryRecord {
            t,
            id,
            x: xs[id],
            p: ps[id],
        }));
    }
    if stats.times.len() >= 3 {
        let fit = linear_fit(&stats.times, &stats.var_p)?;
        stats.set_fit("var_p_slope", fit.slope, fit.slope_stderr);
    }
    let oracle = if cfg.scenario == Scenario::PhaseSpaceFokkerPlanck {
        let oracle = oracle_moments(cfg, &params, &stats.times)?;
        let last = stats.times.len() - 1;
        let (m, o) = (stats.moments_at(last), oracle.moments_at(last));
        for ((name, a), b) in Moments::names().iter().zip(m.values()).zip(o.values()) {
            stats.set_fit(&format!("oracle_{name}"), b, 0.0);
            stats.set_fit(&format!("relative_error_{name}"), ((a - b) / b).abs(), 0.0);
        }
        Some(oracle)
    } else {
        None
    };
    Ok(ExperimentOutput {
        config: cfg.clone(),
        stats,
        oracle,
        records,
        snapshot: None,
    })
}

/// Solve the phase-space equation from the Gaussian initial condition and
/// report its moments at `times`. The grid is sized from the predicted
/// spread at the final time.
fn oracle_moments(
    cfg: &ExperimentConfig,
    params: &CslParams,
    times: &[f64],
) -> Result<EnsembleStats> {
    let t = cfg.t_final;
    let m = params.mass;
    let dp_coef = params.momentum_diffusion_rate() / 2.0;
    let var_p = cfg.sigma_p.powi(2) + 2.0 * dp_coef * t;
    let var_x = cfg.sigma0.powi(2)
        + (cfg.sigma_p * t / m).powi(2)
        + 2.0 * params.nu * t
        + 2.0 * dp_coef * t.powi(3) / (3.0 * m * m);
    let sx = var_x.sqrt();
    let x_end = cfg.x0 + cfg.p0 / m * t;
    let x_lo = cfg.x0.min(x_end) - 8.0 * sx;
    let x_hi = cfg.x0.max(x_end) + 8.0 * sx;
    let sp = var_p.sqrt();
    let p_lo = cfg.p0 - 8.0 * sp;
    let p_hi = cfg.p0 + 8.0 * sp;
    let x_grid = Grid::new(
        cfg.fp_nx,
        (x_hi - x_lo) / cfg.fp_nx as f64,
        x_lo,
        Representation::Position,
    )?;
    let p_grid = Grid::new(
        cfg.fp_np,
        (p_hi - p_lo) / cfg.fp_np as f64,
        p_lo,
        Representation::Momentum,
    )?;
    let dp = p_grid.spacing();
    let h = if dp_coef > 0.0 {
        cfg.fp_dt.min(dp * dp / dp_coef)
    } else {
        cfg.fp_dt
    };
    let mut q = PhaseSpaceDensity::gaussian(
        x_grid,
        p_grid,
        (cfg.x0, cfg.p0),
        (cfg.sigma0.powi(2), cfg.sigma_p.powi(2)),
        0.0,
    )?;
    let mut out = EnsembleStats::default();
    let mut now = 0.0;
    for &tk in times {
        if tk > now {
            let mut next = fokker_planck_oracle(params, &q, tk - now, h, params.nu)?;
            next.t = tk;
            q = next;
            now = tk;
        }
        out.push_moments(tk, &q.moments());
    }
    Ok(out)
}

/// Coherence of the noise-averaged density matrix of linear-route states.
fn decoherence(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let grid = cfg.grid()?;
    let h = hamiltonian(cfg, &grid)?;
    let kernel = LocalizationKernel::new(&grid, cfg.alpha)?;
    let params = cfg.csl_params()?;
    let phi0 = initial_state(cfg, &grid, None)?;
    let n = grid.n_sites();
    let a = grid.spacing();
    let shifts: Vec<usize> = cfg
        .separations
        .iter()
        .map(|&d| {
            let s = (d / a).round();
            if s >= 1.0 && (s as usize) < n / 2 && ((s * a) - d).abs() < 1e-9 * d.abs().max(1.0) {
                Ok(s as usize)
            } else {
                Err(Error::Config(format!(
                    "separation {d} is not a lattice vector below half the span"
                )))
            }
        })
        .collect::<Result<_>>()?;
    let (n_steps, dt) = steps_of(cfg);
    let marks = checkpoint_steps(n_steps, cfg.checkpoints);
    let seeder = StreamSeeder::new(cfg.seed);
    // Per realization, per checkpoint: Σ_n ψ(n) ψ*(n + s) for s = 0 and each shift.
    let sums: Vec<Vec<Vec<Complex64>>> = (0..cfg.trajectories)
        .into_par_iter()
        .map(|r| -> Result<Vec<Vec<Complex64>>> {
            let mut rng = seeder.stream(StreamKind::CollapseNoise, r as u64);
            let mut real = CslRealization::new(&phi0, CslRoute::Linear)?;
            let mut out = Vec::with_capacity(marks.len());
            let mut mark = marks.iter().peekable();
            for step in 0..=n_steps {
                if mark.peek() == Some(&&step) {
                    mark.next();
                    let psi = real.linear_state();
                    let amp = &psi.amplitudes;
                    out.push(
                        std::iter::once(0)
                            .chain(shifts.iter().copied())
                            .map(|s| (0..n).map(|i| amp[i] * amp[(i + s) % n].conj()).sum())
                            .collect(),
                    );
                }
                if step == n_steps {
                    break;
                }
                real.step(&h, &kernel, &params, dt, &mut rng)
                    .map_err(|e| e.at(r, step))?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut stats = EnsembleStats::default();
    let count = sums.len() as f64;
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); shifts.len()];
    let mut diag = Vec::new();
    for (k, &m) in marks.iter().enumerate() {
        let t = m as f64 * dt;
        stats.times.push(t);
        let mean: Vec<Complex64> = (0..=shifts.len())
            .map(|j| sums.iter().map(|r| r[k][j]).sum::<Complex64>() / count)
            .collect();
        diag.push(mean[0].re);
        for (j, s) in series.iter_mut().enumerate() {
            s.push((t, mean[j + 1].norm() / mean[0].re));
        }
    }
    stats.series.insert("mean_norm_sqr".into(), diag);
    for ((d, s), ser) in cfg.separations.iter().zip(&shifts).zip(&series) {
        let fit = fit_decay_rate(ser)?;
        stats.series.insert(
            format!("coherence_d{s}"),
            ser.iter().map(|&(_, c)| c).collect(),
        );
        stats.set_fit(&format!("decoherence_rate_{d}"), fit.value, fit.stderr);
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        stats,
        oracle: None,
        records: Vec::new(),
        snapshot: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(s: Scenario) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset(s);
        c.trajectories = 200;
        c.realizations = 8;
        c.t_final = 0.2;
        c.checkpoints = 4;
        c
    }

    #[test]
    fn every_preset_runs_at_small_size() {
        for s in Scenario::ALL {
            let mut c = small(s);
            if s == Scenario::PhaseSpaceFokkerPlanck {
                c.n_sites = 128;
            }
            if s == Scenario::DecoherenceRate {
                c.checkpoints = 10;
            }
            let out = run_experiment(&c).unwrap_or_else(|e| panic!("{}: {e}", s.name()));
            assert_eq!(out.stats.times.len(), c.checkpoints + 1, "{}", s.name());
        }
    }

    #[test]
    fn mismatched_integrator_is_a_config_error() {
        let mut c = small(Scenario::CslCollapse);
        c.integrator = Integrator::PhaseSpace;
        assert!(matches!(run_experiment(&c), Err(Error::Config(_))));
    }

    #[test]
    fn plane_wave_velocity_matches_the_rate_velocity() {
        let c = small(Scenario::BohmLimit);
        let out = run_experiment(&c).unwrap();
        let v = out.stats.fit("mean_velocity").unwrap();
        let exact = out.stats.fit("rate_velocity").unwrap().value;
        assert!(
            (v.value - exact).abs() < 5.0 * v.stderr.max(0.02 * exact.abs()),
            "{v:?} vs {exact}"
        );
    }

    #[test]
    fn lattice_variance_of_a_centred_packet() {
        let g = Grid::centered(256, 0.1).unwrap();
        let psi = WaveFunction::gaussian(g.clone(), 12.0, 1.0, 0.0, 1.0).unwrap();
        let wrapped = |x: f64| g.min_image(x - 12.0);
        let p = psi.probabilities();
        let direct: f64 = g
            .coordinates()
            .iter()
            .zip(p.iter())
            .map(|(&x, w)| w * wrapped(x).powi(2))
            .sum();
        assert!((lattice_variance(&p, &g) - direct).abs() < 1e-9);
    }

    #[test]
    fn snapshot_holds_the_normalized_final_state() {
        let mut c = small(Scenario::CslCollapse);
        c.snapshots = true;
        let out = run_experiment(&c).unwrap();
        let snap = out.snapshot.unwrap();
        assert_eq!(snap.psi.len(), c.n_sites);
        let norm: f64 = c.spacing * snap.psi.iter().map(|z| z.norm_sqr()).sum::<f64>();
        assert!((norm - 1.0).abs() < 1e-9, "{norm}");
        assert_eq!(snap.t, c.t_final);
    }
}
