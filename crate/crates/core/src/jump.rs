//! Discrete beables: probability vector, source matrix, transition rates and
//! the Markov jump sampler.
//!
//! The master equation `∂P_m/∂t = Σ_n (T_mn P_n - T_nm P_m)` reproduces the
//! quantum continuity equation `∂P_m/∂t = Σ_n J_mn` whenever
//! `T_mn P_n - T_nm P_m = J_mn`. Bell's minimal solution takes the positive
//! part of `J_mn / P_n`; any solution of the homogeneous equation may be added
//! on top, and the Gaussian family used here turns the walk into a diffusion
//! with the osmotic drift of Nelson's equation in the continuum limit.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::csl::{kernel_coefficients, CslParams, CslRealization, CslRoute, LocalizationKernel};
use crate::error::{Error, Result};
use crate::generators::{GeneratorMatrix, Spectrum};
use crate::lattice::{to_momentum, to_position, Grid, Representation, WaveFunction};
use crate::rng::{Stream, StreamKind, StreamSeeder};

/// Relative occupancy floor: sites with `P < 1e-12 · max P` are unoccupied.
pub const FLOOR_FRACTION: f64 = 1e-12;

/// `P_m = |φ_m|² · spacing`.
pub fn probability_vector(phi: &WaveFunction) -> Array1<f64> {
    phi.probabilities()
}

pub fn default_floor(p: &Array1<f64>) -> f64 {
    FLOOR_FRACTION * p.iter().cloned().fold(0.0, f64::max)
}

/// Probability current between lattice sites; `J_mn` is the flow from `n`
/// into `m`, and row sums give `dP_m/dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMatrix {
    pub j: Array2<f64>,
    pub representation: Representation,
    pub includes_nonunitary: bool,
}

impl SourceMatrix {
    /// `max |J_mn + J_nm|` over off-diagonal pairs.
    pub fn antisymmetry_defect(&self) -> f64 {
        let n = self.j.nrows();
        let mut worst = 0.0f64;
        for m in 0..n {
            for k in (m + 1)..n {
                worst = worst.max((self.j[[m, k]] + self.j[[k, m]]).abs());
            }
        }
        worst
    }

    pub fn row_sums(&self) -> Array1<f64> {
        self.j.sum_axis(ndarray::Axis(1))
    }

    /// Add local (non-transport) source terms on the diagonal.
    pub fn with_diagonal(mut self, diag: &Array1<f64>) -> Result<Self> {
        if diag.len() != self.j.nrows() {
            return Err(Error::ShapeMismatch(
                "diagonal length differs from source matrix".into(),
            ));
        }
        for (k, &d) in diag.iter().enumerate() {
            self.j[[k, k]] += d;
        }
        self.includes_nonunitary = true;
        Ok(self)
    }
}

/// `J_mn = 2 Im{φ_m* G_mn φ_n} · spacing` for the effective generator `G` of
/// `dφ/dt = -iGφ`. For a Hermitian `G` the diagonal vanishes and `J` is
/// antisymmetric; a non-Hermitian diagonal part `G_mm ⊃ i r_m` contributes
/// `2 r_m P_m` on the diagonal.
pub fn source_matrix(phi: &WaveFunction, generator: &GeneratorMatrix) -> Result<SourceMatrix> {
    let n = phi.n_sites();
    if generator.dim() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n}-site state with a {}-site generator",
            generator.dim()
        )));
    }
    if generator.representation != phi.grid.representation() {
        return Err(Error::RepresentationMismatch {
            expected: phi.grid.representation(),
            found: generator.representation,
        });
    }
    let h = phi.grid.spacing();
    let mut j = Array2::zeros((n, n));
    for (m, row) in generator.rows().iter().enumerate() {
        let cm = phi.amplitudes[m].conj();
        for &(k, g) in row {
            let v = 2.0 * h * (cm * g * phi.amplitudes[k]).im;
            j[[m, k]] += v;
        }
    }
    // The Hermitian diagonal gives exactly zero; clear rounding residue.
    if generator.hermitian {
        for m in 0..n {
            j[[m, m]] = 0.0;
        }
    }
    Ok(SourceMatrix {
        j,
        representation: generator.representation,
        includes_nonunitary: !generator.hermitian,
    })
}

/// Which collapse generator the diagonal source terms describe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormSource {
    /// The nonlinear equation with `K`, `L` evaluated at this norm.
    Value(f64),
    /// The normalised linear route `φ = ψ/‖ψ‖`, whose local rate is
    /// `ξ̇(x) - ⟨ξ̇⟩_φ` with `ξ̇ = ∫dz Ḃ(z) G(x - z)`.
    NormalizedRoute,
}

/// Local growth rate `r(x)` of the collapse part of the generator, so that
/// `∂φ/∂t ⊃ r φ` in position space.
pub fn csl_local_rate(
    phi_x: &WaveFunction,
    kernel: &LocalizationKernel,
    noise_rate: &Array1<f64>,
    params: &CslParams,
    convention: NormSource,
) -> Result<Array1<f64>> {
    phi_x.grid.expect(Representation::Position)?;
    if !kernel.grid.same_lattice(&phi_x.grid) || noise_rate.len() != phi_x.n_sites() {
        return Err(Error::ShapeMismatch(
            "state, kernel and noise lattices differ".into(),
        ));
    }
    let xi_dot = kernel.smear(noise_rate);
    Ok(match convention {
        NormSource::Value(n) => {
            let (ck, cl) = kernel_coefficients(n);
            let gamma = params.gamma();
            let g2 = kernel.g2_integral();
            Array1::from_shape_fn(xi_dot.len(), |i| -gamma * ck * g2[i] + cl * xi_dot[i])
        }
        NormSource::NormalizedRoute => {
            let p = phi_x.probabilities();
            let total: f64 = p.sum();
            let mean = p.iter().zip(xi_dot.iter()).map(|(a, b)| a * b).sum::<f64>() / total;
            xi_dot.mapv(|v| v - mean)
        }
    })
}

/// Diagonal source terms produced by the collapse part of the evolution.
///
/// In position space this is `2 r_m P_m`. In momentum space the local rate
/// becomes a convolution; its contribution to `dP_m/dt` is lumped onto the
/// diagonal as `2 b Re{φ̃_m* [F(rφ)]_m}`, computed through the lattice DFT.
/// The jump sampler never uses these entries.
pub fn csl_source_terms(
    phi: &WaveFunction,
    kernel: &LocalizationKernel,
    noise_rate: &Array1<f64>,
    params: &CslParams,
    convention: NormSource,
) -> Result<Array1<f64>> {
    match phi.grid.representation() {
        Representation::Position => {
            let r = csl_local_rate(phi, kernel, noise_rate, params, convention)?;
            Ok(Array1::from_shape_fn(phi.n_sites(), |m| {
                2.0 * r[m] * phi.amplitudes[m].norm_sqr() * phi.grid.spacing()
            }))
        }
        Representation::Momentum => {
            let phi_x = to_position(phi, params.hbar)?;
            let r = csl_local_rate(&phi_x, kernel, noise_rate, params, convention)?;
            let mut rphi = phi_x.clone();
            rphi.amplitudes = Array1::from_shape_fn(r.len(), |k| phi_x.amplitudes[k] * r[k]);
            let f = to_momentum(&rphi, params.hbar)?;
            let b = phi.grid.spacing();
            Ok(Array1::from_shape_fn(phi.n_sites(), |m| {
                2.0 * b * (phi.amplitudes[m].conj() * f.amplitudes[m]).re
            }))
        }
    }
}

/// Jump rates, `t[[m, n]]` = rate from `n` to `m`. The diagonal is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub t: Array2<f64>,
    pub representation: Representation,
}

impl TransitionMatrix {
    pub fn zeros(n: usize, representation: Representation) -> Self {
        Self {
            t: Array2::zeros((n, n)),
            representation,
        }
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    /// `Σ_{m≠n} t[m][n]`.
    pub fn exit_rate(&self, n: usize) -> f64 {
        (0..self.dim())
            .filter(|&m| m != n)
            .map(|m| self.t[[m, n]])
            .sum()
    }

    pub fn min_entry(&self) -> f64 {
        self.t.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn add(&self, other: &TransitionMatrix) -> Result<TransitionMatrix> {
        if self.t.dim() != other.t.dim() || self.representation != other.representation {
            return Err(Error::ShapeMismatch("transition matrices differ".into()));
        }
        Ok(TransitionMatrix {
            t: &self.t + &other.t,
            representation: self.representation,
        })
    }

    /// `Σ_n (T_mn P_n - T_nm P_m)`.
    pub fn master_rhs(&self, p: &Array1<f64>) -> Array1<f64> {
        let n = self.dim();
        Array1::from_shape_fn(n, |m| {
            (0..n)
                .filter(|&k| k != m)
                .map(|k| self.t[[m, k]] * p[k] - self.t[[k, m]] * p[m])
                .sum()
        })
    }

    /// Expected velocity `Σ_n P_n Σ_m (m - n) a t[m][n]` with ring offsets.
    pub fn mean_velocity(&self, p: &Array1<f64>, grid: &Grid) -> f64 {
        let n = self.dim();
        let a = grid.spacing();
        let mut v = 0.0;
        for col in 0..n {
            if p[col] == 0.0 {
                continue;
            }
            for m in 0..n {
                if m != col && self.t[[m, col]] != 0.0 {
                    v += p[col] * grid.site_offset(m, col) as f64 * a * self.t[[m, col]];
                }
            }
        }
        v
    }

    pub fn compile(&self) -> ColumnRates {
        let n = self.dim();
        let columns: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|col| {
                (0..n)
                    .filter(|&m| m != col && self.t[[m, col]] > 0.0)
                    .map(|m| (m, self.t[[m, col]]))
                    .collect()
            })
            .collect();
        let totals = columns
            .iter()
            .map(|c| c.iter().map(|e| e.1).sum())
            .collect();
        ColumnRates { columns, totals }
    }
}

/// Sparse per-column view of a transition matrix for sampling.
#[derive(Debug, Clone)]
pub struct ColumnRates {
    columns: Vec<Vec<(usize, f64)>>,
    totals: Vec<f64>,
}

impl ColumnRates {
    pub fn exit_rate(&self, n: usize) -> f64 {
        self.totals[n]
    }

    /// One categorical draw: move to `m` with probability `t[m][n] dt`.
    pub fn step<R: Rng + ?Sized>(&self, n: usize, dt: f64, rng: &mut R) -> Result<usize> {
        let exit = self.totals[n] * dt;
        if exit > 1.0 + 1e-12 {
            return Err(Error::DtTooLarge {
                site: n,
                exit_probability: exit,
            });
        }
        if exit == 0.0 {
            return Ok(n);
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(m, rate) in &self.columns[n] {
            acc += rate * dt;
            if u < acc {
                return Ok(m);
            }
        }
        Ok(n)
    }
}

/// Bell's minimal solution: `t[m][n] = max(J_mn, 0)/P_n`, zero whenever
/// either site is below the occupancy floor.
pub fn bell_transition(
    j: &SourceMatrix,
    p: &Array1<f64>,
    eps_floor: Option<f64>,
) -> TransitionMatrix {
    let n = p.len();
    let floor = eps_floor.unwrap_or_else(|| default_floor(p));
    let mut t = Array2::zeros((n, n));
    for col in 0..n {
        if p[col] <= floor {
            continue;
        }
        for m in 0..n {
            if m != col && p[m] > floor {
                let v = j.j[[m, col]];
                if v > 0.0 {
                    t[[m, col]] = v / p[col];
                }
            }
        }
    }
    TransitionMatrix {
        t,
        representation: j.representation,
    }
}

/// Largest jump length kept by the Gaussian kernel.
pub fn gaussian_cutoff(width: f64, n_sites: usize) -> usize {
    ((6.0 * width.sqrt()).floor() as usize)
        .max(1)
        .min(n_sites / 2)
}

/// Second moment of the jump length of the Gaussian kernel for uniform `P`:
/// `Σ k² e^{-k²/2w} / Σ e^{-k²/2w}` over `0 < |k| ≤ cutoff`. This is the
/// lattice value of the width that multiplies `rate · a²` in both the drift
/// and the diffusion of the continuum limit.
pub fn effective_width(width: f64, n_sites: usize) -> f64 {
    let cut = gaussian_cutoff(width, n_sites) as i64;
    let (mut z, mut m2) = (0.0, 0.0);
    for k in (-cut..=cut).filter(|&k| k != 0) {
        let w = (-(k * k) as f64 / (2.0 * width)).exp();
        z += w;
        m2 += (k * k) as f64 * w;
    }
    m2 / z
}

/// Homogeneous solution `T⁰_mn ∝ exp{-[k - w ln(P_m/P_n)/(2k)]²/(2w)}`,
/// `k = m - n` on the ring.
///
/// The kernel is scaled by `rate / Z`, with `Z` the column sum for uniform
/// `P`. Because `Z` is the same for every column, `T⁰_mn P_n = T⁰_nm P_m`
/// holds exactly: the exponent equals `-k²/2w + ln(P_m/P_n)/2 - w ln²/8k²`.
pub fn gaussian_homogeneous(
    p: &Array1<f64>,
    grid: &Grid,
    width: f64,
    rate: f64,
    eps_floor: Option<f64>,
) -> Result<TransitionMatrix> {
    let n = p.len();
    if n != grid.n_sites() {
        return Err(Error::ShapeMismatch(
            "probability vector does not match grid".into(),
        ));
    }
    if !(width > 0.0) || !(rate >= 0.0) {
        return Err(Error::invalid(
            "homogeneous kernel needs width > 0 and rate ≥ 0",
        ));
    }
    let mut t = Array2::zeros((n, n));
    if rate == 0.0 {
        return Ok(TransitionMatrix {
            t,
            representation: grid.representation(),
        });
    }
    let floor = eps_floor.unwrap_or_else(|| default_floor(p));
    let cut = gaussian_cutoff(width, n) as isize;
    let z: f64 = (-cut..=cut)
        .filter(|&k| k != 0)
        .map(|k| (-(k * k) as f64 / (2.0 * width)).exp())
        .sum();
    let scale = rate / z;
    let lnp: Vec<f64> = p
        .iter()
        .map(|&v| if v > floor { v.ln() } else { f64::NAN })
        .collect();
    let mut seen = vec![false; n];
    for col in 0..n {
        if p[col] <= floor {
            continue;
        }
        seen.iter_mut().for_each(|s| *s = false);
        for k in (-cut..=cut).filter(|&k| k != 0) {
            let m = grid.site_shift(col, k);
            if m == col || seen[m] || p[m] <= floor {
                continue;
            }
            seen[m] = true;
            let kk = grid.site_offset(m, col) as f64;
            let l = lnp[m] - lnp[col];
            let d = kk - width * l / (2.0 * kk);
            t[[m, col]] = scale * (-d * d / (2.0 * width)).exp();
        }
    }
    Ok(TransitionMatrix {
        t,
        representation: grid.representation(),
    })
}

/// Rates and widths of the homogeneous parts of the position and momentum
/// transition matrices. Widths are in site² units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpParams {
    pub beta: f64,
    pub sigma: f64,
    pub xi: f64,
    pub omega: f64,
    /// Probability floor under Bell's rates; `None` uses [`default_floor`].
    #[serde(default)]
    pub eps_floor: Option<f64>,
}

impl JumpParams {
    pub fn new(beta: f64, sigma: f64, xi: f64, omega: f64) -> Result<Self> {
        let p = Self {
            beta,
            sigma,
            xi,
            omega,
            eps_floor: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let floor_ok = self.eps_floor.is_none_or(|e| e >= 0.0);
        if self.beta >= 0.0 && self.sigma > 0.0 && self.xi >= 0.0 && self.omega > 0.0 && floor_ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid jump parameters {self:?}")))
        }
    }

    /// Bell's process alone.
    pub fn bell_only() -> Self {
        Self {
            beta: 0.0,
            sigma: 1.0,
            xi: 0.0,
            omega: 1.0,
            eps_floor: None,
        }
    }

    /// Choose `β` so that `β σ_eff a² = 2ν` on an `n_sites` position lattice.
    pub fn nelson(nu: f64, sigma: f64, grid: &Grid) -> Result<Self> {
        let a = grid.spacing();
        let beta = 2.0 * nu / (effective_width(sigma, grid.n_sites()) * a * a);
        Self::new(beta, sigma, 0.0, 1.0)
    }

    /// Choose `ξ` so that `ξ Ω_eff b² = ħ²αλ/2` on a momentum lattice.
    pub fn grw_momentum(mut self, params: &CslParams, omega: f64, pgrid: &Grid) -> Result<Self> {
        let b = pgrid.spacing();
        self.omega = omega;
        self.xi =
            params.momentum_diffusion_rate() / (effective_width(omega, pgrid.n_sites()) * b * b);
        self.validate()?;
        Ok(self)
    }

    /// Continuum diffusion coefficient `β σ_eff a²` (twice `ν`).
    pub fn position_diffusion(&self, grid: &Grid) -> f64 {
        self.beta * effective_width(self.sigma, grid.n_sites()) * grid.spacing().powi(2)
    }

    pub fn momentum_diffusion(&self, pgrid: &Grid) -> f64 {
        self.xi * effective_width(self.omega, pgrid.n_sites()) * pgrid.spacing().powi(2)
    }
}

/// A beable sitting on a lattice site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeableState {
    pub site: usize,
    pub representation: Representation,
    pub value: f64,
}

impl BeableState {
    pub fn at(grid: &Grid, site: usize) -> Self {
        Self {
            site,
            representation: grid.representation(),
            value: grid.coordinate(site),
        }
    }
}

/// Single-draw jump step; fails when the exit probability exceeds one.
pub fn jump_step<R: Rng + ?Sized>(
    state: &BeableState,
    t: &TransitionMatrix,
    grid: &Grid,
    dt: f64,
    rng: &mut R,
) -> Result<BeableState> {
    let rates = t.compile();
    let site = rates.step(state.site, dt, rng)?;
    Ok(BeableState::at(grid, site))
}

/// Walker on a periodic lattice that also records its unwrapped
/// displacement in sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Walker {
    pub site: usize,
    pub displacement: i64,
}

/// Exit probability per draw above which a step is subdivided.
pub const MAX_EXIT_PER_DRAW: f64 = 0.5;

/// Advance a walker over `dt`, subdividing whenever the exit probability of
/// a draw would exceed [`MAX_EXIT_PER_DRAW`].
pub fn advance_walker<R: Rng + ?Sized>(
    walker: &mut Walker,
    rates: &ColumnRates,
    grid: &Grid,
    dt: f64,
    rng: &mut R,
) -> Result<()> {
    let mut left = dt;
    let mut guard = 0usize;
    while left > 0.0 {
        let exit = rates.exit_rate(walker.site);
        let h = if exit * left > MAX_EXIT_PER_DRAW {
            MAX_EXIT_PER_DRAW / exit
        } else {
            left
        };
        let to = rates.step(walker.site, h, rng)?;
        if to != walker.site {
            walker.displacement += grid.site_offset(to, walker.site) as i64;
            walker.site = to;
        }
        left -= h;
        if left < dt * 1e-12 {
            break;
        }
        guard += 1;
        if guard > 10_000_000 {
            return Err(Error::Instability(
                "jump subdivision did not terminate".into(),
            ));
        }
    }
    Ok(())
}

/// `max_m |(P_m(t+dt) - P_m(t))/dt - Σ_n J_mn|`.
pub fn check_continuity(
    phi_t: &WaveFunction,
    phi_next: &WaveFunction,
    j: &SourceMatrix,
    dt: f64,
) -> Result<f64> {
    if !phi_t.grid.same_lattice(&phi_next.grid) || j.j.nrows() != phi_t.n_sites() {
        return Err(Error::ShapeMismatch(
            "continuity check on mismatched lattices".into(),
        ));
    }
    let p0 = phi_t.probabilities();
    let p1 = phi_next.probabilities();
    let rows = j.row_sums();
    Ok((0..p0.len())
        .map(|m| ((p1[m] - p0[m]) / dt - rows[m]).abs())
        .fold(0.0, f64::max))
}

/// Sample a site from `P` by inverse CDF.
pub fn sample_site<R: Rng + ?Sized>(p: &Array1<f64>, rng: &mut R) -> usize {
    let total: f64 = p.sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return k;
        }
    }
    p.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

/// Half the L1 distance between two probability vectors.
pub fn total_variation(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    0.5 * a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
}

/// Occupation counts normalised to a probability vector.
pub fn histogram(sites: impl Iterator<Item = usize>, n: usize) -> Array1<f64> {
    let mut h = Array1::zeros(n);
    let mut count = 0.0;
    for s in sites {
        h[s] += 1.0;
        count += 1.0;
    }
    if count > 0.0 {
        h /= count;
    }
    h
}

/// Unitary part of the jump generator as seen by a walker: Bell's rates from
/// the Hermitian generator plus the Gaussian homogeneous term.
pub fn beable_rates(
    phi: &WaveFunction,
    h: &GeneratorMatrix,
    homogeneous_rate: f64,
    width: f64,
    eps_floor: Option<f64>,
) -> Result<TransitionMatrix> {
    let p = probability_vector(phi);
    let j = source_matrix(phi, h)?;
    let bell = bell_transition(&j, &p, eps_floor);
    if homogeneous_rate > 0.0 {
        bell.add(&gaussian_homogeneous(
            &p,
            &phi.grid,
            width,
            homogeneous_rate,
            eps_floor,
        )?)
    } else {
        Ok(bell)
    }
}

/// How the wavefunction carrying the walkers evolves.
#[derive(Debug, Clone, Copy)]
pub enum Evolution<'a> {
    /// Exact unitary evolution; all walkers share one `φ(t)`.
    Unitary {
        hamiltonian: &'a GeneratorMatrix,
        spectrum: &'a Spectrum,
    },
    /// Collapse dynamics. Walker `w` rides realization `w % realizations`.
    Csl {
        hamiltonian: &'a GeneratorMatrix,
        kernel: &'a LocalizationKernel,
        params: CslParams,
        route: CslRoute,
        realizations: usize,
    },
}

/// Outcome of [`equivariance_run`]. Per-checkpoint vectors share indices
/// with `times`.
#[derive(Debug, Clone)]
pub struct EquivarianceRun {
    pub times: Vec<f64>,
    /// Walker histogram against the walker-weighted mean of `P(t)`.
    pub tv_series: Vec<f64>,
    pub histograms: Vec<Array1<f64>>,
    pub targets: Vec<Array1<f64>>,
    /// All walkers, in walker order, at every checkpoint.
    pub snapshots: Vec<Vec<Walker>>,
    /// Final `P` of every realization (a single entry for unitary runs).
    pub final_probabilities: Vec<Array1<f64>>,
    /// Final `φ` of every realization.
    pub final_states: Vec<WaveFunction>,
    pub tv: f64,
}

impl EquivarianceRun {
    pub fn histogram(&self) -> &Array1<f64> {
        self.histograms.last().expect("at least one checkpoint")
    }

    pub fn target(&self) -> &Array1<f64> {
        self.targets.last().expect("at least one checkpoint")
    }

    pub fn walkers(&self) -> &[Walker] {
        self.snapshots.last().expect("at least one checkpoint")
    }
}

/// Unwrapped position of a walker: its starting site plus its displacement.
pub fn walker_position(walker: &Walker, grid: &Grid) -> f64 {
    let d = walker.displacement.rem_euclid(grid.n_sites() as i64) as isize;
    let start = grid.site_shift(walker.site, -d);
    grid.coordinate(start) + walker.displacement as f64 * grid.spacing()
}

pub(crate) fn checkpoint_steps(n_steps: usize, checkpoints: usize) -> Vec<usize> {
    let c = checkpoints.max(1).min(n_steps.max(1));
    let mut v: Vec<usize> = (0..=c).map(|k| k * n_steps / c).collect();
    v.dedup();
    v
}

/// Sample walkers from `P(0)` and drive them with the jump process built
/// from the evolving wavefunction, comparing the walker histogram with
/// `P(t)` at evenly spaced checkpoints.
///
/// Unitary runs use rates evaluated at the midpoint of each step. CSL runs
/// use rates at the start of the step: Bell's part from the Hamiltonian
/// current and the homogeneous part from the realization's own `P`.
#[allow(clippy::too_many_arguments)]
pub fn equivariance_run(
    phi0: &WaveFunction,
    evolution: Evolution<'_>,
    jump: &JumpParams,
    walkers: usize,
    t_final: f64,
    dt: f64,
    seeder: &StreamSeeder,
    checkpoints: usize,
) -> Result<EquivarianceRun> {
    jump.validate()?;
    phi0.grid.expect(Representation::Position)?;
    if walkers == 0 {
        return Err(Error::invalid("need at least one walker"));
    }
    if !(t_final >= 0.0) || !(dt > 0.0) {
        return Err(Error::invalid("need t_final ≥ 0 and dt > 0"));
    }
    let n_steps = (t_final / dt).ceil() as usize;
    let h = if n_steps > 0 {
        t_final / n_steps as f64
    } else {
        dt
    };
    let marks = checkpoint_steps(n_steps, checkpoints);
    let n = phi0.n_sites();
    let grid = phi0.grid.clone();
    let phi0 = phi0.clone().normalized()?;
    let p0 = phi0.probabilities();

    let initial: Vec<Walker> = (0..walkers)
        .map(|w| {
            let site = sample_site(&p0, &mut seeder.stream(StreamKind::InitialSample, w as u64));
            Walker {
                site,
                displacement: 0,
            }
        })
        .collect();
    let rngs: Vec<Stream> = (0..walkers)
        .map(|w| seeder.stream(StreamKind::Jump, w as u64))
        .collect();

    // Per group of walkers sharing a wavefunction: P and walkers at each
    // checkpoint, and the final P.
    struct Track {
        p: Vec<Array1<f64>>,
        walkers: Vec<Vec<Walker>>,
        last: Option<WaveFunction>,
    }
    let (groups, tracks): (Vec<Vec<usize>>, Vec<Track>) = match evolution {
        Evolution::Unitary {
            hamiltonian,
            spectrum,
        } => {
            let half = spectrum.propagator(0.5 * h);
            let mut phi = phi0;
            let mut ws = initial;
            let mut rngs = rngs;
            let mut track = Track {
                p: Vec::new(),
                walkers: Vec::new(),
                last: None,
            };
            let mut mark = marks.iter().peekable();
            for step in 0..=n_steps {
                if mark.peek() == Some(&&step) {
                    mark.next();
                    track.p.push(phi.probabilities());
                    track.walkers.push(ws.clone());
                }
                if step == n_steps {
                    break;
                }
                let mid = half.apply(&phi);
                let rates = beable_rates(&mid, hamiltonian, jump.beta, jump.sigma, jump.eps_floor)?
                    .compile();
                ws.par_iter_mut()
                    .zip(rngs.par_iter_mut())
                    .enumerate()
                    .try_for_each(|(w, (walker, rng))| {
                        advance_walker(walker, &rates, &grid, h, rng).map_err(|e| e.at(w, step))
                    })?;
                phi = half.apply(&mid);
            }
            track.last = Some(phi);
            (vec![(0..walkers).collect()], vec![track])
        }
        Evolution::Csl {
            hamiltonian,
            kernel,
            params,
            route,
            realizations,
        } => {
            params.validate()?;
            let r_count = realizations.clamp(1, walkers);
            let mut members: Vec<(Vec<usize>, Vec<Walker>, Vec<Stream>)> = (0..r_count)
                .map(|_| (Vec::new(), Vec::new(), Vec::new()))
                .collect();
            for (w, (walker, rng)) in initial.into_iter().zip(rngs).enumerate() {
                let g = &mut members[w % r_count];
                g.0.push(w);
                g.1.push(walker);
                g.2.push(rng);
            }
            let tracks: Vec<Result<Track>> = members
                .par_iter_mut()
                .enumerate()
                .map(|(r, (ids, group, group_rngs))| -> Result<Track> {
                    let mut noise_rng = seeder.stream(StreamKind::CollapseNoise, r as u64);
                    let mut real = CslRealization::new(&phi0, route)?;
                    let mut track = Track {
                        p: Vec::new(),
                        walkers: Vec::new(),
                        last: None,
                    };
                    let mut mark = marks.iter().peekable();
                    for step in 0..=n_steps {
                        if mark.peek() == Some(&&step) {
                            mark.next();
                            track.p.push(real.phi.probabilities());
                            track.walkers.push(group.clone());
                        }
                        if step == n_steps {
                            break;
                        }
                        let rates = beable_rates(
                            &real.phi,
                            hamiltonian,
                            jump.beta,
                            jump.sigma,
                            jump.eps_floor,
                        )?
                        .compile();
                        for (k, (walker, rng)) in
                            group.iter_mut().zip(group_rngs.iter_mut()).enumerate()
                        {
                            advance_walker(walker, &rates, &grid, h, rng)
                                .map_err(|e| e.at(ids[k], step))?;
                        }
                        real.step(hamiltonian, kernel, &params, h, &mut noise_rng)
                            .map_err(|e| e.at(r, step))?;
                    }
                    track.last = Some(real.phi);
                    Ok(track)
                })
                .collect();
            let tracks = tracks.into_iter().collect::<Result<Vec<_>>>()?;
            (members.into_iter().map(|m| m.0).collect(), tracks)
        }
    };

    let mut run = EquivarianceRun {
        times: marks.iter().map(|&s| s as f64 * h).collect(),
        tv_series: Vec::new(),
        histograms: Vec::new(),
        targets: Vec::new(),
        snapshots: Vec::new(),
        final_probabilities: tracks
            .iter()
            .map(|t| t.p.last().cloned().unwrap_or_default())
            .collect(),
        final_states: tracks.iter().filter_map(|t| t.last.clone()).collect(),
        tv: 0.0,
    };
    for c in 0..marks.len() {
        let mut target = Array1::zeros(n);
        let mut snapshot = vec![
            Walker {
                site: 0,
                displacement: 0
            };
            walkers
        ];
        for (ids, track) in groups.iter().zip(&tracks) {
            target.scaled_add(ids.len() as f64 / walkers as f64, &track.p[c]);
            for (&w, walker) in ids.iter().zip(&track.walkers[c]) {
                snapshot[w] = *walker;
            }
        }
        let hist = histogram(snapshot.iter().map(|w| w.site), n);
        run.tv_series.push(total_variation(&hist, &target));
        run.histograms.push(hist);
        run.targets.push(target);
        run.snapshots.push(snapshot);
    }
    run.tv = *run.tv_series.last().unwrap_or(&0.0);
    Ok(run)
}
