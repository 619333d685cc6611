//! Continuum trajectory integrators.
//!
//! Bohm guidance `ẋ = S'/M`, Nelson's diffusion
//! `dx = [2ν R'/R + S'/M] dt + √(2ν) dw`, the CSL position equation with the
//! noise-tracking term, the CSL momentum diffusion `dp = ħ √(αλ/2) dw`, and
//! the coupled phase-space process. All are Euler–Maruyama steps; the noise
//! is additive, so Itô and Stratonovich readings agree.
//!
//! Positions are kept unwrapped. Lattice fields are evaluated periodically.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::csl::{localization_gaussian, CslParams, LocalizationKernel, NoiseField};
use crate::error::{Error, Result};
use crate::lattice::{
    polar_decompose, Grid, PolarFields, Representation, WaveFunction, NODE_FRACTION,
};
use crate::rng::{Stream, StreamKind, StreamSeeder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangevinState {
    pub x: f64,
    pub p: f64,
    pub t: f64,
    /// Momentum used as the drift in [`DriftMode::P0`].
    pub p0: f64,
}

impl LangevinState {
    pub fn new(x: f64, p: f64) -> Self {
        Self {
            x,
            p,
            t: 0.0,
            p0: p,
        }
    }
}

/// Drift of the CSL position equation: the fixed `p₀/M`, or the live
/// momentum beable `p(t)/M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftMode {
    P0,
    Coupled,
}

/// Random streams owned by one trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryStreams {
    pub diffusion: Stream,
    pub momentum: Stream,
    pub noise: Stream,
}

impl TrajectoryStreams {
    pub fn new(seeder: &StreamSeeder, index: u64) -> Self {
        Self {
            diffusion: seeder.stream(StreamKind::Diffusion, index),
            momentum: seeder.stream(StreamKind::MomentumDiffusion, index),
            noise: seeder.stream(StreamKind::CollapseNoise, index),
        }
    }
}

/// Periodic linear interpolation of values sitting at `origin + (k + shift)·a`.
fn interpolate(values: &Array1<f64>, grid: &Grid, shift: f64, x: f64) -> (f64, usize, usize) {
    let n = values.len();
    let u = (x - grid.origin()) / grid.spacing() - shift;
    let k = u.floor();
    let f = u - k;
    let i = (k as i64).rem_euclid(n as i64) as usize;
    let j = (i + 1) % n;
    ((1.0 - f) * values[i] + f * values[j], i, j)
}

/// Velocity `S'/M` and osmotic ratio `R'/R` of a wavefunction snapshot.
///
/// Forward differences estimate the derivatives at bond midpoints, so both
/// fields are interpolated from `x_n + a/2`. `R'/R` is clamped at
/// `1/(ε a)` with `ε` the relative node threshold.
#[derive(Debug, Clone)]
pub struct GuidanceField {
    grid: Grid,
    velocity: Array1<f64>,
    osmotic: Array1<f64>,
    node_bond: Vec<bool>,
}

impl GuidanceField {
    pub fn new(polar: &PolarFields, mass: f64) -> Result<Self> {
        polar.grid.expect(Representation::Position)?;
        if !(mass > 0.0) {
            return Err(Error::invalid("mass must be positive"));
        }
        let n = polar.amplitude_r.len();
        let a = polar.grid.spacing();
        let velocity = polar.phase_gradient() / mass;
        let (mut osmotic, _) = polar.log_amplitude_gradient();
        let cap = 1.0 / (NODE_FRACTION * a);
        osmotic.mapv_inplace(|v| v.clamp(-cap, cap));
        let eps = polar.node_threshold;
        let node_bond = (0..n)
            .map(|k| polar.amplitude_r[k] <= eps || polar.amplitude_r[(k + 1) % n] <= eps)
            .collect();
        Ok(Self {
            grid: polar.grid.clone(),
            velocity,
            osmotic,
            node_bond,
        })
    }

    pub fn from_wavefunction(psi: &WaveFunction, hbar: f64, mass: f64) -> Result<Self> {
        Self::new(&polar_decompose(psi, hbar, None), mass)
    }

    pub fn velocity_at(&self, x: f64) -> f64 {
        interpolate(&self.velocity, &self.grid, 0.5, x).0
    }

    /// `R'/R` at `x` and whether a node bond was involved.
    pub fn osmotic_at(&self, x: f64) -> (f64, bool) {
        let (v, i, j) = interpolate(&self.osmotic, &self.grid, 0.5, x);
        (v, self.node_bond[i] || self.node_bond[j])
    }
}

/// `x ← x + S'(x)/M dt`.
pub fn step_bohm(state: &LangevinState, field: &GuidanceField, dt: f64) -> LangevinState {
    LangevinState {
        x: state.x + field.velocity_at(state.x) * dt,
        t: state.t + dt,
        ..*state
    }
}

/// Nelson step. Returns the new state and whether the osmotic term was
/// evaluated next to a node. With `ν = 0` no random number is drawn and the
/// result equals [`step_bohm`] bit for bit.
pub fn step_nelson<R: Rng + ?Sized>(
    state: &LangevinState,
    field: &GuidanceField,
    nu: f64,
    dt: f64,
    rng: &mut R,
) -> Result<(LangevinState, bool)> {
    if !(nu >= 0.0) {
        return Err(Error::invalid("nu must be nonnegative"));
    }
    if nu == 0.0 {
        return Ok((step_bohm(state, field, dt), false));
    }
    let (osm, node) = field.osmotic_at(state.x);
    let drift = 2.0 * nu * osm + field.velocity_at(state.x);
    let w: f64 = rng.sample(StandardNormal);
    let next = LangevinState {
        x: state.x + drift * dt + (2.0 * nu * dt).sqrt() * w,
        t: state.t + dt,
        ..*state
    };
    Ok((next, node))
}

/// Running integral `A(x, t) = Σ_j a_z B_j(t) G(x - z_j)` of the collapse
/// noise, with `B_j(t) = ∫₀ᵗ dB_j`, and its x-derivative.
///
/// In shared mode the field follows a [`NoiseField`] that also drives a
/// wavefunction. In lazy mode only the sites inside the kernel window of the
/// queried point are ever sampled: each `B_j` is a Brownian path of variance
/// `γ t/a_z`, brought up to date from its last sampled time when it is
/// needed. The law of `A` and `∂A/∂x` along any trajectory is the same as
/// for a fully sampled field.
#[derive(Debug, Clone)]
pub struct AccumulatedNoiseIntegral {
    grid: Grid,
    alpha: f64,
    gamma: f64,
    reach: isize,
    values: Array1<f64>,
    stamps: Vec<f64>,
    t: f64,
    lazy: bool,
}

impl AccumulatedNoiseIntegral {
    fn build(grid: &Grid, alpha: f64, gamma: f64, lazy: bool) -> Result<Self> {
        grid.expect(Representation::Position)?;
        if !(alpha > 0.0) || !(gamma >= 0.0) {
            return Err(Error::invalid("need alpha > 0 and gamma ≥ 0"));
        }
        let n = grid.n_sites();
        // G is below 1e-8 of its peak beyond 6/√α.
        let reach =
            ((6.0 / alpha.sqrt() / grid.spacing()).ceil() as isize).min((n as isize - 1) / 2);
        Ok(Self {
            grid: grid.clone(),
            alpha,
            gamma,
            reach,
            values: Array1::zeros(n),
            stamps: vec![0.0; n],
            t: 0.0,
            lazy,
        })
    }

    /// Shared mode, fed by [`absorb`](Self::absorb).
    pub fn shared(kernel: &LocalizationKernel, params: &CslParams) -> Result<Self> {
        Self::build(&kernel.grid, kernel.alpha, params.gamma(), false)
    }

    /// Lazy mode on the z-lattice `grid`.
    pub fn lazy(grid: &Grid, params: &CslParams) -> Result<Self> {
        Self::build(grid, params.alpha, params.gamma(), true)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Add one step of a fully sampled noise field.
    pub fn absorb(&mut self, noise: &NoiseField) -> Result<()> {
        if self.lazy {
            return Err(Error::invalid(
                "a lazy noise integral samples its own increments",
            ));
        }
        if !noise.z_grid.same_lattice(&self.grid) {
            return Err(Error::ShapeMismatch("noise field lattice differs".into()));
        }
        self.values += &noise.increments;
        self.t += noise.last_dt;
        Ok(())
    }

    /// Move the clock of a lazy integral forward.
    pub fn advance(&mut self, dt: f64) -> Result<()> {
        if !self.lazy {
            return Err(Error::invalid(
                "a shared noise integral advances through absorb",
            ));
        }
        self.t += dt;
        Ok(())
    }

    /// `(A(x), ∂A/∂x)` at the current time.
    pub fn evaluate<R: Rng + ?Sized>(&mut self, x: f64, rng: &mut R) -> (f64, f64) {
        let a = self.grid.spacing();
        let centre = self.grid.nearest_site(x);
        let mut value = 0.0;
        let mut grad = 0.0;
        for k in -self.reach..=self.reach {
            let j = self.grid.site_shift(centre, k);
            if self.lazy {
                let gap = self.t - self.stamps[j];
                if gap > 0.0 {
                    if self.gamma > 0.0 {
                        let sd = (self.gamma * gap / a).sqrt();
                        self.values[j] += sd * rng.sample::<f64, _>(StandardNormal);
                    }
                    self.stamps[j] = self.t;
                }
            }
            let b = self.values[j];
            if b != 0.0 {
                let u = self.grid.min_image(x - self.grid.coordinate(j));
                let g = localization_gaussian(self.alpha, u);
                value += a * b * g;
                grad -= a * b * self.alpha * u * g;
            }
        }
        (value, grad)
    }
}

fn drift_momentum(state: &LangevinState, mode: DriftMode) -> f64 {
    match mode {
        DriftMode::P0 => state.p0,
        DriftMode::Coupled => state.p,
    }
}

fn move_position<R: Rng + ?Sized, Q: Rng + ?Sized>(
    state: &mut LangevinState,
    acc: &mut AccumulatedNoiseIntegral,
    params: &CslParams,
    dt: f64,
    mode: DriftMode,
    diffusion: &mut R,
    noise: &mut Q,
) {
    let nu = params.nu;
    let mut dx = drift_momentum(state, mode) / params.mass * dt;
    if nu > 0.0 {
        let (_, grad) = acc.evaluate(state.x, noise);
        let w: f64 = diffusion.sample(StandardNormal);
        dx += 2.0 * nu * grad * dt + (2.0 * nu * dt).sqrt() * w;
    }
    state.x += dx;
}

fn kick_momentum<R: Rng + ?Sized>(
    state: &mut LangevinState,
    params: &CslParams,
    dt: f64,
    rng: &mut R,
) {
    let c = params.hbar * (params.alpha * params.lambda / 2.0).sqrt();
    if c > 0.0 {
        let w: f64 = rng.sample(StandardNormal);
        state.p += c * (dt).sqrt() * w;
    }
}

/// CSL position step
/// `dx = (p/M) dt + 2ν ∂A/∂x dt + √(2ν) dw`, using `acc` at the start of the
/// step. The caller advances `acc` afterwards.
pub fn step_csl_position(
    state: &LangevinState,
    acc: &mut AccumulatedNoiseIntegral,
    params: &CslParams,
    dt: f64,
    streams: &mut TrajectoryStreams,
    mode: DriftMode,
) -> LangevinState {
    let mut next = *state;
    move_position(
        &mut next,
        acc,
        params,
        dt,
        mode,
        &mut streams.diffusion,
        &mut streams.noise,
    );
    next.t += dt;
    next
}

/// `dp = ħ √(αλ/2) dw`. No number is drawn when the coefficient vanishes.
pub fn step_csl_momentum<R: Rng + ?Sized>(
    state: &LangevinState,
    params: &CslParams,
    dt: f64,
    rng: &mut R,
) -> LangevinState {
    let mut next = *state;
    kick_momentum(&mut next, params, dt, rng);
    next.t += dt;
    next
}

/// Momentum kick, then the position step driven by the updated momentum,
/// then the lazy noise clock.
pub fn step_phase_space(
    state: &LangevinState,
    acc: &mut AccumulatedNoiseIntegral,
    params: &CslParams,
    dt: f64,
    streams: &mut TrajectoryStreams,
) -> Result<LangevinState> {
    let mut next = *state;
    kick_momentum(&mut next, params, dt, &mut streams.momentum);
    move_position(
        &mut next,
        acc,
        params,
        dt,
        DriftMode::Coupled,
        &mut streams.diffusion,
        &mut streams.noise,
    );
    acc.advance(dt)?;
    next.t += dt;
    Ok(next)
}
