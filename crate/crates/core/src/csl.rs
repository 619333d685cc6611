//! Stochastic wavefunction dynamics of the CSL model.
//!
//! The linear Stratonovich equation
//! `dψ = [(-iH - λ) dt + ∫dz dB(z) G(x - z)] ψ` is integrated with a Heun
//! predictor-corrector step and normalised afterwards (`φ = ψ/‖ψ‖`). The
//! norm-preserving nonlinear equation with kernels
//! `K = G²[1 - 3‖ψ‖² + 2‖ψ‖⁴]` and `L = G[1 - ‖ψ‖²]` is available as a second
//! route, with the norm entering `K` and `L` supplied by the caller.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::GeneratorMatrix;
use crate::lattice::{Grid, Representation, WaveFunction};

/// Collapse parameters. `gamma` is always derived from `alpha` and `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CslParams {
    /// Inverse squared localization length.
    pub alpha: f64,
    /// Collapse rate.
    pub lambda: f64,
    pub mass: f64,
    pub hbar: f64,
    /// Diffusion constant of the position beable.
    pub nu: f64,
}

impl CslParams {
    /// Parameters with the Nelson value `ν = ħ/2M`.
    pub fn new(alpha: f64, lambda: f64, mass: f64, hbar: f64) -> Result<Self> {
        let p = Self {
            alpha,
            lambda,
            mass,
            hbar,
            nu: hbar / (2.0 * mass),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_nu(mut self, nu: f64) -> Result<Self> {
        self.nu = nu;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.lambda >= 0.0
            && self.mass > 0.0
            && self.hbar > 0.0
            && self.nu >= 0.0
            && [self.alpha, self.lambda, self.mass, self.hbar, self.nu]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid CSL parameters {self:?}")))
        }
    }

    /// `γ = λ (4π/α)^{1/2}`.
    pub fn gamma(&self) -> f64 {
        self.lambda * (4.0 * PI / self.alpha).sqrt()
    }

    /// Rate of growth of the momentum variance, `ħ²αλ/2`.
    pub fn momentum_diffusion_rate(&self) -> f64 {
        self.hbar * self.hbar * self.alpha * self.lambda / 2.0
    }

    /// Coherence decay rate between points separated by `d`:
    /// `λ (1 - exp(-α d²/4))`.
    pub fn decoherence_rate(&self, d: f64) -> f64 {
        self.lambda * (1.0 - (-self.alpha * d * d / 4.0).exp())
    }
}

/// White collapse noise on the z-lattice: one Gaussian increment per site per
/// step with `⟨dB_i dB_j⟩ = γ dt δ_ij / a_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    pub z_grid: Grid,
    pub increments: Array1<f64>,
    pub accumulated: Array1<f64>,
    pub last_dt: f64,
}

impl NoiseField {
    pub fn new(z_grid: Grid) -> Result<Self> {
        z_grid.expect(Representation::Position)?;
        let n = z_grid.n_sites();
        Ok(Self {
            z_grid,
            increments: Array1::zeros(n),
            accumulated: Array1::zeros(n),
            last_dt: 0.0,
        })
    }

    /// A field holding a prescribed set of increments over `dt`.
    pub fn with_increments(z_grid: Grid, increments: Array1<f64>, dt: f64) -> Result<Self> {
        if increments.len() != z_grid.n_sites() {
            return Err(Error::ShapeMismatch(
                "increments do not match z-grid".into(),
            ));
        }
        let mut f = Self::new(z_grid)?;
        f.accumulated = increments.clone();
        f.increments = increments;
        f.last_dt = dt;
        Ok(f)
    }

    /// Draw fresh increments in place and add them to the accumulated field.
    pub fn sample<R: Rng + ?Sized>(&mut self, dt: f64, gamma: f64, rng: &mut R) {
        let sd = (gamma * dt / self.z_grid.spacing()).sqrt();
        if sd > 0.0 {
            for v in self.increments.iter_mut() {
                *v = sd * rng.sample::<f64, _>(StandardNormal);
            }
        } else {
            self.increments.fill(0.0);
        }
        self.accumulated += &self.increments;
        self.last_dt = dt;
    }

    /// `dB/dt` for the most recent increments.
    pub fn rate(&self) -> Array1<f64> {
        if self.last_dt > 0.0 {
            &self.increments / self.last_dt
        } else {
            Array1::zeros(self.increments.len())
        }
    }
}

/// Functional form of [`NoiseField::sample`].
pub fn sample_noise<R: Rng + ?Sized>(
    noise: &NoiseField,
    dt: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<NoiseField> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    let mut next = noise.clone();
    next.sample(dt, gamma, rng);
    Ok(next)
}

/// `G(u) = √(α/2π) exp(-α u²/2)`.
pub fn localization_gaussian(alpha: f64, u: f64) -> f64 {
    (alpha / (2.0 * PI)).sqrt() * (-0.5 * alpha * u * u).exp()
}

/// `∂G/∂u`.
pub fn localization_gaussian_derivative(alpha: f64, u: f64) -> f64 {
    -alpha * u * localization_gaussian(alpha, u)
}

/// Kernel matrices `G(x_i - z_j)` and `∂G/∂x` between the x-lattice and the
/// z-lattice (here the same periodic lattice, using minimum-image distances).
#[derive(Debug, Clone)]
pub struct LocalizationKernel {
    pub grid: Grid,
    pub alpha: f64,
    pub g_matrix: Array2<f64>,
    pub dg_dx_matrix: Array2<f64>,
    band: Vec<Vec<(usize, f64)>>,
    g2_integral: Array1<f64>,
    cutoff: f64,
}

impl LocalizationKernel {
    pub fn new(grid: &Grid, alpha: f64) -> Result<Self> {
        grid.expect(Representation::Position)?;
        if !(alpha > 0.0) {
            return Err(Error::invalid("alpha must be positive"));
        }
        let n = grid.n_sites();
        let x = grid.coordinates();
        let g_matrix = Array2::from_shape_fn((n, n), |(i, j)| {
            localization_gaussian(alpha, grid.min_image(x[i] - x[j]))
        });
        let dg_dx_matrix = Array2::from_shape_fn((n, n), |(i, j)| {
            localization_gaussian_derivative(alpha, grid.min_image(x[i] - x[j]))
        });
        // exp(-40) relative to the peak is below double precision resolution
        // of any sum it enters.
        let cutoff = (80.0 / alpha).sqrt();
        let band: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| grid.min_image(x[i] - x[j]).abs() <= cutoff)
                    .map(|j| (j, g_matrix[[i, j]]))
                    .collect()
            })
            .collect();
        let a = grid.spacing();
        let g2_integral =
            Array1::from_shape_fn(n, |i| band[i].iter().map(|&(_, g)| a * g * g).sum::<f64>());
        Ok(Self {
            grid: grid.clone(),
            alpha,
            g_matrix,
            dg_dx_matrix,
            band,
            g2_integral,
            cutoff,
        })
    }

    /// `Σ_j a_z w_j G(x_i - z_j)` at every lattice site.
    pub fn smear(&self, weights: &Array1<f64>) -> Array1<f64> {
        let a = self.grid.spacing();
        Array1::from_shape_fn(self.band.len(), |i| {
            a * self.band[i]
                .iter()
                .map(|&(j, g)| g * weights[j])
                .sum::<f64>()
        })
    }

    /// Local noise exponent `ξ_i = Σ_j a_z dB_j G(x_i - z_j)` for one step.
    pub fn noise_exponent(&self, noise: &NoiseField) -> Array1<f64> {
        self.smear(&noise.increments)
    }

    /// `∫dz G(x_i - z)²` on the lattice.
    pub fn g2_integral(&self) -> &Array1<f64> {
        &self.g2_integral
    }

    /// `Σ_j a_z G(x_i - z_j)`, which tends to one on fine lattices.
    pub fn row_integral(&self, i: usize) -> f64 {
        self.grid.spacing() * self.g_matrix.row(i).sum()
    }

    /// Off-lattice evaluation of `Σ_j a_z w_j G(x - z_j)` and its
    /// x-derivative.
    pub fn evaluate_at(&self, x: f64, weights: &Array1<f64>) -> (f64, f64) {
        let a = self.grid.spacing();
        let n = self.grid.n_sites();
        let centre = self.grid.nearest_site(x);
        let reach = ((self.cutoff / a).ceil() as isize).min(n as isize / 2);
        let lo = -reach;
        let hi = if 2 * reach >= n as isize {
            n as isize - reach - 1
        } else {
            reach
        };
        let mut value = 0.0;
        let mut grad = 0.0;
        for k in lo..=hi {
            let j = self.grid.site_shift(centre, k);
            let u = self.grid.min_image(x - self.grid.coordinate(j));
            let g = localization_gaussian(self.alpha, u);
            value += a * weights[j] * g;
            grad += a * weights[j] * (-self.alpha * u * g);
        }
        (value, grad)
    }
}

fn check_compatible(
    psi: &WaveFunction,
    h: &GeneratorMatrix,
    kernel: &LocalizationKernel,
) -> Result<()> {
    psi.grid.expect(Representation::Position)?;
    if h.representation != Representation::Position {
        return Err(Error::RepresentationMismatch {
            expected: Representation::Position,
            found: h.representation,
        });
    }
    if h.dim() != psi.n_sites() || !kernel.grid.same_lattice(&psi.grid) {
        return Err(Error::ShapeMismatch(
            "wavefunction, generator and kernel lattices differ".into(),
        ));
    }
    Ok(())
}

fn check_step(h: &GeneratorMatrix, params: &CslParams, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::StepTooLarge(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if params.lambda * dt >= 0.1 {
        return Err(Error::StepTooLarge(format!(
            "λ·dt = {} ≥ 0.1",
            params.lambda * dt
        )));
    }
    let hn = h.inf_norm() * dt;
    if hn >= 0.1 {
        return Err(Error::StepTooLarge(format!("‖H‖·dt = {hn} ≥ 0.1")));
    }
    Ok(())
}

/// One Heun step of `dψ = -i dt Hψ + local ⊙ ψ`, where `local` already
/// carries its factor of `dt` (or of the noise increment).
fn heun_local(
    amps: &Array1<Complex64>,
    h: &GeneratorMatrix,
    dt: f64,
    local: &Array1<f64>,
) -> Array1<Complex64> {
    let mi_dt = Complex64::new(0.0, -dt);
    let rhs = |v: &Array1<Complex64>| -> Array1<Complex64> {
        let hv = h.apply(v);
        Array1::from_shape_fn(v.len(), |k| mi_dt * hv[k] + local[k] * v[k])
    };
    let k1 = rhs(amps);
    let pred = amps + &k1;
    let k2 = rhs(&pred);
    Array1::from_shape_fn(amps.len(), |k| amps[k] + 0.5 * (k1[k] + k2[k]))
}

/// One Heun step of the linear CSL equation. The norm is not restored.
///
/// Requires `λ dt < 0.1` and `‖H‖_∞ dt < 0.1`.
pub fn step_linear_csl(
    psi: &WaveFunction,
    h: &GeneratorMatrix,
    kernel: &LocalizationKernel,
    noise: &NoiseField,
    params: &CslParams,
    dt: f64,
) -> Result<WaveFunction> {
    check_compatible(psi, h, kernel)?;
    check_step(h, params, dt)?;
    let xi = kernel.noise_exponent(noise);
    let local = xi.mapv(|v| v - params.lambda * dt);
    Ok(WaveFunction {
        grid: psi.grid.clone(),
        amplitudes: heun_local(&psi.amplitudes, h, dt, &local),
        time: psi.time + dt,
    })
}

/// `φ = ψ/‖ψ‖`.
pub fn normalize_to_phi(psi: &WaveFunction) -> Result<WaveFunction> {
    psi.clone().normalized()
}

/// Result of a nonlinear step: the renormalised state and the norm the raw
/// Heun update ended with (its departure from one is the norm drift).
#[derive(Debug, Clone)]
pub struct NonlinearStep {
    pub phi: WaveFunction,
    pub raw_norm: f64,
}

impl NonlinearStep {
    pub fn norm_drift(&self) -> f64 {
        self.raw_norm - 1.0
    }

    /// The raw (unrenormalised) update.
    pub fn raw(&self) -> WaveFunction {
        WaveFunction {
            grid: self.phi.grid.clone(),
            amplitudes: self.phi.amplitudes.mapv(|z| z * self.raw_norm),
            time: self.phi.time,
        }
    }
}

/// Coefficients `(1 - 3n² + 2n⁴, 1 - n²)` multiplying `G²` in `K` and `G` in
/// `L` for a norm `n`.
pub fn kernel_coefficients(norm_source: f64) -> (f64, f64) {
    let n2 = norm_source * norm_source;
    (1.0 - 3.0 * n2 + 2.0 * n2 * n2, 1.0 - n2)
}

/// One Heun step of the norm-preserving nonlinear equation
/// `dφ = [(-iH - γ∫K) dt + ∫dB L] φ`, with `K` and `L` evaluated at
/// `norm_source`. The output is renormalised.
pub fn step_nonlinear_csl(
    phi: &WaveFunction,
    h: &GeneratorMatrix,
    kernel: &LocalizationKernel,
    noise: &NoiseField,
    params: &CslParams,
    dt: f64,
    norm_source: f64,
) -> Result<NonlinearStep> {
    check_compatible(phi, h, kernel)?;
    check_step(h, params, dt)?;
    let (ck, cl) = kernel_coefficients(norm_source);
    let xi = kernel.noise_exponent(noise);
    let gamma = params.gamma();
    let g2 = kernel.g2_integral();
    let local = Array1::from_shape_fn(xi.len(), |i| -gamma * ck * g2[i] * dt + cl * xi[i]);
    let raw = WaveFunction {
        grid: phi.grid.clone(),
        amplitudes: heun_local(&phi.amplitudes, h, dt, &local),
        time: phi.time + dt,
    };
    let raw_norm = raw.norm();
    let phi = raw.normalized()?;
    Ok(NonlinearStep { phi, raw_norm })
}

/// `ρ(x, x') = mean_r ψ_r(x) ψ_r(x')*` over linear-route states. Because the
/// members are unnormalised, this is the `‖ψ‖²`-weighted average of `φφ†`.
pub fn ensemble_density_matrix(members: &[WaveFunction]) -> Result<Array2<Complex64>> {
    let first = members
        .first()
        .ok_or_else(|| Error::invalid("empty ensemble"))?;
    let n = first.n_sites();
    for m in members {
        if !m.grid.same_lattice(&first.grid) || (m.time - first.time).abs() > 1e-9 {
            return Err(Error::ShapeMismatch(
                "ensemble members differ in grid or time".into(),
            ));
        }
    }
    let mut rho = Array2::zeros((n, n));
    for m in members {
        for i in 0..n {
            for j in 0..n {
                rho[[i, j]] += m.amplitudes[i] * m.amplitudes[j].conj();
            }
        }
    }
    rho.mapv_inplace(|z: Complex64| z / members.len() as f64);
    Ok(rho)
}

/// Average of `ψ(x_n) ψ(x_{n+shift})*` over all sites and members: the
/// density matrix at separation `shift·a`, averaged along the diagonal.
pub fn ensemble_coherence(members: &[WaveFunction], shift: usize) -> Result<Complex64> {
    let first = members
        .first()
        .ok_or_else(|| Error::invalid("empty ensemble"))?;
    let n = first.n_sites();
    let mut acc = Complex64::new(0.0, 0.0);
    for m in members {
        if !m.grid.same_lattice(&first.grid) {
            return Err(Error::ShapeMismatch(
                "ensemble members differ in grid".into(),
            ));
        }
        for i in 0..n {
            acc += m.amplitudes[i] * m.amplitudes[(i + shift) % n].conj();
        }
    }
    Ok(acc / (members.len() * n) as f64)
}

/// Which equation produces the normalised state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CslRoute {
    /// Linear equation followed by `φ = ψ/‖ψ‖`.
    Linear,
    /// Norm-preserving equation with `K` and `L` at a fixed norm, or at the
    /// running norm of a companion linear solution when `None`.
    Nonlinear { norm_source: Option<f64> },
}

/// Per-step norm below which a realization is declared dead.
pub const MIN_STEP_NORM: f64 = 1e-150;

/// One noise realization: the normalised state, the logarithm of the norm
/// of the linear solution driven by the same noise, and the noise itself.
///
/// The linear state is renormalised every step and its norm accumulated as
/// a logarithm, so long runs never underflow.
#[derive(Debug, Clone)]
pub struct CslRealization {
    pub phi: WaveFunction,
    pub log_norm: f64,
    pub noise: NoiseField,
    pub route: CslRoute,
    /// Normalised linear solution, kept only when it differs from `phi`.
    companion: Option<WaveFunction>,
    pub last_norm_drift: f64,
}

impl CslRealization {
    pub fn new(phi0: &WaveFunction, route: CslRoute) -> Result<Self> {
        let phi = phi0.clone().normalized()?;
        let companion = match route {
            CslRoute::Linear => None,
            CslRoute::Nonlinear { .. } => Some(phi.clone()),
        };
        Ok(Self {
            noise: NoiseField::new(phi.grid.clone())?,
            phi,
            log_norm: 0.0,
            route,
            companion,
            last_norm_drift: 0.0,
        })
    }

    /// `‖ψ‖` of the linear solution.
    pub fn norm(&self) -> f64 {
        self.log_norm.exp()
    }

    /// The linear-route state `ψ = ‖ψ‖ φ`.
    pub fn linear_state(&self) -> WaveFunction {
        let phi = self.companion.as_ref().unwrap_or(&self.phi);
        let n = self.norm();
        WaveFunction {
            grid: phi.grid.clone(),
            amplitudes: phi.amplitudes.mapv(|z| z * n),
            time: phi.time,
        }
    }

    pub fn step<R: Rng + ?Sized>(
        &mut self,
        h: &GeneratorMatrix,
        kernel: &LocalizationKernel,
        params: &CslParams,
        dt: f64,
        rng: &mut R,
    ) -> Result<()> {
        self.noise.sample(dt, params.gamma(), rng);
        self.advance(h, kernel, params, dt)
    }

    /// Step with prescribed noise increments.
    pub fn step_with_increments(
        &mut self,
        h: &GeneratorMatrix,
        kernel: &LocalizationKernel,
        params: &CslParams,
        dt: f64,
        increments: &Array1<f64>,
    ) -> Result<()> {
        if increments.len() != self.noise.increments.len() {
            return Err(Error::ShapeMismatch(
                "increments do not match z-grid".into(),
            ));
        }
        self.noise.increments.assign(increments);
        self.noise.accumulated += increments;
        self.noise.last_dt = dt;
        self.advance(h, kernel, params, dt)
    }

    fn advance(
        &mut self,
        h: &GeneratorMatrix,
        kernel: &LocalizationKernel,
        params: &CslParams,
        dt: f64,
    ) -> Result<()> {
        let base = self.companion.as_ref().unwrap_or(&self.phi);
        let lin = step_linear_csl(base, h, kernel, &self.noise, params, dt)?;
        let n = lin.norm();
        if !(n > MIN_STEP_NORM) || !n.is_finite() {
            return Err(Error::ZeroNorm);
        }
        let lin_phi = WaveFunction {
            amplitudes: lin.amplitudes.mapv(|z| z / n),
            ..lin
        };
        match self.route {
            CslRoute::Linear => self.phi = lin_phi,
            CslRoute::Nonlinear { norm_source } => {
                let source = norm_source.unwrap_or_else(|| self.norm());
                let st = step_nonlinear_csl(&self.phi, h, kernel, &self.noise, params, dt, source)?;
                self.last_norm_drift = st.norm_drift();
                self.phi = st.phi;
                self.companion = Some(lin_phi);
            }
        }
        self.log_norm += n.ln();
        Ok(())
    }
}
