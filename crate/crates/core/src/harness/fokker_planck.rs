//! Finite-difference solver for the free-particle phase-space equation
//!
//! `∂Q/∂t = -(p/M) ∂Q/∂x + D_x ∂²Q/∂x² + D_p ∂²Q/∂p²`, `D_p = ħ²αλ/4`.
//!
//! Strang splitting: a half step of momentum diffusion (explicit, centred),
//! a full step of transport and position diffusion (exact in Fourier space
//! along x), and another half step of momentum diffusion. Both directions
//! are periodic.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::csl::CslParams;
use crate::error::{Error, Result};
use crate::harness::stats::Moments;
use crate::lattice::Grid;

/// Largest `D_p (dt/2)/dp²` accepted by the explicit half step.
pub const DIFFUSION_CFL: f64 = 0.5;

/// Density on an `(x, p)` lattice, indexed `[ix, ip]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceDensity {
    pub x_grid: Grid,
    pub p_grid: Grid,
    pub q: Array2<f64>,
    pub t: f64,
}

impl PhaseSpaceDensity {
    pub fn new(x_grid: Grid, p_grid: Grid, q: Array2<f64>) -> Result<Self> {
        if q.dim() != (x_grid.n_sites(), p_grid.n_sites()) {
            return Err(Error::ShapeMismatch(
                "density does not match the phase-space lattice".into(),
            ));
        }
        Ok(Self {
            x_grid,
            p_grid,
            q,
            t: 0.0,
        })
    }

    /// Correlated Gaussian sampled on the lattice and normalised to unit mass.
    pub fn gaussian(
        x_grid: Grid,
        p_grid: Grid,
        mean: (f64, f64),
        var: (f64, f64),
        cov: f64,
    ) -> Result<Self> {
        let det = var.0 * var.1 - cov * cov;
        if !(var.0 > 0.0 && var.1 > 0.0 && det > 0.0) {
            return Err(Error::invalid(
                "covariance matrix must be positive definite",
            ));
        }
        let xs = x_grid.coordinates();
        let ps = p_grid.coordinates();
        let mut q = Array2::from_shape_fn((xs.len(), ps.len()), |(i, j)| {
            let dx = xs[i] - mean.0;
            let dp = ps[j] - mean.1;
            (-(var.1 * dx * dx - 2.0 * cov * dx * dp + var.0 * dp * dp) / (2.0 * det)).exp()
        });
        let cell = x_grid.spacing() * p_grid.spacing();
        let m = q.sum() * cell;
        q /= m;
        Self::new(x_grid, p_grid, q)
    }

    pub fn mass(&self) -> f64 {
        self.q.sum() * self.x_grid.spacing() * self.p_grid.spacing()
    }

    /// Moments of the density, normalised by its mass.
    pub fn moments(&self) -> Moments {
        let xs = self.x_grid.coordinates();
        let ps = self.p_grid.coordinates();
        let m = self.q.sum();
        let (mut sx, mut sp) = (0.0, 0.0);
        for ((i, j), &w) in self.q.indexed_iter() {
            sx += w * xs[i];
            sp += w * ps[j];
        }
        let (mx, mp) = (sx / m, sp / m);
        let (mut vx, mut vp, mut c) = (0.0, 0.0, 0.0);
        for ((i, j), &w) in self.q.indexed_iter() {
            let dx = xs[i] - mx;
            let dp = ps[j] - mp;
            vx += w * dx * dx;
            vp += w * dp * dp;
            c += w * dx * dp;
        }
        Moments {
            mean_x: mx,
            var_x: vx / m,
            mean_p: mp,
            var_p: vp / m,
            cov_xp: c / m,
        }
    }
}

/// Evolve `q0` to `t_final`. `position_diffusion` is `D_x`; the momentum
/// diffusion follows from `params`.
pub fn fokker_planck_oracle(
    params: &CslParams,
    q0: &PhaseSpaceDensity,
    t_final: f64,
    dt: f64,
    position_diffusion: f64,
) -> Result<PhaseSpaceDensity> {
    params.validate()?;
    if !(dt > 0.0) || !(t_final >= 0.0) || !(position_diffusion >= 0.0) {
        return Err(Error::invalid("need dt > 0, t_final ≥ 0 and D_x ≥ 0"));
    }
    let steps = (t_final / dt).ceil() as usize;
    let h = if steps > 0 {
        t_final / steps as f64
    } else {
        dt
    };
    let d_p = params.hbar * params.hbar * params.alpha * params.lambda / 4.0;
    let dp = q0.p_grid.spacing();
    let r = d_p * 0.5 * h / (dp * dp);
    if r > DIFFUSION_CFL {
        return Err(Error::StepTooLarge(format!(
            "momentum diffusion number {r} exceeds {DIFFUSION_CFL}"
        )));
    }
    let nx = q0.x_grid.n_sites();
    let np = q0.p_grid.n_sites();
    let lx = q0.x_grid.span();
    let ps = q0.p_grid.coordinates();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nx);
    let inv = planner.plan_fft_inverse(nx);
    let wavenumbers: Vec<f64> = (0..nx)
        .map(|m| {
            let s = if m <= nx / 2 {
                m as f64
            } else {
                m as f64 - nx as f64
            };
            2.0 * std::f64::consts::PI * s / lx
        })
        .collect();
    // Per momentum row: the Fourier multiplier of one transport step.
    let multipliers: Vec<Vec<Complex64>> = ps
        .iter()
        .map(|&p| {
            let v = p / params.mass;
            wavenumbers
                .iter()
                .enumerate()
                .map(|(m, &k)| {
                    let decay = (-position_diffusion * k * k * h).exp();
                    if nx.is_multiple_of(2) && m == nx / 2 {
                        // The Nyquist mode of a real field must stay real.
                        Complex64::new(decay * (k * v * h).cos(), 0.0)
                    } else {
                        Complex64::from_polar(decay, -k * v * h)
                    }
                })
                .collect()
        })
        .collect();

    let mut out = q0.clone();
    let mass0 = out.mass();
    let mut buf = vec![Complex64::new(0.0, 0.0); nx];
    let mut scratch = Array2::zeros((nx, np));
    for step in 0..steps {
        diffuse_p(&mut out.q, &mut scratch, r);
        for j in 0..np {
            for i in 0..nx {
                buf[i] = Complex64::new(out.q[[i, j]], 0.0);
            }
            fwd.process(&mut buf);
            for (b, m) in buf.iter_mut().zip(&multipliers[j]) {
                *b *= m;
            }
            inv.process(&mut buf);
            for i in 0..nx {
                out.q[[i, j]] = buf[i].re / nx as f64;
            }
        }
        diffuse_p(&mut out.q, &mut scratch, r);
        out.t += h;
        let mass = out.mass();
        if (mass - mass0).abs() > 1e-6 * mass0.abs() {
            return Err(Error::Instability(format!(
                "mass drifted from {mass0} to {mass} at step {step}"
            )));
        }
        let peak = out.q.iter().cloned().fold(0.0, f64::max);
        let low = out.q.iter().cloned().fold(0.0, f64::min);
        if low < -1e-6 * peak {
            return Err(Error::Instability(format!(
                "density reached {low} (peak {peak}) at step {step}"
            )));
        }
    }
    Ok(out)
}

fn diffuse_p(q: &mut Array2<f64>, scratch: &mut Array2<f64>, r: f64) {
    if r == 0.0 {
        return;
    }
    let (nx, np) = q.dim();
    for i in 0..nx {
        for j in 0..np {
            let up = q[[i, (j + 1) % np]];
            let down = q[[i, (j + np - 1) % np]];
            scratch[[i, j]] = q[[i, j]] + r * (up - 2.0 * q[[i, j]] + down);
        }
    }
    std::mem::swap(q, scratch);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Representation;

    fn grids(nx: usize, lx: f64, np: usize, p_lo: f64, p_hi: f64) -> (Grid, Grid) {
        let x = Grid::new(nx, lx / nx as f64, -lx / 2.0, Representation::Position).unwrap();
        let dp = (p_hi - p_lo) / np as f64;
        let p = Grid::new(np, dp, p_lo, Representation::Momentum).unwrap();
        (x, p)
    }

    #[test]
    fn transport_without_collapse_shears_the_density() {
        let params = CslParams::new(1.0, 0.0, 1.0, 1.0).unwrap();
        let (x, p) = grids(256, 64.0, 64, -2.0, 4.0);
        let q0 = PhaseSpaceDensity::gaussian(x, p, (-10.0, 1.0), (1.0, 0.09), 0.0).unwrap();
        let q = fokker_planck_oracle(&params, &q0, 5.0, 0.05, 0.0).unwrap();
        let m0 = q0.moments();
        let m = q.moments();
        assert!((m.mean_x - (m0.mean_x + 5.0 * m0.mean_p)).abs() < 1e-6);
        assert!((m.var_p - m0.var_p).abs() < 1e-10);
        assert!((m.var_x - (m0.var_x + 25.0 * m0.var_p)).abs() < 1e-6);
        assert!((m.cov_xp - 5.0 * m0.var_p).abs() < 1e-6);
        assert!((q.mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn point_mass_translates_at_its_velocity() {
        let params = CslParams::new(1.0, 0.0, 2.0, 1.0).unwrap();
        let (x, p) = grids(128, 32.0, 8, -1.0, 3.0);
        let mut q = Array2::zeros((128, 8));
        // p-site 4 is p = 1; velocity 0.5. x-site 40 is x = 4.
        q[[40, 4]] = 1.0;
        let q0 = PhaseSpaceDensity::new(x.clone(), p, q).unwrap();
        // Steps of one lattice spacing keep the transport exact.
        let out = fokker_planck_oracle(&params, &q0, 2.0, 0.5, 0.0).unwrap();
        let (imax, _) = out
            .q
            .column(4)
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        assert_eq!(imax, 44);
        assert!((out.q[[44, 4]] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn heavy_particle_momentum_variance_grows_linearly() {
        let params = CslParams::new(1.0, 0.04, 1e9, 1.0).unwrap();
        let (x, p) = grids(16, 16.0, 128, -4.0, 4.0);
        let q0 = PhaseSpaceDensity::gaussian(x, p, (0.0, 0.0), (1.0, 0.25), 0.0).unwrap();
        let q = fokker_planck_oracle(&params, &q0, 10.0, 0.05, 0.0).unwrap();
        let rate = (q.moments().var_p - q0.moments().var_p) / 10.0;
        assert!((rate - 0.02).abs() < 1e-6, "{rate}");
    }

    #[test]
    fn unstable_step_is_refused() {
        let params = CslParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let (x, p) = grids(16, 16.0, 64, -1.0, 1.0);
        let q0 = PhaseSpaceDensity::gaussian(x, p, (0.0, 0.0), (1.0, 0.1), 0.0).unwrap();
        assert!(matches!(
            fokker_planck_oracle(&params, &q0, 1.0, 0.5, 0.0),
            Err(Error::StepTooLarge(_))
        ));
    }
}
