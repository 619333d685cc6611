//! Periodic 1-D lattices, wavefunctions on them, polar fields, and the
//! position/momentum transform.

use std::f64::consts::PI;

use ndarray::Array1;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Position,
    Momentum,
}

/// Uniform periodic lattice. Site `k` sits at `origin + k * spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n_sites: usize,
    spacing: f64,
    origin: f64,
    representation: Representation,
    // Origin of the Fourier-dual lattice, needed to transform back.
    dual_origin: f64,
}

impl Grid {
    pub fn new(
        n_sites: usize,
        spacing: f64,
        origin: f64,
        representation: Representation,
    ) -> Result<Self> {
        if n_sites < 2 {
            return Err(Error::invalid(format!(
                "grid needs at least 2 sites, got {n_sites}"
            )));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::invalid(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        if !origin.is_finite() {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(Self {
            n_sites,
            spacing,
            origin,
            representation,
            dual_origin: 0.0,
        })
    }

    /// Position lattice of `n_sites` sites centred on zero.
    pub fn centered(n_sites: usize, spacing: f64) -> Result<Self> {
        Self::new(
            n_sites,
            spacing,
            -((n_sites / 2) as f64) * spacing,
            Representation::Position,
        )
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    /// Period of the lattice, `N * spacing`.
    pub fn span(&self) -> f64 {
        self.n_sites as f64 * self.spacing
    }

    pub fn coordinate(&self, site: usize) -> f64 {
        self.origin + site as f64 * self.spacing
    }

    pub fn coordinates(&self) -> Array1<f64> {
        Array1::from_shape_fn(self.n_sites, |k| self.coordinate(k))
    }

    /// The conjugate momentum lattice: `b = 2πħ/(N a)`, sites ordered by
    /// signed frequency from `-floor(N/2)` upwards.
    pub fn momentum_grid(&self, hbar: f64) -> Result<Grid> {
        self.expect(Representation::Position)?;
        let b = 2.0 * PI * hbar / (self.n_sites as f64 * self.spacing);
        let mut g = Grid::new(
            self.n_sites,
            b,
            -((self.n_sites / 2) as f64) * b,
            Representation::Momentum,
        )?;
        g.dual_origin = self.origin;
        Ok(g)
    }

    /// Inverse of [`Grid::momentum_grid`].
    pub fn position_grid(&self, hbar: f64) -> Result<Grid> {
        self.expect(Representation::Momentum)?;
        let a = 2.0 * PI * hbar / (self.n_sites as f64 * self.spacing);
        Grid::new(self.n_sites, a, self.dual_origin, Representation::Position)
    }

    pub fn expect(&self, rep: Representation) -> Result<()> {
        if self.representation == rep {
            Ok(())
        } else {
            Err(Error::RepresentationMismatch {
                expected: rep,
                found: self.representation,
            })
        }
    }

    /// Map `x` into `[origin, origin + span)`.
    pub fn wrap(&self, x: f64) -> f64 {
        self.origin + (x - self.origin).rem_euclid(self.span())
    }

    /// Shortest signed displacement equivalent to `d` on the ring.
    pub fn min_image(&self, d: f64) -> f64 {
        let l = self.span();
        d - l * (d / l).round()
    }

    /// Signed ring offset `m - n` in `(-N/2, N/2]`.
    pub fn site_offset(&self, m: usize, n: usize) -> isize {
        let nn = self.n_sites as isize;
        let mut k = (m as isize - n as isize).rem_euclid(nn);
        if k > nn / 2 {
            k -= nn;
        }
        k
    }

    pub fn site_shift(&self, n: usize, k: isize) -> usize {
        (n as isize + k).rem_euclid(self.n_sites as isize) as usize
    }

    /// Site nearest to `x` (periodic).
    pub fn nearest_site(&self, x: f64) -> usize {
        let u = (self.wrap(x) - self.origin) / self.spacing;
        (u.round() as usize) % self.n_sites
    }

    pub fn same_lattice(&self, other: &Grid) -> bool {
        self.n_sites == other.n_sites
            && self.representation == other.representation
            && (self.spacing - other.spacing).abs() <= 1e-12 * self.spacing
            && (self.origin - other.origin).abs() <= 1e-12 * self.span()
    }
}

/// Amplitudes over a grid, normalised so that `Σ |ψ_n|² · spacing = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    pub grid: Grid,
    pub amplitudes: Array1<Complex64>,
    pub time: f64,
}

impl WaveFunction {
    pub fn new(grid: Grid, amplitudes: Array1<Complex64>) -> Result<Self> {
        if amplitudes.len() != grid.n_sites() {
            return Err(Error::ShapeMismatch(format!(
                "{} amplitudes for {} sites",
                amplitudes.len(),
                grid.n_sites()
            )));
        }
        if amplitudes
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::invalid("non-finite amplitude"));
        }
        Ok(Self {
            grid,
            amplitudes,
            time: 0.0,
        })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let amps = grid.coordinates().mapv(f);
        Self::new(grid, amps)
    }

    /// Normalised Gaussian packet `exp(-(x-x0)²/4σ² + i p0 x/ħ)`.
    pub fn gaussian(grid: Grid, x0: f64, sigma: f64, p0: f64, hbar: f64) -> Result<Self> {
        let g = grid.clone();
        let psi = Self::from_fn(grid, |x| {
            let d = g.min_image(x - x0);
            Complex64::from_polar((-d * d / (4.0 * sigma * sigma)).exp(), p0 * x / hbar)
        })?;
        psi.normalized()
    }

    pub fn n_sites(&self) -> usize {
        self.grid.n_sites()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.spacing()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm();
        if !(n > f64::MIN_POSITIVE) || !n.is_finite() {
            return Err(Error::ZeroNorm);
        }
        self.amplitudes.mapv_inplace(|z| z / n);
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    /// `P_m = |ψ_m|² · spacing`.
    pub fn probabilities(&self) -> Array1<f64> {
        let h = self.grid.spacing();
        self.amplitudes.mapv(|z| z.norm_sqr() * h)
    }

    /// `⟨self|other⟩` with the lattice measure.
    pub fn inner(&self, other: &WaveFunction) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * self.grid.spacing()
    }

    pub fn max_abs_diff(&self, other: &WaveFunction) -> f64 {
        self.amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Polar form `ψ = R exp(iS/ħ)` on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarFields {
    pub amplitude_r: Array1<f64>,
    pub phase_s: Array1<f64>,
    pub grid: Grid,
    pub hbar: f64,
    pub node_threshold: f64,
}

/// Relative node threshold: sites with `R < 1e-8 · max R` count as nodes.
pub const NODE_FRACTION: f64 = 1e-8;

/// Polar decomposition with left-to-right phase unwrapping.
///
/// Phases are unwrapped only across sites whose amplitude exceeds
/// `node_threshold` (default `1e-8 · max R`); inside node regions the phase is
/// held at the last valid value. A phase step of exactly π is kept, not
/// folded, so real wavefunctions give `S ∈ {0, πħ}`.
pub fn polar_decompose(psi: &WaveFunction, hbar: f64, node_threshold: Option<f64>) -> PolarFields {
    let r = psi.amplitudes.mapv(|z| z.norm());
    let rmax = r.iter().cloned().fold(0.0, f64::max);
    let eps = node_threshold.unwrap_or(NODE_FRACTION * rmax);
    let n = psi.n_sites();
    let mut s = Array1::zeros(n);

    let first_valid = r.iter().position(|&v| v > eps);
    if let Some(first) = first_valid {
        let mut prev = psi.amplitudes[first].arg();
        let mut acc = prev;
        for k in 0..n {
            if k > first && r[k] > eps {
                let theta = psi.amplitudes[k].arg();
                let mut d = theta - prev;
                while d > PI {
                    d -= 2.0 * PI;
                }
                while d < -PI {
                    d += 2.0 * PI;
                }
                acc += d;
                prev = theta;
            }
            s[k] = hbar * acc;
        }
        // Sites before the first valid one keep its phase.
        for k in 0..first {
            s[k] = hbar * psi.amplitudes[first].arg();
        }
    }

    PolarFields {
        amplitude_r: r,
        phase_s: s,
        grid: psi.grid.clone(),
        hbar,
        node_threshold: eps,
    }
}

impl PolarFields {
    pub fn reconstruct(&self) -> Array1<Complex64> {
        Array1::from_shape_fn(self.amplitude_r.len(), |k| {
            Complex64::from_polar(self.amplitude_r[k], self.phase_s[k] / self.hbar)
        })
    }

    /// Forward difference of `S` taken modulo `2πħ`, so the periodic seam
    /// and any phase winding give the local wavenumber `ħ·Δarg/a`.
    pub fn phase_gradient(&self) -> Array1<f64> {
        let n = self.amplitude_r.len();
        let a = self.grid.spacing();
        Array1::from_shape_fn(n, |k| {
            let j = (k + 1) % n;
            let mut d = (self.phase_s[j] - self.phase_s[k]) / self.hbar;
            d -= 2.0 * PI * (d / (2.0 * PI)).round();
            self.hbar * d / a
        })
    }

    /// Forward difference of `ln R`, an estimate of `R'/R` at the bond
    /// midpoints. Amplitudes are floored at the node threshold so the
    /// result stays bounded by `ln(max R / ε)/a`; the second value counts
    /// bonds touching a node.
    pub fn log_amplitude_gradient(&self) -> (Array1<f64>, usize) {
        let n = self.amplitude_r.len();
        let a = self.grid.spacing();
        let floor = self.node_threshold.max(f64::MIN_POSITIVE);
        let mut clamped = 0;
        let ln = self.amplitude_r.mapv(|r| r.max(floor).ln());
        let out = Array1::from_shape_fn(n, |k| {
            let j = (k + 1) % n;
            if self.amplitude_r[k] <= floor || self.amplitude_r[j] <= floor {
                clamped += 1;
            }
            (ln[j] - ln[k]) / a
        });
        (out, clamped)
    }
}

/// `(f_{n+1} - f_n)/spacing` with the periodic wrap at the last site.
pub fn forward_difference(field: &Array1<f64>, grid: &Grid) -> Result<Array1<f64>> {
    let n = grid.n_sites();
    if field.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "field of length {} on {n} sites",
            field.len()
        )));
    }
    let a = grid.spacing();
    Ok(Array1::from_shape_fn(n, |k| {
        (field[(k + 1) % n] - field[k]) / a
    }))
}

/// Transform a position wavefunction to momentum space.
///
/// `φ̃(p_k) = a/√(2πħ) Σ_n ψ(x_n) exp(-i p_k x_n/ħ)`, which is unitary for
/// the lattice measures `a` and `b = 2πħ/(N a)`.
pub fn to_momentum(psi: &WaveFunction, hbar: f64) -> Result<WaveFunction> {
    psi.grid.expect(Representation::Position)?;
    let pgrid = psi.grid.momentum_grid(hbar)?;
    let n = psi.n_sites();
    let a = psi.grid.spacing();
    let b = pgrid.spacing();
    let x0 = psi.grid.origin();
    let p0 = pgrid.origin();

    let mut buf: Vec<Complex64> = (0..n)
        .map(|j| psi.amplitudes[j] * Complex64::from_polar(1.0, -p0 * j as f64 * a / hbar))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let scale = a / (2.0 * PI * hbar).sqrt();
    let global = Complex64::from_polar(scale, -p0 * x0 / hbar);
    let amps = Array1::from_shape_fn(n, |k| {
        buf[k] * global * Complex64::from_polar(1.0, -(k as f64) * b * x0 / hbar)
    });
    Ok(WaveFunction {
        grid: pgrid,
        amplitudes: amps,
        time: psi.time,
    })
}

/// Inverse of [`to_momentum`].
pub fn to_position(phi: &WaveFunction, hbar: f64) -> Result<WaveFunction> {
    phi.grid.expect(Representation::Momentum)?;
    let xgrid = phi.grid.position_grid(hbar)?;
    let n = phi.n_sites();
    let a = xgrid.spacing();
    let b = phi.grid.spacing();
    let x0 = xgrid.origin();
    let p0 = phi.grid.origin();

    let mut buf: Vec<Complex64> = (0..n)
        .map(|k| phi.amplitudes[k] * Complex64::from_polar(1.0, k as f64 * b * x0 / hbar))
        .collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);

    let scale = b / (2.0 * PI * hbar).sqrt();
    let global = Complex64::from_polar(scale, p0 * x0 / hbar);
    let amps = Array1::from_shape_fn(n, |j| {
        buf[j] * global * Complex64::from_polar(1.0, p0 * j as f64 * a / hbar)
    });
    Ok(WaveFunction {
        grid: xgrid,
        amplitudes: amps,
        time: phi.time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(grid: &Grid, rng: &mut ChaCha8Rng) -> WaveFunction {
        let amps = Array1::from_shape_fn(grid.n_sites(), |_| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        WaveFunction::new(grid.clone(), amps)
            .unwrap()
            .normalized()
            .unwrap()
    }

    #[test]
    fn grid_sites() {
        let g = Grid::new(4, 1.0, 0.0, Representation::Position).unwrap();
        assert_eq!(g.coordinates().to_vec(), vec![0.0, 1.0, 2.0, 3.0]);

        let g = Grid::new(64, 0.25, -8.0, Representation::Position).unwrap();
        assert_eq!(g.coordinate(0), -8.0);
        assert_eq!(g.coordinate(63), 7.75);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(matches!(
            Grid::new(1, 1.0, 0.0, Representation::Position),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Grid::new(4, 0.0, 0.0, Representation::Position).is_err());
        assert!(Grid::new(4, -1.0, 0.0, Representation::Position).is_err());
    }

    #[test]
    fn momentum_spacing() {
        let g = Grid::new(64, 0.25, -8.0, Representation::Position).unwrap();
        let p = g.momentum_grid(1.0).unwrap();
        assert!((p.spacing() - std::f64::consts::FRAC_PI_8).abs() < 1e-15);
        assert_eq!(p.representation(), Representation::Momentum);
        let back = p.position_grid(1.0).unwrap();
        assert!(back.same_lattice(&g));
    }

    #[test]
    fn ring_offsets() {
        let g = Grid::new(8, 1.0, 0.0, Representation::Position).unwrap();
        assert_eq!(g.site_offset(1, 7), 2);
        assert_eq!(g.site_offset(7, 1), -2);
        assert_eq!(g.site_offset(4, 0), 4);
        assert_eq!(g.site_shift(7, 2), 1);
        assert!((g.min_image(7.5) - (-0.5)).abs() < 1e-15);
        assert_eq!(g.nearest_site(-0.2), 0);
        assert_eq!(g.nearest_site(7.6), 0);
    }

    #[test]
    fn plane_wave_polar() {
        let g = Grid::centered(64, 0.25).unwrap();
        let p0 = 2.0 * PI * 3.0 / g.span();
        let psi = WaveFunction::from_fn(g.clone(), |x| Complex64::from_polar(1.0, p0 * x)).unwrap();
        let pol = polar_decompose(&psi, 1.0, None);
        for k in 0..64 {
            assert!((pol.amplitude_r[k] - 1.0).abs() < 1e-12);
        }
        // Unwrapped phase is linear up to the global offset of the first site.
        let x = g.coordinates();
        for k in 0..64 {
            let expect = pol.phase_s[0] + p0 * (x[k] - x[0]);
            assert!((pol.phase_s[k] - expect).abs() < 1e-9);
        }
        let grad = pol.phase_gradient();
        for k in 0..64 {
            assert!((grad[k] - p0).abs() < 1e-9, "site {k}: {}", grad[k]);
        }
    }

    #[test]
    fn real_gaussian_has_zero_phase() {
        let g = Grid::centered(128, 0.1).unwrap();
        let psi = WaveFunction::gaussian(g, 0.0, 1.0, 0.0, 1.0).unwrap();
        let pol = polar_decompose(&psi, 1.0, None);
        assert!(pol.phase_s.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn cosine_superposition_phase_is_piecewise_constant() {
        let g = Grid::new(200, 0.05, 0.013, Representation::Position).unwrap();
        let psi = WaveFunction::from_fn(g.clone(), |x| {
            (Complex64::from_polar(1.0, x) + Complex64::from_polar(1.0, -x)) / 2f64.sqrt()
        })
        .unwrap();
        let pol = polar_decompose(&psi, 1.0, None);
        for (k, x) in g.coordinates().iter().enumerate() {
            let expect_r = 2f64.sqrt() * x.cos().abs();
            assert!((pol.amplitude_r[k] - expect_r).abs() < 1e-12);
            let s = pol.phase_s[k];
            assert!(
                s.abs() < 1e-12 || (s - PI).abs() < 1e-12,
                "S = {s} at x = {x}"
            );
            let expect_s = if x.cos() >= 0.0 { 0.0 } else { PI };
            assert!((s - expect_s).abs() < 1e-12);
        }
    }

    #[test]
    fn polar_reconstruction_up_to_global_phase() {
        let g = Grid::centered(48, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let psi = random_state(&g, &mut rng);
            let pol = polar_decompose(&psi, 0.7, None);
            let rec = pol.reconstruct();
            let k0 = 0;
            let phase = psi.amplitudes[k0] / rec[k0];
            for k in 0..48 {
                if pol.amplitude_r[k] > pol.node_threshold {
                    assert!((rec[k] * phase - psi.amplitudes[k]).norm() < 1e-10);
                }
            }
            // No jump larger than π·ħ between neighbouring valid sites.
            for k in 0..47 {
                assert!((pol.phase_s[k + 1] - pol.phase_s[k]).abs() <= PI * 0.7 + 1e-12);
            }
        }
    }

    #[test]
    fn node_region_freezes_phase() {
        let g = Grid::new(6, 1.0, 0.0, Representation::Position).unwrap();
        let amps = Array1::from(vec![
            Complex64::from_polar(1.0, 0.3),
            Complex64::from_polar(1.0, 0.6),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::from_polar(1.0, 0.9),
            Complex64::from_polar(1.0, 1.2),
        ]);
        let psi = WaveFunction::new(g, amps).unwrap();
        let pol = polar_decompose(&psi, 1.0, None);
        assert!((pol.phase_s[2] - 0.6).abs() < 1e-15);
        assert!((pol.phase_s[3] - 0.6).abs() < 1e-15);
        assert!((pol.phase_s[4] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn forward_difference_cases() {
        let g = Grid::new(8, 0.5, 0.0, Representation::Position).unwrap();
        let x = g.coordinates();
        let lin = x.mapv(|x| 3.0 * x);
        let d = forward_difference(&lin, &g).unwrap();
        for k in 0..7 {
            assert_eq!(d[k], 3.0);
        }
        let c = Array1::from_elem(8, 2.5);
        assert!(forward_difference(&c, &g)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let sq = x.mapv(|x| x * x);
        let d = forward_difference(&sq, &g).unwrap();
        assert!((d[2] - 2.5).abs() < 1e-15);
        assert!(forward_difference(&Array1::zeros(3), &g).is_err());
    }

    #[test]
    fn dft_round_trip_and_unitarity() {
        let g = Grid::new(64, 0.37, -5.3, Representation::Position).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let psi = random_state(&g, &mut rng);
            let phi = to_momentum(&psi, 1.3).unwrap();
            assert!((phi.norm_sqr() - 1.0).abs() < 1e-10);
            let back = to_position(&phi, 1.3).unwrap();
            assert!(back.grid.same_lattice(&g));
            assert!(back.max_abs_diff(&psi) < 1e-10);
        }
    }

    #[test]
    fn dft_matches_direct_sum() {
        let g = Grid::new(12, 0.4, -2.1, Representation::Position).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let psi = random_state(&g, &mut rng);
        let hbar = 0.8;
        let phi = to_momentum(&psi, hbar).unwrap();
        let x = g.coordinates();
        let p = phi.grid.coordinates();
        for k in 0..12 {
            let direct: Complex64 = (0..12)
                .map(|n| psi.amplitudes[n] * Complex64::from_polar(1.0, -p[k] * x[n] / hbar))
                .sum::<Complex64>()
                * (0.4 / (2.0 * PI * hbar).sqrt());
            assert!((direct - phi.amplitudes[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn dft_of_gaussian_is_gaussian() {
        let sigma = 1.0;
        let g = Grid::centered(256, 0.1).unwrap();
        let psi = WaveFunction::gaussian(g, 0.0, sigma, 0.0, 1.0).unwrap();
        let phi = to_momentum(&psi, 1.0).unwrap();
        let sp = 1.0 / (2.0 * sigma);
        let p = phi.grid.coordinates();
        let norm = (2.0 * PI * sp * sp).powf(-0.25);
        for k in 0..256 {
            let expect = norm * (-p[k] * p[k] / (4.0 * sp * sp)).exp();
            assert!((phi.amplitudes[k] - expect).norm() < 1e-3, "p = {}", p[k]);
        }
    }

    #[test]
    fn dft_of_plane_wave_is_one_site() {
        let g = Grid::centered(64, 0.25).unwrap();
        let pgrid = g.momentum_grid(1.0).unwrap();
        let p0 = pgrid.coordinate(40);
        let psi = WaveFunction::from_fn(g, |x| Complex64::from_polar(1.0, p0 * x))
            .unwrap()
            .normalized()
            .unwrap();
        let phi = to_momentum(&psi, 1.0).unwrap();
        let probs = phi.probabilities();
        assert!((probs[40] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn representation_mismatch() {
        let g = Grid::centered(8, 1.0).unwrap();
        let psi = WaveFunction::gaussian(g, 0.0, 1.0, 0.0, 1.0).unwrap();
        assert!(matches!(
            to_position(&psi, 1.0),
            Err(Error::RepresentationMismatch { .. })
        ));
        let phi = to_momentum(&psi, 1.0).unwrap();
        assert!(to_momentum(&phi, 1.0).is_err());
    }
}
