//! Discrete generators of the time evolution, `dψ/dt = -i G ψ`, in
//! frequency units (`H = p²/2Mħ + V/ħ`).

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Grid, Representation, WaveFunction};

/// Dense generator with a cached sparse row view for application.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub matrix: Array2<Complex64>,
    pub representation: Representation,
    pub hermitian: bool,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl GeneratorMatrix {
    pub fn from_dense(matrix: Array2<Complex64>, representation: Representation) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c {
            return Err(Error::ShapeMismatch(format!("generator is {r}x{c}")));
        }
        let rows = (0..r)
            .map(|i| {
                (0..c)
                    .filter(|&j| matrix[[i, j]] != Complex64::new(0.0, 0.0))
                    .map(|j| (j, matrix[[i, j]]))
                    .collect()
            })
            .collect();
        let mut g = Self {
            matrix,
            representation,
            hermitian: false,
            rows,
        };
        g.hermitian = g.hermiticity_defect() < 1e-12;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `max |M - M†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.matrix[[i, j]] - self.matrix[[j, i]].conj()).norm());
            }
        }
        worst
    }

    pub fn is_real_symmetric(&self) -> bool {
        self.hermitian && self.matrix.iter().all(|z| z.im.abs() < 1e-14)
    }

    /// Maximum absolute row sum; bounds the spectral radius.
    pub fn inf_norm(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| row.iter().map(|(_, z)| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, v: &Array1<Complex64>) -> Array1<Complex64> {
        Array1::from_shape_fn(self.dim(), |i| {
            self.rows[i].iter().map(|&(j, z)| z * v[j]).sum()
        })
    }

    pub fn rows(&self) -> &[Vec<(usize, Complex64)>] {
        &self.rows
    }

    /// `G + i·diag(rates)`: adds a real local growth rate, so that
    /// `dψ_m/dt ⊃ rates_m ψ_m`.
    pub fn with_nonunitary_diagonal(&self, rates: &Array1<f64>) -> Result<Self> {
        if rates.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} rates for a {}-site generator",
                rates.len(),
                self.dim()
            )));
        }
        let mut m = self.matrix.clone();
        for (k, &r) in rates.iter().enumerate() {
            m[[k, k]] += Complex64::new(0.0, r);
        }
        Self::from_dense(m, self.representation)
    }

    /// Eigen-decomposition of a real symmetric generator.
    pub fn spectrum(&self) -> Result<Spectrum> {
        if !self.is_real_symmetric() {
            return Err(Error::invalid(
                "spectrum requires a real symmetric generator",
            ));
        }
        let n = self.dim();
        let m = DMatrix::from_fn(n, n, |i, j| self.matrix[[i, j]].re);
        let eig = m.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let energies = Array1::from_shape_fn(n, |k| eig.eigenvalues[order[k]]);
        let vectors = Array2::from_shape_fn((n, n), |(i, k)| eig.eigenvectors[(i, order[k])]);
        Ok(Spectrum {
            energies,
            vectors,
            representation: self.representation,
        })
    }
}

/// Eigenpairs sorted by ascending frequency; column `k` of `vectors` is the
/// `k`-th eigenvector with unit Euclidean norm.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub energies: Array1<f64>,
    pub vectors: Array2<f64>,
    pub representation: Representation,
}

impl Spectrum {
    /// Eigenstate `k` as a lattice-normalised wavefunction.
    pub fn eigenstate(&self, grid: &Grid, k: usize) -> Result<WaveFunction> {
        let col = self.vectors.column(k);
        let mut amps = col.mapv(|v| Complex64::new(v, 0.0));
        // Fix the sign so the largest component is positive.
        let (imax, _) =
            col.iter().enumerate().fold(
                (0, 0.0),
                |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc },
            );
        if col[imax] < 0.0 {
            amps.mapv_inplace(|z| -z);
        }
        WaveFunction::new(grid.clone(), amps)?.normalized()
    }

    /// Exact propagator `exp(-i G dt)`.
    pub fn propagator(&self, dt: f64) -> UnitaryPropagator {
        let n = self.energies.len();
        let phases: Vec<Complex64> = self
            .energies
            .iter()
            .map(|&e| Complex64::from_polar(1.0, -e * dt))
            .collect();
        let mut u = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += phases[k] * (self.vectors[[i, k]] * self.vectors[[j, k]]);
                }
                u[[i, j]] = acc;
            }
        }
        UnitaryPropagator { matrix: u, dt }
    }
}

#[derive(Debug, Clone)]
pub struct UnitaryPropagator {
    pub matrix: Array2<Complex64>,
    pub dt: f64,
}

impl UnitaryPropagator {
    pub fn apply(&self, psi: &WaveFunction) -> WaveFunction {
        WaveFunction {
            grid: psi.grid.clone(),
            amplitudes: self.matrix.dot(&psi.amplitudes),
            time: psi.time + self.dt,
        }
    }
}

/// External potential in energy units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Potential {
    Free,
    Harmonic { omega: f64 },
    Custom(Vec<f64>),
}

impl Potential {
    /// Linear interpolation of a `(x, V)` table onto the grid; values beyond
    /// the table ends are held constant.
    pub fn from_table(grid: &Grid, table: &[(f64, f64)]) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::invalid("empty potential table"));
        }
        let mut t = table.to_vec();
        t.sort_by(|a, b| a.0.total_cmp(&b.0));
        if t.iter().any(|(x, v)| !x.is_finite() || !v.is_finite()) {
            return Err(Error::invalid("non-finite potential table entry"));
        }
        let values = grid
            .coordinates()
            .iter()
            .map(|&x| {
                if x <= t[0].0 {
                    return t[0].1;
                }
                if x >= t[t.len() - 1].0 {
                    return t[t.len() - 1].1;
                }
                let i = t.partition_point(|e| e.0 <= x);
                let (x0, v0) = t[i - 1];
                let (x1, v1) = t[i];
                if x1 == x0 {
                    v0
                } else {
                    v0 + (v1 - v0) * (x - x0) / (x1 - x0)
                }
            })
            .collect();
        Ok(Potential::Custom(values))
    }

    pub fn values(&self, grid: &Grid, mass: f64) -> Result<Array1<f64>> {
        let v = match self {
            Potential::Free => Array1::zeros(grid.n_sites()),
            Potential::Harmonic { omega } => grid
                .coordinates()
                .mapv(|x| 0.5 * mass * omega * omega * x * x),
            Potential::Custom(vals) => {
                if vals.len() != grid.n_sites() {
                    return Err(Error::ShapeMismatch(format!(
                        "potential has {} values for {} sites",
                        vals.len(),
                        grid.n_sites()
                    )));
                }
                Array1::from(vals.clone())
            }
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite potential"));
        }
        Ok(v)
    }
}

/// Three-point periodic Hamiltonian in frequency units:
/// `-(ħ/2M)(ψ_{n+1} - 2ψ_n + ψ_{n-1})/a² + V_n ψ_n/ħ`.
pub fn build_hamiltonian(
    grid: &Grid,
    mass: f64,
    potential: &Potential,
    hbar: f64,
) -> Result<GeneratorMatrix> {
    grid.expect(Representation::Position)?;
    if !(mass > 0.0) || !(hbar > 0.0) {
        return Err(Error::invalid("mass and hbar must be positive"));
    }
    let n = grid.n_sites();
    let a = grid.spacing();
    let hop = hbar / (2.0 * mass * a * a);
    let v = potential.values(grid, mass)?;
    let mut m = Array2::<Complex64>::zeros((n, n));
    for k in 0..n {
        m[[k, k]] += Complex64::new(2.0 * hop + v[k] / hbar, 0.0);
        m[[k, (k + 1) % n]] += Complex64::new(-hop, 0.0);
        m[[k, (k + n - 1) % n]] += Complex64::new(-hop, 0.0);
    }
    GeneratorMatrix::from_dense(m, Representation::Position)
}

/// Free Hamiltonian on a momentum lattice: `diag(p_k²/2Mħ)`.
pub fn build_momentum_hamiltonian(grid: &Grid, mass: f64, hbar: f64) -> Result<GeneratorMatrix> {
    grid.expect(Representation::Momentum)?;
    if !(mass > 0.0) || !(hbar > 0.0) {
        return Err(Error::invalid("mass and hbar must be positive"));
    }
    let p = grid.coordinates();
    let mut m = Array2::<Complex64>::zeros((grid.n_sites(), grid.n_sites()));
    for (k, &pk) in p.iter().enumerate() {
        m[[k, k]] = Complex64::new(pk * pk / (2.0 * mass * hbar), 0.0);
    }
    GeneratorMatrix::from_dense(m, Representation::Momentum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{to_momentum, to_position};
    use std::f64::consts::PI;

    #[test]
    fn free_stencil_coefficients() {
        let g = Grid::new(4, 1.0, 0.0, Representation::Position).unwrap();
        let h = build_hamiltonian(&g, 1.0, &Potential::Free, 1.0).unwrap();
        for i in 0..4 {
            assert_eq!(h.matrix[[i, i]].re, 1.0);
            assert_eq!(h.matrix[[i, (i + 1) % 4]].re, -0.5);
            assert_eq!(h.matrix[[i, (i + 3) % 4]].re, -0.5);
            assert_eq!(h.matrix[[i, (i + 2) % 4]].re, 0.0);
        }
        assert!(h.hermitian);
        assert!(h.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn constant_potential_shifts_spectrum() {
        let g = Grid::centered(16, 0.5).unwrap();
        let h0 = build_hamiltonian(&g, 1.0, &Potential::Free, 2.0).unwrap();
        let hv = build_hamiltonian(&g, 1.0, &Potential::Custom(vec![3.0; 16]), 2.0).unwrap();
        let e0 = h0.spectrum().unwrap().energies;
        let ev = hv.spectrum().unwrap().energies;
        for k in 0..16 {
            assert!((ev[k] - e0[k] - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_eigenvalue() {
        let g = Grid::centered(512, 0.02).unwrap();
        let p0 = 2.0 * PI * 10.0 / g.span();
        let h = build_hamiltonian(&g, 1.0, &Potential::Free, 1.0).unwrap();
        let psi = WaveFunction::from_fn(g.clone(), |x| Complex64::from_polar(1.0, p0 * x)).unwrap();
        let hpsi = h.apply(&psi.amplitudes);
        let ratio = hpsi[100] / psi.amplitudes[100];
        let exact = p0 * p0 / 2.0;
        // The stencil eigenvalue is (1 - cos(p0 a))/a² = p0²/2 (1 - (p0 a)²/12 + ...).
        assert!(ratio.im.abs() < 1e-9);
        assert!((ratio.re - exact).abs() <= exact * (p0 * 0.02).powi(2) / 12.0 * 1.01);
    }

    #[test]
    fn momentum_hamiltonian_is_diagonal() {
        let g = Grid::centered(64, 0.25).unwrap();
        let pg = g.momentum_grid(1.0).unwrap();
        let h = build_momentum_hamiltonian(&pg, 1.0, 1.0).unwrap();
        let zero_site = 32;
        assert_eq!(pg.coordinate(zero_site), 0.0);
        assert_eq!(h.matrix[[zero_site, zero_site]].re, 0.0);
        assert!(h.hermitian);
        assert!(build_momentum_hamiltonian(&g, 1.0, 1.0).is_err());
        assert!(build_hamiltonian(&pg, 1.0, &Potential::Free, 1.0).is_err());

        let custom = Grid::new(3, 1.0, 0.0, Representation::Momentum).unwrap();
        let h = build_momentum_hamiltonian(&custom, 1.0, 1.0).unwrap();
        assert_eq!(h.matrix[[2, 2]].re, 2.0);
    }

    #[test]
    fn position_and_momentum_hamiltonians_agree_on_smooth_states() {
        let g = Grid::centered(256, 0.1).unwrap();
        let psi = WaveFunction::gaussian(g.clone(), 0.3, 1.0, 0.8, 1.0).unwrap();
        let hx = build_hamiltonian(&g, 1.0, &Potential::Free, 1.0).unwrap();
        let phi = to_momentum(&psi, 1.0).unwrap();
        let hp = build_momentum_hamiltonian(&phi.grid, 1.0, 1.0).unwrap();
        let hp_phi = WaveFunction {
            grid: phi.grid.clone(),
            amplitudes: hp.apply(&phi.amplitudes),
            time: 0.0,
        };
        let via_p = to_position(&hp_phi, 1.0).unwrap();
        let direct = hx.apply(&psi.amplitudes);
        let scale = direct.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let err = direct
            .iter()
            .zip(via_p.amplitudes.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        // O(a²) stencil error relative to the spectral result.
        assert!(err / scale < 0.01, "relative error {}", err / scale);
    }

    #[test]
    fn propagator_is_unitary_and_matches_eigenphase() {
        let g = Grid::centered(32, 0.4).unwrap();
        let h = build_hamiltonian(&g, 1.0, &Potential::Harmonic { omega: 1.0 }, 1.0).unwrap();
        let spec = h.spectrum().unwrap();
        let ground = spec.eigenstate(&g, 0).unwrap();
        let u = spec.propagator(0.3);
        let evolved = u.apply(&ground);
        let expected = Complex64::from_polar(1.0, -spec.energies[0] * 0.3);
        for k in 0..32 {
            assert!((evolved.amplitudes[k] - ground.amplitudes[k] * expected).norm() < 1e-12);
        }
        assert!((evolved.norm_sqr() - 1.0).abs() < 1e-12);
        assert!((spec.energies[0] - 0.5).abs() < 0.02);
    }

    #[test]
    fn potential_table_interpolates() {
        let g = Grid::new(5, 1.0, 0.0, Representation::Position).unwrap();
        let p = Potential::from_table(&g, &[(1.0, 2.0), (3.0, 6.0)]).unwrap();
        assert_eq!(
            p.values(&g, 1.0).unwrap().to_vec(),
            vec![2.0, 2.0, 4.0, 6.0, 6.0]
        );
    }

    #[test]
    fn nonunitary_diagonal_breaks_hermiticity() {
        let g = Grid::centered(8, 1.0).unwrap();
        let h = build_hamiltonian(&g, 1.0, &Potential::Free, 1.0).unwrap();
        let d = Array1::from_elem(8, 0.1);
        let geff = h.with_nonunitary_diagonal(&d).unwrap();
        assert!(!geff.hermitian);
        assert!((geff.matrix[[3, 3]].im - 0.1).abs() < 1e-15);
    }
}
