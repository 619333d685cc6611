//! Experiment configuration.
//!
//! A config is a flat JSON object. The `scenario` key selects a preset and
//! every other key overrides it; unknown keys are rejected.
//!
//! ```json
//! { "scenario": "csl_momentum_diffusion", "lambda": 0.04, "seed": 7 }
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::csl::{CslParams, CslRoute};
use crate::error::{Error, Result};
use crate::generators::Potential;
use crate::jump::JumpParams;
use crate::langevin::DriftMode;
use crate::lattice::{Grid, Representation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    UnitaryEquivariance,
    BohmLimit,
    NelsonVariance,
    CslCollapse,
    CslMomentumDiffusion,
    PhaseSpaceFokkerPlanck,
    DecoherenceRate,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::UnitaryEquivariance,
        Scenario::BohmLimit,
        Scenario::NelsonVariance,
        Scenario::CslCollapse,
        Scenario::CslMomentumDiffusion,
        Scenario::PhaseSpaceFokkerPlanck,
        Scenario::DecoherenceRate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::UnitaryEquivariance => "unitary_equivariance",
            Scenario::BohmLimit => "bohm_limit",
            Scenario::NelsonVariance => "nelson_variance",
            Scenario::CslCollapse => "csl_collapse",
            Scenario::CslMomentumDiffusion => "csl_momentum_diffusion",
            Scenario::PhaseSpaceFokkerPlanck => "phase_space_fokker_planck",
            Scenario::DecoherenceRate => "decoherence_rate",
        }
    }

    /// The dynamics a scenario exercises.
    pub fn equations(self) -> &'static str {
        match self {
            Scenario::UnitaryEquivariance => "source matrix J, master equation with Bell's rates",
            Scenario::BohmLimit => "forward current, causal-limit velocity J/(P a)",
            Scenario::NelsonVariance => "homogeneous rates T0, Nelson diffusion 2 nu",
            Scenario::CslCollapse => "CSL evolution, beable rates on each realization",
            Scenario::CslMomentumDiffusion => {
                "momentum Langevin step, d<p^2>/dt = lambda alpha hbar^2 / 2"
            }
            Scenario::PhaseSpaceFokkerPlanck => {
                "coupled x-p Langevin pair, phase-space Fokker-Planck equation"
            }
            Scenario::DecoherenceRate => "noise-averaged density matrix, Lindblad coherence decay",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Scenario::UnitaryEquivariance => {
                "jump walkers on an oscillating harmonic superposition"
            }
            Scenario::BohmLimit => "mean jump velocity of a plane wave without homogeneous jumps",
            Scenario::NelsonVariance => "spreading of a free packet under Nelson-calibrated jumps",
            Scenario::CslCollapse => {
                "collapse of a superposition with walkers riding each realization"
            }
            Scenario::CslMomentumDiffusion => "linear growth of the momentum variance",
            Scenario::PhaseSpaceFokkerPlanck => {
                "coupled position-momentum Langevin pair against a PDE solution"
            }
            Scenario::DecoherenceRate => "decay of the averaged density matrix off the diagonal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Jump,
    Bohm,
    Nelson,
    CslX,
    CslP,
    PhaseSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    Nelson,
    Grw,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteName {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Packet at `x0` with width `sigma0` and momentum `p0`.
    Gaussian,
    /// Lowest eigenstate of the lattice Hamiltonian.
    Ground,
    /// Equal superposition of the two lowest eigenstates.
    Superposition,
    /// Plane wave with the lattice momentum nearest `p0`.
    PlaneWave,
    /// Two packets of width `sigma0` at `x0 ± separation/2`.
    TwoPackets,
    /// Constant amplitude.
    Uniform,
}

/// `"free"`, `"harmonic(ω)"`, or a table of `[x, V]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotentialSpec {
    Named(String),
    Table(Vec<(f64, f64)>),
}

impl PotentialSpec {
    pub fn resolve(&self, grid: &Grid) -> Result<Potential> {
        match self {
            PotentialSpec::Table(t) => Potential::from_table(grid, t),
            PotentialSpec::Named(s) => {
                let s = s.trim();
                if s == "free" {
                    return Ok(Potential::Free);
                }
                let inner = s
                    .strip_prefix("harmonic(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::Config(format!("unknown potential {s:?}")))?;
                let omega: f64 = inner
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad harmonic frequency {inner:?}")))?;
                if !(omega > 0.0) {
                    return Err(Error::Config("harmonic frequency must be positive".into()));
                }
                Ok(Potential::Harmonic { omega })
            }
        }
    }
}

/// Norm used inside `K` and `L` on the nonlinear route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NormSourceSpec {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n_sites: usize,
    pub spacing: f64,
    /// Defaults to a lattice centred on zero.
    pub origin: Option<f64>,
    pub mass: f64,
    pub hbar: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// Defaults to `ħ/2M`.
    pub nu: Option<f64>,
    pub potential: PotentialSpec,
    pub dt: f64,
    pub t_final: f64,
    pub trajectories: usize,
    pub seed: u64,
    pub route: RouteName,
    pub norm_source: NormSourceSpec,
    pub beta: f64,
    pub sigma: f64,
    pub xi: f64,
    pub omega: f64,
    pub calibration: Calibration,
    pub epsilon_floor: Option<f64>,
    pub integrator: Integrator,
    pub drift_mode: DriftMode,
    pub initial: InitialState,
    pub x0: f64,
    pub sigma0: f64,
    pub p0: f64,
    /// Momentum spread of Langevin initial conditions.
    pub sigma_p: f64,
    pub separation: f64,
    /// Separations probed by the decoherence scenario.
    pub separations: Vec<f64>,
    pub realizations: usize,
    pub checkpoints: usize,
    pub out_dir: Option<PathBuf>,
    /// Write the final wavefunction of realization 0.
    pub snapshots: bool,
    pub fp_nx: usize,
    pub fp_np: usize,
    pub fp_dt: f64,
}

impl ExperimentConfig {
    /// Built-in settings of a scenario.
    pub fn preset(scenario: Scenario) -> Self {
        let base = Self {
            scenario,
            n_sites: 64,
            spacing: 0.25,
            origin: None,
            mass: 1.0,
            hbar: 1.0,
            alpha: 1.0,
            lambda: 0.04,
            nu: None,
            potential: PotentialSpec::Named("free".into()),
            dt: 0.01,
            t_final: 1.0,
            trajectories: 10_000,
            seed: 1,
            route: RouteName::Linear,
            norm_source: NormSourceSpec::Named("companion".into()),
            beta: 0.0,
            sigma: 1.0,
            xi: 0.0,
            omega: 1.0,
            calibration: Calibration::Manual,
            epsilon_floor: None,
            integrator: Integrator::Jump,
            drift_mode: DriftMode::P0,
            initial: InitialState::Gaussian,
            x0: 0.0,
            sigma0: 1.0,
            p0: 0.0,
            sigma_p: 0.5,
            separation: 6.0,
            separations: vec![2.0, 6.0],
            realizations: 100,
            checkpoints: 10,
            out_dir: None,
            snapshots: false,
            fp_nx: 512,
            fp_np: 128,
            fp_dt: 0.01,
        };
        match scenario {
            Scenario::UnitaryEquivariance => Self {
                potential: PotentialSpec::Named("harmonic(1)".into()),
                initial: InitialState::Superposition,
                t_final: 2.0 * std::f64::consts::PI,
                ..base
            },
            Scenario::BohmLimit => Self {
                n_sites: 256,
                spacing: 0.025,
                initial: InitialState::PlaneWave,
                p0: 2.0 * std::f64::consts::PI * 2.0 / 6.4,
                dt: 0.001,
                t_final: 0.5,
                checkpoints: 5,
                ..base
            },
            Scenario::NelsonVariance => Self {
                n_sites: 256,
                spacing: 0.1,
                calibration: Calibration::Nelson,
                dt: 0.005,
                t_final: 2.0,
                ..base
            },
            Scenario::CslCollapse => Self {
                lambda: 0.1,
                calibration: Calibration::Nelson,
                p0: 1.0,
                dt: 0.002,
                t_final: 2.0,
                checkpoints: 5,
                ..base
            },
            Scenario::CslMomentumDiffusion => Self {
                integrator: Integrator::CslP,
                sigma_p: 0.0,
                t_final: 10.0,
                ..base
            },
            Scenario::PhaseSpaceFokkerPlanck => Self {
                integrator: Integrator::PhaseSpace,
                drift_mode: DriftMode::Coupled,
                n_sites: 1024,
                p0: 1.0,
                t_final: 10.0,
                checkpoints: 4,
                ..base
            },
            Scenario::DecoherenceRate => Self {
                n_sites: 128,
                mass: 20.0,
                lambda: 1.0,
                initial: InitialState::Uniform,
                trajectories: 2000,
                dt: 0.01,
                t_final: 1.5,
                checkpoints: 15,
                ..base
            },
        }
    }

    /// Parse a JSON object: preset of its `scenario`, then its other keys.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let scenario: Scenario = serde_json::from_value(
            obj.get("scenario")
                .cloned()
                .ok_or_else(|| Error::Config("missing key \"scenario\"".into()))?,
        )
        .map_err(|e| Error::Config(e.to_string()))?;
        let mut merged: Map<String, Value> = match serde_json::to_value(Self::preset(scenario)) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config serialises to an object"),
        };
        for (k, v) in obj {
            if !merged.contains_key(k) {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
            merged.insert(k.clone(), v.clone());
        }
        let cfg: Self = serde_json::from_value(Value::Object(merged))
            .map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_sites < 2 || !(self.spacing > 0.0) {
            return bad("need n_sites ≥ 2 and spacing > 0");
        }
        if !(self.dt > 0.0) || !(self.t_final >= 0.0) {
            return bad("need dt > 0 and t_final ≥ 0");
        }
        if self.trajectories == 0 {
            return bad("trajectories must be positive");
        }
        if !(self.sigma0 > 0.0) || !(self.sigma_p >= 0.0) {
            return bad("need sigma0 > 0 and sigma_p ≥ 0");
        }
        if self.realizations == 0 || self.checkpoints == 0 {
            return bad("realizations and checkpoints must be positive");
        }
        if self.fp_nx < 8 || self.fp_np < 8 || !(self.fp_dt > 0.0) {
            return bad("phase-space oracle grid too small");
        }
        self.csl_params()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.grid()?;
        self.route()?;
        if let Some(e) = self.epsilon_floor {
            if !(e >= 0.0) {
                return bad("epsilon_floor must be nonnegative");
            }
        }
        JumpParams::new(self.beta, self.sigma, self.xi, self.omega)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        let origin = self
            .origin
            .unwrap_or(-((self.n_sites / 2) as f64) * self.spacing);
        Grid::new(self.n_sites, self.spacing, origin, Representation::Position)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn csl_params(&self) -> Result<CslParams> {
        let p = CslParams::new(self.alpha, self.lambda, self.mass, self.hbar)?;
        match self.nu {
            Some(nu) => p.with_nu(nu),
            None => Ok(p),
        }
    }

    pub fn route(&self) -> Result<CslRoute> {
        Ok(match self.route {
            RouteName::Linear => CslRoute::Linear,
            RouteName::Nonlinear => match &self.norm_source {
                NormSourceSpec::Value(v) => CslRoute::Nonlinear {
                    norm_source: Some(*v),
                },
                NormSourceSpec::Named(s) if s == "companion" => {
                    CslRoute::Nonlinear { norm_source: None }
                }
                NormSourceSpec::Named(s) => {
                    return Err(Error::Config(format!(
                        "norm_source must be a number or \"companion\", got {s:?}"
                    )))
                }
            },
        })
    }

    /// Jump parameters after applying the calibration rule.
    pub fn jump_params(&self) -> Result<JumpParams> {
        let grid = self.grid()?;
        let params = self.csl_params()?;
        let manual = JumpParams::new(self.beta, self.sigma, self.xi, self.omega)?;
        let mut j = match self.calibration {
            Calibration::Manual => manual,
            Calibration::Nelson => {
                let mut j = JumpParams::nelson(params.nu, self.sigma, &grid)?;
                j.xi = self.xi;
                j.omega = self.omega;
                j
            }
            Calibration::Grw => {
                manual.grw_momentum(&params, self.omega, &grid.momentum_grid(self.hbar)?)?
            }
        };
        j.eps_floor = self.epsilon_floor;
        j.validate()?;
        Ok(j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for s in Scenario::ALL {
            ExperimentConfig::preset(s).validate().unwrap();
        }
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let c =
            ExperimentConfig::from_json(r#"{"scenario": "bohm_limit", "seed": 9, "lambda": 0.5}"#)
                .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.n_sites, 256);
        let e =
            ExperimentConfig::from_json(r#"{"scenario": "bohm_limit", "lamda": 0.5}"#).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(ExperimentConfig::from_json(r#"{"seed": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"scenario": "bohm_limit", "dt": -1}"#).is_err());
    }

    #[test]
    fn potentials_parse() {
        let g = Grid::centered(8, 1.0).unwrap();
        assert_eq!(
            PotentialSpec::Named("free".into()).resolve(&g).unwrap(),
            Potential::Free
        );
        assert_eq!(
            PotentialSpec::Named("harmonic(2.5)".into())
                .resolve(&g)
                .unwrap(),
            Potential::Harmonic { omega: 2.5 }
        );
        assert!(PotentialSpec::Named("harmonic(x)".into())
            .resolve(&g)
            .is_err());
        let c = ExperimentConfig::from_json(
            r#"{"scenario": "nelson_variance", "potential": [[-1, 0.5], [1, 0.5]]}"#,
        )
        .unwrap();
        let v = c
            .potential
            .resolve(&c.grid().unwrap())
            .unwrap()
            .values(&c.grid().unwrap(), 1.0)
            .unwrap();
        assert!(v.iter().all(|&e| e == 0.5));
    }

    #[test]
    fn nelson_calibration_sets_the_diffusion() {
        let c = ExperimentConfig::preset(Scenario::NelsonVariance);
        let j = c.jump_params().unwrap();
        let d = j.position_diffusion(&c.grid().unwrap());
        assert!((d - 2.0 * c.csl_params().unwrap().nu).abs() < 1e-12);
    }

    #[test]
    fn nonlinear_route_names() {
        let c =
            ExperimentConfig::from_json(r#"{"scenario": "csl_collapse", "route": "nonlinear"}"#)
                .unwrap();
        assert_eq!(
            c.route().unwrap(),
            CslRoute::Nonlinear { norm_source: None }
        );
        let c = ExperimentConfig::from_json(
            r#"{"scenario": "csl_collapse", "route": "nonlinear", "norm_source": 1.0}"#,
        )
        .unwrap();
        assert_eq!(
            c.route().unwrap(),
            CslRoute::Nonlinear {
                norm_source: Some(1.0)
            }
        );
        assert!(ExperimentConfig::from_json(
            r#"{"scenario": "csl_collapse", "route": "nonlinear", "norm_source": "phi"}"#
        )
        .is_err());
    }
}
