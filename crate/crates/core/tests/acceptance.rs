//! Acceptance criteria 1-8. Each criterion prints one PASS/FAIL line. The
//! expected values are computed here from closed forms, independently of
//! the library's own checks.

use std::f64::consts::PI;

use beable_csl::harness::config::{ExperimentConfig, Scenario};
use beable_csl::harness::verify::{self, CriterionResult, BOHM_SWEEP};

const SEED: u64 = 1;

fn m(r: &CriterionResult, key: &str) -> f64 {
    *r.measured
        .get(key)
        .unwrap_or_else(|| panic!("criterion {} lacks {key}", r.id))
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

struct Verdict {
    id: u8,
    lines: Vec<String>,
    ok: bool,
}

impl Verdict {
    fn new(id: u8) -> Self {
        Self {
            id,
            lines: Vec::new(),
            ok: true,
        }
    }

    fn below(&mut self, what: &str, value: f64, bound: f64) {
        let pass = value < bound;
        self.ok &= pass;
        self.lines.push(format!(
            "{what} = {value:.4e} (< {bound:.1e}){}",
            if pass { "" } else { " FAILED" }
        ));
    }

    fn print(&self) -> bool {
        println!(
            "{} criterion {}: {}",
            if self.ok { "PASS" } else { "FAIL" },
            self.id,
            self.lines.join("; ")
        );
        self.ok
    }
}

/// Plane wave `e^{ikx}` under Bell's rates on the three-point lattice:
/// the current per bond is `(ħ/Ma²) sin(ka) |φ|²`, so the velocity is
/// `(ħ/Ma) sin(ka)`; the continuum value is `ħk/M`.
fn criterion_1() -> bool {
    let r = verify::criterion_1(SEED).unwrap();
    let mut v = Verdict::new(1);
    let (n, hbar, mass) = (256.0, 1.0, 1.0);
    let mut errs = Vec::new();
    for (i, &(a, mode)) in BOHM_SWEEP.iter().enumerate() {
        let k = 2.0 * PI * mode as f64 / (n * a);
        let continuum = hbar * k / mass;
        let lattice = hbar / (mass * a) * (k * a).sin();
        v.below(
            &format!("a={a} rate velocity vs lattice current"),
            (m(&r, &format!("rate_velocity_{i}")) - lattice).abs(),
            1e-9,
        );
        v.below(
            &format!("a={a} walker velocity error"),
            rel(m(&r, &format!("walker_velocity_{i}")), continuum),
            0.02,
        );
        errs.push(rel(m(&r, &format!("rate_velocity_{i}")), continuum));
    }
    v.below("error ratio, first halving", errs[1] / errs[0], 0.6);
    v.below("error ratio, second halving", errs[2] / errs[1], 0.6);
    v.print()
}

fn criterion_2() -> bool {
    let r = verify::criterion_2(SEED).unwrap();
    let mut v = Verdict::new(2);
    let (s0, t, hbar, mass) = (m(&r, "free_sigma0"), m(&r, "free_t"), 1.0, 1.0);
    let expected = s0 * s0 * (1.0 + (hbar * t / (2.0 * mass * s0 * s0)).powi(2));
    v.below(
        "free variance relative error",
        rel(m(&r, "free_var_x"), expected),
        0.03,
    );
    v.below("ground-state TV", m(&r, "ground_tv"), 0.05);
    v.print()
}

fn criterion_3() -> bool {
    let r = verify::criterion_3(SEED).unwrap();
    let mut v = Verdict::new(3);
    v.below("unitary TV", m(&r, "unitary_tv"), 0.05);
    v.below("CSL TV", m(&r, "csl_tv"), 0.07);
    v.print()
}

fn criterion_4() -> bool {
    let r = verify::criterion_4(SEED).unwrap();
    let mut v = Verdict::new(4);
    let (hbar, alpha, lambda) = (1.0, 1.0, 0.04);
    let slope = hbar * hbar * alpha * lambda / 2.0;
    assert!((slope - 0.02f64).abs() < 1e-15);
    v.below(
        "Var p slope relative error",
        rel(m(&r, "var_p_slope"), slope),
        0.05,
    );
    v.print()
}

/// Closed-form moments of the phase-space equation with drift `p/M`,
/// position diffusion `ν` and momentum diffusion `D_p = ħ²αλ/4`, from an
/// uncorrelated Gaussian start.
fn phase_space_moments(c: &ExperimentConfig, t: f64) -> [(&'static str, f64); 5] {
    let mass = c.mass;
    let nu = c.nu.unwrap_or(c.hbar / (2.0 * c.mass));
    let dp = c.hbar * c.hbar * c.alpha * c.lambda / 4.0;
    let sp2 = c.sigma_p * c.sigma_p;
    [
        ("mean_x", c.x0 + c.p0 * t / mass),
        ("mean_p", c.p0),
        (
            "var_x",
            c.sigma0 * c.sigma0
                + sp2 * t * t / (mass * mass)
                + 2.0 * nu * t
                + 2.0 * dp * t.powi(3) / (3.0 * mass * mass),
        ),
        ("var_p", sp2 + 2.0 * dp * t),
        ("cov_xp", sp2 * t / mass + dp * t * t / mass),
    ]
}

fn criterion_5() -> bool {
    let r = verify::criterion_5(SEED).unwrap();
    let cfg = ExperimentConfig::preset(Scenario::PhaseSpaceFokkerPlanck);
    let mut v = Verdict::new(5);
    let mut worst_langevin = 0.0f64;
    let mut worst_grid = 0.0f64;
    let mut worst_pair = 0.0f64;
    let times: Vec<f64> = r
        .measured
        .keys()
        .filter_map(|k| k.strip_prefix("mean_x@"))
        .map(|t| t.parse().unwrap())
        .collect();
    assert!(!times.is_empty());
    for t in times {
        for (name, exact) in phase_space_moments(&cfg, t) {
            worst_langevin = worst_langevin.max(rel(m(&r, &format!("{name}@{t}")), exact));
            let langevin = m(&r, &format!("{name}@{t}"));
            let grid = m(&r, &format!("oracle_{name}@{t}"));
            worst_grid = worst_grid.max(rel(grid, exact));
            worst_pair = worst_pair.max(rel(langevin, grid));
        }
    }
    v.below("grid solution vs closed form", worst_grid, 0.01);
    v.below("Langevin moments vs grid solution", worst_pair, 0.10);
    v.below("Langevin moments vs closed form", worst_langevin, 0.10);
    v.print()
}

fn criterion_6() -> bool {
    let r = verify::criterion_6(SEED).unwrap();
    let mut v = Verdict::new(6);
    let (alpha, lambda) = (1.0, 1.0);
    // αd²/4 = 1 and 9.
    for d in [2.0f64, 6.0] {
        let expected = lambda * (1.0 - (-alpha * d * d / 4.0).exp());
        v.below(
            &format!("rate error at d={d}"),
            rel(m(&r, &format!("rate_{d}")), expected),
            0.10,
        );
    }
    v.print()
}

fn criterion_7() -> bool {
    let r = verify::criterion_7(SEED).unwrap();
    let mut v = Verdict::new(7);
    v.below("J antisymmetry", m(&r, "antisymmetry_defect"), 1e-12);
    v.below(
        "negative rates",
        (-m(&r, "min_transition_rate")).max(0.0),
        f64::MIN_POSITIVE,
    );
    v.below("DFT round trip", m(&r, "dft_round_trip"), 1e-10);
    v.below("norm drift at λ=0", m(&r, "lambda0_norm_drift"), 1e-6);
    v.below("differing reruns", m(&r, "rerun_mismatches"), 0.5);
    v.print()
}

fn criterion_8() -> bool {
    let r = verify::criterion_8(SEED).unwrap();
    let mut v = Verdict::new(8);
    v.below(
        "largest |halving ratio - 1/2|",
        m(&r, "worst_halving_ratio_deviation"),
        0.1,
    );
    v.below(
        "1 - smallest ratio without source terms",
        1.0 - m(&r, "smallest_ablation_ratio"),
        0.1,
    );
    v.print()
}

#[test]
fn acceptance() {
    let results = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, &ok)| !ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
