//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
//! Failures only change the exit status when `STEFAN_ACCEPTANCE_STRICT` is set,
//! so that an honest FAIL does not break `cargo test`.
//!
//! Positional arguments select criteria by number, e.g.
//! `cargo test --test acceptance -- 1 7`.

use std::time::Instant;

use stefan_core::analysis::dyadic_levels;
use stefan_core::quad;
use stefan_core::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

struct Uniforms(RandomStream);

impl Uniforms {
    fn new(seed: u64) -> Self {
        Uniforms(RandomStream::new(seed, 0))
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.next_uniform()
    }

    fn int(&mut self, lo: usize, hi: usize) -> usize {
        (lo + (self.0.next_uniform() * (hi - lo + 1) as f64) as usize).min(hi)
    }
}

/// Grid scheme against the closed-form first-step loss.
fn one_step_oracle_check() -> Result<Outcome> {
    let (alpha, dt): (f64, f64) = (1.0, 0.01);
    let law = InitialLaw::uniform(0.0, 1.0)?;
    let sd = dt.sqrt();
    let oracle = alpha
        * quad::integrate(|x| law.pdf(x) * std_normal_cdf(-x / sd), 0.0, 1.0, 1e-15, 1e-13);
    let curve = run_grid_scheme(&law, &GridConfig::new(alpha, dt, 2.0 * dt))?;
    let err = (curve.values[2] - oracle).abs();
    outcome(
        err <= 1e-4,
        format!("grid {:.12} vs quadrature {:.12}, |diff| {err:.2e}", curve.values[2], oracle),
    )
}

fn gamma_setup() -> Result<(InitialLaw, f64, f64)> {
    Ok((InitialLaw::gamma(1.5, 0.5)?, 1.3, 0.8))
}

fn particle_grid_agreement() -> Result<Outcome> {
    let (law, alpha, horizon) = gamma_setup()?;
    let dt = horizon / 100.0;
    let grid = run_grid_scheme(
        &law,
        &GridConfig::new(alpha, dt, horizon).with_h(dt.sqrt() / 160.0),
    )?;
    let mut pairs = Vec::new();
    let mut text = Vec::new();
    for n_particles in [1_000usize, 10_000, 100_000, 1_000_000] {
        let mut total = 0.0;
        for seed in 1..=20u64 {
            let curve = run_particle_scheme(&law, alpha, dt, horizon, n_particles, seed, 1)?;
            total += sup_error(&curve, &grid, false)?;
        }
        let mean = total / 20.0;
        text.push(format!("N={n_particles}: {mean:.3e}"));
        pairs.push((n_particles as f64, mean));
    }
    let fit = fit_rate(&pairs)?;
    let slope = -fit.rate;
    outcome(
        (slope + 0.5).abs() <= 0.15,
        format!("{}; slope {slope:.3} (r² {:.3})", text.join(", "), fit.r_squared),
    )
}

fn particle_study(
    law: &InitialLaw,
    alpha: f64,
    horizon: f64,
    n_reference: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    let spec = StudySpec {
        alpha,
        horizon,
        n_list: vec![25, 50, 100, 200, 400, 800],
        n_reference,
        engine: Engine::Particle {
            n_particles: 1_000_000,
            seed,
            workers: 1,
        },
        normalized: true,
    };
    convergence_study(law, &spec)
}

fn describe_report(r: &ConvergenceReport) -> String {
    let errs: Vec<String> = r
        .mesh_counts
        .iter()
        .zip(&r.errors)
        .map(|(n, e)| format!("{n}:{e:.2e}"))
        .collect();
    match (r.fitted_rate, r.r_squared) {
        (Some(rate), Some(r2)) => format!("rate {rate:.3} (r² {r2:.3}) [{}]", errs.join(" ")),
        _ => format!("no rate fitted [{}]", errs.join(" ")),
    }
}

fn gamma_rate() -> Result<Outcome> {
    let (law, alpha, horizon) = gamma_setup()?;
    let report = particle_study(&law, alpha, horizon, 6400, 51)?;
    outcome(report.fitted_rate.is_some_and(|r| (r - 0.5).abs() <= 0.1), describe_report(&report))
}

fn monomial_rates() -> Result<Outcome> {
    let mut pass = true;
    let mut text = Vec::new();
    for (a, target, tol) in [(1.0, 0.26, 0.08), (2.0, 0.17, 0.07)] {
        let law = InitialLaw::monomial_deficit_default(1.0, a)?;
        // a 6400-step reference biases these slow rates upwards
        let report = particle_study(&law, 1.0, 1e-4, 25_600, 52)?;
        let ok = report.fitted_rate.is_some_and(|r| (r - target).abs() <= tol);
        pass &= ok;
        text.push(format!("a={a}: {} target {target}±{tol}", describe_report(&report)));
    }
    outcome(pass, text.join("; "))
}

fn blow_up() -> Result<Outcome> {
    let law = InitialLaw::gamma(1.5, 0.5)?;
    let (alpha, horizon) = (1.5, 0.008);
    let engine = Engine::Particle {
        n_particles: 1_000_000,
        seed: 53,
        workers: 1,
    };
    let counts = [400usize, 800, 1600, 3200];
    let levels = dyadic_levels(&counts).expect("doubling meshes");
    let mut curves = Vec::new();
    for (&n, &l) in counts.iter().zip(&levels) {
        curves.push(run_engine(&law, alpha, horizon, n, &engine, l)?);
    }
    let fine = curves.last().unwrap();
    let frac = |t: f64| fine.value_at(t) / alpha;
    let (mut best_t, mut best_rise) = (0.0, f64::NEG_INFINITY);
    for k in 0..=fine.steps() {
        let t = fine.time(k);
        if !(0.001 - 1e-12..=0.004 + 1e-12).contains(&t) {
            continue;
        }
        let rise = frac(t + 0.001) - frac(t);
        if rise > best_rise {
            best_rise = rise;
            best_t = t;
        }
    }
    let finals: Vec<f64> = curves.iter().map(|c| c.final_value() / alpha).collect();
    let gaps: Vec<f64> = finals.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let shrinking = gaps.windows(2).all(|g| g[1] <= 0.7 * g[0]);
    outcome(
        best_rise >= 0.4 && shrinking,
        format!(
            "max rise {best_rise:.3} over [t*, t*+0.001] at t* = {best_t:.5}; L(0.008) = {:?}, gaps {:?}",
            finals.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            gaps.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()
        ),
    )
}

fn refinement_monotonicity() -> Result<Outcome> {
    let gamma = InitialLaw::gamma(1.5, 0.5)?;
    let setups = [(1.3, 0.8, vec![25usize, 50, 100]), (1.5, 0.008, vec![100, 200, 400])];
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    for (alpha, horizon, ns) in setups {
        for n in ns {
            let fine_dt = horizon / (2 * n) as f64;
            let h = fine_dt.sqrt() / 20.0;
            let coarse = run_grid_scheme(&gamma, &GridConfig::new(alpha, horizon / n as f64, horizon).with_h(h))?;
            let fine = run_grid_scheme(&gamma, &GridConfig::new(alpha, fine_dt, horizon).with_h(h))?;
            let slack = 10.0 * (h + 1e-12);
            for k in 0..=n {
                let excess = coarse.values[k] - fine.values[2 * k];
                worst = worst.max(excess / slack);
                pass &= excess <= slack;
            }
        }
    }
    outcome(
        pass,
        format!("largest Λ^Δ − Λ^(Δ/2) is {worst:.3e} of the allowed slack"),
    )
}

fn bound_consistency() -> Result<Outcome> {
    let profile = PsiProfile::constant(0.3, 0.5)?;
    let eps = 1e-6;
    let mut worst_gap: f64 = 0.0;
    let mut compared = 0;
    for k in 0..16 {
        let dt = eps / (4.0 * 2f64.powi(k));
        let full = rate_bound(1.0, 0.2, &profile, eps, dt)?.total;
        let simple = simplified_bound(1.0, 0.2, 0.3, 0.5, eps, dt)?;
        worst_gap = worst_gap.max((full - simple).abs() / simple.abs().max(1.0));
        compared += 1;
    }
    let part_a = worst_gap <= 1e-12;

    let law = InitialLaw::monomial_deficit_default(1.0, 1.0)?;
    let profile = law.psi_profile().expect("monomial law has a profile");
    let f_sup = law.sup_norm();
    let eps = 1e-14;
    let eps_max = epsilon_window(1.0, f_sup, &profile)?;
    let consts = bound_constants(1.0, f_sup, &profile, eps)?;
    let x_max = 60.0 * eps.sqrt();
    let mut part_b = true;
    let mut tested = Vec::new();
    for n in [8usize, 32, 128] {
        let dt = eps / n as f64;
        let bound = match theory::rate_bound_with(&consts, dt) {
            Ok(b) => b.total,
            Err(Error::BoundVacuous(_)) => continue,
            Err(e) => return Err(e),
        };
        let coarse = run_grid_scheme(&law, &GridConfig::new(1.0, dt, eps).with_x_max(x_max))?;
        let reference =
            run_grid_scheme(&law, &GridConfig::new(1.0, dt / 8.0, eps).with_x_max(x_max))?;
        let measured = sup_error(&coarse, &reference, false)?;
        part_b &= measured <= bound;
        tested.push(format!("n={n}: {measured:.2e} ≤ {bound:.2e}"));
    }
    part_b &= !tested.is_empty();
    outcome(
        part_a && part_b,
        format!(
            "(a) {compared} step sizes, max relative gap {worst_gap:.1e}; (b) ε = {eps:e} < {eps_max:.2e}, {}",
            if tested.is_empty() { "no non-vacuous step".to_string() } else { tested.join(", ") }
        ),
    )
}

fn random_law(u: &mut Uniforms) -> Result<(InitialLaw, f64)> {
    Ok(match u.int(0, 2) {
        0 => (InitialLaw::gamma(u.range(1.0, 4.0), u.range(0.3, 3.0))?, u.range(0.2, 2.0)),
        1 => {
            let alpha = u.range(0.3, 2.0);
            (InitialLaw::monomial_deficit_default(alpha, u.range(0.5, 4.0))?, alpha)
        }
        _ => {
            let lo = u.range(0.0, 1.0);
            (InitialLaw::uniform(lo, lo + u.range(0.1, 2.0))?, u.range(0.2, 2.0))
        }
    })
}

fn check_curve(c: &LossCurve, alpha: f64) -> bool {
    c.values[0] >= 0.0
        && c.values.windows(2).all(|w| w[0] <= w[1])
        && c.values.iter().all(|&v| v <= alpha * (1.0 + 1e-12))
}

/// Brute-force scan for the first `x` on a `1e-6` lattice with `M(x) < x/α`.
fn scan_jump(d: &TabulatedSubDensity, alpha: f64) -> f64 {
    let step = 1e-6;
    let mut k = 1u64;
    loop {
        let x = k as f64 * step;
        if d.cumulative(x) < x / alpha {
            return x;
        }
        k += 1;
    }
}

fn property_suites() -> Result<Outcome> {
    let mut u = Uniforms::new(808);
    let mut failures = Vec::new();

    let mut curve_ok = 0;
    for i in 0..200 {
        let (law, alpha) = random_law(&mut u)?;
        let horizon = 10f64.powf(u.range(-4.0, 0.0));
        let n = u.int(1, 200);
        let dt = horizon / n as f64;
        let curve = if i % 2 == 0 {
            run_particle_scheme(&law, alpha, dt, horizon, u.int(100, 5000), i as u64, 1)?
        } else {
            let x_max = (alpha + 8.0 * horizon.sqrt()).min(law.support().1);
            let h = (dt.sqrt() / 4.0).max(x_max / 2000.0);
            run_grid_scheme(&law, &GridConfig::new(alpha, dt, horizon).with_h(h))?
        };
        if check_curve(&curve, alpha) {
            curve_ok += 1;
        }
    }
    if curve_ok < 200 {
        failures.push(format!("{} curves violate monotonicity or the α bound", 200 - curve_ok));
    }

    let mut worst_psi: f64 = 0.0;
    for _ in 0..200 {
        let alpha = u.range(0.5, 2.0);
        let law = InitialLaw::monomial_deficit_default(alpha, u.range(0.5, 4.0))?;
        let profile = law.psi_profile().expect("profile");
        let x = u.range(0.0, profile.delta);
        worst_psi = worst_psi.max((psi_big_inv(&profile, psi_big(&profile, x)?)? - x).abs());
        let f_sup = law.sup_norm();
        let eps = 0.5 * epsilon_window(alpha, f_sup, &profile)?;
        let consts = bound_constants(alpha, f_sup, &profile, eps)?;
        let x = u.range(0.0, 0.99) * profile.delta;
        let y = psi_tilde(&consts, &profile, x)?;
        if y > 0.0 {
            worst_psi = worst_psi.max((psi_tilde_inv(&consts, &profile, y)? - x).abs());
        }
    }
    if worst_psi > 1e-9 {
        failures.push(format!("Psi round trip error {worst_psi:.2e}"));
    }

    let mut worst_phi: f64 = 0.0;
    for _ in 0..1000 {
        let p = u.range(1e-12, 1.0 - 1e-12);
        worst_phi = worst_phi.max((std_normal_cdf(std_normal_quantile(p)?) - p).abs());
        let x = u.range(-8.0, 8.0);
        let p = std_normal_cdf(x);
        if p > 1e-300 && p < 1.0 - 1e-16 {
            worst_phi = worst_phi.max((std_normal_quantile(p)? - x).abs() * std_normal_pdf(x));
        }
    }
    let quartile = (std_normal_cdf(-0.674_489_75) - 0.25).abs();
    if worst_phi > 1e-9 || quartile > 1e-9 {
        failures.push(format!("Phi round trip {worst_phi:.2e}, quartile {quartile:.2e}"));
    }

    let mut sub_nonzero = 0;
    for _ in 0..50 {
        let alpha = u.range(0.3, 2.0);
        let nodes = u.int(2, 8);
        let mut grid = vec![0.0];
        for _ in 1..nodes {
            let last = *grid.last().unwrap();
            grid.push(last + u.range(0.0, 0.5));
        }
        let mut values: Vec<f64> = (0..nodes).map(|_| u.range(0.0, 0.999) / alpha).collect();
        let mass: f64 = grid
            .windows(2)
            .zip(values.windows(2))
            .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
            .sum();
        if mass > 1.0 {
            values.iter_mut().for_each(|v| *v /= mass);
        }
        let d = TabulatedSubDensity::new(grid, values)?;
        if physical_jump_size(&d, alpha)? != 0.0 {
            sub_nonzero += 1;
        }
    }
    if sub_nonzero > 0 {
        failures.push(format!("{sub_nonzero} subcritical densities reported a jump"));
    }

    let mut worst_jump: f64 = 0.0;
    for _ in 0..20 {
        let alpha = u.range(0.5, 1.5);
        // start above the critical level, then decay to zero
        let v0 = u.range(1.2, 2.0) / alpha;
        let nodes = u.int(2, 6);
        let mut grid = vec![0.0];
        let mut values = vec![v0];
        for i in 1..nodes {
            let last = *grid.last().unwrap();
            grid.push(last + u.range(0.05, 0.4));
            values.push(if i + 1 == nodes { 0.0 } else { u.range(0.0, v0) });
        }
        let mass: f64 = grid
            .windows(2)
            .zip(values.windows(2))
            .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
            .sum();
        if mass > 1.0 {
            grid.iter_mut().for_each(|g| *g /= mass);
        }
        let d = TabulatedSubDensity::new(grid, values)?;
        let exact = physical_jump_size(&d, alpha)?;
        let scanned = scan_jump(&d, alpha);
        worst_jump = worst_jump.max((exact - scanned).abs());
        if !(exact > 0.0 && exact <= scanned && scanned - exact <= 1e-6 * (1.0 + 1e-9)) {
            failures.push(format!("jump {exact} vs scan {scanned}"));
        }
    }

    let law = InitialLaw::gamma(1.5, 0.5)?;
    let runs: Vec<LossCurve> = [1usize, 2, 8]
        .iter()
        .map(|&w| run_particle_scheme(&law, 1.3, 0.008, 0.8, 20_000, 99, w))
        .collect::<Result<_>>()?;
    let identical = runs.iter().all(|c| c.values == runs[0].values);
    if !identical {
        failures.push("particle output depends on the worker count".into());
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "200 curves valid, Psi round trip {worst_psi:.1e}, Phi round trip {worst_phi:.1e}, 50 subcritical zero, 20 jumps within {worst_jump:.1e}, workers 1/2/8 identical"
            )
        } else {
            failures.join("; ")
        },
    )
}

type Criterion = (u32, &'static str, fn() -> Result<Outcome>);

fn main() {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [Criterion; 8] = [
        (1, "one-step analytic oracle", one_step_oracle_check),
        (2, "particle-grid agreement", particle_grid_agreement),
        (3, "gamma rate", gamma_rate),
        (4, "monomial rates", monomial_rates),
        (5, "blow-up", blow_up),
        (6, "mesh-refinement monotonicity", refinement_monotonicity),
        (7, "bound consistency", bound_consistency),
        (8, "property suites", property_suites),
    ];
    let (mut failed, mut ran) = (0, 0);
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {id} ({name}): {detail} [{secs:.1} s]",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 && std::env::var_os("STEFAN_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
