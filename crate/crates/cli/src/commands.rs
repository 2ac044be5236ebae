use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use stefan_core::theory::rate_bound_with;
use stefan_core::{
    bound_constants, convergence_study_with_curves, epsilon_window, fit_rate, m1_graph_distance,
    m1_pointwise_check, particle_scaling_study, rate_table_markdown, run_grid_scheme,
    run_particle_scheme_with, simplified_bound, ConvergenceReport, Engine, Error, GridConfig,
    LawKind, LossCurve, ParticleConfig, PsiForm, ScalingStudy, StudySpec, TabulatedSubDensity,
};

use crate::config::{parse_law, parse_profile, positive, resolve_alpha, resolve_mesh, RunConfig};
use crate::{
    BoundArgs, CliError, ConvergenceArgs, EngineArgs, IoArgs, JumpArgs, LawArgs, ParticlesArgs,
    SimulateArgs, SCHEMA,
};

/// Copies every flag that was given over the config-file value.
macro_rules! overlay {
    ($cfg:expr, $src:expr, $($field:ident),+) => {
        $( if $src.$field.is_some() { $cfg.$field = $src.$field.clone(); } )+
    };
}

fn base_config(io: &IoArgs) -> Result<RunConfig, CliError> {
    match &io.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn overlay_law(cfg: &mut RunConfig, law: &LawArgs) {
    overlay!(cfg, law, law, alpha);
}

fn overlay_engine(cfg: &mut RunConfig, e: &EngineArgs) {
    overlay!(cfg, e, engine, particles, seed, workers, h, x_max);
}

fn output_path(io: &IoArgs, default: &str, suffix: &str, ext: &str) -> PathBuf {
    let prefix = io.output.clone().unwrap_or_else(|| PathBuf::from(default));
    let mut name = prefix.into_os_string();
    name.push(suffix);
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Engine(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, doc: &Value) -> Result<(), CliError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, doc).map_err(|e| CliError::Engine(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn document(command: &str, config: &RunConfig, body: Value) -> Value {
    let mut doc = json!({ "schema": SCHEMA, "command": command, "config": config });
    if let (Some(doc), Value::Object(body)) = (doc.as_object_mut(), body) {
        doc.extend(body);
    }
    doc
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

/// Particle settings with defaults filled in and echoed into `resolved`.
fn particle_settings(
    cfg: &RunConfig,
    resolved: &mut RunConfig,
    seed_required: bool,
) -> Result<(usize, u64, usize), CliError> {
    let particles = cfg.particles.unwrap_or(100_000);
    if particles == 0 {
        return Err(CliError::Validation("particles must be positive".into()));
    }
    let seed = match (cfg.seed, seed_required) {
        (Some(s), _) => s,
        (None, false) => 0,
        (None, true) => {
            return Err(CliError::Validation(
                "missing required setting --seed (studies need an explicit seed)".into(),
            ))
        }
    };
    let workers = cfg.workers.unwrap_or(1);
    if workers == 0 {
        return Err(CliError::Validation("workers must be positive".into()));
    }
    resolved.particles = Some(particles);
    resolved.seed = Some(seed);
    resolved.workers = Some(workers);
    Ok((particles, seed, workers))
}

fn engine_kind(cfg: &RunConfig) -> Result<String, CliError> {
    let engine = cfg.engine.clone().unwrap_or_else(|| "particle".into());
    match engine.as_str() {
        "particle" | "grid" => Ok(engine),
        other => Err(CliError::Validation(format!(
            "unknown engine {other:?}; expected particle or grid"
        ))),
    }
}

fn curve_json(curve: &LossCurve) -> Value {
    json!({
        "dt": curve.dt,
        "alpha": curve.alpha,
        "final_value": curve.final_value(),
        "values": curve.values,
    })
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut cfg = base_config(&args.io)?;
    overlay_law(&mut cfg, &args.law);
    overlay!(cfg, args, horizon, n, dt);
    overlay_engine(&mut cfg, &args.engine);

    let law = parse_law(&RunConfig::require(&cfg.law, "law")?)?;
    let alpha = resolve_alpha(cfg.alpha, &law)?;
    let horizon = positive("horizon", RunConfig::require(&cfg.horizon, "horizon")?)?;
    let (n, dt) = resolve_mesh(&cfg, horizon)?;
    let engine = engine_kind(&cfg)?;
    let mut resolved = RunConfig {
        law: Some(law.spec.clone()),
        alpha: Some(alpha),
        horizon: Some(horizon),
        n: Some(n),
        dt: Some(dt),
        engine: Some(engine.clone()),
        ..RunConfig::default()
    };
    if args.snapshots.is_some() && engine != "grid" {
        return Err(CliError::Validation("--snapshots needs --engine grid".into()));
    }

    let curve = if engine == "particle" {
        let (particles, seed, workers) = particle_settings(&cfg, &mut resolved, false)?;
        let config = ParticleConfig::new(alpha, dt, horizon, particles, seed).with_workers(workers);
        run_particle_scheme_with(&law.law, &config)?
    } else {
        let grid = GridConfig {
            alpha,
            dt,
            horizon,
            h: cfg.h,
            x_max: cfg.x_max,
        };
        let geometry = grid
            .resolve(&law.law)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        resolved.h = Some(geometry.h);
        resolved.x_max = Some(geometry.x_max);
        let grid = GridConfig {
            h: Some(geometry.h),
            x_max: Some(geometry.x_max),
            ..grid
        };
        match &args.snapshots {
            Some(path) => {
                let mut out = create(path)?;
                let curve = stefan_core::grid::run_grid_scheme_traced(&law.law, &grid, Some(&mut out))?;
                out.flush()?;
                curve
            }
            None => run_grid_scheme(&law.law, &grid)?,
        }
    };

    let csv_path = output_path(&args.io, "simulate", "", "csv");
    curve.write_csv(create(&csv_path)?)?;
    log::info!("wrote {}", csv_path.display());
    let doc = document(
        "simulate",
        &resolved,
        json!({ "law": law.law.describe(), "curve": curve_json(&curve) }),
    );
    write_json(&output_path(&args.io, "simulate", "", "json"), &doc)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Smallest common multiple of `n_list` that is at least 8 times its largest entry.
fn default_reference(n_list: &[usize]) -> Result<usize, CliError> {
    let lcm = n_list
        .iter()
        .try_fold(1usize, |acc, &n| {
            if n == 0 {
                return None;
            }
            (acc / gcd(acc, n)).checked_mul(n)
        })
        .ok_or_else(|| CliError::Validation("mesh counts must be positive and small".into()))?;
    let target = 8 * n_list.iter().copied().max().unwrap_or(1);
    Ok(target.div_ceil(lcm) * lcm)
}

fn m1_json(curves: &[LossCurve], probes: &[f64]) -> Result<Value, CliError> {
    let (reference, coarse) = curves.split_last().expect("at least one curve");
    let residuals = m1_pointwise_check(coarse, reference, probes)?;
    let distances = coarse
        .iter()
        .map(|c| m1_graph_distance(c, reference))
        .collect::<stefan_core::Result<Vec<_>>>()?;
    Ok(json!({ "probes": to_value(&residuals), "graph_distances": distances }))
}

pub fn convergence(args: ConvergenceArgs) -> Result<(), CliError> {
    let mut cfg = base_config(&args.io)?;
    overlay_law(&mut cfg, &args.law);
    overlay!(cfg, args, horizon, n_list, n_reference, normalized, sweep_a, sweep_alpha, probes);
    overlay_engine(&mut cfg, &args.engine);
    if args.table {
        cfg.table = Some(true);
    }

    let base_law = parse_law(&RunConfig::require(&cfg.law, "law")?)?;
    let horizon = positive("horizon", RunConfig::require(&cfg.horizon, "horizon")?)?;
    let n_list = RunConfig::require(&cfg.n_list, "n_list")?;
    if n_list.len() < 3 {
        return Err(CliError::Validation(format!(
            "a rate needs at least 3 meshes, got {}",
            n_list.len()
        )));
    }
    let n_reference = match cfg.n_reference {
        Some(n) => n,
        None => default_reference(&n_list)?,
    };
    let normalized = cfg.normalized.unwrap_or(true);
    let engine_name = engine_kind(&cfg)?;
    let sweeping = cfg.sweep_a.is_some() || cfg.sweep_alpha.is_some();

    // (alpha, law, canonical spec, file suffix) per run
    let mut runs = Vec::new();
    if sweeping {
        let LawKind::MonomialDeficit { alpha: law_alpha, a: law_a, .. } = base_law.law.kind().clone()
        else {
            return Err(CliError::Validation("--sweep-a and --sweep-alpha need a monomial law".into()));
        };
        let explicit_c = RunConfig::require(&cfg.law, "law")?.split(':').count() == 4;
        if explicit_c {
            return Err(CliError::Validation(
                "sweeps use the default deficit constant; drop c from the law spec".into(),
            ));
        }
        let alphas = cfg.sweep_alpha.clone().unwrap_or_else(|| vec![cfg.alpha.unwrap_or(law_alpha)]);
        let exps = cfg.sweep_a.clone().unwrap_or_else(|| vec![law_a]);
        for &alpha in &alphas {
            for &a in &exps {
                let law = parse_law(&format!("monomial:{alpha}:{a}"))?;
                runs.push((alpha, law, format!("-a{a}-alpha{alpha}")));
            }
        }
    } else {
        let alpha = resolve_alpha(cfg.alpha, &base_law)?;
        runs.push((alpha, base_law, String::new()));
    }

    let mut resolved = RunConfig {
        law: cfg.law.clone(),
        alpha: if sweeping { None } else { Some(runs[0].0) },
        horizon: Some(horizon),
        engine: Some(engine_name.clone()),
        normalized: Some(normalized),
        n_list: Some(n_list.clone()),
        n_reference: Some(n_reference),
        sweep_a: cfg.sweep_a.clone(),
        sweep_alpha: cfg.sweep_alpha.clone(),
        table: cfg.table,
        probes: cfg.probes.clone(),
        ..RunConfig::default()
    };
    if !sweeping {
        resolved.law = Some(runs[0].1.spec.clone());
    }
    let engine = if engine_name == "particle" {
        let (n_particles, seed, workers) = particle_settings(&cfg, &mut resolved, true)?;
        Engine::Particle {
            n_particles,
            seed,
            workers,
        }
    } else {
        resolved.h = cfg.h;
        resolved.x_max = cfg.x_max;
        Engine::Grid {
            h: cfg.h,
            x_max: cfg.x_max,
        }
    };

    let mut reports: Vec<ConvergenceReport> = Vec::new();
    for (alpha, law, suffix) in &runs {
        let spec = StudySpec {
            alpha: *alpha,
            horizon,
            n_list: n_list.clone(),
            n_reference,
            engine: engine.clone(),
            normalized,
        };
        log::info!("study for {} at alpha {alpha}", law.law.describe());
        let (report, curves) = convergence_study_with_curves(&law.law, &spec)?;
        let mut body = json!({ "report": to_value(&report) });
        if let Some(probes) = &cfg.probes {
            body["m1"] = m1_json(&curves, probes)?;
        }
        let csv_path = output_path(&args.io, "convergence", suffix, "csv");
        report.write_csv(create(&csv_path)?)?;
        write_json(
            &output_path(&args.io, "convergence", suffix, "json"),
            &document("convergence", &resolved, body),
        )?;
        reports.push(report);
    }
    if resolved.table == Some(true) {
        let path = output_path(&args.io, "convergence", "", "md");
        let mut out = create(&path)?;
        out.write_all(rate_table_markdown(&reports).as_bytes())?;
        out.flush()?;
    }
    Ok(())
}

/// Least-squares slope of `log y` on `log x`, for two or more points.
fn log_log_slope(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 || points.iter().any(|p| !(p.1 > 0.0)) {
        return None;
    }
    if points.len() >= 3 {
        return fit_rate(points).ok().map(|f| (-f.rate, f.r_squared));
    }
    let (a, b) = (points[0], points[1]);
    Some(((b.1 / a.1).ln() / (b.0 / a.0).ln(), 1.0))
}

pub fn particles(args: ParticlesArgs) -> Result<(), CliError> {
    let mut cfg = base_config(&args.io)?;
    overlay_law(&mut cfg, &args.law);
    overlay!(cfg, args, horizon, n, dt, particles_list, seeds, seed, workers, reference_h, x_max);

    let law = parse_law(&RunConfig::require(&cfg.law, "law")?)?;
    let alpha = resolve_alpha(cfg.alpha, &law)?;
    let horizon = positive("horizon", RunConfig::require(&cfg.horizon, "horizon")?)?;
    let (n, dt) = resolve_mesh(&cfg, horizon)?;
    let counts = RunConfig::require(&cfg.particles_list, "particles_list")?;
    if counts.is_empty() || counts.contains(&0) {
        return Err(CliError::Validation("particle counts must be positive".into()));
    }
    let seed = cfg.seed.ok_or_else(|| {
        CliError::Validation("missing required setting --seed (studies need an explicit seed)".into())
    })?;
    let seeds = cfg.seeds.unwrap_or(20);
    let workers = cfg.workers.unwrap_or(1);
    if workers == 0 {
        return Err(CliError::Validation("workers must be positive".into()));
    }
    let grid = GridConfig {
        alpha,
        dt,
        horizon,
        h: Some(cfg.reference_h.unwrap_or(dt.sqrt() / 80.0)),
        x_max: cfg.x_max,
    };
    let geometry = grid
        .resolve(&law.law)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let resolved = RunConfig {
        law: Some(law.spec.clone()),
        alpha: Some(alpha),
        horizon: Some(horizon),
        n: Some(n),
        dt: Some(dt),
        particles_list: Some(counts.clone()),
        seeds: Some(seeds),
        seed: Some(seed),
        workers: Some(workers),
        reference_h: Some(geometry.h),
        x_max: Some(geometry.x_max),
        ..RunConfig::default()
    };

    let reference = run_grid_scheme(
        &law.law,
        &GridConfig {
            x_max: Some(geometry.x_max),
            ..grid
        },
    )?;
    let study = ScalingStudy {
        alpha,
        dt,
        horizon,
        n_particles: counts,
        n_seeds: seeds,
        base_seed: seed,
        workers,
    };
    let points = particle_scaling_study(&law.law, &study, &reference)?;

    let csv_path = output_path(&args.io, "particles", "", "csv");
    let mut out = create(&csv_path)?;
    writeln!(out, "n_particles,mean_error")?;
    for p in &points {
        writeln!(out, "{},{}", p.n_particles, p.mean_abs_error)?;
    }
    out.flush()?;
    let pairs: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.n_particles as f64, p.mean_abs_error))
        .collect();
    let mut body = json!({ "law": law.law.describe(), "points": to_value(&points) });
    if let Some((slope, r_squared)) = log_log_slope(&pairs) {
        body["slope"] = json!(slope);
        body["r_squared"] = json!(r_squared);
    }
    write_json(
        &output_path(&args.io, "particles", "", "json"),
        &document("particles", &resolved, body),
    )
}

fn format_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn bound(args: BoundArgs) -> Result<(), CliError> {
    let mut cfg = base_config(&args.io)?;
    overlay!(cfg, args, alpha, f_sup, profile, law, eps, dt_list);

    let alpha = positive("alpha", RunConfig::require(&cfg.alpha, "alpha")?)?;
    let law = cfg.law.as_deref().map(parse_law).transpose()?;
    let profile = match (&cfg.profile, &law) {
        (Some(spec), _) => parse_profile(spec)?,
        (None, Some(l)) => l.law.psi_profile().ok_or_else(|| {
            CliError::Validation("this law has no deficit profile; pass --profile".into())
        })?,
        (None, None) => return Err(CliError::Validation("missing required setting --profile or --law".into())),
    };
    let f_sup = match (cfg.f_sup, &law) {
        (Some(f), _) => positive("f_sup", f)?,
        (None, Some(l)) => l.law.sup_norm(),
        (None, None) => return Err(CliError::Validation("missing required setting --f-sup".into())),
    };
    let eps = match cfg.eps {
        Some(e) => e,
        None => 0.99 * epsilon_window(alpha, f_sup, &profile)?,
    };
    let consts = bound_constants(alpha, f_sup, &profile, eps)?;
    let dt_list = cfg
        .dt_list
        .clone()
        .unwrap_or_else(|| (1..=12).map(|k| eps / 4f64.powi(k)).collect());
    let resolved = RunConfig {
        alpha: Some(alpha),
        f_sup: Some(f_sup),
        profile: cfg.profile.clone(),
        law: law.as_ref().map(|l| l.spec.clone()),
        eps: Some(eps),
        dt_list: Some(dt_list.clone()),
        ..RunConfig::default()
    };

    let constant_psi0 = match profile.form {
        PsiForm::Constant { psi0 } => Some(psi0),
        _ => None,
    };
    let csv_path = output_path(&args.io, "bound", "", "csv");
    let mut out = create(&csv_path)?;
    writeln!(out, "dt,status,log_term,psi_inv_term,g,psi_tilde_inv_term,scaled_g,total,simplified")?;
    let mut rows = Vec::new();
    let mut vacuous = 0;
    for &dt in &dt_list {
        positive("dt", dt)?;
        let simplified = constant_psi0
            .map(|psi0| simplified_bound(alpha, f_sup, psi0, profile.delta, eps, dt))
            .transpose();
        match (rate_bound_with(&consts, dt), simplified) {
            (Ok(b), Ok(s)) => {
                writeln!(
                    out,
                    "{dt},ok,{},{},{},{},{},{},{}",
                    b.log_term,
                    b.psi_inv_term,
                    b.g,
                    b.psi_tilde_inv_term,
                    b.scaled_g,
                    b.total,
                    format_opt(s)
                )?;
                rows.push(json!({ "dt": dt, "status": "ok", "bound": to_value(&b), "simplified": s }));
            }
            (Err(Error::BoundVacuous(reason)), _) | (_, Err(Error::BoundVacuous(reason))) => {
                vacuous += 1;
                writeln!(out, "{dt},vacuous,,,,,,,")?;
                rows.push(json!({ "dt": dt, "status": "vacuous", "reason": reason }));
            }
            (Err(e), _) | (_, Err(e)) => return Err(e.into()),
        }
    }
    out.flush()?;
    if vacuous > 0 {
        log::warn!("the bound is vacuous at {vacuous} of {} step sizes", dt_list.len());
    }
    write_json(
        &output_path(&args.io, "bound", "", "json"),
        &document("bound", &resolved, json!({ "constants": to_value(&consts), "rows": rows })),
    )
}

pub fn jump(args: JumpArgs) -> Result<(), CliError> {
    let mut cfg = base_config(&args.io)?;
    overlay!(cfg, args, density, alpha);
    let path = RunConfig::require(&cfg.density, "density")?;
    let alpha = positive("alpha", RunConfig::require(&cfg.alpha, "alpha")?)?;
    let density = TabulatedSubDensity::from_csv(&path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let jump = stefan_core::physical_jump(&density, alpha)?;
    let resolved = RunConfig {
        density: Some(path),
        alpha: Some(alpha),
        ..RunConfig::default()
    };
    let doc = document(
        "jump",
        &resolved,
        json!({ "jump_size": jump.size, "witness": jump.witness, "total_mass": density.total_mass }),
    );
    println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
    if args.io.output.is_some() {
        write_json(&output_path(&args.io, "jump", "", "json"), &doc)?;
    }
    Ok(())
}
