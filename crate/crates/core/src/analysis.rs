//! Error metrics between loss curves, M1 diagnostics, rate regression and the
//! convergence-study driver.

use crate::curve::LossCurve;
use crate::density::{InitialLaw, LawKind};
use crate::error::{Error, Result};
use crate::grid::{run_grid_scheme, GridConfig};
use crate::particle::{run_particle_scheme_with, ParticleConfig};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

/// Integer `k` with `coarse_dt = k · fine_dt`, if there is one.
fn refinement_factor(coarse: &LossCurve, fine: &LossCurve) -> Result<usize> {
    let ratio = coarse.dt / fine.dt;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * k {
        return Err(Error::MeshMismatch(format!(
            "step {} is not an integer multiple of {}",
            coarse.dt, fine.dt
        )));
    }
    let k = k as usize;
    if coarse.steps() * k != fine.steps() {
        return Err(Error::MeshMismatch(format!(
            "horizons differ: {} steps of {} vs {} steps of {}",
            coarse.steps(),
            coarse.dt,
            fine.steps(),
            fine.dt
        )));
    }
    Ok(k)
}

/// `sup_t |curve_t − reference_t|` over the reference grid, which contains
/// every jump time of both step functions. Divided by α when `normalized`.
pub fn sup_error(curve: &LossCurve, reference: &LossCurve, normalized: bool) -> Result<f64> {
    if (curve.alpha - reference.alpha).abs() > 1e-12 * curve.alpha {
        return Err(Error::MeshMismatch(format!(
            "alpha differs: {} vs {}",
            curve.alpha, reference.alpha
        )));
    }
    let k = refinement_factor(curve, reference)?;
    let sup = reference
        .values
        .iter()
        .enumerate()
        .map(|(j, r)| (curve.values[j / k] - r).abs())
        .fold(0.0, f64::max);
    Ok(if normalized { sup / curve.alpha } else { sup })
}

/// Residuals of every curve at one probe time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResidual {
    pub t: f64,
    /// `|Λ^{Δ_k}(t) − limit(t)|` in the order the curves were given.
    pub residuals: Vec<f64>,
    /// Residual of the last (finest) curve.
    pub finest: f64,
    /// The finest curve rises by more than α/10 within one coarse step of
    /// `t`, so `t` may be a jump time rather than a continuity point.
    pub excluded: bool,
}

/// Pointwise convergence diagnostic at the probe times. `curves` are ordered
/// by decreasing step.
pub fn m1_pointwise_check(
    curves: &[LossCurve],
    limit: &LossCurve,
    probes: &[f64],
) -> Result<Vec<ProbeResidual>> {
    if curves.is_empty() {
        return Err(Error::DegenerateInput("no curves to check".into()));
    }
    let horizon = curves
        .iter()
        .map(|c| c.horizon())
        .chain(std::iter::once(limit.horizon()))
        .fold(f64::INFINITY, f64::min);
    let coarse_dt = curves.iter().map(|c| c.dt).fold(0.0, f64::max);
    let finest = curves.last().unwrap();
    probes
        .iter()
        .map(|&t| {
            if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
                return Err(Error::DomainError(format!(
                    "probe {t} outside [0, {horizon}]"
                )));
            }
            let target = limit.value_at(t);
            let residuals: Vec<f64> = curves.iter().map(|c| (c.value_at(t) - target).abs()).collect();
            let rise = finest.value_at(t + coarse_dt) - finest.value_at((t - coarse_dt).max(0.0));
            Ok(ProbeResidual {
                t,
                finest: *residuals.last().unwrap(),
                residuals,
                excluded: rise > finest.alpha / 10.0,
            })
        })
        .collect()
}

/// Completed graph of a step curve as a monotone polyline in the (t, Λ) plane.
fn staircase(curve: &LossCurve) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(2 * curve.values.len());
    pts.push((0.0, curve.values[0]));
    for k in 1..curve.values.len() {
        let t = curve.time(k);
        pts.push((t, curve.values[k - 1]));
        pts.push((t, curve.values[k]));
    }
    pts
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + s * dx, a.1 + s * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Indices of the segments of a monotone polyline that may come within `r`
/// of `p`. Both coordinates are nondecreasing along the polyline, so these
/// form a contiguous range.
fn segment_window(p: (f64, f64), pts: &[(f64, f64)], r: f64) -> std::ops::Range<usize> {
    let lo_t = pts.partition_point(|q| q.0 < p.0 - r);
    let lo_v = pts.partition_point(|q| q.1 < p.1 - r);
    let hi_t = pts.partition_point(|q| q.0 <= p.0 + r);
    let hi_v = pts.partition_point(|q| q.1 <= p.1 + r);
    let lo = lo_t.max(lo_v).saturating_sub(1);
    let hi = hi_t.min(hi_v).min(pts.len().saturating_sub(1));
    lo..hi.max(lo)
}

/// Distance from `p` to a monotone polyline, seeded with an upper bound.
fn distance_to_staircase(p: (f64, f64), pts: &[(f64, f64)], upper: f64) -> f64 {
    let mut best = upper;
    if pts.len() == 1 {
        return best.min(point_segment_distance(p, pts[0], pts[0]));
    }
    for i in segment_window(p, pts, best) {
        best = best.min(point_segment_distance(p, pts[i], pts[i + 1]));
    }
    best
}

fn directed_hausdorff(a: &[(f64, f64)], b: &[(f64, f64)], b_curve: &LossCurve) -> f64 {
    let dist = |p: (f64, f64)| {
        let vertical = (p.1 - b_curve.value_at(p.0)).abs();
        distance_to_staircase(p, b, vertical)
    };
    if b.len() == 1 {
        return a.iter().map(|&p| dist(p)).fold(0.0, f64::max);
    }
    let mut best: f64 = 0.0;
    let mut stack = Vec::new();
    let mut d_prev = dist(a[0]);
    best = best.max(d_prev);
    for w in a.windows(2) {
        let d_next = dist(w[1]);
        best = best.max(d_next);
        stack.push((w[0], d_prev, w[1], d_next, 0u32));
        d_prev = d_next;
    }
    // Branch and bound. Along a segment the distance to one convex piece is
    // convex, so its maximum over [p, q] sits at an endpoint; the minimum of
    // these endpoint maxima bounds the distance to the whole polyline.
    while let Some((p, dp, q, dq, depth)) = stack.pop() {
        let len = ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt();
        let lipschitz = 0.5 * (dp + dq + len);
        if lipschitz <= best * (1.0 + 1e-9) + 1e-15 {
            continue;
        }
        let m = (0.5 * (p.0 + q.0), 0.5 * (p.1 + q.1));
        let upper = segment_window(m, b, lipschitz + 0.5 * len)
            .map(|i| {
                point_segment_distance(p, b[i], b[i + 1])
                    .max(point_segment_distance(q, b[i], b[i + 1]))
            })
            .fold(lipschitz, f64::min);
        if upper <= best * (1.0 + 1e-9) + 1e-15 || depth > 60 {
            continue;
        }
        let dm = dist(m);
        best = best.max(dm);
        stack.push((p, dp, m, dm, depth + 1));
        stack.push((m, dm, q, dq, depth + 1));
    }
    best
}

/// Hausdorff distance between the completed graphs of two step curves.
pub fn m1_graph_distance(a: &LossCurve, b: &LossCurve) -> Result<f64> {
    if (a.horizon() - b.horizon()).abs() > 1e-9 * a.horizon().max(b.horizon()) {
        return Err(Error::MeshMismatch(format!(
            "horizons differ: {} vs {}",
            a.horizon(),
            b.horizon()
        )));
    }
    let (pa, pb) = (staircase(a), staircase(b));
    Ok(directed_hausdorff(&pa, &pb, b).max(directed_hausdorff(&pb, &pa, a)))
}

/// Least-squares fit of `log error = intercept − rate · log n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "need at least 3 points for a rate, got {}",
            pairs.len()
        )));
    }
    if let Some((n, e)) = pairs.iter().find(|(n, e)| !(*n > 0.0 && *e > 0.0)) {
        return Err(Error::DegenerateInput(format!(
            "mesh counts and errors must be positive, got ({n}, {e})"
        )));
    }
    let m = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateInput("all mesh counts are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RateFit {
        rate: -slope,
        intercept,
        r_squared,
    })
}

/// Which scheme realization a study runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Engine {
    Particle {
        n_particles: usize,
        seed: u64,
        workers: usize,
    },
    Grid {
        h: Option<f64>,
        x_max: Option<f64>,
    },
}

/// Inputs of [`convergence_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub alpha: f64,
    pub horizon: f64,
    pub n_list: Vec<usize>,
    pub n_reference: usize,
    pub engine: Engine,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub law: InitialLaw,
    pub spec: StudySpec,
    pub mesh_counts: Vec<usize>,
    /// The errors fed to the regression: normalized or raw per `spec`.
    pub errors: Vec<f64>,
    pub raw_errors: Vec<f64>,
    pub normalized_errors: Vec<f64>,
    /// `None` when fewer than 3 meshes were run or some error is zero.
    pub fitted_rate: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub reference_mesh: usize,
    /// Particle runs share Brownian paths across meshes.
    pub coupled_paths: bool,
}

/// Path levels per mesh when every count is a power-of-two multiple of a
/// common base, so that all runs can share one Brownian tree.
pub fn dyadic_levels(counts: &[usize]) -> Option<Vec<u32>> {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let base = counts.iter().copied().fold(0, gcd);
    if base == 0 {
        return None;
    }
    counts
        .iter()
        .map(|&n| {
            let m = n / base;
            m.is_power_of_two().then(|| m.trailing_zeros())
        })
        .collect()
}

/// One engine run with `n` steps on `[0, horizon]`.
pub fn run_engine(
    law: &InitialLaw,
    alpha: f64,
    horizon: f64,
    n: usize,
    engine: &Engine,
    path_levels: u32,
) -> Result<LossCurve> {
    if n == 0 {
        return Err(Error::InvalidMesh("step count must be positive".into()));
    }
    let dt = horizon / n as f64;
    match engine {
        Engine::Particle {
            n_particles,
            seed,
            workers,
        } => {
            let config = ParticleConfig::new(alpha, dt, horizon, *n_particles, *seed)
                .with_workers(*workers)
                .with_path_levels(path_levels);
            run_particle_scheme_with(law, &config)
        }
        Engine::Grid { h, x_max } => {
            let config = GridConfig {
                alpha,
                dt,
                horizon,
                h: *h,
                x_max: *x_max,
            };
            run_grid_scheme(law, &config)
        }
    }
}

/// Runs the engine on every mesh of `n_list` and on the reference mesh and
/// regresses the sup-norm errors.
pub fn convergence_study(law: &InitialLaw, spec: &StudySpec) -> Result<ConvergenceReport> {
    let (report, _) = convergence_study_with_curves(law, spec)?;
    Ok(report)
}

/// As [`convergence_study`], also returning the curves (reference last).
pub fn convergence_study_with_curves(
    law: &InitialLaw,
    spec: &StudySpec,
) -> Result<(ConvergenceReport, Vec<LossCurve>)> {
    if spec.n_list.is_empty() {
        return Err(Error::DegenerateInput("empty mesh list".into()));
    }
    if spec.n_list.windows(2).any(|w| w[1] <= w[0]) || spec.n_list[0] == 0 {
        return Err(Error::InvalidMesh("mesh counts must be positive and strictly increasing".into()));
    }
    if let Some(n) = spec.n_list.iter().find(|&&n| spec.n_reference % n != 0) {
        return Err(Error::InvalidMesh(format!(
            "reference mesh {} is not a multiple of {n}",
            spec.n_reference
        )));
    }
    let finest = *spec.n_list.last().unwrap();
    if spec.n_reference < 8 * finest {
        log::warn!(
            "reference mesh {} is less than 8 times the finest mesh {finest}; errors at fine meshes are biased low",
            spec.n_reference
        );
    }
    let mut counts = spec.n_list.clone();
    counts.push(spec.n_reference);
    let levels = match spec.engine {
        Engine::Particle { .. } => dyadic_levels(&counts),
        Engine::Grid { .. } => None,
    };
    let coupled_paths = levels.is_some();
    let levels = levels.unwrap_or_else(|| vec![0; counts.len()]);
    let curves = counts
        .iter()
        .zip(&levels)
        .map(|(&n, &l)| {
            log::info!("running n = {n}");
            run_engine(law, spec.alpha, spec.horizon, n, &spec.engine, l)
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = curves.last().unwrap();
    let raw_errors = curves[..spec.n_list.len()]
        .iter()
        .map(|c| sup_error(c, reference, false))
        .collect::<Result<Vec<_>>>()?;
    let normalized_errors: Vec<f64> = raw_errors.iter().map(|e| e / spec.alpha).collect();
    let errors = if spec.normalized {
        normalized_errors.clone()
    } else {
        raw_errors.clone()
    };
    let pairs: Vec<(f64, f64)> = spec
        .n_list
        .iter()
        .zip(&errors)
        .map(|(&n, &e)| (n as f64, e))
        .collect();
    let fit = match fit_rate(&pairs) {
        Ok(fit) => Some(fit),
        Err(Error::DegenerateInput(reason)) => {
            log::warn!("no rate fitted: {reason}");
            None
        }
        Err(e) => return Err(e),
    };
    let report = ConvergenceReport {
        law: law.clone(),
        spec: spec.clone(),
        mesh_counts: spec.n_list.clone(),
        errors,
        raw_errors,
        normalized_errors,
        fitted_rate: fit.as_ref().map(|f| f.rate),
        intercept: fit.as_ref().map(|f| f.intercept),
        r_squared: fit.as_ref().map(|f| f.r_squared),
        reference_mesh: spec.n_reference,
        coupled_paths,
    };
    Ok((report, curves))
}

impl ConvergenceReport {
    /// Columns `n, error, raw_error, normalized_error`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["n", "error", "raw_error", "normalized_error"])?;
        for i in 0..self.mesh_counts.len() {
            writer.write_record(&[
                self.mesh_counts[i].to_string(),
                self.errors[i].to_string(),
                self.raw_errors[i].to_string(),
                self.normalized_errors[i].to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Monomial exponent and α, when the study ran on a monomial-deficit law.
    fn table_key(&self) -> Option<(f64, f64)> {
        match self.law.kind() {
            LawKind::MonomialDeficit { a, .. } => Some((*a, self.spec.alpha)),
            _ => None,
        }
    }
}

/// Markdown table of fitted rates with one row per monomial exponent `a` and
/// one column per α, next to the reference order `1/(2(a+1))`. Reports on
/// other laws are listed in an extra row each.
pub fn rate_table_markdown(reports: &[ConvergenceReport]) -> String {
    let mut alphas = BTreeSet::new();
    let mut cells: BTreeMap<(u64, u64), Option<f64>> = BTreeMap::new();
    let mut others = Vec::new();
    for r in reports {
        match r.table_key() {
            Some((a, alpha)) => {
                alphas.insert(alpha.to_bits());
                cells.insert((a.to_bits(), alpha.to_bits()), r.fitted_rate);
            }
            None => others.push(r),
        }
    }
    let mut alpha_list: Vec<f64> = alphas.into_iter().map(f64::from_bits).collect();
    alpha_list.sort_by(f64::total_cmp);
    let mut a_list: Vec<f64> = cells.keys().map(|k| f64::from_bits(k.0)).collect();
    a_list.sort_by(f64::total_cmp);
    a_list.dedup();

    let mut out = String::from("| a \\ alpha | 1/(2(a+1)) |");
    for alpha in &alpha_list {
        let _ = write!(out, " {alpha} |");
    }
    out.push_str("\n|---|---|");
    for _ in &alpha_list {
        out.push_str("---|");
    }
    out.push('\n');
    for a in &a_list {
        let _ = write!(out, "| {a} | {:.3} |", 1.0 / (2.0 * (a + 1.0)));
        for alpha in &alpha_list {
            match cells.get(&(a.to_bits(), alpha.to_bits())) {
                Some(Some(rate)) => {
                    let _ = write!(out, " {rate:.3} |");
                }
                _ => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    for r in others {
        let _ = writeln!(
            out,
            "| {} (alpha {}) | - | {} |",
            r.law.describe(),
            r.spec.alpha,
            r.fitted_rate.map_or("-".into(), |v| format!("{v:.3}"))
        );
    }
    out
}
