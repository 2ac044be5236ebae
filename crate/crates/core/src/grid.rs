//! Deterministic evaluation of the discrete loss `Λ^Δ` by evolving the
//! survivor sub-density on a uniform spatial grid.
//!
//! The density is stored as cell averages of the driver `W = X_0 + B` rather
//! than of `X = W − Λ`. Killing at step `n` removes the mass with `W < Λ_n`,
//! and shifting by the loss increment only moves the threshold, so no mass is
//! ever redistributed between cells. The Gaussian step uses the exact
//! cell-to-cell transition of a piecewise-constant density.
//!
//! Mass that starts beyond `x_max`, or that diffuses past the right end of the
//! grid, is kept in an inert reservoir: it is counted as alive and can never
//! reach the killing threshold within the horizon.

use crate::curve::LossCurve;
use crate::density::InitialLaw;
use crate::error::{Error, Result};
use crate::normal::{std_normal_cdf, std_normal_pdf};
use crate::particle::mesh_steps;
use crate::quad;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Kernel truncation in standard deviations.
const KERNEL_SIGMAS: f64 = 8.0;
/// Law mass beyond `x_max` below which the reservoir is ignored.
const RESERVOIR_TOL: f64 = 1e-15;
const MAX_CELLS: usize = 50_000_000;

/// Cell averages of a sub-probability density on `origin + [k h, (k+1) h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivorDensity {
    pub h: f64,
    pub origin: f64,
    pub values: Vec<f64>,
    pub mass: f64,
}

impl SurvivorDensity {
    pub fn new(h: f64, origin: f64, values: Vec<f64>) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGrid(format!("h must be positive, got {h}")));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidGrid("density values must be finite and nonnegative".into()));
        }
        let mass = h * values.iter().sum::<f64>();
        Ok(SurvivorDensity {
            h,
            origin,
            values,
            mass,
        })
    }

    /// Exact cell averages of `law` on `cells` cells starting at `origin`.
    pub fn from_law(law: &InitialLaw, h: f64, origin: f64, cells: usize) -> Result<Self> {
        let values = (0..cells)
            .map(|k| {
                let a = origin + k as f64 * h;
                (law.cdf(a + h) - law.cdf(a)).max(0.0) / h
            })
            .collect();
        Self::new(h, origin, values)
    }

    /// Cell midpoints.
    pub fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |k| self.origin + (k as f64 + 0.5) * self.h)
    }
}

/// Cell-to-cell Gaussian transition weights for one time step.
#[derive(Debug, Clone)]
struct Kernel {
    radius: usize,
    weights: Vec<f64>,
}

impl Kernel {
    fn new(dt: f64, h: f64) -> Self {
        let sigma = dt.sqrt();
        let radius = (KERNEL_SIGMAS * sigma / h).ceil() as usize;
        let g = |z: f64| z * std_normal_cdf(z) + std_normal_pdf(z);
        let mut weights: Vec<f64> = (-(radius as i64)..=radius as i64)
            .map(|d| {
                let z = d as f64 * h / sigma;
                let dz = h / sigma;
                (sigma / h * (g(z + dz) - 2.0 * g(z) + g(z - dz))).max(0.0)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Kernel { radius, weights }
    }

    /// Convolves `input[src]` into the output cells `dst`, both index ranges
    /// in the same lattice.
    fn apply(&self, input: &[f64], src: (usize, usize), dst: (usize, usize), out: &mut [f64]) {
        let r = self.radius;
        for j in dst.0..dst.1 {
            let from = src.0.max(j.saturating_sub(r));
            let to = src.1.min(j + r + 1);
            out[j] = if from < to {
                let w = &self.weights[from + r - j..to + r - j];
                input[from..to].iter().zip(w).map(|(a, b)| a * b).sum()
            } else {
                0.0
            };
        }
    }
}

/// One Gaussian step followed by a left shift and restriction to `[0, ∞)`.
pub fn convolve_step(p: &SurvivorDensity, dt: f64, shift: f64) -> Result<SurvivorDensity> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidMesh(format!("dt must be positive, got {dt}")));
    }
    if !(shift >= 0.0) {
        return Err(Error::param("shift", format!("must be nonnegative, got {shift}")));
    }
    let kernel = Kernel::new(dt, p.h);
    let r = kernel.radius;
    let n = p.values.len();
    let mut padded = vec![0.0; n + 2 * r];
    padded[r..r + n].copy_from_slice(&p.values);
    let mut out = vec![0.0; n + 2 * r];
    kernel.apply(&padded, (r, r + n), (0, n + 2 * r), &mut out);
    let origin = p.origin - r as f64 * p.h - shift;
    // restrict to [0, ∞): drop whole cells below 0 and trim the straddling one
    let mut first = 0;
    let mut new_origin = origin;
    if origin < 0.0 {
        let below = (-origin / p.h).floor() as usize;
        first = below.min(out.len());
        new_origin = origin + first as f64 * p.h;
        if first < out.len() && new_origin < 0.0 {
            let keep = ((new_origin + p.h) / p.h).clamp(0.0, 1.0);
            out[first] *= keep;
        }
    }
    SurvivorDensity::new(p.h, new_origin, out.split_off(first))
}

/// `α ∫ f(x) Φ(−x/√Δ) dx`, the loss after two steps for laws on `[0, ∞)`.
pub fn one_step_oracle(law: &InitialLaw, alpha: f64, dt: f64) -> Result<f64> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidMesh(format!("dt must be positive, got {dt}")));
    }
    let sd = dt.sqrt();
    let (lo, hi) = law.support();
    // Φ(−40) is below the smallest double
    let hi = hi.min(40.0 * sd);
    if hi <= lo {
        return Ok(0.0);
    }
    let mut breaks = law.breakpoints(lo, hi);
    for k in 1..40 {
        let x = k as f64 * sd;
        if x > lo && x < hi {
            breaks.push(x);
        }
    }
    breaks.sort_by(f64::total_cmp);
    let integral = quad::integrate_pieces(
        |x| law.pdf(x) * std_normal_cdf(-x / sd),
        &breaks,
        1e-15,
        1e-13,
    );
    Ok(alpha * integral)
}

/// Parameters of a grid run; `None` picks the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub alpha: f64,
    pub dt: f64,
    pub horizon: f64,
    pub h: Option<f64>,
    pub x_max: Option<f64>,
}

/// Grid geometry after defaults are applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedGrid {
    pub steps: usize,
    pub h: f64,
    pub x_max: f64,
    pub cells: usize,
}

impl GridConfig {
    pub fn new(alpha: f64, dt: f64, horizon: f64) -> Self {
        GridConfig {
            alpha,
            dt,
            horizon,
            h: None,
            x_max: None,
        }
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = Some(h);
        self
    }

    pub fn with_x_max(mut self, x_max: f64) -> Self {
        self.x_max = Some(x_max);
        self
    }

    /// Default `h = √Δ/20`; default `x_max` is the smaller of the support end
    /// and `α + 8√horizon`, beyond which no particle can die in time.
    pub fn resolve(&self, law: &InitialLaw) -> Result<ResolvedGrid> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::param("alpha", format!("must be positive, got {}", self.alpha)));
        }
        let steps = mesh_steps(self.dt, self.horizon)?;
        let h = self.h.unwrap_or(self.dt.sqrt() / 20.0);
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGrid(format!("h must be positive, got {h}")));
        }
        let reach = KERNEL_SIGMAS * self.horizon.sqrt();
        let x_max = self
            .x_max
            .unwrap_or_else(|| law.support().1.min(self.alpha + reach));
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(Error::InvalidGrid(format!("x_max must be positive, got {x_max}")));
        }
        let x_hi = x_max + reach + (KERNEL_SIGMAS + 1.0) * self.dt.sqrt();
        let cells = (x_hi / h).ceil();
        if cells > MAX_CELLS as f64 {
            return Err(Error::InvalidGrid(format!(
                "{cells} cells exceed the limit of {MAX_CELLS}; increase h or decrease x_max"
            )));
        }
        Ok(ResolvedGrid {
            steps,
            h,
            x_max,
            cells: cells as usize,
        })
    }
}

/// Runs the grid scheme with the given configuration.
pub fn run_grid_scheme(law: &InitialLaw, config: &GridConfig) -> Result<LossCurve> {
    run_grid_scheme_traced(law, config, None)
}

/// As [`run_grid_scheme`], optionally writing `t, x, p` rows of the survivor
/// density in scheme coordinates `x = W − Λ` after every step.
pub fn run_grid_scheme_traced(
    law: &InitialLaw,
    config: &GridConfig,
    mut snapshots: Option<&mut dyn Write>,
) -> Result<LossCurve> {
    let grid = config.resolve(law)?;
    let ResolvedGrid { steps, h, x_max, cells } = grid;
    let alpha = config.alpha;
    let reservoir_matters = law.survival(x_max) > RESERVOIR_TOL;
    let reach = KERNEL_SIGMAS * config.horizon.sqrt();
    let kernel = Kernel::new(config.dt, h);
    let r = kernel.radius;

    let lambda0 = alpha * law.cdf(0.0);
    let mut lost = law.cdf(lambda0.max(0.0)).min(1.0);
    let mut cur = vec![0.0; cells];
    let mut next = vec![0.0; cells];
    let (lo_w, hi_w) = law.support();
    let mut lo = ((lambda0.max(lo_w)) / h).floor() as usize;
    let mut hi = if hi_w.is_finite() {
        ((hi_w / h).ceil() as usize + 1).min(cells)
    } else {
        cells
    };
    lo = lo.min(hi);
    for (k, v) in cur.iter_mut().enumerate().take(hi).skip(lo) {
        let a = (k as f64 * h).max(lambda0);
        let b = (k as f64 + 1.0) * h;
        *v = if b > a { (law.cdf(b) - law.cdf(a)).max(0.0) / h } else { 0.0 };
    }

    if let Some(w) = snapshots.as_deref_mut() {
        write_snapshot(w, 0.0, &cur, lo, hi, h, lambda0)?;
    }

    let mut values = Vec::with_capacity(steps + 1);
    values.push(lambda0);
    for n in 1..=steps {
        let lambda = (alpha * lost).max(*values.last().unwrap());
        values.push(lambda);
        if reservoir_matters && lambda + reach > x_max {
            return Err(Error::InvalidGrid(format!(
                "loss {lambda} at step {n} comes within {reach} of x_max = {x_max}; \
                 law mass beyond x_max could die"
            )));
        }
        if n == steps {
            break;
        }
        let in_mass = h * cur[lo..hi].iter().sum::<f64>();
        let spill = right_spill(&kernel, &cur, lo, hi, cells) * h;
        let j0 = ((lambda / h).floor() as usize).min(cells);
        let out_hi = (hi + r).min(cells);
        let out_lo = j0.min(out_hi);
        kernel.apply(&cur, (lo, hi), (out_lo, out_hi), &mut next);
        if out_lo < out_hi {
            let keep = (((out_lo + 1) as f64 * h - lambda) / h).clamp(0.0, 1.0);
            next[out_lo] *= keep;
        }
        let kept = h * next[out_lo..out_hi].iter().sum::<f64>();
        lost += (in_mass - spill - kept).max(0.0);
        lost = lost.min(1.0);
        for v in &mut cur[lo..hi] {
            *v = 0.0;
        }
        std::mem::swap(&mut cur, &mut next);
        lo = out_lo;
        hi = out_hi;
        if let Some(w) = snapshots.as_deref_mut() {
            write_snapshot(w, n as f64 * config.dt, &cur, lo, hi, h, lambda)?;
        }
    }
    LossCurve::new(config.dt, alpha, values)
}

/// Mass fraction (per unit h) carried past the last cell by one step.
fn right_spill(kernel: &Kernel, cur: &[f64], lo: usize, hi: usize, cells: usize) -> f64 {
    let r = kernel.radius;
    let from = lo.max((cells + 1).saturating_sub(r + 1));
    (from..hi)
        .map(|s| {
            // targets j ≥ cells, i.e. offsets d = j − s ≥ cells − s
            let d0 = cells - s;
            if d0 > r {
                0.0
            } else {
                cur[s] * kernel.weights[d0 + r..].iter().sum::<f64>()
            }
        })
        .sum()
}

fn write_snapshot(
    out: &mut dyn Write,
    t: f64,
    cur: &[f64],
    lo: usize,
    hi: usize,
    h: f64,
    lambda: f64,
) -> Result<()> {
    if t == 0.0 {
        writeln!(out, "t,x,p")?;
    }
    for (k, v) in cur.iter().enumerate().take(hi).skip(lo) {
        if *v > 0.0 {
            writeln!(out, "{},{},{}", t, (k as f64 + 0.5) * h - lambda, v)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::std_normal_pdf;

    /// `∫_0^1 Φ(−x/s) dx` in closed form.
    fn uniform_loss(s: f64) -> f64 {
        let u = 1.0 / s;
        s * (std_normal_pdf(0.0) - std_normal_pdf(u) - u * std_normal_cdf(-u))
    }

    #[test]
    fn kernel_matches_gaussian_moments() {
        let k = Kernel::new(0.01, 0.005);
        let r = k.radius as f64;
        let total: f64 = k.weights.iter().sum();
        let var: f64 = k
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * ((i as f64 - r) * 0.005).powi(2))
            .sum();
        assert!((total - 1.0).abs() < 1e-14);
        // a uniform cell adds h²/6 of variance: two cells, h²/12 each
        assert!((var - (0.01 + 0.005f64.powi(2) / 6.0)).abs() < 1e-9);
    }

    #[test]
    fn oracle_regression_constant() {
        let law = InitialLaw::uniform(0.0, 1.0).unwrap();
        let v = one_step_oracle(&law, 1.0, 0.01).unwrap();
        assert!((v - 0.039_894_228_040_143_27).abs() < 1e-12);
        assert!((v - uniform_loss(0.1)).abs() < 1e-13);
        assert!(one_step_oracle(&law, 1.0, 1e-12).unwrap() < 1e-6);
        let far = InitialLaw::uniform(5.0, 6.0).unwrap();
        assert!(one_step_oracle(&far, 1.0, 0.01).unwrap() < 1e-10);
    }

    #[test]
    fn grid_matches_oracle_after_two_steps() {
        let law = InitialLaw::uniform(0.0, 1.0).unwrap();
        let curve = run_grid_scheme(&law, &GridConfig::new(1.0, 0.01, 0.02)).unwrap();
        let oracle = uniform_loss(0.1);
        assert_eq!(curve.values[1], 0.0);
        assert!((curve.values[2] - oracle).abs() < 1e-4, "{} vs {oracle}", curve.values[2]);
    }

    #[test]
    fn far_law_never_dies() {
        let law = InitialLaw::uniform(5.0, 6.0).unwrap();
        let curve = run_grid_scheme(&law, &GridConfig::new(1.0, 0.001, 0.01)).unwrap();
        assert_eq!(curve.steps(), 10);
        assert!(curve.values.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn convolve_keeps_distant_mass() {
        let p = SurvivorDensity::new(0.001, 9.995, vec![100.0; 10]).unwrap();
        let q = convolve_step(&p, 0.01, 0.0).unwrap();
        assert!((q.mass - p.mass).abs() < 1e-10);
    }

    #[test]
    fn convolve_uniform_loss() {
        let law = InitialLaw::uniform(0.0, 1.0).unwrap();
        let p = SurvivorDensity::from_law(&law, 0.001, 0.0, 1000).unwrap();
        let q = convolve_step(&p, 0.01, 0.0).unwrap();
        assert!((p.mass - q.mass - uniform_loss(0.1)).abs() < 1e-6);
        assert!(q.origin >= 0.0);
    }

    #[test]
    fn large_shift_removes_everything() {
        let p = SurvivorDensity::new(0.001, 10.0, vec![100.0; 10]).unwrap();
        let q = convolve_step(&p, 1e-10, 11.0).unwrap();
        assert!(q.mass < 1e-12);
    }

    #[test]
    fn mass_bookkeeping_is_monotone() {
        let law = InitialLaw::gamma(1.5, 0.5).unwrap();
        let curve = run_grid_scheme(&law, &GridConfig::new(1.3, 0.016, 0.8)).unwrap();
        assert!(curve.values.windows(2).all(|w| w[1] >= w[0]));
        assert!(curve.final_value() > 0.0 && curve.final_value() < 1.3);
    }

    #[test]
    fn rejects_bad_grids() {
        let law = InitialLaw::gamma(1.5, 0.5).unwrap();
        let bad_h = GridConfig::new(1.3, 0.01, 0.1).with_h(0.0);
        assert!(matches!(run_grid_scheme(&law, &bad_h), Err(Error::InvalidGrid(_))));
        // the loss outgrows a tiny x_max while law mass sits beyond it
        let small = GridConfig::new(1.3, 0.01, 0.8).with_x_max(0.5);
        assert!(matches!(run_grid_scheme(&law, &small), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn snapshots_are_written() {
        let law = InitialLaw::uniform(0.0, 1.0).unwrap();
        let mut buf = Vec::new();
        run_grid_scheme_traced(&law, &GridConfig::new(1.0, 0.01, 0.03), Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,p\n"));
        assert!(text.lines().any(|l| l.starts_with("0.02,")));
    }
}
