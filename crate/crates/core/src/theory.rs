//! Explicit error bounds for the time-stepping scheme, the a priori modulus of
//! continuity of the loss, and the physical jump-size rule.

use crate::density::{read_two_column_csv, PsiForm, PsiProfile};
use crate::error::{Error, Result};
use crate::normal::{std_normal_cdf, std_normal_quantile};
use crate::quad;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// Below this ψ(0) a profile is treated as vanishing at the origin.
pub const PSI0_THRESHOLD: f64 = 1e-12;
/// Constant in front of the logarithmic term of the rate bound.
const LOG_TERM_FACTOR: f64 = 192.0;

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

fn positive_part(x: f64) -> f64 {
    x.max(0.0)
}

/// Cumulative integrals of a tabulated ψ at its nodes.
fn tabulated_nodes(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = vec![0.0];
    for (x, v) in grid.windows(2).zip(values.windows(2)) {
        acc += 0.5 * (v[0] + v[1]) * (x[1] - x[0]);
        out.push(acc);
    }
    out
}

fn segment(grid: &[f64], x: f64) -> usize {
    match grid.binary_search_by(|g| g.total_cmp(&x)) {
        Ok(i) => i.min(grid.len() - 2),
        Err(i) => i.saturating_sub(1).min(grid.len() - 2),
    }
}

fn big_psi(profile: &PsiProfile, x: f64) -> f64 {
    match &profile.form {
        PsiForm::Constant { psi0 } => psi0 * x,
        PsiForm::Monomial { c, a } => c * x.powf(a + 1.0) / (a + 1.0),
        PsiForm::Tabulated { grid, values } => {
            let nodes = tabulated_nodes(grid, values);
            let i = segment(grid, x);
            let s = x - grid[i];
            let slope = (values[i + 1] - values[i]) / (grid[i + 1] - grid[i]);
            nodes[i] + values[i] * s + 0.5 * slope * s * s
        }
    }
}

/// Ψ(x) = ∫_0^x ψ(y) dy for `x ∈ [0, δ]`.
pub fn psi_big(profile: &PsiProfile, x: f64) -> Result<f64> {
    if !(x >= 0.0 && x <= profile.delta) {
        return Err(Error::DomainError(format!(
            "Psi is defined on [0, {}], got {x}",
            profile.delta
        )));
    }
    Ok(big_psi(profile, x))
}

/// Ψ⁻¹(y) for `y ∈ [0, Ψ(δ)]`.
pub fn psi_big_inv(profile: &PsiProfile, y: f64) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::DomainError(format!("Psi inverse needs y >= 0, got {y}")));
    }
    let top = big_psi(profile, profile.delta);
    if y > top * (1.0 + 1e-12) {
        return Err(Error::OutOfRange(format!(
            "{y} exceeds Psi(delta) = {top}; the estimate is outside its window"
        )));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let x = match &profile.form {
        PsiForm::Constant { psi0 } => y / psi0,
        PsiForm::Monomial { c, a } => ((a + 1.0) * y / c).powf(1.0 / (a + 1.0)),
        PsiForm::Tabulated { grid, values } => {
            let nodes = tabulated_nodes(grid, values);
            let i = segment(&nodes, y);
            let len = grid[i + 1] - grid[i];
            let r = y - nodes[i];
            let v = values[i];
            let slope = (values[i + 1] - v) / len;
            let disc = (v * v + 2.0 * slope * r).max(0.0);
            grid[i] + (2.0 * r / (v + disc.sqrt())).clamp(0.0, len)
        }
    };
    Ok(x.min(profile.delta))
}

/// Upper end of the admissible window for ε.
pub fn epsilon_window(alpha: f64, f_sup: f64, profile: &PsiProfile) -> Result<f64> {
    check_positive("f_sup", f_sup)?;
    profile.validate_for(alpha)?;
    let delta = profile.delta;
    let psi_sixth = big_psi(profile, delta / 6.0);
    let first = PI / (8.0 * f_sup * f_sup) * psi_sixth * psi_sixth;
    let psi0 = profile.psi_at_zero();
    if psi0 <= PSI0_THRESHOLD {
        return Ok(first);
    }
    let ratio = positive_part(2.0 * f_sup + psi0 - 1.0 / alpha) / psi0;
    if ratio <= 1.0 {
        return Ok(first);
    }
    Ok(first.min(delta * delta / (3.0 * ratio.ln())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Psi0Positive,
    Psi0Zero,
}

/// Constants of the rate bound, with the inputs they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub alpha: f64,
    pub f_sup: f64,
    pub eps: f64,
    pub profile: PsiProfile,
    pub regime: Regime,
    pub q: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Constants of the simplified bound; only for ψ(0) > 0.
    pub c4: Option<f64>,
    pub c5: Option<f64>,
    pub c6: Option<f64>,
    pub eps_max: f64,
}

impl BoundConstants {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("constants serialize")
    }
}

pub fn bound_constants(
    alpha: f64,
    f_sup: f64,
    profile: &PsiProfile,
    eps: f64,
) -> Result<BoundConstants> {
    let eps_max = epsilon_window(alpha, f_sup, profile)?;
    if !(eps > 0.0 && eps < eps_max) {
        return Err(Error::EpsilonOutOfWindow { eps, eps_max });
    }
    let delta = profile.delta;
    let q = std_normal_quantile(0.25)?;
    let psi0 = profile.psi_at_zero();
    let psi_half = profile.psi(delta / 2.0);
    let psi_delta = profile.psi(delta);
    let c1 = 0.25
        * (psi0
            - positive_part(2.0 * f_sup + psi0 - 1.0 / alpha) * (-delta * delta / (3.0 * eps)).exp());
    let c2 = psi_half
        - positive_part(2.0 * f_sup + psi_half - 1.0 / alpha)
            * (-7.0 * delta * delta / (24.0 * eps)).exp();
    let c3 = (f_sup * (2.0 / PI).sqrt() - q * psi_delta) * delta / 2.0;
    let regime = if psi0 > PSI0_THRESHOLD {
        Regime::Psi0Positive
    } else {
        Regime::Psi0Zero
    };
    let (c4, c5, c6) = match regime {
        Regime::Psi0Positive => {
            if !(c1 > 0.0) {
                return Err(Error::NonpositiveConstant { name: "c1", value: c1 });
            }
            let c4 = LOG_TERM_FACTOR * 2f64.sqrt() * (f_sup / c1 + (alpha * f_sup).max(1.0));
            let c5 = f_sup / (48.0 * (2.0 * PI).sqrt() * psi0);
            let ratio = positive_part(2.0 * f_sup + psi0 - 1.0 / alpha) / psi0;
            let second = if ratio > 1.0 {
                1.0 / (3.0 * ratio.ln())
            } else {
                f64::INFINITY
            };
            let c6 = (PI * psi0 * psi0 / (288.0 * f_sup * f_sup)).min(second);
            (Some(c4), Some(c5), Some(c6))
        }
        Regime::Psi0Zero => {
            if !(c2 > 0.0) {
                return Err(Error::NonpositiveConstant { name: "c2", value: c2 });
            }
            if !(c3 > 0.0) {
                return Err(Error::NonpositiveConstant { name: "c3", value: c3 });
            }
            (None, None, None)
        }
    };
    Ok(BoundConstants {
        alpha,
        f_sup,
        eps,
        profile: profile.clone(),
        regime,
        q,
        c1,
        c2,
        c3,
        c4,
        c5,
        c6,
        eps_max,
    })
}

/// Left end of the region where Φ(q − c3/Ψ(y)) is not exactly zero.
fn psi_tilde_cutoff(consts: &BoundConstants, profile: &PsiProfile) -> f64 {
    let level = consts.c3 / (consts.q + 40.0);
    psi_big_inv(profile, level).unwrap_or(profile.delta)
}

fn psi_tilde_raw(consts: &BoundConstants, profile: &PsiProfile, cutoff: f64, x: f64) -> f64 {
    match consts.regime {
        Regime::Psi0Positive => consts.c1 * x,
        Regime::Psi0Zero => {
            if x <= cutoff {
                return 0.0;
            }
            let integrand = |y: f64| {
                let arg = consts.q - consts.c3 / big_psi(profile, y);
                if arg < -40.0 {
                    0.0
                } else {
                    std_normal_cdf(arg)
                }
            };
            consts.c2 * quad::integrate(integrand, cutoff, x, 0.0, 1e-13)
        }
    }
}

/// Ψ̃(x): `c1·x` when ψ(0) > 0, otherwise `c2 ∫_0^x Φ(q − c3/Ψ(y)) dy`.
pub fn psi_tilde(consts: &BoundConstants, profile: &PsiProfile, x: f64) -> Result<f64> {
    if !(x >= 0.0 && x <= profile.delta) {
        return Err(Error::DomainError(format!(
            "Psi tilde is defined on [0, {}], got {x}",
            profile.delta
        )));
    }
    let cutoff = psi_tilde_cutoff(consts, profile);
    Ok(psi_tilde_raw(consts, profile, cutoff, x))
}

/// Ψ̃⁻¹(y) for `y` up to Ψ̃(δ(1 − 1e-9)).
pub fn psi_tilde_inv(consts: &BoundConstants, profile: &PsiProfile, y: f64) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::DomainError(format!("Psi tilde inverse needs y >= 0, got {y}")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let top_x = profile.delta * (1.0 - 1e-9);
    let cutoff = psi_tilde_cutoff(consts, profile);
    let top = psi_tilde_raw(consts, profile, cutoff, top_x);
    if y > top {
        return Err(Error::OutOfRange(format!(
            "{y} exceeds the reachable range {top} of Psi tilde"
        )));
    }
    if consts.regime == Regime::Psi0Positive {
        return Ok(y / consts.c1);
    }
    let (mut lo, mut hi) = (cutoff, top_x);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if psi_tilde_raw(consts, profile, cutoff, mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The rate bound at one step size, split into its summands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub dt: f64,
    /// `log(⌈ε/Δ⌉/2)`.
    pub log_term: f64,
    /// `2Ψ⁻¹((2/√π)‖f‖_∞√Δ)`.
    pub psi_inv_term: f64,
    /// `192√(2Δ log_term) + psi_inv_term`.
    pub g: f64,
    /// `Ψ̃⁻¹(‖f‖_∞·g)`.
    pub psi_tilde_inv_term: f64,
    /// `max(α‖f‖_∞, 1)·g`.
    pub scaled_g: f64,
    pub total: f64,
}

/// Bound on `sup_{s ≤ ε} |Λ^Δ_s − Λ_s|`. Fails with `BoundVacuous` when Δ is
/// too large for the formula to apply.
pub fn rate_bound(
    alpha: f64,
    f_sup: f64,
    profile: &PsiProfile,
    eps: f64,
    dt: f64,
) -> Result<RateBound> {
    let consts = bound_constants(alpha, f_sup, profile, eps)?;
    rate_bound_with(&consts, dt)
}

/// As [`rate_bound`] with precomputed constants.
pub fn rate_bound_with(consts: &BoundConstants, dt: f64) -> Result<RateBound> {
    check_positive("dt", dt)?;
    let profile = &consts.profile;
    let f_sup = consts.f_sup;
    let steps = (consts.eps / dt).ceil();
    if steps / 2.0 <= 1.0 {
        return Err(Error::BoundVacuous(format!(
            "ceil(eps/dt)/2 = {} must exceed 1",
            steps / 2.0
        )));
    }
    let log_term = (steps / 2.0).ln();
    let inner = 2.0 / PI.sqrt() * f_sup * dt.sqrt();
    let psi_inv_term = 2.0
        * psi_big_inv(profile, inner).map_err(|_| {
            Error::BoundVacuous(format!("Psi inverse argument {inner} exceeds Psi(delta)"))
        })?;
    let g = LOG_TERM_FACTOR * (2.0 * dt * log_term).sqrt() + psi_inv_term;
    let psi_tilde_inv_term = psi_tilde_inv(consts, profile, f_sup * g).map_err(|e| match e {
        Error::OutOfRange(msg) => Error::BoundVacuous(msg),
        other => other,
    })?;
    let scaled_g = (consts.alpha * f_sup).max(1.0) * g;
    Ok(RateBound {
        dt,
        log_term,
        psi_inv_term,
        g,
        psi_tilde_inv_term,
        scaled_g,
        total: psi_tilde_inv_term + scaled_g,
    })
}

/// `c4√Δ(√log(⌈ε/Δ⌉/2) + c5)`, the bound with ψ replaced by the constant ψ(0).
pub fn simplified_bound(
    alpha: f64,
    f_sup: f64,
    psi0: f64,
    delta: f64,
    eps: f64,
    dt: f64,
) -> Result<f64> {
    check_positive("alpha", alpha)?;
    check_positive("f_sup", f_sup)?;
    check_positive("psi0", psi0)?;
    check_positive("delta", delta)?;
    check_positive("dt", dt)?;
    if psi0 > 1.0 / alpha * (1.0 + 1e-12) {
        return Err(Error::param("psi0", "must not exceed 1/alpha"));
    }
    let excess = positive_part(2.0 * f_sup + psi0 - 1.0 / alpha);
    let ratio = excess / psi0;
    let second = if ratio > 1.0 {
        1.0 / (3.0 * ratio.ln())
    } else {
        f64::INFINITY
    };
    let c6 = (PI * psi0 * psi0 / (288.0 * f_sup * f_sup)).min(second);
    let eps_max = c6 * delta * delta;
    if !(eps > 0.0 && eps < eps_max) {
        return Err(Error::EpsilonOutOfWindow { eps, eps_max });
    }
    let c1 = 0.25 * (psi0 - excess * (-delta * delta / (3.0 * eps)).exp());
    if !(c1 > 0.0) {
        return Err(Error::NonpositiveConstant { name: "c1", value: c1 });
    }
    let steps = (eps / dt).ceil();
    if steps / 2.0 <= 1.0 {
        return Err(Error::BoundVacuous(format!(
            "ceil(eps/dt)/2 = {} must exceed 1",
            steps / 2.0
        )));
    }
    let c4 = LOG_TERM_FACTOR * 2f64.sqrt() * (f_sup / c1 + (alpha * f_sup).max(1.0));
    let c5 = f_sup / (48.0 * (2.0 * PI).sqrt() * psi0);
    Ok(c4 * dt.sqrt() * ((steps / 2.0).ln().sqrt() + c5))
}

/// `2Ψ⁻¹(‖f‖_∞√(2/π)√gap)`, an upper bound on `Λ_{s+gap} − Λ_s`.
pub fn modulus_of_continuity(profile: &PsiProfile, f_sup: f64, gap: f64) -> Result<f64> {
    check_positive("f_sup", f_sup)?;
    if !(gap >= 0.0) {
        return Err(Error::DomainError(format!("gap must be nonnegative, got {gap}")));
    }
    if gap == 0.0 {
        return Ok(0.0);
    }
    let psi_sixth = big_psi(profile, profile.delta / 6.0);
    let window = PI / (8.0 * f_sup * f_sup) * psi_sixth * psi_sixth;
    if gap > window {
        return Err(Error::OutOfRange(format!(
            "gap {gap} exceeds the window {window} of the estimate"
        )));
    }
    Ok(2.0 * psi_big_inv(profile, f_sup * (2.0 / PI).sqrt() * gap.sqrt())?)
}

/// Piecewise-linear sub-probability density of surviving mass. Repeated grid
/// points encode jumps of the density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedSubDensity {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub total_mass: f64,
}

impl TabulatedSubDensity {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::param("grid", "need at least two nodes and matching lengths"));
        }
        if grid.iter().any(|x| !x.is_finite()) || grid[0] < 0.0 {
            return Err(Error::param("grid", "nodes must be finite and nonnegative"));
        }
        if grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param("grid", "nodes must be nondecreasing"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("values", "must be finite and nonnegative"));
        }
        let total_mass = grid
            .windows(2)
            .zip(values.windows(2))
            .map(|(x, v)| 0.5 * (v[0] + v[1]) * (x[1] - x[0]))
            .sum::<f64>();
        if total_mass > 1.0 + 1e-9 {
            return Err(Error::param(
                "values",
                format!("total mass {total_mass} exceeds 1"),
            ));
        }
        Ok(TabulatedSubDensity {
            grid,
            values,
            total_mass,
        })
    }

    /// Two-column CSV `x, p(x)`.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let (grid, values) = read_two_column_csv(path.as_ref())?;
        Self::new(grid, values)
    }

    /// Mass on `(0, x]`.
    pub fn cumulative(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (g, v) in self.grid.windows(2).zip(self.values.windows(2)) {
            if x <= g[0] {
                break;
            }
            let len = g[1] - g[0];
            if len == 0.0 {
                continue;
            }
            let s = (x - g[0]).min(len);
            let slope = (v[1] - v[0]) / len;
            acc += v[0] * s + 0.5 * slope * s * s;
        }
        acc
    }
}

/// Size of the jump and a point just past it where `M(x) < x/α` holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpSize {
    pub size: f64,
    pub witness: f64,
}

/// `inf{x > 0 : M(x) < x/α}`, with `M` the mass of the density on `(0, x]`.
pub fn physical_jump_size(density: &TabulatedSubDensity, alpha: f64) -> Result<f64> {
    Ok(physical_jump(density, alpha)?.size)
}

pub fn physical_jump(density: &TabulatedSubDensity, alpha: f64) -> Result<JumpSize> {
    check_positive("alpha", alpha)?;
    let size = jump_infimum(density, alpha);
    let gap = |x: f64| density.cumulative(x) - x / alpha;
    let base = 1e-12f64.max(1e-9 * size);
    let witness = (0..100)
        .map(|k| size + base * 2f64.powi(k))
        .find(|&x| gap(x) < 0.0)
        .unwrap_or(size);
    Ok(JumpSize { size, witness })
}

fn jump_infimum(density: &TabulatedSubDensity, alpha: f64) -> f64 {
    let grid = &density.grid;
    let values = &density.values;
    if grid[0] > 0.0 {
        // no mass on (0, grid[0])
        return 0.0;
    }
    let inv = 1.0 / alpha;
    let mut mass = 0.0;
    for i in 0..grid.len() - 1 {
        let x0 = grid[i];
        let len = grid[i + 1] - x0;
        if len == 0.0 {
            continue;
        }
        let scale = 1.0f64.max(x0 * inv);
        let tol = 1e-12 * scale;
        let g0 = mass - x0 * inv;
        let v = values[i];
        let slope = (values[i + 1] - v) / len;
        let a = 0.5 * slope;
        let b = v - inv;
        if g0 < -tol {
            return x0;
        }
        if g0.abs() <= tol {
            let b_tol = 1e-12 * inv.max(v);
            if b < -b_tol || (b.abs() <= b_tol && a < 0.0) {
                return x0;
            }
        }
        if let Some(s) = first_negative_crossing(g0.max(0.0), b, a, len) {
            return x0 + s;
        }
        mass += v * len + a * len * len;
    }
    let x_last = *grid.last().unwrap();
    let g_last = mass - x_last * inv;
    x_last + alpha * g_last.max(0.0)
}

/// Smallest `s ∈ [0, len)` after which `g + b s + a s²` turns negative, given
/// `g ≥ 0`.
fn first_negative_crossing(g: f64, b: f64, a: f64, len: f64) -> Option<f64> {
    if a == 0.0 {
        if b < 0.0 {
            let s = -g / b;
            return (s < len).then_some(s);
        }
        return None;
    }
    let disc = b * b - 4.0 * a * g;
    if disc <= 0.0 {
        return None;
    }
    let root = disc.sqrt();
    let q = -0.5 * (b + b.signum() * root);
    let (r1, r2) = {
        let u = q / a;
        let w = if q != 0.0 { g / q } else { 0.0 };
        (u.min(w), u.max(w))
    };
    // a > 0: negative between the roots; a < 0: negative beyond the larger one
    let s = if a > 0.0 {
        if r2 <= 0.0 {
            return None;
        }
        r1.max(0.0)
    } else {
        r2
    };
    (s >= 0.0 && s < len).then_some(s)
}
