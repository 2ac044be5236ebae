//! Initial laws of the starting position and their ψ-profiles.
//!
//! Three families are supported:
//!
//! * `gamma(shape, rate)` with `shape ≥ 1`, so the density is bounded;
//! * the monomial deficit `f(x) = 1/α − c·x^a` on `[0, A]`, zero beyond, with
//!   `A` fixed by normalization;
//! * tabulated densities, linearly interpolated between nodes and renormalized.
//!
//! A law knows its density, distribution function, sup-norm and how to draw
//! from a [`RandomStream`]. Monomial laws also expose the profile
//! `ψ(x) = c·x^a` that measures how far the density sits below `1/α` near 0.

use crate::error::{Error, Result};
use crate::quad;
use crate::rng::RandomStream;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};
use std::path::Path;

/// Parameters of an initial law, in the form they are serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LawKind {
    Gamma {
        shape: f64,
        rate: f64,
    },
    MonomialDeficit {
        alpha: f64,
        a: f64,
        c: f64,
        support: f64,
    },
    Tabulated {
        grid: Vec<f64>,
        density: Vec<f64>,
    },
}

/// Distribution of the initial position `X_{0-}`. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LawKind", into = "LawKind")]
pub struct InitialLaw {
    kind: LawKind,
    sup_norm: f64,
    /// Cumulative mass at the nodes of a tabulated law; empty otherwise.
    cumulative: Vec<f64>,
}

impl TryFrom<LawKind> for InitialLaw {
    type Error = Error;

    fn try_from(kind: LawKind) -> Result<Self> {
        match kind {
            LawKind::Gamma { shape, rate } => InitialLaw::gamma(shape, rate),
            LawKind::MonomialDeficit { alpha, a, c, .. } => {
                InitialLaw::monomial_deficit(alpha, a, c)
            }
            LawKind::Tabulated { grid, density } => InitialLaw::tabulated(grid, density),
        }
    }
}

impl From<InitialLaw> for LawKind {
    fn from(law: InitialLaw) -> Self {
        law.kind
    }
}

const NORMALIZATION_TOL: f64 = 1e-8;

impl InitialLaw {
    /// Gamma law with the given shape and rate (mean `shape / rate`).
    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        if !(shape.is_finite() && shape >= 1.0) {
            return Err(Error::param(
                "shape",
                format!("gamma shape must be finite and >= 1 for a bounded density, got {shape}"),
            ));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::param("rate", format!("must be positive, got {rate}")));
        }
        let mode = (shape - 1.0) / rate;
        let sup_norm = gamma_pdf(shape, rate, mode);
        let law = InitialLaw {
            kind: LawKind::Gamma { shape, rate },
            sup_norm,
            cumulative: Vec::new(),
        };
        law.check_normalization()?;
        Ok(law)
    }

    /// Gamma law parameterized by scale instead of rate.
    pub fn gamma_with_scale(shape: f64, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::param("scale", format!("must be positive, got {scale}")));
        }
        Self::gamma(shape, 1.0 / scale)
    }

    /// `f(x) = 1/α − c·x^a` on `[0, A]`, with `A` solved from normalization.
    pub fn monomial_deficit(alpha: f64, a: f64, c: f64) -> Result<Self> {
        let support = solve_support_bound(alpha, a, c)?;
        let law = InitialLaw {
            kind: LawKind::MonomialDeficit {
                alpha,
                a,
                c,
                support,
            },
            sup_norm: 1.0 / alpha,
            cumulative: Vec::new(),
        };
        law.check_normalization()?;
        Ok(law)
    }

    /// Monomial deficit with the default constant: the largest admissible
    /// `c`, for which the density decreases to exactly 0 at `A = α(a+1)/a`.
    pub fn monomial_deficit_default(alpha: f64, a: f64) -> Result<Self> {
        Self::monomial_deficit(alpha, a, default_deficit_constant(alpha, a)?)
    }

    /// Uniform density on `[lo, hi]`, stored as a two-node table.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::param("hi", format!("need lo < hi, got [{lo}, {hi}]")));
        }
        let v = 1.0 / (hi - lo);
        Self::tabulated(vec![lo, hi], vec![v, v])
    }

    /// Piecewise-linear density through `(grid[i], density[i])`, zero outside
    /// the grid and renormalized to unit mass.
    pub fn tabulated(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != density.len() {
            return Err(Error::param(
                "grid",
                format!(
                    "need at least two nodes and matching lengths, got {} and {}",
                    grid.len(),
                    density.len()
                ),
            ));
        }
        if grid.iter().any(|x| !x.is_finite()) || grid[0] < 0.0 {
            return Err(Error::param("grid", "nodes must be finite and nonnegative"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("grid", "nodes must be strictly increasing"));
        }
        if density.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::param("density", "values must be finite and nonnegative"));
        }
        let mass: f64 = grid
            .windows(2)
            .zip(density.windows(2))
            .map(|(x, v)| 0.5 * (v[0] + v[1]) * (x[1] - x[0]))
            .sum();
        if !(mass > 0.0) {
            return Err(Error::param("density", "total mass is zero"));
        }
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            log::info!("tabulated density renormalized by factor {}", 1.0 / mass);
        }
        let density: Vec<f64> = density.into_iter().map(|v| v / mass).collect();
        let mut cumulative = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for (x, v) in grid.windows(2).zip(density.windows(2)) {
            acc += 0.5 * (v[0] + v[1]) * (x[1] - x[0]);
            cumulative.push(acc);
        }
        let sup_norm = density.iter().cloned().fold(0.0, f64::max);
        Ok(InitialLaw {
            kind: LawKind::Tabulated { grid, density },
            sup_norm,
            cumulative,
        })
    }

    /// Load a tabulated law from a headerless or headed two-column CSV `x,f(x)`.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let (grid, density) = read_two_column_csv(path.as_ref())?;
        Self::tabulated(grid, density)
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    /// Cached ‖f‖_∞.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// Smallest interval containing the support; the upper end may be infinite.
    pub fn support(&self) -> (f64, f64) {
        match &self.kind {
            LawKind::Gamma { .. } => (0.0, f64::INFINITY),
            LawKind::MonomialDeficit { support, .. } => (0.0, *support),
            LawKind::Tabulated { grid, .. } => (grid[0], *grid.last().unwrap()),
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            LawKind::Gamma { shape, rate } => shape / rate,
            _ => {
                let (lo, hi) = self.support();
                quad::integrate_pieces(|x| x * self.pdf(x), &self.breakpoints(lo, hi), 1e-13, 1e-13)
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 || x.is_nan() {
            return 0.0;
        }
        match &self.kind {
            LawKind::Gamma { shape, rate } => gamma_pdf(*shape, *rate, x),
            LawKind::MonomialDeficit { alpha, a, c, support } => {
                if x > *support {
                    0.0
                } else {
                    (1.0 / alpha - c * x.powf(*a)).max(0.0)
                }
            }
            LawKind::Tabulated { grid, density } => {
                if x < grid[0] || x > *grid.last().unwrap() {
                    return 0.0;
                }
                let i = segment_index(grid, x);
                let t = (x - grid[i]) / (grid[i + 1] - grid[i]);
                density[i] + t * (density[i + 1] - density[i])
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x < 0.0 {
            return 0.0;
        }
        match &self.kind {
            LawKind::Gamma { shape, rate } => {
                if x == 0.0 {
                    0.0
                } else if x == f64::INFINITY {
                    1.0
                } else {
                    gamma_lr(*shape, rate * x)
                }
            }
            LawKind::MonomialDeficit { alpha, a, c, support } => {
                if x >= *support {
                    1.0
                } else {
                    (x / alpha - c * x.powf(a + 1.0) / (a + 1.0)).clamp(0.0, 1.0)
                }
            }
            LawKind::Tabulated { grid, density } => {
                if x < grid[0] {
                    return 0.0;
                }
                if x >= *grid.last().unwrap() {
                    return 1.0;
                }
                let i = segment_index(grid, x);
                let len = grid[i + 1] - grid[i];
                let s = x - grid[i];
                let slope = (density[i + 1] - density[i]) / len;
                (self.cumulative[i] + density[i] * s + 0.5 * slope * s * s).min(1.0)
            }
        }
    }

    /// Upper tail `P(X > x)`, accurate for far tails of the gamma law.
    pub fn survival(&self, x: f64) -> f64 {
        match &self.kind {
            LawKind::Gamma { shape, rate } if x > 0.0 => {
                if x == f64::INFINITY {
                    0.0
                } else {
                    gamma_ur(*shape, rate * x)
                }
            }
            _ => 1.0 - self.cdf(x),
        }
    }

    /// One draw from the law; advances `stream`.
    pub fn sample(&self, stream: &mut RandomStream) -> f64 {
        match &self.kind {
            LawKind::Gamma { shape, rate } => sample_gamma(*shape, stream) / rate,
            LawKind::MonomialDeficit { .. } => {
                let u = stream.next_uniform();
                self.invert_monomial_cdf(u)
            }
            LawKind::Tabulated { grid, density } => {
                let u = stream.next_uniform();
                let i = match self
                    .cumulative
                    .binary_search_by(|m| m.total_cmp(&u))
                {
                    Ok(i) => i.min(grid.len() - 2),
                    Err(i) => i.saturating_sub(1).min(grid.len() - 2),
                };
                let len = grid[i + 1] - grid[i];
                let r = u - self.cumulative[i];
                let v = density[i];
                let slope = (density[i + 1] - v) / len;
                let disc = (v * v + 2.0 * slope * r).max(0.0);
                let denom = v + disc.sqrt();
                let s = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
                (grid[i] + s.clamp(0.0, len)).min(grid[i + 1])
            }
        }
    }

    fn invert_monomial_cdf(&self, u: f64) -> f64 {
        let LawKind::MonomialDeficit { alpha, support, .. } = self.kind else {
            unreachable!()
        };
        let (mut lo, mut hi) = (0.0, support);
        let mut x = (u * alpha).min(support);
        for _ in 0..100 {
            let g = self.cdf(x) - u;
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if g == 0.0 || hi - lo < 1e-15 * support {
                break;
            }
            let d = self.pdf(x);
            let newton = x - g / d;
            x = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if g.abs() < 1e-16 {
                break;
            }
        }
        x
    }

    /// The ψ-profile implied by the law, when one is known in closed form.
    pub fn psi_profile(&self) -> Option<PsiProfile> {
        match self.kind {
            LawKind::MonomialDeficit { alpha, a, c, support } if c > 0.0 => {
                let delta = support.min((1.0 / (alpha * c)).powf(1.0 / a));
                PsiProfile::monomial(c, a, delta).ok()
            }
            _ => None,
        }
    }

    /// Points where the density is not smooth, clipped to `[lo, hi]`.
    pub fn breakpoints(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut pts = vec![lo];
        let inner: Vec<f64> = match &self.kind {
            LawKind::Gamma { shape, rate } => vec![(shape - 1.0) / rate],
            LawKind::MonomialDeficit { support, .. } => vec![*support],
            LawKind::Tabulated { grid, .. } => grid.clone(),
        };
        pts.extend(inner.into_iter().filter(|&x| x > lo && x < hi));
        pts.push(hi);
        pts
    }

    /// Short human-readable description, e.g. `gamma(1.5, rate 0.5)`.
    pub fn describe(&self) -> String {
        match &self.kind {
            LawKind::Gamma { shape, rate } => format!("gamma(shape {shape}, rate {rate})"),
            LawKind::MonomialDeficit { alpha, a, c, support } => {
                format!("monomial_deficit(alpha {alpha}, a {a}, c {c}, A {support})")
            }
            LawKind::Tabulated { grid, .. } => format!(
                "tabulated({} nodes on [{}, {}])",
                grid.len(),
                grid[0],
                grid.last().unwrap()
            ),
        }
    }

    fn check_normalization(&self) -> Result<()> {
        let (lo, hi) = self.support();
        let (upper, tail) = if hi.is_finite() {
            (hi, 0.0)
        } else {
            let mut x = self.mean().max(1.0);
            while self.survival(x) > 1e-15 {
                x *= 1.5;
            }
            (x, self.survival(x))
        };
        let mass = quad::integrate_pieces(|x| self.pdf(x), &self.breakpoints(lo, upper), 1e-13, 1e-13)
            + tail;
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::param(
                "density",
                format!("integrates to {mass}, not 1"),
            ));
        }
        Ok(())
    }
}

fn gamma_pdf(shape: f64, rate: f64, x: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        return if shape == 1.0 { rate } else { 0.0 };
    }
    ((shape - 1.0) * x.ln() + shape * rate.ln() - rate * x - ln_gamma(shape)).exp()
}

/// Marsaglia–Tsang rejection sampler for a unit-rate gamma variate.
fn sample_gamma(shape: f64, stream: &mut RandomStream) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = stream.next_normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = stream.next_uniform();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

fn segment_index(grid: &[f64], x: f64) -> usize {
    match grid.binary_search_by(|g| g.total_cmp(&x)) {
        Ok(i) => i.min(grid.len() - 2),
        Err(i) => (i - 1).min(grid.len() - 2),
    }
}

/// Default deficit constant for [`InitialLaw::monomial_deficit_default`].
pub fn default_deficit_constant(alpha: f64, a: f64) -> Result<f64> {
    check_positive("alpha", alpha)?;
    check_positive("a", a)?;
    let support = alpha * (a + 1.0) / a;
    Ok(1.0 / (alpha * support.powf(a)))
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

/// Smallest `A > 0` with `A/α − c·A^{a+1}/(a+1) = 1` such that the density
/// `1/α − c·x^a` stays nonnegative on `[0, A]`.
pub fn solve_support_bound(alpha: f64, a: f64, c: f64) -> Result<f64> {
    check_positive("alpha", alpha)?;
    check_positive("a", a)?;
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::param("c", format!("must be nonnegative, got {c}")));
    }
    if c == 0.0 {
        return Ok(alpha);
    }
    let mass = |x: f64| x / alpha - c * x.powf(a + 1.0) / (a + 1.0);
    // the density vanishes at x_zero; the mass is increasing on [0, x_zero]
    let x_zero = (1.0 / (alpha * c)).powf(1.0 / a);
    let peak = mass(x_zero);
    if peak < 1.0 - 1e-12 {
        return Err(Error::NoValidSupport(format!(
            "with alpha={alpha}, a={a}, c={c} the density turns negative at {x_zero} \
             after accumulating mass {peak} < 1"
        )));
    }
    if peak <= 1.0 {
        return Ok(x_zero);
    }
    let (mut lo, mut hi) = (0.0, x_zero);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two numeric columns, with an optional header row.
pub fn read_two_column_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(Error::Parse(format!(
                "{}: row {} has {} column(s), expected 2",
                path.display(),
                line + 1,
                record.len()
            )));
        }
        let parsed = (record[0].parse::<f64>(), record[1].parse::<f64>());
        match parsed {
            (Ok(x), Ok(y)) => {
                xs.push(x);
                ys.push(y);
            }
            // a header row is tolerated only in first position
            _ if line == 0 => continue,
            _ => {
                return Err(Error::Parse(format!(
                    "{}: row {} is not numeric",
                    path.display(),
                    line + 1
                )))
            }
        }
    }
    Ok((xs, ys))
}

/// Shape of ψ on `(0, δ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum PsiForm {
    Constant { psi0: f64 },
    Monomial { c: f64, a: f64 },
    /// Piecewise linear through the nodes; the grid runs from 0 to δ.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

/// The pair (δ, ψ) with ψ increasing on `(0, δ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiProfile {
    pub delta: f64,
    pub form: PsiForm,
}

impl PsiProfile {
    pub fn constant(psi0: f64, delta: f64) -> Result<Self> {
        check_positive("psi0", psi0)?;
        check_positive("delta", delta)?;
        Ok(PsiProfile {
            delta,
            form: PsiForm::Constant { psi0 },
        })
    }

    pub fn monomial(c: f64, a: f64, delta: f64) -> Result<Self> {
        check_positive("c", c)?;
        check_positive("a", a)?;
        check_positive("delta", delta)?;
        Ok(PsiProfile {
            delta,
            form: PsiForm::Monomial { c, a },
        })
    }

    /// Tabulated profile. Values must be nondecreasing with only the first
    /// allowed to be zero, so that Ψ is strictly increasing.
    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::param("grid", "need at least two nodes and matching lengths"));
        }
        if grid[0] != 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("grid", "must start at 0 and be strictly increasing"));
        }
        if values[0] < 0.0 || values[1..].iter().any(|v| !(*v > 0.0)) {
            return Err(Error::param("values", "must be positive away from 0"));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param("values", "must be nondecreasing"));
        }
        Ok(PsiProfile {
            delta: *grid.last().unwrap(),
            form: PsiForm::Tabulated { grid, values },
        })
    }

    /// ψ(x) for x in `[0, δ]`; ψ(0) is the right limit.
    pub fn psi(&self, x: f64) -> f64 {
        match &self.form {
            PsiForm::Constant { psi0 } => *psi0,
            PsiForm::Monomial { c, a } => c * x.max(0.0).powf(*a),
            PsiForm::Tabulated { grid, values } => {
                let x = x.clamp(0.0, self.delta);
                let i = segment_index(grid, x);
                let t = (x - grid[i]) / (grid[i + 1] - grid[i]);
                values[i] + t * (values[i + 1] - values[i])
            }
        }
    }

    pub fn psi_at_zero(&self) -> f64 {
        self.psi(0.0)
    }

    /// Errors unless ψ(δ) ≤ 1/α, which the rate bound needs.
    pub fn validate_for(&self, alpha: f64) -> Result<()> {
        check_positive("alpha", alpha)?;
        let top = self.psi(self.delta);
        if top > (1.0 / alpha) * (1.0 + 1e-12) {
            return Err(Error::param(
                "profile",
                format!("psi(delta) = {top} exceeds 1/alpha = {}", 1.0 / alpha),
            ));
        }
        Ok(())
    }
}
