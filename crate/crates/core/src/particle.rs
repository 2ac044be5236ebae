//! Interacting particle approximation of the time-stepping scheme.
//!
//! Each particle carries its driving path `W^i_n = X^i_0 + B^i_{nΔ}`; the
//! scheme position is `W^i_n − Λ_n`, so the loss never has to be subtracted
//! from stored state. A particle dies the first time its position is strictly
//! negative at a grid time, and `Λ_n = α·#dead/N` counts deaths up to step
//! `n − 1`.
//!
//! Brownian increments come from a dyadic tree keyed by `(seed, particle,
//! level, node)`. With `path_levels = K` a root node spans `2^K` steps; its
//! sum is refined by Brownian bridges down to single steps. Two runs whose
//! steps differ by a factor `2^k` but share the root span see the same path at
//! common grid times, which couples a coarse run to its reference. With
//! `K = 0` every increment is keyed directly by the step index.

use crate::curve::LossCurve;
use crate::density::InitialLaw;
use crate::error::{Error, Result};
use crate::rng::{RandomStream, SeedKey};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const CHUNK: usize = 4096;
const TREE_TAG: u64 = 1 << 63;
const MAX_LEVELS: u32 = 40;

/// Parameters of one particle run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub alpha: f64,
    pub dt: f64,
    pub horizon: f64,
    pub n_particles: usize,
    pub seed: u64,
    pub workers: usize,
    #[serde(default)]
    pub path_levels: u32,
}

impl ParticleConfig {
    pub fn new(alpha: f64, dt: f64, horizon: f64, n_particles: usize, seed: u64) -> Self {
        ParticleConfig {
            alpha,
            dt,
            horizon,
            n_particles,
            seed,
            workers: 1,
            path_levels: 0,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_path_levels(mut self, levels: u32) -> Self {
        self.path_levels = levels;
        self
    }

    fn validate(&self) -> Result<usize> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::param("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if self.n_particles == 0 {
            return Err(Error::param("n_particles", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::param("workers", "must be at least 1"));
        }
        if self.path_levels > MAX_LEVELS {
            return Err(Error::param("path_levels", format!("at most {MAX_LEVELS}")));
        }
        mesh_steps(self.dt, self.horizon)
    }
}

/// `⌈horizon/dt⌉`, treating ratios within 1e-9 of an integer as exact.
pub fn mesh_steps(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidMesh(format!("dt must be positive, got {dt}")));
    }
    if !(horizon.is_finite() && horizon >= dt * (1.0 - 1e-9)) {
        return Err(Error::InvalidMesh(format!(
            "horizon {horizon} is shorter than one step {dt}"
        )));
    }
    let ratio = horizon / dt;
    let nearest = ratio.round();
    let steps = if (ratio - nearest).abs() <= 1e-9 * nearest {
        nearest
    } else {
        ratio.ceil()
    };
    Ok(steps.max(1.0) as usize)
}

struct Chunk {
    offset: u64,
    drivers: Vec<f64>,
    alive: Vec<bool>,
    /// Partial sums of the current tree nodes, level-major: `tree[l * len + i]`.
    tree: Vec<f64>,
}

/// The particle system between steps.
pub struct ParticleEnsemble {
    chunks: Vec<Chunk>,
    n_particles: usize,
    dead_count: usize,
    step_index: usize,
    key: SeedKey,
    levels: u32,
    /// Standard deviations: root sum at index 0, bridge noise at index l ≥ 1.
    node_sd: Vec<f64>,
}

impl ParticleEnsemble {
    /// Draws initial positions. Nobody is dead yet; see [`Self::kill_below`].
    pub fn new(law: &InitialLaw, config: &ParticleConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_particles;
        let k = config.path_levels;
        let root_dt = config.dt * (1u64 << k) as f64;
        let mut node_sd = vec![root_dt.sqrt()];
        for l in 1..=k {
            let v = root_dt / (1u64 << l) as f64;
            node_sd.push((0.5 * v).sqrt());
        }
        let chunks = (0..n.div_ceil(CHUNK))
            .map(|c| {
                let offset = c * CHUNK;
                let len = CHUNK.min(n - offset);
                let drivers = (0..len)
                    .map(|i| law.sample(&mut RandomStream::new(config.seed, (offset + i) as u64)))
                    .collect();
                Chunk {
                    offset: offset as u64,
                    drivers,
                    alive: vec![true; len],
                    tree: vec![0.0; len * (k as usize + 1)],
                }
            })
            .collect();
        Ok(ParticleEnsemble {
            chunks,
            n_particles: n,
            dead_count: 0,
            step_index: 0,
            key: SeedKey::new(config.seed),
            levels: k,
            node_sd,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dead_count(&self) -> usize {
        self.dead_count
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn driver_positions(&self) -> Vec<f64> {
        self.chunks.iter().flat_map(|c| c.drivers.iter().copied()).collect()
    }

    pub fn alive(&self) -> Vec<bool> {
        self.chunks.iter().flat_map(|c| c.alive.iter().copied()).collect()
    }

    /// Number of particles whose driver is `≤ level`.
    pub fn count_at_or_below(&self, level: f64) -> usize {
        self.chunks
            .iter()
            .map(|c| c.drivers.iter().filter(|&&w| w <= level).count())
            .sum()
    }

    /// Kills live particles with `W − level < 0` without moving them.
    pub fn kill_below(&mut self, level: f64) -> usize {
        let mut kills = 0;
        for c in &mut self.chunks {
            for (w, a) in c.drivers.iter().zip(c.alive.iter_mut()) {
                if *a && *w - level < 0.0 {
                    *a = false;
                    kills += 1;
                }
            }
        }
        self.dead_count += kills;
        kills
    }

    /// Moves every live driver by one Brownian increment, then kills those
    /// with `W − level < 0`. Returns the number of new deaths.
    pub fn advance(&mut self, level: f64, pool: Option<&rayon::ThreadPool>) -> usize {
        let g = self.step_index as u64;
        let k = self.levels;
        let first = if g == 0 {
            0
        } else {
            k.saturating_sub(g.trailing_zeros())
        };
        let key = self.key;
        let sd = &self.node_sd;
        let work = |c: &mut Chunk| step_chunk(c, key, sd, g, k, first, level);
        let kills: usize = match pool {
            Some(pool) => pool.install(|| self.chunks.par_iter_mut().map(work).sum()),
            None => self.chunks.iter_mut().map(work).sum(),
        };
        self.dead_count += kills;
        self.step_index += 1;
        kills
    }
}

#[inline]
fn step_chunk(c: &mut Chunk, key: SeedKey, sd: &[f64], g: u64, k: u32, first: u32, level: f64) -> usize {
    let len = c.drivers.len();
    let ku = k as usize;
    let mut kills = 0;
    for i in 0..len {
        if !c.alive[i] {
            continue;
        }
        let stream = c.offset + i as u64;
        for l in first..=k {
            let lu = l as usize;
            let idx = g >> (k - l);
            let node = if l == 0 {
                sd[0] * key.normal(stream, TREE_TAG | idx)
            } else if idx & 1 == 0 {
                let parent = c.tree[(lu - 1) * len + i];
                let counter = TREE_TAG | ((l as u64) << 56) | (idx >> 1);
                0.5 * parent + sd[lu] * key.normal(stream, counter)
            } else {
                c.tree[(lu - 1) * len + i] - c.tree[lu * len + i]
            };
            c.tree[lu * len + i] = node;
        }
        let w = c.drivers[i] + c.tree[ku * len + i];
        c.drivers[i] = w;
        if w - level < 0.0 {
            c.alive[i] = false;
            kills += 1;
        }
    }
    kills
}

/// Runs the particle scheme and returns `Λ^{Δ,N}` on `0, Δ, …, nΔ`.
pub fn run_particle_scheme(
    law: &InitialLaw,
    alpha: f64,
    dt: f64,
    horizon: f64,
    n_particles: usize,
    seed: u64,
    workers: usize,
) -> Result<LossCurve> {
    let config = ParticleConfig::new(alpha, dt, horizon, n_particles, seed).with_workers(workers);
    run_particle_scheme_with(law, &config)
}

pub fn run_particle_scheme_with(law: &InitialLaw, config: &ParticleConfig) -> Result<LossCurve> {
    let steps = config.validate()?;
    let pool = if config.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| Error::param("workers", e.to_string()))?,
        )
    } else {
        None
    };
    let mut ensemble = ParticleEnsemble::new(law, config)?;
    let n = config.n_particles as f64;
    let alpha = config.alpha;
    let mut values = Vec::with_capacity(steps + 1);
    let lambda0 = alpha * ensemble.count_at_or_below(0.0) as f64 / n;
    values.push(lambda0);
    ensemble.kill_below(lambda0);
    for step in 1..=steps {
        let lambda = alpha * ensemble.dead_count() as f64 / n;
        values.push(lambda);
        if step < steps {
            ensemble.advance(lambda, pool.as_ref());
        }
    }
    log::debug!(
        "particle run: N={}, n={steps}, final loss {}",
        config.n_particles,
        values[steps]
    );
    LossCurve::new(config.dt, alpha, values)
}

/// Inputs of [`particle_scaling_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub alpha: f64,
    pub dt: f64,
    pub horizon: f64,
    pub n_particles: Vec<usize>,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n_particles: usize,
    pub mean_abs_error: f64,
    pub errors: Vec<f64>,
}

/// For each `N`, the mean over seeds `base_seed, base_seed + 1, …` of
/// `max_n |Λ^{Δ,N}_{nΔ} − reference_{nΔ}|`.
pub fn particle_scaling_study(
    law: &InitialLaw,
    study: &ScalingStudy,
    reference: &LossCurve,
) -> Result<Vec<ScalingPoint>> {
    let steps = mesh_steps(study.dt, study.horizon)?;
    if reference.steps() != steps || (reference.dt - study.dt).abs() > 1e-12 * study.dt {
        return Err(Error::MeshMismatch(format!(
            "reference has {} steps of {}, study uses {steps} steps of {}",
            reference.steps(),
            reference.dt,
            study.dt
        )));
    }
    if study.n_seeds == 0 {
        return Err(Error::param("n_seeds", "must be at least 1"));
    }
    study
        .n_particles
        .iter()
        .map(|&n| {
            let errors = (0..study.n_seeds as u64)
                .map(|s| {
                    let config = ParticleConfig::new(
                        study.alpha,
                        study.dt,
                        study.horizon,
                        n,
                        study.base_seed.wrapping_add(s),
                    )
                    .with_workers(study.workers);
                    let curve = run_particle_scheme_with(law, &config)?;
                    Ok(curve
                        .values
                        .iter()
                        .zip(&reference.values)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max))
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean_abs_error = errors.iter().sum::<f64>() / errors.len() as f64;
            Ok(ScalingPoint {
                n_particles: n,
                mean_abs_error,
                errors,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma() -> InitialLaw {
        InitialLaw::gamma(1.5, 0.5).unwrap()
    }

    #[test]
    fn mesh_step_counts() {
        assert_eq!(mesh_steps(0.008, 0.8).unwrap(), 100);
        assert_eq!(mesh_steps(0.3, 1.0).unwrap(), 4);
        assert!(matches!(mesh_steps(0.0, 1.0), Err(Error::InvalidMesh(_))));
        assert!(matches!(mesh_steps(0.1, 0.05), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn distant_particle_survives() {
        let law = InitialLaw::tabulated(vec![9.999, 10.0, 10.001], vec![0.0, 1.0, 0.0]).unwrap();
        let curve = run_particle_scheme(&law, 1.0, 0.01, 0.01, 1, 3, 1).unwrap();
        assert_eq!(curve.values, vec![0.0, 0.0]);
    }

    #[test]
    fn first_step_has_no_loss() {
        let curve = run_particle_scheme(&gamma(), 1.3, 0.008, 0.8, 20_000, 1, 1).unwrap();
        assert_eq!(curve.values[0], 0.0);
        assert_eq!(curve.values[1], 0.0);
        assert!(curve.values[2] > 0.0);
    }

    #[test]
    fn values_are_multiples_of_alpha_over_n() {
        let n = 5000;
        let curve = run_particle_scheme(&gamma(), 1.3, 0.008, 0.8, n, 2, 1).unwrap();
        for v in &curve.values {
            let k = v * n as f64 / 1.3;
            assert!((k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let law = gamma();
        for levels in [0, 3] {
            let base = ParticleConfig::new(1.3, 0.008, 0.8, 3 * CHUNK + 17, 9).with_path_levels(levels);
            let one = run_particle_scheme_with(&law, &base.clone().with_workers(1)).unwrap();
            let two = run_particle_scheme_with(&law, &base.clone().with_workers(2)).unwrap();
            let eight = run_particle_scheme_with(&law, &base.with_workers(8)).unwrap();
            assert_eq!(one, two);
            assert_eq!(one, eight);
        }
    }

    #[test]
    fn longer_horizon_extends_curve() {
        let law = gamma();
        let short = run_particle_scheme(&law, 1.3, 0.01, 0.3, 4000, 5, 1).unwrap();
        let long = run_particle_scheme(&law, 1.3, 0.01, 0.6, 4000, 5, 1).unwrap();
        assert_eq!(short.values[..], long.values[..short.values.len()]);
    }

    #[test]
    fn killing_is_permanent() {
        let law = gamma();
        let config = ParticleConfig::new(1.3, 0.008, 0.8, 2000, 4).with_path_levels(2);
        let mut ens = ParticleEnsemble::new(&law, &config).unwrap();
        ens.kill_below(0.0);
        let mut previous = ens.alive();
        for _ in 0..100 {
            let level = 1.3 * ens.dead_count() as f64 / 2000.0;
            ens.advance(level, None);
            let now = ens.alive();
            assert!(previous.iter().zip(&now).all(|(p, n)| *p || !*n));
            assert_eq!(now.iter().filter(|a| !**a).count(), ens.dead_count());
            previous = now;
        }
    }

    /// Sums of fine increments over blocks of two must equal the coarse
    /// increments when the root span is shared.
    #[test]
    fn dyadic_paths_nest() {
        let law = gamma();
        let coarse = ParticleConfig::new(1.0, 0.04, 0.8, 50, 8).with_path_levels(1);
        let fine = ParticleConfig::new(1.0, 0.02, 0.8, 50, 8).with_path_levels(2);
        let mut a = ParticleEnsemble::new(&law, &coarse).unwrap();
        let mut b = ParticleEnsemble::new(&law, &fine).unwrap();
        for _ in 0..10 {
            a.advance(f64::NEG_INFINITY, None);
            b.advance(f64::NEG_INFINITY, None);
            b.advance(f64::NEG_INFINITY, None);
            for (x, y) in a.driver_positions().iter().zip(b.driver_positions()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dyadic_increments_have_step_variance() {
        let law = InitialLaw::uniform(100.0, 101.0).unwrap();
        let n = 20_000;
        let config = ParticleConfig::new(1.0, 0.01, 0.08, n, 21).with_path_levels(3);
        let mut ens = ParticleEnsemble::new(&law, &config).unwrap();
        let mut before = ens.driver_positions();
        for _ in 0..8 {
            ens.advance(0.0, None);
            let after = ens.driver_positions();
            let var = before
                .iter()
                .zip(&after)
                .map(|(x, y)| (y - x) * (y - x))
                .sum::<f64>()
                / n as f64;
            assert!((var / 0.01 - 1.0).abs() < 0.05, "variance ratio {}", var / 0.01);
            before = after;
        }
    }

    #[test]
    fn scaling_study_against_itself() {
        let law = gamma();
        let reference = run_particle_scheme(&law, 1.3, 0.08, 0.8, 3000, 77, 1).unwrap();
        let study = ScalingStudy {
            alpha: 1.3,
            dt: 0.08,
            horizon: 0.8,
            n_particles: vec![3000],
            n_seeds: 1,
            base_seed: 77,
            workers: 1,
        };
        let points = particle_scaling_study(&law, &study, &reference).unwrap();
        assert_eq!(points[0].mean_abs_error, 0.0);
        let wrong = ScalingStudy {
            dt: 0.04,
            ..study
        };
        assert!(matches!(
            particle_scaling_study(&law, &wrong, &reference),
            Err(Error::MeshMismatch(_))
        ));
    }
}
