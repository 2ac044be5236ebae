//! Fixtures shared by the benchmarks in `benches/`.

use stefan_core::{InitialLaw, LossCurve, TabulatedSubDensity};

/// Gamma(3/2, rate 1/2) initial law with α = 1.3 on [0, 0.8].
pub fn gamma_setup() -> (InitialLaw, f64, f64) {
    (InitialLaw::gamma(1.5, 0.5).expect("valid law"), 1.3, 0.8)
}

/// A staircase with `steps` jumps of random-looking height.
pub fn staircase(steps: usize, alpha: f64, shift: u64) -> LossCurve {
    let mut v = 0.0;
    let values = (0..=steps)
        .map(|k| {
            let u = ((k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(shift) >> 11) as f64
                / (1u64 << 53) as f64;
            v += u * alpha / steps as f64;
            v.min(alpha)
        })
        .collect();
    LossCurve::new(1.0 / steps as f64, alpha, values).expect("monotone")
}

/// Piecewise-linear sub-density with `nodes` nodes, critical near the origin.
pub fn sub_density(nodes: usize, alpha: f64) -> TabulatedSubDensity {
    let grid: Vec<f64> = (0..nodes).map(|i| i as f64 / nodes as f64).collect();
    let values = grid.iter().map(|x| 1.5 / alpha * (1.0 - x)).collect();
    TabulatedSubDensity::new(grid, values).expect("valid density")
}
