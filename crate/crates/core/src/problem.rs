//! Material fields, right-hand side and initial iterates of the benchmark
//! problems for `-div(eps grad u) = f` on the unit square.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name of the generator behind [`noise_value`], reported in telemetry.
pub const NOISE_GENERATOR: &str = "ChaCha8 (stream = vertex position key)";

/// Upper bound of the initial noise interval `[0, 4/3]`.
pub const NOISE_MAX: f64 = 4.0 / 3.0;

/// Offset of the quadrant field's centre from `(0.5, 0.5)`. The resulting
/// interface never coincides with a face of a tripartitioned cell.
pub const QUADRANT_OFFSET: f64 = 1.0 / (4.0 * 2187.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaterialField {
    /// Smooth field with localised oscillations near the axes.
    Theta { theta: f64 },
    /// Two values arranged in four quadrants, `1` on the south-west and
    /// north-east quadrants and `eps_low` on the other two.
    Quadrant { eps_low: f64 },
}

impl MaterialField {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            MaterialField::Theta { theta } => epsilon_theta(x, y, theta),
            MaterialField::Quadrant { eps_low } => epsilon_quadrant(x, y, eps_low),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(*self, MaterialField::Theta { theta } if theta == 0.0)
    }
}

/// `1 + (0.3/d) prod_i exp(-theta x_i) cos(pi theta x_i)` with `d = 2`.
pub fn epsilon_theta(x: f64, y: f64, theta: f64) -> f64 {
    let factor = |t: f64| (-theta * t).exp() * (std::f64::consts::PI * theta * t).cos();
    1.0 + 0.15 * factor(x) * factor(y)
}

/// Quadrant field. Points on a dividing line belong to the upper/right side.
pub fn epsilon_quadrant(x: f64, y: f64, eps_low: f64) -> f64 {
    let centre = 0.5 + QUADRANT_OFFSET;
    if (x >= centre) == (y >= centre) {
        1.0
    } else {
        eps_low
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemInstance {
    pub material: MaterialField,
    /// Constant right-hand side.
    pub rhs: f64,
    /// Constant Dirichlet value on the whole boundary.
    pub boundary: f64,
    pub seed: u64,
}

impl ProblemInstance {
    pub fn new(material: MaterialField) -> Self {
        Self { material, rhs: 0.0, boundary: 0.0, seed: 0 }
    }
}

/// Uniform value in `[0, 4/3]` keyed by seed and a position key. The key is
/// independent of the level, so coinciding vertices see the same value.
pub fn noise_value(seed: u64, key: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng.gen_range(0.0..=NOISE_MAX)
}
