//! Real-vector search space for exercising the engine on classic
//! continuous benchmarks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::engine::{EngineError, Neighbor, Objective, SearchSpace, TrialOutcome};
use crate::genome::Fingerprint;
use crate::rng::RandomSource;

/// Box-bounded vectors. A neighbor perturbs one coordinate with Gaussian
/// noise whose scale is drawn log-uniformly between `span * 1e-6` and
/// `span`, then clamps to the box.
#[derive(Debug, Clone)]
pub struct VectorSpace {
    pub dim: usize,
    pub lower: f64,
    pub upper: f64,
}

impl VectorSpace {
    pub fn new(dim: usize, lower: f64, upper: f64) -> Self {
        assert!(dim > 0 && lower < upper);
        Self { dim, lower, upper }
    }
}

impl SearchSpace for VectorSpace {
    type Genome = Vec<f64>;

    fn random(&self, rng: &mut RandomSource) -> Result<Vec<f64>, EngineError> {
        Ok((0..self.dim)
            .map(|_| rng.random_range(self.lower..self.upper))
            .collect())
    }

    fn neighbor(&self, parent: &Vec<f64>, _exhaustion: u32, rng: &mut RandomSource) -> Neighbor<Vec<f64>> {
        let mut x = parent.clone();
        let i = rng.random_range(0..self.dim);
        let span = self.upper - self.lower;
        let scale = span * 10f64.powf(-6.0 * rng.random::<f64>());
        let noise = Normal::new(0.0, scale).expect("positive scale").sample(rng);
        x[i] = (x[i] + noise).clamp(self.lower, self.upper);
        Neighbor {
            genome: x,
            fell_back: false,
        }
    }

    fn fingerprint(&self, genome: &Vec<f64>) -> Fingerprint {
        let mut h = Sha256::new();
        for v in genome {
            h.update(v.to_bits().to_le_bytes());
        }
        let d = h.finalize();
        Fingerprint(u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
    }
}

/// `f(x) = sum x_i^2`, minimum 0 at the origin.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sphere;

impl Objective<Vec<f64>> for Sphere {
    fn evaluate(&self, _request_id: u64, genome: &Vec<f64>) -> TrialOutcome<Vec<f64>> {
        TrialOutcome::Scored {
            loss: genome.iter().map(|v| v * v).sum(),
            genome: genome.clone(),
        }
    }
}
