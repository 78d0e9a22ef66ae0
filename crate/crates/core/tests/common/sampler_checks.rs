use chimera_core::genome::{Census, SearchBounds, Shape};
use chimera_core::mutation::{conv_probability, sample_kind, sample_layer, step_count, MutationConfig, MutationKind};
use chimera_core::RandomSource;

use super::oracle::STEP_COUNT_ORACLE;
use super::{within_three_sigma, Check};
use crate::ensure;

pub const DRAWS: u64 = 100_000;
/// Step counts are cheap, so they get more draws than the 100000 floor to
/// keep the variance estimate well inside the 1% band.
pub const STEP_DRAWS: u64 = 1_000_000;
pub const STEP_REL_TOL: f64 = 0.01;

fn bounds() -> SearchBounds {
    SearchBounds::new(Shape::new(3, 32, 32), 10, 12)
}

pub fn kind_frequencies() -> Check {
    let cfg = MutationConfig::default();
    let mut rng = RandomSource::seed_from_u64(11);
    let mut counts = [0u64; 4];
    for _ in 0..DRAWS {
        let i = match sample_kind(&cfg, &mut rng) {
            MutationKind::AddLayer => 0,
            MutationKind::RemoveLayer => 1,
            MutationKind::ModifyLayer => 2,
            MutationKind::ReseedWeights => 3,
        };
        counts[i] += 1;
    }
    for (count, p) in counts.iter().zip([0.30, 0.30, 0.30, 0.10]) {
        within_three_sigma(*count, DRAWS, p).map_err(|e| format!("kind p={p}: {e}"))?;
    }
    Ok(())
}

pub fn kernel_uniform() -> Check {
    let cfg = MutationConfig::default();
    let mut rng = RandomSource::seed_from_u64(12);
    let mut counts = [0u64; 8];
    for _ in 0..DRAWS {
        let layer = sample_layer(Census::default(), &cfg, &bounds(), &mut rng);
        let k = layer.window().expect("sampled layers have windows").kernel[0];
        ensure!((1..=7).contains(&k), "kernel {k} outside [1, 7]");
        counts[k as usize] += 1;
    }
    for (k, &count) in counts.iter().enumerate().skip(1) {
        within_three_sigma(count, DRAWS, 1.0 / 7.0).map_err(|e| format!("kernel {k}: {e}"))?;
    }
    Ok(())
}

pub fn conv_selection_rate() -> Check {
    ensure!(
        conv_probability(1, 5) == 0.5,
        "conv_probability(1, 5) = {}",
        conv_probability(1, 5)
    );
    let census = Census {
        conv: 5,
        pool: 1,
        activation: 4,
    };
    let cfg = MutationConfig::default();
    let mut rng = RandomSource::seed_from_u64(13);
    let convs = (0..DRAWS)
        .filter(|_| sample_layer(census, &cfg, &bounds(), &mut rng).weight_seed().is_some())
        .count() as u64;
    within_three_sigma(convs, DRAWS, 0.5)
}

pub fn step_count_moments() -> Check {
    for (c, oracle_mean, oracle_var) in STEP_COUNT_ORACLE {
        let mut rng = RandomSource::seed_from_u64(100 + u64::from(c));
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..STEP_DRAWS {
            let k = f64::from(step_count(c, &mut rng));
            ensure!(k >= 1.0, "step_count returned {k}");
            sum += k;
            sq += k * k;
        }
        let mean = sum / STEP_DRAWS as f64;
        let var = sq / STEP_DRAWS as f64 - mean * mean;
        ensure!(
            ((mean - oracle_mean) / oracle_mean).abs() <= STEP_REL_TOL,
            "c_e={c}: mean {mean:.5} vs oracle {oracle_mean:.5}"
        );
        ensure!(
            ((var - oracle_var) / oracle_var).abs() <= STEP_REL_TOL,
            "c_e={c}: variance {var:.5} vs oracle {oracle_var:.5}"
        );
    }
    Ok(())
}
