use chimera_core::genome::{infer_shapes, random_genome, SearchBounds, Shape};
use chimera_core::mutation::MutationConfig;
use chimera_core::RandomSource;

use super::oracle::{genome_with, raw_layers, SplitMix};
use super::sim::{propagate, Tensor};
use super::Check;
use crate::ensure;

pub const VALID_GENOMES: usize = 1000;
pub const RAW_GENOMES: usize = 1000;
pub const MIN_ERRORS: usize = 200;

fn bounds_variants() -> Vec<SearchBounds> {
    let mut out = Vec::new();
    for (shape, max_layers) in [
        (Shape::new(3, 24, 24), 8),
        (Shape::new(1, 17, 9), 6),
        (Shape::new(2, 12, 30), 10),
    ] {
        let mut b = SearchBounds::new(shape, 10, max_layers);
        b.channel_width = 4;
        out.push(b.clone());
        b.conv_stride = [2, 1];
        b.pool_stride = Some([1, 2]);
        out.push(b);
    }
    out
}

/// `infer_shapes` matches tensor propagation on random valid genomes.
pub fn valid_genomes_match() -> Check {
    let variants = bounds_variants();
    let cfg = MutationConfig::default();
    let mut rng = RandomSource::seed_from_u64(31);
    let mut trng = SplitMix(32);
    for i in 0..VALID_GENOMES {
        let bounds = &variants[i % variants.len()];
        let g = random_genome(bounds, &cfg, &mut rng).map_err(|e| e.to_string())?;
        let s = bounds.input_shape;
        let input = Tensor::from_fn(s.channels as usize, s.height as usize, s.width as usize, || {
            trng.signed()
        });
        let expected = propagate(&g, &input).map_err(|(l, a)| format!("genome {i}: oracle rejects layer {l} ({a})"))?;
        let trace = infer_shapes(&g).map_err(|e| format!("genome {i}: {e}"))?;
        ensure!(
            trace.0 == expected,
            "genome {i}: trace {:?} vs oracle {:?}",
            trace.0,
            expected
        );
    }
    Ok(())
}

/// On arbitrary stacks over small inputs, every `ShapeError` names the layer
/// and axis where the simulator first runs out of window positions, and
/// the simulator never fails where inference succeeds.
pub fn shape_errors_confirmed() -> Check {
    let mut rng = SplitMix(33);
    let mut errors = 0;
    for i in 0..RAW_GENOMES {
        let shape = Shape::new(rng.range(1, 3), rng.range(1, 16), rng.range(1, 16));
        let g = genome_with(shape, 3, raw_layers(&mut rng, 8, 3));
        let input = Tensor::zeros(shape.channels as usize, shape.height as usize, shape.width as usize);
        match (infer_shapes(&g), propagate(&g, &input)) {
            (Ok(t), Ok(o)) => ensure!(t.0 == o, "genome {i}: trace mismatch"),
            (Err(e), Err((layer, axis))) => {
                ensure!(
                    e.layer_index == layer && e.axis == axis,
                    "genome {i}: reported ({}, {}) but oracle fails at ({layer}, {axis})",
                    e.layer_index,
                    e.axis
                );
                errors += 1;
            }
            (Err(e), Ok(_)) => return Err(format!("genome {i}: unconfirmed error {e}")),
            (Ok(_), Err((l, a))) => return Err(format!("genome {i}: missed failure at ({l}, {a})")),
        }
    }
    ensure!(errors >= MIN_ERRORS, "only {errors} shape errors exercised");
    Ok(())
}
