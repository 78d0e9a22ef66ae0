use chimera_core::genome::{random_genome, LayerSpec, SearchBounds, Shape, Window};
use chimera_core::mutation::MutationConfig;
use chimera_core::repair::{is_congruent, repair, RepairFailed};
use chimera_core::RandomSource;

use super::oracle::{congruence_violations, genome_with, merged_pair, raw_layers, SplitMix};
use super::sim::{self, Tensor};
use super::Check;
use crate::ensure;

pub const GENOMES: usize = 10_000;
pub const TENSORS: usize = 100;

/// Repair on arbitrary stacks: successful results are congruent (by an
/// independent pairwise check), shape-valid and fixed points of repair.
pub fn idempotent_and_congruent() -> Check {
    let mut rng = SplitMix(21);
    let mut repaired = 0;
    for i in 0..GENOMES {
        let g = genome_with(Shape::new(3, 32, 32), 8, raw_layers(&mut rng, 14, 2));
        match repair(&g) {
            Ok(r) => {
                repaired += 1;
                let v = congruence_violations(&r.layers);
                ensure!(v.is_empty(), "genome {i}: {v:?} after repair");
                ensure!(is_congruent(&r), "genome {i}: is_congruent disagrees with oracle");
                ensure!(r.validate().is_ok(), "genome {i}: repaired genome is not valid");
                let again = repair(&r).map_err(|e| format!("genome {i}: second repair failed: {e}"))?;
                ensure!(again == r, "genome {i}: repair is not idempotent");
            }
            Err(RepairFailed::Shape(_)) => {}
            Err(e) => return Err(format!("genome {i}: unexpected repair failure {e}")),
        }
    }
    ensure!(
        repaired >= GENOMES / 4,
        "only {repaired} of {GENOMES} stacks were repairable"
    );

    let bounds = SearchBounds::new(Shape::new(3, 32, 32), 10, 12);
    let cfg = MutationConfig::default();
    let mut crng = RandomSource::seed_from_u64(22);
    for i in 0..GENOMES {
        let g = random_genome(&bounds, &cfg, &mut crng).map_err(|e| e.to_string())?;
        ensure!(
            congruence_violations(&g.layers).is_empty(),
            "random genome {i} not congruent"
        );
        ensure!(repair(&g).as_ref() == Ok(&g), "random genome {i} changed by repair");
    }
    Ok(())
}

fn random_tensor(rng: &mut SplitMix, min_h: u32, min_w: u32) -> Tensor {
    let c = rng.range(1, 4) as usize;
    let h = rng.range(min_h, min_h + 12) as usize;
    let w = rng.range(min_w, min_w + 12) as usize;
    Tensor::from_fn(c, h, w, || rng.signed())
}

fn run(layers: &[LayerSpec], t: &Tensor) -> Tensor {
    layers
        .iter()
        .fold(t.clone(), |acc, l| sim::apply(l, &acc, 4).expect("windows fit"))
}

/// `[ReLU, MaxPool]` and its repaired form `[MaxPool, ReLU]` agree exactly.
pub fn relu_pool_swap_equivalent() -> Check {
    let mut rng = SplitMix(23);
    for i in 0..TENSORS {
        let mut k = [0; 2];
        let mut s = [0; 2];
        let mut p = [0; 2];
        for ax in 0..2 {
            k[ax] = rng.range(1, 7);
            s[ax] = rng.range(1, 3);
            p[ax] = rng.range(0, k[ax] - 1);
        }
        let pool = LayerSpec::max_pool(k, s, p);
        let t = random_tensor(&mut rng, k[0], k[1]);
        let original = vec![LayerSpec::relu(), pool];
        let g = genome_with(t.shape(), 4, original.clone());
        let r = repair(&g).map_err(|e| e.to_string())?;
        ensure!(
            r.layers == vec![pool, LayerSpec::relu()],
            "case {i}: repair produced {:?}",
            r.layers
        );
        let (a, b) = (run(&original, &t), run(&r.layers, &t));
        ensure!(a == b, "case {i}: swapped stack differs on tensor {:?}", t.shape());
    }
    Ok(())
}

/// Two non-overlapping unpadded max pools and their merged replacement
/// produce identical tensors.
pub fn merged_max_pool_equivalent() -> Check {
    const PAIRS: [(u32, u32); 8] = [(1, 1), (1, 4), (2, 2), (2, 3), (3, 2), (1, 7), (7, 1), (3, 1)];
    let mut rng = SplitMix(24);
    for i in 0..TENSORS {
        let mut k1 = [0; 2];
        let mut k2 = [0; 2];
        for ax in 0..2 {
            let (a, b) = PAIRS[rng.below(PAIRS.len() as u64) as usize];
            k1[ax] = a;
            k2[ax] = b;
        }
        let first = LayerSpec::MaxPool(Window::new(k1, k1, [0, 0]));
        let second = LayerSpec::MaxPool(Window::new(k2, k2, [0, 0]));
        let merged = merged_pair(&first, &second).ok_or(format!("case {i}: pair {k1:?}/{k2:?} did not merge"))?;
        let t = random_tensor(&mut rng, k1[0] * k2[0], k1[1] * k2[1]);
        let g = genome_with(t.shape(), 4, vec![first, second]);
        let r = repair(&g).map_err(|e| e.to_string())?;
        ensure!(r.layers == vec![merged], "case {i}: repair produced {:?}", r.layers);
        let (a, b) = (run(&[first, second], &t), run(&[merged], &t));
        ensure!(
            a == b,
            "case {i}: merged pool differs ({k1:?} then {k2:?} on {:?})",
            t.shape()
        );
    }
    Ok(())
}
