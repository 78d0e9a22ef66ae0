//! Congruence repair.
//!
//! Three rewrite rules, applied in this order on every pass until nothing
//! changes:
//!
//! 1. a ReLU is inserted between two adjacent convolutions;
//! 2. adjacent pooling layers of the same kind are merged into one whose
//!    receptive field covers both (`k = k1 + (k2 - 1) * s1`, `s = s1 * s2`,
//!    `p = p1`), unless the merged kernel would exceed [`KERNEL_LIMIT`];
//! 3. an activation directly before a pooling layer swaps places with it.

use crate::genome::{infer_shapes, Genome, LayerKind, LayerSpec, ShapeError, Window, KERNEL_LIMIT};

pub const MAX_PASSES: usize = 32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RepairFailed {
    #[error("repair did not reach a fixpoint in {MAX_PASSES} passes")]
    NoFixpoint,
    #[error("repaired genome is not shape-valid: {0}")]
    Shape(#[from] ShapeError),
    #[error("genome has no layers")]
    Empty,
}

/// Returns the congruent form of `genome`, or an error if it cannot be made
/// congruent and shape-valid. The input is never modified.
pub fn repair(genome: &Genome) -> Result<Genome, RepairFailed> {
    if genome.layers.is_empty() {
        return Err(RepairFailed::Empty);
    }
    let mut layers = genome.layers.clone();
    for _ in 0..MAX_PASSES {
        let mut changed = insert_activations(&mut layers);
        changed |= merge_pools(&mut layers);
        changed |= swap_activation_pool(&mut layers);
        if !changed {
            let repaired = Genome {
                layers,
                ..genome.clone()
            };
            infer_shapes(&repaired)?;
            return Ok(repaired);
        }
    }
    Err(RepairFailed::NoFixpoint)
}

pub fn is_congruent(genome: &Genome) -> bool {
    genome.layers.windows(2).all(|pair| !incongruent(&pair[0], &pair[1]))
}

/// Number of adjacent pairs violating a congruence rule.
pub fn incongruent_pairs(genome: &Genome) -> usize {
    genome
        .layers
        .windows(2)
        .filter(|pair| incongruent(&pair[0], &pair[1]))
        .count()
}

fn incongruent(a: &LayerSpec, b: &LayerSpec) -> bool {
    match (a.kind(), b.kind()) {
        (LayerKind::Conv, LayerKind::Conv) => true,
        (LayerKind::Activation, k) if k.is_pool() => true,
        (ka, kb) if ka.is_pool() && ka == kb => merged_window(a, b).is_some(),
        _ => false,
    }
}

/// Composition of two same-kind pooling windows, or `None` if the merged
/// kernel would leave the allowed range.
pub fn merged_window(first: &LayerSpec, second: &LayerSpec) -> Option<Window> {
    let (a, b) = (first.window()?, second.window()?);
    let mut out = *a;
    for axis in 0..2 {
        let k = a.kernel[axis] + (b.kernel[axis] - 1) * a.stride[axis];
        if k > KERNEL_LIMIT {
            return None;
        }
        out.kernel[axis] = k;
        out.stride[axis] = a.stride[axis] * b.stride[axis];
    }
    Some(out)
}

fn insert_activations(layers: &mut Vec<LayerSpec>) -> bool {
    let needs = layers
        .windows(2)
        .any(|p| p[0].kind() == LayerKind::Conv && p[1].kind() == LayerKind::Conv);
    if !needs {
        return false;
    }
    let mut out = Vec::with_capacity(layers.len() * 2);
    for layer in layers.drain(..) {
        if layer.kind() == LayerKind::Conv && out.last().map(LayerSpec::kind) == Some(LayerKind::Conv) {
            out.push(LayerSpec::relu());
        }
        out.push(layer);
    }
    *layers = out;
    true
}

fn merge_pools(layers: &mut Vec<LayerSpec>) -> bool {
    let mut changed = false;
    let mut i = 0;
    while i + 1 < layers.len() {
        let (a, b) = (layers[i], layers[i + 1]);
        if a.kind().is_pool() && a.kind() == b.kind() {
            if let Some(w) = merged_window(&a, &b) {
                layers[i] = match a {
                    LayerSpec::MaxPool(_) => LayerSpec::MaxPool(w),
                    _ => LayerSpec::AvgPool(w),
                };
                layers.remove(i + 1);
                changed = true;
                continue;
            }
        }
        i += 1;
    }
    changed
}

fn swap_activation_pool(layers: &mut [LayerSpec]) -> bool {
    let mut changed = false;
    for i in 0..layers.len().saturating_sub(1) {
        if layers[i].kind() == LayerKind::Activation && layers[i + 1].kind().is_pool() {
            layers.swap(i, i + 1);
            changed = true;
        }
    }
    changed
}
