use crate::genome::{Genome, LayerSpec};

use super::{EvalStatus, EvaluationRequest, EvaluationResult, Evaluator};

const KIND_MISMATCH: f64 = 1.0;
const KERNEL_WEIGHT: f64 = 0.1;
const PADDING_WEIGHT: f64 = 0.05;

/// Training-free loss: distance from the queried genome to a hidden target.
#[derive(Debug, Clone)]
pub struct SurrogateLandscape {
    target: Genome,
}

impl SurrogateLandscape {
    pub fn new(target: Genome) -> Self {
        Self { target }
    }

    pub fn target(&self) -> &Genome {
        &self.target
    }

    pub fn loss(&self, genome: &Genome) -> f64 {
        surrogate_distance(genome, &self.target)
    }
}

/// Weighted positional edit distance between two layer stacks:
/// `|len_a - len_b|` plus, for each position both stacks share, 1.0 for a
/// kind mismatch or else 0.1 for every kernel axis that differs and 0.05
/// for every padding axis that differs.
pub fn surrogate_distance(a: &Genome, b: &Genome) -> f64 {
    let len_term = a.layers.len().abs_diff(b.layers.len()) as f64;
    let positional: f64 = a.layers.iter().zip(&b.layers).map(|(x, y)| layer_penalty(x, y)).sum();
    len_term + positional
}

fn layer_penalty(x: &LayerSpec, y: &LayerSpec) -> f64 {
    if x.kind() != y.kind() {
        return KIND_MISMATCH;
    }
    match (x.window(), y.window()) {
        (Some(wx), Some(wy)) => (0..2)
            .map(|axis| {
                let k = if wx.kernel[axis] == wy.kernel[axis] {
                    0.0
                } else {
                    KERNEL_WEIGHT
                };
                let p = if wx.padding[axis] == wy.padding[axis] {
                    0.0
                } else {
                    PADDING_WEIGHT
                };
                k + p
            })
            .sum(),
        _ => 0.0,
    }
}

impl Evaluator for SurrogateLandscape {
    fn evaluate(&self, request: &EvaluationRequest) -> EvaluationResult {
        if request.genome.validate().is_err() {
            return EvaluationResult::failed(request.request_id, EvalStatus::Invalid);
        }
        EvaluationResult::ok(request.request_id, self.loss(&request.genome), request.lr_midpoint())
    }
}
