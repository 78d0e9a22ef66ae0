//! Mutation operators and the samplers behind them.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::genome::{Census, Genome, LayerKind, LayerSpec, SearchBounds, Window, KERNEL_LIMIT};
use crate::repair;
use crate::rng::RandomSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MutationConfig {
    pub p_add: f64,
    pub p_remove: f64,
    pub p_modify: f64,
    pub p_reseed: f64,
    pub kernel_min: u32,
    pub kernel_max: u32,
    pub max_retries: u32,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            p_add: 0.30,
            p_remove: 0.30,
            p_modify: 0.30,
            p_reseed: 0.10,
            kernel_min: 1,
            kernel_max: KERNEL_LIMIT,
            max_retries: 16,
        }
    }
}

impl MutationConfig {
    /// Checks the invariants, naming the offending field on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let probs = [
            ("mutation.p_add", self.p_add),
            ("mutation.p_remove", self.p_remove),
            ("mutation.p_modify", self.p_modify),
            ("mutation.p_reseed", self.p_reseed),
        ];
        for (field, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err((field, format!("probability {p} outside [0, 1]")));
            }
        }
        let sum: f64 = probs.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err((
                "mutation.p_add+p_remove+p_modify+p_reseed",
                format!("probabilities sum to {sum}, expected 1"),
            ));
        }
        if self.kernel_min < 1 || self.kernel_min > self.kernel_max {
            return Err((
                "mutation.kernel_min",
                format!(
                    "kernel range [{}, {}] is empty or below 1",
                    self.kernel_min, self.kernel_max
                ),
            ));
        }
        if self.kernel_max > KERNEL_LIMIT {
            return Err((
                "mutation.kernel_max",
                format!("{} exceeds the hard kernel limit {KERNEL_LIMIT}", self.kernel_max),
            ));
        }
        if self.max_retries == 0 {
            return Err(("mutation.max_retries", "must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    AddLayer,
    RemoveLayer,
    ModifyLayer,
    ReseedWeights,
}

pub fn sample_kind(cfg: &MutationConfig, rng: &mut RandomSource) -> MutationKind {
    let u: f64 = rng.random();
    if u < cfg.p_add {
        MutationKind::AddLayer
    } else if u < cfg.p_add + cfg.p_remove {
        MutationKind::RemoveLayer
    } else if u < cfg.p_add + cfg.p_remove + cfg.p_modify {
        MutationKind::ModifyLayer
    } else if cfg.p_reseed > 0.0 {
        MutationKind::ReseedWeights
    } else {
        // rounding slack when p_reseed = 0
        MutationKind::ModifyLayer
    }
}

/// Number of mutation steps for a candidate with exhaustion counter `c_e`:
/// `max(1, ceil(x))` with `x ~ N(1, cbrt(1 + c_e))`.
pub fn step_count(exhaustion: u32, rng: &mut RandomSource) -> u32 {
    let x = Normal::new(1.0, step_stddev(exhaustion))
        .expect("stddev is positive and finite")
        .sample(rng);
    x.ceil().max(1.0) as u32
}

pub fn step_stddev(exhaustion: u32) -> f64 {
    (1.0 + f64::from(exhaustion)).cbrt()
}

/// Probability that a new layer is a convolution given the current pool and
/// conv counts. Steers models toward five convolutions per pooling layer.
pub fn conv_probability(n_pool: usize, n_conv: usize) -> f64 {
    if n_pool == 0 && n_conv == 0 {
        return 5.0 / 6.0;
    }
    let num = 5.0 * n_pool as f64;
    num / (num + n_conv as f64)
}

fn sample_geometry(cfg: &MutationConfig, rng: &mut RandomSource) -> ([u32; 2], [u32; 2]) {
    let mut kernel = [0; 2];
    let mut padding = [0; 2];
    for axis in 0..2 {
        kernel[axis] = rng.random_range(cfg.kernel_min..=cfg.kernel_max);
        padding[axis] = rng.random_range(0..kernel[axis]);
    }
    (kernel, padding)
}

fn pool_layer(max: bool, kernel: [u32; 2], padding: [u32; 2], bounds: &SearchBounds) -> LayerSpec {
    let w = Window::new(kernel, bounds.pool_stride.unwrap_or(kernel), padding);
    if max {
        LayerSpec::MaxPool(w)
    } else {
        LayerSpec::AvgPool(w)
    }
}

/// Draws a fresh convolution or pooling layer.
pub fn sample_layer(census: Census, cfg: &MutationConfig, bounds: &SearchBounds, rng: &mut RandomSource) -> LayerSpec {
    let p_conv = conv_probability(census.pool, census.conv);
    let is_conv = rng.random_bool(p_conv);
    let (kernel, padding) = sample_geometry(cfg, rng);
    if is_conv {
        LayerSpec::Conv {
            window: Window::new(kernel, bounds.conv_stride, padding),
            weight_seed: rng.random(),
        }
    } else {
        pool_layer(rng.random_bool(0.5), kernel, padding, bounds)
    }
}

/// Result of [`mutate`].
#[derive(Debug, Clone)]
pub struct Mutation {
    pub genome: Genome,
    /// Operators actually applied in the accepted attempt.
    pub steps: Vec<MutationKind>,
    /// Every attempt failed repair; `genome` is a copy of the parent.
    pub fell_back: bool,
}

/// Applies one operator in place and returns the operator that actually ran
/// (reseeding falls through to modification on conv-free genomes).
pub fn apply_step(
    layers: &mut Vec<LayerSpec>,
    kind: MutationKind,
    cfg: &MutationConfig,
    bounds: &SearchBounds,
    rng: &mut RandomSource,
) -> MutationKind {
    match kind {
        MutationKind::AddLayer => {
            let structural = layers.iter().filter(|l| l.kind() != LayerKind::Activation).count();
            if structural < bounds.max_layers {
                let layer = sample_layer(crate::genome::census_of(layers), cfg, bounds, rng);
                let at = rng.random_range(0..=layers.len());
                layers.insert(at, layer);
            }
            kind
        }
        MutationKind::RemoveLayer => {
            if layers.len() > 1 {
                let at = rng.random_range(0..layers.len());
                layers.remove(at);
            }
            kind
        }
        MutationKind::ModifyLayer => {
            let targets: Vec<usize> = (0..layers.len())
                .filter(|&i| layers[i].kind() != LayerKind::Activation)
                .collect();
            if !targets.is_empty() {
                let at = targets[rng.random_range(0..targets.len())];
                let (kernel, padding) = sample_geometry(cfg, rng);
                layers[at] = match layers[at] {
                    LayerSpec::Conv { weight_seed, .. } => LayerSpec::Conv {
                        window: Window::new(kernel, bounds.conv_stride, padding),
                        weight_seed,
                    },
                    _ => pool_layer(rng.random_bool(0.5), kernel, padding, bounds),
                };
            }
            kind
        }
        MutationKind::ReseedWeights => {
            let convs: Vec<usize> = (0..layers.len())
                .filter(|&i| layers[i].kind() == LayerKind::Conv)
                .collect();
            if convs.is_empty() {
                return apply_step(layers, MutationKind::ModifyLayer, cfg, bounds, rng);
            }
            // uniform over non-empty subsets
            let chosen = loop {
                let pick: Vec<usize> = convs.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
                if !pick.is_empty() {
                    break pick;
                }
            };
            for i in chosen {
                if let LayerSpec::Conv { weight_seed, .. } = &mut layers[i] {
                    let old = *weight_seed;
                    while *weight_seed == old {
                        *weight_seed = rng.random();
                    }
                }
            }
            kind
        }
    }
}

/// Produces a mutated, repaired copy of `parent`. Never fails: after
/// `max_retries` unrepairable attempts the parent itself is returned.
pub fn mutate(
    parent: &Genome,
    exhaustion: u32,
    cfg: &MutationConfig,
    bounds: &SearchBounds,
    rng: &mut RandomSource,
) -> Mutation {
    for _ in 0..cfg.max_retries {
        let n = step_count(exhaustion, rng);
        let mut layers = parent.layers.clone();
        let steps: Vec<MutationKind> = (0..n)
            .map(|_| {
                let kind = sample_kind(cfg, rng);
                apply_step(&mut layers, kind, cfg, bounds, rng)
            })
            .collect();
        let trial = Genome {
            layers,
            lineage_id: parent.lineage_id.child(),
            ..parent.clone()
        };
        if let Ok(genome) = repair::repair(&trial) {
            return Mutation {
                genome,
                steps,
                fell_back: false,
            };
        }
    }
    log::debug!("mutation of {} fell back to parent", parent.lineage_id);
    Mutation {
        genome: Genome {
            lineage_id: parent.lineage_id.child(),
            ..parent.clone()
        },
        steps: Vec::new(),
        fell_back: true,
    }
}
