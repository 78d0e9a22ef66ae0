//! Reference generators and oracles that share no code with the crate.

use chimera_core::genome::{Genome, LayerKind, LayerSpec, LineageId, SearchBounds, Shape, KERNEL_LIMIT};
use chimera_core::repair::merged_window;

/// SplitMix64: a generator independent of the crate's ChaCha source.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    pub fn range(&mut self, lo: u32, hi_inclusive: u32) -> u32 {
        lo + self.below(u64::from(hi_inclusive - lo + 1)) as u32
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn signed(&mut self) -> f64 {
        2.0 * self.unit() - 1.0
    }
}

/// Monte-Carlo mean and variance of `max(1, ceil(x))`, `x ~ N(1, cbrt(1 + c))`.
pub fn step_count_moments(exhaustion: u32, draws: u64, seed: u64) -> (f64, f64) {
    let mut rng = SplitMix(seed);
    let sigma = (1.0 + f64::from(exhaustion)).powf(1.0 / 3.0);
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        let x = 1.0 + sigma * rng.normal();
        let k = x.ceil().max(1.0);
        sum += k;
        sq += k * k;
    }
    let mean = sum / draws as f64;
    (mean, sq / draws as f64 - mean * mean)
}

/// `(exhaustion, mean, variance)` from `step_count_moments(c, 4_000_000, 0x5eed)`.
pub const STEP_COUNT_ORACLE: [(u32, f64, f64); 5] = [
    (0, 1.682236, 0.633067),
    (1, 1.778737, 0.882628),
    (7, 2.063787, 1.847625),
    (10, 2.151426, 2.214479),
    (26, 2.456889, 3.749247),
];

/// Human-readable congruence violations, checked pair by pair.
pub fn congruence_violations(layers: &[LayerSpec]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, pair) in layers.windows(2).enumerate() {
        let (a, b) = (pair[0].kind(), pair[1].kind());
        if a == LayerKind::Conv && b == LayerKind::Conv {
            out.push(format!("conv at {i} directly followed by conv"));
        }
        if a == LayerKind::Activation && b.is_pool() {
            out.push(format!("activation at {i} directly followed by pooling"));
        }
        if a.is_pool() && a == b {
            // only pairs whose merged kernel stays within the limit must merge
            let (wa, wb) = (pair[0].window().unwrap(), pair[1].window().unwrap());
            let fits = (0..2).all(|ax| wa.kernel[ax] + (wb.kernel[ax] - 1) * wa.stride[ax] <= KERNEL_LIMIT);
            if fits {
                out.push(format!("mergeable {} pair at {i}", a.as_str()));
            }
        }
    }
    out
}

/// Arbitrary layer stack: any kinds in any order, random strides. Used for
/// properties that must hold on unrepaired input.
pub fn raw_layers(rng: &mut SplitMix, max_len: u32, max_stride: u32) -> Vec<LayerSpec> {
    let n = rng.range(1, max_len);
    (0..n)
        .map(|_| {
            let mut k = [0; 2];
            let mut s = [0; 2];
            let mut p = [0; 2];
            for ax in 0..2 {
                k[ax] = rng.range(1, KERNEL_LIMIT);
                s[ax] = rng.range(1, max_stride);
                p[ax] = rng.range(0, k[ax] - 1);
            }
            match rng.below(4) {
                0 => LayerSpec::conv(k, s, p, rng.next_u64() as u32),
                1 => LayerSpec::max_pool(k, s, p),
                2 => LayerSpec::avg_pool(k, s, p),
                _ => LayerSpec::relu(),
            }
        })
        .collect()
}

pub fn genome_with(shape: Shape, channel_width: u32, layers: Vec<LayerSpec>) -> Genome {
    let mut bounds = SearchBounds::new(shape, 10, 16);
    bounds.channel_width = channel_width;
    Genome::new(&bounds, layers, LineageId::root("oracle"))
}

/// Uses the crate's merge rule only to build the expected single layer;
/// equivalence is then judged by the simulator.
pub fn merged_pair(a: &LayerSpec, b: &LayerSpec) -> Option<LayerSpec> {
    merged_window(a, b).map(LayerSpec::MaxPool)
}
