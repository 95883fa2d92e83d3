//! Seeded synthetic experiences with a controllable appearance shift.
//!
//! Every experience traverses the same places (one per frame). Activations
//! and embeddings of an experience at shift level `s` get a gain of
//! `1 + GAIN_PER_SHIFT·s` and an additive bias proportional to `s`, so
//! both grow monotonically with `s`. Embedding noise also grows with `s`,
//! which makes localisation against strongly shifted experiences worse.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::feature_store::{
    FeatureDims, FeatureSet, Frame, GpsCoord, GroundTruthPose, Manifest, EARTH_RADIUS_M,
};

const GAIN_PER_SHIFT: f64 = 0.3;
const BIAS_PER_SHIFT: f64 = 0.6;
const BASE_EMBEDDING_NOISE: f64 = 0.25;
const NOISE_PER_SHIFT: f64 = 0.5;
const PIXEL_BASE: f64 = 110.0;
const PIXEL_PER_SHIFT: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticPoses {
    /// Pose = frame index, one place per frame.
    FrameIndex,
    /// Places spaced `step_m` metres apart heading north from `origin`.
    Gps { origin: GpsCoord, step_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub images: usize,
    pub neurons: usize,
    pub samples_per_image: usize,
    pub embedding_dim: usize,
    pub frame_interval_s: f64,
    pub poses: SyntheticPoses,
    pub backbone_id: &'static str,
}

impl SyntheticConfig {
    pub fn small() -> Self {
        Self {
            images: 40,
            neurons: 16,
            samples_per_image: 8,
            embedding_dim: 8,
            frame_interval_s: 0.5,
            poses: SyntheticPoses::FrameIndex,
            backbone_id: "synthetic",
        }
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self::small()
    }
}

/// Shared places and per-neuron statistics that all experiences draw from.
#[derive(Debug, Clone)]
pub struct ShiftScene {
    cfg: SyntheticConfig,
    neuron_mean: Vec<f64>,
    neuron_scale: Vec<f64>,
    /// Place-dependent offset of each neuron, images × neurons.
    place_modulation: Vec<f64>,
    /// Place prototypes, images × embedding_dim.
    prototypes: Vec<f64>,
    embedding_bias: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl ShiftScene {
    pub fn new(cfg: &SyntheticConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.neurons;
        let neuron_mean = (0..c).map(|_| normal(&mut rng)).collect();
        let neuron_scale = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
        let place_modulation = (0..cfg.images * c).map(|_| 0.3 * normal(&mut rng)).collect();
        let prototypes = (0..cfg.images * cfg.embedding_dim)
            .map(|_| normal(&mut rng))
            .collect();
        let embedding_bias = (0..cfg.embedding_dim).map(|_| normal(&mut rng).abs()).collect();
        Self {
            cfg: *cfg,
            neuron_mean,
            neuron_scale,
            place_modulation,
            prototypes,
            embedding_bias,
        }
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.cfg
    }

    /// One traversal of the scene at appearance shift `shift ≥ 0`.
    pub fn experience(&self, id: &str, shift: f64, seed: u64) -> FeatureSet {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, c, s, d) = (cfg.images, cfg.neurons, cfg.samples_per_image, cfg.embedding_dim);
        let gain = 1.0 + GAIN_PER_SHIFT * shift;
        let noise = BASE_EMBEDDING_NOISE + NOISE_PER_SHIFT * shift;

        let mut activations = Vec::with_capacity(n * c * s);
        let mut embeddings = Vec::with_capacity(n * d);
        let mut pixel_means = Vec::with_capacity(n);
        for i in 0..n {
            for k in 0..c {
                let centre = self.neuron_mean[k] + self.place_modulation[i * c + k];
                let bias = BIAS_PER_SHIFT * shift * self.neuron_scale[k];
                for _ in 0..s {
                    let a = gain * (centre + self.neuron_scale[k] * normal(&mut rng)) + bias;
                    activations.push(a as f32);
                }
            }
            for j in 0..d {
                let e = gain * (self.prototypes[i * d + j] + noise * normal(&mut rng))
                    + 0.5 * shift * self.embedding_bias[j];
                embeddings.push(e as f32);
            }
            let px = PIXEL_BASE + PIXEL_PER_SHIFT * shift + 3.0 * normal(&mut rng);
            pixel_means.push(px.clamp(0.0, 255.0) as f32);
        }

        let frames = (0..n)
            .map(|i| Frame {
                frame_id: format!("{id}-{i:05}"),
                timestamp_s: i as f64 * cfg.frame_interval_s,
                pose: match cfg.poses {
                    SyntheticPoses::FrameIndex => GroundTruthPose::FrameIndex { index: i as u64 },
                    SyntheticPoses::Gps { origin, step_m } => GroundTruthPose::Gps {
                        lat_deg: origin.lat_deg
                            + (i as f64 * step_m / EARTH_RADIUS_M).to_degrees(),
                        lon_deg: origin.lon_deg,
                    },
                },
            })
            .collect();
        FeatureSet::new(
            Manifest {
                experience_id: id.to_string(),
                backbone_id: cfg.backbone_id.to_string(),
                layer_id: "last".to_string(),
                frames,
            },
            FeatureDims {
                images: n,
                neurons: c,
                samples_per_image: s,
                embedding_dim: d,
            },
            pixel_means,
            embeddings,
            activations,
        )
        .expect("synthetic feature set is valid by construction")
    }
}
