//! Deterministic synthetic backend so the whole pipeline runs without a model.
//!
//! Noise predictions ignore the latent and timestep (which keeps inversion
//! exactly reversible) but depend on the conditioning, so sampling under an
//! edit prompt lands somewhere else than the source. During conditional
//! sampling passes the backend also emits:
//!
//! - spatial features per configured layer: unit rows of smooth cosines of
//!   the token position plus an appearance term, shared by every token,
//!   that varies smoothly with `frame · drift_rate`;
//! - cross-attention Q/K per attention layer and head, where tokens inside a
//!   moving disk attend to the object word and all others to word 0.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{
    BoxError, Conditioning, DenoiserBackend, GridShape, LatentGrid, NoisePrediction, Observations,
    Pass, Phase, StepContext,
};
use crate::mask::AttentionRecord;
use crate::memory::FeatureTokenMap;

use super::LatentVideo;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyFeatureLayer {
    pub id: String,
    /// Tokens form a `side × side` grid.
    pub side: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyAttentionLayer {
    pub id: String,
    pub side: usize,
    pub heads: usize,
    pub d_k: usize,
}

/// Disk of attention on the object word, moving linearly with the frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hotspot {
    /// Centre `(y, x)` on frame 0, in attention-grid cells.
    pub center: (f64, f64),
    /// Centre displacement per frame.
    pub velocity: (f64, f64),
    pub radius: f64,
}

impl Hotspot {
    pub fn center_at(&self, frame: usize) -> (f64, f64) {
        (
            self.center.0 + self.velocity.0 * frame as f64,
            self.center.1 + self.velocity.1 * frame as f64,
        )
    }

    pub fn contains(&self, frame: usize, y: usize, x: usize) -> bool {
        let (cy, cx) = self.center_at(frame);
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        dy * dy + dx * dx <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub seed: u64,
    pub latent: GridShape,
    pub drift_rate: f64,
    pub feature_layers: Vec<ToyFeatureLayer>,
    pub attention_layers: Vec<ToyAttentionLayer>,
    pub n_words: usize,
    /// Word index the hotspot tokens attend to.
    pub object_word: usize,
    pub hotspot: Hotspot,
    /// Scale of the conditioning-dependent part of ε.
    pub edit_strength: f32,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            seed: 0,
            latent: GridShape::new(4, 32, 32),
            drift_rate: 0.15,
            feature_layers: vec![
                ToyFeatureLayer {
                    id: "up1.attn1".into(),
                    side: 8,
                    dim: 32,
                },
                ToyFeatureLayer {
                    id: "up2.attn1".into(),
                    side: 8,
                    dim: 16,
                },
            ],
            attention_layers: vec![ToyAttentionLayer {
                id: "up1.attn2".into(),
                side: 16,
                heads: 2,
                d_k: 8,
            }],
            n_words: 4,
            object_word: 1,
            hotspot: Hotspot {
                center: (6.0, 5.0),
                velocity: (0.25, 0.5),
                radius: 3.0,
            },
            edit_strength: 1.0,
        }
    }
}

const EMBED_LEN: usize = 8;
/// Weight of the frame-dependent appearance term in each feature row.
const APPEARANCE_WEIGHT: f64 = 0.2;
/// Logit given to the attended word, before the 1/√d_k scaling.
const ATTENTION_LOGIT: f64 = 8.0;

#[derive(Debug, Clone)]
struct LayerWaves {
    // per output dimension: (x frequency, y frequency, phase, temporal frequency, temporal phase)
    waves: Vec<(f64, f64, f64, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct ToyFeatureBackend {
    spec: ToySpec,
    base_noise: LatentGrid,
    edit_pattern: LatentGrid,
    layers: Vec<LayerWaves>,
    feedback_calls: usize,
}

/// Default toy backend with a single feature layer of the given
/// `(grid side, dim)` and drift rate.
pub fn toy_feature_backend(seed: u64, feature_shape: (usize, usize), drift_rate: f64) -> ToyFeatureBackend {
    let spec = ToySpec {
        seed,
        drift_rate,
        feature_layers: vec![ToyFeatureLayer {
            id: "up1.attn1".into(),
            side: feature_shape.0,
            dim: feature_shape.1,
        }],
        ..ToySpec::default()
    };
    ToyFeatureBackend::new(spec)
}

fn normal_grid(rng: &mut ChaCha8Rng, shape: GridShape) -> LatentGrid {
    let values = (0..shape.len())
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    LatentGrid::new(shape, values).expect("finite samples")
}

impl ToyFeatureBackend {
    pub fn new(spec: ToySpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let base_noise = normal_grid(&mut rng, spec.latent);
        let edit_pattern = normal_grid(&mut rng, spec.latent);
        let layers = spec
            .feature_layers
            .iter()
            .map(|l| LayerWaves {
                waves: (0..l.dim)
                    .map(|_| {
                        (
                            rng.random_range(-2.0..2.0),
                            rng.random_range(-2.0..2.0),
                            rng.random_range(0.0..TAU),
                            rng.random_range(0.5..1.5),
                            rng.random_range(0.0..TAU),
                        )
                    })
                    .collect(),
            })
            .collect();
        Self {
            spec,
            base_noise,
            edit_pattern,
            layers,
            feedback_calls: 0,
        }
    }

    pub fn spec(&self) -> &ToySpec {
        &self.spec
    }

    /// Embedding used for the source prompt during inversion.
    pub fn source_conditioning(&self) -> Conditioning {
        Conditioning(vec![0.0; EMBED_LEN])
    }

    /// Embedding of the edit prompt.
    pub fn edit_conditioning(&self) -> Conditioning {
        Conditioning(vec![0.02; EMBED_LEN])
    }

    pub fn unconditional(&self) -> Conditioning {
        Conditioning(vec![0.0; EMBED_LEN])
    }

    /// Number of times propagated features were fed back.
    pub fn feedback_calls(&self) -> usize {
        self.feedback_calls
    }

    /// Spatial features of `layer` for `frame`, as emitted during sampling.
    pub fn features(&self, layer: usize, frame: usize) -> FeatureTokenMap {
        let l = &self.spec.feature_layers[layer];
        let waves = &self.layers[layer].waves;
        let t = frame as f64 * self.spec.drift_rate;
        let mut tokens = Vec::with_capacity(l.side * l.side * l.dim);
        for y in 0..l.side {
            for x in 0..l.side {
                let row: Vec<f64> = waves
                    .iter()
                    .map(|&(fx, fy, phase, ft, psi)| {
                        (fx * x as f64 + fy * y as f64 + phase).cos() + APPEARANCE_WEIGHT * (ft * t + psi).cos()
                    })
                    .collect();
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                tokens.extend(row.iter().map(|v| (v / norm) as f32));
            }
        }
        FeatureTokenMap::new(frame, l.id.clone(), l.side * l.side, l.dim, tokens)
            .expect("toy features are finite")
    }

    /// Cross-attention record for one layer/head of `frame`.
    pub fn attention(&self, layer: usize, head: usize, frame: usize, step: usize) -> AttentionRecord {
        let l = &self.spec.attention_layers[layer];
        let n_words = self.spec.n_words;
        let d_k = l.d_k;
        assert!(n_words <= d_k, "toy attention needs d_k >= n_words");
        let mut q = vec![0.0f32; l.side * l.side * d_k];
        for y in 0..l.side {
            for x in 0..l.side {
                let word = if self.spec.hotspot.contains(frame, y, x) {
                    self.spec.object_word
                } else {
                    0
                };
                q[(y * l.side + x) * d_k + word] = 1.0;
            }
        }
        let key_scale = (ATTENTION_LOGIT * (d_k as f64).sqrt()) as f32;
        let mut k = vec![0.0f32; n_words * d_k];
        for w in 0..n_words {
            k[w * d_k + w] = key_scale;
        }
        AttentionRecord::new(frame, step, l.id.clone(), head, (l.side, l.side), d_k, q, k)
            .expect("toy attention is well formed")
    }

    fn observations(&self, ctx: &StepContext) -> Observations {
        if ctx.phase != Phase::Sampling || ctx.pass != Pass::Conditional {
            return Observations::default();
        }
        let features = (0..self.spec.feature_layers.len())
            .map(|l| self.features(l, ctx.frame_index))
            .collect();
        let attention = self
            .spec
            .attention_layers
            .iter()
            .enumerate()
            .flat_map(|(li, l)| {
                (0..l.heads).map(move |h| self.attention(li, h, ctx.frame_index, ctx.step_index))
            })
            .collect();
        Observations {
            features,
            attention,
        }
    }

    /// Synthetic source video: smooth travelling waves in [-1, 1].
    pub fn video(&self, frames: usize) -> LatentVideo {
        let s = self.spec.latent;
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0x5eed_f00d);
        let phases: Vec<f64> = (0..s.channels).map(|_| rng.random_range(0.0..TAU)).collect();
        let grids = (0..frames)
            .map(|f| {
                let mut values = Vec::with_capacity(s.len());
                for (c, phase) in phases.iter().enumerate() {
                    for y in 0..s.height {
                        for x in 0..s.width {
                            let u = 0.35 * x as f64 + 0.2 * y as f64 + 0.3 * f as f64 * self.spec.drift_rate;
                            let v = 0.15 * y as f64 - 0.1 * x as f64 + 0.2 * c as f64;
                            values.push((0.7 * (u + phase).sin() + 0.3 * v.cos()) as f32);
                        }
                    }
                }
                LatentGrid::new(s, values).expect("finite")
            })
            .collect();
        LatentVideo::new(grids).expect("non-empty, equal shapes")
    }
}

impl DenoiserBackend for ToyFeatureBackend {
    fn predict_noise(
        &mut self,
        latent: &LatentGrid,
        conditioning: &Conditioning,
        ctx: &StepContext,
    ) -> Result<NoisePrediction, BoxError> {
        latent.ensure_same_shape(&self.base_noise)?;
        let c = conditioning.as_slice();
        let gain = if c.is_empty() {
            0.0
        } else {
            c.iter().sum::<f32>() / c.len() as f32
        } * self.spec.edit_strength;
        let values = self
            .base_noise
            .values()
            .iter()
            .zip(self.edit_pattern.values())
            .map(|(b, p)| b + gain * p)
            .collect();
        Ok(NoisePrediction {
            eps: LatentGrid::new(latent.shape(), values)?,
            observations: self.observations(ctx),
        })
    }

    fn accept_features(&mut self, _ctx: &StepContext, _features: &[FeatureTokenMap]) {
        self.feedback_calls += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{attention_prob, extract_mask, ProbMode, WordSelection};

    #[test]
    fn zero_drift_freezes_features() {
        let b = toy_feature_backend(3, (4, 8), 0.0);
        assert_eq!(b.features(0, 0).tokens(), b.features(0, 7).tokens());
    }

    #[test]
    fn features_are_unit_rows() {
        let b = toy_feature_backend(3, (4, 8), 0.2);
        let f = b.features(0, 5);
        for i in 0..f.n_tokens() {
            assert!((f.row_norm(i) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_cell_hotspot() {
        let spec = ToySpec {
            attention_layers: vec![ToyAttentionLayer { id: "a".into(), side: 8, heads: 1, d_k: 4 }],
            hotspot: Hotspot { center: (2.0, 3.0), velocity: (0.0, 0.0), radius: 0.0 },
            ..ToySpec::default()
        };
        let b = ToyFeatureBackend::new(spec);
        let rec = b.attention(0, 0, 0, 0);
        let p = attention_prob(&rec, ProbMode::Softmax);
        let m = extract_mask(&p, &WordSelection::new(4, &[1]).unwrap(), 0.3, (8, 8)).unwrap();
        assert_eq!(m.count(), 1);
        assert!(m.get(2, 3));
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = toy_feature_backend(11, (4, 8), 0.1);
        let mut b = toy_feature_backend(11, (4, 8), 0.1);
        let z = LatentGrid::zeros(a.spec().latent);
        let ctx = StepContext { frame_index: 2, phase: Phase::Sampling, step_index: 4, timestep: 3, pass: Pass::Conditional };
        let pa = a.predict_noise(&z, &a.edit_conditioning(), &ctx).unwrap();
        let pb = b.predict_noise(&z, &b.edit_conditioning(), &ctx).unwrap();
        assert_eq!(pa.eps, pb.eps);
        assert_eq!(pa.observations.features, pb.observations.features);
        assert_eq!(pa.observations.attention, pb.observations.attention);
    }

    #[test]
    fn observations_only_on_conditional_sampling() {
        let mut b = toy_feature_backend(1, (4, 8), 0.1);
        let z = LatentGrid::zeros(b.spec().latent);
        let mut ctx = StepContext { frame_index: 0, phase: Phase::Inversion, step_index: 0, timestep: 0, pass: Pass::Conditional };
        assert!(b.predict_noise(&z, &b.source_conditioning(), &ctx).unwrap().observations.is_empty());
        ctx.phase = Phase::Sampling;
        ctx.pass = Pass::Unconditional;
        assert!(b.predict_noise(&z, &b.unconditional(), &ctx).unwrap().observations.is_empty());
    }
}
