//! Variant assembly: one declarative spec builds each of the four model
//! shapes (full, without the convolution encoder, frozen backbone, without
//! the decoder) over a shared patch -> encode -> decode -> fuse -> classify
//! pipeline, so ablations differ by exactly one config field.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneCache, BackboneKind, BackboneSpec};
use crate::data::Dataset;
use crate::encoder::{
    flatten_patches, EncoderCache, EncoderConfig, PtcEncoder, DEFAULT_NEGATIVE_SLOPE,
};
use crate::error::{Error, Result};
use crate::head::{fuse, fuse_backward, Head, HeadCache, LnPosition};
use crate::lora::LoraSettings;
use crate::nn::activation::{relu, relu_backward};
use crate::nn::conv::Conv1d;
use crate::nn::init::mix_seed;
use crate::nn::param::{join, ParamSlot, VisitParams};
use crate::nn::Scalar;
use crate::patching::{num_patches, patch, PatchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Full,
    NoPtcenc,
    Frozen,
    NoLlm,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::Full,
        VariantKind::NoPtcenc,
        VariantKind::Frozen,
        VariantKind::NoLlm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantKind::Full => "full",
            VariantKind::NoPtcenc => "no_ptcenc",
            VariantKind::Frozen => "frozen",
            VariantKind::NoLlm => "no_llm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(VariantKind::Full),
            "no_ptcenc" => Ok(VariantKind::NoPtcenc),
            "frozen" => Ok(VariantKind::Frozen),
            "no_llm" => Ok(VariantKind::NoLlm),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected full|no_ptcenc|frozen|no_llm)"
            ))),
        }
    }
}

impl std::fmt::Display for VariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_str())
    }
}

/// Encoder hyperparameters as they appear in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderSettings {
    pub hidden_channels: usize,
    pub depth: usize,
    pub kernel_size: usize,
    #[serde(default = "default_negative_slope")]
    pub negative_slope: f64,
}

fn default_negative_slope() -> f64 {
    DEFAULT_NEGATIVE_SLOPE
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            hidden_channels: 64,
            depth: 2,
            kernel_size: 3,
            negative_slope: DEFAULT_NEGATIVE_SLOPE,
        }
    }
}

/// Everything needed to assemble one model, minus the dataset shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub variant: VariantKind,
    pub backbone: BackboneSpec,
    #[serde(default)]
    pub lora: Option<LoraSettings>,
    #[serde(default)]
    pub encoder: EncoderSettings,
    pub patch: PatchConfig,
    #[serde(default = "default_ln_position")]
    pub ln_position: LnPosition,
    #[serde(default = "default_true")]
    pub no_llm_relu: bool,
}

fn default_ln_position() -> LnPosition {
    LnPosition::Paper
}

fn default_true() -> bool {
    true
}

/// Shape facts a model is specialized to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetShape {
    pub dims: usize,
    pub length: usize,
    pub num_classes: usize,
}

impl DatasetShape {
    pub fn of(dataset: &Dataset) -> Self {
        Self {
            dims: dataset.dims(),
            length: dataset.length(),
            num_classes: dataset.num_classes(),
        }
    }
}

enum EncoderStage<T> {
    Ptc(PtcEncoder<T>),
    /// Width-1 convolution lifting flattened patches straight to the
    /// embedding width.
    Projection(Conv1d<T>),
}

enum EncoderStageCache<T> {
    Ptc(EncoderCache<T>),
    Projection(Array2<T>),
}

pub struct Model<T> {
    pub variant: VariantKind,
    pub patch_len: usize,
    pub stride: usize,
    pub no_llm_relu: bool,
    encoder: EncoderStage<T>,
    backbone: Option<Backbone<T>>,
    head: Head<T>,
    n_tokens: usize,
    d_model: usize,
}

pub struct ModelCache<T> {
    enc: EncoderStageCache<T>,
    h_e: Array2<T>,
    backbone: Option<(BackboneCache<T>, Array2<T>)>,
    pub head: HeadCache<T>,
}

/// Assemble a model for one dataset shape. Deterministic in `seed`.
pub fn build<T: Scalar>(spec: &VariantSpec, shape: DatasetShape, seed: u64) -> Result<Model<T>> {
    if spec.variant == VariantKind::Frozen && spec.lora.is_some() {
        return Err(Error::Config(
            "frozen variant must not carry LoRA settings".into(),
        ));
    }
    let patch_len = spec.patch.patch_len;
    let stride = spec.patch.effective_stride();
    let n_tokens = num_patches(shape.length, patch_len, stride)?;
    let d_model = spec.backbone.d_model;
    let in_channels = shape.dims * patch_len;

    let uses_backbone = spec.variant != VariantKind::NoLlm;

    let encoder = match spec.variant {
        VariantKind::NoPtcenc => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
            EncoderStage::Projection(Conv1d::new(in_channels, d_model, 1, 1, &mut rng, true))
        }
        _ => EncoderStage::Ptc(PtcEncoder::new(
            EncoderConfig {
                in_channels,
                hidden_channels: spec.encoder.hidden_channels,
                depth: spec.encoder.depth,
                kernel_size: spec.encoder.kernel_size,
                d_model,
                negative_slope: spec.encoder.negative_slope,
            },
            mix_seed(seed, 1),
        )?),
    };

    let backbone = if uses_backbone {
        let mut backbone = match spec.backbone.kind {
            BackboneKind::Tiny => Backbone::new(&spec.backbone, mix_seed(seed, 2))?,
            BackboneKind::Pretrained => {
                let path = spec.backbone.checkpoint_path.as_ref().ok_or_else(|| {
                    Error::Config("pretrained backbone needs checkpoint_path".into())
                })?;
                let loaded = Backbone::load_pretrained(path)?;
                if loaded.d_model != spec.backbone.d_model {
                    return Err(Error::Checkpoint {
                        path: path.clone(),
                        offending: vec![format!(
                            "checkpoint d_model {} does not match spec d_model {}",
                            loaded.d_model, spec.backbone.d_model
                        )],
                    });
                }
                loaded
            }
        };
        // for loaded checkpoints the metadata's position capacity governs
        if n_tokens > backbone.max_positions {
            return Err(Error::Capacity {
                got: n_tokens,
                max: backbone.max_positions,
            });
        }
        if spec.variant != VariantKind::Frozen {
            backbone.inject_lora(spec.lora.unwrap_or_default(), mix_seed(seed, 3))?;
        }
        Some(backbone)
    } else {
        None
    };

    let head = Head::new(
        n_tokens,
        d_model,
        shape.num_classes,
        spec.ln_position,
        mix_seed(seed, 4),
    );

    Ok(Model {
        variant: spec.variant,
        patch_len,
        stride,
        no_llm_relu: spec.no_llm_relu,
        encoder,
        backbone,
        head,
        n_tokens,
        d_model,
    })
}

impl<T: Scalar> Model<T> {
    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn backbone_mut(&mut self) -> Option<&mut Backbone<T>> {
        self.backbone.as_mut()
    }

    /// Class probabilities for one `(dims, length)` instance.
    pub fn forward(&self, values: &Array2<f64>) -> Result<ndarray::Array1<T>> {
        self.forward_train(values).map(|c| c.head.probs)
    }

    pub fn forward_train(&self, values: &Array2<f64>) -> Result<ModelCache<T>> {
        let patches = patch(values, self.patch_len, self.stride)?;
        let (h_e, enc_cache) = match &self.encoder {
            EncoderStage::Ptc(enc) => {
                let tokens = flatten_patches::<T>(&patches);
                if tokens.nrows() != enc.cfg.in_channels {
                    return Err(Error::Config(format!(
                        "patch features {} do not match encoder in_channels {}",
                        tokens.nrows(),
                        enc.cfg.in_channels
                    )));
                }
                let (out, cache) = enc.forward_train(&tokens);
                (out, EncoderStageCache::Ptc(cache))
            }
            EncoderStage::Projection(conv) => {
                let tokens = flatten_patches::<T>(&patches);
                let out = conv.forward(&tokens).t().as_standard_layout().into_owned();
                (out, EncoderStageCache::Projection(tokens))
            }
        };

        let (fused, backbone_cache) = match &self.backbone {
            Some(backbone) => {
                let (h_d, cache) = backbone.forward_train(&h_e)?;
                let (fused, pre) = fuse(&h_e, &h_d)?;
                (fused, Some((cache, pre)))
            }
            None => {
                let fused = if self.no_llm_relu { relu(&h_e) } else { h_e.clone() };
                (fused, None)
            }
        };

        let head = self.head.forward_train(&fused)?;
        Ok(ModelCache {
            enc: enc_cache,
            h_e,
            backbone: backbone_cache,
            head,
        })
    }

    /// Backward of the cross-entropy loss for one instance; accumulates
    /// gradients on every component.
    pub fn backward(&mut self, cache: &ModelCache<T>, label: usize) -> Result<()> {
        let d_fused = self.head.backward_cross_entropy(&cache.head, label)?;

        let d_h_e = match (&mut self.backbone, &cache.backbone) {
            (Some(backbone), Some((bb_cache, fuse_pre))) => {
                let d_pre = fuse_backward(&d_fused, fuse_pre);
                let d_from_backbone = backbone.backward(&d_pre, bb_cache);
                &d_pre + &d_from_backbone
            }
            (None, None) => {
                if self.no_llm_relu {
                    relu_backward(&d_fused, &cache.h_e)
                } else {
                    d_fused
                }
            }
            _ => unreachable!("cache always matches model shape"),
        };

        match (&mut self.encoder, &cache.enc) {
            (EncoderStage::Ptc(enc), EncoderStageCache::Ptc(c)) => {
                enc.backward(&d_h_e, c);
            }
            (EncoderStage::Projection(conv), EncoderStageCache::Projection(tokens)) => {
                conv.backward(tokens, &d_h_e.t().to_owned());
            }
            _ => unreachable!("cache always matches model shape"),
        }
        Ok(())
    }

    /// Predicted class index.
    pub fn predict(&self, values: &Array2<f64>) -> Result<usize> {
        let probs = self.forward(values)?;
        Ok(argmax(&probs))
    }
}

pub fn argmax<T: Scalar>(probs: &ndarray::Array1<T>) -> usize {
    let mut best = 0;
    for i in 1..probs.len() {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> VisitParams<T> for Model<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamSlot<'_, T>)) {
        match &mut self.encoder {
            EncoderStage::Ptc(enc) => enc.visit_params(&join(prefix, "encoder"), f),
            EncoderStage::Projection(conv) => {
                f(join(prefix, "encoder.projection.weight"), conv.weight.slot());
                f(join(prefix, "encoder.projection.bias"), conv.bias.slot());
            }
        }
        if let Some(backbone) = &mut self.backbone {
            backbone.visit_params(&join(prefix, "backbone"), f);
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init;
    use crate::nn::param::{count_trainable, trainable_names};

    fn spec(variant: VariantKind) -> VariantSpec {
        let lora = match variant {
            VariantKind::Frozen | VariantKind::NoLlm => None,
            _ => Some(LoraSettings { rank: 4, alpha: 8.0 }),
        };
        VariantSpec {
            variant,
            backbone: BackboneSpec::tiny(16, 2, 4),
            lora,
            encoder: EncoderSettings {
                hidden_channels: 8,
                depth: 1,
                kernel_size: 3,
                negative_slope: DEFAULT_NEGATIVE_SLOPE,
            },
            patch: PatchConfig::with_stride(4, 2),
            ln_position: LnPosition::Paper,
            no_llm_relu: true,
        }
    }

    fn shape() -> DatasetShape {
        DatasetShape {
            dims: 2,
            length: 16,
            num_classes: 3,
        }
    }

    fn instance(seed: u64) -> Array2<f64> {
        init::uniform((2, 16), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn every_variant_builds_and_classifies() {
        for variant in VariantKind::ALL {
            let model = build::<f64>(&spec(variant), shape(), 0).unwrap();
            let probs = model.forward(&instance(1)).unwrap();
            assert_eq!(probs.len(), 3, "{variant}");
            assert!((probs.sum() - 1.0).abs() < 1e-9, "{variant}");
        }
    }

    #[test]
    fn vowel_shaped_dataset_fits_the_default_patching() {
        // 12 channels, length 29, 9 classes with patch (16, 8) -> 3 tokens
        let shape = DatasetShape {
            dims: 12,
            length: 29,
            num_classes: 9,
        };
        let mut s = spec(VariantKind::Full);
        s.patch = PatchConfig::new(16);
        let model = build::<f32>(&s, shape, 0).unwrap();
        assert_eq!(model.n_tokens(), 3);
        let values = init::uniform((12, 29), 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let probs = model.forward(&values).unwrap();
        assert_eq!(probs.len(), 9);
    }

    #[test]
    fn whole_model_gradients_match_finite_differences() {
        // end to end through patching, encoder, adapted backbone, fuse and
        // head; the fused gradient reaches the encoder both directly and
        // through the backbone
        use crate::head::cross_entropy;
        use crate::nn::gradcheck::check_param_gradients;
        use crate::nn::param::zero_grads;

        let mut model = build::<f64>(&spec(VariantKind::Full), shape(), 6).unwrap();
        // non-zero adapter down-projections so the adapter path carries signal
        model.visit_params("", &mut |name, p| {
            if name.ends_with(".lora.b") {
                for (i, v) in p.value.iter_mut().enumerate() {
                    *v = 0.02 * ((i % 5) as f64 - 2.0);
                }
            }
        });
        let values = instance(9);
        let label = 1usize;

        zero_grads(&mut model);
        let cache = model.forward_train(&values).unwrap();
        model.backward(&cache, label).unwrap();

        let report = check_param_gradients(
            &mut model,
            |m| {
                let probs = m.forward(&values).unwrap();
                cross_entropy(&probs, label).unwrap()
            },
            1e-5,
        );
        assert!(
            report.passes(1e-4),
            "max rel error {} at {:?}",
            report.max_rel_error,
            report.worst
        );
    }

    #[test]
    fn frozen_variant_rejects_lora_settings() {
        let mut s = spec(VariantKind::Frozen);
        s.lora = Some(LoraSettings::default());
        assert!(matches!(build::<f64>(&s, shape(), 0), Err(Error::Config(_))));
    }

    #[test]
    fn frozen_variant_has_no_trainable_backbone_params() {
        let mut model = build::<f64>(&spec(VariantKind::Frozen), shape(), 0).unwrap();
        let names = trainable_names(&mut model);
        assert!(!names.is_empty());
        assert!(names.iter().all(|n| !n.starts_with("backbone.")), "{names:?}");
        assert_eq!(model.backbone_mut().unwrap().trainable_parameter_count(), 0);
    }

    #[test]
    fn no_llm_output_ignores_backbone_weights() {
        // two different build seeds share encoder/head seeds only if the
        // whole seed matches, so instead check there is no backbone at all
        let mut model = build::<f64>(&spec(VariantKind::NoLlm), shape(), 5).unwrap();
        assert!(model.backbone_mut().is_none());
        let names = trainable_names(&mut model);
        assert!(names.iter().all(|n| !n.contains("backbone")));
    }

    #[test]
    fn full_and_frozen_agree_at_init() {
        // with B = 0 the adapters are inert, so the only difference between
        // full and frozen is the adapter parameters themselves
        let full = build::<f64>(&spec(VariantKind::Full), shape(), 9).unwrap();
        let frozen = build::<f64>(&spec(VariantKind::Frozen), shape(), 9).unwrap();
        let x = instance(3);
        let a = full.forward(&x).unwrap();
        let b = frozen.forward(&x).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            assert_eq!(p, q);
        }
    }

    #[test]
    fn trainable_partition_by_variant() {
        let mut model = build::<f64>(&spec(VariantKind::Full), shape(), 0).unwrap();
        let names = trainable_names(&mut model);
        assert!(names
            .iter()
            .all(|n| n.starts_with("encoder.") || n.starts_with("head.") || n.contains(".lora.")));
        assert!(names.iter().any(|n| n.contains(".lora.")));
        assert!(count_trainable(&mut model) > 0);
    }

    #[test]
    fn projection_variant_trains_its_projection() {
        let mut model = build::<f64>(&spec(VariantKind::NoPtcenc), shape(), 0).unwrap();
        let names = trainable_names(&mut model);
        assert!(names.iter().any(|n| n == "encoder.projection.weight"));
        assert!(names.iter().all(|n| !n.contains("block")));
    }

    #[test]
    fn capacity_is_checked_at_build_time() {
        let mut s = spec(VariantKind::Full);
        s.backbone.max_positions = 2;
        assert!(matches!(
            build::<f64>(&s, shape(), 0),
            Err(Error::Capacity { .. })
        ));
    }
}
