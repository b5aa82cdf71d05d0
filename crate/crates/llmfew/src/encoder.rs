//! Patch-wise temporal convolution encoder.
//!
//! Each patch index becomes one token whose feature vector is the flattened
//! `(channels * patch_len)` patch content. A width-1 convolution lifts the
//! features to the hidden width, a stack of residual blocks of two
//! weight-normalized dilated causal convolutions (dilation `2^(d-1)` at
//! depth `d`, LeakyReLU activations) mixes information along the patch
//! axis, and a width-1 sampling convolution projects to the backbone
//! embedding size.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::{leaky_relu, leaky_relu_backward};
use crate::nn::conv::{Conv1d, WnConv1d};
use crate::nn::param::{join, ParamSlot, VisitParams};
use crate::nn::Scalar;
use crate::patching::PatchArray;

pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Flattened patch content per token: `channels * patch_len`.
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub depth: usize,
    pub kernel_size: usize,
    pub d_model: usize,
    pub negative_slope: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("hidden_channels", self.hidden_channels),
            ("depth", self.depth),
            ("kernel_size", self.kernel_size),
            ("d_model", self.d_model),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("encoder {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Longest past distance (in tokens, inclusive of the current one) that can
/// influence an output token under the `2^(d-1)` dilation schedule.
pub fn receptive_field(cfg: &EncoderConfig) -> usize {
    1 + 2 * (cfg.kernel_size - 1) * ((1usize << cfg.depth) - 1)
}

#[derive(Debug, Clone)]
struct ConvBlock<T> {
    conv1: WnConv1d<T>,
    conv2: WnConv1d<T>,
}

#[derive(Debug, Clone)]
pub struct PtcEncoder<T> {
    pub cfg: EncoderConfig,
    input_proj: Conv1d<T>,
    blocks: Vec<ConvBlock<T>>,
    output_proj: Conv1d<T>,
}

/// Activations needed by the backward pass, one entry per block.
pub struct EncoderCache<T> {
    tokens: Array2<T>,
    blocks: Vec<BlockCache<T>>,
    body_out: Array2<T>,
}

struct BlockCache<T> {
    input: Array2<T>,
    pre1: Array2<T>,
    act1: Array2<T>,
    pre2: Array2<T>,
}

impl<T: Scalar> PtcEncoder<T> {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_proj = Conv1d::new(cfg.in_channels, cfg.hidden_channels, 1, 1, &mut rng, true);
        let mut blocks = Vec::with_capacity(cfg.depth);
        for d in 0..cfg.depth {
            let dilation = 1usize << d;
            blocks.push(ConvBlock {
                conv1: WnConv1d::new(
                    cfg.hidden_channels,
                    cfg.hidden_channels,
                    cfg.kernel_size,
                    dilation,
                    &mut rng,
                    true,
                ),
                conv2: WnConv1d::new(
                    cfg.hidden_channels,
                    cfg.hidden_channels,
                    cfg.kernel_size,
                    dilation,
                    &mut rng,
                    true,
                ),
            });
        }
        let output_proj = Conv1d::new(cfg.hidden_channels, cfg.d_model, 1, 1, &mut rng, true);
        Ok(Self {
            cfg,
            input_proj,
            blocks,
            output_proj,
        })
    }

    /// Encode a patched instance into `(n_patches, d_model)` token
    /// embeddings.
    pub fn encode(&self, patches: &PatchArray) -> Result<Array2<T>> {
        let tokens = flatten_patches::<T>(patches);
        if tokens.nrows() != self.cfg.in_channels {
            return Err(Error::Config(format!(
                "patch features {} do not match encoder in_channels {}",
                tokens.nrows(),
                self.cfg.in_channels
            )));
        }
        Ok(self.forward_tokens(&tokens))
    }

    /// Forward over a `(in_channels, n_tokens)` feature matrix.
    pub fn forward_tokens(&self, tokens: &Array2<T>) -> Array2<T> {
        let (out, _) = self.forward_train(tokens);
        out
    }

    pub fn forward_train(&self, tokens: &Array2<T>) -> (Array2<T>, EncoderCache<T>) {
        let mut h = self.input_proj.forward(tokens);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let input = h;
            let pre1 = block.conv1.forward(&input);
            let act1 = leaky_relu(&pre1, self.cfg.negative_slope);
            let pre2 = block.conv2.forward(&act1);
            let act2 = leaky_relu(&pre2, self.cfg.negative_slope);
            h = &act2 + &input;
            blocks.push(BlockCache {
                input,
                pre1,
                act1,
                pre2,
            });
        }
        let out = self.output_proj.forward(&h);
        let cache = EncoderCache {
            tokens: tokens.clone(),
            blocks,
            body_out: h,
        };
        // tokens along rows for the backbone, in standard layout
        (out.t().as_standard_layout().into_owned(), cache)
    }

    /// Accumulates parameter gradients; returns the gradient with respect
    /// to the flattened token features.
    pub fn backward(&mut self, d_out: &Array2<T>, cache: &EncoderCache<T>) -> Array2<T> {
        let d_out_ct = d_out.t().to_owned();
        let mut dh = self.output_proj.backward(&cache.body_out, &d_out_ct);
        for (block, bc) in self.blocks.iter_mut().zip(cache.blocks.iter()).rev() {
            let d_act2 = dh.clone(); // residual branch
            let d_pre2 = leaky_relu_backward(&d_act2, &bc.pre2, self.cfg.negative_slope);
            let d_act1 = block.conv2.backward(&bc.act1, &d_pre2);
            let d_pre1 = leaky_relu_backward(&d_act1, &bc.pre1, self.cfg.negative_slope);
            let d_branch = block.conv1.backward(&bc.input, &d_pre1);
            dh = &dh + &d_branch;
        }
        self.input_proj.backward(&cache.tokens, &dh)
    }
}

impl<T: Scalar> VisitParams<T> for PtcEncoder<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamSlot<'_, T>)) {
        f(join(prefix, "input_proj.weight"), self.input_proj.weight.slot());
        f(join(prefix, "input_proj.bias"), self.input_proj.bias.slot());
        for (i, block) in self.blocks.iter_mut().enumerate() {
            for (tag, conv) in [("conv1", &mut block.conv1), ("conv2", &mut block.conv2)] {
                f(
                    join(prefix, &format!("block.{i}.{tag}.direction")),
                    conv.direction.slot(),
                );
                f(
                    join(prefix, &format!("block.{i}.{tag}.magnitude")),
                    conv.magnitude.slot(),
                );
                f(join(prefix, &format!("block.{i}.{tag}.bias")), conv.bias.slot());
            }
        }
        f(join(prefix, "output_proj.weight"), self.output_proj.weight.slot());
        f(join(prefix, "output_proj.bias"), self.output_proj.bias.slot());
    }
}

/// Flatten a `(M, P, N_P)` patch array into `(M*P, N_P)` token features,
/// channel-major: feature `m*P + p` is patch position `p` of channel `m`.
pub fn flatten_patches<T: Scalar>(patches: &PatchArray) -> Array2<T> {
    let (m, p, n) = patches.data.dim();
    let mut out = Array2::zeros((m * p, n));
    for mi in 0..m {
        for pi in 0..p {
            for j in 0..n {
                out[[mi * p + pi, j]] = T::from_f64(patches.data[[mi, pi, j]]);
            }
        }
    }
    out
}

/// Zero the effective kernels of every block (magnitudes and biases), used
/// to verify the residual-identity property.
#[doc(hidden)]
pub fn zero_block_kernels<T: Scalar>(enc: &mut PtcEncoder<T>) {
    for block in &mut enc.blocks {
        block.conv1.magnitude.value.fill(T::zero());
        block.conv1.bias.value.fill(T::zero());
        block.conv2.magnitude.value.fill(T::zero());
        block.conv2.bias.value.fill(T::zero());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_param_gradients;
    use crate::nn::init;
    use crate::nn::param::zero_grads;
    use crate::patching::patch;

    fn cfg(in_channels: usize, c: usize, depth: usize, k: usize, d_model: usize) -> EncoderConfig {
        EncoderConfig {
            in_channels,
            hidden_channels: c,
            depth,
            kernel_size: k,
            d_model,
            negative_slope: DEFAULT_NEGATIVE_SLOPE,
        }
    }

    #[test]
    fn output_shape_contract() {
        let values = Array2::from_shape_fn((3, 152), |(m, t)| ((m + 1) * t) as f64 * 0.01);
        let patches = patch(&values, 16, 8).unwrap();
        assert_eq!(patches.n_patches(), 19);
        let enc = PtcEncoder::<f64>::new(cfg(3 * 16, 32, 2, 3, 768), 0).unwrap();
        let out = enc.encode(&patches).unwrap();
        assert_eq!(out.dim(), (19, 768));
    }

    #[test]
    fn zero_input_zero_output_at_init() {
        // biases start at zero, so the all-zero token matrix maps to zeros
        let enc = PtcEncoder::<f64>::new(cfg(6, 8, 2, 3, 5), 1).unwrap();
        let tokens = Array2::zeros((6, 7));
        let out = enc.forward_tokens(&tokens);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let values = Array2::from_shape_fn((2, 16), |_| 0.3);
        let patches = patch(&values, 4, 2).unwrap();
        let enc = PtcEncoder::<f64>::new(cfg(99, 8, 1, 3, 4), 0).unwrap();
        assert!(matches!(enc.encode(&patches), Err(Error::Config(_))));
    }

    #[test]
    fn causality_under_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = PtcEncoder::<f64>::new(cfg(4, 8, 2, 3, 6), 3).unwrap();
        let tokens: Array2<f64> = init::uniform((4, 20), 1.0, &mut rng);
        let base = enc.forward_tokens(&tokens);
        let t0 = 11;
        let mut perturbed = tokens.clone();
        perturbed[[2, t0]] += 0.5;
        let out = enc.forward_tokens(&perturbed);
        for t in 0..t0 {
            for d in 0..6 {
                assert_eq!(base[[t, d]], out[[t, d]], "leak at position {t}");
            }
        }
        // and the perturbation is visible at t0 itself
        assert!((base.row(t0).to_owned() - out.row(t0).to_owned())
            .iter()
            .any(|v| v.abs() > 0.0));
    }

    /// Perturbation oracle: farthest forward position influenced by an
    /// input perturbation at position 0.
    fn measured_receptive_field(enc: &PtcEncoder<f64>, in_channels: usize, len: usize) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let tokens: Array2<f64> = init::uniform((in_channels, len), 1.0, &mut rng);
        let base = enc.forward_tokens(&tokens);
        let mut perturbed = tokens.clone();
        perturbed[[0, 0]] += 1.0;
        let out = enc.forward_tokens(&perturbed);
        let mut farthest = 0;
        for t in 0..len {
            let changed = (0..out.ncols()).any(|d| (base[[t, d]] - out[[t, d]]).abs() > 1e-12);
            if changed {
                farthest = t;
            }
        }
        farthest + 1
    }

    #[test]
    fn receptive_field_matches_perturbation_oracle() {
        for (depth, k, expect) in [(1usize, 3usize, 5usize), (2, 3, 13), (1, 1, 1), (3, 1, 1)] {
            let c = cfg(3, 6, depth, k, 4);
            assert_eq!(receptive_field(&c), expect, "formula D={depth} k={k}");
            let enc = PtcEncoder::<f64>::new(c, 5).unwrap();
            assert_eq!(
                measured_receptive_field(&enc, 3, expect + 4),
                expect,
                "oracle D={depth} k={k}"
            );
        }
    }

    #[test]
    fn residual_identity_with_zeroed_blocks() {
        let mut enc = PtcEncoder::<f64>::new(cfg(5, 7, 3, 3, 4), 2).unwrap();
        zero_block_kernels(&mut enc);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tokens: Array2<f64> = init::uniform((5, 9), 1.0, &mut rng);
        let got = enc.forward_tokens(&tokens);
        let expect = enc
            .output_proj
            .forward(&enc.input_proj.forward(&tokens))
            .t()
            .to_owned();
        assert_eq!(got, expect);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let config = cfg(6, 8, 2, 3, 4);
        let mut enc = PtcEncoder::<f64>::new(config, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let tokens: Array2<f64> = init::uniform((6, 7), 1.0, &mut rng);
        let probe: Array2<f64> = init::uniform((7, 4), 1.0, &mut rng);

        zero_grads(&mut enc);
        let (out, cache) = enc.forward_train(&tokens);
        let _ = enc.backward(&probe, &cache);
        drop(out);

        let report = check_param_gradients(
            &mut enc,
            |m| {
                let y = m.forward_tokens(&tokens);
                (&y * &probe).sum()
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
    fn flatten_is_channel_major() {
        let values = ndarray::arr2(&[[1.0, 2.0, 3.0, 4.0], [10.0, 20.0, 30.0, 40.0]]);
        let p = patch(&values, 2, 2).unwrap();
        let flat: Array2<f64> = flatten_patches(&p);
        assert_eq!(flat.dim(), (4, 3));
        // token 0: channel 0 patch [1,2], channel 1 patch [10,20]
        assert_eq!(flat.column(0).to_vec(), vec![1.0, 2.0, 10.0, 20.0]);
    }
}
