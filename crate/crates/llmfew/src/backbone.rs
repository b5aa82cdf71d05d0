//! Causal decoder backbone.
//!
//! Pre-normalization transformer blocks (parameter-free standardization
//! before attention and feed-forward, affine layer norm at the top),
//! learned absolute positional embeddings (zero-initialized) and strictly
//! causal multi-head self-attention. Token embeddings are consumed
//! directly; there is no vocabulary lookup. The same structure serves both
//! the from-scratch tiny decoder and externally converted pretrained
//! weights loaded from a checkpoint directory.

use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::lora::{init_adapter, LoraLinear, LoraLinearCache, LoraSettings};
use crate::nn::activation::{gelu, gelu_backward};
use crate::nn::init::mix_seed;
use crate::nn::linear::Linear;
use crate::nn::norm::{
    layer_norm_rows, layer_norm_rows_backward, softmax, softmax_backward, AffineLayerNorm,
    LnCache,
};
use crate::nn::param::{join, Param2, ParamSlot, VisitParams};
use crate::nn::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Tiny,
    Pretrained,
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackboneKind::Tiny => write!(f, "tiny"),
            BackboneKind::Pretrained => write!(f, "pretrained"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    #[serde(default = "default_ffn_multiplier")]
    pub ffn_multiplier: usize,
    #[serde(default = "default_max_positions")]
    pub max_positions: usize,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
}

fn default_ffn_multiplier() -> usize {
    4
}

fn default_max_positions() -> usize {
    512
}

impl BackboneSpec {
    /// Desk-scale default: 64-wide, 2 layers, 4 heads.
    pub fn tiny(d_model: usize, n_layers: usize, n_heads: usize) -> Self {
        Self {
            kind: BackboneKind::Tiny,
            d_model,
            n_layers,
            n_heads,
            ffn_multiplier: default_ffn_multiplier(),
            max_positions: default_max_positions(),
            checkpoint_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 {
            return Err(Error::Config("backbone sizes must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_positions == 0 {
            return Err(Error::Config("max_positions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer<T> {
    q: LoraLinear<T>,
    k: LoraLinear<T>,
    v: LoraLinear<T>,
    o: Linear<T>,
    ffn_in: Linear<T>,
    ffn_out: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct Backbone<T> {
    pub kind: BackboneKind,
    pub d_model: usize,
    pub n_heads: usize,
    pub max_positions: usize,
    pos_emb: Param2<T>,
    layers: Vec<DecoderLayer<T>>,
    final_norm: AffineLayerNorm<T>,
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    q: LoraLinearCache<T>,
    k: LoraLinearCache<T>,
    v: LoraLinearCache<T>,
    attn_probs: Vec<Array2<T>>,
    q_mat: Array2<T>,
    k_mat: Array2<T>,
    v_mat: Array2<T>,
    concat: Array2<T>,
    ln2: LnCache<T>,
    xn2: Array2<T>,
    pre_gelu: Array2<T>,
    post_gelu: Array2<T>,
}

pub struct BackboneCache<T> {
    layers: Vec<LayerCache<T>>,
    final_ln: LnCache<T>,
    seq_len: usize,
}

impl<T: Scalar> Backbone<T> {
    /// Build with freshly initialized weights, all base parameters frozen.
    pub fn new(spec: &BackboneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.d_model;
        let mut layers = Vec::with_capacity(spec.n_layers);
        for _ in 0..spec.n_layers {
            layers.push(DecoderLayer {
                q: LoraLinear::plain(Linear::new(d, d, &mut rng, false)),
                k: LoraLinear::plain(Linear::new(d, d, &mut rng, false)),
                v: LoraLinear::plain(Linear::new(d, d, &mut rng, false)),
                o: Linear::new(d, d, &mut rng, false),
                ffn_in: Linear::new(d, d * spec.ffn_multiplier, &mut rng, false),
                ffn_out: Linear::new(d * spec.ffn_multiplier, d, &mut rng, false),
            });
        }
        Ok(Self {
            kind: spec.kind,
            d_model: d,
            n_heads: spec.n_heads,
            max_positions: spec.max_positions,
            pos_emb: Param2::new(Array2::zeros((spec.max_positions, d)), false),
            layers,
            final_norm: AffineLayerNorm::new_frozen(d),
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn is_adapted(&self) -> bool {
        self.layers.iter().any(|l| l.q.adapter.is_some())
    }

    /// Final-layer hidden states for `(seq_len, d_model)` token embeddings.
    pub fn forward(&self, tokens: &Array2<T>) -> Result<Array2<T>> {
        self.forward_train(tokens).map(|(out, _)| out)
    }

    pub fn forward_train(&self, tokens: &Array2<T>) -> Result<(Array2<T>, BackboneCache<T>)> {
        let (seq_len, width) = tokens.dim();
        if width != self.d_model {
            return Err(Error::Config(format!(
                "token width {width} does not match d_model {}",
                self.d_model
            )));
        }
        if seq_len > self.max_positions {
            return Err(Error::Capacity {
                got: seq_len,
                max: self.max_positions,
            });
        }

        let mut x = tokens + &self.pos_emb.value.slice(s![..seq_len, ..]);
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (xn1, ln1) = layer_norm_rows(&x);
            let (q_mat, q_cache) = layer.q.forward_train(&xn1);
            let (k_mat, k_cache) = layer.k.forward_train(&xn1);
            let (v_mat, v_cache) = layer.v.forward_train(&xn1);
            let (concat, attn_probs) =
                causal_attention(&q_mat, &k_mat, &v_mat, self.n_heads);
            let proj = layer.o.forward(&concat);
            let y = &x + &proj;

            let (xn2, ln2) = layer_norm_rows(&y);
            let pre_gelu = layer.ffn_in.forward(&xn2);
            let post_gelu = gelu(&pre_gelu);
            let f = layer.ffn_out.forward(&post_gelu);
            let out = &y + &f;

            layer_caches.push(LayerCache {
                ln1,
                q: q_cache,
                k: k_cache,
                v: v_cache,
                attn_probs,
                q_mat,
                k_mat,
                v_mat,
                concat,
                ln2,
                xn2,
                pre_gelu,
                post_gelu,
            });
            x = out;
        }
        let (out, final_ln) = self.final_norm.forward(&x);
        Ok((
            out,
            BackboneCache {
                layers: layer_caches,
                final_ln,
                seq_len,
            },
        ))
    }

    /// Accumulates parameter gradients; returns the gradient with respect
    /// to the input token embeddings.
    pub fn backward(&mut self, d_out: &Array2<T>, cache: &BackboneCache<T>) -> Array2<T> {
        let mut dx = self.final_norm.backward(d_out, &cache.final_ln);
        for (layer, lc) in self.layers.iter_mut().zip(cache.layers.iter()).rev() {
            // feed-forward half: out = y + ffn_out(gelu(ffn_in(LN2(y))))
            let df = dx.clone();
            let d_post = layer.ffn_out.backward(&lc.post_gelu, &df);
            let d_pre = gelu_backward(&d_post, &lc.pre_gelu);
            let d_xn2 = layer.ffn_in.backward(&lc.xn2, &d_pre);
            let dy = &dx + &layer_norm_rows_backward(&d_xn2, &lc.ln2);

            // attention half: y = x + O(attn(Q, K, V over LN1(x)))
            let d_concat = layer.o.backward(&lc.concat, &dy);
            let (dq, dk, dv) = causal_attention_backward(
                &d_concat,
                &lc.attn_probs,
                &lc.q_mat,
                &lc.k_mat,
                &lc.v_mat,
                self.n_heads,
            );
            let mut d_xn1 = layer.q.backward(&dq, &lc.q);
            d_xn1 = d_xn1 + layer.k.backward(&dk, &lc.k);
            d_xn1 = d_xn1 + layer.v.backward(&dv, &lc.v);
            dx = &dy + &layer_norm_rows_backward(&d_xn1, &lc.ln1);
        }
        let mut pos_grad = self.pos_emb.grad.slice_mut(s![..cache.seq_len, ..]);
        pos_grad += &dx;
        dx
    }

    /// Wrap every attention Q/K/V projection with a fresh adapter and
    /// freeze all base parameters. Fails if adapters are already present.
    pub fn inject_lora(&mut self, settings: LoraSettings, seed: u64) -> Result<()> {
        if self.is_adapted() {
            return Err(Error::Config(
                "backbone already adapted: refusing double LoRA injection".into(),
            ));
        }
        let d = self.d_model;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (slot, proj, tag) in [
                (0u64, &mut layer.q, "q"),
                (1, &mut layer.k, "k"),
                (2, &mut layer.v, "v"),
            ] {
                proj.adapter = Some(init_adapter(
                    d,
                    d,
                    settings.rank,
                    settings.alpha,
                    mix_seed(seed, (i as u64) * 3 + slot),
                    format!("layer.{i}.attn.{tag}"),
                )?);
            }
        }
        self.set_base_trainable(false);
        Ok(())
    }

    /// Flip the trainable flag of every base parameter (adapters keep
    /// theirs). `true` is the full-train debug mode.
    pub fn set_base_trainable(&mut self, trainable: bool) {
        self.visit_params("", &mut |name, p| {
            if !name.contains(".lora.") {
                *p.trainable = trainable;
            }
        });
    }

    /// Trainable scalars currently registered on this backbone.
    pub fn trainable_parameter_count(&mut self) -> usize {
        crate::nn::param::count_trainable(self)
    }

    pub fn total_parameter_count(&mut self) -> usize {
        crate::nn::param::count_total(self)
    }

    /// Write the base weights (never the adapters) in the documented
    /// checkpoint layout.
    pub fn save_checkpoint(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::write_meta(
            &dir.join("meta"),
            &[
                ("kind", self.kind.to_string()),
                ("d_model", self.d_model.to_string()),
                ("n_layers", self.layers.len().to_string()),
                ("n_heads", self.n_heads.to_string()),
                ("max_positions", self.max_positions.to_string()),
            ],
        )?;
        let mut result = Ok(());
        self.visit_params("", &mut |name, p| {
            if result.is_err() || name.contains(".lora.") {
                return;
            }
            let data: Vec<f32> = p.value.iter().map(|v| v.as_f64() as f32).collect();
            result = checkpoint::write_array(&dir.join(&name), &p.shape, &data);
        });
        result
    }

    /// Build a backbone from a checkpoint directory, reading `d_model` and
    /// the stack shape from its metadata.
    pub fn load_pretrained(dir: &Path) -> Result<Backbone<T>> {
        let meta_path = dir.join("meta");
        let meta = checkpoint::read_meta(&meta_path)?;
        let d_model = checkpoint::meta_usize(&meta, "d_model", &meta_path)?;
        let n_layers = checkpoint::meta_usize(&meta, "n_layers", &meta_path)?;
        let n_heads = checkpoint::meta_usize(&meta, "n_heads", &meta_path)?;
        let max_positions = checkpoint::meta_usize(&meta, "max_positions", &meta_path)?;

        // the feed-forward width is recovered from the stored weights
        let ffn_multiplier = if n_layers > 0 {
            let (shape, _) = checkpoint::read_array(&dir.join("layer.0.ffn.in.weight"))?;
            if shape.len() != 2 || shape[1] != d_model || shape[0] % d_model != 0 {
                return Err(Error::Checkpoint {
                    path: dir.to_path_buf(),
                    offending: vec![format!(
                        "layer.0.ffn.in.weight: shape {shape:?} inconsistent with d_model {d_model}"
                    )],
                });
            }
            shape[0] / d_model
        } else {
            default_ffn_multiplier()
        };

        let spec = BackboneSpec {
            kind: BackboneKind::Pretrained,
            d_model,
            n_layers,
            n_heads,
            ffn_multiplier,
            max_positions,
            checkpoint_path: Some(dir.to_path_buf()),
        };
        let mut backbone = Backbone::new(&spec, 0)?;

        let mut offending = Vec::new();
        backbone.visit_params("", &mut |name, p| {
            if name.contains(".lora.") {
                return;
            }
            match checkpoint::read_array(&dir.join(&name)) {
                Ok((shape, data)) => {
                    if shape != p.shape {
                        offending.push(format!("{name}: shape {shape:?}, expected {:?}", p.shape));
                    } else {
                        for (dst, src) in p.value.iter_mut().zip(data.iter()) {
                            *dst = T::from_f64(f64::from(*src));
                        }
                    }
                }
                Err(_) => offending.push(format!("{name}: missing or unreadable")),
            }
        });
        if !offending.is_empty() {
            return Err(Error::Checkpoint {
                path: dir.to_path_buf(),
                offending,
            });
        }
        Ok(backbone)
    }
}

impl<T: Scalar> AffineLayerNorm<T> {
    fn new_frozen(dim: usize) -> Self {
        let mut ln = AffineLayerNorm::new(dim, false);
        ln.weight.trainable = false;
        ln.bias.trainable = false;
        ln
    }
}

impl<T: Scalar> VisitParams<T> for Backbone<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamSlot<'_, T>)) {
        f(join(prefix, "pos_emb"), self.pos_emb.slot());
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.q.visit_params(&join(prefix, &format!("layer.{i}.attn.q")), f);
            layer.k.visit_params(&join(prefix, &format!("layer.{i}.attn.k")), f);
            layer.v.visit_params(&join(prefix, &format!("layer.{i}.attn.v")), f);
            f(join(prefix, &format!("layer.{i}.attn.o.weight")), layer.o.weight.slot());
            f(join(prefix, &format!("layer.{i}.attn.o.bias")), layer.o.bias.slot());
            f(join(prefix, &format!("layer.{i}.ffn.in.weight")), layer.ffn_in.weight.slot());
            f(join(prefix, &format!("layer.{i}.ffn.in.bias")), layer.ffn_in.bias.slot());
            f(join(prefix, &format!("layer.{i}.ffn.out.weight")), layer.ffn_out.weight.slot());
            f(join(prefix, &format!("layer.{i}.ffn.out.bias")), layer.ffn_out.bias.slot());
        }
        f(join(prefix, "final_norm.weight"), self.final_norm.weight.slot());
        f(join(prefix, "final_norm.bias"), self.final_norm.bias.slot());
    }
}

/// Strictly causal scaled dot-product attention. Returns the concatenated
/// head outputs and the per-head probability matrices.
fn causal_attention<T: Scalar>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    n_heads: usize,
) -> (Array2<T>, Vec<Array2<T>>) {
    let (seq_len, d_model) = q.dim();
    let head_dim = d_model / n_heads;
    let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());
    let mut concat = Array2::zeros((seq_len, d_model));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * head_dim..(h + 1) * head_dim];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut p = Array2::zeros((seq_len, seq_len));
        for i in 0..seq_len {
            let mut row = ndarray::Array1::from_elem(i + 1, T::zero());
            for j in 0..=i {
                row[j] = qh.row(i).dot(&kh.row(j)) * scale;
            }
            let soft = softmax(&row);
            for j in 0..=i {
                p[[i, j]] = soft[j];
            }
        }
        let zh = p.dot(&vh);
        concat.slice_mut(cols).assign(&zh);
        probs.push(p);
    }
    (concat, probs)
}

fn causal_attention_backward<T: Scalar>(
    d_concat: &Array2<T>,
    probs: &[Array2<T>],
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    n_heads: usize,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let (seq_len, d_model) = q.dim();
    let head_dim = d_model / n_heads;
    let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());
    let mut dq = Array2::zeros((seq_len, d_model));
    let mut dk = Array2::zeros((seq_len, d_model));
    let mut dv = Array2::zeros((seq_len, d_model));
    for h in 0..n_heads {
        let cols = s![.., h * head_dim..(h + 1) * head_dim];
        let p = &probs[h];
        let dzh = d_concat.slice(cols).to_owned();
        let vh = v.slice(cols);
        let qh = q.slice(cols);
        let kh = k.slice(cols);

        dv.slice_mut(cols).assign(&p.t().dot(&dzh));
        let dp = dzh.dot(&vh.t());
        // masked softmax backward, row by row over the valid prefix
        let mut ds = Array2::zeros((seq_len, seq_len));
        for i in 0..seq_len {
            let pi = p.row(i).slice(s![..=i]).to_owned();
            let dpi = dp.row(i).slice(s![..=i]).to_owned();
            let dsi = softmax_backward(&dpi, &pi);
            for j in 0..=i {
                ds[[i, j]] = dsi[j];
            }
        }
        dq.slice_mut(cols).assign(&(ds.dot(&kh) * scale));
        dk.slice_mut(cols).assign(&(ds.t().dot(&qh) * scale));
    }
    (dq, dk, dv)
}
