use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::params::{Family, ParamId, ParamStore};
use super::tensor::Tensor;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::membank::MemoryEntry;
use crate::raster::{BoxPrompt, RasterGrid};

/// Linear map `y = x Wᵀ + b`, optionally with a low-rank bypass `x Aᵀ Bᵀ`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: ParamId,
    /// Absent on key projections, whose bias cancels in the softmax.
    pub b: Option<ParamId>,
    /// `(A: r x in, B: out x r)`.
    pub lora: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderBlock {
    pub ln1: Norm,
    pub attn: Attention,
    pub ln2: Norm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct MemoryBlock {
    pub ln_self: Norm,
    pub self_attn: Attention,
    pub ln_cross: Norm,
    pub cross_attn: Attention,
    pub ln_mlp: Norm,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecoderBlock {
    pub self_attn: Attention,
    pub ln1: Norm,
    pub token_to_image: Attention,
    pub ln2: Norm,
    pub mlp: Mlp,
    pub ln3: Norm,
    pub image_to_token: Attention,
    pub ln4: Norm,
}

/// Parameters plus the handles that wire them into the network.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    /// When false the low-rank bypass is skipped, giving the base encoder.
    pub lora_enabled: bool,
    patch_embed: Linear,
    encoder: Vec<EncoderBlock>,
    memory: Vec<MemoryBlock>,
    corner_embed: ParamId,
    query_tokens: ParamId,
    decoder: Vec<DecoderBlock>,
    final_attn: Attention,
    final_ln: Norm,
    hyper: Mlp,
    mask_bias: ParamId,
    iou_head: Mlp,
    mem_proj_w: ParamId,
    mem_proj_b: ParamId,
    image_pe: Tensor,
    upsample: Tensor,
    downsample: Tensor,
}

/// Output of one mask decode.
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    /// `input_size x input_size` logits.
    pub logits: NodeId,
    /// `1 x 1` confidence in [0, 1].
    pub confidence: NodeId,
}

/// 2-D sinusoidal encoding of a normalized position; `d` must be divisible by 4.
pub fn positional_encoding(x: f64, y: f64, d: usize) -> Vec<f64> {
    let nf = d / 4;
    let mut out = Vec::with_capacity(d);
    for coord in [x, y] {
        for k in 0..nf {
            out.push((freq(k) * coord).sin());
        }
        for k in 0..nf {
            out.push((freq(k) * coord).cos());
        }
    }
    out
}

fn freq(k: usize) -> f64 {
    std::f64::consts::FRAC_PI_2 * 2f64.powf(k as f64 / 2.0)
}

/// Bilinear interpolation matrix from `n` samples to `m` (half-pixel centers).
fn bilinear_matrix(m: usize, n: usize) -> Tensor {
    let mut t = Tensor::zeros(m, n);
    let scale = n as f64 / m as f64;
    for i in 0..m {
        let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let frac = src - lo as f64;
        t.data[i * n + lo] += 1.0 - frac;
        t.data[i * n + hi] += frac;
    }
    t
}

/// Area-mean pooling matrix from `m` samples to `n = m / patch`.
fn pooling_matrix(n: usize, patch: usize) -> Tensor {
    let m = n * patch;
    let mut t = Tensor::zeros(n, m);
    for j in 0..n {
        for i in j * patch..(j + 1) * patch {
            t.data[j * m + i] = 1.0 / patch as f64;
        }
    }
    t
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, family: Family, inp: usize, out: usize, lora: Option<usize>) -> Linear {
        self.linear_with(name, family, inp, out, lora, true)
    }

    fn linear_with(&mut self, name: &str, family: Family, inp: usize, out: usize, lora: Option<usize>, bias: bool) -> Linear {
        let std = 1.0 / (inp as f64).sqrt();
        let w = self.store.add_normal(&format!("{name}.w"), family, out, inp, std, &mut self.rng);
        let b = bias.then(|| self.store.add_const(&format!("{name}.b"), family, 1, out, 0.0));
        let lora = lora.map(|r| {
            let a = self.store.add_normal(&format!("{name}.lora_a"), Family::Lora, r, inp, std, &mut self.rng);
            let bb = self.store.add_const(&format!("{name}.lora_b"), Family::Lora, out, r, 0.0);
            (a, bb)
        });
        Linear { w, b, lora }
    }

    fn norm(&mut self, name: &str, family: Family, d: usize) -> Norm {
        Norm {
            gamma: self.store.add_const(&format!("{name}.gamma"), family, 1, d, 1.0),
            beta: self.store.add_const(&format!("{name}.beta"), family, 1, d, 0.0),
        }
    }

    fn attention(&mut self, name: &str, family: Family, d: usize, lora: Option<usize>) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), family, d, d, lora),
            k: self.linear_with(&format!("{name}.k"), family, d, d, None, false),
            v: self.linear(&format!("{name}.v"), family, d, d, lora),
            o: self.linear(&format!("{name}.o"), family, d, d, None),
        }
    }

    fn mlp(&mut self, name: &str, family: Family, d: usize, hidden: usize, out: usize) -> Mlp {
        Mlp {
            fc1: self.linear(&format!("{name}.fc1"), family, d, hidden, None),
            fc2: self.linear(&format!("{name}.fc2"), family, hidden, out, None),
        }
    }
}

impl Model {
    /// Seeded initialization. Frozen families stand in for pretrained weights.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let d = cfg.d_model;
        let hidden = d * cfg.mlp_ratio;
        let mut b = Builder {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(cfg.init_seed),
        };
        let patch_embed = b.linear("patch_embed", Family::PatchEmbed, cfg.patch * cfg.patch, d, None);
        let encoder = (0..cfg.n_enc_blocks)
            .map(|i| {
                let n = format!("encoder.{i}");
                EncoderBlock {
                    ln1: b.norm(&format!("{n}.ln1"), Family::EncoderBase, d),
                    attn: b.attention(&format!("{n}.attn"), Family::EncoderBase, d, Some(cfg.lora_rank)),
                    ln2: b.norm(&format!("{n}.ln2"), Family::EncoderBase, d),
                    mlp: b.mlp(&format!("{n}.mlp"), Family::EncoderBase, d, hidden, d),
                }
            })
            .collect();
        let corner_embed = b.store.add_normal("prompt.corner_embed", Family::PromptEncoder, 2, d, 0.5, &mut b.rng);
        let memory = (0..cfg.n_mem_blocks)
            .map(|i| {
                let n = format!("memory.{i}");
                let f = Family::MemoryAttention;
                MemoryBlock {
                    ln_self: b.norm(&format!("{n}.ln_self"), f, d),
                    self_attn: b.attention(&format!("{n}.self_attn"), f, d, None),
                    ln_cross: b.norm(&format!("{n}.ln_cross"), f, d),
                    cross_attn: b.attention(&format!("{n}.cross_attn"), f, d, None),
                    ln_mlp: b.norm(&format!("{n}.ln_mlp"), f, d),
                    mlp: b.mlp(&format!("{n}.mlp"), f, d, hidden, d),
                }
            })
            .collect();
        let mem_proj_w = b.store.add_normal("memory_encoder.proj_w", Family::MemoryEncoder, 1, d, 1.0, &mut b.rng);
        let mem_proj_b = b.store.add_const("memory_encoder.proj_b", Family::MemoryEncoder, 1, d, 0.0);
        let query_tokens = b.store.add_normal("decoder.query_tokens", Family::QueryTokens, cfg.n_query_tokens, d, 1.0, &mut b.rng);
        let decoder = (0..cfg.n_dec_blocks)
            .map(|i| {
                let n = format!("decoder.{i}");
                let f = Family::Decoder;
                DecoderBlock {
                    self_attn: b.attention(&format!("{n}.self_attn"), f, d, None),
                    ln1: b.norm(&format!("{n}.ln1"), f, d),
                    token_to_image: b.attention(&format!("{n}.t2i"), f, d, None),
                    ln2: b.norm(&format!("{n}.ln2"), f, d),
                    mlp: b.mlp(&format!("{n}.mlp"), f, d, hidden, d),
                    ln3: b.norm(&format!("{n}.ln3"), f, d),
                    image_to_token: b.attention(&format!("{n}.i2t"), f, d, None),
                    ln4: b.norm(&format!("{n}.ln4"), f, d),
                }
            })
            .collect();
        let final_attn = b.attention("decoder.final_t2i", Family::Decoder, d, None);
        let final_ln = b.norm("decoder.final_ln", Family::Decoder, d);
        let hyper = b.mlp("mask_head.hyper", Family::MaskHead, d, d, d);
        let mask_bias = b.store.add_const("mask_head.bias", Family::MaskHead, 1, 1, 0.0);
        let iou_head = b.mlp("iou_head", Family::IouHead, d, d, 1);

        let g = cfg.grid();
        let mut pe = Vec::with_capacity(g * g * d);
        for r in 0..g {
            for c in 0..g {
                let x = (c as f64 + 0.5) / g as f64;
                let y = (r as f64 + 0.5) / g as f64;
                pe.extend(positional_encoding(x, y, d));
            }
        }
        let image_pe = Tensor::from_vec(g * g, d, pe)?;
        let upsample = bilinear_matrix(cfg.input_size, g);
        let downsample = pooling_matrix(g, cfg.patch);
        Ok(Self {
            cfg,
            params,
            lora_enabled: true,
            patch_embed,
            encoder,
            memory,
            corner_embed,
            query_tokens,
            decoder,
            final_attn,
            final_ln,
            hyper,
            mask_bias,
            iou_head,
            mem_proj_w,
            mem_proj_b,
            image_pe,
            upsample,
            downsample,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn p(&self, g: &mut Graph, id: ParamId) -> NodeId {
        g.param(id, self.params.value(id))
    }

    pub(crate) fn linear(&self, g: &mut Graph, x: NodeId, l: &Linear) -> NodeId {
        let w = self.p(g, l.w);
        let xw = g.matmul(x, w, false, true);
        let base = match l.b {
            Some(b) => {
                let b = self.p(g, b);
                g.add_row(xw, b)
            }
            None => xw,
        };
        match l.lora {
            Some((a, bb)) if self.lora_enabled => {
                let a = self.p(g, a);
                let bb = self.p(g, bb);
                let xa = g.matmul(x, a, false, true);
                let delta = g.matmul(xa, bb, false, true);
                g.add(base, delta)
            }
            _ => base,
        }
    }

    fn norm(&self, g: &mut Graph, x: NodeId, n: &Norm) -> NodeId {
        let gamma = self.p(g, n.gamma);
        let beta = self.p(g, n.beta);
        g.layer_norm(x, gamma, beta)
    }

    fn mlp(&self, g: &mut Graph, x: NodeId, m: &Mlp) -> NodeId {
        let h = self.linear(g, x, &m.fc1);
        let h = g.gelu(h);
        self.linear(g, h, &m.fc2)
    }

    /// Multi-head scaled dot-product attention.
    fn attend(&self, g: &mut Graph, q_in: NodeId, k_in: NodeId, v_in: NodeId, a: &Attention) -> NodeId {
        let q = self.linear(g, q_in, &a.q);
        let k = self.linear(g, k_in, &a.k);
        let v = self.linear(g, v_in, &a.v);
        let heads = self.cfg.n_heads;
        let dh = self.cfg.d_model / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let outs: Vec<NodeId> = (0..heads)
            .map(|h| {
                let (qh, kh, vh) = if heads == 1 {
                    (q, k, v)
                } else {
                    (g.slice_cols(q, h * dh, dh), g.slice_cols(k, h * dh, dh), g.slice_cols(v, h * dh, dh))
                };
                let s = g.matmul(qh, kh, false, true);
                let s = g.scale(s, scale);
                let p = g.softmax_rows(s);
                g.matmul(p, vh, false, false)
            })
            .collect();
        let o = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.linear(g, o, &a.o)
    }

    fn check_grid(&self, grid: &RasterGrid) -> Result<()> {
        let s = self.cfg.input_size;
        if grid.height() != s || grid.width() != s {
            return Err(Error::dims(format!("{s}x{s}"), format!("{}x{}", grid.height(), grid.width())));
        }
        Ok(())
    }

    /// Patch rows with ink = 1, paper = 0.
    fn patchify(&self, grid: &RasterGrid) -> Tensor {
        let (p, gsz) = (self.cfg.patch, self.cfg.grid());
        let mut t = Tensor::zeros(gsz * gsz, p * p);
        for pr in 0..gsz {
            for pc in 0..gsz {
                let row = pr * gsz + pc;
                for dy in 0..p {
                    for dx in 0..p {
                        let v = grid.get(pc * p + dx, pr * p + dy) as f64;
                        t.data[row * p * p + dy * p + dx] = 1.0 - v / 255.0;
                    }
                }
            }
        }
        t
    }

    /// Frame embedding: `n_tokens x d_model`.
    pub fn encode_frame(&self, g: &mut Graph, grid: &RasterGrid) -> Result<NodeId> {
        self.check_grid(grid)?;
        let patches = g.constant(self.patchify(grid));
        let x = self.linear(g, patches, &self.patch_embed);
        let pe = g.constant(self.image_pe.clone());
        let mut x = g.add(x, pe);
        for blk in &self.encoder {
            let h = self.norm(g, x, &blk.ln1);
            let h = self.attend(g, h, h, h, &blk.attn);
            x = g.add(x, h);
            let h = self.norm(g, x, &blk.ln2);
            let h = self.mlp(g, h, &blk.mlp);
            x = g.add(x, h);
        }
        Ok(x)
    }

    /// Condition frame tokens on memory token grids. With no memories the
    /// cross-attention sub-layer is skipped.
    pub fn memory_attention(&self, g: &mut Graph, frame: NodeId, memories: &[NodeId]) -> NodeId {
        let mem = match memories.len() {
            0 => None,
            1 => Some(memories[0]),
            _ => Some(g.concat_rows(memories)),
        };
        let mut x = frame;
        for blk in &self.memory {
            let h = self.norm(g, x, &blk.ln_self);
            let h = self.attend(g, h, h, h, &blk.self_attn);
            x = g.add(x, h);
            if let Some(m) = mem {
                let h = self.norm(g, x, &blk.ln_cross);
                let h = self.attend(g, h, m, m, &blk.cross_attn);
                x = g.add(x, h);
            }
            let h = self.norm(g, x, &blk.ln_mlp);
            let h = self.mlp(g, h, &blk.mlp);
            x = g.add(x, h);
        }
        x
    }

    /// Two corner tokens for a box prompt.
    pub fn encode_box_prompt(&self, g: &mut Graph, b: &BoxPrompt) -> Result<NodeId> {
        let s = self.cfg.input_size;
        if !b.is_valid_for(s, s) {
            return Err(Error::InvalidArgument(format!("box {b:?} is degenerate or outside {s}x{s}")));
        }
        let d = self.cfg.d_model;
        let sf = s as f64;
        let mut data = positional_encoding(b.x0 as f64 / sf, b.y0 as f64 / sf, d);
        data.extend(positional_encoding(b.x1 as f64 / sf, b.y1 as f64 / sf, d));
        let corners = g.constant(Tensor::from_vec(2, d, data)?);
        let ty = self.p(g, self.corner_embed);
        Ok(g.add(corners, ty))
    }

    /// Decode a mask from fused image tokens and optional prompt tokens.
    pub fn decode_mask(&self, g: &mut Graph, image: NodeId, prompt: Option<NodeId>) -> Decoded {
        let queries = self.p(g, self.query_tokens);
        let tokens0 = match prompt {
            Some(p) => g.concat_rows(&[queries, p]),
            None => queries,
        };
        let ipe = g.constant(self.image_pe.clone());
        let mut t = tokens0;
        let mut img = image;
        for blk in &self.decoder {
            let q = g.add(t, tokens0);
            let h = self.attend(g, q, q, t, &blk.self_attn);
            let s = g.add(t, h);
            t = self.norm(g, s, &blk.ln1);

            let q = g.add(t, tokens0);
            let k = g.add(img, ipe);
            let h = self.attend(g, q, k, img, &blk.token_to_image);
            let s = g.add(t, h);
            t = self.norm(g, s, &blk.ln2);

            let h = self.mlp(g, t, &blk.mlp);
            let s = g.add(t, h);
            t = self.norm(g, s, &blk.ln3);

            let q = g.add(img, ipe);
            let k = g.add(t, tokens0);
            let h = self.attend(g, q, k, t, &blk.image_to_token);
            let s = g.add(img, h);
            img = self.norm(g, s, &blk.ln4);
        }
        let q = g.add(t, tokens0);
        let k = g.add(img, ipe);
        let h = self.attend(g, q, k, img, &self.final_attn);
        let s = g.add(t, h);
        t = self.norm(g, s, &self.final_ln);

        let mask_token = g.slice_rows(t, 0, 1);
        let hyper = self.mlp(g, mask_token, &self.hyper);
        let tok_logits = g.matmul(img, hyper, false, true);
        let bias = self.p(g, self.mask_bias);
        let tok_logits = g.add_row(tok_logits, bias);
        let gsz = self.cfg.grid();
        let grid_logits = g.reshape(tok_logits, gsz, gsz);
        let up = g.constant(self.upsample.clone());
        let rows = g.matmul(up, grid_logits, false, false);
        let logits = g.matmul(rows, up, false, true);

        let iou = self.mlp(g, mask_token, &self.iou_head);
        let confidence = g.sigmoid(iou);
        Decoded { logits, confidence }
    }

    /// Memory features: pooled mask probabilities projected and added to the
    /// unconditioned frame tokens.
    pub fn encode_memory(&self, g: &mut Graph, logits: NodeId, frame: NodeId) -> NodeId {
        let probs = g.sigmoid(logits);
        let down = g.constant(self.downsample.clone());
        let rows = g.matmul(down, probs, false, false);
        let pooled = g.matmul(rows, down, false, true);
        let n = self.cfg.n_tokens();
        let col = g.reshape(pooled, n, 1);
        let w = self.p(g, self.mem_proj_w);
        let b = self.p(g, self.mem_proj_b);
        let feat = g.matmul(col, w, false, false);
        let feat = g.add_row(feat, b);
        g.add(frame, feat)
    }

    /// Unit-norm token mean of a token grid.
    pub fn pooled(tokens: &Tensor) -> Vec<f64> {
        let mut m = tokens.mean_rows();
        let n = crate::membank::norm(&m);
        if n > 0.0 {
            m.iter_mut().for_each(|v| *v /= n);
        } else if let Some(first) = m.first_mut() {
            *first = 1.0;
        }
        m
    }

    /// Bank entry for memory tokens already on the graph.
    pub fn memory_entry(&self, g: &Graph, tokens: NodeId, confidence: f64, source_index: usize) -> MemoryEntry<NodeId> {
        MemoryEntry::new(tokens, Self::pooled(g.value(tokens)), confidence, source_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_synthetic_map, SynthConfig};

    pub(crate) fn small_config() -> ModelConfig {
        ModelConfig {
            input_size: 32,
            patch: 8,
            d_model: 16,
            n_heads: 2,
            lora_rank: 2,
            ..ModelConfig::default()
        }
    }

    fn grid(seed: u64, size: usize) -> RasterGrid {
        let cfg = SynthConfig {
            rect_size_range: (3, 8),
            ..SynthConfig::default()
        };
        gen_synthetic_map(size, size, 2, &cfg, seed).unwrap().grid
    }

    #[test]
    fn trainable_lora_count_matches_rank_arithmetic() {
        let m = Model::new(ModelConfig::default()).unwrap();
        let p = m.params();
        let a = p.value(p.id("encoder.0.attn.q.lora_a").unwrap());
        let b = p.value(p.id("encoder.0.attn.q.lora_b").unwrap());
        assert_eq!(a.len() + b.len(), 4 * (32 + 32));
        assert_eq!(a.len() + b.len(), 256);
        assert_eq!(p.value(p.id("encoder.0.attn.q.w").unwrap()).len(), 1024);
        assert!(b.data.iter().all(|&v| v == 0.0));
        assert!(p.id("encoder.0.attn.k.lora_a").is_none());
    }

    #[test]
    fn lora_forward_zero_bypass() {
        let mut m = Model::new(small_config()).unwrap();
        let x = Tensor::from_vec(3, 16, (0..48).map(|i| (i as f64 * 0.31).cos()).collect()).unwrap();
        let layer = m.encoder[0].attn.q;
        let run = |m: &Model| {
            let mut g = Graph::new();
            let xn = g.constant(x.clone());
            let y = m.linear(&mut g, xn, &layer);
            g.value(y).clone()
        };
        let with = run(&m);
        m.lora_enabled = false;
        let base = run(&m);
        assert_eq!(with, base);

        // A = 0 with arbitrary B also reduces to the frozen map
        m.lora_enabled = true;
        let (a, b) = layer.lora.unwrap();
        m.params_mut().value_mut(a).data.iter_mut().for_each(|v| *v = 0.0);
        m.params_mut().value_mut(b).data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64);
        assert_eq!(run(&m), base);

        // nonzero factors give y = (W + BA) x + b
        m.params_mut().value_mut(a).data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sin());
        let got = run(&m);
        let p = m.params();
        let dw = super::super::tensor::gemm(false, false, p.value(b), p.value(a));
        let mut w = p.value(layer.w).clone();
        w.add_assign(&dw);
        let want = super::super::tensor::gemm(false, true, &x, &w);
        for (gv, wv) in got.data.iter().zip(&want.data) {
            assert!((gv - wv).abs() < 1e-9);
        }
    }

    #[test]
    fn encode_frame_shapes_and_determinism() {
        let m = Model::new(ModelConfig::default()).unwrap();
        let gr = grid(1, 128);
        let mut g = Graph::new();
        let a = m.encode_frame(&mut g, &gr).unwrap();
        let b = m.encode_frame(&mut g, &gr).unwrap();
        assert_eq!(g.value(a).shape(), (64, 32));
        assert_eq!(g.value(a), g.value(b));
        assert!(m.encode_frame(&mut g, &grid(1, 64)).is_err());
    }

    #[test]
    fn empty_memory_is_self_attention_path() {
        let m = Model::new(small_config()).unwrap();
        let mut g = Graph::new();
        let f = m.encode_frame(&mut g, &grid(2, 32)).unwrap();
        let e = m.memory_attention(&mut g, f, &[]);
        // build the self-attention + feed-forward path by hand
        let mut x = f;
        for blk in &m.memory {
            let h = m.norm(&mut g, x, &blk.ln_self);
            let h = m.attend(&mut g, h, h, h, &blk.self_attn);
            x = g.add(x, h);
            let h = m.norm(&mut g, x, &blk.ln_mlp);
            let h = m.mlp(&mut g, h, &blk.mlp);
            x = g.add(x, h);
        }
        assert_eq!(g.value(e), g.value(x));
        assert_eq!(g.value(e).shape(), g.value(f).shape());
    }

    #[test]
    fn duplicated_memories_match_single_copy() {
        let m = Model::new(small_config()).unwrap();
        let mut g = Graph::new();
        let f0 = m.encode_frame(&mut g, &grid(3, 32)).unwrap();
        let f1 = m.encode_frame(&mut g, &grid(4, 32)).unwrap();
        let one = m.memory_attention(&mut g, f1, &[f0]);
        let three = m.memory_attention(&mut g, f1, &[f0, f0, f0]);
        for (a, b) in g.value(one).data.iter().zip(&g.value(three).data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn box_prompt_contract() {
        let m = Model::new(ModelConfig::default()).unwrap();
        let mut g = Graph::new();
        let a = m.encode_box_prompt(&mut g, &BoxPrompt::new(3, 4, 50, 60)).unwrap();
        let b = m.encode_box_prompt(&mut g, &BoxPrompt::new(3, 4, 50, 60)).unwrap();
        assert_eq!(g.value(a), g.value(b));
        assert!(m.encode_box_prompt(&mut g, &BoxPrompt::new(50, 60, 3, 4)).is_err());
        assert!(m.encode_box_prompt(&mut g, &BoxPrompt::new(0, 0, 129, 10)).is_err());
        let full = m.encode_box_prompt(&mut g, &BoxPrompt::new(0, 0, 128, 128)).unwrap();
        let ty = m.params().value(m.corner_embed);
        let v = g.value(full);
        let pe0 = positional_encoding(0.0, 0.0, 32);
        let pe1 = positional_encoding(1.0, 1.0, 32);
        for c in 0..32 {
            assert_eq!(v.at(0, c), pe0[c] + ty.at(0, c));
            assert_eq!(v.at(1, c), pe1[c] + ty.at(1, c));
        }
    }

    #[test]
    fn decode_shapes_and_paths() {
        let m = Model::new(small_config()).unwrap();
        let mut g = Graph::new();
        let f = m.encode_frame(&mut g, &grid(5, 32)).unwrap();
        let e = m.memory_attention(&mut g, f, &[]);
        let free = m.decode_mask(&mut g, e, None);
        let p = m.encode_box_prompt(&mut g, &BoxPrompt::new(2, 2, 20, 12)).unwrap();
        let prompted = m.decode_mask(&mut g, e, Some(p));
        assert_eq!(g.value(free.logits).shape(), (32, 32));
        for d in [free, prompted] {
            let c = g.value(d.confidence).item();
            assert!((0.0..=1.0).contains(&c));
        }
        assert_ne!(g.value(free.logits), g.value(prompted.logits));
    }

    #[test]
    fn memory_encoder_contract() {
        let mut m = Model::new(small_config()).unwrap();
        let mut g = Graph::new();
        let f = m.encode_frame(&mut g, &grid(6, 32)).unwrap();
        // logits of -inf-like magnitude give zero probabilities
        let neg = g.constant(Tensor::from_vec(32, 32, vec![-1e4; 1024]).unwrap());
        let mem = m.encode_memory(&mut g, neg, f);
        assert_eq!(g.value(mem), g.value(f));
        let pooled = Model::pooled(g.value(mem));
        assert!((crate::membank::norm(&pooled) - 1.0).abs() < 1e-12);

        // constant mask downsamples to the same constant per token
        let w = m.mem_proj_w;
        m.params_mut().value_mut(w).data.iter_mut().for_each(|v| *v = 1.0);
        let mut g = Graph::new();
        let zero = g.constant(Tensor::zeros(16, 16));
        let half = g.constant(Tensor::zeros(32, 32));
        let mem = m.encode_memory(&mut g, half, zero);
        assert!(g.value(mem).data.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }
}
