//! The full dehazing network: band gating, encoder/decoder reconstruction with
//! input concatenation, and the alternating attention refinement stack.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{
    attention_backward, attention_forward, check_token_cap, AttentionCache, AttentionKind,
    AttentionProj,
};
use super::layers::{gelu_backward, gelu_map, Conv2d};
use super::tensor::{FeatureMap, Tensor};
use crate::error::{Error, Result};
use crate::hsi::HsiCube;
use crate::training::{LossReport, Objective};

/// Which refinement blocks follow the reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SseMode {
    /// No refinement: the output is the reconstruction itself.
    None,
    /// Four spectral blocks.
    SpectralOnly,
    /// Four spatial blocks.
    SpatialOnly,
    /// Spectral, spatial, spectral, spatial.
    Both,
}

impl SseMode {
    pub fn chain(self) -> Vec<AttentionKind> {
        use AttentionKind::*;
        match self {
            SseMode::None => vec![],
            SseMode::SpectralOnly => vec![Spectral; 4],
            SseMode::SpatialOnly => vec![Spatial; 4],
            SseMode::Both => vec![Spectral, Spatial, Spectral, Spatial],
        }
    }

    fn code(self) -> u8 {
        match self {
            SseMode::None => 0,
            SseMode::SpectralOnly => 1,
            SseMode::SpatialOnly => 2,
            SseMode::Both => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => SseMode::None,
            1 => SseMode::SpectralOnly,
            2 => SseMode::SpatialOnly,
            3 => SseMode::Both,
            _ => return None,
        })
    }
}

/// What the decoder output is concatenated with before the fusion conv.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConcatMode {
    None,
    /// The raw hazy input.
    Hazy,
    /// The band-gated input.
    Selected,
}

impl ConcatMode {
    fn code(self) -> u8 {
        match self {
            ConcatMode::None => 0,
            ConcatMode::Hazy => 1,
            ConcatMode::Selected => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => ConcatMode::None,
            1 => ConcatMode::Hazy,
            2 => ConcatMode::Selected,
            _ => return None,
        })
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub bands: usize,
    /// Band gating on/off. Off feeds the hazy cube straight to the encoder.
    pub abs: bool,
    pub encoder_width: usize,
    /// Channels of the encoder bottleneck.
    pub features: usize,
    pub decoder_widths: [usize; 2],
    /// Hidden width of each refinement FFN as a multiple of the band count.
    pub ffn_expansion: usize,
    pub sse: SseMode,
    pub concat: ConcatMode,
    /// Largest pixel count accepted by spatial attention.
    pub token_cap: usize,
    pub gate_init: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            bands: 172,
            abs: true,
            encoder_width: 64,
            features: 10,
            decoder_widths: [64, 128],
            ffn_expansion: 2,
            sse: SseMode::Both,
            concat: ConcatMode::Hazy,
            token_cap: 4096,
            gate_init: 0.1,
        }
    }
}

impl NetConfig {
    pub fn with_bands(bands: usize) -> Self {
        Self {
            bands,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.bands,
            self.encoder_width,
            self.features,
            self.decoder_widths[0],
            self.decoder_widths[1],
            self.ffn_expansion,
            self.token_cap,
        ];
        if widths.contains(&0) {
            return Err(Error::Parameter(format!(
                "network widths must be positive: {self:?}"
            )));
        }
        if self.concat == ConcatMode::Selected && !self.abs {
            return Err(Error::Parameter(
                "concatenating the gated input requires band gating".into(),
            ));
        }
        Ok(())
    }

    fn fuse_inputs(&self) -> usize {
        match self.concat {
            ConcatMode::None => self.bands,
            ConcatMode::Hazy | ConcatMode::Selected => 2 * self.bands,
        }
    }

    /// Architecture as a small float vector, stored in checkpoints.
    pub fn encode(&self) -> Vec<f64> {
        vec![
            self.bands as f64,
            f64::from(u8::from(self.abs)),
            self.encoder_width as f64,
            self.features as f64,
            self.decoder_widths[0] as f64,
            self.decoder_widths[1] as f64,
            self.ffn_expansion as f64,
            f64::from(self.sse.code()),
            f64::from(self.concat.code()),
            self.token_cap as f64,
        ]
    }

    pub fn decode(v: &[f64]) -> Result<Self> {
        let bad = || Error::Format(format!("malformed architecture record {v:?}"));
        if v.len() != 10 || v.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
            return Err(bad());
        }
        let u = |i: usize| v[i] as usize;
        let cfg = Self {
            bands: u(0),
            abs: v[1] != 0.0,
            encoder_width: u(2),
            features: u(3),
            decoder_widths: [u(4), u(5)],
            ffn_expansion: u(6),
            sse: SseMode::from_code(v[7] as u8).ok_or_else(bad)?,
            concat: ConcatMode::from_code(v[8] as u8).ok_or_else(bad)?,
            token_cap: u(9),
            gate_init: Self::default().gate_init,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One SpeR or SpaR block: attention plus a three-conv feed-forward stack.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineBlock {
    pub kind: AttentionKind,
    pub attention: AttentionProj,
    pub ffn: [Conv2d; 3],
}

/// Every learnable tensor of the network. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: NetConfig,
    /// Per-band gate, one scalar per band, no bias.
    pub abs_gate: Option<Tensor>,
    pub encoder: [Conv2d; 2],
    pub decoder: [Conv2d; 3],
    pub fuse: Conv2d,
    pub refine: Vec<RefineBlock>,
    pub refine_fuse: Option<Conv2d>,
}

impl ModelParams {
    /// All-zero parameters (the gate included).
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let c = config.bands;
        let ffn_w = c * config.ffn_expansion;
        Ok(Self {
            config: config.clone(),
            abs_gate: config.abs.then(|| Tensor::zeros(vec![c])),
            encoder: [
                Conv2d::zeros(c, config.encoder_width, 3),
                Conv2d::zeros(config.encoder_width, config.features, 3),
            ],
            decoder: [
                Conv2d::zeros(config.features, config.decoder_widths[0], 3),
                Conv2d::zeros(config.decoder_widths[0], config.decoder_widths[1], 3),
                Conv2d::zeros(config.decoder_widths[1], c, 3),
            ],
            fuse: Conv2d::zeros(config.fuse_inputs(), c, 3),
            refine: config
                .sse
                .chain()
                .into_iter()
                .map(|kind| RefineBlock {
                    kind,
                    attention: AttentionProj::zeros(c),
                    ffn: [
                        Conv2d::zeros(c, ffn_w, 3),
                        Conv2d::zeros(ffn_w, ffn_w, 3),
                        Conv2d::zeros(ffn_w, c, 3),
                    ],
                })
                .collect(),
            refine_fuse: (config.sse != SseMode::None).then(|| Conv2d::zeros(c, c, 3)),
        })
    }

    /// Fan-in uniform initialization; the gate starts at `config.gate_init` for every band.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let c = config.bands;
        let ffn_w = c * config.ffn_expansion;
        Ok(Self {
            config: config.clone(),
            abs_gate: config.abs.then(|| Tensor::filled(vec![c], config.gate_init)),
            encoder: [
                Conv2d::init(c, config.encoder_width, 3, rng),
                Conv2d::init(config.encoder_width, config.features, 3, rng),
            ],
            decoder: [
                Conv2d::init(config.features, config.decoder_widths[0], 3, rng),
                Conv2d::init(config.decoder_widths[0], config.decoder_widths[1], 3, rng),
                Conv2d::init(config.decoder_widths[1], c, 3, rng),
            ],
            fuse: Conv2d::init(config.fuse_inputs(), c, 3, rng),
            refine: config
                .sse
                .chain()
                .into_iter()
                .map(|kind| RefineBlock {
                    kind,
                    attention: AttentionProj::init(c, rng),
                    ffn: [
                        Conv2d::init(c, ffn_w, 3, rng),
                        Conv2d::init(ffn_w, ffn_w, 3, rng),
                        Conv2d::init(ffn_w, c, 3, rng),
                    ],
                })
                .collect(),
            refine_fuse: (config.sse != SseMode::None).then(|| Conv2d::init(c, c, 3, rng)),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        fn conv<'a>(name: String, c: &'a Conv2d, out: &mut Vec<(String, &'a Tensor)>) {
            out.push((format!("{name}.weight"), &c.weight));
            out.push((format!("{name}.bias"), &c.bias));
        }
        let mut items: Vec<(String, &Tensor)> = Vec::new();
        if let Some(g) = &self.abs_gate {
            items.push(("abs.gate".into(), g));
        }
        for (i, c) in self.encoder.iter().enumerate() {
            conv(format!("sr.encoder.{i}"), c, &mut items);
        }
        for (i, c) in self.decoder.iter().enumerate() {
            conv(format!("sr.decoder.{i}"), c, &mut items);
        }
        conv("sr.fuse".into(), &self.fuse, &mut items);
        for (i, b) in self.refine.iter().enumerate() {
            let p = format!("sse.{i}.{}", b.kind.tag());
            items.push((format!("{p}.query"), &b.attention.query));
            items.push((format!("{p}.key"), &b.attention.key));
            items.push((format!("{p}.value"), &b.attention.value));
            items.push((format!("{p}.output"), &b.attention.output));
            for (j, c) in b.ffn.iter().enumerate() {
                conv(format!("{p}.ffn.{j}"), c, &mut items);
            }
        }
        if let Some(c) = &self.refine_fuse {
            conv("sse.fuse".into(), c, &mut items);
        }
        items
    }

    /// Mutable tensors in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(g) = &mut self.abs_gate {
            out.push(g);
        }
        for c in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.fuse.weight);
        out.push(&mut self.fuse.bias);
        for b in &mut self.refine {
            out.push(&mut b.attention.query);
            out.push(&mut b.attention.key);
            out.push(&mut b.attention.value);
            out.push(&mut b.attention.output);
            for c in &mut b.ffn {
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
        }
        if let Some(c) = &mut self.refine_fuse {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rebuilds parameters from named tensors; every expected name must be present.
    pub fn from_named(config: &NetConfig, named: &[(String, Tensor)]) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let (_, t) = named
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Format(format!("missing parameter '{name}'")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok(params)
    }
}

fn check_input(params: &ModelParams, y: &HsiCube) -> Result<()> {
    if y.bands() != params.config.bands {
        return Err(Error::dim(format!(
            "input has {} bands, network expects {}",
            y.bands(),
            params.config.bands
        )));
    }
    Ok(())
}

/// `max(0, gate_c * Y_c)` per band.
pub fn abs_forward(y: &HsiCube, gate: &[f64]) -> Result<HsiCube> {
    if gate.len() != y.bands() {
        return Err(Error::dim(format!(
            "gate has {} weights for {} bands",
            gate.len(),
            y.bands()
        )));
    }
    let x = gate_map(&FeatureMap::from_cube(y), gate);
    x.to_cube()
}

fn gate_map(y: &FeatureMap, gate: &[f64]) -> FeatureMap {
    let n = y.pixels();
    let mut out = y.clone();
    for (c, &g) in gate.iter().enumerate() {
        out.data[c * n..(c + 1) * n]
            .iter_mut()
            .for_each(|v| *v = (g * *v).max(0.0));
    }
    out
}

/// Conv then GeLU, keeping the pre-activation.
struct Activated {
    pre: FeatureMap,
    post: FeatureMap,
}

fn conv_gelu(conv: &Conv2d, x: &FeatureMap, layer: &str) -> Result<Activated> {
    let pre = conv.forward(x);
    pre.check_finite(layer)?;
    let post = gelu_map(&pre);
    Ok(Activated { pre, post })
}

/// Encoder: two conv+GeLU layers down to the feature bottleneck.
pub fn sr_encode(ys: &HsiCube, params: &ModelParams) -> Result<FeatureMap> {
    check_input(params, ys)?;
    let x = FeatureMap::from_cube(ys);
    let e0 = conv_gelu(&params.encoder[0], &x, "sr.encoder.0")?;
    Ok(conv_gelu(&params.encoder[1], &e0.post, "sr.encoder.1")?.post)
}

/// Decoder (three conv+GeLU), concatenation, and the fusion conv.
///
/// `skip` is what gets concatenated: the hazy cube or the gated cube,
/// depending on the configuration. It is ignored when concatenation is off.
pub fn sr_decode(features: &FeatureMap, skip: &HsiCube, params: &ModelParams) -> Result<HsiCube> {
    if features.height != skip.height() || features.width != skip.width() {
        return Err(Error::dim(format!(
            "features {}x{} vs input {}x{}",
            features.height,
            features.width,
            skip.height(),
            skip.width()
        )));
    }
    check_input(params, skip)?;
    let (x_pre, _) = decode_cached(features, &FeatureMap::from_cube(skip), params)?;
    x_pre.to_cube()
}

struct DecodeCache {
    layers: Vec<Activated>,
    fuse_in: FeatureMap,
}

fn decode_cached(
    s: &FeatureMap,
    skip: &FeatureMap,
    params: &ModelParams,
) -> Result<(FeatureMap, DecodeCache)> {
    let d0 = conv_gelu(&params.decoder[0], s, "sr.decoder.0")?;
    let d1 = conv_gelu(&params.decoder[1], &d0.post, "sr.decoder.1")?;
    let d2 = conv_gelu(&params.decoder[2], &d1.post, "sr.decoder.2")?;
    let fuse_in = match params.config.concat {
        ConcatMode::None => d2.post.clone(),
        ConcatMode::Hazy | ConcatMode::Selected => d2.post.concat(skip),
    };
    let x_pre = params.fuse.forward(&fuse_in);
    x_pre.check_finite("sr.fuse")?;
    Ok((
        x_pre,
        DecodeCache {
            layers: vec![d0, d1, d2],
            fuse_in,
        },
    ))
}

struct BlockCache {
    input: FeatureMap,
    attention: AttentionCache,
    mid: FeatureMap,
    ffn: [Activated; 2],
}

fn block_forward(block: &RefineBlock, x: &FeatureMap, index: usize) -> Result<(FeatureMap, BlockCache)> {
    let layer = format!("sse.{index}.{}", block.kind.tag());
    let (a, attention) = attention_forward(block.kind, x, &block.attention);
    a.check_finite(&layer)?;
    let mid = a.add(x);
    let h0 = conv_gelu(&block.ffn[0], &mid, &format!("{layer}.ffn.0"))?;
    let h1 = conv_gelu(&block.ffn[1], &h0.post, &format!("{layer}.ffn.1"))?;
    let f = block.ffn[2].forward(&h1.post);
    f.check_finite(&format!("{layer}.ffn.2"))?;
    let out = f.add(&mid);
    Ok((
        out,
        BlockCache {
            input: x.clone(),
            attention,
            mid,
            ffn: [h0, h1],
        },
    ))
}

fn block_backward(block: &RefineBlock, cache: &BlockCache, dy: &FeatureMap, grad: &mut RefineBlock) -> FeatureMap {
    let [h0, h1] = &cache.ffn;
    // out = ffn(mid) + mid
    let d_h1 = block.ffn[2].backward(&h1.post, dy, &mut grad.ffn[2]);
    let d_h1 = gelu_backward(&h1.pre, &d_h1);
    let d_h0 = block.ffn[1].backward(&h0.post, &d_h1, &mut grad.ffn[1]);
    let d_h0 = gelu_backward(&h0.pre, &d_h0);
    let mut d_mid = block.ffn[0].backward(&cache.mid, &d_h0, &mut grad.ffn[0]);
    d_mid.add_assign(dy);
    // mid = attention(x) + x
    let mut dx = attention_backward(
        block.kind,
        &cache.input,
        &block.attention,
        &cache.attention,
        &d_mid,
        &mut grad.attention,
    );
    dx.add_assign(&d_mid);
    dx
}

/// Spectral refinement block `FFN(A + X) + (A + X)` with spectral attention `A`.
pub fn spe_r(x: &FeatureMap, block: &RefineBlock) -> Result<FeatureMap> {
    refine_one(x, block, AttentionKind::Spectral)
}

/// Spatial refinement block `FFN(A + X) + (A + X)` with spatial attention `A`.
pub fn spa_r(x: &FeatureMap, block: &RefineBlock, token_cap: usize) -> Result<FeatureMap> {
    check_token_cap(x, token_cap)?;
    refine_one(x, block, AttentionKind::Spatial)
}

fn refine_one(x: &FeatureMap, block: &RefineBlock, kind: AttentionKind) -> Result<FeatureMap> {
    let block = RefineBlock {
        kind,
        ..block.clone()
    };
    Ok(block_forward(&block, x, 0)?.0)
}

/// Three-conv feed-forward stack with GeLU after the first two.
pub fn ffn(x: &FeatureMap, convs: &[Conv2d; 3]) -> Result<FeatureMap> {
    let h0 = conv_gelu(&convs[0], x, "ffn.0")?;
    let h1 = conv_gelu(&convs[1], &h0.post, "ffn.1")?;
    Ok(convs[2].forward(&h1.post))
}

struct SseCache {
    blocks: Vec<BlockCache>,
    refined: FeatureMap,
}

fn sse_cached(
    x_pre: &FeatureMap,
    params: &ModelParams,
    trace: &mut Vec<AttentionKind>,
) -> Result<(FeatureMap, Option<SseCache>)> {
    let Some(fuse) = &params.refine_fuse else {
        return Ok((x_pre.clone(), None));
    };
    if params.refine.iter().any(|b| b.kind == AttentionKind::Spatial) {
        check_token_cap(x_pre, params.config.token_cap)?;
    }
    let mut h = x_pre.clone();
    let mut blocks = Vec::with_capacity(params.refine.len());
    for (i, block) in params.refine.iter().enumerate() {
        trace.push(block.kind);
        let (next, cache) = block_forward(block, &h, i)?;
        blocks.push(cache);
        h = next;
    }
    let mut out = fuse.forward(&h);
    out.check_finite("sse.fuse")?;
    out.add_assign(x_pre);
    Ok((out, Some(SseCache { blocks, refined: h })))
}

/// Refinement stack followed by a 3×3 conv and the outer residual.
pub fn sse_forward(x_pre: &HsiCube, params: &ModelParams) -> Result<HsiCube> {
    Ok(sse_forward_traced(x_pre, params)?.0)
}

/// Like [`sse_forward`], also returning the attention kind of each block in execution order.
pub fn sse_forward_traced(x_pre: &HsiCube, params: &ModelParams) -> Result<(HsiCube, Vec<AttentionKind>)> {
    check_input(params, x_pre)?;
    let mut trace = Vec::new();
    let (out, _) = sse_cached(&FeatureMap::from_cube(x_pre), params, &mut trace)?;
    Ok((out.to_cube()?, trace))
}

/// Activations of one forward pass, kept for [`backward_pass`].
pub struct ForwardCache {
    input: FeatureMap,
    selected: FeatureMap,
    encoder: Vec<Activated>,
    decode: DecodeCache,
    x_pre: FeatureMap,
    sse: Option<SseCache>,
    output: FeatureMap,
    trace: Vec<AttentionKind>,
}

impl ForwardCache {
    pub fn output(&self) -> &FeatureMap {
        &self.output
    }

    /// Output of the band gate (the input itself when gating is off).
    pub fn selected(&self) -> &FeatureMap {
        &self.selected
    }

    pub fn reconstruction(&self) -> &FeatureMap {
        &self.x_pre
    }

    pub fn trace(&self) -> &[AttentionKind] {
        &self.trace
    }
}

pub fn forward_cached(y: &HsiCube, params: &ModelParams) -> Result<ForwardCache> {
    check_input(params, y)?;
    let input = FeatureMap::from_cube(y);
    let selected = match &params.abs_gate {
        Some(g) => gate_map(&input, g.data()),
        None => input.clone(),
    };
    selected.check_finite("abs")?;
    let e0 = conv_gelu(&params.encoder[0], &selected, "sr.encoder.0")?;
    let e1 = conv_gelu(&params.encoder[1], &e0.post, "sr.encoder.1")?;
    let skip = match params.config.concat {
        ConcatMode::Selected => &selected,
        _ => &input,
    };
    let (x_pre, decode) = decode_cached(&e1.post, skip, params)?;
    let mut trace = Vec::new();
    let (output, sse) = sse_cached(&x_pre, params, &mut trace)?;
    Ok(ForwardCache {
        input,
        selected,
        encoder: vec![e0, e1],
        decode,
        x_pre,
        sse,
        output,
        trace,
    })
}

/// Full network: refinement of the reconstruction from the gated input.
pub fn forward(y: &HsiCube, params: &ModelParams) -> Result<HsiCube> {
    forward_cached(y, params)?.output.to_cube()
}

/// Back-propagates `d_output` (and an optional extra gradient on the gate
/// output, from the sparsity term) through a cached forward pass.
pub fn backward_pass(
    params: &ModelParams,
    cache: &ForwardCache,
    d_output: &FeatureMap,
    d_selected_extra: Option<&FeatureMap>,
) -> Result<ModelParams> {
    let mut grad = params.zeros_like();

    let mut d_x_pre = d_output.clone();
    if let (Some(sse), Some(fuse)) = (&cache.sse, &params.refine_fuse) {
        let g_fuse = grad.refine_fuse.as_mut().expect("gradient mirrors params");
        let mut dh = fuse.backward(&sse.refined, d_output, g_fuse);
        for (i, block) in params.refine.iter().enumerate().rev() {
            dh = block_backward(block, &sse.blocks[i], &dh, &mut grad.refine[i]);
        }
        d_x_pre.add_assign(&dh);
    }
    d_x_pre.check_finite("backward sse")?;

    let d_fuse_in = params.fuse.backward(&cache.decode.fuse_in, &d_x_pre, &mut grad.fuse);
    let c = params.config.bands;
    let (d_dec_out, d_skip) = match params.config.concat {
        ConcatMode::None => (d_fuse_in, None),
        _ => {
            let dec_ch = params.decoder[2].output_channels();
            debug_assert_eq!(dec_ch, c);
            let (a, b) = d_fuse_in.split_at(dec_ch);
            (a, Some(b))
        }
    };
    let [d0, d1, d2] = [&cache.decode.layers[0], &cache.decode.layers[1], &cache.decode.layers[2]];
    let g = gelu_backward(&d2.pre, &d_dec_out);
    let g = params.decoder[2].backward(&d1.post, &g, &mut grad.decoder[2]);
    let g = gelu_backward(&d1.pre, &g);
    let g = params.decoder[1].backward(&d0.post, &g, &mut grad.decoder[1]);
    let g = gelu_backward(&d0.pre, &g);
    let features = &cache.encoder[1].post;
    let g = params.decoder[0].backward(features, &g, &mut grad.decoder[0]);
    g.check_finite("backward decoder")?;

    let [e0, e1] = [&cache.encoder[0], &cache.encoder[1]];
    let g = gelu_backward(&e1.pre, &g);
    let g = params.encoder[1].backward(&e0.post, &g, &mut grad.encoder[1]);
    let g = gelu_backward(&e0.pre, &g);
    let mut d_selected = params.encoder[0].backward(&cache.selected, &g, &mut grad.encoder[0]);
    if params.config.concat == ConcatMode::Selected {
        d_selected.add_assign(d_skip.as_ref().expect("concat gradient present"));
    }
    if let Some(extra) = d_selected_extra {
        d_selected.add_assign(extra);
    }

    if let (Some(gate), Some(g_gate)) = (&params.abs_gate, grad.abs_gate.as_mut()) {
        let n = cache.input.pixels();
        for (ch, (&w, gw)) in gate.data().iter().zip(g_gate.data_mut()).enumerate() {
            let yin = cache.input.channel(ch);
            let dsel = d_selected.channel(ch);
            *gw = yin
                .iter()
                .zip(dsel)
                .filter(|(&v, _)| w * v > 0.0)
                .map(|(&v, &d)| v * d)
                .sum::<f64>();
            debug_assert_eq!(yin.len(), n);
        }
    }
    for (name, t) in grad.tensors() {
        if let Some(v) = t.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(name, format!("non-finite gradient {v}")));
        }
    }
    Ok(grad)
}

/// Loss and exact gradient of every parameter for one (hazy, clean) pair.
pub fn backward(
    y: &HsiCube,
    target: &HsiCube,
    params: &ModelParams,
    objective: &Objective,
) -> Result<(LossReport, ModelParams)> {
    target.check_same_shape(y, "target")?;
    let cache = forward_cached(y, params)?;
    let estimate = cache.output.to_cube()?;
    let with_sparsity = objective.sparsity && params.abs_gate.is_some();
    let selected = cache.selected.to_cube()?;
    let report = objective.loss(target, &estimate, with_sparsity.then_some(&selected))?;
    if !report.total.is_finite() {
        return Err(Error::numeric("loss", format!("non-finite loss {}", report.total)));
    }
    let d_out = FeatureMap::from_data(
        cache.output.channels,
        cache.output.height,
        cache.output.width,
        objective.rmrae_gradient(target, &estimate),
    )?;
    let d_sel = if with_sparsity {
        Some(FeatureMap::from_data(
            cache.selected.channels,
            cache.selected.height,
            cache.selected.width,
            objective.sparsity_gradient(&selected),
        )?)
    } else {
        None
    };
    let grads = backward_pass(params, &cache, &d_out, d_sel.as_ref())?;
    Ok((report, grads))
}
