use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{ToyModelConfig, EMBED_PATCH};
use super::window::WindowLayout;
use crate::adapters::{AdaptedLinear, AdapterSpec, LinearLayer, Variant};
use crate::autodiff::{ParamPartition, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::metrics::{voxel_index, Volume};

const NORM_EPS: f64 = 1e-5;

/// Affine part of a layer norm; `gamma` and `beta` are `d×1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub gamma: Matrix,
    pub beta: Matrix,
}

impl NormParams {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Matrix::filled(d, 1, 1.0),
            beta: Matrix::zeros(d, 1),
        }
    }

    fn forward(&self, tape: &mut Tape, prefix: &str, x: Var) -> Result<Var> {
        let g = tape.param(&format!("{prefix}.gamma"), &self.gamma);
        let b = tape.param(&format!("{prefix}.beta"), &self.beta);
        let n = tape.layer_norm(x, NORM_EPS);
        let s = tape.mul_cols(n, g)?;
        tape.add_bias(s, b)
    }
}

/// Attachment role of a linear layer inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Q,
    K,
    V,
    O,
    Mlp1,
    Mlp2,
}

impl Role {
    pub const ALL: [Role; 6] = [Role::Q, Role::K, Role::V, Role::O, Role::Mlp1, Role::Mlp2];

    pub fn key(self) -> &'static str {
        match self {
            Role::Q => "q",
            Role::K => "k",
            Role::V => "v",
            Role::O => "o",
            Role::Mlp1 => "mlp1",
            Role::Mlp2 => "mlp2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: String,
    pub role: Role,
    /// `(m, n)`: output and input width.
    pub shape: (usize, usize),
}

/// The linear layers adapters may wrap. Decoder layers never appear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachmentRegistry {
    pub entries: Vec<RegistryEntry>,
}

impl AttachmentRegistry {
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|e| e.shape).collect()
    }
}

/// One windowed-attention block: pre-norm attention and pre-norm MLP, each
/// with a residual connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwinBlock {
    pub norm1: NormParams,
    pub q: AdaptedLinear,
    pub k: AdaptedLinear,
    pub v: AdaptedLinear,
    pub o: AdaptedLinear,
    pub norm2: NormParams,
    pub mlp1: AdaptedLinear,
    pub mlp2: AdaptedLinear,
    pub shifted: bool,
}

impl SwinBlock {
    pub fn new(d: usize, mlp_ratio: usize, shifted: bool, rng: &mut Rng) -> Self {
        let lin = |m, n, rng: &mut Rng| AdaptedLinear::plain(LinearLayer::kaiming(m, n, rng));
        Self {
            norm1: NormParams::new(d),
            q: lin(d, d, rng),
            k: lin(d, d, rng),
            v: lin(d, d, rng),
            o: lin(d, d, rng),
            norm2: NormParams::new(d),
            mlp1: lin(mlp_ratio * d, d, rng),
            mlp2: lin(d, mlp_ratio * d, rng),
            shifted,
        }
    }

    pub fn layer(&self, role: Role) -> &AdaptedLinear {
        match role {
            Role::Q => &self.q,
            Role::K => &self.k,
            Role::V => &self.v,
            Role::O => &self.o,
            Role::Mlp1 => &self.mlp1,
            Role::Mlp2 => &self.mlp2,
        }
    }

    pub fn layer_mut(&mut self, role: Role) -> &mut AdaptedLinear {
        match role {
            Role::Q => &mut self.q,
            Role::K => &mut self.k,
            Role::V => &mut self.v,
            Role::O => &mut self.o,
            Role::Mlp1 => &mut self.mlp1,
            Role::Mlp2 => &mut self.mlp2,
        }
    }

    /// Records the block on `tape`. `x` holds one token per row in grid order.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        prefix: &str,
        grid: [usize; 3],
        window: [usize; 3],
        heads: usize,
        x: Var,
    ) -> Result<Var> {
        let layout = WindowLayout::new(grid, window, self.shifted)?;
        let h = self.norm1.forward(tape, &format!("{prefix}.norm1"), x)?;
        let attn = window_attention_tape(tape, prefix, [&self.q, &self.k, &self.v, &self.o], &layout, heads, h)?;
        let x1 = tape.add(x, attn)?;
        let h2 = self.norm2.forward(tape, &format!("{prefix}.norm2"), x1)?;
        let m = adapted_forward(tape, &format!("{prefix}.mlp1"), &self.mlp1, h2)?;
        let m = tape.relu(m);
        let m = adapted_forward(tape, &format!("{prefix}.mlp2"), &self.mlp2, m)?;
        tape.add(x1, m)
    }
}

/// Multi-head self-attention within each window of `layout`, followed by
/// the O projection. `qkvo` are the four projections in that order.
pub(crate) fn window_attention_tape(
    tape: &mut Tape,
    prefix: &str,
    qkvo: [&AdaptedLinear; 4],
    layout: &WindowLayout,
    heads: usize,
    x: Var,
) -> Result<Var> {
    let (t, d) = tape.value(x).shape();
    if t != layout.forward.len() {
        return Err(Error::Shape(format!("{t} tokens for a grid of {:?}", layout.grid)));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Shape(format!("width {d} not divisible into {heads} heads")));
    }
    let dh = d / heads;
    let n = layout.tokens_per_window();
    let xp = tape.gather_rows(x, layout.forward.clone())?;
    let q = adapted_forward(tape, &format!("{prefix}.q"), qkvo[0], xp)?;
    let k = adapted_forward(tape, &format!("{prefix}.k"), qkvo[1], xp)?;
    let v = adapted_forward(tape, &format!("{prefix}.v"), qkvo[2], xp)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut windows = Vec::with_capacity(layout.windows());
    for w in 0..layout.windows() {
        let mut per_head = Vec::with_capacity(heads);
        for h in 0..heads {
            let qs = tape.slice(q, w * n, n, h * dh, dh)?;
            let ks = tape.slice(k, w * n, n, h * dh, dh)?;
            let vs = tape.slice(v, w * n, n, h * dh, dh)?;
            let s = tape.matmul_t(qs, ks)?;
            let s = tape.scale(s, scale);
            let a = tape.softmax_rows(s);
            per_head.push(tape.matmul(a, vs)?);
        }
        windows.push(tape.concat_cols(&per_head)?);
    }
    let merged = tape.concat_rows(&windows)?;
    let restored = tape.gather_rows(merged, layout.inverse.clone())?;
    adapted_forward(tape, &format!("{prefix}.o"), qkvo[3], restored)
}

/// Window attention on a token matrix, outside any training graph.
pub fn window_attention(
    tokens: &Matrix,
    qkvo: [&AdaptedLinear; 4],
    grid: [usize; 3],
    window: [usize; 3],
    heads: usize,
    shifted: bool,
) -> Result<Matrix> {
    let layout = WindowLayout::new(grid, window, shifted)?;
    let none = BTreeSet::new();
    let mut tape = Tape::with_trainable(&none);
    let x = tape.input(tokens.clone());
    let out = window_attention_tape(&mut tape, "attn", qkvo, &layout, heads, x)?;
    Ok(tape.value(out).clone())
}

/// Records an adapted linear layer applied to each row of `x`. Parameter
/// names are `<prefix>.<param>` with the names of [`AdaptedLinear::params`].
pub fn adapted_forward(tape: &mut Tape, prefix: &str, l: &AdaptedLinear, x: Var) -> Result<Var> {
    let p = |s: &str| format!("{prefix}.{s}");
    let b = tape.param(&p("b"), &l.base.b);
    let h = match &l.pissa {
        Some(split) => {
            let res = tape.param(&p("pissa.res"), &split.w_res);
            let up = tape.param(&p("pissa.up"), &split.w_pri_up);
            let down = tape.param(&p("pissa.down"), &split.w_pri_down);
            let r = tape.matmul_t(x, res)?;
            let z = tape.matmul_t(x, down)?;
            let z = tape.matmul_t(z, up)?;
            tape.add(r, z)?
        }
        None => {
            let w = tape.param(&p("w"), &l.base.w);
            tape.matmul_t(x, w)?
        }
    };
    let h = tape.add_bias(h, b)?;
    let mut out = h;
    if let Some(lora) = &l.lora {
        let down = tape.param(&p("lora.a_down"), &lora.a_down);
        let up = tape.param(&p("lora.a_up"), &lora.a_up);
        let z = tape.matmul_t(x, down)?;
        let z = tape.relu(z);
        let z = tape.matmul_t(z, up)?;
        let z = tape.scale(z, lora.scale);
        out = tape.add(out, z)?;
    }
    if let Some(seq) = &l.seq {
        let down = tape.param(&p("seq.b_down"), &seq.b_down);
        let up = tape.param(&p("seq.b_up"), &seq.b_up);
        let z = tape.matmul_t(h, down)?;
        let z = tape.relu(z);
        let z = tape.matmul_t(z, up)?;
        let z = tape.scale(z, seq.scale);
        out = tape.add(out, z)?;
    }
    Ok(out)
}

fn linear_forward(tape: &mut Tape, prefix: &str, l: &LinearLayer, x: Var) -> Result<Var> {
    let w = tape.param(&format!("{prefix}.w"), &l.w);
    let b = tape.param(&format!("{prefix}.b"), &l.b);
    let h = tape.matmul_t(x, w)?;
    tape.add_bias(h, b)
}

/// Pointwise decoder: fuse encoder output with the embedding skip, upsample
/// to voxels, append the raw intensity, then two per-voxel layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub fuse: LinearLayer,
    pub refine: LinearLayer,
    pub head: LinearLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Group {
    Encoder,
    Registry(bool),
    Decoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub config: ToyModelConfig,
    pub embed: LinearLayer,
    pub blocks: Vec<SwinBlock>,
    pub decoder: Decoder,
    /// Tuning mode the parameters are partitioned under. A freshly built
    /// model trains everything.
    pub variant: Variant,
}

/// Builds a randomly initialized model. All linear weights are
/// Kaiming-normal, biases zero, norms identity.
pub fn build_model(config: &ToyModelConfig, rng: &mut Rng) -> Result<ToyModel> {
    config.validate()?;
    let d = config.embed_dim;
    let voxels_per_token = EMBED_PATCH.pow(3);
    let embed = LinearLayer::kaiming(d, voxels_per_token, rng);
    let mut blocks = Vec::new();
    for &depth in &config.depths {
        for i in 0..depth {
            blocks.push(SwinBlock::new(d, config.mlp_ratio, i % 2 == 1, rng));
        }
    }
    let h = config.decoder_hidden;
    let decoder = Decoder {
        fuse: LinearLayer::kaiming(d, 2 * d, rng),
        refine: LinearLayer::kaiming(h, d + 1, rng),
        head: LinearLayer::kaiming(1, h, rng),
    };
    Ok(ToyModel {
        config: config.clone(),
        embed,
        blocks,
        decoder,
        variant: Variant::FullTuning,
    })
}

/// Wraps every registry layer of `model` per `spec` and returns the
/// resulting partition.
///
/// Low-rank variants train their adapter factors and the decoder. Linear
/// probing trains the registry layers' own weights and the decoder. Full
/// tuning trains everything.
pub fn attach_adapters(model: &ToyModel, spec: &AdapterSpec, rng: &mut Rng) -> Result<(ToyModel, ParamPartition)> {
    let mut out = model.clone();
    for (i, block) in out.blocks.iter_mut().enumerate() {
        for role in Role::ALL {
            let name = format!("enc.{i}.{}", role.key());
            let layer = block.layer_mut(role);
            let base = LinearLayer {
                frozen: false,
                ..layer.base.clone()
            };
            *layer = AdaptedLinear::attach(base, *spec, &name, rng)?;
        }
    }
    out.variant = spec.variant;
    let partition = out.partition();
    Ok((out, partition))
}

impl ToyModel {
    pub fn grid(&self) -> [usize; 3] {
        [self.config.grid(); 3]
    }

    pub fn window(&self) -> [usize; 3] {
        [self.config.window; 3]
    }

    pub fn registry(&self) -> AttachmentRegistry {
        let mut entries = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            for role in Role::ALL {
                let l = block.layer(role);
                entries.push(RegistryEntry {
                    name: format!("enc.{i}.{}", role.key()),
                    role,
                    shape: (l.out_dim(), l.in_dim()),
                });
            }
        }
        AttachmentRegistry { entries }
    }

    fn walk(&self) -> Vec<(String, &Matrix, Group)> {
        let mut out = vec![
            ("embed.w".to_string(), &self.embed.w, Group::Encoder),
            ("embed.b".to_string(), &self.embed.b, Group::Encoder),
        ];
        for (i, block) in self.blocks.iter().enumerate() {
            for (key, n) in [("norm1", &block.norm1), ("norm2", &block.norm2)] {
                out.push((format!("enc.{i}.{key}.gamma"), &n.gamma, Group::Encoder));
                out.push((format!("enc.{i}.{key}.beta"), &n.beta, Group::Encoder));
            }
            for role in Role::ALL {
                for (p, m, trainable) in block.layer(role).params() {
                    out.push((format!("enc.{i}.{}.{p}", role.key()), m, Group::Registry(trainable)));
                }
            }
        }
        for (key, l) in [
            ("fuse", &self.decoder.fuse),
            ("refine", &self.decoder.refine),
            ("head", &self.decoder.head),
        ] {
            out.push((format!("dec.{key}.w"), &l.w, Group::Decoder));
            out.push((format!("dec.{key}.b"), &l.b, Group::Decoder));
        }
        out
    }

    /// Every parameter matrix with its name, in a fixed order.
    pub fn params(&self) -> Vec<(String, &Matrix)> {
        self.walk().into_iter().map(|(n, m, _)| (n, m)).collect()
    }

    /// Mutable view in the same order as [`ToyModel::params`].
    pub fn params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out: Vec<(String, &mut Matrix)> = vec![
            ("embed.w".to_string(), &mut self.embed.w),
            ("embed.b".to_string(), &mut self.embed.b),
        ];
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let SwinBlock {
                norm1,
                q,
                k,
                v,
                o,
                norm2,
                mlp1,
                mlp2,
                ..
            } = block;
            for (key, n) in [("norm1", norm1), ("norm2", norm2)] {
                out.push((format!("enc.{i}.{key}.gamma"), &mut n.gamma));
                out.push((format!("enc.{i}.{key}.beta"), &mut n.beta));
            }
            for (role, l) in Role::ALL.into_iter().zip([q, k, v, o, mlp1, mlp2]) {
                for (p, m) in l.params_mut() {
                    out.push((format!("enc.{i}.{}.{p}", role.key()), m));
                }
            }
        }
        let Decoder { fuse, refine, head } = &mut self.decoder;
        for (key, l) in [("fuse", fuse), ("refine", refine), ("head", head)] {
            out.push((format!("dec.{key}.w"), &mut l.w));
            out.push((format!("dec.{key}.b"), &mut l.b));
        }
        out
    }

    pub fn param(&self, name: &str) -> Option<&Matrix> {
        self.walk().into_iter().find(|(n, _, _)| n == name).map(|(_, m, _)| m)
    }

    /// Scalar count of all parameters.
    pub fn param_count(&self) -> usize {
        self.walk().iter().map(|(_, m, _)| m.len()).sum()
    }

    pub fn decoder_param_count(&self) -> usize {
        self.walk()
            .iter()
            .filter(|(_, _, g)| *g == Group::Decoder)
            .map(|(_, m, _)| m.len())
            .sum()
    }

    /// Trainable/frozen split implied by [`ToyModel::variant`].
    pub fn partition(&self) -> ParamPartition {
        let full = self.variant == Variant::FullTuning;
        let mut p = ParamPartition::default();
        for (name, _, group) in self.walk() {
            let trainable = full
                || match group {
                    Group::Encoder => false,
                    Group::Registry(t) => t,
                    Group::Decoder => true,
                };
            if trainable {
                p.trainable.insert(name);
            } else {
                p.frozen.insert(name);
            }
        }
        p
    }

    fn check_input(&self, image: &Volume) -> Result<()> {
        let p = self.config.patch;
        if image.dims() != [p; 3] {
            return Err(Error::Shape(format!("model expects a {p}³ patch, got {:?}", image.dims())));
        }
        Ok(())
    }

    /// Records the full forward pass; the result is a `patch³×1` node of
    /// per-voxel foreground probabilities in voxel order.
    pub fn forward_tape(&self, tape: &mut Tape, image: &Volume) -> Result<Var> {
        self.check_input(image)?;
        let p = self.config.patch;
        let g = self.config.grid();
        let dims = [p; 3];
        let k = EMBED_PATCH;
        let tokens = g * g * g;
        let mut patches = Vec::with_capacity(tokens * k * k * k);
        for tz in 0..g {
            for ty in 0..g {
                for tx in 0..g {
                    for dz in 0..k {
                        for dy in 0..k {
                            for dx in 0..k {
                                patches.push(image.get(tx * k + dx, ty * k + dy, tz * k + dz));
                            }
                        }
                    }
                }
            }
        }
        let x = tape.input(Matrix::new(tokens, k * k * k, patches)?);
        let e = linear_forward(tape, "embed", &self.embed, x)?;
        let mut z = e;
        for (i, block) in self.blocks.iter().enumerate() {
            z = block.forward_tape(tape, &format!("enc.{i}"), self.grid(), self.window(), self.config.heads, z)?;
        }
        let fused = tape.concat_cols(&[z, e])?;
        let fused = linear_forward(tape, "dec.fuse", &self.decoder.fuse, fused)?;
        let fused = tape.relu(fused);
        let up = tape.gather_rows(fused, upsample_index(p, k))?;
        let raw = tape.input(Matrix::new(image.len(), 1, image.data().to_vec())?);
        let cat = tape.concat_cols(&[up, raw])?;
        let h = linear_forward(tape, "dec.refine", &self.decoder.refine, cat)?;
        let h = tape.relu(h);
        let logits = linear_forward(tape, "dec.head", &self.decoder.head, h)?;
        debug_assert_eq!(tape.value(logits).rows(), dims.iter().product::<usize>());
        Ok(tape.sigmoid(logits))
    }

    /// Probability volume for one `patch³` input.
    pub fn forward(&self, image: &Volume) -> Result<Volume> {
        let none = BTreeSet::new();
        let mut tape = Tape::with_trainable(&none);
        let out = self.forward_tape(&mut tape, image)?;
        Volume::new(image.dims(), image.spacing(), tape.value(out).as_slice().to_vec())
    }
}

/// Row `v` is the token containing voxel `v`.
fn upsample_index(patch: usize, k: usize) -> Arc<Vec<usize>> {
    let g = patch / k;
    let dims = [patch; 3];
    let mut idx = vec![0; patch * patch * patch];
    for z in 0..patch {
        for y in 0..patch {
            for x in 0..patch {
                idx[voxel_index(dims, x, y, z)] = voxel_index([g; 3], x / k, y / k, z / k);
            }
        }
    }
    Arc::new(idx)
}
