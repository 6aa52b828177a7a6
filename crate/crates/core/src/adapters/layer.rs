use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kaiming_init, relu, svd, Matrix, Rng};

/// A pretrained linear layer `y = Wx + b`, `W: m×n`, `b: m×1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub w: Matrix,
    pub b: Matrix,
    pub frozen: bool,
}

impl LinearLayer {
    pub fn new(w: Matrix, b: Matrix) -> Result<Self> {
        if b.cols() != 1 || b.rows() != w.rows() {
            return Err(Error::Shape(format!(
                "bias must be {}x1 for a {}x{} weight, got {}x{}",
                w.rows(),
                w.rows(),
                w.cols(),
                b.rows(),
                b.cols()
            )));
        }
        Ok(Self { w, b, frozen: false })
    }

    /// Kaiming-initialized weight, zero bias.
    pub fn kaiming(out_dim: usize, in_dim: usize, rng: &mut Rng) -> Self {
        Self {
            w: kaiming_init(out_dim, in_dim, rng),
            b: Matrix::zeros(out_dim, 1),
            frozen: false,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    /// `Wx + b` for a column `x`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let y = self.w.matmul(x)?;
        if y.cols() != 1 {
            return Err(Error::Shape(format!("expected a column input, got {}x{}", x.rows(), x.cols())));
        }
        y.add(&self.b)
    }
}

/// Tuning mode of a wrapped layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    FullTuning,
    LinearProbe,
    LoRA,
    SeqLoRA,
    PiSSA,
    CPS,
    HyPS,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::FullTuning,
        Variant::LinearProbe,
        Variant::LoRA,
        Variant::SeqLoRA,
        Variant::PiSSA,
        Variant::CPS,
        Variant::HyPS,
    ];

    /// Variants that add low-rank parameters.
    pub const LOW_RANK: [Variant; 5] = [Variant::LoRA, Variant::SeqLoRA, Variant::PiSSA, Variant::CPS, Variant::HyPS];

    pub fn has_parallel(self) -> bool {
        matches!(self, Variant::LoRA | Variant::CPS)
    }

    pub fn has_sequential(self) -> bool {
        matches!(self, Variant::SeqLoRA | Variant::CPS | Variant::HyPS)
    }

    pub fn has_split(self) -> bool {
        matches!(self, Variant::PiSSA | Variant::HyPS)
    }

    pub fn is_low_rank(self) -> bool {
        self.has_parallel() || self.has_sequential() || self.has_split()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::FullTuning => "full",
            Variant::LinearProbe => "linear-probe",
            Variant::LoRA => "lora",
            Variant::SeqLoRA => "seqlora",
            Variant::PiSSA => "pissa",
            Variant::CPS => "cps",
            Variant::HyPS => "hyps",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "full" | "full-tuning" | "fulltuning" => Variant::FullTuning,
            "linear-probe" | "linear-probing" | "linearprobe" => Variant::LinearProbe,
            "lora" => Variant::LoRA,
            "seqlora" | "seq-lora" => Variant::SeqLoRA,
            "pissa" | "pissa-only" => Variant::PiSSA,
            "cps" => Variant::CPS,
            "hyps" => Variant::HyPS,
            other => return Err(Error::Config(format!("unknown variant {other:?}"))),
        })
    }
}

/// Variant plus ranks and branch scales.
///
/// `rank_a`/`scale_a` belong to the parallel side (LoRA branch, or the
/// principal split under PiSSA/HyPS); `rank_b`/`scale_b` to the sequential
/// branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub variant: Variant,
    pub rank_a: usize,
    pub rank_b: usize,
    pub scale_a: f64,
    pub scale_b: f64,
}

impl AdapterSpec {
    /// Equal ranks, unit scales.
    pub fn new(variant: Variant, rank: usize) -> Self {
        Self {
            variant,
            rank_a: rank,
            rank_b: rank,
            scale_a: 1.0,
            scale_b: 1.0,
        }
    }

    pub fn with_scales(mut self, scale_a: f64, scale_b: f64) -> Self {
        self.scale_a = scale_a;
        self.scale_b = scale_b;
        self
    }

    pub fn with_ranks(mut self, rank_a: usize, rank_b: usize) -> Self {
        self.rank_a = rank_a;
        self.rank_b = rank_b;
        self
    }

    /// Checks the rank bounds for an `m×n` layer named `layer`.
    pub fn validate_for(&self, layer: &str, m: usize, n: usize) -> Result<()> {
        let cap = m.min(n);
        let check = |rank: usize, which: &str| {
            if rank == 0 || rank > cap {
                Err(Error::Config(format!(
                    "{which} rank {rank} invalid for layer {layer} of shape {m}x{n}: need 1 <= rank <= {cap}"
                )))
            } else {
                Ok(())
            }
        };
        let v = self.variant;
        if v.has_parallel() || v.has_split() {
            check(self.rank_a, if v.has_split() { "principal" } else { "parallel" })?;
        }
        if v.has_sequential() {
            check(self.rank_b, "sequential")?;
        }
        Ok(())
    }
}

/// Parallel branch `s·A_up·ReLU(A_down·x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraBranch {
    pub a_up: Matrix,
    pub a_down: Matrix,
    pub scale: f64,
}

/// Sequential branch `s·B_up·ReLU(B_down·h)` applied to the layer output `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqLoraBranch {
    pub b_up: Matrix,
    pub b_down: Matrix,
    pub scale: f64,
}

/// `W = W_res + W_up·W_down`; the factors are trainable, the residual frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PissaSplit {
    pub w_pri_up: Matrix,
    pub w_pri_down: Matrix,
    pub w_res: Matrix,
}

impl PissaSplit {
    pub fn rank(&self) -> usize {
        self.w_pri_up.cols()
    }

    /// `W_up·W_down`.
    pub fn principal(&self) -> Matrix {
        self.w_pri_up.matmul(&self.w_pri_down).expect("split factors are conformant")
    }
}

/// Splits `w` into its rank-`r` principal part and the residual tail.
///
/// `W_up = U[:, :r]·S^{1/2}`, `W_down = S^{1/2}·V[:, :r]ᵀ`, and
/// `W_res = U[:, r:]·S[r:]·V[:, r:]ᵀ`.
pub fn pissa_split(w: &Matrix, r: usize) -> Result<PissaSplit> {
    let (m, n) = w.shape();
    let k = m.min(n);
    if r == 0 || r > k {
        return Err(Error::Config(format!("principal rank {r} invalid for a {m}x{n} weight")));
    }
    let dec = svd(w)?;
    let w_pri_up = Matrix::from_fn(m, r, |i, j| dec.u[(i, j)] * dec.sigma[j].sqrt());
    let w_pri_down = Matrix::from_fn(r, n, |i, j| dec.sigma[i].sqrt() * dec.v[(j, i)]);
    let mut w_res = Matrix::zeros(m, n);
    for c in r..k {
        let s = dec.sigma[c];
        for i in 0..m {
            let us = dec.u[(i, c)] * s;
            if us == 0.0 {
                continue;
            }
            for j in 0..n {
                w_res[(i, j)] += us * dec.v[(j, c)];
            }
        }
    }
    Ok(PissaSplit {
        w_pri_up,
        w_pri_down,
        w_res,
    })
}

/// `W_res + W_up·W_down`, the dense weight a trained split exports to.
pub fn collapse_pissa(split: &PissaSplit) -> Matrix {
    let mut w = split.principal();
    w.add_assign_unchecked(&split.w_res);
    w
}

/// A base linear layer with the branches its [`Variant`] requires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedLinear {
    pub base: LinearLayer,
    pub spec: AdapterSpec,
    pub lora: Option<LoraBranch>,
    pub seq: Option<SeqLoraBranch>,
    pub pissa: Option<PissaSplit>,
}

/// Wraps `layer` according to `spec`.
///
/// Up-projections start at zero and down-projections are Kaiming-normal with
/// fan-in equal to their input width. The base layer is frozen for every
/// variant except full tuning and linear probing.
pub fn init_adapted(layer: LinearLayer, spec: AdapterSpec, rng: &mut Rng) -> Result<AdaptedLinear> {
    let (m, n) = layer.w.shape();
    spec.validate_for("<layer>", m, n)?;
    let v = spec.variant;
    let lora = v.has_parallel().then(|| LoraBranch {
        a_up: Matrix::zeros(m, spec.rank_a),
        a_down: kaiming_init(spec.rank_a, n, rng),
        scale: spec.scale_a,
    });
    let seq = v.has_sequential().then(|| SeqLoraBranch {
        b_up: Matrix::zeros(m, spec.rank_b),
        b_down: kaiming_init(spec.rank_b, m, rng),
        scale: spec.scale_b,
    });
    let pissa = if v.has_split() {
        Some(pissa_split(&layer.w, spec.rank_a)?)
    } else {
        None
    };
    let mut base = layer;
    base.frozen = v.is_low_rank();
    Ok(AdaptedLinear {
        base,
        spec,
        lora,
        seq,
        pissa,
    })
}

impl AdaptedLinear {
    /// A layer with no branches that trains its own weight (full tuning).
    pub fn plain(layer: LinearLayer) -> Self {
        let (m, n) = layer.w.shape();
        Self {
            spec: AdapterSpec::new(Variant::FullTuning, m.min(n).max(1)),
            base: LinearLayer { frozen: false, ..layer },
            lora: None,
            seq: None,
            pissa: None,
        }
    }

    /// Same as [`init_adapted`] but names the layer in rank errors.
    pub fn attach(layer: LinearLayer, spec: AdapterSpec, name: &str, rng: &mut Rng) -> Result<Self> {
        let (m, n) = layer.w.shape();
        spec.validate_for(name, m, n)?;
        init_adapted(layer, spec, rng)
    }

    pub fn out_dim(&self) -> usize {
        self.base.out_dim()
    }

    pub fn in_dim(&self) -> usize {
        self.base.in_dim()
    }

    /// The dense weight the forward pass multiplies by.
    pub fn effective_weight(&self) -> Matrix {
        match &self.pissa {
            Some(split) => collapse_pissa(split),
            None => self.base.w.clone(),
        }
    }

    /// Output for a column `x` (`n×1`).
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != 1 {
            return Err(Error::Shape(format!("forward expects an {}x1 column, got {}x{}", self.in_dim(), x.rows(), x.cols())));
        }
        Ok(self.forward_rows(&x.transpose())?.transpose())
    }

    /// Row-batched forward: each row of `x` (`t×n`) is one input.
    pub fn forward_rows(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "adapted layer expects inputs of width {}, got {}x{}",
                self.in_dim(),
                x.rows(),
                x.cols()
            )));
        }
        let w = self.effective_weight();
        let mut h = x.matmul_t(&w)?;
        add_bias_rows(&mut h, &self.base.b);
        let mut out = h.clone();
        if let Some(l) = &self.lora {
            let z = relu(&x.matmul_t(&l.a_down)?);
            out.add_assign_unchecked(&z.matmul_t(&l.a_up)?.scale(l.scale));
        }
        if let Some(s) = &self.seq {
            let z = relu(&h.matmul_t(&s.b_down)?);
            out.add_assign_unchecked(&z.matmul_t(&s.b_up)?.scale(s.scale));
        }
        Ok(out)
    }

    /// Forward of the frozen base layer alone, row-batched.
    pub fn base_forward_rows(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.matmul_t(&self.base.w)?;
        add_bias_rows(&mut h, &self.base.b);
        Ok(h)
    }

    /// Named parameter matrices with their trainability under this variant.
    pub fn params(&self) -> Vec<(&'static str, &Matrix, bool)> {
        let base_trainable = !self.spec.variant.is_low_rank();
        let mut out = vec![("w", &self.base.w, base_trainable), ("b", &self.base.b, base_trainable)];
        if let Some(l) = &self.lora {
            out.push(("lora.a_up", &l.a_up, true));
            out.push(("lora.a_down", &l.a_down, true));
        }
        if let Some(s) = &self.seq {
            out.push(("seq.b_up", &s.b_up, true));
            out.push(("seq.b_down", &s.b_down, true));
        }
        if let Some(p) = &self.pissa {
            out.push(("pissa.up", &p.w_pri_up, true));
            out.push(("pissa.down", &p.w_pri_down, true));
            out.push(("pissa.res", &p.w_res, false));
        }
        out
    }

    /// Mutable access in the same order as [`AdaptedLinear::params`].
    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut out = vec![("w", &mut self.base.w), ("b", &mut self.base.b)];
        if let Some(l) = &mut self.lora {
            out.push(("lora.a_up", &mut l.a_up));
            out.push(("lora.a_down", &mut l.a_down));
        }
        if let Some(s) = &mut self.seq {
            out.push(("seq.b_up", &mut s.b_up));
            out.push(("seq.b_down", &mut s.b_down));
        }
        if let Some(p) = &mut self.pissa {
            out.push(("pissa.up", &mut p.w_pri_up));
            out.push(("pissa.down", &mut p.w_pri_down));
            out.push(("pissa.res", &mut p.w_res));
        }
        out
    }
}

pub(crate) fn add_bias_rows(h: &mut Matrix, b: &Matrix) {
    let bias = b.as_slice();
    for r in 0..h.rows() {
        for (v, bb) in h.row_mut(r).iter_mut().zip(bias) {
            *v += bb;
        }
    }
}
