use rand::Rng as _;

use crate::error::Result;
use crate::rng;

use super::{Fusion, ModelConfig};

/// What a tensor is, which decides its initialization and weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormGain,
    NormBias,
    Token,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub kind: ParamKind,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one attention sublayer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIdx {
    pub norm_g: usize,
    pub norm_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockIdx {
    pub attn: AttnIdx,
    pub cross: Option<AttnIdx>,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    pub patch_w1: usize,
    pub patch_b1: usize,
    pub patch_w2: usize,
    pub patch_b2: usize,
    pub text_w: usize,
    pub cls: usize,
    pub blocks: Vec<BlockIdx>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head_w1: usize,
    pub head_b1: usize,
    pub head_w2: usize,
    pub head_b2: usize,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, shape: &[usize], kind: ParamKind) -> usize {
        let offset = self.total;
        let info = TensorInfo {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
            kind,
        };
        self.total += info.len();
        self.tensors.push(info);
        offset
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        use ParamKind::*;
        AttnIdx {
            norm_g: self.add(format!("{prefix}.norm.gain"), &[d], NormGain),
            norm_b: self.add(format!("{prefix}.norm.bias"), &[d], NormBias),
            wq: self.add(format!("{prefix}.q.weight"), &[d, d], Weight),
            bq: self.add(format!("{prefix}.q.bias"), &[d], Bias),
            wk: self.add(format!("{prefix}.k.weight"), &[d, d], Weight),
            bk: self.add(format!("{prefix}.k.bias"), &[d], Bias),
            wv: self.add(format!("{prefix}.v.weight"), &[d, d], Weight),
            bv: self.add(format!("{prefix}.v.bias"), &[d], Bias),
            wo: self.add(format!("{prefix}.out.weight"), &[d, d], Weight),
            bo: self.add(format!("{prefix}.out.bias"), &[d], Bias),
        }
    }
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Layout {
        use ParamKind::*;
        let d = c.width;
        let hidden = d * c.mlp_ratio;
        let mut b = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let patch_w1 = b.add("patch.fc1.weight", &[6, d], Weight);
        let patch_b1 = b.add("patch.fc1.bias", &[d], Bias);
        let patch_w2 = b.add("patch.fc2.weight", &[d, d], Weight);
        let patch_b2 = b.add("patch.fc2.bias", &[d], Bias);
        let text_w = b.add("text.proj.weight", &[c.text_dim, d], Weight);
        let cls = b.add("cls_token", &[d], Token);
        let blocks = (0..c.layers)
            .map(|l| {
                let attn = b.attn(&format!("blocks.{l}.attn"), d);
                let cross = (c.fusion == Fusion::CrossAttention)
                    .then(|| b.attn(&format!("blocks.{l}.cross"), d));
                BlockIdx {
                    attn,
                    cross,
                    ln2_g: b.add(format!("blocks.{l}.mlp.norm.gain"), &[d], NormGain),
                    ln2_b: b.add(format!("blocks.{l}.mlp.norm.bias"), &[d], NormBias),
                    w1: b.add(format!("blocks.{l}.mlp.fc1.weight"), &[d, hidden], Weight),
                    b1: b.add(format!("blocks.{l}.mlp.fc1.bias"), &[hidden], Bias),
                    w2: b.add(format!("blocks.{l}.mlp.fc2.weight"), &[hidden, d], Weight),
                    b2: b.add(format!("blocks.{l}.mlp.fc2.bias"), &[d], Bias),
                }
            })
            .collect();
        let lnf_g = b.add("final_norm.gain", &[d], NormGain);
        let lnf_b = b.add("final_norm.bias", &[d], NormBias);
        let head_w1 = b.add("head.fc1.weight", &[d, c.head_hidden], Weight);
        let head_b1 = b.add("head.fc1.bias", &[c.head_hidden], Bias);
        let head_w2 = b.add("head.fc2.weight", &[c.head_hidden, 3], Weight);
        let head_b2 = b.add("head.fc2.bias", &[3], Bias);
        Layout {
            tensors: b.tensors,
            total: b.total,
            patch_w1,
            patch_b1,
            patch_w2,
            patch_b2,
            text_w,
            cls,
            blocks,
            lnf_g,
            lnf_b,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
        }
    }
}

/// All learnable tensors, flattened in layout order.
///
/// Values are kept representable in single precision so the 32-bit weight
/// files round-trip exactly; arithmetic runs in double precision.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub(crate) config: ModelConfig,
    pub(crate) layout: Layout,
    pub(crate) data: Vec<f64>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl ModelParams {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.layout.tensors
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for optimizers and gradient checks.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.data[t.range()])
    }

    pub(crate) fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.data[offset..offset + len]
    }

    /// Rounds every value to the nearest single-precision float.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = f64::from(*v as f32);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn from_parts(config: ModelConfig, data: Vec<f64>) -> ModelParams {
        let layout = Layout::new(&config);
        debug_assert_eq!(layout.total, data.len());
        ModelParams {
            config,
            layout,
            data,
        }
    }
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub values: Vec<f64>,
}

impl Grads {
    pub fn zeros_like(p: &ModelParams) -> Grads {
        Grads {
            values: vec![0.0; p.len()],
        }
    }

    pub(crate) fn slice_mut(&mut self, offset: usize, len: usize) -> &mut [f64] {
        &mut self.values[offset..offset + len]
    }

    /// Two disjoint tensors at once, e.g. a weight and its bias.
    pub(crate) fn pair_mut(&mut self, a: usize, la: usize, b: usize, lb: usize) -> (&mut [f64], &mut [f64]) {
        assert!(a + la <= b || b + lb <= a, "overlapping gradient slices");
        if a < b {
            let (x, y) = self.values.split_at_mut(b);
            (&mut x[a..a + la], &mut y[..lb])
        } else {
            let (x, y) = self.values.split_at_mut(a);
            (&mut y[..la], &mut x[b..b + lb])
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

/// Fan-in uniform init for weights, ones for norm gains, zeros for biases.
/// The last head layer is scaled by 0.1.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut data = vec![0.0; layout.total];
    let mut r = rng::stream("init", seed);
    for t in &layout.tensors {
        let slot = &mut data[t.range()];
        match t.kind {
            ParamKind::Weight => {
                let bound = 1.0 / (t.shape[0] as f64).sqrt();
                let scale = if t.offset == layout.head_w2 { 0.1 } else { 1.0 };
                for v in slot.iter_mut() {
                    *v = scale * r.random_range(-bound..bound);
                }
            }
            ParamKind::Token => {
                for v in slot.iter_mut() {
                    *v = r.random_range(-0.02..0.02);
                }
            }
            ParamKind::NormGain => slot.fill(1.0),
            ParamKind::Bias | ParamKind::NormBias => slot.fill(0.0),
        }
    }
    let mut p = ModelParams {
        config: config.clone(),
        layout,
        data,
    };
    p.round_to_f32();
    Ok(p)
}
