//! Small classifiers (MLP and a three-block CNN) over a single flat
//! parameter vector.
//!
//! Every parameter lives in one contiguous [`ParamVector`]; a layout map
//! records the offset and shape of each weight and bias. Weight averaging,
//! checkpointing, interpolation and landscape probes all operate on that
//! flat view.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mlp,
    SmallCnn,
}

/// Architecture description. For `mlp`, `widths` are hidden-layer sizes
/// (empty = linear classifier); for `small_cnn`, they are the channel counts
/// of the stride-2 3×3 conv blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    pub widths: Vec<usize>,
    /// `[channels, height, width]`
    pub input_shape: [usize; 3],
    pub classes: usize,
}

impl ModelSpec {
    pub fn mlp(input_shape: [usize; 3], hidden: Vec<usize>, classes: usize) -> Self {
        Self {
            arch: Arch::Mlp,
            widths: hidden,
            input_shape,
            classes,
        }
    }

    /// Default CNN: channels 16/32/64.
    pub fn small_cnn(input_shape: [usize; 3], classes: usize) -> Self {
        Self::small_cnn_with(input_shape, vec![16, 32, 64], classes)
    }

    pub fn small_cnn_with(input_shape: [usize; 3], channels: Vec<usize>, classes: usize) -> Self {
        Self {
            arch: Arch::SmallCnn,
            widths: channels,
            input_shape,
            classes,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("model needs at least 2 classes"));
        }
        if self.input_shape.contains(&0) || self.widths.contains(&0) {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.arch == Arch::SmallCnn && self.widths.is_empty() {
            return Err(Error::invalid("small_cnn needs at least one conv block"));
        }
        Ok(())
    }

    /// Parameter layout implied by the architecture.
    pub fn layout(&self) -> Result<Vec<ParamSlot>> {
        self.validate()?;
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, kind: ParamKind, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            slots.push(ParamSlot {
                name,
                kind,
                offset,
                shape,
            });
            offset += len;
        };
        match self.arch {
            Arch::Mlp => {
                let mut fan_in = self.input_len();
                for (i, &w) in self.widths.iter().enumerate() {
                    push(format!("fc{i}.weight"), ParamKind::LinearWeight, vec![fan_in, w]);
                    push(format!("fc{i}.bias"), ParamKind::Bias, vec![w]);
                    fan_in = w;
                }
                push("head.weight".into(), ParamKind::LinearWeight, vec![fan_in, self.classes]);
                push("head.bias".into(), ParamKind::Bias, vec![self.classes]);
            }
            Arch::SmallCnn => {
                let [mut c, mut h, mut w] = self.input_shape;
                for (i, &f) in self.widths.iter().enumerate() {
                    push(format!("conv{i}.weight"), ParamKind::ConvWeight, vec![f, c, CNN_KERNEL, CNN_KERNEL]);
                    push(format!("conv{i}.bias"), ParamKind::Bias, vec![f]);
                    c = f;
                    h = (h + 2 * CNN_PADDING - CNN_KERNEL) / CNN_STRIDE + 1;
                    w = (w + 2 * CNN_PADDING - CNN_KERNEL) / CNN_STRIDE + 1;
                }
                push("head.weight".into(), ParamKind::LinearWeight, vec![c * h * w, self.classes]);
                push("head.bias".into(), ParamKind::Bias, vec![self.classes]);
            }
        }
        Ok(slots)
    }
}

const CNN_KERNEL: usize = 3;
const CNN_STRIDE: usize = 2;
const CNN_PADDING: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// `[filters, in_channels, kh, kw]`
    ConvWeight,
    /// `[fan_in, fan_out]`
    LinearWeight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub kind: ParamKind,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            ParamKind::ConvWeight => self.shape[1..].iter().product(),
            ParamKind::LinearWeight => self.shape[0],
            ParamKind::Bias => 1,
        }
    }
}

/// One contiguous vector covering all parameters, plus its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
    layout: Vec<ParamSlot>,
}

impl<T: Real> ParamVector<T> {
    pub fn new(layout: Vec<ParamSlot>, values: Vec<T>) -> Result<Self> {
        let total = layout.last().map_or(0, |s| s.offset + s.len());
        if total != values.len() {
            return Err(Error::ShapeMismatch {
                op: "param_vector",
                left: vec![total],
                right: vec![values.len()],
            });
        }
        Ok(Self { values, layout })
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            values: vec![T::zero(); other.values.len()],
            layout: other.layout.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn layout(&self) -> &[ParamSlot] {
        &self.layout
    }

    pub fn slot(&self, slot: &ParamSlot) -> &[T] {
        &self.values[slot.range()]
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.layout == other.layout
    }

    fn check_layout(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.values.len() != other.values.len() || !self.same_layout(other) {
            return Err(Error::ShapeMismatch {
                op,
                left: vec![self.values.len()],
                right: vec![other.values.len()],
            });
        }
        Ok(())
    }

    /// `self + t·direction`
    pub fn interpolate(&self, direction: &Self, t: f64) -> Result<Self> {
        self.check_layout(direction, "interpolate")?;
        let t = T::of(t);
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&direction.values)
                .map(|(&a, &d)| a + t * d)
                .collect(),
            layout: self.layout.clone(),
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_layout(other, "max_abs_diff")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A classifier: its spec plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    params: ParamVector<T>,
}

impl<T: Real> Model<T> {
    /// Fan-in scaled normal weights (std `sqrt(2/fan_in)`) and zero biases,
    /// deterministic in `seed`.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let layout = spec.layout()?;
        let total = layout.last().map_or(0, |s| s.offset + s.len());
        let mut values = vec![T::zero(); total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in &layout {
            if slot.kind == ParamKind::Bias {
                continue;
            }
            let std = (2.0 / slot.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut values[slot.range()] {
                *v = T::of(normal.sample(&mut rng));
            }
        }
        Ok(Self {
            spec,
            params: ParamVector { values, layout },
        })
    }

    pub fn from_params(spec: ModelSpec, params: ParamVector<T>) -> Result<Self> {
        if spec.layout()? != params.layout {
            return Err(Error::invalid("parameter layout does not match model spec"));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: ParamVector<T>) -> Result<()> {
        self.params.check_layout(&params, "set_params")?;
        self.params = params;
        Ok(())
    }

    /// Copy every parameter slot onto the tape.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .layout
            .iter()
            .map(|slot| {
                let t = Tensor::new(slot.shape.clone(), self.params.values[slot.range()].to_vec())
                    .expect("layout shape");
                tape.leaf(t, trainable)
            })
            .collect()
    }

    /// Logits for `x` (`[N, C, H, W]`) using already-bound parameters.
    pub fn forward_with(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 4 || s[1..] != self.spec.input_shape {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: s,
                right: self.spec.input_shape.to_vec(),
            });
        }
        let mut h = x;
        let blocks = self.spec.widths.len();
        match self.spec.arch {
            Arch::Mlp => {
                h = tape.flatten(h)?;
                for i in 0..blocks {
                    h = tape.matmul(h, params[2 * i])?;
                    h = tape.add_bias(h, params[2 * i + 1], 1)?;
                    h = tape.relu(h);
                }
            }
            Arch::SmallCnn => {
                for i in 0..blocks {
                    h = tape.conv2d(h, params[2 * i], CNN_STRIDE, CNN_PADDING)?;
                    h = tape.add_bias(h, params[2 * i + 1], 1)?;
                    h = tape.relu(h);
                }
                h = tape.flatten(h)?;
            }
        }
        h = tape.matmul(h, params[2 * blocks])?;
        tape.add_bias(h, params[2 * blocks + 1], 1)
    }

    /// Bind parameters and run the forward pass.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Result<(Var, Vec<Var>)> {
        let params = self.bind(tape, trainable);
        let out = self.forward_with(tape, &params, x)?;
        Ok((out, params))
    }

    /// Inference-only logits `[N, classes]`.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let (out, _) = self.forward(&mut tape, x, false)?;
        let out = tape.value(out).clone();
        if !out.is_finite() {
            return Err(Error::NonFinite("model logits".into()));
        }
        Ok(out)
    }

    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok(kernels::argmax_rows(logits.data(), self.spec.classes))
    }

    /// Flatten the gradients of bound parameters in layout order.
    pub fn gather_grads(&self, tape: &Tape<T>, params: &[Var]) -> Vec<T> {
        let mut out = vec![T::zero(); self.params.len()];
        for (slot, &v) in self.params.layout.iter().zip(params) {
            if let Some(g) = tape.grad(v) {
                out[slot.range()].copy_from_slice(g);
            }
        }
        out
    }
}
