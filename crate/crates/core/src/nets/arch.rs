use serde::{Deserialize, Serialize};

use crate::error::{LcmError, Result};

/// Slope of every LeakyReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    LeakyRelu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum LayerKind {
    Conv { stride: usize, padding: usize },
    /// Nearest upsampling by `scale`, then a same-padding convolution.
    UpConv { scale: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub activation: Activation,
    pub norm: bool,
    /// Output of this earlier layer is concatenated onto the layer input.
    pub skip_from: Option<usize>,
}

impl LayerSpec {
    pub fn conv(c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv { stride, padding },
            c_in,
            c_out,
            kernel,
            activation: Activation::LeakyRelu,
            norm: false,
            skip_from: None,
        }
    }

    pub fn up(c_in: usize, c_out: usize, kernel: usize, scale: usize) -> Self {
        LayerSpec {
            kind: LayerKind::UpConv { scale },
            c_in,
            c_out,
            kernel,
            activation: Activation::LeakyRelu,
            norm: false,
            skip_from: None,
        }
    }

    pub fn normed(mut self) -> Self {
        self.norm = true;
        self
    }

    pub fn activation(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }

    pub fn skip(mut self, from: usize) -> Self {
        self.skip_from = Some(from);
        self
    }

    /// Weight + bias scalars (plus gain/shift when normalized).
    pub fn param_count(&self) -> usize {
        let conv = self.kernel * self.kernel * self.c_in * self.c_out + self.c_out;
        if self.norm {
            conv + 2 * self.c_out
        } else {
            conv
        }
    }
}

/// Map shape as (channels, height, width).
pub type MapShape = [usize; 3];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub input: MapShape,
    /// When set, the network takes a length-`d` vector and a learned linear
    /// layer maps it onto `input`.
    #[serde(default)]
    pub input_vector: Option<usize>,
    pub layers: Vec<LayerSpec>,
    pub output: MapShape,
}

impl ArchSpec {
    /// Output shape of every layer by symbolic propagation.
    pub fn propagate(&self) -> Result<Vec<MapShape>> {
        if self.input.iter().any(|&d| d == 0) {
            return Err(LcmError::Shape(format!("{}: zero extent in input {:?}", self.name, self.input)));
        }
        if self.input_vector == Some(0) {
            return Err(LcmError::Shape(format!("{}: zero-length input vector", self.name)));
        }
        let mut shapes: Vec<MapShape> = Vec::with_capacity(self.layers.len());
        let mut cur = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut c_in = cur[0];
            if let Some(j) = layer.skip_from {
                let src = *shapes.get(j).filter(|_| j < i).ok_or_else(|| {
                    LcmError::Shape(format!("{}: layer {i} skips from non-preceding layer {j}", self.name))
                })?;
                if src[1..] != cur[1..] {
                    return Err(LcmError::Shape(format!(
                        "{}: layer {i} skip source {j} is {}×{} but the input is {}×{}",
                        self.name, src[1], src[2], cur[1], cur[2]
                    )));
                }
                c_in += src[0];
            }
            if c_in != layer.c_in {
                return Err(LcmError::Shape(format!(
                    "{}: layer {i} expects {} input channels but receives {c_in}",
                    self.name, layer.c_in
                )));
            }
            if layer.kernel == 0 {
                return Err(LcmError::Geometry(format!("{}: layer {i} has a zero kernel", self.name)));
            }
            let (h, w) = match layer.kind {
                LayerKind::Conv { stride, padding } => {
                    if stride == 0 {
                        return Err(LcmError::Geometry(format!("{}: layer {i} has stride 0", self.name)));
                    }
                    let (ph, pw) = (cur[1] + 2 * padding, cur[2] + 2 * padding);
                    if ph < layer.kernel || pw < layer.kernel {
                        return Err(LcmError::Geometry(format!(
                            "{}: layer {i} kernel {} exceeds padded input {ph}×{pw}",
                            self.name, layer.kernel
                        )));
                    }
                    ((ph - layer.kernel) / stride + 1, (pw - layer.kernel) / stride + 1)
                }
                LayerKind::UpConv { scale } => {
                    if scale < 2 || layer.kernel % 2 == 0 {
                        return Err(LcmError::Geometry(format!(
                            "{}: layer {i} upsampling needs scale ≥ 2 and an odd kernel",
                            self.name
                        )));
                    }
                    (cur[1] * scale, cur[2] * scale)
                }
            };
            cur = [layer.c_out, h, w];
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Checks that the layer chain is consistent and produces `output`.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.propagate()?;
        let last = shapes.last().copied().unwrap_or(self.input);
        if last != self.output {
            return Err(LcmError::Shape(format!(
                "{}: declared output {:?} but layers produce {:?}",
                self.name, self.output, last
            )));
        }
        Ok(())
    }

    pub fn skip_count(&self) -> usize {
        self.layers.iter().filter(|l| l.skip_from.is_some()).count()
    }

    /// Scalars in the input projection, if any.
    pub fn input_param_count(&self) -> usize {
        match self.input_vector {
            Some(d) => {
                let m = self.input.iter().product::<usize>();
                m * d + m
            }
            None => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.input_param_count() + self.layers.iter().map(LayerSpec::param_count).sum::<usize>()
    }

    /// Channel counts of the normalized layers, in order.
    pub fn norm_channels(&self) -> Vec<usize> {
        self.layers.iter().filter(|l| l.norm).map(|l| l.c_out).collect()
    }

    /// Same network fed by a length-`d` vector through a linear layer.
    pub fn with_vector_input(&self, d: usize) -> Self {
        let mut a = self.clone();
        a.input_vector = Some(d);
        a.name = format!("{}-vec{d}", self.name);
        a
    }
}
