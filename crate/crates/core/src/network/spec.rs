use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the joint latents of the modalities are tied together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Pairwise penalty between per-modality joint latents.
    Explicit,
    /// Every modality is reconstructed from every modality's joint latent.
    Exchange,
    /// One joint latent computed from all modalities at once.
    Merged,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Explicit, Variant::Exchange, Variant::Merged];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Explicit => "explicit",
            Variant::Exchange => "exchange",
            Variant::Merged => "merged",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit" => Ok(Variant::Explicit),
            "exchange" => Ok(Variant::Exchange),
            "merged" => Ok(Variant::Merged),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One hidden encoder layer; decoders mirror the stack in reverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        units: usize,
        #[serde(default = "yes")]
        relu: bool,
    },
    Conv {
        kernels: usize,
        size: usize,
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "yes")]
        relu: bool,
    },
}

fn yes() -> bool {
    true
}

impl LayerSpec {
    pub fn conv(kernels: usize, size: usize, stride: usize) -> Self {
        LayerSpec::Conv {
            kernels,
            size,
            stride,
            padding: 0,
            relu: true,
        }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units, relu: true }
    }

    pub fn relu(&self) -> bool {
        match self {
            LayerSpec::Dense { relu, .. } | LayerSpec::Conv { relu, .. } => *relu,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { units, .. } => {
                if units == 0 {
                    return Err(Error::Config("dense layer with zero units".into()));
                }
                Ok(vec![units])
            }
            LayerSpec::Conv {
                kernels,
                size,
                stride,
                padding,
                ..
            } => {
                let [_, h, w] = input else {
                    return Err(Error::Config(format!("conv layer needs a [C, H, W] input, got {input:?}")));
                };
                if kernels == 0 || size == 0 || stride == 0 {
                    return Err(Error::Config("conv layer with a zero extent".into()));
                }
                if size > h + 2 * padding || size > w + 2 * padding {
                    return Err(Error::Config(format!("{size}x{size} kernel larger than padded {h}x{w} input")));
                }
                Ok(vec![
                    kernels,
                    (h + 2 * padding - size) / stride + 1,
                    (w + 2 * padding - size) / stride + 1,
                ])
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Per-modality sample shape, `[p]` or `[C, H, W]`.
    pub input_shapes: Vec<Vec<usize>>,
    /// Per-modality hidden encoder stack (may be empty: a linear network).
    pub layers: Vec<Vec<LayerSpec>>,
    pub joint_width: usize,
    pub individual_widths: Vec<usize>,
    pub variant: Variant,
    /// Joint and individual encoders of a modality share the hidden stack.
    #[serde(default)]
    pub shared_trunk: bool,
}

impl NetworkSpec {
    pub fn k(&self) -> usize {
        self.input_shapes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k < 2 {
            return Err(Error::Config(format!("{k} modalities; at least 2 are needed")));
        }
        if self.layers.len() != k || self.individual_widths.len() != k {
            return Err(Error::Config(format!(
                "{k} input shapes but {} layer stacks and {} individual widths",
                self.layers.len(),
                self.individual_widths.len()
            )));
        }
        if self.joint_width == 0 {
            return Err(Error::Config("joint width must be at least 1".into()));
        }
        for (shape, stack) in self.input_shapes.iter().zip(&self.layers) {
            if shape.is_empty() || shape.contains(&0) {
                return Err(Error::Config(format!("bad input shape {shape:?}")));
            }
            self.trunk_shapes(shape, stack)?;
        }
        Ok(())
    }

    /// Per-sample shapes before and after each hidden layer.
    pub fn trunk_shapes(&self, input: &[usize], stack: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![input.to_vec()];
        for layer in stack {
            let prev = shapes.last().expect("non-empty");
            let next = match layer {
                LayerSpec::Dense { .. } => layer.output_shape(&[prev.iter().product()])?,
                LayerSpec::Conv { .. } => layer.output_shape(prev)?,
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Two 100-variable blocks, a single linear layer per encoder and decoder,
    /// joint width 1 and individual widths 1 and 1.
    pub fn synthetic_1d(variant: Variant) -> Self {
        Self::linear(vec![vec![100], vec![100]], 1, vec![1, 1], variant)
    }

    /// Linear network over arbitrary shapes.
    pub fn linear(input_shapes: Vec<Vec<usize>>, joint_width: usize, individual_widths: Vec<usize>, variant: Variant) -> Self {
        let k = input_shapes.len();
        Self {
            input_shapes,
            layers: vec![Vec::new(); k],
            joint_width,
            individual_widths,
            variant,
            shared_trunk: false,
        }
    }

    /// Overlaid-digit network: `conv_layers` (at most 5) layers of 44 3x3
    /// stride-1 kernels, joint width 10, individual widths 2 and 2.
    pub fn mnist_overlaid(variant: Variant, conv_layers: usize) -> Self {
        Self::mnist_overlaid_with(variant, conv_layers, 44, 1)
    }

    /// [`NetworkSpec::mnist_overlaid`] with a chosen kernel count and stride.
    pub fn mnist_overlaid_with(variant: Variant, conv_layers: usize, kernels: usize, stride: usize) -> Self {
        let stack: Vec<LayerSpec> = (0..conv_layers.min(5)).map(|_| LayerSpec::conv(kernels, 3, stride)).collect();
        Self {
            input_shapes: vec![vec![1, 28, 28]; 2],
            layers: vec![stack; 2],
            joint_width: 10,
            individual_widths: vec![2, 2],
            variant,
            shared_trunk: false,
        }
    }

    /// Paired-digit network with a shared trunk of up to two stride-2 3x3
    /// conv layers of 32 and 64 kernels; joint width 10, individual widths 26 and 26.
    pub fn mnist_paired(variant: Variant, conv_layers: usize) -> Self {
        Self::mnist_paired_with(variant, conv_layers, [32, 64])
    }

    /// [`NetworkSpec::mnist_paired`] with chosen kernel counts.
    pub fn mnist_paired_with(variant: Variant, conv_layers: usize, kernels: [usize; 2]) -> Self {
        let stack: Vec<LayerSpec> = kernels[..conv_layers.min(2)].iter().map(|&c| LayerSpec::conv(c, 3, 2)).collect();
        Self {
            input_shapes: vec![vec![1, 28, 28]; 2],
            layers: vec![stack; 2],
            joint_width: 10,
            individual_widths: vec![26, 26],
            variant,
            shared_trunk: true,
        }
    }
}
