//! Minimal dense NN core: fixed layer menu with forward/backward passes,
//! Adam with L2 regularization, and a binary parameter checkpoint format.

mod adam;
mod checkpoint;
mod layer;
mod loss;
mod network;

pub use adam::{AdamConfig, OptimizerState};
pub use checkpoint::{load_tensors, save_tensors, CHECKPOINT_MAGIC};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_batch};
pub use network::{Gradients, Network, ParamMut, ParamRef};

use crate::error::{Error, Result};

/// One layer of the fixed menu. Convolutions are stride 1x1 with valid
/// padding; max pooling is a 2x2 window with stride 2x2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: (usize, usize),
    },
    MaxPool2d,
    BatchNorm,
    Relu,
    Flatten,
    Dense {
        units: usize,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d => "maxpool2d",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    /// Shape produced from `input` (without the batch dimension), or an error
    /// naming this layer.
    fn output_shape(&self, input: &[usize], index: usize) -> Result<Vec<usize>> {
        let fail = |msg: String| {
            Err(Error::InvalidArgument(format!(
                "layer {index} ({}): {msg}",
                self.kind_name()
            )))
        };
        match self {
            LayerSpec::Conv2d {
                out_channels,
                kernel: (kh, kw),
            } => {
                if input.len() != 3 {
                    return fail(format!("expected H x W x C input, got {input:?}"));
                }
                let (h, w) = (input[0], input[1]);
                if h < *kh || w < *kw {
                    return fail(format!("kernel {kh}x{kw} larger than input {h}x{w}"));
                }
                Ok(vec![h - kh + 1, w - kw + 1, *out_channels])
            }
            LayerSpec::MaxPool2d => {
                if input.len() != 3 {
                    return fail(format!("expected H x W x C input, got {input:?}"));
                }
                let (h, w) = (input[0], input[1]);
                if h < 2 || w < 2 {
                    return fail(format!("2x2 pooling needs at least 2x2 input, got {h}x{w}"));
                }
                Ok(vec![h / 2, w / 2, input[2]])
            }
            LayerSpec::BatchNorm => {
                if input.len() != 3 {
                    return fail(format!(
                        "batch normalization is applied to H x W x C feature maps, got {input:?}"
                    ));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { units } => {
                if input.len() != 1 {
                    return fail(format!("expected a flat input, got {input:?}"));
                }
                Ok(vec![*units])
            }
        }
    }
}

/// What the network's output feeds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeadSpec {
    /// Logit vector over `classes` classes.
    Classifier { classes: usize },
    /// Raw output, consumed by an external head which imposes its own shape
    /// requirements.
    Features,
}

/// An ordered layer stack with a fixed input shape and output head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub head: HeadSpec,
}

impl NetworkSpec {
    /// Shapes at every layer boundary: `shapes[0]` is the input shape and
    /// `shapes[i + 1]` the output of layer `i`.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.output_shape(shapes.last().unwrap(), i)?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.layer_shapes()?.pop().unwrap())
    }

    /// Validate shape composition and the head contract.
    pub fn validate(&self) -> Result<()> {
        let out = self.output_shape()?;
        match &self.head {
            HeadSpec::Classifier { classes } => {
                if out != vec![*classes] {
                    return Err(Error::InvalidArgument(format!(
                        "network {}: classifier head needs output [{classes}], got {out:?}",
                        self.name
                    )));
                }
            }
            HeadSpec::Features => {}
        }
        Ok(())
    }
}

/// The three CNN architecture presets, ordered from simple to complex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchPreset {
    Arch1,
    Arch2,
    Arch3,
}

impl ArchPreset {
    pub fn name(self) -> &'static str {
        match self {
            ArchPreset::Arch1 => "arch1",
            ArchPreset::Arch2 => "arch2",
            ArchPreset::Arch3 => "arch3",
        }
    }

    pub fn parse(s: &str) -> Result<ArchPreset> {
        match s {
            "arch1" => Ok(ArchPreset::Arch1),
            "arch2" => Ok(ArchPreset::Arch2),
            "arch3" => Ok(ArchPreset::Arch3),
            _ => Err(Error::Config(format!(
                "unknown architecture preset {s:?} (expected arch1|arch2|arch3)"
            ))),
        }
    }

    fn body_layers(self) -> Vec<LayerSpec> {
        use LayerSpec::*;
        match self {
            ArchPreset::Arch1 => vec![
                Conv2d {
                    out_channels: 8,
                    kernel: (3, 3),
                },
                Relu,
                MaxPool2d,
                Flatten,
            ],
            ArchPreset::Arch2 => vec![
                Conv2d {
                    out_channels: 16,
                    kernel: (3, 3),
                },
                Relu,
                MaxPool2d,
                Conv2d {
                    out_channels: 32,
                    kernel: (3, 3),
                },
                Relu,
                MaxPool2d,
                Flatten,
                Dense { units: 128 },
                Relu,
            ],
            ArchPreset::Arch3 => vec![
                Conv2d {
                    out_channels: 16,
                    kernel: (3, 3),
                },
                BatchNorm,
                Relu,
                MaxPool2d,
                Conv2d {
                    out_channels: 32,
                    kernel: (3, 3),
                },
                BatchNorm,
                Relu,
                MaxPool2d,
                Conv2d {
                    out_channels: 64,
                    kernel: (3, 3),
                },
                BatchNorm,
                Relu,
                MaxPool2d,
                Flatten,
                Dense { units: 128 },
                Relu,
            ],
        }
    }
}

/// Full classifier network: preset body plus a final dense layer of `classes`
/// logits.
pub fn classifier_spec(arch: ArchPreset, input_shape: &[usize], classes: usize) -> NetworkSpec {
    let mut layers = arch.body_layers();
    layers.push(LayerSpec::Dense { units: classes });
    NetworkSpec {
        name: format!("{}-classifier", arch.name()),
        input_shape: input_shape.to_vec(),
        layers,
        head: HeadSpec::Classifier { classes },
    }
}

/// Preset body without the final classifier layer; feeds external heads.
pub fn feature_spec(arch: ArchPreset, input_shape: &[usize]) -> NetworkSpec {
    NetworkSpec {
        name: format!("{}-features", arch.name()),
        input_shape: input_shape.to_vec(),
        layers: arch.body_layers(),
        head: HeadSpec::Features,
    }
}
