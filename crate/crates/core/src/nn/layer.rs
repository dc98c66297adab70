use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a sequential network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        in_size: usize,
        out_size: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn dense(in_size: usize, out_size: usize) -> Self {
        LayerSpec::Dense { in_size, out_size }
    }

    /// Square-kernel convolution with stride 1 and no padding.
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
        }
    }

    pub fn pool(window: usize) -> Self {
        LayerSpec::MaxPool2d {
            window,
            stride: window,
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Weight and bias shapes for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { in_size, out_size } => {
                Some((vec![out_size, in_size], vec![out_size]))
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel_h, kernel_w],
                vec![out_channels],
            )),
            _ => None,
        }
    }

    /// (fan_in, fan_out) for initialization.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Dense { in_size, out_size } => Some((in_size, out_size)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some((
                in_channels * kernel_h * kernel_w,
                out_channels * kernel_h * kernel_w,
            )),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let fail = |detail: String| Error::IncompatibleShapes {
            layer: index,
            detail,
        };
        match *self {
            LayerSpec::Dense { in_size, out_size } => {
                if input != [in_size] {
                    return Err(fail(format!(
                        "dense expects input [{in_size}], previous layer yields {input:?}"
                    )));
                }
                Ok(vec![out_size])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
            } => {
                let &[c, h, w] = input else {
                    return Err(fail(format!("conv2d expects [C,H,W], got {input:?}")));
                };
                if c != in_channels {
                    return Err(fail(format!(
                        "conv2d expects {in_channels} channels, got {c}"
                    )));
                }
                if stride == 0 || kernel_h == 0 || kernel_w == 0 || h < kernel_h || w < kernel_w
                {
                    return Err(fail(format!(
                        "kernel {kernel_h}x{kernel_w}/stride {stride} does not fit {h}x{w}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    (h - kernel_h) / stride + 1,
                    (w - kernel_w) / stride + 1,
                ])
            }
            LayerSpec::MaxPool2d { window, stride } => {
                let &[c, h, w] = input else {
                    return Err(fail(format!("maxpool2d expects [C,H,W], got {input:?}")));
                };
                if window == 0 || stride == 0 || h < window || w < window {
                    return Err(fail(format!(
                        "pool window {window}/stride {stride} does not fit {h}x{w}"
                    )));
                }
                Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// A sequential architecture together with the per-sample input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        ModelSpec {
            input_shape,
            layers,
        }
    }

    /// Per-sample shapes: entry 0 is the input, entry `i + 1` the output of layer `i`.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::IncompatibleShapes {
                layer: 0,
                detail: "model has no layers".into(),
            });
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::IncompatibleShapes {
                layer: 0,
                detail: format!("invalid input shape {:?}", self.input_shape),
            });
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.output_shape(i, shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        let out = shapes.last().expect("non-empty");
        if out.len() != 1 {
            return Err(Error::IncompatibleShapes {
                layer: self.layers.len() - 1,
                detail: format!("network output must be a vector, got {out:?}"),
            });
        }
        Ok(shapes)
    }

    /// Indices (into `layers`) of the parameterized layers.
    pub fn parameterized(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_parameterized())
            .map(|(i, _)| i)
            .collect()
    }
}
