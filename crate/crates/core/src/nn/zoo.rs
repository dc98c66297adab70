//! Preset architectures: a nine-layer fully connected net and scaled-down
//! AlexNet / VGG11 variants with 3x3 valid convolutions and 2x2 pooling.

use super::layer::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};

pub const PRESETS: [&str; 3] = ["fcnet", "alexnet-mini", "vgg11-mini"];

const FC_WIDTH: usize = 32;

/// Builds the named preset for a per-sample `input_shape` and `num_classes` outputs.
pub fn model_zoo(name: &str, input_shape: &[usize], num_classes: usize) -> Result<ModelSpec> {
    if num_classes < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 classes, got {num_classes}")));
    }
    let spec = match name {
        "fcnet" => fcnet(input_shape, num_classes)?,
        "alexnet-mini" => conv_stack(
            input_shape,
            &[(16, true), (32, true), (64, true)],
            &[256],
            num_classes,
        )?,
        "vgg11-mini" => conv_stack(
            input_shape,
            &[
                (16, false),
                (16, false),
                (16, false),
                (16, false),
                (32, false),
                (32, true),
                (64, true),
                (64, true),
            ],
            &[256, 128],
            num_classes,
        )?,
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    spec.infer_shapes()?;
    Ok(spec)
}

fn fcnet(input_shape: &[usize], num_classes: usize) -> Result<ModelSpec> {
    let mut layers = Vec::new();
    let mut width: usize = input_shape.iter().product();
    if input_shape.len() > 1 {
        layers.push(LayerSpec::Flatten);
    }
    for _ in 0..8 {
        layers.push(LayerSpec::dense(width, FC_WIDTH));
        layers.push(LayerSpec::Relu);
        width = FC_WIDTH;
    }
    layers.push(LayerSpec::dense(width, num_classes));
    Ok(ModelSpec::new(input_shape.to_vec(), layers))
}

/// `convs` lists (filters, followed-by-pool); `hidden` the dense widths before the output.
fn conv_stack(
    input_shape: &[usize],
    convs: &[(usize, bool)],
    hidden: &[usize],
    num_classes: usize,
) -> Result<ModelSpec> {
    let &[mut channels, _, _] = input_shape else {
        return Err(Error::InvalidConfig(format!(
            "conv presets need a [C,H,W] input, got {input_shape:?}"
        )));
    };
    let mut spec = ModelSpec::new(input_shape.to_vec(), Vec::new());
    for &(filters, pool) in convs {
        spec.layers.push(LayerSpec::conv(channels, filters, 3));
        spec.layers.push(LayerSpec::Relu);
        if pool {
            spec.layers.push(LayerSpec::pool(2));
        }
        channels = filters;
    }
    spec.layers.push(LayerSpec::Flatten);
    let mut width = flat_width(&spec)?;
    for &h in hidden {
        spec.layers.push(LayerSpec::dense(width, h));
        spec.layers.push(LayerSpec::Relu);
        width = h;
    }
    spec.layers.push(LayerSpec::dense(width, num_classes));
    Ok(spec)
}

fn flat_width(prefix: &ModelSpec) -> Result<usize> {
    let mut shape = prefix.input_shape.clone();
    for (i, l) in prefix.layers.iter().enumerate() {
        shape = l.output_shape(i, &shape)?;
    }
    Ok(shape.iter().product())
}
