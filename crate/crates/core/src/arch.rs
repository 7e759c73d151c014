//! Architecture grammar and validation.
//!
//! Network layouts are written as dash-separated tokens: `<n>C<k>` is a
//! convolution with `n` output channels and a `k`-by-`k` kernel, `P<k>` is
//! `k`-by-`k` max pooling, and `<n>F` is a fully connected layer of `n`
//! units — e.g. `"128C3-128C3-P2-128C3-P2-1024F-256F-10F"`. Convolutions
//! always use stride 1 with "same" zero padding (so kernels must be odd),
//! pooling windows must tile the incoming map exactly, and the fully
//! connected layers form the tail of the network with an implicit flatten
//! before the first one. The readout is the last `F` layer.

use std::fmt;

use crate::error::{Error, Result};
use crate::ops::same_pad;

/// One parsed token of the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize },
    Pool { kernel: usize },
    Dense { units: usize },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { out_channels, kernel } => write!(f, "{out_channels}C{kernel}"),
            LayerSpec::Pool { kernel } => write!(f, "P{kernel}"),
            LayerSpec::Dense { units } => write!(f, "{units}F"),
        }
    }
}

/// One executable step of a validated architecture. `param` indexes into
/// the model's weight list (weighted layers only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Conv { param: usize, pad: usize },
    Pool { kernel: usize },
    Flatten,
    Dense { param: usize },
}

/// A validated architecture with every shape resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Input shape as (channels, height, width).
    pub input: [usize; 3],
    /// Number of classes; equals the readout width.
    pub classes: usize,
    /// The parsed layer tokens, in order.
    pub layers: Vec<LayerSpec>,
    /// Executable steps (layers plus the implicit flatten).
    pub steps: Vec<Step>,
    /// Weight shape of each weighted layer, in order.
    pub param_shapes: Vec<Vec<usize>>,
    /// Output shape after each step in `steps`.
    pub shapes: Vec<Vec<usize>>,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(&self.layers))
    }
}

fn parse_count(digits: &str, position: usize, token: &str, what: &str) -> Result<usize> {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::ArchParse {
            position,
            token: token.to_string(),
            reason: format!("{what} must be a plain decimal number"),
        });
    }
    let n: usize = digits.parse().map_err(|_| Error::ArchParse {
        position,
        token: token.to_string(),
        reason: format!("{what} is out of range"),
    })?;
    if n == 0 {
        return Err(Error::ArchParse {
            position,
            token: token.to_string(),
            reason: format!("{what} must be at least 1"),
        });
    }
    Ok(n)
}

/// Parse an architecture string into layer tokens (no shape checking).
pub fn parse(text: &str) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    for (position, token) in text.split('-').enumerate() {
        let spec = if let Some(rest) = token.strip_prefix('P') {
            LayerSpec::Pool { kernel: parse_count(rest, position, token, "pool window")? }
        } else if let Some((n, k)) = token.split_once('C') {
            LayerSpec::Conv {
                out_channels: parse_count(n, position, token, "channel count")?,
                kernel: parse_count(k, position, token, "kernel size")?,
            }
        } else if let Some(n) = token.strip_suffix('F') {
            LayerSpec::Dense { units: parse_count(n, position, token, "unit count")? }
        } else {
            return Err(Error::ArchParse {
                position,
                token: token.to_string(),
                reason: "expected <n>C<k>, P<k> or <n>F".to_string(),
            });
        };
        layers.push(spec);
    }
    Ok(layers)
}

/// Render layer tokens back to the dash-separated string form.
pub fn render(layers: &[LayerSpec]) -> String {
    layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("-")
}

/// Check a parsed layer list against an input shape and class count,
/// resolving every feature-map and weight shape along the way.
pub fn validate_and_shape(
    layers: Vec<LayerSpec>,
    input: [usize; 3],
    classes: usize,
) -> Result<Architecture> {
    if input.iter().any(|&d| d == 0) {
        return Err(Error::ArchInvalid(format!("input shape {input:?} has a zero extent")));
    }
    if classes < 2 {
        return Err(Error::ArchInvalid(format!("need at least 2 classes, got {classes}")));
    }
    match layers.first() {
        None => return Err(Error::ArchInvalid("architecture has no layers".into())),
        Some(LayerSpec::Pool { .. }) => {
            return Err(Error::ArchInvalid(
                "first layer must be a convolution or dense layer, not pooling".into(),
            ))
        }
        Some(_) => {}
    }

    let [mut c, mut h, mut w] = input;
    let mut steps = Vec::new();
    let mut param_shapes: Vec<Vec<usize>> = Vec::new();
    let mut shapes: Vec<Vec<usize>> = Vec::new();
    let mut flat: Option<usize> = None; // Some(n) once the map is flattened

    for (i, &layer) in layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv { out_channels, kernel } => {
                if flat.is_some() {
                    return Err(Error::ArchInvalid(format!(
                        "layer {i} ({layer}): convolution after a dense layer"
                    )));
                }
                if kernel % 2 == 0 {
                    return Err(Error::ArchInvalid(format!(
                        "layer {i} ({layer}): kernel must be odd for \"same\" padding"
                    )));
                }
                param_shapes.push(vec![out_channels, c, kernel, kernel]);
                steps.push(Step::Conv { param: param_shapes.len() - 1, pad: same_pad(kernel) });
                c = out_channels;
                shapes.push(vec![c, h, w]);
            }
            LayerSpec::Pool { kernel } => {
                if flat.is_some() {
                    return Err(Error::ArchInvalid(format!(
                        "layer {i} ({layer}): pooling after a dense layer"
                    )));
                }
                if h % kernel != 0 || w % kernel != 0 {
                    return Err(Error::ArchInvalid(format!(
                        "layer {i} ({layer}): window {kernel} does not divide {h}x{w}"
                    )));
                }
                h /= kernel;
                w /= kernel;
                steps.push(Step::Pool { kernel });
                shapes.push(vec![c, h, w]);
            }
            LayerSpec::Dense { units } => {
                let fan_in = match flat {
                    Some(n) => n,
                    None => {
                        let n = c * h * w;
                        steps.push(Step::Flatten);
                        shapes.push(vec![n]);
                        n
                    }
                };
                param_shapes.push(vec![units, fan_in]);
                steps.push(Step::Dense { param: param_shapes.len() - 1 });
                shapes.push(vec![units]);
                flat = Some(units);
            }
        }
    }

    match layers.last() {
        Some(&LayerSpec::Dense { units }) if units == classes => {}
        Some(&LayerSpec::Dense { units }) => {
            return Err(Error::ArchInvalid(format!(
                "readout has {units} units but the dataset has {classes} classes"
            )))
        }
        _ => {
            return Err(Error::ArchInvalid(
                "last layer must be a dense readout".into(),
            ))
        }
    }

    Ok(Architecture { input, classes, layers, steps, param_shapes, shapes })
}

impl Architecture {
    /// Parse and validate in one go.
    pub fn from_text(text: &str, input: [usize; 3], classes: usize) -> Result<Self> {
        validate_and_shape(parse(text)?, input, classes)
    }

    /// Total number of weight values across all layers.
    pub fn param_count(&self) -> usize {
        self.param_shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }
}
