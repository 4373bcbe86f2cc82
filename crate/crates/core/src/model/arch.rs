use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ops::{conv_output_extent, pool_output_extent};

/// Number of output neurons; the classifier is binary.
pub const NUM_CLASSES: usize = 2;

/// One entry of a declarative layer list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Input {
        channels: usize,
        height: usize,
        width: usize,
    },
    Conv {
        filters: usize,
        kernel: [usize; 2],
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Maxpool,
    Flatten,
    FullyConnected {
        neurons: usize,
    },
    Relu,
    Batchnorm,
    Dropout {
        rate: f64,
    },
    Output {
        neurons: usize,
    },
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn conv3x3(filters: usize) -> Self {
        LayerSpec::Conv {
            filters,
            kernel: [3, 3],
            stride: 1,
            padding: 0,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Input { .. } => "input",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Maxpool => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Relu => "relu",
            LayerSpec::Batchnorm => "batchnorm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Output { .. } => "output",
        }
    }
}

/// Per-sample activation shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Map {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Map {
                channels,
                height,
                width,
            } => channels * height * width,
            Shape::Flat(n) => n,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Map {
                channels,
                height,
                width,
            } => vec![channels, height, width],
            Shape::Flat(n) => vec![n],
        }
    }

    /// Channel count seen by a batchnorm layer.
    pub fn channels(&self) -> usize {
        match *self {
            Shape::Map { channels, .. } => channels,
            Shape::Flat(n) => n,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Map {
                channels,
                height,
                width,
            } => write!(f, "{channels},{height}x{width}"),
            Shape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// Ordered layer list, starting with exactly one `input` layer and ending with
/// exactly one `output` layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

/// The classifier: two conv+pool blocks, two hidden fully connected layers
/// with ReLU, and a two-neuron output.
pub fn build_pvfaultnet(input_side: usize) -> Result<ArchitectureConfig> {
    let config = ArchitectureConfig {
        name: format!("pv-faultnet-{input_side}"),
        layers: vec![
            LayerSpec::Input {
                channels: 3,
                height: input_side,
                width: input_side,
            },
            LayerSpec::conv3x3(5),
            LayerSpec::Maxpool,
            LayerSpec::conv3x3(10),
            LayerSpec::Maxpool,
            LayerSpec::Flatten,
            LayerSpec::FullyConnected { neurons: 100 },
            LayerSpec::Relu,
            LayerSpec::FullyConnected { neurons: 50 },
            LayerSpec::Relu,
            LayerSpec::Output { neurons: NUM_CLASSES },
        ],
    };
    shape_propagate(&config).map_err(|e| {
        Error::invalid(format!(
            "input side {input_side} is too small for two conv+pool stages: {e}"
        ))
    })?;
    Ok(config)
}

/// Output shape of every layer, in order. The first entry is the input shape.
pub fn shape_propagate(config: &ArchitectureConfig) -> Result<Vec<Shape>> {
    let err = |index: usize, reason: String| Error::Architecture { index, reason };
    let n = config.layers.len();
    if n < 2 {
        return Err(err(0, "need at least an input and an output layer".into()));
    }
    let mut shapes = Vec::with_capacity(n);
    let mut current: Option<Shape> = None;
    for (i, layer) in config.layers.iter().enumerate() {
        let next = match (layer, current) {
            (
                LayerSpec::Input {
                    channels,
                    height,
                    width,
                },
                None,
            ) => {
                if *channels == 0 || *height == 0 || *width == 0 {
                    return Err(err(i, "input extents must be positive".into()));
                }
                Shape::Map {
                    channels: *channels,
                    height: *height,
                    width: *width,
                }
            }
            (LayerSpec::Input { .. }, Some(_)) => {
                return Err(err(i, "input layer must appear exactly once, first".into()))
            }
            (_, None) => return Err(err(i, "first layer must be the input layer".into())),
            (
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                },
                Some(Shape::Map { height, width, .. }),
            ) => {
                if *filters == 0 {
                    return Err(err(i, "conv needs at least one filter".into()));
                }
                if kernel[0] % 2 == 0 || kernel[1] % 2 == 0 {
                    return Err(err(
                        i,
                        format!("conv kernel {}x{} must have odd extents", kernel[0], kernel[1]),
                    ));
                }
                if *stride == 0 {
                    return Err(err(i, "conv stride must be positive".into()));
                }
                let h = conv_output_extent(height, kernel[0], *stride, *padding);
                let w = conv_output_extent(width, kernel[1], *stride, *padding);
                match (h, w) {
                    (Some(h), Some(w)) => Shape::Map {
                        channels: *filters,
                        height: h,
                        width: w,
                    },
                    _ => {
                        return Err(err(
                            i,
                            format!("conv {}x{} does not fit a {height}x{width} map", kernel[0], kernel[1]),
                        ))
                    }
                }
            }
            (
                LayerSpec::Maxpool,
                Some(Shape::Map {
                    channels,
                    height,
                    width,
                }),
            ) => match (pool_output_extent(height), pool_output_extent(width)) {
                (Some(h), Some(w)) => Shape::Map {
                    channels,
                    height: h,
                    width: w,
                },
                _ => return Err(err(i, format!("max-pool needs at least 2x2, got {height}x{width}"))),
            },
            (LayerSpec::Flatten, Some(s @ Shape::Map { .. })) => Shape::Flat(s.numel()),
            (LayerSpec::FullyConnected { neurons } | LayerSpec::Output { neurons }, Some(Shape::Flat(_))) => {
                if *neurons == 0 {
                    return Err(err(i, "layer needs at least one neuron".into()));
                }
                Shape::Flat(*neurons)
            }
            (LayerSpec::Relu | LayerSpec::Batchnorm, Some(s)) => s,
            (LayerSpec::Dropout { rate }, Some(s)) => {
                if !(0.0..1.0).contains(rate) {
                    return Err(err(i, format!("dropout rate {rate} outside [0, 1)")));
                }
                s
            }
            (layer, Some(s)) => {
                return Err(err(
                    i,
                    format!("{} layer cannot follow a layer producing {s}", layer.kind_name()),
                ))
            }
        };
        if matches!(layer, LayerSpec::Output { .. }) && i + 1 != n {
            return Err(err(i, "output layer must be last".into()));
        }
        current = Some(next);
        shapes.push(next);
    }
    match config.layers.last() {
        Some(LayerSpec::Output { neurons }) if *neurons == NUM_CLASSES => Ok(shapes),
        Some(LayerSpec::Output { neurons }) => Err(err(
            n - 1,
            format!("output layer must have {NUM_CLASSES} neurons, got {neurons}"),
        )),
        _ => Err(err(n - 1, "last layer must be the output layer".into())),
    }
}

/// Inserts a batchnorm layer after every conv layer.
pub fn with_batchnorm(config: &ArchitectureConfig) -> Result<ArchitectureConfig> {
    let mut layers = Vec::with_capacity(config.layers.len() + 2);
    for l in &config.layers {
        layers.push(l.clone());
        if matches!(l, LayerSpec::Conv { .. }) {
            layers.push(LayerSpec::Batchnorm);
        }
    }
    let out = ArchitectureConfig {
        name: format!("{}+bn", config.name),
        layers,
    };
    shape_propagate(&out)?;
    Ok(out)
}

/// Inserts dropout with the given rate before every fully connected and
/// output layer.
pub fn with_dropout(config: &ArchitectureConfig, rate: f64) -> Result<ArchitectureConfig> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    let mut layers = Vec::with_capacity(config.layers.len() + 3);
    for l in &config.layers {
        if matches!(l, LayerSpec::FullyConnected { .. } | LayerSpec::Output { .. }) {
            layers.push(LayerSpec::Dropout { rate });
        }
        layers.push(l.clone());
    }
    let out = ArchitectureConfig {
        name: format!("{}+dropout{}", config.name, (rate * 100.0).round()),
        layers,
    };
    shape_propagate(&out)?;
    Ok(out)
}

impl ArchitectureConfig {
    /// `(channels, height, width)` of the input layer.
    pub fn input_shape(&self) -> Result<(usize, usize, usize)> {
        match self.layers.first() {
            Some(LayerSpec::Input {
                channels,
                height,
                width,
            }) => Ok((*channels, *height, *width)),
            _ => Err(Error::Architecture {
                index: 0,
                reason: "first layer must be the input layer".into(),
            }),
        }
    }

    /// Hex SHA-256 of the layer list; the name does not participate.
    pub fn architecture_hash(&self) -> String {
        let json = serde_json::to_string(&self.layers).expect("layer specs serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("architecture config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        shape_propagate(&cfg)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}
