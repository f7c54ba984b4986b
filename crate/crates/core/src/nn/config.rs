use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

/// `channels x height x width` of one batch item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input shape of an IQ capture of `frame_len` samples.
    pub fn iq(frame_len: usize) -> Self {
        Shape3 {
            channels: 1,
            height: 2,
            width: frame_len,
        }
    }
}

/// One layer. Convolutions use valid padding and stride 1; pooling windows
/// do not overlap and drop any remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: [usize; 2],
        activation: Activation,
    },
    MaxPool {
        size: [usize; 2],
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        match *self {
            LayerSpec::Conv2d {
                filters, kernel, ..
            } => {
                if filters == 0 || kernel[0] == 0 || kernel[1] == 0 {
                    return Err(Error::config("convolution needs filters and a kernel"));
                }
                if kernel[0] > input.height || kernel[1] > input.width {
                    return Err(Error::config(format!(
                        "kernel {kernel:?} larger than input {}x{}",
                        input.height, input.width
                    )));
                }
                Ok(Shape3 {
                    channels: filters,
                    height: input.height - kernel[0] + 1,
                    width: input.width - kernel[1] + 1,
                })
            }
            LayerSpec::MaxPool { size } => {
                if size[0] == 0 || size[1] == 0 || size[0] > input.height || size[1] > input.width {
                    return Err(Error::config(format!(
                        "pool {size:?} does not fit input {}x{}",
                        input.height, input.width
                    )));
                }
                Ok(Shape3 {
                    channels: input.channels,
                    height: input.height / size[0],
                    width: input.width / size[1],
                })
            }
            LayerSpec::Flatten => Ok(Shape3 {
                channels: input.len(),
                height: 1,
                width: 1,
            }),
            LayerSpec::Dense { units, .. } => {
                if units == 0 {
                    return Err(Error::config("dense layer needs units"));
                }
                if input.height != 1 || input.width != 1 {
                    return Err(Error::config("dense layer needs a flattened input"));
                }
                Ok(Shape3 {
                    channels: units,
                    height: 1,
                    width: 1,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input: Shape3,
    pub layers: Vec<LayerSpec>,
    /// Fixed factor applied to the final output. Setting it to the scale of
    /// the target (e.g. 10 for degrees in [-10, 10]) lets the trainable
    /// layers work at unit scale.
    #[serde(default = "unit_scale", skip_serializing_if = "is_unit_scale")]
    pub output_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

fn is_unit_scale(v: &f64) -> bool {
    *v == 1.0
}

impl NetworkConfig {
    pub fn new(input: Shape3, layers: Vec<LayerSpec>) -> Self {
        NetworkConfig {
            input,
            layers,
            output_scale: 1.0,
        }
    }

    pub fn with_output_scale(mut self, scale: f64) -> Self {
        self.output_scale = scale;
        self
    }

    /// Two convolutions and four dense layers ending in a linear unit:
    /// Conv(64, 1x8) -> Conv(16, 2x4) -> [MaxPool(1x2)] -> Flatten ->
    /// Dense(256) -> Dense(128) -> Dense(64) -> Dense(1, linear).
    pub fn estimator(frame_len: usize, with_pool: bool) -> Self {
        Self::conv_dense(frame_len, [64, 16], [8, 4], with_pool.then_some(2), [256, 128, 64])
    }

    /// The estimator topology with explicit widths.
    pub fn conv_dense(
        frame_len: usize,
        filters: [usize; 2],
        kernel_widths: [usize; 2],
        pool: Option<usize>,
        dense: [usize; 3],
    ) -> Self {
        let relu = Activation::Relu;
        let mut layers = vec![
            LayerSpec::Conv2d {
                filters: filters[0],
                kernel: [1, kernel_widths[0]],
                activation: relu,
            },
            LayerSpec::Conv2d {
                filters: filters[1],
                kernel: [2, kernel_widths[1]],
                activation: relu,
            },
        ];
        if let Some(p) = pool {
            layers.push(LayerSpec::MaxPool { size: [1, p] });
        }
        layers.push(LayerSpec::Flatten);
        for units in dense {
            layers.push(LayerSpec::Dense {
                units,
                activation: relu,
            });
        }
        layers.push(LayerSpec::Dense {
            units: 1,
            activation: Activation::Linear,
        });
        NetworkConfig::new(Shape3::iq(frame_len), layers)
    }

    /// Output shape after every layer.
    pub fn shapes(&self) -> Result<Vec<Shape3>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input;
        for layer in &self.layers {
            cur = layer.output_shape(cur)?;
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.is_empty() {
            return Err(Error::config("empty input shape"));
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(Error::config(format!(
                "output scale must be positive and finite, got {}",
                self.output_scale
            )));
        }
        self.shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Dense {
                units: 1,
                activation: Activation::Linear,
            }) => Ok(()),
            _ => Err(Error::config(
                "the final layer must be Dense(1) with a linear activation",
            )),
        }
    }

    pub fn frame_len(&self) -> usize {
        self.input.width
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_estimator_shapes_chain() {
        let cfg = NetworkConfig::estimator(1024, true);
        cfg.validate().unwrap();
        let shapes = cfg.shapes().unwrap();
        assert_eq!(shapes[0], Shape3 { channels: 64, height: 2, width: 1017 });
        assert_eq!(shapes[1], Shape3 { channels: 16, height: 1, width: 1014 });
        assert_eq!(shapes[2], Shape3 { channels: 16, height: 1, width: 507 });
        assert_eq!(shapes[3].channels, 16 * 507);
        assert_eq!(*shapes.last().unwrap(), Shape3 { channels: 1, height: 1, width: 1 });
    }

    #[test]
    fn bad_configs_rejected() {
        let mut cfg = NetworkConfig::estimator(64, false);
        cfg.layers.pop();
        assert!(cfg.validate().is_err());

        let cfg = NetworkConfig::new(
            Shape3::iq(4),
            vec![LayerSpec::Conv2d {
                filters: 2,
                kernel: [1, 8],
                activation: Activation::Relu,
            }],
        );
        assert!(cfg.validate().is_err());

        let cfg = NetworkConfig::new(
            Shape3::iq(4),
            vec![LayerSpec::Dense {
                units: 1,
                activation: Activation::Linear,
            }],
        );
        assert!(cfg.validate().is_err(), "dense on unflattened input");

        let cfg = NetworkConfig::estimator(64, false).with_output_scale(0.0);
        assert!(cfg.validate().is_err(), "zero output scale");
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = NetworkConfig::estimator(512, true);
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("\"kind\":\"max_pool\""));
        let back: NetworkConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        assert!(!s.contains("output_scale"), "unit scale is implicit");
        let scaled = cfg.with_output_scale(10.0);
        let s = serde_json::to_string(&scaled).unwrap();
        assert_eq!(serde_json::from_str::<NetworkConfig>(&s).unwrap(), scaled);
    }
}
