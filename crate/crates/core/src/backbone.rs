//! Per-pixel probabilistic classifier.
//!
//! Each pixel is described by its `(2r+1)²` neighborhood across all input
//! channels plus its normalized coordinates. A small ReLU MLP maps that vector to
//! class probabilities; its last hidden activation is exposed as the feature map
//! consumed by the evidential head.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{FeatureMap, PixelMap, ProbabilityMap};

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Length of the per-pixel vector produced by [`extract_patch_features`].
pub fn patch_feature_len(channels: usize, radius: usize) -> usize {
    channels * (2 * radius + 1).pow(2) + 2
}

/// Neighborhood features with reflect padding, followed by `(x / W, y / H)`.
///
/// Values are ordered by row offset, then column offset, then channel.
pub fn extract_patch_features(image: &PixelMap, radius: usize) -> Result<FeatureMap> {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::EmptyImage);
    }
    let len = patch_feature_len(c, radius);
    let r = radius as isize;
    let mut out = Vec::with_capacity(h * w * len);
    for y in 0..h {
        for x in 0..w {
            for dy in -r..=r {
                let yy = reflect(y as isize + dy, h);
                for dx in -r..=r {
                    let xx = reflect(x as isize + dx, w);
                    out.extend_from_slice(image.pixel(yy, xx));
                }
            }
            out.push(x as f64 / w as f64);
            out.push(y as f64 / h as f64);
        }
    }
    PixelMap::new(h, w, len, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Shape description of a backbone, stored alongside its weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneShape {
    pub patch_radius: usize,
    pub input_channels: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl BackboneShape {
    pub fn input_dim(&self) -> usize {
        patch_feature_len(self.input_channels, self.patch_radius)
    }

    /// `(fan_in, fan_out)` of every layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut fan_in = self.input_dim();
        for &h in self.hidden.iter().chain(std::iter::once(&self.classes)) {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims
    }

    pub fn tap_dim(&self) -> usize {
        *self.hidden.last().unwrap_or(&0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub shape: BackboneShape,
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Post-ReLU activations of every hidden layer.
    hidden: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct BackboneOutput {
    pub probs: ProbabilityMap,
    pub tap: FeatureMap,
    pub cache: ForwardCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneGrads {
    pub layers: Vec<Dense>,
}

impl BackboneGrads {
    pub fn add_assign(&mut self, other: &BackboneGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
}

impl BackboneParams {
    /// He-initialized weights (`N(0, 2 / fan_in)`), zero biases.
    pub fn init(shape: BackboneShape, seed: u64) -> Result<Self> {
        if shape.hidden.is_empty() || shape.hidden.contains(&0) {
            return Err(Error::InvalidConfig("backbone needs nonzero hidden layers".into()));
        }
        if shape.classes < 2 || shape.input_channels == 0 {
            return Err(Error::InvalidConfig("backbone needs >= 2 classes and >= 1 channel".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = shape
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                Dense {
                    weight: Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(&mut rng)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { shape, layers })
    }

    pub fn zeros(shape: BackboneShape) -> Self {
        let layers = shape
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| Dense {
                weight: Array2::zeros((fan_in, fan_out)),
                bias: Array1::zeros(fan_out),
            })
            .collect();
        Self { shape, layers }
    }

    pub fn zero_grads(&self) -> BackboneGrads {
        BackboneGrads {
            layers: Self::zeros(self.shape.clone()).layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.shape.layer_dims();
        if dims.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("layer count".into()));
        }
        for (layer, (fan_in, fan_out)) in self.layers.iter().zip(dims) {
            if layer.weight.dim() != (fan_in, fan_out) || layer.bias.len() != fan_out {
                return Err(Error::ShapeMismatch(format!(
                    "layer expected {fan_in}x{fan_out}, got {:?}",
                    layer.weight.dim()
                )));
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonfiniteInput);
            }
        }
        Ok(())
    }

    pub fn apply_gradients(&mut self, grads: &BackboneGrads, lr: f64) {
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            p.weight.scaled_add(-lr, &g.weight);
            p.bias.scaled_add(-lr, &g.bias);
        }
    }

    fn input_view<'a>(&self, features: &'a FeatureMap) -> Result<ArrayView2<'a, f64>> {
        let d = self.shape.input_dim();
        if features.channels() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: features.channels(),
            });
        }
        Ok(ArrayView2::from_shape((features.pixels(), d), features.data()).expect("shape checked"))
    }

    /// Probabilities, tap features and the activations needed by [`Self::backward`].
    pub fn forward(&self, features: &FeatureMap) -> Result<BackboneOutput> {
        let x = self.input_view(features)?;
        let (h, w) = (features.height(), features.width());
        let (output, hidden_layers) = self.layers.split_last().expect("at least one layer");
        let mut hidden = Vec::with_capacity(hidden_layers.len());
        for layer in hidden_layers {
            let input = hidden.last().map_or(x.view(), |a: &Array2<f64>| a.view());
            let mut z = input.dot(&layer.weight) + &layer.bias;
            z.mapv_inplace(|v| v.max(0.0));
            hidden.push(z);
        }
        let tap = hidden.last().expect("at least one hidden layer");
        let mut logits = tap.dot(&output.weight) + &output.bias;
        softmax_rows(&mut logits);
        let k = self.shape.classes;
        let probs = PixelMap::new(h, w, k, logits.into_raw_vec_and_offset().0)?;
        let tap = PixelMap::new(h, w, self.shape.tap_dim(), tap.iter().copied().collect())?;
        Ok(BackboneOutput {
            probs,
            tap,
            cache: ForwardCache { hidden },
        })
    }

    /// Chain rule through softmax, the affine layers and ReLU.
    pub fn backward(
        &self,
        features: &FeatureMap,
        cache: &ForwardCache,
        probs: &ProbabilityMap,
        d_probs: &ProbabilityMap,
        d_tap: Option<&FeatureMap>,
    ) -> Result<BackboneGrads> {
        let x = self.input_view(features)?;
        let n = features.pixels();
        let k = self.shape.classes;
        if d_probs.pixels() != n || d_probs.channels() != k || !probs.same_shape(d_probs) {
            return Err(Error::ShapeMismatch("probability gradient".into()));
        }
        let p = ArrayView2::from_shape((n, k), probs.data()).expect("shape checked");
        let gp = ArrayView2::from_shape((n, k), d_probs.data()).expect("shape checked");
        let mut d_logits = &gp * &p;
        let inner = d_logits.sum_axis(Axis(1));
        d_logits = &p * &(&gp - &inner.insert_axis(Axis(1)));

        let depth = self.layers.len();
        let mut grads = Vec::with_capacity(depth);
        let mut delta = d_logits;
        for l in (0..depth).rev() {
            let input = if l == 0 { x.view() } else { cache.hidden[l - 1].view() };
            grads.push(Dense {
                weight: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if l == 0 {
                break;
            }
            let mut upstream = delta.dot(&self.layers[l].weight.t());
            if l == depth - 1 {
                if let Some(dt) = d_tap {
                    let tap_dim = self.shape.tap_dim();
                    if dt.pixels() != n || dt.channels() != tap_dim {
                        return Err(Error::ShapeMismatch("tap gradient".into()));
                    }
                    upstream += &ArrayView2::from_shape((n, tap_dim), dt.data()).expect("checked");
                }
            }
            let act = &cache.hidden[l - 1];
            ndarray::Zip::from(&mut upstream)
                .and(act)
                .for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            delta = upstream;
        }
        grads.reverse();
        Ok(BackboneGrads { layers: grads })
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

/// Forward pass returning the probability map and the tap feature map.
pub fn backbone_forward(
    features: &FeatureMap,
    params: &BackboneParams,
) -> Result<(ProbabilityMap, FeatureMap)> {
    let out = params.forward(features)?;
    Ok((out.probs, out.tap))
}

/// Parameter gradients for upstream gradients on the probabilities and on the tap.
pub fn backbone_backward(
    features: &FeatureMap,
    params: &BackboneParams,
    d_probs: &ProbabilityMap,
    d_tap: Option<&FeatureMap>,
) -> Result<BackboneGrads> {
    let out = params.forward(features)?;
    params.backward(features, &out.cache, &out.probs, d_probs, d_tap)
}
