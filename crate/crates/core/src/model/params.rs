//! Learned weights, arranged as a tree generic over its leaf type.
//!
//! The same tree holds stored tensors (`ModelParams<Tensor<T>>`), graph
//! handles during a forward pass (`ModelParams<Var>`), or bare shapes.
//! All traversals go through `try_map`, so every view enumerates leaves in
//! the same order under the same dotted names.

use std::convert::Infallible;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HyperParams, ModelError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map `x . weight + bias`, weight stored `(in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<P> {
    pub weight: P,
    pub bias: P,
}

impl<P> Dense<P> {
    fn try_map<'a, Q, E, F>(&'a self, prefix: &str, f: &mut F) -> Result<Dense<Q>, E>
    where
        F: FnMut(&str, &'a P) -> Result<Q, E>,
    {
        Ok(Dense {
            weight: f(&join(prefix, "weight"), &self.weight)?,
            bias: f(&join(prefix, "bias"), &self.bias)?,
        })
    }
}

/// Per-head query/key/value maps `embed -> head_dim` and the output map
/// `embed -> embed`.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention<P> {
    pub query: Vec<P>,
    pub key: Vec<P>,
    pub value: Vec<P>,
    pub output: P,
}

impl<P> Attention<P> {
    fn try_map<'a, Q, E, F>(&'a self, prefix: &str, f: &mut F) -> Result<Attention<Q>, E>
    where
        F: FnMut(&str, &'a P) -> Result<Q, E>,
    {
        let mut heads = |kind: &str, ws: &'a [P]| -> Result<Vec<Q>, E> {
            ws.iter()
                .enumerate()
                .map(|(i, w)| f(&join(prefix, &format!("{kind}.{i}")), w))
                .collect()
        };
        let query = heads("query", &self.query)?;
        let key = heads("key", &self.key)?;
        let value = heads("value", &self.value)?;
        Ok(Attention {
            query,
            key,
            value,
            output: f(&join(prefix, "output"), &self.output)?,
        })
    }
}

/// One attention branch followed by its self-gated enhancement.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch<P> {
    pub attention: Attention<P>,
    pub gate: Dense<P>,
}

impl<P> Branch<P> {
    fn try_map<'a, Q, E, F>(&'a self, prefix: &str, f: &mut F) -> Result<Branch<Q>, E>
    where
        F: FnMut(&str, &'a P) -> Result<Q, E>,
    {
        Ok(Branch {
            attention: self.attention.try_map(&join(prefix, "attention"), f)?,
            gate: self.gate.try_map(&join(prefix, "gate"), f)?,
        })
    }
}

/// Context gates `C -> embed` for the spatial and spectral tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Enhancement<P> {
    pub spatial: Dense<P>,
    pub spectral: Dense<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<P> {
    pub enhancement: Enhancement<P>,
    /// Queries from spatial tokens, keys and values from spectral ones.
    pub spatial: Branch<P>,
    /// Queries from spectral tokens, keys and values from spatial ones.
    pub spectral: Branch<P>,
}

impl<P> Layer<P> {
    fn try_map<'a, Q, E, F>(&'a self, prefix: &str, f: &mut F) -> Result<Layer<Q>, E>
    where
        F: FnMut(&str, &'a P) -> Result<Q, E>,
    {
        Ok(Layer {
            enhancement: Enhancement {
                spatial: self.enhancement.spatial.try_map(&join(prefix, "enhance.spatial"), f)?,
                spectral: self
                    .enhancement
                    .spectral
                    .try_map(&join(prefix, "enhance.spectral"), f)?,
            },
            spatial: self.spatial.try_map(&join(prefix, "spatial"), f)?,
            spectral: self.spectral.try_map(&join(prefix, "spectral"), f)?,
        })
    }
}

/// `h_t = relu(h_{t-1} . transition + e_t . update)`; the initial state is
/// zero and not learned.
#[derive(Clone, Debug, PartialEq)]
pub struct Ssm<P> {
    /// `(state, state)`
    pub transition: P,
    /// `(embed, state)`
    pub update: P,
}

impl<P> Ssm<P> {
    fn try_map<'a, Q, E, F>(&'a self, prefix: &str, f: &mut F) -> Result<Ssm<Q>, E>
    where
        F: FnMut(&str, &'a P) -> Result<Q, E>,
    {
        Ok(Ssm {
            transition: f(&join(prefix, "transition"), &self.transition)?,
            update: f(&join(prefix, "update"), &self.update)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P> {
    /// Token projection `C -> embed` for spatial tokens.
    pub spatial_proj: Dense<P>,
    /// Token projection `C -> embed` for spectral tokens.
    pub spectral_proj: Dense<P>,
    pub layers: Vec<Layer<P>>,
    pub spatial_ssm: Ssm<P>,
    pub spectral_ssm: Ssm<P>,
    /// `2 * state -> classes`
    pub classifier: Dense<P>,
}

impl<P> ModelParams<P> {
    pub fn try_map<'a, Q, E, F>(&'a self, mut f: F) -> Result<ModelParams<Q>, E>
    where
        F: FnMut(&str, &'a P) -> Result<Q, E>,
    {
        let f = &mut f;
        Ok(ModelParams {
            spatial_proj: self.spatial_proj.try_map("proj.spatial", f)?,
            spectral_proj: self.spectral_proj.try_map("proj.spectral", f)?,
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.try_map(&format!("layer{i}"), f))
                .collect::<Result<_, E>>()?,
            spatial_ssm: self.spatial_ssm.try_map("ssm.spatial", f)?,
            spectral_ssm: self.spectral_ssm.try_map("ssm.spectral", f)?,
            classifier: self.classifier.try_map("classifier", f)?,
        })
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> ModelParams<Q> {
        match self.try_map(|name, p| Ok::<_, Infallible>(f(name, p))) {
            Ok(out) => out,
            Err(never) => match never {},
        }
    }

    /// Leaves with their dotted names, in traversal order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        let _ = self.try_map(|name, p| {
            out.push((name.to_string(), p));
            Ok::<_, Infallible>(())
        });
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.map(|name, _| out.push(name.to_string()));
        out
    }

    pub fn len(&self) -> usize {
        self.names().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Same structure with leaves drawn, in order, from `values`.
    pub fn rebuild<Q>(&self, values: impl IntoIterator<Item = Q>) -> Result<ModelParams<Q>, ModelError> {
        let mut it = values.into_iter();
        let out = self.try_map(|name, _| {
            it.next()
                .ok_or_else(|| ModelError::Config(format!("no value supplied for parameter {name}")))
        })?;
        if it.next().is_some() {
            return Err(ModelError::Config("more values than parameters".into()));
        }
        Ok(out)
    }
}

impl<P: Clone> ModelParams<P> {
    pub fn to_flat(&self) -> Vec<P> {
        let mut out = Vec::new();
        self.map(|_, p| out.push(p.clone()));
        out
    }
}

impl ModelParams<Vec<usize>> {
    /// Parameter shapes for `hp` over `bands` input bands.
    pub fn layout(hp: &HyperParams, bands: usize) -> Self {
        let (e, s, k, d) = (hp.embed_dim, hp.state_dim, hp.num_classes, hp.head_dim());
        let dense = |i: usize, o: usize| Dense {
            weight: vec![i, o],
            bias: vec![o],
        };
        let branch = || Branch {
            attention: Attention {
                query: vec![vec![e, d]; hp.num_heads],
                key: vec![vec![e, d]; hp.num_heads],
                value: vec![vec![e, d]; hp.num_heads],
                output: vec![e, e],
            },
            gate: dense(e, e),
        };
        let ssm = || Ssm {
            transition: vec![s, s],
            update: vec![e, s],
        };
        ModelParams {
            spatial_proj: dense(bands, e),
            spectral_proj: dense(bands, e),
            layers: (0..hp.num_layers)
                .map(|_| Layer {
                    enhancement: Enhancement {
                        spatial: dense(bands, e),
                        spectral: dense(bands, e),
                    },
                    spatial: branch(),
                    spectral: branch(),
                })
                .collect(),
            spatial_ssm: ssm(),
            spectral_ssm: ssm(),
            classifier: dense(2 * s, k),
        }
    }
}

impl<T: Scalar> ModelParams<Tensor<T>> {
    /// Xavier-uniform weights, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`,
    /// and zero biases, drawn in traversal order from a seeded stream.
    pub fn init(hp: &HyperParams, bands: usize, seed: u64) -> Result<Self, ModelError> {
        hp.validate()?;
        if bands == 0 {
            return Err(ModelError::Config("bands must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(ModelParams::layout(hp, bands).map(|name, shape| {
            if name.ends_with(".bias") {
                return Tensor::zeros(shape);
            }
            let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
            Tensor::new(shape, data).expect("layout shapes are positive")
        }))
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(Tensor::is_finite)
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let (a, b) = (self.to_flat(), other.to_flat());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.bitwise_eq(y))
    }

    pub fn numel(&self) -> usize {
        self.to_flat().iter().map(Tensor::numel).sum()
    }
}
