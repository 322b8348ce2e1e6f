use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIdx {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Glorot,
    Zeros,
    Positional,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerIdx {
    /// `[node type][head]`
    pub q: Vec<Vec<LinearIdx>>,
    pub k: Vec<Vec<LinearIdx>>,
    pub v: Vec<Vec<LinearIdx>>,
    /// One `embed × embed` matrix per edge type.
    pub msg: Vec<usize>,
    /// `[node type][depth]`
    pub out: Vec<Vec<LinearIdx>>,
}

/// Names, shapes and roles of every learnable tensor for one config.
///
/// The layout is a pure function of the config; parameter `i` always lives at
/// index `i` of [`Parameters::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
    pub(crate) encoder: Vec<LinearIdx>,
    pub(crate) positional: usize,
    pub(crate) layers: Vec<LayerIdx>,
    pub(crate) global: Vec<LinearIdx>,
    pub(crate) decoder: Vec<LinearIdx>,
    pub(crate) critic: Vec<LinearIdx>,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = Self {
            names: Vec::new(),
            shapes: Vec::new(),
            inits: Vec::new(),
            encoder: Vec::new(),
            positional: 0,
            layers: Vec::new(),
            global: Vec::new(),
            decoder: Vec::new(),
            critic: Vec::new(),
        };
        let embed = config.embed_dim;
        let head = config.head_dim();
        let types = config.node_type_count();

        layout.encoder = (0..types)
            .map(|u| layout.linear(&format!("encoder.type{u}"), config.local_obs_dim, embed))
            .collect();
        layout.positional = layout.push("pos_embedding".into(), vec![config.max_nodes(), embed], Init::Positional);

        for l in 0..config.layers {
            let projections = |kind: &str, layout: &mut Self| -> Vec<Vec<LinearIdx>> {
                (0..types)
                    .map(|u| {
                        (0..config.heads)
                            .map(|i| layout.linear(&format!("layer{l}.{kind}.type{u}.head{i}"), embed, head))
                            .collect()
                    })
                    .collect()
            };
            let q = projections("q", &mut layout);
            let k = projections("k", &mut layout);
            let v = projections("v", &mut layout);
            let msg = (0..config.edge_type_count())
                .map(|p| layout.push(format!("layer{l}.msg.edge{p}"), vec![embed, embed], Init::Glorot))
                .collect();
            let out = (0..types)
                .map(|u| {
                    (0..config.out_mlp_depth)
                        .map(|d| layout.linear(&format!("layer{l}.out.type{u}.lin{d}"), embed, embed))
                        .collect()
                })
                .collect();
            layout.layers.push(LayerIdx { q, k, v, msg, out });
        }

        layout.global = layout.mlp("global", config.global_obs_dim, &config.global_hidden);
        let dec_in = embed + config.global_embed_dim();
        let mut dec_sizes = config.decoder_hidden.clone();
        dec_sizes.push(1);
        layout.decoder = layout.mlp("decoder", dec_in, &dec_sizes);
        layout.critic = layout.mlp("critic", dec_in, &dec_sizes);
        Ok(layout)
    }

    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
        LinearIdx {
            weight: self.push(format!("{prefix}.weight"), vec![fan_in, fan_out], Init::Glorot),
            bias: self.push(format!("{prefix}.bias"), vec![1, fan_out], Init::Zeros),
        }
    }

    fn mlp(&mut self, prefix: &str, input: usize, sizes: &[usize]) -> Vec<LinearIdx> {
        let mut fan_in = input;
        sizes
            .iter()
            .enumerate()
            .map(|(k, &out)| {
                let lin = self.linear(&format!("{prefix}.lin{k}"), fan_in, out);
                fan_in = out;
                lin
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Number of edge-type message matrices in HGT layer `layer`.
    pub fn message_matrices_in_layer(&self, layer: usize) -> usize {
        self.layers.get(layer).map_or(0, |l| l.msg.len())
    }

    pub fn message_matrix(&self, layer: usize, edge_type: usize) -> Option<usize> {
        self.layers.get(layer)?.msg.get(edge_type).copied()
    }

    pub fn scalar_count(&self) -> usize {
        self.shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// Every learnable tensor of one model, together with its config.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    config: ModelConfig,
    layout: Arc<ParamLayout>,
    tensors: Vec<Tensor>,
}

impl Parameters {
    /// Glorot-uniform weights, zero biases, N(0, 0.02²) positional table.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let layout = ParamLayout::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positional = Normal::new(0.0, 0.02).expect("valid normal");
        let tensors = layout
            .shapes
            .iter()
            .zip(&layout.inits)
            .map(|(shape, init)| {
                let n: usize = shape.iter().product();
                let data: Vec<f64> = match init {
                    Init::Zeros => vec![0.0; n],
                    Init::Positional => (0..n).map(|_| positional.sample(&mut rng)).collect(),
                    Init::Glorot => {
                        let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
                    }
                };
                Tensor::new(shape.clone(), data).map_err(ModelError::from)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            layout: Arc::new(layout),
            tensors,
        })
    }

    /// Assembles parameters from explicit tensors, checking them against the layout.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let layout = ParamLayout::new(config)?;
        if tensors.len() != layout.len() {
            return Err(ModelError::CheckpointShape(format!(
                "config expects {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (i, t) in tensors.iter().enumerate() {
            if t.shape() != layout.shapes[i].as_slice() {
                return Err(ModelError::CheckpointShape(format!(
                    "`{}` has shape {:?}, config expects {:?}",
                    layout.names[i],
                    t.shape(),
                    layout.shapes[i]
                )));
            }
            if !t.is_finite() {
                return Err(ModelError::CheckpointShape(format!("`{}` has non-finite values", layout.names[i])));
            }
        }
        Ok(Self {
            config: config.clone(),
            layout: Arc::new(layout),
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.layout.index_of(name).map(|i| &self.tensors[i])
    }

    /// Replaces tensor `index`; the new value must keep its shape.
    pub fn set(&mut self, index: usize, value: Tensor) -> Result<()> {
        if value.shape() != self.layout.shapes[index].as_slice() {
            return Err(ModelError::Shape(format!(
                "`{}` expects {:?}, got {:?}",
                self.layout.names[index],
                self.layout.shapes[index],
                value.shape()
            )));
        }
        self.tensors[index] = value;
        Ok(())
    }

    pub fn set_named(&mut self, name: &str, value: Tensor) -> Result<()> {
        let index = self
            .layout
            .index_of(name)
            .ok_or_else(|| ModelError::Shape(format!("no parameter named `{name}`")))?;
        self.set(index, value)
    }

    /// Places every tensor on `tape`, as grad-tracked leaves when `track` is set.
    pub fn attach(&self, tape: &mut Tape, track: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if track { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// Flattened copy of every value, in layout order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Adds `delta` (flattened, layout order) to every value.
    pub fn apply_delta(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.layout.scalar_count() {
            return Err(ModelError::Shape(format!(
                "update has {} values for {} parameters",
                delta.len(),
                self.layout.scalar_count()
            )));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            let data: Vec<f64> = t.data().iter().zip(&delta[offset..offset + n]).map(|(a, d)| a + d).collect();
            *t = Tensor::new(t.shape().to_vec(), data)?;
            offset += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::EdgeScheme;

    fn config(scheme: EdgeScheme) -> ModelConfig {
        ModelConfig {
            embed_dim: 16,
            layers: 3,
            heads: 2,
            scheme,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let c = config(EdgeScheme::NodePair);
        let a = Parameters::init(&c, 11).unwrap();
        let b = Parameters::init(&c, 11).unwrap();
        let bits = |p: &Parameters| p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&Parameters::init(&c, 12).unwrap()));
    }

    #[test]
    fn message_matrix_counts() {
        let d = ParamLayout::new(&config(EdgeScheme::Direction)).unwrap();
        let n = ParamLayout::new(&config(EdgeScheme::NodePair)).unwrap();
        let count = |l: &ParamLayout| l.names().iter().filter(|s| s.contains(".msg.")).count();
        assert_eq!(count(&d), 12);
        assert_eq!(count(&n), 60);
        assert_eq!(n.message_matrices_in_layer(0), 20);
        assert_eq!(d.message_matrices_in_layer(2), 4);
    }

    #[test]
    fn node_pair_and_direction_differ_only_in_message_matrices() {
        let d = ParamLayout::new(&config(EdgeScheme::Direction)).unwrap();
        let n = ParamLayout::new(&config(EdgeScheme::NodePair)).unwrap();
        let strip = |l: &ParamLayout| {
            l.names()
                .iter()
                .zip(l.shapes())
                .filter(|(s, _)| !s.contains(".msg."))
                .map(|(s, sh)| (s.clone(), sh.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&d), strip(&n));
    }

    #[test]
    fn initial_values_follow_scheme() {
        let c = config(EdgeScheme::Direction);
        let p = Parameters::init(&c, 3).unwrap();
        assert!(p.get("encoder.type0.bias").unwrap().data().iter().all(|&v| v == 0.0));
        let w = p.get("layer0.msg.edge1").unwrap();
        let limit = (6.0f64 / 32.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        let pos = p.get("pos_embedding").unwrap();
        assert_eq!(pos.shape(), &[49, 16]);
        let std = (pos.data().iter().map(|v| v * v).sum::<f64>() / pos.numel() as f64).sqrt();
        assert!((std - 0.02).abs() < 0.005, "{std}");
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let c = config(EdgeScheme::Direction);
        let p = Parameters::init(&c, 1).unwrap();
        let mut tensors = p.tensors().to_vec();
        assert!(Parameters::from_tensors(&c, tensors.clone()).is_ok());
        tensors[0] = Tensor::zeros(vec![2, 2]);
        assert!(Parameters::from_tensors(&c, tensors).is_err());
    }
}
