//! Feedforward networks built from dense and STE layers.

use crate::error::{Error, Result};
use crate::layers::{Activation, DenseLayer, LayerCache, LayerGrads, MaskSet, Noise, SteLayer};
use crate::random::{Rng, Stream};
use crate::tensor::Vector;

/// Descriptor of one layer; input width comes from the previous layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense {
        outputs: usize,
        activation: Activation,
        output_keep: Option<f64>,
    },
    Ste {
        outputs: usize,
        averaging: usize,
        keep: f64,
        noise: Noise,
        activation: Activation,
        output_keep: Option<f64>,
    },
}

impl LayerSpec {
    pub fn outputs(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } | LayerSpec::Ste { outputs, .. } => outputs,
        }
    }

    pub fn activation(&self) -> Activation {
        match *self {
            LayerSpec::Dense { activation, .. } | LayerSpec::Ste { activation, .. } => activation,
        }
    }
}

/// Hidden-layer regularization schemes compared in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regularization {
    None,
    Dropout,
    SteDropout,
    SteDropConnect,
}

impl Regularization {
    pub const ALL: [Regularization; 4] = [
        Regularization::None,
        Regularization::Dropout,
        Regularization::SteDropout,
        Regularization::SteDropConnect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regularization::None => "none",
            Regularization::Dropout => "dropout",
            Regularization::SteDropout => "ste-dropout",
            Regularization::SteDropConnect => "ste-dropconnect",
        }
    }
}

impl std::str::FromStr for Regularization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regularization::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown regularization {s:?}")))
    }
}

/// Ordered layer descriptors. The final layer must be dense.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub inputs: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// ReLU MLP with a dense softmax output layer. STE hidden layers use
    /// `averaging` branches; `keep` is used for every dropout in the network.
    pub fn mlp(inputs: usize, hidden: &[usize], classes: usize, reg: Regularization, averaging: usize, keep: f64) -> Self {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&outputs| match reg {
                Regularization::None => LayerSpec::Dense {
                    outputs,
                    activation: Activation::Relu,
                    output_keep: None,
                },
                Regularization::Dropout => LayerSpec::Dense {
                    outputs,
                    activation: Activation::Relu,
                    output_keep: Some(keep),
                },
                Regularization::SteDropout | Regularization::SteDropConnect => LayerSpec::Ste {
                    outputs,
                    averaging,
                    keep,
                    noise: if reg == Regularization::SteDropout {
                        Noise::Dropout
                    } else {
                        Noise::DropConnect
                    },
                    activation: Activation::Relu,
                    output_keep: Some(keep),
                },
            })
            .collect();
        layers.push(LayerSpec::Dense {
            outputs: classes,
            activation: Activation::Softmax,
            output_keep: None,
        });
        Self { inputs, layers }
    }

    pub fn validate(&self) -> Result<()> {
        let last = self
            .layers
            .last()
            .ok_or_else(|| Error::InvalidModel("model has no layers".into()))?;
        if !matches!(last, LayerSpec::Dense { .. }) {
            return Err(Error::InvalidModel("the output layer must be dense".into()));
        }
        if let LayerSpec::Dense { output_keep: Some(_), .. } = last {
            return Err(Error::InvalidModel("the output layer cannot use output dropout".into()));
        }
        if !matches!(last.activation(), Activation::Softmax | Activation::Identity) {
            return Err(Error::InvalidModel("the output layer must use softmax or identity".into()));
        }
        if self.inputs == 0 {
            return Err(Error::InvalidModel("input width must be positive".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.outputs() == 0 {
                return Err(Error::InvalidModel(format!("layer {i} has no outputs")));
            }
            if i + 1 < self.layers.len() && l.activation() == Activation::Softmax {
                return Err(Error::InvalidModel(format!(
                    "softmax is only allowed on the output layer (layer {i})"
                )));
            }
            if let LayerSpec::Ste { averaging: 0, .. } = l {
                return Err(Error::InvalidModel(format!("layer {i}: averaging factor must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs())
    }

    /// `(inputs, outputs)` of every layer.
    pub fn dims(&self) -> Vec<(usize, usize)> {
        let mut prev = self.inputs;
        self.layers
            .iter()
            .map(|l| {
                let d = (prev, l.outputs());
                prev = l.outputs();
                d
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Ste(SteLayer),
}

impl Layer {
    pub fn inputs(&self) -> usize {
        match self {
            Layer::Dense(l) => l.inputs(),
            Layer::Ste(l) => l.inputs(),
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            Layer::Dense(l) => l.outputs(),
            Layer::Ste(l) => l.outputs(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Layer::Dense(l) => l.activation,
            Layer::Ste(l) => l.activation,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(l) => LayerSpec::Dense {
                outputs: l.outputs(),
                activation: l.activation,
                output_keep: l.output_keep,
            },
            Layer::Ste(l) => LayerSpec::Ste {
                outputs: l.outputs(),
                averaging: l.averaging(),
                keep: l.keep,
                noise: l.noise,
                activation: l.activation,
                output_keep: l.output_keep,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Layer::Dense(l) => l.validate(),
            Layer::Ste(l) => l.validate(),
        }
    }

    pub fn forward_eval(&self, x: &[f64]) -> Result<Vector> {
        match self {
            Layer::Dense(l) => l.forward_eval(x),
            Layer::Ste(l) => l.forward_eval(x),
        }
    }

    pub fn preact_eval(&self, x: &[f64]) -> Result<Vector> {
        match self {
            Layer::Dense(l) => l.preact(x),
            Layer::Ste(l) => l.preact_eval(x),
        }
    }

    pub fn sample_masks(&self, layer: u32, example: u64, seed: u64) -> MaskSet {
        match self {
            Layer::Dense(l) => l.sample_masks(layer, example, seed),
            Layer::Ste(l) => l.sample_masks(layer, example, seed),
        }
    }

    pub fn forward_train(&self, x: &[f64], masks: &MaskSet) -> Result<(Vector, LayerCache)> {
        match self {
            Layer::Dense(l) => l.forward_train(x, masks.output.as_ref()),
            Layer::Ste(l) => l.forward_train(x, masks),
        }
    }

    pub fn output_grad_to_preact(&self, cache: &LayerCache, dy: &[f64]) -> Vector {
        match self {
            Layer::Dense(l) => l.output_grad_to_preact(cache, dy),
            Layer::Ste(l) => l.output_grad_to_preact(cache, dy),
        }
    }

    pub fn backward_preact_into(&self, cache: &LayerCache, dz: &[f64], grads: &mut LayerGrads) -> Result<Vector> {
        match self {
            Layer::Dense(l) => l.backward_preact_into(cache, dz, grads),
            Layer::Ste(l) => l.backward_preact_into(cache, dz, grads),
        }
    }

    pub fn zero_grads(&self) -> LayerGrads {
        match self {
            Layer::Dense(l) => l.zero_grads(),
            Layer::Ste(l) => l.zero_grads(),
        }
    }

    /// Parameter arrays: for each branch, weights then bias.
    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(l) => vec![l.weights.as_slice(), l.bias.as_slice()],
            Layer::Ste(l) => l
                .weights
                .iter()
                .zip(&l.biases)
                .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
                .collect(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense(l) => vec![l.weights.as_mut_slice(), l.bias.as_mut_slice()],
            Layer::Ste(l) => l
                .weights
                .iter_mut()
                .zip(l.biases.iter_mut())
                .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
                .collect(),
        }
    }
}

/// A feedforward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
}

/// Gradients for every layer of a [`Model`].
pub type ModelGrads = Vec<LayerGrads>;

/// Flattens gradients in the same order as [`Model::params`].
pub fn grad_slices(grads: &ModelGrads) -> Vec<&[f64]> {
    grads
        .iter()
        .flat_map(|g| {
            g.weights
                .iter()
                .zip(&g.biases)
                .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
        })
        .collect()
}

impl Model {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let model = Self { layers };
        model.validate()?;
        Ok(model)
    }

    /// Glorot-uniform weights and zero biases. Dense layer `l` draws from
    /// stream `Init { layer: l, branch: 0 }`, STE branch `i` from `Init { layer: l, branch: i }`.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .zip(spec.dims())
            .enumerate()
            .map(|(idx, (l, (inputs, _)))| -> Result<Layer> {
                Ok(match *l {
                    LayerSpec::Dense {
                        outputs,
                        activation,
                        output_keep,
                    } => {
                        let mut rng = Rng::for_stream(seed, Stream::Init { layer: idx as u32, branch: 0 });
                        Layer::Dense(DenseLayer::init(inputs, outputs, activation, output_keep, &mut rng)?)
                    }
                    LayerSpec::Ste {
                        outputs,
                        averaging,
                        keep,
                        noise,
                        activation,
                        output_keep,
                    } => Layer::Ste(SteLayer::init(
                        inputs,
                        outputs,
                        averaging,
                        keep,
                        noise,
                        activation,
                        output_keep,
                        idx as u32,
                        seed,
                    )?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            l.validate()?;
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::InvalidModel(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        self.spec().validate()
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            inputs: self.inputs(),
            layers: self.layers.iter().map(Layer::spec).collect(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map_or(0, Layer::inputs)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.inputs() {
            return Err(Error::shape(
                "model input",
                format!("[{}]", self.inputs()),
                format!("[{}]", x.len()),
            ));
        }
        Ok(())
    }

    /// Evaluation-mode logits: the pre-activation of the output layer.
    pub fn logits_eval(&self, x: &[f64]) -> Result<Vector> {
        self.check_input(x)?;
        let (last, hidden) = self.layers.split_last().expect("validated model");
        let mut h = Vector::from_vec(x.to_vec());
        for l in hidden {
            h = l.forward_eval(&h)?;
        }
        last.preact_eval(&h)
    }

    /// Evaluation-mode output, including the output activation.
    pub fn forward_eval(&self, x: &[f64]) -> Result<Vector> {
        self.check_input(x)?;
        let mut h = Vector::from_vec(x.to_vec());
        for l in &self.layers {
            h = l.forward_eval(&h)?;
        }
        Ok(h)
    }

    /// Training-mode forward with masks drawn for example index `example`.
    /// Returns the output-layer logits and one cache per layer.
    pub fn forward_train(&self, x: &[f64], example: u64, seed: u64) -> Result<(Vector, Vec<LayerCache>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = Vector::from_vec(x.to_vec());
        for (idx, l) in self.layers.iter().enumerate() {
            let masks = l.sample_masks(idx as u32, example, seed);
            let (y, cache) = l.forward_train(&h, &masks)?;
            h = y;
            caches.push(cache);
        }
        let logits = caches.last().expect("validated model").preact.clone();
        Ok((logits, caches))
    }

    /// Backpropagates the gradient with respect to the logits, accumulating
    /// into `grads`. Returns the input gradient.
    pub fn backward_logits(&self, caches: &[LayerCache], dlogits: &[f64], grads: &mut ModelGrads) -> Result<Vector> {
        if caches.len() != self.layers.len() || grads.len() != self.layers.len() {
            return Err(Error::InvalidArgument("cache/gradient count does not match the model".into()));
        }
        let mut dz = Vector::from_vec(dlogits.to_vec());
        let mut idx = self.layers.len();
        loop {
            idx -= 1;
            let layer = &self.layers[idx];
            let dx = layer.backward_preact_into(&caches[idx], &dz, &mut grads[idx])?;
            if idx == 0 {
                return Ok(dx);
            }
            dz = self.layers[idx - 1].output_grad_to_preact(&caches[idx - 1], &dx);
        }
    }

    pub fn zero_grads(&self) -> ModelGrads {
        self.layers.iter().map(Layer::zero_grads).collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_lens(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    /// Indices of STE layers.
    pub fn ste_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Ste(_)))
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_specs_validate() {
        for reg in Regularization::ALL {
            let spec = ModelSpec::mlp(6, &[5, 4], 3, reg, 3, 0.5);
            spec.validate().unwrap();
            let model = Model::init(&spec, 1).unwrap();
            assert_eq!(model.spec(), spec);
            assert_eq!(model.inputs(), 6);
            assert_eq!(model.outputs(), 3);
        }
    }

    #[test]
    fn final_layer_must_be_dense() {
        let mut spec = ModelSpec::mlp(4, &[3], 2, Regularization::SteDropout, 2, 0.5);
        spec.layers.pop();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn softmax_only_on_output() {
        let mut spec = ModelSpec::mlp(4, &[3], 2, Regularization::None, 2, 0.5);
        if let LayerSpec::Dense { activation, .. } = &mut spec.layers[0] {
            *activation = Activation::Softmax;
        }
        assert!(spec.validate().is_err());
    }

    #[test]
    fn dimension_chain_is_checked() {
        let spec = ModelSpec::mlp(4, &[3], 2, Regularization::None, 1, 0.5);
        let mut model = Model::init(&spec, 0).unwrap();
        let other = Model::init(&ModelSpec::mlp(4, &[5], 2, Regularization::None, 1, 0.5), 0).unwrap();
        model.layers[1] = other.layers[1].clone();
        assert!(model.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let spec = ModelSpec::mlp(4, &[3], 2, Regularization::SteDropout, 4, 0.5);
        assert_eq!(Model::init(&spec, 7).unwrap(), Model::init(&spec, 7).unwrap());
        assert_ne!(Model::init(&spec, 7).unwrap(), Model::init(&spec, 8).unwrap());
    }

    #[test]
    fn logits_match_forward_before_softmax() {
        let spec = ModelSpec::mlp(4, &[3], 2, Regularization::Dropout, 1, 0.5);
        let model = Model::init(&spec, 3).unwrap();
        let x = [0.1, -0.4, 0.2, 0.9];
        let logits = model.logits_eval(&x).unwrap();
        let probs = model.forward_eval(&x).unwrap();
        assert_eq!(crate::layers::softmax(&logits), probs);
        assert!(model.forward_eval(&[0.0; 3]).is_err());
    }
}
