//! Dense and STE layers: forward passes in training and evaluation mode, and
//! exact backward passes with the noise masks held fixed.
//!
//! An STE layer owns `A` weight matrices and biases. In training mode each
//! branch computes its own noisy affine map and the branch outputs are
//! averaged before the activation:
//!
//! - dropout noise: `y = f((1/A) * sum_i m_i ∘ (W_i x + b_i))`, masks of length `N`
//! - dropconnect noise: `y = f((1/A) * sum_i ((M_i ∘ W_i) x + b_i))`, masks `N x M`
//!
//! Mask entries are Bernoulli with keep probability `p`. At evaluation time
//! every mask entry is replaced by its expectation `p`. An optional output
//! dropout with keep probability `p_out` multiplies the post-activation
//! output, and is replaced by the factor `p_out` at evaluation time. Dense
//! layers use the same post-activation output dropout for "standard dropout".

use crate::error::{Error, Result};
use crate::random::{bernoulli_mask, bernoulli_vector, glorot_uniform, Rng, Stream};
use crate::tensor::{axpy, dot, Matrix, Vector};

/// Elementwise activation. `Softmax` is only legal on the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Softmax,
}

impl Activation {
    pub fn apply(self, z: &[f64]) -> Vector {
        match self {
            Activation::Identity => Vector::from_vec(z.to_vec()),
            Activation::Relu => {
                // NaN passes through so that numeric faults surface in the loss.
                Vector::from_vec(z.iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect())
            }
            Activation::Softmax => softmax(z),
        }
    }

    /// Pulls `dy` (gradient w.r.t. the activation output `a = f(z)`) back to
    /// the pre-activation `z`.
    pub fn backward(self, z: &[f64], a: &[f64], dy: &[f64]) -> Vector {
        match self {
            Activation::Identity => Vector::from_vec(dy.to_vec()),
            Activation::Relu => Vector::from_vec(
                z.iter()
                    .zip(dy)
                    .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
                    .collect(),
            ),
            Activation::Softmax => {
                let s_dot = dot(a, dy);
                Vector::from_vec(a.iter().zip(dy).map(|(&s, &g)| s * (g - s_dot)).collect())
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Softmax => "softmax",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "softmax" => Ok(Activation::Softmax),
            _ => Err(Error::InvalidArgument(format!("unknown activation {s:?}"))),
        }
    }
}

/// Softmax with max-subtraction.
pub fn softmax(z: &[f64]) -> Vector {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Vector::from_vec(out)
}

/// Where the noise masks of an STE layer are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    /// One mask per branch over the `N` branch outputs, bias included.
    Dropout,
    /// One mask per branch over the `N x M` weight entries, bias excluded.
    DropConnect,
}

impl Noise {
    pub fn name(self) -> &'static str {
        match self {
            Noise::Dropout => "dropout",
            Noise::DropConnect => "dropconnect",
        }
    }
}

fn check_prob(what: &str, p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("{what} must be in (0, 1], got {p}")))
    }
}

/// Noise masks for one forward pass through one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchMasks {
    /// Dense layers carry no branch masks.
    None,
    Dropout(Vec<Vector>),
    DropConnect(Vec<Matrix>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub branches: BranchMasks,
    /// Post-activation output mask, present iff the layer has output dropout.
    pub output: Option<Vector>,
}

/// Everything a backward pass needs from the matching forward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Vector,
    /// Per-branch noisy affine outputs, before averaging. Empty for dense layers.
    pub branch_preacts: Vec<Vector>,
    /// Averaged pre-activation (the argument of `f`).
    pub preact: Vector,
    /// `f(preact)`, before any output mask.
    pub activated: Vector,
    /// Layer output after the output mask.
    pub output: Vector,
    pub masks: MaskSet,
}

/// Parameter gradients of one layer, one entry per branch (dense: one).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
}

impl LayerGrads {
    pub fn zeros(branches: usize, rows: usize, cols: usize) -> Self {
        Self {
            weights: vec![Matrix::zeros(rows, cols); branches],
            biases: vec![Vector::zeros(rows); branches],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.scale(factor);
        }
        for b in &mut self.biases {
            b.scale(factor);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.as_slice().iter().all(|&v| v == 0.0))
            && self.biases.iter().all(|b| b.iter().all(|&v| v == 0.0))
    }
}

fn apply_output_mask(activated: &Vector, mask: Option<&Vector>) -> Vector {
    match mask {
        Some(m) => Vector::from_vec(activated.iter().zip(m.iter()).map(|(a, m)| a * m).collect()),
        None => activated.clone(),
    }
}

fn check_output_mask(mask: Option<&Vector>, keep: Option<f64>, n: usize) -> Result<()> {
    match (mask, keep) {
        (None, None) => Ok(()),
        (Some(m), Some(_)) if m.len() == n => Ok(()),
        (Some(m), Some(_)) => Err(Error::shape("output mask", m.shape(), format!("[{n}]"))),
        (Some(_), None) => Err(Error::InvalidArgument(
            "output mask given for a layer without output dropout".into(),
        )),
        (None, Some(_)) => Err(Error::InvalidArgument(
            "layer has output dropout but no output mask was given".into(),
        )),
    }
}

/// `y = f(W x + b)`, optionally followed by dropout on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: Activation,
    /// Keep probability of the output dropout, if any.
    pub output_keep: Option<f64>,
}

impl DenseLayer {
    pub fn new(
        weights: Matrix,
        bias: Vector,
        activation: Activation,
        output_keep: Option<f64>,
    ) -> Result<Self> {
        let layer = Self {
            weights,
            bias,
            activation,
            output_keep,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        output_keep: Option<f64>,
        rng: &mut Rng,
    ) -> Result<Self> {
        Self::new(
            glorot_uniform(inputs, outputs, rng)?,
            Vector::zeros(outputs),
            activation,
            output_keep,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.rows() != self.bias.len() {
            return Err(Error::shape("DenseLayer", self.weights.shape(), self.bias.shape()));
        }
        if let Some(p) = self.output_keep {
            check_prob("output keep probability", p)?;
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.inputs() {
            return Err(Error::shape(
                "dense forward",
                format!("W {}", self.weights.shape()),
                format!("x [{}]", x.len()),
            ));
        }
        Ok(())
    }

    pub fn sample_masks(&self, layer: u32, example: u64, seed: u64) -> MaskSet {
        let output = self.output_keep.map(|p| {
            let mut rng = Rng::for_stream(seed, Stream::Mask { layer, branch: 0, example });
            bernoulli_vector(self.outputs(), p, &mut rng).expect("validated keep probability")
        });
        MaskSet {
            branches: BranchMasks::None,
            output,
        }
    }

    pub fn forward_train(&self, x: &[f64], output_mask: Option<&Vector>) -> Result<(Vector, LayerCache)> {
        self.check_input(x)?;
        check_output_mask(output_mask, self.output_keep, self.outputs())?;
        let mut preact = self.bias.clone();
        for (r, z) in preact.iter_mut().enumerate() {
            *z += dot(self.weights.row(r), x);
        }
        let activated = self.activation.apply(&preact);
        let output = apply_output_mask(&activated, output_mask);
        let cache = LayerCache {
            input: Vector::from_vec(x.to_vec()),
            branch_preacts: Vec::new(),
            preact,
            activated,
            output: output.clone(),
            masks: MaskSet {
                branches: BranchMasks::None,
                output: output_mask.cloned(),
            },
        };
        Ok((output, cache))
    }

    /// Pre-activation `W x + b`.
    pub fn preact(&self, x: &[f64]) -> Result<Vector> {
        crate::tensor::affine(&self.weights, x, &self.bias)
    }

    /// Deterministic forward: output dropout replaced by its expectation.
    pub fn forward_eval(&self, x: &[f64]) -> Result<Vector> {
        self.check_input(x)?;
        let mut y = self.activation.apply(&self.preact(x)?);
        if let Some(p) = self.output_keep {
            y.scale(p);
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` given the gradient `dz`
    /// with respect to the pre-activation, and returns the input gradient.
    pub fn backward_preact_into(
        &self,
        cache: &LayerCache,
        dz: &[f64],
        grads: &mut LayerGrads,
    ) -> Result<Vector> {
        if cache.input.len() != self.inputs() || dz.len() != self.outputs() {
            return Err(Error::shape(
                "dense backward",
                format!("W {}", self.weights.shape()),
                format!("cache x [{}], dz [{}]", cache.input.len(), dz.len()),
            ));
        }
        if grads.weights.len() != 1 || !grads.weights[0].same_shape(&self.weights) {
            return Err(Error::shape(
                "dense backward",
                self.weights.shape(),
                "gradient buffer".to_string(),
            ));
        }
        let mut dx = Vector::zeros(self.inputs());
        let (gw, gb) = (&mut grads.weights[0], &mut grads.biases[0]);
        for (r, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(g, &cache.input, gw.row_mut(r));
            gb[r] += g;
            axpy(g, self.weights.row(r), &mut dx);
        }
        Ok(dx)
    }

    /// Gradient of the output with respect to the pre-activation.
    pub fn output_grad_to_preact(&self, cache: &LayerCache, dy: &[f64]) -> Vector {
        let masked: Vec<f64> = match &cache.masks.output {
            Some(m) => dy.iter().zip(m.iter()).map(|(g, m)| g * m).collect(),
            None => dy.to_vec(),
        };
        self.activation.backward(&cache.preact, &cache.activated, &masked)
    }

    pub fn backward_into(&self, cache: &LayerCache, dy: &[f64], grads: &mut LayerGrads) -> Result<Vector> {
        if dy.len() != self.outputs() {
            return Err(Error::shape("dense backward", format!("[{}]", self.outputs()), format!("dy [{}]", dy.len())));
        }
        let dz = self.output_grad_to_preact(cache, dy);
        self.backward_preact_into(cache, &dz, grads)
    }

    /// Returns `(dW, db, dx)`.
    pub fn backward(&self, cache: &LayerCache, dy: &[f64]) -> Result<(Matrix, Vector, Vector)> {
        let mut grads = LayerGrads::zeros(1, self.outputs(), self.inputs());
        let dx = self.backward_into(cache, dy, &mut grads)?;
        Ok((grads.weights.remove(0), grads.biases.remove(0), dx))
    }

    pub fn zero_grads(&self) -> LayerGrads {
        LayerGrads::zeros(1, self.outputs(), self.inputs())
    }
}

/// Stochastically trained ensemble layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SteLayer {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
    /// Keep probability of the internal noise.
    pub keep: f64,
    pub noise: Noise,
    pub activation: Activation,
    /// Keep probability of the post-activation output dropout, if any.
    pub output_keep: Option<f64>,
}

impl SteLayer {
    pub fn new(
        weights: Vec<Matrix>,
        biases: Vec<Vector>,
        keep: f64,
        noise: Noise,
        activation: Activation,
        output_keep: Option<f64>,
    ) -> Result<Self> {
        let layer = Self {
            weights,
            biases,
            keep,
            noise,
            activation,
            output_keep,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// Independent Glorot-uniform draws per branch (stream `Init { layer, branch }`),
    /// zero biases.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        inputs: usize,
        outputs: usize,
        averaging: usize,
        keep: f64,
        noise: Noise,
        activation: Activation,
        output_keep: Option<f64>,
        layer: u32,
        seed: u64,
    ) -> Result<Self> {
        if averaging == 0 {
            return Err(Error::InvalidModel("averaging factor must be at least 1".into()));
        }
        let weights = (0..averaging)
            .map(|branch| {
                let mut rng = Rng::for_stream(seed, Stream::Init { layer, branch: branch as u32 });
                glorot_uniform(inputs, outputs, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            weights,
            vec![Vector::zeros(outputs); averaging],
            keep,
            noise,
            activation,
            output_keep,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .weights
            .first()
            .ok_or_else(|| Error::InvalidModel("STE layer needs at least one branch".into()))?;
        if self.biases.len() != self.weights.len() {
            return Err(Error::InvalidModel(format!(
                "STE layer has {} weight matrices but {} biases",
                self.weights.len(),
                self.biases.len()
            )));
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if !w.same_shape(first) {
                return Err(Error::shape("SteLayer branches", first.shape(), w.shape()));
            }
            if b.len() != first.rows() {
                return Err(Error::shape("SteLayer bias", first.shape(), b.shape()));
            }
        }
        check_prob("keep probability", self.keep)?;
        if let Some(p) = self.output_keep {
            check_prob("output keep probability", p)?;
        }
        Ok(())
    }

    /// The averaging factor `A`.
    pub fn averaging(&self) -> usize {
        self.weights.len()
    }

    pub fn inputs(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights[0].rows()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.inputs() {
            return Err(Error::shape(
                "STE forward",
                format!("W {}", self.weights[0].shape()),
                format!("x [{}]", x.len()),
            ));
        }
        Ok(())
    }

    fn check_masks(&self, masks: &MaskSet) -> Result<()> {
        let a = self.averaging();
        match (&masks.branches, self.noise) {
            (BranchMasks::Dropout(ms), Noise::Dropout) => {
                if ms.len() != a {
                    return Err(Error::shape("STE masks", format!("A={a}"), format!("{} masks", ms.len())));
                }
                if let Some(m) = ms.iter().find(|m| m.len() != self.outputs()) {
                    return Err(Error::shape("dropout mask", format!("[{}]", self.outputs()), m.shape()));
                }
            }
            (BranchMasks::DropConnect(ms), Noise::DropConnect) => {
                if ms.len() != a {
                    return Err(Error::shape("STE masks", format!("A={a}"), format!("{} masks", ms.len())));
                }
                if let Some(m) = ms.iter().find(|m| !m.same_shape(&self.weights[0])) {
                    return Err(Error::shape("dropconnect mask", self.weights[0].shape(), m.shape()));
                }
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "mask kind does not match {} noise",
                    self.noise.name()
                )))
            }
        }
        check_output_mask(masks.output.as_ref(), self.output_keep, self.outputs())
    }

    /// Draws fresh masks for one example. Branch `i` uses stream
    /// `Mask { layer, branch: i, example }`, the output mask uses branch `A`.
    pub fn sample_masks(&self, layer: u32, example: u64, seed: u64) -> MaskSet {
        let a = self.averaging();
        let stream = |branch: usize| {
            Rng::for_stream(seed, Stream::Mask { layer, branch: branch as u32, example })
        };
        let branches = match self.noise {
            Noise::Dropout => BranchMasks::Dropout(
                (0..a)
                    .map(|i| bernoulli_vector(self.outputs(), self.keep, &mut stream(i)))
                    .collect::<Result<_>>()
                    .expect("validated keep probability"),
            ),
            Noise::DropConnect => BranchMasks::DropConnect(
                (0..a)
                    .map(|i| bernoulli_mask(self.outputs(), self.inputs(), self.keep, &mut stream(i)))
                    .collect::<Result<_>>()
                    .expect("validated keep probability"),
            ),
        };
        let output = self.output_keep.map(|p| {
            bernoulli_vector(self.outputs(), p, &mut stream(a)).expect("validated keep probability")
        });
        MaskSet { branches, output }
    }

    /// Masks of all ones (no noise).
    pub fn ones_masks(&self) -> MaskSet {
        let a = self.averaging();
        let branches = match self.noise {
            Noise::Dropout => BranchMasks::Dropout(vec![Vector::filled(self.outputs(), 1.0); a]),
            Noise::DropConnect => {
                BranchMasks::DropConnect(vec![Matrix::filled(self.outputs(), self.inputs(), 1.0); a])
            }
        };
        MaskSet {
            branches,
            output: self.output_keep.map(|_| Vector::filled(self.outputs(), 1.0)),
        }
    }

    /// Averaged noisy pre-activation and the per-branch noisy affine outputs.
    fn noisy_preact(&self, x: &[f64], masks: &MaskSet) -> (Vector, Vec<Vector>) {
        let n = self.outputs();
        let inv_a = 1.0 / self.averaging() as f64;
        let mut sum = Vector::zeros(n);
        let mut branch_preacts = Vec::with_capacity(self.averaging());
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = Vector::zeros(n);
            match &masks.branches {
                BranchMasks::Dropout(ms) => {
                    let m = &ms[i];
                    for r in 0..n {
                        if m[r] != 0.0 {
                            z[r] = m[r] * (dot(w.row(r), x) + b[r]);
                        }
                    }
                }
                BranchMasks::DropConnect(ms) => {
                    let m = &ms[i];
                    for r in 0..n {
                        z[r] = masked_dot(m.row(r), w.row(r), x) + b[r];
                    }
                }
                BranchMasks::None => unreachable!("checked by check_masks"),
            }
            for (s, v) in sum.iter_mut().zip(z.iter()) {
                *s += v;
            }
            branch_preacts.push(z);
        }
        sum.scale(inv_a);
        (sum, branch_preacts)
    }

    /// Training-mode forward with the given masks.
    pub fn forward_train(&self, x: &[f64], masks: &MaskSet) -> Result<(Vector, LayerCache)> {
        self.check_input(x)?;
        self.check_masks(masks)?;
        let (preact, branch_preacts) = self.noisy_preact(x, masks);
        let activated = self.activation.apply(&preact);
        let output = apply_output_mask(&activated, masks.output.as_ref());
        let cache = LayerCache {
            input: Vector::from_vec(x.to_vec()),
            branch_preacts,
            preact,
            activated,
            output: output.clone(),
            masks: masks.clone(),
        };
        Ok((output, cache))
    }

    /// Evaluation-mode pre-activation: every mask entry replaced by `p`.
    ///
    /// Computed branch by branch, independently of [`crate::collapse`].
    pub fn preact_eval(&self, x: &[f64]) -> Result<Vector> {
        self.check_input(x)?;
        let a = self.averaging() as f64;
        let n = self.outputs();
        let mut weighted = Vector::zeros(n);
        let mut bias = Vector::zeros(n);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..n {
                weighted[r] += dot(w.row(r), x);
            }
            bias.axpy(1.0, b);
        }
        let (w_scale, b_scale) = match self.noise {
            Noise::Dropout => (self.keep / a, self.keep / a),
            Noise::DropConnect => (self.keep / a, 1.0 / a),
        };
        Ok(Vector::from_vec(
            weighted
                .iter()
                .zip(bias.iter())
                .map(|(wx, b)| w_scale * wx + b_scale * b)
                .collect(),
        ))
    }

    pub fn forward_eval(&self, x: &[f64]) -> Result<Vector> {
        let mut y = self.activation.apply(&self.preact_eval(x)?);
        if let Some(p) = self.output_keep {
            y.scale(p);
        }
        Ok(y)
    }

    /// Noise-free, un-averaged branch outputs `W_i x + b_i`.
    pub fn branch_outputs(&self, x: &[f64]) -> Result<Vec<Vector>> {
        self.check_input(x)?;
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| crate::tensor::affine(w, x, b))
            .collect()
    }

    fn check_cache(&self, cache: &LayerCache) -> Result<()> {
        if cache.input.len() != self.inputs() || cache.preact.len() != self.outputs() {
            return Err(Error::InvalidArgument(format!(
                "stale cache: layer is {}x{}, cache has x [{}], preact [{}]",
                self.outputs(),
                self.inputs(),
                cache.input.len(),
                cache.preact.len()
            )));
        }
        self.check_masks(&cache.masks)
            .map_err(|e| Error::InvalidArgument(format!("stale cache: {e}")))
    }

    /// Gradient of the output with respect to the averaged pre-activation.
    pub fn output_grad_to_preact(&self, cache: &LayerCache, dy: &[f64]) -> Vector {
        let masked: Vec<f64> = match &cache.masks.output {
            Some(m) => dy.iter().zip(m.iter()).map(|(g, m)| g * m).collect(),
            None => dy.to_vec(),
        };
        self.activation.backward(&cache.preact, &cache.activated, &masked)
    }

    /// Accumulates parameter gradients into `grads` given the gradient with
    /// respect to the averaged pre-activation, and returns the input gradient.
    pub fn backward_preact_into(
        &self,
        cache: &LayerCache,
        ds: &[f64],
        grads: &mut LayerGrads,
    ) -> Result<Vector> {
        self.check_cache(cache)?;
        if ds.len() != self.outputs() {
            return Err(Error::shape("STE backward", format!("[{}]", self.outputs()), format!("[{}]", ds.len())));
        }
        if grads.weights.len() != self.averaging()
            || grads.weights.iter().any(|g| !g.same_shape(&self.weights[0]))
        {
            return Err(Error::shape("STE backward", self.weights[0].shape(), "gradient buffer".to_string()));
        }
        let inv_a = 1.0 / self.averaging() as f64;
        let x = cache.input.as_slice();
        let mut dx = Vector::zeros(self.inputs());
        for i in 0..self.averaging() {
            let w = &self.weights[i];
            let (gw, gb) = (&mut grads.weights[i], &mut grads.biases[i]);
            match &cache.masks.branches {
                BranchMasks::Dropout(ms) => {
                    let m = &ms[i];
                    for r in 0..self.outputs() {
                        let g = inv_a * m[r] * ds[r];
                        if g == 0.0 {
                            continue;
                        }
                        axpy(g, x, gw.row_mut(r));
                        gb[r] += g;
                        axpy(g, w.row(r), &mut dx);
                    }
                }
                BranchMasks::DropConnect(ms) => {
                    let m = &ms[i];
                    for r in 0..self.outputs() {
                        let g = inv_a * ds[r];
                        gb[r] += g;
                        if g == 0.0 {
                            continue;
                        }
                        let (mrow, wrow) = (m.row(r), w.row(r));
                        for (k, gwk) in gw.row_mut(r).iter_mut().enumerate() {
                            *gwk += g * mrow[k] * x[k];
                            dx[k] += g * mrow[k] * wrow[k];
                        }
                    }
                }
                BranchMasks::None => unreachable!("checked by check_cache"),
            }
        }
        Ok(dx)
    }

    pub fn backward_into(&self, cache: &LayerCache, dy: &[f64], grads: &mut LayerGrads) -> Result<Vector> {
        if dy.len() != self.outputs() {
            return Err(Error::shape("STE backward", format!("[{}]", self.outputs()), format!("dy [{}]", dy.len())));
        }
        self.check_cache(cache)?;
        let ds = self.output_grad_to_preact(cache, dy);
        self.backward_preact_into(cache, &ds, grads)
    }

    /// Exact gradients of the cached training-mode forward map with the masks
    /// held constant. Returns `(dW_i, db_i, dx)`.
    pub fn backward(&self, cache: &LayerCache, dy: &[f64]) -> Result<(Vec<Matrix>, Vec<Vector>, Vector)> {
        let mut grads = self.zero_grads();
        let dx = self.backward_into(cache, dy, &mut grads)?;
        Ok((grads.weights, grads.biases, dx))
    }

    pub fn zero_grads(&self) -> LayerGrads {
        LayerGrads::zeros(self.averaging(), self.outputs(), self.inputs())
    }
}

/// `dot(m ∘ w, x)` with the same summation order as [`dot`].
#[inline]
fn masked_dot(m: &[f64], w: &[f64], x: &[f64]) -> f64 {
    let n = x.len();
    let (m, w) = (&m[..n], &w[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += (m[j] * w[j]) * x[j];
        acc[1] += (m[j + 1] * w[j + 1]) * x[j + 1];
        acc[2] += (m[j + 2] * w[j + 2]) * x[j + 2];
        acc[3] += (m[j + 3] * w[j + 3]) * x[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..n {
        tail += (m[j] * w[j]) * x[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
