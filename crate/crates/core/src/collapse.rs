//! Test-time collapse of STE layers into dense layers, a numerical verifier
//! for the collapse, and parameter accounting.
//!
//! If the evaluation-time noise operation maps each branch output to
//! `C (W_i x + b_i) + d`, the averaged layer is the dense layer with weights
//! `(1/A) sum_i C W_i` and bias `(1/A) sum_i (C b_i + d)`. Dropout noise is the
//! case `C = p I`, `d = 0`. Dropconnect scales only the weight entries, so its
//! bias is averaged without the factor `p`.

use crate::error::{Error, Result};
use crate::layers::{DenseLayer, Noise, SteLayer};
use crate::model::{Layer, LayerSpec, Model, ModelSpec};
use crate::random::Rng;
use crate::tensor::{Matrix, Vector};

/// Affine map `C z + d` applied to every branch output at evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseTransform {
    pub c: Matrix,
    pub d: Vector,
}

impl CollapseTransform {
    /// The dropout case, `C = p I`, `d = 0`.
    pub fn scaled_identity(n: usize, p: f64) -> Self {
        let mut c = Matrix::identity(n);
        c.scale(p);
        Self { c, d: Vector::zeros(n) }
    }

    /// Folds the transform into averaged dense parameters:
    /// `((1/A) sum C W_i, (1/A) sum (C b_i + d))`.
    pub fn fold(&self, weights: &[Matrix], biases: &[Vector]) -> Result<(Matrix, Vector)> {
        let first = weights
            .first()
            .ok_or_else(|| Error::InvalidArgument("fold needs at least one branch".into()))?;
        let n = first.rows();
        if self.c.rows() != n || self.c.cols() != n || self.d.len() != n {
            return Err(Error::shape(
                "CollapseTransform::fold",
                format!("C {}, d {}", self.c.shape(), self.d.shape()),
                format!("W {}", first.shape()),
            ));
        }
        if biases.len() != weights.len() {
            return Err(Error::InvalidArgument("fold: weight/bias count mismatch".into()));
        }
        let inv_a = 1.0 / weights.len() as f64;
        let mut w_eff = Matrix::zeros(n, first.cols());
        let mut b_eff = Vector::zeros(n);
        for (w, b) in weights.iter().zip(biases) {
            w_eff.axpy(inv_a, &self.c.matmul(w)?);
            let mut cb = self.c.matvec(b)?;
            cb.axpy(1.0, &self.d);
            b_eff.axpy(inv_a, &cb);
        }
        Ok((w_eff, b_eff))
    }
}

/// The single dense layer an STE layer computes at evaluation time. The
/// output-dropout factor is carried over as the dense layer's `output_keep`,
/// which is applied after the activation in evaluation mode.
pub fn collapse_ste(layer: &SteLayer) -> DenseLayer {
    let a = layer.averaging() as f64;
    let (w_scale, b_scale) = match layer.noise {
        Noise::Dropout => (layer.keep / a, layer.keep / a),
        Noise::DropConnect => (layer.keep / a, 1.0 / a),
    };
    let mut w_sum = Matrix::zeros(layer.outputs(), layer.inputs());
    let mut b_sum = Vector::zeros(layer.outputs());
    for (w, b) in layer.weights.iter().zip(&layer.biases) {
        w_sum.axpy(1.0, w);
        b_sum.axpy(1.0, b);
    }
    w_sum.scale(w_scale);
    b_sum.scale(b_scale);
    DenseLayer {
        weights: w_sum,
        bias: b_sum,
        activation: layer.activation,
        output_keep: layer.output_keep,
    }
}

/// Replaces every STE layer with its collapsed dense layer. Dense layers are
/// copied unchanged.
pub fn collapse_model(model: &Model) -> Model {
    Model {
        layers: model
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => Layer::Dense(d.clone()),
                Layer::Ste(s) => Layer::Dense(collapse_ste(s)),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseReport {
    pub trials: usize,
    pub tolerance: f64,
    pub max_abs_diff: f64,
    /// Trial index where the maximum occurred. Trial 0 is the zero input.
    pub worst_trial: usize,
    pub passed: bool,
}

impl std::fmt::Display for CollapseReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} over {} trials: max abs diff {:.3e} (tol {:.1e}, worst trial {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.trials,
            self.max_abs_diff,
            self.tolerance,
            self.worst_trial
        )
    }
}

fn compare(
    trials: usize,
    tol: f64,
    inputs: usize,
    rng: &mut Rng,
    mut reference: impl FnMut(&[f64]) -> Result<Vector>,
    mut candidate: impl FnMut(&[f64]) -> Result<Vector>,
) -> Result<CollapseReport> {
    let mut max_abs_diff: f64 = 0.0;
    let mut worst_trial = 0;
    for t in 0..trials {
        let x: Vec<f64> = if t == 0 {
            vec![0.0; inputs]
        } else {
            (0..inputs).map(|_| rng.uniform(-2.0, 2.0)).collect()
        };
        let (y_ref, y_cand) = (reference(&x)?, candidate(&x)?);
        if y_ref.len() != y_cand.len() {
            return Err(Error::shape("verify_collapse", y_ref.shape(), y_cand.shape()));
        }
        for (a, b) in y_ref.iter().zip(y_cand.iter()) {
            let diff = (a - b).abs();
            if diff.is_nan() || diff > max_abs_diff {
                max_abs_diff = if diff.is_nan() { f64::INFINITY } else { diff };
                worst_trial = t;
            }
        }
    }
    Ok(CollapseReport {
        trials,
        tolerance: tol,
        max_abs_diff,
        worst_trial,
        passed: max_abs_diff < tol,
    })
}

/// Compares the STE layer's evaluation-mode forward pass against the dense
/// forward pass of `collapsed` on `trials` inputs (the first is all zeros,
/// the rest uniform on `[-2, 2)`).
pub fn verify_collapse(
    layer: &SteLayer,
    collapsed: &DenseLayer,
    trials: usize,
    tol: f64,
    rng: &mut Rng,
) -> Result<CollapseReport> {
    if collapsed.inputs() != layer.inputs() || collapsed.outputs() != layer.outputs() {
        return Err(Error::shape(
            "verify_collapse",
            layer.weights[0].shape(),
            collapsed.weights.shape(),
        ));
    }
    compare(
        trials,
        tol,
        layer.inputs(),
        rng,
        |x| layer.forward_eval(x),
        |x| collapsed.forward_eval(x),
    )
}

/// Whole-network form of [`verify_collapse`], comparing output logits.
pub fn verify_model_collapse(
    model: &Model,
    collapsed: &Model,
    trials: usize,
    tol: f64,
    rng: &mut Rng,
) -> Result<CollapseReport> {
    if model.inputs() != collapsed.inputs() || model.outputs() != collapsed.outputs() {
        return Err(Error::shape(
            "verify_model_collapse",
            format!("{}->{}", model.inputs(), model.outputs()),
            format!("{}->{}", collapsed.inputs(), collapsed.outputs()),
        ));
    }
    compare(
        trials,
        tol,
        model.inputs(),
        rng,
        |x| model.logits_eval(x),
        |x| collapsed.logits_eval(x),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerParamCount {
    pub inputs: usize,
    pub outputs: usize,
    /// Parameters updated during training: `A * N * (M + 1)` for STE layers.
    pub trained: u64,
    /// Parameters after collapse: `N * (M + 1)`.
    pub collapsed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub layers: Vec<LayerParamCount>,
    pub total_trained: u64,
    pub total_collapsed: u64,
}

pub fn count_parameters(spec: &ModelSpec) -> ParamCount {
    let layers: Vec<LayerParamCount> = spec
        .layers
        .iter()
        .zip(spec.dims())
        .map(|(l, (m, n))| {
            let dense = (n as u64) * (m as u64 + 1);
            let branches = match l {
                LayerSpec::Dense { .. } => 1,
                LayerSpec::Ste { averaging, .. } => *averaging as u64,
            };
            LayerParamCount {
                inputs: m,
                outputs: n,
                trained: branches * dense,
                collapsed: dense,
            }
        })
        .collect();
    ParamCount {
        total_trained: layers.iter().map(|l| l.trained).sum(),
        total_collapsed: layers.iter().map(|l| l.collapsed).sum(),
        layers,
    }
}

/// Formats a count in millions with one decimal, e.g. `83.9M`.
pub fn format_millions(count: u64) -> String {
    format!("{:.1}M", count as f64 / 1e6)
}
