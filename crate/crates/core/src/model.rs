//! Differentiable models with hand-written gradients.
//!
//! Both model kinds are dense feed-forward networks over a flat parameter
//! vector. Each layer stores its weight matrix row-major with shape
//! `(out, in)` followed by its bias of length `out`.
//!
//! * `linear-1d`: a single `1 → 1` layer, `ŷ = w·x + c`, squared-error loss.
//! * `mlp`: ReLU hidden layers and a linear output producing logits, with
//!   softmax cross-entropy loss.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Target, Targets};
use crate::error::{Error, Result};
use crate::loss::LossVector;
use crate::rng::stream;
use crate::scalar::{ordered_sum, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[serde(rename = "linear-1d")]
    Linear1d,
    Mlp,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Linear1d => "linear-1d",
            ModelKind::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Sum,
}

impl Default for Reduction {
    fn default() -> Self {
        Reduction::Mean
    }
}

/// Shape of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Architecture of a model: kind plus layer shapes, fixed at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    kind: ModelKind,
    layers: Vec<LayerShape>,
}

impl Layout {
    pub fn linear_1d() -> Self {
        Self {
            kind: ModelKind::Linear1d,
            layers: vec![LayerShape {
                inputs: 1,
                outputs: 1,
            }],
        }
    }

    /// `input → hidden[0] → … → classes`.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        if input == 0 || classes < 2 || hidden.contains(&0) {
            return Err(Error::config(
                "model",
                "mlp needs positive input and hidden widths and at least two classes",
            ));
        }
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let layers = widths
            .windows(2)
            .map(|w| LayerShape {
                inputs: w[0],
                outputs: w[1],
            })
            .collect();
        Ok(Self {
            kind: ModelKind::Mlp,
            layers,
        })
    }

    fn from_layers(kind: ModelKind, layers: Vec<LayerShape>) -> Result<Self> {
        let ok = !layers.is_empty()
            && layers.windows(2).all(|w| w[0].outputs == w[1].inputs)
            && match kind {
                ModelKind::Linear1d => {
                    layers
                        == [LayerShape {
                            inputs: 1,
                            outputs: 1,
                        }]
                }
                ModelKind::Mlp => layers.last().is_some_and(|l| l.outputs >= 2),
            };
        if ok {
            Ok(Self { kind, layers })
        } else {
            Err(Error::usage("layer shapes do not form a valid model"))
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerShape::param_count).sum()
    }

    /// Offsets of `(weights, bias)` for every layer.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut at = 0;
        self.layers
            .iter()
            .map(|l| {
                let w = at;
                let b = w + l.inputs * l.outputs;
                at = b + l.outputs;
                (w, b)
            })
            .collect()
    }
}

/// Flat parameter vector with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    layout: Layout,
    values: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(layout: Layout) -> Self {
        let values = vec![T::zero(); layout.param_count()];
        Self { layout, values }
    }

    pub fn from_values(layout: Layout, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.param_count() {
            return Err(Error::usage(format!(
                "{} values for a layout with {} parameters",
                values.len(),
                layout.param_count()
            )));
        }
        Ok(Self { layout, values })
    }

    /// `ŷ = w·x + c`.
    pub fn linear(w: T, c: T) -> Self {
        Self {
            layout: Layout::linear_1d(),
            values: vec![w, c],
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(layout: Layout, seed: u64) -> Self {
        let mut rng = stream(seed);
        let mut values = Vec::with_capacity(layout.param_count());
        for l in &layout.layers {
            let bound = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            for _ in 0..l.inputs * l.outputs {
                values.push(T::of(rng.random_range(-bound..bound)));
            }
            values.extend(std::iter::repeat_n(T::zero(), l.outputs));
        }
        Self { layout, values }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `θ ← θ − step·g`.
    pub fn apply_update(&mut self, gradient: &[T], step: T) {
        assert_eq!(gradient.len(), self.values.len(), "gradient layout mismatch");
        for (p, &g) in self.values.iter_mut().zip(gradient) {
            *p -= step * g;
        }
    }

    fn check_data(&self, data: &Dataset<T>) -> Result<()> {
        if data.dim() != self.layout.input_dim() {
            return Err(Error::usage(format!(
                "feature dimension {} does not match model input {}",
                data.dim(),
                self.layout.input_dim()
            )));
        }
        match (self.layout.kind, data.targets()) {
            (ModelKind::Linear1d, Targets::Real(_)) => Ok(()),
            (ModelKind::Mlp, Targets::Class { classes, .. }) if *classes == self.layout.output_dim() => {
                Ok(())
            }
            _ => Err(Error::usage(format!(
                "{} model cannot be used with these targets",
                self.layout.kind.as_str()
            ))),
        }
    }
}

/// Row-major `(rows, cols)` model outputs: predictions for `linear-1d`,
/// logits for `mlp`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions<T> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> Predictions<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Activations of one forward pass, kept for backpropagation.
struct Trace<T> {
    /// `inputs[l]` is the input to layer `l` (`inputs[0]` is the batch).
    inputs: Vec<Vec<T>>,
    output: Vec<T>,
}

fn gather<T: Scalar>(data: &Dataset<T>, indices: &[usize]) -> Vec<T> {
    let mut x = Vec::with_capacity(indices.len() * data.dim());
    for &i in indices {
        x.extend_from_slice(data.row(i));
    }
    x
}

fn run_layers<T: Scalar>(params: &ModelParams<T>, x: Vec<T>, rows: usize, keep: bool) -> Trace<T> {
    let layout = &params.layout;
    let last = layout.layers.len() - 1;
    let mut inputs = Vec::new();
    let mut current = x;
    for (l, (shape, (wo, bo))) in layout.layers.iter().zip(layout.offsets()).enumerate() {
        let w = &params.values[wo..wo + shape.inputs * shape.outputs];
        let b = &params.values[bo..bo + shape.outputs];
        let mut z = Vec::with_capacity(rows * shape.outputs);
        for _ in 0..rows {
            z.extend_from_slice(b);
        }
        // z = x · Wᵀ + b
        T::gemm(
            rows,
            shape.inputs,
            shape.outputs,
            T::one(),
            &current,
            shape.inputs,
            1,
            w,
            1,
            shape.inputs,
            T::one(),
            &mut z,
            shape.outputs,
            1,
        );
        if l < last {
            for v in z.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        if keep {
            inputs.push(current);
        }
        current = z;
    }
    Trace {
        inputs,
        output: current,
    }
}

/// Model outputs for the examples at `indices`.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    data: &Dataset<T>,
    indices: &[usize],
) -> Result<Predictions<T>> {
    params.check_data(data)?;
    let trace = run_layers(params, gather(data, indices), indices.len(), false);
    Ok(Predictions {
        rows: indices.len(),
        cols: params.layout.output_dim(),
        values: trace.output,
    })
}

/// Numerically stable `log Σ exp(z)`.
fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let s = ordered_sum(z.iter().map(|&v| (v - max).exp()));
    max + s.ln()
}

/// Softmax of a row of logits.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let lse = log_sum_exp(z);
    z.iter().map(|&v| (v - lse).exp()).collect()
}

fn sample_loss<T: Scalar>(row: &[T], target: Target<T>) -> T {
    match target {
        Target::Real(y) => {
            let r = row[0] - y;
            r * r
        }
        Target::Class(c) => {
            let v = log_sum_exp(row) - row[c as usize];
            // Rounding can leave a tiny negative value for a confident, correct logit.
            v.max(T::zero())
        }
    }
}

/// Squared error for regression outputs, softmax cross-entropy for logits.
pub fn per_sample_loss<T: Scalar>(
    predictions: &Predictions<T>,
    data: &Dataset<T>,
    indices: &[usize],
) -> Result<LossVector<T>> {
    if predictions.rows != indices.len() {
        return Err(Error::usage(format!(
            "{} predictions for {} examples",
            predictions.rows,
            indices.len()
        )));
    }
    let losses = indices
        .iter()
        .enumerate()
        .map(|(r, &i)| sample_loss(predictions.row(r), data.target(i)))
        .collect();
    LossVector::new(losses)
}

/// Forward pass plus per-sample losses.
pub fn batch_losses<T: Scalar>(
    params: &ModelParams<T>,
    data: &Dataset<T>,
    indices: &[usize],
) -> Result<LossVector<T>> {
    let preds = forward(params, data, indices)?;
    per_sample_loss(&preds, data, indices)
}

/// Reduced loss over the examples at `indices`.
pub fn reduced_loss<T: Scalar>(
    params: &ModelParams<T>,
    data: &Dataset<T>,
    indices: &[usize],
    reduction: Reduction,
) -> Result<T> {
    let losses = batch_losses(params, data, indices)?;
    let sum = ordered_sum(losses.as_slice().iter().copied());
    Ok(match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / T::of_usize(indices.len()),
    })
}

/// Gradient of the reduced loss over the examples at `indices`, in the
/// parameter layout.
pub fn gradient<T: Scalar>(
    params: &ModelParams<T>,
    data: &Dataset<T>,
    indices: &[usize],
    reduction: Reduction,
) -> Result<Vec<T>> {
    if indices.is_empty() {
        return Err(Error::usage("gradient of an empty subset"));
    }
    params.check_data(data)?;
    let rows = indices.len();
    let layout = &params.layout;
    let trace = run_layers(params, gather(data, indices), rows, true);

    // d(loss)/d(output), summed over the batch.
    let out_dim = layout.output_dim();
    let mut delta = trace.output;
    for (r, &i) in indices.iter().enumerate() {
        let row = &mut delta[r * out_dim..(r + 1) * out_dim];
        match data.target(i) {
            Target::Real(y) => row[0] = T::of(2.0) * (row[0] - y),
            Target::Class(c) => {
                let p = softmax(row);
                row.copy_from_slice(&p);
                row[c as usize] -= T::one();
            }
        }
    }

    let mut grad = vec![T::zero(); layout.param_count()];
    let offsets = layout.offsets();
    for l in (0..layout.layers.len()).rev() {
        let shape = layout.layers[l];
        let (wo, bo) = offsets[l];
        let input = &trace.inputs[l];

        // dW = δᵀ · input
        T::gemm(
            shape.outputs,
            rows,
            shape.inputs,
            T::one(),
            &delta,
            1,
            shape.outputs,
            input,
            shape.inputs,
            1,
            T::zero(),
            &mut grad[wo..wo + shape.inputs * shape.outputs],
            shape.inputs,
            1,
        );
        for j in 0..shape.outputs {
            grad[bo + j] = ordered_sum((0..rows).map(|r| delta[r * shape.outputs + j]));
        }

        if l > 0 {
            // δ_prev = (δ · W) ⊙ relu'(input)
            let w = &params.values[wo..wo + shape.inputs * shape.outputs];
            let mut prev = vec![T::zero(); rows * shape.inputs];
            T::gemm(
                rows,
                shape.outputs,
                shape.inputs,
                T::one(),
                &delta,
                shape.outputs,
                1,
                w,
                shape.inputs,
                1,
                T::zero(),
                &mut prev,
                shape.inputs,
                1,
            );
            for (d, &a) in prev.iter_mut().zip(input) {
                if a <= T::zero() {
                    *d = T::zero();
                }
            }
            delta = prev;
        }
    }

    if reduction == Reduction::Mean {
        let n = T::of_usize(rows);
        for g in grad.iter_mut() {
            *g /= n;
        }
    }
    Ok(grad)
}

/// Index of the largest entry (first on ties).
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const SNAPSHOT_MAGIC: &str = "obftf-params 1";

/// Writes a parameter snapshot: a short text header terminated by a line
/// `end`, then the parameters as little-endian `f64`.
pub fn write_snapshot<T: Scalar, W: Write>(mut w: W, params: &ModelParams<T>, seed: u64) -> Result<()> {
    writeln!(w, "{SNAPSHOT_MAGIC}")?;
    writeln!(w, "kind {}", params.layout.kind.as_str())?;
    let shapes: Vec<String> = params
        .layout
        .layers
        .iter()
        .map(|l| format!("{}x{}", l.outputs, l.inputs))
        .collect();
    writeln!(w, "layers {}", shapes.join(","))?;
    writeln!(w, "seed {seed}")?;
    writeln!(w, "count {}", params.len())?;
    writeln!(w, "end")?;
    for v in &params.values {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`]; returns the parameters
/// and the recorded seed.
pub fn read_snapshot<T: Scalar, R: BufRead>(mut r: R) -> Result<(ModelParams<T>, u64)> {
    let mut offset = 0u64;
    let mut next = |r: &mut R, key: &str| -> Result<(String, u64)> {
        let mut line = String::new();
        let at = offset;
        let n = r.read_line(&mut line)?;
        offset += n as u64;
        let line = line.trim_end_matches('\n');
        if key.is_empty() {
            return Ok((line.to_string(), at));
        }
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok((v.to_string(), at)),
            _ => Err(Error::format("snapshot.header", at, format!("expected '{key} …', found '{line}'"))),
        }
    };
    let (magic, _) = next(&mut r, "")?;
    if magic != SNAPSHOT_MAGIC {
        return Err(Error::format("snapshot.magic", 0, format!("unexpected first line '{magic}'")));
    }
    let (kind, at) = next(&mut r, "kind")?;
    let kind = match kind.as_str() {
        "linear-1d" => ModelKind::Linear1d,
        "mlp" => ModelKind::Mlp,
        other => return Err(Error::format("snapshot.kind", at, format!("unknown model kind '{other}'"))),
    };
    let (layers, at) = next(&mut r, "layers")?;
    let layers = layers
        .split(',')
        .map(|s| {
            let (o, i) = s.split_once('x')?;
            Some(LayerShape {
                outputs: o.parse().ok()?,
                inputs: i.parse().ok()?,
            })
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::format("snapshot.layers", at, "malformed layer list"))?;
    let layout = Layout::from_layers(kind, layers)
        .map_err(|e| Error::format("snapshot.layers", at, e.to_string()))?;
    let (seed, at) = next(&mut r, "seed")?;
    let seed: u64 = seed
        .parse()
        .map_err(|_| Error::format("snapshot.seed", at, "not an integer"))?;
    let (count, at) = next(&mut r, "count")?;
    let count: usize = count
        .parse()
        .map_err(|_| Error::format("snapshot.count", at, "not an integer"))?;
    if count != layout.param_count() {
        return Err(Error::format(
            "snapshot.count",
            at,
            format!("{count} values recorded for {} parameters", layout.param_count()),
        ));
    }
    let (end, at) = next(&mut r, "")?;
    if end != "end" {
        return Err(Error::format("snapshot.header", at, "missing 'end' line"));
    }
    let data_start = at + 4;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::format(
            "snapshot.data",
            data_start + bytes.len().min(count * 8) as u64,
            format!("expected {} bytes of parameters, found {}", count * 8, bytes.len()),
        ));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
        .collect();
    Ok((ModelParams::from_values(layout, values)?, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;

    fn line_data(points: &[(f64, f64)]) -> Dataset<f64> {
        let ex: Vec<Example<f64>> = points
            .iter()
            .map(|&(x, y)| Example {
                x: vec![x],
                y: Target::Real(y),
            })
            .collect();
        Dataset::from_examples(&ex, None).unwrap()
    }

    #[test]
    fn mnist_mlp_parameter_count() {
        let l = Layout::mlp(784, &[256, 256], 10).unwrap();
        assert_eq!(l.param_count(), 784 * 256 + 256 + 256 * 256 + 256 + 256 * 10 + 10);
        assert_eq!(Layout::linear_1d().param_count(), 2);
    }

    #[test]
    fn linear_forward_examples() {
        let d = line_data(&[(3.0, 0.0), (-2.0, 0.0)]);
        let p = forward(&ModelParams::linear(2.0, 1.0), &d, &[0]).unwrap();
        assert_eq!(p.values, vec![7.0]);
        let p = forward(&ModelParams::linear(0.0, 5.0), &d, &[0, 1]).unwrap();
        assert_eq!(p.values, vec![5.0, 5.0]);
    }

    #[test]
    fn squared_error_examples() {
        let d = line_data(&[(3.0, 7.0), (3.0, 5.0)]);
        let p = ModelParams::linear(2.0, 1.0);
        let l = batch_losses(&p, &d, &[0, 1]).unwrap();
        assert_eq!(l.as_slice(), &[0.0, 4.0]);
    }

    #[test]
    fn zero_mlp_gives_uniform_probabilities() {
        let layout = Layout::mlp(4, &[3], 10).unwrap();
        let p = ModelParams::<f64>::zeros(layout);
        let d = Dataset::classification(4, vec![0.3, -1.0, 2.0, 0.5], vec![7], 10).unwrap();
        let out = forward(&p, &d, &[0]).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
        let probs = softmax(out.row(0));
        assert!(probs.iter().all(|&q| (q - 0.1).abs() < 1e-15));
        let l = per_sample_loss(&out, &d, &[0]).unwrap();
        assert!((l[0] - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_normalized_and_stable() {
        let z = [1000.0, 999.0, -1000.0, 0.0];
        let p = softmax(&z);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let d = Dataset::classification(1, vec![0.0], vec![2], 4).unwrap();
        let preds = Predictions {
            rows: 1,
            cols: 4,
            values: z.to_vec(),
        };
        let l = per_sample_loss(&preds, &d, &[0]).unwrap();
        assert!(l[0].is_finite() && l[0] > 1999.0);
    }

    #[test]
    fn linear_gradient_closed_form() {
        let (w, c, x, y) = (0.7, -0.3, 1.9, 2.5);
        let d = line_data(&[(x, y)]);
        let g = gradient(&ModelParams::linear(w, c), &d, &[0], Reduction::Mean).unwrap();
        let r = w * x + c - y;
        assert!((g[0] - 2.0 * x * r).abs() < 1e-15);
        assert!((g[1] - 2.0 * r).abs() < 1e-15);

        let d = line_data(&[(1.0, 3.0)]);
        let g = gradient(&ModelParams::linear(2.0, 1.0), &d, &[0], Reduction::Mean).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn empty_subset_and_mismatch_errors() {
        let d = line_data(&[(1.0, 1.0)]);
        let p = ModelParams::linear(1.0, 0.0);
        assert!(matches!(gradient(&p, &d, &[], Reduction::Mean), Err(Error::Usage(_))));
        let c = Dataset::classification(2, vec![0.0, 1.0], vec![1], 10).unwrap();
        assert!(forward(&p, &c, &[0]).is_err());
        let mlp = ModelParams::<f64>::zeros(Layout::mlp(3, &[2], 10).unwrap());
        assert!(forward(&mlp, &c, &[0]).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let layout = Layout::mlp(20, &[8], 10).unwrap();
        let a = ModelParams::<f64>::init(layout.clone(), 1);
        let b = ModelParams::<f64>::init(layout.clone(), 1);
        let c = ModelParams::<f64>::init(layout, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f64 / 28.0).sqrt();
        assert!(a.values()[..160].iter().all(|v| v.abs() <= bound));
        assert!(a.values()[160..168].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn snapshot_round_trip_and_corruption() {
        let p = ModelParams::<f64>::init(Layout::mlp(5, &[4, 3], 10).unwrap(), 3);
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &p, 77).unwrap();
        let (q, seed) = read_snapshot::<f64, _>(buf.as_slice()).unwrap();
        assert_eq!(seed, 77);
        assert_eq!(p, q);

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(
            read_snapshot::<f64, _>(truncated),
            Err(Error::Format { .. })
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_snapshot::<f64, _>(bad.as_slice()).is_err());
    }
}
