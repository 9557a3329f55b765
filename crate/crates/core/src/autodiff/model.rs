//! The two test architectures, built from graph primitives.
//!
//! Parameters are flattened in declaration order, row-major within each
//! tensor:
//!
//! * MLP: `w0, b0, w1, b1, ...` with `w_l` of shape `widths[l] x widths[l+1]`
//!   and `b_l` a `1 x widths[l+1]` row. Hidden layers use tanh; the last is linear.
//! * Attention block: for each head `h`, `wq_h, wk_h, wv_h` (`d_model x d_head`)
//!   and `wo_h` (`d_head x d_model`); then the readout `w_out`
//!   (`d_model x outputs`) and `b_out` (`1 x outputs`). A sample is a
//!   `seq_len x d_model` sequence stored row-major in the feature columns. The
//!   block adds the attention output to its input, mean-pools over positions
//!   and reads out.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::data::{Batch, TargetKind};
use super::graph::{Graph, Var};
use crate::element::Element;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mse" => Ok(Self::Mse),
            "cross_entropy" => Ok(Self::CrossEntropy),
            other => Err(format!("unknown loss `{other}` (expected mse or cross_entropy)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Architecture {
    Mlp {
        widths: Vec<usize>,
    },
    Attention {
        d_model: usize,
        n_heads: usize,
        seq_len: usize,
        outputs: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub loss: LossKind,
}

impl ModelSpec {
    pub fn mlp(widths: &[usize], loss: LossKind) -> Result<Self> {
        let spec = Self {
            architecture: Architecture::Mlp {
                widths: widths.to_vec(),
            },
            loss,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn attention(d_model: usize, n_heads: usize, seq_len: usize, outputs: usize, loss: LossKind) -> Result<Self> {
        let spec = Self {
            architecture: Architecture::Attention {
                d_model,
                n_heads,
                seq_len,
                outputs,
            },
            loss,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.architecture {
            Architecture::Mlp { widths } => {
                if widths.len() < 2 || widths.contains(&0) {
                    return Err(Error::Argument(format!("invalid MLP widths {widths:?}")));
                }
            }
            Architecture::Attention {
                d_model,
                n_heads,
                seq_len,
                outputs,
            } => {
                if *d_model == 0 || *n_heads == 0 || *seq_len == 0 || *outputs == 0 {
                    return Err(Error::Argument("attention dimensions must be positive".into()));
                }
                if d_model % n_heads != 0 {
                    return Err(Error::Argument(format!(
                        "d_model {d_model} is not divisible by {n_heads} heads"
                    )));
                }
            }
        }
        if self.loss == LossKind::Mse && self.output_dim() != 1 {
            return Err(Error::Argument("mse loss needs a single output".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match &self.architecture {
            Architecture::Mlp { widths } => widths[0],
            Architecture::Attention { d_model, seq_len, .. } => d_model * seq_len,
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.architecture {
            Architecture::Mlp { widths } => *widths.last().expect("validated widths"),
            Architecture::Attention { outputs, .. } => *outputs,
        }
    }

    pub fn target_kind(&self) -> TargetKind {
        match self.loss {
            LossKind::Mse => TargetKind::Regression,
            LossKind::CrossEntropy => TargetKind::Classes(self.output_dim()),
        }
    }

    /// Names and shapes in flattening order.
    pub fn parameter_shapes(&self) -> Vec<(String, (usize, usize))> {
        match &self.architecture {
            Architecture::Mlp { widths } => widths
                .windows(2)
                .enumerate()
                .flat_map(|(l, w)| [(format!("w{l}"), (w[0], w[1])), (format!("b{l}"), (1, w[1]))])
                .collect(),
            Architecture::Attention {
                d_model,
                n_heads,
                outputs,
                ..
            } => {
                let d_head = d_model / n_heads;
                let mut shapes = Vec::new();
                for h in 0..*n_heads {
                    shapes.push((format!("wq{h}"), (*d_model, d_head)));
                    shapes.push((format!("wk{h}"), (*d_model, d_head)));
                    shapes.push((format!("wv{h}"), (*d_model, d_head)));
                    shapes.push((format!("wo{h}"), (d_head, *d_model)));
                }
                shapes.push(("w_out".into(), (*d_model, *outputs)));
                shapes.push(("b_out".into(), (1, *outputs)));
                shapes
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes().iter().map(|(_, (r, c))| r * c).sum()
    }

    /// Weights `N(0, 1/fan_in)`, biases `N(0, 0.01)`.
    pub fn init_parameters(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(self.parameter_count());
        for (name, (r, c)) in self.parameter_shapes() {
            let std = if name.starts_with('b') { 0.1 } else { 1.0 / (r as f64).sqrt() };
            for _ in 0..r * c {
                let z: f64 = StandardNormal.sample(&mut rng);
                out.push(std * z);
            }
        }
        out
    }

    pub fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        if batch.features() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, model expects {}",
                batch.features(),
                self.input_dim()
            )));
        }
        if self.loss == LossKind::CrossEntropy {
            let classes = self.output_dim() as f64;
            if let Some(t) = batch
                .targets()
                .iter()
                .find(|&&t| t.fract() != 0.0 || t < 0.0 || t >= classes)
            {
                return Err(Error::Data(format!("class target {t} outside 0..{classes}")));
            }
        }
        Ok(())
    }

    /// Registers the parameters on `g` and returns them with the mean batch loss.
    pub fn build_loss<T: Element>(&self, g: &mut Graph<T>, params: &[T], batch: &Batch) -> Result<(Vec<Var>, Var)> {
        self.check_batch(batch)?;
        if params.len() != self.parameter_count() {
            return Err(Error::Dimension {
                expected: self.parameter_count(),
                actual: params.len(),
            });
        }
        let mut vars = Vec::new();
        let mut offset = 0;
        for (name, (r, c)) in self.parameter_shapes() {
            let value = Array2::from_shape_vec((r, c), params[offset..offset + r * c].to_vec())
                .expect("shape matches slice length");
            offset += r * c;
            vars.push(g.parameter(name, value));
        }
        let loss = match &self.architecture {
            Architecture::Mlp { widths } => self.mlp_loss(g, &vars, widths.len() - 1, batch)?,
            Architecture::Attention {
                d_model,
                n_heads,
                seq_len,
                ..
            } => self.attention_loss(g, &vars, *d_model, *n_heads, *seq_len, batch)?,
        };
        Ok((vars, loss))
    }

    fn mlp_loss<T: Element>(&self, g: &mut Graph<T>, vars: &[Var], layers: usize, batch: &Batch) -> Result<Var> {
        let mut h = g.constant(batch.inputs().mapv(T::narrow));
        for l in 0..layers {
            h = g.affine(h, vars[2 * l], vars[2 * l + 1])?;
            if l + 1 < layers {
                h = g.tanh(h);
            }
        }
        self.loss_on(g, h, batch.targets())
    }

    fn attention_loss<T: Element>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        d_model: usize,
        n_heads: usize,
        seq_len: usize,
        batch: &Batch,
    ) -> Result<Var> {
        let d_head = d_model / n_heads;
        let inv_sqrt = 1.0 / (d_head as f64).sqrt();
        let (w_out, b_out) = (vars[4 * n_heads], vars[4 * n_heads + 1]);
        let mut total: Option<Var> = None;
        for (i, row) in batch.inputs().rows().into_iter().enumerate() {
            let x = Array2::from_shape_fn((seq_len, d_model), |(p, j)| T::narrow(row[p * d_model + j]));
            let x = g.constant(x);
            let mut y = x;
            for h in 0..n_heads {
                let [wq, wk, wv, wo] = [vars[4 * h], vars[4 * h + 1], vars[4 * h + 2], vars[4 * h + 3]];
                let q = g.matmul(x, wq)?;
                let k = g.matmul(x, wk)?;
                let v = g.matmul(x, wv)?;
                let kt = g.transpose(k);
                let scores = g.matmul(q, kt)?;
                let scores = g.scale(scores, inv_sqrt);
                let attn = g.softmax_rows(scores);
                let mixed = g.matmul(attn, v)?;
                let out = g.matmul(mixed, wo)?;
                y = g.add(y, out)?;
            }
            let pooled = g.sum_rows(y);
            let pooled = g.scale(pooled, 1.0 / seq_len as f64);
            let logits = g.affine(pooled, w_out, b_out)?;
            let loss = self.loss_on(g, logits, &batch.targets()[i..i + 1])?;
            total = Some(match total {
                Some(t) => g.add(t, loss)?,
                None => loss,
            });
        }
        let total = total.expect("batch checked non-empty");
        Ok(g.scale(total, 1.0 / batch.len() as f64))
    }

    fn loss_on<T: Element>(&self, g: &mut Graph<T>, out: Var, targets: &[f64]) -> Result<Var> {
        match self.loss {
            LossKind::Mse => {
                let t = Array2::from_shape_fn((targets.len(), 1), |(i, _)| T::narrow(targets[i]));
                let t = g.constant(t);
                g.mse_loss(out, t)
            }
            LossKind::CrossEntropy => {
                let classes = self.output_dim();
                let one_hot = Array2::from_shape_fn((targets.len(), classes), |(i, c)| {
                    if targets[i] as usize == c {
                        T::one()
                    } else {
                        T::zero()
                    }
                });
                let y = g.constant(one_hot);
                g.cross_entropy_loss(out, y)
            }
        }
    }
}

/// A model specification together with a parameter point.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Element> {
    spec: ModelSpec,
    params: Vec<T>,
}

impl<T: Element> Model<T> {
    pub fn new(spec: ModelSpec, params: Vec<T>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.parameter_count() {
            return Err(Error::Dimension {
                expected: spec.parameter_count(),
                actual: params.len(),
            });
        }
        Ok(Self { spec, params })
    }

    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = spec.init_parameters(seed).into_iter().map(T::narrow).collect();
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Same architecture at another parameter point.
    pub fn with_params(&self, params: Vec<T>) -> Result<Self> {
        Self::new(self.spec.clone(), params)
    }

    pub fn loss(&self, batch: &Batch) -> Result<T> {
        let mut g = Graph::new();
        let (_, loss) = self.spec.build_loss(&mut g, &self.params, batch)?;
        g.scalar(loss)
    }

    /// Flattened gradient of the mean batch loss.
    pub fn gradient(&self, batch: &Batch) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let (vars, loss) = self.spec.build_loss(&mut g, &self.params, batch)?;
        let grads = g.grad(loss, &vars, false)?;
        Ok(grads.iter().flat_map(|&v| g.value(v).iter().copied().collect::<Vec<_>>()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::data::synthetic_batch;

    fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
        let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
        num / den
    }

    fn fd_gradient(model: &Model<f64>, batch: &Batch, eps: f64) -> Vec<f64> {
        (0..model.parameter_count())
            .map(|i| {
                let mut plus = model.params().to_vec();
                plus[i] += eps;
                let mut minus = model.params().to_vec();
                minus[i] -= eps;
                let lp = model.with_params(plus).unwrap().loss(batch).unwrap();
                let lm = model.with_params(minus).unwrap().loss(batch).unwrap();
                (lp - lm) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn parameter_counts() {
        let mlp = ModelSpec::mlp(&[4, 8, 1], LossKind::Mse).unwrap();
        assert_eq!(mlp.parameter_count(), 4 * 8 + 8 + 8 + 1);
        let att = ModelSpec::attention(4, 2, 3, 3, LossKind::CrossEntropy).unwrap();
        assert_eq!(att.parameter_count(), 2 * (3 * 4 * 2 + 2 * 4) + 4 * 3 + 3);
        assert_eq!(att.input_dim(), 12);
        assert!(ModelSpec::attention(5, 2, 3, 3, LossKind::CrossEntropy).is_err());
        assert!(ModelSpec::mlp(&[4, 8, 2], LossKind::Mse).is_err());
        assert!(ModelSpec::mlp(&[4], LossKind::Mse).is_err());
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let spec = ModelSpec::mlp(&[4, 8, 1], LossKind::Mse).unwrap();
        let model = Model::<f64>::init(spec.clone(), 0).unwrap();
        let batch = synthetic_batch(16, 4, spec.target_kind(), 0).unwrap();
        let g = model.gradient(&batch).unwrap();
        let fd = fd_gradient(&model, &batch, 1e-5);
        let err = rel_inf(&g, &fd);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn attention_gradient_matches_finite_differences() {
        let spec = ModelSpec::attention(4, 2, 3, 3, LossKind::CrossEntropy).unwrap();
        let model = Model::<f64>::init(spec.clone(), 0).unwrap();
        let batch = synthetic_batch(6, spec.input_dim(), spec.target_kind(), 0).unwrap();
        let g = model.gradient(&batch).unwrap();
        let fd = fd_gradient(&model, &batch, 1e-5);
        let err = rel_inf(&g, &fd);
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn mlp_cross_entropy_gradient() {
        let spec = ModelSpec::mlp(&[3, 5, 4], LossKind::CrossEntropy).unwrap();
        let model = Model::<f64>::init(spec.clone(), 2).unwrap();
        let batch = synthetic_batch(10, 3, spec.target_kind(), 2).unwrap();
        let err = rel_inf(&model.gradient(&batch).unwrap(), &fd_gradient(&model, &batch, 1e-5));
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn batch_validation() {
        let spec = ModelSpec::mlp(&[3, 2], LossKind::CrossEntropy).unwrap();
        let model = Model::<f64>::init(spec, 1).unwrap();
        let wrong_width = synthetic_batch(2, 4, TargetKind::Classes(2), 0).unwrap();
        assert!(matches!(model.loss(&wrong_width), Err(Error::Shape(_))));
        let bad_label = Batch::parse("1 2 3 2\n").unwrap();
        assert!(matches!(model.loss(&bad_label), Err(Error::Data(_))));
        assert!(Model::<f64>::new(model.spec().clone(), vec![0.0; 3]).is_err());
    }
}
