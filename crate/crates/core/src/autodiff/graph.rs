//! Tape of eagerly evaluated matrix operations with reverse-mode gradients.
//!
//! Every backward rule is itself written with graph operations, so the
//! gradient nodes returned by [`Graph::grad`] can be differentiated again.
//! That is all a Hessian-vector product needs: differentiate `<grad L, v>`.

use ndarray::{Array2, Axis};

use crate::element::Element;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Recip(Var),
    SoftmaxRows(Var),
    Sum(Var),
    /// Column sums, `r x c -> 1 x c`.
    SumRows(Var),
    /// Row sums, `r x c -> r x 1`.
    SumCols(Var),
    /// `1 x c -> r x c`.
    BroadcastRows(Var),
    /// `r x 1 -> r x c`.
    BroadcastCols(Var),
    /// `1 x 1 -> r x c`.
    Expand(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Transpose(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Recip(a)
            | Op::SoftmaxRows(a)
            | Op::Sum(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::BroadcastRows(a)
            | Op::BroadcastCols(a)
            | Op::Expand(a) => vec![a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op,
    value: Array2<T>,
    requires_grad: bool,
}

/// Arena of nodes in creation order, which is a topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    parameters: Vec<(String, Var)>,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            parameters: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn parameters(&self) -> &[(String, Var)] {
        &self.parameters
    }

    pub fn parameter(&mut self, name: impl Into<String>, value: Array2<T>) -> Var {
        let v = self.push(Op::Leaf, value, true);
        self.parameters.push((name.into(), v));
        v
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar_constant(&mut self, x: T) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// The single entry of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> Result<T> {
        match self.shape(v) {
            (1, 1) => Ok(self.value(v)[[0, 0]]),
            (r, c) => Err(Error::Shape(format!("expected a scalar node, got {r}x{c}"))),
        }
    }

    fn push(&mut self, op: Op, value: Array2<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op, value: Array2<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|&v| self.requires_grad(v));
        self.push(op, value, requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a) + self.value(b);
        Ok(self.push_op(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a) - self.value(b);
        Ok(self.push_op(Op::Sub(a, b), value))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a) * self.value(b);
        Ok(self.push_op(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = T::narrow(c);
        let value = self.value(a).mapv(|x| x * k);
        self.push_op(Op::Scale(a, c), value)
    }

    /// Adds a fixed constant; the constant itself is not a node.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let k = T::narrow(c);
        let value = self.value(a).mapv(|x| x + k);
        self.push_op(Op::AddScalar(a), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((r, inner), (inner_b, c)) = (self.shape(a), self.shape(b));
        if inner != inner_b {
            return Err(Error::Shape(format!("matmul: {r}x{inner} by {inner_b}x{c}")));
        }
        let value = self.value(a).dot(self.value(b));
        Ok(self.push_op(Op::MatMul(a, b), value))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push_op(Op::Transpose(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.tanh());
        self.push_op(Op::Tanh(a), value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.exp());
        self.push_op(Op::Exp(a), value)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.ln());
        self.push_op(Op::Log(a), value)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.recip());
        self.push_op(Op::Recip(a), value)
    }

    /// Softmax along each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            row.mapv_inplace(|x| (x - max).exp());
            let total = row.iter().copied().fold(T::zero(), |s, x| s + x);
            row.mapv_inplace(|x| x / total);
        }
        self.push_op(Op::SoftmaxRows(a), value)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().copied().fold(T::zero(), |s, x| s + x);
        self.push_op(Op::Sum(a), Array2::from_elem((1, 1), total))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let s = self.sum(a);
        self.scale(s, 1.0 / (r * c) as f64)
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push_op(Op::SumRows(a), value)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push_op(Op::SumCols(a), value)
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r != 1 {
            return Err(Error::Shape(format!("broadcast_rows needs one row, got {r}")));
        }
        let value = self.value(a).broadcast((rows, c)).expect("1 x c broadcasts").to_owned();
        Ok(self.push_op(Op::BroadcastRows(a), value))
    }

    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if c != 1 {
            return Err(Error::Shape(format!("broadcast_cols needs one column, got {c}")));
        }
        let value = self.value(a).broadcast((r, cols)).expect("r x 1 broadcasts").to_owned();
        Ok(self.push_op(Op::BroadcastCols(a), value))
    }

    pub fn expand(&mut self, a: Var, shape: (usize, usize)) -> Result<Var> {
        let x = self.scalar(a)?;
        Ok(self.push_op(Op::Expand(a), Array2::from_elem(shape, x)))
    }

    /// `x W + b` with `b` a `1 x c` row broadcast over the rows of `x W`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        let rows = self.shape(xw).0;
        let bb = self.broadcast_rows(b, rows)?;
        self.add(xw, bb)
    }

    /// Mean over all entries of `(pred - target)^2`.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Mean over rows of `-log softmax(logits)[label]`, with `one_hot` the
    /// label indicator matrix.
    pub fn cross_entropy_loss(&mut self, logits: Var, one_hot: Var) -> Result<Var> {
        self.same_shape(logits, one_hot, "cross entropy")?;
        let (rows, cols) = self.shape(logits);
        // Shifting by the detached row maximum leaves the loss and all its
        // derivatives unchanged but keeps exp in range.
        let maxima = self
            .value(logits)
            .map_axis(Axis(1), |row| row.iter().copied().fold(T::neg_infinity(), T::max))
            .insert_axis(Axis(1));
        let shift = self.constant(maxima);
        let shift = self.broadcast_cols(shift, cols)?;
        let z = self.sub(logits, shift)?;
        let e = self.exp(z);
        let s = self.sum_cols(e);
        let lse = self.log(s);
        let lse = self.broadcast_cols(lse, cols)?;
        let log_p = self.sub(z, lse)?;
        let picked = self.mul(log_p, one_hot)?;
        let total = self.sum(picked);
        Ok(self.scale(total, -1.0 / rows as f64))
    }

    /// Gradients of a scalar `loss` with respect to `wrt`.
    ///
    /// With `create_graph` the returned nodes depend on the parameters and can
    /// be differentiated again; otherwise they are detached constants.
    pub fn grad(&mut self, loss: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::Shape(format!("loss must be scalar, got {r}x{c}")));
        }
        let mut adjoint: Vec<Option<Var>> = vec![None; loss.0 + 1];
        let seed = self.scalar_constant(T::one());
        adjoint[loss.0] = Some(seed);

        for i in (0..=loss.0).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let y = Var(i);
            let contributions: Vec<(Var, Var)> = match op {
                Op::Leaf => vec![],
                Op::Add(a, b) => vec![(a, g), (b, g)],
                Op::Sub(a, b) => {
                    let neg = self.scale(g, -1.0);
                    vec![(a, g), (b, neg)]
                }
                Op::Mul(a, b) => {
                    let ga = self.mul(g, b)?;
                    let gb = self.mul(g, a)?;
                    vec![(a, ga), (b, gb)]
                }
                Op::Scale(a, k) => vec![(a, self.scale(g, k))],
                Op::AddScalar(a) => vec![(a, g)],
                Op::MatMul(a, b) => {
                    let bt = self.transpose(b);
                    let ga = self.matmul(g, bt)?;
                    let at = self.transpose(a);
                    let gb = self.matmul(at, g)?;
                    vec![(a, ga), (b, gb)]
                }
                Op::Transpose(a) => vec![(a, self.transpose(g))],
                Op::Tanh(a) => {
                    // g * (1 - y^2)
                    let y2 = self.mul(y, y)?;
                    let neg = self.scale(y2, -1.0);
                    let d = self.add_scalar(neg, 1.0);
                    vec![(a, self.mul(g, d)?)]
                }
                Op::Exp(a) => vec![(a, self.mul(g, y)?)],
                Op::Log(a) => {
                    let inv = self.recip(a);
                    vec![(a, self.mul(g, inv)?)]
                }
                Op::Recip(a) => {
                    let y2 = self.mul(y, y)?;
                    let gy2 = self.mul(g, y2)?;
                    vec![(a, self.scale(gy2, -1.0))]
                }
                Op::SoftmaxRows(a) => {
                    // y * (g - rowsum(g * y))
                    let cols = self.shape(y).1;
                    let gy = self.mul(g, y)?;
                    let s = self.sum_cols(gy);
                    let s = self.broadcast_cols(s, cols)?;
                    let centred = self.sub(g, s)?;
                    vec![(a, self.mul(y, centred)?)]
                }
                Op::Sum(a) => {
                    let shape = self.shape(a);
                    vec![(a, self.expand(g, shape)?)]
                }
                Op::SumRows(a) => {
                    let rows = self.shape(a).0;
                    vec![(a, self.broadcast_rows(g, rows)?)]
                }
                Op::SumCols(a) => {
                    let cols = self.shape(a).1;
                    vec![(a, self.broadcast_cols(g, cols)?)]
                }
                Op::BroadcastRows(a) => vec![(a, self.sum_rows(g))],
                Op::BroadcastCols(a) => vec![(a, self.sum_cols(g))],
                Op::Expand(a) => vec![(a, self.sum(g))],
            };
            for (target, contribution) in contributions {
                if !self.nodes[target.0].requires_grad {
                    continue;
                }
                adjoint[target.0] = Some(match adjoint[target.0] {
                    Some(prev) => self.add(prev, contribution)?,
                    None => contribution,
                });
            }
        }

        wrt.iter()
            .map(|&w| {
                let g = match adjoint.get(w.0).copied().flatten() {
                    Some(g) => g,
                    None => self.constant(Array2::zeros(self.shape(w))),
                };
                Ok(if create_graph {
                    g
                } else {
                    self.constant(self.value(g).clone())
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn square_has_gradient_two_w() {
        let mut g = Graph::<f64>::new();
        let w = g.parameter("w", array![[3.0]]);
        let l = g.mul(w, w).unwrap();
        let dw = g.grad(l, &[w], true).unwrap()[0];
        assert_eq!(g.scalar(dw).unwrap(), 6.0);
        // Second derivative through the gradient node.
        let d2 = g.grad(dw, &[w], false).unwrap()[0];
        assert_eq!(g.scalar(d2).unwrap(), 2.0);
    }

    #[test]
    fn non_scalar_loss_is_a_shape_error() {
        let mut g = Graph::<f64>::new();
        let w = g.parameter("w", array![[1.0, 2.0]]);
        assert!(matches!(g.grad(w, &[w], false), Err(Error::Shape(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(array![[1.0, 2.0]]);
        let b = g.constant(array![[1.0], [2.0]]);
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
        assert!(g.broadcast_rows(b, 3).is_err());
    }

    #[test]
    fn unreached_parameters_get_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let w = g.parameter("w", array![[2.0]]);
        let u = g.parameter("u", array![[1.0, 1.0]]);
        let l = g.exp(w);
        let grads = g.grad(l, &[w, u], false).unwrap();
        assert!(close(g.scalar(grads[0]).unwrap(), 2f64.exp(), 1e-15));
        assert_eq!(g.value(grads[1]), &array![[0.0, 0.0]]);
        assert!(!g.requires_grad(grads[0]));
    }

    #[test]
    fn cross_entropy_matches_closed_form() {
        let mut g = Graph::<f64>::new();
        let z = g.parameter("z", array![[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]]);
        let y = g.constant(array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]);
        let l = g.cross_entropy_loss(z, y).unwrap();
        let lse = |r: [f64; 3]| r.iter().map(|x| x.exp()).sum::<f64>().ln();
        let expected = 0.5 * ((lse([1.0, 2.0, 0.5]) - 2.0) + (lse([0.0, -1.0, 3.0]) - 0.0));
        assert!(close(g.scalar(l).unwrap(), expected, 1e-14));
        let dz = g.grad(l, &[z], false).unwrap()[0];
        // softmax - one_hot, over rows
        let row_sum: f64 = g.value(dz).row(0).sum();
        assert!(row_sum.abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(array![[1000.0, 1000.0], [0.0, 2f64.ln()]]);
        let s = g.softmax_rows(a);
        assert_eq!(g.value(s), &array![[0.5, 0.5], [1.0 / 3.0, 2.0 / 3.0]]);
    }

    /// Central differences of a scalar function of one matrix parameter.
    fn check_gradient(build: impl Fn(&mut Graph<f64>, Var) -> Var, w0: Array2<f64>) {
        let eval = |w: &Array2<f64>| {
            let mut g = Graph::new();
            let p = g.parameter("w", w.clone());
            let l = build(&mut g, p);
            g.scalar(l).unwrap()
        };
        let mut g = Graph::new();
        let p = g.parameter("w", w0.clone());
        let l = build(&mut g, p);
        let dw = g.grad(l, &[p], false).unwrap()[0];
        let eps = 1e-6;
        for idx in 0..w0.len() {
            let (r, c) = (idx / w0.ncols(), idx % w0.ncols());
            let mut plus = w0.clone();
            plus[[r, c]] += eps;
            let mut minus = w0.clone();
            minus[[r, c]] -= eps;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let got = g.value(dw)[[r, c]];
            assert!(close(got, fd, 1e-7), "entry ({r},{c}): {got} vs {fd}");
        }
    }

    #[test]
    fn elementwise_and_reduction_rules() {
        let w0 = array![[0.3, -0.7, 1.1], [0.2, 0.5, -0.4]];
        check_gradient(
            |g, w| {
                let t = g.tanh(w);
                let e = g.exp(t);
                let s = g.softmax_rows(e);
                let c = g.sum_cols(s);
                let c = g.broadcast_cols(c, 3).unwrap();
                let r = g.sum_rows(w);
                let r = g.broadcast_rows(r, 2).unwrap();
                let m = g.mul(c, r).unwrap();
                let m = g.add(m, s).unwrap();
                let q = g.add_scalar(m, 2.0);
                let lg = g.log(q);
                let inv = g.recip(q);
                let x = g.sub(lg, inv).unwrap();
                let wt = g.transpose(w);
                let xw = g.matmul(x, wt).unwrap();
                let total = g.sum(xw);
                let big = g.expand(total, (2, 2)).unwrap();
                let total = g.mean(big);
                g.scale(total, 0.5)
            },
            w0,
        );
    }
}
