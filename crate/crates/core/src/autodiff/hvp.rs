//! Hessian-vector products by double backward.

use std::ops::Range;

use ndarray::Array2;

use super::data::Batch;
use super::graph::{Graph, Var};
use super::model::Model;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::operators::SymmetricOperator;
use crate::sharded::ShardedVector;

/// `H v` for the scalar `loss` over the parameter nodes `vars`, where `v` is
/// flattened in the order of `vars`. Differentiates `sum_i <g_i, v_i>`.
pub fn graph_hvp<T: Element>(g: &mut Graph<T>, vars: &[Var], loss: Var, v: &[T]) -> Result<Vec<T>> {
    let total: usize = vars.iter().map(|&p| g.value(p).len()).sum();
    if v.len() != total {
        return Err(Error::Dimension {
            expected: total,
            actual: v.len(),
        });
    }
    let grads = g.grad(loss, vars, true)?;
    let mut offset = 0;
    let mut d: Option<Var> = None;
    for (&p, &gi) in vars.iter().zip(&grads) {
        let shape = g.shape(p);
        let n = shape.0 * shape.1;
        let vi = Array2::from_shape_vec(shape, v[offset..offset + n].to_vec()).expect("slice fits shape");
        offset += n;
        let vi = g.constant(vi);
        let prod = g.mul(gi, vi)?;
        let s = g.sum(prod);
        d = Some(match d {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
    }
    let Some(d) = d else {
        return Ok(Vec::new());
    };
    let hv = g.grad(d, vars, false)?;
    Ok(hv.iter().flat_map(|&u| g.value(u).iter().copied().collect::<Vec<_>>()).collect())
}

fn hvp_flat<T: Element>(model: &Model<T>, batch: &Batch, v: &[T]) -> Result<Vec<T>> {
    if v.len() != model.parameter_count() {
        return Err(Error::Dimension {
            expected: model.parameter_count(),
            actual: v.len(),
        });
    }
    // A fresh graph per call: no gradient state survives between batches.
    let mut g = Graph::new();
    let (vars, loss) = model.spec().build_loss(&mut g, model.params(), batch)?;
    graph_hvp(&mut g, &vars, loss, v)
}

/// Hessian of the mean batch loss applied to `v`.
pub fn hvp<T: Element>(model: &Model<T>, batch: &Batch, v: &ShardedVector<T>) -> Result<ShardedVector<T>> {
    let out = hvp_flat(model, batch, &v.to_global())?;
    ShardedVector::from_global(v.layout(), &out)
}

fn batched_hvp_flat<T: Element>(model: &Model<T>, batches: &[Batch], v: &[T]) -> Result<Vec<T>> {
    let first = batches
        .first()
        .ok_or_else(|| Error::Argument("batched HVP needs at least one batch".into()))?;
    if let Some(b) = batches.iter().find(|b| b.features() != first.features()) {
        return Err(Error::Shape(format!(
            "batches disagree on sample dimension: {} vs {}",
            first.features(),
            b.features()
        )));
    }
    let total: usize = batches.iter().map(Batch::len).sum();
    let mut h = vec![0.0f64; v.len()];
    for batch in batches {
        let u = hvp_flat(model, batch, v)?;
        let share = batch.len() as f64 / total as f64;
        for (acc, x) in h.iter_mut().zip(u) {
            *acc += x.widen() * share;
        }
    }
    Ok(h.into_iter().map(T::narrow).collect())
}

/// Sample-weighted mean of per-batch HVPs: the mean Hessian over all samples
/// applied to `v`.
pub fn batched_hvp<T: Element>(model: &Model<T>, batches: &[Batch], v: &ShardedVector<T>) -> Result<ShardedVector<T>> {
    let out = batched_hvp_flat(model, batches, &v.to_global())?;
    ShardedVector::from_global(v.layout(), &out)
}

/// The loss Hessian at a fixed parameter point, as a matrix-free operator.
#[derive(Clone, Debug)]
pub struct HessianOperator<T: Element> {
    model: Model<T>,
    batches: Vec<Batch>,
}

impl<T: Element> HessianOperator<T> {
    pub fn new(model: Model<T>, batches: Vec<Batch>) -> Result<Self> {
        if batches.is_empty() {
            return Err(Error::Argument("Hessian operator needs at least one batch".into()));
        }
        for b in &batches {
            model.spec().check_batch(b)?;
        }
        Ok(Self { model, batches })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }
}

impl<T: Element> SymmetricOperator<T> for HessianOperator<T> {
    fn dim(&self) -> usize {
        self.model.parameter_count()
    }

    fn label(&self) -> String {
        format!(
            "hessian({:?}, {:?}, P={}, samples={})",
            self.model.spec().architecture,
            self.model.spec().loss,
            self.dim(),
            self.batches.iter().map(Batch::len).sum::<usize>()
        )
    }

    fn apply_global(&self, x: &[T]) -> Result<Vec<T>> {
        batched_hvp_flat(&self.model, &self.batches, x)
    }

    fn apply_rows(&self, x: &[T], rows: Range<usize>) -> Result<Vec<T>> {
        Ok(self.apply_global(x)?[rows].to_vec())
    }
}
