//! Execution engines for sharded vector arithmetic.
//!
//! The Lanczos driver is written against [`VectorEngine`]. [`LocalEngine`]
//! operates on in-process [`ShardedVector`]s directly. [`WorkerPool`] emulates
//! a multi-device node: each worker thread exclusively owns one shard of every
//! vector, and a single coordinator drives them by message passing. Partial
//! reductions are always combined in ascending worker order.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::operators::{self, OperatorHandle};
use crate::sharded::{self, combine_ordered, ShardLayout, ShardedVector};

pub trait VectorEngine<T: Element> {
    type Vector;

    fn layout(&self) -> &ShardLayout;

    /// Places a vector under the engine's control; its layout must match.
    fn upload(&mut self, v: &ShardedVector<T>) -> Result<Self::Vector>;

    fn download(&mut self, v: &Self::Vector) -> Result<ShardedVector<T>>;

    fn dot(&mut self, a: &Self::Vector, b: &Self::Vector) -> Result<f64>;

    /// `alpha * x + y`.
    fn axpy(&mut self, alpha: f64, x: &Self::Vector, y: &Self::Vector) -> Result<Self::Vector>;

    fn scale(&mut self, x: &Self::Vector, c: f64) -> Result<Self::Vector>;

    fn apply(&mut self, op: &OperatorHandle<T>, x: &Self::Vector) -> Result<Self::Vector>;

    fn release(&mut self, _v: Self::Vector) -> Result<()> {
        Ok(())
    }

    fn norm2(&mut self, x: &Self::Vector) -> Result<f64> {
        Ok(self.dot(x, x)?.sqrt())
    }
}

/// Direct in-process execution; per-shard work runs on the rayon pool.
#[derive(Clone, Debug)]
pub struct LocalEngine {
    layout: ShardLayout,
}

impl LocalEngine {
    pub fn new(layout: ShardLayout) -> Self {
        Self { layout }
    }
}

impl<T: Element> VectorEngine<T> for LocalEngine {
    type Vector = ShardedVector<T>;

    fn layout(&self) -> &ShardLayout {
        &self.layout
    }

    fn upload(&mut self, v: &ShardedVector<T>) -> Result<Self::Vector> {
        if v.layout() != &self.layout {
            return Err(Error::Layout("vector layout differs from the engine layout".into()));
        }
        Ok(v.clone())
    }

    fn download(&mut self, v: &Self::Vector) -> Result<ShardedVector<T>> {
        Ok(v.clone())
    }

    fn dot(&mut self, a: &Self::Vector, b: &Self::Vector) -> Result<f64> {
        a.dot(b)
    }

    fn axpy(&mut self, alpha: f64, x: &Self::Vector, y: &Self::Vector) -> Result<Self::Vector> {
        x.axpy(alpha, y)
    }

    fn scale(&mut self, x: &Self::Vector, c: f64) -> Result<Self::Vector> {
        x.scale(c)
    }

    fn apply(&mut self, op: &OperatorHandle<T>, x: &Self::Vector) -> Result<Self::Vector> {
        operators::apply(op.as_ref(), x)
    }
}

/// Left fold of per-worker partial sums in ascending worker index.
///
/// `partials` may arrive in any completion order, tagged with the worker that
/// produced them. Every worker must contribute exactly once. The fold is
/// exact and rounded once at the end.
pub fn reduce_ordered(partials: &[(usize, f64)], worker_count: usize) -> Result<f64> {
    let mut slots: Vec<Option<f64>> = vec![None; worker_count];
    for &(worker, value) in partials {
        let slot = slots.get_mut(worker).ok_or_else(|| {
            Error::Protocol(format!("partial from unknown worker {worker} (pool of {worker_count})"))
        })?;
        if slot.replace(value).is_some() {
            return Err(Error::Protocol(format!("duplicate partial from worker {worker}")));
        }
    }
    let mut acc = ExactSum::new();
    for (worker, slot) in slots.iter().enumerate() {
        let value = slot.ok_or_else(|| Error::Protocol(format!("missing partial from worker {worker}")))?;
        acc.add(value);
    }
    Ok(acc.value())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MessageStats {
    pub scatter: u64,
    pub gather: u64,
    pub dot_partial: u64,
    pub axpy: u64,
    pub scale: u64,
    pub apply_shard: u64,
    pub free: u64,
    pub shutdown: u64,
}

impl MessageStats {
    pub fn total(&self) -> u64 {
        self.scatter
            + self.gather
            + self.dot_partial
            + self.axpy
            + self.scale
            + self.apply_shard
            + self.free
            + self.shutdown
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PoolOptions {
    /// Each worker sleeps a random duration up to this many microseconds
    /// before replying. Used to shake out ordering assumptions.
    pub reply_jitter_micros: u64,
    pub jitter_seed: u64,
}

type VectorId = u64;

/// Handle to a vector whose shards live on the pool's workers.
#[derive(Debug, PartialEq, Eq, Hash)]
pub struct PoolVector {
    id: VectorId,
}

enum Request<T: Element> {
    Scatter { id: VectorId, data: Vec<T> },
    Gather { id: VectorId },
    DotPartial { a: VectorId, b: VectorId },
    Axpy { alpha: f64, x: VectorId, y: VectorId, out: VectorId },
    Scale { x: VectorId, c: f64, out: VectorId },
    ApplyShard { op: OperatorHandle<T>, input: Arc<Vec<T>>, out: VectorId },
    Free { id: VectorId },
    Shutdown,
}

impl<T: Element> Request<T> {
    fn count(&self, stats: &mut MessageStats) {
        let field = match self {
            Request::Scatter { .. } => &mut stats.scatter,
            Request::Gather { .. } => &mut stats.gather,
            Request::DotPartial { .. } => &mut stats.dot_partial,
            Request::Axpy { .. } => &mut stats.axpy,
            Request::Scale { .. } => &mut stats.scale,
            Request::ApplyShard { .. } => &mut stats.apply_shard,
            Request::Free { .. } => &mut stats.free,
            Request::Shutdown => &mut stats.shutdown,
        };
        *field += 1;
    }
}

enum Response<T> {
    Done,
    Shard(Vec<T>),
    Partial(ExactSum),
    Failed(String),
}

struct Envelope<T: Element> {
    ticket: u64,
    request: Request<T>,
}

struct Reply<T> {
    worker: usize,
    ticket: u64,
    response: Response<T>,
}

pub struct WorkerPool<T: Element> {
    layout: ShardLayout,
    senders: Vec<Sender<Envelope<T>>>,
    replies: Receiver<Reply<T>>,
    handles: Vec<JoinHandle<()>>,
    next_id: VectorId,
    next_ticket: u64,
    stats: MessageStats,
}

/// Spawns one worker per shard of `layout`.
pub fn spawn_pool<T: Element>(n: usize, layout: &ShardLayout) -> Result<WorkerPool<T>> {
    if n != layout.worker_count() {
        return Err(Error::Layout(format!(
            "pool of {n} workers for a layout of {} shards",
            layout.worker_count()
        )));
    }
    WorkerPool::spawn(layout.clone(), PoolOptions::default())
}

impl<T: Element> WorkerPool<T> {
    pub fn spawn(layout: ShardLayout, options: PoolOptions) -> Result<Self> {
        let (reply_tx, replies) = mpsc::channel();
        let mut senders = Vec::with_capacity(layout.worker_count());
        let mut handles = Vec::with_capacity(layout.worker_count());
        for worker in 0..layout.worker_count() {
            let (tx, rx) = mpsc::channel();
            let state = Worker {
                index: worker,
                range: layout.range(worker),
                store: HashMap::new(),
                jitter: (options.reply_jitter_micros > 0).then(|| {
                    (
                        ChaCha8Rng::seed_from_u64(options.jitter_seed ^ (worker as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                        options.reply_jitter_micros,
                    )
                }),
            };
            let reply_tx = reply_tx.clone();
            let handle = std::thread::Builder::new()
                .name(format!("slq-worker-{worker}"))
                .spawn(move || state.run(rx, reply_tx))?;
            senders.push(tx);
            handles.push(handle);
        }
        Ok(Self {
            layout,
            senders,
            replies,
            handles,
            next_id: 0,
            next_ticket: 0,
            stats: MessageStats::default(),
        })
    }

    pub fn worker_count(&self) -> usize {
        self.senders.len()
    }

    pub fn stats(&self) -> MessageStats {
        self.stats
    }

    fn fresh_id(&mut self) -> VectorId {
        self.next_id += 1;
        self.next_id
    }

    /// Sends one request to every worker and waits for all replies, returned
    /// in worker order.
    fn round(&mut self, mut make: impl FnMut(usize) -> Request<T>) -> Result<Vec<Response<T>>> {
        self.next_ticket += 1;
        let ticket = self.next_ticket;
        for (worker, tx) in self.senders.iter().enumerate() {
            let request = make(worker);
            request.count(&mut self.stats);
            tx.send(Envelope { ticket, request })
                .map_err(|_| Error::Protocol(format!("worker {worker} is gone")))?;
        }
        let n = self.senders.len();
        let mut slots: Vec<Option<Response<T>>> = (0..n).map(|_| None).collect();
        for _ in 0..n {
            let reply = self
                .replies
                .recv()
                .map_err(|_| Error::Protocol("all workers disconnected".into()))?;
            if reply.ticket != ticket {
                return Err(Error::Protocol(format!(
                    "worker {} answered ticket {} during ticket {ticket}",
                    reply.worker, reply.ticket
                )));
            }
            let slot = slots
                .get_mut(reply.worker)
                .ok_or_else(|| Error::Protocol(format!("reply from unknown worker {}", reply.worker)))?;
            if slot.replace(reply.response).is_some() {
                return Err(Error::Protocol(format!("worker {} replied twice", reply.worker)));
            }
        }
        let responses: Vec<Response<T>> = slots
            .into_iter()
            .map(|s| s.expect("every slot filled after n distinct replies"))
            .collect();
        for (worker, r) in responses.iter().enumerate() {
            if let Response::Failed(msg) = r {
                return Err(Error::Protocol(format!("worker {worker}: {msg}")));
            }
        }
        Ok(responses)
    }

    fn expect_done(responses: Vec<Response<T>>) -> Result<()> {
        if responses.iter().all(|r| matches!(r, Response::Done)) {
            Ok(())
        } else {
            Err(Error::Protocol("unexpected reply kind".into()))
        }
    }

    fn scatter_global(&mut self, values: &[T]) -> Result<PoolVector> {
        let id = self.fresh_id();
        let bounds = self.layout.bounds().to_vec();
        let responses = self.round(|w| Request::Scatter {
            id,
            data: values[bounds[w].clone()].to_vec(),
        })?;
        Self::expect_done(responses)?;
        Ok(PoolVector { id })
    }

    fn gather_global(&mut self, v: &PoolVector) -> Result<Vec<T>> {
        let responses = self.round(|_| Request::Gather { id: v.id })?;
        let mut out = Vec::with_capacity(self.layout.total_dim());
        for r in responses {
            match r {
                Response::Shard(s) => out.extend(s),
                _ => return Err(Error::Protocol("gather answered without a shard".into())),
            }
        }
        Ok(out)
    }

    /// Waits for every worker to drain its queue and exit.
    pub fn shutdown(mut self) -> Result<MessageStats> {
        let responses = self.round(|_| Request::Shutdown)?;
        Self::expect_done(responses)?;
        for h in self.handles.drain(..) {
            h.join().map_err(|_| Error::Protocol("worker panicked".into()))?;
        }
        Ok(self.stats)
    }
}

impl<T: Element> Drop for WorkerPool<T> {
    fn drop(&mut self) {
        if self.handles.is_empty() {
            return;
        }
        for tx in &self.senders {
            let _ = tx.send(Envelope {
                ticket: 0,
                request: Request::Shutdown,
            });
        }
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

impl<T: Element> VectorEngine<T> for WorkerPool<T> {
    type Vector = PoolVector;

    fn layout(&self) -> &ShardLayout {
        &self.layout
    }

    fn upload(&mut self, v: &ShardedVector<T>) -> Result<PoolVector> {
        if v.layout() != &self.layout {
            return Err(Error::Layout("vector layout differs from the pool layout".into()));
        }
        self.scatter_global(&v.to_global())
    }

    fn download(&mut self, v: &PoolVector) -> Result<ShardedVector<T>> {
        let values = self.gather_global(v)?;
        ShardedVector::from_global(&self.layout, &values)
    }

    fn dot(&mut self, a: &PoolVector, b: &PoolVector) -> Result<f64> {
        let responses = self.round(|_| Request::DotPartial { a: a.id, b: b.id })?;
        let partials = responses
            .into_iter()
            .map(|r| match r {
                Response::Partial(p) => Ok(p),
                _ => Err(Error::Protocol("dot answered without a partial".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(combine_ordered(&partials))
    }

    fn axpy(&mut self, alpha: f64, x: &PoolVector, y: &PoolVector) -> Result<PoolVector> {
        let out = self.fresh_id();
        let responses = self.round(|_| Request::Axpy {
            alpha,
            x: x.id,
            y: y.id,
            out,
        })?;
        Self::expect_done(responses)?;
        Ok(PoolVector { id: out })
    }

    fn scale(&mut self, x: &PoolVector, c: f64) -> Result<PoolVector> {
        if !c.is_finite() {
            return Err(Error::Argument(format!("cannot scale by non-finite factor {c}")));
        }
        let out = self.fresh_id();
        let responses = self.round(|_| Request::Scale { x: x.id, c, out })?;
        Self::expect_done(responses)?;
        Ok(PoolVector { id: out })
    }

    fn apply(&mut self, op: &OperatorHandle<T>, x: &PoolVector) -> Result<PoolVector> {
        if op.dim() != self.layout.total_dim() {
            return Err(Error::Dimension {
                expected: self.layout.total_dim(),
                actual: op.dim(),
            });
        }
        let input = self.gather_global(x)?;
        if op.rows_independent() {
            let input = Arc::new(input);
            let out = self.fresh_id();
            let responses = self.round(|_| Request::ApplyShard {
                op: Arc::clone(op),
                input: Arc::clone(&input),
                out,
            })?;
            Self::expect_done(responses)?;
            Ok(PoolVector { id: out })
        } else {
            // Whole-vector operators (e.g. a Hessian-vector product) run on the
            // coordinator while the workers wait, then the result is scattered.
            let result = op.apply_global(&input)?;
            if result.len() != self.layout.total_dim() {
                return Err(Error::Dimension {
                    expected: self.layout.total_dim(),
                    actual: result.len(),
                });
            }
            self.scatter_global(&result)
        }
    }

    fn release(&mut self, v: PoolVector) -> Result<()> {
        let responses = self.round(|_| Request::Free { id: v.id })?;
        Self::expect_done(responses)
    }
}

struct Worker<T: Element> {
    index: usize,
    range: Range<usize>,
    store: HashMap<VectorId, Vec<T>>,
    jitter: Option<(ChaCha8Rng, u64)>,
}

impl<T: Element> Worker<T> {
    fn run(mut self, inbox: Receiver<Envelope<T>>, outbox: Sender<Reply<T>>) {
        while let Ok(Envelope { ticket, request }) = inbox.recv() {
            let shutdown = matches!(request, Request::Shutdown);
            let response = self.handle(request);
            if let Some((rng, max)) = self.jitter.as_mut() {
                let micros = rng.random_range(0..=*max);
                std::thread::sleep(Duration::from_micros(micros));
            }
            if outbox
                .send(Reply {
                    worker: self.index,
                    ticket,
                    response,
                })
                .is_err()
            {
                return;
            }
            if shutdown {
                return;
            }
        }
    }

    fn shard(&self, id: VectorId) -> std::result::Result<&Vec<T>, String> {
        self.store
            .get(&id)
            .ok_or_else(|| format!("unknown vector {id}"))
    }

    fn handle(&mut self, request: Request<T>) -> Response<T> {
        match self.try_handle(request) {
            Ok(r) => r,
            Err(msg) => Response::Failed(msg),
        }
    }

    fn try_handle(&mut self, request: Request<T>) -> std::result::Result<Response<T>, String> {
        Ok(match request {
            Request::Scatter { id, data } => {
                if data.len() != self.range.len() {
                    return Err(format!(
                        "scatter of {} elements into a shard of {}",
                        data.len(),
                        self.range.len()
                    ));
                }
                self.store.insert(id, data);
                Response::Done
            }
            Request::Gather { id } => Response::Shard(self.shard(id)?.clone()),
            Request::DotPartial { a, b } => {
                Response::Partial(sharded::partial_dot(self.shard(a)?, self.shard(b)?))
            }
            Request::Axpy { alpha, x, y, out } => {
                let v = sharded::axpy_slice(T::narrow(alpha), self.shard(x)?, self.shard(y)?);
                self.store.insert(out, v);
                Response::Done
            }
            Request::Scale { x, c, out } => {
                let v = sharded::scale_slice(T::narrow(c), self.shard(x)?);
                self.store.insert(out, v);
                Response::Done
            }
            Request::ApplyShard { op, input, out } => {
                let v = op
                    .apply_rows(&input, self.range.clone())
                    .map_err(|e| e.to_string())?;
                self.store.insert(out, v);
                Response::Done
            }
            Request::Free { id } => {
                self.store.remove(&id);
                Response::Done
            }
            Request::Shutdown => {
                self.store.clear();
                Response::Done
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{wigner_operator, DenseSymmetric};
    use crate::sharded::{draw_probe, ProbeSpec};

    #[test]
    fn reduce_ordered_examples() {
        assert_eq!(reduce_ordered(&[(0, 1.0), (1, 2.0), (2, 3.0)], 3).unwrap(), 6.0);
        assert_eq!(reduce_ordered(&[(2, 3.0), (0, 1.0), (1, 2.0)], 3).unwrap(), 6.0);
        assert!(matches!(reduce_ordered(&[(0, 1.0), (2, 3.0)], 3), Err(Error::Protocol(_))));
        assert!(matches!(reduce_ordered(&[(0, 1.0), (0, 1.0)], 1), Err(Error::Protocol(_))));
        assert!(matches!(reduce_ordered(&[(3, 1.0)], 3), Err(Error::Protocol(_))));
    }

    #[test]
    fn million_partials_against_big_integer_sum() {
        use num_bigint::BigInt;
        use num_traits::Signed;
        use rand::{Rng, SeedableRng};

        // Every finite f64 is an integer multiple of 2^-1074.
        fn scaled(x: f64) -> BigInt {
            let (mantissa, exp, sign) = num_traits::Float::integer_decode(x);
            BigInt::from(sign) * (BigInt::from(mantissa) << (exp as i32 + 1074) as usize)
        }

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let partials: Vec<(usize, f64)> = (0..n)
            .map(|i| {
                let mag = 10f64.powi(rng.random_range(-8..8));
                (i, rng.random_range(-1.0..1.0) * mag)
            })
            .collect();
        let got = reduce_ordered(&partials, n).unwrap();
        let exact: BigInt = partials.iter().map(|&(_, x)| scaled(x)).sum();
        let err = (scaled(got) - &exact).abs();
        assert!(exact.abs() > BigInt::from(0));
        assert!(err * BigInt::from(10).pow(12) <= exact.abs());
    }

    #[test]
    fn spawn_checks_worker_count() {
        let layout = ShardLayout::even(10, 4).unwrap();
        assert!(spawn_pool::<f64>(3, &layout).is_err());
        let mut pool = spawn_pool::<f64>(4, &layout).unwrap();
        let v = ShardedVector::from_global(&layout, &(0..10).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        let h = pool.upload(&v).unwrap();
        assert_eq!(pool.download(&h).unwrap(), v);
        let sizes: Vec<usize> = layout.bounds().iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
        let stats = pool.shutdown().unwrap();
        assert_eq!(stats.scatter, 4);
        assert_eq!(stats.gather, 4);
        assert_eq!(stats.shutdown, 4);
    }

    fn exercise<E: VectorEngine<f64>>(engine: &mut E, op: &OperatorHandle<f64>) -> Vec<u64> {
        let layout = engine.layout().clone();
        let x: ShardedVector<f64> = draw_probe(&ProbeSpec::gaussian(1), &layout).unwrap();
        let y: ShardedVector<f64> = draw_probe(&ProbeSpec::gaussian(2), &layout).unwrap();
        let hx = engine.upload(&x).unwrap();
        let hy = engine.upload(&y).unwrap();
        let mut bits = vec![engine.dot(&hx, &hy).unwrap().to_bits()];
        let z = engine.axpy(-0.75, &hx, &hy).unwrap();
        let z = engine.scale(&z, 3.5).unwrap();
        let az = engine.apply(op, &z).unwrap();
        bits.push(engine.norm2(&az).unwrap().to_bits());
        bits.extend(engine.download(&az).unwrap().to_global().iter().map(|v| v.to_bits()));
        engine.release(az).unwrap();
        bits
    }

    #[test]
    fn pool_matches_local_engine_bitwise() {
        let op: OperatorHandle<f64> = Arc::new(wigner_operator(97, 1.0, 3).unwrap());
        let mut local = LocalEngine::new(ShardLayout::single(97).unwrap());
        let reference = exercise(&mut local, &op);
        for workers in [1, 2, 5, 8] {
            let layout = ShardLayout::even(97, workers).unwrap();
            let mut pool = WorkerPool::spawn(layout.clone(), PoolOptions::default()).unwrap();
            assert_eq!(exercise(&mut pool, &op), reference, "{workers} workers");
            let mut sharded_local = LocalEngine::new(layout);
            assert_eq!(exercise(&mut sharded_local, &op), reference);
        }
    }

    #[test]
    fn randomized_reply_delays_do_not_deadlock_or_reorder() {
        let op: OperatorHandle<f64> = Arc::new(wigner_operator(64, 1.0, 8).unwrap());
        let mut local = LocalEngine::new(ShardLayout::single(64).unwrap());
        let reference = exercise(&mut local, &op);
        for seed in 0..4 {
            let options = PoolOptions {
                reply_jitter_micros: 300,
                jitter_seed: seed,
            };
            let mut pool = WorkerPool::spawn(ShardLayout::even(64, 6).unwrap(), options).unwrap();
            for _ in 0..3 {
                assert_eq!(exercise(&mut pool, &op), reference);
            }
            let stats = pool.shutdown().unwrap();
            assert_eq!(stats.total() % 6, 0, "each round addresses every worker");
        }
    }

    #[test]
    fn unknown_vector_is_a_protocol_error() {
        let layout = ShardLayout::even(6, 2).unwrap();
        let mut pool = WorkerPool::<f64>::spawn(layout, PoolOptions::default()).unwrap();
        let ghost = PoolVector { id: 999 };
        assert!(matches!(pool.dot(&ghost, &ghost), Err(Error::Protocol(_))));
        // The pool stays usable after a failed round.
        let v = ShardedVector::from_global(pool.layout(), &[1.0; 6]).unwrap();
        let h = pool.upload(&v).unwrap();
        assert_eq!(pool.dot(&h, &h).unwrap(), 6.0);
    }

    #[test]
    fn whole_vector_operators_run_on_coordinator() {
        struct Twice(usize);
        impl crate::operators::SymmetricOperator<f64> for Twice {
            fn dim(&self) -> usize {
                self.0
            }
            fn label(&self) -> String {
                "twice".into()
            }
            fn apply_global(&self, x: &[f64]) -> Result<Vec<f64>> {
                Ok(x.iter().map(|v| 2.0 * v).collect())
            }
        }
        let op: OperatorHandle<f64> = Arc::new(Twice(7));
        let layout = ShardLayout::even(7, 3).unwrap();
        let mut pool = WorkerPool::spawn(layout.clone(), PoolOptions::default()).unwrap();
        let v = ShardedVector::from_global(&layout, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let h = pool.upload(&v).unwrap();
        let out = pool.apply(&op, &h).unwrap();
        assert_eq!(pool.download(&out).unwrap().to_global(), vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0]);
        assert_eq!(pool.stats().apply_shard, 0);
        let dense: OperatorHandle<f64> = Arc::new(DenseSymmetric::identity(7).unwrap());
        pool.apply(&dense, &h).unwrap();
        assert_eq!(pool.stats().apply_shard, 3);
    }
}
