//! Item-level policies.
//!
//! A policy maps a user context to scores over the whole catalog and
//! normalizes them with a log-softmax over the full catalog, so the returned
//! values are proper log-probabilities regardless of which candidates are
//! asked for. [`Policy::backprop`] pulls a gradient with respect to those
//! log-probabilities back to the flat parameter vector.

use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numerics::{check_finite, log_sum_exp};
use crate::{Error, Result};

/// The item universe.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    item_count: usize,
    titles: Option<Vec<String>>,
}

impl Catalog {
    pub fn new(item_count: usize) -> Result<Self> {
        if item_count < 2 {
            return Err(Error::Config(format!("catalog needs ≥ 2 items, got {item_count}")));
        }
        Ok(Self {
            item_count,
            titles: None,
        })
    }

    pub fn with_titles(titles: Vec<String>) -> Result<Self> {
        let mut c = Self::new(titles.len())?;
        c.titles = Some(titles);
        Ok(c)
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn title(&self, item: usize) -> Option<&str> {
        self.titles.as_ref()?.get(item).map(String::as_str)
    }
}

/// What a policy conditions on: the dense user index and the item history.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    pub user: usize,
    pub history: &'a [usize],
}

impl<'a> Context<'a> {
    pub fn new(user: usize, history: &'a [usize]) -> Self {
        Self { user, history }
    }
}

/// Counts item-level forward evaluations (one per candidate whose
/// log-probability is requested).
#[derive(Debug, Default)]
pub struct ForwardCounter(AtomicU64);

impl ForwardCounter {
    pub fn add(&self, n: usize) {
        self.0.fetch_add(n as u64, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

impl Clone for ForwardCounter {
    fn clone(&self) -> Self {
        Self(AtomicU64::new(self.get()))
    }
}

/// Anything that produces per-candidate log-probabilities for a context.
pub trait LogProbSource: Sync {
    fn item_count(&self) -> usize;

    /// `log π(item | context)` for each requested item.
    fn log_probs(&self, ctx: &Context<'_>, items: &[usize]) -> Result<Vec<f64>>;

    fn forward_evals(&self) -> u64;

    fn reset_forward_evals(&self);
}

/// A trainable policy with a flat parameter vector.
pub trait Policy: LogProbSource {
    /// Unnormalized scores over the full catalog.
    fn scores(&self, ctx: &Context<'_>) -> Result<Vec<f64>>;

    /// Accumulates `Σ_c grad_logp[c] ∂ log π(items[c]) / ∂θ` into `grad`.
    fn backprop(
        &self,
        ctx: &Context<'_>,
        items: &[usize],
        grad_logp: &[f64],
        grad: &mut [f64],
    ) -> Result<()>;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Last,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "last" => Ok(Pooling::Last),
            other => Err(Error::Config(format!("unknown pooling `{other}` (mean|last)"))),
        }
    }
}

/// Scores `s_i = h_u · v_i` with `h_u` a pooling of the history's item embeddings.
#[derive(Debug, Clone)]
pub struct EmbeddingPolicy {
    item_count: usize,
    dim: usize,
    pooling: Pooling,
    embeddings: Vec<f64>,
    counter: ForwardCounter,
}

impl EmbeddingPolicy {
    /// Embeddings drawn i.i.d. from `N(0, 1/dim)`.
    pub fn init<R: Rng + ?Sized>(item_count: usize, dim: usize, pooling: Pooling, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be ≥ 1".into()));
        }
        Catalog::new(item_count)?;
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive sd");
        let embeddings = (0..item_count * dim).map(|_| normal.sample(rng)).collect();
        Self::from_embeddings(item_count, dim, pooling, embeddings)
    }

    pub fn from_embeddings(item_count: usize, dim: usize, pooling: Pooling, embeddings: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be ≥ 1".into()));
        }
        if embeddings.len() != item_count * dim {
            return Err(Error::LengthMismatch {
                expected: item_count * dim,
                actual: embeddings.len(),
            });
        }
        check_finite(&embeddings)?;
        Ok(Self {
            item_count,
            dim,
            pooling,
            embeddings,
            counter: ForwardCounter::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn embedding(&self, item: usize) -> &[f64] {
        &self.embeddings[item * self.dim..(item + 1) * self.dim]
    }

    pub fn user_representation(&self, history: &[usize]) -> Result<Vec<f64>> {
        if history.is_empty() {
            return Err(Error::ColdStart);
        }
        check_items(history, self.item_count)?;
        Ok(match self.pooling {
            Pooling::Mean => {
                let mut h = vec![0.0; self.dim];
                for &j in history {
                    for (acc, v) in h.iter_mut().zip(self.embedding(j)) {
                        *acc += v;
                    }
                }
                let n = history.len() as f64;
                h.iter_mut().for_each(|x| *x /= n);
                h
            }
            Pooling::Last => self.embedding(*history.last().unwrap()).to_vec(),
        })
    }
}

impl LogProbSource for EmbeddingPolicy {
    fn item_count(&self) -> usize {
        self.item_count
    }

    fn log_probs(&self, ctx: &Context<'_>, items: &[usize]) -> Result<Vec<f64>> {
        normalized(&self.scores(ctx)?, items, &self.counter)
    }

    fn forward_evals(&self) -> u64 {
        self.counter.get()
    }

    fn reset_forward_evals(&self) {
        self.counter.reset()
    }
}

impl Policy for EmbeddingPolicy {
    fn scores(&self, ctx: &Context<'_>) -> Result<Vec<f64>> {
        let h = self.user_representation(ctx.history)?;
        Ok(self
            .embeddings
            .chunks_exact(self.dim)
            .map(|v| dot(&h, v))
            .collect())
    }

    fn backprop(&self, ctx: &Context<'_>, items: &[usize], grad_logp: &[f64], grad: &mut [f64]) -> Result<()> {
        check_grad_shape(items, grad_logp, grad, self.embeddings.len())?;
        let h = self.user_representation(ctx.history)?;
        let grad_scores = log_softmax_backward(&self.scores(ctx)?, items, grad_logp)?;
        let mut grad_h = vec![0.0; self.dim];
        for (i, &gs) in grad_scores.iter().enumerate() {
            if gs == 0.0 {
                continue;
            }
            let row = i * self.dim;
            for k in 0..self.dim {
                grad[row + k] += gs * h[k];
                grad_h[k] += gs * self.embeddings[row + k];
            }
        }
        match self.pooling {
            Pooling::Mean => {
                let n = ctx.history.len() as f64;
                for &j in ctx.history {
                    for k in 0..self.dim {
                        grad[j * self.dim + k] += grad_h[k] / n;
                    }
                }
            }
            Pooling::Last => {
                let j = *ctx.history.last().unwrap();
                for k in 0..self.dim {
                    grad[j * self.dim + k] += grad_h[k];
                }
            }
        }
        Ok(())
    }

    fn params(&self) -> &[f64] {
        &self.embeddings
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.embeddings
    }
}

/// One free logit per (user, item).
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    users: usize,
    item_count: usize,
    logits: Vec<f64>,
    counter: ForwardCounter,
}

impl TabularPolicy {
    pub fn zeros(users: usize, item_count: usize) -> Result<Self> {
        Self::from_logits(users, item_count, vec![0.0; users * item_count])
    }

    pub fn from_logits(users: usize, item_count: usize, logits: Vec<f64>) -> Result<Self> {
        Catalog::new(item_count)?;
        if logits.len() != users * item_count {
            return Err(Error::LengthMismatch {
                expected: users * item_count,
                actual: logits.len(),
            });
        }
        check_finite(&logits)?;
        Ok(Self {
            users,
            item_count,
            logits,
            counter: ForwardCounter::default(),
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn row(&self, user: usize) -> &[f64] {
        &self.logits[user * self.item_count..(user + 1) * self.item_count]
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.users {
            return Err(Error::IndexOutOfRange {
                index: user,
                len: self.users,
            });
        }
        Ok(())
    }
}

impl LogProbSource for TabularPolicy {
    fn item_count(&self) -> usize {
        self.item_count
    }

    fn log_probs(&self, ctx: &Context<'_>, items: &[usize]) -> Result<Vec<f64>> {
        normalized(&self.scores(ctx)?, items, &self.counter)
    }

    fn forward_evals(&self) -> u64 {
        self.counter.get()
    }

    fn reset_forward_evals(&self) {
        self.counter.reset()
    }
}

impl Policy for TabularPolicy {
    fn scores(&self, ctx: &Context<'_>) -> Result<Vec<f64>> {
        self.check_user(ctx.user)?;
        Ok(self.row(ctx.user).to_vec())
    }

    fn backprop(&self, ctx: &Context<'_>, items: &[usize], grad_logp: &[f64], grad: &mut [f64]) -> Result<()> {
        check_grad_shape(items, grad_logp, grad, self.logits.len())?;
        let grad_scores = log_softmax_backward(&self.scores(ctx)?, items, grad_logp)?;
        let row = ctx.user * self.item_count;
        for (i, gs) in grad_scores.into_iter().enumerate() {
            grad[row + i] += gs;
        }
        Ok(())
    }

    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }
}

/// Either policy kind, for code that picks one at run time.
#[derive(Debug, Clone)]
pub enum PolicyModel {
    Embedding(EmbeddingPolicy),
    Tabular(TabularPolicy),
}

macro_rules! dispatch {
    ($self:expr, $p:ident => $body:expr) => {
        match $self {
            PolicyModel::Embedding($p) => $body,
            PolicyModel::Tabular($p) => $body,
        }
    };
}

impl LogProbSource for PolicyModel {
    fn item_count(&self) -> usize {
        dispatch!(self, p => p.item_count())
    }

    fn log_probs(&self, ctx: &Context<'_>, items: &[usize]) -> Result<Vec<f64>> {
        dispatch!(self, p => p.log_probs(ctx, items))
    }

    fn forward_evals(&self) -> u64 {
        dispatch!(self, p => p.forward_evals())
    }

    fn reset_forward_evals(&self) {
        dispatch!(self, p => p.reset_forward_evals())
    }
}

impl Policy for PolicyModel {
    fn scores(&self, ctx: &Context<'_>) -> Result<Vec<f64>> {
        dispatch!(self, p => p.scores(ctx))
    }

    fn backprop(&self, ctx: &Context<'_>, items: &[usize], grad_logp: &[f64], grad: &mut [f64]) -> Result<()> {
        dispatch!(self, p => p.backprop(ctx, items, grad_logp, grad))
    }

    fn params(&self) -> &[f64] {
        dispatch!(self, p => p.params())
    }

    fn params_mut(&mut self) -> &mut [f64] {
        dispatch!(self, p => p.params_mut())
    }
}

impl From<EmbeddingPolicy> for PolicyModel {
    fn from(p: EmbeddingPolicy) -> Self {
        PolicyModel::Embedding(p)
    }
}

impl From<TabularPolicy> for PolicyModel {
    fn from(p: TabularPolicy) -> Self {
        PolicyModel::Tabular(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    Uniform,
    FrozenSnapshot,
}

#[derive(Debug, Clone)]
enum Frozen {
    Uniform { item_count: usize },
    Snapshot(Arc<PolicyModel>),
}

/// The frozen policy deviations are measured against. Exposes no mutation.
#[derive(Debug, Clone)]
pub struct ReferencePolicy {
    frozen: Frozen,
    counter: ForwardCounter,
}

impl ReferencePolicy {
    pub fn uniform(item_count: usize) -> Result<Self> {
        Catalog::new(item_count)?;
        Ok(Self {
            frozen: Frozen::Uniform { item_count },
            counter: ForwardCounter::default(),
        })
    }

    pub fn kind(&self) -> ReferenceKind {
        match self.frozen {
            Frozen::Uniform { .. } => ReferenceKind::Uniform,
            Frozen::Snapshot(_) => ReferenceKind::FrozenSnapshot,
        }
    }

    pub fn snapshot(&self) -> Option<&PolicyModel> {
        match &self.frozen {
            Frozen::Snapshot(p) => Some(p),
            Frozen::Uniform { .. } => None,
        }
    }

    /// Digest of the frozen parameters (0 for the uniform reference).
    pub fn param_digest(&self) -> u64 {
        self.snapshot().map_or(0, |p| param_digest(p.params()))
    }
}

impl LogProbSource for ReferencePolicy {
    fn item_count(&self) -> usize {
        match &self.frozen {
            Frozen::Uniform { item_count } => *item_count,
            Frozen::Snapshot(p) => p.item_count(),
        }
    }

    fn log_probs(&self, ctx: &Context<'_>, items: &[usize]) -> Result<Vec<f64>> {
        match &self.frozen {
            Frozen::Uniform { item_count } => {
                check_items(items, *item_count)?;
                self.counter.add(items.len());
                Ok(vec![-(*item_count as f64).ln(); items.len()])
            }
            Frozen::Snapshot(p) => {
                let out = p.log_probs(ctx, items)?;
                self.counter.add(items.len());
                Ok(out)
            }
        }
    }

    fn forward_evals(&self) -> u64 {
        self.counter.get()
    }

    fn reset_forward_evals(&self) {
        self.counter.reset()
    }
}

/// Deep, immutable copy of `policy`.
pub fn snapshot_reference(policy: &PolicyModel) -> ReferencePolicy {
    let copy = policy.clone();
    copy.reset_forward_evals();
    ReferencePolicy {
        frozen: Frozen::Snapshot(Arc::new(copy)),
        counter: ForwardCounter::default(),
    }
}

pub fn param_digest(params: &[f64]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for p in params {
        p.to_bits().hash(&mut h);
    }
    h.finish()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_items(items: &[usize], item_count: usize) -> Result<()> {
    match items.iter().find(|&&i| i >= item_count) {
        Some(&index) => Err(Error::IndexOutOfRange { index, len: item_count }),
        None => Ok(()),
    }
}

fn check_distinct(items: &[usize]) -> Result<()> {
    for (k, i) in items.iter().enumerate() {
        if items[..k].contains(i) {
            return Err(Error::Config(format!("candidate item {i} requested twice")));
        }
    }
    Ok(())
}

fn normalized(scores: &[f64], items: &[usize], counter: &ForwardCounter) -> Result<Vec<f64>> {
    check_items(items, scores.len())?;
    check_distinct(items)?;
    let lse = log_sum_exp(scores)?;
    counter.add(items.len());
    Ok(items.iter().map(|&i| scores[i] - lse).collect())
}

fn check_grad_shape(items: &[usize], grad_logp: &[f64], grad: &[f64], params: usize) -> Result<()> {
    if grad_logp.len() != items.len() {
        return Err(Error::LengthMismatch {
            expected: items.len(),
            actual: grad_logp.len(),
        });
    }
    if grad.len() != params {
        return Err(Error::LengthMismatch {
            expected: params,
            actual: grad.len(),
        });
    }
    Ok(())
}

/// Gradient w.r.t. full-catalog scores of `Σ_c g_c log softmax(s)[items_c]`:
/// `g_i [i ∈ items] − softmax(s)_i Σ_c g_c`.
fn log_softmax_backward(scores: &[f64], items: &[usize], grad_logp: &[f64]) -> Result<Vec<f64>> {
    check_items(items, scores.len())?;
    check_distinct(items)?;
    let lse = log_sum_exp(scores)?;
    let total: f64 = grad_logp.iter().sum();
    let mut out: Vec<f64> = scores.iter().map(|&s| -(s - lse).exp() * total).collect();
    for (&i, &g) in items.iter().zip(grad_logp) {
        out[i] += g;
    }
    Ok(out)
}

/// The `PALN1` binary layout shared by policy parameters, checkpoints and
/// synthetic ground-truth vectors:
///
/// ```text
/// b"PALN1" | kind: u8 | item_count: u64 LE | dim: u64 LE | f64 LE values, row-major
/// ```
///
/// For tabular policies `dim` holds the number of user rows.
pub mod codec {
    use super::*;

    pub const MAGIC: &[u8; 5] = b"PALN1";

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    #[repr(u8)]
    pub enum Kind {
        EmbeddingMean = 1,
        EmbeddingLast = 2,
        Tabular = 3,
        GroundTruth = 4,
    }

    impl TryFrom<u8> for Kind {
        type Error = Error;

        fn try_from(b: u8) -> Result<Self> {
            Ok(match b {
                1 => Kind::EmbeddingMean,
                2 => Kind::EmbeddingLast,
                3 => Kind::Tabular,
                4 => Kind::GroundTruth,
                other => return Err(Error::Format(format!("unknown policy kind {other}"))),
            })
        }
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Header {
        pub kind: Kind,
        pub item_count: u64,
        pub dim: u64,
    }

    pub fn write_header<W: Write>(w: &mut W, h: Header) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[h.kind as u8])?;
        w.write_all(&h.item_count.to_le_bytes())?;
        w.write_all(&h.dim.to_le_bytes())?;
        Ok(())
    }

    pub fn read_header<R: Read>(r: &mut R) -> Result<Header> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, expected PALN1".into()));
        }
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        Ok(Header {
            kind: Kind::try_from(kind[0])?,
            item_count: read_u64(r)?,
            dim: read_u64(r)?,
        })
    }

    pub fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated payload ({n} values expected): {e}")))?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn write_policy<W: Write>(w: &mut W, policy: &PolicyModel) -> Result<()> {
        let header = match policy {
            PolicyModel::Embedding(p) => Header {
                kind: match p.pooling {
                    Pooling::Mean => Kind::EmbeddingMean,
                    Pooling::Last => Kind::EmbeddingLast,
                },
                item_count: p.item_count as u64,
                dim: p.dim as u64,
            },
            PolicyModel::Tabular(p) => Header {
                kind: Kind::Tabular,
                item_count: p.item_count as u64,
                dim: p.users as u64,
            },
        };
        write_header(w, header)?;
        write_f64s(w, policy.params())
    }

    pub fn read_policy<R: Read>(r: &mut R) -> Result<PolicyModel> {
        let h = read_header(r)?;
        let (items, dim) = (h.item_count as usize, h.dim as usize);
        let values = read_f64s(r, items * dim)?;
        match h.kind {
            Kind::EmbeddingMean => Ok(EmbeddingPolicy::from_embeddings(items, dim, Pooling::Mean, values)?.into()),
            Kind::EmbeddingLast => Ok(EmbeddingPolicy::from_embeddings(items, dim, Pooling::Last, values)?.into()),
            Kind::Tabular => Ok(TabularPolicy::from_logits(dim, items, values)?.into()),
            Kind::GroundTruth => Err(Error::Format("file holds ground-truth vectors, not a policy".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{compute_loss, LogProbTable, LossKind};
    use crate::numerics::{finite_difference_gradient, max_relative_error, DEFAULT_FD_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn user_representation_pooling() {
        let emb = vec![1.0, 2.0, -3.0, 0.5, 0.0, 4.0];
        let mean = EmbeddingPolicy::from_embeddings(3, 2, Pooling::Mean, emb.clone()).unwrap();
        assert_eq!(mean.user_representation(&[1]).unwrap(), vec![-3.0, 0.5]);
        assert_eq!(mean.user_representation(&[1, 1]).unwrap(), vec![-3.0, 0.5]);
        assert_eq!(mean.user_representation(&[0, 2]).unwrap(), vec![0.5, 3.0]);
        let last = EmbeddingPolicy::from_embeddings(3, 2, Pooling::Last, emb).unwrap();
        assert_eq!(last.user_representation(&[0, 2]).unwrap(), vec![0.0, 4.0]);
        let err = mean.user_representation(&[]).unwrap_err();
        assert_eq!(err.to_string(), "cold-start context unsupported: empty history");
        assert!(mean.user_representation(&[3]).is_err());
    }

    #[test]
    fn log_prob_examples() {
        let tab = TabularPolicy::zeros(2, 21).unwrap();
        let lp = tab.log_probs(&Context::new(1, &[]), &[0, 7, 20]).unwrap();
        assert!(lp.iter().all(|&x| (x + 21f64.ln()).abs() < 1e-15));

        let tab = TabularPolicy::from_logits(1, 3, vec![LN_2, 0.0, 0.0]).unwrap();
        let lp = tab.log_probs(&Context::new(0, &[]), &[0, 1, 2]).unwrap();
        for (a, b) in lp.iter().zip([0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()]) {
            assert!((a - b).abs() < 1e-15);
        }

        let emb = EmbeddingPolicy::from_embeddings(2, 1, Pooling::Mean, vec![1.0, 0.0]).unwrap();
        let lp = emb.log_probs(&Context::new(0, &[0]), &[0, 1]).unwrap();
        // -log(1+e^-1) and -1 - log(1+e^-1), 50-digit evaluation
        assert!((lp[0] + 0.313_261_687_518_222_83).abs() < 1e-15);
        assert!((lp[1] + 1.313_261_687_518_222_8).abs() < 1e-15);

        assert!(tab.log_probs(&Context::new(0, &[]), &[3]).is_err());
        assert!(tab.log_probs(&Context::new(0, &[]), &[1, 1]).is_err());
        assert!(tab.log_probs(&Context::new(4, &[]), &[1]).is_err());
    }

    #[test]
    fn normalization_over_full_catalog() {
        let mut r = rng(5);
        let emb = EmbeddingPolicy::init(17, 3, Pooling::Mean, &mut r).unwrap();
        let all: Vec<usize> = (0..17).collect();
        let lp = emb.log_probs(&Context::new(0, &[3, 9, 1]), &all).unwrap();
        assert!(log_sum_exp(&lp).unwrap().abs() < 1e-10);
        let tab = TabularPolicy::from_logits(1, 17, (0..17).map(|i| (i as f64).sin() * 4.0).collect()).unwrap();
        let lp = tab.log_probs(&Context::new(0, &[]), &all).unwrap();
        assert!((lp.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn constant_shift_leaves_log_probs_unchanged() {
        let logits: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).cos()).collect();
        let a = TabularPolicy::from_logits(1, 12, logits.clone()).unwrap();
        let b = TabularPolicy::from_logits(1, 12, logits.iter().map(|x| x + 37.5).collect()).unwrap();
        let items: Vec<usize> = (0..12).collect();
        let ctx = Context::new(0, &[]);
        for (x, y) in a.log_probs(&ctx, &items).unwrap().iter().zip(b.log_probs(&ctx, &items).unwrap()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradient() {
        let emb = EmbeddingPolicy::init(6, 2, Pooling::Mean, &mut rng(1)).unwrap();
        let mut g = vec![0.0; emb.params().len()];
        emb.backprop(&Context::new(0, &[1, 2]), &[0, 3], &[0.0, 0.0], &mut g).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        assert!(emb.backprop(&Context::new(0, &[1]), &[0, 3], &[0.0], &mut g).is_err());
    }

    /// End-to-end loss as a function of the flat parameter vector.
    fn end_to_end(policy: &PolicyModel, reference: &ReferencePolicy, kind: LossKind, beta: f64, ctx: &Context<'_>, items: &[usize]) -> (f64, Vec<f64>) {
        let ref_lp = reference.log_probs(ctx, items).unwrap();
        let lp = policy.log_probs(ctx, items).unwrap();
        let out = compute_loss(kind, &LogProbTable::new(lp, ref_lp, 0).unwrap(), beta).unwrap();
        let mut g = vec![0.0; policy.params().len()];
        policy.backprop(ctx, items, &out.grad_policy_logp, &mut g).unwrap();
        (out.value, g)
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut r = rng(11);
        for trial in 0..50 {
            let items_n = 8 + trial % 12;
            let history = [trial % items_n, (trial * 7 + 3) % items_n];
            let candidates: Vec<usize> = (0..4).map(|c| (c * 5 + trial) % items_n).collect();
            let mut candidates = candidates;
            candidates.dedup();
            if candidates.len() < 2 || candidates.iter().enumerate().any(|(k, c)| candidates[..k].contains(c)) {
                continue;
            }
            let policies: Vec<PolicyModel> = vec![
                EmbeddingPolicy::init(items_n, 2 + 2 * (trial % 2), if trial % 3 == 0 { Pooling::Last } else { Pooling::Mean }, &mut r).unwrap().into(),
                TabularPolicy::from_logits(2, items_n, (0..2 * items_n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()).unwrap().into(),
            ];
            for policy in policies {
                let reference = snapshot_reference(&policy);
                let mut trained = policy.clone();
                for p in trained.params_mut() {
                    *p += r.random::<f64>() * 0.2 - 0.1;
                }
                let ctx = Context::new(1, &history);
                for kind in LossKind::ALL {
                    let (_, analytic) = end_to_end(&trained, &reference, kind, 1.5, &ctx, &candidates);
                    let numeric = finite_difference_gradient(
                        |theta| {
                            let mut probe = trained.clone();
                            probe.params_mut().copy_from_slice(theta);
                            end_to_end(&probe, &reference, kind, 1.5, &ctx, &candidates).0
                        },
                        trained.params(),
                        DEFAULT_FD_STEP,
                    )
                    .unwrap();
                    let (err, at) = max_relative_error(&analytic, &numeric, 1e-3);
                    assert!(err <= 1e-6, "trial {trial} {kind}: err {err} at {at}");
                }
            }
        }
    }

    #[test]
    fn snapshot_is_immutable_and_rewards_start_at_zero() {
        let mut policy: PolicyModel = EmbeddingPolicy::init(10, 3, Pooling::Mean, &mut rng(2)).unwrap().into();
        let reference = snapshot_reference(&policy);
        let ctx = Context::new(0, &[1, 4]);
        let items: Vec<usize> = (0..10).collect();
        let before = reference.log_probs(&ctx, &items).unwrap();
        let digest = reference.param_digest();
        let now = policy.log_probs(&ctx, &items).unwrap();
        assert!(before.iter().zip(&now).all(|(a, b)| crate::losses::implicit_reward(*b, *a, 1.0) == 0.0));
        for step in 0..100 {
            let mut g = vec![0.0; policy.params().len()];
            policy.backprop(&ctx, &[step % 10], &[-1.0], &mut g).unwrap();
            for (p, gi) in policy.params_mut().iter_mut().zip(&g) {
                *p -= 0.1 * gi;
            }
        }
        let after = reference.log_probs(&ctx, &items).unwrap();
        assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(reference.param_digest(), digest);
        assert_ne!(param_digest(policy.params()), digest);

        let uniform = ReferencePolicy::uniform(13).unwrap();
        assert!(uniform.log_probs(&ctx, &[0, 12]).unwrap().iter().all(|&x| x == -(13f64.ln())));
        assert_eq!(uniform.kind(), ReferenceKind::Uniform);
    }

    #[test]
    fn forward_counter_counts_requested_items() {
        let policy: PolicyModel = TabularPolicy::zeros(1, 5).unwrap().into();
        let ctx = Context::new(0, &[]);
        policy.log_probs(&ctx, &[0, 1, 2]).unwrap();
        policy.log_probs(&ctx, &[4]).unwrap();
        assert_eq!(policy.forward_evals(), 4);
        let reference = snapshot_reference(&policy);
        assert_eq!(reference.forward_evals(), 0);
        reference.log_probs(&ctx, &[0, 1]).unwrap();
        assert_eq!(reference.forward_evals(), 2);
        assert_eq!(reference.snapshot().unwrap().forward_evals(), 2);
        policy.reset_forward_evals();
        assert_eq!(policy.forward_evals(), 0);
    }

    #[test]
    fn binary_round_trip() {
        for policy in [
            PolicyModel::from(EmbeddingPolicy::init(7, 3, Pooling::Last, &mut rng(3)).unwrap()),
            PolicyModel::from(TabularPolicy::from_logits(2, 4, (0..8).map(|i| i as f64 * -0.3).collect()).unwrap()),
        ] {
            let mut buf = Vec::new();
            codec::write_policy(&mut buf, &policy).unwrap();
            assert_eq!(&buf[..5], b"PALN1");
            assert_eq!(buf.len(), 5 + 1 + 16 + 8 * policy.params().len());
            let back = codec::read_policy(&mut buf.as_slice()).unwrap();
            assert_eq!(back.params(), policy.params());
            let ctx = Context::new(1, &[2]);
            assert_eq!(back.log_probs(&ctx, &[0, 3]).unwrap(), policy.log_probs(&ctx, &[0, 3]).unwrap());
        }
        assert!(codec::read_policy(&mut &b"PALN2xxxxxxxxxxxxxxxx"[..]).is_err());
    }
}
