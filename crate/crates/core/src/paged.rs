//! Paged-KV sparse decode simulator with IO-count accounting.
//!
//! Keys and values live in fixed-size pages behind a block table, as in a
//! production paged KV cache. A decode runs page routing (score all page
//! summaries, keep the top `P`), token routing (score the keys of the routed
//! pages, keep the top `K_c`), a convex weight solve on the candidates, and
//! a weighted value gather.
//!
//! Costs are counted in vector reads, one per `d`-dimensional row touched;
//! wall-clock is hardware-bound and out of scope. At fixed `(P, K_c, B_sz)`
//! the sparse read counts are independent of the context length `T`, while
//! the dense baseline reads all `T` keys and values.
//!
//! The candidate weight solve is the entropic solution of the linearized
//! score objective, i.e. softmax of `<q, k_i>` at temperature `epsilon`,
//! matching the dense baseline restricted to the candidate set. That makes
//! the sparse path degenerate to the dense one when the candidates cover
//! everything, and bounds the sparse-vs-dense readout deviation by the
//! dense mass escaping the candidate set. The `eg` solver reaches the
//! solution by damped mirror-descent iterations, the `fw` solver by a
//! linear-oracle screen plus an entropic tilt; both paths report their
//! iteration counts.

use nalgebra::DVector;
use thiserror::Error;

use crate::dict::Dictionary;
use crate::report::{fmt_f64, CsvTable};

#[derive(Debug, Error)]
pub enum PagedError {
    #[error("keys and values disagree: {0}")]
    DimensionMismatch(String),
    #[error("cache must contain at least one token")]
    Empty,
    #[error("block size must be >= 1")]
    BadBlockSize,
    #[error("block table is not a bijection over {0} slots")]
    BadBlockTable(usize),
    #[error("invalid routing config: {0}")]
    BadConfig(String),
    #[error("workload of {need} bytes exceeds the memory budget of {budget} bytes")]
    MemoryBudget { need: usize, budget: usize },
    #[error(transparent)]
    Dict(#[from] crate::dict::DictError),
}

/// Block-structured key/value storage with per-page mean summaries.
#[derive(Debug, Clone)]
pub struct PagedKvCache {
    keys: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
    value_dim: usize,
    tokens: usize,
    block_size: usize,
    /// Logical page index -> mean of that page's keys.
    page_summaries: Vec<f64>,
    /// Logical block index -> physical page slot.
    block_table: Vec<usize>,
}

impl PagedKvCache {
    /// Build with an identity block table.
    pub fn build(
        keys: &[Vec<f64>],
        values: &[Vec<f64>],
        block_size: usize,
    ) -> Result<Self, PagedError> {
        let pages = keys.len().div_ceil(block_size.max(1));
        Self::build_with_table(keys, values, block_size, (0..pages).collect())
    }

    /// Build with an explicit logical-to-physical page mapping.
    pub fn build_with_table(
        keys: &[Vec<f64>],
        values: &[Vec<f64>],
        block_size: usize,
        block_table: Vec<usize>,
    ) -> Result<Self, PagedError> {
        if keys.is_empty() {
            return Err(PagedError::Empty);
        }
        if block_size == 0 {
            return Err(PagedError::BadBlockSize);
        }
        if keys.len() != values.len() {
            return Err(PagedError::DimensionMismatch(format!(
                "{} key rows vs {} value rows",
                keys.len(),
                values.len()
            )));
        }
        let dim = keys[0].len();
        let value_dim = values[0].len();
        if dim == 0 || value_dim == 0 {
            return Err(PagedError::DimensionMismatch("zero-width rows".into()));
        }
        let tokens = keys.len();
        let pages = tokens.div_ceil(block_size);
        {
            let mut seen = vec![false; pages];
            if block_table.len() != pages {
                return Err(PagedError::BadBlockTable(pages));
            }
            for &slot in &block_table {
                if slot >= pages || seen[slot] {
                    return Err(PagedError::BadBlockTable(pages));
                }
                seen[slot] = true;
            }
        }

        // Physical storage laid out slot-major.
        let mut phys_keys = vec![0.0; pages * block_size * dim];
        let mut phys_values = vec![0.0; pages * block_size * value_dim];
        for (logical, row) in keys.iter().enumerate() {
            if row.len() != dim {
                return Err(PagedError::DimensionMismatch(format!(
                    "key row {logical} has width {}, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(PagedError::DimensionMismatch(format!(
                    "key row {logical} has a non-finite entry"
                )));
            }
            let slot = block_table[logical / block_size];
            let off = logical % block_size;
            let base = (slot * block_size + off) * dim;
            phys_keys[base..base + dim].copy_from_slice(row);
        }
        for (logical, row) in values.iter().enumerate() {
            if row.len() != value_dim {
                return Err(PagedError::DimensionMismatch(format!(
                    "value row {logical} has width {}, expected {value_dim}",
                    row.len()
                )));
            }
            let slot = block_table[logical / block_size];
            let off = logical % block_size;
            let base = (slot * block_size + off) * value_dim;
            phys_values[base..base + value_dim].copy_from_slice(row);
        }

        // Page summaries: the mean key of each logical page, partial last
        // page averaged over its occupancy.
        let mut page_summaries = vec![0.0; pages * dim];
        for p in 0..pages {
            let start = p * block_size;
            let end = (start + block_size).min(tokens);
            let occ = (end - start) as f64;
            for t in start..end {
                for (c, &x) in keys[t].iter().enumerate() {
                    page_summaries[p * dim + c] += x / occ;
                }
            }
        }

        Ok(Self {
            keys: phys_keys,
            values: phys_values,
            dim,
            value_dim,
            tokens,
            block_size,
            page_summaries,
            block_table,
        })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_pages(&self) -> usize {
        self.tokens.div_ceil(self.block_size)
    }

    pub fn page_occupancy(&self, page: usize) -> usize {
        let start = page * self.block_size;
        (self.tokens - start).min(self.block_size)
    }

    pub fn summary_row(&self, page: usize) -> &[f64] {
        &self.page_summaries[page * self.dim..(page + 1) * self.dim]
    }

    pub fn key_row(&self, token: usize) -> &[f64] {
        let slot = self.block_table[token / self.block_size];
        let base = (slot * self.block_size + token % self.block_size) * self.dim;
        &self.keys[base..base + self.dim]
    }

    pub fn value_row(&self, token: usize) -> &[f64] {
        let slot = self.block_table[token / self.block_size];
        let base = (slot * self.block_size + token % self.block_size) * self.value_dim;
        &self.values[base..base + self.value_dim]
    }

    /// Export keys and values in the FSTB binary layout.
    pub fn export_fstb(&self, path: &std::path::Path) -> Result<(), PagedError> {
        let keys: Vec<Vec<f64>> = (0..self.tokens).map(|t| self.key_row(t).to_vec()).collect();
        let values: Vec<Vec<f64>> = (0..self.tokens).map(|t| self.value_row(t).to_vec()).collect();
        let dict = Dictionary::from_rows(&keys)?;
        dict.write_fstb(path, Some(&values))?;
        Ok(())
    }

    pub fn import_fstb(path: &std::path::Path, block_size: usize) -> Result<Self, PagedError> {
        let (dict, values) = Dictionary::read_fstb(path)?;
        let keys: Vec<Vec<f64>> = (0..dict.m_count())
            .map(|j| dict.atom(j).iter().copied().collect())
            .collect();
        let values = values.ok_or_else(|| {
            PagedError::DimensionMismatch("FSTB file has no value section".into())
        })?;
        Self::build(&keys, &values, block_size)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Top-`k` indices by score, ties broken by lower index.
fn top_k(scores: &[(usize, f64)], k: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .1
            .partial_cmp(&scores[a].1)
            .unwrap()
            .then(scores[a].0.cmp(&scores[b].0))
    });
    order.truncate(k);
    let mut out: Vec<(usize, f64)> = order.into_iter().map(|i| scores[i]).collect();
    out.sort_by_key(|&(idx, _)| idx);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeSolver {
    Eg,
    Fw,
}

impl DecodeSolver {
    pub fn name(&self) -> &'static str {
        match self {
            DecodeSolver::Eg => "eg",
            DecodeSolver::Fw => "fw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackPolicy {
    FallbackToDense,
    CapCompute,
}

#[derive(Debug, Clone)]
pub struct RoutingConfig {
    pub pages_p: usize,
    pub candidates_kc: usize,
    pub solver: DecodeSolver,
    pub epsilon: f64,
    pub solver_iters: usize,
    /// Absolute gap-diagnostic threshold; `None` uses the scale-relative
    /// default `0.05 * std(candidate scores)`.
    pub fallback_tau: Option<f64>,
    pub policy: FallbackPolicy,
}

impl RoutingConfig {
    pub fn new(pages_p: usize, candidates_kc: usize, epsilon: f64) -> Self {
        Self {
            pages_p,
            candidates_kc,
            solver: DecodeSolver::Eg,
            epsilon,
            solver_iters: 10_000,
            fallback_tau: None,
            policy: FallbackPolicy::CapCompute,
        }
    }

    fn validate(&self, cache: &PagedKvCache) -> Result<(usize, usize), PagedError> {
        if self.pages_p == 0 || self.candidates_kc == 0 {
            return Err(PagedError::BadConfig("P and K_c must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(PagedError::BadConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        // P larger than the page count is clamped.
        let p = self.pages_p.min(cache.num_pages());
        if self.candidates_kc > self.pages_p * cache.block_size() {
            return Err(PagedError::BadConfig(format!(
                "K_c = {} exceeds P * B_sz = {}",
                self.candidates_kc,
                self.pages_p * cache.block_size()
            )));
        }
        Ok((p, self.candidates_kc))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Dense,
    Sparse,
}

impl DecodeMode {
    pub fn name(&self) -> &'static str {
        match self {
            DecodeMode::Dense => "dense",
            DecodeMode::Sparse => "sparse",
        }
    }
}

/// Per-decode IO counters and diagnostics. A read is one vector row
/// touched: summaries during page routing, keys during token scoring,
/// values during the gather.
#[derive(Debug, Clone)]
pub struct DecodeStats {
    pub summary_reads: usize,
    pub token_key_reads: usize,
    pub value_reads: usize,
    pub solver_iterations: usize,
    /// Top-two score gap over the scored candidates (`nan` when fewer than
    /// two scores exist).
    pub gap_diag: f64,
    pub used_fallback: bool,
    pub mode: DecodeMode,
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub readout: Vec<f64>,
    /// Sparse token-index -> weight map, sorted by token index.
    pub weights: Vec<(usize, f64)>,
    pub stats: DecodeStats,
}

/// Top-two score gap `s_(1) - s_(2)`; undefined for fewer than two scores.
pub fn gap_diagnostic(scores: &[f64]) -> Option<f64> {
    if scores.len() < 2 {
        return None;
    }
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &s in scores {
        if s > best {
            second = best;
            best = s;
        } else if s > second {
            second = s;
        }
    }
    Some(best - second)
}

/// Pages with the `P` largest summary scores, ties to the lower index,
/// in descending score order. Also returns the summary read count.
pub fn route_pages(cache: &PagedKvCache, q: &DVector<f64>, p: usize) -> (Vec<usize>, usize) {
    let pages = cache.num_pages();
    let scored: Vec<(usize, f64)> = (0..pages)
        .map(|pg| (pg, dot(cache.summary_row(pg), q.as_slice())))
        .collect();
    let mut top = top_k(&scored, p.min(pages));
    top.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    (top.into_iter().map(|(pg, _)| pg).collect(), pages)
}

/// Top-`K_c` tokens by key score among the routed pages, returned with
/// their scores sorted by token index, plus the key read count.
pub fn route_tokens(
    cache: &PagedKvCache,
    page_list: &[usize],
    q: &DVector<f64>,
    kc: usize,
) -> (Vec<(usize, f64)>, usize) {
    let mut scored = Vec::new();
    let mut reads = 0usize;
    for &pg in page_list {
        let start = pg * cache.block_size();
        let end = (start + cache.block_size()).min(cache.tokens());
        for tok in start..end {
            scored.push((tok, dot(cache.key_row(tok), q.as_slice())));
            reads += 1;
        }
    }
    (top_k(&scored, kc.min(scored.len())), reads)
}

/// Candidate weights: entropic solution of the linearized score objective
/// at temperature `epsilon`. Returns (weights, iterations).
fn solve_candidate_weights(
    scores: &[f64],
    epsilon: f64,
    solver: DecodeSolver,
    max_iters: usize,
) -> (Vec<f64>, usize) {
    let n = scores.len();
    if n == 1 {
        return (vec![1.0], 0);
    }
    let scale = scores.iter().fold(0.0f64, |a, s| a.max(s.abs())).max(1.0);
    let gap_tol = 1e-12 * scale;
    match solver {
        DecodeSolver::Eg => {
            // Damped multiplicative updates: log-weights contract toward
            // s/eps at rate 1/2 per iteration.
            let mut l = vec![-(n as f64).ln(); n];
            let eta = 0.5 / epsilon;
            let mut iters = 0;
            for _ in 0..max_iters {
                let alpha: Vec<f64> = l.iter().map(|x| x.exp()).collect();
                let grad: Vec<f64> = scores
                    .iter()
                    .zip(&l)
                    .map(|(s, li)| -s + epsilon * (1.0 + li))
                    .collect();
                let inner: f64 = grad.iter().zip(&alpha).map(|(g, a)| g * a).sum();
                let min_g = grad.iter().cloned().fold(f64::INFINITY, f64::min);
                if inner - min_g <= gap_tol {
                    break;
                }
                for (li, g) in l.iter_mut().zip(&grad) {
                    *li -= eta * g;
                }
                let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + l.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                for li in l.iter_mut() {
                    *li -= lse;
                }
                iters += 1;
            }
            let mut w: Vec<f64> = l.iter().map(|x| x.exp()).collect();
            let z: f64 = w.iter().sum();
            for wi in w.iter_mut() {
                *wi /= z;
            }
            (w, iters)
        }
        DecodeSolver::Fw => {
            // Linear objective: the vertex oracle lands on the argmax score
            // immediately; the entropic tilt on that support is the softmax.
            let w = crate::entropic::softmax_weights(scores, epsilon);
            (w, 1)
        }
    }
}

/// Full softmax attention over every token.
pub fn dense_decode(cache: &PagedKvCache, q: &DVector<f64>, epsilon: f64) -> DecodeOutput {
    let t = cache.tokens();
    let scores: Vec<f64> = (0..t).map(|tok| dot(cache.key_row(tok), q.as_slice())).collect();
    let w = crate::entropic::softmax_weights(&scores, epsilon);
    let mut readout = vec![0.0; cache.value_dim()];
    for (tok, &wi) in w.iter().enumerate() {
        for (c, &v) in cache.value_row(tok).iter().enumerate() {
            readout[c] += wi * v;
        }
    }
    let gap = gap_diagnostic(&scores).unwrap_or(f64::NAN);
    DecodeOutput {
        readout,
        weights: w.into_iter().enumerate().collect(),
        stats: DecodeStats {
            summary_reads: 0,
            token_key_reads: t,
            value_reads: t,
            solver_iterations: 0,
            gap_diag: gap,
            used_fallback: false,
            mode: DecodeMode::Dense,
        },
    }
}

/// Routed sparse decode: page routing, token routing, candidate weight
/// solve, value gather.
pub fn sparse_decode(
    cache: &PagedKvCache,
    q: &DVector<f64>,
    config: &RoutingConfig,
) -> Result<DecodeOutput, PagedError> {
    let (p, kc) = config.validate(cache)?;
    let (pages, summary_reads) = route_pages(cache, q, p);
    let (candidates, key_reads) = route_tokens(cache, &pages, q, kc);
    let scores: Vec<f64> = candidates.iter().map(|&(_, s)| s).collect();
    let gap = gap_diagnostic(&scores).unwrap_or(f64::NAN);
    let (w, iters) =
        solve_candidate_weights(&scores, config.epsilon, config.solver, config.solver_iters);
    let mut readout = vec![0.0; cache.value_dim()];
    let mut weights = Vec::with_capacity(candidates.len());
    for (&(tok, _), &wi) in candidates.iter().zip(&w) {
        for (c, &v) in cache.value_row(tok).iter().enumerate() {
            readout[c] += wi * v;
        }
        weights.push((tok, wi));
    }
    Ok(DecodeOutput {
        readout,
        weights,
        stats: DecodeStats {
            summary_reads,
            token_key_reads: key_reads,
            value_reads: candidates.len(),
            solver_iterations: iters,
            gap_diag: gap,
            used_fallback: false,
            mode: DecodeMode::Sparse,
        },
    })
}

/// Sparse decode guarded by the gap diagnostic. Under `FallbackToDense`,
/// a candidate gap below tau reverts to the dense path (the routing cost
/// stays visible in `summary_reads`; dense token reads equal `T`).
pub fn decode_with_fallback(
    cache: &PagedKvCache,
    q: &DVector<f64>,
    config: &RoutingConfig,
) -> Result<DecodeOutput, PagedError> {
    let (p, kc) = config.validate(cache)?;
    let (pages, summary_reads) = route_pages(cache, q, p);
    let (candidates, key_reads) = route_tokens(cache, &pages, q, kc);
    let scores: Vec<f64> = candidates.iter().map(|&(_, s)| s).collect();
    let gap = gap_diagnostic(&scores).unwrap_or(f64::NAN);

    let tau = config.fallback_tau.unwrap_or_else(|| {
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        0.05 * var.sqrt()
    });

    if config.policy == FallbackPolicy::FallbackToDense && gap < tau {
        let mut out = dense_decode(cache, q, config.epsilon);
        out.stats.summary_reads = summary_reads;
        out.stats.gap_diag = gap;
        out.stats.used_fallback = true;
        return Ok(out);
    }

    let (w, iters) =
        solve_candidate_weights(&scores, config.epsilon, config.solver, config.solver_iters);
    let mut readout = vec![0.0; cache.value_dim()];
    let mut weights = Vec::with_capacity(candidates.len());
    for (&(tok, _), &wi) in candidates.iter().zip(&w) {
        for (c, &v) in cache.value_row(tok).iter().enumerate() {
            readout[c] += wi * v;
        }
        weights.push((tok, wi));
    }
    Ok(DecodeOutput {
        readout,
        weights,
        stats: DecodeStats {
            summary_reads,
            token_key_reads: key_reads,
            value_reads: candidates.len(),
            solver_iterations: iters,
            gap_diag: gap,
            used_fallback: false,
            mode: DecodeMode::Sparse,
        },
    })
}

fn l2_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub context: usize,
    pub dense_token_reads: usize,
    pub sparse_token_reads: usize,
    pub sparse_value_reads: usize,
    pub summary_reads: usize,
    pub readout_dev: f64,
    pub gap_diag: f64,
}

#[derive(Debug, Clone)]
pub struct ScalingConfig {
    pub routing: RoutingConfig,
    pub block_size: usize,
    pub dim: usize,
    pub value_dim: usize,
    pub queries: usize,
    pub face_size: usize,
    pub gap_target: f64,
    pub seed: u64,
    pub memory_budget_bytes: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            routing: RoutingConfig::new(64, 128, 0.05),
            block_size: 64,
            dim: 64,
            value_dim: 64,
            queries: 4,
            face_size: 8,
            gap_target: 1.0,
            seed: 0,
            memory_budget_bytes: 4 << 30,
        }
    }
}

/// Dense-vs-sparse read counts over a context-length grid on planted
/// workloads. One row per context; the deviation and gap columns average
/// over the configured number of queries.
pub fn scaling_experiment(
    t_grid: &[usize],
    config: &ScalingConfig,
) -> Result<Vec<ScalingRow>, PagedError> {
    let mut rows = Vec::with_capacity(t_grid.len());
    for (gi, &t) in t_grid.iter().enumerate() {
        let need = t * (config.dim + config.value_dim) * 8;
        if need > config.memory_budget_bytes {
            return Err(PagedError::MemoryBudget {
                need,
                budget: config.memory_budget_bytes,
            });
        }
        let cache_spec = crate::instances::PlantedCacheParams {
            tokens: t,
            dim: config.dim,
            value_dim: config.value_dim,
            face_size: config.face_size,
            gap_target: config.gap_target,
            face_page: 0,
            block_size: config.block_size,
            adversarial: false,
        };
        let mut dense_reads = 0usize;
        let mut sparse_reads = 0usize;
        let mut value_reads = 0usize;
        let mut summary_reads = 0usize;
        let mut dev_sum = 0.0f64;
        let mut gap_sum = 0.0f64;
        for qi in 0..config.queries.max(1) {
            let planted = crate::instances::plant_cache(
                &cache_spec,
                config.seed,
                (gi * 1000 + qi) as u64,
            )
            .map_err(|e| PagedError::BadConfig(e.to_string()))?;
            let cache = PagedKvCache::build(&planted.keys, &planted.values, config.block_size)?;
            let dense = dense_decode(&cache, &planted.query, config.routing.epsilon);
            let sparse = sparse_decode(&cache, &planted.query, &config.routing)?;
            dense_reads = dense.stats.token_key_reads;
            sparse_reads = sparse.stats.token_key_reads;
            value_reads = sparse.stats.value_reads;
            summary_reads = sparse.stats.summary_reads;
            dev_sum += l2_dev(&dense.readout, &sparse.readout);
            gap_sum += sparse.stats.gap_diag;
        }
        let nq = config.queries.max(1) as f64;
        rows.push(ScalingRow {
            context: t,
            dense_token_reads: dense_reads,
            sparse_token_reads: sparse_reads,
            sparse_value_reads: value_reads,
            summary_reads,
            readout_dev: dev_sum / nq,
            gap_diag: gap_sum / nq,
        });
    }
    Ok(rows)
}

pub fn scaling_csv(rows: &[ScalingRow]) -> CsvTable {
    let mut table = CsvTable::new(&[
        "context",
        "dense_token_reads",
        "sparse_token_reads",
        "sparse_value_reads",
        "summary_reads",
        "readout_dev",
        "gap_diag",
    ]);
    for r in rows {
        table.push_row(vec![
            r.context.to_string(),
            r.dense_token_reads.to_string(),
            r.sparse_token_reads.to_string(),
            r.sparse_value_reads.to_string(),
            r.summary_reads.to_string(),
            fmt_f64(r.readout_dev),
            fmt_f64(r.gap_diag),
        ]);
    }
    table
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub pages_p: usize,
    pub candidates_kc: usize,
    pub solver: DecodeSolver,
    pub token_reads: usize,
    pub value_reads: usize,
    pub solver_iters: usize,
    pub readout_dev: f64,
}

/// Read counts and solver iterations over a `(P, K_c, solver)` grid at a
/// fixed context length.
pub fn ablation_experiment(
    p_grid: &[usize],
    kc_grid: &[usize],
    solvers: &[DecodeSolver],
    t: usize,
    config: &ScalingConfig,
) -> Result<Vec<AblationRow>, PagedError> {
    if p_grid.is_empty() || kc_grid.is_empty() || solvers.is_empty() {
        return Err(PagedError::BadConfig("ablation grids must be nonempty".into()));
    }
    let need = t * (config.dim + config.value_dim) * 8;
    if need > config.memory_budget_bytes {
        return Err(PagedError::MemoryBudget {
            need,
            budget: config.memory_budget_bytes,
        });
    }
    let planted = crate::instances::plant_cache(
        &crate::instances::PlantedCacheParams {
            tokens: t,
            dim: config.dim,
            value_dim: config.value_dim,
            face_size: config.face_size,
            gap_target: config.gap_target,
            face_page: 0,
            block_size: config.block_size,
            adversarial: false,
        },
        config.seed,
        0,
    )
    .map_err(|e| PagedError::BadConfig(e.to_string()))?;
    let cache = PagedKvCache::build(&planted.keys, &planted.values, config.block_size)?;
    let dense = dense_decode(&cache, &planted.query, config.routing.epsilon);

    let mut rows = Vec::new();
    for solver in solvers {
        for &p in p_grid {
            for &kc in kc_grid {
                let routing = RoutingConfig {
                    pages_p: p,
                    candidates_kc: kc,
                    solver: *solver,
                    ..config.routing.clone()
                };
                let sparse = sparse_decode(&cache, &planted.query, &routing)?;
                rows.push(AblationRow {
                    pages_p: p,
                    candidates_kc: kc,
                    solver: *solver,
                    token_reads: sparse.stats.token_key_reads,
                    value_reads: sparse.stats.value_reads,
                    solver_iters: sparse.stats.solver_iterations,
                    readout_dev: l2_dev(&dense.readout, &sparse.readout),
                });
            }
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> CsvTable {
    let mut table = CsvTable::new(&[
        "P",
        "Kc",
        "solver",
        "token_reads",
        "value_reads",
        "solver_iters",
        "readout_dev",
    ]);
    for r in rows {
        table.push_row(vec![
            r.pages_p.to_string(),
            r.candidates_kc.to_string(),
            r.solver.name().to_string(),
            r.token_reads.to_string(),
            r.value_reads.to_string(),
            r.solver_iters.to_string(),
            fmt_f64(r.readout_dev),
        ]);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{plant_cache, plant_tie_cache, PlantedCacheParams};
    use crate::rng::{normal_vec, stream_rng};

    fn rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| normal_vec(&mut rng, d)).collect()
    }

    #[test]
    fn summaries_are_page_means() {
        let keys = vec![vec![1.0, 0.0], vec![3.0, 2.0], vec![5.0, 4.0], vec![7.0, 6.0]];
        let vals = vec![vec![0.0]; 4];
        let cache = PagedKvCache::build(&keys, &vals, 2).unwrap();
        assert_eq!(cache.num_pages(), 2);
        assert_eq!(cache.summary_row(0), &[2.0, 1.0]);
        assert_eq!(cache.summary_row(1), &[6.0, 5.0]);
    }

    #[test]
    fn partial_last_page_averages_over_occupancy() {
        let keys: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let vals = vec![vec![0.0]; 5];
        let cache = PagedKvCache::build(&keys, &vals, 2).unwrap();
        assert_eq!(cache.num_pages(), 3);
        assert_eq!(cache.page_occupancy(2), 1);
        assert_eq!(cache.summary_row(2), &[4.0]);
    }

    #[test]
    fn random_summaries_match_naive_means() {
        let keys = rows(1024, 8, 3);
        let vals = rows(1024, 4, 4);
        let cache = PagedKvCache::build(&keys, &vals, 16).unwrap();
        assert_eq!(cache.num_pages(), 64);
        for p in 0..64 {
            for c in 0..8 {
                let mean: f64 = (0..16).map(|i| keys[p * 16 + i][c]).sum::<f64>() / 16.0;
                assert!((cache.summary_row(p)[c] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_table_indirection_preserves_rows() {
        let keys = rows(64, 4, 9);
        let vals = rows(64, 4, 10);
        let table = vec![3, 0, 2, 1];
        let cache = PagedKvCache::build_with_table(&keys, &vals, 16, table).unwrap();
        for t in 0..64 {
            assert_eq!(cache.key_row(t), keys[t].as_slice());
            assert_eq!(cache.value_row(t), vals[t].as_slice());
        }
    }

    #[test]
    fn bad_block_tables_are_rejected() {
        let keys = rows(32, 4, 1);
        let vals = rows(32, 4, 2);
        assert!(matches!(
            PagedKvCache::build_with_table(&keys, &vals, 16, vec![0, 0]),
            Err(PagedError::BadBlockTable(2))
        ));
        assert!(matches!(
            PagedKvCache::build(&keys, &rows(31, 4, 2), 16),
            Err(PagedError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn route_pages_breaks_ties_toward_lower_index() {
        // Page-constant keys make the summaries explicit; pages 3 and 7 tie.
        let mut keys = Vec::new();
        for p in 0..8 {
            let v = if p == 3 || p == 7 { 10.0 } else { p as f64 * 0.1 };
            for _ in 0..4 {
                keys.push(vec![v]);
            }
        }
        let vals = vec![vec![0.0]; 32];
        let cache = PagedKvCache::build(&keys, &vals, 4).unwrap();
        let (pages, reads) = route_pages(&cache, &DVector::from_vec(vec![1.0]), 1);
        assert_eq!(pages, vec![3]);
        assert_eq!(reads, 8);
        // Single-page cache routes to that page.
        let cache1 = PagedKvCache::build(&keys[..4], &vals[..4], 4).unwrap();
        let (pages, _) = route_pages(&cache1, &DVector::from_vec(vec![1.0]), 3);
        assert_eq!(pages, vec![0]);
    }

    #[test]
    fn planted_face_page_ranks_first() {
        let planted = plant_cache(
            &PlantedCacheParams {
                tokens: 2048,
                dim: 32,
                value_dim: 8,
                face_size: 2,
                gap_target: 0.5,
                face_page: 7,
                block_size: 64,
                ..Default::default()
            },
            19,
            0,
        )
        .unwrap();
        let cache = PagedKvCache::build(&planted.keys, &planted.values, 64).unwrap();
        let (pages, _) = route_pages(&cache, &planted.query, 4);
        assert_eq!(pages[0], 7, "face page must rank first, got {pages:?}");
    }

    #[test]
    fn scaling_respects_memory_budget() {
        let cfg = ScalingConfig {
            memory_budget_bytes: 1024,
            ..Default::default()
        };
        assert!(matches!(
            scaling_experiment(&[8192], &cfg),
            Err(PagedError::MemoryBudget { .. })
        ));
    }

    #[test]
    fn route_tokens_selects_planted_face() {
        let planted = plant_cache(
            &PlantedCacheParams {
                tokens: 256,
                dim: 16,
                value_dim: 8,
                face_size: 4,
                gap_target: 0.8,
                block_size: 32,
                ..Default::default()
            },
            21,
            0,
        )
        .unwrap();
        let cache = PagedKvCache::build(&planted.keys, &planted.values, 32).unwrap();
        let (pages, _) = route_pages(&cache, &planted.query, 8);
        let (cands, reads) = route_tokens(&cache, &pages, &planted.query, 16);
        assert_eq!(reads, 8 * 32);
        let cand_tokens: Vec<usize> = cands.iter().map(|&(t, _)| t).collect();
        for tok in &planted.face_tokens {
            assert!(cand_tokens.contains(tok), "face token {tok} not routed");
        }
        // K_c = 1 selects the argmax token.
        let (one, _) = route_tokens(&cache, &pages, &planted.query, 1);
        assert_eq!(one.len(), 1);
        // K_c beyond availability returns everything routed.
        let (all, _) = route_tokens(&cache, &pages, &planted.query, 10_000);
        assert_eq!(all.len(), 8 * 32);
    }

    #[test]
    fn dense_decode_matches_naive_reference() {
        let keys = rows(256, 8, 5);
        let vals = rows(256, 8, 6);
        let cache = PagedKvCache::build(&keys, &vals, 16).unwrap();
        let q = DVector::from_vec(normal_vec(&mut stream_rng(7, 0), 8));
        let eps = 0.7;
        let out = dense_decode(&cache, &q, eps);
        // Naive reference.
        let scores: Vec<f64> = keys.iter().map(|k| dot(k, q.as_slice())).collect();
        let maxs = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let expw: Vec<f64> = scores.iter().map(|s| ((s - maxs) / eps).exp()).collect();
        let z: f64 = expw.iter().sum();
        let mut want = [0.0; 8];
        for (i, w) in expw.iter().enumerate() {
            for c in 0..8 {
                want[c] += w / z * vals[i][c];
            }
        }
        for c in 0..8 {
            assert!((out.readout[c] - want[c]).abs() < 1e-12);
        }
        assert_eq!(out.stats.token_key_reads, 256);
        assert_eq!(out.stats.value_reads, 256);
    }

    #[test]
    fn single_token_gets_unit_weight() {
        let cache = PagedKvCache::build(&[vec![1.0, 2.0]], &[vec![3.0]], 4).unwrap();
        let out = dense_decode(&cache, &DVector::from_vec(vec![1.0, 0.0]), 1.0);
        assert_eq!(out.weights, vec![(0, 1.0)]);
        assert_eq!(out.readout, vec![3.0]);
        assert!(out.stats.gap_diag.is_nan());
    }

    #[test]
    fn gap_diagnostic_examples() {
        assert_eq!(gap_diagnostic(&[3.0, 1.0, 0.0]), Some(2.0));
        assert_eq!(gap_diagnostic(&[1.0, 1.0, 1.0]), Some(0.0));
        assert_eq!(gap_diagnostic(&[1.0]), None);
    }

    #[test]
    fn sparse_equals_dense_when_candidates_cover_everything() {
        let keys = rows(64, 8, 11);
        let vals = rows(64, 8, 12);
        let cache = PagedKvCache::build(&keys, &vals, 64).unwrap();
        let q = DVector::from_vec(normal_vec(&mut stream_rng(13, 0), 8));
        let eps = 0.3;
        let dense = dense_decode(&cache, &q, eps);
        for solver in [DecodeSolver::Eg, DecodeSolver::Fw] {
            let mut cfg = RoutingConfig::new(1, 64, eps);
            cfg.solver = solver;
            let sparse = sparse_decode(&cache, &q, &cfg).unwrap();
            let dev = l2_dev(&dense.readout, &sparse.readout);
            assert!(dev <= 1e-8, "{:?}: dev {dev}", solver);
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let planted = plant_cache(&PlantedCacheParams::default(), 3, 0).unwrap();
        let cache = PagedKvCache::build(&planted.keys, &planted.values, 64).unwrap();
        let cfg = RoutingConfig::new(16, 64, 0.2);
        let out = sparse_decode(&cache, &planted.query, &cfg).unwrap();
        let sum: f64 = out.weights.iter().map(|&(_, w)| w).sum();
        assert!((sum - 1.0).abs() <= 1e-8);
        for &(_, w) in &out.weights {
            assert!(w >= 0.0);
        }
    }

    #[test]
    fn fallback_triggers_on_ties_and_matches_dense_exactly() {
        let cache_data = plant_tie_cache(256, 16, 32, 17);
        let cache = PagedKvCache::build(&cache_data.keys, &cache_data.values, 32).unwrap();
        let mut cfg = RoutingConfig::new(8, 64, 0.2);
        cfg.fallback_tau = Some(1e-6);
        cfg.policy = FallbackPolicy::FallbackToDense;
        let out = decode_with_fallback(&cache, &cache_data.query, &cfg).unwrap();
        assert!(out.stats.used_fallback);
        assert_eq!(out.stats.mode, DecodeMode::Dense);
        assert_eq!(out.stats.token_key_reads, 256);
        let dense = dense_decode(&cache, &cache_data.query, 0.2);
        assert_eq!(out.readout, dense.readout);

        // tau = 0 never triggers since the diagnostic is nonnegative.
        cfg.fallback_tau = Some(0.0);
        let out = decode_with_fallback(&cache, &cache_data.query, &cfg).unwrap();
        assert!(!out.stats.used_fallback);
    }

    #[test]
    fn planted_gap_stays_sparse_and_cap_compute_never_falls_back() {
        // A single planted top token: the top-two score gap is the planted
        // margin. (Larger faces tie at the top and legitimately trigger
        // the diagnostic.)
        let planted = plant_cache(
            &PlantedCacheParams {
                tokens: 512,
                dim: 16,
                value_dim: 16,
                face_size: 1,
                gap_target: 0.5,
                block_size: 32,
                ..Default::default()
            },
            23,
            0,
        )
        .unwrap();
        let cache = PagedKvCache::build(&planted.keys, &planted.values, 32).unwrap();
        let mut cfg = RoutingConfig::new(8, 64, 0.1);
        cfg.fallback_tau = Some(0.01);
        cfg.policy = FallbackPolicy::FallbackToDense;
        let out = decode_with_fallback(&cache, &planted.query, &cfg).unwrap();
        assert!(!out.stats.used_fallback);
        assert_eq!(out.stats.mode, DecodeMode::Sparse);

        cfg.policy = FallbackPolicy::CapCompute;
        cfg.fallback_tau = Some(1e9);
        let out = decode_with_fallback(&cache, &planted.query, &cfg).unwrap();
        assert_eq!(out.stats.mode, DecodeMode::Sparse);
        assert!(!out.stats.gap_diag.is_nan());
    }

    #[test]
    fn sparse_dense_deviation_bounded_by_escaped_mass() {
        let planted = plant_cache(
            &PlantedCacheParams {
                tokens: 1024,
                dim: 32,
                value_dim: 16,
                face_size: 4,
                gap_target: 0.8,
                block_size: 64,
                ..Default::default()
            },
            29,
            0,
        )
        .unwrap();
        let cache = PagedKvCache::build(&planted.keys, &planted.values, 64).unwrap();
        let eps = 0.2;
        let dense = dense_decode(&cache, &planted.query, eps);
        let cfg = RoutingConfig::new(8, 128, eps);
        let sparse = sparse_decode(&cache, &planted.query, &cfg).unwrap();
        let cand: Vec<usize> = sparse.weights.iter().map(|&(t, _)| t).collect();
        let escaped: f64 = dense
            .weights
            .iter()
            .filter(|(t, _)| !cand.contains(t))
            .map(|&(_, w)| w)
            .sum();
        let max_v = (0..cache.tokens())
            .map(|t| dot(cache.value_row(t), cache.value_row(t)).sqrt())
            .fold(0.0f64, f64::max);
        let dev = l2_dev(&dense.readout, &sparse.readout);
        assert!(
            dev <= 2.0 * escaped * max_v + 1e-9,
            "dev {dev} escaped {escaped} max_v {max_v}"
        );
    }

    #[test]
    fn adversarial_paging_misses_the_face() {
        let planted = plant_cache(
            &PlantedCacheParams {
                tokens: 1024,
                dim: 32,
                value_dim: 16,
                face_size: 4,
                gap_target: 1.0,
                block_size: 64,
                adversarial: true,
                ..Default::default()
            },
            31,
            0,
        )
        .unwrap();
        let cache = PagedKvCache::build(&planted.keys, &planted.values, 64).unwrap();
        let eps = 0.2;
        let dense = dense_decode(&cache, &planted.query, eps);
        // P too small to reach the buried face pages.
        let cfg = RoutingConfig::new(2, 64, eps);
        let sparse = sparse_decode(&cache, &planted.query, &cfg).unwrap();
        let cand: Vec<usize> = sparse.weights.iter().map(|&(t, _)| t).collect();
        let missed = planted
            .face_tokens
            .iter()
            .any(|tok| !cand.contains(tok));
        assert!(missed, "adversarial plant should evade small-P routing");
        let dev = l2_dev(&dense.readout, &sparse.readout);
        assert!(dev > 0.1, "readout error should be large, got {dev}");
    }

    #[test]
    fn eg_and_fw_read_counts_match() {
        let planted = plant_cache(&PlantedCacheParams::default(), 37, 0).unwrap();
        let cache = PagedKvCache::build(&planted.keys, &planted.values, 64).unwrap();
        let mut cfg = RoutingConfig::new(16, 96, 0.25);
        cfg.solver = DecodeSolver::Eg;
        let eg = sparse_decode(&cache, &planted.query, &cfg).unwrap();
        cfg.solver = DecodeSolver::Fw;
        let fw = sparse_decode(&cache, &planted.query, &cfg).unwrap();
        assert_eq!(eg.stats.token_key_reads, fw.stats.token_key_reads);
        assert_eq!(eg.stats.value_reads, fw.stats.value_reads);
        assert_ne!(eg.stats.solver_iterations, fw.stats.solver_iterations);
        let dev = l2_dev(&eg.readout, &fw.readout);
        assert!(dev < 1e-8, "solver paths disagree by {dev}");
    }

    #[test]
    fn fstb_cache_round_trip() {
        let keys = rows(48, 6, 41);
        let vals = rows(48, 3, 42);
        let cache = PagedKvCache::build(&keys, &vals, 16).unwrap();
        let tmp = std::env::temp_dir().join("facestab_cache_roundtrip.fstb");
        cache.export_fstb(&tmp).unwrap();
        let back = PagedKvCache::import_fstb(&tmp, 16).unwrap();
        std::fs::remove_file(&tmp).ok();
        for t in 0..48 {
            assert_eq!(back.key_row(t), cache.key_row(t));
            assert_eq!(back.value_row(t), cache.value_row(t));
        }
    }
}
