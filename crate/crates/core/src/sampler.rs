//! Answer-length resampling under a truncated geometric distribution.
//!
//! Lengths follow `Geo(p)`: `P(l) = (1-p)^(l-1) * p`. The final bucket
//! absorbs all tail mass `P(l >= max_len)` so that clamped answer lengths and
//! the length distribution agree. Sampling draws a length bucket by weight,
//! then an example uniformly within the bucket; the without-replacement
//! variant renormalizes over the buckets that still have examples left.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::align::SyntheticExample;
use crate::lang::LangRules;

/// RNG recorded in output manifests so runs are reproducible.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("p must be in (0, 1], got {0}")]
    BadP(f64),
    #[error("max_len must be >= 1")]
    BadMaxLen,
    #[error("example {0} has an empty answer")]
    EmptyAnswer(String),
    #[error("cannot sample {target} examples from an empty pool")]
    EmptyPool { target: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Geometric success probability.
    pub p: f64,
    /// Length clamp; the last bucket absorbs the tail mass.
    pub max_len: usize,
    pub replacement: bool,
    pub target_size: usize,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            p: 0.4,
            max_len: 30,
            replacement: false,
            target_size: 0,
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    fn validate(&self) -> Result<(), SamplerError> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(SamplerError::BadP(self.p));
        }
        if self.max_len < 1 {
            return Err(SamplerError::BadMaxLen);
        }
        Ok(())
    }
}

/// Truncated geometric pmf over lengths 1..=max_len.
///
/// `weights[l-1] = (1-p)^(l-1) * p` for `l < max_len`; the last entry takes
/// the remaining mass `(1-p)^(max_len-1)` so the vector sums to exactly 1.
pub fn geo_weights(cfg: &SamplerConfig) -> Result<Vec<f64>, SamplerError> {
    cfg.validate()?;
    let q = 1.0 - cfg.p;
    let mut weights = Vec::with_capacity(cfg.max_len);
    let mut head_mass = 0.0;
    for l in 1..cfg.max_len {
        let w = q.powi(l as i32 - 1) * cfg.p;
        head_mass += w;
        weights.push(w);
    }
    weights.push(1.0 - head_mass);
    Ok(weights)
}

/// Answer length in tokens under the language's tokenizer, clamped to
/// `[1, max_len]`.
pub fn answer_length(
    ex: &SyntheticExample,
    rules: &LangRules,
    max_len: usize,
) -> Result<usize, SamplerError> {
    if ex.answer.trim().is_empty() {
        return Err(SamplerError::EmptyAnswer(ex.id.clone()));
    }
    let count = rules.tokenize(&ex.answer, &ex.language).len();
    Ok(count.clamp(1, max_len))
}

/// Outcome of a resampling run, including the manifest fields callers persist.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub examples: Vec<SyntheticExample>,
    pub manifest: SampleManifest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleManifest {
    pub p: f64,
    pub max_len: usize,
    pub replacement: bool,
    pub seed: u64,
    pub rng_algorithm: String,
    /// length bucket -> number of drawn examples.
    pub counts_per_bucket: BTreeMap<usize, usize>,
    /// Set when the pool was exhausted before reaching target_size.
    pub pool_exhausted: bool,
}

/// Resample `pool` by answer length under the configured distribution.
///
/// Deterministic for a fixed seed. Without replacement, exhausted buckets are
/// skipped by renormalizing the remaining weights; if the whole pool runs out
/// the full pool is returned (in drawn order) with `pool_exhausted` set.
pub fn resample(
    pool: &[SyntheticExample],
    cfg: &SamplerConfig,
    rules: &LangRules,
) -> Result<SampleOutcome, SamplerError> {
    let weights = geo_weights(cfg)?;
    if pool.is_empty() && cfg.target_size > 0 {
        return Err(SamplerError::EmptyPool {
            target: cfg.target_size,
        });
    }

    // Bucket indices into the pool by answer length, in pool order.
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cfg.max_len];
    for (idx, ex) in pool.iter().enumerate() {
        let len = answer_length(ex, rules, cfg.max_len)?;
        buckets[len - 1].push(idx);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut drawn: Vec<usize> = Vec::with_capacity(cfg.target_size);
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pool_exhausted = false;

    if cfg.replacement {
        // Restrict to populated buckets once; draws are then i.i.d.
        let active: Vec<usize> = (0..cfg.max_len).filter(|l| !buckets[*l].is_empty()).collect();
        if active.is_empty() && cfg.target_size > 0 {
            return Err(SamplerError::EmptyPool {
                target: cfg.target_size,
            });
        }
        let total: f64 = active.iter().map(|l| weights[*l]).sum();
        for _ in 0..cfg.target_size {
            let bucket = pick_weighted(&mut rng, &active, &weights, total);
            let members = &buckets[bucket];
            let idx = members[rng.gen_range(0..members.len())];
            drawn.push(idx);
            *counts.entry(bucket + 1).or_insert(0) += 1;
        }
    } else {
        let mut remaining = buckets;
        for _ in 0..cfg.target_size {
            let active: Vec<usize> =
                (0..cfg.max_len).filter(|l| !remaining[*l].is_empty()).collect();
            if active.is_empty() {
                pool_exhausted = true;
                log::warn!(
                    "pool exhausted after {} draws (target {})",
                    drawn.len(),
                    cfg.target_size
                );
                break;
            }
            let total: f64 = active.iter().map(|l| weights[*l]).sum();
            let bucket = pick_weighted(&mut rng, &active, &weights, total);
            let members = &mut remaining[bucket];
            let at = rng.gen_range(0..members.len());
            drawn.push(members.swap_remove(at));
            *counts.entry(bucket + 1).or_insert(0) += 1;
        }
    }

    Ok(SampleOutcome {
        examples: drawn.into_iter().map(|i| pool[i].clone()).collect(),
        manifest: SampleManifest {
            p: cfg.p,
            max_len: cfg.max_len,
            replacement: cfg.replacement,
            seed: cfg.rng_seed,
            rng_algorithm: RNG_ALGORITHM.to_string(),
            counts_per_bucket: counts,
            pool_exhausted,
        },
    })
}

/// Inverse-CDF draw over `active` bucket indices, consuming one f64 from the
/// stream regardless of outcome so the stream stays position-stable.
fn pick_weighted(
    rng: &mut ChaCha8Rng,
    active: &[usize],
    weights: &[f64],
    total: f64,
) -> usize {
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for &l in active {
        acc += weights[l];
        if u < acc {
            return l;
        }
    }
    *active.last().expect("active buckets must be non-empty")
}
