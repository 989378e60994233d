//! Source-balancing sampler: each source contributes `round(ratio * n)`
//! samples, up-sampling by whole passes plus a seeded prefix or
//! down-sampling by a seeded subset, then the union is shuffled.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerSpec {
    /// Per-source multiplier; sources absent from the map keep ratio 1.
    pub ratios: BTreeMap<String, f64>,
    pub seed: u64,
}

/// Warnings emitted for degenerate inputs (kept as data, not logs, so
/// callers can surface them).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerWarning {
    pub source: String,
    pub message: String,
}

/// Balance and shuffle. Items are cloned when up-sampled; the output
/// order is fully determined by the spec.
pub fn balance_sample<T: Clone>(
    corpora: &BTreeMap<String, Vec<T>>,
    spec: &SamplerSpec,
) -> Result<(Vec<T>, Vec<SamplerWarning>)> {
    for (source, ratio) in &spec.ratios {
        if *ratio <= 0.0 || !ratio.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "ratio for source {source:?} must be positive, got {ratio}"
            )));
        }
    }
    let mut warnings = Vec::new();
    let mut pool = Vec::new();
    for (source, items) in corpora {
        let ratio = spec.ratios.get(source).copied().unwrap_or(1.0);
        if items.is_empty() {
            warnings.push(SamplerWarning {
                source: source.clone(),
                message: "empty corpus contributes nothing".into(),
            });
            continue;
        }
        let n = items.len();
        let want = (ratio * n as f64).round() as usize;
        let mut rng = seeds::rng(spec.seed, &format!("sampler/{source}"));
        let full_passes = want / n;
        let remainder = want % n;
        for _ in 0..full_passes {
            pool.extend(items.iter().cloned());
        }
        if remainder > 0 {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx.truncate(remainder);
            pool.extend(idx.into_iter().map(|i| items[i].clone()));
        }
    }
    let mut rng = seeds::rng(spec.seed, "sampler/shuffle");
    pool.shuffle(&mut rng);
    Ok((pool, warnings))
}
