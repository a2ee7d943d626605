//! Synthetic correlated datasets.
//!
//! Rows carry a uniform `host` value and a `target` that equals the host
//! except for an exact `noise_fraction` of rows, whose targets are displaced
//! by rounded Laplace noise (clamped to the domain). The noisy subset is
//! chosen by partial shuffle, so the fraction is hit exactly rather than in
//! expectation, and everything is driven by a seeded ChaCha stream for
//! reproducibility.

use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{ColumnKind, ColumnMeta, Table};

/// Half-open value domain shared by both generated columns.
pub const DOMAIN: (i64, i64) = (0, 1_000_000);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub rows: usize,
    /// Fraction of rows whose target is displaced; hit exactly.
    pub noise_fraction: f64,
    /// Laplace scale of the displacement.
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Laplace(0, scale) via the difference of two exponentials.
fn laplace(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = 1.0 - rng.gen::<f64>();
    scale * (u1.ln() - u2.ln())
}

/// Generates a two-column table (`host`, `target`) from the given recipe.
pub fn generate(spec: &SyntheticSpec) -> Result<Table> {
    if spec.rows == 0 {
        return Err(Error::BadConfig("synthetic dataset needs at least one row".into()));
    }
    if !(spec.noise_fraction.is_finite() && (0.0..=1.0).contains(&spec.noise_fraction)) {
        return Err(Error::BadConfig(format!(
            "noise fraction {} must lie in [0, 1]",
            spec.noise_fraction
        )));
    }
    if !(spec.noise_scale.is_finite() && spec.noise_scale >= 0.0) {
        return Err(Error::BadConfig(format!(
            "noise scale {} must be finite and ≥ 0",
            spec.noise_scale
        )));
    }
    let n = spec.rows;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let host: Vec<i64> = (0..n).map(|_| rng.gen_range(DOMAIN.0..DOMAIN.1)).collect();
    let mut target = host.clone();

    // Partial Fisher–Yates: the first `noisy` slots of `order` end up holding
    // a uniform sample of row ids without replacement.
    let noisy = ((spec.noise_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..noisy {
        let j = rng.gen_range(i..n);
        order.swap(i, j);
        let row = order[i];
        let displaced = host[row] as f64 + laplace(&mut rng, spec.noise_scale);
        target[row] = (displaced.round() as i64).clamp(DOMAIN.0, DOMAIN.1 - 1);
    }

    Table::from_encoded(
        vec![
            ColumnMeta { name: "host".into(), kind: ColumnKind::Integer },
            ColumnMeta { name: "target".into(), kind: ColumnKind::Integer },
        ],
        vec![host, target],
        None,
        false,
    )
}
