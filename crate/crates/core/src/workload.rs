//! Selectivity-tuned range-query workloads.
//!
//! Each query is anchored at a value drawn from the column itself (so it
//! lands where data actually lives) and widened symmetrically until its true
//! row count reaches the requested selectivity. A query is accepted when its
//! count lands within `[s/2·N, 2s·N]`; anchors whose local duplicate
//! structure jumps over that window are rejected and redrawn, with a bounded
//! number of attempts before the workload is declared unreachable.

use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::RangeQuery;
use crate::store::Table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub column: String,
    pub selectivity: f64,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Attempts per query before giving up.
const MAX_ATTEMPTS: usize = 200;

fn count_in(values: &[i64], lo: i128, hi: i128) -> usize {
    let lo = lo.clamp(i64::MIN as i128, i64::MAX as i128) as i64;
    let hi = hi.clamp(i64::MIN as i128, i64::MAX as i128) as i64;
    if lo >= hi {
        return 0;
    }
    values.partition_point(|&v| v < hi) - values.partition_point(|&v| v < lo)
}

pub fn generate(table: &Table, spec: &WorkloadSpec) -> Result<Vec<RangeQuery>> {
    let col = table.column_index(&spec.column)?;
    let s = spec.selectivity;
    if !(s.is_finite() && 0.0 < s && s <= 1.0) {
        return Err(Error::BadConfig(format!("selectivity {s} must lie in (0, 1]")));
    }
    let mut values = table.column_values(col);
    values.sort_unstable();
    let n = values.len();
    if n == 0 {
        return Err(Error::BadConfig("cannot build a workload over an empty table".into()));
    }

    let lo_k = ((s / 2.0 * n as f64).ceil() as usize).max(1);
    let hi_k = ((2.0 * s * n as f64).floor() as usize).min(n);
    let unreachable = || Error::SelectivityUnreachable {
        column: spec.column.clone(),
        target: s,
        lo: lo_k as f64,
        hi: hi_k as f64,
        attempts: MAX_ATTEMPTS,
    };
    if lo_k > hi_k {
        return Err(unreachable());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut queries = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        if s >= 1.0 {
            let hi = (values[n - 1] as i128 + 1).min(i64::MAX as i128) as i64;
            queries.push(RangeQuery { column: spec.column.clone(), lo: values[0], hi });
            continue;
        }
        let target_k = ((s * n as f64).round() as usize).max(1);
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let center = values[rng.gen_range(0..n)] as i128;
            // Smallest half-width whose window reaches the target count;
            // counts grow monotonically with the width.
            let span = values[n - 1] as i128 - values[0] as i128 + 1;
            let (mut lo_w, mut hi_w) = (0i128, span);
            while lo_w < hi_w {
                let mid = lo_w + (hi_w - lo_w) / 2;
                if count_in(&values, center - mid, center + mid + 1) >= target_k {
                    hi_w = mid;
                } else {
                    lo_w = mid + 1;
                }
            }
            let got = count_in(&values, center - lo_w, center + lo_w + 1);
            if (lo_k..=hi_k).contains(&got) {
                let lo = (center - lo_w).clamp(i64::MIN as i128, i64::MAX as i128) as i64;
                let hi = (center + lo_w + 1).clamp(i64::MIN as i128, i64::MAX as i128) as i64;
                accepted = Some(RangeQuery { column: spec.column.clone(), lo, hi });
                break;
            }
        }
        queries.push(accepted.ok_or_else(unreachable)?);
    }
    Ok(queries)
}
