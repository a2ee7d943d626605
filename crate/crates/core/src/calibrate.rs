//! Timing-model calibration.
//!
//! Query latency is modeled as linear in the work the engine does:
//!
//! ```text
//! time ≈ c1 · (records range-scanned) + c2 · (point lookups) + c3
//! ```
//!
//! Fitting (c1, c2, c3) by least squares over a batch of probe queries
//! grounds the cost model's `beta = c2 / c1` — how many scanned records one
//! point lookup is worth on this machine. The R² of the fit says whether the
//! linear model holds; on hardware where it does, expect R² around 0.97 or
//! better. Wall-clock calibration is inherently machine-dependent — hot
//! in-memory runs in particular may not separate the two work terms, in
//! which case the non-negative fit pins a coefficient at zero — so tests
//! and reproducible runs use injected timings: synthetic nanos from known
//! coefficients plus bounded multiplicative noise.

use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::CortexIndex;
use crate::query::{self, RangeQuery};

/// One probe observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub scanned: f64,
    pub lookups: f64,
    pub nanos: f64,
}

/// Least-squares fit of the timing model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    /// Nanos per range-scanned record.
    pub c1: f64,
    /// Nanos per point lookup.
    pub c2: f64,
    /// Fixed per-query nanos.
    pub c3: f64,
    pub r_squared: f64,
    pub samples: usize,
}

impl CalibrationFit {
    /// Lookup cost in scanned-record units.
    pub fn beta(&self) -> f64 {
        self.c2 / self.c1
    }
}

/// Timed repetitions per probe in measured mode; the minimum is kept.
/// Micro-scale wall clocks are one-sided noisy (scheduler, cache misses),
/// so best-of-N is the robust estimator of the work term.
const MEASURED_REPS: usize = 3;

/// Where probe timings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TimingMode {
    /// Wall-clock timings; each query is dry-run `warmup` times first, then
    /// timed `MEASURED_REPS` times keeping the fastest run.
    Measured { warmup: usize },
    /// Synthetic timings from known coefficients with multiplicative noise
    /// uniform in `[−noise, +noise]`. Deterministic given the seed.
    Injected { c1: f64, c2: f64, c3: f64, noise: f64 },
}

/// Fits the 3 coefficients by least squares under the model's physical
/// domain: costs cannot be negative. Errors when the design matrix is
/// rank-deficient (e.g. all probes scanned identical record counts).
pub fn fit_timing_model(samples: &[CalibrationSample]) -> Result<CalibrationFit> {
    if samples.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "{} samples cannot pin down 3 coefficients",
            samples.len()
        )));
    }
    // Accumulate X'X and X'y for X rows [scanned, lookups, 1].
    let mut xtx = [[0.0f64; 3]; 3];
    let mut xty = [0.0f64; 3];
    for s in samples {
        let row = [s.scanned, s.lookups, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                xtx[i][j] += row[i] * row[j];
            }
            xty[i] += row[i] * s.nanos;
        }
    }
    let coef = solve_nonnegative(xtx, xty)?;

    let mean = samples.iter().map(|s| s.nanos).sum::<f64>() / samples.len() as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for s in samples {
        let predicted = coef[0] * s.scanned + coef[1] * s.lookups + coef[2];
        ss_res += (s.nanos - predicted).powi(2);
        ss_tot += (s.nanos - mean).powi(2);
    }
    let r_squared = if ss_tot <= f64::EPSILON {
        1.0 // constant response, intercept alone explains it
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(CalibrationFit {
        c1: coef[0],
        c2: coef[1],
        c3: coef[2],
        r_squared,
        samples: samples.len(),
    })
}

/// Least squares with coefficients constrained to be non-negative, since a
/// per-record, per-lookup, or fixed cost below zero is not physical. Three
/// unknowns allow exact active-set enumeration: when the unconstrained
/// optimum is infeasible, solve each support subset (pinning the rest to
/// zero) and keep the feasible solution with the smallest residual.
fn solve_nonnegative(xtx: [[f64; 3]; 3], xty: [f64; 3]) -> Result<[f64; 3]> {
    let full = solve_3x3(xtx, xty)?;
    if full.iter().all(|&c| c >= 0.0) {
        return Ok(full);
    }
    // Objective up to a constant: c'X'Xc - 2 c'X'y.
    let objective = |c: &[f64; 3]| {
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..3 {
            lin += c[i] * xty[i];
            for j in 0..3 {
                quad += c[i] * xtx[i][j] * c[j];
            }
        }
        quad - 2.0 * lin
    };
    let mut best = [0.0f64; 3];
    let mut best_obj = 0.0; // the all-zero support is always feasible
    // Pinning rows are scaled to the matrix magnitude so the elimination's
    // relative pivot check does not mistake them for rank deficiency.
    let unit: f64 = xtx.iter().flatten().map(|v| v.abs()).fold(1.0, f64::max);
    for mask in 1u8..7 {
        // Pinned coefficients get a scaled identity row forcing them to zero.
        let mut a = xtx;
        let mut b = xty;
        for i in 0..3 {
            if mask >> i & 1 == 0 {
                a[i] = [0.0; 3];
                a[i][i] = unit;
                b[i] = 0.0;
                for row in 0..3 {
                    if row != i {
                        a[row][i] = 0.0;
                    }
                }
            }
        }
        let Ok(c) = solve_3x3(a, b) else { continue };
        if c.iter().all(|&v| v >= 0.0) {
            let obj = objective(&c);
            if obj < best_obj {
                best = c;
                best_obj = obj;
            }
        }
    }
    Ok(best)
}

/// Gaussian elimination with partial pivoting on a 3×3 system.
fn solve_3x3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Result<[f64; 3]> {
    let scale: f64 = a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < scale * 1e-12 {
            return Err(Error::DegenerateFit(
                "probe workload does not vary enough to separate scan and lookup costs".into(),
            ));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in row + 1..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Runs `n_queries` random range probes against the index and fits the
/// timing model. Probe widths are log-uniform across the target domain so
/// scanned/lookup counts vary over orders of magnitude.
pub fn run_calibration(
    index: &CortexIndex,
    n_queries: usize,
    seed: u64,
    mode: &TimingMode,
) -> Result<CalibrationFit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (domain_lo, domain_hi) = index.target_domain();
    let span = (domain_hi as i128 - domain_lo as i128).max(1) as f64;

    let mut samples = Vec::with_capacity(n_queries);
    for _ in 0..n_queries {
        let width = (span.powf(rng.gen_range(0.0..=1.0)).round() as i128).clamp(1, span as i128);
        let lo = rng.gen_range(domain_lo as i128..=domain_hi as i128 - width);
        let q = RangeQuery {
            column: index.target_column_name().to_string(),
            lo: lo as i64,
            hi: (lo + width) as i64,
        };
        if let TimingMode::Measured { warmup } = mode {
            for _ in 0..*warmup {
                query::execute(index, &q)?;
            }
        }
        let (_, mut stats) = query::execute(index, &q)?;
        if matches!(mode, TimingMode::Measured { .. }) {
            for _ in 1..MEASURED_REPS {
                let (_, rerun) = query::execute(index, &q)?;
                stats.elapsed_nanos = stats.elapsed_nanos.min(rerun.elapsed_nanos);
            }
        }
        let nanos = match mode {
            TimingMode::Measured { .. } => stats.elapsed_nanos as f64,
            TimingMode::Injected { c1, c2, c3, noise } => {
                let clean = c1 * stats.range_records_touched as f64
                    + c2 * stats.point_lookups as f64
                    + c3;
                clean * (1.0 + noise * rng.gen_range(-1.0..=1.0))
            }
        };
        samples.push(CalibrationSample {
            scanned: stats.range_records_touched as f64,
            lookups: stats.point_lookups as f64,
            nanos,
        });
    }
    fit_timing_model(&samples)
}
