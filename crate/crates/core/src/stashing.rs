//! Cost model and outlier selection.
//!
//! Answering a query on target bucket `t` costs, per host bucket `h` holding
//! matching rows: a scan of the whole bucket (`|h|` records) if the cell is
//! an inlier, or one point lookup per matching row (`|(t,h)|` lookups) if it
//! is an outlier. A lookup is `beta` times the per-record scan cost, and each
//! stashed row additionally carries `alpha · P0 / N` of memory pressure,
//! where `P0` is the scan overhead of stashing nothing and `N` the row
//! count. Folding both into one per-lookup penalty
//!
//! ```text
//! penalty = beta + alpha · P0 / N
//! ```
//!
//! makes the total cost separable per cell — each cell independently prefers
//! whichever side is cheaper, so the optimal assignment is a local threshold
//! test: stash cell `(t, h)` exactly when `penalty · |(t,h)| < |h|` (ties
//! stay inlier). The budgeted variant instead greedily admits cells by
//! benefit density until a stash-size cap is hit.

use std::collections::BTreeSet;

use crate::correlation::{CellGrid, CellKey};
use crate::error::{Error, Result};

/// Parameters of the separable cost model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    /// Memory pressure: cost units charged per stashed row, scaled by P0/N.
    pub alpha: f64,
    /// Point-lookup cost relative to scanning one record.
    pub beta: f64,
    pub n_rows: u64,
    /// Scan overhead of the all-inlier assignment.
    pub p0: u64,
}

impl CostParams {
    pub fn new(alpha: f64, beta: f64, grid: &CellGrid) -> CostParams {
        CostParams { alpha, beta, n_rows: grid.n_rows, p0: initial_scan_overhead(grid) }
    }

    /// Effective cost of answering one stashed row: `beta + alpha·P0/N`.
    pub fn lookup_penalty(&self) -> f64 {
        if self.n_rows == 0 {
            return self.beta;
        }
        self.beta + self.alpha * self.p0 as f64 / self.n_rows as f64
    }

    /// The threshold rule. Equality keeps the cell inlier.
    pub fn is_outlier(&self, cell_count: u64, host_count: u64) -> bool {
        self.lookup_penalty() * (cell_count as f64) < host_count as f64
    }
}

/// `P0`: query overhead with nothing stashed — every nonempty cell pays a
/// full scan of its host bucket.
pub fn initial_scan_overhead(grid: &CellGrid) -> u64 {
    grid.cells.keys().map(|&(h, _)| grid.host_count(h)).sum()
}

/// `SO`: rows the assignment stashes.
pub fn scan_overhead(grid: &CellGrid, outliers: &BTreeSet<CellKey>) -> u64 {
    outliers.iter().map(|k| grid.cells.get(k).copied().unwrap_or(0)).sum()
}

/// `PO(t)`: probe overhead of one target bucket — scanned records of its
/// inlier hosts plus `beta`-weighted lookups of its outlier rows.
pub fn probe_overhead(grid: &CellGrid, outliers: &BTreeSet<CellKey>, beta: f64, t: usize) -> f64 {
    let mut total = 0.0;
    for (&(h, ct), &count) in &grid.cells {
        if ct != t {
            continue;
        }
        if outliers.contains(&(h, ct)) {
            total += beta * count as f64;
        } else {
            total += grid.host_count(h) as f64;
        }
    }
    total
}

/// Total cost of an assignment: per cell, a host-bucket scan if inlier or
/// `penalty` per row if outlier.
pub fn assignment_cost(grid: &CellGrid, outliers: &BTreeSet<CellKey>, params: &CostParams) -> f64 {
    let penalty = params.lookup_penalty();
    let mut total = 0.0;
    for (&(h, t), &count) in &grid.cells {
        if outliers.contains(&(h, t)) {
            total += penalty * count as f64;
        } else {
            total += grid.host_count(h) as f64;
        }
    }
    total
}

/// Cost-optimal assignment under the separable model: apply the threshold
/// rule to every nonempty cell.
pub fn assign_by_threshold(grid: &CellGrid, params: &CostParams) -> BTreeSet<CellKey> {
    grid.cells
        .iter()
        .filter(|(&(h, _), &count)| params.is_outlier(count, grid.host_count(h)))
        .map(|(&cell, _)| cell)
        .collect()
}

/// Greedy budgeted assignment: cells ranked by (optionally target-weighted)
/// benefit density `(|h| − beta·|(t,h)|) / |(t,h)|`, admitted while the
/// stash stays within `max_stash` rows. Only beneficial cells (positive
/// density) are considered. Returns the outlier set plus the smallest
/// admitted density — the marginal price of the last stash slot (0.0 when
/// the budget never binds).
pub fn assign_by_budget(
    grid: &CellGrid,
    beta: f64,
    max_stash: u64,
    weights: Option<&[f64]>,
) -> Result<(BTreeSet<CellKey>, f64)> {
    if let Some(w) = weights {
        if let Some(bad) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::BadConfig(format!("target weight {bad} must be finite and ≥ 0")));
        }
    }
    let mut ranked: Vec<(f64, CellKey, u64)> = grid
        .cells
        .iter()
        .filter_map(|(&(h, t), &count)| {
            let weight = weights.map_or(1.0, |w| w.get(t).copied().unwrap_or(1.0));
            let density =
                weight * (grid.host_count(h) as f64 - beta * count as f64) / count as f64;
            (density > 0.0).then_some((density, (h, t), count))
        })
        .collect();
    // Highest density first; cell key breaks ties deterministically.
    ranked.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut outliers = BTreeSet::new();
    let mut used = 0u64;
    let mut marginal = 0.0f64;
    let mut skipped_any = false;
    for (density, cell, count) in ranked {
        if used + count <= max_stash {
            used += count;
            outliers.insert(cell);
            marginal = density;
        } else {
            skipped_any = true;
        }
    }
    Ok((outliers, if skipped_any { marginal } else { 0.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::host::BucketId;
    use std::collections::BTreeMap;

    /// Grid builder straight from (host, target, count) triples.
    fn grid(cells: &[(u32, usize, u64)]) -> CellGrid {
        let mut g = CellGrid::default();
        let mut hosts: BTreeMap<BucketId, u64> = BTreeMap::new();
        for &(h, t, c) in cells {
            g.cells.insert((BucketId(h), t), c);
            *hosts.entry(BucketId(h)).or_insert(0) += c;
            g.n_rows += c;
        }
        g.host_counts = hosts;
        g
    }

    /// Brute-force minimum over all 2^cells assignments.
    fn brute_force_min(g: &CellGrid, params: &CostParams) -> f64 {
        let keys: Vec<CellKey> = g.cells.keys().copied().collect();
        let mut best = f64::INFINITY;
        for mask in 0u32..1 << keys.len() {
            let set: BTreeSet<CellKey> = keys
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &k)| k)
                .collect();
            best = best.min(assignment_cost(g, &set, params));
        }
        best
    }

    #[test]
    fn hand_worked_example() {
        // h0 holds 9 rows all in t0; h1 holds 1 row of t0 and 9 of t1.
        let g = grid(&[(0, 0, 9), (1, 0, 1), (1, 1, 9)]);
        assert_eq!(g.n_rows, 19);
        assert_eq!(g.host_count(BucketId(1)), 10);
        // P0 = |h0| + |h1| + |h1| = 9 + 10 + 10.
        assert_eq!(initial_scan_overhead(&g), 29);

        let params = CostParams { alpha: 0.0, beta: 2.0, n_rows: 19, p0: 29 };
        assert_eq!(params.lookup_penalty(), 2.0);
        let outliers = assign_by_threshold(&g, &params);
        // (h0,t0): 2·9 ≥ 9 inlier; (h1,t0): 2·1 < 10 outlier; (h1,t1): 2·9 ≥ 10 inlier.
        assert_eq!(outliers, BTreeSet::from([(BucketId(1), 0)]));
        assert_eq!(scan_overhead(&g, &outliers), 1);
        // C = 9 (h0 scan for t0) + 2·1 (stashed stray) + 10 (h1 scan for t1).
        assert_eq!(assignment_cost(&g, &outliers, &params), 21.0);
        // PO per target.
        assert_eq!(probe_overhead(&g, &outliers, 2.0, 0), 9.0 + 2.0);
        assert_eq!(probe_overhead(&g, &outliers, 2.0, 1), 10.0);
    }

    #[test]
    fn tie_stays_inlier() {
        // penalty·count == host_count exactly: 2·5 == 10.
        let g = grid(&[(0, 0, 5), (0, 1, 5)]);
        let params = CostParams { alpha: 0.0, beta: 2.0, n_rows: 10, p0: 20 };
        assert!(!params.is_outlier(5, 10));
        assert!(assign_by_threshold(&g, &params).is_empty());
    }

    #[test]
    fn alpha_raises_the_bar() {
        let g = grid(&[(0, 0, 9), (1, 0, 1), (1, 1, 9)]);
        // α·P0/N = 10·29/19 ≈ 15.3, penalty ≈ 17.3 > 10 ⇒ nothing stashed.
        let params = CostParams::new(10.0, 2.0, &g);
        assert!(assign_by_threshold(&g, &params).is_empty());
    }

    #[test]
    fn threshold_rule_matches_brute_force_minimum() {
        use rand::{Rng as _, SeedableRng as _};
        let mut rng = rand::rngs::StdRng::seed_from_u64(23);
        for _ in 0..60 {
            let n_hosts = rng.gen_range(1..4u32);
            let n_targets = rng.gen_range(1..4usize);
            let mut cells = Vec::new();
            for h in 0..n_hosts {
                for t in 0..n_targets {
                    if rng.gen_bool(0.7) {
                        cells.push((h, t, rng.gen_range(1..40u64)));
                    }
                }
            }
            if cells.is_empty() || cells.len() > 10 {
                continue;
            }
            let g = grid(&cells);
            let params =
                CostParams::new(rng.gen_range(0.0..4.0), rng.gen_range(1.0..10.0), &g);
            let chosen = assign_by_threshold(&g, &params);
            let got = assignment_cost(&g, &chosen, &params);
            let best = brute_force_min(&g, &params);
            assert!(
                (got - best).abs() < 1e-9,
                "threshold cost {got} vs brute force {best} on {cells:?}"
            );
        }
    }

    #[test]
    fn budget_zero_stashes_nothing_and_unbounded_matches_alpha_zero() {
        let g = grid(&[(0, 0, 9), (1, 0, 1), (1, 1, 9), (2, 2, 3), (2, 0, 2)]);
        let beta = 2.0;
        let (none, marginal) = assign_by_budget(&g, beta, 0, None).unwrap();
        assert!(none.is_empty());
        assert_eq!(marginal, 0.0);

        let params = CostParams { alpha: 0.0, beta, n_rows: g.n_rows, p0: 0 };
        let threshold = assign_by_threshold(&g, &params);
        let (unbounded, marginal) = assign_by_budget(&g, beta, u64::MAX, None).unwrap();
        assert_eq!(unbounded, threshold);
        assert_eq!(marginal, 0.0);
    }

    #[test]
    fn budget_admits_by_density_and_respects_cap() {
        // Densities at β=2: (h0,t0): (10−2)/1 = 8; (h0,t1): (10−18)/9 < 0;
        // (h1,t0): (12−8)/4 = 1; (h1,t1): (12−16)/8 < 0.
        let g = grid(&[(0, 0, 1), (0, 1, 9), (1, 0, 4), (1, 1, 8)]);
        let (set, marginal) = assign_by_budget(&g, 2.0, 4, None).unwrap();
        // Budget 4: densest cell (1 row) fits; the 4-row cell would overflow.
        assert_eq!(set, BTreeSet::from([(BucketId(0), 0)]));
        assert!(marginal > 0.0);

        let (set, marginal) = assign_by_budget(&g, 2.0, 5, None).unwrap();
        assert_eq!(set, BTreeSet::from([(BucketId(0), 0), (BucketId(1), 0)]));
        assert_eq!(marginal, 0.0); // every beneficial cell admitted

        // Budgets are monotone: a bigger cap never drops an admitted cell.
        let (small, _) = assign_by_budget(&g, 2.0, 1, None).unwrap();
        assert!(small.is_subset(&set));
    }

    #[test]
    fn weights_reorder_the_greedy_queue() {
        // Same density cells on t0 and t1; weighting t1 wins the only slot.
        let g = grid(&[(0, 0, 2), (1, 1, 2)]);
        let (unweighted, _) = assign_by_budget(&g, 0.0, 2, None).unwrap();
        assert_eq!(unweighted, BTreeSet::from([(BucketId(0), 0)])); // tie → cell order
        let (weighted, _) = assign_by_budget(&g, 0.0, 2, Some(&[1.0, 5.0])).unwrap();
        assert_eq!(weighted, BTreeSet::from([(BucketId(1), 1)]));
        assert!(assign_by_budget(&g, 0.0, 2, Some(&[1.0, f64::NAN])).is_err());
    }
}
