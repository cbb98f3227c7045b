//! Closed-form expected number of successful devices per random-access slot.
//!
//! The mMTC term is built in three layers:
//!
//! 1. Preamble occupancy: `u ~ Binomial(N_M, 1/τ_p)` devices share a preamble.
//! 2. TA allocation: `P_u^t`, the probability that exactly `t` of those `u`
//!    devices own their annulus and the other `u - t` share annuli in groups
//!    of two or more. Group shapes are the partitions of `u - t` into parts
//!    `>= 2`; each shape is weighted by its device-ordering count `N_do` and
//!    by annulus probabilities summed over every injective placement of the
//!    groups and singletons onto distinct annuli.
//! 3. Resource use: the `t` TA-unique devices own a block each at the top
//!    power level; the rest pick one of the `t` blocks and one of the `L - 1`
//!    lower levels uniformly, and SIC decodes them with probability `P_i^s`
//!    when `i` of them share a block.
//!
//! The URLLC term is `N_U (1 - P_LSTM)` with a measured `P_LSTM`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::geometry::CellConfig;

/// Binomial occupancy terms below this mass are skipped.
pub const DEFAULT_PMF_CUTOFF: f64 = 1e-12;

/// A multiset of integers `>= 2` summing to `target`, parts stored in
/// non-increasing order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Partition {
    parts: Vec<usize>,
    target: usize,
}

impl Partition {
    pub fn new(mut parts: Vec<usize>) -> Result<Self> {
        if parts.iter().any(|&p| p < 2) {
            return Err(invalid(format!(
                "partition parts must be >= 2, got {parts:?}"
            )));
        }
        parts.sort_unstable_by(|a, b| b.cmp(a));
        let target = parts.iter().sum();
        Ok(Self { parts, target })
    }

    pub fn empty() -> Self {
        Self {
            parts: Vec::new(),
            target: 0,
        }
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// Number of shared TA values this shape occupies.
    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// `(part value, multiplicity)` pairs.
    pub fn multiplicities(&self) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for &p in &self.parts {
            *m.entry(p).or_insert(0) += 1;
        }
        m
    }
}

/// All partitions of `n` into parts `>= 2`.
///
/// Built bottom-up: the partitions of `r` are `[r]` together with every
/// concatenation of a partition of `a` with a partition of `r - a` for
/// `a = 2..=ceil(r/2)`, with reorderings of the same multiset merged.
/// `n = 0` yields the single empty partition and `n = 1` yields none.
pub fn partitions_min2(n: usize) -> Vec<Partition> {
    if n == 0 {
        return vec![Partition::empty()];
    }
    let mut table: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n + 1];
    for r in 2..=n {
        let mut merged: BTreeSet<Vec<usize>> = BTreeSet::new();
        merged.insert(vec![r]);
        for a in 2..=r.div_ceil(2) {
            let b = r - a;
            if b < 2 {
                continue;
            }
            for left in &table[a] {
                for right in &table[b] {
                    let mut combined: Vec<usize> = left.iter().chain(right).copied().collect();
                    combined.sort_unstable_by(|x, y| y.cmp(x));
                    merged.insert(combined);
                }
            }
        }
        table[r] = merged.into_iter().collect();
    }
    let mut out: Vec<Partition> = std::mem::take(&mut table[n])
        .into_iter()
        .map(|parts| Partition { target: n, parts })
        .collect();
    out.sort();
    out
}

/// Partitions of `n` into at most `max_parts` parts `>= 2`, generated
/// directly in non-increasing order.
pub fn partitions_min2_bounded(n: usize, max_parts: usize) -> Vec<Partition> {
    fn rec(
        rem: usize,
        max_part: usize,
        slots: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Partition>,
    ) {
        if rem == 0 {
            out.push(Partition {
                parts: cur.clone(),
                target: cur.iter().sum(),
            });
            return;
        }
        if slots == 0 {
            return;
        }
        for p in (2..=max_part.min(rem)).rev() {
            // the remainder must stay expressible with parts >= 2
            if rem - p == 1 {
                continue;
            }
            cur.push(p);
            rec(rem - p, p, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, n, max_parts, &mut Vec::new(), &mut out);
    out
}

fn binomial_u128(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact at every step: acc * (n - i) is divisible by (i + 1)
        acc = acc.checked_mul((n - i) as u128)? / (i + 1) as u128;
    }
    Some(acc)
}

fn factorial_u128(n: usize) -> Option<u128> {
    (1..=n as u128).try_fold(1u128, |acc, k| acc.checked_mul(k))
}

fn check_shape(u: usize, t: usize, partition: &Partition) -> Result<()> {
    if t > u || t + partition.target() != u {
        return Err(invalid(format!(
            "u = {u}, t = {t} and a partition of {} are inconsistent",
            partition.target()
        )));
    }
    Ok(())
}

/// Number of ways to split `u` labeled devices into `t` singletons and
/// unlabeled groups of the given sizes:
/// `C(u,t) · Π_d C(remaining_d, S(d)) / Π_j c_j!`, where `c_j` counts each
/// repeated group size.
///
/// Returns `None` when the count overflows `u128`.
pub fn n_do(u: usize, t: usize, partition: &Partition) -> Result<Option<u128>> {
    check_shape(u, t, partition)?;
    let exact = (|| {
        let mut count = binomial_u128(u, t)?;
        let mut remaining = u - t;
        for &s in partition.parts() {
            count = count.checked_mul(binomial_u128(remaining, s)?)?;
            remaining -= s;
        }
        let mut repeats: u128 = 1;
        for &c in partition.multiplicities().values() {
            repeats = repeats.checked_mul(factorial_u128(c)?)?;
        }
        Some(count / repeats)
    })();
    Ok(exact)
}

fn ln_factorial(n: usize) -> f64 {
    const TABLE_LEN: usize = 4096;
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(TABLE_LEN);
        let mut acc = 0.0f64;
        t.push(0.0);
        for k in 1..TABLE_LEN {
            acc += (k as f64).ln();
            t.push(acc);
        }
        t
    });
    if n < TABLE_LEN {
        return table[n];
    }
    // Stirling series, error well below 1e-15 relative at this size
    let x = n as f64;
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x * x * x)
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `N_do` as a float; exact integers up to `u = 30`, log-domain beyond.
fn n_do_f64(u: usize, t: usize, partition: &Partition) -> f64 {
    if u <= 30 {
        if let Ok(Some(v)) = n_do(u, t, partition) {
            return v as f64;
        }
    }
    let mut ln = ln_binomial(u, t);
    let mut remaining = u - t;
    for &s in partition.parts() {
        ln += ln_binomial(remaining, s);
        remaining -= s;
    }
    for &c in partition.multiplicities().values() {
        ln -= ln_factorial(c);
    }
    ln.exp()
}

/// Binomial(n, p) probability mass at `k`.
pub fn binomial_pmf(n: usize, p: f64, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    match binomial_u128(n, k) {
        Some(c) if c < (1u128 << 100) => {
            c as f64 * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
        }
        _ => (ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()).exp(),
    }
}

/// `Σ` over injective placements of the slots onto distinct annuli of
/// `Π_slot P(annulus)^exponent`.
///
/// Slots with equal exponents are interchangeable, so the sum is evaluated
/// as `Π_e c_e!` times a dynamic program over annuli that tracks how many
/// slots of each exponent class are still unplaced.
fn ordered_injection_sum(classes: &[(usize, usize)], probs: &[f64]) -> f64 {
    let total_slots: usize = classes.iter().map(|&(_, c)| c).sum();
    if total_slots > probs.len() {
        return 0.0;
    }
    // mixed-radix encoding of the per-class remaining counts
    let radices: Vec<usize> = classes.iter().map(|&(_, c)| c + 1).collect();
    let states: usize = radices.iter().product();
    let mut strides = vec![1usize; classes.len()];
    for i in 1..classes.len() {
        strides[i] = strides[i - 1] * radices[i - 1];
    }
    let full: usize = classes.iter().zip(&strides).map(|(&(_, c), s)| c * s).sum();
    let mut dp = vec![0.0f64; states];
    dp[full] = 1.0;
    let mut next = vec![0.0f64; states];
    for &p in probs {
        let powers: Vec<f64> = classes.iter().map(|&(e, _)| p.powi(e as i32)).collect();
        next.copy_from_slice(&dp);
        for (state, &w) in dp.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (ci, &stride) in strides.iter().enumerate() {
                let remaining = (state / stride) % radices[ci];
                if remaining > 0 {
                    next[state - stride] += w * powers[ci];
                }
            }
        }
        std::mem::swap(&mut dp, &mut next);
    }
    let orderings: f64 = classes
        .iter()
        .map(|&(_, c)| ln_factorial(c))
        .sum::<f64>()
        .exp();
    dp[0] * orderings
}

fn slot_classes(t: usize, partition: &Partition) -> Vec<(usize, usize)> {
    let mut classes: Vec<(usize, usize)> = partition.multiplicities().into_iter().collect();
    if t > 0 {
        classes.push((1, t));
    }
    classes
}

/// Term of `P_u^t` contributed by one group shape.
fn allocation_term(u: usize, t: usize, partition: &Partition, probs: &[f64]) -> f64 {
    let weight = ordered_injection_sum(&slot_classes(t, partition), probs);
    if weight == 0.0 {
        return 0.0;
    }
    n_do_f64(u, t, partition) * weight
}

fn p_u_t_with(u: usize, t: usize, probs: &[f64]) -> f64 {
    let zeta = probs.len();
    if t > zeta {
        return 0.0;
    }
    partitions_min2_bounded(u - t, zeta - t)
        .iter()
        .map(|s| allocation_term(u, t, s, probs))
        .sum()
}

fn check_u_t(u: usize, t: usize) -> Result<()> {
    if u == 0 {
        return Err(invalid("at least one device must share the preamble"));
    }
    if t > u {
        return Err(invalid(format!("t = {t} exceeds u = {u}")));
    }
    if t + 1 == u {
        return Err(invalid(format!(
            "t = u - 1 = {t} is impossible: a single leftover device would own its TA"
        )));
    }
    Ok(())
}

/// Probability that exactly `t` of `u` co-preamble devices have a TA value
/// no other of them shares.
pub fn p_u_t(u: usize, t: usize, cell: &CellConfig) -> Result<f64> {
    check_u_t(u, t)?;
    Ok(p_u_t_with(u, t, &cell.annulus_probabilities()))
}

/// `P_u^t` for all `u <= u_max`, indexed `[u][t]`; invalid `(u, t)` pairs
/// hold zero.
#[derive(Debug, Clone)]
pub struct TaAllocationTable {
    rows: Vec<Vec<f64>>,
}

impl TaAllocationTable {
    pub fn new(cell: &CellConfig, u_max: usize) -> Self {
        let probs = cell.annulus_probabilities();
        let rows = (0..=u_max)
            .map(|u| {
                (0..=u)
                    .map(|t| {
                        if u == 0 || t + 1 == u {
                            0.0
                        } else {
                            p_u_t_with(u, t, &probs)
                        }
                    })
                    .collect()
            })
            .collect();
        Self { rows }
    }

    pub fn get(&self, u: usize, t: usize) -> f64 {
        self.rows
            .get(u)
            .and_then(|r| r.get(t))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn u_max(&self) -> usize {
        self.rows.len() - 1
    }
}

/// Per-device SIC success probability when `i` leftover devices share a
/// block and each picks one of the `L - 1` lower levels uniformly:
///
/// `Σ_{l=1}^{L-1} [Σ_{j=1}^{l-1} C(i-1,j) C(l-1,j) j! (L-1-l)^{i-j-1}
///  + (L-1-l)^{i-1}] / (L-1)^i`, with `0^0 = 1`.
pub fn p_i_s(i: usize, level_count: usize) -> f64 {
    assert!(i >= 1, "at least one device");
    assert!(level_count >= 2, "at least two power levels");
    let lower = (level_count - 1) as f64;
    let mut favourable = 0.0f64;
    for l in 1..level_count {
        let below = (level_count - 1 - l) as f64;
        // j devices occupy distinct levels above l, the others sit below it
        let mut cases = below.powi((i - 1) as i32);
        for j in 1..l {
            if j > i - 1 {
                break;
            }
            let arrangements = ln_binomial(i - 1, j) + ln_binomial(l - 1, j) + ln_factorial(j);
            cases += arrangements.exp().round() * below.powi((i - j - 1) as i32);
        }
        favourable += cases;
    }
    favourable / lower.powi(i as i32)
}

/// Expected successes among `u` co-preamble devices holding `t` blocks:
/// the `t` block owners plus the leftovers decoded by SIC.
pub fn n_ut_s(u: usize, t: usize, level_count: usize) -> f64 {
    if t == 0 || t > u {
        return 0.0;
    }
    let leftover = u - t;
    let p_block = 1.0 / t as f64;
    let from_leftovers: f64 = (1..=leftover)
        .map(|i| i as f64 * t as f64 * p_i_s(i, level_count) * binomial_pmf(leftover, p_block, i))
        .sum();
    t as f64 + from_leftovers
}

/// Expected decoded mMTC devices per slot with the default occupancy cutoff.
pub fn expected_mmtc_success(
    n_mmtc: usize,
    preambles: usize,
    level_count: usize,
    cell: &CellConfig,
) -> Result<f64> {
    expected_mmtc_success_with_cutoff(n_mmtc, preambles, level_count, cell, DEFAULT_PMF_CUTOFF)
}

/// As [`expected_mmtc_success`], skipping occupancies whose binomial mass
/// is below `pmf_cutoff` (pass `0.0` for the full sum).
pub fn expected_mmtc_success_with_cutoff(
    n_mmtc: usize,
    preambles: usize,
    level_count: usize,
    cell: &CellConfig,
    pmf_cutoff: f64,
) -> Result<f64> {
    Ok(
        mmtc_terms(n_mmtc, preambles, level_count, cell, pmf_cutoff)?
            .iter()
            .map(|term| term.contribution())
            .sum::<f64>()
            * preambles as f64,
    )
}

/// One `(u, t)` entry of the mMTC expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OccupancyTerm {
    pub u: usize,
    pub t: usize,
    /// `P_{N_M}^u`
    pub p_occupancy: f64,
    /// `P_u^t`
    pub p_allocation: f64,
    /// `N_{u,t}^s`
    pub expected_success: f64,
}

impl OccupancyTerm {
    fn contribution(&self) -> f64 {
        self.expected_success * self.p_allocation * self.p_occupancy
    }
}

fn validate_counts(n_mmtc: usize, preambles: usize, level_count: usize) -> Result<()> {
    if preambles == 0 {
        return Err(invalid("preamble pool must be non-empty"));
    }
    if level_count < 2 {
        return Err(invalid(format!(
            "at least two power levels are required, got {level_count}"
        )));
    }
    let _ = n_mmtc;
    Ok(())
}

fn mmtc_terms(
    n_mmtc: usize,
    preambles: usize,
    level_count: usize,
    cell: &CellConfig,
    pmf_cutoff: f64,
) -> Result<Vec<OccupancyTerm>> {
    validate_counts(n_mmtc, preambles, level_count)?;
    let p_pick = 1.0 / preambles as f64;
    let occupancies: Vec<(usize, f64)> = (1..=n_mmtc)
        .map(|u| (u, binomial_pmf(n_mmtc, p_pick, u)))
        .filter(|&(_, pmf)| pmf >= pmf_cutoff && pmf > 0.0)
        .collect();
    let u_max = occupancies.iter().map(|&(u, _)| u).max().unwrap_or(0);
    let table = TaAllocationTable::new(cell, u_max);
    let mut sic_cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut terms = Vec::new();
    for (u, pmf) in occupancies {
        for t in 1..=u {
            if t + 1 == u {
                continue;
            }
            let p_alloc = table.get(u, t);
            let success = *sic_cache
                .entry((u, t))
                .or_insert_with(|| n_ut_s(u, t, level_count));
            terms.push(OccupancyTerm {
                u,
                t,
                p_occupancy: pmf,
                p_allocation: p_alloc,
                expected_success: success,
            });
        }
    }
    Ok(terms)
}

/// Expected successes per slot for both device classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticReport {
    pub n_mmtc: usize,
    pub n_urllc: usize,
    pub preambles: usize,
    pub power_levels: usize,
    pub radius_m: f64,
    pub ta_unit_m: f64,
    pub p_lstm: f64,
    pub expected_mmtc_success: f64,
    pub expected_urllc_success: f64,
    pub expected_total: f64,
    #[serde(skip)]
    pub terms: Vec<OccupancyTerm>,
}

impl AnalyticReport {
    pub const CSV_HEADER: &'static str = "n_mmtc,n_urllc,preambles,power_levels,radius_m,ta_unit_m,p_lstm,expected_mmtc,expected_urllc,expected_total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.6},{:.6},{:.6}",
            self.n_mmtc,
            self.n_urllc,
            self.preambles,
            self.power_levels,
            self.radius_m,
            self.ta_unit_m,
            self.p_lstm,
            self.expected_mmtc_success,
            self.expected_urllc_success,
            self.expected_total
        )
    }
}

/// `N^s = N_U (1 - P_LSTM) + N_M^s`.
pub fn expected_total(
    n_mmtc: usize,
    n_urllc: usize,
    p_lstm: f64,
    preambles: usize,
    level_count: usize,
    cell: &CellConfig,
) -> Result<AnalyticReport> {
    if !(0.0..=1.0).contains(&p_lstm) {
        return Err(invalid(format!("P_LSTM must lie in [0, 1], got {p_lstm}")));
    }
    let terms = mmtc_terms(n_mmtc, preambles, level_count, cell, DEFAULT_PMF_CUTOFF)?;
    let mmtc = terms.iter().map(OccupancyTerm::contribution).sum::<f64>() * preambles as f64;
    let urllc = n_urllc as f64 * (1.0 - p_lstm);
    Ok(AnalyticReport {
        n_mmtc,
        n_urllc,
        preambles,
        power_levels: level_count,
        radius_m: cell.radius_m(),
        ta_unit_m: cell.ta_unit_m(),
        p_lstm,
        expected_mmtc_success: mmtc,
        expected_urllc_success: urllc,
        expected_total: mmtc + urllc,
        terms,
    })
}
