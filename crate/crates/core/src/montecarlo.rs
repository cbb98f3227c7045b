//! Seeded trial orchestration and simulation-vs-model comparison.
//!
//! Trial `i` draws from its own generator seeded with
//! `derive_seed(master_seed, i)`, so results do not depend on how trials are
//! spread across threads. Aggregation always walks trials in index order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic;
use crate::error::{invalid, Result};
use crate::protocol::{run_slot, spawn_mmtc, Device, DeviceId, Scheme, SlotConfig, SlotOutcome};

/// z-score of a two-sided 95% normal interval.
const Z95: f64 = 1.959_963_984_540_054;

/// SplitMix64 finalizer over `master ^ index·φ`.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trial_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, index))
}

/// Where each trial's URLLC actual/predicted counts come from.
#[derive(Debug, Clone, PartialEq)]
pub enum UrllcLoad {
    Fixed {
        actual: u32,
        predicted: u32,
    },
    /// Trial `i` reads index `i mod len` of both sequences.
    Trace {
        actual: Vec<u32>,
        predicted: Vec<u32>,
    },
    /// `count` devices every slot; the forecast falls one short with
    /// probability `p_lstm`.
    UnderPrediction {
        count: u32,
        p_lstm: f64,
    },
}

impl Default for UrllcLoad {
    fn default() -> Self {
        UrllcLoad::Fixed {
            actual: 0,
            predicted: 0,
        }
    }
}

impl UrllcLoad {
    fn validate(&self) -> Result<()> {
        match self {
            UrllcLoad::Trace { actual, predicted } => {
                if actual.is_empty() || actual.len() != predicted.len() {
                    return Err(invalid(
                        "URLLC trace needs equal, non-empty actual and predicted series",
                    ));
                }
            }
            UrllcLoad::UnderPrediction { p_lstm, .. } => {
                if !(0.0..=1.0).contains(p_lstm) {
                    return Err(invalid(format!("P_LSTM must lie in [0, 1], got {p_lstm}")));
                }
            }
            UrllcLoad::Fixed { .. } => {}
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, trial: usize, rng: &mut R) -> (u32, u32) {
        match self {
            UrllcLoad::Fixed { actual, predicted } => (*actual, *predicted),
            UrllcLoad::Trace { actual, predicted } => {
                let i = trial % actual.len();
                (actual[i], predicted[i])
            }
            UrllcLoad::UnderPrediction { count, p_lstm } => {
                let short = rng.gen::<f64>() < *p_lstm;
                (
                    *count,
                    if short {
                        count.saturating_sub(1)
                    } else {
                        *count
                    },
                )
            }
        }
    }
}

/// Runs `trials` independent slots (in parallel) and returns them in trial order.
pub fn run_outcomes(
    config: &SlotConfig,
    urllc: &UrllcLoad,
    trials: usize,
    master_seed: u64,
) -> Result<Vec<SlotOutcome>> {
    config.validate()?;
    urllc.validate()?;
    if trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(master_seed, i as u64);
            let (actual, predicted) = urllc.draw(i, &mut rng);
            let devices = spawn_mmtc(config.n_mmtc, &config.cell, &mut rng);
            run_slot(config, devices, actual, predicted, &mut rng)
        })
        .collect()
}

/// Mean, standard error and normal 95% interval of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// `None` for a single observation.
    pub std_error: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Summary {
        let values: Vec<f64> = values.into_iter().collect();
        let n = values.len();
        let mean = if n == 0 {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / n as f64
        };
        let std_error = (n > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        let half = std_error.map_or(0.0, |se| Z95 * se);
        Summary {
            count: n,
            mean,
            std_error,
            ci_low: mean - half,
            ci_high: mean + half,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialStats {
    pub label: String,
    pub sample_count: usize,
    pub decoded_mmtc: Summary,
    /// Fraction of slots in which every URLLC device was served.
    pub urllc_success_rate: f64,
    /// Decoded mMTC plus served URLLC devices per slot.
    pub total_success: Summary,
}

impl TrialStats {
    pub fn from_outcomes(label: impl Into<String>, outcomes: &[SlotOutcome]) -> TrialStats {
        let n = outcomes.len();
        let successes = outcomes.iter().filter(|o| o.urllc_success).count();
        TrialStats {
            label: label.into(),
            sample_count: n,
            decoded_mmtc: Summary::of(outcomes.iter().map(|o| o.decoded_count() as f64)),
            urllc_success_rate: if n == 0 {
                f64::NAN
            } else {
                successes as f64 / n as f64
            },
            total_success: Summary::of(
                outcomes
                    .iter()
                    .map(|o| o.decoded_count() as f64 + o.urllc_served() as f64),
            ),
        }
    }

    pub fn mean_decoded(&self) -> f64 {
        self.decoded_mmtc.mean
    }
}

pub fn config_label(config: &SlotConfig) -> String {
    format!(
        "R={} tau_p={} L={} N_M={} {}",
        config.cell.radius_m(),
        config.preamble_count,
        config.power_levels.level_count(),
        config.n_mmtc,
        config.scheme.label()
    )
}

pub fn run_trials(
    config: &SlotConfig,
    urllc: &UrllcLoad,
    trials: usize,
    master_seed: u64,
) -> Result<TrialStats> {
    let outcomes = run_outcomes(config, urllc, trials, master_seed)?;
    Ok(TrialStats::from_outcomes(config_label(config), &outcomes))
}

/// Simulated mean decoded mMTC next to the closed-form expectation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub stats: TrialStats,
    /// `None` where the model does not apply (random baseline, ACB).
    pub analytic: Option<f64>,
    /// `|sim - analytic| / analytic`.
    pub relative_gap: Option<f64>,
    pub analytic_in_ci: Option<bool>,
}

impl Comparison {
    pub const CSV_HEADER: &'static str =
        "radius_m,preambles,power_levels,n_mmtc,scheme,trials,sim_mean,std_error,ci_lo,ci_hi,analytic,gap,analytic_in_ci";

    pub fn csv_row(&self, config: &SlotConfig) -> String {
        let s = &self.stats.decoded_mmtc;
        format!(
            "{},{},{},{},{},{},{:.6},{},{:.6},{:.6},{},{},{}",
            config.cell.radius_m(),
            config.preamble_count,
            config.power_levels.level_count(),
            config.n_mmtc,
            config.scheme.label(),
            s.count,
            s.mean,
            s.std_error.map_or(String::new(), |v| format!("{v:.6}")),
            s.ci_low,
            s.ci_high,
            self.analytic.map_or(String::new(), |v| format!("{v:.6}")),
            self.relative_gap
                .map_or(String::new(), |v| format!("{v:.6}")),
            self.analytic_in_ci.map_or(String::new(), |v| v.to_string()),
        )
    }
}

/// Closed-form expectation for a configuration, when the model covers it.
pub fn analytic_mmtc(config: &SlotConfig) -> Result<Option<f64>> {
    if config.scheme != Scheme::LstmhRa || config.acb_factor.is_some() {
        return Ok(None);
    }
    analytic::expected_mmtc_success(
        config.n_mmtc,
        config.preamble_count,
        config.power_levels.level_count(),
        &config.cell,
    )
    .map(Some)
}

pub fn compare_analytic(
    config: &SlotConfig,
    trials: usize,
    master_seed: u64,
) -> Result<Comparison> {
    let stats = run_trials(config, &UrllcLoad::default(), trials, master_seed)?;
    let analytic = analytic_mmtc(config)?;
    let sim = stats.mean_decoded();
    let relative_gap = analytic.map(|a| {
        if a > 0.0 {
            (sim - a).abs() / a
        } else {
            (sim - a).abs()
        }
    });
    let analytic_in_ci = analytic.map(|a| stats.decoded_mmtc.contains(a));
    Ok(Comparison {
        stats,
        analytic,
        relative_gap,
        analytic_in_ci,
    })
}

/// Consecutive slots from one seed. With `reentry`, mMTC devices that fail
/// a slot contend again in the next one alongside `n_mmtc` fresh arrivals.
pub fn run_sequential(
    config: &SlotConfig,
    urllc: &UrllcLoad,
    slots: usize,
    master_seed: u64,
    reentry: bool,
) -> Result<Vec<SlotOutcome>> {
    config.validate()?;
    urllc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, u64::MAX));
    let mut next_id: DeviceId = 0;
    let mut backlog: Vec<Device> = Vec::new();
    let mut out = Vec::with_capacity(slots);
    for slot in 0..slots {
        let mut fresh = spawn_mmtc(config.n_mmtc, &config.cell, &mut rng);
        for d in fresh.iter_mut() {
            d.id = next_id;
            next_id += 1;
        }
        let mut contenders = std::mem::take(&mut backlog);
        contenders.extend(fresh);
        let (actual, predicted) = urllc.draw(slot, &mut rng);
        let outcome = run_slot(config, contenders.clone(), actual, predicted, &mut rng)?;
        if reentry {
            backlog = contenders
                .into_iter()
                .filter(|d| !outcome.decoded_mmtc.contains(&d.id))
                .collect();
        }
        out.push(outcome);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CellConfig;
    use crate::sic::build_levels;

    fn config(n: usize) -> SlotConfig {
        SlotConfig::new(
            CellConfig::with_radius(624.0).unwrap(),
            28,
            build_levels(3, 1.0).unwrap(),
            n,
        )
        .unwrap()
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        let seeds: std::collections::BTreeSet<u64> =
            (0..10_000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let a = run_trials(&config(100), &UrllcLoad::default(), 500, 42).unwrap();
        let b = run_trials(&config(100), &UrllcLoad::default(), 500, 42).unwrap();
        assert_eq!(a, b);
        let c = run_trials(&config(100), &UrllcLoad::default(), 500, 43).unwrap();
        assert_ne!(a.decoded_mmtc.mean, c.decoded_mmtc.mean);
    }

    #[test]
    fn independent_of_thread_count() {
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let wide = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = serial.install(|| run_trials(&config(100), &UrllcLoad::default(), 300, 9).unwrap());
        let b = wide.install(|| run_trials(&config(100), &UrllcLoad::default(), 300, 9).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn single_trial_has_no_standard_error() {
        let s = run_trials(&config(100), &UrllcLoad::default(), 1, 1).unwrap();
        assert_eq!(s.sample_count, 1);
        assert!(s.decoded_mmtc.std_error.is_none());
        assert_eq!(s.decoded_mmtc.ci_low, s.decoded_mmtc.mean);
        assert!(run_trials(&config(100), &UrllcLoad::default(), 0, 1).is_err());
    }

    #[test]
    fn lone_device_mean_is_exactly_one() {
        let s = run_trials(&config(1), &UrllcLoad::default(), 10_000, 5).unwrap();
        assert_eq!(s.decoded_mmtc.mean, 1.0);
        let c = compare_analytic(&config(1), 2_000, 5).unwrap();
        assert!(c.relative_gap.unwrap() < 1e-12);
    }

    #[test]
    fn random_baseline_has_no_analytic_column() {
        let c = compare_analytic(&config(100).with_scheme(Scheme::Random), 100, 5).unwrap();
        assert!(c.analytic.is_none() && c.relative_gap.is_none());
        let row = c.csv_row(&config(100).with_scheme(Scheme::Random));
        assert_eq!(
            row.split(',').count(),
            Comparison::CSV_HEADER.split(',').count()
        );
    }

    #[test]
    fn standard_error_scales_with_root_trials() {
        let small = run_trials(&config(100), &UrllcLoad::default(), 100, 3).unwrap();
        let large = run_trials(&config(100), &UrllcLoad::default(), 10_000, 3).unwrap();
        let ratio = small.decoded_mmtc.std_error.unwrap() / large.decoded_mmtc.std_error.unwrap();
        assert!((ratio / 10.0 - 1.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn ci_contains_mean() {
        let s = run_trials(&config(100), &UrllcLoad::default(), 200, 4).unwrap();
        assert!(s.decoded_mmtc.contains(s.decoded_mmtc.mean));
        assert!(s.decoded_mmtc.std_error.unwrap() >= 0.0);
    }

    #[test]
    fn urllc_loads() {
        let fixed = run_trials(
            &config(10),
            &UrllcLoad::Fixed {
                actual: 5,
                predicted: 4,
            },
            50,
            1,
        )
        .unwrap();
        assert_eq!(fixed.urllc_success_rate, 0.0);
        let trace = UrllcLoad::Trace {
            actual: vec![3, 6],
            predicted: vec![4, 5],
        };
        let s = run_trials(&config(10), &trace, 100, 1).unwrap();
        assert_eq!(s.urllc_success_rate, 0.5);
        let under = UrllcLoad::UnderPrediction {
            count: 5,
            p_lstm: 0.1,
        };
        let s = run_trials(&config(0), &under, 20_000, 1).unwrap();
        assert!((s.urllc_success_rate - 0.9).abs() < 0.01);
        assert!((s.total_success.mean - 4.5).abs() < 0.05);
        assert!(run_trials(
            &config(10),
            &UrllcLoad::Trace {
                actual: vec![],
                predicted: vec![]
            },
            10,
            1
        )
        .is_err());
    }

    #[test]
    fn reentry_grows_the_contender_pool() {
        let cfg = config(60);
        let without = run_sequential(&cfg, &UrllcLoad::default(), 30, 2, false).unwrap();
        let with = run_sequential(&cfg, &UrllcLoad::default(), 30, 2, true).unwrap();
        let load = |o: &[SlotOutcome]| -> usize {
            o.iter()
                .map(|s| s.per_preamble.iter().map(|p| p.occupancy).sum::<usize>())
                .sum()
        };
        assert_eq!(load(&without), 60 * 30);
        assert!(load(&with) > 60 * 30);
        assert_eq!(
            with[0]
                .per_preamble
                .iter()
                .map(|p| p.occupancy)
                .sum::<usize>(),
            60
        );
    }
}
