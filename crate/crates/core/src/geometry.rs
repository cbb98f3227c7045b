//! Cell geometry and timing-advance quantization.
//!
//! The base station sits at the center of a disc of radius `R`. Round-trip
//! delay is quantized with granularity `d` (in meters of one-way distance
//! that is `d/2`), which slices the disc into `ζ = ceil(2R/d)` concentric
//! annuli. All devices in one annulus report the same TA index.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// TA granularity used throughout the simulations, in meters.
pub const DEFAULT_TA_UNIT_M: f64 = 156.0;

/// Radius and TA granularity of a single cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCell", into = "RawCell")]
pub struct CellConfig {
    radius_m: f64,
    ta_unit_m: f64,
    annulus_count: usize,
}

#[derive(Serialize, Deserialize)]
struct RawCell {
    radius_m: f64,
    #[serde(default = "default_ta_unit")]
    ta_unit_m: f64,
}

fn default_ta_unit() -> f64 {
    DEFAULT_TA_UNIT_M
}

impl TryFrom<RawCell> for CellConfig {
    type Error = Error;

    fn try_from(raw: RawCell) -> Result<Self> {
        CellConfig::new(raw.radius_m, raw.ta_unit_m)
    }
}

impl From<CellConfig> for RawCell {
    fn from(cell: CellConfig) -> Self {
        RawCell {
            radius_m: cell.radius_m,
            ta_unit_m: cell.ta_unit_m,
        }
    }
}

impl CellConfig {
    pub fn new(radius_m: f64, ta_unit_m: f64) -> Result<Self> {
        let annulus_count = max_ta(radius_m, ta_unit_m)?;
        if ta_unit_m > 2.0 * radius_m {
            return Err(invalid(format!(
                "TA unit {ta_unit_m} m exceeds the cell diameter {}",
                2.0 * radius_m
            )));
        }
        Ok(Self {
            radius_m,
            ta_unit_m,
            annulus_count,
        })
    }

    /// Cell of the given radius with the default 156 m TA unit.
    pub fn with_radius(radius_m: f64) -> Result<Self> {
        Self::new(radius_m, DEFAULT_TA_UNIT_M)
    }

    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }

    pub fn ta_unit_m(&self) -> f64 {
        self.ta_unit_m
    }

    /// Number of distinct TA values in the cell (ζ).
    pub fn annulus_count(&self) -> usize {
        self.annulus_count
    }

    /// Radial width of one annulus.
    pub fn annulus_width_m(&self) -> f64 {
        self.ta_unit_m / 2.0
    }

    /// Occupancy probabilities of annuli `1..=ζ`, in order.
    pub fn annulus_probabilities(&self) -> Vec<f64> {
        (1..=self.annulus_count)
            .map(|k| annulus_probability_unchecked(k, self))
            .collect()
    }
}

/// Largest TA index in a cell: `ceil(2R/d)`.
pub fn max_ta(radius_m: f64, ta_unit_m: f64) -> Result<usize> {
    if !(radius_m > 0.0 && radius_m.is_finite()) {
        return Err(invalid(format!(
            "cell radius must be positive, got {radius_m}"
        )));
    }
    if !(ta_unit_m > 0.0 && ta_unit_m.is_finite()) {
        return Err(invalid(format!(
            "TA unit must be positive, got {ta_unit_m}"
        )));
    }
    Ok((2.0 * radius_m / ta_unit_m).ceil() as usize)
}

/// Maps a device distance to its 1-based annulus (TA) index.
///
/// A distance sitting exactly on an annulus edge belongs to the inner
/// annulus; the center maps to annulus 1.
pub fn quantize_ta(distance_m: f64, config: &CellConfig) -> Result<usize> {
    if !(distance_m >= 0.0) {
        return Err(invalid(format!(
            "distance must be non-negative, got {distance_m}"
        )));
    }
    if distance_m > config.radius_m {
        return Err(Error::OutOfCell {
            distance_m,
            radius_m: config.radius_m,
        });
    }
    let k = (distance_m / config.annulus_width_m()).ceil() as usize;
    Ok(k.clamp(1, config.annulus_count))
}

/// Probability that a uniformly placed device lands in annulus `k`.
pub fn annulus_probability(k: usize, config: &CellConfig) -> Result<f64> {
    if k == 0 || k > config.annulus_count {
        return Err(invalid(format!(
            "annulus index {k} outside 1..={}",
            config.annulus_count
        )));
    }
    Ok(annulus_probability_unchecked(k, config))
}

fn annulus_probability_unchecked(k: usize, config: &CellConfig) -> f64 {
    let d2 = config.ta_unit_m * config.ta_unit_m;
    let r2 = config.radius_m * config.radius_m;
    let k = k as f64;
    if (k as usize) < config.annulus_count {
        d2 * (2.0 * k - 1.0) / (4.0 * r2)
    } else {
        1.0 - d2 * (k - 1.0) * (k - 1.0) / (4.0 * r2)
    }
}

/// Inverse CDF of the radial distance of a uniform point in the disc.
pub fn distance_from_uniform(u: f64, config: &CellConfig) -> f64 {
    config.radius_m * u.clamp(0.0, 1.0).sqrt()
}

/// Draws the distance of a device placed uniformly in the cell.
pub fn sample_device_distance<R: Rng + ?Sized>(rng: &mut R, config: &CellConfig) -> f64 {
    distance_from_uniform(rng.gen::<f64>(), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell(r: f64) -> CellConfig {
        CellConfig::new(r, 156.0).unwrap()
    }

    #[test]
    fn max_ta_examples() {
        assert_eq!(max_ta(624.0, 156.0).unwrap(), 8);
        assert_eq!(max_ta(1500.0, 156.0).unwrap(), 20);
        assert_eq!(max_ta(78.0, 156.0).unwrap(), 1);
        assert_eq!(max_ta(1000.0, 156.0).unwrap(), 13);
    }

    #[test]
    fn max_ta_rejects_non_positive() {
        assert!(matches!(
            max_ta(0.0, 156.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            max_ta(624.0, -1.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(CellConfig::new(50.0, 156.0).is_err());
    }

    #[test]
    fn quantize_examples() {
        let c = cell(624.0);
        assert_eq!(quantize_ta(0.0, &c).unwrap(), 1);
        assert_eq!(quantize_ta(100.0, &c).unwrap(), 2);
        assert_eq!(quantize_ta(624.0, &c).unwrap(), 8);
        // edge goes to the inner annulus
        assert_eq!(quantize_ta(156.0, &c).unwrap(), 2);
        assert_eq!(quantize_ta(156.0001, &c).unwrap(), 3);
    }

    #[test]
    fn quantize_clamps_partial_last_annulus() {
        // 2R/d = 19.23: the 20th annulus is only partially inside the cell.
        let c = cell(1500.0);
        assert_eq!(quantize_ta(1500.0, &c).unwrap(), 20);
        assert_eq!(quantize_ta(1490.0, &c).unwrap(), 20);
    }

    #[test]
    fn quantize_rejects_outside() {
        let c = cell(624.0);
        assert!(matches!(
            quantize_ta(625.0, &c),
            Err(Error::OutOfCell { .. })
        ));
    }

    #[test]
    fn annulus_probability_examples() {
        let c = cell(624.0);
        assert!((annulus_probability(1, &c).unwrap() - 1.0 / 64.0).abs() < 1e-15);
        assert!((annulus_probability(8, &c).unwrap() - 15.0 / 64.0).abs() < 1e-15);
        let total: f64 = (1..=8).map(|k| annulus_probability(k, &c).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(annulus_probability(0, &c).is_err());
        assert!(annulus_probability(9, &c).is_err());
    }

    #[test]
    fn strictly_increasing_when_cell_edge_is_an_annulus_edge() {
        let c = cell(624.0);
        let p = c.annulus_probabilities();
        for w in p[..7].windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn inverse_cdf_endpoints() {
        let c = cell(624.0);
        assert_eq!(distance_from_uniform(0.0, &c), 0.0);
        assert_eq!(distance_from_uniform(1.0, &c), 624.0);
    }

    #[test]
    fn empirical_annulus_frequencies_match() {
        let c = cell(1000.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000usize;
        let mut counts = vec![0usize; c.annulus_count()];
        for _ in 0..n {
            let k = quantize_ta(sample_device_distance(&mut rng, &c), &c).unwrap();
            counts[k - 1] += 1;
        }
        for (k, &cnt) in counts.iter().enumerate() {
            let p = annulus_probability(k + 1, &c).unwrap();
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let freq = cnt as f64 / n as f64;
            assert!(
                (freq - p).abs() < 3.0 * se + 1e-12,
                "annulus {}: {freq} vs {p}",
                k + 1
            );
        }
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(radius in 80.0f64..5000.0, unit in 20.0f64..160.0) {
            prop_assume!(unit <= 2.0 * radius);
            let c = CellConfig::new(radius, unit).unwrap();
            let total: f64 = c.annulus_probabilities().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(c.annulus_probabilities().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }

        #[test]
        fn quantized_index_brackets_distance(frac in 0.0f64..=1.0) {
            let c = cell(1000.0);
            let x = frac * c.radius_m();
            let k = quantize_ta(x, &c).unwrap();
            let w = c.annulus_width_m();
            prop_assert!(k >= 1 && k <= c.annulus_count());
            if x > 0.0 {
                prop_assert!(((k - 1) as f64) * w < x);
                prop_assert!(x <= (k as f64) * w || k == c.annulus_count());
            }
        }
    }
}
