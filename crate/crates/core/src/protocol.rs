//! One random-access slot of the hybrid scheme.
//!
//! mMTC devices (optionally thinned by access class barring) pick a preamble
//! at random. For every preamble the base station grants one resource block
//! per TA value held by exactly one of its contenders. A device whose TA
//! matches a grant transmits at the top power level on that block; the
//! others pick a block of their preamble and one of the lower levels at
//! random. Each block is then resolved by SIC.
//!
//! URLLC devices skip contention: the slot succeeds for all of them iff the
//! predicted count covers the actual one.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{quantize_ta, sample_device_distance, CellConfig};
use crate::phy;
use crate::sic::{sic_decode, PowerLevelSet};

pub type DeviceId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceClass {
    Mmtc,
    Urllc,
}

/// Uplink resource block granted in a RAR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub id: DeviceId,
    pub class: DeviceClass,
    pub distance_m: f64,
    /// 1-based annulus index.
    pub ta: usize,
    pub preamble: Option<usize>,
    pub power_level: Option<usize>,
    pub resource_block: Option<BlockId>,
}

impl Device {
    pub fn new(
        id: DeviceId,
        class: DeviceClass,
        distance_m: f64,
        cell: &CellConfig,
    ) -> Result<Self> {
        Ok(Self {
            id,
            class,
            distance_m,
            ta: quantize_ta(distance_m, cell)?,
            preamble: None,
            power_level: None,
            resource_block: None,
        })
    }

    pub fn mmtc(id: DeviceId, distance_m: f64, cell: &CellConfig) -> Result<Self> {
        Self::new(id, DeviceClass::Mmtc, distance_m, cell)
    }

    /// Device with a given TA and an arbitrary in-annulus distance.
    pub fn at_annulus(id: DeviceId, ta: usize, cell: &CellConfig) -> Result<Self> {
        if ta == 0 || ta > cell.annulus_count() {
            return Err(invalid(format!(
                "annulus {ta} outside 1..={}",
                cell.annulus_count()
            )));
        }
        let w = cell.annulus_width_m();
        let distance = ((ta as f64 - 0.5) * w).min(cell.radius_m());
        let mut d = Self::mmtc(id, distance, cell)?;
        d.ta = ta;
        Ok(d)
    }

    fn reset_choices(&mut self) {
        self.preamble = None;
        self.power_level = None;
        self.resource_block = None;
    }
}

/// Places `count` active mMTC devices uniformly in the cell, ids `0..count`.
pub fn spawn_mmtc<R: Rng + ?Sized>(count: usize, cell: &CellConfig, rng: &mut R) -> Vec<Device> {
    (0..count)
        .map(|i| {
            let distance = sample_device_distance(rng, cell);
            Device::mmtc(i as DeviceId, distance, cell).expect("sampled inside the cell")
        })
        .collect()
}

/// Power/block strategy for devices that contend on a preamble.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// TA-unique devices take the top level on their own block.
    #[default]
    #[serde(rename = "lstmh-ra")]
    LstmhRa,
    /// Every contender draws block and level uniformly.
    #[serde(rename = "random")]
    Random,
}

impl Scheme {
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::LstmhRa => "lstmh-ra",
            Scheme::Random => "random",
        }
    }
}

/// How the base station finds TA-collision-free contenders.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Detection {
    /// Every annulus with exactly one contender is found.
    #[default]
    Ideal,
    /// Preambles are synthesized and detected by circular correlation; an
    /// annulus is granted only if its lag is detected and it has exactly one
    /// contender (ID decodable).
    Correlator(CorrelatorSettings),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatorSettings {
    pub antennas: usize,
    pub noise_variance: f64,
    pub preamble_length: usize,
    /// Defaults to [`phy::calibrated_threshold`].
    pub threshold: Option<f64>,
}

impl Default for CorrelatorSettings {
    fn default() -> Self {
        Self {
            antennas: 128,
            noise_variance: 0.1,
            preamble_length: phy::DEFAULT_PREAMBLE_LENGTH,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotConfig {
    pub cell: CellConfig,
    pub preamble_count: usize,
    pub power_levels: PowerLevelSet,
    pub n_mmtc: usize,
    /// Access class barring pass probability; `None` disables the gate.
    pub acb_factor: Option<f64>,
    pub scheme: Scheme,
    pub detection: Detection,
}

impl SlotConfig {
    pub fn new(
        cell: CellConfig,
        preamble_count: usize,
        power_levels: PowerLevelSet,
        n_mmtc: usize,
    ) -> Result<Self> {
        let cfg = Self {
            cell,
            preamble_count,
            power_levels,
            n_mmtc,
            acb_factor: None,
            scheme: Scheme::LstmhRa,
            detection: Detection::Ideal,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.preamble_count == 0 {
            return Err(invalid("preamble pool must be non-empty"));
        }
        if let Some(f) = self.acb_factor {
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid(format!("ACB factor must lie in [0, 1], got {f}")));
            }
        }
        if let Detection::Correlator(c) = &self.detection {
            if self.preamble_count >= c.preamble_length {
                return Err(invalid(format!(
                    "{} preambles need distinct ZC roots below length {}",
                    self.preamble_count, c.preamble_length
                )));
            }
            if self.cell.annulus_count() > c.preamble_length {
                return Err(invalid("cell has more annuli than preamble cyclic shifts"));
            }
        }
        Ok(())
    }
}

/// Random access response: grant of one block to one (preamble, TA) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rar {
    pub preamble: usize,
    pub ta: usize,
    pub block: BlockId,
}

/// Per-preamble accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PreambleStats {
    pub preamble: usize,
    /// Contenders `u`.
    pub occupancy: usize,
    /// Blocks granted `t`.
    pub blocks: usize,
    pub decoded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub decoded_mmtc: BTreeSet<DeviceId>,
    pub urllc_success: bool,
    pub urllc_count_actual: u32,
    pub urllc_count_predicted: u32,
    /// Preambles chosen by at least one device, ascending.
    pub per_preamble: Vec<PreambleStats>,
}

impl SlotOutcome {
    pub const CSV_HEADER: &'static str = "slot,decoded_mmtc,urllc_actual,urllc_predicted,urllc_success,active_preambles,contenders,blocks_allocated,max_occupancy";

    pub fn decoded_count(&self) -> usize {
        self.decoded_mmtc.len()
    }

    /// URLLC devices served in this slot.
    pub fn urllc_served(&self) -> u32 {
        if self.urllc_success {
            self.urllc_count_actual
        } else {
            0
        }
    }

    pub fn csv_row(&self, slot: u64) -> String {
        let contenders: usize = self.per_preamble.iter().map(|p| p.occupancy).sum();
        let blocks: usize = self.per_preamble.iter().map(|p| p.blocks).sum();
        let max_occ = self
            .per_preamble
            .iter()
            .map(|p| p.occupancy)
            .max()
            .unwrap_or(0);
        format!(
            "{slot},{},{},{},{},{},{contenders},{blocks},{max_occ}",
            self.decoded_mmtc.len(),
            self.urllc_count_actual,
            self.urllc_count_predicted,
            self.urllc_success as u8,
            self.per_preamble.len(),
        )
    }
}

/// Keeps each mMTC device with probability `factor`; URLLC devices pass.
pub fn acb_gate<R: Rng + ?Sized>(devices: Vec<Device>, factor: f64, rng: &mut R) -> Vec<Device> {
    devices
        .into_iter()
        .filter(|d| d.class == DeviceClass::Urllc || rng.gen::<f64>() < factor)
        .collect()
}

/// Each device picks a preamble in `1..=preamble_count` uniformly.
pub fn select_preambles<R: Rng + ?Sized>(
    devices: &mut [Device],
    preamble_count: usize,
    rng: &mut R,
) {
    for d in devices.iter_mut() {
        d.preamble = Some(rng.gen_range(1..=preamble_count));
    }
}

/// Groups devices by chosen preamble.
pub fn group_by_preamble(devices: &[Device]) -> BTreeMap<usize, Vec<Device>> {
    let mut map: BTreeMap<usize, Vec<Device>> = BTreeMap::new();
    for d in devices {
        if let Some(p) = d.preamble {
            map.entry(p).or_default().push(d.clone());
        }
    }
    map
}

/// RARs granted per preamble.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Allocation {
    pub rars: BTreeMap<usize, Vec<Rar>>,
}

impl Allocation {
    pub fn rars_for(&self, preamble: usize) -> &[Rar] {
        self.rars.get(&preamble).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Blocks granted on a preamble (`t`).
    pub fn blocks_for(&self, preamble: usize) -> usize {
        self.rars_for(preamble).len()
    }
}

fn singleton_tas(occupants: &[Device]) -> BTreeSet<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for d in occupants {
        *counts.entry(d.ta).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .filter(|&(_, n)| n == 1)
        .map(|(ta, _)| ta)
        .collect()
}

fn grant(found: BTreeMap<usize, BTreeSet<usize>>) -> Allocation {
    let mut next = 0u32;
    let rars = found
        .into_iter()
        .map(|(preamble, tas)| {
            let list = tas
                .into_iter()
                .map(|ta| {
                    let block = BlockId(next);
                    next += 1;
                    Rar {
                        preamble,
                        ta,
                        block,
                    }
                })
                .collect();
            (preamble, list)
        })
        .collect();
    Allocation { rars }
}

/// Ideal detection: one RAR per TA value held by exactly one contender.
pub fn detect_and_allocate(occupants: &BTreeMap<usize, Vec<Device>>) -> Allocation {
    grant(
        occupants
            .iter()
            .map(|(&p, devs)| (p, singleton_tas(devs)))
            .collect(),
    )
}

/// Correlator-based detection; see [`Detection::Correlator`].
pub fn detect_and_allocate_correlator<R: Rng + ?Sized>(
    occupants: &BTreeMap<usize, Vec<Device>>,
    settings: &CorrelatorSettings,
    cell: &CellConfig,
    rng: &mut R,
) -> Result<Allocation> {
    let threshold = settings.threshold.unwrap_or_else(|| {
        phy::calibrated_threshold(settings.noise_variance, settings.preamble_length)
    });
    let mut found = BTreeMap::new();
    for (&p, devs) in occupants {
        let zc = phy::generate_zc(p, settings.preamble_length)?;
        let transmissions: Vec<phy::PreambleTransmission> = devs
            .iter()
            .map(|d| phy::PreambleTransmission {
                preamble: 0,
                annulus: d.ta,
                fading: phy::rayleigh_fading(settings.antennas, rng),
            })
            .collect();
        let pool = std::slice::from_ref(&zc);
        let signal = phy::synthesize_received(
            pool,
            &transmissions,
            settings.antennas,
            settings.noise_variance,
            rng,
        )?;
        let detected = phy::correlate_detect_within(&signal, &zc, threshold, cell.annulus_count())?;
        let unique = singleton_tas(devs);
        found.insert(p, detected.intersection(&unique).copied().collect());
    }
    Ok(grant(found))
}

/// Step 3 under the TA-aided scheme.
///
/// A device whose TA appears in one of its preamble's RARs takes level 1 on
/// that block. Otherwise it draws a block from its preamble's RARs and a
/// level from `2..=L`; with no RAR on its preamble it is left without a
/// block and fails the slot.
pub fn select_power_and_block<R: Rng + ?Sized>(
    mut device: Device,
    rars: &[Rar],
    power_levels: &PowerLevelSet,
    rng: &mut R,
) -> Device {
    if let Some(rar) = rars.iter().find(|r| r.ta == device.ta) {
        device.power_level = Some(1);
        device.resource_block = Some(rar.block);
    } else if let Some(rar) = rars.choose(rng) {
        device.resource_block = Some(rar.block);
        device.power_level = Some(rng.gen_range(2..=power_levels.level_count()));
    } else {
        device.power_level = None;
        device.resource_block = None;
    }
    device
}

/// Step 3 under the random-power baseline: block and level (`1..=L`) are
/// both uniform for every contender.
pub fn select_power_and_block_random<R: Rng + ?Sized>(
    mut device: Device,
    rars: &[Rar],
    power_levels: &PowerLevelSet,
    rng: &mut R,
) -> Device {
    if let Some(rar) = rars.choose(rng) {
        device.resource_block = Some(rar.block);
        device.power_level = Some(rng.gen_range(1..=power_levels.level_count()));
    } else {
        device.power_level = None;
        device.resource_block = None;
    }
    device
}

/// Runs Steps 1-4 for the given mMTC population and URLLC counts.
pub fn run_slot<R: Rng + ?Sized>(
    config: &SlotConfig,
    mmtc: Vec<Device>,
    urllc_actual: u32,
    urllc_predicted: u32,
    rng: &mut R,
) -> Result<SlotOutcome> {
    config.validate()?;
    let mut active = match config.acb_factor {
        Some(f) => acb_gate(mmtc, f, rng),
        None => mmtc,
    };
    for d in active.iter_mut() {
        d.reset_choices();
    }
    select_preambles(&mut active, config.preamble_count, rng);
    let occupants = group_by_preamble(&active);
    let allocation = match &config.detection {
        Detection::Ideal => detect_and_allocate(&occupants),
        Detection::Correlator(s) => {
            detect_and_allocate_correlator(&occupants, s, &config.cell, rng)?
        }
    };

    let mut decoded_mmtc = BTreeSet::new();
    let mut per_preamble = Vec::with_capacity(occupants.len());
    for (&p, devs) in &occupants {
        let rars = allocation.rars_for(p);
        let mut blocks: BTreeMap<BlockId, Vec<(DeviceId, usize)>> = BTreeMap::new();
        for d in devs {
            let d = match config.scheme {
                Scheme::LstmhRa => {
                    select_power_and_block(d.clone(), rars, &config.power_levels, rng)
                }
                Scheme::Random => {
                    select_power_and_block_random(d.clone(), rars, &config.power_levels, rng)
                }
            };
            if let (Some(b), Some(l)) = (d.resource_block, d.power_level) {
                blocks.entry(b).or_default().push((d.id, l));
            }
        }
        let mut decoded = 0;
        for assignments in blocks.values() {
            let ok = sic_decode(assignments);
            decoded += ok.len();
            decoded_mmtc.extend(ok);
        }
        per_preamble.push(PreambleStats {
            preamble: p,
            occupancy: devs.len(),
            blocks: rars.len(),
            decoded,
        });
    }

    Ok(SlotOutcome {
        decoded_mmtc,
        urllc_success: urllc_predicted >= urllc_actual,
        urllc_count_actual: urllc_actual,
        urllc_count_predicted: urllc_predicted,
        per_preamble,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sic::build_levels;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell() -> CellConfig {
        CellConfig::with_radius(624.0).unwrap()
    }

    fn config(preambles: usize, levels: usize, n: usize) -> SlotConfig {
        SlotConfig::new(cell(), preambles, build_levels(levels, 1.0).unwrap(), n).unwrap()
    }

    fn devices_at(tas: &[usize]) -> Vec<Device> {
        tas.iter()
            .enumerate()
            .map(|(i, &ta)| {
                let mut d = Device::at_annulus(i as DeviceId, ta, &cell()).unwrap();
                d.preamble = Some(1);
                d
            })
            .collect()
    }

    #[test]
    fn at_annulus_is_consistent_with_quantization() {
        let c = cell();
        for ta in 1..=c.annulus_count() {
            let d = Device::at_annulus(0, ta, &c).unwrap();
            assert_eq!(quantize_ta(d.distance_m, &c).unwrap(), ta);
        }
    }

    #[test]
    fn acb_extremes_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut devs = spawn_mmtc(10_000, &cell(), &mut rng);
        devs.push(Device::new(99_999, DeviceClass::Urllc, 10.0, &cell()).unwrap());
        assert_eq!(acb_gate(devs.clone(), 1.0, &mut rng).len(), devs.len());
        let none = acb_gate(devs.clone(), 0.0, &mut rng);
        assert_eq!(none.len(), 1);
        assert_eq!(none[0].class, DeviceClass::Urllc);
        let half = acb_gate(devs, 0.5, &mut rng).len() - 1;
        let frac = half as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&frac), "{frac}");
    }

    #[test]
    fn single_preamble_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut devs = spawn_mmtc(50, &cell(), &mut rng);
        select_preambles(&mut devs, 1, &mut rng);
        assert!(devs.iter().all(|d| d.preamble == Some(1)));
    }

    #[test]
    fn preamble_occupancy_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let slots = 10_000;
        let mut total = vec![0usize; 28];
        for _ in 0..slots {
            let mut devs = spawn_mmtc(100, &cell(), &mut rng);
            select_preambles(&mut devs, 28, &mut rng);
            for d in devs {
                total[d.preamble.unwrap() - 1] += 1;
            }
        }
        let expected = 100.0 / 28.0;
        for (p, &n) in total.iter().enumerate() {
            let mean = n as f64 / slots as f64;
            assert!(
                (mean / expected - 1.0).abs() < 0.02,
                "preamble {}: {mean}",
                p + 1
            );
        }
    }

    #[test]
    fn allocation_examples() {
        let occ = BTreeMap::from([(1, devices_at(&[1, 1, 2, 3]))]);
        let a = detect_and_allocate(&occ);
        let tas: Vec<usize> = a.rars_for(1).iter().map(|r| r.ta).collect();
        assert_eq!(tas, vec![2, 3]);
        assert_eq!(a.blocks_for(1), 2);

        let a = detect_and_allocate(&BTreeMap::from([(1, devices_at(&[5]))]));
        assert_eq!(a.blocks_for(1), 1);
        let a = detect_and_allocate(&BTreeMap::from([(1, devices_at(&[2, 2]))]));
        assert_eq!(a.blocks_for(1), 0);
    }

    #[test]
    fn blocks_are_distinct_across_preambles() {
        let occ = BTreeMap::from([(1, devices_at(&[1, 2])), (4, devices_at(&[1, 3]))]);
        let a = detect_and_allocate(&occ);
        let blocks: BTreeSet<BlockId> = a.rars.values().flatten().map(|r| r.block).collect();
        assert_eq!(blocks.len(), 4);
    }

    #[test]
    fn power_and_block_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let levels = build_levels(3, 1.0).unwrap();
        let devs = devices_at(&[1, 1, 2, 3, 4, 5]);
        let occ = BTreeMap::from([(1, devs.clone())]);
        let a = detect_and_allocate(&occ);
        let rars = a.rars_for(1);
        assert_eq!(rars.len(), 4);

        let matched = select_power_and_block(devs[2].clone(), rars, &levels, &mut rng);
        assert_eq!(matched.power_level, Some(1));
        assert_eq!(
            matched.resource_block,
            rars.iter().find(|r| r.ta == 2).map(|r| r.block)
        );

        let mut level_hits = [0usize; 4];
        let mut block_hits: BTreeMap<BlockId, usize> = BTreeMap::new();
        for _ in 0..20_000 {
            let d = select_power_and_block(devs[0].clone(), rars, &levels, &mut rng);
            level_hits[d.power_level.unwrap()] += 1;
            *block_hits.entry(d.resource_block.unwrap()).or_insert(0) += 1;
        }
        assert_eq!(level_hits[1], 0);
        assert!((level_hits[2] as f64 / 20_000.0 - 0.5).abs() < 0.02);
        assert_eq!(block_hits.len(), 4);
        for n in block_hits.values() {
            assert!((*n as f64 / 20_000.0 - 0.25).abs() < 0.02);
        }

        let dropped = select_power_and_block(devs[0].clone(), &[], &levels, &mut rng);
        assert_eq!(dropped.resource_block, None);
        assert_eq!(dropped.power_level, None);
    }

    #[test]
    fn random_baseline_uses_every_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let levels = build_levels(3, 1.0).unwrap();
        let devs = devices_at(&[1, 2]);
        let a = detect_and_allocate(&BTreeMap::from([(1, devs.clone())]));
        let mut seen = BTreeSet::new();
        for _ in 0..200 {
            seen.insert(
                select_power_and_block_random(devs[0].clone(), a.rars_for(1), &levels, &mut rng)
                    .power_level
                    .unwrap(),
            );
        }
        assert_eq!(seen, BTreeSet::from([1, 2, 3]));
    }

    #[test]
    fn lone_device_always_decoded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = config(28, 3, 1);
        for _ in 0..1000 {
            let devs = spawn_mmtc(1, &cfg.cell, &mut rng);
            let out = run_slot(&cfg, devs, 0, 0, &mut rng).unwrap();
            assert_eq!(out.decoded_count(), 1);
        }
    }

    #[test]
    fn urllc_all_or_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = config(28, 3, 0);
        let out = run_slot(&cfg, vec![], 7, 5, &mut rng).unwrap();
        assert!(!out.urllc_success);
        assert_eq!(out.urllc_served(), 0);
        let out = run_slot(&cfg, vec![], 5, 7, &mut rng).unwrap();
        assert!(out.urllc_success);
        assert_eq!(out.urllc_served(), 5);
    }

    #[test]
    fn slot_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = config(10, 3, 60);
        for _ in 0..500 {
            let devs = spawn_mmtc(60, &cfg.cell, &mut rng);
            let tas: BTreeMap<DeviceId, usize> = devs.iter().map(|d| (d.id, d.ta)).collect();
            let out = run_slot(&cfg, devs, 0, 0, &mut rng).unwrap();
            let mut total_decoded = 0;
            for s in &out.per_preamble {
                assert!(s.decoded <= s.occupancy);
                assert!(s.blocks <= s.occupancy);
                assert!(s.blocks <= cfg.cell.annulus_count());
                // every block owner decodes
                assert!(s.decoded >= s.blocks);
                total_decoded += s.decoded;
            }
            assert_eq!(total_decoded, out.decoded_count());
            assert!(out.decoded_mmtc.iter().all(|id| tas.contains_key(id)));
        }
    }

    #[test]
    fn single_annulus_cell_grants_at_most_one_block() {
        let tiny = CellConfig::new(78.0, 156.0).unwrap();
        assert_eq!(tiny.annulus_count(), 1);
        let cfg = SlotConfig::new(tiny, 5, build_levels(3, 1.0).unwrap(), 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let devs = spawn_mmtc(30, &tiny, &mut rng);
            let out = run_slot(&cfg, devs, 0, 0, &mut rng).unwrap();
            assert!(out.per_preamble.iter().all(|s| s.blocks <= 1));
        }
    }

    #[test]
    fn correlator_matches_ideal_without_noise() {
        let mut ideal = config(8, 3, 40);
        let mut corr = ideal.clone();
        corr.detection = Detection::Correlator(CorrelatorSettings {
            noise_variance: 0.0,
            ..Default::default()
        });
        ideal.detection = Detection::Ideal;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let devs = spawn_mmtc(40, &ideal.cell, &mut rng);
            let mut picked = devs.clone();
            select_preambles(&mut picked, 8, &mut rng);
            let occ = group_by_preamble(&picked);
            let a = detect_and_allocate(&occ);
            let b = detect_and_allocate_correlator(
                &occ,
                match &corr.detection {
                    Detection::Correlator(s) => s,
                    Detection::Ideal => unreachable!(),
                },
                &corr.cell,
                &mut rng,
            )
            .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SlotConfig::new(cell(), 0, build_levels(3, 1.0).unwrap(), 10).is_err());
        let mut c = config(28, 3, 10);
        c.acb_factor = Some(1.5);
        assert!(c.validate().is_err());
    }

    #[test]
    fn outcome_csv_row_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = config(28, 3, 100);
        let devs = spawn_mmtc(100, &cfg.cell, &mut rng);
        let out = run_slot(&cfg, devs, 5, 6, &mut rng).unwrap();
        let row = out.csv_row(42);
        assert_eq!(
            row.split(',').count(),
            SlotOutcome::CSV_HEADER.split(',').count()
        );
        assert!(row.starts_with("42,"));
    }
}
