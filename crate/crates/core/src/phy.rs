//! Preamble-level physical layer: Zadoff-Chu sequences, the multi-antenna
//! received signal after cyclic delay, and per-lag correlation detection.
//!
//! Device `k` in annulus `i` arrives as its preamble cyclically delayed by
//! `i - 1` samples. The cyclic prefix is not modeled; circular correlation
//! against the root sequence puts the energy of each annulus on its own lag.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};

/// Default preamble length (short PRACH format).
pub const DEFAULT_PREAMBLE_LENGTH: usize = 139;

/// A Zadoff-Chu root sequence of prime length.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcPreamble {
    root: usize,
    samples: Vec<Complex64>,
}

impl ZcPreamble {
    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    /// Sequence delayed by `shift` samples: `out[n] = x[(n - shift) mod L]`.
    pub fn cyclic_shift(&self, shift: usize) -> Vec<Complex64> {
        let l = self.len();
        (0..l)
            .map(|n| self.samples[(n + l - shift % l) % l])
            .collect()
    }

    /// Circular autocorrelation `Σ_n x[n] conj(x[(n + lag) mod L])`.
    pub fn autocorrelation(&self, lag: usize) -> Complex64 {
        let l = self.len();
        (0..l)
            .map(|n| self.samples[n] * self.samples[(n + lag) % l].conj())
            .sum()
    }
}

fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `x_u[n] = exp(-jπ u n(n+1) / L)` for odd prime `L`.
pub fn generate_zc(root: usize, length: usize) -> Result<ZcPreamble> {
    if length == 2 || !is_prime(length) {
        return Err(invalid(format!(
            "ZC length must be an odd prime, got {length}"
        )));
    }
    if root == 0 || gcd(root, length) != 1 {
        return Err(invalid(format!(
            "ZC root {root} is not coprime to {length}"
        )));
    }
    // reduce the phase index modulo 2L before converting to float
    let modulus = 2 * length as u64;
    let samples = (0..length as u64)
        .map(|n| {
            let idx = (root as u64 % modulus) * ((n * (n + 1)) % modulus) % modulus;
            Complex64::from_polar(1.0, -PI * idx as f64 / length as f64)
        })
        .collect();
    Ok(ZcPreamble { root, samples })
}

/// One preamble transmission as seen by the base station.
#[derive(Debug, Clone, PartialEq)]
pub struct PreambleTransmission {
    /// Index into the preamble pool passed to [`synthesize_received`].
    pub preamble: usize,
    /// 1-based annulus; the sequence is delayed by `annulus - 1` samples.
    pub annulus: usize,
    /// Small-scale fading per receive antenna.
    pub fading: Vec<Complex64>,
}

/// Received preamble block: `antennas` rows of `length` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedPreambleSignal {
    antennas: usize,
    length: usize,
    noise_variance: f64,
    data: Vec<Complex64>,
}

impl ReceivedPreambleSignal {
    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn row(&self, antenna: usize) -> &[Complex64] {
        &self.data[antenna * self.length..(antenna + 1) * self.length]
    }
}

/// Draws a CN(0, 1) fading vector.
pub fn rayleigh_fading<R: Rng + ?Sized>(antennas: usize, rng: &mut R) -> Vec<Complex64> {
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid normal");
    (0..antennas)
        .map(|_| Complex64::new(normal.sample(rng), normal.sample(rng)))
        .collect()
}

/// Builds `Y = Σ_k g_k φ_{b(k), i}^T + N` under full power control, with
/// every noise entry CN(0, σ²).
pub fn synthesize_received<R: Rng + ?Sized>(
    pool: &[ZcPreamble],
    devices: &[PreambleTransmission],
    antennas: usize,
    noise_variance: f64,
    rng: &mut R,
) -> Result<ReceivedPreambleSignal> {
    if antennas == 0 {
        return Err(invalid("at least one receive antenna is required"));
    }
    if !(noise_variance >= 0.0) {
        return Err(invalid(format!(
            "noise variance must be non-negative, got {noise_variance}"
        )));
    }
    let length = pool
        .first()
        .map(ZcPreamble::len)
        .ok_or_else(|| invalid("empty preamble pool"))?;
    if pool.iter().any(|p| p.len() != length) {
        return Err(Error::Dimension(
            "preamble pool mixes sequence lengths".into(),
        ));
    }
    let mut data = vec![Complex64::new(0.0, 0.0); antennas * length];
    for dev in devices {
        let preamble = pool.get(dev.preamble).ok_or_else(|| {
            invalid(format!(
                "preamble index {} outside a pool of {}",
                dev.preamble,
                pool.len()
            ))
        })?;
        if dev.annulus == 0 || dev.annulus > length {
            return Err(invalid(format!(
                "annulus {} cannot be represented as a cyclic shift of a length-{length} preamble",
                dev.annulus
            )));
        }
        if dev.fading.len() != antennas {
            return Err(Error::Dimension(format!(
                "fading vector has {} entries for {antennas} antennas",
                dev.fading.len()
            )));
        }
        let shifted = preamble.cyclic_shift(dev.annulus - 1);
        for (m, g) in dev.fading.iter().enumerate() {
            let row = &mut data[m * length..(m + 1) * length];
            for (y, s) in row.iter_mut().zip(&shifted) {
                *y += g * s;
            }
        }
    }
    if noise_variance > 0.0 {
        let normal = Normal::new(0.0, (noise_variance / 2.0).sqrt()).expect("valid normal");
        for y in &mut data {
            *y += Complex64::new(normal.sample(rng), normal.sample(rng));
        }
    }
    Ok(ReceivedPreambleSignal {
        antennas,
        length,
        noise_variance,
        data,
    })
}

/// Per-lag detection statistic for lags `0..lags`:
/// `Σ_m |[Y_m ⊛ φ*/‖φ‖]_lag|² / (M · L_p)`.
///
/// A lone device contributes `Σ_m |g_m|² / M` on its lag and noise adds
/// `σ² / L_p` on every lag.
pub fn correlation_energies(
    signal: &ReceivedPreambleSignal,
    preamble: &ZcPreamble,
    lags: usize,
) -> Result<Vec<f64>> {
    if signal.len() != preamble.len() {
        return Err(invalid(format!(
            "signal length {} does not match preamble length {}",
            signal.len(),
            preamble.len()
        )));
    }
    let l = preamble.len();
    let norm = (l as f64).sqrt();
    let scale = 1.0 / (signal.antennas() as f64 * l as f64);
    let conj: Vec<Complex64> = preamble.samples().iter().map(|s| s.conj() / norm).collect();
    let energies = (0..lags.min(l))
        .map(|lag| {
            let energy: f64 = (0..signal.antennas())
                .map(|m| {
                    let row = signal.row(m);
                    let acc: Complex64 = (0..l).map(|n| row[(n + lag) % l] * conj[n]).sum();
                    acc.norm_sqr()
                })
                .sum();
            energy * scale
        })
        .collect();
    Ok(energies)
}

/// Annuli (1-based) whose correlation energy exceeds `threshold`, over all
/// `L_p` lags.
pub fn correlate_detect(
    signal: &ReceivedPreambleSignal,
    preamble: &ZcPreamble,
    threshold: f64,
) -> Result<BTreeSet<usize>> {
    correlate_detect_within(signal, preamble, threshold, preamble.len())
}

/// As [`correlate_detect`], restricted to annuli `1..=max_annulus`.
pub fn correlate_detect_within(
    signal: &ReceivedPreambleSignal,
    preamble: &ZcPreamble,
    threshold: f64,
    max_annulus: usize,
) -> Result<BTreeSet<usize>> {
    let energies = correlation_energies(signal, preamble, max_annulus)?;
    Ok(energies
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > threshold)
        .map(|(lag, _)| lag + 1)
        .collect())
}

/// Midpoint between the noise-only mean energy `σ²/L_p` and the
/// single-device mean `1 + σ²/L_p`.
pub fn calibrated_threshold(noise_variance: f64, length: usize) -> f64 {
    0.5 + noise_variance / length as f64
}
