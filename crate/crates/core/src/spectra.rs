//! One-sided fractional-frequency power spectra and time-domain synthesis.
//!
//! A [`PowerSpectrum`] is a band-limited power law `S(w) = A (w_ref / w)^alpha`
//! on `[omega_low, omega_cut]` plus a set of discrete spurs. Realizations are
//! sums of cosines with independent uniform phases, so they can be evaluated
//! (and window-averaged) in closed form at arbitrary times.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A narrowband line in the spectrum, carried as a point mass of variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spur {
    /// Center frequency, rad/s.
    pub omega: f64,
    /// Contribution to the variance of y(t).
    pub power: f64,
}

impl Spur {
    pub fn new(omega: f64, power: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::domain(format!("spur frequency must be positive, got {omega}")));
        }
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::domain(format!("spur power must be positive, got {power}")));
        }
        Ok(Spur { omega, power })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    exponent: f64,
    amplitude: f64,
    omega_ref: f64,
    omega_low: f64,
    omega_cut: f64,
    spurs: Vec<Spur>,
}

impl PowerSpectrum {
    /// Power law `amplitude * (omega_low / w)^exponent` on `[omega_low, omega_cut]`.
    pub fn power_law(exponent: f64, amplitude: f64, omega_low: f64, omega_cut: f64) -> Result<Self> {
        let spectrum =
            PowerSpectrum { exponent, amplitude, omega_ref: omega_low, omega_low, omega_cut, spurs: Vec::new() };
        spectrum.validate()?;
        Ok(spectrum)
    }

    pub fn white(level: f64, omega_low: f64, omega_cut: f64) -> Result<Self> {
        Self::power_law(0.0, level, omega_low, omega_cut)
    }

    /// A spectrum with no continuum, only the given spurs.
    pub fn spurs_only(omega_low: f64, omega_cut: f64, spurs: Vec<Spur>) -> Result<Self> {
        Self::power_law(0.0, 0.0, omega_low, omega_cut)?.with_spurs(spurs)
    }

    pub fn with_spurs(mut self, spurs: Vec<Spur>) -> Result<Self> {
        self.spurs = spurs;
        self.validate()?;
        Ok(self)
    }

    pub fn push_spur(&mut self, spur: Spur) -> Result<()> {
        self.spurs.push(spur);
        if let Err(e) = self.validate() {
            self.spurs.pop();
            return Err(e);
        }
        Ok(())
    }

    /// Appends `count` equally spaced spurs starting at `start` whose powers sum to
    /// `fraction` of the in-band continuum variance, split equally.
    pub fn add_spur_comb(&mut self, start: f64, step: f64, count: usize, fraction: f64) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        if !(fraction > 0.0 && fraction.is_finite()) {
            return Err(Error::domain(format!("spur power fraction must be positive, got {fraction}")));
        }
        let each = fraction * self.continuum_variance() / count as f64;
        let mut spurs = self.spurs.clone();
        for i in 0..count {
            spurs.push(Spur::new(start + step * i as f64, each)?);
        }
        let previous = std::mem::replace(&mut self.spurs, spurs);
        if let Err(e) = self.validate() {
            self.spurs = previous;
            return Err(e);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_low > 0.0 && self.omega_low < self.omega_cut && self.omega_cut.is_finite()) {
            return Err(Error::domain(format!(
                "spectrum band must satisfy 0 < omega_low < omega_cut, got [{}, {}]",
                self.omega_low, self.omega_cut
            )));
        }
        if !(self.exponent >= 0.0 && self.exponent.is_finite()) {
            return Err(Error::domain(format!("exponent must be >= 0, got {}", self.exponent)));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::domain(format!("amplitude must be >= 0, got {}", self.amplitude)));
        }
        for spur in &self.spurs {
            if spur.omega < self.omega_low || spur.omega > self.omega_cut {
                return Err(Error::domain(format!(
                    "spur at {} rad/s lies outside [{}, {}]",
                    spur.omega, self.omega_low, self.omega_cut
                )));
            }
            if !(spur.power > 0.0) {
                return Err(Error::domain("spur power must be positive"));
            }
        }
        Ok(())
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn omega_ref(&self) -> f64 {
        self.omega_ref
    }

    pub fn omega_low(&self) -> f64 {
        self.omega_low
    }

    pub fn omega_cut(&self) -> f64 {
        self.omega_cut
    }

    pub fn spurs(&self) -> &[Spur] {
        &self.spurs
    }

    /// Spectral density at `omega`; zero outside the band. Spurs are not included.
    pub fn psd(&self, omega: f64) -> Result<f64> {
        if !(omega > 0.0) {
            return Err(Error::domain(format!("psd evaluated at non-positive omega {omega}")));
        }
        Ok(self.density(omega))
    }

    #[inline]
    pub(crate) fn density(&self, omega: f64) -> f64 {
        if omega < self.omega_low || omega > self.omega_cut {
            return 0.0;
        }
        let x = self.omega_ref / omega;
        let shape = match self.exponent {
            0.0 => 1.0,
            0.5 => x.sqrt(),
            1.0 => x,
            2.0 => x * x,
            a => x.powf(a),
        };
        self.amplitude * shape
    }

    /// Rescales so that `psd(omega_ref) == target`. Shape, band and spurs are kept.
    pub fn normalize_at(&self, omega_ref: f64, target: f64) -> Result<Self> {
        if !(omega_ref >= self.omega_low && omega_ref <= self.omega_cut) {
            return Err(Error::domain(format!(
                "normalization frequency {omega_ref} outside [{}, {}]",
                self.omega_low, self.omega_cut
            )));
        }
        if !(target > 0.0 && target.is_finite()) {
            return Err(Error::domain(format!("normalization target must be positive, got {target}")));
        }
        Ok(PowerSpectrum { omega_ref, amplitude: target, ..self.clone() })
    }

    /// Returns a copy with the continuum and spur powers multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        PowerSpectrum {
            amplitude: self.amplitude * factor,
            spurs: self.spurs.iter().map(|s| Spur { omega: s.omega, power: s.power * factor }).collect(),
            ..self.clone()
        }
    }

    /// `(1/2pi) * integral of S over the band`, in closed form.
    pub fn continuum_variance(&self) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let log_span = (self.omega_cut / self.omega_low).ln();
        let one_minus = 1.0 - self.exponent;
        // integral of w^-alpha from lo to hi = lo^(1-alpha) * expm1((1-alpha) L) / (1-alpha)
        let integral = if one_minus.abs() * log_span < 1e-12 {
            self.omega_low.powf(one_minus) * log_span
        } else {
            self.omega_low.powf(one_minus) * (one_minus * log_span).exp_m1() / one_minus
        };
        self.amplitude * self.omega_ref.powf(self.exponent) * integral / TAU
    }

    pub fn spur_variance(&self) -> f64 {
        self.spurs.iter().map(|s| s.power).sum()
    }

    /// Variance of y(t) for the stationary process: continuum plus spur powers.
    pub fn point_variance(&self) -> f64 {
        self.continuum_variance() + self.spur_variance()
    }

    /// Autocovariance of y(t) at lag `tau`, used as a cross-check of synthesis.
    pub fn autocovariance(&self, tau: f64) -> Result<f64> {
        let probe = crate::xfer::TransferFunction::PointPoint { lag: tau };
        Ok(crate::xfer::overlap_integral(self, &probe)?.value)
    }
}

/// Frequency grid used by [`synthesize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisGrid {
    /// Number of continuum components.
    pub points: usize,
    /// Boundary between logarithmic and linear spacing, rad/s. Defaults to
    /// `100 * omega_low`, which is `2 pi / T_c` under the default band.
    pub split_omega: Option<f64>,
    /// Draw each component frequency uniformly inside its cell instead of at
    /// the cell center.
    pub jitter: bool,
}

impl Default for SynthesisGrid {
    fn default() -> Self {
        SynthesisGrid { points: 2000, split_omega: None, jitter: true }
    }
}

impl SynthesisGrid {
    pub fn with_points(points: usize) -> Self {
        SynthesisGrid { points, ..Default::default() }
    }

    pub fn with_split(mut self, split_omega: f64) -> Self {
        self.split_omega = Some(split_omega);
        self
    }

    /// Cell edges covering `[lo, hi]`: log spacing below the split, linear above.
    pub fn cells(&self, lo: f64, hi: f64) -> Result<Vec<(f64, f64)>> {
        if self.points < 2 {
            return Err(Error::config("grid_points", format!("need at least 2 grid points, got {}", self.points)));
        }
        let split = self.split_omega.unwrap_or(100.0 * lo).clamp(lo, hi);
        let decades = (split / lo).log10();
        let mut log_points = if split > lo { ((decades * 64.0).round() as usize).clamp(1, self.points / 2) } else { 0 };
        let mut lin_points = self.points - log_points;
        if split >= hi {
            log_points = self.points;
            lin_points = 0;
        }
        let mut cells = Vec::with_capacity(self.points);
        if log_points > 0 {
            let ratio = (split / lo).powf(1.0 / log_points as f64);
            let mut a = lo;
            for i in 0..log_points {
                let b = if i + 1 == log_points { split } else { a * ratio };
                cells.push((a, b));
                a = b;
            }
        }
        if lin_points > 0 {
            let step = (hi - split) / lin_points as f64;
            for i in 0..lin_points {
                let a = split + step * i as f64;
                let b = if i + 1 == lin_points { hi } else { a + step };
                cells.push((a, b));
            }
        }
        if cells.iter().any(|&(a, b)| !(b > a)) {
            return Err(Error::config(
                "grid_points",
                format!("grid of {} points cannot cover [{lo}, {hi}]", self.points),
            ));
        }
        Ok(cells)
    }
}

/// One cosine term `amplitude * cos(omega t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub omega: f64,
    pub amplitude: f64,
    pub phase: f64,
}

/// A sampled trajectory of the free-running LO, `y(t) = sum A_j cos(w_j t + phi_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRealization {
    components: Vec<Component>,
    duration: f64,
    seed: Option<(u64, u64)>,
}

impl NoiseRealization {
    pub fn from_components(components: Vec<Component>, duration: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::domain(format!("realization duration must be positive, got {duration}")));
        }
        Ok(NoiseRealization { components, duration, seed: None })
    }

    /// Identically zero LO noise over `duration`.
    pub fn zero(duration: f64) -> Result<Self> {
        Self::from_components(Vec::new(), duration)
    }

    /// Adds a static offset, carried as a zero-frequency component.
    pub fn with_offset(mut self, offset: f64) -> Self {
        self.components.push(Component { omega: 0.0, amplitude: offset, phase: 0.0 });
        self
    }

    /// `a * self + b * other` over the shorter of the two durations.
    pub fn superpose(&self, a: f64, other: &NoiseRealization, b: f64) -> NoiseRealization {
        let scale = |c: &Component, k: f64| Component { amplitude: c.amplitude * k, ..*c };
        NoiseRealization {
            components: self
                .components
                .iter()
                .map(|c| scale(c, a))
                .chain(other.components.iter().map(|c| scale(c, b)))
                .collect(),
            duration: self.duration.min(other.duration),
            seed: None,
        }
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// `(master seed, realization index)` when produced by [`synthesize`].
    pub fn seed(&self) -> Option<(u64, u64)> {
        self.seed
    }

    /// Instantaneous fractional frequency offset.
    pub fn value_at(&self, t: f64) -> f64 {
        self.components.iter().map(|c| c.amplitude * (c.omega * t + c.phase).cos()).sum()
    }

    /// Exact average of y over `[center - width/2, center + width/2]`.
    ///
    /// Each component contributes `A cos(w t_mid + phi) sinc(w T / 2)`, which
    /// equals the sine-difference form without its cancellation at small `w T`.
    pub fn average(&self, center: f64, width: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.amplitude * (c.omega * center + c.phase).cos() * sinc(0.5 * c.omega * width))
            .sum()
    }

    /// Batch form of [`average`](Self::average) for many `(center, width)` probes.
    ///
    /// Sinc factors are computed once per distinct width. Probes are visited in
    /// time order and each component's phasor is advanced by rotation, with a
    /// direct re-evaluation every few steps to bound rounding drift; schedules
    /// with few distinct spacings then cost a multiply-add per term.
    pub fn averages(&self, probes: &[(f64, f64)]) -> Vec<f64> {
        const RESYNC: usize = 32;
        let n = probes.len();
        let mut out = vec![0.0; n];
        if n == 0 || self.components.is_empty() {
            return out;
        }
        let mut widths: Vec<f64> = Vec::new();
        let slot: Vec<usize> = probes
            .iter()
            .map(|&(_, w)| match widths.iter().position(|&x| x == w) {
                Some(i) => i,
                None => {
                    widths.push(w);
                    widths.len() - 1
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| probes[a].0.total_cmp(&probes[b].0));
        let t_max = probes.iter().fold(0.0f64, |m, p| m.max(p.0.abs()));
        let tol = 16.0 * f64::EPSILON * t_max.max(f64::MIN_POSITIVE);
        let mut steps: Vec<f64> = Vec::new();
        let mut step_of = vec![0usize; n];
        for p in 1..n {
            let d = probes[order[p]].0 - probes[order[p - 1]].0;
            step_of[p] = match steps.iter().position(|&x| (x - d).abs() <= tol) {
                Some(i) => i,
                None => {
                    steps.push(d);
                    steps.len() - 1
                }
            };
        }
        let rotate = steps.len() * 4 <= n;
        let mut rot = vec![(0.0, 0.0); steps.len()];
        let mut weight = vec![0.0; widths.len()];
        for c in &self.components {
            for (w, &width) in weight.iter_mut().zip(&widths) {
                *w = c.amplitude * sinc(0.5 * c.omega * width);
            }
            if rotate {
                for (r, &d) in rot.iter_mut().zip(&steps) {
                    *r = (c.omega * d).sin_cos();
                }
            }
            let (mut s, mut co) = (0.0, 0.0);
            for (p, &i) in order.iter().enumerate() {
                if !rotate || p % RESYNC == 0 {
                    (s, co) = (c.omega * probes[i].0 + c.phase).sin_cos();
                } else {
                    let (sd, cd) = rot[step_of[p]];
                    (s, co) = (s * cd + co * sd, co * cd - s * sd);
                }
                out[i] += weight[slot[i]] * co;
            }
        }
        out
    }
}

/// `sin(x)/x` with the removable singularity filled in.
#[inline]
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Independent random stream for realization `index` under `master` seed.
pub fn realization_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Draws a sum-of-cosines realization of `spectrum` over `[0, duration]`.
///
/// Continuum components take amplitude `sqrt(2 S(w_j) dw_j / 2 pi)` on the
/// grid cells; spurs take `sqrt(2 P)` at their exact frequency. Phases are
/// independent and uniform, so the ensemble autocovariance matches the
/// spectrum. With `grid.jitter` set the frequency of each cell is drawn
/// uniformly within the cell, which makes every second-order ensemble
/// statistic agree with the continuous spectrum in expectation.
pub fn synthesize(
    spectrum: &PowerSpectrum,
    duration: f64,
    grid: &SynthesisGrid,
    master_seed: u64,
    index: u64,
) -> Result<NoiseRealization> {
    if !(duration > 0.0) {
        return Err(Error::config("duration", format!("must be positive, got {duration}")));
    }
    let cells = grid.cells(spectrum.omega_low, spectrum.omega_cut)?;
    let mut rng = realization_rng(master_seed, index);
    let mut components = Vec::with_capacity(cells.len() + spectrum.spurs.len());
    if spectrum.amplitude > 0.0 {
        for &(a, b) in &cells {
            let omega = if grid.jitter { a + (b - a) * rng.random::<f64>() } else { 0.5 * (a + b) };
            let phase = TAU * rng.random::<f64>();
            let amplitude = (2.0 * spectrum.density(omega) * (b - a) / TAU).sqrt();
            components.push(Component { omega, amplitude, phase });
        }
    }
    for spur in &spectrum.spurs {
        let phase = TAU * rng.random::<f64>();
        components.push(Component { omega: spur.omega, amplitude: (2.0 * spur.power).sqrt(), phase });
    }
    Ok(NoiseRealization { components, duration, seed: Some((master_seed, index)) })
}

/// `2 pi / (100 T_c)`: the default low cutoff and normalization point.
pub fn default_omega_low(cycle_time: f64) -> f64 {
    2.0 * PI / (100.0 * cycle_time)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn white_is_flat_in_band() {
        let s = PowerSpectrum::white(3.0, 0.1, 10.0).unwrap();
        assert_eq!(s.psd(1.0).unwrap(), 3.0);
        assert_eq!(s.psd(9.0).unwrap(), 3.0);
    }

    #[test]
    fn flicker_halves_when_frequency_doubles() {
        let s = PowerSpectrum::power_law(1.0, 2.0, 0.1, 100.0).unwrap();
        let r = s.psd(6.0).unwrap() / s.psd(3.0).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_above_cutoff() {
        let s = PowerSpectrum::power_law(0.5, 1.0, 0.1, 10.0).unwrap();
        assert_eq!(s.psd(10.5).unwrap(), 0.0);
        assert!(s.psd(0.0).is_err());
        assert!(s.psd(-1.0).is_err());
    }

    #[test]
    fn normalization_hits_target_for_each_shape() {
        let tc = 1.0;
        let w_ref = 2.0 * PI / (100.0 * tc);
        let target = 4.2e-3;
        for alpha in [1.0, 0.5] {
            let s = PowerSpectrum::power_law(alpha, 1.0, w_ref, 2.0 * PI * 100.0)
                .unwrap()
                .normalize_at(w_ref, target)
                .unwrap();
            assert!(rel(s.psd(w_ref).unwrap(), target) < 1e-15);
            let again = s.normalize_at(w_ref, target).unwrap();
            assert_eq!(again, s);
            let doubled = s.normalize_at(w_ref, 2.0 * target).unwrap();
            for w in [0.1, 1.0, 17.0, 300.0] {
                assert!(rel(doubled.psd(w).unwrap(), 2.0 * s.psd(w).unwrap()) < 1e-14);
            }
        }
        let s = PowerSpectrum::power_law(1.0, 1.0, 1.0, 2.0).unwrap();
        assert!(s.normalize_at(3.0, 1.0).is_err());
    }

    #[test]
    fn point_variance_closed_forms() {
        let white = PowerSpectrum::white(2.0, 1e-9, 50.0).unwrap();
        assert!(rel(white.point_variance(), 2.0 * 50.0 / TAU) < 1e-9);

        let spurs =
            PowerSpectrum::spurs_only(0.1, 10.0, vec![Spur::new(1.0, 0.3).unwrap(), Spur::new(2.0, 0.5).unwrap()])
                .unwrap();
        assert!(rel(spurs.point_variance(), 0.8) < 1e-15);

        let (wl, wc, s_star) = (0.0628, 628.0, 1.7);
        let flicker = PowerSpectrum::power_law(1.0, 1.0, wl, wc).unwrap().normalize_at(wl, s_star).unwrap();
        let expected = s_star * wl / TAU * (wc / wl).ln();
        assert!(rel(flicker.point_variance(), expected) < 1e-13);
        // crude midpoint rule in log space as an independent check
        let n = 200_000;
        let h = (wc / wl).ln() / n as f64;
        let quad: f64 = (0..n)
            .map(|i| {
                let w = wl * ((i as f64 + 0.5) * h).exp();
                flicker.psd(w).unwrap() * w * h
            })
            .sum::<f64>()
            / TAU;
        assert!(rel(flicker.point_variance(), quad) < 1e-8);
    }

    #[test]
    fn exponent_near_one_is_continuous() {
        let a = PowerSpectrum::power_law(1.0, 1.0, 0.01, 100.0).unwrap();
        let b = PowerSpectrum::power_law(1.0 + 1e-10, 1.0, 0.01, 100.0).unwrap();
        assert!(rel(a.point_variance(), b.point_variance()) < 1e-8);
    }

    #[test]
    fn spur_outside_band_rejected() {
        let mut s = PowerSpectrum::white(1.0, 0.1, 10.0).unwrap();
        assert!(s.push_spur(Spur::new(20.0, 1.0).unwrap()).is_err());
        assert!(s.spurs().is_empty());
        assert!(Spur::new(1.0, 0.0).is_err());
    }

    #[test]
    fn spur_comb_splits_fraction_of_continuum() {
        let mut s = PowerSpectrum::power_law(1.0, 1.0, 0.0628, 628.0).unwrap();
        let cont = s.continuum_variance();
        s.add_spur_comb(2.0 * PI * 1.15, 2.0 * PI * 0.15, 10, 0.1).unwrap();
        assert_eq!(s.spurs().len(), 10);
        assert!(rel(s.spur_variance(), 0.1 * cont) < 1e-12);
        assert!((s.spurs()[9].omega - 2.0 * PI * 2.5).abs() < 1e-12);
    }

    #[test]
    fn single_spur_realization_has_spur_power() {
        let power = 0.37;
        let w0 = 2.0 * PI * 3.0;
        let s = PowerSpectrum::spurs_only(0.1, 100.0, vec![Spur::new(w0, power).unwrap()]).unwrap();
        let r = synthesize(&s, 1000.0, &SynthesisGrid::default(), 5, 0).unwrap();
        assert_eq!(r.components().len(), 1);
        let n = 100_000;
        let mean_sq: f64 = (0..n).map(|i| r.value_at(1000.0 * i as f64 / n as f64).powi(2)).sum::<f64>() / n as f64;
        assert!(rel(mean_sq, power) < 0.01, "{mean_sq}");
    }

    #[test]
    fn zero_amplitude_gives_zero_realization() {
        let s = PowerSpectrum::white(0.0, 0.1, 10.0).unwrap();
        let r = synthesize(&s, 10.0, &SynthesisGrid::default(), 1, 0).unwrap();
        for t in [0.0, 1.3, 9.9] {
            assert_eq!(r.value_at(t), 0.0);
        }
    }

    #[test]
    fn synthesis_is_deterministic_per_seed() {
        let s = PowerSpectrum::power_law(1.0, 1.0, 0.0628, 628.0).unwrap();
        let grid = SynthesisGrid::default();
        let a = synthesize(&s, 100.0, &grid, 11, 3).unwrap();
        let b = synthesize(&s, 100.0, &grid, 11, 3).unwrap();
        let c = synthesize(&s, 100.0, &grid, 11, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn white_ensemble_variance_matches_point_variance() {
        let s = PowerSpectrum::white(1.0, 0.01, 200.0).unwrap();
        let grid = SynthesisGrid::with_points(400);
        let n = 10_000;
        let values: Vec<f64> =
            (0..n).map(|i| synthesize(&s, 10.0, &grid, 99, i).unwrap().value_at(3.7).powi(2)).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - s.point_variance()).abs() < 3.0 * se, "{mean} vs {}", s.point_variance());
    }

    #[test]
    fn grid_rejects_single_point() {
        let s = PowerSpectrum::white(1.0, 0.1, 10.0).unwrap();
        assert!(synthesize(&s, 10.0, &SynthesisGrid::with_points(1), 0, 0).is_err());
        assert!(synthesize(&s, 0.0, &SynthesisGrid::default(), 0, 0).is_err());
    }

    #[test]
    fn grid_cells_tile_band() {
        let cells = SynthesisGrid::default().cells(0.0628, 628.0).unwrap();
        assert_eq!(cells.len(), 2000);
        assert_eq!(cells[0].0, 0.0628);
        assert_eq!(cells.last().unwrap().1, 628.0);
        for pair in cells.windows(2) {
            assert!((pair[0].1 - pair[1].0).abs() < 1e-12);
        }
    }

    #[test]
    fn average_matches_sine_difference() {
        let r = NoiseRealization::from_components(vec![Component { omega: 2.3, amplitude: 1.4, phase: 0.7 }], 10.0)
            .unwrap();
        let (ts, te) = (1.1, 3.9);
        let direct = 1.4 * ((2.3 * te + 0.7f64).sin() - (2.3 * ts + 0.7f64).sin()) / (2.3 * (te - ts));
        assert!(rel(r.average(0.5 * (ts + te), te - ts), direct) < 1e-13);
        let batch = r.averages(&[(0.5 * (ts + te), te - ts), (2.0, 0.0)]);
        assert!(rel(batch[0], direct) < 1e-13);
        assert!(rel(batch[1], r.value_at(2.0)) < 1e-15);
    }

    #[test]
    fn batch_rotation_matches_direct_evaluation() {
        let s = PowerSpectrum::power_law(1.0, 1.0, 0.0628, 628.0).unwrap();
        let r = synthesize(&s, 400.0, &SynthesisGrid::default(), 5, 0).unwrap();
        let mut probes = Vec::new();
        for k in 0..300 {
            let t0 = 1.3 * k as f64;
            probes.push((t0 + 0.325, 0.65));
            probes.push((t0 + 1.3, 0.0));
        }
        let batch = r.averages(&probes);
        let scale = s.point_variance().sqrt();
        for (&(c, w), b) in probes.iter().zip(&batch) {
            let e = (r.average(c, w) - b).abs() / scale;
            assert!(e < 1e-10, "{c} {w} {e:e}");
        }
    }
}
