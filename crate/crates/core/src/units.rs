//! Physical units and the measurement records shared by every other module.
//!
//! All records are validated on construction and immutable afterwards.

use crate::error::{Error, Result};

/// Planck constant times the speed of light, in meV·nm.
pub const HC_MEV_NM: f64 = 1_239_841.98;

/// Energy of the local vibration mode that produces the G-center E-line.
pub const LVM_ENERGY_MEV: f64 = 71.9;

/// Referenced G-center zero-phonon line energy.
pub const G_ZPL_ENERGY_MEV: f64 = 969.45;

/// Broad phonon replica energy observed below the G* zero-phonon line.
pub const PHONON_REPLICA_ENERGY_MEV: f64 = 14.5;

/// Photon energy in meV.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PhotonEnergy(f64);

/// Vacuum wavelength in nm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Wavelength(f64);

impl PhotonEnergy {
    pub fn new(mev: f64) -> Result<Self> {
        if mev.is_finite() && mev > 0.0 {
            Ok(Self(mev))
        } else {
            Err(Error::Domain(format!("photon energy must be positive, got {mev} meV")))
        }
    }

    pub fn mev(self) -> f64 {
        self.0
    }
}

impl Wavelength {
    pub fn new(nm: f64) -> Result<Self> {
        if nm.is_finite() && nm > 0.0 {
            Ok(Self(nm))
        } else {
            Err(Error::Domain(format!("wavelength must be positive, got {nm} nm")))
        }
    }

    pub fn nm(self) -> f64 {
        self.0
    }
}

pub fn wavelength_to_energy(w: Wavelength) -> PhotonEnergy {
    PhotonEnergy(HC_MEV_NM / w.0)
}

pub fn energy_to_wavelength(e: PhotonEnergy) -> Wavelength {
    Wavelength(HC_MEV_NM / e.0)
}

/// Raw-number convenience wrappers, erroring on non-positive input.
pub fn nm_to_mev(nm: f64) -> Result<f64> {
    Ok(wavelength_to_energy(Wavelength::new(nm)?).mev())
}

pub fn mev_to_nm(mev: f64) -> Result<f64> {
    Ok(energy_to_wavelength(PhotonEnergy::new(mev)?).nm())
}

/// One detection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag {
    pub timestamp_ps: u64,
    pub channel: u8,
}

/// Sorted detection timestamps with channel labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeTagStream {
    tags: Vec<TimeTag>,
    duration_ps: u64,
    channel_count: u32,
}

impl TimeTagStream {
    pub fn new(tags: Vec<TimeTag>, duration_ps: u64, channel_count: u32) -> Result<Self> {
        if channel_count == 0 || channel_count > 256 {
            return Err(Error::Channel(format!(
                "channel count must be in 1..=256, got {channel_count}"
            )));
        }
        let mut prev = 0u64;
        for (i, tag) in tags.iter().enumerate() {
            if tag.timestamp_ps < prev {
                return Err(Error::Integrity(format!(
                    "timestamp {} at index {i} precedes {prev}",
                    tag.timestamp_ps
                )));
            }
            if tag.timestamp_ps > duration_ps {
                return Err(Error::Integrity(format!(
                    "timestamp {} at index {i} exceeds duration {duration_ps}",
                    tag.timestamp_ps
                )));
            }
            if u32::from(tag.channel) >= channel_count {
                return Err(Error::Channel(format!(
                    "channel {} at index {i} outside [0, {channel_count})",
                    tag.channel
                )));
            }
            prev = tag.timestamp_ps;
        }
        Ok(Self {
            tags,
            duration_ps,
            channel_count,
        })
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps as f64 * 1e-12
    }

    pub fn channel_count(&self) -> u32 {
        self.channel_count
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Timestamps of a single channel, in order.
    pub fn channel_timestamps(&self, channel: u8) -> Vec<u64> {
        self.tags
            .iter()
            .filter(|t| t.channel == channel)
            .map(|t| t.timestamp_ps)
            .collect()
    }

    /// Mean detection rate over all channels, counts/s.
    pub fn mean_rate(&self) -> f64 {
        if self.duration_ps == 0 {
            0.0
        } else {
            self.tags.len() as f64 / self.duration_s()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumSample {
    pub wavelength_nm: f64,
    pub intensity: f64,
}

/// Photoluminescence spectrum, strictly increasing in wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTrace {
    samples: Vec<SpectrumSample>,
}

impl SpectrumTrace {
    pub fn new(samples: Vec<SpectrumSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientData("spectrum has no samples".into()));
        }
        for s in &samples {
            if !(s.wavelength_nm.is_finite() && s.wavelength_nm > 0.0) {
                return Err(Error::Domain(format!("invalid wavelength {}", s.wavelength_nm)));
            }
            if !(s.intensity.is_finite() && s.intensity >= 0.0) {
                return Err(Error::Domain(format!("invalid spectrum intensity {}", s.intensity)));
            }
        }
        if let Some(w) = samples.windows(2).find(|w| w[1].wavelength_nm <= w[0].wavelength_nm) {
            return Err(Error::Integrity(format!(
                "spectrum wavelengths not strictly increasing at {} nm",
                w[1].wavelength_nm
            )));
        }
        Ok(Self { samples })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(wavelength_nm, intensity)| SpectrumSample {
                    wavelength_nm,
                    intensity,
                })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[SpectrumSample] {
        &self.samples
    }

    pub fn domain(&self) -> (f64, f64) {
        (
            self.samples[0].wavelength_nm,
            self.samples[self.samples.len() - 1].wavelength_nm,
        )
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.samples
                .iter()
                .map(|s| SpectrumSample {
                    wavelength_nm: s.wavelength_nm,
                    intensity: s.intensity * factor,
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationPoint {
    pub angle_deg: f64,
    pub intensity: f64,
}

/// Emission intensity versus analyzer angle. Angles are stored in [0, 360).
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationScan {
    points: Vec<PolarizationPoint>,
}

pub fn normalize_degrees(angle: f64) -> f64 {
    let a = angle.rem_euclid(360.0);
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

impl PolarizationScan {
    pub const MIN_DISTINCT_ANGLES: usize = 8;

    pub fn new(points: Vec<PolarizationPoint>) -> Result<Self> {
        let mut normalized = Vec::with_capacity(points.len());
        for p in points {
            if !p.angle_deg.is_finite() {
                return Err(Error::Domain(format!("invalid analyzer angle {}", p.angle_deg)));
            }
            if !(p.intensity.is_finite() && p.intensity >= 0.0) {
                return Err(Error::Domain(format!("invalid polarization intensity {}", p.intensity)));
            }
            normalized.push(PolarizationPoint {
                angle_deg: normalize_degrees(p.angle_deg),
                intensity: p.intensity,
            });
        }
        let mut angles: Vec<f64> = normalized.iter().map(|p| p.angle_deg).collect();
        angles.sort_by(f64::total_cmp);
        angles.dedup();
        if angles.len() < Self::MIN_DISTINCT_ANGLES {
            return Err(Error::InsufficientData(format!(
                "polarization scan needs at least {} distinct angles, got {}",
                Self::MIN_DISTINCT_ANGLES,
                angles.len()
            )));
        }
        Ok(Self { points: normalized })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(angle_deg, intensity)| PolarizationPoint {
                    angle_deg,
                    intensity,
                })
                .collect(),
        )
    }

    pub fn points(&self) -> &[PolarizationPoint] {
        &self.points
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationPoint {
    pub power_uw: f64,
    pub intensity_kcps: f64,
}

/// Detected count rate versus CW excitation power.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationSeries {
    points: Vec<SaturationPoint>,
}

impl SaturationSeries {
    pub const MIN_POINTS: usize = 4;

    pub fn new(points: Vec<SaturationPoint>) -> Result<Self> {
        if points.len() < Self::MIN_POINTS {
            return Err(Error::InsufficientData(format!(
                "saturation series needs at least {} points, got {}",
                Self::MIN_POINTS,
                points.len()
            )));
        }
        for p in &points {
            if !(p.power_uw.is_finite() && p.power_uw > 0.0) {
                return Err(Error::Domain(format!("excitation power must be positive, got {}", p.power_uw)));
            }
            if !(p.intensity_kcps.is_finite() && p.intensity_kcps >= 0.0) {
                return Err(Error::Domain(format!("invalid count rate {}", p.intensity_kcps)));
            }
        }
        if let Some(w) = points.windows(2).find(|w| w[1].power_uw <= w[0].power_uw) {
            return Err(Error::Integrity(format!(
                "powers not strictly increasing at {} uW",
                w[1].power_uw
            )));
        }
        Ok(Self { points })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(power_uw, intensity_kcps)| SaturationPoint {
                    power_uw,
                    intensity_kcps,
                })
                .collect(),
        )
    }

    pub fn points(&self) -> &[SaturationPoint] {
        &self.points
    }
}

/// Histogram of photon arrival delays after each excitation pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayHistogram {
    bin_edges_ns: Vec<f64>,
    counts: Vec<u64>,
    pulse_period_ns: f64,
}

impl DecayHistogram {
    pub fn new(bin_edges_ns: Vec<f64>, counts: Vec<u64>, pulse_period_ns: f64) -> Result<Self> {
        if counts.is_empty() || bin_edges_ns.len() != counts.len() + 1 {
            return Err(Error::Integrity(format!(
                "{} edges for {} bins",
                bin_edges_ns.len(),
                counts.len()
            )));
        }
        let width = bin_edges_ns[1] - bin_edges_ns[0];
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::Domain(format!("bin width must be positive, got {width}")));
        }
        let tol = 1e-9 * width.max(bin_edges_ns[bin_edges_ns.len() - 1].abs());
        if bin_edges_ns
            .windows(2)
            .any(|w| ((w[1] - w[0]) - width).abs() > tol.max(1e-6 * width))
        {
            return Err(Error::Integrity("decay histogram bins are not uniform".into()));
        }
        if !(pulse_period_ns.is_finite() && pulse_period_ns > 0.0) {
            return Err(Error::Domain(format!("invalid pulse period {pulse_period_ns}")));
        }
        let last = bin_edges_ns[bin_edges_ns.len() - 1];
        if last > pulse_period_ns * (1.0 + 1e-12) {
            return Err(Error::Integrity(format!(
                "last bin edge {last} ns exceeds pulse period {pulse_period_ns} ns"
            )));
        }
        Ok(Self {
            bin_edges_ns,
            counts,
            pulse_period_ns,
        })
    }

    /// Uniform bins of `width_ns` starting at zero.
    pub fn uniform(width_ns: f64, counts: Vec<u64>, pulse_period_ns: f64) -> Result<Self> {
        let edges = (0..=counts.len()).map(|i| i as f64 * width_ns).collect();
        Self::new(edges, counts, pulse_period_ns)
    }

    pub fn bin_edges_ns(&self) -> &[f64] {
        &self.bin_edges_ns
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn pulse_period_ns(&self) -> f64 {
        self.pulse_period_ns
    }

    pub fn bin_width_ns(&self) -> f64 {
        self.bin_edges_ns[1] - self.bin_edges_ns[0]
    }

    pub fn bin_centers_ns(&self) -> Vec<f64> {
        self.bin_edges_ns.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn g_zpl_wavelength_pairs_with_referenced_energy() {
        let e = nm_to_mev(1278.9).unwrap();
        assert!((e - 969.45).abs() < 0.02, "{e}");
        let w = mev_to_nm(969.45).unwrap();
        assert!((w - 1278.9).abs() < 0.05, "{w}");
    }

    #[test]
    fn hc_definition() {
        assert_relative_eq!(nm_to_mev(1239.84198).unwrap(), 1000.0, max_relative = 1e-12);
        assert_relative_eq!(mev_to_nm(1000.0).unwrap(), 1239.84198, max_relative = 1e-12);
    }

    #[test]
    fn e_line_wavelength() {
        // 969.45 - 71.9 meV; quoted as 1381.5 nm, exact hc/E is 1381.36 nm
        let w = mev_to_nm(G_ZPL_ENERGY_MEV - LVM_ENERGY_MEV).unwrap();
        assert!((w - 1381.5).abs() < 0.2, "{w}");
        let e = nm_to_mev(1381.5).unwrap();
        assert!((e - 897.55).abs() < 0.2, "{e}");
    }

    #[test]
    fn non_positive_inputs_rejected() {
        assert!(matches!(Wavelength::new(0.0), Err(Error::Domain(_))));
        assert!(matches!(PhotonEnergy::new(-3.0), Err(Error::Domain(_))));
        assert!(nm_to_mev(f64::NAN).is_err());
    }

    #[test]
    fn stream_invariants() {
        let tag = |t, c| TimeTag {
            timestamp_ps: t,
            channel: c,
        };
        assert!(TimeTagStream::new(vec![tag(0, 0), tag(5, 1)], 10, 2).is_ok());
        assert!(matches!(
            TimeTagStream::new(vec![tag(5, 0), tag(4, 1)], 10, 2),
            Err(Error::Integrity(_))
        ));
        assert!(matches!(
            TimeTagStream::new(vec![tag(11, 0)], 10, 2),
            Err(Error::Integrity(_))
        ));
        assert!(matches!(
            TimeTagStream::new(vec![tag(1, 2)], 10, 2),
            Err(Error::Channel(_))
        ));
    }

    #[test]
    fn record_invariants() {
        assert!(SpectrumTrace::from_pairs([(1.0, 1.0), (1.0, 2.0)]).is_err());
        assert!(SpectrumTrace::from_pairs([(1.0, -1.0)]).is_err());
        assert!(PolarizationScan::from_pairs((0..7).map(|i| (i as f64 * 10.0, 1.0))).is_err());
        let scan = PolarizationScan::from_pairs((0..8).map(|i| (i as f64 * 45.0 - 90.0, 1.0))).unwrap();
        assert!(scan.points().iter().all(|p| (0.0..360.0).contains(&p.angle_deg)));
        assert!(SaturationSeries::from_pairs([(1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]).is_err());
        assert!(SaturationSeries::from_pairs([(1.0, 1.0), (2.0, 1.0), (2.0, 1.0), (3.0, 1.0)]).is_err());
        assert!(DecayHistogram::uniform(1.0, vec![1, 2, 3], 2.0).is_err());
        assert!(DecayHistogram::new(vec![0.0, 1.0, 3.0], vec![1, 1], 10.0).is_err());
        let h = DecayHistogram::uniform(0.5, vec![1, 2, 3], 10.0).unwrap();
        assert_eq!(h.total(), 6);
        assert_eq!(h.bin_centers_ns(), vec![0.25, 0.75, 1.25]);
    }

    proptest! {
        #[test]
        fn roundtrip_identity(w in 1e-3f64..1e7) {
            let back = energy_to_wavelength(wavelength_to_energy(Wavelength::new(w).unwrap())).nm();
            prop_assert!(((back - w) / w).abs() < 1e-9);
        }

        #[test]
        fn strictly_decreasing(a in 1.0f64..1e5, d in 1e-6f64..1e3) {
            let e1 = nm_to_mev(a).unwrap();
            let e2 = nm_to_mev(a + d).unwrap();
            prop_assert!(e2 < e1);
        }
    }
}
