//! Coincidence histograms and normalized g2 from two-channel time-tag streams.
//!
//! Bins are centred on integer multiples of the bin width, so bin `k` holds
//! delays `d = t1 - t0` with `|d|` in `[(|k| - 1/2) w, (|k| + 1/2) w)` and the
//! sign of `k`. Delays of exactly half a bin round away from zero, which keeps
//! the layout mirror symmetric.

use crate::error::{Error, Result};
use crate::units::TimeTagStream;
use rayon::prelude::*;

/// Coincidence counts and their g2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    bin_width_ps: u64,
    half_bins: usize,
    coincidences: Vec<u64>,
    normalized_g2: Vec<f64>,
    rates_cps: (f64, f64),
    duration_s: f64,
}

impl CorrelationHistogram {
    pub fn bin_width_ns(&self) -> f64 {
        self.bin_width_ps as f64 * 1e-3
    }

    pub fn n_bins(&self) -> usize {
        self.coincidences.len()
    }

    /// Index of the zero-delay bin.
    pub fn center_index(&self) -> usize {
        self.half_bins
    }

    pub fn bin_centers_ns(&self) -> Vec<f64> {
        let w = self.bin_width_ns();
        (0..self.n_bins())
            .map(|i| (i as f64 - self.half_bins as f64) * w)
            .collect()
    }

    /// `n_bins + 1` edges, mirror symmetric around zero.
    pub fn bin_edges_ns(&self) -> Vec<f64> {
        let w = self.bin_width_ns();
        (0..=self.n_bins())
            .map(|i| (i as f64 - self.half_bins as f64 - 0.5) * w)
            .collect()
    }

    pub fn coincidences(&self) -> &[u64] {
        &self.coincidences
    }

    pub fn normalized_g2(&self) -> &[f64] {
        &self.normalized_g2
    }

    pub fn rates_cps(&self) -> (f64, f64) {
        self.rates_cps
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    /// Coincidences per bin expected for uncorrelated light, `r1 r2 T w`.
    pub fn expected_per_bin(&self) -> f64 {
        self.rates_cps.0 * self.rates_cps.1 * self.duration_s * self.bin_width_ps as f64 * 1e-12
    }

    fn from_counts(coincidences: Vec<u64>, half_bins: usize, bin_width_ps: u64, n0: usize, n1: usize, duration_ps: u64) -> Self {
        let duration_s = duration_ps as f64 * 1e-12;
        let rates_cps = if duration_ps > 0 {
            (n0 as f64 / duration_s, n1 as f64 / duration_s)
        } else {
            (0.0, 0.0)
        };
        let mut h = Self {
            bin_width_ps,
            half_bins,
            normalized_g2: Vec::new(),
            coincidences,
            rates_cps,
            duration_s,
        };
        let expected = h.expected_per_bin();
        h.normalized_g2 = h
            .coincidences
            .iter()
            .map(|&c| if expected > 0.0 { c as f64 / expected } else { 0.0 })
            .collect();
        h
    }
}

/// A value with its 1-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measured {
    pub value: f64,
    pub sigma: f64,
}

impl Measured {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, sigma: 0.0 }
    }
}

impl std::fmt::Display for Measured {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} +/- {}", self.value, self.sigma)
    }
}

/// Antibunching threshold for single-photon emission.
pub const SINGLE_EMITTER_G2_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Binning {
    width: i64,
    half_bins: usize,
    reach: i64,
}

impl Binning {
    fn new(window_ns: f64, bin_width_ns: f64) -> Result<Self> {
        if !(bin_width_ns.is_finite() && bin_width_ns > 0.0) {
            return Err(Error::Domain(format!("bin width must be positive, got {bin_width_ns} ns")));
        }
        if !(window_ns.is_finite() && window_ns >= bin_width_ns) {
            return Err(Error::Domain(format!(
                "window {window_ns} ns must be at least one bin width ({bin_width_ns} ns)"
            )));
        }
        let width = (bin_width_ns * 1e3).round() as i64;
        if width < 1 {
            return Err(Error::Domain("bin width is below 1 ps".into()));
        }
        let half_bins = ((window_ns * 1e3) / width as f64 + 1e-9).floor() as usize;
        // Largest |delay| that lands inside the outermost bin.
        let reach = (2 * half_bins as i64 + 1) * width;
        Ok(Self {
            width,
            half_bins,
            reach,
        })
    }

    /// Bin index for delay `d` (ps), if it falls inside the histogram.
    #[inline]
    fn index(&self, d: i64) -> Option<usize> {
        // k = sign(d) floor((2|d| + w) / 2w)
        let a = d.unsigned_abs() as i64;
        if 2 * a >= self.reach {
            return None;
        }
        let k = (2 * a + self.width) / (2 * self.width);
        let k = if d < 0 { -k } else { k };
        Some((k + self.half_bins as i64) as usize)
    }

    #[inline]
    fn max_delay(&self) -> i64 {
        // |d| < reach / 2
        (self.reach - 1) / 2
    }
}

fn sweep(starts: &[u64], stops: &[u64], binning: Binning, counts: &mut [u64]) {
    let reach = binning.max_delay() as u64;
    let mut lo = 0usize;
    for &t0 in starts {
        let min = t0.saturating_sub(reach);
        while lo < stops.len() && stops[lo] < min {
            lo += 1;
        }
        let max = t0.saturating_add(reach);
        for &t1 in &stops[lo..] {
            if t1 > max {
                break;
            }
            if let Some(i) = binning.index(t1 as i64 - t0 as i64) {
                counts[i] += 1;
            }
        }
    }
}

fn sweep_chunked(starts: &[u64], stops: &[u64], binning: Binning, n_bins: usize, threads: usize) -> Vec<u64> {
    if threads <= 1 || starts.len() < 2 * threads {
        let mut counts = vec![0u64; n_bins];
        sweep(starts, stops, binning, &mut counts);
        return counts;
    }
    let chunk = starts.len().div_ceil(threads);
    let job = || {
        starts
            .par_chunks(chunk)
            .map(|part| {
                // Each chunk only needs the stop tags within reach of its own range.
                let reach = binning.max_delay() as u64;
                let first = part[0].saturating_sub(reach);
                let last = part[part.len() - 1].saturating_add(reach);
                let a = stops.partition_point(|&t| t < first);
                let b = stops.partition_point(|&t| t <= last);
                let mut counts = vec![0u64; n_bins];
                sweep(part, &stops[a..b], binning, &mut counts);
                counts
            })
            .reduce(
                || vec![0u64; n_bins],
                |mut acc, c| {
                    acc.iter_mut().zip(c).for_each(|(a, b)| *a += b);
                    acc
                },
            )
    };
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(job),
        Err(_) => job(),
    }
}

/// Full cross-correlation of channel 0 (start) against channel 1 (stop).
pub fn correlate(s: &TimeTagStream, window_ns: f64, bin_width_ns: f64) -> Result<CorrelationHistogram> {
    correlate_threaded(s, window_ns, bin_width_ns, 1)
}

/// [`correlate`] with channel-0 tags split into `threads` contiguous chunks.
pub fn correlate_threaded(
    s: &TimeTagStream,
    window_ns: f64,
    bin_width_ns: f64,
    threads: usize,
) -> Result<CorrelationHistogram> {
    if s.channel_count() < 2 {
        return Err(Error::Channel(format!(
            "cross-correlation needs two channels, stream has {}",
            s.channel_count()
        )));
    }
    let binning = Binning::new(window_ns, bin_width_ns)?;
    let n_bins = 2 * binning.half_bins + 1;
    let ch0 = s.channel_timestamps(0);
    let ch1 = s.channel_timestamps(1);
    let counts = sweep_chunked(&ch0, &ch1, binning, n_bins, threads.max(1));
    Ok(CorrelationHistogram::from_counts(
        counts,
        binning.half_bins,
        binning.width as u64,
        ch0.len(),
        ch1.len(),
        s.duration_ps(),
    ))
}

/// Autocorrelation of all tags regardless of channel, excluding each tag's
/// pairing with itself.
pub fn autocorrelate(s: &TimeTagStream, window_ns: f64, bin_width_ns: f64) -> Result<CorrelationHistogram> {
    let binning = Binning::new(window_ns, bin_width_ns)?;
    let n_bins = 2 * binning.half_bins + 1;
    let all: Vec<u64> = s.tags().iter().map(|t| t.timestamp_ps).collect();
    let reach = binning.max_delay() as u64;
    let mut counts = vec![0u64; n_bins];
    let mut lo = 0usize;
    for (i, &t0) in all.iter().enumerate() {
        let min = t0.saturating_sub(reach);
        while all[lo] < min {
            lo += 1;
        }
        for (j, &t1) in all.iter().enumerate().skip(lo) {
            if t1 > t0.saturating_add(reach) {
                break;
            }
            if j == i {
                continue;
            }
            if let Some(b) = binning.index(t1 as i64 - t0 as i64) {
                counts[b] += 1;
            }
        }
    }
    Ok(CorrelationHistogram::from_counts(
        counts,
        binning.half_bins,
        binning.width as u64,
        all.len(),
        all.len(),
        s.duration_ps(),
    ))
}

/// Mean normalized g2 over the `averaging_bins` central bins, with the Poisson
/// error of the raw coincidences (at least one count) propagated.
pub fn g2_at_zero(h: &CorrelationHistogram, averaging_bins: usize) -> Result<Measured> {
    if averaging_bins == 0 || averaging_bins.is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "averaging bins must be odd and positive, got {averaging_bins}"
        )));
    }
    if averaging_bins > h.n_bins() {
        return Err(Error::Domain(format!(
            "cannot average {averaging_bins} bins of a {}-bin histogram",
            h.n_bins()
        )));
    }
    let expected = h.expected_per_bin();
    if !(expected > 0.0) {
        return Err(Error::UndefinedNormalization(
            "no coincidences are expected (a channel is empty or the duration is zero)".into(),
        ));
    }
    let half = averaging_bins / 2;
    let c = h.center_index();
    let raw: u64 = h.coincidences[c - half..=c + half].iter().sum();
    let denom = expected * averaging_bins as f64;
    Ok(Measured::new(
        raw as f64 / denom,
        (raw.max(1) as f64).sqrt() / denom,
    ))
}

/// Antibunching gate: `g2(0) + k sigma < 0.5`.
pub fn is_single_emitter_with_guard(g2_0: Measured, guard_sigmas: f64) -> bool {
    g2_0.value + guard_sigmas * g2_0.sigma < SINGLE_EMITTER_G2_THRESHOLD
}

/// Antibunching gate with a one-sigma guard band.
pub fn is_single_emitter(g2_0: Measured) -> bool {
    is_single_emitter_with_guard(g2_0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::TimeTag;
    use proptest::prelude::*;

    fn stream(ch0: &[u64], ch1: &[u64], duration: u64) -> TimeTagStream {
        let mut tags: Vec<TimeTag> = ch0
            .iter()
            .map(|&t| TimeTag { timestamp_ps: t, channel: 0 })
            .chain(ch1.iter().map(|&t| TimeTag { timestamp_ps: t, channel: 1 }))
            .collect();
        tags.sort();
        TimeTagStream::new(tags, duration, 2).unwrap()
    }

    /// Independent O(n^2) oracle using the same bin definition in floating point.
    fn brute_force(ch0: &[u64], ch1: &[u64], half: i64, width_ps: u64) -> Vec<u64> {
        let mut out = vec![0u64; (2 * half + 1) as usize];
        for &a in ch0 {
            for &b in ch1 {
                let d = (b as f64 - a as f64) / width_ps as f64;
                let k = d.signum() * (d.abs() + 0.5).floor();
                if k.abs() <= half as f64 {
                    out[(k as i64 + half) as usize] += 1;
                }
            }
        }
        out
    }

    #[test]
    fn hand_countable() {
        let s = stream(&[0], &[1000], 10_000);
        let h = correlate(&s, 5.0, 1.0).unwrap();
        assert_eq!(h.n_bins(), 11);
        assert_eq!(h.coincidences().iter().sum::<u64>(), 1);
        assert_eq!(h.coincidences()[h.center_index() + 1], 1);
        let edges = h.bin_edges_ns();
        assert_eq!(edges[0], -5.5);
        assert_eq!(edges[11], 5.5);
        for (a, b) in edges.iter().zip(edges.iter().rev()) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn half_bin_rounds_away_from_zero() {
        let s = stream(&[10_000, 20_000], &[10_500, 19_500], 30_000);
        let h = correlate(&s, 2.0, 1.0).unwrap();
        let c = h.center_index();
        assert_eq!(h.coincidences()[c + 1], 1);
        assert_eq!(h.coincidences()[c - 1], 1);
        assert_eq!(h.coincidences()[c], 0);
    }

    #[test]
    fn normalization_invariant() {
        let s = stream(&[0, 5000, 9000], &[1000, 6000], 1_000_000);
        let h = correlate(&s, 5.0, 1.0).unwrap();
        let expected = (3.0 / 1e-6) * (2.0 / 1e-6) * 1e-6 * 1e-9;
        for (c, g) in h.coincidences().iter().zip(h.normalized_g2()) {
            assert!((g - *c as f64 / expected).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_and_parameter_errors() {
        let single = TimeTagStream::new(vec![TimeTag { timestamp_ps: 0, channel: 0 }], 10, 1).unwrap();
        assert!(matches!(correlate(&single, 5.0, 1.0), Err(Error::Channel(_))));
        let s = stream(&[0], &[1], 10);
        assert!(matches!(correlate(&s, 0.5, 1.0), Err(Error::Domain(_))));
        assert!(matches!(correlate(&s, 5.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn empty_stream_gives_empty_histogram() {
        let s = TimeTagStream::new(vec![], 0, 2).unwrap();
        let h = correlate(&s, 5.0, 1.0).unwrap();
        assert!(h.coincidences().iter().all(|&c| c == 0));
        assert!(matches!(g2_at_zero(&h, 3), Err(Error::UndefinedNormalization(_))));
    }

    #[test]
    fn g2_zero_averaging() {
        // Regular comb offsets give a flat histogram.
        let ch0: Vec<u64> = (0..1000).map(|i| i * 100_000).collect();
        let s = stream(&ch0, &ch0.iter().map(|t| t + 50_000).collect::<Vec<_>>(), 100_000_000);
        let h = correlate(&s, 5.0, 1.0).unwrap();
        assert!(matches!(g2_at_zero(&h, 2), Err(Error::Domain(_))));
        assert!(matches!(g2_at_zero(&h, 0), Err(Error::Domain(_))));
        assert_eq!(g2_at_zero(&h, 3).unwrap().value, 0.0);
    }

    #[test]
    fn flat_histogram_is_one() {
        // r1 = r2 = 1e5 /s over 1 s with 1 ns bins: 10 expected per bin
        let h = CorrelationHistogram::from_counts(vec![10; 11], 5, 1000, 100_000, 100_000, 1_000_000_000_000);
        assert!((h.expected_per_bin() - 10.0).abs() < 1e-9);
        let g = g2_at_zero(&h, 3).unwrap();
        assert!((g.value - 1.0).abs() < 1e-12);
        assert!((g.sigma - (30.0f64).sqrt() / 30.0).abs() < 1e-12);
    }

    #[test]
    fn bunched_pairs_exceed_one() {
        // Simultaneous photon pairs on both channels at random times.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut times: Vec<u64> = (0..2000).map(|_| rng.random_range(0..1_000_000_000u64)).collect();
        times.sort();
        let s = stream(&times, &times, 1_000_000_000);
        let h = correlate(&s, 10.0, 1.0).unwrap();
        let bf = brute_force(&times, &times, 10, 1000);
        assert_eq!(h.coincidences(), bf.as_slice());
        assert!(g2_at_zero(&h, 3).unwrap().value > 1.0);
    }

    #[test]
    fn gate() {
        assert!(is_single_emitter(Measured::new(0.1, 0.05)));
        assert!(!is_single_emitter(Measured::new(0.45, 0.10)));
        assert!(!is_single_emitter(Measured::new(1.0, 0.02)));
    }

    #[test]
    fn threaded_matches_serial() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut a: Vec<u64> = (0..5000).map(|_| rng.random_range(0..10_000_000u64)).collect();
        let mut b: Vec<u64> = (0..5000).map(|_| rng.random_range(0..10_000_000u64)).collect();
        a.sort();
        b.sort();
        let s = stream(&a, &b, 10_000_000);
        let h1 = correlate(&s, 20.0, 0.5).unwrap();
        for threads in [2, 3, 4, 7] {
            assert_eq!(h1, correlate_threaded(&s, 20.0, 0.5, threads).unwrap());
        }
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            mut a in proptest::collection::vec(0u64..2_000_000, 0..500),
            mut b in proptest::collection::vec(0u64..2_000_000, 0..500),
            width in 1u64..5_000,
            half in 1u64..40,
        ) {
            a.sort();
            b.sort();
            let s = stream(&a, &b, 2_000_000);
            let width_ns = width as f64 * 1e-3;
            let window_ns = (half * width) as f64 * 1e-3;
            let h = correlate(&s, window_ns, width_ns).unwrap();
            let expected = brute_force(&a, &b, half as i64, width);
            prop_assert_eq!(h.coincidences(), expected.as_slice());
        }

        #[test]
        fn autocorrelation_is_time_symmetric(
            mut a in proptest::collection::vec(0u64..1_000_000, 1..400),
            width in 1u64..3_000,
        ) {
            a.sort();
            let s = stream(&a, &[], 1_000_000);
            let h = autocorrelate(&s, width as f64 * 20e-3, width as f64 * 1e-3).unwrap();
            let g = h.normalized_g2();
            for i in 0..g.len() {
                prop_assert_eq!(g[i], g[g.len() - 1 - i]);
            }
        }
    }
}
