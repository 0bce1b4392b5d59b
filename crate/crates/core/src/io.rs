//! Time-tag binary files, typed two-column CSV scans, and measurement bundles.
//!
//! All writes go to a temporary file in the target directory and are renamed
//! into place, so readers never observe partial files.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photonsim::EmitterKind;
use crate::units::{DecayHistogram, PolarizationScan, SaturationSeries, SpectrumTrace, TimeTag, TimeTagStream};

pub const TTG_MAGIC: &[u8; 4] = b"TTG1";
pub const TTG_HEADER_LEN: usize = 16;
pub const TTG_RECORD_LEN: usize = 16;

fn atomic_write(path: &Path, write: impl FnOnce(&mut BufWriter<&mut File>) -> std::io::Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Atomically replace `path` with `text`.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, |w| w.write_all(text.as_bytes()))
}

/// Serialize a stream to the TTG1 layout.
pub fn encode_time_tags(s: &TimeTagStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(TTG_HEADER_LEN + TTG_RECORD_LEN * s.len());
    write_ttg(&mut out, s).expect("writing to a Vec cannot fail");
    out
}

fn write_ttg(w: &mut impl Write, s: &TimeTagStream) -> std::io::Result<()> {
    w.write_all(TTG_MAGIC)?;
    w.write_all(&s.channel_count().to_le_bytes())?;
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    let mut rec = [0u8; TTG_RECORD_LEN];
    for t in s.tags() {
        rec[..8].copy_from_slice(&t.timestamp_ps.to_le_bytes());
        rec[8] = t.channel;
        w.write_all(&rec)?;
    }
    Ok(())
}

/// Parse a TTG1 buffer. The format carries no acquisition length, so the
/// stream duration is `duration_ps` if given, else the last timestamp.
pub fn decode_time_tags(bytes: &[u8], duration_ps: Option<u64>) -> Result<TimeTagStream> {
    let mut r = bytes;
    decode_from(&mut r, bytes.len() as u64, duration_ps)
}

fn decode_from(r: &mut impl Read, total_len: u64, duration_ps: Option<u64>) -> Result<TimeTagStream> {
    let fmt = |m: String| Error::Format(m);
    let mut header = [0u8; TTG_HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| fmt(format!("file shorter than the {TTG_HEADER_LEN}-byte header")))?;
    if &header[..4] != TTG_MAGIC {
        return Err(fmt(format!("bad magic {:?}, expected \"TTG1\"", String::from_utf8_lossy(&header[..4]))));
    }
    let channel_count = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let records = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let expected = records
        .checked_mul(TTG_RECORD_LEN as u64)
        .and_then(|b| b.checked_add(TTG_HEADER_LEN as u64));
    if expected != Some(total_len) {
        return Err(fmt(format!(
            "header declares {records} records but the file holds {} bytes",
            total_len
        )));
    }
    let mut tags = Vec::with_capacity(records as usize);
    let mut rec = [0u8; TTG_RECORD_LEN];
    for i in 0..records {
        r.read_exact(&mut rec).map_err(|_| fmt(format!("truncated record {i}")))?;
        if rec[9..].iter().any(|&b| b != 0) {
            return Err(fmt(format!("nonzero padding in record {i}")));
        }
        tags.push(TimeTag {
            timestamp_ps: u64::from_le_bytes(rec[..8].try_into().unwrap()),
            channel: rec[8],
        });
    }
    let last = tags.last().map_or(0, |t| t.timestamp_ps);
    TimeTagStream::new(tags, duration_ps.unwrap_or(last).max(last), channel_count)
}

pub fn write_time_tags(path: &Path, s: &TimeTagStream) -> Result<()> {
    atomic_write(path, |w| write_ttg(w, s))
}

pub fn read_time_tags(path: &Path) -> Result<TimeTagStream> {
    read_time_tags_with_duration(path, None)
}

pub fn read_time_tags_with_duration(path: &Path, duration_ps: Option<u64>) -> Result<TimeTagStream> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    decode_from(&mut BufReader::new(f), len, duration_ps)
}

/// Kind of a typed scan file, given by the first header field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanKind {
    Spectrum,
    Polarization,
    Saturation,
    Decay,
}

impl ScanKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Spectrum => "spectrum",
            Self::Polarization => "polarization",
            Self::Saturation => "saturation",
            Self::Decay => "decay",
        }
    }

    pub fn units(self) -> (&'static str, &'static str) {
        match self {
            Self::Spectrum => ("nm", "counts"),
            Self::Polarization => ("deg", "cps"),
            Self::Saturation => ("uW", "kcps"),
            Self::Decay => ("ns", "counts"),
        }
    }

    fn parse(name: &str) -> Option<Self> {
        [Self::Spectrum, Self::Polarization, Self::Saturation, Self::Decay]
            .into_iter()
            .find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScanData {
    Spectrum(SpectrumTrace),
    Polarization(PolarizationScan),
    Saturation(SaturationSeries),
    Decay(DecayHistogram),
}

impl ScanData {
    pub fn kind(&self) -> ScanKind {
        match self {
            Self::Spectrum(_) => ScanKind::Spectrum,
            Self::Polarization(_) => ScanKind::Polarization,
            Self::Saturation(_) => ScanKind::Saturation,
            Self::Decay(_) => ScanKind::Decay,
        }
    }
}

struct RawScan {
    kind: ScanKind,
    options: Vec<(String, String)>,
    rows: Vec<(f64, f64)>,
}

impl RawScan {
    fn option(&self, key: &str) -> Result<f64> {
        let v = self
            .options
            .iter()
            .find(|(k, _)| k == key)
            .ok_or_else(|| Error::Format(format!("{} header lacks {key}=", self.kind.name())))?;
        v.1.parse()
            .map_err(|_| Error::Format(format!("invalid {key} value {:?}", v.1)))
    }
}

fn parse_scan_text(text: &str) -> Result<RawScan> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Format("empty scan file".into()))?
        .map_err(|e| Error::Format(e.to_string()))?;
    if header.len() < 3 {
        return Err(Error::Format("header must be kind,x_unit,y_unit".into()));
    }
    let kind = ScanKind::parse(&header[0])
        .ok_or_else(|| Error::Format(format!("unknown scan kind {:?}", &header[0])))?;
    let (xu, yu) = kind.units();
    if &header[1] != xu || &header[2] != yu {
        return Err(Error::Unit(format!(
            "{} expects units ({xu}, {yu}), file declares ({}, {})",
            kind.name(),
            &header[1],
            &header[2]
        )));
    }
    let mut options = Vec::new();
    for field in header.iter().skip(3) {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("header option {field:?} is not key=value")))?;
        options.push((k.to_string(), v.to_string()));
    }
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::Format(format!("row {} has {} fields, expected 2", i + 1, rec.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("row {}: {s:?} is not a number", i + 1)))
        };
        rows.push((num(&rec[0])?, num(&rec[1])?));
    }
    let sorted_strict = rows.windows(2).all(|w| w[1].0 > w[0].0);
    if !sorted_strict {
        return Err(Error::Integrity(format!("{} x column is not strictly increasing", kind.name())));
    }
    Ok(RawScan { kind, options, rows })
}

fn raw_to_scan(raw: RawScan) -> Result<ScanData> {
    Ok(match raw.kind {
        ScanKind::Spectrum => ScanData::Spectrum(SpectrumTrace::from_pairs(raw.rows)?),
        ScanKind::Polarization => ScanData::Polarization(PolarizationScan::from_pairs(raw.rows)?),
        ScanKind::Saturation => ScanData::Saturation(SaturationSeries::from_pairs(raw.rows)?),
        ScanKind::Decay => {
            let width = raw.option("width_ns")?;
            let period = raw.option("period_ns")?;
            if raw.rows.is_empty() {
                return Err(Error::InsufficientData("decay file has no bins".into()));
            }
            let mut edges: Vec<f64> = raw.rows.iter().map(|r| r.0).collect();
            // Same arithmetic as uniform bins so written histograms compare equal.
            edges.push(edges[0] + edges.len() as f64 * width);
            let counts = raw
                .rows
                .iter()
                .map(|&(_, c)| {
                    if c >= 0.0 && c.fract() == 0.0 && c <= u64::MAX as f64 {
                        Ok(c as u64)
                    } else {
                        Err(Error::Format(format!("decay count {c} is not a non-negative integer")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            ScanData::Decay(DecayHistogram::new(edges, counts, period)?)
        }
    })
}

pub fn parse_scan(text: &str) -> Result<ScanData> {
    raw_to_scan(parse_scan_text(text)?)
}

fn expect_kind(text: &str, kind: ScanKind) -> Result<ScanData> {
    let raw = parse_scan_text(text)?;
    if raw.kind != kind {
        return Err(Error::Format(format!("expected a {} file, found {}", kind.name(), raw.kind.name())));
    }
    raw_to_scan(raw)
}

pub fn format_scan(scan: &ScanData) -> String {
    use std::fmt::Write as _;
    let kind = scan.kind();
    let (xu, yu) = kind.units();
    let mut out = format!("{},{xu},{yu}", kind.name());
    let mut row = |x: f64, y: f64| {
        let _ = write!(out, "\n{x},{y}");
    };
    match scan {
        ScanData::Spectrum(s) => s.samples().iter().for_each(|p| row(p.wavelength_nm, p.intensity)),
        ScanData::Polarization(s) => s.points().iter().for_each(|p| row(p.angle_deg, p.intensity)),
        ScanData::Saturation(s) => s.points().iter().for_each(|p| row(p.power_uw, p.intensity_kcps)),
        ScanData::Decay(h) => {
            let header = format!(",width_ns={},period_ns={}", h.bin_width_ns(), h.pulse_period_ns());
            let edges = h.bin_edges_ns();
            h.counts().iter().zip(edges).for_each(|(&c, &e)| row(e, c as f64));
            let first_newline = out.find('\n').unwrap_or(out.len());
            out.insert_str(first_newline, &header);
        }
    }
    out.push('\n');
    out
}

pub fn write_scan(path: &Path, scan: &ScanData) -> Result<()> {
    let text = format_scan(scan);
    atomic_write(path, |w| w.write_all(text.as_bytes()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_scan(path: &Path) -> Result<ScanData> {
    parse_scan(&read_text(path)?)
}

macro_rules! typed_reader {
    ($name:ident, $kind:ident, $ty:ty) => {
        pub fn $name(path: &Path) -> Result<$ty> {
            match expect_kind(&read_text(path)?, ScanKind::$kind)? {
                ScanData::$kind(v) => Ok(v),
                _ => unreachable!(),
            }
        }
    };
}

typed_reader!(read_spectrum, Spectrum, SpectrumTrace);
typed_reader!(read_polarization, Polarization, PolarizationScan);
typed_reader!(read_saturation, Saturation, SaturationSeries);
typed_reader!(read_decay, Decay, DecayHistogram);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub temperature_k: f64,
    pub layer_thickness_nm: u32,
    /// Analyzer angle of the [110] crystal direction, degrees.
    pub axis_reference_deg: f64,
    pub excitation_wavelength_nm: f64,
}

impl Default for BundleMetadata {
    fn default() -> Self {
        Self {
            temperature_k: 10.0,
            layer_thickness_nm: 60,
            axis_reference_deg: 0.0,
            excitation_wavelength_nm: 532.0,
        }
    }
}

/// Ground truth recorded for simulated bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSource {
    pub kind: EmitterKind,
    pub seed: u64,
}

/// All measurements of one emitter.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBundle {
    pub emitter_id: String,
    pub metadata: BundleMetadata,
    pub stream: Option<TimeTagStream>,
    pub decay: Option<DecayHistogram>,
    pub polarization: Option<PolarizationScan>,
    pub saturation: Option<SaturationSeries>,
    pub spectrum: Option<SpectrumTrace>,
    pub source: Option<SimulationSource>,
}

impl MeasurementBundle {
    pub fn new(emitter_id: impl Into<String>, metadata: BundleMetadata) -> Self {
        Self {
            emitter_id: emitter_id.into(),
            metadata,
            stream: None,
            decay: None,
            polarization: None,
            saturation: None,
            spectrum: None,
            source: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.emitter_id.trim().is_empty() {
            return Err(Error::Integrity("bundle emitter_id is empty".into()));
        }
        let any = self.stream.is_some()
            || self.decay.is_some()
            || self.polarization.is_some()
            || self.saturation.is_some()
            || self.spectrum.is_some();
        if !any {
            return Err(Error::Integrity(format!("bundle {} holds no measurement", self.emitter_id)));
        }
        Ok(())
    }
}

pub const BUNDLE_MANIFEST: &str = "bundle.toml";
const STREAM_FILE: &str = "tags.ttg";
const DECAY_FILE: &str = "decay.csv";
const POLARIZATION_FILE: &str = "polarization.csv";
const SATURATION_FILE: &str = "saturation.csv";
const SPECTRUM_FILE: &str = "spectrum.csv";

#[derive(Debug, Serialize, Deserialize)]
struct StreamEntry {
    file: String,
    duration_ps: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct FileEntries {
    #[serde(skip_serializing_if = "Option::is_none")]
    decay: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    polarization: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    saturation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spectrum: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    emitter_id: String,
    metadata: BundleMetadata,
    #[serde(skip_serializing_if = "Option::is_none")]
    stream: Option<StreamEntry>,
    #[serde(default)]
    files: FileEntries,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<SimulationSource>,
}

/// Write a bundle as a directory: `bundle.toml` plus one file per measurement.
pub fn write_bundle(dir: &Path, b: &MeasurementBundle) -> Result<()> {
    b.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = FileEntries::default();
    let scan = |name: &str, data: Option<ScanData>, slot: &mut Option<String>| -> Result<()> {
        if let Some(d) = data {
            write_scan(&dir.join(name), &d)?;
            *slot = Some(name.to_string());
        }
        Ok(())
    };
    scan(DECAY_FILE, b.decay.clone().map(ScanData::Decay), &mut files.decay)?;
    scan(POLARIZATION_FILE, b.polarization.clone().map(ScanData::Polarization), &mut files.polarization)?;
    scan(SATURATION_FILE, b.saturation.clone().map(ScanData::Saturation), &mut files.saturation)?;
    scan(SPECTRUM_FILE, b.spectrum.clone().map(ScanData::Spectrum), &mut files.spectrum)?;
    let stream = match &b.stream {
        Some(s) => {
            write_time_tags(&dir.join(STREAM_FILE), s)?;
            Some(StreamEntry {
                file: STREAM_FILE.into(),
                duration_ps: s.duration_ps(),
            })
        }
        None => None,
    };
    let manifest = Manifest {
        emitter_id: b.emitter_id.clone(),
        metadata: b.metadata.clone(),
        stream,
        files,
        source: b.source.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    atomic_write(&dir.join(BUNDLE_MANIFEST), |w| w.write_all(text.as_bytes()))
}

pub fn read_bundle(dir: &Path) -> Result<MeasurementBundle> {
    let manifest_path = dir.join(BUNDLE_MANIFEST);
    let text = read_text(&manifest_path)?;
    let m: Manifest = toml::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    let path = |name: &String| -> Result<PathBuf> {
        let p = Path::new(name);
        if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            return Err(Error::Format(format!("bundle file {name:?} escapes the bundle directory")));
        }
        Ok(dir.join(p))
    };
    let bundle = MeasurementBundle {
        emitter_id: m.emitter_id,
        metadata: m.metadata,
        stream: m
            .stream
            .as_ref()
            .map(|s| read_time_tags_with_duration(&path(&s.file)?, Some(s.duration_ps)))
            .transpose()?,
        decay: m.files.decay.as_ref().map(|f| read_decay(&path(f)?)).transpose()?,
        polarization: m.files.polarization.as_ref().map(|f| read_polarization(&path(f)?)).transpose()?,
        saturation: m.files.saturation.as_ref().map(|f| read_saturation(&path(f)?)).transpose()?,
        spectrum: m.files.spectrum.as_ref().map(|f| read_spectrum(&path(f)?)).transpose()?,
        source: m.source,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(ts: &[(u64, u8)], duration: u64) -> TimeTagStream {
        let tags = ts
            .iter()
            .map(|&(timestamp_ps, channel)| TimeTag { timestamp_ps, channel })
            .collect();
        TimeTagStream::new(tags, duration, 2).unwrap()
    }

    #[test]
    fn ttg_layout() {
        let s = stream(&[(5, 0), (0x0102, 1)], 1000);
        let b = encode_time_tags(&s);
        assert_eq!(b.len(), 16 + 32);
        assert_eq!(&b[..4], b"TTG1");
        assert_eq!(&b[4..8], &[2, 0, 0, 0]);
        assert_eq!(&b[8..16], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[16..24], &[5, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(b[24], 0);
        assert_eq!(&b[32..40], &[2, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(b[40], 1);
        assert!(b[41..48].iter().all(|&x| x == 0));
        let back = decode_time_tags(&b, Some(1000)).unwrap();
        assert_eq!(back, s);
        assert_eq!(decode_time_tags(&b, None).unwrap().duration_ps(), 0x0102);
    }

    #[test]
    fn empty_stream_roundtrip_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.ttg");
        let s = TimeTagStream::new(vec![], 0, 2).unwrap();
        write_time_tags(&p, &s).unwrap();
        let bytes = fs::read(&p).unwrap();
        let back = read_time_tags(&p).unwrap();
        assert_eq!(back, s);
        let p2 = dir.path().join("e2.ttg");
        write_time_tags(&p2, &back).unwrap();
        assert_eq!(fs::read(&p2).unwrap(), bytes);
    }

    #[test]
    fn ttg_errors() {
        let mut b = encode_time_tags(&stream(&[(5, 0), (9, 1)], 10));
        let mut bad = b.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_time_tags(&bad, None), Err(Error::Format(_))));
        assert!(matches!(decode_time_tags(&b[..20], None), Err(Error::Format(_))));
        assert!(matches!(decode_time_tags(&b[..8], None), Err(Error::Format(_))));
        let mut pad = b.clone();
        pad[26] = 1;
        assert!(matches!(decode_time_tags(&pad, None), Err(Error::Format(_))));
        // Swap the timestamps so they decrease.
        b[16] = 9;
        b[32] = 5;
        assert!(matches!(decode_time_tags(&b, None), Err(Error::Integrity(_))));
    }

    #[test]
    fn scan_roundtrips() {
        let sat = SaturationSeries::from_pairs([(0.1, 0.7123), (1.0, 3.95), (10.0, 7.181818181), (20.5, 7.5)]).unwrap();
        let text = format_scan(&ScanData::Saturation(sat.clone()));
        assert!(text.starts_with("saturation,uW,kcps\n"));
        assert_eq!(parse_scan(&text).unwrap(), ScanData::Saturation(sat));

        let pol = PolarizationScan::from_pairs((0..12).map(|i| (i as f64 * 30.0, 100.0 + i as f64))).unwrap();
        assert_eq!(parse_scan(&format_scan(&ScanData::Polarization(pol.clone()))).unwrap(), ScanData::Polarization(pol));

        let h = DecayHistogram::uniform(0.25, vec![10, 500, 300, 2], 200.0).unwrap();
        let text = format_scan(&ScanData::Decay(h.clone()));
        assert!(text.starts_with("decay,ns,counts,width_ns=0.25,period_ns=200\n"));
        assert_eq!(parse_scan(&text).unwrap(), ScanData::Decay(h));
    }

    #[test]
    fn scan_errors() {
        let desc = "spectrum,nm,counts\n1280,5\n1279,6\n";
        assert!(matches!(parse_scan(desc), Err(Error::Integrity(_))));
        let rad = "polarization,rad,cps\n0,1\n0.5,2\n";
        assert!(matches!(parse_scan(rad), Err(Error::Unit(_))));
        assert!(matches!(parse_scan("histogram,ns,counts\n"), Err(Error::Format(_))));
        assert!(matches!(parse_scan(""), Err(Error::Format(_))));
        assert!(matches!(parse_scan("spectrum,nm,counts\n1,abc\n"), Err(Error::Format(_))));
        assert!(matches!(parse_scan("spectrum,nm,counts\n1,2,3\n"), Err(Error::Format(_))));
        assert!(matches!(parse_scan("decay,ns,counts\n0,1\n"), Err(Error::Format(_))));
        assert!(matches!(
            expect_kind("spectrum,nm,counts\n1,2\n", ScanKind::Saturation),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn bundle_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = MeasurementBundle::new("emitter-7", BundleMetadata::default());
        assert!(matches!(write_bundle(dir.path(), &b), Err(Error::Integrity(_))));
        b.stream = Some(stream(&[(5, 0), (9, 1)], 1_000_000));
        b.spectrum = Some(SpectrumTrace::from_pairs([(1270.0, 3.0), (1279.0, 90.0), (1290.0, 4.0)]).unwrap());
        b.source = Some(SimulationSource { kind: EmitterKind::G, seed: 3 });
        write_bundle(dir.path(), &b).unwrap();
        assert_eq!(read_bundle(dir.path()).unwrap(), b);

        let empty_id = MeasurementBundle { emitter_id: " ".into(), ..b };
        assert!(matches!(empty_id.validate(), Err(Error::Integrity(_))));
        assert!(matches!(read_bundle(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ttg_roundtrip(mut ts in proptest::collection::vec((0u64..u64::MAX / 2, 0u8..4), 0..200)) {
            ts.sort();
            let duration = ts.last().map_or(0, |t| t.0) + 17;
            let tags = ts.iter().map(|&(timestamp_ps, channel)| TimeTag { timestamp_ps, channel }).collect();
            let s = TimeTagStream::new(tags, duration, 4).unwrap();
            prop_assert_eq!(decode_time_tags(&encode_time_tags(&s), Some(duration)).unwrap(), s);
        }

        #[test]
        fn spectrum_roundtrip_nine_digits(values in proptest::collection::vec((1u32..999_999_999, 0u32..999_999_999), 1..50)) {
            let mut x = 1000.0;
            let pairs: Vec<(f64, f64)> = values
                .iter()
                .map(|&(dx, y)| {
                    x += dx as f64 * 1e-6;
                    let xr: f64 = format!("{:.9e}", x).parse().unwrap();
                    x = xr;
                    (xr, y as f64 * 1e-3)
                })
                .collect();
            let s = SpectrumTrace::from_pairs(pairs).unwrap();
            let text = format_scan(&ScanData::Spectrum(s.clone()));
            prop_assert_eq!(parse_scan(&text).unwrap(), ScanData::Spectrum(s));
        }
    }
}
