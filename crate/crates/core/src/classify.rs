//! Four-fingerprint G / G★ classification and the quantum-efficiency ratio.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlator::Measured;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElineStatus {
    Present,
    Absent,
    Unmeasured,
}

impl fmt::Display for ElineStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Present => "present",
            Self::Absent => "absent",
            Self::Unmeasured => "unmeasured",
        })
    }
}

/// Feature vector extracted from the measurements of one emitter.
#[derive(Debug, Clone, PartialEq)]
pub struct EmitterFeatures {
    pub g2_zero: Measured,
    pub eline: ElineStatus,
    pub lifetime_ns: Measured,
    pub polar_visibility: Measured,
    /// Dipole axis relative to the [110] crystal direction, degrees.
    /// `None` when the fit could not define it.
    pub polar_axis_deg: Option<f64>,
    pub sat_intensity_kcps: Option<f64>,
    pub sat_power_uw: Option<f64>,
}

impl EmitterFeatures {
    /// NaN marks an unmeasured lifetime or visibility and is accepted.
    pub fn validate(&self) -> Result<()> {
        let tau = self.lifetime_ns.value;
        if !tau.is_nan() && !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Domain(format!("lifetime must be positive, got {tau}")));
        }
        let v = self.polar_visibility.value;
        if !v.is_nan() && !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("visibility must be in [0, 1], got {v}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Eline,
    Lifetime,
    Visibility,
    Axis,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Self::Eline, Self::Lifetime, Self::Visibility, Self::Axis];

    pub fn name(self) -> &'static str {
        match self {
            Self::Eline => "eline",
            Self::Lifetime => "lifetime",
            Self::Visibility => "visibility",
            Self::Axis => "axis",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "pro-G")]
    ProG,
    #[serde(rename = "pro-Gstar")]
    ProGstar,
    #[serde(rename = "neutral")]
    Neutral,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ProG => "pro-G",
            Self::ProGstar => "pro-Gstar",
            Self::Neutral => "neutral",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    G,
    Gstar,
    Inconclusive,
    NotSingle,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::G => "G",
            Self::Gstar => "Gstar",
            Self::Inconclusive => "inconclusive",
            Self::NotSingle => "not_single",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriterionThresholds {
    pub g2_threshold: f64,
    /// Guard band on g2(0) in units of its sigma.
    pub g2_guard_sigmas: f64,
    pub lifetime_g_max_ns: f64,
    pub lifetime_gstar_min_ns: f64,
    pub visibility_g_max: f64,
    pub visibility_gstar_min: f64,
    pub axis_tolerance_deg: f64,
    /// Votes the winning side needs.
    pub min_votes: usize,
    /// Votes the losing side may have at most.
    pub max_opposing_votes: usize,
}

impl Default for CriterionThresholds {
    fn default() -> Self {
        Self {
            g2_threshold: 0.5,
            g2_guard_sigmas: 1.0,
            lifetime_g_max_ns: 10.0,
            lifetime_gstar_min_ns: 25.0,
            visibility_g_max: 0.75,
            visibility_gstar_min: 0.80,
            axis_tolerance_deg: 10.0,
            min_votes: 3,
            max_opposing_votes: 1,
        }
    }
}

impl CriterionThresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.g2_threshold > 0.0
            && self.g2_guard_sigmas >= 0.0
            && self.lifetime_g_max_ns > 0.0
            && self.lifetime_g_max_ns <= self.lifetime_gstar_min_ns
            && (0.0..=1.0).contains(&self.visibility_g_max)
            && (0.0..=1.0).contains(&self.visibility_gstar_min)
            && self.visibility_g_max <= self.visibility_gstar_min
            && (0.0..45.0).contains(&self.axis_tolerance_deg)
            && self.min_votes > self.max_opposing_votes;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent classification thresholds: {self:?}")))
        }
    }

    /// Antibunching gate on g2(0).
    pub fn passes_antibunching(&self, g2: Measured) -> bool {
        g2.value.is_finite() && g2.value + self.g2_guard_sigmas * g2.sigma.max(0.0) < self.g2_threshold
    }
}

/// Distance of an axis angle from the nearest of 0° and 90°, modulo 180°.
pub fn axis_offset_deg(phi0_deg: f64) -> f64 {
    let r = phi0_deg.rem_euclid(90.0);
    r.min(90.0 - r)
}

pub fn evaluate_criterion(c: Criterion, f: &EmitterFeatures, t: &CriterionThresholds) -> Verdict {
    match c {
        Criterion::Eline => match f.eline {
            ElineStatus::Present => Verdict::ProG,
            ElineStatus::Absent => Verdict::ProGstar,
            ElineStatus::Unmeasured => Verdict::Neutral,
        },
        Criterion::Lifetime => {
            let tau = f.lifetime_ns.value;
            if !(tau.is_finite() && tau > 0.0) {
                Verdict::Neutral
            } else if tau <= t.lifetime_g_max_ns {
                Verdict::ProG
            } else if tau >= t.lifetime_gstar_min_ns {
                Verdict::ProGstar
            } else {
                Verdict::Neutral
            }
        }
        Criterion::Visibility => {
            let v = f.polar_visibility.value;
            if !(0.0..=1.0).contains(&v) {
                Verdict::Neutral
            } else if v <= t.visibility_g_max {
                Verdict::ProG
            } else if v >= t.visibility_gstar_min {
                Verdict::ProGstar
            } else {
                Verdict::Neutral
            }
        }
        Criterion::Axis => match f.polar_axis_deg {
            Some(phi) if phi.is_finite() => {
                if axis_offset_deg(phi) <= t.axis_tolerance_deg {
                    Verdict::ProG
                } else {
                    Verdict::ProGstar
                }
            }
            _ => Verdict::Neutral,
        },
    }
}

pub fn evaluate_criteria(f: &EmitterFeatures, t: &CriterionThresholds) -> BTreeMap<Criterion, Verdict> {
    Criterion::ALL.iter().map(|&c| (c, evaluate_criterion(c, f, t))).collect()
}

/// Vote counts (pro-G, pro-G★).
pub fn tally<'a>(verdicts: impl IntoIterator<Item = &'a Verdict>) -> (usize, usize) {
    verdicts.into_iter().fold((0, 0), |(g, s), v| match v {
        Verdict::ProG => (g + 1, s),
        Verdict::ProGstar => (g, s + 1),
        Verdict::Neutral => (g, s),
    })
}

fn decide(votes: (usize, usize), t: &CriterionThresholds) -> Label {
    let (g, s) = votes;
    if g >= t.min_votes && s <= t.max_opposing_votes {
        Label::G
    } else if s >= t.min_votes && g <= t.max_opposing_votes {
        Label::Gstar
    } else {
        Label::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub label: Label,
    pub criterion_verdicts: BTreeMap<Criterion, Verdict>,
    pub votes: (usize, usize),
    pub antibunched: bool,
    /// Quantum efficiency implied for a G label, relative to the reference G★.
    pub derived_qe: Option<QeRatio>,
    pub rationale: String,
}

/// Reference G★ emitter used to express a G emitter's quantum efficiency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QeReference {
    pub eta_gstar: f64,
    pub isat_gstar_kcps: f64,
    pub tau_gstar_ns: f64,
    pub coll_g: f64,
    pub coll_gstar: f64,
}

impl Default for QeReference {
    fn default() -> Self {
        Self {
            eta_gstar: 1.0,
            isat_gstar_kcps: 68.0,
            tau_gstar_ns: 33.4,
            coll_g: 0.04,
            coll_gstar: 0.02,
        }
    }
}

pub fn classify_emitter(f: &EmitterFeatures, t: &CriterionThresholds) -> ClassificationReport {
    classify_emitter_with_reference(f, t, &QeReference::default())
}

pub fn classify_emitter_with_reference(
    f: &EmitterFeatures,
    t: &CriterionThresholds,
    reference: &QeReference,
) -> ClassificationReport {
    let verdicts = evaluate_criteria(f, t);
    let votes = tally(verdicts.values());
    let antibunched = t.passes_antibunching(f.g2_zero);
    let label = if antibunched { decide(votes, t) } else { Label::NotSingle };

    let derived_qe = match (label, f.sat_intensity_kcps) {
        (Label::G, Some(isat)) => qe_ratio(&QeInputs {
            eta_gstar: reference.eta_gstar,
            isat_g_kcps: isat,
            isat_gstar_kcps: reference.isat_gstar_kcps,
            tau_g_ns: f.lifetime_ns.value,
            tau_gstar_ns: reference.tau_gstar_ns,
            coll_g: reference.coll_g,
            coll_gstar: reference.coll_gstar,
        })
        .ok(),
        _ => None,
    };

    let mut rationale = format!(
        "g2(0)={:.3}+/-{:.3} {} threshold {}",
        f.g2_zero.value,
        f.g2_zero.sigma,
        if antibunched { "below" } else { "not below" },
        t.g2_threshold
    );
    for (c, v) in &verdicts {
        rationale.push_str(&format!("; {c}={v}"));
    }
    rationale.push_str(&format!("; votes G={} Gstar={}", votes.0, votes.1));
    if let Some(q) = derived_qe {
        rationale.push_str(&format!("; derived eta_QE={:.4}", q.value));
        if q.exceeds_unity {
            rationale.push_str(" (exceeds 1)");
        }
    }

    ClassificationReport {
        label,
        criterion_verdicts: verdicts,
        votes,
        antibunched,
        derived_qe,
        rationale,
    }
}

pub fn classify_batch(features: &[EmitterFeatures], t: &CriterionThresholds) -> Vec<ClassificationReport> {
    features.par_iter().map(|f| classify_emitter(f, t)).collect()
}

/// Collection efficiency range per cap-layer thickness (nm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionEfficiencyModel {
    entries: BTreeMap<u32, (f64, f64)>,
}

impl CollectionEfficiencyModel {
    pub fn new(entries: BTreeMap<u32, (f64, f64)>) -> Result<Self> {
        for (t, &(lo, hi)) in &entries {
            if !(lo > 0.0 && lo <= hi && hi < 1.0) {
                return Err(Error::Domain(format!(
                    "collection efficiency range for {t} nm must satisfy 0 < min <= max < 1, got ({lo}, {hi})"
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Ranges for the two sample layers: 60 nm (G) and 220 nm (G★).
    pub fn reference_model() -> Self {
        Self {
            entries: BTreeMap::from([(60, (0.025, 0.04)), (220, (0.005, 0.02))]),
        }
    }

    pub fn entries(&self) -> &BTreeMap<u32, (f64, f64)> {
        &self.entries
    }

    pub fn range(&self, thickness_nm: u32) -> Result<(f64, f64)> {
        self.entries
            .get(&thickness_nm)
            .copied()
            .ok_or(Error::ModelCoverage(thickness_nm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QeInputs {
    pub eta_gstar: f64,
    pub isat_g_kcps: f64,
    pub isat_gstar_kcps: f64,
    pub tau_g_ns: f64,
    pub tau_gstar_ns: f64,
    pub coll_g: f64,
    pub coll_gstar: f64,
}

impl QeInputs {
    fn validate(&self) -> Result<()> {
        let all = [
            ("eta_gstar", self.eta_gstar),
            ("isat_g", self.isat_g_kcps),
            ("isat_gstar", self.isat_gstar_kcps),
            ("tau_g", self.tau_g_ns),
            ("tau_gstar", self.tau_gstar_ns),
            ("coll_g", self.coll_g),
            ("coll_gstar", self.coll_gstar),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.eta_gstar > 1.0 {
            return Err(Error::Domain(format!("eta_gstar must not exceed 1, got {}", self.eta_gstar)));
        }
        Ok(())
    }
}

/// A quantum-efficiency value; values above 1 are kept and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QeRatio {
    pub value: f64,
    pub exceeds_unity: bool,
}

impl QeRatio {
    fn new(value: f64) -> Self {
        Self {
            value,
            exceeds_unity: value > 1.0,
        }
    }
}

/// `eta_G = eta_G★ (Isat_G / Isat_G★) (tau_G / tau_G★) (coll_G★ / coll_G)`.
///
/// Saturated detected intensity is `coll * eta / tau`, so each collection
/// efficiency divides the intensity it inflates.
pub fn qe_ratio(x: &QeInputs) -> Result<QeRatio> {
    x.validate()?;
    Ok(QeRatio::new(
        x.eta_gstar * (x.isat_g_kcps / x.isat_gstar_kcps) * (x.tau_g_ns / x.tau_gstar_ns) * (x.coll_gstar / x.coll_g),
    ))
}

/// The same ratio with the collection factor inverted, `coll_G / coll_G★`.
/// Kept for comparison only.
pub fn qe_ratio_inverted_collection(x: &QeInputs) -> Result<QeRatio> {
    x.validate()?;
    Ok(QeRatio::new(
        x.eta_gstar * (x.isat_g_kcps / x.isat_gstar_kcps) * (x.tau_g_ns / x.tau_gstar_ns) * (x.coll_g / x.coll_gstar),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Min,
    Max,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Min => "min",
            Self::Max => "max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QeMeasured {
    pub isat_g_kcps: f64,
    pub isat_gstar_kcps: f64,
    pub tau_g_ns: f64,
    pub tau_gstar_ns: f64,
}

impl QeMeasured {
    fn with_collection(&self, coll_g: f64, coll_gstar: f64) -> QeInputs {
        QeInputs {
            eta_gstar: 1.0,
            isat_g_kcps: self.isat_g_kcps,
            isat_gstar_kcps: self.isat_gstar_kcps,
            tau_g_ns: self.tau_g_ns,
            tau_gstar_ns: self.tau_gstar_ns,
            coll_g,
            coll_gstar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QeBound {
    pub eta_g: QeRatio,
    pub inputs: QeInputs,
    pub coll_g_endpoint: Endpoint,
    pub coll_gstar_endpoint: Endpoint,
}

/// Worst-case bound with `eta_G★ = 1`: the G collection efficiency at its
/// minimum and the G★ one at its maximum.
pub fn qe_upper_bound(
    m: &QeMeasured,
    model: &CollectionEfficiencyModel,
    thickness_g_nm: u32,
    thickness_gstar_nm: u32,
) -> Result<QeBound> {
    let (g_lo, _) = model.range(thickness_g_nm)?;
    let (_, s_hi) = model.range(thickness_gstar_nm)?;
    let inputs = m.with_collection(g_lo, s_hi);
    Ok(QeBound {
        eta_g: qe_ratio(&inputs)?,
        inputs,
        coll_g_endpoint: Endpoint::Min,
        coll_gstar_endpoint: Endpoint::Max,
    })
}

/// Estimate with both collection efficiencies at their maxima.
pub fn qe_at_max_collection(
    m: &QeMeasured,
    model: &CollectionEfficiencyModel,
    thickness_g_nm: u32,
    thickness_gstar_nm: u32,
) -> Result<QeBound> {
    let (_, g_hi) = model.range(thickness_g_nm)?;
    let (_, s_hi) = model.range(thickness_gstar_nm)?;
    let inputs = m.with_collection(g_hi, s_hi);
    Ok(QeBound {
        eta_g: qe_ratio(&inputs)?,
        inputs,
        coll_g_endpoint: Endpoint::Max,
        coll_gstar_endpoint: Endpoint::Max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn features(eline: ElineStatus, tau: f64, v: f64, phi: Option<f64>) -> EmitterFeatures {
        EmitterFeatures {
            g2_zero: Measured::new(0.1, 0.02),
            eline,
            lifetime_ns: Measured::new(tau, 0.1),
            polar_visibility: Measured::new(v, 0.02),
            polar_axis_deg: phi,
            sat_intensity_kcps: Some(7.9),
            sat_power_uw: Some(1.1),
        }
    }

    fn genuine_g() -> EmitterFeatures {
        features(ElineStatus::Present, 4.9, 0.62, Some(0.0))
    }

    fn genuine_gstar() -> EmitterFeatures {
        EmitterFeatures {
            sat_intensity_kcps: Some(68.0),
            sat_power_uw: Some(12.0),
            ..features(ElineStatus::Absent, 33.4, 0.90, Some(37.0))
        }
    }

    fn reference_measured() -> QeMeasured {
        QeMeasured {
            isat_g_kcps: 7.9,
            isat_gstar_kcps: 68.0,
            tau_g_ns: 4.9,
            tau_gstar_ns: 33.4,
        }
    }

    #[test]
    fn verdict_examples() {
        let t = CriterionThresholds::default();
        assert!(evaluate_criteria(&genuine_g(), &t).values().all(|&v| v == Verdict::ProG));
        assert!(evaluate_criteria(&genuine_gstar(), &t).values().all(|&v| v == Verdict::ProGstar));
        let mixed = evaluate_criteria(&features(ElineStatus::Unmeasured, 17.0, 0.78, Some(5.0)), &t);
        assert_eq!(tally(mixed.values()), (1, 0));
        assert_eq!(mixed[&Criterion::Axis], Verdict::ProG);
        assert_eq!(mixed.values().filter(|&&v| v == Verdict::Neutral).count(), 3);
    }

    #[test]
    fn labels() {
        let t = CriterionThresholds::default();
        let g = classify_emitter(&genuine_g(), &t);
        assert_eq!(g.label, Label::G);
        let q = g.derived_qe.unwrap();
        assert!((q.value - 0.00852).abs() < 5e-5);
        assert!(g.rationale.contains("derived eta_QE"));
        assert_eq!(classify_emitter(&genuine_gstar(), &t).label, Label::Gstar);

        for f in [genuine_g(), genuine_gstar()] {
            let bad = EmitterFeatures {
                g2_zero: Measured::new(0.8, 0.02),
                ..f
            };
            let r = classify_emitter(&bad, &t);
            assert_eq!(r.label, Label::NotSingle);
            assert!(!r.antibunched);
        }
        let mixed = features(ElineStatus::Present, 17.0, 0.9, Some(37.0));
        assert_eq!(classify_emitter(&mixed, &t).label, Label::Inconclusive);
        // Three votes with one unmeasured criterion is enough.
        let one_missing = features(ElineStatus::Unmeasured, 4.9, 0.62, Some(2.0));
        assert_eq!(classify_emitter(&one_missing, &t).label, Label::G);
    }

    #[test]
    fn gate_uses_guard() {
        let t = CriterionThresholds::default();
        let f = EmitterFeatures {
            g2_zero: Measured::new(0.45, 0.06),
            ..genuine_g()
        };
        assert_eq!(classify_emitter(&f, &t).label, Label::NotSingle);
        let lenient = CriterionThresholds {
            g2_guard_sigmas: 0.0,
            ..t
        };
        assert_eq!(classify_emitter(&f, &lenient).label, Label::G);
    }

    #[test]
    fn axis_offset() {
        assert_eq!(axis_offset_deg(0.0), 0.0);
        assert!((axis_offset_deg(88.0) - 2.0).abs() < 1e-12);
        assert!((axis_offset_deg(-5.0) - 5.0).abs() < 1e-12);
        assert_eq!(axis_offset_deg(45.0), 45.0);
        assert!((axis_offset_deg(185.0) - 5.0).abs() < 1e-12);
        let t = CriterionThresholds::default();
        let f = features(ElineStatus::Present, 4.9, 0.62, None);
        assert_eq!(evaluate_criterion(Criterion::Axis, &f, &t), Verdict::Neutral);
    }

    #[test]
    fn thresholds_validate() {
        assert!(CriterionThresholds::default().validate().is_ok());
        let bad = CriterionThresholds {
            lifetime_g_max_ns: 30.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn feature_invariants() {
        assert!(genuine_g().validate().is_ok());
        let f = EmitterFeatures {
            lifetime_ns: Measured::exact(0.0),
            ..genuine_g()
        };
        assert!(matches!(f.validate(), Err(Error::Domain(_))));
        let f = EmitterFeatures {
            polar_visibility: Measured::exact(1.2),
            ..genuine_g()
        };
        assert!(matches!(f.validate(), Err(Error::Domain(_))));
        let unmeasured = EmitterFeatures {
            lifetime_ns: Measured::new(f64::NAN, f64::NAN),
            ..genuine_g()
        };
        assert!(unmeasured.validate().is_ok());
        assert_eq!(evaluate_criterion(Criterion::Lifetime, &unmeasured, &CriterionThresholds::default()), Verdict::Neutral);
    }

    #[test]
    fn qe_examples() {
        let reference = QeInputs {
            eta_gstar: 1.0,
            isat_g_kcps: 7.9,
            isat_gstar_kcps: 68.0,
            tau_g_ns: 4.9,
            tau_gstar_ns: 33.4,
            coll_g: 0.04,
            coll_gstar: 0.02,
        };
        let expected = 7.9 / 68.0 * (4.9 / 33.4) * (0.02 / 0.04);
        let r = qe_ratio(&reference).unwrap();
        assert!((r.value - expected).abs() < 1e-15);
        assert!((r.value - 0.00852).abs() < 5e-6);
        assert!(!r.exceeds_unity);

        let inverted = qe_ratio_inverted_collection(&reference).unwrap();
        assert!((inverted.value - 7.9 / 68.0 * (4.9 / 33.4) * 2.0).abs() < 1e-15);
        assert!(inverted.value > 0.03);

        let same = QeInputs {
            isat_gstar_kcps: 7.9,
            tau_gstar_ns: 4.9,
            coll_gstar: 0.04,
            ..reference
        };
        assert_eq!(qe_ratio(&same).unwrap().value, 1.0);

        let doubled = QeInputs {
            isat_g_kcps: 15.8,
            ..reference
        };
        assert_eq!(qe_ratio(&doubled).unwrap().value, 2.0 * r.value);

        let big = QeInputs {
            isat_g_kcps: 7900.0,
            ..reference
        };
        let b = qe_ratio(&big).unwrap();
        assert!(b.exceeds_unity && b.value > 1.0);

        for bad in [
            QeInputs { coll_g: 0.0, ..reference },
            QeInputs { tau_g_ns: -1.0, ..reference },
            QeInputs { eta_gstar: 1.5, ..reference },
        ] {
            assert!(matches!(qe_ratio(&bad), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn qe_bounds() {
        let model = CollectionEfficiencyModel::reference_model();
        let b = qe_upper_bound(&reference_measured(), &model, 60, 220).unwrap();
        let expected = 7.9 / 68.0 * (4.9 / 33.4) * (0.02 / 0.025);
        assert!((b.eta_g.value - expected).abs() < 1e-15);
        assert!((b.eta_g.value - 0.0136).abs() < 5e-5);
        assert_eq!((b.inputs.coll_g, b.inputs.coll_gstar), (0.025, 0.02));
        assert_eq!((b.coll_g_endpoint, b.coll_gstar_endpoint), (Endpoint::Min, Endpoint::Max));

        let m = qe_at_max_collection(&reference_measured(), &model, 60, 220).unwrap();
        assert!((m.eta_g.value - 0.00852).abs() < 5e-6);
        assert!(m.eta_g.value <= 0.01);

        assert!(matches!(qe_upper_bound(&reference_measured(), &model, 100, 220), Err(Error::ModelCoverage(100))));

        let equal = CollectionEfficiencyModel::new(BTreeMap::from([(60, (0.02, 0.02))])).unwrap();
        let e = qe_upper_bound(&reference_measured(), &equal, 60, 60).unwrap();
        assert!((e.eta_g.value - 7.9 / 68.0 * (4.9 / 33.4)).abs() < 1e-15);
    }

    #[test]
    fn collection_model_invariants() {
        for (lo, hi) in [(0.0, 0.1), (0.2, 0.1), (0.1, 1.0)] {
            let r = CollectionEfficiencyModel::new(BTreeMap::from([(60, (lo, hi))]));
            assert!(matches!(r, Err(Error::Domain(_))));
        }
    }

    fn arb_verdict() -> impl Strategy<Value = Verdict> {
        prop_oneof![Just(Verdict::ProG), Just(Verdict::ProGstar), Just(Verdict::Neutral)]
    }

    fn arb_features() -> impl Strategy<Value = EmitterFeatures> {
        (
            0.0f64..1.0,
            0.0f64..0.1,
            prop_oneof![Just(ElineStatus::Present), Just(ElineStatus::Absent), Just(ElineStatus::Unmeasured)],
            0.5f64..60.0,
            0.0f64..=1.0,
            proptest::option::of(-360.0f64..360.0),
        )
            .prop_map(|(g, gs, eline, tau, v, phi)| EmitterFeatures {
                g2_zero: Measured::new(g, gs),
                eline,
                lifetime_ns: Measured::new(tau, 0.1),
                polar_visibility: Measured::new(v, 0.02),
                polar_axis_deg: phi,
                sat_intensity_kcps: Some(10.0),
                sat_power_uw: Some(2.0),
            })
    }

    proptest! {
        #[test]
        fn tally_is_order_invariant(mut vs in proptest::collection::vec(arb_verdict(), 4), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let before = tally(vs.iter());
            vs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(before, tally(vs.iter()));
        }

        #[test]
        fn classification_deterministic_and_order_free(f in arb_features()) {
            let t = CriterionThresholds::default();
            let a = classify_emitter(&f, &t);
            prop_assert_eq!(&a, &classify_emitter(&f, &t));
            let reversed: Vec<Verdict> = Criterion::ALL.iter().rev().map(|&c| evaluate_criterion(c, &f, &t)).collect();
            prop_assert_eq!(a.votes, tally(reversed.iter()));
            if a.label == Label::G || a.label == Label::Gstar {
                let (win, lose) = if a.label == Label::G { a.votes } else { (a.votes.1, a.votes.0) };
                prop_assert!(win >= 3 && lose <= 1);
            }
            prop_assert_eq!(a.label == Label::NotSingle, !t.passes_antibunching(f.g2_zero));
        }

        #[test]
        fn relaxing_bands_never_flips(
            f in arb_features(),
            dl in 0.0f64..10.0,
            dh in 0.0f64..10.0,
            dv in 0.0f64..0.2,
            dw in 0.0f64..0.2,
        ) {
            let t = CriterionThresholds::default();
            let wide = CriterionThresholds {
                lifetime_g_max_ns: t.lifetime_g_max_ns - dl.min(9.0),
                lifetime_gstar_min_ns: t.lifetime_gstar_min_ns + dh,
                visibility_g_max: t.visibility_g_max - dv,
                visibility_gstar_min: (t.visibility_gstar_min + dw).min(1.0),
                ..t
            };
            let a = evaluate_criteria(&f, &t);
            let b = evaluate_criteria(&f, &wide);
            for c in Criterion::ALL {
                let flipped = matches!((a[&c], b[&c]), (Verdict::ProG, Verdict::ProGstar) | (Verdict::ProGstar, Verdict::ProG));
                prop_assert!(!flipped);
            }
        }

        #[test]
        fn axis_half_turn_invariant(phi in -720.0f64..720.0) {
            let t = CriterionThresholds::default();
            let f = features(ElineStatus::Present, 4.9, 0.62, Some(phi));
            let g = EmitterFeatures { polar_axis_deg: Some(phi + 180.0), ..f.clone() };
            prop_assert_eq!(evaluate_criterion(Criterion::Axis, &f, &t), evaluate_criterion(Criterion::Axis, &g, &t));
        }

        #[test]
        fn qe_multiplicative(k in -8i32..8, which in 0usize..4, a in 0.1f64..10.0) {
            let base = QeInputs { eta_gstar: 0.5, isat_g_kcps: 7.9, isat_gstar_kcps: 68.0, tau_g_ns: 4.9, tau_gstar_ns: 33.4, coll_g: 0.04, coll_gstar: 0.02 };
            let r0 = qe_ratio(&base).unwrap().value;
            // Exact for powers of two, to rounding otherwise.
            for (s, exact) in [(2f64.powi(k), true), (a, false)] {
                let mut x = base;
                match which {
                    0 => x.isat_g_kcps *= s,
                    1 => x.tau_g_ns *= s,
                    2 => x.coll_gstar *= s,
                    _ => { x.eta_gstar = base.eta_gstar * s.min(2.0); }
                }
                let scale = if which == 3 { s.min(2.0) } else { s };
                let r = qe_ratio(&x).unwrap().value;
                if exact {
                    prop_assert_eq!(r, scale * r0);
                } else {
                    prop_assert!((r - scale * r0).abs() <= 4.0 * f64::EPSILON * r.abs());
                }
            }
        }
    }
}
