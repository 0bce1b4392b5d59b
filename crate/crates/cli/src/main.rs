//! `centerprint`: simulate, analyse and classify single G and G* centers.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use centerprint::classify::{
    qe_at_max_collection, qe_ratio, qe_ratio_inverted_collection, qe_upper_bound, CollectionEfficiencyModel,
    CriterionThresholds, ElineStatus, QeInputs, QeMeasured,
};
use centerprint::correlator::{correlate_threaded, g2_at_zero, CorrelationHistogram};
use centerprint::fitkit::{
    bootstrap_sigmas, fit_exponential_decay, fit_polarization, fit_saturation, solve_least_squares,
    ExponentialDecay, FitModel, FitResult, Observation, PolarizationLaw, SaturationLaw, SolverConfig,
};
use centerprint::io::{
    read_bundle, read_decay, read_polarization, read_saturation, read_spectrum, read_time_tags, write_bundle,
    write_text, MeasurementBundle, BUNDLE_MANIFEST,
};
use centerprint::photonsim::{EmitterKind, EmitterModel, EmitterPopulation};
use centerprint::pipeline::{classify_bundle, simulate_bundle, AcquisitionPlan, AnalysisOptions};
use centerprint::spectral::{analyze_spectrum, population_stats, SpectralFeatures};
use centerprint::units::{DecayHistogram, PolarizationScan, SaturationSeries, SpectrumTrace, TimeTagStream};
use centerprint::{Error, Result};

use output::{svg_plot, KeyValues, Table};

#[derive(Parser)]
#[command(name = "centerprint", version, about = "Photophysics toolkit for single G and G* centers in silicon")]
struct Cli {
    /// Seed for every random draw (simulation, bootstrap).
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output path: bundle directory for `simulate` and `report`, data file otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for correlation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a measurement bundle (or several) on disk.
    Simulate(SimulateArgs),
    /// Second-order correlation of a time-tag stream.
    G2 {
        /// Bundle directory or TTG1 file.
        input: PathBuf,
        #[command(flatten)]
        corr: CorrelationArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Mono-exponential lifetime fit of a decay histogram.
    FitLifetime(FitArgs),
    /// Saturation-law fit.
    FitSaturation {
        #[command(flatten)]
        fit: FitArgs,
        /// Fit a constant background term as well.
        #[arg(long)]
        with_background: bool,
    },
    /// Polarization-diagram fit.
    FitPolar(FitArgs),
    /// Spectral features: ZPL, E-line, phonon sideband.
    Spectrum {
        input: PathBuf,
        #[command(flatten)]
        search: ZplSearchArgs,
    },
    /// Classify a bundle as G, Gstar, inconclusive or not_single.
    Classify {
        bundle: PathBuf,
        #[command(flatten)]
        corr: CorrelationArgs,
        #[command(flatten)]
        search: ZplSearchArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Quantum efficiency of G relative to G* from saturation intensities and lifetimes.
    QeBound(QeArgs),
    /// Population ZPL statistics over bundles.
    Stats {
        /// Bundle directories, or directories containing bundles.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        search: ZplSearchArgs,
    },
    /// Per-emitter summary plus plot data (CSV) and optional SVG overlays.
    Report {
        bundle: PathBuf,
        /// Also render SVG plots.
        #[arg(long)]
        svg: bool,
        #[command(flatten)]
        corr: CorrelationArgs,
        #[command(flatten)]
        search: ZplSearchArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    G,
    Gstar,
    /// Uncorrelated background photons only.
    Background,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Measurement {
    Stream,
    Decay,
    Polarization,
    Saturation,
    Spectrum,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Draw parameters from the family's population instead of the preset.
    #[arg(long)]
    population: bool,
    /// Number of bundles; more than one writes numbered subdirectories.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    id: Option<String>,
    /// Acquisition plan (TOML); flags below override it.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Measurements to leave out.
    #[arg(long, value_enum, value_delimiter = ',')]
    skip: Vec<Measurement>,
    #[arg(long)]
    stream_duration_s: Option<f64>,
    #[arg(long)]
    pulse_count: Option<u64>,
    /// CW excitation power in units of the saturation power.
    #[arg(long)]
    relative_power: Option<f64>,
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    lifetime_ns: Option<f64>,
    #[arg(long)]
    isat_kcps: Option<f64>,
    #[arg(long)]
    psat_uw: Option<f64>,
    #[arg(long)]
    visibility: Option<f64>,
    #[arg(long)]
    axis_deg: Option<f64>,
    #[arg(long)]
    zpl_nm: Option<f64>,
    #[arg(long)]
    eline_relative: Option<f64>,
    #[arg(long)]
    background_cps: Option<f64>,
}

#[derive(Args)]
struct CorrelationArgs {
    #[arg(long, default_value_t = 1.0)]
    bin_width_ns: f64,
    #[arg(long, default_value_t = 100.0)]
    window_ns: f64,
    /// Bins averaged for g2(0); defaults to 3 for `g2` and 1 for classification.
    #[arg(long)]
    averaging_bins: Option<usize>,
}

#[derive(Args)]
struct ZplSearchArgs {
    #[arg(long, default_value_t = 1240.0)]
    zpl_min_nm: f64,
    #[arg(long, default_value_t = 1320.0)]
    zpl_max_nm: f64,
}

#[derive(Args)]
struct ThresholdArgs {
    /// Criterion thresholds (TOML); flags below override it.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long)]
    g2_threshold: Option<f64>,
    #[arg(long)]
    g2_guard_sigmas: Option<f64>,
    #[arg(long)]
    lifetime_g_max_ns: Option<f64>,
    #[arg(long)]
    lifetime_gstar_min_ns: Option<f64>,
    #[arg(long)]
    visibility_g_max: Option<f64>,
    #[arg(long)]
    visibility_gstar_min: Option<f64>,
    #[arg(long)]
    axis_tolerance_deg: Option<f64>,
    #[arg(long)]
    min_votes: Option<usize>,
    #[arg(long)]
    max_opposing_votes: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// Bundle directory or typed CSV file.
    input: PathBuf,
    /// Pairs-bootstrap resamples for the uncertainties (0 uses the covariance).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
}

#[derive(Args)]
struct QeArgs {
    #[arg(long, default_value_t = 7.9)]
    isat_g_kcps: f64,
    #[arg(long, default_value_t = 68.0)]
    isat_gstar_kcps: f64,
    #[arg(long, default_value_t = 4.9)]
    tau_g_ns: f64,
    #[arg(long, default_value_t = 33.4)]
    tau_gstar_ns: f64,
    /// Cap-layer thickness of the G sample.
    #[arg(long, default_value_t = 60)]
    thickness_g_nm: u32,
    #[arg(long, default_value_t = 220)]
    thickness_gstar_nm: u32,
    /// Use this G collection efficiency instead of the thickness model.
    #[arg(long, requires = "coll_gstar")]
    coll_g: Option<f64>,
    #[arg(long, requires = "coll_g")]
    coll_gstar: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    eta_gstar: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::G2 { input, corr, thresholds } => g2(cli, input, corr, thresholds),
        Command::FitLifetime(a) => fit_lifetime(cli, a),
        Command::FitSaturation { fit, with_background } => fit_saturation_cmd(cli, fit, *with_background),
        Command::FitPolar(a) => fit_polar(cli, a),
        Command::Spectrum { input, search } => spectrum(cli, input, search),
        Command::Classify {
            bundle,
            corr,
            search,
            thresholds,
        } => classify(cli, bundle, corr, search, thresholds),
        Command::QeBound(a) => qe_bound(cli, a),
        Command::Stats { inputs, search } => stats(cli, inputs, search),
        Command::Report {
            bundle,
            svg,
            corr,
            search,
            thresholds,
        } => report(cli, bundle, *svg, corr, search, thresholds),
    }
}

/// Write the report to `--out` when given; return it for stdout either way.
fn finish(cli: &Cli, kv: KeyValues) -> Result<String> {
    let text = kv.render();
    if let Some(out) = &cli.out {
        write_text(out, &text)?;
    }
    Ok(text)
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn is_bundle(path: &Path) -> bool {
    path.join(BUNDLE_MANIFEST).is_file()
}

/// A measurement from either a bundle directory or a standalone file.
fn load<T>(
    path: &Path,
    what: &str,
    from_bundle: impl FnOnce(MeasurementBundle) -> Option<T>,
    from_file: impl FnOnce(&Path) -> Result<T>,
) -> Result<T> {
    if path.is_dir() {
        from_bundle(read_bundle(path)?)
            .ok_or_else(|| Error::InsufficientData(format!("bundle {} has no {what}", path.display())))
    } else {
        from_file(path)
    }
}

fn load_stream(path: &Path) -> Result<TimeTagStream> {
    load(path, "time-tag stream", |b| b.stream, read_time_tags)
}

fn load_decay(path: &Path) -> Result<DecayHistogram> {
    load(path, "decay histogram", |b| b.decay, read_decay)
}

fn load_saturation(path: &Path) -> Result<SaturationSeries> {
    load(path, "saturation series", |b| b.saturation, read_saturation)
}

fn load_polarization(path: &Path) -> Result<PolarizationScan> {
    load(path, "polarization scan", |b| b.polarization, read_polarization)
}

fn load_spectrum(path: &Path) -> Result<SpectrumTrace> {
    load(path, "spectrum", |b| b.spectrum, read_spectrum)
}

impl ThresholdArgs {
    fn resolve(&self) -> Result<CriterionThresholds> {
        let mut t: CriterionThresholds = match &self.thresholds {
            Some(p) => read_toml(p)?,
            None => CriterionThresholds::default(),
        };
        macro_rules! apply {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { t.$f = v; })* };
        }
        apply!(
            g2_threshold,
            g2_guard_sigmas,
            lifetime_g_max_ns,
            lifetime_gstar_min_ns,
            visibility_g_max,
            visibility_gstar_min,
            axis_tolerance_deg,
            min_votes,
            max_opposing_votes
        );
        t.validate()?;
        Ok(t)
    }
}

fn analysis_options(cli: &Cli, corr: &CorrelationArgs, search: &ZplSearchArgs) -> AnalysisOptions {
    AnalysisOptions {
        bin_width_ns: corr.bin_width_ns,
        window_ns: corr.window_ns,
        averaging_bins: corr.averaging_bins.unwrap_or(1),
        threads: cli.threads.max(1),
        zpl_search_nm: (search.zpl_min_nm, search.zpl_max_nm),
        ..AnalysisOptions::default()
    }
}

fn build_model(a: &SimulateArgs, rng: &mut ChaCha8Rng) -> EmitterModel {
    let mut m = match a.kind {
        KindArg::G if a.population => EmitterPopulation::G.sample(rng),
        KindArg::Gstar if a.population => EmitterPopulation::Gstar.sample(rng),
        KindArg::G => EmitterModel::g_center(),
        KindArg::Gstar => EmitterModel::gstar_center(),
        KindArg::Background => EmitterModel {
            kind: EmitterKind::Custom,
            sat_intensity_kcps: 0.0,
            eline_relative_intensity: 0.0,
            background_rate_cps: 200_000.0,
            ..EmitterModel::gstar_center()
        },
    };
    macro_rules! apply {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = a.$flag { m.$field = v; })* };
    }
    apply!(
        lifetime_ns => lifetime_ns,
        isat_kcps => sat_intensity_kcps,
        psat_uw => sat_power_uw,
        visibility => polar_visibility,
        axis_deg => polar_axis_deg,
        zpl_nm => zpl_wavelength_nm,
        eline_relative => eline_relative_intensity,
        background_cps => background_rate_cps
    );
    m
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<String> {
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("simulate needs --out DIR".into()))?;
    if a.count == 0 {
        return Err(Error::Config("--count must be at least 1".into()));
    }
    let mut plan: AcquisitionPlan = match &a.plan {
        Some(p) => read_toml(p)?,
        None => AcquisitionPlan::default(),
    };
    if a.kind == KindArg::Background {
        // A background-only source has no decay, dipole or spectrum to measure.
        plan.include_decay = false;
        plan.include_polarization = false;
        plan.include_saturation = false;
        plan.include_spectrum = false;
        plan.stream_duration_s.get_or_insert(20.0);
    }
    for s in &a.skip {
        match s {
            Measurement::Stream => plan.include_stream = false,
            Measurement::Decay => plan.include_decay = false,
            Measurement::Polarization => plan.include_polarization = false,
            Measurement::Saturation => plan.include_saturation = false,
            Measurement::Spectrum => plan.include_spectrum = false,
        }
    }
    if a.stream_duration_s.is_some() {
        plan.stream_duration_s = a.stream_duration_s;
    }
    if let Some(n) = a.pulse_count {
        plan.pulse_count = n;
    }
    if let Some(p) = a.relative_power {
        plan.relative_power = p;
    }
    plan.sim.noiseless |= a.noiseless;

    let kind_name = match a.kind {
        KindArg::G => "g",
        KindArg::Gstar => "gstar",
        KindArg::Background => "background",
    };
    let base_id = a.id.clone().unwrap_or_else(|| format!("{kind_name}-{}", cli.seed));
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut kv = KeyValues::default();
    kv.push("kind", kind_name);
    kv.push("seed", cli.seed);
    kv.push("count", a.count);
    for i in 0..a.count {
        let (id, dir, prefix) = if a.count == 1 {
            (base_id.clone(), out.clone(), String::new())
        } else {
            let id = format!("{base_id}-{i:03}");
            (id.clone(), out.join(&id), format!("bundle.{i}."))
        };
        let m = build_model(a, &mut rng);
        let seed = cli.seed.wrapping_add(i as u64);
        let b = simulate_bundle(&id, &m, &plan, seed)?;
        write_bundle(&dir, &b)?;
        kv.push(format!("{prefix}emitter_id"), &id);
        kv.push(format!("{prefix}path"), dir.display());
        if let (1, Some(s)) = (a.count, &b.stream) {
            kv.push("stream_tags", s.len());
            kv.push("stream_duration_s", s.duration_s());
        }
        if a.count == 1 && a.kind == KindArg::Background {
            kv.push("background_rate_cps", m.background_rate_cps);
        } else if a.count == 1 {
            kv.push("lifetime_ns", m.lifetime_ns);
            kv.push("sat_intensity_kcps", m.sat_intensity_kcps);
            kv.push("sat_power_uw", m.sat_power_uw);
            kv.push("polar_visibility", m.polar_visibility);
            kv.push("polar_axis_deg", m.polar_axis_deg);
            kv.push("zpl_wavelength_nm", m.zpl_wavelength_nm);
            kv.push("background_rate_cps", m.background_rate_cps);
            if let Some(d) = &b.decay {
                kv.push("decay_photons", d.total());
            }
        } else {
            kv.push(format!("{prefix}zpl_wavelength_nm"), m.zpl_wavelength_nm);
        }
    }
    Ok(kv.render())
}

fn push_g2(kv: &mut KeyValues, h: &CorrelationHistogram, averaging: usize) -> Result<centerprint::correlator::Measured> {
    let g = g2_at_zero(h, averaging)?;
    let (r0, r1) = h.rates_cps();
    kv.push("duration_s", h.duration_s());
    kv.push("rate_ch0_cps", r0);
    kv.push("rate_ch1_cps", r1);
    kv.push("bin_width_ns", h.bin_width_ns());
    kv.push("n_bins", h.n_bins());
    kv.push("averaging_bins", averaging);
    kv.push("expected_per_bin", h.expected_per_bin());
    kv.push("g2_zero", g.value);
    kv.push("g2_zero_sigma", g.sigma);
    Ok(g)
}

fn g2_table(h: &CorrelationHistogram) -> Table {
    Table {
        header: vec!["tau_ns", "coincidences", "g2"],
        columns: vec![
            h.bin_centers_ns(),
            h.coincidences().iter().map(|&c| c as f64).collect(),
            h.normalized_g2().to_vec(),
        ],
    }
}

fn g2(cli: &Cli, input: &Path, corr: &CorrelationArgs, thresholds: &ThresholdArgs) -> Result<String> {
    let t = thresholds.resolve()?;
    let s = load_stream(input)?;
    let h = correlate_threaded(&s, corr.window_ns, corr.bin_width_ns, cli.threads.max(1))?;
    let mut kv = KeyValues::default();
    kv.push("tags", s.len());
    let g = push_g2(&mut kv, &h, corr.averaging_bins.unwrap_or(3))?;
    let single = t.passes_antibunching(g);
    kv.push("single_emitter", single);
    kv.push("verdict", if single { "antibunched" } else { "not_single" });
    if let Some(out) = &cli.out {
        g2_table(&h).write(out)?;
        kv.push("histogram", out.display());
    }
    Ok(kv.render())
}

fn push_fit(kv: &mut KeyValues, fit: &FitResult, bootstrap: Option<&[f64]>) {
    for (i, p) in fit.parameters.iter().enumerate() {
        kv.push(p.name.clone(), p.value);
        kv.push(format!("{}_sigma", p.name), bootstrap.map_or(p.sigma, |b| b[i]));
    }
    kv.push("sigma_method", if bootstrap.is_some() { "bootstrap" } else { "covariance" });
    kv.push("reduced_chi_square", fit.reduced_chi_square);
    kv.push("converged", fit.converged);
    kv.push("iterations", fit.iterations);
    let warnings: Vec<String> = fit.warnings.iter().map(|w| format!("{w:?}")).collect();
    kv.push("warnings", if warnings.is_empty() { "none".into() } else { warnings.join(";") });
}

/// Pairs-bootstrap sigmas, refitting `model` from the full-data solution.
fn bootstrap(model: &dyn FitModel, obs: &[Observation], fit: &FitResult, n: usize, seed: u64) -> Result<Option<Vec<f64>>> {
    if n == 0 {
        return Ok(None);
    }
    let start = fit.values();
    bootstrap_sigmas(obs, n, seed, |s| {
        solve_least_squares(model, s, &start, &SolverConfig::default()).map(|f| f.values())
    })
    .map(Some)
}

fn decay_observations(h: &DecayHistogram, fit: &FitResult) -> Vec<Observation> {
    let p = fit.values();
    let peak = h
        .counts()
        .iter()
        .enumerate()
        .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
        .map_or(0, |(i, _)| i);
    h.bin_centers_ns()[peak..]
        .iter()
        .zip(&h.counts()[peak..])
        .map(|(&t, &c)| Observation::new(t, c as f64, 1.0 / ExponentialDecay.value(t, &p).max(0.05)))
        .collect()
}

fn fit_lifetime(cli: &Cli, a: &FitArgs) -> Result<String> {
    let h = load_decay(&a.input)?;
    let fit = fit_exponential_decay(&h)?;
    let boot = bootstrap(&ExponentialDecay, &decay_observations(&h, &fit), &fit, a.bootstrap, cli.seed)?;
    let mut kv = KeyValues::default();
    kv.push("photons", h.total());
    kv.push("pulse_period_ns", h.pulse_period_ns());
    push_fit(&mut kv, &fit, boot.as_deref());
    finish(cli, kv)
}

fn rate_observations(points: impl Iterator<Item = (f64, f64)>) -> Vec<Observation> {
    let pts: Vec<(f64, f64)> = points.collect();
    let floor = 1e-3 * pts.iter().map(|p| p.1).fold(0.0, f64::max);
    pts.into_iter().map(|(x, y)| Observation::proportional(x, y, floor)).collect()
}

fn fit_saturation_cmd(cli: &Cli, a: &FitArgs, with_background: bool) -> Result<String> {
    let s = load_saturation(&a.input)?;
    let fit = fit_saturation(&s, with_background)?;
    let obs = rate_observations(s.points().iter().map(|p| (p.power_uw, p.intensity_kcps)));
    let boot = bootstrap(&SaturationLaw { with_background }, &obs, &fit, a.bootstrap, cli.seed)?;
    let mut kv = KeyValues::default();
    kv.push("points", s.points().len());
    push_fit(&mut kv, &fit, boot.as_deref());
    finish(cli, kv)
}

fn fit_polar(cli: &Cli, a: &FitArgs) -> Result<String> {
    let scan = load_polarization(&a.input)?;
    let fit = fit_polarization(&scan)?;
    let obs = rate_observations(scan.points().iter().map(|p| (p.angle_deg, p.intensity)));
    let boot = bootstrap(&PolarizationLaw, &obs, &fit, a.bootstrap, cli.seed)?;
    let mut kv = KeyValues::default();
    kv.push("angles", scan.points().len());
    push_fit(&mut kv, &fit, boot.as_deref());
    finish(cli, kv)
}

fn push_spectral(kv: &mut KeyValues, f: &SpectralFeatures) {
    kv.push("zpl_wavelength_nm", f.zpl_wavelength_nm);
    kv.push("zpl_energy_mev", f.zpl_energy_mev);
    kv.push("zpl_fwhm_nm", f.zpl_fwhm_nm);
    kv.push("eline_measured", f.eline_measured);
    kv.push("eline_present", f.eline_present);
    kv.push_opt("eline_wavelength_nm", f.eline_wavelength_nm);
    kv.push_opt("eline_energy_mev", f.eline_energy_mev());
    kv.push("eline_snr", f.eline_snr);
    kv.push_opt("sideband_energy_mev", f.sideband_energy_mev);
}

fn spectrum(cli: &Cli, input: &Path, search: &ZplSearchArgs) -> Result<String> {
    let trace = load_spectrum(input)?;
    let f = analyze_spectrum(&trace, (search.zpl_min_nm, search.zpl_max_nm))?;
    let mut kv = KeyValues::default();
    push_spectral(&mut kv, &f);
    finish(cli, kv)
}

fn eline_name(e: ElineStatus) -> &'static str {
    match e {
        ElineStatus::Present => "present",
        ElineStatus::Absent => "absent",
        ElineStatus::Unmeasured => "unmeasured",
    }
}

fn classification(
    cli: &Cli,
    bundle: &Path,
    corr: &CorrelationArgs,
    search: &ZplSearchArgs,
    thresholds: &ThresholdArgs,
) -> Result<(MeasurementBundle, KeyValues, centerprint::pipeline::FeatureExtraction)> {
    let t = thresholds.resolve()?;
    let b = read_bundle(bundle)?;
    let (x, r) = classify_bundle(&b, &analysis_options(cli, corr, search), &t)?;
    let f = &x.features;
    let mut kv = KeyValues::default();
    kv.push("emitter_id", &b.emitter_id);
    kv.push("label", r.label);
    kv.push("votes_g", r.votes.0);
    kv.push("votes_gstar", r.votes.1);
    kv.push("antibunched", r.antibunched);
    for (c, v) in &r.criterion_verdicts {
        kv.push(format!("criterion.{c}"), v);
    }
    kv.push("g2_zero", f.g2_zero.value);
    kv.push("g2_zero_sigma", f.g2_zero.sigma);
    kv.push("eline", eline_name(f.eline));
    kv.push("lifetime_ns", f.lifetime_ns.value);
    kv.push("lifetime_sigma_ns", f.lifetime_ns.sigma);
    kv.push("polar_visibility", f.polar_visibility.value);
    kv.push("polar_visibility_sigma", f.polar_visibility.sigma);
    kv.push_opt("polar_axis_deg", f.polar_axis_deg);
    kv.push_opt("sat_intensity_kcps", f.sat_intensity_kcps);
    kv.push_opt("sat_power_uw", f.sat_power_uw);
    kv.push_opt("derived_qe", r.derived_qe.map(|q| q.value));
    if let Some(src) = &b.source {
        kv.push("true_kind", src.kind);
    }
    kv.push("rationale", &r.rationale);
    Ok((b, kv, x))
}

fn classify(
    cli: &Cli,
    bundle: &Path,
    corr: &CorrelationArgs,
    search: &ZplSearchArgs,
    thresholds: &ThresholdArgs,
) -> Result<String> {
    let (_, kv, _) = classification(cli, bundle, corr, search, thresholds)?;
    finish(cli, kv)
}

fn qe_bound(cli: &Cli, a: &QeArgs) -> Result<String> {
    let mut kv = KeyValues::default();
    let m = QeMeasured {
        isat_g_kcps: a.isat_g_kcps,
        isat_gstar_kcps: a.isat_gstar_kcps,
        tau_g_ns: a.tau_g_ns,
        tau_gstar_ns: a.tau_gstar_ns,
    };
    let estimate = match (a.coll_g, a.coll_gstar) {
        (Some(coll_g), Some(coll_gstar)) => {
            let inputs = QeInputs {
                eta_gstar: a.eta_gstar,
                isat_g_kcps: a.isat_g_kcps,
                isat_gstar_kcps: a.isat_gstar_kcps,
                tau_g_ns: a.tau_g_ns,
                tau_gstar_ns: a.tau_gstar_ns,
                coll_g,
                coll_gstar,
            };
            kv.push("coll_g", coll_g);
            kv.push("coll_gstar", coll_gstar);
            kv.push("eta_g_inverted_collection", qe_ratio_inverted_collection(&inputs)?.value);
            qe_ratio(&inputs)?
        }
        _ => {
            let model = CollectionEfficiencyModel::reference_model();
            let best = qe_at_max_collection(&m, &model, a.thickness_g_nm, a.thickness_gstar_nm)?;
            let worst = qe_upper_bound(&m, &model, a.thickness_g_nm, a.thickness_gstar_nm)?;
            kv.push("coll_g", best.inputs.coll_g);
            kv.push("coll_gstar", best.inputs.coll_gstar);
            kv.push(
                "eta_g_inverted_collection",
                qe_ratio_inverted_collection(&best.inputs)?.value * a.eta_gstar,
            );
            kv.push("eta_g_worst_case", worst.eta_g.value * a.eta_gstar);
            kv.push("worst_case_coll_g", worst.inputs.coll_g);
            kv.push("worst_case_coll_gstar", worst.inputs.coll_gstar);
            // Collection endpoints were computed with eta_G* = 1.
            let mut r = best.eta_g;
            r.value *= a.eta_gstar;
            r.exceeds_unity = r.value > 1.0;
            r
        }
    };
    kv.push("eta_gstar", a.eta_gstar);
    kv.push("eta_g_exact", estimate.value);
    kv.push("eta_g", format!("{:.4}", estimate.value));
    // Normalized to eta_G* = 1, the largest value it can take.
    let bound = estimate.value / a.eta_gstar;
    let conclusion = if bound <= 0.01 {
        "not greater than 1%".to_string()
    } else {
        format!("not greater than {:.1}%", 100.0 * bound)
    };
    kv.push(
        "bound",
        format!("eta_G <= {bound:.4} since eta_Gstar <= 1; the G quantum efficiency is {conclusion}"),
    );
    kv.push("exceeds_unity", estimate.exceeds_unity);
    finish(cli, kv)
}

/// Bundle directories under `inputs`, descending one level into non-bundles.
fn collect_bundles(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if is_bundle(p) {
            out.push(p.clone());
            continue;
        }
        let entries = std::fs::read_dir(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| is_bundle(d))
            .collect();
        if found.is_empty() {
            return Err(Error::Format(format!("{} is not a bundle and contains none", p.display())));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

fn stats(cli: &Cli, inputs: &[PathBuf], search: &ZplSearchArgs) -> Result<String> {
    let mut kv = KeyValues::default();
    let mut zpls = Vec::new();
    for dir in collect_bundles(inputs)? {
        let b = read_bundle(&dir)?;
        let trace = b
            .spectrum
            .ok_or_else(|| Error::InsufficientData(format!("bundle {} has no spectrum", b.emitter_id)))?;
        let f = analyze_spectrum(&trace, (search.zpl_min_nm, search.zpl_max_nm))?;
        kv.push(format!("bundle.{}.zpl_wavelength_nm", b.emitter_id), f.zpl_wavelength_nm);
        zpls.push(f.zpl_wavelength_nm);
    }
    let s = population_stats(&zpls)?;
    kv.push("n", s.n);
    kv.push("mean_nm", s.mean);
    kv.push("std_nm", s.std_dev);
    kv.push("min_nm", s.min);
    kv.push("max_nm", s.max);
    kv.push("se_mean_nm", s.std_dev / (s.n as f64).sqrt());
    finish(cli, kv)
}

fn sample_model(model: &dyn FitModel, p: &[f64], xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| model.value(x, p)).collect()
}

fn report(
    cli: &Cli,
    bundle: &Path,
    svg: bool,
    corr: &CorrelationArgs,
    search: &ZplSearchArgs,
    thresholds: &ThresholdArgs,
) -> Result<String> {
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("report needs --out DIR".into()))?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let (b, mut kv, x) = classification(cli, bundle, corr, search, thresholds)?;

    let mut plots: Vec<(&str, Table, Option<usize>, bool)> = Vec::new();
    if let Some(h) = &x.correlation {
        plots.push(("g2", g2_table(h), None, false));
    }
    if let (Some(h), Some(fit)) = (&b.decay, &x.lifetime_fit) {
        let t = h.bin_centers_ns();
        let model = sample_model(&ExponentialDecay, &fit.values(), &t);
        let counts = h.counts().iter().map(|&c| c as f64).collect();
        let table = Table {
            header: vec!["t_ns", "counts", "model"],
            columns: vec![t, counts, model],
        };
        plots.push(("decay", table, Some(2), true));
    }
    if let (Some(s), Some(fit)) = (&b.saturation, &x.saturation_fit) {
        let p: Vec<f64> = s.points().iter().map(|p| p.power_uw).collect();
        let law = SaturationLaw {
            with_background: fit.parameters.len() == 3,
        };
        let model = sample_model(&law, &fit.values(), &p);
        let table = Table {
            header: vec!["power_uw", "intensity_kcps", "model"],
            columns: vec![p, s.points().iter().map(|p| p.intensity_kcps).collect(), model],
        };
        plots.push(("saturation", table, Some(2), false));
    }
    if let (Some(s), Some(fit)) = (&b.polarization, &x.polarization_fit) {
        let a: Vec<f64> = s.points().iter().map(|p| p.angle_deg).collect();
        let model = sample_model(&PolarizationLaw, &fit.values(), &a);
        let table = Table {
            header: vec!["angle_deg", "intensity", "model"],
            columns: vec![a, s.points().iter().map(|p| p.intensity).collect(), model],
        };
        plots.push(("polarization", table, Some(2), false));
    }
    if let Some(s) = &b.spectrum {
        let table = Table {
            header: vec!["wavelength_nm", "intensity"],
            columns: vec![
                s.samples().iter().map(|p| p.wavelength_nm).collect(),
                s.samples().iter().map(|p| p.intensity).collect(),
            ],
        };
        plots.push(("spectrum", table, None, false));
    }
    if let Some(f) = &x.spectral {
        push_spectral(&mut kv, f);
    }
    for (name, table, model, log_y) in &plots {
        let csv = out.join(format!("{name}.csv"));
        table.write(&csv)?;
        kv.push(format!("file.{name}"), csv.display());
        if svg {
            let path = out.join(format!("{name}.svg"));
            write_text(&path, &svg_plot(&format!("{} {name}", b.emitter_id), table, 1, *model, *log_y))?;
            kv.push(format!("file.{name}_svg"), path.display());
        }
    }
    let summary = out.join("summary.txt");
    kv.push("file.summary", summary.display());
    let text = kv.render();
    write_text(&summary, &text)?;
    Ok(text)
}
