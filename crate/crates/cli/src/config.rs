//! Experiment configuration: one TOML file per experiment, with dotted keys
//! such as `grid.n_space` or `drift.form`. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use shelab::diagnostics::{
    check_refinement_chain, Coupling, EnsembleSpec, InitialCondition, KappaSettings, Resolution, SewingSettings,
};
use shelab::drift::{mollify, BoundedForm, ClosedForm, DriftForm, DriftSpec, Regularity};
use shelab::grid::DomainSetup;
use shelab::solver::{grid_level, ProbeLattice, SchemeKind};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Simulate,
    Equivalence,
    Kappa,
    Sewing,
    Besov,
    Uniqueness,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Equivalence => "equivalence",
            Experiment::Kappa => "kappa",
            Experiment::Sewing => "sewing",
            Experiment::Besov => "besov",
            Experiment::Uniqueness => "uniqueness",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainName {
    Periodic,
    Neumann,
    WholeLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub domain: DomainName,
    pub n_space: usize,
    pub n_time: usize,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torus_width: Option<f64>,
    /// Number of resolutions in refinement chains; the configured grid is the finest.
    #[serde(default = "three")]
    pub refinements: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftName {
    Constant,
    Sine,
    Linear,
    Sign,
    Indicator,
    Power,
    Dirac,
    Atomic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub form: DriftName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Integrability declared for a power singularity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locations: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Overrides of the declared regularity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "one_usize")]
    pub realizations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "splitting")]
    pub scheme: SchemeKind,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { realizations: 1, seed: 0, scheme: SchemeKind::SplittingExact }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialName {
    Zero,
    Constant,
    Sine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default = "zero_initial")]
    pub kind: InitialName,
    #[serde(default)]
    pub value: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub k: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection { kind: InitialName::Zero, value: 0.0, amplitude: 1.0, k: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollificationSection {
    /// Overrides the grid level `1/max(dt, dx^2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u64>,
    /// Ladder of levels for regularized limits and Besov convergence.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default = "one_usize")]
    pub time_stride: usize,
    #[serde(default = "four")]
    pub space_stride: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection { time_stride: 1, space_stride: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KappaSection {
    #[serde(default = "two")]
    pub moment: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lags: Option<Vec<f64>>,
    #[serde(default = "sixteenth")]
    pub start_step: f64,
    #[serde(default = "four")]
    pub space_stride: usize,
    /// Integrability used for the theoretical exponent; defaults to the drift's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default = "kappa_tolerance")]
    pub tolerance: f64,
}

impl Default for KappaSection {
    fn default() -> Self {
        KappaSection { moment: 2.0, lags: None, start_step: 1.0 / 16.0, space_stride: 4, p: None, tolerance: 0.12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SewingSection {
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "two")]
    pub moment: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<Vec<f64>>,
    #[serde(default = "eight")]
    pub space_stride: usize,
}

impl Default for SewingSection {
    fn default() -> Self {
        SewingSection { gamma: 0.0, moment: 2.0, scales: None, starts: None, space_stride: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceSection {
    #[serde(default = "eight")]
    pub n_modes: usize,
    #[serde(default = "eight")]
    pub n_bumps: usize,
    #[serde(default = "contraction")]
    pub contraction: f64,
}

impl Default for EquivalenceSection {
    fn default() -> Self {
        EquivalenceSection { n_modes: 8, n_bumps: 8, contraction: 1.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingName {
    Schemes,
    Ladders,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    #[serde(default = "schemes")]
    pub kind: CouplingName,
    #[serde(default = "splitting")]
    pub first: SchemeKind,
    #[serde(default = "semi_implicit")]
    pub second: SchemeKind,
    #[serde(default = "two_u64")]
    pub factor: u64,
    #[serde(default = "contraction")]
    pub contraction: f64,
}

impl Default for CouplingSection {
    fn default() -> Self {
        CouplingSection {
            kind: CouplingName::Schemes,
            first: SchemeKind::SplittingExact,
            second: SchemeKind::SemiImplicit,
            factor: 2,
            contraction: 1.3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesovSection {
    /// Defaults to the declared regularity of the drift.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Ndjson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "ndjson")]
    pub format: Format,
    /// Write binary dumps of simulated fields.
    #[serde(default = "yes")]
    pub dumps: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_dir(), format: Format::Ndjson, dumps: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When present, must match the subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    pub grid: GridSection,
    pub drift: DriftSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub mollification: MollificationSection,
    #[serde(default)]
    pub probes: ProbeSection,
    #[serde(default)]
    pub kappa: KappaSection,
    #[serde(default)]
    pub sewing: SewingSection,
    #[serde(default)]
    pub equivalence: EquivalenceSection,
    #[serde(default)]
    pub coupling: CouplingSection,
    #[serde(default)]
    pub besov: BesovSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn sixteenth() -> f64 {
    1.0 / 16.0
}
fn kappa_tolerance() -> f64 {
    0.12
}
fn contraction() -> f64 {
    1.3
}
fn one_usize() -> usize {
    1
}
fn three() -> usize {
    3
}
fn four() -> usize {
    4
}
fn eight() -> usize {
    8
}
fn two_u64() -> u64 {
    2
}
fn yes() -> bool {
    true
}
fn splitting() -> SchemeKind {
    SchemeKind::SplittingExact
}
fn semi_implicit() -> SchemeKind {
    SchemeKind::SemiImplicit
}
fn schemes() -> CouplingName {
    CouplingName::Schemes
}
fn zero_initial() -> InitialName {
    InitialName::Zero
}
fn ndjson() -> Format {
    Format::Ndjson
}
fn default_dir() -> String {
    "out".into()
}

/// A configuration problem tied to a dotted key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl Violation {
    fn new(key: &str, message: impl Into<String>) -> Self {
        Violation { key: key.to_string(), message: message.into() }
    }
}

/// 1-based line on which a dotted key is set, either as `a.b = ...` or as
/// `b = ...` inside a `[a]` table; falls back to the table header.
pub fn locate_key(text: &str, key: &str) -> Option<usize> {
    let mut table = String::new();
    let mut header = None;
    let section = key.split('.').next().unwrap_or(key);
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') {
            table = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if table == section && header.is_none() {
                header = Some(n + 1);
            }
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs: String = lhs.split('.').map(|p| p.trim().trim_matches('"')).collect::<Vec<_>>().join(".");
        let full = if table.is_empty() { lhs } else { format!("{table}.{lhs}") };
        if full == key {
            return Some(n + 1);
        }
        if header.is_none() && full.starts_with(&format!("{section}.")) {
            header = Some(n + 1);
        }
    }
    header
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    /// Parses and validates; messages are prefixed with `origin:line:`.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(1);
            CliError::Config(format!("{origin}:{line}: {}", e.message().trim()))
        })?;
        let violations = cfg.validate();
        if let Some(v) = violations.first() {
            let line = locate_key(text, &v.key).unwrap_or(1);
            return Err(CliError::Config(format!("{origin}:{line}: {}: {}", v.key, v.message)));
        }
        Ok(cfg)
    }

    /// Parses without validation, for listings.
    pub fn parse_unchecked(text: &str, origin: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(1);
            CliError::Config(format!("{origin}:{line}: {}", e.message().trim()))
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn setup(&self) -> Result<DomainSetup, String> {
        match self.grid.domain {
            DomainName::Periodic => Ok(DomainSetup::periodic()),
            DomainName::Neumann => Ok(DomainSetup::neumann()),
            DomainName::WholeLine => {
                let w = self.grid.torus_width.ok_or("whole_line needs grid.torus_width")?;
                DomainSetup::whole_line(w).map_err(|e| e.to_string())
            }
        }
    }

    pub fn drift_spec(&self) -> Result<DriftSpec, Violation> {
        let d = &self.drift;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Violation::new(&format!("drift.{name}"), format!("required for form {:?}", d.form)))
        };
        let mut spec = match d.form {
            DriftName::Constant => DriftSpec::constant(need(d.value, "value")?),
            DriftName::Sine => DriftSpec::sine(d.amplitude.unwrap_or(1.0), d.frequency.unwrap_or(1.0)),
            DriftName::Linear => DriftSpec::linear(need(d.slope, "slope")?),
            DriftName::Sign => DriftSpec::sign(),
            DriftName::Indicator => DriftSpec {
                form: DriftForm::BoundedMeasurable(BoundedForm::Indicator {
                    lo: need(d.lo, "lo")?,
                    hi: need(d.hi, "hi")?,
                }),
                declared: Regularity { beta: 0.0, q: f64::INFINITY },
            },
            DriftName::Power => {
                let exponent = need(d.exponent, "exponent")?;
                let radius = d.radius.unwrap_or(1.0);
                let p = d.p.unwrap_or_else(|| 0.5 * (1.0 + 1.0 / exponent.clamp(1e-6, 1.0 - 1e-6)));
                DriftSpec { form: DriftForm::PowerSingularity { exponent, radius }, declared: Regularity { beta: 0.0, q: p } }
            }
            DriftName::Dirac => DriftSpec::dirac(d.weight.unwrap_or(1.0)),
            DriftName::Atomic => {
                let locations = d.locations.clone().ok_or_else(|| Violation::new("drift.locations", "required for form Atomic"))?;
                let weights = d.weights.clone().ok_or_else(|| Violation::new("drift.weights", "required for form Atomic"))?;
                if locations.len() != weights.len() || locations.is_empty() {
                    return Err(Violation::new("drift.weights", "need one weight per location"));
                }
                DriftSpec {
                    form: DriftForm::AtomicMeasure { locations, weights },
                    declared: Regularity { beta: -1.0, q: f64::INFINITY },
                }
            }
        };
        if let Some(b) = d.beta {
            spec.declared.beta = b;
        }
        if let Some(q) = d.q {
            spec.declared.q = q;
        }
        let key = match spec.form {
            DriftForm::PowerSingularity { .. } => "drift.exponent",
            DriftForm::ClosedForm(ClosedForm::Sine { .. }) => "drift.amplitude",
            _ => "drift.form",
        };
        spec.validate().map_err(|e| Violation::new(key, e.to_string()))?;
        Ok(spec)
    }

    pub fn initial_condition(&self) -> InitialCondition {
        match self.initial.kind {
            InitialName::Zero => InitialCondition::Zero,
            InitialName::Constant => InitialCondition::Constant { value: self.initial.value },
            InitialName::Sine => InitialCondition::Sine { amplitude: self.initial.amplitude, k: self.initial.k },
        }
    }

    pub fn ensemble_spec(&self) -> Result<EnsembleSpec, String> {
        Ok(EnsembleSpec {
            setup: self.setup()?,
            horizon: self.grid.horizon,
            realizations: self.ensemble.realizations,
            master_seed: self.ensemble.seed,
            initial: self.initial_condition(),
            scheme: self.ensemble.scheme,
        })
    }

    pub fn finest(&self) -> Resolution {
        Resolution { n_space: self.grid.n_space, n_time: self.grid.n_time }
    }

    /// Refinement chain ending at the configured grid, coarse first.
    pub fn chain(&self) -> Vec<Resolution> {
        let r = self.grid.refinements.max(1);
        (0..r)
            .rev()
            .map(|k| Resolution { n_space: self.grid.n_space >> k, n_time: self.grid.n_time >> k })
            .collect()
    }

    pub fn probes(&self) -> ProbeLattice {
        ProbeLattice { time_stride: self.probes.time_stride, space_stride: self.probes.space_stride }
    }

    pub fn kappa_settings(&self) -> KappaSettings {
        let d = KappaSettings::default();
        KappaSettings {
            lags: self.kappa.lags.clone().unwrap_or(d.lags),
            start_step: self.kappa.start_step,
            space_stride: self.kappa.space_stride,
            moment: self.kappa.moment,
        }
    }

    pub fn sewing_settings(&self) -> SewingSettings {
        let d = SewingSettings::default();
        SewingSettings {
            scales: self.sewing.scales.clone().unwrap_or(d.scales),
            starts: self.sewing.starts.clone().unwrap_or(d.starts),
            space_stride: self.sewing.space_stride,
            moment: self.sewing.moment,
        }
    }

    pub fn coupling(&self) -> Coupling {
        match self.coupling.kind {
            CouplingName::Schemes => Coupling::Schemes { first: self.coupling.first, second: self.coupling.second },
            CouplingName::Ladders => Coupling::Ladders { factor: self.coupling.factor },
        }
    }

    pub fn besov_levels(&self) -> Vec<u64> {
        if self.mollification.levels.is_empty() {
            vec![8, 16, 32, 64]
        } else {
            self.mollification.levels.clone()
        }
    }

    /// Every problem with the configuration, in file order of sections.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let g = &self.grid;
        if !(g.horizon > 0.0 && g.horizon <= 1.0) {
            out.push(Violation::new("grid.horizon", format!("must lie in (0, 1], got {}", g.horizon)));
        }
        if g.n_space < 4 {
            out.push(Violation::new("grid.n_space", format!("must be at least 4, got {}", g.n_space)));
        }
        if g.n_time < 1 {
            out.push(Violation::new("grid.n_time", "must be at least 1"));
        }
        if g.refinements == 0 {
            out.push(Violation::new("grid.refinements", "must be at least 1"));
        } else if g.refinements > 1 {
            let f = 1usize << (g.refinements - 1);
            if g.n_space % f != 0 || g.n_time % f != 0 || g.n_space / f < 4 {
                out.push(Violation::new(
                    "grid.refinements",
                    format!("grid {}x{} cannot be halved {} times", g.n_space, g.n_time, g.refinements - 1),
                ));
            } else if let Err(e) = check_refinement_chain(&self.chain()) {
                out.push(Violation::new("grid.refinements", e.to_string()));
            }
        }
        match g.domain {
            DomainName::WholeLine => match g.torus_width {
                None => out.push(Violation::new("grid.torus_width", "required for the whole line")),
                Some(w) => {
                    let need = DomainSetup::min_torus_width(g.horizon.max(0.0));
                    if !(w >= need) {
                        out.push(Violation::new(
                            "grid.torus_width",
                            format!("torus width {w} is below 8*sqrt(horizon) = {need}"),
                        ));
                    }
                }
            },
            _ => {
                if g.torus_width.is_some_and(|w| w != 1.0) {
                    out.push(Violation::new("grid.torus_width", "only the whole line takes a torus width"));
                }
            }
        }
        if let Err(v) = self.drift_spec() {
            out.push(v);
        }
        if self.ensemble.realizations == 0 {
            out.push(Violation::new("ensemble.realizations", "must be at least 1"));
        }
        if self.mollification.level == Some(0) {
            out.push(Violation::new("mollification.level", "must be at least 1"));
        }
        let lv = &self.mollification.levels;
        if lv.contains(&0) || lv.windows(2).any(|w| w[1] <= w[0]) {
            out.push(Violation::new("mollification.levels", "levels must be positive and increasing"));
        }
        if self.probes.time_stride == 0 || self.probes.space_stride == 0 {
            out.push(Violation::new("probes.space_stride", "strides must be positive"));
        }
        if !(self.kappa.moment >= 1.0) {
            out.push(Violation::new("kappa.moment", "must be at least 1"));
        }
        if self.kappa.lags.as_ref().is_some_and(|l| l.iter().any(|&h| !(h > 0.0 && h < g.horizon))) {
            out.push(Violation::new("kappa.lags", "lags must lie in (0, horizon)"));
        }
        if !(self.kappa.start_step > 0.0 && self.kappa.start_step < g.horizon) {
            out.push(Violation::new("kappa.start_step", "must lie in (0, horizon)"));
        }
        if self.kappa.space_stride == 0 || self.sewing.space_stride == 0 {
            out.push(Violation::new("kappa.space_stride", "strides must be positive"));
        }
        if !(self.sewing.moment >= 1.0) {
            out.push(Violation::new("sewing.moment", "must be at least 1"));
        }
        if !(self.equivalence.contraction > 1.0) || !(self.coupling.contraction > 1.0) {
            out.push(Violation::new("equivalence.contraction", "contraction factors must exceed 1"));
        }
        if self.coupling.factor < 2 {
            out.push(Violation::new("coupling.factor", "must be at least 2"));
        }
        if let Some(b) = self.besov.beta {
            if !(-2.0..=1.0).contains(&b) {
                out.push(Violation::new("besov.beta", format!("must lie in [-2, 1], got {b}")));
            }
        }
        if self.besov.q.is_some_and(|q| !(q >= 1.0)) {
            out.push(Violation::new("besov.q", "must be at least 1"));
        }
        out
    }

    /// Derived quantities as `(name, value)` pairs.
    pub fn derived(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let g = &self.grid;
        let extent = match g.domain {
            DomainName::WholeLine => g.torus_width.unwrap_or(f64::NAN),
            _ => 1.0,
        };
        out.push(("dx".into(), format!("{}", extent / g.n_space as f64)));
        out.push(("dt".into(), format!("{}", g.horizon / g.n_time as f64)));
        if let (Ok(setup), true) = (self.setup(), g.n_space >= 4 && g.n_time >= 1) {
            if let (Ok(grid), Ok(tgrid)) = (
                shelab::grid::Grid1D::new(setup, g.n_space),
                shelab::grid::TimeGrid::new(g.horizon, g.n_time),
            ) {
                let n = self.mollification.level.unwrap_or_else(|| grid_level(&grid, &tgrid));
                out.push(("mollification_level".into(), n.to_string()));
                out.push(("mollification_scale".into(), format!("{}", 1.0 / n as f64)));
                if let Ok(spec) = self.drift_spec() {
                    if let Ok(m) = mollify(&spec, n) {
                        out.push(("drift_sup_bound".into(), format!("{}", m.sup_bound())));
                    }
                }
            }
        }
        if g.domain == DomainName::WholeLine {
            out.push(("min_torus_width".into(), format!("{}", DomainSetup::min_torus_width(g.horizon))));
        }
        out.push(("resolutions".into(), self.chain().iter().map(|r| r.label()).collect::<Vec<_>>().join(",")));
        out
    }
}
