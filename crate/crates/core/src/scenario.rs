//! JSON scenarios: measure, kernel and window specifications, the list of
//! checks, and the dispatch of each command to the library.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext;
use crate::kernels::{dlbo_constant_of, BarField, DyadicKernelMap, KernelTable, RadialKernel};
use crate::lattice::{pow2, LatticeWindow};
use crate::measures::AtomicMeasure;
use crate::par::Execution;
use crate::potentials::{
    energy_continuous, hl_maximal_dyadic, m_k_maximal, t_continuous_trunc, wolff_weights,
    ContinuousWolff, DyadicPotentials, Exponents, CONTINUOUS_REL_TOL,
};
use crate::report::{CheckReport, Num, PointRecord, Quantity, Report};
use crate::suites::{self, *};
use crate::verify::{
    check_a_chain, check_bar_lemmas, check_fubini, check_kernel_dilation, rng_for,
    trace_constant_q1, trace_test_upper_triangle, DEFAULT_BAND,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    Atoms {
        positions: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    LebesgueGrid {
        lo: Vec<f64>,
        hi: Vec<f64>,
        level: i32,
    },
    BernoulliCascade {
        gamma: f64,
        depth: u32,
    },
    Empty,
}

impl MeasureSpec {
    pub fn build(&self, dim: usize) -> Result<AtomicMeasure> {
        let m = match self {
            Self::Atoms { positions, weights } => {
                if positions.len() != weights.len() {
                    return Err(Error::Config(format!(
                        "{} positions but {} weights",
                        positions.len(),
                        weights.len()
                    )));
                }
                AtomicMeasure::from_atoms(dim, positions.iter().cloned().zip(weights.iter().copied()))?
            }
            Self::LebesgueGrid { lo, hi, level } => AtomicMeasure::lebesgue_grid(lo, hi, *level)?,
            Self::BernoulliCascade { gamma, depth } => {
                AtomicMeasure::bernoulli_cascade(dim, *gamma, *depth)?
            }
            Self::Empty => AtomicMeasure::new(dim),
        };
        if m.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: m.dim(),
            });
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Riesz {
        alpha: f64,
        #[serde(default)]
        cutoff: Option<f64>,
    },
    LogKernel {
        beta: f64,
        #[serde(rename = "C")]
        c: f64,
        #[serde(default)]
        cutoff: Option<f64>,
    },
    Constant {
        value: f64,
        #[serde(default)]
        cutoff: Option<f64>,
    },
    /// CSV rows `level, index_1, ..., index_n, value`.
    Table { path: PathBuf },
}

impl KernelSpec {
    fn radial(&self, dim: usize) -> Result<Option<RadialKernel>> {
        let (k, cutoff) = match self {
            Self::Riesz { alpha, cutoff } => (RadialKernel::riesz(*alpha, dim)?, cutoff),
            Self::LogKernel { beta, c, cutoff } => (RadialKernel::log_kernel(*beta, *c, dim)?, cutoff),
            Self::Constant { value, cutoff } => (RadialKernel::constant(*value)?, cutoff),
            Self::Table { .. } => return Ok(None),
        };
        Ok(Some(match cutoff {
            Some(c) => k.with_cutoff(*c)?,
            None => k,
        }))
    }

    fn label(&self) -> String {
        match self {
            Self::Riesz { alpha, cutoff } => format!("riesz(alpha={alpha}, cutoff={cutoff:?})"),
            Self::LogKernel { beta, c, cutoff } => format!("log(beta={beta}, C={c}, cutoff={cutoff:?})"),
            Self::Constant { value, cutoff } => format!("constant({value}, cutoff={cutoff:?})"),
            Self::Table { path } => format!("table({})", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub coarse: i32,
    pub fine: i32,
    /// Coarse-level index range of the roots; defaults to the cubes meeting
    /// the atoms of σ and μ.
    #[serde(default)]
    pub root_lo: Option<Vec<i64>>,
    #[serde(default)]
    pub root_hi: Option<Vec<i64>>,
    #[serde(default)]
    pub shift: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentSpec {
    pub p: f64,
    #[serde(default)]
    pub q: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Dyadic,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSpec {
    pub trials: usize,
    pub probes: usize,
    pub band: (f64, f64),
}

impl Default for TraceSpec {
    fn default() -> Self {
        Self {
            trials: 100,
            probes: 200,
            band: DEFAULT_BAND,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: CONTINUOUS_REL_TOL,
        }
    }
}

fn default_band() -> (f64, f64) {
    DEFAULT_BAND
}

fn default_dilation() -> f64 {
    0.25
}

/// Entries of the `checks` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CheckSpec {
    Fubini(FubiniSuite),
    SummationByParts(SummationSuite),
    AChain(AChainSuite),
    TheoremA(TheoremASuite),
    BarOracle(BarOracleSuite),
    TraceQ1(TraceQ1Suite),
    DlboExamples(DlboSuite),
    Counterexample(CounterexampleSuite),
    ClosedForms(ClosedFormSuite),
    ShiftedAverage(ShiftedSuite),
    Truncation(TruncationSuite),
    /// Fubini, Theorem A and `W <= W̄` on the scenario instance.
    Instance {
        #[serde(default = "default_band")]
        band: (f64, f64),
    },
    /// Upper-triangle trace test on the scenario instance.
    TraceUpper {
        #[serde(default)]
        trials: Option<usize>,
        #[serde(default = "default_band")]
        band: (f64, f64),
    },
    KernelDilation {
        #[serde(default = "default_dilation")]
        c: f64,
        #[serde(default = "default_band")]
        band: (f64, f64),
    },
    BarLemmas {
        #[serde(default = "default_band")]
        band: (f64, f64),
    },
    Dlbo {
        #[serde(default)]
        max: Option<f64>,
    },
}

impl CheckSpec {
    fn name(&self) -> &'static str {
        match self {
            Self::Fubini(_) => "fubini",
            Self::SummationByParts(_) => "summation_by_parts",
            Self::AChain(_) => "a_chain",
            Self::TheoremA(_) => "theorem_a",
            Self::BarOracle(_) => "bar_oracle",
            Self::TraceQ1(_) => "trace_q1",
            Self::DlboExamples(_) => "dlbo_examples",
            Self::Counterexample(_) => "counterexample",
            Self::ClosedForms(_) => "closed_forms",
            Self::ShiftedAverage(_) => "shifted_average",
            Self::Truncation(_) => "truncation",
            Self::Instance { .. } => "instance",
            Self::TraceUpper { .. } => "trace_upper",
            Self::KernelDilation { .. } => "kernel_dilation",
            Self::BarLemmas { .. } => "bar_lemmas",
            Self::Dlbo { .. } => "dlbo",
        }
    }

    fn uses_seed(&self) -> bool {
        matches!(
            self,
            Self::Fubini(_)
                | Self::SummationByParts(_)
                | Self::AChain(_)
                | Self::TheoremA(_)
                | Self::BarOracle(_)
                | Self::TraceQ1(_)
                | Self::ShiftedAverage(_)
                | Self::Truncation(_)
                | Self::TraceUpper { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub dimension: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub window: Option<WindowSpec>,
    #[serde(default)]
    pub sigma: Option<MeasureSpec>,
    #[serde(default)]
    pub mu: Option<MeasureSpec>,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub exponents: Option<ExponentSpec>,
    /// Query points; the μ-atoms are used when neither this nor
    /// `points_csv` is given.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub points_csv: Option<PathBuf>,
    /// Radius at which continuous potentials are truncated; unbounded by
    /// default.
    #[serde(default)]
    pub truncation_radius: Option<f64>,
    #[serde(default = "default_band")]
    pub band: (f64, f64),
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub counterexample: CounterexampleSuite,
    #[serde(default)]
    pub trace: TraceSpec,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Potential,
    Energy,
    Maximal,
    Verify,
    Counterexample,
    Trace,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Potential => "potential",
            Self::Energy => "energy",
            Self::Maximal => "maximal",
            Self::Verify => "verify",
            Self::Counterexample => "counterexample",
            Self::Trace => "trace",
        }
    }
}

/// The measures, kernel and window of a scenario, resolved.
pub struct Instance {
    pub dim: usize,
    pub sigma: AtomicMeasure,
    pub mu: AtomicMeasure,
    pub kernel: DyadicKernelMap,
    pub radial: Option<RadialKernel>,
    pub window: LatticeWindow,
    pub exps: Exponents,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: Report,
    /// Wall time per step in seconds, kept out of the report so that it
    /// stays reproducible.
    pub timings: Vec<(String, f64)>,
}

impl RunOutput {
    pub fn timings_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Step<'a> {
            step: &'a str,
            seconds: f64,
        }
        let steps: Vec<Step> = self
            .timings
            .iter()
            .map(|(s, t)| Step { step: s, seconds: *t })
            .collect();
        let mut s = serde_json::to_string_pretty(&serde_json::json!({
            "command": self.report.command,
            "steps": steps,
        }))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

impl Scenario {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut s: Scenario = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        s.base_dir = base_dir.to_path_buf();
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_json(&text, &base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if let Some(e) = self.exponents {
            self.exponents_of(e)?;
        }
        if !(self.band.0 >= 0.0 && self.band.0 <= self.band.1) {
            return Err(Error::Config(format!("invalid band {:?}", self.band)));
        }
        if let Some(r) = self.truncation_radius {
            if !(r > 0.0) {
                return Err(Error::Config(format!("truncation_radius must be positive, got {r}")));
            }
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.len() != self.dimension {
                return Err(Error::Config(format!(
                    "point {i} has {} coordinates, expected {}",
                    p.len(),
                    self.dimension
                )));
            }
        }
        Ok(())
    }

    fn exponents_of(&self, e: ExponentSpec) -> Result<Exponents> {
        let r = match e.q {
            Some(q) => Exponents::with_q(e.p, q),
            None => Exponents::new(e.p),
        };
        r.map_err(|err| Error::Config(format!("exponents: {err}")))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn require<'a, T>(&self, v: &'a Option<T>, what: &str) -> Result<&'a T> {
        v.as_ref()
            .ok_or_else(|| Error::Config(format!("the scenario needs `{what}`")))
    }

    pub fn instance(&self) -> Result<Instance> {
        let dim = self.dimension;
        let sigma = self.require(&self.sigma, "sigma")?.build(dim)?;
        let mu = self.require(&self.mu, "mu")?.build(dim)?;
        let spec = self.require(&self.kernel, "kernel")?;
        let exps = self.exponents_of(*self.require(&self.exponents, "exponents")?)?;
        let radial = spec.radial(dim)?;
        let kernel = match (spec, &radial) {
            (_, Some(k)) => DyadicKernelMap::radial(k.clone()),
            (KernelSpec::Table { path }, None) => {
                let path = self.resolve(path);
                let file = std::fs::File::open(&path).map_err(|e| Error::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                DyadicKernelMap::Table(KernelTable::from_csv(file, dim)?)
            }
            _ => unreachable!("radial kernels always resolve"),
        };
        let window = self.window(&sigma, &mu)?;
        Ok(Instance {
            dim,
            sigma,
            mu,
            kernel,
            radial,
            window,
            exps,
        })
    }

    /// Continuous mode never reads the window, so it defaults to one level.
    fn window(&self, sigma: &AtomicMeasure, mu: &AtomicMeasure) -> Result<LatticeWindow> {
        let single_level = WindowSpec {
            coarse: 0,
            fine: 0,
            root_lo: None,
            root_hi: None,
            shift: None,
        };
        let spec = match (&self.window, self.mode) {
            (None, Mode::Continuous) => &single_level,
            _ => self.require(&self.window, "window")?,
        };
        let dim = self.dimension;
        let shift = spec.shift.clone().unwrap_or_else(|| vec![0.0; dim]);
        if shift.len() != dim {
            return Err(Error::Config(format!("window shift must have {dim} coordinates")));
        }
        let (lo, hi) = match (&spec.root_lo, &spec.root_hi) {
            (Some(lo), Some(hi)) => (lo.clone(), hi.clone()),
            (None, None) => {
                let s = pow2(spec.coarse);
                let mut lo = vec![i64::MAX; dim];
                let mut hi = vec![i64::MIN; dim];
                for (x, _) in sigma.iter().chain(mu.iter()) {
                    for i in 0..dim {
                        let k = ((x[i] - shift[i]) * s).floor() as i64;
                        lo[i] = lo[i].min(k);
                        hi[i] = hi[i].max(k + 1);
                    }
                }
                if lo[0] == i64::MAX {
                    return Err(Error::Config(
                        "window roots must be given when σ and μ are both empty".into(),
                    ));
                }
                (lo, hi)
            }
            _ => return Err(Error::Config("give both root_lo and root_hi or neither".into())),
        };
        LatticeWindow::new(spec.coarse, spec.fine, lo, hi, shift)
    }

    fn query_points(&self, mu: &AtomicMeasure) -> Result<Vec<Vec<f64>>> {
        let mut pts = self.points.clone();
        if let Some(p) = &self.points_csv {
            pts.extend(read_points(&self.resolve(p), self.dimension)?);
        }
        if pts.is_empty() {
            pts = mu.iter().map(|(x, _)| x.to_vec()).collect();
        }
        Ok(pts)
    }

    fn settings(&self, seed: Option<u64>) -> BTreeMap<String, String> {
        let mut s = BTreeMap::new();
        s.insert("dimension".into(), self.dimension.to_string());
        s.insert("mode".into(), format!("{:?}", self.mode).to_lowercase());
        if let Some(k) = &self.kernel {
            s.insert("kernel".into(), k.label());
        }
        if let Some(e) = &self.exponents {
            s.insert("p".into(), e.p.to_string());
            if let Some(q) = e.q {
                s.insert("q".into(), q.to_string());
            }
        }
        if let Some(w) = &self.window {
            s.insert("window".into(), format!("levels {}..={}", w.coarse, w.fine));
        }
        s.insert("band".into(), format!("[{}, {}]", self.band.0, self.band.1));
        if self.mode == Mode::Continuous {
            s.insert("quadrature_rel_tol".into(), self.quadrature.rel_tol.to_string());
            s.insert(
                "truncation_radius".into(),
                Num(self.truncation_radius.unwrap_or(f64::INFINITY)).to_string(),
            );
        }
        if let Some(seed) = seed {
            s.insert("seed".into(), seed.to_string());
        }
        s
    }

    /// Runs `command`. `seed` overrides the configured seed.
    pub fn run(&self, command: Command, seed: Option<u64>, exec: Execution) -> Result<RunOutput> {
        let seed = seed.or(self.seed);
        let mut report = Report::new(command.as_str(), &self.name, seed);
        report.settings = self.settings(seed);
        let mut timings = Vec::new();
        let start = Instant::now();
        match command {
            Command::Potential => self.potential(&mut report)?,
            Command::Energy => self.energy(&mut report)?,
            Command::Maximal => self.maximal(&mut report)?,
            Command::Counterexample => {
                report.extend_checks(suites::counterexample_suite(&self.counterexample, exec)?)
            }
            Command::Trace => {
                let seed = seed.ok_or_else(|| Error::Config("the trace command needs a seed".into()))?;
                let inst = self.instance()?;
                let checks = match inst.exps.q() {
                    None | Some(1.0) => trace_q1_checks(&inst, self.trace.probes, seed)?,
                    Some(_) => vec![trace_upper_check(&inst, self.trace.trials, self.trace.band, seed)?],
                };
                report.extend_checks(checks);
            }
            Command::Verify => {
                if self.checks.is_empty() {
                    return Err(Error::Config("verify needs a nonempty `checks` list".into()));
                }
                if seed.is_none() && self.checks.iter().any(CheckSpec::uses_seed) {
                    return Err(Error::Config("randomized checks need a seed".into()));
                }
                let seed = seed.unwrap_or(0);
                for (i, c) in self.checks.iter().enumerate() {
                    let t = Instant::now();
                    report.extend_checks(self.run_check(c, seed, exec)?);
                    timings.push((format!("{i}:{}", c.name()), t.elapsed().as_secs_f64()));
                }
            }
        }
        timings.push(("total".into(), start.elapsed().as_secs_f64()));
        Ok(RunOutput { report, timings })
    }

    fn run_check(&self, c: &CheckSpec, seed: u64, exec: Execution) -> Result<Vec<CheckReport>> {
        match c {
            CheckSpec::Fubini(s) => fubini_suite(s, seed, exec),
            CheckSpec::SummationByParts(s) => summation_suite(s, seed, exec),
            CheckSpec::AChain(s) => a_chain_suite(s, seed, exec),
            CheckSpec::TheoremA(s) => theorem_a_suite(s, seed, exec),
            CheckSpec::BarOracle(s) => bar_oracle_suite(s, seed, exec),
            CheckSpec::TraceQ1(s) => trace_q1_suite(s, seed, exec),
            CheckSpec::DlboExamples(s) => dlbo_suite(s),
            CheckSpec::Counterexample(s) => counterexample_suite(s, exec),
            CheckSpec::ClosedForms(s) => closed_form_suite(s, exec),
            CheckSpec::ShiftedAverage(s) => shifted_suite(s, seed, exec),
            CheckSpec::Truncation(s) => truncation_suite(s, seed),
            CheckSpec::Instance { band } => instance_checks(&self.instance()?, *band),
            CheckSpec::TraceUpper { trials, band } => {
                let inst = self.instance()?;
                Ok(vec![trace_upper_check(&inst, trials.unwrap_or(self.trace.trials), *band, seed)?])
            }
            CheckSpec::KernelDilation { c, band } => {
                let inst = self.instance()?;
                let k = radial_of(&inst)?;
                let d = check_kernel_dilation(k, &inst.sigma, &inst.mu, inst.exps, &inst.window, *c)?;
                let desc = |r: CheckReport| {
                    let r = r.instance("c", c).quantity("lebesgue_exponent", d.r);
                    match d.doubling {
                        Some(v) => r.quantity("sigma_doubling", v),
                        None => r.note("σ doubling constant not measurable"),
                    }
                };
                Ok(vec![
                    desc(CheckReport::banded("kernel_dilation.sum_ratio", d.sum_ratio, band.0, band.1)),
                    desc(CheckReport::banded("kernel_dilation.norm_ratio", d.norm_ratio, band.0, band.1)),
                ])
            }
            CheckSpec::BarLemmas { band } => {
                let inst = self.instance()?;
                let k = radial_of(&inst)?;
                let points: Vec<Vec<f64>> = self.query_points(&inst.mu)?;
                let radii: Vec<f64> = (inst.window.coarse_level()..=inst.window.fine_level())
                    .map(pow2_neg)
                    .collect();
                let b = check_bar_lemmas(k, &inst.sigma, &inst.window, &points, &radii)?;
                let range = |name: &str, (lo, hi): (f64, f64)| {
                    CheckReport::banded(format!("bar_lemmas.{name}"), hi, band.0, band.1)
                        .quantity("min_ratio", lo)
                        .quantity("samples", b.samples as f64)
                        .require(lo >= band.0)
                };
                Ok(vec![
                    range("reformulation", b.reformulation),
                    range("relationship", b.relationship),
                    range("doubling", b.doubling),
                ])
            }
            CheckSpec::Dlbo { max } => {
                let inst = self.instance()?;
                let pot = DyadicPotentials::build(&inst.kernel, &inst.sigma, &inst.mu, inst.exps, &inst.window)?;
                let a = dlbo_constant_of(&BarField::from_parts(
                    &inst.window,
                    pot.kernel_values(),
                    pot.sigma_mass().to_vec(),
                ))?;
                Ok(vec![CheckReport::banded("dlbo.instance", a, 1.0, max.unwrap_or(f64::INFINITY))])
            }
        }
    }

    fn potential(&self, report: &mut Report) -> Result<()> {
        let inst = self.instance()?;
        let pts = self.query_points(&inst.mu)?;
        match self.mode {
            Mode::Dyadic => {
                let pot = DyadicPotentials::build(&inst.kernel, &inst.sigma, &inst.mu, inst.exps, &inst.window)?;
                let mut violations = 0;
                for x in &pts {
                    let (w, wb) = (pot.wolff(x)?, pot.wolff_bar(x)?);
                    if w > wb * (1.0 + 1e-12) {
                        violations += 1;
                    }
                    report.points.push(record(
                        x,
                        &[("t", pot.t(x)?), ("wolff", w), ("wolff_bar", wb), ("maximal", pot.maximal(x)?)],
                    ));
                }
                report.push_check(
                    CheckReport::count("potential.wolff_bar_dominance_violations", violations)
                        .quantity("points", pts.len() as f64),
                );
            }
            Mode::Continuous => {
                let k = radial_of(&inst)?;
                let r = self.truncation_radius.unwrap_or(f64::INFINITY);
                let cw = ContinuousWolff::new(k, &inst.sigma, &inst.mu, inst.exps)?
                    .with_tolerance(self.quadrature.rel_tol)?;
                for x in &pts {
                    report.points.push(record(
                        x,
                        &[
                            ("t", t_continuous_trunc(k, &inst.mu, r, x)?),
                            ("wolff", cw.eval(x, r)?),
                            ("m_k", m_k_maximal(k, &inst.sigma, &inst.mu, x)?),
                        ],
                    ));
                }
            }
        }
        report.results.push(Quantity::new("points", pts.len() as f64));
        Ok(())
    }

    fn energy(&self, report: &mut Report) -> Result<()> {
        let inst = self.instance()?;
        let (e, w) = match self.mode {
            Mode::Dyadic => {
                let pot = DyadicPotentials::build(&inst.kernel, &inst.sigma, &inst.mu, inst.exps, &inst.window)?;
                let e = pot.energy(&inst.sigma)?;
                let w = pot.wolff_integral();
                let wb = pot.wolff_bar_integral(&inst.mu)?;
                report.results.extend([
                    Quantity::new("energy", e),
                    Quantity::new("wolff_integral", w),
                    Quantity::new("wolff_bar_integral", wb),
                    Quantity::new("maximal_energy", pot.maximal_energy(&inst.sigma)?),
                ]);
                report.push_check(CheckReport::banded("energy.wolff_below_wolff_bar", w, 0.0, wb * (1.0 + 1e-12)));
                if let Some(err) = check_fubini(&inst.kernel, &inst.mu, &inst.sigma, inst.exps, &inst.window)? {
                    report.push_check(CheckReport::banded("energy.fubini_rel_err", err, 0.0, 1e-9));
                }
                (e, w)
            }
            Mode::Continuous => {
                let k = radial_of(&inst)?;
                let r = self.truncation_radius.unwrap_or(f64::INFINITY);
                let cw = ContinuousWolff::new(k, &inst.sigma, &inst.mu, inst.exps)?
                    .with_tolerance(self.quadrature.rel_tol)?;
                let e = energy_continuous(k, &inst.mu, &inst.sigma, inst.exps)?;
                let mut w = 0.0;
                for (y, m) in inst.mu.iter() {
                    w += ext::mul(m, cw.eval(y, r)?);
                }
                report.results.extend([Quantity::new("energy", e), Quantity::new("wolff_integral", w)]);
                (e, w)
            }
        };
        report.results.push(Quantity::new("energy_over_wolff_integral", e / w));
        report.push_check(ratio_check("energy.theorem_a_ratio", e, w, self.band));
        Ok(())
    }

    fn maximal(&self, report: &mut Report) -> Result<()> {
        let inst = self.instance()?;
        let pts = self.query_points(&inst.mu)?;
        match self.mode {
            Mode::Dyadic => {
                let pot = DyadicPotentials::build(&inst.kernel, &inst.sigma, &inst.mu, inst.exps, &inst.window)?;
                for x in &pts {
                    let hl = hl_maximal_dyadic(&inst.sigma, &inst.mu, &inst.window, x).unwrap_or(f64::NAN);
                    report.points.push(record(x, &[("maximal", pot.maximal(x)?), ("hl_maximal", hl)]));
                }
                report.results.push(Quantity::new("maximal_energy", pot.maximal_energy(&inst.sigma)?));
                let lambda = wolff_weights(&pot);
                if lambda.iter().any(|&l| l > 0.0) {
                    let c = check_a_chain(&lambda, &inst.sigma, inst.exps.p_prime(), &inst.window)?;
                    report.push_check(
                        CheckReport::banded("maximal.a_chain_holder", c.holder, 0.0, 1.0 + 1e-12)
                            .quantity("a1_energy", c.values.a1)
                            .quantity("a2_wolff_integral", c.values.a2)
                            .quantity("a3_maximal_energy", c.values.a3)
                            .quantity("a1_over_a2", c.a1_over_a2)
                            .quantity("a3_over_a1", c.a3_over_a1)
                            .require(c.pass),
                    );
                }
            }
            Mode::Continuous => {
                let k = radial_of(&inst)?;
                for x in &pts {
                    report
                        .points
                        .push(record(x, &[("m_k", m_k_maximal(k, &inst.sigma, &inst.mu, x)?)]));
                }
            }
        }
        report.results.push(Quantity::new("points", pts.len() as f64));
        Ok(())
    }
}

/// `E / ∫ W dμ` against `band`. Both sides vanishing or both infinite is
/// consistent with the equivalence; exactly one of them is not.
fn ratio_check(name: &str, e: f64, w: f64, band: (f64, f64)) -> CheckReport {
    let c = CheckReport::banded(name, e / w, band.0, band.1)
        .quantity("energy", e)
        .quantity("wolff_integral", w);
    if e > 0.0 && w > 0.0 && e.is_finite() && w.is_finite() {
        return c;
    }
    let consistent = (e == 0.0 && w == 0.0) || (e.is_infinite() && w.is_infinite());
    let mut c = c.note(if consistent {
        "degenerate: both sides vanish or both diverge"
    } else {
        "exactly one side vanishes or diverges"
    });
    c.pass = consistent;
    c
}

fn pow2_neg(l: i32) -> f64 {
    pow2(-l)
}

fn radial_of(inst: &Instance) -> Result<&RadialKernel> {
    inst.radial
        .as_ref()
        .ok_or_else(|| Error::Config("this computation needs a radial kernel, not a table".into()))
}

fn record(x: &[f64], values: &[(&str, f64)]) -> PointRecord {
    PointRecord {
        x: x.iter().map(|&v| Num(v)).collect(),
        values: values.iter().map(|&(n, v)| Quantity::new(n, v)).collect(),
    }
}

fn read_points(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let io = |e: String| Error::Io {
        path: path.display().to_string(),
        message: e,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| io(e.to_string()))?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io(e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(p) if p.len() == dim => out.push(p),
            Ok(p) => {
                return Err(io(format!(
                    "row {}: {} coordinates, expected {dim}",
                    line + 1,
                    p.len()
                )))
            }
            Err(_) if line == 0 => continue, // header
            Err(e) => return Err(io(format!("row {}: {e}", line + 1))),
        }
    }
    Ok(out)
}

fn instance_checks(inst: &Instance, band: (f64, f64)) -> Result<Vec<CheckReport>> {
    let pot = DyadicPotentials::build(&inst.kernel, &inst.sigma, &inst.mu, inst.exps, &inst.window)?;
    let mut out = Vec::new();
    match check_fubini(&inst.kernel, &inst.mu, &inst.sigma, inst.exps, &inst.window)? {
        Some(err) => out.push(CheckReport::banded("instance.fubini_rel_err", err, 0.0, 1e-9)),
        None => {
            let mut c = CheckReport::banded("instance.fubini_rel_err", f64::NAN, 0.0, 1e-9)
                .note("not applicable: infinite energy");
            c.pass = true;
            out.push(c);
        }
    }
    let e = pot.energy(&inst.sigma)?;
    out.push(ratio_check("instance.theorem_a_ratio", e, pot.wolff_integral(), band));
    let mut violations = 0;
    for l in inst.mu.leaves(&inst.window)?.into_iter().flatten() {
        if pot.wolff_at_leaf(l) > pot.wolff_bar_at_leaf(l) * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    out.push(CheckReport::count("instance.wolff_bar_dominance_violations", violations));
    Ok(out)
}

fn trace_q1_checks(inst: &Instance, probes: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = rng_for(seed, 0);
    let t = trace_constant_q1(&inst.kernel, &inst.mu, &inst.sigma, inst.exps, &inst.window, probes, &mut rng)?;
    if !t.dual_constant.is_finite() {
        return Ok(vec![CheckReport::banded("trace.q1_dual_constant", t.dual_constant, 0.0, f64::MAX)
            .seed(seed)
            .note("infinite energy: the q = 1 trace inequality fails")]);
    }
    Ok(vec![
        CheckReport::banded("trace.q1_duality_rel_diff", ext::rel_diff(t.achieved, t.dual_constant), 0.0, 1e-8)
            .seed(seed)
            .quantity("dual_constant", t.dual_constant)
            .quantity("achieved", t.achieved),
        CheckReport::banded(
            "trace.q1_max_probe_over_dual",
            ext::ratio_or_zero(t.max_probe, t.dual_constant),
            0.0,
            1.0 + 1e-10,
        )
        .seed(seed)
        .quantity("probes", probes as f64),
    ])
}

fn trace_upper_check(inst: &Instance, trials: usize, band: (f64, f64), seed: u64) -> Result<CheckReport> {
    if inst.exps.q().is_none() {
        return Err(Error::Config("the upper-triangle trace test needs exponents.q".into()));
    }
    let u = trace_test_upper_triangle(&inst.kernel, &inst.mu, &inst.sigma, inst.exps, &inst.window, trials, seed, band)?;
    let mut c = CheckReport::banded(
        "trace.upper_triangle_sup_over_wolff_norm",
        ext::ratio_or_zero(u.empirical_sup, u.wolff_norm),
        0.0,
        band.1,
    )
    .seed(seed)
    .quantity("wolff_norm", u.wolff_norm)
    .quantity("empirical_sup", u.empirical_sup)
    .quantity("primal_sup", u.primal_sup)
    .quantity("dual_sup", u.dual_sup)
    .quantity("dlbo", u.dlbo)
    .instance("trials", trials)
    .note(u.verdict.clone());
    c.pass = u.pass;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE_CUBE: &str = r#"{
        "name": "single cube",
        "dimension": 1,
        "window": {"coarse": 0, "fine": 0, "root_lo": [0], "root_hi": [1]},
        "sigma": {"type": "lebesgue_grid", "lo": [0], "hi": [1], "level": 3},
        "mu": {"type": "atoms", "positions": [[0.5]], "weights": [0.7]},
        "kernel": {"type": "constant", "value": 1},
        "exponents": {"p": 2}
    }"#;

    fn single_cube() -> Scenario {
        Scenario::from_json(SINGLE_CUBE, Path::new(".")).unwrap()
    }

    fn result(r: &Report, name: &str) -> f64 {
        r.results.iter().find(|q| q.name == name).unwrap().value.0
    }

    #[test]
    fn single_cube_energy() {
        let out = single_cube().run(Command::Energy, None, Execution::Sequential).unwrap();
        let r = &out.report;
        assert!(r.pass, "{r:?}");
        assert!((result(r, "energy") - 0.49).abs() < 1e-15);
        assert!((result(r, "wolff_integral") - 0.49).abs() < 1e-15);
    }

    #[test]
    fn validation_errors() {
        let bad = SINGLE_CUBE.replace(r#"{"p": 2}"#, r#"{"p": 2, "q": 2}"#);
        assert!(matches!(Scenario::from_json(&bad, Path::new(".")), Err(Error::Config(_))));
        let typo = SINGLE_CUBE.replace("\"weights\"", "\"weight\"");
        let err = Scenario::from_json(&typo, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
        let s = single_cube();
        assert!(s.run(Command::Verify, Some(1), Execution::Sequential).is_err());
    }

    #[test]
    fn checks_parse_with_defaults() {
        let text = SINGLE_CUBE.replace(
            "\"exponents\": {\"p\": 2}",
            r#""exponents": {"p": 2}, "seed": 3,
               "checks": [{"type": "instance"}, {"type": "dlbo_examples"},
                          {"type": "fubini", "generator": {"instances": 3}}]"#,
        );
        let s = Scenario::from_json(&text, Path::new(".")).unwrap();
        assert_eq!(s.checks.len(), 3);
        let out = s.run(Command::Verify, None, Execution::Parallel).unwrap();
        assert!(out.report.pass, "{:?}", out.report.checks);
        let again = s.run(Command::Verify, None, Execution::Sequential).unwrap();
        assert_eq!(out.report.to_json().unwrap(), again.report.to_json().unwrap());
        let unknown = text.replace("\"instances\": 3", "\"instancez\": 3");
        assert!(Scenario::from_json(&unknown, Path::new(".")).is_err());
    }

    #[test]
    fn potential_and_maximal_points() {
        let s = single_cube();
        let out = s.run(Command::Potential, None, Execution::Sequential).unwrap();
        assert_eq!(out.report.points.len(), 1);
        assert!(out.report.pass);
        let out = s.run(Command::Maximal, None, Execution::Sequential).unwrap();
        assert!(out.report.pass, "{:?}", out.report.checks);
    }
}
