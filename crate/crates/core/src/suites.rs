//! Seeded verification suites over random and explicit instances.
//!
//! A suite generates its instances from `(seed, index)`, evaluates them
//! through [`Execution`], and reduces the per-instance results in index order,
//! so the reports do not depend on the number of threads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext;
use crate::kernels::{
    bar_k, dlbo_constant, BarField, DyadicKernelMap, NaiveBarField, RadialKernel,
};
use crate::lattice::{pow2, LatticeWindow};
use crate::measures::AtomicMeasure;
use crate::par::Execution;
use crate::potentials::{
    a_functionals, energy_continuous, m_k_maximal, summation_by_parts, wolff_weights,
    DyadicPotentials, Exponents,
};
use crate::report::CheckReport;
use crate::verify::{
    check_a_chain, check_counterexample_fields, check_fubini, check_theorem_a,
    counterexample_partial_sums, random_lambda, rng_for, shifted_average_check,
    trace_constant_q1, truncation_sweep, InstanceParams, RandomInstance, DEFAULT_BAND,
};

/// Stream offsets keeping auxiliary randomness apart from the instances,
/// which use streams `0, 1, 2, ...`.
const LAMBDA_STREAM: u64 = 1 << 40;
const PROBE_STREAM: u64 = 2 << 40;
const QUERY_STREAM: u64 = 3 << 40;
const ATOM_STREAM: u64 = 4 << 40;

/// Relative slack for inequalities that hold exactly in real arithmetic.
const ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Generator {
    pub instances: u64,
    pub max_dim: usize,
    pub max_depth: i32,
    pub max_atoms: usize,
    pub table_fraction: f64,
}

impl Default for Generator {
    fn default() -> Self {
        let p = InstanceParams::default();
        Self {
            instances: 100,
            max_dim: p.max_dim,
            max_depth: p.max_depth,
            max_atoms: p.max_atoms,
            table_fraction: p.table_fraction,
        }
    }
}

impl Generator {
    fn params(&self) -> Result<InstanceParams> {
        if self.max_dim == 0 || self.max_depth < 1 || self.max_atoms == 0 {
            return Err(Error::Config(
                "generator needs max_dim, max_depth and max_atoms of at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.table_fraction) {
            return Err(Error::Config("table_fraction must lie in [0, 1]".into()));
        }
        Ok(InstanceParams {
            max_dim: self.max_dim,
            max_depth: self.max_depth,
            max_atoms: self.max_atoms,
            table_fraction: self.table_fraction,
        })
    }

    fn run<R, F>(&self, seed: u64, exec: Execution, f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(&RandomInstance) -> Result<R> + Sync + Send,
    {
        let params = self.params()?;
        exec.map_range(self.instances as usize, |i| {
            f(&RandomInstance::generate(seed, i as u64, &params)?)
        })
        .into_iter()
        .collect()
    }

    fn describe(&self, c: CheckReport) -> CheckReport {
        c.instance("instances", self.instances)
            .instance("max_dim", self.max_dim)
            .instance("max_depth", self.max_depth)
            .instance("max_atoms", self.max_atoms)
            .instance("table_fraction", self.table_fraction)
    }
}

/// Index and value of the largest entry; `(None, 0)` when empty.
fn arg_max(values: impl IntoIterator<Item = (usize, f64)>) -> (Option<usize>, f64) {
    let mut best = (None, 0.0);
    for (i, v) in values {
        if best.0.is_none() || v > best.1 || v.is_nan() {
            best = (Some(i), v);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FubiniSuite {
    pub generator: Generator,
    pub p_primes: Vec<f64>,
    pub tolerance: f64,
}

impl Default for FubiniSuite {
    fn default() -> Self {
        Self {
            generator: Generator::default(),
            p_primes: vec![1.5, 2.0, 3.0],
            tolerance: 1e-9,
        }
    }
}

pub fn fubini_suite(s: &FubiniSuite, seed: u64, exec: Execution) -> Result<Vec<CheckReport>> {
    let exps = s
        .p_primes
        .iter()
        .map(|&pp| Exponents::from_p_prime(pp))
        .collect::<Result<Vec<_>>>()?;
    let rows = s.generator.run(seed, exec, |inst| {
        exps.iter()
            .map(|&e| check_fubini(&inst.kernel, &inst.mu, &inst.sigma, e, &inst.window))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = Vec::new();
    for (k, &pp) in s.p_primes.iter().enumerate() {
        let skipped = rows.iter().filter(|r| r[k].is_none()).count();
        let (worst, err) = arg_max(rows.iter().enumerate().filter_map(|(i, r)| r[k].map(|e| (i, e))));
        let mut c = CheckReport::banded(format!("fubini.p_prime={pp}"), err, 0.0, s.tolerance)
            .seed(seed)
            .quantity("not_applicable", skipped as f64);
        if let Some(w) = worst {
            c = c.instance("worst_index", w);
        }
        out.push(s.generator.describe(c));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummationSuite {
    pub generator: Generator,
    pub s_values: Vec<f64>,
}

impl Default for SummationSuite {
    fn default() -> Self {
        Self {
            generator: Generator::default(),
            s_values: vec![1.5, 2.0, 3.0],
        }
    }
}

/// The chain inequality with terms `K(Q) μ(Q)` along the cubes containing
/// each σ- and μ-atom.
pub fn summation_suite(s: &SummationSuite, seed: u64, exec: Execution) -> Result<Vec<CheckReport>> {
    if let Some(bad) = s.s_values.iter().find(|&&v| !(v >= 1.0)) {
        return Err(Error::Config(format!("summation by parts needs s >= 1, got {bad}")));
    }
    // per s: (violations, atoms checked, smallest rhs / lhs)
    let rows = s.generator.run(seed, exec, |inst| {
        let w = &inst.window;
        let k = inst.kernel.values_on(w)?;
        let mm = inst.mu.cube_masses(w)?;
        let mut leaves = inst.sigma.leaves(w)?;
        leaves.extend(inst.mu.leaves(w)?);
        let mut stats = vec![(0usize, 0usize, f64::INFINITY); s.s_values.len()];
        for leaf in leaves.into_iter().flatten() {
            let mut chain: Vec<f64> = w.ancestors(leaf).map(|a| ext::mul(k[a], mm[a])).collect();
            chain.reverse();
            for (st, &sv) in stats.iter_mut().zip(&s.s_values) {
                let (lhs, rhs) = summation_by_parts(&chain, sv);
                st.1 += 1;
                if lhs > rhs * (1.0 + ROUNDING) {
                    st.0 += 1;
                }
                if lhs > 0.0 {
                    st.2 = st.2.min(rhs / lhs);
                }
            }
        }
        Ok(stats)
    })?;
    let mut out = Vec::new();
    for (k, &sv) in s.s_values.iter().enumerate() {
        let violations: usize = rows.iter().map(|r| r[k].0).sum();
        let atoms: usize = rows.iter().map(|r| r[k].1).sum();
        let min_ratio = rows.iter().map(|r| r[k].2).fold(f64::INFINITY, f64::min);
        let c = CheckReport::count(format!("summation_by_parts.s={sv}"), violations)
            .seed(seed)
            .quantity("atoms_checked", atoms as f64)
            .quantity("min_rhs_over_lhs", min_ratio);
        out.push(s.generator.describe(c));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AChainSuite {
    pub generator: Generator,
    pub s_values: Vec<f64>,
}

impl Default for AChainSuite {
    fn default() -> Self {
        Self {
            generator: Generator::default(),
            s_values: vec![1.5, 2.0, 3.0],
        }
    }
}

/// `A1 <= s A2` for `s <= 2` and `A2 <= A1^{1/s} A3^{1/s'}` with random
/// cube weights `λ`.
pub fn a_chain_suite(s: &AChainSuite, seed: u64, exec: Execution) -> Result<Vec<CheckReport>> {
    if let Some(bad) = s.s_values.iter().find(|&&v| !(v > 1.0)) {
        return Err(Error::Config(format!("the A-chain needs s > 1, got {bad}")));
    }
    let rows = s.generator.run(seed, exec, |inst| {
        let sm = inst.sigma.cube_masses(&inst.window)?;
        let mut rng = rng_for(seed, LAMBDA_STREAM + inst.index);
        let lambda = random_lambda(&mut rng, &sm);
        if !lambda.iter().any(|&l| l > 0.0) {
            return Ok(None);
        }
        s.s_values
            .iter()
            .map(|&sv| check_a_chain(&lambda, &inst.sigma, sv, &inst.window))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    })?;
    let skipped = rows.iter().filter(|r| r.is_none()).count();
    let rows: Vec<_> = rows.into_iter().flatten().collect();
    let mut out = Vec::new();
    for (k, &sv) in s.s_values.iter().enumerate() {
        let fails = rows.iter().filter(|r| !r[k].pass).count();
        let max_of = |f: fn(&crate::verify::AChain) -> f64| {
            rows.iter().map(|r| f(&r[k])).fold(0.0, f64::max)
        };
        let c = CheckReport::count(format!("a_chain.s={sv}"), fails)
            .seed(seed)
            .quantity("max_a1_over_a2", max_of(|a| a.a1_over_a2))
            .quantity("max_holder_ratio", max_of(|a| a.holder))
            .quantity("max_a3_over_a1", max_of(|a| a.a3_over_a1))
            .quantity("max_a1_over_a3", max_of(|a| a.a1_over_a3))
            .quantity("skipped_zero_weights", skipped as f64);
        out.push(s.generator.describe(c));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremASuite {
    pub generator: Generator,
    pub p_prime: f64,
    pub band: (f64, f64),
    pub single_cube_mass: f64,
}

impl Default for TheoremASuite {
    fn default() -> Self {
        Self {
            generator: Generator::default(),
            p_prime: 2.0,
            band: DEFAULT_BAND,
            single_cube_mass: 0.7,
        }
    }
}

/// Band check of `E / ∫ W dμ`, its agreement with `A1 / A2` under
/// `λ = K μ σ`, and the single-cube value.
pub fn theorem_a_suite(s: &TheoremASuite, seed: u64, exec: Execution) -> Result<Vec<CheckReport>> {
    let exps = Exponents::from_p_prime(s.p_prime)?;
    let rows = s.generator.run(seed, exec, |inst| {
        let Some(ratio) = check_theorem_a(&inst.kernel, &inst.mu, &inst.sigma, exps, &inst.window)?
        else {
            return Ok(None);
        };
        let pot = DyadicPotentials::build(&inst.kernel, &inst.sigma, &inst.mu, exps, &inst.window)?;
        let a = a_functionals(&wolff_weights(&pot), &inst.sigma, s.p_prime, &inst.window)?;
        Ok(Some((ratio, ext::rel_diff(ratio, a.a1 / a.a2))))
    })?;
    let valid: Vec<(usize, f64, f64)> = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|(a, b)| (i, a, b)))
        .collect();
    let skipped = rows.len() - valid.len();
    let (lo, hi) = s.band;
    let min = valid.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let max = valid.iter().map(|v| v.1).fold(0.0, f64::max);
    let (_, subst) = arg_max(valid.iter().map(|v| (v.0, v.2)));
    let name = |n: &str| format!("theorem_a.{n}.p_prime={}", s.p_prime);
    let mut out = vec![
        s.generator.describe(
            CheckReport::banded(name("min_ratio"), if valid.is_empty() { 1.0 } else { min }, lo, hi)
                .seed(seed)
                .quantity("not_applicable", skipped as f64),
        ),
        s.generator.describe(
            CheckReport::banded(name("max_ratio"), if valid.is_empty() { 1.0 } else { max }, lo, hi)
                .seed(seed),
        ),
        s.generator.describe(
            CheckReport::banded(name("substitution_rel_diff"), subst, 0.0, ROUNDING).seed(seed),
        ),
    ];

    let m = s.single_cube_mass;
    let w = LatticeWindow::unit(1, 0, 0)?;
    let sigma = AtomicMeasure::lebesgue_grid(&[0.0], &[1.0], 3)?;
    let mu = AtomicMeasure::point_mass(&[0.5], m)?;
    let k = DyadicKernelMap::radial(RadialKernel::constant(1.0)?);
    let ratio = check_theorem_a(&k, &mu, &sigma, exps, &w)?.unwrap_or(f64::NAN);
    out.push(
        CheckReport::banded(name("single_cube"), ratio, 1.0 - ROUNDING, 1.0 + ROUNDING)
            .instance("mu_mass", m)
            .instance("kernel", "constant(1)")
            .instance("window", "unit cube, one level"),
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarOracleSuite {
    pub generator: Generator,
    pub queries: usize,
    pub tolerance: f64,
    pub root_depths: Vec<i32>,
}

impl Default for BarOracleSuite {
    fn default() -> Self {
        Self {
            generator: Generator {
                instances: 50,
                max_depth: 6,
                ..Generator::default()
            },
            queries: 128,
            tolerance: 1e-12,
            root_depths: vec![2, 4, 6, 8, 10],
        }
    }
}

/// Aggregated bar field against direct cube scans, and the Riesz root value
/// against its geometric series.
pub fn bar_oracle_suite(s: &BarOracleSuite, seed: u64, exec: Execution) -> Result<Vec<CheckReport>> {
    let rows = s.generator.run(seed, exec, |inst| {
        let w = &inst.window;
        let fast = BarField::build(&inst.kernel, &inst.sigma, w)?;
        let naive = NaiveBarField::build(&inst.kernel, &inst.sigma, w)?;
        let mut rng = rng_for(seed, QUERY_STREAM + inst.index);
        let mut worst: f64 = 0.0;
        for q in 0..s.queries {
            let id = rng.gen_range(0..w.len());
            let cube = w.cube(id);
            let x: Vec<f64> = if q % 2 == 0 && !inst.sigma.is_empty() {
                // a σ-atom when one lies in the cube, else a uniform point
                let inside = inst.sigma.iter().find(|(p, _)| cube.contains(p));
                match inside {
                    Some((p, _)) => p.to_vec(),
                    None => uniform_in(&mut rng, &cube.lower_corner(), cube.side_length()),
                }
            } else {
                uniform_in(&mut rng, &cube.lower_corner(), cube.side_length())
            };
            let (a, b) = (fast.value(id, &x)?, naive.value(id, &x)?);
            worst = worst.max(ext::rel_diff(a, b));
        }
        Ok(worst)
    })?;
    let (worst_index, worst) = arg_max(rows.iter().copied().enumerate());
    let mut c = CheckReport::banded("bar_oracle.max_rel_diff", worst, 0.0, s.tolerance)
        .seed(seed)
        .quantity("queries_per_instance", s.queries as f64);
    if let Some(i) = worst_index {
        c = c.instance("worst_index", i);
    }
    let mut out = vec![s.generator.describe(c)];

    let k = DyadicKernelMap::radial(RadialKernel::riesz(0.5, 1)?);
    let mut root = CheckReport::banded("bar_oracle.riesz_root_series", 0.0, 0.0, s.tolerance)
        .instance("kernel", "riesz(alpha=0.5)")
        .instance("sigma", "lebesgue grid on [0,1) at the window depth")
        .instance("depths", format!("{:?}", s.root_depths));
    let mut worst = 0.0f64;
    for &d in &s.root_depths {
        let w = LatticeWindow::unit(1, 0, d)?;
        let sigma = AtomicMeasure::lebesgue_grid(&[0.0], &[1.0], d)?;
        let v = BarField::build(&k, &sigma, &w)?.value(0, &[0.0])?;
        let series = (1.0 - 2f64.powf(-(d as f64 + 1.0) / 2.0)) / (1.0 - 2f64.powf(-0.5));
        worst = worst.max(ext::rel_diff(v, series));
        root = root.quantity(format!("root_value.depth={d}"), v);
    }
    root.value = worst.into();
    root.pass = worst <= s.tolerance;
    out.push(root);
    Ok(out)
}

fn uniform_in(rng: &mut impl Rng, lo: &[f64], side: f64) -> Vec<f64> {
    lo.iter().map(|&a| a + side * rng.gen::<f64>()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceQ1Suite {
    pub generator: Generator,
    pub probes: usize,
    pub p_prime: f64,
    pub duality_tolerance: f64,
    pub probe_slack: f64,
}

impl Default for TraceQ1Suite {
    fn default() -> Self {
        Self {
            generator: Generator {
                instances: 50,
                ..Generator::default()
            },
            probes: 200,
            p_prime: 2.0,
            duality_tolerance: 1e-8,
            probe_slack: 1e-10,
        }
    }
}

/// The extremal function attains `E^{1/p'}` and random probes stay below it.
pub fn trace_q1_suite(s: &TraceQ1Suite, seed: u64, exec: Execution) -> Result<Vec<CheckReport>> {
    let exps = Exponents::from_p_prime(s.p_prime)?;
    let rows = s.generator.run(seed, exec, |inst| {
        let mut rng = rng_for(seed, PROBE_STREAM + inst.index);
        let t = trace_constant_q1(&inst.kernel, &inst.mu, &inst.sigma, exps, &inst.window, s.probes, &mut rng)?;
        if !t.dual_constant.is_finite() {
            return Ok(None);
        }
        let probe = ext::ratio_or_zero(t.max_probe, t.dual_constant);
        Ok(Some((ext::rel_diff(t.achieved, t.dual_constant), probe)))
    })?;
    let skipped = rows.iter().filter(|r| r.is_none()).count();
    let (_, duality) = arg_max(rows.iter().enumerate().filter_map(|(i, r)| r.map(|v| (i, v.0))));
    let (_, probe) = arg_max(rows.iter().enumerate().filter_map(|(i, r)| r.map(|v| (i, v.1))));
    let name = |n: &str| format!("trace_q1.{n}.p_prime={}", s.p_prime);
    Ok(vec![
        s.generator.describe(
            CheckReport::banded(name("duality_rel_diff"), duality, 0.0, s.duality_tolerance)
                .seed(seed)
                .quantity("infinite_energy", skipped as f64),
        ),
        s.generator.describe(
            CheckReport::banded(name("max_probe_over_dual"), probe, 0.0, 1.0 + s.probe_slack)
                .seed(seed)
                .quantity("probes", s.probes as f64),
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DlboSuite {
    pub alpha: f64,
    pub gamma: f64,
    pub depth: i32,
    pub tolerance: f64,
}

impl Default for DlboSuite {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 0.9,
            depth: 8,
            tolerance: 1e-9,
        }
    }
}

/// DLBO constants of a Riesz kernel against Lebesgue measure, a cascade
/// measure, and a point mass (which must fail reverse doubling).
pub fn dlbo_suite(s: &DlboSuite) -> Result<Vec<CheckReport>> {
    let n = 1usize;
    if !(s.gamma > n as f64 - s.alpha) {
        return Err(Error::Config(format!(
            "the cascade bound needs gamma > n - alpha, got gamma = {}",
            s.gamma
        )));
    }
    let w = LatticeWindow::unit(n, 0, s.depth)?;
    let k = DyadicKernelMap::radial(RadialKernel::riesz(s.alpha, n)?);
    let desc = |c: CheckReport| {
        c.instance("alpha", s.alpha)
            .instance("depth", s.depth)
            .instance("dim", n)
    };

    let leb = AtomicMeasure::lebesgue_grid(&[0.0], &[1.0], s.depth)?;
    let a = dlbo_constant(&k, &leb, &w)?;
    let lebesgue = desc(CheckReport::banded("dlbo.lebesgue", a, 1.0 - ROUNDING, 1.0 + ROUNDING));

    let cascade = AtomicMeasure::bernoulli_cascade(n, s.gamma, s.depth as u32)?;
    let a = dlbo_constant(&k, &cascade, &w)?;
    let bound = 1.0 / (1.0 - 2f64.powf(n as f64 - s.alpha - s.gamma));
    let rd = cascade.reverse_doubling_check(&w, s.gamma)?;
    let cascade = desc(
        CheckReport::banded("dlbo.cascade", a, 1.0, bound + s.tolerance)
            .instance("gamma", s.gamma)
            .quantity("bound", bound)
            .quantity("reverse_doubling_constant", rd.best_constant),
    )
    .require(rd.holds);

    let point = AtomicMeasure::point_mass(&[0.5 + pow2(-s.depth - 1)], 1.0)?;
    let rd = point.reverse_doubling_check(&w, s.gamma)?;
    let point = desc(
        CheckReport::banded("dlbo.point_mass_reverse_doubling_holds", rd.holds as u8 as f64, 0.0, 0.0)
            .instance("gamma", s.gamma)
            .quantity("best_constant", rd.best_constant)
            .quantity("half_depth_constant", rd.half_depth_constant)
            .quantity("dlbo", dlbo_constant(&k, &point, &w)?),
    );
    Ok(vec![lebesgue, cascade, point])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterexampleSuite {
    pub beta: f64,
    /// Defaults to `e^β`.
    pub c: Option<f64>,
    pub series_from: u64,
    pub series_to: u64,
    pub min_wolff_bar_growth: f64,
    pub max_energy_tail: f64,
    pub depths: Vec<i32>,
    pub max_energy_change: f64,
}

impl Default for CounterexampleSuite {
    fn default() -> Self {
        Self {
            beta: 1.5,
            c: None,
            series_from: 1_000,
            series_to: 1_000_000,
            min_wolff_bar_growth: 9.0,
            max_energy_tail: 0.2,
            depths: vec![6, 10, 14],
            max_energy_change: 0.05,
        }
    }
}

impl CounterexampleSuite {
    pub fn constant(&self) -> f64 {
        self.c.unwrap_or_else(|| self.beta.exp())
    }
}

/// Scalar series of the log-kernel example and the full-field depth sweep.
pub fn counterexample_suite(s: &CounterexampleSuite, exec: Execution) -> Result<Vec<CheckReport>> {
    if s.depths.len() < 2 || s.depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("counterexample depths must be increasing, at least two".into()));
    }
    let c = s.constant();
    let desc = |r: CheckReport| r.instance("beta", s.beta).instance("C", c).instance("dim", 1);
    let sums = counterexample_partial_sums(s.beta, c, 1, &[s.series_from, s.series_to])?;
    let (lo, hi) = (sums[0], sums[1]);
    let span = format!("L={}..{}", s.series_from, s.series_to);
    let mut out = vec![
        desc(
            CheckReport::banded("counterexample.series_wolff_bar_growth", hi.2 - lo.2, s.min_wolff_bar_growth, f64::INFINITY)
                .instance("terms", &span)
                .quantity("S_wolff_bar_from", lo.2)
                .quantity("S_wolff_bar_to", hi.2),
        ),
        desc(
            CheckReport::banded("counterexample.series_energy_tail", hi.1 - lo.1, 0.0, s.max_energy_tail)
                .instance("terms", &span)
                .quantity("S_E_from", lo.1)
                .quantity("S_E_to", hi.1),
        ),
    ];

    let fields = exec
        .map(&s.depths, |&d| check_counterexample_fields(s.beta, c, d))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let depths = format!("{:?}", s.depths);
    let n = fields.len();
    let change = (fields[n - 1].energy - fields[n - 2].energy).abs() / fields[n - 2].energy.abs().max(f64::MIN_POSITIVE);
    let mut energy = CheckReport::banded("counterexample.field_energy_last_change", change, 0.0, s.max_energy_change)
        .instance("depths", &depths);
    let mut growth_min = f64::INFINITY;
    let mut growth = CheckReport::banded("counterexample.field_wolff_bar_min_increment", 0.0, f64::MIN_POSITIVE, f64::INFINITY)
        .instance("depths", &depths);
    for (i, (f, &d)) in fields.iter().zip(&s.depths).enumerate() {
        energy = energy
            .quantity(format!("energy.depth={d}"), f.energy)
            .quantity(format!("wolff_integral.depth={d}"), f.wolff_integral);
        growth = growth.quantity(format!("min_interior_wolff_bar.depth={d}"), f.min_interior_wolff_bar);
        if i > 0 {
            let inc = f.min_interior_wolff_bar - fields[i - 1].min_interior_wolff_bar;
            growth_min = growth_min.min(inc);
            let prev = s.depths[i - 1] as u64;
            let series = counterexample_partial_sums(s.beta, c, 1, &[prev, d as u64])?;
            growth = growth.quantity(format!("series_increment.depth={d}"), series[1].2 - series[0].2);
        }
    }
    growth.value = growth_min.into();
    growth.pass = growth_min > 0.0;
    let violations = fields.iter().filter(|f| !f.dominance_holds).count();
    out.push(desc(energy));
    out.push(desc(growth));
    out.push(desc(CheckReport::count("counterexample.field_dominance_violations", violations).instance("depths", &depths)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedFormSuite {
    pub level: i32,
    pub alpha: f64,
    pub energy_alpha: f64,
    pub bar_k_tolerance: f64,
    pub wolff_tolerance: f64,
    pub maximal_tolerance: f64,
    pub energy_tolerance: f64,
}

impl Default for ClosedFormSuite {
    fn default() -> Self {
        Self {
            level: 12,
            alpha: 0.5,
            energy_alpha: 0.75,
            bar_k_tolerance: 0.02,
            wolff_tolerance: 0.05,
            maximal_tolerance: 0.02,
            energy_tolerance: 0.02,
        }
    }
}

/// Continuous quantities for `k(r) = r^{-1/2}` on `(0, 1]`, σ a Lebesgue
/// grid on `[-2, 2)` and μ a unit atom at the origin, against
/// `k̄(r) = 2 r^{-1/2}`, `W(x) = 4 ln(1/|x|)`, `M_k(x) = 2 |x|^{-1/2}`, and
/// `E = 4` for `α = 3/4` on `[-1, 1)`.
pub fn closed_form_suite(s: &ClosedFormSuite, exec: Execution) -> Result<Vec<CheckReport>> {
    if (s.alpha - 0.5).abs() > 0.0 || (s.energy_alpha - 0.75).abs() > 0.0 {
        return Err(Error::Config("closed forms are tabulated for alpha = 1/2 and 3/4 only".into()));
    }
    let kernel = RadialKernel::riesz(s.alpha, 1)?.with_cutoff(1.0)?;
    let sigma = AtomicMeasure::lebesgue_grid(&[-2.0], &[2.0], s.level)?;
    let mu = AtomicMeasure::point_mass(&[0.0], 1.0)?;
    let exps = Exponents::new(2.0)?;
    let desc = |c: CheckReport| {
        c.instance("grid_level", s.level)
            .instance("sigma", "lebesgue grid on [-2,2)")
            .instance("kernel", format!("riesz(alpha={}), cutoff 1", s.alpha))
    };
    let worst = |rows: &[(f64, f64, f64)], mut c: CheckReport, tol: f64, key: &str| {
        let mut err: f64 = 0.0;
        for &(t, v, exact) in rows {
            let e = ext::rel_diff(v, exact);
            err = err.max(e);
            c = c.quantity(format!("rel_err.{key}={t}"), e);
        }
        c.value = err.into();
        c.upper_band = tol.into();
        c.pass = err <= tol;
        c
    };

    let radii: Vec<f64> = (0..=6).map(|l| pow2(-l)).collect();
    let bars = exec
        .map(&radii, |&r| bar_k(&kernel, &sigma, &[0.0], r).map(|v| (r, v, 2.0 / r.sqrt())))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let bar = worst(&bars, desc(CheckReport::banded("closed_form.bar_k", 0.0, 0.0, 0.0)).instance("x", 0), s.bar_k_tolerance, "r");

    let xs: Vec<f64> = (1..=5).flat_map(|l| [-pow2(-l), pow2(-l)]).collect();
    let cw = crate::potentials::ContinuousWolff::new(&kernel, &sigma, &mu, exps)?;
    let ws = exec
        .map(&xs, |&x| cw.eval(&[x], f64::INFINITY).map(|v| (x, v, 4.0 * (1.0 / x.abs()).ln())))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let wolff = worst(&ws, desc(CheckReport::banded("closed_form.wolff", 0.0, 0.0, 0.0)).instance("mu", "unit atom at 0"), s.wolff_tolerance, "x");

    let ms = exec
        .map(&xs, |&x| m_k_maximal(&kernel, &sigma, &mu, &[x]).map(|v| (x, v, 2.0 / x.abs().sqrt())))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let maximal = worst(&ms, desc(CheckReport::banded("closed_form.m_k", 0.0, 0.0, 0.0)).instance("mu", "unit atom at 0"), s.maximal_tolerance, "x");

    let ek = RadialKernel::riesz(s.energy_alpha, 1)?.with_cutoff(2.0)?;
    let es = AtomicMeasure::lebesgue_grid(&[-1.0], &[1.0], s.level)?;
    let e = energy_continuous(&ek, &mu, &es, exps)?;
    let energy = worst(
        &[(s.energy_alpha, e, 4.0)],
        CheckReport::banded("closed_form.energy", 0.0, 0.0, 0.0)
            .instance("grid_level", s.level)
            .instance("sigma", "lebesgue grid on [-1,1)")
            .instance("kernel", format!("riesz(alpha={})", s.energy_alpha))
            .instance("mu", "unit atom at 0")
            .quantity("energy", e),
        s.energy_tolerance,
        "alpha",
    );
    Ok(vec![bar, wolff, maximal, energy])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftedSuite {
    pub j: i32,
    pub alpha: f64,
    pub shift_samples: usize,
    pub seeds: usize,
    pub x_samples: usize,
    pub random_atoms: usize,
    pub bound: f64,
    pub max_seed_spread: f64,
}

impl Default for ShiftedSuite {
    fn default() -> Self {
        Self {
            j: 0,
            alpha: 0.5,
            shift_samples: 10_000,
            seeds: 3,
            x_samples: 16,
            random_atoms: 10,
            bound: DEFAULT_BAND.1,
            max_seed_spread: 0.2,
        }
    }
}

/// The truncated operator against the average of shifted dyadic operators,
/// for a single atom and for random atoms in one dimension.
pub fn shifted_suite(s: &ShiftedSuite, seed: u64, exec: Execution) -> Result<Vec<CheckReport>> {
    if s.seeds < 2 {
        return Err(Error::Config("the seed spread needs at least two seeds".into()));
    }
    let kernel = RadialKernel::riesz(s.alpha, 1)?;
    let radius = pow2(s.j);
    let grid = |lo: f64, hi: f64| -> Vec<Vec<f64>> {
        (0..s.x_samples)
            .map(|k| vec![lo + (hi - lo) * (k as f64 + 0.5) / s.x_samples as f64])
            .collect()
    };
    let single = AtomicMeasure::point_mass(&[0.0], 1.0)?;
    let mut rng = rng_for(seed, ATOM_STREAM);
    let mut atoms = AtomicMeasure::new(1);
    for _ in 0..s.random_atoms {
        let w = 2f64.powf(rng.gen_range(-2.0..2.0));
        atoms.push(&[rng.gen::<f64>()], w)?;
    }
    let cases = [
        ("single_atom", single, grid(-0.9 * radius, 0.9 * radius)),
        ("random_atoms", atoms, grid(-0.25 * radius, 1.0 + 0.25 * radius)),
    ];
    let mut out = Vec::new();
    for (label, mu, xs) in &cases {
        let mut maxima = Vec::with_capacity(s.seeds);
        let mut violations = 0;
        let mut min_margin = f64::INFINITY;
        for k in 0..s.seeds {
            let r = shifted_average_check(&kernel, mu, s.j, s.shift_samples, xs, seed.wrapping_add(k as u64), exec)?;
            for p in &r.points {
                if p.lhs > 0.0 && !(p.ratio <= s.bound) {
                    violations += 1;
                }
                if p.lhs > 0.0 {
                    min_margin = min_margin.min(p.estimate / (p.std_error * 3.0).max(f64::MIN_POSITIVE));
                }
            }
            maxima.push(r.max_ratio);
        }
        let hi = maxima.iter().copied().fold(0.0, f64::max);
        let lo = maxima.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = if lo > 0.0 && hi.is_finite() { (hi - lo) / lo } else { f64::INFINITY };
        let desc = |c: CheckReport| {
            c.seed(seed)
                .instance("mu", label)
                .instance("mu_atoms", mu.len())
                .instance("j", s.j)
                .instance("kernel", format!("riesz(alpha={})", s.alpha))
                .instance("shift_samples", s.shift_samples)
                .instance("seeds", s.seeds)
                .instance("x_samples", xs.len())
        };
        let mut m = desc(CheckReport::banded(format!("shifted_average.{label}.max_ratio"), hi, 0.0, s.bound));
        for (k, v) in maxima.iter().enumerate() {
            m = m.quantity(format!("max_ratio.seed={}", seed.wrapping_add(k as u64)), *v);
        }
        out.push(m);
        out.push(desc(CheckReport::banded(format!("shifted_average.{label}.seed_spread"), spread, 0.0, s.max_seed_spread)));
        out.push(desc(
            CheckReport::count(format!("shifted_average.{label}.violations"), violations)
                .quantity("min_estimate_over_3se", min_margin),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationSuite {
    pub bar_root_depths: Vec<i32>,
    pub fubini_depths: Vec<i32>,
    pub counterexample_depths: Vec<i32>,
    pub tolerance: f64,
}

impl Default for TruncationSuite {
    fn default() -> Self {
        Self {
            bar_root_depths: vec![2, 4, 6, 8, 10],
            fubini_depths: vec![2, 4, 6, 8],
            counterexample_depths: vec![6, 8, 10, 12],
            tolerance: 1e-3,
        }
    }
}

/// Depth sweeps: the Riesz root bar value against its truncated series, the
/// Fubini error on a fixed point set, and the non-converging `W̄` of the
/// log-kernel example.
pub fn truncation_suite(s: &TruncationSuite, seed: u64) -> Result<Vec<CheckReport>> {
    let k = DyadicKernelMap::radial(RadialKernel::riesz(0.5, 1)?);
    let table = truncation_sweep(&s.bar_root_depths, s.tolerance, |d| {
        let w = LatticeWindow::unit(1, 0, d)?;
        let sigma = AtomicMeasure::lebesgue_grid(&[0.0], &[1.0], d)?;
        BarField::build(&k, &sigma, &w)?.value(0, &[0.0])
    })?;
    let mut worst: f64 = 0.0;
    let mut bar = CheckReport::banded("truncation.bar_root", 0.0, 0.0, ROUNDING)
        .instance("kernel", "riesz(alpha=0.5)")
        .instance("sigma", "lebesgue grid on [0,1)");
    for row in &table.rows {
        let series = (1.0 - 2f64.powf(-(row.depth as f64 + 1.0) / 2.0)) / (1.0 - 2f64.powf(-0.5));
        worst = worst.max(ext::rel_diff(row.value, series));
        bar = bar.quantity(format!("value.depth={}", row.depth), row.value);
        if let Some(c) = row.rel_change {
            bar = bar.quantity(format!("rel_change.depth={}", row.depth), c);
        }
    }
    bar.value = worst.into();
    bar.pass = worst <= ROUNDING;

    let base = RandomInstance::generate(
        seed,
        0,
        &InstanceParams {
            max_dim: 1,
            max_depth: 1,
            table_fraction: 0.0,
            ..InstanceParams::default()
        },
    )?;
    let errors = truncation_sweep(&s.fubini_depths, f64::INFINITY, |d| {
        let w = LatticeWindow::unit(1, 0, d)?;
        let e = Exponents::new(2.0)?;
        Ok(check_fubini(&base.kernel, &base.mu, &base.sigma, e, &w)?.unwrap_or(0.0))
    })?;
    let mut fub = CheckReport::banded("truncation.fubini", 0.0, 0.0, 1e-9)
        .seed(seed)
        .instances(base.descriptor());
    let mut fmax: f64 = 0.0;
    for row in &errors.rows {
        fmax = fmax.max(row.value);
        fub = fub.quantity(format!("rel_err.depth={}", row.depth), row.value);
    }
    fub.value = fmax.into();
    fub.pass = fmax <= 1e-9;

    let beta = 1.5;
    let wbar = truncation_sweep(&s.counterexample_depths, s.tolerance, |d| {
        Ok(check_counterexample_fields(beta, beta.exp(), d)?.min_interior_wolff_bar)
    })?;
    let last = wbar.rows.last().and_then(|r| r.rel_change).unwrap_or(0.0);
    let mut div = CheckReport::banded("truncation.counterexample_wolff_bar_diverges", last, s.tolerance, f64::INFINITY)
        .instance("beta", beta)
        .note("expected divergence: passes when the last relative change stays above the tolerance");
    for row in &wbar.rows {
        div = div.quantity(format!("value.depth={}", row.depth), row.value);
    }
    div = div.require(!wbar.converged);
    Ok(vec![bar, fub, div])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Generator {
        Generator {
            instances: 6,
            max_depth: 4,
            max_atoms: 20,
            ..Generator::default()
        }
    }

    #[test]
    fn random_suites_pass_and_are_thread_independent() {
        let f = FubiniSuite {
            generator: small(),
            ..FubiniSuite::default()
        };
        let a = fubini_suite(&f, 5, Execution::Sequential).unwrap();
        let b = fubini_suite(&f, 5, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|c| c.pass));
        assert_eq!(a.len(), 3);

        let s = SummationSuite {
            generator: small(),
            ..SummationSuite::default()
        };
        assert!(summation_suite(&s, 5, Execution::Parallel).unwrap().iter().all(|c| c.pass));
        let s = AChainSuite {
            generator: small(),
            ..AChainSuite::default()
        };
        assert!(a_chain_suite(&s, 5, Execution::Parallel).unwrap().iter().all(|c| c.pass));
        let s = TheoremASuite {
            generator: small(),
            ..TheoremASuite::default()
        };
        let r = theorem_a_suite(&s, 5, Execution::Parallel).unwrap();
        assert!(r.iter().all(|c| c.pass), "{r:?}");
        let s = TraceQ1Suite {
            generator: small(),
            probes: 20,
            ..TraceQ1Suite::default()
        };
        assert!(trace_q1_suite(&s, 5, Execution::Parallel).unwrap().iter().all(|c| c.pass));
        let s = BarOracleSuite {
            generator: small(),
            queries: 16,
            ..BarOracleSuite::default()
        };
        assert!(bar_oracle_suite(&s, 5, Execution::Parallel).unwrap().iter().all(|c| c.pass));
    }

    #[test]
    fn dlbo_suite_passes() {
        let r = dlbo_suite(&DlboSuite::default()).unwrap();
        assert!(r.iter().all(|c| c.pass), "{r:?}");
        assert!(dlbo_suite(&DlboSuite { gamma: 0.3, ..DlboSuite::default() }).is_err());
    }

    #[test]
    fn counterexample_small_sweep() {
        let s = CounterexampleSuite {
            series_to: 10_000,
            min_wolff_bar_growth: 0.0,
            depths: vec![4, 6, 8],
            max_energy_change: 1.0,
            ..CounterexampleSuite::default()
        };
        let r = counterexample_suite(&s, Execution::Parallel).unwrap();
        assert_eq!(r.len(), 5);
        assert!(r.iter().all(|c| c.pass), "{r:?}");
    }

    #[test]
    fn configs_reject_unknown_fields() {
        assert!(serde_json::from_str::<FubiniSuite>(r#"{"tolerance": 1e-6}"#).is_ok());
        assert!(serde_json::from_str::<FubiniSuite>(r#"{"tolerence": 1e-6}"#).is_err());
    }
}
