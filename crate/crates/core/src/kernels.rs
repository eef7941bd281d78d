//! Radial kernels, the dyadic kernels they induce, and the averaged
//! ("bar") kernels built from them against a measure σ.
//!
//! The dyadic bar kernel `K̄(Q)(x) = σ(Q)^-1 Σ_{Q' ⊆ Q} K(Q') σ(Q') χ_{Q'}(x)`
//! is a sum along the ancestor chain of `x`, so [`BarField`] stores the
//! per-cube weights `D(Q) = K(Q) σ(Q)` together with their root prefix sums
//! and answers queries with an `O(depth)` walk. [`NaiveBarField`] evaluates
//! the double sum literally and is kept as the test oracle.
//!
//! The continuous bar kernel `k̄(r)(x) = σ(B(x,r))^-1 ∫_0^r k(s) σ(B(x,s)) ds/s`
//! is evaluated exactly for atomic σ: `s ↦ σ(B(x,s))` is a step function, so
//! the integral is a finite sum of kernel log-primitives ([`RadialProfile`]).

use std::collections::BTreeMap;
use std::io::Read;

use crate::error::{Error, Result};
use crate::ext;
use crate::lattice::{DyadicCube, LatticeWindow};
use crate::measures::{dist, AtomicMeasure, RadialMass};
use crate::quadrature;

/// Relative tolerance of the adaptive quadrature used for kernels without a
/// closed-form log-primitive.
pub const LOG_PRIMITIVE_REL_TOL: f64 = 1e-10;

/// Points per decade of the monotonicity scan run at construction.
const MONOTONE_SAMPLES_PER_DECADE: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `r^(alpha - n)`
    Riesz { alpha: f64, dim: usize },
    /// `1 / (r^n log^beta(c / r))` on `(0, 1]`, zero beyond.
    Log { beta: f64, c: f64, dim: usize },
    Constant(f64),
}

/// A nonincreasing radial profile `k(r)` with optional cutoff (`k = 0` for
/// `r > cutoff`).
#[derive(Debug, Clone, PartialEq)]
pub struct RadialKernel {
    profile: Profile,
    cutoff: Option<f64>,
}

impl RadialKernel {
    pub fn riesz(alpha: f64, dim: usize) -> Result<Self> {
        if dim == 0 || !(alpha > 0.0 && alpha < dim as f64) {
            return Err(Error::InvalidKernel(format!(
                "Riesz exponent must lie in (0, {dim}), got {alpha}"
            )));
        }
        Self::validated(Profile::Riesz { alpha, dim }, None)
    }

    pub fn log_kernel(beta: f64, c: f64, dim: usize) -> Result<Self> {
        if dim == 0 || !(beta > 1.0) {
            return Err(Error::InvalidKernel(format!(
                "log kernel needs beta > 1, got {beta}"
            )));
        }
        let min_c = (beta / dim as f64).exp();
        if !(c >= min_c * (1.0 - 1e-15)) {
            return Err(Error::InvalidKernel(format!(
                "log kernel needs C >= e^(beta/n) = {min_c}, got {c}"
            )));
        }
        Self::validated(Profile::Log { beta, c, dim }, Some(1.0))
    }

    pub fn constant(value: f64) -> Result<Self> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "constant kernel must be finite and nonnegative, got {value}"
            )));
        }
        Self::validated(Profile::Constant(value), None)
    }

    /// Sets `k(r) = 0` for `r > cutoff`. A log kernel keeps its built-in
    /// cutoff at 1 if that is smaller.
    pub fn with_cutoff(mut self, cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0) {
            return Err(Error::InvalidKernel(format!(
                "cutoff must be positive, got {cutoff}"
            )));
        }
        self.cutoff = Some(self.cutoff.map_or(cutoff, |c| c.min(cutoff)));
        Ok(self)
    }

    fn validated(profile: Profile, cutoff: Option<f64>) -> Result<Self> {
        let k = Self { profile, cutoff };
        k.check_monotone()?;
        Ok(k)
    }

    fn check_monotone(&self) -> Result<()> {
        let decades = 12;
        let n = decades * MONOTONE_SAMPLES_PER_DECADE;
        let mut prev = self.eval(1e-8);
        for i in 1..=n {
            let r = 10f64.powf(-8.0 + i as f64 / MONOTONE_SAMPLES_PER_DECADE as f64);
            let v = self.eval(r);
            if v.is_nan() || v < 0.0 || v > prev * (1.0 + 1e-12) {
                return Err(Error::InvalidKernel(format!(
                    "profile is not nonincreasing near r = {r:e}"
                )));
            }
            prev = v;
        }
        Ok(())
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn cutoff(&self) -> Option<f64> {
        self.cutoff
    }

    /// `k(r)` for `r > 0`.
    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return self.value_at_zero();
        }
        if self.cutoff.is_some_and(|c| r > c) {
            return 0.0;
        }
        match self.profile {
            Profile::Riesz { alpha, dim } => r.powf(alpha - dim as f64),
            Profile::Log { beta, c, dim } => 1.0 / (r.powi(dim as i32) * (c / r).ln().powf(beta)),
            Profile::Constant(v) => v,
        }
    }

    /// `lim_{r→0+} k(r)`.
    pub fn value_at_zero(&self) -> f64 {
        match self.profile {
            Profile::Riesz { .. } | Profile::Log { .. } => f64::INFINITY,
            Profile::Constant(v) => v,
        }
    }

    /// Whether `∫_1^∞ k(s) ds/s` is finite.
    pub fn log_integrable_at_infinity(&self) -> bool {
        self.cutoff.is_some()
            || match self.profile {
                Profile::Riesz { .. } | Profile::Log { .. } => true,
                Profile::Constant(v) => v == 0.0,
            }
    }

    /// `∫_a^b k(s) ds/s` for `0 <= a <= b` (`b` may be `+∞`).
    pub fn log_primitive(&self, a: f64, b: f64) -> f64 {
        let b = self.cutoff.map_or(b, |c| b.min(c));
        if !(b > a) {
            return 0.0;
        }
        if a <= 0.0 {
            return if self.value_at_zero() > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
        }
        match self.profile {
            Profile::Riesz { alpha, dim } => {
                let e = alpha - dim as f64;
                if b.is_infinite() {
                    a.powf(e) / -e
                } else {
                    // (b^e - a^e)/e, written to avoid cancellation for b ≈ a
                    a.powf(e) * (e * (b / a).ln()).exp_m1() / e
                }
            }
            Profile::Constant(v) => {
                if b.is_infinite() {
                    if v > 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                } else {
                    v * (b / a).ln()
                }
            }
            Profile::Log { beta, c, dim } => {
                // u = ln(c/s): ∫ c^-n e^{n u} u^-beta du over [ln(c/b), ln(c/a)]
                let n = dim as f64;
                let (u0, u1) = ((c / b).ln(), (c / a).ln());
                let scale = c.powi(-(dim as i32));
                // factor out e^{n u1} so the integrand stays O(1)
                let q = quadrature::integrate(
                    |u| (n * (u - u1)).exp() * u.powf(-beta),
                    u0,
                    u1,
                    LOG_PRIMITIVE_REL_TOL,
                    0.0,
                );
                scale * (n * u1).exp() * q.value
            }
        }
    }
}

pub fn riesz_kernel(alpha: f64, n: usize) -> Result<RadialKernel> {
    RadialKernel::riesz(alpha, n)
}

pub fn log_kernel(beta: f64, c: f64, n: usize) -> Result<RadialKernel> {
    RadialKernel::log_kernel(beta, c, n)
}

/// Explicit per-cube kernel values keyed by `(level, index)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KernelTable {
    dim: usize,
    entries: BTreeMap<(i32, Vec<i64>), f64>,
}

impl KernelTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, level: i32, index: Vec<i64>, value: f64) -> Result<()> {
        if index.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: index.len(),
            });
        }
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "table value must be finite and nonnegative, got {value}"
            )));
        }
        self.entries.insert((level, index), value);
        Ok(())
    }

    pub fn get(&self, level: i32, index: &[i64]) -> f64 {
        self.entries
            .get(&(level, index.to_vec()))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads rows `level, index_1, ..., index_n, value` (header optional).
    pub fn from_csv<R: Read>(reader: R, dim: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut table = Self::new(dim);
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::InvalidKernel(format!("kernel table: {e}")))?;
            if rec.len() != dim + 2 {
                return Err(Error::InvalidKernel(format!(
                    "kernel table row {}: expected {} columns, got {}",
                    line + 1,
                    dim + 2,
                    rec.len()
                )));
            }
            let level = match rec[0].parse::<i32>() {
                Ok(l) => l,
                Err(_) if line == 0 => continue, // header
                Err(e) => {
                    return Err(Error::InvalidKernel(format!(
                        "kernel table row {}: bad level: {e}",
                        line + 1
                    )))
                }
            };
            let index = (1..=dim)
                .map(|i| rec[i].parse::<i64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| {
                    Error::InvalidKernel(format!("kernel table row {}: bad index: {e}", line + 1))
                })?;
            let value = rec[dim + 1].parse::<f64>().map_err(|e| {
                Error::InvalidKernel(format!("kernel table row {}: bad value: {e}", line + 1))
            })?;
            table.insert(level, index, value)?;
        }
        Ok(table)
    }
}

/// `K: D → R+`, either `K(Q) = k(c · r_Q)` or an explicit table.
#[derive(Debug, Clone, PartialEq)]
pub enum DyadicKernelMap {
    Radial { kernel: RadialKernel, dilation: f64 },
    Table(KernelTable),
}

impl DyadicKernelMap {
    pub fn radial(kernel: RadialKernel) -> Self {
        Self::Radial {
            kernel,
            dilation: 1.0,
        }
    }

    /// `K(Q) = k(c · r_Q)`.
    pub fn dilated(kernel: RadialKernel, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "dilation must be positive, got {c}"
            )));
        }
        Ok(Self::Radial {
            kernel,
            dilation: c,
        })
    }

    pub fn value(&self, cube: &DyadicCube) -> f64 {
        match self {
            Self::Radial { kernel, dilation } => kernel.eval(dilation * cube.side_length()),
            Self::Table(t) => t.get(cube.level, &cube.index),
        }
    }

    /// `K(Q)` for every window cube, by id.
    pub fn values_on(&self, window: &LatticeWindow) -> Result<Vec<f64>> {
        match self {
            Self::Radial { kernel, dilation } => {
                let mut out = Vec::with_capacity(window.len());
                for level in window.coarse_level()..=window.fine_level() {
                    let v = kernel.eval(dilation * crate::lattice::pow2(-level));
                    out.extend(window.level_ids(level).map(|_| v));
                }
                Ok(out)
            }
            Self::Table(t) => {
                if t.dim != window.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: window.dim(),
                        got: t.dim,
                    });
                }
                Ok((0..window.len()).map(|id| self.value(&window.cube(id))).collect())
            }
        }
    }
}

/// Prefix aggregates realizing `K̄(Q)(x)` over a window.
#[derive(Debug, Clone)]
pub struct BarField<'w> {
    window: &'w LatticeWindow,
    weight: Vec<f64>,
    prefix: Vec<f64>,
    sigma_mass: Vec<f64>,
}

impl<'w> BarField<'w> {
    pub fn build(
        kernel: &DyadicKernelMap,
        sigma: &AtomicMeasure,
        window: &'w LatticeWindow,
    ) -> Result<Self> {
        let k = kernel.values_on(window)?;
        let sigma_mass = sigma.cube_masses(window)?;
        Ok(Self::from_parts(window, &k, sigma_mass))
    }

    /// From per-cube kernel values and σ masses (both indexed by cube id).
    pub fn from_parts(window: &'w LatticeWindow, kernel: &[f64], sigma_mass: Vec<f64>) -> Self {
        let weight: Vec<f64> = kernel
            .iter()
            .zip(&sigma_mass)
            .map(|(&k, &s)| ext::mul(k, s))
            .collect();
        let mut prefix = weight.clone();
        // parents precede children in id order
        for id in 0..window.len() {
            if let Some(p) = window.parent(id) {
                prefix[id] += prefix[p];
            }
        }
        Self {
            window,
            weight,
            prefix,
            sigma_mass,
        }
    }

    pub fn window(&self) -> &'w LatticeWindow {
        self.window
    }

    /// `D(Q) = K(Q) σ(Q)`.
    pub fn weight(&self, id: usize) -> f64 {
        self.weight[id]
    }

    /// `P(Q) = Σ_{Q'' ⊇ Q} D(Q'')`.
    pub fn prefix(&self, id: usize) -> f64 {
        self.prefix[id]
    }

    pub fn sigma_mass(&self) -> &[f64] {
        &self.sigma_mass
    }

    /// `K̄(Q)(x)` through the chain-sum identity
    /// `σ(Q) K̄(Q)(x) = P(leaf(x)) − P(parent(Q))`. Loses relative accuracy
    /// when coarse weights dominate; [`BarField::value_at_leaf`] sums the
    /// chain directly instead.
    pub fn value_by_prefix(&self, id: usize, x: &[f64]) -> Result<f64> {
        let Some(leaf) = self.window.leaf_at(x) else {
            return Err(Error::OutOfWindow { point: x.to_vec() });
        };
        if !self.window.ancestors(leaf).any(|a| a == id) || self.sigma_mass[id] == 0.0 {
            return Ok(0.0);
        }
        let above = self.window.parent(id).map_or(0.0, |p| self.prefix[p]);
        Ok((self.prefix[leaf] - above) / self.sigma_mass[id])
    }

    /// `K̄(Q)(x)` for `x` in the window.
    pub fn value(&self, id: usize, x: &[f64]) -> Result<f64> {
        let leaf = self
            .window
            .leaf_at(x)
            .ok_or_else(|| Error::OutOfWindow { point: x.to_vec() })?;
        Ok(self.value_at_leaf(id, leaf))
    }

    /// `K̄(Q)` on the finest cell `leaf` (it is constant there); zero when the
    /// leaf is not inside `Q` or `σ(Q) = 0`.
    pub fn value_at_leaf(&self, id: usize, leaf: usize) -> f64 {
        if self.sigma_mass[id] == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for a in self.window.ancestors(leaf) {
            acc += self.weight[a];
            if a == id {
                return acc / self.sigma_mass[id];
            }
        }
        0.0
    }

    /// `(Q, K̄(Q)(x))` for every `Q` on the chain of `leaf`, finest first.
    pub fn chain_at_leaf(&self, leaf: usize) -> Vec<(usize, f64)> {
        let mut acc = 0.0;
        self.window
            .ancestors(leaf)
            .map(|a| {
                acc += self.weight[a];
                (a, ext::ratio_or_zero(acc, self.sigma_mass[a]))
            })
            .collect()
    }
}

pub fn bar_field<'w>(
    kernel: &DyadicKernelMap,
    sigma: &AtomicMeasure,
    window: &'w LatticeWindow,
) -> Result<BarField<'w>> {
    BarField::build(kernel, sigma, window)
}

/// Literal double sum over all window cubes, with cube masses from direct
/// scans of σ. Test oracle for [`BarField`].
#[derive(Debug, Clone)]
pub struct NaiveBarField<'w> {
    window: &'w LatticeWindow,
    cubes: Vec<DyadicCube>,
    weight: Vec<f64>,
    sigma_mass: Vec<f64>,
}

impl<'w> NaiveBarField<'w> {
    pub fn build(
        kernel: &DyadicKernelMap,
        sigma: &AtomicMeasure,
        window: &'w LatticeWindow,
    ) -> Result<Self> {
        let cubes = window.cubes();
        let mut weight = Vec::with_capacity(cubes.len());
        let mut sigma_mass = Vec::with_capacity(cubes.len());
        for c in &cubes {
            let s = sigma.cube_mass(c)?;
            weight.push(ext::mul(kernel.value(c), s));
            sigma_mass.push(s);
        }
        Ok(Self {
            window,
            cubes,
            weight,
            sigma_mass,
        })
    }

    pub fn value(&self, id: usize, x: &[f64]) -> Result<f64> {
        if !self.window.contains_point(x) {
            return Err(Error::OutOfWindow { point: x.to_vec() });
        }
        let q = &self.cubes[id];
        if self.sigma_mass[id] == 0.0 {
            return Ok(0.0);
        }
        let sum: f64 = self
            .cubes
            .iter()
            .zip(&self.weight)
            .filter(|(c, _)| c.is_within(q) && c.contains(x))
            .map(|(_, w)| w)
            .sum();
        Ok(sum / self.sigma_mass[id])
    }
}

pub fn bar_field_naive<'w>(
    kernel: &DyadicKernelMap,
    sigma: &AtomicMeasure,
    window: &'w LatticeWindow,
) -> Result<NaiveBarField<'w>> {
    NaiveBarField::build(kernel, sigma, window)
}

/// σ as seen from a fixed center together with
/// `J(r) = ∫_0^r k(s) σ(B(x,s)) ds/s` tabulated at the jump radii.
#[derive(Debug, Clone)]
pub struct RadialProfile<'k> {
    kernel: &'k RadialKernel,
    sigma: RadialMass,
    integral: Vec<f64>,
}

impl<'k> RadialProfile<'k> {
    pub fn new(kernel: &'k RadialKernel, sigma: &AtomicMeasure, center: &[f64]) -> Result<Self> {
        Ok(Self::from_mass(kernel, RadialMass::new(sigma, center)?))
    }

    pub fn from_mass(kernel: &'k RadialKernel, sigma: RadialMass) -> Self {
        let (radii, mass) = (sigma.radii(), sigma.masses());
        let mut integral = Vec::with_capacity(radii.len());
        let mut j = 0.0;
        for i in 0..radii.len() {
            if i > 0 {
                j += ext::mul(mass[i - 1], kernel.log_primitive(radii[i - 1], radii[i]));
            }
            integral.push(j);
        }
        Self {
            kernel,
            sigma,
            integral,
        }
    }

    pub fn kernel(&self) -> &'k RadialKernel {
        self.kernel
    }

    /// Jump radii of `s ↦ σ(B(x,s))`, increasing.
    pub fn jumps(&self) -> &[f64] {
        self.sigma.radii()
    }

    pub fn sigma(&self) -> &RadialMass {
        &self.sigma
    }

    /// `σ(B(x, r))`, closed ball.
    pub fn mass(&self, r: f64) -> f64 {
        self.sigma.mass(r)
    }

    /// `σ` of the open ball of radius `r`.
    pub fn mass_open(&self, r: f64) -> f64 {
        self.sigma.mass_open(r)
    }

    pub fn total_mass(&self) -> f64 {
        self.sigma.total()
    }

    /// `∫_0^r k(s) σ(B(x,s)) ds/s` (`r` may be `+∞`).
    pub fn integral(&self, r: f64) -> f64 {
        match self.sigma.last_within(r) {
            None => 0.0,
            Some(j) => {
                let d = self.sigma.radii()[j];
                self.integral[j] + ext::mul(self.sigma.masses()[j], self.kernel.log_primitive(d, r))
            }
        }
    }

    /// `k̄(r)(x)`, zero when `σ(B(x,r)) = 0`.
    pub fn bar(&self, r: f64) -> f64 {
        let m = self.mass(r);
        if m == 0.0 {
            0.0
        } else {
            self.integral(r) / m
        }
    }

    /// `lim_{s→r−} k̄(s)(x)`: the integral up to `r` over the open-ball mass.
    pub fn bar_left(&self, r: f64) -> f64 {
        let m = self.mass_open(r);
        if m == 0.0 {
            0.0
        } else {
            self.integral(r) / m
        }
    }
}

/// `k̄(r)(x)`.
pub fn bar_k(kernel: &RadialKernel, sigma: &AtomicMeasure, x: &[f64], r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive, got {r}"
        )));
    }
    Ok(RadialProfile::new(kernel, sigma, x)?.bar(r))
}

/// Largest oscillation `sup_{x∈Q} K̄(Q)(x) / inf_{x∈Q} K̄(Q)(x)` over window
/// cubes with `σ(Q) > 0`.
///
/// `K̄(Q)(·)` is constant on finest cells, so sup and inf over `Q` are a max
/// and min over the leaves below `Q`; both follow from one bottom-up pass of
/// `max/min_{leaf} Σ_{Q' on the path Q → leaf} D(Q')`.
pub fn dlbo_constant(
    kernel: &DyadicKernelMap,
    sigma: &AtomicMeasure,
    window: &LatticeWindow,
) -> Result<f64> {
    let field = BarField::build(kernel, sigma, window)?;
    dlbo_constant_of(&field)
}

pub fn dlbo_constant_of(field: &BarField<'_>) -> Result<f64> {
    let window = field.window();
    let n = window.len();
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut lo = vec![f64::INFINITY; n];
    for id in window.leaf_ids() {
        hi[id] = 0.0;
        lo[id] = 0.0;
    }
    let mut best: Option<f64> = None;
    for id in (0..n).rev() {
        hi[id] += field.weight(id);
        lo[id] += field.weight(id);
        if field.sigma_mass()[id] > 0.0 {
            let r = if lo[id] > 0.0 {
                hi[id] / lo[id]
            } else if hi[id] > 0.0 {
                f64::INFINITY
            } else {
                1.0
            };
            best = Some(best.map_or(r, |b: f64| b.max(r)));
        }
        if let Some(p) = window.parent(id) {
            hi[p] = if hi[p] == f64::NEG_INFINITY { hi[id] } else { hi[p].max(hi[id]) };
            lo[p] = if lo[p] == f64::INFINITY { lo[id] } else { lo[p].min(lo[id]) };
        }
    }
    best.ok_or_else(|| Error::Degenerate("every window cube has zero σ-mass".into()))
}

/// A ball `B(center, radius)` and the points of it at which `k̄(radius)` is
/// compared (the center is always included).
#[derive(Debug, Clone, PartialEq)]
pub struct LboSample {
    pub center: Vec<f64>,
    pub radius: f64,
    pub points: Vec<Vec<f64>>,
}

/// Empirical `sup_{y∈B} k̄(r)(y) / inf_{y∈B} k̄(r)(y)` over the sampled balls.
/// Points where `σ(B(y,r)) = 0` are skipped.
pub fn lbo_constant(
    kernel: &RadialKernel,
    sigma: &AtomicMeasure,
    samples: &[LboSample],
) -> Result<f64> {
    let mut best: Option<f64> = None;
    for s in samples {
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        let mut count = 0;
        for y in std::iter::once(&s.center).chain(&s.points) {
            if dist(y, &s.center) > s.radius {
                continue;
            }
            let prof = RadialProfile::new(kernel, sigma, y)?;
            if prof.mass(s.radius) == 0.0 {
                continue;
            }
            let v = prof.bar(s.radius);
            hi = hi.max(v);
            lo = lo.min(v);
            count += 1;
        }
        if count == 0 {
            continue;
        }
        let r = if lo > 0.0 {
            hi / lo
        } else if hi > 0.0 {
            f64::INFINITY
        } else {
            1.0
        };
        best = Some(best.map_or(r, |b: f64| b.max(r)));
    }
    best.ok_or_else(|| Error::Degenerate("every sampled ball has zero σ-mass".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn riesz_values() {
        let k = RadialKernel::riesz(0.5, 1).unwrap();
        assert_eq!(k.eval(1.0), 1.0);
        assert_eq!(k.eval(0.25), 2.0);
        let k = k.with_cutoff(1.0).unwrap();
        assert_eq!(k.eval(2.0), 0.0);
        assert_eq!(k.eval(1.0), 1.0);
        assert!(RadialKernel::riesz(1.0, 1).is_err());
        assert!(RadialKernel::riesz(0.0, 2).is_err());
    }

    #[test]
    fn riesz_log_primitive_closed_form() {
        let k = RadialKernel::riesz(0.5, 1).unwrap();
        // ∫_a^b s^{-1/2} ds/s = 2(a^{-1/2} - b^{-1/2})
        let v = k.log_primitive(0.25, 1.0);
        assert!((v - 2.0).abs() < 1e-15);
        assert!((k.log_primitive(1.0, f64::INFINITY) - 2.0).abs() < 1e-15);
        assert_eq!(k.log_primitive(0.0, 1.0), f64::INFINITY);
        assert_eq!(k.log_primitive(1.0, 0.5), 0.0);
    }

    #[test]
    fn log_kernel_values() {
        let c = 1.5f64.exp();
        let k = RadialKernel::log_kernel(1.5, c, 1).unwrap();
        assert!((k.eval(1.0) - 1.5f64.powf(-1.5)).abs() < 1e-12);
        assert!((k.eval(1.0) - 0.54433).abs() < 1e-5);
        assert_eq!(k.eval(2.0), 0.0);
        assert!(RadialKernel::log_kernel(1.5, 2.0, 1).is_err());
        assert!(RadialKernel::log_kernel(1.0, 10.0, 1).is_err());
    }

    #[test]
    fn log_kernel_primitive_matches_plain_quadrature() {
        let k = RadialKernel::log_kernel(1.5, 1.5f64.exp(), 1).unwrap();
        for (a, b) in [(0.1, 0.5), (1e-3, 1.0), (0.5, 3.0), (1e-6, 1e-5)] {
            let direct = quadrature::integrate(
                |t: f64| k.eval(t.exp()),
                f64::ln(a),
                f64::ln(f64::min(b, 1.0)),
                1e-13,
                0.0,
            );
            let v = k.log_primitive(a, b);
            assert!(ext::rel_diff(v, direct.value) < 1e-9, "{a} {b}: {v} vs {}", direct.value);
        }
    }

    #[test]
    fn constant_kernel_primitive() {
        let k = RadialKernel::constant(2.0).unwrap();
        assert!((k.log_primitive(1.0, std::f64::consts::E) - 2.0).abs() < 1e-15);
        assert_eq!(k.log_primitive(1.0, f64::INFINITY), f64::INFINITY);
        assert!(!k.log_integrable_at_infinity());
    }

    proptest! {
        #[test]
        fn log_primitive_additive(a in 0.001f64..1.0, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0, alpha in 0.1f64..1.9) {
            let b = a * (1.0 + 5.0 * t1);
            let c = b * (1.0 + 5.0 * t2);
            for k in [
                RadialKernel::riesz(alpha, 2).unwrap(),
                RadialKernel::log_kernel(1.3, 3.0, 2).unwrap(),
            ] {
                let whole = k.log_primitive(a, c);
                let split = k.log_primitive(a, b) + k.log_primitive(b, c);
                prop_assert!(k.log_primitive(a, b) >= 0.0);
                prop_assert!(ext::rel_diff(whole, split) < 1e-9);
            }
        }
    }

    #[test]
    fn table_csv() {
        let csv = "level,i,value\n0,0,1.5\n1,1,0.25\n";
        let t = KernelTable::from_csv(csv.as_bytes(), 1).unwrap();
        assert_eq!(t.len(), 2);
        let map = DyadicKernelMap::Table(t);
        let w = LatticeWindow::unit(1, 0, 1).unwrap();
        assert_eq!(map.values_on(&w).unwrap(), vec![1.5, 0.0, 0.25]);
        assert!(KernelTable::from_csv("0,0,-1\n".as_bytes(), 1).is_err());
        assert!(KernelTable::from_csv("0,0\n".as_bytes(), 1).is_err());
    }

    fn unit_kernel() -> DyadicKernelMap {
        DyadicKernelMap::radial(RadialKernel::constant(1.0).unwrap())
    }

    #[test]
    fn bar_field_riesz_lebesgue_root() {
        let depth = 10;
        let w = LatticeWindow::unit(1, 0, depth).unwrap();
        let sigma = AtomicMeasure::lebesgue_grid(&[0.0], &[1.0], depth).unwrap();
        let k = DyadicKernelMap::radial(RadialKernel::riesz(0.5, 1).unwrap());
        let f = BarField::build(&k, &sigma, &w).unwrap();
        // oracle: direct summation of the truncated geometric series
        let oracle: f64 = (0..=depth).map(|l| 2f64.powf(-(l as f64) / 2.0)).sum();
        let closed = (1.0 - 2f64.powf(-(depth as f64 + 1.0) / 2.0)) / (1.0 - 2f64.powf(-0.5));
        assert!(ext::rel_diff(oracle, closed) < 1e-14);
        for x in [0.0, 0.3, 0.999] {
            let v = f.value(0, &[x]).unwrap();
            assert!(ext::rel_diff(v, oracle) < 1e-13, "{v} vs {oracle}");
        }
    }

    #[test]
    fn bar_field_single_atom_chain() {
        let w = LatticeWindow::unit(1, 0, 2).unwrap();
        let sigma = AtomicMeasure::point_mass(&[0.1], 1.0).unwrap();
        let f = BarField::build(&unit_kernel(), &sigma, &w).unwrap();
        assert_eq!(f.value(0, &[0.3]).unwrap(), 2.0);
        assert_eq!(f.value_by_prefix(0, &[0.3]).unwrap(), 2.0);
        assert_eq!(f.value(0, &[0.1]).unwrap(), 3.0);
        // σ([0.5,1)) = 0
        let q = w.id_of(&DyadicCube::unshifted(1, vec![1])).unwrap();
        assert_eq!(f.value(q, &[0.7]).unwrap(), 0.0);
        // x outside Q
        assert_eq!(f.value(q, &[0.1]).unwrap(), 0.0);
    }

    #[test]
    fn bar_field_empty_sigma() {
        let w = LatticeWindow::unit(2, 0, 3).unwrap();
        let sigma = AtomicMeasure::new(2);
        let f = BarField::build(&unit_kernel(), &sigma, &w).unwrap();
        let naive = NaiveBarField::build(&unit_kernel(), &sigma, &w).unwrap();
        for id in 0..w.len() {
            assert_eq!(f.value(id, &[0.3, 0.6]).unwrap(), 0.0);
            assert_eq!(naive.value(id, &[0.3, 0.6]).unwrap(), 0.0);
        }
    }

    #[test]
    fn chain_sum_identity() {
        let w = LatticeWindow::unit(2, 0, 4).unwrap();
        let sigma = AtomicMeasure::from_atoms(
            2,
            [([0.1, 0.2], 1.0), ([0.15, 0.22], 3.0), ([0.8, 0.9], 0.5)],
        )
        .unwrap();
        let k = DyadicKernelMap::radial(RadialKernel::riesz(1.2, 2).unwrap());
        let f = BarField::build(&k, &sigma, &w).unwrap();
        let x = [0.12, 0.21];
        for (id, v) in f.chain_at_leaf(w.leaf_at(&x).unwrap()) {
            let p = f.value_by_prefix(id, &x).unwrap();
            assert!(ext::rel_diff(v, p) < 1e-12);
        }
    }

    #[test]
    fn radial_profile_exact_small_case() {
        // σ = {0.5: 1, 1.0: 2} seen from 0; Riesz α = 1/2, n = 1.
        let k = RadialKernel::riesz(0.5, 1).unwrap();
        let sigma = AtomicMeasure::from_atoms(1, [([0.5], 1.0), ([-1.0], 2.0)]).unwrap();
        let p = RadialProfile::new(&k, &sigma, &[0.0]).unwrap();
        assert_eq!(p.mass(0.4), 0.0);
        assert_eq!(p.mass(0.5), 1.0);
        assert_eq!(p.mass_open(1.0), 1.0);
        assert_eq!(p.mass(1.0), 3.0);
        // ∫_0^2 = 1·∫_{0.5}^{2} + 2·∫_{1}^{2} with ∫_a^b s^{-3/2} = 2(a^{-1/2} - b^{-1/2})
        let lp = |a: f64, b: f64| 2.0 * (a.powf(-0.5) - b.powf(-0.5));
        let expected = (lp(0.5, 2.0) + 2.0 * lp(1.0, 2.0)) / 3.0;
        assert!(ext::rel_diff(p.bar(2.0), expected) < 1e-14);
        assert_eq!(bar_k(&k, &sigma, &[0.0], 0.25).unwrap(), 0.0);
        assert!(bar_k(&k, &sigma, &[0.0], 0.0).is_err());
        assert_eq!(bar_k(&k, &sigma, &[0.5], 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn bar_k_lebesgue_limit() {
        let k = RadialKernel::riesz(0.5, 1).unwrap();
        let sigma = AtomicMeasure::lebesgue_grid(&[-2.0], &[2.0], 12).unwrap();
        let h = 2f64.powi(-12);
        for r in [1.0 / 64.0, 0.1, 0.5, 1.0] {
            let v = bar_k(&k, &sigma, &[0.0], r).unwrap();
            let exact = 2.0 / r.sqrt();
            // the grid error near the center is of order sqrt(h / r)
            assert!(v < exact, "r={r}");
            assert!(ext::rel_diff(v, exact) < (h / r).sqrt(), "r={r}: {v} vs {exact}");
        }
    }

    #[test]
    fn dlbo_examples() {
        let depth = 8;
        let w = LatticeWindow::unit(1, 0, depth).unwrap();
        let k = DyadicKernelMap::radial(RadialKernel::riesz(0.5, 1).unwrap());
        let leb = AtomicMeasure::lebesgue_grid(&[0.0], &[1.0], depth).unwrap();
        let a = dlbo_constant(&k, &leb, &w).unwrap();
        assert!((a - 1.0).abs() < 1e-12, "{a}");

        let gamma = 0.9;
        let cascade = AtomicMeasure::bernoulli_cascade(1, gamma, depth as u32).unwrap();
        let a = dlbo_constant(&k, &cascade, &w).unwrap();
        let bound = 1.0 / (1.0 - 2f64.powf(1.0 - 0.5 - gamma));
        assert!(a <= bound + 1e-9, "{a} > {bound}");
        assert!(a > 1.0);

        // one atom next to a uniform block: the chain through the atom
        // accumulates, the others do not
        let mixed = AtomicMeasure::point_mass(&[0.1], 1.0)
            .unwrap()
            .plus(&AtomicMeasure::lebesgue_grid(&[0.5], &[1.0], 2).unwrap().scaled(10.0))
            .unwrap();
        let a = dlbo_constant(&unit_kernel(), &mixed, &w).unwrap();
        assert!(a > 1.0, "{a}");
        assert!(dlbo_constant(&k, &AtomicMeasure::new(1), &w).is_err());
    }

    #[test]
    fn dlbo_matches_brute_force() {
        let w = LatticeWindow::unit(1, 0, 4).unwrap();
        let sigma = AtomicMeasure::from_atoms(1, [([0.1], 1.0), ([0.12], 5.0), ([0.7], 0.3)]).unwrap();
        let k = DyadicKernelMap::radial(RadialKernel::riesz(0.3, 1).unwrap());
        let f = BarField::build(&k, &sigma, &w).unwrap();
        let mut brute: f64 = 0.0;
        for q in 0..w.len() {
            if f.sigma_mass()[q] == 0.0 {
                continue;
            }
            let inside: Vec<f64> = w
                .leaf_ids()
                .filter(|&l| w.ancestors(l).any(|a| a == q))
                .map(|l| f.value_at_leaf(q, l))
                .collect();
            let hi = inside.iter().cloned().fold(f64::MIN, f64::max);
            let lo = inside.iter().cloned().fold(f64::MAX, f64::min);
            brute = brute.max(hi / lo);
        }
        let a = dlbo_constant_of(&f).unwrap();
        assert!(ext::rel_diff(a, brute) < 1e-12, "{a} vs {brute}");
    }

    #[test]
    fn lbo_examples() {
        let k = RadialKernel::riesz(0.5, 1).unwrap();
        let leb = AtomicMeasure::lebesgue_grid(&[-4.0], &[4.0], 10).unwrap();
        let samples: Vec<LboSample> = [0.0, 0.3, -1.1]
            .iter()
            .map(|&c| LboSample {
                center: vec![c],
                radius: 0.5,
                points: vec![vec![c - 0.4], vec![c + 0.25]],
            })
            .collect();
        let a = lbo_constant(&k, &leb, &samples).unwrap();
        assert!(a < 1.05, "{a}");

        let point = AtomicMeasure::point_mass(&[0.0], 1.0).unwrap();
        let far = [LboSample {
            center: vec![5.0],
            radius: 0.1,
            points: vec![],
        }];
        assert!(lbo_constant(&k, &point, &far).is_err());
    }
}
