//! Dyadic and continuous potentials, energies and maximal functions.
//!
//! Every dyadic quantity reduces to per-cube aggregates over a window:
//! `σ(Q)`, `μ(Q)`, `D(Q) = K(Q) σ(Q)` and
//! `G(Q) = Σ_{Q' ⊆ Q} K(Q') σ(Q') μ(Q')`, so that
//! `∫_Q K̄(Q) dμ = G(Q) / σ(Q)`. Point evaluations are then sums or maxima
//! along the ancestor chain of the query point.

use crate::error::{Error, Result};
use crate::ext;
use crate::kernels::{BarField, DyadicKernelMap, Profile, RadialKernel, RadialProfile};
use crate::lattice::LatticeWindow;
use crate::measures::{accumulate_up, dist, AtomicMeasure, RadialMass};
use crate::quadrature;

/// Relative tolerance for the radial integrals of the continuous potentials.
pub const CONTINUOUS_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    p: f64,
    p_prime: f64,
    q: Option<f64>,
}

impl Exponents {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidExponents(format!("p must exceed 1, got {p}")));
        }
        Ok(Self {
            p,
            p_prime: p / (p - 1.0),
            q: None,
        })
    }

    pub fn with_q(p: f64, q: f64) -> Result<Self> {
        let mut e = Self::new(p)?;
        if !(q >= 1.0 && q < p) {
            return Err(Error::InvalidExponents(format!(
                "q must satisfy 1 <= q < p = {p}, got {q}"
            )));
        }
        e.q = Some(q);
        Ok(e)
    }

    /// From the dual exponent `p' = p / (p - 1)`.
    pub fn from_p_prime(p_prime: f64) -> Result<Self> {
        if !(p_prime > 1.0 && p_prime.is_finite()) {
            return Err(Error::InvalidExponents(format!(
                "p' must exceed 1, got {p_prime}"
            )));
        }
        let mut e = Self::new(p_prime / (p_prime - 1.0))?;
        e.p_prime = p_prime;
        Ok(e)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn p_prime(&self) -> f64 {
        self.p_prime
    }

    pub fn q(&self) -> Option<f64> {
        self.q
    }

    /// `q (p - 1) / (p - q)`.
    pub fn trace_exponent(&self) -> Option<f64> {
        self.q.map(|q| q * (self.p - 1.0) / (self.p - q))
    }
}

/// Sampled potential values at a list of points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PotentialField {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// Each cube's value plus those of all its ancestors.
fn prefix_down(window: &LatticeWindow, per_cube: &[f64]) -> Vec<f64> {
    let mut out = per_cube.to_vec();
    for id in 0..window.len() {
        if let Some(p) = window.parent(id) {
            out[id] += out[p];
        }
    }
    out
}

fn leaf_of(window: &LatticeWindow, x: &[f64]) -> Result<usize> {
    if x.len() != window.dim() {
        return Err(Error::DimensionMismatch {
            expected: window.dim(),
            got: x.len(),
        });
    }
    window
        .leaf_at(x)
        .ok_or_else(|| Error::OutOfWindow { point: x.to_vec() })
}

/// Per-cube aggregates for one `(K, σ, μ, p')` on a window.
///
/// `K` enters twice: through the bar kernel (`G`, the inner integrals, `T`
/// and `M`) and as the outer factor `K(Q) σ(Q)` of the Wolff sum. The two
/// coincide unless built with [`DyadicPotentials::with_outer_kernel`].
#[derive(Debug, Clone)]
pub struct DyadicPotentials<'w> {
    window: &'w LatticeWindow,
    exps: Exponents,
    kernel: Vec<f64>,
    sigma_mass: Vec<f64>,
    mu_mass: Vec<f64>,
    weight: Vec<f64>,
    outer: Vec<f64>,
    inner: Vec<f64>,
    t_prefix: Vec<f64>,
    w_prefix: Vec<f64>,
    m_prefix: Vec<f64>,
}

impl<'w> DyadicPotentials<'w> {
    pub fn build(
        kernel: &DyadicKernelMap,
        sigma: &AtomicMeasure,
        mu: &AtomicMeasure,
        exps: Exponents,
        window: &'w LatticeWindow,
    ) -> Result<Self> {
        let k = kernel.values_on(window)?;
        Self::from_parts(window, exps, k.clone(), k, sigma.cube_masses(window)?, mu.cube_masses(window)?)
    }

    /// Outer factor `K_out(Q) σ(Q)` with the bar kernel still built from `K`.
    pub fn with_outer_kernel(
        kernel: &DyadicKernelMap,
        outer: &DyadicKernelMap,
        sigma: &AtomicMeasure,
        mu: &AtomicMeasure,
        exps: Exponents,
        window: &'w LatticeWindow,
    ) -> Result<Self> {
        Self::from_parts(
            window,
            exps,
            kernel.values_on(window)?,
            outer.values_on(window)?,
            sigma.cube_masses(window)?,
            mu.cube_masses(window)?,
        )
    }

    pub fn from_parts(
        window: &'w LatticeWindow,
        exps: Exponents,
        kernel: Vec<f64>,
        outer_kernel: Vec<f64>,
        sigma_mass: Vec<f64>,
        mu_mass: Vec<f64>,
    ) -> Result<Self> {
        let n = window.len();
        if [kernel.len(), outer_kernel.len(), sigma_mass.len(), mu_mass.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::InvalidArgument(format!(
                "per-cube arrays must have {n} entries"
            )));
        }
        let weight: Vec<f64> = (0..n).map(|i| ext::mul(kernel[i], sigma_mass[i])).collect();
        let outer: Vec<f64> = (0..n)
            .map(|i| ext::mul(outer_kernel[i], sigma_mass[i]))
            .collect();
        let mut g: Vec<f64> = (0..n).map(|i| ext::mul(weight[i], mu_mass[i])).collect();
        accumulate_up(window, &mut g);
        let inner: Vec<f64> = (0..n).map(|i| ext::ratio_or_zero(g[i], sigma_mass[i])).collect();
        let e = exps.p_prime() - 1.0;
        let w_terms: Vec<f64> = (0..n).map(|i| ext::mul(outer[i], ext::pow(inner[i], e))).collect();
        let t_terms: Vec<f64> = (0..n).map(|i| ext::mul(kernel[i], mu_mass[i])).collect();
        let t_prefix = prefix_down(window, &t_terms);
        let w_prefix = prefix_down(window, &w_terms);
        let mut m_prefix = inner.clone();
        for id in 0..n {
            if let Some(p) = window.parent(id) {
                m_prefix[id] = m_prefix[id].max(m_prefix[p]);
            }
        }
        Ok(Self {
            window,
            exps,
            kernel,
            sigma_mass,
            mu_mass,
            weight,
            outer,
            inner,
            t_prefix,
            w_prefix,
            m_prefix,
        })
    }

    pub fn window(&self) -> &'w LatticeWindow {
        self.window
    }

    pub fn exponents(&self) -> Exponents {
        self.exps
    }

    pub fn kernel_values(&self) -> &[f64] {
        &self.kernel
    }

    pub fn sigma_mass(&self) -> &[f64] {
        &self.sigma_mass
    }

    pub fn mu_mass(&self) -> &[f64] {
        &self.mu_mass
    }

    /// `∫_Q K̄(Q) dμ` for every cube.
    pub fn inner_integrals(&self) -> &[f64] {
        &self.inner
    }

    pub fn bar_field(&self) -> BarField<'w> {
        BarField::from_parts(self.window, &self.kernel, self.sigma_mass.clone())
    }

    /// `T_{K_D}[μ]` on the finest cell.
    pub fn t_at_leaf(&self, leaf: usize) -> f64 {
        self.t_prefix[leaf]
    }

    pub fn wolff_at_leaf(&self, leaf: usize) -> f64 {
        self.w_prefix[leaf]
    }

    pub fn maximal_at_leaf(&self, leaf: usize) -> f64 {
        self.m_prefix[leaf]
    }

    /// `Σ_{Q ∋ x} σ(Q) K̄(Q)(x) (∫_Q K̄(Q) dμ)^{p'-1}`; `σ(Q) K̄(Q)(x)` is the
    /// running sum of `D` from the leaf up to `Q`.
    pub fn wolff_bar_at_leaf(&self, leaf: usize) -> f64 {
        let e = self.exps.p_prime() - 1.0;
        let mut acc = 0.0;
        let mut total = 0.0;
        for a in self.window.ancestors(leaf) {
            acc += self.weight[a];
            total += ext::mul(acc, ext::pow(self.inner[a], e));
        }
        total
    }

    pub fn t(&self, x: &[f64]) -> Result<f64> {
        Ok(self.t_at_leaf(leaf_of(self.window, x)?))
    }

    pub fn wolff(&self, x: &[f64]) -> Result<f64> {
        Ok(self.wolff_at_leaf(leaf_of(self.window, x)?))
    }

    pub fn wolff_bar(&self, x: &[f64]) -> Result<f64> {
        Ok(self.wolff_bar_at_leaf(leaf_of(self.window, x)?))
    }

    pub fn maximal(&self, x: &[f64]) -> Result<f64> {
        Ok(self.maximal_at_leaf(leaf_of(self.window, x)?))
    }

    /// `∫ f(leaf(x)) dm(x)` over the atoms of `m` inside the window.
    fn integrate_leaves(&self, m: &AtomicMeasure, f: impl Fn(usize) -> f64) -> Result<f64> {
        let leaves = m.leaves(self.window)?;
        Ok(leaves
            .iter()
            .zip(m.weights())
            .filter_map(|(l, &w)| l.map(|l| ext::mul(w, f(l))))
            .sum())
    }

    /// `∫ (T[μ])^{p'} dσ`.
    pub fn energy(&self, sigma: &AtomicMeasure) -> Result<f64> {
        let pp = self.exps.p_prime();
        self.integrate_leaves(sigma, |l| ext::pow(self.t_at_leaf(l), pp))
    }

    /// `∫ W dμ = Σ_Q K_out(Q) σ(Q) (G(Q)/σ(Q))^{p'-1} μ(Q)`.
    pub fn wolff_integral(&self) -> f64 {
        let e = self.exps.p_prime() - 1.0;
        (0..self.window.len())
            .map(|i| ext::mul(ext::mul(self.outer[i], ext::pow(self.inner[i], e)), self.mu_mass[i]))
            .sum()
    }

    /// `∫ W̄ dμ` over the atoms of `mu`.
    pub fn wolff_bar_integral(&self, mu: &AtomicMeasure) -> Result<f64> {
        self.integrate_leaves(mu, |l| self.wolff_bar_at_leaf(l))
    }

    /// `∫ (W)^r dμ` over the atoms of `mu`.
    pub fn wolff_power_integral(&self, mu: &AtomicMeasure, r: f64) -> Result<f64> {
        self.integrate_leaves(mu, |l| ext::pow(self.wolff_at_leaf(l), r))
    }

    /// `∫ (M_K)^{p'} dσ`.
    pub fn maximal_energy(&self, sigma: &AtomicMeasure) -> Result<f64> {
        let pp = self.exps.p_prime();
        self.integrate_leaves(sigma, |l| ext::pow(self.maximal_at_leaf(l), pp))
    }
}

/// `T_{K_D}[ν](x) = Σ_{Q ∋ x} K(Q) ν(Q)`.
pub fn t_dyadic(
    kernel: &DyadicKernelMap,
    nu: &AtomicMeasure,
    window: &LatticeWindow,
    x: &[f64],
) -> Result<f64> {
    let leaf = leaf_of(window, x)?;
    let k = kernel.values_on(window)?;
    let m = nu.cube_masses(window)?;
    Ok(window.ancestors(leaf).map(|a| ext::mul(k[a], m[a])).sum())
}

/// `∫ (T_{K_D}[μ])^{p'} dσ`.
pub fn energy_dyadic(
    kernel: &DyadicKernelMap,
    mu: &AtomicMeasure,
    sigma: &AtomicMeasure,
    exps: Exponents,
    window: &LatticeWindow,
) -> Result<f64> {
    DyadicPotentials::build(kernel, sigma, mu, exps, window)?.energy(sigma)
}

pub fn wolff_dyadic(
    kernel: &DyadicKernelMap,
    sigma: &AtomicMeasure,
    mu: &AtomicMeasure,
    exps: Exponents,
    window: &LatticeWindow,
    x: &[f64],
) -> Result<f64> {
    DyadicPotentials::build(kernel, sigma, mu, exps, window)?.wolff(x)
}

pub fn wolff_bar_dyadic(
    kernel: &DyadicKernelMap,
    sigma: &AtomicMeasure,
    mu: &AtomicMeasure,
    exps: Exponents,
    window: &LatticeWindow,
    x: &[f64],
) -> Result<f64> {
    DyadicPotentials::build(kernel, sigma, mu, exps, window)?.wolff_bar(x)
}

pub fn maximal_dyadic(
    kernel: &DyadicKernelMap,
    sigma: &AtomicMeasure,
    mu: &AtomicMeasure,
    window: &LatticeWindow,
    x: &[f64],
) -> Result<f64> {
    // the exponent does not enter M
    DyadicPotentials::build(kernel, sigma, mu, Exponents::new(2.0)?, window)?.maximal(x)
}

/// `sup_{Q ∋ x} ν(Q) / σ(Q)` over cubes with `σ(Q) > 0`.
pub fn hl_maximal_dyadic(
    sigma: &AtomicMeasure,
    nu: &AtomicMeasure,
    window: &LatticeWindow,
    x: &[f64],
) -> Result<f64> {
    let leaf = leaf_of(window, x)?;
    let s = sigma.cube_masses(window)?;
    let v = nu.cube_masses(window)?;
    window
        .ancestors(leaf)
        .filter(|&a| s[a] > 0.0)
        .map(|a| v[a] / s[a])
        .reduce(f64::max)
        .ok_or_else(|| Error::Degenerate(format!("no cube containing {x:?} has base mass")))
}

/// `M^{HL}_σ[ν]` on every finest cell (zero where the whole chain is massless).
pub fn hl_maximal_leaves(sigma_mass: &[f64], nu_mass: &[f64], window: &LatticeWindow) -> Vec<f64> {
    let ratio: Vec<f64> = sigma_mass
        .iter()
        .zip(nu_mass)
        .map(|(&s, &v)| ext::ratio_or_zero(v, s))
        .collect();
    let mut best = ratio;
    for id in 0..window.len() {
        if let Some(p) = window.parent(id) {
            best[id] = best[id].max(best[p]);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AFunctionals {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

/// `A1 = ∫ (Σ_Q λ_Q/σ(Q) χ_Q)^s dσ`, `A2 = Σ_Q λ_Q (Λ(Q)/σ(Q))^{s-1}` and
/// `A3 = ∫ sup_{Q ∋ x} (Λ(Q)/σ(Q))^s dσ`, with `Λ(Q) = Σ_{Q' ⊆ Q} λ_{Q'}`.
pub fn a_functionals(
    lambda: &[f64],
    sigma: &AtomicMeasure,
    s: f64,
    window: &LatticeWindow,
) -> Result<AFunctionals> {
    if !(s > 1.0) {
        return Err(Error::InvalidExponents(format!("s must exceed 1, got {s}")));
    }
    if lambda.len() != window.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} cube weights, got {}",
            window.len(),
            lambda.len()
        )));
    }
    let sm = sigma.cube_masses(window)?;
    for (id, (&l, &m)) in lambda.iter().zip(&sm).enumerate() {
        if !(l >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative weight on cube {id}")));
        }
        if l > 0.0 && m == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "weight on cube {id} which has zero base mass"
            )));
        }
    }
    let mut big = lambda.to_vec();
    accumulate_up(window, &mut big);
    let avg: Vec<f64> = big.iter().zip(&sm).map(|(&b, &m)| ext::ratio_or_zero(b, m)).collect();
    let density: Vec<f64> = lambda.iter().zip(&sm).map(|(&l, &m)| ext::ratio_or_zero(l, m)).collect();
    let sum_down = prefix_down(window, &density);
    let mut max_down = avg.clone();
    for id in 0..window.len() {
        if let Some(p) = window.parent(id) {
            max_down[id] = max_down[id].max(max_down[p]);
        }
    }
    let leaves = sigma.leaves(window)?;
    let mut a1 = 0.0;
    let mut a3 = 0.0;
    for (l, &w) in leaves.iter().zip(sigma.weights()) {
        if let Some(l) = *l {
            a1 += ext::mul(w, ext::pow(sum_down[l], s));
            a3 += ext::mul(w, ext::pow(max_down[l], s));
        }
    }
    let a2 = lambda
        .iter()
        .zip(&avg)
        .map(|(&l, &a)| ext::mul(l, ext::pow(a, s - 1.0)))
        .sum();
    Ok(AFunctionals { a1, a2, a3 })
}

/// `λ_Q = K(Q) μ(Q) σ(Q)`, the weights under which the A-functionals become
/// energy, `∫ W dμ` and `∫ M^{p'} dσ`.
pub fn wolff_weights(pot: &DyadicPotentials<'_>) -> Vec<f64> {
    (0..pot.window().len())
        .map(|i| ext::mul(ext::mul(pot.kernel[i], pot.mu_mass[i]), pot.sigma_mass[i]))
        .collect()
}

/// Both sides of the pointwise inequality
/// `(Σ_j a_j)^s <= s Σ_j a_j (Σ_{i >= j} a_i)^{s-1}` for the terms of a chain
/// listed coarse to fine (the inner sum runs over the finer terms).
pub fn summation_by_parts(chain: &[f64], s: f64) -> (f64, f64) {
    let total: f64 = chain.iter().sum();
    let mut tail = 0.0;
    let mut rhs = 0.0;
    for &a in chain.iter().rev() {
        tail += a;
        rhs += ext::mul(a, ext::pow(tail, s - 1.0));
    }
    (ext::pow(total, s), s * rhs)
}

/// `∫ T[(T[ν])^{p'-1} dσ] dν`, evaluated atom by atom from cube masses;
/// equals the energy by Fubini.
pub fn fubini_rhs(
    kernel: &DyadicKernelMap,
    nu: &AtomicMeasure,
    sigma: &AtomicMeasure,
    exps: Exponents,
    window: &LatticeWindow,
) -> Result<f64> {
    let k = kernel.values_on(window)?;
    let nu_mass = nu.cube_masses(window)?;
    let chain_sum = |m: &[f64], leaf: usize| -> f64 {
        window.ancestors(leaf).map(|a| ext::mul(k[a], m[a])).sum()
    };
    let sigma_leaves = sigma.leaves(window)?;
    let mut rho = AtomicMeasure::new(sigma.dim());
    for (i, l) in sigma_leaves.iter().enumerate() {
        if let Some(l) = *l {
            let t = chain_sum(&nu_mass, l);
            let w = ext::mul(sigma.weight(i), ext::pow(t, exps.p_prime() - 1.0));
            if w > 0.0 {
                rho.push(sigma.position(i), w)?;
            }
        }
    }
    let rho_mass = rho.cube_masses(window)?;
    let mut total = 0.0;
    for (i, l) in nu.leaves(window)?.iter().enumerate() {
        if let Some(l) = *l {
            total += ext::mul(nu.weight(i), chain_sum(&rho_mass, l));
        }
    }
    Ok(total)
}

/// `∫_{|x-y| <= R} k(|x-y|) dν(y)`.
pub fn t_continuous_trunc(
    kernel: &RadialKernel,
    nu: &AtomicMeasure,
    r_max: f64,
    x: &[f64],
) -> Result<f64> {
    if !(r_max > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "truncation radius must be positive, got {r_max}"
        )));
    }
    if nu.dim() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: nu.dim(),
            got: x.len(),
        });
    }
    Ok(nu
        .iter()
        .map(|(y, w)| {
            let d = dist(x, y);
            if d <= r_max {
                ext::mul(w, kernel.eval(d))
            } else {
                0.0
            }
        })
        .sum())
}

/// `∫ (T_k[μ])^{p'} dσ`.
pub fn energy_continuous(
    kernel: &RadialKernel,
    mu: &AtomicMeasure,
    sigma: &AtomicMeasure,
    exps: Exponents,
) -> Result<f64> {
    let mut total = 0.0;
    for (x, w) in sigma.iter() {
        let t = t_continuous_trunc(kernel, mu, f64::INFINITY, x)?;
        total += ext::mul(w, ext::pow(t, exps.p_prime()));
    }
    Ok(total)
}

/// The continuous Wolff potential
/// `∫_0^R k(r) σ(B(x,r)) (∫_{B(x,r)} k̄(r)(y) dμ(y))^{p'-1} dr/r`, with the
/// σ-profiles of the μ-atoms precomputed.
#[derive(Debug, Clone)]
pub struct ContinuousWolff<'a> {
    kernel: &'a RadialKernel,
    sigma: &'a AtomicMeasure,
    mu: &'a AtomicMeasure,
    exps: Exponents,
    profiles: Vec<RadialProfile<'a>>,
    rel_tol: f64,
}

impl<'a> ContinuousWolff<'a> {
    pub fn new(
        kernel: &'a RadialKernel,
        sigma: &'a AtomicMeasure,
        mu: &'a AtomicMeasure,
        exps: Exponents,
    ) -> Result<Self> {
        if sigma.dim() != mu.dim() {
            return Err(Error::DimensionMismatch {
                expected: sigma.dim(),
                got: mu.dim(),
            });
        }
        let profiles = mu
            .iter()
            .map(|(y, _)| RadialProfile::new(kernel, sigma, y))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kernel,
            sigma,
            mu,
            exps,
            profiles,
            rel_tol: CONTINUOUS_REL_TOL,
        })
    }

    /// Relative tolerance of the radial quadrature, [`CONTINUOUS_REL_TOL`] by
    /// default.
    pub fn with_tolerance(mut self, rel_tol: f64) -> Result<Self> {
        if !(rel_tol > 0.0 && rel_tol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "quadrature tolerance must lie in (0, 1), got {rel_tol}"
            )));
        }
        self.rel_tol = rel_tol;
        Ok(self)
    }

    pub fn eval(&self, x: &[f64], r_max: f64) -> Result<f64> {
        if !(r_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "truncation radius must be positive, got {r_max}"
            )));
        }
        let sx = RadialMass::new(self.sigma, x)?;
        let mut near: Vec<(f64, usize)> = self
            .mu
            .iter()
            .enumerate()
            .filter(|(_, (_, w))| *w > 0.0)
            .map(|(i, (y, _))| (dist(x, y), i))
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (Some(&s0), Some(&(m0, _))) = (sx.radii().first(), near.first()) else {
            return Ok(0.0);
        };
        let upper = self.kernel.cutoff().map_or(r_max, |c| c.min(r_max));
        let start = s0.max(m0);
        if start >= upper {
            return Ok(0.0);
        }
        if start == 0.0 {
            // σ and μ share an atom at x: the integrand is ~ k(r) near 0
            return Ok(if self.kernel.value_at_zero() > 0.0 {
                f64::INFINITY
            } else {
                0.0
            });
        }
        let pp = self.exps.p_prime();
        let integrand = |r: f64| -> f64 {
            let k = self.kernel.eval(r);
            if k == 0.0 {
                return 0.0;
            }
            let mut inner = 0.0;
            for &(d, i) in &near {
                if d > r {
                    break;
                }
                inner += ext::mul(self.mu.weight(i), self.profiles[i].bar(r));
            }
            ext::mul(ext::mul(k, sx.mass(r)), ext::pow(inner, pp - 1.0))
        };

        let mut cuts: Vec<f64> = vec![start];
        let in_range = |d: f64| d > start && d < upper;
        cuts.extend(sx.radii().iter().copied().filter(|&d| in_range(d)));
        cuts.extend(near.iter().map(|&(d, _)| d).filter(|&d| in_range(d)));
        for &(d, i) in &near {
            if d < upper {
                cuts.extend(self.profiles[i].jumps().iter().copied().filter(|&r| in_range(r.max(d))));
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        if upper.is_finite() {
            cuts.push(upper);
        }

        let mut total = 0.0;
        for seg in cuts.windows(2) {
            let (a, b) = (seg[0].ln(), seg[1].ln());
            let q = quadrature::integrate(|t| integrand(t.exp()), a, b, self.rel_tol, 0.0);
            if !q.value.is_finite() {
                return Ok(f64::INFINITY);
            }
            total += q.value;
        }
        if upper.is_infinite() {
            let last = *cuts.last().unwrap();
            match (self.kernel.profile(), self.kernel.cutoff()) {
                (Profile::Riesz { alpha, dim }, None) => {
                    // r = L u^{-1/e}: ∫_L^∞ k F dr/r = (L^{-e}/e) ∫_0^1 F(r(u)) du
                    let e = *dim as f64 - alpha;
                    let f = |u: f64| {
                        let r = last * u.powf(-1.0 / e);
                        let k = self.kernel.eval(r);
                        if k == 0.0 {
                            0.0
                        } else {
                            integrand(r) / k
                        }
                    };
                    let q = quadrature::integrate(f, 0.0, 1.0, self.rel_tol, 0.0);
                    total += last.powf(-e) / e * q.value;
                }
                _ => {
                    if integrand(2.0 * last) > 0.0 {
                        return Ok(f64::INFINITY);
                    }
                }
            }
        }
        Ok(total)
    }
}

pub fn wolff_continuous(
    kernel: &RadialKernel,
    sigma: &AtomicMeasure,
    mu: &AtomicMeasure,
    exps: Exponents,
    x: &[f64],
    r_max: f64,
) -> Result<f64> {
    ContinuousWolff::new(kernel, sigma, mu, exps)?.eval(x, r_max)
}

/// `sup_{r > 0} k̄(r)(x) μ(B(x,r))`.
///
/// Between consecutive jump radii `μ(B(x,r))` is constant and `k̄(r)(x)`
/// increases, so the supremum is attained at a jump radius (closed ball) or
/// approached just below one (open ball), or as `r → ∞`.
pub fn m_k_maximal(
    kernel: &RadialKernel,
    sigma: &AtomicMeasure,
    mu: &AtomicMeasure,
    x: &[f64],
) -> Result<f64> {
    let prof = RadialProfile::new(kernel, sigma, x)?;
    let mx = RadialMass::new(mu, x)?;
    if mx.total() == 0.0 || prof.total_mass() == 0.0 {
        return Ok(0.0);
    }
    if prof.mass(0.0) > 0.0 && mx.mass(0.0) > 0.0 && kernel.value_at_zero() > 0.0 {
        return Ok(f64::INFINITY);
    }
    let mut cands: Vec<f64> = prof.jumps().iter().chain(mx.radii()).copied().collect();
    if let Some(c) = kernel.cutoff() {
        cands.push(c);
    }
    let mut best = ext::mul(prof.bar(f64::INFINITY), mx.total());
    for &d in &cands {
        if d > 0.0 {
            best = best
                .max(ext::mul(prof.bar(d), mx.mass(d)))
                .max(ext::mul(prof.bar_left(d), mx.mass_open(d)));
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DyadicKernelMap;
    use proptest::prelude::*;

    fn ones() -> DyadicKernelMap {
        DyadicKernelMap::radial(RadialKernel::constant(1.0).unwrap())
    }

    fn single_cube_setup(m: f64) -> (LatticeWindow, AtomicMeasure, AtomicMeasure) {
        let w = LatticeWindow::unit(1, 0, 0).unwrap();
        let sigma = AtomicMeasure::lebesgue_grid(&[0.0], &[1.0], 4).unwrap();
        let mu = AtomicMeasure::point_mass(&[0.5], m).unwrap();
        (w, sigma, mu)
    }

    #[test]
    fn exponents() {
        let e = Exponents::with_q(3.0, 2.0).unwrap();
        assert_eq!(e.p_prime(), 1.5);
        assert_eq!(e.trace_exponent(), Some(4.0));
        assert!(Exponents::new(1.0).is_err());
        assert!(Exponents::with_q(2.0, 2.0).is_err());
        assert!(Exponents::with_q(2.0, 0.5).is_err());
        let e = Exponents::from_p_prime(3.0).unwrap();
        assert!((e.p_prime() * (e.p() - 1.0) - e.p()).abs() < 1e-14);
    }

    #[test]
    fn t_dyadic_chain() {
        let w = LatticeWindow::unit(1, 0, 2).unwrap();
        let mu = AtomicMeasure::point_mass(&[0.1], 1.0).unwrap();
        assert_eq!(t_dyadic(&ones(), &mu, &w, &[0.3]).unwrap(), 2.0);
        assert_eq!(t_dyadic(&ones(), &mu, &w, &[0.1]).unwrap(), 3.0);
        assert_eq!(t_dyadic(&ones(), &AtomicMeasure::new(1), &w, &[0.3]).unwrap(), 0.0);
        assert!(t_dyadic(&ones(), &mu, &w, &[1.5]).is_err());
    }

    #[test]
    fn single_cube_collapse() {
        let m = 1.7;
        let (w, sigma, mu) = single_cube_setup(m);
        let e = Exponents::new(2.0).unwrap();
        let pot = DyadicPotentials::build(&ones(), &sigma, &mu, e, &w).unwrap();
        assert!(ext::rel_diff(pot.energy(&sigma).unwrap(), m * m) < 1e-15);
        for x in [0.0, 0.5, 0.9] {
            assert!(ext::rel_diff(pot.wolff(&[x]).unwrap(), m) < 1e-15);
            assert!(ext::rel_diff(pot.wolff_bar(&[x]).unwrap(), m) < 1e-15);
            assert!(ext::rel_diff(pot.maximal(&[x]).unwrap(), m) < 1e-15);
        }
        assert!(ext::rel_diff(pot.wolff_integral(), m * m) < 1e-15);
        let a = a_functionals(&[1.0], &sigma, 2.0, &w).unwrap();
        assert!(ext::rel_diff(a.a1, 1.0) < 1e-15);
        assert!(ext::rel_diff(a.a2, 1.0) < 1e-15);
        assert!(ext::rel_diff(a.a3, 1.0) < 1e-15);
        assert_eq!(
            a_functionals(&[0.0], &sigma, 2.0, &w).unwrap(),
            AFunctionals { a1: 0.0, a2: 0.0, a3: 0.0 }
        );
        assert!(a_functionals(&[1.0], &sigma, 1.0, &w).is_err());
    }

    #[test]
    fn hl_maximal() {
        let w = LatticeWindow::unit(1, 0, 3).unwrap();
        let sigma = AtomicMeasure::lebesgue_grid(&[0.0], &[1.0], 3).unwrap();
        assert!((hl_maximal_dyadic(&sigma, &sigma, &w, &[0.3]).unwrap() - 1.0).abs() < 1e-15);
        let twice = sigma.scaled(2.0);
        assert!((hl_maximal_dyadic(&sigma, &twice, &w, &[0.3]).unwrap() - 2.0).abs() < 1e-15);
        let spike = AtomicMeasure::point_mass(&[0.3], 1.0).unwrap();
        // chain ratios 1, 2, 4, 8 at levels 0..3
        assert_eq!(hl_maximal_dyadic(&sigma, &spike, &w, &[0.3]).unwrap(), 8.0);
        let empty = AtomicMeasure::new(1);
        assert!(hl_maximal_dyadic(&empty, &spike, &w, &[0.3]).is_err());
    }

    fn random_instance(seed: u64) -> (LatticeWindow, AtomicMeasure, AtomicMeasure, DyadicKernelMap) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w = LatticeWindow::unit(2, 0, 4).unwrap();
        let mut atoms = |k: usize| {
            let mut m = AtomicMeasure::new(2);
            for _ in 0..k {
                let p = [rng.gen::<f64>(), rng.gen::<f64>()];
                m.push(&p, rng.gen_range(0.1..3.0)).unwrap();
            }
            m
        };
        let sigma = atoms(30);
        let mu = atoms(12);
        let k = DyadicKernelMap::radial(RadialKernel::riesz(1.3, 2).unwrap());
        (w, sigma, mu, k)
    }

    #[test]
    fn wolff_inner_matches_atom_sum() {
        let (w, sigma, mu, k) = random_instance(7);
        let e = Exponents::new(1.7).unwrap();
        let pot = DyadicPotentials::build(&k, &sigma, &mu, e, &w).unwrap();
        let bar = pot.bar_field();
        for id in 0..w.len() {
            let direct: f64 = mu
                .iter()
                .map(|(y, m)| m * bar.value(id, y).unwrap())
                .sum();
            assert!(ext::rel_diff(direct, pot.inner_integrals()[id]) < 1e-12);
        }
    }

    #[test]
    fn substitution_matches_dedicated_operations() {
        let (w, sigma, mu, k) = random_instance(11);
        for pp in [1.5, 2.0, 3.0] {
            let e = Exponents::from_p_prime(pp).unwrap();
            let pot = DyadicPotentials::build(&k, &sigma, &mu, e, &w).unwrap();
            let a = a_functionals(&wolff_weights(&pot), &sigma, pp, &w).unwrap();
            assert!(ext::rel_diff(a.a1, pot.energy(&sigma).unwrap()) < 1e-12);
            assert!(ext::rel_diff(a.a2, pot.wolff_integral()) < 1e-12);
            let w_int = pot.wolff_power_integral(&mu, 1.0).unwrap();
            assert!(ext::rel_diff(a.a2, w_int) < 1e-12);
            assert!(ext::rel_diff(a.a3, pot.maximal_energy(&sigma).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn fubini_identity() {
        let (w, sigma, mu, k) = random_instance(3);
        for pp in [1.3, 2.0, 4.0] {
            let e = Exponents::from_p_prime(pp).unwrap();
            let lhs = energy_dyadic(&k, &mu, &sigma, e, &w).unwrap();
            let rhs = fubini_rhs(&k, &mu, &sigma, e, &w).unwrap();
            assert!(ext::rel_diff(lhs, rhs) < 1e-12, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn summation_by_parts_inequality() {
        let (lhs, rhs) = summation_by_parts(&[1.0, 2.0, 0.5], 2.0);
        assert_eq!(lhs, 12.25);
        // 2 * (0.5*0.5 + 2*2.5 + 1*3.5)
        assert_eq!(rhs, 17.5);
    }

    #[test]
    fn wolff_bar_dominates() {
        for seed in 0..5 {
            let (w, sigma, mu, k) = random_instance(seed);
            let pot = DyadicPotentials::build(&k, &sigma, &mu, Exponents::new(2.5).unwrap(), &w).unwrap();
            for l in w.leaf_ids() {
                assert!(pot.wolff_at_leaf(l) <= pot.wolff_bar_at_leaf(l) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn shift_covariance() {
        let (w, sigma, mu, k) = random_instance(5);
        let z = [0.3, -0.45];
        let ws = w.with_shift(z.to_vec()).unwrap();
        let e = Exponents::new(1.8).unwrap();
        let a = DyadicPotentials::build(&k, &sigma, &mu, e, &w).unwrap();
        let b = DyadicPotentials::build(
            &k,
            &sigma.translated(&z).unwrap(),
            &mu.translated(&z).unwrap(),
            e,
            &ws,
        )
        .unwrap();
        for (x, _) in sigma.iter() {
            let xs = [x[0] + z[0], x[1] + z[1]];
            assert!(ext::rel_diff(a.wolff(x).unwrap(), b.wolff(&xs).unwrap()) < 1e-12);
            assert!(ext::rel_diff(a.t(x).unwrap(), b.t(&xs).unwrap()) < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn homogeneity(seed in 0u64..1000, c in 0.1f64..10.0, pp in 1.2f64..4.0) {
            let (w, sigma, mu, k) = random_instance(seed);
            let e = Exponents::from_p_prime(pp).unwrap();
            let a = DyadicPotentials::build(&k, &sigma, &mu, e, &w).unwrap();
            let b = DyadicPotentials::build(&k, &sigma, &mu.scaled(c), e, &w).unwrap();
            prop_assert!(ext::rel_diff(b.energy(&sigma).unwrap(), c.powf(pp) * a.energy(&sigma).unwrap()) < 1e-11);
            for l in w.leaf_ids().step_by(7) {
                prop_assert!(ext::rel_diff(b.t_at_leaf(l), c * a.t_at_leaf(l)) < 1e-12);
                prop_assert!(ext::rel_diff(b.maximal_at_leaf(l), c * a.maximal_at_leaf(l)) < 1e-12);
                prop_assert!(ext::rel_diff(b.wolff_at_leaf(l), c.powf(pp - 1.0) * a.wolff_at_leaf(l)) < 1e-11);
            }
        }
    }

    #[test]
    fn continuous_truncated_t() {
        let k = RadialKernel::riesz(0.5, 1).unwrap();
        let nu = AtomicMeasure::point_mass(&[0.0], 1.0).unwrap();
        assert_eq!(t_continuous_trunc(&k, &nu, 1.0, &[0.25]).unwrap(), 2.0);
        assert_eq!(t_continuous_trunc(&k, &nu, 1.0, &[0.0]).unwrap(), f64::INFINITY);
        assert_eq!(t_continuous_trunc(&k, &nu, 0.1, &[0.25]).unwrap(), 0.0);
        assert!(t_continuous_trunc(&k, &nu, 0.0, &[0.25]).is_err());
    }

    fn lebesgue(lo: f64, hi: f64, level: i32) -> AtomicMeasure {
        AtomicMeasure::lebesgue_grid(&[lo], &[hi], level).unwrap()
    }

    #[test]
    fn continuous_energy_riesz() {
        let k = RadialKernel::riesz(0.75, 1).unwrap().with_cutoff(2.0).unwrap();
        let mu = AtomicMeasure::point_mass(&[0.0], 1.0).unwrap();
        let e = Exponents::new(2.0).unwrap();
        let v = energy_continuous(&k, &mu, &lebesgue(-1.0, 1.0, 12), e).unwrap();
        // midpoint-rule error for ∫ |x|^{-1/2} is of order sqrt(h)
        assert!(ext::rel_diff(v, 4.0) < 0.01, "{v}");
        assert_eq!(energy_continuous(&k, &AtomicMeasure::new(1), &lebesgue(-1.0, 1.0, 4), e).unwrap(), 0.0);
    }

    #[test]
    fn continuous_wolff_closed_form() {
        let k = RadialKernel::riesz(0.5, 1).unwrap().with_cutoff(1.0).unwrap();
        let mu = AtomicMeasure::point_mass(&[0.0], 1.0).unwrap();
        let e = Exponents::new(2.0).unwrap();
        let err = |level: i32, x: f64| {
            let sigma = lebesgue(-2.0, 2.0, level);
            let v = wolff_continuous(&k, &sigma, &mu, e, &[x], f64::INFINITY).unwrap();
            ext::rel_diff(v, 4.0 * (1.0 / x).ln())
        };
        for x in [0.05f64, 0.2, 0.5] {
            // the grid error decays like sqrt(h)
            let (coarse, fine) = (err(11, x), err(13, x));
            assert!(fine < 0.02, "x={x}: {fine}");
            assert!(fine < 0.6 * coarse, "x={x}: {coarse} -> {fine}");
        }
        let sigma = lebesgue(-2.0, 2.0, 6);
        let far = AtomicMeasure::point_mass(&[5.0], 1.0).unwrap();
        assert_eq!(wolff_continuous(&k, &sigma, &far, e, &[0.0], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn continuous_wolff_riesz_tail() {
        let k = RadialKernel::riesz(0.5, 1).unwrap();
        let sigma = AtomicMeasure::point_mass(&[1.0], 1.0).unwrap();
        let mu = AtomicMeasure::point_mass(&[0.0], 1.0).unwrap();
        let e = Exponents::new(2.0).unwrap();
        // from x = 1: σ(B) = 1 for r >= 0; μ enters at r = 1; from y = 0 the
        // σ-atom enters at r = 1 with k̄(r)(0) = ∫_1^r s^{-3/2} ds = 2(1 - r^{-1/2}).
        // W = ∫_1^∞ r^{-1/2} · 2(1 - r^{-1/2}) dr/r = 2(2 - 1) = 2
        let v = wolff_continuous(&k, &sigma, &mu, e, &[1.0], f64::INFINITY).unwrap();
        assert!(ext::rel_diff(v, 2.0) < 1e-7, "{v}");
        let c = RadialKernel::constant(1.0).unwrap();
        assert_eq!(
            wolff_continuous(&c, &sigma, &mu, e, &[1.0], f64::INFINITY).unwrap(),
            f64::INFINITY
        );
        assert!(wolff_continuous(&k, &sigma, &mu, e, &[1.0], 0.0).is_err());
    }

    #[test]
    fn continuous_wolff_homogeneity() {
        let k = RadialKernel::riesz(0.7, 2).unwrap().with_cutoff(1.5).unwrap();
        let (_, sigma, mu, _) = random_instance(2);
        let e = Exponents::new(3.0).unwrap();
        let a = wolff_continuous(&k, &sigma, &mu, e, &[0.4, 0.4], 1.0).unwrap();
        let b = wolff_continuous(&k, &sigma, &mu.scaled(3.0), e, &[0.4, 0.4], 1.0).unwrap();
        assert!(a > 0.0);
        assert!(ext::rel_diff(b, 3f64.powf(0.5) * a) < 1e-7);
    }

    #[test]
    fn m_k_closed_form() {
        let k = RadialKernel::riesz(0.5, 1).unwrap().with_cutoff(1.0).unwrap();
        let sigma = lebesgue(-2.0, 2.0, 12);
        let mu = AtomicMeasure::point_mass(&[0.0], 1.0).unwrap();
        for x in [0.1f64, 0.5, 1.0] {
            let v = m_k_maximal(&k, &sigma, &mu, &[x]).unwrap();
            let exact = 2.0 / x.sqrt();
            assert!(ext::rel_diff(v, exact) < 0.02, "x={x}: {v} vs {exact}");
        }
        assert_eq!(m_k_maximal(&k, &sigma, &AtomicMeasure::new(1), &[0.3]).unwrap(), 0.0);
        let on_atom = AtomicMeasure::point_mass(&[2f64.powi(-13)], 1.0).unwrap();
        assert_eq!(
            m_k_maximal(&k, &sigma, &on_atom, &[2f64.powi(-13)]).unwrap(),
            f64::INFINITY
        );
    }
}
