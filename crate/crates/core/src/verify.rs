//! Checks of the identities and inequalities relating the dyadic and
//! continuous quantities, on explicit or randomly generated instances.
//!
//! Every random choice comes from a ChaCha8 stream keyed by
//! `(seed, stream index)`, so results do not depend on how work items are
//! scheduled.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ext;
use crate::kernels::{
    dlbo_constant_of, BarField, DyadicKernelMap, KernelTable, Profile, RadialKernel, RadialProfile,
};
use crate::lattice::{cell_index, pow2, LatticeWindow};
use crate::measures::{accumulate_up, dist, AtomicMeasure};
use crate::par::Execution;
use crate::potentials::{
    a_functionals, fubini_rhs, hl_maximal_leaves, AFunctionals, DyadicPotentials, Exponents,
};

/// Guard for relative errors against a vanishing reference.
pub const TINY: f64 = 1e-300;

/// Band for ratios whose constants are left implicit.
pub const DEFAULT_BAND: (f64, f64) = (1e-3, 1e3);

/// Shift draws per RNG block in Monte Carlo averages.
pub const SHIFT_BLOCK: usize = 256;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn log_uniform(rng: &mut ChaCha8Rng, lo_exp: f64, hi_exp: f64) -> f64 {
    2f64.powf(rng.gen_range(lo_exp..hi_exp))
}

fn rel_err(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(TINY)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceParams {
    pub max_dim: usize,
    pub max_depth: i32,
    pub max_atoms: usize,
    /// Probability of a random table kernel instead of a Riesz kernel.
    pub table_fraction: f64,
}

impl Default for InstanceParams {
    fn default() -> Self {
        Self {
            max_dim: 2,
            max_depth: 8,
            max_atoms: 200,
            table_fraction: 0.5,
        }
    }
}

/// A random `(window, σ, μ, K)` on `[0,1)^n`: atoms uniform in the root,
/// weights log-uniform in `[2^-8, 2^8]`.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub seed: u64,
    pub index: u64,
    pub window: LatticeWindow,
    pub sigma: AtomicMeasure,
    pub mu: AtomicMeasure,
    pub kernel: DyadicKernelMap,
    pub kernel_label: String,
}

impl RandomInstance {
    pub fn generate(seed: u64, index: u64, params: &InstanceParams) -> Result<Self> {
        let mut rng = rng_for(seed, index);
        let dim = rng.gen_range(1..=params.max_dim);
        let depth = rng.gen_range(1..=params.max_depth);
        let window = LatticeWindow::unit(dim, 0, depth)?;
        let atoms = |rng: &mut ChaCha8Rng| -> Result<AtomicMeasure> {
            let count = rng.gen_range(1..=params.max_atoms);
            let mut m = AtomicMeasure::new(dim);
            let mut p = vec![0.0; dim];
            for _ in 0..count {
                p.iter_mut().for_each(|x| *x = rng.gen::<f64>());
                m.push(&p, log_uniform(rng, -8.0, 8.0))?;
            }
            Ok(m)
        };
        let sigma = atoms(&mut rng)?;
        let mu = atoms(&mut rng)?;
        let (kernel, kernel_label) = if rng.gen::<f64>() < params.table_fraction {
            let mut t = KernelTable::new(dim);
            for c in window.cubes() {
                let v = if rng.gen::<f64>() < 0.1 {
                    0.0
                } else {
                    log_uniform(&mut rng, -8.0, 8.0)
                };
                t.insert(c.level, c.index, v)?;
            }
            (DyadicKernelMap::Table(t), "table(log-uniform)".to_string())
        } else {
            let alpha = rng.gen_range(0.1..(dim as f64 - 0.1));
            (
                DyadicKernelMap::radial(RadialKernel::riesz(alpha, dim)?),
                format!("riesz(alpha={alpha})"),
            )
        };
        Ok(Self {
            seed,
            index,
            window,
            sigma,
            mu,
            kernel,
            kernel_label,
        })
    }

    pub fn descriptor(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("index".into(), self.index.to_string()),
            ("dim".into(), self.window.dim().to_string()),
            ("depth".into(), self.window.depth().to_string()),
            ("sigma_atoms".into(), self.sigma.len().to_string()),
            ("mu_atoms".into(), self.mu.len().to_string()),
            ("kernel".into(), self.kernel_label.clone()),
        ])
    }
}

/// Nonnegative per-cube weights, zero where `σ(Q) = 0`.
pub fn random_lambda(rng: &mut ChaCha8Rng, sigma_mass: &[f64]) -> Vec<f64> {
    sigma_mass
        .iter()
        .map(|&m| {
            if m > 0.0 && rng.gen::<f64>() < 0.7 {
                log_uniform(rng, -8.0, 8.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// `|E - ∫ T[(T[μ])^{p'-1} dσ] dμ| / E`; `None` when the energy is infinite.
pub fn check_fubini(
    kernel: &DyadicKernelMap,
    mu: &AtomicMeasure,
    sigma: &AtomicMeasure,
    exps: Exponents,
    window: &LatticeWindow,
) -> Result<Option<f64>> {
    let lhs = DyadicPotentials::build(kernel, sigma, mu, exps, window)?.energy(sigma)?;
    if !lhs.is_finite() {
        return Ok(None);
    }
    let rhs = fubini_rhs(kernel, mu, sigma, exps, window)?;
    Ok(Some(rel_err(lhs, rhs)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AChain {
    pub values: AFunctionals,
    pub a1_over_a2: f64,
    /// `A2 / (A1^{1/s} A3^{1/s'})`
    pub holder: f64,
    pub a3_over_a1: f64,
    pub a1_over_a3: f64,
    pub pass: bool,
}

pub fn check_a_chain(
    lambda: &[f64],
    sigma: &AtomicMeasure,
    s: f64,
    window: &LatticeWindow,
) -> Result<AChain> {
    if !lambda.iter().any(|&l| l > 0.0) {
        return Err(Error::Degenerate("all cube weights vanish".into()));
    }
    let a = a_functionals(lambda, sigma, s, window)?;
    let s_dual = s / (s - 1.0);
    let holder = a.a2 / (a.a1.powf(1.0 / s) * a.a3.powf(1.0 / s_dual));
    let out = AChain {
        values: a,
        a1_over_a2: a.a1 / a.a2,
        holder,
        a3_over_a1: a.a3 / a.a1,
        a1_over_a3: a.a1 / a.a3,
        pass: false,
    };
    let finite = [out.a1_over_a2, out.holder, out.a3_over_a1, out.a1_over_a3]
        .iter()
        .all(|r| r.is_finite());
    let c1 = s > 2.0 || out.a1_over_a2 <= s;
    Ok(AChain {
        pass: finite && c1 && holder <= 1.0 + 1e-12,
        ..out
    })
}

/// `E / ∫ W dμ`; `None` when either side is zero or infinite.
pub fn check_theorem_a(
    kernel: &DyadicKernelMap,
    mu: &AtomicMeasure,
    sigma: &AtomicMeasure,
    exps: Exponents,
    window: &LatticeWindow,
) -> Result<Option<f64>> {
    let pot = DyadicPotentials::build(kernel, sigma, mu, exps, window)?;
    let e = pot.energy(sigma)?;
    let w = pot.wolff_integral();
    Ok((e > 0.0 && w > 0.0 && e.is_finite() && w.is_finite()).then(|| e / w))
}

/// The dyadic operator `f ↦ T[f dm]` between two atomic measures on a window.
struct DyadicOperator<'w> {
    window: &'w LatticeWindow,
    kernel: Vec<f64>,
}

impl DyadicOperator<'_> {
    /// `T[f dm]` at each atom of `target`.
    fn apply(
        &self,
        source: &AtomicMeasure,
        source_leaves: &[Option<usize>],
        f: &[f64],
        target_leaves: &[Option<usize>],
    ) -> Vec<f64> {
        let mut mass = vec![0.0; self.window.len()];
        for ((l, &w), &v) in source_leaves.iter().zip(source.weights()).zip(f) {
            if let Some(l) = *l {
                mass[l] += ext::mul(w, v);
            }
        }
        accumulate_up(self.window, &mut mass);
        let mut t: Vec<f64> = mass
            .iter()
            .zip(&self.kernel)
            .map(|(&m, &k)| ext::mul(k, m))
            .collect();
        for id in 0..self.window.len() {
            if let Some(p) = self.window.parent(id) {
                t[id] += t[p];
            }
        }
        target_leaves
            .iter()
            .map(|l| l.map_or(0.0, |l| t[l]))
            .collect()
    }
}

fn lp_norm(m: &AtomicMeasure, v: &[f64], p: f64) -> f64 {
    let s: f64 = m
        .weights()
        .iter()
        .zip(v)
        .map(|(&w, &x)| ext::mul(w, ext::pow(x, p)))
        .sum();
    ext::pow(s, 1.0 / p)
}

/// A random nonnegative function on the atoms of `m`: either i.i.d.
/// log-uniform values or the indicator of a random window cube.
fn random_probe(rng: &mut ChaCha8Rng, m: &AtomicMeasure, leaves: &[Option<usize>], window: &LatticeWindow) -> Vec<f64> {
    if rng.gen::<bool>() {
        (0..m.len()).map(|_| log_uniform(rng, -8.0, 8.0)).collect()
    } else {
        let q = rng.gen_range(0..window.len());
        leaves
            .iter()
            .map(|l| match l {
                Some(l) if window.ancestors(*l).any(|a| a == q) => 1.0,
                _ => 0.0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceQ1 {
    /// `E^{1/p'}`
    pub dual_constant: f64,
    /// `‖T f*‖_{L¹(μ)} / ‖f*‖_{L^p(σ)}` at `f* = (T[μ])^{p'-1}`
    pub achieved: f64,
    /// Largest ratio over the random probes.
    pub max_probe: f64,
}

pub fn trace_constant_q1(
    kernel: &DyadicKernelMap,
    mu: &AtomicMeasure,
    sigma: &AtomicMeasure,
    exps: Exponents,
    window: &LatticeWindow,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TraceQ1> {
    let op = DyadicOperator {
        window,
        kernel: kernel.values_on(window)?,
    };
    let (sl, ml) = (sigma.leaves(window)?, mu.leaves(window)?);
    let ones = vec![1.0; mu.len()];
    let t_mu = op.apply(mu, &ml, &ones, &sl);
    let pp = exps.p_prime();
    let energy: f64 = sigma
        .weights()
        .iter()
        .zip(&t_mu)
        .map(|(&w, &t)| ext::mul(w, ext::pow(t, pp)))
        .sum();
    let ratio = |f: &[f64]| -> f64 {
        let tf = op.apply(sigma, &sl, f, &ml);
        let num = lp_norm(mu, &tf, 1.0);
        let den = lp_norm(sigma, f, exps.p());
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    };
    let f_star: Vec<f64> = t_mu.iter().map(|&t| ext::pow(t, pp - 1.0)).collect();
    let achieved = ratio(&f_star);
    let mut max_probe: f64 = 0.0;
    for _ in 0..probes {
        let f = random_probe(rng, sigma, &sl, window);
        max_probe = max_probe.max(ratio(&f));
    }
    Ok(TraceQ1 {
        dual_constant: ext::pow(energy, 1.0 / pp),
        achieved,
        max_probe,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpperTriangle {
    /// `‖W‖_{L^r(μ)}` with `r = q(p-1)/(p-q)`
    pub wolff_norm: f64,
    pub empirical_sup: f64,
    pub primal_sup: f64,
    pub dual_sup: f64,
    pub dlbo: f64,
    pub verdict: String,
    pub pass: bool,
}

/// Number of alternating extremal steps started from `g = 1`.
const POWER_STEPS: usize = 6;

/// Compares `‖W‖_{L^r(μ)}` with the best observed ratio
/// `‖T f‖_{L^q(μ)} / ‖f‖_{L^p(σ)}` over random primal probes `f`, dual
/// probes `g = (M^{HL}_μ ψ)^{1/p'}` (ratio `‖T[g dμ]‖_{L^{p'}(σ)} / ‖g‖_{L^{q'}(μ)}`)
/// and a few alternating extremal steps.
///
/// Only when the DLBO constant is finite is the ratio `sup / ‖W‖` expected to
/// stay bounded; otherwise the outcome is reported as inconclusive.
#[allow(clippy::too_many_arguments)]
pub fn trace_test_upper_triangle(
    kernel: &DyadicKernelMap,
    mu: &AtomicMeasure,
    sigma: &AtomicMeasure,
    exps: Exponents,
    window: &LatticeWindow,
    trials: usize,
    seed: u64,
    band: (f64, f64),
) -> Result<UpperTriangle> {
    let q = exps
        .q()
        .ok_or_else(|| Error::InvalidExponents("the trace test needs q".into()))?;
    if q <= 1.0 {
        return Err(Error::InvalidExponents(format!(
            "the trace test needs 1 < q < p, got q = {q}"
        )));
    }
    let (p, pp) = (exps.p(), exps.p_prime());
    let q_dual = q / (q - 1.0);
    let r = exps.trace_exponent().unwrap();
    let pot = DyadicPotentials::build(kernel, sigma, mu, exps, window)?;
    let wolff_norm = ext::pow(pot.wolff_power_integral(mu, r)?, 1.0 / r);
    let dlbo = if sigma.total_mass() > 0.0 {
        dlbo_constant_of(&BarField::from_parts(window, pot.kernel_values(), pot.sigma_mass().to_vec()))?
    } else {
        f64::INFINITY
    };

    let op = DyadicOperator {
        window,
        kernel: pot.kernel_values().to_vec(),
    };
    let (sl, ml) = (sigma.leaves(window)?, mu.leaves(window)?);
    let primal = |f: &[f64]| -> f64 {
        let den = lp_norm(sigma, f, p);
        if den == 0.0 {
            return 0.0;
        }
        lp_norm(mu, &op.apply(sigma, &sl, f, &ml), q) / den
    };
    let dual = |g: &[f64]| -> f64 {
        let den = lp_norm(mu, g, q_dual);
        if den == 0.0 {
            return 0.0;
        }
        lp_norm(sigma, &op.apply(mu, &ml, g, &sl), pp) / den
    };

    let mut rng = rng_for(seed, 0);
    let mut primal_sup: f64 = 0.0;
    let mut dual_sup: f64 = 0.0;
    let mu_mass = pot.mu_mass();
    for _ in 0..trials {
        let f = random_probe(&mut rng, sigma, &sl, window);
        primal_sup = primal_sup.max(primal(&f));
        let psi = random_probe(&mut rng, mu, &ml, window);
        let mut psi_mass = vec![0.0; window.len()];
        for ((l, &w), &v) in ml.iter().zip(mu.weights()).zip(&psi) {
            if let Some(l) = *l {
                psi_mass[l] += w * v;
            }
        }
        accumulate_up(window, &mut psi_mass);
        let m = hl_maximal_leaves(mu_mass, &psi_mass, window);
        let g: Vec<f64> = ml
            .iter()
            .map(|l| l.map_or(0.0, |l| ext::pow(m[l], 1.0 / pp)))
            .collect();
        dual_sup = dual_sup.max(dual(&g));
    }
    let mut g = vec![1.0; mu.len()];
    for _ in 0..POWER_STEPS {
        dual_sup = dual_sup.max(dual(&g));
        let f: Vec<f64> = op
            .apply(mu, &ml, &g, &sl)
            .iter()
            .map(|&t| ext::pow(t, pp - 1.0))
            .collect();
        primal_sup = primal_sup.max(primal(&f));
        g = op
            .apply(sigma, &sl, &f, &ml)
            .iter()
            .map(|&t| ext::pow(t, q - 1.0))
            .collect();
        let scale = lp_norm(mu, &g, q_dual);
        if !(scale > 0.0 && scale.is_finite()) {
            break;
        }
        g.iter_mut().for_each(|x| *x /= scale);
    }
    let empirical_sup = primal_sup.max(dual_sup);

    let (verdict, pass) = if empirical_sup == 0.0 && wolff_norm == 0.0 {
        ("vacuous: no mass".to_string(), true)
    } else if !wolff_norm.is_finite() {
        ("wolff norm infinite".to_string(), true)
    } else if !dlbo.is_finite() {
        ("inconclusive: DLBO constant infinite".to_string(), true)
    } else if wolff_norm > 0.0 && empirical_sup / wolff_norm <= band.1 {
        ("pass: equivalence".to_string(), true)
    } else {
        ("fail: trace ratio above band".to_string(), false)
    };
    Ok(UpperTriangle {
        wolff_norm,
        empirical_sup,
        primal_sup,
        dual_sup,
        dlbo,
        verdict,
        pass,
    })
}

fn check_log_params(beta: f64, c: f64, n: usize) -> Result<()> {
    if !(beta > 1.0 && beta <= 1.5) {
        return Err(Error::InvalidArgument(format!(
            "counterexample needs 1 < beta <= 3/2, got {beta}"
        )));
    }
    if n == 0 || !(c >= (beta / n as f64).exp() * (1.0 - 1e-15)) {
        return Err(Error::InvalidArgument(format!(
            "counterexample needs C >= e^(beta/n), got {c}"
        )));
    }
    Ok(())
}

/// Partial sums `S_E(L) = Σ_{l=0}^{L} log^{-β}(C 2^l)` and
/// `S_W̄(L) = Σ_{l=0}^{L} log^{-(2β-2)}(C 2^l)` at each checkpoint `L`
/// (increasing).
pub fn counterexample_partial_sums(
    beta: f64,
    c: f64,
    n: usize,
    checkpoints: &[u64],
) -> Result<Vec<(u64, f64, f64)>> {
    check_log_params(beta, c, n)?;
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("checkpoints must increase".into()));
    }
    let (lc, l2) = (c.ln(), std::f64::consts::LN_2);
    let mut out = Vec::with_capacity(checkpoints.len());
    let (mut se, mut sw) = (0.0, 0.0);
    let mut l = 0u64;
    for &cp in checkpoints {
        while l <= cp {
            let lg = lc + l as f64 * l2;
            se += lg.powf(-beta);
            sw += lg.powf(-(2.0 * beta - 2.0));
            l += 1;
        }
        out.push((cp, se, sw));
    }
    Ok(out)
}

pub fn counterexample_series(beta: f64, c: f64, n: usize, terms: u64) -> Result<(f64, f64)> {
    let v = counterexample_partial_sums(beta, c, n, &[terms])?;
    Ok((v[0].1, v[0].2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleFields {
    pub energy: f64,
    pub min_interior_wolff_bar: f64,
    pub wolff_integral: f64,
    pub dominance_holds: bool,
}

/// Log kernel on `[-1, 2)` at levels `0..=depth`, σ Lebesgue on `[-1, 2)`,
/// μ Lebesgue on `[0, 1)`, `p = 2`. Interior atoms are those in `[1/4, 3/4)`.
pub fn check_counterexample_fields(beta: f64, c: f64, depth: i32) -> Result<CounterexampleFields> {
    check_log_params(beta, c, 1)?;
    let window = LatticeWindow::new(0, depth, vec![-1], vec![2], vec![0.0])?;
    let sigma = AtomicMeasure::lebesgue_grid(&[-1.0], &[2.0], depth)?;
    let mu = AtomicMeasure::lebesgue_grid(&[0.0], &[1.0], depth)?;
    let kernel = DyadicKernelMap::radial(RadialKernel::log_kernel(beta, c, 1)?);
    let pot = DyadicPotentials::build(&kernel, &sigma, &mu, Exponents::new(2.0)?, &window)?;
    let mut min_bar = f64::INFINITY;
    let mut dominance = true;
    for (l, (x, _)) in mu.leaves(&window)?.iter().zip(mu.iter()) {
        let Some(l) = *l else { continue };
        let (w, wb) = (pot.wolff_at_leaf(l), pot.wolff_bar_at_leaf(l));
        dominance &= w <= wb * (1.0 + 1e-12);
        if (0.25..0.75).contains(&x[0]) {
            min_bar = min_bar.min(wb);
        }
    }
    Ok(CounterexampleFields {
        energy: pot.energy(&sigma)?,
        min_interior_wolff_bar: min_bar,
        wolff_integral: pot.wolff_integral(),
        dominance_holds: dominance,
    })
}

/// Smallest `j0` with `2^{j0} > 2√n + 1`.
pub fn shift_scale_offset(n: usize) -> i32 {
    let target = 2.0 * (n as f64).sqrt() + 1.0;
    let mut j0 = 0;
    while pow2(j0) <= target {
        j0 += 1;
    }
    j0
}

fn ball_volume(n: usize, r: f64) -> f64 {
    let mut v = [1.0, 2.0];
    for k in 2..=n {
        let next = v[(k - 2) % 2] * 2.0 * std::f64::consts::PI / k as f64;
        v[k % 2] = next;
    }
    v[n % 2] * r.powi(n as i32)
}

/// `Σ_{ℓ <= top} k(2^-ℓ / 4)`.
fn shifted_level_sum(kernel: &RadialKernel, top: i32) -> f64 {
    if let (Profile::Riesz { alpha, dim }, None) = (kernel.profile(), kernel.cutoff()) {
        let e = *dim as f64 - alpha;
        return 2f64.powf((top as f64 + 2.0) * e) / (1.0 - 2f64.powf(-e));
    }
    if !kernel.log_integrable_at_infinity() {
        return f64::INFINITY;
    }
    let mut sum = 0.0;
    for l in (top - 4000..=top).rev() {
        let r = pow2(-l) / 4.0;
        if kernel.cutoff().is_some_and(|c| r > c) {
            break;
        }
        let v = kernel.eval(r);
        sum += v;
        if v <= sum * 1e-18 {
            break;
        }
    }
    sum
}

/// Finest level at which `x` and `y` share a cube of the lattice shifted by
/// `z`; `None` when they never do (opposite sides of a lattice axis).
fn finest_common_level(x: &[f64], y: &[f64], z: &[f64]) -> Option<i32> {
    let mut sep: f64 = 0.0;
    for i in 0..x.len() {
        let (a, b) = (x[i] - z[i], y[i] - z[i]);
        if (a < 0.0) != (b < 0.0) {
            return None;
        }
        sep = sep.max((a - b).abs());
    }
    if sep == 0.0 {
        return Some(i32::MAX);
    }
    let mut l = (-sep.log2()).ceil() as i32 + 1;
    loop {
        if (0..x.len()).all(|i| cell_index(x[i], z[i], l) == cell_index(y[i], z[i], l)) {
            return Some(l);
        }
        l -= 1;
    }
}

/// `T_{K̃_{D_z}}[μ](x)` with `K̃(Q) = k(r_Q / 4)`, summed over all levels.
fn shifted_operator(kernel: &RadialKernel, mu: &AtomicMeasure, x: &[f64], z: &[f64]) -> f64 {
    mu.iter()
        .map(|(y, w)| match finest_common_level(x, y, z) {
            None => 0.0,
            Some(i32::MAX) => ext::mul(w, kernel.value_at_zero()),
            Some(l) => ext::mul(w, shifted_level_sum(kernel, l)),
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftedPoint {
    /// `T_k^{2^j}[μ](x)`
    pub lhs: f64,
    /// `|B_{j+j0}| / 2^{jn}` times the mean of `T_{K̃_{D_z}}[μ](x)`
    pub estimate: f64,
    pub std_error: f64,
    /// `lhs / (estimate - 3 std_error)`
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedAverage {
    pub j0: i32,
    pub samples: usize,
    pub points: Vec<ShiftedPoint>,
    /// Largest ratio over points with `lhs > 0` (zero when there are none).
    pub max_ratio: f64,
}

/// Monte Carlo check of
/// `T_k^{2^j}[μ](x) <= C 2^{-jn} ∫_{|z| <= 2^{j+j0}} T_{K̃_{D_z}}[μ](x) dz`
/// with uniform shifts drawn in blocks of [`SHIFT_BLOCK`], block `b` using
/// stream `b` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn shifted_average_check(
    kernel: &RadialKernel,
    mu: &AtomicMeasure,
    j: i32,
    shift_samples: usize,
    x_samples: &[Vec<f64>],
    seed: u64,
    exec: Execution,
) -> Result<ShiftedAverage> {
    let n = mu.dim();
    if shift_samples < 2 {
        return Err(Error::Degenerate("need at least two shift draws".into()));
    }
    if let Some(x) = x_samples.iter().find(|x| x.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    let j0 = shift_scale_offset(n);
    let radius = pow2(j + j0);
    let blocks = shift_samples.div_ceil(SHIFT_BLOCK);
    let partial = exec.map_range(blocks, |b| {
        let mut rng = rng_for(seed, b as u64);
        let count = SHIFT_BLOCK.min(shift_samples - b * SHIFT_BLOCK);
        let mut sums = vec![(0.0f64, 0.0f64); x_samples.len()];
        let mut z = vec![0.0; n];
        for _ in 0..count {
            loop {
                z.iter_mut().for_each(|c| *c = rng.gen_range(-radius..radius));
                if z.iter().map(|c| c * c).sum::<f64>() <= radius * radius {
                    break;
                }
            }
            for (s, x) in sums.iter_mut().zip(x_samples) {
                let t = shifted_operator(kernel, mu, x, &z);
                s.0 += t;
                s.1 += t * t;
            }
        }
        sums
    });
    let mut sums = vec![(0.0f64, 0.0f64); x_samples.len()];
    for block in partial {
        for (acc, s) in sums.iter_mut().zip(block) {
            acc.0 += s.0;
            acc.1 += s.1;
        }
    }
    let scale = ball_volume(n, radius) / pow2(j).powi(n as i32);
    let count = shift_samples as f64;
    let mut points = Vec::with_capacity(x_samples.len());
    let mut max_ratio: f64 = 0.0;
    for (x, &(s, s2)) in x_samples.iter().zip(&sums) {
        let lhs = crate::potentials::t_continuous_trunc(kernel, mu, pow2(j), x)?;
        let mean = s / count;
        let var = ((s2 / count - mean * mean) * count / (count - 1.0)).max(0.0);
        let estimate = scale * mean;
        let std_error = scale * (var / count).sqrt();
        let lower = estimate - 3.0 * std_error;
        let ratio = if lhs == 0.0 {
            0.0
        } else if lower > 0.0 {
            lhs / lower
        } else {
            f64::INFINITY
        };
        if lhs > 0.0 {
            max_ratio = max_ratio.max(ratio);
        }
        points.push(ShiftedPoint {
            lhs,
            estimate,
            std_error,
            ratio,
        });
    }
    Ok(ShiftedAverage {
        j0,
        samples: shift_samples,
        points,
        max_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dilation {
    /// `Σ k(c r_Q) σ(Q) (∫_Q K̄ dμ)^{p'-1} μ(Q)` over the undilated sum
    pub sum_ratio: f64,
    /// `‖W_c‖_{L^r(μ)} / ‖W‖_{L^r(μ)}`
    pub norm_ratio: f64,
    pub r: f64,
    /// Empirical doubling constant of σ at its own atoms and the window scales.
    pub doubling: Option<f64>,
}

/// Effect of replacing the outer `k(r_Q)` by `k(c r_Q)` in the Wolff sum.
/// `r` is the trace exponent when `q` is set and 1 otherwise.
pub fn check_kernel_dilation(
    kernel: &RadialKernel,
    sigma: &AtomicMeasure,
    mu: &AtomicMeasure,
    exps: Exponents,
    window: &LatticeWindow,
    c: f64,
) -> Result<Dilation> {
    let base = DyadicKernelMap::radial(kernel.clone());
    let dilated = DyadicKernelMap::dilated(kernel.clone(), c)?;
    let plain = DyadicPotentials::build(&base, sigma, mu, exps, window)?;
    let scaled = DyadicPotentials::with_outer_kernel(&base, &dilated, sigma, mu, exps, window)?;
    let r = exps.trace_exponent().unwrap_or(1.0);
    let norm = |p: &DyadicPotentials<'_>| -> Result<f64> {
        Ok(ext::pow(p.wolff_power_integral(mu, r)?, 1.0 / r))
    };
    let samples: Vec<Vec<f64>> = sigma.iter().take(16).map(|(x, _)| x.to_vec()).collect();
    let radii: Vec<f64> = (window.coarse_level()..=window.fine_level())
        .map(|l| pow2(-l))
        .collect();
    Ok(Dilation {
        sum_ratio: scaled.wolff_integral() / plain.wolff_integral(),
        norm_ratio: norm(&scaled)? / norm(&plain)?,
        r,
        doubling: sigma.doubling_constant(&samples, &radii).ok(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarLemmas {
    /// Range of `σ(B)^-1 ∫_B k(|x-y|) dσ(y) / k̄(r)(x)`.
    pub reformulation: (f64, f64),
    /// Range of `K̄(Q)(x) / k̄(r_Q)(x)` over the cubes `Q ∋ x`.
    pub relationship: (f64, f64),
    /// Range of `k̄(r)(x) / k̄(2r)(x)`.
    pub doubling: (f64, f64),
    pub samples: usize,
}

fn widen(range: &mut (f64, f64), v: f64) {
    if v.is_finite() && v > 0.0 {
        range.0 = range.0.min(v);
        range.1 = range.1.max(v);
    }
}

/// Empirical two-sided bounds for the three comparisons of the continuous
/// bar kernel, at the given points and radii, with `K(Q) = k(r_Q)`.
pub fn check_bar_lemmas(
    kernel: &RadialKernel,
    sigma: &AtomicMeasure,
    window: &LatticeWindow,
    points: &[Vec<f64>],
    radii: &[f64],
) -> Result<BarLemmas> {
    let field = BarField::build(&DyadicKernelMap::radial(kernel.clone()), sigma, window)?;
    let empty = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut reform, mut rel, mut dbl) = (empty, empty, empty);
    let mut used = 0;
    for x in points {
        let prof = RadialProfile::new(kernel, sigma, x)?;
        for &r in radii {
            let m = prof.mass(r);
            if m == 0.0 {
                continue;
            }
            let bar = prof.bar(r);
            let avg: f64 = sigma
                .iter()
                .filter(|(y, _)| dist(x, y) <= r)
                .map(|(y, w)| ext::mul(w, kernel.eval(dist(x, y))))
                .sum::<f64>()
                / m;
            widen(&mut reform, avg / bar);
            widen(&mut dbl, bar / prof.bar(2.0 * r));
            used += 1;
        }
        if let Some(leaf) = window.leaf_at(x) {
            for (id, v) in field.chain_at_leaf(leaf) {
                let b = prof.bar(window.side_length_of(id));
                if prof.mass(window.side_length_of(id)) > 0.0 {
                    widen(&mut rel, v / b);
                }
            }
        }
    }
    if used == 0 || rel.0 > rel.1 {
        return Err(Error::Degenerate("every sample has zero σ-mass".into()));
    }
    Ok(BarLemmas {
        reformulation: reform,
        relationship: rel,
        doubling: dbl,
        samples: used,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationRow {
    pub depth: i32,
    pub value: f64,
    pub rel_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationTable {
    pub rows: Vec<TruncationRow>,
    /// Whether the last relative change is at most the tolerance.
    pub converged: bool,
}

/// Re-evaluates `f` at each depth and tabulates successive relative changes.
pub fn truncation_sweep<F>(depths: &[i32], tol: f64, f: F) -> Result<TruncationTable>
where
    F: Fn(i32) -> Result<f64>,
{
    if depths.is_empty() || depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("depths must be nonempty and increasing".into()));
    }
    let mut rows: Vec<TruncationRow> = Vec::with_capacity(depths.len());
    for &d in depths {
        let value = f(d)?;
        let rel_change = rows.last().map(|prev| ext::rel_diff(value, prev.value));
        rows.push(TruncationRow {
            depth: d,
            value,
            rel_change,
        });
    }
    let converged = rows.len() >= 2
        && rows.iter().all(|r| r.value.is_finite())
        && rows.last().unwrap().rel_change.is_some_and(|c| c <= tol);
    Ok(TruncationTable { rows, converged })
}
