//! Finite atomic measures standing in for σ, μ and ν.
//!
//! Lebesgue measure is represented by a fine grid of atoms at cell centers.
//! On that representation every dyadic cube at or above the grid level has
//! exactly its Lebesgue volume as mass.

use crate::error::{Error, Result};
use crate::lattice::{pow2, DyadicCube, LatticeWindow};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AtomicMeasure {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            positions: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn from_atoms<P: AsRef<[f64]>>(
        dim: usize,
        atoms: impl IntoIterator<Item = (P, f64)>,
    ) -> Result<Self> {
        let mut m = Self::new(dim);
        for (p, w) in atoms {
            m.push(p.as_ref(), w)?;
        }
        Ok(m)
    }

    pub fn point_mass(position: &[f64], weight: f64) -> Result<Self> {
        Self::from_atoms(position.len(), [(position, weight)])
    }

    pub fn push(&mut self, position: &[f64], weight: f64) -> Result<()> {
        if position.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: position.len(),
            });
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidMeasure(format!(
                "atom weight must be finite and nonnegative, got {weight}"
            )));
        }
        if position.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("atom position must be finite".into()));
        }
        self.positions.extend_from_slice(position);
        self.weights.push(weight);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.positions
            .chunks_exact(self.dim.max(1))
            .zip(self.weights.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            positions: self.positions.clone(),
            weights: self.weights.iter().map(|w| w * c).collect(),
        }
    }

    /// `f dσ` for a density given at the atoms.
    pub fn reweighted(&self, density: &[f64]) -> Result<Self> {
        if density.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: density.len(),
            });
        }
        let mut out = Self::new(self.dim);
        for ((p, w), &f) in self.iter().zip(density) {
            out.push(p, crate::ext::mul(w, f))?;
        }
        Ok(out)
    }

    pub fn plus(&self, other: &AtomicMeasure) -> Result<Self> {
        self.check_dim(other.dim)?;
        let mut out = self.clone();
        out.positions.extend_from_slice(&other.positions);
        out.weights.extend_from_slice(&other.weights);
        Ok(out)
    }

    /// Same atoms translated by `z`.
    pub fn translated(&self, z: &[f64]) -> Result<Self> {
        self.check_dim(z.len())?;
        let mut out = self.clone();
        for p in out.positions.chunks_exact_mut(self.dim) {
            p.iter_mut().zip(z).for_each(|(a, b)| *a += b);
        }
        Ok(out)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    /// Mass of a half-open cube, by direct scan.
    pub fn cube_mass(&self, cube: &DyadicCube) -> Result<f64> {
        self.check_dim(cube.dim())?;
        Ok(self
            .iter()
            .filter(|(p, _)| cube.contains(p))
            .map(|(_, w)| w)
            .sum())
    }

    /// Mass of the closed Euclidean ball `B(center, radius)`.
    pub fn ball_mass(&self, center: &[f64], radius: f64) -> Result<f64> {
        self.check_dim(center.len())?;
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        let r2 = radius * radius;
        Ok(self
            .iter()
            .filter(|(p, _)| dist2(p, center) <= r2)
            .map(|(_, w)| w)
            .sum())
    }

    /// Finest window cube of every atom (`None` for atoms outside the window).
    pub fn leaves(&self, window: &LatticeWindow) -> Result<Vec<Option<usize>>> {
        self.check_dim(window.dim())?;
        Ok(self.iter().map(|(p, _)| window.leaf_at(p)).collect())
    }

    /// Mass of every window cube, indexed by cube id, in one bottom-up pass.
    pub fn cube_masses(&self, window: &LatticeWindow) -> Result<Vec<f64>> {
        let leaves = self.leaves(window)?;
        let mut mass = vec![0.0; window.len()];
        for (leaf, &w) in leaves.iter().zip(&self.weights) {
            if let Some(id) = leaf {
                mass[*id] += w;
            }
        }
        accumulate_up(window, &mut mass);
        Ok(mass)
    }

    /// One atom per level-`level` cell of the box `[lo, hi)`, weighted by
    /// cell volume.
    pub fn lebesgue_grid(lo: &[f64], hi: &[f64], level: i32) -> Result<Self> {
        let dim = lo.len();
        if hi.len() != dim || dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: hi.len(),
            });
        }
        let s = pow2(level);
        let mut lo_idx = Vec::with_capacity(dim);
        let mut counts = Vec::with_capacity(dim);
        for (&a, &b) in lo.iter().zip(hi) {
            let (ia, ib) = (a * s, b * s);
            if ia.fract() != 0.0 || ib.fract() != 0.0 || ib <= ia {
                return Err(Error::InvalidMeasure(format!(
                    "box [{a}, {b}) is not a union of level-{level} cells"
                )));
            }
            lo_idx.push(ia as i64);
            counts.push((ib - ia) as usize);
        }
        let total: usize = counts.iter().product();
        if total > 1 << 26 {
            return Err(Error::InvalidMeasure(format!(
                "grid of {total} cells is too large"
            )));
        }
        let cell = pow2(-level);
        let weight = pow2(-level * dim as i32);
        let mut m = Self::new(dim);
        m.positions.reserve(total * dim);
        m.weights.reserve(total);
        let mut k = vec![0usize; dim];
        for _ in 0..total {
            for i in 0..dim {
                m.positions
                    .push((lo_idx[i] as f64 + k[i] as f64 + 0.5) * cell);
            }
            m.weights.push(weight);
            for i in (0..dim).rev() {
                k[i] += 1;
                if k[i] < counts[i] {
                    break;
                }
                k[i] = 0;
            }
        }
        Ok(m)
    }

    /// Multiplicative cascade on `[0,1)^n` resolved to `depth` levels.
    ///
    /// At every split the lowest-corner child receives the fraction
    /// `2^-gamma` of its parent's mass and the other `2^n - 1` children
    /// share the rest equally. For `0 < gamma <= n` the heavy fraction is
    /// the largest, so `σ(2^j Q) >= 2^{jγ} σ(Q)` with constant exactly 1.
    pub fn bernoulli_cascade(dim: usize, gamma: f64, depth: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be >= 1".into()));
        }
        if !(gamma > 0.0 && gamma <= dim as f64) {
            return Err(Error::InvalidMeasure(format!(
                "cascade exponent must lie in (0, {dim}], got {gamma}"
            )));
        }
        if depth as usize * dim > 26 {
            return Err(Error::InvalidMeasure("cascade too deep".into()));
        }
        let heavy = 2f64.powf(-gamma);
        let other = (1.0 - heavy) / ((1usize << dim) - 1) as f64;
        let cells = 1usize << (dim * depth as usize);
        let cell = pow2(-(depth as i32));
        let mut m = Self::new(dim);
        let mut k = vec![0u64; dim];
        for _ in 0..cells {
            let mut w = 1.0;
            for l in (0..depth).rev() {
                let light = k.iter().any(|&ki| (ki >> l) & 1 == 1);
                w *= if light { other } else { heavy };
            }
            let pos: Vec<f64> = k.iter().map(|&ki| (ki as f64 + 0.5) * cell).collect();
            m.push(&pos, w)?;
            for i in (0..dim).rev() {
                k[i] += 1;
                if k[i] < 1 << depth {
                    break;
                }
                k[i] = 0;
            }
        }
        Ok(m)
    }

    /// Best constant `C` in `σ(2^j Q) >= C 2^{jγ} σ(Q)` over the window.
    ///
    /// On a finite window the minimum is always positive, so the condition is
    /// declared to hold only when the minimum over all admissible `j` already
    /// occurs for `j <= depth/2`, i.e. the constant does not keep decaying as
    /// the window deepens.
    pub fn reverse_doubling_check(
        &self,
        window: &LatticeWindow,
        gamma: f64,
    ) -> Result<ReverseDoubling> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "reverse doubling exponent must be positive, got {gamma}"
            )));
        }
        let mass = self.cube_masses(window)?;
        let half = window.depth() / 2;
        let mut best = f64::INFINITY;
        let mut best_half = f64::INFINITY;
        let mut any = false;
        for (id, &m) in mass.iter().enumerate() {
            if m <= 0.0 {
                continue;
            }
            any = true;
            for (j, anc) in window.ancestors(id).enumerate() {
                let ratio = mass[anc] / (m * 2f64.powf(j as f64 * gamma));
                best = best.min(ratio);
                if j as u32 <= half {
                    best_half = best_half.min(ratio);
                }
            }
        }
        if !any {
            return Err(Error::Degenerate("no window cube has positive mass".into()));
        }
        Ok(ReverseDoubling {
            holds: best > 0.0 && best >= best_half * (1.0 - 1e-9),
            best_constant: best,
            half_depth_constant: best_half,
        })
    }

    /// Empirical doubling ratio `max σ(B(x,2r)) / σ(B(x,r))` over the samples.
    pub fn doubling_constant(&self, samples: &[Vec<f64>], radii: &[f64]) -> Result<f64> {
        let mut best: Option<f64> = None;
        for x in samples {
            for &r in radii {
                let m1 = self.ball_mass(x, r)?;
                if m1 <= 0.0 {
                    continue;
                }
                let m2 = self.ball_mass(x, 2.0 * r)?;
                best = Some(best.map_or(m2 / m1, |b: f64| b.max(m2 / m1)));
            }
        }
        best.ok_or_else(|| Error::Degenerate("every sampled ball has zero mass".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseDoubling {
    pub holds: bool,
    pub best_constant: f64,
    pub half_depth_constant: f64,
}

/// The distribution function `r ↦ m(B(x, r))` of a measure seen from a
/// fixed center: distinct atom distances with cumulative closed-ball mass.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialMass {
    radii: Vec<f64>,
    mass: Vec<f64>,
}

impl RadialMass {
    pub fn new(measure: &AtomicMeasure, center: &[f64]) -> Result<Self> {
        if measure.dim() != center.len() {
            return Err(Error::DimensionMismatch {
                expected: measure.dim(),
                got: center.len(),
            });
        }
        let mut pts: Vec<(f64, f64)> = measure
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(p, w)| (dist(p, center), w))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut radii: Vec<f64> = Vec::new();
        let mut mass: Vec<f64> = Vec::new();
        let mut acc = 0.0;
        for (d, w) in pts {
            acc += w;
            if radii.last() == Some(&d) {
                *mass.last_mut().unwrap() = acc;
            } else {
                radii.push(d);
                mass.push(acc);
            }
        }
        Ok(Self { radii, mass })
    }

    /// Jump radii, increasing.
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Closed-ball masses at the jump radii.
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// Index of the last jump radius `<= r`.
    pub fn last_within(&self, r: f64) -> Option<usize> {
        self.radii.partition_point(|&d| d <= r).checked_sub(1)
    }

    /// Mass of the closed ball of radius `r`.
    pub fn mass(&self, r: f64) -> f64 {
        self.last_within(r).map_or(0.0, |j| self.mass[j])
    }

    /// Mass of the open ball of radius `r`.
    pub fn mass_open(&self, r: f64) -> f64 {
        match self.radii.partition_point(|&d| d < r) {
            0 => 0.0,
            j => self.mass[j - 1],
        }
    }

    pub fn total(&self) -> f64 {
        self.mass.last().copied().unwrap_or(0.0)
    }
}

/// Adds every cube's value into its parent, finest level first.
pub(crate) fn accumulate_up(window: &LatticeWindow, values: &mut [f64]) {
    for id in (0..window.len()).rev() {
        if let Some(p) = window.parent(id) {
            values[p] += values[id];
        }
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

pub fn cube_mass(measure: &AtomicMeasure, cube: &DyadicCube) -> Result<f64> {
    measure.cube_mass(cube)
}

pub fn ball_mass(measure: &AtomicMeasure, center: &[f64], radius: f64) -> Result<f64> {
    measure.ball_mass(center, radius)
}

pub fn lebesgue_grid(lo: &[f64], hi: &[f64], level: i32) -> Result<AtomicMeasure> {
    AtomicMeasure::lebesgue_grid(lo, hi, level)
}

pub fn reverse_doubling_check(
    measure: &AtomicMeasure,
    window: &LatticeWindow,
    gamma: f64,
) -> Result<ReverseDoubling> {
    measure.reverse_doubling_check(window, gamma)
}

pub fn doubling_constant(
    measure: &AtomicMeasure,
    sample_points: &[Vec<f64>],
    radii: &[f64],
) -> Result<f64> {
    measure.doubling_constant(sample_points, radii)
}
