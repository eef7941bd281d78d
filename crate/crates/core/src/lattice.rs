//! Dyadic cubes, shifted lattices and finite windows over them.
//!
//! A cube is stored as an integer pair `(level, index)` plus the lattice
//! shift `z`; as a point set it is `z + Π [index_i 2^-level, (index_i + 1) 2^-level)`.
//! Ancestry and containment are integer operations, the shift only enters
//! when a real point is located.
//!
//! A [`LatticeWindow`] is a finite truncation of the lattice: a rectangular
//! block of root cubes at `coarse_level` and all their descendants down to
//! `fine_level`. Cubes of a window carry dense ids, assigned coarse-to-fine
//! and in lexicographic index order within a level, so every per-cube
//! quantity in the crate is a plain `Vec<f64>` indexed by id. Parents always
//! have smaller ids than their children, so a reverse sweep over ids is a
//! bottom-up tree pass.

use crate::error::{Error, Result};

/// `2^level` as an exact power of two.
#[inline]
pub(crate) fn pow2(level: i32) -> f64 {
    2f64.powi(level)
}

/// Index of the level-`level` cell of the `shift` lattice containing the
/// coordinate `x` (half-open convention).
#[inline]
pub(crate) fn cell_index(x: f64, shift: f64, level: i32) -> i64 {
    ((x - shift) * pow2(level)).floor() as i64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DyadicCube {
    pub level: i32,
    pub index: Vec<i64>,
    pub shift: Vec<f64>,
}

impl DyadicCube {
    pub fn new(level: i32, index: Vec<i64>, shift: Vec<f64>) -> Result<Self> {
        if index.len() != shift.len() {
            return Err(Error::DimensionMismatch {
                expected: index.len(),
                got: shift.len(),
            });
        }
        if index.is_empty() {
            return Err(Error::InvalidArgument("cube dimension must be >= 1".into()));
        }
        Ok(Self { level, index, shift })
    }

    /// Cube of the unshifted lattice.
    pub fn unshifted(level: i32, index: Vec<i64>) -> Self {
        let n = index.len();
        Self {
            level,
            index,
            shift: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    pub fn side_length(&self) -> f64 {
        pow2(-self.level)
    }

    pub fn volume(&self) -> f64 {
        pow2(-self.level * self.dim() as i32)
    }

    pub fn lower_corner(&self) -> Vec<f64> {
        let r = self.side_length();
        self.index
            .iter()
            .zip(&self.shift)
            .map(|(&k, &z)| z + k as f64 * r)
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        let r = self.side_length();
        self.index
            .iter()
            .zip(&self.shift)
            .map(|(&k, &z)| z + (k as f64 + 0.5) * r)
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(&self.shift)
                .zip(&self.index)
                .all(|((&xi, &zi), &ki)| cell_index(xi, zi, self.level) == ki)
    }

    pub fn parent(&self) -> DyadicCube {
        self.ancestor_pow2(1)
    }

    /// `2^j Q`: the ancestor with side `2^j r_Q` in the infinite lattice.
    pub fn ancestor_pow2(&self, j: u32) -> DyadicCube {
        DyadicCube {
            level: self.level - j as i32,
            index: self.index.iter().map(|&k| k >> j).collect(),
            shift: self.shift.clone(),
        }
    }

    pub fn children(&self) -> Vec<DyadicCube> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| DyadicCube {
                level: self.level + 1,
                index: self
                    .index
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| 2 * k + ((mask >> (n - 1 - i)) & 1) as i64)
                    .collect(),
                shift: self.shift.clone(),
            })
            .collect()
    }

    /// `self ⊆ other`, for cubes of the same lattice.
    pub fn is_within(&self, other: &DyadicCube) -> bool {
        if self.shift != other.shift || self.level < other.level {
            return false;
        }
        let j = (self.level - other.level) as u32;
        self.index
            .iter()
            .zip(&other.index)
            .all(|(&a, &b)| a >> j == b)
    }
}

/// Finite level-range window of a (possibly shifted) dyadic lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeWindow {
    dim: usize,
    coarse: i32,
    fine: i32,
    root_lo: Vec<i64>,
    root_hi: Vec<i64>,
    shift: Vec<f64>,
    level_start: Vec<usize>,
    parents: Vec<usize>,
}

const NO_PARENT: usize = usize::MAX;

impl LatticeWindow {
    /// Window whose root region is the block of coarse-level cubes with
    /// indices in `[root_lo_i, root_hi_i)` for every coordinate.
    pub fn new(
        coarse: i32,
        fine: i32,
        root_lo: Vec<i64>,
        root_hi: Vec<i64>,
        shift: Vec<f64>,
    ) -> Result<Self> {
        let dim = root_lo.len();
        if dim == 0 {
            return Err(Error::InvalidWindow("dimension must be >= 1".into()));
        }
        if root_hi.len() != dim || shift.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: if root_hi.len() != dim {
                    root_hi.len()
                } else {
                    shift.len()
                },
            });
        }
        if coarse > fine {
            return Err(Error::InvalidWindow(format!(
                "coarse level {coarse} exceeds fine level {fine}"
            )));
        }
        if root_lo.iter().zip(&root_hi).any(|(a, b)| a >= b) {
            return Err(Error::InvalidWindow("empty root region".into()));
        }
        if shift.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidWindow("shift must be finite".into()));
        }
        let depth = (fine - coarse) as u32;
        let roots: u128 = root_lo
            .iter()
            .zip(&root_hi)
            .map(|(a, b)| (b - a) as u128)
            .product();
        let mut total: u128 = 0;
        let mut level_start = Vec::with_capacity(depth as usize + 2);
        for d in 0..=depth {
            level_start.push(total as usize);
            total += roots << (dim as u32 * d);
            if total > (1u128 << 30) {
                return Err(Error::InvalidWindow(format!(
                    "window too large: more than 2^30 cubes at depth {d}"
                )));
            }
        }
        level_start.push(total as usize);

        let mut w = Self {
            dim,
            coarse,
            fine,
            root_lo,
            root_hi,
            shift,
            level_start,
            parents: Vec::new(),
        };
        let mut parents = vec![NO_PARENT; total as usize];
        let mut idx = vec![0i64; dim];
        for d in 1..=depth {
            for id in w.level_start[d as usize]..w.level_start[d as usize + 1] {
                w.unrank(d, id - w.level_start[d as usize], &mut idx);
                idx.iter_mut().for_each(|k| *k >>= 1);
                parents[id] = w.level_start[d as usize - 1] + w.rank(d - 1, &idx);
            }
        }
        w.parents = parents;
        Ok(w)
    }

    /// Window over the unit cube `[0,1)^n` of the unshifted lattice.
    pub fn unit(dim: usize, coarse: i32, fine: i32) -> Result<Self> {
        if coarse < 0 {
            return Err(Error::InvalidWindow(
                "unit window needs coarse level >= 0".into(),
            ));
        }
        let side = 1i64 << coarse;
        Self::new(coarse, fine, vec![0; dim], vec![side; dim], vec![0.0; dim])
    }

    /// Smallest window whose root region covers the box `[lo, hi)`.
    pub fn covering_box(
        lo: &[f64],
        hi: &[f64],
        coarse: i32,
        fine: i32,
        shift: Vec<f64>,
    ) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != shift.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len().max(shift.len()),
            });
        }
        let s = pow2(coarse);
        let root_lo = lo
            .iter()
            .zip(&shift)
            .map(|(&a, &z)| ((a - z) * s).floor() as i64)
            .collect();
        let root_hi = hi
            .iter()
            .zip(&shift)
            .map(|(&b, &z)| ((b - z) * s).ceil() as i64)
            .collect();
        Self::new(coarse, fine, root_lo, root_hi, shift)
    }

    /// Same root block and levels, different lattice shift.
    pub fn with_shift(&self, shift: Vec<f64>) -> Result<Self> {
        Self::new(
            self.coarse,
            self.fine,
            self.root_lo.clone(),
            self.root_hi.clone(),
            shift,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn coarse_level(&self) -> i32 {
        self.coarse
    }
    pub fn fine_level(&self) -> i32 {
        self.fine
    }
    pub fn depth(&self) -> u32 {
        (self.fine - self.coarse) as u32
    }
    pub fn shift(&self) -> &[f64] {
        &self.shift
    }
    pub fn root_lo(&self) -> &[i64] {
        &self.root_lo
    }
    pub fn root_hi(&self) -> &[i64] {
        &self.root_hi
    }

    /// Number of cubes in the window.
    pub fn len(&self) -> usize {
        *self.level_start.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn root_count(&self) -> usize {
        self.level_start[1]
    }

    /// Id range of the cubes at `level`.
    pub fn level_ids(&self, level: i32) -> std::ops::Range<usize> {
        let d = (level - self.coarse) as usize;
        self.level_start[d]..self.level_start[d + 1]
    }

    pub fn leaf_ids(&self) -> std::ops::Range<usize> {
        self.level_ids(self.fine)
    }

    pub fn level_of(&self, id: usize) -> i32 {
        let d = self.level_start.partition_point(|&s| s <= id) - 1;
        self.coarse + d as i32
    }

    pub fn side_length_of(&self, id: usize) -> f64 {
        pow2(-self.level_of(id))
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        match self.parents[id] {
            NO_PARENT => None,
            p => Some(p),
        }
    }

    /// Ids from `id` up to its root, finest first.
    pub fn ancestors(&self, id: usize) -> Ancestors<'_> {
        Ancestors {
            window: self,
            next: Some(id),
        }
    }

    fn strides(&self, d: u32) -> impl Iterator<Item = i64> + '_ {
        self.root_lo
            .iter()
            .zip(&self.root_hi)
            .map(move |(a, b)| (b - a) << d)
    }

    fn rank(&self, d: u32, idx: &[i64]) -> usize {
        let mut r: i64 = 0;
        for ((ext, &k), &lo) in self.strides(d).zip(idx).zip(&self.root_lo) {
            r = r * ext + (k - (lo << d));
        }
        r as usize
    }

    fn unrank(&self, d: u32, mut r: usize, out: &mut [i64]) {
        for i in (0..self.dim).rev() {
            let e = ((self.root_hi[i] - self.root_lo[i]) << d) as usize;
            out[i] = (self.root_lo[i] << d) + (r % e) as i64;
            r /= e;
        }
    }

    fn in_block(&self, d: u32, idx: &[i64]) -> bool {
        idx.iter()
            .zip(self.root_lo.iter().zip(&self.root_hi))
            .all(|(&k, (&lo, &hi))| k >= lo << d && k < hi << d)
    }

    fn check_level(&self, level: i32) -> Result<u32> {
        if level < self.coarse || level > self.fine {
            return Err(Error::LevelOutOfRange {
                level,
                coarse: self.coarse,
                fine: self.fine,
            });
        }
        Ok((level - self.coarse) as u32)
    }

    pub fn cube(&self, id: usize) -> DyadicCube {
        let level = self.level_of(id);
        let d = (level - self.coarse) as u32;
        let mut index = vec![0; self.dim];
        self.unrank(d, id - self.level_start[d as usize], &mut index);
        DyadicCube {
            level,
            index,
            shift: self.shift.clone(),
        }
    }

    pub fn id_of(&self, cube: &DyadicCube) -> Option<usize> {
        if cube.shift != self.shift || cube.dim() != self.dim {
            return None;
        }
        let d = self.check_level(cube.level).ok()?;
        self.in_block(d, &cube.index)
            .then(|| self.level_start[d as usize] + self.rank(d, &cube.index))
    }

    /// Id of the unique cube of `level` containing `x`.
    pub fn id_at(&self, x: &[f64], level: i32) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let d = self.check_level(level)?;
        let idx: Vec<i64> = x
            .iter()
            .zip(&self.shift)
            .map(|(&xi, &zi)| cell_index(xi, zi, level))
            .collect();
        if !self.in_block(d, &idx) {
            return Err(Error::OutOfWindow { point: x.to_vec() });
        }
        Ok(self.level_start[d as usize] + self.rank(d, &idx))
    }

    pub fn cube_at(&self, x: &[f64], level: i32) -> Result<DyadicCube> {
        self.id_at(x, level).map(|id| self.cube(id))
    }

    /// Finest window cube containing `x`, if `x` is in the root region.
    pub fn leaf_at(&self, x: &[f64]) -> Option<usize> {
        self.id_at(x, self.fine).ok()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.leaf_at(x).is_some()
    }

    /// Ancestor chain of the leaf containing `x`, coarse to fine.
    pub fn chain(&self, x: &[f64]) -> Result<Vec<usize>> {
        let leaf = self.id_at(x, self.fine)?;
        let mut ids: Vec<usize> = self.ancestors(leaf).collect();
        ids.reverse();
        Ok(ids)
    }

    /// `2^j Q`, restricted to the window.
    pub fn ancestor_pow2(&self, cube: &DyadicCube, j: u32) -> Result<DyadicCube> {
        let target = cube.level - j as i32;
        if target < self.coarse {
            return Err(Error::LevelOutOfRange {
                level: target,
                coarse: self.coarse,
                fine: self.fine,
            });
        }
        Ok(cube.ancestor_pow2(j))
    }

    /// All window cubes in id order (coarse to fine, lexicographic).
    pub fn cubes(&self) -> Vec<DyadicCube> {
        (0..self.len()).map(|id| self.cube(id)).collect()
    }
}

pub struct Ancestors<'a> {
    window: &'a LatticeWindow,
    next: Option<usize>,
}

impl Iterator for Ancestors<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let cur = self.next?;
        self.next = self.window.parent(cur);
        Some(cur)
    }
}

/// Free-function form of [`LatticeWindow::cube_at`].
pub fn cube_at(point: &[f64], level: i32, window: &LatticeWindow) -> Result<DyadicCube> {
    window.cube_at(point, level)
}

/// Free-function form of [`LatticeWindow::ancestor_pow2`].
pub fn ancestor_pow2(cube: &DyadicCube, j: u32, window: &LatticeWindow) -> Result<DyadicCube> {
    window.ancestor_pow2(cube, j)
}

pub fn cubes_of_window(window: &LatticeWindow) -> Vec<DyadicCube> {
    window.cubes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w1(fine: i32) -> LatticeWindow {
        LatticeWindow::unit(1, 0, fine).unwrap()
    }

    #[test]
    fn cube_at_examples() {
        let w = w1(3);
        let q = w.cube_at(&[0.3], 2).unwrap();
        assert_eq!(q.index, vec![1]);
        assert_eq!(q.lower_corner(), vec![0.25]);
        assert_eq!(q.side_length(), 0.25);

        let q = w.cube_at(&[0.25], 2).unwrap();
        assert_eq!(q.index, vec![1]);

        let shifted = LatticeWindow::covering_box(&[0.1], &[1.1], 0, 3, vec![0.1]).unwrap();
        let q = shifted.cube_at(&[0.3], 2).unwrap();
        assert_eq!(q.index, vec![0]);
        assert!((q.lower_corner()[0] - 0.1).abs() < 1e-15);
        assert!((q.lower_corner()[0] + q.side_length() - 0.35).abs() < 1e-15);
    }

    #[test]
    fn cube_at_errors() {
        let w = w1(3);
        assert!(matches!(w.cube_at(&[1.0], 2), Err(Error::OutOfWindow { .. })));
        assert!(matches!(w.cube_at(&[-0.1], 2), Err(Error::OutOfWindow { .. })));
        assert!(matches!(
            w.cube_at(&[0.5], 4),
            Err(Error::LevelOutOfRange { .. })
        ));
        assert!(matches!(
            w.cube_at(&[0.5, 0.5], 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ancestor_examples() {
        let w = w1(3);
        let q = DyadicCube::unshifted(2, vec![1]);
        let a = w.ancestor_pow2(&q, 2).unwrap();
        assert_eq!((a.level, a.index.clone()), (0, vec![0]));
        assert_eq!(w.ancestor_pow2(&q, 0).unwrap(), q);
        let q = DyadicCube::unshifted(2, vec![2]);
        let a = w.ancestor_pow2(&q, 1).unwrap();
        assert_eq!(a.lower_corner(), vec![0.5]);
        assert_eq!(a.side_length(), 0.5);
        assert!(w.ancestor_pow2(&q, 3).is_err());
    }

    #[test]
    fn enumeration_examples() {
        let cubes = w1(1).cubes();
        let corners: Vec<(f64, f64)> = cubes
            .iter()
            .map(|c| (c.lower_corner()[0], c.side_length()))
            .collect();
        assert_eq!(corners, vec![(0.0, 1.0), (0.0, 0.5), (0.5, 0.5)]);
        assert_eq!(w1(2).len(), 7);
        assert_eq!(LatticeWindow::unit(2, 0, 1).unwrap().len(), 5);
    }

    #[test]
    fn cube_count_formula() {
        let w = LatticeWindow::new(-1, 2, vec![-1, 0], vec![2, 1], vec![0.0, 0.0]).unwrap();
        let roots = 3;
        let expected: usize = (0..=3).map(|l| roots << (2 * l)).sum();
        assert_eq!(w.len(), expected);
        assert_eq!(w.root_count(), roots);
    }

    #[test]
    fn negative_levels_and_indices() {
        let w = LatticeWindow::new(-2, 1, vec![-1], vec![1], vec![0.0]).unwrap();
        let q = w.cube_at(&[-3.0], -2).unwrap();
        assert_eq!(q.index, vec![-1]);
        assert_eq!(q.side_length(), 4.0);
        let leaf = w.cube_at(&[-0.1], 1).unwrap();
        assert_eq!(leaf.index, vec![-1]);
        assert_eq!(leaf.ancestor_pow2(3), q);
    }

    #[test]
    fn ids_round_trip_and_parents() {
        let w = LatticeWindow::new(0, 3, vec![0, -1], vec![2, 1], vec![0.25, 0.0]).unwrap();
        for id in 0..w.len() {
            let c = w.cube(id);
            assert_eq!(w.id_of(&c), Some(id));
            match w.parent(id) {
                Some(p) => {
                    assert!(p < id);
                    assert_eq!(w.cube(p), c.parent());
                }
                None => assert_eq!(c.level, 0),
            }
        }
    }

    #[test]
    fn children_partition_parent() {
        let q = DyadicCube::unshifted(1, vec![1, 0]);
        let kids = q.children();
        assert_eq!(kids.len(), 4);
        for k in &kids {
            assert!(k.is_within(&q));
            assert_eq!(k.parent(), q);
        }
    }

    proptest! {
        #[test]
        fn partition_property(x in 0.0f64..1.0, y in 0.0f64..1.0, level in 0i32..=5) {
            let w = LatticeWindow::unit(2, 0, 5).unwrap();
            let p = [x, y];
            let containing: Vec<usize> = w.level_ids(level)
                .filter(|&id| w.cube(id).contains(&p))
                .collect();
            prop_assert_eq!(containing.len(), 1);
            prop_assert_eq!(containing[0], w.id_at(&p, level).unwrap());
        }

        #[test]
        fn ancestor_composition(level in 0i32..20, k in 0i64..(1 << 20), a in 0u32..8, b in 0u32..8) {
            let q = DyadicCube::unshifted(level, vec![k >> (20 - level)]);
            prop_assert_eq!(q.ancestor_pow2(a).ancestor_pow2(b), q.ancestor_pow2(a + b));
        }

        #[test]
        fn contains_iff_located(x in -2.0f64..2.0, z in -1.0f64..1.0, level in 0i32..=4) {
            let w = LatticeWindow::covering_box(&[-2.0], &[2.0], 0, 4, vec![z]).unwrap();
            if let Ok(q) = w.cube_at(&[x], level) {
                prop_assert!(q.contains(&[x]));
                let other = DyadicCube { level, index: vec![q.index[0] + 1], shift: vec![z] };
                prop_assert!(!other.contains(&[x]));
            }
        }
    }
}
