//! Lattice models of abelian locally compact groups.
//!
//! Every model is a set of cells indexed by integer vectors, with Haar measure
//! equal to counting measure scaled by the cell volume. Group elements act by
//! translation of indices, which permutes cells and therefore preserves the
//! measure of every finite region.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lattice realization of a group together with its cell Haar measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupModel {
    /// `Z^dim` with counting measure.
    IntegerLattice { dim: usize },
    /// The real line cut into cells of width `h`; index `i` is the cell at `i * h`.
    DiscretizedLine { h: f64 },
    /// `Z / qZ`. Every element is periodic; used as a negative control.
    FiniteCyclic { q: i64 },
}

impl GroupModel {
    pub fn integer_lattice(dim: usize) -> Result<Self> {
        let m = GroupModel::IntegerLattice { dim };
        m.validate()?;
        Ok(m)
    }

    pub fn discretized_line(h: f64) -> Result<Self> {
        let m = GroupModel::DiscretizedLine { h };
        m.validate()?;
        Ok(m)
    }

    pub fn finite_cyclic(q: i64) -> Result<Self> {
        let m = GroupModel::FiniteCyclic { q };
        m.validate()?;
        Ok(m)
    }

    /// Shorthand for `Z` with counting measure.
    pub fn z() -> Self {
        GroupModel::IntegerLattice { dim: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GroupModel::IntegerLattice { dim: 0 } => {
                Err(Error::InvalidModel("lattice dimension must be >= 1".into()))
            }
            GroupModel::DiscretizedLine { h } if !(h.is_finite() && h > 0.0) => Err(
                Error::InvalidModel(format!("cell width must be positive and finite, got {h}")),
            ),
            GroupModel::FiniteCyclic { q } if q < 2 => Err(Error::InvalidModel(format!(
                "modulus must be >= 2, got {q}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            GroupModel::IntegerLattice { dim } => dim,
            GroupModel::DiscretizedLine { .. } | GroupModel::FiniteCyclic { .. } => 1,
        }
    }

    pub fn cell_volume(&self) -> f64 {
        match *self {
            GroupModel::DiscretizedLine { h } => h,
            _ => 1.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, GroupModel::FiniteCyclic { .. })
    }

    /// The identity element.
    pub fn identity(&self) -> GroupPoint {
        GroupPoint(vec![0; self.dim()])
    }

    /// Builds a point, reducing residues for the cyclic model.
    pub fn point(&self, coords: Vec<i64>) -> Result<GroupPoint> {
        if coords.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: coords.len(),
            });
        }
        Ok(self.reduce(GroupPoint(coords)))
    }

    pub fn check_point(&self, x: &GroupPoint) -> Result<()> {
        if x.0.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.0.len(),
            });
        }
        if let GroupModel::FiniteCyclic { q } = *self {
            if !(0..q).contains(&x.0[0]) {
                return Err(Error::InvalidModel(format!(
                    "residue {} not reduced modulo {q}",
                    x.0[0]
                )));
            }
        }
        Ok(())
    }

    fn reduce(&self, mut x: GroupPoint) -> GroupPoint {
        if let GroupModel::FiniteCyclic { q } = *self {
            x.0[0] = x.0[0].rem_euclid(q);
        }
        x
    }

    /// `x - s*a` without validation. Callers guarantee matching dimensions.
    pub(crate) fn offset(&self, x: &GroupPoint, a: &GroupPoint, s: i64) -> GroupPoint {
        let coords = x.0.iter().zip(&a.0).map(|(xi, ai)| xi - s * ai).collect();
        self.reduce(GroupPoint(coords))
    }
}

/// A lattice index. For the cyclic model the single coordinate lies in `[0, q)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupPoint(pub Vec<i64>);

impl GroupPoint {
    pub fn new(coords: Vec<i64>) -> Self {
        GroupPoint(coords)
    }

    pub fn scalar(i: i64) -> Self {
        GroupPoint(vec![i])
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn dot(&self, other: &[i64]) -> i64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

impl fmt::Display for GroupPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() == 1 {
            write!(f, "{}", self.0[0])
        } else {
            let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
            write!(f, "({})", parts.join(","))
        }
    }
}

/// A finite set of cells, standing in for a compact subset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompactRegion {
    cells: BTreeSet<GroupPoint>,
}

impl CompactRegion {
    pub fn new<I: IntoIterator<Item = GroupPoint>>(cells: I) -> Self {
        CompactRegion {
            cells: cells.into_iter().collect(),
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// The integer interval `[lo, hi]` on a one-dimensional lattice, inclusive.
    pub fn interval(lo: i64, hi: i64) -> Self {
        Self::new((lo..=hi).map(GroupPoint::scalar))
    }

    /// The inclusive box `lo <= x <= hi`, componentwise.
    pub fn lattice_box(lo: &[i64], hi: &[i64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        let mut cells = vec![Vec::with_capacity(lo.len())];
        for (&l, &h) in lo.iter().zip(hi) {
            let mut next = Vec::new();
            for prefix in &cells {
                for c in l..=h {
                    let mut p = prefix.clone();
                    p.push(c);
                    next.push(p);
                }
            }
            cells = next;
        }
        Ok(Self::new(cells.into_iter().map(GroupPoint)))
    }

    pub fn validate(&self, model: &GroupModel) -> Result<()> {
        self.cells.iter().try_for_each(|x| model.check_point(x))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, x: &GroupPoint) -> bool {
        self.cells.contains(x)
    }

    pub fn iter(&self) -> impl Iterator<Item = &GroupPoint> + '_ {
        self.cells.iter()
    }

    pub fn cells(&self) -> &BTreeSet<GroupPoint> {
        &self.cells
    }

    pub fn insert(&mut self, x: GroupPoint) {
        self.cells.insert(x);
    }

    pub fn union(&self, other: &CompactRegion) -> CompactRegion {
        CompactRegion {
            cells: self.cells.union(&other.cells).cloned().collect(),
        }
    }

    pub fn difference(&self, other: &CompactRegion) -> CompactRegion {
        CompactRegion {
            cells: self.cells.difference(&other.cells).cloned().collect(),
        }
    }

    pub fn intersection(&self, other: &CompactRegion) -> CompactRegion {
        CompactRegion {
            cells: self.cells.intersection(&other.cells).cloned().collect(),
        }
    }

    pub fn is_subset(&self, other: &CompactRegion) -> bool {
        self.cells.is_subset(&other.cells)
    }

    pub fn is_disjoint(&self, other: &CompactRegion) -> bool {
        self.cells.is_disjoint(&other.cells)
    }

    /// `{x - s*a : x in self}`.
    pub fn translated(&self, model: &GroupModel, a: &GroupPoint, s: i64) -> CompactRegion {
        CompactRegion::new(self.cells.iter().map(|x| model.offset(x, a, s)))
    }
}

impl FromIterator<GroupPoint> for CompactRegion {
    fn from_iter<I: IntoIterator<Item = GroupPoint>>(iter: I) -> Self {
        CompactRegion::new(iter)
    }
}

/// Result of the eventual-disjointness scan for the translates of a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aperiodicity {
    /// `K ∩ (K ± n·a) = ∅` for every `n > N`, and `N` is the least such bound.
    Horizon(u64),
    Periodic,
}

impl Aperiodicity {
    pub fn horizon(self) -> Option<u64> {
        match self {
            Aperiodicity::Horizon(n) => Some(n),
            Aperiodicity::Periodic => None,
        }
    }
}

/// `x · a^{-s}`, written additively as `x - s*a`.
pub fn translate(model: &GroupModel, x: &GroupPoint, a: &GroupPoint, s: i64) -> Result<GroupPoint> {
    model.check_point(x)?;
    model.check_point(a)?;
    Ok(model.offset(x, a, s))
}

/// Haar measure of a finite region: number of cells times the cell volume.
pub fn haar_measure(model: &GroupModel, region: &CompactRegion) -> f64 {
    region.len() as f64 * model.cell_volume()
}

/// Least `N` such that `K` and its translates by `±n·a` are disjoint for all `n > N`.
///
/// The scan runs over the difference set `K - K`: a translate `K + n·a` meets `K`
/// exactly when `n·a` is such a difference, so `N` is the largest `|n|` hit.
pub fn aperiodicity_horizon(
    model: &GroupModel,
    region: &CompactRegion,
    a: &GroupPoint,
) -> Result<Aperiodicity> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    model.check_point(a)?;
    region.validate(model)?;
    if model.is_finite() || a.is_zero() {
        return Ok(Aperiodicity::Periodic);
    }
    let (pivot, &a_pivot) =
        a.0.iter()
            .enumerate()
            .find(|(_, &c)| c != 0)
            .expect("nonzero element has a nonzero coordinate");
    let mut horizon = 0u64;
    let cells: Vec<&GroupPoint> = region.iter().collect();
    for x in &cells {
        for y in &cells {
            let d0 = y.0[pivot] - x.0[pivot];
            if d0 % a_pivot != 0 {
                continue;
            }
            let n = d0 / a_pivot;
            let multiple =
                y.0.iter()
                    .zip(&x.0)
                    .zip(&a.0)
                    .all(|((yi, xi), ai)| yi - xi == n * ai);
            if multiple {
                horizon = horizon.max(n.unsigned_abs());
            }
        }
    }
    Ok(Aperiodicity::Horizon(horizon))
}

/// Fails with [`Error::Periodic`] unless `a` has a finite horizon on `K`.
pub fn require_aperiodic(
    model: &GroupModel,
    region: &CompactRegion,
    a: &GroupPoint,
) -> Result<u64> {
    match aperiodicity_horizon(model, region, a)? {
        Aperiodicity::Horizon(n) => Ok(n),
        Aperiodicity::Periodic => Err(Error::Periodic(format!(
            "element {a} generates a relatively compact subgroup of {}",
            model_name(model)
        ))),
    }
}

fn model_name(model: &GroupModel) -> String {
    match *model {
        GroupModel::IntegerLattice { dim } => format!("Z^{dim}"),
        GroupModel::DiscretizedLine { h } => format!("the line with cell width {h}"),
        GroupModel::FiniteCyclic { q } => format!("Z/{q}Z"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: i64) -> GroupPoint {
        GroupPoint::scalar(i)
    }

    #[test]
    fn translate_examples() {
        let z = GroupModel::z();
        assert_eq!(translate(&z, &p(3), &p(1), 2).unwrap(), p(1));
        let z2 = GroupModel::integer_lattice(2).unwrap();
        let x = GroupPoint::new(vec![0, 0]);
        let a = GroupPoint::new(vec![1, -1]);
        assert_eq!(
            translate(&z2, &x, &a, 3).unwrap(),
            GroupPoint::new(vec![-3, 3])
        );
        let c12 = GroupModel::finite_cyclic(12).unwrap();
        assert_eq!(translate(&c12, &p(5), &p(4), 2).unwrap(), p(9));
    }

    #[test]
    fn translate_rejects_dimension_mismatch() {
        let z2 = GroupModel::integer_lattice(2).unwrap();
        let err = translate(&z2, &p(1), &GroupPoint::new(vec![1, 0]), 1).unwrap_err();
        assert_eq!(
            err,
            Error::DimensionMismatch {
                expected: 2,
                got: 1
            }
        );
    }

    #[test]
    fn haar_examples() {
        let z = GroupModel::z();
        assert_eq!(haar_measure(&z, &CompactRegion::interval(0, 9)), 10.0);
        let line = GroupModel::discretized_line(0.25).unwrap();
        assert_eq!(haar_measure(&line, &CompactRegion::interval(-3, 4)), 2.0);
        assert_eq!(haar_measure(&line, &CompactRegion::empty()), 0.0);
    }

    #[test]
    fn invalid_models() {
        assert!(GroupModel::discretized_line(-0.5).is_err());
        assert!(GroupModel::discretized_line(f64::NAN).is_err());
        assert!(GroupModel::finite_cyclic(1).is_err());
        assert!(GroupModel::integer_lattice(0).is_err());
    }

    #[test]
    fn horizon_examples() {
        let z = GroupModel::z();
        let k = CompactRegion::interval(0, 10);
        assert_eq!(
            aperiodicity_horizon(&z, &k, &p(1)).unwrap(),
            Aperiodicity::Horizon(10)
        );
        assert_eq!(
            aperiodicity_horizon(&z, &k, &p(3)).unwrap(),
            Aperiodicity::Horizon(3)
        );
        assert_eq!(
            aperiodicity_horizon(&z, &k, &p(-3)).unwrap(),
            Aperiodicity::Horizon(3)
        );
        assert_eq!(
            aperiodicity_horizon(&z, &k, &p(0)).unwrap(),
            Aperiodicity::Periodic
        );
        let c12 = GroupModel::finite_cyclic(12).unwrap();
        let k0 = CompactRegion::new([p(0)]);
        assert_eq!(
            aperiodicity_horizon(&c12, &k0, &p(1)).unwrap(),
            Aperiodicity::Periodic
        );
        assert_eq!(
            aperiodicity_horizon(&z, &CompactRegion::empty(), &p(1)).unwrap_err(),
            Error::EmptyRegion
        );
    }

    #[test]
    fn horizon_on_plane_follows_direction() {
        let z2 = GroupModel::integer_lattice(2).unwrap();
        let k = CompactRegion::lattice_box(&[0, 0], &[4, 1]).unwrap();
        let diag = GroupPoint::new(vec![1, 1]);
        // only n = ±1 along the diagonal stays inside a 5x2 box
        assert_eq!(
            aperiodicity_horizon(&z2, &k, &diag).unwrap(),
            Aperiodicity::Horizon(1)
        );
        let vertical = GroupPoint::new(vec![0, 2]);
        assert_eq!(
            aperiodicity_horizon(&z2, &k, &vertical).unwrap(),
            Aperiodicity::Horizon(0)
        );
    }

    #[test]
    fn require_aperiodic_message() {
        let c12 = GroupModel::finite_cyclic(12).unwrap();
        let err = require_aperiodic(&c12, &CompactRegion::new([p(0)]), &p(1)).unwrap_err();
        assert!(err.to_string().contains("aperiodic element required"));
    }

    #[test]
    fn box_region_counts() {
        let b = CompactRegion::lattice_box(&[-1, 0, 2], &[1, 1, 2]).unwrap();
        assert_eq!(b.len(), 6);
        assert!(b.contains(&GroupPoint::new(vec![0, 1, 2])));
    }
}
