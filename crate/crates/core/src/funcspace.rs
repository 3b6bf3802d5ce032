//! Finitely supported functions on a lattice group and their `L^p` norms.
//!
//! Scalars are real. Every quantity the criteria need depends only on `|f(x)|`
//! and on positive weights, so complex values would add nothing here.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::group::{haar_measure, CompactRegion, GroupModel, GroupPoint};
use crate::numeric::canonical_sum;

/// Exponent of an `L^p` norm, `1 <= p < inf`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct NormParam(f64);

impl NormParam {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_finite() && p >= 1.0 {
            Ok(NormParam(p))
        } else {
            Err(Error::InvalidExponent(p))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `|v|^p` with the integer exponents special-cased.
    #[inline]
    pub fn pow_abs(self, v: f64) -> f64 {
        let v = v.abs();
        if self.0 == 1.0 {
            v
        } else if self.0 == 2.0 {
            v * v
        } else {
            v.powf(self.0)
        }
    }

    /// Inverse of [`NormParam::pow_abs`] on nonnegative reals.
    #[inline]
    pub fn root(self, s: f64) -> f64 {
        if self.0 == 1.0 {
            s
        } else if self.0 == 2.0 {
            s.sqrt()
        } else {
            s.powf(1.0 / self.0)
        }
    }
}

impl Default for NormParam {
    fn default() -> Self {
        NormParam(2.0)
    }
}

impl<'de> Deserialize<'de> for NormParam {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let p = f64::deserialize(d)?;
        NormParam::new(p).map_err(D::Error::custom)
    }
}

/// A real function on a [`GroupModel`] with finite support, stored sparsely.
///
/// Zero values are never stored, so two functions are equal exactly when
/// their maps are.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFunction {
    model: GroupModel,
    values: BTreeMap<GroupPoint, f64>,
}

impl LatticeFunction {
    pub fn zero(model: &GroupModel) -> Self {
        LatticeFunction {
            model: model.clone(),
            values: BTreeMap::new(),
        }
    }

    /// Builds a function from explicit entries. Repeated points are rejected.
    pub fn from_entries<I>(model: &GroupModel, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (GroupPoint, f64)>,
    {
        let mut f = LatticeFunction::zero(model);
        for (x, v) in entries {
            model.check_point(&x)?;
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite value {v} at {x}"
                )));
            }
            if f.values.insert(x.clone(), v).is_some() {
                return Err(Error::InvalidArgument(format!("point {x} listed twice")));
            }
        }
        f.values.retain(|_, v| *v != 0.0);
        Ok(f)
    }

    /// Point mass of height `value` at `x`.
    pub fn delta(model: &GroupModel, x: GroupPoint, value: f64) -> Result<Self> {
        Self::from_entries(model, [(x, value)])
    }

    /// Characteristic function of a region.
    pub fn indicator(model: &GroupModel, region: &CompactRegion) -> Result<Self> {
        region.validate(model)?;
        Ok(LatticeFunction {
            model: model.clone(),
            values: region.iter().map(|x| (x.clone(), 1.0)).collect(),
        })
    }

    /// Internal constructor for entries already known to be valid points.
    pub(crate) fn from_valid(
        model: &GroupModel,
        entries: impl IntoIterator<Item = (GroupPoint, f64)>,
    ) -> Self {
        LatticeFunction {
            model: model.clone(),
            values: entries.into_iter().filter(|(_, v)| *v != 0.0).collect(),
        }
    }

    pub fn model(&self) -> &GroupModel {
        &self.model
    }

    pub fn get(&self, x: &GroupPoint) -> f64 {
        self.values.get(x).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&GroupPoint, f64)> + '_ {
        self.values.iter().map(|(x, v)| (x, *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    pub fn support(&self) -> CompactRegion {
        self.values.keys().cloned().collect()
    }

    fn same_model(&self, other: &LatticeFunction) -> Result<()> {
        if self.model == other.model {
            Ok(())
        } else {
            Err(Error::ModelMismatch)
        }
    }

    fn combine(&self, other: &LatticeFunction, sign: f64) -> Result<LatticeFunction> {
        self.same_model(other)?;
        let mut values = self.values.clone();
        for (x, v) in &other.values {
            *values.entry(x.clone()).or_insert(0.0) += sign * v;
        }
        values.retain(|_, v| *v != 0.0);
        Ok(LatticeFunction {
            model: self.model.clone(),
            values,
        })
    }

    pub fn add(&self, other: &LatticeFunction) -> Result<LatticeFunction> {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &LatticeFunction) -> Result<LatticeFunction> {
        self.combine(other, -1.0)
    }

    pub fn scale(&self, c: f64) -> LatticeFunction {
        Self::from_valid(
            &self.model,
            self.values.iter().map(|(x, v)| (x.clone(), c * v)),
        )
    }

    /// `f · χ_E`.
    pub fn restrict(&self, region: &CompactRegion) -> LatticeFunction {
        LatticeFunction {
            model: self.model.clone(),
            values: self
                .values
                .iter()
                .filter(|(x, _)| region.contains(x))
                .map(|(x, v)| (x.clone(), *v))
                .collect(),
        }
    }

    /// Right translation `f * δ_a`, i.e. `x ↦ f(x - a)`.
    pub fn shifted(&self, a: &GroupPoint) -> Result<LatticeFunction> {
        self.model.check_point(a)?;
        Ok(LatticeFunction {
            model: self.model.clone(),
            values: self
                .values
                .iter()
                .map(|(x, v)| (self.model.offset(x, a, -1), *v))
                .collect(),
        })
    }

    /// `‖f‖_p^p = Σ |f(x)|^p · cell_volume`.
    pub fn lp_norm_pow(&self, p: NormParam) -> f64 {
        let terms = self.values.values().map(|v| p.pow_abs(*v)).collect();
        canonical_sum(terms) * self.model.cell_volume()
    }

    pub fn lp_norm(&self, p: NormParam) -> f64 {
        p.root(self.lp_norm_pow(p))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn lp_distance(&self, other: &LatticeFunction, p: NormParam) -> Result<f64> {
        Ok(self.sub(other)?.lp_norm(p))
    }

    /// Measure of the support.
    pub fn support_measure(&self) -> f64 {
        haar_measure(&self.model, &self.support())
    }
}

pub fn lp_norm(f: &LatticeFunction, p: NormParam) -> f64 {
    f.lp_norm(p)
}

pub fn lp_distance(f: &LatticeFunction, g: &LatticeFunction, p: NormParam) -> Result<f64> {
    f.lp_distance(g, p)
}

pub fn sup_norm(f: &LatticeFunction) -> f64 {
    f.sup_norm()
}

pub fn indicator(model: &GroupModel, region: &CompactRegion) -> Result<LatticeFunction> {
    LatticeFunction::indicator(model, region)
}

#[derive(Serialize, Deserialize)]
struct FunctionRepr {
    model: GroupModel,
    points: Vec<(GroupPoint, f64)>,
}

impl Serialize for LatticeFunction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FunctionRepr {
            model: self.model.clone(),
            points: self.values.iter().map(|(x, v)| (x.clone(), *v)).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LatticeFunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = FunctionRepr::deserialize(d)?;
        repr.model.validate().map_err(D::Error::custom)?;
        LatticeFunction::from_entries(&repr.model, repr.points).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: i64) -> GroupPoint {
        GroupPoint::scalar(i)
    }

    fn np(v: f64) -> NormParam {
        NormParam::new(v).unwrap()
    }

    #[test]
    fn norm_examples() {
        let z = GroupModel::z();
        let chi = LatticeFunction::indicator(&z, &CompactRegion::interval(0, 3)).unwrap();
        assert_eq!(chi.lp_norm(np(2.0)), 2.0);
        let line = GroupModel::discretized_line(0.5).unwrap();
        let spike = LatticeFunction::delta(&line, p(0), 3.0).unwrap();
        assert_eq!(spike.lp_norm(np(1.0)), 1.5);
        assert_eq!(LatticeFunction::zero(&z).lp_norm(np(3.5)), 0.0);
    }

    #[test]
    fn rejects_small_exponent() {
        assert_eq!(
            NormParam::new(0.5).unwrap_err(),
            Error::InvalidExponent(0.5)
        );
        assert!(NormParam::new(f64::INFINITY).is_err());
    }

    #[test]
    fn indicator_examples() {
        let z = GroupModel::z();
        let point = LatticeFunction::indicator(&z, &CompactRegion::new([p(0)])).unwrap();
        assert_eq!(point, LatticeFunction::delta(&z, p(0), 1.0).unwrap());
        assert!(LatticeFunction::indicator(&z, &CompactRegion::empty())
            .unwrap()
            .is_zero());
        let five = LatticeFunction::indicator(&z, &CompactRegion::interval(-2, 2)).unwrap();
        assert_eq!(five.len(), 5);
        assert_eq!(five.lp_norm(np(1.0)), 5.0);
    }

    #[test]
    fn distance_examples() {
        let z = GroupModel::z();
        let d0 = LatticeFunction::delta(&z, p(0), 1.0).unwrap();
        let d1 = LatticeFunction::delta(&z, p(1), 1.0).unwrap();
        assert_eq!(d0.lp_distance(&d0, np(2.0)).unwrap(), 0.0);
        assert_eq!(d0.lp_distance(&d1, np(2.0)).unwrap(), 2f64.sqrt());
        let chi = LatticeFunction::indicator(&z, &CompactRegion::interval(0, 3)).unwrap();
        assert_eq!(
            chi.lp_distance(&LatticeFunction::zero(&z), np(2.0))
                .unwrap(),
            2.0
        );
        let other = LatticeFunction::zero(&GroupModel::discretized_line(1.0).unwrap());
        assert_eq!(
            chi.lp_distance(&other, np(2.0)).unwrap_err(),
            Error::ModelMismatch
        );
    }

    #[test]
    fn sup_examples() {
        let z = GroupModel::z();
        let chi = LatticeFunction::indicator(&z, &CompactRegion::interval(0, 3)).unwrap();
        assert_eq!(chi.sup_norm(), 1.0);
        let f = LatticeFunction::from_entries(&z, [(p(0), -3.0), (p(4), 2.0)]).unwrap();
        assert_eq!(f.sup_norm(), 3.0);
        assert_eq!(LatticeFunction::zero(&z).sup_norm(), 0.0);
    }

    #[test]
    fn canonical_form_drops_zeros() {
        let z = GroupModel::z();
        let f = LatticeFunction::from_entries(&z, [(p(0), 0.0), (p(1), 1.0)]).unwrap();
        assert_eq!(f.len(), 1);
        assert!(f.sub(&f).unwrap().is_zero());
        assert!(LatticeFunction::from_entries(&z, [(p(1), 1.0), (p(1), 2.0)]).is_err());
        assert!(LatticeFunction::from_entries(&z, [(p(1), f64::NAN)]).is_err());
    }

    #[test]
    fn cyclic_points_must_be_reduced() {
        let c = GroupModel::finite_cyclic(5).unwrap();
        assert!(LatticeFunction::delta(&c, p(7), 1.0).is_err());
        let f = LatticeFunction::delta(&c, p(4), 1.0).unwrap();
        assert_eq!(f.shifted(&p(2)).unwrap().get(&p(1)), 1.0);
    }

    #[test]
    fn json_shape() {
        let z = GroupModel::z();
        let f = LatticeFunction::from_entries(&z, [(p(-1), 0.5), (p(2), -1.25)]).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(
            json,
            r#"{"model":{"kind":"integer_lattice","dim":1},"points":[[[-1],0.5],[[2],-1.25]]}"#
        );
        let back: LatticeFunction = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn restriction_bound_by_sup() {
        let z = GroupModel::z();
        let f =
            LatticeFunction::from_entries(&z, [(p(0), 0.3), (p(1), -0.9), (p(5), 0.4)]).unwrap();
        let e = CompactRegion::interval(0, 2);
        let q = np(3.0);
        let lhs = f.restrict(&e).lp_norm(q);
        let rhs = f.sup_norm() * q.root(haar_measure(&z, &e));
        assert!(lhs <= rhs);
    }
}
