//! Positive bounded weights and the products of translated weights that
//! govern the dynamics of weighted translations.
//!
//! For a translation element `a`, weight `w` and point `x` (additive notation):
//!
//! * forward product `φ_n(x) = Π_{s=1}^{n} w(x + s·a)`
//! * inverse backward product `φ̃_n(x) = (Π_{s=0}^{n-1} w(x - s·a))^{-1}`
//! * ratio product `R_n^{(j,l)}(x) = Π_{s=0}^{n-1} w_j(x - s·a) / w_l(x - s·a)`
//!
//! All three are accumulated as sums of logarithms. Forward and backward
//! products are both evaluated through one window routine, so the duality
//! `log φ_n(x - n·a) + log φ̃_n(x) = 0` holds bit for bit.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{CompactRegion, GroupModel, GroupPoint};
use crate::numeric::CompensatedSum;

fn default_direction() -> Vec<i64> {
    vec![1]
}

/// The closed-form or tabulated families a weight may come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightFamily {
    Constant {
        c: f64,
    },
    /// `v_neg` where `⟨x, direction⟩ <= pivot`, `v_pos` elsewhere.
    Step {
        v_neg: f64,
        v_pos: f64,
        #[serde(default = "default_direction")]
        direction: Vec<i64>,
        #[serde(default)]
        pivot: i64,
    },
    /// `((|t| + 2) / (|t| + 1))^gamma` with `t = ⟨x, direction⟩`.
    PowerLaw {
        gamma: f64,
        #[serde(default = "default_direction")]
        direction: Vec<i64>,
    },
    /// Explicit values on finitely many points, `default` elsewhere.
    Table {
        #[serde(with = "pairs")]
        entries: BTreeMap<GroupPoint, f64>,
        default: f64,
    },
}

mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::group::GroupPoint;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<GroupPoint, f64>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        map.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<GroupPoint, f64>, D::Error> {
        let pairs = Vec::<(GroupPoint, f64)>::deserialize(d)?;
        let n = pairs.len();
        let map: BTreeMap<_, _> = pairs.into_iter().collect();
        if map.len() != n {
            return Err(serde::de::Error::custom("table lists a point twice"));
        }
        Ok(map)
    }
}

/// A validated weight: strictly positive and bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightFamily", into = "WeightFamily")]
pub struct WeightSpec {
    family: WeightFamily,
    upper: f64,
    lower: f64,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidWeight(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl TryFrom<WeightFamily> for WeightSpec {
    type Error = Error;

    fn try_from(family: WeightFamily) -> Result<Self> {
        let (lower, upper) = match &family {
            WeightFamily::Constant { c } => {
                let c = positive("c", *c)?;
                (c, c)
            }
            WeightFamily::Step {
                v_neg,
                v_pos,
                direction,
                ..
            } => {
                let a = positive("v_neg", *v_neg)?;
                let b = positive("v_pos", *v_pos)?;
                if direction.iter().all(|&d| d == 0) {
                    return Err(Error::InvalidWeight(
                        "step direction must be nonzero".into(),
                    ));
                }
                (a.min(b), a.max(b))
            }
            WeightFamily::PowerLaw { gamma, direction } => {
                if !gamma.is_finite() {
                    return Err(Error::InvalidWeight(format!(
                        "gamma must be finite, got {gamma}"
                    )));
                }
                if direction.is_empty() {
                    return Err(Error::InvalidWeight("power-law direction is empty".into()));
                }
                // base (|t|+2)/(|t|+1) ranges over (1, 2]
                let peak = 2f64.powf(*gamma);
                (peak.min(1.0), peak.max(1.0))
            }
            WeightFamily::Table { entries, default } => {
                let d = positive("default", *default)?;
                let mut lo = d;
                let mut hi = d;
                for (x, v) in entries {
                    positive(&format!("table entry at {x}"), *v)?;
                    lo = lo.min(*v);
                    hi = hi.max(*v);
                }
                (lo, hi)
            }
        };
        Ok(WeightSpec {
            family,
            upper,
            lower,
        })
    }
}

impl From<WeightSpec> for WeightFamily {
    fn from(w: WeightSpec) -> Self {
        w.family
    }
}

impl WeightSpec {
    pub fn constant(c: f64) -> Result<Self> {
        WeightFamily::Constant { c }.try_into()
    }

    /// One-dimensional step weight with direction `+1`.
    pub fn step(v_neg: f64, v_pos: f64, pivot: i64) -> Result<Self> {
        WeightFamily::Step {
            v_neg,
            v_pos,
            direction: vec![1],
            pivot,
        }
        .try_into()
    }

    pub fn power_law(gamma: f64, direction: Vec<i64>) -> Result<Self> {
        WeightFamily::PowerLaw { gamma, direction }.try_into()
    }

    pub fn table<I: IntoIterator<Item = (GroupPoint, f64)>>(
        entries: I,
        default: f64,
    ) -> Result<Self> {
        WeightFamily::Table {
            entries: entries.into_iter().collect(),
            default,
        }
        .try_into()
    }

    /// The step weight `2` on the nonpositive half-line and `1/2` beyond it.
    pub fn salas() -> Self {
        Self::step(2.0, 0.5, 0).expect("valid constants")
    }

    pub fn family(&self) -> &WeightFamily {
        &self.family
    }

    /// Supremum of the weight over the group.
    pub fn upper_bound(&self) -> f64 {
        self.upper
    }

    /// Infimum of the weight over the group (not necessarily attained).
    pub fn lower_bound(&self) -> f64 {
        self.lower
    }

    /// Checks that directions and table points fit the model.
    pub fn validate_for(&self, model: &GroupModel) -> Result<()> {
        let dim = model.dim();
        match &self.family {
            WeightFamily::Step { direction, .. } | WeightFamily::PowerLaw { direction, .. } => {
                if direction.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: direction.len(),
                    });
                }
                Ok(())
            }
            WeightFamily::Table { entries, .. } => {
                entries.keys().try_for_each(|x| model.check_point(x))
            }
            WeightFamily::Constant { .. } => Ok(()),
        }
    }

    pub fn eval(&self, x: &GroupPoint) -> f64 {
        match &self.family {
            WeightFamily::Constant { c } => *c,
            WeightFamily::Step {
                v_neg,
                v_pos,
                direction,
                pivot,
            } => {
                if x.dot(direction) <= *pivot {
                    *v_neg
                } else {
                    *v_pos
                }
            }
            WeightFamily::PowerLaw { gamma, direction } => {
                power_base(x.dot(direction)).powf(*gamma)
            }
            WeightFamily::Table { entries, default } => entries.get(x).copied().unwrap_or(*default),
        }
    }

    fn kernel(&self) -> LogKernel<'_> {
        match &self.family {
            WeightFamily::Constant { c } => LogKernel::Constant(c.ln()),
            WeightFamily::Step {
                v_neg,
                v_pos,
                direction,
                pivot,
            } => LogKernel::Step {
                ln_neg: v_neg.ln(),
                ln_pos: v_pos.ln(),
                direction,
                pivot: *pivot,
            },
            WeightFamily::PowerLaw { gamma, direction } => LogKernel::Power {
                gamma: *gamma,
                direction,
            },
            WeightFamily::Table { entries, default } => LogKernel::Table {
                entries,
                ln_default: default.ln(),
            },
        }
    }

    /// `Σ_{s=0}^{n-1} ln w(start + s·a)`.
    pub(crate) fn window_log_sum(
        &self,
        model: &GroupModel,
        start: &GroupPoint,
        a: &GroupPoint,
        n: u64,
    ) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let kernel = self.kernel();
        match kernel {
            LogKernel::Constant(lc) => n as f64 * lc,
            LogKernel::Step {
                ln_neg,
                ln_pos,
                direction,
                pivot,
            } if !model.is_finite() => {
                let below = count_at_or_below(start.dot(direction), a.dot(direction), pivot, n);
                below as f64 * ln_neg + (n - below) as f64 * ln_pos
            }
            _ => {
                let mut acc = CompensatedSum::new();
                for s in 0..n as i64 {
                    acc.add(kernel.ln_at(&model.offset(start, a, -s)));
                }
                acc.value()
            }
        }
    }
}

fn power_base(t: i64) -> f64 {
    let t = t.unsigned_abs() as f64;
    (t + 2.0) / (t + 1.0)
}

/// Number of `s` in `[0, n)` with `t0 + s·step <= pivot`.
fn count_at_or_below(t0: i64, step: i64, pivot: i64, n: u64) -> u64 {
    let n_i = n as i64;
    let gap = pivot - t0;
    let count = match step.cmp(&0) {
        std::cmp::Ordering::Equal => {
            if gap >= 0 {
                n_i
            } else {
                0
            }
        }
        // s <= gap / step
        std::cmp::Ordering::Greater => (gap.div_euclid(step) + 1).clamp(0, n_i),
        // s >= gap / step, rounded up
        std::cmp::Ordering::Less => {
            let s_min = -(gap.div_euclid(-step));
            n_i - s_min.clamp(0, n_i)
        }
    };
    count as u64
}

enum LogKernel<'a> {
    Constant(f64),
    Step {
        ln_neg: f64,
        ln_pos: f64,
        direction: &'a [i64],
        pivot: i64,
    },
    Power {
        gamma: f64,
        direction: &'a [i64],
    },
    Table {
        entries: &'a BTreeMap<GroupPoint, f64>,
        ln_default: f64,
    },
}

impl LogKernel<'_> {
    #[inline]
    fn ln_at(&self, x: &GroupPoint) -> f64 {
        match self {
            LogKernel::Constant(lc) => *lc,
            LogKernel::Step {
                ln_neg,
                ln_pos,
                direction,
                pivot,
            } => {
                if x.dot(direction) <= *pivot {
                    *ln_neg
                } else {
                    *ln_pos
                }
            }
            LogKernel::Power { gamma, direction } => gamma * power_base(x.dot(direction)).ln(),
            LogKernel::Table {
                entries,
                ln_default,
            } => entries.get(x).map_or(*ln_default, |v| v.ln()),
        }
    }
}

/// A product held by its natural logarithm; `-inf` and `+inf` encode
/// underflow to zero and overflow.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ProductValue {
    pub log_value: f64,
}

/// Relative slack used when comparing log-domain products against a bound.
pub const LOG_TIE_MARGIN: f64 = 1e-12;

/// `log < log_bound` with a margin: a product that equals the bound exactly
/// (say a power of two against `2^-k`) can land a few ulps either side after
/// summing logs, so near-ties are rejected rather than admitted by rounding.
pub fn strictly_below_log(log: f64, log_bound: f64) -> bool {
    log < log_bound - LOG_TIE_MARGIN * log_bound.abs().max(1.0)
}

impl ProductValue {
    pub const ONE: ProductValue = ProductValue { log_value: 0.0 };

    pub fn from_log(log_value: f64) -> Self {
        ProductValue { log_value }
    }

    pub fn value(self) -> f64 {
        self.log_value.exp()
    }

    /// `self < bound`, compared in log domain. Ties within rounding count as
    /// failures, see [`strictly_below_log`].
    pub fn less_than(self, bound: f64) -> bool {
        strictly_below_log(self.log_value, bound.ln())
    }

    pub fn max(self, other: ProductValue) -> ProductValue {
        if other.log_value > self.log_value {
            other
        } else {
            self
        }
    }

    pub fn recip(self) -> ProductValue {
        ProductValue::from_log(-self.log_value)
    }
}

pub fn eval_weight(w: &WeightSpec, x: &GroupPoint) -> f64 {
    w.eval(x)
}

/// `φ_n(x) = Π_{s=1}^{n} w(x + s·a)`.
pub fn forward_product(
    model: &GroupModel,
    w: &WeightSpec,
    a: &GroupPoint,
    x: &GroupPoint,
    n: u64,
) -> ProductValue {
    let start = model.offset(x, a, -1);
    ProductValue::from_log(w.window_log_sum(model, &start, a, n))
}

/// `φ̃_n(x) = (Π_{s=0}^{n-1} w(x - s·a))^{-1}`.
pub fn backward_product_inv(
    model: &GroupModel,
    w: &WeightSpec,
    a: &GroupPoint,
    x: &GroupPoint,
    n: u64,
) -> ProductValue {
    if n == 0 {
        return ProductValue::ONE;
    }
    let start = model.offset(x, a, n as i64 - 1);
    ProductValue::from_log(-w.window_log_sum(model, &start, a, n))
}

/// `Π_{s=0}^{n-1} w_j(x - s·a) / w_l(x - s·a)`, summed term by term so that
/// swapping the weights negates the logarithm exactly.
pub fn ratio_product(
    model: &GroupModel,
    w_j: &WeightSpec,
    w_l: &WeightSpec,
    a: &GroupPoint,
    x: &GroupPoint,
    n: u64,
) -> ProductValue {
    if n == 0 || w_j == w_l {
        return ProductValue::ONE;
    }
    let (kj, kl) = (w_j.kernel(), w_l.kernel());
    if let (LogKernel::Constant(cj), LogKernel::Constant(cl)) = (&kj, &kl) {
        return ProductValue::from_log(n as f64 * (cj - cl));
    }
    let mut acc = CompensatedSum::new();
    for s in 0..n as i64 {
        let y = model.offset(x, a, s);
        acc.add(kj.ln_at(&y) - kl.ln_at(&y));
    }
    ProductValue::from_log(acc.value())
}

/// Which product [`sup_product_on`] maximizes.
#[derive(Debug, Clone, Copy)]
pub enum ProductKind<'a> {
    Forward(&'a WeightSpec),
    BackwardInv(&'a WeightSpec),
    Ratio(&'a WeightSpec, &'a WeightSpec),
}

impl ProductKind<'_> {
    pub fn eval(&self, model: &GroupModel, a: &GroupPoint, x: &GroupPoint, n: u64) -> ProductValue {
        match *self {
            ProductKind::Forward(w) => forward_product(model, w, a, x, n),
            ProductKind::BackwardInv(w) => backward_product_inv(model, w, a, x, n),
            ProductKind::Ratio(wj, wl) => ratio_product(model, wj, wl, a, x, n),
        }
    }
}

/// Maximum of the selected product over a nonempty region.
pub fn sup_product_on(
    model: &GroupModel,
    region: &CompactRegion,
    which: ProductKind<'_>,
    a: &GroupPoint,
    n: u64,
) -> Result<ProductValue> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let cells: Vec<&GroupPoint> = region.iter().collect();
    let best = cells.par_iter().map(|x| which.eval(model, a, x, n)).reduce(
        || ProductValue::from_log(f64::NEG_INFINITY),
        ProductValue::max,
    );
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: i64) -> GroupPoint {
        GroupPoint::scalar(i)
    }

    fn z() -> GroupModel {
        GroupModel::z()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
    }

    // direct products, left to right, as the oracle for the log-domain routines
    fn naive_forward(w: &WeightSpec, a: i64, x: i64, n: i64) -> f64 {
        (1..=n).map(|s| w.eval(&p(x + s * a))).product()
    }

    fn naive_backward_inv(w: &WeightSpec, a: i64, x: i64, n: i64) -> f64 {
        1.0 / (0..n).map(|s| w.eval(&p(x - s * a))).product::<f64>()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(WeightSpec::constant(2.0).unwrap().eval(&p(7)), 2.0);
        let s = WeightSpec::salas();
        assert_eq!(s.eval(&p(-3)), 2.0);
        assert_eq!(s.eval(&p(0)), 2.0);
        assert_eq!(s.eval(&p(1)), 0.5);
        let t = WeightSpec::table([], 1.0).unwrap();
        assert_eq!(t.eval(&p(42)), 1.0);
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(WeightSpec::constant(0.0).is_err());
        assert!(WeightSpec::step(-1.0, 1.0, 0).is_err());
        assert!(WeightSpec::table([(p(0), 0.0)], 1.0).is_err());
        assert!(WeightSpec::table([], f64::INFINITY).is_err());
        let json = r#"{"family":"constant","c":-2}"#;
        assert!(serde_json::from_str::<WeightSpec>(json).is_err());
    }

    #[test]
    fn bounds() {
        let s = WeightSpec::salas();
        assert_eq!((s.lower_bound(), s.upper_bound()), (0.5, 2.0));
        let pl = WeightSpec::power_law(-2.0, vec![1]).unwrap();
        assert_eq!((pl.lower_bound(), pl.upper_bound()), (0.25, 1.0));
        for t in -30..30 {
            let v = pl.eval(&p(t));
            assert!(v >= pl.lower_bound() && v <= pl.upper_bound());
        }
    }

    #[test]
    fn forward_examples() {
        let m = z();
        let c2 = WeightSpec::constant(2.0).unwrap();
        assert!(close(
            forward_product(&m, &c2, &p(1), &p(0), 5).value(),
            32.0
        ));
        let s = WeightSpec::salas();
        assert!(close(
            forward_product(&m, &s, &p(1), &p(0), 4).value(),
            0.0625
        ));
        assert!(close(
            forward_product(&m, &s, &p(1), &p(-2), 4).value(),
            1.0
        ));
        assert_eq!(forward_product(&m, &s, &p(1), &p(3), 0), ProductValue::ONE);
    }

    #[test]
    fn backward_examples() {
        let m = z();
        let c2 = WeightSpec::constant(2.0).unwrap();
        assert!(close(
            backward_product_inv(&m, &c2, &p(1), &p(0), 5).value(),
            1.0 / 32.0
        ));
        let s = WeightSpec::salas();
        assert!(close(
            backward_product_inv(&m, &s, &p(1), &p(0), 4).value(),
            0.0625
        ));
        assert!(close(
            backward_product_inv(&m, &s, &p(1), &p(2), 4).value(),
            1.0
        ));
    }

    #[test]
    fn ratio_examples() {
        let m = z();
        let w4 = WeightSpec::step(4.0, 0.25, 0).unwrap();
        let s = WeightSpec::salas();
        assert_eq!(
            ratio_product(&m, &s, &s, &p(1), &p(3), 9),
            ProductValue::ONE
        );
        assert!(close(
            ratio_product(&m, &w4, &s, &p(1), &p(0), 3).value(),
            8.0
        ));
        let fwd = ratio_product(&m, &w4, &s, &p(1), &p(4), 11);
        let rev = ratio_product(&m, &s, &w4, &p(1), &p(4), 11);
        assert_eq!(fwd.log_value + rev.log_value, 0.0);
    }

    #[test]
    fn sup_examples() {
        let m = z();
        let s = WeightSpec::salas();
        let k = CompactRegion::interval(-10, 10);
        let sup = sup_product_on(&m, &k, ProductKind::Forward(&s), &p(1), 60).unwrap();
        // the maximizer is x = -10: ten factors of 2, fifty of 1/2
        assert!(close(sup.value(), 2f64.powi(-40)));
        assert!(sup.value() <= 4f64.powi(10) * 0.5f64.powi(60) * (1.0 + 1e-12));
        let one = CompactRegion::new([p(0)]);
        assert_eq!(
            sup_product_on(&m, &one, ProductKind::Ratio(&s, &s), &p(1), 7).unwrap(),
            ProductValue::ONE
        );
        let c1 = WeightSpec::constant(1.0).unwrap();
        assert_eq!(
            sup_product_on(&m, &one, ProductKind::Forward(&c1), &p(1), 99)
                .unwrap()
                .value(),
            1.0
        );
        assert_eq!(
            sup_product_on(
                &m,
                &CompactRegion::empty(),
                ProductKind::Forward(&s),
                &p(1),
                1
            )
            .unwrap_err(),
            Error::EmptyRegion
        );
    }

    #[test]
    fn step_count_matches_brute_force() {
        for t0 in -7..7 {
            for step in -3..=3 {
                for pivot in -4..4 {
                    for n in 0..12u64 {
                        let brute = (0..n as i64).filter(|s| t0 + s * step <= pivot).count() as u64;
                        assert_eq!(
                            count_at_or_below(t0, step, pivot, n),
                            brute,
                            "{t0} {step} {pivot} {n}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn log_domain_matches_direct_products() {
        let m = z();
        let weights = [
            WeightSpec::salas(),
            WeightSpec::step(3.0, 0.7, 2).unwrap(),
            WeightSpec::power_law(1.5, vec![1]).unwrap(),
            WeightSpec::table([(p(0), 3.0), (p(2), 0.2)], 1.1).unwrap(),
        ];
        for w in &weights {
            for a in [-2, 1, 3] {
                for x in -6..6 {
                    for n in 0..15 {
                        let f = forward_product(&m, w, &p(a), &p(x), n as u64).value();
                        let b = backward_product_inv(&m, w, &p(a), &p(x), n as u64).value();
                        assert!(close(f, naive_forward(w, a, x, n)));
                        assert!(close(b, naive_backward_inv(w, a, x, n)));
                    }
                }
            }
        }
    }

    #[test]
    fn products_on_cyclic_model_wrap() {
        let c = GroupModel::finite_cyclic(5).unwrap();
        let w = WeightSpec::table([(p(0), 2.0)], 1.0).unwrap();
        // points 1,2,3,4,0,1,2,3,4,0 -> two visits to 0
        assert!(close(
            forward_product(&c, &w, &p(1), &p(0), 10).value(),
            4.0
        ));
        let s = WeightSpec::salas();
        // points 4,3,2: step sees the reduced residues, all positive
        assert!(close(
            backward_product_inv(&c, &s, &p(1), &p(4), 3).value(),
            8.0
        ));
    }

    #[test]
    fn two_dimensional_step() {
        let m = GroupModel::integer_lattice(2).unwrap();
        let w: WeightSpec = serde_json::from_str(
            r#"{"family":"step","v_neg":2,"v_pos":0.5,"pivot":0,"direction":[1,1]}"#,
        )
        .unwrap();
        w.validate_for(&m).unwrap();
        assert!(w.validate_for(&z()).is_err());
        let a = GroupPoint::new(vec![1, 0]);
        let x = GroupPoint::new(vec![-1, -1]);
        // ⟨x + s a, (1,1)⟩ = -2 + s for s = 1..4: -1, 0, 1, 2
        assert!(close(forward_product(&m, &w, &a, &x, 4).value(), 1.0));
    }

    #[test]
    fn json_round_trip() {
        let w = WeightSpec::table([(p(-1), 2.5)], 0.75).unwrap();
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(
            json,
            r#"{"family":"table","entries":[[[-1],2.5]],"default":0.75}"#
        );
        assert_eq!(serde_json::from_str::<WeightSpec>(&json).unwrap(), w);
        let step: WeightSpec =
            serde_json::from_str(r#"{"family":"step","v_neg":2,"v_pos":0.5}"#).unwrap();
        assert_eq!(step, WeightSpec::salas());
    }
}
