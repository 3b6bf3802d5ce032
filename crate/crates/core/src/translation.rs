//! Weighted translations `T_{a,w} f(x) = w(x) f(x - a)` and the right inverse
//! `S_{a,w} h = (h / w) * δ_{a^{-1}}` on compactly supported functions.
//!
//! Powers are evaluated in closed form from the weight products:
//!
//! * `T^n f (y + n·a) = φ_n(y) f(y)`
//! * `S^n h (y - n·a) = φ̃_n(y) h(y)`
//!
//! so a power costs one window sum per support point regardless of `n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcspace::{LatticeFunction, NormParam};
use crate::group::{CompactRegion, GroupModel, GroupPoint};
use crate::numeric::canonical_sum;
use crate::weights::{ratio_product, WeightSpec};

/// The operator `T_{a,w}^r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub a: GroupPoint,
    pub w: WeightSpec,
    #[serde(default = "one")]
    pub r: u64,
}

fn one() -> u64 {
    1
}

impl OperatorSpec {
    pub fn new(a: GroupPoint, w: WeightSpec, r: u64) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidArgument("operator power must be >= 1".into()));
        }
        Ok(OperatorSpec { a, w, r })
    }

    pub fn validate_for(&self, model: &GroupModel) -> Result<()> {
        model.check_point(&self.a)?;
        self.w.validate_for(model)?;
        if self.r == 0 {
            return Err(Error::InvalidArgument("operator power must be >= 1".into()));
        }
        Ok(())
    }

    /// `(T_{a,w}^r)^n f`.
    pub fn power(&self, n: u64, f: &LatticeFunction) -> LatticeFunction {
        apply_t_power(&self.a, &self.w, self.r * n, f)
    }

    /// `S_{a,w}^{r·n} h`, the right inverse of [`OperatorSpec::power`].
    pub fn inverse_power(&self, n: u64, h: &LatticeFunction) -> LatticeFunction {
        apply_s_power(&self.a, &self.w, self.r * n, h)
    }
}

/// `T_{a,w}^n` as its own log-window for the point `y` it moves, i.e. `log φ_n(y)`.
fn forward_log(model: &GroupModel, w: &WeightSpec, a: &GroupPoint, y: &GroupPoint, n: u64) -> f64 {
    w.window_log_sum(model, &model.offset(y, a, -1), a, n)
}

/// `log φ̃_n(y)`.
fn backward_inv_log(
    model: &GroupModel,
    w: &WeightSpec,
    a: &GroupPoint,
    y: &GroupPoint,
    n: u64,
) -> f64 {
    if n == 0 {
        return 0.0;
    }
    -w.window_log_sum(model, &model.offset(y, a, n as i64 - 1), a, n)
}

/// One application of `T_{a,w}`.
pub fn apply_t(a: &GroupPoint, w: &WeightSpec, f: &LatticeFunction) -> LatticeFunction {
    let model = f.model();
    LatticeFunction::from_valid(
        model,
        f.iter().map(|(y, v)| {
            let x = model.offset(y, a, -1);
            let wx = w.eval(&x);
            (x, wx * v)
        }),
    )
}

/// `T_{a,w}^n f` in closed form.
pub fn apply_t_power(
    a: &GroupPoint,
    w: &WeightSpec,
    n: u64,
    f: &LatticeFunction,
) -> LatticeFunction {
    if n == 0 {
        return f.clone();
    }
    let model = f.model();
    LatticeFunction::from_valid(
        model,
        f.iter().map(|(y, v)| {
            let factor = forward_log(model, w, a, y, n).exp();
            (model.offset(y, a, -(n as i64)), v * factor)
        }),
    )
}

/// `S_{a,w}^n h` in closed form.
pub fn apply_s_power(
    a: &GroupPoint,
    w: &WeightSpec,
    n: u64,
    h: &LatticeFunction,
) -> LatticeFunction {
    if n == 0 {
        return h.clone();
    }
    let model = h.model();
    LatticeFunction::from_valid(
        model,
        h.iter().map(|(y, v)| {
            let factor = backward_inv_log(model, w, a, y, n).exp();
            (model.offset(y, a, n as i64), v * factor)
        }),
    )
}

/// `T_{a,w_t}^{m} S_{a,w_s}^{m'} g`, with the two log-windows combined before
/// exponentiation. For `w_t = w_s` and `m = m'` the windows cancel exactly and
/// the result is `g` bit for bit.
pub fn apply_t_after_s(
    a: &GroupPoint,
    w_t: &WeightSpec,
    m: u64,
    w_s: &WeightSpec,
    m_s: u64,
    g: &LatticeFunction,
) -> LatticeFunction {
    let model = g.model();
    LatticeFunction::from_valid(
        model,
        g.iter().map(|(y, v)| {
            let (z, log) = composite_log(model, a, w_t, m, w_s, m_s, y);
            (z, v * log.exp())
        }),
    )
}

/// Landing point and log-multiplier of `T_{w_t}^m S_{w_s}^{m_s}` applied to a mass at `y`.
fn composite_log(
    model: &GroupModel,
    a: &GroupPoint,
    w_t: &WeightSpec,
    m: u64,
    w_s: &WeightSpec,
    m_s: u64,
    y: &GroupPoint,
) -> (GroupPoint, f64) {
    let mid = model.offset(y, a, m_s as i64);
    let log = backward_inv_log(model, w_s, a, y, m_s) + forward_log(model, w_t, a, &mid, m);
    (model.offset(&mid, a, -(m as i64)), log)
}

/// `log` of the multiplier that `T_{w_t}^m S_{w_s}^{m_s}` puts on a mass at `y`.
pub fn composite_log_multiplier(
    model: &GroupModel,
    a: &GroupPoint,
    w_t: &WeightSpec,
    m: u64,
    w_s: &WeightSpec,
    m_s: u64,
    y: &GroupPoint,
) -> f64 {
    composite_log(model, a, w_t, m, w_s, m_s, y).1
}

/// Which operator power [`norm_via_products`] integrates against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerSide {
    T,
    S,
}

/// `‖T^n(f χ_E)‖_p^p` or `‖S^n(f χ_E)‖_p^p` as `∫_E φ^p |f|^p dλ`, without
/// building the translated function.
pub fn norm_pow_via_products(
    a: &GroupPoint,
    w: &WeightSpec,
    n: u64,
    f: &LatticeFunction,
    region: &CompactRegion,
    p: NormParam,
    which: PowerSide,
) -> f64 {
    let model = f.model();
    let terms = f
        .iter()
        .filter(|(x, _)| region.contains(x))
        .map(|(x, v)| {
            let log = match which {
                PowerSide::T => forward_log(model, w, a, x, n),
                PowerSide::S => backward_inv_log(model, w, a, x, n),
            };
            (p.value() * (log + v.abs().ln())).exp()
        })
        .collect();
    canonical_sum(terms) * model.cell_volume()
}

pub fn norm_via_products(
    a: &GroupPoint,
    w: &WeightSpec,
    n: u64,
    f: &LatticeFunction,
    region: &CompactRegion,
    p: NormParam,
    which: PowerSide,
) -> f64 {
    p.root(norm_pow_via_products(a, w, n, f, region, p, which))
}

/// `‖T_{w_t}^m S_{w_s}^{m_s}(f χ_E)‖_p^p` as an integral over `E`. For equal
/// exponents this integrates the ratio product `Π w_t / w_s` directly.
pub fn cross_norm_pow_via_products(
    a: &GroupPoint,
    w_t: &WeightSpec,
    m: u64,
    w_s: &WeightSpec,
    m_s: u64,
    f: &LatticeFunction,
    region: &CompactRegion,
    p: NormParam,
) -> f64 {
    let model = f.model();
    let terms = f
        .iter()
        .filter(|(x, _)| region.contains(x))
        .map(|(x, v)| {
            let log = if m == m_s {
                ratio_product(model, w_t, w_s, a, x, m).log_value
            } else {
                composite_log(model, a, w_t, m, w_s, m_s, x).1
            };
            (p.value() * (log + v.abs().ln())).exp()
        })
        .collect();
    canonical_sum(terms) * model.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: i64) -> GroupPoint {
        GroupPoint::scalar(i)
    }

    fn delta(i: i64, v: f64) -> LatticeFunction {
        LatticeFunction::delta(&GroupModel::z(), p(i), v).unwrap()
    }

    fn iterate_t(a: &GroupPoint, w: &WeightSpec, n: u64, f: &LatticeFunction) -> LatticeFunction {
        (0..n).fold(f.clone(), |g, _| apply_t(a, w, &g))
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs())
    }

    #[test]
    fn apply_t_examples() {
        let c2 = WeightSpec::constant(2.0).unwrap();
        assert_eq!(apply_t(&p(1), &c2, &delta(0, 1.0)), delta(1, 2.0));
        let one = WeightSpec::constant(1.0).unwrap();
        let f =
            LatticeFunction::from_entries(&GroupModel::z(), [(p(0), 0.5), (p(3), -2.0)]).unwrap();
        let g = apply_t(&p(1), &one, &f);
        assert_eq!(g.get(&p(4)), -2.0);
        assert_eq!(
            g.lp_norm(NormParam::default()),
            f.lp_norm(NormParam::default())
        );
        let s = WeightSpec::salas();
        let twice = apply_t(&p(1), &s, &apply_t(&p(1), &s, &delta(1, 1.0)));
        assert_eq!(twice, delta(3, 0.25));
    }

    #[test]
    fn t_power_examples() {
        let c2 = WeightSpec::constant(2.0).unwrap();
        let g = apply_t_power(&p(1), &c2, 3, &delta(0, 1.0));
        assert!(close(g.get(&p(3)), 8.0, 1e-15) && g.len() == 1);
        let s = WeightSpec::salas();
        let g = apply_t_power(&p(1), &s, 2, &delta(0, 1.0));
        assert!(close(g.get(&p(2)), 0.25, 1e-15) && g.len() == 1);
        let f = delta(4, 0.3);
        assert_eq!(apply_t_power(&p(1), &s, 0, &f), f);
    }

    #[test]
    fn s_power_examples() {
        let c2 = WeightSpec::constant(2.0).unwrap();
        let g = apply_s_power(&p(1), &c2, 1, &delta(0, 1.0));
        assert!(close(g.get(&p(-1)), 0.5, 1e-15) && g.len() == 1);
        let s = WeightSpec::salas();
        let g = apply_s_power(&p(1), &s, 2, &delta(0, 1.0));
        assert!(close(g.get(&p(-2)), 0.25, 1e-15) && g.len() == 1);
    }

    #[test]
    fn closed_form_matches_iteration() {
        let weights = [
            WeightSpec::salas(),
            WeightSpec::power_law(0.8, vec![1]).unwrap(),
            WeightSpec::table([(p(2), 3.0), (p(5), 0.1)], 0.9).unwrap(),
        ];
        let f = LatticeFunction::from_entries(
            &GroupModel::z(),
            [(p(-2), 0.7), (p(1), -0.4), (p(3), 1.0)],
        )
        .unwrap();
        for w in &weights {
            for n in [1, 2, 9, 25] {
                let closed = apply_t_power(&p(2), w, n, &f);
                let iterated = iterate_t(&p(2), w, n, &f);
                assert_eq!(closed.support(), iterated.support());
                for (x, v) in closed.iter() {
                    assert!(close(v, iterated.get(x), 1e-9));
                }
            }
        }
    }

    #[test]
    fn t_after_s_is_identity_on_diagonal() {
        let w = WeightSpec::power_law(-1.3, vec![1]).unwrap();
        let f =
            LatticeFunction::from_entries(&GroupModel::z(), [(p(-2), 0.7), (p(9), -0.4)]).unwrap();
        assert_eq!(apply_t_after_s(&p(1), &w, 40, &w, 40, &f), f);
        let s = WeightSpec::salas();
        // T^{2n} S^n = T^n
        let mixed = apply_t_after_s(&p(1), &s, 20, &s, 10, &f);
        let direct = apply_t_power(&p(1), &s, 10, &f);
        assert_eq!(mixed.support(), direct.support());
        for (x, v) in mixed.iter() {
            assert!(close(v, direct.get(x), 1e-12));
        }
    }

    #[test]
    fn norm_via_products_examples() {
        let q1 = NormParam::new(1.0).unwrap();
        let q2 = NormParam::new(2.0).unwrap();
        let c2 = WeightSpec::constant(2.0).unwrap();
        let chi0 = delta(0, 1.0);
        let n = norm_via_products(
            &p(1),
            &c2,
            3,
            &chi0,
            &CompactRegion::new([p(0)]),
            q1,
            PowerSide::T,
        );
        assert!(close(n, 8.0, 1e-15));
        let k = CompactRegion::interval(0, 3);
        let chi = LatticeFunction::indicator(&GroupModel::z(), &k).unwrap();
        let s = WeightSpec::salas();
        assert!(norm_via_products(&p(1), &s, 50, &chi, &k, q2, PowerSide::S) < 1e-13);
        let wide = CompactRegion::interval(-5, 5);
        assert_eq!(
            norm_via_products(&p(1), &s, 0, &chi, &wide, q2, PowerSide::T),
            chi.lp_norm(q2)
        );
    }

    #[test]
    fn unweighted_translation_is_isometry() {
        let one = WeightSpec::constant(1.0).unwrap();
        let f =
            LatticeFunction::from_entries(&GroupModel::z(), [(p(0), 0.3), (p(7), -1.9)]).unwrap();
        for q in [1.0, 2.0, 3.5] {
            let q = NormParam::new(q).unwrap();
            assert_eq!(apply_t_power(&p(3), &one, 17, &f).lp_norm(q), f.lp_norm(q));
        }
    }

    #[test]
    fn operator_spec_powers() {
        let op = OperatorSpec::new(p(1), WeightSpec::salas(), 2).unwrap();
        let f = delta(0, 1.0);
        assert_eq!(op.power(3, &f).support(), CompactRegion::new([p(6)]));
        assert_eq!(
            op.inverse_power(3, &f).support(),
            CompactRegion::new([p(-6)])
        );
        assert!(OperatorSpec::new(p(1), WeightSpec::salas(), 0).is_err());
    }
}
