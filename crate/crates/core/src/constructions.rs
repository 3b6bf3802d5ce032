//! Constructive pieces of the disjoint-transitivity argument for weighted
//! translations sharing one translation element:
//!
//! * [`build_uk`]: the vector `u = fχ_E + Σ_l S_l^n(f_l χ_E)` with every norm
//!   that enters its error accounting, computed along two routes.
//! * [`extract_eta_sets`]: the level-set decomposition that turns one good
//!   approximant `f` of `χ_K` into a set on which all weight products are small.
//! * [`synthesize_finite_horizon`]: a vector visiting a finite schedule of target tuples.
//! * [`simulate_orbit`]: distances of an orbit to a target tuple.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcspace::{LatticeFunction, NormParam};
use crate::group::{haar_measure, require_aperiodic, CompactRegion, GroupModel, GroupPoint};
use crate::numeric::rel_close;
use crate::translation::{
    apply_s_power, apply_t_after_s, apply_t_power, composite_log_multiplier,
    cross_norm_pow_via_products, norm_pow_via_products, OperatorSpec, PowerSide,
};
use crate::weights::{backward_product_inv, forward_product, ratio_product, WeightSpec};

/// Relative agreement required between the operator route and the
/// product-integral route for every term norm.
pub const ROUTE_TOLERANCE: f64 = 1e-9;

/// Norm `‖T_j^n S_l^n(f_l χ_E)‖_p^p` for an ordered pair `j != l` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTerm {
    pub j: usize,
    pub l: usize,
    pub norm_pow: f64,
}

/// A triangle-inequality decomposition `‖Σ pieces‖_p^p <= bound`.
///
/// `minkowski` is `(Σ ‖piece‖_p)^p`, valid for every input. `pth_power_sum` is
/// `Σ ‖piece‖_p^p`, which is a valid bound when `p = 1` or the pieces have
/// pairwise disjoint supports (then it is an equality up to the deficit piece).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub value_pow: f64,
    pub pth_power_sum: f64,
    pub minkowski: f64,
    pub pieces_disjoint: bool,
}

impl Decomposition {
    fn new(value_pow: f64, pieces_pow: &[f64], supports: &[CompactRegion], p: NormParam) -> Self {
        let pth_power_sum = pieces_pow.iter().sum();
        let minkowski = p.pow_abs(pieces_pow.iter().map(|v| p.root(*v)).sum());
        let pieces_disjoint = supports
            .iter()
            .enumerate()
            .all(|(i, a)| supports[i + 1..].iter().all(|b| a.is_disjoint(b)));
        Decomposition {
            value_pow,
            pth_power_sum,
            minkowski,
            pieces_disjoint,
        }
    }

    fn slack(bound: f64) -> f64 {
        bound * (1.0 + 1e-12) + 1e-300
    }

    pub fn minkowski_holds(&self) -> bool {
        self.value_pow <= Self::slack(self.minkowski)
    }

    pub fn pth_power_sum_holds(&self) -> bool {
        self.value_pow <= Self::slack(self.pth_power_sum)
    }

    /// True when the p-th power sum is expected to be a valid bound.
    pub fn pth_power_sum_applies(&self, p: NormParam) -> bool {
        p.value() == 1.0 || self.pieces_disjoint
    }
}

/// Everything [`build_uk`] computes. Norms are stored as p-th powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UkReport {
    pub n: u64,
    pub p: NormParam,
    pub u: LatticeFunction,
    /// Union of the supports of `f, f_1, …, f_N`.
    pub k_region: CompactRegion,
    pub e_region: CompactRegion,
    pub deficit_measure: f64,
    /// `‖T_l^n(f χ_E)‖_p^p` per operator.
    pub t_norm_pow: Vec<f64>,
    /// `‖S_l^n(f_l χ_E)‖_p^p` per operator.
    pub s_norm_pow: Vec<f64>,
    pub cross_norm_pow: Vec<CrossTerm>,
    /// `‖f‖_∞^p λ(K∖E)`.
    pub deficit_term: f64,
    /// `‖f_l‖_∞^p λ(K∖E)` per operator.
    pub deficit_terms: Vec<f64>,
    /// `‖u - f‖_p^p` against its decomposition.
    pub u_bound: Decomposition,
    /// `‖T_j^n u - f_j‖_p^p` against its decomposition, per operator.
    pub target_bounds: Vec<Decomposition>,
    /// Largest multiplier of each piece over `E` (`None` for empty `E`):
    /// forward products per operator, inverse backward products per operator,
    /// and composite `T_j S_l` multipliers in the order of `cross_norm_pow`.
    pub sup_forward: Vec<Option<f64>>,
    pub sup_backward: Vec<Option<f64>>,
    pub sup_cross: Vec<Option<f64>>,
    #[serde(skip)]
    norms_f: (f64, f64, Vec<f64>, Vec<f64>),
}

/// Outcome of checking the `ε/3` accounting on a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpsAccounting {
    pub hypotheses_met: bool,
    pub conclusion_holds: bool,
}

impl UkReport {
    pub fn u_distance(&self) -> f64 {
        self.p.root(self.u_bound.value_pow)
    }

    pub fn target_distances(&self) -> Vec<f64> {
        self.target_bounds
            .iter()
            .map(|d| self.p.root(d.value_pow))
            .collect()
    }

    pub fn cross(&self, j: usize, l: usize) -> Option<f64> {
        self.cross_norm_pow
            .iter()
            .find(|c| c.j == j && c.l == l)
            .map(|c| c.norm_pow)
    }

    /// Checks the hypotheses that make `u` land in every `ε`-ball (in p-th powers)
    /// and whether it actually does.
    pub fn eps_accounting(&self, eps: f64) -> EpsAccounting {
        let p = self.p;
        let n_ops = self.t_norm_pow.len() as f64;
        let (f_norm_pow, f_sup, ref target_norm_pow, ref target_sup) = self.norms_f;
        let below = |sup: Option<f64>, budget: f64| match sup {
            None => true,
            Some(s) => budget.is_infinite() || p.pow_abs(s) < budget,
        };
        let budget = |norm_pow: f64, parts: f64| {
            if norm_pow == 0.0 {
                f64::INFINITY
            } else {
                eps / (parts * norm_pow)
            }
        };
        let mut ok = self
            .sup_forward
            .iter()
            .all(|s| below(*s, budget(f_norm_pow, 3.0)));
        for (l, s) in self.sup_backward.iter().enumerate() {
            ok &= below(*s, budget(target_norm_pow[l], 3.0 * n_ops));
        }
        for (c, s) in self.cross_norm_pow.iter().zip(&self.sup_cross) {
            ok &= below(*s, budget(target_norm_pow[c.l - 1], 3.0 * n_ops));
        }
        let sup_max = target_sup.iter().fold(f_sup, |m, v| m.max(*v));
        let sup_max_pow = p.pow_abs(sup_max);
        ok &= sup_max_pow == 0.0 || self.deficit_measure < eps / (3.0 * sup_max_pow);
        let conclusion =
            self.u_bound.value_pow < eps && self.target_bounds.iter().all(|d| d.value_pow < eps);
        EpsAccounting {
            hypotheses_met: ok,
            conclusion_holds: conclusion,
        }
    }
}

fn check_common_model(f: &LatticeFunction, others: &[LatticeFunction]) -> Result<()> {
    if others.iter().any(|g| g.model() != f.model()) {
        return Err(Error::ModelMismatch);
    }
    Ok(())
}

fn check_ops(model: &GroupModel, ops: &[OperatorSpec]) -> Result<()> {
    let first = ops
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one operator required".into()))?;
    for op in ops {
        op.validate_for(model)?;
        if op.a != first.a {
            return Err(Error::InvalidArgument(
                "operators must share the translation element".into(),
            ));
        }
    }
    Ok(())
}

fn cross_check(label: &str, operator_route: f64, integral_route: f64) -> Result<f64> {
    if rel_close(operator_route, integral_route, ROUTE_TOLERANCE) {
        Ok(operator_route)
    } else {
        Err(Error::Internal(format!(
            "{label}: operator route {operator_route:e} disagrees with product integral {integral_route:e}"
        )))
    }
}

fn sup_log_over<F: Fn(&GroupPoint) -> f64>(region: &CompactRegion, log: F) -> Option<f64> {
    region.iter().map(log).reduce(f64::max).map(f64::exp)
}

/// Builds `u = fχ_E + Σ_l S_l^n(f_l χ_E)` where `S_l^n = S_{a,w_l}^{r_l n}`, and
/// reports every term of its error accounting. Each term norm is computed by
/// applying the operators and by integrating the weight products over `E`;
/// the two must agree to [`ROUTE_TOLERANCE`].
pub fn build_uk(
    f: &LatticeFunction,
    targets: &[LatticeFunction],
    ops: &[OperatorSpec],
    n: u64,
    e_region: &CompactRegion,
    p: NormParam,
) -> Result<UkReport> {
    let model = f.model().clone();
    check_common_model(f, targets)?;
    check_ops(&model, ops)?;
    e_region.validate(&model)?;
    if targets.len() != ops.len() {
        return Err(Error::InvalidArgument(format!(
            "{} targets for {} operators",
            targets.len(),
            ops.len()
        )));
    }
    let a = &ops[0].a;
    let n_ops = ops.len();

    let k_region = targets
        .iter()
        .fold(f.support(), |k, g| k.union(&g.support()));
    let missing = k_region.difference(e_region);
    let deficit_measure = haar_measure(&model, &missing);

    let f_e = f.restrict(e_region);
    let targets_e: Vec<LatticeFunction> = targets.iter().map(|g| g.restrict(e_region)).collect();
    let s_pieces: Vec<LatticeFunction> = ops
        .iter()
        .zip(&targets_e)
        .map(|(op, g)| op.inverse_power(n, g))
        .collect();
    let u = s_pieces.iter().try_fold(f_e.clone(), |acc, s| acc.add(s))?;

    let mut t_norm_pow = Vec::with_capacity(n_ops);
    let mut s_norm_pow = Vec::with_capacity(n_ops);
    let mut t_pieces = Vec::with_capacity(n_ops);
    for (l, op) in ops.iter().enumerate() {
        let t_piece = op.power(n, &f_e);
        let t_integral = norm_pow_via_products(a, &op.w, op.r * n, f, e_region, p, PowerSide::T);
        t_norm_pow.push(cross_check(
            &format!("T-norm, operator {}", l + 1),
            t_piece.lp_norm_pow(p),
            t_integral,
        )?);
        t_pieces.push(t_piece);
        let s_integral =
            norm_pow_via_products(a, &op.w, op.r * n, &targets[l], e_region, p, PowerSide::S);
        s_norm_pow.push(cross_check(
            &format!("S-norm, operator {}", l + 1),
            s_pieces[l].lp_norm_pow(p),
            s_integral,
        )?);
    }

    let mut cross_norm_pow = Vec::new();
    let mut cross_pieces = vec![Vec::new(); n_ops];
    let mut sup_cross = Vec::new();
    for (j, op_j) in ops.iter().enumerate() {
        for (l, op_l) in ops.iter().enumerate() {
            if j == l {
                continue;
            }
            let piece = op_j.power(n, &s_pieces[l]);
            let integral = cross_norm_pow_via_products(
                a,
                &op_j.w,
                op_j.r * n,
                &op_l.w,
                op_l.r * n,
                &targets[l],
                e_region,
                p,
            );
            let norm_pow = cross_check(
                &format!("cross term ({}, {})", j + 1, l + 1),
                piece.lp_norm_pow(p),
                integral,
            )?;
            cross_norm_pow.push(CrossTerm {
                j: j + 1,
                l: l + 1,
                norm_pow,
            });
            sup_cross.push(sup_log_over(e_region, |x| {
                composite_log_multiplier(&model, a, &op_j.w, op_j.r * n, &op_l.w, op_l.r * n, x)
            }));
            cross_pieces[j].push(piece);
        }
    }

    let f_sup = f.sup_norm();
    let deficit_term = p.pow_abs(f_sup) * deficit_measure;
    let deficit_terms: Vec<f64> = targets
        .iter()
        .map(|g| p.pow_abs(g.sup_norm()) * deficit_measure)
        .collect();

    let u_minus_f = u.sub(f)?;
    let mut pieces = vec![deficit_term];
    pieces.extend(&s_norm_pow);
    let mut supports = vec![f.restrict(&missing).support()];
    supports.extend(s_pieces.iter().map(|s| s.support()));
    let u_bound = Decomposition::new(u_minus_f.lp_norm_pow(p), &pieces, &supports, p);

    let mut target_bounds = Vec::with_capacity(n_ops);
    for (j, op) in ops.iter().enumerate() {
        let residual = op.power(n, &u).sub(&targets[j])?;
        let mut pieces = vec![t_norm_pow[j], deficit_terms[j]];
        let mut supports = vec![
            t_pieces[j].support(),
            targets[j].restrict(&missing).support(),
        ];
        for (c, piece) in cross_norm_pow
            .iter()
            .filter(|c| c.j == j + 1)
            .zip(&cross_pieces[j])
        {
            pieces.push(c.norm_pow);
            supports.push(piece.support());
        }
        target_bounds.push(Decomposition::new(
            residual.lp_norm_pow(p),
            &pieces,
            &supports,
            p,
        ));
    }

    let sup_forward = ops
        .iter()
        .map(|op| {
            sup_log_over(e_region, |x| {
                forward_product(&model, &op.w, a, x, op.r * n).log_value
            })
        })
        .collect();
    let sup_backward = ops
        .iter()
        .map(|op| {
            sup_log_over(e_region, |x| {
                backward_product_inv(&model, &op.w, a, x, op.r * n).log_value
            })
        })
        .collect();

    let norms_f = (
        f.lp_norm_pow(p),
        f_sup,
        targets.iter().map(|g| g.lp_norm_pow(p)).collect(),
        targets.iter().map(|g| g.sup_norm()).collect(),
    );

    Ok(UkReport {
        n,
        p,
        u,
        k_region,
        e_region: e_region.clone(),
        deficit_measure,
        t_norm_pow,
        s_norm_pow,
        cross_norm_pow,
        deficit_term,
        deficit_terms,
        u_bound,
        target_bounds,
        sup_forward,
        sup_backward,
        sup_cross,
        norms_f,
    })
}

/// Measures of the level sets of an approximant `f` of `χ_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaMeasures {
    pub a: f64,
    pub b: f64,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub f: Vec<f64>,
    pub h: f64,
    pub e: f64,
    /// `λ(A ∪ (B + m·a) ∪ H)`.
    pub union: f64,
}

/// Whether each measure stays below its `η^p` budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaBounds {
    pub eta_p: f64,
    pub a: bool,
    pub b: bool,
    pub c: Vec<bool>,
    pub d: Vec<bool>,
    pub f: Vec<bool>,
    /// `(2 + 3N) η^p`.
    pub union_bound: f64,
    pub union: bool,
}

impl EtaBounds {
    pub fn all_hold(&self) -> bool {
        self.a && self.b && self.union && self.c.iter().chain(&self.d).chain(&self.f).all(|b| *b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaPremise {
    /// `‖f - χ_K‖_p`.
    pub dist_f: f64,
    /// `‖T_l^m f - χ_K‖_p` per weight.
    pub dist_t: Vec<f64>,
    /// `η²`.
    pub threshold: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSup {
    pub j: usize,
    pub l: usize,
    pub sup: Option<f64>,
}

/// Largest products over `E` (`None` when `E` is empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSups {
    /// `η / (1 - η)`.
    pub threshold: f64,
    pub backward_inv: Vec<Option<f64>>,
    pub forward: Vec<Option<f64>>,
    /// Reported only; no bound is asserted for ratio products.
    pub ratio: Vec<RatioSup>,
}

impl EtaSups {
    /// Backward and forward sups below `η/(1-η)`; vacuous for empty `E`.
    pub fn single_products_below_threshold(&self) -> bool {
        self.backward_inv
            .iter()
            .chain(&self.forward)
            .all(|s| s.is_none_or(|v| v < self.threshold))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaStatus {
    PremiseViolated,
    BoundsHold,
    BoundsViolated,
}

/// The sets `A, B, C_l, D_l, F_l, H, E` for one approximant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSetDecomposition {
    pub eta: f64,
    pub m: u64,
    pub status: EtaStatus,
    pub premise: EtaPremise,
    pub a_set: CompactRegion,
    pub b_set: CompactRegion,
    pub c_sets: Vec<CompactRegion>,
    pub d_sets: Vec<CompactRegion>,
    pub f_sets: Vec<CompactRegion>,
    pub h_set: CompactRegion,
    pub e_set: CompactRegion,
    pub measures: EtaMeasures,
    pub bounds: EtaBounds,
    pub sups: EtaSups,
}

fn level_set<F: Fn(&GroupPoint) -> f64>(
    cells: impl Iterator<Item = GroupPoint>,
    eta: f64,
    value: F,
) -> CompactRegion {
    cells.filter(|x| value(x).abs() >= eta).collect()
}

/// Computes the level sets of `f` against `χ_K` and the translates `T_l^m f`.
///
/// Sets defined on `G ∖ K` are evaluated on `supp f ∪ supp T_l^m f`, outside of
/// which their defining inequalities cannot hold.
pub fn extract_eta_sets(
    f: &LatticeFunction,
    weights: &[WeightSpec],
    a: &GroupPoint,
    m: u64,
    k_region: &CompactRegion,
    eta: f64,
    p: NormParam,
) -> Result<EtaSetDecomposition> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eta must lie in (0, 1), got {eta}"
        )));
    }
    if weights.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one weight required".into(),
        ));
    }
    let model = f.model();
    k_region.validate(model)?;
    for w in weights {
        w.validate_for(model)?;
    }
    let horizon = require_aperiodic(model, k_region, a)?;
    if m <= horizon {
        return Err(Error::InvalidArgument(format!(
            "m = {m} must exceed the aperiodicity horizon {horizon} of K"
        )));
    }
    let n_w = weights.len();
    let chi_k = LatticeFunction::indicator(model, k_region)?;
    let shifted: Vec<LatticeFunction> = weights.iter().map(|w| apply_t_power(a, w, m, f)).collect();

    let dist_f = f.lp_distance(&chi_k, p)?;
    let dist_t = shifted
        .iter()
        .map(|g| g.lp_distance(&chi_k, p))
        .collect::<Result<Vec<_>>>()?;
    let threshold = eta * eta;
    let premise = EtaPremise {
        dist_f,
        ok: dist_f < threshold && dist_t.iter().all(|d| *d < threshold),
        dist_t,
        threshold,
    };

    let k_cells = || k_region.iter().cloned();
    let a_set = level_set(k_cells(), eta, |x| f.get(x) - 1.0);
    let b_set = level_set(f.support().difference(k_region).iter().cloned(), eta, |x| {
        f.get(x)
    });
    let c_sets: Vec<CompactRegion> = shifted
        .iter()
        .map(|g| level_set(k_cells(), eta, |x| g.get(x) - 1.0))
        .collect();
    let d_sets: Vec<CompactRegion> = weights
        .iter()
        .map(|w| {
            level_set(k_cells(), eta, |x| {
                forward_product(model, w, a, x, m).value() * f.get(x)
            })
        })
        .collect();
    let f_sets: Vec<CompactRegion> = shifted
        .iter()
        .map(|g| {
            level_set(g.support().difference(k_region).iter().cloned(), eta, |x| {
                g.get(x)
            })
        })
        .collect();
    let h_set = c_sets
        .iter()
        .chain(&d_sets)
        .chain(&f_sets)
        .fold(CompactRegion::empty(), |h, s| h.union(s));
    let b_moved = b_set.translated(model, a, -(m as i64));
    let removed = a_set.union(&b_moved).union(&h_set);
    let e_set = k_region.difference(&removed);

    let mu = |r: &CompactRegion| haar_measure(model, r);
    let measures = EtaMeasures {
        a: mu(&a_set),
        b: mu(&b_set),
        c: c_sets.iter().map(mu).collect(),
        d: d_sets.iter().map(mu).collect(),
        f: f_sets.iter().map(mu).collect(),
        h: mu(&h_set),
        e: mu(&e_set),
        union: mu(&removed),
    };
    let eta_p = p.pow_abs(eta);
    let union_bound = (2.0 + 3.0 * n_w as f64) * eta_p;
    let bounds = EtaBounds {
        eta_p,
        a: measures.a < eta_p,
        b: measures.b < eta_p,
        c: measures.c.iter().map(|v| *v < eta_p).collect(),
        d: measures.d.iter().map(|v| *v < eta_p).collect(),
        f: measures.f.iter().map(|v| *v < eta_p).collect(),
        union_bound,
        union: measures.union < union_bound,
    };

    let sup = |log: &dyn Fn(&GroupPoint) -> f64| sup_log_over(&e_set, log);
    let mut ratio = Vec::new();
    for (j, wj) in weights.iter().enumerate() {
        for (l, wl) in weights.iter().enumerate() {
            if j != l {
                ratio.push(RatioSup {
                    j: j + 1,
                    l: l + 1,
                    sup: sup(&|x| ratio_product(model, wj, wl, a, x, m).log_value),
                });
            }
        }
    }
    let sups = EtaSups {
        threshold: eta / (1.0 - eta),
        backward_inv: weights
            .iter()
            .map(|w| sup(&|x| backward_product_inv(model, w, a, x, m).log_value))
            .collect(),
        forward: weights
            .iter()
            .map(|w| sup(&|x| forward_product(model, w, a, x, m).log_value))
            .collect(),
        ratio,
    };

    let status = if !premise.ok {
        EtaStatus::PremiseViolated
    } else if bounds.all_hold() && sups.single_products_below_threshold() {
        EtaStatus::BoundsHold
    } else {
        EtaStatus::BoundsViolated
    };

    Ok(EtaSetDecomposition {
        eta,
        m,
        status,
        premise,
        a_set,
        b_set,
        c_sets,
        d_sets,
        f_sets,
        h_set,
        e_set,
        measures,
        bounds,
        sups,
    })
}

/// Tries `η = 2^{-i}` for `i = 1..=max_halvings` and returns the largest one
/// whose premise and bounds hold.
pub fn scan_eta(
    f: &LatticeFunction,
    weights: &[WeightSpec],
    a: &GroupPoint,
    m: u64,
    k_region: &CompactRegion,
    p: NormParam,
    max_halvings: u32,
) -> Result<Option<EtaSetDecomposition>> {
    for i in 1..=max_halvings {
        let eta = 0.5f64.powi(i as i32);
        let dec = extract_eta_sets(f, weights, a, m, k_region, eta, p)?;
        if dec.status == EtaStatus::BoundsHold {
            return Ok(Some(dec));
        }
    }
    Ok(None)
}

/// One exactly evaluated residual `‖T_l^{m_j} S_{l'}^{m_{j'}} g_{j'}^{(l')}‖_p`
/// (all indices 1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualTerm {
    pub t_time: usize,
    pub t_op: usize,
    pub s_time: usize,
    pub s_op: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SynthesisOutcome {
    Success {
        u: LatticeFunction,
        times: Vec<u64>,
        /// `‖T_l^{m_j} u - g_j^{(l)}‖_p`, indexed `[j][l]`, by direct evaluation.
        distances: Vec<Vec<f64>>,
    },
    Exhausted {
        /// Tuple (1-based) for which no admissible time was found.
        tuple: usize,
        times: Vec<u64>,
        best_time: u64,
        worst_term: ResidualTerm,
        threshold: f64,
    },
}

/// Finds times `m_1 < … < m_J` and `u = Σ_j Σ_l S_l^{m_j}(g_j^{(l)})` whose
/// orbit passes within `ε` of every target tuple at its scheduled time.
///
/// Each time is the smallest one after its predecessor for which every residual
/// term involving it (against all earlier times, in both directions) has norm
/// below `ε / (2JN)`.
pub fn synthesize_finite_horizon(
    ops: &[OperatorSpec],
    schedule: &[Vec<LatticeFunction>],
    eps: f64,
    budget: u64,
    p: NormParam,
) -> Result<SynthesisOutcome> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument(
            "schedule needs at least one target tuple".into(),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let model = schedule[0]
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty target tuple".into()))?
        .model()
        .clone();
    check_ops(&model, ops)?;
    for tuple in schedule {
        if tuple.len() != ops.len() {
            return Err(Error::InvalidArgument(
                "each tuple needs one target per operator".into(),
            ));
        }
        check_common_model(&schedule[0][0], tuple)?;
    }
    let a = &ops[0].a;
    let n_ops = ops.len();
    let threshold = eps / (2.0 * schedule.len() as f64 * n_ops as f64);

    let term = |t_op: usize, t_time: u64, s_op: usize, s_time: u64, g: &LatticeFunction| -> f64 {
        let (ot, os) = (&ops[t_op], &ops[s_op]);
        apply_t_after_s(a, &ot.w, ot.r * t_time, &os.w, os.r * s_time, g).lp_norm(p)
    };

    let mut times: Vec<u64> = Vec::new();
    for (j, tuple) in schedule.iter().enumerate() {
        let start = times.last().map_or(1, |m| m + 1);
        let mut best: Option<(u64, ResidualTerm)> = None;
        let mut chosen = None;
        for m in start..=budget {
            let mut worst = ResidualTerm {
                t_time: j + 1,
                t_op: 1,
                s_time: j + 1,
                s_op: 1,
                norm: 0.0,
            };
            let mut record = |t_time: usize, t_op: usize, s_time: usize, s_op: usize, norm: f64| {
                if norm > worst.norm || norm.is_nan() {
                    worst = ResidualTerm {
                        t_time: t_time + 1,
                        t_op: t_op + 1,
                        s_time: s_time + 1,
                        s_op: s_op + 1,
                        norm,
                    };
                }
            };
            for l in 0..n_ops {
                for l2 in 0..n_ops {
                    if l != l2 {
                        record(j, l, j, l2, term(l, m, l2, m, &tuple[l2]));
                    }
                    for (j2, &m2) in times.iter().enumerate() {
                        record(j, l, j2, l2, term(l, m, l2, m2, &schedule[j2][l2]));
                        record(j2, l, j, l2, term(l, m2, l2, m, &tuple[l2]));
                    }
                }
            }
            if worst.norm < threshold {
                chosen = Some(m);
                break;
            }
            if best.as_ref().is_none_or(|(_, b)| worst.norm < b.norm) {
                best = Some((m, worst));
            }
        }
        match chosen {
            Some(m) => times.push(m),
            None => {
                let (best_time, worst_term) = best.unwrap_or((
                    start,
                    ResidualTerm {
                        t_time: j + 1,
                        t_op: 1,
                        s_time: j + 1,
                        s_op: 1,
                        norm: f64::INFINITY,
                    },
                ));
                return Ok(SynthesisOutcome::Exhausted {
                    tuple: j + 1,
                    times,
                    best_time,
                    worst_term,
                    threshold,
                });
            }
        }
    }

    let mut u = LatticeFunction::zero(&model);
    for (tuple, &m) in schedule.iter().zip(&times) {
        for (op, g) in ops.iter().zip(tuple) {
            u = u.add(&apply_s_power(a, &op.w, op.r * m, g))?;
        }
    }
    let mut distances = Vec::with_capacity(schedule.len());
    for (tuple, &m) in schedule.iter().zip(&times) {
        let row = ops
            .iter()
            .zip(tuple)
            .map(|(op, g)| op.power(m, &u).lp_distance(g, p))
            .collect::<Result<Vec<_>>>()?;
        if row.iter().any(|d| !(*d < eps)) {
            return Err(Error::Internal(format!(
                "synthesized vector misses a target at time {m}: distances {row:?}"
            )));
        }
        distances.push(row);
    }
    Ok(SynthesisOutcome::Success {
        u,
        times,
        distances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRow {
    pub n: u64,
    /// `max_l ‖T_l^n u - g^{(l)}‖_p`.
    pub d: f64,
    pub per_op: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSeries {
    pub rows: Vec<OrbitRow>,
}

impl OrbitSeries {
    /// Times `n` with `d_n < ε`.
    pub fn visits(&self, eps: f64) -> Vec<u64> {
        self.rows
            .iter()
            .filter(|r| r.d < eps)
            .map(|r| r.n)
            .collect()
    }

    pub fn distance_at(&self, n: u64) -> Option<f64> {
        self.rows.iter().find(|r| r.n == n).map(|r| r.d)
    }
}

/// Distances of the joint orbit `(T_1^n u, …, T_N^n u)` to `(g^{(1)}, …, g^{(N)})`
/// for `n = 0..=n_max`.
pub fn simulate_orbit(
    ops: &[OperatorSpec],
    u: &LatticeFunction,
    targets: &[LatticeFunction],
    p: NormParam,
    n_max: u64,
) -> Result<OrbitSeries> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be >= 1".into()));
    }
    check_common_model(u, targets)?;
    check_ops(u.model(), ops)?;
    if targets.len() != ops.len() {
        return Err(Error::InvalidArgument(
            "one target per operator required".into(),
        ));
    }
    let rows = (0..=n_max)
        .into_par_iter()
        .map(|n| {
            let per_op = ops
                .iter()
                .zip(targets)
                .map(|(op, g)| op.power(n, u).lp_distance(g, p))
                .collect::<Result<Vec<f64>>>()?;
            let d = per_op.iter().copied().fold(0.0, f64::max);
            Ok(OrbitRow { n, d, per_op })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OrbitSeries { rows })
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

    fn q2() -> NormParam {
        NormParam::new(2.0).unwrap()
    }

    fn salas_op(r: u64) -> OperatorSpec {
        OperatorSpec::new(p(1), WeightSpec::salas(), r).unwrap()
    }

    fn chi(lo: i64, hi: i64) -> LatticeFunction {
        LatticeFunction::indicator(&z(), &CompactRegion::interval(lo, hi)).unwrap()
    }

    #[test]
    fn uk_single_operator_lands_in_balls() {
        let k = CompactRegion::interval(0, 3);
        let f = chi(0, 3);
        let rep = build_uk(&f, std::slice::from_ref(&f), &[salas_op(1)], 50, &k, q2()).unwrap();
        assert!(rep.u_distance() < 0.01);
        assert!(rep.target_distances()[0] < 0.01);
        // independent oracle: at y in [0,3] the inverted product is 2^-(50-2y)
        let oracle_s = (0..=3)
            .map(|y: i64| 0.5f64.powi(2 * (50 - 2 * y) as i32))
            .sum::<f64>();
        assert!(rel_close(rep.s_norm_pow[0], oracle_s, 1e-12));
        assert!(rep.u_bound.minkowski_holds() && rep.u_bound.pth_power_sum_holds());
    }

    #[test]
    fn uk_empty_region_is_zero() {
        let f = chi(0, 3);
        let rep = build_uk(
            &f,
            &[f.clone(), f.clone()],
            &[salas_op(1), salas_op(2)],
            20,
            &CompactRegion::empty(),
            q2(),
        )
        .unwrap();
        assert!(rep.u.is_zero());
        assert!(rep
            .t_norm_pow
            .iter()
            .chain(&rep.s_norm_pow)
            .all(|v| *v == 0.0));
        assert!(rep.cross_norm_pow.iter().all(|c| c.norm_pow == 0.0));
        assert_eq!(rep.deficit_measure, 4.0);
    }

    #[test]
    fn uk_zero_power_sums_restrictions() {
        let f = chi(0, 3);
        let g1 = LatticeFunction::delta(&z(), p(1), 0.5).unwrap();
        let g2 = LatticeFunction::delta(&z(), p(7), -2.0).unwrap();
        let e = CompactRegion::interval(0, 2);
        let rep = build_uk(
            &f,
            &[g1.clone(), g2.clone()],
            &[salas_op(1), salas_op(1)],
            0,
            &e,
            q2(),
        )
        .unwrap();
        let expected = f.add(&g1).unwrap().add(&g2).unwrap().restrict(&e);
        assert_eq!(rep.u, expected);
    }

    #[test]
    fn pth_power_sum_can_fail_for_overlapping_pieces() {
        // identical operators put both S-pieces on the same cells
        let f = LatticeFunction::zero(&z());
        let g = chi(0, 3);
        let k = CompactRegion::interval(0, 3);
        let rep = build_uk(
            &f,
            &[g.clone(), g.clone()],
            &[salas_op(1), salas_op(1)],
            5,
            &k,
            q2(),
        )
        .unwrap();
        assert!(!rep.u_bound.pieces_disjoint);
        assert!(!rep.u_bound.pth_power_sum_holds());
        assert!(rep.u_bound.minkowski_holds());
    }

    #[test]
    fn eps_accounting_on_salas_pair() {
        let k = CompactRegion::interval(-5, 5);
        let f = chi(-5, 5).scale(0.5);
        let targets = [chi(-2, 2), chi(-5, 0)];
        let rep = build_uk(&f, &targets, &[salas_op(1), salas_op(2)], 80, &k, q2()).unwrap();
        let acc = rep.eps_accounting(0.01);
        assert!(acc.hypotheses_met);
        assert!(acc.conclusion_holds);
    }

    #[test]
    fn eta_sets_from_constructed_approximant() {
        let k = CompactRegion::interval(0, 3);
        let f = chi(0, 3);
        let rep = build_uk(&f, std::slice::from_ref(&f), &[salas_op(1)], 60, &k, q2()).unwrap();
        let dec =
            extract_eta_sets(&rep.u, &[WeightSpec::salas()], &p(1), 60, &k, 0.1, q2()).unwrap();
        assert_eq!(dec.status, EtaStatus::BoundsHold);
        assert!(dec.premise.ok);
        assert!(dec.bounds.all_hold());
        assert_eq!(dec.e_set, k);
        assert!(dec.sups.backward_inv[0].unwrap() < 0.1 / 0.9);
    }

    #[test]
    fn eta_premise_fails_for_indicator() {
        let k = CompactRegion::interval(0, 3);
        let dec =
            extract_eta_sets(&chi(0, 3), &[WeightSpec::salas()], &p(1), 60, &k, 0.1, q2()).unwrap();
        assert_eq!(dec.status, EtaStatus::PremiseViolated);
        assert!(dec.premise.dist_t[0] > 1.9);
    }

    #[test]
    fn eta_argument_errors() {
        let k = CompactRegion::interval(0, 3);
        let w = [WeightSpec::salas()];
        assert!(extract_eta_sets(&chi(0, 3), &w, &p(1), 60, &k, 1.2, q2()).is_err());
        assert!(extract_eta_sets(&chi(0, 3), &w, &p(1), 60, &k, 0.0, q2()).is_err());
        assert!(extract_eta_sets(&chi(0, 3), &w, &p(1), 3, &k, 0.1, q2()).is_err());
    }

    #[test]
    fn eta_scan_finds_largest_passing() {
        let k = CompactRegion::interval(0, 3);
        let f = chi(0, 3);
        let rep = build_uk(&f, std::slice::from_ref(&f), &[salas_op(1)], 60, &k, q2()).unwrap();
        let dec = scan_eta(&rep.u, &[WeightSpec::salas()], &p(1), 60, &k, q2(), 10)
            .unwrap()
            .unwrap();
        assert_eq!(dec.eta, 0.5);
    }

    #[test]
    fn orbit_of_unweighted_point_mass() {
        let one = OperatorSpec::new(p(1), WeightSpec::constant(1.0).unwrap(), 1).unwrap();
        let d0 = LatticeFunction::delta(&z(), p(0), 1.0).unwrap();
        for q in [1.0, 2.0, 3.0] {
            let q = NormParam::new(q).unwrap();
            let series = simulate_orbit(
                std::slice::from_ref(&one),
                &d0,
                std::slice::from_ref(&d0),
                q,
                6,
            )
            .unwrap();
            assert_eq!(series.rows[0].d, 0.0);
            for row in &series.rows[1..] {
                assert!((row.d - q.root(2.0)).abs() < 1e-15);
            }
            assert_eq!(series.visits(0.5), vec![0]);
        }
    }

    #[test]
    fn orbit_of_zero() {
        let zero = LatticeFunction::zero(&z());
        let series = simulate_orbit(
            &[salas_op(1), salas_op(2)],
            &zero,
            &[zero.clone(), zero.clone()],
            q2(),
            5,
        )
        .unwrap();
        assert!(series.rows.iter().all(|r| r.d == 0.0));
    }

    #[test]
    fn single_tuple_synthesis_matches_uk() {
        let ops = [salas_op(1), salas_op(2)];
        let tuple = vec![chi(-2, 2).scale(0.3), chi(0, 4)];
        let out =
            synthesize_finite_horizon(&ops, std::slice::from_ref(&tuple), 0.1, 200, q2()).unwrap();
        let SynthesisOutcome::Success { u, times, .. } = out else {
            panic!("expected success");
        };
        let k = tuple[0].support().union(&tuple[1].support());
        let rep = build_uk(
            &LatticeFunction::zero(&z()),
            &tuple,
            &ops,
            times[0],
            &k,
            q2(),
        )
        .unwrap();
        assert_eq!(rep.u.support(), u.support());
        for (x, v) in u.iter() {
            assert!((v - rep.u.get(x)).abs() <= 1e-15 * v.abs());
        }
    }
}
