//! Finite-horizon checkers for the product conditions of single and disjoint
//! hypercyclicity of weighted translations.
//!
//! The product-condition checkers search greedily for a witness sequence
//! `(n_k, E_k)`: for each `k` the least `n > n_{k-1}` whose maximal admissible
//! set `E = {x ∈ K : every product < ε_k}` leaves `λ(K∖E) <= δ_k`. Where
//! a structural obstruction exists the checker returns a certificate instead
//! of searching.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constructions::{build_uk, UkReport};
use crate::error::{Error, Result};
use crate::funcspace::{LatticeFunction, NormParam};
use crate::group::{haar_measure, require_aperiodic, CompactRegion, GroupModel, GroupPoint};
use crate::translation::OperatorSpec;
use crate::weights::{
    backward_product_inv, forward_product, ratio_product, strictly_below_log, WeightSpec,
};

/// Label attached to every one-directional result.
pub const RELAXATION_NOTE: &str =
    "one-directional relaxation: only the listed ordered pairs are constrained, not every ordered pair";

/// Tolerance schedule `ε_k`, deficit schedule `δ_k` and search budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessSchedule {
    pub eps: Vec<f64>,
    pub deficit: Vec<f64>,
    pub n_max: u64,
}

impl WitnessSchedule {
    pub const DEFAULT_K_MAX: usize = 10;
    pub const DEFAULT_N_MAX: u64 = 1000;

    pub fn new(eps: Vec<f64>, deficit: Vec<f64>, n_max: u64) -> Result<Self> {
        let s = WitnessSchedule {
            eps,
            deficit,
            n_max,
        };
        s.validate()?;
        Ok(s)
    }

    /// `ε_k = 2^{-k}` and `δ_k = λ(K)·k^{-p}` for `k = 1..=k_max`.
    pub fn defaults(measure_k: f64, p: NormParam, k_max: usize, n_max: u64) -> Result<Self> {
        let eps = (1..=k_max).map(|k| 0.5f64.powi(k as i32)).collect();
        let deficit = (1..=k_max)
            .map(|k| measure_k * (k as f64).powf(-p.value()))
            .collect();
        Self::new(eps, deficit, n_max)
    }

    /// Schedule demanding `E_k = K` at every step.
    pub fn exact(eps: Vec<f64>, n_max: u64) -> Result<Self> {
        let deficit = vec![0.0; eps.len()];
        Self::new(eps, deficit, n_max)
    }

    pub fn k_max(&self) -> usize {
        self.eps.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() {
            return Err(Error::InvalidArgument("schedule needs k_max >= 1".into()));
        }
        if self.n_max == 0 {
            return Err(Error::InvalidArgument("schedule needs n_max >= 1".into()));
        }
        if self.deficit.len() != self.eps.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tolerances but {} deficits",
                self.eps.len(),
                self.deficit.len()
            )));
        }
        if self.eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::InvalidArgument(
                "tolerances must be positive and finite".into(),
            ));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument(
                "tolerances must be strictly decreasing".into(),
            ));
        }
        if self.deficit.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidArgument(
                "deficits must be nonnegative and finite".into(),
            ));
        }
        if self.deficit.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument(
                "deficits must be nonincreasing".into(),
            ));
        }
        Ok(())
    }
}

/// One step `(n_k, E_k)` of a witness, with the largest products over `E_k`
/// (`None` when `E_k` is empty or the family is unconstrained).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessEntry {
    pub k: usize,
    pub n: u64,
    pub region: CompactRegion,
    pub eps: f64,
    pub allowed_deficit: f64,
    pub deficit: f64,
    pub sup_forward: Option<f64>,
    pub sup_backward: Option<f64>,
    pub sup_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessSequence {
    pub entries: Vec<WitnessEntry>,
}

/// Search record for one `k`: the chosen `n` when admissible, otherwise the
/// `n` with the smallest deficit. Sups are taken over all of `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KDiagnostic {
    pub k: usize,
    pub eps: f64,
    pub allowed_deficit: f64,
    pub admissible: bool,
    pub n: u64,
    pub deficit: f64,
    pub sup_forward: Option<f64>,
    pub sup_backward: Option<f64>,
    pub sup_ratio: Option<f64>,
}

/// Ordered pair `(j, l)` of weight indices, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderedPair {
    pub j: usize,
    pub l: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// A weight bounded below by 1 keeps `φ_n >= 1`; one bounded above by 1
    /// keeps `φ̃_n >= 1`. Either way no point of `K` meets `ε_k <= 1`, while
    /// `δ_k < λ(K)` forces a nonempty `E_k`.
    Monotone {
        weight: usize,
        lower_bound: f64,
        upper_bound: f64,
        forward_at_least_one: bool,
        backward_at_least_one: bool,
        k: usize,
        eps_k: f64,
        allowed_deficit: f64,
        measure_k: f64,
    },
    /// `R^{(j,l)}_n R^{(l,j)}_n = 1` pointwise, so the larger of the two is
    /// at least 1 everywhere and no point of `K` meets `ε_k <= 1`, while
    /// `δ_k < λ(K)` forces a nonempty `E_k`. `max_abs_log_sum` is the largest
    /// `|log R^{(j,l)}_n(x) + log R^{(l,j)}_n(x)|` over `x ∈ K`, `n <= n_checked`.
    ReciprocalObstruction {
        pair: OrderedPair,
        k: usize,
        eps_k: f64,
        allowed_deficit: f64,
        measure_k: f64,
        n_checked: u64,
        points_checked: usize,
        max_abs_log_sum: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    Satisfied {
        witness: WitnessSequence,
        diagnostics: Vec<KDiagnostic>,
    },
    Refuted {
        certificate: Certificate,
    },
    BudgetExhausted {
        found: Vec<WitnessEntry>,
        diagnostics: Vec<KDiagnostic>,
    },
}

impl Verdict {
    pub fn is_satisfied(&self) -> bool {
        matches!(self, Verdict::Satisfied { .. })
    }

    pub fn witness(&self) -> Option<&WitnessSequence> {
        match self {
            Verdict::Satisfied { witness, .. } => Some(witness),
            _ => None,
        }
    }

    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            Verdict::Refuted { certificate } => Some(certificate),
            _ => None,
        }
    }

    pub fn diagnostics(&self) -> &[KDiagnostic] {
        match self {
            Verdict::Satisfied { diagnostics, .. }
            | Verdict::BudgetExhausted { diagnostics, .. } => diagnostics,
            Verdict::Refuted { .. } => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum DhcMode {
    #[serde(rename = "paper")]
    PaperLiteral,
    OneDirectional {
        pairs: Vec<OrderedPair>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition2Outcome {
    pub mode: DhcMode,
    pub relaxation: Option<String>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy)]
enum Constraint {
    Forward(usize),
    BackwardInv(usize),
    Ratio(usize, usize),
}

struct PointLogs {
    pass: bool,
    forward: f64,
    backward: f64,
    ratio: f64,
}

struct Scan {
    region: CompactRegion,
    deficit: f64,
    sup_e: [Option<f64>; 3],
    sup_k: [Option<f64>; 3],
}

fn finite_exp(log: f64) -> Option<f64> {
    (log > f64::NEG_INFINITY).then(|| log.exp())
}

struct Search<'a> {
    model: &'a GroupModel,
    a: &'a GroupPoint,
    region: &'a CompactRegion,
    weights: &'a [WeightSpec],
    constraints: Vec<Constraint>,
}

impl<'a> Search<'a> {
    fn new(
        model: &'a GroupModel,
        a: &'a GroupPoint,
        region: &'a CompactRegion,
        weights: &'a [WeightSpec],
        pairs: &[(usize, usize)],
    ) -> Self {
        let mut constraints = Vec::new();
        for l in 0..weights.len() {
            constraints.push(Constraint::Forward(l));
            constraints.push(Constraint::BackwardInv(l));
        }
        constraints.extend(pairs.iter().map(|&(j, l)| Constraint::Ratio(j, l)));
        Search {
            model,
            a,
            region,
            weights,
            constraints,
        }
    }

    fn measure_k(&self) -> f64 {
        haar_measure(self.model, self.region)
    }

    fn point(&self, x: &GroupPoint, n: u64, log_eps: f64) -> PointLogs {
        let mut out = PointLogs {
            pass: true,
            forward: f64::NEG_INFINITY,
            backward: f64::NEG_INFINITY,
            ratio: f64::NEG_INFINITY,
        };
        for c in &self.constraints {
            let (slot, log) = match *c {
                Constraint::Forward(l) => (
                    &mut out.forward,
                    forward_product(self.model, &self.weights[l], self.a, x, n).log_value,
                ),
                Constraint::BackwardInv(l) => (
                    &mut out.backward,
                    backward_product_inv(self.model, &self.weights[l], self.a, x, n).log_value,
                ),
                Constraint::Ratio(j, l) => (
                    &mut out.ratio,
                    ratio_product(self.model, &self.weights[j], &self.weights[l], self.a, x, n)
                        .log_value,
                ),
            };
            *slot = slot.max(log);
            out.pass &= strictly_below_log(log, log_eps);
        }
        out
    }

    fn scan(&self, n: u64, eps: f64) -> Scan {
        let log_eps = eps.ln();
        let cells: Vec<&GroupPoint> = self.region.iter().collect();
        let logs: Vec<PointLogs> = cells
            .par_iter()
            .map(|x| self.point(x, n, log_eps))
            .collect();
        let mut region = CompactRegion::empty();
        let mut sup_e = [f64::NEG_INFINITY; 3];
        let mut sup_k = [f64::NEG_INFINITY; 3];
        for (x, pl) in cells.iter().zip(&logs) {
            let v = [pl.forward, pl.backward, pl.ratio];
            for i in 0..3 {
                sup_k[i] = sup_k[i].max(v[i]);
                if pl.pass {
                    sup_e[i] = sup_e[i].max(v[i]);
                }
            }
            if pl.pass {
                region.insert((*x).clone());
            }
        }
        let deficit = haar_measure(self.model, &self.region.difference(&region));
        Scan {
            region,
            deficit,
            sup_e: sup_e.map(finite_exp),
            sup_k: sup_k.map(finite_exp),
        }
    }

    fn run(&self, sched: &WitnessSchedule) -> Verdict {
        let mut entries = Vec::new();
        let mut diagnostics = Vec::new();
        let mut prev = 0u64;
        for (i, (&eps, &allowed)) in sched.eps.iter().zip(&sched.deficit).enumerate() {
            let k = i + 1;
            let mut best: Option<(u64, Scan)> = None;
            let mut found = false;
            for n in prev + 1..=sched.n_max {
                let scan = self.scan(n, eps);
                if scan.deficit <= allowed {
                    diagnostics.push(KDiagnostic {
                        k,
                        eps,
                        allowed_deficit: allowed,
                        admissible: true,
                        n,
                        deficit: scan.deficit,
                        sup_forward: scan.sup_k[0],
                        sup_backward: scan.sup_k[1],
                        sup_ratio: scan.sup_k[2],
                    });
                    entries.push(WitnessEntry {
                        k,
                        n,
                        region: scan.region,
                        eps,
                        allowed_deficit: allowed,
                        deficit: scan.deficit,
                        sup_forward: scan.sup_e[0],
                        sup_backward: scan.sup_e[1],
                        sup_ratio: scan.sup_e[2],
                    });
                    prev = n;
                    found = true;
                    break;
                }
                if best.as_ref().is_none_or(|(_, b)| scan.deficit < b.deficit) {
                    best = Some((n, scan));
                }
            }
            if !found {
                if let Some((n, scan)) = best {
                    diagnostics.push(KDiagnostic {
                        k,
                        eps,
                        allowed_deficit: allowed,
                        admissible: false,
                        n,
                        deficit: scan.deficit,
                        sup_forward: scan.sup_k[0],
                        sup_backward: scan.sup_k[1],
                        sup_ratio: scan.sup_k[2],
                    });
                }
                return Verdict::BudgetExhausted {
                    found: entries,
                    diagnostics,
                };
            }
        }
        Verdict::Satisfied {
            witness: WitnessSequence { entries },
            diagnostics,
        }
    }

    /// Recomputes every product on every `E_k`.
    fn verify(&self, sched: &WitnessSchedule, witness: &WitnessSequence) -> Result<()> {
        let reject = |msg: String| Err(Error::InvalidArgument(format!("witness rejected: {msg}")));
        if witness.entries.len() != sched.k_max() {
            return reject(format!(
                "{} entries for k_max = {}",
                witness.entries.len(),
                sched.k_max()
            ));
        }
        let mut prev = 0u64;
        for (i, entry) in witness.entries.iter().enumerate() {
            let k = i + 1;
            if entry.n <= prev || entry.n > sched.n_max {
                return reject(format!(
                    "n_{k} = {} breaks the increasing schedule",
                    entry.n
                ));
            }
            prev = entry.n;
            if !entry.region.is_subset(self.region) {
                return reject(format!("E_{k} is not contained in K"));
            }
            let deficit = haar_measure(self.model, &self.region.difference(&entry.region));
            if deficit > sched.deficit[i] {
                return reject(format!(
                    "deficit {deficit} at k = {k} exceeds {}",
                    sched.deficit[i]
                ));
            }
            let log_eps = sched.eps[i].ln();
            if let Some(x) = entry
                .region
                .iter()
                .find(|x| !self.point(x, entry.n, log_eps).pass)
            {
                return reject(format!(
                    "a product at {x} is not below eps_{k} for n = {}",
                    entry.n
                ));
            }
        }
        Ok(())
    }

    /// First `k` at which an obstruction on every point of `K` refutes the
    /// condition: `ε_k <= 1` and `δ_k < λ(K)`.
    fn obstructed_step(&self, sched: &WitnessSchedule) -> Option<usize> {
        let measure = self.measure_k();
        sched
            .eps
            .iter()
            .zip(&sched.deficit)
            .position(|(e, d)| *e <= 1.0 && *d < measure)
    }

    fn monotone_certificate(&self, sched: &WitnessSchedule) -> Option<Certificate> {
        let i = self.obstructed_step(sched)?;
        self.weights.iter().enumerate().find_map(|(l, w)| {
            let forward = w.lower_bound() >= 1.0;
            let backward = w.upper_bound() <= 1.0;
            (forward || backward).then(|| Certificate::Monotone {
                weight: l + 1,
                lower_bound: w.lower_bound(),
                upper_bound: w.upper_bound(),
                forward_at_least_one: forward,
                backward_at_least_one: backward,
                k: i + 1,
                eps_k: sched.eps[i],
                allowed_deficit: sched.deficit[i],
                measure_k: self.measure_k(),
            })
        })
    }

    fn max_abs_reciprocal_log_sum(&self, j: usize, l: usize, n_max: u64) -> f64 {
        let (wj, wl) = (&self.weights[j], &self.weights[l]);
        let cells: Vec<&GroupPoint> = self.region.iter().collect();
        cells
            .par_iter()
            .map(|x| {
                (1..=n_max)
                    .map(|n| {
                        let forward = ratio_product(self.model, wj, wl, self.a, x, n).log_value;
                        let back = ratio_product(self.model, wl, wj, self.a, x, n).log_value;
                        (forward + back).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    fn reciprocal_certificate(&self, sched: &WitnessSchedule) -> Option<Certificate> {
        let i = self.obstructed_step(sched)?;
        Some(Certificate::ReciprocalObstruction {
            pair: OrderedPair { j: 1, l: 2 },
            k: i + 1,
            eps_k: sched.eps[i],
            allowed_deficit: sched.deficit[i],
            measure_k: self.measure_k(),
            n_checked: sched.n_max,
            points_checked: self.region.len(),
            max_abs_log_sum: self.max_abs_reciprocal_log_sum(0, 1, sched.n_max),
        })
    }

    fn verify_certificate(&self, sched: &WitnessSchedule, cert: &Certificate) -> Result<()> {
        let reject = |msg: &str| {
            Err(Error::InvalidArgument(format!(
                "certificate rejected: {msg}"
            )))
        };
        let (k, eps_k, allowed) = match cert {
            Certificate::Monotone {
                k,
                eps_k,
                allowed_deficit,
                ..
            }
            | Certificate::ReciprocalObstruction {
                k,
                eps_k,
                allowed_deficit,
                ..
            } => (*k, *eps_k, *allowed_deficit),
        };
        if k == 0
            || k > sched.k_max()
            || sched.eps[k - 1] != eps_k
            || sched.deficit[k - 1] != allowed
        {
            return reject("step does not match the schedule");
        }
        if !(eps_k <= 1.0 && allowed < self.measure_k()) {
            return reject("step does not force a nonempty set below a tolerance <= 1");
        }
        match cert {
            Certificate::Monotone {
                weight,
                forward_at_least_one,
                backward_at_least_one,
                ..
            } => {
                let Some(w) = weight.checked_sub(1).and_then(|l| self.weights.get(l)) else {
                    return reject("weight index out of range");
                };
                let ok_f = !forward_at_least_one || w.lower_bound() >= 1.0;
                let ok_b = !backward_at_least_one || w.upper_bound() <= 1.0;
                if !(ok_f && ok_b && (*forward_at_least_one || *backward_at_least_one)) {
                    return reject("weight bounds do not give a monotone product");
                }
                let held = self.region.iter().all(|x| {
                    (1..=sched.n_max).all(|n| {
                        (!forward_at_least_one
                            || forward_product(self.model, w, self.a, x, n).log_value >= 0.0)
                            && (!backward_at_least_one
                                || backward_product_inv(self.model, w, self.a, x, n).log_value
                                    >= 0.0)
                    })
                });
                if !held {
                    return reject("a product dropped below 1");
                }
            }
            Certificate::ReciprocalObstruction { pair, .. } => {
                let n_w = self.weights.len();
                if pair.j == pair.l || pair.j == 0 || pair.l == 0 || pair.j > n_w || pair.l > n_w {
                    return reject("pair out of range");
                }
                if self.max_abs_reciprocal_log_sum(pair.j - 1, pair.l - 1, sched.n_max) > 1e-12 {
                    return reject("ratio products are not reciprocal");
                }
            }
        }
        Ok(())
    }
}

fn prepare(
    model: &GroupModel,
    weights: &[WeightSpec],
    a: &GroupPoint,
    region: &CompactRegion,
) -> Result<()> {
    region.validate(model)?;
    for w in weights {
        w.validate_for(model)?;
    }
    require_aperiodic(model, region, a)?;
    Ok(())
}

/// Searches for `(n_k, E_k)` with `φ_n < ε_k` and `φ̃_n < ε_k` on `E_k` and
/// `λ(K∖E_k) <= δ_k`.
pub fn check_theorem_a(
    model: &GroupModel,
    w: &WeightSpec,
    a: &GroupPoint,
    region: &CompactRegion,
    sched: &WitnessSchedule,
) -> Result<Verdict> {
    sched.validate()?;
    let weights = std::slice::from_ref(w);
    prepare(model, weights, a, region)?;
    let search = Search::new(model, a, region, weights, &[]);
    if let Some(certificate) = search.monotone_certificate(sched) {
        return Ok(Verdict::Refuted { certificate });
    }
    Ok(search.run(sched))
}

fn condition2_pairs(n_w: usize, mode: &DhcMode) -> Result<Vec<(usize, usize)>> {
    match mode {
        DhcMode::PaperLiteral => Ok((0..n_w)
            .flat_map(|j| (0..n_w).filter(move |l| *l != j).map(move |l| (j, l)))
            .collect()),
        DhcMode::OneDirectional { pairs } => {
            if pairs.is_empty() {
                return Err(Error::InvalidArgument(
                    "one-directional mode needs at least one pair".into(),
                ));
            }
            pairs
                .iter()
                .map(|pr| {
                    if pr.j == pr.l || pr.j == 0 || pr.l == 0 || pr.j > n_w || pr.l > n_w {
                        Err(Error::InvalidArgument(format!(
                            "pair ({}, {}) is not an ordered pair of distinct indices in 1..={n_w}",
                            pr.j, pr.l
                        )))
                    } else {
                        Ok((pr.j - 1, pr.l - 1))
                    }
                })
                .collect()
        }
    }
}

/// Searches for a common sequence `(n_k, E_k)` on which every forward and
/// inverse backward product and the ratio products of the selected ordered
/// pairs are below `ε_k`.
pub fn check_theorem31_condition2(
    model: &GroupModel,
    weights: &[WeightSpec],
    a: &GroupPoint,
    region: &CompactRegion,
    sched: &WitnessSchedule,
    mode: &DhcMode,
) -> Result<Condition2Outcome> {
    if weights.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "at least two weights required, got {}",
            weights.len()
        )));
    }
    sched.validate()?;
    prepare(model, weights, a, region)?;
    let pairs = condition2_pairs(weights.len(), mode)?;
    let search = Search::new(model, a, region, weights, &pairs);
    let verdict = match mode {
        DhcMode::PaperLiteral => match search.reciprocal_certificate(sched) {
            Some(certificate) => Verdict::Refuted { certificate },
            None => search.run(sched),
        },
        DhcMode::OneDirectional { .. } => match search.monotone_certificate(sched) {
            Some(certificate) => Verdict::Refuted { certificate },
            None => search.run(sched),
        },
    };
    Ok(Condition2Outcome {
        mode: mode.clone(),
        relaxation: matches!(mode, DhcMode::OneDirectional { .. })
            .then(|| RELAXATION_NOTE.to_string()),
        verdict,
    })
}

/// Re-evaluates a verdict of [`check_theorem_a`] or [`check_theorem31_condition2`]
/// (pass one weight and `None` for the former). Exhausted budgets verify trivially.
pub fn reverify(
    model: &GroupModel,
    weights: &[WeightSpec],
    a: &GroupPoint,
    region: &CompactRegion,
    sched: &WitnessSchedule,
    mode: Option<&DhcMode>,
    verdict: &Verdict,
) -> Result<()> {
    let pairs = match mode {
        Some(m) => condition2_pairs(weights.len(), m)?,
        None => Vec::new(),
    };
    let search = Search::new(model, a, region, weights, &pairs);
    match verdict {
        Verdict::Satisfied { witness, .. } => search.verify(sched, witness),
        Verdict::Refuted { certificate } => search.verify_certificate(sched, certificate),
        Verdict::BudgetExhausted { .. } => Ok(()),
    }
}

/// `{δ_x : x ∈ [-b, b]} ∪ {χ_[-b, b]}` on a one-dimensional model.
pub fn default_suite(model: &GroupModel, b: i64) -> Result<Vec<LatticeFunction>> {
    if model.dim() != 1 || b < 0 {
        return Err(Error::InvalidArgument(
            "default suite needs a one-dimensional model and b >= 0".into(),
        ));
    }
    let mut suite = (-b..=b)
        .map(|x| LatticeFunction::delta(model, model.point(vec![x])?, 1.0))
        .collect::<Result<Vec<_>>>()?;
    let region: CompactRegion = (-b..=b)
        .map(|x| model.point(vec![x]))
        .collect::<Result<_>>()?;
    suite.push(LatticeFunction::indicator(model, &region)?);
    Ok(suite)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DTerm {
    /// `‖T_l^{n_k} f‖_p`.
    Forward,
    /// `‖S_{l,k} g‖_p`.
    Inverse,
    /// `‖T_l^{n_k} S_{i,k} g - δ_{il} g‖_p`.
    Cross,
}

/// Maxima of the three quantities at one `k`, with the maximizing indices (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DRow {
    pub k: usize,
    pub n: u64,
    pub forward: f64,
    pub forward_op: usize,
    pub inverse: f64,
    pub inverse_op: usize,
    pub cross: f64,
    pub cross_pair: (usize, usize),
}

impl DRow {
    fn value(&self, t: DTerm) -> f64 {
        match t {
            DTerm::Forward => self.forward,
            DTerm::Inverse => self.inverse,
            DTerm::Cross => self.cross,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum DDecision {
    SatisfiedOnSuite,
    Failed {
        term: DTerm,
        value: f64,
        /// Operator `l`, or the pair `(i, l)` for the cross term (1-based).
        indices: Vec<usize>,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DCriterionReport {
    pub tol: f64,
    pub rows: Vec<DRow>,
    pub decision: DDecision,
}

fn argmax<I: Iterator<Item = (f64, T)>, T: Clone>(it: I, default: T) -> (f64, T) {
    it.fold((0.0, default), |(bv, bi), (v, i)| {
        if v > bv || v.is_nan() {
            (v, i)
        } else {
            (bv, bi)
        }
    })
}

/// Evaluates, for `T_l = T_{a,w_l}^{r_l}` and `S_{l,k} = S_{a,w_l}^{r_l n_k}`,
/// the three criterion quantities on finite test suites: `x0` for the forward
/// term and `xl[l]` for the inverses and cross terms of operator `l`.
///
/// The suite passes when every final maximum is below `tol` and each series is
/// nonincreasing over its last three indices. Failures are reported for the
/// first offending quantity in the order forward, inverse, cross.
pub fn verify_dhc_criterion(
    ops: &[OperatorSpec],
    n_seq: &[u64],
    x0: &[LatticeFunction],
    xl: &[Vec<LatticeFunction>],
    p: NormParam,
    tol: f64,
) -> Result<DCriterionReport> {
    if ops.len() < 2 {
        return Err(Error::InvalidArgument(
            "at least two operators required".into(),
        ));
    }
    if n_seq.is_empty() {
        return Err(Error::InvalidArgument("empty n_seq".into()));
    }
    if n_seq.windows(2).any(|w| w[1] <= w[0]) || n_seq[0] == 0 {
        return Err(Error::InvalidArgument(
            "n_seq must be positive and strictly increasing".into(),
        ));
    }
    if xl.len() != ops.len() {
        return Err(Error::InvalidArgument(format!(
            "{} suites for {} operators",
            xl.len(),
            ops.len()
        )));
    }
    if x0.is_empty() || xl.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidArgument(
            "test suites must be nonempty".into(),
        ));
    }
    let model = x0[0].model().clone();
    if x0
        .iter()
        .chain(xl.iter().flatten())
        .any(|g| g.model() != &model)
    {
        return Err(Error::ModelMismatch);
    }
    let a = &ops[0].a;
    for op in ops {
        op.validate_for(&model)?;
        if &op.a != a {
            return Err(Error::InvalidArgument(
                "operators must share the translation element".into(),
            ));
        }
    }
    let support = x0
        .iter()
        .chain(xl.iter().flatten())
        .fold(CompactRegion::empty(), |r, g| r.union(&g.support()));
    let support = if support.is_empty() {
        CompactRegion::new([model.identity()])
    } else {
        support
    };
    require_aperiodic(&model, &support, a)?;

    let rows: Vec<DRow> = n_seq
        .par_iter()
        .enumerate()
        .map(|(i, &n)| {
            let (forward, forward_op) = argmax(
                ops.iter()
                    .enumerate()
                    .flat_map(|(l, op)| x0.iter().map(move |f| (op.power(n, f).lp_norm(p), l + 1))),
                1,
            );
            let (inverse, inverse_op) = argmax(
                ops.iter().zip(xl).enumerate().flat_map(|(l, (op, suite))| {
                    suite
                        .iter()
                        .map(move |g| (op.inverse_power(n, g).lp_norm(p), l + 1))
                }),
                1,
            );
            let (cross, cross_pair) = argmax(
                (0..ops.len()).flat_map(|s_idx| {
                    (0..ops.len()).flat_map(move |t_idx| {
                        xl[s_idx].iter().map(move |g| {
                            let (ot, os) = (&ops[t_idx], &ops[s_idx]);
                            let moved = crate::translation::apply_t_after_s(
                                a,
                                &ot.w,
                                ot.r * n,
                                &os.w,
                                os.r * n,
                                g,
                            );
                            let residual = if s_idx == t_idx {
                                moved.sub(g).expect("common model")
                            } else {
                                moved
                            };
                            (residual.lp_norm(p), (s_idx + 1, t_idx + 1))
                        })
                    })
                }),
                (1, 1),
            );
            DRow {
                k: i + 1,
                n,
                forward,
                forward_op,
                inverse,
                inverse_op,
                cross,
                cross_pair,
            }
        })
        .collect();

    let last = rows.last().expect("nonempty n_seq");
    let tail = &rows[rows.len().saturating_sub(3)..];
    let mut decision = DDecision::SatisfiedOnSuite;
    for term in [DTerm::Forward, DTerm::Inverse, DTerm::Cross] {
        let value = last.value(term);
        let reason = if !(value < tol) {
            Some(format!("final value {value:e} is not below {tol:e}"))
        } else if tail.windows(2).any(|w| w[1].value(term) > w[0].value(term)) {
            Some("increases over the last three indices".to_string())
        } else {
            None
        };
        if let Some(reason) = reason {
            let indices = match term {
                DTerm::Forward => vec![last.forward_op],
                DTerm::Inverse => vec![last.inverse_op],
                DTerm::Cross => vec![last.cross_pair.0, last.cross_pair.1],
            };
            decision = DDecision::Failed {
                term,
                value,
                indices,
                reason,
            };
            break;
        }
    }
    Ok(DCriterionReport {
        tol,
        rows,
        decision,
    })
}

/// The residual term of a [`UkReport`] that stays largest over a scan: the
/// one whose smallest norm across all scanned `n` is largest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blame {
    /// `forward`, `inverse`, `cross` or `deficit`.
    pub term: String,
    /// Operator `l`, or the pair `(j, l)` for the cross term (1-based).
    pub indices: Vec<usize>,
    /// Smallest norm of this term over the scan.
    pub min_norm: f64,
    /// Norm of this term at the best `n`.
    pub norm_at_best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ProbeOutcome {
    Success {
        u: LatticeFunction,
        n: u64,
        /// `‖u - f_0‖_p` followed by `‖T_l^n u - f_l‖_p`, by direct evaluation.
        distances: Vec<f64>,
    },
    Exhausted {
        best_n: u64,
        best_distance: f64,
        blame: Blame,
        report: Box<UkReport>,
    },
}

fn term_norms(report: &UkReport) -> Vec<(&'static str, Vec<usize>, f64)> {
    let p = report.p;
    let mut terms = Vec::new();
    for (l, v) in report.t_norm_pow.iter().enumerate() {
        terms.push(("forward", vec![l + 1], p.root(*v)));
    }
    for (l, v) in report.s_norm_pow.iter().enumerate() {
        terms.push(("inverse", vec![l + 1], p.root(*v)));
    }
    for c in &report.cross_norm_pow {
        terms.push(("cross", vec![c.j, c.l], p.root(c.norm_pow)));
    }
    terms.push(("deficit", vec![], p.root(report.deficit_term)));
    terms
}

/// Scans `n = 1..=n_max` for a vector `u` within `ε` of `f_0` whose images
/// `T_l^n u` are within `ε` of `f_l`, using the construction of [`build_uk`]
/// with `E` the union of the target supports.
pub fn probe_d_transitivity(
    ops: &[OperatorSpec],
    targets: &[LatticeFunction],
    eps: f64,
    n_max: u64,
    p: NormParam,
) -> Result<ProbeOutcome> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be >= 1".into()));
    }
    if targets.len() != ops.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} operators need {} targets, got {}",
            ops.len(),
            ops.len() + 1,
            targets.len()
        )));
    }
    let (f0, rest) = targets.split_first().expect("at least one target");
    let e_region = rest.iter().fold(f0.support(), |r, g| r.union(&g.support()));
    let mut best: Option<(f64, UkReport)> = None;
    let mut min_norms: Vec<f64> = Vec::new();
    for n in 1..=n_max {
        let report = build_uk(f0, rest, ops, n, &e_region, p)?;
        let norms = term_norms(&report);
        if min_norms.is_empty() {
            min_norms = vec![f64::INFINITY; norms.len()];
        }
        for (m, t) in min_norms.iter_mut().zip(&norms) {
            *m = m.min(t.2);
        }
        let worst = report
            .target_distances()
            .into_iter()
            .fold(report.u_distance(), f64::max);
        if worst < eps {
            let mut distances = vec![report.u.lp_distance(f0, p)?];
            for (op, g) in ops.iter().zip(rest) {
                distances.push(op.power(n, &report.u).lp_distance(g, p)?);
            }
            if distances.iter().any(|d| !(*d < eps)) {
                return Err(Error::Internal(format!(
                    "probe candidate at n = {n} fails direct re-evaluation: {distances:?}"
                )));
            }
            return Ok(ProbeOutcome::Success {
                u: report.u,
                n,
                distances,
            });
        }
        if best.as_ref().is_none_or(|(b, _)| worst < *b) {
            best = Some((worst, report));
        }
    }
    let (best_distance, report) = best.expect("n_max >= 1");
    let at_best = term_norms(&report);
    let i = (0..min_norms.len())
        .reduce(|b, i| if min_norms[i] > min_norms[b] { i } else { b })
        .expect("at least the deficit term");
    let blame = Blame {
        term: at_best[i].0.to_string(),
        indices: at_best[i].1.clone(),
        min_norm: min_norms[i],
        norm_at_best: at_best[i].2,
    };
    Ok(ProbeOutcome::Exhausted {
        best_n: report.n,
        best_distance,
        blame,
        report: Box::new(report),
    })
}
