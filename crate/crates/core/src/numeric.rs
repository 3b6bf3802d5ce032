//! Summation helpers shared by the norm and product code.

/// Neumaier's compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Order-independent sum: terms are sorted before compensated accumulation, so
/// any permutation of the same multiset gives a bit-identical result.
pub fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(|a, b| a.total_cmp(b));
    terms.into_iter().collect::<CompensatedSum>().value()
}

/// `|x - y| <= rel * max(|x|, |y|)`, treating two values below `f64::MIN_POSITIVE` as equal.
pub fn rel_close(x: f64, y: f64, rel: f64) -> bool {
    if x == y {
        return true;
    }
    let scale = x.abs().max(y.abs());
    if scale < f64::MIN_POSITIVE {
        return true;
    }
    (x - y).abs() <= rel * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensation_recovers_small_terms() {
        let terms = [1.0, 1e100, 1.0, -1e100];
        let naive: f64 = terms.iter().sum();
        let comp: CompensatedSum = terms.iter().copied().collect();
        assert_eq!(naive, 0.0);
        assert_eq!(comp.value(), 2.0);
    }

    #[test]
    fn canonical_sum_is_permutation_invariant() {
        let a = vec![0.1, 0.7, 1e-17, 3.3, 0.2];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(canonical_sum(a).to_bits(), canonical_sum(b).to_bits());
    }

    #[test]
    fn negated_sum_is_exact_negation() {
        let a = [0.3, -1.7, 2.25, 1e-12, -0.1];
        let pos: CompensatedSum = a.iter().copied().collect();
        let neg: CompensatedSum = a.iter().map(|x| -x).collect();
        assert_eq!(pos.value(), -neg.value());
    }
}
