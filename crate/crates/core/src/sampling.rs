//! Seeded random test functions and weights.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::funcspace::LatticeFunction;
use crate::group::{CompactRegion, GroupModel, GroupPoint};
use crate::weights::WeightSpec;

/// Reproducible generator: one independent ChaCha stream per `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Each cell of `region` carries a value uniform in `[-1, 1]` with
/// probability `density`.
pub fn random_function<R: Rng>(
    rng: &mut R,
    model: &GroupModel,
    region: &CompactRegion,
    density: f64,
) -> LatticeFunction {
    let entries: Vec<(GroupPoint, f64)> = region
        .iter()
        .filter_map(|x| {
            let keep = rng.gen_bool(density.clamp(0.0, 1.0));
            let v: f64 = rng.gen_range(-1.0..=1.0);
            keep.then(|| (x.clone(), v))
        })
        .collect();
    LatticeFunction::from_entries(model, entries).expect("cells of a validated region")
}

/// A sparse function on `[lo, hi] ⊂ Z` with values in `[-1, 1]`.
pub fn random_sparse_z<R: Rng>(rng: &mut R, lo: i64, hi: i64, density: f64) -> LatticeFunction {
    random_function(
        rng,
        &GroupModel::z(),
        &CompactRegion::interval(lo, hi),
        density,
    )
}

pub const FAMILY_COUNT: usize = 4;

/// A random one-dimensional weight from family `family % FAMILY_COUNT`:
/// constant, step, power law, table.
pub fn random_weight<R: Rng>(rng: &mut R, family: usize) -> WeightSpec {
    match family % FAMILY_COUNT {
        0 => WeightSpec::constant(rng.gen_range(0.5..2.0)),
        1 => WeightSpec::step(
            rng.gen_range(1.0..4.0),
            rng.gen_range(0.25..1.0),
            rng.gen_range(-5..=5),
        ),
        2 => WeightSpec::power_law(rng.gen_range(-1.5..1.5), vec![1]),
        _ => {
            let mut entries = Vec::new();
            for x in -20..=20 {
                if rng.gen_bool(0.5) {
                    entries.push((GroupPoint::scalar(x), rng.gen_range(0.25..4.0)));
                }
            }
            WeightSpec::table(entries, rng.gen_range(0.5..2.0))
        }
    }
    .expect("sampled parameters are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let a = random_sparse_z(&mut rng_for(7, 3), -50, 50, 0.3);
        let b = random_sparse_z(&mut rng_for(7, 3), -50, 50, 0.3);
        let c = random_sparse_z(&mut rng_for(7, 4), -50, 50, 0.3);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a
            .iter()
            .all(|(x, v)| (-50..=50).contains(&x.coords()[0]) && v.abs() <= 1.0));
    }

    #[test]
    fn weights_cover_all_families() {
        let mut rng = rng_for(1, 0);
        for f in 0..8 {
            let w = random_weight(&mut rng, f);
            assert!(w.lower_bound() > 0.0 && w.upper_bound().is_finite());
        }
    }
}
