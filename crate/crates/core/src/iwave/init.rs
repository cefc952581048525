use rand::Rng as _;

use crate::grm::{CorrelationAngles, ModelSpec, ParameterSet};
use crate::rng::Rng;

/// `softplus^{-1}(1) = ln(e - 1)`: raw increment giving unit intercept gaps.
pub const UNIT_GAP_RAW: f64 = 0.541_324_854_612_918_1;

/// Half-width of the uniform loading initializer for factor `p`:
/// `sqrt(6 / (M_p + P))`, with `M_p` the number of loadings on factor `p`
/// that are not structurally zero.
pub fn loading_bound(spec: &ModelSpec, p: usize) -> f64 {
    (6.0 / (spec.nonzero_loadings(p) + spec.factors) as f64).sqrt()
}

/// Starting values: uniform loadings scaled per factor, ordered intercepts
/// with unit gaps, and every free angle at pi/2 so that `Sigma = I`.
pub fn init_params(spec: &ModelSpec, rng: &mut Rng) -> ParameterSet {
    let intercepts = spec
        .categories
        .iter()
        .map(|&k| {
            let mut raw = vec![UNIT_GAP_RAW; k - 1];
            raw[0] = rng.random_range(-1.5..-0.5);
            raw
        })
        .collect();
    let loadings = (0..spec.free_loadings)
        .map(|m| match spec.free_loading_factor(m) {
            Some(p) => {
                let b = loading_bound(spec, p);
                rng.random_range(-b..b)
            }
            None => 0.0,
        })
        .collect();
    let mut set = ParameterSet {
        intercepts,
        loadings,
        angles: CorrelationAngles::identity(spec.factors),
    };
    set.pin_fixed_angles(spec);
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grm::{build_correlation, softplus};
    use crate::rng::seeded;

    #[test]
    fn unit_gap_constant() {
        assert!((softplus(UNIT_GAP_RAW) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn starts_at_identity_correlation() {
        let spec = ModelSpec::simple_structure(vec![3; 6], &[0, 0, 1, 1, 2, 2], 3).unwrap();
        let set = init_params(&spec, &mut seeded(2));
        let (_, sigma) = build_correlation(&set.angles).unwrap();
        for (p, row) in sigma.iter().enumerate() {
            for (q, v) in row.iter().enumerate() {
                assert_eq!(*v, if p == q { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn loadings_respect_bounds() {
        let spec = ModelSpec::simple_structure(vec![2; 5], &[0, 0, 0, 1, 1], 2).unwrap();
        // factor 0 has 3 nonzero loadings, factor 1 has 2
        let b0 = (6.0f64 / 5.0).sqrt();
        let b1 = (6.0f64 / 4.0).sqrt();
        assert_eq!(loading_bound(&spec, 0), b0);
        assert_eq!(loading_bound(&spec, 1), b1);
        let mut rng = seeded(3);
        for _ in 0..2000 {
            let set = init_params(&spec, &mut rng);
            for (m, v) in set.loadings.iter().enumerate() {
                let b = if m < 3 { b0 } else { b1 };
                assert!(v.abs() <= b);
            }
            for raw in &set.intercepts {
                assert!((-1.5..-0.5).contains(&raw[0]));
            }
        }
    }
}
