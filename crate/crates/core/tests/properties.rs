//! Randomized invariant checks. Each property is an exact statement about
//! the discrete operators, so tolerances are roundoff-scale, not "it's
//! probably fine" fudge.

use std::f64::consts::TAU;

use proptest::prelude::*;

use diffeo::flow::{decompose_velocity, TimeVelocity};
use diffeo::grid::{GridSpec, ScalarField, VectorField};
use diffeo::io;
use diffeo::spectral::{self, cutoff_filter, norm_at_vec, MetricSpec};

const N: usize = 32;

fn scalar_1d() -> impl Strategy<Value = ScalarField> {
    prop::collection::vec(-1.0f64..1.0, N).prop_map(|v| {
        let g = GridSpec::line(N, TAU).unwrap();
        ScalarField::from_values(&g, v).unwrap()
    })
}

fn vector_1d() -> impl Strategy<Value = VectorField> {
    prop::collection::vec(-1.0f64..1.0, N).prop_map(|v| {
        let g = GridSpec::line(N, TAU).unwrap();
        VectorField::from_components(&g, vec![v]).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Grid-sum L2 norm equals the order-0 spectral norm exactly
    /// (normalization carries the cell volume).
    #[test]
    fn parseval_identity(f in scalar_1d()) {
        let a = f.l2_norm().powi(2);
        let b = spectral::norm_at(&f, 0.0).powi(2);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-12), "{a} vs {b}");
    }

    /// The H^s norm is nondecreasing in s (the multiplier is >= 1 and
    /// increasing in s at every frequency).
    #[test]
    fn norm_monotone_in_order(f in scalar_1d(), s in 0.0f64..4.0, gap in 0.0f64..3.0) {
        let lo = spectral::norm_at(&f, s);
        let hi = spectral::norm_at(&f, s + gap);
        prop_assert!(lo <= hi * (1.0 + 1e-12), "|f|_{{{s}}} = {lo} > |f|_{{{}}} = {hi}", s + gap);
    }

    /// Interpolation with constant exactly 1:
    /// |f|_s <= |f|_{s0}^{1-t} |f|_{s1}^t at s = (1-t) s0 + t s1.
    #[test]
    fn interpolation_constant_one(
        f in scalar_1d(),
        s0 in 0.0f64..3.0,
        gap in 0.1f64..3.0,
        t in 0.01f64..0.99,
    ) {
        prop_assume!(f.l2_norm() > 1e-6);
        let s1 = s0 + gap;
        let s = (1.0 - t) * s0 + t * s1;
        let lhs = spectral::norm_at(&f, s);
        let rhs = spectral::norm_at(&f, s0).powf(1.0 - t) * spectral::norm_at(&f, s1).powf(t);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12), "ratio {}", lhs / rhs);
    }

    /// Low-pass energy bound |chi_k f|_{s+1}^2 <= (1 + k^2) |f|_s^2 and
    /// monotone tail decay in the cut.
    #[test]
    fn cutoff_bound_and_tail(u in vector_1d(), k in 1.0f64..20.0, k2 in 1.0f64..20.0) {
        prop_assume!(norm_at_vec(&u, 0.0) > 1e-6);
        let s = 2.0;
        let ns = norm_at_vec(&u, s).powi(2);

        let low = cutoff_filter(&u, k);
        let lhs = norm_at_vec(&low, s + 1.0).powi(2);
        prop_assert!(lhs <= (1.0 + k * k) * ns * (1.0 + 1e-12));

        let (ka, kb) = if k <= k2 { (k, k2) } else { (k2, k) };
        let tail = |cut: f64| {
            let mut d = cutoff_filter(&u, cut);
            d.add_scaled(&u, -1.0).unwrap();
            norm_at_vec(&d, s)
        };
        prop_assert!(tail(kb) <= tail(ka) + 1e-12 * ns.sqrt());
    }

    /// Binary field files are a bijection on their value: parse(encode) is
    /// the identity, byte for byte, for any finite payload.
    #[test]
    fn sgf_roundtrips_bitexact(values in prop::collection::vec(-1e100f64..1e100, N)) {
        let g = GridSpec::line(N, TAU).unwrap();
        let bytes = io::encode_sgf(&g, &[&values]);
        let (g2, planes) = io::parse_sgf(&bytes).unwrap();
        let again = io::encode_sgf(&g2, &[&planes[0]]);
        prop_assert_eq!(bytes, again);
    }

    /// Landmark CSV keeps exact values through a write/read cycle (floats
    /// are printed in shortest round-trip form).
    #[test]
    fn landmarks_roundtrip_exact(
        pts in prop::collection::vec(([0.0f64..TAU, 0.0f64..TAU], [-2.0f64..2.0, -2.0f64..2.0]), 1..8),
    ) {
        let q: Vec<[f64; 2]> = pts.iter().map(|(q, _)| *q).collect();
        let p: Vec<[f64; 2]> = pts.iter().map(|(_, p)| *p).collect();
        let text = io::encode_landmarks(2, &q, Some(&p));
        let parsed = io::parse_landmarks(text.as_bytes()).unwrap();
        prop_assert_eq!(parsed.dim, 2);
        prop_assert_eq!(parsed.positions, q);
        prop_assert_eq!(parsed.momenta.unwrap(), p);
    }
}

proptest! {
    // flow decompositions carry FFTs per case, keep the count moderate
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Splitting a velocity by action: every piece stays under the budget,
    /// pieces tile the time span, and no action is lost.
    #[test]
    fn decomposition_tiles_and_bounds_action(
        amps in prop::collection::vec(0.05f64..1.0, 4),
        eps_frac in 0.15f64..0.9,
    ) {
        let g = GridSpec::line(N, TAU).unwrap();
        let m = MetricSpec::new(&g, 2.0).unwrap();
        let fields: Vec<VectorField> = amps
            .iter()
            .map(|&a| VectorField::from_fn(&g, move |p| [a * p[0].sin(), 0.0]))
            .collect();
        let grid_t: Vec<f64> = (0..=4).map(|j| j as f64 / 4.0).collect();
        let u = TimeVelocity::new(grid_t, fields, m).unwrap();
        let total = u.l1_norm().unwrap();
        let eps = eps_frac * total;

        let pieces = decompose_velocity(&u, eps).unwrap();
        prop_assert!(pieces.len() <= (total / eps).floor() as usize + 1);

        let mut sum = 0.0;
        for p in &pieces {
            let mass = p.l1_norm().unwrap();
            prop_assert!(mass < eps, "piece action {mass} >= eps {eps}");
            sum += mass;
        }
        prop_assert!((sum - total).abs() <= 1e-9 * total);

        prop_assert_eq!(pieces.first().unwrap().span().0, u.span().0);
        prop_assert_eq!(pieces.last().unwrap().span().1, u.span().1);
        for w in pieces.windows(2) {
            prop_assert_eq!(w[0].span().1, w[1].span().0);
        }
    }
}
