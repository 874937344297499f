use phd_eval::{hausdorff, phd, thin, PhdProfile, Point, Shape, Skeleton, Tolerance};
use phd_testkit::{brute_directed_max, brute_hausdorff, brute_phd, random_skeleton, random_skeleton_pair, random_strokes};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOLERANCES: [f64; 5] = [0.0, 1.0, 3.0, 5.0, 2.5];

fn pair() -> impl Strategy<Value = (Skeleton, Skeleton)> {
    any::<u64>().prop_map(|seed| random_skeleton_pair(&mut ChaCha8Rng::seed_from_u64(seed), 48))
}

fn tol(t: f64) -> Tolerance {
    Tolerance::new(t).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn field_route_matches_pairwise((x, y) in pair()) {
        for t in TOLERANCES {
            let fast = phd(&x, &y, tol(t)).unwrap().value;
            let slow = brute_phd(&x, &y, t);
            prop_assert!((fast - slow).abs() <= 1e-9, "t={t}: {fast} vs {slow}");
        }
        prop_assert_eq!(hausdorff(&x, &y).unwrap(), brute_hausdorff(&x, &y));
    }

    #[test]
    fn identity((x, _) in pair(), t in 0.0f64..50.0) {
        prop_assert_eq!(phd(&x, &x, tol(t)).unwrap().value, 0.0);
    }

    #[test]
    fn symmetry((x, y) in pair(), t in 0.0f64..20.0) {
        prop_assert_eq!(phd(&x, &y, tol(t)).unwrap(), phd(&y, &x, tol(t)).unwrap());
    }

    #[test]
    fn monotone_in_tolerance((x, y) in pair(), a in 0.0f64..20.0, b in 0.0f64..20.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p = PhdProfile::new(&x, &y).unwrap().unwrap();
        prop_assert!(p.phd(tol(lo)) >= p.phd(tol(hi)));
    }

    #[test]
    fn zero_exactly_from_the_hausdorff_distance((x, y) in pair(), t in 0.0f64..20.0) {
        let p = PhdProfile::new(&x, &y).unwrap().unwrap();
        let hd = p.hausdorff();
        prop_assert_eq!(p.phd(tol(t)) == 0.0, t >= hd);
        prop_assert_eq!(p.phd(tol(hd)), 0.0);
        if hd > 0.0 {
            prop_assert!(p.phd(tol(hd.next_down())) > 0.0);
        }
    }

    #[test]
    fn bounded_by_twice_hausdorff((x, y) in pair()) {
        let p = PhdProfile::new(&x, &y).unwrap().unwrap();
        prop_assert!(p.phd(Tolerance::ZERO) <= 2.0 * p.hausdorff() + 1e-12);
    }

    /// Thresholding each pair then taking the minimum equals thresholding
    /// the nearest distance.
    #[test]
    fn threshold_commutes_with_min((x, y) in pair(), t in 0.0f64..10.0) {
        let g = |d: f64| if d > t { d } else { 0.0 };
        for p in x.points() {
            let thresholded_min = y.points().iter().map(|q| g(p.distance(q))).fold(f64::INFINITY, f64::min);
            let nearest = y.points().iter().map(|q| p.distance(q)).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(thresholded_min, g(nearest));
        }
    }

    #[test]
    fn hausdorff_triangle_inequality(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(40, 40);
        let (a, b, c) = (random_skeleton(&mut rng, shape), random_skeleton(&mut rng, shape), random_skeleton(&mut rng, shape));
        let ab = hausdorff(&a, &b).unwrap();
        let bc = hausdorff(&b, &c).unwrap();
        let ac = hausdorff(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9, "{ac} > {ab} + {bc}");
    }
}

#[test]
fn directed_terms_match_the_profile() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = thin(&random_strokes(&mut rng, 60, 50, 3, 3.0));
    let y = thin(&random_strokes(&mut rng, 60, 50, 3, 3.0));
    let p = PhdProfile::new(&x, &y).unwrap().unwrap();
    assert_eq!(p.forward.len(), x.len());
    assert_eq!(p.backward.len(), y.len());
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    assert_eq!(max(&p.forward), brute_directed_max(&x, &y));
    assert_eq!(max(&p.backward), brute_directed_max(&y, &x));
}

#[test]
fn toy_cases_drop_to_zero_at_the_hausdorff_distance() {
    // A segment and a copy shifted down by two rows: every nearest
    // distance is 2, so the score is 4 until the tolerance reaches 2.
    let shape = Shape::new(20, 6);
    let line = |row| Skeleton::new(shape, (3..17).map(|x| Point::new(x, row))).unwrap();
    let (x, y) = (line(1), line(3));
    assert_eq!(phd(&x, &y, tol(0.0)).unwrap().value, 4.0);
    assert_eq!(phd(&x, &y, tol(1.999)).unwrap().value, 4.0);
    assert_eq!(phd(&x, &y, tol(2.0)).unwrap().value, 0.0);
    assert_eq!(hausdorff(&x, &y).unwrap(), 2.0);
}
