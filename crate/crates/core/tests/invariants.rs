use ndarray::{Array1, Array2};
use proptest::prelude::*;
use ptd::simplexopt::project_simplex;
use ptd::transition::{revise, InstanceTransition, SlackVariable};

fn stochastic(c: usize, raw: &[f64]) -> Array2<f64> {
    let mut t = Array2::from_shape_vec((c, c), raw[..c * c].to_vec()).unwrap();
    for mut row in t.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    t
}

proptest! {
    #[test]
    fn projection_lands_on_simplex_and_is_idempotent(v in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let p = project_simplex(Array1::from(v).view()).unwrap();
        prop_assert!(p.view().iter().all(|&x| x >= 0.0));
        prop_assert!((p.view().sum() - 1.0).abs() <= 1e-12);
        let again = project_simplex(p.view()).unwrap();
        let gap = (&again.view() - &p.view()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        prop_assert!(gap <= 1e-12);
    }

    #[test]
    fn projection_is_no_farther_than_uniform(v in prop::collection::vec(-5.0f64..5.0, 2..10)) {
        let v = Array1::from(v);
        let p = project_simplex(v.view()).unwrap();
        let u = Array1::from_elem(v.len(), 1.0 / v.len() as f64);
        let d = |w: &Array1<f64>| (w - &v).mapv(|x| x * x).sum();
        prop_assert!(d(&p.into_inner()) <= d(&u) + 1e-12);
    }

    #[test]
    fn revision_stays_row_stochastic(
        c in 2usize..7,
        raw in prop::collection::vec(0.01f64..1.0, 36),
        slack in prop::collection::vec(-1.0f64..1.0, 36),
    ) {
        let t = InstanceTransition::new(stochastic(c, &raw)).unwrap();
        let delta = Array2::from_shape_vec((c, c), slack[..c * c].to_vec()).unwrap();
        let rev = revise(&t, &SlackVariable { delta }).unwrap();
        for row in rev.transition.matrix().rows() {
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() <= 4.0 * c as f64 * f64::EPSILON);
        }
    }
}
