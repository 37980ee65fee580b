use num_complex::Complex64;
use proptest::prelude::*;

use slagfib::ambient::{DefiningPolynomial, PartitionedIndex, ToricPotential};
use slagfib::darboux::DarbouxChart;
use slagfib::local_model::{solve_eta, zeta_of, LocalModel, ModelParams};

fn desk(c1: f64, r: f64) -> LocalModel {
    let p = DefiningPolynomial::new(
        3,
        vec![(vec![0, 0, 0], Complex64::new(2.0, 0.0)), (vec![0, 0, 1], Complex64::new(1.0, 0.0))],
    )
    .unwrap();
    let params = ModelParams { part: PartitionedIndex::new(2, &[0, 1]).unwrap(), r: vec![r], c: vec![0.0, c1], t: 0.01 };
    LocalModel::new(params, ToricPotential::flat(2), p).unwrap()
}

fn offsets() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..2.0, 1..5).prop_map(|mut v| {
        v.insert(0, 0.0);
        v.sort_by(f64::total_cmp);
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn eta_is_increasing_in_kappa(c in offsets(), lk in -8.0f64..1.0, step in 0.01f64..1.0) {
        let k = 10f64.powf(lk);
        let (a, b) = (solve_eta(&c, k).unwrap(), solve_eta(&c, k * (1.0 + step)).unwrap());
        prop_assert!(a > 0.0 && b > a);
    }

    #[test]
    fn zeta_lies_between_inverse_count_and_one(c in offsets(), lk in -8.0f64..1.0) {
        let eta = solve_eta(&c, 10f64.powf(lk)).unwrap();
        let z = zeta_of(&c, eta);
        prop_assert!(z >= 1.0 / c.len() as f64 - 1e-14 && z <= 1.0 + 1e-14);
    }

    #[test]
    fn eta_ignores_the_order_of_offsets(c in offsets(), lk in -8.0f64..1.0) {
        let k = 10f64.powf(lk);
        let mut rev = c.clone();
        rev.reverse();
        let (a, b) = (solve_eta(&c, k).unwrap(), solve_eta(&rev, k).unwrap());
        prop_assert!((a - b).abs() <= 1e-13 * a);
    }

    #[test]
    fn darboux_round_trip(c1 in 0.0f64..0.05, r in 0.8f64..1.0, x0 in 0.0f64..6.28, x1 in 0.0f64..6.28,
                          y0 in -0.4f64..0.4, y1 in -0.4f64..0.4) {
        let ch = DarbouxChart::new(desk(c1, r));
        let nu = ch.model.nu();
        let y = [y0 * nu[0] * nu[0], y1 * nu[1] * nu[1]];
        let z = ch.inverse(&[x0, x1], &y).unwrap();
        let (x2, y2) = ch.forward(&z).unwrap();
        for k in 0..2 {
            let d = (x2[k] - [x0, x1][k]).rem_euclid(std::f64::consts::TAU);
            prop_assert!(d.min(std::f64::consts::TAU - d) <= 1e-10);
            prop_assert!((y2[k] - y[k]).abs() <= 1e-10 * nu[k] * nu[k].max(1e-3));
        }
    }

    #[test]
    fn model_torus_has_the_prescribed_offsets(c1 in 0.0f64..0.05, x0 in 0.0f64..6.28, x1 in 0.0f64..6.28) {
        let m = desk(c1, 1.0);
        let ch = DarbouxChart::new(m.clone());
        let xi = m.model_xi(&[x0, x1]).unwrap();
        let y = ch.y_of(&xi).unwrap();
        prop_assert!(y.iter().all(|v| v.abs() <= 1e-12));
    }
}
