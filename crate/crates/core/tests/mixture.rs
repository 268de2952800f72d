#![allow(clippy::needless_range_loop)]

use gridmix::map::{make_grid, Extent, GridSpec};
use gridmix::mixture::{
    decomposed_loss, decomposed_loss_with_grad, density, focal_classification, mixture_nll,
    realize_params, MixtureParams, RawHeadOutput, LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};
use proptest::prelude::*;

fn grid() -> GridSpec {
    make_grid(Extent::default(), 4).unwrap()
}

fn raw(k: usize) -> impl Strategy<Value = RawHeadOutput> {
    let v = move |lo: f64, hi: f64| prop::collection::vec(lo..hi, k);
    (
        v(-4.0, 4.0),
        v(-5.0, 5.0),
        v(-5.0, 5.0),
        v(-2.5, 2.5),
        v(-2.5, 2.5),
    )
        .prop_map(|(logits, dmu_x, dmu_y, s_x, s_y)| RawHeadOutput {
            logits,
            dmu_x,
            dmu_y,
            s_x,
            s_y,
        })
}

fn target() -> impl Strategy<Value = [f64; 2]> {
    (-10.0f64..54.0, -32.0f64..32.0).prop_map(|(x, y)| [x, y])
}

fn loss_at(raw: &RawHeadOutput, t: [f64; 2], z: usize, gamma: f64) -> f64 {
    decomposed_loss(&realize_params(raw, &grid()).unwrap(), t, z, gamma).total
}

#[test]
fn symmetric_pair_matches_closed_form() {
    for &(a, sigma) in &[(0.5, 1.0), (2.0, 0.7), (3.0, 4.0)] {
        let params = MixtureParams {
            phi: vec![0.5, 0.5],
            mu_x: vec![-a, a],
            mu_y: vec![1.0, 1.0],
            sigma_x: vec![sigma, sigma],
            sigma_y: vec![sigma, sigma],
        };
        let expected =
            (2.0 * std::f64::consts::PI * sigma * sigma).ln() + a * a / (2.0 * sigma * sigma);
        assert!((mixture_nll(&params, [0.0, 1.0]) - expected).abs() < 1e-12);
    }
}

#[test]
fn density_integrates_to_one() {
    let params = MixtureParams {
        phi: vec![0.2, 0.5, 0.3],
        mu_x: vec![0.0, 4.0, -3.0],
        mu_y: vec![0.0, 1.0, 5.0],
        sigma_x: vec![0.5, 1.5, 0.8],
        sigma_y: vec![1.0, 0.4, 2.0],
    };
    // Midpoint rule over a box covering every component to 6 sigma.
    let (x0, x1, y0, y1) = (-3.0 - 6.0 * 0.8, 4.0 + 6.0 * 1.5, -6.0, 5.0 + 12.0);
    let n = 1200;
    let (hx, hy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let mut mass = 0.0;
    for i in 0..n {
        for j in 0..n {
            let q = [x0 + (i as f64 + 0.5) * hx, y0 + (j as f64 + 0.5) * hy];
            mass += density(&params, q) * hx * hy;
        }
    }
    assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
}

#[test]
fn extreme_raw_outputs_give_finite_losses() {
    let g = grid();
    let mut r = RawHeadOutput::zeros(g.k());
    r.logits[0] = 800.0;
    r.s_x[3] = -1e6;
    r.s_y[3] = 1e6;
    r.dmu_x[3] = 1e5;
    for gamma in [0.0, 2.0] {
        let (loss, grad) = decomposed_loss_with_grad(&r, &g, [1.0, 2.0], 3, gamma).unwrap();
        assert!(loss.total.is_finite());
        for v in [&grad.logits, &grad.dmu_x, &grad.dmu_y, &grad.s_x, &grad.s_y] {
            assert!(v.iter().all(|x| x.is_finite()));
        }
    }
}

proptest! {
    #[test]
    fn realized_params_are_a_valid_mixture(r in raw(16)) {
        let g = grid();
        let p = realize_params(&r, &g).unwrap();
        p.validate().unwrap();
        for j in 0..g.k() {
            prop_assert!((p.mu_x[j] - g.centers()[j][0] - r.dmu_x[j]).abs() < 1e-12);
            prop_assert!((p.mu_y[j] - g.centers()[j][1] - r.dmu_y[j]).abs() < 1e-12);
            for s in [p.sigma_x[j], p.sigma_y[j]] {
                prop_assert!(s >= LOG_SIGMA_MIN.exp() && s <= LOG_SIGMA_MAX.exp());
            }
        }
    }

    #[test]
    fn decomposed_loss_bounds_mixture_nll(r in raw(16), t in target(), z in 0usize..16) {
        let p = realize_params(&r, &grid()).unwrap();
        let upper = decomposed_loss(&p, t, z, 0.0).total;
        prop_assert!(upper >= mixture_nll(&p, t) - 1e-9);
    }

    #[test]
    fn focal_damping_is_monotone(p in 1e-6f64..1.0, g1 in 0.0f64..5.0, dg in 0.0f64..5.0) {
        let a = focal_classification(p, g1);
        let b = focal_classification(p, g1 + dg);
        prop_assert!(b <= a + 1e-15);
        prop_assert!(b >= 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences(
        r in raw(16),
        t in target(),
        z in 0usize..16,
        gamma in prop::sample::select(vec![0.0, 1.0, 2.0]),
    ) {
        let g = grid();
        let (_, grad) = decomposed_loss_with_grad(&r, &g, t, z, gamma).unwrap();
        let h = 1e-6;
        // Central differences lose about eps * |L| / h to cancellation.
        let roundoff = 10.0 * f64::EPSILON * loss_at(&r, t, z, gamma).abs() / h;
        let fields: [fn(&mut RawHeadOutput) -> &mut Vec<f64>; 5] = [
            |r| &mut r.logits,
            |r| &mut r.dmu_x,
            |r| &mut r.dmu_y,
            |r| &mut r.s_x,
            |r| &mut r.s_y,
        ];
        let analytic = [&grad.logits, &grad.dmu_x, &grad.dmu_y, &grad.s_x, &grad.s_y];
        for (f, a) in fields.iter().zip(analytic) {
            for j in 0..g.k() {
                let (mut plus, mut minus) = (r.clone(), r.clone());
                f(&mut plus)[j] += h;
                f(&mut minus)[j] -= h;
                let fd = (loss_at(&plus, t, z, gamma) - loss_at(&minus, t, z, gamma)) / (2.0 * h);
                let tol = 1e-5 * (1.0 + fd.abs().max(a[j].abs())) + roundoff;
                prop_assert!((fd - a[j]).abs() < tol, "cell {j}: fd {fd} analytic {}", a[j]);
            }
        }
    }
}
