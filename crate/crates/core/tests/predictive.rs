mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use vbpp::bound::{integral_terms, kl_qu_pu, qf_marginals};
use vbpp::predictive::{
    intensity_summary, mc_predictive, posterior_intensity, predictive_bound_l0, predictive_bound_lp, McMode,
};
use vbpp::{elbo, fit, Domain, EventSet, FitConfig, InducingSpec, Model, VariationalState};

fn fitted(seed: u64) -> (Model, EventSet, EventSet) {
    let d = Domain::new(vec![0.0], vec![5.0]).unwrap();
    let mut r = rng(seed);
    let ev = random_events(&mut r, &d, 60);
    let (train, test) = ev.split(0.5, seed);
    let cfg = FitConfig {
        max_iters: 300,
        ..FitConfig::default()
    };
    (fit(&train, &d, &InducingSpec::Total(6), &cfg).unwrap(), train, test)
}

fn collapsed(model: &Model) -> Model {
    let m = model.num_inducing();
    let l = DMatrix::from_diagonal_element(m, m, 1e-7);
    model
        .with_var_state(VariationalState::new(model.var_state().m().clone(), l).unwrap())
        .unwrap()
}

#[test]
fn lp_on_training_data_is_elbo_plus_kl() {
    let (model, train, _) = fitted(1);
    let lp = predictive_bound_lp(&model, &train).unwrap();
    let want = elbo(&model, &train).unwrap() + kl_qu_pu(&model).unwrap();
    assert!((lp - want).abs() < 1e-9 * want.abs().max(1.0));
}

#[test]
fn empty_test_set_leaves_the_integral() {
    let (model, _, _) = fitted(2);
    let (a, b) = integral_terms(&model).unwrap();
    let lp = predictive_bound_lp(&model, &EventSet::empty(1)).unwrap();
    assert!((lp + a + b).abs() < 1e-10 * (a + b));
}

#[test]
fn collapsing_removes_variance() {
    let (model, _, test) = fitted(3);
    let (_, v) = qf_marginals(test.points(), &model, false).unwrap();
    let (_, v0) = qf_marginals(test.points(), &model, true).unwrap();
    assert!(v.iter().zip(v0.iter()).all(|(a, b)| b <= a));
    let c = collapsed(&model);
    let (lp, l0) = (
        predictive_bound_lp(&c, &test).unwrap(),
        predictive_bound_l0(&c, &test).unwrap(),
    );
    assert!((lp - l0).abs() < 1e-6);
}

#[test]
fn jensen_ordering() {
    for seed in [4, 5] {
        let (model, _, test) = fitted(seed);
        let lp = predictive_bound_lp(&model, &test).unwrap();
        let l0 = predictive_bound_l0(&model, &test).unwrap();
        let mp = mc_predictive(&model, &test, McMode::Mp, 4000, &[2048], 1).unwrap();
        let m0 = mc_predictive(&model, &test, McMode::M0, 4000, &[2048], 1).unwrap();
        assert!(lp <= mp.estimate + 3.0 * mp.stderr, "{lp} vs {mp:?}");
        assert!(l0 <= m0.estimate + 3.0 * m0.stderr, "{l0} vs {m0:?}");
    }
}

#[test]
fn single_sample_and_determinism() {
    let (model, _, test) = fitted(6);
    let one = mc_predictive(&model, &test, McMode::Mp, 1, &[64], 3).unwrap();
    assert_eq!(one.stderr, 0.0);
    assert!(one.estimate.is_finite());
    let a = mc_predictive(&model, &test, McMode::Mp, 300, &[64], 3).unwrap();
    let b = mc_predictive(&model, &test, McMode::Mp, 300, &[64], 3).unwrap();
    assert_eq!(a, b);
    assert!(mc_predictive(&model, &test, McMode::Mp, 10, &[4], 3).is_err());
}

#[test]
fn modes_agree_when_s_vanishes() {
    let (model, _, test) = fitted(7);
    let c = collapsed(&model);
    let mp = mc_predictive(&c, &test, McMode::Mp, 3000, &[128], 2).unwrap();
    let m0 = mc_predictive(&c, &test, McMode::M0, 3000, &[128], 9).unwrap();
    let se = (mp.stderr.powi(2) + m0.stderr.powi(2)).sqrt();
    assert!((mp.estimate - m0.estimate).abs() < 3.0 * se + 1e-6, "{mp:?} {m0:?}");
}

#[test]
fn quadrature_resolution_converges() {
    let d = Domain::new(vec![0.0], vec![1.0]).unwrap();
    let h = vbpp::HyperParams::new(2.0, vec![0.04], 1.0).unwrap();
    let z = DMatrix::from_column_slice(2, 1, &[0.3, 0.7]);
    let model = Model::new(
        d.clone(),
        h,
        vbpp::InducingPoints::fixed(z, &d).unwrap(),
        VariationalState::new(
            DVector::from_vec(vec![2.0, 2.5]),
            DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.02, 0.1]),
        )
        .unwrap(),
    )
    .unwrap();
    let test = EventSet::from_rows(&[vec![0.1], vec![0.35], vec![0.5], vec![0.62], vec![0.9]], &d).unwrap();
    let a = mc_predictive(&model, &test, McMode::Mp, 100_000, &[512], 5).unwrap();
    let b = mc_predictive(&model, &test, McMode::Mp, 100_000, &[1024], 5).unwrap();
    assert!((a.estimate - b.estimate).abs() < 1e-2, "{a:?} {b:?}");
}

#[test]
fn band_matches_sampled_quantiles() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    for (mu, var) in [(0.0, 1.0), (1.5, 0.5), (-3.0, 2.0)] {
        let s = intensity_summary(mu, var);
        let nd = Normal::new(mu, f64::sqrt(var)).unwrap();
        let mut v: Vec<f64> = (0..1_000_000).map(|_| nd.sample(&mut rng).powi(2)).collect();
        v.sort_by(f64::total_cmp);
        let (lo, hi) = (v[25_000], v[975_000]);
        assert!((s.lower - lo).abs() <= 0.01 * lo, "{} vs {lo}", s.lower);
        assert!((s.upper - hi).abs() <= 0.01 * hi, "{} vs {hi}", s.upper);
    }
}

#[test]
fn mean_intensity_integrates_to_bound_terms() {
    let (model, _, _) = fitted(8);
    let d = model.domain().clone();
    let q = vbpp::pointdata::midpoint_grid(&d, &[4096]).unwrap();
    let s = posterior_intensity(&model, &q).unwrap();
    let integral: f64 = s.iter().map(|p| p.mean).sum::<f64>() * d.measure() / 4096.0;
    let (a, b) = integral_terms(&model).unwrap();
    assert!(((integral - (a + b)) / (a + b)).abs() < 1e-4);
    assert!(s.iter().all(|p| p.lower <= p.mean && p.lower >= 0.0 && p.upper >= p.lower));
}
