mod common;

use common::*;
use rand::Rng;
use vbpp::bound::expected_log_f_sq;
use vbpp::specfun::{g_tilde, g_tilde_series};
use vbpp::GTildeTable;
use vbpp_oracle::mc_expected_log_sq;

#[test]
fn series_ordering() {
    assert_eq!(g_tilde_series(0.0).unwrap(), 0.0);
    let a = g_tilde_series(-1.0).unwrap();
    let b = g_tilde_series(-10.0).unwrap();
    assert!(b < a && a < 0.0);
    assert!(g_tilde_series(0.5).is_err());
}

#[test]
fn table_tracks_series_on_random_arguments() {
    let table = GTildeTable::global();
    let mut r = rng(21);
    for _ in 0..300 {
        let z = -(10f64).powf(r.random_range(-7.0..4.0));
        let (v, _) = g_tilde(z, table).unwrap();
        let s = g_tilde_series(z).unwrap();
        assert!((v - s).abs() / (s.abs() + 1e-12) <= 1e-6, "{z}: {v} vs {s}");
    }
    assert!(g_tilde(1e-3, table).is_err());
}

#[test]
fn slope_matches_differences_between_knots() {
    let table = GTildeTable::global();
    let k = table.knots();
    for i in (1..k.len() - 1).step_by(7) {
        let z = 0.5 * (k[i] + k[i + 1]);
        let h = 1e-4 * (k[i] - k[i + 1]).abs();
        let (_, d) = g_tilde(z, table).unwrap();
        let fd = (g_tilde(z + h, table).unwrap().0 - g_tilde(z - h, table).unwrap().0) / (2.0 * h);
        assert!((d - fd).abs() <= 1e-4 * d.abs().max(1e-12), "{z}: {d} vs {fd}");
    }
}

#[test]
fn identity_with_expected_log_square() {
    let table = GTildeTable::global();
    for (i, (mu, var)) in [(0.5, 0.2), (-1.5, 2.0), (3.0, 0.5)].into_iter().enumerate() {
        let v = expected_log_f_sq(mu, var, table).unwrap();
        let (mc, se) = mc_expected_log_sq(mu, var, 400_000, 40 + i as u64);
        assert!((v - mc).abs() < 3.0 * se, "{v} vs {mc} ± {se}");
    }
}
