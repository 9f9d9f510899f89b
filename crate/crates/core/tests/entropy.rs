use ltc::entropy::{empirical_entropy, fit_laplace, laplace_cdf, p_hat, p_tilde, rate_term, Laplace};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

#[test]
fn small_step_density_approaches_the_pdf() {
    let f = Laplace::new(0.0, 1.0).unwrap();
    let pt = p_tilde(0.3, 0.0, 1.0, 1e-6).unwrap();
    assert!((pt - f.pdf(0.3)).abs() < 1e-6, "{pt} vs {}", f.pdf(0.3));
}

#[test]
fn lattice_masses_sum_to_one() {
    for (mu, b, delta) in [(0.0, 1.0, 1.0), (0.3, 0.7, 0.25), (-1.2, 2.5, 3.0)] {
        let total: f64 = (-20000..=20000).map(|k| p_hat(k as f64 * delta, mu, b, delta).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9, "sum {total}");
    }
}

#[test]
fn symmetric_lattice_sum_is_exact() {
    // Centered on the location, the lattice masses telescope to F(K+½) − F(−K−½).
    let (b, delta, k) = (0.8, 0.5, 400i32);
    let total: f64 = (-k..=k).map(|i| p_hat(i as f64 * delta, 0.0, b, delta).unwrap()).sum();
    let expected = laplace_cdf((k as f64 + 0.5) * delta, 0.0, b).unwrap()
        - laplace_cdf(-(k as f64 + 0.5) * delta, 0.0, b).unwrap();
    assert!((total - expected).abs() < 1e-12);
}

#[test]
fn laplace_samples_recover_unit_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let exp = rand_distr::Exp1;
    let samples: Vec<f64> = (0..100_000)
        .map(|_| {
            let e: f64 = exp.sample(&mut rng);
            let f: f64 = exp.sample(&mut rng);
            e - f
        })
        .collect();
    let fit = fit_laplace(&samples).unwrap();
    assert!((0.9..=1.1).contains(&fit.b), "b = {}", fit.b);
    assert!(fit.mu.abs() < 0.05);
}

#[test]
fn rate_of_a_point_mass_matches_its_probability() {
    // All samples at the location: rate = −log2(δ·p̃(μ)).
    let psi = Laplace::new(0.0, 1.0).unwrap();
    let r = rate_term(&[0.0; 16], 1.0, psi).unwrap();
    assert!((r + (1.0 - (-0.5f64).exp()).log2()).abs() < 1e-12);
}

#[test]
fn uniform_symbols_have_log2_entropy() {
    let syms: Vec<i32> = (0..1024).map(|i| i % 8).collect();
    assert!((empirical_entropy(&syms).unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(empirical_entropy(&[4; 10]).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn p_hat_is_delta_times_p_tilde(q in -10.0f64..10.0, mu in -3.0f64..3.0, b in 0.05f64..5.0, delta in 0.01f64..4.0) {
        let ph = p_hat(q, mu, b, delta).unwrap();
        let pt = p_tilde(q, mu, b, delta).unwrap();
        prop_assert!((ph - delta * pt).abs() <= 1e-15 * ph.abs().max(1e-300) + 1e-300);
    }

    #[test]
    fn fit_is_translation_and_scale_equivariant(
        samples in prop::collection::vec(-50.0f64..50.0, 5..200),
        shift in -100.0f64..100.0,
        scale in 0.01f64..100.0,
    ) {
        prop_assume!(samples.iter().any(|&v| v != samples[0]));
        let base = fit_laplace(&samples).unwrap();
        let moved: Vec<f64> = samples.iter().map(|v| scale * v + shift).collect();
        let fit = fit_laplace(&moved).unwrap();
        let tol = 1e-9 * (1.0 + shift.abs() + scale * 50.0);
        prop_assert!((fit.mu - (scale * base.mu + shift)).abs() < tol);
        prop_assert!((fit.b - scale * base.b).abs() < tol);
    }

    #[test]
    fn entropy_is_bounded_by_alphabet(symbols in prop::collection::vec(-5i32..5, 1..500)) {
        let h = empirical_entropy(&symbols).unwrap();
        let mut distinct = symbols.clone();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert!(h >= 0.0 && h <= (distinct.len() as f64).log2() + 1e-12);
    }
}
