//! Cross-module consistency checks that exercise several pipelines against
//! each other on one set of simulated paths: scaling laws of the transform,
//! the direct sampler against the conditional mixture, and tail/density
//! agreement through integration.

use std::sync::Arc;

use expfun::mc::{estimate_density, estimate_tail, simulate, simulate_general, SamplerConfig};
use expfun::mellin::MellinExtension;
use expfun::special;
use expfun::{
    AnchorOptions, Complex64, DensityEvaluator, EtaSpec, EvaluatorOptions, HyperExpLevyModel,
    JumpTerm, Strategy,
};

fn pure_bm_model() -> HyperExpLevyModel {
    HyperExpLevyModel::new(std::f64::consts::SQRT_2, -1.0, vec![], vec![]).unwrap()
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Scaling the integrator by c > 0 scales the functional: I with (cμ, cσ)
/// equals c times I with (μ, σ) path by path, so inside the estimation
/// strip M_{cμ,cσ}(s) = c^{s−1}·M_{μ,σ}(s) holds per sample, up to float
/// rounding, when both transforms are built from the same paths.
#[test]
fn mellin_scales_exactly_under_integrator_dilation() {
    let model = pure_bm_model();
    let cfg = SamplerConfig::for_model(&model, 30_000, 21).unwrap();
    let c = 2.0f64;
    let eta_base = EtaSpec::brownian(0.15, 1.0).unwrap();
    let eta_scaled = EtaSpec::brownian(0.30, 2.0).unwrap();
    let base = Arc::new(simulate(&model, &eta_base, &cfg).unwrap());
    let scaled = Arc::new(simulate(&model, &eta_scaled, &cfg).unwrap());
    let ext_base =
        MellinExtension::build(&model, &eta_base, base, &AnchorOptions::default()).unwrap();
    let ext_scaled =
        MellinExtension::build(&model, &eta_scaled, scaled, &AnchorOptions::default()).unwrap();
    for s in [0.4, 0.9, 1.3, 1.8] {
        let p = Complex64::new(s, 0.0);
        let m1 = ext_base.extend(p).unwrap();
        let m2 = ext_scaled.extend(p).unwrap();
        let predicted = c.powf(s - 1.0) * m1.value.re;
        assert!(
            (m2.value.re - predicted).abs() <= 1e-8 * predicted.abs().max(1e-8),
            "s = {s}: scaled transform {} vs c^(s-1)·base = {}",
            m2.value.re,
            predicted
        );
        let predicted_err = c.powf(s - 1.0) * m1.stderr;
        assert!((m2.stderr - predicted_err).abs() <= 1e-8 * predicted_err.max(1e-12));
    }
}

/// The path sampler that integrates the driving process directly must agree
/// in law with the conditional Gaussian mixture: compare its empirical CDF
/// with the mixture CDF estimated from an independent seed, pointwise with
/// 4 combined standard errors.
#[test]
fn general_sampler_matches_conditional_mixture_cdf() {
    let model = pure_bm_model();
    let eta = EtaSpec::brownian(0.0, 1.0).unwrap();
    let cfg_draws = SamplerConfig::for_model(&model, 60_000, 22).unwrap();
    let draws = simulate_general(&model, &eta, &cfg_draws).unwrap();
    let n = draws.len() as f64;
    let cfg_mix = SamplerConfig::for_model(&model, 120_000, 23).unwrap();
    let mixture = simulate(&model, &eta, &cfg_mix).unwrap();
    let mut sorted = draws.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &x in &[-2.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0] {
        let empirical = sorted.partition_point(|&v| v <= x) as f64 / n;
        let tail = estimate_tail(&mixture, &eta, x).unwrap();
        let reference = 1.0 - tail.value;
        let binom_se = (reference * (1.0 - reference) / n).sqrt();
        let tol = 4.0 * (binom_se + tail.stderr);
        assert!(
            (empirical - reference).abs() <= tol,
            "x = {x}: empirical CDF {empirical:.5} vs mixture {reference:.5} (tol {tol:.2e})"
        );
    }
}

/// On a model whose functional takes both signs, the density evaluated by
/// the full dispatch pipeline, integrated over a wide window, plus the
/// residual tail mass on each side, must sum to one.  (The tail index of
/// this model is ≈ 0.71, so the mass beyond |x| = 40 is itself over a
/// percent and has to be accounted for, not neglected.)
#[test]
fn two_sided_density_mass_sums_to_one() {
    let model = HyperExpLevyModel::new(2.0, -1.0, vec![], vec![JumpTerm::new(0.5, 0.8)]).unwrap();
    let eta = EtaSpec::brownian(-0.3, 1.0).unwrap();
    let cfg = SamplerConfig::for_model(&model, 120_000, 24).unwrap();
    let samples = Arc::new(simulate(&model, &eta, &cfg).unwrap());
    let evaluator =
        DensityEvaluator::new(&model, &eta, samples.clone(), EvaluatorOptions::default()).unwrap();
    // Graded grid on each side; trapezoid over the evaluated points plus a
    // central cell around zero.
    let grid = geometric(5e-3, 40.0, 140);
    let k0 = evaluator.density(0.0, Strategy::Auto).unwrap().value;
    let mut mass = 0.0;
    for sign in [1.0f64, -1.0] {
        let mut prev_x = 0.0;
        let mut prev_y = k0;
        for &g in &grid {
            let x = sign * g;
            let y = evaluator.density(x, Strategy::Auto).unwrap().value;
            mass += 0.5 * (y + prev_y) * (x - prev_x).abs();
            prev_x = x;
            prev_y = y;
        }
    }
    let right_tail = estimate_tail(&samples, &eta, 40.0).unwrap().value;
    let left_tail = 1.0 - estimate_tail(&samples, &eta, -40.0).unwrap().value;
    mass += right_tail + left_tail;
    assert!(
        (mass - 1.0).abs() <= 0.01,
        "density mass over the whole line: {mass:.4} \
         (window integral {:.4}, tails {right_tail:.4} + {left_tail:.4})",
        mass - right_tail - left_tail
    );
}

/// P(I > 0) − P(I > x) must equal the integral of the density over (0, x):
/// ties the tail pipeline to the density pipeline through quadrature.
#[test]
fn tail_decrement_matches_density_integral() {
    let model = pure_bm_model();
    let eta = EtaSpec::brownian(0.0, 1.0).unwrap();
    let cfg = SamplerConfig::for_model(&model, 150_000, 25).unwrap();
    let samples = Arc::new(simulate(&model, &eta, &cfg).unwrap());
    let evaluator =
        DensityEvaluator::new(&model, &eta, samples.clone(), EvaluatorOptions::default()).unwrap();
    let x_end = 2.0;
    let t0 = evaluator.tail(0.0, Strategy::Auto).unwrap();
    let t1 = evaluator.tail(x_end, Strategy::Auto).unwrap();
    let decrement = t0.value - t1.value;
    // Trapezoid of the dispatched density over a graded grid on (0, 2].
    let mut grid = geometric(1e-4, x_end, 220);
    grid.insert(0, 0.0);
    let mut integral = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for &x in &grid {
        let y = evaluator.density(x, Strategy::Auto).unwrap().value;
        if let Some((px, py)) = prev {
            integral += 0.5 * (y + py) * (x - px);
        }
        prev = Some((x, y));
    }
    let tol = 5e-3 + t0.error_estimate + t1.error_estimate;
    assert!(
        (decrement - integral).abs() <= tol,
        "tail decrement {decrement:.5} vs density integral {integral:.5} (tol {tol:.2e})"
    );
    // And the direct conditional tail agrees with the evaluator's tail.
    let rb = estimate_tail(&samples, &eta, x_end).unwrap();
    assert!(
        (t1.value - rb.value).abs() <= t1.error_estimate + 4.0 * rb.stderr,
        "evaluator tail {} vs conditional estimate {}",
        t1.value,
        rb.value
    );
}

/// The conditional-mixture density of the symmetric model is even in x, and
/// the closed-form value at zero matches the k(0) = E[(2πσ²J₂)^{−1/2}]
/// mixture formula computed directly from the samples.
#[test]
fn conditional_density_matches_direct_mixture_formula_at_zero() {
    let model = pure_bm_model();
    let eta = EtaSpec::brownian(0.0, 1.0).unwrap();
    let cfg = SamplerConfig::for_model(&model, 80_000, 26).unwrap();
    let samples = Arc::new(simulate(&model, &eta, &cfg).unwrap());
    let k0 = estimate_density(&samples, &eta, 0.0).unwrap();
    let mut acc = 0.0;
    for i in 0..samples.len() {
        acc += special::normal_pdf(0.0) / samples.j2[i].sqrt();
    }
    let direct = acc / samples.len() as f64;
    assert!(
        (k0.value - direct).abs() <= 1e-12 * direct,
        "estimator {} vs direct mixture mean {}",
        k0.value,
        direct
    );
    let left = estimate_density(&samples, &eta, -0.7).unwrap();
    let right = estimate_density(&samples, &eta, 0.7).unwrap();
    assert!((left.value - right.value).abs() <= 1e-14);
}
