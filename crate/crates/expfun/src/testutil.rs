//! Shared helpers for in-crate unit tests: a tiny deterministic generator
//! for parameter grids (independent of the `rand` crate so frozen test
//! values never shift) and the reference models used across modules.

use crate::model::{EtaJumps, EtaSpec, HyperExpLevyModel, JumpTerm};

/// SplitMix64: deterministic pseudo-random stream for test grids.
pub struct Mix(pub u64);

impl Mix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

/// Brownian-with-drift ξ: σ_ξ = √2, μ_ξ = −1, no jumps; ψ(z) = z² − z,
/// θ = 1.  The workhorse model: every Mellin quantity has a closed-form
/// cross-check through ψ(s) = s(s−1).
pub fn pure_bm_model() -> HyperExpLevyModel {
    HyperExpLevyModel::new(2f64.sqrt(), -1.0, vec![], vec![]).unwrap()
}

/// Two-sided jump diffusion: σ_ξ = √2, μ_ξ = −2, one positive family
/// (a=1, ρ=2), one negative family (â=1, ρ̂=3).  λ = 5/6, ψ(1) = −7/12,
/// E[ξ₁] = −67/36, two positive roots of ψ.
pub fn two_sided_model() -> HyperExpLevyModel {
    HyperExpLevyModel::new(
        2f64.sqrt(),
        -2.0,
        vec![JumpTerm::new(1.0, 2.0)],
        vec![JumpTerm::new(1.0, 3.0)],
    )
    .unwrap()
}

/// Slow negative-tail model: σ_ξ = √2, μ_ξ = −1, one negative family with
/// ρ̂ = 0.4.  The small-x expansion of the density picks up an x^{1+0.4}
/// term, the smallest non-smooth exponent exercised by the tests.
pub fn slow_negative_tail_model() -> HyperExpLevyModel {
    HyperExpLevyModel::new(
        2f64.sqrt(),
        -1.0,
        vec![],
        vec![JumpTerm::new(1.0, 0.4)],
    )
    .unwrap()
}

/// Spectrally positive jump-drift model with no diffusion: σ_ξ = 0,
/// μ_ξ = −1, one positive family (a=1/2, ρ=1).  Exactly one positive root
/// ζ₁ = θ = 1/2, so the density tail is c·x^{−3/2}: the heavy-tail
/// regime with cheap (jump-only) paths.
pub fn one_root_model() -> HyperExpLevyModel {
    HyperExpLevyModel::new(0.0, -1.0, vec![JumpTerm::new(0.5, 1.0)], vec![]).unwrap()
}

/// Deterministic ξ(t) = −t (no diffusion, no jumps); J₁ and J₂ are exact
/// exponential integrals, making every sampler quantity checkable by hand.
pub fn drift_only_model() -> HyperExpLevyModel {
    HyperExpLevyModel::new(0.0, -1.0, vec![], vec![]).unwrap()
}

/// Standard Brownian η (μ = 0, σ = 1).
pub fn standard_eta() -> EtaSpec {
    EtaSpec::brownian(0.0, 1.0).unwrap()
}

/// η with positive compound-Poisson jumps: rate `a/rho`, Exp(`rho`) sizes.
pub fn jump_eta(mu: f64, sigma: f64, a: f64, rho: f64) -> EtaSpec {
    EtaSpec::new(
        mu,
        sigma,
        Some(EtaJumps {
            pos: vec![JumpTerm::new(a, rho)],
            neg: vec![],
        }),
    )
    .unwrap()
}

/// Two-sample Kolmogorov–Smirnov statistic sup|F₁ − F₂|.
pub fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|p, q| p.partial_cmp(q).unwrap());
    b.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// KS acceptance threshold at significance `alpha` for sample sizes n, m
/// (asymptotic formula c(α)·√((n+m)/(nm)) with c(α) = √(−ln(α/2)/2)).
pub fn ks_threshold(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}
