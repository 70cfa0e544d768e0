//! The hyper-exponential Lévy process ξ and the driving pair (μ, σ, jumps)
//! for the second process η.
//!
//! ξ has Gaussian coefficient σ_ξ, compound-Poisson drift μ_ξ, and two-sided
//! jump mixture density Σ a_n ρ_n⁻¹·ρ_n e^{-ρ_n x} (x > 0) and the mirrored
//! â/ρ̂ family (x < 0).  Its Laplace exponent
//!
//!   ψ(z) = σ_ξ²/2 z² + μ_ξ z + z Σ a_n/(ρ_n(ρ_n - z)) - z Σ â_n/(ρ̂_n(ρ̂_n + z))
//!
//! is rational; its zeros ζ₁ < ζ₂ < … interlace with its poles ρ₁ < ρ₂ < …
//! on the positive axis, and the smallest zero θ = ζ₁ governs the power tail
//! of the exponential functional.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// One exponential family of a jump mixture: density contribution
/// a·e^{-ρx} on its side of the axis (weight a > 0, rate ρ > 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpTerm {
    pub weight: f64,
    pub rate: f64,
}

impl JumpTerm {
    pub fn new(weight: f64, rate: f64) -> Self {
        JumpTerm { weight, rate }
    }
}

/// A real number or +∞; used for ρ, ρ̂ and θ, which are genuinely infinite
/// for models with no jumps (or no positive ψ-root).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    Infinite,
}

impl ExtendedReal {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }
    pub fn finite(&self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(x) => Some(*x),
            ExtendedReal::Infinite => None,
        }
    }
    /// Collapse to f64, mapping the infinite tag to `f64::INFINITY`.
    pub fn as_f64(&self) -> f64 {
        match self {
            ExtendedReal::Finite(x) => *x,
            ExtendedReal::Infinite => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExtendedReal::Finite(x) => write!(f, "{x}"),
            ExtendedReal::Infinite => write!(f, "inf"),
        }
    }
}

/// Which side of a two-sided jump mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Positive,
    Negative,
}

fn check_mixture(kind: &str, terms: &[JumpTerm]) -> Result<Vec<JumpTerm>> {
    let mut sorted = terms.to_vec();
    for t in &sorted {
        if !(t.weight.is_finite() && t.weight > 0.0) {
            return Err(Error::InvalidModel(format!(
                "{kind} jump weight must be positive and finite, got {}",
                t.weight
            )));
        }
        if !(t.rate.is_finite() && t.rate > 0.0) {
            return Err(Error::InvalidModel(format!(
                "{kind} jump rate must be positive and finite, got {}",
                t.rate
            )));
        }
    }
    sorted.sort_by(|x, y| x.rate.partial_cmp(&y.rate).unwrap());
    for pair in sorted.windows(2) {
        if pair[1].rate - pair[0].rate < 1e-9 * pair[1].rate.max(1.0) {
            return Err(Error::InvalidModel(format!(
                "{kind} jump rates must be distinct: {} vs {}",
                pair[0].rate, pair[1].rate
            )));
        }
    }
    Ok(sorted)
}

/// Hyper-exponential Lévy process ξ.  Construction sorts each jump family by
/// rate and enforces positivity, rate distinctness, and the negative-mean
/// condition E[ξ₁] = ψ′(0) < 0.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperExpLevyModel {
    sigma_xi: f64,
    mu_xi: f64,
    pos: Vec<JumpTerm>,
    neg: Vec<JumpTerm>,
}

impl HyperExpLevyModel {
    pub fn new(
        sigma_xi: f64,
        mu_xi: f64,
        pos_jumps: Vec<JumpTerm>,
        neg_jumps: Vec<JumpTerm>,
    ) -> Result<Self> {
        if !(sigma_xi.is_finite() && sigma_xi >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "sigma_xi must be finite and >= 0, got {sigma_xi}"
            )));
        }
        if !mu_xi.is_finite() {
            return Err(Error::InvalidModel(format!("mu_xi must be finite, got {mu_xi}")));
        }
        let model = HyperExpLevyModel {
            sigma_xi,
            mu_xi,
            pos: check_mixture("positive", &pos_jumps)?,
            neg: check_mixture("negative", &neg_jumps)?,
        };
        let mean = model.mean();
        if !(mean < 0.0) {
            return Err(Error::InvalidModel(format!(
                "mean condition violated: E[xi_1] >= 0 (got {mean}); the drift must be negative"
            )));
        }
        Ok(model)
    }

    pub fn sigma_xi(&self) -> f64 {
        self.sigma_xi
    }
    pub fn mu_xi(&self) -> f64 {
        self.mu_xi
    }
    pub fn pos_jumps(&self) -> &[JumpTerm] {
        &self.pos
    }
    pub fn neg_jumps(&self) -> &[JumpTerm] {
        &self.neg
    }

    /// Total jump intensity λ = Σ a/ρ + Σ â/ρ̂.
    pub fn lambda(&self) -> f64 {
        self.pos.iter().map(|t| t.weight / t.rate).sum::<f64>()
            + self.neg.iter().map(|t| t.weight / t.rate).sum::<f64>()
    }

    /// E[ξ₁] = ψ′(0) = μ_ξ + Σ a/ρ² − Σ â/ρ̂².
    pub fn mean(&self) -> f64 {
        self.mu_xi + self.pos.iter().map(|t| t.weight / (t.rate * t.rate)).sum::<f64>()
            - self.neg.iter().map(|t| t.weight / (t.rate * t.rate)).sum::<f64>()
    }

    fn check_pole_distance(&self, z: Complex64) -> Result<()> {
        for t in &self.pos {
            if (z - t.rate).norm() < 1e-9 * t.rate.max(1.0) {
                return Err(Error::PoleProximity(format!(
                    "psi evaluated within tolerance of its pole at {}",
                    t.rate
                )));
            }
        }
        for t in &self.neg {
            if (z + t.rate).norm() < 1e-9 * t.rate.max(1.0) {
                return Err(Error::PoleProximity(format!(
                    "psi evaluated within tolerance of its pole at {}",
                    -t.rate
                )));
            }
        }
        Ok(())
    }

    /// Laplace exponent ψ(z) (partial-fraction form).
    pub fn psi(&self, z: Complex64) -> Result<Complex64> {
        self.check_pole_distance(z)?;
        let mut v = 0.5 * self.sigma_xi * self.sigma_xi * z * z + self.mu_xi * z;
        for t in &self.pos {
            v += z * t.weight / (t.rate * (t.rate - z));
        }
        for t in &self.neg {
            v -= z * t.weight / (t.rate * (t.rate + z));
        }
        Ok(v)
    }

    /// ψ on the real axis (same formula and pole guards as [`psi`], without
    /// complex arithmetic; used heavily by root finding).
    pub fn psi_real(&self, x: f64) -> Result<f64> {
        for t in &self.pos {
            if (x - t.rate).abs() < 1e-9 * t.rate.max(1.0) {
                return Err(Error::PoleProximity(format!(
                    "psi evaluated within tolerance of its pole at {}",
                    t.rate
                )));
            }
        }
        for t in &self.neg {
            if (x + t.rate).abs() < 1e-9 * t.rate.max(1.0) {
                return Err(Error::PoleProximity(format!(
                    "psi evaluated within tolerance of its pole at {}",
                    -t.rate
                )));
            }
        }
        let mut v = 0.5 * self.sigma_xi * self.sigma_xi * x * x + self.mu_xi * x;
        for t in &self.pos {
            v += x * t.weight / (t.rate * (t.rate - x));
        }
        for t in &self.neg {
            v -= x * t.weight / (t.rate * (t.rate + x));
        }
        Ok(v)
    }

    /// Second evaluation path for ψ: the integrated-tail form
    /// ψ(z) = σ_ξ²/2 z² + b_ξ z + z² [Σ a/(ρ²(ρ-z)) + Σ â/(ρ̂²(ρ̂+z))]
    /// with b_ξ = E[ξ₁].  Algebraically identical to the partial-fraction
    /// form; kept as an independent implementation for cross-checking.
    pub fn psi_integrated_form(&self, z: Complex64) -> Result<Complex64> {
        self.check_pole_distance(z)?;
        let mut v = 0.5 * self.sigma_xi * self.sigma_xi * z * z + self.mean() * z;
        let z2 = z * z;
        for t in &self.pos {
            v += z2 * t.weight / (t.rate * t.rate * (t.rate - z));
        }
        for t in &self.neg {
            v += z2 * t.weight / (t.rate * t.rate * (t.rate + z));
        }
        Ok(v)
    }

    /// First or second derivative of ψ, in closed form.
    pub fn psi_derivative(&self, z: Complex64, order: u8) -> Result<Complex64> {
        self.check_pole_distance(z)?;
        let s2 = self.sigma_xi * self.sigma_xi;
        match order {
            1 => {
                let mut v = s2 * z + self.mu_xi;
                for t in &self.pos {
                    let d = t.rate - z;
                    v += t.weight / (d * d);
                }
                for t in &self.neg {
                    let d = t.rate + z;
                    v -= t.weight / (d * d);
                }
                Ok(v)
            }
            2 => {
                let mut v = Complex64::new(s2, 0.0);
                for t in &self.pos {
                    let d = t.rate - z;
                    v += 2.0 * t.weight / (d * d * d);
                }
                for t in &self.neg {
                    let d = t.rate + z;
                    v += 2.0 * t.weight / (d * d * d);
                }
                Ok(v)
            }
            _ => Err(Error::Domain(format!(
                "psi_derivative supports orders 1 and 2, got {order}"
            ))),
        }
    }

    /// Twice-integrated jump tail: Σ (a/ρ²) e^{-ρx} over the requested side,
    /// for x ≥ 0.
    pub fn double_tail(&self, side: Side, x: f64) -> f64 {
        debug_assert!(x >= 0.0, "double_tail expects x >= 0");
        let terms = match side {
            Side::Positive => &self.pos,
            Side::Negative => &self.neg,
        };
        terms
            .iter()
            .map(|t| t.weight / (t.rate * t.rate) * (-t.rate * x).exp())
            .sum()
    }

    /// Root/exponent summary: ρ, ρ̂, the positive zeros ζ₁ < … < ζ_M of ψ,
    /// and θ = ζ₁.
    pub fn exponents(&self) -> Result<ExponentSummary> {
        let n_pos = self.pos.len();
        let extra_root = self.sigma_xi > 0.0 || (self.sigma_xi == 0.0 && self.mu_xi > 0.0);
        let m_expected = if extra_root { n_pos + 1 } else { n_pos };

        let mut roots = Vec::with_capacity(m_expected);
        // One root strictly between consecutive poles of ψ on (0, ∞),
        // counting 0 as the left end of the first gap.
        let mut gap_lo = 0.0f64;
        for (k, t) in self.pos.iter().enumerate() {
            roots.push(self.root_in_gap(gap_lo, Some(t.rate), k == 0)?);
            gap_lo = t.rate;
        }
        if extra_root {
            roots.push(self.root_in_gap(gap_lo, None, n_pos == 0)?);
        }

        // Interlacing sanity: strictly increasing roots, separated by poles.
        for w in roots.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::NonConvergence(
                    "internal error: roots of psi not strictly increasing".into(),
                ));
            }
        }
        let theta = match roots.first() {
            Some(&z) => ExtendedReal::Finite(z),
            None => ExtendedReal::Infinite,
        };
        Ok(ExponentSummary {
            rho: self
                .pos
                .first()
                .map_or(ExtendedReal::Infinite, |t| ExtendedReal::Finite(t.rate)),
            rho_hat: self
                .neg
                .first()
                .map_or(ExtendedReal::Infinite, |t| ExtendedReal::Finite(t.rate)),
            theta,
            positive_roots: roots,
            root_count: m_expected,
        })
    }

    /// Locate the unique zero of ψ in the gap (lo, hi), hi = None meaning
    /// the unbounded gap beyond the largest pole.  `from_origin` marks the
    /// first gap, whose left end is 0 where ψ(0) = 0 exactly.
    fn root_in_gap(&self, lo: f64, hi: Option<f64>, from_origin: bool) -> Result<f64> {
        // Walk in from each end until the sign is pinned.
        let span = match hi {
            Some(h) => h - lo,
            None => lo.max(1.0),
        };
        let mut a = f64::NAN;
        for j in 1..=60 {
            let x = lo + span * 0.5f64.powi(j);
            match self.psi_real(x) {
                Ok(v) if v < 0.0 => {
                    a = x;
                    break;
                }
                Ok(_) => continue,
                Err(_) => continue,
            }
        }
        if a.is_nan() {
            return Err(Error::NonConvergence(format!(
                "internal error: could not pin negative sign of psi above {lo} ({})",
                if from_origin { "origin gap" } else { "pole gap" }
            )));
        }
        let mut b = f64::NAN;
        match hi {
            Some(h) => {
                for j in 1..=60 {
                    let x = h - (h - lo) * 0.5f64.powi(j);
                    if x <= a {
                        continue;
                    }
                    match self.psi_real(x) {
                        Ok(v) if v > 0.0 => {
                            b = x;
                            break;
                        }
                        _ => continue,
                    }
                }
            }
            None => {
                for j in 0..=60 {
                    let x = lo + span * 2.0f64.powi(j);
                    match self.psi_real(x) {
                        Ok(v) if v > 0.0 => {
                            b = x;
                            break;
                        }
                        _ => continue,
                    }
                }
            }
        }
        if b.is_nan() {
            return Err(Error::NonConvergence(format!(
                "internal error: could not pin positive sign of psi below {:?}",
                hi
            )));
        }

        // Bisection: certain, thanks to interlacing.
        let (mut a, mut b) = (a, b);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if b - a <= 1e-13 * mid.abs().max(1e-300) {
                break;
            }
            match self.psi_real(mid) {
                Ok(v) if v < 0.0 => a = mid,
                Ok(_) => b = mid,
                Err(_) => break,
            }
        }
        // Newton polish to full precision.
        let mut x = 0.5 * (a + b);
        for _ in 0..5 {
            let f = match self.psi_real(x) {
                Ok(v) => v,
                Err(_) => break,
            };
            let d = match self.psi_derivative(Complex64::new(x, 0.0), 1) {
                Ok(v) => v.re,
                Err(_) => break,
            };
            if d == 0.0 {
                break;
            }
            let next = x - f / d;
            if next > a && next < b {
                x = next;
            } else {
                break;
            }
        }
        Ok(x)
    }

    /// All poles of the analytically continued Mellin transform with
    /// |Re s| ≤ c_max, sorted by location.  Refuses (non-simple regime) when
    /// two poles inside the window coincide within the integer-proximity
    /// tolerance 1e-6: residues at such poles are not defined by the simple
    /// (first-order) recurrences.  Models whose collisions all lie outside
    /// the window are served; [`HyperExpLevyModel::validate`] reports the
    /// window-independent regime flag.
    pub fn pole_catalogue(&self, eta: &EtaSpec, c_max: f64) -> Result<Vec<PoleEntry>> {
        if eta.sigma() <= 0.0 {
            return Err(Error::Domain(
                "pole catalogue requires a driving process with sigma > 0".into(),
            ));
        }
        if !(c_max.is_finite() && c_max >= 0.0) {
            return Err(Error::Domain(format!("c_max must be finite and >= 0, got {c_max}")));
        }
        let summary = self.exponents()?;
        let mut entries = Vec::new();
        let mut m = 0u32;
        while m as f64 <= c_max {
            entries.push(PoleEntry {
                location: if m == 0 { 0.0 } else { -(m as f64) },
                kind: PoleKind::NonPositiveInteger { m },
            });
            m += 1;
        }
        for (i, &zeta) in summary.positive_roots.iter().enumerate() {
            let mut j = 1u32;
            while zeta + j as f64 <= c_max {
                entries.push(PoleEntry {
                    location: zeta + j as f64,
                    kind: PoleKind::ShiftedRoot {
                        root_index: i as u32 + 1,
                        shift: j,
                    },
                });
                j += 1;
            }
        }
        for (i, t) in self.neg.iter().enumerate() {
            let mut j = 1u32;
            while t.rate + j as f64 <= c_max {
                entries.push(PoleEntry {
                    location: -(t.rate + j as f64),
                    kind: PoleKind::ShiftedHatRate {
                        family_index: i as u32 + 1,
                        shift: j,
                    },
                });
                j += 1;
            }
        }
        entries.sort_by(|x, y| x.location.partial_cmp(&y.location).unwrap());
        for pair in entries.windows(2) {
            if pair[1].location - pair[0].location < 1e-6 {
                return Err(Error::Unsupported(format!(
                    "pole collision at {} / {}: the simple-poles distinctness assumption \
                     (no two poles congruent modulo the integers) fails in this window",
                    pair[0].location, pair[1].location
                )));
            }
        }
        Ok(entries)
    }

    /// Structural validation report: mean condition, root-count rule,
    /// interlacing, and the simple-pole distinctness conditions.
    ///
    /// ```
    /// use expfun::{HyperExpLevyModel, JumpTerm};
    /// let model = HyperExpLevyModel::new(
    ///     std::f64::consts::SQRT_2,
    ///     -2.0,
    ///     vec![JumpTerm::new(1.0, 2.0)],
    ///     vec![JumpTerm::new(1.0, 2.5)],
    /// )?;
    /// let report = model.validate()?;
    /// assert!(report.passed() && report.simple_poles);
    /// # Ok::<(), expfun::Error>(())
    /// ```
    pub fn validate(&self) -> Result<ValidationReport> {
        let summary = self.exponents()?;
        let mut checks = Vec::new();

        let mean = self.mean();
        checks.push(CheckResult {
            name: "negative mean".into(),
            passed: mean < 0.0,
            required: true,
            detail: format!("E[xi_1] = {mean:.6}"),
        });

        let expect_extra = self.sigma_xi > 0.0 || (self.sigma_xi == 0.0 && self.mu_xi > 0.0);
        let m_rule = if expect_extra {
            self.pos.len() + 1
        } else {
            self.pos.len()
        };
        checks.push(CheckResult {
            name: "root count".into(),
            passed: summary.positive_roots.len() == m_rule && summary.root_count == m_rule,
            required: true,
            detail: format!("M = {} (rule: {})", summary.positive_roots.len(), m_rule),
        });

        let mut interlaced = true;
        for (k, &zeta) in summary.positive_roots.iter().enumerate() {
            let lo = if k == 0 { 0.0 } else { self.pos[k - 1].rate };
            let hi = self.pos.get(k).map_or(f64::INFINITY, |t| t.rate);
            if !(zeta > lo && zeta < hi) {
                interlaced = false;
            }
        }
        checks.push(CheckResult {
            name: "interlacing".into(),
            passed: interlaced,
            required: true,
            detail: format!("roots {:?}", summary.positive_roots),
        });

        let simple = simple_pole_checks(&summary, &self.neg);
        let simple_poles = simple.iter().all(|c| c.passed);
        checks.extend(simple);

        Ok(ValidationReport {
            checks,
            simple_poles,
            summary,
        })
    }
}

/// Distinctness conditions that keep every pole of the continued Mellin
/// transform simple (integer-proximity tolerance 1e-6).
fn simple_pole_checks(summary: &ExponentSummary, neg: &[JumpTerm]) -> Vec<CheckResult> {
    let tol = 1e-6;
    let mut checks = Vec::new();

    let mut ok = true;
    let mut detail = String::from("all pairs clear");
    let roots = &summary.positive_roots;
    'outer: for i in 0..roots.len() {
        for j in 0..i {
            let d = roots[i] - roots[j];
            let frac = (d - d.round()).abs();
            if frac < tol {
                ok = false;
                detail = format!("zeta_{} - zeta_{} = {} is within {tol} of an integer", i + 1, j + 1, d);
                break 'outer;
            }
        }
    }
    checks.push(CheckResult {
        name: "root differences non-integer".into(),
        passed: ok,
        required: false,
        detail,
    });

    let mut ok = true;
    let mut detail = String::from("no rate near a positive integer");
    for t in neg {
        let r = t.rate.round();
        if r >= 1.0 && (t.rate - r).abs() < tol {
            ok = false;
            detail = format!("rho_hat = {} is within {tol} of {}", t.rate, r);
            break;
        }
    }
    checks.push(CheckResult {
        name: "negative rates non-integer".into(),
        passed: ok,
        required: false,
        detail,
    });

    let mut ok = true;
    let mut detail = String::from("all pairs clear");
    'outer2: for i in 0..neg.len() {
        for j in 0..i {
            let d = neg[i].rate - neg[j].rate;
            let frac = (d - d.round()).abs();
            if frac < tol {
                ok = false;
                detail = format!(
                    "rho_hat difference {} is within {tol} of an integer",
                    d
                );
                break 'outer2;
            }
        }
    }
    checks.push(CheckResult {
        name: "negative rate differences non-integer".into(),
        passed: ok,
        required: false,
        detail,
    });

    checks
}

/// Output of [`HyperExpLevyModel::exponents`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentSummary {
    pub rho: ExtendedReal,
    pub rho_hat: ExtendedReal,
    /// Smallest positive zero of ψ (infinite when ψ has none, e.g. the
    /// drift-only process with non-positive drift).
    pub theta: ExtendedReal,
    pub positive_roots: Vec<f64>,
    pub root_count: usize,
}

/// Tag for an entry of the Mellin pole catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoleKind {
    /// s = -m, m ≥ 0.
    NonPositiveInteger { m: u32 },
    /// s = ζ_i + j, j ≥ 1 (`root_index` is 1-based).
    ShiftedRoot { root_index: u32, shift: u32 },
    /// s = -ρ̂_i - j, j ≥ 1 (`family_index` is 1-based).
    ShiftedHatRate { family_index: u32, shift: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoleEntry {
    pub location: f64,
    pub kind: PoleKind,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Required checks gate model validity; advisory ones (the simple-poles
    /// distinctness trio) only restrict which expansions are available.
    pub required: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    /// True when all distinctness conditions hold everywhere, so every pole
    /// of the continued Mellin transform is simple.
    pub simple_poles: bool,
    pub summary: ExponentSummary,
}

impl ValidationReport {
    /// All required (structural) checks passed.  A structurally valid model
    /// may still have `simple_poles == false`, restricting series
    /// expansions to windows free of pole collisions.
    pub fn passed(&self) -> bool {
        self.checks.iter().filter(|c| c.required).all(|c| c.passed)
    }
}

/// Jump mixture of the driving process η (same two-sided hyper-exponential
/// shape as ξ's).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EtaJumps {
    pub pos: Vec<JumpTerm>,
    pub neg: Vec<JumpTerm>,
}

/// The driving process η(t) = μt + σB(t) + jumps.  σ = 0 and jump-free are
/// both allowed at the sampling level; the Mellin/density machinery requires
/// σ > 0 and no jumps (checked where used).
#[derive(Debug, Clone, PartialEq)]
pub struct EtaSpec {
    mu: f64,
    sigma: f64,
    jumps: Option<EtaJumps>,
}

impl EtaSpec {
    pub fn new(mu: f64, sigma: f64, jumps: Option<EtaJumps>) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::InvalidModel(format!("eta.mu must be finite, got {mu}")));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "eta.sigma must be finite and >= 0, got {sigma}"
            )));
        }
        let jumps = match jumps {
            Some(j) => {
                let pos = check_mixture("eta positive", &j.pos)?;
                let neg = check_mixture("eta negative", &j.neg)?;
                if pos.is_empty() && neg.is_empty() {
                    None
                } else {
                    Some(EtaJumps { pos, neg })
                }
            }
            None => None,
        };
        Ok(EtaSpec { mu, sigma, jumps })
    }

    /// Brownian motion with drift: η(t) = μt + σB(t), σ > 0.
    pub fn brownian(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidModel(format!(
                "brownian eta requires sigma > 0, got {sigma}"
            )));
        }
        EtaSpec::new(mu, sigma, None)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn jumps(&self) -> Option<&EtaJumps> {
        self.jumps.as_ref()
    }
    pub fn has_jumps(&self) -> bool {
        self.jumps.is_some()
    }

    /// Total jump intensity of η.
    pub fn lambda(&self) -> f64 {
        match &self.jumps {
            None => 0.0,
            Some(j) => {
                j.pos.iter().map(|t| t.weight / t.rate).sum::<f64>()
                    + j.neg.iter().map(|t| t.weight / t.rate).sum::<f64>()
            }
        }
    }

    /// Drift of the identity-integrand functional: b_η = μ + Σ a/ρ² − Σ â/ρ̂².
    pub fn mean(&self) -> f64 {
        let jump_mean = match &self.jumps {
            None => 0.0,
            Some(j) => {
                j.pos.iter().map(|t| t.weight / (t.rate * t.rate)).sum::<f64>()
                    - j.neg.iter().map(|t| t.weight / (t.rate * t.rate)).sum::<f64>()
            }
        };
        self.mu + jump_mean
    }

    /// Twice-integrated jump tail of η on the requested side.
    pub fn double_tail(&self, side: Side, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        match &self.jumps {
            None => 0.0,
            Some(j) => {
                let terms = match side {
                    Side::Positive => &j.pos,
                    Side::Negative => &j.neg,
                };
                terms
                    .iter()
                    .map(|t| t.weight / (t.rate * t.rate) * (-t.rate * x).exp())
                    .sum()
            }
        }
    }

    /// η with the sign of its path flipped: (μ, jumps) negated, σ kept.
    /// The density of the functional driven by the flipped η is the mirror
    /// image of the original's.
    pub fn flipped(&self) -> EtaSpec {
        EtaSpec {
            mu: -self.mu,
            sigma: self.sigma,
            jumps: self.jumps.as_ref().map(|j| EtaJumps {
                pos: j.neg.clone(),
                neg: j.pos.clone(),
            }),
        }
    }
}
