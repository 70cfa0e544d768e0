//! Analytic continuation of the Mellin transform M(s) = E[I^{s−1}; I > 0]
//! beyond the strip where the sampling estimators converge, together with
//! the quantities read off from its poles: small-x expansion coefficients,
//! the polynomial tail constant, and the full two-sided coefficient tables
//! for hyper-exponential models.
//!
//! The workhorse is the functional equation
//!
//! ```text
//! ψ(s)/s · M(s+1) + μ·M(s) + (σ²/2)(s−1)·M(s−1) = 0
//! ```
//!
//! valid on 0 < Re(s) < θ and, by meromorphic continuation, wherever all
//! three terms make sense.  [`step_up`] and [`step_down`] apply it once;
//! [`MellinExtension::extend`] iterates it symbolically so that any target
//! point is expressed as a two-term linear combination of in-strip points
//! (plus a multiple of the density at zero when an integer landing forces
//! the residue substitution (s−1)·M(s−1) → k(0)).  The combination is then
//! evaluated per Monte Carlo sample in one pass, which yields an exact,
//! correlation-aware standard error instead of a first-order propagation
//! through intermediate estimates.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mc::{self, MellinEstimate, MellinMethod, RealEstimate, SampleSet};
use crate::model::{EtaSpec, ExtendedReal, HyperExpLevyModel, PoleEntry};

/// Distance below which a point counts as sitting on a pole of M, a zero of
/// ψ in a divisor, or an exact-integer landing.
const POLE_TOL: f64 = 1e-6;

/// Real part of M's poles nearest to `re`, over all three families:
/// non-positive integers −m, shifted roots ζ_i + j (j ≥ 1), and shifted
/// negative rates −ρ̂_i − j (j ≥ 1).
fn nearest_real_pole_distance(model: &HyperExpLevyModel, roots: &[f64], re: f64) -> f64 {
    let nonpos = re.round().min(0.0);
    let mut d = (re - nonpos).abs();
    for &z in roots {
        let j = (re - z).round().max(1.0);
        d = d.min((re - z - j).abs());
    }
    for t in model.neg_jumps() {
        let j = (-re - t.rate).round().max(1.0);
        d = d.min((re + t.rate + j).abs());
    }
    d
}

/// Refuses a division by ψ(s) when s lies within tolerance of a zero of ψ
/// (Newton-step distance |ψ/ψ′|), reporting the approximate zero.
fn psi_zero_guard(model: &HyperExpLevyModel, s: Complex64, psi: Complex64) -> Result<()> {
    let d = model.psi_derivative(s, 1)?;
    if d.norm() == 0.0 {
        return Ok(());
    }
    let step = psi / d;
    if step.norm() < POLE_TOL * (1.0 + s.norm()) {
        return Err(Error::PoleProximity(format!(
            "functional-equation step at s = {s} divides by psi within tolerance of its zero near {}",
            s - step
        )));
    }
    Ok(())
}

/// One upward application of the functional equation:
/// M(s+1) = −s·(μ·M(s) + (σ²/2)(s−1)·M(s−1)) / ψ(s).
///
/// Fails within tolerance of a zero or pole of ψ (the equation divides by
/// ψ(s), and ψ itself blows up at its positive and negative rates).
pub fn step_up(
    model: &HyperExpLevyModel,
    eta: &EtaSpec,
    s: Complex64,
    m_s: Complex64,
    m_s_minus_1: Complex64,
) -> Result<Complex64> {
    mc::rb_eta_check(eta)?;
    let psi = model.psi(s)?;
    psi_zero_guard(model, s, psi)?;
    let half_s2 = 0.5 * eta.sigma() * eta.sigma();
    Ok(-s * (eta.mu() * m_s + half_s2 * (s - 1.0) * m_s_minus_1) / psi)
}

/// One downward application of the functional equation:
/// M(s−1) = −(2/σ²)·(ψ(s)/s·M(s+1) + μ·M(s)) / (s−1).
///
/// Singular at s = 1 (the equation then determines the residue of M at 0,
/// not a value).  At s = 0 the ratio ψ(s)/s is taken in the limit ψ′(0).
pub fn step_down(
    model: &HyperExpLevyModel,
    eta: &EtaSpec,
    s: Complex64,
    m_s_plus_1: Complex64,
    m_s: Complex64,
) -> Result<Complex64> {
    mc::rb_eta_check(eta)?;
    if (s - 1.0).norm() <= 1e-9 * (1.0 + s.norm()) {
        return Err(Error::Domain(
            "the down-step is singular at s = 1; the combination (s-1)M(s-1) tends to the density at zero there"
                .into(),
        ));
    }
    let ratio = if s.norm() < 1e-9 {
        model.psi_derivative(Complex64::new(0.0, 0.0), 1)?
    } else {
        model.psi(s)? / s
    };
    let inv_half_s2 = 2.0 / (eta.sigma() * eta.sigma());
    Ok(-inv_half_s2 * (ratio * m_s_plus_1 + eta.mu() * m_s) / (s - 1.0))
}

// ---------------------------------------------------------------------------
// Symbolic chains
// ---------------------------------------------------------------------------

/// Coefficients of a target value over two base points and the density at
/// zero: value = a·M(P₁) + b·M(P₂) + c·k(0).
#[derive(Clone, Copy)]
struct Combo {
    a: Complex64,
    b: Complex64,
    c: Complex64,
}

impl Combo {
    const ZERO: Combo = Combo {
        a: Complex64::new(0.0, 0.0),
        b: Complex64::new(0.0, 0.0),
        c: Complex64::new(0.0, 0.0),
    };

    fn unit_a() -> Combo {
        Combo {
            a: Complex64::new(1.0, 0.0),
            ..Combo::ZERO
        }
    }

    fn unit_b() -> Combo {
        Combo {
            b: Complex64::new(1.0, 0.0),
            ..Combo::ZERO
        }
    }

    fn scale(self, f: Complex64) -> Combo {
        Combo {
            a: f * self.a,
            b: f * self.b,
            c: f * self.c,
        }
    }

    fn add(self, o: Combo) -> Combo {
        Combo {
            a: self.a + o.a,
            b: self.b + o.b,
            c: self.c + o.c,
        }
    }
}

/// A target point resolved into an evaluable linear combination:
/// Σ coeff·M(point) over in-strip points, plus `k0_coeff`·k(0).
struct Resolved {
    terms: Vec<(Complex64, Complex64)>,
    k0_coeff: Complex64,
}

impl Resolved {
    fn scaled(mut self, f: Complex64) -> Resolved {
        for (c, _) in &mut self.terms {
            *c *= f;
        }
        self.k0_coeff *= f;
        self
    }

    fn merge(mut self, other: Resolved) -> Resolved {
        self.terms.extend(other.terms);
        self.k0_coeff += other.k0_coeff;
        self
    }
}

// ---------------------------------------------------------------------------
// The extension object
// ---------------------------------------------------------------------------

/// Controls the anchor-line sweep performed by [`MellinExtension::build`].
#[derive(Debug, Clone, Copy)]
pub struct AnchorOptions {
    /// Imaginary-axis grid spacing.
    pub dt: f64,
    /// Stop once |M| < stop_ratio × stderr on both lines…
    pub stop_ratio: f64,
    /// …for this many consecutive grid points.
    pub quiet_run: usize,
    /// Hard cap on |Im s| for the sweep.
    pub t_cap: f64,
}

impl Default for AnchorOptions {
    fn default() -> Self {
        AnchorOptions {
            dt: 0.05,
            stop_ratio: 10.0,
            quiet_run: 3,
            t_cap: 8.0,
        }
    }
}

/// Real-part window of the pole table stored by [`MellinExtension::build`].
const DEFAULT_POLE_WINDOW: f64 = 2.5;

/// Monte-Carlo-backed meromorphic continuation of the Mellin transform of
/// one (ξ, η) pair.
///
/// Holds two anchor lines Re(s) = s₀ and s₀ + 1 evaluated on a symmetric
/// imaginary grid (with honest, independently computed estimates on both
/// half-lines, so conjugate symmetry is a checkable property rather than a
/// construction), the density at zero, a fitted exponential decay rate for
/// truncation control in inversion, and the pole catalogue of the default
/// window.  [`MellinExtension::extend`] evaluates M anywhere reachable from
/// the convergence strip by integer steps of the functional equation.
#[derive(Debug)]
pub struct MellinExtension {
    model: HyperExpLevyModel,
    eta: EtaSpec,
    samples: Arc<SampleSet>,
    theta: ExtendedReal,
    roots: Vec<f64>,
    s0: f64,
    dt: f64,
    t_max: f64,
    anchor_t: Vec<f64>,
    anchor_lo: Vec<MellinEstimate>,
    anchor_hi: Vec<MellinEstimate>,
    k0: RealEstimate,
    decay_amp: f64,
    decay_rate: f64,
    poles: Option<Vec<PoleEntry>>,
}

impl MellinExtension {
    /// Builds the extension from a sample set generated under `model`.
    ///
    /// `eta` need not be the sampling η: the conditional estimators accept
    /// any Brownian η against the stored (J₁, J₂) draws.  The model must be
    /// the generating one (checked through the stored strip bound θ).
    pub fn build(
        model: &HyperExpLevyModel,
        eta: &EtaSpec,
        samples: Arc<SampleSet>,
        opts: &AnchorOptions,
    ) -> Result<MellinExtension> {
        mc::rb_eta_check(eta)?;
        if !(opts.dt > 0.0 && opts.t_cap > 0.0 && opts.stop_ratio > 0.0) {
            return Err(Error::Domain(
                "anchor options must have positive dt, t_cap and stop_ratio".into(),
            ));
        }
        let summary = model.exponents()?;
        let consistent = match (samples.theta(), summary.theta) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => {
                (a - b).abs() <= 1e-9 * (1.0 + a.abs())
            }
            (ExtendedReal::Infinite, ExtendedReal::Infinite) => true,
            _ => false,
        };
        if !consistent {
            return Err(Error::Domain(
                "sample set was generated under a different model (strip bounds disagree)".into(),
            ));
        }
        let theta = summary.theta;
        let s0 = theta.finite().map(|t| t.min(1.0) / 2.0).unwrap_or(0.5);

        let k0 = mc::estimate_density(&samples, eta, 0.0)?;
        if !(k0.value > 0.0) {
            return Err(Error::NonConvergence(
                "density at zero not resolved by the sample set".into(),
            ));
        }

        // Positive-t sweep of both anchor lines.
        let eval = |t: f64, line: f64| -> Result<MellinEstimate> {
            mc::estimate_mellin(
                &samples,
                eta,
                Complex64::new(line, t),
                MellinMethod::Cylinder,
            )
        };
        let mut pos: Vec<(f64, MellinEstimate, MellinEstimate)> = Vec::new();
        let mut quiet = 0usize;
        let mut k = 0usize;
        loop {
            let t = k as f64 * opts.dt;
            let lo = eval(t, s0)?;
            let hi = eval(t, s0 + 1.0)?;
            let below = lo.value.norm() < opts.stop_ratio * lo.stderr
                && hi.value.norm() < opts.stop_ratio * hi.stderr;
            quiet = if below { quiet + 1 } else { 0 };
            pos.push((t, lo, hi));
            k += 1;
            if quiet >= opts.quiet_run || t >= opts.t_cap {
                break;
            }
        }
        let t_max = pos.last().map(|p| p.0).unwrap_or(0.0);

        // Mirror half-line, evaluated honestly (not by conjugation) so the
        // conjugate-symmetry invariant is a real check on the estimators.
        let mut anchor_t = Vec::with_capacity(2 * pos.len() - 1);
        let mut anchor_lo = Vec::with_capacity(2 * pos.len() - 1);
        let mut anchor_hi = Vec::with_capacity(2 * pos.len() - 1);
        for (t, _, _) in pos.iter().skip(1).rev() {
            anchor_t.push(-t);
            anchor_lo.push(eval(-t, s0)?);
            anchor_hi.push(eval(-t, s0 + 1.0)?);
        }
        for (t, lo, hi) in &pos {
            anchor_t.push(*t);
            anchor_lo.push(*lo);
            anchor_hi.push(*hi);
        }

        // Exponential decay fit ln|M(s0+it)| ≈ ln A − B·t on the outer half
        // of the positive half-line.
        let half = pos.len() / 2;
        let pts: Vec<(f64, f64)> = pos
            .iter()
            .skip(half.max(1) - 1)
            .filter(|(_, lo, _)| lo.value.norm() > 0.0)
            .map(|(t, lo, _)| (*t, lo.value.norm().ln()))
            .collect();
        if pts.len() < 2 {
            return Err(Error::NonConvergence(
                "anchor sweep too short to fit a decay rate".into(),
            ));
        }
        let n = pts.len() as f64;
        let tbar = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let ybar = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx = pts.iter().map(|p| (p.0 - tbar).powi(2)).sum::<f64>();
        let sxy = pts
            .iter()
            .map(|p| (p.0 - tbar) * (p.1 - ybar))
            .sum::<f64>();
        if sxx == 0.0 {
            return Err(Error::NonConvergence(
                "anchor sweep too short to fit a decay rate".into(),
            ));
        }
        let slope = sxy / sxx;
        let decay_rate = -slope;
        if !(decay_rate > 0.0) {
            return Err(Error::NonConvergence(
                "anchor line magnitude does not decay; increase the sample size".into(),
            ));
        }
        let decay_amp = (ybar - slope * tbar).exp();

        // Pole table for the default window; None when the model sits in a
        // non-simple-pole configuration there (coefficient tables refuse,
        // but plain continuation still works).
        let poles = model.pole_catalogue(eta, DEFAULT_POLE_WINDOW).ok();

        Ok(MellinExtension {
            model: model.clone(),
            eta: eta.clone(),
            samples,
            theta,
            roots: summary.positive_roots,
            s0,
            dt: opts.dt,
            t_max,
            anchor_t,
            anchor_lo,
            anchor_hi,
            k0,
            decay_amp,
            decay_rate,
            poles,
        })
    }

    /// Extension with default anchor options.
    pub fn with_defaults(
        model: &HyperExpLevyModel,
        eta: &EtaSpec,
        samples: Arc<SampleSet>,
    ) -> Result<MellinExtension> {
        MellinExtension::build(model, eta, samples, &AnchorOptions::default())
    }

    pub fn model(&self) -> &HyperExpLevyModel {
        &self.model
    }

    pub fn eta(&self) -> &EtaSpec {
        &self.eta
    }

    pub fn samples(&self) -> &Arc<SampleSet> {
        &self.samples
    }

    /// Strip bound θ (smallest positive root of ψ).
    pub fn theta(&self) -> ExtendedReal {
        self.theta
    }

    /// Real part of the lower anchor line.
    pub fn s0(&self) -> f64 {
        self.s0
    }

    /// Largest |Im s| covered by the anchor sweep; continuation refuses
    /// targets beyond it.
    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Imaginary grid of the anchor lines (symmetric, ascending).
    pub fn anchor_grid(&self) -> &[f64] {
        &self.anchor_t
    }

    /// Estimates along Re(s) = s₀, aligned with [`Self::anchor_grid`].
    pub fn anchors_low(&self) -> &[MellinEstimate] {
        &self.anchor_lo
    }

    /// Estimates along Re(s) = s₀ + 1, aligned with [`Self::anchor_grid`].
    pub fn anchors_high(&self) -> &[MellinEstimate] {
        &self.anchor_hi
    }

    /// Density of I at zero with its standard error.
    pub fn k0(&self) -> RealEstimate {
        self.k0
    }

    /// Fitted (amplitude, rate) of |M(s₀+it)| ≈ A·e^{−B·t}.
    pub fn decay(&self) -> (f64, f64) {
        (self.decay_amp, self.decay_rate)
    }

    /// Pole catalogue of the default window, or None when the model is in a
    /// non-simple-pole configuration there.
    pub fn poles(&self) -> Option<&[PoleEntry]> {
        self.poles.as_deref()
    }

    fn upper(&self) -> f64 {
        self.theta.finite().map(|t| 1.0 + t).unwrap_or(f64::INFINITY)
    }

    /// Distance from s to the nearest pole of M.
    fn pole_distance(&self, s: Complex64) -> f64 {
        let real_d = nearest_real_pole_distance(&self.model, &self.roots, s.re);
        s.im.hypot(real_d)
    }

    /// Expresses M(s) as an evaluable combination of in-strip points plus a
    /// multiple of k(0).
    fn resolve(&self, s: Complex64) -> Result<Resolved> {
        if !(s.re.is_finite() && s.im.is_finite()) {
            return Err(Error::Domain(format!("non-finite Mellin argument {s}")));
        }
        if s.im.abs() > self.t_max + 0.5 * self.dt {
            return Err(Error::OutOfRange(format!(
                "|Im s| = {} exceeds the anchor band {}; estimates there are noise-dominated",
                s.im.abs(),
                self.t_max
            )));
        }
        let d = self.pole_distance(s);
        if d <= POLE_TOL {
            return Err(Error::PoleProximity(format!(
                "s = {s} lies within {d:.1e} of a pole of the Mellin transform"
            )));
        }
        let upper = self.upper();
        if s.re > -1.0 && s.re < upper {
            return Ok(Resolved {
                terms: vec![(Complex64::new(1.0, 0.0), s)],
                k0_coeff: Complex64::new(0.0, 0.0),
            });
        }
        if s.re >= upper {
            self.resolve_up(s, upper)
        } else {
            self.resolve_down(s, upper)
        }
    }

    /// Upward chain: base pair (r, r−1) with r a unit-translate of Re(s)
    /// placed inside the strip, stepped up to the target.
    fn resolve_up(&self, s: Complex64, upper: f64) -> Result<Resolved> {
        let re = s.re;
        let mut n = (re - (upper - 0.25)).ceil().max(1.0);
        let mut r = re - n;
        if r <= 0.25 && r + 1.0 < upper - 1e-9 {
            n -= 1.0;
            r += 1.0;
        }
        if r <= POLE_TOL {
            return Err(Error::PoleProximity(format!(
                "no usable base pair for continuation to {s}: the base lands on the origin pole"
            )));
        }
        let steps = n as usize;
        let substitute = (r - 1.0).abs() <= POLE_TOL && s.im.abs() <= POLE_TOL;
        let p1 = Complex64::new(r, s.im);
        let p2 = Complex64::new(r - 1.0, s.im);
        let half_s2 = 0.5 * self.eta.sigma() * self.eta.sigma();
        let mu = self.eta.mu();

        let mut prev = Combo::unit_b();
        let mut cur = Combo::unit_a();
        for k in 0..steps {
            let sk = Complex64::new(r + k as f64, s.im);
            let psi = self.model.psi(sk)?;
            psi_zero_guard(&self.model, sk, psi)?;
            let f = -sk * mu / psi;
            let next = if k == 0 && substitute {
                // (s−1)·M(s−1) → k(0) at the integer landing.
                let mut v = cur.scale(f);
                v.c += -sk * half_s2 / psi;
                v
            } else {
                let g = -sk * half_s2 * (sk - 1.0) / psi;
                cur.scale(f).add(prev.scale(g))
            };
            if k + 1 < steps {
                let out = Complex64::new(r + (k + 1) as f64, s.im);
                if self.pole_distance(out) <= POLE_TOL {
                    return Err(Error::PoleProximity(format!(
                        "continuation path to {s} passes within tolerance of the pole near {out}"
                    )));
                }
            }
            prev = cur;
            cur = next;
        }
        let mut terms = Vec::new();
        if cur.a.norm() > 0.0 {
            terms.push((cur.a, p1));
        }
        if cur.b.norm() > 0.0 && !substitute {
            terms.push((cur.b, p2));
        }
        Ok(Resolved {
            terms,
            k0_coeff: cur.c,
        })
    }

    /// Downward chain: base pair (r, r+1) inside the strip, stepped down.
    fn resolve_down(&self, s: Complex64, upper: f64) -> Result<Resolved> {
        let re = s.re;
        let mut n = (-0.75 - re).ceil().max(1.0);
        let mut r = re + n;
        if r + 1.0 >= upper - 1e-9 {
            n -= 1.0;
            r -= 1.0;
            if n < 1.0 || r <= -1.0 + POLE_TOL {
                return Err(Error::PoleProximity(format!(
                    "no usable base pair for continuation to {s} inside the narrow strip"
                )));
            }
        }
        if r.abs() <= POLE_TOL {
            return Err(Error::PoleProximity(format!(
                "no usable base pair for continuation to {s}: the base lands on the origin pole"
            )));
        }
        let steps = n as usize;
        let p1 = Complex64::new(r, s.im);
        let p2 = Complex64::new(r + 1.0, s.im);
        let inv_half_s2 = 2.0 / (self.eta.sigma() * self.eta.sigma());
        let mu = self.eta.mu();

        let mut hi = Combo::unit_b();
        let mut cur = Combo::unit_a();
        for k in 0..steps {
            let sk = Complex64::new(r - k as f64, s.im);
            let psi = self.model.psi(sk)?;
            let p = -inv_half_s2 * psi / (sk * (sk - 1.0));
            let q = -inv_half_s2 * mu / (sk - 1.0);
            let next = hi.scale(p).add(cur.scale(q));
            if k + 1 < steps {
                let out = Complex64::new(r - (k + 1) as f64, s.im);
                if self.pole_distance(out) <= POLE_TOL {
                    return Err(Error::PoleProximity(format!(
                        "continuation path to {s} passes within tolerance of the pole near {out}"
                    )));
                }
            }
            hi = cur;
            cur = next;
        }
        let mut terms = Vec::new();
        if cur.a.norm() > 0.0 {
            terms.push((cur.a, p1));
        }
        if cur.b.norm() > 0.0 {
            terms.push((cur.b, p2));
        }
        Ok(Resolved {
            terms,
            k0_coeff: cur.c,
        })
    }

    /// Evaluates a resolved combination against the sample set.
    fn finish(&self, r: Resolved) -> Result<MellinEstimate> {
        let base = if r.terms.is_empty() {
            MellinEstimate {
                value: Complex64::new(0.0, 0.0),
                stderr: 0.0,
            }
        } else {
            mc::estimate_mellin_combination(&self.samples, &self.eta, &r.terms)?
        };
        let value = base.value + r.k0_coeff * self.k0.value;
        let stderr = base
            .stderr
            .hypot(r.k0_coeff.norm() * self.k0.stderr);
        if !(value.re.is_finite() && value.im.is_finite() && stderr.is_finite()) {
            return Err(Error::NonConvergence(
                "continued Mellin value is not finite".into(),
            ));
        }
        Ok(MellinEstimate { value, stderr })
    }

    /// Continued Mellin value M(s) with its standard error.
    ///
    /// Inside the strip −1 < Re(s) < 1+θ this is the direct conditional
    /// estimate; outside, the functional equation is iterated symbolically
    /// and the resulting combination evaluated per sample.  Refused within
    /// tolerance of a pole, beyond the anchor band in |Im s|, and when the
    /// stepping path crosses a zero or pole of ψ.
    pub fn extend(&self, s: Complex64) -> Result<MellinEstimate> {
        let r = self.resolve(s)?;
        self.finish(r)
    }

    /// Residual of the functional equation at s, evaluated as one per-sample
    /// combination over {s−1, s, s+1} (exact correlated standard error).
    /// Zero in expectation wherever all three points are estimable.
    pub fn equation_residual(&self, s: Complex64) -> Result<MellinEstimate> {
        let psi = self.model.psi(s)?;
        let half_s2 = 0.5 * self.eta.sigma() * self.eta.sigma();
        let terms = [
            (psi / s, s + 1.0),
            (Complex64::new(self.eta.mu(), 0.0), s),
            (half_s2 * (s - 1.0), s - 1.0),
        ];
        mc::estimate_mellin_combination(&self.samples, &self.eta, &terms)
    }

    /// First shifted-pole coefficient attached to the root ζ:
    /// (1/ψ′(ζ))·(μ·M(ζ) + (σ²/2)(ζ−1)·M(ζ−1)), with the residue
    /// substitution (ζ−1)·M(ζ−1) → k(0) at ζ = 1.  Evaluated as a single
    /// per-sample combination for an exact standard error.
    fn first_shift_coeff(&self, zeta: f64) -> Result<RealEstimate> {
        let z = Complex64::new(zeta, 0.0);
        let inv = {
            let d = self.model.psi_derivative(z, 1)?;
            Complex64::new(1.0, 0.0) / d
        };
        let half_s2 = 0.5 * self.eta.sigma() * self.eta.sigma();
        let mut parts = self
            .resolve(z)?
            .scaled(inv * self.eta.mu());
        if (zeta - 1.0).abs() <= POLE_TOL {
            parts.k0_coeff += inv * half_s2;
        } else {
            let low = self
                .resolve(z - 1.0)?
                .scaled(inv * half_s2 * (z - 1.0));
            parts = parts.merge(low);
        }
        let est = self.finish(parts)?;
        Ok(RealEstimate {
            value: est.value.re,
            stderr: est.stderr,
        })
    }
}

// ---------------------------------------------------------------------------
// Small-x coefficients
// ---------------------------------------------------------------------------

/// Taylor coefficients b₀ … b_{count−1} of the density at 0⁺ (the density
/// is Σ bₙ xⁿ/n! + o(x^{count−1})), generated from b₀ = k(0) by
/// b_{n+1} = (2/σ²)(μ·bₙ − ψ(−n)·b_{n−1}).
///
/// Indices must stay below 1 + ρ̂ (the smallest negative-jump rate bounds
/// the smoothness of the density at zero); larger requests are refused.
pub fn small_x_coeffs(
    model: &HyperExpLevyModel,
    eta: &EtaSpec,
    k0: f64,
    count: usize,
) -> Result<Vec<f64>> {
    mc::rb_eta_check(eta)?;
    if count == 0 {
        return Err(Error::Domain("requested zero coefficients".into()));
    }
    let summary = model.exponents()?;
    if let Some(rho_hat) = summary.rho_hat.finite() {
        let top = (count - 1) as f64;
        if top >= 1.0 + rho_hat {
            return Err(Error::OutOfRange(format!(
                "coefficient index {top} is outside the smoothness window; indices must stay below 1 + rho_hat = {}",
                1.0 + rho_hat
            )));
        }
    }
    let mu = eta.mu();
    let inv_half_s2 = 2.0 / (eta.sigma() * eta.sigma());
    let mut b = Vec::with_capacity(count);
    b.push(k0);
    if count >= 2 {
        b.push(inv_half_s2 * mu * k0);
    }
    for n in 1..count.saturating_sub(1) {
        let psi_n = model.psi_real(-(n as f64))?;
        let next = inv_half_s2 * (mu * b[n] - psi_n * b[n - 1]);
        b.push(next);
    }
    Ok(b)
}

// ---------------------------------------------------------------------------
// Tail constant
// ---------------------------------------------------------------------------

/// Sharpness of the polynomial tail estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailOrder {
    /// P(I > x) = C·x^{−θ} + o(x^{−θ}) with C > 0.
    Polynomial,
    /// P(I > x) = o(x^{−θ}) (boundary case, or no positive ψ-root at all);
    /// the constant is reported as 0.
    FasterThanPolynomial,
}

/// Leading tail behaviour: P(I > x) ≈ c·x^{−θ}, with the residue
/// r_theta = −θ·c of the continued transform at 1 + θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailConstant {
    pub r_theta: f64,
    pub c: f64,
    pub c_stderr: f64,
    pub order: TailOrder,
}

/// Dispatch between the sharp polynomial tail and the degenerate boundary
/// cases, from the strip bound θ, the smallest positive jump rate ρ, and
/// ψ(θ).  θ < ρ (the generic case; automatic whenever ψ has a positive
/// root below the first positive rate) and the boundary case θ = ρ with
/// ψ(θ) = 0 give the polynomial order; θ = ρ with ψ(θ) < 0 does not.
fn classify_tail(theta: ExtendedReal, rho: ExtendedReal, psi_at_theta: f64) -> TailOrder {
    let th = match theta.finite() {
        Some(t) => t,
        None => return TailOrder::FasterThanPolynomial,
    };
    match rho.finite() {
        None => TailOrder::Polynomial,
        Some(r) => {
            if th < r - 1e-12 {
                TailOrder::Polynomial
            } else if psi_at_theta < 0.0 {
                TailOrder::FasterThanPolynomial
            } else {
                TailOrder::Polynomial
            }
        }
    }
}

/// Computes the polynomial tail constant from the continued transform:
/// c = (1/ψ′(θ))·(μ·M(θ) + (σ²/2)(θ−1)·M(θ−1)), with the residue
/// substitution (θ−1)·M(θ−1) → k(0) at θ = 1, and r_theta = −θ·c the
/// residue of M at 1 + θ.
///
/// For a process with no positive ψ-root the tail decays faster than any
/// power and the constant is zero.  For μ ≤ 0 the constant is provably
/// positive; a non-positive estimate is reported as a convergence failure.
pub fn tail_constant(ext: &MellinExtension) -> Result<TailConstant> {
    let summary = ext.model().exponents()?;
    let theta = match ext.theta().finite() {
        Some(t) => t,
        None => {
            return Ok(TailConstant {
                r_theta: 0.0,
                c: 0.0,
                c_stderr: 0.0,
                order: TailOrder::FasterThanPolynomial,
            });
        }
    };
    // θ is a root of ψ by construction, so the boundary dispatch sees
    // ψ(θ) = 0; the non-polynomial branch is kept for the classifier.
    let order = classify_tail(ext.theta(), summary.rho, 0.0);
    if order == TailOrder::FasterThanPolynomial {
        return Ok(TailConstant {
            r_theta: 0.0,
            c: 0.0,
            c_stderr: 0.0,
            order,
        });
    }
    let est = ext.first_shift_coeff(theta)?;
    if ext.eta().mu() <= 0.0 && !(est.value > 0.0) {
        return Err(Error::NonConvergence(format!(
            "tail constant estimate {} is not positive; the sample set is too small to resolve it",
            est.value
        )));
    }
    Ok(TailConstant {
        r_theta: -theta * est.value,
        c: est.value,
        c_stderr: est.stderr,
        order,
    })
}

// ---------------------------------------------------------------------------
// Hyper-exponential coefficient tables
// ---------------------------------------------------------------------------

/// Two-sided expansion coefficients of the density of I for a
/// hyper-exponential model, read off the poles of the continued Mellin
/// transform within a window |Re s| ≤ c_max.
///
/// Small x:  k(x) = Σ_n (bₙ/n!)·xⁿ + Σ_{i,j} b_{i,j}·x^{j+ρ̂ᵢ}/(1+ρ̂ᵢ)_j.
/// Large x:  k(x) = Σ_{i,j} c_{i,j}·(ζᵢ)_j·x^{−j−ζᵢ}.
///
/// `b_ij` is keyed by (negative-family index, shift j ≥ 1), `c_ij` by
/// (root index, shift j ≥ 1), both 1-based, matching the pole catalogue.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionCoeffs {
    /// b₀ … b_{⌊c_max⌋}; b₀ = k(0).
    pub b_n: Vec<f64>,
    pub b_ij: BTreeMap<(u32, u32), f64>,
    pub c_ij: BTreeMap<(u32, u32), f64>,
    pub k0: f64,
    pub theta: ExtendedReal,
    pub zeta: Vec<f64>,
    pub rho_hat: Vec<f64>,
    pub c_max: f64,
}

/// Computes the coefficient tables for all poles with |Re| ≤ c_max.
///
/// Requires the simple-pole configuration in the window (no two poles of
/// the continued transform within tolerance of each other); the pole
/// catalogue check refuses otherwise.  Seeds: c_{i,1} and b_{i,1} come
/// from continued Mellin values, deeper shifts from the one-term
/// recurrences
///
/// ```text
/// c_{i,j+1} = −(μ·c_{i,j} + (σ²/2)·c_{i,j−1}) / ψ(j+ζᵢ)
/// b_{i,j+1} = (2/σ²)·(μ·b_{i,j} − ψ(−j−ρ̂ᵢ)·b_{i,j−1})
/// ```
///
/// with c_{i,0} = b_{i,0} = 0.  A pole of ψ at j+ζᵢ sends that c to its
/// limit value 0.
pub fn hyperexp_coeffs(ext: &MellinExtension, c_max: f64) -> Result<ExpansionCoeffs> {
    let model = ext.model();
    let eta = ext.eta();
    // Gatekeeper: validates the window and refuses non-simple configurations.
    model.pole_catalogue(eta, c_max)?;
    let summary = model.exponents()?;
    let k0 = ext.k0().value;
    let mu = eta.mu();
    let half_s2 = 0.5 * eta.sigma() * eta.sigma();
    let inv_half_s2 = 1.0 / half_s2;

    // Integer-pole chain b_n.  In the simple-pole window the recurrence is
    // valid for every n (ψ(−n) never meets a pole there: an integer rate
    // collision would already have been refused by the catalogue).
    let n_max = c_max.floor() as usize;
    let mut b_n = Vec::with_capacity(n_max + 1);
    b_n.push(k0);
    if n_max >= 1 {
        b_n.push(inv_half_s2 * mu * k0);
    }
    for n in 1..n_max {
        let psi_n = model.psi_real(-(n as f64))?;
        let next = inv_half_s2 * (mu * b_n[n] - psi_n * b_n[n - 1]);
        b_n.push(next);
    }

    // Large-x table: one family per positive root of ψ.
    let mut c_ij = BTreeMap::new();
    for (idx, &zeta) in summary.positive_roots.iter().enumerate() {
        let i = (idx + 1) as u32;
        if zeta + 1.0 > c_max {
            continue;
        }
        let c1 = ext.first_shift_coeff(zeta)?.value;
        c_ij.insert((i, 1), c1);
        let mut prev = 0.0; // c_{i,0}
        let mut cur = c1;
        let mut j = 1u32;
        while zeta + (j + 1) as f64 <= c_max {
            let arg = j as f64 + zeta;
            let next = match model.psi_real(arg) {
                Ok(psi) => -(mu * cur + half_s2 * prev) / psi,
                // ψ pole at j+ζ: the coefficient's limit is zero.
                Err(Error::PoleProximity(_)) => 0.0,
                Err(e) => return Err(e),
            };
            j += 1;
            c_ij.insert((i, j), next);
            prev = cur;
            cur = next;
        }
    }

    // Small-x fractional table: one family per negative jump component.
    let mut b_ij = BTreeMap::new();
    for (idx, term) in model.neg_jumps().iter().enumerate() {
        let i = (idx + 1) as u32;
        let rho_hat = term.rate;
        if rho_hat + 1.0 > c_max {
            continue;
        }
        let m_val = ext.extend(Complex64::new(1.0 - rho_hat, 0.0))?.value.re;
        let b1 = -inv_half_s2 * (term.weight / rho_hat) * m_val;
        b_ij.insert((i, 1), b1);
        let mut prev = 0.0; // b_{i,0}
        let mut cur = b1;
        let mut j = 1u32;
        while rho_hat + (j + 1) as f64 <= c_max {
            let psi_n = model.psi_real(-(j as f64) - rho_hat)?;
            let next = inv_half_s2 * (mu * cur - psi_n * prev);
            j += 1;
            b_ij.insert((i, j), next);
            prev = cur;
            cur = next;
        }
    }

    Ok(ExpansionCoeffs {
        b_n,
        b_ij,
        c_ij,
        k0,
        theta: summary.theta,
        zeta: summary.positive_roots,
        rho_hat: model.neg_jumps().iter().map(|t| t.rate).collect(),
        c_max,
    })
}
