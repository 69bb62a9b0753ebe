//! Exponents and constants derived from the dimension `N` and the power `α`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Width of the band around each regime boundary inside which the boundary
/// is reported explicitly.
pub const REGIME_GUARD: f64 = 1e-12;

/// Which parameter domain `α` falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// `2/(N-2) < α < α₀`: the perturbation theory applies.
    StrictSubHardy,
    /// `α₀ ≤ α < 4/(N-2)`: singular stationary solutions exist, but the
    /// linearized potential is at or above the Hardy threshold.
    WideStationary,
    Inadmissible,
}

/// Regime boundary lying within [`REGIME_GUARD`] of `α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Boundary {
    /// `α ≈ 2/(N-2)`, where `β` vanishes.
    Lower,
    /// `α ≈ α₀`, where `Λ` vanishes.
    Alpha0,
    /// `α ≈ 4/(N-2)`.
    Upper,
}

/// The full symbol table for one `(N, α)`.
///
/// Quantities that are not real for the given parameters are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Params {
    pub n: u32,
    pub alpha: f64,
    pub beta: f64,
    pub alpha0: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    pub rho: Option<f64>,
    pub eta: Option<f64>,
    pub kappa_hat: Option<f64>,
    pub vartheta: Option<f64>,
    /// Singular amplitude `β^{1/α}`.
    pub b: Option<f64>,
    /// Energy of the homogeneous fixed point.
    pub f_star: Option<f64>,
    pub regime: Regime,
    pub boundary: Option<Boundary>,
}

impl Params {
    pub fn derive(n: u32, alpha: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::domain(format!("dimension N = {n} must be at least 3")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::domain(format!("alpha = {alpha} must be positive and finite")));
        }
        let nf = n as f64;
        // Everything is written in k = (N-2)α and the discriminant
        // D = (4-k)² - 8α(k-2) = 16α²Λ, so that rational inputs give
        // correctly rounded outputs instead of differences of rounded terms.
        let k = (nf - 2.0) * alpha;
        let beta = 2.0 * (k - 2.0) / (alpha * alpha);
        let alpha0 = 4.0 / (nf - 4.0 + 2.0 * (nf - 1.0).sqrt());
        let gamma = (4.0 - k) / alpha;
        let mut disc = (4.0 - k) * (4.0 - k) - 8.0 * alpha * (k - 2.0);
        let mut lambda = disc / (16.0 * alpha * alpha);
        if lambda.abs() <= REGIME_GUARD {
            lambda = 0.0;
            disc = 0.0;
        }
        // Λ ≥ 0 ⇔ β(α+1) ≤ (N-2)²/4, since (N-2)²/4 - β(α+1) = 4Λ.
        let root = if disc >= 0.0 { Some(disc.sqrt()) } else { None };
        let mu1 = root.map(|d| (4.0 - k - d) / (4.0 * alpha));
        let mu2 = root.map(|d| (4.0 - k + d) / (4.0 * alpha));
        let rho = root.map(|d| (4.0 - k - d) / (2.0 * alpha));
        let eta = root.map(|d| (k - d) / (2.0 * alpha));
        let kappa_hat = rho.map(|r| r * alpha.min(1.0));
        let vartheta = root.map(|d| d / (2.0 * alpha));
        let b = if beta >= 0.0 { Some(beta.powf(1.0 / alpha)) } else { None };
        let f_star =
            if beta >= 0.0 { Some(-alpha * beta.powf((alpha + 2.0) / alpha) / (2.0 * (alpha + 2.0))) } else { None };

        let lower = 2.0 / (nf - 2.0);
        let upper = 4.0 / (nf - 2.0);
        let near = |x: f64| (alpha - x).abs() <= REGIME_GUARD * x.max(1.0);
        let boundary = if near(lower) {
            Some(Boundary::Lower)
        } else if near(alpha0) {
            Some(Boundary::Alpha0)
        } else if near(upper) {
            Some(Boundary::Upper)
        } else {
            None
        };
        let regime = match boundary {
            Some(Boundary::Lower) | Some(Boundary::Upper) => Regime::Inadmissible,
            Some(Boundary::Alpha0) => Regime::WideStationary,
            None if alpha > lower && alpha < alpha0 => Regime::StrictSubHardy,
            None if alpha > lower && alpha < upper => Regime::WideStationary,
            None => Regime::Inadmissible,
        };

        Ok(Params {
            n,
            alpha,
            beta,
            alpha0,
            gamma,
            lambda,
            mu1,
            mu2,
            rho,
            eta,
            kappa_hat,
            vartheta,
            b,
            f_star,
            regime,
            boundary,
        })
    }

    pub fn dim(&self) -> f64 {
        self.n as f64
    }

    /// `(N-2)²/4`, the sharp Hardy constant in dimension `N`.
    pub fn hardy_constant(&self) -> f64 {
        let k = self.dim() - 2.0;
        k * k / 4.0
    }

    /// Coefficient `β(α+1)` of the linearized inverse-square potential.
    pub fn potential_coeff(&self) -> f64 {
        self.beta * (self.alpha + 1.0)
    }

    /// `2/α`, the homogeneity exponent of the singular solutions.
    pub fn sigma(&self) -> f64 {
        2.0 / self.alpha
    }

    /// Amplitude `β^{1/α}`, or a domain error when `β < 0`.
    pub fn amplitude(&self) -> Result<f64> {
        self.b.ok_or_else(|| Error::domain("beta^(1/alpha) is not real: beta < 0"))
    }

    /// True when singular stationary solutions exist, i.e. `2/(N-2) < α < 4/(N-2)`.
    pub fn admits_singular(&self) -> bool {
        self.regime != Regime::Inadmissible
    }

    pub fn require_admissible(&self) -> Result<()> {
        if self.admits_singular() {
            Ok(())
        } else {
            Err(Error::domain(format!("alpha = {} lies outside (2/(N-2), 4/(N-2)) for N = {}", self.alpha, self.n)))
        }
    }

    pub fn require_strict(&self) -> Result<()> {
        if self.regime == Regime::StrictSubHardy {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "requires 2/(N-2) < alpha < alpha0 = {}; got alpha = {} ({:?})",
                self.alpha0, self.alpha, self.regime
            )))
        }
    }

    pub fn rho(&self) -> Result<f64> {
        self.rho.ok_or_else(|| Error::domain("rho is not real for these parameters"))
    }

    pub fn eta(&self) -> Result<f64> {
        self.eta.ok_or_else(|| Error::domain("eta is not real for these parameters"))
    }

    /// Nonlinearity `g(u) = |u|^α u`.
    #[inline]
    pub fn g(&self, u: f64) -> f64 {
        u.abs().powf(self.alpha) * u
    }

    /// Derivative `g'(u) = (α+1)|u|^α`.
    #[inline]
    pub fn dg(&self, u: f64) -> f64 {
        (self.alpha + 1.0) * u.abs().powf(self.alpha)
    }
}

/// Roots of `ω² − γω + αβ = 0` in increasing order: the decay rates
/// `(2μ₁, 2μ₂)` of the linearization about the homogeneous fixed point.
pub fn characteristic_roots(p: &Params) -> Result<(f64, f64)> {
    p.require_strict()?;
    let prod = p.alpha * p.beta;
    let disc = (p.gamma * p.gamma - 4.0 * prod).max(0.0);
    let big = 0.5 * (p.gamma + disc.sqrt());
    Ok((prod / big, big))
}
