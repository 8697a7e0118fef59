//! Incremental elasto-plastic model for gas hydrate-bearing sand.
//!
//! Linear isotropic elasticity, a Drucker-Prager yield surface
//! `F = q + alpha p - c`, a non-associative potential `G = q + beta p`, and
//! strain/rate dependent evolution of dilatancy `beta` and residual friction
//! `alpha_res` (with `alpha = beta + alpha_res`). Stresses follow the
//! tension-positive convention, so compression gives negative `p`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::SymTensor2;

const SQRT_3_2: f64 = 1.224_744_871_391_589;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstitutiveError {
    #[error("invalid material parameter: {0}")]
    InvalidParameter(String),
    #[error("return mapping did not converge after {iterations} iterations and {depth} substep levels (residual {residual:.3e} Pa)")]
    ReturnMapDivergence {
        iterations: usize,
        depth: usize,
        residual: f64,
    },
}

/// Elastic constants of the sand/hydrate mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticParams {
    /// Young's modulus of the sand skeleton at the working confining stress (Pa).
    pub youngs_sand: f64,
    /// Young's modulus of the hydrate phase (Pa).
    pub youngs_hydrate: f64,
    /// Saturation exponent `m`.
    pub saturation_exponent: f64,
    pub poisson: f64,
    /// Hydrate saturation in `[0, 1]`.
    pub hydrate_saturation: f64,
}

impl Default for ElasticParams {
    fn default() -> Self {
        ElasticParams {
            youngs_sand: 200.0e6,
            youngs_hydrate: 1.0e9,
            saturation_exponent: 1.0,
            poisson: 0.25,
            hydrate_saturation: 0.25,
        }
    }
}

impl ElasticParams {
    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        let bad = |msg: &str| Err(ConstitutiveError::InvalidParameter(msg.to_string()));
        if !(self.youngs_sand > 0.0 && self.youngs_sand.is_finite()) {
            return bad("sand Young's modulus must be positive");
        }
        if !(self.youngs_hydrate >= 0.0 && self.youngs_hydrate.is_finite()) {
            return bad("hydrate Young's modulus must be non-negative");
        }
        if !(self.poisson > 0.0 && self.poisson < 0.5) {
            return bad("Poisson's ratio must lie in (0, 0.5)");
        }
        if !(0.0..=1.0).contains(&self.hydrate_saturation) {
            return bad("hydrate saturation must lie in [0, 1]");
        }
        if !self.saturation_exponent.is_finite() {
            return bad("saturation exponent must be finite");
        }
        Ok(())
    }
}

/// `E = E_s + S_h^m E_h`. The confining-stress dependence of `E_s` is folded
/// into the configured sand modulus, so `_sigma_c` does not enter.
pub fn youngs_modulus(ep: &ElasticParams, _sigma_c: f64) -> f64 {
    ep.youngs_sand + ep.hydrate_saturation.powf(ep.saturation_exponent) * ep.youngs_hydrate
}

/// Isotropic stiffness `C = L1 I (x) I + 2 L2 I4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticStiffness {
    /// First Lame coefficient `L1`.
    pub lame: f64,
    /// Shear modulus `L2`.
    pub shear: f64,
}

impl ElasticStiffness {
    pub fn new(youngs: f64, poisson: f64) -> Result<Self, ConstitutiveError> {
        if !(youngs > 0.0 && youngs.is_finite()) {
            return Err(ConstitutiveError::InvalidParameter(format!(
                "Young's modulus must be positive, got {youngs}"
            )));
        }
        if !(poisson > -1.0 && poisson < 0.5) {
            return Err(ConstitutiveError::InvalidParameter(format!(
                "Poisson's ratio must lie below 0.5, got {poisson}"
            )));
        }
        Ok(ElasticStiffness {
            lame: poisson * youngs / ((1.0 + poisson) * (1.0 - 2.0 * poisson)),
            shear: youngs / (2.0 * (1.0 + poisson)),
        })
    }

    pub fn bulk(&self) -> f64 {
        self.lame + 2.0 * self.shear / 3.0
    }

    /// `C : e`
    pub fn apply(&self, e: &SymTensor2) -> SymTensor2 {
        SymTensor2::isotropic(self.lame * e.trace()) + e.scale(2.0 * self.shear)
    }

    /// `C^-1 : s`
    pub fn apply_inverse(&self, s: &SymTensor2) -> SymTensor2 {
        let k = self.bulk();
        SymTensor2::isotropic(s.trace() / (9.0 * k)) + s.dev().scale(0.5 / self.shear)
    }
}

pub fn elastic_stiffness(youngs: f64, poisson: f64) -> Result<ElasticStiffness, ConstitutiveError> {
    ElasticStiffness::new(youngs, poisson)
}

/// The eight inferred plasticity parameters, in their fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlasticParams {
    /// Cohesion `c` (Pa).
    pub cohesion: f64,
    /// Initial residual friction `alpha_res^l`.
    pub alpha_res_initial: f64,
    /// Residual friction increase `delta alpha_res`.
    pub delta_alpha_res: f64,
    /// Reference plastic strain rate `lambda_dot*`.
    pub ref_plastic_rate: f64,
    /// Friction exponent `m_alpha`.
    pub friction_exponent: f64,
    /// Peak dilatancy `beta*`.
    pub peak_dilatancy: f64,
    /// Plastic shear strain at peak dilatancy `lambda*`.
    pub peak_plastic_strain: f64,
    /// Dilatancy exponent `m_beta`.
    pub dilatancy_exponent: f64,
}

impl PlasticParams {
    pub const DIM: usize = 8;
    pub const NAMES: [&'static str; 8] = [
        "c",
        "alpha_res_l",
        "delta_alpha_res",
        "lambda_dot_star",
        "m_alpha",
        "beta_star",
        "lambda_star",
        "m_beta",
    ];

    pub fn from_array(v: [f64; 8]) -> Self {
        PlasticParams {
            cohesion: v[0],
            alpha_res_initial: v[1],
            delta_alpha_res: v[2],
            ref_plastic_rate: v[3],
            friction_exponent: v[4],
            peak_dilatancy: v[5],
            peak_plastic_strain: v[6],
            dilatancy_exponent: v[7],
        }
    }

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.cohesion,
            self.alpha_res_initial,
            self.delta_alpha_res,
            self.ref_plastic_rate,
            self.friction_exponent,
            self.peak_dilatancy,
            self.peak_plastic_strain,
            self.dilatancy_exponent,
        ]
    }

    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        for (name, v) in Self::NAMES.iter().zip(self.to_array()) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConstitutiveError::InvalidParameter(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `p = tr(sigma)/3`, `q = sqrt(3/2) |dev sigma|`.
pub fn stress_invariants(sigma: &SymTensor2) -> (f64, f64) {
    (sigma.trace() / 3.0, SQRT_3_2 * sigma.dev().norm())
}

/// `eps_v = tr(eps)`, `eps_s = sqrt(2/3) |dev eps|`.
pub fn strain_rate_invariants(eps_dot: &SymTensor2) -> (f64, f64) {
    (eps_dot.trace(), eps_dot.dev().norm() / SQRT_3_2)
}

pub fn yield_value(p: f64, q: f64, alpha: f64, c: f64) -> f64 {
    q + alpha * p - c
}

/// Current values of the evolving material properties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hardening {
    pub alpha: f64,
    pub beta: f64,
    pub alpha_res: f64,
    pub cohesion: f64,
}

/// Partial derivatives of `alpha` and `beta` with respect to the accumulated
/// plastic shear strain and its rate.
#[derive(Debug, Clone, Copy)]
struct HardeningSlopes {
    dbeta_dlambda: f64,
    dalpha_dlambda: f64,
    dalpha_drate: f64,
}

/// Evaluates the dilatancy and friction evolution laws. A zero rate takes the
/// rate factor `(1 + 1/rate)^-1` at its limit 0.
pub fn evolve_hardening(lambda_acc: f64, lambda_dot: f64, pp: &PlasticParams) -> Hardening {
    hardening_with_slopes(lambda_acc, lambda_dot, pp).0
}

fn hardening_with_slopes(
    lambda_acc: f64,
    lambda_dot: f64,
    pp: &PlasticParams,
) -> (Hardening, HardeningSlopes) {
    let lbar = lambda_acc.max(0.0) / pp.peak_plastic_strain;
    let rate = lambda_dot.max(0.0) / pp.ref_plastic_rate;

    let lbar_mb = lbar.powf(pp.dilatancy_exponent);
    let decay = (1.0 - lbar_mb).exp();
    let beta = pp.peak_dilatancy * lbar * decay;
    let dbeta_dlambda =
        pp.peak_dilatancy / pp.peak_plastic_strain * decay * (1.0 - pp.dilatancy_exponent * lbar_mb);

    // rate / (1 + rate) is the rate factor written without the 1/rate pole
    let rate_factor = rate / (1.0 + rate);
    let lbar_ma = lbar.powf(pp.friction_exponent);
    let alpha_res = pp.alpha_res_initial + pp.delta_alpha_res * rate_factor * lbar_ma;
    let dres_dlambda = if lbar > 0.0 {
        pp.delta_alpha_res * rate_factor * pp.friction_exponent * lbar_ma / lbar
            / pp.peak_plastic_strain
    } else if pp.friction_exponent >= 1.0 && rate_factor > 0.0 {
        if pp.friction_exponent == 1.0 {
            pp.delta_alpha_res * rate_factor / pp.peak_plastic_strain
        } else {
            0.0
        }
    } else if rate_factor > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let dres_drate =
        pp.delta_alpha_res * lbar_ma / ((1.0 + rate) * (1.0 + rate)) / pp.ref_plastic_rate;

    (
        Hardening {
            alpha: beta + alpha_res,
            beta,
            alpha_res,
            cohesion: pp.cohesion,
        },
        HardeningSlopes {
            dbeta_dlambda,
            dalpha_dlambda: dbeta_dlambda + dres_dlambda,
            dalpha_drate: dres_drate,
        },
    )
}

/// State carried by a material point between increments.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MaterialState {
    pub sigma: SymTensor2,
    pub eps_p: SymTensor2,
    /// Accumulated plastic shear strain.
    pub lambda_acc: f64,
    /// Plastic multiplier rate of the last increment, `delta_lambda / dt`,
    /// with `dt` counted in reference steps (see
    /// [`ReturnMapSettings::reference_step`]).
    pub lambda_dot: f64,
}

impl MaterialState {
    pub fn with_stress(sigma: SymTensor2) -> Self {
        MaterialState {
            sigma,
            ..Default::default()
        }
    }

    pub fn hardening(&self, pp: &PlasticParams) -> Hardening {
        evolve_hardening(self.lambda_acc, self.lambda_dot, pp)
    }

    pub fn yield_value(&self, pp: &PlasticParams) -> f64 {
        let (p, q) = stress_invariants(&self.sigma);
        let h = self.hardening(pp);
        yield_value(p, q, h.alpha, h.cohesion)
    }
}

/// Controls for the local return-mapping solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReturnMapSettings {
    /// Admissible yield-function value after an update, relative to cohesion.
    pub tol_yield_rel: f64,
    /// Newton convergence tolerance on the consistency residual, relative to
    /// the trial stress magnitude.
    pub newton_rtol: f64,
    pub max_iter: usize,
    pub max_substep_depth: usize,
    /// Time unit (s) in which the plastic multiplier rate is measured before it
    /// is compared with `lambda_dot*`.
    pub reference_step: f64,
}

impl Default for ReturnMapSettings {
    fn default() -> Self {
        ReturnMapSettings {
            tol_yield_rel: 1e-6,
            newton_rtol: 1e-10,
            max_iter: 50,
            max_substep_depth: 10,
            reference_step: 10.0,
        }
    }
}

impl ReturnMapSettings {
    pub fn tol_yield(&self, pp: &PlasticParams) -> f64 {
        self.tol_yield_rel * pp.cohesion
    }
}

/// Material point bundling elastic and plastic parameters with the derived
/// stiffness.
#[derive(Debug, Clone, Copy)]
pub struct HydrateSandModel {
    pub elastic: ElasticParams,
    pub plastic: PlasticParams,
    pub stiffness: ElasticStiffness,
    pub settings: ReturnMapSettings,
}

/// Result of one successful local solve.
struct Returned {
    state: MaterialState,
}

impl HydrateSandModel {
    pub fn new(
        elastic: ElasticParams,
        plastic: PlasticParams,
        sigma_c: f64,
        settings: ReturnMapSettings,
    ) -> Result<Self, ConstitutiveError> {
        elastic.validate()?;
        plastic.validate()?;
        let stiffness = ElasticStiffness::new(youngs_modulus(&elastic, sigma_c), elastic.poisson)?;
        Ok(HydrateSandModel {
            elastic,
            plastic,
            stiffness,
            settings,
        })
    }

    pub fn tol_yield(&self) -> f64 {
        self.settings.tol_yield(&self.plastic)
    }

    /// Advances `state` by the total strain increment `d_eps` over `dt`.
    pub fn integrate_step(
        &self,
        state: &MaterialState,
        d_eps: &SymTensor2,
        dt: f64,
    ) -> Result<MaterialState, ConstitutiveError> {
        if !(dt > 0.0 && self.settings.reference_step > 0.0) {
            return Err(ConstitutiveError::InvalidParameter(format!(
                "time step must be positive, got {dt}"
            )));
        }
        self.integrate_substepped(state, d_eps, dt, 0)
    }

    fn integrate_substepped(
        &self,
        state: &MaterialState,
        d_eps: &SymTensor2,
        dt: f64,
        depth: usize,
    ) -> Result<MaterialState, ConstitutiveError> {
        match self.return_map(state, d_eps, dt) {
            Ok(r) => Ok(r.state),
            Err(err) => {
                if depth >= self.settings.max_substep_depth {
                    return Err(match err {
                        ConstitutiveError::ReturnMapDivergence {
                            iterations,
                            residual,
                            ..
                        } => ConstitutiveError::ReturnMapDivergence {
                            iterations,
                            depth,
                            residual,
                        },
                        other => other,
                    });
                }
                let half = d_eps.scale(0.5);
                let mid = self.integrate_substepped(state, &half, 0.5 * dt, depth + 1)?;
                self.integrate_substepped(&mid, &half, 0.5 * dt, depth + 1)
            }
        }
    }

    fn return_map(
        &self,
        state: &MaterialState,
        d_eps: &SymTensor2,
        dt: f64,
    ) -> Result<Returned, ConstitutiveError> {
        let pp = &self.plastic;
        let shear = self.stiffness.shear;
        let bulk = self.stiffness.bulk();
        let sigma_trial = state.sigma + self.stiffness.apply(d_eps);
        let (p_tr, q_tr) = stress_invariants(&sigma_trial);
        let dev_tr = sigma_trial.dev();
        let dev_norm = dev_tr.norm();
        // purely volumetric return at (near-)isotropic trial states
        let deviatoric = dev_norm >= 1e-12 * p_tr.abs().max(1.0);

        let lambda0 = state.lambda_acc;
        // plastic increment per reference step
        let steps = dt / self.settings.reference_step;
        let residual = |dl: f64| -> (f64, f64) {
            let (h, s) = hardening_with_slopes(lambda0 + dl, dl / steps, pp);
            let q = if deviatoric { q_tr - 3.0 * shear * dl } else { q_tr };
            let p = p_tr - bulk * h.beta * dl;
            let r = yield_value(p, q, h.alpha, h.cohesion);
            let dalpha = s.dalpha_dlambda + s.dalpha_drate / steps;
            let dp = -bulk * (h.beta + dl * s.dbeta_dlambda);
            let dq = if deviatoric { -3.0 * shear } else { 0.0 };
            (r, dq + dalpha * p + h.alpha * dp)
        };

        // Elastic predictor, with the internal variables at the elastic final
        // point (no plastic increment, zero rate).
        let (r0, _) = residual(0.0);
        if r0 <= 0.0 {
            return Ok(Returned {
                state: MaterialState {
                    sigma: sigma_trial,
                    eps_p: state.eps_p,
                    lambda_acc: state.lambda_acc,
                    lambda_dot: 0.0,
                },
            });
        }

        let scale = q_tr.abs().max(p_tr.abs()).max(pp.cohesion);
        let tol = (self.settings.newton_rtol * scale).min(0.5 * self.tol_yield());
        let diverged = |iterations: usize, residual: f64| ConstitutiveError::ReturnMapDivergence {
            iterations,
            depth: 0,
            residual,
        };

        // Bracket [lo, hi] with r(lo) > 0 > r(hi).
        let mut lo = 0.0;
        let mut hi;
        if deviatoric {
            hi = q_tr / (3.0 * shear);
            let (r_hi, _) = residual(hi);
            if r_hi > 0.0 {
                // the return would pass through the cone apex
                return Err(diverged(0, r_hi));
            }
            if r_hi == 0.0 {
                lo = hi;
            }
        } else {
            hi = r0 / (3.0 * shear);
            let mut grown = 0;
            loop {
                let (r_hi, _) = residual(hi);
                if r_hi <= 0.0 {
                    break;
                }
                hi *= 2.0;
                grown += 1;
                if grown > 60 || !hi.is_finite() {
                    return Err(diverged(0, r_hi));
                }
            }
        }

        let mut dl = (r0 / (3.0 * shear)).clamp(lo, hi);
        if dl <= lo || dl >= hi {
            dl = 0.5 * (lo + hi);
        }
        let mut last_r = r0;
        let mut converged = lo == hi;
        let mut iterations = 0;
        while !converged && iterations < self.settings.max_iter {
            iterations += 1;
            let (r, mut dr) = residual(dl);
            last_r = r;
            if !r.is_finite() {
                return Err(diverged(iterations, r));
            }
            if r.abs() <= tol {
                converged = true;
                break;
            }
            if r > 0.0 {
                lo = dl;
            } else {
                hi = dl;
            }
            if !dr.is_finite() {
                let h = 1e-7 * dl.max(1e-12);
                dr = (residual(dl + h).0 - residual((dl - h).max(0.0)).0) / (dl + h - (dl - h).max(0.0));
            }
            let newton = if dr != 0.0 { dl - r / dr } else { f64::NAN };
            dl = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (hi - lo) <= 1e-15 * hi.max(1e-300) {
                let (r, _) = residual(dl);
                last_r = r;
                converged = r.abs() <= self.tol_yield();
                break;
            }
        }
        if !converged {
            return Err(diverged(iterations, last_r));
        }

        let h = evolve_hardening(lambda0 + dl, dl / steps, pp);
        let flow_dev = if deviatoric {
            dev_tr.scale(SQRT_3_2 / dev_norm)
        } else {
            SymTensor2::ZERO
        };
        let flow = flow_dev + SymTensor2::isotropic(h.beta / 3.0);
        let d_eps_p = flow.scale(dl);
        let sigma = sigma_trial - self.stiffness.apply(&d_eps_p);
        Ok(Returned {
            state: MaterialState {
                sigma,
                eps_p: state.eps_p + d_eps_p,
                lambda_acc: lambda0 + dl,
                lambda_dot: dl / steps,
            },
        })
    }
}

/// Free-function form of [`HydrateSandModel::integrate_step`] with default
/// solver settings.
pub fn integrate_step(
    state: &MaterialState,
    d_eps: &SymTensor2,
    dt: f64,
    ep: &ElasticParams,
    pp: &PlasticParams,
) -> Result<MaterialState, ConstitutiveError> {
    HydrateSandModel::new(*ep, *pp, 0.0, ReturnMapSettings::default())?.integrate_step(state, d_eps, dt)
}
