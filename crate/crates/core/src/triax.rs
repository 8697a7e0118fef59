//! Drained triaxial compression at a single material point.
//!
//! Stage 1 loads the sample isotropically to the confining stress in one
//! elastic step. Stage 2 prescribes the axial strain increment each step and
//! solves for the lateral strain increment that keeps both lateral stresses at
//! the confining value. The sample axis is `x`; the lateral directions are
//! `y` and `z`. Strains are reported relative to the end of stage 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{
    stress_invariants, ConstitutiveError, ElasticParams, HydrateSandModel, MaterialState,
    PlasticParams, ReturnMapSettings,
};
use crate::tensor::SymTensor2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriaxError {
    #[error("invalid loading schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Material(#[from] ConstitutiveError),
    #[error("step {step}: {source}")]
    ReturnMap {
        step: usize,
        source: ConstitutiveError,
    },
    #[error("step {step}: lateral stress control failed (residual {residual:.3e} Pa after {iterations} iterations)")]
    LateralControlFailure {
        step: usize,
        residual: f64,
        iterations: usize,
    },
    #[error("isotropic confining state lies outside the initial yield surface (F = {yield_value:.3e} Pa)")]
    InitialStateNotElastic { yield_value: f64 },
    #[error("station {station:.6e} lies outside the simulated axial strain range (max magnitude {max:.6e})")]
    StationOutOfRange { station: f64, max: f64 },
    #[error("stations must be nonzero and strictly increasing in magnitude")]
    InvalidStations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadingSchedule {
    /// Confining stress magnitude (Pa).
    pub sigma_c: f64,
    /// Axial strain rate (1/s); negative in compression.
    pub eps_a_rate: f64,
    pub n_steps: usize,
    /// Step size (s).
    pub dt: f64,
}

impl Default for LoadingSchedule {
    fn default() -> Self {
        LoadingSchedule {
            sigma_c: 1.0e6,
            eps_a_rate: -1.04167e-5,
            n_steps: 1350,
            dt: 10.0,
        }
    }
}

impl LoadingSchedule {
    pub fn validate(&self) -> Result<(), TriaxError> {
        if !(self.sigma_c > 0.0 && self.sigma_c.is_finite()) {
            return Err(TriaxError::InvalidSchedule("sigma_c must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(TriaxError::InvalidSchedule("dt must be positive".into()));
        }
        if !self.eps_a_rate.is_finite() || self.eps_a_rate == 0.0 {
            return Err(TriaxError::InvalidSchedule("eps_a_rate must be nonzero".into()));
        }
        Ok(())
    }

    pub fn axial_increment(&self) -> f64 {
        self.eps_a_rate * self.dt
    }

    /// Stage-2 axial strain after `step` increments.
    pub fn axial_strain_at(&self, step: usize) -> f64 {
        step as f64 * self.axial_increment()
    }

    pub fn final_axial_strain(&self) -> f64 {
        self.axial_strain_at(self.n_steps)
    }

    /// Same total strain with `factor` times as many, proportionally shorter steps.
    pub fn refined(&self, factor: usize) -> Self {
        LoadingSchedule {
            n_steps: self.n_steps * factor,
            dt: self.dt / factor as f64,
            ..*self
        }
    }
}

/// `count` stations uniformly spaced in axial strain, excluding zero and
/// ending at the final strain of the schedule.
pub fn default_stations(sched: &LoadingSchedule, count: usize) -> Vec<f64> {
    let last = sched.final_axial_strain();
    (1..=count)
        .map(|k| {
            if k == count {
                last
            } else {
                last * k as f64 / count as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriaxSettings {
    /// Admissible lateral stress error (Pa).
    pub tol_lat: f64,
    pub max_lat_iter: usize,
    pub return_map: ReturnMapSettings,
}

impl Default for TriaxSettings {
    fn default() -> Self {
        TriaxSettings {
            tol_lat: 1.0,
            max_lat_iter: 30,
            return_map: ReturnMapSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub axial_strain: f64,
    pub vol_strain: f64,
    pub p: f64,
    pub q: f64,
    pub lambda_acc: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Per-step history of one simulation; `points.len() == n_steps + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub points: Vec<TrajectoryPoint>,
    /// Largest `|sigma_lateral + sigma_c|` over all steps.
    pub max_lateral_error: f64,
}

impl TrajectoryRecord {
    pub const COLUMNS: [&'static str; 8] = [
        "step",
        "axial_strain",
        "vol_strain",
        "p",
        "q",
        "lambda_acc",
        "alpha",
        "beta",
    ];
}

/// Volumetric strain and shear stress at the axial strain stations.
#[derive(Debug, Clone, PartialEq)]
pub struct QoIResponse {
    pub axial_strain_stations: Vec<f64>,
    pub vol_strain: Vec<f64>,
    pub shear_stress: Vec<f64>,
}

impl QoIResponse {
    /// All volumetric strains followed by all shear stresses.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.vol_strain.len());
        v.extend_from_slice(&self.vol_strain);
        v.extend_from_slice(&self.shear_stress);
        v
    }

    pub fn len(&self) -> usize {
        self.axial_strain_stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axial_strain_stations.is_empty()
    }
}

/// One-element triaxial test with fixed elastic constants and schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TriaxialTest {
    pub elastic: ElasticParams,
    pub schedule: LoadingSchedule,
    pub settings: TriaxSettings,
}

impl TriaxialTest {
    pub fn new(elastic: ElasticParams, schedule: LoadingSchedule) -> Self {
        TriaxialTest {
            elastic,
            schedule,
            settings: TriaxSettings::default(),
        }
    }

    pub fn with_settings(mut self, settings: TriaxSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn simulate(&self, pp: &PlasticParams) -> Result<TrajectoryRecord, TriaxError> {
        let sched = &self.schedule;
        sched.validate()?;
        let model =
            HydrateSandModel::new(self.elastic, *pp, sched.sigma_c, self.settings.return_map)?;
        let stiffness = model.stiffness;
        let sigma_c = sched.sigma_c;

        // stage 1: closed-form isotropic elastic loading
        let mut state = MaterialState::with_stress(SymTensor2::isotropic(-sigma_c));
        let f0 = state.yield_value(pp);
        if f0 > 0.0 {
            return Err(TriaxError::InitialStateNotElastic { yield_value: f0 });
        }

        let mut points = Vec::with_capacity(sched.n_steps + 1);
        let mut strain = SymTensor2::ZERO;
        let record = |step: usize, state: &MaterialState, strain: &SymTensor2| {
            let (p, q) = stress_invariants(&state.sigma);
            let h = state.hardening(pp);
            TrajectoryPoint {
                step,
                axial_strain: sched.axial_strain_at(step),
                vol_strain: strain.trace(),
                p,
                q,
                lambda_acc: state.lambda_acc,
                alpha: h.alpha,
                beta: h.beta,
            }
        };
        points.push(record(0, &state, &strain));

        let d_axial = sched.axial_increment();
        let lateral_slope = 2.0 * (stiffness.lame + stiffness.shear);
        let mut d_lat_guess = -stiffness.lame * d_axial / lateral_slope;
        let mut max_err: f64 = 0.0;

        for step in 1..=sched.n_steps {
            let eval = |x: f64| -> Result<(MaterialState, f64), TriaxError> {
                let d_eps = SymTensor2::diag(d_axial, x, x);
                let next = model
                    .integrate_step(&state, &d_eps, sched.dt)
                    .map_err(|source| TriaxError::ReturnMap { step, source })?;
                let lateral = 0.5 * (next.sigma.yy() + next.sigma.zz());
                Ok((next, lateral + sigma_c))
            };
            let (next, d_lat, residual) = self.solve_lateral(step, d_lat_guess, lateral_slope, eval)?;
            max_err = max_err.max(residual.abs());
            d_lat_guess = d_lat;
            state = next;
            strain += SymTensor2::diag(d_axial, d_lat, d_lat);
            points.push(record(step, &state, &strain));
        }

        Ok(TrajectoryRecord {
            points,
            max_lateral_error: max_err,
        })
    }

    /// Safeguarded secant iteration on the lateral strain increment.
    fn solve_lateral<F>(
        &self,
        step: usize,
        guess: f64,
        elastic_slope: f64,
        eval: F,
    ) -> Result<(MaterialState, f64, f64), TriaxError>
    where
        F: Fn(f64) -> Result<(MaterialState, f64), TriaxError>,
    {
        let tol = self.settings.tol_lat;
        let mut x0 = guess;
        let (s0, mut r0) = eval(x0)?;
        if r0.abs() <= tol {
            return Ok((s0, x0, r0));
        }
        // latest points with negative / positive residual
        let mut neg: Option<f64> = None;
        let mut pos: Option<f64> = None;
        let mut bracket = |x: f64, r: f64| {
            if r < 0.0 {
                neg = Some(x);
            } else {
                pos = Some(x);
            }
            (neg, pos)
        };
        bracket(x0, r0);
        let mut x1 = x0 - r0 / elastic_slope;
        let mut best = r0;
        for _ in 0..self.settings.max_lat_iter {
            let (s1, r1) = eval(x1)?;
            if r1.abs() <= tol {
                return Ok((s1, x1, r1));
            }
            if r1.abs() < best.abs() {
                best = r1;
            }
            let secant = if r1 != r0 {
                x1 - r1 * (x1 - x0) / (r1 - r0)
            } else {
                f64::NAN
            };
            let next = match bracket(x1, r1) {
                (Some(xn), Some(xp)) => {
                    let (lo, hi) = if xn < xp { (xn, xp) } else { (xp, xn) };
                    if secant.is_finite() && secant > lo && secant < hi {
                        secant
                    } else {
                        0.5 * (lo + hi)
                    }
                }
                _ if secant.is_finite() => secant,
                _ => x1 - r1 / elastic_slope,
            };
            x0 = x1;
            r0 = r1;
            x1 = next;
        }
        Err(TriaxError::LateralControlFailure {
            step,
            residual: best,
            iterations: self.settings.max_lat_iter,
        })
    }

    /// Quantity-of-interest map: the trajectory interpolated at `stations`.
    pub fn qoi(&self, pp: &PlasticParams, stations: &[f64]) -> Result<QoIResponse, TriaxError> {
        let traj = self.simulate(pp)?;
        interpolate_stations(&traj, stations)
    }
}

pub fn simulate(
    pp: &PlasticParams,
    ep: &ElasticParams,
    sched: &LoadingSchedule,
) -> Result<TrajectoryRecord, TriaxError> {
    TriaxialTest::new(*ep, *sched).simulate(pp)
}

pub fn qoi_map(
    pp: &PlasticParams,
    ep: &ElasticParams,
    sched: &LoadingSchedule,
    stations: &[f64],
) -> Result<QoIResponse, TriaxError> {
    TriaxialTest::new(*ep, *sched).qoi(pp, stations)
}

pub fn validate_stations(stations: &[f64]) -> Result<(), TriaxError> {
    let mut prev = 0.0;
    for &s in stations {
        if !s.is_finite() || s.abs() <= prev {
            return Err(TriaxError::InvalidStations);
        }
        prev = s.abs();
    }
    Ok(())
}

/// Linear interpolation of volumetric strain and `q` in axial strain magnitude.
pub fn interpolate_stations(
    traj: &TrajectoryRecord,
    stations: &[f64],
) -> Result<QoIResponse, TriaxError> {
    validate_stations(stations)?;
    let pts = &traj.points;
    let max = pts.last().map_or(0.0, |p| p.axial_strain.abs());
    let mut vol = Vec::with_capacity(stations.len());
    let mut shear = Vec::with_capacity(stations.len());
    for &s in stations {
        let mut m = s.abs();
        if m > max {
            if m <= max * (1.0 + 1e-12) {
                m = max;
            } else {
                return Err(TriaxError::StationOutOfRange { station: s, max });
            }
        }
        // first index with |axial| > m
        let upper = pts.partition_point(|p| p.axial_strain.abs() <= m);
        let (v, q) = if upper == 0 {
            return Err(TriaxError::StationOutOfRange { station: s, max });
        } else if upper == pts.len() {
            let p = &pts[upper - 1];
            (p.vol_strain, p.q)
        } else {
            let a = &pts[upper - 1];
            let b = &pts[upper];
            let ma = a.axial_strain.abs();
            let w = (m - ma) / (b.axial_strain.abs() - ma);
            (
                a.vol_strain + w * (b.vol_strain - a.vol_strain),
                a.q + w * (b.q - a.q),
            )
        };
        vol.push(v);
        shear.push(q);
    }
    Ok(QoIResponse {
        axial_strain_stations: stations.to_vec(),
        vol_strain: vol,
        shear_stress: shear,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::youngs_modulus;

    fn mid_params() -> PlasticParams {
        PlasticParams::from_array([2.1e6, 0.55, 0.25, 1.75e-3, 0.9, 0.375, 0.0105, 0.705])
    }

    fn never_yields() -> PlasticParams {
        PlasticParams {
            cohesion: 1e12,
            ..mid_params()
        }
    }

    #[test]
    fn zero_steps_holds_isotropic_state() {
        let sched = LoadingSchedule {
            n_steps: 0,
            ..Default::default()
        };
        let traj = simulate(&mid_params(), &ElasticParams::default(), &sched).unwrap();
        assert_eq!(traj.points.len(), 1);
        assert_eq!(traj.points[0].q, 0.0);
        assert_eq!(traj.points[0].p, -1e6);
    }

    #[test]
    fn elastic_response_matches_closed_form() {
        let ep = ElasticParams::default();
        let sched = LoadingSchedule {
            n_steps: 50,
            ..Default::default()
        };
        let traj = simulate(&never_yields(), &ep, &sched).unwrap();
        let e = youngs_modulus(&ep, sched.sigma_c);
        for w in traj.points.windows(2) {
            let da = (w[1].axial_strain - w[0].axial_strain).abs();
            let dq = w[1].q - w[0].q;
            let dv = w[1].vol_strain - w[0].vol_strain;
            assert!(((dq / da) - e).abs() <= 1e-6 * e);
            let ratio = dv / (w[1].axial_strain - w[0].axial_strain);
            assert!((ratio - (1.0 - 2.0 * ep.poisson)).abs() <= 1e-6);
        }
        assert!(traj.max_lateral_error <= 1.0);
    }

    #[test]
    fn stations_on_step_strains_are_exact() {
        let sched = LoadingSchedule {
            n_steps: 40,
            ..Default::default()
        };
        let traj = simulate(&mid_params(), &ElasticParams::default(), &sched).unwrap();
        let stations: Vec<f64> = [5, 17, 40].iter().map(|&i| traj.points[i].axial_strain).collect();
        let r = interpolate_stations(&traj, &stations).unwrap();
        for (k, &i) in [5usize, 17, 40].iter().enumerate() {
            assert_eq!(r.vol_strain[k], traj.points[i].vol_strain);
            assert_eq!(r.shear_stress[k], traj.points[i].q);
        }
    }

    #[test]
    fn out_of_range_station_is_rejected() {
        let sched = LoadingSchedule {
            n_steps: 10,
            ..Default::default()
        };
        let traj = simulate(&mid_params(), &ElasticParams::default(), &sched).unwrap();
        let far = 2.0 * sched.final_axial_strain();
        assert!(matches!(
            interpolate_stations(&traj, &[far]),
            Err(TriaxError::StationOutOfRange { .. })
        ));
        assert!(matches!(
            interpolate_stations(&traj, &[-1e-4, -1e-4]),
            Err(TriaxError::InvalidStations)
        ));
    }

    #[test]
    fn default_stations_end_at_final_strain() {
        let sched = LoadingSchedule::default();
        let st = default_stations(&sched, 23);
        assert_eq!(st.len(), 23);
        assert_eq!(*st.last().unwrap(), sched.final_axial_strain());
        assert!((sched.final_axial_strain() + 0.1406254).abs() < 1e-6);
        validate_stations(&st).unwrap();
    }
}
