//! Physical model: nondimensional groups, coefficient laws, particle flux,
//! radial cut-off, and boundary-condition case setups.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::geom::{Mat2, Vec2};
use crate::mesh::BoundaryTag;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidArgument(String),
    #[error("parameter file: {0}")]
    ParamFile(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Nondimensional groups and model switches.
///
/// `constants_one` forces every nondimensional prefactor (including the
/// thermophoretic ratio and the buoyancy coefficient) to one; the
/// coefficient laws `k`, `mu` and the mobility `h` stay as given.
#[derive(Clone, Copy, Debug)]
pub struct ModelParams {
    pub re: f64,
    pub pr: f64,
    pub sc: f64,
    pub sc_f: f64,
    pub le: f64,
    pub n_bt: f64,
    pub t0: f64,
    pub beta: f64,
    /// Unit vector in the direction of gravity.
    pub e_g: Vec2,
    pub phi_m: f64,
    /// Radius of the optional flux limiter applied to the thermophoretic
    /// term of the concentration equation; `None` disables it.
    pub cutoff_radius: Option<f64>,
    pub constants_one: bool,
    /// When false the thermophoretic coupling is removed entirely, which
    /// pins the concentration at its mean.
    pub thermophoresis: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            re: 1.0,
            pr: 1.0,
            sc: 1.0,
            sc_f: 1.0,
            le: 1.0,
            n_bt: 1.0,
            t0: 1.0,
            beta: 1.0,
            e_g: Vec2::new(0.0, -1.0),
            phi_m: 0.1,
            cutoff_radius: None,
            constants_one: false,
            thermophoresis: true,
        }
    }
}

impl ModelParams {
    pub fn constants_one() -> Self {
        ModelParams {
            constants_one: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("Re", self.re),
            ("Pr", self.pr),
            ("Sc", self.sc),
            ("Scf", self.sc_f),
            ("Nbt", self.n_bt),
            ("T0", self.t0),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.le == 0.0 || !self.le.is_finite() {
            return Err(ModelError::InvalidArgument(format!(
                "Le must be nonzero, got {}",
                self.le
            )));
        }
        if !(self.beta >= 0.0) {
            return Err(ModelError::InvalidArgument(format!(
                "beta must be nonnegative, got {}",
                self.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.phi_m) {
            return Err(ModelError::InvalidArgument(format!(
                "phi_m must lie in [0, 1], got {}",
                self.phi_m
            )));
        }
        if let Some(r) = self.cutoff_radius {
            if !(r > 0.0) {
                return Err(ModelError::InvalidArgument(format!(
                    "cutoff radius must be positive, got {r}"
                )));
            }
        }
        if (self.e_g.norm() - 1.0).abs() > 1e-12 {
            return Err(ModelError::InvalidArgument(format!(
                "gravity direction must be a unit vector, |e_g| = {}",
                self.e_g.norm()
            )));
        }
        Ok(())
    }

    /// Scaled prefactors of the weak form. Every returned coefficient is 1
    /// in constants-one mode; `thermo` is forced to 0 when thermophoresis
    /// is switched off.
    pub fn coefficients(&self) -> Coeffs {
        let mut c = if self.constants_one {
            Coeffs {
                diff_phi: 1.0,
                thermo: 1.0,
                diff_t: 1.0,
                flux_t: 1.0,
                visc: 1.0,
                flux_u: 1.0,
                beta: 1.0,
                e_g: self.e_g,
            }
        } else {
            Coeffs {
                diff_phi: 1.0 / (self.re * self.sc),
                thermo: 1.0 / (self.n_bt * self.t0),
                diff_t: 1.0 / (self.re * self.pr),
                flux_t: 1.0 / (self.re * self.pr * self.le),
                visc: 1.0 / self.re,
                flux_u: 1.0 / (self.re * self.sc_f),
                beta: self.beta,
                e_g: self.e_g,
            }
        };
        if !self.thermophoresis {
            c.thermo = 0.0;
        }
        c
    }
}

/// Constant weak-form prefactors derived from [`ModelParams`].
#[derive(Clone, Copy, Debug)]
pub struct Coeffs {
    /// 1/(Re Sc): Brownian diffusion in the concentration equation.
    pub diff_phi: f64,
    /// 1/(N_BT T0): thermophoretic drift relative to Brownian diffusion.
    pub thermo: f64,
    /// 1/(Re Pr): heat conduction.
    pub diff_t: f64,
    /// 1/(Re Pr Le): particle-flux convection of heat.
    pub flux_t: f64,
    /// 1/Re: viscous stress.
    pub visc: f64,
    /// 1/(Re Sc_f): particle-flux convection of momentum.
    pub flux_u: f64,
    pub beta: f64,
    pub e_g: Vec2,
}

/// Concentration-dependent material laws with first derivatives.
///
/// The mobility `h`, effective heat capacity `eta` and density `rho` come
/// from the model itself; conductivity `k` and viscosity `mu` are fits.
/// All laws are polynomial and evaluated on the raw discrete concentration
/// without clamping; solves report the concentration range so excursions
/// outside [0, 1] stay visible.
#[derive(Clone, Copy)]
pub struct CoefficientLaws {
    pub k: fn(f64) -> f64,
    pub dk: fn(f64) -> f64,
    pub mu: fn(f64) -> f64,
    pub dmu: fn(f64) -> f64,
    pub h: fn(f64) -> f64,
    pub dh: fn(f64) -> f64,
    pub eta: fn(f64) -> f64,
    pub deta: fn(f64) -> f64,
    pub rho: fn(f64) -> f64,
    pub drho: fn(f64) -> f64,
}

impl fmt::Debug for CoefficientLaws {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CoefficientLaws {{ .. }}")
    }
}

fn mobility(s: f64) -> f64 {
    s * (1.0 - s)
}

fn mobility_d(s: f64) -> f64 {
    1.0 - 2.0 * s
}

fn one_plus(s: f64) -> f64 {
    1.0 + s
}

fn one(_: f64) -> f64 {
    1.0
}

fn zero(_: f64) -> f64 {
    0.0
}

/// Unit conductivity and viscosity; mobility and mixture laws unchanged.
pub fn coefficients_unit() -> CoefficientLaws {
    CoefficientLaws {
        k: one,
        dk: zero,
        mu: one,
        dmu: zero,
        h: mobility,
        dh: mobility_d,
        eta: one_plus,
        deta: one,
        rho: one_plus,
        drho: one,
    }
}

/// Experimental fits for alumina nanoparticle dispersions:
/// mu(phi) = 1 + 39.11 phi + 533.9 phi^2, k(phi) = 1 + 4.5503 phi.
pub fn coefficients_alumina() -> CoefficientLaws {
    CoefficientLaws {
        k: |s| 1.0 + 4.5503 * s,
        dk: |_| 4.5503,
        mu: |s| 1.0 + 39.11 * s + 533.9 * s * s,
        dmu: |s| 39.11 + 2.0 * 533.9 * s,
        h: mobility,
        dh: mobility_d,
        eta: one_plus,
        deta: one,
        rho: one_plus,
        drho: one,
    }
}

/// Particle flux `j = -(grad phi + phi(1-phi)/(N_BT T0) grad T)`: Brownian
/// diffusion plus thermophoretic drift from hot to cold.
pub fn particle_flux(grad_phi: Vec2, phi: f64, grad_t: Vec2, params: &ModelParams) -> Vec2 {
    let thermo = params.coefficients().thermo;
    -(grad_phi + grad_t * (mobility(phi) * thermo))
}

/// Radial cut-off: identity inside the ball of radius `r`, radial
/// projection onto its boundary outside.
pub fn cutoff(y: Vec2, r: f64) -> Vec2 {
    let n = y.norm();
    if n <= r {
        y
    } else {
        y * (r / n)
    }
}

/// Jacobian of [`cutoff`]: identity inside the ball (including on the
/// sphere, by convention), and `(r/|y|)(I - y y^T/|y|^2)` outside. The
/// outer branch annihilates the radial direction.
pub fn cutoff_jacobian(y: Vec2, r: f64) -> Mat2 {
    let n = y.norm();
    if n <= r {
        Mat2::IDENTITY
    } else {
        let s = r / n;
        let inv2 = 1.0 / (n * n);
        Mat2([
            [s * (1.0 - y.x * y.x * inv2), s * (-y.x * y.y * inv2)],
            [s * (-y.x * y.y * inv2), s * (1.0 - y.y * y.y * inv2)],
        ])
    }
}

pub type ScalarFn = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>;

/// Boundary condition for a scalar field on one side.
#[derive(Clone)]
pub enum ScalarBc {
    Dirichlet(ScalarFn),
    /// Natural zero-flux condition; nothing to assemble.
    Neumann,
}

impl ScalarBc {
    pub fn value(v: f64) -> ScalarBc {
        ScalarBc::Dirichlet(Arc::new(move |_| v))
    }
}

/// Boundary condition for the velocity on one side.
#[derive(Clone)]
pub enum VelocityBc {
    /// Both components pinned to zero.
    NoSlip,
    /// Wall-normal component pinned to zero, tangential traction-free.
    /// Valid on axis-aligned sides.
    Slip,
    Dirichlet(VectorFn),
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseId {
    Mms,
    Cavity,
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseId::Mms => "mms",
            CaseId::Cavity => "cavity",
        })
    }
}

impl FromStr for CaseId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "mms" => Ok(CaseId::Mms),
            "cavity" => Ok(CaseId::Cavity),
            other => Err(ModelError::InvalidArgument(format!(
                "unknown case `{other}` (expected mms or cavity)"
            ))),
        }
    }
}

/// Complete boundary-condition and source setup for one problem. Boundary
/// arrays are indexed by [`BoundaryTag::index`].
#[derive(Clone)]
pub struct CaseSetup {
    pub id: CaseId,
    pub phi_bc: [ScalarBc; 4],
    pub temp_bc: [ScalarBc; 4],
    pub vel_bc: [VelocityBc; 4],
    /// Prescribed mean concentration, enforced by a scalar multiplier.
    pub mean_phi: Option<f64>,
    pub source_phi: Option<ScalarFn>,
    pub source_heat: Option<ScalarFn>,
    pub source_momentum: Option<VectorFn>,
}

impl CaseSetup {
    /// Differentially heated cavity: concentration has zero-flux walls with
    /// prescribed mean `phi_m`; temperature is 1 on the left wall, 0 on the
    /// right, insulated top and bottom; velocity is no-slip except for a
    /// free-slip top wall. No volumetric sources.
    pub fn cavity(phi_m: f64) -> CaseSetup {
        CaseSetup {
            id: CaseId::Cavity,
            phi_bc: [
                ScalarBc::Neumann,
                ScalarBc::Neumann,
                ScalarBc::Neumann,
                ScalarBc::Neumann,
            ],
            temp_bc: [
                ScalarBc::value(1.0), // left, heated
                ScalarBc::value(0.0), // right, cooled
                ScalarBc::Neumann,    // bottom
                ScalarBc::Neumann,    // top
            ],
            vel_bc: [
                VelocityBc::NoSlip,
                VelocityBc::NoSlip,
                VelocityBc::NoSlip,
                VelocityBc::Slip, // top
            ],
            mean_phi: Some(phi_m),
            source_phi: None,
            source_heat: None,
            source_momentum: None,
        }
    }

    /// Normal component index constrained by a slip wall on `tag`.
    pub fn slip_normal_component(tag: BoundaryTag) -> usize {
        match tag {
            BoundaryTag::Left | BoundaryTag::Right => 0,
            BoundaryTag::Bottom | BoundaryTag::Top => 1,
        }
    }
}

/// `key = value` parameter file contents. Unset keys stay `None` so the
/// caller can layer CLI and environment overrides on top.
#[derive(Clone, Debug, Default)]
pub struct ParamFile {
    pub re: Option<f64>,
    pub pr: Option<f64>,
    pub sc: Option<f64>,
    pub sc_f: Option<f64>,
    pub le: Option<f64>,
    pub n_bt: Option<f64>,
    pub t0: Option<f64>,
    pub beta: Option<f64>,
    pub phi_m: Option<f64>,
    pub cutoff_r: Option<f64>,
    pub case: Option<CaseId>,
}

impl ParamFile {
    pub fn load(path: &Path) -> Result<ParamFile, ModelError> {
        let text = std::fs::read_to_string(path)?;
        ParamFile::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ParamFile, ModelError> {
        let mut out = ParamFile::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ModelError::ParamFile(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let num = |slot: &mut Option<f64>| -> Result<(), ModelError> {
                let v: f64 = value.parse().map_err(|_| {
                    ModelError::ParamFile(format!("line {}: bad number `{value}`", lineno + 1))
                })?;
                *slot = Some(v);
                Ok(())
            };
            match key {
                "Re" => num(&mut out.re)?,
                "Pr" => num(&mut out.pr)?,
                "Sc" => num(&mut out.sc)?,
                "Scf" => num(&mut out.sc_f)?,
                "Le" => num(&mut out.le)?,
                "Nbt" => num(&mut out.n_bt)?,
                "T0" => num(&mut out.t0)?,
                "beta" => num(&mut out.beta)?,
                "phi_m" => num(&mut out.phi_m)?,
                "cutoff_R" => num(&mut out.cutoff_r)?,
                "case" => out.case = Some(value.parse()?),
                other => {
                    return Err(ModelError::ParamFile(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Applies the file values onto `params`, leaving unset keys alone.
    pub fn apply(&self, params: &mut ModelParams) {
        if let Some(v) = self.re {
            params.re = v;
        }
        if let Some(v) = self.pr {
            params.pr = v;
        }
        if let Some(v) = self.sc {
            params.sc = v;
        }
        if let Some(v) = self.sc_f {
            params.sc_f = v;
        }
        if let Some(v) = self.le {
            params.le = v;
        }
        if let Some(v) = self.n_bt {
            params.n_bt = v;
        }
        if let Some(v) = self.t0 {
            params.t0 = v;
        }
        if let Some(v) = self.beta {
            params.beta = v;
        }
        if let Some(v) = self.phi_m {
            params.phi_m = v;
        }
        if let Some(v) = self.cutoff_r {
            params.cutoff_radius = Some(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flux_examples() {
        let mut params = ModelParams::default();
        params.n_bt = 0.586;
        params.t0 = 1.0;

        // h(0) = 0 kills the thermophoretic part.
        let j = particle_flux(Vec2::new(1.0, 0.0), 0.0, Vec2::new(5.0, -3.0), &params);
        assert_eq!(j, Vec2::new(-1.0, 0.0));

        // h(0.5) = 0.25 with N_BT T0 = 0.586.
        let j = particle_flux(Vec2::ZERO, 0.5, Vec2::new(4.0, 0.0), &params);
        assert!((j.x - (-1.0 / 0.586)).abs() < 1e-14);
        assert_eq!(j.y, 0.0);

        // h(1) = 0.
        let j = particle_flux(Vec2::ZERO, 1.0, Vec2::new(2.0, 7.0), &params);
        assert_eq!(j, Vec2::ZERO);
    }

    #[test]
    fn flux_is_linear_in_gradients() {
        let params = ModelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let phi = rng.random::<f64>();
            let g1 = Vec2::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let g2 = Vec2::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let t1 = Vec2::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let t2 = Vec2::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let a = 1.7;
            let lhs = particle_flux(g1 * a + g2, phi, t1 * a + t2, &params);
            let rhs = particle_flux(g1, phi, t1, &params) * a + particle_flux(g2, phi, t2, &params);
            assert!((lhs - rhs).norm() < 1e-13);
        }
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(cutoff(Vec2::new(0.5, 0.0), 1.0), Vec2::new(0.5, 0.0));
        let c = cutoff(Vec2::new(3.0, 4.0), 1.0);
        assert!((c.x - 0.6).abs() < 1e-15 && (c.y - 0.8).abs() < 1e-15);
        assert_eq!(cutoff(Vec2::ZERO, 2.5), Vec2::ZERO);
    }

    #[test]
    fn cutoff_is_contractive_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let y = Vec2::new(
                4.0 * (rng.random::<f64>() - 0.5),
                4.0 * (rng.random::<f64>() - 0.5),
            );
            let r = 0.01 + 2.0 * rng.random::<f64>();
            let c = cutoff(y, r);
            assert!(c.norm() <= y.norm().min(r) + 1e-14);
        }
    }

    #[test]
    fn cutoff_jacobian_examples() {
        assert_eq!(cutoff_jacobian(Vec2::new(0.5, 0.0), 1.0), Mat2::IDENTITY);

        let j = cutoff_jacobian(Vec2::new(3.0, 4.0), 1.0);
        let expected = Mat2([[0.128, -0.096], [-0.096, 0.072]]);
        for c in 0..2 {
            for d in 0..2 {
                assert!((j.0[c][d] - expected.0[c][d]).abs() < 1e-15);
            }
        }

        // Outer branch annihilates the radial direction.
        let y = Vec2::new(3.0, 4.0);
        let jy = j.mul_vec(y);
        assert!(jy.norm() < 1e-14);
    }

    #[test]
    fn cutoff_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let eps = 1e-6;
        for _ in 0..1000 {
            let y = Vec2::new(
                3.0 * (rng.random::<f64>() - 0.5),
                3.0 * (rng.random::<f64>() - 0.5),
            );
            let r = 0.05 + rng.random::<f64>();
            // the formula is one-sided at the kink
            if (y.norm() - r).abs() < 1e-3 {
                continue;
            }
            let jac = cutoff_jacobian(y, r);
            for d in 0..2 {
                let dir = if d == 0 {
                    Vec2::new(1.0, 0.0)
                } else {
                    Vec2::new(0.0, 1.0)
                };
                let fd = (cutoff(y + dir * eps, r) - cutoff(y - dir * eps, r)) * (1.0 / (2.0 * eps));
                let exact = Vec2::new(jac.0[0][d], jac.0[1][d]);
                let scale = exact.norm().max(1.0);
                assert!((fd - exact).norm() <= 1e-7 * scale);
            }
        }
    }

    #[test]
    fn alumina_fit_values() {
        let laws = coefficients_alumina();
        assert_eq!((laws.mu)(0.0), 1.0);
        assert_eq!((laws.k)(0.0), 1.0);
        assert!(((laws.mu)(0.1) - 10.25).abs() < 1e-12);
        assert!(((laws.k)(0.1) - 1.45503).abs() < 1e-12);
    }

    #[test]
    fn law_derivatives_match_finite_differences() {
        let eps = 1e-6;
        for laws in [coefficients_alumina(), coefficients_unit()] {
            let pairs: [(fn(f64) -> f64, fn(f64) -> f64); 5] = [
                (laws.k, laws.dk),
                (laws.mu, laws.dmu),
                (laws.h, laws.dh),
                (laws.eta, laws.deta),
                (laws.rho, laws.drho),
            ];
            for (f, df) in pairs {
                for i in 0..100 {
                    let s = i as f64 / 99.0;
                    let fd = (f(s + eps) - f(s - eps)) / (2.0 * eps);
                    let exact = df(s);
                    let scale = exact.abs().max(1.0);
                    assert!((fd - exact).abs() <= 1e-8 * scale);
                }
            }
        }
    }

    #[test]
    fn constants_one_prefactors() {
        let mut params = ModelParams::constants_one();
        params.re = 123.0;
        params.beta = 7.0;
        let c = params.coefficients();
        assert_eq!(c.diff_phi, 1.0);
        assert_eq!(c.thermo, 1.0);
        assert_eq!(c.diff_t, 1.0);
        assert_eq!(c.flux_t, 1.0);
        assert_eq!(c.visc, 1.0);
        assert_eq!(c.flux_u, 1.0);
        assert_eq!(c.beta, 1.0);
    }

    #[test]
    fn scaled_prefactors() {
        let params = ModelParams {
            re: 100.0,
            pr: 2.0,
            sc: 4.0,
            sc_f: 1e4,
            le: 1e4,
            n_bt: 0.586,
            t0: 1.0,
            beta: 0.5,
            ..Default::default()
        };
        let c = params.coefficients();
        assert!((c.diff_phi - 1.0 / 400.0).abs() < 1e-18);
        assert!((c.thermo - 1.0 / 0.586).abs() < 1e-12);
        assert!((c.diff_t - 1.0 / 200.0).abs() < 1e-18);
        assert!((c.flux_t - 1.0 / 2e6).abs() < 1e-20);
        assert!((c.visc - 0.01).abs() < 1e-18);
        assert!((c.flux_u - 1e-6).abs() < 1e-20);
        assert_eq!(c.beta, 0.5);
    }

    #[test]
    fn param_file_round_trip() {
        let text = "# cavity study\nRe = 100\nPr = 1.0\nScf = 1e4\nNbt = 0.586\nphi_m = 0.1\ncase = cavity\n";
        let pf = ParamFile::parse(text).unwrap();
        assert_eq!(pf.re, Some(100.0));
        assert_eq!(pf.sc_f, Some(1e4));
        assert_eq!(pf.case, Some(CaseId::Cavity));
        let mut params = ModelParams::default();
        pf.apply(&mut params);
        assert_eq!(params.re, 100.0);
        assert_eq!(params.n_bt, 0.586);

        assert!(ParamFile::parse("Re: 100\n").is_err());
        assert!(ParamFile::parse("bogus = 1\n").is_err());
        assert!(ParamFile::parse("Re = abc\n").is_err());
    }

    #[test]
    fn validate_rejects_bad_values() {
        let mut p = ModelParams::default();
        p.re = -1.0;
        assert!(p.validate().is_err());
        let mut p = ModelParams::default();
        p.le = 0.0;
        assert!(p.validate().is_err());
        let mut p = ModelParams::default();
        p.phi_m = 1.5;
        assert!(p.validate().is_err());
        let mut p = ModelParams::default();
        p.e_g = Vec2::new(1.0, 1.0);
        assert!(p.validate().is_err());
        // A negative Lewis number is accepted: only 1/(Re Pr Le) enters.
        let mut p = ModelParams::default();
        p.le = -1e10;
        assert!(p.validate().is_ok());
    }
}
