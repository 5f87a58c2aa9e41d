//! Norms, manufactured solutions, and convergence-order studies.
//!
//! Manufactured cases carry closed-form fields with hand-derived gradients
//! and Laplacians; the volumetric sources are computed pointwise by
//! substituting those fields into the strong form of the assembled system,
//! so a discrete solve against these sources must converge to the exact
//! fields at the theoretical rates: order k in W^1_p-type norms and k+1 in
//! L_p-type norms for degree-k elements (pressure at order k in L_2).
//!
//! Error measurement against a fine-grid reference transfers the reference
//! by direct point evaluation at the quadrature points of the coarse mesh,
//! located via the structured cell grid, which avoids introducing a
//! lower-order interpolation error.

use std::io::{self, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::assembly::{AssemblyError, FieldState, Problem};
use crate::fespace::{Kind, Quadrature, Space};
use crate::geom::{Mat2, Vec2};
use crate::mesh::Mesh;
use crate::model::{CaseId, CaseSetup, CoefficientLaws, ModelParams, ScalarBc, VelocityBc};
use crate::solver::{self, NewtonConfig, SolveError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid analysis argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Closed-form scalar field with first and second derivative data.
#[derive(Clone, Copy)]
pub struct ScalarField {
    pub value: fn(Vec2) -> f64,
    pub grad: fn(Vec2) -> Vec2,
    pub laplacian: fn(Vec2) -> f64,
}

/// Closed-form velocity field; `grad` rows are components.
#[derive(Clone, Copy)]
pub struct VelocityField {
    pub value: fn(Vec2) -> Vec2,
    pub grad: fn(Vec2) -> Mat2,
    pub laplacian: fn(Vec2) -> Vec2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmsFlavor {
    Trigonometric,
    Polynomial,
}

/// Manufactured exact solution on the unit square. The velocity is the
/// curl of a scalar stream function, hence pointwise divergence-free, the
/// concentration stays inside (0, 1), and the pressure has zero mean.
#[derive(Clone, Copy)]
pub struct MmsCase {
    pub flavor: MmsFlavor,
    pub phi: ScalarField,
    pub temp: ScalarField,
    pub vel: VelocityField,
    pub pressure: ScalarField,
}

const PI: f64 = std::f64::consts::PI;

/// Builds the manufactured case of the requested flavor.
pub fn make_mms(flavor: MmsFlavor) -> MmsCase {
    match flavor {
        MmsFlavor::Trigonometric => MmsCase {
            flavor,
            // phi = 0.3 + 0.1 sin(pi x) sin(pi y), valued in [0.2, 0.4]
            phi: ScalarField {
                value: |p| 0.3 + 0.1 * (PI * p.x).sin() * (PI * p.y).sin(),
                grad: |p| {
                    Vec2::new(
                        0.1 * PI * (PI * p.x).cos() * (PI * p.y).sin(),
                        0.1 * PI * (PI * p.x).sin() * (PI * p.y).cos(),
                    )
                },
                laplacian: |p| -0.2 * PI * PI * (PI * p.x).sin() * (PI * p.y).sin(),
            },
            // T = 0.5 sin(pi x) sin(2 pi y), zero on the whole boundary
            temp: ScalarField {
                value: |p| 0.5 * (PI * p.x).sin() * (2.0 * PI * p.y).sin(),
                grad: |p| {
                    Vec2::new(
                        0.5 * PI * (PI * p.x).cos() * (2.0 * PI * p.y).sin(),
                        PI * (PI * p.x).sin() * (2.0 * PI * p.y).cos(),
                    )
                },
                laplacian: |p| -2.5 * PI * PI * (PI * p.x).sin() * (2.0 * PI * p.y).sin(),
            },
            // u = curl of (1/pi) sin^2(pi x) sin^2(pi y)
            vel: VelocityField {
                value: |p| {
                    let sx = (PI * p.x).sin();
                    let sy = (PI * p.y).sin();
                    Vec2::new(
                        sx * sx * (2.0 * PI * p.y).sin(),
                        -(2.0 * PI * p.x).sin() * sy * sy,
                    )
                },
                grad: |p| {
                    let (sx, s2x) = ((PI * p.x).sin(), (2.0 * PI * p.x).sin());
                    let (sy, s2y) = ((PI * p.y).sin(), (2.0 * PI * p.y).sin());
                    let (c2x, c2y) = ((2.0 * PI * p.x).cos(), (2.0 * PI * p.y).cos());
                    Mat2([
                        [PI * s2x * s2y, 2.0 * PI * sx * sx * c2y],
                        [-2.0 * PI * c2x * sy * sy, -PI * s2x * s2y],
                    ])
                },
                laplacian: |p| {
                    let (sx, s2x) = ((PI * p.x).sin(), (2.0 * PI * p.x).sin());
                    let (sy, s2y) = ((PI * p.y).sin(), (2.0 * PI * p.y).sin());
                    let (c2x, c2y) = ((2.0 * PI * p.x).cos(), (2.0 * PI * p.y).cos());
                    Vec2::new(
                        2.0 * PI * PI * c2x * s2y - 4.0 * PI * PI * sx * sx * s2y,
                        4.0 * PI * PI * s2x * sy * sy - 2.0 * PI * PI * s2x * c2y,
                    )
                },
            },
            // p = sin(pi x) cos(pi y), zero mean on the unit square
            pressure: ScalarField {
                value: |p| (PI * p.x).sin() * (PI * p.y).cos(),
                grad: |p| {
                    Vec2::new(
                        PI * (PI * p.x).cos() * (PI * p.y).cos(),
                        -PI * (PI * p.x).sin() * (PI * p.y).sin(),
                    )
                },
                laplacian: |p| -2.0 * PI * PI * (PI * p.x).sin() * (PI * p.y).cos(),
            },
        },
        MmsFlavor::Polynomial => MmsCase {
            flavor,
            // phi = 0.3 + 0.4 x^2 y (1 - y), valued in [0.3, 0.4]
            phi: ScalarField {
                value: |p| 0.3 + 0.4 * p.x * p.x * p.y * (1.0 - p.y),
                grad: |p| {
                    Vec2::new(
                        0.8 * p.x * p.y * (1.0 - p.y),
                        0.4 * p.x * p.x * (1.0 - 2.0 * p.y),
                    )
                },
                laplacian: |p| 0.8 * p.y * (1.0 - p.y) - 0.8 * p.x * p.x,
            },
            // T = 2 x y (1 - x)(1 - y), zero on the boundary
            temp: ScalarField {
                value: |p| 2.0 * p.x * p.y * (1.0 - p.x) * (1.0 - p.y),
                grad: |p| {
                    Vec2::new(
                        2.0 * p.y * (1.0 - p.y) * (1.0 - 2.0 * p.x),
                        2.0 * p.x * (1.0 - p.x) * (1.0 - 2.0 * p.y),
                    )
                },
                laplacian: |p| -4.0 * (p.y * (1.0 - p.y) + p.x * (1.0 - p.x)),
            },
            // u = curl of x^2 (1-x)^2 y^2 (1-y)^2
            vel: VelocityField {
                value: |p| Vec2::new(poly_a(p.x) * poly_da(p.y), -poly_da(p.x) * poly_a(p.y)),
                grad: |p| {
                    Mat2([
                        [poly_da(p.x) * poly_da(p.y), poly_a(p.x) * poly_d2a(p.y)],
                        [-poly_d2a(p.x) * poly_a(p.y), -poly_da(p.x) * poly_da(p.y)],
                    ])
                },
                laplacian: |p| {
                    Vec2::new(
                        poly_d2a(p.x) * poly_da(p.y) + poly_a(p.x) * poly_d3a(p.y),
                        -poly_d3a(p.x) * poly_a(p.y) - poly_da(p.x) * poly_d2a(p.y),
                    )
                },
            },
            // p = x^3 + y^3 - 1/2, zero mean on the unit square
            pressure: ScalarField {
                value: |p| p.x * p.x * p.x + p.y * p.y * p.y - 0.5,
                grad: |p| Vec2::new(3.0 * p.x * p.x, 3.0 * p.y * p.y),
                laplacian: |p| 6.0 * (p.x + p.y),
            },
        },
    }
}

// bump function x^2 (1-x)^2 and its derivatives
fn poly_a(x: f64) -> f64 {
    x * x * (1.0 - x) * (1.0 - x)
}
fn poly_da(x: f64) -> f64 {
    2.0 * x * (1.0 - x) * (1.0 - 2.0 * x)
}
fn poly_d2a(x: f64) -> f64 {
    2.0 * (1.0 - 6.0 * x + 6.0 * x * x)
}
fn poly_d3a(x: f64) -> f64 {
    12.0 * (2.0 * x - 1.0)
}

impl MmsCase {
    /// Case setup whose sources make the exact fields solve the assembled
    /// system with the given parameters and laws: Dirichlet boundary data
    /// for concentration, temperature and velocity from the exact fields,
    /// and pointwise substituted volumetric sources.
    pub fn case_setup(&self, params: &ModelParams, laws: &CoefficientLaws) -> CaseSetup {
        let c = params.coefficients();
        let laws = *laws;
        let mms = *self;

        let src_phi: crate::model::ScalarFn = Arc::new(move |x: Vec2| {
            let gphi = (mms.phi.grad)(x);
            let gt = (mms.temp.grad)(x);
            let phi = (mms.phi.value)(x);
            let u = (mms.vel.value)(x);
            let div_h_gt = (laws.dh)(phi) * gphi.dot(gt) + (laws.h)(phi) * (mms.temp.laplacian)(x);
            c.diff_phi * (-(mms.phi.laplacian)(x) - c.thermo * div_h_gt) + u.dot(gphi)
        });

        let src_heat: crate::model::ScalarFn = Arc::new(move |x: Vec2| {
            let phi = (mms.phi.value)(x);
            let gphi = (mms.phi.grad)(x);
            let gt = (mms.temp.grad)(x);
            let u = (mms.vel.value)(x);
            let jvec = -(gphi + gt * (c.thermo * (laws.h)(phi)));
            let div_k_gt = (laws.dk)(phi) * gphi.dot(gt) + (laws.k)(phi) * (mms.temp.laplacian)(x);
            c.diff_t * (-div_k_gt) + (jvec * c.flux_t + u * (laws.eta)(phi)).dot(gt)
        });

        let src_mom: crate::model::VectorFn = Arc::new(move |x: Vec2| {
            let phi = (mms.phi.value)(x);
            let gphi = (mms.phi.grad)(x);
            let gt = (mms.temp.grad)(x);
            let temp = (mms.temp.value)(x);
            let u = (mms.vel.value)(x);
            let gu = (mms.vel.grad)(x);
            let du = gu.sym();
            let lap_u = (mms.vel.laplacian)(x);
            let jvec = -(gphi + gt * (c.thermo * (laws.h)(phi)));
            // -div(mu D(u)) = -mu' D(u) grad(phi) - mu lap(u) when div u = 0
            let visc = -(du.mul_vec(gphi) * (laws.dmu)(phi)) - lap_u * (laws.mu)(phi);
            let conv = gu.mul_vec(jvec * c.flux_u + u * (laws.rho)(phi));
            visc * c.visc + conv + (mms.pressure.grad)(x) + c.e_g * (c.beta * temp)
        });

        let phi_fn = self.phi.value;
        let temp_fn = self.temp.value;
        let vel_fn = self.vel.value;
        CaseSetup {
            id: CaseId::Mms,
            phi_bc: std::array::from_fn(|_| ScalarBc::Dirichlet(Arc::new(phi_fn))),
            temp_bc: std::array::from_fn(|_| ScalarBc::Dirichlet(Arc::new(temp_fn))),
            vel_bc: std::array::from_fn(|_| VelocityBc::Dirichlet(Arc::new(vel_fn))),
            mean_phi: None,
            source_phi: Some(src_phi),
            source_heat: Some(src_heat),
            source_momentum: Some(src_mom),
        }
    }
}

fn check_exponent(p: u32) -> Result<(), AnalysisError> {
    if p == 2 || p == 6 {
        Ok(())
    } else {
        Err(AnalysisError::InvalidArgument(format!(
            "unsupported norm exponent {p}; supported exponents are 2 and 6"
        )))
    }
}

/// L_p norm of a coefficient field over the mesh, by quadrature.
pub fn norm_lp(
    space: &Space,
    coeffs: &[f64],
    p: u32,
    quad: &Quadrature,
) -> Result<f64, AnalysisError> {
    check_exponent(p)?;
    let mut acc = 0.0;
    integrate(space, quad, |t, bary, w| {
        let v = match space.kind {
            Kind::Scalar => space.eval_scalar(coeffs, t, bary).0.abs(),
            Kind::Vector => space.eval_vector(coeffs, t, bary).0.norm(),
        };
        acc += w * v.powi(p as i32);
    });
    Ok(acc.powf(1.0 / p as f64))
}

/// W^1_p norm: (|f|_p^p + |grad f|_p^p)^(1/p).
pub fn norm_w1p(
    space: &Space,
    coeffs: &[f64],
    p: u32,
    quad: &Quadrature,
) -> Result<f64, AnalysisError> {
    check_exponent(p)?;
    let mut acc = 0.0;
    integrate(space, quad, |t, bary, w| {
        match space.kind {
            Kind::Scalar => {
                let (v, g) = space.eval_scalar(coeffs, t, bary);
                acc += w * (v.abs().powi(p as i32) + g.norm().powi(p as i32));
            }
            Kind::Vector => {
                let (v, g) = space.eval_vector(coeffs, t, bary);
                let gnorm = (g.row(0).norm_sq() + g.row(1).norm_sq()).sqrt();
                acc += w * (v.norm().powi(p as i32) + gnorm.powi(p as i32));
            }
        };
    });
    Ok(acc.powf(1.0 / p as f64))
}

fn integrate(space: &Space, quad: &Quadrature, mut f: impl FnMut(u32, [f64; 3], f64)) {
    let mesh = &space.mesh;
    for t in 0..mesh.n_triangles() as u32 {
        let det = 2.0 * mesh.area(t);
        for (bary, &w) in quad.points.iter().zip(&quad.weights) {
            f(t, *bary, w * det);
        }
    }
}

/// The seven error measures of a convergence study.
#[derive(Clone, Copy, Debug, Default)]
pub struct FieldErrors {
    pub phi_l6: f64,
    pub temp_l6: f64,
    pub vel_l2: f64,
    pub phi_w16: f64,
    pub temp_w16: f64,
    pub vel_h1: f64,
    pub pres_l2: f64,
}

impl FieldErrors {
    pub const KEYS: [&'static str; 7] = [
        "phi_L6", "T_L6", "u_L2", "phi_W16", "T_W16", "u_H1", "p_L2",
    ];

    pub fn get(&self, key: &str) -> f64 {
        match key {
            "phi_L6" => self.phi_l6,
            "T_L6" => self.temp_l6,
            "u_L2" => self.vel_l2,
            "phi_W16" => self.phi_w16,
            "T_W16" => self.temp_w16,
            "u_H1" => self.vel_h1,
            "p_L2" => self.pres_l2,
            other => panic!("unknown error key {other}"),
        }
    }
}

/// Reference solution a study compares against.
pub enum Reference<'a> {
    Exact(&'a MmsCase),
    Grid {
        problem: &'a Problem,
        state: &'a FieldState,
    },
}

impl Reference<'_> {
    fn phi(&self, x: Vec2) -> (f64, Vec2) {
        match self {
            Reference::Exact(m) => ((m.phi.value)(x), (m.phi.grad)(x)),
            Reference::Grid { problem, state } => {
                let (t, bary) = problem.mesh.locate(x);
                problem.phi_space.eval_scalar(state.phi(), t, bary)
            }
        }
    }

    fn temp(&self, x: Vec2) -> (f64, Vec2) {
        match self {
            Reference::Exact(m) => ((m.temp.value)(x), (m.temp.grad)(x)),
            Reference::Grid { problem, state } => {
                let (t, bary) = problem.mesh.locate(x);
                problem.temp_space.eval_scalar(state.temp(), t, bary)
            }
        }
    }

    fn vel(&self, x: Vec2) -> (Vec2, Mat2) {
        match self {
            Reference::Exact(m) => ((m.vel.value)(x), (m.vel.grad)(x)),
            Reference::Grid { problem, state } => {
                let (t, bary) = problem.mesh.locate(x);
                problem.vel_space.eval_vector(state.vel(), t, bary)
            }
        }
    }

    fn pres(&self, x: Vec2) -> f64 {
        match self {
            Reference::Exact(m) => (m.pressure.value)(x),
            Reference::Grid { problem, state } => {
                let (t, bary) = problem.mesh.locate(x);
                problem
                    .pressure_space
                    .eval_scalar(state.pressure(), t, bary)
                    .0
            }
        }
    }
}

/// Measures all seven error norms of a discrete state against a reference,
/// integrating on the state's own mesh.
pub fn field_errors(problem: &Problem, state: &FieldState, reference: &Reference) -> FieldErrors {
    let mesh = &problem.mesh;
    let quad = &problem.quad;
    let mut acc = FieldErrors::default();
    for t in 0..mesh.n_triangles() as u32 {
        let coords = mesh.tri_vertices(t);
        let det = 2.0 * mesh.area(t);
        for (bary, &wq) in quad.points.iter().zip(&quad.weights) {
            let w = wq * det;
            let x = crate::fespace::barycentric_point(&coords, *bary);

            let (phi_h, gphi_h) = problem.phi_space.eval_scalar(state.phi(), t, *bary);
            let (phi_x, gphi_x) = reference.phi(x);
            let e = phi_x - phi_h;
            let ge = gphi_x - gphi_h;
            acc.phi_l6 += w * e.abs().powi(6);
            acc.phi_w16 += w * (e.abs().powi(6) + ge.norm().powi(6));

            let (t_h, gt_h) = problem.temp_space.eval_scalar(state.temp(), t, *bary);
            let (t_x, gt_x) = reference.temp(x);
            let e = t_x - t_h;
            let ge = gt_x - gt_h;
            acc.temp_l6 += w * e.abs().powi(6);
            acc.temp_w16 += w * (e.abs().powi(6) + ge.norm().powi(6));

            let (u_h, gu_h) = problem.vel_space.eval_vector(state.vel(), t, *bary);
            let (u_x, gu_x) = reference.vel(x);
            let e = u_x - u_h;
            let ge0 = gu_x.row(0) - gu_h.row(0);
            let ge1 = gu_x.row(1) - gu_h.row(1);
            acc.vel_l2 += w * e.norm_sq();
            acc.vel_h1 += w * (e.norm_sq() + ge0.norm_sq() + ge1.norm_sq());

            let p_h = problem
                .pressure_space
                .eval_scalar(state.pressure(), t, *bary)
                .0;
            let e = reference.pres(x) - p_h;
            acc.pres_l2 += w * e * e;
        }
    }
    FieldErrors {
        phi_l6: acc.phi_l6.powf(1.0 / 6.0),
        temp_l6: acc.temp_l6.powf(1.0 / 6.0),
        vel_l2: acc.vel_l2.sqrt(),
        phi_w16: acc.phi_w16.powf(1.0 / 6.0),
        temp_w16: acc.temp_w16.powf(1.0 / 6.0),
        vel_h1: acc.vel_h1.sqrt(),
        pres_l2: acc.pres_l2.sqrt(),
    }
}

/// Maximum over the pressure basis of |(q, div u)|, the discrete
/// divergence orthogonality defect.
pub fn divergence_moments(problem: &Problem, state: &FieldState) -> f64 {
    let mesh = &problem.mesh;
    let mut moments = vec![0.0f64; problem.layout.n_pressure];
    for t in 0..mesh.n_triangles() as u32 {
        let verts = problem.pressure_space.element_nodes(t);
        let det = 2.0 * mesh.area(t);
        for (bary, &wq) in problem.quad.points.iter().zip(&problem.quad.weights) {
            let (_, gu) = problem.vel_space.eval_vector(state.vel(), t, *bary);
            let div = gu.trace();
            let basis = crate::fespace::eval_basis_unchecked(crate::fespace::Degree::P1, *bary);
            for i in 0..3 {
                moments[verts[i] as usize] += wq * det * basis.values[i] * div;
            }
        }
    }
    moments.into_iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Integral of the discrete pressure over the domain.
pub fn integral_pressure(problem: &Problem, state: &FieldState) -> f64 {
    problem
        .mass_p1()
        .iter()
        .zip(state.pressure())
        .map(|(m, p)| m * p)
        .sum()
}

/// Mean of the discrete concentration.
pub fn mean_phi(problem: &Problem, state: &FieldState) -> f64 {
    let int: f64 = problem
        .mass_p2()
        .iter()
        .zip(state.phi())
        .map(|(m, p)| m * p)
        .sum();
    int / problem.domain_area()
}

/// One row of a convergence table.
#[derive(Clone, Debug)]
pub struct ErrorRecord {
    pub nt: usize,
    pub h: f64,
    pub errors: FieldErrors,
    /// Orders against the previous row; absent on the first row.
    pub eoc: Option<FieldErrors>,
}

/// Result of a convergence study; `aborted` carries the reason when a
/// level failed to converge and the table is partial.
#[derive(Debug)]
pub struct EocStudy {
    pub records: Vec<ErrorRecord>,
    pub aborted: Option<String>,
}

/// Convergence study configuration.
#[derive(Clone)]
pub struct EocConfig {
    pub width: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    /// Number of study levels; the base mesh is refined level-by-level.
    pub levels: usize,
    /// Extra uniform refinements of the finest level for the fine-grid
    /// reference; one such refinement is two bisection steps' worth.
    pub reference_extra: usize,
    pub newton: NewtonConfig,
    pub sequential: bool,
}

/// What a study measures errors against.
pub enum EocMode<'a> {
    Exact(&'a MmsCase),
    FineGrid,
}

/// Runs the uniform-refinement study: solves on each level, measures the
/// seven error norms against the reference, and fills in experimental
/// orders of convergence as log2 of consecutive error ratios.
pub fn eoc_study(
    params: ModelParams,
    laws: CoefficientLaws,
    case: &CaseSetup,
    config: &EocConfig,
    mode: EocMode,
) -> Result<EocStudy, AnalysisError> {
    if config.levels < 2 {
        return Err(AnalysisError::InvalidArgument("levels ≥ 2 required".into()));
    }

    let mut meshes = Vec::with_capacity(config.levels);
    let base = Mesh::rectangle(config.width, config.height, config.nx, config.ny)
        .map_err(|e| AnalysisError::InvalidArgument(e.to_string()))?;
    meshes.push(base);
    for _ in 1..config.levels {
        let next = meshes.last().unwrap().refine_uniform();
        meshes.push(next);
    }

    // Fine-grid mode solves the extra-refined reference first.
    let reference_solution: Option<(Problem, FieldState)> = match &mode {
        EocMode::Exact(_) => None,
        EocMode::FineGrid => {
            let mut fine = meshes.last().unwrap().clone();
            for _ in 0..config.reference_extra.max(1) {
                fine = fine.refine_uniform();
            }
            let mut problem = Problem::new(Arc::new(fine), params, laws, case.clone())?;
            problem.sequential = config.sequential;
            let (state, report) = solver::solve(&problem, &config.newton)?;
            if !report.converged {
                return Ok(EocStudy {
                    records: Vec::new(),
                    aborted: Some(format!(
                        "reference solve did not converge (residual {:.3e})",
                        report.residual_history.last().copied().unwrap_or(f64::NAN)
                    )),
                });
            }
            Some((problem, state))
        }
    };

    let mut study = EocStudy {
        records: Vec::new(),
        aborted: None,
    };
    for (level, mesh) in meshes.into_iter().enumerate() {
        let nt = mesh.n_triangles();
        let h = mesh.mesh_size();
        let mut problem = Problem::new(Arc::new(mesh), params, laws, case.clone())?;
        problem.sequential = config.sequential;
        let (state, report) = solver::solve(&problem, &config.newton)?;
        if !report.converged {
            study.aborted = Some(format!(
                "level {level} (nt = {nt}) did not converge (residual {:.3e})",
                report.residual_history.last().copied().unwrap_or(f64::NAN)
            ));
            break;
        }
        let errors = match (&mode, &reference_solution) {
            (EocMode::Exact(mms), _) => field_errors(&problem, &state, &Reference::Exact(mms)),
            (EocMode::FineGrid, Some((rp, rs))) => field_errors(
                &problem,
                &state,
                &Reference::Grid {
                    problem: rp,
                    state: rs,
                },
            ),
            (EocMode::FineGrid, None) => unreachable!(),
        };
        let eoc = study
            .records
            .last()
            .map(|prev| eoc_between(&prev.errors, &errors));
        study.records.push(ErrorRecord { nt, h, errors, eoc });
    }
    Ok(study)
}

/// Observed order between two successive uniform levels (h halves).
pub fn eoc_between(coarse: &FieldErrors, fine: &FieldErrors) -> FieldErrors {
    let rate = |a: f64, b: f64| (a / b).log2();
    FieldErrors {
        phi_l6: rate(coarse.phi_l6, fine.phi_l6),
        temp_l6: rate(coarse.temp_l6, fine.temp_l6),
        vel_l2: rate(coarse.vel_l2, fine.vel_l2),
        phi_w16: rate(coarse.phi_w16, fine.phi_w16),
        temp_w16: rate(coarse.temp_w16, fine.temp_w16),
        vel_h1: rate(coarse.vel_h1, fine.vel_h1),
        pres_l2: rate(coarse.pres_l2, fine.pres_l2),
    }
}

/// Scientific notation with five significant digits and a two-digit
/// zero-padded exponent, e.g. `3.0296e-04`.
pub fn sci5(x: f64) -> String {
    let s = format!("{x:.4e}");
    match s.split_once('e') {
        Some((mant, exp)) => {
            let e: i32 = exp.parse().unwrap_or(0);
            format!("{mant}e{}{:02}", if e < 0 { "-" } else { "+" }, e.abs())
        }
        None => s,
    }
}

/// Writes the convergence table as CSV with header
/// `nt,phi_L6,phi_eoc,T_L6,T_eoc,u_L2,u_eoc`; order cells of the first row
/// are empty.
pub fn write_eoc_csv<W: Write>(records: &[ErrorRecord], w: &mut W) -> io::Result<()> {
    writeln!(w, "nt,phi_L6,phi_eoc,T_L6,T_eoc,u_L2,u_eoc")?;
    for rec in records {
        let fmt_eoc = |f: fn(&FieldErrors) -> f64| -> String {
            rec.eoc
                .as_ref()
                .map_or(String::new(), |e| format!("{:.2}", f(e)))
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            rec.nt,
            sci5(rec.errors.phi_l6),
            fmt_eoc(|e| e.phi_l6),
            sci5(rec.errors.temp_l6),
            fmt_eoc(|e| e.temp_l6),
            sci5(rec.errors.vel_l2),
            fmt_eoc(|e| e.vel_l2),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::Degree;
    use crate::mesh::Mesh;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn unit_square(n: usize) -> Arc<Mesh> {
        Arc::new(Mesh::rectangle(1.0, 1.0, n, n).unwrap())
    }

    #[test]
    fn norm_examples() {
        let quad = Quadrature::for_degree(6).unwrap();
        let mesh = unit_square(4);
        let space = Space::new(&mesh, Degree::P2, Kind::Scalar);

        let ones = space.interpolate(|_| 1.0);
        assert!((norm_lp(&space, &ones, 2, &quad).unwrap() - 1.0).abs() < 1e-13);

        let mesh2 = Arc::new(Mesh::rectangle(2.0, 1.0, 4, 2).unwrap());
        let space2 = Space::new(&mesh2, Degree::P2, Kind::Scalar);
        let ones2 = space2.interpolate(|_| 1.0);
        let expected = 2.0f64.powf(1.0 / 6.0);
        assert!((norm_lp(&space2, &ones2, 6, &quad).unwrap() - expected).abs() < 1e-13);

        let xs = space.interpolate(|p| p.x);
        assert!((norm_lp(&space, &xs, 2, &quad).unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-13);

        // W^1_2 of f = x: the gradient contributes 1
        let expected = (1.0f64 / 3.0 + 1.0).sqrt();
        assert!((norm_w1p(&space, &xs, 2, &quad).unwrap() - expected).abs() < 1e-13);

        // constants: W-norm equals L-norm
        assert!(
            (norm_w1p(&space, &ones, 6, &quad).unwrap()
                - norm_lp(&space, &ones, 6, &quad).unwrap())
            .abs()
                < 1e-13
        );

        assert!(norm_lp(&space, &ones, 4, &quad).is_err());
    }

    #[test]
    fn norm_homogeneity_and_triangle_inequality() {
        let quad = Quadrature::for_degree(6).unwrap();
        let mesh = unit_square(3);
        let space = Space::new(&mesh, Degree::P2, Kind::Scalar);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let f: Vec<f64> = (0..space.dof_count())
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let g: Vec<f64> = (0..space.dof_count())
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        for p in [2u32, 6] {
            for _ in 0..5 {
                let alpha: f64 = 4.0 * (rng.random::<f64>() - 0.5);
                let scaled: Vec<f64> = f.iter().map(|v| alpha * v).collect();
                let n1 = norm_lp(&space, &scaled, p, &quad).unwrap();
                let n2 = alpha.abs() * norm_lp(&space, &f, p, &quad).unwrap();
                assert!((n1 - n2).abs() <= 1e-12 * n2.max(1e-30));
            }
            let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
            let ns = norm_lp(&space, &sum, p, &quad).unwrap();
            let nf = norm_lp(&space, &f, p, &quad).unwrap();
            let ng = norm_lp(&space, &g, p, &quad).unwrap();
            assert!(ns <= nf + ng + 1e-12);
            let nw = norm_w1p(&space, &sum, p, &quad).unwrap();
            assert!(
                nw <= norm_w1p(&space, &f, p, &quad).unwrap()
                    + norm_w1p(&space, &g, p, &quad).unwrap()
                    + 1e-12
            );
        }
    }

    #[test]
    fn mms_fields_are_self_consistent() {
        // hand-coded gradients and Laplacians against central differences
        let eps = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for flavor in [MmsFlavor::Trigonometric, MmsFlavor::Polynomial] {
            let mms = make_mms(flavor);
            for _ in 0..200 {
                let x = Vec2::new(
                    0.05 + 0.9 * rng.random::<f64>(),
                    0.05 + 0.9 * rng.random::<f64>(),
                );
                let ex = Vec2::new(eps, 0.0);
                let ey = Vec2::new(0.0, eps);
                for field in [&mms.phi, &mms.temp, &mms.pressure] {
                    let g = (field.grad)(x);
                    let fdx = ((field.value)(x + ex) - (field.value)(x - ex)) / (2.0 * eps);
                    let fdy = ((field.value)(x + ey) - (field.value)(x - ey)) / (2.0 * eps);
                    assert!((g.x - fdx).abs() < 1e-8 * (1.0 + g.x.abs()));
                    assert!((g.y - fdy).abs() < 1e-8 * (1.0 + g.y.abs()));
                    let lap = (field.laplacian)(x);
                    let fdl = ((field.grad)(x + ex).x - (field.grad)(x - ex).x) / (2.0 * eps)
                        + ((field.grad)(x + ey).y - (field.grad)(x - ey).y) / (2.0 * eps);
                    assert!((lap - fdl).abs() < 1e-7 * (1.0 + lap.abs()));
                }
                // velocity: gradient rows, Laplacian, exact divergence
                let gu = (mms.vel.grad)(x);
                let fdx = ((mms.vel.value)(x + ex) - (mms.vel.value)(x - ex)) * (1.0 / (2.0 * eps));
                let fdy = ((mms.vel.value)(x + ey) - (mms.vel.value)(x - ey)) * (1.0 / (2.0 * eps));
                assert!((gu.0[0][0] - fdx.x).abs() < 1e-7);
                assert!((gu.0[1][0] - fdx.y).abs() < 1e-7);
                assert!((gu.0[0][1] - fdy.x).abs() < 1e-7);
                assert!((gu.0[1][1] - fdy.y).abs() < 1e-7);
                assert!(gu.trace().abs() < 1e-13, "divergence at {x:?}");
                let lap = (mms.vel.laplacian)(x);
                let fdl_x = ((mms.vel.grad)(x + ex).0[0][0] - (mms.vel.grad)(x - ex).0[0][0])
                    / (2.0 * eps)
                    + ((mms.vel.grad)(x + ey).0[0][1] - (mms.vel.grad)(x - ey).0[0][1])
                        / (2.0 * eps);
                assert!((lap.x - fdl_x).abs() < 1e-6 * (1.0 + lap.x.abs()));
            }
        }
    }

    #[test]
    fn mms_divergence_free_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for flavor in [MmsFlavor::Trigonometric, MmsFlavor::Polynomial] {
            let mms = make_mms(flavor);
            for _ in 0..50 {
                let x = Vec2::new(rng.random(), rng.random());
                assert!((mms.vel.grad)(x).trace().abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn mms_pressure_has_zero_mean() {
        let quad = Quadrature::for_degree(6).unwrap();
        let mesh = unit_square(32);
        for flavor in [MmsFlavor::Trigonometric, MmsFlavor::Polynomial] {
            let mms = make_mms(flavor);
            let mut integral = 0.0;
            for t in 0..mesh.n_triangles() as u32 {
                let coords = mesh.tri_vertices(t);
                let det = 2.0 * mesh.area(t);
                for (bary, &w) in quad.points.iter().zip(&quad.weights) {
                    let x = crate::fespace::barycentric_point(&coords, *bary);
                    integral += w * det * (mms.pressure.value)(x);
                }
            }
            assert!(integral.abs() < 1e-10, "{flavor:?}: {integral}");
        }
    }

    #[test]
    fn eoc_recompute_via_independent_arithmetic() {
        let coarse = FieldErrors {
            phi_l6: 3.0296e-4,
            temp_l6: 5.3766e-5,
            vel_l2: 2.1233e-4,
            phi_w16: 1.0e-2,
            temp_w16: 2.0e-2,
            vel_h1: 3.0e-2,
            pres_l2: 4.0e-2,
        };
        let fine = FieldErrors {
            phi_l6: 2.6758e-5,
            temp_l6: 5.2109e-6,
            vel_l2: 2.7126e-5,
            phi_w16: 2.5e-3,
            temp_w16: 5.0e-3,
            vel_h1: 7.5e-3,
            pres_l2: 1.0e-2,
        };
        let eoc = eoc_between(&coarse, &fine);
        for key in FieldErrors::KEYS {
            let independent = (coarse.get(key).ln() - fine.get(key).ln()) / 2.0f64.ln();
            assert!((eoc.get(key) - independent).abs() < 1e-12);
        }
        // log2 ratios of this error pair
        assert!((eoc.phi_l6 - 3.50).abs() < 0.005);
        assert!((eoc.temp_l6 - 3.37).abs() < 0.005);
        assert!((eoc.vel_l2 - 2.97).abs() < 0.005);
    }

    #[test]
    fn sci5_formatting() {
        assert_eq!(sci5(3.0296e-4), "3.0296e-04");
        assert_eq!(sci5(4.2396e-7), "4.2396e-07");
        assert_eq!(sci5(1.0), "1.0000e+00");
        assert_eq!(sci5(-2.5e3), "-2.5000e+03");
    }

    #[test]
    fn eoc_study_requires_two_levels() {
        let mms = make_mms(MmsFlavor::Trigonometric);
        let params = ModelParams::constants_one();
        let laws = crate::model::coefficients_alumina();
        let case = mms.case_setup(&params, &laws);
        let config = EocConfig {
            width: 1.0,
            height: 1.0,
            nx: 4,
            ny: 4,
            levels: 1,
            reference_extra: 1,
            newton: NewtonConfig::default(),
            sequential: true,
        };
        match eoc_study(params, laws, &case, &config, EocMode::Exact(&mms)) {
            Err(AnalysisError::InvalidArgument(msg)) => {
                assert!(msg.contains("levels ≥ 2 required"));
            }
            other => panic!("expected invalid-argument, got {other:?}"),
        }
    }
}
