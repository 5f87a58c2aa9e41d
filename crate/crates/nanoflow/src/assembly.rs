//! Residual and Jacobian assembly for the coupled system.
//!
//! Unknowns are ordered phi | T | u | p | multipliers in one flat vector.
//! The weak residual of a state U = (phi, T, u, p) tested with
//! (psi, th, v, q) reads, with j = -(grad phi + c_th h(phi) grad T):
//!
//!   c_dphi (grad phi, grad psi) + c_dphi (sigma[c_th h(phi) grad T], grad psi)
//!       + (u . grad phi, psi) - (s_phi, psi)
//!   + c_dT (k(phi) grad T, grad th) + ((c_fT j + eta(phi) u) . grad T, th) - (f, th)
//!   + c_mu (mu(phi)/2 D(u), D(v)) + ((c_fu j + rho(phi) u) . grad u, v)
//!       - (p, div v) + beta (T e_g, v) - (g, v)
//!   + (q, div u)
//!
//! where sigma is the optional radial cut-off (identity when disabled) and
//! the c_* are the constant prefactors from `ModelParams::coefficients`.
//! The temperature convection is assembled in this convective form, not as
//! div(T j); the two agree exactly only when the concentration equation is
//! satisfied, and the convective form is what the discrete problem uses.
//! The Jacobian is the exact term-by-term derivative of this form, so
//! finite differences of the residual converge to the Jacobian action at
//! second order; that consistency is the load-bearing test of this module.
//!
//! Dirichlet dofs stay in the system as identity rows with zero residual.
//! The zero-mean pressure constraint (and, for the cavity, the prescribed
//! mean concentration) is a scalar Lagrange multiplier bordering the
//! matrix with mass-vector rows and columns.
//!
//! Element contributions are computed independently per element (pure map)
//! and scattered in element order, so assembly is bitwise deterministic
//! whether the map runs sequentially or on the thread pool.

use std::sync::Arc;

use thiserror::Error;

use crate::exec;
use crate::fespace::{
    barycentric_point, eval_basis_unchecked, BasisEval, Degree, ElementGeometry, Kind, Quadrature,
    Space,
};
use crate::geom::{Mat2, Vec2};
use crate::mesh::{BoundaryTag, Mesh};
use crate::model::{
    cutoff, cutoff_jacobian, CaseSetup, Coeffs, CoefficientLaws, ModelError, ModelParams,
    ScalarBc, VelocityBc,
};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("assembly: {0}")]
    Invalid(String),
}

/// Local dofs per element: 6 phi + 6 T + 12 u + 3 p.
const N_LOC: usize = 27;
const CHUNK: usize = 256;

/// Dof offsets of the flat block layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    /// Scalar P2 dofs (one per vertex or edge midpoint).
    pub n_scalar: usize,
    /// P1 pressure dofs (one per vertex).
    pub n_pressure: usize,
    /// Whether the mean-concentration multiplier row exists.
    pub mean_phi: bool,
}

impl Layout {
    pub fn phi_offset(&self) -> usize {
        0
    }
    pub fn temp_offset(&self) -> usize {
        self.n_scalar
    }
    pub fn vel_offset(&self) -> usize {
        2 * self.n_scalar
    }
    pub fn pressure_offset(&self) -> usize {
        4 * self.n_scalar
    }
    pub fn lambda_p(&self) -> usize {
        4 * self.n_scalar + self.n_pressure
    }
    pub fn lambda_phi(&self) -> Option<usize> {
        self.mean_phi.then(|| self.lambda_p() + 1)
    }
    pub fn total(&self) -> usize {
        self.lambda_p() + 1 + usize::from(self.mean_phi)
    }

    /// Human-readable block name of a dof index, for diagnostics.
    pub fn block_name(&self, dof: usize) -> &'static str {
        if dof < self.temp_offset() {
            "concentration"
        } else if dof < self.vel_offset() {
            "temperature"
        } else if dof < self.pressure_offset() {
            "velocity"
        } else if dof < self.lambda_p() {
            "continuity"
        } else if dof == self.lambda_p() {
            "mean-pressure multiplier"
        } else {
            "mean-concentration multiplier"
        }
    }
}

/// Coefficient vectors of all fields plus the scalar multipliers, stored as
/// one flat vector in layout order.
#[derive(Clone, Debug)]
pub struct FieldState {
    data: Vec<f64>,
    layout: Layout,
}

impl FieldState {
    pub fn zeros(layout: Layout) -> FieldState {
        FieldState {
            data: vec![0.0; layout.total()],
            layout,
        }
    }

    pub fn from_flat(data: Vec<f64>, layout: Layout) -> FieldState {
        assert_eq!(data.len(), layout.total());
        FieldState { data, layout }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn phi(&self) -> &[f64] {
        &self.data[..self.layout.n_scalar]
    }

    pub fn phi_mut(&mut self) -> &mut [f64] {
        &mut self.data[..self.layout.n_scalar]
    }

    pub fn temp(&self) -> &[f64] {
        &self.data[self.layout.temp_offset()..self.layout.vel_offset()]
    }

    pub fn temp_mut(&mut self) -> &mut [f64] {
        let (a, b) = (self.layout.temp_offset(), self.layout.vel_offset());
        &mut self.data[a..b]
    }

    pub fn vel(&self) -> &[f64] {
        &self.data[self.layout.vel_offset()..self.layout.pressure_offset()]
    }

    pub fn vel_mut(&mut self) -> &mut [f64] {
        let (a, b) = (self.layout.vel_offset(), self.layout.pressure_offset());
        &mut self.data[a..b]
    }

    pub fn pressure(&self) -> &[f64] {
        &self.data[self.layout.pressure_offset()..self.layout.lambda_p()]
    }

    pub fn pressure_mut(&mut self) -> &mut [f64] {
        let (a, b) = (self.layout.pressure_offset(), self.layout.lambda_p());
        &mut self.data[a..b]
    }

    pub fn lambda_p(&self) -> f64 {
        self.data[self.layout.lambda_p()]
    }

    pub fn lambda_phi(&self) -> f64 {
        self.layout
            .lambda_phi()
            .map(|i| self.data[i])
            .unwrap_or(0.0)
    }

    pub fn phi_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in self.phi() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Sparse matrix in compressed-column form together with the residual, in
/// the block layout of [`Layout`]. Dirichlet rows are identity rows with
/// zero residual entries.
#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub n: usize,
    pub col_ptr: Arc<Vec<u32>>,
    pub row_idx: Arc<Vec<u32>>,
    pub values: Vec<f64>,
    /// Residual vector at the linearization state.
    pub rhs: Vec<f64>,
    pub layout: Layout,
}

impl SparseSystem {
    /// Builds a system from triplets; duplicate entries are summed.
    pub fn from_triplets(
        n: usize,
        triplets: &[(usize, usize, f64)],
        rhs: Vec<f64>,
        layout: Layout,
    ) -> SparseSystem {
        assert_eq!(rhs.len(), n);
        let mut per_col: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for &(r, c, v) in triplets {
            per_col[c].push((r as u32, v));
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0u32);
        for col in &mut per_col {
            col.sort_by_key(|e| e.0);
            let mut last: Option<u32> = None;
            for &(r, v) in col.iter() {
                if last == Some(r) {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r);
                    values.push(v);
                    last = Some(r);
                }
            }
            col_ptr.push(row_idx.len() as u32);
        }
        SparseSystem {
            n,
            col_ptr: Arc::new(col_ptr),
            row_idx: Arc::new(row_idx),
            values,
            rhs,
            layout,
        }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Entry lookup; zero for positions outside the pattern.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let lo = self.col_ptr[col] as usize;
        let hi = self.col_ptr[col + 1] as usize;
        match self.row_idx[lo..hi].binary_search(&(row as u32)) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            let xc = x[c];
            for k in self.col_ptr[c] as usize..self.col_ptr[c + 1] as usize {
                y[self.row_idx[k] as usize] += self.values[k] * xc;
            }
        }
        y
    }

    /// Infinity norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        let mut sums = vec![0.0; self.n];
        for k in 0..self.values.len() {
            sums[self.row_idx[k] as usize] += self.values[k].abs();
        }
        sums.into_iter().fold(0.0, f64::max)
    }
}

/// Sparsity pattern plus precomputed constraint bookkeeping, fixed per
/// problem and shared by every assembled system.
#[derive(Debug)]
struct Pattern {
    col_ptr: Arc<Vec<u32>>,
    row_idx: Arc<Vec<u32>>,
    /// Value slots whose row is a constrained dof (zeroed by constraints).
    constrained_slots: Vec<u32>,
    /// (dof, diagonal slot) for every constrained dof.
    diag_slots: Vec<(u32, u32)>,
    /// (slot, pressure dof) pairs of the mean-pressure multiplier row.
    lambda_p_row: Vec<(u32, u32)>,
    /// (slot, pressure dof) pairs of the multiplier column; the entry sits
    /// in the matching continuity row.
    lambda_p_col: Vec<(u32, u32)>,
    lambda_phi_row: Vec<(u32, u32)>,
    lambda_phi_col: Vec<(u32, u32)>,
}

/// A fully specified discrete problem: mesh, spaces, quadrature, physical
/// parameters, case setup, and the assembly bookkeeping.
pub struct Problem {
    pub mesh: Arc<Mesh>,
    pub phi_space: Space,
    pub temp_space: Space,
    pub vel_space: Space,
    pub pressure_space: Space,
    pub quad: Quadrature,
    pub params: ModelParams,
    pub laws: CoefficientLaws,
    pub case: CaseSetup,
    pub layout: Layout,
    /// Run element loops on the calling thread only. Results are identical
    /// either way; this is a reproducibility/benchmarking switch.
    pub sequential: bool,
    coeffs: Coeffs,
    /// Reference-frame basis data at each quadrature point: (P2, P1).
    qbasis: Vec<(BasisEval, BasisEval)>,
    /// Integrals of the P2/P1 basis functions, the mass vectors used by the
    /// mean constraints.
    mass_p1: Vec<f64>,
    mass_p2: Vec<f64>,
    area: f64,
    /// (dof, value) Dirichlet table in ascending dof order.
    constrained: Vec<(u32, f64)>,
    is_constrained: Vec<bool>,
    pattern: Pattern,
}

impl Problem {
    pub fn new(
        mesh: Arc<Mesh>,
        params: ModelParams,
        laws: CoefficientLaws,
        case: CaseSetup,
    ) -> Result<Problem, AssemblyError> {
        params.validate()?;
        let mut phi_space = Space::new(&mesh, Degree::P2, Kind::Scalar);
        let mut temp_space = Space::new(&mesh, Degree::P2, Kind::Scalar);
        let mut vel_space = Space::new(&mesh, Degree::P2, Kind::Vector);
        let pressure_space = Space::new(&mesh, Degree::P1, Kind::Scalar);
        let quad = Quadrature::for_degree(6).expect("degree 6 is supported");

        // Dirichlet masks from the case. Constraints accumulate over tags,
        // so a corner shared by a no-slip wall and the slip wall ends up
        // fully pinned: the stronger condition wins.
        for tag in BoundaryTag::ALL {
            let ti = tag.index();
            if let ScalarBc::Dirichlet(f) = &case.phi_bc[ti] {
                for node in phi_space.nodes_on_tag(tag) {
                    let v = f(phi_space.node_coord(node));
                    phi_space.dirichlet[node as usize].get_or_insert(v);
                }
            }
            if let ScalarBc::Dirichlet(f) = &case.temp_bc[ti] {
                for node in temp_space.nodes_on_tag(tag) {
                    let v = f(temp_space.node_coord(node));
                    temp_space.dirichlet[node as usize].get_or_insert(v);
                }
            }
            match &case.vel_bc[ti] {
                VelocityBc::NoSlip => {
                    for node in vel_space.nodes_on_tag(tag) {
                        vel_space.dirichlet[2 * node as usize].get_or_insert(0.0);
                        vel_space.dirichlet[2 * node as usize + 1].get_or_insert(0.0);
                    }
                }
                VelocityBc::Slip => {
                    let c = CaseSetup::slip_normal_component(tag);
                    for node in vel_space.nodes_on_tag(tag) {
                        vel_space.dirichlet[2 * node as usize + c].get_or_insert(0.0);
                    }
                }
                VelocityBc::Dirichlet(f) => {
                    for node in vel_space.nodes_on_tag(tag) {
                        let v = f(vel_space.node_coord(node));
                        vel_space.dirichlet[2 * node as usize].get_or_insert(v.x);
                        vel_space.dirichlet[2 * node as usize + 1].get_or_insert(v.y);
                    }
                }
                VelocityBc::Free => {}
            }
        }

        let layout = Layout {
            n_scalar: phi_space.n_nodes(),
            n_pressure: pressure_space.n_nodes(),
            mean_phi: case.mean_phi.is_some(),
        };

        let qbasis: Vec<(BasisEval, BasisEval)> = quad
            .points
            .iter()
            .map(|&b| {
                (
                    eval_basis_unchecked(Degree::P2, b),
                    eval_basis_unchecked(Degree::P1, b),
                )
            })
            .collect();

        let mut mass_p1 = vec![0.0; pressure_space.n_nodes()];
        let mut mass_p2 = vec![0.0; phi_space.n_nodes()];
        for t in 0..mesh.n_triangles() as u32 {
            let geo = ElementGeometry::new(&mesh.tri_vertices(t));
            let nodes2 = phi_space.element_nodes(t);
            let nodes1 = pressure_space.element_nodes(t);
            for ((p2, p1), &w) in qbasis.iter().zip(&quad.weights) {
                let wx = w * geo.det;
                for i in 0..6 {
                    mass_p2[nodes2[i] as usize] += wx * p2.values[i];
                }
                for i in 0..3 {
                    mass_p1[nodes1[i] as usize] += wx * p1.values[i];
                }
            }
        }
        let area = mesh.total_area();

        let mut constrained = Vec::new();
        let mut is_constrained = vec![false; layout.total()];
        {
            let mut push = |dof: usize, v: f64| {
                constrained.push((dof as u32, v));
                is_constrained[dof] = true;
            };
            for (n, bc) in phi_space.dirichlet.iter().enumerate() {
                if let Some(v) = bc {
                    push(layout.phi_offset() + n, *v);
                }
            }
            for (n, bc) in temp_space.dirichlet.iter().enumerate() {
                if let Some(v) = bc {
                    push(layout.temp_offset() + n, *v);
                }
            }
            for (d, bc) in vel_space.dirichlet.iter().enumerate() {
                if let Some(v) = bc {
                    push(layout.vel_offset() + d, *v);
                }
            }
        }

        let pattern = build_pattern(&mesh, &phi_space, &pressure_space, layout, &is_constrained);

        Ok(Problem {
            coeffs: params.coefficients(),
            mesh,
            phi_space,
            temp_space,
            vel_space,
            pressure_space,
            quad,
            params,
            laws,
            case,
            layout,
            sequential: false,
            qbasis,
            mass_p1,
            mass_p2,
            area,
            constrained,
            is_constrained,
            pattern,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.layout.total()
    }

    pub fn domain_area(&self) -> f64 {
        self.area
    }

    pub fn mass_p1(&self) -> &[f64] {
        &self.mass_p1
    }

    pub fn mass_p2(&self) -> &[f64] {
        &self.mass_p2
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.is_constrained[dof]
    }

    /// Zero state with Dirichlet values (and, for a prescribed-mean case,
    /// the mean concentration) filled in.
    pub fn initial_state(&self) -> FieldState {
        let mut state = FieldState::zeros(self.layout);
        if let Some(phi_m) = self.case.mean_phi {
            state.phi_mut().fill(phi_m);
        }
        self.impose_dirichlet(&mut state);
        state
    }

    /// Overwrites constrained dofs with their boundary values.
    pub fn impose_dirichlet(&self, state: &mut FieldState) {
        let data = state.as_mut_slice();
        for &(dof, v) in &self.constrained {
            data[dof as usize] = v;
        }
    }

    /// Full residual: element integrals, multiplier rows, Dirichlet rows
    /// zeroed.
    pub fn assemble_residual(&self, state: &FieldState) -> Vec<f64> {
        let mut r = self.assemble_residual_raw(state, None);
        self.add_multiplier_residual(state, &mut r);
        for &(dof, _) in &self.constrained {
            r[dof as usize] = 0.0;
        }
        r
    }

    /// Element-loop part of the residual, without constraint handling.
    /// `elements` restricts the loop to a subset (used by additivity tests).
    #[doc(hidden)]
    pub fn assemble_residual_raw(&self, state: &FieldState, elements: Option<&[u32]>) -> Vec<f64> {
        let mut r = vec![0.0; self.layout.total()];
        let nt = self.mesh.n_triangles();
        match elements {
            None => {
                let outputs = exec::ordered_map(nt, self.sequential, |t| {
                    self.element_residual(t as u32, state)
                });
                for (dofs, vals) in outputs {
                    for i in 0..N_LOC {
                        r[dofs[i] as usize] += vals[i];
                    }
                }
            }
            Some(ids) => {
                for &t in ids {
                    let (dofs, vals) = self.element_residual(t, state);
                    for i in 0..N_LOC {
                        r[dofs[i] as usize] += vals[i];
                    }
                }
            }
        }
        r
    }

    /// Multiplier coupling terms and multiplier-row residuals.
    fn add_multiplier_residual(&self, state: &FieldState, r: &mut [f64]) {
        let lp = state.lambda_p();
        let p_off = self.layout.pressure_offset();
        let mut int_p = 0.0;
        for (v, &m) in self.mass_p1.iter().enumerate() {
            r[p_off + v] += lp * m;
            int_p += m * state.pressure()[v];
        }
        r[self.layout.lambda_p()] = int_p;

        if let (Some(lphi_row), Some(phi_m)) = (self.layout.lambda_phi(), self.case.mean_phi) {
            let lphi = state.lambda_phi();
            let mut int_phi = 0.0;
            for (n, &m) in self.mass_p2.iter().enumerate() {
                r[n] += lphi * m;
                int_phi += m * state.phi()[n];
            }
            r[lphi_row] = int_phi - phi_m * self.area;
        }
    }

    /// Assembles the Jacobian and residual at `state` with all constraint
    /// rows applied.
    pub fn assemble_jacobian(&self, state: &FieldState) -> SparseSystem {
        let mut sys = self.assemble_jacobian_raw(state);
        self.apply_constraints(&mut sys, state);
        sys
    }

    /// Element-loop Jacobian without constraint handling; the rhs holds the
    /// raw residual.
    fn assemble_jacobian_raw(&self, state: &FieldState) -> SparseSystem {
        let mut sys = SparseSystem {
            n: self.layout.total(),
            col_ptr: Arc::clone(&self.pattern.col_ptr),
            row_idx: Arc::clone(&self.pattern.row_idx),
            values: vec![0.0; self.pattern.row_idx.len()],
            rhs: vec![0.0; self.layout.total()],
            layout: self.layout,
        };
        let nt = self.mesh.n_triangles();
        let col_ptr = Arc::clone(&sys.col_ptr);
        let row_idx = Arc::clone(&sys.row_idx);
        exec::chunked_map(
            nt,
            CHUNK,
            self.sequential,
            |t| self.element_jacobian(t as u32, state),
            |_, elem| {
                for i in 0..N_LOC {
                    sys.rhs[elem.dofs[i] as usize] += elem.resid[i];
                }
                for (j, &cdof) in elem.dofs.iter().enumerate() {
                    let col = cdof as usize;
                    let lo = col_ptr[col] as usize;
                    let hi = col_ptr[col + 1] as usize;
                    let rows = &row_idx[lo..hi];
                    for (i, &rdof) in elem.dofs.iter().enumerate() {
                        let v = elem.mat[i * N_LOC + j];
                        if v != 0.0 {
                            let k = rows
                                .binary_search(&rdof)
                                .expect("element entry inside pattern");
                            sys.values[lo + k] += v;
                        }
                    }
                }
            },
        );
        sys
    }

    /// Installs constraint rows into an assembled raw system: multiplier
    /// rows/columns, identity rows for Dirichlet dofs, and the multiplier
    /// contributions to the residual.
    pub fn apply_constraints(&self, sys: &mut SparseSystem, state: &FieldState) {
        self.add_multiplier_residual(state, &mut sys.rhs);
        for &(slot, pdof) in &self.pattern.lambda_p_row {
            sys.values[slot as usize] = self.mass_p1[pdof as usize];
        }
        for &(slot, pdof) in &self.pattern.lambda_p_col {
            sys.values[slot as usize] = self.mass_p1[pdof as usize];
        }
        for &(slot, node) in &self.pattern.lambda_phi_row {
            sys.values[slot as usize] = self.mass_p2[node as usize];
        }
        for &(slot, node) in &self.pattern.lambda_phi_col {
            sys.values[slot as usize] = self.mass_p2[node as usize];
        }
        for &slot in &self.pattern.constrained_slots {
            sys.values[slot as usize] = 0.0;
        }
        for &(dof, slot) in &self.pattern.diag_slots {
            sys.values[slot as usize] = 1.0;
            sys.rhs[dof as usize] = 0.0;
        }
    }

    fn element_residual(&self, t: u32, state: &FieldState) -> ([u32; N_LOC], [f64; N_LOC]) {
        let ctx = ElementContext::new(self, t, state);
        let mut vals = [0.0; N_LOC];
        for (q, ((p2, p1), &w)) in self.qbasis.iter().zip(&self.quad.weights).enumerate() {
            let pt = ctx.point(self, q, p2, p1);
            pt.residual(&ctx, w * ctx.geo.det, &mut vals);
        }
        (ctx.dofs, vals)
    }

    fn element_jacobian(&self, t: u32, state: &FieldState) -> ElemMat {
        let ctx = ElementContext::new(self, t, state);
        let mut out = ElemMat {
            dofs: ctx.dofs,
            resid: [0.0; N_LOC],
            mat: vec![0.0; N_LOC * N_LOC],
        };
        for (q, ((p2, p1), &w)) in self.qbasis.iter().zip(&self.quad.weights).enumerate() {
            let pt = ctx.point(self, q, p2, p1);
            let wx = w * ctx.geo.det;
            pt.residual(&ctx, wx, &mut out.resid);
            pt.jacobian(&ctx, wx, &mut out.mat);
        }
        out
    }
}

struct ElemMat {
    dofs: [u32; N_LOC],
    resid: [f64; N_LOC],
    mat: Vec<f64>,
}

/// Per-element fixed data: dof map, geometry, gathered coefficients.
struct ElementContext {
    dofs: [u32; N_LOC],
    geo: ElementGeometry,
    coords: [Vec2; 3],
    phi: [f64; 6],
    temp: [f64; 6],
    vel: [f64; 12],
    pres: [f64; 3],
    coeffs: Coeffs,
    cutoff_radius: Option<f64>,
}

impl ElementContext {
    fn new(problem: &Problem, t: u32, state: &FieldState) -> ElementContext {
        let layout = problem.layout;
        let nodes = problem.phi_space.element_nodes(t);
        let verts = problem.mesh.triangle(t);
        let coords = problem.mesh.tri_vertices(t);

        let mut dofs = [0u32; N_LOC];
        let mut phi = [0.0; 6];
        let mut temp = [0.0; 6];
        let mut vel = [0.0; 12];
        let mut pres = [0.0; 3];
        for i in 0..6 {
            let n = nodes[i] as usize;
            dofs[i] = n as u32;
            dofs[6 + i] = (layout.temp_offset() + n) as u32;
            dofs[12 + 2 * i] = (layout.vel_offset() + 2 * n) as u32;
            dofs[12 + 2 * i + 1] = (layout.vel_offset() + 2 * n + 1) as u32;
            phi[i] = state.phi()[n];
            temp[i] = state.temp()[n];
            vel[2 * i] = state.vel()[2 * n];
            vel[2 * i + 1] = state.vel()[2 * n + 1];
        }
        for i in 0..3 {
            let v = verts[i] as usize;
            dofs[24 + i] = (layout.pressure_offset() + v) as u32;
            pres[i] = state.pressure()[v];
        }

        ElementContext {
            dofs,
            geo: ElementGeometry::new(&coords),
            coords,
            phi,
            temp,
            vel,
            pres,
            coeffs: problem.coeffs,
            cutoff_radius: problem.params.cutoff_radius,
        }
    }

    /// Evaluates state, coefficient laws and sources at quadrature point `q`.
    fn point<'a>(
        &self,
        problem: &Problem,
        q: usize,
        p2: &'a BasisEval,
        p1: &'a BasisEval,
    ) -> QuadPoint<'a> {
        let mut g = [Vec2::ZERO; 6];
        for i in 0..6 {
            g[i] = self.geo.grad_to_physical(p2.grads[i]);
        }

        let mut phi = 0.0;
        let mut grad_phi = Vec2::ZERO;
        let mut temp = 0.0;
        let mut grad_t = Vec2::ZERO;
        let mut u = Vec2::ZERO;
        let mut gu = Mat2::default();
        for i in 0..6 {
            let s = p2.values[i];
            phi += self.phi[i] * s;
            temp += self.temp[i] * s;
            grad_phi += g[i] * self.phi[i];
            grad_t += g[i] * self.temp[i];
            u.x += self.vel[2 * i] * s;
            u.y += self.vel[2 * i + 1] * s;
            for c in 0..2 {
                let coeff = self.vel[2 * i + c];
                gu.0[c][0] += coeff * g[i].x;
                gu.0[c][1] += coeff * g[i].y;
            }
        }
        let mut pres = 0.0;
        for i in 0..3 {
            pres += self.pres[i] * p1.values[i];
        }

        let x = barycentric_point(&self.coords, problem.quad.points[q]);
        let laws = &problem.laws;
        let c = self.coeffs;

        // Thermophoretic drift y = c_th h(phi) grad T. The concentration
        // equation sees sigma_R(y); every occurrence of j keeps the plain y.
        let h = (laws.h)(phi);
        let y = grad_t * (c.thermo * h);
        let (sigma_y, sigma_jac) = match self.cutoff_radius {
            Some(r) => (cutoff(y, r), cutoff_jacobian(y, r)),
            None => (y, Mat2::IDENTITY),
        };
        let jvec = -(grad_phi + y);

        QuadPoint {
            s: &p2.values,
            g,
            p1: &p1.values,
            grad_phi,
            temp,
            grad_t,
            u,
            gu,
            du: gu.sym(),
            div_u: gu.trace(),
            pres,
            h,
            dh: (laws.dh)(phi),
            k: (laws.k)(phi),
            dk: (laws.dk)(phi),
            mu: (laws.mu)(phi),
            dmu: (laws.dmu)(phi),
            eta: (laws.eta)(phi),
            deta: (laws.deta)(phi),
            rho: (laws.rho)(phi),
            drho: (laws.drho)(phi),
            sigma_y,
            sigma_jac,
            jvec,
            src_phi: problem.case.source_phi.as_ref().map_or(0.0, |f| f(x)),
            src_heat: problem.case.source_heat.as_ref().map_or(0.0, |f| f(x)),
            src_mom: problem
                .case
                .source_momentum
                .as_ref()
                .map_or(Vec2::ZERO, |f| f(x)),
        }
    }
}

/// State, coefficient and basis data at one quadrature point.
struct QuadPoint<'a> {
    s: &'a [f64; 6],
    g: [Vec2; 6],
    p1: &'a [f64; 6],
    grad_phi: Vec2,
    temp: f64,
    grad_t: Vec2,
    u: Vec2,
    gu: Mat2,
    /// Symmetric gradient D(u) = grad u + (grad u)^T.
    du: Mat2,
    div_u: f64,
    pres: f64,
    h: f64,
    dh: f64,
    k: f64,
    dk: f64,
    mu: f64,
    dmu: f64,
    eta: f64,
    deta: f64,
    rho: f64,
    drho: f64,
    /// Cut-off thermophoretic drift entering the concentration equation.
    sigma_y: Vec2,
    sigma_jac: Mat2,
    /// Particle flux j = -(grad phi + c_th h(phi) grad T).
    jvec: Vec2,
    src_phi: f64,
    src_heat: f64,
    src_mom: Vec2,
}

impl QuadPoint<'_> {
    fn residual(&self, ctx: &ElementContext, w: f64, out: &mut [f64; N_LOC]) {
        let c = ctx.coeffs;
        let conv_t = self.jvec * c.flux_t + self.u * self.eta;
        let conv_u = self.gu.mul_vec(self.jvec * c.flux_u + self.u * self.rho);
        let u_dot_gphi = self.u.dot(self.grad_phi);
        let buoy = c.beta * self.temp;

        for i in 0..6 {
            let (si, gi) = (self.s[i], self.g[i]);
            // concentration
            out[i] += w
                * (c.diff_phi * (self.grad_phi + self.sigma_y).dot(gi) + u_dot_gphi * si
                    - self.src_phi * si);
            // temperature
            out[6 + i] += w
                * (c.diff_t * self.k * self.grad_t.dot(gi) + conv_t.dot(self.grad_t) * si
                    - self.src_heat * si);
            // momentum
            let visc = self.du.mul_vec(gi) * (c.visc * self.mu);
            for comp in 0..2 {
                out[12 + 2 * i + comp] += w
                    * (visc.comp(comp) + conv_u.comp(comp) * si - self.pres * gi.comp(comp)
                        + buoy * c.e_g.comp(comp) * si
                        - self.src_mom.comp(comp) * si);
            }
        }
        // continuity
        for i in 0..3 {
            out[24 + i] += w * self.p1[i] * self.div_u;
        }
    }

    fn jacobian(&self, ctx: &ElementContext, w: f64, out: &mut [f64]) {
        let c = ctx.coeffs;
        let conv_t = self.jvec * c.flux_t + self.u * self.eta;
        let conv_u_dir = self.jvec * c.flux_u + self.u * self.rho;

        // Trial-function sensitivities shared across all test functions.
        let mut dj_dphi = [Vec2::ZERO; 6];
        let mut dsig_dphi = [Vec2::ZERO; 6];
        let mut dj_dt = [Vec2::ZERO; 6];
        let mut dsig_dt = [Vec2::ZERO; 6];
        for j in 0..6 {
            let (sj, gj) = (self.s[j], self.g[j]);
            let dy_dphi = self.grad_t * (c.thermo * self.dh * sj);
            let dy_dt = gj * (c.thermo * self.h);
            dj_dphi[j] = -(gj + dy_dphi);
            dj_dt[j] = -dy_dt;
            dsig_dphi[j] = self.sigma_jac.mul_vec(dy_dphi);
            dsig_dt[j] = self.sigma_jac.mul_vec(dy_dt);
        }

        let idx = |i: usize, j: usize| i * N_LOC + j;

        for i in 0..6 {
            let (si, gi) = (self.s[i], self.g[i]);

            for j in 0..6 {
                let (sj, gj) = (self.s[j], self.g[j]);

                // concentration row
                out[idx(i, j)] +=
                    w * (c.diff_phi * (gj + dsig_dphi[j]).dot(gi) + self.u.dot(gj) * si);
                out[idx(i, 6 + j)] += w * (c.diff_phi * dsig_dt[j].dot(gi));
                for d in 0..2 {
                    out[idx(i, 12 + 2 * j + d)] += w * (sj * self.grad_phi.comp(d) * si);
                }

                // temperature row
                out[idx(6 + i, j)] += w
                    * (c.diff_t * self.dk * sj * self.grad_t.dot(gi)
                        + (dj_dphi[j] * c.flux_t + self.u * (self.deta * sj))
                            .dot(self.grad_t)
                            * si);
                out[idx(6 + i, 6 + j)] += w
                    * (c.diff_t * self.k * gj.dot(gi)
                        + (dj_dt[j] * c.flux_t).dot(self.grad_t) * si
                        + conv_t.dot(gj) * si);
                for d in 0..2 {
                    out[idx(6 + i, 12 + 2 * j + d)] +=
                        w * (self.eta * sj * self.grad_t.comp(d) * si);
                }

                // momentum rows
                let visc_phi = self.du.mul_vec(gi) * (c.visc * self.dmu * sj);
                let conv_phi = self
                    .gu
                    .mul_vec(dj_dphi[j] * c.flux_u + self.u * (self.drho * sj));
                let conv_temp = self.gu.mul_vec(dj_dt[j] * c.flux_u);
                let conv_wdir = conv_u_dir.dot(gj);
                for comp in 0..2 {
                    out[idx(12 + 2 * i + comp, j)] +=
                        w * (visc_phi.comp(comp) + conv_phi.comp(comp) * si);
                    // buoyancy enters the T column
                    out[idx(12 + 2 * i + comp, 6 + j)] += w
                        * (conv_temp.comp(comp) * si + c.beta * sj * c.e_g.comp(comp) * si);
                    for d in 0..2 {
                        let mut v = c.visc
                            * self.mu
                            * (if comp == d { gj.dot(gi) } else { 0.0 }
                                + gj.comp(comp) * gi.comp(d));
                        v += self.rho * sj * self.gu.0[comp][d] * si;
                        if comp == d {
                            v += conv_wdir * si;
                        }
                        out[idx(12 + 2 * i + comp, 12 + 2 * j + d)] += w * v;
                    }
                }
            }

            // pressure column of the momentum rows and the continuity rows
            for j in 0..3 {
                for comp in 0..2 {
                    out[idx(12 + 2 * i + comp, 24 + j)] += w * (-self.p1[j] * gi.comp(comp));
                    out[idx(24 + j, 12 + 2 * i + comp)] += w * (self.p1[j] * gi.comp(comp));
                }
            }
        }
    }
}

/// Builds the CSC sparsity pattern with all constraint bookkeeping.
fn build_pattern(
    mesh: &Mesh,
    phi_space: &Space,
    pressure_space: &Space,
    layout: Layout,
    is_constrained: &[bool],
) -> Pattern {
    let n2 = layout.n_scalar;
    let np = layout.n_pressure;
    let n = layout.total();

    // Node-level adjacency from element connectivity.
    let mut p2_nbrs: Vec<Vec<u32>> = vec![Vec::new(); n2];
    let mut p1_of_p2: Vec<Vec<u32>> = vec![Vec::new(); n2];
    let mut p2_of_p1: Vec<Vec<u32>> = vec![Vec::new(); np];
    for t in 0..mesh.n_triangles() as u32 {
        let nodes = phi_space.element_nodes(t);
        let verts = pressure_space.element_nodes(t);
        for i in 0..6 {
            let ni = nodes[i] as usize;
            for j in 0..6 {
                p2_nbrs[ni].push(nodes[j]);
            }
            for j in 0..3 {
                p1_of_p2[ni].push(verts[j]);
            }
        }
        for i in 0..3 {
            let vi = verts[i] as usize;
            for j in 0..6 {
                p2_of_p1[vi].push(nodes[j]);
            }
        }
    }
    for list in p2_nbrs
        .iter_mut()
        .chain(p1_of_p2.iter_mut())
        .chain(p2_of_p1.iter_mut())
    {
        list.sort_unstable();
        list.dedup();
    }

    let phi_off = layout.phi_offset() as u32;
    let temp_off = layout.temp_offset() as u32;
    let vel_off = layout.vel_offset() as u32;
    let pres_off = layout.pressure_offset() as u32;
    let lp = layout.lambda_p() as u32;
    let lphi = layout.lambda_phi().map(|i| i as u32);

    // The structural pattern is symmetric, so columns mirror rows.
    let mut col_ptr: Vec<u32> = Vec::with_capacity(n + 1);
    let mut row_idx: Vec<u32> = Vec::new();
    col_ptr.push(0);

    let push_field_rows = |row_idx: &mut Vec<u32>, node: usize| {
        for &m in &p2_nbrs[node] {
            row_idx.push(phi_off + m);
        }
        for &m in &p2_nbrs[node] {
            row_idx.push(temp_off + m);
        }
        for &m in &p2_nbrs[node] {
            row_idx.push(vel_off + 2 * m);
            row_idx.push(vel_off + 2 * m + 1);
        }
    };

    // phi columns
    for node in 0..n2 {
        push_field_rows(&mut row_idx, node);
        if let Some(l) = lphi {
            row_idx.push(l);
        }
        col_ptr.push(row_idx.len() as u32);
    }
    // T columns
    for node in 0..n2 {
        push_field_rows(&mut row_idx, node);
        col_ptr.push(row_idx.len() as u32);
    }
    // u columns
    for node in 0..n2 {
        for _comp in 0..2 {
            push_field_rows(&mut row_idx, node);
            for &v in &p1_of_p2[node] {
                row_idx.push(pres_off + v);
            }
            col_ptr.push(row_idx.len() as u32);
        }
    }
    // p columns: momentum rows plus the mean-pressure multiplier row.
    for v in 0..np {
        for &m in &p2_of_p1[v] {
            row_idx.push(vel_off + 2 * m);
            row_idx.push(vel_off + 2 * m + 1);
        }
        row_idx.push(lp);
        col_ptr.push(row_idx.len() as u32);
    }
    // lambda_p column: continuity rows.
    for v in 0..np {
        row_idx.push(pres_off + v as u32);
    }
    col_ptr.push(row_idx.len() as u32);
    // lambda_phi column: concentration rows.
    if lphi.is_some() {
        for node in 0..n2 {
            row_idx.push(phi_off + node as u32);
        }
        col_ptr.push(row_idx.len() as u32);
    }
    assert_eq!(col_ptr.len(), n + 1);

    let mut constrained_slots = Vec::new();
    let mut diag_slots = Vec::new();
    let mut lambda_p_row = Vec::new();
    let mut lambda_p_col = Vec::new();
    let mut lambda_phi_row = Vec::new();
    let mut lambda_phi_col = Vec::new();
    for col in 0..n {
        for k in col_ptr[col] as usize..col_ptr[col + 1] as usize {
            let row = row_idx[k] as usize;
            if is_constrained[row] {
                constrained_slots.push(k as u32);
                if row == col {
                    diag_slots.push((row as u32, k as u32));
                }
                continue;
            }
            if row == lp as usize {
                lambda_p_row.push((k as u32, col as u32 - pres_off));
            } else if col == lp as usize {
                lambda_p_col.push((k as u32, row as u32 - pres_off));
            }
            if let Some(l) = lphi {
                if row == l as usize {
                    lambda_phi_row.push((k as u32, col as u32 - phi_off));
                } else if col == l as usize {
                    lambda_phi_col.push((k as u32, row as u32 - phi_off));
                }
            }
        }
    }

    Pattern {
        col_ptr: Arc::new(col_ptr),
        row_idx: Arc::new(row_idx),
        constrained_slots,
        diag_slots,
        lambda_p_row,
        lambda_p_col,
        lambda_phi_row,
        lambda_phi_col,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::{eval_basis, Quadrature};
    use crate::model::{coefficients_alumina, coefficients_unit};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn cavity_problem(nx: usize, ny: usize, params: ModelParams) -> Problem {
        let mesh = Arc::new(Mesh::rectangle(2.0, 1.0, nx, ny).unwrap());
        Problem::new(mesh, params, coefficients_alumina(), CaseSetup::cavity(0.1)).unwrap()
    }

    /// Case with every field Dirichlet-zero and no sources; handy for
    /// block-structure checks.
    fn zero_dirichlet_case() -> CaseSetup {
        CaseSetup {
            id: crate::model::CaseId::Mms,
            phi_bc: std::array::from_fn(|_| ScalarBc::value(0.0)),
            temp_bc: std::array::from_fn(|_| ScalarBc::value(0.0)),
            vel_bc: std::array::from_fn(|_| VelocityBc::NoSlip),
            mean_phi: None,
            source_phi: None,
            source_heat: None,
            source_momentum: None,
        }
    }

    #[test]
    fn p1_stiffness_element_matrix() {
        // Hand integration of P1 gradients on the reference triangle.
        let coords = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ];
        let geo = ElementGeometry::new(&coords);
        let quad = Quadrature::for_degree(2).unwrap();
        let mut k = [[0.0f64; 3]; 3];
        for (p, &w) in quad.points.iter().zip(&quad.weights) {
            let basis = eval_basis(Degree::P1, *p).unwrap();
            for i in 0..3 {
                let gi = geo.grad_to_physical(basis.grads[i]);
                for j in 0..3 {
                    let gj = geo.grad_to_physical(basis.grads[j]);
                    k[i][j] += w * geo.det * gi.dot(gj);
                }
            }
        }
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expected[i][j]).abs() < 1e-14, "K[{i}][{j}]");
            }
        }
    }

    #[test]
    fn resting_state_residual_is_zero() {
        // phi at its mean, no temperature contrast, no flow, no sources:
        // every weak-form term vanishes identically.
        let mesh = Arc::new(Mesh::rectangle(2.0, 1.0, 4, 2).unwrap());
        let mut case = CaseSetup::cavity(0.1);
        case.temp_bc = std::array::from_fn(|_| ScalarBc::value(0.0));
        let problem = Problem::new(
            mesh,
            ModelParams::default(),
            coefficients_alumina(),
            case,
        )
        .unwrap();
        let state = problem.initial_state();
        let r = problem.assemble_residual(&state);
        // gradients of the constant concentration and the mean-row sum are
        // roundoff, everything else cancels identically
        for (i, &v) in r.iter().enumerate() {
            assert!(v.abs() < 1e-15, "row {i}: {v}");
        }

        // with zero mean concentration every stored product is exactly zero
        let mesh = Arc::new(Mesh::rectangle(2.0, 1.0, 4, 2).unwrap());
        let mut case = CaseSetup::cavity(0.0);
        case.temp_bc = std::array::from_fn(|_| ScalarBc::value(0.0));
        let problem = Problem::new(
            mesh,
            ModelParams::default(),
            coefficients_alumina(),
            case,
        )
        .unwrap();
        let state = problem.initial_state();
        let r = problem.assemble_residual(&state);
        for (i, &v) in r.iter().enumerate() {
            assert_eq!(v, 0.0, "row {i}");
        }
    }

    #[test]
    fn quadratic_stokes_state_has_zero_interior_residual() {
        // u = (y^2, x^2) is divergence-free and inside the P2 space,
        // p = x + y - 1 is linear with zero mean on the unit square.
        // With constants one the momentum residual of the manufactured
        // source vanishes for interior test functions, so after constraint
        // rows the whole residual is at rounding level.
        let mesh = Arc::new(Mesh::rectangle(1.0, 1.0, 4, 4).unwrap());
        let exact_u = |p: Vec2| Vec2::new(p.y * p.y, p.x * p.x);
        let mut case = zero_dirichlet_case();
        case.vel_bc = std::array::from_fn(|_| VelocityBc::Dirichlet(Arc::new(exact_u)));
        // g = -div D(u) + (u . grad) u + grad p with T = 0:
        //   -div D(u) = (-2, -2), (u . grad) u = (2 x^2 y, 2 x y^2), grad p = (1, 1)
        case.source_momentum = Some(Arc::new(|p: Vec2| {
            Vec2::new(
                -2.0 + 2.0 * p.x * p.x * p.y + 1.0,
                -2.0 + 2.0 * p.x * p.y * p.y + 1.0,
            )
        }));
        let problem = Problem::new(
            mesh,
            ModelParams::constants_one(),
            coefficients_unit(),
            case,
        )
        .unwrap();

        let mut state = problem.initial_state();
        let u = problem.vel_space.interpolate_vector(exact_u);
        state.vel_mut().copy_from_slice(&u);
        let p = problem.pressure_space.interpolate(|p| p.x + p.y - 1.0);
        state.pressure_mut().copy_from_slice(&p);

        let r = problem.assemble_residual(&state);
        let lay = problem.layout;
        let max_mom = r[lay.vel_offset()..lay.pressure_offset()]
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(max_mom < 1e-10, "momentum residual {max_mom}");
        // the divergence rows vanish too since div u = 0 pointwise
        let max_div = r[lay.pressure_offset()..lay.lambda_p()]
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(max_div < 1e-12, "divergence residual {max_div}");
    }

    #[test]
    fn assembly_is_additive_over_elements() {
        let problem = cavity_problem(4, 2, ModelParams::default());
        let mut state = problem.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for v in state.as_mut_slice() {
            *v = rng.random::<f64>() - 0.5;
        }
        let nt = problem.mesh.n_triangles() as u32;
        let all: Vec<u32> = (0..nt).collect();
        let (head, tail) = all.split_at(nt as usize / 3);
        let full = problem.assemble_residual_raw(&state, None);
        let ra = problem.assemble_residual_raw(&state, Some(head));
        let rb = problem.assemble_residual_raw(&state, Some(tail));
        for i in 0..full.len() {
            assert!((full[i] - (ra[i] + rb[i])).abs() < 1e-12 * full[i].abs().max(1.0));
        }
    }

    #[test]
    fn jacobian_at_rest_has_stiffness_phi_block() {
        // At a zero state with zero Dirichlet data all convection vanishes
        // and the phi-phi block is the scaled stiffness matrix.
        let mesh = Arc::new(Mesh::rectangle(1.0, 1.0, 2, 2).unwrap());
        let problem = Problem::new(
            mesh.clone(),
            ModelParams::constants_one(),
            coefficients_alumina(),
            zero_dirichlet_case(),
        )
        .unwrap();
        let state = FieldState::zeros(problem.layout);
        let sys = problem.assemble_jacobian(&state);

        // independent stiffness assembly on the P2 space
        let space = &problem.phi_space;
        let quad = Quadrature::for_degree(6).unwrap();
        let n = space.n_nodes();
        let mut stiff = vec![0.0; n * n];
        for t in 0..mesh.n_triangles() as u32 {
            let geo = ElementGeometry::new(&mesh.tri_vertices(t));
            let nodes = space.element_nodes(t);
            for (p, &w) in quad.points.iter().zip(&quad.weights) {
                let basis = eval_basis(Degree::P2, *p).unwrap();
                for i in 0..6 {
                    let gi = geo.grad_to_physical(basis.grads[i]);
                    for j in 0..6 {
                        let gj = geo.grad_to_physical(basis.grads[j]);
                        stiff[nodes[i] as usize * n + nodes[j] as usize] += w * geo.det * gi.dot(gj);
                    }
                }
            }
        }
        for i in 0..n {
            if problem.is_constrained(i) {
                continue;
            }
            for j in 0..n {
                let got = sys.get(i, j);
                assert!(
                    (got - stiff[i * n + j]).abs() < 1e-13,
                    "phi block ({i},{j}): {got} vs {}",
                    stiff[i * n + j]
                );
            }
            // phi-T coupling vanishes since h(0) = 0 and grad T = 0
            for j in 0..n {
                assert_eq!(sys.get(i, problem.layout.temp_offset() + j), 0.0);
            }
        }
    }

    #[test]
    fn viscous_block_is_symmetric() {
        // Random concentration, no flow: the velocity-velocity block is the
        // pure viscous form, which is symmetric. Momentum flux convection is
        // suppressed by a huge fluid Schmidt number.
        let params = ModelParams {
            re: 2.0,
            sc_f: 1e30,
            ..Default::default()
        };
        let problem = cavity_problem(3, 2, params);
        let mut state = problem.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for v in state.phi_mut() {
            *v = 0.3 * rng.random::<f64>();
        }
        let sys = problem.assemble_jacobian(&state);
        let lay = problem.layout;
        for a in 0..lay.n_scalar * 2 {
            let i = lay.vel_offset() + a;
            if problem.is_constrained(i) {
                continue;
            }
            for b in 0..lay.n_scalar * 2 {
                let j = lay.vel_offset() + b;
                if problem.is_constrained(j) {
                    continue;
                }
                let d = (sys.get(i, j) - sys.get(j, i)).abs();
                assert!(d < 1e-12, "asymmetry {d} at ({a},{b})");
            }
        }
    }

    #[test]
    fn constraint_rows_are_identity() {
        let problem = cavity_problem(3, 2, ModelParams::default());
        let state = problem.initial_state();
        let sys = problem.assemble_jacobian(&state);
        for dof in 0..problem.n_dofs() {
            if !problem.is_constrained(dof) {
                continue;
            }
            assert_eq!(sys.rhs[dof], 0.0);
            assert_eq!(sys.get(dof, dof), 1.0);
            // whole row is the unit vector
            for col in 0..problem.n_dofs() {
                if col != dof {
                    assert_eq!(sys.get(dof, col), 0.0, "row {dof} col {col}");
                }
            }
        }
    }

    #[test]
    fn mean_constraint_rows_use_mass_vectors() {
        let problem = cavity_problem(2, 2, ModelParams::default());
        let state = problem.initial_state();
        let sys = problem.assemble_jacobian(&state);
        let lay = problem.layout;
        let lp = lay.lambda_p();
        for v in 0..lay.n_pressure {
            assert!((sys.get(lp, lay.pressure_offset() + v) - problem.mass_p1()[v]).abs() < 1e-15);
            assert!((sys.get(lay.pressure_offset() + v, lp) - problem.mass_p1()[v]).abs() < 1e-15);
        }
        let lphi = lay.lambda_phi().unwrap();
        for n in 0..lay.n_scalar {
            assert!((sys.get(lphi, n) - problem.mass_p2()[n]).abs() < 1e-15);
        }
        // mass vectors sum to the domain area
        let sum1: f64 = problem.mass_p1().iter().sum();
        let sum2: f64 = problem.mass_p2().iter().sum();
        assert!((sum1 - 2.0).abs() < 1e-12);
        assert!((sum2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sparse_system_from_triplets() {
        let layout = Layout {
            n_scalar: 0,
            n_pressure: 1,
            mean_phi: false,
        };
        let sys = SparseSystem::from_triplets(
            2,
            &[(0, 0, 1.0), (0, 0, 1.0), (1, 0, 3.0), (0, 1, -1.0)],
            vec![1.0, 2.0],
            layout,
        );
        assert_eq!(sys.get(0, 0), 2.0);
        assert_eq!(sys.get(1, 0), 3.0);
        assert_eq!(sys.get(0, 1), -1.0);
        assert_eq!(sys.get(1, 1), 0.0);
        let y = sys.matvec(&[1.0, 2.0]);
        assert_eq!(y, vec![0.0, 3.0]);
        assert_eq!(sys.norm_inf(), 3.0);
    }
}
