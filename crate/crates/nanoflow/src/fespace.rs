//! Lagrange finite element spaces on triangles.
//!
//! Degrees 1 and 2 with nodal bases in barycentric coordinates. P1 nodes
//! sit at the vertices, P2 nodes at vertices and edge midpoints, so
//! interpolation is pointwise evaluation at the node coordinates. The
//! quadrature rules are symmetric interior-point rules on the reference
//! triangle with weights summing to its area 1/2.

use std::sync::Arc;

use thiserror::Error;

use crate::geom::{Mat2, Vec2};
use crate::mesh::{BoundaryTag, Mesh};

#[derive(Debug, Error)]
pub enum FeError {
    #[error("invalid finite element argument: {0}")]
    InvalidArgument(String),
}

/// Polynomial degree of a Lagrange space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degree {
    P1,
    P2,
}

impl Degree {
    pub fn n_basis(self) -> usize {
        match self {
            Degree::P1 => 3,
            Degree::P2 => 6,
        }
    }
}

/// Scalar field or 2D vector field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Scalar,
    Vector,
}

/// Basis values and reference-frame gradients at one barycentric point.
///
/// Entries `0..n` are valid; local ordering is the three vertices followed
/// (for P2) by the midpoints of edges (0,1), (1,2), (2,0).
#[derive(Clone, Copy, Debug)]
pub struct BasisEval {
    pub n: usize,
    pub values: [f64; 6],
    /// Gradients with respect to the reference coordinates (xi, eta), where
    /// lambda = (1 - xi - eta, xi, eta).
    pub grads: [Vec2; 6],
}

/// Evaluates the nodal basis of the given degree at a barycentric point.
pub fn eval_basis(degree: Degree, bary: [f64; 3]) -> Result<BasisEval, FeError> {
    let sum: f64 = bary.iter().sum();
    if bary.iter().any(|&l| !(l >= -1e-12)) || (sum - 1.0).abs() > 1e-10 {
        return Err(FeError::InvalidArgument(format!(
            "barycentric point {bary:?} must be nonnegative and sum to 1"
        )));
    }
    Ok(eval_basis_unchecked(degree, bary))
}

/// Gradients of the barycentric coordinates in the reference frame.
const GRAD_LAMBDA: [Vec2; 3] = [
    Vec2::new(-1.0, -1.0),
    Vec2::new(1.0, 0.0),
    Vec2::new(0.0, 1.0),
];

pub(crate) fn eval_basis_unchecked(degree: Degree, bary: [f64; 3]) -> BasisEval {
    let mut out = BasisEval {
        n: degree.n_basis(),
        values: [0.0; 6],
        grads: [Vec2::ZERO; 6],
    };
    match degree {
        Degree::P1 => {
            for i in 0..3 {
                out.values[i] = bary[i];
                out.grads[i] = GRAD_LAMBDA[i];
            }
        }
        Degree::P2 => {
            for i in 0..3 {
                out.values[i] = bary[i] * (2.0 * bary[i] - 1.0);
                out.grads[i] = GRAD_LAMBDA[i] * (4.0 * bary[i] - 1.0);
            }
            for (k, (i, j)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
                out.values[3 + k] = 4.0 * bary[i] * bary[j];
                out.grads[3 + k] = GRAD_LAMBDA[i] * (4.0 * bary[j]) + GRAD_LAMBDA[j] * (4.0 * bary[i]);
            }
        }
    }
    out
}

/// Interior-point quadrature rule on the reference triangle.
#[derive(Clone, Debug)]
pub struct Quadrature {
    pub points: Vec<[f64; 3]>,
    /// Weights summing to the reference-triangle area 1/2; a physical
    /// integral is `sum_q w_q * det(J) * f(x_q)`.
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl Quadrature {
    /// Symmetric rule exact for polynomials up to `order` in {2, 4, 6}.
    pub fn for_degree(order: usize) -> Result<Quadrature, FeError> {
        let (points, weights): (Vec<[f64; 3]>, Vec<f64>) = match order {
            2 => {
                let mut pts = Vec::new();
                let mut wts = Vec::new();
                push_perm3(&mut pts, &mut wts, 2.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0);
                (pts, wts)
            }
            4 => {
                let mut pts = Vec::new();
                let mut wts = Vec::new();
                push_perm3(
                    &mut pts,
                    &mut wts,
                    0.108103018168070,
                    0.445948490915965,
                    0.223381589678011,
                );
                push_perm3(
                    &mut pts,
                    &mut wts,
                    0.816847572980459,
                    0.091576213509771,
                    0.109951743655322,
                );
                (pts, wts)
            }
            6 => {
                let mut pts = Vec::new();
                let mut wts = Vec::new();
                push_perm3(
                    &mut pts,
                    &mut wts,
                    0.501426509658179,
                    0.249286745170910,
                    0.116786275726379,
                );
                push_perm3(
                    &mut pts,
                    &mut wts,
                    0.873821971016996,
                    0.063089014491502,
                    0.050844906370207,
                );
                push_perm6(
                    &mut pts,
                    &mut wts,
                    0.310352451033785,
                    0.053145049844816,
                    0.082851075618374,
                );
                (pts, wts)
            }
            other => {
                return Err(FeError::InvalidArgument(format!(
                    "unsupported quadrature order {other}; supported orders are 2, 4, 6"
                )))
            }
        };
        // Published weights sum to 1; scale to the reference area.
        let weights = weights.into_iter().map(|w| 0.5 * w).collect();
        Ok(Quadrature {
            points,
            weights,
            exactness: order,
        })
    }
}

fn push_perm3(pts: &mut Vec<[f64; 3]>, wts: &mut Vec<f64>, a: f64, b: f64, w: f64) {
    for p in [[a, b, b], [b, a, b], [b, b, a]] {
        pts.push(p);
        wts.push(w);
    }
}

fn push_perm6(pts: &mut Vec<[f64; 3]>, wts: &mut Vec<f64>, a: f64, b: f64, w: f64) {
    let c = 1.0 - a - b;
    for p in [[a, b, c], [b, a, c], [a, c, b], [c, a, b], [b, c, a], [c, b, a]] {
        pts.push(p);
        wts.push(w);
    }
}

/// Affine geometry of one triangle: Jacobian of the reference map, its
/// inverse transpose for gradient push-forward, and the determinant.
#[derive(Clone, Copy, Debug)]
pub struct ElementGeometry {
    pub jac: Mat2,
    pub inv_t: Mat2,
    pub det: f64,
}

impl ElementGeometry {
    pub fn new(coords: &[Vec2; 3]) -> Self {
        let jac = Mat2([
            [coords[1].x - coords[0].x, coords[2].x - coords[0].x],
            [coords[1].y - coords[0].y, coords[2].y - coords[0].y],
        ]);
        let det = jac.det();
        let inv_t = Mat2([
            [jac.0[1][1] / det, -jac.0[1][0] / det],
            [-jac.0[0][1] / det, jac.0[0][0] / det],
        ]);
        ElementGeometry { jac, inv_t, det }
    }

    /// Pushes a reference-frame gradient to the physical frame.
    pub fn grad_to_physical(&self, g: Vec2) -> Vec2 {
        self.inv_t.mul_vec(g)
    }
}

/// Physical point of a barycentric coordinate in a triangle.
pub fn barycentric_point(coords: &[Vec2; 3], bary: [f64; 3]) -> Vec2 {
    coords[0] * bary[0] + coords[1] * bary[1] + coords[2] * bary[2]
}

/// Lagrange space over a mesh: node layout, coordinates, and per-dof
/// Dirichlet constraints (filled in by the case setup).
#[derive(Clone, Debug)]
pub struct Space {
    pub mesh: Arc<Mesh>,
    pub degree: Degree,
    pub kind: Kind,
    node_coords: Vec<Vec2>,
    /// Per-dof constraint value; `Some(v)` pins the dof to `v`.
    pub dirichlet: Vec<Option<f64>>,
}

impl Space {
    /// Builds the global dof map: P1 nodes are vertices, P2 nodes are
    /// vertices followed by edge midpoints; vector spaces interleave the
    /// two components per node.
    pub fn new(mesh: &Arc<Mesh>, degree: Degree, kind: Kind) -> Space {
        let mut node_coords: Vec<Vec2> = mesh.vertices().to_vec();
        if degree == Degree::P2 {
            node_coords.reserve(mesh.n_edges());
            for e in mesh.edges() {
                let a = mesh.vertex(e.vertices[0]);
                let b = mesh.vertex(e.vertices[1]);
                node_coords.push(Vec2::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y)));
            }
        }
        let comps = match kind {
            Kind::Scalar => 1,
            Kind::Vector => 2,
        };
        let dirichlet = vec![None; comps * node_coords.len()];
        Space {
            mesh: Arc::clone(mesh),
            degree,
            kind,
            node_coords,
            dirichlet,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn dof_count(&self) -> usize {
        self.dirichlet.len()
    }

    pub fn components(&self) -> usize {
        match self.kind {
            Kind::Scalar => 1,
            Kind::Vector => 2,
        }
    }

    pub fn node_coord(&self, node: u32) -> Vec2 {
        self.node_coords[node as usize]
    }

    pub fn node_coords(&self) -> &[Vec2] {
        &self.node_coords
    }

    /// Global node ids of an element in local basis order.
    pub fn element_nodes(&self, t: u32) -> [u32; 6] {
        let [v0, v1, v2] = self.mesh.triangle(t);
        match self.degree {
            Degree::P1 => [v0, v1, v2, 0, 0, 0],
            Degree::P2 => {
                let nv = self.mesh.n_vertices() as u32;
                let [e01, e12, e20] = self.mesh.tri_edges(t);
                [v0, v1, v2, nv + e01, nv + e12, nv + e20]
            }
        }
    }

    /// All node ids lying on boundary edges with the given tag.
    pub fn nodes_on_tag(&self, tag: BoundaryTag) -> Vec<u32> {
        let nv = self.mesh.n_vertices() as u32;
        let mut nodes = Vec::new();
        for (e, edge) in self.mesh.edges().iter().enumerate() {
            if edge.tag == Some(tag) {
                nodes.push(edge.vertices[0]);
                nodes.push(edge.vertices[1]);
                if self.degree == Degree::P2 {
                    nodes.push(nv + e as u32);
                }
            }
        }
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Nodal interpolation of a scalar function.
    pub fn interpolate(&self, f: impl Fn(Vec2) -> f64) -> Vec<f64> {
        assert_eq!(self.kind, Kind::Scalar, "use interpolate_vector");
        self.node_coords.iter().map(|&p| f(p)).collect()
    }

    /// Nodal interpolation of a vector function into interleaved dofs.
    pub fn interpolate_vector(&self, f: impl Fn(Vec2) -> Vec2) -> Vec<f64> {
        assert_eq!(self.kind, Kind::Vector, "use interpolate");
        let mut out = Vec::with_capacity(2 * self.node_coords.len());
        for &p in &self.node_coords {
            let v = f(p);
            out.push(v.x);
            out.push(v.y);
        }
        out
    }

    /// Evaluates a scalar coefficient field at a barycentric point of a
    /// triangle; returns the value and physical gradient.
    pub fn eval_scalar(&self, coeffs: &[f64], t: u32, bary: [f64; 3]) -> (f64, Vec2) {
        let basis = eval_basis_unchecked(self.degree, bary);
        let geo = ElementGeometry::new(&self.mesh.tri_vertices(t));
        let nodes = self.element_nodes(t);
        let mut value = 0.0;
        let mut grad = Vec2::ZERO;
        for i in 0..basis.n {
            let c = coeffs[nodes[i] as usize];
            value += c * basis.values[i];
            grad += geo.grad_to_physical(basis.grads[i]) * c;
        }
        (value, grad)
    }

    /// Evaluates an interleaved vector coefficient field; returns the value
    /// and physical gradient (rows are components).
    pub fn eval_vector(&self, coeffs: &[f64], t: u32, bary: [f64; 3]) -> (Vec2, Mat2) {
        let basis = eval_basis_unchecked(self.degree, bary);
        let geo = ElementGeometry::new(&self.mesh.tri_vertices(t));
        let nodes = self.element_nodes(t);
        let mut value = Vec2::ZERO;
        let mut grad = Mat2::default();
        for i in 0..basis.n {
            let g = geo.grad_to_physical(basis.grads[i]);
            for c in 0..2 {
                let coeff = coeffs[2 * nodes[i] as usize + c];
                if c == 0 {
                    value.x += coeff * basis.values[i];
                } else {
                    value.y += coeff * basis.values[i];
                }
                grad.0[c][0] += coeff * g.x;
                grad.0[c][1] += coeff * g.y;
            }
        }
        (value, grad)
    }
}

/// Velocity/pressure pair: continuous P2 vector velocity with continuous
/// P1 pressure. The pair is inf-sup stable on shape-regular meshes, and the
/// zero-mean pressure constraint is enforced by a scalar multiplier during
/// assembly rather than inside the space.
#[derive(Clone, Debug)]
pub struct TaylorHoodPair {
    pub velocity: Space,
    pub pressure: Space,
}

impl TaylorHoodPair {
    pub fn new(mesh: &Arc<Mesh>) -> TaylorHoodPair {
        TaylorHoodPair {
            velocity: Space::new(mesh, Degree::P2, Kind::Vector),
            pressure: Space::new(mesh, Degree::P1, Kind::Scalar),
        }
    }
}
