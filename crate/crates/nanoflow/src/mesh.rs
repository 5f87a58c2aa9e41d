//! Conforming triangulations of axis-aligned rectangles.
//!
//! Meshes are built by splitting a structured `nx` x `ny` cell grid along
//! the lower-left/upper-right diagonal, giving `2*nx*ny` triangles, and
//! refined uniformly by splitting every triangle into four congruent
//! children at its edge midpoints. One refinement quarters every element
//! and halves all diameters, so the family stays shape regular and
//! quasi-uniform by construction. Boundary edges carry a side tag.
//!
//! The domain is a polygon, so straight-edged elements represent the
//! boundary exactly; no curved-element machinery is needed.

use std::collections::HashMap;
use std::io::{self, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::geom::Vec2;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh argument: {0}")]
    InvalidArgument(String),
}

/// Side of the rectangle a boundary edge lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Left,
    Right,
    Bottom,
    Top,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [
        BoundaryTag::Left,
        BoundaryTag::Right,
        BoundaryTag::Bottom,
        BoundaryTag::Top,
    ];

    pub fn index(self) -> usize {
        match self {
            BoundaryTag::Left => 0,
            BoundaryTag::Right => 1,
            BoundaryTag::Bottom => 2,
            BoundaryTag::Top => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::Left => "left",
            BoundaryTag::Right => "right",
            BoundaryTag::Bottom => "bottom",
            BoundaryTag::Top => "top",
        }
    }
}

impl FromStr for BoundaryTag {
    type Err = MeshError;
    fn from_str(s: &str) -> Result<Self, MeshError> {
        match s {
            "left" => Ok(BoundaryTag::Left),
            "right" => Ok(BoundaryTag::Right),
            "bottom" => Ok(BoundaryTag::Bottom),
            "top" => Ok(BoundaryTag::Top),
            other => Err(MeshError::InvalidArgument(format!(
                "unknown boundary tag `{other}`"
            ))),
        }
    }
}

/// Undirected mesh edge with incident triangles and an optional side tag.
#[derive(Clone, Copy, Debug)]
pub struct Edge {
    /// Endpoint vertex ids, smaller first.
    pub vertices: [u32; 2],
    /// Incident triangles; boundary edges have exactly one.
    pub tris: (u32, Option<u32>),
    /// Side tag for boundary edges, `None` for interior edges.
    pub tag: Option<BoundaryTag>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.tris.1.is_none()
    }
}

/// Structured-grid metadata kept alongside the triangulation; enables O(1)
/// point location for reference-solution transfer.
#[derive(Clone, Debug)]
struct StructuredGrid {
    width: f64,
    height: f64,
    nx: usize,
    ny: usize,
    /// `cell_tris[j*nx + i] = [lower, upper]` triangle ids of cell `(i, j)`,
    /// split along the diagonal from `(i, j)` to `(i+1, j+1)`.
    cell_tris: Vec<[u32; 2]>,
}

/// Immutable conforming triangulation of a rectangle.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Vec2>,
    triangles: Vec<[u32; 3]>,
    edges: Vec<Edge>,
    /// Per triangle, edge ids in local order (v0,v1), (v1,v2), (v2,v0).
    tri_edges: Vec<[u32; 3]>,
    level: u32,
    grid: StructuredGrid,
}

impl Mesh {
    /// Builds the diagonal-split triangulation of `(0,width) x (0,height)`
    /// with `nx` x `ny` cells: `2*nx*ny` triangles, `(nx+1)*(ny+1)` vertices.
    pub fn rectangle(width: f64, height: f64, nx: usize, ny: usize) -> Result<Mesh, MeshError> {
        if !(width > 0.0) || !(height > 0.0) {
            return Err(MeshError::InvalidArgument(format!(
                "rectangle dimensions must be positive, got {width} x {height}"
            )));
        }
        if nx == 0 || ny == 0 {
            return Err(MeshError::InvalidArgument(format!(
                "subdivision counts must be at least 1, got {nx} x {ny}"
            )));
        }

        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                // i/nx hits 0 and 1 exactly, so boundary coordinates are exact.
                let x = width * (i as f64 / nx as f64);
                let y = height * (j as f64 / ny as f64);
                vertices.push(Vec2::new(x, y));
            }
        }

        let vid = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                // Lower: below the (i,j)-(i+1,j+1) diagonal; upper: above.
                triangles.push([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)]);
                triangles.push([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)]);
            }
        }

        Mesh::from_parts(vertices, triangles, 0, width, height, nx, ny, None)
    }

    /// Splits every triangle into four congruent children at its edge
    /// midpoints. Element count quadruples, all diameters halve, boundary
    /// tags pass to the child edges.
    pub fn refine_uniform(&self) -> Mesh {
        let nv = self.vertices.len() as u32;
        let mut vertices = self.vertices.clone();
        // Midpoint of edge e becomes vertex nv + e.
        for e in &self.edges {
            let a = self.vertices[e.vertices[0] as usize];
            let b = self.vertices[e.vertices[1] as usize];
            vertices.push(Vec2::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y)));
        }

        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let [v0, v1, v2] = *tri;
            let [e01, e12, e20] = self.tri_edges[t];
            let (m01, m12, m20) = (nv + e01, nv + e12, nv + e20);
            triangles.push([v0, m01, m20]);
            triangles.push([m01, v1, m12]);
            triangles.push([m20, m12, v2]);
            triangles.push([m01, m12, m20]);
        }

        // A child boundary edge has exactly one midpoint endpoint, whose
        // parent edge supplies the tag.
        let parent_tags: Vec<Option<BoundaryTag>> = self.edges.iter().map(|e| e.tag).collect();
        let tag_of = move |a: u32, b: u32| -> Option<BoundaryTag> {
            let mid = if a >= nv { a } else { b };
            if mid < nv {
                return None;
            }
            parent_tags[(mid - nv) as usize]
        };

        Mesh::from_parts(
            vertices,
            triangles,
            self.level + 1,
            self.grid.width,
            self.grid.height,
            self.grid.nx * 2,
            self.grid.ny * 2,
            Some(&tag_of),
        )
        .expect("refinement of a valid mesh is valid")
    }

    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        vertices: Vec<Vec2>,
        triangles: Vec<[u32; 3]>,
        level: u32,
        width: f64,
        height: f64,
        nx: usize,
        ny: usize,
        tag_fn: Option<&dyn Fn(u32, u32) -> Option<BoundaryTag>>,
    ) -> Result<Mesh, MeshError> {
        let mut edge_map: HashMap<(u32, u32), u32> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut tri_edges = Vec::with_capacity(triangles.len());

        for (t, tri) in triangles.iter().enumerate() {
            let mut ids = [0u32; 3];
            for (k, (a, b)) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])]
                .into_iter()
                .enumerate()
            {
                let key = (a.min(b), a.max(b));
                let id = *edge_map.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        vertices: [key.0, key.1],
                        tris: (t as u32, None),
                        tag: None,
                    });
                    (edges.len() - 1) as u32
                });
                let edge = &mut edges[id as usize];
                if edge.tris.0 != t as u32 {
                    edge.tris.1 = Some(t as u32);
                }
                ids[k] = id;
            }
            tri_edges.push(ids);
        }

        for edge in edges.iter_mut().filter(|e| e.is_boundary()) {
            let [a, b] = edge.vertices;
            edge.tag = match tag_fn {
                Some(f) => f(a, b),
                None => {
                    let pa = vertices[a as usize];
                    let pb = vertices[b as usize];
                    if pa.x == 0.0 && pb.x == 0.0 {
                        Some(BoundaryTag::Left)
                    } else if pa.x == width && pb.x == width {
                        Some(BoundaryTag::Right)
                    } else if pa.y == 0.0 && pb.y == 0.0 {
                        Some(BoundaryTag::Bottom)
                    } else if pa.y == height && pb.y == height {
                        Some(BoundaryTag::Top)
                    } else {
                        None
                    }
                }
            };
            if edge.tag.is_none() {
                return Err(MeshError::InvalidArgument(format!(
                    "boundary edge ({a}, {b}) lies on no rectangle side"
                )));
            }
        }

        let mut mesh = Mesh {
            vertices,
            triangles,
            edges,
            tri_edges,
            level,
            grid: StructuredGrid {
                width,
                height,
                nx,
                ny,
                cell_tris: Vec::new(),
            },
        };
        mesh.grid.cell_tris = mesh.build_cell_index()?;
        debug_assert!(mesh.triangles().iter().enumerate().all(|(t, _)| {
            mesh.signed_area(t as u32) > 0.0
        }));
        Ok(mesh)
    }

    /// Maps every structured cell to its lower/upper triangle by centroid.
    fn build_cell_index(&self) -> Result<Vec<[u32; 2]>, MeshError> {
        let g = &self.grid;
        let hx = g.width / g.nx as f64;
        let hy = g.height / g.ny as f64;
        let mut cells = vec![[u32::MAX; 2]; g.nx * g.ny];
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.tri_vertices(t as u32);
            let cx = (a.x + b.x + c.x) / 3.0;
            let cy = (a.y + b.y + c.y) / 3.0;
            let i = ((cx / hx) as usize).min(g.nx - 1);
            let j = ((cy / hy) as usize).min(g.ny - 1);
            let fx = cx / hx - i as f64;
            let fy = cy / hy - j as f64;
            let half = if fx > fy { 0 } else { 1 };
            cells[j * g.nx + i][half] = t as u32;
        }
        if cells.iter().any(|c| c[0] == u32::MAX || c[1] == u32::MAX) {
            return Err(MeshError::InvalidArgument(
                "triangulation does not match the structured cell grid".into(),
            ));
        }
        Ok(cells)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn width(&self) -> f64 {
        self.grid.width
    }

    pub fn height(&self) -> f64 {
        self.grid.height
    }

    pub fn vertex(&self, v: u32) -> Vec2 {
        self.vertices[v as usize]
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn triangle(&self, t: u32) -> [u32; 3] {
        self.triangles[t as usize]
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn tri_edges(&self, t: u32) -> [u32; 3] {
        self.tri_edges[t as usize]
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.is_boundary())
    }

    pub fn tri_vertices(&self, t: u32) -> [Vec2; 3] {
        let [a, b, c] = self.triangles[t as usize];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    fn signed_area(&self, t: u32) -> f64 {
        let [a, b, c] = self.tri_vertices(t);
        0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
    }

    pub fn area(&self, t: u32) -> f64 {
        self.signed_area(t)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len() as u32).map(|t| self.area(t)).sum()
    }

    /// Diameter of a triangle is its longest side.
    pub fn diameter(&self, t: u32) -> f64 {
        let [a, b, c] = self.tri_vertices(t);
        (a - b).norm().max((b - c).norm()).max((c - a).norm())
    }

    /// Largest element diameter `h`.
    pub fn mesh_size(&self) -> f64 {
        (0..self.triangles.len() as u32)
            .map(|t| self.diameter(t))
            .fold(0.0, f64::max)
    }

    pub fn min_diameter(&self) -> f64 {
        (0..self.triangles.len() as u32)
            .map(|t| self.diameter(t))
            .fold(f64::INFINITY, f64::min)
    }

    /// Locates the triangle containing `p` via the structured cell grid and
    /// returns its id with the barycentric coordinates of `p` in it. Points
    /// outside the rectangle are clamped to the nearest cell.
    pub fn locate(&self, p: Vec2) -> (u32, [f64; 3]) {
        let g = &self.grid;
        let hx = g.width / g.nx as f64;
        let hy = g.height / g.ny as f64;
        let i = ((p.x / hx) as usize).min(g.nx - 1);
        let j = ((p.y / hy) as usize).min(g.ny - 1);
        let fx = p.x / hx - i as f64;
        let fy = p.y / hy - j as f64;
        let half = if fx >= fy { 0 } else { 1 };
        let t = g.cell_tris[j * g.nx + i][half];
        (t, self.barycentric(t, p))
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: u32, p: Vec2) -> [f64; 3] {
        let [a, b, c] = self.tri_vertices(t);
        let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
        let l1 = ((p.x - a.x) * (c.y - a.y) - (c.x - a.x) * (p.y - a.y)) / det;
        let l2 = ((b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Plain-text dump: header `ntri nvert`, vertex lines `x y`, triangle
    /// lines `a b c`, then boundary edge lines `v0 v1 tag`. LF endings.
    pub fn write_dump<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "{} {}", self.triangles.len(), self.vertices.len())?;
        for v in &self.vertices {
            writeln!(w, "{} {}", v.x, v.y)?;
        }
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        for e in self.boundary_edges() {
            let tag = e.tag.expect("boundary edges are tagged");
            writeln!(w, "{} {} {}", e.vertices[0], e.vertices[1], tag.as_str())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangle_counts() {
        let m = Mesh::rectangle(2.0, 1.0, 8, 4).unwrap();
        assert_eq!(m.n_triangles(), 64);
        assert_eq!(m.n_vertices(), 45);

        let m = Mesh::rectangle(2.0, 1.0, 16, 8).unwrap();
        assert_eq!(m.n_triangles(), 256);

        let m = Mesh::rectangle(1.0, 1.0, 1, 1).unwrap();
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.boundary_edges().count(), 4);
    }

    #[test]
    fn rectangle_rejects_bad_arguments() {
        assert!(Mesh::rectangle(0.0, 1.0, 4, 4).is_err());
        assert!(Mesh::rectangle(1.0, -2.0, 4, 4).is_err());
        assert!(Mesh::rectangle(1.0, 1.0, 0, 4).is_err());
        assert!(Mesh::rectangle(1.0, 1.0, 4, 0).is_err());
    }

    #[test]
    fn refinement_quadruples_elements() {
        let m = Mesh::rectangle(2.0, 1.0, 16, 8).unwrap();
        let m1 = m.refine_uniform();
        assert_eq!(m1.n_triangles(), 1024);
        assert_eq!(m1.level(), 1);

        let m2 = Mesh::rectangle(1.0, 1.0, 1, 1).unwrap().refine_uniform();
        assert_eq!(m2.n_triangles(), 8);

        let m3 = m1.refine_uniform().refine_uniform();
        assert_eq!(m3.n_triangles(), 16384);
        assert_eq!(m3.level(), 3);
    }

    #[test]
    fn mesh_size_examples() {
        let m = Mesh::rectangle(1.0, 1.0, 1, 1).unwrap();
        assert_eq!(m.mesh_size(), 2.0f64.sqrt());
        assert_eq!(m.refine_uniform().mesh_size(), 2.0f64.sqrt() / 2.0);

        // 2x1 rectangle with square cells: diameter is the cell diagonal.
        let m = Mesh::rectangle(2.0, 1.0, 16, 8).unwrap();
        let cell: f64 = 2.0 / 16.0;
        assert_eq!(m.mesh_size(), (2.0 * cell * cell).sqrt());
    }

    #[test]
    fn refinement_halves_mesh_size_exactly() {
        let mut m = Mesh::rectangle(2.0, 1.0, 4, 2).unwrap();
        for _ in 0..3 {
            let fine = m.refine_uniform();
            assert_eq!(fine.mesh_size(), 0.5 * m.mesh_size());
            assert_eq!(fine.min_diameter(), 0.5 * m.min_diameter());
            m = fine;
        }
    }

    #[test]
    fn euler_relation_holds() {
        for mesh in [
            Mesh::rectangle(1.0, 1.0, 1, 1).unwrap(),
            Mesh::rectangle(2.0, 1.0, 8, 4).unwrap(),
            Mesh::rectangle(2.0, 1.0, 8, 4).unwrap().refine_uniform(),
        ] {
            let v = mesh.n_vertices() as i64;
            let e = mesh.n_edges() as i64;
            let f = mesh.n_triangles() as i64;
            assert_eq!(v - e + f, 1);
        }
    }

    #[test]
    fn areas_sum_to_domain_area() {
        let m = Mesh::rectangle(2.0, 1.0, 7, 3).unwrap();
        assert!((m.total_area() - 2.0).abs() < 1e-12 * 2.0);
        let r = m.refine_uniform();
        assert!((r.total_area() - 2.0).abs() < 1e-12 * 2.0);
    }

    #[test]
    fn edge_incidence_counts() {
        let m = Mesh::rectangle(2.0, 1.0, 4, 2).unwrap().refine_uniform();
        let mut n_boundary = 0;
        for e in m.edges() {
            if e.is_boundary() {
                n_boundary += 1;
                assert!(e.tag.is_some());
            } else {
                assert!(e.tris.1.is_some());
                assert!(e.tag.is_none());
            }
        }
        // 2*(nx + ny) boundary edges for the structured grid.
        assert_eq!(n_boundary, 2 * (8 + 4));
    }

    #[test]
    fn triangles_positively_oriented() {
        let m = Mesh::rectangle(2.0, 1.0, 5, 4).unwrap().refine_uniform();
        for t in 0..m.n_triangles() as u32 {
            assert!(m.area(t) > 0.0);
        }
    }

    #[test]
    fn shape_regularity_constant_under_refinement() {
        // circumradius/inradius for a right isosceles triangle, constant
        // across the uniform family.
        fn worst_ratio(m: &Mesh) -> f64 {
            (0..m.n_triangles() as u32)
                .map(|t| {
                    let [pa, pb, pc] = m.tri_vertices(t);
                    let a = (pb - pc).norm();
                    let b = (pc - pa).norm();
                    let c = (pa - pb).norm();
                    let area = m.area(t);
                    let circum = a * b * c / (4.0 * area);
                    let inr = 2.0 * area / (a + b + c);
                    circum / inr
                })
                .fold(0.0, f64::max)
        }
        let m0 = Mesh::rectangle(1.0, 1.0, 4, 4).unwrap();
        let expected = (2.0f64.sqrt() / 2.0) / ((2.0 - 2.0f64.sqrt()) / 2.0);
        assert!((worst_ratio(&m0) - expected).abs() < 1e-12);
        let m1 = m0.refine_uniform();
        assert!((worst_ratio(&m1) - expected).abs() < 1e-12);
    }

    #[test]
    fn quasi_uniform_diameter_ratio() {
        let m = Mesh::rectangle(2.0, 1.0, 16, 8).unwrap().refine_uniform();
        assert!((m.mesh_size() / m.min_diameter() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_tags_by_side() {
        let m = Mesh::rectangle(2.0, 1.0, 4, 2).unwrap();
        for e in m.boundary_edges() {
            let [a, b] = e.vertices;
            let (pa, pb) = (m.vertex(a), m.vertex(b));
            match e.tag.unwrap() {
                BoundaryTag::Left => assert!(pa.x == 0.0 && pb.x == 0.0),
                BoundaryTag::Right => assert!(pa.x == 2.0 && pb.x == 2.0),
                BoundaryTag::Bottom => assert!(pa.y == 0.0 && pb.y == 0.0),
                BoundaryTag::Top => assert!(pa.y == 1.0 && pb.y == 1.0),
            }
        }
        let r = m.refine_uniform();
        assert_eq!(
            r.boundary_edges()
                .filter(|e| e.tag == Some(BoundaryTag::Top))
                .count(),
            8
        );
    }

    #[test]
    fn dump_golden_unit_square() {
        let m = Mesh::rectangle(1.0, 1.0, 1, 1).unwrap();
        let mut out = Vec::new();
        m.write_dump(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let expected = "2 4\n\
                        0 0\n\
                        1 0\n\
                        0 1\n\
                        1 1\n\
                        0 1 3\n\
                        0 3 2\n\
                        0 1 bottom\n\
                        1 3 right\n\
                        2 3 top\n\
                        0 2 left\n";
        assert_eq!(text, expected);
    }

    #[test]
    fn locate_finds_containing_triangle() {
        let m = Mesh::rectangle(2.0, 1.0, 8, 4).unwrap().refine_uniform();
        let pts = [
            Vec2::new(0.013, 0.92),
            Vec2::new(1.999, 0.001),
            Vec2::new(0.5, 0.5),
            Vec2::new(1.23456, 0.7891),
        ];
        for p in pts {
            let (t, bary) = m.locate(p);
            assert!(bary.iter().all(|&l| l >= -1e-12 && l <= 1.0 + 1e-12));
            let [a, b, c] = m.tri_vertices(t);
            let back = a * bary[0] + b * bary[1] + c * bary[2];
            assert!((back - p).norm() < 1e-12);
        }
    }
}
