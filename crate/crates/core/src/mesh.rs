//! Structured quadrilateral / hexahedral meshes carrying a Taylor-Hood
//! (Q2 velocity, Q1 pressure) discretization.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::element::{self, q1_nodes, q2_nodes};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Benchmark domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    /// `[0, 1]^2`, clamped bottom.
    UnitSquare,
    /// Trapezoid with corners (0,0), (48,44), (48,60), (0,44), clamped left.
    CooksMembrane,
    /// `[-1, 1]^2 x [0, 12]` prism, clamped base.
    Column,
}

impl Geometry {
    pub fn dim(self) -> usize {
        match self {
            Geometry::Column => 3,
            _ => 2,
        }
    }

    /// Maps logical coordinates `s in [0, 1]^d` to reference coordinates.
    pub fn map<T: Real>(self, s: [T; 3]) -> [T; 3] {
        match self {
            Geometry::UnitSquare => [s[0], s[1], T::zero()],
            Geometry::CooksMembrane => {
                let (a, b) = (s[0], s[1]);
                let x = T::lit(48.0) * a;
                let y = T::lit(44.0) * a + T::lit(44.0) * b - T::lit(28.0) * a * b;
                [x, y, T::zero()]
            }
            Geometry::Column => [
                T::lit(2.0) * s[0] - T::one(),
                T::lit(2.0) * s[1] - T::one(),
                T::lit(12.0) * s[2],
            ],
        }
    }

    /// Exact reference measure (area or volume).
    pub fn measure<T: Real>(self) -> T {
        match self {
            Geometry::UnitSquare => T::one(),
            // trapezoid with parallel sides 44 and 16, width 48
            Geometry::CooksMembrane => T::lit(0.5 * (44.0 + 16.0) * 48.0),
            Geometry::Column => T::lit(48.0),
        }
    }
}

impl FromStr for Geometry {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unitsquare" | "unit_square" | "square" => Ok(Self::UnitSquare),
            "cook" | "cooksmembrane" | "cooks_membrane" => Ok(Self::CooksMembrane),
            "column" => Ok(Self::Column),
            other => Err(Error::Config(format!("unknown geometry '{other}'"))),
        }
    }
}

/// Boundary condition class of a facet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FacetTag {
    /// Homogeneous (or prescribed) Dirichlet velocity.
    Fixed,
    /// Natural boundary carrying the scenario traction.
    TractionLoaded,
    /// Traction-free.
    Free,
}

impl FromStr for FacetTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(Self::Fixed),
            "traction" | "tractionloaded" | "traction_loaded" => Ok(Self::TractionLoaded),
            "free" => Ok(Self::Free),
            other => Err(Error::Config(format!("unknown facet tag '{other}'"))),
        }
    }
}

/// Face of the logical box; `XMin` is the face with first logical
/// coordinate 0, and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Side {
    pub const ALL: [Side; 6] = [Side::XMin, Side::XMax, Side::YMin, Side::YMax, Side::ZMin, Side::ZMax];

    #[inline]
    pub fn axis(self) -> usize {
        match self {
            Side::XMin | Side::XMax => 0,
            Side::YMin | Side::YMax => 1,
            Side::ZMin | Side::ZMax => 2,
        }
    }

    #[inline]
    pub fn is_max(self) -> bool {
        matches!(self, Side::XMax | Side::YMax | Side::ZMax)
    }
}

impl FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xmin" | "left" => Ok(Self::XMin),
            "xmax" | "right" => Ok(Self::XMax),
            "ymin" | "bottom" => Ok(Self::YMin),
            "ymax" | "top" => Ok(Self::YMax),
            "zmin" => Ok(Self::ZMin),
            "zmax" => Ok(Self::ZMax),
            other => Err(Error::Config(format!("unknown side '{other}'"))),
        }
    }
}

/// A boundary facet: one face of one element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Facet {
    pub element: usize,
    pub side: Side,
    pub tag: FacetTag,
}

/// Structured Q2/Q1 mesh.
#[derive(Debug, Clone)]
pub struct MixedMesh<T> {
    pub geometry: Geometry,
    pub dim: usize,
    /// Element counts per axis (third entry is 1 in 2D).
    pub counts: [usize; 3],
    /// Reference coordinates of every Q2 node.
    pub nodes: Vec<[T; 3]>,
    /// Q2 node index of every Q1 (vertex) node.
    pub vertices: Vec<usize>,
    /// Q2 connectivity, `q2_nodes(dim)` entries per element.
    pub q2_conn: Vec<usize>,
    /// Q1 connectivity into the vertex list, `q1_nodes(dim)` per element.
    pub q1_conn: Vec<usize>,
    pub facets: Vec<Facet>,
    pub h_min: T,
}

/// Generates a structured mesh of `geometry` with `refinement` elements
/// per axis (the third entry is ignored in 2D).
pub fn generate_mesh<T: Real>(geometry: Geometry, refinement: [usize; 3]) -> Result<MixedMesh<T>> {
    let dim = geometry.dim();
    let mut counts = refinement;
    if dim == 2 {
        counts[2] = 1;
    }
    if counts[..dim].contains(&0) {
        return Err(Error::Config(format!("element counts must be >= 1, got {refinement:?}")));
    }
    let (nx, ny, nz) = (counts[0], counts[1], counts[2]);
    let q2_dims = [2 * nx + 1, 2 * ny + 1, if dim == 3 { 2 * nz + 1 } else { 1 }];
    let q2_index = |i: usize, j: usize, k: usize| i + q2_dims[0] * (j + q2_dims[1] * k);

    let mut nodes = Vec::with_capacity(q2_dims.iter().product());
    for k in 0..q2_dims[2] {
        for j in 0..q2_dims[1] {
            for i in 0..q2_dims[0] {
                let s = [
                    T::from_count(i) / T::from_count(2 * nx),
                    T::from_count(j) / T::from_count(2 * ny),
                    if dim == 3 {
                        T::from_count(k) / T::from_count(2 * nz)
                    } else {
                        T::zero()
                    },
                ];
                nodes.push(geometry.map(s));
            }
        }
    }

    let v_dims = [nx + 1, ny + 1, if dim == 3 { nz + 1 } else { 1 }];
    let mut vertices = Vec::with_capacity(v_dims.iter().product());
    for k in 0..v_dims[2] {
        for j in 0..v_dims[1] {
            for i in 0..v_dims[0] {
                vertices.push(q2_index(2 * i, 2 * j, 2 * k));
            }
        }
    }
    let v_index = |i: usize, j: usize, k: usize| i + v_dims[0] * (j + v_dims[1] * k);

    let n2 = q2_nodes(dim);
    let n1 = q1_nodes(dim);
    let n_el = nx * ny * nz;
    let mut q2_conn = Vec::with_capacity(n_el * n2);
    let mut q1_conn = Vec::with_capacity(n_el * n1);
    let mut facets = Vec::new();
    let kl = if dim == 3 { 3 } else { 1 };
    let kc = if dim == 3 { 2 } else { 1 };
    for ez in 0..nz {
        for ey in 0..ny {
            for ex in 0..nx {
                let e = ex + nx * (ey + ny * ez);
                for k in 0..kl {
                    for j in 0..3 {
                        for i in 0..3 {
                            q2_conn.push(q2_index(2 * ex + i, 2 * ey + j, 2 * ez + k));
                        }
                    }
                }
                for c in 0..kc {
                    for b in 0..2 {
                        for a in 0..2 {
                            q1_conn.push(v_index(ex + a, ey + b, ez + c));
                        }
                    }
                }
                let on = [
                    (Side::XMin, ex == 0),
                    (Side::XMax, ex + 1 == nx),
                    (Side::YMin, ey == 0),
                    (Side::YMax, ey + 1 == ny),
                    (Side::ZMin, dim == 3 && ez == 0),
                    (Side::ZMax, dim == 3 && ez + 1 == nz),
                ];
                for (side, boundary) in on {
                    if boundary {
                        facets.push(Facet {
                            element: e,
                            side,
                            tag: default_tag(geometry, side),
                        });
                    }
                }
            }
        }
    }

    let mut mesh = MixedMesh {
        geometry,
        dim,
        counts,
        nodes,
        vertices,
        q2_conn,
        q1_conn,
        facets,
        h_min: T::zero(),
    };
    mesh.h_min = mesh.compute_h_min();
    Ok(mesh)
}

fn default_tag(geometry: Geometry, side: Side) -> FacetTag {
    match (geometry, side) {
        (Geometry::UnitSquare, Side::YMin) => FacetTag::Fixed,
        (Geometry::CooksMembrane, Side::XMin) => FacetTag::Fixed,
        (Geometry::CooksMembrane, Side::XMax) => FacetTag::TractionLoaded,
        (Geometry::Column, Side::ZMin) => FacetTag::Fixed,
        _ => FacetTag::Free,
    }
}

impl<T: Real> MixedMesh<T> {
    #[inline]
    pub fn n_elements(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    #[inline]
    pub fn n_q2_nodes(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn n_q1_nodes(&self) -> usize {
        self.vertices.len()
    }

    #[inline]
    pub fn q2_element(&self, e: usize) -> &[usize] {
        let n = q2_nodes(self.dim);
        &self.q2_conn[e * n..(e + 1) * n]
    }

    #[inline]
    pub fn q1_element(&self, e: usize) -> &[usize] {
        let n = q1_nodes(self.dim);
        &self.q1_conn[e * n..(e + 1) * n]
    }

    /// Retags every boundary facet lying on `side`.
    pub fn set_side_tag(&mut self, side: Side, tag: FacetTag) {
        for f in self.facets.iter_mut().filter(|f| f.side == side) {
            f.tag = tag;
        }
    }

    pub fn has_tag(&self, tag: FacetTag) -> bool {
        self.facets.iter().any(|f| f.tag == tag)
    }

    fn compute_h_min(&self) -> T {
        let mut h = T::infinity();
        let dim = self.dim;
        for e in 0..self.n_elements() {
            let q1 = self.q1_element(e);
            let n1 = q1_nodes(dim);
            for m in 0..n1 {
                for axis in 0..dim {
                    if m & (1 << axis) == 0 {
                        let a = self.nodes[self.vertices[q1[m]]];
                        let b = self.nodes[self.vertices[q1[m | (1 << axis)]]];
                        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                        h = h.min(d);
                    }
                }
            }
        }
        h
    }

    /// Local Q2 indices lying on `side` of an element, in lexicographic
    /// order over the remaining axes.
    pub fn side_local_nodes(&self, side: Side) -> Vec<usize> {
        let fixed = if side.is_max() { 2 } else { 0 };
        let kl = if self.dim == 3 { 3 } else { 1 };
        let mut out = Vec::new();
        for k in 0..kl {
            for j in 0..3 {
                for i in 0..3 {
                    let idx = [i, j, k];
                    if idx[side.axis()] == fixed {
                        out.push(i + 3 * j + 9 * k);
                    }
                }
            }
        }
        out
    }

    /// Whether `(element, side)` lies on the domain boundary.
    pub fn is_boundary(&self, element: usize, side: Side) -> bool {
        let [nx, ny, nz] = self.counts;
        let (ex, ey, ez) = (element % nx, (element / nx) % ny, element / (nx * ny));
        match side {
            Side::XMin => ex == 0,
            Side::XMax => ex + 1 == nx,
            Side::YMin => ey == 0,
            Side::YMax => ey + 1 == ny,
            Side::ZMin => self.dim == 3 && ez == 0,
            Side::ZMax => self.dim == 3 && ez + 1 == nz,
        }
    }

    /// Quadrature on a boundary facet: `(reference point, Q2 local nodes on
    /// the facet are implied, weight * surface Jacobian, outward unit normal)`.
    pub fn facet_quadrature(&self, element: usize, side: Side) -> Result<Vec<FacetPoint<T>>> {
        if element >= self.n_elements() || side.axis() >= self.dim || !self.is_boundary(element, side) {
            return Err(Error::Usage(format!("element {element} side {side:?} is not a boundary facet")));
        }
        let dim = self.dim;
        let n2 = q2_nodes(dim);
        let conn = self.q2_element(element);
        let g = element::gauss3::<T>();
        let fixed = if side.is_max() { T::one() } else { -T::one() };
        let axis = side.axis();
        let others: Vec<usize> = (0..dim).filter(|&a| a != axis).collect();
        let mut vals = vec![T::zero(); n2];
        let mut grads = vec![[T::zero(); 3]; n2];
        let mut out = Vec::new();
        let pts_t: Vec<(T, T)> = if dim == 3 { g.to_vec() } else { vec![(T::zero(), T::one())] };
        for &(t, wt) in &pts_t {
            for &(s, ws) in &g {
                let mut xi = [T::zero(); 3];
                xi[axis] = fixed;
                xi[others[0]] = s;
                if dim == 3 {
                    xi[others[1]] = t;
                }
                element::q2_shape(dim, xi, &mut vals, &mut grads);
                // tangent vectors dX/dxi along the in-facet axes
                let mut tang = [[T::zero(); 3]; 2];
                for (ti, &oa) in others.iter().enumerate() {
                    for (l, &node) in conn.iter().enumerate() {
                        let x = self.nodes[node];
                        for c in 0..3 {
                            tang[ti][c] += grads[l][oa] * x[c];
                        }
                    }
                }
                let (jac, mut normal) = if dim == 2 {
                    let tv = tang[0];
                    let len = (tv[0] * tv[0] + tv[1] * tv[1]).sqrt();
                    (len, [tv[1] / len, -tv[0] / len, T::zero()])
                } else {
                    let (a, b) = (tang[0], tang[1]);
                    let n = [
                        a[1] * b[2] - a[2] * b[1],
                        a[2] * b[0] - a[0] * b[2],
                        a[0] * b[1] - a[1] * b[0],
                    ];
                    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                    (len, [n[0] / len, n[1] / len, n[2] / len])
                };
                // orient outward: compare with the direction from the cell
                // center to the facet point
                let mut x_pt = [T::zero(); 3];
                for (l, &node) in conn.iter().enumerate() {
                    for c in 0..3 {
                        x_pt[c] += vals[l] * self.nodes[node][c];
                    }
                }
                let center = self.element_center(element);
                let outward: T = (0..3).map(|c| (x_pt[c] - center[c]) * normal[c]).sum();
                if outward < T::zero() {
                    for c in normal.iter_mut() {
                        *c = -*c;
                    }
                }
                out.push(FacetPoint {
                    xi,
                    weight: ws * wt * jac,
                    normal,
                });
            }
        }
        Ok(out)
    }

    fn element_center(&self, e: usize) -> [T; 3] {
        let conn = self.q2_element(e);
        let center_local = if self.dim == 2 { 4 } else { 13 };
        self.nodes[conn[center_local]]
    }
}

/// A facet quadrature point.
#[derive(Debug, Clone, Copy)]
pub struct FacetPoint<T> {
    pub xi: [T; 3],
    /// Quadrature weight times the surface Jacobian.
    pub weight: T,
    pub normal: [T; 3],
}

/// Total measure and outward unit normal (at the facet center) of a
/// boundary facet in the reference configuration.
pub fn facet_area_and_normal<T: Real>(mesh: &MixedMesh<T>, facet: &Facet) -> Result<(T, [T; 3])> {
    let pts = mesh.facet_quadrature(facet.element, facet.side)?;
    let area = pts.iter().map(|p| p.weight).sum();
    let mid = pts.len() / 2;
    Ok((area, pts[mid].normal))
}

/// Degree-of-freedom layout of the Taylor-Hood pair.
///
/// Velocity dof of Q2 node `n`, component `c` is `n * dim + c`; pressure
/// dofs coincide with Q1 vertex indices.
#[derive(Debug, Clone)]
pub struct DofMap<T> {
    pub dim: usize,
    pub n_velocity_dofs: usize,
    pub n_pressure_dofs: usize,
    /// Sorted Dirichlet velocity dofs and their prescribed values.
    pub constrained: BTreeMap<usize, T>,
    /// Per-dof constraint flag.
    pub is_constrained: Vec<bool>,
}

impl<T: Real> DofMap<T> {
    #[inline]
    pub fn velocity_dof(&self, node: usize, comp: usize) -> usize {
        node * self.dim + comp
    }

    /// Velocity dofs of element `e`, node-major.
    pub fn element_velocity_dofs(&self, mesh: &MixedMesh<T>, e: usize, out: &mut Vec<usize>) {
        out.clear();
        for &n in mesh.q2_element(e) {
            for c in 0..self.dim {
                out.push(n * self.dim + c);
            }
        }
    }

    #[inline]
    pub fn element_pressure_dofs<'a>(&self, mesh: &'a MixedMesh<T>, e: usize) -> &'a [usize] {
        mesh.q1_element(e)
    }
}

/// Builds the Taylor-Hood dof map. Every velocity dof on a facet whose tag
/// appears in `dirichlet` is constrained to the listed velocity.
pub fn taylor_hood_dofmap<T: Real>(mesh: &MixedMesh<T>, dirichlet: &[(FacetTag, [T; 3])]) -> Result<DofMap<T>> {
    let dim = mesh.dim;
    for (tag, _) in dirichlet {
        if *tag != FacetTag::Fixed {
            return Err(Error::Config(format!("tag {tag:?} cannot carry a Dirichlet condition")));
        }
    }
    let n_velocity_dofs = dim * mesh.n_q2_nodes();
    let mut constrained = BTreeMap::new();
    let mut is_constrained = vec![false; n_velocity_dofs];
    for facet in &mesh.facets {
        let Some((_, value)) = dirichlet.iter().find(|(t, _)| *t == facet.tag) else {
            continue;
        };
        let conn = mesh.q2_element(facet.element);
        for l in mesh.side_local_nodes(facet.side) {
            for c in 0..dim {
                let d = conn[l] * dim + c;
                constrained.insert(d, value[c]);
                is_constrained[d] = true;
            }
        }
    }
    Ok(DofMap {
        dim,
        n_velocity_dofs,
        n_pressure_dofs: mesh.n_q1_nodes(),
        constrained,
        is_constrained,
    })
}

/// Dof map with homogeneous Dirichlet conditions on `Fixed` facets.
pub fn default_dofmap<T: Real>(mesh: &MixedMesh<T>) -> DofMap<T> {
    taylor_hood_dofmap(mesh, &[(FacetTag::Fixed, [T::zero(); 3])]).expect("Fixed tag is always admissible")
}
