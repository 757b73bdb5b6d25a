//! Lagrange bases, quadrature, the discrete solution space and the
//! piecewise-linear geometric map.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Local node order for P2: the three vertices, then the midpoints of edges
/// (0,1), (1,2), (2,0).
pub const P2_EDGES: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];

/// Reference gradients of the linear geometric basis.
pub const GEOM_GRAD: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSet {
    pub order: usize,
}

impl BasisSet {
    pub fn new(order: usize) -> Result<Self> {
        match order {
            1 | 2 => Ok(Self { order }),
            _ => Err(Error::schema("/discretization/order", "order must be 1 or 2")),
        }
    }

    pub fn nodes_per_element(&self) -> usize {
        if self.order == 1 {
            3
        } else {
            6
        }
    }

    pub fn node_coordinates(&self) -> Vec<[f64; 2]> {
        let mut n = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        if self.order == 2 {
            n.extend([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]);
        }
        n
    }

    /// Values and reference gradients at a point of the reference triangle.
    pub fn eval(&self, local: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let (s, t) = (local[0], local[1]);
        let l = [1.0 - s - t, s, t];
        if self.order == 1 {
            return (l.to_vec(), GEOM_GRAD.to_vec());
        }
        let mut val = Vec::with_capacity(6);
        let mut grad = Vec::with_capacity(6);
        for i in 0..3 {
            val.push(l[i] * (2.0 * l[i] - 1.0));
            let d = 4.0 * l[i] - 1.0;
            grad.push([d * GEOM_GRAD[i][0], d * GEOM_GRAD[i][1]]);
        }
        for [i, j] in P2_EDGES {
            val.push(4.0 * l[i] * l[j]);
            grad.push([
                4.0 * (l[i] * GEOM_GRAD[j][0] + l[j] * GEOM_GRAD[i][0]),
                4.0 * (l[i] * GEOM_GRAD[j][1] + l[j] * GEOM_GRAD[i][1]),
            ]);
        }
        (val, grad)
    }
}

pub fn eval_basis(basis: BasisSet, local: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
    basis.eval(local)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature {
    pub degree: usize,
    pub points: Vec<[f64; 2]>,
    /// Sum to 1/2, the reference triangle area.
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn triangle(degree: usize) -> Self {
        match degree {
            0 | 1 => Self {
                degree: 1,
                points: vec![[1.0 / 3.0, 1.0 / 3.0]],
                weights: vec![0.5],
            },
            2 => Self {
                degree: 2,
                points: vec![[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]],
                weights: vec![1.0 / 6.0; 3],
            },
            _ => {
                // Dunavant, 6 points, degree 4
                let (a, wa) = (0.445_948_490_915_965, 0.223_381_589_678_011 / 2.0);
                let (b, wb) = (0.091_576_213_509_771, 0.109_951_743_655_322 / 2.0);
                Self {
                    degree: 4,
                    points: vec![
                        [a, a],
                        [1.0 - 2.0 * a, a],
                        [a, 1.0 - 2.0 * a],
                        [b, b],
                        [1.0 - 2.0 * b, b],
                        [b, 1.0 - 2.0 * b],
                    ],
                    weights: vec![wa, wa, wa, wb, wb, wb],
                }
            }
        }
    }

    /// Gauss-Legendre rule on [0, 1] with 3 points (exact to degree 5).
    pub fn segment() -> (Vec<f64>, Vec<f64>) {
        let r = (0.6f64).sqrt() / 2.0;
        (vec![0.5 - r, 0.5, 0.5 + r], vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])
    }
}

/// Per-element affine map from the reference triangle.
#[derive(Clone, Copy, Debug)]
pub struct ElemGeom {
    pub jac: Matrix2<f64>,
    pub det: f64,
    /// `J^{-T}`, maps reference gradients to physical ones.
    pub jinv_t: Matrix2<f64>,
    /// Physical gradients of the three geometric basis functions.
    pub grad_xi: [Vector2<f64>; 3],
}

impl ElemGeom {
    pub fn new(x: [[f64; 2]; 3]) -> Self {
        let jac = Matrix2::new(
            x[1][0] - x[0][0],
            x[2][0] - x[0][0],
            x[1][1] - x[0][1],
            x[2][1] - x[0][1],
        );
        let det = jac.determinant();
        let jinv_t = Matrix2::new(jac[(1, 1)], -jac[(1, 0)], -jac[(0, 1)], jac[(0, 0)]) / det;
        let grad_xi = GEOM_GRAD.map(|g| jinv_t * Vector2::new(g[0], g[1]));
        Self {
            jac,
            det,
            jinv_t,
            grad_xi,
        }
    }

    pub fn grad(&self, g: [f64; 2]) -> Vector2<f64> {
        self.jinv_t * Vector2::new(g[0], g[1])
    }
}

pub fn element_vertices(tri: &[usize; 3], shape: &[f64]) -> [[f64; 2]; 3] {
    tri.map(|v| [shape[2 * v], shape[2 * v + 1]])
}

/// Evaluates the geometric map of element `elem` under vertex positions `shape`.
pub fn geometric_map(
    mesh: &Mesh,
    shape: &[f64],
    elem: usize,
    local: [f64; 2],
) -> Result<([f64; 2], Matrix2<f64>, f64)> {
    let t = &mesh.triangles[elem];
    let x = element_vertices(t, shape);
    let g = ElemGeom::new(x);
    let rest = ElemGeom::new(t.map(|v| mesh.rest_vertices[v]));
    if g.det <= 1e-12 * rest.det {
        return Err(Error::DegenerateElement {
            element: elem,
            det: g.det,
        });
    }
    let l = [1.0 - local[0] - local[1], local[0], local[1]];
    let p = [
        l[0] * x[0][0] + l[1] * x[1][0] + l[2] * x[2][0],
        l[0] * x[0][1] + l[1] * x[1][1] + l[2] * x[2][1],
    ];
    Ok((p, g.jac, g.det))
}

/// Scaled Jacobian of a triangle: the minimum over corners of
/// `2·area / (|e1| |e2|)`, normalized so the equilateral triangle scores 1.
pub fn triangle_quality(x: [[f64; 2]; 3]) -> f64 {
    let area2 = (x[1][0] - x[0][0]) * (x[2][1] - x[0][1]) - (x[1][1] - x[0][1]) * (x[2][0] - x[0][0]);
    let len = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let l = [len(x[1], x[2]), len(x[2], x[0]), len(x[0], x[1])];
    let mut q = f64::INFINITY;
    for c in 0..3 {
        let denom = l[(c + 1) % 3] * l[(c + 2) % 3];
        if denom == 0.0 {
            return 0.0;
        }
        q = q.min(area2 / denom);
    }
    q * 2.0 / 3f64.sqrt()
}

pub fn scaled_jacobian_quality(mesh: &Mesh, shape: &[f64]) -> Vec<f64> {
    mesh.triangles
        .iter()
        .map(|t| triangle_quality(element_vertices(t, shape)))
        .collect()
}

/// Boundary polyline used for contact, expressed in solution nodes.
#[derive(Clone, Debug, Default)]
pub struct CollisionMesh {
    /// Solution nodes on the boundary.
    pub vertices: Vec<usize>,
    /// Edges as pairs of solution nodes; P2 boundary edges are split at the midpoint.
    pub edges: Vec<[usize; 2]>,
    pub edge_body: Vec<usize>,
    /// For each collision vertex, the collision edges that contain it.
    pub vertex_edges: Vec<Vec<usize>>,
    /// Position of each node in `vertices`, if any.
    pub local_of_node: BTreeMap<usize, usize>,
}

/// The discrete solution space: node numbering, element-to-node maps and
/// reference basis tables.
#[derive(Clone, Debug)]
pub struct FeSpace {
    pub basis: BasisSet,
    pub quad: Quadrature,
    pub n_nodes: usize,
    pub elem_nodes: Vec<Vec<usize>>,
    /// Every node is the average of one or two vertices (`[v, v]` for vertex nodes).
    pub node_parents: Vec<[usize; 2]>,
    /// Midpoint node of each vertex pair (P2 only).
    pub edge_node: BTreeMap<(usize, usize), usize>,
    /// Basis values at quadrature points, `[q][local node]`.
    pub ref_vals: Vec<Vec<f64>>,
    /// Reference basis gradients at quadrature points.
    pub ref_grads: Vec<Vec<[f64; 2]>>,
    pub node_body: Vec<usize>,
    pub collision: CollisionMesh,
}

impl FeSpace {
    pub fn new(mesh: &Mesh, order: usize) -> Result<Self> {
        let basis = BasisSet::new(order)?;
        let quad = Quadrature::triangle(if order == 1 { 2 } else { 4 });
        let nv = mesh.n_vertices();
        let mut node_parents: Vec<[usize; 2]> = (0..nv).map(|v| [v, v]).collect();
        let mut edge_node = BTreeMap::new();
        let mut elem_nodes = Vec::with_capacity(mesh.n_elements());
        for t in &mesh.triangles {
            let mut nodes = t.to_vec();
            if order == 2 {
                for [i, j] in P2_EDGES {
                    let (a, b) = (t[i].min(t[j]), t[i].max(t[j]));
                    let n = *edge_node.entry((a, b)).or_insert_with(|| {
                        node_parents.push([a, b]);
                        node_parents.len() - 1
                    });
                    nodes.push(n);
                }
            }
            elem_nodes.push(nodes);
        }
        let n_nodes = node_parents.len();
        let vb = mesh.vertex_body();
        let node_body = node_parents.iter().map(|p| vb[p[0]]).collect();
        let (ref_vals, ref_grads) = quad.points.iter().map(|&p| basis.eval(p)).unzip();

        let mut collision = CollisionMesh::default();
        for be in &mesh.boundary_edges {
            let body = mesh.body_id[be.element];
            let [a, b] = be.v;
            if order == 2 {
                let m = edge_node[&(a.min(b), a.max(b))];
                collision.edges.push([a, m]);
                collision.edges.push([m, b]);
                collision.edge_body.extend([body, body]);
            } else {
                collision.edges.push([a, b]);
                collision.edge_body.push(body);
            }
        }
        let mut nodes: Vec<usize> = collision.edges.iter().flatten().copied().collect();
        nodes.sort_unstable();
        nodes.dedup();
        collision.local_of_node = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        collision.vertex_edges = vec![Vec::new(); nodes.len()];
        for (k, e) in collision.edges.iter().enumerate() {
            for n in e {
                collision.vertex_edges[collision.local_of_node[n]].push(k);
            }
        }
        collision.vertices = nodes;

        Ok(Self {
            basis,
            quad,
            n_nodes,
            elem_nodes,
            node_parents,
            edge_node,
            ref_vals,
            ref_grads,
            node_body,
            collision,
        })
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes
    }

    pub fn nodes_per_element(&self) -> usize {
        self.basis.nodes_per_element()
    }

    /// Node positions from vertex positions (the upsampling map).
    pub fn node_positions(&self, shape: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.n_nodes);
        for &[a, b] in &self.node_parents {
            x.push(0.5 * (shape[2 * a] + shape[2 * b]));
            x.push(0.5 * (shape[2 * a + 1] + shape[2 * b + 1]));
        }
        x
    }

    /// Transpose of the upsampling map: pulls a node-space vector back to vertices.
    pub fn node_to_vertex_adjoint(&self, g_nodes: &[f64], nv: usize) -> Vec<f64> {
        let mut g = vec![0.0; 2 * nv];
        for (n, &[a, b]) in self.node_parents.iter().enumerate() {
            for c in 0..2 {
                g[2 * a + c] += 0.5 * g_nodes[2 * n + c];
                g[2 * b + c] += 0.5 * g_nodes[2 * n + c];
            }
        }
        g
    }

    /// Element geometry for every element, failing on degenerate ones.
    pub fn geometry(&self, mesh: &Mesh, shape: &[f64]) -> Result<Vec<ElemGeom>> {
        mesh.triangles
            .iter()
            .enumerate()
            .map(|(e, t)| {
                let g = ElemGeom::new(element_vertices(t, shape));
                let rest = signed_rest_det(mesh, e);
                if g.det <= 1e-12 * rest {
                    Err(Error::DegenerateElement { element: e, det: g.det })
                } else {
                    Ok(g)
                }
            })
            .collect()
    }

    /// Physical basis gradients of one element at every quadrature point.
    pub fn phys_grads(&self, g: &ElemGeom) -> Vec<Vec<Vector2<f64>>> {
        self.ref_grads
            .iter()
            .map(|q| q.iter().map(|&r| g.grad(r)).collect())
            .collect()
    }

    /// `∇u` at each quadrature point of an element.
    pub fn grad_u(&self, e: usize, grads: &[Vec<Vector2<f64>>], u: &[f64]) -> Vec<Matrix2<f64>> {
        let nodes = &self.elem_nodes[e];
        grads
            .iter()
            .map(|gq| {
                let mut m = Matrix2::zeros();
                for (a, &n) in nodes.iter().enumerate() {
                    let ua = Vector2::new(u[2 * n], u[2 * n + 1]);
                    m += ua * gq[a].transpose();
                }
                m
            })
            .collect()
    }

    /// Value of a nodal field at each quadrature point of an element.
    pub fn value_at_quad(&self, e: usize, u: &[f64]) -> Vec<Vector2<f64>> {
        let nodes = &self.elem_nodes[e];
        self.ref_vals
            .iter()
            .map(|vq| {
                let mut s = Vector2::zeros();
                for (a, &n) in nodes.iter().enumerate() {
                    s += vq[a] * Vector2::new(u[2 * n], u[2 * n + 1]);
                }
                s
            })
            .collect()
    }
}

/// Element geometry and physical basis gradients for one shape.
#[derive(Clone, Debug)]
pub struct Geometry<'a> {
    pub mesh: &'a Mesh,
    pub space: &'a FeSpace,
    pub shape: Vec<f64>,
    pub elems: Vec<ElemGeom>,
    /// `[element][quadrature point][local node]`
    pub grads: Vec<Vec<Vec<Vector2<f64>>>>,
}

impl<'a> Geometry<'a> {
    pub fn new(mesh: &'a Mesh, space: &'a FeSpace, shape: &[f64]) -> Result<Self> {
        if shape.len() != 2 * mesh.n_vertices() {
            return Err(Error::Dimension(format!(
                "shape vector has {} entries, mesh needs {}",
                shape.len(),
                2 * mesh.n_vertices()
            )));
        }
        let elems = space.geometry(mesh, shape)?;
        let grads = elems.iter().map(|g| space.phys_grads(g)).collect();
        Ok(Self {
            mesh,
            space,
            shape: shape.to_vec(),
            elems,
            grads,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.elems.len()
    }

    /// Quadrature weight times `|det J|` at point `q` of element `e`.
    pub fn wdet(&self, e: usize, q: usize) -> f64 {
        self.space.quad.weights[q] * self.elems[e].det
    }

    pub fn grad_u(&self, e: usize, u: &[f64]) -> Vec<Matrix2<f64>> {
        self.space.grad_u(e, &self.grads[e], u)
    }

    pub fn area(&self, e: usize) -> f64 {
        0.5 * self.elems[e].det
    }

    pub fn element_vertices(&self, e: usize) -> [[f64; 2]; 3] {
        element_vertices(&self.mesh.triangles[e], &self.shape)
    }
}

fn signed_rest_det(mesh: &Mesh, e: usize) -> f64 {
    let t = mesh.triangles[e];
    2.0 * crate::mesh::signed_area(
        mesh.rest_vertices[t[0]],
        mesh.rest_vertices[t[1]],
        mesh.rest_vertices[t[2]],
    )
}

/// Physical point of quadrature point `q` in an element.
pub fn quad_point(x: &[[f64; 2]; 3], local: [f64; 2]) -> Vector2<f64> {
    let l = [1.0 - local[0] - local[1], local[0], local[1]];
    Vector2::new(
        l[0] * x[0][0] + l[1] * x[1][0] + l[2] * x[2][0],
        l[0] * x[0][1] + l[1] * x[1][1] + l[2] * x[2][1],
    )
}
