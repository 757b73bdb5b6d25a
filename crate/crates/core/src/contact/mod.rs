//! Smoothed barrier contact between boundary points and boundary edges.
//!
//! Every (point, edge) candidate closer than `dhat` contributes
//! `κ A_k b(d_k)` to the contact potential, where `d_k` is the distance from
//! the point to the segment. A candidate whose closest feature is an edge
//! endpoint is classified as point-point.

pub mod ccd;
pub mod friction;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{CollisionMesh, FeSpace};
use crate::jet::{Jet, JetVec2};
use crate::sparse::Triplets;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    pub dhat: f64,
    pub kappa: f64,
}

/// `b(d) = −(d − d̂)² ln(d / d̂)` below `d̂`, zero above; returns `(b, b', b'')`.
pub fn barrier(d: f64, dhat: f64) -> Result<(f64, f64, f64)> {
    if !(d > 0.0) {
        return Err(Error::NonPositiveDistance(d));
    }
    if d >= dhat {
        return Ok((0.0, 0.0, 0.0));
    }
    let r = d - dhat;
    let l = (d / dhat).ln();
    let b = -r * r * l;
    let db = -2.0 * r * l - r * r / d;
    let ddb = -2.0 * l - 4.0 * r / d + r * r / (d * d);
    Ok((b, db, ddb))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContactKind {
    PointPoint,
    PointEdge,
}

/// A (point, edge) candidate in collision-node indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactPair {
    pub kind: ContactKind,
    /// Solution node of the point.
    pub point: usize,
    /// Index into the collision edge list.
    pub edge: usize,
    /// Stencil `[point, edge start, edge end]` as solution nodes.
    pub nodes: [usize; 3],
    /// For point-point pairs, which edge endpoint (0 or 1) is closest.
    pub closest: usize,
    pub body_pair: (usize, usize),
    pub area: f64,
}

#[derive(Clone, Debug)]
pub struct PairEval {
    pub d: f64,
    pub grad: [f64; 6],
    pub hess: [[f64; 6]; 6],
}

fn node(x: &[f64], n: usize) -> [f64; 2] {
    [x[2 * n], x[2 * n + 1]]
}

/// Position of the foot of `p` on segment `ab` as a fraction of the edge.
pub fn foot_parameter(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let e = [b[0] - a[0], b[1] - a[1]];
    let l2 = e[0] * e[0] + e[1] * e[1];
    ((p[0] - a[0]) * e[0] + (p[1] - a[1]) * e[1]) / l2
}

/// Point-segment distance with the point-point fallback at the endpoints.
pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let t = foot_parameter(p, a, b).clamp(0.0, 1.0);
    let f = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    ((p[0] - f[0]).powi(2) + (p[1] - f[1]).powi(2)).sqrt()
}

/// Distance of a classified pair and its derivatives with respect to the
/// stacked stencil coordinates `(p, a, b)`.
pub fn pair_distance(kind: ContactKind, closest: usize, p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> Result<PairEval> {
    let jp = JetVec2::<6>::var(p, 0);
    let ja = JetVec2::<6>::var(a, 1);
    let jb = JetVec2::<6>::var(b, 2);
    let d: Jet<6> = match kind {
        ContactKind::PointPoint => {
            let c = if closest == 0 { ja } else { jb };
            let r = jp - c;
            r.dot(r).sqrt()
        }
        ContactKind::PointEdge => {
            let e = jb - ja;
            let l2 = e.dot(e);
            if !(l2.v > 0.0) {
                return Err(Error::DegenerateEdge(0, 0));
            }
            let c = e.cross(jp - ja);
            (c * c).sqrt() / l2.sqrt()
        }
    };
    if !(d.v > 0.0) {
        return Err(Error::NonPositiveDistance(d.v));
    }
    Ok(PairEval {
        d: d.v,
        grad: d.g,
        hess: d.h,
    })
}

/// Classifies the candidate (point `p`, edge `e`) and evaluates its distance.
pub fn distance(pair: &ContactPair, x: &[f64]) -> Result<PairEval> {
    let [p, a, b] = pair.nodes;
    pair_distance(pair.kind, pair.closest, node(x, p), node(x, a), node(x, b))
}

pub fn classify(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (ContactKind, usize) {
    let t = foot_parameter(p, a, b);
    if t <= 0.0 {
        (ContactKind::PointPoint, 0)
    } else if t >= 1.0 {
        (ContactKind::PointPoint, 1)
    } else {
        (ContactKind::PointEdge, 0)
    }
}

fn edge_length(x: &[f64], e: [usize; 2]) -> f64 {
    let (a, b) = (node(x, e[0]), node(x, e[1]));
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

/// Collision surface: the boundary polyline plus which nodes are fully fixed.
#[derive(Clone, Debug)]
pub struct ContactSurface<'a> {
    pub cm: &'a CollisionMesh,
    /// Per solution node, whether both components are prescribed.
    pub fixed: Vec<bool>,
}

impl<'a> ContactSurface<'a> {
    pub fn new(space: &'a FeSpace, fixed: Vec<bool>) -> Self {
        Self {
            cm: &space.collision,
            fixed,
        }
    }

    /// Area weight `A_k`: half the rest length of the edges around the point
    /// plus the rest length of the edge.
    pub fn pair_area(&self, rest: &[f64], point: usize, edge: usize) -> f64 {
        let lp: f64 = self.cm.vertex_edges[self.cm.local_of_node[&point]]
            .iter()
            .map(|&k| edge_length(rest, self.cm.edges[k]))
            .sum();
        0.5 * lp + edge_length(rest, self.cm.edges[edge])
    }

    /// `∂A_k/∂X` as (node, gradient) entries.
    pub fn pair_area_gradient(&self, rest: &[f64], point: usize, edge: usize) -> Vec<(usize, [f64; 2])> {
        let mut out = Vec::new();
        let mut add = |k: usize, w: f64| {
            let [a, b] = self.cm.edges[k];
            let (pa, pb) = (node(rest, a), node(rest, b));
            let l = edge_length(rest, [a, b]);
            let t = [(pb[0] - pa[0]) / l, (pb[1] - pa[1]) / l];
            out.push((b, [w * t[0], w * t[1]]));
            out.push((a, [-w * t[0], -w * t[1]]));
        };
        for &k in &self.cm.vertex_edges[self.cm.local_of_node[&point]] {
            add(k, 0.5);
        }
        add(edge, 1.0);
        out
    }

    fn max_edge_length(&self, x: &[f64]) -> f64 {
        self.cm
            .edges
            .iter()
            .map(|&e| edge_length(x, e))
            .fold(0.0, f64::max)
    }

    fn admissible(&self, point: usize, edge: [usize; 2]) -> bool {
        point != edge[0]
            && point != edge[1]
            && !(self.fixed[point] && self.fixed[edge[0]] && self.fixed[edge[1]])
    }

    /// All candidates closer than `dhat` in configuration `x` (node positions),
    /// sorted by (point, edge). Area weights use the rest positions `rest`.
    pub fn active_set(&self, x: &[f64], rest: &[f64], dhat: f64) -> Vec<ContactPair> {
        let cm = self.cm;
        if cm.edges.is_empty() {
            return Vec::new();
        }
        let cell = dhat + self.max_edge_length(x);
        let key = |v: f64| (v / cell).floor() as i64;
        let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (k, &[a, b]) in cm.edges.iter().enumerate() {
            let (pa, pb) = (node(x, a), node(x, b));
            let (x0, x1) = (key(pa[0].min(pb[0]) - dhat), key(pa[0].max(pb[0]) + dhat));
            let (y0, y1) = (key(pa[1].min(pb[1]) - dhat), key(pa[1].max(pb[1]) + dhat));
            for i in x0..=x1 {
                for j in y0..=y1 {
                    grid.entry((i, j)).or_default().push(k);
                }
            }
        }
        let mut out = Vec::new();
        for &p in &cm.vertices {
            let pp = node(x, p);
            let Some(cands) = grid.get(&(key(pp[0]), key(pp[1]))) else {
                continue;
            };
            let mut cands = cands.clone();
            cands.sort_unstable();
            cands.dedup();
            for k in cands {
                let e = cm.edges[k];
                if !self.admissible(p, e) {
                    continue;
                }
                let (pa, pb) = (node(x, e[0]), node(x, e[1]));
                if point_segment_distance(pp, pa, pb) >= dhat {
                    continue;
                }
                let (kind, closest) = classify(pp, pa, pb);
                let pb_ = cm.edge_body[k];
                let vb = cm.edge_body[cm.vertex_edges[cm.local_of_node[&p]][0]];
                out.push(ContactPair {
                    kind,
                    point: p,
                    edge: k,
                    nodes: [p, e[0], e[1]],
                    closest,
                    body_pair: (vb, pb_),
                    area: self.pair_area(rest, p, k),
                });
            }
        }
        out
    }

    /// Smallest point-segment distance over all admissible pairs, by brute force.
    pub fn min_distance(&self, x: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for &p in &self.cm.vertices {
            for &e in &self.cm.edges {
                if self.admissible(p, e) {
                    m = m.min(point_segment_distance(node(x, p), node(x, e[0]), node(x, e[1])));
                }
            }
        }
        m
    }
}

/// Contact potential value, its gradient `H^c = ∇E` over all DOFs, and
/// optionally the Hessian `∇²E`.
pub struct ContactEval {
    pub energy: f64,
    pub grad: Vec<f64>,
    pub hess: Option<Triplets>,
}

fn stencil_dof(nodes: &[usize; 3], r: usize) -> usize {
    2 * nodes[r / 2] + r % 2
}

pub fn contact_terms(
    pairs: &[ContactPair],
    x: &[f64],
    params: &BarrierParams,
    want_hess: bool,
) -> Result<ContactEval> {
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut hess = want_hess.then(|| Triplets::new(n, n));
    let mut energy = 0.0;
    for pair in pairs {
        let pe = distance(pair, x)?;
        let (b, db, ddb) = barrier(pe.d, params.dhat)?;
        let w = params.kappa * pair.area;
        energy += w * b;
        for r in 0..6 {
            grad[stencil_dof(&pair.nodes, r)] += w * db * pe.grad[r];
        }
        if let Some(t) = hess.as_mut() {
            for r in 0..6 {
                for s in 0..6 {
                    let v = w * (ddb * pe.grad[r] * pe.grad[s] + db * pe.hess[r][s]);
                    t.push(stencil_dof(&pair.nodes, r), stencil_dof(&pair.nodes, s), v);
                }
            }
        }
    }
    Ok(ContactEval { energy, grad, hess })
}

/// `H^c` and `A^c` for the active set of the configuration `rest + u`.
pub fn contact_force(
    surf: &ContactSurface,
    rest: &[f64],
    u: &[f64],
    params: &BarrierParams,
) -> Result<(Vec<f64>, crate::sparse::CsrMatrix)> {
    let x: Vec<f64> = rest.iter().zip(u).map(|(a, b)| a + b).collect();
    let pairs = surf.active_set(&x, rest, params.dhat);
    let ev = contact_terms(&pairs, &x, params, true)?;
    Ok((ev.grad, ev.hess.unwrap().into_csr()))
}

/// `pᵀ ∂_q H^c` over vertex coordinates. Moving a vertex moves the rest
/// positions of nodes (through the upsampling map) and the area weights.
pub fn contact_shape_product(
    surf: &ContactSurface,
    space: &FeSpace,
    pairs: &[ContactPair],
    x: &[f64],
    rest: &[f64],
    params: &BarrierParams,
    p: &[f64],
    n_vertices: usize,
) -> Result<Vec<f64>> {
    let mut g_nodes = vec![0.0; x.len()];
    for pair in pairs {
        let pe = distance(pair, x)?;
        let (_, db, ddb) = barrier(pe.d, params.dhat)?;
        let w = params.kappa * pair.area;
        let mut pstencil = [0.0; 6];
        for r in 0..6 {
            pstencil[r] = p[stencil_dof(&pair.nodes, r)];
        }
        let gp: f64 = (0..6).map(|r| pe.grad[r] * pstencil[r]).sum();
        // deformed positions move with the rest positions
        for s in 0..6 {
            let mut v = 0.0;
            for r in 0..6 {
                v += (ddb * pe.grad[r] * pe.grad[s] + db * pe.hess[r][s]) * pstencil[r];
            }
            g_nodes[stencil_dof(&pair.nodes, s)] += w * v;
        }
        // area weight
        let coef = params.kappa * db * gp;
        for (nd, g) in surf.pair_area_gradient(rest, pair.point, pair.edge) {
            g_nodes[2 * nd] += coef * g[0];
            g_nodes[2 * nd + 1] += coef * g[1];
        }
    }
    Ok(space.node_to_vertex_adjoint(&g_nodes, n_vertices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, rectangle, BoundarySpec, Mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn barrier_values() {
        assert_eq!(barrier(1.0, 1.0).unwrap(), (0.0, 0.0, 0.0));
        assert_eq!(barrier(2.0, 1.0).unwrap(), (0.0, 0.0, 0.0));
        let (b, _, _) = barrier(0.5, 1.0).unwrap();
        assert!((b - 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((b - 0.1733).abs() < 1e-4);
        assert!(matches!(barrier(0.0, 1.0), Err(Error::NonPositiveDistance(_))));
        let h = 1e-6;
        for d in [0.1, 0.4, 0.9] {
            let (_, db, ddb) = barrier(d, 1.0).unwrap();
            let fd1 = (barrier(d + h, 1.0).unwrap().0 - barrier(d - h, 1.0).unwrap().0) / (2.0 * h);
            let fd2 = (barrier(d + h, 1.0).unwrap().1 - barrier(d - h, 1.0).unwrap().1) / (2.0 * h);
            assert!(rel(db, fd1) < 1e-7);
            assert!(rel(ddb, fd2) < 1e-7);
        }
        // C2 at the truncation point
        let (b, db, ddb) = barrier(1.0 - 1e-9, 1.0).unwrap();
        assert!(b.abs() < 1e-20 && db.abs() < 1e-12 && ddb.abs() < 1e-7);
    }

    #[test]
    fn distance_examples() {
        let (k, c) = classify([0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]);
        assert_eq!(k, ContactKind::PointEdge);
        let d = pair_distance(k, c, [0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]).unwrap();
        assert!((d.d - 1.0).abs() < 1e-15);
        assert!(d.grad[0].abs() < 1e-15 && (d.grad[1] - 1.0).abs() < 1e-15);
        let (k, c) = classify([2.0, 0.0], [-1.0, 0.0], [1.0, 0.0]);
        assert_eq!((k, c), (ContactKind::PointPoint, 1));
        let d = pair_distance(k, c, [2.0, 0.0], [-1.0, 0.0], [1.0, 0.0]).unwrap();
        assert!((d.d - 1.0).abs() < 1e-15);
        assert!((d.grad[4] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn distance_derivatives_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let mut pts: Vec<f64> = (0..6).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            pts[4] += 1.5;
            let f = |v: &[f64]| {
                let (p, a, b) = ([v[0], v[1]], [v[2], v[3]], [v[4], v[5]]);
                point_segment_distance(p, a, b)
            };
            let (p, a, b) = ([pts[0], pts[1]], [pts[2], pts[3]], [pts[4], pts[5]]);
            let (k, c) = classify(p, a, b);
            let ev = pair_distance(k, c, p, a, b).unwrap();
            assert!((ev.d - f(&pts)).abs() < 1e-14);
            let h = 1e-6;
            for s in 0..6 {
                let mut xp = pts.clone();
                xp[s] += h;
                let mut xm = pts.clone();
                xm[s] -= h;
                assert!((ev.grad[s] - (f(&xp) - f(&xm)) / (2.0 * h)).abs() < 1e-6);
                let gp = pair_distance(k, c, [xp[0], xp[1]], [xp[2], xp[3]], [xp[4], xp[5]]).unwrap().grad;
                let gm = pair_distance(k, c, [xm[0], xm[1]], [xm[2], xm[3]], [xm[4], xm[5]]).unwrap().grad;
                for r in 0..6 {
                    let fd = (gp[r] - gm[r]) / (2.0 * h);
                    assert!((ev.hess[r][s] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
                }
            }
        }
    }

    fn two_squares(gap: f64, n: usize) -> Mesh {
        let (v1, t1) = rectangle(0.0, 0.0, 1.0, 1.0, n, n);
        let (v2, t2) = rectangle(0.0, 1.0 + gap, 1.0, 1.0, n, n);
        let a = build_mesh(v1, t1, &BoundarySpec::default()).unwrap();
        let b = build_mesh(v2, t2, &BoundarySpec::default()).unwrap();
        Mesh::merge(&[a, b]).unwrap()
    }

    #[test]
    fn separated_and_single_body_sets_are_empty() {
        let m = two_squares(0.5, 2);
        let sp = FeSpace::new(&m, 1).unwrap();
        let surf = ContactSurface::new(&sp, vec![false; sp.n_nodes]);
        let x = sp.node_positions(&m.rest_shape());
        assert!(surf.active_set(&x, &x, 0.1).is_empty());
        let (v, t) = crate::mesh::disk([0.0, 0.0], 1.0, 3);
        let m = build_mesh(v, t, &BoundarySpec::default()).unwrap();
        let sp = FeSpace::new(&m, 1).unwrap();
        let surf = ContactSurface::new(&sp, vec![false; sp.n_nodes]);
        let x = sp.node_positions(&m.rest_shape());
        assert!(surf.active_set(&x, &x, 0.05).is_empty());
    }

    #[test]
    fn facing_squares_match_brute_force() {
        let dhat = 0.1;
        for order in [1, 2] {
            let m = two_squares(dhat / 2.0, 3);
            let sp = FeSpace::new(&m, order).unwrap();
            let surf = ContactSurface::new(&sp, vec![false; sp.n_nodes]);
            let x = sp.node_positions(&m.rest_shape());
            let got: Vec<(usize, usize)> = surf.active_set(&x, &x, dhat).iter().map(|p| (p.point, p.edge)).collect();
            let mut want = Vec::new();
            for &p in &sp.collision.vertices {
                for (k, e) in sp.collision.edges.iter().enumerate() {
                    if p != e[0] && p != e[1] && point_segment_distance(node(&x, p), node(&x, e[0]), node(&x, e[1])) < dhat {
                        want.push((p, k));
                    }
                }
            }
            assert_eq!(got, want);
            assert!(!got.is_empty());
            // every pair spans the gap
            for pr in surf.active_set(&x, &x, dhat) {
                assert_ne!(pr.body_pair.0, pr.body_pair.1);
            }
        }
    }

    fn near_contact_state(rng: &mut ChaCha8Rng) -> (Mesh, FeSpace, Vec<f64>) {
        let m = two_squares(0.05, 2);
        let sp = FeSpace::new(&m, 2).unwrap();
        let mut u = vec![0.0; sp.n_dofs()];
        for v in u.iter_mut() {
            *v = 0.01 * (2.0 * rng.random::<f64>() - 1.0);
        }
        (m, sp, u)
    }

    #[test]
    fn point_point_force_example() {
        // two collision vertices aligned with x, at distance dhat/2
        let params = BarrierParams { dhat: 0.2, kappa: 3.0 };
        let pair = ContactPair {
            kind: ContactKind::PointPoint,
            point: 0,
            edge: 0,
            nodes: [0, 1, 2],
            closest: 0,
            body_pair: (0, 1),
            area: 0.7,
        };
        let x = [0.1, 0.0, 0.0, 0.0, -1.0, 0.0];
        let ev = contact_terms(&[pair], &x, &params, false).unwrap();
        let (_, db, _) = barrier(0.1, 0.2).unwrap();
        let mag = params.kappa * db.abs() * 0.7;
        // H^c = ∇E; the physical force is −H^c and pushes the point away along +x
        assert!((-ev.grad[0] - mag).abs() < 1e-12);
        assert!((-ev.grad[2] + mag).abs() < 1e-12);
        assert_eq!(ev.grad[1], 0.0);
        assert_eq!(ev.grad[4], 0.0);
    }

    #[test]
    fn contact_derivatives_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = BarrierParams { dhat: 0.1, kappa: 10.0 };
        for _ in 0..5 {
            let (m, sp, u) = near_contact_state(&mut rng);
            let surf = ContactSurface::new(&sp, vec![false; sp.n_nodes]);
            let shape = m.rest_shape();
            let rest = sp.node_positions(&shape);
            let x: Vec<f64> = rest.iter().zip(&u).map(|(a, b)| a + b).collect();
            let pairs = surf.active_set(&x, &rest, params.dhat);
            assert!(!pairs.is_empty());
            let ev = contact_terms(&pairs, &x, &params, true).unwrap();
            let hm = ev.hess.unwrap().into_csr();
            // balance: forces sum to zero per component
            let sx: f64 = ev.grad.iter().step_by(2).sum();
            let sy: f64 = ev.grad.iter().skip(1).step_by(2).sum();
            let scale = ev.grad.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            assert!(sx.abs() < 1e-12 * scale && sy.abs() < 1e-12 * scale);
            assert!(hm.add_scaled(1.0, &hm.transpose(), -1.0).max_abs() <= 1e-10 * hm.max_abs());
            // fixed pair set: gradient and Hessian vs FD
            let dir: Vec<f64> = (0..x.len()).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let h = 1e-7;
            let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
            let ep = contact_terms(&pairs, &xp, &params, false).unwrap();
            let em = contact_terms(&pairs, &xm, &params, false).unwrap();
            let gd: f64 = ev.grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!(rel(gd, (ep.energy - em.energy) / (2.0 * h)) < 1e-5);
            let hd = hm.mul_vec(&dir);
            let hs = hd.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            for i in 0..x.len() {
                assert!(((ep.grad[i] - em.grad[i]) / (2.0 * h) - hd[i]).abs() < 1e-5 * hs);
            }
            // shape product vs FD of pᵀ H^c with u fixed
            let p: Vec<f64> = (0..x.len()).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let sprod = contact_shape_product(&surf, &sp, &pairs, &x, &rest, &params, &p, m.n_vertices()).unwrap();
            let theta: Vec<f64> = (0..shape.len()).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let pair_val = |s: &[f64]| {
                let rest = sp.node_positions(s);
                let x: Vec<f64> = rest.iter().zip(&u).map(|(a, b)| a + b).collect();
                let pr: Vec<ContactPair> = pairs
                    .iter()
                    .map(|q| ContactPair { area: surf.pair_area(&rest, q.point, q.edge), ..*q })
                    .collect();
                let g = contact_terms(&pr, &x, &params, false).unwrap().grad;
                g.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>()
            };
            let sp_: Vec<f64> = shape.iter().zip(&theta).map(|(a, b)| a + h * b).collect();
            let sm_: Vec<f64> = shape.iter().zip(&theta).map(|(a, b)| a - h * b).collect();
            let fd = (pair_val(&sp_) - pair_val(&sm_)) / (2.0 * h);
            let an: f64 = sprod.iter().zip(&theta).map(|(a, b)| a * b).sum();
            assert!(rel(an, fd) < 1e-5, "{an} vs {fd}");
        }
    }

    #[test]
    fn far_configurations_have_no_barrier_terms() {
        let m = two_squares(0.3, 2);
        let sp = FeSpace::new(&m, 1).unwrap();
        let surf = ContactSurface::new(&sp, vec![false; sp.n_nodes]);
        let x = sp.node_positions(&m.rest_shape());
        let u = vec![0.0; x.len()];
        let (h, a) = contact_force(&surf, &x, &u, &BarrierParams { dhat: 0.2, kappa: 1.0 }).unwrap();
        assert!(h.iter().all(|v| *v == 0.0));
        assert_eq!(a.nnz(), 0);
    }
}
