//! Triangle meshes of the reference domain.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    /// Endpoints, ordered as in the owning (counter-clockwise) triangle, so the
    /// outward normal is the edge direction rotated clockwise.
    pub v: [usize; 2],
    pub tag: u32,
    pub element: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub rest_vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub dirichlet_tags: BTreeSet<u32>,
    pub body_id: Vec<usize>,
    /// Interior edges as (vertex pair, the two adjacent elements).
    pub interior_edges: Vec<([usize; 2], [usize; 2])>,
}

/// How boundary edges are tagged. Untagged edges get `default_tag`.
#[derive(Clone, Debug, Default)]
pub struct BoundarySpec {
    pub default_tag: u32,
    /// Explicit tags keyed by unordered vertex pair.
    pub tagged: Vec<([usize; 2], u32)>,
    /// Axis-aligned boxes `[xmin, ymin, xmax, ymax]`; an edge whose endpoints
    /// both lie inside gets the tag. Later entries win.
    pub boxes: Vec<([f64; 4], u32)>,
    pub dirichlet_tags: BTreeSet<u32>,
    pub body_id: Option<Vec<usize>>,
}

pub fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn in_box(p: [f64; 2], b: &[f64; 4]) -> bool {
    p[0] >= b[0] && p[0] <= b[2] && p[1] >= b[1] && p[1] <= b[3]
}

pub fn build_mesh(
    rest_vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    spec: &BoundarySpec,
) -> Result<Mesh> {
    let nv = rest_vertices.len();
    if triangles.is_empty() {
        return Err(Error::InvalidMesh("mesh has no triangles".into()));
    }
    let mut seen = BTreeSet::new();
    for (e, t) in triangles.iter().enumerate() {
        if t.iter().any(|&i| i >= nv) {
            return Err(Error::InvalidMesh(format!(
                "triangle {e} references a vertex out of range"
            )));
        }
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            return Err(Error::InvalidMesh(format!("triangle {e} repeats a vertex")));
        }
        let mut s = *t;
        s.sort_unstable();
        if !seen.insert(s) {
            return Err(Error::InvalidMesh(format!("triangle {e} is a duplicate")));
        }
        let area = signed_area(rest_vertices[t[0]], rest_vertices[t[1]], rest_vertices[t[2]]);
        if !(area > 0.0) {
            return Err(Error::InvertedRestElement { element: e, area });
        }
    }
    let mut used = vec![false; nv];
    triangles.iter().flatten().for_each(|&i| used[i] = true);
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(Error::InvalidMesh(format!("vertex {i} belongs to no triangle")));
    }
    let body_id = match &spec.body_id {
        Some(b) if b.len() != triangles.len() => {
            return Err(Error::Dimension(format!(
                "{} body ids for {} triangles",
                b.len(),
                triangles.len()
            )))
        }
        Some(b) => b.clone(),
        None => vec![0; triangles.len()],
    };

    // directed half-edges -> owning element
    let mut half: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (e, t) in triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if half.insert((a, b), e).is_some() {
                return Err(Error::NonManifold(a, b));
            }
        }
    }
    let explicit: BTreeMap<(usize, usize), u32> = spec
        .tagged
        .iter()
        .map(|&([a, b], tag)| (key(a, b), tag))
        .collect();
    let mut boundary_edges = Vec::new();
    let mut interior_edges = Vec::new();
    for (&(a, b), &e) in &half {
        match half.get(&(b, a)) {
            Some(&f) => {
                if a < b {
                    if body_id[e] != body_id[f] {
                        return Err(Error::InvalidMesh(format!(
                            "edge ({a}, {b}) joins two different bodies"
                        )));
                    }
                    interior_edges.push(([a, b], [e, f]));
                }
            }
            None => {
                let mut tag = spec.default_tag;
                for (bx, t) in &spec.boxes {
                    if in_box(rest_vertices[a], bx) && in_box(rest_vertices[b], bx) {
                        tag = *t;
                    }
                }
                if let Some(&t) = explicit.get(&key(a, b)) {
                    tag = t;
                }
                boundary_edges.push(BoundaryEdge {
                    v: [a, b],
                    tag,
                    element: e,
                });
            }
        }
    }
    for &(ab, _) in &spec.tagged {
        let k = key(ab[0], ab[1]);
        if !boundary_edges.iter().any(|be| key(be.v[0], be.v[1]) == k) {
            return Err(Error::DanglingReference(format!(
                "tagged edge ({}, {}) is not a boundary edge",
                ab[0], ab[1]
            )));
        }
    }

    // closed loops: every boundary vertex has exactly one outgoing and one incoming edge
    let mut out_deg: BTreeMap<usize, usize> = BTreeMap::new();
    let mut in_deg: BTreeMap<usize, usize> = BTreeMap::new();
    for be in &boundary_edges {
        *out_deg.entry(be.v[0]).or_default() += 1;
        *in_deg.entry(be.v[1]).or_default() += 1;
    }
    for (&v, &d) in &out_deg {
        if d != 1 || in_deg.get(&v) != Some(&1) {
            let other = boundary_edges
                .iter()
                .find(|be| be.v[0] == v)
                .map(|be| be.v[1])
                .unwrap_or(v);
            return Err(Error::NonManifold(v, other));
        }
    }

    Ok(Mesh {
        rest_vertices,
        triangles,
        boundary_edges,
        dirichlet_tags: spec.dirichlet_tags.clone(),
        body_id,
        interior_edges,
    })
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_bodies(&self) -> usize {
        self.body_id.iter().copied().max().map_or(0, |b| b + 1)
    }

    /// Flat `[x0, y0, x1, y1, ...]` rest coordinates.
    pub fn rest_shape(&self) -> Vec<f64> {
        self.rest_vertices.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    /// Body of each vertex (taken from any incident triangle).
    pub fn vertex_body(&self) -> Vec<usize> {
        let mut b = vec![0; self.n_vertices()];
        for (e, t) in self.triangles.iter().enumerate() {
            for &v in t {
                b[v] = self.body_id[e];
            }
        }
        b
    }

    pub fn boundary_vertices(&self) -> BTreeSet<usize> {
        self.boundary_edges.iter().flat_map(|e| e.v).collect()
    }

    /// Element adjacency through shared edges.
    pub fn element_neighbors(&self) -> Vec<Vec<usize>> {
        let mut n = vec![Vec::new(); self.n_elements()];
        for &(_, [e, f]) in &self.interior_edges {
            n[e].push(f);
            n[f].push(e);
        }
        for l in &mut n {
            l.sort_unstable();
        }
        n
    }

    /// Neighbors of each boundary vertex along the boundary loop.
    pub fn boundary_neighbors(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for be in &self.boundary_edges {
            m.entry(be.v[0]).or_default().push(be.v[1]);
            m.entry(be.v[1]).or_default().push(be.v[0]);
        }
        for l in m.values_mut() {
            l.sort_unstable();
            l.dedup();
        }
        m
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &self.rest_vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
    }

    /// Concatenates meshes; body ids of later meshes are offset so bodies stay distinct.
    pub fn merge(parts: &[Mesh]) -> Result<Mesh> {
        let mut verts = Vec::new();
        let mut tris = Vec::new();
        let mut bodies = Vec::new();
        let mut tagged = Vec::new();
        let mut dirichlet_tags = BTreeSet::new();
        let mut body_off = 0;
        for m in parts {
            let off = verts.len();
            verts.extend_from_slice(&m.rest_vertices);
            tris.extend(m.triangles.iter().map(|t| t.map(|i| i + off)));
            bodies.extend(m.body_id.iter().map(|b| b + body_off));
            tagged.extend(
                m.boundary_edges
                    .iter()
                    .map(|be| ([be.v[0] + off, be.v[1] + off], be.tag)),
            );
            dirichlet_tags.extend(m.dirichlet_tags.iter().copied());
            body_off += m.n_bodies();
        }
        build_mesh(
            verts,
            tris,
            &BoundarySpec {
                tagged,
                dirichlet_tags,
                body_id: Some(bodies),
                ..Default::default()
            },
        )
    }
}

/// Parses a plain-text listing:
///
/// ```text
/// # comment
/// v x y
/// t a b c [body]
/// e a b tag
/// d tag          (marks a tag as Dirichlet)
/// ```
pub fn parse_listing(text: &str) -> Result<Mesh> {
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    let mut bodies = Vec::new();
    let mut spec = BoundarySpec::default();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let kind = it.next().unwrap();
        let rest: Vec<&str> = it.collect();
        let bad = |what: &str| Error::InvalidMesh(format!("line {}: {what}", ln + 1));
        let f = |s: &str| s.parse::<f64>().map_err(|_| bad("expected a number"));
        let i = |s: &str| s.parse::<usize>().map_err(|_| bad("expected an index"));
        match (kind, rest.len()) {
            ("v", 2) => verts.push([f(rest[0])?, f(rest[1])?]),
            ("t", 3 | 4) => {
                tris.push([i(rest[0])?, i(rest[1])?, i(rest[2])?]);
                bodies.push(if rest.len() == 4 { i(rest[3])? } else { 0 });
            }
            ("e", 3) => spec
                .tagged
                .push(([i(rest[0])?, i(rest[1])?], i(rest[2])? as u32)),
            ("d", 1) => {
                spec.dirichlet_tags.insert(i(rest[0])? as u32);
            }
            _ => return Err(bad("unrecognized record")),
        }
    }
    spec.body_id = Some(bodies);
    build_mesh(verts, tris, &spec)
}

/// Structured `nx` by `ny` grid over `[x0, x0 + w] × [y0, y0 + h]`, each cell
/// split along alternating diagonals.
pub fn rectangle(x0: f64, y0: f64, w: f64, h: f64, nx: usize, ny: usize) -> (Vec<[f64; 2]>, Vec<[usize; 3]>) {
    let mut v = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            v.push([x0 + w * i as f64 / nx as f64, y0 + h * j as f64 / ny as f64]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut t = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                t.push([a, b, c]);
                t.push([a, c, d]);
            } else {
                t.push([a, b, d]);
                t.push([b, c, d]);
            }
        }
    }
    (v, t)
}

/// Disk made of `rings` concentric rings with `6k` vertices on ring `k`.
pub fn disk(center: [f64; 2], radius: f64, rings: usize) -> (Vec<[f64; 2]>, Vec<[usize; 3]>) {
    use std::f64::consts::TAU;
    let mut v = vec![center];
    let mut start = vec![0usize];
    for k in 1..=rings {
        start.push(v.len());
        let r = radius * k as f64 / rings as f64;
        let n = 6 * k;
        for j in 0..n {
            let a = TAU * j as f64 / n as f64;
            v.push([center[0] + r * a.cos(), center[1] + r * a.sin()]);
        }
    }
    let count = |k: usize| if k == 0 { 1 } else { 6 * k };
    let mut t = Vec::new();
    for k in 1..=rings {
        let (ni, no) = (count(k - 1), count(k));
        let (si, so) = (start[k - 1], start[k]);
        let inner = |i: usize| si + i % ni;
        let outer = |o: usize| so + o % no;
        if ni == 1 {
            for o in 0..no {
                t.push([si, outer(o), outer(o + 1)]);
            }
            continue;
        }
        // zip the two rings together by angle
        let (mut i, mut o) = (0usize, 0usize);
        while i < ni || o < no {
            let next_i = (i + 1) as f64 / ni as f64;
            let next_o = (o + 1) as f64 / no as f64;
            if i >= ni || (o < no && next_o <= next_i) {
                t.push([inner(i), outer(o), outer(o + 1)]);
                o += 1;
            } else {
                t.push([inner(i), outer(o), inner(i + 1)]);
                i += 1;
            }
        }
    }
    (v, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triangle_has_three_boundary_edges() {
        let m = build_mesh(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            &BoundarySpec::default(),
        )
        .unwrap();
        assert_eq!(m.boundary_edges.len(), 3);
        assert!(m.interior_edges.is_empty());
    }

    #[test]
    fn clockwise_triangle_is_rejected() {
        let r = build_mesh(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 2, 1]],
            &BoundarySpec::default(),
        );
        assert!(matches!(r, Err(Error::InvertedRestElement { element: 0, .. })));
    }

    #[test]
    fn two_by_two_square() {
        let (v, t) = rectangle(0.0, 0.0, 1.0, 1.0, 2, 2);
        assert_eq!(t.len(), 8);
        let m = build_mesh(v, t, &BoundarySpec::default()).unwrap();
        assert_eq!(m.boundary_edges.len(), 8);
        assert_eq!(m.interior_edges.len(), 8);
    }

    #[test]
    fn three_triangles_on_one_edge_is_non_manifold() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [0.6, 2.0]];
        let t = vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]];
        assert!(matches!(
            build_mesh(v, t, &BoundarySpec::default()),
            Err(Error::NonManifold(..))
        ));
    }

    #[test]
    fn bowtie_vertex_is_rejected() {
        // two triangles touching at a single vertex: the boundary is not a simple loop
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        let t = vec![[0, 1, 2], [0, 3, 4]];
        assert!(build_mesh(v, t, &BoundarySpec::default()).is_err());
    }

    #[test]
    fn disk_is_valid() {
        let (v, t) = disk([0.0, 0.0], 1.0, 4);
        assert_eq!(v.len(), 1 + 3 * 4 * 5);
        let m = build_mesh(v, t, &BoundarySpec::default()).unwrap();
        assert_eq!(m.boundary_edges.len(), 24);
        let area: f64 = m
            .triangles
            .iter()
            .map(|t| signed_area(m.rest_vertices[t[0]], m.rest_vertices[t[1]], m.rest_vertices[t[2]]))
            .sum();
        // inscribed 24-gon
        let expect = 0.5 * 24.0 * (std::f64::consts::TAU / 24.0).sin();
        assert!((area - expect).abs() < 1e-12);
    }

    #[test]
    fn listing_round_trip() {
        let text = "# unit square\nv 0 0\nv 1 0\nv 1 1\nv 0 1\nt 0 1 2\nt 0 2 3\ne 0 1 7\nd 7\n";
        let m = parse_listing(text).unwrap();
        assert_eq!(m.n_elements(), 2);
        let tagged: Vec<_> = m.boundary_edges.iter().filter(|e| e.tag == 7).collect();
        assert_eq!(tagged.len(), 1);
        assert!(m.dirichlet_tags.contains(&7));
        assert!(parse_listing("v 0 0\nq 1\n").is_err());
    }

    #[test]
    fn box_tags_select_edges() {
        let (v, t) = rectangle(0.0, 0.0, 2.0, 1.0, 4, 2);
        let spec = BoundarySpec {
            boxes: vec![([-0.1, -0.1, 0.1, 1.1], 3)],
            ..Default::default()
        };
        let m = build_mesh(v, t, &spec).unwrap();
        assert_eq!(m.boundary_edges.iter().filter(|e| e.tag == 3).count(), 2);
    }
}
