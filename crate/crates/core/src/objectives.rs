//! Objective functionals with their solution derivatives (`R`, over DOFs) and
//! parameter derivatives (`S`, over shape vertices and per-element material).

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{FeSpace, Geometry, Quadrature};
use crate::materials::contract_left;
use crate::scene::{ParamVector, Scene};

/// Quadratic one-sided penalty `φ(z) = z²` for `z > 0`, else 0; returns `(φ, φ')`.
pub fn one_sided(z: f64) -> (f64, f64) {
    if z > 0.0 {
        (z * z, 2.0 * z)
    } else {
        (0.0, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermKind {
    /// `(∫ ‖σ‖_F^p)^{1/p}`.
    StressNorm {
        p: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        body: Option<usize>,
    },
    /// `∫ w ‖x + u − x^trg‖²` over the domain, or over tagged boundary edges
    /// when `boundary` is set. Targets and weights are nodal (or per vertex);
    /// one target vector serves every step, otherwise one per step.
    TargetDeformation {
        targets: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        #[serde(default)]
        boundary: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        body: Option<usize>,
    },
    /// `‖c − c^trg‖²` with `c` the mass-weighted center of the deformed body.
    CenterOfMass {
        targets: Vec<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        body: Option<usize>,
    },
    /// `−c_y`.
    Height {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        body: Option<usize>,
    },
    /// `φ(V − V_t)` on the rest domain.
    VolumePenalty {
        target: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        body: Option<usize>,
    },
    /// `∫ φ(‖σ‖_F − s_t)`.
    StressUpperBound {
        bound: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        body: Option<usize>,
    },
    /// `Σ_i ‖s_i‖^p` over boundary vertices and their boundary-loop neighbors.
    BoundarySmoothing { p: f64 },
    /// Directed sum of squared neighbor ratio deviations of `λ` and `μ`.
    MaterialSmoothing,
}

pub const KINDS: [&str; 8] = [
    "stress_norm",
    "target_deformation",
    "center_of_mass",
    "height",
    "volume_penalty",
    "stress_upper_bound",
    "boundary_smoothing",
    "material_smoothing",
];

impl TermKind {
    /// Whether the term depends on the state (and is summed over time).
    pub fn is_state_term(&self) -> bool {
        !matches!(
            self,
            TermKind::VolumePenalty { .. } | TermKind::BoundarySmoothing { .. } | TermKind::MaterialSmoothing
        )
    }
}

/// Time quadrature of a state term.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeWeights {
    /// `w_0 = 0`, `w_i = Δt`.
    #[default]
    Uniform,
    /// `w_N = 1`, zero elsewhere.
    Terminal,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    #[serde(flatten)]
    pub kind: TermKind,
    #[serde(default = "unit")]
    pub weight: f64,
    #[serde(default)]
    pub time: TimeWeights,
}

fn unit() -> f64 {
    1.0
}

impl Term {
    pub fn new(kind: TermKind) -> Self {
        Self {
            kind,
            weight: 1.0,
            time: TimeWeights::Uniform,
        }
    }

    /// Weight of step `i`; `None` timing means a static problem.
    pub fn step_weight(&self, i: usize, timing: Option<(usize, f64)>) -> f64 {
        let w = match timing {
            None => 1.0,
            Some((n, dt)) => match &self.time {
                TimeWeights::Uniform => {
                    if i == 0 {
                        0.0
                    } else {
                        dt
                    }
                }
                TimeWeights::Terminal => {
                    if i == n {
                        1.0
                    } else {
                        0.0
                    }
                }
                TimeWeights::Explicit(v) => v.get(i).copied().unwrap_or(0.0),
            },
        };
        self.weight * w
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectiveSpec {
    pub terms: Vec<Term>,
}

/// Value and requested derivatives of one evaluation.
#[derive(Clone, Debug, Default)]
pub struct Partial {
    pub value: f64,
    /// Over all DOFs.
    pub du: Vec<f64>,
    pub shape: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

impl Partial {
    fn zeros(geo: &Geometry) -> Self {
        Self {
            value: 0.0,
            du: vec![0.0; geo.space.n_dofs()],
            shape: vec![0.0; 2 * geo.mesh.n_vertices()],
            lambda: vec![0.0; geo.n_elements()],
            mu: vec![0.0; geo.n_elements()],
        }
    }

    fn add_scaled(&mut self, w: f64, o: &Partial) {
        self.value += w * o.value;
        for (a, b) in [
            (&mut self.du, &o.du),
            (&mut self.shape, &o.shape),
            (&mut self.lambda, &o.lambda),
            (&mut self.mu, &o.mu),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += w * y;
            }
        }
    }

    /// The parameter part as a gradient vector shaped like `template`.
    pub fn to_params(&self, template: &ParamVector) -> ParamVector {
        let mut g = template.zeros_like();
        g.shape.clone_from(&self.shape);
        g.lambda.clone_from(&self.lambda);
        g.mu.clone_from(&self.mu);
        g
    }
}

/// Expands a per-vertex or per-node field of dimension `dim` to nodes.
pub fn nodal_field(space: &FeSpace, n_vertices: usize, values: &[f64], dim: usize) -> Result<Vec<f64>> {
    if values.len() == dim * space.n_nodes {
        return Ok(values.to_vec());
    }
    if values.len() != dim * n_vertices {
        return Err(Error::Dimension(format!(
            "nodal field has {} entries, expected {} or {}",
            values.len(),
            dim * space.n_nodes,
            dim * n_vertices
        )));
    }
    let mut out = Vec::with_capacity(dim * space.n_nodes);
    for &[a, b] in &space.node_parents {
        for c in 0..dim {
            out.push(0.5 * (values[dim * a + c] + values[dim * b + c]));
        }
    }
    Ok(out)
}

fn in_body(geo: &Geometry, e: usize, body: Option<usize>) -> bool {
    body.is_none_or(|b| geo.mesh.body_id[e] == b)
}

fn barycentric(local: [f64; 2]) -> [f64; 3] {
    [1.0 - local[0] - local[1], local[0], local[1]]
}

/// Scatters `Σ_l G_cl ∂_l ξ_v` into vertex coordinates.
fn scatter_g(out: &mut [f64], geo: &Geometry, e: usize, g: &Matrix2<f64>) {
    for (v, &vert) in geo.mesh.triangles[e].iter().enumerate() {
        let b = g * geo.elems[e].grad_xi[v];
        out[2 * vert] += b[0];
        out[2 * vert + 1] += b[1];
    }
}

/// Scatters a pointwise vector `a` times the barycentric weights.
fn scatter_point(out: &mut [f64], geo: &Geometry, e: usize, xi: [f64; 3], a: Vector2<f64>) {
    for (v, &vert) in geo.mesh.triangles[e].iter().enumerate() {
        out[2 * vert] += xi[v] * a[0];
        out[2 * vert + 1] += xi[v] * a[1];
    }
}

/// Integrals of a pointwise stress functional `j(σ)`; `dj` maps `(σ, ‖σ‖)`
/// to `(j, ∂j/∂σ)`.
fn stress_integral(
    geo: &Geometry,
    scene: &Scene,
    u: &[f64],
    body: Option<usize>,
    dj: &dyn Fn(&Matrix2<f64>) -> (f64, Matrix2<f64>),
) -> Result<Partial> {
    let sp = geo.space;
    let mut out = Partial::zeros(geo);
    for e in 0..geo.n_elements() {
        if !in_body(geo, e, body) {
            continue;
        }
        let nodes = &sp.elem_nodes[e];
        let mut gs = Matrix2::zeros();
        for (q, gu) in geo.grad_u(e, u).iter().enumerate() {
            let s = scene.material.stress(e, gu)?;
            let w = geo.wdet(e, q);
            let (j, djs) = dj(&s.f);
            out.value += w * j;
            // ∂j/∂∇u
            let gt = contract_left(&djs, &s.df_dgradu);
            for (a, &n) in nodes.iter().enumerate() {
                let v = gt * geo.grads[e][q][a];
                out.du[2 * n] += w * v[0];
                out.du[2 * n + 1] += w * v[1];
            }
            gs += w * (-gu.transpose() * gt + j * Matrix2::identity());
            out.lambda[e] += w * djs.component_mul(&s.df_dlambda).sum();
            out.mu[e] += w * djs.component_mul(&s.df_dmu).sum();
        }
        scatter_g(&mut out.shape, geo, e, &gs);
    }
    Ok(out)
}

fn stress_norm(geo: &Geometry, scene: &Scene, u: &[f64], p: f64, body: Option<usize>) -> Result<Partial> {
    let dj = |f: &Matrix2<f64>| {
        let n = f.norm();
        (n.powf(p), p * n.powf(p - 2.0) * f)
    };
    let mut out = stress_integral(geo, scene, u, body, &dj)?;
    let i = out.value;
    let c = if i > 0.0 { i.powf(1.0 / p - 1.0) / p } else { 0.0 };
    let mut scaled = Partial::zeros(geo);
    scaled.add_scaled(c, &out);
    out = scaled;
    out.value = i.powf(1.0 / p);
    Ok(out)
}

fn stress_upper_bound(geo: &Geometry, scene: &Scene, u: &[f64], bound: f64, body: Option<usize>) -> Result<Partial> {
    let dj = |f: &Matrix2<f64>| {
        let n = f.norm();
        let (v, d) = one_sided(n - bound);
        if d == 0.0 {
            (v, Matrix2::zeros())
        } else {
            (v, (d / n) * f)
        }
    };
    stress_integral(geo, scene, u, body, &dj)
}

fn pick<T>(list: &[T], step: usize) -> Result<&T> {
    match list.len() {
        0 => Err(Error::Dimension("empty target list".into())),
        1 => Ok(&list[0]),
        _ => list
            .get(step)
            .ok_or_else(|| Error::Dimension(format!("no target for step {step}"))),
    }
}

struct TargetArgs<'a> {
    targets: &'a [Vec<f64>],
    weights: Option<&'a [f64]>,
    boundary: bool,
    tag: Option<u32>,
    body: Option<usize>,
}

fn target_deformation(geo: &Geometry, u: &[f64], step: usize, a: &TargetArgs) -> Result<Partial> {
    let sp = geo.space;
    let nv = geo.mesh.n_vertices();
    let target = nodal_field(sp, nv, pick(a.targets, step)?, 2)?;
    let weights = match a.weights {
        Some(w) => nodal_field(sp, nv, w, 1)?,
        None => vec![1.0; sp.n_nodes],
    };
    let rest = sp.node_positions(&geo.shape);
    // nodal deviation x + u − x^trg
    let dev: Vec<f64> = (0..rest.len()).map(|k| rest[k] + u[k] - target[k]).collect();
    let mut out = Partial::zeros(geo);
    if a.boundary {
        let (pts, wts) = Quadrature::segment();
        for be in &geo.mesh.boundary_edges {
            if a.tag.is_some_and(|t| t != be.tag) {
                continue;
            }
            let [va, vb] = be.v;
            let nodes = if sp.basis.order == 2 {
                vec![va, sp.edge_node[&(va.min(vb), va.max(vb))], vb]
            } else {
                vec![va, vb]
            };
            let d = Vector2::new(
                geo.shape[2 * vb] - geo.shape[2 * va],
                geo.shape[2 * vb + 1] - geo.shape[2 * va + 1],
            );
            let len = d.norm();
            let tangent = d / len;
            for (&s, &ws) in pts.iter().zip(&wts) {
                let n: Vec<f64> = if nodes.len() == 2 {
                    vec![1.0 - s, s]
                } else {
                    vec![(1.0 - s) * (1.0 - 2.0 * s), 4.0 * s * (1.0 - s), s * (2.0 * s - 1.0)]
                };
                let mut e = Vector2::zeros();
                let mut w = 0.0;
                for (k, &nd) in nodes.iter().enumerate() {
                    e += n[k] * Vector2::new(dev[2 * nd], dev[2 * nd + 1]);
                    w += n[k] * weights[nd];
                }
                let j = w * e.norm_squared();
                out.value += ws * len * j;
                for (k, &nd) in nodes.iter().enumerate() {
                    out.du[2 * nd] += ws * len * 2.0 * w * e[0] * n[k];
                    out.du[2 * nd + 1] += ws * len * 2.0 * w * e[1] * n[k];
                }
                // ∇₂j·θ with θ linear along the edge, and j ∇_s·θ
                let g = ws * len * 2.0 * w * e;
                for (vert, xi, sign) in [(va, 1.0 - s, -1.0), (vb, s, 1.0)] {
                    for c in 0..2 {
                        out.shape[2 * vert + c] += xi * g[c] + sign * ws * j * tangent[c];
                    }
                }
            }
        }
    } else {
        for e in 0..geo.n_elements() {
            if !in_body(geo, e, a.body) {
                continue;
            }
            let nodes = &sp.elem_nodes[e];
            let ev = sp.value_at_quad(e, &dev);
            let mut div = 0.0;
            for (q, vq) in sp.ref_vals.iter().enumerate() {
                let wq: f64 = nodes.iter().enumerate().map(|(k, &nd)| vq[k] * weights[nd]).sum();
                let wd = geo.wdet(e, q);
                let j = wq * ev[q].norm_squared();
                out.value += wd * j;
                for (k, &nd) in nodes.iter().enumerate() {
                    out.du[2 * nd] += wd * 2.0 * wq * ev[q][0] * vq[k];
                    out.du[2 * nd + 1] += wd * 2.0 * wq * ev[q][1] * vq[k];
                }
                let xi = barycentric(sp.quad.points[q]);
                scatter_point(&mut out.shape, geo, e, xi, wd * 2.0 * wq * ev[q]);
                div += wd * j;
            }
            scatter_g(&mut out.shape, geo, e, &(div * Matrix2::identity()));
        }
    }
    Ok(out)
}

/// Mass-weighted center of the deformed body with its derivatives:
/// `(c, ∂c/∂u as two DOF vectors, ∂c/∂X as two vertex vectors)`.
fn center(geo: &Geometry, scene: &Scene, u: &[f64], body: Option<usize>) -> Result<([f64; 2], [Vec<f64>; 2], [Vec<f64>; 2])> {
    let sp = geo.space;
    let rho = &scene.material.density;
    let rest = sp.node_positions(&geo.shape);
    let xd: Vec<f64> = rest.iter().zip(u).map(|(a, b)| a + b).collect();
    let nd = sp.n_dofs();
    let nvd = 2 * geo.mesh.n_vertices();
    let mut m = 0.0;
    let mut num = Vector2::zeros();
    let mut dm = vec![0.0; nvd];
    let mut dnum = [vec![0.0; nvd], vec![0.0; nvd]];
    let mut dnum_du = vec![0.0; nd];
    let mut any = false;
    for e in 0..geo.n_elements() {
        if !in_body(geo, e, body) {
            continue;
        }
        any = true;
        let nodes = &sp.elem_nodes[e];
        let xq = sp.value_at_quad(e, &xd);
        let mut me = 0.0;
        let mut ne = Vector2::zeros();
        for (q, vq) in sp.ref_vals.iter().enumerate() {
            let w = rho[e] * geo.wdet(e, q);
            me += w;
            ne += w * xq[q];
            for (k, &n) in nodes.iter().enumerate() {
                dnum_du[2 * n] += w * vq[k];
                dnum_du[2 * n + 1] += w * vq[k];
            }
            let xi = barycentric(sp.quad.points[q]);
            for c in 0..2 {
                let mut unit = Vector2::zeros();
                unit[c] = w;
                scatter_point(&mut dnum[c], geo, e, xi, unit);
            }
        }
        m += me;
        num += ne;
        scatter_g(&mut dm, geo, e, &(me * Matrix2::identity()));
        for c in 0..2 {
            scatter_g(&mut dnum[c], geo, e, &(ne[c] * Matrix2::identity()));
        }
    }
    if !any {
        return Err(Error::DanglingReference(format!("body {body:?} has no elements")));
    }
    let c = [num[0] / m, num[1] / m];
    let mut dcu = [vec![0.0; nd], vec![0.0; nd]];
    for n in 0..sp.n_nodes {
        dcu[0][2 * n] = dnum_du[2 * n] / m;
        dcu[1][2 * n + 1] = dnum_du[2 * n + 1] / m;
    }
    let dcx = [0, 1].map(|k| (0..nvd).map(|i| (dnum[k][i] - c[k] * dm[i]) / m).collect::<Vec<f64>>());
    Ok((c, dcu, dcx))
}

fn center_of_mass(geo: &Geometry, scene: &Scene, u: &[f64], step: usize, targets: &[[f64; 2]], body: Option<usize>) -> Result<Partial> {
    let (c, dcu, dcx) = center(geo, scene, u, body)?;
    let t = pick(targets, step)?;
    let d = [c[0] - t[0], c[1] - t[1]];
    let mut out = Partial::zeros(geo);
    out.value = d[0] * d[0] + d[1] * d[1];
    for k in 0..2 {
        for (o, v) in out.du.iter_mut().zip(&dcu[k]) {
            *o += 2.0 * d[k] * v;
        }
        for (o, v) in out.shape.iter_mut().zip(&dcx[k]) {
            *o += 2.0 * d[k] * v;
        }
    }
    Ok(out)
}

fn height(geo: &Geometry, scene: &Scene, u: &[f64], body: Option<usize>) -> Result<Partial> {
    let (c, dcu, dcx) = center(geo, scene, u, body)?;
    let mut out = Partial::zeros(geo);
    out.value = -c[1];
    out.du = dcu[1].iter().map(|v| -v).collect();
    out.shape = dcx[1].iter().map(|v| -v).collect();
    Ok(out)
}

fn volume_penalty(geo: &Geometry, target: f64, body: Option<usize>) -> Partial {
    let mut out = Partial::zeros(geo);
    let mut dv = vec![0.0; out.shape.len()];
    let mut v = 0.0;
    for e in 0..geo.n_elements() {
        if in_body(geo, e, body) {
            v += geo.area(e);
            scatter_g(&mut dv, geo, e, &(geo.area(e) * Matrix2::identity()));
        }
    }
    let (phi, dphi) = one_sided(v - target);
    out.value = phi;
    out.shape = dv.into_iter().map(|x| dphi * x).collect();
    out
}

fn boundary_smoothing(geo: &Geometry, p: f64) -> Partial {
    let mut out = Partial::zeros(geo);
    let x = &geo.shape;
    let pos = |i: usize| Vector2::new(x[2 * i], x[2 * i + 1]);
    for (i, nbrs) in geo.mesh.boundary_neighbors() {
        let vi = pos(i);
        let mut a = Vector2::zeros();
        let mut b = 0.0;
        for &j in &nbrs {
            let d = vi - pos(j);
            a += d;
            b += d.norm();
        }
        let s = a / b;
        let sn = s.norm();
        out.value += sn.powf(p);
        let g = if sn > 0.0 { p * sn.powf(p - 2.0) * s } else { Vector2::zeros() };
        let ga = g.dot(&a) / (b * b);
        let mut add = |k: usize, v: Vector2<f64>| {
            out.shape[2 * k] += v[0];
            out.shape[2 * k + 1] += v[1];
        };
        for &j in &nbrs {
            let d = vi - pos(j);
            let t = d / d.norm();
            // a gains +d: ∂/∂v_i = I, ∂/∂v_j = −I; b gains |d|
            add(i, g / b - ga * t);
            add(j, -g / b + ga * t);
        }
    }
    out
}

fn material_smoothing(geo: &Geometry, scene: &Scene) -> Partial {
    let mut out = Partial::zeros(geo);
    let nb = geo.mesh.element_neighbors();
    for (field, grad) in [(&scene.material.lambda, &mut out.lambda), (&scene.material.mu, &mut out.mu)] {
        for (t, adj) in nb.iter().enumerate() {
            for &s in adj {
                let r = field[s] / field[t];
                out.value += (1.0 - r) * (1.0 - r);
                grad[s] += -2.0 * (1.0 - r) / field[t];
                grad[t] += 2.0 * (1.0 - r) * field[s] / (field[t] * field[t]);
            }
        }
    }
    out
}

/// One term at one state; state-free terms ignore `u` and `step`.
pub fn eval_term(kind: &TermKind, geo: &Geometry, scene: &Scene, u: &[f64], step: usize) -> Result<Partial> {
    match kind {
        TermKind::StressNorm { p, body } => stress_norm(geo, scene, u, *p, *body),
        TermKind::TargetDeformation {
            targets,
            weights,
            boundary,
            tag,
            body,
        } => target_deformation(
            geo,
            u,
            step,
            &TargetArgs {
                targets,
                weights: weights.as_deref(),
                boundary: *boundary,
                tag: *tag,
                body: *body,
            },
        ),
        TermKind::CenterOfMass { targets, body } => center_of_mass(geo, scene, u, step, targets, *body),
        TermKind::Height { body } => height(geo, scene, u, *body),
        TermKind::VolumePenalty { target, body } => Ok(volume_penalty(geo, *target, *body)),
        TermKind::StressUpperBound { bound, body } => stress_upper_bound(geo, scene, u, *bound, *body),
        TermKind::BoundarySmoothing { p } => Ok(boundary_smoothing(geo, *p)),
        TermKind::MaterialSmoothing => Ok(material_smoothing(geo, scene)),
    }
}

impl ObjectiveSpec {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn has_state_terms(&self) -> bool {
        self.terms.iter().any(|t| t.kind.is_state_term())
    }

    /// Weighted state terms at step `i` (value, `∂/∂u^i`, and explicit
    /// parameter derivatives).
    pub fn state_partial(
        &self,
        geo: &Geometry,
        scene: &Scene,
        u: &[f64],
        step: usize,
        timing: Option<(usize, f64)>,
    ) -> Result<Partial> {
        let mut out = Partial::zeros(geo);
        for t in &self.terms {
            if !t.kind.is_state_term() {
                continue;
            }
            let w = t.step_weight(step, timing);
            if w == 0.0 {
                continue;
            }
            out.add_scaled(w, &eval_term(&t.kind, geo, scene, u, step)?);
        }
        Ok(out)
    }

    /// Weighted state-free terms.
    pub fn param_partial(&self, geo: &Geometry, scene: &Scene) -> Result<Partial> {
        let mut out = Partial::zeros(geo);
        let zero = vec![0.0; geo.space.n_dofs()];
        for t in &self.terms {
            if t.kind.is_state_term() {
                continue;
            }
            out.add_scaled(t.weight, &eval_term(&t.kind, geo, scene, &zero, 0)?);
        }
        Ok(out)
    }

    pub fn validate(&self, scene: &Scene) -> Result<()> {
        let nb = scene.n_bodies();
        let nn = scene.space.n_nodes;
        let nv = scene.mesh.n_vertices();
        let steps = scene.time.map_or(0, |t| t.steps);
        for (k, t) in self.terms.iter().enumerate() {
            let ptr = |f: &str| format!("/objective/{k}/{f}");
            if !t.weight.is_finite() {
                return Err(Error::schema(ptr("weight"), "weight must be finite"));
            }
            if let TimeWeights::Explicit(w) = &t.time {
                if w.len() != steps + 1 || w.iter().any(|x| !x.is_finite()) {
                    return Err(Error::schema(ptr("time"), format!("need {} finite weights", steps + 1)));
                }
            }
            let body = match &t.kind {
                TermKind::StressNorm { body, .. }
                | TermKind::TargetDeformation { body, .. }
                | TermKind::CenterOfMass { body, .. }
                | TermKind::Height { body }
                | TermKind::VolumePenalty { body, .. }
                | TermKind::StressUpperBound { body, .. } => *body,
                _ => None,
            };
            if let Some(b) = body {
                if b >= nb {
                    return Err(Error::DanglingReference(format!("{}: body {b} does not exist", ptr("body"))));
                }
            }
            match &t.kind {
                TermKind::StressNorm { p, .. } if !(*p >= 2.0) => {
                    return Err(Error::schema(ptr("p"), "stress norm needs p >= 2"));
                }
                TermKind::BoundarySmoothing { p } if !(*p >= 1.0) => {
                    return Err(Error::schema(ptr("p"), "smoothing needs p >= 1"));
                }
                TermKind::TargetDeformation { targets, weights, .. } => {
                    if targets.is_empty() || (targets.len() != 1 && targets.len() != steps + 1) {
                        return Err(Error::schema(ptr("targets"), "need one target or one per stored step"));
                    }
                    for (i, tv) in targets.iter().enumerate() {
                        if (tv.len() != 2 * nn && tv.len() != 2 * nv) || tv.iter().any(|x| !x.is_finite()) {
                            return Err(Error::schema(format!("{}/{i}", ptr("targets")), "target size does not match the mesh"));
                        }
                    }
                    if let Some(w) = weights {
                        if (w.len() != nn && w.len() != nv) || w.iter().any(|x| !x.is_finite()) {
                            return Err(Error::schema(ptr("weights"), "weight size does not match the mesh"));
                        }
                    }
                }
                TermKind::CenterOfMass { targets, .. } => {
                    if targets.is_empty() || (targets.len() != 1 && targets.len() != steps + 1) {
                        return Err(Error::schema(ptr("targets"), "need one target or one per stored step"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::MaterialModel;
    use crate::mesh::{build_mesh, rectangle, BoundarySpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    fn scene(order: usize) -> Scene {
        let (v, t) = rectangle(0.0, 0.0, 1.0, 0.5, 2, 1);
        let spec = BoundarySpec {
            boxes: vec![([-0.1, -0.1, 1.1, 0.01], 3)],
            ..Default::default()
        };
        let m = build_mesh(v, t, &spec).unwrap();
        let mut s = Scene::new(m, order, MaterialModel::NeoHookean, 2.0, 1.0, 1.5).unwrap();
        for (e, l) in s.material.lambda.iter_mut().enumerate() {
            *l *= 1.0 + 0.1 * e as f64;
        }
        s
    }

    fn kinds(s: &Scene, rng: &mut ChaCha8Rng) -> Vec<TermKind> {
        let nn = s.space.n_nodes;
        let targets = vec![(0..2 * nn).map(|_| rng.random::<f64>()).collect::<Vec<f64>>()];
        let weights = Some((0..nn).map(|_| 0.5 + rng.random::<f64>()).collect::<Vec<f64>>());
        vec![
            TermKind::StressNorm { p: 2.0, body: None },
            TermKind::StressNorm { p: 6.0, body: None },
            TermKind::TargetDeformation {
                targets: targets.clone(),
                weights: weights.clone(),
                boundary: false,
                tag: None,
                body: None,
            },
            TermKind::TargetDeformation {
                targets,
                weights,
                boundary: true,
                tag: Some(3),
                body: None,
            },
            TermKind::CenterOfMass {
                targets: vec![[0.3, 0.7]],
                body: Some(0),
            },
            TermKind::Height { body: None },
            TermKind::VolumePenalty { target: 0.4, body: None },
            TermKind::StressUpperBound { bound: 0.05, body: None },
            TermKind::BoundarySmoothing { p: 2.0 },
            TermKind::BoundarySmoothing { p: 3.0 },
            TermKind::MaterialSmoothing,
        ]
    }

    /// R and S of every kind against central differences at random states.
    #[test]
    fn derivatives_match_differences_for_every_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for order in [1, 2] {
            for _trial in 0..10 {
                let mut s = scene(order);
                // irregular shape so smoothing is active
                for x in s.shape.iter_mut() {
                    *x += 0.03 * (2.0 * rng.random::<f64>() - 1.0);
                }
                let n = s.space.n_dofs();
                let u: Vec<f64> = (0..n).map(|_| 0.05 * (2.0 * rng.random::<f64>() - 1.0)).collect();
                for kind in kinds(&s, &mut rng) {
                    let geo = Geometry::new(&s.mesh, &s.space, &s.shape).unwrap();
                    let pa = eval_term(&kind, &geo, &s, &u, 0).unwrap();
                    let h = 1e-6;
                    let du: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
                    let val_u = |sgn: f64| {
                        let up: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + sgn * h * b).collect();
                        eval_term(&kind, &geo, &s, &up, 0).unwrap().value
                    };
                    let fd = (val_u(1.0) - val_u(-1.0)) / (2.0 * h);
                    let an: f64 = pa.du.iter().zip(&du).map(|(a, b)| a * b).sum();
                    assert!(rel(an, fd) < 1e-5 || (an - fd).abs() < 1e-10, "{kind:?} R: {an} vs {fd}");
                    let th: Vec<f64> = (0..s.shape.len()).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
                    let dl: Vec<f64> = (0..s.material.lambda.len()).map(|_| rng.random::<f64>()).collect();
                    let val_q = |sgn: f64| {
                        let mut t = s.clone();
                        for (x, d) in t.shape.iter_mut().zip(&th) {
                            *x += sgn * h * d;
                        }
                        for (x, d) in t.material.lambda.iter_mut().zip(&dl) {
                            *x += sgn * h * d;
                        }
                        for (x, d) in t.material.mu.iter_mut().zip(&dl) {
                            *x -= sgn * h * d;
                        }
                        let g = Geometry::new(&t.mesh, &t.space, &t.shape).unwrap();
                        eval_term(&kind, &g, &t, &u, 0).unwrap().value
                    };
                    let fd = (val_q(1.0) - val_q(-1.0)) / (2.0 * h);
                    let an: f64 = pa.shape.iter().zip(&th).map(|(a, b)| a * b).sum::<f64>()
                        + pa.lambda.iter().zip(&dl).map(|(a, b)| a * b).sum::<f64>()
                        - pa.mu.iter().zip(&dl).map(|(a, b)| a * b).sum::<f64>();
                    assert!(rel(an, fd) < 1e-5 || (an - fd).abs() < 1e-10, "{kind:?} S: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn stress_norm_trivial_and_single_element() {
        let (v, t) = (vec![[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]);
        let m = build_mesh(v, t, &BoundarySpec::default()).unwrap();
        let s = Scene::new(m, 1, MaterialModel::Linear, 1.0, 2.0, 1.0).unwrap();
        let geo = Geometry::new(&s.mesh, &s.space, &s.shape).unwrap();
        let k = TermKind::StressNorm { p: 2.0, body: None };
        assert_eq!(eval_term(&k, &geo, &s, &[0.0; 6], 0).unwrap().value, 0.0);
        // u = G x with G = [[0.1, 0.02], [0, -0.03]]
        let g = [[0.1, 0.02], [0.0, -0.03]];
        let u: Vec<f64> = s
            .shape
            .chunks(2)
            .flat_map(|x| [g[0][0] * x[0] + g[0][1] * x[1], g[1][0] * x[0] + g[1][1] * x[1]])
            .collect();
        let eps = [[0.1, 0.01], [0.01, -0.03]];
        let tr = 0.07;
        let sig = [[tr + 4.0 * eps[0][0], 4.0 * eps[0][1]], [4.0 * eps[1][0], tr + 4.0 * eps[1][1]]];
        let fro = sig.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        let want = fro * 1.0f64.sqrt();
        let got = eval_term(&k, &geo, &s, &u, 0).unwrap().value;
        assert!((got - want).abs() < 1e-14);
        // lower bound J_p ≥ ‖σ‖ · area^{1/p} on one element (here equality)
        let k8 = TermKind::StressNorm { p: 8.0, body: None };
        let j8 = eval_term(&k8, &geo, &s, &u, 0).unwrap().value;
        assert!(j8 >= fro * 1.0f64.powf(1.0 / 8.0) * (1.0 - 1e-12));
    }

    #[test]
    fn target_deformation_trivial_cases() {
        let s = scene(2);
        let geo = Geometry::new(&s.mesh, &s.space, &s.shape).unwrap();
        let u: Vec<f64> = (0..s.space.n_dofs()).map(|k| 0.01 * k as f64).collect();
        let x: Vec<f64> = s.rest_nodes().iter().zip(&u).map(|(a, b)| a + b).collect();
        for boundary in [false, true] {
            let k = TermKind::TargetDeformation {
                targets: vec![x.clone()],
                weights: None,
                boundary,
                tag: None,
                body: None,
            };
            let p = eval_term(&k, &geo, &s, &u, 0).unwrap();
            assert_eq!(p.value, 0.0);
            assert!(p.du.iter().all(|v| *v == 0.0));
        }
        // uniform offset d over the unit... rectangle of area 0.5 → J = 0.5 |d|²
        let shifted: Vec<f64> = x.iter().enumerate().map(|(k, v)| v - if k % 2 == 0 { 0.1 } else { 0.0 }).collect();
        let k = TermKind::TargetDeformation {
            targets: vec![shifted],
            weights: None,
            boundary: false,
            tag: None,
            body: None,
        };
        assert!((eval_term(&k, &geo, &s, &u, 0).unwrap().value - 0.5 * 0.01).abs() < 1e-14);
    }

    #[test]
    fn center_and_height_under_translation() {
        let (v, t) = (vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]);
        let m = build_mesh(v, t, &BoundarySpec::default()).unwrap();
        let s = Scene::new(m, 1, MaterialModel::Linear, 1.0, 1.0, 3.0).unwrap();
        let geo = Geometry::new(&s.mesh, &s.space, &s.shape).unwrap();
        let c0 = [1.0 / 3.0, 1.0 / 3.0];
        let d = [0.2, -0.5];
        let u: Vec<f64> = (0..3).flat_map(|_| d).collect();
        let k = TermKind::CenterOfMass {
            targets: vec![[c0[0] + d[0], c0[1] + d[1]]],
            body: None,
        };
        assert!(eval_term(&k, &geo, &s, &u, 0).unwrap().value < 1e-30);
        let k = TermKind::CenterOfMass {
            targets: vec![c0],
            body: None,
        };
        assert!((eval_term(&k, &geo, &s, &u, 0).unwrap().value - 0.29).abs() < 1e-14);
        let h = TermKind::Height { body: None };
        let j0 = eval_term(&h, &geo, &s, &[0.0; 6], 0).unwrap().value;
        let up: Vec<f64> = (0..3).flat_map(|_| [0.0, 0.25]).collect();
        let j1 = eval_term(&h, &geo, &s, &up, 0).unwrap().value;
        assert!((j1 - j0 + 0.25).abs() < 1e-14);
    }

    #[test]
    fn penalties_are_inactive_below_threshold() {
        let s = scene(1);
        let geo = Geometry::new(&s.mesh, &s.space, &s.shape).unwrap();
        let v = TermKind::VolumePenalty { target: 0.6, body: None };
        let p = eval_term(&v, &geo, &s, &[], 0).unwrap();
        assert_eq!(p.value, 0.0);
        assert!(p.shape.iter().all(|x| *x == 0.0));
        let v = TermKind::VolumePenalty { target: 0.45, body: None };
        assert!((eval_term(&v, &geo, &s, &[], 0).unwrap().value - 0.0025).abs() < 1e-15);
        let u = vec![1e-4; s.space.n_dofs()];
        let b = TermKind::StressUpperBound { bound: 10.0, body: None };
        let p = eval_term(&b, &geo, &s, &u, 0).unwrap();
        assert_eq!(p.value, 0.0);
        assert!(p.du.iter().all(|x| *x == 0.0));
        assert_eq!(one_sided(0.0), (0.0, 0.0));
    }

    #[test]
    fn smoothing_cases() {
        // a straight bottom boundary with equal segments
        let (v, t) = rectangle(0.0, 0.0, 3.0, 1.0, 3, 1);
        let m = build_mesh(v, t, &BoundarySpec::default()).unwrap();
        let mut s = Scene::new(m, 1, MaterialModel::Linear, 1.0, 1.0, 1.0).unwrap();
        let geo = Geometry::new(&s.mesh, &s.space, &s.shape).unwrap();
        let p = boundary_smoothing(&geo, 2.0);
        // interior bottom vertices 1 and 2 have collinear neighbors
        for i in [1usize, 2] {
            let nb = &s.mesh.boundary_neighbors()[&i];
            let a: f64 = nb.iter().map(|&j| s.shape[2 * i] - s.shape[2 * j]).sum();
            assert_eq!(a, 0.0);
        }
        let j = p.value;
        for x in s.shape.iter_mut() {
            *x *= 2.5;
        }
        let geo = Geometry::new(&s.mesh, &s.space, &s.shape).unwrap();
        assert!((boundary_smoothing(&geo, 2.0).value - j).abs() < 1e-13);
        // material smoothing: uniform field gives zero, ratio 2 gives 1.25
        let (v, t) = (vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], vec![[0, 1, 2], [0, 2, 3]]);
        let m = build_mesh(v, t, &BoundarySpec::default()).unwrap();
        let mut s = Scene::new(m, 1, MaterialModel::Linear, 1.0, 1.0, 1.0).unwrap();
        let geo = Geometry::new(&s.mesh, &s.space, &s.shape).unwrap();
        assert_eq!(material_smoothing(&geo, &s).value, 0.0);
        s.material.lambda[1] = 2.0;
        assert!((material_smoothing(&geo, &s).value - 1.25).abs() < 1e-15);
    }

    #[test]
    fn time_weights() {
        let mut t = Term::new(TermKind::Height { body: None });
        assert_eq!(t.step_weight(0, Some((4, 0.1))), 0.0);
        assert_eq!(t.step_weight(2, Some((4, 0.1))), 0.1);
        assert_eq!(t.step_weight(0, None), 1.0);
        t.time = TimeWeights::Terminal;
        assert_eq!(t.step_weight(3, Some((4, 0.1))), 0.0);
        assert_eq!(t.step_weight(4, Some((4, 0.1))), 1.0);
        t.weight = 3.0;
        t.time = TimeWeights::Explicit(vec![1.0, 0.0, 2.0]);
        assert_eq!(t.step_weight(2, Some((2, 0.1))), 6.0);
    }
}
