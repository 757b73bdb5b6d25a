//! Constitutive laws, strain-rate damping and the volume-integral force
//! terms with their solution, material and shape derivatives.
//!
//! Fourth-order tensors are stored as `Matrix4` with row `2i + j` and column
//! `2k + l`, i.e. `D[(2i+j, 2k+l)] = ∂f_ij / ∂(∇u)_kl`, where
//! `(∇u)_ij = ∂u_i / ∂x_j`.

use nalgebra::{Matrix2, Matrix4, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::Geometry;
use crate::sparse::{CsrMatrix, Triplets};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialModel {
    Linear,
    NeoHookean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialField {
    pub model: MaterialModel,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub density: Vec<f64>,
}

impl MaterialField {
    pub fn uniform(model: MaterialModel, n: usize, lambda: f64, mu: f64, density: f64) -> Self {
        Self {
            model,
            lambda: vec![lambda; n],
            mu: vec![mu; n],
            density: vec![density; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (e, ((&l, &m), &r)) in self.lambda.iter().zip(&self.mu).zip(&self.density).enumerate() {
            if !(m > 0.0) || !(l >= 0.0) || !(r > 0.0) {
                return Err(Error::schema(
                    format!("/materials/{e}"),
                    "need mu > 0, lambda >= 0 and density > 0",
                ));
            }
        }
        Ok(())
    }

    pub fn stress(&self, e: usize, grad_u: &Matrix2<f64>) -> Result<StressEval> {
        match self.model {
            MaterialModel::Linear => Ok(linear_stress(grad_u, self.lambda[e], self.mu[e])),
            MaterialModel::NeoHookean => neohookean_stress(grad_u, self.lambda[e], self.mu[e]),
        }
    }

    pub fn energy_density(&self, e: usize, grad_u: &Matrix2<f64>) -> Result<f64> {
        let (l, m) = (self.lambda[e], self.mu[e]);
        match self.model {
            MaterialModel::Linear => {
                let eps = 0.5 * (grad_u + grad_u.transpose());
                Ok(0.5 * l * eps.trace().powi(2) + m * eps.component_mul(&eps).sum())
            }
            MaterialModel::NeoHookean => {
                let f = grad_u + Matrix2::identity();
                let j = f.determinant();
                if j <= 0.0 {
                    return Err(Error::NonPositiveDeterminant { det: j });
                }
                let lj = j.ln();
                Ok(0.5 * m * ((f.transpose() * f).trace() - 2.0) - m * lj + 0.5 * l * lj * lj)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampingParams {
    pub alpha: f64,
    pub beta: f64,
}

impl DampingParams {
    pub fn is_active(&self) -> bool {
        self.alpha != 0.0 || self.beta != 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StressEval {
    pub f: Matrix2<f64>,
    pub df_dgradu: Matrix4<f64>,
    pub df_dlambda: Matrix2<f64>,
    pub df_dmu: Matrix2<f64>,
}

#[inline]
pub fn ix(i: usize, j: usize) -> usize {
    2 * i + j
}

fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

/// `D : A`, contracting the last two indices.
pub fn contract(d: &Matrix4<f64>, a: &Matrix2<f64>) -> Matrix2<f64> {
    let mut out = Matrix2::zeros();
    for i in 0..2 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..2 {
                for l in 0..2 {
                    s += d[(ix(i, j), ix(k, l))] * a[(k, l)];
                }
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// `A : D`, contracting the first two indices.
pub fn contract_left(a: &Matrix2<f64>, d: &Matrix4<f64>) -> Matrix2<f64> {
    contract(&d.transpose(), a)
}

pub fn linear_stress(grad_u: &Matrix2<f64>, lambda: f64, mu: f64) -> StressEval {
    let eps = 0.5 * (grad_u + grad_u.transpose());
    let tr = eps.trace();
    let f = lambda * tr * Matrix2::identity() + 2.0 * mu * eps;
    let mut d = Matrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    d[(ix(i, j), ix(k, l))] = lambda * delta(i, j) * delta(k, l)
                        + mu * (delta(i, k) * delta(j, l) + delta(i, l) * delta(j, k));
                }
            }
        }
    }
    StressEval {
        f,
        df_dgradu: d,
        df_dlambda: tr * Matrix2::identity(),
        df_dmu: 2.0 * eps,
    }
}

pub fn neohookean_stress(grad_u: &Matrix2<f64>, lambda: f64, mu: f64) -> Result<StressEval> {
    let f = grad_u + Matrix2::identity();
    let j = f.determinant();
    if j <= 0.0 {
        return Err(Error::NonPositiveDeterminant { det: j });
    }
    let q = f.try_inverse().unwrap().transpose();
    let lj = j.ln();
    let mut d = Matrix4::zeros();
    for i in 0..2 {
        for jj in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    d[(ix(i, jj), ix(k, l))] = mu
                        * (delta(i, k) * delta(jj, l) + q[(i, l)] * q[(k, jj)])
                        + lambda * (q[(i, jj)] * q[(k, l)] - lj * q[(i, l)] * q[(k, jj)]);
                }
            }
        }
    }
    Ok(StressEval {
        f: mu * (f - q) + lambda * lj * q,
        df_dgradu: d,
        df_dlambda: lj * q,
        df_dmu: f - q,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DampingEval {
    pub p: Matrix2<f64>,
    /// Derivative with respect to the current displacement gradient.
    pub d_grad_ui: Matrix4<f64>,
    /// Derivative with respect to the previous displacement gradient.
    pub d_grad_uprev: Matrix4<f64>,
    pub dp_dalpha: Matrix2<f64>,
    pub dp_dbeta: Matrix2<f64>,
}

/// Viscous stress `P = F (2α Ė + β tr(Ė) I)` with `Ḟ = (F_i − F_prev) / dt`.
pub fn damping_stress(
    grad_u_i: &Matrix2<f64>,
    grad_u_prev: &Matrix2<f64>,
    alpha: f64,
    beta: f64,
    dt: f64,
) -> DampingEval {
    let id = Matrix2::identity();
    let f = grad_u_i + id;
    let fdot = (grad_u_i - grad_u_prev) / dt;
    let edot = 0.5 * (fdot.transpose() * f + f.transpose() * fdot);
    let s = 2.0 * alpha * edot + beta * edot.trace() * id;
    let p = f * s;
    let mut d1 = Matrix4::zeros();
    let mut d2 = Matrix4::zeros();
    for k in 0..2 {
        for l in 0..2 {
            let mut df = Matrix2::zeros();
            df[(k, l)] = 1.0;
            let dfdot = df / dt;
            // current step: F and Ḟ both move
            let de = 0.5 * (dfdot.transpose() * f + fdot.transpose() * df + df.transpose() * fdot + f.transpose() * dfdot);
            let ds = 2.0 * alpha * de + beta * de.trace() * id;
            let dp1 = df * s + f * ds;
            // previous step: only Ḟ moves
            let de = -0.5 * (dfdot.transpose() * f + f.transpose() * dfdot);
            let ds = 2.0 * alpha * de + beta * de.trace() * id;
            let dp2 = f * ds;
            for i in 0..2 {
                for j in 0..2 {
                    d1[(ix(i, j), ix(k, l))] = dp1[(i, j)];
                    d2[(ix(i, j), ix(k, l))] = dp2[(i, j)];
                }
            }
        }
    }
    DampingEval {
        p,
        d_grad_ui: d1,
        d_grad_uprev: d2,
        dp_dalpha: 2.0 * f * edot,
        dp_dbeta: edot.trace() * f,
    }
}

fn grad_of(nodes: &[usize], g: &[Vector2<f64>], u: &[f64]) -> Matrix2<f64> {
    let mut m = Matrix2::zeros();
    for (a, &n) in nodes.iter().enumerate() {
        m += Vector2::new(u[2 * n], u[2 * n + 1]) * g[a].transpose();
    }
    m
}

/// Runs `f` on every element in parallel, keeping element order.
pub fn par_elements<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Adds a vertex-indexed geometric contribution `Σ_l G_cl ∂_l ξ_v` for the
/// three vertices of element `e`.
fn scatter_shape(out: &mut [f64], tri: &[usize; 3], grad_xi: &[Vector2<f64>; 3], g: &Matrix2<f64>) {
    for (v, &vert) in tri.iter().enumerate() {
        let b = g * grad_xi[v];
        out[2 * vert] += b[0];
        out[2 * vert + 1] += b[1];
    }
}

/// `H^v_ℓ = ∫ f(∇u) : ∇φ_ℓ dx` for every DOF ℓ.
pub fn assemble_volume_force(geo: &Geometry, u: &[f64], field: &MaterialField) -> Result<Vec<f64>> {
    let sp = geo.space;
    let locals = par_elements(geo.n_elements(), |e| -> Result<Vec<f64>> {
        let nodes = &sp.elem_nodes[e];
        let mut loc = vec![0.0; 2 * nodes.len()];
        for (q, gq) in geo.grads[e].iter().enumerate() {
            let s = field.stress(e, &grad_of(nodes, gq, u))?;
            let w = geo.wdet(e, q);
            for a in 0..nodes.len() {
                let fa = s.f * gq[a];
                loc[2 * a] += w * fa[0];
                loc[2 * a + 1] += w * fa[1];
            }
        }
        Ok(loc)
    });
    let mut h = vec![0.0; sp.n_dofs()];
    for (e, loc) in locals.into_iter().enumerate() {
        let loc = loc?;
        for (a, &n) in sp.elem_nodes[e].iter().enumerate() {
            h[2 * n] += loc[2 * a];
            h[2 * n + 1] += loc[2 * a + 1];
        }
    }
    Ok(h)
}

/// Local stiffness block `Σ_q w D :: (g_a ⊗ g_b)`.
fn local_tangent(nodes: usize, w: f64, d: &Matrix4<f64>, gq: &[Vector2<f64>], k: &mut [f64]) {
    let m = 2 * nodes;
    for a in 0..nodes {
        for c in 0..2 {
            for b in 0..nodes {
                for dd in 0..2 {
                    let mut s = 0.0;
                    for j in 0..2 {
                        for l in 0..2 {
                            s += d[(ix(c, j), ix(dd, l))] * gq[a][j] * gq[b][l];
                        }
                    }
                    k[(2 * a + c) * m + 2 * b + dd] += w * s;
                }
            }
        }
    }
}

fn scatter_matrix(geo: &Geometry, locals: Vec<Vec<f64>>, t: &mut Triplets) {
    let sp = geo.space;
    for (e, k) in locals.into_iter().enumerate() {
        let nodes = &sp.elem_nodes[e];
        let m = 2 * nodes.len();
        for (a, &na) in nodes.iter().enumerate() {
            for c in 0..2 {
                for (b, &nb) in nodes.iter().enumerate() {
                    for d in 0..2 {
                        t.push(2 * na + c, 2 * nb + d, k[(2 * a + c) * m + 2 * b + d]);
                    }
                }
            }
        }
    }
}

/// `A^v = ∂H^v/∂u`.
pub fn assemble_force_jacobian(geo: &Geometry, u: &[f64], field: &MaterialField) -> Result<CsrMatrix> {
    let mut t = Triplets::new(geo.space.n_dofs(), geo.space.n_dofs());
    add_force_jacobian(geo, u, field, 1.0, &mut t)?;
    Ok(t.into_csr())
}

pub fn add_force_jacobian(
    geo: &Geometry,
    u: &[f64],
    field: &MaterialField,
    scale: f64,
    t: &mut Triplets,
) -> Result<()> {
    let sp = geo.space;
    let locals = par_elements(geo.n_elements(), |e| -> Result<Vec<f64>> {
        let nodes = &sp.elem_nodes[e];
        let m = 2 * nodes.len();
        let mut k = vec![0.0; m * m];
        for (q, gq) in geo.grads[e].iter().enumerate() {
            let s = field.stress(e, &grad_of(nodes, gq, u))?;
            local_tangent(nodes.len(), scale * geo.wdet(e, q), &s.df_dgradu, gq, &mut k);
        }
        Ok(k)
    });
    let locals: Result<Vec<_>> = locals.into_iter().collect();
    scatter_matrix(geo, locals?, t);
    Ok(())
}

/// Shared shape-derivative kernel for `∫ f : ∇p dx` where `f` depends on one or
/// two displacement gradients. `tangents` pairs each gradient with its
/// derivative tensor.
fn volume_shape_g(
    f: &Matrix2<f64>,
    grad_p: &Matrix2<f64>,
    tangents: &[(Matrix2<f64>, Matrix4<f64>)],
) -> Matrix2<f64> {
    let mut g = -grad_p.transpose() * f + f.component_mul(grad_p).sum() * Matrix2::identity();
    for (gu, d) in tangents {
        let t = contract_left(grad_p, d);
        g -= gu.transpose() * t;
    }
    g
}

/// `B^v = pᵀ ∂_q H^v`, one entry per vertex coordinate.
pub fn shape_derivative_product_volume(
    geo: &Geometry,
    u: &[f64],
    p: &[f64],
    field: &MaterialField,
) -> Result<Vec<f64>> {
    let sp = geo.space;
    let locals = par_elements(geo.n_elements(), |e| -> Result<Matrix2<f64>> {
        let nodes = &sp.elem_nodes[e];
        let mut gsum = Matrix2::zeros();
        for (q, gq) in geo.grads[e].iter().enumerate() {
            let gu = grad_of(nodes, gq, u);
            let gp = grad_of(nodes, gq, p);
            let s = field.stress(e, &gu)?;
            gsum += geo.wdet(e, q) * volume_shape_g(&s.f, &gp, &[(gu, s.df_dgradu)]);
        }
        Ok(gsum)
    });
    let mut out = vec![0.0; 2 * geo.mesh.n_vertices()];
    for (e, g) in locals.into_iter().enumerate() {
        scatter_shape(&mut out, &geo.mesh.triangles[e], &geo.elems[e].grad_xi, &g?);
    }
    Ok(out)
}

/// `pᵀ ∂H^v/∂λ_e` and `pᵀ ∂H^v/∂μ_e` per element.
pub fn material_derivative_product(
    geo: &Geometry,
    u: &[f64],
    p: &[f64],
    field: &MaterialField,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sp = geo.space;
    let locals = par_elements(geo.n_elements(), |e| -> Result<(f64, f64)> {
        let nodes = &sp.elem_nodes[e];
        let (mut dl, mut dm) = (0.0, 0.0);
        for (q, gq) in geo.grads[e].iter().enumerate() {
            let s = field.stress(e, &grad_of(nodes, gq, u))?;
            let gp = grad_of(nodes, gq, p);
            let w = geo.wdet(e, q);
            dl += w * s.df_dlambda.component_mul(&gp).sum();
            dm += w * s.df_dmu.component_mul(&gp).sum();
        }
        Ok((dl, dm))
    });
    let mut l = Vec::with_capacity(locals.len());
    let mut m = Vec::with_capacity(locals.len());
    for r in locals {
        let (a, b) = r?;
        l.push(a);
        m.push(b);
    }
    Ok((l, m))
}

/// Total stored elastic energy.
pub fn elastic_energy(geo: &Geometry, u: &[f64], field: &MaterialField) -> Result<f64> {
    let sp = geo.space;
    let parts = par_elements(geo.n_elements(), |e| -> Result<f64> {
        let nodes = &sp.elem_nodes[e];
        let mut s = 0.0;
        for (q, gq) in geo.grads[e].iter().enumerate() {
            s += geo.wdet(e, q) * field.energy_density(e, &grad_of(nodes, gq, u))?;
        }
        Ok(s)
    });
    parts.into_iter().sum()
}

/// Smallest `det(I + ∇u)` over all quadrature points.
pub fn min_det_f(geo: &Geometry, u: &[f64]) -> f64 {
    let sp = geo.space;
    par_elements(geo.n_elements(), |e| {
        let nodes = &sp.elem_nodes[e];
        geo.grads[e]
            .iter()
            .map(|gq| (grad_of(nodes, gq, u) + Matrix2::identity()).determinant())
            .fold(f64::INFINITY, f64::min)
    })
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

/// Damping force `H^d_ℓ = ∫ P : ∇φ_ℓ dx`.
pub fn assemble_damping_force(
    geo: &Geometry,
    u: &[f64],
    u_prev: &[f64],
    damping: &DampingParams,
    dt: f64,
) -> Vec<f64> {
    let sp = geo.space;
    let locals = par_elements(geo.n_elements(), |e| {
        let nodes = &sp.elem_nodes[e];
        let mut loc = vec![0.0; 2 * nodes.len()];
        for (q, gq) in geo.grads[e].iter().enumerate() {
            let d = damping_stress(
                &grad_of(nodes, gq, u),
                &grad_of(nodes, gq, u_prev),
                damping.alpha,
                damping.beta,
                dt,
            );
            let w = geo.wdet(e, q);
            for a in 0..nodes.len() {
                let fa = d.p * gq[a];
                loc[2 * a] += w * fa[0];
                loc[2 * a + 1] += w * fa[1];
            }
        }
        loc
    });
    let mut h = vec![0.0; sp.n_dofs()];
    for (e, loc) in locals.into_iter().enumerate() {
        for (a, &n) in sp.elem_nodes[e].iter().enumerate() {
            h[2 * n] += loc[2 * a];
            h[2 * n + 1] += loc[2 * a + 1];
        }
    }
    h
}

/// Jacobians of the damping force with respect to the current and previous
/// displacements, scaled by `scale` and added to the triplet buffers.
pub fn add_damping_jacobians(
    geo: &Geometry,
    u: &[f64],
    u_prev: &[f64],
    damping: &DampingParams,
    dt: f64,
    scale: f64,
    t_cur: Option<&mut Triplets>,
    t_prev: Option<&mut Triplets>,
) {
    let sp = geo.space;
    let want_cur = t_cur.is_some();
    let want_prev = t_prev.is_some();
    let locals = par_elements(geo.n_elements(), |e| {
        let nodes = &sp.elem_nodes[e];
        let m = 2 * nodes.len();
        let mut k1 = vec![0.0; if want_cur { m * m } else { 0 }];
        let mut k2 = vec![0.0; if want_prev { m * m } else { 0 }];
        for (q, gq) in geo.grads[e].iter().enumerate() {
            let d = damping_stress(
                &grad_of(nodes, gq, u),
                &grad_of(nodes, gq, u_prev),
                damping.alpha,
                damping.beta,
                dt,
            );
            let w = scale * geo.wdet(e, q);
            if want_cur {
                local_tangent(nodes.len(), w, &d.d_grad_ui, gq, &mut k1);
            }
            if want_prev {
                local_tangent(nodes.len(), w, &d.d_grad_uprev, gq, &mut k2);
            }
        }
        (k1, k2)
    });
    let (l1, l2): (Vec<_>, Vec<_>) = locals.into_iter().unzip();
    if let Some(t) = t_cur {
        scatter_matrix(geo, l1, t);
    }
    if let Some(t) = t_prev {
        scatter_matrix(geo, l2, t);
    }
}

/// Shape product and `(α, β)` product of the damping force:
/// returns `(pᵀ ∂_q H^d, [pᵀ ∂_α H^d, pᵀ ∂_β H^d])`.
pub fn damping_param_products(
    geo: &Geometry,
    u: &[f64],
    u_prev: &[f64],
    p: &[f64],
    damping: &DampingParams,
    dt: f64,
) -> (Vec<f64>, [f64; 2]) {
    let sp = geo.space;
    let locals = par_elements(geo.n_elements(), |e| {
        let nodes = &sp.elem_nodes[e];
        let mut gsum = Matrix2::zeros();
        let mut ab = [0.0; 2];
        for (q, gq) in geo.grads[e].iter().enumerate() {
            let gu = grad_of(nodes, gq, u);
            let gprev = grad_of(nodes, gq, u_prev);
            let gp = grad_of(nodes, gq, p);
            let d = damping_stress(&gu, &gprev, damping.alpha, damping.beta, dt);
            let w = geo.wdet(e, q);
            gsum += w * volume_shape_g(&d.p, &gp, &[(gu, d.d_grad_ui), (gprev, d.d_grad_uprev)]);
            ab[0] += w * d.dp_dalpha.component_mul(&gp).sum();
            ab[1] += w * d.dp_dbeta.component_mul(&gp).sum();
        }
        (gsum, ab)
    });
    let mut out = vec![0.0; 2 * geo.mesh.n_vertices()];
    let mut ab = [0.0; 2];
    for (e, (g, l)) in locals.into_iter().enumerate() {
        scatter_shape(&mut out, &geo.mesh.triangles[e], &geo.elems[e].grad_xi, &g);
        ab[0] += l[0];
        ab[1] += l[1];
    }
    (out, ab)
}

/// Consistent mass matrix `M = ∫ ρ φ_a φ_b I dx`.
pub fn assemble_mass(geo: &Geometry, density: &[f64]) -> CsrMatrix {
    let sp = geo.space;
    let locals = par_elements(geo.n_elements(), |e| {
        let n = sp.elem_nodes[e].len();
        let mut m = vec![0.0; n * n];
        for (q, vq) in sp.ref_vals.iter().enumerate() {
            let w = density[e] * geo.wdet(e, q);
            for a in 0..n {
                for b in 0..n {
                    m[a * n + b] += w * vq[a] * vq[b];
                }
            }
        }
        m
    });
    let mut t = Triplets::new(sp.n_dofs(), sp.n_dofs());
    for (e, m) in locals.into_iter().enumerate() {
        let nodes = &sp.elem_nodes[e];
        let n = nodes.len();
        for (a, &na) in nodes.iter().enumerate() {
            for (b, &nb) in nodes.iter().enumerate() {
                for c in 0..2 {
                    t.push(2 * na + c, 2 * nb + c, m[a * n + b]);
                }
            }
        }
    }
    t.into_csr()
}

/// `aᵀ (∂_q M) b = ∫ ρ (a·b) ∇·θ dx` per vertex coordinate.
pub fn mass_shape_derivative_product(geo: &Geometry, density: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    let sp = geo.space;
    let locals = par_elements(geo.n_elements(), |e| {
        let av = sp.value_at_quad(e, a);
        let bv = sp.value_at_quad(e, b);
        let s: f64 = (0..av.len())
            .map(|q| density[e] * geo.wdet(e, q) * av[q].dot(&bv[q]))
            .sum();
        s
    });
    let mut out = vec![0.0; 2 * geo.mesh.n_vertices()];
    for (e, s) in locals.into_iter().enumerate() {
        scatter_shape(&mut out, &geo.mesh.triangles[e], &geo.elems[e].grad_xi, &(s * Matrix2::identity()));
    }
    out
}

/// Body force `∫ ρ g φ_ℓ dx`.
pub fn assemble_body_force(geo: &Geometry, density: &[f64], g: [f64; 2]) -> Vec<f64> {
    let sp = geo.space;
    let mut h = vec![0.0; sp.n_dofs()];
    for e in 0..geo.n_elements() {
        for (q, vq) in sp.ref_vals.iter().enumerate() {
            let w = density[e] * geo.wdet(e, q);
            for (a, &n) in sp.elem_nodes[e].iter().enumerate() {
                h[2 * n] += w * vq[a] * g[0];
                h[2 * n + 1] += w * vq[a] * g[1];
            }
        }
    }
    h
}

/// `pᵀ ∂_q (∫ ρ g φ dx) = ∫ ρ (g·p) ∇·θ dx`.
pub fn body_force_shape_product(geo: &Geometry, density: &[f64], g: [f64; 2], p: &[f64]) -> Vec<f64> {
    let n = geo.space.n_nodes;
    let gv: Vec<f64> = (0..n).flat_map(|_| g).collect();
    mass_shape_derivative_product(geo, density, &gv, p)
}

/// Boundary edges with a constant traction, each as the solution nodes along
/// the edge (2 for P1, 3 for P2 with the midpoint in the middle) and the two
/// geometric end vertices.
pub struct TractionEdge {
    pub nodes: Vec<usize>,
    pub verts: [usize; 2],
    pub traction: [f64; 2],
}

fn edge_weights(n: usize) -> &'static [f64] {
    if n == 2 {
        &[0.5, 0.5]
    } else {
        &[1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0]
    }
}

pub fn assemble_traction(edges: &[TractionEdge], shape: &[f64], ndofs: usize) -> Vec<f64> {
    let mut h = vec![0.0; ndofs];
    for te in edges {
        let [a, b] = te.verts;
        let len = ((shape[2 * b] - shape[2 * a]).powi(2) + (shape[2 * b + 1] - shape[2 * a + 1]).powi(2)).sqrt();
        for (k, &n) in te.nodes.iter().enumerate() {
            let w = len * edge_weights(te.nodes.len())[k];
            h[2 * n] += w * te.traction[0];
            h[2 * n + 1] += w * te.traction[1];
        }
    }
    h
}

pub fn traction_shape_product(edges: &[TractionEdge], shape: &[f64], p: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; shape.len()];
    for te in edges {
        let [a, b] = te.verts;
        let d = [shape[2 * b] - shape[2 * a], shape[2 * b + 1] - shape[2 * a + 1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let mut s = 0.0;
        for (k, &n) in te.nodes.iter().enumerate() {
            s += edge_weights(te.nodes.len())[k] * (te.traction[0] * p[2 * n] + te.traction[1] * p[2 * n + 1]);
        }
        for c in 0..2 {
            out[2 * b + c] += s * d[c] / len;
            out[2 * a + c] -= s * d[c] / len;
        }
    }
    out
}
