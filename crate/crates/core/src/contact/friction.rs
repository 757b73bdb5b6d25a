//! Lagged, smoothed Coulomb friction for 2D point-edge and point-point pairs.
//!
//! Normal magnitudes, tangents and the pair set are frozen at the lagged
//! configuration `x_lag = X + u_prev`; the sliding measure is
//! `τ = Tᵀ (u_i − u_prev)` on the pair stencil.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{barrier, distance, BarrierParams, ContactKind, ContactPair, ContactSurface};
use crate::error::Result;
use crate::fem::FeSpace;
use crate::jet::{Jet, JetVec2};
use crate::sparse::Triplets;

/// Symmetric per-body-pair friction coefficients.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrictionTable {
    /// `(m, n, γ)` with `m <= n`; the position in this list is the parameter index.
    pub entries: Vec<(usize, usize, f64)>,
}

impl FrictionTable {
    pub fn index(&self, a: usize, b: usize) -> Option<usize> {
        let (m, n) = (a.min(b), a.max(b));
        self.entries.iter().position(|&(x, y, _)| x == m && y == n)
    }

    pub fn gamma(&self, a: usize, b: usize) -> Option<f64> {
        self.index(a, b).map(|i| self.entries[i].2)
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.2).collect()
    }

    pub fn set_values(&mut self, g: &[f64]) {
        for (e, &v) in self.entries.iter_mut().zip(g) {
            e.2 = v;
        }
    }

    pub fn normalized(mut self) -> Self {
        for e in &mut self.entries {
            if e.0 > e.1 {
                std::mem::swap(&mut e.0, &mut e.1);
            }
        }
        self
    }

    pub fn as_map(&self) -> BTreeMap<(usize, usize), f64> {
        self.entries.iter().map(|&(a, b, g)| ((a, b), g)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrictionParams {
    pub eta: f64,
}

/// Signed mollified friction profile `g(τ) = f_η(|τ|) sign τ` and `g'(τ)`.
pub fn mollifier(tau: f64, eta: f64) -> (f64, f64) {
    let a = tau.abs();
    if a >= eta {
        (tau.signum(), 0.0)
    } else {
        (-tau * a / (eta * eta) + 2.0 * tau / eta, -2.0 * a / (eta * eta) + 2.0 / eta)
    }
}

/// `f_η(y) = −y²/η² + 2y/η` on `[0, η)`, 1 beyond.
pub fn f_eta(y: f64, eta: f64) -> f64 {
    if y >= eta {
        1.0
    } else {
        -y * y / (eta * eta) + 2.0 * y / eta
    }
}

/// Tangent operator `T` (one column over the 6 stencil coordinates) as jets in
/// the stencil positions.
pub fn tangent_jets(kind: ContactKind, closest: usize, p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [Jet<6>; 6] {
    let jp = JetVec2::<6>::var(p, 0);
    let ja = JetVec2::<6>::var(a, 1);
    let jb = JetVec2::<6>::var(b, 2);
    let z = Jet::constant(0.0);
    match kind {
        ContactKind::PointEdge => {
            let e = jb - ja;
            let l2 = e.dot(e);
            let inv = l2.sqrt().recip();
            let th = e.scale(inv);
            let t = (jp - ja).dot(e) / l2;
            let one = Jet::constant(1.0);
            let wa = -(one - t);
            let wb = -t;
            [th.x, th.y, th.x * wa, th.y * wa, th.x * wb, th.y * wb]
        }
        ContactKind::PointPoint => {
            let c = if closest == 0 { ja } else { jb };
            let r = jp - c;
            let n = r.scale(r.dot(r).sqrt().recip());
            let np = n.perp();
            if closest == 0 {
                [np.x, np.y, -np.x, -np.y, z, z]
            } else {
                [np.x, np.y, z, z, -np.x, -np.y]
            }
        }
    }
}

/// A lagged friction pair with everything frozen at `x_lag`.
#[derive(Clone, Debug)]
pub struct FrictionPair {
    pub pair: ContactPair,
    pub gamma_index: usize,
    pub gamma: f64,
    /// `κ |b'(d)|`, the normal force per unit area weight.
    pub normal: f64,
    /// `∂N/∂x` over the stencil.
    pub normal_grad: [f64; 6],
    pub t: [f64; 6],
    /// `∂T_r/∂x_s`.
    pub t_grad: [[f64; 6]; 6],
}

fn stencil_dof(nodes: &[usize; 3], r: usize) -> usize {
    2 * nodes[r / 2] + r % 2
}

fn node(x: &[f64], n: usize) -> [f64; 2] {
    [x[2 * n], x[2 * n + 1]]
}

/// Builds the lagged friction pairs from the active set at `x_lag`.
pub fn lagged_pairs(
    surf: &ContactSurface,
    x_lag: &[f64],
    rest: &[f64],
    barrier_params: &BarrierParams,
    table: &FrictionTable,
) -> Result<Vec<FrictionPair>> {
    let mut out = Vec::new();
    if table.entries.is_empty() {
        return Ok(out);
    }
    for pair in surf.active_set(x_lag, rest, barrier_params.dhat) {
        let Some(gi) = table.index(pair.body_pair.0, pair.body_pair.1) else {
            continue;
        };
        let pe = distance(&pair, x_lag)?;
        let (_, db, ddb) = barrier(pe.d, barrier_params.dhat)?;
        let k = barrier_params.kappa;
        let mut normal_grad = [0.0; 6];
        for s in 0..6 {
            normal_grad[s] = -k * ddb * pe.grad[s];
        }
        let [p, a, b] = pair.nodes;
        let tj = tangent_jets(pair.kind, pair.closest, node(x_lag, p), node(x_lag, a), node(x_lag, b));
        out.push(FrictionPair {
            pair,
            gamma_index: gi,
            gamma: table.entries[gi].2,
            normal: -k * db,
            normal_grad,
            t: tj.map(|j| j.v),
            t_grad: tj.map(|j| j.g),
        });
    }
    Ok(out)
}

/// Per-pair sliding measure, profile and the stencil increment.
fn sliding(fp: &FrictionPair, du: &[f64]) -> ([f64; 6], f64) {
    let mut delta = [0.0; 6];
    for r in 0..6 {
        delta[r] = du[stencil_dof(&fp.pair.nodes, r)];
    }
    let tau = (0..6).map(|r| fp.t[r] * delta[r]).sum();
    (delta, tau)
}

/// Physical friction force `Σ_k −γ A_k N_k T_k g(τ_k)` over all DOFs.
pub fn friction_force(pairs: &[FrictionPair], u: &[f64], u_prev: &[f64], eta: f64) -> Vec<f64> {
    let du: Vec<f64> = u.iter().zip(u_prev).map(|(a, b)| a - b).collect();
    let mut f = vec![0.0; u.len()];
    for fp in pairs {
        let (_, tau) = sliding(fp, &du);
        let (g, _) = mollifier(tau, eta);
        let c = -fp.gamma * fp.pair.area * fp.normal * g;
        for r in 0..6 {
            f[stencil_dof(&fp.pair.nodes, r)] += c * fp.t[r];
        }
    }
    f
}

/// Dense 6×6 blocks of one pair: `(∂F/∂u_i, ∂F/∂x_lag)`.
fn pair_blocks(fp: &FrictionPair, delta: &[f64; 6], tau: f64, eta: f64) -> ([[f64; 6]; 6], [[f64; 6]; 6]) {
    let (g, dg) = mollifier(tau, eta);
    let ga = fp.gamma * fp.pair.area;
    let mut dtau_dx = [0.0; 6];
    for s in 0..6 {
        dtau_dx[s] = (0..6).map(|r| delta[r] * fp.t_grad[r][s]).sum();
    }
    let mut bu = [[0.0; 6]; 6];
    let mut bx = [[0.0; 6]; 6];
    for r in 0..6 {
        for s in 0..6 {
            bu[r][s] = -ga * fp.normal * dg * fp.t[r] * fp.t[s];
            bx[r][s] = -ga
                * (fp.t[r] * g * fp.normal_grad[s]
                    + fp.normal * g * fp.t_grad[r][s]
                    + fp.normal * fp.t[r] * dg * dtau_dx[s]);
        }
    }
    (bu, bx)
}

/// Adds `scale · ∂F/∂u_i` and `scale · ∂F/∂u_prev` to the given buffers.
pub fn add_friction_jacobians(
    pairs: &[FrictionPair],
    u: &[f64],
    u_prev: &[f64],
    eta: f64,
    scale: f64,
    mut t_cur: Option<&mut Triplets>,
    mut t_prev: Option<&mut Triplets>,
) {
    let du: Vec<f64> = u.iter().zip(u_prev).map(|(a, b)| a - b).collect();
    for fp in pairs {
        let (delta, tau) = sliding(fp, &du);
        let (bu, bx) = pair_blocks(fp, &delta, tau, eta);
        for r in 0..6 {
            let i = stencil_dof(&fp.pair.nodes, r);
            for s in 0..6 {
                let j = stencil_dof(&fp.pair.nodes, s);
                if let Some(t) = t_cur.as_deref_mut() {
                    t.push(i, j, scale * bu[r][s]);
                }
                if let Some(t) = t_prev.as_deref_mut() {
                    t.push(i, j, scale * (bx[r][s] - bu[r][s]));
                }
            }
        }
    }
}

/// Parameter products of the friction force with an adjoint vector `p`:
/// returns `(pᵀ ∂F/∂q_shape over vertices, pᵀ ∂F/∂γ per table entry)`.
pub fn friction_param_products(
    surf: &ContactSurface,
    space: &FeSpace,
    pairs: &[FrictionPair],
    u: &[f64],
    u_prev: &[f64],
    rest: &[f64],
    eta: f64,
    p: &[f64],
    n_vertices: usize,
    n_gamma: usize,
) -> (Vec<f64>, Vec<f64>) {
    let du: Vec<f64> = u.iter().zip(u_prev).map(|(a, b)| a - b).collect();
    let mut g_nodes = vec![0.0; u.len()];
    let mut g_gamma = vec![0.0; n_gamma];
    for fp in pairs {
        let (delta, tau) = sliding(fp, &du);
        let (g, _) = mollifier(tau, eta);
        let (_, bx) = pair_blocks(fp, &delta, tau, eta);
        let mut ps = [0.0; 6];
        for r in 0..6 {
            ps[r] = p[stencil_dof(&fp.pair.nodes, r)];
        }
        let pt: f64 = (0..6).map(|r| ps[r] * fp.t[r]).sum();
        // lagged positions move with the rest positions
        for s in 0..6 {
            let v: f64 = (0..6).map(|r| ps[r] * bx[r][s]).sum();
            g_nodes[stencil_dof(&fp.pair.nodes, s)] += v;
        }
        let coef = -fp.gamma * fp.normal * g * pt;
        for (nd, gr) in surf.pair_area_gradient(rest, fp.pair.point, fp.pair.edge) {
            g_nodes[2 * nd] += coef * gr[0];
            g_nodes[2 * nd + 1] += coef * gr[1];
        }
        g_gamma[fp.gamma_index] += -fp.pair.area * fp.normal * g * pt;
    }
    (space.node_to_vertex_adjoint(&g_nodes, n_vertices), g_gamma)
}
