//! Discrete adjoint of the static problem and of the BDF time stepping.
//!
//! Transient constraints on free DOFs, for `i ≥ 1`:
//!
//! ```text
//! K_i = v^i − (u^i + Σ_j α_j u^{i−1−j}) / (β_i Δt)
//! G_i = M (v^i + Σ_j α_j v^{i−1−j}) − β_i Δt h^i(u^i, u^{i−1})
//! ```
//!
//! with `K_0 = u^0 − g^u(q)` and `G_0 = v^0 − g^v(q)`. The multipliers of
//! `G_i` are `p_i`; those of `K_i` are eliminated through `ν_i`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::contact::friction::FrictionPair;
use crate::error::{Error, Result};
use crate::forward::{System, Trajectory};
use crate::objectives::{ObjectiveSpec, Partial};
use crate::scene::{BdfScheme, Block, DofMap, IcField, ParamVector, Scene};
use crate::sparse::{CsrMatrix, SparseLu, Triplets};

/// Per-step data of the backward sweep.
pub struct StepBlocks {
    /// `∂h^i/∂u^i` on free DOFs.
    pub a: CsrMatrix,
    /// `∂h^i/∂u^{i−1}` on free DOFs, when nonzero.
    pub c: Option<CsrMatrix>,
    /// Weighted `∂J/∂u^i` on free DOFs.
    pub dj: Vec<f64>,
}

/// A time-discrete model seen by the adjoint sweep. Parameters are flat.
pub trait Dynamics {
    fn n_free(&self) -> usize;
    fn steps(&self) -> usize;
    fn scheme(&self) -> BdfScheme;
    fn dt(&self) -> f64;
    fn mass_free(&self) -> &CsrMatrix;
    fn n_params(&self) -> usize;
    /// Blocks of step `i ≥ 1`; called before [`Dynamics::step_param_product`] for the same step.
    fn load_step(&mut self, i: usize) -> Result<StepBlocks>;
    /// `p_iᵀ ∂_q G_i` for the step last loaded.
    fn step_param_product(&mut self, i: usize, p: &[f64]) -> Result<Vec<f64>>;
    /// Weighted `∂J/∂u^0` on free DOFs.
    fn initial_dj(&mut self) -> Result<Vec<f64>>;
    /// Explicit `∂_q J`.
    fn objective_dq(&mut self) -> Result<Vec<f64>>;
    /// `μᵀ ∂_q g^u + pᵀ ∂_q g^v`.
    fn ic_product(&self, mu: &[f64], p: &[f64]) -> Vec<f64>;
}

/// Multipliers over free DOFs for steps `0..=N`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdjointState {
    pub p: Vec<Vec<f64>>,
    /// `ν_0` is not defined and stored as zeros.
    pub nu: Vec<Vec<f64>>,
    pub mu0: Vec<f64>,
}

impl AdjointState {
    pub fn write_norms_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let e = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wr.write_record(["step", "p_norm", "nu_norm"]).map_err(e)?;
        let n2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (i, (p, nu)) in self.p.iter().zip(&self.nu).enumerate() {
            wr.write_record([i.to_string(), format!("{:e}", n2(p)), format!("{:e}", n2(nu))])
                .map_err(e)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `Σ_k α^k_{k−1−i} x_k` over the later steps `k` whose history reaches `i`.
fn history_sum(scheme: &BdfScheme, n: usize, i: usize, x: &[Vec<f64>], len: usize) -> Vec<f64> {
    let mut s = vec![0.0; len];
    for k in i + 1..=n.min(i + scheme.order) {
        let (alpha, _) = scheme.coefficients(k);
        let j = k - 1 - i;
        if j < alpha.len() {
            axpy(&mut s, alpha[j], &x[k]);
        }
    }
    s
}

/// Backward sweep; returns the multipliers and the total gradient.
pub fn transient_adjoint<D: Dynamics + ?Sized>(dynamics: &mut D) -> Result<(AdjointState, Vec<f64>)> {
    let n = dynamics.steps();
    let nf = dynamics.n_free();
    let scheme = dynamics.scheme();
    let dt = dynamics.dt();
    let mut p = vec![vec![0.0; nf]; n + 1];
    let mut nu = vec![vec![0.0; nf]; n + 1];
    let mut grad = vec![0.0; dynamics.n_params()];
    // C_{i+1} and β_{i+1} from the previous iteration
    let mut next: Option<(CsrMatrix, f64)> = None;
    for i in (1..=n).rev() {
        let blocks = dynamics.load_step(i)?;
        let (_, beta) = scheme.coefficients(i);
        let bdt = beta * dt;
        let sp = history_sum(&scheme, n, i, &p, nf);
        let snu = history_sum(&scheme, n, i, &nu, nf);
        let mass = dynamics.mass_free();
        let mut rhs: Vec<f64> = blocks.dj.iter().map(|v| -v).collect();
        if let Some((c, b1)) = &next {
            axpy(&mut rhs, b1 * dt, &c.tr_mul_vec(&p[i + 1]));
        }
        axpy(&mut rhs, -1.0 / bdt, &mass.mul_vec(&sp));
        axpy(&mut rhs, -1.0, &mass.mul_vec(&snu));
        let k = mass.add_scaled(1.0 / bdt, &blocks.a, -bdt);
        let lu = SparseLu::factor(&k).map_err(|_| Error::SingularSystem { step: Some(i) })?;
        p[i] = lu.solve_transpose(&rhs).map_err(|_| Error::SingularSystem { step: Some(i) })?;
        nu[i] = p[i].iter().zip(&sp).map(|(a, b)| (a + b) / bdt).collect();
        let g = dynamics.step_param_product(i, &p[i])?;
        axpy(&mut grad, 1.0, &g);
        next = blocks.c.map(|c| (c, beta));
    }
    let sp = history_sum(&scheme, n, 0, &p, nf);
    let snu = history_sum(&scheme, n, 0, &nu, nf);
    let mass = dynamics.mass_free();
    let p0: Vec<f64> = mass.mul_vec(&sp).iter().map(|v| -v).collect();
    let mut mu0: Vec<f64> = dynamics.initial_dj()?.iter().map(|v| -v).collect();
    if n >= 1 {
        if let Some((c, b1)) = &next {
            axpy(&mut mu0, b1 * dt, &c.tr_mul_vec(&p[1]));
        }
    }
    axpy(&mut mu0, -1.0, &dynamics.mass_free().mul_vec(&snu));
    p[0] = p0;
    axpy(&mut grad, 1.0, &dynamics.objective_dq()?);
    axpy(&mut grad, -1.0, &dynamics.ic_product(&mu0, &p[0]));
    Ok((AdjointState { p, nu, mu0 }, grad))
}

/// Block map from the initial-condition parameters to all DOFs; rows of
/// prescribed DOFs are zero.
pub fn initial_condition_jacobian(scene: &Scene, dofs: &DofMap, field: &IcField) -> CsrMatrix {
    let n = scene.space.n_dofs();
    let mut t = Triplets::new(n, field.values.len());
    for d in 0..n {
        if dofs.free[d].is_none() {
            continue;
        }
        let col = match field.mode {
            crate::scene::IcMode::PerNode => d,
            crate::scene::IcMode::PerBody => 2 * scene.space.node_body[d / 2] + d % 2,
        };
        t.push(d, col, 1.0);
    }
    t.into_csr()
}

/// Finite-element model over a stored trajectory.
pub struct FeDynamics<'s, 'a> {
    sys: &'s System<'a>,
    traj: &'s Trajectory,
    objective: &'s ObjectiveSpec,
    scheme: BdfScheme,
    fric: Vec<FrictionPair>,
    template: ParamVector,
    dq: Option<Partial>,
}

impl<'s, 'a> FeDynamics<'s, 'a> {
    pub fn new(sys: &'s System<'a>, traj: &'s Trajectory, objective: &'s ObjectiveSpec) -> Result<Self> {
        Ok(Self {
            sys,
            traj,
            objective,
            scheme: BdfScheme::new(traj.bdf_order)?,
            fric: Vec::new(),
            template: sys.scene.params(),
            dq: None,
        })
    }

    fn timing(&self) -> Option<(usize, f64)> {
        Some((self.traj.steps(), self.traj.dt))
    }

    fn state_partial(&mut self, i: usize) -> Result<Vec<f64>> {
        let sc = self.sys.scene;
        let part = self
            .objective
            .state_partial(&self.sys.geo, sc, &self.traj.u[i], i, self.timing())?;
        let dj = self.sys.dofs.restrict(&part.du);
        match &mut self.dq {
            Some(acc) => {
                axpy(&mut acc.shape, 1.0, &part.shape);
                axpy(&mut acc.lambda, 1.0, &part.lambda);
                axpy(&mut acc.mu, 1.0, &part.mu);
            }
            None => self.dq = Some(part),
        }
        Ok(dj)
    }

    fn flat(&self, g: &ParamVector) -> Vec<f64> {
        g.flatten(&Block::ALL)
    }
}

impl Dynamics for FeDynamics<'_, '_> {
    fn n_free(&self) -> usize {
        self.sys.n_free()
    }

    fn steps(&self) -> usize {
        self.traj.steps()
    }

    fn scheme(&self) -> BdfScheme {
        self.scheme
    }

    fn dt(&self) -> f64 {
        self.traj.dt
    }

    fn mass_free(&self) -> &CsrMatrix {
        &self.sys.mass_ff
    }

    fn n_params(&self) -> usize {
        self.template.flat_len(&Block::ALL)
    }

    fn load_step(&mut self, i: usize) -> Result<StepBlocks> {
        let (u, up) = (&self.traj.u[i], &self.traj.u[i - 1]);
        self.fric = self.sys.friction_pairs(up)?;
        let t = i as f64 * self.traj.dt;
        let f = self.sys.force(u, Some(up), t, &self.fric, true, true)?;
        let a = self.sys.restrict_matrix(&f.du.expect("requested"));
        let c = f.du_prev.map(|m| self.sys.restrict_matrix(&m));
        let dj = self.state_partial(i)?;
        Ok(StepBlocks { a, c, dj })
    }

    fn step_param_product(&mut self, i: usize, p: &[f64]) -> Result<Vec<f64>> {
        let tr = self.traj;
        let n = self.sys.n_dofs();
        let pf = self.sys.dofs.pad(p, n);
        let (alpha, beta) = self.scheme.coefficients(i);
        let mut w = tr.v[i].clone();
        for (j, a) in alpha.iter().enumerate() {
            axpy(&mut w, *a, &tr.v[i - 1 - j]);
        }
        let t = i as f64 * tr.dt;
        let hq = self
            .sys
            .force_param_products(&tr.u[i], Some(&tr.u[i - 1]), t, &self.fric, &pf)?;
        let mut g = hq.scaled(-beta * tr.dt);
        axpy(&mut g.shape, 1.0, &self.sys.mass_shape_product(&pf, &w));
        Ok(self.flat(&g))
    }

    fn initial_dj(&mut self) -> Result<Vec<f64>> {
        self.state_partial(0)
    }

    fn objective_dq(&mut self) -> Result<Vec<f64>> {
        let sc = self.sys.scene;
        let mut part = self.objective.param_partial(&self.sys.geo, sc)?;
        if let Some(acc) = &self.dq {
            axpy(&mut part.shape, 1.0, &acc.shape);
            axpy(&mut part.lambda, 1.0, &acc.lambda);
            axpy(&mut part.mu, 1.0, &acc.mu);
        }
        Ok(self.flat(&part.to_params(&self.template)))
    }

    fn ic_product(&self, mu: &[f64], p: &[f64]) -> Vec<f64> {
        let sc = self.sys.scene;
        let n = self.sys.n_dofs();
        let mut g = self.template.zeros_like();
        g.u0 = sc.u0.pull_back(&sc.space, &self.sys.dofs.pad(mu, n));
        g.v0 = sc.v0.pull_back(&sc.space, &self.sys.dofs.pad(p, n));
        self.flat(&g)
    }
}

/// Objective value over a stored trajectory.
pub fn trajectory_objective(sys: &System, traj: &Trajectory, objective: &ObjectiveSpec) -> Result<f64> {
    let timing = Some((traj.steps(), traj.dt));
    let mut j = objective.param_partial(&sys.geo, sys.scene)?.value;
    for (i, u) in traj.u.iter().enumerate() {
        if objective.terms.iter().any(|t| t.kind.is_state_term() && t.step_weight(i, timing) != 0.0) {
            j += objective.state_partial(&sys.geo, sys.scene, u, i, timing)?.value;
        }
    }
    Ok(j)
}

/// Static adjoint `(∂h/∂u)_ffᵀ p = −(∂J/∂u)_f`; returns `(J, dJ/dq, p)`.
pub fn static_adjoint(sys: &System, u: &[f64], objective: &ObjectiveSpec) -> Result<(f64, ParamVector, Vec<f64>)> {
    let sc = sys.scene;
    let st = objective.state_partial(&sys.geo, sc, u, 0, None)?;
    let pp = objective.param_partial(&sys.geo, sc)?;
    let f = sys.force(u, None, 0.0, &[], true, false)?;
    let a = sys.restrict_matrix(&f.du.expect("requested"));
    let rhs: Vec<f64> = sys.dofs.restrict(&st.du).iter().map(|v| -v).collect();
    let lu = SparseLu::factor(&a).map_err(|_| Error::SingularSystem { step: None })?;
    let p = lu.solve_transpose(&rhs).map_err(|_| Error::SingularSystem { step: None })?;
    let template = sc.params();
    let mut g = st.to_params(&template);
    g.axpy(1.0, &pp.to_params(&template));
    let pf = sys.dofs.pad(&p, sys.n_dofs());
    g.axpy(1.0, &sys.force_param_products(u, None, 0.0, &[], &pf)?);
    Ok((st.value + pp.value, g, p))
}

/// Result of one objective-and-gradient evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: ParamVector,
    pub trajectory: Option<Trajectory>,
    pub static_state: Option<Vec<f64>>,
    pub adjoint: Option<AdjointState>,
    pub forward_time: f64,
    pub adjoint_time: f64,
}

/// Forward solve, objective and adjoint gradient of the scene's own objective.
pub fn evaluate(scene: &Scene) -> Result<Evaluation> {
    let sys = System::new(scene)?;
    let obj = &scene.objective;
    let template = scene.params();
    if !scene.is_transient() {
        let t0 = Instant::now();
        let (u, _) = sys.static_solve()?;
        let forward_time = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let (value, gradient, _) = static_adjoint(&sys, &u, obj)?;
        return Ok(Evaluation {
            value,
            gradient,
            trajectory: None,
            static_state: Some(u),
            adjoint: None,
            forward_time,
            adjoint_time: t1.elapsed().as_secs_f64(),
        });
    }
    let t0 = Instant::now();
    let traj = sys.simulate()?;
    let forward_time = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let mut dynamics = FeDynamics::new(&sys, &traj, obj)?;
    let (state, flat) = transient_adjoint(&mut dynamics)?;
    let adjoint_time = t1.elapsed().as_secs_f64();
    let value = trajectory_objective(&sys, &traj, obj)?;
    let mut gradient = template.zeros_like();
    gradient.set_flat(&Block::ALL, &flat);
    Ok(Evaluation {
        value,
        gradient,
        trajectory: Some(traj),
        static_state: None,
        adjoint: Some(state),
        forward_time,
        adjoint_time,
    })
}

/// Objective value only (one forward solve).
pub fn objective_value(scene: &Scene) -> Result<f64> {
    let sys = System::new(scene)?;
    if scene.is_transient() {
        let traj = sys.simulate()?;
        trajectory_objective(&sys, &traj, &scene.objective)
    } else {
        let (u, _) = sys.static_solve()?;
        let st = scene.objective.state_partial(&sys.geo, scene, &u, 0, None)?;
        Ok(st.value + scene.objective.param_partial(&sys.geo, scene)?.value)
    }
}

/// Brute-force reference: assembles the full space-time constraint Jacobian
/// and solves the KKT and tangent systems densely.
pub mod dense {
    use super::*;

    pub struct DenseResult {
        pub gradient: Vec<f64>,
        /// Multipliers of `G_i`, `i = 0..=N`.
        pub p: Vec<Vec<f64>>,
        pub mu0: Vec<f64>,
        /// Gradient through the forward sensitivity (tangent) system.
        pub tangent_gradient: Vec<f64>,
    }

    fn dense(m: &CsrMatrix) -> DMatrix<f64> {
        let d = m.to_dense();
        DMatrix::from_fn(d.len(), d.first().map_or(0, |r| r.len()), |i, j| d[i][j])
    }

    pub fn solve<D: Dynamics + ?Sized>(dynamics: &mut D) -> Result<DenseResult> {
        let n = dynamics.steps();
        let nf = dynamics.n_free();
        let np = dynamics.n_params();
        let scheme = dynamics.scheme();
        let dt = dynamics.dt();
        let m = dense(dynamics.mass_free());
        let size = 2 * nf * (n + 1);
        // unknown layout: [u^i | v^i] per step; constraint rows [K_i | G_i]
        let ui = |i: usize| 2 * nf * i;
        let vi = |i: usize| 2 * nf * i + nf;
        let mut jac = DMatrix::zeros(size, size);
        let mut jq = DMatrix::zeros(size, np);
        let mut dj = DVector::zeros(size);
        let put = |jac: &mut DMatrix<f64>, r0: usize, c0: usize, b: &DMatrix<f64>, s: f64| {
            for r in 0..nf {
                for c in 0..nf {
                    jac[(r0 + r, c0 + c)] += s * b[(r, c)];
                }
            }
        };
        let eye = DMatrix::identity(nf, nf);
        put(&mut jac, ui(0), ui(0), &eye, 1.0);
        put(&mut jac, vi(0), vi(0), &eye, 1.0);
        for r in 0..nf {
            let mut e = vec![0.0; nf];
            e[r] = 1.0;
            let z = vec![0.0; nf];
            let gu = dynamics.ic_product(&e, &z);
            let gv = dynamics.ic_product(&z, &e);
            for c in 0..np {
                jq[(ui(0) + r, c)] = -gu[c];
                jq[(vi(0) + r, c)] = -gv[c];
            }
        }
        for i in 1..=n {
            let blocks = dynamics.load_step(i)?;
            let (alpha, beta) = scheme.coefficients(i);
            let bdt = beta * dt;
            // K_i
            put(&mut jac, ui(i), vi(i), &eye, 1.0);
            put(&mut jac, ui(i), ui(i), &eye, -1.0 / bdt);
            for (j, a) in alpha.iter().enumerate() {
                put(&mut jac, ui(i), ui(i - 1 - j), &eye, -a / bdt);
            }
            // G_i
            put(&mut jac, vi(i), vi(i), &m, 1.0);
            for (j, a) in alpha.iter().enumerate() {
                put(&mut jac, vi(i), vi(i - 1 - j), &m, *a);
            }
            put(&mut jac, vi(i), ui(i), &dense(&blocks.a), -bdt);
            if let Some(c) = &blocks.c {
                put(&mut jac, vi(i), ui(i - 1), &dense(c), -bdt);
            }
            for r in 0..nf {
                dj[ui(i) + r] = blocks.dj[r];
                let mut e = vec![0.0; nf];
                e[r] = 1.0;
                let row = dynamics.step_param_product(i, &e)?;
                for c in 0..np {
                    jq[(vi(i) + r, c)] = row[c];
                }
            }
        }
        let dj0 = dynamics.initial_dj()?;
        for r in 0..nf {
            dj[ui(0) + r] = dj0[r];
        }
        let djq = DVector::from_vec(dynamics.objective_dq()?);
        let lu = jac.clone().lu();
        let lam = jac
            .transpose()
            .lu()
            .solve(&(-&dj))
            .ok_or(Error::SingularSystem { step: None })?;
        let gradient = &djq + jq.transpose() * &lam;
        let dx = lu.solve(&(-&jq)).ok_or(Error::SingularSystem { step: None })?;
        let tangent = &djq + dx.transpose() * &dj;
        let p = (0..=n).map(|i| lam.rows(vi(i), nf).iter().copied().collect()).collect();
        let mu0 = lam.rows(ui(0), nf).iter().copied().collect();
        Ok(DenseResult {
            gradient: gradient.iter().copied().collect(),
            p,
            mu0,
            tangent_gradient: tangent.iter().copied().collect(),
        })
    }
}

/// A small chain of masses with cubic springs, damping and a lagged
/// nonlinear drag, integrated by BDF; used to test the sweep against the
/// dense oracle and finite differences.
pub mod toy {
    use super::*;

    /// Parameters: `[k, k3, c, d, m, u0.., v0..]`.
    #[derive(Clone, Debug)]
    pub struct Oscillator {
        pub n: usize,
        pub steps: usize,
        pub dt: f64,
        pub order: usize,
        pub q: Vec<f64>,
        pub target: Vec<f64>,
        pub weights: Vec<f64>,
        pub force: f64,
        traj: Vec<Vec<f64>>,
        vel: Vec<Vec<f64>>,
        mass: CsrMatrix,
    }

    impl Oscillator {
        pub fn new(n: usize, steps: usize, dt: f64, order: usize, q: Vec<f64>) -> Self {
            let mut o = Self {
                n,
                steps,
                dt,
                order,
                q,
                target: (0..n).map(|k| 0.1 * (k as f64 + 1.0)).collect(),
                weights: (0..=steps).map(|i| 0.5 + i as f64).collect(),
                force: 0.3,
                traj: vec![],
                vel: vec![],
                mass: CsrMatrix::zeros(n, n),
            };
            o.mass = o.mass_matrix();
            o
        }

        pub fn n_params(&self) -> usize {
            5 + 2 * self.n
        }

        fn mass_matrix(&self) -> CsrMatrix {
            let mut t = Triplets::new(self.n, self.n);
            for k in 0..self.n {
                t.push(k, k, self.q[4] * (1.0 + 0.1 * k as f64));
            }
            t.into_csr()
        }

        /// `h(u, u_prev)` and its two Jacobians.
        pub fn h(&self, u: &[f64], up: &[f64]) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
            let (k, k3, c, d) = (self.q[0], self.q[1], self.q[2], self.q[3]);
            let n = self.n;
            let mut h = vec![self.force; n];
            let mut a = DMatrix::zeros(n, n);
            let mut cm = DMatrix::zeros(n, n);
            for i in 0..n {
                // springs to the wall and the neighbor
                let l = if i == 0 { u[0] } else { u[i] - u[i - 1] };
                h[i] -= k * l + k3 * l.powi(3);
                let s = k + 3.0 * k3 * l * l;
                a[(i, i)] -= s;
                if i > 0 {
                    a[(i, i - 1)] += s;
                    h[i - 1] += k * l + k3 * l.powi(3);
                    a[(i - 1, i)] += s;
                    a[(i - 1, i - 1)] -= s;
                }
                let vel = (u[i] - up[i]) / self.dt;
                h[i] -= c * vel;
                a[(i, i)] -= c / self.dt;
                cm[(i, i)] += c / self.dt;
                // drag scaled by the lagged state
                let w = 1.0 + up[i] * up[i];
                h[i] -= d * w * vel;
                a[(i, i)] -= d * w / self.dt;
                cm[(i, i)] += d * w / self.dt - d * 2.0 * up[i] * vel;
            }
            (h, a, cm)
        }

        /// `∂h/∂q` columns for `[k, k3, c, d]`.
        fn h_q(&self, u: &[f64], up: &[f64]) -> DMatrix<f64> {
            let n = self.n;
            let mut g = DMatrix::zeros(n, 4);
            for i in 0..n {
                let l = if i == 0 { u[0] } else { u[i] - u[i - 1] };
                g[(i, 0)] -= l;
                g[(i, 1)] -= l.powi(3);
                if i > 0 {
                    g[(i - 1, 0)] += l;
                    g[(i - 1, 1)] += l.powi(3);
                }
                let vel = (u[i] - up[i]) / self.dt;
                g[(i, 2)] -= vel;
                g[(i, 3)] -= (1.0 + up[i] * up[i]) * vel;
            }
            g
        }

        pub fn simulate(&mut self) -> Result<()> {
            let n = self.n;
            let scheme = BdfScheme::new(self.order)?;
            self.mass = self.mass_matrix();
            let m = dense(&self.mass);
            self.traj = vec![self.q[5..5 + n].to_vec()];
            self.vel = vec![self.q[5 + n..5 + 2 * n].to_vec()];
            for i in 1..=self.steps {
                let (alpha, beta) = scheme.coefficients(i);
                let bdt = beta * self.dt;
                let mut hu = vec![0.0; n];
                let mut hv = vec![0.0; n];
                for (j, a) in alpha.iter().enumerate() {
                    axpy(&mut hu, *a, &self.traj[i - 1 - j]);
                    axpy(&mut hv, *a, &self.vel[i - 1 - j]);
                }
                let up = self.traj[i - 1].clone();
                let mut u = up.clone();
                for it in 0.. {
                    let (h, a, _) = self.h(&u, &up);
                    let w: Vec<f64> = (0..n).map(|k| (u[k] + hu[k]) / bdt + hv[k]).collect();
                    let r = &m * DVector::from_vec(w) - DVector::from_vec(h) * bdt;
                    if r.amax() < 1e-15 || it > 50 {
                        break;
                    }
                    let jm = &m / bdt - a * bdt;
                    let du = jm.lu().solve(&r).ok_or(Error::SingularSystem { step: Some(i) })?;
                    for k in 0..n {
                        u[k] -= du[k];
                    }
                }
                let v = (0..n).map(|k| (u[k] + hu[k]) / bdt).collect();
                self.traj.push(u);
                self.vel.push(v);
            }
            Ok(())
        }

        pub fn objective(&self) -> f64 {
            let mut j = 0.0;
            for (i, u) in self.traj.iter().enumerate() {
                let e: f64 = u.iter().zip(&self.target).map(|(a, b)| (a - b).powi(2)).sum();
                j += 0.5 * self.weights[i] * e;
            }
            // explicit parameter term
            j + 0.05 * self.q[0] * self.q[0]
        }

        fn dj(&self, i: usize) -> Vec<f64> {
            self.traj[i]
                .iter()
                .zip(&self.target)
                .map(|(a, b)| self.weights[i] * (a - b))
                .collect()
        }
    }

    fn dense(m: &CsrMatrix) -> DMatrix<f64> {
        let d = m.to_dense();
        DMatrix::from_fn(d.len(), d.len(), |i, j| d[i][j])
    }

    fn to_csr(m: &DMatrix<f64>) -> CsrMatrix {
        let mut t = Triplets::new(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push(i, j, m[(i, j)]);
                }
            }
        }
        t.into_csr()
    }

    impl Dynamics for Oscillator {
        fn n_free(&self) -> usize {
            self.n
        }
        fn steps(&self) -> usize {
            self.steps
        }
        fn scheme(&self) -> BdfScheme {
            BdfScheme::new(self.order).expect("valid order")
        }
        fn dt(&self) -> f64 {
            self.dt
        }
        fn mass_free(&self) -> &CsrMatrix {
            &self.mass
        }
        fn n_params(&self) -> usize {
            Oscillator::n_params(self)
        }
        fn load_step(&mut self, i: usize) -> Result<StepBlocks> {
            let (_, a, c) = self.h(&self.traj[i], &self.traj[i - 1]);
            Ok(StepBlocks {
                a: to_csr(&a),
                c: Some(to_csr(&c)),
                dj: self.dj(i),
            })
        }
        fn step_param_product(&mut self, i: usize, p: &[f64]) -> Result<Vec<f64>> {
            let n = self.n;
            let (alpha, beta) = self.scheme().coefficients(i);
            let mut w = self.vel[i].clone();
            for (j, a) in alpha.iter().enumerate() {
                axpy(&mut w, *a, &self.vel[i - 1 - j]);
            }
            let hq = self.h_q(&self.traj[i], &self.traj[i - 1]);
            let mut g = vec![0.0; self.n_params()];
            for c in 0..4 {
                g[c] = -beta * self.dt * (0..n).map(|r| p[r] * hq[(r, c)]).sum::<f64>();
            }
            g[4] = (0..n).map(|k| p[k] * (1.0 + 0.1 * k as f64) * w[k]).sum();
            Ok(g)
        }
        fn initial_dj(&mut self) -> Result<Vec<f64>> {
            Ok(self.dj(0))
        }
        fn objective_dq(&mut self) -> Result<Vec<f64>> {
            let mut g = vec![0.0; self.n_params()];
            g[0] = 0.1 * self.q[0];
            Ok(g)
        }
        fn ic_product(&self, mu: &[f64], p: &[f64]) -> Vec<f64> {
            let mut g = vec![0.0; self.n_params()];
            g[5..5 + self.n].copy_from_slice(mu);
            g[5 + self.n..].copy_from_slice(p);
            g
        }
    }
}

#[cfg(test)]
mod tests {
    use super::toy::Oscillator;
    use super::*;

    fn osc(n: usize, steps: usize, order: usize) -> Oscillator {
        let mut q = vec![2.0, 0.7, 0.3, 0.2, 1.3];
        q.extend((0..n).map(|k| 0.05 * k as f64 - 0.02));
        q.extend((0..n).map(|k| 0.3 - 0.1 * k as f64));
        let mut o = Oscillator::new(n, steps, 0.1, order, q);
        o.simulate().unwrap();
        o
    }

    #[test]
    fn sweep_matches_dense_kkt() {
        for (n, steps, order) in [(1, 3, 1), (2, 3, 1), (2, 4, 2), (3, 4, 3), (1, 6, 2)] {
            let mut o = osc(n, steps, order);
            let (st, g) = transient_adjoint(&mut o).unwrap();
            let d = dense::solve(&mut o).unwrap();
            let scale = d.gradient.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in g.iter().zip(&d.gradient) {
                assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
            }
            for (a, b) in d.gradient.iter().zip(&d.tangent_gradient) {
                assert!((a - b).abs() <= 1e-10 * scale);
            }
            for i in 0..=steps {
                for (a, b) in st.p[i].iter().zip(&d.p[i]) {
                    assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "p_{i}: {a} vs {b}");
                }
            }
            for (a, b) in st.mu0.iter().zip(&d.mu0) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn sweep_matches_finite_differences() {
        for order in [1, 2, 3] {
            let mut o = osc(2, 5, order);
            let (_, g) = transient_adjoint(&mut o).unwrap();
            for k in 0..o.n_params() {
                let h = 1e-6;
                let f = |s: f64| {
                    let mut t = o.clone();
                    t.q[k] += s * h;
                    t.simulate().unwrap();
                    t.objective()
                };
                let fd = (f(1.0) - f(-1.0)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "param {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn zero_source_gives_zero_adjoint() {
        let mut o = osc(2, 4, 2);
        o.weights = vec![0.0; 5];
        let (st, g) = transient_adjoint(&mut o).unwrap();
        assert!(st.p.iter().flatten().all(|v| *v == 0.0));
        assert!(st.nu.iter().flatten().all(|v| *v == 0.0));
        assert!(st.mu0.iter().all(|v| *v == 0.0));
        assert!(g[1..].iter().all(|v| *v == 0.0));
    }

    /// Only the terminal step carries a source: the terminal solve is local
    /// and earlier multipliers come from propagation alone.
    #[test]
    fn terminal_source_propagates_backwards() {
        let mut o = osc(1, 4, 1);
        o.weights = vec![0.0, 0.0, 0.0, 0.0, 1.0];
        let (st, _) = transient_adjoint(&mut o).unwrap();
        assert!(st.p[4][0] != 0.0);
        // with no coupling beyond one step the terminal multiplier is the
        // solution of a single local system
        let blocks = o.load_step(4).unwrap();
        let m = o.mass_free().get(0, 0);
        let k = m / o.dt - o.dt * blocks.a.get(0, 0);
        assert!((st.p[4][0] + blocks.dj[0] / k).abs() < 1e-14);
        assert!(st.p[1][0] != 0.0);
    }

    #[test]
    fn linearity_in_the_objective() {
        let mut a = osc(2, 4, 2);
        let (_, ga) = transient_adjoint(&mut a).unwrap();
        let mut b = a.clone();
        b.weights = b.weights.iter().map(|w| 3.0 * w).collect();
        let (_, gb) = transient_adjoint(&mut b).unwrap();
        let gx = {
            let mut c = a.clone();
            c.weights = c.weights.iter().map(|w| 4.0 * w).collect();
            transient_adjoint(&mut c).unwrap().1
        };
        // objective_dq is not scaled by the weights: subtract it once
        for k in 0..ga.len() {
            let extra = if k == 0 { 0.1 * a.q[0] } else { 0.0 };
            assert!((ga[k] + gb[k] - extra - gx[k]).abs() < 1e-12 * (1.0 + gx[k].abs()));
        }
    }
}
