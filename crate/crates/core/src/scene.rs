//! Runtime scene description and the optimization parameter vector.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contact::friction::FrictionTable;
use crate::contact::BarrierParams;
use crate::error::{Error, Result};
use crate::fem::FeSpace;
use crate::materials::{DampingParams, MaterialField, MaterialModel, TractionEdge};
use crate::mesh::Mesh;
use crate::objectives::ObjectiveSpec;
use crate::optimize::OptSettings;

/// Piecewise-linear scalar table `[(t, s)]`, constant beyond its ends.
/// An empty table is the constant 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimeTable(pub Vec<[f64; 2]>);

impl TimeTable {
    pub fn value(&self, t: f64) -> f64 {
        let k = &self.0;
        match k.len() {
            0 => 1.0,
            1 => k[0][1],
            _ => {
                if t <= k[0][0] {
                    return k[0][1];
                }
                for w in k.windows(2) {
                    if t <= w[1][0] {
                        let s = (t - w[0][0]) / (w[1][0] - w[0][0]);
                        return w[0][1] + s * (w[1][1] - w[0][1]);
                    }
                }
                k[k.len() - 1][1]
            }
        }
    }

    /// Right derivative at `t`.
    pub fn slope(&self, t: f64) -> f64 {
        let k = &self.0;
        for w in k.windows(2) {
            if t >= w[0][0] && t < w[1][0] {
                return (w[1][1] - w[0][1]) / (w[1][0] - w[0][0]);
            }
        }
        0.0
    }

    fn validate(&self, pointer: &str) -> Result<()> {
        for (i, w) in self.0.windows(2).enumerate() {
            if !(w[1][0] > w[0][0]) {
                return Err(Error::schema(format!("{pointer}/{}", i + 1), "table times must increase"));
            }
        }
        if self.0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::schema(pointer, "non-finite table entry"));
        }
        Ok(())
    }
}

/// Prescribed displacement `s(t) · (offset + G X)` on the masked components of
/// every node on edges with the tag. `X` is the template rest position, so the
/// data does not move with shape parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletBc {
    pub tag: u32,
    #[serde(default = "both")]
    pub components: [bool; 2],
    #[serde(default)]
    pub offset: [f64; 2],
    #[serde(default)]
    pub gradient: [[f64; 2]; 2],
    #[serde(default)]
    pub table: TimeTable,
}

fn both() -> [bool; 2] {
    [true, true]
}

/// Constant traction `s(t) · t` on edges with the tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeumannBc {
    pub tag: u32,
    pub traction: [f64; 2],
    #[serde(default)]
    pub table: TimeTable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSettings {
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "one")]
    pub bdf_order: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactSettings {
    pub dhat: f64,
    pub kappa: f64,
    /// Friction mollifier width, in displacement per step.
    pub eta: f64,
    #[serde(default)]
    pub friction: FrictionTable,
}

impl ContactSettings {
    pub fn barrier(&self) -> BarrierParams {
        BarrierParams {
            dhat: self.dhat,
            kappa: self.kappa,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcMode {
    PerNode,
    PerBody,
}

/// Initial displacement or velocity, either per node or one 2-vector per body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcField {
    pub mode: IcMode,
    pub values: Vec<f64>,
}

impl IcField {
    pub fn zeros(space: &FeSpace, mode: IcMode) -> Self {
        let n = match mode {
            IcMode::PerNode => space.n_dofs(),
            IcMode::PerBody => 2 * space.node_body.iter().copied().max().map_or(0, |b| b + 1),
        };
        Self {
            mode,
            values: vec![0.0; n],
        }
    }

    pub fn expected_len(&self, space: &FeSpace, n_bodies: usize) -> usize {
        match self.mode {
            IcMode::PerNode => space.n_dofs(),
            IcMode::PerBody => 2 * n_bodies,
        }
    }

    /// Full node-DOF vector.
    pub fn expand(&self, space: &FeSpace) -> Vec<f64> {
        match self.mode {
            IcMode::PerNode => self.values.clone(),
            IcMode::PerBody => space
                .node_body
                .iter()
                .flat_map(|&b| [self.values[2 * b], self.values[2 * b + 1]])
                .collect(),
        }
    }

    /// Transpose of [`IcField::expand`].
    pub fn pull_back(&self, space: &FeSpace, g: &[f64]) -> Vec<f64> {
        match self.mode {
            IcMode::PerNode => g.to_vec(),
            IcMode::PerBody => {
                let mut out = vec![0.0; self.values.len()];
                for (n, &b) in space.node_body.iter().enumerate() {
                    out[2 * b] += g[2 * n];
                    out[2 * b + 1] += g[2 * n + 1];
                }
                out
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    #[serde(default = "default_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_iters")]
    pub max_newton_iters: usize,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_iters() -> usize {
    200
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            newton_tol: default_tol(),
            max_newton_iters: default_iters(),
        }
    }
}

/// Parameter classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Shape,
    Lambda,
    Mu,
    Gamma,
    Damping,
    U0,
    V0,
}

impl Block {
    pub const ALL: [Block; 7] = [
        Block::Shape,
        Block::Lambda,
        Block::Mu,
        Block::Gamma,
        Block::Damping,
        Block::U0,
        Block::V0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Shape => "shape",
            Block::Lambda => "lambda",
            Block::Mu => "mu",
            Block::Gamma => "gamma",
            Block::Damping => "damping",
            Block::U0 => "u0",
            Block::V0 => "v0",
        }
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Block::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::schema("/block", format!("unknown parameter block `{s}`")))
    }
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// All optimization variables, also used for gradients.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub shape: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    pub damping: Vec<f64>,
    pub u0: Vec<f64>,
    pub v0: Vec<f64>,
}

impl ParamVector {
    pub fn block(&self, b: Block) -> &[f64] {
        match b {
            Block::Shape => &self.shape,
            Block::Lambda => &self.lambda,
            Block::Mu => &self.mu,
            Block::Gamma => &self.gamma,
            Block::Damping => &self.damping,
            Block::U0 => &self.u0,
            Block::V0 => &self.v0,
        }
    }

    pub fn block_mut(&mut self, b: Block) -> &mut Vec<f64> {
        match b {
            Block::Shape => &mut self.shape,
            Block::Lambda => &mut self.lambda,
            Block::Mu => &mut self.mu,
            Block::Gamma => &mut self.gamma,
            Block::Damping => &mut self.damping,
            Block::U0 => &mut self.u0,
            Block::V0 => &mut self.v0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in Block::ALL {
            z.block_mut(b).iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Concatenation of the listed blocks.
    pub fn flatten(&self, blocks: &[Block]) -> Vec<f64> {
        blocks.iter().flat_map(|&b| self.block(b).iter().copied()).collect()
    }

    pub fn flat_len(&self, blocks: &[Block]) -> usize {
        blocks.iter().map(|&b| self.block(b).len()).sum()
    }

    /// Inverse of [`ParamVector::flatten`] on the listed blocks.
    pub fn set_flat(&mut self, blocks: &[Block], x: &[f64]) {
        let mut k = 0;
        for &b in blocks {
            for v in self.block_mut(b).iter_mut() {
                *v = x[k];
                k += 1;
            }
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        Block::ALL
            .iter()
            .map(|&b| self.block(b).iter().zip(other.block(b)).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        for b in Block::ALL {
            for (x, y) in self.block_mut(b).iter_mut().zip(other.block(b)) {
                *x += a * y;
            }
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut z = self.zeros_like();
        z.axpy(a, self);
        z
    }

    /// Keeps only the listed blocks, zeroing the rest.
    pub fn masked(&self, blocks: &[Block]) -> Self {
        let mut z = self.zeros_like();
        for &b in blocks {
            *z.block_mut(b) = self.block(b).to_vec();
        }
        z
    }
}

/// Prescribed DOFs and the reduced (free) numbering.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub free: Vec<Option<usize>>,
    pub free_dofs: Vec<usize>,
    /// `(dof, source)` where source is `Some(bc)` for boundary data and `None`
    /// for a fixed body.
    pub prescribed: Vec<(usize, Option<usize>)>,
}

impl DofMap {
    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&d| full[d]).collect()
    }

    /// Zero-padded full vector from free values.
    pub fn pad(&self, free: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (k, &d) in self.free_dofs.iter().enumerate() {
            out[d] = free[k];
        }
        out
    }

    pub fn scatter(&self, free: &[f64], full: &mut [f64]) {
        for (k, &d) in self.free_dofs.iter().enumerate() {
            full[d] = free[k];
        }
    }

    /// Whether both components of the node are prescribed.
    pub fn node_fixed(&self, node: usize) -> bool {
        self.free[2 * node].is_none() && self.free[2 * node + 1].is_none()
    }
}

/// BDF coefficients; step `i` uses order `min(i, m)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BdfScheme {
    pub order: usize,
}

impl BdfScheme {
    pub fn new(order: usize) -> Result<Self> {
        if !(1..=3).contains(&order) {
            return Err(Error::schema("/time/bdf_order", "BDF order must be 1, 2 or 3"));
        }
        Ok(Self { order })
    }

    pub fn order_at(&self, i: usize) -> usize {
        i.min(self.order).max(1)
    }

    /// `(α_1..α_k, β)` for step `i ≥ 1`; `α_j` multiplies the state `i − j`.
    pub fn coefficients(&self, i: usize) -> (&'static [f64], f64) {
        match self.order_at(i) {
            1 => (&[-1.0], 1.0),
            2 => (&[-4.0 / 3.0, 1.0 / 3.0], 2.0 / 3.0),
            _ => (&[-18.0 / 11.0, 9.0 / 11.0, -2.0 / 11.0], 6.0 / 11.0),
        }
    }
}

/// A validated simulation and optimization setup.
#[derive(Clone, Debug)]
pub struct Scene {
    pub mesh: Mesh,
    pub space: FeSpace,
    pub order: usize,
    /// Current rest vertex positions; `mesh.rest_vertices` is the template.
    pub shape: Vec<f64>,
    pub material: MaterialField,
    pub damping: DampingParams,
    pub gravity: [f64; 2],
    pub contact: Option<ContactSettings>,
    pub dirichlet: Vec<DirichletBc>,
    pub neumann: Vec<NeumannBc>,
    pub fixed_bodies: BTreeSet<usize>,
    /// `None` for a static problem.
    pub time: Option<TimeSettings>,
    pub u0: IcField,
    pub v0: IcField,
    pub objective: ObjectiveSpec,
    pub optimization: OptSettings,
    pub solver: SolverSettings,
}

impl Scene {
    /// A static scene with a uniform material and no loads.
    pub fn new(mesh: Mesh, order: usize, model: MaterialModel, lambda: f64, mu: f64, density: f64) -> Result<Self> {
        let space = FeSpace::new(&mesh, order)?;
        let shape = mesh.rest_shape();
        let material = MaterialField::uniform(model, mesh.n_elements(), lambda, mu, density);
        let u0 = IcField::zeros(&space, IcMode::PerNode);
        let v0 = u0.clone();
        Ok(Self {
            mesh,
            space,
            order,
            shape,
            material,
            damping: DampingParams { alpha: 0.0, beta: 0.0 },
            gravity: [0.0, 0.0],
            contact: None,
            dirichlet: Vec::new(),
            neumann: Vec::new(),
            fixed_bodies: BTreeSet::new(),
            time: None,
            u0,
            v0,
            objective: ObjectiveSpec::default(),
            optimization: OptSettings::default(),
            solver: SolverSettings::default(),
        })
    }

    pub fn is_transient(&self) -> bool {
        self.time.is_some()
    }

    pub fn scheme(&self) -> Result<BdfScheme> {
        BdfScheme::new(self.time.map_or(1, |t| t.bdf_order))
    }

    pub fn n_bodies(&self) -> usize {
        self.mesh.n_bodies()
    }

    pub fn template_nodes(&self) -> Vec<f64> {
        self.space.node_positions(&self.mesh.rest_shape())
    }

    pub fn rest_nodes(&self) -> Vec<f64> {
        self.space.node_positions(&self.shape)
    }

    pub fn friction_table(&self) -> FrictionTable {
        self.contact.as_ref().map(|c| c.friction.clone()).unwrap_or_default()
    }

    /// Solution nodes along every boundary edge with the tag, as
    /// `(nodes along the edge, end vertices)`.
    pub fn tagged_edges(&self, tag: u32) -> Vec<(Vec<usize>, [usize; 2])> {
        self.mesh
            .boundary_edges
            .iter()
            .filter(|be| be.tag == tag)
            .map(|be| {
                let [a, b] = be.v;
                let nodes = if self.order == 2 {
                    vec![a, self.space.edge_node[&(a.min(b), a.max(b))], b]
                } else {
                    vec![a, b]
                };
                (nodes, be.v)
            })
            .collect()
    }

    pub fn dof_map(&self) -> DofMap {
        let n = self.space.n_dofs();
        let mut src: Vec<Option<Option<usize>>> = vec![None; n];
        for (k, bc) in self.dirichlet.iter().enumerate() {
            for (nodes, _) in self.tagged_edges(bc.tag) {
                for nd in nodes {
                    for c in 0..2 {
                        if bc.components[c] {
                            src[2 * nd + c] = Some(Some(k));
                        }
                    }
                }
            }
        }
        for (nd, b) in self.space.node_body.iter().enumerate() {
            if self.fixed_bodies.contains(b) {
                src[2 * nd] = Some(None);
                src[2 * nd + 1] = Some(None);
            }
        }
        let mut free = vec![None; n];
        let mut free_dofs = Vec::new();
        let mut prescribed = Vec::new();
        for (d, s) in src.into_iter().enumerate() {
            match s {
                Some(s) => prescribed.push((d, s)),
                None => {
                    free[d] = Some(free_dofs.len());
                    free_dofs.push(d);
                }
            }
        }
        DofMap {
            free,
            free_dofs,
            prescribed,
        }
    }

    fn bc_base(&self, bc: &DirichletBc, template: &[f64], dof: usize) -> f64 {
        let (nd, c) = (dof / 2, dof % 2);
        let x = [template[2 * nd], template[2 * nd + 1]];
        bc.offset[c] + bc.gradient[c][0] * x[0] + bc.gradient[c][1] * x[1]
    }

    /// Writes prescribed displacements at time `t` into `u`.
    pub fn apply_dirichlet(&self, dofs: &DofMap, t: f64, u: &mut [f64]) {
        let template = self.template_nodes();
        for &(d, s) in &dofs.prescribed {
            u[d] = match s {
                Some(k) => {
                    let bc = &self.dirichlet[k];
                    bc.table.value(t) * self.bc_base(bc, &template, d)
                }
                None => 0.0,
            };
        }
    }

    /// Prescribed velocities at `t = 0`.
    pub fn dirichlet_velocity0(&self, dofs: &DofMap, v: &mut [f64]) {
        let template = self.template_nodes();
        for &(d, s) in &dofs.prescribed {
            v[d] = match s {
                Some(k) => {
                    let bc = &self.dirichlet[k];
                    bc.table.slope(0.0) * self.bc_base(bc, &template, d)
                }
                None => 0.0,
            };
        }
    }

    /// Traction edges with tractions scaled for time `t`.
    pub fn traction_edges(&self, t: f64) -> Vec<TractionEdge> {
        let mut out = Vec::new();
        for bc in &self.neumann {
            let s = bc.table.value(t);
            for (nodes, verts) in self.tagged_edges(bc.tag) {
                out.push(TractionEdge {
                    nodes,
                    verts,
                    traction: [s * bc.traction[0], s * bc.traction[1]],
                });
            }
        }
        out
    }

    /// Initial displacement and velocity, with prescribed DOFs overwritten by
    /// boundary data.
    pub fn initial_state(&self, dofs: &DofMap) -> (Vec<f64>, Vec<f64>) {
        let mut u = self.u0.expand(&self.space);
        let mut v = self.v0.expand(&self.space);
        self.apply_dirichlet(dofs, 0.0, &mut u);
        self.dirichlet_velocity0(dofs, &mut v);
        (u, v)
    }

    pub fn params(&self) -> ParamVector {
        ParamVector {
            shape: self.shape.clone(),
            lambda: self.material.lambda.clone(),
            mu: self.material.mu.clone(),
            gamma: self.friction_table().values(),
            damping: vec![self.damping.alpha, self.damping.beta],
            u0: self.u0.values.clone(),
            v0: self.v0.values.clone(),
        }
    }

    pub fn set_params(&mut self, q: &ParamVector) -> Result<()> {
        let cur = self.params();
        for b in Block::ALL {
            if q.block(b).len() != cur.block(b).len() {
                return Err(Error::Dimension(format!(
                    "{b} block has {} entries, expected {}",
                    q.block(b).len(),
                    cur.block(b).len()
                )));
            }
        }
        self.shape = q.shape.clone();
        self.material.lambda = q.lambda.clone();
        self.material.mu = q.mu.clone();
        if let Some(c) = self.contact.as_mut() {
            c.friction.set_values(&q.gamma);
        }
        self.damping = DampingParams {
            alpha: q.damping[0],
            beta: q.damping[1],
        };
        self.u0.values = q.u0.clone();
        self.v0.values = q.v0.clone();
        Ok(())
    }

    pub fn with_params(&self, q: &ParamVector) -> Result<Scene> {
        let mut s = self.clone();
        s.set_params(q)?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let tags: BTreeSet<u32> = self.mesh.boundary_edges.iter().map(|e| e.tag).collect();
        for (k, bc) in self.dirichlet.iter().enumerate() {
            if !tags.contains(&bc.tag) {
                return Err(Error::DanglingReference(format!(
                    "/boundary_conditions/dirichlet/{k}/tag: no boundary edge has tag {}",
                    bc.tag
                )));
            }
            bc.table.validate(&format!("/boundary_conditions/dirichlet/{k}/table"))?;
        }
        for (k, bc) in self.neumann.iter().enumerate() {
            if !tags.contains(&bc.tag) {
                return Err(Error::DanglingReference(format!(
                    "/boundary_conditions/neumann/{k}/tag: no boundary edge has tag {}",
                    bc.tag
                )));
            }
            bc.table.validate(&format!("/boundary_conditions/neumann/{k}/table"))?;
        }
        let nb = self.n_bodies();
        for &b in &self.fixed_bodies {
            if b >= nb {
                return Err(Error::DanglingReference(format!("/bodies: fixed body {b} does not exist")));
            }
        }
        if self.shape.len() != 2 * self.mesh.n_vertices() {
            return Err(Error::Dimension("shape vector does not match the mesh".into()));
        }
        if self.material.lambda.len() != self.mesh.n_elements() {
            return Err(Error::schema("/materials", "per-element arrays do not match the mesh"));
        }
        self.material.validate()?;
        if let Some(t) = &self.time {
            if !(t.dt > 0.0) || !t.dt.is_finite() {
                return Err(Error::schema("/time/dt", "dt must be positive"));
            }
            if t.steps == 0 {
                return Err(Error::schema("/time/steps", "steps must be positive"));
            }
            BdfScheme::new(t.bdf_order)?;
        }
        if let Some(c) = &self.contact {
            if !(c.dhat > 0.0) {
                return Err(Error::schema("/contact/dhat", "dhat must be positive"));
            }
            if !(c.kappa > 0.0) {
                return Err(Error::schema("/contact/kappa", "kappa must be positive"));
            }
            if !(c.eta > 0.0) {
                return Err(Error::schema("/contact/eta", "eta must be positive"));
            }
            for (k, &(a, b, g)) in c.friction.entries.iter().enumerate() {
                if a >= nb || b >= nb {
                    return Err(Error::DanglingReference(format!(
                        "/contact/friction/{k}: body pair ({a}, {b}) does not exist"
                    )));
                }
                if !(g >= 0.0) {
                    return Err(Error::schema(format!("/contact/friction/{k}"), "friction must be non-negative"));
                }
            }
        }
        if !(self.damping.alpha >= 0.0 && self.damping.beta >= 0.0) {
            return Err(Error::schema("/materials/damping", "damping must be non-negative"));
        }
        for (name, f) in [("u0", &self.u0), ("v0", &self.v0)] {
            if f.values.len() != f.expected_len(&self.space, nb) {
                return Err(Error::schema(
                    format!("/initial_conditions/{name}"),
                    format!("expected {} values", f.expected_len(&self.space, nb)),
                ));
            }
        }
        self.objective.validate(self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, rectangle, BoundarySpec};

    #[test]
    fn time_table_interpolates_and_clamps() {
        let t = TimeTable(vec![[0.0, 0.0], [1.0, 2.0], [2.0, 2.0]]);
        assert_eq!(t.value(-1.0), 0.0);
        assert_eq!(t.value(0.5), 1.0);
        assert_eq!(t.value(5.0), 2.0);
        assert_eq!(t.slope(0.0), 2.0);
        assert_eq!(t.slope(1.5), 0.0);
        assert_eq!(TimeTable::default().value(3.0), 1.0);
    }

    #[test]
    fn bdf_rows_are_consistent() {
        for m in 1..=3 {
            let s = BdfScheme::new(m).unwrap();
            for i in 1..=4 {
                let (a, _) = s.coefficients(i);
                assert_eq!(a.len(), i.min(m));
                // constants are fixed points
                assert!((1.0 + a.iter().sum::<f64>()).abs() < 1e-15);
                // exact for linear sequences: Σ α_j (−j) + 0 = β
                let (a, b) = s.coefficients(i);
                let lin: f64 = a.iter().enumerate().map(|(j, x)| -x * (j + 1) as f64).sum();
                assert!((lin - b).abs() < 1e-15);
            }
        }
        assert!(BdfScheme::new(4).is_err());
    }

    #[test]
    fn dof_map_and_ic_broadcast() {
        let (v, t) = rectangle(0.0, 0.0, 2.0, 1.0, 2, 1);
        let spec = BoundarySpec {
            boxes: vec![([-0.1, -0.1, 0.1, 1.1], 1)],
            ..Default::default()
        };
        let m = build_mesh(v, t, &spec).unwrap();
        let mut s = Scene::new(m, 2, MaterialModel::Linear, 1.0, 1.0, 1.0).unwrap();
        s.dirichlet.push(DirichletBc {
            tag: 1,
            components: [true, false],
            offset: [0.5, 0.0],
            gradient: [[0.0, 1.0], [0.0, 0.0]],
            table: TimeTable::default(),
        });
        let d = s.dof_map();
        // left edge: 2 vertices + 1 midpoint, x component only
        assert_eq!(d.prescribed.len(), 3);
        let mut u = vec![0.0; s.space.n_dofs()];
        s.apply_dirichlet(&d, 0.0, &mut u);
        let x = s.template_nodes();
        for &(dof, _) in &d.prescribed {
            assert_eq!(dof % 2, 0);
            assert_eq!(u[dof], 0.5 + x[dof + 1]);
        }
        let f = IcField {
            mode: IcMode::PerBody,
            values: vec![1.0, -2.0],
        };
        let full = f.expand(&s.space);
        assert!(full.chunks(2).all(|c| c == [1.0, -2.0]));
        let back = f.pull_back(&s.space, &vec![1.0; full.len()]);
        assert_eq!(back, vec![s.space.n_nodes as f64; 2]);
        s.validate().unwrap();
        s.dirichlet[0].tag = 9;
        assert!(matches!(s.validate(), Err(Error::DanglingReference(_))));
    }

    #[test]
    fn param_vector_round_trip() {
        let (v, t) = rectangle(0.0, 0.0, 1.0, 1.0, 1, 1);
        let m = build_mesh(v, t, &BoundarySpec::default()).unwrap();
        let s = Scene::new(m, 1, MaterialModel::NeoHookean, 2.0, 3.0, 1.0).unwrap();
        let q = s.params();
        let blocks = [Block::Lambda, Block::Shape];
        let flat = q.flatten(&blocks);
        assert_eq!(flat.len(), 2 + 8);
        let mut r = q.zeros_like();
        r.set_flat(&blocks, &flat);
        assert_eq!(r.lambda, q.lambda);
        assert_eq!(r.shape, q.shape);
        assert!(r.mu.iter().all(|v| *v == 0.0));
        let s2 = s.with_params(&q).unwrap();
        assert_eq!(s2.params(), q);
        assert_eq!("gamma".parse::<Block>().unwrap(), Block::Gamma);
        assert!("alpha".parse::<Block>().is_err());
    }
}
