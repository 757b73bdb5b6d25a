//! Scene files, trajectory containers and run outputs.
//!
//! Trajectory layout (`.dtrj`, all integers and floats little-endian):
//!
//! ```text
//! offset 0   4 bytes   magic "DTRJ"
//! offset 4   u32       format version (1)
//! offset 8   u64       header length H in bytes
//! offset 16  H bytes   UTF-8 JSON header (TrajectoryHeader)
//! then, for each stored state s = 0..=steps:
//!            n_dofs f64   displacement u^s
//!            n_dofs f64   velocity v^s
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::contact::friction::FrictionTable;
use crate::error::{Error, Result};
use crate::fem::FeSpace;
use crate::adjoint::{static_adjoint, trajectory_objective};
use crate::forward::{StepStats, System, Trajectory};
use crate::materials::{DampingParams, MaterialField, MaterialModel};
use crate::mesh::{build_mesh, parse_listing, BoundarySpec};
use crate::objectives::{ObjectiveSpec, KINDS};
use crate::optimize::OptSettings;
use crate::scene::{
    Block, ContactSettings, DirichletBc, IcField, IcMode, NeumannBc, ParamVector, Scene, SolverSettings, TimeSettings,
};

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"DTRJ";
pub const TRAJECTORY_VERSION: u32 = 1;

/// A scalar broadcast to every element, or one value per element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerElement {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerElement {
    fn expand(&self, n: usize, pointer: &str) -> Result<Vec<f64>> {
        match self {
            PerElement::Uniform(v) => Ok(vec![*v; n]),
            PerElement::Each(v) if v.len() == n => Ok(v.clone()),
            PerElement::Each(v) => Err(Error::schema(pointer, format!("{} values for {n} elements", v.len()))),
        }
    }

    fn compress(v: &[f64]) -> Self {
        match v.first() {
            Some(&x) if v.iter().all(|y| y.to_bits() == x.to_bits()) => PerElement::Uniform(x),
            _ => PerElement::Each(v.to_vec()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagBox {
    #[serde(rename = "box")]
    pub bounds: [f64; 4],
    pub tag: u32,
}

/// Inline mesh arrays or a reference to a listing file (relative to the scene file).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vertices: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub triangles: Vec<[usize; 3]>,
    /// Body id per triangle; all zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bodies: Option<Vec<usize>>,
    /// Explicit boundary edge tags `[a, b, tag]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edge_tags: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tag_boxes: Vec<TagBox>,
    #[serde(default)]
    pub default_tag: u32,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub dirichlet_tags: BTreeSet<u32>,
    /// Polynomial order of the displacement field.
    #[serde(default = "one")]
    pub order: usize,
    /// Current rest vertex positions when they differ from `vertices`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<[f64; 2]>>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodiesBlock {
    #[serde(default)]
    pub fixed: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialsBlock {
    #[serde(default = "neo_hookean")]
    pub model: MaterialModel,
    pub lambda: PerElement,
    pub mu: PerElement,
    #[serde(default = "unit_density")]
    pub density: PerElement,
    #[serde(default = "no_damping")]
    pub damping: DampingParams,
}

fn neo_hookean() -> MaterialModel {
    MaterialModel::NeoHookean
}

fn unit_density() -> PerElement {
    PerElement::Uniform(1.0)
}

fn no_damping() -> DampingParams {
    DampingParams { alpha: 0.0, beta: 0.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionEntry {
    pub bodies: [usize; 2],
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactBlock {
    pub dhat: f64,
    pub kappa: f64,
    pub eta: f64,
    #[serde(default)]
    pub friction: Vec<FrictionEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryBlock {
    #[serde(default)]
    pub dirichlet: Vec<DirichletBc>,
    #[serde(default)]
    pub neumann: Vec<NeumannBc>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<IcField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<IcField>,
}

/// On-disk scene description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub mesh: MeshBlock,
    #[serde(default)]
    pub bodies: BodiesBlock,
    pub materials: MaterialsBlock,
    #[serde(default)]
    pub gravity: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact: Option<ContactBlock>,
    #[serde(default)]
    pub boundary_conditions: BoundaryBlock,
    /// Absent for a static problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSettings>,
    #[serde(default)]
    pub initial_conditions: InitialBlock,
    #[serde(default)]
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub optimization: OptSettings,
    #[serde(default)]
    pub solver: SolverSettings,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => s.push_str(&format!("/{index}")),
            Segment::Map { key } => s.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => s.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    if s.is_empty() {
        "/".into()
    } else {
        s
    }
}

fn check_kinds(doc: &Value) -> Result<()> {
    if let Some(Value::Array(terms)) = doc.get("objective") {
        for (k, t) in terms.iter().enumerate() {
            match t.get("kind") {
                Some(Value::String(s)) if KINDS.contains(&s.as_str()) => {}
                Some(Value::String(s)) => return Err(Error::UnknownKind(s.clone())),
                _ => return Err(Error::schema(format!("/objective/{k}/kind"), "missing objective kind")),
            }
        }
    }
    Ok(())
}

impl SceneFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::schema("/", e.to_string()))?;
        Self::from_value(doc)
    }

    pub fn from_value(doc: Value) -> Result<Self> {
        check_kinds(&doc)?;
        serde_path_to_error::deserialize(doc).map_err(|e| {
            let pointer = pointer_of(e.path());
            Error::schema(pointer, e.into_inner().to_string())
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Builds and validates the runtime scene. `base` resolves mesh file references.
    pub fn to_scene(&self, base: Option<&Path>) -> Result<Scene> {
        let mb = &self.mesh;
        let mesh = match &mb.file {
            Some(f) => {
                if !mb.vertices.is_empty() || !mb.triangles.is_empty() {
                    return Err(Error::schema("/mesh", "give either a file or inline arrays, not both"));
                }
                let path = base.map_or_else(|| f.clone(), |b| b.join(f));
                let text = fs::read_to_string(&path)
                    .map_err(|e| Error::schema("/mesh/file", format!("{}: {e}", path.display())))?;
                parse_listing(&text)?
            }
            None => {
                if mb.vertices.is_empty() || mb.triangles.is_empty() {
                    return Err(Error::schema("/mesh", "missing vertices or triangles"));
                }
                let spec = BoundarySpec {
                    default_tag: mb.default_tag,
                    tagged: mb.edge_tags.iter().map(|e| ([e[0], e[1]], e[2] as u32)).collect(),
                    boxes: mb.tag_boxes.iter().map(|b| (b.bounds, b.tag)).collect(),
                    dirichlet_tags: mb.dirichlet_tags.clone(),
                    body_id: mb.bodies.clone(),
                };
                build_mesh(mb.vertices.clone(), mb.triangles.clone(), &spec)?
            }
        };
        if !(1..=2).contains(&mb.order) {
            return Err(Error::schema("/mesh/order", "order must be 1 or 2"));
        }
        let ne = mesh.n_elements();
        let m = &self.materials;
        let material = MaterialField {
            model: m.model,
            lambda: m.lambda.expand(ne, "/materials/lambda")?,
            mu: m.mu.expand(ne, "/materials/mu")?,
            density: m.density.expand(ne, "/materials/density")?,
        };
        let space = FeSpace::new(&mesh, mb.order)?;
        let shape = match &mb.shape {
            Some(s) if s.len() != mesh.n_vertices() => {
                return Err(Error::schema(
                    "/mesh/shape",
                    format!("{} positions for {} vertices", s.len(), mesh.n_vertices()),
                ))
            }
            Some(s) => s.iter().flat_map(|p| [p[0], p[1]]).collect(),
            None => mesh.rest_shape(),
        };
        let ic = |f: &Option<IcField>| f.clone().unwrap_or_else(|| IcField::zeros(&space, IcMode::PerNode));
        let (u0, v0) = (ic(&self.initial_conditions.u0), ic(&self.initial_conditions.v0));
        let contact = self.contact.as_ref().map(|c| ContactSettings {
            dhat: c.dhat,
            kappa: c.kappa,
            eta: c.eta,
            friction: FrictionTable {
                entries: c
                    .friction
                    .iter()
                    .map(|e| (e.bodies[0].min(e.bodies[1]), e.bodies[0].max(e.bodies[1]), e.coefficient))
                    .collect(),
            },
        });
        self.optimization.validate()?;
        let scene = Scene {
            mesh,
            space,
            order: mb.order,
            shape,
            material,
            damping: m.damping,
            gravity: self.gravity,
            contact,
            dirichlet: self.boundary_conditions.dirichlet.clone(),
            neumann: self.boundary_conditions.neumann.clone(),
            fixed_bodies: self.bodies.fixed.clone(),
            time: self.time,
            u0,
            v0,
            objective: self.objective.clone(),
            optimization: self.optimization.clone(),
            solver: self.solver,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Self-contained description of a scene (mesh inline, defaults explicit).
    pub fn from_scene(scene: &Scene) -> Self {
        let mesh = &scene.mesh;
        let edge_tags = mesh
            .boundary_edges
            .iter()
            .filter(|e| e.tag != 0)
            .map(|e| [e.v[0], e.v[1], e.tag as usize])
            .collect();
        let bodies = mesh.body_id.iter().any(|b| *b != 0).then(|| mesh.body_id.clone());
        let template = mesh.rest_shape();
        let shape = (scene.shape != template).then(|| scene.shape.chunks(2).map(|c| [c[0], c[1]]).collect());
        SceneFile {
            mesh: MeshBlock {
                file: None,
                vertices: mesh.rest_vertices.clone(),
                triangles: mesh.triangles.clone(),
                bodies,
                edge_tags,
                tag_boxes: Vec::new(),
                default_tag: 0,
                dirichlet_tags: mesh.dirichlet_tags.clone(),
                order: scene.order,
                shape,
            },
            bodies: BodiesBlock {
                fixed: scene.fixed_bodies.clone(),
            },
            materials: MaterialsBlock {
                model: scene.material.model,
                lambda: PerElement::compress(&scene.material.lambda),
                mu: PerElement::compress(&scene.material.mu),
                density: PerElement::compress(&scene.material.density),
                damping: scene.damping,
            },
            gravity: scene.gravity,
            contact: scene.contact.as_ref().map(|c| ContactBlock {
                dhat: c.dhat,
                kappa: c.kappa,
                eta: c.eta,
                friction: c
                    .friction
                    .entries
                    .iter()
                    .map(|&(a, b, g)| FrictionEntry {
                        bodies: [a, b],
                        coefficient: g,
                    })
                    .collect(),
            }),
            boundary_conditions: BoundaryBlock {
                dirichlet: scene.dirichlet.clone(),
                neumann: scene.neumann.clone(),
            },
            time: scene.time,
            initial_conditions: InitialBlock {
                u0: Some(scene.u0.clone()),
                v0: Some(scene.v0.clone()),
            },
            objective: scene.objective.clone(),
            optimization: scene.optimization.clone(),
            solver: scene.solver,
        }
    }
}

pub fn parse_scene_str(text: &str, base: Option<&Path>) -> Result<Scene> {
    SceneFile::from_json(text)?.to_scene(base)
}

/// Reads, schema-checks and validates a scene file.
pub fn parse_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::schema("/", format!("{}: {e}", path.display())))?;
    parse_scene_str(&text, path.parent())
}

pub fn scene_to_json(scene: &Scene) -> Result<String> {
    SceneFile::from_scene(scene).to_json()
}

pub fn write_scene(path: impl AsRef<Path>, scene: &Scene) -> Result<()> {
    fs::write(path, scene_to_json(scene)? + "\n")?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub n_dofs: usize,
    /// Stored states, `steps + 1` for a transient run.
    pub n_states: usize,
    pub dt: f64,
    pub bdf_order: usize,
    pub fields: Vec<String>,
}

pub fn write_trajectory<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    let n_dofs = traj.u.first().map_or(0, |u| u.len());
    if traj.u.len() != traj.v.len() || traj.u.iter().chain(&traj.v).any(|x| x.len() != n_dofs) {
        return Err(Error::Dimension("ragged trajectory".into()));
    }
    let header = TrajectoryHeader {
        n_dofs,
        n_states: traj.u.len(),
        dt: traj.dt,
        bdf_order: traj.bdf_order,
        fields: vec!["u".into(), "v".into()],
    };
    let h = serde_json::to_vec(&header)?;
    w.write_all(TRAJECTORY_MAGIC)?;
    w.write_all(&TRAJECTORY_VERSION.to_le_bytes())?;
    w.write_all(&(h.len() as u64).to_le_bytes())?;
    w.write_all(&h)?;
    for (u, v) in traj.u.iter().zip(&traj.v) {
        for x in u.iter().chain(v) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a trajectory; only `dt`, `bdf_order`, `u` and `v` are restored.
pub fn read_trajectory<R: Read>(mut r: R) -> Result<(TrajectoryHeader, Trajectory)> {
    let bad = |m: &str| Error::schema("/trajectory", m.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TRAJECTORY_MAGIC {
        return Err(bad("not a trajectory file"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != TRAJECTORY_VERSION {
        return Err(bad("unsupported trajectory version"));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let hlen = u64::from_le_bytes(b8) as usize;
    let mut h = vec![0u8; hlen];
    r.read_exact(&mut h)?;
    let header: TrajectoryHeader = serde_json::from_slice(&h)?;
    let mut read_vec = |n: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; 8 * n];
        r.read_exact(&mut buf)?;
        Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let mut traj = Trajectory {
        dt: header.dt,
        bdf_order: header.bdf_order,
        ..Default::default()
    };
    for _ in 0..header.n_states {
        traj.u.push(read_vec(header.n_dofs)?);
        traj.v.push(read_vec(header.n_dofs)?);
    }
    Ok((header, traj))
}

/// Long-format CSV: one row per state and node.
pub fn trajectory_csv<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["step", "time", "node", "ux", "uy", "vx", "vy"])
        .map_err(csv_err)?;
    for (s, (u, v)) in traj.u.iter().zip(&traj.v).enumerate() {
        let t = s as f64 * traj.dt;
        for n in 0..u.len() / 2 {
            wr.write_record(&[
                s.to_string(),
                t.to_string(),
                n.to_string(),
                u[2 * n].to_string(),
                u[2 * n + 1].to_string(),
                v[2 * n].to_string(),
                v[2 * n + 1].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn trajectory_json(traj: &Trajectory) -> Value {
    serde_json::json!({
        "dt": traj.dt,
        "bdf_order": traj.bdf_order,
        "u": traj.u,
        "v": traj.v,
    })
}

/// Gradient keyed by block name.
pub fn gradient_json(g: &ParamVector) -> Value {
    let map: BTreeMap<&str, &[f64]> = Block::ALL.iter().map(|&b| (b.name(), g.block(b))).collect();
    serde_json::to_value(map).expect("plain arrays serialize")
}

pub fn gradient_from_json(v: &Value, template: &ParamVector) -> Result<ParamVector> {
    let mut g = template.zeros_like();
    for b in Block::ALL {
        let vals: Vec<f64> = match v.get(b.name()) {
            Some(x) => serde_json::from_value(x.clone()).map_err(|e| Error::schema(format!("/{b}"), e.to_string()))?,
            None => return Err(Error::schema(format!("/{b}"), "missing block")),
        };
        if vals.len() != g.block(b).len() {
            return Err(Error::Dimension(format!("{b}: {} entries, expected {}", vals.len(), g.block(b).len())));
        }
        *g.block_mut(b) = vals;
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    pub time: f64,
    pub newton_iterations: usize,
    pub residual: f64,
    /// `None` when the scene has no contact.
    pub min_distance: Option<f64>,
    pub min_det_f: f64,
    pub active_pairs: usize,
}

impl StepSummary {
    pub fn new(s: &StepStats, dt: f64) -> Self {
        Self {
            step: s.step,
            time: s.step as f64 * dt,
            newton_iterations: s.newton_iterations,
            residual: s.residual,
            min_distance: s.min_distance.is_finite().then_some(s.min_distance),
            min_det_f: s.min_det_f,
            active_pairs: s.active_pairs,
        }
    }
}

/// Summary of a forward (and optionally adjoint) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub steps: Vec<StepSummary>,
    pub objective: f64,
    /// Per-step contribution of the state terms (transient runs).
    pub objective_per_step: Vec<f64>,
    pub forward_time: f64,
    pub adjoint_time: Option<f64>,
    /// `adjoint_time / forward_time`.
    pub overhead: Option<f64>,
}

impl RunReport {
    pub fn min_distance(&self) -> Option<f64> {
        self.steps.iter().filter_map(|s| s.min_distance).reduce(f64::min)
    }

    pub fn min_det_f(&self) -> f64 {
        self.steps.iter().map(|s| s.min_det_f).fold(f64::INFINITY, f64::min)
    }
}

/// Output of [`run_forward`].
pub struct RunOutput {
    pub report: RunReport,
    /// A static run stores one state with zero velocity.
    pub trajectory: Trajectory,
    pub gradient: Option<ParamVector>,
}

/// Forward solve (and adjoint gradient when asked) with per-step summaries.
pub fn run_forward(scene: &Scene, with_gradient: bool) -> Result<RunOutput> {
    let sys = System::new(scene)?;
    let (traj, gradient, value, forward_time, adjoint_time) = if scene.is_transient() {
        if with_gradient {
            let ev = crate::adjoint::evaluate(scene)?;
            let traj = ev.trajectory.expect("transient evaluation stores the trajectory");
            (traj, Some(ev.gradient), ev.value, ev.forward_time, Some(ev.adjoint_time))
        } else {
            let traj = sys.simulate()?;
            let value = trajectory_objective(&sys, &traj, &scene.objective)?;
            let t = traj.wall_time;
            (traj, None, value, t, None)
        }
    } else {
        let t0 = Instant::now();
        let (u, stats) = sys.static_solve()?;
        let forward_time = t0.elapsed().as_secs_f64();
        let (value, gradient, adjoint_time) = if with_gradient {
            let t1 = Instant::now();
            let (value, g, _) = static_adjoint(&sys, &u, &scene.objective)?;
            (value, Some(g), Some(t1.elapsed().as_secs_f64()))
        } else {
            let st = scene.objective.state_partial(&sys.geo, scene, &u, 0, None)?;
            (st.value + scene.objective.param_partial(&sys.geo, scene)?.value, None, None)
        };
        let v = vec![0.0; u.len()];
        let traj = Trajectory {
            dt: 0.0,
            bdf_order: 0,
            u: vec![u],
            v: vec![v],
            active_sets: Vec::new(),
            stats: vec![stats],
            wall_time: forward_time,
        };
        (traj, gradient, value, forward_time, adjoint_time)
    };
    let timing = scene.is_transient().then(|| (traj.steps(), traj.dt));
    let mut objective_per_step = Vec::with_capacity(traj.u.len());
    for (i, u) in traj.u.iter().enumerate() {
        let active = scene.objective.terms.iter().any(|t| t.kind.is_state_term() && t.step_weight(i, timing) != 0.0);
        objective_per_step.push(if active {
            scene.objective.state_partial(&sys.geo, scene, u, i, timing)?.value
        } else {
            0.0
        });
    }
    let report = RunReport {
        steps: traj.stats.iter().map(|s| StepSummary::new(s, traj.dt)).collect(),
        objective: value,
        objective_per_step,
        forward_time,
        adjoint_time,
        overhead: adjoint_time.map(|a| a / forward_time),
    };
    Ok(RunOutput {
        report,
        trajectory: traj,
        gradient,
    })
}

/// Parameter checkpoint written by the optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub objective: f64,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
