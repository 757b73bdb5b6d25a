//! Scene builders shared by the bundled scene files, tests and benchmarks.

use crate::contact::friction::FrictionTable;
use crate::error::Result;
use crate::materials::{DampingParams, MaterialModel};
use crate::mesh::{build_mesh, disk, rectangle, BoundarySpec, Mesh};
use crate::objectives::{ObjectiveSpec, Term, TermKind, TimeWeights};
use crate::scene::{ContactSettings, DirichletBc, IcField, IcMode, NeumannBc, Scene, TimeSettings, TimeTable};

fn rotate(p: [f64; 2], a: f64) -> [f64; 2] {
    let (s, c) = a.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// A fixed slab of `nx` cells whose top face is the line through `origin`
/// at angle `angle`.
fn slab(origin: [f64; 2], angle: f64, len: f64, depth: f64, nx: usize) -> Result<Mesh> {
    let (v, t) = rectangle(-0.5 * len, -depth, len, depth, nx, 1);
    let v = v
        .into_iter()
        .map(|p| {
            let r = rotate(p, angle);
            [r[0] + origin[0], r[1] + origin[1]]
        })
        .collect();
    build_mesh(v, t, &BoundarySpec::default())
}

/// Per-node field with a rigid value on the nodes of `body`.
fn rigid_on(scene: &Scene, body: usize, value: [f64; 2]) -> IcField {
    let mut f = IcField::zeros(&scene.space, IcMode::PerNode);
    for (n, &b) in scene.space.node_body.iter().enumerate() {
        if b == body {
            f.values[2 * n] = value[0];
            f.values[2 * n + 1] = value[1];
        }
    }
    f
}

/// Deformed node positions of `body` at the final state of a forward run, used as targets.
pub fn final_positions(scene: &Scene) -> Result<Vec<f64>> {
    let traj = crate::forward::simulate(scene)?;
    let rest = scene.rest_nodes();
    let u = traj.u.last().expect("at least one state");
    Ok(rest.iter().zip(u).map(|(a, b)| a + b).collect())
}

/// Elastic disk thrown onto a fixed ramp with contact, friction and damping.
/// `rings = 8` gives 217 disk vertices.
pub fn master(rings: usize, bdf_order: usize, steps: usize) -> Result<Scene> {
    let angle = -0.3;
    let radius = 0.3;
    let gap = 0.004;
    let normal = rotate([0.0, 1.0], angle);
    let center = [normal[0] * (radius + gap), normal[1] * (radius + gap)];
    let (dv, dt) = disk(center, radius, rings);
    let d = build_mesh(dv, dt, &BoundarySpec::default())?;
    let r = slab([0.0, 0.0], angle, 2.4, 0.3, 4)?;
    let mesh = Mesh::merge(&[d, r])?;
    let mut s = Scene::new(mesh, 1, MaterialModel::NeoHookean, 2000.0, 1000.0, 1.0)?;
    s.fixed_bodies.insert(1);
    s.gravity = [0.0, -9.81];
    s.damping = DampingParams { alpha: 0.5, beta: 0.2 };
    s.contact = Some(ContactSettings {
        dhat: 0.01,
        kappa: 1e3,
        eta: 1e-4,
        friction: FrictionTable {
            entries: vec![(0, 1, 0.3)],
        },
    });
    s.time = Some(TimeSettings {
        dt: 0.01,
        steps,
        bdf_order,
    });
    let along = rotate([1.0, -0.1], angle);
    s.v0 = rigid_on(&s, 0, along);
    s.u0 = IcField::zeros(&s.space, IcMode::PerNode);
    let rest = s.rest_nodes();
    let target: Vec<f64> = rest
        .chunks(2)
        .map(|p| [p[0] + 0.02 + 0.01 * p[1], p[1] - 0.01])
        .flat_map(|p| p.into_iter())
        .collect();
    s.objective = ObjectiveSpec::new(vec![
        Term {
            kind: TermKind::TargetDeformation {
                targets: vec![target],
                weights: None,
                boundary: false,
                tag: None,
                body: Some(0),
            },
            weight: 10.0,
            time: TimeWeights::Uniform,
        },
        Term {
            kind: TermKind::CenterOfMass {
                targets: vec![[0.1, 0.2]],
                body: Some(0),
            },
            weight: 1.0,
            time: TimeWeights::Terminal,
        },
    ]);
    Ok(s)
}

/// A square dropped onto a fixed block.
pub fn drop(bdf_order: usize) -> Result<Scene> {
    let (v1, t1) = rectangle(-1.0, -0.4, 2.0, 0.4, 4, 1);
    let (v2, t2) = rectangle(-0.25, 0.01, 0.5, 0.5, 3, 3);
    let floor = build_mesh(v1, t1, &BoundarySpec::default())?;
    let boxm = build_mesh(v2, t2, &BoundarySpec::default())?;
    let mesh = Mesh::merge(&[floor, boxm])?;
    let mut s = Scene::new(mesh, 1, MaterialModel::NeoHookean, 400.0, 200.0, 1.0)?;
    s.fixed_bodies.insert(0);
    s.gravity = [0.0, -9.81];
    s.damping = DampingParams { alpha: 0.2, beta: 0.0 };
    s.contact = Some(ContactSettings {
        dhat: 0.005,
        kappa: 500.0,
        eta: 1e-4,
        friction: FrictionTable {
            entries: vec![(0, 1, 0.4)],
        },
    });
    s.time = Some(TimeSettings {
        dt: 0.01,
        steps: 12,
        bdf_order,
    });
    s.v0 = rigid_on(&s, 1, [0.3, -0.5]);
    s.objective = ObjectiveSpec::new(vec![Term {
        kind: TermKind::CenterOfMass {
            targets: vec![[0.08, 0.24]],
            body: Some(1),
        },
        weight: 1.0,
        time: TimeWeights::Terminal,
    }]);
    Ok(s)
}

/// Clamped block loaded by a ramped traction; target deformations are the
/// states of the same model at `(lambda, mu)`.
pub fn material_recovery(lambda: f64, mu: f64) -> Result<Scene> {
    let (v, t) = rectangle(0.0, 0.0, 1.0, 0.5, 4, 2);
    let spec = BoundarySpec {
        boxes: vec![([-1e-9, -1e-9, 1e-9, 0.5 + 1e-9], 1), ([1.0 - 1e-9, -1e-9, 1.0 + 1e-9, 0.5 + 1e-9], 2)],
        ..Default::default()
    };
    let mesh = build_mesh(v, t, &spec)?;
    let mut s = Scene::new(mesh, 1, MaterialModel::NeoHookean, lambda, mu, 1.0)?;
    s.dirichlet.push(DirichletBc {
        tag: 1,
        components: [true, true],
        offset: [0.0; 2],
        gradient: [[0.0; 2]; 2],
        table: TimeTable::default(),
    });
    s.neumann.push(NeumannBc {
        tag: 2,
        traction: [2.0, -8.0],
        table: TimeTable(vec![[0.0, 0.0], [0.05, 1.0], [1.0, 1.0]]),
    });
    s.time = Some(TimeSettings {
        dt: 0.01,
        steps: 10,
        bdf_order: 2,
    });
    Ok(s)
}

/// Replaces the objective by trajectory matching against `reference`
/// (targets are its node positions at every step).
pub fn match_trajectory(scene: &mut Scene, reference: &Scene, body: Option<usize>) -> Result<()> {
    let traj = crate::forward::simulate(reference)?;
    let rest = reference.rest_nodes();
    let targets = traj
        .u
        .iter()
        .map(|u| rest.iter().zip(u).map(|(a, b)| a + b).collect())
        .collect();
    scene.objective = ObjectiveSpec::new(vec![Term::new(TermKind::TargetDeformation {
        targets,
        weights: None,
        boundary: false,
        tag: None,
        body,
    })]);
    Ok(())
}

/// A puck sliding on a fixed floor with friction coefficient `gamma`.
pub fn sliding_puck(gamma: f64) -> Result<Scene> {
    let (v1, t1) = rectangle(-0.5, -0.2, 3.0, 0.2, 6, 1);
    // starts inside the barrier range, so contact and friction act from step 1
    let (v2, t2) = rectangle(0.0, 0.005, 0.3, 0.15, 2, 1);
    let floor = build_mesh(v1, t1, &BoundarySpec::default())?;
    let puck = build_mesh(v2, t2, &BoundarySpec::default())?;
    let mesh = Mesh::merge(&[floor, puck])?;
    let mut s = Scene::new(mesh, 1, MaterialModel::NeoHookean, 4000.0, 2000.0, 1.0)?;
    s.fixed_bodies.insert(0);
    s.gravity = [0.0, -9.81];
    s.contact = Some(ContactSettings {
        dhat: 0.01,
        kappa: 50.0,
        eta: 1e-4,
        friction: FrictionTable {
            entries: vec![(0, 1, gamma)],
        },
    });
    s.time = Some(TimeSettings {
        dt: 0.01,
        steps: 15,
        bdf_order: 1,
    });
    s.v0 = rigid_on(&s, 1, [1.5, 0.0]);
    Ok(s)
}

/// A free body thrown with a rigid initial velocity (one 2-vector per body).
pub fn thrown_piece(v0: [f64; 2]) -> Result<Scene> {
    let (v, t) = rectangle(0.0, 0.0, 0.4, 0.2, 4, 2);
    let mesh = build_mesh(v, t, &BoundarySpec::default())?;
    let mut s = Scene::new(mesh, 1, MaterialModel::NeoHookean, 200.0, 100.0, 1.0)?;
    s.gravity = [0.0, -9.81];
    s.damping = DampingParams { alpha: 0.1, beta: 0.0 };
    s.time = Some(TimeSettings {
        dt: 0.02,
        steps: 10,
        bdf_order: 2,
    });
    s.v0 = IcField {
        mode: IcMode::PerBody,
        values: v0.to_vec(),
    };
    Ok(s)
}

/// Static cantilever with an end traction and a stress objective.
pub fn cantilever(order: usize) -> Result<Scene> {
    let (v, t) = rectangle(0.0, 0.0, 2.0, 0.5, 8, 2);
    let spec = BoundarySpec {
        boxes: vec![([-1e-9, -1e-9, 1e-9, 0.5 + 1e-9], 1), ([2.0 - 1e-9, -1e-9, 2.0 + 1e-9, 0.5 + 1e-9], 2)],
        ..Default::default()
    };
    let mesh = build_mesh(v, t, &spec)?;
    let mut s = Scene::new(mesh, order, MaterialModel::NeoHookean, 100.0, 50.0, 1.0)?;
    s.dirichlet.push(DirichletBc {
        tag: 1,
        components: [true, true],
        offset: [0.0; 2],
        gradient: [[0.0; 2]; 2],
        table: TimeTable::default(),
    });
    s.neumann.push(NeumannBc {
        tag: 2,
        traction: [0.0, -2.0],
        table: TimeTable::default(),
    });
    s.objective = ObjectiveSpec::new(vec![
        Term::new(TermKind::StressNorm { p: 4.0, body: None }),
        Term {
            kind: TermKind::VolumePenalty { target: 0.9, body: None },
            weight: 10.0,
            time: TimeWeights::Uniform,
        },
        Term {
            kind: TermKind::BoundarySmoothing { p: 2.0 },
            weight: 1e-3,
            time: TimeWeights::Uniform,
        },
    ]);
    Ok(s)
}
