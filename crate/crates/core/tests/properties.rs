use proptest::prelude::*;

use diffsim2d::fem::Geometry;
use diffsim2d::forward::Trajectory;
use diffsim2d::io::{parse_scene_str, read_trajectory, scene_to_json, write_trajectory};
use diffsim2d::materials::MaterialModel;
use diffsim2d::mesh::{build_mesh, rectangle, BoundarySpec, Mesh};
use diffsim2d::objectives::{eval_term, TermKind};
use diffsim2d::optimize::{project_bounds, Bound, OptSettings};
use diffsim2d::presets;
use diffsim2d::scene::{Block, IcField, IcMode, ParamVector, Scene};

fn two_bodies(order: usize) -> Scene {
    let (v, t) = rectangle(0.0, 0.0, 1.0, 0.5, 2, 1);
    let a = build_mesh(v, t, &BoundarySpec::default()).unwrap();
    let (v, t) = rectangle(0.0, 1.0, 0.5, 0.5, 1, 1);
    let b = build_mesh(v, t, &BoundarySpec::default()).unwrap();
    Scene::new(Mesh::merge(&[a, b]).unwrap(), order, MaterialModel::NeoHookean, 2.0, 1.0, 1.0).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ic_pull_back_is_transpose(order in 1usize..=2, v in prop::collection::vec(-5.0f64..5.0, 4), seed in any::<u64>()) {
        let s = two_bodies(order);
        let ic = IcField { mode: IcMode::PerBody, values: v };
        let n = s.space.n_dofs();
        let g: Vec<f64> = (0..n).map(|k| ((seed.wrapping_mul(k as u64 + 1) % 1000) as f64) / 500.0 - 1.0).collect();
        let lhs = dot(&ic.expand(&s.space), &g);
        let rhs = dot(&ic.values, &ic.pull_back(&s.space, &g));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn projection_is_idempotent_and_feasible(
        lam in prop::collection::vec(-10.0f64..10.0, 1..8),
        gamma in prop::collection::vec(-1.0f64..1.0, 1..4),
        lo in -2.0f64..0.0,
        width in 0.1f64..5.0,
    ) {
        let mut settings = OptSettings::default();
        settings.bounds.insert(Block::Lambda, Bound { lower: lo, upper: lo + width });
        let mut q = ParamVector { lambda: lam, gamma, ..Default::default() };
        project_bounds(&mut q, &settings);
        let once = q.clone();
        let changed = project_bounds(&mut q, &settings);
        prop_assert!(changed.is_empty());
        prop_assert_eq!(&q, &once);
        prop_assert!(q.lambda.iter().all(|v| *v >= lo && *v <= lo + width));
        prop_assert!(q.gamma.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn flatten_round_trip(lam in prop::collection::vec(-10.0f64..10.0, 3), v0 in prop::collection::vec(-1.0f64..1.0, 4)) {
        let q = ParamVector { lambda: lam, v0, mu: vec![1.0; 3], ..Default::default() };
        let blocks = [Block::V0, Block::Lambda];
        let x = q.flatten(&blocks);
        prop_assert_eq!(x.len(), q.flat_len(&blocks));
        let mut r = q.zeros_like();
        r.mu = q.mu.clone();
        r.set_flat(&blocks, &x);
        prop_assert_eq!(r, q);
    }

    #[test]
    fn target_term_is_linear_in_weights(a in 0.01f64..10.0, seed in any::<u64>()) {
        let s = two_bodies(1);
        let geo = Geometry::new(&s.mesh, &s.space, &s.shape).unwrap();
        let n = s.space.n_dofs();
        let u: Vec<f64> = (0..n).map(|k| ((seed >> (k % 48)) % 97) as f64 * 1e-4).collect();
        let w: Vec<f64> = (0..s.space.n_nodes).map(|k| 1.0 + (k % 3) as f64).collect();
        let kind = |w: Vec<f64>| TermKind::TargetDeformation {
            targets: vec![s.rest_nodes()],
            weights: Some(w),
            boundary: false,
            tag: None,
            body: None,
        };
        let j1 = eval_term(&kind(w.clone()), &geo, &s, &u, 0).unwrap().value;
        let j2 = eval_term(&kind(w.iter().map(|x| a * x).collect()), &geo, &s, &u, 0).unwrap().value;
        prop_assert!((j2 - a * j1).abs() <= 1e-12 * (1.0 + j2.abs()));
        prop_assert!(j1 >= 0.0);
    }

    #[test]
    fn trajectory_binary_round_trip(n in 1usize..20, states in 1usize..6, dt in 1e-4f64..1.0, bdf in 1usize..=2, seed in any::<u64>()) {
        let val = |i: usize, k: usize| f64::from_bits(seed ^ ((i * 131 + k) as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)).clamp(-1e300, 1e300);
        let traj = Trajectory {
            dt,
            bdf_order: bdf,
            u: (0..states).map(|i| (0..n).map(|k| val(i, k)).collect()).collect(),
            v: (0..states).map(|i| (0..n).map(|k| val(i + 100, k)).collect()).collect(),
            ..Default::default()
        };
        let traj = Trajectory {
            u: traj.u.iter().map(|s| s.iter().map(|x| if x.is_nan() { 0.0 } else { *x }).collect()).collect(),
            v: traj.v.iter().map(|s| s.iter().map(|x| if x.is_nan() { 0.0 } else { *x }).collect()).collect(),
            ..traj
        };
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj).unwrap();
        let (h, back) = read_trajectory(buf.as_slice()).unwrap();
        prop_assert_eq!(h.n_dofs, n);
        prop_assert_eq!(h.n_states, states);
        prop_assert_eq!(back.dt.to_bits(), dt.to_bits());
        prop_assert_eq!(back.u, traj.u);
        prop_assert_eq!(back.v, traj.v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scene_json_round_trip_is_exact(lam in 1.0f64..1e4, mu in 1.0f64..1e4, gx in -20.0f64..20.0, vx in -3.0f64..3.0) {
        let mut s = presets::drop(1).unwrap();
        s.material.lambda.iter_mut().for_each(|x| *x = lam);
        s.material.mu.iter_mut().for_each(|x| *x = mu);
        s.gravity[0] = gx;
        s.v0.values[0] = vx;
        let back = parse_scene_str(&scene_to_json(&s).unwrap(), None).unwrap();
        let (a, b) = (s.params(), back.params());
        for blk in Block::ALL {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a.block(blk)), bits(b.block(blk)));
        }
        prop_assert_eq!(back.gravity[0].to_bits(), gx.to_bits());
        prop_assert_eq!(&back.mesh.triangles, &s.mesh.triangles);
    }
}
