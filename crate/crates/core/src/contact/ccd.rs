//! Conservative continuous collision detection for point-edge pairs.

use std::collections::HashMap;

use super::{point_segment_distance, ContactSurface};

/// Fraction of the initial distance a step may close.
pub const SEPARATION: f64 = 0.1;
const ADVANCE: f64 = 0.9;
const MAX_ITERS: usize = 100_000;

fn node(x: &[f64], n: usize) -> [f64; 2] {
    [x[2 * n], x[2 * n + 1]]
}

fn norm(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Additive CCD on one stencil: the largest `t ∈ [0, 1]` such that moving
/// `(p, a, b)` by `t·(dp, da, db)` keeps the distance above `SEPARATION · d0`.
pub fn pair_toi(p: [f64; 2], a: [f64; 2], b: [f64; 2], dp: [f64; 2], da: [f64; 2], db: [f64; 2]) -> f64 {
    let mean = [(dp[0] + da[0] + db[0]) / 3.0, (dp[1] + da[1] + db[1]) / 3.0];
    let sub = |v: [f64; 2]| [v[0] - mean[0], v[1] - mean[1]];
    let (dp, da, db) = (sub(dp), sub(da), sub(db));
    let lp = norm(dp) + norm(da).max(norm(db));
    if lp == 0.0 {
        return 1.0;
    }
    let (mut p, mut a, mut b) = (p, a, b);
    let d0 = point_segment_distance(p, a, b);
    if !(d0 > 0.0) {
        return 0.0;
    }
    let gap = SEPARATION * d0;
    let mut t = 0.0;
    let mut tl = (1.0 - SEPARATION) * d0 / lp;
    for _ in 0..MAX_ITERS {
        for (x, d) in [(&mut p, dp), (&mut a, da), (&mut b, db)] {
            x[0] += tl * d[0];
            x[1] += tl * d[1];
        }
        let d = point_segment_distance(p, a, b);
        if t > 0.0 && d < gap {
            break;
        }
        t += tl;
        if t > 1.0 {
            return 1.0;
        }
        tl = ADVANCE * d / lp;
    }
    t
}

/// Largest admissible fraction of the node displacement `dx` from the node
/// configuration `x` over all point-edge pairs whose swept boxes overlap.
pub fn max_step(surf: &ContactSurface, x: &[f64], dx: &[f64]) -> f64 {
    let cm = surf.cm;
    if cm.edges.is_empty() {
        return 1.0;
    }
    let swept = |nodes: &[usize]| {
        let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for &n in nodes {
            for s in [0.0, 1.0] {
                let q = [x[2 * n] + s * dx[2 * n], x[2 * n + 1] + s * dx[2 * n + 1]];
                bb[0] = bb[0].min(q[0]);
                bb[1] = bb[1].min(q[1]);
                bb[2] = bb[2].max(q[0]);
                bb[3] = bb[3].max(q[1]);
            }
        }
        bb
    };
    let edge_boxes: Vec<[f64; 4]> = cm.edges.iter().map(|e| swept(e)).collect();
    let point_boxes: Vec<[f64; 4]> = cm.vertices.iter().map(|&p| swept(&[p])).collect();
    let cell = edge_boxes
        .iter()
        .chain(&point_boxes)
        .map(|b| (b[2] - b[0]).max(b[3] - b[1]))
        .fold(0.0, f64::max)
        .max(1e-12);
    let key = |v: f64| (v / cell).floor() as i64;
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, b) in edge_boxes.iter().enumerate() {
        for i in key(b[0])..=key(b[2]) {
            for j in key(b[1])..=key(b[3]) {
                grid.entry((i, j)).or_default().push(k);
            }
        }
    }
    let mut t = 1.0f64;
    let mut cands = Vec::new();
    for (pi, &p) in cm.vertices.iter().enumerate() {
        let pb = point_boxes[pi];
        cands.clear();
        for i in key(pb[0])..=key(pb[2]) {
            for j in key(pb[1])..=key(pb[3]) {
                if let Some(v) = grid.get(&(i, j)) {
                    cands.extend_from_slice(v);
                }
            }
        }
        cands.sort_unstable();
        cands.dedup();
        for &k in &cands {
            let e = cm.edges[k];
            if !surf.admissible(p, e) {
                continue;
            }
            let eb = edge_boxes[k];
            if eb[0] > pb[2] || pb[0] > eb[2] || eb[1] > pb[3] || pb[1] > eb[3] {
                continue;
            }
            let toi = pair_toi(
                node(x, p),
                node(x, e[0]),
                node(x, e[1]),
                node(dx, p),
                node(dx, e[0]),
                node(dx, e[1]),
            );
            t = t.min(toi);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::FeSpace;
    use crate::mesh::{build_mesh, rectangle, BoundarySpec, Mesh};

    #[test]
    fn stationary_and_separating_pairs_allow_full_step() {
        let (p, a, b) = ([0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]);
        assert_eq!(pair_toi(p, a, b, [0.0; 2], [0.0; 2], [0.0; 2]), 1.0);
        assert_eq!(pair_toi(p, a, b, [0.0, 0.5], [0.0; 2], [0.0; 2]), 1.0);
        // common translation never changes the distance
        assert_eq!(pair_toi(p, a, b, [0.3, -5.0], [0.3, -5.0], [0.3, -5.0]), 1.0);
    }

    #[test]
    fn head_on_step_is_limited() {
        let g = 0.01;
        let t = pair_toi([0.0, g], [-1.0, 0.0], [1.0, 0.0], [0.0, -2.0 * g], [0.0; 2], [0.0; 2]);
        assert!((t - 0.45).abs() < 1e-12, "{t}");
        let d = point_segment_distance([0.0, g - t * 2.0 * g], [-1.0, 0.0], [1.0, 0.0]);
        assert!(d > 0.0);
    }

    #[test]
    fn toi_keeps_positive_distance_for_crossing_motions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut r = || 2.0 * rng.random::<f64>() - 1.0;
            let p = [r(), 0.2 + r().abs()];
            let a = [-1.0 + 0.1 * r(), 0.1 * r()];
            let b = [1.0 + 0.1 * r(), 0.1 * r()];
            let dp = [r(), -2.0 - r().abs()];
            let da = [0.1 * r(), 0.1 * r()];
            let db = [0.1 * r(), 0.1 * r()];
            let t = pair_toi(p, a, b, dp, da, db);
            assert!((0.0..=1.0).contains(&t));
            // the swept path up to t never touches the segment
            for k in 0..=100 {
                let s = t * k as f64 / 100.0;
                let m = |x: [f64; 2], d: [f64; 2]| [x[0] + s * d[0], x[1] + s * d[1]];
                assert!(point_segment_distance(m(p, dp), m(a, da), m(b, db)) > 0.0);
            }
        }
    }

    #[test]
    fn mesh_step_is_limited_only_by_approaching_bodies() {
        let (v1, t1) = rectangle(0.0, 0.0, 1.0, 1.0, 2, 2);
        let (v2, t2) = rectangle(0.0, 1.1, 1.0, 1.0, 2, 2);
        let a = build_mesh(v1, t1, &BoundarySpec::default()).unwrap();
        let b = build_mesh(v2, t2, &BoundarySpec::default()).unwrap();
        let m = Mesh::merge(&[a, b]).unwrap();
        let sp = FeSpace::new(&m, 1).unwrap();
        let surf = ContactSurface::new(&sp, vec![false; sp.n_nodes]);
        let x = sp.node_positions(&m.rest_shape());
        let mut dx = vec![0.0; x.len()];
        for (n, body) in sp.node_body.iter().enumerate() {
            if *body == 1 {
                dx[2 * n + 1] = -0.2;
            }
        }
        let t = max_step(&surf, &x, &dx);
        assert!(t > 0.0 && t < 0.5, "{t}");
        let xt: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + t * b).collect();
        assert!(surf.min_distance(&xt) > 0.0);
        for v in dx.iter_mut() {
            *v = -*v;
        }
        assert_eq!(max_step(&surf, &x, &dx), 1.0);
    }
}
