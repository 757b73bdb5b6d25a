//! Central-difference oracle for parameter gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{evaluate, objective_value};
use crate::error::{Error, Result};
use crate::scene::{Block, ParamVector, Scene};

/// Step factors tried by the gradient check, relative to the block scale.
pub const EPS_SWEEP: [f64; 3] = [1e-4, 1e-5, 1e-6];
pub const TOLERANCE: f64 = 1e-5;

/// Characteristic magnitude used to scale finite-difference steps.
pub fn block_scale(scene: &Scene, block: Block) -> f64 {
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt();
    let q = scene.params();
    let s = match block {
        Block::Shape => scene.mesh.bbox_diagonal(),
        Block::Lambda | Block::Mu | Block::Damping => rms(q.block(block)),
        Block::Gamma => 1.0,
        Block::U0 => scene.mesh.bbox_diagonal(),
        Block::V0 => {
            let v = scene.v0.expand(&scene.space);
            let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let span = scene
                .time
                .map_or(0.0, |t| scene.mesh.bbox_diagonal() / (t.dt * t.steps.max(1) as f64));
            vmax.max(span)
        }
    };
    if s.is_finite() && s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Default step: shape `1e-6·bbox`, material `1e-4·value`, friction `1e-5`,
/// initial conditions `1e-6·scale`.
pub fn default_eps(scene: &Scene, block: Block) -> f64 {
    let f = match block {
        Block::Shape | Block::U0 | Block::V0 => 1e-6,
        Block::Lambda | Block::Mu | Block::Damping => 1e-4,
        Block::Gamma => 1e-5,
    };
    f * block_scale(scene, block)
}

/// `(J(q + εθ) − J(q − εθ)) / 2ε` with `θ` on one block. When `q − εθ` would
/// leave the admissible range of a non-negative block (friction or damping
/// at zero), the second-order one-sided `(−3J(q) + 4J(q + εθ) − J(q + 2εθ)) / 2ε`
/// is used instead.
pub fn fd_directional(scene: &Scene, block: Block, direction: &[f64], eps: f64) -> Result<f64> {
    let q = scene.params();
    if direction.len() != q.block(block).len() {
        return Err(Error::Dimension(format!(
            "direction has {} entries, {block} block has {}",
            direction.len(),
            q.block(block).len()
        )));
    }
    if direction.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let value = |s: f64| -> Result<f64> {
        let qp = perturbed(&q, block, direction, s * eps);
        let sc = scene.with_params(&qp)?;
        objective_value(&sc).map_err(|e| Error::ForwardSolveFailure(format!("{block} {s:+}ε: {e}")))
    };
    let nonneg = matches!(block, Block::Gamma | Block::Damping);
    let minus_ok = !nonneg || q.block(block).iter().zip(direction).all(|(x, d)| x - eps * d >= 0.0);
    if minus_ok {
        let (jp, jm) = rayon::join(|| value(1.0), || value(-1.0));
        return Ok((jp? - jm?) / (2.0 * eps));
    }
    let plus_ok = q.block(block).iter().zip(direction).all(|(x, d)| x + 2.0 * eps * d >= 0.0);
    if !plus_ok {
        return Err(Error::ForwardSolveFailure(format!(
            "{block}: direction leaves the admissible range on both sides"
        )));
    }
    let (j0, (j1, j2)) = rayon::join(|| value(0.0), || rayon::join(|| value(1.0), || value(2.0)));
    Ok((-3.0 * j0? + 4.0 * j1? - j2?) / (2.0 * eps))
}

/// Random unit direction (uniform entries, normalized) on one block.
pub fn random_direction(scene: &Scene, block: Block, rng: &mut impl Rng) -> Vec<f64> {
    let n = scene.params().block(block).len();
    let d: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        d.iter().map(|x| x / norm).collect()
    } else {
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub block: Block,
    pub direction: usize,
    pub adjoint: f64,
    pub fd: f64,
    pub eps: f64,
    pub rel_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub value: f64,
    pub rows: Vec<CheckRow>,
    pub forward_time: f64,
    pub adjoint_time: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

pub fn rel_error(adjoint: f64, fd: f64) -> f64 {
    (fd - adjoint).abs() / fd.abs().max(1e-12)
}

/// Compares `∇J·θ` with central differences over `directions` random
/// directions per block. Each direction keeps the best step of the sweep
/// (or uses `eps` when given).
pub fn grad_check(scene: &Scene, blocks: &[Block], directions: usize, seed: u64, eps: Option<f64>) -> Result<GradCheck> {
    let ev = evaluate(scene)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    for &b in blocks {
        if scene.params().block(b).is_empty() {
            continue;
        }
        for k in 0..directions {
            let dir = random_direction(scene, b, &mut rng);
            let adj: f64 = ev.gradient.block(b).iter().zip(&dir).map(|(g, d)| g * d).sum();
            let steps: Vec<f64> = match eps {
                Some(e) => vec![e],
                None => EPS_SWEEP.iter().map(|f| f * block_scale(scene, b)).collect(),
            };
            jobs.push((b, k, dir, adj, steps));
        }
    }
    let rows: Vec<Result<CheckRow>> = jobs
        .into_par_iter()
        .map(|(block, direction, dir, adjoint, steps)| {
            let mut best: Option<CheckRow> = None;
            for e in steps {
                let fd = fd_directional(scene, block, &dir, e)?;
                let row = CheckRow {
                    block,
                    direction,
                    adjoint,
                    fd,
                    eps: e,
                    rel_error: rel_error(adjoint, fd),
                    pass: false,
                };
                if best.as_ref().is_none_or(|b| row.rel_error < b.rel_error) {
                    best = Some(row);
                }
            }
            let mut r = best.expect("at least one step");
            r.pass = r.rel_error < TOLERANCE;
            Ok(r)
        })
        .collect();
    Ok(GradCheck {
        value: ev.value,
        rows: rows.into_iter().collect::<Result<_>>()?,
        forward_time: ev.forward_time,
        adjoint_time: ev.adjoint_time,
    })
}

/// Perturbs a parameter vector along a block direction (helper for tests).
pub fn perturbed(q: &ParamVector, block: Block, dir: &[f64], eps: f64) -> ParamVector {
    let mut out = q.clone();
    for (x, d) in out.block_mut(block).iter_mut().zip(dir) {
        *x += eps * d;
    }
    out
}
