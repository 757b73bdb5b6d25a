//! Projected L-BFGS with backtracking, reset fallback and rest-mesh guards.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::scaled_jacobian_quality;
use crate::scene::{Block, ParamVector, Scene};

const ARMIJO: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_HALVINGS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    #[serde(default = "neg_inf", with = "opt_inf")]
    pub lower: f64,
    #[serde(default = "pos_inf", with = "opt_inf")]
    pub upper: f64,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

/// Infinite bounds are written as `null`.
mod opt_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

impl Bound {
    pub const FREE: Bound = Bound {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub fn at_least(lower: f64) -> Self {
        Bound {
            lower,
            upper: f64::INFINITY,
        }
    }

    fn fix_nan(self) -> Self {
        Bound {
            lower: if self.lower.is_nan() { f64::NEG_INFINITY } else { self.lower },
            upper: if self.upper.is_nan() { f64::INFINITY } else { self.upper },
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lower).min(self.upper)
    }
}

fn default_bounds() -> BTreeMap<Block, Bound> {
    BTreeMap::from([
        (Block::Lambda, Bound::at_least(1e-8)),
        (Block::Mu, Bound::at_least(1e-8)),
        (Block::Gamma, Bound::at_least(0.0)),
        (Block::Damping, Bound::at_least(0.0)),
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptSettings {
    pub blocks: Vec<Block>,
    pub bounds: BTreeMap<Block, Bound>,
    pub max_iterations: usize,
    pub memory: usize,
    /// Relative to the initial projected gradient norm.
    pub grad_tol: f64,
    pub rel_decrease_tol: f64,
    pub stall_iterations: usize,
    pub min_quality: f64,
    /// Divide each block by its characteristic magnitude.
    pub block_scaling: bool,
    /// Explicit block magnitudes overriding the automatic ones.
    pub scales: BTreeMap<Block, f64>,
    /// Keep boundary vertices of the rest mesh fixed during shape updates.
    pub fix_boundary: bool,
    /// Keep vertices on boundary edges with these tags fixed.
    pub fixed_tags: Vec<u32>,
    /// Blocks optimized as one scalar shift shared by all their entries
    /// (a homogeneous material, for instance).
    pub tied: Vec<Block>,
}

impl Default for OptSettings {
    fn default() -> Self {
        Self {
            blocks: Vec::new(),
            bounds: default_bounds(),
            max_iterations: 50,
            memory: 6,
            grad_tol: 1e-6,
            rel_decrease_tol: 1e-10,
            stall_iterations: 3,
            min_quality: 1e-3,
            block_scaling: true,
            scales: BTreeMap::new(),
            fix_boundary: false,
            fixed_tags: Vec::new(),
            tied: Vec::new(),
        }
    }
}

impl OptSettings {
    pub fn bound(&self, b: Block) -> Bound {
        self.bounds.get(&b).copied().unwrap_or(Bound::FREE).fix_nan()
    }

    pub fn validate(&self) -> Result<()> {
        let p = |f: &str| format!("/optimization/{f}");
        if self.memory == 0 {
            return Err(Error::schema(p("memory"), "memory must be positive"));
        }
        for (b, bd) in &self.bounds {
            let bd = bd.fix_nan();
            if !(bd.lower <= bd.upper) {
                return Err(Error::schema(format!("/optimization/bounds/{b}"), "lower bound exceeds upper bound"));
            }
        }
        if !(self.grad_tol >= 0.0 && self.rel_decrease_tol >= 0.0) {
            return Err(Error::schema(p("grad_tol"), "tolerances must be non-negative"));
        }
        let mut seen = self.blocks.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.blocks.len() {
            return Err(Error::schema(p("blocks"), "duplicate block"));
        }
        Ok(())
    }
}

/// What the optimizer needs from a parameterized model.
pub trait Problem {
    /// Objective and full gradient; solver failures are reported as errors.
    fn evaluate(&mut self, q: &ParamVector) -> Result<(f64, ParamVector)>;

    /// Minimum element quality of the rest mesh at `q`.
    fn quality(&self, _q: &ParamVector) -> f64 {
        1.0
    }

    /// Largest `t` such that `q + t·d` keeps every rest element positively oriented.
    fn inversion_step(&self, _q: &ParamVector, _d: &ParamVector) -> f64 {
        f64::INFINITY
    }

    /// Shape entries that may move (`None` means all).
    fn shape_mask(&self) -> Option<Vec<bool>> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub min_quality: f64,
    pub wall_time: f64,
    pub reset: bool,
    /// Cosine between the search direction and the gradient (scaled space).
    pub cosine: f64,
    /// Blocks changed by the bound projection in this iteration.
    pub clamped: Vec<Block>,
    /// Blocks with at least one entry on a bound after the step.
    pub active_bounds: Vec<Block>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub entries: Vec<TraceEntry>,
    pub stop_reason: String,
}

impl OptTrace {
    /// Whether `b` sat on a bound in at least `n` consecutive accepted iterates.
    pub fn bound_active_for(&self, b: Block, n: usize) -> bool {
        let mut run = 0;
        for e in &self.entries {
            if e.active_bounds.contains(&b) {
                run += 1;
                if run >= n {
                    return true;
                }
            } else {
                run = 0;
            }
        }
        false
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "iteration",
            "objective",
            "grad_norm",
            "step",
            "min_quality",
            "wall_time",
            "reset",
            "cosine",
            "clamped",
            "active_bounds",
        ])
        .map_err(csv_err)?;
        let join = |v: &[Block]| v.iter().map(|b| b.name()).collect::<Vec<_>>().join(";");
        for e in &self.entries {
            wr.write_record([
                e.iteration.to_string(),
                format!("{:e}", e.objective),
                format!("{:e}", e.grad_norm),
                format!("{:e}", e.step),
                format!("{:e}", e.min_quality),
                format!("{:.6}", e.wall_time),
                e.reset.to_string(),
                format!("{:.15}", e.cosine),
                join(&e.clamped),
                join(&e.active_bounds),
            ])
            .map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Clamps bounded blocks; returns the blocks that changed.
pub fn project_bounds(q: &mut ParamVector, settings: &OptSettings) -> Vec<Block> {
    let mut changed = Vec::new();
    for b in Block::ALL {
        let bd = settings.bound(b);
        let mut hit = false;
        for v in q.block_mut(b).iter_mut() {
            let c = bd.clamp(*v);
            if c != *v {
                *v = c;
                hit = true;
            }
        }
        if hit {
            changed.push(b);
        }
    }
    changed
}

fn active_bounds(q: &ParamVector, settings: &OptSettings) -> Vec<Block> {
    settings
        .blocks
        .iter()
        .copied()
        .filter(|&b| {
            let bd = settings.bound(b);
            q.block(b).iter().any(|&v| v <= bd.lower || v >= bd.upper)
        })
        .collect()
}

/// Characteristic magnitude of each active block.
fn block_scales(q: &ParamVector, settings: &OptSettings) -> BTreeMap<Block, f64> {
    settings
        .blocks
        .iter()
        .map(|&b| {
            let s = if let Some(&s) = settings.scales.get(&b) {
                s
            } else if !settings.block_scaling {
                1.0
            } else if b == Block::Shape {
                let v = q.block(b);
                let ext = |k: usize| {
                    let (lo, hi) = v.iter().skip(k).step_by(2).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
                    hi - lo
                };
                ext(0).max(ext(1))
            } else {
                let v = q.block(b);
                (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
            };
            (b, if s.is_finite() && s > 0.0 { s } else { 1.0 })
        })
        .collect()
}

/// Optimizer state in scaled flat coordinates `z_b = x_b / s_b`.
struct Space<'a> {
    settings: &'a OptSettings,
    scales: BTreeMap<Block, f64>,
    shape_mask: Option<Vec<bool>>,
}

impl Space<'_> {
    fn tied(&self, b: Block) -> bool {
        self.settings.tied.contains(&b)
    }

    fn to_z(&self, g: &ParamVector, gradient: bool) -> Vec<f64> {
        let mut out = Vec::new();
        for &b in &self.settings.blocks {
            let s = self.scales[&b];
            let f = if gradient { s } else { 1.0 / s };
            let v = g.block(b);
            if self.tied(b) {
                // gradient of a uniform shift, or the mean value
                let sum: f64 = v.iter().sum();
                out.push(if gradient { sum * f } else { sum / v.len().max(1) as f64 * f });
                continue;
            }
            for (k, v) in v.iter().enumerate() {
                let keep = b != Block::Shape || self.shape_mask.as_ref().is_none_or(|m| m[k]);
                out.push(if keep { v * f } else { 0.0 });
            }
        }
        out
    }

    /// Step in parameter space from a scaled step.
    fn from_z(&self, template: &ParamVector, dz: &[f64]) -> ParamVector {
        let mut d = template.zeros_like();
        let mut k = 0;
        for &b in &self.settings.blocks {
            let s = self.scales[&b];
            let tied = self.tied(b);
            for v in d.block_mut(b).iter_mut() {
                *v = dz[k] * s;
                if !tied {
                    k += 1;
                }
            }
            if tied {
                k += 1;
            }
        }
        d
    }

    /// Gradient with components pushing against an active bound removed.
    fn projected(&self, q: &ParamVector, gz: &[f64]) -> Vec<f64> {
        let mut out = gz.to_vec();
        let mut k = 0;
        for &b in &self.settings.blocks {
            let bd = self.settings.bound(b);
            let mut check = |lo: f64, hi: f64, k: usize| {
                if (lo <= bd.lower && out[k] > 0.0) || (hi >= bd.upper && out[k] < 0.0) {
                    out[k] = 0.0;
                }
            };
            if self.tied(b) {
                let v = q.block(b);
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                check(lo, hi, k);
                k += 1;
                continue;
            }
            for &v in q.block(b) {
                check(v, v, k);
                k += 1;
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two-loop recursion: `−H g`.
fn lbfgs_direction(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

pub struct Accepted {
    pub q: ParamVector,
    pub value: f64,
    pub grad: ParamVector,
    pub step: f64,
    pub clamped: Vec<Block>,
}

/// Backtracking from `t0` along `d` (parameter space) with the Armijo test on
/// the projected point. The step is first capped below rest-mesh inversion
/// and halved until the quality guard holds; forward failures count as
/// rejections.
pub fn line_search<P: Problem + ?Sized>(
    problem: &mut P,
    settings: &OptSettings,
    q: &ParamVector,
    value: f64,
    grad: &ParamVector,
    d: &ParamVector,
    t0: f64,
) -> Result<Accepted> {
    let slope = grad.dot(d);
    if !(slope < 0.0) {
        return Err(Error::LineSearchFailure(format!("not a descent direction (slope {slope:e})")));
    }
    let mut t = t0;
    let inv = problem.inversion_step(q, d);
    if inv.is_finite() {
        t = t.min(0.9 * inv);
    }
    let mut last = String::from("no admissible step");
    for _ in 0..=MAX_HALVINGS {
        let mut trial = q.clone();
        trial.axpy(t, d);
        let clamped = project_bounds(&mut trial, settings);
        if problem.quality(&trial) <= settings.min_quality {
            last = "rest mesh quality guard".into();
            t *= SHRINK;
            continue;
        }
        match problem.evaluate(&trial) {
            Ok((f, g)) => {
                let mut s = trial.clone();
                s.axpy(-1.0, q);
                if f.is_finite() && f <= value + ARMIJO * grad.dot(&s) {
                    return Ok(Accepted {
                        q: trial,
                        value: f,
                        grad: g,
                        step: t,
                        clamped,
                    });
                }
                last = format!("sufficient decrease not met (f = {f:e})");
            }
            Err(e) if e.is_solver_failure() => last = e.to_string(),
            Err(e) => return Err(e),
        }
        t *= SHRINK;
    }
    Err(Error::LineSearchFailure(last))
}

/// Tries the minimizer of the quadratic through `f(0)`, the slope and the
/// accepted value; kept only when it satisfies Armijo and improves on `acc`.
fn refine_step<P: Problem + ?Sized>(
    problem: &mut P,
    settings: &OptSettings,
    q: &ParamVector,
    value: f64,
    grad: &ParamVector,
    d: &ParamVector,
    acc: Accepted,
) -> Result<Accepted> {
    let slope = grad.dot(d);
    let t = acc.step;
    let c = (acc.value - value - slope * t) / (t * t);
    if !(c > 0.0) {
        return Ok(acc);
    }
    let ts = -slope / (2.0 * c);
    let cap = 0.9 * problem.inversion_step(q, d);
    if !(ts > 0.0 && ts <= 8.0 * t && ts < cap) || (ts - t).abs() <= 1e-3 * t {
        return Ok(acc);
    }
    let mut trial = q.clone();
    trial.axpy(ts, d);
    let clamped = project_bounds(&mut trial, settings);
    if problem.quality(&trial) <= settings.min_quality {
        return Ok(acc);
    }
    match problem.evaluate(&trial) {
        Ok((fs, gs)) => {
            let mut s = trial.clone();
            s.axpy(-1.0, q);
            if fs.is_finite() && fs < acc.value && fs <= value + ARMIJO * grad.dot(&s) {
                Ok(Accepted {
                    q: trial,
                    value: fs,
                    grad: gs,
                    step: ts,
                    clamped,
                })
            } else {
                Ok(acc)
            }
        }
        Err(e) if e.is_solver_failure() => Ok(acc),
        Err(e) => Err(e),
    }
}

/// Minimizes over the active blocks; `observer` sees every accepted iterate
/// (used for checkpoints).
pub fn minimize<P: Problem + ?Sized>(
    problem: &mut P,
    settings: &OptSettings,
    q0: &ParamVector,
    mut observer: impl FnMut(&TraceEntry, &ParamVector),
) -> Result<(ParamVector, OptTrace)> {
    settings.validate()?;
    if settings.blocks.is_empty() {
        return Err(Error::schema("/optimization/blocks", "at least one block must be active"));
    }
    let start = Instant::now();
    let mut q = q0.clone();
    let clamped = project_bounds(&mut q, settings);
    let (mut f, mut g) = problem
        .evaluate(&q)
        .map_err(|e| Error::ForwardSolveFailure(format!("initial parameters: {e}")))?;
    let space = Space {
        settings,
        scales: block_scales(&q, settings),
        shape_mask: problem.shape_mask(),
    };
    let mut trace = OptTrace::default();
    let mut gz = space.projected(&q, &space.to_z(&g, true));
    let g0 = norm(&gz);
    let entry = TraceEntry {
        iteration: 0,
        objective: f,
        grad_norm: g0,
        step: 0.0,
        min_quality: problem.quality(&q),
        wall_time: start.elapsed().as_secs_f64(),
        reset: false,
        cosine: 0.0,
        clamped,
        active_bounds: active_bounds(&q, settings),
    };
    observer(&entry, &q);
    trace.entries.push(entry);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stall = 0;
    for it in 1..=settings.max_iterations {
        if norm(&gz) <= settings.grad_tol * g0 || g0 == 0.0 {
            trace.stop_reason = "gradient tolerance".into();
            return Ok((q, trace));
        }
        let mut reset = hist.is_empty();
        let dz = if reset { gz.iter().map(|v| -v).collect() } else { lbfgs_direction(&gz, &hist) };
        let mut dz = if dot(&dz, &gz) < 0.0 {
            dz
        } else {
            reset = true;
            hist.clear();
            gz.iter().map(|v| -v).collect()
        };
        // first step of a steepest-descent phase moves one unit in scaled space
        let t0 = |dz: &[f64], r: bool| if r { 1.0 / norm(dz).max(1.0) } else { 1.0 };
        let d = space.from_z(&q, &dz);
        let acc = match line_search(problem, settings, &q, f, &g, &d, t0(&dz, reset)) {
            Ok(a) => a,
            Err(Error::LineSearchFailure(_)) if !reset => {
                reset = true;
                hist.clear();
                dz = gz.iter().map(|v| -v).collect();
                let d = space.from_z(&q, &dz);
                line_search(problem, settings, &q, f, &g, &d, t0(&dz, true))?
            }
            Err(e) => return Err(e),
        };
        let acc = if reset {
            let d = space.from_z(&q, &dz);
            refine_step(problem, settings, &q, f, &g, &d, acc)?
        } else {
            acc
        };
        let cosine = dot(&dz, &gz) / (norm(&dz) * norm(&gz));
        let zq_old = space.to_z(&q, false);
        let zq_new = space.to_z(&acc.q, false);
        let s: Vec<f64> = zq_new.iter().zip(&zq_old).map(|(a, b)| a - b).collect();
        let gz_new = space.to_z(&acc.grad, true);
        let y: Vec<f64> = gz_new.iter().zip(&space.to_z(&g, true)).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            hist.push_back((s, y, 1.0 / sy));
            if hist.len() > settings.memory {
                hist.pop_front();
            }
        }
        let decrease = (f - acc.value) / f.abs().max(f64::MIN_POSITIVE);
        q = acc.q;
        f = acc.value;
        g = acc.grad;
        gz = space.projected(&q, &gz_new);
        let entry = TraceEntry {
            iteration: it,
            objective: f,
            grad_norm: norm(&gz),
            step: acc.step,
            min_quality: problem.quality(&q),
            wall_time: start.elapsed().as_secs_f64(),
            reset,
            cosine,
            clamped: acc.clamped,
            active_bounds: active_bounds(&q, settings),
        };
        observer(&entry, &q);
        trace.entries.push(entry);
        stall = if decrease < settings.rel_decrease_tol { stall + 1 } else { 0 };
        if stall >= settings.stall_iterations {
            trace.stop_reason = "relative decrease".into();
            return Ok((q, trace));
        }
    }
    trace.stop_reason = if norm(&gz) <= settings.grad_tol * g0 {
        "gradient tolerance".into()
    } else {
        "iteration limit".into()
    };
    Ok((q, trace))
}

/// Smallest positive `t` at which some triangle of `shape + t·d` degenerates.
pub fn inversion_step(triangles: &[[usize; 3]], shape: &[f64], d: &[f64]) -> f64 {
    let mut t = f64::INFINITY;
    for tri in triangles {
        let p = |k: usize, s: &[f64]| [s[2 * tri[k]], s[2 * tri[k] + 1]];
        let (a, b, c) = (p(0, shape), p(1, shape), p(2, shape));
        let (da, db, dc) = (p(0, d), p(1, d), p(2, d));
        let e1 = [b[0] - a[0], b[1] - a[1]];
        let e2 = [c[0] - a[0], c[1] - a[1]];
        let f1 = [db[0] - da[0], db[1] - da[1]];
        let f2 = [dc[0] - da[0], dc[1] - da[1]];
        let cross = |u: [f64; 2], v: [f64; 2]| u[0] * v[1] - u[1] * v[0];
        // det(t) = c0 + c1 t + c2 t²
        let c0 = cross(e1, e2);
        let c1 = cross(e1, f2) + cross(f1, e2);
        let c2 = cross(f1, f2);
        for r in positive_roots(c0, c1, c2) {
            t = t.min(r);
        }
    }
    t
}

fn positive_roots(c0: f64, c1: f64, c2: f64) -> Vec<f64> {
    let scale = c0.abs().max(c1.abs()).max(c2.abs());
    if scale == 0.0 {
        return vec![];
    }
    if c2.abs() <= 1e-14 * scale {
        return if c1 != 0.0 && -c0 / c1 > 0.0 { vec![-c0 / c1] } else { vec![] };
    }
    let disc = c1 * c1 - 4.0 * c2 * c0;
    if disc < 0.0 {
        return vec![];
    }
    let sq = disc.sqrt();
    let qq = -0.5 * (c1 + c1.signum() * sq);
    let mut r = Vec::new();
    if qq != 0.0 {
        r.push(qq / c2);
        r.push(c0 / qq);
    } else {
        r.push(0.0);
    }
    r.into_iter().filter(|&x| x > 0.0).collect()
}

/// Optimization of a scene's own objective over its parameters.
pub struct SceneProblem {
    pub scene: Scene,
    /// Number of forward-plus-adjoint evaluations so far.
    pub evaluations: usize,
}

impl SceneProblem {
    pub fn new(scene: Scene) -> Self {
        Self { scene, evaluations: 0 }
    }

    /// Runs [`minimize`] with the scene's own settings from its current parameters.
    pub fn run(&mut self, observer: impl FnMut(&TraceEntry, &ParamVector)) -> Result<(ParamVector, OptTrace)> {
        let settings = self.scene.optimization.clone();
        let q0 = self.scene.params();
        minimize(self, &settings, &q0, observer)
    }
}

impl Problem for SceneProblem {
    fn evaluate(&mut self, q: &ParamVector) -> Result<(f64, ParamVector)> {
        self.evaluations += 1;
        let ev = crate::adjoint::evaluate(&self.scene.with_params(q)?)?;
        Ok((ev.value, ev.gradient))
    }

    fn quality(&self, q: &ParamVector) -> f64 {
        scaled_jacobian_quality(&self.scene.mesh, &q.shape)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    fn inversion_step(&self, q: &ParamVector, d: &ParamVector) -> f64 {
        inversion_step(&self.scene.mesh.triangles, &q.shape, &d.shape)
    }

    fn shape_mask(&self) -> Option<Vec<bool>> {
        let o = &self.scene.optimization;
        if !o.fix_boundary && o.fixed_tags.is_empty() {
            return None;
        }
        let mut free = vec![true; self.scene.shape.len()];
        let held = |tag: u32| o.fix_boundary || o.fixed_tags.contains(&tag);
        for e in self.scene.mesh.boundary_edges.iter().filter(|e| held(e.tag)) {
            for &v in &e.v {
                free[2 * v] = false;
                free[2 * v + 1] = false;
            }
        }
        Some(free)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `½ (x − x*)ᵀ A (x − x*)` on the λ block.
    struct Quadratic {
        a: Vec<Vec<f64>>,
        xs: Vec<f64>,
        evals: usize,
    }

    impl Problem for Quadratic {
        fn evaluate(&mut self, q: &ParamVector) -> Result<(f64, ParamVector)> {
            self.evals += 1;
            let e: Vec<f64> = q.lambda.iter().zip(&self.xs).map(|(a, b)| a - b).collect();
            let ae: Vec<f64> = self.a.iter().map(|r| dot(r, &e)).collect();
            let mut g = q.zeros_like();
            g.lambda = ae.clone();
            Ok((0.5 * dot(&e, &ae), g))
        }
    }

    fn quad(n: usize) -> (Quadratic, ParamVector) {
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = 1.0 + i as f64;
            if i + 1 < n {
                a[i][i + 1] = 0.3;
                a[i + 1][i] = 0.3;
            }
        }
        let xs: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * i as f64).collect();
        let q = ParamVector {
            lambda: vec![3.0; n],
            damping: vec![0.0, 0.0],
            ..Default::default()
        };
        (Quadratic { a, xs, evals: 0 }, q)
    }

    fn settings(blocks: Vec<Block>) -> OptSettings {
        OptSettings {
            blocks,
            grad_tol: 1e-14,
            bounds: BTreeMap::new(),
            block_scaling: false,
            ..Default::default()
        }
    }

    /// Objective values of an independent dense L-BFGS run (same memory,
    /// unit first trial, halving, interpolated steepest-descent step).
    const REFERENCE: [f64; 8] = [
        7.75,
        1.0244992752810442,
        0.2762942923988141,
        0.07646375270297218,
        0.016736350531172065,
        0.0007814699740548668,
        2.41564086843922e-06,
        1.3832709677067039e-09,
    ];

    #[test]
    fn quadratic_converges_and_matches_reference_iterates() {
        let n = 5;
        let (mut p, q0) = quad(n);
        let s = OptSettings {
            max_iterations: 3 * n,
            ..settings(vec![Block::Lambda])
        };
        let (q, trace) = minimize(&mut p, &s, &q0, |_, _| {}).unwrap();
        for (a, b) in q.lambda.iter().zip(&p.xs) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        for (e, r) in trace.entries.iter().zip(REFERENCE) {
            assert!((e.objective - r).abs() <= 1e-9 * r, "{} vs {r}", e.objective);
        }
        for w in trace.entries.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
    }

    #[test]
    fn small_quadratic_converges_in_2n_iterations() {
        let n = 2;
        let (mut p, q0) = quad(n);
        let s = OptSettings {
            max_iterations: 2 * n,
            ..settings(vec![Block::Lambda])
        };
        let (q, _) = minimize(&mut p, &s, &q0, |_, _| {}).unwrap();
        for (a, b) in q.lambda.iter().zip(&p.xs) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn tied_block_moves_as_one_shift() {
        let (mut p, mut q0) = quad(3);
        q0.lambda = vec![3.0, 3.5, 4.0];
        let s = OptSettings {
            tied: vec![Block::Lambda],
            ..settings(vec![Block::Lambda])
        };
        let (q, _) = minimize(&mut p, &s, &q0, |_, _| {}).unwrap();
        let shift = q.lambda[0] - q0.lambda[0];
        for (a, b) in q.lambda.iter().zip(&q0.lambda) {
            assert!((a - b - shift).abs() < 1e-12);
        }
        // optimal shift c: 1ᵀA(q0 + c·1 − x*) = 0
        let ones = [1.0; 3];
        let a1: Vec<f64> = p.a.iter().map(|r| dot(r, &ones)).collect();
        let e0: Vec<f64> = q0.lambda.iter().zip(&p.xs).map(|(a, b)| a - b).collect();
        let c = -dot(&a1, &e0) / dot(&a1, &ones);
        assert!((shift - c).abs() < 1e-9, "{shift} vs {c}");
    }

    #[test]
    fn masked_blocks_are_frozen() {
        let (mut p, mut q0) = quad(3);
        q0.mu = vec![0.7, 0.8];
        q0.gamma = vec![0.25];
        let (q, _) = minimize(&mut p, &settings(vec![Block::Lambda]), &q0, |_, _| {}).unwrap();
        assert_eq!(q.mu, q0.mu);
        assert_eq!(q.gamma, q0.gamma);
        assert_eq!(q.damping, q0.damping);
    }

    #[test]
    fn full_step_on_convex_model_and_scale_robustness() {
        let (mut p, q0) = quad(1);
        let s = settings(vec![Block::Lambda]);
        let (f, g) = p.evaluate(&q0).unwrap();
        // Newton direction on a 1D quadratic
        let mut d = g.zeros_like();
        d.lambda[0] = -g.lambda[0] / p.a[0][0];
        let acc = line_search(&mut p, &s, &q0, f, &g, &d, 1.0).unwrap();
        assert_eq!(acc.step, 1.0);
        let big = d.scaled(1e6);
        let acc2 = line_search(&mut p, &s, &q0, f, &g, &big, 1.0).unwrap();
        assert!(acc2.step < 2e-6 && acc2.step > 1e-7);
        assert!(acc2.value < f);
        // a power-of-two scale lands on the same point
        let big = d.scaled(1048576.0);
        let acc3 = line_search(&mut p, &s, &q0, f, &g, &big, 1.0).unwrap();
        assert!((acc3.q.lambda[0] - acc.q.lambda[0]).abs() < 1e-8);
    }

    #[test]
    fn ascent_direction_is_rejected() {
        let (mut p, q0) = quad(2);
        let (f, g) = p.evaluate(&q0).unwrap();
        let r = line_search(&mut p, &settings(vec![Block::Lambda]), &q0, f, &g, &g, 1.0);
        assert!(matches!(r, Err(Error::LineSearchFailure(_))));
    }

    #[test]
    fn projection() {
        let mut s = OptSettings::default();
        let mut q = ParamVector {
            gamma: vec![-0.1, 0.3],
            lambda: vec![2.0],
            ..Default::default()
        };
        assert_eq!(project_bounds(&mut q, &s), vec![Block::Gamma]);
        assert_eq!(q.gamma, vec![0.0, 0.3]);
        assert!(project_bounds(&mut q, &s).is_empty());
        assert_eq!(q.lambda, vec![2.0]);
        s.bounds.insert(Block::Lambda, Bound { lower: 1.0, upper: 1.5 });
        project_bounds(&mut q, &s);
        assert_eq!(q.lambda, vec![1.5]);
    }

    /// Minimizer outside the box: λ pinned at its lower bound is flagged.
    #[test]
    fn active_bound_is_traced() {
        let (mut p, q0) = quad(2);
        p.xs = vec![-1.0, 2.0];
        let mut s = settings(vec![Block::Lambda]);
        s.bounds.insert(Block::Lambda, Bound::at_least(0.5));
        let (q, trace) = minimize(&mut p, &s, &q0, |_, _| {}).unwrap();
        assert_eq!(q.lambda[0], 0.5);
        assert!(trace.bound_active_for(Block::Lambda, 2));
        assert!(trace.entries.iter().any(|e| e.clamped.contains(&Block::Lambda)));
    }

    /// Injected solver failures make the second line search fail; the
    /// fallback then moves exactly along the negative gradient.
    #[test]
    fn reset_falls_back_to_gradient_direction() {
        use std::cell::Cell;
        use std::rc::Rc;
        struct Flaky {
            fail: Rc<Cell<usize>>,
        }
        impl Problem for Flaky {
            fn evaluate(&mut self, q: &ParamVector) -> Result<(f64, ParamVector)> {
                if self.fail.get() > 0 {
                    self.fail.set(self.fail.get() - 1);
                    return Err(Error::NewtonDivergence {
                        step: None,
                        reason: "injected".into(),
                    });
                }
                let x = &q.lambda;
                let f = x[0] * x[0] + 10.0 * x[1] * x[1] + x[0].powi(4);
                let mut g = q.zeros_like();
                g.lambda = vec![2.0 * x[0] + 4.0 * x[0].powi(3), 20.0 * x[1]];
                Ok((f, g))
            }
        }
        let fail = Rc::new(Cell::new(0));
        let mut p = Flaky { fail: fail.clone() };
        let q0 = ParamVector {
            lambda: vec![1.0, 1.0],
            damping: vec![0.0, 0.0],
            ..Default::default()
        };
        let s = settings(vec![Block::Lambda]);
        let (_, trace) = minimize(&mut p, &s, &q0, |e, _| {
            if e.iteration == 1 {
                fail.set(MAX_HALVINGS + 1);
            }
        })
        .unwrap();
        let e = &trace.entries[2];
        assert!(e.reset);
        assert!((e.cosine + 1.0).abs() < 1e-12, "{}", e.cosine);
        assert!(!trace.entries[3].reset);
        for w in trace.entries.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
    }

    #[test]
    fn inversion_cap_is_below_inversion() {
        let tris = [[0, 1, 2]];
        let shape = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        // vertex 2 moves straight down through the opposite edge at t = 1
        let d = [0.0, 0.0, 0.0, 0.0, 0.0, -1.0];
        let t = inversion_step(&tris, &shape, &d);
        assert!((t - 1.0).abs() < 1e-14);
        let d = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(inversion_step(&tris, &shape, &d), f64::INFINITY);
        assert_eq!(positive_roots(-1.0, 0.0, 1.0), vec![1.0]);
    }
}
