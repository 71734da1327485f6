//! Desk-scale CSG evaluator: replays a modeling program into a scene of posed
//! primitives and boolean nodes, reports exact per-part bounding boxes and a
//! Monte Carlo volume estimate.

use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use super::pose::Anchor;
use super::program::{ModelingCommand, ModelingProgram, ProgramCheckError, Provenance};
use super::shapes::Primitive;

/// Points per sampling block. Each block draws from its own RNG stream, so the
/// estimate depends only on the seed, never on the worker count.
pub const BLOCK: usize = 8192;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CsgError {
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),
    #[error(transparent)]
    Topology(#[from] ProgramCheckError),
    #[error("command {index} (`{cmd}`) is not supported by the evaluator")]
    Unsupported { index: usize, cmd: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb { min: [f64::INFINITY; 3], max: [f64::NEG_INFINITY; 3] }
    }

    fn from_center(c: Vector3<f64>, half: Vector3<f64>) -> Self {
        Aabb {
            min: [c.x - half.x, c.y - half.y, c.z - half.z],
            max: [c.x + half.x, c.y + half.y, c.z + half.z],
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        let mut r = *self;
        for i in 0..3 {
            r.min[i] = r.min[i].min(o.min[i]);
            r.max[i] = r.max[i].max(o.max[i]);
        }
        r
    }

    pub fn intersection(&self, o: &Aabb) -> Aabb {
        let mut r = *self;
        for i in 0..3 {
            r.min[i] = r.min[i].max(o.min[i]);
            r.max[i] = r.max[i].min(o.max[i]);
        }
        r
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
            (self.min[2] + self.max[2]) / 2.0,
        )
    }

    pub fn half(&self) -> Vector3<f64> {
        Vector3::new(
            (self.max[0] - self.min[0]) / 2.0,
            (self.max[1] - self.min[1]) / 2.0,
            (self.max[2] - self.min[2]) / 2.0,
        )
    }

    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..3).map(|i| self.max[i] - self.min[i]).product()
    }

    /// Overlap with positive volume.
    pub fn overlaps(&self, o: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < o.max[i] && o.min[i] < self.max[i])
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// A primitive in its local frame (centered at the origin, Z up) under the
/// world transform `x = m·q + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub handle: String,
    pub primitive: Primitive,
    pub params: IndexMap<String, f64>,
    pub fillet: f64,
    pub m: Matrix3<f64>,
    pub t: Vector3<f64>,
    inv: Matrix3<f64>,
}

fn param_default(prim: Primitive, name: &str) -> f64 {
    match (prim, name) {
        (Primitive::Cylinder | Primitive::Cone, "height") => 2.0,
        (Primitive::Cone, "radius2") => 0.5,
        (Primitive::Torus, "major_radius") => 2.0,
        (Primitive::Torus, "minor_radius") => 0.5,
        _ => 1.0,
    }
}

fn param_names(prim: Primitive) -> &'static [&'static str] {
    match prim {
        Primitive::Box => &["length", "width", "height"],
        Primitive::Sphere => &["radius"],
        Primitive::Cylinder => &["radius", "height"],
        Primitive::Cone => &["radius1", "radius2", "height"],
        Primitive::Torus => &["major_radius", "minor_radius"],
    }
}

impl Leaf {
    fn new(handle: &str, primitive: Primitive, cmd: &ModelingCommand) -> Self {
        let params = param_names(primitive)
            .iter()
            .map(|n| (n.to_string(), cmd.number(n).unwrap_or_else(|| param_default(primitive, n)).max(0.0)))
            .collect();
        Leaf {
            handle: handle.to_string(),
            primitive,
            params,
            fillet: 0.0,
            m: Matrix3::identity(),
            t: Vector3::zeros(),
            inv: Matrix3::identity(),
        }
    }

    fn p(&self, name: &str) -> f64 {
        self.params[name]
    }

    fn refresh(&mut self) {
        self.inv = self.m.try_inverse().unwrap_or_else(Matrix3::zeros);
    }

    fn box_half(&self) -> Vector3<f64> {
        Vector3::new(self.p("length"), self.p("width"), self.p("height")) / 2.0
    }

    fn effective_fillet(&self) -> f64 {
        let h = self.box_half();
        self.fillet.clamp(0.0, h.x.min(h.y).min(h.z))
    }

    /// Exact world-space bounding box of the posed primitive.
    pub fn aabb(&self) -> Aabb {
        let m = &self.m;
        let row_norm = |i: usize| m.row(i).norm();
        let planar = |i: usize| (m[(i, 0)].powi(2) + m[(i, 1)].powi(2)).sqrt();
        let half = match self.primitive {
            Primitive::Box => {
                let f = self.effective_fillet();
                let e = self.box_half() - Vector3::repeat(f);
                Vector3::from_fn(|i, _| {
                    (0..3).map(|j| m[(i, j)].abs() * e[j]).sum::<f64>() + f * row_norm(i)
                })
            }
            Primitive::Sphere => Vector3::from_fn(|i, _| self.p("radius") * row_norm(i)),
            Primitive::Cylinder => Vector3::from_fn(|i, _| {
                m[(i, 2)].abs() * self.p("height") / 2.0 + self.p("radius") * planar(i)
            }),
            Primitive::Torus => Vector3::from_fn(|i, _| {
                self.p("major_radius") * planar(i) + self.p("minor_radius") * row_norm(i)
            }),
            Primitive::Cone => {
                // Hull of the bottom and top discs.
                let (r1, r2, h) = (self.p("radius1"), self.p("radius2"), self.p("height") / 2.0);
                let mut b = Aabb::empty();
                for i in 0..3 {
                    let s = planar(i);
                    let zc = m[(i, 2)] * h;
                    b.min[i] = (zc - r2 * s).min(-zc - r1 * s) + self.t[i];
                    b.max[i] = (zc + r2 * s).max(-zc + r1 * s) + self.t[i];
                }
                return b;
            }
        };
        Aabb::from_center(self.t, half)
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        let q = self.inv * (p - self.t);
        match self.primitive {
            Primitive::Sphere => q.norm_squared() <= self.p("radius").powi(2),
            Primitive::Box => {
                let f = self.effective_fillet();
                let e = self.box_half() - Vector3::repeat(f);
                let d = q.abs() - e;
                let outside = d.map(|x| x.max(0.0)).norm();
                let inside = d.max().min(0.0);
                outside + inside <= f
            }
            Primitive::Cylinder => {
                q.z.abs() <= self.p("height") / 2.0
                    && q.x * q.x + q.y * q.y <= self.p("radius").powi(2)
            }
            Primitive::Cone => {
                let h = self.p("height");
                if h <= 0.0 || q.z.abs() > h / 2.0 {
                    return false;
                }
                let r = self.p("radius1") + (self.p("radius2") - self.p("radius1")) * (q.z + h / 2.0) / h;
                q.x * q.x + q.y * q.y <= r * r
            }
            Primitive::Torus => {
                let rho = (q.x * q.x + q.y * q.y).sqrt() - self.p("major_radius");
                rho * rho + q.z * q.z <= self.p("minor_radius").powi(2)
            }
        }
    }

    /// Applies `x ↦ c + a·(x − c)` to the placed solid.
    fn transform_about(&mut self, a: &Matrix3<f64>, c: &Vector3<f64>) {
        self.m = a * self.m;
        self.t = c + a * (self.t - c);
        self.refresh();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Leaf(usize),
    Union(Vec<String>),
    Difference(String, String),
    Intersection(String, String),
}

/// Replayed program: posed leaves plus the boolean structure over handles.
#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub(crate) leaves: Vec<Leaf>,
    pub(crate) nodes: IndexMap<String, Node>,
    consumed: HashSet<String>,
    part_handles: Vec<String>,
}

fn axis_vector(axis: &str) -> Vector3<f64> {
    match axis {
        "x" => Vector3::x(),
        "z" => Vector3::z(),
        _ => Vector3::y(),
    }
}

impl Scene {
    pub fn build(m: &ModelingProgram) -> Result<Self, CsgError> {
        m.check_topology()?;
        let mut s = Scene::default();
        for (index, c) in m.commands.iter().enumerate() {
            s.apply(index, c)?;
            if let (Some(Provenance::Part { subpart: None, .. }), "union") =
                (m.provenance.get(&index), c.cmd.as_str())
            {
                s.part_handles.push(c.target.clone());
            }
        }
        Ok(s)
    }

    fn apply(&mut self, index: usize, c: &ModelingCommand) -> Result<(), CsgError> {
        if let Some(prim) = Primitive::from_command(&c.cmd) {
            self.leaves.push(Leaf::new(&c.target, prim, c));
            self.nodes.insert(c.target.clone(), Node::Leaf(self.leaves.len() - 1));
            return Ok(());
        }
        let text = |k: &str| c.text(k).unwrap_or_default().to_string();
        match c.cmd.as_str() {
            "union" => {
                let ops: Vec<String> = c
                    .args
                    .get("operands")
                    .and_then(Json::as_array)
                    .map(|a| a.iter().filter_map(Json::as_str).map(str::to_string).collect())
                    .unwrap_or_default();
                self.consumed.extend(ops.iter().cloned());
                self.nodes.insert(c.target.clone(), Node::Union(ops));
            }
            "difference" => {
                let (a, b) = (text("base"), text("tool"));
                self.consumed.extend([a.clone(), b.clone()]);
                self.nodes.insert(c.target.clone(), Node::Difference(a, b));
            }
            "intersection" => {
                let (a, b) = (text("a"), text("b"));
                self.consumed.extend([a.clone(), b.clone()]);
                self.nodes.insert(c.target.clone(), Node::Intersection(a, b));
            }
            "scale" => {
                let f = |k: &str| c.number(k).unwrap_or(1.0);
                let a = Matrix3::from_diagonal(&Vector3::new(f("x"), f("y"), f("z")));
                self.transform(&c.target, &a);
            }
            "rotate" => {
                let angle = c.number("angle").unwrap_or(0.0).to_radians();
                let axis = nalgebra::Unit::new_normalize(axis_vector(c.text("axis").unwrap_or("y")));
                let a = *Rotation3::from_axis_angle(&axis, angle).matrix();
                self.transform(&c.target, &a);
            }
            "fillet" => {
                let r = c.number("radius").unwrap_or(0.0).max(0.0);
                for i in self.leaves_under(&c.target) {
                    self.leaves[i].fillet = r;
                }
            }
            "translate" => {
                let shift = self.translation(c);
                for i in self.leaves_under(&c.target) {
                    self.leaves[i].t += shift;
                }
            }
            _ => return Err(CsgError::Unsupported { index, cmd: c.cmd.clone() }),
        }
        Ok(())
    }

    fn transform(&mut self, handle: &str, a: &Matrix3<f64>) {
        let center = self.aabb(handle).center();
        for i in self.leaves_under(handle) {
            self.leaves[i].transform_about(a, &center);
        }
    }

    fn translation(&self, c: &ModelingCommand) -> Vector3<f64> {
        let mut shift = Vector3::new(
            c.number("x").unwrap_or(0.0),
            c.number("y").unwrap_or(0.0),
            c.number("z").unwrap_or(0.0),
        );
        let Some(reference) = c.text("relative_to") else {
            return shift;
        };
        let r = self.aabb(reference);
        let tb = self.aabb(&c.target);
        if r.is_empty() || tb.is_empty() {
            return shift;
        }
        let (rc, rh, tc, th) = (r.center(), r.half(), tb.center(), tb.half());
        let gap = c.number("gap").unwrap_or(0.0);
        let az = c.number("azimuth").unwrap_or(0.0).to_radians();
        let (dx, dy) = (az.cos(), az.sin());
        let support = |h: &Vector3<f64>| dx.abs() * h.x + dy.abs() * h.y;
        let anchor = c.text("anchor").and_then(Anchor::parse).unwrap_or(Anchor::Center);
        let mut want = match anchor {
            Anchor::Top => Vector3::new(rc.x, rc.y, r.max[2] + gap + th.z),
            Anchor::Bottom => Vector3::new(rc.x, rc.y, r.min[2] - gap - th.z),
            Anchor::Side => {
                let s = support(&rh) + support(&th) + gap;
                Vector3::new(rc.x + dx * s, rc.y + dy * s, rc.z)
            }
            Anchor::Inset => {
                let s = support(&rh) + gap;
                Vector3::new(rc.x + dx * s, rc.y + dy * s, rc.z)
            }
            Anchor::Center => rc,
            Anchor::Mirror => Vector3::new(-rc.x, -rc.y, rc.z),
        };
        match c.text("align") {
            Some("center") => want.z = rc.z,
            Some("bottom") => want.z = r.min[2] + th.z,
            _ => {}
        }
        want.z += c.number("dz_frac").unwrap_or(0.0) * 2.0 * rh.z;
        shift += want - tc;
        shift
    }

    /// Leaf indices reachable from a handle, each once, in first-visit order.
    pub fn leaves_under(&self, handle: &str) -> Vec<usize> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        self.collect(handle, &mut out, &mut seen);
        out
    }

    fn collect(&self, handle: &str, out: &mut Vec<usize>, seen: &mut HashSet<usize>) {
        match self.nodes.get(handle) {
            Some(Node::Leaf(i)) => {
                if seen.insert(*i) {
                    out.push(*i);
                }
            }
            Some(Node::Union(ops)) => ops.iter().for_each(|h| self.collect(h, out, seen)),
            Some(Node::Difference(a, b)) | Some(Node::Intersection(a, b)) => {
                self.collect(a, out, seen);
                self.collect(b, out, seen);
            }
            None => {}
        }
    }

    /// Bounding box of a handle's solid.
    pub fn aabb(&self, handle: &str) -> Aabb {
        match self.nodes.get(handle) {
            Some(Node::Leaf(i)) => self.leaves[*i].aabb(),
            Some(Node::Union(ops)) => ops.iter().fold(Aabb::empty(), |b, h| b.union(&self.aabb(h))),
            Some(Node::Difference(a, _)) => self.aabb(a),
            Some(Node::Intersection(a, b)) => self.aabb(a).intersection(&self.aabb(b)),
            None => Aabb::empty(),
        }
    }

    /// Handles that no boolean consumes, in creation order.
    pub fn roots(&self) -> Vec<&str> {
        self.nodes
            .keys()
            .filter(|h| !self.consumed.contains(*h))
            .map(String::as_str)
            .collect()
    }

    /// Part handles recorded by provenance, or the roots for bare programs.
    pub fn parts(&self) -> Vec<&str> {
        if self.part_handles.is_empty() {
            self.roots()
        } else {
            self.part_handles.iter().map(String::as_str).collect()
        }
    }

    /// Leaves that end up on the tool side of a difference.
    pub fn subtractive_leaves(&self) -> HashSet<usize> {
        let mut out = HashSet::new();
        for node in self.nodes.values() {
            if let Node::Difference(_, tool) = node {
                out.extend(self.leaves_under(tool));
            }
        }
        out
    }

    fn compile_eval(&self) -> Evaluator {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut nodes = Vec::new();
        for (h, node) in &self.nodes {
            let e = match node {
                Node::Leaf(i) => Eval::Leaf(*i),
                Node::Union(ops) => Eval::Union(ops.iter().filter_map(|o| index.get(o.as_str()).copied()).collect()),
                Node::Difference(a, b) => Eval::Difference(index[a.as_str()], index[b.as_str()]),
                Node::Intersection(a, b) => Eval::Intersection(index[a.as_str()], index[b.as_str()]),
            };
            index.insert(h, nodes.len());
            nodes.push((e, self.aabb(h)));
        }
        let roots = self.roots().iter().map(|h| index[h]).collect();
        Evaluator { leaves: self.leaves.clone(), nodes, roots }
    }
}

enum Eval {
    Leaf(usize),
    Union(Vec<usize>),
    Difference(usize, usize),
    Intersection(usize, usize),
}

struct Evaluator {
    leaves: Vec<Leaf>,
    nodes: Vec<(Eval, Aabb)>,
    roots: Vec<usize>,
}

impl Evaluator {
    fn inside(&self, n: usize, p: &Vector3<f64>) -> bool {
        let (e, b) = &self.nodes[n];
        if !b.contains(p) {
            return false;
        }
        match e {
            Eval::Leaf(i) => self.leaves[*i].contains(p),
            Eval::Union(ops) => ops.iter().any(|o| self.inside(*o, p)),
            Eval::Difference(a, t) => self.inside(*a, p) && !self.inside(*t, p),
            Eval::Intersection(a, b) => self.inside(*a, p) && self.inside(*b, p),
        }
    }

    fn in_scene(&self, p: &Vector3<f64>) -> bool {
        self.roots.iter().any(|r| self.inside(*r, p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFlag {
    pub a: String,
    pub b: String,
    pub intersects: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneStats {
    pub parts: IndexMap<String, Aabb>,
    pub bounds: Aabb,
    pub volume: f64,
    pub stderr: f64,
    pub samples: usize,
    pub intersections: Vec<PairFlag>,
}

/// Monte Carlo evaluation with seed 0.
pub fn evaluate_csg(m: &ModelingProgram, samples: usize) -> Result<SceneStats, CsgError> {
    evaluate_csg_seeded(m, samples, 0)
}

pub fn evaluate_csg_seeded(m: &ModelingProgram, samples: usize, seed: u64) -> Result<SceneStats, CsgError> {
    if m.is_empty() {
        return Err(CsgError::DegenerateScene("empty program".into()));
    }
    let scene = Scene::build(m)?;
    let bounds = scene.roots().iter().fold(Aabb::empty(), |b, h| b.union(&scene.aabb(h)));
    if bounds.is_empty() || (0..3).any(|i| bounds.max[i] - bounds.min[i] <= 1e-12) {
        return Err(CsgError::DegenerateScene("zero-extent bounding box".into()));
    }
    if samples == 0 {
        return Err(CsgError::DegenerateScene("no samples requested".into()));
    }
    let eval = scene.compile_eval();
    let blocks = samples.div_ceil(BLOCK);
    let hits: u64 = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let n = BLOCK.min(samples - b * BLOCK);
            let mut count = 0u64;
            for _ in 0..n {
                let p = Vector3::new(
                    rng.gen_range(bounds.min[0]..=bounds.max[0]),
                    rng.gen_range(bounds.min[1]..=bounds.max[1]),
                    rng.gen_range(bounds.min[2]..=bounds.max[2]),
                );
                if eval.in_scene(&p) {
                    count += 1;
                }
            }
            count
        })
        .sum();
    let frac = hits as f64 / samples as f64;
    let vbox = bounds.volume();
    let parts: IndexMap<String, Aabb> =
        scene.parts().iter().map(|h| (h.to_string(), scene.aabb(h))).collect();
    let names: Vec<&String> = parts.keys().collect();
    let mut intersections = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            intersections.push(PairFlag {
                a: names[i].clone(),
                b: names[j].clone(),
                intersects: parts[names[i]].overlaps(&parts[names[j]]),
            });
        }
    }
    Ok(SceneStats {
        parts,
        bounds,
        volume: vbox * frac,
        stderr: vbox * (frac * (1.0 - frac) / samples as f64).sqrt(),
        samples,
        intersections,
    })
}
