//! Compilation of DSL programs into the CSG command dialect.
//!
//! Per part, each subpart becomes a primitive followed by its post-transforms,
//! and the subparts are unioned under the part's handle. Relationships then
//! place one endpoint relative to the other with symbolic anchors, so a change
//! to one part's dimensions never alters another part's commands. Boolean
//! combinations requested by relationships come last.

use std::collections::HashSet;

use indexmap::IndexMap;
use serde_json::{json, Value as Json};
use thiserror::Error;

use super::pose::{placement, Anchor, Azimuth, BoolOp, PoseError};
use super::program::{Args, ModelingCommand, ModelingProgram, Provenance};
use super::shapes::{primitive_for_shape, Primitive};
use crate::catalog::{Catalog, CatalogEntry, CatalogError};
use crate::construct::{
    Construct, DomainInterface, DslProgram, Feasibility, PartBinding, RelationKey, SubpartId, Value,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompileError {
    #[error("unbound operation `{0}`")]
    UnboundOperation(String),
    #[error("unknown command `{0}`")]
    UnknownCommand(String),
    #[error("relationship references undeclared part `{0}`")]
    DanglingRelationEndpoint(String),
    #[error("part `{0}` has no subparts")]
    EmptyPart(String),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

impl From<CatalogError> for CompileError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::UnknownCommand(id) => CompileError::UnknownCommand(id),
            other => CompileError::UnknownCommand(other.to_string()),
        }
    }
}

/// Resolved geometry of one subpart: primitive arguments plus post-transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct SubpartModel {
    pub primitive: Primitive,
    pub args: Args,
    pub scale: [Option<f64>; 3],
    pub rotate: Option<f64>,
    pub fillet: Option<f64>,
    /// Property values in designer units, keyed by property name.
    pub values: IndexMap<String, f64>,
}

fn fold_deltas(base: f64, deltas: &[&Construct]) -> f64 {
    deltas.iter().fold(base, |v, c| match c {
        Construct::Part(p) => match (&p.value, p.delta) {
            (Some(Value::Number(x)), _) => *x,
            (None, Some(d)) => v * (1.0 + d),
            _ => v,
        },
        Construct::Relation(_) => v,
    })
}

fn natural_extent(prim: Primitive, args: &Args) -> [f64; 3] {
    let g = |k: &str| args.get(k).and_then(Json::as_f64).unwrap_or(1.0);
    match prim {
        Primitive::Box => [g("length"), g("width"), g("height")],
        Primitive::Sphere => [2.0 * g("radius"); 3],
        Primitive::Cylinder => [2.0 * g("radius"), 2.0 * g("radius"), g("height")],
        Primitive::Cone => {
            let r = g("radius1").max(g("radius2"));
            [2.0 * r, 2.0 * r, g("height")]
        }
        Primitive::Torus => {
            let span = 2.0 * (g("major_radius") + g("minor_radius"));
            [span, span, 2.0 * g("minor_radius")]
        }
    }
}

fn axis_index(axis: &str) -> Option<usize> {
    match axis {
        "x" => Some(0),
        "y" => Some(1),
        "z" => Some(2),
        _ => None,
    }
}

fn param_clamp(entry: &CatalogEntry, param: &str, v: f64) -> f64 {
    entry.param(param).map_or(v, |p| p.clamp(v))
}

fn maintained_binding<'a>(
    d: &'a DomainInterface,
    part: &str,
    subpart: &str,
    property: &str,
) -> Result<&'a PartBinding, CompileError> {
    let path = format!("{part}/{subpart}/{property}");
    match d.part_binding(part, subpart, property) {
        Some(b) if b.feasibility == Feasibility::PointToPoint && b.binding.is_some() => Ok(b),
        _ => Err(CompileError::UnboundOperation(path)),
    }
}

/// Resolves the values of a subpart's properties from interface defaults and the
/// program's edits, in edit order.
pub fn resolve_subpart(
    p: &DslProgram,
    d: &DomainInterface,
    c: &Catalog,
    part: &str,
    subpart: &str,
    properties: &[String],
) -> Result<SubpartModel, CompileError> {
    let shape = subpart
        .parse::<SubpartId>()
        .map_err(|_| CompileError::UnknownCommand(subpart.to_string()))?
        .shape;
    let prim = primitive_for_shape(&shape).ok_or(CompileError::UnknownCommand(shape))?;
    let entry = c.entry(prim.command())?;
    let mut args = Args::new();
    for param in &entry.signature.params {
        if let Some(v) = param.default_number() {
            args.insert(param.name.clone(), json!(v));
        }
    }

    // Edits per property, with the position of the last one for precedence.
    let mut edits: Vec<(&String, &PartBinding, Vec<&Construct>, Option<usize>)> = Vec::new();
    for prop in properties {
        let b = maintained_binding(d, part, subpart, prop)?;
        let mut list = Vec::new();
        let mut last = None;
        for (i, cst) in p.deltas.iter().enumerate() {
            if let Construct::Part(pc) = cst {
                if pc.part == part && pc.subpart == subpart && &pc.property == prop {
                    if !b.permits(&pc.operation) {
                        return Err(CompileError::UnboundOperation(format!(
                            "{}:{}",
                            pc.attribute_path(),
                            pc.operation
                        )));
                    }
                    list.push(cst);
                    last = Some(i);
                }
            }
        }
        edits.push((prop, b, list, last));
    }

    let mut values = IndexMap::new();
    // Primitive parameters: when several properties feed one parameter, the most recently edited wins.
    let mut chosen: IndexMap<String, (Option<usize>, f64)> = IndexMap::new();
    for (prop, b, list, last) in &edits {
        let cb = b.binding.as_ref().expect("maintained bindings carry a command");
        if cb.command != prim.command() {
            continue;
        }
        let schema = entry
            .param(&cb.param)
            .ok_or_else(|| CompileError::UnknownCommand(format!("{}.{}", cb.command, cb.param)))?;
        let base = b
            .default
            .or_else(|| schema.default_number().map(|v| v / cb.scale))
            .unwrap_or(1.0);
        let value = fold_deltas(base, list);
        let arg = schema.clamp(value * cb.scale);
        values.insert((*prop).clone(), arg / cb.scale);
        let replace = match chosen.get(&cb.param) {
            None => true,
            Some((prev, _)) => *last > *prev,
        };
        if replace {
            chosen.insert(cb.param.clone(), (*last, arg));
        }
    }
    for (param, (_, v)) in chosen {
        args.insert(param, json!(v));
    }

    let extent = natural_extent(prim, &args);
    let mut scale = [None; 3];
    let mut rotate = None;
    let mut fillet = None;
    for (prop, b, list, _) in &edits {
        let cb = b.binding.as_ref().expect("maintained bindings carry a command");
        match cb.command.as_str() {
            cmd if cmd == prim.command() => {}
            "scale" => {
                let axis = axis_index(&cb.param)
                    .ok_or_else(|| CompileError::UnknownCommand(format!("scale.{}", cb.param)))?;
                let scale_entry = c.entry("scale")?;
                let value = fold_deltas(extent[axis], list);
                let factor = param_clamp(scale_entry, &cb.param, value * cb.scale / extent[axis]);
                scale[axis] = Some(factor);
                values.insert((*prop).clone(), factor * extent[axis] / cb.scale);
            }
            "rotate" => {
                let rot = c.entry("rotate")?;
                let value = fold_deltas(b.default.unwrap_or(0.0), list);
                let angle = param_clamp(rot, "angle", value * cb.scale);
                rotate = Some(angle);
                values.insert((*prop).clone(), angle / cb.scale);
            }
            "fillet" => {
                let fil = c.entry("fillet")?;
                let base = b
                    .default
                    .or_else(|| fil.param("radius").and_then(|s| s.default_number()))
                    .unwrap_or(0.0);
                let radius = param_clamp(fil, "radius", fold_deltas(base, list) * cb.scale);
                fillet = Some(radius);
                values.insert((*prop).clone(), radius / cb.scale);
            }
            other => return Err(CompileError::UnknownCommand(other.to_string())),
        }
    }
    Ok(SubpartModel { primitive: prim, args, scale, rotate, fillet, values })
}

fn obj(v: Json) -> Args {
    match v {
        Json::Object(m) => m,
        _ => unreachable!("argument literals are objects"),
    }
}

/// Part structure to compile: declared parts first, then interface parts that
/// relationships reference without declaring.
fn part_layout(
    p: &DslProgram,
    d: &DomainInterface,
) -> Result<IndexMap<String, IndexMap<String, Vec<String>>>, CompileError> {
    let mut layout = IndexMap::new();
    let from_interface = |part: &str| -> Result<IndexMap<String, Vec<String>>, CompileError> {
        let mut subs: IndexMap<String, Vec<String>> = IndexMap::new();
        for b in d.maintained_parts().filter(|b| b.part == part) {
            subs.entry(b.subpart.clone()).or_default().push(b.property.clone());
        }
        Ok(subs)
    };
    for (part, subs) in &p.parts {
        let subs = if subs.is_empty() { from_interface(part)? } else { subs.clone() };
        if subs.is_empty() {
            return Err(CompileError::EmptyPart(part.clone()));
        }
        layout.insert(part.clone(), subs);
    }
    for key in p.relationships.keys() {
        for end in [&key.from, &key.to] {
            if layout.contains_key(end) {
                continue;
            }
            if !d.declares_part(end) {
                return Err(CompileError::DanglingRelationEndpoint(end.clone()));
            }
            // An endpoint with no geometry of its own names a region rather
            // than a solid; relations touching it are not realized.
            let subs = from_interface(end)?;
            if !subs.is_empty() {
                layout.insert(end.clone(), subs);
            }
        }
    }
    Ok(layout)
}

fn azimuth_between(p: &DslProgram, reference: &str, other: &str) -> f64 {
    let key = RelationKey::new(reference, other);
    p.relation_key_for(&key)
        .and_then(|k| placement(&p.relationships[&k]).ok())
        .and_then(|pl| match pl.azimuth {
            Azimuth::Degrees(a) if pl.anchor.uses_azimuth() => Some(a),
            _ => None,
        })
        .unwrap_or(0.0)
}

/// Compiles a program against its interface and the command catalog.
pub fn compile(p: &DslProgram, d: &DomainInterface, c: &Catalog) -> Result<ModelingProgram, CompileError> {
    let mut out = ModelingProgram::default();
    let layout = part_layout(p, d)?;

    for (part, subparts) in &layout {
        let mut handles = Vec::new();
        for (subpart, props) in subparts {
            let model = resolve_subpart(p, d, c, part, subpart, props)?;
            let handle = format!("{part}.{subpart}");
            let prov = Some(Provenance::part(part, Some(subpart)));
            out.push(ModelingCommand::new(model.primitive.command(), model.args.clone(), &handle), prov.clone());
            if model.scale.iter().any(Option::is_some) {
                let mut args = Args::new();
                for (axis, s) in ["x", "y", "z"].iter().zip(model.scale) {
                    if let Some(s) = s {
                        args.insert(axis.to_string(), json!(s));
                    }
                }
                out.push(ModelingCommand::new("scale", args, &handle), prov.clone());
            }
            if let Some(angle) = model.rotate {
                out.push(
                    ModelingCommand::new("rotate", obj(json!({"axis": "y", "angle": angle})), &handle),
                    prov.clone(),
                );
            }
            if let Some(r) = model.fillet {
                out.push(
                    ModelingCommand::new("fillet", obj(json!({"radius": r, "edges": "all"})), &handle),
                    prov.clone(),
                );
            }
            if let Some(prev) = handles.last() {
                out.push(
                    ModelingCommand::new(
                        "translate",
                        obj(json!({"relative_to": prev, "anchor": "top"})),
                        &handle,
                    ),
                    prov.clone(),
                );
            }
            handles.push(handle);
        }
        out.push(
            ModelingCommand::new("union", obj(json!({"operands": handles})), part),
            Some(Provenance::part(part, None)),
        );
    }

    let mut placed: HashSet<&str> = layout.keys().take(1).map(String::as_str).collect();
    let mut booleans: Vec<(BoolOp, &RelationKey)> = Vec::new();
    for (key, descriptors) in &p.relationships {
        if !layout.contains_key(&key.from) || !layout.contains_key(&key.to) {
            log::debug!("relation {key} has an endpoint without geometry; not placed");
            continue;
        }
        for desc in descriptors {
            match d.relation_binding(key, desc) {
                Some(b) if b.feasibility == Feasibility::PointToPoint => {}
                _ => return Err(CompileError::UnboundOperation(format!("{key}/{desc}"))),
            }
        }
        let mut pl = placement(descriptors)?;
        for cst in &p.deltas {
            if let Construct::Relation(rc) = cst {
                let same = rc.relation == *key || rc.relation == key.reversed();
                if !same || !descriptors.contains(&rc.descriptor) {
                    continue;
                }
                let permitted = d
                    .relation_binding(key, &rc.descriptor)
                    .is_some_and(|b| b.permits(&rc.operation));
                if !permitted {
                    return Err(CompileError::UnboundOperation(format!(
                        "{key}/{}:{}",
                        rc.descriptor, rc.operation
                    )));
                }
                if let Some([a, b]) = rc.delta {
                    pl.gap = (pl.gap + (a + b) / 2.0).max(0.0);
                }
            }
        }

        let (reference, mover) = match (placed.contains(key.from.as_str()), placed.contains(key.to.as_str())) {
            (false, true) => (key.to.as_str(), key.from.as_str()),
            _ => (key.from.as_str(), key.to.as_str()),
        };
        placed.insert(reference);
        placed.insert(mover);
        let prov = Some(Provenance::Relation { relation: key.clone() });

        if pl.tilt != 0.0 {
            out.push(
                ModelingCommand::new("rotate", obj(json!({"axis": "y", "angle": pl.tilt})), mover),
                prov.clone(),
            );
        }
        let anchored = !pl.booleans.is_empty() && pl.anchor == Anchor::Center;
        if !anchored || pl.booleans.is_empty() {
            let mut args = obj(json!({"relative_to": reference, "anchor": pl.anchor.as_str()}));
            if pl.anchor.uses_azimuth() {
                let az = match &pl.azimuth {
                    Azimuth::Degrees(a) => *a,
                    Azimuth::OppositeOf(x) => azimuth_between(p, reference, x) + 180.0,
                };
                args.insert("azimuth".into(), json!(az.rem_euclid(360.0)));
            }
            if pl.dz_frac != 0.0 {
                args.insert("dz_frac".into(), json!(pl.dz_frac));
            }
            if pl.gap != 0.0 {
                args.insert("gap".into(), json!(pl.gap));
            }
            if let Some(al) = pl.align {
                args.insert("align".into(), json!(al.as_str()));
            }
            out.push(ModelingCommand::new("translate", args, mover), prov.clone());
        }
        for b in &pl.booleans {
            booleans.push((*b, key));
        }
    }

    for (op, key) in booleans {
        let (a, b) = (key.from.as_str(), key.to.as_str());
        let (args, target) = match op {
            BoolOp::Union => (json!({"operands": [a, b]}), format!("{a}+{b}")),
            BoolOp::Difference => (json!({"base": a, "tool": b}), format!("{a}-{b}")),
            BoolOp::Intersection => (json!({"a": a, "b": b}), format!("{a}&{b}")),
        };
        out.push(
            ModelingCommand::new(op.command(), obj(args), &target),
            Some(Provenance::Relation { relation: key.clone() }),
        );
    }
    Ok(out)
}

/// Value of a property as the compiler would realize it for the current program.
pub fn current_value(
    p: &DslProgram,
    d: &DomainInterface,
    c: &Catalog,
    part: &str,
    subpart: &str,
    property: &str,
) -> Result<f64, CompileError> {
    let mut props: Vec<String> = p
        .parts
        .get(part)
        .and_then(|s| s.get(subpart))
        .cloned()
        .unwrap_or_default();
    if !props.iter().any(|x| x == property) {
        props.push(property.to_string());
    }
    let model = resolve_subpart(p, d, c, part, subpart, &props)?;
    Ok(model.values[property])
}
