//! Scene export for viewers: posed primitives plus the boolean operations over
//! their handles. Subtractive leaves are flagged so a viewer can draw them
//! translucent instead of evaluating the booleans itself.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use super::csg::{CsgError, Node, Scene};
use super::program::ModelingProgram;
use super::shapes::Primitive;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Row-major 4×4 homogeneous transform from the primitive's local frame.
    pub matrix: [[f64; 4]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePart {
    pub id: String,
    /// Owning part id: the handle prefix before the first `.`.
    pub part: String,
    pub primitive: Primitive,
    pub params: Map<String, Json>,
    pub pose: Pose,
    pub subtractive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOp {
    pub op: String,
    pub target: String,
    pub operands: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneExport {
    pub parts: Vec<ScenePart>,
    pub ops: Vec<SceneOp>,
}

impl SceneExport {
    /// Exports a program's scene. The empty program yields an empty scene.
    pub fn from_program(m: &ModelingProgram) -> Result<Self, CsgError> {
        if m.is_empty() {
            return Ok(SceneExport::default());
        }
        Ok(Self::from_scene(&Scene::build(m)?))
    }

    pub fn from_scene(s: &Scene) -> Self {
        let subtractive = s.subtractive_leaves();
        let parts = s
            .leaves
            .iter()
            .enumerate()
            .map(|(i, leaf)| {
                let mut params: Map<String, Json> =
                    leaf.params.iter().map(|(k, v)| (k.clone(), Json::from(*v))).collect();
                if leaf.fillet > 0.0 {
                    params.insert("fillet".into(), Json::from(leaf.fillet));
                }
                let mut matrix = [[0.0; 4]; 4];
                for (r, row) in matrix.iter_mut().enumerate().take(3) {
                    for (c, cell) in row.iter_mut().enumerate().take(3) {
                        *cell = leaf.m[(r, c)];
                    }
                    row[3] = leaf.t[r];
                }
                matrix[3][3] = 1.0;
                ScenePart {
                    id: leaf.handle.clone(),
                    part: leaf.handle.split('.').next().unwrap_or_default().to_string(),
                    primitive: leaf.primitive,
                    params,
                    pose: Pose { matrix },
                    subtractive: subtractive.contains(&i),
                }
            })
            .collect();
        let ops = s
            .nodes
            .iter()
            .filter_map(|(target, node)| {
                let (op, operands) = match node {
                    Node::Leaf(_) => return None,
                    Node::Union(ops) => ("union", ops.clone()),
                    Node::Difference(a, b) => ("difference", vec![a.clone(), b.clone()]),
                    Node::Intersection(a, b) => ("intersection", vec![a.clone(), b.clone()]),
                };
                Some(SceneOp { op: op.into(), target: target.clone(), operands })
            })
            .collect();
        SceneExport { parts, ops }
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;
    use crate::translator::program::ModelingCommand;

    #[test]
    fn export_marks_tools_and_poses() {
        let mut m = ModelingProgram::default();
        let a = |v: Json| v.as_object().unwrap().clone();
        m.push(ModelingCommand::new("cylinder", a(json!({"radius": 1.0, "height": 2.0})), "spout.outer"), None);
        m.push(ModelingCommand::new("cylinder", a(json!({"radius": 0.5, "height": 2.0})), "spout.inner"), None);
        m.push(ModelingCommand::new("translate", a(json!({"x": 3.0})), "spout.inner"), None);
        m.push(
            ModelingCommand::new("difference", a(json!({"base": "spout.outer", "tool": "spout.inner"})), "spout"),
            None,
        );
        let e = SceneExport::from_program(&m).unwrap();
        assert_eq!(e.parts.len(), 2);
        assert!(!e.parts[0].subtractive && e.parts[1].subtractive);
        assert_eq!(e.parts[1].part, "spout");
        assert_eq!(e.parts[1].pose.matrix[0][3], 3.0);
        assert_eq!(e.ops, vec![SceneOp {
            op: "difference".into(),
            target: "spout".into(),
            operands: vec!["spout.outer".into(), "spout.inner".into()],
        }]);
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["parts"][0]["primitive"], "cylinder");
        assert_eq!(SceneExport::from_program(&ModelingProgram::default()).unwrap(), SceneExport::default());
    }
}
