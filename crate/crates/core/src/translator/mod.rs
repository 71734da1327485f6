//! The two mappings between languages: grounding designer instructions into
//! interface programs, and compiling interface programs into CSG commands.
//! A small CSG evaluator checks the result for plausibility and feeds viewers.

pub mod compile;
pub mod csg;
pub mod ground;
pub mod pose;
pub mod program;
pub mod quantifier;
pub mod scene;
pub mod shapes;

pub use compile::{compile, current_value, resolve_subpart, CompileError, SubpartModel};
pub use csg::{evaluate_csg, evaluate_csg_seeded, Aabb, CsgError, PairFlag, Scene, SceneStats};
pub use ground::{ground_instruction, GroundError, Grounding};
pub use pose::{placement, pose_rule, realization, Anchor, Azimuth, Placement, PoseError};
pub use program::{Args, ModelingCommand, ModelingProgram, ProgramCheckError, Provenance};
pub use quantifier::{apply_quantifier, QuantifierContext, QuantifierError, QuantifierTable, RuleKind};
pub use scene::{Pose, SceneExport, SceneOp, ScenePart};
pub use shapes::{composite_alternative, primitive_for_shape, primitive_for_word, property_binding, Primitive};
