//! Mapping from designer shape vocabulary to the five primitives of the
//! command dialect, and from physical properties to command parameters.

use serde::{Deserialize, Serialize};

use crate::construct::CommandBinding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Box,
    Sphere,
    Cylinder,
    Cone,
    Torus,
}

impl Primitive {
    pub fn command(self) -> &'static str {
        match self {
            Primitive::Box => "box",
            Primitive::Sphere => "sphere",
            Primitive::Cylinder => "cylinder",
            Primitive::Cone => "cone",
            Primitive::Torus => "torus",
        }
    }

    pub fn from_command(cmd: &str) -> Option<Self> {
        Some(match cmd {
            "box" => Primitive::Box,
            "sphere" => Primitive::Sphere,
            "cylinder" => Primitive::Cylinder,
            "cone" => Primitive::Cone,
            "torus" => Primitive::Torus,
            _ => return None,
        })
    }
}

const LEXICON: &[(Primitive, &[&str])] = &[
    (Primitive::Sphere, &["sphere", "spherical", "ball", "dome", "globe", "orb", "hemisphere", "knob"]),
    (Primitive::Cone, &["cone", "conical", "tapered", "frustum", "funnel"]),
    (Primitive::Cylinder, &["cylinder", "cylindrical", "rod", "tube", "cord", "disc", "disk", "peg", "pipe"]),
    (Primitive::Torus, &["torus", "donut", "loop"]),
    (
        Primitive::Box,
        &[
            "box", "cuboid", "cube", "rectangle", "rectangular", "slab", "panel", "plate", "block",
            "flat", "frame", "board",
        ],
    ),
];

/// Shapes with no single primitive, and the finer decomposition to ask for instead.
const COMPOSITES: &[(&str, &str)] = &[
    ("ring", "torus segments"),
    ("hollow", "cylinder minus cylinder"),
    ("bezier", "piecewise cylinders"),
    ("spline", "piecewise cylinders"),
];

/// Primitive class of a single shape word.
pub fn primitive_for_word(word: &str) -> Option<Primitive> {
    LEXICON
        .iter()
        .find(|(_, words)| words.contains(&word))
        .map(|(p, _)| *p)
}

/// Primitive for a subpart shape name such as `rounded_box` or `u_shape_frame`.
pub fn primitive_for_shape(shape: &str) -> Option<Primitive> {
    if composite_alternative(shape).is_some() {
        return None;
    }
    shape.split('_').find_map(primitive_for_word)
}

/// Suggested decomposition when a shape name denotes a composite.
pub fn composite_alternative(shape: &str) -> Option<&'static str> {
    shape
        .split('_')
        .find_map(|w| COMPOSITES.iter().find(|(k, _)| *k == w).map(|(_, alt)| *alt))
}

fn bind(command: &str, param: &str, scale: f64) -> Option<CommandBinding> {
    Some(CommandBinding { command: command.into(), param: param.into(), scale })
}

/// Catalog parameter realizing a property of a primitive. Scale-, rotate- and
/// fillet-bound properties are realized by post-transform commands.
pub fn property_binding(prim: Primitive, property: &str) -> Option<CommandBinding> {
    use Primitive::*;
    match (prim, property) {
        (_, "angle") => bind("rotate", "angle", 1.0),
        (Sphere, "radius") => bind("sphere", "radius", 1.0),
        (Sphere, "diameter") => bind("sphere", "radius", 0.5),
        (Sphere, "height") => bind("scale", "z", 1.0),
        (Sphere, "width") => bind("scale", "x", 1.0),
        (Sphere, "length") => bind("scale", "y", 1.0),
        (Cylinder, "radius") => bind("cylinder", "radius", 1.0),
        (Cylinder, "diameter") => bind("cylinder", "radius", 0.5),
        (Cylinder, "height" | "length") => bind("cylinder", "height", 1.0),
        (Cylinder, "width") => bind("scale", "x", 1.0),
        (Cone, "radius") => bind("cone", "radius2", 1.0),
        (Cone, "diameter") => bind("cone", "radius1", 0.5),
        (Cone, "height" | "length") => bind("cone", "height", 1.0),
        (Cone, "width") => bind("scale", "x", 1.0),
        (Torus, "radius") => bind("torus", "minor_radius", 1.0),
        (Torus, "length" | "diameter") => bind("torus", "major_radius", 0.5),
        (Torus, "height") => bind("scale", "z", 1.0),
        (Torus, "width") => bind("scale", "x", 1.0),
        (Box, "length") => bind("box", "length", 1.0),
        (Box, "width") => bind("box", "width", 1.0),
        (Box, "height") => bind("box", "height", 1.0),
        (Box, "radius") => bind("fillet", "radius", 1.0),
        (Box, "diameter") => bind("fillet", "radius", 0.5),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes_resolve() {
        let cases = [
            ("sphere", Primitive::Sphere),
            ("cylinder", Primitive::Cylinder),
            ("cone", Primitive::Cone),
            ("torus", Primitive::Torus),
            ("rounded_box", Primitive::Box),
            ("rectangle", Primitive::Box),
            ("thin_box", Primitive::Box),
            ("vertical_thin_box", Primitive::Box),
            ("curved_flat_handle", Primitive::Box),
            ("slightly_elevated_box", Primitive::Box),
            ("cuboid", Primitive::Box),
            ("u_shape_frame", Primitive::Box),
        ];
        for (shape, prim) in cases {
            assert_eq!(primitive_for_shape(shape), Some(prim), "{shape}");
        }
    }

    #[test]
    fn composites_have_alternatives() {
        assert_eq!(primitive_for_shape("ring"), None);
        assert_eq!(composite_alternative("ring"), Some("torus segments"));
        assert_eq!(composite_alternative("hollow_cylinder"), Some("cylinder minus cylinder"));
        assert_eq!(primitive_for_shape("hollow_cylinder"), None);
    }

    #[test]
    fn cone_radius_is_the_tip() {
        let b = property_binding(Primitive::Cone, "radius").unwrap();
        assert_eq!((b.command.as_str(), b.param.as_str()), ("cone", "radius2"));
        assert!(property_binding(Primitive::Sphere, "material").is_none());
    }
}
