//! Fixed pose-constraint table for relation descriptors.
//!
//! Each descriptor contributes part of a placement of one endpoint relative to
//! the other: a contact anchor, an azimuth around the vertical axis, a vertical
//! offset, an alignment, a tilt, or a boolean combination. Unknown descriptors
//! are rejected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("no pose rule for descriptor `{0}`")]
    UnknownDescriptor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    Top,
    Bottom,
    Side,
    Center,
    Inset,
    Mirror,
}

impl Anchor {
    pub fn as_str(self) -> &'static str {
        match self {
            Anchor::Top => "top",
            Anchor::Bottom => "bottom",
            Anchor::Side => "side",
            Anchor::Center => "center",
            Anchor::Inset => "inset",
            Anchor::Mirror => "mirror",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "top" => Anchor::Top,
            "bottom" => Anchor::Bottom,
            "side" => Anchor::Side,
            "center" => Anchor::Center,
            "inset" => Anchor::Inset,
            "mirror" => Anchor::Mirror,
            _ => return None,
        })
    }

    /// Anchors whose placement depends on an azimuth.
    pub fn uses_azimuth(self) -> bool {
        matches!(self, Anchor::Side | Anchor::Inset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Align {
    Center,
    Bottom,
}

impl Align {
    pub fn as_str(self) -> &'static str {
        match self {
            Align::Center => "center",
            Align::Bottom => "bottom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoolOp {
    Union,
    Difference,
    Intersection,
}

impl BoolOp {
    pub fn command(self) -> &'static str {
        match self {
            BoolOp::Union => "union",
            BoolOp::Difference => "difference",
            BoolOp::Intersection => "intersection",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Azimuth {
    Degrees(f64),
    /// Opposite the named part as seen from the reference.
    OppositeOf(String),
}

/// Contribution of a single descriptor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseRule {
    pub anchor: Option<Anchor>,
    pub azimuth: Option<Azimuth>,
    pub dz_frac: f64,
    pub gap: f64,
    pub align: Option<Align>,
    pub tilt: f64,
    pub boolean: Option<BoolOp>,
}

fn normalize(descriptor: &str) -> String {
    descriptor.trim().to_lowercase().replace([' ', '-'], "_")
}

pub fn pose_rule(descriptor: &str) -> Result<PoseRule, PoseError> {
    let d = normalize(descriptor);
    let mut r = PoseRule::default();
    if let Some(target) = d.strip_prefix("opposite_") {
        r.anchor = Some(Anchor::Side);
        r.azimuth = Some(Azimuth::OppositeOf(target.to_string()));
        return Ok(r);
    }
    match d.as_str() {
        "top" | "top_center" | "flush" | "on_top" | "above" => r.anchor = Some(Anchor::Top),
        "beneath" | "underneath" | "below" | "bottom" | "behind_front_edge" => {
            r.anchor = Some(Anchor::Bottom)
        }
        "side" | "beside" | "extend_from" | "adjacent" | "next_to" => r.anchor = Some(Anchor::Side),
        "front" => {
            r.anchor = Some(Anchor::Side);
            r.azimuth = Some(Azimuth::Degrees(270.0));
        }
        "slide_outward" => r.azimuth = Some(Azimuth::Degrees(270.0)),
        "front_bottom_corner" => {
            r.anchor = Some(Anchor::Side);
            r.azimuth = Some(Azimuth::Degrees(270.0));
            r.align = Some(Align::Bottom);
        }
        "rear" | "attached_to_rear" | "behind" | "back" => {
            r.anchor = Some(Anchor::Side);
            r.azimuth = Some(Azimuth::Degrees(90.0));
        }
        "rear_higher" => {
            r.anchor = Some(Anchor::Side);
            r.azimuth = Some(Azimuth::Degrees(90.0));
            r.dz_frac = 0.25;
        }
        "higher" | "raised" => r.dz_frac = 0.25,
        "lower" => r.dz_frac = -0.25,
        "aligned" | "aligned_horizontal" | "horizontal" | "level" | "parallel" => {
            r.align = Some(Align::Center)
        }
        "tilted_upward" | "angled_upward" => r.tilt = 30.0,
        "sloped_downward" | "angled_downward" => r.tilt = -20.0,
        "angled_outward" => r.tilt = 15.0,
        "perpendicular" => r.tilt = 90.0,
        "surround" | "around" | "through" | "inside" | "centered" => r.anchor = Some(Anchor::Center),
        "symmetrical" | "symmetric" | "mirrored" => r.anchor = Some(Anchor::Mirror),
        "recessed" | "inset" => r.anchor = Some(Anchor::Inset),
        "contrast" => r.gap = 0.05,
        "spaced" | "apart" => r.gap = 0.2,
        "connected" | "seamless" | "fused" | "joined" => r.boolean = Some(BoolOp::Union),
        "hollow" | "cut" | "subtract" => r.boolean = Some(BoolOp::Difference),
        "intersect" | "intersecting" => r.boolean = Some(BoolOp::Intersection),
        _ => return Err(PoseError::UnknownDescriptor(descriptor.to_string())),
    }
    Ok(r)
}

/// Combined placement of one relationship. Later descriptors override anchor,
/// azimuth and alignment; offsets and tilts accumulate.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub anchor: Anchor,
    pub azimuth: Azimuth,
    pub dz_frac: f64,
    pub gap: f64,
    pub align: Option<Align>,
    pub tilt: f64,
    pub booleans: Vec<BoolOp>,
}

pub fn placement<S: AsRef<str>>(descriptors: &[S]) -> Result<Placement, PoseError> {
    let mut p = Placement {
        anchor: Anchor::Side,
        azimuth: Azimuth::Degrees(0.0),
        dz_frac: 0.0,
        gap: 0.0,
        align: None,
        tilt: 0.0,
        booleans: Vec::new(),
    };
    let mut anchored = false;
    for d in descriptors {
        let r = pose_rule(d.as_ref())?;
        if let Some(a) = r.anchor {
            p.anchor = a;
            anchored = true;
        }
        if let Some(az) = r.azimuth {
            p.azimuth = az;
        }
        if let Some(al) = r.align {
            p.align = Some(al);
        }
        p.dz_frac += r.dz_frac;
        p.gap += r.gap;
        p.tilt += r.tilt;
        if let Some(b) = r.boolean {
            if !p.booleans.contains(&b) {
                p.booleans.push(b);
            }
        }
    }
    // A relationship that only combines or aligns still needs somewhere to put the part.
    if !anchored && !p.booleans.is_empty() {
        p.anchor = Anchor::Center;
    }
    Ok(p)
}

/// Catalog commands a descriptor compiles to.
pub fn realization(descriptor: &str) -> Result<Vec<&'static str>, PoseError> {
    let r = pose_rule(descriptor)?;
    let mut cmds = Vec::new();
    if r.tilt != 0.0 {
        cmds.push("rotate");
    }
    if r.boolean.is_none() || r.anchor.is_some() {
        cmds.push("translate");
    }
    if let Some(b) = r.boolean {
        cmds.push(b.command());
    }
    Ok(cmds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_descriptors_all_have_rules() {
        let all = [
            "top center", "flush", "side", "aligned_horizontal", "tilted_upward", "opposite_spout",
            "higher", "top", "aligned", "surround", "beside", "front_bottom_corner", "recessed",
            "around", "beneath", "contrast", "slide_outward", "rear", "extend_from", "seamless",
            "sloped_downward", "attached_to_rear", "connected", "underneath", "symmetrical",
            "through", "horizontal", "behind_front_edge", "rear_higher",
        ];
        for d in all {
            assert!(pose_rule(d).is_ok(), "{d}");
        }
        assert_eq!(pose_rule("wobbly"), Err(PoseError::UnknownDescriptor("wobbly".into())));
    }

    #[test]
    fn handle_placement() {
        let p = placement(&["side", "opposite_spout", "aligned_horizontal", "higher"]).unwrap();
        assert_eq!(p.anchor, Anchor::Side);
        assert_eq!(p.azimuth, Azimuth::OppositeOf("spout".into()));
        assert_eq!(p.align, Some(Align::Center));
        assert_eq!(p.dz_frac, 0.25);
    }

    #[test]
    fn realizations() {
        assert_eq!(realization("seamless").unwrap(), vec!["union"]);
        assert_eq!(realization("tilted_upward").unwrap(), vec!["rotate", "translate"]);
        assert_eq!(realization("hollow").unwrap(), vec!["difference"]);
        assert_eq!(realization("top center").unwrap(), vec!["translate"]);
    }
}
