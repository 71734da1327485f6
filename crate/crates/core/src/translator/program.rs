//! Programs in the neutral CSG command dialect.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError};
use crate::construct::RelationKey;

pub type Args = Map<String, Json>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramCheckError {
    #[error("command {index} (`{cmd}`) uses handle `{handle}` before it is defined")]
    UndefinedHandle { index: usize, cmd: String, handle: String },
    #[error("command {index} (`{cmd}`) redefines handle `{handle}`")]
    DuplicateHandle { index: usize, cmd: String, handle: String },
    #[error("command {index} (`{cmd}`): unknown argument `{arg}`")]
    UnknownArgument { index: usize, cmd: String, arg: String },
    #[error("command {index} (`{cmd}`): argument `{arg}` = {value} outside {lo}..={hi}")]
    OutOfRange { index: usize, cmd: String, arg: String, value: f64, lo: f64, hi: f64 },
    #[error("command {index}: unknown command `{cmd}`")]
    UnknownCommand { index: usize, cmd: String },
    #[error("malformed command line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelingCommand {
    pub cmd: String,
    pub args: Args,
    pub target: String,
}

impl ModelingCommand {
    pub fn new(cmd: &str, args: Args, target: &str) -> Self {
        Self { cmd: cmd.to_string(), args, target: target.to_string() }
    }

    pub fn number(&self, name: &str) -> Option<f64> {
        self.args.get(name).and_then(Json::as_f64)
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.args.get(name).and_then(Json::as_str)
    }

    /// True when the command introduces its target rather than mutating it.
    pub fn creates_target(&self) -> bool {
        matches!(
            self.cmd.as_str(),
            "box" | "sphere" | "cylinder" | "cone" | "torus" | "union" | "difference" | "intersection"
        )
    }

    /// Handles read by this command other than its own target.
    pub fn referenced_handles(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for key in ["relative_to", "base", "tool", "a", "b"] {
            if let Some(h) = self.text(key) {
                out.push(h);
            }
        }
        if let Some(ops) = self.args.get("operands").and_then(Json::as_array) {
            out.extend(ops.iter().filter_map(Json::as_str));
        }
        out
    }
}

/// Which construct a command was generated from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Part {
        part: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subpart: Option<String>,
    },
    Relation { relation: RelationKey },
}

impl Provenance {
    pub fn part(part: &str, subpart: Option<&str>) -> Self {
        Provenance::Part { part: part.to_string(), subpart: subpart.map(str::to_string) }
    }

    /// The single part this command belongs to, if it came from a part construct.
    pub fn owner_part(&self) -> Option<&str> {
        match self {
            Provenance::Part { part, .. } => Some(part),
            Provenance::Relation { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelingProgram {
    pub commands: Vec<ModelingCommand>,
    #[serde(default)]
    pub provenance: BTreeMap<usize, Provenance>,
}

impl ModelingProgram {
    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn push(&mut self, command: ModelingCommand, provenance: Option<Provenance>) {
        if let Some(p) = provenance {
            self.provenance.insert(self.commands.len(), p);
        }
        self.commands.push(command);
    }

    /// One `{cmd, args, target}` object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.commands {
            out.push_str(&serde_json::to_string(c).expect("commands always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ProgramCheckError> {
        let mut p = ModelingProgram::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let c: ModelingCommand = serde_json::from_str(line)
                .map_err(|e| ProgramCheckError::Malformed { line: i + 1, message: e.to_string() })?;
            p.commands.push(c);
        }
        Ok(p)
    }

    /// Commands whose provenance names `part` as owner.
    pub fn commands_of(&self, part: &str) -> Vec<(usize, &ModelingCommand)> {
        self.commands
            .iter()
            .enumerate()
            .filter(|(i, _)| self.provenance.get(i).and_then(Provenance::owner_part) == Some(part))
            .collect()
    }

    /// Every handle is defined before use and created at most once.
    pub fn check_topology(&self) -> Result<(), ProgramCheckError> {
        let mut defined: HashSet<&str> = HashSet::new();
        for (index, c) in self.commands.iter().enumerate() {
            for h in c.referenced_handles() {
                if !defined.contains(h) {
                    return Err(ProgramCheckError::UndefinedHandle {
                        index,
                        cmd: c.cmd.clone(),
                        handle: h.to_string(),
                    });
                }
            }
            if c.creates_target() {
                if !defined.insert(&c.target) {
                    return Err(ProgramCheckError::DuplicateHandle {
                        index,
                        cmd: c.cmd.clone(),
                        handle: c.target.clone(),
                    });
                }
            } else if !defined.contains(c.target.as_str()) {
                return Err(ProgramCheckError::UndefinedHandle {
                    index,
                    cmd: c.cmd.clone(),
                    handle: c.target.clone(),
                });
            }
        }
        Ok(())
    }

    /// Every argument is declared by the command's signature and numeric values are in range.
    pub fn check_signatures(&self, catalog: &Catalog) -> Result<(), ProgramCheckError> {
        for (index, c) in self.commands.iter().enumerate() {
            let entry = catalog.entry(&c.cmd).map_err(|e| match e {
                CatalogError::UnknownCommand(cmd) => ProgramCheckError::UnknownCommand { index, cmd },
                other => ProgramCheckError::Malformed { line: index + 1, message: other.to_string() },
            })?;
            for (arg, value) in &c.args {
                let schema = entry.param(arg).ok_or_else(|| ProgramCheckError::UnknownArgument {
                    index,
                    cmd: c.cmd.clone(),
                    arg: arg.clone(),
                })?;
                if let (Some(v), Some([lo, hi])) = (value.as_f64(), schema.range) {
                    if v < lo - 1e-12 || v > hi + 1e-12 {
                        return Err(ProgramCheckError::OutOfRange {
                            index,
                            cmd: c.cmd.clone(),
                            arg: arg.clone(),
                            value: v,
                            lo,
                            hi,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}
