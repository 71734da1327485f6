use super::{Catalog, CatalogError};
use crate::translator::ModelingProgram;

/// Cumulative depth of a program: for each command, the depth of its catalog
/// entry plus the number of parameters it specifies explicitly.
pub fn ast_depth(m: &ModelingProgram, c: &Catalog) -> Result<u64, CatalogError> {
    m.commands
        .iter()
        .map(|cmd| {
            let entry = c.entry(&cmd.cmd)?;
            Ok((entry.depth() + cmd.args.len()) as u64)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;
    use crate::translator::ModelingCommand;

    fn mini() -> Catalog {
        Catalog::from_json(include_str!("../../fixtures/catalog/mini.json")).unwrap()
    }

    fn cmd(name: &str, args: serde_json::Value, target: &str) -> ModelingCommand {
        ModelingCommand::new(name, args.as_object().unwrap().clone(), target)
    }

    #[test]
    fn empty_program_is_zero() {
        assert_eq!(ast_depth(&ModelingProgram::default(), &mini()).unwrap(), 0);
    }

    #[test]
    fn hand_computed_depths() {
        let c = mini();
        let mut m = ModelingProgram::default();
        // cone sits two levels below the library root and specifies three parameters
        m.push(cmd("cone", json!({"radius1": 1.0, "radius2": 0.5, "height": 2.0}), "a"), None);
        assert_eq!(ast_depth(&m, &c).unwrap(), 5);
        // fillet sits three levels down and specifies two
        m.push(cmd("fillet", json!({"radius": 0.1, "edges": "all"}), "a"), None);
        assert_eq!(ast_depth(&m, &c).unwrap(), 10);
    }

    #[test]
    fn unknown_command() {
        let mut m = ModelingProgram::default();
        m.push(cmd("loft", json!({}), "a"), None);
        assert!(matches!(ast_depth(&m, &mini()), Err(CatalogError::UnknownCommand(id)) if id == "loft"));
    }

    #[test]
    fn additive_over_concatenation() {
        let c = mini();
        let mut a = ModelingProgram::default();
        a.push(cmd("sphere", json!({"radius": 1.0}), "s"), None);
        let mut b = ModelingProgram::default();
        b.push(cmd("box", json!({"length": 1.0, "width": 1.0, "height": 1.0}), "b"), None);
        b.push(cmd("scale", json!({"z": 0.5}), "b"), None);
        let mut ab = a.clone();
        for (i, command) in b.commands.iter().enumerate() {
            ab.push(command.clone(), b.provenance.get(&i).cloned());
        }
        assert_eq!(
            ast_depth(&ab, &c).unwrap(),
            ast_depth(&a, &c).unwrap() + ast_depth(&b, &c).unwrap()
        );
    }
}
