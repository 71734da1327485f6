//! Alternative translators run as external executables so that a step can
//! offer several candidates for ranking. The executable receives one JSON
//! request on stdin and answers with one JSON response on stdout.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::translator::ModelingProgram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltTranslator {
    /// Method id used in rankings.
    pub id: String,
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

/// What an alternative translator is given for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltRequest {
    pub domain: String,
    pub step: u32,
    pub instruction: String,
    /// The method's own program from the previous step, empty at step 1.
    pub previous: ModelingProgram,
}

/// Expected answer: the full modeling program after the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltResponse {
    pub program: ModelingProgram,
}

impl AltTranslator {
    pub fn run(&self, req: &AltRequest) -> Result<ModelingProgram, String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("starting `{}`: {e}", self.program.display()))?;
        let body = serde_json::to_vec(req).map_err(|e| e.to_string())?;
        {
            let mut stdin = child.stdin.take().expect("stdin is piped");
            stdin.write_all(&body).map_err(|e| format!("writing request: {e}"))?;
        }
        let out = child.wait_with_output().map_err(|e| format!("waiting for `{}`: {e}", self.id))?;
        if !out.status.success() {
            return Err(format!(
                "`{}` exited with {}: {}",
                self.id,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        let v: Json = serde_json::from_slice(&out.stdout).map_err(|e| format!("`{}` answered invalid JSON: {e}", self.id))?;
        let resp: AltResponse = serde_json::from_value(v).map_err(|e| format!("`{}` answered {e}", self.id))?;
        Ok(resp.program)
    }
}
