//! Bundled fixture data: catalogs, reference programs, stub knowledge tables
//! and instruction transcripts. Used by tests, the CLI's stub mode and demos.

pub const MINI_CATALOG: &str = include_str!("../fixtures/catalog/mini.json");
pub const CSG_CATALOG: &str = include_str!("../fixtures/catalog/csg.json");

pub const PROGRAMS: [(&str, &str); 3] = [
    ("teapot", include_str!("../fixtures/programs/teapot.json")),
    ("toaster", include_str!("../fixtures/programs/toaster.json")),
    ("wheelbarrow", include_str!("../fixtures/programs/wheelbarrow.json")),
];

pub const STUBS: [(&str, &str); 6] = [
    ("teapot", include_str!("../fixtures/knowledge/teapot.json")),
    ("toaster", include_str!("../fixtures/knowledge/toaster.json")),
    ("wheelbarrow", include_str!("../fixtures/knowledge/wheelbarrow.json")),
    ("sofa", include_str!("../fixtures/knowledge/sofa.json")),
    ("closed_world", include_str!("../fixtures/knowledge/closed_world.json")),
    ("three_state", include_str!("../fixtures/knowledge/three_state.json")),
];

pub const TRANSCRIPTS: [(&str, &str); 3] = [
    ("teapot", include_str!("../fixtures/transcripts/teapot.txt")),
    ("toaster", include_str!("../fixtures/transcripts/toaster.txt")),
    ("sofa", include_str!("../fixtures/transcripts/sofa.txt")),
];

fn lookup(table: &[(&'static str, &'static str)], name: &str) -> Option<&'static str> {
    table.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn program(domain: &str) -> Option<&'static str> {
    lookup(&PROGRAMS, domain)
}

pub fn stub(domain: &str) -> Option<&'static str> {
    lookup(&STUBS, domain)
}

/// Instructions of a transcript, one per line.
pub fn transcript(domain: &str) -> Option<Vec<&'static str>> {
    lookup(&TRANSCRIPTS, domain).map(|t| t.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_stub_parses() {
        for (name, text) in STUBS {
            let ks = crate::knowledge::StubKnowledge::from_json(text).unwrap();
            assert_eq!(ks.fixture().domain, name);
        }
        assert_eq!(transcript("teapot").unwrap().len(), 10);
    }
}
