mod common;

use std::sync::Arc;

use dsi_core::construct::DslProgram;
use dsi_core::fixtures;
use dsi_core::session::{SessionError, SessionStatus, StepStatus};
use indexmap::IndexMap;

use common::teapot_service;

fn ranks(pairs: &[(&str, u32)]) -> IndexMap<String, u32> {
    pairs.iter().map(|&(m, r)| (m.to_string(), r)).collect()
}

#[test]
fn unknown_domain_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let svc = teapot_service(dir.path());
    let err = svc.create_session("hovercraft").unwrap_err();
    assert!(matches!(err, SessionError::UnknownDomain(_)));
    assert_eq!(err.code(), "unknown_domain");
    assert_eq!(svc.domains(), vec!["teapot".to_string()]);
}

#[test]
fn sessions_get_distinct_ids_and_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let svc = teapot_service(dir.path());
    let a = svc.create_session("teapot").unwrap();
    let b = svc.create_session("teapot").unwrap();
    assert_ne!(a, b);
    let listed: Vec<_> = svc.list().unwrap().into_iter().map(|e| e.session_id).collect();
    assert_eq!(listed, vec![a, b]);
}

#[test]
fn empty_and_unknown_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let svc = teapot_service(dir.path());
    let id = svc.create_session("teapot").unwrap();
    assert!(matches!(svc.step(&id, "   "), Err(SessionError::EmptyInstruction)));
    assert!(matches!(svc.step("nope", "a teapot"), Err(SessionError::UnknownSession(_))));
    assert!(matches!(svc.scene(&id, 1), Err(SessionError::UnknownStep(1))));
    assert!(svc.scene(&id, 0).unwrap().parts.is_empty());
}

#[test]
fn failed_step_keeps_state_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let svc = teapot_service(dir.path());
    let id = svc.create_session("teapot").unwrap();
    let bad = svc.step(&id, "qwerty zxcvb plugh").unwrap();
    assert_eq!(bad.status, StepStatus::Failed);
    assert!(bad.error.is_some());
    assert!(bad.program.parts.is_empty());
    let lines = fixtures::transcript("teapot").unwrap();
    let good = svc.step(&id, lines[0]).unwrap();
    assert_eq!(good.status, StepStatus::Ok, "{:?}", good.error);
    assert_eq!(good.index, 2);
    let s = svc.summary(&id).unwrap();
    assert_eq!((s.steps, s.remaining), (2, 8));
}

#[test]
fn session_completes_after_max_steps() {
    let dir = tempfile::tempdir().unwrap();
    let svc = teapot_service(dir.path());
    let id = svc.create_session("teapot").unwrap();
    let lines = fixtures::transcript("teapot").unwrap();
    for line in &lines {
        svc.step(&id, line).unwrap();
    }
    assert_eq!(svc.summary(&id).unwrap().status, SessionStatus::Complete);
    let err = svc.step(&id, lines[0]).unwrap_err();
    assert!(matches!(err, SessionError::SessionComplete { max_steps: 10, .. }));

    // History replays to the current program.
    let history = svc.history(&id).unwrap();
    let deltas: Vec<_> = history.iter().flat_map(|r| r.delta.clone()).collect();
    assert_eq!(DslProgram::replay(&deltas), svc.session(&id).unwrap().current);

    // Every step has a non-empty scene.
    for n in 1..=10 {
        assert!(!svc.scene(&id, n).unwrap().parts.is_empty(), "step {n}");
    }

    // State survives reopening the data directory.
    let before = svc.session(&id).unwrap();
    drop(svc);
    let again = teapot_service(dir.path());
    assert_eq!(again.session(&id).unwrap(), before);
}

#[test]
fn rankings_are_validated_and_stored() {
    let dir = tempfile::tempdir().unwrap();
    let svc = teapot_service(dir.path());
    let id = svc.create_session("teapot").unwrap();
    svc.step(&id, fixtures::transcript("teapot").unwrap()[0]).unwrap();
    assert!(matches!(svc.rank_step(&id, 0, ranks(&[("ours", 1)]), false), Err(SessionError::UnknownStep(0))));
    assert!(matches!(svc.rank_step(&id, 2, ranks(&[("ours", 1)]), false), Err(SessionError::UnknownStep(2))));
    assert!(matches!(svc.rank_step(&id, 1, ranks(&[("other", 1)]), false), Err(SessionError::InvalidRank(_))));
    assert!(matches!(svc.rank_step(&id, 1, ranks(&[("ours", 2)]), false), Err(SessionError::InvalidRank(_))));
    let r = svc.rank_step(&id, 1, ranks(&[("ours", 1)]), true).unwrap();
    assert!(r.partial);
    assert_eq!(svc.history(&id).unwrap()[0].ranking.as_ref(), Some(&r));
    drop(svc);
    assert_eq!(teapot_service(dir.path()).session(&id).unwrap().rankings(), vec![r]);
}

#[test]
fn concurrent_steps_on_one_session_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Arc::new(teapot_service(dir.path()));
    let id = svc.create_session("teapot").unwrap();
    let lines = fixtures::transcript("teapot").unwrap();
    let handles: Vec<_> = lines[..4]
        .iter()
        .map(|line| {
            let (svc, id, line) = (svc.clone(), id.clone(), line.to_string());
            std::thread::spawn(move || svc.step(&id, &line).unwrap().index)
        })
        .collect();
    let mut indices: Vec<u32> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    indices.sort();
    assert_eq!(indices, vec![1, 2, 3, 4]);
    let history = svc.history(&id).unwrap();
    assert_eq!(history.iter().map(|r| r.index).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
}
