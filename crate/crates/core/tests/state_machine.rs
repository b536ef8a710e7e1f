use promptcrafter_core::{QaPair, Session, SessionError, StepId};
use promptcrafter_testkit::{
    arb_op, fresh_session, generation, ready_to_confirm, run_checked, Limits,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn invariants_hold_along_random_walks(ops in prop::collection::vec(arb_op(), 1..60)) {
        if let Err(msg) = run_checked(&ops, Limits::UNBOUNDED) {
            prop_assert!(false, "{}", msg);
        }
    }

    #[test]
    fn revert_never_removes_nodes(ops in prop::collection::vec(arb_op(), 1..60), pick in any::<usize>()) {
        let s = run_checked(&ops, Limits::UNBOUNDED).unwrap();
        let confirmed: Vec<StepId> = s.steps.iter().filter(|n| n.is_confirmed()).map(|n| n.id).collect();
        prop_assume!(!confirmed.is_empty());
        let target = confirmed[pick % confirmed.len()];
        let r = s.revert_to(target).unwrap();
        prop_assert_eq!(&r.steps[..s.steps.len()], &s.steps[..]);
        prop_assert_eq!(r.active_step().parent_id, s.step(target).unwrap().parent_id);
    }
}

/// Scripted three-step walk; the history is compared with a hand trace.
#[test]
fn history_follows_confirmation_order() {
    let mut s = fresh_session("a welsh corgi");
    let script = [
        ("sitting", "running"),
        ("in the forest", "on a beach"),
        ("dusk", "noon"),
    ];
    let mut expected = Vec::new();
    for (keep, other) in script {
        let step = s.active_step_id;
        s = ready_to_confirm(&s, [keep, other]);
        let question = s.active_step().selected_question.clone().unwrap().text;
        s = s.confirm_step(step, keep).unwrap();
        expected.push(QaPair::new(question, keep).unwrap());
    }
    assert_eq!(s.qa_history(s.active_step_id).unwrap(), expected);
    assert_eq!(s.qa_history(StepId(2)).unwrap(), expected[..2].to_vec());
    assert_eq!(
        s.qa_history(StepId(99)).unwrap_err(),
        SessionError::UnknownStep(StepId(99))
    );
}

#[test]
fn revert_then_confirm_other_answer_branches() {
    let mut s = fresh_session("a welsh corgi");
    for answers in [
        ["sitting", "running"],
        ["forest", "beach"],
        ["dusk", "noon"],
    ] {
        let step = s.active_step_id;
        s = ready_to_confirm(&s, answers);
        s = s.confirm_step(step, answers[0]).unwrap();
    }
    let before: Vec<Vec<u8>> = s
        .steps
        .iter()
        .map(|n| serde_json::to_vec(n).unwrap())
        .collect();
    let r = s.revert_to(StepId(2)).unwrap();
    assert_eq!(r.steps.len(), s.steps.len() + 1);
    let clone = r.active_step_id;
    let r = r.confirm_step(clone, "beach").unwrap();
    assert_eq!(r.children_of(Some(StepId(1))), vec![StepId(2), clone]);
    for (old, bytes) in before.iter().enumerate() {
        assert_eq!(&serde_json::to_vec(&r.steps[old]).unwrap(), bytes);
    }
    assert_eq!(r.qa_history(r.active_step_id).unwrap().len(), 2);
    assert_eq!(r.qa_history(r.active_step_id).unwrap()[1].answer, "beach");
}

#[test]
fn revert_of_root_adds_second_root() {
    let s = fresh_session("a welsh corgi");
    let s = ready_to_confirm(&s, ["sitting", "running"]);
    let s = s.confirm_step(StepId(1), "sitting").unwrap();
    let r = s.revert_to(StepId(1)).unwrap();
    assert_eq!(r.children_of(None).len(), 2);
    assert!(r.is_abandoned(StepId(2)));
    let r = r
        .attach_generation(r.active_step_id, "running", generation("running", 6))
        .unwrap();
    let r = r.confirm_step(r.active_step_id, "running").unwrap();
    r.validate().unwrap();
    assert_eq!(r.qa_history(r.active_step_id).unwrap()[0].answer, "running");
}

#[test]
fn confirm_requires_selected_answer() {
    let s: Session = ready_to_confirm(&fresh_session("x"), ["a", "b"]);
    assert_eq!(
        s.confirm_step(s.active_step_id, "zzz").unwrap_err(),
        SessionError::AnswerNotSelected("zzz".into())
    );
}
