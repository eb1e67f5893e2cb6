mod common;

use std::collections::HashSet;

use fsd_core::geomatch::ActionKind;
use fsd_harness::{oracle_check, replay};

#[test]
fn golden_logs_match() {
    let goldens = common::goldens();
    assert!(goldens.len() >= 5);
    for g in &goldens {
        let r = replay(&g.events, &g.config).unwrap();
        assert_eq!(r.log_text(), g.expected_log, "{}", g.name);
        assert!(r.conservation.holds(), "{}: {:?}", g.name, r.conservation);
        assert_eq!(r.dead_letters, 0, "{}", g.name);
    }
}

#[test]
fn golden_replays_are_byte_identical() {
    for g in common::goldens() {
        let a = replay(&g.events, &g.config).unwrap().log_text();
        let b = replay(&g.events, &g.config).unwrap().log_text();
        assert_eq!(a, b, "{}", g.name);
    }
}

#[test]
fn goldens_agree_with_the_oracle() {
    for g in common::goldens() {
        let r = oracle_check(&g.events, &g.config).unwrap();
        assert!(r.passed(), "{}: {:?}", g.name, r.divergence);
    }
}

#[test]
fn every_golden_question_ends_once() {
    for g in common::goldens() {
        let r = replay(&g.events, &g.config).unwrap();
        let mut terminal = HashSet::new();
        for a in r.actions.iter().filter(|a| matches!(a.kind, ActionKind::Send | ActionKind::Retire)) {
            assert!(terminal.insert(a.question_id.clone()), "{}: {a}", g.name);
        }
    }
}
