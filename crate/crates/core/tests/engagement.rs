mod common;

use engage::engagement::{
    grounding_within, interpret_nod, on_event, EngagementConfig, EngagementEvent, EngagementState, NodContext,
    NodInterpretation, Phase,
};
use proptest::prelude::*;

fn intervals() -> impl Strategy<Value = Vec<(u64, Option<u64>)>> {
    prop::collection::vec((0u64..5000, prop::option::of(1u64..3000)), 0..6).prop_map(|v| {
        let mut t = 0;
        let n = v.len();
        v.into_iter()
            .enumerate()
            .map(|(i, (gap, len))| {
                let a = t + gap;
                // only the last interval may still be open
                let b = if i + 1 == n { len.map(|l| a + l) } else { Some(a + len.unwrap_or(1)) };
                t = b.unwrap_or(a);
                (a, b)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn acknowledgement_needs_a_recent_grounding_point(
        g in intervals(), t in 0u64..30_000, window in 1u64..3000, ended: bool, speaking: bool
    ) {
        let ctx = NodContext { ended, robot_speaking: speaking, grounding: &g, window };
        let held = (t.saturating_sub(window)..=t).any(|u| g.iter().any(|&(a, b)| a <= u && b.is_none_or(|b| u < b)));
        prop_assert_eq!(grounding_within(&g, t, window), held);
        if interpret_nod(t, &ctx) == NodInterpretation::Acknowledgement {
            prop_assert!(held && !ended);
        }
    }

    #[test]
    fn random_rule_schedules_keep_invariants(seed in any::<u64>()) {
        let bad = common::random_engagement_schedule(seed);
        prop_assert!(bad.is_empty(), "{:?}", bad);
    }

    #[test]
    fn ended_ignores_everything(t in any::<u32>(), k in 0usize..4) {
        let s = EngagementState { phase: Phase::Ended, ..EngagementState::default() };
        let e = [EngagementEvent::FaceFound, EngagementEvent::Approach, EngagementEvent::Tick, EngagementEvent::InteractionDone][k].clone();
        let (next, _) = on_event(&s, u64::from(t), &e, &EngagementConfig::default());
        prop_assert_eq!(next.phase, Phase::Ended);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_engine_sessions_keep_invariants(seed in any::<u64>()) {
        let r = common::random_session(seed);
        prop_assert!(r.violations.is_empty(), "{:?}", r.violations);
    }
}

#[test]
fn uptake_timeout_asks_whether_to_end() {
    let cfg = EngagementConfig::default();
    let s = EngagementState { phase: Phase::Engaged, uptake_deadline: Some(100), ..EngagementState::default() };
    let (next, acts) = on_event(&s, 100, &EngagementEvent::Tick, &cfg);
    assert!(next.asking_to_end);
    assert!(acts.contains(&engage::engagement::EngagementAction::InjectGoal(engage::recipe::ASK_TO_END_GOAL.into())));
    // a second silence closes the conversation
    let s = EngagementState { uptake_deadline: Some(200), ..next };
    let (next, _) = on_event(&s, 200, &EngagementEvent::Tick, &cfg);
    assert_eq!(next.phase, Phase::ClosingRitual);
}
