//! Generators and checkers shared by the integration tests.
#![allow(dead_code)]

use engage::engagement::{EngagementState, Phase};
use engage::engine::{Engine, EngineConfig};
use engage::protocol::{Body, Expect, Message, Sequencer, Source};
use engage::recipe::{RecipeLibrary, ASK_TO_END_GOAL};
use engage::sensorimotor::Mode;
use engage::world::{Actor, World};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GOLDEN: &str = include_str!("../../fixtures/protocol.golden");

/// The messages spelled out in `fixtures/protocol.golden`, built by hand.
pub fn golden_messages() -> Vec<Message> {
    let c = |seq, t, body| Message::new(seq, t, Source::Client, body);
    let e = |seq, t, body| Message::new(seq, t, Source::Engine, body);
    vec![
        c(1, 0, Body::ModeSelect { mode: Mode::Mover }),
        c(2, 120, Body::Approach {}),
        c(3, 480, Body::FaceFound { yaw: 2.5, pitch: -1.0 }),
        e(1, 500, Body::EngagementPhase { phase: Phase::Greeting, rule: "face_found".into() }),
        e(2, 500, Body::LookAt { who: Actor::Robot, object: Some("face".into()), yaw: None, pitch: None }),
        e(
            3,
            900,
            Body::Say {
                text: "Hi, I'm Mel a robotic penguin.".into(),
                act: "say".into(),
                end_of_turn: true,
                duration: 1800,
            },
        ),
        e(4, 900, Body::ExpectationSet { id: 1, expect: Expect::Speech, object: None, deadline: Some(7700) }),
        c(4, 3100, Body::Utterance { who: Actor::Human, text: "Hi.".into() }),
        e(5, 3100, Body::ExpectationCleared { id: 1, reason: "met".into() }),
        e(6, 4200, Body::PointAt { target: "cup".into(), duration: 1200 }),
        e(7, 4300, Body::Beat {}),
        e(8, 5400, Body::GlanceAt { target: "readout".into(), duration: 1200 }),
        e(9, 6600, Body::ExpectationSet { id: 2, expect: Expect::Look, object: Some("cup".into()), deadline: None }),
        c(5, 6900, Body::LookAt { who: Actor::Human, object: None, yaw: Some(-40.25), pitch: Some(-20.0) }),
        e(10, 6900, Body::LookAt { who: Actor::Human, object: Some("cup".into()), yaw: None, pitch: None }),
        c(6, 9000, Body::Nod { who: Actor::Human, start: 8400, end: 8950, probability: 0.875 }),
        c(7, 12000, Body::Pour { from: "pitcher".into(), to: "cup".into() }),
        e(11, 13500, Body::TableReading { fill: 0.6 }),
        c(8, 20000, Body::FaceLost {}),
        e(
            12,
            22000,
            Body::Error { code: "syntax".into(), detail: "malformed line at byte 0: \"quoted\"\ttab".into() },
        ),
        c(9, 23000, Body::Leave {}),
        e(13, 24000, Body::LookAway {}),
    ]
}

const WORDS: &[&str] = &["cup", "readout", "pitcher", "table", "face", "robot", "ok", "ünïcode", "a\"b", "tab\there", "line\nbreak", ""];

fn text(rng: &mut impl Rng) -> String {
    let n = rng.random_range(0..5);
    (0..n).map(|_| *WORDS.choose(rng).expect("words")).collect::<Vec<_>>().join(" ")
}

fn real(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => 0.0,
        1 => f64::from(rng.random_range(-90i32..=90)),
        2 => rng.random_range(-90.0..90.0),
        _ => rng.random::<f64>() * 1e-7,
    }
}

fn actor(rng: &mut impl Rng) -> Actor {
    if rng.random_bool(0.5) {
        Actor::Robot
    } else {
        Actor::Human
    }
}

fn time(rng: &mut impl Rng) -> u64 {
    rng.random_range(0..10_000_000)
}

/// One message body of the given kind index (see `protocol::KINDS`).
pub fn random_body(rng: &mut impl Rng, kind: usize) -> Body {
    match kind {
        0 => Body::Utterance { who: actor(rng), text: text(rng) },
        1 => {
            let object = rng.random_bool(0.5).then(|| text(rng));
            let yaw = rng.random_bool(0.5).then(|| real(rng));
            let pitch = rng.random_bool(0.5).then(|| real(rng));
            Body::LookAt { who: actor(rng), object, yaw, pitch }
        }
        2 => {
            let start = time(rng);
            Body::Nod { who: actor(rng), start, end: start + rng.random_range(0..2000), probability: rng.random() }
        }
        3 => Body::FaceFound { yaw: real(rng), pitch: real(rng) },
        4 => Body::FaceLost {},
        5 => Body::Approach {},
        6 => Body::Leave {},
        7 => Body::Pour { from: text(rng), to: text(rng) },
        8 => Body::TableReading { fill: rng.random() },
        9 => Body::Say { text: text(rng), act: text(rng), end_of_turn: rng.random(), duration: time(rng) },
        10 => Body::GlanceAt { target: text(rng), duration: time(rng) },
        11 => Body::PointAt { target: text(rng), duration: time(rng) },
        12 => Body::Beat {},
        13 => Body::LookAway {},
        14 => {
            let expect = *[Expect::Speech, Expect::Grounding, Expect::Look, Expect::Action].choose(rng).expect("expect");
            let object = rng.random_bool(0.5).then(|| text(rng));
            let deadline = rng.random_bool(0.5).then(|| time(rng));
            Body::ExpectationSet { id: rng.random(), expect, object, deadline }
        }
        15 => Body::ExpectationCleared { id: rng.random(), reason: text(rng) },
        16 => {
            let phase = *[
                Phase::Idle,
                Phase::Seeking,
                Phase::Greeting,
                Phase::Engaged,
                Phase::ReEngaging,
                Phase::ClosingRitual,
                Phase::Ended,
            ]
            .choose(rng)
            .expect("phase");
            Body::EngagementPhase { phase, rule: text(rng) }
        }
        17 => Body::ModeSelect { mode: if rng.random() { Mode::Mover } else { Mode::Talker } },
        _ => Body::Error { code: text(rng), detail: text(rng) },
    }
}

pub fn random_message(rng: &mut impl Rng) -> Message {
    let kind = rng.random_range(0..engage::protocol::KINDS.len());
    let src = if rng.random() { Source::Client } else { Source::Engine };
    Message::new(rng.random(), rng.random_range(0..u64::MAX / 2), src, random_body(rng, kind))
}

/// Outcome of one randomized engine session.
#[derive(Debug, Default)]
pub struct SessionReport {
    pub mode: Option<Mode>,
    pub violations: Vec<String>,
    pub ended: bool,
    pub acks: usize,
    pub asks: usize,
}

const LINES: &[&str] = &["Yes.", "Ok.", "No.", "Sure", "what is that?", "I have to go.", "Sam.", "hmm"];
const TARGETS: &[&str] = &["cup", "readout", "pitcher", "table", "robot"];

fn client_event(rng: &mut impl Rng, t: u64) -> Body {
    match rng.random_range(0..100) {
        0..=29 => Body::Utterance { who: Actor::Human, text: (*LINES.choose(rng).expect("line")).into() },
        30..=44 => {
            let start = t.saturating_sub(rng.random_range(300..1500));
            Body::Nod { who: Actor::Human, start, end: t, probability: rng.random() }
        }
        45..=64 => Body::LookAt {
            who: Actor::Human,
            object: Some((*TARGETS.choose(rng).expect("target")).into()),
            yaw: None,
            pitch: None,
        },
        65..=74 => Body::LookAt {
            who: Actor::Human,
            object: None,
            yaw: Some(rng.random_range(-90.0..90.0)),
            pitch: Some(rng.random_range(-60.0..30.0)),
        },
        75..=84 => Body::FaceFound { yaw: rng.random_range(-10.0..10.0), pitch: rng.random_range(-10.0..10.0) },
        85..=89 => Body::Pour { from: "pitcher".into(), to: "cup".into() },
        90..=93 => Body::FaceLost {},
        94..=96 => Body::Approach {},
        _ => Body::Leave {},
    }
}

fn ask_segments(e: &Engine) -> usize {
    e.discourse().segments().iter().filter(|s| s.goal.as_deref() == Some(ASK_TO_END_GOAL)).count()
}

struct Checker {
    report: SessionReport,
    ended_at: Option<usize>,
}

impl Checker {
    /// Called after the engine moved from `before` through one step.
    fn step(&mut self, before: &EngagementState, asks_before: usize, e: &Engine) {
        let after = e.engagement();
        if before.phase == Phase::Ended && after.phase != Phase::Ended {
            self.report.violations.push(format!("left Ended for {:?} at {}", after.phase, after.now));
        }
        if after.asking_to_end && !before.asking_to_end {
            self.report.asks += 1;
            if ask_segments(e) <= asks_before {
                self.report.violations.push(format!("ask-to-end raised at {} without its goal", after.now));
            }
        }
        if after.phase == Phase::Ended && self.ended_at.is_none() {
            self.ended_at = Some(e.trace().len());
        }
    }
}

fn step_until(e: &mut Engine, t: u64, chk: &mut Checker) {
    while let Some(due) = e.next_due() {
        if due > t {
            break;
        }
        let before = e.engagement().clone();
        let asks = ask_segments(e);
        e.advance_to(due);
        chk.step(&before, asks, e);
    }
}

/// Drives a fresh engine with a random client schedule and checks the
/// engagement invariants against what the engine exposes.
pub fn random_session(seed: u64) -> SessionReport {
    let cfg = EngineConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = Engine::new(cfg.clone(), RecipeLibrary::iglassware(), World::default()).expect("engine");
    let mut seq = Sequencer::new(Source::Client);
    let mut chk = Checker { report: SessionReport::default(), ended_at: None };
    let mode = if rng.random_bool(0.5) { Mode::Mover } else { Mode::Talker };
    chk.report.mode = Some(mode);
    let mut t = 0;
    let mut script = vec![Body::ModeSelect { mode }];
    if rng.random_bool(0.7) {
        script.push(Body::Approach {});
    }
    script.push(Body::FaceFound { yaw: rng.random_range(-5.0..5.0), pitch: rng.random_range(-5.0..5.0) });
    let n = rng.random_range(10..60);
    for i in 0..script.len() + n {
        let body = match script.get(i) {
            Some(b) => b.clone(),
            None => {
                t += rng.random_range(50..6000);
                client_event(&mut rng, t)
            }
        };
        step_until(&mut e, t, &mut chk);
        let before = e.engagement().clone();
        let asks = ask_segments(&e);
        let _ = e.accept(seq.stamp(t, body));
        chk.step(&before, asks, &e);
    }
    step_until(&mut e, t + 300_000, &mut chk);
    let before = e.engagement().clone();
    e.finish();
    chk.step(&before, ask_segments(&e), &e);

    let r = &mut chk.report;
    r.ended = e.phase() == Phase::Ended;
    if mode == Mode::Mover {
        for &(at, faces) in e.turn_ends() {
            if !faces {
                r.violations.push(format!("mover turn ended at {at} without facing the user"));
            }
        }
    }
    let window = cfg.engagement.nod_window;
    let grounding = e.grounding_intervals();
    for entry in e.log() {
        if entry.text.contains("read as Acknowledgement") {
            r.acks += 1;
            // independent restatement of the window test
            let lo = entry.t.saturating_sub(window);
            let held = grounding.iter().any(|&(a, b)| a <= entry.t && b.is_none_or(|b| b > lo));
            if !held {
                r.violations.push(format!("acknowledgement at {} outside the grounding window", entry.t));
            }
        }
        if entry.text.contains(&format!("could not introduce goal `{ASK_TO_END_GOAL}`")) {
            r.violations.push(format!("ask-to-end goal refused at {}", entry.t));
        }
    }
    if let Some(cut) = chk.ended_at {
        for m in &e.trace()[cut..] {
            if m.src == Source::Engine && (m.body.is_motor() || matches!(m.body, Body::Say { .. } | Body::EngagementPhase { .. })) {
                r.violations.push(format!("{} emitted after Ended", m.kind()));
            }
        }
    }
    chk.report
}

/// Feeds a random event schedule straight to the engagement rules and checks
/// the timeout and absorption invariants on every transition.
pub fn random_engagement_schedule(seed: u64) -> Vec<String> {
    use engage::engagement::{on_event, EngagementAction, EngagementConfig, EngagementEvent as E, NodInterpretation};
    let cfg = EngagementConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = EngagementState::default();
    let mut t = 0;
    let mut bad = Vec::new();
    for _ in 0..rng.random_range(5..80) {
        let event = match rng.random_range(0..16) {
            0 => E::Approach,
            1 | 2 => E::FaceFound,
            3 => E::FaceLost,
            4 => E::Leave,
            5 => E::UserSpeech((*LINES.choose(&mut rng).expect("line")).into()),
            6 => E::UserNod(
                *[NodInterpretation::Acknowledgement, NodInterpretation::Backchannel, NodInterpretation::Superfluous]
                    .choose(&mut rng)
                    .expect("nod"),
            ),
            7 => E::UserAction,
            8 | 9 => E::RobotTurnEnd { awaiting_response: rng.random(), awaits_action: rng.random() },
            10 => E::AskToEndAnswer { affirm: rng.random() },
            11 => E::GoalStarted((*["closing", "ask_to_end", "re_engage", "demo"].choose(&mut rng).expect("goal")).into()),
            12 => E::InteractionDone,
            _ => E::Tick,
        };
        t += match (&event, s.next_deadline()) {
            (E::Tick, Some(d)) if rng.random_bool(0.8) => d.saturating_sub(t),
            _ => rng.random_range(0..4000),
        };
        let (next, acts) = on_event(&s, t, &event, &cfg);
        let timed_out = event == E::Tick
            && matches!(s.phase, Phase::Greeting | Phase::Engaged)
            && !s.asking_to_end
            && s.uptake_deadline.is_some_and(|d| d <= t);
        if timed_out {
            let injected = acts.iter().any(|a| *a == EngagementAction::InjectGoal(ASK_TO_END_GOAL.into()));
            if !injected || !next.asking_to_end {
                bad.push(format!("seed {seed}: uptake timeout at {t} gave {acts:?}"));
            }
        }
        if s.phase == Phase::Ended {
            if next.phase != Phase::Ended {
                bad.push(format!("seed {seed}: {event:?} left Ended"));
            }
            if acts.iter().any(|a| !matches!(a, EngagementAction::Log(_))) {
                bad.push(format!("seed {seed}: {event:?} acted after Ended: {acts:?}"));
            }
        }
        s = next;
    }
    bad
}
