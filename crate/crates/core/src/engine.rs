//! Event-driven coupling of the conversational, engagement and sensorimotor
//! layers on one simulation clock.
//!
//! Clients feed protocol messages through [`Engine::accept`]; internal
//! timers (speech progress, glances, sensor delays, timeouts) fire from
//! [`Engine::advance_to`]. Everything observable lands in the trace.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::discourse::{
    Discourse, DiscourseEvent, ExpectKind, Expectation, Interpretation, NextAct, Note, PlannedSay,
};
use crate::engagement::{
    check_look_expectation, interpret_nod, on_event, EngagementAction, EngagementConfig, EngagementEvent,
    EngagementState, LookCheck, NodContext, NodInterpretation, Phase,
};
use crate::protocol::{Body, DecodeError, Decoder, Expect, Message, Sequencer, Source};
use crate::recipe::{Gesture, RecipeLibrary};
use crate::sensorimotor::{
    arbitrate, fuse, FaceTracker, Mode, MotorCommand, MotorOutcome, MotorState, RawEvent, SemanticEvent,
    DEFAULT_GLANCE_MS,
};
use crate::world::{Actor, HeadPose, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub engagement: EngagementConfig,
    /// Speaking time per word.
    pub word_ms: u64,
    /// Pause before the robot takes its next turn.
    pub turn_gap_ms: u64,
    pub glance_ms: u64,
    pub nod_ms: u64,
    /// Nods reported with a lower probability are ignored.
    pub nod_threshold: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            engagement: EngagementConfig::default(),
            word_ms: 300,
            turn_gap_ms: 400,
            glance_ms: DEFAULT_GLANCE_MS,
            nod_ms: 600,
            nod_threshold: 0.5,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.engagement.validate()?;
        if self.word_ms == 0 || self.glance_ms == 0 || self.nod_ms == 0 {
            return Err("word, glance and nod durations must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.nod_threshold) {
            return Err("nod_threshold must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub t: u64,
    pub text: String,
}

#[derive(Debug, Clone)]
struct Speaking {
    say: PlannedSay,
    end: u64,
    gestures: VecDeque<(u64, Gesture)>,
}

/// Wire form of a dialogue expectation.
pub fn expectation_wire(kind: &ExpectKind) -> (Expect, Option<String>) {
    match kind {
        ExpectKind::UserSpeech => (Expect::Speech, None),
        ExpectKind::Grounding => (Expect::Grounding, None),
        ExpectKind::UserLookAt(o) => (Expect::Look, Some(o.clone())),
        ExpectKind::UserAction { from, to } => (Expect::Action, Some(format!("{from}:{to}"))),
    }
}

#[derive(Debug, Clone)]
pub struct Engine {
    cfg: EngineConfig,
    world: World,
    discourse: Discourse,
    engagement: EngagementState,
    motor: MotorState,
    tracker: FaceTracker,
    mode: Option<Mode>,
    now: u64,
    seq: Sequencer,
    decoder: Decoder,
    trace: Vec<Message>,
    outbox: Vec<Message>,
    log: Vec<LogEntry>,
    speaking: Option<Speaking>,
    nodding_until: Option<u64>,
    next_act_at: Option<u64>,
    readings: Vec<(u64, f64)>,
    published: BTreeMap<u64, Expect>,
    grounding: Vec<(u64, Option<u64>)>,
    human_pose: Option<HeadPose>,
    turn_ends: Vec<(u64, bool)>,
    done_notified: bool,
}

impl Engine {
    pub fn new(cfg: EngineConfig, lib: RecipeLibrary, world: World) -> Result<Self, String> {
        cfg.validate()?;
        let grace = cfg.engagement.face_lost_grace;
        Ok(Engine {
            cfg,
            world,
            discourse: Discourse::new(lib),
            engagement: EngagementState::default(),
            motor: MotorState::new(Mode::default()),
            tracker: FaceTracker::new(grace),
            mode: None,
            now: 0,
            seq: Sequencer::new(Source::Engine),
            decoder: Decoder::new(),
            trace: Vec::new(),
            outbox: Vec::new(),
            log: Vec::new(),
            speaking: None,
            nodding_until: None,
            next_act_at: None,
            readings: Vec::new(),
            published: BTreeMap::new(),
            grounding: Vec::new(),
            human_pose: None,
            turn_ends: Vec::new(),
            done_notified: false,
        })
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn mode(&self) -> Option<Mode> {
        self.mode
    }

    pub fn phase(&self) -> Phase {
        self.engagement.phase
    }

    pub fn engagement(&self) -> &EngagementState {
        &self.engagement
    }

    pub fn discourse(&self) -> &Discourse {
        &self.discourse
    }

    pub fn motor(&self) -> &MotorState {
        &self.motor
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn trace(&self) -> &[Message] {
        &self.trace
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Robot end-of-turn instants with whether the robot then faced the user.
    pub fn turn_ends(&self) -> &[(u64, bool)] {
        &self.turn_ends
    }

    /// Intervals during which a grounding point held.
    pub fn grounding_intervals(&self) -> &[(u64, Option<u64>)] {
        &self.grounding
    }

    pub fn render_history(&self) -> String {
        self.discourse.render_history()
    }

    /// Engine messages produced since the last call.
    pub fn take_output(&mut self) -> Vec<Message> {
        std::mem::take(&mut self.outbox)
    }

    fn note(&mut self, text: impl Into<String>) {
        self.log.push(LogEntry { t: self.now, text: text.into() });
    }

    fn emit(&mut self, body: Body) {
        let msg = self.seq.stamp(self.now, body);
        self.trace.push(msg.clone());
        self.outbox.push(msg);
    }

    // ---- timers ----

    fn look_deadline(&self, e: &Expectation) -> Option<u64> {
        let armed = e.armed_at?;
        match e.kind {
            ExpectKind::UserLookAt(_) => Some(armed + self.cfg.engagement.look_expectation_timeout),
            ExpectKind::UserAction { .. } if !e.noticed => Some(armed + self.cfg.engagement.action_patience),
            _ => None,
        }
    }

    fn wait_deadline(&self) -> Option<u64> {
        if self.speaking.is_some() || self.discourse.turn_open() {
            return None;
        }
        self.discourse.expectations().iter().filter_map(|e| self.look_deadline(e)).min()
    }

    /// Earliest pending internal event.
    pub fn next_due(&self) -> Option<u64> {
        if self.engagement.phase == Phase::Ended {
            return None;
        }
        let speech = self.speaking.as_ref().map(|s| s.gestures.front().map_or(s.end, |g| g.0.min(s.end)));
        [
            speech,
            self.nodding_until,
            self.motor.gesture_until,
            self.readings.iter().map(|r| r.0).min(),
            self.tracker.deadline(),
            self.engagement.next_deadline(),
            self.wait_deadline(),
            self.next_act_at,
        ]
        .into_iter()
        .flatten()
        .min()
    }

    /// Runs every internal event due at or before `t`, then moves the clock
    /// to `t`.
    pub fn advance_to(&mut self, t: u64) {
        while let Some(due) = self.next_due() {
            if due > t {
                break;
            }
            self.now = self.now.max(due);
            self.fire_due();
        }
        self.now = self.now.max(t);
    }

    fn fire_due(&mut self) {
        let now = self.now;
        if let Some(sp) = &mut self.speaking {
            let mut due = Vec::new();
            while sp.gestures.front().is_some_and(|g| g.0 <= now) {
                due.push(sp.gestures.pop_front().expect("gesture").1);
            }
            for g in due {
                self.gesture(g);
            }
        }
        if self.speaking.as_ref().is_some_and(|s| s.end <= now) {
            self.speech_ended();
        }
        if self.nodding_until.is_some_and(|n| n <= now) {
            self.nodding_until = None;
            self.want_act(now);
        }
        if self.motor.gesture_until.is_some_and(|g| g <= now) {
            self.motor_commands(&[]);
        }
        let (due, later): (Vec<_>, Vec<_>) = self.readings.iter().partition(|r| r.0 <= now);
        self.readings = later;
        for (_, fill) in due {
            self.emit(Body::TableReading { fill });
            let i = self.discourse.interpret(now, &DiscourseEvent::TableReading(fill));
            if i == Interpretation::ActionMet {
                self.engage(EngagementEvent::UserAction);
            }
        }
        if self.tracker.deadline().is_some_and(|d| d <= now) && self.tracker.poll(now) {
            self.engage(EngagementEvent::FaceLost);
        }
        if self.engagement.next_deadline().is_some_and(|d| d <= now) {
            self.engage(EngagementEvent::Tick);
        }
        if self.wait_deadline().is_some_and(|d| d <= now) {
            self.check_waits();
        }
        if self.next_act_at.is_some_and(|a| a <= now) {
            self.next_act_at = None;
            self.take_turn();
        }
        self.settle();
    }

    fn check_waits(&mut self) {
        let now = self.now;
        let exps: Vec<Expectation> = self.discourse.expectations().to_vec();
        for e in exps {
            if self.look_deadline(&e).is_none_or(|d| d > now) {
                continue;
            }
            match &e.kind {
                ExpectKind::UserLookAt(object) => {
                    let check = LookCheck { object: object.clone(), armed_at: e.armed_at, reformulated: e.reformulated };
                    let acts = check_look_expectation(&check, &[], now, &self.cfg.engagement);
                    self.apply(acts);
                }
                ExpectKind::UserAction { .. } => {
                    self.apply(vec![EngagementAction::AwaitNotice { act: "pour".into() }]);
                }
                _ => {}
            }
        }
    }

    fn want_act(&mut self, t: u64) {
        self.next_act_at = Some(self.next_act_at.map_or(t, |a| a.min(t)));
    }

    // ---- robot behavior ----

    fn take_turn(&mut self) {
        if self.speaking.is_some() || self.nodding_until.is_some() || self.engagement.phase == Phase::Ended {
            return;
        }
        if !self.discourse.started() {
            return;
        }
        match self.discourse.next_act() {
            NextAct::Say(s) => self.start_speaking(s),
            NextAct::Nod => {
                let now = self.now;
                let performed = self.mode == Some(Mode::Mover);
                if performed {
                    self.emit(Body::Nod { who: Actor::Robot, start: now, end: now + self.cfg.nod_ms, probability: 1.0 });
                    self.nodding_until = Some(now + self.cfg.nod_ms);
                } else {
                    self.note("suppressed robot nod: talker mode moves only the beak");
                    self.want_act(now);
                }
                self.discourse.nod_performed(now, performed);
            }
            NextAct::Wait | NextAct::Finished => {
                if self.discourse.turn_open() {
                    self.end_turn();
                }
            }
        }
    }

    fn start_speaking(&mut self, say: PlannedSay) {
        let now = self.now;
        let words = say.utterance.word_count().max(1) as u64;
        let duration = words * self.cfg.word_ms;
        self.discourse.act_started(now, &say);
        self.emit(Body::Say {
            text: say.utterance.text.clone(),
            act: say.kind.name().into(),
            end_of_turn: !say.chain,
            duration,
        });
        let gestures = say
            .utterance
            .gestures
            .iter()
            .map(|g| (now + g.word as u64 * self.cfg.word_ms, g.gesture.clone()))
            .collect();
        self.speaking = Some(Speaking { say, end: now + duration, gestures });
        let (m, _) = arbitrate(&self.motor, &[], true, now);
        self.motor = m;
    }

    fn gesture(&mut self, g: Gesture) {
        let cmd = match g {
            Gesture::Glance(target) => MotorCommand::GlanceAt { target, duration: self.cfg.glance_ms },
            Gesture::Point(target) => MotorCommand::PointAt { target, duration: self.cfg.glance_ms },
            Gesture::Beat => MotorCommand::Beat,
        };
        self.motor_commands(&[cmd]);
    }

    fn motor_commands(&mut self, cmds: &[MotorCommand]) {
        let speaking = self.speaking.is_some();
        let (m, outcomes) = arbitrate(&self.motor, cmds, speaking, self.now);
        self.motor = m;
        for o in outcomes {
            match o {
                MotorOutcome::Applied(c) => {
                    let body = match c {
                        MotorCommand::Orient { yaw, pitch } => Body::LookAt {
                            who: Actor::Robot,
                            object: Some("face".into()),
                            yaw: Some(yaw),
                            pitch: Some(pitch),
                        },
                        MotorCommand::FaceTrack | MotorCommand::ReturnToFace => {
                            Body::LookAt { who: Actor::Robot, object: Some("face".into()), yaw: None, pitch: None }
                        }
                        MotorCommand::GlanceAt { target, duration } => Body::GlanceAt { target, duration },
                        MotorCommand::PointAt { target, duration } => Body::PointAt { target, duration },
                        MotorCommand::Beat => Body::Beat {},
                        MotorCommand::LookAway => Body::LookAway {},
                    };
                    self.emit(body);
                }
                MotorOutcome::Suppressed { command, reason } => {
                    self.note(format!("suppressed {command:?}: {reason}"));
                }
                MotorOutcome::Returned => {
                    self.emit(Body::LookAt { who: Actor::Robot, object: Some("face".into()), yaw: None, pitch: None });
                }
            }
        }
    }

    fn speech_ended(&mut self) {
        let Some(sp) = self.speaking.take() else { return };
        let now = self.now;
        for (_, g) in sp.gestures {
            self.gesture(g);
        }
        self.discourse.act_finished(now);
        let (m, _) = arbitrate(&self.motor, &[], false, now);
        self.motor = m;
        if sp.say.chain {
            self.want_act(now);
        } else {
            self.end_turn();
        }
    }

    fn end_turn(&mut self) {
        let now = self.now;
        if self.mode == Some(Mode::Mover) && (self.motor.gesture_until.is_some() || !self.motor.faces_user()) {
            self.motor_commands(&[MotorCommand::ReturnToFace]);
        }
        self.turn_ends.push((now, self.motor.faces_user()));
        let te = self.discourse.end_turn(now);
        self.engage(EngagementEvent::RobotTurnEnd {
            awaiting_response: te.awaiting_response,
            awaits_action: te.awaits_action,
        });
        self.want_act(now + self.cfg.turn_gap_ms);
    }

    // ---- engagement ----

    fn engage(&mut self, event: EngagementEvent) {
        let (s, acts) = on_event(&self.engagement, self.now, &event, &self.cfg.engagement);
        self.engagement = s;
        self.apply(acts);
    }

    fn apply(&mut self, acts: Vec<EngagementAction>) {
        let now = self.now;
        for a in acts {
            match a {
                EngagementAction::Phase { phase, rule } => {
                    self.note(format!("engagement {phase:?} by {rule}"));
                    self.emit(Body::EngagementPhase { phase, rule });
                }
                EngagementAction::StartInteraction => {
                    if !self.discourse.started() {
                        self.discourse.record_unattached(now, "Got face.");
                        self.discourse.start(now);
                    }
                }
                EngagementAction::Say(text) => self.discourse.say_extra(&text),
                EngagementAction::InjectGoal(goal) => {
                    if !self.discourse.inject(&goal) {
                        self.note(format!("could not introduce goal `{goal}`"));
                    }
                }
                EngagementAction::Close { await_reply } => self.discourse.abort_to_closing(await_reply),
                EngagementAction::Resume => self.discourse.resume(),
                EngagementAction::SkipAwait => self.discourse.skip_await(),
                EngagementAction::Reformulate { object } => self.discourse.reformulate(now, &object),
                EngagementAction::ProceedWithoutLook { object } => self.discourse.proceed_without_look(&object),
                EngagementAction::AwaitNotice { act } => self.discourse.await_notice(&act),
                EngagementAction::LookAway => self.motor_commands(&[MotorCommand::LookAway]),
                EngagementAction::Log(text) => self.note(text),
            }
        }
    }

    /// Propagates discourse notifications, publishes expectation changes and
    /// updates the grounding record.
    fn settle(&mut self) {
        let now = self.now;
        loop {
            let notes = self.discourse.take_notes();
            if notes.is_empty() {
                break;
            }
            for n in notes {
                match n {
                    Note::GoalStarted(g) => self.engage(EngagementEvent::GoalStarted(g)),
                    Note::GoalDone(_) => {}
                    Note::Finished => {
                        if !self.done_notified {
                            self.done_notified = true;
                            self.engage(EngagementEvent::InteractionDone);
                        }
                    }
                    Note::Log(text) => self.note(text),
                }
            }
        }
        for (id, reason) in self.discourse.take_cleared() {
            if self.published.remove(&id).is_some() {
                self.emit(Body::ExpectationCleared { id, reason });
            }
        }
        let fresh: Vec<Expectation> = self
            .discourse
            .expectations()
            .iter()
            .filter(|e| !self.published.contains_key(&e.id))
            .cloned()
            .collect();
        for e in &fresh {
            let (expect, object) = expectation_wire(&e.kind);
            let deadline = self.look_deadline(e);
            self.published.insert(e.id, expect);
            self.emit(Body::ExpectationSet { id: e.id, expect, object, deadline });
        }
        if fresh.iter().any(|e| matches!(e.kind, ExpectKind::UserLookAt(_))) {
            if let Some(pose) = self.human_pose {
                self.fuse_pose(pose);
            }
            for (id, reason) in self.discourse.take_cleared() {
                if self.published.remove(&id).is_some() {
                    self.emit(Body::ExpectationCleared { id, reason });
                }
            }
        }
        let gp = self.discourse.grounding_point();
        match self.grounding.last_mut() {
            Some((_, end @ None)) if !gp => *end = Some(now),
            Some((_, None)) => {}
            _ if gp => self.grounding.push((now, None)),
            _ => {}
        }
        if self.speaking.is_none() && self.next_act_at.is_none() {
            self.want_act(now + self.cfg.turn_gap_ms);
        }
    }

    // ---- client input ----

    /// Decodes and accepts one client line. Failures are answered with an
    /// `Error` message and leave the session running.
    pub fn accept_line(&mut self, line: &str) -> Result<(), DecodeError> {
        let msg = match crate::protocol::decode(line) {
            Ok(m) => m,
            Err(e) => {
                self.reject(&e);
                return Err(e);
            }
        };
        self.accept(msg)
    }

    /// Answers an undecodable client line.
    pub fn reject(&mut self, e: &DecodeError) {
        self.emit(Body::Error { code: e.code().into(), detail: e.to_string() });
    }

    /// Accepts one client message. Messages stamped before the engine clock
    /// are handled at the current time.
    pub fn accept(&mut self, mut msg: Message) -> Result<(), DecodeError> {
        if let Err(e) = self.decoder.check(&msg) {
            self.emit(Body::Error { code: e.code().into(), detail: e.to_string() });
            return Err(e);
        }
        self.advance_to(msg.t);
        msg.t = self.now;
        msg.src = Source::Client;
        if self.mode.is_none() && !matches!(msg.body, Body::ModeSelect { .. }) {
            self.emit(Body::Error {
                code: "mode_required".into(),
                detail: format!("{} before ModeSelect", msg.kind()),
            });
            return Ok(());
        }
        if msg.body.is_engine_only() {
            self.emit(Body::Error {
                code: "engine_only".into(),
                detail: format!("clients may not send {}", msg.kind()),
            });
            return Ok(());
        }
        self.trace.push(msg.clone());
        self.handle(msg.body);
        self.settle();
        Ok(())
    }

    fn fuse_pose(&mut self, pose: HeadPose) {
        let expected: Vec<String> = self
            .discourse
            .expectations()
            .iter()
            .filter_map(|e| match &e.kind {
                ExpectKind::UserLookAt(o) => Some(o.clone()),
                _ => None,
            })
            .collect();
        if let Some(SemanticEvent::LookAt { who, object }) =
            fuse(&RawEvent::HumanPose(pose), &expected, self.speaking.is_some(), &self.world)
        {
            self.emit(Body::LookAt { who, object: Some(object.clone()), yaw: None, pitch: None });
            self.discourse.interpret(self.now, &DiscourseEvent::UserLook(object));
            self.want_act(self.now + self.cfg.turn_gap_ms);
        }
    }

    fn handle(&mut self, body: Body) {
        let now = self.now;
        match body {
            Body::ModeSelect { mode } => {
                if self.mode.is_some() && self.discourse.started() {
                    self.emit(Body::Error { code: "mode_locked".into(), detail: "mode already selected".into() });
                    return;
                }
                self.mode = Some(mode);
                self.motor = MotorState::new(mode);
            }
            Body::Approach {} => self.engage(EngagementEvent::Approach),
            Body::Leave {} => {
                self.tracker.observe(now, None);
                self.engage(EngagementEvent::Leave);
            }
            Body::FaceFound { yaw, pitch } => {
                let out = self.tracker.observe(now, Some((yaw, pitch)));
                if !self.motor.oriented {
                    self.motor_commands(&[MotorCommand::Orient { yaw, pitch }]);
                } else if out.head.is_some()
                    && self.mode == Some(Mode::Mover)
                    && self.motor.gesture_until.is_none()
                    && !self.motor.faces_user()
                    && self.engagement.phase != Phase::Ended
                {
                    self.motor_commands(&[MotorCommand::FaceTrack]);
                }
                self.engage(EngagementEvent::FaceFound);
            }
            Body::FaceLost {} => {
                if self.tracker.observe(now, None).face_lost {
                    self.engage(EngagementEvent::FaceLost);
                }
            }
            Body::LookAt { who: Actor::Human, object, yaw, pitch } => {
                let dir = match (yaw, pitch, &object) {
                    (Some(y), Some(p), _) => Some((y, p)),
                    (_, _, Some(o)) => self.world.direction_of(o),
                    _ => None,
                };
                let Some((y, p)) = dir else {
                    self.emit(Body::Error { code: "invalid_payload".into(), detail: "LookAt without direction".into() });
                    return;
                };
                match HeadPose::new(Actor::Human, y, p, now) {
                    Ok(pose) => {
                        self.human_pose = Some(pose);
                        self.fuse_pose(pose);
                    }
                    Err(e) => self.emit(Body::Error { code: "invalid_payload".into(), detail: e.to_string() }),
                }
            }
            Body::LookAt { who: Actor::Robot, .. } => {
                self.emit(Body::Error { code: "engine_only".into(), detail: "clients may not move the robot".into() });
            }
            Body::Utterance { who: Actor::Human, text } => {
                if self.speaking.is_some() {
                    self.note(format!("speech while robot speaking ignored: {text:?}"));
                    return;
                }
                let interp = self.discourse.interpret(now, &DiscourseEvent::UserSpeech(text.clone()));
                self.note(format!("user speech {text:?} -> {interp:?}"));
                match interp {
                    Interpretation::EndAnswer { affirm } => self.engage(EngagementEvent::AskToEndAnswer { affirm }),
                    Interpretation::Farewell if self.engagement.phase != Phase::ClosingRitual => {
                        self.engage(EngagementEvent::AskToEndAnswer { affirm: true })
                    }
                    _ => self.engage(EngagementEvent::UserSpeech(text)),
                }
                self.want_act(now + self.cfg.turn_gap_ms);
            }
            Body::Utterance { who: Actor::Robot, .. } => {
                self.emit(Body::Error { code: "engine_only".into(), detail: "clients speak for the human".into() });
            }
            Body::Nod { who: Actor::Human, start, end, probability } => {
                if probability < self.cfg.nod_threshold {
                    self.note(format!("nod {start}-{end} below threshold ({probability:.3})"));
                    return;
                }
                let ctx = NodContext {
                    ended: self.engagement.phase == Phase::Ended,
                    robot_speaking: self.speaking.is_some(),
                    grounding: &self.grounding,
                    window: self.cfg.engagement.nod_window,
                };
                let interp = interpret_nod(now, &ctx);
                self.note(format!("nod {start}-{end} read as {interp:?}"));
                if interp != NodInterpretation::Superfluous {
                    let ack = interp == NodInterpretation::Acknowledgement;
                    self.discourse.interpret(now, &DiscourseEvent::UserNod { ack });
                }
                self.engage(EngagementEvent::UserNod(interp));
                self.want_act(now + self.cfg.turn_gap_ms);
            }
            Body::Nod { who: Actor::Robot, .. } => {
                self.emit(Body::Error { code: "engine_only".into(), detail: "clients nod for the human".into() });
            }
            Body::Pour { from, to } => match self.world.apply_pour(&from, &to, now) {
                Ok(r) => {
                    self.readings.push((r.t, r.fill_fraction));
                    self.discourse.interpret(now, &DiscourseEvent::UserPour { from, to });
                }
                Err(e) => self.emit(Body::Error { code: "invalid_action".into(), detail: e.to_string() }),
            },
            other => {
                self.emit(Body::Error { code: "engine_only".into(), detail: format!("clients may not send {}", other.kind()) });
            }
        }
    }

    /// Closes the session: outstanding expectations are cleared.
    pub fn finish(&mut self) {
        let ids: Vec<u64> = self.published.keys().copied().collect();
        self.published.clear();
        for id in ids {
            self.emit(Body::ExpectationCleared { id, reason: "session_end".into() });
        }
        if let Some((_, end @ None)) = self.grounding.last_mut() {
            *end = Some(self.now);
        }
    }
}

/// Human-readable transcript: one line per robot turn segment and per user
/// utterance. A robot utterance that starts exactly when the previous one
/// ended continues the same line.
pub fn transcript(trace: &[Message]) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut mel_end: Option<u64> = None;
    for m in trace {
        match &m.body {
            Body::Say { text, duration, .. } if m.src == Source::Engine => {
                match (mel_end, lines.last_mut()) {
                    (Some(end), Some(last)) if end == m.t => {
                        last.push(' ');
                        last.push_str(text);
                    }
                    _ => lines.push(format!("Mel: {text}")),
                }
                mel_end = Some(m.t + duration);
            }
            Body::Utterance { who: Actor::Human, text } if m.src == Source::Client => {
                lines.push(format!("User: {text}"));
                mel_end = None;
            }
            _ => {}
        }
    }
    lines.into_iter().map(|l| l + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine(mode: Mode) -> (Engine, Sequencer) {
        let mut e = Engine::new(EngineConfig::default(), RecipeLibrary::iglassware(), World::default()).unwrap();
        let mut c = Sequencer::new(Source::Client);
        e.accept(c.stamp(0, Body::ModeSelect { mode })).unwrap();
        (e, c)
    }

    fn says(out: &[Message]) -> Vec<String> {
        out.iter()
            .filter_map(|m| match &m.body {
                Body::Say { text, .. } => Some(text.clone()),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn message_before_mode_select_is_refused() {
        let mut e = Engine::new(EngineConfig::default(), RecipeLibrary::iglassware(), World::default()).unwrap();
        let mut c = Sequencer::new(Source::Client);
        e.accept(c.stamp(0, Body::Approach {})).unwrap();
        let out = e.take_output();
        assert!(matches!(&out[0].body, Body::Error { code, .. } if code == "mode_required"));
        assert_eq!(e.phase(), Phase::Idle);
    }

    #[test]
    fn approach_and_face_start_greeting() {
        let (mut e, mut c) = engine(Mode::Mover);
        e.accept(c.stamp(0, Body::Approach {})).unwrap();
        e.accept(c.stamp(100, Body::FaceFound { yaw: 0.0, pitch: 0.0 })).unwrap();
        e.advance_to(600);
        let out = e.take_output();
        assert_eq!(says(&out), vec!["Hi, I'm Mel a robotic penguin."]);
        assert_eq!(e.phase(), Phase::Greeting);
        assert!(e.render_history().starts_with("Got face.\n"));
    }

    #[test]
    fn malformed_line_gets_error_and_session_continues() {
        let (mut e, _) = engine(Mode::Mover);
        assert!(e.accept_line("{\"seq\":").is_err());
        let out = e.take_output();
        assert!(matches!(&out[0].body, Body::Error { code, .. } if code == "syntax"));
        let mut c = Sequencer::new(Source::Client);
        c.stamp(0, Body::Beat {});
        assert!(e.accept(c.stamp(10, Body::Approach {})).is_ok());
        assert_eq!(e.phase(), Phase::Seeking);
    }

    #[test]
    fn silence_after_greeting_asks_to_end() {
        let (mut e, mut c) = engine(Mode::Mover);
        e.accept(c.stamp(0, Body::FaceFound { yaw: 0.0, pitch: 0.0 })).unwrap();
        e.advance_to(20_000);
        let s = says(&e.take_output());
        assert_eq!(s[1], "Would you like to end our conversation?");
    }

    #[test]
    fn talker_moves_only_once() {
        let (mut e, mut c) = engine(Mode::Talker);
        e.accept(c.stamp(0, Body::FaceFound { yaw: 5.0, pitch: 0.0 })).unwrap();
        e.advance_to(60_000);
        let motor: Vec<_> = e.trace().iter().filter(|m| m.body.is_motor()).collect();
        assert_eq!(motor.len(), 1, "{motor:?}");
    }

    #[test]
    fn transcript_joins_adjacent_says() {
        let mut s = Sequencer::new(Source::Engine);
        let mut c = Sequencer::new(Source::Client);
        let say = |text: &str| Body::Say { text: text.into(), act: "say".into(), end_of_turn: false, duration: 300 };
        let trace = vec![
            s.stamp(0, say("A.")),
            s.stamp(300, say("B.")),
            c.stamp(900, Body::Utterance { who: Actor::Human, text: "Ok.".into() }),
            s.stamp(1300, say("C.")),
            s.stamp(2000, say("D.")),
        ];
        assert_eq!(transcript(&trace), "Mel: A. B.\nUser: Ok.\nMel: C.\nMel: D.\n");
    }
}
