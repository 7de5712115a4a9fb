//! Engagement rules: starting, maintaining and ending the connection with
//! the visitor. The transition function is pure; the engine applies the
//! returned actions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::recipe::{ASK_TO_END_GOAL, CLOSING_GOAL, RE_ENGAGE_GOAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Seeking,
    Greeting,
    Engaged,
    ReEngaging,
    ClosingRitual,
    Ended,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// What confirms the interlocutor during the greeting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GreetingConfirm {
    Speech,
    Proximity,
    Either,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementConfig {
    pub turn_uptake_timeout: u64,
    pub look_expectation_timeout: u64,
    pub face_lost_grace: u64,
    /// Nods up to this long after a grounding point count as acknowledgements.
    pub nod_window: u64,
    /// Wait for evidence of a user action before saying so.
    pub action_patience: u64,
    pub greeting_confirm: GreetingConfirm,
    pub greeting: String,
}

impl Default for EngagementConfig {
    fn default() -> Self {
        EngagementConfig {
            turn_uptake_timeout: 5000,
            look_expectation_timeout: 3000,
            face_lost_grace: 2000,
            nod_window: 1000,
            action_patience: 1500,
            greeting_confirm: GreetingConfirm::Either,
            greeting: "Hi, I'm Mel a robotic penguin.".into(),
        }
    }
}

impl EngagementConfig {
    pub fn validate(&self) -> Result<(), String> {
        let timeouts = [
            ("turn_uptake_timeout", self.turn_uptake_timeout),
            ("look_expectation_timeout", self.look_expectation_timeout),
            ("face_lost_grace", self.face_lost_grace),
            ("nod_window", self.nod_window),
            ("action_patience", self.action_patience),
        ];
        match timeouts.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(format!("{name} must be positive")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodInterpretation {
    Acknowledgement,
    Backchannel,
    Superfluous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementState {
    pub phase: Phase,
    pub now: u64,
    pub last_face_seen: Option<u64>,
    pub last_user_turn: Option<u64>,
    pub approached: bool,
    pub departed: bool,
    pub uptake_deadline: Option<u64>,
    /// The ask-to-end goal is outstanding.
    pub asking_to_end: bool,
    pub reengage_deadline: Option<u64>,
}

impl Default for EngagementState {
    fn default() -> Self {
        EngagementState {
            phase: Phase::Idle,
            now: 0,
            last_face_seen: None,
            last_user_turn: None,
            approached: false,
            departed: false,
            uptake_deadline: None,
            asking_to_end: false,
            reengage_deadline: None,
        }
    }
}

impl EngagementState {
    /// Earliest pending timer.
    pub fn next_deadline(&self) -> Option<u64> {
        match (self.uptake_deadline, self.reengage_deadline) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EngagementEvent {
    Approach,
    FaceFound,
    /// Face absent for longer than the grace period.
    FaceLost,
    Leave,
    UserSpeech(String),
    UserNod(NodInterpretation),
    /// Evidence of a user action (a table reading, a look).
    UserAction,
    RobotTurnEnd { awaiting_response: bool, awaits_action: bool },
    AskToEndAnswer { affirm: bool },
    GoalStarted(String),
    InteractionDone,
    Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EngagementAction {
    Phase { phase: Phase, rule: String },
    /// Open the top goal of the interaction.
    StartInteraction,
    Say(String),
    InjectGoal(String),
    /// Abandon the current activity and close.
    Close { await_reply: bool },
    /// Drop an interruption and repeat the robot's last turn.
    Resume,
    /// Stop waiting for the user's reply.
    SkipAwait,
    Reformulate { object: String },
    ProceedWithoutLook { object: String },
    AwaitNotice { act: String },
    LookAway,
    Log(String),
}

fn phase(p: Phase, rule: &str) -> EngagementAction {
    EngagementAction::Phase { phase: p, rule: rule.to_string() }
}

fn goto(s: &mut EngagementState, acts: &mut Vec<EngagementAction>, p: Phase, rule: &str) {
    if s.phase != p {
        s.phase = p;
        acts.push(phase(p, rule));
    }
}

fn start_greeting(s: &mut EngagementState, acts: &mut Vec<EngagementAction>, cfg: &EngagementConfig, rule: &str) {
    goto(s, acts, Phase::Greeting, rule);
    acts.push(EngagementAction::StartInteraction);
    acts.push(EngagementAction::Say(cfg.greeting.clone()));
}

fn uptake(s: &mut EngagementState, t: u64) {
    s.last_user_turn = Some(t);
    s.uptake_deadline = None;
}

/// Deterministic transition at time `t`.
pub fn on_event(
    state: &EngagementState,
    t: u64,
    event: &EngagementEvent,
    cfg: &EngagementConfig,
) -> (EngagementState, Vec<EngagementAction>) {
    use EngagementEvent as E;
    let mut s = state.clone();
    let mut acts = Vec::new();
    s.now = s.now.max(t);
    if s.phase == Phase::Ended {
        acts.push(EngagementAction::Log(format!("ignored {event:?} after end")));
        return (s, acts);
    }
    match (s.phase, event) {
        (_, E::Approach) => {
            s.approached = true;
            if s.phase == Phase::Idle {
                goto(&mut s, &mut acts, Phase::Seeking, "approach");
            }
        }
        (Phase::Idle, E::FaceFound) => {
            s.last_face_seen = Some(t);
            goto(&mut s, &mut acts, Phase::Seeking, "face_found");
            start_greeting(&mut s, &mut acts, cfg, "face_found");
        }
        (Phase::Seeking, E::FaceFound) => {
            s.last_face_seen = Some(t);
            start_greeting(&mut s, &mut acts, cfg, "face_found");
        }
        (Phase::Idle, E::UserSpeech(_)) => {
            goto(&mut s, &mut acts, Phase::Seeking, "speech_heard");
        }
        (Phase::Idle | Phase::Seeking, E::Leave) => {
            s.departed = true;
            s.approached = false;
            goto(&mut s, &mut acts, Phase::Idle, "left_before_greeting");
        }
        (Phase::Idle | Phase::Seeking, _) => {
            acts.push(EngagementAction::Log(format!("no rule for {event:?} in {:?}", s.phase)));
        }

        (Phase::ReEngaging, E::FaceFound) => {
            s.last_face_seen = Some(t);
            s.reengage_deadline = None;
            s.departed = false;
            goto(&mut s, &mut acts, Phase::Engaged, "face_returned");
            acts.push(EngagementAction::Resume);
        }
        (_, E::FaceFound) => {
            s.last_face_seen = Some(t);
        }
        (Phase::ReEngaging, E::UserSpeech(_)) => {
            uptake(&mut s, t);
            s.reengage_deadline = None;
            goto(&mut s, &mut acts, Phase::Engaged, "voice_returned");
            acts.push(EngagementAction::Resume);
        }
        (Phase::Greeting, E::UserSpeech(_)) => {
            uptake(&mut s, t);
            if matches!(cfg.greeting_confirm, GreetingConfirm::Speech | GreetingConfirm::Either) {
                goto(&mut s, &mut acts, Phase::Engaged, "greeting_confirmed_by_speech");
            }
        }
        (_, E::UserSpeech(_)) => uptake(&mut s, t),
        (_, E::UserNod(NodInterpretation::Acknowledgement)) | (_, E::UserAction) => uptake(&mut s, t),
        (_, E::UserNod(_)) => {}

        (Phase::ClosingRitual, E::FaceLost | E::Leave) => {
            s.departed = true;
            if s.uptake_deadline.take().is_some() {
                acts.push(EngagementAction::SkipAwait);
            }
        }
        (Phase::ReEngaging, E::FaceLost | E::Leave) => {
            s.departed = true;
        }
        (_, E::Leave) => {
            s.departed = true;
        }
        (_, E::FaceLost) => {
            s.uptake_deadline = None;
            s.asking_to_end = false;
            goto(&mut s, &mut acts, Phase::ReEngaging, "face_lost");
            acts.push(EngagementAction::InjectGoal(RE_ENGAGE_GOAL.into()));
        }

        (_, E::RobotTurnEnd { awaiting_response, awaits_action }) => {
            if s.phase == Phase::Greeting
                && s.approached
                && matches!(cfg.greeting_confirm, GreetingConfirm::Proximity | GreetingConfirm::Either)
            {
                goto(&mut s, &mut acts, Phase::Engaged, "greeting_confirmed_by_proximity");
            }
            if s.phase == Phase::ReEngaging {
                s.reengage_deadline = Some(t + cfg.turn_uptake_timeout);
            } else if s.phase == Phase::ClosingRitual && s.departed {
                if *awaiting_response {
                    acts.push(EngagementAction::SkipAwait);
                }
            } else if *awaiting_response || *awaits_action {
                s.uptake_deadline = Some(t + cfg.turn_uptake_timeout);
            } else {
                s.uptake_deadline = None;
            }
        }

        (_, E::AskToEndAnswer { affirm }) => {
            uptake(&mut s, t);
            s.asking_to_end = false;
            if *affirm {
                goto(&mut s, &mut acts, Phase::ClosingRitual, "user_wants_to_end");
                acts.push(EngagementAction::Close { await_reply: true });
            } else {
                acts.push(EngagementAction::Resume);
            }
        }

        (_, E::GoalStarted(g)) if g == CLOSING_GOAL => {
            goto(&mut s, &mut acts, Phase::ClosingRitual, "closing_started");
        }
        (_, E::GoalStarted(_)) => {}

        (_, E::InteractionDone) => {
            acts.extend(closing_ritual(&mut s));
        }

        (_, E::Tick) => {
            if s.reengage_deadline.is_some_and(|d| d <= t) {
                s.reengage_deadline = None;
                s.departed = true;
                goto(&mut s, &mut acts, Phase::ClosingRitual, "user_gone");
                acts.push(EngagementAction::Close { await_reply: false });
            }
            if s.uptake_deadline.is_some_and(|d| d <= t) {
                s.uptake_deadline = None;
                match s.phase {
                    Phase::ClosingRitual => acts.push(EngagementAction::SkipAwait),
                    _ if s.asking_to_end => {
                        s.asking_to_end = false;
                        goto(&mut s, &mut acts, Phase::ClosingRitual, "no_answer_to_ending");
                        acts.push(EngagementAction::Close { await_reply: false });
                    }
                    Phase::Greeting | Phase::Engaged => {
                        s.asking_to_end = true;
                        acts.push(EngagementAction::InjectGoal(ASK_TO_END_GOAL.into()));
                    }
                    _ => {}
                }
            }
        }
    }
    (s, acts)
}

/// Good-bye ritual once the farewell exchange is over: look away, end.
pub fn closing_ritual(state: &mut EngagementState) -> Vec<EngagementAction> {
    if state.phase == Phase::Ended {
        return Vec::new();
    }
    state.uptake_deadline = None;
    state.reengage_deadline = None;
    let mut acts = vec![EngagementAction::LookAway];
    goto(state, &mut acts, Phase::Ended, "closing_ritual");
    acts
}

/// Context for interpreting a nod.
#[derive(Debug, Clone, Copy)]
pub struct NodContext<'a> {
    pub ended: bool,
    pub robot_speaking: bool,
    /// Intervals `[start, end)` during which a grounding point held;
    /// `None` marks one still open.
    pub grounding: &'a [(u64, Option<u64>)],
    pub window: u64,
}

/// Whether a grounding point held at some instant of `[t - window, t]`.
pub fn grounding_within(grounding: &[(u64, Option<u64>)], t: u64, window: u64) -> bool {
    let lo = t.saturating_sub(window);
    grounding.iter().any(|&(a, b)| a <= t && b.is_none_or(|b| b > lo))
}

pub fn interpret_nod(t: u64, ctx: &NodContext<'_>) -> NodInterpretation {
    if ctx.ended {
        NodInterpretation::Superfluous
    } else if grounding_within(ctx.grounding, t, ctx.window) {
        NodInterpretation::Acknowledgement
    } else if ctx.robot_speaking {
        NodInterpretation::Backchannel
    } else {
        NodInterpretation::Superfluous
    }
}

/// A look the dialogue expects, as seen by the engagement rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookCheck {
    pub object: String,
    /// When the robot's turn ended and the wait began.
    pub armed_at: Option<u64>,
    pub reformulated: bool,
}

/// Reformulates once when the user has not looked in time, then gives up on
/// the look and lets the dialogue proceed.
pub fn check_look_expectation(
    look: &LookCheck,
    observed: &[String],
    t: u64,
    cfg: &EngagementConfig,
) -> Vec<EngagementAction> {
    if observed.contains(&look.object) {
        return Vec::new();
    }
    match look.armed_at {
        Some(armed) if t >= armed + cfg.look_expectation_timeout => {
            if look.reformulated {
                vec![
                    EngagementAction::ProceedWithoutLook { object: look.object.clone() },
                    EngagementAction::Log(format!("engagement concern: user never looked at {}", look.object)),
                ]
            } else {
                vec![EngagementAction::Reformulate { object: look.object.clone() }]
            }
        }
        _ => Vec::new(),
    }
}
