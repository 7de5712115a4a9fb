//! Simulated visitors and the deterministic scenario runner.
//!
//! A [`HumanModel`] describes how a visitor behaves; [`SimHuman`] turns it
//! into protocol messages in reaction to the engine's output. The runner
//! interleaves both on one clock, engine first on ties.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engagement::Phase;
use crate::engine::{transcript, Engine, EngineConfig, LogEntry};
use crate::protocol::{Body, Expect, Message, Sequencer, Source};
use crate::recipe::RecipeLibrary;
use crate::sensorimotor::nod::{detect_nod, synth_trace, NodConfig, TraceClass};
use crate::sensorimotor::Mode;
use crate::world::{Actor, World};

pub const FIGURE3_SCENARIO: &str = include_str!("../fixtures/scenarios/figure3.scenario");

/// Gaze target meaning "nothing in the scene".
pub const AWAY: &str = "away";
const AWAY_POSE: (f64, f64) = (120.0, 0.0);
const ROBOT: &str = "robot";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distraction {
    pub t: u64,
    pub duration: u64,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanModel {
    pub name: String,
    /// Chance of following a robot glance or point.
    pub track_prob: f64,
    /// Chance of looking where a reformulated request directs.
    pub reformulation_compliance: f64,
    /// Chance of looking at an object the robot mentions.
    pub object_interest: f64,
    /// Chance of answering a grounding point with a nod instead of speech.
    pub nod_rate: f64,
    /// Chance of turning to the robot before speaking.
    pub speech_gaze_prob: f64,
    pub response_latency: u64,
    /// How long the visitor looks at an object before looking back.
    pub dwell: u64,
    pub lines: Vec<String>,
    pub distractions: Vec<Distraction>,
    pub leave_at: Option<u64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("engine: {0}")]
    Engine(String),
}

impl Default for HumanModel {
    fn default() -> Self {
        HumanModel {
            name: "default".into(),
            track_prob: 0.55,
            reformulation_compliance: 0.9,
            object_interest: 0.8,
            nod_rate: 0.2,
            speech_gaze_prob: 0.8,
            response_latency: 600,
            dwell: 6000,
            lines: Self::figure3().lines,
            distractions: Vec::new(),
            leave_at: None,
        }
    }
}

fn unquote(s: &str) -> Option<String> {
    let inner = s.strip_prefix('"')?.strip_suffix('"')?;
    let mut out = String::new();
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => out.push(chars.next()?),
            '"' => return None,
            c => out.push(c),
        }
    }
    Some(out)
}

impl HumanModel {
    /// The visitor of the example conversation.
    pub fn figure3() -> Self {
        FIGURE3_SCENARIO.parse().expect("built-in scenario is valid")
    }

    /// Checks ranges and that every distraction target exists in `world`.
    pub fn validate(&self, world: &World) -> Result<(), ScenarioError> {
        let probs = [
            ("track_prob", self.track_prob),
            ("reformulation_compliance", self.reformulation_compliance),
            ("object_interest", self.object_interest),
            ("nod_rate", self.nod_rate),
            ("speech_gaze_prob", self.speech_gaze_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(ScenarioError::Invalid(format!("{name} = {p} is not a probability")));
            }
        }
        for d in &self.distractions {
            if d.target != AWAY && world.direction_of(&d.target).is_none() {
                return Err(ScenarioError::Invalid(format!("distraction target `{}` is not in the scene", d.target)));
            }
            if d.duration == 0 {
                return Err(ScenarioError::Invalid("distraction with zero duration".into()));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "name {}\ntrack_prob {}\nreformulation_compliance {}\nobject_interest {}\nnod_rate {}\nspeech_gaze_prob {}\nresponse_latency {}\ndwell {}\n",
            self.name,
            self.track_prob,
            self.reformulation_compliance,
            self.object_interest,
            self.nod_rate,
            self.speech_gaze_prob,
            self.response_latency,
            self.dwell
        );
        if let Some(t) = self.leave_at {
            out.push_str(&format!("leave {t}\n"));
        }
        for d in &self.distractions {
            out.push_str(&format!("distraction {} {} {}\n", d.t, d.duration, d.target));
        }
        for l in &self.lines {
            out.push_str(&format!("line \"{}\"\n", l.replace('\\', "\\\\").replace('"', "\\\"")));
        }
        out
    }
}

impl FromStr for HumanModel {
    type Err = ScenarioError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut m = default_fields();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| ScenarioError::Syntax { line, msg };
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (key, rest) = l.split_once(char::is_whitespace).unwrap_or((l, ""));
            let rest = rest.trim();
            let prob = |v: &str| -> Result<f64, ScenarioError> {
                v.parse::<f64>().map_err(|_| err(format!("`{key}` needs a number, got `{v}`")))
            };
            let ms = |v: &str| -> Result<u64, ScenarioError> {
                v.parse::<u64>().map_err(|_| err(format!("`{key}` needs milliseconds, got `{v}`")))
            };
            match key {
                "name" if !rest.is_empty() => m.name = rest.to_string(),
                "track_prob" => m.track_prob = prob(rest)?,
                "reformulation_compliance" => m.reformulation_compliance = prob(rest)?,
                "object_interest" => m.object_interest = prob(rest)?,
                "nod_rate" => m.nod_rate = prob(rest)?,
                "speech_gaze_prob" => m.speech_gaze_prob = prob(rest)?,
                "response_latency" => m.response_latency = ms(rest)?,
                "dwell" => m.dwell = ms(rest)?,
                "leave" => m.leave_at = Some(ms(rest)?),
                "line" => m.lines.push(unquote(rest).ok_or_else(|| err(format!("`line` needs a quoted string, got `{rest}`")))?),
                "distraction" => {
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    let [t, d, target] = parts[..] else {
                        return Err(err("`distraction` needs: t_ms duration_ms target".into()));
                    };
                    m.distractions.push(Distraction { t: ms(t)?, duration: ms(d)?, target: target.to_string() });
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        m.distractions.sort_by_key(|d| d.t);
        Ok(m)
    }
}

fn default_fields() -> HumanModel {
    HumanModel {
        name: "unnamed".into(),
        track_prob: 0.0,
        reformulation_compliance: 1.0,
        object_interest: 0.0,
        nod_rate: 0.0,
        speech_gaze_prob: 1.0,
        response_latency: 600,
        dwell: 3000,
        lines: Vec::new(),
        distractions: Vec::new(),
        leave_at: None,
    }
}

impl fmt::Display for HumanModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Action {
    Look(String),
    /// Return to the robot unless the look with this number was replaced.
    LookBack(u64),
    Respond,
    Pour { from: String, to: String },
    Distract(String, u64),
    Leave,
}

/// Visitor acting out a [`HumanModel`].
#[derive(Debug, Clone)]
pub struct SimHuman {
    model: HumanModel,
    world: World,
    rng: ChaCha8Rng,
    seq: Sequencer,
    nod_cfg: NodConfig,
    agenda: BTreeMap<(u64, u64), Action>,
    counter: u64,
    gaze: String,
    look_no: u64,
    next_line: usize,
    robot_speaking_until: u64,
    expectations: BTreeMap<u64, (Expect, Option<String>)>,
    answered: BTreeSet<u64>,
    poured: BTreeSet<u64>,
    done: bool,
}

impl SimHuman {
    pub fn new(model: HumanModel, world: World, seed: u64) -> Self {
        let mut h = SimHuman {
            model,
            world,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seq: Sequencer::new(Source::Client),
            nod_cfg: NodConfig::default(),
            agenda: BTreeMap::new(),
            counter: 0,
            gaze: ROBOT.into(),
            look_no: 0,
            next_line: 0,
            robot_speaking_until: 0,
            expectations: BTreeMap::new(),
            answered: BTreeSet::new(),
            poured: BTreeSet::new(),
            done: false,
        };
        for d in h.model.distractions.clone() {
            h.schedule(d.t, Action::Distract(d.target, d.duration));
        }
        if let Some(t) = h.model.leave_at {
            h.schedule(t, Action::Leave);
        }
        h
    }

    pub fn done(&self) -> bool {
        self.done
    }

    fn schedule(&mut self, t: u64, a: Action) {
        self.counter += 1;
        self.agenda.insert((t, self.counter), a);
    }

    pub fn next_due(&self) -> Option<u64> {
        if self.done {
            return None;
        }
        self.agenda.keys().next().map(|k| k.0)
    }

    /// Arrival: mode selection, approach, face and gaze at the robot.
    pub fn opening(&mut self, mode: Mode) -> Vec<Message> {
        vec![
            self.seq.stamp(0, Body::ModeSelect { mode }),
            self.seq.stamp(0, Body::Approach {}),
            self.seq.stamp(0, Body::FaceFound { yaw: 0.0, pitch: 0.0 }),
            self.seq.stamp(0, Body::LookAt { who: Actor::Human, object: None, yaw: Some(0.0), pitch: Some(0.0) }),
        ]
    }

    fn chance(&mut self, p: f64) -> bool {
        p >= 1.0 || (p > 0.0 && self.rng.random_bool(p))
    }

    fn direction(&self, target: &str) -> (f64, f64) {
        match target {
            AWAY => AWAY_POSE,
            ROBOT => self.world.direction_of(ROBOT).unwrap_or((0.0, 0.0)),
            o => self.world.direction_of(o).unwrap_or(AWAY_POSE),
        }
    }

    fn look(&mut self, t: u64, target: &str, out: &mut Vec<Message>) {
        if self.gaze == target {
            return;
        }
        self.gaze = target.to_string();
        self.look_no += 1;
        let (yaw, pitch) = self.direction(target);
        out.push(self.seq.stamp(t, Body::LookAt { who: Actor::Human, object: None, yaw: Some(yaw), pitch: Some(pitch) }));
    }

    fn look_at_object(&mut self, t: u64, target: &str, dwell: u64, out: &mut Vec<Message>) {
        self.look(t, target, out);
        let no = self.look_no;
        self.schedule(t + dwell, Action::LookBack(no));
    }

    fn respond_at(&mut self, t: u64) {
        let at = t.max(self.robot_speaking_until) + self.model.response_latency;
        if !self.agenda.values().any(|a| *a == Action::Respond) {
            self.schedule(at, Action::Respond);
        }
    }

    /// Reacts to one engine message.
    pub fn observe(&mut self, msg: &Message) {
        let t = msg.t;
        match &msg.body {
            Body::Say { text, act, duration, .. } => {
                self.robot_speaking_until = t + duration;
                if act == "reformulate" {
                    let target = self.expectations.values().find_map(|(e, o)| (*e == Expect::Look).then(|| o.clone()).flatten());
                    if let Some(target) = target {
                        if self.chance(self.model.reformulation_compliance) {
                            self.schedule(t + duration + self.model.response_latency, Action::Look(target));
                        }
                    }
                }
                let words: Vec<String> = text
                    .split_whitespace()
                    .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
                    .collect();
                for (i, w) in words.iter().enumerate() {
                    let mentioned = self.world.object(w).is_some_and(|o| o.id != ROBOT && o.id != "face");
                    if mentioned && self.chance(self.model.object_interest) {
                        self.schedule(t + (i as u64 + 1) * 300, Action::Look(w.clone()));
                    }
                }
                if self.expectations.iter().any(|(id, (e, _))| !self.answered.contains(id) && *e != Expect::Look) {
                    self.respond_at(t);
                }
            }
            Body::GlanceAt { target, .. } | Body::PointAt { target, .. } => {
                if self.chance(self.model.track_prob) {
                    self.schedule(t + 300, Action::Look(target.clone()));
                }
            }
            Body::LookAt { who: Actor::Robot, object: Some(o), .. } if o == "face" => {
                if self.gaze != ROBOT && self.gaze != AWAY {
                    self.schedule(t + 200, Action::LookBack(self.look_no));
                }
            }
            Body::ExpectationSet { id, expect, object, .. } => {
                self.expectations.insert(*id, (*expect, object.clone()));
                if *expect != Expect::Look {
                    self.respond_at(t);
                }
            }
            Body::ExpectationCleared { id, .. } => {
                self.expectations.remove(id);
            }
            Body::EngagementPhase { phase: Phase::Ended, .. } => self.done = true,
            _ => {}
        }
    }

    fn next_line(&mut self) -> String {
        let line = self.model.lines.get(self.next_line).cloned().unwrap_or_else(|| "Ok.".into());
        self.next_line += 1;
        line
    }

    /// Performs every action due at `t`.
    pub fn act(&mut self, t: u64) -> Vec<Message> {
        let mut out = Vec::new();
        while let Some(entry) = self.agenda.first_entry() {
            if entry.key().0 > t {
                break;
            }
            let action = entry.remove();
            self.perform(t, action, &mut out);
        }
        out
    }

    fn perform(&mut self, t: u64, action: Action, out: &mut Vec<Message>) {
        match action {
            Action::Look(target) => {
                let dwell = self.model.dwell;
                self.look_at_object(t, &target, dwell, out);
            }
            Action::LookBack(no) => {
                if no == self.look_no && self.gaze != ROBOT {
                    self.look(t, ROBOT, out);
                }
            }
            Action::Distract(target, duration) => self.look_at_object(t, &target, duration, out),
            Action::Leave => {
                out.push(self.seq.stamp(t, Body::Leave {}));
                self.done = true;
            }
            Action::Respond => {
                if t < self.robot_speaking_until {
                    self.respond_at(t);
                    return;
                }
                let open: Vec<(u64, Expect, Option<String>)> = self
                    .expectations
                    .iter()
                    .filter(|(id, _)| !self.answered.contains(id))
                    .map(|(id, (e, o))| (*id, *e, o.clone()))
                    .collect();
                let talk: Vec<&(u64, Expect, Option<String>)> =
                    open.iter().filter(|(_, e, _)| matches!(e, Expect::Speech | Expect::Grounding)).collect();
                if !talk.is_empty() {
                    if self.chance(self.model.speech_gaze_prob) {
                        self.look(t, ROBOT, out);
                    }
                    let only_grounding = talk.iter().all(|(_, e, _)| *e == Expect::Grounding);
                    if only_grounding && self.chance(self.model.nod_rate) {
                        self.next_line();
                        let trace = synth_trace(TraceClass::Nod, &mut self.rng);
                        let score = detect_nod(&trace, &self.nod_cfg);
                        let (probability, span) = score.map_or((0.0, 0), |s| (s.probability, s.window.1 - s.window.0));
                        out.push(self.seq.stamp(
                            t,
                            Body::Nod { who: Actor::Human, start: t.saturating_sub(span), end: t, probability },
                        ));
                    } else {
                        let text = self.next_line();
                        out.push(self.seq.stamp(t, Body::Utterance { who: Actor::Human, text }));
                    }
                    for (id, _, _) in talk {
                        self.answered.insert(*id);
                    }
                }
                for (id, e, o) in &open {
                    if *e != Expect::Action || self.poured.contains(id) {
                        continue;
                    }
                    self.poured.insert(*id);
                    if let Some((from, to)) = o.as_deref().and_then(|o| o.split_once(':')) {
                        self.schedule(t + 300, Action::Pour { from: from.into(), to: to.into() });
                    }
                }
            }
            Action::Pour { from, to } => {
                // pouring needs eyes on the receiving vessel
                let dwell = self.model.dwell;
                self.look_at_object(t, &to, dwell, out);
                out.push(self.seq.stamp(t, Body::Pour { from, to }));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub mode: Mode,
    pub seed: u64,
    /// Simulation stops here if the interaction has not ended.
    pub max_ms: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { mode: Mode::Mover, seed: 0, max_ms: 900_000 }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: Vec<Message>,
    pub transcript: String,
    pub history: String,
    pub log: Vec<LogEntry>,
    pub phase: Phase,
    /// Robot end-of-turn instants and whether the robot faced the user.
    pub turn_ends: Vec<(u64, bool)>,
    pub end_t: u64,
}

/// Runs one simulated session to its end (or `max_ms`).
pub fn run_scenario(
    model: &HumanModel,
    lib: &RecipeLibrary,
    world: &World,
    cfg: &EngineConfig,
    opts: &RunOptions,
) -> Result<RunResult, ScenarioError> {
    model.validate(world)?;
    let mut engine = Engine::new(cfg.clone(), lib.clone(), world.clone()).map_err(ScenarioError::Engine)?;
    let mut human = SimHuman::new(model.clone(), world.clone(), opts.seed);
    let feed = |engine: &mut Engine, human: &mut SimHuman, msgs: Vec<Message>| {
        for m in msgs {
            let _ = engine.accept(m);
            for out in engine.take_output() {
                human.observe(&out);
            }
        }
    };
    let opening = human.opening(opts.mode);
    feed(&mut engine, &mut human, opening);
    while engine.phase() != Phase::Ended {
        let te = engine.next_due();
        let th = human.next_due();
        let Some(t) = [te, th].into_iter().flatten().min() else { break };
        if t > opts.max_ms {
            break;
        }
        if te == Some(t) {
            engine.advance_to(t);
            for out in engine.take_output() {
                human.observe(&out);
            }
        } else {
            let msgs = human.act(t);
            feed(&mut engine, &mut human, msgs);
        }
    }
    engine.finish();
    let trace = engine.trace().to_vec();
    Ok(RunResult {
        transcript: transcript(&trace),
        history: engine.render_history(),
        log: engine.log().to_vec(),
        phase: engine.phase(),
        turn_ends: engine.turn_ends().to_vec(),
        end_t: engine.now(),
        trace,
    })
}

/// Feeds the client side of a recorded trace to a fresh engine. The
/// engine's trace then reproduces the recording.
pub fn replay(recorded: &[Message], lib: &RecipeLibrary, world: &World, cfg: &EngineConfig) -> Result<Engine, ScenarioError> {
    let mut engine = Engine::new(cfg.clone(), lib.clone(), world.clone()).map_err(ScenarioError::Engine)?;
    for m in recorded.iter().filter(|m| m.src == Source::Client) {
        engine.accept(m.clone()).map_err(|e| ScenarioError::Engine(e.to_string()))?;
    }
    let last = recorded.iter().map(|m| m.t).max().unwrap_or(0);
    while engine.phase() != Phase::Ended {
        match engine.next_due() {
            Some(t) if t <= last => engine.advance_to(t),
            _ => break,
        }
    }
    engine.finish();
    Ok(engine)
}
