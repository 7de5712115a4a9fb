//! Conversational state: plan execution over the recipe library, turn taking
//! and grounding expectations, and the segmented interaction history.
//!
//! The history is an arena of segments. A focus stack of frames walks each
//! recipe through its prologue, body and epilogue; prologue and epilogue get
//! their own sub-segments. Records (utterances and actions) attach to the
//! deepest open segment, or to the top level when none is open.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::recipe::{
    realize_marked, Act, Condition, Recipe, RecipeLibrary, SemanticAct, Step, StepActor, Utterance, ASK_TO_END_GOAL,
    CLOSING_GOAL, RE_ENGAGE_GOAL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Open,
    Done,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Node {
    Segment(usize),
    Record(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    pub goal: Option<String>,
    pub parent: Option<usize>,
    pub children: Vec<Node>,
    pub status: Status,
    /// Position among the first-level subgoals of the top goal.
    pub number: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub t: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpectKind {
    UserSpeech,
    UserLookAt(String),
    UserAction { from: String, to: String },
    Grounding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeechPurpose {
    Tell(String),
    ProposalAnswer,
    EndAnswer,
    Presence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepRef {
    frame: u64,
    section: Sec,
    idx: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectation {
    pub id: u64,
    pub kind: ExpectKind,
    pub purpose: Option<SpeechPurpose>,
    pub set_at: u64,
    /// Start of the wait, once the robot's turn is over.
    pub armed_at: Option<u64>,
    pub reformulated: bool,
    pub noticed: bool,
    step: Option<StepRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Holder {
    Robot,
    Human,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnState {
    pub holder: Holder,
    pub awaiting_response: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActKind {
    Say,
    Ask,
    Propose,
    Persuade,
    Reformulate,
    Await,
}

impl ActKind {
    pub fn name(self) -> &'static str {
        match self {
            ActKind::Say => "say",
            ActKind::Ask => "ask",
            ActKind::Propose => "propose",
            ActKind::Persuade => "persuade",
            ActKind::Reformulate => "reformulate",
            ActKind::Await => "await",
        }
    }

    /// Agent notices keep the current expectations instead of creating new ones.
    pub fn is_notice(self) -> bool {
        matches!(self, ActKind::Reformulate | ActKind::Await)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Origin {
    Step(StepRef),
    Proposal(StepRef),
    Persuasion(StepRef),
    Repeat,
    Notice,
    Extra,
}

/// A robot utterance ready to be spoken.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedSay {
    pub utterance: Utterance,
    pub kind: ActKind,
    pub chain: bool,
    origin: Origin,
    injected: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextAct {
    Say(PlannedSay),
    Nod,
    Wait,
    Finished,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiscourseEvent {
    UserSpeech(String),
    UserLook(String),
    UserPour { from: String, to: String },
    TableReading(f64),
    /// A nod; `ack` when the engagement rules read it as an acknowledgement.
    UserNod { ack: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Interpretation {
    Unattached,
    Attached,
    Grounded,
    ParameterBound { param: String, value: String },
    ProposalAnswer { accepted: bool },
    EndAnswer { affirm: bool },
    Presence,
    LookMet(String),
    ActionMet,
    RepeatRequested,
    Farewell,
}

/// Notifications for the engagement layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Note {
    GoalStarted(String),
    GoalDone(String),
    Finished,
    Log(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurnEnd {
    pub awaiting_response: bool,
    pub awaits_action: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
enum Sec {
    Prologue,
    Body,
    Epilogue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum StepState {
    Fresh,
    Proposed { seg: usize, recipe: Box<Recipe>, persuaded: bool },
    Persuading { seg: usize, recipe: Box<Recipe> },
    Accepted { seg: usize, recipe: Box<Recipe> },
    Rejected,
}

#[derive(Debug, Clone)]
struct Frame {
    id: u64,
    goal: String,
    recipe: Recipe,
    seg: usize,
    section: Sec,
    section_seg: Option<usize>,
    idx: usize,
    state: StepState,
    injected: bool,
}

impl Frame {
    fn steps(&self) -> &[Step] {
        let s = match self.section {
            Sec::Prologue => self.recipe.prologue.as_ref().map(|s| s.steps.as_slice()),
            Sec::Body => Some(self.recipe.steps.as_slice()),
            Sec::Epilogue => self.recipe.epilogue.as_ref().map(|s| s.steps.as_slice()),
        };
        s.unwrap_or(&[])
    }

    fn here(&self) -> StepRef {
        StepRef { frame: self.id, section: self.section, idx: self.idx }
    }
}

fn normalize(text: &str) -> String {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == ' ' || c == '\'' { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Yes/no reading of a short reply; `None` when it is neither.
pub fn polarity(text: &str) -> Option<bool> {
    let n = normalize(text);
    const YES: &[&str] = &[
        "yes", "yeah", "yep", "sure", "ok", "okay", "all right", "alright", "right", "cool", "fine", "of course", "please",
        "good bye", "goodbye", "bye",
    ];
    const NO: &[&str] = &["no", "nope", "not really", "no thanks", "no thank you"];
    if NO.iter().any(|w| n == *w || n.starts_with(&format!("{w} "))) {
        Some(false)
    } else if YES.iter().any(|w| n == *w || n.starts_with(&format!("{w} "))) {
        Some(true)
    } else {
        None
    }
}

fn is_farewell(text: &str) -> bool {
    matches!(normalize(text).as_str(), "goodbye" | "good bye" | "bye" | "so long")
}

fn is_repeat_request(text: &str) -> bool {
    let n = normalize(text);
    n == "please repeat" || n == "repeat" || n == "repeat please" || n == "pardon"
}

fn pour_text(from: &str, to: &str) -> String {
    match (from, to) {
        ("pitcher", "cup") => "User pours water into the cup.".into(),
        ("cup", "pitcher") => "User pours water back into the pitcher.".into(),
        _ => format!("User pours water from the {from} into the {to}."),
    }
}

/// Fill level the table reports after pouring into `to`.
fn expected_fill(to: &str) -> f64 {
    if to == "cup" {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct Discourse {
    lib: RecipeLibrary,
    robot_name: String,
    segments: Vec<Segment>,
    records: Vec<Record>,
    top: Vec<Node>,
    root: Option<usize>,
    stack: Vec<Frame>,
    next_frame: u64,
    bindings: BTreeMap<String, String>,
    outcomes: BTreeMap<String, Status>,
    aborted: bool,
    finished: bool,
    expectations: Vec<Expectation>,
    next_expectation: u64,
    cleared: Vec<(u64, String)>,
    met: BTreeSet<StepRef>,
    speaking: bool,
    turn_open: bool,
    current: Option<PlannedSay>,
    turn_acts: Vec<PlannedSay>,
    last_turn: Vec<PlannedSay>,
    turn_expects_look: bool,
    last_kind: Option<ActKind>,
    last_frame: Option<u64>,
    notices: VecDeque<PlannedSay>,
    extras: VecDeque<PlannedSay>,
    repeats: VecDeque<PlannedSay>,
    skip_await: bool,
    notes: Vec<Note>,
}

impl Discourse {
    pub fn new(lib: RecipeLibrary) -> Self {
        Discourse {
            lib,
            robot_name: "Mel".into(),
            segments: Vec::new(),
            records: Vec::new(),
            top: Vec::new(),
            root: None,
            stack: Vec::new(),
            next_frame: 0,
            bindings: BTreeMap::new(),
            outcomes: BTreeMap::new(),
            aborted: false,
            finished: false,
            expectations: Vec::new(),
            next_expectation: 1,
            cleared: Vec::new(),
            met: BTreeSet::new(),
            speaking: false,
            turn_open: false,
            current: None,
            turn_acts: Vec::new(),
            last_turn: Vec::new(),
            turn_expects_look: false,
            last_kind: None,
            last_frame: None,
            notices: VecDeque::new(),
            extras: VecDeque::new(),
            repeats: VecDeque::new(),
            skip_await: false,
            notes: Vec::new(),
        }
    }

    pub fn library(&self) -> &RecipeLibrary {
        &self.lib
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn bindings(&self) -> &BTreeMap<String, String> {
        &self.bindings
    }

    pub fn expectations(&self) -> &[Expectation] {
        &self.expectations
    }

    pub fn started(&self) -> bool {
        self.root.is_some()
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    pub fn aborted(&self) -> bool {
        self.aborted
    }

    pub fn speaking(&self) -> bool {
        self.speaking
    }

    /// A robot turn has started and not yet ended.
    pub fn turn_open(&self) -> bool {
        self.turn_open
    }

    /// Expectations cleared since the last call, with reasons.
    pub fn take_cleared(&mut self) -> Vec<(u64, String)> {
        std::mem::take(&mut self.cleared)
    }

    pub fn take_notes(&mut self) -> Vec<Note> {
        std::mem::take(&mut self.notes)
    }

    pub fn turn(&self) -> TurnState {
        let awaiting = self.awaiting_response();
        let holder = if self.speaking {
            Holder::Robot
        } else if awaiting {
            Holder::Human
        } else {
            Holder::Open
        };
        TurnState { holder, awaiting_response: awaiting && !self.speaking }
    }

    fn awaiting_response(&self) -> bool {
        self.expectations.iter().any(|e| matches!(e.kind, ExpectKind::UserSpeech | ExpectKind::Grounding))
    }

    /// The robot has finished a statement or request and awaits a response.
    pub fn grounding_point(&self) -> bool {
        !self.speaking && !self.turn_open && self.awaiting_response()
    }

    // ---- history ----

    fn attach_point(&self) -> Option<usize> {
        if let Some(f) = self.stack.last() {
            if let StepState::Proposed { seg, .. } | StepState::Persuading { seg, .. } = &f.state {
                return Some(*seg);
            }
            return Some(f.section_seg.unwrap_or(f.seg));
        }
        None
    }

    fn push_record(&mut self, t: u64, text: String, at: Option<usize>) {
        let id = self.records.len();
        self.records.push(Record { t, text });
        match at {
            Some(seg) => self.segments[seg].children.push(Node::Record(id)),
            None => self.top.push(Node::Record(id)),
        }
    }

    fn record(&mut self, t: u64, text: String) -> bool {
        let at = self.attach_point();
        self.push_record(t, text, at);
        at.is_some()
    }

    /// Records an event outside any segment, such as face acquisition.
    pub fn record_unattached(&mut self, t: u64, text: &str) {
        self.push_record(t, text.to_string(), None);
    }

    fn open_segment(&mut self, label: String, goal: Option<String>, parent: Option<usize>) -> usize {
        let id = self.segments.len();
        let number = match (parent, &goal) {
            (Some(p), Some(g)) if Some(p) == self.root => {
                let root_goal = self.segments[p].goal.clone().unwrap_or_default();
                let position = self.lib.first_level_subgoals(&root_goal).iter().position(|s| s == g);
                position.map(|i| i + 1)
            }
            _ => None,
        };
        self.segments.push(Segment { label, goal, parent, children: Vec::new(), status: Status::Open, number });
        match parent {
            Some(p) => self.segments[p].children.push(Node::Segment(id)),
            None => self.top.push(Node::Segment(id)),
        }
        id
    }

    fn close_segment(&mut self, seg: usize, status: Status) {
        if self.segments[seg].status == Status::Open {
            self.segments[seg].status = status;
        }
    }

    fn choose_recipe(&self, goal: &str) -> Option<Recipe> {
        let applicable = |r: &&Recipe| match &r.condition {
            None => true,
            Some(Condition::Aborted) => self.aborted,
            Some(Condition::Done(g)) => self.outcomes.get(g) == Some(&Status::Done),
            Some(Condition::Skipped(g)) => self.outcomes.get(g) != Some(&Status::Done),
        };
        let mut all = self.lib.recipes_for(goal).peekable();
        all.peek()?;
        let first = self.lib.recipes_for(goal).next().cloned();
        self.lib.recipes_for(goal).find(applicable).cloned().or(first)
    }

    fn push_frame(&mut self, goal: String, recipe: Recipe, seg: usize, injected: bool) {
        let id = self.next_frame;
        self.next_frame += 1;
        self.notes.push(Note::GoalStarted(goal.clone()));
        let mut frame = Frame {
            id,
            goal,
            recipe,
            seg,
            section: Sec::Prologue,
            section_seg: None,
            idx: 0,
            state: StepState::Fresh,
            injected,
        };
        if frame.steps().is_empty() {
            frame.section = Sec::Body;
        } else {
            let label = frame.recipe.prologue_label();
            frame.section_seg = Some(self.open_segment(label, None, Some(seg)));
        }
        self.stack.push(frame);
    }

    /// Opens the top goal of the library.
    pub fn start(&mut self, _t: u64) -> bool {
        if self.root.is_some() {
            return false;
        }
        let Some(top) = self.lib.top.clone() else { return false };
        let Some(recipe) = self.choose_recipe(&top) else { return false };
        let seg = self.open_segment(recipe.label(), Some(top.clone()), None);
        self.root = Some(seg);
        self.push_frame(top, recipe, seg, false);
        true
    }

    // ---- expectations ----

    fn add_expectation(&mut self, t: u64, kind: ExpectKind, purpose: Option<SpeechPurpose>, step: Option<StepRef>) -> u64 {
        if let Some(e) = self.expectations.iter().find(|e| e.kind == kind && e.step == step && e.purpose == purpose) {
            return e.id;
        }
        let id = self.next_expectation;
        self.next_expectation += 1;
        self.expectations.push(Expectation {
            id,
            kind,
            purpose,
            set_at: t,
            armed_at: None,
            reformulated: false,
            noticed: false,
            step,
        });
        id
    }

    fn clear_where(&mut self, reason: &str, pred: impl Fn(&Expectation) -> bool) -> Vec<Expectation> {
        let (gone, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.expectations).into_iter().partition(|e| pred(e));
        self.expectations = keep;
        for e in &gone {
            self.cleared.push((e.id, reason.to_string()));
        }
        gone
    }

    /// Sets the expectation belonging to a human step.
    fn expect_step(&mut self, t: u64, step: &Step, at: StepRef) {
        if self.met.contains(&at) {
            return;
        }
        match &step.act {
            Act::Tell { param } => {
                self.add_expectation(t, ExpectKind::UserSpeech, Some(SpeechPurpose::Tell(param.clone())), Some(at));
            }
            Act::Look { object } => {
                self.add_expectation(t, ExpectKind::UserLookAt(object.clone()), None, Some(at));
            }
            Act::Pour { from, to } => {
                self.add_expectation(t, ExpectKind::UserAction { from: from.clone(), to: to.clone() }, None, Some(at));
            }
            _ => {}
        }
    }

    fn is_human_step(step: &Step) -> bool {
        step.actor == StepActor::Human && matches!(step.act, Act::Tell { .. } | Act::Look { .. } | Act::Pour { .. })
    }

    fn frame_index(&self, id: u64) -> Option<usize> {
        self.stack.iter().position(|f| f.id == id)
    }

    /// Human step following `at` in the same section, if any.
    fn following_human_step(&self, at: StepRef) -> Option<(Step, StepRef)> {
        let f = &self.stack[self.frame_index(at.frame)?];
        let next = StepRef { idx: at.idx + 1, ..at };
        let step = f.steps().get(next.idx)?;
        Self::is_human_step(step).then(|| (step.clone(), next))
    }

    fn current_human_step(&self) -> Option<(Step, StepRef)> {
        let f = self.stack.last()?;
        let step = f.steps().get(f.idx)?;
        Self::is_human_step(step).then(|| (step.clone(), f.here()))
    }

    /// Arms look and action waits when the robot's turn is over.
    fn arm(&mut self, t: u64) {
        for e in &mut self.expectations {
            if matches!(e.kind, ExpectKind::UserLookAt(_) | ExpectKind::UserAction { .. }) && e.armed_at.is_none() {
                e.armed_at = Some(t);
            }
        }
    }

    // ---- agenda ----

    fn realize(&mut self, act: SemanticAct) -> Option<Utterance> {
        match realize_marked(&act, &self.lib.templates, &self.bindings) {
            Ok(u) => Some(u),
            Err(e) => {
                self.notes.push(Note::Log(format!("cannot realize {act:?}: {e}")));
                None
            }
        }
    }

    fn blocked(&self) -> bool {
        self.speaking || self.awaiting_response()
    }

    /// Next robot act. Repeated calls without intervening commits return the
    /// same act.
    pub fn next_act(&mut self) -> NextAct {
        if self.finished {
            return NextAct::Finished;
        }
        if self.blocked() {
            return NextAct::Wait;
        }
        if let Some(n) = self.notices.front().or(self.extras.front()).or(self.repeats.front()) {
            return NextAct::Say(n.clone());
        }
        self.advance()
    }

    fn pop_frame(&mut self, status: Status) {
        let Some(f) = self.stack.pop() else { return };
        if let Some(s) = f.section_seg {
            self.close_segment(s, status);
        }
        self.close_segment(f.seg, status);
        self.outcomes.insert(f.goal.clone(), status);
        if status == Status::Done {
            self.notes.push(Note::GoalDone(f.goal.clone()));
        }
        match self.stack.last_mut() {
            Some(_) if f.injected => {}
            Some(parent) => {
                parent.idx += 1;
                parent.state = StepState::Fresh;
            }
            None => {
                self.finished = true;
                self.notes.push(Note::Finished);
            }
        }
    }

    fn advance(&mut self) -> NextAct {
        loop {
            let Some(frame) = self.stack.last() else {
                if self.root.is_some() && !self.finished {
                    self.finished = true;
                    self.notes.push(Note::Finished);
                }
                return if self.root.is_some() { NextAct::Finished } else { NextAct::Wait };
            };
            let steps = frame.steps();
            if frame.idx >= steps.len() {
                if frame.injected {
                    return NextAct::Wait;
                }
                let next = match frame.section {
                    Sec::Prologue => Some(Sec::Body),
                    Sec::Body => Some(Sec::Epilogue),
                    Sec::Epilogue => None,
                };
                let f = self.stack.last_mut().expect("frame");
                if let Some(s) = f.section_seg.take() {
                    self.segments[s].status = Status::Done;
                }
                let f = self.stack.last_mut().expect("frame");
                match next {
                    Some(sec) => {
                        f.section = sec;
                        f.idx = 0;
                        if sec == Sec::Epilogue && !f.steps().is_empty() {
                            let label = f.recipe.epilogue_label();
                            let seg = f.seg;
                            let s = self.open_segment(label, None, Some(seg));
                            self.stack.last_mut().expect("frame").section_seg = Some(s);
                        }
                    }
                    None => self.pop_frame(Status::Done),
                }
                continue;
            }
            let step = steps[frame.idx].clone();
            let here = frame.here();
            let injected = frame.injected;
            let state = frame.state.clone();
            match &step.act {
                Act::Say { text, chain } => {
                    let Some(u) = self.realize(SemanticAct::Say(text.clone())) else {
                        self.stack.last_mut().expect("frame").idx += 1;
                        continue;
                    };
                    return NextAct::Say(PlannedSay {
                        utterance: u,
                        kind: ActKind::Say,
                        chain: *chain,
                        origin: Origin::Step(here),
                        injected,
                    });
                }
                Act::Ask { param } => {
                    if self.bindings.contains_key(param) {
                        self.stack.last_mut().expect("frame").idx += 1;
                        continue;
                    }
                    let Some(u) = self.realize(SemanticAct::AskParameterValue(param.clone())) else {
                        self.stack.last_mut().expect("frame").idx += 1;
                        continue;
                    };
                    return NextAct::Say(PlannedSay {
                        utterance: u,
                        kind: ActKind::Ask,
                        chain: false,
                        origin: Origin::Step(here),
                        injected,
                    });
                }
                Act::Nod if step.actor != StepActor::Human => return NextAct::Nod,
                Act::Nod => {
                    self.stack.last_mut().expect("frame").idx += 1;
                }
                Act::Tell { param } if self.bindings.contains_key(param) => {
                    self.stack.last_mut().expect("frame").idx += 1;
                }
                Act::Tell { .. } | Act::Look { .. } | Act::Pour { .. } => {
                    if self.met.contains(&here) {
                        self.stack.last_mut().expect("frame").idx += 1;
                        continue;
                    }
                    let t = self.expectations.iter().map(|e| e.set_at).max().unwrap_or(0);
                    self.expect_step(t, &step, here);
                    return NextAct::Wait;
                }
                Act::Goal { goal, propose, persuade } => match state {
                    StepState::Fresh => {
                        let Some(recipe) = self.choose_recipe(goal) else {
                            self.notes.push(Note::Log(format!("no recipe for `{goal}`")));
                            self.stack.last_mut().expect("frame").idx += 1;
                            continue;
                        };
                        if let (true, Some(p)) = (step.optional, propose) {
                            let Some(u) = self.realize(SemanticAct::Say(p.clone())) else {
                                self.stack.last_mut().expect("frame").idx += 1;
                                continue;
                            };
                            return NextAct::Say(PlannedSay {
                                utterance: u,
                                kind: ActKind::Propose,
                                chain: false,
                                origin: Origin::Proposal(here),
                                injected,
                            });
                        }
                        let parent = self.attach_point();
                        let seg = self.open_segment(recipe.label(), Some(goal.clone()), parent);
                        self.push_frame(goal.clone(), recipe, seg, injected);
                    }
                    StepState::Persuading { .. } => {
                        let text = persuade.clone().unwrap_or_default();
                        let Some(u) = self.realize(SemanticAct::Say(text)) else {
                            self.reject_proposal();
                            continue;
                        };
                        return NextAct::Say(PlannedSay {
                            utterance: u,
                            kind: ActKind::Persuade,
                            chain: false,
                            origin: Origin::Persuasion(here),
                            injected,
                        });
                    }
                    StepState::Proposed { .. } => return NextAct::Wait,
                    StepState::Accepted { seg, recipe } => {
                        self.stack.last_mut().expect("frame").state = StepState::Fresh;
                        self.push_frame(goal.clone(), *recipe, seg, injected);
                    }
                    StepState::Rejected => {
                        let f = self.stack.last_mut().expect("frame");
                        f.idx += 1;
                        f.state = StepState::Fresh;
                    }
                },
            }
        }
    }

    fn reject_proposal(&mut self) {
        let Some(f) = self.stack.last_mut() else { return };
        let seg = match &f.state {
            StepState::Proposed { seg, .. } | StepState::Persuading { seg, .. } => *seg,
            _ => return,
        };
        f.state = StepState::Rejected;
        let goal = self.segments[seg].goal.clone();
        self.close_segment(seg, Status::Stopped);
        if let Some(g) = goal {
            self.outcomes.insert(g, Status::Stopped);
        }
    }

    /// Commits to speaking `say`: records it and sets look-ahead expectations.
    pub fn act_started(&mut self, t: u64, say: &PlannedSay) {
        match say.origin {
            Origin::Notice => {
                self.notices.pop_front();
            }
            Origin::Extra => {
                self.extras.pop_front();
            }
            Origin::Repeat => {
                self.repeats.pop_front();
            }
            Origin::Proposal(at) => {
                if let Some(i) = self.frame_index(at.frame) {
                    if let Act::Goal { goal, .. } = &self.stack[i].steps()[at.idx].act {
                        let goal = goal.clone();
                        if let Some(recipe) = self.choose_recipe(&goal) {
                            let parent = Some(self.stack[i].section_seg.unwrap_or(self.stack[i].seg));
                            let seg = self.open_segment(recipe.label(), Some(goal), parent);
                            self.stack[i].state = StepState::Proposed { seg, recipe: Box::new(recipe), persuaded: false };
                        }
                    }
                }
            }
            Origin::Persuasion(at) => {
                if let Some(i) = self.frame_index(at.frame) {
                    if let StepState::Persuading { seg, recipe } = self.stack[i].state.clone() {
                        self.stack[i].state = StepState::Proposed { seg, recipe, persuaded: true };
                    }
                }
            }
            Origin::Step(_) => {}
        }
        self.record(t, format!("{} says \"{}\"", self.robot_name, say.utterance.text));
        self.speaking = true;
        self.turn_open = true;
        match say.origin {
            Origin::Step(at) => {
                if let Some((step, next)) = self.following_human_step(at) {
                    if !matches!(step.act, Act::Tell { .. }) {
                        self.expect_step(t, &step, next);
                    }
                }
            }
            Origin::Repeat | Origin::Notice => {
                if let Some((step, here)) = self.current_human_step() {
                    if !matches!(step.act, Act::Tell { .. }) {
                        self.expect_step(t, &step, here);
                    }
                }
            }
            _ => {}
        }
        if !say.kind.is_notice() && !matches!(say.origin, Origin::Extra) && !say.injected {
            self.turn_acts.push(say.clone());
        }
        self.current = Some(say.clone());
    }

    /// The current utterance has been fully spoken.
    pub fn act_finished(&mut self, _t: u64) {
        self.speaking = false;
        let Some(say) = self.current.take() else { return };
        self.turn_expects_look = false;
        if let Origin::Step(at) = say.origin {
            if let Some((step, _)) = self.following_human_step(at) {
                self.turn_expects_look = matches!(step.act, Act::Look { .. });
            }
            if let Some(i) = self.frame_index(at.frame) {
                let f = &mut self.stack[i];
                if f.section == at.section && f.idx == at.idx {
                    f.idx += 1;
                }
            }
        }
        self.last_kind = Some(say.kind);
        self.last_frame = match say.origin {
            Origin::Step(at) | Origin::Proposal(at) | Origin::Persuasion(at) => Some(at.frame),
            _ => None,
        };
    }

    /// Moves past a robot nod step; `performed` is false when the body
    /// could not nod.
    pub fn nod_performed(&mut self, t: u64, performed: bool) {
        if performed {
            self.record(t, format!("{} nods.", self.robot_name));
        }
        if let Some(f) = self.stack.last_mut() {
            f.idx += 1;
        }
    }

    /// Ends the robot's turn and sets what it now waits for.
    pub fn end_turn(&mut self, t: u64) -> TurnEnd {
        self.turn_open = false;
        let last = self.last_kind.take();
        let injected_goal = self.stack.last().filter(|f| f.injected && f.idx >= f.steps().len()).map(|f| f.goal.clone());
        let focus_moved = match (self.last_frame.take(), self.stack.last()) {
            (Some(id), Some(f)) => f.injected && f.id != id && injected_goal.is_none(),
            _ => false,
        };
        if !self.skip_await && !focus_moved {
            match (last, injected_goal.as_deref()) {
                (Some(ActKind::Propose | ActKind::Persuade), _) => {
                    self.add_expectation(t, ExpectKind::UserSpeech, Some(SpeechPurpose::ProposalAnswer), None);
                }
                (_, Some(ASK_TO_END_GOAL)) => {
                    self.add_expectation(t, ExpectKind::UserSpeech, Some(SpeechPurpose::EndAnswer), None);
                }
                (_, Some(RE_ENGAGE_GOAL)) => {
                    self.add_expectation(t, ExpectKind::UserSpeech, Some(SpeechPurpose::Presence), None);
                }
                (Some(ActKind::Reformulate | ActKind::Await), _) | (None, _) => {}
                (Some(ActKind::Ask | ActKind::Say), _) => match self.current_human_step() {
                    Some((step, here)) => {
                        self.expect_step(t, &step, here);
                        if matches!(step.act, Act::Pour { .. }) {
                            self.add_expectation(t, ExpectKind::Grounding, None, None);
                        }
                    }
                    None if self.turn_expects_look => {}
                    None => {
                        self.add_expectation(t, ExpectKind::Grounding, None, None);
                    }
                },
            }
        }
        self.turn_expects_look = false;
        self.arm(t);
        if !self.turn_acts.is_empty() {
            self.last_turn = std::mem::take(&mut self.turn_acts);
        }
        TurnEnd {
            awaiting_response: self.awaiting_response(),
            awaits_action: self.expectations.iter().any(|e| matches!(e.kind, ExpectKind::UserAction { .. })),
        }
    }

    // ---- interpretation ----

    fn mark_met(&mut self, e: &Expectation) {
        if let Some(step) = e.step {
            self.met.insert(step);
        }
    }

    fn speech_expectation(&self) -> Option<Expectation> {
        self.expectations.iter().find(|e| e.kind == ExpectKind::UserSpeech).cloned()
    }

    /// Interprets a user event against the current context.
    pub fn interpret(&mut self, t: u64, event: &DiscourseEvent) -> Interpretation {
        match event {
            DiscourseEvent::UserSpeech(text) => self.interpret_speech(t, text),
            DiscourseEvent::UserLook(object) => {
                let gone = self.clear_where("met", |e| e.kind == ExpectKind::UserLookAt(object.clone()));
                if gone.is_empty() {
                    return Interpretation::Unattached;
                }
                for e in &gone {
                    self.mark_met(e);
                }
                self.record(t, format!("User looks at {object}."));
                Interpretation::LookMet(object.clone())
            }
            DiscourseEvent::UserPour { from, to } => {
                if self.record(t, pour_text(from, to)) {
                    Interpretation::Attached
                } else {
                    Interpretation::Unattached
                }
            }
            DiscourseEvent::TableReading(fill) => {
                let gone = self.clear_where("evidence", |e| match &e.kind {
                    ExpectKind::UserAction { to, .. } => (expected_fill(to) - fill).abs() < 1e-9,
                    _ => false,
                });
                for e in &gone {
                    self.mark_met(e);
                }
                if gone.is_empty() {
                    Interpretation::Unattached
                } else {
                    Interpretation::ActionMet
                }
            }
            DiscourseEvent::UserNod { ack } => {
                let attached = self.record(t, "User nods.".into());
                if !*ack {
                    return if attached { Interpretation::Attached } else { Interpretation::Unattached };
                }
                if !self.clear_where("grounded", |e| e.kind == ExpectKind::Grounding).is_empty() {
                    return Interpretation::Grounded;
                }
                match self.speech_expectation().and_then(|e| e.purpose) {
                    Some(SpeechPurpose::ProposalAnswer) => self.answer_proposal(true),
                    Some(SpeechPurpose::EndAnswer) => {
                        self.clear_where("answered", |e| e.purpose == Some(SpeechPurpose::EndAnswer));
                        Interpretation::EndAnswer { affirm: true }
                    }
                    Some(SpeechPurpose::Presence) => {
                        self.clear_where("answered", |e| e.purpose == Some(SpeechPurpose::Presence));
                        Interpretation::Presence
                    }
                    _ => Interpretation::Attached,
                }
            }
        }
    }

    fn answer_proposal(&mut self, accepted: bool) -> Interpretation {
        self.clear_where("answered", |e| e.purpose == Some(SpeechPurpose::ProposalAnswer));
        let Some(f) = self.stack.last_mut() else { return Interpretation::Unattached };
        let StepState::Proposed { seg, recipe, persuaded } = f.state.clone() else {
            return Interpretation::Attached;
        };
        let can_persuade = matches!(&f.steps()[f.idx].act, Act::Goal { persuade: Some(_), .. });
        if accepted {
            f.state = StepState::Accepted { seg, recipe };
        } else if can_persuade && !persuaded {
            f.state = StepState::Persuading { seg, recipe };
        } else {
            self.reject_proposal();
        }
        Interpretation::ProposalAnswer { accepted }
    }

    fn interpret_speech(&mut self, t: u64, text: &str) -> Interpretation {
        let line = format!("User says \"{text}\"");
        if is_repeat_request(text) && !self.last_turn.is_empty() {
            self.record(t, line);
            self.clear_where("repeat", |e| matches!(e.kind, ExpectKind::UserSpeech | ExpectKind::Grounding));
            self.queue_repeat();
            return Interpretation::RepeatRequested;
        }
        if let Some(e) = self.speech_expectation() {
            self.record(t, line);
            match e.purpose.clone() {
                Some(SpeechPurpose::Tell(param)) => {
                    let value = text.trim().trim_end_matches(['.', '!', '?']).trim().to_string();
                    self.clear_where("answered", |x| x.id == e.id);
                    self.mark_met(&e);
                    self.bindings.insert(param.clone(), value.clone());
                    return Interpretation::ParameterBound { param, value };
                }
                Some(SpeechPurpose::ProposalAnswer) => {
                    return self.answer_proposal(polarity(text) != Some(false));
                }
                Some(SpeechPurpose::EndAnswer) => {
                    self.clear_where("answered", |x| x.id == e.id);
                    return Interpretation::EndAnswer { affirm: polarity(text) == Some(true) };
                }
                Some(SpeechPurpose::Presence) | None => {
                    self.clear_where("answered", |x| x.id == e.id);
                    return Interpretation::Presence;
                }
            }
        }
        if self.expectations.iter().any(|e| e.kind == ExpectKind::Grounding) {
            self.record(t, line);
            self.clear_where("grounded", |e| e.kind == ExpectKind::Grounding);
            for e in &mut self.expectations {
                if matches!(e.kind, ExpectKind::UserAction { .. }) {
                    e.armed_at = Some(t);
                }
            }
            return Interpretation::Grounded;
        }
        let attached = self.record(t, line);
        if is_farewell(text) {
            Interpretation::Farewell
        } else if attached {
            Interpretation::Attached
        } else {
            Interpretation::Unattached
        }
    }

    fn queue_repeat(&mut self) {
        self.repeats = self
            .last_turn
            .iter()
            .map(|s| PlannedSay { origin: Origin::Repeat, ..s.clone() })
            .collect();
    }

    // ---- engagement-driven changes ----

    /// Speaks `text` ahead of the plan unless the plan is about to say it.
    pub fn say_extra(&mut self, text: &str) {
        if let NextAct::Say(s) = self.next_act() {
            if s.utterance.text == text {
                return;
            }
        }
        if let Some(u) = self.realize(SemanticAct::Say(text.to_string())) {
            self.extras.push_back(PlannedSay {
                utterance: u,
                kind: ActKind::Say,
                chain: false,
                origin: Origin::Extra,
                injected: false,
            });
        }
    }

    /// Introduces a goal on top of the current focus (re-engagement, asking
    /// whether to end).
    pub fn inject(&mut self, goal: &str) -> bool {
        if self.finished || self.stack.is_empty() || self.stack.iter().any(|f| f.injected) {
            return false;
        }
        let Some(recipe) = self.choose_recipe(goal) else {
            self.notes.push(Note::Log(format!("no recipe for injected goal `{goal}`")));
            return false;
        };
        self.clear_where("interrupted", |_| true);
        self.notices.clear();
        self.repeats.clear();
        let parent = self.attach_point();
        let seg = self.open_segment(recipe.label(), Some(goal.to_string()), parent);
        self.push_frame(goal.to_string(), recipe, seg, true);
        true
    }

    /// Finishes an injected goal and repeats the interrupted turn.
    #[allow(clippy::manual_pop_if)]
    pub fn resume(&mut self) {
        if self.stack.last().is_some_and(|f| f.injected) {
            self.clear_where("resumed", |_| true);
            let f = self.stack.pop().expect("frame");
            self.close_segment(f.seg, Status::Done);
            self.notes.push(Note::GoalDone(f.goal));
            self.queue_repeat();
        }
    }

    /// Abandons the current activity and moves to the closing goal.
    pub fn abort_to_closing(&mut self, await_reply: bool) {
        self.skip_await |= !await_reply;
        self.notices.clear();
        self.repeats.clear();
        self.extras.clear();
        if self.stack.iter().any(|f| f.goal == CLOSING_GOAL && !f.injected) {
            while self.stack.iter().any(|f| f.injected) {
                self.pop_frame(Status::Stopped);
            }
            if !await_reply {
                self.skip_all();
            }
            return;
        }
        self.aborted = true;
        self.clear_where("aborted", |_| true);
        while self.stack.len() > 1 {
            let f = self.stack.last().expect("frame");
            if let StepState::Proposed { .. } | StepState::Persuading { .. } = f.state {
                self.reject_proposal();
            }
            self.pop_frame(Status::Stopped);
        }
        let Some(root) = self.stack.last_mut() else { return };
        if let StepState::Proposed { .. } | StepState::Persuading { .. } = root.state {
            self.reject_proposal();
        }
        let root = self.stack.last_mut().expect("root");
        let closing = root.recipe.steps.iter().position(|s| matches!(&s.act, Act::Goal { goal, .. } if goal == CLOSING_GOAL));
        if let Some(s) = root.section_seg.take() {
            self.close_segment(s, Status::Stopped);
        }
        let root = self.stack.last_mut().expect("root");
        match closing {
            Some(i) => {
                root.section = Sec::Body;
                root.idx = i;
                root.state = StepState::Fresh;
            }
            None => self.pop_frame(Status::Stopped),
        }
    }

    fn skip_all(&mut self) {
        let gone = self.clear_where("skipped", |_| true);
        for e in &gone {
            self.mark_met(e);
        }
    }

    /// Stops waiting for the user: pending expectations are dropped and the
    /// steps they guard count as performed.
    pub fn skip_await(&mut self) {
        self.skip_await = true;
        self.skip_all();
    }

    pub fn proceed_without_look(&mut self, object: &str) {
        let gone = self.clear_where("abandoned", |e| e.kind == ExpectKind::UserLookAt(object.to_string()));
        for e in &gone {
            self.mark_met(e);
        }
    }

    /// Queues a second attempt at directing the user's attention.
    /// Without a template the wait restarts at `t` and no notice is spoken.
    pub fn reformulate(&mut self, t: u64, object: &str) {
        let u = self.realize(SemanticAct::ReformulateLook(object.to_string()));
        for e in &mut self.expectations {
            if e.kind == ExpectKind::UserLookAt(object.to_string()) {
                e.reformulated = true;
                e.armed_at = if u.is_some() { None } else { Some(t) };
            }
        }
        if let Some(u) = u {
            self.notices.push_back(PlannedSay {
                utterance: u,
                kind: ActKind::Reformulate,
                chain: false,
                origin: Origin::Notice,
                injected: false,
            });
        }
    }

    /// Queues a notice that the robot is waiting for evidence of an action.
    pub fn await_notice(&mut self, act: &str) {
        for e in &mut self.expectations {
            if matches!(e.kind, ExpectKind::UserAction { .. }) {
                e.noticed = true;
            }
        }
        if let Some(u) = self.realize(SemanticAct::AwaitEvidence(act.to_string())) {
            self.notices.push_back(PlannedSay {
                utterance: u,
                kind: ActKind::Await,
                chain: false,
                origin: Origin::Notice,
                injected: false,
            });
        }
    }

    // ---- rendering ----

    fn depth_lines(&self, node: Node, depth: usize, out: &mut Vec<(usize, String)>) {
        match node {
            Node::Record(r) => out.push((depth, self.records[r].text.clone())),
            Node::Segment(s) => {
                let seg = &self.segments[s];
                if seg.status == Status::Open && seg.children.is_empty() {
                    return;
                }
                let word = match seg.status {
                    Status::Open => "Doing",
                    Status::Done => "Done",
                    Status::Stopped => "Stopped",
                };
                let number = seg.number.map(|n| format!("{n} ")).unwrap_or_default();
                out.push((depth, format!("{number}[{word} {}.]", seg.label)));
                for c in &seg.children {
                    self.depth_lines(*c, depth + 1, out);
                }
            }
        }
    }

    /// History lines with their depths.
    pub fn history_lines(&self) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        for n in &self.top {
            self.depth_lines(*n, 0, &mut out);
        }
        out
    }

    /// Indented segmented interaction history, two spaces per level.
    pub fn render_history(&self) -> String {
        self.history_lines().into_iter().map(|(d, l)| format!("{}{l}\n", "  ".repeat(d))).collect()
    }
}

/// Splits an indented history line into depth and content.
pub fn parse_history_line(line: &str) -> (usize, &str) {
    let content = line.trim_start_matches(' ');
    ((line.len() - content.len()) / 2, content)
}

fn is_structural(content: &str) -> bool {
    let body = content.trim_start_matches(|c: char| c.is_ascii_digit()).trim_start();
    body.starts_with('[') || content == "Got face."
}

/// Compares the non-terminal structure of a rendered history against a
/// golden file. In the golden file a line holding only `...` at depth `d`
/// stands for any number of rendered lines at depth `d` or deeper.
pub fn structural_match(rendered: &str, golden: &str) -> Result<(), String> {
    let got: Vec<(usize, &str)> = rendered
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_history_line)
        .filter(|(_, c)| is_structural(c))
        .collect();
    let want: Vec<(usize, &str)> = golden
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(parse_history_line)
        .filter(|(_, c)| *c == "..." || is_structural(c))
        .collect();
    fn go(got: &[(usize, &str)], want: &[(usize, &str)], i: usize, j: usize, best: &mut (usize, usize)) -> bool {
        if j > best.1 || (j == best.1 && i > best.0) {
            *best = (i, j);
        }
        if j == want.len() {
            return i == got.len();
        }
        let (d, w) = want[j];
        if w == "..." {
            let mut k = i;
            loop {
                if go(got, want, k, j + 1, best) {
                    return true;
                }
                if k < got.len() && got[k].0 >= d {
                    k += 1;
                } else {
                    return false;
                }
            }
        }
        i < got.len() && got[i] == (d, w) && go(got, want, i + 1, j + 1, best)
    }
    let mut best = (0, 0);
    if go(&got, &want, 0, 0, &mut best) {
        return Ok(());
    }
    let (i, j) = best;
    Err(format!(
        "structure diverges at golden line {} {:?}; rendered has {:?}",
        j + 1,
        want.get(j),
        got.get(i)
    ))
}
