//! Simulated body: motor arbitration, face tracking, speech gating and
//! expectation-driven translation of raw sensing into semantic events.

pub mod nod;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::world::{Actor, HeadPose, World};

pub use nod::{calibrate, detect_nod, generate_corpus, LabeledTrace, MotionTrace, NodConfig, NodScore};

pub const DEFAULT_GLANCE_MS: u64 = 1200;
pub const DEFAULT_TICK_MS: u64 = 100;

/// Experimental condition: full gesturing robot or beak-only talker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Mover,
    Talker,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mover" => Ok(Mode::Mover),
            "talker" => Ok(Mode::Talker),
            other => Err(format!("unknown mode `{other}` (expected mover or talker)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mover => "mover",
            Mode::Talker => "talker",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GazeTarget {
    FaceTrack,
    Fixed { yaw: f64, pitch: f64 },
    Object(String),
    Away,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Wings {
    Idle,
    Beat,
    Point(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorState {
    pub head: GazeTarget,
    pub wings: Wings,
    /// Beak moves in sync with speech.
    pub beak: bool,
    pub mode: Mode,
    pub oriented: bool,
    /// End of the running glance or point, after which the head returns to
    /// face tracking.
    pub gesture_until: Option<u64>,
}

impl MotorState {
    pub fn new(mode: Mode) -> Self {
        MotorState {
            head: GazeTarget::Fixed { yaw: 0.0, pitch: 0.0 },
            wings: Wings::Idle,
            beak: false,
            mode,
            oriented: false,
            gesture_until: None,
        }
    }

    /// Object the robot is looking at; `face` while tracking or fixed on
    /// the user's initial position.
    pub fn gaze_object(&self) -> Option<&str> {
        match &self.head {
            GazeTarget::FaceTrack => Some("face"),
            GazeTarget::Fixed { .. } if self.oriented => Some("face"),
            GazeTarget::Fixed { .. } | GazeTarget::Away => None,
            GazeTarget::Object(o) => Some(o),
        }
    }

    pub fn faces_user(&self) -> bool {
        self.gaze_object() == Some("face")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MotorCommand {
    /// Initial turn toward a newly found face.
    Orient { yaw: f64, pitch: f64 },
    FaceTrack,
    GlanceAt { target: String, duration: u64 },
    PointAt { target: String, duration: u64 },
    Beat,
    LookAway,
    /// End of turn: cancel any running gesture and face the user.
    ReturnToFace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MotorOutcome {
    Applied(MotorCommand),
    Suppressed { command: MotorCommand, reason: String },
    /// A glance or point finished and the head went back to the face.
    Returned,
}

/// Applies commands at time `t` in order, honoring priorities and the
/// talker restriction. Expired glances are retired first.
pub fn arbitrate(
    state: &MotorState,
    commands: &[MotorCommand],
    speaking: bool,
    t: u64,
) -> (MotorState, Vec<MotorOutcome>) {
    let mut s = state.clone();
    let mut out = Vec::new();
    s.beak = speaking;
    if s.gesture_until.is_some_and(|until| until <= t) {
        s.gesture_until = None;
        s.wings = Wings::Idle;
        if matches!(s.head, GazeTarget::Object(_)) {
            s.head = GazeTarget::FaceTrack;
            out.push(MotorOutcome::Returned);
        }
    }
    if matches!(s.wings, Wings::Beat) {
        s.wings = Wings::Idle;
    }
    for cmd in commands {
        if s.mode == Mode::Talker {
            match cmd {
                MotorCommand::Orient { yaw, pitch } if !s.oriented => {
                    s.head = GazeTarget::Fixed { yaw: *yaw, pitch: *pitch };
                    s.oriented = true;
                    out.push(MotorOutcome::Applied(cmd.clone()));
                }
                _ => out.push(MotorOutcome::Suppressed {
                    command: cmd.clone(),
                    reason: "talker mode moves only the beak".into(),
                }),
            }
            continue;
        }
        match cmd {
            MotorCommand::Orient { .. } => {
                s.head = GazeTarget::FaceTrack;
                s.oriented = true;
                s.gesture_until = None;
            }
            MotorCommand::FaceTrack => {
                if s.gesture_until.is_some() {
                    out.push(MotorOutcome::Suppressed {
                        command: cmd.clone(),
                        reason: "glance in progress".into(),
                    });
                    continue;
                }
                s.head = GazeTarget::FaceTrack;
            }
            MotorCommand::GlanceAt { target, duration } => {
                s.head = GazeTarget::Object(target.clone());
                s.gesture_until = Some(t + duration);
            }
            MotorCommand::PointAt { target, duration } => {
                s.head = GazeTarget::Object(target.clone());
                s.wings = Wings::Point(target.clone());
                s.gesture_until = Some(t + duration);
            }
            MotorCommand::Beat => {
                if !matches!(s.wings, Wings::Point(_)) {
                    s.wings = Wings::Beat;
                }
            }
            MotorCommand::LookAway => {
                s.head = GazeTarget::Away;
                s.gesture_until = None;
                s.wings = Wings::Idle;
            }
            MotorCommand::ReturnToFace => {
                s.head = GazeTarget::FaceTrack;
                s.gesture_until = None;
                s.wings = Wings::Idle;
            }
        }
        out.push(MotorOutcome::Applied(cmd.clone()));
    }
    (s, out)
}

/// Keeps the head on the user's face and reports sustained absence.
#[derive(Debug, Clone)]
pub struct FaceTracker {
    pub grace_ms: u64,
    position: Option<(f64, f64)>,
    lost_since: Option<u64>,
    lost_reported: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FaceTrackOutput {
    /// New head orientation to follow the face.
    pub head: Option<(f64, f64)>,
    /// Face absent for longer than the grace period (reported once).
    pub face_lost: bool,
}

impl FaceTracker {
    pub fn new(grace_ms: u64) -> Self {
        FaceTracker { grace_ms, position: None, lost_since: None, lost_reported: false }
    }

    pub fn position(&self) -> Option<(f64, f64)> {
        self.position
    }

    pub fn visible(&self) -> bool {
        self.position.is_some() && self.lost_since.is_none()
    }

    /// Feeds one sample: `Some(yaw, pitch)` when the face is seen, `None`
    /// when it is not.
    pub fn observe(&mut self, t: u64, face: Option<(f64, f64)>) -> FaceTrackOutput {
        let mut out = FaceTrackOutput::default();
        match face {
            Some(p) => {
                if self.position != Some(p) || self.lost_since.is_some() {
                    out.head = Some(p);
                }
                self.position = Some(p);
                self.lost_since = None;
                self.lost_reported = false;
            }
            None => {
                if self.lost_since.is_none() && self.position.is_some() {
                    self.lost_since = Some(t);
                }
            }
        }
        out.face_lost = self.poll(t);
        out
    }

    /// Time at which a continuing absence will be reported.
    pub fn deadline(&self) -> Option<u64> {
        match self.lost_since {
            Some(since) if !self.lost_reported => Some(since + self.grace_ms + 1),
            _ => None,
        }
    }

    /// Checks the grace timer without a new sample.
    pub fn poll(&mut self, t: u64) -> bool {
        match self.lost_since {
            Some(since) if !self.lost_reported && t.saturating_sub(since) > self.grace_ms => {
                self.lost_reported = true;
                true
            }
            _ => false,
        }
    }
}

/// Raw sensing as it arrives from the body.
#[derive(Debug, Clone, PartialEq)]
pub enum RawEvent {
    HumanPose(HeadPose),
    Speech(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SemanticEvent {
    LookAt { who: Actor, object: String },
    Speech(String),
}

/// Translates raw sensing using the conversational context. A look becomes
/// a semantic event only when it lands on an object the dialogue expects
/// the user to look at; speech is dropped while the robot is talking.
pub fn fuse(raw: &RawEvent, expected_looks: &[String], robot_speaking: bool, world: &World) -> Option<SemanticEvent> {
    match raw {
        RawEvent::HumanPose(pose) => {
            let targets = world.target_of(pose);
            expected_looks
                .iter()
                .find(|o| targets.contains(*o))
                .map(|o| SemanticEvent::LookAt { who: pose.who, object: o.clone() })
        }
        RawEvent::Speech(text) if !robot_speaking => Some(SemanticEvent::Speech(text.clone())),
        RawEvent::Speech(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mover() -> MotorState {
        let (s, _) = arbitrate(&MotorState::new(Mode::Mover), &[MotorCommand::Orient { yaw: 0.0, pitch: 0.0 }], false, 0);
        s
    }

    #[test]
    fn glance_overrides_face_tracking_then_returns() {
        let s = mover();
        let (s, _) = arbitrate(&s, &[MotorCommand::GlanceAt { target: "table".into(), duration: 1200 }], true, 1000);
        assert_eq!(s.head, GazeTarget::Object("table".into()));
        let (s, out) = arbitrate(&s, &[MotorCommand::FaceTrack], true, 1500);
        assert_eq!(s.head, GazeTarget::Object("table".into()));
        assert!(matches!(out[0], MotorOutcome::Suppressed { .. }));
        let (s, out) = arbitrate(&s, &[], true, 2200);
        assert_eq!(s.head, GazeTarget::FaceTrack);
        assert_eq!(out, vec![MotorOutcome::Returned]);
    }

    #[test]
    fn beat_leaves_head_alone() {
        let s = mover();
        let (s, _) = arbitrate(&s, &[MotorCommand::Beat], true, 100);
        assert_eq!(s.head, GazeTarget::FaceTrack);
        assert_eq!(s.wings, Wings::Beat);
        assert!(s.beak);
    }

    #[test]
    fn talker_keeps_initial_orientation() {
        let s = MotorState::new(Mode::Talker);
        let (s, out) = arbitrate(&s, &[MotorCommand::Orient { yaw: 3.0, pitch: 1.0 }], false, 0);
        assert_eq!(out.len(), 1);
        let cmds = [
            MotorCommand::GlanceAt { target: "cup".into(), duration: 1200 },
            MotorCommand::Beat,
            MotorCommand::LookAway,
            MotorCommand::Orient { yaw: 9.0, pitch: 0.0 },
        ];
        let (s2, out) = arbitrate(&s, &cmds, true, 500);
        assert!(out.iter().all(|o| matches!(o, MotorOutcome::Suppressed { .. })));
        assert_eq!(s2.head, GazeTarget::Fixed { yaw: 3.0, pitch: 1.0 });
        assert_eq!(s2.wings, Wings::Idle);
        assert!(s2.beak);
        assert!(s2.faces_user());
    }

    #[test]
    fn face_tracking_follows_and_reports_loss_after_grace() {
        let mut ft = FaceTracker::new(2000);
        assert_eq!(ft.observe(0, Some((0.0, 0.0))).head, Some((0.0, 0.0)));
        assert_eq!(ft.observe(100, Some((20.0, 0.0))).head, Some((20.0, 0.0)));
        assert_eq!(ft.observe(200, Some((20.0, 0.0))).head, None);
        assert!(!ft.observe(300, None).face_lost);
        assert!(!ft.poll(800));
        assert!(ft.observe(900, Some((20.0, 0.0))).head.is_some());
        ft.observe(1000, None);
        assert!(!ft.poll(3000));
        assert!(ft.poll(3001));
        assert!(!ft.poll(4000));
    }

    #[test]
    fn fusion_resolves_shared_region() {
        let world = World::default();
        let (yaw, pitch) = world.direction_of("cup").unwrap();
        let raw = RawEvent::HumanPose(HeadPose::new(Actor::Human, yaw, pitch, 10).unwrap());
        assert_eq!(
            fuse(&raw, &["cup".into()], false, &world),
            Some(SemanticEvent::LookAt { who: Actor::Human, object: "cup".into() })
        );
        assert_eq!(
            fuse(&raw, &["readout".into()], false, &world),
            Some(SemanticEvent::LookAt { who: Actor::Human, object: "readout".into() })
        );
        assert_eq!(fuse(&raw, &[], false, &world), None);
        assert_eq!(fuse(&raw, &["pitcher".into()], false, &world), None);
    }

    #[test]
    fn speech_gated_while_robot_speaks() {
        let world = World::default();
        let raw = RawEvent::Speech("Ok.".into());
        assert_eq!(fuse(&raw, &[], true, &world), None);
        assert_eq!(fuse(&raw, &[], false, &world), Some(SemanticEvent::Speech("Ok.".into())));
    }
}
