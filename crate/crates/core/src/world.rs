//! Simulated scene: robot, visitor, table objects and the instrumented table.
//!
//! Directions are abstract (yaw, pitch) angles in degrees relative to the
//! robot's forward axis. Each object sits in exactly one region; regions that
//! share space with another region must be declared `shared`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Built-in scene matching the demonstration layout.
pub const DEFAULT_SCENE: &str = include_str!("../fixtures/default.scene");

pub const DEFAULT_SENSOR_DELAY_MS: u64 = 800;
pub const DEFAULT_LIFT_DELAY_MS: u64 = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    Robot,
    Human,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Robot => f.write_str("robot"),
            Actor::Human => f.write_str("human"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectKind {
    Cup,
    Readout,
    Pitcher,
    Table,
    Robot,
    HumanFace,
}

impl FromStr for ObjectKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "cup" => ObjectKind::Cup,
            "readout" => ObjectKind::Readout,
            "pitcher" => ObjectKind::Pitcher,
            "table" => ObjectKind::Table,
            "robot" => ObjectKind::Robot,
            "face" | "humanface" | "human_face" => ObjectKind::HumanFace,
            other => return Err(format!("unknown object kind `{other}`")),
        })
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ObjectKind::Cup => "cup",
            ObjectKind::Readout => "readout",
            ObjectKind::Pitcher => "pitcher",
            ObjectKind::Table => "table",
            ObjectKind::Robot => "robot",
            ObjectKind::HumanFace => "face",
        };
        f.write_str(s)
    }
}

/// Half-open angular interval `[lo, hi)` in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    pub lo: f64,
    pub hi: f64,
}

impl AngleRange {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v < self.hi
    }

    pub fn center(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }

    fn overlaps(&self, other: &AngleRange) -> bool {
        self.lo < other.hi && other.lo < self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub yaw: AngleRange,
    pub pitch: AngleRange,
    pub shared: bool,
}

impl Region {
    pub fn contains(&self, yaw: f64, pitch: f64) -> bool {
        self.yaw.contains(yaw) && self.pitch.contains(pitch)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.yaw.center(), self.pitch.center())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: String,
    pub kind: ObjectKind,
    pub region: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    pub who: Actor,
    pub yaw: f64,
    pub pitch: f64,
    pub t: u64,
}

impl HeadPose {
    pub fn new(who: Actor, yaw: f64, pitch: f64, t: u64) -> Result<Self, WorldError> {
        if !(-180.0..180.0).contains(&yaw) || !(-90.0..=90.0).contains(&pitch) {
            return Err(WorldError::PoseOutOfRange { yaw, pitch });
        }
        Ok(Self { who, yaw, pitch, t })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableReading {
    pub fill_fraction: f64,
    pub t: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("object `{object}` refers to unknown region `{region}`")]
    UnknownRegion { object: String, region: String },
    #[error("region `{0}` has an empty or inverted range")]
    EmptyRange(String),
    #[error("regions `{0}` and `{1}` overlap but are not declared shared")]
    UndeclaredOverlap(String, String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("cannot pour from `{from}` to `{to}`")]
    InvalidPour { from: String, to: String },
    #[error("head pose ({yaw}, {pitch}) out of range")]
    PoseOutOfRange { yaw: f64, pitch: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    regions: Vec<Region>,
    objects: Vec<WorldObject>,
    fill: f64,
    pub sensor_delay_ms: u64,
    /// Extra delay when the cup is lifted off the table to pour from it.
    pub lift_delay_ms: u64,
}

impl Default for World {
    fn default() -> Self {
        DEFAULT_SCENE.parse().expect("built-in scene is valid")
    }
}

impl World {
    pub fn new(regions: Vec<Region>, objects: Vec<WorldObject>) -> Result<Self, WorldError> {
        let mut ids = BTreeSet::new();
        for r in &regions {
            if !ids.insert(r.id.as_str()) {
                return Err(WorldError::DuplicateId(r.id.clone()));
            }
            if !(r.yaw.lo < r.yaw.hi && r.pitch.lo < r.pitch.hi) {
                return Err(WorldError::EmptyRange(r.id.clone()));
            }
        }
        for (i, a) in regions.iter().enumerate() {
            for b in &regions[i + 1..] {
                let overlap = a.yaw.overlaps(&b.yaw) && a.pitch.overlaps(&b.pitch);
                if overlap && !(a.shared && b.shared) {
                    return Err(WorldError::UndeclaredOverlap(a.id.clone(), b.id.clone()));
                }
            }
        }
        let mut object_ids = BTreeSet::new();
        for o in &objects {
            if !object_ids.insert(o.id.as_str()) {
                return Err(WorldError::DuplicateId(o.id.clone()));
            }
            if !regions.iter().any(|r| r.id == o.region) {
                return Err(WorldError::UnknownRegion {
                    object: o.id.clone(),
                    region: o.region.clone(),
                });
            }
        }
        Ok(Self {
            regions,
            objects,
            fill: 0.0,
            sensor_delay_ms: DEFAULT_SENSOR_DELAY_MS,
            lift_delay_ms: DEFAULT_LIFT_DELAY_MS,
        })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn objects(&self) -> &[WorldObject] {
        &self.objects
    }

    pub fn object(&self, id: &str) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_of_kind(&self, kind: ObjectKind) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.kind == kind)
    }

    pub fn region(&self, id: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    /// Direction (yaw, pitch) at which an object is seen.
    pub fn direction_of(&self, object: &str) -> Option<(f64, f64)> {
        let o = self.object(object)?;
        self.region(&o.region).map(Region::center)
    }

    pub fn fill_fraction(&self) -> f64 {
        self.fill
    }

    /// Objects the pose is aimed at. The looker's own body is never a target.
    pub fn target_of(&self, pose: &HeadPose) -> BTreeSet<String> {
        let own = match pose.who {
            Actor::Robot => ObjectKind::Robot,
            Actor::Human => ObjectKind::HumanFace,
        };
        self.objects
            .iter()
            .filter(|o| o.kind != own)
            .filter(|o| {
                self.region(&o.region)
                    .is_some_and(|r| r.contains(pose.yaw, pose.pitch))
            })
            .map(|o| o.id.clone())
            .collect()
    }

    /// Atomic pour between the pitcher and the cup. The returned reading is
    /// stamped with the time the table sensor reports it.
    pub fn apply_pour(&mut self, from: &str, to: &str, t: u64) -> Result<TableReading, WorldError> {
        let kind = |id: &str| {
            self.object(id)
                .map(|o| o.kind)
                .ok_or_else(|| WorldError::UnknownObject(id.to_string()))
        };
        let (fill, delay) = match (kind(from)?, kind(to)?) {
            (ObjectKind::Pitcher, ObjectKind::Cup) => (1.0, self.sensor_delay_ms),
            (ObjectKind::Cup, ObjectKind::Pitcher) => (0.0, self.sensor_delay_ms + self.lift_delay_ms),
            _ => {
                return Err(WorldError::InvalidPour {
                    from: from.to_string(),
                    to: to.to_string(),
                })
            }
        };
        self.fill = fill;
        Ok(TableReading {
            fill_fraction: fill,
            t: t + delay,
        })
    }

    /// Serializes back to the scene-file grammar.
    pub fn to_scene_text(&self) -> String {
        let mut out = String::new();
        for r in &self.regions {
            out.push_str(&format!(
                "region {} {} {} {} {}{}\n",
                r.id,
                r.yaw.lo,
                r.yaw.hi,
                r.pitch.lo,
                r.pitch.hi,
                if r.shared { " shared" } else { "" }
            ));
        }
        for o in &self.objects {
            out.push_str(&format!("object {} {} {}\n", o.id, o.kind, o.region));
        }
        out.push_str(&format!("sensor_delay {}\n", self.sensor_delay_ms));
        out.push_str(&format!("lift_delay {}\n", self.lift_delay_ms));
        out
    }
}

impl FromStr for World {
    type Err = WorldError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut regions = Vec::new();
        let mut objects = Vec::new();
        let mut sensor_delay = None;
        let mut lift_delay = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: String| WorldError::Syntax { line: line_no, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| -> Result<f64, WorldError> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| syntax(format!("expected a number, found `{s}`")))
            };
            match fields[0] {
                "region" => {
                    if !(fields.len() == 6 || (fields.len() == 7 && fields[6] == "shared")) {
                        return Err(syntax(
                            "expected `region <id> <yaw_lo> <yaw_hi> <pitch_lo> <pitch_hi> [shared]`".into(),
                        ));
                    }
                    let yaw = AngleRange { lo: num(fields[2])?, hi: num(fields[3])? };
                    let pitch = AngleRange { lo: num(fields[4])?, hi: num(fields[5])? };
                    if yaw.lo < -180.0 || yaw.hi > 180.0 || pitch.lo < -90.0 || pitch.hi > 90.0 {
                        return Err(syntax("angles out of range".into()));
                    }
                    regions.push(Region {
                        id: fields[1].to_string(),
                        yaw,
                        pitch,
                        shared: fields.len() == 7,
                    });
                }
                "object" => {
                    if fields.len() != 4 {
                        return Err(syntax("expected `object <id> <kind> <region>`".into()));
                    }
                    objects.push(WorldObject {
                        id: fields[1].to_string(),
                        kind: fields[2].parse().map_err(syntax)?,
                        region: fields[3].to_string(),
                    });
                }
                "sensor_delay" | "lift_delay" => {
                    let v = fields
                        .get(1)
                        .filter(|_| fields.len() == 2)
                        .and_then(|s| s.parse::<u64>().ok())
                        .ok_or_else(|| syntax(format!("expected `{} <ms>`", fields[0])))?;
                    if fields[0] == "sensor_delay" {
                        sensor_delay = Some(v);
                    } else {
                        lift_delay = Some(v);
                    }
                }
                other => return Err(syntax(format!("unknown directive `{other}`"))),
            }
        }
        let mut world = World::new(regions, objects)?;
        if let Some(d) = sensor_delay {
            world.sensor_delay_ms = d;
        }
        if let Some(d) = lift_delay {
            world.lift_delay_ms = d;
        }
        Ok(world)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn human_at(world: &World, region: &str) -> HeadPose {
        let (yaw, pitch) = world.region(region).unwrap().center();
        HeadPose::new(Actor::Human, yaw, pitch, 0).unwrap()
    }

    #[test]
    fn robot_region_target() {
        let w = World::default();
        let got = w.target_of(&human_at(&w, "partner"));
        assert_eq!(got.into_iter().collect::<Vec<_>>(), vec!["robot".to_string()]);
    }

    #[test]
    fn shared_glass_region_is_ambiguous() {
        let w = World::default();
        let got = w.target_of(&human_at(&w, "glass"));
        assert_eq!(
            got.into_iter().collect::<Vec<_>>(),
            vec!["cup".to_string(), "readout".to_string()]
        );
    }

    #[test]
    fn pose_outside_all_regions() {
        let w = World::default();
        let pose = HeadPose::new(Actor::Human, 120.0, 60.0, 0).unwrap();
        assert!(w.target_of(&pose).is_empty());
    }

    #[test]
    fn robot_sees_face_not_itself() {
        let w = World::default();
        let pose = HeadPose::new(Actor::Robot, 0.0, 0.0, 0).unwrap();
        assert_eq!(w.target_of(&pose).into_iter().collect::<Vec<_>>(), vec!["face".to_string()]);
    }

    #[test]
    fn pours() {
        let mut w = World::default();
        let r = w.apply_pour("pitcher", "cup", 1000).unwrap();
        assert_eq!(r.fill_fraction, 1.0);
        assert_eq!(r.t, 1000 + DEFAULT_SENSOR_DELAY_MS);
        let r = w.apply_pour("cup", "pitcher", 5000).unwrap();
        assert_eq!(r.fill_fraction, 0.0);
        assert_eq!(w.fill_fraction(), 0.0);
        assert_eq!(r.t, 5000 + DEFAULT_SENSOR_DELAY_MS + DEFAULT_LIFT_DELAY_MS);
        assert!(matches!(w.apply_pour("cup", "cup", 0), Err(WorldError::InvalidPour { .. })));
        assert!(matches!(w.apply_pour("vase", "cup", 0), Err(WorldError::UnknownObject(_))));
    }

    #[test]
    fn scene_validation() {
        let overlap = "region a 0 10 0 10\nregion b 5 15 0 10\n";
        assert!(matches!(overlap.parse::<World>(), Err(WorldError::UndeclaredOverlap(..))));
        let shared = "region a 0 10 0 10 shared\nregion b 5 15 0 10 shared\n";
        assert!(shared.parse::<World>().is_ok());
        let inverted = "region a 10 0 0 10\n";
        assert!(matches!(inverted.parse::<World>(), Err(WorldError::EmptyRange(_))));
        let dangling = "region a 0 10 0 10\nobject cup cup nowhere\n";
        assert!(matches!(dangling.parse::<World>(), Err(WorldError::UnknownRegion { .. })));
        let bad = "region a 0 ten 0 10\n";
        assert!(matches!(bad.parse::<World>(), Err(WorldError::Syntax { line: 1, .. })));
    }

    #[test]
    fn scene_text_round_trip() {
        let w = World::default();
        let again: World = w.to_scene_text().parse().unwrap();
        assert_eq!(w, again);
    }
}
