//! Behavioral measures over interaction traces and the tracking-failure
//! classifier for annotated host/visitor looks.
//!
//! Annotation files are line oriented, `who target start_ms end_ms nod
//! intonation`, with `who` one of `host`/`visitor` and the two flags written
//! as `0`/`1`. The flags only mean something on host looks: `nod` says the
//! visitor nodded during the look and `intonation` that the host closed an
//! intonation phase during it or shortly after. A host looking at the visitor
//! is written with target `visitor`; the visitor looking back at the host with
//! target `host`. A visitor target may name several ids joined by `+` when the
//! gaze covers more than one object.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Body, Message, Source};
use crate::world::{Actor, HeadPose, World};

pub const ALIGN_MS: u64 = 700;
pub const QUICK_LOOK_MS: u64 = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("look {index} ends at {end} but starts at {start}")]
    EmptyLook { index: usize, start: u64, end: u64 },
    #[error("{who} looks {first} and {second} overlap")]
    Overlap { who: Who, first: usize, second: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Who {
    Host,
    Visitor,
}

impl fmt::Display for Who {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Who::Host => "host",
            Who::Visitor => "visitor",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedLook {
    pub who: Who,
    pub target: String,
    pub start: u64,
    pub end: u64,
    pub concurrent_nod: bool,
    pub intonation_close: bool,
}

impl AnnotatedLook {
    pub fn duration(&self) -> u64 {
        self.end.saturating_sub(self.start)
    }
}

impl fmt::Display for AnnotatedLook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {}",
            self.who,
            self.target,
            self.start,
            self.end,
            u8::from(self.concurrent_nod),
            u8::from(self.intonation_close)
        )
    }
}

fn flag(s: &str, line: usize) -> Result<bool, MetricsError> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(MetricsError::Syntax { line, msg: format!("flag must be 0 or 1, got `{s}`") }),
    }
}

/// Parses an annotation file. Blank lines and `#` comments are skipped.
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotatedLook>, MetricsError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let f: Vec<&str> = content.split_whitespace().collect();
        if f.len() != 6 {
            return Err(MetricsError::Syntax { line, msg: format!("expected 6 fields, found {}", f.len()) });
        }
        let who = match f[0] {
            "host" => Who::Host,
            "visitor" => Who::Visitor,
            w => return Err(MetricsError::Syntax { line, msg: format!("unknown party `{w}`") }),
        };
        let num = |s: &str| {
            s.parse::<u64>()
                .map_err(|e| MetricsError::Syntax { line, msg: format!("bad time `{s}`: {e}") })
        };
        out.push(AnnotatedLook {
            who,
            target: f[1].to_string(),
            start: num(f[2])?,
            end: num(f[3])?,
            concurrent_nod: flag(f[4], line)?,
            intonation_close: flag(f[5], line)?,
        });
    }
    Ok(out)
}

pub fn write_annotations(looks: &[AnnotatedLook]) -> String {
    looks.iter().map(|l| format!("{l}\n")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingLabel {
    Tracked,
    QuickLook,
    Nod,
    Uncategorized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackingConfig {
    /// How late the visitor's look may start and still count as tracking.
    /// It must also start before the host looks elsewhere.
    pub align_ms: u64,
    /// Untracked looks shorter than this are quick looks.
    pub quick_ms: u64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig { align_ms: ALIGN_MS, quick_ms: QUICK_LOOK_MS }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackingCounts {
    pub tracked: u32,
    pub quick_looks: u32,
    pub nods: u32,
    pub uncategorized: u32,
}

/// Percentages rounded to whole numbers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundedShares {
    pub tracked: u32,
    pub quick_looks: u32,
    pub nods: u32,
    pub uncategorized: u32,
}

fn pct(n: u32, of: u32) -> f64 {
    if of == 0 {
        0.0
    } else {
        100.0 * f64::from(n) / f64::from(of)
    }
}

impl TrackingCounts {
    pub fn total(&self) -> u32 {
        self.tracked + self.failures()
    }

    pub fn failures(&self) -> u32 {
        self.quick_looks + self.nods + self.uncategorized
    }

    fn add(&mut self, label: TrackingLabel) {
        match label {
            TrackingLabel::Tracked => self.tracked += 1,
            TrackingLabel::QuickLook => self.quick_looks += 1,
            TrackingLabel::Nod => self.nods += 1,
            TrackingLabel::Uncategorized => self.uncategorized += 1,
        }
    }

    /// Shares of all host looks.
    pub fn pct_of_looks(&self) -> RoundedShares {
        let n = self.total();
        RoundedShares {
            tracked: pct(self.tracked, n).round() as u32,
            quick_looks: pct(self.quick_looks, n).round() as u32,
            nods: pct(self.nods, n).round() as u32,
            uncategorized: pct(self.uncategorized, n).round() as u32,
        }
    }

    /// Failure shares of all tracking failures; `tracked` is always 0.
    pub fn pct_of_failures(&self) -> RoundedShares {
        let n = self.failures();
        RoundedShares {
            tracked: 0,
            quick_looks: pct(self.quick_looks, n).round() as u32,
            nods: pct(self.nods, n).round() as u32,
            uncategorized: pct(self.uncategorized, n).round() as u32,
        }
    }
}

/// True when a visitor gaze target covers what the host looks at.
fn covers(visitor_target: &str, host_target: &str) -> bool {
    let want = if host_target == "visitor" { "host" } else { host_target };
    visitor_target.split('+').any(|t| t == want)
}

fn validate(looks: &[AnnotatedLook]) -> Result<(), MetricsError> {
    for (i, l) in looks.iter().enumerate() {
        if l.start >= l.end {
            return Err(MetricsError::EmptyLook { index: i, start: l.start, end: l.end });
        }
    }
    for who in [Who::Host, Who::Visitor] {
        let mut idx: Vec<usize> = (0..looks.len()).filter(|&i| looks[i].who == who).collect();
        idx.sort_by_key(|&i| (looks[i].start, looks[i].end));
        for w in idx.windows(2) {
            if looks[w[1]].start < looks[w[0]].end {
                return Err(MetricsError::Overlap { who, first: w[0], second: w[1] });
            }
        }
    }
    Ok(())
}

/// Labels every host look, in input order.
pub fn label_looks(looks: &[AnnotatedLook], cfg: &TrackingConfig) -> Result<Vec<TrackingLabel>, MetricsError> {
    validate(looks)?;
    let visitor: Vec<&AnnotatedLook> = looks.iter().filter(|l| l.who == Who::Visitor).collect();
    Ok(looks
        .iter()
        .filter(|l| l.who == Who::Host)
        .map(|h| {
            let tracked = visitor.iter().any(|v| {
                v.start >= h.start
                    && v.start <= h.start + cfg.align_ms
                    && v.start < h.end
                    && covers(&v.target, &h.target)
            });
            if tracked {
                TrackingLabel::Tracked
            } else if h.concurrent_nod && h.intonation_close && h.target == "visitor" {
                TrackingLabel::Nod
            } else if h.duration() < cfg.quick_ms {
                TrackingLabel::QuickLook
            } else {
                TrackingLabel::Uncategorized
            }
        })
        .collect())
}

pub fn classify_tracking(looks: &[AnnotatedLook]) -> Result<TrackingCounts, MetricsError> {
    classify_tracking_with(looks, &TrackingConfig::default())
}

pub fn classify_tracking_with(looks: &[AnnotatedLook], cfg: &TrackingConfig) -> Result<TrackingCounts, MetricsError> {
    let mut c = TrackingCounts::default();
    for label in label_looks(looks, cfg)? {
        c.add(label);
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub counts: TrackingCounts,
    pub pct_of_looks: RoundedShares,
    pub pct_of_failures: RoundedShares,
}

impl From<TrackingCounts> for TrackingSummary {
    fn from(counts: TrackingCounts) -> Self {
        TrackingSummary { counts, pct_of_looks: counts.pct_of_looks(), pct_of_failures: counts.pct_of_failures() }
    }
}

/// Measures over one trace. Gaze-derived fields are `None` when the trace
/// carries no visitor gaze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Seconds from the first to the last message.
    pub interaction_time: f64,
    pub shared_looking_pct: Option<f64>,
    pub mutual_gaze_pct: Option<f64>,
    pub speech_directed_pct: Option<f64>,
    pub look_backs: Option<u32>,
    pub tracking: Option<TrackingSummary>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization is infallible")
    }

    /// Named numeric measures usable for group comparisons.
    pub fn measures(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("interaction_time", Some(self.interaction_time)),
            ("shared_looking_pct", self.shared_looking_pct),
            ("mutual_gaze_pct", self.mutual_gaze_pct),
            ("speech_directed_pct", self.speech_directed_pct),
            ("look_backs", self.look_backs.map(f64::from)),
        ]
    }
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "absent".to_string(), |v| v.to_string())
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_string(), |v| format!("{v:.1}%"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "interaction_time    {:.1} s", self.interaction_time)?;
        writeln!(f, "shared_looking      {}", opt_pct(self.shared_looking_pct))?;
        writeln!(f, "mutual_gaze         {}", opt_pct(self.mutual_gaze_pct))?;
        writeln!(f, "speech_directed     {}", opt_pct(self.speech_directed_pct))?;
        writeln!(f, "look_backs          {}", opt(&self.look_backs))?;
        match &self.tracking {
            None => writeln!(f, "tracking            absent"),
            Some(t) => write_tracking(f, t),
        }
    }
}

/// Table of tracking outcomes: count, share of failures, share of looks.
pub fn write_tracking(f: &mut impl fmt::Write, t: &TrackingSummary) -> fmt::Result {
    let c = &t.counts;
    writeln!(f, "tracking            {} looks", c.total())?;
    writeln!(f, "  tracked           {:>4}        {:>3}%", c.tracked, t.pct_of_looks.tracked)?;
    for (name, n, of_fail, of_all) in [
        ("quick looks", c.quick_looks, t.pct_of_failures.quick_looks, t.pct_of_looks.quick_looks),
        ("nods", c.nods, t.pct_of_failures.nods, t.pct_of_looks.nods),
        ("uncategorized", c.uncategorized, t.pct_of_failures.uncategorized, t.pct_of_looks.uncategorized),
    ] {
        writeln!(f, "  {name:<17} {n:>4}  {of_fail:>3}%   {of_all:>3}%")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct Span<T> {
    start: u64,
    end: u64,
    value: T,
}

/// Turns change points into spans ending at the next change or at `end`.
fn spans<T: Clone>(points: &[(u64, T)], end: u64) -> Vec<Span<T>> {
    points
        .iter()
        .enumerate()
        .map(|(i, (t, v))| Span { start: *t, end: points.get(i + 1).map_or(end, |p| p.0).max(*t), value: v.clone() })
        .filter(|s| s.end > s.start)
        .collect()
}

fn robot_gaze_points(trace: &[Message]) -> Vec<(u64, String)> {
    let mut pts: Vec<(u64, String)> = Vec::new();
    // a glance or point with no later head record returns after its duration
    let mut pending_return: Option<u64> = None;
    for m in trace.iter().filter(|m| m.src == Source::Engine) {
        let target = match &m.body {
            Body::LookAt { who: Actor::Robot, object, .. } => object.clone().unwrap_or_else(|| "face".into()),
            Body::GlanceAt { target, .. } | Body::PointAt { target, .. } => target.clone(),
            Body::LookAway {} => "away".into(),
            _ => continue,
        };
        if let Some(r) = pending_return.take() {
            if r < m.t {
                pts.push((r, "face".into()));
            }
        }
        if let Body::GlanceAt { duration, .. } | Body::PointAt { duration, .. } = &m.body {
            pending_return = Some(m.t + duration);
        }
        pts.push((m.t, target));
    }
    if let Some(r) = pending_return {
        pts.push((r, "face".into()));
    }
    pts
}

fn human_gaze_points(trace: &[Message], world: &World) -> Option<Vec<(u64, BTreeSet<String>)>> {
    let mut pts = Vec::new();
    let mut seen = false;
    for m in trace.iter().filter(|m| m.src == Source::Client) {
        match &m.body {
            Body::LookAt { who: Actor::Human, object, yaw, pitch } => {
                seen = true;
                let set = match (object, yaw, pitch) {
                    (Some(o), _, _) => BTreeSet::from([o.clone()]),
                    (None, Some(y), Some(p)) => HeadPose::new(Actor::Human, *y, *p, m.t)
                        .map(|pose| world.target_of(&pose))
                        .unwrap_or_default(),
                    _ => continue,
                };
                pts.push((m.t, set));
            }
            Body::Leave {} | Body::FaceLost {} => pts.push((m.t, BTreeSet::new())),
            _ => {}
        }
    }
    seen.then_some(pts)
}

fn set_at(spans: &[Span<BTreeSet<String>>], t: u64) -> Option<&BTreeSet<String>> {
    spans.iter().find(|s| s.start <= t && t < s.end).map(|s| &s.value)
}

/// Computes the behavioral measures of one trace in the default scene.
pub fn compute_measures(trace: &[Message]) -> MetricsReport {
    compute_measures_in(trace, &World::default())
}

pub fn compute_measures_in(trace: &[Message], world: &World) -> MetricsReport {
    let (Some(first), Some(last)) = (trace.iter().map(|m| m.t).min(), trace.iter().map(|m| m.t).max()) else {
        return MetricsReport {
            interaction_time: 0.0,
            shared_looking_pct: None,
            mutual_gaze_pct: None,
            speech_directed_pct: None,
            look_backs: None,
            tracking: None,
        };
    };
    let span = last - first;
    let interaction_time = span as f64 / 1000.0;
    let Some(hpts) = human_gaze_points(trace, world) else {
        return MetricsReport {
            interaction_time,
            shared_looking_pct: None,
            mutual_gaze_pct: None,
            speech_directed_pct: None,
            look_backs: None,
            tracking: None,
        };
    };
    let human = spans(&hpts, last);
    let robot = spans(&robot_gaze_points(trace), last);

    // sweep over the union of change points
    let mut cuts: Vec<u64> = human.iter().flat_map(|s| [s.start, s.end]).collect();
    cuts.extend(robot.iter().flat_map(|s| [s.start, s.end]));
    cuts.push(first);
    cuts.push(last);
    cuts.retain(|&t| t >= first && t <= last);
    cuts.sort_unstable();
    cuts.dedup();
    let (mut mutual, mut joint) = (0u64, 0u64);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let Some(h) = set_at(&human, a) else { continue };
        let Some(r) = robot.iter().find(|s| s.start <= a && a < s.end) else { continue };
        if r.value == "face" && h.contains("robot") {
            mutual += b - a;
        } else if r.value != "face" && r.value != "away" && h.contains(&r.value) {
            joint += b - a;
        }
    }
    let share = |ms: u64| if span == 0 { 0.0 } else { 100.0 * ms as f64 / span as f64 };

    let utter: Vec<u64> = trace
        .iter()
        .filter(|m| m.src == Source::Client && matches!(&m.body, Body::Utterance { who: Actor::Human, .. }))
        .map(|m| m.t)
        .collect();
    let directed = utter.iter().filter(|&&t| set_at(&human, t).is_some_and(|s| s.contains("robot"))).count();
    let speech_directed = if utter.is_empty() { 0.0 } else { 100.0 * directed as f64 / utter.len() as f64 };

    let turns = robot_turns(trace);
    let mut look_backs = 0u32;
    let mut prev_on_robot = false;
    for s in &human {
        let on_robot = s.value.contains("robot");
        if on_robot && !prev_on_robot && turns.iter().any(|&(a, b)| a <= s.start && s.start <= b) {
            look_backs += 1;
        }
        prev_on_robot = on_robot;
    }

    MetricsReport {
        interaction_time,
        shared_looking_pct: Some(share(mutual + joint)),
        mutual_gaze_pct: Some(share(mutual)),
        speech_directed_pct: Some(speech_directed),
        look_backs: Some(look_backs),
        tracking: Some(trace_tracking(&robot, &human).into()),
    }
}

/// Robot turns as closed intervals from the first `Say` to the end of the
/// `Say` that ends the turn.
fn robot_turns(trace: &[Message]) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let mut open: Option<u64> = None;
    for m in trace.iter().filter(|m| m.src == Source::Engine) {
        if let Body::Say { end_of_turn, duration, .. } = &m.body {
            let start = *open.get_or_insert(m.t);
            if *end_of_turn {
                out.push((start, m.t + duration));
                open = None;
            }
        }
    }
    if let Some(s) = open {
        out.push((s, trace.last().map_or(s, |m| m.t)));
    }
    out
}

/// Tracking of robot gaze changes by the visitor, through the same
/// classifier used for hand annotations.
fn trace_tracking(robot: &[Span<String>], human: &[Span<BTreeSet<String>>]) -> TrackingCounts {
    let mut looks = Vec::new();
    for (i, r) in robot.iter().enumerate() {
        // only changes of direction count; the initial orientation does not
        if i == 0 || robot[i - 1].value == r.value || r.value == "away" {
            continue;
        }
        let target = if r.value == "face" { "visitor".to_string() } else { r.value.clone() };
        looks.push(AnnotatedLook {
            who: Who::Host,
            target,
            start: r.start,
            end: r.end,
            concurrent_nod: false,
            intonation_close: false,
        });
    }
    for h in human.iter().filter(|h| !h.value.is_empty()) {
        let target = h.value.iter().map(|t| if t == "robot" { "host" } else { t.as_str() }).collect::<Vec<_>>().join("+");
        looks.push(AnnotatedLook {
            who: Who::Visitor,
            target,
            start: h.start,
            end: h.end,
            concurrent_nod: false,
            intonation_close: false,
        });
    }
    classify_tracking(&looks).unwrap_or_default()
}

impl FromStr for AnnotatedLook {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut v = parse_annotations(s)?;
        match v.len() {
            1 => Ok(v.remove(0)),
            n => Err(MetricsError::Syntax { line: 1, msg: format!("expected one look, found {n}") }),
        }
    }
}
