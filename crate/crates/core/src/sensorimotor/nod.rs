//! Head-nod detection over head-pitch traces.
//!
//! Each sliding window is detrended with a least-squares line, then split
//! into monotone legs by a zigzag with a minimum swing. Nods show several
//! short legs of reasonable amplitude; drifts, single look-downs and slow
//! sways do not. The features are combined linearly and squashed through a
//! logistic; the best window gives the score.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("timestamps must increase by a uniform tick (at sample {0})")]
    NonUniform(usize),
}

/// Head pitch samples `(t_ms, pitch_deg)` at a fixed tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTrace {
    samples: Vec<(u64, f64)>,
}

impl MotionTrace {
    pub fn new(samples: Vec<(u64, f64)>) -> Result<Self, TraceError> {
        if samples.len() >= 2 {
            let tick = samples[1].0.checked_sub(samples[0].0).filter(|d| *d > 0).ok_or(TraceError::NonUniform(1))?;
            for i in 2..samples.len() {
                if samples[i].0.checked_sub(samples[i - 1].0) != Some(tick) {
                    return Err(TraceError::NonUniform(i));
                }
            }
        }
        Ok(MotionTrace { samples })
    }

    /// Builds a trace from pitch values starting at `t0`.
    pub fn from_pitch(t0: u64, tick_ms: u64, pitch: &[f64]) -> Self {
        MotionTrace { samples: pitch.iter().enumerate().map(|(i, p)| (t0 + i as u64 * tick_ms, *p)).collect() }
    }

    pub fn samples(&self) -> &[(u64, f64)] {
        &self.samples
    }

    pub fn tick_ms(&self) -> Option<u64> {
        (self.samples.len() >= 2).then(|| self.samples[1].0 - self.samples[0].0)
    }

    pub fn span_ms(&self) -> u64 {
        match (self.samples.first(), self.samples.last(), self.tick_ms()) {
            (Some(a), Some(b), Some(tick)) => b.0 - a.0 + tick,
            _ => 0,
        }
    }

    /// Parses `t_ms pitch_deg` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut samples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let err = |msg: &str| TraceError::Syntax { line: i + 1, msg: msg.to_string() };
            let t = it.next().and_then(|s| s.parse::<u64>().ok()).ok_or_else(|| err("expected time in ms"))?;
            let p = it
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|p| p.is_finite())
                .ok_or_else(|| err("expected pitch in degrees"))?;
            if it.next().is_some() {
                return Err(err("trailing fields"));
            }
            samples.push((t, p));
        }
        MotionTrace::new(samples)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (t, p) in &self.samples {
            let _ = writeln!(s, "{t} {p:.3}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodConfig {
    pub window_ms: u64,
    pub step_ms: u64,
    /// Minimum swing for a leg, degrees.
    pub min_swing_deg: f64,
    /// Legs longer than this are too slow to belong to a nod.
    pub max_leg_ms: u64,
    pub bias: f64,
    pub w_legs: f64,
    pub w_amplitude: f64,
    /// Amplitude range mapped onto `[0, 1]` for the amplitude feature.
    pub amplitude_lo: f64,
    pub amplitude_hi: f64,
    pub threshold: f64,
}

impl Default for NodConfig {
    fn default() -> Self {
        NodConfig {
            window_ms: 1500,
            step_ms: 100,
            min_swing_deg: 3.0,
            max_leg_ms: 450,
            bias: -7.0,
            w_legs: 2.0,
            w_amplitude: 2.0,
            amplitude_lo: 2.0,
            amplitude_hi: 8.0,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodScore {
    pub probability: f64,
    pub detected: bool,
    pub window: (u64, u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowFeatures {
    pub fast_legs: usize,
    pub legs: usize,
    pub amplitude: f64,
}

fn detrend(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean_i = (n - 1.0) / 2.0;
    let mean_x = xs.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, x) in xs.iter().enumerate() {
        let di = i as f64 - mean_i;
        sxy += di * (x - mean_x);
        sxx += di * di;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    xs.iter().enumerate().map(|(i, x)| x - mean_x - slope * (i as f64 - mean_i)).collect()
}

/// Monotone legs `(start, end)` whose swing reaches `min_swing`.
fn zigzag(r: &[f64], min_swing: f64) -> Vec<(usize, usize)> {
    let mut legs = Vec::new();
    if r.is_empty() {
        return legs;
    }
    let (mut lo, mut hi) = (0, 0);
    let mut dir = 0i8;
    let (mut pivot, mut ext) = (0, 0);
    for i in 1..r.len() {
        match dir {
            0 => {
                if r[i] < r[lo] {
                    lo = i;
                }
                if r[i] > r[hi] {
                    hi = i;
                }
                if r[i] - r[lo] >= min_swing {
                    dir = 1;
                    pivot = lo;
                    ext = i;
                } else if r[hi] - r[i] >= min_swing {
                    dir = -1;
                    pivot = hi;
                    ext = i;
                }
            }
            1 => {
                if r[i] > r[ext] {
                    ext = i;
                } else if r[ext] - r[i] >= min_swing {
                    legs.push((pivot, ext));
                    pivot = ext;
                    ext = i;
                    dir = -1;
                }
            }
            _ => {
                if r[i] < r[ext] {
                    ext = i;
                } else if r[i] - r[ext] >= min_swing {
                    legs.push((pivot, ext));
                    pivot = ext;
                    ext = i;
                    dir = 1;
                }
            }
        }
    }
    if dir != 0 {
        legs.push((pivot, ext));
    }
    legs
}

pub fn window_features(pitch: &[f64], tick_ms: u64, cfg: &NodConfig) -> WindowFeatures {
    if pitch.len() < 2 {
        return WindowFeatures::default();
    }
    let r = detrend(pitch);
    let legs = zigzag(&r, cfg.min_swing_deg);
    let fast_legs = legs.iter().filter(|(a, b)| (*b - *a) as u64 * tick_ms <= cfg.max_leg_ms).count();
    let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = r.iter().cloned().fold(f64::INFINITY, f64::min);
    WindowFeatures { fast_legs, legs: legs.len(), amplitude: (max - min) / 2.0 }
}

pub fn window_probability(f: &WindowFeatures, cfg: &NodConfig) -> f64 {
    let amp = ((f.amplitude - cfg.amplitude_lo) / (cfg.amplitude_hi - cfg.amplitude_lo)).clamp(0.0, 1.0);
    let legs = f.fast_legs.min(5) as f64;
    let z = cfg.bias + cfg.w_legs * legs + cfg.w_amplitude * amp;
    1.0 / (1.0 + (-z).exp())
}

/// Scores the trace; `None` when it is shorter than one window.
pub fn detect_nod(trace: &MotionTrace, cfg: &NodConfig) -> Option<NodScore> {
    let tick = trace.tick_ms()?;
    if trace.span_ms() < cfg.window_ms {
        return None;
    }
    let per_window = (cfg.window_ms / tick).max(2) as usize;
    let stride = (cfg.step_ms / tick).max(1) as usize;
    let samples = trace.samples();
    let pitch: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mut best: Option<NodScore> = None;
    let mut start = 0;
    loop {
        let end = (start + per_window).min(pitch.len());
        let f = window_features(&pitch[start..end], tick, cfg);
        let p = window_probability(&f, cfg);
        if best.is_none_or(|b| p > b.probability) {
            best = Some(NodScore {
                probability: p,
                detected: p >= cfg.threshold,
                window: (samples[start].0, samples[end - 1].0 + tick),
            });
        }
        if end == pitch.len() {
            break;
        }
        start += stride;
    }
    best
}

/// Shape families in the synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceClass {
    Nod,
    Flat,
    Drift,
    Step,
    Sway,
    Tremor,
    Dip,
}

impl TraceClass {
    pub fn is_nod(self) -> bool {
        self == TraceClass::Nod
    }

    fn name(self) -> &'static str {
        match self {
            TraceClass::Nod => "nod",
            TraceClass::Flat => "flat",
            TraceClass::Drift => "drift",
            TraceClass::Step => "step",
            TraceClass::Sway => "sway",
            TraceClass::Tremor => "tremor",
            TraceClass::Dip => "dip",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "nod" => TraceClass::Nod,
            "flat" => TraceClass::Flat,
            "drift" => TraceClass::Drift,
            "step" => TraceClass::Step,
            "sway" => TraceClass::Sway,
            "tremor" => TraceClass::Tremor,
            "dip" => TraceClass::Dip,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrace {
    pub name: String,
    pub class: TraceClass,
    pub trace: MotionTrace,
}

pub const CORPUS_TICK_MS: u64 = 20;
pub const CORPUS_SPAN_MS: u64 = 5000;

/// Pitch samples of a nod: `cycles` oscillations starting downward.
pub fn nod_shape(tick_ms: u64, amplitude: f64, period_ms: f64, cycles: f64) -> Vec<f64> {
    let n = (period_ms * cycles / tick_ms as f64).round() as usize;
    (0..=n)
        .map(|i| -amplitude * (std::f64::consts::TAU * (i as u64 * tick_ms) as f64 / period_ms).sin())
        .collect()
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Generates one synthetic trace of the given class.
pub fn synth_trace(class: TraceClass, rng: &mut ChaCha8Rng) -> MotionTrace {
    let n = (CORPUS_SPAN_MS / CORPUS_TICK_MS) as usize;
    let noise = Normal::new(0.0, 0.5).expect("valid sigma");
    let base = rng.random_range(-8.0..8.0);
    let mut pitch = vec![base; n];
    let ts = |i: usize| (i as u64 * CORPUS_TICK_MS) as f64;
    match class {
        TraceClass::Nod => {
            let slope = rng.random_range(-1.5..1.5) / 1000.0;
            let amp = rng.random_range(6.0..15.0);
            let period = rng.random_range(300.0..700.0);
            let cycles = if rng.random_bool(0.5) { 2.0 } else { 3.0 };
            let shape = nod_shape(CORPUS_TICK_MS, amp, period, cycles);
            let latest = n - shape.len() - 10;
            let at = rng.random_range(10..latest);
            for (i, p) in pitch.iter_mut().enumerate() {
                *p += slope * ts(i);
            }
            for (k, v) in shape.iter().enumerate() {
                pitch[at + k] += v;
            }
        }
        TraceClass::Flat => {}
        TraceClass::Drift => {
            let total = rng.random_range(8.0..20.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            for (i, p) in pitch.iter_mut().enumerate() {
                *p += total * ts(i) / CORPUS_SPAN_MS as f64;
            }
        }
        TraceClass::Step => {
            let depth = rng.random_range(10.0..25.0);
            let dur = rng.random_range(300.0..500.0);
            let at = rng.random_range(500.0..3500.0);
            for (i, p) in pitch.iter_mut().enumerate() {
                *p -= depth * smoothstep((ts(i) - at) / dur);
            }
        }
        TraceClass::Sway => {
            let amp = rng.random_range(5.0..12.0);
            let period = rng.random_range(2000.0..4000.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for (i, p) in pitch.iter_mut().enumerate() {
                *p += amp * (std::f64::consts::TAU * ts(i) / period + phase).sin();
            }
        }
        TraceClass::Tremor => {
            let amp = rng.random_range(0.4..0.9);
            let period = rng.random_range(150.0..300.0);
            for (i, p) in pitch.iter_mut().enumerate() {
                *p += amp * (std::f64::consts::TAU * ts(i) / period).sin();
            }
        }
        TraceClass::Dip => {
            let depth = rng.random_range(10.0..20.0);
            let dur = rng.random_range(1500.0..2500.0);
            let at = rng.random_range(300.0..(CORPUS_SPAN_MS as f64 - dur - 300.0));
            for (i, p) in pitch.iter_mut().enumerate() {
                let x = (ts(i) - at) / dur;
                if (0.0..=1.0).contains(&x) {
                    *p -= depth * (std::f64::consts::PI * x).sin().powi(2);
                }
            }
        }
    }
    for p in pitch.iter_mut() {
        *p += noise.sample(rng);
        *p = (*p * 1000.0).round() / 1000.0;
    }
    MotionTrace::from_pitch(0, CORPUS_TICK_MS, &pitch)
}

const NEGATIVE_CLASSES: [TraceClass; 6] = [
    TraceClass::Flat,
    TraceClass::Drift,
    TraceClass::Step,
    TraceClass::Sway,
    TraceClass::Tremor,
    TraceClass::Dip,
];

/// Labeled corpus: even indices are nods, odd indices cycle through the
/// negative shape families.
pub fn generate_corpus(seed: u64, count: usize) -> Vec<LabeledTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let class = if i % 2 == 0 { TraceClass::Nod } else { NEGATIVE_CLASSES[(i / 2) % NEGATIVE_CLASSES.len()] };
            LabeledTrace { name: format!("trace_{i:03}.txt"), class, trace: synth_trace(class, &mut rng) }
        })
        .collect()
}

/// Writes `labels.txt` plus one trace file per entry.
pub fn write_corpus(dir: &Path, corpus: &[LabeledTrace]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut labels = String::from("# file label class\n");
    for lt in corpus {
        fs::write(dir.join(&lt.name), lt.trace.to_text())?;
        let _ = writeln!(labels, "{} {} {}", lt.name, u8::from(lt.class.is_nod()), lt.class.name());
    }
    fs::write(dir.join("labels.txt"), labels)
}

pub fn load_corpus(dir: &Path) -> io::Result<Vec<LabeledTrace>> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let labels = fs::read_to_string(dir.join("labels.txt"))?;
    let mut out = Vec::new();
    for line in labels.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let [name, label, class] = f[..] else {
            return Err(bad(format!("bad label line `{line}`")));
        };
        let class = TraceClass::parse(class).ok_or_else(|| bad(format!("unknown class `{class}`")))?;
        if (label == "1") != class.is_nod() {
            return Err(bad(format!("label {label} disagrees with class for {name}")));
        }
        let trace = MotionTrace::parse(&fs::read_to_string(dir.join(name))?).map_err(|e| bad(format!("{name}: {e}")))?;
        out.push(LabeledTrace { name: name.to_string(), class, trace });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall over a labeled corpus at `cfg.threshold`.
pub fn evaluate(corpus: &[LabeledTrace], cfg: &NodConfig) -> OperatingPoint {
    let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
    for lt in corpus {
        let detected = detect_nod(&lt.trace, cfg).is_some_and(|s| s.detected);
        match (detected, lt.class.is_nod()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: u32, b: u32| if a + b == 0 { 1.0 } else { a as f64 / (a + b) as f64 };
    OperatingPoint { threshold: cfg.threshold, precision: ratio(tp, fp), recall: ratio(tp, fn_) }
}

/// Sweeps the threshold over `0.05..=0.95` in steps of 0.05.
pub fn calibrate(corpus: &[LabeledTrace], cfg: &NodConfig) -> Vec<OperatingPoint> {
    (1..=19)
        .map(|k| {
            let c = NodConfig { threshold: k as f64 * 0.05, ..cfg.clone() };
            evaluate(corpus, &c)
        })
        .collect()
}
