//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use engage::discourse::structural_match;
use engage::engine::EngineConfig;
use engage::metrics::{classify_tracking, compute_measures, parse_annotations, RoundedShares, TrackingCounts};
use engage::protocol::{decode, encode};
use engage::recipe::RecipeLibrary;
use engage::scenario::{run_scenario, HumanModel, RunOptions};
use engage::sensorimotor::nod::{detect_nod, load_corpus, NodConfig};
use engage::sensorimotor::Mode;
use engage::stats::anova_single_factor;
use engage::world::World;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

const FIG3_BUDGET: Duration = Duration::from_secs(5);
const CONTRAST_BUDGET: Duration = Duration::from_secs(60);
const CONTRAST_SEEDS: u64 = 20;
const ENGINE_SESSIONS: u64 = 1000;
const RULE_SCHEDULES: u64 = 5000;
const PROTOCOL_MESSAGES: usize = 20_000;
const NOD_MIN: f64 = 0.95;
const ANOVA_DATASETS: u64 = 100;
const ANOVA_TOL: f64 = 1e-9;

fn fixture(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run(mode: Mode, model: &HumanModel, seed: u64) -> engage::scenario::RunResult {
    let opts = RunOptions { mode, seed, ..RunOptions::default() };
    run_scenario(model, &RecipeLibrary::iglassware(), &World::default(), &EngineConfig::default(), &opts)
        .expect("scenario runs")
}

fn golden_transcript() -> Result<String, String> {
    let start = Instant::now();
    let r = run(Mode::Mover, &HumanModel::figure3(), 0);
    let took = start.elapsed();
    let want = fixture("figure3.transcript");
    if r.transcript != want {
        let line = r.transcript.lines().zip(want.lines()).position(|(a, b)| a != b);
        return Err(format!("transcript differs (first differing line {line:?})"));
    }
    if took > FIG3_BUDGET {
        return Err(format!("took {took:?}"));
    }
    Ok(format!("{} lines in {took:.2?}", want.lines().count()))
}

fn golden_history() -> Result<String, String> {
    let r = run(Mode::Mover, &HumanModel::figure3(), 0);
    structural_match(&r.history, &fixture("figure3.history"))?;
    Ok(format!("{} history lines", r.history.lines().count()))
}

fn tracking_table() -> Result<String, String> {
    let looks = parse_annotations(&fixture("hosting.annotations")).map_err(|e| e.to_string())?;
    let c = classify_tracking(&looks).map_err(|e| e.to_string())?;
    let want = TrackingCounts { tracked: 45, quick_looks: 11, nods: 14, uncategorized: 12 };
    let want_pct = RoundedShares { tracked: 55, quick_looks: 13, nods: 17, uncategorized: 15 };
    let pct = c.pct_of_looks();
    let summary = format!(
        "{}/{}/{}/{} of {}, {}%/{}%/{}%/{}%",
        c.tracked,
        c.quick_looks,
        c.nods,
        c.uncategorized,
        c.total(),
        pct.tracked,
        pct.quick_looks,
        pct.nods,
        pct.uncategorized
    );
    if c != want || c.total() != 82 || pct != want_pct {
        return Err(summary);
    }
    Ok(summary)
}

fn contrast() -> Result<String, String> {
    let start = Instant::now();
    let model = HumanModel::default();
    let mut means = Vec::new();
    let mut talker_motor = 0;
    for mode in [Mode::Mover, Mode::Talker] {
        let (mut shared, mut backs) = (0.0, 0.0);
        for seed in 0..CONTRAST_SEEDS {
            let r = run(mode, &model, seed);
            let m = compute_measures(&r.trace);
            shared += m.shared_looking_pct.ok_or("no gaze in trace")?;
            backs += f64::from(m.look_backs.ok_or("no gaze in trace")?);
            if mode == Mode::Talker {
                // the first motor record is the initial orientation
                talker_motor += r.trace.iter().filter(|m| m.body.is_motor()).count().saturating_sub(1);
            }
        }
        means.push((shared / CONTRAST_SEEDS as f64, backs / CONTRAST_SEEDS as f64));
    }
    let took = start.elapsed();
    let ((ms, mb), (ts, tb)) = (means[0], means[1]);
    let summary = format!(
        "shared {ms:.1} vs {ts:.1}, look-backs {mb:.2} vs {tb:.2}, talker motor {talker_motor}, {took:.1?}"
    );
    if ms > ts && mb > tb && talker_motor == 0 && took < CONTRAST_BUDGET {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn engagement_invariants() -> Result<String, String> {
    let mut bad = Vec::new();
    let (mut acks, mut asks, mut ended, mut movers) = (0, 0, 0, 0);
    for seed in 0..ENGINE_SESSIONS {
        let r = common::random_session(seed);
        acks += r.acks;
        asks += r.asks;
        ended += usize::from(r.ended);
        movers += usize::from(r.mode == Some(Mode::Mover));
        bad.extend(r.violations.into_iter().map(|v| format!("session {seed}: {v}")));
    }
    for seed in 0..RULE_SCHEDULES {
        bad.extend(common::random_engagement_schedule(seed));
    }
    let summary = format!(
        "{ENGINE_SESSIONS} sessions ({movers} mover, {ended} ended, {acks} acknowledgements, {asks} ask-to-end), \
         {RULE_SCHEDULES} rule schedules"
    );
    match bad.first() {
        None => Ok(summary),
        Some(first) => Err(format!("{} violations, first: {first}; {summary}", bad.len())),
    }
}

fn protocol_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for i in 0..PROTOCOL_MESSAGES {
        let m = common::random_message(&mut rng);
        let line = encode(&m);
        let back = decode(&line).map_err(|e| format!("message {i}: {e}: {line}"))?;
        if back != m || encode(&back) != line {
            return Err(format!("message {i} changed: {line}"));
        }
    }
    let golden = common::golden_messages();
    let bytes: String = golden.iter().map(encode).collect();
    if bytes != common::GOLDEN {
        return Err("golden fixture bytes differ".into());
    }
    for (line, want) in common::GOLDEN.lines().zip(&golden) {
        if decode(line).as_ref() != Ok(want) {
            return Err(format!("golden line does not decode: {line}"));
        }
    }
    let mut kinds: Vec<&str> = golden.iter().map(|m| m.kind()).collect();
    kinds.sort_unstable();
    kinds.dedup();
    if kinds.len() != engage::protocol::KINDS.len() {
        return Err(format!("golden fixture covers {} kinds", kinds.len()));
    }
    Ok(format!("{PROTOCOL_MESSAGES} generated, {} golden lines", golden.len()))
}

fn nod_detector() -> Result<String, String> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/nods");
    let corpus = load_corpus(&dir).map_err(|e| e.to_string())?;
    let cfg = NodConfig::default();
    let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
    for lt in &corpus {
        let a = detect_nod(&lt.trace, &cfg);
        if a != detect_nod(&lt.trace, &cfg) {
            return Err(format!("{}: scores not deterministic", lt.name));
        }
        match (a.is_some_and(|s| s.detected), lt.class.is_nod()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = f64::from(tp) / f64::from((tp + fp).max(1));
    let recall = f64::from(tp) / f64::from((tp + fn_).max(1));
    let summary = format!(
        "{} traces, threshold {:.2}, precision {precision:.3}, recall {recall:.3}",
        corpus.len(),
        cfg.threshold
    );
    if corpus.len() == 200 && precision >= NOD_MIN && recall >= NOD_MIN {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite sample")
}

/// F from exact rational sums of squares.
fn oracle_f(groups: &[Vec<f64>]) -> (f64, u32, u32) {
    let n: usize = groups.iter().map(Vec::len).sum();
    let k = groups.len();
    let count = |m: usize| BigRational::from_integer(BigInt::from(m));
    let all: BigRational = groups.iter().flatten().map(|&x| exact(x)).sum();
    let grand = &all / count(n);
    let mut ssb = BigRational::zero();
    let mut ssw = BigRational::zero();
    for g in groups {
        let sum: BigRational = g.iter().map(|&x| exact(x)).sum();
        let mean = sum / count(g.len());
        let d = &mean - &grand;
        ssb += count(g.len()) * &d * &d;
        for &x in g {
            let d = exact(x) - &mean;
            ssw += &d * &d;
        }
    }
    let f = (ssb / count(k - 1)) / (ssw / count(n - k));
    (f.to_f64().expect("finite F"), (k - 1) as u32, (n - k) as u32)
}

fn anova_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1729);
    let (mut worst_f, mut worst_p) = (0.0f64, 0.0f64);
    for i in 0..ANOVA_DATASETS {
        let k = rng.random_range(2..=5);
        let shift: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let groups: Vec<Vec<f64>> = shift
            .iter()
            .map(|s| (0..rng.random_range(2..=8)).map(|_| s + rng.random_range(-3.0..3.0)).collect())
            .collect();
        let got = anova_single_factor(&groups).map_err(|e| format!("dataset {i}: {e}"))?;
        let (f, d1, d2) = oracle_f(&groups);
        let p = FisherSnedecor::new(f64::from(d1), f64::from(d2)).map_err(|e| e.to_string())?.sf(f);
        if (got.df_between, got.df_within) != (d1, d2) {
            return Err(format!("dataset {i}: df {:?}", (got.df_between, got.df_within)));
        }
        let ef = (got.f - f).abs() / f.max(1.0);
        let ep = (got.p - p).abs();
        worst_f = worst_f.max(ef);
        worst_p = worst_p.max(ep);
        if ef > ANOVA_TOL || ep > ANOVA_TOL {
            return Err(format!("dataset {i}: F {} vs {f}, p {} vs {p}", got.f, got.p));
        }
    }
    Ok(format!("{ANOVA_DATASETS} datasets, max error F {worst_f:.1e} p {worst_p:.1e}"))
}

type Check = fn() -> Result<String, String>;

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("transcript-golden", golden_transcript),
        ("history-golden", golden_history),
        ("tracking-table", tracking_table),
        ("mover-talker-contrast", contrast),
        ("engagement-invariants", engagement_invariants),
        ("protocol-round-trip", protocol_round_trip),
        ("nod-detector", nod_detector),
        ("anova-oracle", anova_oracle),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(detail)) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
