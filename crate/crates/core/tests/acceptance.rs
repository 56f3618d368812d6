//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines come out in order.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabstruct::detector::detector_loss;
use tabstruct::metrics::{wavg_f1, WAVG_THRESHOLDS};
use tabstruct::recognizer::recognizer_loss;
use tabstruct::trainer::{train_detector, train_tsr, TrainConfig, TraceRow};

use common::{grad, suites};

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: impl AsRef<str>) {
        if !ok {
            self.failed += 1;
        }
        println!("{} {id}: {}", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
    }
}

fn wavg_examples(rep: &mut Report) {
    let start = Instant::now();
    let table = |f: [f64; 4]| wavg_f1(&WAVG_THRESHOLDS.iter().copied().zip(f).collect::<Vec<_>>());
    let a = table([95.9, 95.6, 95.0, 91.5]);
    let b = table([96.1, 96.0, 95.4, 92.9]);
    let secs = start.elapsed().as_secs_f64();
    let ok = (a - 94.3).abs() <= 0.05 && (b - 94.9).abs() <= 0.05 && secs < 1.0;
    rep.line("wavg_f1", ok, format!("{a:.3} (want 94.3), {b:.3} (want 94.9) in {secs:.3}s"));
}

fn gradients(rep: &mut Report) {
    let start = Instant::now();
    for (op, errors) in grad::all() {
        let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
        rep.line(&format!("gradient/{op}"), worst < grad::TOL, format!("max relative error {worst:.2e} over {} checks", errors.len()));
    }
    let secs = start.elapsed().as_secs_f64();
    rep.line("gradient/runtime", secs < 120.0, format!("{secs:.1}s (budget 120s)"));
}

fn oracles(rep: &mut Report) {
    let runs: [(&str, usize, fn(usize) -> usize); 4] = [
        ("oracle/nms", 1000, suites::nms_mismatches),
        ("oracle/adjacency", 500, suites::adjacency_mismatches),
        ("oracle/teds", 200, suites::ted_mismatches),
        ("oracle/corner_decode", 300, suites::corner_decode_mismatches),
    ];
    let start = Instant::now();
    for (id, n, f) in runs {
        let bad = f(n);
        rep.line(id, bad == 0, format!("{bad}/{n} mismatches"));
    }
    let secs = start.elapsed().as_secs_f64();
    rep.line("oracle/runtime", secs < 300.0, format!("{secs:.1}s (budget 300s)"));
}

fn round_trip(rep: &mut Report) {
    let start = Instant::now();
    let straight = suites::round_trips(&suites::straight_tables(), 0..100);
    let curved = suites::round_trips(&suites::curved_tables(), 1000..1100);
    let count = |r: &[suites::RoundTrip], f: fn(&suites::RoundTrip) -> bool| r.iter().filter(|x| f(x)).count();
    let (sc, cc) = (count(&straight, |x| x.counts), count(&curved, |x| x.counts));
    rep.line("round_trip/counts", sc == 100 && cc >= 99, format!("straight {sc}/100, curved {cc}/100"));
    let (so, co) = (count(&straight, |x| x.oracle_spans), count(&curved, |x| x.oracle_spans));
    rep.line(
        "round_trip/oracle_merges",
        so == sc && co == cc,
        format!("spans reproduced on {so}/{sc} straight and {co}/{cc} curved grids"),
    );
    let secs = start.elapsed().as_secs_f64();
    rep.line("round_trip/runtime", secs < 300.0, format!("{secs:.1}s (budget 300s)"));
}

fn detector_overfit(rep: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let run = suites::detector_overfit(dir.path(), &suites::overfit_schedule());
    let f1: Vec<(f64, f64)> = run.counts.iter().map(|(t, c)| (*t, c.prf().f1)).collect();
    let at_09 = f1.last().unwrap().1;
    let minutes = run.elapsed.as_secs_f64() / 60.0;
    rep.line(
        "detector_overfit",
        at_09 >= 0.95 && run.elapsed < Duration::from_secs(3600),
        format!("F1@0.9 {at_09:.3} (per IoU {f1:?}), final loss {:.4}, {minutes:.1} min", run.trace.last().unwrap().total),
    );
}

fn tsr_overfit(rep: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let run = suites::tsr_overfit(dir.path(), &suites::overfit_schedule());
    rep.line(
        "tsr_overfit",
        run.mean_adjacency_f1 >= 0.95 && run.mean_teds >= 0.95,
        format!(
            "{} tables: adjacency F1 {:.3}, TEDS-Struct {:.3}, final loss {:.4}",
            run.tables,
            run.mean_adjacency_f1,
            run.mean_teds,
            run.trace.last().unwrap().total
        ),
    );
}

fn loss_identities(rep: &mut Report) {
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut exact = true;
    for _ in 0..1000 {
        let (c, f): (f64, f64) = (rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
        let ct = Tensor::new(c, &dev).unwrap();
        let ft = Tensor::new(f, &dev).unwrap();
        let d: f64 = detector_loss(&ct, &ft).unwrap().to_scalar().unwrap();
        let r: f64 = recognizer_loss(&ct, &ft).unwrap().to_scalar().unwrap();
        exact &= d == 0.2 * c + f && r == c + f;
    }
    rep.line("loss/functions", exact, "detector = 0.2 corner + frcn, recognizer = split + merge on 1000 random f64 inputs");

    let dir = tempfile::tempdir().unwrap();
    tabstruct::datagen::write_corpus(dir.path(), &suites::straight_tables(), 0, 3).unwrap();
    let items = tabstruct::datagen::read_corpus(dir.path()).unwrap();
    let cfg = TrainConfig { iterations: 4, decay_steps: vec![], base_lr: 0.32, ..TrainConfig::default() };
    // traces store f32 losses widened to f64: compare in f32
    let holds = |rows: &[TraceRow], w: f32| {
        rows.iter().all(|r| r.total as f32 == w * r.terms[0] as f32 + r.terms[1] as f32)
    };
    let det = tabstruct::detector::TableDetector::new(tabstruct::detector::DetectorConfig::desk(), DType::F32, 0).unwrap();
    let dt = train_detector(&det, &items, &cfg).unwrap();
    let rec = tabstruct::recognizer::TableRecognizer::new(tabstruct::recognizer::RecognizerConfig::desk(), DType::F32, 0).unwrap();
    let rt = train_tsr(&rec, &items, &cfg).unwrap();
    rep.line(
        "loss/training_traces",
        holds(&dt, 0.2) && holds(&rt, 1.0),
        format!("{} detector and {} recognizer steps checked", dt.len(), rt.len()),
    );
}

fn determinism(rep: &mut Report) {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let synth = tabstruct::datagen::SynthConfig { curved_prob: 0.5, span_prob: 0.15, ..Default::default() };
    tabstruct::datagen::write_corpus(a.path(), &synth, 3, 4).unwrap();
    tabstruct::datagen::write_corpus(b.path(), &synth, 3, 4).unwrap();
    rep.line("determinism/corpus", common::dir_bytes(a.path()) == common::dir_bytes(b.path()), "two corpora from seed 3");

    let items = tabstruct::datagen::read_corpus(a.path()).unwrap();
    let cfg = TrainConfig { iterations: 3, decay_steps: vec![], base_lr: 0.32, seed: 9, ..TrainConfig::default() };
    let det = || {
        let m = tabstruct::detector::TableDetector::new(tabstruct::detector::DetectorConfig::desk(), DType::F32, 4).unwrap();
        train_detector(&m, &items, &cfg).unwrap()
    };
    let rec = || {
        let m = tabstruct::recognizer::TableRecognizer::new(tabstruct::recognizer::RecognizerConfig::desk(), DType::F32, 4).unwrap();
        train_tsr(&m, &items, &cfg).unwrap()
    };
    rep.line("determinism/loss_traces", det() == det() && rec() == rec(), "repeated detector and recognizer runs");

    let json = |workers| common::inference_json(&items, workers);
    let first = json(1);
    rep.line("determinism/inference", first == json(1) && first == json(2), "page JSON with 1 and 2 workers");
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut rep = Report { failed: 0 };
    wavg_examples(&mut rep);
    gradients(&mut rep);
    oracles(&mut rep);
    round_trip(&mut rep);
    loss_identities(&mut rep);
    determinism(&mut rep);
    detector_overfit(&mut rep);
    tsr_overfit(&mut rep);
    println!("acceptance: {} failure(s) in {:.1} min", rep.failed, start.elapsed().as_secs_f64() / 60.0);
    if rep.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
