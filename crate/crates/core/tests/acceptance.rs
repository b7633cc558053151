//! Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and
//! exits nonzero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{synthetic_coco, synthetic_loco, Fixture};
use condid::affect::{
    acquire_profiles, format_affective_block, AffectDimension, AffectPromptTemplates, AffectProvider, AffectiveProfile,
    Emotion, EmotionSet, IntensityClass, PerEmotion, ProviderError, RemoteAffectProvider, SentimentClass,
};
use condid::analysis::{density, GroupedProfiles, ScoreField};
use condid::corpus::{
    split, CategoryLabels, CocoRecord, ConspiracyCategory, IntentionLabel, LocoRecord, RelatednessLabel, SplitName,
    SplitRatios,
};
use condid::inference::{run_task, BackendConfig, ConstantBackend, EchoBackend, HttpBackend, RetryPolicy};
use condid::instructions::{
    build_task_dataset, conspiracy_gold, intention_gold, relatedness_gold, topics_gold, InstructionRecord, TaskId,
    TaskInput,
};
use condid::scoring::{compute_multilabel_metrics, compute_single_label_metrics, parse_response, score_run, Label};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

const SPLIT_BUDGET: Duration = Duration::from_secs(5);
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const ORACLE_TOL: f64 = 1e-9;
const ORACLE_INSTANCES: usize = 1000;
const ANALYTIC_TOL: f64 = 1e-12;
const DENSITY_MEAN_TOL: f64 = 0.02;
const DENSITY_N: usize = 10_000;
const DENSITY_BINS: usize = 50;
const LIVE_TEXTS: usize = 100;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn dataset_arithmetic() -> Outcome {
    let start = Instant::now();
    let records = synthetic_coco(3487, 20);
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let assignment = split(&ids, SplitRatios::new(0.6, 0.2, 0.2).unwrap(), 42).map_err(|e| e.to_string())?;
    let sizes = assignment.sizes();
    check(
        sizes == (2092, 697, 698),
        format!("split sizes {sizes:?}, expected (2092, 697, 698)"),
    )?;
    let test: BTreeSet<&str> = assignment.ids_in(SplitName::Test).into_iter().collect();
    let test_records: Vec<CocoRecord> = records
        .iter()
        .filter(|r| test.contains(r.id.as_str()))
        .cloned()
        .collect();
    let dataset =
        build_task_dataset(TaskId::PerCategory, TaskInput::Coco(&test_records), None).map_err(|e| e.to_string())?;
    check(
        dataset.len() == 8376,
        format!("task 3 test dataset has {} records, expected 8376", dataset.len()),
    )?;
    let elapsed = start.elapsed();
    check(
        elapsed < SPLIT_BUDGET,
        format!("took {elapsed:?}, budget {SPLIT_BUDGET:?}"),
    )?;
    Ok(format!(
        "2092/697/698 and 8376 records in {elapsed:.2?} (< {SPLIT_BUDGET:?})"
    ))
}

fn gold_round_trip() -> Outcome {
    let mut cases: Vec<(TaskId, String, Label)> = Vec::new();
    for l in IntentionLabel::ALL {
        cases.push((TaskId::Intention, intention_gold(l).into(), Label::Intention(l)));
    }
    for c in ConspiracyCategory::ALL {
        cases.push((TaskId::Topics, topics_gold(&[c]), Label::Topics(BTreeSet::from([c]))));
    }
    cases.push((TaskId::Topics, topics_gold(&[]), Label::Topics(BTreeSet::new())));
    for l in IntentionLabel::ALL {
        cases.push((TaskId::PerCategory, intention_gold(l).into(), Label::Intention(l)));
    }
    for b in [false, true] {
        cases.push((TaskId::Conspiracy, conspiracy_gold(b).into(), Label::Conspiracy(b)));
    }
    for r in RelatednessLabel::ALL {
        cases.push((TaskId::Relatedness, relatedness_gold(r).into(), Label::Relatedness(r)));
    }
    let vocabulary = cases.len();
    // every multi-category topic answer as well
    for mask in 1u32..(1 << 12) {
        let cats: Vec<ConspiracyCategory> = ConspiracyCategory::ALL
            .into_iter()
            .filter(|c| mask & (1 << c.index()) != 0)
            .collect();
        cases.push((
            TaskId::Topics,
            topics_gold(&cats),
            Label::Topics(cats.iter().copied().collect()),
        ));
    }
    let failures: Vec<String> = cases
        .iter()
        .filter_map(|(task, gold, label)| {
            let p = parse_response(*task, gold);
            (!p.compliant || p.label != *label).then(|| format!("task {task}: `{gold}` -> {:?}", p.label))
        })
        .collect();
    check(
        vocabulary == 3 + 13 + 3 + 2 + 3,
        format!("vocabulary has {vocabulary} entries"),
    )?;
    check(failures.is_empty(), failures.join("; "))?;
    Ok(format!(
        "{vocabulary} vocabulary entries (+ all 4095 topic sets), 0 failures"
    ))
}

/// Per-class (precision, recall, f1, support) from a confusion matrix.
fn oracle_from_confusion(confusion: &[Vec<usize>]) -> Vec<(f64, f64, f64, usize)> {
    let k = confusion.len();
    (0..k)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..k).map(|g| confusion[g][c]).sum();
            let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let r = if support == 0 { 0.0 } else { tp / support as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            (p, r, f, support)
        })
        .collect()
}

fn weighted(per_class: &[(f64, f64, f64, usize)]) -> (f64, f64, f64) {
    let total: usize = per_class.iter().map(|c| c.3).sum();
    if total == 0 {
        return (0.0, 0.0, 0.0);
    }
    let w =
        |f: fn(&(f64, f64, f64, usize)) -> f64| per_class.iter().map(|c| f(c) * c.3 as f64).sum::<f64>() / total as f64;
    (w(|c| c.0), w(|c| c.1), w(|c| c.2))
}

fn metrics_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for instance in 0..ORACLE_INSTANCES {
        let n = rng.gen_range(1..=300);
        let (got, want) = if instance % 2 == 0 {
            let k = rng.gen_range(2..=6);
            let golds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let preds: Vec<usize> = (0..n)
                .map(|i| {
                    if rng.gen_bool(0.5) {
                        golds[i]
                    } else {
                        rng.gen_range(0..k)
                    }
                })
                .collect();
            let names: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let report = compute_single_label_metrics(&golds, &preds, &refs).map_err(|e| e.to_string())?;
            let mut confusion = vec![vec![0usize; k]; k];
            for (g, p) in golds.iter().zip(&preds) {
                confusion[*g][*p] += 1;
            }
            let acc = (0..k).map(|c| confusion[c][c]).sum::<usize>() as f64 / n as f64;
            let (p, r, f) = weighted(&oracle_from_confusion(&confusion));
            ([report.acc, report.pre, report.rec, report.weighted_f1], [acc, p, r, f])
        } else {
            let labels = rng.gen_range(1..=12);
            let density = rng.gen_range(0.05..0.6);
            let draw = |rng: &mut ChaCha8Rng| -> Vec<usize> { (0..labels).filter(|_| rng.gen_bool(density)).collect() };
            let golds: Vec<Vec<usize>> = (0..n).map(|_| draw(&mut rng)).collect();
            let preds: Vec<Vec<usize>> = golds
                .iter()
                .map(|g| if rng.gen_bool(0.4) { g.clone() } else { draw(&mut rng) })
                .collect();
            let names: Vec<String> = (0..labels).map(|c| format!("l{c}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let report = compute_multilabel_metrics(&golds, &preds, &refs).map_err(|e| e.to_string())?;
            let exact = golds
                .iter()
                .zip(&preds)
                .filter(|(g, p)| g.iter().collect::<BTreeSet<_>>() == p.iter().collect::<BTreeSet<_>>())
                .count();
            // one binary confusion matrix per label, rows = gold, cols = predicted
            let per_label: Vec<(f64, f64, f64, usize)> = (0..labels)
                .map(|l| {
                    let mut m = vec![vec![0usize; 2]; 2];
                    for (g, p) in golds.iter().zip(&preds) {
                        m[g.contains(&l) as usize][p.contains(&l) as usize] += 1;
                    }
                    oracle_from_confusion(&m)[1]
                })
                .collect();
            let (p, r, f) = weighted(&per_label);
            (
                [report.acc, report.pre, report.rec, report.weighted_f1],
                [exact as f64 / n as f64, p, r, f],
            )
        };
        for (g, w) in got.iter().zip(&want) {
            let diff = (g - w).abs();
            worst = worst.max(diff);
            check(
                diff <= ORACLE_TOL,
                format!("instance {instance}: got {got:?}, oracle {want:?}"),
            )?;
        }
    }
    let elapsed = start.elapsed();
    check(
        elapsed < ORACLE_BUDGET,
        format!("took {elapsed:?}, budget {ORACLE_BUDGET:?}"),
    )?;
    Ok(format!(
        "{ORACLE_INSTANCES} instances, max |diff| {worst:.1e} (tol {ORACLE_TOL:e}), {elapsed:.2?}"
    ))
}

fn affective_block_fidelity() -> Outcome {
    let profile = AffectiveProfile {
        ei_scores: PerEmotion {
            anger: 0.521,
            fear: 0.625,
            joy: 0.25,
            sadness: 0.354,
        },
        ei_classes: PerEmotion {
            anger: IntensityClass::Moderate,
            fear: IntensityClass::Low,
            joy: IntensityClass::No,
            sadness: IntensityClass::No,
        },
        sentiment_strength: 0.435,
        sentiment_class: SentimentClass::Neutral,
        emotions: EmotionSet::from_emotions([Emotion::Anger, Emotion::Disgust, Emotion::Fear]),
    };
    let expected = "You can also refer to the affective information. (1) Emotion intensity: anger: 0.521, fear: 0.625, joy: 0.25, sadness: 0.354. (2) Ordinal classification of emotion intensity: moderate amount of anger can be inferred. low amount of fear can be inferred. no joy can be inferred. no sadness can be inferred. (3) Sentiment intensity: 0.435. (4) Sentiment classification: neutral or mixed mental state can be inferred. (5) The emotions included are: anger, disgust, fear.";
    let got = format_affective_block(&profile);
    check(got == expected, format!("got:\n{got}\nexpected:\n{expected}"))?;
    Ok(format!("{} bytes identical", expected.len()))
}

fn task_datasets(coco: &[CocoRecord], loco: &[LocoRecord]) -> Result<Vec<Vec<InstructionRecord>>, String> {
    [
        TaskId::Intention,
        TaskId::Topics,
        TaskId::PerCategory,
        TaskId::Conspiracy,
        TaskId::Relatedness,
    ]
    .into_iter()
    .map(|t| {
        let input = if t.uses_coco() {
            TaskInput::Coco(coco)
        } else {
            TaskInput::Loco(loco)
        };
        build_task_dataset(t, input, None).map_err(|e| e.to_string())
    })
    .collect()
}

fn mock_config() -> BackendConfig {
    BackendConfig {
        parallelism: 8,
        retry: RetryPolicy {
            max_attempts: 1,
            base_backoff_ms: 1,
        },
        ..BackendConfig::default()
    }
}

/// 50 Unrelated, 30 Related, 20 Conspiracy tweets.
fn t1_fixture() -> Vec<CocoRecord> {
    (0..100)
        .map(|i| {
            let label = match i {
                0..=49 => IntentionLabel::Unrelated,
                50..=79 => IntentionLabel::Related,
                _ => IntentionLabel::Conspiracy,
            };
            let labels =
                CategoryLabels::uniform(IntentionLabel::Unrelated).with(ConspiracyCategory::ALL[i % 12], label);
            CocoRecord::new(format!("f{i}"), format!("fixture tweet {i}"), labels)
        })
        .collect()
}

fn end_to_end_mock_runs() -> Outcome {
    let coco = synthetic_coco(200, 5);
    let loco = synthetic_loco(150, 6);
    let config = mock_config();
    let mut summary = Vec::new();
    for dataset in task_datasets(&coco, &loco)? {
        let task = dataset[0].task;
        let backend = EchoBackend::from_records(&dataset);
        let run = run_task(&dataset, &backend, &config).map_err(|e| e.to_string())?;
        let r = score_run(task, &dataset, &run).map_err(|e| e.to_string())?;
        let m = &r.metrics;
        check(
            [m.acc, m.pre, m.rec, m.weighted_f1] == [1.0; 4],
            format!("echo on task {task}: {:?}", [m.acc, m.pre, m.rec, m.weighted_f1]),
        )?;
        summary.push(format!("T{task}"));
    }

    let fixture = t1_fixture();
    let u = 0.5;
    let dataset = build_task_dataset(TaskId::Intention, TaskInput::Coco(&fixture), None).map_err(|e| e.to_string())?;
    let backend = ConstantBackend {
        reply: "0. Unrelated".into(),
    };
    let run = run_task(&dataset, &backend, &config).map_err(|e| e.to_string())?;
    let r = score_run(TaskId::Intention, &dataset, &run).map_err(|e| e.to_string())?;
    let analytic_f1 = u * (2.0 * u / (1.0 + u));
    check(r.metrics.acc == u, format!("constant ACC {} != u = {u}", r.metrics.acc))?;
    check(
        (r.metrics.weighted_f1 - analytic_f1).abs() <= ANALYTIC_TOL,
        format!(
            "constant weighted F1 {} != analytic {analytic_f1}",
            r.metrics.weighted_f1
        ),
    )?;
    Ok(format!(
        "echo = 1.0 on {}; constant: ACC {} = u, F1 {:.6} = u*2u/(1+u)",
        summary.join(","),
        r.metrics.acc,
        r.metrics.weighted_f1
    ))
}

fn fallback_behavior() -> Outcome {
    let refusal = ConstantBackend {
        reply: "I'm sorry, but I can't help with that request.".into(),
    };
    let config = mock_config();
    let fixture = t1_fixture();
    let loco = synthetic_loco(120, 8);
    let t1 = build_task_dataset(TaskId::Intention, TaskInput::Coco(&fixture), None).map_err(|e| e.to_string())?;
    let t4 = build_task_dataset(TaskId::Conspiracy, TaskInput::Loco(&loco), None).map_err(|e| e.to_string())?;
    let unrelated = fixture
        .iter()
        .filter(|r| r.overall == IntentionLabel::Unrelated)
        .count() as f64
        / fixture.len() as f64;
    let non_conspiracy = loco.iter().filter(|r| !r.is_conspiracy).count() as f64 / loco.len() as f64;
    let mut parts = Vec::new();
    for (task, dataset, expected) in [
        (TaskId::Intention, &t1, unrelated),
        (TaskId::Conspiracy, &t4, non_conspiracy),
    ] {
        let run = run_task(dataset, &refusal, &config).map_err(|e| e.to_string())?;
        let r = score_run(task, dataset, &run).map_err(|e| e.to_string())?;
        check(
            r.non_compliance_rate == 1.0,
            format!("task {task}: non-compliance {}", r.non_compliance_rate),
        )?;
        check(
            (r.metrics.acc - expected).abs() <= ANALYTIC_TOL,
            format!("task {task}: ACC {} != negative-class share {expected}", r.metrics.acc),
        )?;
        parts.push(format!("T{task} ACC {:.4}", r.metrics.acc));
    }
    Ok(format!("100% non-compliant; {}", parts.join(", ")))
}

fn profile_with_anger(anger: f64) -> AffectiveProfile {
    AffectiveProfile {
        ei_scores: PerEmotion {
            anger,
            fear: 0.5,
            joy: 0.5,
            sadness: 0.5,
        },
        ei_classes: PerEmotion::uniform(IntensityClass::Low),
        sentiment_strength: 0.5,
        sentiment_class: SentimentClass::Neutral,
        emotions: EmotionSet::Neutral,
    }
}

fn analysis_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut groups = GroupedProfiles::new();
    for (group, a, b) in [("unrelated", 3.0, 7.0), ("conspiracy", 7.0, 3.0)] {
        let beta = Beta::new(a, b).unwrap();
        for _ in 0..DENSITY_N {
            groups.push(group, profile_with_anger(beta.sample(&mut rng)));
        }
    }
    let series = density(&groups, ScoreField::Anger, DENSITY_BINS).map_err(|e| e.to_string())?;
    let low = series.group("unrelated").unwrap().mean();
    let high = series.group("conspiracy").unwrap().mean();
    check(
        (low - 0.3).abs() <= DENSITY_MEAN_TOL,
        format!("unrelated mean {low:.4}, expected 0.3"),
    )?;
    check(
        (high - 0.7).abs() <= DENSITY_MEAN_TOL,
        format!("conspiracy mean {high:.4}, expected 0.7"),
    )?;
    check(high > low, "ordering lost")?;
    Ok(format!(
        "means {low:.4} / {high:.4} (tol {DENSITY_MEAN_TOL}), conspiracy > unrelated"
    ))
}

fn determinism() -> Outcome {
    let f = Fixture::new(300, 200);
    let coco = f.coco.display().to_string();
    let loco = f.loco.display().to_string();
    let a = f.dir.path().join("run-a");
    let b = f.dir.path().join("run-b");
    for out in [&a, &b] {
        for args in [
            vec!["--seed", "11", "ingest", "--coco", &coco, "--loco", &loco],
            vec!["--seed", "11", "split"],
            vec!["--seed", "11", "build"],
        ] {
            check(f.cli_in(out, &args) == 0, format!("{args:?} failed"))?;
        }
    }
    let mut compared = 0;
    for sub in ["splits", "datasets"] {
        let mut names: Vec<_> = fs::read_dir(a.join(sub))
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for name in names {
            let x = fs::read(a.join(sub).join(&name)).map_err(|e| e.to_string())?;
            let y = fs::read(b.join(sub).join(&name)).map_err(|e| e.to_string())?;
            check(x == y, format!("{sub}/{} differs", name.to_string_lossy()))?;
            compared += 1;
        }
    }
    check(compared >= 2 + 10, format!("only {compared} files compared"))?;
    Ok(format!("{compared} split/dataset files byte-identical across two runs"))
}

struct Counting<P> {
    inner: P,
    calls: std::sync::atomic::AtomicUsize,
}

impl<P: AffectProvider> AffectProvider for Counting<P> {
    fn query(&self, dimension: AffectDimension, text: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.inner.query(dimension, text)
    }
}

/// Set CONDID_AFFECT_ENDPOINT (and optionally CONDID_AFFECT_MODEL,
/// CONDID_AFFECT_TOKEN_ENV) to run against a live analyzer.
fn live_affect_idempotency() -> Option<Outcome> {
    let endpoint = std::env::var("CONDID_AFFECT_ENDPOINT").ok()?;
    Some((|| {
        let config = BackendConfig {
            endpoint,
            model: std::env::var("CONDID_AFFECT_MODEL").unwrap_or_else(|_| "default".into()),
            auth_token_env: std::env::var("CONDID_AFFECT_TOKEN_ENV").ok(),
            ..BackendConfig::default()
        };
        let provider = Counting {
            inner: RemoteAffectProvider {
                backend: HttpBackend::new(config.clone()).map_err(|e| e.to_string())?,
                templates: AffectPromptTemplates::default(),
                retry: config.retry,
            },
            calls: Default::default(),
        };
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cache = dir.path().join("cache.jsonl");
        let texts: Vec<(String, String)> = synthetic_loco(LIVE_TEXTS, 3)
            .into_iter()
            .map(|r| (r.id, r.text))
            .collect();
        acquire_profiles(&texts, &provider, &cache, config.parallelism).map_err(|e| e.to_string())?;
        let first = provider.calls.swap(0, std::sync::atomic::Ordering::SeqCst);
        let again = acquire_profiles(&texts, &provider, &cache, config.parallelism).map_err(|e| e.to_string())?;
        let second = provider.calls.load(std::sync::atomic::Ordering::SeqCst);
        check(second == 0, format!("second pass made {second} remote calls"))?;
        check(
            again.cache_hits == LIVE_TEXTS,
            format!("{} cache hits", again.cache_hits),
        )?;
        Ok(format!("{first} calls on first pass, 0 on second"))
    })())
}

type Criterion = Box<dyn Fn() -> Option<Outcome>>;

fn main() {
    // Under `cargo test -- --list` etc. there is nothing to enumerate.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 dataset arithmetic", Box::new(|| Some(dataset_arithmetic()))),
        ("2 gold round-trip", Box::new(|| Some(gold_round_trip()))),
        ("3 metrics oracle", Box::new(|| Some(metrics_oracle()))),
        (
            "4 affective block fidelity",
            Box::new(|| Some(affective_block_fidelity())),
        ),
        ("5 end-to-end mock runs", Box::new(|| Some(end_to_end_mock_runs()))),
        ("6 fallback behavior", Box::new(|| Some(fallback_behavior()))),
        ("7 analysis properties", Box::new(|| Some(analysis_properties()))),
        ("8 determinism", Box::new(|| Some(determinism()))),
        ("9 live affect idempotency", Box::new(live_affect_idempotency)),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Some(Err(format!("panicked: {msg}")))
        });
        match outcome {
            Some(Ok(detail)) => println!("PASS  criterion {name}: {detail}"),
            Some(Err(detail)) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
            None => {
                println!("SKIP  criterion {name}: no live affective backend configured (set CONDID_AFFECT_ENDPOINT)")
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
