mod common;

use condid::corpus::{
    load_coco, load_loco, write_coco_csv, write_loco, CategoryLabels, CocoFormat, CocoRecord, ConspiracyCategory,
    IntentionLabel, LocoRecord, RelatednessLabel,
};
use condid::inference::{run_task, BackendConfig, EchoBackend};
use condid::instructions::{build_task_dataset, TaskId, TaskInput};
use condid::scoring::{compute_multilabel_metrics, compute_single_label_metrics};
use proptest::prelude::*;

fn arb_text() -> impl Strategy<Value = String> {
    // commas, quotes, newlines and non-ASCII all have to survive
    prop::collection::vec(
        prop_oneof![
            Just(",".to_string()),
            Just("\"".to_string()),
            Just("\n".to_string()),
            Just("é".to_string()),
            Just("🦠".to_string()),
            "[a-zA-Z0-9 #@.]{1,8}",
        ],
        1..12,
    )
    .prop_map(|parts| parts.concat())
}

fn arb_coco() -> impl Strategy<Value = Vec<CocoRecord>> {
    prop::collection::vec((arb_text(), prop::collection::vec(0u8..3, 12)), 0..20).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (text, codes))| {
                let mut labels = CategoryLabels::uniform(IntentionLabel::Unrelated);
                for (c, code) in ConspiracyCategory::ALL.into_iter().zip(codes) {
                    labels.set(c, IntentionLabel::from_code(code).unwrap());
                }
                CocoRecord::new(format!("id{i}"), text, labels)
            })
            .collect()
    })
}

fn arb_loco() -> impl Strategy<Value = Vec<LocoRecord>> {
    prop::collection::vec((arb_text(), any::<bool>(), 0u8..3, "[a-z-]{0,12}"), 0..20).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (text, c, r, topic))| LocoRecord {
                id: format!("doc-{i}"),
                text,
                is_conspiracy: c,
                relatedness: RelatednessLabel::from_code(r).unwrap(),
                topic,
            })
            .collect()
    })
}

/// Golds/preds over `k` classes.
fn arb_single() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..=6).prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k), 1..120)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coco_csv_and_jsonl_round_trip(records in arb_coco()) {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("c.csv");
        write_coco_csv(&records, &csv).unwrap();
        let back = load_coco(&csv, CocoFormat::Csv).unwrap().records;
        prop_assert_eq!(&back, &records);

        let jsonl = dir.path().join("c.jsonl");
        let body: String = records
            .iter()
            .map(|r| {
                let mut row = serde_json::json!({"id": r.id, "text": r.text});
                for (c, l) in r.category_labels.iter() {
                    row[c.column_name()] = l.as_str().into();
                }
                row.to_string() + "\n"
            })
            .collect();
        std::fs::write(&jsonl, body).unwrap();
        prop_assert_eq!(load_coco(&jsonl, CocoFormat::JsonLines).unwrap().records, records);
    }

    #[test]
    fn loco_round_trip(records in arb_loco()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.jsonl");
        write_loco(&records, &path).unwrap();
        let once = load_loco(&path).unwrap().records;
        write_loco(&once, &path).unwrap();
        prop_assert_eq!(load_loco(&path).unwrap().records, records);
    }

    #[test]
    fn permuting_pairs_changes_nothing((k, pairs) in arb_single(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let names: Vec<String> = (0..k).map(|c| c.to_string()).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let (g, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let a = compute_single_label_metrics(&g, &p, &names).unwrap();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (g2, p2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        let b = compute_single_label_metrics(&g2, &p2, &names).unwrap();
        for (x, y) in [(a.acc, b.acc), (a.pre, b.pre), (a.rec, b.rec), (a.weighted_f1, b.weighted_f1), (a.macro_f1, b.macro_f1)] {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn relabeling_keeps_acc_and_weighted_f1((k, pairs) in arb_single(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let names: Vec<String> = (0..k).map(|c| c.to_string()).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (g, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let a = compute_single_label_metrics(&g, &p, &names).unwrap();
        let g2: Vec<usize> = g.iter().map(|&c| perm[c]).collect();
        let p2: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
        let b = compute_single_label_metrics(&g2, &p2, &names).unwrap();
        prop_assert!((a.acc - b.acc).abs() < 1e-12);
        prop_assert!((a.weighted_f1 - b.weighted_f1).abs() < 1e-12);
    }

    #[test]
    fn multilabel_permutation_invariance(
        pairs in prop::collection::vec((prop::collection::btree_set(0usize..12, 0..4), prop::collection::btree_set(0usize..12, 0..4)), 1..80),
    ) {
        let names: Vec<String> = (0..12).map(|c| c.to_string()).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let to_vecs = |ps: &[(std::collections::BTreeSet<usize>, std::collections::BTreeSet<usize>)]| {
            ps.iter().map(|(g, p)| (g.iter().copied().collect::<Vec<_>>(), p.iter().copied().collect::<Vec<_>>())).unzip::<_, _, Vec<_>, Vec<_>>()
        };
        let (g, p) = to_vecs(&pairs);
        let a = compute_multilabel_metrics(&g, &p, &names).unwrap();
        let reversed: Vec<_> = pairs.iter().rev().cloned().collect();
        let (g2, p2) = to_vecs(&reversed);
        let b = compute_multilabel_metrics(&g2, &p2, &names).unwrap();
        prop_assert!((a.acc - b.acc).abs() < 1e-12);
        prop_assert!((a.weighted_f1 - b.weighted_f1).abs() < 1e-12);
    }
}

#[test]
fn per_category_prompts_name_their_category_once() {
    let coco = common::synthetic_coco(3, 4);
    let records = build_task_dataset(TaskId::PerCategory, TaskInput::Coco(&coco), None).unwrap();
    for r in &records {
        let name = r.category.unwrap().display_name();
        assert_eq!(r.task_prompt.matches(name).count(), 1, "{}", r.task_prompt);
    }
}

#[test]
fn mock_runs_match_modulo_timestamps() {
    let loco = common::synthetic_loco(50, 9);
    let dataset = build_task_dataset(TaskId::Relatedness, TaskInput::Loco(&loco), None).unwrap();
    let backend = EchoBackend::from_records(&dataset);
    let config = BackendConfig {
        parallelism: 6,
        ..BackendConfig::default()
    };
    let a = run_task(&dataset, &backend, &config).unwrap();
    let mut b = run_task(&dataset, &backend, &config).unwrap();
    assert_eq!(a.responses.len(), dataset.len());
    b.started_at = a.started_at;
    b.finished_at = a.finished_at;
    for (x, y) in a.responses.iter().zip(b.responses.iter_mut()) {
        y.latency_ms = x.latency_ms;
    }
    assert_eq!(a, b);
}
