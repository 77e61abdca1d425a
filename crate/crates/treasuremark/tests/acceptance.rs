//! End-to-end acceptance checks. Each test prints one PASS line so a
//! `--nocapture` run reads as a checklist.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;
use std::io::Write;
use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use treasuremark::annotate::{
    annotate_deterministic, build_quartile_table, length_bucket, quality_bucket,
};
use treasuremark::dataset::{build_training_example, SampleRecord};
use treasuremark::dropout::{decide, DropoutConfig};
use treasuremark::evalsuite::{
    line_pass_rate, marker_accuracy, nonempty_lines, violation_rate, win_rate, ConstraintKind,
    EvalGeneration, EvalRecord, LengthConstraint, Verdict,
};
use treasuremark::inference::rewrite_length_instructed;
use treasuremark::llmclient::{
    Client, ClientError, CompletionRequest, EndpointConfig, ScriptedReply, ScriptedTransport,
};
use treasuremark::markup::{extract_first_block, parse_lenient, parse_marker_list, serialize_marker_list};
use treasuremark::taxonomy::{
    list_categories, validate_marker, Category, Marker, MarkerList, MarkerValue, ValueKind,
};

fn pass(name: &str) {
    println!("ACCEPTANCE PASS: {name}");
}

fn markers(pairs: &[(&str, &str)]) -> MarkerList {
    pairs
        .iter()
        .map(|(t, v)| validate_marker(t, v).unwrap())
        .collect()
}

#[test]
fn template_fidelity() {
    let m = markers(&[
        ("domain", "Culture"),
        ("length_bucket", "concise"),
        ("length_tokens", "199"),
        ("task", "QuestionAnswering"),
    ]);
    assert_eq!(
        serialize_marker_list(&m),
        "<MARKER_LIST>\n\
         <domain>Culture</domain>\n\
         <length_bucket>concise</length_bucket>\n\
         <length_tokens>199</length_tokens>\n\
         <task>QuestionAnswering</task>\n\
         </MARKER_LIST>"
    );
    let block = "<MARKER_LIST>\n<length_tokens>199</length_tokens>\n</MARKER_LIST>";
    let parsed = parse_marker_list(block).unwrap();
    assert_eq!(parsed, markers(&[("length_tokens", "199")]));
    assert_eq!(parsed.get(Category::LengthTokens), Some(&MarkerValue::Int(199)));
    pass("template fidelity (printed example blocks reproduce exactly)");
}

fn random_marker_list(rng: &mut StdRng) -> MarkerList {
    let mut list = MarkerList::new();
    for spec in list_categories() {
        if rng.gen_bool(0.5) {
            continue;
        }
        let value = match spec.value_kind {
            ValueKind::Integer => MarkerValue::Int(rng.gen_range(0..1_000_000)),
            ValueKind::Decimal => {
                MarkerValue::Decimal(rng.gen_range(-1_000_000i64..1_000_000) as f64 / 1e4)
            }
            ValueKind::Enum | ValueKind::LanguageEnum => {
                MarkerValue::Token(spec.allowed_values[rng.gen_range(0..spec.allowed_values.len())])
            }
        };
        list.insert(Marker {
            category: spec.category,
            value,
        });
    }
    list
}

#[test]
fn round_trip_property() {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for _ in 0..10_000 {
        let list = random_marker_list(&mut rng);
        let serialized = serialize_marker_list(&list);
        let parsed = parse_marker_list(&serialized).unwrap();
        assert_eq!(parsed, list, "round trip changed {serialized}");
    }
    pass("round-trip property (10,000 random lists, 0 failures)");
}

#[test]
fn bucketing_boundaries() {
    let cases = [
        (0, "concise"),
        (1, "concise"),
        (299, "concise"),
        (300, "medium"),
        (1000, "medium"),
        (1001, "long"),
        (1_000_000, "long"),
    ];
    for (count, expected) in cases {
        assert_eq!(length_bucket(count), expected, "bucket of {count}");
    }
    pass("length bucketing boundaries");
}

#[test]
fn quartiles_match_oracle() {
    // independent oracle: smallest sorted value whose cumulative count
    // reaches ceil(p*n)
    fn oracle(sorted: &[f64], p: f64) -> f64 {
        let need = (p * sorted.len() as f64).ceil().max(1.0) as usize;
        sorted[need.min(sorted.len()) - 1]
    }
    let mut rng = StdRng::seed_from_u64(0x71a7);
    for set in 0..1_000 {
        let n = rng.gen_range(4..200);
        // small value domain to force ties regularly
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..50) as f64).collect();
        let table =
            build_quartile_table(scores.iter().map(|&s| ("lang", s)));
        let q = table.get("lang").unwrap();
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(q.q1, oracle(&sorted, 0.25), "set {set} q1");
        assert_eq!(q.q2, oracle(&sorted, 0.50), "set {set} q2");
        assert_eq!(q.q3, oracle(&sorted, 0.75), "set {set} q3");
        assert_eq!(q.p95, oracle(&sorted, 0.95), "set {set} p95");
        // bucket populations deviate from n/4 only via rank rounding and
        // ties at the thresholds
        let mut counts = [0usize; 4];
        for &s in &scores {
            counts[quality_bucket(s, "lang", &table).unwrap() as usize - 1] += 1;
        }
        let ties = scores
            .iter()
            .filter(|&&s| s == q.q1 || s == q.q2 || s == q.q3)
            .count();
        let slack = 1.0 + ties as f64;
        for (b, &count) in counts.iter().enumerate() {
            let deviation = (count as f64 - n as f64 / 4.0).abs();
            assert!(
                deviation <= slack,
                "set {set} bucket {} holds {count}/{n} (ties {ties})",
                b + 1
            );
        }
        assert_eq!(counts.iter().sum::<usize>(), n);
    }
    pass("quartiles and bucket populations match sort-based oracle (1,000 sets)");
}

fn synthetic_record(i: usize, rng: &mut StdRng) -> SampleRecord {
    let languages = ["English", "French", "German", "Chinese"];
    let words = rng.gen_range(1..40);
    SampleRecord {
        id: format!("rec-{i}"),
        prompt: format!("Question number {i}?"),
        completion: vec!["word"; words].join(" "),
        language: languages[i % languages.len()].to_string(),
        quality_score: None,
        metadata: BTreeMap::new(),
    }
}

fn write_corpus(path: &std::path::Path, n: usize) {
    let mut rng = StdRng::seed_from_u64(77);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    for i in 0..n {
        serde_json::to_writer(&mut f, &synthetic_record(i, &mut rng)).unwrap();
        f.write_all(b"\n").unwrap();
    }
    f.flush().unwrap();
}

fn run_build(input: &std::path::Path, output: &std::path::Path, jobs: u32) {
    let status = Command::new(env!("CARGO_BIN_EXE_treasuremark"))
        .args([
            "--jobs",
            &jobs.to_string(),
            "build",
            "--in",
            input.to_str().unwrap(),
            "--out",
            output.to_str().unwrap(),
            "--seed",
            "42",
            "--dropout",
            "50_50",
        ])
        .output()
        .unwrap();
    assert!(status.status.success(), "build failed: {status:?}");
}

#[test]
fn dropout_statistics_and_reproducibility() {
    // empirical rates over 10,000 records
    let gold = markers(&[
        ("domain", "Code"),
        ("language", "English"),
        ("length_tokens", "10"),
        ("task", "CodeGeneration"),
    ]);
    let cfg = DropoutConfig::preset("50_50", 4242).unwrap();
    let (mut dropped, mut kept, mut total) = (0usize, 0usize, 0usize);
    for i in 0..10_000 {
        let d = decide(&format!("r{i}"), &gold, &cfg);
        if d.dataset_dropped {
            dropped += 1;
        } else {
            kept += d.kept_categories.len();
            total += gold.len();
        }
    }
    let drop_frac = dropped as f64 / 10_000.0;
    assert!((drop_frac - 0.5).abs() < 0.02, "dataset drop {drop_frac}");
    let keep_frac = kept as f64 / total as f64;
    assert!((keep_frac - 0.5).abs() < 0.02, "marker keep {keep_frac}");
    let cfg0 = DropoutConfig::preset("0_50", 4242).unwrap();
    assert!((0..10_000).all(|i| !decide(&format!("r{i}"), &gold, &cfg0).dataset_dropped));

    // byte-identical builds across reruns and worker counts
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    write_corpus(&corpus, 2_000);
    let outputs: Vec<_> = [("a", 1), ("b", 1), ("c", 8)]
        .iter()
        .map(|(name, jobs)| {
            let out = dir.path().join(format!("{name}.jsonl"));
            run_build(&corpus, &out, *jobs);
            std::fs::read(&out).unwrap()
        })
        .collect();
    assert!(!outputs[0].is_empty());
    assert_eq!(outputs[0], outputs[1], "rerun differed");
    assert_eq!(outputs[0], outputs[2], "--jobs 8 differed");
    pass("dropout statistics within ±2% and builds byte-identical across runs/workers");
}

#[test]
fn placement_invariant() {
    let mut rng = StdRng::seed_from_u64(9001);
    let cfg = DropoutConfig::preset("50_50", 7).unwrap();
    for i in 0..1_000 {
        let record = synthetic_record(i, &mut rng);
        let gold = annotate_deterministic(&record, None);
        let example = build_training_example(&record, &gold, &cfg);
        let (block, remainder) = extract_first_block(&example.target_text);
        let block = block.expect("target carries a block");
        assert_eq!(block.marker_list, gold, "record {i} gold recovery");
        assert_eq!(remainder, record.completion, "record {i} completion recovery");
        assert!(example.prompt_markers.is_subset_of(&gold), "record {i} subset");
    }
    pass("placement invariant on 1,000 built examples");
}

#[test]
fn length_instructed_rewrite() {
    let original = "Answer the following instruction using 199 words or less.\n\nWhat are the names of some famous actors that started their careers on Broadway?";
    let rewrite = rewrite_length_instructed(original).unwrap();
    assert_eq!(
        rewrite.stripped_prompt,
        "What are the names of some famous actors that started their careers on Broadway?"
    );
    assert_eq!(rewrite.markers, markers(&[("length_tokens", "199")]));

    let sentences = "Answer the following instruction using 5 sentences or less.\n\nSolve this: 55+44+33+66";
    let rewrite = rewrite_length_instructed(sentences).unwrap();
    assert_eq!(rewrite.markers, markers(&[("length_sent", "5")]));
    assert!(rewrite.markers.contains(Category::LengthSent));
    pass("length-instructed rewrite (word and sentence forms)");
}

#[test]
fn metric_oracles() {
    let mut rng = StdRng::seed_from_u64(0xe7a1);
    let languages = ["fr", "en", "de"];
    let mut records = Vec::new();
    for i in 0..500 {
        let words = rng.gen_range(0..30);
        let limit = rng.gen_range(5..25);
        let target = languages[rng.gen_range(0..languages.len())];
        let lines = rng.gen_range(0..4);
        let completion: Vec<String> = (0..lines)
            .map(|l| format!("line {i}-{l} {}", vec!["w"; words].join(" ")))
            .collect();
        let line_languages: Vec<String> = (0..lines)
            .map(|_| {
                if rng.gen_bool(0.7) {
                    target.to_string()
                } else {
                    languages[rng.gen_range(0..languages.len())].to_string()
                }
            })
            .collect();
        let gold = if rng.gen_bool(0.8) {
            Some(markers(&[(
                "domain",
                if rng.gen_bool(0.5) { "Code" } else { "Math" },
            )]))
        } else {
            None
        };
        let predicted = if rng.gen_bool(0.8) {
            Some(markers(&[(
                "domain",
                if rng.gen_bool(0.5) { "Code" } else { "Math" },
            )]))
        } else {
            None
        };
        records.push(EvalRecord {
            id: format!("e{i}"),
            prompt: String::new(),
            constraint: Some(LengthConstraint {
                kind: ConstraintKind::Tokens,
                limit,
            }),
            target_language: Some(target.to_string()),
            gold_markers: gold,
            generation: EvalGeneration {
                visible_completion: completion.join("\n"),
                inferred_markers: predicted,
            },
            judge_verdict: Some(match rng.gen_range(0..3) {
                0 => Verdict::Win,
                1 => Verdict::Loss,
                _ => Verdict::Tie,
            }),
            line_languages: Some(line_languages),
        });
    }

    // violation_rate vs whitespace-split brute force
    let expected_violations = records
        .iter()
        .filter(|r| {
            r.generation.visible_completion.split_whitespace().count() as u64
                > r.constraint.unwrap().limit
        })
        .count() as u64;
    let report = violation_rate(&records).unwrap();
    assert_eq!(report.numerator, expected_violations);
    assert_eq!(report.denominator, 500);

    // line_pass_rate vs per-record brute force over the fixture oracle
    let oracle: BTreeMap<String, String> = records
        .iter()
        .flat_map(|r| {
            nonempty_lines(&r.generation.visible_completion)
                .zip(r.line_languages.as_ref().unwrap())
                .map(|(line, language)| (line.to_string(), language.clone()))
        })
        .collect();
    let id = |line: &str| oracle.get(line.trim()).cloned().unwrap_or_default();
    let expected_passes = records
        .iter()
        .filter(|r| {
            let lines: Vec<_> = nonempty_lines(&r.generation.visible_completion).collect();
            !lines.is_empty()
                && lines
                    .iter()
                    .all(|l| id(l) == *r.target_language.as_ref().unwrap())
        })
        .count() as u64;
    let report = line_pass_rate(&records, &id).unwrap();
    assert_eq!(report.numerator, expected_passes);

    // marker_accuracy vs brute force, gold-side denominator
    let (mut correct, mut counted) = (0u64, 0u64);
    for r in &records {
        if let Some(gold_value) = r.gold_markers.as_ref().and_then(|g| g.get(Category::Domain)) {
            counted += 1;
            let predicted = r
                .generation
                .inferred_markers
                .as_ref()
                .and_then(|p| p.get(Category::Domain));
            if predicted == Some(gold_value) {
                correct += 1;
            }
        }
    }
    let report = marker_accuracy(&records, &[Category::Domain]).unwrap();
    assert_eq!((report.numerator, report.denominator), (correct, counted));

    // win_rate vs counted verdicts
    let wins = records
        .iter()
        .filter(|r| r.judge_verdict == Some(Verdict::Win))
        .count() as u64;
    let report = win_rate(&records).unwrap();
    assert_eq!((report.numerator, report.denominator), (wins, 500));
    let displayed = format!("{:.2}", report.value);
    assert_eq!(displayed, format!("{:.2}", 100.0 * wins as f64 / 500.0));
    pass("metric oracles on 500-record randomized fixtures");
}

#[test]
fn mocked_on_the_fly_flow() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("prompts.jsonl");
    let script = dir.path().join("annotator.jsonl");
    let config = dir.path().join("config.json");
    let output = dir.path().join("annotated.jsonl");

    let mut prompts = std::io::BufWriter::new(std::fs::File::create(&input).unwrap());
    let mut replies = std::io::BufWriter::new(std::fs::File::create(&script).unwrap());
    let domains = ["Culture", "Math", "Code", "Medical", "Legal"];
    let mut invalid_ids = Vec::new();
    for i in 0..100 {
        writeln!(
            prompts,
            "{}",
            serde_json::json!({"id": format!("p{i}"), "prompt": format!("Prompt number {i}?")})
        )
        .unwrap();
        // every third reply carries entries the pipeline must drop; all use
        // the fenced style and `lang`/`length_sentences` spellings the
        // annotator few-shots exhibit
        let mut block = format!(
            "```\n<MARKER_LIST>\n<domain>{}</domain>\n<lang>English</lang>\n<length_sentences>{}</length_sentences>\n",
            domains[i % domains.len()],
            i % 9 + 1
        );
        if i % 3 == 0 {
            block.push_str("<domain2>bogus</domain2>\n<format>NotAFormat</format>\n");
            invalid_ids.push(format!("p{i}"));
        }
        block.push_str("<task>QuestionAnswering</task>\n</MARKER_LIST>\n```");
        writeln!(replies, "{}", serde_json::json!({"content": block})).unwrap();
    }
    prompts.flush().unwrap();
    replies.flush().unwrap();
    std::fs::write(
        &config,
        serde_json::json!({
            "annotator": {
                "base_url": format!("mock:{}", script.display()),
                "model_name": "annotator",
                "backoff_base_ms": 1
            }
        })
        .to_string(),
    )
    .unwrap();

    let result = Command::new(env!("CARGO_BIN_EXE_treasuremark"))
        .args([
            "--config",
            config.to_str().unwrap(),
            "annotate-fly",
            "--in",
            input.to_str().unwrap(),
            "--out",
            output.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(result.status.success(), "annotate-fly failed: {result:?}");

    let annotated = std::fs::read_to_string(&output).unwrap();
    let mut count = 0;
    for line in annotated.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = record["id"].as_str().unwrap();
        let prompt = record["prompt"].as_str().unwrap();
        // suffix block must lenient-parse cleanly (canonical output drops
        // nothing on re-parse)
        let idx = prompt.find("<MARKER_LIST>").expect("block appended");
        let (parsed, dropped) = parse_lenient(&prompt[idx..]).unwrap();
        assert!(dropped.is_empty(), "{id}: canonical block re-dropped entries");
        assert!(parsed.contains(Category::Domain), "{id}: domain missing");
        assert!(parsed.contains(Category::LengthSent), "{id}: alias not canonicalized");
        assert!(prompt.starts_with(&format!("Prompt number {}?", &id[1..])));
        let has_warning = !record["warning"].is_null();
        assert_eq!(
            has_warning,
            invalid_ids.contains(&id.to_string()),
            "{id}: warning presence"
        );
        count += 1;
    }
    assert_eq!(count, 100);
    pass("mocked on-the-fly annotation over a 100-record fixture");
}

#[test]
fn client_robustness() {
    fn client(transport: Arc<ScriptedTransport>, max_in_flight: usize) -> Client {
        let cfg = EndpointConfig {
            base_url: "http://unused".into(),
            model_name: "m".into(),
            backoff_base_ms: 1,
            max_retries: 2,
            max_in_flight,
            ..EndpointConfig::default()
        };
        Client::with_transport(cfg, transport).unwrap()
    }
    let request = CompletionRequest {
        system: None,
        user: "q".into(),
        temperature: None,
    };

    // sequential script: request 0 sees 429 then 200; request 1 sees
    // persistent 500s until retries run out
    let transport = Arc::new(
        ScriptedTransport::new(vec![
            ScriptedReply::status(429, "slow down"),
            ScriptedReply::content("ok"),
        ])
        .with_fallback(ScriptedReply::status(500, "boom")),
    );
    let results = client(transport.clone(), 1).complete_batch(&vec![request.clone(); 2]);
    assert_eq!(results[0].0, 0);
    let ok = results[0].1.as_ref().unwrap();
    assert_eq!((ok.text.as_str(), ok.retries), ("ok", 1));
    assert_eq!(results[1].0, 1);
    assert!(matches!(
        results[1].1,
        Err(ClientError::ExhaustedRetries { attempts: 3, .. })
    ));
    assert_eq!(transport.calls(), 2 + 3);

    // concurrency cap holds under load
    let transport = Arc::new(
        ScriptedTransport::new(vec![])
            .with_fallback(ScriptedReply::content("ok"))
            .with_hold(Duration::from_millis(10)),
    );
    let results = client(transport.clone(), 3).complete_batch(&vec![request; 12]);
    assert!(results.iter().all(|(_, r)| r.is_ok()));
    assert!(
        transport.max_in_flight_observed() <= 3,
        "cap exceeded: {}",
        transport.max_in_flight_observed()
    );
    pass("client robustness (retry indices and in-flight cap)");
}
