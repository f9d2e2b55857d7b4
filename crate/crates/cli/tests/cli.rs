use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use extraction_audit::corpus::{load_results, save_records, SequenceRecord};
use extraction_audit::estimators::{oracle_exact_masses, OracleGuard};
use extraction_audit::metrics::{extraction_rate, success_probabilistic};
use extraction_audit::model::{NGramModel, NGramSpec, SyntheticSpec};
use extraction_audit::{DecodingPolicy, TokenDistributionProvider, TokenId};
use extraction_audit_cli::{run_cli, EXIT_CONFIG, EXIT_GUARD, EXIT_OK, EXIT_PROVIDER};
use serde_json::{json, Value};

const N_PRE: usize = 3;
const T: usize = 5;

struct Fixture {
    dir: tempfile::TempDir,
    spec: NGramSpec,
}

impl Fixture {
    /// An n-gram model over 6 tokens and 10 records cut from its own training corpus.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let spec = NGramSpec::random(6, 3, 400, 17);
        std::fs::write(dir.path().join("model.json"), serde_json::to_string(&SyntheticSpec::Ngram(spec.clone())).unwrap()).unwrap();
        let corpus = &spec.corpus[0];
        let records: Vec<SequenceRecord> = (0..10)
            .map(|i| {
                let s = i * 13;
                SequenceRecord {
                    id: format!("rec{i:02}"),
                    prefix: corpus[s..s + N_PRE].to_vec(),
                    suffix: corpus[s + N_PRE..s + N_PRE + T].to_vec(),
                    char_span: None,
                    source: "corpus".into(),
                }
            })
            .collect();
        save_records(&dir.path().join("records.jsonl"), &records).unwrap();
        Self { dir, spec }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn model(&self) -> NGramModel {
        NGramModel::from_spec(&self.spec).unwrap()
    }

    fn base_args(&self, command: &str, out: &str) -> Vec<String> {
        [
            "extraction-audit",
            command,
            "--provider",
            self.path("model.json").to_str().unwrap(),
            "--records",
            self.path("records.jsonl").to_str().unwrap(),
            "--prefix-len",
            "3",
            "--suffix-len",
            "5",
            "--top-k",
            "3",
            "--out",
            self.path(out).to_str().unwrap(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }
}

fn with(mut args: Vec<String>, extra: &[&str]) -> Vec<String> {
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn set(mut args: Vec<String>, flag: &str, value: &str) -> Vec<String> {
    let i = args.iter().position(|a| a == flag).unwrap();
    args[i + 1] = value.to_string();
    args
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&read(&dir.join("summary.json"))).unwrap()
}

#[test]
fn run_produces_results_and_is_deterministic() {
    let f = Fixture::new();
    let run = |out: &str, workers: &str| {
        run_cli(with(f.base_args("run", out), &["--beam-width", "9", "--epsilon", "2", "--workers", workers]))
    };
    assert_eq!(run("a", "1"), EXIT_OK);
    assert_eq!(run("b", "4"), EXIT_OK);
    let results = load_results(&f.path("a/results.jsonl")).unwrap();
    assert_eq!(results.len(), 10);
    assert!(results.windows(2).all(|w| w[0].id < w[1].id));
    for r in &results {
        assert_eq!(r.nearverbatim_mass.len(), 3);
        assert!(r.nearverbatim_mass.windows(2).all(|w| w[0] <= w[1]));
        assert!(r.nearverbatim_mass[0] >= r.verbatim_mass);
        for (m, u) in r.nearverbatim_mass.iter().zip(&r.upper_bound) {
            assert!(m <= u);
        }
    }
    for file in ["results.jsonl", "summary.json", "ccdf.csv", "shares.csv"] {
        assert_eq!(read(&f.path("a").join(file)), read(&f.path("b").join(file)), "{file} differs");
    }
    let s = summary(&f.path("a"));
    assert_eq!(s["schema"], "summary");
    assert_eq!(s["input_hash"].as_str().unwrap().len(), 64);
    assert_eq!(s["config"]["settings"]["beam_width"], 9);
    assert!(read(&f.path("a/ccdf.csv")).starts_with("# input_hash="));
}

#[test]
fn summary_rates_match_offline_recomputation() {
    let f = Fixture::new();
    assert_eq!(run_cli(with(f.base_args("run", "o"), &["--beam-width", "9", "--epsilon", "3", "--tau-min", "0.01"])), EXIT_OK);
    let results = load_results(&f.path("o/results.jsonl")).unwrap();
    let s = summary(&f.path("o"));
    for eps in 0..=3 {
        let expected = extraction_rate(&results, |r| success_probabilistic(r.mass_at(eps), 0.01)).unwrap();
        let got = s["summary"]["rates"][eps]["probabilistic"].as_f64().unwrap();
        assert_eq!(got, expected, "eps {eps}");
    }
    let verbatim = extraction_rate(&results, |r| r.verbatim_mass >= 0.01).unwrap();
    assert_eq!(s["summary"]["verbatim_rate"].as_f64().unwrap(), verbatim);
    assert_eq!(s["summary"]["rates"][0]["probabilistic"].as_f64().unwrap(), verbatim);
}

#[test]
fn oracle_matches_unpruned_run() {
    let f = Fixture::new();
    for variant in ["baseline", "lev"] {
        let out = format!("run_{variant}");
        assert_eq!(run_cli(with(f.base_args("run", &out), &["--beam-width", "243", "--epsilon", "3", "--variant", variant])), EXIT_OK);
        assert_eq!(run_cli(with(f.base_args("oracle", "oracle"), &["--epsilon", "3"])), EXIT_OK);
        let results = load_results(&f.path(&out).join("results.jsonl")).unwrap();
        let lines: Vec<Value> = read(&f.path("oracle/oracle.jsonl")).lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
        for (r, o) in results.iter().zip(&lines) {
            assert_eq!(o["id"].as_str().unwrap(), r.id);
            let rec_masses: Vec<f64> = serde_json::from_value(o["masses"].clone()).unwrap();
            assert_eq!(rec_masses.len(), 4);
            for (eps, m) in rec_masses.iter().enumerate() {
                assert!((m - r.nearverbatim_mass[eps]).abs() < 1e-9, "{variant} {} eps {eps}", r.id);
                assert!((r.upper_bound[eps] - r.nearverbatim_mass[eps]).abs() < 1e-9);
            }
        }
    }
    // the library oracle agrees with the file
    let m = f.model();
    let results = load_results(&f.path("run_lev/results.jsonl")).unwrap();
    let recs = extraction_audit::corpus::load_records(&f.path("records.jsonl")).unwrap();
    let direct = oracle_exact_masses(
        &m,
        &recs[0].prefix,
        &recs[0].suffix,
        &DecodingPolicy::top_k(3),
        extraction_audit::distance::DistanceKind::Levenshtein,
        3,
        OracleGuard::default(),
    )
    .unwrap();
    assert!((direct[3] - results[0].nearverbatim_mass[3]).abs() < 1e-9);
}

#[test]
fn resume_from_torn_checkpoint() {
    let f = Fixture::new();
    let args = with(f.base_args("run", "r"), &["--beam-width", "9", "--epsilon", "2"]);
    assert_eq!(run_cli(args.clone()), EXIT_OK);
    let full = read(&f.path("r/results.jsonl"));
    let ckpt = f.path("r/checkpoint.jsonl");
    let text = read(&ckpt);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    let torn = format!("{}\n{}", lines[..4].join("\n"), &lines[4][..lines[4].len() / 2]);
    std::fs::write(&ckpt, torn).unwrap();
    std::fs::remove_file(f.path("r/results.jsonl")).unwrap();
    assert_eq!(run_cli(args.clone()), EXIT_OK);
    assert_eq!(read(&f.path("r/results.jsonl")), full);
    assert_eq!(read(&ckpt).lines().count(), 11);

    // a checkpoint from another configuration is refused unless --fresh
    let changed = with(f.base_args("run", "r"), &["--beam-width", "4", "--epsilon", "2"]);
    assert_eq!(run_cli(changed.clone()), EXIT_CONFIG);
    assert_eq!(run_cli(with(changed, &["--fresh"])), EXIT_OK);
}

#[test]
fn text_mode_emits_heatmap() {
    let f = Fixture::new();
    let words: Vec<String> = (0..200).map(|i| format!("w{}", i % 7)).collect();
    std::fs::write(f.path("book.txt"), words.join(" ")).unwrap();
    let (model, book, out) = (f.path("model.json"), f.path("book.txt"), f.path("t"));
    let args = vec![
        "extraction-audit", "run", "--provider", model.to_str().unwrap(), "--text", book.to_str().unwrap(),
        "--prefix-len", "3", "--suffix-len", "5", "--top-k", "3", "--beam-width", "9", "--epsilon", "1",
        "--stride", "40", "--out", out.to_str().unwrap(),
    ];
    assert_eq!(run_cli(args), EXIT_OK);
    let heat = read(&f.path("t/heatmap.csv"));
    let text_len = words.join(" ").len();
    assert_eq!(heat.lines().count(), text_len + 2);
    let results = load_results(&f.path("t/results.jsonl")).unwrap();
    assert!(results.iter().all(|r| r.char_span.is_some()));
}

#[test]
fn chunk_command_writes_records() {
    let f = Fixture::new();
    std::fs::write(f.path("t.txt"), "a b c d e f g h i j k l m n o p q r s t").unwrap();
    let (text, out) = (f.path("t.txt"), f.path("chunks/r.jsonl"));
    let args = [
        "extraction-audit", "chunk", "--text", text.to_str().unwrap(), "--vocab-size", "6", "--prefix-len", "3",
        "--suffix-len", "5", "--stride", "4", "--out", out.to_str().unwrap(),
    ];
    assert_eq!(run_cli(args), EXIT_OK);
    let recs = extraction_audit::corpus::load_records(&f.path("chunks/r.jsonl")).unwrap();
    assert!(!recs.is_empty());
    assert!(recs.iter().all(|r| r.prefix.len() == 3 && r.suffix.len() == 5 && r.source == "t.txt"));
}

#[test]
fn mc_is_seeded_and_bounded() {
    let f = Fixture::new();
    let args = |out: &str| with(f.base_args("mc", out), &["--samples", "500", "--epsilon", "1", "--seed", "3"]);
    assert_eq!(run_cli(args("m1")), EXIT_OK);
    assert_eq!(run_cli(with(args("m2"), &["--workers", "2"])), EXIT_OK);
    assert_eq!(read(&f.path("m1/mc.jsonl")), read(&f.path("m2/mc.jsonl")));
    for line in read(&f.path("m1/mc.jsonl")).lines().skip(1) {
        let v: Value = serde_json::from_str(line).unwrap();
        let (lo, p, hi) = (v["ci_low"].as_f64().unwrap(), v["p_hat"].as_f64().unwrap(), v["ci_high"].as_f64().unwrap());
        assert!(lo <= p && p <= hi);
        assert_eq!(v["samples"], 500);
    }
    assert_eq!(run_cli(with(args("m3"), &["--replicates", "3"])), EXIT_OK);
    let first: Value = serde_json::from_str(read(&f.path("m3/mc.jsonl")).lines().nth(1).unwrap()).unwrap();
    assert_eq!(first["per_replicate"].as_array().unwrap().len(), 3);
    assert_eq!(first["samples"], 1500);
}

#[test]
fn sweep_over_beam_widths() {
    let f = Fixture::new();
    let args = with(f.base_args("sweep", "s"), &["--beam-widths", "2,4,9", "--epsilon", "2"]);
    assert_eq!(run_cli(args), EXIT_OK);
    let csv = read(&f.path("s/sweep.csv"));
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 3);
    let v: Value = serde_json::from_str(&read(&f.path("s/sweep.json"))).unwrap();
    let masses: Vec<f64> = v["summary"]["rows"].as_array().unwrap().iter().map(|r| r["mean_upper_bound"].as_f64().unwrap()).collect();
    assert_eq!(masses.len(), 3);
    assert!(f.path("s/sweep_timing.csv").exists());

    let args = with(f.base_args("sweep", "se"), &["--epsilons", "0,1,2"]);
    assert_eq!(run_cli(args), EXIT_OK);
    let v: Value = serde_json::from_str(&read(&f.path("se/sweep.json"))).unwrap();
    let means: Vec<f64> = v["summary"]["rows"].as_array().unwrap().iter().map(|r| r["mean_mass"].as_f64().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1] + 1e-12));
}

#[test]
fn config_errors_exit_2() {
    let f = Fixture::new();
    assert_eq!(run_cli(with(f.base_args("run", "x"), &["--epsilon", "6"])), EXIT_CONFIG);
    assert_eq!(run_cli(set(f.base_args("run", "x"), "--top-k", "7")), EXIT_CONFIG);
    assert_eq!(run_cli(with(f.base_args("run", "x"), &["--tau-min", "0"])), EXIT_CONFIG);
    assert_eq!(run_cli(set(f.base_args("run", "x"), "--suffix-len", "4")), EXIT_CONFIG);
    assert_eq!(run_cli(["extraction-audit", "run"]), EXIT_CONFIG);
    assert_eq!(run_cli(["extraction-audit", "samplesize", "--p", "2", "--delta", "0.1"]), EXIT_CONFIG);
    let missing = ["extraction-audit", "run", "--provider", "/nonexistent.json", "--records", "r", "--out", "o"];
    assert_eq!(run_cli(missing), EXIT_CONFIG);
}

#[test]
fn oracle_guard_exits_4() {
    let f = Fixture::new();
    let args = set(f.base_args("oracle", "g"), "--top-k", "6");
    assert_eq!(run_cli(with(args, &["--max-leaves", "1000"])), EXIT_GUARD);
    assert!(!f.path("g").exists());
}

#[test]
fn samplesize_binary_output() {
    let out = Command::new(env!("CARGO_BIN_EXE_extraction-audit"))
        .args(["samplesize", "--p", "1e-3", "--delta", "0.05"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["samples"], 2995);
    let out = Command::new(env!("CARGO_BIN_EXE_extraction-audit"))
        .args(["samplesize", "--p", "1e-3", "--eta", "0.1"])
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["samples"], 99_900);
}

/// Serves `model` over the wire protocol; requests fail while `broken` is set
/// and more than `budget` logits calls have been answered.
fn serve(model: NGramModel, broken: Arc<AtomicBool>, budget: usize) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let addr = server.server_addr().to_ip().unwrap();
    let calls = AtomicUsize::new(0);
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let (code, out) = if req.url() == "/v1/meta" {
                let v = model.vocabulary();
                (200, json!({"protocol": 1, "vocab_size": v.size, "eos_id": v.eos, "model_name": "ngram"}))
            } else if broken.load(Ordering::SeqCst) && calls.fetch_add(1, Ordering::SeqCst) >= budget {
                (503, json!({"error": "unavailable"}))
            } else {
                let body: Value = serde_json::from_str(&body).unwrap();
                let hist: Vec<Vec<TokenId>> = serde_json::from_value(body["histories"].clone()).unwrap();
                let rows: Vec<Vec<f32>> = hist
                    .iter()
                    .map(|h| model.next_logits(h).unwrap().values().iter().map(|&x| x as f32).collect())
                    .collect();
                (200, json!({ "logits": rows }))
            };
            let _ = req.respond(tiny_http::Response::from_string(out.to_string()).with_status_code(code));
        }
    });
    format!("http://{addr}")
}

fn remote_args(f: &Fixture, out: &str) -> Vec<String> {
    with(set(f.base_args("run", out), "--provider", "remote"), &["--beam-width", "9", "--epsilon", "1", "--workers", "1"])
}

#[test]
fn provider_failure_flushes_and_resumes() {
    let f = Fixture::new();
    let broken = Arc::new(AtomicBool::new(true));
    let url = serve(f.model(), broken.clone(), 40);
    let args = with(remote_args(&f, "p"), &["--endpoint", &url]);
    assert_eq!(run_cli(args.clone()), EXIT_PROVIDER);
    let partial = read(&f.path("p/checkpoint.jsonl")).lines().count() - 1;
    assert!(partial > 0 && partial < 10, "partial = {partial}");
    assert!(!f.path("p/results.jsonl").exists());

    broken.store(false, Ordering::SeqCst);
    assert_eq!(run_cli(args.clone()), EXIT_OK);
    let clean = with(remote_args(&f, "clean"), &["--endpoint", &url]);
    assert_eq!(run_cli(clean), EXIT_OK);
    assert_eq!(read(&f.path("p/results.jsonl")), read(&f.path("clean/results.jsonl")));
}

#[test]
fn endpoint_from_environment_and_unreachable_server() {
    let f = Fixture::new();
    let url = serve(f.model(), Arc::new(AtomicBool::new(false)), 0);
    let args: Vec<String> = remote_args(&f, "env").into_iter().skip(1).collect();
    let out = Command::new(env!("CARGO_BIN_EXE_extraction-audit"))
        .args(&args)
        .env("EXTRACTION_AUDIT_ENDPOINT", &url)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load_results(&f.path("env/results.jsonl")).unwrap().len(), 10);

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = Command::new(env!("CARGO_BIN_EXE_extraction-audit"))
        .args(&args)
        .env("EXTRACTION_AUDIT_ENDPOINT", format!("http://127.0.0.1:{port}"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_PROVIDER));
    let out = Command::new(env!("CARGO_BIN_EXE_extraction-audit"))
        .args(&args)
        .env_remove("EXTRACTION_AUDIT_ENDPOINT")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
}
