use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn htsid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htsid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = htsid(args);
    assert!(
        out.status.success(),
        "htsid {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_tone(path: &Path, freq: f64, secs: f64) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    let n = (secs * 16000.0) as usize;
    for i in 0..n {
        let t = i as f64 / 16000.0;
        let v = 0.3 * (2.0 * std::f64::consts::PI * freq * t).sin()
            + 0.1 * (2.0 * std::f64::consts::PI * 2.7 * freq * t).sin();
        w.write_sample((v * 32767.0) as i16).unwrap();
    }
    w.finalize().unwrap();
}

fn files_under(root: &Path, ext: &str) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == ext) {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn manifest(cache: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(cache.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn extract_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    let cache = dir.path().join("cache");
    let out = ok(&["extract", "--corpus", s(&corpus), "--cache", s(&cache)]);
    assert!(
        out.starts_with("0 written, 0 up to date, 0 failed"),
        "{out}"
    );
    assert_eq!(manifest(&cache)["speakers"], serde_json::json!({}));
}

#[test]
fn extract_counts_caches_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let cache = dir.path().join("cache");
    for (spk, base) in [("alice", 300.0), ("bob", 700.0)] {
        for (u, k) in [("a", 1.0), ("b", 1.3)] {
            write_tone(&corpus.join(spk).join(format!("{u}.wav")), base * k, 0.5);
        }
    }
    let args = ["extract", "--corpus", s(&corpus), "--cache", s(&cache)];
    assert!(ok(&args).starts_with("4 written, 0 up to date, 0 failed"));
    assert_eq!(files_under(&cache, "htfx").len(), 4);
    let m = manifest(&cache);
    assert_eq!(m["speakers"].as_object().unwrap().len(), 2);

    let before: Vec<_> = files_under(&cache, "htfx")
        .iter()
        .map(|p| std::fs::metadata(p).unwrap().modified().unwrap())
        .collect();
    assert!(ok(&args).starts_with("0 written, 4 up to date"));
    // Same bytes under a new mtime are still up to date.
    let src = corpus.join("alice/a.wav");
    let bytes = std::fs::read(&src).unwrap();
    std::thread::sleep(Duration::from_millis(20));
    std::fs::write(&src, &bytes).unwrap();
    assert!(ok(&args).starts_with("0 written, 4 up to date"));
    let after: Vec<_> = files_under(&cache, "htfx")
        .iter()
        .map(|p| std::fs::metadata(p).unwrap().modified().unwrap())
        .collect();
    assert_eq!(before, after);

    write_tone(&src, 450.0, 0.5);
    assert!(ok(&args).starts_with("1 written, 3 up to date"));
}

#[test]
fn extract_reports_bad_files_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let cache = dir.path().join("cache");
    write_tone(&corpus.join("alice/good.wav"), 300.0, 0.5);
    std::fs::write(corpus.join("alice/bad.wav"), b"not a wav file").unwrap();
    let out = htsid(&["extract", "--corpus", s(&corpus), "--cache", s(&cache)]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.starts_with("1 written, 0 up to date, 1 failed"),
        "{stdout}"
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.wav"));
    assert_eq!(manifest(&cache)["failures"].as_object().unwrap().len(), 1);
}

fn small_synthetic(dir: &Path, speakers: usize) -> PathBuf {
    let cfg = dir.join("cfg.toml");
    std::fs::write(
        &cfg,
        format!(
            "[synthetic]\nn_speakers = {speakers}\nutts_per_speaker = 3\nframes_per_utt = 120\n\
             dim = 4\nseparation = 5.0\n[ht]\nh = 16\n[gmm]\nk = 4\n"
        ),
    )
    .unwrap();
    let corpus = dir.join("synth");
    ok(&[
        "--config",
        s(&cfg),
        "--seed",
        "3",
        "synth-corpus",
        "--out",
        s(&corpus),
    ]);
    cfg
}

#[test]
fn train_is_deterministic_and_separates_backends() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synthetic(dir.path(), 3);
    let feats = dir.path().join("synth");
    let models = dir.path().join("models");
    let args = [
        "--config",
        s(&cfg),
        "train",
        "--backend",
        "ht",
        "--backend",
        "gmm",
        "--features",
        s(&feats),
        "--models",
        s(&models),
    ];
    ok(&args);
    let first: Vec<(PathBuf, Vec<u8>)> = files_under(&models, "htmd")
        .into_iter()
        .chain(files_under(&models, "gmmd"))
        .map(|p| (p.clone(), std::fs::read(p).unwrap()))
        .collect();
    assert_eq!(first.len(), 6);
    for kind in ["ht", "gmm"] {
        let reg: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(models.join(kind).join("registry.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(reg.as_array().unwrap().len(), 3);
        assert_eq!(reg[0]["backend"], kind);
    }
    ok(&args);
    for (p, bytes) in &first {
        assert_eq!(&std::fs::read(p).unwrap(), bytes, "{}", p.display());
    }
}

#[test]
fn single_speaker_registry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synthetic(dir.path(), 1);
    let models = dir.path().join("models");
    ok(&[
        "--config",
        s(&cfg),
        "train",
        "--features",
        s(&dir.path().join("synth")),
        "--models",
        s(&models),
    ]);
    assert_eq!(files_under(&models, "htmd").len(), 1);
    let reg = models.join("ht/registry.json");
    let out = ok(&[
        "--config",
        s(&cfg),
        "identify",
        "--registry",
        s(&reg),
        s(&dir.path().join("synth/spk000/utt000.htfx")),
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["decision"], "spk000");
    assert_eq!(v["ranked"].as_array().unwrap().len(), 1);
}

#[test]
fn identify_training_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synthetic(dir.path(), 4);
    let synth = dir.path().join("synth");
    let models = dir.path().join("models");
    ok(&[
        "--config",
        s(&cfg),
        "train",
        "--backend",
        "ht",
        "--backend",
        "gmm",
        "--features",
        s(&synth),
        "--models",
        s(&models),
    ]);
    for kind in ["ht", "gmm"] {
        let reg = models.join(kind).join("registry.json");
        for spk in ["spk000", "spk002", "spk003"] {
            let input = synth.join(spk).join("utt001.htfx");
            let out = ok(&[
                "--config",
                s(&cfg),
                "identify",
                "--registry",
                s(&reg),
                "--frames",
                "50",
                "--start",
                "10",
                s(&input),
            ]);
            let v: serde_json::Value = serde_json::from_str(&out).unwrap();
            assert_eq!(v["decision"], spk, "{kind}");
            assert_eq!(v["frames"], 50);
            let scores: Vec<f64> = v["ranked"]
                .as_array()
                .unwrap()
                .iter()
                .map(|r| r["log_likelihood"].as_f64().unwrap())
                .collect();
            assert_eq!(scores.len(), 4);
            assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
        }
    }
}

#[test]
fn identify_rejects_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synthetic(dir.path(), 2);
    let models = dir.path().join("models");
    ok(&[
        "--config",
        s(&cfg),
        "train",
        "--features",
        s(&dir.path().join("synth")),
        "--models",
        s(&models),
    ]);
    let wrong = dir.path().join("wrong.htfx");
    let mut bytes = b"HTFX".to_vec();
    for v in [1u32, 10, 3] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..30 {
        bytes.extend_from_slice(&(i as f64).to_le_bytes());
    }
    std::fs::write(&wrong, bytes).unwrap();
    let out = htsid(&[
        "--config",
        s(&cfg),
        "identify",
        "--registry",
        s(&models.join("ht/registry.json")),
        s(&wrong),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn inspect_model_reports_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synthetic(dir.path(), 2);
    let models = dir.path().join("models");
    ok(&[
        "--config",
        s(&cfg),
        "train",
        "--backend",
        "gmm",
        "--backend",
        "ht",
        "--features",
        s(&dir.path().join("synth")),
        "--models",
        s(&models),
    ]);
    let v: serde_json::Value =
        serde_json::from_str(&ok(&["inspect-model", s(&models.join("ht/spk001.htmd"))])).unwrap();
    assert_eq!(
        (v["kind"].as_str(), v["h"].as_u64(), v["dim"].as_u64()),
        (Some("ht"), Some(16), Some(12))
    );
    let v: serde_json::Value =
        serde_json::from_str(&ok(&["inspect-model", s(&models.join("gmm/spk000.gmmd"))])).unwrap();
    assert_eq!(
        (v["kind"].as_str(), v["k"].as_u64()),
        (Some("gmm"), Some(4))
    );
    assert!(!htsid(&["inspect-model", s(&dir.path().join("cfg.toml"))])
        .status
        .success());
}

const SMOKE: &str = "\
[synthetic]
n_speakers = 5
utts_per_speaker = 10
frames_per_utt = 200
[experiment]
n_speakers = 5
rounds = 1
h_values = [20]
t_values = [50]
";

#[test]
fn evaluate_smoke_is_fast_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("smoke.toml");
    std::fs::write(&cfg, SMOKE).unwrap();
    let mut csvs = Vec::new();
    for run in 0..2 {
        let report = dir.path().join(format!("r{run}.json"));
        let start = Instant::now();
        let threads = if run == 0 { "1" } else { "4" };
        ok(&[
            "--config",
            s(&cfg),
            "--seed",
            "1",
            "--threads",
            threads,
            "evaluate",
            "--synthetic",
            "--report",
            s(&report),
        ]);
        assert!(
            start.elapsed() < Duration::from_secs(60),
            "{:?}",
            start.elapsed()
        );
        let csv = std::fs::read_to_string(report.with_extension("csv")).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "backend,feature_mode,H,T,round,accuracy");
        // 2 modes x (1 H + 2 K) at one T and one round.
        assert_eq!(rows.len(), 1 + 6);
        for r in &rows[1..] {
            let acc: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
            assert!((0.0..=1.0).contains(&acc), "{r}");
        }
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(json["records"].as_array().unwrap().len(), 6);
        csvs.push(csv);
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn evaluate_config_errors_fail_fast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "[experiment]\nn_speakers = 50\n[synthetic]\nn_speakers = 3\n",
    )
    .unwrap();
    let report = dir.path().join("r.json");
    let out = htsid(&[
        "--config",
        s(&cfg),
        "evaluate",
        "--synthetic",
        "--report",
        s(&report),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("speakers requested"));
    assert!(!report.exists());

    std::fs::write(&cfg, "[ht]\ntheta_min = 3.0\n").unwrap();
    assert!(!htsid(&["--config", s(&cfg), "evaluate", "--synthetic"])
        .status
        .success());
}
