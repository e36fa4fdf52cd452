use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use windrom_service::{decode_f64, Engine, EngineSources, Field, ModelKind, UqPayload};

const CONFIG: &str = r#"
[mesh.layout]
refine_level = 0
enclosed = true

[transport]
kappa = 2.0
t_end = 20.0
dt = 1.0
source = { center = [333.0, 250.0], radius = 60.0, amplitude = 1.0 }

[snapshots]
domain = { w_i = [2.0, 6.0], w_d = [80.0, 115.0] }
plan = { w_i = 3, w_d = 3 }

[podi]
size = 6

[podg]
velocity_size = 4
nonlinear = { kind = "deim", size = 8 }

[uq]
times = [10.0, 20.0]
spec = { samples = 10, seed = 3, w_i = { mean = 4.0, half_width = 0.5 }, w_d = { mean = 97.0, half_width = 10.0 } }

[study]
domain = { w_i = [0.5, 4.0] }
train = { w_i = 8 }
test = { w_i = 3 }
sizes = [1, 2, 4]
deim_size = 6
repetitions = 0
"#;

fn windrom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_windrom")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = windrom(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn config(&self) -> PathBuf {
        self.root.join("pipeline.toml")
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Snapshots and artifacts shared by the tests, built once through the binary.
fn trained() -> &'static Workspace {
    static W: OnceLock<Workspace> = OnceLock::new();
    W.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("pipeline.toml"), CONFIG).unwrap();
        let w = Workspace { _dir: dir, root };
        let cfg = w.config();
        ok(&["snapshot", "--config", s(&cfg), "--out", s(&w.path("snap"))]);
        ok(&["train", "--config", s(&cfg), "--method", "both", "--snapshots", s(&w.path("snap")), "--out", s(&w.path("run"))]);
        w
    })
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn sources(w: &Workspace) -> EngineSources {
    let run = w.path("run");
    let transport = windrom_service::TransportSettings { t_end: 20.0, ..Default::default() };
    EngineSources { mesh: run.join("mesh.txt"), podi: run.join("podi.bin"), podg: Some(run.join("podg.bin")), transport }
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(windrom(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(windrom(&["snapshot", "--bogus", "--out", "x"]).status.code(), Some(2));
    assert_eq!(windrom(&["--jobs", "0", "mesh-info"]).status.code(), Some(2));
    assert_eq!(windrom(&["evaluate", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn configuration_errors_exit_with_three_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[uq.spec]\nsamples = 0\n").unwrap();
    let out = windrom(&["uq", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`uq.spec`"));

    std::fs::write(&cfg, "[transport]\nkappa = \"two\"\n").unwrap();
    let out = windrom(&["mesh-info", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`transport.kappa`"));

    let out = windrom(&["mesh-info", "--set", "physics.nu=-3"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`physics.nu`"));

    // artifacts that do not exist are a configuration error
    let out = windrom(&["evaluate", "--artifacts", s(&dir.path().join("none")), "--w-i", "4", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("artifacts.mesh"));
}

#[test]
fn mesh_info_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["mesh-info", "--set", "mesh.layout.refine_level=0", "--out", s(dir.path())]);
    let text = String::from_utf8(out.stdout).unwrap();
    let field = |k: &str| text.lines().find_map(|l| l.strip_prefix(&format!("{k}\t"))).unwrap().to_string();
    assert_eq!(field("holes"), "6");
    assert!(field("area").parse::<f64>().unwrap() > 0.0);
    let m = manifest(dir.path());
    assert_eq!(m["command"], "mesh-info");
    let mesh_file = dir.path().join("mesh.txt");
    let again = ok(&["mesh-info", s(&mesh_file)]);
    assert_eq!(String::from_utf8(again.stdout).unwrap().lines().last().unwrap(), format!("hash\t{}", m["inputs"]["mesh"].as_str().unwrap()));
}

#[test]
fn shipped_config_is_valid() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/urban.toml");
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["mesh-info", "--config", s(&cfg), "--set", "mesh.layout.refine_level=0", "--out", s(dir.path())]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "enclosed\ttrue"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("edges_outflow\t0\tlength 0.000000")), "{text}");
    let m = manifest(dir.path());
    assert_eq!(m["config"]["snapshots"]["plan"]["w_d"], 36);
    assert_eq!(m["config"]["uq"]["spec"]["samples"], 500);
}

#[test]
fn snapshot_writes_one_file_per_training_point() {
    let w = trained();
    let files = std::fs::read_dir(w.path("snap/snapshots")).unwrap().count();
    assert_eq!(files, 9);
    let m = manifest(&w.path("snap"));
    assert_eq!(m["result"]["count"], 9);
    assert_eq!(m["outputs"].as_object().unwrap().len(), 10);
    assert_eq!(m["config"]["snapshots"]["plan"]["w_d"], 3);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn training_is_idempotent() {
    let w = trained();
    let again = w.path("run-again");
    ok(&["train", "--config", s(&w.config()), "--method", "both", "--snapshots", s(&w.path("snap")), "--out", s(&again)]);
    for f in ["podi.bin", "podg.bin", "mesh.txt"] {
        assert_eq!(std::fs::read(w.path("run").join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
    let (a, b) = (manifest(&w.path("run")), manifest(&again));
    assert_eq!(a["outputs"], b["outputs"]);
    assert_eq!(a["config_hash"], b["config_hash"]);
    assert_eq!(a["inputs"]["snapshots"], b["inputs"]["snapshots"]);
    // training straight from the configuration gives the same snapshots
    let direct = w.path("run-direct");
    ok(&["train", "--config", s(&w.config()), "--out", s(&direct)]);
    assert_eq!(std::fs::read(w.path("run/podi.bin")).unwrap(), std::fs::read(direct.join("podi.bin")).unwrap());
}

#[test]
fn evaluate_matches_the_shared_engine() {
    let w = trained();
    let out = w.path("eval");
    let art = w.path("run");
    ok(&["evaluate", "--config", s(&w.config()), "--artifacts", s(&art), "--w-i", "4", "--w-d", "97", "--t", "10,20", "--out", s(&out)]);
    let bytes = std::fs::read(out.join("evaluate.json")).unwrap();
    let engine = Engine::load(&sources(w)).unwrap();
    let direct = engine.evaluate(&windrom::ParameterPoint::wind(4.0, 97.0), Field::Concentration, &[10.0, 20.0], ModelKind::Podi).unwrap();
    assert_eq!(bytes, serde_json::to_vec(&direct).unwrap());

    let csv = std::fs::read_to_string(out.join("concentration_t20.csv")).unwrap();
    let c = decode_f64(&direct.concentration.unwrap()[1].values).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[2], c[0]);
    assert_eq!(csv.lines().count(), 1 + c.len());
    let m = manifest(&out);
    assert_eq!(m["inputs"]["podi"].as_str(), engine.artifact_hash(ModelKind::Podi));

    let wind = w.path("eval-wind");
    ok(&["evaluate", "--config", s(&w.config()), "--artifacts", s(&art), "--w-i", "9", "--w-d", "97", "--field", "wind", "--model", "podg", "--out", s(&wind)]);
    let m = manifest(&wind);
    assert_eq!(m["result"]["extrapolated"], true);
    assert!(std::fs::read_to_string(wind.join("wind.csv")).unwrap().starts_with("x,y,ux,uy\n"));
}

#[test]
fn uq_writes_envelopes_histogram_and_manifest() {
    let w = trained();
    let out = w.path("uq");
    ok(&["--jobs", "1", "uq", "--config", s(&w.config()), "--artifacts", s(&w.path("run")), "--out", s(&out)]);
    let m = manifest(&out);
    assert_eq!(m["seed"], 3);
    assert_eq!(m["jobs"], 1);
    let payload: UqPayload = serde_json::from_value(m["result"].clone()).unwrap();
    assert_eq!(payload.successful + payload.failures, 10);
    for t in ["t10", "t20"] {
        let read = |k: &str| -> Vec<f64> {
            let text = std::fs::read_to_string(out.join(format!("{k}_{t}.csv"))).unwrap();
            text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect()
        };
        let (lo, mean, hi) = (read("min"), read("mean"), read("max"));
        assert!(lo.iter().zip(&mean).zip(&hi).all(|((a, b), c)| a <= b && b <= c));
    }
    let hist = std::fs::read_to_string(out.join("histogram.tsv")).unwrap();
    let counts: u64 = hist.lines().skip(2).map(|l| l.rsplit('\t').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(counts as usize, payload.successful);
    assert_eq!(std::fs::read_to_string(out.join("samples.tsv")).unwrap().lines().count(), 11);

    // the seed alone determines the result; a different seed changes it
    let again = w.path("uq-again");
    ok(&["uq", "--config", s(&w.config()), "--artifacts", s(&w.path("run")), "--out", s(&again)]);
    assert_eq!(manifest(&again)["result"], m["result"]);
    let other = w.path("uq-other");
    ok(&["uq", "--config", s(&w.config()), "--artifacts", s(&w.path("run")), "--seed", "4", "--samples", "5", "--out", s(&other)]);
    assert_eq!(manifest(&other)["result"]["parameters"].as_array().unwrap().len(), 5);
    assert_ne!(manifest(&other)["result"]["parameters"], m["result"]["parameters"]);
}

#[test]
fn bench_compare_writes_a_report() {
    let w = trained();
    let out = w.path("bench");
    let cfg = w.path("bench.toml");
    std::fs::write(&cfg, CONFIG.replace("enclosed = true", "enclosed = false")).unwrap();
    let run = ok(&["bench", "compare", "--config", s(&cfg), "--out", s(&out)]);
    assert!(String::from_utf8(run.stdout).unwrap().starts_with("[summary]"));
    let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.starts_with("# study: comparison"));
    let m = manifest(&out);
    assert_eq!(m["command"], "bench compare");
    assert_eq!(m["result"]["failures"], 0);
    assert!(m["outputs"].as_object().unwrap().keys().any(|k| k.ends_with(".svg")));
}

#[test]
fn serve_answers_health_requests() {
    use std::io::{Read, Write};
    let w = trained();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_windrom"))
        .args(["serve", "--config", s(&w.config()), "--artifacts", s(&w.path("run")), "--port", &port.to_string()])
        .env("RUST_LOG", "warn")
        .spawn()
        .unwrap();
    let mut body = String::new();
    for _ in 0..100 {
        if let Ok(mut c) = std::net::TcpStream::connect(("127.0.0.1", port)) {
            c.write_all(b"GET /health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
            c.read_to_string(&mut body).unwrap();
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("\"status\":\"ready\""));
}
