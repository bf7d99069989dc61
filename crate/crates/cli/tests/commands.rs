use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use partsketch::partdata::{
    serialize_record, validate_annotation, AnnotatedSketch, PartDecomposition, PartLabel, PathAssignment,
};
use partsketch::raster::Bitmap;
use partsketch::stroke::{export_svg, CanvasConfig, CubicStroke, Sketch};

fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_partsketch")).args(args).env_remove("VLM_ENDPOINT").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn record(id: &str, k: usize, canvas: CanvasConfig) -> AnnotatedSketch {
    let mut paths = Vec::new();
    let mut labels = Vec::new();
    for p in 0..k {
        for s in 0..2 {
            let y = 20 + (p * 2 + s) as i32 * 20;
            paths.push(CubicStroke::from_coords([20, y, 40, y - 10, 60, y + 10, 80 + s as i32, y]));
            labels.push(PartLabel::from_index(p));
        }
    }
    AnnotatedSketch {
        id: id.into(),
        sketch: Sketch::new(paths, canvas),
        caption: "a tiny robot".into(),
        parts: PartDecomposition::from_descriptions((0..k).map(|p| format!("piece {}", p + 1))),
        assignment: PathAssignment::from_labels(labels),
    }
}

fn write_records(path: &Path, records: &[AnnotatedSketch]) {
    let mut out = Vec::new();
    for r in records {
        out.extend(serialize_record(r));
        out.push(b'\n');
    }
    fs::write(path, out).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_exits_zero_everywhere() {
    for sub in ["annotate", "augment", "grpo-toy", "render", "diagviz", "random", "serve"] {
        let o = run(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("--"));
    }
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn random_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.svg"), dir.path().join("b.svg"), dir.path().join("c.svg"));
    assert_eq!(code(&run(&["random", "--seed", "7", "--output", p(&a)])), 0);
    assert_eq!(code(&run(&["random", "--seed", "7", "--output", p(&b)])), 0);
    assert_eq!(code(&run(&["random", "--seed", "8", "--output", p(&c)])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let png = dir.path().join("a.png");
    assert_eq!(code(&run(&["random", "--seed", "7", "--output", p(&png)])), 0);
    assert_eq!(code(&run(&["random", "--output", p(&dir.path().join("x.gif"))])), 2);
}

#[test]
fn render_and_diagviz_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let rec = record("r", 3, CanvasConfig::with_size(200, 150));
    let input = dir.path().join("r.json");
    fs::write(&input, serialize_record(&rec)).unwrap();

    let out = dir.path().join("r.png");
    assert_eq!(code(&run(&["render", "--input", p(&input), "--output", p(&out)])), 0);
    let bmp = Bitmap::from_png(&fs::read(&out).unwrap()).unwrap();
    assert_eq!((bmp.width(), bmp.height()), (200, 150));

    let out = dir.path().join("c.png");
    assert_eq!(code(&run(&["render", "--input", p(&input), "--output", p(&out), "--colored"])), 0);

    let diag = dir.path().join("d.png");
    assert_eq!(code(&run(&["diagviz", "--input", p(&input), "--output", p(&diag)])), 0);
    let bmp = Bitmap::from_png(&fs::read(&diag).unwrap()).unwrap();
    assert_eq!((bmp.width(), bmp.height()), (400, 150));

    let svg = dir.path().join("r.svg");
    assert_eq!(code(&run(&["render", "--input", p(&input), "--output", p(&svg)])), 0);
    assert_eq!(fs::read_to_string(&svg).unwrap(), export_svg(&rec.sketch));

    let o = run(&["render", "--input", p(&dir.path().join("missing.json")), "--output", p(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn augment_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("recs.jsonl");
    write_records(&input, &[record("two", 2, CanvasConfig::default()), record("five", 5, CanvasConfig::default())]);
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let o = run(&["augment", "--input", p(&input), "--output", p(&a), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("2 records, 104 examples"));
    let text = fs::read_to_string(&a).unwrap();
    let per_record = |id: &str| text.lines().filter(|l| l.contains(&format!("\"record_id\":\"{id}\""))).count();
    assert_eq!(per_record("two"), 4);
    assert_eq!(per_record("five"), 100);

    assert_eq!(code(&run(&["augment", "--input", p(&input), "--output", p(&b), "--seed", "3"])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": \"x\"}\n").unwrap();
    assert_eq!(code(&run(&["augment", "--input", p(&bad), "--output", p(&b)])), 1);
}

const SCRIPT: &str = r#"{
  "step1": ["[\"upper half\", \"lower half\"]"],
  "step2": [{"issues": [], "summary": "fine", "should_revise": false}],
  "step4": ["@auto"],
  "step5": [{"issues": [], "summary": "fine", "should_revise": false}],
  "step7": ["A small doodle with two halves."]
}"#;

fn svg_dir(dir: &Path, malformed: bool) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..3 {
        let s = record("x", 2, CanvasConfig::with_size(128, 128));
        fs::write(dir.join(format!("sk{i}.svg")), export_svg(&s.sketch)).unwrap();
    }
    if malformed {
        fs::write(dir.join("sk1.svg"), "<svg><path d=\"M 1 2 L 3 4\"/></svg>").unwrap();
    }
}

#[test]
fn annotate_with_scripted_client() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    fs::write(&script, SCRIPT).unwrap();
    let client = format!("mock:{}", p(&script));

    let (input, out) = (dir.path().join("in"), dir.path().join("out"));
    svg_dir(&input, false);
    let o = run(&["annotate", "--input", p(&input), "--output", p(&out), "--client", &client]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for i in 0..3 {
        let bytes = fs::read(out.join(format!("sk{i}.record.json"))).unwrap();
        let rec = partsketch::partdata::deserialize_record(&bytes).unwrap();
        assert!(validate_annotation(&rec).is_empty());
        assert_eq!(rec.parts.len(), 2);
        let trace: serde_json::Value =
            serde_json::from_slice(&fs::read(out.join(format!("sk{i}.trace.json"))).unwrap()).unwrap();
        assert_eq!(trace.as_array().unwrap().len(), 5);
    }
    assert_eq!(fs::read_to_string(out.join("records.jsonl")).unwrap().lines().count(), 3);

    // replaying the recorded traces reproduces the records
    let again = dir.path().join("again");
    let o = run(&["annotate", "--input", p(&input), "--output", p(&again), "--client", &format!("replay:{}", p(&out))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(out.join("records.jsonl")).unwrap(), fs::read(again.join("records.jsonl")).unwrap());

    let (input, out) = (dir.path().join("in2"), dir.path().join("out2"));
    svg_dir(&input, true);
    let o = run(&["annotate", "--input", p(&input), "--output", p(&out), "--client", &client]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("sk1.svg"), "{}", stderr(&o));
    assert!(out.join("sk0.record.json").exists());
    assert!(!out.join("sk1.record.json").exists());
    assert!(out.join("sk2.record.json").exists());

    let o = run(&["annotate", "--input", p(&input), "--output", p(&out), "--client", "carrier-pigeon"]);
    assert_eq!(code(&o), 2);
    let o = run(&["annotate", "--input", p(&input), "--output", p(&out), "--client", "http"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn grpo_toy_runs_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let (log, ckpt) = (dir.path().join("log.jsonl"), dir.path().join("ckpt.json"));
    let args = |steps: &str, variant: &str| {
        vec![
            "grpo-toy".to_string(),
            "--variant".into(),
            variant.into(),
            "--steps".into(),
            steps.into(),
            "--log".into(),
            p(&log).into(),
            "--checkpoint".into(),
            p(&ckpt).into(),
            "--eval-groups".into(),
            "2".into(),
        ]
    };

    let a = args("0", "process");
    let o = run(&a);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines: Vec<serde_json::Value> =
        fs::read_to_string(&log).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["step"], 0);
    assert_eq!(lines[0]["kind"], "eval");
    for key in ["step", "variant", "mean_reward", "objective", "clip_fraction", "mean_kl", "seed"] {
        assert!(lines[0].get(key).is_some(), "{key}");
    }
    let ck: serde_json::Value = serde_json::from_slice(&fs::read(&ckpt).unwrap()).unwrap();
    assert!(ck["theta"].as_array().unwrap().iter().all(|x| x == 0.0));

    let a = args("3", "outcome");
    let o = run(&a);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let n = fs::read_to_string(&log).unwrap().lines().count();
    assert_eq!(n, 5, "eval, three train steps, eval");

    let a = args("1", "telepathic");
    let o = run(&a);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"));

    let mut a = args("1", "process");
    a.extend(["--group-size".into(), "1".into()]);
    let o = run(&a);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("group_size"));
}
