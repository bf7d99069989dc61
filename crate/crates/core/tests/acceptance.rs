//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p partsketch-core --test acceptance`.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use partsketch::annopipe::{
    annotate_sketch, assignment_schema, critique_schema, parse_json, parts_schema, validate_schema, PipelineConfig,
    PipelineError, SchemaErrorKind, ScriptedClient, Stage, AUTO_RESPONSE,
};
use partsketch::grpo::{
    advantages, grpo_objective, kl_estimate, normalize_per_step, synthetic_task, token_term, train_loop,
    AdvantageTensor, GrpoConfig, LogProbModel, PolicySpec, RewardTensor, ToyStrokePolicy, Trajectory, TrajectoryGroup,
    TurnRecord, Variant,
};
use partsketch::partdata::{permute_augment, AnnotatedSketch, PartDecomposition, PartLabel, PathAssignment};
use partsketch::raster::{diagnostic_panel, rasterize, Bitmap, Palette};
use partsketch::rewards::{path_count_reward, similarity_reward, BaselineEmbedder};
use partsketch::session::{path_multiset, RandomBackend, ReplayBackend, Session};
use partsketch::stroke::{
    emit_strokes, parse_strokes, random_sketch, verify_response, FormatErrorKind, FormatVerdict, Rounding, SketchRng,
};
use partsketch::{CanvasConfig, CubicStroke, Sketch, StrokeSequence};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(start: Instant, limit: Duration) -> Result<f64, String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {:.1} s, limit {} s", t.as_secs_f64(), limit.as_secs()))?;
    Ok(t.as_secs_f64())
}

fn rand_coord(rng: &mut SketchRng, span: u64) -> i32 {
    (rng.below_inclusive(2 * span) as i64 - span as i64) as i32
}

fn stroke_roundtrip() -> Check {
    let start = Instant::now();
    let example = "M 212 146 C 6 89 303 88 322 14\nM 213 17 C 213 269 18 157 218 32\n";
    let seq = parse_strokes(example).map_err(|e| e.to_string())?;
    ensure(emit_strokes(&seq, Rounding::None) == example, || "example not byte-identical".into())?;

    let mut rng = SketchRng::new(0x51);
    for i in 0..10_000 {
        let n = 1 + rng.below_inclusive(12) as usize;
        let span = [600, 100_000, i32::MAX as u64][i % 3];
        let seq: StrokeSequence = (0..n)
            .map(|_| {
                let mut c = [0i32; 8];
                c.iter_mut().for_each(|v| *v = rand_coord(&mut rng, span));
                CubicStroke::from_coords(c)
            })
            .collect();
        let text = emit_strokes(&seq, Rounding::None);
        let back = parse_strokes(&text).map_err(|e| format!("case {i}: {e}"))?;
        ensure(back == seq && emit_strokes(&back, Rounding::None) == text, || format!("case {i} differs"))?;
    }
    let secs = within_time(start, Duration::from_secs(5))?;
    Ok(format!("example + 10000 random, 0 failures, {secs:.2} s"))
}

/// Lines as token lists, rendered with random runs of spaces.
fn valid_lines(rng: &mut SketchRng) -> Vec<Vec<String>> {
    let n = 1 + rng.below_inclusive(7) as usize;
    (0..n)
        .map(|_| {
            let mut toks = vec!["M".to_string()];
            for slot in 0..8 {
                if slot == 2 {
                    toks.push("C".into());
                }
                toks.push(rand_coord(rng, 1000).to_string());
            }
            toks
        })
        .collect()
}

fn join(lines: &[Vec<String>], rng: &mut SketchRng) -> String {
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        for (j, t) in line.iter().enumerate() {
            if j > 0 {
                out.push_str(&" ".repeat(1 + rng.below_inclusive(2) as usize));
            }
            out.push_str(t);
        }
        if i + 1 < lines.len() || rng.below_inclusive(1) == 1 {
            out.push('\n');
        }
    }
    out
}

fn verifier_fuzz() -> Check {
    let mut rng = SketchRng::new(0xf022);
    for i in 0..1000 {
        let lines = valid_lines(&mut rng);
        let text = join(&lines, &mut rng);
        ensure(verify_response(&text) == FormatVerdict::Valid, || format!("valid case {i} rejected: {text:?}"))?;
    }
    let kinds = [
        FormatErrorKind::BadCommandLetter,
        FormatErrorKind::BadArity,
        FormatErrorKind::NonIntegerToken,
        FormatErrorKind::EmptyLine,
        FormatErrorKind::TrailingGarbage,
    ];
    let coord_slots = [1, 2, 4, 5, 6, 7, 8, 9];
    let mut per_kind = [0usize; 5];
    for i in 0..1000 {
        let mut lines = valid_lines(&mut rng);
        let k = i % kinds.len();
        let at = rng.below_inclusive(lines.len() as u64 - 1) as usize;
        let slot = coord_slots[rng.below_inclusive(7) as usize];
        match kinds[k] {
            FormatErrorKind::BadCommandLetter => {
                let (pos, bad) = if rng.below_inclusive(1) == 0 { (0, "L") } else { (3, "Q") };
                lines[at][pos] = bad.into();
            }
            FormatErrorKind::BadArity => {
                lines[at].remove(slot);
            }
            FormatErrorKind::NonIntegerToken => {
                lines[at][slot] = ["1.5", "x9", "--3", "1e3"][rng.below_inclusive(3) as usize].into();
            }
            FormatErrorKind::EmptyLine => {
                lines.insert(at, Vec::new());
            }
            FormatErrorKind::TrailingGarbage => {
                lines[at].push(rand_coord(&mut rng, 50).to_string());
            }
        }
        let text = join(&lines, &mut rng);
        let want = FormatVerdict::Invalid { error_kind: kinds[k], line_index: at + 1 };
        let got = verify_response(&text);
        ensure(got == want, || format!("mutant {i}: {text:?} gave {got:?}, expected {want:?}"))?;
        per_kind[k] += 1;
    }
    Ok(format!("1000 valid accepted, 1000 mutants rejected with expected kind/line {per_kind:?}"))
}

fn bezier(c: [i32; 8], t: f64) -> (f64, f64) {
    let c = c.map(f64::from);
    let u = 1.0 - t;
    let (a, b, d, e) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
    (a * c[0] + b * c[2] + d * c[4] + e * c[6], a * c[1] + b * c[3] + d * c[5] + e * c[7])
}

/// Curve samples bucketed on a square grid for nearest-sample queries.
struct SampleGrid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<(f64, f64)>>,
}

impl SampleGrid {
    fn new(samples: &[(f64, f64)], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<(f64, f64)>> = HashMap::new();
        for &p in samples {
            cells.entry(((p.0 / cell).floor() as i64, (p.1 / cell).floor() as i64)).or_default().push(p);
        }
        Self { cell, cells }
    }

    /// Distance to the closest sample, or `None` if none lies within `cell`.
    fn near(&self, p: (f64, f64)) -> Option<f64> {
        let (cx, cy) = ((p.0 / self.cell).floor() as i64, (p.1 / self.cell).floor() as i64);
        let mut best: Option<f64> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for q in self.cells.get(&(cx + dx, cy + dy)).into_iter().flatten() {
                    let d = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
                    best = Some(best.map_or(d, |b: f64| b.min(d)));
                }
            }
        }
        best.filter(|&d| d <= self.cell)
    }
}

const GOLDEN_DIGEST: &str = "8d34cbd7f6fb2fdbbce21bc6b426d7d9dbaaaeb6f2ca971f1482ea2ee2c65adc";

fn rasterizer_oracle() -> Check {
    let mut rng = SketchRng::new(0x0a5);
    let canvas = CanvasConfig::default();
    let half = canvas.stroke_width / 2.0;
    let mut dark_total = 0usize;
    for case in 0..100 {
        let mut c = [0i32; 8];
        c.iter_mut().for_each(|v| *v = rng.below_inclusive(512) as i32);
        let sketch = Sketch::new(vec![CubicStroke::from_coords(c)], canvas);
        let bmp = rasterize(&sketch);
        ensure(bmp.pixels() == rasterize(&sketch).pixels(), || format!("case {case}: not deterministic"))?;

        let hull: f64 =
            (0..3).map(|i| f64::from(c[2 * i + 2] - c[2 * i]).hypot(f64::from(c[2 * i + 3] - c[2 * i + 1]))).sum();
        let n = (hull / 0.05).ceil() as usize + 2;
        let samples: Vec<(f64, f64)> = (0..=n).map(|i| bezier(c, i as f64 / n as f64)).collect();
        let grid = SampleGrid::new(&samples, 4.0);

        for y in 0..bmp.height() {
            for x in 0..bmp.width() {
                if bmp.pixel(x, y)[0] == 255 {
                    continue;
                }
                dark_total += 1;
                let d = grid.near((x as f64 + 0.5, y as f64 + 0.5));
                ensure(d.is_some_and(|d| d <= half + 1.0), || format!("case {case}: dark ({x},{y}) at {d:?}"))?;
            }
        }
        let (w, h) = (bmp.width() as f64, bmp.height() as f64);
        for &(sx, sy) in &samples {
            for py in (sy - 1.0).floor() as i64..=(sy + 1.0).floor() as i64 {
                for px in (sx - 1.0).floor() as i64..=(sx + 1.0).floor() as i64 {
                    if px < 0 || py < 0 || px as f64 >= w || py as f64 >= h {
                        continue;
                    }
                    let d = (px as f64 + 0.5 - sx).hypot(py as f64 + 0.5 - sy);
                    if d <= half - 1.0 {
                        ensure(bmp.pixel(px as u32, py as u32)[0] != 255, || {
                            format!("case {case}: ({px},{py}) is {d:.3} from the curve but blank")
                        })?;
                    }
                }
            }
        }
    }
    let digest = rasterize(&random_sketch(2024)).digest();
    ensure(digest == GOLDEN_DIGEST, || format!("golden digest changed: {digest}"))?;
    Ok(format!("100 single-stroke sketches, {dark_total} dark pixels checked, deterministic, golden digest ok"))
}

fn random_record(rng: &mut SketchRng, id: usize) -> AnnotatedSketch {
    let k = 2 + rng.below_inclusive(3) as usize;
    let n = k + rng.below_inclusive(3) as usize;
    let paths: Vec<CubicStroke> = (0..n)
        .map(|_| {
            let mut c = [0i32; 8];
            c.iter_mut().for_each(|v| *v = rng.below_inclusive(511) as i32);
            CubicStroke::from_coords(c)
        })
        .collect();
    let labels = (0..n).map(|i| if i < k { i } else { rng.below_inclusive(k as u64 - 1) as usize });
    AnnotatedSketch {
        id: format!("r{id}"),
        sketch: Sketch::new(paths, CanvasConfig::default()),
        caption: "random scribble".into(),
        parts: PartDecomposition::from_descriptions((0..k).map(|i| format!("scribble {}", i + 1))),
        assignment: PathAssignment::from_labels(labels.map(PartLabel::from_index)),
    }
}

fn diagnostic_colors() -> Check {
    let mut rng = SketchRng::new(0xd1a6);
    let palette = Palette::default();
    let (mut hits, mut total) = (0usize, 0usize);
    for i in 0..50 {
        let r = random_record(&mut rng, i);
        let img = diagnostic_panel(&r.parts, &r.assignment, &r.sketch, &palette).map_err(|e| e.to_string())?;
        let w = r.sketch.canvas.width;
        ensure(img.width() == 2 * w && img.height() == r.sketch.canvas.height, || {
            format!("record {i}: panel {}x{}", img.width(), img.height())
        })?;
        for (idx, path) in r.sketch.paths.iter().enumerate() {
            let (x, y) = bezier(path.coords(), 0.5);
            let (x, y) = (x.floor() as u32, y.floor() as u32);
            if x >= w || y >= r.sketch.canvas.height {
                continue;
            }
            let label = r.assignment.get(idx + 1).ok_or("unassigned path")?;
            let want = palette.color(label).ok_or("palette too short")?;
            total += 1;
            hits += usize::from(img.pixel(w + x, y) == want);
        }
    }
    let rate = hits as f64 / total as f64;
    ensure(rate >= 0.99, || format!("{hits}/{total} midpoints match ({:.2}%)", 100.0 * rate))?;
    Ok(format!("50 records, {hits}/{total} midpoints match, widths 2x canvas"))
}

const NO_ISSUES: &str = r#"{"issues": [], "summary": "ok", "should_revise": false}"#;
const REVISE: &str = r#"{"issues": [{"type": "grouping", "severity": "high", "reason": "merge"}], "summary": "fix", "should_revise": true}"#;

fn three_paths() -> Sketch {
    Sketch::new(
        vec![
            CubicStroke::from_coords([10, 10, 20, 20, 30, 20, 40, 10]),
            CubicStroke::from_coords([10, 60, 20, 70, 30, 70, 40, 60]),
            CubicStroke::from_coords([10, 110, 20, 120, 30, 120, 40, 110]),
        ],
        CanvasConfig::with_size(128, 128),
    )
}

fn script(revise: bool) -> ScriptedClient {
    let crit = if revise { REVISE } else { NO_ISSUES };
    let assign = if revise {
        r#"{"Path1": "Part1", "Path2": "Part2", "Path3": "Part2"}"#
    } else {
        r#"{"Path1": "Part1", "Path2": "Part2", "Path3": "Part3"}"#
    };
    ScriptedClient::default()
        .with(Stage::Decompose, [r#"["head","torso","legs"]"#])
        .with(Stage::CritiqueParts, [crit])
        .with(Stage::RefineParts, [r#"["head","body"]"#])
        .with(Stage::Assign, [assign])
        .with(Stage::CritiqueAssignment, [crit])
        .with(Stage::RefineAssignment, [AUTO_RESPONSE])
        .with(Stage::Caption, ["A small figure standing upright."])
}

fn annotation_pipeline() -> Check {
    let start = Instant::now();
    let cfg = PipelineConfig::default();
    let sketch = three_paths();
    for (revise, calls) in [(false, 5), (true, 7)] {
        let c = script(revise);
        let a = annotate_sketch(&c, "s", &sketch, &cfg).map_err(|e| e.to_string())?;
        ensure(c.calls().len() == calls && a.trace.entries.len() == calls, || {
            format!("revise={revise}: {} calls, expected {calls}", c.calls().len())
        })?;
        let k = a.record.parts.len();
        for e in a.trace.entries.iter().filter(|e| e.accepted) {
            let schema = match e.stage {
                Stage::Decompose | Stage::RefineParts => parts_schema(cfg.min_parts, cfg.max_parts),
                Stage::CritiqueParts | Stage::CritiqueAssignment => critique_schema(),
                Stage::Assign | Stage::RefineAssignment => assignment_schema(sketch.len(), k),
                Stage::Caption => continue,
            };
            let raw = e.raw_response.as_deref().ok_or("accepted entry without response")?;
            let v = parse_json(raw).map_err(|v| format!("{}: {v}", e.stage))?;
            validate_schema(&schema, &v).map_err(|v| format!("{}: {v}", e.stage))?;
        }
        ensure(a.record.validate().is_ok(), || "record does not validate".into())?;
    }

    let bad = [
        (r#"{"Path1": "Part1", "Path2": "Part2"}"#, SchemaErrorKind::Totality),
        (r#"{"Path1": "Part1", "Path2": "Part1", "Path3": "Part2"}"#, SchemaErrorKind::Surjectivity),
    ];
    for (resp, kind) in bad {
        let c = script(false).with(Stage::Assign, [resp]);
        let err = annotate_sketch(&c, "s", &sketch, &cfg).err().ok_or("bad assignment accepted")?;
        let tries = c.calls().iter().filter(|&&s| s == Stage::Assign).count();
        match err.error {
            PipelineError::Schema { stage: Stage::Assign, violation, attempts }
                if violation.kind == kind && attempts == cfg.max_retries + 1 && tries == attempts => {}
            e => return Err(format!("{kind}: unexpected {e:?} after {tries} calls")),
        }
        // a later valid answer is taken on retry
        let good = r#"{"Path1": "Part1", "Path2": "Part2", "Path3": "Part3"}"#;
        let c = script(false).with(Stage::Assign, [resp, good]);
        annotate_sketch(&c, "s", &sketch, &cfg).map_err(|e| format!("{kind} retry: {e}"))?;
    }
    let secs = within_time(start, Duration::from_secs(30))?;
    Ok(format!("5/7 call traces, accepted outputs schema-valid, totality/surjectivity retry then error, {secs:.2} s"))
}

fn augmentation_counts() -> Check {
    let mut rng = SketchRng::new(0xa06);
    for (k, want) in [(2usize, 4usize), (5, 100)] {
        let mut r = random_record(&mut rng, k);
        while r.parts.len() != k {
            r = random_record(&mut rng, k);
        }
        let ex = permute_augment(&r, 20, 7).map_err(|e| e.to_string())?;
        ensure(ex.len() == want, || format!("{k} parts: {} examples, expected {want}", ex.len()))?;
        let mut by_order: BTreeMap<Vec<PartLabel>, Vec<CubicStroke>> = BTreeMap::new();
        for e in &ex {
            by_order.entry(e.order.clone()).or_default().extend(e.target.iter().copied());
        }
        let all = path_multiset(r.sketch.paths.iter().copied());
        for (order, paths) in by_order {
            ensure(path_multiset(paths) == all, || format!("{k} parts: order {order:?} does not partition the paths"))?;
        }
    }
    Ok("2 parts -> 4, 5 parts -> 100, targets partition paths".into())
}

fn reward_units() -> Check {
    for (n, want) in [(10, 1.0), (8, 0.8), (0, 0.0), (20, 0.0)] {
        let got = path_count_reward(n, 10).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("path_count_reward({n}, 10) = {got}"))?;
    }
    let e = BaselineEmbedder::default();
    let gt = rasterize(&random_sketch(5));
    let same = similarity_reward(&gt, &gt, &e).map_err(|e| e.to_string())?;
    ensure((same - 1.0).abs() <= 1e-9, || format!("sim(gt, gt) = {same}"))?;
    let (w, b) = (Bitmap::gray(512, 512, 255), Bitmap::gray(512, 512, 0));
    let opp = similarity_reward(&w, &b, &e).map_err(|e| e.to_string())?;
    ensure((opp + 1.0).abs() <= 1e-9, || format!("sim(white, black) = {opp}"))?;
    Ok(format!("path count exact, sim(gt,gt) = {same:.12}, sim(white,black) = {opp:.12}"))
}

fn random_tensor(rng: &mut SketchRng, g: usize, t: usize) -> RewardTensor {
    RewardTensor::from_rows(&(0..g).map(|_| (0..t).map(|_| rng.unit_f64() * 3.0 - 1.0).collect()).collect::<Vec<_>>())
}

fn normalization() -> Check {
    let n = normalize_per_step(&RewardTensor::from_rows(&[vec![0.2], vec![0.4], vec![0.6]]), 1e-8);
    for (got, want) in n.iter().zip([-1.2247, 0.0, 1.2247]) {
        ensure((got - want).abs() <= 1e-4, || format!("normalized column {n:?}"))?;
    }
    let mut rng = SketchRng::new(0xad7);
    for case in 0..200 {
        let (g, t) = (2 + rng.below_inclusive(10) as usize, 1 + rng.below_inclusive(5) as usize);
        let r = random_tensor(&mut rng, g, t);
        let p = advantages(&r, Variant::Process, 1e-8).map_err(|e| e.to_string())?;
        for s in 0..t {
            let col: Vec<f64> = (0..g).map(|i| p.get(i, s)).collect();
            let mean = col.iter().sum::<f64>() / g as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / g as f64;
            ensure(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9, || {
                format!("case {case} col {s}: mean {mean}, var {var}")
            })?;
        }
        let o = advantages(&r, Variant::Outcome, 1e-8).map_err(|e| e.to_string())?;
        for i in 0..g {
            ensure(o.row(i).iter().all(|&a| a == o.get(i, 0)), || format!("case {case}: outcome row {i} varies"))?;
        }
        let ts = advantages(&r, Variant::TailSum, 1e-8).map_err(|e| e.to_string())?;
        let flat = partsketch::grpo::normalize_global(&r, 1e-8);
        for i in 0..g {
            ensure(ts.get(i, t - 1) == flat[i * t + t - 1], || format!("case {case}: tail-sum end"))?;
            for s in 0..t - 1 {
                ensure(ts.get(i, s) == ts.get(i, s + 1) + flat[i * t + s], || {
                    format!("case {case}: suffix at {i},{s}")
                })?;
            }
        }
    }
    Ok("example within 1e-4, 200 random tensors: process mean 0 var 1, outcome constant, tail-sum suffix exact".into())
}

fn micro_instance(seed: u64) -> (ToyStrokePolicy, TrajectoryGroup, AdvantageTensor) {
    let spec = PolicySpec { max_turns: 2, stroke_states: 2, buckets: 3, bucket_width: 32, max_strokes_per_turn: 2 };
    let mut p = ToyStrokePolicy::new(spec);
    let mut rng = SketchRng::new(seed.wrapping_mul(7919) + 1);
    p.theta.iter_mut().for_each(|x| *x = 2.0 * rng.unit_f64() - 1.0);
    let mut old = p.clone();
    old.theta.iter_mut().for_each(|x| *x += 0.3 * (rng.unit_f64() - 0.5));
    let mut reference = p.clone();
    reference.theta.iter_mut().for_each(|x| *x += 0.5 * (rng.unit_f64() - 0.5));
    let mut trajectories = Vec::new();
    for g in 0..2 {
        let mut traj = Trajectory::default();
        let turns = if seed % 4 == 1 && g == 0 { 1 } else { 2 };
        for t in 0..turns {
            let s = old.sample_turn(t, &mut rng);
            traj.turns.push(TurnRecord {
                logp_ref: s.tokens.iter().map(|&k| reference.log_prob(k)).collect(),
                text: s.text,
                tokens: s.tokens,
                logp_old: s.logp,
            });
        }
        trajectories.push(traj);
    }
    let adv = AdvantageTensor { groups: 2, steps: 2, values: (0..4).map(|_| 4.0 * rng.unit_f64() - 2.0).collect() };
    (p, TrajectoryGroup { steps: 2, trajectories }, adv)
}

fn objective_checks() -> Check {
    let (eps, beta, h) = (0.2, 0.1, 1e-5);
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (p, group, adv) = micro_instance(seed);
        let mut grad = vec![0.0; p.num_params()];
        grpo_objective(&group, &adv, &p, eps, beta, Some(&mut grad)).map_err(|e| e.to_string())?;
        let mut num = vec![0.0; p.num_params()];
        for (i, slot) in num.iter_mut().enumerate() {
            let mut q = p.clone();
            q.theta[i] += h;
            let up = grpo_objective(&group, &adv, &q, eps, beta, None).map_err(|e| e.to_string())?.value;
            q.theta[i] -= 2.0 * h;
            let down = grpo_objective(&group, &adv, &q, eps, beta, None).map_err(|e| e.to_string())?.value;
            *slot = (up - down) / (2.0 * h);
        }
        let diff = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = num.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / norm);
        ensure(diff / norm <= 1e-3, || format!("instance {seed}: relative error {:.2e}", diff / norm))?;
    }

    let mut rng = SketchRng::new(0xc11);
    for _ in 0..100 {
        let a = 0.1 + 2.0 * rng.unit_f64();
        let eps = 0.05 + 0.3 * rng.unit_f64();
        let up = token_term((1.0 + 2.0 * eps).ln(), 0.0, 0.0, a, eps, 0.0);
        ensure(up.value == (1.0 + eps) * a, || format!("upper clip: {} vs {}", up.value, (1.0 + eps) * a))?;
        let down = token_term((1.0 - 2.0 * eps).ln(), 0.0, 0.0, -a, eps, 0.0);
        ensure(down.value == -(1.0 - eps) * a, || format!("lower clip: {} vs {}", down.value, -(1.0 - eps) * a))?;
    }

    for (nu, want) in [(1.0, 0.0), (2.0, 0.30685), (0.5, 0.19315)] {
        let got = kl_estimate(nu).map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 1e-5, || format!("kl_estimate({nu}) = {got}"))?;
    }
    Ok(format!("20 FD instances (worst rel. error {worst:.1e}), clip boundaries exact, kl values ok"))
}

fn training() -> Check {
    let start = Instant::now();
    let e = BaselineEmbedder::default();
    let corpus = [synthetic_task()];
    let variants = [Variant::Process, Variant::Outcome, Variant::SingleTurn];
    let mut finals = [0.0f64; 3];
    let mut gains = Vec::new();
    for (vi, &variant) in variants.iter().enumerate() {
        for seed in 0..5 {
            let cfg = GrpoConfig { variant, seed, ..GrpoConfig::default() };
            let out = train_loop(ToyStrokePolicy::new(PolicySpec::default()), &corpus, &cfg, &e, |_| {})
                .map_err(|e| e.to_string())?;
            finals[vi] += out.last.final_score / 5.0;
            if variant == Variant::Process {
                let gain = out.last.mean_reward - out.initial.mean_reward;
                ensure(gain >= 0.2, || format!("process seed {seed}: gain {gain:.3} < 0.2"))?;
                gains.push(gain);
            }
        }
    }
    let [p, o, s] = finals;
    ensure(p >= o && o >= s, || format!("ordering violated: process {p:.4}, outcome {o:.4}, single-turn {s:.4}"))?;
    let secs = within_time(start, Duration::from_secs(15 * 60))?;
    let min_gain = gains.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "min process gain {min_gain:.3}; final_score process {p:.4} >= outcome {o:.4} >= single-turn {s:.4}; {secs:.0} s"
    ))
}

fn session_service() -> Check {
    let mut rng = SketchRng::new(0x5e55);
    for i in 0..20 {
        let rec = random_record(&mut rng, i);
        let replay = ReplayBackend::new(rec.clone());
        let mut s = Session::from_record(format!("s{i}"), &rec).map_err(|e| e.to_string())?;
        while !s.is_complete() {
            s.step(&replay).map_err(|e| e.to_string())?;
        }
        let want = path_multiset(rec.sketch.paths.iter().copied());
        let svg = partsketch::stroke::import_svg(&s.to_svg(&Palette::default())).map_err(|e| e.to_string())?;
        ensure(path_multiset(svg.paths) == want, || format!("record {i}: svg multiset differs"))?;

        let parent = serde_json::to_vec(&s).map_err(|e| e.to_string())?;
        let k = rng.below_inclusive(s.turns.len() as u64 - 1) as usize;
        let random = RandomBackend::new(i as u64);
        let mut branch = s.regenerate(format!("b{i}"), k, &random).map_err(|e| e.to_string())?;
        branch.step(&random).ok();
        ensure(serde_json::to_vec(&s).map_err(|e| e.to_string())? == parent, || format!("record {i}: parent changed"))?;
        for t in 0..k {
            ensure(branch.turns[t] == s.turns[t], || format!("record {i}: branch turn {t} differs"))?;
        }

        let target = s.turns[k].part.label;
        let others = |s: &Session| -> Result<Vec<Vec<u8>>, String> {
            s.turns
                .iter()
                .filter(|t| t.part.label != target)
                .map(|t| serde_json::to_vec(t).map_err(|e| e.to_string()))
                .collect()
        };
        let before = others(&s)?;
        let mut replaced = s.clone();
        replaced.replace_part(target, "something else", &random).map_err(|e| e.to_string())?;
        ensure(others(&replaced)? == before, || format!("record {i}: replace touched other parts"))?;
        let mut removed = s.clone();
        removed.remove_part(target).map_err(|e| e.to_string())?;
        ensure(others(&removed)? == before, || format!("record {i}: remove touched other parts"))?;
    }
    Ok("20 records: replay multiset exact, ancestors byte-identical, remove/replace local".into())
}

fn main() {
    let checks: [Criterion; 11] = [
        ("stroke round-trip", stroke_roundtrip),
        ("verifier fuzzing", verifier_fuzz),
        ("rasterizer oracle", rasterizer_oracle),
        ("diagnostic image", diagnostic_colors),
        ("annotation pipeline", annotation_pipeline),
        ("augmentation counts", augmentation_counts),
        ("reward units", reward_units),
        ("normalization/advantages", normalization),
        ("objective correctness", objective_checks),
        ("training ordering", training),
        ("session service", session_service),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in checks {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        match f() {
            Ok(msg) => println!("PASS {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
